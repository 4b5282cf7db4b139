//! Experiment configuration, presets and rate sweeps.
//!
//! A sweep simulates frames with per-frame seed streams (independent of the
//! SNR point and of the worker count), fits the auxiliary channel on
//! separate training frames at every SNR, and reduces per-frame rate
//! contributions into CSV rows.

use std::io::Write;
use std::path::PathBuf;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::auxmodel::{AuxChannel, MIN_TRAINING_SAMPLES};
use crate::error::{Error, Result};
use crate::fba::Trellis;
use crate::gibbs::{self, GibbsConfig, GibbsDiagnostics};
use crate::link::{Link, LinkConfig, ObservationFrame, Termination};
use crate::modem::{build_alphabet, Alphabet, AlphabetKind};
use crate::polar::FerConfig;
use crate::rates::{self, FrameContributions, RateEstimate, RateKind, RateRequest};
use crate::seed;

/// Header comment of the rates CSV.
pub const RATES_SCHEMA: &str = "# sicdd rates v1";

/// Default line-search grid for the confidence parameter.
pub const DEFAULT_ETA_GRID: [f64; 6] = [1.0, 1.5, 2.0, 3.0, 5.0, 8.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Detector {
    Fba,
    Gibbs,
}

/// Inclusive SNR sweep in dB.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnrSweep {
    pub start: f64,
    pub stop: f64,
    pub step: f64,
}

impl SnrSweep {
    pub fn points(&self) -> Vec<f64> {
        let count = ((self.stop - self.start) / self.step + 1e-9).floor() as usize + 1;
        (0..count).map(|i| self.start + i as f64 * self.step).collect()
    }
}

/// Everything a sweep needs; loaded from TOML or built from a preset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub preset: String,
    pub link: LinkConfig,
    pub alphabet: AlphabetKind,
    pub points: usize,
    /// Apply differential phase coding where the alphabet allows it.
    pub differential: bool,
    /// Memory of the auxiliary channel used by the detectors.
    pub ktilde_aux: usize,
    /// SIC stage counts.
    pub stages: Vec<usize>,
    pub kinds: Vec<RateKind>,
    /// Detector for b-SIC rates; the other kinds always use the trellis.
    pub detector: Detector,
    pub gibbs: GibbsConfig,
    /// Run the line search over `eta_grid` at every SNR.
    pub tune_eta: bool,
    pub eta_grid: Vec<f64>,
    pub eta_training_symbols: usize,
    pub snr: SnrSweep,
    /// Symbols per frame.
    pub n: usize,
    /// Frames per SNR point.
    pub frames: usize,
    /// Symbols used to fit the auxiliary channel at each SNR.
    pub training_symbols: usize,
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub fer: FerConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            preset: "custom".into(),
            link: LinkConfig { alpha: 0.0, ..LinkConfig::default() },
            alphabet: AlphabetKind::Ask,
            points: 4,
            differential: true,
            ktilde_aux: 9,
            stages: vec![1, 2, 4],
            kinds: vec![RateKind::Jdd, RateKind::Sdd, RateKind::Sic],
            detector: Detector::Fba,
            gibbs: GibbsConfig::default(),
            tune_eta: false,
            eta_grid: DEFAULT_ETA_GRID.to_vec(),
            eta_training_symbols: 10_000,
            snr: SnrSweep { start: -2.0, stop: 10.0, step: 2.0 },
            n: 1000,
            frames: 5,
            training_symbols: 10_000,
            seed: 1,
            out: None,
            fer: FerConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn build_alphabet(&self) -> Result<Alphabet> {
        let a = build_alphabet(self.alphabet, self.points)?;
        Ok(if self.differential { a } else { a.without_differential() })
    }

    /// Checks every precondition that can be checked before running.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        self.link.validate()?;
        self.build_alphabet()?;
        if self.ktilde_aux > self.link.taps_half {
            return bad(format!("ktilde_aux = {} exceeds the channel memory {}", self.ktilde_aux, self.link.taps_half));
        }
        if self.n == 0 || self.frames == 0 {
            return bad("n and frames must be positive".into());
        }
        for &s in &self.stages {
            if s == 0 || !self.n.is_multiple_of(s) {
                return bad(format!("stage count {s} must divide n = {}", self.n));
            }
        }
        if self.kinds.is_empty() {
            return bad("no rate kinds requested".into());
        }
        if self.stages.is_empty() && self.kinds.iter().any(|k| matches!(k, RateKind::Sic | RateKind::Msd | RateKind::Bsic)) {
            return bad("staged rate kinds need at least one stage count".into());
        }
        if !(self.snr.step > 0.0) || !(self.snr.stop >= self.snr.start) || !self.snr.start.is_finite() {
            return bad("snr sweep needs start <= stop and a positive step".into());
        }
        if self.training_symbols < MIN_TRAINING_SAMPLES {
            return bad(format!("training_symbols must be at least {MIN_TRAINING_SAMPLES}"));
        }
        self.gibbs.validate()?;
        if self.tune_eta {
            if self.eta_grid.is_empty() || self.eta_grid.iter().any(|&e| !(e >= 1.0)) {
                return bad("eta_grid must be non-empty with values >= 1".into());
            }
            if self.eta_training_symbols < self.n {
                return bad("eta_training_symbols must cover at least one frame".into());
            }
        }
        self.fer.validate()?;
        Ok(())
    }

    /// Number of known symbols before and after each frame.
    pub fn guard(&self) -> usize {
        self.link.taps_half.max(self.ktilde_aux).max(1)
    }
}

/// Simulates frame `index` of the stream `stream_id`. The randomness does
/// not depend on the SNR, so sweeps use common random numbers.
pub fn simulate_frame(link: &Link, alphabet: &Alphabet, cfg: &ExperimentConfig, stream_id: u64, index: u64, snr_db: f64) -> Result<ObservationFrame> {
    let mut rng = seed::stream(cfg.seed, &[stream_id, index]);
    let g = cfg.guard();
    let term = Termination::random(alphabet, g, g, &mut rng);
    let u: Vec<usize> = (0..cfg.n).map(|_| rng.gen_range(0..alphabet.len())).collect();
    link.simulate(alphabet, &u, &term, snr_db, true, &mut rng)
}

const TRAINING_STREAM: u64 = 0;
const EVAL_STREAM: u64 = 1;
const GIBBS_STREAM: u64 = 2;
const ETA_STREAM: u64 = 3;

/// Fits the auxiliary channel on training frames at `snr_db`.
pub fn fit_aux(link: &Link, alphabet: &Alphabet, cfg: &ExperimentConfig, snr_db: f64) -> Result<AuxChannel> {
    let count = cfg.training_symbols.div_ceil(cfg.n);
    let training: Vec<ObservationFrame> = (0..count as u64)
        .into_par_iter()
        .map(|f| simulate_frame(link, alphabet, cfg, TRAINING_STREAM, f, snr_db))
        .collect::<Result<_>>()?;
    let mut aux = AuxChannel::from_taps(&link.taps, cfg.ktilde_aux)?;
    let report = aux.fit_moments(alphabet, &training)?;
    if report.clamped {
        log::warn!("auxiliary variance clamped at {snr_db} dB");
    }
    Ok(aux)
}

/// Results of one SNR point.
#[derive(Debug, Clone)]
pub struct RatePoint {
    pub snr_db: f64,
    pub eta: Option<f64>,
    pub estimates: Vec<RateEstimate>,
    pub gibbs: Option<GibbsDiagnostics>,
    pub aux_mean: [f64; 2],
    pub aux_var: [f64; 2],
}

/// Runs the rate sweep of `cfg`.
pub fn run_rates(cfg: &ExperimentConfig) -> Result<Vec<RatePoint>> {
    cfg.validate()?;
    let link = Link::new(cfg.link.clone())?;
    let alphabet = cfg.build_alphabet()?;
    let mut out = Vec::new();
    for snr in cfg.snr.points() {
        out.push(run_point(&link, &alphabet, cfg, snr)?);
    }
    Ok(out)
}

/// Runs one SNR point.
pub fn run_point(link: &Link, alphabet: &Alphabet, cfg: &ExperimentConfig, snr_db: f64) -> Result<RatePoint> {
    let aux = fit_aux(link, alphabet, cfg, snr_db)?;
    log::info!("{snr_db} dB: auxiliary mean {:?} variance {:?}", aux.mean, aux.var);
    let gibbs_bsic = cfg.detector == Detector::Gibbs && cfg.kinds.contains(&RateKind::Bsic);
    let mut req = RateRequest::from_kinds(&cfg.kinds, &cfg.stages);
    if gibbs_bsic {
        req.bsic.clear();
    }
    let mut gcfg = cfg.gibbs.clone();
    let mut eta = None;
    if gibbs_bsic {
        if cfg.tune_eta {
            let count = cfg.eta_training_symbols / cfg.n;
            let training: Vec<ObservationFrame> = (0..count as u64)
                .map(|f| simulate_frame(link, alphabet, cfg, ETA_STREAM, f, snr_db))
                .collect::<Result<_>>()?;
            let s_max = *cfg.stages.iter().max().expect("validated");
            let (best, scores) = gibbs::tune_eta(&aux, alphabet, &training, s_max, &gcfg, &cfg.eta_grid, seed::derive_seed(cfg.seed, &[ETA_STREAM]))?;
            log::info!("{snr_db} dB: eta line search {scores:?} -> {best}");
            gcfg.eta = best;
        }
        eta = Some(gcfg.eta);
    }
    let per_frame: Vec<(FrameContributions, GibbsDiagnostics)> = (0..cfg.frames as u64)
        .into_par_iter()
        .map(|f| -> Result<_> {
            let frame = simulate_frame(link, alphabet, cfg, EVAL_STREAM, f, snr_db)?;
            let mut contrib = FrameContributions::default();
            if req.jdd || req.sdd || !req.sic.is_empty() || !req.msd.is_empty() || !req.bsic.is_empty() {
                let trellis = Trellis::for_frame(&aux, alphabet, &frame)?;
                contrib = rates::frame_contributions(&trellis, alphabet, &frame, &req)?;
            }
            let mut diag = GibbsDiagnostics::default();
            if gibbs_bsic {
                for &s in &cfg.stages {
                    let (c, d) = gibbs::frame_contributions(&aux, alphabet, &frame, s, &gcfg, seed::derive_seed(cfg.seed, &[GIBBS_STREAM, f, s as u64]))?;
                    contrib.extend(c);
                    diag.merge(&d);
                }
            }
            Ok((contrib, diag))
        })
        .collect::<Result<_>>()?;
    let mut diag = GibbsDiagnostics::default();
    let contribs: Vec<FrameContributions> = per_frame
        .into_iter()
        .map(|(c, d)| {
            diag.merge(&d);
            c
        })
        .collect();
    let estimates = rates::aggregate(&contribs, snr_db, cfg.n);
    if gibbs_bsic && diag.stalled_runs > 0 {
        log::warn!("{snr_db} dB: {} of {} sampler runs stalled", diag.stalled_runs, diag.runs);
    }
    Ok(RatePoint { snr_db, eta, estimates, gibbs: gibbs_bsic.then_some(diag), aux_mean: aux.mean, aux_var: aux.var })
}

/// One line of the rates CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateRow {
    pub snr_db: f64,
    pub kind: String,
    #[serde(rename = "S")]
    pub stages: usize,
    /// 1-based stage, empty for the overall rate.
    pub stage: Option<usize>,
    /// 1-based bit level, empty for symbol rates.
    pub level: Option<usize>,
    pub rate_bpcu: f64,
    pub stderr: f64,
    pub n_symbols: usize,
    pub eta: Option<f64>,
    #[serde(rename = "Ktilde_aux")]
    pub ktilde_aux: usize,
    pub alphabet: String,
    pub alpha: f64,
    #[serde(rename = "L_km")]
    pub length_km: f64,
    pub seed: u64,
    /// Semicolon-separated warnings: clamped, floor hits, sampler stalls.
    pub flags: String,
}

pub fn rate_rows(cfg: &ExperimentConfig, points: &[RatePoint]) -> Result<Vec<RateRow>> {
    let name = cfg.build_alphabet()?.name();
    let mut rows = Vec::new();
    for p in points {
        for e in &p.estimates {
            let mut flags = Vec::new();
            if e.clamped {
                flags.push("clamped".to_string());
            }
            if e.floor_hits > 0 {
                flags.push(format!("floor={}", e.floor_hits));
            }
            let is_gibbs = e.key.kind == RateKind::Bsic && p.gibbs.is_some();
            if is_gibbs {
                let d = p.gibbs.as_ref().expect("checked");
                if d.stalled_runs > 0 {
                    flags.push(format!("stalled={:.3}", d.stall_fraction()));
                }
                if d.fallback_runs > 0 {
                    flags.push(format!("weight_fallback={}", d.fallback_runs));
                }
            }
            rows.push(RateRow {
                snr_db: p.snr_db,
                kind: e.key.kind.name().into(),
                stages: e.key.stages,
                stage: e.key.stage.map(|s| s + 1),
                level: e.key.level.map(|l| l + 1),
                rate_bpcu: e.rate_bpcu,
                stderr: e.stderr,
                n_symbols: e.n_symbols,
                eta: if is_gibbs { p.eta } else { None },
                ktilde_aux: cfg.ktilde_aux,
                alphabet: name.clone(),
                alpha: cfg.link.alpha,
                length_km: cfg.link.length_km,
                seed: cfg.seed,
                flags: flags.join(";"),
            });
        }
    }
    Ok(rows)
}

/// Writes rows as CSV after a schema comment line.
pub fn write_csv<W: Write, T: Serialize>(mut w: W, schema: &str, rows: &[T]) -> Result<()> {
    writeln!(w, "{schema}")?;
    let mut wr = csv::Writer::from_writer(w);
    for r in rows {
        wr.serialize(r)?;
    }
    wr.flush()?;
    Ok(())
}

/// Reads a CSV written by [`write_csv`], checking the schema line.
pub fn read_csv<T: for<'de> Deserialize<'de>>(text: &str, schema: &str) -> Result<Vec<T>> {
    let first = text.lines().next().unwrap_or("");
    if first.trim() != schema {
        return Err(Error::Schema(format!("expected {schema:?}, found {first:?}")));
    }
    let body = &text[first.len()..];
    let mut rd = csv::ReaderBuilder::new().from_reader(body.trim_start_matches(['\r', '\n']).as_bytes());
    rd.deserialize().map(|r| r.map_err(Error::from)).collect()
}

/// Names of the built-in presets.
pub const PRESETS: [&str; 7] = ["fig4-4pam", "fig4-4ask", "fig4-4sqam", "fig7-4ask-s4", "fig7-4pam-s4", "fig8-gibbs-4ask", "smoke"];

/// Built-in experiment presets at desk scale.
pub fn preset(name: &str) -> Result<ExperimentConfig> {
    let base = ExperimentConfig { preset: name.into(), ..ExperimentConfig::default() };
    let fig4 = |kind| ExperimentConfig { alphabet: kind, kinds: vec![RateKind::Jdd, RateKind::Sdd, RateKind::Sic], ..base.clone() };
    let fig7 = |kind| {
        let mut c = ExperimentConfig {
            alphabet: kind,
            link: LinkConfig { alpha: 0.2, ..LinkConfig::default() },
            ktilde_aux: 5,
            stages: vec![1, 2, 4],
            kinds: vec![RateKind::Sdd, RateKind::Sic],
            snr: SnrSweep { start: -4.0, stop: 8.0, step: 1.0 },
            n: 1024,
            frames: 4,
            ..base.clone()
        };
        c.fer.stages = 4;
        c
    };
    let cfg = match name {
        "fig4-4pam" => fig4(AlphabetKind::Pam),
        "fig4-4ask" => fig4(AlphabetKind::Ask),
        "fig4-4sqam" => fig4(AlphabetKind::Sqam),
        "fig7-4ask-s4" => fig7(AlphabetKind::Ask),
        "fig7-4pam-s4" => fig7(AlphabetKind::Pam),
        "fig8-gibbs-4ask" => ExperimentConfig {
            kinds: vec![RateKind::Sic, RateKind::Bsic],
            stages: vec![1, 2, 4],
            detector: Detector::Gibbs,
            gibbs: GibbsConfig { n_iter: 50, n_par: 20, burn_in: 10, ..GibbsConfig::default() },
            tune_eta: true,
            eta_training_symbols: 2000,
            n: 1000,
            frames: 2,
            ..base
        },
        "smoke" => {
            let mut c = ExperimentConfig {
                link: LinkConfig { alpha: 0.0, length_km: 0.0, taps_half: 4, ..LinkConfig::default() },
                ktilde_aux: 2,
                stages: vec![1, 2],
                kinds: vec![RateKind::Jdd, RateKind::Sdd, RateKind::Sic],
                snr: SnrSweep { start: 30.0, stop: 30.0, step: 1.0 },
                n: 64,
                frames: 2,
                training_symbols: 2000,
                ..base
            };
            c.fer = FerConfig::smoke();
            c
        }
        other => return Err(Error::InvalidConfig(format!("unknown preset {other:?}; known: {}", PRESETS.join(", ")))),
    };
    cfg.validate()?;
    Ok(cfg)
}
