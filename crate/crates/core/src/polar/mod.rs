//! Polar-coded multilevel coding with SIC detection: Monte Carlo code
//! design, frame encoding, list decoding with lists passed across stages,
//! and frame-error-rate simulation.
//!
//! Stage `s` and bit level `l` carry one binary polar code of length
//! `n / S`; bit `t` of that code is level `l` of the label of symbol
//! `s + t·S`. Data symbols are differentially encoded by the link.

pub mod code;

use std::fmt::Write as _;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use code::{polar_transform, Crc16, DecodedPath, PolarCode};

use crate::auxmodel::AuxChannel;
use crate::error::{Error, Result};
use crate::experiment::{fit_aux, ExperimentConfig};
use crate::fba::{ConditioningMask, FbaOptions, Trellis};
use crate::link::{Link, ObservationFrame, Termination};
use crate::modem::{Alphabet, StagePartition};
use crate::numeric::clopper_pearson;
use crate::seed;

/// Header comment of the FER CSV.
pub const FER_SCHEMA: &str = "# sicdd fer v1";
/// Header comment of serialized code designs.
pub const DESIGN_SCHEMA: &str = "# sicdd polar-design v1";

/// LLR magnitude limit for decoder inputs.
const LLR_CLIP: f64 = 40.0;

const DESIGN_STREAM: u64 = 4;
const FER_STREAM: u64 = 5;

/// Coded-modulation settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FerConfig {
    /// SIC stages of the coded system.
    pub stages: usize,
    /// Data bits per channel use.
    pub rate_bpcu: f64,
    pub list_size: usize,
    pub crc_poly: u16,
    pub design_snr_db: f64,
    pub design_frames: usize,
    pub max_frames: usize,
    pub min_frames: usize,
    pub min_errors: usize,
    /// Frames simulated between stopping checks.
    pub batch: usize,
    /// Condition every stage on the true earlier data instead of decisions.
    pub genie: bool,
    /// Transmit without receiver noise.
    pub noiseless: bool,
}

impl Default for FerConfig {
    fn default() -> Self {
        Self {
            stages: 4,
            rate_bpcu: 1.0,
            list_size: 8,
            crc_poly: Crc16::CCITT.poly,
            design_snr_db: 4.0,
            design_frames: 200,
            max_frames: 10_000,
            min_frames: 100,
            min_errors: 100,
            batch: 16,
            genie: false,
            noiseless: false,
        }
    }
}

impl FerConfig {
    /// Small noiseless setting for end-to-end checks.
    pub fn smoke() -> Self {
        Self { stages: 2, list_size: 4, design_frames: 20, max_frames: 32, min_frames: 32, min_errors: 1, rate_bpcu: 0.5, noiseless: true, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.stages == 0 {
            return bad("fer.stages must be positive");
        }
        if !(self.rate_bpcu >= 0.0) {
            return bad("fer.rate_bpcu must be non-negative");
        }
        if self.list_size == 0 || self.batch == 0 || self.max_frames == 0 {
            return bad("fer.list_size, fer.batch and fer.max_frames must be positive");
        }
        if self.min_frames > self.max_frames {
            return bad("fer.min_frames exceeds fer.max_frames");
        }
        Ok(())
    }

    pub fn crc(&self) -> Crc16 {
        Crc16 { poly: self.crc_poly }
    }
}

/// The component codes of one SIC/MLC configuration. Info bits of all
/// codes, taken in decoding order, carry the frame data followed by one
/// outer CRC.
#[derive(Debug, Clone, PartialEq)]
pub struct SicSchedule {
    pub stages: usize,
    pub levels: usize,
    /// Code of (stage, level) at index `stage * levels + level`.
    pub codes: Vec<PolarCode>,
    pub crc: Crc16,
}

impl SicSchedule {
    pub fn new(stages: usize, levels: usize, codes: Vec<PolarCode>, crc: Crc16) -> Result<Self> {
        if codes.len() != stages * levels || codes.is_empty() {
            return Err(Error::InvalidConfig(format!("expected {} component codes, got {}", stages * levels, codes.len())));
        }
        let n_code = codes[0].n_code;
        if codes.iter().any(|c| c.n_code != n_code || c.crc.is_some()) {
            return Err(Error::InvalidConfig("component codes must share one length and carry no CRC of their own".into()));
        }
        let info: usize = codes.iter().map(|c| c.info.len()).sum();
        if info > 0 && info <= Crc16::LEN {
            return Err(Error::InvalidConfig(format!("{info} info positions leave no room for data next to the CRC")));
        }
        Ok(Self { stages, levels, codes, crc })
    }

    pub fn code(&self, stage: usize, level: usize) -> &PolarCode {
        &self.codes[stage * self.levels + level]
    }

    pub fn n_code(&self) -> usize {
        self.codes[0].n_code
    }

    /// Symbols per frame.
    pub fn symbols(&self) -> usize {
        self.n_code() * self.stages
    }

    /// Info bits per frame, CRC included.
    pub fn info_bits(&self) -> usize {
        self.codes.iter().map(|c| c.info.len()).sum()
    }

    /// Data bits per frame.
    pub fn k_total(&self) -> usize {
        self.info_bits().saturating_sub(Crc16::LEN)
    }

    /// Data bits per symbol.
    pub fn rate(&self) -> f64 {
        self.k_total() as f64 / self.symbols() as f64
    }

    /// Short stable identifier of the frozen sets and CRC.
    pub fn design_id(&self) -> String {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let words = self.codes.iter().flat_map(|c| c.info.iter().copied().chain(std::iter::once(usize::MAX)));
        for p in words.chain(std::iter::once(usize::from(self.crc.poly))) {
            h ^= p as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01B3);
        }
        format!("{h:016x}")
    }

    /// Serializes the info positions, one line per component code.
    pub fn to_text(&self) -> String {
        let mut s = format!("{DESIGN_SCHEMA}\nstage,level,n_code,info,crc_poly,info_positions\n");
        for st in 0..self.stages {
            for l in 0..self.levels {
                let c = self.code(st, l);
                let pos: Vec<String> = c.info.iter().map(|p| p.to_string()).collect();
                let _ = writeln!(s, "{},{},{},{},{:#06x},{}", st + 1, l + 1, c.n_code, c.info.len(), self.crc.poly, pos.join(" "));
            }
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some(DESIGN_SCHEMA) {
            return Err(Error::Schema(format!("expected {DESIGN_SCHEMA:?}")));
        }
        if lines.next().map(str::trim) != Some("stage,level,n_code,info,crc_poly,info_positions") {
            return Err(Error::Schema("unexpected design columns".into()));
        }
        let mut entries = Vec::new();
        let mut polys = Vec::new();
        for line in lines.filter(|l| !l.trim().is_empty()) {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 6 {
                return Err(Error::Schema(format!("bad design line {line:?}")));
            }
            let num = |s: &str| s.trim().parse::<usize>().map_err(|_| Error::Schema(format!("bad number {s:?}")));
            let poly = u16::from_str_radix(f[4].trim().trim_start_matches("0x"), 16).map_err(|_| Error::Schema(format!("bad polynomial {:?}", f[4])))?;
            let info = f[5].split_whitespace().map(num).collect::<Result<Vec<_>>>()?;
            let code = PolarCode::new(num(f[2])?, info, None)?;
            if code.info.len() != num(f[3])? {
                return Err(Error::Schema(format!("count does not match positions in {line:?}")));
            }
            polys.push(poly);
            entries.push((num(f[0])?, num(f[1])?, code));
        }
        let poly = *polys.first().ok_or_else(|| Error::Schema("design has no codes".into()))?;
        if polys.iter().any(|&p| p != poly) {
            return Err(Error::Schema("design mixes CRC polynomials".into()));
        }
        let stages = entries.iter().map(|e| e.0).max().unwrap_or(0);
        let levels = entries.iter().map(|e| e.1).max().unwrap_or(0);
        entries.sort_by_key(|e| (e.0, e.1));
        SicSchedule::new(stages, levels, entries.into_iter().map(|e| e.2).collect(), Crc16 { poly })
    }
}

/// Chooses info positions across all component codes jointly: the
/// `count` positions with the smallest estimated error probability.
pub fn select_info_sets(error_probs: &[Vec<f64>], count: usize) -> Result<Vec<Vec<usize>>> {
    let mut order: Vec<(usize, usize)> = error_probs.iter().enumerate().flat_map(|(c, v)| (0..v.len()).map(move |i| (c, i))).collect();
    if count > order.len() {
        return Err(Error::Infeasible(format!("{count} info positions exceed the {} available", order.len())));
    }
    order.sort_by(|a, b| error_probs[a.0][a.1].total_cmp(&error_probs[b.0][b.1]).then(a.cmp(b)));
    let mut sets = vec![Vec::new(); error_probs.len()];
    for &(c, i) in &order[..count] {
        sets[c].push(i);
    }
    sets.iter_mut().for_each(|s| s.sort_unstable());
    Ok(sets)
}

/// Genie-aided detector LLRs of every (stage, level) bit, with earlier
/// stages and lower levels of the stage given by `u`.
fn genie_llrs(trellis: &Trellis, alphabet: &Alphabet, frame: &ObservationFrame, part: &StagePartition) -> Result<Vec<Vec<f64>>> {
    let m = alphabet.bits();
    let labels: Vec<usize> = frame.u.iter().map(|&u| alphabet.label(u)).collect();
    let mut out = Vec::new();
    for s in 0..part.stages() {
        for l in 0..m {
            out.push(level_llrs(trellis, alphabet, frame, part, &labels, s, l)?);
        }
    }
    Ok(out)
}

/// LLRs of level `l` of stage `s`, given stages `< s` and levels `< l`
/// of stage `s` from `labels`.
fn level_llrs(trellis: &Trellis, alphabet: &Alphabet, frame: &ObservationFrame, part: &StagePartition, labels: &[usize], s: usize, l: usize) -> Result<Vec<f64>> {
    let m = alphabet.bits();
    let mut mask = ConditioningMask::free(alphabet, frame.n());
    for p in 0..s {
        for k in part.stage_positions(p) {
            mask.pin(k, alphabet.from_label(labels[k]));
        }
    }
    for k in part.stage_positions(s) {
        mask.restrict_prefix(alphabet, k, labels[k] >> (m - l), l);
    }
    let app = trellis.run(frame, &mask, &FbaOptions::default())?;
    Ok(part
        .stage_positions(s)
        .map(|k| {
            let pb = app.bit_pmf(alphabet, k, l, mask.allowed(k));
            (pb[0].max(1e-300).ln() - pb[1].max(1e-300).ln()).clamp(-LLR_CLIP, LLR_CLIP)
        })
        .collect())
}

/// Simulates a frame of uniform data symbols at `snr_db` from stream `path`.
fn random_frame(link: &Link, alphabet: &Alphabet, cfg: &ExperimentConfig, path: &[u64], snr_db: f64, noise: bool, u: Option<Vec<usize>>) -> Result<ObservationFrame> {
    let mut rng = seed::stream(cfg.seed, path);
    let g = cfg.guard();
    let term = Termination::random(alphabet, g, g, &mut rng);
    let u = u.unwrap_or_else(|| (0..cfg.n).map(|_| rng.gen_range(0..alphabet.len())).collect());
    link.simulate(alphabet, &u, &term, snr_db, noise, &mut rng)
}

/// Monte Carlo design at `fer.design_snr_db`: genie-aided detector LLRs
/// feed genie-aided SC decoding of every component code, and the average
/// soft error probability of each position ranks its reliability.
pub fn design_codes(link: &Link, alphabet: &Alphabet, cfg: &ExperimentConfig) -> Result<SicSchedule> {
    let fer = &cfg.fer;
    let part = StagePartition::new(cfg.n, fer.stages)?;
    let n_code = part.per_stage();
    if !n_code.is_power_of_two() {
        return Err(Error::InvalidConfig(format!("n / S = {n_code} is not a power of two")));
    }
    let m = alphabet.bits();
    let k_total = (fer.rate_bpcu * cfg.n as f64).round() as usize;
    let error_probs = if k_total == 0 {
        vec![vec![0.0; n_code]; fer.stages * m]
    } else {
        let aux = fit_aux(link, alphabet, cfg, fer.design_snr_db)?;
        design_reliabilities(link, alphabet, cfg, &aux, &part)?
    };
    let info = if k_total == 0 { 0 } else { k_total + Crc16::LEN };
    let sets = select_info_sets(&error_probs, info)?;
    let codes = sets.into_iter().map(|s| PolarCode::new(n_code, s, None)).collect::<Result<Vec<_>>>()?;
    SicSchedule::new(fer.stages, m, codes, fer.crc())
}

fn design_reliabilities(link: &Link, alphabet: &Alphabet, cfg: &ExperimentConfig, aux: &AuxChannel, part: &StagePartition) -> Result<Vec<Vec<f64>>> {
    let fer = &cfg.fer;
    let m = alphabet.bits();
    let n_code = part.per_stage();
    let per_frame: Vec<Vec<Vec<f64>>> = (0..fer.design_frames as u64)
        .into_par_iter()
        .map(|f| -> Result<_> {
            let frame = random_frame(link, alphabet, cfg, &[DESIGN_STREAM, f], fer.design_snr_db, !fer.noiseless, None)?;
            let trellis = Trellis::for_frame(aux, alphabet, &frame)?;
            let llrs = genie_llrs(&trellis, alphabet, &frame, part)?;
            let mut out = Vec::with_capacity(llrs.len());
            for (idx, llr) in llrs.iter().enumerate() {
                let (s, l) = (idx / m, idx % m);
                let mut u: Vec<u8> = part.stage_positions(s).map(|k| alphabet.bit(frame.u[k], l)).collect();
                polar_transform(&mut u);
                let leaf = code::genie_leaf_llrs(llr, &u);
                out.push(leaf.iter().zip(&u).map(|(&v, &b)| code::soft_error(v, b)).collect());
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    let mut acc = vec![vec![0.0; n_code]; part.stages() * m];
    for f in &per_frame {
        for (a, v) in acc.iter_mut().zip(f) {
            for (x, y) in a.iter_mut().zip(v) {
                *x += y;
            }
        }
    }
    let count = per_frame.len().max(1) as f64;
    acc.iter_mut().flatten().for_each(|x| *x /= count);
    Ok(acc)
}

/// Maps `k_total` data bits to the data symbols of one frame.
pub fn encode_frame(data: &[u8], schedule: &SicSchedule, alphabet: &Alphabet) -> Result<Vec<usize>> {
    if data.len() != schedule.k_total() {
        return Err(Error::LengthMismatch(format!("expected {} data bits, got {}", schedule.k_total(), data.len())));
    }
    if alphabet.bits() != schedule.levels {
        return Err(Error::InvalidConfig("alphabet bits differ from code levels".into()));
    }
    let mut bits = data.to_vec();
    if schedule.info_bits() > 0 {
        bits.extend_from_slice(&schedule.crc.parity(data));
    }
    let m = schedule.levels;
    let part = StagePartition::new(schedule.symbols(), schedule.stages)?;
    let mut labels = vec![0usize; schedule.symbols()];
    let mut offset = 0;
    for s in 0..schedule.stages {
        for l in 0..m {
            let c = schedule.code(s, l);
            let cw = c.encode(&bits[offset..offset + c.k()])?;
            offset += c.k();
            for (t, k) in part.stage_positions(s).enumerate() {
                labels[k] |= usize::from(cw[t]) << (m - 1 - l);
            }
        }
    }
    Ok(labels.into_iter().map(|l| alphabet.from_label(l)).collect())
}

/// Outcome of decoding one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameDecision {
    pub data: Vec<u8>,
    /// The chosen path passed the outer CRC.
    pub crc_ok: bool,
    pub detector_runs: usize,
}

#[derive(Clone)]
struct Candidate {
    labels: Vec<usize>,
    bits: Vec<u8>,
    metric: f64,
}

/// Multistage decoding with list passing: each surviving candidate's
/// decisions condition a detector run for the next code, the SCL outputs
/// of all candidates join one pool and the best `list` paths survive. The
/// final choice is the best path that passes the outer CRC, or the best
/// path if none does. With `genie`, every detector run conditions on the
/// true earlier labels instead of the candidate's decisions.
pub fn decode_frame(trellis: &Trellis, alphabet: &Alphabet, frame: &ObservationFrame, schedule: &SicSchedule, list: usize, genie: bool) -> Result<FrameDecision> {
    let m = schedule.levels;
    let part = StagePartition::new(frame.n(), schedule.stages)?;
    let true_labels: Vec<usize> = frame.u.iter().map(|&u| alphabet.label(u)).collect();
    let mut cands = vec![Candidate { labels: vec![0; frame.n()], bits: Vec::new(), metric: 0.0 }];
    let mut runs = 0;
    for s in 0..schedule.stages {
        for l in 0..m {
            let code = schedule.code(s, l);
            let mut pool: Vec<Candidate> = Vec::new();
            let mut genie_llr: Option<Vec<f64>> = None;
            for c in &cands {
                let paths = if code.info.is_empty() {
                    vec![DecodedPath { data: Vec::new(), codeword: vec![0; code.n_code], metric: c.metric, crc_ok: true }]
                } else {
                    let llr = match (&genie_llr, genie) {
                        (Some(v), true) => v.clone(),
                        _ => {
                            runs += 1;
                            let v = level_llrs(trellis, alphabet, frame, &part, if genie { &true_labels } else { &c.labels }, s, l)?;
                            if genie {
                                genie_llr = Some(v.clone());
                            }
                            v
                        }
                    };
                    code.decode_list(&llr, list, c.metric)?
                };
                for p in paths {
                    let mut labels = c.labels.clone();
                    for (t, k) in part.stage_positions(s).enumerate() {
                        labels[k] |= usize::from(p.codeword[t]) << (m - 1 - l);
                    }
                    let mut bits = c.bits.clone();
                    bits.extend_from_slice(&p.data);
                    pool.push(Candidate { labels, bits, metric: p.metric });
                }
            }
            pool.sort_by(|a, b| a.metric.total_cmp(&b.metric).then_with(|| a.bits.cmp(&b.bits)));
            pool.truncate(list.max(1));
            cands = pool;
        }
    }
    let k = schedule.k_total();
    if schedule.info_bits() == 0 {
        return Ok(FrameDecision { data: Vec::new(), crc_ok: true, detector_runs: runs });
    }
    let pick = cands.iter().position(|c| schedule.crc.check(&c.bits));
    let best = &cands[pick.unwrap_or(0)];
    Ok(FrameDecision { data: best.bits[..k].to_vec(), crc_ok: pick.is_some(), detector_runs: runs })
}

/// FER estimate at one SNR.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FerRow {
    pub snr_db: f64,
    #[serde(rename = "S")]
    pub stages: usize,
    pub fer: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub n_frames: usize,
    pub n_errors: usize,
    pub list_size: usize,
    pub design_id: String,
}

/// Simulates frames at `snr_db` until `min_errors` errors and `min_frames`
/// frames are reached or `max_frames` frames have run. Frames are drawn in
/// fixed batches so the stopping point does not depend on scheduling.
pub fn fer_point(link: &Link, alphabet: &Alphabet, cfg: &ExperimentConfig, schedule: &SicSchedule, snr_db: f64) -> Result<FerRow> {
    let fer = &cfg.fer;
    if schedule.symbols() != cfg.n {
        return Err(Error::InvalidConfig(format!("design covers {} symbols, frames have {}", schedule.symbols(), cfg.n)));
    }
    let aux = fit_aux(link, alphabet, cfg, snr_db)?;
    let (mut frames, mut errors) = (0usize, 0usize);
    while frames < fer.max_frames && !(errors >= fer.min_errors && frames >= fer.min_frames) {
        let end = (frames + fer.batch).min(fer.max_frames);
        let outcomes: Vec<bool> = (frames as u64..end as u64)
            .into_par_iter()
            .map(|f| -> Result<bool> {
                let mut rng = seed::stream(cfg.seed, &[FER_STREAM, f]);
                let data: Vec<u8> = (0..schedule.k_total()).map(|_| rng.gen_range(0..2)).collect();
                let u = encode_frame(&data, schedule, alphabet)?;
                let frame = random_frame(link, alphabet, cfg, &[FER_STREAM, f, 1], snr_db, !fer.noiseless, Some(u))?;
                let trellis = Trellis::for_frame(&aux, alphabet, &frame)?;
                let dec = decode_frame(&trellis, alphabet, &frame, schedule, fer.list_size, fer.genie)?;
                Ok(dec.data != data)
            })
            .collect::<Result<_>>()?;
        errors += outcomes.iter().filter(|&&e| e).count();
        frames = end;
    }
    let (ci_lo, ci_hi) = clopper_pearson(errors as u64, frames as u64, 0.95);
    Ok(FerRow {
        snr_db,
        stages: schedule.stages,
        fer: errors as f64 / frames as f64,
        ci_lo,
        ci_hi,
        n_frames: frames,
        n_errors: errors,
        list_size: fer.list_size,
        design_id: schedule.design_id(),
    })
}

/// FER over the SNR sweep of `cfg`, designing the codes first.
pub fn run_fer(cfg: &ExperimentConfig) -> Result<(SicSchedule, Vec<FerRow>)> {
    cfg.validate()?;
    let link = Link::new(cfg.link.clone())?;
    let schedule = design_codes(&link, &cfg.build_alphabet()?, cfg)?;
    log::info!("design {}: k = {}, rate {:.3}", schedule.design_id(), schedule.k_total(), schedule.rate());
    let rows = run_fer_with(cfg, &schedule)?;
    Ok((schedule, rows))
}

/// FER over the SNR sweep of `cfg` with a given code design.
pub fn run_fer_with(cfg: &ExperimentConfig, schedule: &SicSchedule) -> Result<Vec<FerRow>> {
    cfg.validate()?;
    let link = Link::new(cfg.link.clone())?;
    let alphabet = cfg.build_alphabet()?;
    if schedule.levels != alphabet.bits() {
        return Err(Error::InvalidConfig(format!("design has {} bit levels, the alphabet {}", schedule.levels, alphabet.bits())));
    }
    cfg.snr.points().into_iter().map(|snr| fer_point(&link, &alphabet, cfg, schedule, snr)).collect()
}

/// SNR at which a curve crosses `target`, by linear interpolation of
/// `log10(value)` between neighbouring points (first crossing from above).
pub fn snr_at(points: &[(f64, f64)], target: f64) -> Option<f64> {
    let lt = target.log10();
    points.windows(2).find_map(|w| {
        let ((x0, y0), (x1, y1)) = (w[0], w[1]);
        if y0 >= target && y1 <= target && y0 > 0.0 && y1 > 0.0 {
            let (l0, l1) = (y0.log10(), y1.log10());
            Some(if (l0 - l1).abs() < 1e-15 { x0 } else { x0 + (l0 - lt) / (l0 - l1) * (x1 - x0) })
        } else {
            None
        }
    })
}
