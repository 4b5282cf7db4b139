//! Monte Carlo estimation of mismatched achievable rates from detector
//! posteriors: joint detection (JDD), separate detection (SDD), SIC stage
//! rates, and the bit-level MSD and b-SIC decompositions.
//!
//! Every rate is assembled from per-position contributions in bits:
//! `m + log2 P(u | ...)` for symbol rates and `1 + log2 P(b | ...)` for bit
//! levels, evaluated at the transmitted values with genie conditioning on
//! earlier stages.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fba::{AppTable, ConditioningMask, FbaOptions, Trellis};
use crate::link::ObservationFrame;
use crate::modem::{Alphabet, StagePartition};
use crate::numeric::entropy_bits;

/// Posterior probabilities below this are clamped before taking logs.
pub const APP_FLOOR: f64 = 1e-12;

/// Batches used for the standard error of a single-frame estimate.
pub const SINGLE_FRAME_BATCHES: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RateKind {
    Jdd,
    Sdd,
    Sic,
    Msd,
    Bsic,
}

impl RateKind {
    pub fn name(self) -> &'static str {
        match self {
            RateKind::Jdd => "JDD",
            RateKind::Sdd => "SDD",
            RateKind::Sic => "SIC",
            RateKind::Msd => "MSD",
            RateKind::Bsic => "bSIC",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "jdd" => Ok(RateKind::Jdd),
            "sdd" => Ok(RateKind::Sdd),
            "sic" => Ok(RateKind::Sic),
            "msd" => Ok(RateKind::Msd),
            "bsic" | "b-sic" => Ok(RateKind::Bsic),
            other => Err(Error::InvalidConfig(format!("unknown rate kind {other:?}"))),
        }
    }
}

impl fmt::Display for RateKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Identifies one rate row: overall, per stage, or per (stage, level).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RateKey {
    pub kind: RateKind,
    pub stages: usize,
    pub stage: Option<usize>,
    pub level: Option<usize>,
}

impl RateKey {
    pub fn overall(kind: RateKind, stages: usize) -> Self {
        Self { kind, stages, stage: None, level: None }
    }
}

/// A Monte Carlo rate estimate in bits per channel use.
#[derive(Debug, Clone, PartialEq)]
pub struct RateEstimate {
    pub key: RateKey,
    pub rate_bpcu: f64,
    pub stderr: f64,
    pub n_symbols: usize,
    pub snr_db: f64,
    /// Posterior values that hit [`APP_FLOOR`].
    pub floor_hits: usize,
    /// Set when a negative estimate was reported as zero.
    pub clamped: bool,
}

/// Which rates to compute per frame.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RateRequest {
    pub jdd: bool,
    pub sdd: bool,
    pub sic: Vec<usize>,
    pub msd: Vec<usize>,
    pub bsic: Vec<usize>,
}

impl RateRequest {
    /// Parses kinds like `["jdd", "sdd", "sic"]` applied to stage counts.
    pub fn from_kinds(kinds: &[RateKind], stages: &[usize]) -> Self {
        let mut r = Self::default();
        for k in kinds {
            match k {
                RateKind::Jdd => r.jdd = true,
                RateKind::Sdd => r.sdd = true,
                RateKind::Sic => r.sic = stages.to_vec(),
                RateKind::Msd => r.msd = stages.to_vec(),
                RateKind::Bsic => r.bsic = stages.to_vec(),
            }
        }
        r
    }

    fn stage_counts(&self) -> Vec<usize> {
        let mut s: Vec<usize> = self.sic.iter().chain(&self.msd).chain(&self.bsic).copied().collect();
        s.sort_unstable();
        s.dedup();
        s
    }
}

/// Per-frame contributions, keyed by rate row.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FrameContributions {
    /// Per-position contributions in bits.
    pub positions: BTreeMap<RateKey, Vec<f64>>,
    /// Whole-frame values in bits per symbol (JDD).
    pub scalars: BTreeMap<RateKey, f64>,
    pub floor_hits: BTreeMap<RateKey, usize>,
}

impl FrameContributions {
    fn push(&mut self, key: RateKey, value: f64, floored: bool) {
        self.positions.entry(key).or_default().push(value);
        if floored {
            *self.floor_hits.entry(key).or_default() += 1;
        }
    }

    /// Adds a posterior-probability contribution `offset + log2 p`.
    pub fn push_prob(&mut self, key: RateKey, offset: f64, p: f64) {
        let floored = !(p >= APP_FLOOR);
        self.push(key, offset + p.max(APP_FLOOR).log2(), floored);
    }

    /// Merges contributions computed elsewhere (for example by a sampler).
    pub fn extend(&mut self, other: FrameContributions) {
        for (k, v) in other.positions {
            self.positions.entry(k).or_default().extend(v);
        }
        self.scalars.extend(other.scalars);
        for (k, v) in other.floor_hits {
            *self.floor_hits.entry(k).or_default() += v;
        }
    }
}

/// Symbol mask that pins positions of stages `< stage` to the true data.
pub fn genie_mask(alphabet: &Alphabet, partition: &StagePartition, u: &[usize], stage: usize) -> ConditioningMask {
    let mut mask = ConditioningMask::free(alphabet, u.len());
    for s in 0..stage {
        for k in partition.stage_positions(s) {
            mask.pin(k, u[k]);
        }
    }
    mask
}

/// Label prefix of the first `levels` bits of symbol `u`.
pub fn label_prefix(alphabet: &Alphabet, u: usize, levels: usize) -> usize {
    alphabet.label(u) >> (alphabet.bits() - levels)
}

/// Computes every requested contribution for one frame with the exact
/// trellis detector.
pub fn frame_contributions(trellis: &Trellis, alphabet: &Alphabet, frame: &ObservationFrame, req: &RateRequest) -> Result<FrameContributions> {
    let n = frame.n();
    let m = alphabet.bits() as f64;
    let u = &frame.u;
    let opts = FbaOptions::default();
    let mut out = FrameContributions::default();
    let free = ConditioningMask::free(alphabet, n);
    let needs_free = req.sdd || req.jdd || !req.stage_counts().is_empty();
    let free_app = if needs_free { Some(trellis.run(frame, &free, &opts)?) } else { None };
    if req.jdd {
        let pinned = ConditioningMask::pinned(alphabet, u);
        let lq = trellis.log_evidence(frame, &pinned)?;
        let lfree = free_app.as_ref().map(|a| a.log_evidence).expect("free run");
        out.scalars.insert(RateKey::overall(RateKind::Jdd, 1), (lq - lfree) / (n as f64 * std::f64::consts::LN_2));
    }
    if req.sdd {
        let app = free_app.as_ref().expect("free run");
        for k in 0..n {
            out.push_prob(RateKey::overall(RateKind::Sdd, 1), m, app.prob(k, u[k]));
        }
    }
    for stages in req.stage_counts() {
        let part = StagePartition::new(n, stages)?;
        let want_sic = req.sic.contains(&stages);
        let want_msd = req.msd.contains(&stages);
        let want_bsic = req.bsic.contains(&stages);
        for s in 0..stages {
            let app = if s == 0 {
                free_app.clone().expect("free run")
            } else {
                trellis.run(frame, &genie_mask(alphabet, &part, u, s), &opts)?
            };
            symbol_stage_contributions(&mut out, alphabet, &part, u, s, &app, want_sic, want_msd, want_bsic);
            if want_bsic {
                for l in 1..alphabet.bits() {
                    let mut mask = genie_mask(alphabet, &part, u, s);
                    for k in part.stage_positions(s) {
                        mask.restrict_prefix(alphabet, k, label_prefix(alphabet, u[k], l), l);
                    }
                    let app = trellis.run(frame, &mask, &opts)?;
                    for k in part.stage_positions(s) {
                        let pb = app.bit_pmf(alphabet, k, l, mask.allowed(k));
                        let key = RateKey { kind: RateKind::Bsic, stages, stage: Some(s), level: Some(l) };
                        out.push_prob(key, 1.0, pb[alphabet.bit(u[k], l) as usize]);
                    }
                }
            }
        }
        if want_bsic {
            finish_bit_levels(&mut out, RateKind::Bsic, stages, alphabet.bits(), &part);
        }
        if want_msd {
            finish_bit_levels(&mut out, RateKind::Msd, stages, alphabet.bits(), &part);
        }
    }
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
fn symbol_stage_contributions(
    out: &mut FrameContributions,
    alphabet: &Alphabet,
    part: &StagePartition,
    u: &[usize],
    s: usize,
    app: &AppTable,
    want_sic: bool,
    want_msd: bool,
    want_bsic: bool,
) {
    let stages = part.stages();
    let m = alphabet.bits();
    for k in part.stage_positions(s) {
        if want_sic {
            let p = app.prob(k, u[k]);
            out.push_prob(RateKey { kind: RateKind::Sic, stages, stage: Some(s), level: None }, m as f64, p);
        }
        for l in 0..m {
            if !(want_msd || (want_bsic && l == 0)) {
                continue;
            }
            let own = alphabet.prefix_mask(label_prefix(alphabet, u[k], l), l);
            let pb = app.bit_pmf(alphabet, k, l, own)[alphabet.bit(u[k], l) as usize];
            if want_msd {
                out.push_prob(RateKey { kind: RateKind::Msd, stages, stage: Some(s), level: Some(l) }, 1.0, pb);
            }
            if want_bsic && l == 0 {
                out.push_prob(RateKey { kind: RateKind::Bsic, stages, stage: Some(s), level: Some(0) }, 1.0, pb);
            }
        }
    }
    if want_sic && s + 1 == stages {
        combine_stages(out, RateKind::Sic, stages, part);
    }
}

/// Builds per-stage and overall rows from stage rows (SIC).
fn combine_stages(out: &mut FrameContributions, kind: RateKind, stages: usize, part: &StagePartition) {
    let mut overall = vec![0.0; part.len()];
    for s in 0..stages {
        let key = RateKey { kind, stages, stage: Some(s), level: None };
        let vals = out.positions.get(&key).cloned().unwrap_or_default();
        for (t, k) in part.stage_positions(s).enumerate() {
            overall[k] = vals[t];
        }
    }
    out.positions.insert(RateKey::overall(kind, stages), overall);
}

/// Sums bit-level rows into stage rows and an overall row.
pub fn finish_bit_levels(out: &mut FrameContributions, kind: RateKind, stages: usize, levels: usize, part: &StagePartition) {
    let mut overall = vec![0.0; part.len()];
    for s in 0..stages {
        let mut stage_vals = vec![0.0; part.per_stage()];
        for l in 0..levels {
            let key = RateKey { kind, stages, stage: Some(s), level: Some(l) };
            if let Some(v) = out.positions.get(&key) {
                for (t, x) in v.iter().enumerate() {
                    stage_vals[t] += x;
                }
            }
        }
        for (t, k) in part.stage_positions(s).enumerate() {
            overall[k] = stage_vals[t];
        }
        out.positions.insert(RateKey { kind, stages, stage: Some(s), level: None }, stage_vals);
    }
    out.positions.insert(RateKey::overall(kind, stages), overall);
}

/// Mean and standard error of per-frame samples; with a single frame the
/// per-position values are split into contiguous batches instead.
fn mean_stderr(per_frame: &[Vec<f64>]) -> (f64, f64, usize) {
    let total: usize = per_frame.iter().map(|v| v.len()).sum();
    if total == 0 {
        return (f64::NAN, f64::NAN, 0);
    }
    let mean = per_frame.iter().flatten().sum::<f64>() / total as f64;
    let samples: Vec<f64> = if per_frame.len() >= 2 {
        per_frame.iter().filter(|v| !v.is_empty()).map(|v| v.iter().sum::<f64>() / v.len() as f64).collect()
    } else {
        let v = &per_frame[0];
        let b = SINGLE_FRAME_BATCHES.min(v.len());
        (0..b)
            .map(|i| {
                let chunk = &v[i * v.len() / b..(i + 1) * v.len() / b];
                chunk.iter().sum::<f64>() / chunk.len() as f64
            })
            .collect()
    };
    let k = samples.len() as f64;
    let stderr = if samples.len() < 2 {
        f64::NAN
    } else {
        let mu = samples.iter().sum::<f64>() / k;
        (samples.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / (k - 1.0) / k).sqrt()
    };
    (mean, stderr, total)
}

/// Reduces per-frame contributions to rate estimates, one per row.
pub fn aggregate(frames: &[FrameContributions], snr_db: f64, n_per_frame: usize) -> Vec<RateEstimate> {
    let mut keys: Vec<RateKey> = frames.iter().flat_map(|f| f.positions.keys().chain(f.scalars.keys()).copied()).collect();
    keys.sort();
    keys.dedup();
    let mut out = Vec::new();
    for key in keys {
        let floor_hits = frames.iter().map(|f| f.floor_hits.get(&key).copied().unwrap_or(0)).sum();
        let (mean, stderr, count) = if frames.iter().any(|f| f.scalars.contains_key(&key)) {
            let per: Vec<Vec<f64>> = frames.iter().filter_map(|f| f.scalars.get(&key).map(|v| vec![*v])).collect();
            let (mean, mut se, _) = mean_stderr(&per);
            if per.len() < 2 {
                se = f64::NAN;
            }
            (mean, se, per.len() * n_per_frame)
        } else {
            let per: Vec<Vec<f64>> = frames.iter().filter_map(|f| f.positions.get(&key).cloned()).collect();
            mean_stderr(&per)
        };
        let clamped = mean < 0.0;
        if clamped {
            log::warn!("{} estimate {mean:.4} clamped to zero", key.kind);
        }
        out.push(RateEstimate {
            key,
            rate_bpcu: mean.max(0.0),
            stderr,
            n_symbols: count,
            snr_db,
            floor_hits,
            clamped,
        });
    }
    out
}

/// Finds the estimate for `key`.
pub fn find(estimates: &[RateEstimate], key: RateKey) -> Option<&RateEstimate> {
    estimates.iter().find(|e| e.key == key)
}

/// Expected per-position posterior entropies for one observation, averaged
/// exactly over the posterior of a conditioning context.
///
/// `context_levels[k]` bits of position k's label are revealed (0 = none,
/// m = the full symbol). For each target position the function returns
/// E[H(target | y, context)] in bits, where the target is the symbol
/// (`level = None`) or bit `level` of the label. Contexts are enumerated,
/// weighted by P(context | y) obtained from trellis evidences.
pub fn context_entropies(
    trellis: &Trellis,
    alphabet: &Alphabet,
    frame: &ObservationFrame,
    context_levels: &[usize],
    targets: &[usize],
    level: Option<usize>,
) -> Result<Vec<f64>> {
    let n = frame.n();
    if context_levels.len() != n {
        return Err(Error::LengthMismatch("context levels must cover every position".into()));
    }
    let opts = FbaOptions::default();
    let free = ConditioningMask::free(alphabet, n);
    let lfree = trellis.log_evidence(frame, &free)?;
    let ctx_positions: Vec<usize> = (0..n).filter(|&k| context_levels[k] > 0).collect();
    let radix: Vec<usize> = ctx_positions.iter().map(|&k| 1usize << context_levels[k]).collect();
    let combos: u64 = radix.iter().try_fold(1u64, |a, &r| a.checked_mul(r as u64)).unwrap_or(u64::MAX);
    if combos > crate::fba::MAX_ENUMERATION {
        return Err(Error::TooLarge(format!("{combos} contexts exceed the enumeration limit")));
    }
    let mut acc = vec![0.0; targets.len()];
    let mut total_weight = 0.0;
    let mut digits = vec![0usize; ctx_positions.len()];
    loop {
        let mut mask = ConditioningMask::free(alphabet, n);
        for (i, &k) in ctx_positions.iter().enumerate() {
            mask.restrict_prefix(alphabet, k, digits[i], context_levels[k]);
        }
        if mask.check().is_ok() {
            let app = trellis.run(frame, &mask, &opts)?;
            let w = (app.log_evidence - lfree + mask.log_probability()).exp();
            total_weight += w;
            for (i, &k) in targets.iter().enumerate() {
                let h = match level {
                    None => entropy_bits(&app.pmfs[k]),
                    Some(l) => entropy_bits(&app.bit_pmf(alphabet, k, l, mask.allowed(k))),
                };
                acc[i] += w * h;
            }
        }
        let mut i = 0;
        while i < digits.len() {
            digits[i] += 1;
            if digits[i] < radix[i] {
                break;
            }
            digits[i] = 0;
            i += 1;
        }
        if i == digits.len() {
            break;
        }
    }
    if (total_weight - 1.0).abs() > 1e-6 {
        return Err(Error::Numerical(format!("context posterior sums to {total_weight}")));
    }
    Ok(acc)
}

/// Exact rates of one observation (no averaging over data).
#[derive(Debug, Clone, PartialEq)]
pub struct ExactRates {
    pub sdd: f64,
    /// (S, SIC rate, per-stage rates)
    pub sic: Vec<(usize, f64, Vec<f64>)>,
    pub bsic: Vec<(usize, f64)>,
    /// m - H(U | y) / n.
    pub joint: f64,
}

/// Evaluates the rate expressions with exact conditional entropies given
/// the observation in `frame`, by enumeration. Meant for small instances.
pub fn exact_rates(trellis: &Trellis, alphabet: &Alphabet, frame: &ObservationFrame, stage_counts: &[usize]) -> Result<ExactRates> {
    let n = frame.n();
    let m = alphabet.bits();
    let mf = m as f64;
    let all: Vec<usize> = (0..n).collect();
    let h_sdd: f64 = context_entropies(trellis, alphabet, frame, &vec![0; n], &all, None)?.iter().sum();
    let sdd = mf - h_sdd / n as f64;
    let mut sic = Vec::new();
    let mut bsic = Vec::new();
    for &stages in stage_counts {
        let part = StagePartition::new(n, stages)?;
        let mut stage_rates = Vec::new();
        let mut bsic_total = 0.0;
        for s in 0..stages {
            let mut ctx = vec![0; n];
            for p in 0..s {
                for k in part.stage_positions(p) {
                    ctx[k] = m;
                }
            }
            let targets: Vec<usize> = part.stage_positions(s).collect();
            let h: f64 = context_entropies(trellis, alphabet, frame, &ctx, &targets, None)?.iter().sum();
            stage_rates.push(mf - h / targets.len() as f64);
            for l in 0..m {
                let mut c = ctx.clone();
                for &k in &targets {
                    c[k] = l;
                }
                let h: f64 = context_entropies(trellis, alphabet, frame, &c, &targets, Some(l))?.iter().sum();
                bsic_total += 1.0 - h / targets.len() as f64;
            }
        }
        let mean = stage_rates.iter().sum::<f64>() / stages as f64;
        sic.push((stages, mean, stage_rates));
        bsic.push((stages, bsic_total / stages as f64));
    }
    // Joint posterior over all sequences.
    let total = (alphabet.len() as u64).checked_pow(n as u32).unwrap_or(u64::MAX);
    if total > crate::fba::MAX_ENUMERATION {
        return Err(Error::TooLarge(format!("{total} sequences exceed the enumeration limit")));
    }
    let lfree = trellis.log_evidence(frame, &ConditioningMask::free(alphabet, n))?;
    let log_prior = -(n as f64) * (alphabet.len() as f64).ln();
    let mut h = 0.0;
    let mut mass = 0.0;
    for idx in 0..total {
        let mut rest = idx;
        let u: Vec<usize> = (0..n)
            .map(|_| {
                let d = (rest % alphabet.len() as u64) as usize;
                rest /= alphabet.len() as u64;
                d
            })
            .collect();
        let lp = trellis.log_evidence(frame, &ConditioningMask::pinned(alphabet, &u))? + log_prior - lfree;
        let p = lp.exp();
        mass += p;
        if p > 0.0 {
            h -= p * lp / std::f64::consts::LN_2;
        }
    }
    if (mass - 1.0).abs() > 1e-6 {
        return Err(Error::Numerical(format!("joint posterior sums to {mass}")));
    }
    Ok(ExactRates { sdd, sic, bsic, joint: mf - h / n as f64 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::auxmodel::AuxChannel;
    use crate::link::{Link, LinkConfig, Termination};
    use crate::modem::{build_alphabet, AlphabetKind};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn setup(kind: AlphabetKind, m: usize, n: usize, kp: usize, snr: f64, seed: u64, noise: bool) -> (Alphabet, AuxChannel, Vec<ObservationFrame>) {
        let a = build_alphabet(kind, m).unwrap();
        let link = Link::new(LinkConfig { alpha: 0.0, taps_half: kp.max(1), ..LinkConfig::default() }).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let frames = (0..4)
            .map(|_| {
                let term = Termination::random(&a, kp.max(1), kp.max(1), &mut rng);
                let u: Vec<usize> = (0..n).map(|_| rng.gen_range(0..m)).collect();
                link.simulate(&a, &u, &term, snr, noise, &mut rng).unwrap()
            })
            .collect();
        let aux = AuxChannel::from_taps(&link.taps, kp).unwrap();
        (a, aux, frames)
    }

    fn estimates(a: &Alphabet, aux: &AuxChannel, frames: &[ObservationFrame], req: &RateRequest) -> Vec<RateEstimate> {
        let contribs: Vec<FrameContributions> = frames
            .iter()
            .map(|f| frame_contributions(&Trellis::for_frame(aux, a, f).unwrap(), a, f, req).unwrap())
            .collect();
        aggregate(&contribs, frames[0].snr_db, frames[0].n())
    }

    #[test]
    fn noise_free_memoryless_pam_reaches_m() {
        let (a, aux, frames) = setup(AlphabetKind::Pam, 4, 20, 0, 20.0, 1, false);
        let aux = aux.with_moments([0.0; 2], [1e-3; 2]).unwrap();
        let est = estimates(&a, &aux, &frames, &RateRequest { sdd: true, ..Default::default() });
        let sdd = find(&est, RateKey::overall(RateKind::Sdd, 1)).unwrap();
        assert!((sdd.rate_bpcu - 2.0).abs() < 1e-9);
    }

    #[test]
    fn uninformative_observation_gives_zero() {
        let (a, aux, frames) = setup(AlphabetKind::Ask, 4, 12, 1, 0.0, 2, true);
        let aux = aux.with_moments([0.0; 2], [1e12; 2]).unwrap();
        let req = RateRequest { sdd: true, jdd: true, ..Default::default() };
        let est = estimates(&a, &aux, &frames, &req);
        for e in &est {
            assert!(e.rate_bpcu < 1e-6, "{:?}", e);
        }
    }

    #[test]
    fn single_stage_sic_equals_sdd() {
        let (a, aux, frames) = setup(AlphabetKind::Ask, 4, 16, 2, 4.0, 3, true);
        let req = RateRequest { sdd: true, sic: vec![1], ..Default::default() };
        let est = estimates(&a, &aux, &frames, &req);
        let sdd = find(&est, RateKey::overall(RateKind::Sdd, 1)).unwrap();
        let sic = find(&est, RateKey::overall(RateKind::Sic, 1)).unwrap();
        assert_eq!(sdd.rate_bpcu, sic.rate_bpcu);
    }

    #[test]
    fn msd_levels_sum_to_stage_rates() {
        let (a, aux, frames) = setup(AlphabetKind::Sqam, 4, 16, 2, 6.0, 4, true);
        let req = RateRequest { sic: vec![2], msd: vec![2], ..Default::default() };
        let est = estimates(&a, &aux, &frames, &req);
        for s in 0..2 {
            let sic = find(&est, RateKey { kind: RateKind::Sic, stages: 2, stage: Some(s), level: None }).unwrap();
            let levels: f64 = (0..2)
                .map(|l| find(&est, RateKey { kind: RateKind::Msd, stages: 2, stage: Some(s), level: Some(l) }).unwrap().rate_bpcu)
                .sum();
            assert!((sic.rate_bpcu - levels).abs() < 1e-9);
        }
    }

    #[test]
    fn binary_alphabet_bit_rates_equal_symbol_rates() {
        let (a, aux, frames) = setup(AlphabetKind::Ask, 2, 12, 2, 3.0, 5, true);
        let req = RateRequest { sic: vec![2], msd: vec![2], bsic: vec![2], ..Default::default() };
        let est = estimates(&a, &aux, &frames, &req);
        let sic = find(&est, RateKey::overall(RateKind::Sic, 2)).unwrap().rate_bpcu;
        for kind in [RateKind::Msd, RateKind::Bsic] {
            assert!((find(&est, RateKey::overall(kind, 2)).unwrap().rate_bpcu - sic).abs() < 1e-12);
        }
    }

    #[test]
    fn exact_rate_chain_on_small_instance() {
        let (a, aux, frames) = setup(AlphabetKind::Ask, 4, 6, 2, 6.0, 6, true);
        let f = &frames[0];
        let t = Trellis::for_frame(&aux, &a, f).unwrap();
        let ex = exact_rates(&t, &a, f, &[2, 3]).unwrap();
        for (stages, sic, _) in &ex.sic {
            assert!(ex.sdd <= sic + 1e-9, "S={stages}");
            assert!(*sic <= ex.joint + 1e-9, "S={stages}");
        }
        for ((_, sic, _), (_, b)) in ex.sic.iter().zip(&ex.bsic) {
            assert!(*b >= sic - 1e-9);
        }
    }

    #[test]
    fn stderr_scales_with_frames() {
        let per: Vec<Vec<f64>> = (0..400).map(|i| vec![((i * 7919) % 101) as f64 / 100.0]).collect();
        let (_, se_small, _) = mean_stderr(&per[..100]);
        let (_, se_large, _) = mean_stderr(&per);
        let ratio = se_small / se_large;
        assert!((ratio - 2.0).abs() < 0.4, "{ratio}");
        let (_, se_single, _) = mean_stderr(&per[..1].iter().map(|_| (0..100).map(|i| i as f64).collect()).collect::<Vec<_>>());
        assert!(se_single > 0.0);
    }

    #[test]
    fn kinds_round_trip() {
        for k in [RateKind::Jdd, RateKind::Sdd, RateKind::Sic, RateKind::Msd, RateKind::Bsic] {
            assert_eq!(RateKind::parse(k.name()).unwrap(), k);
        }
        assert!(RateKind::parse("nope").is_err());
    }
}
