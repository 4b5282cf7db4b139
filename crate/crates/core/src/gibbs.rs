//! Bit-wise APP estimation by tempered Gibbs sampling for b-SIC.
//!
//! Undecided bits are resampled one at a time in transmission order from
//! their full conditional under the auxiliary channel, with the likelihood
//! raised to `1/eta`. APPs are estimated from the untempered per-bit
//! conditionals of every post-burn-in sample, reweighted by self-normalized
//! importance weights and pooled across parallel samplers.

use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;

use crate::auxmodel::AuxChannel;
use crate::error::{Error, Result};
use crate::link::{ObservationFrame, Tail};
use crate::modem::{Alphabet, StagePartition};
use crate::numeric::log_add;
use crate::rates::{finish_bit_levels, FrameContributions, RateKey, RateKind};
use crate::seed;

/// Smallest conditional probability used when sampling.
const PROB_FLOOR: f64 = 1e-300;

/// Potential scale reduction above which the sampler is flagged as stalled.
pub const STALL_RHAT: f64 = 1.2;

/// Sampler settings.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct GibbsConfig {
    /// Sweeps kept after burn-in.
    pub n_iter: usize,
    /// Independent samplers per estimate.
    pub n_par: usize,
    /// Sweeps discarded at the start of each sampler.
    pub burn_in: usize,
    /// Confidence parameter; the likelihood is raised to `1/eta`.
    pub eta: f64,
    /// Normalize importance weights per sampler and average the samplers,
    /// instead of pooling all weights.
    pub per_sampler_pooling: bool,
    /// Keep the per-sweep log-likelihood of every sampler.
    pub record_trace: bool,
}

impl Default for GibbsConfig {
    fn default() -> Self {
        Self { n_iter: 50, n_par: 20, burn_in: 10, eta: 1.0, per_sampler_pooling: false, record_trace: false }
    }
}

impl GibbsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_iter == 0 || self.n_par == 0 {
            return Err(Error::InvalidConfig("n_iter and n_par must be positive".into()));
        }
        if !(self.eta >= 1.0) || !self.eta.is_finite() {
            return Err(Error::InvalidConfig(format!("eta must be a finite value >= 1, got {}", self.eta)));
        }
        Ok(())
    }
}

/// The posterior to sample: which bits are fixed, which are resampled and
/// which are reported.
#[derive(Debug, Clone)]
pub struct SamplingProblem<'a> {
    aux: &'a AuxChannel,
    alphabet: &'a Alphabet,
    frame: &'a ObservationFrame,
    /// Leading label bits of each position that are given.
    fixed_levels: Vec<usize>,
    /// Labels whose leading `fixed_levels` bits are the given values.
    context_labels: Vec<usize>,
    /// Undecided (position, level) pairs in transmission order.
    bits: Vec<(usize, usize)>,
    /// Indices into `bits` whose APPs are estimated.
    targets: Vec<usize>,
}

impl<'a> SamplingProblem<'a> {
    /// General problem. `context_u` supplies the values of the fixed bits;
    /// APPs are reported for bit `target_level` at `target_positions`.
    pub fn new(
        aux: &'a AuxChannel,
        alphabet: &'a Alphabet,
        frame: &'a ObservationFrame,
        fixed_levels: Vec<usize>,
        context_u: &[usize],
        target_positions: &[usize],
        target_level: usize,
    ) -> Result<Self> {
        let n = frame.n();
        let m = alphabet.bits();
        if fixed_levels.len() != n || context_u.len() != n {
            return Err(Error::LengthMismatch("context must cover every position".into()));
        }
        let (lo, hi) = aux.sample_range(n);
        for rho in [lo, hi] {
            if frame.sample(rho + aux.offset()).is_none() {
                return Err(Error::LengthMismatch(format!("frame lacks sample {}", rho + aux.offset())));
            }
        }
        let mut bits = Vec::new();
        for (k, &f) in fixed_levels.iter().enumerate() {
            if f > m {
                return Err(Error::InvalidConfig(format!("position {k} fixes {f} of {m} levels")));
            }
            bits.extend((f..m).map(|l| (k, l)));
        }
        let targets = target_positions
            .iter()
            .map(|&k| {
                bits.iter()
                    .position(|&b| b == (k, target_level))
                    .ok_or_else(|| Error::InconsistentContext(format!("bit {target_level} of position {k} is not undecided")))
            })
            .collect::<Result<Vec<_>>>()?;
        let context_labels = context_u.iter().map(|&u| alphabet.label(u)).collect();
        Ok(Self { aux, alphabet, frame, fixed_levels, context_labels, bits, targets })
    }

    /// The b-SIC posterior of stage `stage`, level `level`: earlier stages
    /// and the first `level` bit planes of the stage are taken from `u`.
    pub fn bsic(
        aux: &'a AuxChannel,
        alphabet: &'a Alphabet,
        frame: &'a ObservationFrame,
        partition: &StagePartition,
        stage: usize,
        level: usize,
        u: &[usize],
    ) -> Result<Self> {
        let n = frame.n();
        let m = alphabet.bits();
        let mut fixed = vec![0; n];
        for k in 0..n {
            let (s, _) = partition.locate(k);
            fixed[k] = match s.cmp(&stage) {
                std::cmp::Ordering::Less => m,
                std::cmp::Ordering::Equal => level,
                std::cmp::Ordering::Greater => 0,
            };
        }
        let targets: Vec<usize> = partition.stage_positions(stage).collect();
        Self::new(aux, alphabet, frame, fixed, u, &targets, level)
    }

    /// Number of undecided bits W.
    pub fn undecided(&self) -> usize {
        self.bits.len()
    }

    pub fn targets(&self) -> usize {
        self.targets.len()
    }

    /// (position, level) of target `i`.
    pub fn target_bit(&self, i: usize) -> (usize, usize) {
        self.bits[self.targets[i]]
    }
}

/// State of one sampler with cached noise-free outputs.
pub struct SamplerState<'p, 'a> {
    problem: &'p SamplingProblem<'a>,
    taps: Vec<Complex64>,
    kp: i64,
    rho_lo: i64,
    rho_hi: i64,
    j_lo: i64,
    /// Current labels of the data symbols.
    labels: Vec<usize>,
    /// Current transmit point indices of the data symbols.
    x_idx: Vec<usize>,
    /// Amplitude-scaled transmit values from `j_lo` on.
    xs: Vec<Complex64>,
    /// Noise-free output and its log-density per sample.
    z: Vec<f64>,
    ll: Vec<f64>,
    y: Vec<f64>,
    total_ll: f64,
    rotate_tail: bool,
    fixed_tail: bool,
    scratch: Vec<f64>,
    /// Complex multiplications spent on likelihood windows.
    pub mults: u64,
}

impl<'p, 'a> SamplerState<'p, 'a> {
    /// Starts from uniformly random undecided bits.
    pub fn new<R: Rng + ?Sized>(problem: &'p SamplingProblem<'a>, rng: &mut R) -> Self {
        let alphabet = problem.alphabet;
        let frame = problem.frame;
        let n = frame.n();
        let m = alphabet.bits();
        let kp = problem.aux.ktilde() as i64;
        let (rho_lo, rho_hi) = problem.aux.sample_range(n);
        let j_lo = ceil_half(rho_lo - kp);
        let j_hi = (rho_hi + kp).div_euclid(2);
        let labels: Vec<usize> = (0..n)
            .map(|k| {
                let f = problem.fixed_levels[k];
                let keep = if f == 0 { 0 } else { problem.context_labels[k] >> (m - f) << (m - f) };
                let free_bits = if f == m { 0 } else { rng.gen_range(0..1usize << (m - f)) };
                keep | free_bits
            })
            .collect();
        let u: Vec<usize> = labels.iter().map(|&l| alphabet.from_label(l)).collect();
        let x_idx = crate::modem::diff_encode_indices(alphabet, &u, frame.termination.ref_phase);
        let (rotate_tail, fixed_tail) = match &frame.termination.tail {
            Tail::KnownData(_) => (alphabet.is_differential(), false),
            Tail::KnownSymbols(v) => (false, alphabet.is_differential() && v.iter().any(|c| c.norm() > 0.0)),
        };
        let tail_x: Vec<Complex64> = match &frame.termination.tail {
            Tail::KnownData(tu) => {
                let start = x_idx.last().map_or(frame.termination.ref_phase, |&l| alphabet.phase_of(l));
                crate::modem::diff_encode_indices(alphabet, tu, start).into_iter().map(|i| alphabet.point(i)).collect()
            }
            Tail::KnownSymbols(v) => v.clone(),
        };
        let xs: Vec<Complex64> = (j_lo..=j_hi)
            .map(|j| {
                let v = if j >= 1 && j <= n as i64 {
                    alphabet.point(x_idx[(j - 1) as usize])
                } else if j > n as i64 {
                    tail_x.get((j - n as i64 - 1) as usize).copied().unwrap_or_default()
                } else {
                    frame.x_value(alphabet, j)
                };
                v * frame.amp
            })
            .collect();
        let y: Vec<f64> = (rho_lo..=rho_hi).map(|rho| frame.sample(rho + problem.aux.offset()).unwrap_or(0.0)).collect();
        let mut st = Self {
            problem,
            taps: problem.aux.taps().taps.clone(),
            kp,
            rho_lo,
            rho_hi,
            j_lo,
            labels,
            x_idx,
            xs,
            z: vec![0.0; (rho_hi - rho_lo + 1) as usize],
            ll: vec![0.0; (rho_hi - rho_lo + 1) as usize],
            y,
            total_ll: 0.0,
            rotate_tail,
            fixed_tail,
            scratch: Vec::new(),
            mults: 0,
        };
        st.refresh();
        st
    }

    /// Recomputes every cached output from the current symbols.
    pub fn refresh(&mut self) {
        let mut total = 0.0;
        for rho in self.rho_lo..=self.rho_hi {
            let z = self.output(rho, |j| self.xs[(j - self.j_lo) as usize]);
            let i = (rho - self.rho_lo) as usize;
            self.z[i] = z;
            self.ll[i] = self.problem.aux.log_density(rho + self.problem.aux.offset(), self.y[i], z);
            total += self.ll[i];
        }
        self.total_ll = total;
    }

    /// Largest relative deviation of the cached outputs from a fresh recomputation.
    pub fn audit(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for rho in self.rho_lo..=self.rho_hi {
            let z = self.output(rho, |j| self.xs[(j - self.j_lo) as usize]);
            let c = self.z[(rho - self.rho_lo) as usize];
            worst = worst.max((z - c).abs() / z.abs().max(1e-12));
        }
        worst
    }

    pub fn log_likelihood(&self) -> f64 {
        self.total_ll
    }

    /// Current data labels.
    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    #[inline]
    fn output<F: Fn(i64) -> Complex64>(&self, rho: i64, x: F) -> f64 {
        let lo = ceil_half(rho - self.kp);
        let hi = (rho + self.kp).div_euclid(2);
        let mut acc = Complex64::new(0.0, 0.0);
        for j in lo..=hi {
            acc += self.taps[(rho - 2 * j + self.kp) as usize] * x(j);
        }
        acc.norm_sqr()
    }

    /// Sample windows touched by changing data position `k`.
    fn windows(&self, k: usize, rotated: bool) -> [(i64, i64); 2] {
        let j = k as i64 + 1;
        let n = self.problem.frame.n() as i64;
        let a = ((2 * j - self.kp).max(self.rho_lo), (2 * j + self.kp).min(self.rho_hi));
        let b = if rotated && self.fixed_tail && j < n {
            ((2 * n + 2 - self.kp).max(a.1 + 1).max(self.rho_lo), (2 * n + self.kp).min(self.rho_hi))
        } else {
            (1, 0)
        };
        [a, b]
    }

    /// Log-likelihood of the touched windows for the current state and for
    /// data position `k` carrying `label`. Candidate outputs go to scratch.
    fn evaluate(&mut self, k: usize, label: usize) -> (f64, f64, usize, Complex64) {
        let alphabet = self.problem.alphabet;
        let u_new = alphabet.from_label(label);
        let prev_phase = if k == 0 { self.problem.frame.termination.ref_phase } else { alphabet.phase_of(self.x_idx[k - 1]) };
        let x_new = alphabet.diff_step(prev_phase, u_new);
        let rot = if alphabet.is_differential() {
            let q = alphabet.phase_count();
            let d = (alphabet.phase_of(x_new) + q - alphabet.phase_of(self.x_idx[k])) % q;
            Complex64::from_polar(1.0, 2.0 * std::f64::consts::PI * d as f64 / q as f64)
        } else {
            Complex64::new(1.0, 0.0)
        };
        let rotated = (rot - 1.0).norm() > 1e-12;
        let jk = k as i64 + 1;
        let n = self.problem.frame.n() as i64;
        let xk = alphabet.point(x_new) * self.problem.frame.amp;
        let rotate_tail = self.rotate_tail;
        let view = |st: &Self, j: i64| -> Complex64 {
            let v = st.xs[(j - st.j_lo) as usize];
            if j == jk {
                xk
            } else if j > jk && rotated && (j <= n || rotate_tail) {
                v * rot
            } else {
                v
            }
        };
        let mut old = 0.0;
        let mut new = 0.0;
        self.scratch.clear();
        let offset = self.problem.aux.offset();
        for (lo, hi) in self.windows(k, rotated) {
            for rho in lo..=hi {
                let i = (rho - self.rho_lo) as usize;
                let z = self.output(rho, |j| view(self, j));
                self.mults += (((rho + self.kp).div_euclid(2) - ceil_half(rho - self.kp)) + 1) as u64;
                self.scratch.push(z);
                old += self.ll[i];
                new += self.problem.aux.log_density(rho + offset, self.y[i], z);
            }
        }
        (old, new, x_new, rot)
    }

    /// Moves data position `k` to `label`; `x_new`/`rot` come from [`Self::evaluate`].
    fn commit(&mut self, k: usize, label: usize, x_new: usize, rot: Complex64, delta_ll: f64) {
        let alphabet = self.problem.alphabet;
        let rotated = (rot - 1.0).norm() > 1e-12;
        let n = self.problem.frame.n();
        let amp = self.problem.frame.amp;
        let q = alphabet.phase_count();
        let d = if rotated { (alphabet.phase_of(x_new) + q - alphabet.phase_of(self.x_idx[k])) % q } else { 0 };
        self.labels[k] = label;
        self.x_idx[k] = x_new;
        let base = (1 - self.j_lo) as usize;
        self.xs[base + k] = alphabet.point(x_new) * amp;
        if rotated {
            for kk in k + 1..n {
                let xi = self.x_idx[kk];
                self.x_idx[kk] = alphabet.with_phase(xi, alphabet.phase_of(xi) + d);
                self.xs[base + kk] = alphabet.point(self.x_idx[kk]) * amp;
            }
            if self.rotate_tail {
                for v in &mut self.xs[base + n..] {
                    *v *= rot;
                }
            }
        }
        let offset = self.problem.aux.offset();
        let mut idx = 0;
        for (lo, hi) in self.windows(k, rotated) {
            for rho in lo..=hi {
                let i = (rho - self.rho_lo) as usize;
                self.z[i] = self.scratch[idx];
                self.ll[i] = self.problem.aux.log_density(rho + offset, self.y[i], self.z[i]);
                idx += 1;
            }
        }
        self.total_ll += delta_ll;
    }

    /// One sweep over the undecided bits in transmission order. When
    /// `observe` is given it receives, for each bit index, the untempered
    /// conditional P(bit = 1 | rest) and the log importance weight of the
    /// current remaining bits.
    pub fn sweep<R: Rng + ?Sized>(&mut self, eta: f64, rng: &mut R, mut observe: Option<&mut dyn FnMut(usize, f64, f64)>) {
        let m = self.problem.alphabet.bits();
        for w in 0..self.problem.bits.len() {
            let (k, level) = self.problem.bits[w];
            let bit_mask = 1usize << (m - 1 - level);
            let cur = self.labels[k];
            let alt = cur ^ bit_mask;
            let (ll_old, ll_alt, x_new, rot) = self.evaluate(k, alt);
            // Log-likelihood of the full state for the current and flipped bit.
            let full_cur = self.total_ll;
            let full_alt = self.total_ll - ll_old + ll_alt;
            let diff = ll_alt - ll_old;
            let p_alt_tempered = logistic(diff / eta).clamp(PROB_FLOOR, 1.0);
            if let Some(obs) = observe.as_deref_mut() {
                let p_alt = logistic(diff);
                let cur_is_one = cur & bit_mask != 0;
                let p_one = if cur_is_one { 1.0 - p_alt } else { p_alt };
                let log_w = log_add(full_cur, full_alt) - log_add(full_cur / eta, full_alt / eta);
                obs(w, p_one, log_w);
            }
            if rng.gen::<f64>() < p_alt_tempered {
                self.commit(k, alt, x_new, rot, ll_alt - ll_old);
            }
        }
    }
}

#[inline]
fn ceil_half(v: i64) -> i64 {
    v.div_euclid(2) + i64::from(v.rem_euclid(2) != 0)
}

#[inline]
fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Running log-domain sums for one target bit.
#[derive(Debug, Clone, Copy)]
struct BitAccumulator {
    log_num: f64,
    log_den: f64,
    log_sq: f64,
    plain: f64,
    count: usize,
}

impl Default for BitAccumulator {
    fn default() -> Self {
        Self { log_num: f64::NEG_INFINITY, log_den: f64::NEG_INFINITY, log_sq: f64::NEG_INFINITY, plain: 0.0, count: 0 }
    }
}

impl BitAccumulator {
    fn add(&mut self, p_one: f64, log_w: f64) {
        if p_one > 0.0 {
            self.log_num = log_add(self.log_num, log_w + p_one.ln());
        }
        self.log_den = log_add(self.log_den, log_w);
        self.log_sq = log_add(self.log_sq, 2.0 * log_w);
        self.plain += p_one;
        self.count += 1;
    }

    fn merge(&mut self, o: &Self) {
        self.log_num = log_add(self.log_num, o.log_num);
        self.log_den = log_add(self.log_den, o.log_den);
        self.log_sq = log_add(self.log_sq, o.log_sq);
        self.plain += o.plain;
        self.count += o.count;
    }

    /// Weighted estimate, or `None` when the weights are unusable.
    fn weighted(&self) -> Option<f64> {
        let p = (self.log_num - self.log_den).exp();
        (self.log_den.is_finite() && p.is_finite()).then(|| p.clamp(0.0, 1.0))
    }

    fn plain_estimate(&self) -> f64 {
        self.plain / self.count.max(1) as f64
    }

    fn ess(&self) -> f64 {
        if self.log_den.is_finite() {
            (2.0 * self.log_den - self.log_sq).exp()
        } else {
            0.0
        }
    }
}

struct SamplerRun {
    acc: Vec<BitAccumulator>,
    trace: Vec<f64>,
    mults: u64,
}

fn run_sampler(problem: &SamplingProblem<'_>, cfg: &GibbsConfig, seed: u64) -> SamplerRun {
    let mut rng = seed::stream(seed, &[]);
    let mut st = SamplerState::new(problem, &mut rng);
    let mut acc = vec![BitAccumulator::default(); problem.targets.len()];
    let mut slot = vec![usize::MAX; problem.bits.len()];
    for (i, &b) in problem.targets.iter().enumerate() {
        slot[b] = i;
    }
    let mut trace = Vec::with_capacity(cfg.burn_in + cfg.n_iter);
    for it in 0..cfg.burn_in + cfg.n_iter {
        if it < cfg.burn_in {
            st.sweep(cfg.eta, &mut rng, None);
        } else {
            let mut obs = |w: usize, p: f64, lw: f64| {
                if slot[w] != usize::MAX {
                    acc[slot[w]].add(p, lw);
                }
            };
            st.sweep(cfg.eta, &mut rng, Some(&mut obs));
        }
        trace.push(st.log_likelihood());
    }
    SamplerRun { acc, trace, mults: st.mults }
}

/// Bit APP estimates for the targets of one sampling problem.
#[derive(Debug, Clone, PartialEq)]
pub struct AppEstimate {
    /// Estimated P(target bit = 1 | y, context).
    pub p_one: Vec<f64>,
    /// Effective sample size of the pooled weights per target.
    pub ess: Vec<f64>,
    pub eta: f64,
    /// Weights were unusable and the plain average was used for some bits.
    pub fallback: bool,
    /// Potential scale reduction of the post-burn-in log-likelihood traces.
    pub rhat: f64,
    /// The samplers did not mix (see [`STALL_RHAT`]).
    pub stalled: bool,
    /// Likelihood multiplications over all samplers and sweeps.
    pub mults: u64,
    pub sweeps: usize,
    pub trace: Option<Vec<Vec<f64>>>,
}

/// Gelman-Rubin statistic of equally long chains.
pub fn potential_scale_reduction(chains: &[Vec<f64>]) -> f64 {
    let m = chains.len();
    let len = chains.first().map_or(0, |c| c.len());
    if m < 2 || len < 2 {
        return 1.0;
    }
    let nf = len as f64;
    let means: Vec<f64> = chains.iter().map(|c| c.iter().sum::<f64>() / nf).collect();
    let grand = means.iter().sum::<f64>() / m as f64;
    let between = nf / (m as f64 - 1.0) * means.iter().map(|x| (x - grand).powi(2)).sum::<f64>();
    let within = chains
        .iter()
        .zip(&means)
        .map(|(c, mu)| c.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / (nf - 1.0))
        .sum::<f64>()
        / m as f64;
    if within <= 0.0 {
        return if between > 0.0 { f64::INFINITY } else { 1.0 };
    }
    (((nf - 1.0) / nf * within + between / nf) / within).sqrt()
}

/// Runs `n_par` independent samplers and returns pooled APP estimates.
pub fn estimate_apps(problem: &SamplingProblem<'_>, cfg: &GibbsConfig, seed: u64) -> Result<AppEstimate> {
    cfg.validate()?;
    let runs: Vec<SamplerRun> = (0..cfg.n_par)
        .into_par_iter()
        .map(|p| run_sampler(problem, cfg, seed::derive_seed(seed, &[p as u64])))
        .collect();
    let targets = problem.targets.len();
    let mut fallback = false;
    let mut p_one = vec![0.0; targets];
    let mut ess = vec![0.0; targets];
    for t in 0..targets {
        let mut pooled = BitAccumulator::default();
        for r in &runs {
            pooled.merge(&r.acc[t]);
        }
        let est = if cfg.per_sampler_pooling {
            let parts: Vec<Option<f64>> = runs.iter().map(|r| r.acc[t].weighted()).collect();
            if parts.iter().all(Option::is_some) {
                Some(parts.iter().map(|p| p.unwrap()).sum::<f64>() / parts.len() as f64)
            } else {
                None
            }
        } else {
            pooled.weighted()
        };
        p_one[t] = est.unwrap_or_else(|| {
            fallback = true;
            pooled.plain_estimate()
        });
        ess[t] = pooled.ess();
    }
    if fallback {
        log::warn!("importance weights degenerate; plain estimate used for some bits");
    }
    let post: Vec<Vec<f64>> = runs.iter().map(|r| r.trace[cfg.burn_in..].to_vec()).collect();
    let rhat = potential_scale_reduction(&post);
    Ok(AppEstimate {
        p_one,
        ess,
        eta: cfg.eta,
        fallback,
        rhat,
        stalled: !(rhat <= STALL_RHAT),
        mults: runs.iter().map(|r| r.mults).sum(),
        sweeps: cfg.n_par * (cfg.burn_in + cfg.n_iter),
        trace: cfg.record_trace.then(|| runs.into_iter().map(|r| r.trace).collect()),
    })
}

/// Sampler health over the stage/level runs of a rate estimate.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GibbsDiagnostics {
    pub runs: usize,
    pub stalled_runs: usize,
    pub fallback_runs: usize,
    pub max_rhat: f64,
    pub mean_ess_fraction: f64,
    pub mults: u64,
}

impl GibbsDiagnostics {
    fn record(&mut self, est: &AppEstimate, samples_per_bit: usize) {
        let frac = if est.ess.is_empty() { 1.0 } else { est.ess.iter().sum::<f64>() / est.ess.len() as f64 / samples_per_bit as f64 };
        self.mean_ess_fraction = (self.mean_ess_fraction * self.runs as f64 + frac) / (self.runs + 1) as f64;
        self.runs += 1;
        self.stalled_runs += usize::from(est.stalled);
        self.fallback_runs += usize::from(est.fallback);
        self.max_rhat = self.max_rhat.max(est.rhat);
        self.mults += est.mults;
    }

    pub fn merge(&mut self, o: &Self) {
        let total = self.runs + o.runs;
        if total > 0 {
            self.mean_ess_fraction = (self.mean_ess_fraction * self.runs as f64 + o.mean_ess_fraction * o.runs as f64) / total as f64;
        }
        self.runs = total;
        self.stalled_runs += o.stalled_runs;
        self.fallback_runs += o.fallback_runs;
        self.max_rhat = self.max_rhat.max(o.max_rhat);
        self.mults += o.mults;
    }

    /// Fraction of runs flagged as stalled.
    pub fn stall_fraction(&self) -> f64 {
        if self.runs == 0 {
            0.0
        } else {
            self.stalled_runs as f64 / self.runs as f64
        }
    }
}

/// b-SIC contributions of one frame with Gibbs-estimated bit APPs, one
/// sampling run per (stage, level), conditioned on the true earlier data.
pub fn frame_contributions(
    aux: &AuxChannel,
    alphabet: &Alphabet,
    frame: &ObservationFrame,
    stages: usize,
    cfg: &GibbsConfig,
    seed: u64,
) -> Result<(FrameContributions, GibbsDiagnostics)> {
    let part = StagePartition::new(frame.n(), stages)?;
    let m = alphabet.bits();
    let mut out = FrameContributions::default();
    let mut diag = GibbsDiagnostics::default();
    for s in 0..stages {
        for l in 0..m {
            let problem = SamplingProblem::bsic(aux, alphabet, frame, &part, s, l, &frame.u)?;
            let est = estimate_apps(&problem, cfg, seed::derive_seed(seed, &[s as u64, l as u64]))?;
            diag.record(&est, cfg.n_par * cfg.n_iter);
            let key = RateKey { kind: RateKind::Bsic, stages, stage: Some(s), level: Some(l) };
            for (t, k) in part.stage_positions(s).enumerate() {
                let p1 = est.p_one[t];
                let p = if alphabet.bit(frame.u[k], l) == 1 { p1 } else { 1.0 - p1 };
                out.push_prob(key, 1.0, p);
            }
        }
    }
    finish_bit_levels(&mut out, RateKind::Bsic, stages, m, &part);
    Ok((out, diag))
}

/// Picks the confidence parameter with the largest b-SIC rate on training
/// frames; ties go to the smaller value.
pub fn tune_eta(
    aux: &AuxChannel,
    alphabet: &Alphabet,
    training: &[ObservationFrame],
    stages: usize,
    cfg: &GibbsConfig,
    grid: &[f64],
    seed: u64,
) -> Result<(f64, Vec<(f64, f64)>)> {
    if grid.is_empty() {
        return Err(Error::InvalidConfig("empty eta grid".into()));
    }
    if training.is_empty() {
        return Err(Error::InvalidConfig("no training frames for eta search".into()));
    }
    let mut grid = grid.to_vec();
    grid.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut scores = Vec::new();
    for &eta in &grid {
        let c = GibbsConfig { eta, ..cfg.clone() };
        let mut contribs = Vec::new();
        for (f, frame) in training.iter().enumerate() {
            contribs.push(frame_contributions(aux, alphabet, frame, stages, &c, seed::derive_seed(seed, &[f as u64]))?.0);
        }
        let est = crate::rates::aggregate(&contribs, training[0].snr_db, training[0].n());
        let rate = crate::rates::find(&est, RateKey::overall(RateKind::Bsic, stages)).map_or(0.0, |e| e.rate_bpcu);
        scores.push((eta, rate));
    }
    let mut best = scores[0];
    for &(eta, r) in &scores[1..] {
        if r > best.1 + 1e-12 {
            best = (eta, r);
        }
    }
    Ok((best.0, scores))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fba::{ConditioningMask, Trellis};
    use crate::link::{Link, LinkConfig, Termination};
    use crate::modem::{build_alphabet, AlphabetKind};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn frame(kind: AlphabetKind, m: usize, n: usize, kp: usize, length_km: f64, snr: f64, seed: u64) -> (Alphabet, AuxChannel, ObservationFrame) {
        let a = build_alphabet(kind, m).unwrap();
        let link = Link::new(LinkConfig { alpha: 0.0, length_km, taps_half: kp.max(1), ..LinkConfig::default() }).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let term = Termination::random(&a, kp.max(1), kp.max(1), &mut rng);
        let u: Vec<usize> = (0..n).map(|_| rng.gen_range(0..m)).collect();
        let f = link.simulate(&a, &u, &term, snr, true, &mut rng).unwrap();
        let aux = AuxChannel::from_taps(&link.taps, kp).unwrap().with_moments([0.0; 2], [1.0 / 10f64.powf(snr / 10.0); 2]).unwrap();
        (a, aux, f)
    }

    fn fba_bit_apps(aux: &AuxChannel, a: &Alphabet, f: &ObservationFrame, level: usize) -> Vec<f64> {
        let t = Trellis::for_frame(aux, a, f).unwrap();
        let app = t.run(f, &ConditioningMask::free(a, f.n()), &Default::default()).unwrap();
        (0..f.n()).map(|k| app.bit_pmf(a, k, level, a.full_mask())[1]).collect()
    }

    #[test]
    fn cache_matches_recomputation_after_sweeps() {
        for kind in [AlphabetKind::Ask, AlphabetKind::Sqam, AlphabetKind::Pam] {
            let (a, aux, f) = frame(kind, 4, 24, 3, 30.0, 2.0, 1);
            let part = StagePartition::new(24, 2).unwrap();
            let p = SamplingProblem::bsic(&aux, &a, &f, &part, 0, 0, &f.u).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(2);
            let mut st = SamplerState::new(&p, &mut rng);
            for _ in 0..20 {
                st.sweep(1.5, &mut rng, None);
            }
            assert!(st.audit() < 1e-9, "{kind:?}: {}", st.audit());
            let total = st.log_likelihood();
            st.refresh();
            assert!((total - st.log_likelihood()).abs() < 1e-6 * total.abs().max(1.0));
        }
    }

    #[test]
    fn cache_holds_with_fixed_nonzero_tail() {
        let a = build_alphabet(AlphabetKind::Ask, 4).unwrap();
        let link = Link::new(LinkConfig { alpha: 0.0, length_km: 30.0, taps_half: 3, ..LinkConfig::default() }).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut term = Termination::random(&a, 3, 3, &mut rng);
        term.tail = Tail::KnownSymbols(vec![Complex64::new(1.0, 0.0); 3]);
        let u: Vec<usize> = (0..12).map(|_| rng.gen_range(0..4)).collect();
        let f = link.simulate(&a, &u, &term, 3.0, true, &mut rng).unwrap();
        let aux = AuxChannel::from_taps(&link.taps, 3).unwrap();
        let p = SamplingProblem::new(&aux, &a, &f, vec![0; 12], &f.u, &[0], 0).unwrap();
        let mut st = SamplerState::new(&p, &mut rng);
        for _ in 0..30 {
            st.sweep(1.0, &mut rng, None);
        }
        assert!(st.audit() < 1e-9);
    }

    #[test]
    fn flip_touches_at_most_two_k_plus_two_outputs() {
        let (a, aux, f) = frame(AlphabetKind::Ask, 4, 16, 4, 30.0, 2.0, 4);
        let p = SamplingProblem::new(&aux, &a, &f, vec![0; 16], &f.u, &[0], 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let st = SamplerState::new(&p, &mut rng);
        for k in 0..16 {
            for rotated in [false, true] {
                let touched: i64 = st.windows(k, rotated).iter().map(|(lo, hi)| (hi - lo + 1).max(0)).sum();
                assert!(touched <= 2 * (4 + 1));
            }
        }
    }

    #[test]
    fn infinite_temperature_flips_half_the_time() {
        let (a, aux, f) = frame(AlphabetKind::Ask, 2, 1, 1, 0.0, 10.0, 6);
        let p = SamplingProblem::new(&aux, &a, &f, vec![0], &f.u, &[0], 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut st = SamplerState::new(&p, &mut rng);
        let mut flips = 0;
        let mut prev = st.labels()[0];
        for _ in 0..1000 {
            st.sweep(1e12, &mut rng, None);
            flips += usize::from(st.labels()[0] != prev);
            prev = st.labels()[0];
        }
        assert!((flips as f64 / 1000.0 - 0.5).abs() < 0.05, "{flips}");
    }

    #[test]
    fn single_bit_chain_matches_exact_posterior() {
        let (a, aux, f) = frame(AlphabetKind::Pam, 2, 1, 1, 0.0, 0.0, 8);
        let exact = fba_bit_apps(&aux, &a, &f, 0)[0];
        let p = SamplingProblem::new(&aux, &a, &f, vec![0], &f.u, &[0], 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut st = SamplerState::new(&p, &mut rng);
        let sweeps = 10_000;
        let mut ones = 0;
        for _ in 0..sweeps {
            st.sweep(1.0, &mut rng, None);
            ones += usize::from(a.bit(a.from_label(st.labels()[0]), 0) == 1);
        }
        let sigma = (exact * (1.0 - exact) / sweeps as f64).sqrt();
        assert!((ones as f64 / sweeps as f64 - exact).abs() < 3.0 * sigma + 1e-9, "{ones} vs {exact}");
    }

    #[test]
    fn stationary_distribution_passes_chi_square() {
        use statrs::distribution::{ChiSquared, ContinuousCDF};
        let (a, aux, f) = frame(AlphabetKind::Ask, 2, 4, 2, 30.0, 0.0, 10);
        // Exact posterior of the four data symbols from pinned evidences.
        let t = Trellis::for_frame(&aux, &a, &f).unwrap();
        let mut post = vec![0.0; 16];
        for (idx, p) in post.iter_mut().enumerate() {
            let u: Vec<usize> = (0..4).map(|k| idx >> k & 1).collect();
            *p = t.log_evidence(&f, &ConditioningMask::pinned(&a, &u)).unwrap();
        }
        let mx = post.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        post.iter_mut().for_each(|v| *v = (*v - mx).exp());
        let s: f64 = post.iter().sum();
        post.iter_mut().for_each(|v| *v /= s);
        let p = SamplingProblem::new(&aux, &a, &f, vec![0; 4], &f.u, &[0], 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut st = SamplerState::new(&p, &mut rng);
        let sweeps = 100_000;
        let mut counts = [0usize; 16];
        for _ in 0..sweeps {
            st.sweep(1.0, &mut rng, None);
            let idx: usize = (0..4).map(|k| a.from_label(st.labels()[k]) << k).sum();
            counts[idx] += 1;
        }
        let mut chi2 = 0.0;
        let mut dof = 0;
        for (c, p) in counts.iter().zip(&post) {
            let e = p * sweeps as f64;
            if e >= 5.0 {
                chi2 += (*c as f64 - e).powi(2) / e;
                dof += 1;
            }
        }
        let pval = 1.0 - ChiSquared::new((dof - 1) as f64).unwrap().cdf(chi2);
        assert!(pval > 1e-3, "chi2 {chi2} dof {dof} p {pval}");
    }

    #[test]
    fn low_snr_apps_track_fba() {
        let (a, aux, f) = frame(AlphabetKind::Ask, 2, 8, 2, 30.0, 0.0, 12);
        let exact = fba_bit_apps(&aux, &a, &f, 0);
        let all: Vec<usize> = (0..8).collect();
        let p = SamplingProblem::new(&aux, &a, &f, vec![0; 8], &f.u, &all, 0).unwrap();
        let cfg = GibbsConfig { n_iter: 500, ..GibbsConfig::default() };
        let est = estimate_apps(&p, &cfg, 13).unwrap();
        for (g, e) in est.p_one.iter().zip(&exact) {
            assert!((g - e).abs() < 0.05, "{g} vs {e}");
        }
    }

    #[test]
    fn tempered_estimate_stays_consistent() {
        let (a, aux, f) = frame(AlphabetKind::Ask, 4, 8, 2, 30.0, 4.0, 14);
        let exact = fba_bit_apps(&aux, &a, &f, 0);
        let all: Vec<usize> = (0..8).collect();
        let p = SamplingProblem::new(&aux, &a, &f, vec![0; 8], &f.u, &all, 0).unwrap();
        let cfg = GibbsConfig { n_iter: 500, eta: 2.0, ..GibbsConfig::default() };
        let est = estimate_apps(&p, &cfg, 15).unwrap();
        for (g, e) in est.p_one.iter().zip(&exact) {
            assert!((g - e).abs() < 0.05, "{g} vs {e}");
        }
        assert!(est.ess.iter().all(|&e| e > 1.0));
    }

    #[test]
    fn memoryless_channel_gives_closed_form_posterior() {
        let (a, aux, f) = frame(AlphabetKind::Pam, 4, 6, 0, 0.0, 3.0, 16);
        let all: Vec<usize> = (0..6).collect();
        let p = SamplingProblem::new(&aux, &a, &f, vec![0; 6], &f.u, &all, 1).unwrap();
        let est = estimate_apps(&p, &GibbsConfig::default(), 17).unwrap();
        // Closed form: each symbol only affects its own even sample.
        let tap = aux.taps().taps[0];
        for k in 0..6 {
            let r = 2 * (k as i64 + 1);
            let y = f.sample(r + aux.offset()).unwrap();
            let w: Vec<f64> = (0..4)
                .map(|u| (aux.log_density(r + aux.offset(), y, (tap * a.point(u) * f.amp).norm_sqr())).exp())
                .collect();
            let p1: f64 = (0..4).filter(|&u| a.bit(u, 1) == 1).map(|u| w[u]).sum::<f64>() / w.iter().sum::<f64>();
            assert!((est.p_one[k] - p1).abs() < 0.03, "{} vs {p1}", est.p_one[k]);
        }
    }

    #[test]
    fn sweep_cost_grows_quadratically_in_memory() {
        let mut per_bit = Vec::new();
        for kp in [2usize, 4, 8] {
            let (a, aux, f) = frame(AlphabetKind::Ask, 4, 64, kp, 30.0, 4.0, 18);
            let p = SamplingProblem::new(&aux, &a, &f, vec![0; 64], &f.u, &[0], 0).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(19);
            let mut st = SamplerState::new(&p, &mut rng);
            st.sweep(1.0, &mut rng, None);
            per_bit.push(st.mults as f64 / p.undecided() as f64);
        }
        let r1 = per_bit[1] / per_bit[0];
        let r2 = per_bit[2] / per_bit[1];
        assert!((r1 - 3.0).abs() < 0.3 && (r2 - 3.4).abs() < 0.3, "{r1} {r2}");
    }

    #[test]
    fn eta_grid_of_one_returns_one() {
        let (a, aux, f) = frame(AlphabetKind::Ask, 2, 8, 2, 30.0, 2.0, 20);
        let cfg = GibbsConfig { n_iter: 5, n_par: 2, burn_in: 1, ..GibbsConfig::default() };
        let (eta, _) = tune_eta(&aux, &a, &[f], 2, &cfg, &[1.0], 21).unwrap();
        assert_eq!(eta, 1.0);
        assert!(tune_eta(&aux, &a, &[], 2, &cfg, &[1.0], 21).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(GibbsConfig { eta: 0.5, ..GibbsConfig::default() }.validate().is_err());
        assert!(GibbsConfig { n_par: 0, ..GibbsConfig::default() }.validate().is_err());
        assert!(GibbsConfig::default().validate().is_ok());
    }

    #[test]
    fn rhat_flags_separated_chains() {
        let mixed: Vec<Vec<f64>> = (0..4).map(|c| (0..50).map(|i| ((i * 37 + c * 11) % 17) as f64).collect()).collect();
        assert!(potential_scale_reduction(&mixed) < 1.1);
        let stuck: Vec<Vec<f64>> = (0..4).map(|c| (0..50).map(|i| c as f64 * 100.0 + (i % 3) as f64).collect()).collect();
        assert!(potential_scale_reduction(&stuck) > 2.0);
    }
}
