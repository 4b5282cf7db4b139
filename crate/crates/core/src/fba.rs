//! Forward-backward detection on the auxiliary-channel trellis.
//!
//! The trellis state is the last D transmit digits (D = max(K̃', 1)),
//! newest digit least significant. Digits are the alphabet points plus any
//! non-alphabet values used by the frame termination (such as zero). A
//! trellis step consumes the pair of auxiliary samples owned by one symbol
//! position. Data positions carry a mask of admissible data symbols, which
//! is how stage and bit-plane conditioning enters.
//!
//! All arithmetic is in the log domain with per-state max shifts. The
//! forward messages are checkpointed when the full trajectory does not fit
//! in the memory budget and recomputed segment-wise during the backward pass.

use num_complex::Complex64;

use crate::auxmodel::AuxChannel;
use crate::error::{Error, Result};
use crate::link::{encode_payload, ObservationFrame, Tail};
use crate::modem::Alphabet;
use crate::numeric::{fast_exp, fast_ln};

/// Largest trellis state count accepted.
pub const MAX_STATES: usize = 1 << 24;
/// Largest branch-metric table accepted.
pub const MAX_WINDOWS: usize = 1 << 26;
/// Largest enumeration accepted by [`brute_force_app`].
pub const MAX_ENUMERATION: u64 = 1 << 20;

const NONE: usize = usize::MAX;
const BLOCK: usize = 64;

/// Admissible data symbols per position, as bitmasks over alphabet indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConditioningMask {
    allowed: Vec<u32>,
    full: u32,
}

impl ConditioningMask {
    /// Every position free.
    pub fn free(alphabet: &Alphabet, n: usize) -> Self {
        let full = alphabet.full_mask();
        Self { allowed: vec![full; n], full }
    }

    /// Every position pinned to the given data symbols.
    pub fn pinned(alphabet: &Alphabet, u: &[usize]) -> Self {
        let mut m = Self::free(alphabet, u.len());
        for (k, &v) in u.iter().enumerate() {
            m.pin(k, v);
        }
        m
    }

    pub fn len(&self) -> usize {
        self.allowed.len()
    }

    pub fn is_empty(&self) -> bool {
        self.allowed.is_empty()
    }

    /// Bitmask of admissible symbols at 0-based position `pos`.
    pub fn allowed(&self, pos: usize) -> u32 {
        self.allowed[pos]
    }

    pub fn is_free(&self, pos: usize) -> bool {
        self.allowed[pos] == self.full
    }

    pub fn pin(&mut self, pos: usize, u: usize) {
        self.allowed[pos] = 1 << u;
    }

    /// Intersects position `pos` with `mask`.
    pub fn restrict(&mut self, pos: usize, mask: u32) {
        self.allowed[pos] &= mask;
    }

    /// Keeps only symbols whose label starts with the `levels`-bit `prefix`.
    pub fn restrict_prefix(&mut self, alphabet: &Alphabet, pos: usize, prefix: usize, levels: usize) {
        self.restrict(pos, alphabet.prefix_mask(prefix, levels));
    }

    /// Fails when some position admits no symbol.
    pub fn check(&self) -> Result<()> {
        match self.allowed.iter().position(|&a| a == 0) {
            Some(p) => Err(Error::InconsistentContext(format!("position {} admits no symbol", p + 1))),
            None => Ok(()),
        }
    }

    /// log P(mask) under uniform i.i.d. data, relative to the free mask.
    pub fn log_probability(&self) -> f64 {
        let m = self.full.count_ones() as f64;
        self.allowed.iter().map(|a| (a.count_ones() as f64 / m).ln()).sum()
    }
}

/// Symbol-wise posteriors and the log-evidence of one detector run.
#[derive(Debug, Clone, PartialEq)]
pub struct AppTable {
    /// `pmfs[k][u]` = P(u_{k+1} = u | y, conditioning).
    pub pmfs: Vec<Vec<f64>>,
    /// ln q(y | conditioning) from the forward recursion.
    pub log_evidence: f64,
    /// The same quantity from the backward recursion, when it ran.
    pub backward_log_evidence: Option<f64>,
}

impl AppTable {
    pub fn prob(&self, pos: usize, u: usize) -> f64 {
        self.pmfs[pos][u]
    }

    /// Posterior at `pos` restricted to `mask` and renormalized. Falls back to
    /// uniform over the mask when the restricted mass underflows.
    pub fn restricted(&self, pos: usize, mask: u32) -> Vec<f64> {
        let p = &self.pmfs[pos];
        let mut out: Vec<f64> = p.iter().enumerate().map(|(u, &v)| if mask >> u & 1 == 1 { v } else { 0.0 }).collect();
        let total: f64 = out.iter().sum();
        if total > 0.0 {
            out.iter_mut().for_each(|v| *v /= total);
        } else {
            let c = mask.count_ones() as f64;
            for (u, v) in out.iter_mut().enumerate() {
                *v = if mask >> u & 1 == 1 { 1.0 / c } else { 0.0 };
            }
        }
        out
    }

    /// Distribution of bit `level` at `pos` after restricting to `mask`.
    pub fn bit_pmf(&self, alphabet: &Alphabet, pos: usize, level: usize, mask: u32) -> [f64; 2] {
        let p = self.restricted(pos, mask);
        let mut out = [0.0; 2];
        for (u, v) in p.iter().enumerate() {
            out[alphabet.bit(u, level) as usize] += v;
        }
        out
    }
}

/// Run-time knobs of the detector.
#[derive(Debug, Clone, PartialEq)]
pub struct FbaOptions {
    /// Only compute the log-evidence.
    pub forward_only: bool,
    /// Disable the dense kernels (testing aid).
    pub force_sparse: bool,
    /// Bytes of forward messages kept before switching to checkpoints.
    pub memory_budget: usize,
    /// Hard limit on the estimated working memory in bytes.
    pub memory_limit: usize,
}

impl Default for FbaOptions {
    fn default() -> Self {
        Self { forward_only: false, force_sparse: false, memory_budget: 512 << 20, memory_limit: 4 << 30 }
    }
}

#[derive(Debug, Clone, Copy)]
enum StepRule {
    /// Data position with prior mass spread over the mask.
    Data(u32),
    /// Known data symbol (tail), no prior cost.
    KnownData(usize),
    /// Known transmit digit.
    Digit(usize),
}

/// Per-step observation terms.
#[derive(Debug, Clone, Copy)]
struct StepObs {
    y1: f64,
    inv1: f64,
    y2: f64,
    inv2: f64,
    constant: f64,
}

#[derive(Debug, Clone)]
enum Stored {
    Dense(Vec<f64>),
    Sparse(Vec<u32>, Vec<f64>),
}

impl Stored {
    fn bytes(&self) -> usize {
        match self {
            Stored::Dense(v) => 8 * v.len(),
            Stored::Sparse(a, v) => 4 * a.len() + 8 * v.len(),
        }
    }
}

/// Log-domain message over trellis states: dense values plus the active set.
#[derive(Debug, Clone)]
struct StateVec {
    vals: Vec<f64>,
    active: Vec<u32>,
    all: bool,
}

impl StateVec {
    fn new(states: usize) -> Self {
        Self { vals: vec![f64::NEG_INFINITY; states], active: Vec::new(), all: false }
    }

    fn clear(&mut self) {
        if self.all {
            self.vals.fill(f64::NEG_INFINITY);
        } else {
            for &s in &self.active {
                self.vals[s as usize] = f64::NEG_INFINITY;
            }
        }
        self.active.clear();
        self.all = false;
    }

    #[inline]
    fn visit<F: FnMut(usize)>(&self, mut f: F) {
        if self.all {
            (0..self.vals.len()).for_each(f);
        } else {
            for &s in &self.active {
                f(s as usize);
            }
        }
    }

    fn promote(&mut self) {
        if !self.all && self.active.len() == self.vals.len() {
            self.all = true;
            self.active.clear();
        }
    }

    /// Subtracts the maximum over active states and returns it.
    fn normalize(&mut self) -> f64 {
        let mut mx = f64::NEG_INFINITY;
        self.visit(|s| mx = mx.max(self.vals[s]));
        if mx.is_finite() {
            if self.all {
                self.vals.iter_mut().for_each(|v| *v -= mx);
            } else {
                for &s in &self.active {
                    self.vals[s as usize] -= mx;
                }
            }
        }
        mx
    }

    fn store(&self) -> Stored {
        if self.all {
            Stored::Dense(self.vals.clone())
        } else {
            Stored::Sparse(self.active.clone(), self.active.iter().map(|&s| self.vals[s as usize]).collect())
        }
    }

    fn load(&mut self, st: &Stored) {
        self.clear();
        match st {
            Stored::Dense(v) => {
                self.vals.copy_from_slice(v);
                self.all = true;
            }
            Stored::Sparse(a, v) => {
                for (&s, &x) in a.iter().zip(v) {
                    self.vals[s as usize] = x;
                }
                self.active.extend_from_slice(a);
            }
        }
    }
}

/// Branch tables for one auxiliary channel, alphabet, digit set and amplitude.
#[derive(Debug, Clone)]
pub struct Trellis {
    alphabet: Alphabet,
    aux: AuxChannel,
    amp: f64,
    digits: Vec<Complex64>,
    ref_phase: usize,
    m: usize,
    md: usize,
    depth: usize,
    states: usize,
    windows: usize,
    /// Intensity of the first sample of a step, per state.
    z_first: Vec<f64>,
    /// Intensity of the second sample of a step, per window.
    z_second: Vec<f64>,
    /// `trans[prev * m + u]`: next digit for data symbol u.
    trans: Vec<usize>,
    /// `ulab[prev * md + x]`: data symbol of the transition, or NONE.
    ulab: Vec<usize>,
}

fn checked_pow(base: usize, exp: usize, limit: usize, what: &str) -> Result<usize> {
    let mut v: usize = 1;
    for _ in 0..exp {
        v = v.checked_mul(base).filter(|&x| x <= limit).ok_or_else(|| {
            Error::StateBudget(format!(
                "{what} {base}^{exp} exceeds the budget of {limit}; use the Gibbs detector for this memory"
            ))
        })?;
    }
    Ok(v)
}

impl Trellis {
    /// Builds the trellis for symbols scaled by `amp`. `extras` are the
    /// non-alphabet transmit values that may appear in the termination;
    /// they carry the phase reference `ref_phase`.
    pub fn new(aux: &AuxChannel, alphabet: &Alphabet, amp: f64, extras: &[Complex64], ref_phase: usize) -> Result<Self> {
        let m = alphabet.len();
        let mut digits: Vec<Complex64> = alphabet.points().to_vec();
        for &e in extras {
            if alphabet.index_of(e).is_none() && !digits.iter().any(|d| (d - e).norm() < 1e-9) {
                digits.push(e);
            }
        }
        let md = digits.len();
        let kp = aux.ktilde();
        let depth = kp.max(1);
        let states = checked_pow(md, depth, MAX_STATES, "state count")?;
        let windows = checked_pow(md, depth + 1, MAX_WINDOWS, "window count")?;
        let phase = |d: usize| if d < m { alphabet.phase_of(d) } else { ref_phase };
        let mut trans = vec![0; md * m];
        let mut ulab = vec![NONE; md * md];
        for prev in 0..md {
            for u in 0..m {
                let x = alphabet.diff_step(phase(prev), u);
                trans[prev * m + u] = x;
                ulab[prev * md + x] = u;
            }
        }
        let taps = &aux.taps().taps;
        let scaled: Vec<Complex64> = digits.iter().map(|d| d * amp).collect();
        // Field contributions are additive per digit age, so the tables grow
        // one digit at a time.
        let grow = |coef: &dyn Fn(usize) -> Complex64, ages: usize, len: usize| -> Vec<f64> {
            let mut field = vec![Complex64::new(0.0, 0.0)];
            for age in 0..ages {
                let c = coef(age);
                let prev = field;
                field = Vec::with_capacity(prev.len() * md);
                for d in &scaled {
                    let add = c * d;
                    field.extend(prev.iter().map(|f| f + add));
                }
            }
            let base: Vec<f64> = field.iter().map(|f| f.norm_sqr()).collect();
            (0..len).map(|i| base[i % base.len()]).collect()
        };
        let z_second = grow(&|age| taps[2 * age], kp + 1, windows);
        let z_first = grow(&|age| taps[2 * age + 1], kp, states);
        Ok(Self {
            alphabet: alphabet.clone(),
            aux: aux.clone(),
            amp,
            digits,
            ref_phase,
            m,
            md,
            depth,
            states,
            windows,
            z_first,
            z_second,
            trans,
            ulab,
        })
    }

    /// Trellis matching a frame's amplitude and termination values.
    pub fn for_frame(aux: &AuxChannel, alphabet: &Alphabet, frame: &ObservationFrame) -> Result<Self> {
        let mut extras: Vec<Complex64> = frame.termination.head.clone();
        if let Tail::KnownSymbols(v) = &frame.termination.tail {
            extras.extend_from_slice(v);
        }
        Self::new(aux, alphabet, frame.amp, &extras, frame.termination.ref_phase)
    }

    pub fn states(&self) -> usize {
        self.states
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn aux(&self) -> &AuxChannel {
        &self.aux
    }

    /// Trellis digit of a transmit value in alphabet units.
    fn digit_of(&self, v: Complex64) -> Result<usize> {
        self.digits
            .iter()
            .position(|d| (d - v).norm() < 1e-9)
            .ok_or_else(|| Error::InvalidConfig(format!("termination value {v} is not a trellis digit")))
    }

    /// Allowed digits per previous digit, flattened with stride `m`.
    fn allowed_digits(&self, rule: StepRule, out: &mut Vec<usize>, counts: &mut Vec<usize>) {
        out.clear();
        counts.clear();
        for prev in 0..self.md {
            let start = out.len();
            match rule {
                StepRule::Data(mask) => {
                    for u in 0..self.m {
                        if mask >> u & 1 == 1 {
                            out.push(self.trans[prev * self.m + u]);
                        }
                    }
                }
                StepRule::KnownData(u) => out.push(self.trans[prev * self.m + u]),
                StepRule::Digit(d) => out.push(d),
            }
            out.resize(start + self.m, NONE);
            counts.push(match rule {
                StepRule::Data(mask) => mask.count_ones() as usize,
                _ => 1,
            });
        }
    }

    fn is_full(&self, rule: StepRule) -> bool {
        matches!(rule, StepRule::Data(mask) if self.md == self.m && mask.count_ones() as usize == self.m)
    }

    /// Runs the detector on `frame` with data conditioning `mask`.
    pub fn run(&self, frame: &ObservationFrame, mask: &ConditioningMask, opts: &FbaOptions) -> Result<AppTable> {
        Run::new(self, frame, mask, opts)?.execute()
    }

    /// ln q(y | mask) from the forward recursion alone.
    pub fn log_evidence(&self, frame: &ObservationFrame, mask: &ConditioningMask) -> Result<f64> {
        let opts = FbaOptions { forward_only: true, ..FbaOptions::default() };
        Ok(self.run(frame, mask, &opts)?.log_evidence)
    }
}

/// Convenience wrapper: builds the trellis and runs it once.
pub fn run_fba(aux: &AuxChannel, alphabet: &Alphabet, frame: &ObservationFrame, mask: &ConditioningMask) -> Result<AppTable> {
    Trellis::for_frame(aux, alphabet, frame)?.run(frame, mask, &FbaOptions::default())
}

#[inline]
fn metric_first(t: &Trellis, o: &StepObs, s: usize) -> f64 {
    let e = o.y1 - t.z_first[s];
    -e * e * o.inv1
}

#[inline]
fn metric_second(t: &Trellis, o: &StepObs, w: usize) -> f64 {
    let e = o.y2 - t.z_second[w];
    -e * e * o.inv2
}

/// Dense forward kernel: for every next state, log-sum over the MD
/// possible oldest digits of `atil[predecessor] + second-sample metric`.
fn forward_dense<const MD: usize>(atil: &[f64], z2: &[f64], o: &StepObs, out: &mut [f64]) {
    let states = out.len();
    let top = states / MD;
    let blk = BLOCK.min(top);
    let mut terms = [[0.0f64; BLOCK]; MD];
    for start in (0..states).step_by(blk) {
        for (od, row) in terms.iter_mut().enumerate() {
            let arow = &atil[od * top + start / MD..][..blk / MD];
            let zrow = &z2[od * states + start..][..blk];
            for (j, &av) in arow.iter().enumerate() {
                let zs: &[f64; MD] = zrow[j * MD..(j + 1) * MD].try_into().expect("block");
                let rs: &mut [f64; MD] = (&mut row[j * MD..(j + 1) * MD]).try_into().expect("block");
                for a in 0..MD {
                    let e = o.y2 - zs[a];
                    rs[a] = av - e * e * o.inv2;
                }
            }
        }
        let mut mx = [f64::NEG_INFINITY; BLOCK];
        for row in &terms {
            for i in 0..blk {
                if row[i] > mx[i] {
                    mx[i] = row[i];
                }
            }
        }
        let mut acc = [0.0f64; BLOCK];
        for row in &terms {
            for i in 0..blk {
                acc[i] += fast_exp(row[i] - mx[i]);
            }
        }
        let dst = &mut out[start..start + blk];
        for i in 0..blk {
            dst[i] = mx[i] + fast_ln(acc[i]) + o.constant;
        }
    }
}

/// Dense backward kernel: for every state, log-sum over the MD newest
/// digits of `beta[successor] + second-sample metric`. The first-sample
/// metric and the step constant are added by the caller.
fn backward_dense<const MD: usize>(beta: &[f64], z2: &[f64], o: &StepObs, out: &mut [f64]) {
    let states = out.len();
    let top = states / MD;
    let blk = BLOCK.min(top);
    let mut terms = [[0.0f64; BLOCK]; MD];
    for start in (0..states).step_by(blk) {
        let zz = &z2[start * MD..][..blk * MD];
        let bb = &beta[(start % top) * MD..][..blk * MD];
        for (a, row) in terms.iter_mut().enumerate() {
            for i in 0..blk {
                let e = o.y2 - zz[i * MD + a];
                row[i] = bb[i * MD + a] - e * e * o.inv2;
            }
        }
        let mut mx = [f64::NEG_INFINITY; BLOCK];
        for row in &terms {
            for i in 0..blk {
                if row[i] > mx[i] {
                    mx[i] = row[i];
                }
            }
        }
        let mut acc = [0.0f64; BLOCK];
        for row in &terms {
            for i in 0..blk {
                acc[i] += fast_exp(row[i] - mx[i]);
            }
        }
        let dst = &mut out[start..start + blk];
        for i in 0..blk {
            dst[i] = mx[i] + fast_ln(acc[i]);
        }
    }
}

struct Run<'a> {
    t: &'a Trellis,
    opts: &'a FbaOptions,
    n: usize,
    steps: usize,
    rules: Vec<StepRule>,
    obs: Vec<StepObs>,
    init: usize,
    allowed: Vec<usize>,
    counts: Vec<usize>,
    acc: Vec<f64>,
    buf: Vec<(u32, f64)>,
}

impl<'a> Run<'a> {
    fn new(t: &'a Trellis, frame: &ObservationFrame, mask: &ConditioningMask, opts: &'a FbaOptions) -> Result<Self> {
        let n = frame.n();
        if mask.len() != n {
            return Err(Error::LengthMismatch(format!("mask covers {} positions, frame has {n}", mask.len())));
        }
        mask.check()?;
        if (frame.amp - t.amp).abs() > 1e-12 * t.amp.abs().max(1e-300) {
            return Err(Error::InvalidConfig("frame amplitude differs from the trellis amplitude".into()));
        }
        let kp = t.aux.ktilde();
        let (head, tail) = (&frame.termination.head, &frame.termination.tail);
        if head.len() < t.depth || tail.len() < kp {
            return Err(Error::LengthMismatch(format!(
                "termination needs {} head and {kp} tail symbols",
                t.depth
            )));
        }
        if t.md > t.m && frame.termination.ref_phase != t.ref_phase {
            return Err(Error::InvalidConfig("frame phase reference differs from the trellis".into()));
        }
        let mut init = 0usize;
        for age in (0..t.depth).rev() {
            init = init * t.md + t.digit_of(head[head.len() - 1 - age])?;
        }
        let last = init % t.md;
        if t.alphabet.is_differential() && last < t.m && t.alphabet.phase_of(last) != frame.termination.ref_phase {
            return Err(Error::InconsistentContext("last head symbol contradicts the phase reference".into()));
        }
        let steps = n + kp;
        let mut rules = Vec::with_capacity(steps);
        for p in 1..=steps {
            rules.push(if p <= n {
                StepRule::Data(mask.allowed(p - 1))
            } else {
                match tail {
                    Tail::KnownData(u) => StepRule::KnownData(u[p - n - 1]),
                    Tail::KnownSymbols(v) => StepRule::Digit(t.digit_of(v[p - n - 1])?),
                }
            });
        }
        let off = t.aux.offset();
        let mut obs = Vec::with_capacity(steps);
        for (k, rule) in rules.iter().enumerate() {
            let p = k as i64 + 1;
            let r1 = 2 * p - 1 - kp as i64 + off;
            let r2 = r1 + 1;
            let get = |r: i64| {
                frame.sample(r).ok_or_else(|| Error::LengthMismatch(format!("frame has no received sample at index {r}")))
            };
            let (k1, k2) = (r1.rem_euclid(2) as usize, r2.rem_euclid(2) as usize);
            let (v1, v2) = (t.aux.var[k1], t.aux.var[k2]);
            let prior = match rule {
                StepRule::Data(mask) => -(mask.count_ones() as f64).ln(),
                _ => 0.0,
            };
            obs.push(StepObs {
                y1: get(r1)? - t.aux.mean[k1],
                inv1: 0.5 / v1,
                y2: get(r2)? - t.aux.mean[k2],
                inv2: 0.5 / v2,
                constant: -0.5 * (2.0 * std::f64::consts::PI * v1).ln()
                    - 0.5 * (2.0 * std::f64::consts::PI * v2).ln()
                    + prior,
            });
        }
        let checkpoint = (steps as f64).sqrt().ceil().max(1.0) as usize;
        let estimate = (checkpoint + steps / checkpoint + 8) * t.states * 8 + t.windows * 16;
        if estimate > opts.memory_limit {
            return Err(Error::StateBudget(format!(
                "detector needs about {} MiB, limit is {} MiB",
                estimate >> 20,
                opts.memory_limit >> 20
            )));
        }
        Ok(Self {
            t,
            opts,
            n,
            steps,
            rules,
            obs,
            init,
            allowed: Vec::new(),
            counts: Vec::new(),
            acc: vec![0.0; t.states],
            buf: Vec::new(),
        })
    }

    /// One forward step from `prev` (message at p-1) into `next`.
    fn forward_step(&mut self, p: usize, prev: &StateVec, next: &mut StateVec) {
        let tr = self.t;
        let rule = self.rules[p - 1];
        let o = self.obs[p - 1];
        next.clear();
        let (md, states) = (self.t.md, self.t.states);
        if !self.opts.force_sparse && prev.all && tr.depth >= 2 && tr.is_full(rule) {
            let mut atil = std::mem::take(&mut self.acc);
            for s in 0..states {
                atil[s] = prev.vals[s] + metric_first(tr, &o, s);
            }
            let z2 = &tr.z_second;
            match md {
                2 => forward_dense::<2>(&atil, z2, &o, &mut next.vals),
                4 => forward_dense::<4>(&atil, z2, &o, &mut next.vals),
                8 => forward_dense::<8>(&atil, z2, &o, &mut next.vals),
                16 => forward_dense::<16>(&atil, z2, &o, &mut next.vals),
                32 => forward_dense::<32>(&atil, z2, &o, &mut next.vals),
                _ => unreachable!("alphabet sizes are powers of two up to 32"),
            }
            atil.fill(0.0);
            self.acc = atil;
            next.all = true;
            return;
        }
        self.t.allowed_digits(rule, &mut self.allowed, &mut self.counts);
        let m = self.t.m;
        let mut buf = std::mem::take(&mut self.buf);
        buf.clear();
        prev.visit(|s| {
            let base = prev.vals[s] + metric_first(tr, &o, s);
            if base == f64::NEG_INFINITY {
                return;
            }
            let pd = s % md;
            for &a in &self.allowed[pd * m..pd * m + self.counts[pd]] {
                let w = a + md * s;
                let sp = w % states;
                let t = base + metric_second(tr, &o, w);
                let cur = &mut next.vals[sp];
                if *cur == f64::NEG_INFINITY {
                    next.active.push(sp as u32);
                    *cur = t;
                } else if t > *cur {
                    *cur = t;
                }
                buf.push((sp as u32, t));
            }
        });
        for &(sp, t) in &buf {
            self.acc[sp as usize] += fast_exp(t - next.vals[sp as usize]);
        }
        for &sp in &next.active {
            let sp = sp as usize;
            next.vals[sp] += fast_ln(self.acc[sp]) + o.constant;
            self.acc[sp] = 0.0;
        }
        self.buf = buf;
        next.promote();
    }

    /// One backward step: `beta_prev` over the active set of `alpha_prev`.
    fn backward_step(&mut self, p: usize, alpha_prev: &StateVec, beta_next: &StateVec, alpha_next_all: bool, beta_prev: &mut StateVec) {
        let tr = self.t;
        let rule = self.rules[p - 1];
        let o = self.obs[p - 1];
        beta_prev.clear();
        let (md, states) = (self.t.md, self.t.states);
        if !self.opts.force_sparse && alpha_prev.all && alpha_next_all && tr.depth >= 2 && tr.is_full(rule) {
            let z2 = &tr.z_second;
            let out = &mut beta_prev.vals;
            match md {
                2 => backward_dense::<2>(&beta_next.vals, z2, &o, out),
                4 => backward_dense::<4>(&beta_next.vals, z2, &o, out),
                8 => backward_dense::<8>(&beta_next.vals, z2, &o, out),
                16 => backward_dense::<16>(&beta_next.vals, z2, &o, out),
                32 => backward_dense::<32>(&beta_next.vals, z2, &o, out),
                _ => unreachable!("alphabet sizes are powers of two up to 32"),
            }
            for (s, v) in out.iter_mut().enumerate() {
                *v += metric_first(tr, &o, s) + o.constant;
            }
            beta_prev.all = true;
            return;
        }
        self.t.allowed_digits(rule, &mut self.allowed, &mut self.counts);
        let m = self.t.m;
        let mut terms = [0.0f64; 32];
        alpha_prev.visit(|s| {
            if alpha_prev.vals[s] == f64::NEG_INFINITY {
                return;
            }
            let pd = s % md;
            let mut mx = f64::NEG_INFINITY;
            let list = &self.allowed[pd * m..pd * m + self.counts[pd]];
            for (k, &a) in list.iter().enumerate() {
                let w = a + md * s;
                let t = metric_second(tr, &o, w) + beta_next.vals[w % states];
                terms[k] = t;
                mx = mx.max(t);
            }
            let v = if mx == f64::NEG_INFINITY {
                mx
            } else {
                let acc: f64 = terms[..list.len()].iter().map(|&t| fast_exp(t - mx)).sum();
                mx + fast_ln(acc) + metric_first(tr, &o, s) + o.constant
            };
            beta_prev.vals[s] = v;
            beta_prev.active.push(s as u32);
        });
        beta_prev.promote();
    }

    /// Posterior of the data symbol at step `p`.
    fn posterior(&mut self, p: usize, alpha_prev: &StateVec, alpha: &StateVec, beta: &StateVec) -> Result<Vec<f64>> {
        let tr = self.t;
        let (md, m, states) = (self.t.md, self.t.m, self.t.states);
        let mut bins = vec![0.0f64; m];
        if alpha.all && tr.depth >= 2 && tr.md == tr.m {
            let md2 = md * md;
            let mut mx = f64::NEG_INFINITY;
            for s in 0..states {
                let v = alpha.vals[s] + beta.vals[s];
                if v > mx {
                    mx = v;
                }
            }
            let mut lacc = vec![0.0f64; md2];
            for (ca, cb) in alpha.vals.chunks_exact(md2).zip(beta.vals.chunks_exact(md2)) {
                for lo in 0..md2 {
                    lacc[lo] += fast_exp(ca[lo] + cb[lo] - mx);
                }
            }
            for (lo, v) in lacc.iter().enumerate() {
                let u = tr.ulab[lo];
                if u != NONE {
                    bins[u] += v;
                }
            }
        } else if self.t.depth >= 2 || !self.t.alphabet.is_differential() {
            let mut mx = f64::NEG_INFINITY;
            alpha.visit(|s| mx = mx.max(alpha.vals[s] + beta.vals[s]));
            alpha.visit(|s| {
                let v = alpha.vals[s] + beta.vals[s];
                let u = self.t.ulab[((s / md) % md) * md + s % md];
                if u != NONE {
                    bins[u] += fast_exp(v - mx);
                }
            });
        } else {
            let rule = self.rules[p - 1];
            let o = self.obs[p - 1];
            self.t.allowed_digits(rule, &mut self.allowed, &mut self.counts);
            let mut vals: Vec<(usize, f64)> = Vec::new();
            alpha_prev.visit(|s| {
                let pd = s % md;
                for &a in &self.allowed[pd * m..pd * m + self.counts[pd]] {
                    let w = a + md * s;
                    let v = alpha_prev.vals[s] + metric_first(tr, &o, s) + metric_second(tr, &o, w) + beta.vals[w % states];
                    vals.push((self.t.ulab[pd * md + a], v));
                }
            });
            let mx = vals.iter().fold(f64::NEG_INFINITY, |a, v| a.max(v.1));
            for (u, v) in vals {
                if u != NONE {
                    bins[u] += fast_exp(v - mx);
                }
            }
        }
        let total: f64 = bins.iter().sum();
        if !(total > 0.0) || !total.is_finite() {
            return Err(Error::Numerical(format!("posterior at position {p} has mass {total}")));
        }
        bins.iter_mut().for_each(|b| *b /= total);
        Ok(bins)
    }

    fn execute(mut self) -> Result<AppTable> {
        let states = self.t.states;
        let steps = self.steps;
        let store = !self.opts.forward_only;
        let interval = (steps as f64).sqrt().ceil().max(1.0) as usize;
        let mut stored: Vec<Option<Stored>> = vec![None; steps + 1];
        let mut keep_all = store;
        let mut bytes = 0usize;
        let mut prev = StateVec::new(states);
        let mut cur = StateVec::new(states);
        prev.vals[self.init] = 0.0;
        prev.active.push(self.init as u32);
        if store {
            stored[0] = Some(prev.store());
        }
        let mut scale = 0.0;
        for p in 1..=steps {
            self.forward_step(p, &prev, &mut cur);
            let shift = cur.normalize();
            if !shift.is_finite() {
                return Err(Error::Numerical(format!("forward message vanished at step {p}")));
            }
            scale += shift;
            if store && (keep_all || p % interval == 0 || p == steps) {
                let st = cur.store();
                bytes += st.bytes();
                stored[p] = Some(st);
                if keep_all && bytes > self.opts.memory_budget {
                    keep_all = false;
                    for (q, slot) in stored.iter_mut().enumerate() {
                        if q % interval != 0 && q != steps {
                            *slot = None;
                        }
                    }
                }
            }
            std::mem::swap(&mut prev, &mut cur);
        }
        let mut tail_sum = 0.0;
        let mut mx = f64::NEG_INFINITY;
        prev.visit(|s| mx = mx.max(prev.vals[s]));
        prev.visit(|s| tail_sum += fast_exp(prev.vals[s] - mx));
        let log_evidence = scale + mx + tail_sum.ln();
        if self.opts.forward_only {
            return Ok(AppTable { pmfs: Vec::new(), log_evidence, backward_log_evidence: None });
        }

        let mut pmfs = vec![Vec::new(); self.n];
        let mut beta_next = StateVec::new(states);
        let mut beta_prev = StateVec::new(states);
        let mut alpha = prev;
        let mut alpha_prev = cur;
        alpha.visit(|s| beta_next.vals[s] = 0.0);
        beta_next.all = alpha.all;
        beta_next.active = alpha.active.clone();
        let mut bscale = 0.0;
        let mut work = StateVec::new(states);
        for p in (1..=steps).rev() {
            if stored[p - 1].is_none() {
                let base = (0..p - 1).rev().find(|&q| stored[q].is_some()).unwrap_or(0);
                work.load(stored[base].as_ref().expect("checkpoint"));
                let mut next = StateVec::new(states);
                for q in base + 1..p {
                    self.forward_step(q, &work, &mut next);
                    next.normalize();
                    stored[q] = Some(next.store());
                    std::mem::swap(&mut work, &mut next);
                }
            }
            alpha_prev.load(stored[p - 1].as_ref().expect("stored message"));
            if p <= self.n {
                pmfs[p - 1] = self.posterior(p, &alpha_prev, &alpha, &beta_next)?;
            }
            self.backward_step(p, &alpha_prev, &beta_next, alpha.all, &mut beta_prev);
            let shift = beta_prev.normalize();
            if !shift.is_finite() {
                return Err(Error::Numerical(format!("backward message vanished at step {p}")));
            }
            bscale += shift;
            stored[p] = None;
            std::mem::swap(&mut beta_next, &mut beta_prev);
            std::mem::swap(&mut alpha, &mut alpha_prev);
        }
        let backward = bscale + beta_next.vals[self.init];
        Ok(AppTable { pmfs, log_evidence, backward_log_evidence: Some(backward) })
    }
}

/// Exact posteriors by enumerating every admissible data sequence.
pub fn brute_force_app(aux: &AuxChannel, alphabet: &Alphabet, frame: &ObservationFrame, mask: &ConditioningMask) -> Result<AppTable> {
    let n = frame.n();
    if mask.len() != n {
        return Err(Error::LengthMismatch("mask length differs from the frame".into()));
    }
    mask.check()?;
    let choices: Vec<Vec<usize>> =
        (0..n).map(|k| (0..alphabet.len()).filter(|&u| mask.allowed(k) >> u & 1 == 1).collect()).collect();
    let total = choices.iter().try_fold(1u64, |acc, c| acc.checked_mul(c.len() as u64)).unwrap_or(u64::MAX);
    if total > MAX_ENUMERATION {
        return Err(Error::TooLarge(format!("{total} sequences exceed the enumeration limit")));
    }
    let kp = aux.ktilde() as i64;
    let taps = &aux.taps().taps;
    let h = frame.head_len() as i64;
    let log_prior: f64 = choices.iter().map(|c| -(c.len() as f64).ln()).sum();
    let mut odometer = vec![0usize; n];
    let mut logps = Vec::with_capacity(total as usize);
    let mut seqs = Vec::with_capacity(total as usize);
    loop {
        let u: Vec<usize> = (0..n).map(|k| choices[k][odometer[k]]).collect();
        let (x, tail_x) = encode_payload(alphabet, &u, &frame.termination);
        let value = |j: i64| -> Complex64 {
            let v = if j < 1 - h {
                Complex64::new(0.0, 0.0)
            } else if j <= 0 {
                frame.termination.head[(j - 1 + h) as usize]
            } else if j <= n as i64 {
                alphabet.point(x[(j - 1) as usize])
            } else if ((j - n as i64 - 1) as usize) < tail_x.len() {
                tail_x[(j - n as i64 - 1) as usize]
            } else {
                Complex64::new(0.0, 0.0)
            };
            v * frame.amp
        };
        let mut lq = log_prior;
        for rho in 1 - kp..=2 * n as i64 + kp {
            let mut field = Complex64::new(0.0, 0.0);
            for i in -kp..=kp {
                let q = rho - i;
                if q.rem_euclid(2) == 0 {
                    field += taps[(i + kp) as usize] * value(q / 2);
                }
            }
            let r = rho + aux.offset();
            let y = frame.sample(r).ok_or_else(|| Error::LengthMismatch(format!("missing sample {r}")))?;
            lq += aux.log_density(r, y, field.norm_sqr());
        }
        logps.push(lq);
        seqs.push(u);
        let mut k = 0;
        while k < n {
            odometer[k] += 1;
            if odometer[k] < choices[k].len() {
                break;
            }
            odometer[k] = 0;
            k += 1;
        }
        if k == n {
            break;
        }
    }
    let mx = logps.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let mut pmfs = vec![vec![0.0; alphabet.len()]; n];
    let mut sum = 0.0;
    for (lp, u) in logps.iter().zip(&seqs) {
        let w = (lp - mx).exp();
        sum += w;
        for (k, &v) in u.iter().enumerate() {
            pmfs[k][v] += w;
        }
    }
    for row in &mut pmfs {
        row.iter_mut().for_each(|v| *v /= sum);
    }
    Ok(AppTable { pmfs, log_evidence: mx + sum.ln(), backward_log_evidence: None })
}

/// Total variation distance between two PMFs.
pub fn total_variation(a: &[f64], b: &[f64]) -> f64 {
    0.5 * a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>()
}
