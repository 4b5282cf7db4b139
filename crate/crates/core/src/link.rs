//! Oversampled discrete-time model of a bandlimited direct-detection link:
//! raised-cosine transmit pulse, chromatic dispersion, square-law
//! detection, brickwall receive filter, two-fold sampling and AWGN.
//!
//! Time is measured in symbol periods and frequency in units of the symbol
//! rate. Rate-2 samples are indexed by `r`, with sample `r` at time `r/2`;
//! transmit symbol `x_j` sits at time `j`.

use std::f64::consts::PI;
use std::io::{Read, Write};
use std::sync::Arc;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::modem::Alphabet;
use crate::numeric::{gauss_legendre, integrate};

/// Standard single-mode fiber dispersion in s²/km.
pub const SSMF_BETA2: f64 = -2.168e-23;

/// Physical and discretization parameters of the link.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct LinkConfig {
    /// Symbol rate in Baud.
    pub symbol_rate: f64,
    /// Raised-cosine roll-off.
    pub alpha: f64,
    /// Fiber length in km.
    pub length_km: f64,
    /// Group velocity dispersion in s²/km.
    pub beta2: f64,
    /// Noise variance per receive sample.
    pub n0b: f64,
    /// Oversampling of the waveform synthesis grid.
    pub nos_sim: usize,
    /// Receiver oversampling; only 2 is supported.
    pub nos_rx: usize,
    /// Channel memory in symbols; the response keeps `2*taps_half + 1` rate-2 taps.
    pub taps_half: usize,
}

impl Default for LinkConfig {
    fn default() -> Self {
        Self {
            symbol_rate: 35e9,
            alpha: 0.2,
            length_km: 30.0,
            beta2: SSMF_BETA2,
            n0b: 1.0,
            nos_sim: 4,
            nos_rx: 2,
            taps_half: 101,
        }
    }
}

impl LinkConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if !(self.symbol_rate > 0.0) {
            return bad("symbol_rate must be positive");
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return bad("alpha must lie in [0, 1]");
        }
        if !(self.length_km >= 0.0) {
            return bad("length_km must be non-negative");
        }
        if !(self.n0b > 0.0) {
            return bad("n0b must be positive");
        }
        if self.nos_rx != 2 {
            return bad("nos_rx must be 2");
        }
        if self.nos_sim < self.nos_rx || !self.nos_sim.is_multiple_of(self.nos_rx) {
            return bad("nos_sim must be a multiple of nos_rx");
        }
        if self.taps_half == 0 {
            return bad("taps_half must be at least 1");
        }
        Ok(())
    }

    /// Dispersion phase coefficient: H(ν) = exp(j·c·ν²) for ν in units of B.
    pub fn cd_coefficient(&self) -> f64 {
        0.5 * self.beta2 * (2.0 * PI * self.symbol_rate).powi(2) * self.length_km
    }
}

/// Unit-energy frequency-domain raised cosine at normalized frequency `nu`.
pub fn rc_spectrum(alpha: f64, nu: f64) -> f64 {
    let a = nu.abs();
    let lo = 0.5 * (1.0 - alpha);
    let hi = 0.5 * (1.0 + alpha);
    let g = if a <= lo {
        1.0
    } else if a <= hi {
        0.5 * (1.0 + (PI / alpha * (a - lo)).cos())
    } else {
        0.0
    };
    g / (1.0 - alpha / 4.0).sqrt()
}

fn sinc(t: f64) -> f64 {
    if t.abs() < 1e-12 {
        1.0
    } else {
        (PI * t).sin() / (PI * t)
    }
}

/// Unit-energy raised-cosine pulse at time `t` in symbol periods.
pub fn rc_pulse_normalized(alpha: f64, t: f64) -> f64 {
    let norm = 1.0 / (1.0 - alpha / 4.0).sqrt();
    let d = 1.0 - (2.0 * alpha * t).powi(2);
    if alpha > 0.0 && d.abs() < 1e-10 {
        return norm * PI / 4.0 * sinc(1.0 / (2.0 * alpha));
    }
    norm * sinc(t) * (PI * alpha * t).cos() / d
}

/// Raised-cosine transmit pulse sampled at times `t_grid` (seconds), with
/// unit energy ∫|g(t)|² dt = 1.
pub fn rc_pulse(alpha: f64, symbol_rate: f64, t_grid: &[f64]) -> Vec<f64> {
    let scale = symbol_rate.sqrt();
    t_grid.iter().map(|&t| scale * rc_pulse_normalized(alpha, t * symbol_rate)).collect()
}

/// All-pass dispersion response exp(j (β2/2) ω² L) on a grid of frequencies in Hz.
pub fn cd_transfer(f_grid: &[f64], beta2: f64, length_km: f64) -> Vec<Complex64> {
    f_grid
        .iter()
        .map(|&f| Complex64::from_polar(1.0, 0.5 * beta2 * (2.0 * PI * f).powi(2) * length_km))
        .collect()
}

/// Oversampled channel response ψ(t) = (g_tx * h_L)(t), centered taps.
#[derive(Debug, Clone, PartialEq)]
pub struct TapSet {
    /// `taps[i + ktilde]` = ψ(i / 2) for i in [-ktilde, ktilde].
    pub taps: Vec<Complex64>,
    /// Memory in symbols, (K - 1) / 2.
    pub ktilde: usize,
    /// Fraction of ‖ψ‖² retained by the truncation.
    pub energy_fraction: f64,
    /// Offset of the tap window relative to the pulse center, in rate-2 taps.
    pub offset: i64,
}

impl TapSet {
    /// Number of taps K.
    pub fn len(&self) -> usize {
        self.taps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.taps.is_empty()
    }

    /// ψ at rate-2 index `i` relative to the window center; zero outside.
    pub fn tap(&self, i: i64) -> Complex64 {
        let k = i + self.ktilde as i64;
        if k < 0 || k >= self.taps.len() as i64 {
            Complex64::new(0.0, 0.0)
        } else {
            self.taps[k as usize]
        }
    }

    /// Causal ordering ψ_0..ψ_{K-1} used by the Toeplitz operator.
    pub fn causal(&self) -> Vec<Complex64> {
        self.taps.clone()
    }

    /// Warning text when less than 99.9% of the pulse energy is retained.
    pub fn energy_warning(&self) -> Option<String> {
        (self.energy_fraction < 0.999).then(|| {
            format!(
                "tap truncation keeps only {:.4}% of the pulse energy",
                100.0 * self.energy_fraction
            )
        })
    }

    /// Writes the taps as CSV with columns index, re, im. Lines starting
    /// with `#` are skipped on reading.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["index", "re", "im"])?;
        for (k, t) in self.taps.iter().enumerate() {
            let idx = k as i64 - self.ktilde as i64 + self.offset;
            wr.write_record([idx.to_string(), format!("{:.17e}", t.re), format!("{:.17e}", t.im)])?;
        }
        wr.flush()?;
        Ok(())
    }

    /// Reads taps written by [`TapSet::write_csv`].
    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rd = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(r);
        let mut rows = Vec::new();
        for rec in rd.records() {
            let rec = rec?;
            let parse = |i: usize| -> Result<f64> {
                rec.get(i)
                    .ok_or_else(|| Error::Schema("missing column".into()))?
                    .trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Schema(e.to_string()))
            };
            rows.push((parse(0)? as i64, Complex64::new(parse(1)?, parse(2)?)));
        }
        if rows.is_empty() || rows.len() % 2 == 0 {
            return Err(Error::Schema("tap file must hold an odd number of taps".into()));
        }
        rows.sort_by_key(|r| r.0);
        if rows.windows(2).any(|w| w[1].0 != w[0].0 + 1) {
            return Err(Error::Schema("tap indices must be contiguous".into()));
        }
        let ktilde = rows.len() / 2;
        let offset = rows[ktilde].0;
        let taps: Vec<Complex64> = rows.into_iter().map(|r| r.1).collect();
        let energy_fraction = taps.iter().map(|t| t.norm_sqr()).sum::<f64>() / 2.0;
        Ok(Self { taps, ktilde, energy_fraction, offset })
    }
}

/// Banded Toeplitz operator of the causal model: row r of the 2n × (2n+K-1)
/// matrix applied to x̃' equals Σ_k ψ_k x̃'_{r+K-1-k}.
#[derive(Debug, Clone)]
pub struct ToeplitzOperator {
    psi: Vec<Complex64>,
    rows: usize,
}

impl ToeplitzOperator {
    pub fn new(psi: Vec<Complex64>, n: usize) -> Self {
        Self { psi, rows: 2 * n }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.rows + self.psi.len() - 1
    }

    /// Matrix-free product.
    pub fn apply(&self, x_tilde: &[Complex64]) -> Result<Vec<Complex64>> {
        if x_tilde.len() != self.cols() {
            return Err(Error::LengthMismatch(format!(
                "input has {} entries, operator expects {}",
                x_tilde.len(),
                self.cols()
            )));
        }
        let k = self.psi.len();
        Ok((0..self.rows)
            .map(|r| (0..k).map(|j| self.psi[j] * x_tilde[r + k - 1 - j]).sum())
            .collect())
    }

    /// Noise-free intensities |Ψ x̃'|^∘2.
    pub fn intensity(&self, x_tilde: &[Complex64]) -> Result<Vec<f64>> {
        Ok(self.apply(x_tilde)?.into_iter().map(|v| v.norm_sqr()).collect())
    }

    /// Explicit dense matrix, row-major.
    pub fn dense(&self) -> Vec<Vec<Complex64>> {
        let k = self.psi.len();
        (0..self.rows)
            .map(|r| {
                let mut row = vec![Complex64::new(0.0, 0.0); self.cols()];
                for j in 0..k {
                    row[r + k - 1 - j] = self.psi[j];
                }
                row
            })
            .collect()
    }
}

/// Builds x̃' = [s0; x'] with zero-interleaved symbols; `state` holds
/// x_{1-K̃}..x_0.
pub fn upsample_with_state(state: &[Complex64], x: &[Complex64]) -> Vec<Complex64> {
    let zero = Complex64::new(0.0, 0.0);
    state.iter().chain(x).flat_map(|&v| [zero, v]).collect()
}

/// How the frame is terminated after the last data symbol.
#[derive(Debug, Clone, PartialEq)]
pub enum Tail {
    /// Known data symbols, differentially encoded like the payload.
    KnownData(Vec<usize>),
    /// Known transmit values (not necessarily alphabet points).
    KnownSymbols(Vec<Complex64>),
}

impl Tail {
    pub fn len(&self) -> usize {
        match self {
            Tail::KnownData(v) => v.len(),
            Tail::KnownSymbols(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Known symbols around the payload and the differential phase reference.
#[derive(Debug, Clone, PartialEq)]
pub struct Termination {
    /// Transmit values x_{1-H}..x_0 in alphabet units.
    pub head: Vec<Complex64>,
    pub tail: Tail,
    /// Phase index that the first data symbol is referenced to.
    pub ref_phase: usize,
}

impl Termination {
    /// Random known head of alphabet points and a tail of reference symbols.
    pub fn random<R: Rng + ?Sized>(alphabet: &Alphabet, head: usize, tail: usize, rng: &mut R) -> Self {
        let head: Vec<Complex64> = (0..head).map(|_| alphabet.point(rng.gen_range(0..alphabet.len()))).collect();
        let ref_phase = head.last().map_or(0, |&v| alphabet.quantize_phase(v));
        let tail = Tail::KnownData(vec![alphabet.default_reference(); tail]);
        Self { head, tail, ref_phase }
    }

    /// All-zero head and tail with the default phase reference.
    pub fn zeros(alphabet: &Alphabet, head: usize, tail: usize) -> Self {
        let z = Complex64::new(0.0, 0.0);
        Self {
            head: vec![z; head],
            tail: Tail::KnownSymbols(vec![z; tail]),
            ref_phase: alphabet.phase_of(alphabet.default_reference()),
        }
    }
}

/// Transmit and received data of one frame.
#[derive(Debug, Clone)]
pub struct ObservationFrame {
    /// Data symbols u_1..u_n (alphabet indices).
    pub u: Vec<usize>,
    /// Transmit symbols x_1..x_n (alphabet indices).
    pub x: Vec<usize>,
    pub termination: Termination,
    /// Transmit values of the tail in alphabet units.
    pub tail_x: Vec<Complex64>,
    /// Amplitude scale applied to alphabet points on the wire.
    pub amp: f64,
    /// Received samples; `y[i]` is sample r = `y_start + i`.
    pub y: Vec<f64>,
    pub y_start: i64,
    pub snr_db: f64,
}

impl ObservationFrame {
    pub fn n(&self) -> usize {
        self.u.len()
    }

    pub fn head_len(&self) -> usize {
        self.termination.head.len()
    }

    pub fn tail_len(&self) -> usize {
        self.tail_x.len()
    }

    /// Transmit value at symbol position `j` in alphabet units (zero outside the frame).
    pub fn x_value(&self, alphabet: &Alphabet, j: i64) -> Complex64 {
        let h = self.head_len() as i64;
        let n = self.n() as i64;
        if j < 1 - h || j > n + self.tail_len() as i64 {
            Complex64::new(0.0, 0.0)
        } else if j <= 0 {
            self.termination.head[(j - 1 + h) as usize]
        } else if j <= n {
            alphabet.point(self.x[(j - 1) as usize])
        } else {
            self.tail_x[(j - n - 1) as usize]
        }
    }

    /// Sample r, if stored.
    pub fn sample(&self, r: i64) -> Option<f64> {
        let i = r - self.y_start;
        (i >= 0 && (i as usize) < self.y.len()).then(|| self.y[i as usize])
    }

    /// The 2n samples aligned with the data, r = 1..2n.
    pub fn data_samples(&self) -> Vec<f64> {
        (1..=2 * self.n() as i64).map(|r| self.sample(r).unwrap_or(0.0)).collect()
    }
}

/// Builds data, transmit symbols and tail values for a frame.
pub fn encode_payload(alphabet: &Alphabet, u: &[usize], termination: &Termination) -> (Vec<usize>, Vec<Complex64>) {
    let x = crate::modem::diff_encode_indices(alphabet, u, termination.ref_phase);
    let tail_x = match &termination.tail {
        Tail::KnownSymbols(v) => v.clone(),
        Tail::KnownData(tu) => {
            let start = x.last().map_or(termination.ref_phase, |&l| alphabet.phase_of(l));
            crate::modem::diff_encode_indices(alphabet, tu, start).into_iter().map(|i| alphabet.point(i)).collect()
        }
    };
    (x, tail_x)
}

/// Channel synthesis state: taps and auxiliary tables derived from a config.
#[derive(Debug, Clone)]
pub struct Link {
    pub config: LinkConfig,
    pub taps: TapSet,
    /// ψ on the synthesis grid, centered; `taps_sim[q + span]` = ψ(q / nos_sim).
    taps_sim: Vec<Complex64>,
    /// Pulse autocorrelation at integer lags 0..len.
    autocorr: Vec<f64>,
}

/// Samples ψ(t) = ∫ G(ν) H(ν) e^{j2πνt} dν at the given times by
/// composite Gauss–Legendre quadrature split at the spectral breakpoints.
fn psi_samples(config: &LinkConfig, times: &[f64]) -> Vec<Complex64> {
    let alpha = config.alpha;
    let c = config.cd_coefficient();
    let lo = 0.5 * (1.0 - alpha);
    let hi = 0.5 * (1.0 + alpha);
    let rule = gauss_legendre(16);
    let tmax = times.iter().fold(0.0f64, |m, t| m.max(t.abs()));
    // Highest local oscillation rate in rad per unit frequency.
    let omega = 2.0 * PI * tmax + 2.0 * c.abs() * hi + 1.0;
    let mut nodes: Vec<(f64, Complex64)> = Vec::new();
    for (a, b) in [(-hi, -lo), (-lo, lo), (lo, hi)] {
        if b - a < 1e-15 {
            continue;
        }
        let panels = ((b - a) * omega / 2.0).ceil().max(4.0) as usize;
        let h = (b - a) / panels as f64;
        for p in 0..panels {
            let mid = a + (p as f64 + 0.5) * h;
            for (x, w) in rule.0.iter().zip(&rule.1) {
                let nu = mid + 0.5 * h * x;
                let v = Complex64::from_polar(rc_spectrum(alpha, nu) * w * 0.5 * h, c * nu * nu);
                nodes.push((nu, v));
            }
        }
    }
    times
        .iter()
        .map(|&t| nodes.iter().map(|&(nu, v)| v * Complex64::from_polar(1.0, 2.0 * PI * nu * t)).sum())
        .collect()
}

/// Pulse autocorrelation ∫ G(ν)² cos(2πνk) dν for k = 0..max_lag.
fn pulse_autocorr(alpha: f64, max_lag: usize) -> Vec<f64> {
    let rule = gauss_legendre(16);
    let hi = 0.5 * (1.0 + alpha);
    let lo = 0.5 * (1.0 - alpha);
    (0..=max_lag)
        .map(|k| {
            let f = |nu: f64| rc_spectrum(alpha, nu).powi(2) * (2.0 * PI * nu * k as f64).cos();
            let mut acc = integrate(f, -lo, lo, 64, &rule);
            if alpha > 0.0 {
                acc += 2.0 * integrate(f, lo, hi, 64, &rule);
            }
            acc
        })
        .collect()
}

/// Derives the truncated rate-2 channel response for `config`.
pub fn derive_taps(config: &LinkConfig) -> Result<TapSet> {
    Ok(Link::new(config.clone())?.taps)
}

impl Link {
    pub fn new(config: LinkConfig) -> Result<Self> {
        config.validate()?;
        let kt = config.taps_half as i64;
        let ratio = (config.nos_sim / config.nos_rx) as i64;
        let span = kt * ratio;
        let times: Vec<f64> = (-span..=span).map(|q| q as f64 / config.nos_sim as f64).collect();
        let taps_sim = psi_samples(&config, &times);
        let taps: Vec<Complex64> = (-kt..=kt).map(|i| taps_sim[(i * ratio + span) as usize]).collect();
        let energy_fraction = taps.iter().map(|t| t.norm_sqr()).sum::<f64>() / config.nos_rx as f64;
        let tapset = TapSet { taps, ktilde: config.taps_half, energy_fraction, offset: 0 };
        if let Some(msg) = tapset.energy_warning() {
            log::warn!("{msg}");
        }
        let autocorr = if config.alpha == 0.0 { vec![1.0] } else { pulse_autocorr(config.alpha, 64) };
        Ok(Self { config, taps: tapset, taps_sim, autocorr })
    }

    /// Transmit power for unit amplitude scaling of uniform i.i.d. symbols.
    pub fn unit_power(&self, alphabet: &Alphabet) -> f64 {
        let (mean, second) = alphabet.moments();
        let var = second - mean.norm_sqr();
        var + mean.norm_sqr() / (1.0 - self.config.alpha / 4.0)
    }

    /// Amplitude scale that gives the target SNR (P_tx relative to N0B).
    pub fn amp_for_snr(&self, alphabet: &Alphabet, snr_db: f64) -> f64 {
        (10f64.powf(snr_db / 10.0) * self.config.n0b / self.unit_power(alphabet)).sqrt()
    }

    /// Simulates one frame carrying data symbols `u`.
    pub fn simulate<R: Rng + ?Sized>(
        &self,
        alphabet: &Alphabet,
        u: &[usize],
        termination: &Termination,
        snr_db: f64,
        noise: bool,
        rng: &mut R,
    ) -> Result<ObservationFrame> {
        let kt = self.taps.ktilde;
        if termination.head.len() < kt || termination.tail.len() < kt {
            return Err(Error::LengthMismatch(format!(
                "head and tail need at least {kt} symbols for the channel memory"
            )));
        }
        let amp = self.amp_for_snr(alphabet, snr_db);
        let (x, tail_x) = encode_payload(alphabet, u, termination);
        let mut frame = ObservationFrame {
            u: u.to_vec(),
            x,
            termination: termination.clone(),
            tail_x,
            amp,
            y: Vec::new(),
            y_start: 1 - termination.head.len() as i64,
            snr_db,
        };
        let y_end = 2 * frame.n() as i64 + frame.tail_len() as i64;
        let values = |j: i64| frame.x_value(alphabet, j) * amp;
        let mut y = if self.config.alpha == 0.0 {
            (frame.y_start..=y_end).map(|r| self.field(r, &values).norm_sqr()).collect()
        } else {
            self.synthesize(alphabet, &frame, amp, y_end, rng)
        };
        if noise {
            let sd = self.config.n0b.sqrt();
            for v in &mut y {
                let e: f64 = StandardNormal.sample(rng);
                *v += sd * e;
            }
        }
        frame.y = y;
        Ok(frame)
    }

    /// Field Σ_j ψ(r/2 - j) a_j of the truncated rate-2 model.
    fn field<F: Fn(i64) -> Complex64>(&self, r: i64, values: &F) -> Complex64 {
        let kt = self.taps.ktilde as i64;
        let lo = (r - kt).div_euclid(2) + i64::from((r - kt).rem_euclid(2) != 0);
        let hi = (r + kt).div_euclid(2);
        (lo..=hi).map(|j| self.taps.tap(r - 2 * j) * values(j)).sum()
    }

    /// Waveform synthesis on the nos_sim grid, square law, brickwall on
    /// [-B, B] and decimation to rate 2. Random guard symbols outside the
    /// frame keep the periodic FFT boundary away from the stored samples.
    fn synthesize<R: Rng + ?Sized>(&self, alphabet: &Alphabet, frame: &ObservationFrame, amp: f64, y_end: i64, rng: &mut R) -> Vec<f64> {
        let nos = self.config.nos_sim as i64;
        let ratio = nos / 2;
        let kt = self.taps.ktilde as i64;
        let span = kt * ratio;
        let guard = 2 * kt + 8;
        let first = 1 - frame.head_len() as i64 - guard;
        let last = frame.n() as i64 + frame.tail_len() as i64 + guard;
        let mut sym = Vec::with_capacity((last - first + 1) as usize);
        for j in first..=last {
            let inside = j >= 1 - frame.head_len() as i64 && j <= frame.n() as i64 + frame.tail_len() as i64;
            let v = if inside { frame.x_value(alphabet, j) } else { alphabet.point(rng.gen_range(0..alphabet.len())) };
            sym.push(v * amp);
        }
        let q0 = first * nos;
        let len = ((last - first) * nos + 1) as usize;
        let mut buf = vec![Complex64::new(0.0, 0.0); len];
        for (q, slot) in buf.iter_mut().enumerate() {
            let qa = q0 + q as i64;
            let jlo = (qa - span).div_euclid(nos) + i64::from((qa - span).rem_euclid(nos) != 0);
            let jhi = (qa + span).div_euclid(nos);
            let mut f = Complex64::new(0.0, 0.0);
            for j in jlo.max(first)..=jhi.min(last) {
                f += self.taps_sim[(qa - j * nos + span) as usize] * sym[(j - first) as usize];
            }
            *slot = Complex64::new(f.norm_sqr(), 0.0);
        }
        let mut planner = FftPlanner::new();
        let fwd = planner.plan_fft_forward(len);
        let inv: Arc<dyn rustfft::Fft<f64>> = planner.plan_fft_inverse(len);
        fwd.process(&mut buf);
        for (k, v) in buf.iter_mut().enumerate() {
            let kk = if k <= len / 2 { k as f64 } else { k as f64 - len as f64 };
            let nu = (kk * nos as f64 / len as f64).abs();
            let gain = if nu < 1.0 - 1e-12 {
                1.0
            } else if nu <= 1.0 + 1e-12 {
                0.5
            } else {
                0.0
            };
            *v *= gain / len as f64;
        }
        inv.process(&mut buf);
        (frame.y_start..=y_end).map(|r| buf[(r * ratio - q0) as usize].re).collect()
    }

    /// Average transmit power E‖X(t)‖² / (n T) over frames.
    pub fn tx_power(&self, alphabet: &Alphabet, frames: &[ObservationFrame]) -> (f64, f64) {
        let mut total = 0.0;
        for f in frames {
            let n = f.n();
            let a: Vec<Complex64> = f.x.iter().map(|&i| alphabet.point(i) * f.amp).collect();
            let mut p = 0.0;
            for k in 0..n {
                p += a[k].norm_sqr() * self.autocorr[0];
                for (lag, rg) in self.autocorr.iter().enumerate().skip(1) {
                    if k + lag < n {
                        p += 2.0 * (a[k] * a[k + lag].conj()).re * rg;
                    }
                }
            }
            total += p / n.max(1) as f64;
        }
        let p = total / frames.len().max(1) as f64;
        (p, 10.0 * (p / self.config.n0b).log10())
    }
}

/// Spectral efficiency R / (1 + α) in bit/s/Hz.
pub fn spectral_efficiency(rate_bpcu: f64, alpha: f64) -> f64 {
    rate_bpcu / (1.0 + alpha)
}
