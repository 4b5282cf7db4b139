//! Reduced-memory auxiliary channel q(y|u): a truncated tap window plus a
//! Gaussian residual with per-parity mean and variance.
//!
//! The auxiliary model indexes its samples by ρ = r - offset, so that
//! sample ρ is |Σ_i h'[i] a[ρ - i]|² with `a` the zero-interleaved
//! symbol stream and i in [-K̃', K̃']. Symbol position p owns the pair
//! ρ = 2p - 1 - K̃' and ρ = 2p - K̃'; the first depends on x_{p-K̃'}..x_{p-1},
//! the second on x_{p-K̃'}..x_p.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::link::{ObservationFrame, TapSet};
use crate::modem::Alphabet;

/// Smallest variance accepted by the moment fit.
pub const VARIANCE_FLOOR: f64 = 1e-12;

/// Minimum number of residuals per parity class for a moment fit.
pub const MIN_TRAINING_SAMPLES: usize = 1000;

/// Keeps the `2*ktilde_aux + 1` consecutive taps of maximal energy.
///
/// Ties between windows are resolved toward the window closest to the
/// original center. The kept taps are not renormalized.
pub fn truncate_taps(tapset: &TapSet, ktilde_aux: usize) -> Result<TapSet> {
    let kt = tapset.ktilde;
    if ktilde_aux > kt {
        return Err(Error::InvalidConfig(format!(
            "auxiliary memory {ktilde_aux} exceeds channel memory {kt}"
        )));
    }
    let span = (kt - ktilde_aux) as i64;
    let window_energy = |c: i64| -> f64 {
        (c - ktilde_aux as i64..=c + ktilde_aux as i64).map(|i| tapset.tap(i).norm_sqr()).sum()
    };
    let energies: Vec<(i64, f64)> = (-span..=span).map(|c| (c, window_energy(c))).collect();
    let best = energies.iter().map(|e| e.1).fold(f64::NEG_INFINITY, f64::max);
    let center = energies
        .iter()
        .filter(|e| e.1 >= best * (1.0 - 1e-12))
        .min_by_key(|e| (e.0.abs(), e.0))
        .map(|e| e.0)
        .unwrap_or(0);
    let taps: Vec<Complex64> =
        (center - ktilde_aux as i64..=center + ktilde_aux as i64).map(|i| tapset.tap(i)).collect();
    let energy_fraction = taps.iter().map(|t| t.norm_sqr()).sum::<f64>() / 2.0;
    Ok(TapSet { taps, ktilde: ktilde_aux, energy_fraction, offset: tapset.offset + center })
}

/// Summary of a moment fit.
#[derive(Debug, Clone, PartialEq)]
pub struct FitReport {
    /// Residual counts per parity of the physical sample index.
    pub samples: [usize; 2],
    /// True when a variance hit [`VARIANCE_FLOOR`].
    pub clamped: bool,
}

/// Auxiliary channel law with memory K̃'.
#[derive(Debug, Clone, PartialEq)]
pub struct AuxChannel {
    taps: TapSet,
    /// Residual mean per parity of the physical sample index r.
    pub mean: [f64; 2],
    /// Residual variance per parity of r.
    pub var: [f64; 2],
    /// Set when the last fit clamped a variance.
    pub degenerate: bool,
}

impl AuxChannel {
    /// Auxiliary channel on the given taps with zero mean and unit variance.
    pub fn new(taps: TapSet) -> Self {
        Self { taps, mean: [0.0; 2], var: [1.0; 2], degenerate: false }
    }

    /// Truncates `tapset` to memory `ktilde_aux` with moments (0, 1).
    pub fn from_taps(tapset: &TapSet, ktilde_aux: usize) -> Result<Self> {
        Ok(Self::new(truncate_taps(tapset, ktilde_aux)?))
    }

    pub fn with_moments(mut self, mean: [f64; 2], var: [f64; 2]) -> Result<Self> {
        if var.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::InvalidConfig("auxiliary variances must be positive".into()));
        }
        self.mean = mean;
        self.var = var;
        Ok(self)
    }

    pub fn taps(&self) -> &TapSet {
        &self.taps
    }

    /// Auxiliary memory K̃' in symbols.
    pub fn ktilde(&self) -> usize {
        self.taps.ktilde
    }

    /// Physical sample index r minus auxiliary sample index ρ.
    pub fn offset(&self) -> i64 {
        self.taps.offset
    }

    /// Range of auxiliary sample indices ρ covered by a frame of `n` symbols.
    pub fn sample_range(&self, n: usize) -> (i64, i64) {
        let kp = self.ktilde() as i64;
        (1 - kp, 2 * n as i64 + kp)
    }

    /// Noise-free auxiliary intensity at ρ for scaled symbol values `a(j)`.
    pub fn predicted<F: Fn(i64) -> Complex64>(&self, rho: i64, a: F) -> f64 {
        let kp = self.ktilde() as i64;
        let lo = (rho - kp).div_euclid(2) + i64::from((rho - kp).rem_euclid(2) != 0);
        let hi = (rho + kp).div_euclid(2);
        let f: Complex64 = (lo..=hi).map(|j| self.taps.taps[(rho - 2 * j + kp) as usize] * a(j)).sum();
        f.norm_sqr()
    }

    /// Gaussian log-density of sample `y` at physical index `r` given the
    /// noise-free auxiliary intensity `z`.
    pub fn log_density(&self, r: i64, y: f64, z: f64) -> f64 {
        let k = r.rem_euclid(2) as usize;
        let e = y - self.mean[k] - z;
        -0.5 * (2.0 * PI * self.var[k]).ln() - e * e / (2.0 * self.var[k])
    }

    /// Σ log q(y_r | x) over the frame's auxiliary sample range, using the
    /// transmitted symbols.
    pub fn frame_log_density(&self, alphabet: &Alphabet, frame: &ObservationFrame) -> Result<f64> {
        let (lo, hi) = self.sample_range(frame.n());
        let mut acc = 0.0;
        for rho in lo..=hi {
            let r = rho + self.offset();
            let y = frame.sample(r).ok_or_else(|| missing_sample(r))?;
            let z = self.predicted(rho, |j| frame.x_value(alphabet, j) * frame.amp);
            acc += self.log_density(r, y, z);
        }
        Ok(acc)
    }

    /// Fits the per-parity residual mean and variance on training frames.
    pub fn fit_moments(&mut self, alphabet: &Alphabet, frames: &[ObservationFrame]) -> Result<FitReport> {
        let mut count = [0usize; 2];
        let mut sum = [0.0f64; 2];
        let mut sum_sq = [0.0f64; 2];
        for frame in frames {
            let (lo, hi) = self.sample_range(frame.n());
            for rho in lo..=hi {
                let r = rho + self.offset();
                let y = frame.sample(r).ok_or_else(|| missing_sample(r))?;
                let z = self.predicted(rho, |j| frame.x_value(alphabet, j) * frame.amp);
                let k = r.rem_euclid(2) as usize;
                count[k] += 1;
                sum[k] += y - z;
                sum_sq[k] += (y - z) * (y - z);
            }
        }
        if count.iter().any(|&c| c < MIN_TRAINING_SAMPLES) {
            return Err(Error::InvalidConfig(format!(
                "moment fit needs {MIN_TRAINING_SAMPLES} residuals per parity, got {count:?}"
            )));
        }
        let mut clamped = false;
        for k in 0..2 {
            let c = count[k] as f64;
            let mean = sum[k] / c;
            let mut var = (sum_sq[k] / c - mean * mean).max(0.0);
            if var < VARIANCE_FLOOR {
                var = VARIANCE_FLOOR;
                clamped = true;
            }
            self.mean[k] = mean;
            self.var[k] = var;
        }
        if clamped {
            log::warn!("auxiliary moment fit clamped a degenerate variance");
        }
        self.degenerate = clamped;
        Ok(FitReport { samples: count, clamped })
    }
}

fn missing_sample(r: i64) -> Error {
    Error::LengthMismatch(format!("frame has no received sample at index {r}"))
}
