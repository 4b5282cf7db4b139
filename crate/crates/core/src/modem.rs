//! Symbol alphabets, Gray labeling, differential phase coding and the
//! serial/parallel stage partition used by successive interference
//! cancellation.
//!
//! Symbols are handled by their index into [`Alphabet::points`]. Points are
//! stored in their natural order: ascending amplitude for PAM/ASK and
//! ring-major, phase-minor for SQAM.

use num_complex::Complex64;
use std::f64::consts::FRAC_PI_2;

use crate::error::{Error, Result};

/// Modulation family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AlphabetKind {
    /// Unipolar {0, 1, ..., M-1}.
    Pam,
    /// Bipolar {±1, ±3, ..., ±(M-1)}.
    Ask,
    /// Star QAM {±a, ±ja : a = 1..M/4}.
    Sqam,
}

impl AlphabetKind {
    pub fn name(self) -> &'static str {
        match self {
            AlphabetKind::Pam => "PAM",
            AlphabetKind::Ask => "ASK",
            AlphabetKind::Sqam => "SQAM",
        }
    }
}

impl std::str::FromStr for AlphabetKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "pam" => Ok(AlphabetKind::Pam),
            "ask" => Ok(AlphabetKind::Ask),
            "sqam" => Ok(AlphabetKind::Sqam),
            other => Err(Error::InvalidConfig(format!("unknown alphabet kind `{other}`"))),
        }
    }
}

/// Reflected binary Gray code of `i`.
pub fn gray(i: usize) -> usize {
    i ^ (i >> 1)
}

/// A modulation alphabet together with its Gray labeling and the ring/phase
/// decomposition used by the differential mapper.
#[derive(Debug, Clone)]
pub struct Alphabet {
    kind: AlphabetKind,
    points: Vec<Complex64>,
    bits: usize,
    /// `label[i]` is the m-bit label of point `i`; bit level 1 is the MSB.
    label: Vec<usize>,
    /// Inverse of `label`.
    by_label: Vec<usize>,
    ring: Vec<usize>,
    phase: Vec<usize>,
    phase_count: usize,
    /// `point_of[ring * phase_count + phase]`.
    point_of: Vec<usize>,
    differential: bool,
}

impl Alphabet {
    /// Builds the alphabet of the given family and cardinality.
    pub fn new(kind: AlphabetKind, m_points: usize) -> Result<Self> {
        if m_points < 2 || !m_points.is_power_of_two() {
            return Err(Error::InvalidAlphabet(format!(
                "cardinality {m_points} is not a power of two >= 2"
            )));
        }
        if m_points > 32 {
            return Err(Error::InvalidAlphabet(format!("cardinality {m_points} exceeds 32")));
        }
        let bits = m_points.trailing_zeros() as usize;
        let (points, label, ring, phase, phase_count) = match kind {
            AlphabetKind::Pam => {
                let points = (0..m_points).map(|i| Complex64::new(i as f64, 0.0)).collect();
                let label = (0..m_points).map(gray).collect();
                (points, label, (0..m_points).collect(), vec![0; m_points], 1)
            }
            AlphabetKind::Ask => {
                let half = m_points / 2;
                let mut points = Vec::with_capacity(m_points);
                let mut ring = Vec::with_capacity(m_points);
                let mut phase = Vec::with_capacity(m_points);
                for i in 0..m_points {
                    let v = 2.0 * i as f64 - (m_points as f64 - 1.0);
                    points.push(Complex64::new(v, 0.0));
                    let amp_idx = if i < half { half - 1 - i } else { i - half };
                    ring.push(amp_idx);
                    phase.push(usize::from(i < half));
                }
                let label = (0..m_points).map(gray).collect();
                (points, label, ring, phase, 2)
            }
            AlphabetKind::Sqam => {
                if !m_points.is_multiple_of(4) {
                    return Err(Error::InvalidAlphabet(format!(
                        "SQAM needs M divisible by 4, got {m_points}"
                    )));
                }
                let rings = m_points / 4;
                let ring_bits = bits - 2;
                let mut points = Vec::with_capacity(m_points);
                let mut label = Vec::with_capacity(m_points);
                let mut ring = Vec::with_capacity(m_points);
                let mut phase = Vec::with_capacity(m_points);
                for r in 0..rings {
                    for p in 0..4 {
                        let a = (r + 1) as f64;
                        points.push(Complex64::from_polar(a, p as f64 * FRAC_PI_2));
                        label.push((gray(p) << ring_bits) | gray(r));
                        ring.push(r);
                        phase.push(p);
                    }
                }
                (points, label, ring, phase, 4)
            }
        };
        let mut by_label = vec![0; m_points];
        for (i, &l) in label.iter().enumerate() {
            by_label[l] = i;
        }
        let rings = m_points / phase_count;
        let mut point_of = vec![usize::MAX; m_points];
        for i in 0..m_points {
            point_of[ring[i] * phase_count + phase[i]] = i;
        }
        debug_assert!(point_of.iter().all(|&p| p < m_points));
        debug_assert_eq!(rings * phase_count, m_points);
        // Snap the exact ±1, ±j values produced by from_polar.
        let points = points
            .into_iter()
            .map(|p: Complex64| Complex64::new(snap(p.re), snap(p.im)))
            .collect();
        Ok(Self { kind, points, bits, label, by_label, ring, phase, phase_count, point_of, differential: true })
    }

    pub fn kind(&self) -> AlphabetKind {
        self.kind
    }

    /// Cardinality M.
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Bits per symbol, m = log2 M.
    pub fn bits(&self) -> usize {
        self.bits
    }

    pub fn points(&self) -> &[Complex64] {
        &self.points
    }

    pub fn point(&self, idx: usize) -> Complex64 {
        self.points[idx]
    }

    /// Short name such as `4-ASK`.
    pub fn name(&self) -> String {
        format!("{}-{}", self.len(), self.kind.name())
    }

    /// Whether the differential mapper changes anything for this alphabet.
    pub fn is_differential(&self) -> bool {
        self.differential && self.phase_count > 1
    }

    /// Same points and labels with the differential mapper switched off.
    pub fn without_differential(mut self) -> Self {
        self.differential = false;
        self
    }

    /// Number of distinct phases (1, 2 or 4).
    pub fn phase_count(&self) -> usize {
        self.phase_count
    }

    pub fn phase_of(&self, idx: usize) -> usize {
        self.phase[idx]
    }

    pub fn ring_of(&self, idx: usize) -> usize {
        self.ring[idx]
    }

    pub fn label(&self, idx: usize) -> usize {
        self.label[idx]
    }

    pub fn from_label(&self, label: usize) -> usize {
        self.by_label[label]
    }

    /// Bit at `level` (0-based, level 0 is the MSB of the label) of point `idx`.
    pub fn bit(&self, idx: usize, level: usize) -> u8 {
        ((self.label[idx] >> (self.bits - 1 - level)) & 1) as u8
    }

    /// Index of the point closest to `value`, if it is within 1e-9.
    pub fn index_of(&self, value: Complex64) -> Option<usize> {
        self.points.iter().position(|p| (p - value).norm() < 1e-9)
    }

    /// Phase index of an arbitrary complex value, rounded to this
    /// alphabet's phase quantum. Zero maps to phase 0.
    pub fn quantize_phase(&self, value: Complex64) -> usize {
        if self.phase_count == 1 || value.norm() < 1e-12 {
            return 0;
        }
        let quantum = 2.0 * std::f64::consts::PI / self.phase_count as f64;
        let k = (value.arg() / quantum).round() as i64;
        k.rem_euclid(self.phase_count as i64) as usize
    }

    /// Point with the ring of `u` and phase `phase`.
    pub fn with_phase(&self, u: usize, phase: usize) -> usize {
        self.point_of[self.ring[u] * self.phase_count + phase % self.phase_count]
    }

    /// Transmit symbol following a previous transmit phase and data symbol `u`.
    pub fn diff_step(&self, prev_phase: usize, u: usize) -> usize {
        if !self.is_differential() {
            return u;
        }
        self.with_phase(u, prev_phase + self.phase[u])
    }

    /// Data symbol carried by the transition `prev_phase -> x`.
    pub fn diff_unstep(&self, prev_phase: usize, x: usize) -> usize {
        if !self.is_differential() {
            return x;
        }
        let p = (self.phase[x] + self.phase_count - prev_phase % self.phase_count) % self.phase_count;
        self.with_phase(x, p)
    }

    /// Set of point indices whose label agrees with `label` on the first
    /// `levels` bit levels, as a bitmask.
    pub fn prefix_mask(&self, label_prefix: usize, levels: usize) -> u32 {
        let shift = self.bits - levels;
        let mut mask = 0u32;
        for i in 0..self.len() {
            if levels == 0 || (self.label[i] >> shift) == label_prefix {
                mask |= 1 << i;
            }
        }
        mask
    }

    /// Bitmask with every point set.
    pub fn full_mask(&self) -> u32 {
        if self.len() == 32 {
            u32::MAX
        } else {
            (1u32 << self.len()) - 1
        }
    }

    /// Default phase reference: the point with phase 0 and the smallest
    /// positive amplitude.
    pub fn default_reference(&self) -> usize {
        let mut best: Option<usize> = None;
        for (i, p) in self.points.iter().enumerate() {
            if self.phase[i] == 0 && p.norm() > 1e-12 {
                match best {
                    Some(b) if self.points[b].norm() <= p.norm() => {}
                    _ => best = Some(i),
                }
            }
        }
        best.unwrap_or(0)
    }

    /// Mean and second moment E[|X|^2] under a uniform distribution.
    pub fn moments(&self) -> (Complex64, f64) {
        let m = self.len() as f64;
        let mean = self.points.iter().sum::<Complex64>() / m;
        let second = self.points.iter().map(|p| p.norm_sqr()).sum::<f64>() / m;
        (mean, second)
    }
}

fn snap(v: f64) -> f64 {
    let r = v.round();
    if (v - r).abs() < 1e-12 {
        r
    } else {
        v
    }
}

/// Builds an alphabet; see [`Alphabet::new`].
pub fn build_alphabet(kind: AlphabetKind, m_points: usize) -> Result<Alphabet> {
    Alphabet::new(kind, m_points)
}

/// Differential phase encoding of a string of data symbols (indices).
///
/// The first transmit symbol takes its phase reference from `x0_phase`.
pub fn diff_encode_indices(alphabet: &Alphabet, u: &[usize], x0_phase: usize) -> Vec<usize> {
    let mut prev = x0_phase;
    u.iter()
        .map(|&ui| {
            let x = alphabet.diff_step(prev, ui);
            prev = alphabet.phase_of(x);
            x
        })
        .collect()
}

/// Inverse of [`diff_encode_indices`].
pub fn diff_decode_indices(alphabet: &Alphabet, x: &[usize], x0_phase: usize) -> Vec<usize> {
    let mut prev = x0_phase;
    x.iter()
        .map(|&xi| {
            let u = alphabet.diff_unstep(prev, xi);
            prev = alphabet.phase_of(xi);
            u
        })
        .collect()
}

fn lookup_all(alphabet: &Alphabet, values: &[Complex64]) -> Result<Vec<usize>> {
    values
        .iter()
        .map(|&v| {
            alphabet
                .index_of(v)
                .ok_or_else(|| Error::NotInAlphabet(format!("{v} is not a point of {}", alphabet.name())))
        })
        .collect()
}

/// Differential phase mapper on complex symbols: |x_k| = |u_k| and the phase
/// of x_k is the phase of x_{k-1} plus the phase of u_k.
pub fn diff_encode(alphabet: &Alphabet, u: &[Complex64], x0: Complex64) -> Result<Vec<Complex64>> {
    let x0 = alphabet
        .index_of(x0)
        .ok_or_else(|| Error::NotInAlphabet(format!("initial symbol {x0} not in {}", alphabet.name())))?;
    let u = lookup_all(alphabet, u)?;
    Ok(diff_encode_indices(alphabet, &u, alphabet.phase_of(x0))
        .into_iter()
        .map(|i| alphabet.point(i))
        .collect())
}

/// Inverse of [`diff_encode`].
pub fn diff_decode(alphabet: &Alphabet, x: &[Complex64], x0: Complex64) -> Result<Vec<Complex64>> {
    let x0 = alphabet
        .index_of(x0)
        .ok_or_else(|| Error::NotInAlphabet(format!("initial symbol {x0} not in {}", alphabet.name())))?;
    let x = lookup_all(alphabet, x)?;
    Ok(diff_decode_indices(alphabet, &x, alphabet.phase_of(x0))
        .into_iter()
        .map(|i| alphabet.point(i))
        .collect())
}

/// Maps a bit string to point indices, m bits per symbol, MSB first.
pub fn bits_to_indices(alphabet: &Alphabet, bits: &[u8]) -> Result<Vec<usize>> {
    let m = alphabet.bits();
    if !bits.len().is_multiple_of(m) {
        return Err(Error::LengthMismatch(format!(
            "{} bits is not a multiple of {m} bits per symbol",
            bits.len()
        )));
    }
    Ok(bits
        .chunks(m)
        .map(|c| alphabet.from_label(c.iter().fold(0usize, |acc, &b| (acc << 1) | (b & 1) as usize)))
        .collect())
}

/// Inverse of [`bits_to_indices`].
pub fn indices_to_bits(alphabet: &Alphabet, symbols: &[usize]) -> Vec<u8> {
    let m = alphabet.bits();
    symbols.iter().flat_map(|&s| (0..m).map(move |l| alphabet.bit(s, l))).collect()
}

/// Maps a bit string to complex symbols.
pub fn map_bits_to_symbols(alphabet: &Alphabet, bits: &[u8]) -> Result<Vec<Complex64>> {
    Ok(bits_to_indices(alphabet, bits)?.into_iter().map(|i| alphabet.point(i)).collect())
}

/// Maps complex symbols back to their labels.
pub fn map_symbols_to_bits(alphabet: &Alphabet, symbols: &[Complex64]) -> Result<Vec<u8>> {
    Ok(indices_to_bits(alphabet, &lookup_all(alphabet, symbols)?))
}

/// Serial/parallel partition of n positions into S interleaved stages.
///
/// Stage s (0-based) holds positions s, s+S, s+2S, ... (0-based), which is
/// the 1-based rule κ = s + (t-1)·S.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StagePartition {
    stages: usize,
    per_stage: usize,
}

impl StagePartition {
    pub fn new(n: usize, stages: usize) -> Result<Self> {
        if stages == 0 || !n.is_multiple_of(stages) {
            return Err(Error::LengthMismatch(format!("S = {stages} does not divide n = {n}")));
        }
        Ok(Self { stages, per_stage: n / stages })
    }

    pub fn stages(&self) -> usize {
        self.stages
    }

    /// N = n / S.
    pub fn per_stage(&self) -> usize {
        self.per_stage
    }

    pub fn len(&self) -> usize {
        self.stages * self.per_stage
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn position(&self, stage: usize, t: usize) -> usize {
        stage + t * self.stages
    }

    /// (stage, t) of a 0-based position.
    pub fn locate(&self, position: usize) -> (usize, usize) {
        (position % self.stages, position / self.stages)
    }

    pub fn stage_positions(&self, stage: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.per_stage).map(move |t| self.position(stage, t))
    }
}

/// S/P conversion: `V_s = (U_s, U_{s+S}, ...)`.
pub fn sp_split<T: Clone>(u: &[T], stages: usize) -> Result<Vec<Vec<T>>> {
    let part = StagePartition::new(u.len(), stages)?;
    Ok((0..stages).map(|s| part.stage_positions(s).map(|k| u[k].clone()).collect()).collect())
}

/// P/S conversion, the inverse of [`sp_split`].
pub fn ps_merge<T: Clone>(v: &[Vec<T>]) -> Result<Vec<T>> {
    let stages = v.len();
    if stages == 0 {
        return Ok(Vec::new());
    }
    let per = v[0].len();
    if v.iter().any(|s| s.len() != per) {
        return Err(Error::LengthMismatch("stages have unequal lengths".into()));
    }
    let mut out = Vec::with_capacity(stages * per);
    for t in 0..per {
        for stage in v {
            out.push(stage[t].clone());
        }
    }
    Ok(out)
}
