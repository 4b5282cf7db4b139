//! Binary polar codes with an optional outer CRC and list decoding.
//!
//! Codewords are `x = u·F^{⊗n}` in natural bit order with the kernel
//! `F = [[1, 0], [1, 1]]`. The decoder walks the recursion tree with
//! LLR messages; the list variant keeps the `L` best paths by path metric.

use crate::error::{Error, Result};

/// Bit-serial CRC with a 16-bit generator polynomial (implicit x^16 term).
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Crc16 {
    pub poly: u16,
}

impl Crc16 {
    /// CCITT generator x^16 + x^12 + x^5 + 1.
    pub const CCITT: Crc16 = Crc16 { poly: 0x1021 };

    pub const LEN: usize = 16;

    /// Remainder of `bits` (MSB first), zero initial state.
    pub fn remainder(&self, bits: &[u8]) -> u16 {
        let mut reg: u16 = 0;
        for &b in bits {
            let top = ((reg >> 15) as u8 & 1) ^ (b & 1);
            reg <<= 1;
            if top == 1 {
                reg ^= self.poly;
            }
        }
        reg
    }

    /// Check bits to append to `bits`, MSB first.
    pub fn parity(&self, bits: &[u8]) -> [u8; 16] {
        let r = self.remainder(bits);
        let mut out = [0u8; 16];
        for (i, o) in out.iter_mut().enumerate() {
            *o = (r >> (15 - i)) as u8 & 1;
        }
        out
    }

    /// True when the last 16 bits are the check bits of the rest.
    pub fn check(&self, bits_with_parity: &[u8]) -> bool {
        if bits_with_parity.len() < Self::LEN {
            return false;
        }
        let (data, tail) = bits_with_parity.split_at(bits_with_parity.len() - Self::LEN);
        self.parity(data) == tail
    }
}

/// In-place polar transform `x = u·F^{⊗n}`; it is its own inverse.
pub fn polar_transform(bits: &mut [u8]) {
    let n = bits.len();
    let mut h = n / 2;
    while h >= 1 {
        for block in (0..n).step_by(2 * h) {
            for i in block..block + h {
                bits[i] ^= bits[i + h];
            }
        }
        h /= 2;
    }
}

/// One polar code: info positions carry the data followed by the CRC,
/// if any.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PolarCode {
    pub n_code: usize,
    /// Sorted positions of the non-frozen bits (data and CRC).
    pub info: Vec<usize>,
    pub crc: Option<Crc16>,
}

impl PolarCode {
    /// Builds a code from its info positions; an empty set means all frozen.
    pub fn new(n_code: usize, mut info: Vec<usize>, crc: Option<Crc16>) -> Result<Self> {
        if !n_code.is_power_of_two() {
            return Err(Error::InvalidConfig(format!("polar length {n_code} is not a power of two")));
        }
        info.sort_unstable();
        info.dedup();
        if info.iter().any(|&p| p >= n_code) {
            return Err(Error::InvalidConfig("info position out of range".into()));
        }
        if crc.is_some() && !info.is_empty() && info.len() <= Crc16::LEN {
            return Err(Error::InvalidConfig(format!("{} info positions leave no room for data next to the CRC", info.len())));
        }
        Ok(Self { n_code, info, crc })
    }

    /// Data bits per codeword.
    pub fn k(&self) -> usize {
        match self.crc {
            Some(_) => self.info.len().saturating_sub(Crc16::LEN),
            None => self.info.len(),
        }
    }

    pub fn frozen(&self) -> Vec<usize> {
        let mut is_info = vec![false; self.n_code];
        for &p in &self.info {
            is_info[p] = true;
        }
        (0..self.n_code).filter(|&p| !is_info[p]).collect()
    }

    fn info_mask(&self) -> Vec<bool> {
        let mut m = vec![false; self.n_code];
        for &p in &self.info {
            m[p] = true;
        }
        m
    }

    pub fn encode(&self, data: &[u8]) -> Result<Vec<u8>> {
        if data.len() != self.k() {
            return Err(Error::LengthMismatch(format!("expected {} data bits, got {}", self.k(), data.len())));
        }
        let mut u = vec![0u8; self.n_code];
        let parity = match self.crc {
            Some(crc) if !self.info.is_empty() => crc.parity(data).to_vec(),
            _ => Vec::new(),
        };
        for (&p, &b) in self.info.iter().zip(data.iter().chain(parity.iter())) {
            u[p] = b;
        }
        polar_transform(&mut u);
        Ok(u)
    }

    /// Successive-cancellation list decoding of channel LLRs
    /// (`ln P(0)/P(1)` per codeword bit). Paths come back sorted by metric.
    pub fn decode_list(&self, llr: &[f64], list: usize, start_metric: f64) -> Result<Vec<DecodedPath>> {
        if llr.len() != self.n_code {
            return Err(Error::LengthMismatch(format!("expected {} LLRs, got {}", self.n_code, llr.len())));
        }
        let info = self.info_mask();
        let paths = scl(llr, list.max(1), start_metric, |i| if info[i] { None } else { Some(0) });
        Ok(paths
            .into_iter()
            .map(|p| {
                let bits: Vec<u8> = self.info.iter().map(|&i| p.u[i]).collect();
                let crc_ok = self.info.is_empty() || self.crc.is_none_or(|c| c.check(&bits));
                let data = bits[..self.k()].to_vec();
                DecodedPath { data, codeword: p.codeword, metric: p.metric, crc_ok }
            })
            .collect())
    }
}

/// One surviving decoder hypothesis.
#[derive(Debug, Clone, PartialEq)]
pub struct DecodedPath {
    pub data: Vec<u8>,
    pub codeword: Vec<u8>,
    pub metric: f64,
    pub crc_ok: bool,
}

#[inline]
fn boxplus(a: f64, b: f64) -> f64 {
    let s = a.signum() * b.signum();
    s * a.abs().min(b.abs()) + (-(a + b).abs()).exp().ln_1p() - (-(a - b).abs()).exp().ln_1p()
}

#[inline]
fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

#[derive(Clone)]
struct Path {
    /// LLRs per depth 1..=n (index d-1), length N >> d.
    llr: Vec<Vec<f64>>,
    /// Codeword of the last completed left child per depth 1..=n.
    left: Vec<Vec<u8>>,
    u: Vec<u8>,
    codeword: Vec<u8>,
    metric: f64,
}

struct RawPath {
    u: Vec<u8>,
    codeword: Vec<u8>,
    metric: f64,
}

impl Path {
    fn new(big_n: usize, depth: usize, metric: f64) -> Self {
        Self {
            llr: (1..=depth).map(|d| vec![0.0; big_n >> d]).collect(),
            left: (1..=depth).map(|d| vec![0u8; big_n >> d]).collect(),
            u: Vec::with_capacity(big_n),
            codeword: Vec::new(),
            metric,
        }
    }

    /// Brings the LLR of leaf `i` up to date and returns it.
    fn leaf_llr(&mut self, ch: &[f64], i: usize, depth: usize) -> f64 {
        if depth == 0 {
            return ch[0];
        }
        let start = if i == 0 { 1 } else { depth - (usize::BITS - 1 - (i ^ (i - 1)).leading_zeros()) as usize };
        for d in start..=depth {
            let half = ch.len() >> d;
            let right = (i >> (depth - d)) & 1 == 1;
            let (above, below) = self.llr.split_at_mut(d - 1);
            let parent: &[f64] = if d == 1 { ch } else { &above[d - 2] };
            let child = &mut below[0];
            if right {
                let l = &self.left[d - 1];
                for k in 0..half {
                    let sign = 1.0 - 2.0 * f64::from(l[k]);
                    child[k] = parent[k + half] + sign * parent[k];
                }
            } else {
                for k in 0..half {
                    child[k] = boxplus(parent[k], parent[k + half]);
                }
            }
        }
        self.llr[depth - 1][0]
    }

    /// Records decision `bit` for leaf `i` and propagates partial codewords.
    fn decide(&mut self, i: usize, bit: u8, depth: usize) {
        self.u.push(bit);
        let mut cur = vec![bit];
        for d in (1..=depth).rev() {
            if (i >> (depth - d)) & 1 == 0 {
                self.left[d - 1] = cur;
                return;
            }
            let l = &self.left[d - 1];
            let mut merged: Vec<u8> = l.iter().zip(&cur).map(|(a, b)| a ^ b).collect();
            merged.extend_from_slice(&cur);
            cur = merged;
        }
        self.codeword = cur;
    }
}

/// List decoder over a generic bit rule: `known(i)` gives the value of a
/// fixed leaf, `None` for a free one.
fn scl<F: Fn(usize) -> Option<u8>>(ch: &[f64], list: usize, start_metric: f64, known: F) -> Vec<RawPath> {
    let big_n = ch.len();
    let depth = big_n.trailing_zeros() as usize;
    let mut paths = vec![Path::new(big_n, depth, start_metric)];
    for i in 0..big_n {
        let llrs: Vec<f64> = paths.iter_mut().map(|p| p.leaf_llr(ch, i, depth)).collect();
        match known(i) {
            Some(b) => {
                for (p, &l) in paths.iter_mut().zip(&llrs) {
                    p.metric += softplus(-(1.0 - 2.0 * f64::from(b)) * l);
                    p.decide(i, b, depth);
                }
            }
            None => {
                let mut cand: Vec<(f64, usize, u8)> = Vec::with_capacity(2 * paths.len());
                for (j, (p, &l)) in paths.iter().zip(&llrs).enumerate() {
                    cand.push((p.metric + softplus(-l), j, 0));
                    cand.push((p.metric + softplus(l), j, 1));
                }
                cand.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
                cand.truncate(list);
                let mut next = Vec::with_capacity(cand.len());
                let mut used = vec![0usize; paths.len()];
                for &(_, j, _) in &cand {
                    used[j] += 1;
                }
                // Move a parent into its last surviving child, clone for the others.
                let mut slots: Vec<Option<Path>> = paths.into_iter().map(Some).collect();
                for (metric, j, b) in cand {
                    used[j] -= 1;
                    let mut p = if used[j] == 0 { slots[j].take().expect("parent alive") } else { slots[j].as_ref().expect("parent alive").clone() };
                    p.metric = metric;
                    p.decide(i, b, depth);
                    next.push(p);
                }
                paths = next;
            }
        }
    }
    paths.sort_by(|a, b| a.metric.total_cmp(&b.metric));
    paths.into_iter().map(|p| RawPath { u: p.u, codeword: p.codeword, metric: p.metric }).collect()
}

/// Per-leaf LLRs of genie-aided SC decoding: leaf `i` sees the true
/// `u_0..u_{i-1}`. Used for Monte Carlo code design.
pub fn genie_leaf_llrs(ch: &[f64], u_true: &[u8]) -> Vec<f64> {
    let big_n = ch.len();
    let depth = big_n.trailing_zeros() as usize;
    let mut p = Path::new(big_n, depth, 0.0);
    let mut out = Vec::with_capacity(big_n);
    for i in 0..big_n {
        out.push(p.leaf_llr(ch, i, depth));
        p.decide(i, u_true[i], depth);
    }
    out
}

/// Probability of a wrong hard decision implied by an LLR for the true bit.
pub fn soft_error(llr: f64, bit: u8) -> f64 {
    let signed = llr * (1.0 - 2.0 * f64::from(bit));
    1.0 / (1.0 + signed.exp())
}
