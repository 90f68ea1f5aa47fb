//! Unitary DFT/IDFT, the large-delay selector, and Zadoff-Chu pilots.
//!
//! Transforms are dense `n × n` matrices with `1/√n` normalization so that
//! delay-domain energy equals frequency-domain energy.

use std::f64::consts::PI;

use crate::cvec::C64;
use crate::error::{Error, Result};

/// Unitary inverse DFT of size `n`, entry `(a, b) = exp(+j2πab/n)/√n`.
///
/// The forward transform is its conjugate transpose.
#[derive(Debug, Clone)]
pub struct UnitaryDft {
    n: usize,
    inverse: Vec<C64>,
}

pub fn idft_matrix(n: usize) -> Result<UnitaryDft> {
    UnitaryDft::new(n)
}

impl UnitaryDft {
    pub fn new(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidDimension("DFT size must be at least 1".into()));
        }
        let scale = 1.0 / (n as f64).sqrt();
        let mut inverse = Vec::with_capacity(n * n);
        for a in 0..n {
            for b in 0..n {
                // reduce the exponent mod n before forming the angle
                let k = (a * b) % n;
                inverse.push(C64::from_polar(scale, 2.0 * PI * k as f64 / n as f64));
            }
        }
        Ok(Self { n, inverse })
    }

    pub fn size(&self) -> usize {
        self.n
    }

    /// Entry `(a, b)` of the inverse transform matrix.
    pub fn inverse_entry(&self, a: usize, b: usize) -> C64 {
        self.inverse[a * self.n + b]
    }

    /// Delay domain from frequency domain: `M_I x`.
    pub fn idft(&self, x: &[C64]) -> Vec<C64> {
        assert_eq!(x.len(), self.n, "idft length mismatch");
        self.inverse
            .chunks_exact(self.n)
            .map(|row| row.iter().zip(x).map(|(m, v)| m * v).sum())
            .collect()
    }

    /// Frequency domain from delay domain: `M_Iᴴ x`.
    pub fn dft(&self, x: &[C64]) -> Vec<C64> {
        assert_eq!(x.len(), self.n, "dft length mismatch");
        let mut out = vec![C64::new(0.0, 0.0); self.n];
        for (row, xa) in self.inverse.chunks_exact(self.n).zip(x) {
            for (o, m) in out.iter_mut().zip(row) {
                *o += m.conj() * xa;
            }
        }
        out
    }
}

/// Diagonal 0/1 selector that keeps delays `>= n_e` out of `n_v`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DelayMask {
    n_v: usize,
    n_e: usize,
}

pub fn delay_mask(n_v: usize, n_e: usize) -> Result<DelayMask> {
    DelayMask::new(n_v, n_e)
}

impl DelayMask {
    pub fn new(n_v: usize, n_e: usize) -> Result<Self> {
        if n_e > n_v {
            return Err(Error::param(
                "n_e",
                format!("delay cutoff {n_e} exceeds subcarrier count {n_v}"),
            ));
        }
        Ok(Self { n_v, n_e })
    }

    pub fn size(&self) -> usize {
        self.n_v
    }

    pub fn cutoff(&self) -> usize {
        self.n_e
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n_v)
            .map(|i| if i < self.n_e { 0.0 } else { 1.0 })
            .collect()
    }

    /// The complementary selector (keeps the first `n_e` delays).
    pub fn complement_diagonal(&self) -> Vec<f64> {
        self.diagonal().into_iter().map(|d| 1.0 - d).collect()
    }

    pub fn apply_in_place(&self, x: &mut [C64]) {
        assert_eq!(x.len(), self.n_v, "mask length mismatch");
        for v in &mut x[..self.n_e] {
            *v = C64::new(0.0, 0.0);
        }
    }

    /// Energy of the selected (large-delay) entries.
    pub fn selected_energy(&self, x: &[C64]) -> f64 {
        x[self.n_e..].iter().map(|v| v.norm_sqr()).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PilotSequence {
    pub root: usize,
    pub values: Vec<C64>,
}

impl PilotSequence {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

fn gcd(mut a: usize, mut b: usize) -> usize {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// Zadoff-Chu sequence of odd length `n_p`, element `c` = `exp(−jπ·u·c·(c+1)/n_p)`.
pub fn zadoff_chu(n_p: usize, u: usize) -> Result<PilotSequence> {
    if n_p == 0 || n_p.is_multiple_of(2) {
        return Err(Error::param("n_p", format!("length {n_p} must be odd")));
    }
    if gcd(u, n_p) != 1 {
        return Err(Error::param(
            "u",
            format!("root {u} is not coprime with length {n_p}"),
        ));
    }
    let values = (0..n_p)
        .map(|c| {
            // c(c+1) is even, so the phase reduces exactly mod 2·n_p
            let k = ((u % (2 * n_p)) * ((c * (c + 1)) % (2 * n_p))) % (2 * n_p);
            C64::from_polar(1.0, -PI * k as f64 / n_p as f64)
        })
        .collect();
    Ok(PilotSequence { root: u, values })
}

pub fn is_prime(n: usize) -> bool {
    if n < 2 {
        return false;
    }
    let mut d = 2;
    while d * d <= n {
        if n.is_multiple_of(d) {
            return false;
        }
        d += 1;
    }
    true
}

pub fn largest_prime_at_most(n: usize) -> Option<usize> {
    (2..=n).rev().find(|&k| is_prime(k))
}

/// Pilot values for `n_pilots` positions: a ZC sequence of the largest prime
/// length that fits, repeated cyclically over the remaining positions.
///
/// Fewer than three positions fall back to all-ones, since no odd prime fits.
pub fn pilot_values(n_pilots: usize, root: usize) -> Result<PilotSequence> {
    let len = match largest_prime_at_most(n_pilots) {
        Some(p) if p >= 3 => p,
        _ => {
            return Ok(PilotSequence {
                root,
                values: vec![C64::new(1.0, 0.0); n_pilots],
            })
        }
    };
    // the root must stay coprime with the chosen prime length
    let u = if root.is_multiple_of(len) { 1 } else { root % len };
    let zc = zadoff_chu(len, u)?;
    let values = (0..n_pilots).map(|i| zc.values[i % len]).collect();
    Ok(PilotSequence { root: u, values })
}
