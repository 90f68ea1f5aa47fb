//! Synthetic frequency-selective multi-user channels.
//!
//! Each user sees a tapped delay line of `L` complex-Gaussian tap vectors with
//! an exponential power-delay profile. The frequency response on subcarrier
//! `c` is `h_{k,c} = Σ_ℓ g_{k,ℓ}·exp(−j2πcℓ/N_c)`.

use std::f64::consts::PI;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use crate::config::SystemConfig;
use crate::cvec::{complex_gaussian, C64};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSet {
    k: usize,
    n_v: usize,
    m: usize,
    n_c: usize,
    n_taps: usize,
    /// Delay-domain taps, `[user][tap][antenna]`. Empty when the set was built
    /// directly from frequency rows.
    taps: Vec<C64>,
    /// Frequency rows, `[user][subcarrier][antenna]`.
    freq: Vec<C64>,
}

/// Shape information stored next to a binary tap dump.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelMeta {
    pub k: usize,
    pub taps: usize,
    pub m: usize,
    pub n_c: usize,
    pub n_v: usize,
    /// Always `"user-major, tap-major, antenna-minor, interleaved re/im, f64 little-endian"`.
    pub layout: String,
}

const LAYOUT: &str = "user-major, tap-major, antenna-minor, interleaved re/im, f64 little-endian";

/// Exponential power-delay profile normalized to unit sum.
pub fn exponential_pdp(taps: usize, decay: f64) -> Vec<f64> {
    let raw: Vec<f64> = (0..taps).map(|l| (-(l as f64) / decay).exp()).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|p| p / total).collect()
}

pub fn generate_channel<R: Rng + ?Sized>(cfg: &SystemConfig, rng: &mut R) -> Result<ChannelSet> {
    if cfg.taps > cfg.n_c {
        return Err(Error::param(
            "taps",
            format!("{} taps exceed n_c = {}", cfg.taps, cfg.n_c),
        ));
    }
    if cfg.taps == 0 {
        return Err(Error::param("taps", "must be at least 1"));
    }
    let m = cfg.m();
    let pdp = exponential_pdp(cfg.taps, cfg.pdp_decay);
    let mut taps = Vec::with_capacity(cfg.k * cfg.taps * m);
    for _ in 0..cfg.k {
        for power in &pdp {
            for _ in 0..m {
                taps.push(complex_gaussian(rng, *power));
            }
        }
    }
    ChannelSet::from_taps(cfg.k, cfg.taps, m, cfg.n_c, cfg.n_v, taps)
}

impl ChannelSet {
    pub fn from_taps(
        k: usize,
        n_taps: usize,
        m: usize,
        n_c: usize,
        n_v: usize,
        taps: Vec<C64>,
    ) -> Result<Self> {
        if taps.len() != k * n_taps * m {
            return Err(Error::InvalidDimension(format!(
                "expected {} tap coefficients, got {}",
                k * n_taps * m,
                taps.len()
            )));
        }
        if n_v > n_c || n_taps > n_c {
            return Err(Error::InvalidDimension(format!(
                "n_v = {n_v} and taps = {n_taps} must not exceed n_c = {n_c}"
            )));
        }
        let mut freq = vec![C64::new(0.0, 0.0); k * n_v * m];
        for user in 0..k {
            for c in 0..n_v {
                let row = &mut freq[(user * n_v + c) * m..(user * n_v + c + 1) * m];
                for l in 0..n_taps {
                    let phase = C64::from_polar(1.0, -2.0 * PI * ((c * l) % n_c) as f64 / n_c as f64);
                    let g = &taps[(user * n_taps + l) * m..(user * n_taps + l + 1) * m];
                    for (h, gi) in row.iter_mut().zip(g) {
                        *h += gi * phase;
                    }
                }
            }
        }
        Ok(Self { k, n_v, m, n_c, n_taps, taps, freq })
    }

    /// Build directly from frequency rows laid out `[user][subcarrier][antenna]`.
    pub fn from_frequency_rows(k: usize, n_v: usize, m: usize, rows: Vec<C64>) -> Result<Self> {
        if rows.len() != k * n_v * m {
            return Err(Error::InvalidDimension(format!(
                "expected {} channel coefficients, got {}",
                k * n_v * m,
                rows.len()
            )));
        }
        Ok(Self { k, n_v, m, n_c: n_v, n_taps: 0, taps: Vec::new(), freq: rows })
    }

    pub fn users(&self) -> usize {
        self.k
    }

    pub fn subcarriers(&self) -> usize {
        self.n_v
    }

    pub fn antennas(&self) -> usize {
        self.m
    }

    pub fn total_subcarriers(&self) -> usize {
        self.n_c
    }

    pub fn tap_count(&self) -> usize {
        self.n_taps
    }

    pub fn stack_len(&self) -> usize {
        self.k * self.n_v * self.m
    }

    /// Row vector `h_{k,c}`.
    pub fn row(&self, k: usize, c: usize) -> &[C64] {
        let start = (k * self.n_v + c) * self.m;
        &self.freq[start..start + self.m]
    }

    pub fn tap(&self, k: usize, l: usize) -> &[C64] {
        let start = (k * self.n_taps + l) * self.m;
        &self.taps[start..start + self.m]
    }

    pub fn taps(&self) -> &[C64] {
        &self.taps
    }

    /// Copy with subcarriers reordered so new subcarrier `i` is old `perm[i]`.
    pub fn permute_subcarriers(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.n_v {
            return Err(Error::InvalidDimension("permutation length".into()));
        }
        let mut rows = Vec::with_capacity(self.freq.len());
        for k in 0..self.k {
            for &c in perm {
                rows.extend_from_slice(self.row(k, c));
            }
        }
        Self::from_frequency_rows(self.k, self.n_v, self.m, rows)
    }

    /// `H_k p_k`: the `N_v` effective channels `h_{k,c} p_k^c` of one user.
    pub fn apply_user(&self, k: usize, p_k: &[C64]) -> Result<Vec<C64>> {
        if p_k.len() != self.n_v * self.m {
            return Err(Error::InvalidDimension(format!(
                "user block has length {}, expected {}",
                p_k.len(),
                self.n_v * self.m
            )));
        }
        Ok(p_k
            .chunks_exact(self.m)
            .enumerate()
            .map(|(c, pc)| crate::cvec::row_mul(self.row(k, c), pc))
            .collect())
    }

    /// `H p` for the full stack, returning `K·N_v` scalars in user-major order.
    pub fn apply(&self, p: &[C64]) -> Result<Vec<C64>> {
        if p.len() != self.stack_len() {
            return Err(Error::InvalidDimension(format!(
                "stack has length {}, expected {}",
                p.len(),
                self.stack_len()
            )));
        }
        let block = self.n_v * self.m;
        let mut out = Vec::with_capacity(self.k * self.n_v);
        for k in 0..self.k {
            out.extend(self.apply_user(k, &p[k * block..(k + 1) * block])?);
        }
        Ok(out)
    }

    /// `H_kᴴ v` for an `N_v`-vector `v`.
    pub fn adjoint_user(&self, k: usize, v: &[C64]) -> Result<Vec<C64>> {
        if v.len() != self.n_v {
            return Err(Error::InvalidDimension("adjoint input length".into()));
        }
        let mut out = Vec::with_capacity(self.n_v * self.m);
        for (c, vc) in v.iter().enumerate() {
            out.extend(self.row(k, c).iter().map(|h| h.conj() * vc));
        }
        Ok(out)
    }

    /// RMS delay spread (in taps) of one user's power-delay profile.
    pub fn rms_delay_spread(&self, k: usize) -> f64 {
        let powers: Vec<f64> = (0..self.n_taps)
            .map(|l| crate::cvec::norm_sqr(self.tap(k, l)))
            .collect();
        let total: f64 = powers.iter().sum();
        if total == 0.0 {
            return 0.0;
        }
        let mean: f64 = powers.iter().enumerate().map(|(l, p)| l as f64 * p).sum::<f64>() / total;
        let second: f64 = powers
            .iter()
            .enumerate()
            .map(|(l, p)| (l as f64).powi(2) * p)
            .sum::<f64>()
            / total;
        (second - mean * mean).max(0.0).sqrt()
    }

    pub fn meta(&self) -> ChannelMeta {
        ChannelMeta {
            k: self.k,
            taps: self.n_taps,
            m: self.m,
            n_c: self.n_c,
            n_v: self.n_v,
            layout: LAYOUT.to_string(),
        }
    }

    pub fn write_taps<W: Write>(&self, mut w: W) -> Result<()> {
        for t in &self.taps {
            w.write_all(&t.re.to_le_bytes())?;
            w.write_all(&t.im.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_taps<R: Read>(meta: &ChannelMeta, mut r: R) -> Result<Self> {
        let count = meta.k * meta.taps * meta.m;
        let mut buf = [0u8; 8];
        let mut taps = Vec::with_capacity(count);
        for _ in 0..count {
            r.read_exact(&mut buf)?;
            let re = f64::from_le_bytes(buf);
            r.read_exact(&mut buf)?;
            let im = f64::from_le_bytes(buf);
            taps.push(C64::new(re, im));
        }
        Self::from_taps(meta.k, meta.taps, meta.m, meta.n_c, meta.n_v, taps)
    }

    /// Write `<stem>.bin` (raw taps) and `<stem>.json` (shape). Returns both paths.
    pub fn dump(&self, stem: &Path) -> Result<(PathBuf, PathBuf)> {
        if self.taps.is_empty() {
            return Err(Error::InvalidInput("channel has no delay-domain taps to dump".into()));
        }
        let bin = stem.with_extension("bin");
        let json = stem.with_extension("json");
        let file = std::fs::File::create(&bin)?;
        let mut w = std::io::BufWriter::new(file);
        self.write_taps(&mut w)?;
        w.flush()?;
        std::fs::write(&json, serde_json::to_string_pretty(&self.meta())?)?;
        Ok((bin, json))
    }

    pub fn load(stem: &Path) -> Result<Self> {
        let meta: ChannelMeta =
            serde_json::from_str(&std::fs::read_to_string(stem.with_extension("json"))?)?;
        let file = std::fs::File::open(stem.with_extension("bin"))?;
        Self::read_taps(&meta, std::io::BufReader::new(file))
    }
}
