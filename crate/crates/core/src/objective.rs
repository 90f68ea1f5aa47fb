//! Scalar functions of the precoder: interference-plus-noise variance, rates,
//! weighted sum-rate, delay indicator, power and the composite objective
//! `g = f + α·d` with `f = −WSR`.
//!
//! Rates are in nats throughout; [`ObjectiveBreakdown::wsr_bits`] converts.

use std::f64::consts::LN_2;

use crate::channel::{ChannelSet, SystemConfig};
use crate::cvec::{norm_sqr, row_mul, C64};
use crate::error::{Error, Result};
use crate::spectral::{DelayMask, UnitaryDft};

/// Stacked precoder, layout `[user][subcarrier][antenna]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PrecoderStack {
    k: usize,
    n_v: usize,
    m: usize,
    data: Vec<C64>,
}

impl PrecoderStack {
    pub fn zeros(k: usize, n_v: usize, m: usize) -> Self {
        Self { k, n_v, m, data: vec![C64::new(0.0, 0.0); k * n_v * m] }
    }

    pub fn from_vec(k: usize, n_v: usize, m: usize, data: Vec<C64>) -> Result<Self> {
        if data.len() != k * n_v * m {
            return Err(Error::InvalidDimension(format!(
                "precoder stack needs {} entries, got {}",
                k * n_v * m,
                data.len()
            )));
        }
        Ok(Self { k, n_v, m, data })
    }

    /// Per-subcarrier matched filter `p_k^c = h_{k,c}ᴴ`, scaled onto the
    /// sphere `pᴴp = power`.
    pub fn matched_filter(ch: &ChannelSet, power: f64) -> Self {
        let (k, n_v, m) = (ch.users(), ch.subcarriers(), ch.antennas());
        let mut data = Vec::with_capacity(k * n_v * m);
        for user in 0..k {
            for c in 0..n_v {
                data.extend(ch.row(user, c).iter().map(|h| h.conj()));
            }
        }
        let mut out = Self { k, n_v, m, data };
        out.project_to_sphere(power);
        out
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

    pub fn as_slice(&self) -> &[C64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [C64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<C64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Block `p_k^c`.
    pub fn block(&self, k: usize, c: usize) -> &[C64] {
        let s = (k * self.n_v + c) * self.m;
        &self.data[s..s + self.m]
    }

    pub fn block_mut(&mut self, k: usize, c: usize) -> &mut [C64] {
        let s = (k * self.n_v + c) * self.m;
        &mut self.data[s..s + self.m]
    }

    /// User block `p_k` (all subcarriers).
    pub fn user(&self, k: usize) -> &[C64] {
        let len = self.n_v * self.m;
        &self.data[k * len..(k + 1) * len]
    }

    /// `φ(p) = pᴴp`.
    pub fn power(&self) -> f64 {
        norm_sqr(&self.data)
    }

    pub fn subcarrier_power(&self, c: usize) -> f64 {
        (0..self.k).map(|k| norm_sqr(self.block(k, c))).sum()
    }

    pub fn on_manifold(&self, power: f64) -> bool {
        ((self.power() - power) / power).abs() <= 1e-10
    }

    /// Radially rescale onto `pᴴp = power`. A zero stack is left unchanged.
    pub fn project_to_sphere(&mut self, power: f64) {
        let n = self.power().sqrt();
        if n > 0.0 {
            let s = power.sqrt() / n;
            for v in &mut self.data {
                *v *= s;
            }
        }
    }

    fn check_shape(&self, ch: &ChannelSet) -> Result<()> {
        if self.k != ch.users() || self.n_v != ch.subcarriers() || self.m != ch.antennas() {
            return Err(Error::InvalidDimension(format!(
                "precoder shape (K={}, N_v={}, M={}) does not match channel (K={}, N_v={}, M={})",
                self.k,
                self.n_v,
                self.m,
                ch.users(),
                ch.subcarriers(),
                ch.antennas()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveBreakdown {
    /// Γ_{k,c}, row-major `[user][subcarrier]`.
    pub gamma: Vec<f64>,
    /// R_{k,c} in nats, row-major `[user][subcarrier]`.
    pub rates: Vec<f64>,
    /// Weighted sum-rate in nats.
    pub wsr: f64,
    pub f: f64,
    pub d: f64,
    pub phi: f64,
    pub g: f64,
    /// ‖Hp‖², the total effective-channel energy.
    pub effective_energy: f64,
}

impl ObjectiveBreakdown {
    pub fn wsr_bits(&self) -> f64 {
        self.wsr / LN_2
    }

    /// Fraction of effective-channel energy at large delays.
    pub fn delay_energy_ratio(&self) -> f64 {
        if self.effective_energy > 0.0 {
            self.d / self.effective_energy
        } else {
            0.0
        }
    }
}

/// The CSPD problem instance: channel plus the scalars that define `g`.
#[derive(Debug, Clone)]
pub struct Problem<'a> {
    ch: &'a ChannelSet,
    sigma_z2: f64,
    weights: Vec<f64>,
    alpha: f64,
    power: f64,
    dft: UnitaryDft,
    mask: DelayMask,
}

impl<'a> Problem<'a> {
    pub fn new(ch: &'a ChannelSet, cfg: &SystemConfig) -> Result<Self> {
        if ch.users() != cfg.k || ch.subcarriers() != cfg.n_v || ch.antennas() != cfg.m() {
            return Err(Error::InvalidDimension("channel does not match config".into()));
        }
        let weights = (0..cfg.k).map(|k| cfg.weight(k)).collect();
        Ok(Self {
            ch,
            sigma_z2: cfg.sigma_z2,
            weights,
            alpha: cfg.alpha,
            power: cfg.power(),
            dft: UnitaryDft::new(cfg.n_v)?,
            mask: DelayMask::new(cfg.n_v, cfg.n_e)?,
        })
    }

    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.alpha = alpha;
        self
    }

    pub fn channel(&self) -> &ChannelSet {
        self.ch
    }

    pub fn sigma_z2(&self) -> f64 {
        self.sigma_z2
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn power(&self) -> f64 {
        self.power
    }

    pub fn dft(&self) -> &UnitaryDft {
        &self.dft
    }

    pub fn mask(&self) -> &DelayMask {
        &self.mask
    }

    pub fn stack_len(&self) -> usize {
        self.ch.stack_len()
    }

    /// `x[l][k] = h_{l,c} p_k^c` on subcarrier `c`, flattened `l·K + k`.
    pub(crate) fn cross_gains(&self, p: &[C64], c: usize) -> Vec<C64> {
        let (kk, n_v, m) = (self.ch.users(), self.ch.subcarriers(), self.ch.antennas());
        let mut x = Vec::with_capacity(kk * kk);
        for l in 0..kk {
            let h = self.ch.row(l, c);
            for k in 0..kk {
                let s = (k * n_v + c) * m;
                x.push(row_mul(h, &p[s..s + m]));
            }
        }
        x
    }

    /// Γ_{k,c} = σ² + Σ_{l≠k} |h_{k,c} p_l^c|².
    pub fn interference_variance(&self, p: &PrecoderStack, k: usize, c: usize) -> f64 {
        let h = self.ch.row(k, c);
        self.sigma_z2
            + (0..self.ch.users())
                .filter(|&l| l != k)
                .map(|l| row_mul(h, p.block(l, c)).norm_sqr())
                .sum::<f64>()
    }

    /// R_{k,c} = ln(1 + |h_{k,c} p_k^c|²/Γ_{k,c}).
    pub fn user_rate(&self, p: &PrecoderStack, k: usize, c: usize) -> f64 {
        let gamma = self.interference_variance(p, k, c);
        let s = row_mul(self.ch.row(k, c), p.block(k, c)).norm_sqr();
        (s / gamma).ln_1p()
    }

    /// Delay-domain view `M_I H_k p_k` of user `k`'s effective channel.
    pub fn delay_profile(&self, p: &[C64], k: usize) -> Vec<C64> {
        let block = self.ch.subcarriers() * self.ch.antennas();
        let eff = self
            .ch
            .apply_user(k, &p[k * block..(k + 1) * block])
            .expect("stack shape checked by caller");
        self.dft.idft(&eff)
    }

    /// f_h = ‖E_{N_e} M_I H_k p_k‖².
    pub fn delay_indicator(&self, p: &PrecoderStack, k: usize) -> f64 {
        self.mask.selected_energy(&self.delay_profile(p.as_slice(), k))
    }

    pub fn evaluate(&self, p: &PrecoderStack) -> Result<ObjectiveBreakdown> {
        p.check_shape(self.ch)?;
        Ok(self.evaluate_slice(p.as_slice()))
    }

    pub(crate) fn evaluate_slice(&self, p: &[C64]) -> ObjectiveBreakdown {
        let (kk, n_v) = (self.ch.users(), self.ch.subcarriers());
        let mut gamma = vec![0.0; kk * n_v];
        let mut rates = vec![0.0; kk * n_v];
        for c in 0..n_v {
            let x = self.cross_gains(p, c);
            for k in 0..kk {
                let interference: f64 = (0..kk)
                    .filter(|&l| l != k)
                    .map(|l| x[k * kk + l].norm_sqr())
                    .sum();
                let g = self.sigma_z2 + interference;
                gamma[k * n_v + c] = g;
                rates[k * n_v + c] = (x[k * kk + k].norm_sqr() / g).ln_1p();
            }
        }
        let wsr: f64 = (0..kk)
            .map(|k| self.weights[k] * rates[k * n_v..(k + 1) * n_v].iter().sum::<f64>())
            .sum();
        let mut d = 0.0;
        let mut effective_energy = 0.0;
        for k in 0..kk {
            let profile = self.delay_profile(p, k);
            d += self.mask.selected_energy(&profile);
            effective_energy += norm_sqr(&profile);
        }
        let f = -wsr;
        ObjectiveBreakdown {
            gamma,
            rates,
            wsr,
            f,
            d,
            phi: norm_sqr(p),
            g: f + self.alpha * d,
            effective_energy,
        }
    }
}

pub fn interference_variance(
    ch: &ChannelSet,
    p: &PrecoderStack,
    cfg: &SystemConfig,
    k: usize,
    c: usize,
) -> Result<f64> {
    Ok(Problem::new(ch, cfg)?.interference_variance(p, k, c))
}

pub fn user_rate(ch: &ChannelSet, p: &PrecoderStack, cfg: &SystemConfig, k: usize, c: usize) -> Result<f64> {
    Ok(Problem::new(ch, cfg)?.user_rate(p, k, c))
}

pub fn delay_indicator(ch: &ChannelSet, p: &PrecoderStack, cfg: &SystemConfig, k: usize) -> Result<f64> {
    Ok(Problem::new(ch, cfg)?.delay_indicator(p, k))
}

pub fn evaluate(ch: &ChannelSet, p: &PrecoderStack, cfg: &SystemConfig) -> Result<ObjectiveBreakdown> {
    Problem::new(ch, cfg)?.evaluate(p)
}
