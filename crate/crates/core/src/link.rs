//! Downlink evaluation chain: comb-pilot MMSE estimation of each user's
//! effective channel, QPSK over all subcarriers, scalar MMSE detection and
//! the NMSE / BER figures of merit.

use std::f64::consts::FRAC_1_SQRT_2;

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::channel::ChannelSet;
use crate::config::{PriorMode, SystemConfig};
use crate::cvec::{complex_gaussian, norm_sqr, row_mul, C64};
use crate::error::{Error, Result};
use crate::objective::{PrecoderStack, Problem};
use crate::spectral::{pilot_values, UnitaryDft};

/// Ridge added when the pilot-domain covariance is singular.
pub const RIDGE: f64 = 1e-12;

/// One user's effective channel `h̄_c = h_{k,c} p_k^c` in both domains.
#[derive(Debug, Clone, PartialEq)]
pub struct EffectiveChannel {
    pub h_f: Vec<C64>,
    /// Unitary IDFT of `h_f`.
    pub h_d: Vec<C64>,
}

impl EffectiveChannel {
    pub fn from_frequency(h_f: Vec<C64>) -> Result<Self> {
        let h_d = UnitaryDft::new(h_f.len())?.idft(&h_f);
        Ok(Self { h_f, h_d })
    }

    pub fn energy(&self) -> f64 {
        norm_sqr(&self.h_f)
    }

    /// Delay-domain energy at delays `≥ n_e`.
    pub fn energy_beyond(&self, n_e: usize) -> f64 {
        self.h_d.iter().skip(n_e).map(|v| v.norm_sqr()).sum()
    }

    /// Fraction of the energy at delays `≥ n_e`; zero for a zero channel.
    pub fn delay_energy_ratio(&self, n_e: usize) -> f64 {
        let total = self.energy();
        if total == 0.0 {
            0.0
        } else {
            self.energy_beyond(n_e) / total
        }
    }
}

pub fn effective_channel(ch: &ChannelSet, p: &PrecoderStack, k: usize) -> Result<EffectiveChannel> {
    if k >= ch.users() {
        return Err(Error::InvalidInput(format!("user {k} out of range")));
    }
    if p.users() != ch.users() || p.subcarriers() != ch.subcarriers() || p.antennas() != ch.antennas() {
        return Err(Error::InvalidDimension("precoder does not match channel".into()));
    }
    EffectiveChannel::from_frequency(ch.apply_user(k, p.user(k))?)
}

/// Diagonal delay-power prior `Λ` over the first `N_d` delays.
#[derive(Debug, Clone, PartialEq)]
pub struct DelayPrior {
    lambda: Vec<f64>,
}

impl DelayPrior {
    pub fn new(lambda: Vec<f64>) -> Result<Self> {
        if lambda.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvalidInput("delay prior entries must be finite and >= 0".into()));
        }
        Ok(Self { lambda })
    }

    /// `N_d` equal entries `ω`.
    pub fn flat(n_d: usize, omega: f64) -> Result<Self> {
        Self::new(vec![omega; n_d])
    }

    /// Flat prior over `n_d` delays matching the energy of `h_f`:
    /// `ω = ‖h_f‖² / N_d`.
    pub fn flat_for(h_f: &[C64], n_d: usize) -> Result<Self> {
        if n_d == 0 {
            return Self::new(Vec::new());
        }
        Self::flat(n_d, norm_sqr(h_f) / n_d as f64)
    }

    /// Mean delay-power profile `E|h_d[d]|²` over the given realizations.
    pub fn from_profiles<'a, I>(profiles: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a [C64]>,
    {
        let mut acc: Vec<f64> = Vec::new();
        let mut count = 0usize;
        for h_d in profiles {
            if acc.is_empty() {
                acc = vec![0.0; h_d.len()];
            } else if acc.len() != h_d.len() {
                return Err(Error::InvalidDimension("delay profiles differ in length".into()));
            }
            for (a, v) in acc.iter_mut().zip(h_d) {
                *a += v.norm_sqr();
            }
            count += 1;
        }
        if count == 0 {
            return Err(Error::InvalidInput("no delay profiles".into()));
        }
        Self::new(acc.into_iter().map(|a| a / count as f64).collect())
    }

    pub fn n_d(&self) -> usize {
        self.lambda.len()
    }

    pub fn diagonal(&self) -> &[f64] {
        &self.lambda
    }
}

/// Comb pilots: known symbols on every `interval`-th subcarrier.
#[derive(Debug, Clone, PartialEq)]
pub struct CombPilots {
    n_v: usize,
    positions: Vec<usize>,
    values: Vec<C64>,
}

impl CombPilots {
    pub fn new(n_v: usize, interval: usize, root: usize) -> Result<Self> {
        if interval == 0 {
            return Err(Error::param("pilot_interval", "must be at least 1"));
        }
        let positions: Vec<usize> = (0..n_v).step_by(interval).collect();
        let values = pilot_values(positions.len(), root)?.values;
        Ok(Self { n_v, positions, values })
    }

    pub fn positions(&self) -> &[usize] {
        &self.positions
    }

    pub fn values(&self) -> &[C64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn subcarriers(&self) -> usize {
        self.n_v
    }

    /// Received pilots `y_p = X h_f[pilots] + z`, `z ~ CN(0, σ²I)`.
    pub fn transmit<R: Rng + ?Sized>(&self, h_f: &[C64], sigma_z2: f64, rng: &mut R) -> Vec<C64> {
        self.positions
            .iter()
            .zip(&self.values)
            .map(|(&c, x)| x * h_f[c] + complex_gaussian(rng, sigma_z2))
            .collect()
    }

    /// Partial DFT `U_f` restricted to rows `rows`, entries `e^{−j2πcd/N_v}/√N_v`.
    fn partial_dft(&self, rows: &[usize], n_d: usize) -> DMatrix<C64> {
        let dft = UnitaryDft::new(self.n_v.max(1)).expect("nonzero size");
        DMatrix::from_fn(rows.len(), n_d, |i, d| dft.inverse_entry(d, rows[i]).conj())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelEstimate {
    pub h_f: Vec<C64>,
    /// The pilot covariance was singular and a ridge of [`RIDGE`] was added.
    pub regularized: bool,
}

/// LMMSE estimate of `h_f = U_f h̃` from `y_p = X U_p h̃ + z` with
/// `h̃ ~ CN(0, Λ)`: `ĥ = U_f Λ Bᴴ (BΛBᴴ + σ²I)⁻¹ y_p`, `B = X U_p`.
pub fn mmse_estimate(y: &[C64], pilots: &CombPilots, prior: &DelayPrior, sigma_z2: f64) -> Result<ChannelEstimate> {
    if y.len() != pilots.len() {
        return Err(Error::InvalidDimension(format!("{} pilot observations for {} pilots", y.len(), pilots.len())));
    }
    if !(sigma_z2 >= 0.0) {
        return Err(Error::param("sigma_z2", "must be >= 0"));
    }
    let n_v = pilots.subcarriers();
    let n_d = prior.n_d();
    if n_d > n_v {
        return Err(Error::InvalidDimension(format!("prior has {n_d} delays for {n_v} subcarriers")));
    }
    let n_p = pilots.len();
    if n_d == 0 || n_p == 0 {
        return Ok(ChannelEstimate { h_f: vec![C64::new(0.0, 0.0); n_v], regularized: false });
    }
    let lambda = prior.diagonal();
    let mut b = pilots.partial_dft(pilots.positions(), n_d);
    for (i, x) in pilots.values().iter().enumerate() {
        b.row_mut(i).iter_mut().for_each(|v| *v *= x);
    }
    // BΛ
    let mut b_lambda = b.clone();
    for (d, l) in lambda.iter().enumerate() {
        b_lambda.column_mut(d).iter_mut().for_each(|v| *v *= l);
    }
    let mut cov = &b_lambda * b.adjoint();
    for i in 0..n_p {
        cov[(i, i)] += C64::new(sigma_z2, 0.0);
    }
    let positive = lambda.iter().filter(|l| **l > 0.0).count();
    let singular = sigma_z2 == 0.0 && positive < n_p;
    let (chol, regularized) = match (singular, cov.clone().cholesky()) {
        (false, Some(c)) => (c, false),
        _ => {
            for i in 0..n_p {
                cov[(i, i)] += C64::new(RIDGE, 0.0);
            }
            let c = cov
                .cholesky()
                .ok_or_else(|| Error::Solver("pilot covariance not positive definite after ridge".into()))?;
            (c, true)
        }
    };
    let w = chol.solve(&DVector::from_column_slice(y));
    let h_tilde = b_lambda.adjoint() * w;
    let all: Vec<usize> = (0..n_v).collect();
    let h_f = pilots.partial_dft(&all, n_d) * h_tilde;
    Ok(ChannelEstimate { h_f: h_f.as_slice().to_vec(), regularized })
}

/// Least-squares fit of the first `n_d` delay taps to the pilots,
/// interpolated to all subcarriers. Needs `n_d ≤` pilot count.
pub fn ls_truncated_estimate(y: &[C64], pilots: &CombPilots, n_d: usize) -> Result<Vec<C64>> {
    if y.len() != pilots.len() {
        return Err(Error::InvalidDimension("pilot observation count".into()));
    }
    if n_d > pilots.len() {
        return Err(Error::InvalidInput(format!("{n_d} taps from {} pilots is underdetermined", pilots.len())));
    }
    let mut b = pilots.partial_dft(pilots.positions(), n_d);
    for (i, x) in pilots.values().iter().enumerate() {
        b.row_mut(i).iter_mut().for_each(|v| *v *= x);
    }
    let normal = b.adjoint() * &b;
    let rhs = b.adjoint() * DVector::from_column_slice(y);
    let taps = normal
        .cholesky()
        .ok_or_else(|| Error::Solver("rank-deficient least-squares system".into()))?
        .solve(&rhs);
    let all: Vec<usize> = (0..pilots.subcarriers()).collect();
    Ok((pilots.partial_dft(&all, n_d) * taps).as_slice().to_vec())
}

/// Gray-mapped QPSK: `(b0, b1) ↦ ((1 − 2b0) + j(1 − 2b1))/√2`.
pub fn qpsk_mod(bits: &[bool]) -> Result<Vec<C64>> {
    if !bits.len().is_multiple_of(2) {
        return Err(Error::InvalidInput(format!("QPSK needs an even bit count, got {}", bits.len())));
    }
    let level = |b: bool| if b { -FRAC_1_SQRT_2 } else { FRAC_1_SQRT_2 };
    Ok(bits.chunks_exact(2).map(|pair| C64::new(level(pair[0]), level(pair[1]))).collect())
}

/// Nearest-quadrant decision.
pub fn qpsk_demod(symbols: &[C64]) -> Vec<bool> {
    symbols.iter().flat_map(|s| [s.re < 0.0, s.im < 0.0]).collect()
}

/// `x̂ = ĥ* y / (|ĥ|² + Γ)`.
pub fn mmse_detect(y: C64, h_est: C64, gamma: f64) -> Result<C64> {
    if !(gamma >= 0.0) {
        return Err(Error::param("gamma", "interference variance must be >= 0"));
    }
    let denom = h_est.norm_sqr() + gamma;
    if denom == 0.0 {
        return Err(Error::Undetectable);
    }
    Ok(h_est.conj() * y / denom)
}

/// `‖h_est − h_true‖² / ‖h_true‖²`.
pub fn nmse(h_true: &[C64], h_est: &[C64]) -> Result<f64> {
    if h_true.len() != h_est.len() {
        return Err(Error::InvalidInput("NMSE inputs differ in length".into()));
    }
    let reference = norm_sqr(h_true);
    if reference == 0.0 {
        return Err(Error::UndefinedNmse);
    }
    let err: f64 = h_true.iter().zip(h_est).map(|(a, b)| (a - b).norm_sqr()).sum();
    Ok(err / reference)
}

/// Fraction of differing bits.
pub fn ber(tx: &[bool], rx: &[bool]) -> Result<f64> {
    if tx.len() != rx.len() {
        return Err(Error::InvalidInput("bit streams differ in length".into()));
    }
    if tx.is_empty() {
        return Err(Error::InvalidInput("empty bit stream".into()));
    }
    Ok(bit_errors(tx, rx) as f64 / tx.len() as f64)
}

fn bit_errors(tx: &[bool], rx: &[bool]) -> u64 {
    tx.iter().zip(rx).filter(|(a, b)| a != b).count() as u64
}

fn random_bits<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<bool> {
    (0..n).map(|_| rng.random()).collect()
}

/// QPSK over AWGN at the given `E_b/N_0` (dB). Returns `(bit errors, bits)`.
pub fn simulate_awgn_qpsk<R: Rng + ?Sized>(ebn0_db: f64, n_symbols: usize, rng: &mut R) -> (u64, u64) {
    // unit symbol energy, two bits per symbol
    let n0 = 1.0 / (2.0 * 10f64.powf(ebn0_db / 10.0));
    let tx = random_bits(rng, 2 * n_symbols);
    let symbols = qpsk_mod(&tx).expect("even bit count");
    let rx: Vec<C64> = symbols.iter().map(|s| s + complex_gaussian(rng, n0)).collect();
    let decided = qpsk_demod(&rx);
    (bit_errors(&tx, &decided), tx.len() as u64)
}

/// Link-level outcome of one channel realization.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkStats {
    /// Per-user NMSE of the effective-channel estimate.
    pub nmse: Vec<f64>,
    pub bit_errors: u64,
    pub bits: u64,
    /// Any user's estimator needed the ridge fallback.
    pub regularized: bool,
    /// Subcarrier-symbols that could not be detected (counted as errors).
    pub undetectable: u64,
}

impl LinkStats {
    pub fn mean_nmse(&self) -> f64 {
        self.nmse.iter().sum::<f64>() / self.nmse.len() as f64
    }

    pub fn ber(&self) -> f64 {
        self.bit_errors as f64 / self.bits as f64
    }
}

/// Estimate every user's effective channel from one pilot symbol, then send
/// `data_symbols` OFDM symbols of QPSK from all users at once and detect
/// each stream with the estimated channel and the known `Γ_{k,c}`.
///
/// `genie_prior` supplies the delay prior when `cfg.prior` is `Genie`.
pub fn simulate_link<R: Rng + ?Sized>(
    ch: &ChannelSet,
    p: &PrecoderStack,
    cfg: &SystemConfig,
    data_symbols: usize,
    genie_prior: Option<&DelayPrior>,
    rng: &mut R,
) -> Result<LinkStats> {
    let (k_users, n_v) = (ch.users(), ch.subcarriers());
    let pilots = CombPilots::new(n_v, cfg.pilot_interval, cfg.pilot_root)?;
    let problem = Problem::new(ch, cfg)?;

    let mut estimates = Vec::with_capacity(k_users);
    let mut nmse_per_user = Vec::with_capacity(k_users);
    let mut regularized = false;
    for k in 0..k_users {
        let eff = effective_channel(ch, p, k)?;
        let prior = match (cfg.prior, genie_prior) {
            (PriorMode::Flat, _) => DelayPrior::flat_for(&eff.h_f, cfg.n_e)?,
            (PriorMode::Genie, Some(prior)) => prior.clone(),
            (PriorMode::Genie, None) => DelayPrior::from_profiles([eff.h_d.as_slice()])?,
        };
        let y = pilots.transmit(&eff.h_f, cfg.sigma_z2, rng);
        let est = mmse_estimate(&y, &pilots, &prior, cfg.sigma_z2)?;
        regularized |= est.regularized;
        nmse_per_user.push(nmse(&eff.h_f, &est.h_f)?);
        estimates.push(est.h_f);
    }

    let gamma: Vec<Vec<f64>> = (0..k_users)
        .map(|k| (0..n_v).map(|c| problem.interference_variance(p, k, c)).collect())
        .collect();
    // cross gains h_{k,c} p_l^c
    let gains: Vec<Vec<C64>> = (0..n_v)
        .map(|c| {
            let mut g = Vec::with_capacity(k_users * k_users);
            for k in 0..k_users {
                for l in 0..k_users {
                    g.push(row_mul(ch.row(k, c), p.block(l, c)));
                }
            }
            g
        })
        .collect();

    let mut errors = 0u64;
    let mut bits = 0u64;
    let mut undetectable = 0u64;
    for _ in 0..data_symbols {
        for (c, g) in gains.iter().enumerate() {
            let tx_bits = random_bits(rng, 2 * k_users);
            let x = qpsk_mod(&tx_bits)?;
            for k in 0..k_users {
                let received: C64 = (0..k_users).map(|l| g[k * k_users + l] * x[l]).sum::<C64>()
                    + complex_gaussian(rng, cfg.sigma_z2);
                let sent = &tx_bits[2 * k..2 * k + 2];
                bits += 2;
                match mmse_detect(received, estimates[k][c], gamma[k][c]) {
                    Ok(xhat) => errors += bit_errors(sent, &qpsk_demod(&[xhat])),
                    Err(Error::Undetectable) => {
                        undetectable += 1;
                        errors += 2;
                    }
                    Err(e) => return Err(e),
                }
            }
        }
    }
    Ok(LinkStats { nmse: nmse_per_user, bit_errors: errors, bits, regularized, undetectable })
}
