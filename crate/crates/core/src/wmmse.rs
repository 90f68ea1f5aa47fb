//! Per-subcarrier weighted-MMSE baseline.
//!
//! Each subcarrier is solved independently under its own power budget
//! `P_c`. One outer iteration updates the MMSE receive scalars `u`, the
//! weights `ρ = 1/MSE` and then the precoders
//! `p_k = w_k ρ_k u_k (Σ_l w_l ρ_l |u_l|² h_lᴴh_l + νI)⁻¹ h_kᴴ`.
//! The precoder update is evaluated through the `K×K` system
//! `(HHᴴ + νD⁻¹) X = diag(1/u*)`, `P = HᴴX`, with `D = diag(w ρ |u|²)`,
//! solved in the symmetrically scaled form `S = D^{1/2}`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::channel::{ChannelSet, SystemConfig};
use crate::config::LinearSolver;
use crate::cvec::{dot, norm, norm_sqr, re_dot, row_mul, C64};
use crate::error::{Error, Result};
use crate::objective::PrecoderStack;

/// Iteration counts of the two baseline operating points.
pub const SHORT_ITERS: usize = 40;
pub const LONG_ITERS: usize = 150;

/// Solve `A x = b` for a Hermitian positive-definite `A` given as a map.
/// Stops when `‖b − Ax‖ ≤ tol·‖b‖`.
pub fn cg_solve<F>(op: F, rhs: &[C64], tol: f64) -> Result<Vec<C64>>
where
    F: Fn(&[C64]) -> Vec<C64>,
{
    let n = rhs.len();
    let target = tol * norm(rhs);
    let mut x = vec![C64::new(0.0, 0.0); n];
    if norm(rhs) == 0.0 {
        return Ok(x);
    }
    let mut r = rhs.to_vec();
    let mut d = r.clone();
    let mut rr = norm_sqr(&r);
    for _ in 0..n + 10 {
        if rr.sqrt() <= target {
            return Ok(x);
        }
        let ad = op(&d);
        let curv = re_dot(&d, &ad);
        if !(curv > 0.0) {
            return Err(Error::Solver("operator is not positive definite".into()));
        }
        let step = rr / curv;
        for i in 0..n {
            x[i] += d[i] * step;
            r[i] -= ad[i] * step;
        }
        let rr_next = norm_sqr(&r);
        let beta = rr_next / rr;
        for i in 0..n {
            d[i] = r[i] + d[i] * beta;
        }
        rr = rr_next;
    }
    if rr.sqrt() <= target {
        return Ok(x);
    }
    Err(Error::Solver(format!("conjugate gradient did not converge in {} iterations", n + 10)))
}

/// State of one subcarrier.
#[derive(Debug, Clone, PartialEq)]
pub struct WmmseState {
    /// Precoders `[user][antenna]`.
    pub p: Vec<C64>,
    pub u: Vec<C64>,
    pub rho: Vec<f64>,
    pub nu: f64,
    pub iteration: usize,
}

#[derive(Debug, Clone)]
pub struct WmmseOutcome {
    pub precoder: PrecoderStack,
    /// Weighted sum rate in nats, before the first and after every outer iteration.
    pub wsr_trace: Vec<f64>,
    pub states: Vec<WmmseState>,
}

/// Rows `h_{k,c}` of one subcarrier plus its scalars.
struct Subcarrier<'a> {
    rows: Vec<&'a [C64]>,
    m: usize,
    weights: &'a [f64],
    sigma2: f64,
    budget: f64,
    solver: LinearSolver,
    index: usize,
}

impl Subcarrier<'_> {
    fn k(&self) -> usize {
        self.rows.len()
    }

    fn gain(&self, p: &[C64], k: usize, l: usize) -> C64 {
        row_mul(self.rows[k], &p[l * self.m..(l + 1) * self.m])
    }

    /// Returns `(T_k, Γ_k, h_k p_k)` per user.
    fn signal_terms(&self, p: &[C64]) -> Vec<(f64, f64, C64)> {
        (0..self.k())
            .map(|k| {
                let mut total = self.sigma2;
                let mut own = C64::new(0.0, 0.0);
                for l in 0..self.k() {
                    let g = self.gain(p, k, l);
                    total += g.norm_sqr();
                    if l == k {
                        own = g;
                    }
                }
                (total, total - own.norm_sqr(), own)
            })
            .collect()
    }

    fn wsr(&self, p: &[C64]) -> f64 {
        self.signal_terms(p)
            .iter()
            .enumerate()
            .map(|(k, (_, gamma, own))| self.weights[k] * (own.norm_sqr() / gamma).ln_1p())
            .sum()
    }

    fn initial(&self) -> WmmseState {
        let k = self.k();
        let share = (self.budget / k as f64).sqrt();
        let mut p = Vec::with_capacity(k * self.m);
        for row in &self.rows {
            let n = norm(row);
            if n == 0.0 {
                p.extend(std::iter::repeat_n(C64::new(0.0, 0.0), self.m));
            } else {
                p.extend(row.iter().map(|h| h.conj() * (share / n)));
            }
        }
        WmmseState { p, u: vec![C64::new(0.0, 0.0); k], rho: vec![0.0; k], nu: 0.0, iteration: 0 }
    }

    /// Solve `(SGS + νI) Y = S·diag(1/u*)` with `S = D^{1/2}` over the
    /// `active` users and return `p_k = Σ_j h_jᴴ s_j Y_{jk}`, zero for
    /// inactive users. This is the `(G + νD⁻¹) X = diag(1/u*)` system
    /// rescaled so that vanishing `u_k` stays well conditioned.
    fn precoders(&self, active: &[usize], s: &[f64], phase: &[C64], nu: f64) -> Result<Vec<C64>> {
        let n = active.len();
        let mut p = vec![C64::new(0.0, 0.0); self.k() * self.m];
        if n == 0 {
            return Ok(p);
        }
        let scaled_gram = DMatrix::<C64>::from_fn(n, n, |i, j| {
            let (a, b) = (active[i], active[j]);
            // (HHᴴ)_{ab} = h_a h_bᴴ
            let g: C64 = self.rows[a].iter().zip(self.rows[b]).map(|(x, y)| x * y.conj()).sum();
            g * (s[a] * s[b])
        });
        let rhs_diag: Vec<C64> = active.iter().map(|&k| phase[k]).collect();
        let mut y = DMatrix::<C64>::zeros(n, n);
        match self.solver {
            LinearSolver::Direct => {
                let mut b = scaled_gram;
                for i in 0..n {
                    b[(i, i)] += C64::new(nu, 0.0);
                }
                let chol = b
                    .cholesky()
                    .ok_or_else(|| Error::Solver(format!("singular system on subcarrier {}", self.index)))?;
                y = chol.solve(&DMatrix::from_diagonal(&DVector::from_vec(rhs_diag)));
            }
            LinearSolver::ConjugateGradient => {
                let op = |v: &[C64]| -> Vec<C64> {
                    let w = &scaled_gram * DVector::from_column_slice(v);
                    (0..n).map(|i| w[i] + v[i] * nu).collect()
                };
                for (i, r) in rhs_diag.iter().enumerate() {
                    let mut rhs = vec![C64::new(0.0, 0.0); n];
                    rhs[i] = *r;
                    let col = cg_solve(op, &rhs, 1e-13)?;
                    for (j, v) in col.into_iter().enumerate() {
                        y[(j, i)] = v;
                    }
                }
            }
        }
        for (i, &k) in active.iter().enumerate() {
            let block = &mut p[k * self.m..(k + 1) * self.m];
            for (j, &kj) in active.iter().enumerate() {
                let coef = y[(j, i)] * s[kj];
                for (b, h) in block.iter_mut().zip(self.rows[kj]) {
                    *b += h.conj() * coef;
                }
            }
        }
        Ok(p)
    }

    fn step(&self, state: &WmmseState) -> Result<WmmseState> {
        let k = self.k();
        let terms = self.signal_terms(&state.p);
        let mut u = vec![C64::new(0.0, 0.0); k];
        let mut rho = vec![0.0; k];
        // s_k = √(w_k ρ_k)|u_k| and s_k / u_k* = √(w_k ρ_k) u_k/|u_k|
        let mut s = vec![0.0; k];
        let mut phase = vec![C64::new(0.0, 0.0); k];
        for (i, (total, gamma, own)) in terms.iter().enumerate() {
            u[i] = own / total;
            rho[i] = total / gamma;
            let root = (self.weights[i] * rho[i]).sqrt();
            s[i] = root * u[i].norm();
            if s[i] > 0.0 {
                phase[i] = u[i] / u[i].norm() * root;
            }
        }
        let active: Vec<usize> = (0..k).filter(|&i| s[i] > 0.0).collect();
        let power = |p: &[C64]| norm_sqr(p);

        let (mut p, nu) = match self.precoders(&active, &s, &phase, 0.0) {
            Ok(p) if power(&p).is_finite() && power(&p) <= self.budget => (p, 0.0),
            _ => self.bisect(&active, &s, &phase)?,
        };
        // use the full budget; scaling up a common factor raises every SINR
        let used = power(&p);
        if used > 0.0 {
            let s = (self.budget / used).sqrt();
            if s > 1.0 {
                p.iter_mut().for_each(|v| *v *= s);
            }
        }
        Ok(WmmseState { p, u, rho, nu, iteration: state.iteration + 1 })
    }

    fn bisect(&self, active: &[usize], s: &[f64], phase: &[C64]) -> Result<(Vec<C64>, f64)> {
        let bracket = || Error::MultiplierBracket { subcarrier: self.index };
        let mut lo = 0.0;
        let mut hi = 1.0;
        let mut hi_p = loop {
            let p = self.precoders(active, s, phase, hi)?;
            let used = norm_sqr(&p);
            if !used.is_finite() {
                return Err(bracket());
            }
            if used <= self.budget {
                break p;
            }
            lo = hi;
            hi *= 2.0;
            if hi > 1e300 {
                return Err(bracket());
            }
        };
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            let p = self.precoders(active, s, phase, mid)?;
            let used = norm_sqr(&p);
            if used <= self.budget {
                hi = mid;
                hi_p = p;
                if self.budget - used <= 1e-13 * self.budget {
                    break;
                }
            } else {
                lo = mid;
            }
        }
        Ok((hi_p, hi))
    }
}

/// Run `iters` outer WMMSE iterations on every subcarrier independently.
pub fn wmmse_solve(ch: &ChannelSet, cfg: &SystemConfig, iters: usize) -> Result<WmmseOutcome> {
    if cfg.p_c <= 0.0 {
        return Err(Error::param("p_c", "per-subcarrier budget must be positive"));
    }
    if ch.users() != cfg.k || ch.subcarriers() != cfg.n_v || ch.antennas() != cfg.m() {
        return Err(Error::InvalidDimension("channel does not match config".into()));
    }
    let weights: Vec<f64> = (0..cfg.k).map(|k| cfg.weight(k)).collect();
    let (k, n_v, m) = (cfg.k, cfg.n_v, cfg.m());

    let per_sub: Vec<(WmmseState, Vec<f64>)> = (0..n_v)
        .into_par_iter()
        .map(|c| {
            let sub = Subcarrier {
                rows: (0..k).map(|u| ch.row(u, c)).collect(),
                m,
                weights: &weights,
                sigma2: cfg.sigma_z2,
                budget: cfg.p_c,
                solver: cfg.linear_solver,
                index: c,
            };
            let mut state = sub.initial();
            let mut trace = Vec::with_capacity(iters + 1);
            trace.push(sub.wsr(&state.p));
            for _ in 0..iters {
                state = sub.step(&state)?;
                trace.push(sub.wsr(&state.p));
            }
            Ok((state, trace))
        })
        .collect::<Result<_>>()?;

    let mut precoder = PrecoderStack::zeros(k, n_v, m);
    let mut wsr_trace = vec![0.0; iters + 1];
    for (c, (state, trace)) in per_sub.iter().enumerate() {
        for user in 0..k {
            precoder.block_mut(user, c).copy_from_slice(&state.p[user * m..(user + 1) * m]);
        }
        for (acc, v) in wsr_trace.iter_mut().zip(trace) {
            *acc += v;
        }
    }
    Ok(WmmseOutcome { precoder, wsr_trace, states: per_sub.into_iter().map(|(s, _)| s).collect() })
}

/// Cosine of the angle between two vectors, `|aᴴb| / (‖a‖‖b‖)`.
pub fn alignment(a: &[C64], b: &[C64]) -> f64 {
    dot(a, b).norm() / (norm(a) * norm(b))
}
