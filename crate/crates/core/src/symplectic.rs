//! Dissipative constrained Hamiltonian optimizer on the power sphere
//! `pᴴp = P`, discretized with a RATTLE-type leapfrog and a proportional
//! step-length controller.
//!
//! One step from `(p_n, q_n)` with step `h` and damping `β = e^{−γh/2}`:
//!
//! ```text
//! q_{n+½} = β q_n − (h/2)(∇g(p_n) + λ_n p_n)
//! p_{n+1} = p_n + (h/2) q_{n+½}
//! q_{n+1} = β (q_{n+½} − (h/2)(∇g(p_{n+1}) + μ_n p_{n+1}))
//! ```
//!
//! followed by a safeguard projection of `p_{n+1}` onto the sphere and of
//! `q_{n+1}` onto the tangent space. `∇` is the Wirtinger gradient `∂/∂p*`,
//! the mass matrix is the identity and the position velocity is `q/2`, so the
//! conserved energy of the undamped flow is `g(p) + ½qᴴq`.

use std::f64::consts::LN_2;
use std::io::Write;

use serde::Serialize;

use crate::channel::{ChannelSet, SystemConfig};
use crate::config::MultiplierMode;
use crate::cvec::{all_finite, axpy, dist, norm, norm_sqr, re_dot, C64};
use crate::error::{Error, Result};
use crate::gradient::grad_g;
use crate::objective::{PrecoderStack, Problem};

/// Objective terms recorded in the trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Terms {
    pub g: f64,
    pub f: f64,
    pub d: f64,
}

/// A smooth real potential on complex space.
pub trait Potential {
    fn dim(&self) -> usize;
    fn terms(&self, p: &[C64]) -> Terms;
    /// Wirtinger gradient `∂g/∂p*`.
    fn gradient(&self, p: &[C64]) -> Vec<C64>;

    fn value(&self, p: &[C64]) -> f64 {
        self.terms(p).g
    }
}

impl Potential for Problem<'_> {
    fn dim(&self) -> usize {
        self.stack_len()
    }

    fn terms(&self, p: &[C64]) -> Terms {
        let b = self.evaluate_slice(p);
        Terms { g: b.g, f: b.f, d: b.d }
    }

    fn gradient(&self, p: &[C64]) -> Vec<C64> {
        grad_g(self, p)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RattleSettings {
    pub gamma: f64,
    /// Sphere radius squared `P`.
    pub power: f64,
    pub multiplier: MultiplierMode,
    /// Project back onto the constraint manifold after each step.
    pub project: bool,
    pub r: f64,
    pub theta: f64,
    pub h_min: f64,
    pub h_max: f64,
    pub max_iters: usize,
    pub tol: f64,
    /// Number of consecutive small relative changes of `g` that stop the run.
    pub patience: usize,
}

impl RattleSettings {
    pub fn from_config(cfg: &SystemConfig) -> Self {
        Self {
            gamma: cfg.gamma,
            power: cfg.power(),
            multiplier: cfg.multiplier,
            project: true,
            r: cfg.r,
            theta: cfg.theta,
            h_min: cfg.h_min(),
            h_max: cfg.h_max(),
            max_iters: cfg.max_iters,
            tol: cfg.tol,
            patience: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub p: Vec<C64>,
    pub q: Vec<C64>,
    /// Cached `∇g(p)`.
    pub grad: Vec<C64>,
    /// Step length for the next step.
    pub h: f64,
    pub n: usize,
    pub lambda: f64,
    pub mu: f64,
    pub delta: f64,
}

impl OptimizerState {
    pub fn new<P: Potential + ?Sized>(pot: &P, p: Vec<C64>, q: Vec<C64>, h: f64) -> Self {
        let grad = pot.gradient(&p);
        Self { p, q, grad, h, n: 0, lambda: 0.0, mu: 0.0, delta: 0.0 }
    }

    /// `|Re(pᴴq)| / (‖p‖‖q‖)`, zero when `q = 0`.
    pub fn tangency_residual(&self) -> f64 {
        tangency_residual(&self.p, &self.q)
    }

    /// `g(p) + ½qᴴq`.
    pub fn energy<P: Potential + ?Sized>(&self, pot: &P) -> f64 {
        pot.value(&self.p) + 0.5 * norm_sqr(&self.q)
    }
}

fn tangency_residual(p: &[C64], q: &[C64]) -> f64 {
    let denom = norm(p) * norm(q);
    if denom == 0.0 {
        0.0
    } else {
        re_dot(p, q).abs() / denom
    }
}

/// Diagnostics of one step, measured before the safeguard projection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepInfo {
    /// `|φ(p_{n+1}) − P| / P` before projection.
    pub violation_pre: f64,
    pub lambda: f64,
    pub mu: f64,
}

/// `λ_n = (qᴴq − 2 Re(pᴴ∇g)) / (2 pᴴp)`.
pub fn lambda_multiplier(p: &[C64], q: &[C64], grad: &[C64]) -> Result<f64> {
    let pp = norm_sqr(p);
    if pp == 0.0 {
        return Err(Error::DegenerateState("zero position in lambda multiplier".into()));
    }
    Ok((norm_sqr(q) - 2.0 * re_dot(p, grad)) / (2.0 * pp))
}

/// `μ_n = (2 Re(p_{n+1}ᴴ q_{n+½}) − h Re(p_{n+1}ᴴ ∇g(p_{n+1}))) / (h p_{n+1}ᴴ p_{n+1})`.
pub fn mu_multiplier(p_next: &[C64], q_half: &[C64], grad_next: &[C64], h: f64) -> Result<f64> {
    if h == 0.0 || !h.is_finite() {
        return Err(Error::param("h", "step length must be positive"));
    }
    let pp = norm_sqr(p_next);
    if pp == 0.0 {
        return Err(Error::DegenerateState("zero position in mu multiplier".into()));
    }
    Ok((2.0 * re_dot(p_next, q_half) - h * re_dot(p_next, grad_next)) / (h * pp))
}

/// Multiplier that puts `p_n + (h/2)(β q_n − (h/2)(∇g + λ p_n))` exactly on
/// the sphere, choosing the root nearest zero. `None` when no real root exists.
fn exact_lambda(p: &[C64], q_damped: &[C64], grad: &[C64], h: f64, power: f64) -> Option<f64> {
    // a = p + (h/2)(β q − (h/2)∇g); p_next = a − s p with s = h²λ/4
    let mut a = p.to_vec();
    axpy(&mut a, C64::new(h / 2.0, 0.0), q_damped);
    axpy(&mut a, C64::new(-h * h / 4.0, 0.0), grad);
    let pp = norm_sqr(p);
    let pa = re_dot(p, &a);
    let disc = pa * pa - pp * (norm_sqr(&a) - power);
    if disc < 0.0 {
        return None;
    }
    let s = (pa - disc.sqrt()) / pp;
    Some(4.0 * s / (h * h))
}

pub fn rattle_step<P: Potential + ?Sized>(
    state: &OptimizerState,
    pot: &P,
    settings: &RattleSettings,
) -> Result<(OptimizerState, StepInfo)> {
    rattle_step_with(state, pot, settings, state.h)
}

/// One damped RATTLE step of length `h` (the state's own `h` is ignored).
pub fn rattle_step_with<P: Potential + ?Sized>(
    state: &OptimizerState,
    pot: &P,
    settings: &RattleSettings,
    h: f64,
) -> Result<(OptimizerState, StepInfo)> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::param("h", format!("step length must be positive, got {h}")));
    }
    let beta = (-settings.gamma * h / 2.0).exp();
    let p = &state.p;
    let grad = &state.grad;

    let q_damped: Vec<C64> = state.q.iter().map(|v| v * beta).collect();
    let lambda = match settings.multiplier {
        MultiplierMode::ClosedForm => lambda_multiplier(p, &state.q, grad)?,
        MultiplierMode::Exact => match exact_lambda(p, &q_damped, grad, h, settings.power) {
            Some(l) => l,
            None => lambda_multiplier(p, &state.q, grad)?,
        },
    };

    let mut q_half = q_damped;
    axpy(&mut q_half, C64::new(-h / 2.0, 0.0), grad);
    axpy(&mut q_half, C64::new(-h / 2.0 * lambda, 0.0), p);

    let mut p_next = p.clone();
    axpy(&mut p_next, C64::new(h / 2.0, 0.0), &q_half);
    let violation_pre = ((norm_sqr(&p_next) - settings.power) / settings.power).abs();

    let grad_next = pot.gradient(&p_next);
    let mu = mu_multiplier(&p_next, &q_half, &grad_next, h)?;

    let mut q_next = q_half;
    axpy(&mut q_next, C64::new(-h / 2.0, 0.0), &grad_next);
    axpy(&mut q_next, C64::new(-h / 2.0 * mu, 0.0), &p_next);
    for v in &mut q_next {
        *v *= beta;
    }

    if !(all_finite(&p_next) && all_finite(&q_next) && lambda.is_finite() && mu.is_finite()) {
        return Err(Error::Divergence { iteration: state.n + 1, trace: Vec::new() });
    }

    let grad_next = if settings.project {
        let n = norm(&p_next);
        if n == 0.0 {
            return Err(Error::DegenerateState("position collapsed to zero".into()));
        }
        let s = settings.power.sqrt() / n;
        let rescaled = s != 1.0;
        for v in &mut p_next {
            *v *= s;
        }
        let radial = re_dot(&p_next, &q_next) / settings.power;
        axpy(&mut q_next, C64::new(-radial, 0.0), &p_next);
        if rescaled {
            pot.gradient(&p_next)
        } else {
            grad_next
        }
    } else {
        grad_next
    };

    Ok((
        OptimizerState {
            p: p_next,
            q: q_next,
            grad: grad_next,
            h,
            n: state.n + 1,
            lambda,
            mu,
            delta: state.delta,
        },
        StepInfo { violation_pre, lambda, mu },
    ))
}

/// Proportional controller `h_{n+1} = (r/δ_n)^{θ/2} h_n`, clamped to `[h_min, h_max]`.
/// `δ_n = 0` means the step was exact and returns `h_max`.
pub fn step_control(h: f64, delta: f64, r: f64, theta: f64, h_min: f64, h_max: f64) -> f64 {
    if delta <= 0.0 {
        return h_max;
    }
    ((r / delta).powf(theta / 2.0) * h).clamp(h_min, h_max)
}

/// Step-doubling error estimate `‖p_full − p_two_half‖ / √P`.
pub fn local_error_estimate<P: Potential + ?Sized>(
    state: &OptimizerState,
    pot: &P,
    settings: &RattleSettings,
) -> Result<f64> {
    Ok(step_with_error(state, pot, settings)?.2)
}

fn step_with_error<P: Potential + ?Sized>(
    state: &OptimizerState,
    pot: &P,
    settings: &RattleSettings,
) -> Result<(OptimizerState, StepInfo, f64)> {
    let (full, info) = rattle_step_with(state, pot, settings, state.h)?;
    let (mid, _) = rattle_step_with(state, pot, settings, state.h / 2.0)?;
    let (two_half, _) = rattle_step_with(&mid, pot, settings, state.h / 2.0)?;
    let delta = dist(&full.p, &two_half.p) / settings.power.sqrt();
    Ok((full, info, delta))
}

/// One row of the optimizer trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceRecord {
    pub n: usize,
    pub h_n: f64,
    pub g: f64,
    pub f: f64,
    pub d: f64,
    pub wsr_bits: f64,
    pub constraint_violation_pre: f64,
    pub tangency_residual: f64,
    pub lambda_n: f64,
    pub mu_n: f64,
    pub delta_n: f64,
    /// `|φ(p) − P| / P` after the safeguard projection.
    #[serde(skip)]
    pub constraint_violation_post: f64,
}

pub const TRACE_COLUMNS: [&str; 11] = [
    "n",
    "h_n",
    "g",
    "f",
    "d",
    "wsr_bits",
    "constraint_violation_pre",
    "tangency_residual",
    "lambda_n",
    "mu_n",
    "delta_n",
];

pub fn write_trace_csv<W: Write>(trace: &[TraceRecord], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for rec in trace {
        out.serialize(rec)?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Debug, Clone)]
pub struct OptimizeOutcome {
    /// Iterate with the smallest `g` seen, including the starting point.
    pub best: Vec<C64>,
    pub best_index: usize,
    pub final_state: OptimizerState,
    pub trace: Vec<TraceRecord>,
    pub converged: bool,
    /// Iterations performed.
    pub iterations: usize,
}

fn record<P: Potential + ?Sized>(
    pot: &P,
    state: &OptimizerState,
    h_used: f64,
    info: Option<StepInfo>,
    power: f64,
) -> TraceRecord {
    let t = pot.terms(&state.p);
    TraceRecord {
        n: state.n,
        h_n: h_used,
        g: t.g,
        f: t.f,
        d: t.d,
        wsr_bits: -t.f / LN_2,
        constraint_violation_pre: info.map_or(0.0, |i| i.violation_pre),
        tangency_residual: state.tangency_residual(),
        lambda_n: info.map_or(0.0, |i| i.lambda),
        mu_n: info.map_or(0.0, |i| i.mu),
        delta_n: state.delta,
        constraint_violation_post: ((norm_sqr(&state.p) - power) / power).abs(),
    }
}

fn is_stationary(state: &OptimizerState, power: f64) -> bool {
    if norm_sqr(&state.q) != 0.0 {
        return false;
    }
    let radial = re_dot(&state.p, &state.grad) / power;
    let mut tangential = state.grad.clone();
    axpy(&mut tangential, C64::new(-radial, 0.0), &state.p);
    norm(&tangential) <= 1e-14 * norm(&state.grad)
}

/// Run damped RATTLE steps with P-controlled step length until the relative
/// change of `g` stays below `tol` for `patience` consecutive iterations or
/// `max_iters` is reached. Starts from rest (`q = 0`).
pub fn optimize<P: Potential + ?Sized>(
    pot: &P,
    settings: &RattleSettings,
    p_init: Vec<C64>,
    h0: f64,
) -> Result<OptimizeOutcome> {
    if p_init.len() != pot.dim() {
        return Err(Error::InvalidDimension("initial point length".into()));
    }
    let on_sphere = ((norm_sqr(&p_init) - settings.power) / settings.power).abs();
    if on_sphere > 1e-8 {
        return Err(Error::InvalidInput(format!(
            "initial point is off the power sphere (relative violation {on_sphere:e})"
        )));
    }
    let q0 = vec![C64::new(0.0, 0.0); p_init.len()];
    let mut state = OptimizerState::new(pot, p_init, q0, h0);
    let mut trace = vec![record(pot, &state, h0, None, settings.power)];
    let mut best = state.p.clone();
    let mut best_g = trace[0].g;
    let mut best_index = 0;

    if is_stationary(&state, settings.power) {
        return Ok(OptimizeOutcome {
            best,
            best_index,
            final_state: state,
            trace,
            converged: true,
            iterations: 0,
        });
    }

    let mut streak = 0;
    let mut converged = false;
    for _ in 0..settings.max_iters {
        let h = state.h;
        let (mut next, info, delta) = match step_with_error(&state, pot, settings) {
            Ok(v) => v,
            Err(Error::Divergence { iteration, .. }) => {
                return Err(Error::Divergence { iteration, trace });
            }
            Err(e) => return Err(e),
        };
        if !delta.is_finite() {
            return Err(Error::Divergence { iteration: next.n, trace });
        }
        next.delta = delta;
        next.h = step_control(h, delta, settings.r, settings.theta, settings.h_min, settings.h_max);
        let rec = record(pot, &next, h, Some(info), settings.power);
        if !rec.g.is_finite() {
            trace.push(rec);
            return Err(Error::Divergence { iteration: next.n, trace });
        }
        let prev_g = trace.last().map(|r| r.g).unwrap_or(rec.g);
        trace.push(rec);
        if rec.g < best_g {
            best_g = rec.g;
            best = next.p.clone();
            best_index = next.n;
        }
        state = next;

        let scale = rec.g.abs().max(prev_g.abs()).max(f64::MIN_POSITIVE);
        if (rec.g - prev_g).abs() <= settings.tol * scale {
            streak += 1;
            if streak >= settings.patience {
                converged = true;
                break;
            }
        } else {
            streak = 0;
        }
    }
    let iterations = state.n;
    Ok(OptimizeOutcome { best, best_index, final_state: state, trace, converged, iterations })
}

/// Result of a CSPD optimization on a concrete channel.
#[derive(Debug, Clone)]
pub struct CspdOutcome {
    pub precoder: PrecoderStack,
    pub trace: Vec<TraceRecord>,
    pub converged: bool,
    pub iterations: usize,
}

/// Optimize the CSPD objective for `ch` under `cfg`. Starts from the
/// per-subcarrier matched filter when `p_init` is `None`.
pub fn optimize_cspd(ch: &ChannelSet, cfg: &SystemConfig, p_init: Option<PrecoderStack>) -> Result<CspdOutcome> {
    cfg.validate()?;
    let problem = Problem::new(ch, cfg)?;
    let init = p_init.unwrap_or_else(|| PrecoderStack::matched_filter(ch, cfg.power()));
    let settings = RattleSettings::from_config(cfg);
    let out = optimize(&problem, &settings, init.into_vec(), cfg.h0)?;
    Ok(CspdOutcome {
        precoder: PrecoderStack::from_vec(cfg.k, cfg.n_v, cfg.m(), out.best)?,
        trace: out.trace,
        converged: out.converged,
        iterations: out.iterations,
    })
}
