//! Scenario and algorithm parameters.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How the position multiplier of the RATTLE step is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MultiplierMode {
    /// Closed-form multiplier from the continuous hidden constraint.
    #[default]
    ClosedForm,
    /// Solve the sphere-constraint quadratic so the position lands on the
    /// sphere before the safeguard projection.
    Exact,
}

/// Linear solver used inside the WMMSE precoder update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LinearSolver {
    #[default]
    Direct,
    ConjugateGradient,
}

/// Delay-power prior used by the receiver's MMSE channel estimator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PriorMode {
    /// Flat over the first `n_e` delays, zero beyond.
    #[default]
    Flat,
    /// Empirical delay-power profile of the true effective channel.
    Genie,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SystemConfig {
    /// Horizontal antenna count.
    pub m_x: usize,
    /// Vertical antenna count.
    pub m_z: usize,
    /// Number of single-antenna users.
    pub k: usize,
    /// Total subcarriers (sets the delay resolution of the channel taps).
    pub n_c: usize,
    /// Subcarriers used for data.
    pub n_v: usize,
    /// Delays at or beyond this index count as large.
    pub n_e: usize,
    /// Noise variance per subcarrier (linear).
    pub sigma_z2: f64,
    /// Per-subcarrier power budget; the total budget is `n_v * p_c`.
    pub p_c: f64,
    /// Per-user rate weights. Empty means all ones.
    pub weights: Vec<f64>,
    /// Weight of the delay indicator in the objective.
    pub alpha: f64,
    /// Dissipation coefficient.
    pub gamma: f64,
    /// Initial step length.
    pub h0: f64,
    /// Step-control target error.
    pub r: f64,
    /// Step-control gain, must lie in [0, 2].
    pub theta: f64,
    pub h_min_factor: f64,
    pub h_max_factor: f64,
    /// Channel tap count.
    pub taps: usize,
    /// Exponential power-delay-profile decay constant, in taps.
    pub pdp_decay: f64,
    pub seed: u64,
    pub max_iters: usize,
    pub tol: f64,
    pub multiplier: MultiplierMode,
    pub linear_solver: LinearSolver,
    pub pilot_interval: usize,
    pub pilot_root: usize,
    pub prior: PriorMode,
}

impl Default for SystemConfig {
    fn default() -> Self {
        Self {
            m_x: 4,
            m_z: 4,
            k: 4,
            n_c: 32,
            n_v: 32,
            n_e: 8,
            sigma_z2: 0.1,
            p_c: 1.0,
            weights: Vec::new(),
            alpha: 1.0,
            gamma: 2.0,
            h0: 0.1,
            r: 1e-4,
            theta: 0.1,
            h_min_factor: 1e-4,
            h_max_factor: 10.0,
            taps: 6,
            pdp_decay: 2.0,
            seed: 0,
            max_iters: 500,
            tol: 1e-6,
            multiplier: MultiplierMode::ClosedForm,
            linear_solver: LinearSolver::Direct,
            pilot_interval: 2,
            pilot_root: 5,
            prior: PriorMode::Flat,
        }
    }
}

impl SystemConfig {
    /// Antenna count `M = M_x·M_z`.
    pub fn m(&self) -> usize {
        self.m_x * self.m_z
    }

    /// Total power budget `P = Σ_c P_c`.
    pub fn power(&self) -> f64 {
        self.p_c * self.n_v as f64
    }

    pub fn weight(&self, k: usize) -> f64 {
        if self.weights.is_empty() {
            1.0
        } else {
            self.weights[k]
        }
    }

    pub fn h_min(&self) -> f64 {
        self.h_min_factor * self.h0
    }

    pub fn h_max(&self) -> f64 {
        self.h_max_factor * self.h0
    }

    /// Length of the stacked precoder `K·N_v·M`.
    pub fn stack_len(&self) -> usize {
        self.k * self.n_v * self.m()
    }

    /// Noise variance giving the requested per-subcarrier SNR `P/(N_v·σ²)`.
    pub fn sigma_for_snr_db(&self, snr_db: f64) -> f64 {
        self.p_c / 10f64.powf(snr_db / 10.0)
    }

    pub fn with_snr_db(mut self, snr_db: f64) -> Self {
        self.sigma_z2 = self.sigma_for_snr_db(snr_db);
        self
    }

    pub fn validate(&self) -> Result<()> {
        fn positive(name: &str, v: f64) -> Result<()> {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::param(name, format!("must be positive and finite, got {v}")))
            }
        }
        for (name, v) in [("m_x", self.m_x), ("m_z", self.m_z), ("k", self.k), ("n_v", self.n_v)] {
            if v == 0 {
                return Err(Error::param(name, "must be at least 1"));
            }
        }
        if self.n_v > self.n_c {
            return Err(Error::param("n_v", format!("{} exceeds n_c = {}", self.n_v, self.n_c)));
        }
        if self.n_e > self.n_v {
            return Err(Error::param("n_e", format!("{} exceeds n_v = {}", self.n_e, self.n_v)));
        }
        positive("sigma_z2", self.sigma_z2)?;
        positive("p_c", self.p_c)?;
        if !self.weights.is_empty() && self.weights.len() != self.k {
            return Err(Error::param(
                "weights",
                format!("expected {} entries, got {}", self.k, self.weights.len()),
            ));
        }
        if self.weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::param("weights", "all weights must be finite and >= 0"));
        }
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return Err(Error::param("alpha", "must be >= 0"));
        }
        positive("gamma", self.gamma)?;
        positive("h0", self.h0)?;
        positive("r", self.r)?;
        if !(0.0..=2.0).contains(&self.theta) {
            return Err(Error::param(
                "theta",
                format!("must lie within the range [0,2], got {}", self.theta),
            ));
        }
        positive("h_min_factor", self.h_min_factor)?;
        positive("h_max_factor", self.h_max_factor)?;
        if self.h_min_factor > self.h_max_factor {
            return Err(Error::param("h_min_factor", "exceeds h_max_factor"));
        }
        if self.taps == 0 {
            return Err(Error::param("taps", "must be at least 1"));
        }
        if self.taps > self.n_c {
            return Err(Error::param("taps", format!("{} exceeds n_c = {}", self.taps, self.n_c)));
        }
        positive("pdp_decay", self.pdp_decay)?;
        positive("tol", self.tol)?;
        if self.max_iters == 0 {
            return Err(Error::param("max_iters", "must be at least 1"));
        }
        if self.pilot_interval == 0 {
            return Err(Error::param("pilot_interval", "must be at least 1"));
        }
        Ok(())
    }
}
