use ndarray::{Array2, Zip};

use crate::error::{CpdError, Result};

/// Stepsize rule for the factor updates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepSchedule {
    /// `α_r = α0 / r^β`, r = 1, 2, …
    PowerDecay { alpha0: f64, beta: f64 },
    /// Per-entry `η / (b + Σ_t G_t²)^{1/2 + ε}`.
    ///
    /// With `include_current` the sum runs over the history and the gradient
    /// being applied; otherwise only over earlier gradients of the mode.
    Adagrad {
        eta: f64,
        b: f64,
        epsilon: f64,
        include_current: bool,
    },
}

impl StepSchedule {
    /// Power-decay defaults used for the nonnegative synthetic runs.
    pub fn bras_default() -> Self {
        StepSchedule::PowerDecay { alpha0: 0.05, beta: 1e-6 }
    }

    /// `η = 1, b = 1e-6, ε = 0`, current gradient included.
    pub fn ada_default() -> Self {
        StepSchedule::Adagrad {
            eta: 1.0,
            b: 1e-6,
            epsilon: 0.0,
            include_current: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            StepSchedule::PowerDecay { alpha0, beta } => {
                if !(alpha0 > 0.0 && alpha0.is_finite()) {
                    return Err(CpdError::arg(format!("alpha must be > 0, got {alpha0}")));
                }
                if !(beta >= 0.0 && beta.is_finite()) {
                    return Err(CpdError::arg(format!("beta must be >= 0, got {beta}")));
                }
            }
            StepSchedule::Adagrad { eta, b, epsilon, .. } => {
                if !(eta > 0.0 && eta.is_finite()) {
                    return Err(CpdError::arg(format!("eta must be > 0, got {eta}")));
                }
                if !(b >= 0.0 && b.is_finite()) || !(epsilon >= 0.0 && epsilon.is_finite()) {
                    return Err(CpdError::arg("b and epsilon must be >= 0"));
                }
            }
        }
        Ok(())
    }

    pub fn name(&self) -> &'static str {
        match self {
            StepSchedule::PowerDecay { .. } => "brascpd",
            StepSchedule::Adagrad { .. } => "adacpd",
        }
    }

    /// True for power decay with `1/2 < β ≤ 1`, where `Σ α_r = ∞` and `Σ α_r² < ∞`.
    /// Adagrad schedules are not of this form and report false.
    pub fn is_robbins_monro(&self) -> bool {
        matches!(*self, StepSchedule::PowerDecay { beta, .. } if beta > 0.5 && beta <= 1.0)
    }

    /// Scalar stepsize at iteration `r ≥ 1`.
    pub fn power_decay(alpha0: f64, beta: f64, r: u64) -> f64 {
        alpha0 / (r.max(1) as f64).powf(beta)
    }

    /// Entrywise adaptive stepsizes from the accumulated squared gradients.
    /// A zero denominator (b = 0 and no history) gives stepsize 0.
    pub fn adagrad_steps(eta: f64, b: f64, epsilon: f64, accum: &Array2<f64>) -> Array2<f64> {
        let power = 0.5 + epsilon;
        let mut out = Array2::zeros(accum.raw_dim());
        Zip::from(&mut out).and(accum).for_each(|s, &a| {
            let denom = (b + a).powf(power);
            *s = if denom > 0.0 { eta / denom } else { 0.0 };
        });
        out
    }
}
