use ndarray::{Array2, Zip};

use crate::error::{CpdError, Result};
use crate::gradient::sampled_gradient0;
use crate::model::FactorModel;
use crate::prox::{apply_prox, Regularizer, Step};
use crate::sampling::{BatchSchedule, SamplerState};
use crate::tensor::DenseTensor;

use super::schedule::StepSchedule;

/// Work counters advanced by every step.
#[derive(Debug, Clone, PartialEq)]
pub struct Counters {
    /// Fibers sampled so far, per mode.
    pub fibers_per_mode: Vec<u64>,
    pub sampled_entries: u64,
}

impl Counters {
    fn new(n_modes: usize) -> Self {
        Counters {
            fibers_per_mode: vec![0; n_modes],
            sampled_entries: 0,
        }
    }

    /// `Σ_n fibers_n / J_n`: one unit is the fiber work of one full mode MTTKRP.
    pub fn mttkrp_eq(&self, fiber_counts: &[usize]) -> f64 {
        self.fibers_per_mode
            .iter()
            .zip(fiber_counts)
            .map(|(&f, &j)| f as f64 / j as f64)
            .sum()
    }

    /// Equivalents of the given 1-based mode only.
    pub fn mode_mttkrp_eq(&self, mode: usize, fiber_counts: &[usize]) -> f64 {
        self.fibers_per_mode[mode - 1] as f64 / fiber_counts[mode - 1] as f64
    }
}

/// Adds `μ‖A − A_prev‖²` to the step's quadratic model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Safeguard {
    pub reg: Regularizer,
    pub mu: f64,
}

pub fn proximal_safeguard(reg: Regularizer, mu: f64) -> Result<Safeguard> {
    if !(mu >= 0.0) {
        return Err(CpdError::arg(format!("safeguard weight must be >= 0, got {mu}")));
    }
    Ok(Safeguard { reg, mu })
}

impl Safeguard {
    /// Proximal step from `prev` given the gradient point `prev − α ⊛ G`.
    ///
    /// The minimizer of `½‖A − V‖²/α + μ‖A − P‖² + h(A)` is
    /// `prox_{α' h}((V + 2αμ P)/(1 + 2αμ))` with `α' = α/(1 + 2αμ)`.
    /// Entrywise stepsizes of non-separable regularizers are replaced by their mean.
    pub fn apply(&self, prev: &Array2<f64>, point: &Array2<f64>, step: Step<'_>) -> Result<Array2<f64>> {
        match step {
            Step::Scalar(alpha) => {
                if self.mu == 0.0 {
                    return apply_prox(&self.reg, point, step);
                }
                let w = 2.0 * alpha * self.mu;
                let (input, alpha) = if w.is_infinite() {
                    (prev.clone(), 0.0)
                } else {
                    let mut input = point + &(prev * w);
                    input /= 1.0 + w;
                    (input, alpha / (1.0 + w))
                };
                apply_prox(&self.reg, &input, Step::Scalar(alpha))
            }
            Step::Entrywise(steps) => {
                let (input, eff) = if self.mu == 0.0 {
                    (point.clone(), steps.clone())
                } else {
                    let mut input = point.clone();
                    let mut eff = steps.clone();
                    Zip::from(&mut input)
                        .and(&mut eff)
                        .and(prev)
                        .for_each(|x, a, &p| {
                            let w = 2.0 * *a * self.mu;
                            if w.is_infinite() {
                                *x = p;
                                *a = 0.0;
                            } else {
                                *x = (*x + w * p) / (1.0 + w);
                                *a /= 1.0 + w;
                            }
                        });
                    (input, eff)
                };
                if self.reg.is_separable() {
                    apply_prox(&self.reg, &input, Step::Entrywise(&eff))
                } else {
                    let mean = eff.mean().unwrap_or(0.0);
                    apply_prox(&self.reg, &input, Step::Scalar(mean))
                }
            }
        }
    }
}

/// What one step did.
#[derive(Debug, Clone, PartialEq)]
pub struct StepInfo {
    /// 1-based mode that was updated.
    pub mode: usize,
    pub batch: usize,
    /// Scalar stepsize, or the mean entrywise stepsize for Adagrad.
    pub stepsize: f64,
}

/// Mutable loop state of one solver run.
#[derive(Debug, Clone)]
pub struct SolverState {
    pub model: FactorModel,
    /// Completed iterations; the next step is iteration `r + 1`.
    pub r: u64,
    grad_accum: Vec<Option<Array2<f64>>>,
    sampler: SamplerState,
    fiber_counts: Vec<usize>,
    pub counters: Counters,
    /// Applied to every step; the `reg` field of each is the mode's regularizer.
    mu: f64,
}

impl SolverState {
    pub fn new(model: FactorModel, sampler: SamplerState) -> Result<Self> {
        let shape = model.shape();
        if sampler.n_modes() != shape.len() {
            return Err(CpdError::dim(format!(
                "sampler has {} modes, model has {}",
                sampler.n_modes(),
                shape.len()
            )));
        }
        let fiber_counts = (1..=shape.len())
            .map(|n| crate::tensor::fiber_count(&shape, n))
            .collect::<Result<Vec<_>>>()?;
        Ok(SolverState {
            counters: Counters::new(shape.len()),
            grad_accum: vec![None; shape.len()],
            model,
            r: 0,
            sampler,
            fiber_counts,
            mu: 0.0,
        })
    }

    pub fn with_safeguard(mut self, mu: f64) -> Result<Self> {
        proximal_safeguard(Regularizer::None, mu)?;
        self.mu = mu;
        Ok(self)
    }

    pub fn fiber_counts(&self) -> &[usize] {
        &self.fiber_counts
    }

    pub fn mttkrp_eq(&self) -> f64 {
        self.counters.mttkrp_eq(&self.fiber_counts)
    }

    /// Accumulated squared gradients of a 1-based mode (zeros before its first Adagrad update).
    pub fn grad_accum(&self, mode: usize) -> Array2<f64> {
        self.grad_accum[mode - 1]
            .clone()
            .unwrap_or_else(|| Array2::zeros(self.model.factor(mode).raw_dim()))
    }

    fn check_inputs(&self, t: &DenseTensor, regs: &[Regularizer]) -> Result<()> {
        self.model.check_shape(t.shape())?;
        if regs.len() != self.model.order() {
            return Err(CpdError::dim(format!(
                "{} regularizers for {} modes",
                regs.len(),
                self.model.order()
            )));
        }
        Ok(())
    }

    fn sample(&mut self, batch: &BatchSchedule) -> Result<(usize, Vec<usize>)> {
        let mode0 = self.sampler.sample_mode() - 1;
        let jn = self.fiber_counts[mode0];
        let b = batch.size(self.r + 1, jn);
        let fibers = self.sampler.sample_fibers0(jn, b)?;
        Ok((mode0, fibers))
    }

    fn advance(&mut self, t: &DenseTensor, mode0: usize, batch: usize) {
        self.r += 1;
        self.counters.fibers_per_mode[mode0] += batch as u64;
        self.counters.sampled_entries += (batch * t.shape()[mode0]) as u64;
    }

    /// One block-randomized proximal SGD step with a power-decay stepsize.
    pub fn bras_step(
        &mut self,
        t: &DenseTensor,
        regs: &[Regularizer],
        batch: &BatchSchedule,
        schedule: &StepSchedule,
    ) -> Result<StepInfo> {
        let StepSchedule::PowerDecay { alpha0, beta } = *schedule else {
            return Err(CpdError::arg("bras_step needs a power-decay schedule"));
        };
        self.check_inputs(t, regs)?;
        let (mode0, fibers) = self.sample(batch)?;
        let alpha = StepSchedule::power_decay(alpha0, beta, self.r + 1);
        let g = sampled_gradient0(t, &self.model, mode0, &fibers);
        let prev = &self.model.factors()[mode0];
        let mut point = prev.clone();
        point.scaled_add(-alpha, &g);
        let guard = Safeguard { reg: regs[mode0], mu: self.mu };
        let next = guard.apply(prev, &point, Step::Scalar(alpha))?;
        *self.model.factor_mut0(mode0) = next;
        self.advance(t, mode0, fibers.len());
        Ok(StepInfo {
            mode: mode0 + 1,
            batch: fibers.len(),
            stepsize: alpha,
        })
    }

    /// One step with entrywise Adagrad stepsizes. Only the sampled mode's
    /// accumulator changes.
    pub fn ada_step(
        &mut self,
        t: &DenseTensor,
        regs: &[Regularizer],
        batch: &BatchSchedule,
        schedule: &StepSchedule,
    ) -> Result<StepInfo> {
        let StepSchedule::Adagrad {
            eta,
            b,
            epsilon,
            include_current,
        } = *schedule
        else {
            return Err(CpdError::arg("ada_step needs an adagrad schedule"));
        };
        self.check_inputs(t, regs)?;
        let (mode0, fibers) = self.sample(batch)?;
        let g = sampled_gradient0(t, &self.model, mode0, &fibers);
        let accum = self.grad_accum[mode0].get_or_insert_with(|| Array2::zeros(g.raw_dim()));
        if include_current {
            Zip::from(&mut *accum).and(&g).for_each(|a, &gv| *a += gv * gv);
        }
        let steps = StepSchedule::adagrad_steps(eta, b, epsilon, accum);
        let prev = &self.model.factors()[mode0];
        let mut point = prev.clone();
        Zip::from(&mut point).and(&steps).and(&g).for_each(|x, &s, &gv| *x -= s * gv);
        let guard = Safeguard { reg: regs[mode0], mu: self.mu };
        let next = guard.apply(prev, &point, Step::Entrywise(&steps))?;
        *self.model.factor_mut0(mode0) = next;
        if !include_current {
            Zip::from(accum).and(&g).for_each(|a, &gv| *a += gv * gv);
        }
        self.advance(t, mode0, fibers.len());
        Ok(StepInfo {
            mode: mode0 + 1,
            batch: fibers.len(),
            stepsize: steps.mean().unwrap_or(0.0),
        })
    }

    pub fn step(
        &mut self,
        t: &DenseTensor,
        regs: &[Regularizer],
        batch: &BatchSchedule,
        schedule: &StepSchedule,
    ) -> Result<StepInfo> {
        match schedule {
            StepSchedule::PowerDecay { .. } => self.bras_step(t, regs, batch, schedule),
            StepSchedule::Adagrad { .. } => self.ada_step(t, regs, batch, schedule),
        }
    }
}
