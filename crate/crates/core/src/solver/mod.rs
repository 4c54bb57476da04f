//! BrasCPD and AdaCPD iteration loops.
//!
//! Each iteration samples one mode and a batch of that mode's fibers, forms
//! the scaled stochastic block gradient and takes a proximal step on that
//! mode's factor only. BrasCPD uses `α / r^β`; AdaCPD uses entrywise Adagrad
//! stepsizes.

mod als;
mod schedule;
mod state;

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use als::als_update;
pub use schedule::StepSchedule;
pub use state::{proximal_safeguard, Counters, Safeguard, SolverState, StepInfo};

use crate::error::{CpdError, Divergence, Result};
use crate::exec::Exec;
use crate::metrics::{cost, mse_all};
use crate::model::FactorModel;
use crate::prox::Regularizer;
use crate::sampling::{split_seed, BatchSchedule, SamplerState};
use crate::tensor::DenseTensor;
use crate::trace::{TraceRecord, TraceSink};

/// Cost growth over the initial cost that counts as divergence.
pub const DIVERGENCE_COST_RATIO: f64 = 1e6;

/// Slack for comparing accumulated MTTKRP-equivalents against bounds.
const EQ_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub schedule: StepSchedule,
    pub batch: BatchSchedule,
    pub seed: u64,
    /// `None` samples modes uniformly.
    pub mode_weights: Option<Vec<f64>>,
    /// Weight of the optional `μ‖A − A_prev‖²` term; 0 disables it.
    pub safeguard_mu: f64,
    /// Trace cadence in MTTKRP-equivalents.
    pub trace_every: f64,
    /// When false, `wall_seconds` is written as 0 so traces are byte-reproducible.
    pub record_wall_time: bool,
    pub exec: Exec,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            schedule: StepSchedule::ada_default(),
            batch: BatchSchedule::Fixed(20),
            seed: 0,
            mode_weights: None,
            safeguard_mu: 0.0,
            trace_every: 1.0,
            record_wall_time: false,
            exec: Exec::default(),
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        self.schedule.validate()?;
        self.batch.validate()?;
        if !(self.trace_every > 0.0 && self.trace_every.is_finite()) {
            return Err(CpdError::arg("trace cadence must be a positive number of MTTKRP-equivalents"));
        }
        if !(self.safeguard_mu >= 0.0) {
            return Err(CpdError::arg("safeguard mu must be >= 0"));
        }
        Ok(())
    }
}

/// Run bounds; the first one reached stops the run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StoppingRule {
    pub max_iterations: Option<u64>,
    pub max_mttkrp_eq: Option<f64>,
    pub max_wall_seconds: Option<f64>,
    /// Checked at trace events only.
    pub target_cost: Option<f64>,
}

impl StoppingRule {
    pub fn mttkrp(bound: f64) -> Self {
        StoppingRule {
            max_mttkrp_eq: Some(bound),
            ..Default::default()
        }
    }

    pub fn iterations(bound: u64) -> Self {
        StoppingRule {
            max_iterations: Some(bound),
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_iterations.is_none()
            && self.max_mttkrp_eq.is_none()
            && self.max_wall_seconds.is_none()
            && self.target_cost.is_none()
        {
            return Err(CpdError::arg("at least one stopping bound must be set"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    MaxIterations,
    MaxMttkrp,
    MaxWallTime,
    TargetCost,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub model: FactorModel,
    pub trace: Vec<TraceRecord>,
    pub iterations: u64,
    pub stop: StopReason,
}

/// Random initialization with entries uniform on [0, 1), from a stream
/// derived from `seed` and independent of the sampling stream.
pub fn initialize(shape: &[usize], rank: usize, seed: u64) -> Result<FactorModel> {
    let mut rng = ChaCha8Rng::seed_from_u64(split_seed(seed, u64::MAX));
    FactorModel::random_uniform(shape, rank, &mut rng)
}

struct Recorder<'a> {
    tensor: &'a DenseTensor,
    truth: Option<&'a FactorModel>,
    exec: Exec,
    record_wall_time: bool,
    started: Instant,
    trace: Vec<TraceRecord>,
}

impl Recorder<'_> {
    fn snapshot(&mut self, state: &SolverState, sink: &mut dyn TraceSink) -> Result<TraceRecord> {
        let eq = state.mttkrp_eq();
        let cost = cost(self.tensor, &state.model, self.exec)?;
        let (mse_per_mode, mse_avg) = match self.truth {
            Some(truth) => match mse_all(&state.model, truth) {
                Ok((per_mode, avg)) => (Some(per_mode), Some(avg)),
                // a zeroed column has no direction; report NaN rather than abort
                Err(CpdError::Metric(_)) => (Some(vec![f64::NAN; truth.order()]), Some(f64::NAN)),
                Err(e) => return Err(e),
            },
            None => (None, None),
        };
        let rec = TraceRecord {
            iteration: state.r,
            mttkrp_eq: eq,
            all_mode_mttkrp_eq: eq / state.model.order() as f64,
            sampled_entries: state.counters.sampled_entries,
            wall_seconds: if self.record_wall_time {
                self.started.elapsed().as_secs_f64()
            } else {
                0.0
            },
            cost,
            mse_per_mode,
            mse_avg,
        };
        sink.record(&rec)?;
        self.trace.push(rec.clone());
        Ok(rec)
    }
}

/// Runs BrasCPD or AdaCPD (chosen by the schedule) from `init`.
///
/// A trace record is emitted at the start, whenever the MTTKRP-equivalent
/// counter crosses a multiple of `config.trace_every`, and at the end.
pub fn run(
    tensor: &DenseTensor,
    init: FactorModel,
    config: &SolverConfig,
    regs: &[Regularizer],
    stopping: &StoppingRule,
    truth: Option<&FactorModel>,
    sink: &mut dyn TraceSink,
) -> Result<RunResult> {
    config.validate()?;
    stopping.validate()?;
    for reg in regs {
        reg.validate()?;
    }
    if tensor.order() < 3 {
        return Err(CpdError::dim(format!("solver needs a tensor of order >= 3, got {}", tensor.order())));
    }
    init.check_shape(tensor.shape())?;
    if let Some(t) = truth {
        t.check_shape(tensor.shape())?;
    }

    let mut sampler = SamplerState::new(config.seed, tensor.order())?;
    if let Some(w) = &config.mode_weights {
        sampler = sampler.with_mode_weights(w)?;
    }
    let mut state = SolverState::new(init, sampler)?.with_safeguard(config.safeguard_mu)?;
    let mut rec = Recorder {
        tensor,
        truth,
        exec: config.exec,
        record_wall_time: config.record_wall_time,
        started: Instant::now(),
        trace: Vec::new(),
    };

    let first = rec.snapshot(&state, sink)?;
    let initial_cost = first.cost;
    let mut ticks = 0u64;
    let tick_of = |eq: f64| ((eq + EQ_SLACK) / config.trace_every).floor() as u64;

    let diverged = |iteration: u64, reason: String, last: FactorModel, trace: Vec<TraceRecord>| {
        CpdError::Diverged(Box::new(Divergence {
            iteration,
            reason,
            last_finite: last,
            trace,
        }))
    };

    let stop = loop {
        if stopping.max_iterations.is_some_and(|m| state.r >= m) {
            break StopReason::MaxIterations;
        }
        if stopping.max_mttkrp_eq.is_some_and(|m| state.mttkrp_eq() >= m - EQ_SLACK) {
            break StopReason::MaxMttkrp;
        }
        if stopping
            .max_wall_seconds
            .is_some_and(|m| rec.started.elapsed().as_secs_f64() >= m)
        {
            break StopReason::MaxWallTime;
        }

        let before = state.model.clone();
        let info = state.step(tensor, regs, &config.batch, &config.schedule)?;
        if !state.model.factor(info.mode).iter().all(|v| v.is_finite()) {
            return Err(diverged(
                state.r,
                format!("non-finite entries in factor {}", info.mode),
                before,
                rec.trace,
            ));
        }

        let t = tick_of(state.mttkrp_eq());
        if t > ticks {
            ticks = t;
            let r = rec.snapshot(&state, sink)?;
            if !r.cost.is_finite() || r.cost > DIVERGENCE_COST_RATIO * initial_cost {
                return Err(diverged(
                    state.r,
                    format!("cost {} exceeds {DIVERGENCE_COST_RATIO:e} x initial {initial_cost}", r.cost),
                    state.model,
                    rec.trace,
                ));
            }
            if stopping.target_cost.is_some_and(|c| r.cost <= c) {
                break StopReason::TargetCost;
            }
        }
    };

    if rec.trace.last().map(|r| r.iteration) != Some(state.r) {
        let r = rec.snapshot(&state, sink)?;
        if !r.cost.is_finite() || r.cost > DIVERGENCE_COST_RATIO * initial_cost {
            return Err(diverged(state.r, format!("final cost {}", r.cost), state.model, rec.trace));
        }
    }

    Ok(RunResult {
        iterations: state.r,
        model: state.model,
        trace: rec.trace,
        stop,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::NullSink;

    fn small_problem(seed: u64) -> (DenseTensor, FactorModel) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let truth = FactorModel::random_uniform(&[12, 10, 11], 3, &mut rng).unwrap();
        (truth.to_dense(Exec::Sequential).unwrap(), truth)
    }

    #[test]
    fn zero_iterations_returns_init() {
        let (t, truth) = small_problem(1);
        let init = initialize(t.shape(), 3, 5).unwrap();
        let cfg = SolverConfig::default();
        let out = run(&t, init.clone(), &cfg, &[Regularizer::Nonneg; 3], &StoppingRule::iterations(0), Some(&truth), &mut NullSink)
            .unwrap();
        assert_eq!(out.model, init);
        assert_eq!(out.trace.len(), 1);
        assert_eq!(out.iterations, 0);
    }

    #[test]
    fn requires_a_stopping_bound() {
        let (t, _) = small_problem(1);
        let init = initialize(t.shape(), 3, 5).unwrap();
        let err = run(&t, init, &SolverConfig::default(), &[Regularizer::None; 3], &StoppingRule::default(), None, &mut NullSink);
        assert!(matches!(err, Err(CpdError::Argument(_))));
    }

    #[test]
    fn rejects_low_order() {
        let t = DenseTensor::zeros(vec![3, 4]).unwrap();
        let init = initialize(&[3, 4], 2, 0).unwrap();
        let err = run(&t, init, &SolverConfig::default(), &[Regularizer::None; 2], &StoppingRule::iterations(1), None, &mut NullSink);
        assert!(matches!(err, Err(CpdError::Dimension(_))));
    }

    #[test]
    fn trace_cadence_and_counters() {
        let (t, truth) = small_problem(2);
        let init = initialize(t.shape(), 3, 7).unwrap();
        let cfg = SolverConfig {
            batch: BatchSchedule::Fixed(10),
            ..SolverConfig::default()
        };
        let out = run(&t, init, &cfg, &[Regularizer::Nonneg; 3], &StoppingRule::mttkrp(5.0), Some(&truth), &mut NullSink).unwrap();
        assert_eq!(out.stop, StopReason::MaxMttkrp);
        assert_eq!(out.trace[0].iteration, 0);
        // start + one record per crossed integer
        assert_eq!(out.trace.len(), 6);
        for w in out.trace.windows(2) {
            assert!(w[1].iteration > w[0].iteration);
            assert!(w[1].mttkrp_eq >= w[0].mttkrp_eq);
            assert!(w[1].sampled_entries > w[0].sampled_entries);
        }
        let last = out.trace.last().unwrap();
        assert!(last.mttkrp_eq >= 5.0 - 1e-9);
        assert!((last.all_mode_mttkrp_eq - last.mttkrp_eq / 3.0).abs() < 1e-15);
        assert!(last.cost < out.trace[0].cost);
    }

    #[test]
    fn forced_mode_counter_reaches_one() {
        let (t, _) = small_problem(3);
        let init = initialize(t.shape(), 3, 7).unwrap();
        let sampler = SamplerState::new(9, 3).unwrap().with_mode_weights(&[1.0 - 2e-15, 1e-15, 1e-15]).unwrap();
        let mut s = SolverState::new(init, sampler).unwrap();
        let jn = s.fiber_counts()[0];
        let b = 11;
        assert_eq!(jn % b, 0);
        for _ in 0..jn / b {
            let info = s.bras_step(&t, &[Regularizer::None; 3], &BatchSchedule::Fixed(b), &StepSchedule::bras_default()).unwrap();
            assert_eq!(info.mode, 1);
        }
        assert!((s.counters.mode_mttkrp_eq(1, s.fiber_counts()) - 1.0).abs() <= 1e-9);
    }

    #[test]
    fn huge_stepsize_diverges() {
        let (t, truth) = small_problem(4);
        let init = initialize(t.shape(), 3, 1).unwrap();
        let cfg = SolverConfig {
            schedule: StepSchedule::PowerDecay { alpha0: 1e3, beta: 1e-6 },
            batch: BatchSchedule::Fixed(5),
            ..SolverConfig::default()
        };
        let err = run(&t, init, &cfg, &[Regularizer::None; 3], &StoppingRule::mttkrp(30.0), Some(&truth), &mut NullSink).unwrap_err();
        match err {
            CpdError::Diverged(d) => assert!(d.last_finite.all_finite()),
            other => panic!("expected divergence, got {other}"),
        }
    }

    #[test]
    fn target_cost_stops_early() {
        let (t, _) = small_problem(5);
        let init = initialize(t.shape(), 3, 2).unwrap();
        let stop = StoppingRule {
            target_cost: Some(f64::INFINITY),
            max_mttkrp_eq: Some(100.0),
            ..Default::default()
        };
        let cfg = SolverConfig {
            batch: BatchSchedule::Fixed(10),
            ..SolverConfig::default()
        };
        let out = run(&t, init, &cfg, &[Regularizer::Nonneg; 3], &stop, None, &mut NullSink).unwrap();
        assert_eq!(out.stop, StopReason::TargetCost);
        assert!(out.trace.last().unwrap().mttkrp_eq < 1.5);
    }
}
