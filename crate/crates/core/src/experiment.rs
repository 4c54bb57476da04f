//! Multi-trial experiment runner: instance generation or loading, seeded
//! solver runs, per-trial CSV traces and a mean/median summary.
//!
//! Trial `k` uses seed `split_seed(master, k)` for sampling and
//! initialization; a synthetic instance for that trial is drawn from
//! `split_seed(trial_seed, 0)`, so every trial sees a fresh tensor.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::config::{ExperimentConfig, InstanceSource};
use crate::error::{CpdError, Result};
use crate::exec::Exec;
use crate::io::{load_model, load_tensor, save_model, save_tensor};
use crate::model::FactorModel;
use crate::sampling::{split_seed, PRNG_ID};
use crate::solver::{initialize, run, StopReason};
use crate::synthetic::{generate, NORMAL_ID};
use crate::tensor::DenseTensor;
use crate::trace::{CsvTraceWriter, TraceRecord};

pub const SUMMARY_FILE: &str = "summary.csv";

pub fn trial_seed(master: u64, trial: usize) -> u64 {
    split_seed(master, trial as u64)
}

pub fn data_seed(trial_seed: u64) -> u64 {
    split_seed(trial_seed, 0)
}

pub fn trace_file_name(trial: usize) -> String {
    format!("trace_trial_{trial:03}.csv")
}

pub fn model_file_name(trial: usize) -> String {
    format!("model_trial_{trial:03}.dfac")
}

#[derive(Debug, Clone, PartialEq)]
pub enum TrialStatus {
    Completed(StopReason),
    Diverged { iteration: u64, reason: String },
}

#[derive(Debug, Clone)]
pub struct TrialOutcome {
    pub trial: usize,
    pub seed: u64,
    pub status: TrialStatus,
    pub initial_cost: f64,
    /// Final trace record; `None` for diverged trials.
    pub last: Option<TraceRecord>,
}

impl TrialOutcome {
    pub fn is_finite(&self) -> bool {
        matches!(self.status, TrialStatus::Completed(_)) && self.last.as_ref().is_some_and(|r| r.cost.is_finite())
    }

    /// Values of the summary metric columns, NaN when diverged.
    fn metrics(&self, n_modes: usize, with_mse: bool) -> Vec<f64> {
        let width = metric_columns(n_modes, with_mse).len();
        let Some(r) = self.last.as_ref().filter(|_| self.is_finite()) else {
            return vec![f64::NAN; width];
        };
        let mut v = vec![
            r.iteration as f64,
            r.mttkrp_eq,
            r.sampled_entries as f64,
            r.wall_seconds,
            self.initial_cost,
            r.cost,
        ];
        if with_mse {
            match &r.mse_per_mode {
                Some(per_mode) => v.extend(per_mode),
                None => v.extend(std::iter::repeat_n(f64::NAN, n_modes)),
            }
            v.push(r.mse_avg.unwrap_or(f64::NAN));
        }
        v
    }
}

fn metric_columns(n_modes: usize, with_mse: bool) -> Vec<String> {
    let mut cols: Vec<String> = ["iterations", "mttkrp_eq", "sampled_entries", "wall_seconds", "initial_cost", "cost"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    if with_mse {
        cols.extend((1..=n_modes).map(|n| format!("mse_mode_{n}")));
        cols.push("mse_avg".into());
    }
    cols
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub fn median(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

#[derive(Debug, Clone)]
pub struct Summary {
    pub header: Vec<String>,
    pub n_modes: usize,
    pub with_mse: bool,
    pub trials: Vec<TrialOutcome>,
}

impl Summary {
    pub fn diverged(&self) -> usize {
        self.trials.iter().filter(|t| !t.is_finite()).count()
    }

    pub fn columns(&self) -> Vec<String> {
        metric_columns(self.n_modes, self.with_mse)
    }

    fn finite_columns(&self) -> Vec<Vec<f64>> {
        let rows: Vec<Vec<f64>> = self
            .trials
            .iter()
            .filter(|t| t.is_finite())
            .map(|t| t.metrics(self.n_modes, self.with_mse))
            .collect();
        (0..self.columns().len())
            .map(|c| rows.iter().map(|r| r[c]).filter(|v| !v.is_nan()).collect())
            .collect()
    }

    /// Per-column mean over finite trials.
    pub fn mean(&self) -> Vec<f64> {
        self.finite_columns().iter().map(|c| mean(c)).collect()
    }

    /// Per-column median over finite trials.
    pub fn median(&self) -> Vec<f64> {
        self.finite_columns().iter().map(|c| median(c)).collect()
    }

    /// Median of one named column over finite trials.
    pub fn median_of(&self, column: &str) -> Option<f64> {
        let idx = self.columns().iter().position(|c| c == column)?;
        Some(self.median()[idx])
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for line in &self.header {
            out.push_str(&format!("# {line}\n"));
        }
        out.push_str(&format!("# finite_trials = {}\n", self.trials.len() - self.diverged()));
        out.push_str(&format!("# diverged = {}\n", self.diverged()));
        let mut cols = vec!["trial".to_string(), "seed".into(), "status".into()];
        cols.extend(self.columns());
        out.push_str(&cols.join(","));
        out.push('\n');
        let fmt = |v: &[f64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        for t in &self.trials {
            let status = match &t.status {
                TrialStatus::Completed(_) => "ok",
                TrialStatus::Diverged { .. } => "diverged",
            };
            out.push_str(&format!(
                "{},{},{},{}\n",
                t.trial,
                t.seed,
                status,
                fmt(&t.metrics(self.n_modes, self.with_mse))
            ));
        }
        out.push_str(&format!("mean,,,{}\n", fmt(&self.mean())));
        out.push_str(&format!("median,,,{}\n", fmt(&self.median())));
        out
    }
}

/// Header lines shared by every output file of an experiment.
pub fn header_lines(cfg: &ExperimentConfig) -> Vec<String> {
    let mut h = vec![
        format!("brascpd {}", crate::VERSION),
        format!("prng = {PRNG_ID}"),
        format!("normal = {NORMAL_ID}"),
        format!("master_seed = {}", cfg.solver.seed),
        format!("robbins_monro = {}", cfg.solver.schedule.is_robbins_monro()),
    ];
    h.extend(cfg.echo().into_iter().map(|l| format!("config: {l}")));
    h
}

struct Instance {
    tensor: DenseTensor,
    truth: Option<FactorModel>,
}

fn load_instance(source: &InstanceSource) -> Result<Option<Instance>> {
    match source {
        InstanceSource::Synthetic { .. } => Ok(None),
        InstanceSource::File { tensor, truth } => Ok(Some(Instance {
            tensor: load_tensor(tensor)?,
            truth: truth.as_ref().map(load_model).transpose()?,
        })),
    }
}

fn trial_instance(cfg: &ExperimentConfig, seed: u64, exec: Exec) -> Result<Instance> {
    let spec = cfg
        .source
        .synthetic_spec(data_seed(seed))
        .expect("called for synthetic sources only");
    let inst = generate(&spec, exec)?;
    Ok(Instance {
        tensor: inst.tensor,
        truth: Some(inst.truth),
    })
}

fn run_trial(
    cfg: &ExperimentConfig,
    shared: Option<&Instance>,
    shared_init: Option<&FactorModel>,
    out_dir: &Path,
    trial: usize,
) -> Result<TrialOutcome> {
    let seed = trial_seed(cfg.solver.seed, trial);
    let owned;
    let inst = match shared {
        Some(i) => i,
        None => {
            owned = trial_instance(cfg, seed, cfg.solver.exec)?;
            &owned
        }
    };
    let shape = inst.tensor.shape();
    let regs = cfg.regs.resolve(shape.len())?;
    let init = match shared_init {
        Some(m) => m.clone(),
        None => initialize(shape, cfg.rank, seed)?,
    };
    if let Some(t) = &inst.truth {
        if t.rank() != cfg.rank {
            return Err(CpdError::dim(format!(
                "truth has rank {}, fitted rank is {}; MSE needs equal ranks",
                t.rank(),
                cfg.rank
            )));
        }
    }

    let mut header = header_lines(cfg);
    header.push(format!("trial = {trial}"));
    header.push(format!("trial_seed = {seed}"));
    if shared.is_none() {
        header.push(format!("data_seed = {}", data_seed(seed)));
    }
    let file = BufWriter::new(File::create(out_dir.join(trace_file_name(trial)))?);
    let mut writer = CsvTraceWriter::new(file, &header, shape.len(), inst.truth.is_some())?;

    let mut solver = cfg.solver.clone();
    solver.seed = seed;
    let result = run(&inst.tensor, init, &solver, &regs, &cfg.stopping, inst.truth.as_ref(), &mut writer);
    let mut file = writer.into_inner();
    match result {
        Ok(res) => {
            save_model(out_dir.join(model_file_name(trial)), &res.model)?;
            file.flush()?;
            Ok(TrialOutcome {
                trial,
                seed,
                status: TrialStatus::Completed(res.stop),
                initial_cost: res.trace[0].cost,
                last: res.trace.last().cloned(),
            })
        }
        Err(CpdError::Diverged(d)) => {
            writeln!(file, "# diverged at iteration {}: {}", d.iteration, d.reason)?;
            file.flush()?;
            save_model(out_dir.join(model_file_name(trial)), &d.last_finite)?;
            Ok(TrialOutcome {
                trial,
                seed,
                status: TrialStatus::Diverged {
                    iteration: d.iteration,
                    reason: d.reason,
                },
                initial_cost: d.trace.first().map_or(f64::NAN, |r| r.cost),
                last: None,
            })
        }
        Err(e) => Err(e),
    }
}

/// Runs all trials, writing traces, final models and the summary into `out_dir`.
/// Diverged trials are reported in the summary, not as errors.
pub fn run_experiment(cfg: &ExperimentConfig, out_dir: &Path) -> Result<Summary> {
    cfg.validate()?;
    fs::create_dir_all(out_dir)?;
    let shared = load_instance(&cfg.source)?;
    let shared_init = cfg.init.as_ref().map(load_model).transpose()?;
    let n_modes = match (&shared, cfg.source.synthetic_spec(0)) {
        (Some(i), _) => i.tensor.order(),
        (None, Some(spec)) => spec.shape.len(),
        (None, None) => unreachable!("file sources are loaded"),
    };
    let with_mse = match &shared {
        Some(i) => i.truth.is_some(),
        None => true,
    };
    let outcomes = cfg
        .solver
        .exec
        .map_items((0..cfg.trials).collect(), |k| run_trial(cfg, shared.as_ref(), shared_init.as_ref(), out_dir, k));
    let trials = outcomes.into_iter().collect::<Result<Vec<_>>>()?;
    let summary = Summary {
        header: header_lines(cfg),
        n_modes,
        with_mse,
        trials,
    };
    fs::write(out_dir.join(SUMMARY_FILE), summary.to_csv())?;
    Ok(summary)
}

/// Files written by [`generate_instance`].
#[derive(Debug, Clone)]
pub struct GeneratedFiles {
    pub tensor: PathBuf,
    pub truth: PathBuf,
    pub clean: Option<PathBuf>,
}

/// Writes the trial-0 synthetic instance of `cfg` as `tensor.dten`,
/// `truth.dfac` and, for noisy instances, `clean.dten`.
pub fn generate_instance(cfg: &ExperimentConfig, out_dir: &Path) -> Result<GeneratedFiles> {
    let seed = data_seed(trial_seed(cfg.solver.seed, 0));
    let spec = cfg
        .source
        .synthetic_spec(seed)
        .ok_or_else(|| CpdError::arg("generate needs source = synthetic"))?;
    let inst = generate(&spec, cfg.solver.exec)?;
    fs::create_dir_all(out_dir)?;
    let files = GeneratedFiles {
        tensor: out_dir.join("tensor.dten"),
        truth: out_dir.join("truth.dfac"),
        clean: inst.clean.as_ref().map(|_| out_dir.join("clean.dten")),
    };
    save_tensor(&files.tensor, &inst.tensor)?;
    save_model(&files.truth, &inst.truth)?;
    if let (Some(path), Some(clean)) = (&files.clean, &inst.clean) {
        save_tensor(path, clean)?;
    }
    let mut info = header_lines(cfg);
    info.push(format!("data_seed = {seed}"));
    info.push(format!("noise_sigma = {}", inst.noise_sigma));
    let text: String = info.iter().map(|l| format!("# {l}\n")).collect();
    fs::write(out_dir.join("instance.txt"), text)?;
    Ok(files)
}
