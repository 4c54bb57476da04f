//! Flat `key = value` experiment configuration.
//!
//! ```text
//! # 100^3 rank-10 nonnegative run
//! source = synthetic
//! shape = 100,100,100
//! rank = 10
//! algorithm = adacpd
//! batch = 20
//! reg = nonneg
//! max_mttkrp = 30
//! trials = 10
//! ```
//!
//! Blank lines and lines starting with `#` are ignored. Every key may appear
//! once. Regularizers are written `kind` or `kind:param`, e.g. `l1:0.1` or
//! `simplex:60`; `reg.N` overrides the regularizer of mode N.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::str::FromStr;

use crate::error::{CpdError, Result};
use crate::exec::Exec;
use crate::prox::Regularizer;
use crate::sampling::BatchSchedule;
use crate::solver::{SolverConfig, StepSchedule, StoppingRule};
use crate::synthetic::{FactorDistribution, SyntheticSpec, DEFAULT_MEMORY_LIMIT};

#[derive(Debug, Clone, PartialEq)]
pub enum InstanceSource {
    Synthetic {
        shape: Vec<usize>,
        /// Rank of the generating factors.
        true_rank: usize,
        distribution: FactorDistribution,
        snr_db: Option<f64>,
        memory_limit: u128,
    },
    File {
        tensor: PathBuf,
        truth: Option<PathBuf>,
    },
}

impl InstanceSource {
    /// Synthetic spec for one trial's data seed.
    pub fn synthetic_spec(&self, seed: u64) -> Option<SyntheticSpec> {
        match self {
            InstanceSource::Synthetic {
                shape,
                true_rank,
                distribution,
                snr_db,
                memory_limit,
            } => Some(SyntheticSpec {
                shape: shape.clone(),
                rank: *true_rank,
                distribution: *distribution,
                snr_db: *snr_db,
                seed,
                memory_limit: *memory_limit,
            }),
            InstanceSource::File { .. } => None,
        }
    }
}

/// Regularizer for every mode, with per-mode overrides.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RegularizerSpec {
    pub default: Regularizer,
    /// Keyed by 1-based mode.
    pub per_mode: BTreeMap<usize, Regularizer>,
}

impl RegularizerSpec {
    pub fn uniform(reg: Regularizer) -> Self {
        RegularizerSpec {
            default: reg,
            per_mode: BTreeMap::new(),
        }
    }

    pub fn resolve(&self, n_modes: usize) -> Result<Vec<Regularizer>> {
        if let Some((&mode, _)) = self.per_mode.iter().find(|(&m, _)| m == 0 || m > n_modes) {
            return Err(CpdError::arg(format!("regularizer given for mode {mode} of a {n_modes}-way tensor")));
        }
        Ok((1..=n_modes)
            .map(|n| *self.per_mode.get(&n).unwrap_or(&self.default))
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub source: InstanceSource,
    /// Rank of the fitted model.
    pub rank: usize,
    /// Shared initialization; random per trial when absent.
    pub init: Option<PathBuf>,
    /// `solver.seed` is the master seed of the experiment.
    pub solver: SolverConfig,
    pub regs: RegularizerSpec,
    pub stopping: StoppingRule,
    pub trials: usize,
    pub out: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn synthetic(shape: Vec<usize>, rank: usize) -> Self {
        ExperimentConfig {
            source: InstanceSource::Synthetic {
                shape,
                true_rank: rank,
                distribution: FactorDistribution::Uniform,
                snr_db: None,
                memory_limit: DEFAULT_MEMORY_LIMIT,
            },
            rank,
            init: None,
            solver: SolverConfig::default(),
            regs: RegularizerSpec::uniform(Regularizer::Nonneg),
            stopping: StoppingRule::mttkrp(30.0),
            trials: 1,
            out: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.rank == 0 {
            return Err(CpdError::arg("rank must be at least 1"));
        }
        if self.trials == 0 {
            return Err(CpdError::arg("trials must be at least 1"));
        }
        if let Some(spec) = self.source.synthetic_spec(0) {
            spec.validate()?;
            if spec.shape.len() < 3 {
                return Err(CpdError::dim("the solvers need a tensor of order >= 3"));
            }
            self.regs.resolve(spec.shape.len())?;
        }
        self.solver.validate()?;
        self.stopping.validate()?;
        for reg in std::iter::once(&self.regs.default).chain(self.regs.per_mode.values()) {
            reg.validate()?;
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut kv = Entries::read(text)?;
        let rank: usize = kv.required("rank")?;
        let source = match kv.get_str("source").unwrap_or_else(|| (0, "synthetic".into())) {
            (_, s) if s == "synthetic" => {
                let shape = kv.required_with("shape", parse_list::<usize>)?;
                let true_rank = kv.get("true_rank")?.unwrap_or(rank);
                let distribution = match kv.get::<f64>("factor_column_sum")? {
                    Some(rho) => FactorDistribution::UniformColumnSum(rho),
                    None => FactorDistribution::Uniform,
                };
                InstanceSource::Synthetic {
                    shape,
                    true_rank,
                    distribution,
                    snr_db: kv.get("snr_db")?,
                    memory_limit: kv.get("memory_limit_bytes")?.unwrap_or(DEFAULT_MEMORY_LIMIT),
                }
            }
            (_, s) if s == "file" => InstanceSource::File {
                tensor: kv.required::<PathBuf>("tensor_path")?,
                truth: kv.get("truth_path")?,
            },
            (line, other) => {
                return Err(config_err(line, "source", format!("expected synthetic or file, got `{other}`")));
            }
        };

        let (alg_line, algorithm) = kv.get_str("algorithm").unwrap_or_else(|| (0, "adacpd".into()));
        let schedule = match algorithm.as_str() {
            "adacpd" => {
                kv.reject("alpha", "only applies to algorithm = brascpd")?;
                kv.reject("beta", "only applies to algorithm = brascpd")?;
                let StepSchedule::Adagrad {
                    eta,
                    b,
                    epsilon,
                    include_current,
                } = StepSchedule::ada_default()
                else {
                    unreachable!()
                };
                StepSchedule::Adagrad {
                    eta: kv.get("eta")?.unwrap_or(eta),
                    b: kv.get("b")?.unwrap_or(b),
                    epsilon: kv.get("epsilon")?.unwrap_or(epsilon),
                    include_current: kv.get("include_current_gradient")?.unwrap_or(include_current),
                }
            }
            "brascpd" => {
                for key in ["eta", "b", "epsilon", "include_current_gradient"] {
                    kv.reject(key, "only applies to algorithm = adacpd")?;
                }
                let StepSchedule::PowerDecay { alpha0, beta } = StepSchedule::bras_default() else {
                    unreachable!()
                };
                StepSchedule::PowerDecay {
                    alpha0: kv.get("alpha")?.unwrap_or(alpha0),
                    beta: kv.get("beta")?.unwrap_or(beta),
                }
            }
            other => {
                return Err(config_err(alg_line, "algorithm", format!("expected adacpd or brascpd, got `{other}`")));
            }
        };

        let base: usize = kv.get("batch")?.unwrap_or(20);
        let batch = match kv.get::<f64>("batch_growth")? {
            Some(epsilon) => BatchSchedule::Growing { base, epsilon },
            None => BatchSchedule::Fixed(base),
        };
        let defaults = SolverConfig::default();
        let solver = SolverConfig {
            schedule,
            batch,
            seed: kv.get("seed")?.unwrap_or(0),
            mode_weights: kv.get_with("mode_weights", parse_list::<f64>)?,
            safeguard_mu: kv.get("safeguard_mu")?.unwrap_or(0.0),
            trace_every: kv.get("trace_every")?.unwrap_or(defaults.trace_every),
            record_wall_time: kv.get("record_wall_time")?.unwrap_or(false),
            exec: Exec::default(),
        };

        let mut regs = RegularizerSpec::uniform(kv.get_with("reg", parse_regularizer)?.unwrap_or(Regularizer::Nonneg));
        for key in kv.keys_with_prefix("reg.") {
            let field = key.clone();
            let line = kv.line_of(&key);
            let mode: usize = key["reg.".len()..]
                .parse()
                .map_err(|_| config_err(line, &field, "expected reg.<mode> with a 1-based mode"))?;
            let reg = kv.required_with(&key, parse_regularizer)?;
            regs.per_mode.insert(mode, reg);
        }

        let mut stopping = StoppingRule {
            max_iterations: kv.get("max_iterations")?,
            max_mttkrp_eq: kv.get("max_mttkrp")?,
            max_wall_seconds: kv.get("max_wall_seconds")?,
            target_cost: kv.get("target_cost")?,
        };
        if stopping.validate().is_err() {
            stopping.max_mttkrp_eq = Some(30.0);
        }

        let cfg = ExperimentConfig {
            source,
            rank,
            init: kv.get("init_path")?,
            solver,
            regs,
            stopping,
            trials: kv.get("trials")?.unwrap_or(1),
            out: kv.get("out")?,
        };
        kv.finish()?;
        cfg.validate().map_err(|e| match e {
            CpdError::Argument(m) | CpdError::Dimension(m) => config_err(0, "(config)", m),
            other => other,
        })?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Canonical `key = value` lines with every default resolved.
    pub fn echo(&self) -> Vec<String> {
        let mut out = Vec::new();
        let mut put = |k: &str, v: String| out.push(format!("{k} = {v}"));
        match &self.source {
            InstanceSource::Synthetic {
                shape,
                true_rank,
                distribution,
                snr_db,
                memory_limit,
            } => {
                put("source", "synthetic".into());
                put("shape", join(shape));
                put("true_rank", true_rank.to_string());
                if let FactorDistribution::UniformColumnSum(rho) = distribution {
                    put("factor_column_sum", rho.to_string());
                }
                if let Some(snr) = snr_db {
                    put("snr_db", snr.to_string());
                }
                put("memory_limit_bytes", memory_limit.to_string());
            }
            InstanceSource::File { tensor, truth } => {
                put("source", "file".into());
                put("tensor_path", tensor.display().to_string());
                if let Some(t) = truth {
                    put("truth_path", t.display().to_string());
                }
            }
        }
        put("rank", self.rank.to_string());
        if let Some(p) = &self.init {
            put("init_path", p.display().to_string());
        }
        put("algorithm", self.solver.schedule.name().into());
        match self.solver.schedule {
            StepSchedule::PowerDecay { alpha0, beta } => {
                put("alpha", alpha0.to_string());
                put("beta", beta.to_string());
            }
            StepSchedule::Adagrad {
                eta,
                b,
                epsilon,
                include_current,
            } => {
                put("eta", eta.to_string());
                put("b", b.to_string());
                put("epsilon", epsilon.to_string());
                put("include_current_gradient", include_current.to_string());
            }
        }
        match self.solver.batch {
            BatchSchedule::Fixed(b) => put("batch", b.to_string()),
            BatchSchedule::Growing { base, epsilon } => {
                put("batch", base.to_string());
                put("batch_growth", epsilon.to_string());
            }
        }
        put("seed", self.solver.seed.to_string());
        if let Some(w) = &self.solver.mode_weights {
            put("mode_weights", join(w));
        }
        put("safeguard_mu", self.solver.safeguard_mu.to_string());
        put("reg", format_regularizer(&self.regs.default));
        for (mode, reg) in &self.regs.per_mode {
            put(&format!("reg.{mode}"), format_regularizer(reg));
        }
        let s = &self.stopping;
        if let Some(v) = s.max_iterations {
            put("max_iterations", v.to_string());
        }
        if let Some(v) = s.max_mttkrp_eq {
            put("max_mttkrp", v.to_string());
        }
        if let Some(v) = s.max_wall_seconds {
            put("max_wall_seconds", v.to_string());
        }
        if let Some(v) = s.target_cost {
            put("target_cost", v.to_string());
        }
        put("trials", self.trials.to_string());
        put("trace_every", self.solver.trace_every.to_string());
        put("record_wall_time", self.solver.record_wall_time.to_string());
        out
    }
}

fn join<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

fn config_err(line: usize, field: &str, message: impl Into<String>) -> CpdError {
    CpdError::Config {
        line,
        field: field.to_string(),
        message: message.into(),
    }
}

fn parse_list<T: FromStr>(s: &str) -> std::result::Result<Vec<T>, String> {
    s.split(',')
        .map(|p| p.trim().parse::<T>().map_err(|_| format!("cannot parse `{}` in list `{s}`", p.trim())))
        .collect()
}

/// Parses `none`, `nonneg`, `monotone`, `l1:λ`, `l2:λ`, `l21:λ`, `l0:λ` or `simplex:ρ`.
pub fn parse_regularizer(s: &str) -> std::result::Result<Regularizer, String> {
    let (kind, param) = match s.split_once(':') {
        Some((k, p)) => (k.trim(), Some(p.trim())),
        None => (s.trim(), None),
    };
    let value = |name: &str| -> std::result::Result<f64, String> {
        let p = param.ok_or_else(|| format!("`{kind}` needs a {name}, e.g. `{kind}:0.1`"))?;
        p.parse::<f64>().map_err(|_| format!("bad {name} `{p}`"))
    };
    let reg = match kind {
        "none" => Regularizer::None,
        "nonneg" => Regularizer::Nonneg,
        "monotone" => Regularizer::Monotone,
        "l1" => Regularizer::L1(value("weight")?),
        "l2" => Regularizer::L2(value("weight")?),
        "l21" => Regularizer::L21(value("weight")?),
        "l0" => Regularizer::L0(value("weight")?),
        "simplex" => Regularizer::Simplex(value("column sum")?),
        "unimodal" => return Err("unimodal constraints are not supported".into()),
        other => return Err(format!("unknown regularizer `{other}`")),
    };
    if param.is_some() && matches!(reg, Regularizer::None | Regularizer::Nonneg | Regularizer::Monotone) {
        return Err(format!("`{kind}` takes no parameter"));
    }
    reg.validate().map_err(|e| e.to_string())?;
    Ok(reg)
}

pub fn format_regularizer(r: &Regularizer) -> String {
    match r {
        Regularizer::None => "none".into(),
        Regularizer::Nonneg => "nonneg".into(),
        Regularizer::Monotone => "monotone".into(),
        Regularizer::L1(l) => format!("l1:{l}"),
        Regularizer::L2(l) => format!("l2:{l}"),
        Regularizer::L21(l) => format!("l21:{l}"),
        Regularizer::L0(l) => format!("l0:{l}"),
        Regularizer::Simplex(rho) => format!("simplex:{rho}"),
    }
}

struct Entries {
    map: BTreeMap<String, (usize, String)>,
}

impl Entries {
    fn read(text: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let Some((k, v)) = trimmed.split_once('=') else {
                return Err(config_err(line, trimmed, "expected `key = value`"));
            };
            let (k, v) = (k.trim(), v.trim());
            if k.is_empty() {
                return Err(config_err(line, "", "empty key"));
            }
            if let Some((first, _)) = map.insert(k.to_string(), (line, v.to_string())) {
                return Err(config_err(line, k, format!("duplicate key, first set on line {first}")));
            }
        }
        Ok(Entries { map })
    }

    fn line_of(&self, key: &str) -> usize {
        self.map.get(key).map_or(0, |(l, _)| *l)
    }

    fn keys_with_prefix(&self, prefix: &str) -> Vec<String> {
        self.map.keys().filter(|k| k.starts_with(prefix)).cloned().collect()
    }

    fn get_str(&mut self, key: &str) -> Option<(usize, String)> {
        self.map.remove(key)
    }

    fn get_with<T>(&mut self, key: &str, parse: impl Fn(&str) -> std::result::Result<T, String>) -> Result<Option<T>> {
        match self.map.remove(key) {
            None => Ok(None),
            Some((line, v)) => parse(&v).map(Some).map_err(|m| config_err(line, key, m)),
        }
    }

    fn get<T: FromStr>(&mut self, key: &str) -> Result<Option<T>> {
        self.get_with(key, |v| v.parse::<T>().map_err(|_| format!("cannot parse `{v}`")))
    }

    fn required_with<T>(&mut self, key: &str, parse: impl Fn(&str) -> std::result::Result<T, String>) -> Result<T> {
        self.get_with(key, parse)?
            .ok_or_else(|| config_err(0, key, "required key is missing"))
    }

    fn required<T: FromStr>(&mut self, key: &str) -> Result<T> {
        self.get(key)?.ok_or_else(|| config_err(0, key, "required key is missing"))
    }

    fn reject(&mut self, key: &str, why: &str) -> Result<()> {
        match self.map.get(key) {
            Some((line, _)) => Err(config_err(*line, key, why)),
            None => Ok(()),
        }
    }

    fn finish(self) -> Result<()> {
        match self.map.into_iter().next() {
            Some((k, (line, _))) => Err(config_err(line, &k, "unknown key")),
            None => Ok(()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASIC: &str = "
# comment
shape = 10, 9, 8
rank = 3
algorithm = brascpd
alpha = 0.1
reg = nonneg
reg.2 = simplex:9
max_mttkrp = 5
trials = 2
seed = 42
";

    #[test]
    fn parses_basic_file() {
        let cfg = ExperimentConfig::parse(BASIC).unwrap();
        assert_eq!(cfg.rank, 3);
        assert_eq!(cfg.trials, 2);
        assert_eq!(cfg.solver.seed, 42);
        assert_eq!(cfg.solver.schedule, StepSchedule::PowerDecay { alpha0: 0.1, beta: 1e-6 });
        assert_eq!(cfg.stopping.max_mttkrp_eq, Some(5.0));
        assert_eq!(
            cfg.regs.resolve(3).unwrap(),
            vec![Regularizer::Nonneg, Regularizer::Simplex(9.0), Regularizer::Nonneg]
        );
        match cfg.source {
            InstanceSource::Synthetic { shape, true_rank, .. } => {
                assert_eq!(shape, vec![10, 9, 8]);
                assert_eq!(true_rank, 3);
            }
            _ => panic!(),
        }
    }

    #[test]
    fn echo_roundtrips() {
        let cfg = ExperimentConfig::parse(BASIC).unwrap();
        let text = cfg.echo().join("\n");
        let again = ExperimentConfig::parse(&text).unwrap();
        assert_eq!(again, cfg);
        assert_eq!(again.echo(), cfg.echo());
    }

    fn err_of(text: &str) -> (usize, String, String) {
        match ExperimentConfig::parse(text).unwrap_err() {
            CpdError::Config { line, field, message } => (line, field, message),
            other => panic!("expected config error, got {other}"),
        }
    }

    #[test]
    fn unknown_key_reports_line() {
        let (line, field, _) = err_of("shape = 4,4,4\nrank = 2\nbogus = 1\n");
        assert_eq!((line, field.as_str()), (3, "bogus"));
    }

    #[test]
    fn duplicate_key() {
        let (line, field, msg) = err_of("rank = 2\nshape = 4,4,4\nrank = 3\n");
        assert_eq!((line, field.as_str()), (3, "rank"));
        assert!(msg.contains("line 1"));
    }

    #[test]
    fn bad_value_and_missing_key() {
        let (line, field, _) = err_of("shape = 4,x,4\nrank = 2\n");
        assert_eq!((line, field.as_str()), (1, "shape"));
        let (_, field, _) = err_of("shape = 4,4,4\n");
        assert_eq!(field, "rank");
        let (line, field, _) = err_of("shape = 4,4,4\nrank = 2\nreg = unimodal\n");
        assert_eq!((line, field.as_str()), (3, "reg"));
        let (line, field, _) = err_of("shape = 4,4,4\nrank = 2\nalgorithm = adacpd\nalpha = 0.1\n");
        assert_eq!((line, field.as_str()), (4, "alpha"));
        let (line, _, _) = err_of("shape = 4,4,4\nrank = 2\nno equals sign\n");
        assert_eq!(line, 3);
    }

    #[test]
    fn defaults() {
        let cfg = ExperimentConfig::parse("shape = 5,5,5\nrank = 2\n").unwrap();
        assert_eq!(cfg.solver.schedule, StepSchedule::ada_default());
        assert_eq!(cfg.solver.batch, BatchSchedule::Fixed(20));
        assert_eq!(cfg.stopping.max_mttkrp_eq, Some(30.0));
        assert_eq!(cfg.regs.default, Regularizer::Nonneg);
        assert_eq!(cfg.trials, 1);
    }

    #[test]
    fn regularizer_syntax() {
        assert_eq!(parse_regularizer("l1:0.5"), Ok(Regularizer::L1(0.5)));
        assert_eq!(parse_regularizer(" simplex : 3 "), Ok(Regularizer::Simplex(3.0)));
        assert!(parse_regularizer("l1").is_err());
        assert!(parse_regularizer("nonneg:1").is_err());
        assert!(parse_regularizer("simplex:-1").is_err());
        for r in [Regularizer::L21(0.25), Regularizer::Monotone, Regularizer::L0(2.0)] {
            assert_eq!(parse_regularizer(&format_regularizer(&r)), Ok(r));
        }
    }

    #[test]
    fn per_mode_out_of_range() {
        let (_, field, _) = err_of("shape = 4,4,4\nrank = 2\nreg.4 = nonneg\n");
        assert_eq!(field, "(config)");
    }
}
