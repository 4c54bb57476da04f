use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use brascpd::config::ExperimentConfig;
use brascpd::exec::with_threads;
use brascpd::experiment::{generate_instance, run_experiment, SUMMARY_FILE};
use brascpd::verify::{parse_selector, run_suites, VerifyOptions};
use brascpd::Exec;

/// Exit code when at least one trial diverged.
const EXIT_DIVERGED: u8 = 2;

#[derive(Parser)]
#[command(name = "brascpd", version, about = "Block-randomized stochastic CP decomposition")]
struct Cli {
    /// Worker threads (default: all cores). 1 runs everything sequentially.
    #[arg(long, global = true, value_name = "P")]
    parallel: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the synthetic instance described by a config file.
    Generate(ExperimentArgs),
    /// Run all trials of an experiment and write traces and a summary.
    Run(ExperimentArgs),
    /// Run the built-in oracle checks.
    Verify {
        /// `all` or a comma-separated list of index, kr, gradient, prox, metrics.
        #[arg(default_value = "all")]
        suites: String,
        #[arg(long)]
        seed: Option<u64>,
        /// Multiplies the sampled gradients in the unbiasedness check.
        #[arg(long, hide = true, default_value_t = 1.0)]
        corrupt_gradient_scale: f64,
    },
}

#[derive(Args)]
struct ExperimentArgs {
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Output directory; overrides `out` in the config.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Overrides `trials` in the config.
    #[arg(long, value_name = "K")]
    trials: Option<usize>,
    /// Overrides the master `seed` in the config.
    #[arg(long, value_name = "S")]
    seed: Option<u64>,
}

impl ExperimentArgs {
    fn load(&self, parallel: Option<usize>) -> Result<(ExperimentConfig, PathBuf)> {
        let mut cfg = ExperimentConfig::load(&self.config)
            .with_context(|| format!("reading config {}", self.config.display()))?;
        if let Some(k) = self.trials {
            cfg.trials = k;
        }
        if let Some(s) = self.seed {
            cfg.solver.seed = s;
        }
        if parallel == Some(1) {
            cfg.solver.exec = Exec::Sequential;
        }
        cfg.validate()?;
        let Some(out) = self.out.clone().or_else(|| cfg.out.clone()) else {
            bail!("no output directory: pass --out or set `out` in the config");
        };
        Ok((cfg, out))
    }
}

fn fmt_row(cols: &[String], values: &[f64]) -> String {
    cols.iter()
        .zip(values)
        .map(|(c, v)| format!("{c}={v:.6e}"))
        .collect::<Vec<_>>()
        .join(" ")
}

fn execute(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Generate(args) => {
            let (cfg, out) = args.load(cli.parallel)?;
            let files = generate_instance(&cfg, &out)?;
            println!("wrote {}", files.tensor.display());
            println!("wrote {}", files.truth.display());
            if let Some(clean) = files.clean {
                println!("wrote {}", clean.display());
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Run(args) => {
            let (cfg, out) = args.load(cli.parallel)?;
            let summary = run_experiment(&cfg, &out)?;
            let cols = summary.columns();
            println!("trials: {}, diverged: {}", summary.trials.len(), summary.diverged());
            println!("mean:   {}", fmt_row(&cols, &summary.mean()));
            println!("median: {}", fmt_row(&cols, &summary.median()));
            println!("summary: {}", out.join(SUMMARY_FILE).display());
            if summary.diverged() > 0 {
                eprintln!("{} trial(s) diverged", summary.diverged());
                return Ok(ExitCode::from(EXIT_DIVERGED));
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Verify {
            suites,
            seed,
            corrupt_gradient_scale,
        } => {
            let suites = parse_selector(&suites)?;
            let mut opts = VerifyOptions {
                gradient_scale: corrupt_gradient_scale,
                ..VerifyOptions::default()
            };
            if let Some(s) = seed {
                opts.seed = s;
            }
            let report = run_suites(&suites, &opts);
            for r in &report {
                println!("{r}");
            }
            let failed = report.iter().filter(|r| !r.passed).count();
            if failed > 0 {
                eprintln!("{failed} check(s) failed");
                return Ok(ExitCode::FAILURE);
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let threads = cli.parallel;
    let result = match threads {
        Some(p) => with_threads(p, || execute(cli)).map_err(anyhow::Error::from).and_then(|r| r),
        None => execute(cli),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
