//! Recover a small nonnegative synthetic tensor with AdaCPD and print the trace.

use brascpd::sampling::BatchSchedule;
use brascpd::solver::{initialize, run, SolverConfig, StepSchedule, StoppingRule};
use brascpd::synthetic::{generate, SyntheticSpec};
use brascpd::trace::NullSink;
use brascpd::{Exec, Regularizer};

fn main() -> brascpd::Result<()> {
    let shape = [40, 40, 40];
    let inst = generate(&SyntheticSpec::new(shape.to_vec(), 5, 1).with_snr(30.0), Exec::default())?;
    let cfg = SolverConfig {
        schedule: StepSchedule::ada_default(),
        batch: BatchSchedule::Fixed(20),
        seed: 1,
        ..SolverConfig::default()
    };
    let init = initialize(&shape, 5, 1)?;
    let out = run(
        &inst.tensor,
        init,
        &cfg,
        &[Regularizer::Nonneg; 3],
        &StoppingRule::mttkrp(20.0),
        Some(&inst.truth),
        &mut NullSink,
    )?;
    println!("mttkrp_eq\tcost\tmse_avg");
    for r in &out.trace {
        println!("{:.2}\t{:.4e}\t{:.4e}", r.mttkrp_eq, r.cost, r.mse_avg.unwrap_or(f64::NAN));
    }
    Ok(())
}
