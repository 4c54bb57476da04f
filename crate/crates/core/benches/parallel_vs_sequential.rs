use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use brascpd::kr::full_mttkrp;
use brascpd::metrics::cost;
use brascpd::sampling::BatchSchedule;
use brascpd::solver::{initialize, run, SolverConfig, StepSchedule, StoppingRule};
use brascpd::synthetic::{generate, SyntheticSpec};
use brascpd::trace::NullSink;
use brascpd::{Exec, Regularizer};

const MODES: [(&str, Exec); 2] = [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)];

fn kernels(c: &mut Criterion) {
    for i in [40usize, 100] {
        let inst = generate(&SyntheticSpec::new(vec![i, i, i], 10, 7), Exec::default()).unwrap();
        let model = initialize(&[i, i, i], 10, 3).unwrap();
        let mut g = c.benchmark_group(format!("kernels_{i}^3"));
        g.sample_size(20);
        for (name, exec) in MODES {
            g.bench_with_input(BenchmarkId::new("full_mttkrp", name), &exec, |b, &e| {
                b.iter(|| full_mttkrp(&inst.tensor, &model, 1, e).unwrap())
            });
            g.bench_with_input(BenchmarkId::new("cost", name), &exec, |b, &e| {
                b.iter(|| cost(&inst.tensor, &model, e).unwrap())
            });
        }
        g.finish();
    }
}

fn solver(c: &mut Criterion) {
    let shape = [60usize, 60, 60];
    let inst = generate(&SyntheticSpec::new(shape.to_vec(), 10, 11), Exec::default()).unwrap();
    let mut g = c.benchmark_group("adacpd_60^3_5_mttkrp");
    g.sample_size(10);
    for (name, exec) in MODES {
        let cfg = SolverConfig {
            schedule: StepSchedule::ada_default(),
            batch: BatchSchedule::Fixed(20),
            seed: 5,
            exec,
            ..SolverConfig::default()
        };
        g.bench_function(name, |b| {
            b.iter(|| {
                let init = initialize(&shape, 10, 5).unwrap();
                run(
                    &inst.tensor,
                    init,
                    &cfg,
                    &[Regularizer::Nonneg; 3],
                    &StoppingRule::mttkrp(5.0),
                    None,
                    &mut NullSink,
                )
                .unwrap()
            })
        });
    }
    g.finish();
}

criterion_group!(benches, kernels, solver);
criterion_main!(benches);
