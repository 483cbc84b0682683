use std::sync::Arc;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use rllc::equiv::{verify, Suite};
use rllc::exec::Execution;
use rllc::tasks::{synthetic_classification, LogisticTask, MlpTask, Split, Task};

const POLICIES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn gradients(c: &mut Criterion) {
    let data = Arc::new(synthetic_classification(5000, 50, 5, 2.0, 7).unwrap());
    let mut group = c.benchmark_group("full_gradient");
    for (name, exec) in POLICIES {
        let mlp = MlpTask::new(data.clone(), &[32], 0).unwrap().with_execution(exec);
        let theta = mlp.initial_params(0);
        group.bench_with_input(BenchmarkId::new("mlp", name), &theta, |b, t| {
            b.iter(|| mlp.full_gradient(t))
        });

        let logistic = LogisticTask::new(data.clone(), 1e-3, 0).unwrap().with_execution(exec);
        let theta = logistic.initial_params(0);
        group.bench_with_input(BenchmarkId::new("logistic", name), &theta, |b, t| {
            b.iter(|| logistic.full_gradient(t))
        });
    }
    group.finish();

    let mut group = c.benchmark_group("train_loss");
    for (name, exec) in POLICIES {
        let mlp = MlpTask::new(data.clone(), &[32], 64).unwrap().with_execution(exec);
        let theta = mlp.initial_params(0);
        group.bench_with_input(BenchmarkId::new("mlp", name), &theta, |b, t| {
            b.iter(|| mlp.loss(t, Split::Train))
        });
    }
    group.finish();
}

fn suites(c: &mut Criterion) {
    let mut group = c.benchmark_group("verify");
    group.sample_size(10);
    for (name, exec) in POLICIES {
        group.bench_function(BenchmarkId::new("basis-independence", name), |b| {
            b.iter(|| verify(Suite::BasisIndependence, exec))
        });
    }
    group.finish();
}

criterion_group!(benches, gradients, suites);
criterion_main!(benches);
