use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use fundsep::exec::Exec;
use fundsep::feynman_kac::{estimate_remainder, FzForm};
use fundsep::*;
use std::hint::black_box;

fn config(exec: Exec) -> SimConfig {
    SimConfig {
        n_paths: 4_000,
        dt: 2e-3,
        horizon: 2.0,
        exec,
        ..SimConfig::default()
    }
}

fn simulation(c: &mut Criterion) {
    let mut group = c.benchmark_group("simulate");
    group.sample_size(10);
    for kind in ModelKind::ALL {
        let model = presets::model(kind);
        let dc = derive_constants(&presets::market(), &model).unwrap();
        let z = presets::tilted_mean(&model, &dc).unwrap();
        for (name, exec) in [("parallel", Exec::Auto), ("sequential", Exec::Sequential)] {
            let cfg = config(exec);
            group.bench_with_input(BenchmarkId::new(name, kind), &cfg, |b, cfg| {
                b.iter(|| {
                    black_box(
                        simulate(&model, &dc, MeasureTag::PTilde, z, cfg, &[Functional::IntZ])
                            .unwrap(),
                    )
                })
            });
        }
    }
    group.finish();
}

fn remainder(c: &mut Criterion) {
    let mut group = c.benchmark_group("remainder");
    group.sample_size(10);
    let model = presets::model(ModelKind::InverseBessel);
    let dc = derive_constants(&presets::market(), &model).unwrap();
    let z = presets::tilted_mean(&model, &dc).unwrap();
    let times = [0.5, 1.0, 1.5, 2.0];
    for (name, exec) in [("parallel", Exec::Auto), ("sequential", Exec::Sequential)] {
        let cfg = config(exec);
        group.bench_function(name, |b| {
            b.iter(|| {
                black_box(estimate_remainder(&model, &dc, z, &times, &cfg, FzForm::Hat).unwrap())
            })
        });
    }
    group.finish();
}

criterion_group!(benches, simulation, remainder);
criterion_main!(benches);
