use criterion::{criterion_group, criterion_main, Criterion};

use swbss_bench::{mixture, observed};
use swbss_core::model::build_stacked_past;
use swbss_core::optimizer::{run, RunConfig};
use swbss_core::spectral::{istft, stft};
use swbss_core::swiva::{swiva_sweep, SwivaOptions, SwivaState};
use swbss_core::swwpe::update_g;
use swbss_core::{BinMatrices, CMatrix, LoadingPolicy, RealTensor, SourceVariances, StftConfig, SwitchWeights};

fn spectral(c: &mut Criterion) {
    let cfg = StftConfig::default();
    let w = mixture(4.0);
    let x = stft(&w, &cfg).unwrap();
    c.bench_function("stft 4s stereo", |b| b.iter(|| stft(&w, &cfg).unwrap()));
    c.bench_function("istft 4s stereo", |b| {
        b.iter(|| istft(&x, &cfg, w.len(), w.sample_rate).unwrap())
    });
}

fn updates(c: &mut Criterion) {
    let x = observed(4.0);
    let (m, frames, bins) = x.dims();
    let xbar = build_stacked_past(&x, 2, 10).unwrap();
    let lam = RealTensor::filled(m, frames, bins, 1.0);
    for (ni, nj) in [(1, 1), (2, 2)] {
        let beta = SwitchWeights::one_hot(ni, nj, frames, bins, |t, _| (t % ni, (t / 3) % nj));
        let w = BinMatrices::filled(nj, bins, CMatrix::identity(m, m));
        c.bench_function(&format!("update_g {ni}x{nj}"), |b| {
            b.iter(|| update_g(&x, &xbar, &beta, &lam, &w, LoadingPolicy::default()).unwrap())
        });
        let state = SwivaState {
            w: w.clone(),
            lam: SourceVariances::from_fine(lam.clone(), 1e-6),
            beta: SwitchWeights::one_hot(1, nj, frames, bins, |t, _| (0, t % nj)),
        };
        let z = vec![x.clone()];
        c.bench_function(&format!("swiva sweep J={nj}"), |b| {
            b.iter_batched(
                || state.clone(),
                |mut s| swiva_sweep(&z, &mut s, &SwivaOptions::default()).unwrap(),
                criterion::BatchSize::LargeInput,
            )
        });
    }
}

fn full_run(c: &mut Criterion) {
    let x = observed(2.0);
    let mut group = c.benchmark_group("run 2s");
    group.sample_size(10);
    for cfg in [
        RunConfig {
            rounds: 2,
            ..RunConfig::iva()
        },
        RunConfig {
            rounds: 2,
            ..RunConfig::civa()
        },
    ] {
        group.bench_function(cfg.mode.to_string(), |b| b.iter(|| run(&x, &cfg, None).unwrap()));
    }
    group.finish();
}

criterion_group!(benches, spectral, updates, full_run);
criterion_main!(benches);
