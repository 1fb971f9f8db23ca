use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tsfb_core::chronos::{tokenize, ChronosConfig, ChronosModel, TokenizerConfig};
use tsfb_core::gbt::{best_split, TreeParams};
use tsfb_core::linreg::{fit_huber_linear, Penalty, HUBER_DELTA};
use tsfb_core::portfolio::perf_stats;
use tsfb_core::synth::{gp_sample, BaseKernel, KernelSpec};
use tsfb_core::tensorcore::Tensor;
use tsfb_core::timesfm::{TimesFmConfig, TimesFmModel};

fn series(n: usize, seed: u64) -> Vec<f64> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| r.random_range(-0.03..0.03)).collect()
}

fn tokenizer(c: &mut Criterion) {
    let tok = TokenizerConfig::static_range(4096);
    let ctx = series(512, 1);
    c.bench_function("tokenize_512", |b| b.iter(|| tokenize(black_box(&ctx), &tok).unwrap()));
}

fn chronos(c: &mut Criterion) {
    let model = ChronosModel::new(ChronosConfig::tiny(), 0).unwrap();
    let mut g = c.benchmark_group("chronos_forecast");
    for len in [21usize, 252, 512] {
        let ctx = series(len, 2);
        g.bench_with_input(BenchmarkId::from_parameter(len), &ctx, |b, ctx| {
            let mut r = ChaCha8Rng::seed_from_u64(3);
            b.iter(|| model.forecast(black_box(ctx), &mut r).unwrap())
        });
    }
    g.finish();
}

fn timesfm(c: &mut Criterion) {
    let model = TimesFmModel::new(TimesFmConfig::tiny(), 0).unwrap();
    let mut g = c.benchmark_group("timesfm_forecast");
    for len in [21usize, 252, 512] {
        let ctx = series(len, 4);
        g.bench_with_input(BenchmarkId::from_parameter(len), &ctx, |b, ctx| {
            b.iter(|| model.forecast(black_box(ctx)).unwrap())
        });
    }
    g.finish();
}

fn benchmarks(c: &mut Criterion) {
    let mut r = ChaCha8Rng::seed_from_u64(5);
    let x = Tensor::randn(&[4000, 21], 1.0, &mut r);
    let y = series(4000, 6);
    c.bench_function("huber_ridge_4000x21", |b| {
        b.iter(|| fit_huber_linear(&x, &y, Penalty::L2 { lambda: 1e-3 }, HUBER_DELTA).unwrap())
    });
    let rows: Vec<usize> = (0..4000).collect();
    let h = vec![1.0; 4000];
    c.bench_function("best_split_4000x21", |b| {
        b.iter(|| best_split(&x, &rows, &y, &h, &TreeParams::default()))
    });
}

fn reporting(c: &mut Criterion) {
    let rets = series(2520, 7);
    c.bench_function("perf_stats_2520", |b| b.iter(|| perf_stats(black_box(&rets)).unwrap()));
    let spec = KernelSpec::Leaf(BaseKernel::Rbf {
        variance: 1.0,
        length_scale: 5.0,
    });
    c.bench_function("gp_sample_rbf_512", |b| b.iter(|| gp_sample(&spec, 512, 9).unwrap()));
}

criterion_group! {
    name = hot_paths;
    config = Criterion::default().sample_size(10);
    targets = tokenizer, chronos, timesfm, benchmarks, reporting
}
criterion_main!(hot_paths);
