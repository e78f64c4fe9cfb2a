use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use llabo_bench::{bo_network, branin_data, queries};
use llabo_core::laplace::{Hyperparams, SubsetMask, WeightSpace};
use llabo_core::nn::{jacobian_batch, init_params, MlpConfig};
use llabo_core::surrogate::{lla_predict_batch, lla_predict_functionspace, lla_predict_weightspace};
use llabo_core::{
    optimize_acq, surrogate_fit_predict, AcqOptConfig, Acquisition, AcquisitionKind, Activation, LaplacePosterior,
    SurrogateKind, SurrogateSettings, TrainConfig,
};

fn bench_jacobian(c: &mut Criterion) {
    let mut g = c.benchmark_group("jacobian");
    for m in [20usize, 70] {
        let (_, data) = branin_data(m, 0);
        let (cfg, theta) = bo_network(2, 0);
        g.bench_with_input(BenchmarkId::from_parameter(m), &m, |b, _| {
            b.iter(|| jacobian_batch(&cfg, &theta, &data.x).unwrap())
        });
    }
    g.finish();
}

fn bench_predict(c: &mut Criterion) {
    let (_, data) = branin_data(30, 1);
    let cfg = MlpConfig::new(2, vec![20, 20], Activation::ReLU).unwrap();
    let theta = init_params(&cfg, 1);
    let h = Hyperparams::new(1.0, 0.1);
    let post = LaplacePosterior::new(&cfg, theta, SubsetMask::Full, &data.x, h, WeightSpace::Always).unwrap();
    let x = [0.3, 0.7];
    let mut g = c.benchmark_group("lla_predict");
    g.bench_function("weight_space", |b| b.iter(|| lla_predict_weightspace(&post, &x).unwrap()));
    g.bench_function("function_space", |b| b.iter(|| lla_predict_functionspace(&post, &x).unwrap()));
    g.bench_function("batch_512", |b| {
        let rows = queries(512, 2);
        let q = nalgebra::DMatrix::from_fn(512, 2, |i, j| rows[i][j]);
        b.iter(|| lla_predict_batch(&post, &q).unwrap())
    });
    g.finish();
}

fn settings(epochs: usize) -> SurrogateSettings {
    SurrogateSettings {
        train: TrainConfig {
            epochs,
            ..TrainConfig::bayesopt()
        },
        ..SurrogateSettings::default()
    }
}

fn bench_fit(c: &mut Criterion) {
    let (bounds, data) = branin_data(30, 2);
    let s = settings(200);
    let mut g = c.benchmark_group("surrogate_fit");
    g.sample_size(10);
    for kind in [SurrogateKind::LlaPosthoc, SurrogateKind::LlaOnline, SurrogateKind::RbfGp] {
        g.bench_function(format!("{kind:?}"), |b| {
            b.iter(|| surrogate_fit_predict(kind, &data, &bounds, &s, 3).unwrap())
        });
    }
    g.finish();
}

fn bench_acquisition(c: &mut Criterion) {
    let (bounds, data) = branin_data(30, 4);
    let best = data.y.min();
    let mut g = c.benchmark_group("optimize_acq");
    g.sample_size(10);
    for kind in [SurrogateKind::LlaPosthoc, SurrogateKind::RbfGp] {
        let s = surrogate_fit_predict(kind, &data, &bounds, &settings(200), 5).unwrap();
        g.bench_function(format!("{kind:?}"), |b| {
            b.iter(|| {
                optimize_acq(&s, &bounds, Acquisition::new(AcquisitionKind::Ei, best), &AcqOptConfig::default(), 6)
                    .unwrap()
            })
        });
    }
    g.finish();
}

criterion_group!(benches, bench_jacobian, bench_predict, bench_fit, bench_acquisition);
criterion_main!(benches);
