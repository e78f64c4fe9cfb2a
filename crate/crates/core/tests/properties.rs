mod common;

use common::*;
use llabo_core::acquisition::RefineGradient;
use llabo_core::laplace::{Hyperparams, SubsetMask, WeightSpace};
use llabo_core::surrogate::{gp_predict, lla_predict_functionspace, PredictiveDist, RbfGpModel, Surrogate};
use llabo_core::{
    best_so_far, cb, ei, optimize_acq, AcqOptConfig, Acquisition, AcquisitionKind, Activation, Bounds, LaplacePosterior,
    Result,
};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::Rng;

fn append_row(x: &DMatrix<f64>, row: &[f64]) -> DMatrix<f64> {
    let mut out = x.clone().insert_row(x.nrows(), 0.0);
    for (j, v) in row.iter().enumerate() {
        out[(x.nrows(), j)] = *v;
    }
    out
}

/// Smooth analytic test surface with a heteroscedastic spread.
struct Bowl {
    centre: Vec<f64>,
    scale: f64,
}

impl Surrogate for Bowl {
    fn dim(&self) -> usize {
        self.centre.len()
    }

    fn predict(&self, x: &[f64]) -> Result<PredictiveDist> {
        let r2: f64 = x.iter().zip(&self.centre).map(|(a, c)| (a - c).powi(2)).sum();
        let var_f = 0.1 + 0.05 * x.iter().map(|v| v.sin().powi(2)).sum::<f64>();
        Ok(PredictiveDist {
            mu: self.scale * r2,
            var_f,
            var_y: var_f + 0.01,
        })
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn ei_is_nonnegative(mu in -1e3..1e3f64, s in 0.0..1e2f64, best in -1e3..1e3f64) {
        prop_assert!(ei(mu, s, best) >= 0.0);
    }

    #[test]
    fn cb_is_monotone(mu in -1e3..1e3f64, s in 0.0..1e2f64, d in 0.0..10.0f64, beta in 0.0..5.0f64) {
        prop_assert!(cb(mu + d, s, beta) >= cb(mu, s, beta));
        prop_assert!(cb(mu, s + d, beta) <= cb(mu, s, beta));
    }

    #[test]
    fn ei_grows_with_uncertainty(mu in -5.0..5.0f64, s in 0.01..5.0f64, d in 0.0..5.0f64, best in -5.0..5.0f64) {
        prop_assert!(ei(mu, s + d, best) >= ei(mu, s, best) - 1e-12);
    }

    #[test]
    fn best_so_far_never_increases(v in prop::collection::vec(-1e6..1e6f64, 1..64)) {
        let b = best_so_far(&v);
        prop_assert_eq!(b.len(), v.len());
        for w in b.windows(2) {
            prop_assert!(w[1] <= w[0]);
        }
        for (bi, vi) in b.iter().zip(&v) {
            prop_assert!(bi <= vi);
        }
    }

    #[test]
    fn lla_variance_never_increases_with_data(seed in any::<u64>(), relu in any::<bool>()) {
        let mut r = rng(seed);
        let act = if relu { Activation::ReLU } else { Activation::Tanh };
        let (cfg, theta) = random_mlp(&mut r, 3, 8, act);
        let m = r.random_range(1..=10);
        let data = random_data(&mut r, m, cfg.input_dim);
        let h = Hyperparams::new(r.random_range(0.1..5.0), r.random_range(0.01..1.0));
        let extra: Vec<f64> = (0..cfg.input_dim).map(|_| r.random_range(-2.0..2.0)).collect();
        let x2 = append_row(&data.x, &extra);
        let small = LaplacePosterior::new(&cfg, theta.clone(), SubsetMask::Full, &data.x, h, WeightSpace::Never).unwrap();
        let big = LaplacePosterior::new(&cfg, theta, SubsetMask::Full, &x2, h, WeightSpace::Never).unwrap();
        for _ in 0..4 {
            let q: Vec<f64> = (0..cfg.input_dim).map(|_| r.random_range(-2.0..2.0)).collect();
            let a = lla_predict_functionspace(&small, &q).unwrap().var_f;
            let b = lla_predict_functionspace(&big, &q).unwrap().var_f;
            prop_assert!(b <= a + 1e-9 * (1.0 + a), "{} > {}", b, a);
        }
    }

    #[test]
    fn gp_variance_never_increases_with_data(seed in any::<u64>()) {
        let mut r = rng(seed);
        let n = r.random_range(1..=3);
        let m = r.random_range(1..=10);
        let data = random_data(&mut r, m, n);
        let (l, a, s2) = (r.random_range(0.2..2.0), r.random_range(0.5..2.0), r.random_range(1e-3..0.5));
        let extra: Vec<f64> = (0..n).map(|_| r.random_range(-2.0..2.0)).collect();
        let mut y2 = data.y.as_slice().to_vec();
        y2.push(r.random_range(-1.0..1.0));
        let small = RbfGpModel::new(&data.x, &data.y, l, a, s2).unwrap();
        let big = RbfGpModel::new(&append_row(&data.x, &extra), &DVector::from_vec(y2), l, a, s2).unwrap();
        for _ in 0..4 {
            let q: Vec<f64> = (0..n).map(|_| r.random_range(-2.0..2.0)).collect();
            let va = gp_predict(&small, &q).unwrap().var_f;
            let vb = gp_predict(&big, &q).unwrap().var_f;
            prop_assert!(vb <= va + 1e-9 * (1.0 + va));
        }
    }

    #[test]
    fn proposals_stay_in_bounds_and_improve_on_pool(seed in any::<u64>(), dim in 1usize..4, use_cb in any::<bool>()) {
        let mut r = rng(seed);
        let dims: Vec<(f64, f64)> = (0..dim).map(|_| {
            let lo = r.random_range(-10.0..0.0);
            (lo, lo + r.random_range(0.5..10.0))
        }).collect();
        let bounds = Bounds::new(dims).unwrap();
        let centre: Vec<f64> = bounds.dims().iter().map(|&(lo, hi)| r.random_range(lo - 1.0..hi + 1.0)).collect();
        let s = Bowl { centre, scale: r.random_range(0.1..3.0) };
        let kind = if use_cb { AcquisitionKind::Cb { beta: 2.0 } } else { AcquisitionKind::Ei };
        let cfg = AcqOptConfig { pool_size: 64, ..AcqOptConfig::default() };
        let p = optimize_acq(&s, &bounds, Acquisition::new(kind, 0.5), &cfg, seed).unwrap();
        prop_assert!(bounds.contains(&p.x));
        prop_assert!(p.value >= p.pool_best);
    }
}

/// Affine target rescaling changes EI only by a positive factor, so the pool ranking is preserved.
#[test]
fn ei_pool_argmax_is_invariant_to_affine_targets() {
    let mut r = rng(31);
    for _ in 0..50 {
        let pts: Vec<(f64, f64)> = (0..64).map(|_| (r.random_range(-3.0..3.0), r.random_range(0.01..2.0))).collect();
        let best = r.random_range(-2.0..2.0);
        let (a, b) = (r.random_range(0.1..10.0), r.random_range(-5.0..5.0));
        let argmax = |vals: Vec<f64>| {
            let mut i = 0;
            for (k, v) in vals.iter().enumerate() {
                if *v > vals[i] {
                    i = k;
                }
            }
            i
        };
        let base: Vec<f64> = pts.iter().map(|&(mu, s)| ei(mu, s, best)).collect();
        let scaled: Vec<f64> = pts.iter().map(|&(mu, s)| ei(a * mu + b, a * s, a * best + b)).collect();
        for (u, v) in base.iter().zip(&scaled) {
            assert!((v - a * u).abs() <= 1e-10 * (1.0 + v.abs()));
        }
        assert_eq!(argmax(base), argmax(scaled));
    }
}

#[test]
fn finite_difference_and_analytic_refinement_agree() {
    let bounds = Bounds::new(vec![(-2.0, 3.0), (0.0, 4.0)]).unwrap();
    let data = llabo_core::Data::new(llabo_core::init_design(&bounds, 12, 32), DVector::from_fn(12, |i, _| (i as f64 * 0.7).sin()))
        .unwrap();
    let settings = llabo_core::SurrogateSettings {
        hidden: vec![16],
        activation: Activation::Tanh,
        train: llabo_core::TrainConfig {
            epochs: 300,
            ..llabo_core::TrainConfig::bayesopt()
        },
        ..Default::default()
    };
    let s = llabo_core::surrogate_fit_predict(llabo_core::SurrogateKind::LlaPosthoc, &data, &bounds, &settings, 5).unwrap();
    let acq = Acquisition::new(AcquisitionKind::Ei, data.y.min());
    let fd = optimize_acq(
        &s,
        &bounds,
        acq,
        &AcqOptConfig {
            gradient: RefineGradient::FiniteDifference,
            ..Default::default()
        },
        9,
    )
    .unwrap();
    let an = optimize_acq(
        &s,
        &bounds,
        acq,
        &AcqOptConfig {
            gradient: RefineGradient::Analytic,
            ..Default::default()
        },
        9,
    )
    .unwrap();
    assert_eq!(fd.pool_best, an.pool_best);
    assert!(rel_err(fd.value, an.value) < 1e-3, "{} vs {}", fd.value, an.value);
}
