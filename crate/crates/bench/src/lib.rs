//! Shared fixtures for the surrogate benchmarks.

use llabo_core::nn::{init_params, MlpConfig, ParamVector};
use llabo_core::{init_design, Activation, Bounds, Data, Objective};
use nalgebra::DVector;

/// `n` uniform Branin evaluations.
pub fn branin_data(n: usize, seed: u64) -> (Bounds, Data) {
    let obj = Objective::branin();
    let x = init_design(&obj.bounds, n, seed);
    let y = DVector::from_iterator(n, x.row_iter().map(|r| obj.eval(&r.iter().copied().collect::<Vec<_>>())));
    (obj.bounds.clone(), Data { x, y })
}

/// The BO network on `input_dim` inputs at its seeded initialization.
pub fn bo_network(input_dim: usize, seed: u64) -> (MlpConfig, ParamVector) {
    let cfg = MlpConfig::new(input_dim, vec![50, 50, 50], Activation::ReLU).expect("valid architecture");
    let theta = init_params(&cfg, seed);
    (cfg, theta)
}

/// Query points in unit-cube coordinates spread along the diagonal.
pub fn queries(n: usize, dim: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|k| (0..dim).map(|j| ((k * (j + 3)) % n) as f64 / n as f64).collect())
        .collect()
}
