#![allow(dead_code)]

use llabo_core::nn::{init_params, MlpConfig, ParamVector};
use llabo_core::rng::rng_from_seed;
use llabo_core::{Activation, Data};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    rng_from_seed(seed)
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}

/// `‖a − b‖ / ‖b‖`, with an absolute floor for vanishing references.
pub fn rel_err_vec(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let norm: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    diff / norm.max(1e-12)
}

pub fn random_matrix(r: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| r.random_range(-scale..scale))
}

pub fn random_data(r: &mut ChaCha8Rng, m: usize, n: usize) -> Data {
    let x = random_matrix(r, m, n, 1.0);
    let y = DVector::from_fn(m, |_, _| r.random_range(-2.0..2.0));
    Data { x, y }
}

pub fn random_mlp(r: &mut ChaCha8Rng, max_input: usize, max_width: usize, act: Activation) -> (MlpConfig, ParamVector) {
    let n = r.random_range(1..=max_input);
    let depth = r.random_range(1..=2);
    let hidden: Vec<usize> = (0..depth).map(|_| r.random_range(1..=max_width)).collect();
    let cfg = MlpConfig::new(n, hidden, act).unwrap();
    let seed = r.random();
    let mut theta = init_params(&cfg, seed);
    // non-zero biases so ReLU kinks move off the origin
    for l in cfg.layers() {
        for b in &mut theta.as_mut_slice()[l.bias_offset..l.end()] {
            *b = r.random_range(-0.5..0.5);
        }
    }
    (cfg, theta)
}

/// Central difference of a scalar function with respect to each coordinate.
pub fn fd_grad(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut p = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = p[i];
            p[i] = orig + h;
            let up = f(&p);
            p[i] = orig - h;
            let down = f(&p);
            p[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Bayesian linear regression on features `[x, 1]`, solved with LU inverses.
pub struct BlrOracle {
    pub mean_w: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub log_evidence: f64,
}

pub fn features(x: &DMatrix<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(x.nrows(), x.ncols() + 1, |i, j| if j < x.ncols() { x[(i, j)] } else { 1.0 })
}

pub fn blr_oracle(data: &Data, tau: f64, sigma2: f64) -> BlrOracle {
    let phi = features(&data.x);
    let d = phi.ncols();
    let m = phi.nrows();
    let prec = phi.transpose() * &phi / sigma2 + DMatrix::identity(d, d) * tau;
    let cov = prec.clone().try_inverse().expect("invertible precision");
    let mean_w = &cov * phi.transpose() * &data.y / sigma2;
    // marginal of y: N(0, Φ Φᵀ / τ + σ² I)
    let k = &phi * phi.transpose() / tau + DMatrix::identity(m, m) * sigma2;
    let det = k.clone().lu().determinant();
    let kinv = k.try_inverse().expect("invertible marginal covariance");
    let quad = (data.y.transpose() * kinv * &data.y)[(0, 0)];
    let log_evidence = -0.5 * quad - 0.5 * det.ln() - 0.5 * m as f64 * (2.0 * std::f64::consts::PI).ln();
    BlrOracle {
        mean_w,
        cov,
        log_evidence,
    }
}
