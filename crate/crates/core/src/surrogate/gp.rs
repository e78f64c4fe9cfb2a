//! Exact GP regression with an isotropic RBF kernel, tuned on its marginal likelihood.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{check_dim, Error, Result};
use crate::linalg::{cholesky_with_jitter, clamp_variance, JitteredCholesky};
use crate::rng::rng_from_seed;
use crate::surrogate::{Normalizer, PredictiveDist, PredictiveGrad, Surrogate};
use crate::train::{AdamConfig, AdamState};

/// `a² exp(−‖x − x'‖² / (2ℓ²))`
pub fn rbf_kernel(x: &[f64], x2: &[f64], lengthscale: f64, outputscale: f64) -> f64 {
    let d2: f64 = x.iter().zip(x2).map(|(a, b)| (a - b).powi(2)).sum();
    outputscale * (-d2 / (2.0 * lengthscale * lengthscale)).exp()
}

fn sq_dists(x: &DMatrix<f64>) -> DMatrix<f64> {
    let m = x.nrows();
    DMatrix::from_fn(m, m, |i, j| (x.row(i) - x.row(j)).norm_squared())
}

#[derive(Clone, Debug)]
pub struct RbfGpModel {
    pub lengthscale: f64,
    pub outputscale: f64,
    pub noise: f64,
    x: DMatrix<f64>,
    y: DVector<f64>,
    chol: JitteredCholesky,
    alpha: DVector<f64>,
}

impl RbfGpModel {
    pub fn new(x: &DMatrix<f64>, y: &DVector<f64>, lengthscale: f64, outputscale: f64, noise: f64) -> Result<Self> {
        check_dim(x.nrows(), y.len(), "GP targets")?;
        if !(lengthscale > 0.0 && outputscale > 0.0 && noise > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "GP hyperparameters must be positive (l = {lengthscale}, a2 = {outputscale}, s2 = {noise})"
            )));
        }
        let d2 = sq_dists(x);
        let mut k = d2.map(|v| outputscale * (-v / (2.0 * lengthscale * lengthscale)).exp());
        for i in 0..k.nrows() {
            k[(i, i)] += noise;
        }
        let chol = cholesky_with_jitter(&k, "GP kernel matrix")?;
        let alpha = if y.is_empty() { DVector::zeros(0) } else { chol.solve(y) };
        Ok(Self {
            lengthscale,
            outputscale,
            noise,
            x: x.clone(),
            y: y.clone(),
            chol,
            alpha,
        })
    }

    pub fn n_train(&self) -> usize {
        self.x.nrows()
    }

    pub fn dim(&self) -> usize {
        self.x.ncols()
    }

    fn cross(&self, x: &[f64]) -> DVector<f64> {
        DVector::from_iterator(
            self.n_train(),
            self.x
                .row_iter()
                .map(|r| rbf_kernel(x, r.transpose().as_slice(), self.lengthscale, self.outputscale)),
        )
    }
}

/// `−½ yᵀK_y⁻¹y − ½ log det K_y − (m/2) log 2π`
pub fn gp_log_marglik(model: &RbfGpModel) -> f64 {
    let m = model.n_train() as f64;
    -0.5 * model.y.dot(&model.alpha) - 0.5 * model.chol.logdet() - 0.5 * m * (2.0 * PI).ln()
}

/// Gradient of the log marginal likelihood in `(log ℓ, log a², log σ²)`.
pub fn gp_log_marglik_grad(model: &RbfGpModel) -> [f64; 3] {
    let kinv = model.chol.inverse();
    let w = &model.alpha * model.alpha.transpose() - &kinv;
    let d2 = sq_dists(&model.x);
    let l2 = model.lengthscale * model.lengthscale;
    let mut g_ls = 0.0;
    let mut g_os = 0.0;
    let m = model.n_train();
    for i in 0..m {
        for j in 0..m {
            let k = model.outputscale * (-d2[(i, j)] / (2.0 * l2)).exp();
            g_ls += w[(i, j)] * k * d2[(i, j)] / l2;
            g_os += w[(i, j)] * k;
        }
    }
    [0.5 * g_ls, 0.5 * g_os, 0.5 * model.noise * w.trace()]
}

pub fn gp_predict(model: &RbfGpModel, x: &[f64]) -> Result<PredictiveDist> {
    check_dim(model.dim(), x.len(), "GP query dimension")?;
    if model.n_train() == 0 {
        return Ok(PredictiveDist {
            mu: 0.0,
            var_f: model.outputscale,
            var_y: model.outputscale + model.noise,
        });
    }
    let k = model.cross(x);
    let mu = k.dot(&model.alpha);
    let v = model.chol.solve_lower(&k);
    let var_f = clamp_variance(model.outputscale - v.norm_squared());
    Ok(PredictiveDist {
        mu,
        var_f,
        var_y: var_f + model.noise,
    })
}

pub fn gp_predict_with_grad(model: &RbfGpModel, x: &[f64]) -> Result<PredictiveGrad> {
    let dist = gp_predict(model, x)?;
    let n = model.dim();
    if model.n_train() == 0 {
        return Ok(PredictiveGrad {
            dist,
            grad_mu: vec![0.0; n],
            grad_var_f: vec![0.0; n],
        });
    }
    let k = model.cross(x);
    let kinv_k = model.chol.solve(&k);
    let l2 = model.lengthscale * model.lengthscale;
    let mut grad_mu = vec![0.0; n];
    let mut grad_var = vec![0.0; n];
    for (i, row) in model.x.row_iter().enumerate() {
        for d in 0..n {
            // ∂k(x, xᵢ)/∂x_d
            let dk = -k[i] * (x[d] - row[d]) / l2;
            grad_mu[d] += model.alpha[i] * dk;
            grad_var[d] -= 2.0 * kinv_k[i] * dk;
        }
    }
    if dist.var_f == 0.0 {
        grad_var.iter_mut().for_each(|g| *g = 0.0);
    }
    Ok(PredictiveGrad {
        dist,
        grad_mu,
        grad_var_f: grad_var,
    })
}

/// Marginal-likelihood fitting recipe: Adam with random restarts.
#[derive(Clone, Debug, PartialEq)]
pub struct GpFitConfig {
    pub steps: usize,
    pub lr: f64,
    pub restarts: usize,
    pub lengthscale_range: (f64, f64),
    pub outputscale_range: (f64, f64),
    pub noise_range: (f64, f64),
}

impl Default for GpFitConfig {
    fn default() -> Self {
        Self {
            steps: 200,
            lr: 5e-2,
            restarts: 5,
            lengthscale_range: (1e-1, 1e1),
            outputscale_range: (1e-1, 1e1),
            noise_range: (1e-4, 1e0),
        }
    }
}

const LOG_BOUNDS: [(f64, f64); 3] = [
    (-6.907755278982137, 4.605170185988092),  // ℓ in [1e-3, 1e2]
    (-9.210340371976184, 9.210340371976184),  // a² in [1e-4, 1e4]
    (-13.815510557964274, 2.302585092994046), // σ² in [1e-6, 1e1]
];

fn log_uniform(rng: &mut impl Rng, (lo, hi): (f64, f64)) -> f64 {
    rng.random_range(lo.ln()..hi.ln())
}

/// Best-marginal-likelihood RBF GP over all restarts and iterates.
pub fn gp_fit(x: &DMatrix<f64>, y: &DVector<f64>, cfg: &GpFitConfig, seed: u64) -> Result<RbfGpModel> {
    check_dim(x.nrows(), y.len(), "GP targets")?;
    let mut rng = rng_from_seed(seed);
    let mut best: Option<(f64, RbfGpModel)> = None;
    for _ in 0..cfg.restarts.max(1) {
        let mut p = [
            log_uniform(&mut rng, cfg.lengthscale_range),
            log_uniform(&mut rng, cfg.outputscale_range),
            log_uniform(&mut rng, cfg.noise_range),
        ];
        let mut adam = AdamState::new(3, AdamConfig::default());
        for step in 0..=cfg.steps {
            let model = match RbfGpModel::new(x, y, p[0].exp(), p[1].exp(), p[2].exp()) {
                Ok(m) => m,
                Err(_) => break,
            };
            let lml = gp_log_marglik(&model);
            if !lml.is_finite() {
                break;
            }
            let g = if step < cfg.steps { Some(gp_log_marglik_grad(&model)) } else { None };
            if best.as_ref().is_none_or(|(b, _)| lml > *b) {
                best = Some((lml, model));
            }
            let Some(g) = g else { break };
            adam.step(&mut p, &[-g[0], -g[1], -g[2]], cfg.lr);
            for (v, (lo, hi)) in p.iter_mut().zip(LOG_BOUNDS) {
                *v = v.clamp(lo, hi);
            }
        }
    }
    best.map(|(_, m)| m).ok_or(Error::Factorization {
        context: "every GP restart failed",
    })
}

/// GP surrogate in original units (zero mean in standardized space).
#[derive(Clone, Debug)]
pub struct GpSurrogate {
    pub model: RbfGpModel,
    pub normalizer: Normalizer,
}

impl GpSurrogate {
    pub fn new(model: RbfGpModel, normalizer: Normalizer) -> Self {
        Self { model, normalizer }
    }
}

impl Surrogate for GpSurrogate {
    fn dim(&self) -> usize {
        self.normalizer.dim()
    }

    fn predict(&self, x: &[f64]) -> Result<PredictiveDist> {
        check_dim(self.dim(), x.len(), "query dimension")?;
        let u = self.normalizer.to_unit(x);
        Ok(self.normalizer.denormalize(gp_predict(&self.model, &u)?))
    }

    fn predict_with_grad(&self, x: &[f64]) -> Option<Result<PredictiveGrad>> {
        if let Err(e) = check_dim(self.dim(), x.len(), "query dimension") {
            return Some(Err(e));
        }
        let u = self.normalizer.to_unit(x);
        Some(gp_predict_with_grad(&self.model, &u).map(|g| self.normalizer.denormalize_grad(g)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_values() {
        assert_eq!(rbf_kernel(&[0.3, 0.1], &[0.3, 0.1], 0.7, 2.5), 2.5);
        let l: f64 = 0.4;
        let x2 = [l * 2f64.sqrt(), 0.0];
        assert!((rbf_kernel(&[0.0, 0.0], &x2, l, 1.5) - 1.5 * (-1f64).exp()).abs() < 1e-15);
        assert_eq!(rbf_kernel(&[0.1], &[0.9], 0.3, 1.0), rbf_kernel(&[0.9], &[0.1], 0.3, 1.0));
    }

    #[test]
    fn one_point_evidence_and_posterior() {
        let x = DMatrix::from_row_slice(1, 1, &[0.0]);
        let y = DVector::from_vec(vec![2.0]);
        let m = RbfGpModel::new(&x, &y, 1.0, 1.0, 1.0).unwrap();
        let expected = -0.5 * 4.0 / 2.0 - 0.5 * 2f64.ln() - 0.5 * (2.0 * PI).ln();
        assert!((gp_log_marglik(&m) - expected).abs() < 1e-14);
        assert!((gp_log_marglik(&m) + 2.26552).abs() < 1e-5);
        let p = gp_predict(&m, &[0.0]).unwrap();
        assert!((p.var_f - 0.5).abs() < 1e-15);
        assert!((p.mu - 1.0).abs() < 1e-15);

        let y0 = DVector::from_vec(vec![0.0]);
        let m0 = RbfGpModel::new(&x, &y0, 1.0, 1.0, 1.0).unwrap();
        assert!((gp_log_marglik(&m0) - (-0.5 * 2f64.ln() - 0.5 * (2.0 * PI).ln())).abs() < 1e-14);
    }

    #[test]
    fn empty_conditioning_gives_prior() {
        let m = RbfGpModel::new(&DMatrix::zeros(0, 2), &DVector::zeros(0), 0.3, 1.7, 0.1).unwrap();
        let p = gp_predict(&m, &[0.5, 0.5]).unwrap();
        assert_eq!(p.var_f, 1.7);
        assert_eq!(p.mu, 0.0);
    }

    #[test]
    fn two_point_posterior_matches_hand_algebra() {
        let (l, a2, s2) = (0.5, 1.3, 0.2);
        let x = DMatrix::from_row_slice(2, 1, &[0.1, 0.7]);
        let y = DVector::from_vec(vec![1.0, -0.5]);
        let m = RbfGpModel::new(&x, &y, l, a2, s2).unwrap();
        let xs = 0.4;
        let k12 = rbf_kernel(&[0.1], &[0.7], l, a2);
        let (a, b, d) = (a2 + s2, k12, a2 + s2);
        let det = a * d - b * b;
        let inv = [[d / det, -b / det], [-b / det, a / det]];
        let ks = [rbf_kernel(&[xs], &[0.1], l, a2), rbf_kernel(&[xs], &[0.7], l, a2)];
        let alpha = [inv[0][0] * 1.0 + inv[0][1] * -0.5, inv[1][0] * 1.0 + inv[1][1] * -0.5];
        let mu = ks[0] * alpha[0] + ks[1] * alpha[1];
        let quad = ks[0] * (inv[0][0] * ks[0] + inv[0][1] * ks[1]) + ks[1] * (inv[1][0] * ks[0] + inv[1][1] * ks[1]);
        let p = gp_predict(&m, &[xs]).unwrap();
        assert!((p.mu - mu).abs() < 1e-13);
        assert!((p.var_f - (a2 - quad)).abs() < 1e-13);
    }

    #[test]
    fn marglik_gradient_matches_finite_differences() {
        let x = DMatrix::from_row_slice(4, 1, &[0.1, 0.3, 0.55, 0.9]);
        let y = DVector::from_vec(vec![0.5, -0.2, 1.1, 0.3]);
        let p = [0.3f64.ln(), 0.8f64.ln(), 0.05f64.ln()];
        let lml = |p: [f64; 3]| gp_log_marglik(&RbfGpModel::new(&x, &y, p[0].exp(), p[1].exp(), p[2].exp()).unwrap());
        let g = gp_log_marglik_grad(&RbfGpModel::new(&x, &y, p[0].exp(), p[1].exp(), p[2].exp()).unwrap());
        for i in 0..3 {
            let h = 1e-5;
            let (mut a, mut b) = (p, p);
            a[i] += h;
            b[i] -= h;
            let fd = (lml(a) - lml(b)) / (2.0 * h);
            assert!((fd - g[i]).abs() <= 1e-6 * fd.abs().max(1.0), "{i}: {fd} vs {}", g[i]);
        }
    }

    #[test]
    fn fit_keeps_best_and_is_deterministic() {
        let x = DMatrix::from_fn(12, 1, |i, _| i as f64 / 11.0);
        let y = DVector::from_fn(12, |i, _| (6.0 * i as f64 / 11.0).sin());
        let cfg = GpFitConfig::default();
        let a = gp_fit(&x, &y, &cfg, 3).unwrap();
        let b = gp_fit(&x, &y, &cfg, 3).unwrap();
        assert_eq!(a.lengthscale, b.lengthscale);
        let mut rng = rng_from_seed(3);
        for _ in 0..cfg.restarts {
            let l = log_uniform(&mut rng, cfg.lengthscale_range).exp();
            let o = log_uniform(&mut rng, cfg.outputscale_range).exp();
            let n = log_uniform(&mut rng, cfg.noise_range).exp();
            let init = gp_log_marglik(&RbfGpModel::new(&x, &y, l, o, n).unwrap());
            assert!(gp_log_marglik(&a) >= init);
        }
    }
}
