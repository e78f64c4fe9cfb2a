//! Linearized-Laplace predictive: MAP mean, Gaussian weight posterior pushed through
//! the Jacobian. Two algebraically equivalent routes are provided, one through the
//! `d x d` posterior precision and one through the `m x m` NTK Gram matrix.

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, Error, Result};
use crate::laplace::{masked_jacobian, LaplacePosterior};
use crate::linalg::clamp_variance;
use crate::nn::{forward_batch, input_gradient, jvp_input_gradient};
use crate::surrogate::{Normalizer, PredictiveDist, PredictiveGrad, Surrogate};

fn row_matrix(x: &[f64]) -> DMatrix<f64> {
    DMatrix::from_row_slice(1, x.len(), x)
}

fn rows_matrix(xs: &[Vec<f64>], dim: usize) -> Result<DMatrix<f64>> {
    for x in xs {
        check_dim(dim, x.len(), "query dimension")?;
    }
    Ok(DMatrix::from_fn(xs.len(), dim, |i, j| xs[i][j]))
}

fn finish(mu: f64, var_f: f64, sigma2: f64) -> PredictiveDist {
    let var_f = clamp_variance(var_f);
    PredictiveDist {
        mu,
        var_f,
        var_y: var_f + sigma2,
    }
}

/// Latent variances `j Λ⁻¹ jᵀ` for every row of `jq`.
fn weightspace_variances(post: &LaplacePosterior, jq: &DMatrix<f64>) -> Result<Vec<f64>> {
    let prec = post.precision().ok_or(Error::WeightSpaceUnavailable {
        params: post.mask.dim(&post.config),
    })?;
    let v = prec.chol.solve_lower_mat(&jq.transpose());
    Ok(v.column_iter().map(|c| c.norm_squared()).collect())
}

/// Latent variances `k(x,x) − k(x,X)(K + σ²I)⁻¹k(X,x)` with `k = J Jᵀ / τ`.
fn functionspace_variances(post: &LaplacePosterior, jq: &DMatrix<f64>) -> Vec<f64> {
    let tau = post.hypers.tau();
    let prior: Vec<f64> = jq.row_iter().map(|r| r.norm_squared()).collect();
    if post.train_jac.nrows() == 0 {
        return prior.into_iter().map(|p| p / tau).collect();
    }
    // (m x q)
    let cross = &post.train_jac * jq.transpose();
    let v = post.gram_chol.solve_lower_mat(&cross);
    prior
        .iter()
        .zip(v.column_iter())
        .map(|(p, c)| (p - c.norm_squared()) / tau)
        .collect()
}

pub fn lla_predict_weightspace(post: &LaplacePosterior, x: &[f64]) -> Result<PredictiveDist> {
    let xq = row_matrix(x);
    let mu = forward_batch(&post.config, &post.theta_map, &xq)?[0];
    let jq = masked_jacobian(&post.config, &post.theta_map, &xq, post.mask)?;
    let var = weightspace_variances(post, &jq)?[0];
    Ok(finish(mu, var, post.hypers.sigma2()))
}

pub fn lla_predict_functionspace(post: &LaplacePosterior, x: &[f64]) -> Result<PredictiveDist> {
    let xq = row_matrix(x);
    let mu = forward_batch(&post.config, &post.theta_map, &xq)?[0];
    let jq = masked_jacobian(&post.config, &post.theta_map, &xq, post.mask)?;
    let var = functionspace_variances(post, &jq)[0];
    Ok(finish(mu, var, post.hypers.sigma2()))
}

/// Batched predictive, through the cheaper available route.
pub fn lla_predict_batch(post: &LaplacePosterior, xq: &DMatrix<f64>) -> Result<Vec<PredictiveDist>> {
    if xq.nrows() == 0 {
        return Ok(Vec::new());
    }
    let mu = forward_batch(&post.config, &post.theta_map, xq)?;
    let jq = masked_jacobian(&post.config, &post.theta_map, xq, post.mask)?;
    let d_sub = jq.ncols();
    let vars = if post.precision().is_some() && d_sub <= post.n_train() {
        weightspace_variances(post, &jq)?
    } else {
        functionspace_variances(post, &jq)
    };
    let s2 = post.hypers.sigma2();
    Ok(mu.iter().zip(vars).map(|(&m, v)| finish(m, v, s2)).collect())
}

/// Empirical NTK with the prior scale: `J(x₁)J(x₂)ᵀ / τ`.
pub fn ntk_kernel(post: &LaplacePosterior, x1: &[f64], x2: &[f64]) -> Result<f64> {
    let j1 = masked_jacobian(&post.config, &post.theta_map, &row_matrix(x1), post.mask)?;
    let j2 = masked_jacobian(&post.config, &post.theta_map, &row_matrix(x2), post.mask)?;
    Ok(j1.row(0).dot(&j2.row(0)) / post.hypers.tau())
}

/// Predictive with exact input gradients of the mean and of the latent variance.
///
/// With `u = Σ_post j(x)` held fixed, `∇ₓ var_f = 2 ∇ₓ [J(x)·u]`, which is one
/// Jacobian-vector product differentiated with respect to the input.
pub fn lla_predict_with_grad(post: &LaplacePosterior, x: &[f64]) -> Result<PredictiveGrad> {
    let cfg = &post.config;
    let (mu, grad_mu) = input_gradient(cfg, &post.theta_map, x)?;
    let jq = masked_jacobian(cfg, &post.theta_map, &row_matrix(x), post.mask)?;
    let j = DVector::from_iterator(jq.ncols(), jq.row(0).iter().copied());
    let u = if let (Some(prec), true) = (post.precision(), jq.ncols() <= post.n_train()) {
        prec.chol.solve(&j)
    } else {
        let tau = post.hypers.tau();
        if post.n_train() == 0 {
            &j / tau
        } else {
            let c = &post.train_jac * &j;
            let w = post.gram_chol.solve(&c);
            (&j - post.train_jac.tr_mul(&w)) / tau
        }
    };
    let var = j.dot(&u);
    let range = post.mask.range(cfg);
    let mut direction = vec![0.0; cfg.param_count()];
    direction[range].copy_from_slice(u.as_slice());
    let (_, g) = jvp_input_gradient(cfg, &post.theta_map, x, &direction)?;
    let grad_var_f = if var < 0.0 { vec![0.0; g.len()] } else { g.iter().map(|v| 2.0 * v).collect() };
    Ok(PredictiveGrad {
        dist: finish(mu, var, post.hypers.sigma2()),
        grad_mu,
        grad_var_f,
    })
}

/// Linearized-Laplace surrogate in original units.
#[derive(Clone, Debug)]
pub struct LlaSurrogate {
    pub posterior: LaplacePosterior,
    pub normalizer: Normalizer,
}

impl LlaSurrogate {
    pub fn new(posterior: LaplacePosterior, normalizer: Normalizer) -> Self {
        Self { posterior, normalizer }
    }
}

impl Surrogate for LlaSurrogate {
    fn dim(&self) -> usize {
        self.normalizer.dim()
    }

    fn predict(&self, x: &[f64]) -> Result<PredictiveDist> {
        check_dim(self.dim(), x.len(), "query dimension")?;
        let u = self.normalizer.to_unit(x);
        let p = lla_predict_batch(&self.posterior, &row_matrix(&u))?[0];
        Ok(self.normalizer.denormalize(p))
    }

    fn predict_batch(&self, xs: &[Vec<f64>]) -> Result<Vec<PredictiveDist>> {
        let us: Vec<Vec<f64>> = xs.iter().map(|x| self.normalizer.to_unit(x)).collect();
        let xq = rows_matrix(&us, self.dim())?;
        Ok(lla_predict_batch(&self.posterior, &xq)?
            .into_iter()
            .map(|p| self.normalizer.denormalize(p))
            .collect())
    }

    fn predict_with_grad(&self, x: &[f64]) -> Option<Result<PredictiveGrad>> {
        if let Err(e) = check_dim(self.dim(), x.len(), "query dimension") {
            return Some(Err(e));
        }
        let u = self.normalizer.to_unit(x);
        Some(lla_predict_with_grad(&self.posterior, &u).map(|g| self.normalizer.denormalize_grad(g)))
    }
}
