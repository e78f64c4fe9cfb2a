//! Surrogate models behind one prediction interface.
//!
//! Both families are fitted in a normalized space: inputs mapped to the unit cube
//! through the search bounds, targets standardized. Predictions are returned in
//! original units.

mod gp;
mod lla;

pub use gp::{
    gp_fit, gp_log_marglik, gp_log_marglik_grad, gp_predict, gp_predict_with_grad, rbf_kernel, GpFitConfig, GpSurrogate,
    RbfGpModel,
};
pub use lla::{
    lla_predict_batch, lla_predict_functionspace, lla_predict_weightspace, lla_predict_with_grad, ntk_kernel,
    LlaSurrogate,
};

use nalgebra::{DMatrix, DVector};

use crate::acquisition::Bounds;
use crate::data::Data;
use crate::error::{check_dim, Error, Result};
use crate::laplace::{fit_online_from, fit_posthoc_from, LaplaceConfig};
use crate::nn::{init_params, Activation, MlpConfig, ParamVector};
use crate::train::TrainConfig;

/// Gaussian predictive at one input.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PredictiveDist {
    pub mu: f64,
    /// Latent (epistemic) variance.
    pub var_f: f64,
    /// `var_f + σ²`
    pub var_y: f64,
}

impl PredictiveDist {
    pub fn std_f(&self) -> f64 {
        self.var_f.sqrt()
    }

    pub fn log_density(&self, y: f64) -> f64 {
        -0.5 * (2.0 * std::f64::consts::PI * self.var_y).ln() - 0.5 * (y - self.mu).powi(2) / self.var_y
    }
}

/// Predictive together with input gradients of the mean and latent variance.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictiveGrad {
    pub dist: PredictiveDist,
    pub grad_mu: Vec<f64>,
    pub grad_var_f: Vec<f64>,
}

pub trait Surrogate {
    fn dim(&self) -> usize;

    fn predict(&self, x: &[f64]) -> Result<PredictiveDist>;

    fn predict_batch(&self, xs: &[Vec<f64>]) -> Result<Vec<PredictiveDist>> {
        xs.iter().map(|x| self.predict(x)).collect()
    }

    /// Analytic input gradients, when the model provides them.
    fn predict_with_grad(&self, _x: &[f64]) -> Option<Result<PredictiveGrad>> {
        None
    }
}

/// Affine maps between the search box / target scale and the fitting space.
#[derive(Clone, Debug, PartialEq)]
pub struct Normalizer {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub y_mean: f64,
    pub y_std: f64,
}

impl Normalizer {
    pub fn new(bounds: &Bounds, targets: &[f64]) -> Self {
        let (lo, hi) = bounds.lo_hi();
        let n = targets.len().max(1) as f64;
        let y_mean = if targets.is_empty() {
            0.0
        } else {
            targets.iter().sum::<f64>() / n
        };
        let var = targets.iter().map(|y| (y - y_mean).powi(2)).sum::<f64>() / n;
        let y_std = if var.sqrt() > 1e-12 { var.sqrt() } else { 1.0 };
        Self { lo, hi, y_mean, y_std }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn to_unit(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .map(|(v, (l, h))| (v - l) / (h - l))
            .collect()
    }

    pub fn from_unit(&self, u: &[f64]) -> Vec<f64> {
        u.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .map(|(v, (l, h))| l + v * (h - l))
            .collect()
    }

    pub fn inputs_to_unit(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| (x[(i, j)] - self.lo[j]) / (self.hi[j] - self.lo[j]))
    }

    pub fn standardize(&self, y: f64) -> f64 {
        (y - self.y_mean) / self.y_std
    }

    pub fn targets_standardized(&self, y: &DVector<f64>) -> DVector<f64> {
        y.map(|v| self.standardize(v))
    }

    /// Maps a normalized-space predictive back to original units.
    pub fn denormalize(&self, p: PredictiveDist) -> PredictiveDist {
        let s2 = self.y_std * self.y_std;
        PredictiveDist {
            mu: p.mu * self.y_std + self.y_mean,
            var_f: p.var_f * s2,
            var_y: p.var_y * s2,
        }
    }

    /// Chain rule for gradients taken in normalized space.
    pub fn denormalize_grad(&self, g: PredictiveGrad) -> PredictiveGrad {
        let s2 = self.y_std * self.y_std;
        let width: Vec<f64> = self.lo.iter().zip(&self.hi).map(|(l, h)| h - l).collect();
        PredictiveGrad {
            dist: self.denormalize(g.dist),
            grad_mu: g.grad_mu.iter().zip(&width).map(|(v, w)| v * self.y_std / w).collect(),
            grad_var_f: g.grad_var_f.iter().zip(&width).map(|(v, w)| v * s2 / w).collect(),
        }
    }

    pub fn normalize_data(&self, data: &Data) -> Data {
        Data {
            x: self.inputs_to_unit(&data.x),
            y: self.targets_standardized(&data.y),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SurrogateKind {
    LlaPosthoc,
    LlaOnline,
    RbfGp,
}

/// Everything needed to fit either surrogate family.
#[derive(Clone, Debug, PartialEq)]
pub struct SurrogateSettings {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub train: TrainConfig,
    pub laplace: LaplaceConfig,
    pub gp: GpFitConfig,
}

impl Default for SurrogateSettings {
    fn default() -> Self {
        Self {
            hidden: vec![50, 50, 50],
            activation: Activation::ReLU,
            train: TrainConfig::bayesopt(),
            laplace: LaplaceConfig::bayesopt(),
            gp: GpFitConfig::default(),
        }
    }
}

/// A fitted surrogate of either family.
#[derive(Clone, Debug)]
pub enum FittedSurrogate {
    Lla(LlaSurrogate),
    Gp(GpSurrogate),
}

impl FittedSurrogate {
    /// MAP parameters of a network surrogate.
    pub fn theta_map(&self) -> Option<&ParamVector> {
        match self {
            FittedSurrogate::Lla(s) => Some(s.posterior.theta_map()),
            FittedSurrogate::Gp(_) => None,
        }
    }
}

impl Surrogate for FittedSurrogate {
    fn dim(&self) -> usize {
        match self {
            FittedSurrogate::Lla(s) => s.dim(),
            FittedSurrogate::Gp(s) => s.dim(),
        }
    }

    fn predict(&self, x: &[f64]) -> Result<PredictiveDist> {
        match self {
            FittedSurrogate::Lla(s) => s.predict(x),
            FittedSurrogate::Gp(s) => s.predict(x),
        }
    }

    fn predict_batch(&self, xs: &[Vec<f64>]) -> Result<Vec<PredictiveDist>> {
        match self {
            FittedSurrogate::Lla(s) => s.predict_batch(xs),
            FittedSurrogate::Gp(s) => s.predict_batch(xs),
        }
    }

    fn predict_with_grad(&self, x: &[f64]) -> Option<Result<PredictiveGrad>> {
        match self {
            FittedSurrogate::Lla(s) => s.predict_with_grad(x),
            FittedSurrogate::Gp(s) => s.predict_with_grad(x),
        }
    }
}

/// Normalizes `data` and fits the requested surrogate.
pub fn surrogate_fit_predict(
    kind: SurrogateKind,
    data: &Data,
    bounds: &Bounds,
    settings: &SurrogateSettings,
    seed: u64,
) -> Result<FittedSurrogate> {
    surrogate_fit_from(kind, data, bounds, settings, seed, None)
}

/// As [`surrogate_fit_predict`], optionally starting network training from `warm`
/// instead of a seeded initialization. Ignored by the GP.
pub fn surrogate_fit_from(
    kind: SurrogateKind,
    data: &Data,
    bounds: &Bounds,
    settings: &SurrogateSettings,
    seed: u64,
    warm: Option<&ParamVector>,
) -> Result<FittedSurrogate> {
    check_dim(bounds.dim(), data.dim(), "bounds vs data dimension")?;
    if data.is_empty() {
        return Err(Error::InvalidArgument("surrogate needs at least one observation".into()));
    }
    let norm = Normalizer::new(bounds, data.y.as_slice());
    let nd = norm.normalize_data(data);
    match kind {
        SurrogateKind::LlaPosthoc | SurrogateKind::LlaOnline => {
            let cfg = MlpConfig::new(bounds.dim(), settings.hidden.clone(), settings.activation)?;
            let theta0 = match warm {
                Some(t) if t.len() == cfg.param_count() => t.clone(),
                _ => init_params(&cfg, seed),
            };
            let fit = if kind == SurrogateKind::LlaPosthoc {
                fit_posthoc_from(&cfg, &nd, &settings.train, &settings.laplace, theta0)?
            } else {
                fit_online_from(&cfg, &nd, &settings.train, &settings.laplace, theta0)?
            };
            Ok(FittedSurrogate::Lla(LlaSurrogate::new(fit.posterior, norm)))
        }
        SurrogateKind::RbfGp => {
            let model = gp_fit(&nd.x, &nd.y, &settings.gp, seed)?;
            Ok(FittedSurrogate::Gp(GpSurrogate::new(model, norm)))
        }
    }
}
