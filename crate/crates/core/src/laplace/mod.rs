//! Laplace approximation around the MAP estimate.
//!
//! The posterior precision is `Λ = G/σ² + τI` with `G = Σ JᵢᵀJᵢ` the noise-free
//! generalized Gauss-Newton matrix over the selected parameter subset. The evidence and
//! its hyperparameter gradients only need the spectrum of `G`, and its non-zero
//! eigenvalues coincide with those of the `m x m` Gram matrix `J Jᵀ`. That keeps
//! tuning cheap for wide networks where the dense `d x d` matrix would not fit.

mod mola;

pub use mola::{mixture_of, mola_predict, MixturePrediction, MolaEnsemble};

use std::f64::consts::PI;
use std::ops::Range;

use nalgebra::{DMatrix, DVector};

use crate::data::Data;
use crate::error::{check_dim, Error, Result};
use crate::linalg::{cholesky_with_jitter, psd_eigenvalues, JitteredCholesky};
use crate::nn::{forward_batch, grad_map_objective, init_params, jacobian_batch, MlpConfig, ParamVector};
use crate::train::{train_map_from, AdamConfig, AdamState, MarglikCallback, TrainConfig, TrainResult};

/// Log prior precision and log observation noise.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Hyperparams {
    pub log_tau: f64,
    pub log_sigma2: f64,
}

impl Hyperparams {
    pub fn new(tau: f64, sigma2: f64) -> Self {
        Self {
            log_tau: tau.ln(),
            log_sigma2: sigma2.ln(),
        }
    }

    pub fn tau(&self) -> f64 {
        self.log_tau.exp()
    }

    pub fn sigma2(&self) -> f64 {
        self.log_sigma2.exp()
    }

    pub fn is_finite(&self) -> bool {
        self.log_tau.is_finite() && self.log_sigma2.is_finite()
    }
}

/// Which parameters the Gaussian posterior covers.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum SubsetMask {
    #[default]
    Full,
    /// Output layer weights and bias only.
    LastLayer,
}

impl SubsetMask {
    pub fn range(&self, config: &MlpConfig) -> Range<usize> {
        match self {
            SubsetMask::Full => 0..config.param_count(),
            SubsetMask::LastLayer => config.last_layer_range(),
        }
    }

    pub fn dim(&self, config: &MlpConfig) -> usize {
        self.range(config).len()
    }
}

/// Jacobian of the training outputs restricted to the masked parameters (`m x d_sub`).
pub fn masked_jacobian(
    config: &MlpConfig,
    theta: &ParamVector,
    x: &DMatrix<f64>,
    mask: SubsetMask,
) -> Result<DMatrix<f64>> {
    let full = jacobian_batch(config, theta, x)?;
    Ok(match mask {
        SubsetMask::Full => full,
        SubsetMask::LastLayer => {
            let r = mask.range(config);
            full.columns(r.start, r.len()).into_owned()
        }
    })
}

/// Dense noise-free GGN `Σ JᵢᵀJᵢ`.
#[derive(Clone, Debug, PartialEq)]
pub struct GgnMatrix(pub DMatrix<f64>);

impl GgnMatrix {
    pub fn from_jacobian(jac: &DMatrix<f64>) -> Self {
        let mut g = jac.tr_mul(jac);
        // exact symmetry
        let n = g.nrows();
        for i in 0..n {
            for j in 0..i {
                let v = 0.5 * (g[(i, j)] + g[(j, i)]);
                g[(i, j)] = v;
                g[(j, i)] = v;
            }
        }
        Self(g)
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn spectrum(&self) -> GgnSpectrum {
        GgnSpectrum {
            eigenvalues: psd_eigenvalues(&self.0),
            dim: self.dim(),
        }
    }
}

pub fn compute_ggn(config: &MlpConfig, theta: &ParamVector, x: &DMatrix<f64>, mask: SubsetMask) -> Result<GgnMatrix> {
    if x.nrows() == 0 {
        return Err(Error::InvalidArgument("GGN needs at least one input".into()));
    }
    Ok(GgnMatrix::from_jacobian(&masked_jacobian(config, theta, x, mask)?))
}

/// Eigenvalues of `G`. Only the leading `min(m, d)` are stored; the rest are zero.
#[derive(Clone, Debug, PartialEq)]
pub struct GgnSpectrum {
    pub eigenvalues: Vec<f64>,
    pub dim: usize,
}

impl GgnSpectrum {
    /// From the training Jacobian, eigendecomposing whichever of `J Jᵀ` / `JᵀJ` is smaller.
    pub fn from_jacobian(jac: &DMatrix<f64>) -> Self {
        let (m, d) = jac.shape();
        let eigenvalues = if m < d {
            psd_eigenvalues(&(jac * jac.transpose()))
        } else {
            psd_eigenvalues(&jac.tr_mul(jac))
        };
        Self { eigenvalues, dim: d }
    }

    fn zero_count(&self) -> usize {
        self.dim - self.eigenvalues.len()
    }

    /// `log det(G/σ² + τI)`.
    pub fn logdet_precision(&self, h: Hyperparams) -> f64 {
        let (tau, s2) = (h.tau(), h.sigma2());
        self.eigenvalues.iter().map(|l| (l / s2 + tau).ln()).sum::<f64>()
            + self.zero_count() as f64 * h.log_tau
    }
}

/// Cholesky factor of `Λ = G/σ² + τI`.
#[derive(Clone, Debug)]
pub struct PrecisionFactor {
    pub chol: JitteredCholesky,
}

impl PrecisionFactor {
    pub fn logdet(&self) -> f64 {
        self.chol.logdet()
    }

    pub fn lower(&self) -> &DMatrix<f64> {
        &self.chol.lower
    }

    pub fn reconstruct(&self) -> DMatrix<f64> {
        self.chol.reconstruct()
    }
}

pub fn posterior_precision(ggn: &GgnMatrix, hypers: Hyperparams) -> Result<PrecisionFactor> {
    let (tau, s2) = (hypers.tau(), hypers.sigma2());
    let mut lam = &ggn.0 / s2;
    for i in 0..lam.nrows() {
        lam[(i, i)] += tau;
    }
    Ok(PrecisionFactor {
        chol: cholesky_with_jitter(&lam, "posterior precision")?,
    })
}

/// Hyperparameter-independent pieces of the Laplace evidence at a fixed `θ`.
#[derive(Clone, Debug, PartialEq)]
pub struct EvidenceTerms {
    pub n_data: usize,
    /// `Σ (f(xᵢ; θ) − yᵢ)²`
    pub rss: f64,
    /// `‖θ‖²` over the masked parameters.
    pub theta_sq: f64,
    pub spectrum: GgnSpectrum,
}

impl EvidenceTerms {
    pub fn new(config: &MlpConfig, theta: &ParamVector, data: &Data, mask: SubsetMask, spectrum: GgnSpectrum) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::InvalidArgument("marginal likelihood needs m >= 1".into()));
        }
        check_dim(mask.dim(config), spectrum.dim, "spectrum dimension")?;
        let pred = forward_batch(config, theta, &data.x)?;
        let rss = (pred - &data.y).norm_squared();
        let r = mask.range(config);
        let theta_sq = theta.as_slice()[r].iter().map(|t| t * t).sum();
        Ok(Self {
            n_data: data.len(),
            rss,
            theta_sq,
            spectrum,
        })
    }

    /// Builds the terms from scratch: Jacobian on the data, then its spectrum.
    pub fn at(config: &MlpConfig, theta: &ParamVector, data: &Data, mask: SubsetMask) -> Result<Self> {
        let jac = masked_jacobian(config, theta, &data.x, mask)?;
        Self::new(config, theta, data, mask, GgnSpectrum::from_jacobian(&jac))
    }

    pub fn log_marglik(&self, h: Hyperparams) -> Result<f64> {
        let (tau, s2) = (h.tau(), h.sigma2());
        let m = self.n_data as f64;
        let d = self.spectrum.dim as f64;
        let v = -self.rss / (2.0 * s2) - 0.5 * m * (2.0 * PI * s2).ln() - 0.5 * tau * self.theta_sq
            + 0.5 * d * h.log_tau
            - 0.5 * self.spectrum.logdet_precision(h);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::NonFinite(format!("log marginal likelihood at {h:?}")))
        }
    }

    /// `(∂ log Z / ∂ log τ, ∂ log Z / ∂ log σ²)`.
    pub fn marglik_grad(&self, h: Hyperparams) -> [f64; 2] {
        let (tau, s2) = (h.tau(), h.sigma2());
        // effective number of parameters determined by the data
        let gamma: f64 = self
            .spectrum
            .eigenvalues
            .iter()
            .map(|l| {
                let a = l / s2;
                a / (a + tau)
            })
            .sum();
        let d_log_tau = -0.5 * tau * self.theta_sq + 0.5 * gamma;
        let d_log_sigma2 = self.rss / (2.0 * s2) - 0.5 * self.n_data as f64 + 0.5 * gamma;
        [d_log_tau, d_log_sigma2]
    }
}

/// Laplace log evidence from a dense GGN.
pub fn log_marglik(
    data: &Data,
    config: &MlpConfig,
    theta_map: &ParamVector,
    ggn: &GgnMatrix,
    hypers: Hyperparams,
    mask: SubsetMask,
) -> Result<f64> {
    EvidenceTerms::new(config, theta_map, data, mask, ggn.spectrum())?.log_marglik(hypers)
}

pub fn marglik_grad(
    data: &Data,
    config: &MlpConfig,
    theta_map: &ParamVector,
    ggn: &GgnMatrix,
    hypers: Hyperparams,
    mask: SubsetMask,
) -> Result<[f64; 2]> {
    Ok(EvidenceTerms::new(config, theta_map, data, mask, ggn.spectrum())?.marglik_grad(hypers))
}

const LOG_TAU_BOUNDS: (f64, f64) = (-18.420680743952367, 18.420680743952367); // 1e-8 .. 1e8
const LOG_SIGMA2_BOUNDS: (f64, f64) = (-18.420680743952367, 9.210340371976184); // 1e-8 .. 1e4

#[derive(Clone, Debug, PartialEq)]
pub struct HyperOptOutcome {
    pub hypers: Hyperparams,
    pub log_marglik: f64,
    /// Log evidence at the start point followed by every iterate.
    pub trace: Vec<f64>,
}

/// Adam ascent on the log evidence in `(log τ, log σ²)`, returning the best iterate seen.
pub fn optimize_hypers(terms: &EvidenceTerms, hypers0: Hyperparams, steps: usize, lr: f64) -> Result<HyperOptOutcome> {
    if steps == 0 {
        return Err(Error::InvalidArgument("hyperparameter optimization needs steps >= 1".into()));
    }
    let mut best = hypers0;
    let mut best_val = terms.log_marglik(hypers0)?;
    let mut trace = vec![best_val];
    let mut p = [hypers0.log_tau, hypers0.log_sigma2];
    let mut adam = AdamState::new(2, AdamConfig::default());
    for _ in 0..steps {
        let g = terms.marglik_grad(Hyperparams {
            log_tau: p[0],
            log_sigma2: p[1],
        });
        adam.step(&mut p, &[-g[0], -g[1]], lr);
        p[0] = p[0].clamp(LOG_TAU_BOUNDS.0, LOG_TAU_BOUNDS.1);
        p[1] = p[1].clamp(LOG_SIGMA2_BOUNDS.0, LOG_SIGMA2_BOUNDS.1);
        let h = Hyperparams {
            log_tau: p[0],
            log_sigma2: p[1],
        };
        match terms.log_marglik(h) {
            Ok(v) => {
                trace.push(v);
                if v > best_val {
                    best_val = v;
                    best = h;
                }
            }
            Err(_) => break,
        }
    }
    Ok(HyperOptOutcome {
        hypers: best,
        log_marglik: best_val,
        trace,
    })
}

/// One Gauss-Newton step on the MAP objective. Exact for affine models.
pub fn newton_polish(config: &MlpConfig, theta: &ParamVector, data: &Data, hypers: Hyperparams) -> Result<ParamVector> {
    let (_, grad) = grad_map_objective(config, theta, &data.x, &data.y, hypers.tau(), hypers.sigma2())?;
    let ggn = compute_ggn(config, theta, &data.x, SubsetMask::Full)?;
    let prec = posterior_precision(&ggn, hypers)?;
    let step = prec.chol.solve(&DVector::from_vec(grad));
    Ok(ParamVector(theta.as_slice().iter().zip(step.iter()).map(|(t, s)| t - s).collect()))
}

/// When to also build the dense weight-space factor.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum WeightSpace {
    /// Only when the masked parameter count is at most [`DENSE_WEIGHT_SPACE_LIMIT`].
    #[default]
    Auto,
    Always,
    Never,
}

pub const DENSE_WEIGHT_SPACE_LIMIT: usize = 1024;

#[derive(Clone, Debug, PartialEq)]
pub struct LaplaceConfig {
    pub mask: SubsetMask,
    /// Evidence ascent steps after training (post-hoc arm).
    pub posthoc_steps: usize,
    pub hyper_lr: f64,
    /// Epochs between interleaved tuning phases (online arm).
    pub online_period: usize,
    pub online_steps: usize,
    /// Observation noise used while training before any tuning.
    pub sigma2_init: f64,
    /// Prior precision the evidence tuning starts from. The online arm also trains with it
    /// until the first tuning phase. `None` uses the training weight decay.
    pub tau_init: Option<f64>,
    pub weight_space: WeightSpace,
}

impl LaplaceConfig {
    pub fn bayesopt() -> Self {
        Self {
            mask: SubsetMask::Full,
            posthoc_steps: 10,
            hyper_lr: 1e-1,
            online_period: 50,
            online_steps: 10,
            sigma2_init: 1.0,
            tau_init: Some(1.0),
            weight_space: WeightSpace::Auto,
        }
    }

    pub fn small_data_posthoc() -> Self {
        Self {
            mask: SubsetMask::LastLayer,
            posthoc_steps: 100,
            online_steps: 50,
            ..Self::bayesopt()
        }
    }

    pub fn small_data_marglik() -> Self {
        Self {
            mask: SubsetMask::Full,
            posthoc_steps: 50,
            online_steps: 50,
            ..Self::bayesopt()
        }
    }
}

impl Default for LaplaceConfig {
    fn default() -> Self {
        Self::bayesopt()
    }
}

/// Gaussian posterior over the masked parameters around `θ_MAP`.
#[derive(Clone, Debug)]
pub struct LaplacePosterior {
    pub(crate) config: MlpConfig,
    pub(crate) theta_map: ParamVector,
    pub(crate) mask: SubsetMask,
    pub(crate) hypers: Hyperparams,
    pub(crate) train_x: DMatrix<f64>,
    /// `m x d_sub`
    pub(crate) train_jac: DMatrix<f64>,
    /// Factor of `J Jᵀ + τσ² I`.
    pub(crate) gram_chol: JitteredCholesky,
    pub(crate) weight: Option<(GgnMatrix, PrecisionFactor)>,
}

impl LaplacePosterior {
    pub fn new(
        config: &MlpConfig,
        theta_map: ParamVector,
        mask: SubsetMask,
        train_x: &DMatrix<f64>,
        hypers: Hyperparams,
        weight_space: WeightSpace,
    ) -> Result<Self> {
        check_dim(config.param_count(), theta_map.len(), "parameter vector")?;
        if !hypers.is_finite() {
            return Err(Error::NonFinite(format!("hyperparameters {hypers:?}")));
        }
        let train_jac = masked_jacobian(config, &theta_map, train_x, mask)?;
        let m = train_jac.nrows();
        let mut gram = &train_jac * train_jac.transpose();
        let shift = hypers.tau() * hypers.sigma2();
        for i in 0..m {
            gram[(i, i)] += shift;
        }
        let gram_chol = cholesky_with_jitter(&gram, "NTK gram matrix")?;
        let d_sub = mask.dim(config);
        let dense = match weight_space {
            WeightSpace::Always => true,
            WeightSpace::Never => false,
            WeightSpace::Auto => d_sub <= DENSE_WEIGHT_SPACE_LIMIT,
        };
        let weight = if dense {
            let ggn = GgnMatrix::from_jacobian(&train_jac);
            let prec = posterior_precision(&ggn, hypers)?;
            Some((ggn, prec))
        } else {
            None
        };
        Ok(Self {
            config: config.clone(),
            theta_map,
            mask,
            hypers,
            train_x: train_x.clone(),
            train_jac,
            gram_chol,
            weight,
        })
    }

    pub fn config(&self) -> &MlpConfig {
        &self.config
    }

    pub fn theta_map(&self) -> &ParamVector {
        &self.theta_map
    }

    pub fn mask(&self) -> SubsetMask {
        self.mask
    }

    pub fn hypers(&self) -> Hyperparams {
        self.hypers
    }

    pub fn train_inputs(&self) -> &DMatrix<f64> {
        &self.train_x
    }

    pub fn n_train(&self) -> usize {
        self.train_x.nrows()
    }

    pub fn ggn(&self) -> Option<&GgnMatrix> {
        self.weight.as_ref().map(|(g, _)| g)
    }

    pub fn precision(&self) -> Option<&PrecisionFactor> {
        self.weight.as_ref().map(|(_, p)| p)
    }

    pub fn spectrum(&self) -> GgnSpectrum {
        GgnSpectrum::from_jacobian(&self.train_jac)
    }

    pub fn log_marglik(&self, data: &Data) -> Result<f64> {
        EvidenceTerms::new(&self.config, &self.theta_map, data, self.mask, self.spectrum())?.log_marglik(self.hypers)
    }
}

/// A fitted posterior together with the training run that produced it.
#[derive(Clone, Debug)]
pub struct LaplaceFit {
    pub posterior: LaplacePosterior,
    pub train: TrainResult,
    /// Number of interleaved tuning phases that ran during training.
    pub tuning_phases: usize,
}

/// Train with fixed `τ = weight_decay, σ² = sigma2_init`, then tune once on the evidence
/// starting from `tau_init`.
pub fn fit_posthoc(config: &MlpConfig, data: &Data, train: &TrainConfig, lap: &LaplaceConfig, seed: u64) -> Result<LaplaceFit> {
    fit_posthoc_from(config, data, train, lap, init_params(config, seed))
}

pub fn fit_posthoc_from(
    config: &MlpConfig,
    data: &Data,
    train: &TrainConfig,
    lap: &LaplaceConfig,
    theta0: ParamVector,
) -> Result<LaplaceFit> {
    let hypers0 = Hyperparams::new(train.weight_decay, lap.sigma2_init);
    let mut tc = train.clone();
    tc.callback_period = 0;
    let result = train_map_from(config, &tc, data, hypers0, theta0, None)?;
    let terms = EvidenceTerms::at(config, &result.theta_map, data, lap.mask)?;
    let start = Hyperparams::new(lap.tau_init.unwrap_or(train.weight_decay), lap.sigma2_init);
    let tuned = optimize_hypers(&terms, start, lap.posthoc_steps, lap.hyper_lr)?;
    let posterior = LaplacePosterior::new(config, result.theta_map.clone(), lap.mask, &data.x, tuned.hypers, lap.weight_space)?;
    Ok(LaplaceFit {
        posterior,
        train: result,
        tuning_phases: 0,
    })
}

/// Train while re-tuning `(τ, σ²)` on the evidence every `online_period` epochs.
/// If the last epoch is not a tuning epoch, one more tuning phase runs at the end.
pub fn fit_online(config: &MlpConfig, data: &Data, train: &TrainConfig, lap: &LaplaceConfig, seed: u64) -> Result<LaplaceFit> {
    fit_online_from(config, data, train, lap, init_params(config, seed))
}

pub fn fit_online_from(
    config: &MlpConfig,
    data: &Data,
    train: &TrainConfig,
    lap: &LaplaceConfig,
    theta0: ParamVector,
) -> Result<LaplaceFit> {
    let hypers0 = Hyperparams::new(lap.tau_init.unwrap_or(train.weight_decay), lap.sigma2_init);
    let mut tc = train.clone();
    tc.callback_period = lap.online_period;
    let mut phases = 0usize;
    let mut tune = |_epoch: usize, theta: &ParamVector, h: Hyperparams| -> Result<Hyperparams> {
        phases += 1;
        let terms = EvidenceTerms::at(config, theta, data, lap.mask)?;
        Ok(optimize_hypers(&terms, h, lap.online_steps, lap.hyper_lr)?.hypers)
    };
    let cb: &mut MarglikCallback<'_> = &mut tune;
    let mut result = train_map_from(config, &tc, data, hypers0, theta0, Some(cb))?;
    let ended_on_tuning = lap.online_period > 0 && tc.epochs % lap.online_period == 0;
    if !ended_on_tuning {
        let terms = EvidenceTerms::at(config, &result.theta_map, data, lap.mask)?;
        result.final_hypers = optimize_hypers(&terms, result.final_hypers, lap.online_steps, lap.hyper_lr)?.hypers;
    }
    let posterior = LaplacePosterior::new(
        config,
        result.theta_map.clone(),
        lap.mask,
        &data.x,
        result.final_hypers,
        lap.weight_space,
    )?;
    Ok(LaplaceFit {
        posterior,
        train: result,
        tuning_phases: phases,
    })
}
