//! Full-batch MAP training with Adam and a cosine-annealed learning rate.

use crate::data::Data;
use crate::error::{Error, Result};
use crate::laplace::Hyperparams;
use crate::nn::{grad_map_objective, init_params, MlpConfig, ParamVector};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr0: f64,
    pub lr_min: f64,
    /// Initial prior precision τ of the MAP objective.
    pub weight_decay: f64,
    pub adam: AdamConfig,
    /// Run the hyperparameter callback every this many epochs (0 disables it).
    pub callback_period: usize,
}

impl TrainConfig {
    /// MLP recipe used inside the optimization loop.
    pub fn bayesopt() -> Self {
        Self {
            epochs: 1000,
            lr0: 1e-1,
            lr_min: 0.0,
            weight_decay: 1e-3,
            adam: AdamConfig::default(),
            callback_period: 0,
        }
    }

    /// Recipe of the incremental small-data regression study.
    pub fn small_data() -> Self {
        Self {
            epochs: 1000,
            lr0: 1e-3,
            lr_min: 1e-5,
            weight_decay: 1e-3,
            adam: AdamConfig::default(),
            callback_period: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::InvalidArgument("epochs must be >= 1".into()));
        }
        if !(self.lr0 > 0.0) || !(self.lr_min >= 0.0) || self.lr_min > self.lr0 {
            return Err(Error::InvalidArgument(format!(
                "need 0 <= lr_min <= lr0 and lr0 > 0 (lr0 = {}, lr_min = {})",
                self.lr0, self.lr_min
            )));
        }
        if !(self.weight_decay > 0.0) {
            return Err(Error::InvalidArgument("weight decay (prior precision) must be positive".into()));
        }
        Ok(())
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::bayesopt()
    }
}

/// `lr_min + (lr0 − lr_min)(1 + cos(π step / total)) / 2`.
pub fn cosine_lr(step: usize, total: usize, lr0: f64, lr_min: f64) -> Result<f64> {
    if total == 0 || step > total {
        return Err(Error::InvalidArgument(format!(
            "cosine schedule step {step} outside 0..={total}"
        )));
    }
    let frac = step as f64 / total as f64;
    Ok(lr_min + 0.5 * (lr0 - lr_min) * (1.0 + (std::f64::consts::PI * frac).cos()))
}

/// Bias-corrected Adam moments.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
    cfg: AdamConfig,
}

impl AdamState {
    pub fn new(dim: usize, cfg: AdamConfig) -> Self {
        Self {
            m: vec![0.0; dim],
            v: vec![0.0; dim],
            t: 0,
            cfg,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Descent step `params -= lr * m̂ / (sqrt(v̂) + eps)`.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        assert_eq!(params.len(), grad.len(), "adam: parameter/gradient length mismatch");
        assert_eq!(params.len(), self.m.len(), "adam: state length mismatch");
        let AdamConfig { beta1, beta2, eps } = self.cfg;
        self.t += 1;
        let c1 = 1.0 - beta1.powi(self.t as i32);
        let c2 = 1.0 - beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * g;
            self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * g * g;
            let mhat = self.m[i] / c1;
            let vhat = self.v[i] / c2;
            params[i] -= lr * mhat / (vhat.sqrt() + eps);
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainResult {
    pub theta_map: ParamVector,
    /// Objective value at the start of every epoch.
    pub loss_history: Vec<f64>,
    pub final_hypers: Hyperparams,
}

/// Hyperparameter update hook invoked after the parameter step of every
/// `callback_period`-th epoch. Receives the 1-based epoch count.
pub type MarglikCallback<'a> = dyn FnMut(usize, &ParamVector, Hyperparams) -> Result<Hyperparams> + 'a;

/// Trains from a seeded initialization.
pub fn train_map(
    config: &MlpConfig,
    train: &TrainConfig,
    data: &Data,
    hypers0: Hyperparams,
    seed: u64,
    callback: Option<&mut MarglikCallback<'_>>,
) -> Result<TrainResult> {
    train_map_from(config, train, data, hypers0, init_params(config, seed), callback)
}

/// Trains from an explicit starting point.
pub fn train_map_from(
    config: &MlpConfig,
    train: &TrainConfig,
    data: &Data,
    hypers0: Hyperparams,
    theta0: ParamVector,
    mut callback: Option<&mut MarglikCallback<'_>>,
) -> Result<TrainResult> {
    train.validate()?;
    if data.is_empty() {
        return Err(Error::InvalidArgument("training needs at least one data point".into()));
    }
    let mut theta = theta0;
    let mut hypers = hypers0;
    let mut adam = AdamState::new(theta.len(), train.adam);
    let mut loss_history = Vec::with_capacity(train.epochs);
    for epoch in 0..train.epochs {
        let (loss, grad) = grad_map_objective(config, &theta, &data.x, &data.y, hypers.tau(), hypers.sigma2())?;
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite(format!("training loss at epoch {epoch} ({loss})")));
        }
        loss_history.push(loss);
        let lr = cosine_lr(epoch, train.epochs, train.lr0, train.lr_min)?;
        adam.step(theta.as_mut_slice(), &grad, lr);
        if train.callback_period > 0 && (epoch + 1) % train.callback_period == 0 {
            if let Some(cb) = callback.as_mut() {
                hypers = cb(epoch + 1, &theta, hypers)?;
            }
        }
    }
    Ok(TrainResult {
        theta_map: theta,
        loss_history,
        final_hypers: hypers,
    })
}

/// Convenience for evaluating the current objective.
pub fn map_objective(config: &MlpConfig, theta: &ParamVector, data: &Data, hypers: Hyperparams) -> Result<f64> {
    Ok(grad_map_objective(config, theta, &data.x, &data.y, hypers.tau(), hypers.sigma2())?.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_endpoints_and_midpoint() {
        assert_eq!(cosine_lr(0, 10, 0.1, 0.0).unwrap(), 0.1);
        assert!((cosine_lr(10, 10, 0.1, 1e-5).unwrap() - 1e-5).abs() < 1e-18);
        assert!((cosine_lr(5, 10, 0.1, 0.0).unwrap() - 0.05).abs() < 1e-15);
        assert!(cosine_lr(11, 10, 0.1, 0.0).is_err());
        assert!(cosine_lr(0, 0, 0.1, 0.0).is_err());
    }

    #[test]
    fn adam_first_step_is_sign_like() {
        let mut st = AdamState::new(3, AdamConfig::default());
        let g = [0.5, -2.0, 1e-3];
        let mut p = [0.0; 3];
        st.step(&mut p, &g, 0.1);
        for i in 0..3 {
            let expected = -0.1 * g[i] / (g[i].abs() + 1e-8);
            assert!((p[i] - expected).abs() < 1e-15, "{i}: {} vs {expected}", p[i]);
        }
    }

    #[test]
    fn adam_zero_grad_keeps_params_and_is_deterministic() {
        let mut a = AdamState::new(2, AdamConfig::default());
        let mut p = [1.0, -3.0];
        for _ in 0..10 {
            a.step(&mut p, &[0.0, 0.0], 0.1);
        }
        assert_eq!(p, [1.0, -3.0]);

        let mut s1 = AdamState::new(2, AdamConfig::default());
        let mut s2 = s1.clone();
        let (mut p1, mut p2) = ([0.3, 0.4], [0.3, 0.4]);
        s1.step(&mut p1, &[1.0, 2.0], 0.01);
        s2.step(&mut p2, &[1.0, 2.0], 0.01);
        assert_eq!((s1, p1), (s2, p2));
    }

    #[test]
    fn invalid_train_config_is_rejected() {
        let mut t = TrainConfig::bayesopt();
        t.epochs = 0;
        assert!(t.validate().is_err());
        let mut t = TrainConfig::bayesopt();
        t.lr_min = 1.0;
        assert!(t.validate().is_err());
    }
}
