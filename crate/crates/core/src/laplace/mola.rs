//! Uniform mixtures of Gaussian predictives (mixture of Laplace, deep ensembles).

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::laplace::LaplacePosterior;
use crate::surrogate::PredictiveDist;

/// Equal-weight collection of independently fitted posteriors.
#[derive(Clone, Debug)]
pub struct MolaEnsemble {
    pub components: Vec<LaplacePosterior>,
}

impl MolaEnsemble {
    pub fn new(components: Vec<LaplacePosterior>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::InvalidArgument("mixture needs at least one component".into()));
        }
        Ok(Self { components })
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }
}

/// Moments and density of a uniform Gaussian mixture at one input.
#[derive(Clone, Debug, PartialEq)]
pub struct MixturePrediction {
    pub mean: f64,
    pub var: f64,
    /// `(mean, observation variance)` of every component.
    pub components: Vec<(f64, f64)>,
}

fn gaussian_log_density(y: f64, mean: f64, var: f64) -> f64 {
    -0.5 * (2.0 * PI * var).ln() - 0.5 * (y - mean).powi(2) / var
}

impl MixturePrediction {
    /// `log (1/E) Σₑ N(y | μₑ, s²ₑ)` evaluated stably.
    pub fn log_density(&self, y: f64) -> f64 {
        let logs: Vec<f64> = self
            .components
            .iter()
            .map(|&(m, v)| gaussian_log_density(y, m, v))
            .collect();
        let top = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !top.is_finite() {
            return top;
        }
        let s: f64 = logs.iter().map(|l| (l - top).exp()).sum();
        top + (s / logs.len() as f64).ln()
    }
}

/// Mixture over per-component predictives, using their observation variances.
pub fn mixture_of(preds: &[PredictiveDist]) -> Result<MixturePrediction> {
    if preds.is_empty() {
        return Err(Error::InvalidArgument("mixture needs at least one component".into()));
    }
    let e = preds.len() as f64;
    let mean = preds.iter().map(|p| p.mu).sum::<f64>() / e;
    let second = preds.iter().map(|p| p.var_y + p.mu * p.mu).sum::<f64>() / e;
    Ok(MixturePrediction {
        mean,
        var: (second - mean * mean).max(0.0),
        components: preds.iter().map(|p| (p.mu, p.var_y)).collect(),
    })
}

pub fn mola_predict<F>(ensemble: &MolaEnsemble, x: &[f64], predict: F) -> Result<MixturePrediction>
where
    F: Fn(&LaplacePosterior, &[f64]) -> Result<PredictiveDist>,
{
    let preds = ensemble
        .components
        .iter()
        .map(|c| predict(c, x))
        .collect::<Result<Vec<_>>>()?;
    mixture_of(&preds)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pd(mu: f64, var: f64) -> PredictiveDist {
        PredictiveDist {
            mu,
            var_f: 0.0,
            var_y: var,
        }
    }

    #[test]
    fn single_component_is_identity() {
        let m = mixture_of(&[pd(1.5, 0.4)]).unwrap();
        assert!((m.mean - 1.5).abs() < 1e-15);
        assert!((m.var - 0.4).abs() < 1e-12);
        assert!((m.log_density(0.3) - gaussian_log_density(0.3, 1.5, 0.4)).abs() < 1e-14);
    }

    #[test]
    fn symmetric_pair_variance() {
        let (v, a) = (0.7, 1.3);
        let m = mixture_of(&[pd(a, v), pd(-a, v)]).unwrap();
        assert!(m.mean.abs() < 1e-15);
        assert!((m.var - (v + a * a)).abs() < 1e-12);
    }

    #[test]
    fn equal_components_density_matches_single() {
        let m = mixture_of(&[pd(0.2, 0.5), pd(0.2, 0.5), pd(0.2, 0.5)]).unwrap();
        assert!((m.log_density(1.0) - gaussian_log_density(1.0, 0.2, 0.5)).abs() < 1e-14);
    }

    #[test]
    fn empty_mixture_is_an_error() {
        assert!(mixture_of(&[]).is_err());
        assert!(MolaEnsemble::new(vec![]).is_err());
    }
}
