//! Acquisition functions for minimization and their bounded maximization.

use rand::Rng;
use statrs::function::erf::erfc;

use crate::error::{check_dim, Error, Result};
use crate::rng::rng_from_seed;
use crate::surrogate::{PredictiveDist, PredictiveGrad, Surrogate};

/// Axis-aligned search box.
#[derive(Clone, Debug, PartialEq)]
pub struct Bounds {
    dims: Vec<(f64, f64)>,
}

impl Bounds {
    pub fn new(dims: Vec<(f64, f64)>) -> Result<Self> {
        if dims.is_empty() {
            return Err(Error::InvalidArgument("bounds need at least one dimension".into()));
        }
        for (i, &(lo, hi)) in dims.iter().enumerate() {
            if !(lo.is_finite() && hi.is_finite() && hi > lo) {
                return Err(Error::InvalidArgument(format!("dimension {i}: need finite lo < hi, got ({lo}, {hi})")));
            }
        }
        Ok(Self { dims })
    }

    pub fn cube(dim: usize, lo: f64, hi: f64) -> Result<Self> {
        Self::new(vec![(lo, hi); dim])
    }

    pub fn dim(&self) -> usize {
        self.dims.len()
    }

    pub fn dims(&self) -> &[(f64, f64)] {
        &self.dims
    }

    pub fn lo_hi(&self) -> (Vec<f64>, Vec<f64>) {
        self.dims.iter().copied().unzip()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim() && x.iter().zip(&self.dims).all(|(v, (lo, hi))| v >= lo && v <= hi)
    }

    pub fn project(&self, x: &mut [f64]) {
        for (v, &(lo, hi)) in x.iter_mut().zip(&self.dims) {
            *v = v.clamp(lo, hi);
        }
    }

    pub fn sample(&self, rng: &mut impl Rng) -> Vec<f64> {
        self.dims.iter().map(|&(lo, hi)| lo + (hi - lo) * rng.random::<f64>()).collect()
    }

    fn to_unit(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.dims).map(|(v, (lo, hi))| (v - lo) / (hi - lo)).collect()
    }

    fn from_unit(&self, u: &[f64]) -> Vec<f64> {
        u.iter()
            .zip(&self.dims)
            .map(|(v, &(lo, hi))| (lo + v * (hi - lo)).clamp(lo, hi))
            .collect()
    }

    fn width(&self) -> Vec<f64> {
        self.dims.iter().map(|(lo, hi)| hi - lo).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum AcquisitionKind {
    /// Expected improvement below the incumbent.
    Ei,
    /// Lower confidence bound `μ − βs`.
    Cb { beta: f64 },
}

impl Default for AcquisitionKind {
    fn default() -> Self {
        AcquisitionKind::Ei
    }
}

impl AcquisitionKind {
    pub const DEFAULT_BETA: f64 = 2.0;

    pub fn validate(&self) -> Result<()> {
        match *self {
            AcquisitionKind::Cb { beta } if !(beta.is_finite() && beta > 0.0) => {
                Err(Error::InvalidArgument(format!("confidence-bound beta must be finite and > 0, got {beta}")))
            }
            _ => Ok(()),
        }
    }
}

fn norm_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

fn norm_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

/// Closed-form expected improvement for minimization.
pub fn ei(mu: f64, s: f64, f_best: f64) -> f64 {
    if s <= 0.0 {
        return (f_best - mu).max(0.0);
    }
    let z = (f_best - mu) / s;
    ((f_best - mu) * norm_cdf(z) + s * norm_pdf(z)).max(0.0)
}

pub fn cb(mu: f64, s: f64, beta: f64) -> f64 {
    mu - beta * s
}

/// An acquisition bound to the current incumbent, oriented for maximization.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Acquisition {
    pub kind: AcquisitionKind,
    pub f_best: f64,
}

impl Acquisition {
    pub fn new(kind: AcquisitionKind, f_best: f64) -> Self {
        Self { kind, f_best }
    }

    pub fn value(&self, p: &PredictiveDist) -> f64 {
        let s = p.var_f.max(0.0).sqrt();
        match self.kind {
            AcquisitionKind::Ei => ei(p.mu, s, self.f_best),
            AcquisitionKind::Cb { beta } => -cb(p.mu, s, beta),
        }
    }

    /// Value and input gradient from a predictive with gradients.
    pub fn value_grad(&self, g: &PredictiveGrad) -> (f64, Vec<f64>) {
        let p = &g.dist;
        let s = p.var_f.max(0.0).sqrt();
        let ds: Vec<f64> = if s > 0.0 {
            g.grad_var_f.iter().map(|v| v / (2.0 * s)).collect()
        } else {
            vec![0.0; g.grad_var_f.len()]
        };
        let (da_dmu, da_ds) = match self.kind {
            AcquisitionKind::Ei => {
                if s > 0.0 {
                    let z = (self.f_best - p.mu) / s;
                    (-norm_cdf(z), norm_pdf(z))
                } else if self.f_best > p.mu {
                    (-1.0, 0.0)
                } else {
                    (0.0, 0.0)
                }
            }
            AcquisitionKind::Cb { beta } => (-1.0, beta),
        };
        let grad = g.grad_mu.iter().zip(&ds).map(|(m, s)| da_dmu * m + da_ds * s).collect();
        (self.value(p), grad)
    }
}

/// How refinement obtains acquisition gradients.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum RefineGradient {
    /// Finite differences up to [`AUTO_FD_MAX_DIM`] dimensions, analytic above when available.
    #[default]
    Auto,
    FiniteDifference,
    Analytic,
}

pub const AUTO_FD_MAX_DIM: usize = 16;

#[derive(Clone, Debug, PartialEq)]
pub struct AcqOptConfig {
    pub pool_size: usize,
    pub n_refine: usize,
    pub refine_steps: usize,
    /// Central-difference step in unit-cube coordinates.
    pub fd_step: f64,
    /// Initial projected-ascent step length in unit-cube coordinates.
    pub initial_step: f64,
    pub min_step: f64,
    pub gradient: RefineGradient,
}

impl Default for AcqOptConfig {
    fn default() -> Self {
        Self {
            pool_size: 512,
            n_refine: 10,
            refine_steps: 50,
            fd_step: 1e-4,
            initial_step: 0.1,
            min_step: 1e-6,
            gradient: RefineGradient::Auto,
        }
    }
}

impl AcqOptConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_refine == 0 || self.pool_size < self.n_refine {
            return Err(Error::InvalidArgument(format!(
                "need pool_size >= n_refine >= 1 (pool_size = {}, n_refine = {})",
                self.pool_size, self.n_refine
            )));
        }
        if !(self.fd_step > 0.0 && self.initial_step > 0.0 && self.min_step > 0.0) {
            return Err(Error::InvalidArgument("step sizes must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Proposal {
    pub x: Vec<f64>,
    pub value: f64,
    /// Best acquisition value among the random pool.
    pub pool_best: f64,
}

fn sanitize(v: f64) -> f64 {
    if v.is_nan() {
        f64::NEG_INFINITY
    } else {
        v
    }
}

struct Evaluator<'a, S: Surrogate + ?Sized> {
    surrogate: &'a S,
    bounds: &'a Bounds,
    acq: Acquisition,
    analytic: bool,
    fd_step: f64,
}

impl<S: Surrogate + ?Sized> Evaluator<'_, S> {
    fn values(&self, us: &[Vec<f64>]) -> Result<Vec<f64>> {
        let xs: Vec<Vec<f64>> = us.iter().map(|u| self.bounds.from_unit(u)).collect();
        Ok(self
            .surrogate
            .predict_batch(&xs)?
            .iter()
            .map(|p| sanitize(self.acq.value(p)))
            .collect())
    }

    fn value(&self, u: &[f64]) -> Result<f64> {
        Ok(self.values(&[u.to_vec()])?[0])
    }

    /// Gradient in unit-cube coordinates.
    fn gradient(&self, u: &[f64]) -> Result<Vec<f64>> {
        if self.analytic {
            if let Some(res) = self.surrogate.predict_with_grad(&self.bounds.from_unit(u)) {
                let (_, g) = self.acq.value_grad(&res?);
                return Ok(g.iter().zip(self.bounds.width()).map(|(g, w)| g * w).collect());
            }
        }
        let h = self.fd_step;
        let mut probes = Vec::with_capacity(2 * u.len());
        for i in 0..u.len() {
            let mut a = u.to_vec();
            a[i] += h;
            let mut b = u.to_vec();
            b[i] -= h;
            probes.push(a);
            probes.push(b);
        }
        // probes may leave the box by h; evaluate without clamping
        let xs: Vec<Vec<f64>> = probes
            .iter()
            .map(|p| p.iter().zip(self.bounds.dims()).map(|(v, &(lo, hi))| lo + v * (hi - lo)).collect())
            .collect();
        let vals: Vec<f64> = self.surrogate.predict_batch(&xs)?.iter().map(|p| self.acq.value(p)).collect();
        Ok((0..u.len()).map(|i| (vals[2 * i] - vals[2 * i + 1]) / (2.0 * h)).collect())
    }
}

/// Random pool, then projected gradient ascent with backtracking from the best pool points.
pub fn optimize_acq<S: Surrogate + ?Sized>(
    surrogate: &S,
    bounds: &Bounds,
    acq: Acquisition,
    cfg: &AcqOptConfig,
    seed: u64,
) -> Result<Proposal> {
    cfg.validate()?;
    acq.kind.validate()?;
    check_dim(bounds.dim(), surrogate.dim(), "surrogate vs bounds dimension")?;
    let n = bounds.dim();
    let analytic = match cfg.gradient {
        RefineGradient::FiniteDifference => false,
        RefineGradient::Analytic => true,
        RefineGradient::Auto => n > AUTO_FD_MAX_DIM,
    };
    let eval = Evaluator {
        surrogate,
        bounds,
        acq,
        analytic,
        fd_step: cfg.fd_step,
    };

    let mut rng = rng_from_seed(seed);
    let pool: Vec<Vec<f64>> = (0..cfg.pool_size)
        .map(|_| (0..n).map(|_| rng.random::<f64>()).collect())
        .collect();
    let pool_vals = eval.values(&pool)?;
    let mut order: Vec<usize> = (0..pool.len()).collect();
    // stable: ties keep the lowest pool index first
    order.sort_by(|&a, &b| pool_vals[b].total_cmp(&pool_vals[a]));
    let pool_best = pool_vals[order[0]];

    let mut best_u = pool[order[0]].clone();
    let mut best_val = pool_best;
    for &start in order.iter().take(cfg.n_refine) {
        let mut u = pool[start].clone();
        let mut val = pool_vals[start];
        let mut step = cfg.initial_step;
        let mut grad: Option<Vec<f64>> = None;
        for _ in 0..cfg.refine_steps {
            if grad.is_none() {
                grad = Some(eval.gradient(&u)?);
            }
            let g = grad.as_ref().unwrap();
            let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
            if !(norm.is_finite() && norm > 0.0) {
                break;
            }
            let cand: Vec<f64> = u
                .iter()
                .zip(g)
                .map(|(ui, gi)| (ui + step * gi / norm).clamp(0.0, 1.0))
                .collect();
            let cv = eval.value(&cand)?;
            if cv > val {
                u = cand;
                val = cv;
                grad = None;
            } else {
                step *= 0.5;
                if step < cfg.min_step {
                    break;
                }
            }
        }
        if val > best_val {
            best_val = val;
            best_u = u;
        }
    }
    let mut x = bounds.from_unit(&best_u);
    bounds.project(&mut x);
    Ok(Proposal {
        x,
        value: best_val,
        pool_best,
    })
}

impl Bounds {
    /// Maps a point of the box into unit-cube coordinates.
    pub fn normalize(&self, x: &[f64]) -> Vec<f64> {
        self.to_unit(x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Quadratic {
        center: f64,
    }

    impl Surrogate for Quadratic {
        fn dim(&self) -> usize {
            1
        }
        fn predict(&self, x: &[f64]) -> Result<PredictiveDist> {
            Ok(PredictiveDist {
                mu: (x[0] - self.center).powi(2),
                var_f: 0.0,
                var_y: 1e-6,
            })
        }
    }

    struct Flat;

    impl Surrogate for Flat {
        fn dim(&self) -> usize {
            2
        }
        fn predict(&self, _x: &[f64]) -> Result<PredictiveDist> {
            Ok(PredictiveDist {
                mu: 1.0,
                var_f: 0.0,
                var_y: 1.0,
            })
        }
    }

    #[test]
    fn ei_closed_form_cases() {
        assert!((ei(0.3, 1.0, 0.3) - 1.0 / (2.0 * std::f64::consts::PI).sqrt()).abs() < 1e-12);
        assert!((ei(0.3, 1.0, 0.3) - 0.398942).abs() < 1e-6);
        assert_eq!(ei(2.0, 0.0, 1.0), 0.0);
        assert_eq!(ei(0.0, 0.0, 1.0), 1.0);
        assert!(ei(5.0, 0.1, 0.0) >= 0.0);
    }

    #[test]
    fn cb_arithmetic() {
        assert_eq!(cb(1.0, 2.0, 2.0), -3.0);
        assert!((cb(1.0, 2.0, 1e-12) - 1.0).abs() < 1e-11);
        assert!(cb(1.0, 3.0, 2.0) <= cb(1.0, 2.0, 2.0));
    }

    #[test]
    fn bad_configs_are_rejected() {
        let b = Bounds::cube(1, -1.0, 1.0).unwrap();
        let acq = Acquisition::new(AcquisitionKind::Cb { beta: -1.0 }, 0.0);
        assert!(optimize_acq(&Quadratic { center: 0.0 }, &b, acq, &AcqOptConfig::default(), 0).is_err());
        let cfg = AcqOptConfig {
            pool_size: 2,
            n_refine: 3,
            ..Default::default()
        };
        let acq = Acquisition::new(AcquisitionKind::Ei, 0.0);
        assert!(optimize_acq(&Quadratic { center: 0.0 }, &b, acq, &cfg, 0).is_err());
        assert!(Bounds::new(vec![(1.0, 1.0)]).is_err());
    }

    #[test]
    fn flat_surface_returns_first_pool_point() {
        let b = Bounds::new(vec![(0.0, 1.0), (-3.0, 3.0)]).unwrap();
        let acq = Acquisition::new(AcquisitionKind::Cb { beta: 2.0 }, 0.0);
        let cfg = AcqOptConfig::default();
        let p = optimize_acq(&Flat, &b, acq, &cfg, 9).unwrap();
        assert!(b.contains(&p.x));
        let mut rng = rng_from_seed(9);
        let first: Vec<f64> = (0..2).map(|_| rng.random::<f64>()).collect();
        let expected = b.from_unit(&first);
        assert_eq!(p.x, expected);
        assert_eq!(p.value, -1.0);
    }

    #[test]
    fn quadratic_mean_is_minimized() {
        let b = Bounds::cube(1, -2.0, 3.0).unwrap();
        let acq = Acquisition::new(AcquisitionKind::Cb { beta: 2.0 }, 0.0);
        let p = optimize_acq(&Quadratic { center: 0.7 }, &b, acq, &AcqOptConfig::default(), 1).unwrap();
        assert!((p.x[0] - 0.7).abs() < 1e-3, "{:?}", p.x);
        assert!(p.value >= p.pool_best);
    }

    #[test]
    fn quadratic_with_minimizer_outside_box_hits_boundary() {
        let b = Bounds::cube(1, -2.0, 3.0).unwrap();
        let acq = Acquisition::new(AcquisitionKind::Cb { beta: 2.0 }, 0.0);
        let p = optimize_acq(&Quadratic { center: 10.0 }, &b, acq, &AcqOptConfig::default(), 1).unwrap();
        assert!(b.contains(&p.x));
        assert!((p.x[0] - 3.0).abs() < 1e-9);
    }
}
