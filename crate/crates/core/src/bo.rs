//! Bayesian-optimization driver: fit, propose, evaluate, repeat.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use nalgebra::DMatrix;

use crate::acquisition::{optimize_acq, AcqOptConfig, Acquisition, AcquisitionKind, Bounds};
use crate::data::Data;
use crate::error::{Error, Result};
use crate::objectives::Objective;
use crate::rng::{derive_seed, rng_from_seed};
use crate::surrogate::{surrogate_fit_from, FittedSurrogate, Surrogate, SurrogateKind, SurrogateSettings};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Strategy {
    LlaPosthoc,
    LlaOnline,
    RbfGp,
    RandomSearch,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [
        Strategy::LlaPosthoc,
        Strategy::LlaOnline,
        Strategy::RbfGp,
        Strategy::RandomSearch,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::LlaPosthoc => "lla-posthoc",
            Strategy::LlaOnline => "lla-online",
            Strategy::RbfGp => "rbf-gp",
            Strategy::RandomSearch => "random",
        }
    }

    pub fn surrogate_kind(self) -> Option<SurrogateKind> {
        match self {
            Strategy::LlaPosthoc => Some(SurrogateKind::LlaPosthoc),
            Strategy::LlaOnline => Some(SurrogateKind::LlaOnline),
            Strategy::RbfGp => Some(SurrogateKind::RbfGp),
            Strategy::RandomSearch => None,
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key: String = s.to_ascii_lowercase().chars().filter(|c| c.is_ascii_alphanumeric()).collect();
        match key.as_str() {
            "llaposthoc" | "posthoc" => Ok(Strategy::LlaPosthoc),
            "llaonline" | "online" => Ok(Strategy::LlaOnline),
            "rbfgp" | "gp" => Ok(Strategy::RbfGp),
            "random" | "randomsearch" | "rs" => Ok(Strategy::RandomSearch),
            _ => Err(Error::InvalidArgument(format!(
                "unknown strategy '{s}' (expected lla-posthoc, lla-online, rbf-gp or random)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BoConfig {
    pub n_init: usize,
    pub n_iters: usize,
    pub strategy: Strategy,
    pub acquisition: AcquisitionKind,
    pub seed: u64,
    /// Size of the uniform test set used to probe surrogate accuracy; 0 disables probing.
    pub test_set_size: usize,
    pub surrogate: SurrogateSettings,
    pub acq_opt: AcqOptConfig,
    /// Start each network fit from the previous iteration's MAP instead of a fresh init.
    pub warm_start: bool,
}

impl BoConfig {
    pub fn new(strategy: Strategy, n_iters: usize, seed: u64) -> Self {
        Self {
            n_init: 20,
            n_iters,
            strategy,
            acquisition: AcquisitionKind::Ei,
            seed,
            test_set_size: 256,
            surrogate: SurrogateSettings::default(),
            acq_opt: AcqOptConfig::default(),
            warm_start: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_init == 0 {
            return Err(Error::InvalidArgument("n_init must be at least 1".into()));
        }
        self.acquisition.validate()?;
        self.acq_opt.validate()?;
        self.surrogate.train.validate()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct IterationRecord {
    pub iter: usize,
    pub x: Vec<f64>,
    pub f: f64,
    pub best_so_far: f64,
    pub test_mse: Option<f64>,
    /// Fit plus acquisition optimization time; excludes the objective call.
    pub propose_ms: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BoTrace {
    pub objective: String,
    pub config: BoConfig,
    pub init_x: Vec<Vec<f64>>,
    pub init_y: Vec<f64>,
    pub records: Vec<IterationRecord>,
}

impl BoTrace {
    pub fn final_best(&self) -> f64 {
        self.records
            .last()
            .map(|r| r.best_so_far)
            .unwrap_or_else(|| self.init_y.iter().copied().fold(f64::INFINITY, f64::min))
    }

    pub fn total_propose_ms(&self) -> f64 {
        self.records.iter().map(|r| r.propose_ms).sum()
    }
}

/// A run that stopped early; `partial` holds everything observed before the failure.
#[derive(Debug)]
pub struct BoAbort {
    pub partial: BoTrace,
    pub error: Error,
}

impl fmt::Display for BoAbort {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "optimization aborted after {} iterations: {}", self.partial.records.len(), self.error)
    }
}

impl std::error::Error for BoAbort {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

const TAG_INIT: u64 = 1;
const TAG_TEST: u64 = 2;
const TAG_ITER: u64 = 3;

/// `n` i.i.d. uniform points in `bounds`, one per row.
pub fn init_design(bounds: &Bounds, n: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = rng_from_seed(seed);
    let mut m = DMatrix::zeros(n, bounds.dim());
    for i in 0..n {
        for (j, v) in bounds.sample(&mut rng).into_iter().enumerate() {
            m[(i, j)] = v;
        }
    }
    m
}

/// Running minimum.
pub fn best_so_far(values: &[f64]) -> Vec<f64> {
    let mut best = f64::INFINITY;
    values
        .iter()
        .map(|&v| {
            best = best.min(v);
            best
        })
        .collect()
}

/// Uniform probe set paired with objective values, drawn once per run.
#[derive(Clone, Debug)]
pub struct TestSet {
    pub x: Vec<Vec<f64>>,
    pub y: Vec<f64>,
}

impl TestSet {
    pub fn draw(objective: &Objective, n: usize, seed: u64) -> Self {
        let m = init_design(&objective.bounds, n, seed);
        let x: Vec<Vec<f64>> = m.row_iter().map(|r| r.iter().copied().collect()).collect();
        let y = x.iter().map(|p| objective.eval(p)).collect();
        Self { x, y }
    }

    /// Mean squared error of the surrogate mean.
    pub fn mse<S: Surrogate + ?Sized>(&self, surrogate: &S) -> Result<f64> {
        if self.x.is_empty() {
            return Err(Error::InvalidArgument("empty test set".into()));
        }
        let preds = surrogate.predict_batch(&self.x)?;
        Ok(preds.iter().zip(&self.y).map(|(p, y)| (p.mu - y).powi(2)).sum::<f64>() / self.y.len() as f64)
    }
}

pub fn test_mse<S: Surrogate + ?Sized>(surrogate: &S, objective: &Objective, n: usize, seed: u64) -> Result<f64> {
    TestSet::draw(objective, n, seed).mse(surrogate)
}

fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn observe(objective: &Objective, x: &[f64], what: &str) -> Result<f64> {
    let v = objective.eval(x);
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite(format!("objective value {v} at {what}")))
    }
}

pub fn run_bo(objective: &Objective, config: &BoConfig) -> std::result::Result<BoTrace, Box<BoAbort>> {
    let mut trace = BoTrace {
        objective: objective.name.clone(),
        config: config.clone(),
        init_x: Vec::new(),
        init_y: Vec::new(),
        records: Vec::new(),
    };
    match run_bo_into(objective, config, &mut trace) {
        Ok(()) => Ok(trace),
        Err(error) => Err(Box::new(BoAbort { partial: trace, error })),
    }
}

fn run_bo_into(objective: &Objective, config: &BoConfig, trace: &mut BoTrace) -> Result<()> {
    config.validate()?;
    let bounds = &objective.bounds;
    let seed = config.seed;
    trace.init_x = matrix_rows(&init_design(bounds, config.n_init, derive_seed(seed, TAG_INIT)));
    let mut ys = Vec::with_capacity(config.n_init);
    for (i, x) in trace.init_x.iter().enumerate() {
        let v = observe(objective, x, &format!("initial point {i}"))?;
        ys.push(v);
        trace.init_y.push(v);
    }
    let mut data = Data::from_rows(&trace.init_x, &ys)?;
    let tests = (config.test_set_size > 0 && config.strategy != Strategy::RandomSearch)
        .then(|| TestSet::draw(objective, config.test_set_size, derive_seed(seed, TAG_TEST)));
    let mut best = ys.iter().copied().fold(f64::INFINITY, f64::min);
    let mut previous: Option<FittedSurrogate> = None;

    for iter in 0..config.n_iters {
        let iter_seed = derive_seed(derive_seed(seed, TAG_ITER), iter as u64);
        let start = Instant::now();
        let (x, surrogate) = match config.strategy.surrogate_kind() {
            None => {
                let mut rng = rng_from_seed(iter_seed);
                (bounds.sample(&mut rng), None)
            }
            Some(kind) => {
                let warm = if config.warm_start {
                    previous.as_ref().and_then(|s| s.theta_map())
                } else {
                    None
                };
                let s = surrogate_fit_from(kind, &data, bounds, &config.surrogate, derive_seed(iter_seed, 0), warm)?;
                let acq = Acquisition::new(config.acquisition, best);
                let p = optimize_acq(&s, bounds, acq, &config.acq_opt, derive_seed(iter_seed, 1))?;
                (p.x, Some(s))
            }
        };
        let propose_ms = start.elapsed().as_secs_f64() * 1e3;
        let test_mse = match (&tests, &surrogate) {
            (Some(t), Some(s)) => Some(t.mse(s)?),
            _ => None,
        };
        let f = observe(objective, &x, &format!("iteration {iter}"))?;
        best = best.min(f);
        data.push(&x, f)?;
        trace.records.push(IterationRecord {
            iter,
            x,
            f,
            best_so_far: best,
            test_mse,
            propose_ms,
        });
        previous = surrogate;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn running_minimum() {
        assert_eq!(best_so_far(&[3.0, 1.0, 2.0]), vec![3.0, 1.0, 1.0]);
        assert!(best_so_far(&[]).is_empty());
    }

    #[test]
    fn init_design_in_bounds_and_centered() {
        let b = Bounds::new(vec![(-5.0, 10.0), (0.0, 15.0)]).unwrap();
        assert_eq!(init_design(&b, 1, 3).nrows(), 1);
        let n = 10_000;
        let m = init_design(&b, n, 3);
        for (j, &(lo, hi)) in b.dims().iter().enumerate() {
            let col = m.column(j);
            assert!(col.iter().all(|v| *v >= lo && *v <= hi));
            let se = (hi - lo) / 12f64.sqrt() / (n as f64).sqrt();
            assert!((col.mean() - (lo + hi) / 2.0).abs() < 3.0 * se);
        }
        assert_eq!(init_design(&b, 5, 9), init_design(&b, 5, 9));
    }

    #[test]
    fn random_search_on_constant() {
        let obj = Objective::new("const", Bounds::cube(3, 0.0, 1.0).unwrap(), None, |_| 2.5);
        let mut cfg = BoConfig::new(Strategy::RandomSearch, 4, 0);
        cfg.n_init = 2;
        let t = run_bo(&obj, &cfg).unwrap();
        assert_eq!(t.records.len(), 4);
        assert!(t.records.iter().all(|r| r.best_so_far == 2.5 && r.test_mse.is_none()));
        assert!(t.records.iter().all(|r| obj.bounds.contains(&r.x)));
        cfg.n_iters = 0;
        let t = run_bo(&obj, &cfg).unwrap();
        assert!(t.records.is_empty());
        assert_eq!(t.init_y.len(), 2);
    }

    #[test]
    fn non_finite_objective_keeps_partial_trace() {
        let obj = Objective::new("cliff", Bounds::cube(1, 0.0, 1.0).unwrap(), None, |x| {
            if x[0] > 0.5 {
                f64::NAN
            } else {
                x[0]
            }
        });
        let mut cfg = BoConfig::new(Strategy::RandomSearch, 200, 1);
        cfg.n_init = 1;
        // pick a seed whose first draw is finite
        let mut seed = 0;
        while init_design(&obj.bounds, 1, derive_seed(seed, TAG_INIT))[(0, 0)] > 0.5 {
            seed += 1;
        }
        cfg.seed = seed;
        let err = run_bo(&obj, &cfg).unwrap_err();
        assert!(matches!(err.error, Error::NonFinite(_)));
        assert!(err.partial.records.len() < 200);
        assert_eq!(err.partial.init_y.len(), 1);
    }

    #[test]
    fn strategy_names_roundtrip() {
        for s in Strategy::ALL {
            assert_eq!(s.name().parse::<Strategy>().unwrap(), s);
        }
        assert!("bogus".parse::<Strategy>().is_err());
    }
}
