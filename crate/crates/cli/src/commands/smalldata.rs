//! Held-out likelihood of MAP, ensemble and Laplace regressors as the training set grows.

use std::f64::consts::PI;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use llabo_core::laplace::{fit_online, fit_posthoc, mixture_of};
use llabo_core::nn::forward_batch;
use llabo_core::objectives::{load_csv_dataset, make_synthetic_regression};
use llabo_core::rng::{derive_seed, permutation};
use llabo_core::surrogate::lla_predict_batch;
use llabo_core::{train_map, Activation, Data, Hyperparams, LaplaceConfig, MlpConfig, PredictiveDist, TrainConfig};
use nalgebra::DVector;
use rayon::prelude::*;

use crate::config::{DataSource, SmallDataConfig};
use crate::output::{mean_stderr, num, opt_num, Table};

pub const HIDDEN: [usize; 1] = [50];
/// Floor on the residual-variance estimate used by MAP predictives.
pub const MIN_SIGMA2: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Method {
    Map,
    Ensemble,
    LaPosthoc,
    LaMarglik,
    MolaPosthoc,
    MolaMarglik,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Map,
        Method::Ensemble,
        Method::LaPosthoc,
        Method::LaMarglik,
        Method::MolaPosthoc,
        Method::MolaMarglik,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Map => "map",
            Method::Ensemble => "ensemble",
            Method::LaPosthoc => "la-posthoc",
            Method::LaMarglik => "la-marglik",
            Method::MolaPosthoc => "mola-posthoc",
            Method::MolaMarglik => "mola-marglik",
        }
    }

    pub fn is_mixture(self) -> bool {
        matches!(self, Method::Ensemble | Method::MolaPosthoc | Method::MolaMarglik)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let key: String = s.to_ascii_lowercase().chars().filter(|c| c.is_ascii_alphanumeric()).collect();
        Method::ALL
            .into_iter()
            .find(|m| m.name().replace('-', "") == key)
            .ok_or_else(|| {
                format!("unknown method '{s}' (expected map, ensemble, la-posthoc, la-marglik, mola-posthoc or mola-marglik)")
            })
    }
}

/// Held-out NLL of one method at one training-set size and seed.
#[derive(Clone, Debug, PartialEq)]
pub struct NllPoint {
    pub method: Method,
    pub n: usize,
    pub seed: u64,
    pub map_nll: f64,
    /// Absent for the plain MAP arm.
    pub bayes_nll: Option<f64>,
}

#[derive(Debug)]
pub struct SmallDataReport {
    pub dataset: String,
    pub points: Vec<NllPoint>,
    pub raw_file: PathBuf,
    pub aggregate_file: PathBuf,
}

pub fn gaussian_nll(mu: f64, var: f64, y: f64) -> f64 {
    0.5 * (2.0 * PI * var).ln() + 0.5 * (y - mu).powi(2) / var
}

/// Pool of candidate training points and a disjoint evaluation set.
#[derive(Clone, Debug)]
pub struct Split {
    pub name: String,
    pub pool: Data,
    pub eval: Data,
}

fn select(data: &Data, idx: &[usize]) -> Data {
    let x = nalgebra::DMatrix::from_fn(idx.len(), data.dim(), |i, j| data.x[(idx[i], j)]);
    let y = DVector::from_iterator(idx.len(), idx.iter().map(|&i| data.y[i]));
    Data { x, y }
}

pub fn make_split(cfg: &SmallDataConfig, seed: u64) -> Result<Split> {
    let n_max = cfg.n_max();
    let full = match &cfg.source {
        DataSource::Synthetic(kind) => {
            let total = (n_max as f64 / (1.0 - cfg.eval_fraction)).ceil() as usize + 1;
            make_synthetic_regression(*kind, total, seed)
        }
        DataSource::Csv { path, target } => load_csv_dataset(path, target)?,
    };
    let order = permutation(full.len(), derive_seed(seed, 0x5b1));
    let n_eval = ((cfg.eval_fraction * full.len() as f64).round() as usize).clamp(1, full.len());
    let pool_size = full.len() - n_eval;
    if n_max > pool_size {
        bail!(
            "n = {n_max} exceeds the {pool_size} training points available in '{}' ({} rows, {n_eval} held out)",
            full.name,
            full.len()
        );
    }
    Ok(Split {
        name: full.name.clone(),
        eval: select(&full.data, &order[..n_eval]),
        pool: select(&full.data, &order[n_eval..]),
    })
}

/// Seed of ensemble member `e`; member 0 is shared with the single-model arms.
pub fn member_seed(seed: u64, n: usize, e: usize) -> u64 {
    derive_seed(derive_seed(derive_seed(seed, 0x5da7), n as u64), e as u64)
}

/// Affine target standardization fitted on the training targets.
#[derive(Clone, Copy, Debug)]
struct Scale {
    mean: f64,
    std: f64,
}

impl Scale {
    fn fit(y: &DVector<f64>) -> Self {
        let n = y.len() as f64;
        let mean = y.mean();
        let std = (y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        Self {
            mean,
            std: if std > 1e-12 { std } else { 1.0 },
        }
    }

    fn apply(&self, d: &Data) -> Data {
        Data {
            x: d.x.clone(),
            y: d.y.map(|v| (v - self.mean) / self.std),
        }
    }

    fn mean(&self, m: f64) -> f64 {
        m * self.std + self.mean
    }

    fn var(&self, v: f64) -> f64 {
        v * self.std * self.std
    }
}

/// Original-unit predictive of one fitted member on the eval inputs.
#[derive(Clone, Debug)]
struct Member {
    mu: Vec<f64>,
    /// Observation noise the member would use for a MAP predictive.
    sigma2: f64,
    /// `var_y` of the Laplace predictive, when there is one.
    var_y: Option<Vec<f64>>,
    /// Standardized-unit fit on the training inputs.
    train_fit: DVector<f64>,
}

impl Member {
    fn map_dists(&self) -> Vec<PredictiveDist> {
        self.mu
            .iter()
            .map(|&mu| PredictiveDist {
                mu,
                var_f: 0.0,
                var_y: self.sigma2,
            })
            .collect()
    }

    fn bayes_dists(&self) -> Option<Vec<PredictiveDist>> {
        self.var_y.as_ref().map(|v| {
            self.mu
                .iter()
                .zip(v)
                .map(|(&mu, &var_y)| PredictiveDist {
                    mu,
                    var_f: var_y - self.sigma2,
                    var_y,
                })
                .collect()
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum MemberKind {
    Map,
    LaPosthoc,
    LaMarglik,
}

fn residual_sigma2(pred: &DVector<f64>, y: &DVector<f64>) -> f64 {
    let rss: f64 = pred.iter().zip(y.iter()).map(|(p, t)| (p - t).powi(2)).sum();
    (rss / y.len() as f64).max(MIN_SIGMA2)
}

struct Fitter<'a> {
    mlp: MlpConfig,
    train: TrainConfig,
    scale: Scale,
    train_std: Data,
    eval: &'a Data,
}

impl Fitter<'_> {
    fn fit_member(&self, kind: MemberKind, seed: u64) -> Result<Member> {
        let s = self.scale;
        match kind {
            MemberKind::Map => {
                let h = Hyperparams::new(self.train.weight_decay, 1.0);
                let r = train_map(&self.mlp, &self.train, &self.train_std, h, seed, None)?;
                let fit = forward_batch(&self.mlp, &r.theta_map, &self.train_std.x)?;
                let sigma2 = residual_sigma2(&fit, &self.train_std.y);
                let mu = forward_batch(&self.mlp, &r.theta_map, &self.eval.x)?;
                Ok(Member {
                    mu: mu.iter().map(|&m| s.mean(m)).collect(),
                    sigma2: s.var(sigma2),
                    var_y: None,
                    train_fit: fit,
                })
            }
            MemberKind::LaPosthoc | MemberKind::LaMarglik => {
                let fit = if kind == MemberKind::LaPosthoc {
                    fit_posthoc(&self.mlp, &self.train_std, &self.train, &LaplaceConfig::small_data_posthoc(), seed)?
                } else {
                    fit_online(&self.mlp, &self.train_std, &self.train, &LaplaceConfig::small_data_marglik(), seed)?
                };
                let preds = lla_predict_batch(&fit.posterior, &self.eval.x)?;
                let post = &fit.posterior;
                Ok(Member {
                    mu: preds.iter().map(|p| s.mean(p.mu)).collect(),
                    sigma2: s.var(post.hypers().sigma2()),
                    var_y: Some(preds.iter().map(|p| s.var(p.var_y)).collect()),
                    train_fit: forward_batch(&self.mlp, post.theta_map(), &self.train_std.x)?,
                })
            }
        }
    }
}

fn mean_gaussian_nll(dists: &[PredictiveDist], y: &DVector<f64>) -> f64 {
    dists.iter().zip(y.iter()).map(|(p, &t)| gaussian_nll(p.mu, p.var_y, t)).sum::<f64>() / y.len() as f64
}

fn mean_mixture_nll(members: &[Vec<PredictiveDist>], y: &DVector<f64>) -> Result<f64> {
    let mut total = 0.0;
    for (i, &t) in y.iter().enumerate() {
        let comps: Vec<PredictiveDist> = members.iter().map(|m| m[i]).collect();
        total -= mixture_of(&comps)?.log_density(t);
    }
    Ok(total / y.len() as f64)
}

/// NLLs of every configured method for one seed and training-set size.
pub fn evaluate(cfg: &SmallDataConfig, split: &Split, seed: u64, n: usize) -> Result<Vec<NllPoint>> {
    let train = split.pool.head(n);
    let scale = Scale::fit(&train.y);
    let mut tc = TrainConfig::small_data();
    tc.epochs = cfg.epochs;
    let ctx = Fitter {
        mlp: MlpConfig::new(split.pool.dim(), HIDDEN.to_vec(), Activation::ReLU)?,
        train: tc,
        scale,
        train_std: scale.apply(&train),
        eval: &split.eval,
    };
    let y = &split.eval.y;
    let e_size = cfg.ensemble_size;

    let mut cache: Vec<(MemberKind, usize, Member)> = Vec::new();
    let mut members = |kind: MemberKind, count: usize| -> Result<Vec<Member>> {
        (0..count)
            .map(|e| {
                if let Some((_, _, m)) = cache.iter().find(|(k, i, _)| *k == kind && *i == e) {
                    return Ok(m.clone());
                }
                let m = ctx.fit_member(kind, member_seed(seed, n, e))?;
                cache.push((kind, e, m.clone()));
                Ok(m)
            })
            .collect()
    };

    let mut out = Vec::with_capacity(cfg.methods.len());
    for &method in &cfg.methods {
        let (map_nll, bayes_nll) = match method {
            Method::Map => {
                let m = &members(MemberKind::Map, 1)?[0];
                (mean_gaussian_nll(&m.map_dists(), y), None)
            }
            Method::Ensemble => {
                let ms = members(MemberKind::Map, e_size)?;
                // one Gaussian around the averaged mean, noise refitted on its training residuals
                let k = ms.len() as f64;
                let train_mean = ms.iter().fold(DVector::zeros(ctx.train_std.len()), |acc, m| acc + &m.train_fit) / k;
                let sigma2 = ctx.scale.var(residual_sigma2(&train_mean, &ctx.train_std.y));
                let dists: Vec<PredictiveDist> = (0..y.len())
                    .map(|i| PredictiveDist {
                        mu: ms.iter().map(|m| m.mu[i]).sum::<f64>() / k,
                        var_f: 0.0,
                        var_y: sigma2,
                    })
                    .collect();
                let comps: Vec<Vec<PredictiveDist>> = ms.iter().map(Member::map_dists).collect();
                (mean_gaussian_nll(&dists, y), Some(mean_mixture_nll(&comps, y)?))
            }
            Method::LaPosthoc | Method::LaMarglik => {
                let kind = if method == Method::LaPosthoc {
                    MemberKind::LaPosthoc
                } else {
                    MemberKind::LaMarglik
                };
                let m = &members(kind, 1)?[0];
                let bayes = m.bayes_dists().expect("laplace member");
                (mean_gaussian_nll(&m.map_dists(), y), Some(mean_gaussian_nll(&bayes, y)))
            }
            Method::MolaPosthoc | Method::MolaMarglik => {
                let kind = if method == Method::MolaPosthoc {
                    MemberKind::LaPosthoc
                } else {
                    MemberKind::LaMarglik
                };
                let ms = members(kind, e_size)?;
                let map: Vec<Vec<PredictiveDist>> = ms.iter().map(Member::map_dists).collect();
                let bayes: Vec<Vec<PredictiveDist>> = ms.iter().map(|m| m.bayes_dists().expect("laplace member")).collect();
                (mean_mixture_nll(&map, y)?, Some(mean_mixture_nll(&bayes, y)?))
            }
        };
        out.push(NllPoint {
            method,
            n,
            seed,
            map_nll,
            bayes_nll,
        });
    }
    Ok(out)
}

pub fn cmd_smalldata(cfg: &SmallDataConfig) -> Result<SmallDataReport> {
    cfg.validate()?;
    std::fs::create_dir_all(&cfg.out).with_context(|| format!("creating output directory {}", cfg.out.display()))?;
    let splits: Vec<(u64, Split)> = cfg
        .seeds
        .iter()
        .map(|&s| make_split(cfg, s).map(|sp| (s, sp)))
        .collect::<Result<_>>()?;
    let jobs: Vec<(usize, usize)> = (0..splits.len())
        .flat_map(|i| cfg.n_grid.iter().map(move |&n| (i, n)))
        .collect();
    let run = |&(i, n): &(usize, usize)| {
        let (seed, split) = &splits[i];
        evaluate(cfg, split, *seed, n).with_context(|| format!("seed {seed}, n = {n}"))
    };
    let results: Vec<Result<Vec<NllPoint>>> = if cfg.parallel {
        jobs.par_iter().map(run).collect()
    } else {
        jobs.iter().map(run).collect()
    };
    let mut points = Vec::new();
    for r in results {
        points.extend(r?);
    }

    let name = splits[0].1.name.clone();
    let mut raw = Table::new(["method", "n", "seed", "map_nll", "bayes_nll"]);
    for p in &points {
        raw.push(vec![
            p.method.name().into(),
            p.n.to_string(),
            p.seed.to_string(),
            num(p.map_nll),
            opt_num(p.bayes_nll),
        ]);
    }
    let raw_file = cfg.out.join(format!("smalldata_{name}_raw.csv"));
    raw.write(&raw_file)?;

    let mut agg = Table::new(["method", "n", "map_mean", "map_se", "bayes_mean", "bayes_se", "seeds"]);
    for &method in &cfg.methods {
        for &n in &cfg.n_grid {
            let sel: Vec<&NllPoint> = points.iter().filter(|p| p.method == method && p.n == n).collect();
            let (mm, ms) = mean_stderr(&sel.iter().map(|p| p.map_nll).collect::<Vec<_>>());
            let bayes: Vec<f64> = sel.iter().filter_map(|p| p.bayes_nll).collect();
            let (bm, bs) = if bayes.is_empty() {
                (None, None)
            } else {
                let (a, b) = mean_stderr(&bayes);
                (Some(a), Some(b))
            };
            agg.push(vec![
                method.name().into(),
                n.to_string(),
                num(mm),
                num(ms),
                opt_num(bm),
                opt_num(bs),
                sel.len().to_string(),
            ]);
        }
    }
    let aggregate_file = cfg.out.join(format!("smalldata_{name}.csv"));
    agg.write(&aggregate_file)?;
    Ok(SmallDataReport {
        dataset: name,
        points,
        raw_file,
        aggregate_file,
    })
}
