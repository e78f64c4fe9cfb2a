//! Extrapolation behaviour of a ReLU linearized-Laplace surrogate on growing search boxes.
//!
//! Far from the data a ReLU network is affine, and so is its Jacobian feature map, so
//! the predictive standard deviation grows linearly. An optimistic acquisition is then
//! maximized on the boundary of any sufficiently large box.

use anyhow::{Context, Result};
use llabo_core::acquisition::{cb, ei, optimize_acq, AcqOptConfig, Acquisition, AcquisitionKind, Bounds};
use llabo_core::rng::{derive_seed, rng_from_seed};
use llabo_core::{surrogate_fit_predict, Data, FittedSurrogate, Surrogate, SurrogateKind, SurrogateSettings};

use crate::config::PathologyConfig;
use crate::output::{num, Table};

/// Inputs of the unmitigated training set: two clusters in `[−2,−1] ∪ [1,2]`.
pub const CLUSTERED_X: [f64; 8] = [-2.0, -5.0 / 3.0, -4.0 / 3.0, -1.0, 1.0, 4.0 / 3.0, 5.0 / 3.0, 2.0];
pub const MITIGATED_POINTS: usize = 20;
/// Affine-extrapolation check applies beyond this radius.
pub const AFFINE_RADIUS: f64 = 3.0;
pub const AFFINE_TOL: f64 = 1e-6;
pub const BOUNDARY_FRACTION: f64 = 0.99;

fn target(x: f64) -> f64 {
    (2.0 * x).sin()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Arm {
    Unmitigated,
    Mitigated,
}

impl Arm {
    pub fn name(self) -> &'static str {
        match self {
            Arm::Unmitigated => "unmitigated",
            Arm::Mitigated => "mitigated",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PathologyRow {
    pub arm: Arm,
    pub bound: f64,
    /// Grid argmax of the confidence-bound acquisition.
    pub grid_argmax: f64,
    pub grid_acq: f64,
    pub opt_x: f64,
    pub opt_acq: f64,
    pub ei_argmax: f64,
    /// Largest `|μ(x+h) − 2μ(x) + μ(x−h)|` over grid points with `|x ± h| > 3`.
    pub max_second_diff: Option<f64>,
}

impl PathologyRow {
    pub fn boundary_ratio(&self) -> f64 {
        self.grid_argmax.abs() / self.bound
    }
}

#[derive(Clone, Debug)]
pub struct PathologyReport {
    pub rows: Vec<PathologyRow>,
    /// Violated assertions; empty on success.
    pub failures: Vec<String>,
}

pub fn grid(bound: f64, n: usize) -> Vec<f64> {
    (0..n).map(|k| -bound + 2.0 * bound * k as f64 / (n - 1) as f64).collect()
}

fn argmax(values: &[f64]) -> usize {
    // first index wins ties
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

fn settings(cfg: &PathologyConfig) -> SurrogateSettings {
    let mut s = SurrogateSettings::default();
    s.train.epochs = cfg.epochs;
    s
}

fn fit(data: &Data, half_width: f64, cfg: &PathologyConfig, tag: u64) -> Result<FittedSurrogate> {
    let b = Bounds::new(vec![(-half_width, half_width)])?;
    Ok(surrogate_fit_predict(
        SurrogateKind::LlaPosthoc,
        data,
        &b,
        &settings(cfg),
        derive_seed(cfg.seed, tag),
    )?)
}

pub fn clustered_data() -> Data {
    let rows: Vec<Vec<f64>> = CLUSTERED_X.iter().map(|&x| vec![x]).collect();
    let y: Vec<f64> = CLUSTERED_X.iter().map(|&x| target(x)).collect();
    Data::from_rows(&rows, &y).expect("static data")
}

pub fn uniform_data(half_width: f64, seed: u64) -> Data {
    let b = Bounds::new(vec![(-half_width, half_width)]).expect("positive half-width");
    let mut rng = rng_from_seed(seed);
    let rows: Vec<Vec<f64>> = (0..MITIGATED_POINTS).map(|_| b.sample(&mut rng)).collect();
    let y: Vec<f64> = rows.iter().map(|r| target(r[0])).collect();
    Data::from_rows(&rows, &y).expect("finite data")
}

fn scan(
    surrogate: &FittedSurrogate,
    data: &Data,
    arm: Arm,
    bound: f64,
    cfg: &PathologyConfig,
) -> Result<(PathologyRow, Table)> {
    let xs = grid(bound, cfg.grid);
    let pts: Vec<Vec<f64>> = xs.iter().map(|&x| vec![x]).collect();
    let preds = surrogate.predict_batch(&pts)?;
    let f_best = data.y.iter().copied().fold(f64::INFINITY, f64::min);
    let kind = AcquisitionKind::Cb { beta: cfg.beta };
    let acq = Acquisition::new(kind, f_best);

    let mut table = Table::new(["x", "mu", "s", "cb", "ei"]);
    let mut cb_acq = Vec::with_capacity(xs.len());
    let mut ei_vals = Vec::with_capacity(xs.len());
    for (x, p) in xs.iter().zip(&preds) {
        let s = p.std_f();
        let c = cb(p.mu, s, cfg.beta);
        let e = ei(p.mu, s, f_best);
        table.push(vec![num(*x), num(p.mu), num(s), num(c), num(e)]);
        cb_acq.push(acq.value(p));
        ei_vals.push(e);
    }
    let gi = argmax(&cb_acq);
    let h = xs[1] - xs[0];
    let max_second_diff = (1..xs.len() - 1)
        .filter(|&k| (xs[k] - h).abs() > AFFINE_RADIUS && (xs[k] + h).abs() > AFFINE_RADIUS && xs[k].abs() > AFFINE_RADIUS)
        .map(|k| (preds[k + 1].mu - 2.0 * preds[k].mu + preds[k - 1].mu).abs())
        .fold(None, |acc: Option<f64>, v| Some(acc.map_or(v, |a| a.max(v))));

    let b = Bounds::new(vec![(-bound, bound)])?;
    let opt = optimize_acq(surrogate, &b, acq, &AcqOptConfig::default(), derive_seed(cfg.seed, bound.to_bits()))?;
    let row = PathologyRow {
        arm,
        bound,
        grid_argmax: xs[gi],
        grid_acq: cb_acq[gi],
        opt_x: opt.x[0],
        opt_acq: opt.value,
        ei_argmax: xs[argmax(&ei_vals)],
        max_second_diff,
    };
    Ok((row, table))
}

pub fn grid_file(cfg: &PathologyConfig, arm: Arm, bound: f64) -> std::path::PathBuf {
    cfg.out.join(format!("pathology_{}_B{bound}.csv", arm.name()))
}

pub fn cmd_pathology(cfg: &PathologyConfig) -> Result<PathologyReport> {
    std::fs::create_dir_all(&cfg.out).with_context(|| format!("creating output directory {}", cfg.out.display()))?;
    let mut rows = Vec::new();
    let mut failures = Vec::new();

    let clustered = clustered_data();
    let model = fit(&clustered, 2.0, cfg, 0)?;
    for &bound in &cfg.bounds {
        let (row, table) = scan(&model, &clustered, Arm::Unmitigated, bound, cfg)?;
        table.write(&grid_file(cfg, Arm::Unmitigated, bound))?;
        if bound >= cfg.assert_from && row.boundary_ratio() < BOUNDARY_FRACTION {
            failures.push(format!(
                "B = {bound}: confidence-bound argmax at x = {} is not within {BOUNDARY_FRACTION}·B of the boundary",
                row.grid_argmax
            ));
        }
        if let Some(d) = row.max_second_diff.filter(|d| !(*d <= AFFINE_TOL)) {
            failures.push(format!(
                "B = {bound}: mean not affine beyond |x| > {AFFINE_RADIUS} (second difference {d:e})"
            ));
        }
        rows.push(row);
    }

    if cfg.mitigated {
        for (k, &bound) in cfg.bounds.iter().enumerate() {
            let data = uniform_data(bound, derive_seed(cfg.seed, 100 + k as u64));
            let model = fit(&data, bound, cfg, 200 + k as u64)?;
            let (row, table) = scan(&model, &data, Arm::Mitigated, bound, cfg)?;
            table.write(&grid_file(cfg, Arm::Mitigated, bound))?;
            rows.push(row);
        }
    }

    let mut summary = Table::new([
        "arm",
        "bound",
        "grid_argmax_x",
        "grid_acq",
        "boundary_ratio",
        "opt_x",
        "opt_acq",
        "ei_argmax_x",
        "max_second_diff",
    ]);
    for r in &rows {
        summary.push(vec![
            r.arm.name().into(),
            num(r.bound),
            num(r.grid_argmax),
            num(r.grid_acq),
            num(r.boundary_ratio()),
            num(r.opt_x),
            num(r.opt_acq),
            num(r.ei_argmax),
            r.max_second_diff.map(num).unwrap_or_default(),
        ]);
    }
    summary.write(&cfg.out.join("pathology_summary.csv"))?;
    Ok(PathologyReport { rows, failures })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_endpoints() {
        let g = grid(40.0, 1001);
        assert_eq!(g.len(), 1001);
        assert_eq!(g[0], -40.0);
        assert_eq!(g[1000], 40.0);
        assert_eq!(g[500], 0.0);
    }

    #[test]
    fn clustered_set_is_symmetric() {
        let d = clustered_data();
        assert_eq!(d.len(), 8);
        assert!(d.x.iter().all(|x| (1.0..=2.0).contains(&x.abs())));
        assert!((d.y[0] + d.y[7]).abs() < 1e-15);
        assert!((d.y[7] - (4.0f64).sin()).abs() < 1e-15);
    }

    #[test]
    fn argmax_prefers_first() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0, 2.0]), 1);
    }
}
