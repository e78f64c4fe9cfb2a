//! Benchmark objectives and regression datasets.

use std::f64::consts::{E, PI};
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::acquisition::Bounds;
use crate::data::Data;
use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_from_seed};

pub const BRANIN_MIN: f64 = 0.397_887_357_729_738;

pub fn branin(x1: f64, x2: f64) -> f64 {
    let b = 5.1 / (4.0 * PI * PI);
    let c = 5.0 / PI;
    let t = 1.0 / (8.0 * PI);
    (x2 - b * x1 * x1 + c * x1 - 6.0).powi(2) + 10.0 * (1.0 - t) * x1.cos() + 10.0
}

pub fn ackley(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let sq = x.iter().map(|v| v * v).sum::<f64>() / n;
    let cs = x.iter().map(|v| (2.0 * PI * v).cos()).sum::<f64>() / n;
    -20.0 * (-0.2 * sq.sqrt()).exp() - cs.exp() + 20.0 + E
}

pub fn image_distance(x: &[f64], x0: &[f64]) -> f64 {
    x.iter().zip(x0).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt()
}

/// Deterministic target "image" in `[0,1]^d`: a few seeded Gaussian blobs on a square-ish grid.
pub fn image_target(dim: usize, seed: u64) -> Vec<f64> {
    let side = (dim as f64).sqrt().ceil().max(1.0) as usize;
    let mut rng = rng_from_seed(derive_seed(seed, 0x1a6e));
    let blobs: Vec<(f64, f64, f64)> = (0..3)
        .map(|_| {
            (
                rng.random::<f64>() * side as f64,
                rng.random::<f64>() * side as f64,
                0.5 + rng.random::<f64>() * side as f64 / 4.0,
            )
        })
        .collect();
    (0..dim)
        .map(|i| {
            let (r, c) = ((i / side) as f64, (i % side) as f64);
            let v: f64 = blobs
                .iter()
                .map(|&(br, bc, w)| (-((r - br).powi(2) + (c - bc).powi(2)) / (2.0 * w * w)).exp())
                .sum();
            v.min(1.0)
        })
        .collect()
}

type Evaluator = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// A deterministic black-box function on a box, to be minimized.
#[derive(Clone)]
pub struct Objective {
    pub name: String,
    pub bounds: Bounds,
    pub known_optimum: Option<f64>,
    eval: Evaluator,
}

impl fmt::Debug for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Objective")
            .field("name", &self.name)
            .field("dim", &self.dim())
            .field("known_optimum", &self.known_optimum)
            .finish()
    }
}

impl Objective {
    pub fn new(
        name: impl Into<String>,
        bounds: Bounds,
        known_optimum: Option<f64>,
        eval: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self {
            name: name.into(),
            bounds,
            known_optimum,
            eval: Arc::new(eval),
        }
    }

    pub fn dim(&self) -> usize {
        self.bounds.dim()
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        (self.eval)(x)
    }

    pub fn branin() -> Self {
        let b = Bounds::new(vec![(-5.0, 10.0), (0.0, 15.0)]).expect("static bounds");
        Self::new("branin", b, Some(BRANIN_MIN), |x| branin(x[0], x[1]))
    }

    pub fn ackley(dim: usize) -> Result<Self> {
        let b = Bounds::cube(dim, -32.768, 32.768)?;
        Ok(Self::new("ackley", b, Some(0.0), ackley))
    }

    pub fn image(dim: usize, seed: u64) -> Result<Self> {
        Self::image_with_target(image_target(dim, seed))
    }

    pub fn image_with_target(x0: Vec<f64>) -> Result<Self> {
        let b = Bounds::cube(x0.len(), 0.0, 1.0)?;
        Ok(Self::new("image", b, Some(0.0), move |x| image_distance(x, &x0)))
    }

    /// Looks up a benchmark by name. `dim` applies to ackley and image.
    pub fn by_name(name: &str, dim: Option<usize>) -> Result<Self> {
        match name.to_ascii_lowercase().as_str() {
            "branin" => {
                if let Some(d) = dim.filter(|&d| d != 2) {
                    return Err(Error::InvalidArgument(format!("branin is 2-dimensional, got --dim {d}")));
                }
                Ok(Self::branin())
            }
            "ackley" => Self::ackley(dim.unwrap_or(2)),
            "image" => Self::image(dim.unwrap_or(64), 0),
            other => Err(Error::InvalidArgument(format!(
                "unknown objective '{other}' (expected branin, ackley or image)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RegressionDataset {
    pub name: String,
    pub data: Data,
}

impl RegressionDataset {
    pub fn n_features(&self) -> usize {
        self.data.dim()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SyntheticKind {
    /// `sin(3x) + 0.1ε` on `[−2, 2]`.
    Sine1d,
    /// `sign(x) + 0.1ε` on `[−2, 2]`.
    Step1d,
    /// Friedman #1 on `[0,1]^5`, noise scale 0.5.
    Friedman5,
}

impl SyntheticKind {
    pub fn name(self) -> &'static str {
        match self {
            SyntheticKind::Sine1d => "sine1d",
            SyntheticKind::Step1d => "step1d",
            SyntheticKind::Friedman5 => "friedman5",
        }
    }
}

impl FromStr for SyntheticKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sine1d" => Ok(SyntheticKind::Sine1d),
            "step1d" => Ok(SyntheticKind::Step1d),
            "friedman5" | "friedman" => Ok(SyntheticKind::Friedman5),
            _ => Err(Error::InvalidArgument(format!(
                "unknown generator '{s}' (expected sine1d, step1d or friedman5)"
            ))),
        }
    }
}

pub fn make_synthetic_regression(kind: SyntheticKind, n: usize, seed: u64) -> RegressionDataset {
    let mut rng = rng_from_seed(derive_seed(seed, 0x5e7));
    let dim = if kind == SyntheticKind::Friedman5 { 5 } else { 1 };
    let mut x = DMatrix::zeros(n, dim);
    let mut y = DVector::zeros(n);
    for i in 0..n {
        let eps: f64 = rng.sample(StandardNormal);
        match kind {
            SyntheticKind::Sine1d | SyntheticKind::Step1d => {
                let v: f64 = rng.random_range(-2.0..2.0);
                x[(i, 0)] = v;
                let clean = match kind {
                    SyntheticKind::Sine1d => (3.0 * v).sin(),
                    _ => v.signum(),
                };
                y[i] = clean + 0.1 * eps;
            }
            SyntheticKind::Friedman5 => {
                let u: Vec<f64> = (0..5).map(|_| rng.random::<f64>()).collect();
                for (j, &v) in u.iter().enumerate() {
                    x[(i, j)] = v;
                }
                y[i] = 10.0 * (PI * u[0] * u[1]).sin() + 20.0 * (u[2] - 0.5).powi(2) + 10.0 * u[3] + 5.0 * u[4] + 0.5 * eps;
            }
        }
    }
    RegressionDataset {
        name: kind.name().to_string(),
        data: Data { x, y },
    }
}

/// Reads a headered numeric CSV; features are standardized per column, the target is kept raw.
pub fn load_csv_dataset(path: &Path, target_column: &str) -> Result<RegressionDataset> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let headers: Vec<String> = reader.headers()?.iter().map(|h| h.trim().to_string()).collect();
    if headers.is_empty() || headers.iter().all(|h| h.is_empty()) {
        return Err(Error::Dataset(format!("{}: empty file", path.display())));
    }
    let target = headers
        .iter()
        .position(|h| h == target_column)
        .ok_or_else(|| Error::Dataset(format!("target column '{target_column}' not found in {}", path.display())))?;

    let mut features: Vec<Vec<f64>> = Vec::new();
    let mut targets = Vec::new();
    for (r, rec) in reader.records().enumerate() {
        let rec = rec?;
        // header is line 1
        let line = r + 2;
        let mut row = Vec::with_capacity(headers.len() - 1);
        for (c, cell) in rec.iter().enumerate() {
            let v: f64 = cell.trim().parse().map_err(|_| {
                Error::Dataset(format!(
                    "non-numeric cell '{cell}' at row {line}, column {} ('{}')",
                    c + 1,
                    headers.get(c).map_or("", String::as_str)
                ))
            })?;
            if !v.is_finite() {
                return Err(Error::Dataset(format!("non-finite cell at row {line}, column {}", c + 1)));
            }
            if c == target {
                targets.push(v);
            } else {
                row.push(v);
            }
        }
        features.push(row);
    }
    if features.is_empty() {
        return Err(Error::Dataset(format!("{}: no data rows", path.display())));
    }

    let m = features.len();
    let n = headers.len() - 1;
    let mut x = DMatrix::from_fn(m, n, |i, j| features[i][j]);
    for mut col in x.column_iter_mut() {
        let mean = col.mean();
        let std = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / m as f64).sqrt();
        let std = if std > 1e-12 { std } else { 1.0 };
        col.apply(|v| *v = (*v - mean) / std);
    }
    let name = path.file_stem().map_or_else(|| "csv".to_string(), |s| s.to_string_lossy().into_owned());
    Ok(RegressionDataset {
        name,
        data: Data::new(x, DVector::from_vec(targets))?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn branin_known_values() {
        assert!((branin(PI, 2.275) - 0.397887).abs() < 1e-5);
        assert!((branin(-PI, 12.275) - branin(PI, 2.275)).abs() < 1e-6);
        let hand = 10.0 * (1.0 - 1.0 / (8.0 * PI)) + 10.0 + 36.0;
        assert!((branin(0.0, 0.0) - hand).abs() < 1e-12);
        assert!((hand - 55.602).abs() < 1e-3);
    }

    #[test]
    fn ackley_origin_and_symmetry() {
        assert!(ackley(&[0.0, 0.0]).abs() < 1e-12);
        assert_eq!(ackley(&[1.3, -2.1]), ackley(&[-1.3, 2.1]));
    }

    #[test]
    fn image_distance_cases() {
        let x0 = image_target(64, 3);
        assert_eq!(x0.len(), 64);
        assert!(x0.iter().all(|v| (0.0..=1.0).contains(v)));
        assert_eq!(image_distance(&x0, &x0), 0.0);
        assert!((image_distance(&[1.0; 64], &[0.0; 64]) - 8.0).abs() < 1e-12);
        assert_eq!(image_target(64, 3), x0);
    }

    #[test]
    fn by_name_rejects_unknown() {
        assert!(Objective::by_name("rosenbrock", None).is_err());
        assert!(Objective::by_name("branin", Some(3)).is_err());
        assert_eq!(Objective::by_name("image", Some(16)).unwrap().dim(), 16);
    }

    #[test]
    fn synthetic_generators() {
        assert!(make_synthetic_regression(SyntheticKind::Sine1d, 0, 1).is_empty());
        let a = make_synthetic_regression(SyntheticKind::Friedman5, 20, 4);
        assert_eq!(a, make_synthetic_regression(SyntheticKind::Friedman5, 20, 4));
        assert_eq!(a.n_features(), 5);
        let s = make_synthetic_regression(SyntheticKind::Sine1d, 2000, 9);
        let inside = s.data.y.iter().filter(|y| y.abs() <= 1.5).count();
        assert!(inside as f64 >= 0.9999 * 2000.0);
    }

    fn write_csv(text: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::Builder::new().suffix(".csv").tempfile().unwrap();
        f.write_all(text.as_bytes()).unwrap();
        f
    }

    #[test]
    fn csv_toy_parse() {
        let f = write_csv("a,y,b\n1,10,5\n3,20,5\n");
        let d = load_csv_dataset(f.path(), "y").unwrap();
        assert_eq!(d.data.y.as_slice(), &[10.0, 20.0]);
        // a standardized: mean 2, std 1; constant b → zeros
        assert_eq!(d.data.x, DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 1.0, 0.0]));
    }

    #[test]
    fn csv_errors_are_descriptive() {
        let f = write_csv("a,y\n1,2\n");
        let e = load_csv_dataset(f.path(), "target").unwrap_err().to_string();
        assert!(e.contains("target"), "{e}");
        let f = write_csv("a,y\n1,2\n1,oops\n");
        let e = load_csv_dataset(f.path(), "y").unwrap_err().to_string();
        assert!(e.contains("row 3") && e.contains("column 2"), "{e}");
        let f = write_csv("");
        assert!(load_csv_dataset(f.path(), "y").is_err());
    }
}
