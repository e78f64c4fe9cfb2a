//! Experiment configuration: a plain `key = value` file overlaid by command-line flags.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};
use llabo_core::{AcquisitionKind, Strategy};

use crate::commands::smalldata::Method;

/// Ordered `key -> value` settings. Keys are case-insensitive and `_` is treated as `-`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct KeyValues(BTreeMap<String, String>);

fn normalize_key(k: &str) -> String {
    k.trim().to_ascii_lowercase().replace('_', "-")
}

impl KeyValues {
    /// Parses lines of `key = value`; blank lines and `#` comments are skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("config line {}: expected key = value, got '{raw}'", i + 1))?;
            map.insert(normalize_key(k), v.trim().to_string());
        }
        Ok(Self(map))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.0.insert(normalize_key(key), value.to_string());
    }

    pub fn set_opt<T: ToString>(&mut self, key: &str, value: Option<T>) {
        if let Some(v) = value {
            self.set(key, v);
        }
    }

    /// Later sources win.
    pub fn overlay(mut self, other: &KeyValues) -> Self {
        for (k, v) in &other.0 {
            self.0.insert(k.clone(), v.clone());
        }
        self
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.0.get(key).map(String::as_str)
    }

    fn parsed<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        self.get(key)
            .map(|v| v.parse::<T>().map_err(|e| anyhow!("invalid value '{v}' for {key}: {e}")))
            .transpose()
    }

    fn flag(&self, key: &str) -> Result<Option<bool>> {
        self.get(key)
            .map(|v| match v.to_ascii_lowercase().as_str() {
                "1" | "true" | "yes" | "on" => Ok(true),
                "0" | "false" | "no" | "off" => Ok(false),
                _ => Err(anyhow!("invalid boolean '{v}' for {key}")),
            })
            .transpose()
    }

    fn check_known(&self, known: &[&str]) -> Result<()> {
        for k in self.0.keys() {
            if !known.contains(&k.as_str()) {
                bail!("unknown setting '{k}' (known: {})", known.join(", "));
            }
        }
        Ok(())
    }
}

/// `"0,1,2"`, `"0..5"` (half-open) or a mix of both.
pub fn parse_seeds(s: &str) -> Result<Vec<u64>> {
    let mut out = Vec::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        if let Some((a, b)) = part.split_once("..") {
            let a: u64 = a.trim().parse().with_context(|| format!("seed range '{part}'"))?;
            let b: u64 = b.trim().parse().with_context(|| format!("seed range '{part}'"))?;
            if b <= a {
                bail!("empty seed range '{part}'");
            }
            out.extend(a..b);
        } else {
            out.push(part.parse().with_context(|| format!("seed '{part}'"))?);
        }
    }
    if out.is_empty() {
        bail!("at least one seed is required");
    }
    Ok(out)
}

pub fn parse_list<T: FromStr>(s: &str, what: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    s.split(',')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(|p| p.parse::<T>().map_err(|e| anyhow!("invalid {what} '{p}': {e}")))
        .collect()
}

pub fn parse_acquisition(name: &str, beta: Option<f64>) -> Result<AcquisitionKind> {
    let kind = match name.to_ascii_lowercase().as_str() {
        "ei" => AcquisitionKind::Ei,
        "cb" | "ucb" | "lcb" => AcquisitionKind::Cb {
            beta: beta.unwrap_or(AcquisitionKind::DEFAULT_BETA),
        },
        other => bail!("unknown acquisition '{other}' (expected ei or cb)"),
    };
    kind.validate()?;
    Ok(kind)
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub objective: String,
    pub dim: Option<usize>,
    pub strategies: Vec<Strategy>,
    pub acquisition: AcquisitionKind,
    pub n_init: usize,
    pub n_iters: usize,
    pub seeds: Vec<u64>,
    pub out: PathBuf,
    pub svg: bool,
    pub parallel: bool,
    /// When false, `propose_ms` is written as 0 so reruns are byte-identical.
    pub timing: bool,
    pub epochs: usize,
    pub test_set_size: usize,
    pub warm_start: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            objective: "branin".into(),
            dim: None,
            strategies: vec![Strategy::LlaPosthoc, Strategy::RandomSearch],
            acquisition: AcquisitionKind::Ei,
            n_init: 20,
            n_iters: 50,
            seeds: (0..5).collect(),
            out: PathBuf::from("results"),
            svg: false,
            parallel: false,
            timing: true,
            epochs: 1000,
            test_set_size: 256,
            warm_start: false,
        }
    }
}

impl RunConfig {
    const KEYS: &'static [&'static str] = &[
        "objective",
        "dim",
        "strategies",
        "acq",
        "beta",
        "n-init",
        "iters",
        "seeds",
        "out",
        "svg",
        "parallel",
        "timing",
        "epochs",
        "test-size",
        "warm-start",
    ];

    pub fn from_settings(kv: &KeyValues) -> Result<Self> {
        kv.check_known(Self::KEYS)?;
        let mut c = Self::default();
        if let Some(v) = kv.get("objective") {
            c.objective = v.to_string();
        }
        c.dim = kv.parsed("dim")?.or(c.dim);
        if let Some(v) = kv.get("strategies") {
            c.strategies = parse_list(v, "strategy")?;
        }
        let beta: Option<f64> = kv.parsed("beta")?;
        c.acquisition = parse_acquisition(kv.get("acq").unwrap_or("ei"), beta)?;
        c.n_init = kv.parsed("n-init")?.unwrap_or(c.n_init);
        c.n_iters = kv.parsed("iters")?.unwrap_or(c.n_iters);
        if let Some(v) = kv.get("seeds") {
            c.seeds = parse_seeds(v)?;
        }
        if let Some(v) = kv.get("out") {
            c.out = PathBuf::from(v);
        }
        c.svg = kv.flag("svg")?.unwrap_or(c.svg);
        c.parallel = kv.flag("parallel")?.unwrap_or(c.parallel);
        c.timing = kv.flag("timing")?.unwrap_or(c.timing);
        c.epochs = kv.parsed("epochs")?.unwrap_or(c.epochs);
        c.test_set_size = kv.parsed("test-size")?.unwrap_or(c.test_set_size);
        c.warm_start = kv.flag("warm-start")?.unwrap_or(c.warm_start);
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if self.strategies.is_empty() {
            bail!("at least one strategy is required");
        }
        if self.seeds.is_empty() {
            bail!("at least one seed is required");
        }
        if self.n_init == 0 {
            bail!("n-init must be at least 1");
        }
        if self.epochs == 0 {
            bail!("epochs must be at least 1");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PathologyConfig {
    pub bounds: Vec<f64>,
    pub grid: usize,
    pub beta: f64,
    pub seed: u64,
    /// Also run the arm trained on uniform points over each box.
    pub mitigated: bool,
    pub out: PathBuf,
    pub epochs: usize,
    /// Boundary-argmax assertion applies to bounds at least this large.
    pub assert_from: f64,
}

impl Default for PathologyConfig {
    fn default() -> Self {
        Self {
            bounds: vec![5.0, 10.0, 20.0, 40.0],
            grid: 1001,
            beta: AcquisitionKind::DEFAULT_BETA,
            seed: 0,
            mitigated: false,
            out: PathBuf::from("results"),
            epochs: 1000,
            assert_from: 20.0,
        }
    }
}

impl PathologyConfig {
    const KEYS: &'static [&'static str] = &["bounds", "grid", "beta", "seed", "mitigated", "out", "epochs"];

    pub fn from_settings(kv: &KeyValues) -> Result<Self> {
        kv.check_known(Self::KEYS)?;
        let mut c = Self::default();
        if let Some(v) = kv.get("bounds") {
            c.bounds = parse_list(v, "bound")?;
        }
        c.grid = kv.parsed("grid")?.unwrap_or(c.grid);
        c.beta = kv.parsed("beta")?.unwrap_or(c.beta);
        c.seed = kv.parsed("seed")?.unwrap_or(c.seed);
        c.mitigated = kv.flag("mitigated")?.unwrap_or(c.mitigated);
        if let Some(v) = kv.get("out") {
            c.out = PathBuf::from(v);
        }
        c.epochs = kv.parsed("epochs")?.unwrap_or(c.epochs);
        if c.bounds.is_empty() || c.bounds.iter().any(|b| !(b.is_finite() && *b > 0.0)) {
            bail!("bounds must be a non-empty list of positive half-widths");
        }
        if c.grid < 3 {
            bail!("grid needs at least 3 points");
        }
        if !(c.beta.is_finite() && c.beta > 0.0) {
            bail!("beta must be finite and > 0");
        }
        Ok(c)
    }
}

/// Where small-data regression points come from.
#[derive(Clone, Debug, PartialEq)]
pub enum DataSource {
    Synthetic(llabo_core::SyntheticKind),
    Csv { path: PathBuf, target: String },
}

#[derive(Clone, Debug, PartialEq)]
pub struct SmallDataConfig {
    pub source: DataSource,
    pub n_grid: Vec<usize>,
    pub methods: Vec<Method>,
    pub ensemble_size: usize,
    pub eval_fraction: f64,
    pub seeds: Vec<u64>,
    pub out: PathBuf,
    pub epochs: usize,
    pub parallel: bool,
}

impl Default for SmallDataConfig {
    fn default() -> Self {
        Self {
            source: DataSource::Synthetic(llabo_core::SyntheticKind::Sine1d),
            n_grid: (1..=200).collect(),
            methods: Method::ALL.to_vec(),
            ensemble_size: 5,
            eval_fraction: 0.5,
            seeds: (0..3).collect(),
            out: PathBuf::from("results"),
            epochs: 1000,
            parallel: false,
        }
    }
}

impl SmallDataConfig {
    const KEYS: &'static [&'static str] = &[
        "dataset",
        "target-col",
        "methods",
        "n-max",
        "n-grid",
        "ensemble-size",
        "eval-frac",
        "seeds",
        "out",
        "epochs",
        "parallel",
    ];

    pub fn from_settings(kv: &KeyValues) -> Result<Self> {
        kv.check_known(Self::KEYS)?;
        let mut c = Self::default();
        if let Some(v) = kv.get("dataset") {
            c.source = match v.parse::<llabo_core::SyntheticKind>() {
                Ok(kind) => DataSource::Synthetic(kind),
                Err(_) if v.to_ascii_lowercase().ends_with(".csv") || Path::new(v).exists() => DataSource::Csv {
                    path: PathBuf::from(v),
                    target: kv
                        .get("target-col")
                        .ok_or_else(|| anyhow!("--target-col is required for a CSV dataset"))?
                        .to_string(),
                },
                Err(e) => bail!("{e}; or give a path to a CSV file"),
            };
        }
        if let Some(v) = kv.get("methods") {
            c.methods = parse_list(v, "method")?;
        }
        match (kv.get("n-grid"), kv.parsed::<usize>("n-max")?) {
            (Some(g), _) => c.n_grid = parse_list(g, "n")?,
            (None, Some(m)) => c.n_grid = (1..=m).collect(),
            (None, None) => {}
        }
        c.ensemble_size = kv.parsed("ensemble-size")?.unwrap_or(c.ensemble_size);
        c.eval_fraction = kv.parsed("eval-frac")?.unwrap_or(c.eval_fraction);
        if let Some(v) = kv.get("seeds") {
            c.seeds = parse_seeds(v)?;
        }
        if let Some(v) = kv.get("out") {
            c.out = PathBuf::from(v);
        }
        c.epochs = kv.parsed("epochs")?.unwrap_or(c.epochs);
        c.parallel = kv.flag("parallel")?.unwrap_or(c.parallel);
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() {
            bail!("at least one method is required");
        }
        if self.n_grid.is_empty() || self.n_grid.contains(&0) {
            bail!("the n grid must be non-empty and positive");
        }
        if self.ensemble_size < 2 && self.methods.iter().any(|m| m.is_mixture()) {
            bail!("ensemble and mixture methods need ensemble-size >= 2");
        }
        if !(self.eval_fraction > 0.0 && self.eval_fraction < 1.0) {
            bail!("eval-frac must lie strictly between 0 and 1");
        }
        if self.seeds.is_empty() {
            bail!("at least one seed is required");
        }
        Ok(())
    }

    pub fn n_max(&self) -> usize {
        self.n_grid.iter().copied().max().unwrap_or(0)
    }
}
