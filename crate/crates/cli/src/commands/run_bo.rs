//! Benchmark sweep over strategies and seeds.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use llabo_core::bo::BoAbort;
use llabo_core::{run_bo, BoConfig, BoTrace, Objective, Strategy};
use rayon::prelude::*;

use crate::config::RunConfig;
use crate::output::{median_iqr, num, opt_num, Table};

#[derive(Debug)]
pub struct RunBoOutput {
    pub traces: Vec<BoTrace>,
    pub run_files: Vec<PathBuf>,
    pub aggregate: PathBuf,
    pub summary: PathBuf,
    pub svg: Option<PathBuf>,
}

pub fn bo_config(cfg: &RunConfig, strategy: Strategy, seed: u64) -> BoConfig {
    let mut bc = BoConfig::new(strategy, cfg.n_iters, seed);
    bc.n_init = cfg.n_init;
    bc.acquisition = cfg.acquisition;
    bc.test_set_size = cfg.test_set_size;
    bc.surrogate.train.epochs = cfg.epochs;
    bc.warm_start = cfg.warm_start;
    bc
}

pub fn trace_table(trace: &BoTrace, timing: bool) -> Table {
    let dim = trace.init_x.first().map_or(0, Vec::len);
    let header = std::iter::once("iter".to_string())
        .chain((0..dim).map(|i| format!("x{i}")))
        .chain(["f", "best_so_far", "test_mse", "propose_ms"].map(String::from));
    let mut t = Table::new(header);
    for r in &trace.records {
        let mut row = vec![r.iter.to_string()];
        row.extend(r.x.iter().map(|&v| num(v)));
        row.push(num(r.f));
        row.push(num(r.best_so_far));
        row.push(opt_num(r.test_mse));
        row.push(num(if timing { r.propose_ms } else { 0.0 }));
        t.push(row);
    }
    t
}

fn init_table(trace: &BoTrace) -> Table {
    let dim = trace.init_x.first().map_or(0, Vec::len);
    let header = std::iter::once("index".to_string())
        .chain((0..dim).map(|i| format!("x{i}")))
        .chain(std::iter::once("f".to_string()));
    let mut t = Table::new(header);
    for (i, (x, y)) in trace.init_x.iter().zip(&trace.init_y).enumerate() {
        let mut row = vec![i.to_string()];
        row.extend(x.iter().map(|&v| num(v)));
        row.push(num(*y));
        t.push(row);
    }
    t
}

/// Per-iteration median and interquartile range of best-so-far across seeds.
pub fn aggregate_table(traces: &[BoTrace], strategies: &[Strategy]) -> Table {
    let mut t = Table::new(["strategy", "iter", "median", "q25", "q75", "runs"]);
    for &s in strategies {
        let runs: Vec<&BoTrace> = traces.iter().filter(|tr| tr.config.strategy == s).collect();
        let n_iters = runs.iter().map(|r| r.records.len()).min().unwrap_or(0);
        for it in 0..n_iters {
            let vals: Vec<f64> = runs.iter().map(|r| r.records[it].best_so_far).collect();
            let (m, q1, q3) = median_iqr(&vals);
            t.push(vec![s.name().into(), it.to_string(), num(m), num(q1), num(q3), vals.len().to_string()]);
        }
    }
    t
}

fn summary_table(traces: &[BoTrace], timing: bool) -> Table {
    let mut t = Table::new(["strategy", "seed", "final_best", "total_propose_ms"]);
    for tr in traces {
        t.push(vec![
            tr.config.strategy.name().into(),
            tr.config.seed.to_string(),
            num(tr.final_best()),
            num(if timing { tr.total_propose_ms() } else { 0.0 }),
        ]);
    }
    t
}

pub fn run_file(out: &Path, objective: &str, strategy: Strategy, seed: u64) -> PathBuf {
    out.join(format!("{objective}_{}_seed{seed}.csv", strategy.name()))
}

pub fn cmd_run_bo(cfg: &RunConfig) -> Result<RunBoOutput> {
    cfg.validate()?;
    let objective = Objective::by_name(&cfg.objective, cfg.dim)?;
    std::fs::create_dir_all(&cfg.out).with_context(|| format!("creating output directory {}", cfg.out.display()))?;

    let jobs: Vec<(Strategy, u64)> = cfg
        .strategies
        .iter()
        .flat_map(|&s| cfg.seeds.iter().map(move |&seed| (s, seed)))
        .collect();
    let run = |&(s, seed): &(Strategy, u64)| run_bo(&objective, &bo_config(cfg, s, seed));
    let results: Vec<std::result::Result<BoTrace, Box<BoAbort>>> = if cfg.parallel {
        jobs.par_iter().map(run).collect()
    } else {
        jobs.iter().map(run).collect()
    };

    let mut traces = Vec::with_capacity(results.len());
    let mut run_files = Vec::new();
    let mut first_error = None;
    for (result, &(s, seed)) in results.into_iter().zip(&jobs) {
        let trace = match result {
            Ok(t) => t,
            Err(abort) => {
                first_error.get_or_insert_with(|| format!("{} seed {seed}: {abort}", s.name()));
                abort.partial
            }
        };
        let path = run_file(&cfg.out, &objective.name, s, seed);
        trace_table(&trace, cfg.timing).write(&path)?;
        init_table(&trace).write(&path.with_file_name(format!("{}_{}_seed{seed}_init.csv", objective.name, s.name())))?;
        run_files.push(path);
        traces.push(trace);
    }
    if let Some(e) = first_error {
        anyhow::bail!("run aborted, partial traces written: {e}");
    }

    let aggregate = cfg.out.join(format!("{}_aggregate.csv", objective.name));
    aggregate_table(&traces, &cfg.strategies).write(&aggregate)?;
    let summary = cfg.out.join(format!("{}_summary.csv", objective.name));
    summary_table(&traces, cfg.timing).write(&summary)?;
    let svg = if cfg.svg {
        let path = aggregate.with_extension("svg");
        crate::commands::svg::emit_svg(&aggregate, &path)?;
        Some(path)
    } else {
        None
    };
    Ok(RunBoOutput {
        traces,
        run_files,
        aggregate,
        summary,
        svg,
    })
}
