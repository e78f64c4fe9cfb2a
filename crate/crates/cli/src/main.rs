use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use llabo_cli::config::{KeyValues, PathologyConfig, RunConfig, SmallDataConfig};
use llabo_cli::{cmd_pathology, cmd_run_bo, cmd_smalldata, emit_svg};

#[derive(Parser)]
#[command(name = "llabo", version, about = "Bayesian optimization with linearized-Laplace surrogates")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Benchmark optimization sweep over strategies and seeds.
    RunBo(RunBoArgs),
    /// Extrapolation demo of a ReLU surrogate on growing search boxes.
    Pathology(PathologyArgs),
    /// Held-out likelihood versus training-set size.
    Smalldata(SmallDataArgs),
    /// Render an aggregate CSV as an SVG line plot.
    EmitSvg {
        csv: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct Common {
    /// `key = value` settings file; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Training epochs per network fit.
    #[arg(long)]
    epochs: Option<usize>,
}

#[derive(Args)]
struct RunBoArgs {
    #[command(flatten)]
    common: Common,
    /// branin, ackley or image
    #[arg(long)]
    objective: Option<String>,
    #[arg(long)]
    dim: Option<usize>,
    /// Comma list of lla-posthoc, lla-online, rbf-gp, random.
    #[arg(long)]
    strategies: Option<String>,
    /// ei or cb
    #[arg(long)]
    acq: Option<String>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    n_init: Option<usize>,
    #[arg(long)]
    iters: Option<usize>,
    /// e.g. `0,1,2` or `0..5`
    #[arg(long)]
    seeds: Option<String>,
    #[arg(long)]
    svg: bool,
    /// Run independent (strategy, seed) jobs in parallel.
    #[arg(long)]
    parallel: bool,
    /// Write proposal times as 0 so reruns are byte-identical.
    #[arg(long)]
    no_timing: bool,
    #[arg(long)]
    test_size: Option<usize>,
    #[arg(long)]
    warm_start: bool,
}

#[derive(Args)]
struct PathologyArgs {
    #[command(flatten)]
    common: Common,
    /// Comma list of box half-widths.
    #[arg(long)]
    bounds: Option<String>,
    #[arg(long)]
    grid: Option<usize>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Also run the arm trained on uniform points over each box.
    #[arg(long)]
    mitigated: bool,
}

#[derive(Args)]
struct SmallDataArgs {
    #[command(flatten)]
    common: Common,
    /// Generator name (sine1d, step1d, friedman5) or a CSV path.
    #[arg(long)]
    dataset: Option<String>,
    #[arg(long)]
    target_col: Option<String>,
    /// Comma list of map, ensemble, la-posthoc, la-marglik, mola-posthoc, mola-marglik.
    #[arg(long)]
    methods: Option<String>,
    /// Evaluate every n in 1..=n-max.
    #[arg(long)]
    n_max: Option<usize>,
    /// Explicit comma list of training-set sizes (overrides --n-max).
    #[arg(long)]
    n_grid: Option<String>,
    #[arg(long)]
    ensemble_size: Option<usize>,
    #[arg(long)]
    eval_frac: Option<f64>,
    #[arg(long)]
    seeds: Option<String>,
    #[arg(long)]
    parallel: bool,
}

fn settings(common: &Common, fill: impl FnOnce(&mut KeyValues)) -> Result<KeyValues> {
    let base = match &common.config {
        Some(p) => KeyValues::load(p)?,
        None => KeyValues::default(),
    };
    let mut flags = KeyValues::default();
    flags.set_opt("out", common.out.as_ref().map(|p| p.display()));
    flags.set_opt("epochs", common.epochs);
    fill(&mut flags);
    Ok(base.overlay(&flags))
}

fn set_flag(kv: &mut KeyValues, key: &str, on: bool) {
    if on {
        kv.set(key, true);
    }
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::RunBo(a) => {
            let kv = settings(&a.common, |kv| {
                kv.set_opt("objective", a.objective);
                kv.set_opt("dim", a.dim);
                kv.set_opt("strategies", a.strategies);
                kv.set_opt("acq", a.acq);
                kv.set_opt("beta", a.beta);
                kv.set_opt("n-init", a.n_init);
                kv.set_opt("iters", a.iters);
                kv.set_opt("seeds", a.seeds);
                kv.set_opt("test-size", a.test_size);
                set_flag(kv, "svg", a.svg);
                set_flag(kv, "parallel", a.parallel);
                set_flag(kv, "warm-start", a.warm_start);
                if a.no_timing {
                    kv.set("timing", false);
                }
            })?;
            let cfg = RunConfig::from_settings(&kv)?;
            let out = cmd_run_bo(&cfg)?;
            for t in &out.traces {
                println!(
                    "{:<12} seed {:<3} final best {:.6}",
                    t.config.strategy.name(),
                    t.config.seed,
                    t.final_best()
                );
            }
            println!("aggregate: {}", out.aggregate.display());
            if let Some(svg) = out.svg {
                println!("plot: {}", svg.display());
            }
            Ok(true)
        }
        Command::Pathology(a) => {
            let kv = settings(&a.common, |kv| {
                kv.set_opt("bounds", a.bounds);
                kv.set_opt("grid", a.grid);
                kv.set_opt("beta", a.beta);
                kv.set_opt("seed", a.seed);
                set_flag(kv, "mitigated", a.mitigated);
            })?;
            let cfg = PathologyConfig::from_settings(&kv)?;
            let report = cmd_pathology(&cfg)?;
            for r in &report.rows {
                println!(
                    "{:<12} B = {:<5} argmax x = {:<10.4} |x|/B = {:.4}",
                    r.arm.name(),
                    r.bound,
                    r.grid_argmax,
                    r.boundary_ratio()
                );
            }
            for f in &report.failures {
                eprintln!("assertion failed: {f}");
            }
            Ok(report.failures.is_empty())
        }
        Command::Smalldata(a) => {
            let kv = settings(&a.common, |kv| {
                kv.set_opt("dataset", a.dataset);
                kv.set_opt("target-col", a.target_col);
                kv.set_opt("methods", a.methods);
                kv.set_opt("n-max", a.n_max);
                kv.set_opt("n-grid", a.n_grid);
                kv.set_opt("ensemble-size", a.ensemble_size);
                kv.set_opt("eval-frac", a.eval_frac);
                kv.set_opt("seeds", a.seeds);
                set_flag(kv, "parallel", a.parallel);
            })?;
            let cfg = SmallDataConfig::from_settings(&kv)?;
            let report = cmd_smalldata(&cfg)?;
            println!("{}: {}", report.dataset, report.aggregate_file.display());
            Ok(true)
        }
        Command::EmitSvg { csv, out } => {
            let out = out.unwrap_or_else(|| csv.with_extension("svg"));
            emit_svg(&csv, &out)?;
            println!("{}", out.display());
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
