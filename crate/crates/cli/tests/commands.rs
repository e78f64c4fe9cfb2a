use std::path::Path;
use std::process::Command;

use llabo_cli::commands::smalldata::{evaluate, make_split, Method};
use llabo_cli::config::{DataSource, PathologyConfig, RunConfig, SmallDataConfig};
use llabo_cli::{cmd_pathology, cmd_run_bo, cmd_smalldata};
use llabo_core::{Strategy, SyntheticKind};

fn read(p: &Path) -> String {
    std::fs::read_to_string(p).unwrap()
}

fn column(csv: &str, name: &str) -> Vec<String> {
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let j = header.iter().position(|h| *h == name).unwrap();
    lines.map(|l| l.split(',').nth(j).unwrap().to_string()).collect()
}

fn random_run(out: &Path, seeds: Vec<u64>) -> RunConfig {
    RunConfig {
        strategies: vec![Strategy::RandomSearch],
        n_init: 4,
        n_iters: 3,
        seeds,
        out: out.to_path_buf(),
        timing: false,
        ..RunConfig::default()
    }
}

#[test]
fn random_search_writes_one_row_per_iteration() {
    let dir = tempfile::tempdir().unwrap();
    let res = cmd_run_bo(&random_run(dir.path(), vec![0])).unwrap();
    let csv = read(&res.run_files[0]);
    assert_eq!(csv.lines().count(), 4);
    assert_eq!(csv.lines().next().unwrap(), "iter,x0,x1,f,best_so_far,test_mse,propose_ms");
    let best: Vec<f64> = column(&csv, "best_so_far").iter().map(|v| v.parse().unwrap()).collect();
    assert!(best.windows(2).all(|w| w[1] <= w[0]));
    assert!(column(&csv, "test_mse").iter().all(String::is_empty));
}

#[test]
fn aggregate_median_of_two_seeds_is_midpoint() {
    let dir = tempfile::tempdir().unwrap();
    let res = cmd_run_bo(&random_run(dir.path(), vec![0, 1])).unwrap();
    let agg = read(&res.aggregate);
    let medians: Vec<f64> = column(&agg, "median").iter().map(|v| v.parse().unwrap()).collect();
    for (k, m) in medians.iter().enumerate() {
        let a = res.traces[0].records[k].best_so_far;
        let b = res.traces[1].records[k].best_so_far;
        assert!((m - 0.5 * (a + b)).abs() < 1e-12);
    }
    assert!(column(&agg, "runs").iter().all(|r| r == "2"));
}

#[test]
fn binary_reruns_are_byte_identical() {
    let bin = env!("CARGO_BIN_EXE_llabo");
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for d in &dirs {
        let status = Command::new(bin)
            .args(["run-bo", "--strategies", "random,rbf-gp", "--n-init", "5", "--iters", "2", "--seeds", "0,1"])
            .args(["--test-size", "16", "--no-timing", "--svg", "--out"])
            .arg(d.path())
            .output()
            .unwrap();
        assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
    }
    let mut names: Vec<_> = std::fs::read_dir(dirs[0].path()).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert!(names.len() >= 8);
    for n in names {
        assert_eq!(std::fs::read(dirs[0].path().join(&n)).unwrap(), std::fs::read(dirs[1].path().join(&n)).unwrap());
    }
    let svg = read(&dirs[0].path().join("branin_aggregate.svg"));
    assert!(svg.starts_with("<?xml") && svg.contains("<svg") && svg.trim_end().ends_with("</svg>"));
}

#[test]
fn binary_rejects_bad_arguments() {
    let bin = env!("CARGO_BIN_EXE_llabo");
    let out = Command::new(bin).args(["run-bo", "--strategies", "nope"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope"));
}

#[test]
fn pathology_grid_has_requested_resolution() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = PathologyConfig {
        bounds: vec![5.0],
        epochs: 100,
        out: dir.path().to_path_buf(),
        ..PathologyConfig::default()
    };
    let rep = cmd_pathology(&cfg).unwrap();
    assert_eq!(rep.rows.len(), 1);
    let csv = read(&dir.path().join("pathology_unmitigated_B5.csv"));
    assert_eq!(csv.lines().next().unwrap(), "x,mu,s,cb,ei");
    assert_eq!(csv.lines().count(), 1002);
    let xs: Vec<f64> = column(&csv, "x").iter().map(|v| v.parse().unwrap()).collect();
    assert_eq!((xs[0], xs[1000]), (-5.0, 5.0));
    assert!(dir.path().join("pathology_summary.csv").exists());
}

fn tiny_smalldata(dir: &Path, ensemble_size: usize) -> SmallDataConfig {
    SmallDataConfig {
        source: DataSource::Synthetic(SyntheticKind::Sine1d),
        n_grid: vec![3, 8],
        methods: Method::ALL.to_vec(),
        ensemble_size,
        seeds: vec![0],
        out: dir.to_path_buf(),
        epochs: 60,
        ..SmallDataConfig::default()
    }
}

#[test]
fn single_member_mixtures_reduce_to_single_models() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_smalldata(dir.path(), 1);
    let split = make_split(&cfg, 0).unwrap();
    let pts = evaluate(&cfg, &split, 0, 8).unwrap();
    let get = |m: Method| pts.iter().find(|p| p.method == m).unwrap();
    let map = get(Method::Map);
    let ens = get(Method::Ensemble);
    assert!((ens.map_nll - map.map_nll).abs() < 1e-12);
    assert!((ens.bayes_nll.unwrap() - map.map_nll).abs() < 1e-12);
    for (single, mix) in [(Method::LaPosthoc, Method::MolaPosthoc), (Method::LaMarglik, Method::MolaMarglik)] {
        let (s, m) = (get(single), get(mix));
        assert!((s.map_nll - m.map_nll).abs() < 1e-12);
        assert!((s.bayes_nll.unwrap() - m.bayes_nll.unwrap()).abs() < 1e-12);
    }
}

#[test]
fn smalldata_writes_raw_and_aggregate_tables() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_smalldata(dir.path(), 2);
    let rep = cmd_smalldata(&cfg).unwrap();
    assert_eq!(rep.points.len(), 2 * Method::ALL.len());
    let raw = read(&rep.raw_file);
    assert_eq!(raw.lines().count(), 1 + rep.points.len());
    let agg = read(&rep.aggregate_file);
    assert_eq!(agg.lines().next().unwrap(), "method,n,map_mean,map_se,bayes_mean,bayes_se,seeds");
    let map_rows: Vec<&str> = agg.lines().filter(|l| l.starts_with("map,")).collect();
    assert_eq!(map_rows.len(), 2);
    assert!(map_rows.iter().all(|l| l.contains(",,,")), "MAP has no Bayesian column");
    assert!(rep.points.iter().all(|p| p.map_nll.is_finite()));
}

#[test]
fn smalldata_rejects_oversized_requests() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("d.csv");
    std::fs::write(&csv, "a,y\n1,1\n2,2\n3,3\n4,4\n").unwrap();
    let cfg = SmallDataConfig {
        source: DataSource::Csv {
            path: csv,
            target: "y".into(),
        },
        n_grid: vec![10],
        ..tiny_smalldata(dir.path(), 2)
    };
    let err = make_split(&cfg, 0).unwrap_err().to_string();
    assert!(err.contains("n = 10"), "{err}");
}
