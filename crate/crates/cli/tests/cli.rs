use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use panel_scb::bootstrap_scb::{bootstrap_band, BootstrapConfig};
use panel_scb::fe_estimator::uniform_grid;
use panel_scb::panel_data::load_csv;
use panel_scb::scb_asymptotic::asymptotic_band;
use panel_scb::sim_harness::{generate, DgpConfig};
use panel_scb::{epanechnikov, fit_on_grid};
use panel_scb_cli::output::{num, read_band_file, RunManifest};
use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_panel-scb"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// A reference-process panel written as CSV.
fn write_panel(dir: &Path, n: usize, t: usize, seed: u64) -> PathBuf {
    let (ds, _) = generate(&DgpConfig::new(n, t, 1.0, seed)).unwrap();
    let mut text = String::from("unit,time,y,z,x1,x2,x3\n");
    for k in 0..ds.n_obs() {
        let x = ds.x().row(k);
        text.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            k / t + 1,
            k % t + 1,
            num(ds.y()[k]),
            num(ds.z()[k]),
            num(x[0]),
            num(x[1]),
            num(x[2])
        ));
    }
    let path = dir.join("panel.csv");
    fs::write(&path, text).unwrap();
    path
}

#[test]
fn kernel_info_prints_constants() {
    let o = run(&["kernel-info", "--kernel", "epanechnikov"]);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    let value = |key: &str| -> f64 {
        let line = text.lines().find(|l| l.starts_with(&format!("{key} ="))).unwrap();
        line.split('=').nth(1).unwrap().trim().parse().unwrap()
    };
    assert!((value("mu2") - 0.2).abs() < 1e-10);
    assert!((value("nu0") - 0.6).abs() < 1e-10);
    assert!((value("nu2") - 3.0 / 35.0).abs() < 1e-10);
    assert!((value("int_dk_sq") - 1.5).abs() < 1e-10);

    let o = run(&["kernel-info", "--kernel", "uniform", "--h-eff", "0.1"]);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("d_n1 = undefined"));
}

#[test]
fn band_csv_is_ordered_and_round_trips() {
    let dir = TempDir::new().unwrap();
    let data = write_panel(dir.path(), 40, 4, 1);
    let out = dir.path().join("band.csv");
    let o = run(&[
        "band", "--data", data.to_str().unwrap(), "--method", "asymptotic", "--alpha", "0.05",
        "--bandwidth", "0.5", "--pilot", "1.0", "--grid", "21", "--out", out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let band = read_band_file(&out).unwrap();
    assert_eq!(band.grid.len(), 21);
    for i in 0..21 {
        assert!(band.lower[i] <= band.center[i] && band.center[i] <= band.upper[i]);
    }

    // the same band computed in-process
    let ds = load_csv(fs::File::open(&data).unwrap()).unwrap();
    let (lo, hi) = ds.interval();
    let grid = uniform_grid(lo, hi, 21);
    let fr = fit_on_grid(&ds, 0.5, &epanechnikov(), &grid).unwrap();
    let direct = asymptotic_band(&fr, &ds, &grid, 0.05, Some(1.0)).unwrap();
    assert_eq!(band, direct);

    let manifest: RunManifest = serde_json::from_slice(&fs::read(dir.path().join("band.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest.command, "band");
    assert_eq!(manifest.input_digest.as_deref().map(str::len), Some(64));
    assert!(manifest.wall_clock_secs.is_none());
    assert_eq!(manifest.flags["alpha"], serde_json::json!(0.05));
}

#[test]
fn bootstrap_band_matches_library_and_is_reproducible() {
    let dir = TempDir::new().unwrap();
    let data = write_panel(dir.path(), 30, 4, 2);
    let args = |out: &Path| {
        vec![
            "band".to_owned(), "--data".into(), data.to_str().unwrap().into(), "--method".into(), "bootstrap".into(),
            "--bandwidth".into(), "0.6".into(), "--grid".into(), "15".into(), "--boot-reps".into(), "50".into(),
            "--seed".into(), "9".into(), "--out".into(), out.to_str().unwrap().into(),
        ]
    };
    let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    assert!(bin().args(args(&a)).status().unwrap().success());
    assert!(bin().args(args(&b)).status().unwrap().success());
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    let strip = |p: &Path| fs::read_to_string(p).unwrap().replace("a.csv", "").replace("b.csv", "");
    assert_eq!(strip(&dir.path().join("a.manifest.json")), strip(&dir.path().join("b.manifest.json")));

    let ds = load_csv(fs::File::open(&data).unwrap()).unwrap();
    let (lo, hi) = ds.interval();
    let grid = uniform_grid(lo, hi, 15);
    let fr = fit_on_grid(&ds, 0.6, &epanechnikov(), &grid).unwrap();
    let direct = bootstrap_band(&ds, &fr, 0.05, &BootstrapConfig::new(50, 9, grid)).unwrap();
    assert_eq!(read_band_file(&a).unwrap(), direct.band);
}

#[test]
fn fit_writes_summary_grid_and_manifest() {
    let dir = TempDir::new().unwrap();
    let data = write_panel(dir.path(), 25, 3, 3);
    let out = dir.path().join("fit.json");
    let o = run(&["fit", "--data", data.to_str().unwrap(), "--bandwidth", "0.7", "--grid", "11", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let summary: serde_json::Value = serde_json::from_slice(&fs::read(&out).unwrap()).unwrap();
    assert_eq!(summary["beta_hat"].as_array().unwrap().len(), 3);
    let alpha: Vec<f64> =
        summary["alpha_hat"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    assert_eq!(alpha.len(), 25);
    assert!(alpha.iter().sum::<f64>().abs() < 1e-9);
    assert!(summary["sigma2_hat"].as_f64().unwrap() > 0.0);
    let grid = fs::read_to_string(dir.path().join("fit.grid.csv")).unwrap();
    assert!(grid.starts_with("z,g,g_prime\n"));
    assert_eq!(grid.lines().count(), 12);
    assert!(dir.path().join("fit.manifest.json").exists());
}

#[test]
fn fit_with_auto_bandwidth_and_cv_curve() {
    let dir = TempDir::new().unwrap();
    let data = write_panel(dir.path(), 20, 3, 4);
    let o = run(&["fit", "--data", data.to_str().unwrap(), "--grid", "5"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let summary: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();

    let out = dir.path().join("cv.csv");
    let o = run(&["cv", "--data", data.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(&out).unwrap();
    assert!(text.starts_with("h,cv\n"));
    assert_eq!(text.lines().count(), 21);
    let manifest: RunManifest = serde_json::from_slice(&fs::read(dir.path().join("cv.manifest.json")).unwrap()).unwrap();
    // fit's `auto` is the minimiser of this same default curve
    assert_eq!(manifest.flags["h_cv"], summary["h"]);

    let o = run(&["cv", "--data", data.to_str().unwrap(), "--h-min", "0.5", "--h-max", "1.5", "--h-steps", "3"]);
    assert!(o.status.success());
    let lines: Vec<String> = String::from_utf8(o.stdout).unwrap().lines().map(str::to_owned).collect();
    assert_eq!(lines.len(), 4);
    assert!(lines[1].starts_with("0.5,"));
}

#[test]
fn missing_cell_is_a_data_error() {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("holes.csv");
    fs::write(&path, "unit,time,y,z,x1\n1,1,0.5,0.1,1\n1,2,0.2,0.3,0\n2,1,0.4,0.7,1\n3,1,1.0,0.2,0\n3,2,0.1,0.9,1\n").unwrap();
    let o = run(&["fit", "--data", path.to_str().unwrap(), "--bandwidth", "0.5"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("UnbalancedPanel"), "{}", stderr(&o));

    fs::write(&path, "unit,time,y,z,x1\n1,1,abc,0.1,1\n").unwrap();
    let o = run(&["fit", "--data", path.to_str().unwrap(), "--bandwidth", "0.5"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("NonNumericField"));
}

#[test]
fn usage_errors_exit_with_two() {
    let dir = TempDir::new().unwrap();
    let data = write_panel(dir.path(), 10, 3, 5);
    let d = data.to_str().unwrap();
    for args in [
        vec!["bogus"],
        vec!["band"],
        vec!["band", "--data", d, "--method", "nonsense"],
        vec!["band", "--data", d, "--alpha", "1.5"],
        vec!["band", "--data", d, "--bandwidth", "-1"],
        vec!["band", "--data", d, "--pilot", "wide"],
        vec!["fit", "--data", d, "--kernel", "gaussian"],
        vec!["simulate", "--table", "3"],
        vec!["simulate", "--table", "1", "--reps", "1"],
    ] {
        let o = run(&args);
        assert_eq!(o.status.code(), Some(2), "{args:?}: {}", stderr(&o));
    }
    assert_eq!(run(&["--help"]).status.code(), Some(0));
}

#[test]
fn estimation_errors_exit_with_one() {
    let dir = TempDir::new().unwrap();
    let data = write_panel(dir.path(), 10, 3, 6);
    let o = run(&["band", "--data", data.to_str().unwrap(), "--bandwidth", "1e-6"]);
    assert_eq!(o.status.code(), Some(1));
    let msg = stderr(&o);
    assert!(msg.contains("EmptyWindow") || msg.contains("SingularLocalFit"), "{msg}");
    let o = run(&["band", "--data", data.to_str().unwrap(), "--method", "derivative", "--kernel", "uniform", "--bandwidth", "0.8"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("KernelCaseUnsupported"));
}

#[test]
fn simulate_is_reproducible() {
    let dir = TempDir::new().unwrap();
    let (a, b) = (dir.path().join("r1.json"), dir.path().join("r2.json"));
    for out in [&a, &b] {
        let o = run(&["simulate", "--table", "2", "--n", "15", "--T", "3", "--reps", "3", "--method", "bootstrap",
            "--boot-reps", "20", "--seed", "11", "--out", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    let report: serde_json::Value = serde_json::from_slice(&fs::read(&a).unwrap()).unwrap();
    assert_eq!(report["table"], 2);
    assert!(report.get("wall_clock_secs").is_none());
    let cov = report["coverage"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&cov));

    let o = run(&["simulate", "--table", "1", "--n", "15", "--T", "3", "--reps", "2", "--timing"]);
    assert!(o.status.success());
    let report: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(report["wall_clock_secs"].as_f64().is_some());
    assert_eq!(report["coefficients"].as_array().unwrap().len(), 3);
}
