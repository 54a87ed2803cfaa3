//! The `mtdlnm` binary: exit codes, artifact schemas and `summarize`.

use std::fs;
use std::path::Path;
use std::process::Command;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_mtdlnm"))
}

fn write_data(path: &Path, n: usize, effect: bool) {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let xs: Vec<f64> = (0..n)
        .map(|_| 22.0 + 5.0 * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let mut text = String::from("time,outcome,exposure,humidity\n");
    for (t, x) in xs.iter().enumerate() {
        let signal = if effect && t > 0 && *x > 26.0 { 2.0 } else { 0.0 };
        let y = signal + rng.sample::<f64, _>(StandardNormal);
        let h = rng.random_range(0.0..1.0);
        text.push_str(&format!("{t},{y},{x},{h}\n"));
    }
    fs::write(path, text).unwrap();
}

/// Rows of a schema-tagged CSV, header dropped.
fn rows(path: &Path) -> Vec<Vec<String>> {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    assert!(lines.next().unwrap().starts_with("# schema: mtdlnm."));
    lines
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

fn fit(data: &Path, out: &Path, extra: &[&str]) -> std::process::Output {
    bin()
        .args(["fit", "--data", data.to_str().unwrap(), "--out", out.to_str().unwrap()])
        .args([
            "--lags",
            "4",
            "--iterations",
            "200",
            "--burn-in",
            "100",
            "--thin",
            "2",
            "--seed",
            "3",
        ])
        .args(extra)
        .output()
        .unwrap()
}

#[test]
fn usage_errors_exit_one() {
    let out = bin().args(["fit", "--bogus"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let out = bin().output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let dir = tempfile::tempdir().unwrap();
    let out = fit(&dir.path().join("missing.csv"), &dir.path().join("o"), &[]);
    assert_eq!(out.status.code(), Some(1));

    // schema violation
    let bad = dir.path().join("bad.csv");
    fs::write(&bad, "day,y,x\n0,1,2\n").unwrap();
    let out = fit(&bad, &dir.path().join("o"), &[]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("schema"));

    // unknown config key
    let data = dir.path().join("d.csv");
    write_data(&data, 100, false);
    let cfg = dir.path().join("c.json");
    fs::write(&cfg, r#"{"num_trees": 3, "colour": "blue"}"#).unwrap();
    let out = fit(&data, &dir.path().join("o"), &["--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(bin().arg("--help").output().unwrap().status.success());
}

#[test]
fn fit_writes_all_artifacts_and_summarize_reproduces_them() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.csv");
    write_data(&data, 300, true);
    let out = dir.path().join("fit");
    let res = fit(&data, &out, &["--write-draws", "--grid-x", "10:34:2", "--chains", "2"]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));

    let surface = rows(&out.join("surface.csv"));
    assert_eq!(surface.len(), 13 * 5);
    assert_eq!(surface[0][0], "10");
    let sus = rows(&out.join("susceptibility.csv"));
    assert_eq!(sus.len(), 5);

    let diag: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("diagnostics.json")).unwrap()).unwrap();
    assert_eq!(diag["schema"], "mtdlnm.diagnostics/1");
    assert_eq!(diag["chains"].as_array().unwrap().len(), 2);
    assert_eq!(diag["retained_draws"], 100);
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["inputs"][0]["sha256"].as_str().unwrap().len(), 64);
    assert_eq!(manifest["seeds"].as_array().unwrap().len(), 2);
    assert_eq!(manifest["config"]["lag_count"], 4);
    // intercept plus the humidity column
    assert_eq!(manifest["extra"]["covariate_columns"], 2);

    // re-summarizing stored draws at the fit's own settings is exact
    let same = dir.path().join("same");
    let draws = out.join("draws");
    let ok = bin()
        .args([
            "summarize",
            "--draws",
            draws.to_str().unwrap(),
            "--out",
            same.to_str().unwrap(),
        ])
        .status()
        .unwrap();
    assert!(ok.success());
    assert_eq!(
        fs::read(same.join("surface.csv")).unwrap(),
        fs::read(out.join("surface.csv")).unwrap()
    );
    assert_eq!(
        fs::read(same.join("susceptibility.csv")).unwrap(),
        fs::read(out.join("susceptibility.csv")).unwrap()
    );

    // epsilon 0.05 widens every band by exactly 0.10
    let wide = dir.path().join("wide");
    bin()
        .args([
            "summarize",
            "--draws",
            draws.to_str().unwrap(),
            "--out",
            wide.to_str().unwrap(),
            "--epsilon",
            "0.05",
        ])
        .status()
        .unwrap();
    for (a, b) in surface.iter().zip(rows(&wide.join("surface.csv"))) {
        let w0: f64 = a[4].parse::<f64>().unwrap() - a[3].parse::<f64>().unwrap();
        let w1: f64 = b[4].parse::<f64>().unwrap() - b[3].parse::<f64>().unwrap();
        assert!((w1 - w0 - 0.10).abs() < 1e-12);
    }

    // a lower threshold declares a superset
    let lower = dir.path().join("lower");
    bin()
        .args([
            "summarize",
            "--draws",
            draws.to_str().unwrap(),
            "--out",
            lower.to_str().unwrap(),
            "--threshold",
            "0.5",
        ])
        .status()
        .unwrap();
    for (a, b) in sus.iter().zip(rows(&lower.join("susceptibility.csv"))) {
        assert_eq!(a[1], b[1]);
        assert!(a[2] == "0" || b[2] == "1");
    }

    // percent change maps each value through 100(exp(v) - 1)
    let pct = dir.path().join("pct");
    bin()
        .args([
            "summarize",
            "--draws",
            draws.to_str().unwrap(),
            "--out",
            pct.to_str().unwrap(),
            "--percent-change",
        ])
        .status()
        .unwrap();
    for (a, b) in surface.iter().zip(rows(&pct.join("surface.csv"))) {
        for k in 2..5 {
            let v: f64 = a[k].parse().unwrap();
            let p: f64 = b[k].parse().unwrap();
            assert!((p - 100.0 * v.exp_m1()).abs() < 1e-9 * (1.0 + p.abs()));
        }
    }

    let missing = bin()
        .args([
            "summarize",
            "--draws",
            dir.path().join("nope").to_str().unwrap(),
            "--out",
            pct.to_str().unwrap(),
        ])
        .status()
        .unwrap();
    assert_eq!(missing.code(), Some(1));
}

#[test]
fn negated_exposure_flips_the_surface_grid() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.csv");
    write_data(&data, 150, false);
    let out = dir.path().join("neg");
    let res = fit(&data, &out, &["--negate-exposure", "--chains", "1"]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    // the default grid spans the negated exposures
    let first: f64 = rows(&out.join("surface.csv"))[0][0].parse().unwrap();
    assert!(first < 0.0);
}

#[test]
fn simulate_reports_metrics_and_informative_priors() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sim");
    let res = bin()
        .args([
            "simulate",
            "--out",
            out.to_str().unwrap(),
            "--replicates",
            "1",
            "--n",
            "120",
        ])
        .args([
            "--iterations",
            "60",
            "--burn-in",
            "30",
            "--thin",
            "3",
            "--chains",
            "1",
            "--informative",
        ])
        .args(["--fl", "piecewise,linear"])
        .output()
        .unwrap();
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let metrics = rows(&out.join("metrics.csv"));
    let names: Vec<&str> = metrics.iter().map(|r| r[0].as_str()).collect();
    assert_eq!(
        names,
        [
            "rmse",
            "coverage",
            "ci_width",
            "precision",
            "precision_undefined",
            "median_rhat"
        ]
    );
    assert!(metrics.iter().all(|r| r.len() == 3));
    assert_eq!(rows(&out.join("replicates.csv")).len(), 2);

    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    let priors = manifest["extra"]["informative_priors"].as_array().unwrap();
    assert_eq!(priors.len(), 2);
    let means = priors[0]["gamma_prior_mean"].as_array().unwrap();
    assert_eq!(means.len(), 21);
    assert!((means[0].as_f64().unwrap() - 4.12).abs() < 0.01);
    assert!(means[10].as_f64().unwrap().abs() < 1e-9);
    let d = priors[0]["dirichlet_weights"].as_array().unwrap();
    assert_eq!(d[0].as_f64().unwrap() / d[10].as_f64().unwrap(), 10.0);
}
