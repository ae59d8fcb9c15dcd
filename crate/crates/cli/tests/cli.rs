use std::path::Path;
use std::process::{Command, Output};

use ordcop_core::combine::{fit_system, SystemConfig};
use ordcop_core::data::{self, kendall_matrix, PanelSchema};
use ordcop_core::simulate::{simulate_system, ScenarioConfig};
use ordcop_core::{Coding, CopulaFamily, FitOptions, StatePanel};

fn ordcop(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ordcop"))
        .args(args)
        .env("ORDCOP_THREADS", "1")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = ordcop(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn fixture(dir: &Path, t_len: usize) -> (String, StatePanel) {
    let sc = ScenarioConfig::bivariate_gumbel(t_len);
    let panel = simulate_system(&sc, &mut sc.rng(11)).unwrap();
    let path = dir.join("states.csv");
    data::save_panel(&panel.to_panel(), &path).unwrap();
    (path.to_str().unwrap().to_owned(), panel)
}

fn read_rows(path: &Path) -> Vec<csv::StringRecord> {
    csv::Reader::from_path(path).unwrap().records().map(Result::unwrap).collect()
}

#[test]
fn fit_table_matches_the_library_fit() {
    let dir = tempfile::tempdir().unwrap();
    let (input, panel) = fixture(dir.path(), 300);
    let out = dir.path().join("fit");
    ok(&["fit", "-i", &input, "-o", out.to_str().unwrap(), "--family", "gumbel"]);
    let lib = fit_system(&panel, &SystemConfig::new(1, Coding::Indicator, CopulaFamily::Gumbel), &FitOptions::default())
        .unwrap();
    let rows = read_rows(&out.join("params.csv"));
    let table = lib.param_table();
    assert_eq!(rows.len(), table.len());
    for (row, rec) in rows.iter().zip(&table) {
        assert_eq!(&row[0], rec.name);
        assert_eq!(row[2].parse::<f64>().unwrap(), rec.estimate);
    }
    for name in ["marginal_table.csv", "copula_table.csv", "pairs.csv", "meta.json"] {
        assert!(out.join(name).exists(), "{name} missing");
    }
    let meta: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("meta.json")).unwrap()).unwrap();
    assert_eq!(meta["command"], "fit");
    assert_eq!(meta["config_hash"].as_str().unwrap().len(), 64);
}

#[test]
fn forecast_is_reproducible_for_a_seed() {
    let dir = tempfile::tempdir().unwrap();
    let (input, _) = fixture(dir.path(), 200);
    let run = |name: &str, seed: &str| {
        let out = dir.path().join(name);
        let o = out.to_str().unwrap();
        ok(&["forecast", "-i", &input, "-o", o, "--h", "3", "--paths", "2000", "--method", "A", "--seed", seed]);
        (std::fs::read(out.join("frequencies.csv")).unwrap(), std::fs::read(out.join("point.csv")).unwrap())
    };
    let a = run("a", "5");
    let b = run("b", "5");
    assert_eq!(a, b);
    assert_ne!(a.0, run("c", "6").0);
    let rows = read_rows(&dir.path().join("a/frequencies.csv"));
    assert_eq!(rows.len(), 3 * 2 * 3);
}

#[test]
fn forecast_reports_hit_rates_against_truth() {
    let dir = tempfile::tempdir().unwrap();
    let (input, panel) = fixture(dir.path(), 200);
    let truth = dir.path().join("truth.csv");
    data::save_panel(&panel.slice(0..2).to_panel(), &truth).unwrap();
    let out = dir.path().join("f");
    ok(&[
        "forecast",
        "-i",
        &input,
        "-o",
        out.to_str().unwrap(),
        "--h",
        "2",
        "--paths",
        "500",
        "--truth",
        truth.to_str().unwrap(),
    ]);
    let rows = read_rows(&out.join("hit_rate.csv"));
    assert_eq!(rows.len(), 3);
    assert_eq!(&rows[2][0], "all");
    let rate: f64 = rows[2][3].parse().unwrap();
    assert!((0.0..=1.0).contains(&rate));
}

#[test]
fn screen_reproduces_the_tau_matrix() {
    let dir = tempfile::tempdir().unwrap();
    let (input, panel) = fixture(dir.path(), 250);
    let out = dir.path().join("screen");
    ok(&["screen", "-i", &input, "-o", out.to_str().unwrap(), "--lag", "2"]);
    for lag in 0..=2 {
        let rows = read_rows(&out.join(format!("tau_lag{lag}.csv")));
        let tau = kendall_matrix(&panel, lag).unwrap();
        for (row, want) in rows.iter().zip(&tau) {
            for (cell, w) in row.iter().skip(1).zip(want) {
                assert_eq!(cell.parse::<f64>().unwrap(), w.unwrap());
            }
        }
    }
}

#[test]
fn discretize_then_screen_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let raw = dir.path().join("raw.csv");
    let mut text = String::from("quarter,a,b\n");
    for t in 0..40 {
        text.push_str(&format!("q{t},{},{}\n", (t as f64 * 0.7).sin(), (t as f64 * 0.3).cos()));
    }
    std::fs::write(&raw, text).unwrap();
    let out = dir.path().join("d");
    ok(&["discretize", "-i", raw.to_str().unwrap(), "-o", out.to_str().unwrap(), "--states", "3"]);
    let states = data::load_panel(out.join("states.csv"), &PanelSchema::default()).unwrap();
    assert_eq!(states.time_labels[0], "q0");
    assert!(states.values.iter().flatten().all(|v| [1.0, 2.0, 3.0].contains(v)));
    assert_eq!(read_rows(&out.join("breakpoints.csv")).len(), 2);
    ok(&["screen", "-i", out.join("states.csv").to_str().unwrap(), "-o", out.to_str().unwrap()]);
}

#[test]
fn config_values_apply_unless_a_flag_overrides_them() {
    let dir = tempfile::tempdir().unwrap();
    let (input, _) = fixture(dir.path(), 200);
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "[model]\nfamily = \"frank\"\n").unwrap();
    let family = |extra: &[&str], name: &str| {
        let out = dir.path().join(name);
        let mut args = vec!["--config", cfg.to_str().unwrap(), "fit", "-i", &input, "-o", out.to_str().unwrap()];
        args.extend_from_slice(extra);
        ok(&args);
        read_rows(&out.join("pairs.csv"))[0][2].to_owned()
    };
    assert_eq!(family(&[], "file"), "frank");
    assert_eq!(family(&["--family", "gaussian"], "flag"), "gaussian");
}

#[test]
fn simulate_preset_writes_a_study() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sim");
    ok(&[
        "simulate",
        "--preset",
        "bivariate-gumbel",
        "--t-len",
        "150",
        "--replications",
        "3",
        "--seed",
        "2",
        "-o",
        out.to_str().unwrap(),
    ]);
    let panel = data::load_panel(out.join("panel.csv"), &PanelSchema::default()).unwrap();
    assert_eq!(panel.len(), 150);
    assert_eq!(read_rows(&out.join("replications.csv")).len(), 3);
    assert_eq!(read_rows(&out.join("summary.csv")).len(), 13);
}

#[test]
fn failures_exit_nonzero_with_one_line() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.csv");
    for args in [
        vec!["fit", "-i", missing.to_str().unwrap(), "-o", dir.path().to_str().unwrap()],
        vec!["fit", "--bogus"],
        vec!["simulate", "--preset", "unknown", "-o", dir.path().to_str().unwrap()],
    ] {
        let out = ordcop(&args);
        assert!(!out.status.success(), "{args:?} succeeded");
        let err = String::from_utf8(out.stderr).unwrap();
        assert_eq!(err.trim_end().lines().count(), 1, "{args:?}: {err}");
    }
}
