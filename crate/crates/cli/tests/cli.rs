use std::path::Path;
use std::process::{Command, Output};

fn psr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_psr"))
        .args(args)
        .env_remove("PSR_OUT_DIR")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn files_in(dir: &Path) -> Vec<String> {
    let mut v: Vec<String> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    v.sort();
    v
}

#[test]
fn run_fig2_writes_three_files() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("fig2");
    let o = psr(&["run", "--preset", "fig2", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(files_in(&out), ["plot.gp", "summary.json", "timeseries.csv"]);
    let summary = std::fs::read_to_string(out.join("summary.json")).unwrap();
    assert!(summary.contains("\"gamma2_si\": 8000000000.0"));
    assert!(summary.contains("\"companion\""));
}

#[test]
fn repeat_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for d in [&a, &b] {
        let o = psr(&["run", "--preset", "fig3a", "--samples", "501", "--out", d.to_str().unwrap()]);
        assert_eq!(code(&o), 0);
    }
    for f in ["timeseries.csv", "summary.json", "plot.gp"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn output_directory_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_psr"))
        .args(["run", "--preset", "fig3a", "--samples", "201"])
        .env("PSR_OUT_DIR", dir.path())
        .output()
        .unwrap();
    assert_eq!(code(&o), 0);
    assert_eq!(files_in(dir.path()).len(), 3);
}

#[test]
fn validate_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "preset = \"fig2\"\n[params]\nmu1 = 2.0\n").unwrap();
    let o = psr(&["validate", bad.to_str().unwrap()]);
    assert_eq!(code(&o), 1);
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("mu1") && err.contains("line 3"), "{err}");

    let good = dir.path().join("good.toml");
    std::fs::write(&good, "preset = \"fig3a\"\n[params]\nrabi = 250.0\n").unwrap();
    assert_eq!(code(&psr(&["validate", good.to_str().unwrap()])), 0);
    assert_eq!(code(&psr(&["validate", "--preset", "fig3b"])), 0);
    assert_eq!(code(&psr(&["validate", "--preset", "fig9"])), 1);
    assert_eq!(code(&psr(&["validate", "/nonexistent/cfg.toml"])), 1);
}

#[test]
fn usage_and_capability_errors_are_config_errors() {
    assert_eq!(code(&psr(&["run", "--bogus"])), 1);
    assert_eq!(code(&psr(&[])), 1);
    assert_eq!(code(&psr(&["validate", "--preset", "fig2", "--engine", "exact"])), 1);
    assert_eq!(code(&psr(&["validate", "--preset", "fig2", "--engine", "quantum"])), 1);
    assert_eq!(code(&psr(&["validate", "--preset", "fig2", "--rtol", "-1"])), 1);
    assert_eq!(code(&psr(&["--help"])), 0);
}

#[test]
fn unwritable_output_is_runtime_failure() {
    let o = psr(&["run", "--preset", "fig3a", "--samples", "101", "--out", "/dev/null/psr"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn compare_oracle_reports_deviations() {
    let o = psr(&["compare-oracle", "--n", "3"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = String::from_utf8_lossy(&o.stdout);
    assert_eq!(text.matches("max |dp|").count(), 3, "{text}");
    assert_eq!(code(&psr(&["compare-oracle", "--n", "7"])), 1);
}

#[test]
fn list_presets_names_all() {
    let o = psr(&["list-presets"]);
    assert_eq!(code(&o), 0);
    let text = String::from_utf8_lossy(&o.stdout);
    for name in ["fig2", "fig3a", "fig3b"] {
        assert!(text.contains(name));
    }
}

#[test]
fn sweep_writes_one_bundle_per_value_in_order() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sweep");
    let o = psr(&[
        "sweep", "--preset", "fig3a", "--samples", "201", "--sweep-axis", "rabi",
        "--sweep-values", "500,250", "--out", out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(files_in(&out), ["000_rabi_250", "001_rabi_500", "sweep.csv"]);
    let index = std::fs::read_to_string(out.join("sweep.csv")).unwrap();
    assert_eq!(index.lines().count(), 3);
}

#[test]
fn sweep_with_invalid_value_runs_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sweep");
    let o = psr(&[
        "sweep", "--preset", "fig3a", "--sweep-axis", "mu0",
        "--sweep-values", "0.1,1.5", "--out", out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 1);
    assert!(!out.exists());
    assert_eq!(code(&psr(&["sweep", "--preset", "fig3a", "--sweep-axis", "kappa", "--sweep-values", "1"])), 1);
}
