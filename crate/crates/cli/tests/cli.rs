use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::{Duration, Instant};

fn manifest_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

fn frontdoor(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_frontdoor")).args(args).output().expect("binary runs")
}

fn code(output: &Output) -> i32 {
    output.status.code().expect("exit code")
}

fn stderr(output: &Output) -> String {
    String::from_utf8_lossy(&output.stderr).into_owned()
}

fn path_arg(path: &Path) -> &str {
    path.to_str().expect("utf-8 path")
}

/// Binary A, continuous M, binary Y, one covariate.
fn write_continuous_mediator_csv(dir: &Path) -> PathBuf {
    let path = dir.join("continuous_m.csv");
    let mut text = String::from("L1,A,M,Y\n");
    for i in 0..60 {
        let l1 = i % 2;
        let a = (i / 2) % 2;
        let m = 0.3 * f64::from(i % 7) + f64::from(a);
        let y = (i / 3) % 2;
        text.push_str(&format!("{l1},{a},{m},{y}\n"));
    }
    std::fs::write(&path, text).unwrap();
    path
}

#[test]
fn golden_estimate_on_synthetic_cohort() {
    let dir = tempfile::tempdir().unwrap();
    let config = manifest_dir().join("configs/nhanes_synthetic.toml");
    let output = frontdoor(&["estimate", "--config", path_arg(&config), "--bootstrap", "5", "--out", path_arg(dir.path())]);
    assert_eq!(code(&output), 0, "{}", stderr(&output));
    let report = std::fs::read_to_string(dir.path().join("report.json")).unwrap();
    let golden = manifest_dir().join("tests/golden/nhanes_synthetic_report.json");
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        std::fs::write(&golden, &report).unwrap();
    }
    let expected = std::fs::read_to_string(&golden).expect("golden file; regenerate with UPDATE_GOLDEN=1");
    assert!(report == expected, "report.json differs from {}", golden.display());
}

#[test]
fn estimate_exit_codes() {
    let dir = tempfile::tempdir().unwrap();

    let unknown_key = dir.path().join("unknown.toml");
    std::fs::write(&unknown_key, "estimators = [\"wice\"]\nreplicates = 3\n").unwrap();
    let output = frontdoor(&["estimate", "--config", path_arg(&unknown_key)]);
    assert_eq!(code(&output), 2, "{}", stderr(&output));
    assert!(stderr(&output).contains("replicates"));

    let output = frontdoor(&["estimate", "--data", "/nonexistent/d.csv", "--treated", "1", "--control", "0", "--estimator", "ice", "--b0", "M", "--hdagger", "1"]);
    assert_eq!(code(&output), 3, "{}", stderr(&output));

    let output = frontdoor(&["estimate", "--data", "/nonexistent/d.csv", "--treated", "1", "--control", "0", "--estimator", "wice", "--b0", "M"]);
    assert_eq!(code(&output), 2, "{}", stderr(&output));

    let data = write_continuous_mediator_csv(dir.path());
    let output = frontdoor(&[
        "estimate", "--data", path_arg(&data), "--treated", "1", "--control", "0", "--estimator", "aipw", "--kappa", "L1", "--gamma", "A + L1", "--b0", "M + L1",
    ]);
    assert_eq!(code(&output), 4, "{}", stderr(&output));
    assert!(stderr(&output).contains("aipw"), "{}", stderr(&output));
}

#[test]
fn estimate_report_goes_to_stdout_without_out() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_continuous_mediator_csv(dir.path());
    let output = frontdoor(&[
        "estimate", "--data", path_arg(&data), "--treated", "1", "--control", "0", "--estimator", "ice", "--family", "binomial-logit", "--b0", "M + L1", "--hdagger", "L1",
    ]);
    assert_eq!(code(&output), 0, "{}", stderr(&output));
    let report: serde_json::Value = serde_json::from_slice(&output.stdout).unwrap();
    let result = &report["results"][0];
    assert_eq!(result["estimator"], "ice");
    assert_eq!(result["within_bounds"], true);
    assert_eq!(report["config"]["data"]["covariates"], serde_json::json!(["L1"]));
}

#[test]
fn simulate_rejects_invalid_scenario_id() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("study.toml");
    std::fs::write(
        &config,
        r#"
name = "bad"
model = { preset = "binary" }
sample_sizes = [100]
replications = 1
seed = 1

[[scenario]]
id = 7
estimators = ["ice"]
[scenario.models]
b0 = "M + L1"
hdagger = "L1"
"#,
    )
    .unwrap();
    let output = frontdoor(&["simulate", "--config", path_arg(&config)]);
    assert_eq!(code(&output), 2, "{}", stderr(&output));
    assert!(stderr(&output).contains("scenario id 7"));
}

#[test]
fn simulate_single_replication_smoke() {
    let dir = tempfile::tempdir().unwrap();
    let start = Instant::now();
    let output = frontdoor(&["simulate", "--preset", "continuous-study", "--replications", "1", "--sample-sizes", "500", "--out", path_arg(dir.path())]);
    let elapsed = start.elapsed();
    assert_eq!(code(&output), 0, "{}", stderr(&output));
    assert!(elapsed < Duration::from_secs(5), "took {elapsed:?}");
    let metrics = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    // header plus one row per (scenario, estimator) cell
    assert_eq!(metrics.lines().count(), 1 + 4 + 3 + 4 + 4);
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(report["config"]["replications"], 1);
    assert_eq!(report["provenance"]["command"], "simulate");
}

#[test]
fn oracle_exit_codes() {
    let output = frontdoor(&["oracle", "--preset", "binary"]);
    assert_eq!(code(&output), 0, "{}", stderr(&output));
    let report: serde_json::Value = serde_json::from_slice(&output.stdout).unwrap();
    assert_eq!(report["result"]["method"], "exact");
    assert!(report["result"]["gap"].as_f64().unwrap() <= 1e-12);

    let output = frontdoor(&["oracle", "--preset", "confounded-mediator"]);
    assert_eq!(code(&output), 1);
    let report: serde_json::Value = serde_json::from_slice(&output.stdout).unwrap();
    assert!(report["result"]["gap"].as_f64().unwrap() > 1e-3);

    let output = frontdoor(&["oracle", "--preset", "continuous", "--draws", "20000", "--seed", "3"]);
    assert_eq!(code(&output), 0, "{}", stderr(&output));
    let report: serde_json::Value = serde_json::from_slice(&output.stdout).unwrap();
    assert_eq!(report["result"]["method"], "monte-carlo");

    let output = frontdoor(&["oracle", "--preset", "no-such-model"]);
    assert_eq!(code(&output), 2);
}

fn read_all(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect();
    files.sort();
    files
}

#[test]
fn outputs_do_not_depend_on_worker_count() {
    let data_dir = tempfile::tempdir().unwrap();
    let data = write_continuous_mediator_csv(data_dir.path());
    let runs: Vec<_> = ["1", "4"]
        .iter()
        .map(|workers| {
            let sim = tempfile::tempdir().unwrap();
            let output = frontdoor(&["simulate", "--preset", "continuous-study", "--replications", "4", "--sample-sizes", "250", "--workers", workers, "--out", path_arg(sim.path())]);
            assert_eq!(code(&output), 0, "{}", stderr(&output));
            let est = tempfile::tempdir().unwrap();
            let output = frontdoor(&[
                "estimate", "--data", path_arg(&data), "--treated", "1", "--control", "0", "--estimator", "ice", "--b0", "M + L1", "--hdagger", "L1", "--bootstrap", "30",
                "--contrast", "observed-minus-psi", "--workers", workers, "--out", path_arg(est.path()),
            ]);
            assert_eq!(code(&output), 0, "{}", stderr(&output));
            (read_all(sim.path()), read_all(est.path()))
        })
        .collect();
    assert!(runs[0] == runs[1]);
}
