//! Black-box tests of the `riskcbf` binary: exit codes, output files,
//! schema validation, and plotting.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_riskcbf"))
}

fn base_config() -> Value {
    json!({
        "plant": {"name": "pendulum", "dt": 0.01},
        "safe_set": {"family": "half_space", "q": [1.125, 1.0], "r": 0.075},
        "risk": {"epsilon": 0.3, "alpha": 0.8},
        "filter": {"rho": 500.0, "allow_slack": false, "controller": "proposed"},
        "disturbance": {"kind": "zero", "covariance": [[1e-6, 0.0], [0.0, 9e-6]], "seed": 1},
        "sim": {"x0": [0.3, 0.2], "steps": 800, "n_runs": 1}
    })
}

fn write_config(dir: &Path, value: &Value) -> PathBuf {
    let path = dir.join("config.json");
    std::fs::write(&path, serde_json::to_string_pretty(value).unwrap()).unwrap();
    path
}

fn run_cmd(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn code(output: &Output) -> i32 {
    output.status.code().unwrap()
}

fn stderr(output: &Output) -> String {
    String::from_utf8_lossy(&output.stderr).into_owned()
}

#[test]
fn run_writes_csv_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), &base_config());
    let out = dir.path().join("out");
    let output = run_cmd(&["run", "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code(&output), 0, "stderr: {}", stderr(&output));

    let csv = std::fs::read_to_string(out.join("run_000.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "t,x1,x2,u1,h1,slack,active");
    assert_eq!(lines.count(), 801);

    let summary: Value = serde_json::from_str(
        &std::fs::read_to_string(out.join("summary.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(summary["n_runs"], 1);
    let min_barrier = summary["aggregate"]["min_barrier"].as_f64().unwrap();
    assert!(min_barrier >= 4.8e-3, "min_barrier {min_barrier}");
}

#[test]
fn run_is_deterministic_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = base_config();
    cfg["disturbance"]["kind"] = json!("gaussian");
    cfg["sim"]["steps"] = json!(100);
    let config = write_config(dir.path(), &cfg);

    let mut csvs = Vec::new();
    for sub in ["a", "b"] {
        let out = dir.path().join(sub);
        let output = run_cmd(&[
            "run",
            "--config",
            config.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
            "--seed",
            "42",
        ]);
        assert_eq!(code(&output), 0, "stderr: {}", stderr(&output));
        csvs.push(std::fs::read_to_string(out.join("run_000.csv")).unwrap());
    }
    assert_eq!(csvs[0], csvs[1]);

    let out = dir.path().join("c");
    let output = run_cmd(&[
        "run",
        "--config",
        config.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--seed",
        "43",
    ]);
    assert_eq!(code(&output), 0);
    let other = std::fs::read_to_string(out.join("run_000.csv")).unwrap();
    assert_ne!(csvs[0], other);
}

#[test]
fn invalid_epsilon_exits_2_naming_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = base_config();
    cfg["risk"]["epsilon"] = json!(1.5);
    let config = write_config(dir.path(), &cfg);
    let out = dir.path().join("out");
    let output = run_cmd(&["run", "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code(&output), 2);
    assert!(stderr(&output).contains("epsilon"), "stderr: {}", stderr(&output));
}

#[test]
fn missing_config_file_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let output = run_cmd(&["run", "--config", "/nonexistent/config.json", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&output), 2);
}

#[test]
fn every_missing_required_field_exits_2_with_its_name() {
    let fields = [
        ("plant", "name"),
        ("plant", "dt"),
        ("safe_set", "family"),
        ("safe_set", "r"),
        ("risk", "epsilon"),
        ("risk", "alpha"),
        ("filter", "rho"),
        ("filter", "allow_slack"),
        ("filter", "controller"),
        ("disturbance", "kind"),
        ("disturbance", "covariance"),
        ("disturbance", "seed"),
        ("sim", "x0"),
        ("sim", "steps"),
        ("sim", "n_runs"),
    ];
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    for (section, field) in fields {
        let mut cfg = base_config();
        cfg[section].as_object_mut().unwrap().remove(field);
        let config = write_config(dir.path(), &cfg);
        let output =
            run_cmd(&["run", "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()]);
        assert_eq!(code(&output), 2, "removing {section}.{field}");
        assert!(
            stderr(&output).contains(field),
            "removing {section}.{field}: stderr {}",
            stderr(&output)
        );
    }
}

#[test]
fn infeasible_constraint_exits_3() {
    // normal orthogonal to the input map and an unsafe start: the
    // half-space filter has no feasible input at step 0
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = base_config();
    cfg["safe_set"] = json!({"family": "half_space", "q": [1.0, 0.0], "r": -0.4});
    cfg["sim"]["steps"] = json!(10);
    let config = write_config(dir.path(), &cfg);
    let out = dir.path().join("out");
    let output = run_cmd(&["run", "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code(&output), 3, "stderr: {}", stderr(&output));
}

#[test]
fn compare_reports_paired_violation_counts() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = base_config();
    cfg["safe_set"] = json!({
        "family": "polytope",
        "Q": [[1.125, 0.5], [1.0, 1.0]],
        "r": [0.075, 0.1]
    });
    cfg["disturbance"]["kind"] = json!("gaussian");
    cfg["sim"]["steps"] = json!(200);
    cfg["sim"]["n_runs"] = json!(5);
    let config = write_config(dir.path(), &cfg);
    let out = dir.path().join("out");
    let output =
        run_cmd(&["compare", "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code(&output), 0, "stderr: {}", stderr(&output));

    let summary: Value = serde_json::from_str(
        &std::fs::read_to_string(out.join("compare.json")).unwrap(),
    )
    .unwrap();
    for side in ["proposed", "standard"] {
        assert_eq!(summary[side]["violations_per_run"].as_array().unwrap().len(), 5);
    }
    let prop = summary["proposed"]["total_violation_steps"].as_u64().unwrap();
    let std_ = summary["standard"]["total_violation_steps"].as_u64().unwrap();
    assert!(std_ >= prop, "standard {std_} vs proposed {prop}");
}

#[test]
fn malformed_set_spec_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = base_config();
    cfg["safe_set"] = json!({"family": "torus", "r": 1.0});
    let config = write_config(dir.path(), &cfg);
    let out = dir.path().join("out");
    let output =
        run_cmd(&["compare", "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code(&output), 2);
}

#[test]
fn cvar_prints_value_and_certificate() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = json!({
        "loss": {"q": [1.125, 1.0], "r": 0.0},
        "moments": {"covariance": [[1e-6, 0.0], [0.0, 9e-6]]},
        "epsilon": 0.3
    });
    let config = write_config(dir.path(), &cfg);
    let output = run_cmd(&["cvar", "--config", config.to_str().unwrap()]);
    assert_eq!(code(&output), 0, "stderr: {}", stderr(&output));
    let parsed: Value = serde_json::from_slice(&output.stdout).unwrap();
    let value = parsed["value"].as_f64().unwrap();
    assert!((value - 4.894e-3).abs() < 1e-5, "value {value}");
    assert!(parsed["beta"].is_number());
    assert!(parsed["residuals"]["n_min_eigenvalue"].as_f64().unwrap() >= -1e-7);
    assert!(parsed["residuals"]["slack_min_eigenvalue"].as_f64().unwrap() >= -1e-7);
    assert!(parsed["residuals"]["objective_gap"].as_f64().unwrap() <= 1e-7);
}

#[test]
fn cvar_constant_loss_returns_r() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = json!({
        "loss": {"q": [0.0, 0.0], "r": 2.5},
        "moments": {"covariance": [[1e-6, 0.0], [0.0, 9e-6]]},
        "epsilon": 0.3
    });
    let config = write_config(dir.path(), &cfg);
    let output = run_cmd(&["cvar", "--config", config.to_str().unwrap()]);
    assert_eq!(code(&output), 0);
    let parsed: Value = serde_json::from_slice(&output.stdout).unwrap();
    let value = parsed["value"].as_f64().unwrap();
    assert!((value - 2.5).abs() < 1e-6, "value {value}");
}

#[test]
fn cvar_rejects_non_psd_covariance() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = json!({
        "loss": {"q": [1.0, 1.0], "r": 0.0},
        "moments": {"covariance": [[1.0, 2.0], [2.0, 1.0]]},
        "epsilon": 0.3
    });
    let config = write_config(dir.path(), &cfg);
    let output = run_cmd(&["cvar", "--config", config.to_str().unwrap()]);
    assert_eq!(code(&output), 2);
}

#[test]
fn plot_renders_one_polyline_per_csv() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = base_config();
    cfg["sim"]["steps"] = json!(50);
    let config = write_config(dir.path(), &cfg);

    // three labelled runs: nominal w=0, proposed, proposed w=0
    let mut csvs: Vec<PathBuf> = Vec::new();
    for (controller, kind, name) in [
        ("nominal", "zero", "nominal_w0"),
        ("proposed", "gaussian", "proposed"),
        ("proposed", "zero", "proposed_w0"),
    ] {
        let mut c = cfg.clone();
        c["filter"]["controller"] = json!(controller);
        c["disturbance"]["kind"] = json!(kind);
        let config_i = dir.path().join(format!("{name}.json"));
        std::fs::write(&config_i, serde_json::to_string(&c).unwrap()).unwrap();
        let out = dir.path().join(name);
        let output = run_cmd(&[
            "run",
            "--config",
            config_i.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(code(&output), 0, "stderr: {}", stderr(&output));
        let renamed = dir.path().join(format!("{name}.csv"));
        std::fs::rename(out.join("run_000.csv"), &renamed).unwrap();
        csvs.push(renamed);
    }

    let plot_out = dir.path().join("plots");
    let mut args = vec![
        "plot".to_string(),
        "--config".into(),
        config.to_str().unwrap().into(),
        "--out".into(),
        plot_out.to_str().unwrap().into(),
    ];
    args.extend(csvs.iter().map(|p| p.to_str().unwrap().to_string()));
    let output = bin().args(&args).output().unwrap();
    assert_eq!(code(&output), 0, "stderr: {}", stderr(&output));

    let svg = std::fs::read_to_string(plot_out.join("phase_portrait.svg")).unwrap();
    assert_eq!(svg.matches("class=\"trajectory\"").count(), 3);
    assert_eq!(svg.matches("class=\"boundary\"").count(), 1);
    assert!(svg.contains("nominal_w0"));
    assert!(svg.contains("proposed_w0"));
}

#[test]
fn plot_rejects_empty_csv() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), &base_config());
    let empty = dir.path().join("empty.csv");
    std::fs::write(&empty, "").unwrap();
    let out = dir.path().join("plots");
    let output = run_cmd(&[
        "plot",
        "--config",
        config.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        empty.to_str().unwrap(),
    ]);
    assert_eq!(code(&output), 2);
}
