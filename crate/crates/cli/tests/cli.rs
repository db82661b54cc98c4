//! End-to-end checks through the compiled binary: config validation, the
//! output tree a run writes, rerun determinism, resume equivalence, and the
//! ablation grid. Runs use a shrunken point-mass task so each episode takes
//! a fraction of a second.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_sitlmpc"))
}

fn repo_config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

/// A point-mass task small enough that a full run takes seconds.
fn tiny_toml(iterations: usize) -> String {
    format!(
        r#"
[experiment]
name = "tiny"
iterations = {iterations}
seeds = [1]

[environment]
kind = "point_mass"

[environment.point_mass]
obstacle_center = [10.0, 0.0]
obstacle_radius = 3.0
target_state = [20.0, 0.0, 0.0, 0.0]
demo_speed = 1.5
demo_accel = 0.45

[solver]
horizon = 15
samples = 48
temperature = 1.0
sigma = [0.5, 0.5]
lambda_count = 4
hull_neighbors = 16
value_draws = 12

[model]
hidden = 24
bins = 4
flow_layers = 2

[train]
lr = 1e-3
batch_size = 128
epochs = 10
refit_epochs = 4
"#
    )
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let path = dir.join("exp.toml");
    std::fs::write(&path, text).unwrap();
    path
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn read(path: &Path) -> String {
    std::fs::read_to_string(path)
        .unwrap_or_else(|e| panic!("cannot read {}: {e}", path.display()))
}

#[test]
fn shipped_configs_validate() {
    for name in ["point_mass.toml", "racing.toml"] {
        let out = bin().arg("validate").arg(repo_config(name)).output().unwrap();
        assert!(out.status.success(), "{name}: {}", stderr(&out));
        let text = String::from_utf8_lossy(&out.stdout).into_owned();
        assert!(text.contains("is valid"), "unexpected stdout: {text}");
    }
}

#[test]
fn unknown_key_is_rejected_by_name() {
    let dir = tempfile::tempdir().unwrap();
    let text = tiny_toml(1).replace("samples = 48", "samples = 48\nsamplez = 3");
    let config = write_config(dir.path(), &text);
    let out = bin().arg("validate").arg(&config).output().unwrap();
    assert!(!out.status.success());
    assert!(stderr(&out).contains("samplez"), "stderr: {}", stderr(&out));
}

#[test]
fn every_problem_is_reported_at_once() {
    let dir = tempfile::tempdir().unwrap();
    let text = tiny_toml(1)
        .replace("obstacle_radius = 3.0", "obstacle_radius = -3.0")
        .replace("seeds = [1]", "seeds = [1, 1]")
        .replace("lambda_count = 4", "lambda_count = 4\nlambda_schedule = \"bogus\"");
    let config = write_config(dir.path(), &text);
    let out = bin().arg("validate").arg(&config).output().unwrap();
    assert!(!out.status.success());
    let err = stderr(&out);
    for needle in ["obstacle_radius", "duplicates", "lambda_schedule"] {
        assert!(err.contains(needle), "missing '{needle}' in: {err}");
    }
}

#[test]
fn missing_track_file_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let text = r#"
[experiment]
name = "r"
iterations = 1
seeds = [1]

[environment]
kind = "racing"

[environment.racing]
track = "no_such_track.csv"
vehicle = "no_such_vehicle.json"
half_width = 1.8
demo_speed = 2.5

[solver]
horizon = 10
samples = 32
temperature = 1.0
sigma = [1.0, 0.1]

[model]
[train]
"#;
    let config = write_config(dir.path(), text);
    let out = bin().arg("validate").arg(&config).output().unwrap();
    assert!(!out.status.success());
    let err = stderr(&out);
    assert!(err.contains("no_such_track.csv"), "stderr: {err}");
    assert!(err.contains("no_such_vehicle.json"), "stderr: {err}");
}

#[test]
fn run_writes_the_documented_tree() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), &tiny_toml(2));
    let out_root = dir.path().join("out");
    let out = bin().arg("run").arg(&config).arg("--out").arg(&out_root).output().unwrap();
    assert!(out.status.success(), "{}", stderr(&out));

    let exp = out_root.join("tiny");
    for artifact in ["experiment.toml", "summary.json", "cost_curves.svg", "trajectories.svg"] {
        assert!(exp.join(artifact).is_file(), "missing {artifact}");
    }
    let seed = exp.join("1");
    for artifact in ["metrics.csv", "timings.csv", "records.jsonl"] {
        assert!(seed.join(artifact).is_file(), "missing {artifact}");
    }
    assert!(seed.join("checkpoint").join("run.json").is_file());

    let metrics = read(&seed.join("metrics.csv"));
    let lines: Vec<&str> = metrics.lines().collect();
    assert_eq!(lines.len(), 3, "header plus one row per learned iteration:\n{metrics}");
    assert!(lines[0].starts_with("iteration,cost,feasible,violations"));
    assert!(lines[1].starts_with("1,"));
    assert!(lines[2].starts_with("2,"));

    // records.jsonl keeps the demonstration too.
    assert_eq!(read(&seed.join("records.jsonl")).lines().count(), 3);

    let summary: serde_json::Value = serde_json::from_str(&read(&exp.join("summary.json"))).unwrap();
    assert_eq!(summary["iterations"], 2);
    assert_eq!(summary["seeds"], serde_json::json!([1]));
    assert_eq!(summary["mean_curve"].as_array().unwrap().len(), 2);
}

#[test]
fn bootstrap_only_run_is_header_only() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), &tiny_toml(0));
    let out_root = dir.path().join("out");
    let out = bin().arg("run").arg(&config).arg("--out").arg(&out_root).output().unwrap();
    assert!(out.status.success(), "{}", stderr(&out));
    let metrics = read(&out_root.join("tiny/1/metrics.csv"));
    assert_eq!(metrics.lines().count(), 1, "expected only the header:\n{metrics}");
    // The summary must still parse; the learning fields are null at L = 0.
    let summary: serde_json::Value =
        serde_json::from_str(&read(&out_root.join("tiny/summary.json"))).unwrap();
    assert!(summary["final_mean_cost"].is_null());
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), &tiny_toml(2));
    let mut outputs = Vec::new();
    for name in ["a", "b"] {
        let out_root = dir.path().join(name);
        let out = bin().arg("run").arg(&config).arg("--out").arg(&out_root).output().unwrap();
        assert!(out.status.success(), "{}", stderr(&out));
        outputs.push(read(&out_root.join("tiny/1/metrics.csv")));
    }
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn resume_reproduces_the_uninterrupted_run() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), &tiny_toml(3));

    let full_root = dir.path().join("full");
    let out = bin().arg("run").arg(&config).arg("--out").arg(&full_root).output().unwrap();
    assert!(out.status.success(), "{}", stderr(&out));

    // Same run stopped after one learned iteration, then resumed.
    let part_root = dir.path().join("part");
    let out = bin()
        .arg("run")
        .arg(&config)
        .arg("--iterations")
        .arg("1")
        .arg("--out")
        .arg(&part_root)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", stderr(&out));
    let out = bin()
        .arg("resume")
        .arg(part_root.join("tiny/1"))
        .arg("--iterations")
        .arg("3")
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", stderr(&out));

    assert_eq!(
        read(&full_root.join("tiny/1/metrics.csv")),
        read(&part_root.join("tiny/1/metrics.csv"))
    );
}

#[test]
fn ablation_writes_comparison_and_variant_trees() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), &tiny_toml(1));
    let out_root = dir.path().join("out");
    let out = bin()
        .arg("ablate")
        .arg(&config)
        .arg("--variants")
        .arg("mppi-adaptive,mppi-fixed-low")
        .arg("--out")
        .arg(&out_root)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", stderr(&out));

    let ablation = out_root.join("tiny/ablation");
    let comparison = read(&ablation.join("comparison.csv"));
    let lines: Vec<&str> = comparison.lines().collect();
    assert_eq!(lines[0], "variant,seed,bootstrap_cost,final_cost,infeasible_episodes,total_violations");
    assert_eq!(lines.len(), 3, "one row per variant x seed:\n{comparison}");
    assert!(ablation.join("comparison.svg").is_file());
    for variant in ["mppi-adaptive", "mppi-fixed-low"] {
        assert!(ablation.join(variant).join("summary.json").is_file(), "missing {variant}");
    }
}

#[test]
fn bad_variant_lists_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), &tiny_toml(1));
    let out = bin()
        .arg("ablate")
        .arg(&config)
        .arg("--variants")
        .arg("mppi-adaptive,mppi-adaptive")
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(stderr(&out).contains("listed twice"), "stderr: {}", stderr(&out));

    let out = bin()
        .arg("ablate")
        .arg(&config)
        .arg("--variants")
        .arg("mppi-bogus")
        .output()
        .unwrap();
    assert!(!out.status.success());
    let err = stderr(&out);
    assert!(err.contains("mppi-bogus") || err.contains("bogus"), "stderr: {err}");
    assert!(err.contains("mppi-fixed-high"), "should list valid names: {err}");
}
