//! Run orchestration.
//!
//! Output layout, one directory per experiment:
//!
//!   <out>/<name>/
//!     experiment.toml         resolved copy of the config for `resume`
//!     summary.json            per-seed curves, mean curve, headline numbers
//!     cost_curves.svg
//!     trajectories.svg        final feasible episode per seed
//!     <seed>/
//!       metrics.csv           deterministic per-iteration table
//!       timings.csv           wall clock (never in metrics.csv)
//!       records.jsonl         full episode records
//!       checkpoint/           resumable run state, rewritten every iteration
//!     ablation/<variant>/...  same layout per variant, plus comparison files
//!
//! Every artifact is derivable from records.jsonl, so a resumed run rewrites
//! the tables from its restored records and lands on identical bytes.

use crate::config::{BuiltEnv, Experiment, ExperimentFile, Variant};
use crate::metrics::{self, RunSummary};
use crate::plot::{self, TrajectoryScene};
use sitlmpc_core::fsio::write_atomic;
use sitlmpc_core::runner::{RunState, Runner};
use sitlmpc_core::IterationRecord;
use std::path::{Path, PathBuf};

fn write_seed_tables(dir: &Path, records: &[IterationRecord]) -> anyhow::Result<()> {
    metrics::write_metrics(&dir.join("metrics.csv"), records)?;
    metrics::write_timings(&dir.join("timings.csv"), records)?;
    metrics::write_records(&dir.join("records.jsonl"), records)?;
    Ok(())
}

/// Runs one seed to `iterations` learned episodes, starting from `state`
/// (fresh bootstrap or restored checkpoint). The checkpoint and tables are
/// rewritten after every episode so interruption costs at most one episode.
fn advance_seed(
    runner: &Runner<'_>,
    iterations: usize,
    dir: &Path,
    state: &mut RunState,
    label: &str,
) -> anyhow::Result<()> {
    let ckpt = dir.join("checkpoint");
    while state.next_iteration() <= iterations {
        let record = runner.run_episode(state)?;
        let line = format!(
            "[{label}] iteration {}/{iterations}: cost {}, {}",
            record.iteration,
            record.iteration_cost,
            if record.feasible {
                "feasible".to_string()
            } else {
                format!("infeasible ({} violations)", record.violation_count)
            }
        );
        runner.advance(state, record)?;
        runner.checkpoint(state, &ckpt)?;
        write_seed_tables(dir, &state.records)?;
        println!("{line}");
    }
    Ok(())
}

fn bootstrap_seed(runner: &Runner<'_>, dir: &Path, label: &str) -> anyhow::Result<RunState> {
    let state = runner.bootstrap()?;
    runner.checkpoint(&state, &dir.join("checkpoint"))?;
    write_seed_tables(dir, &state.records)?;
    println!(
        "[{label}] demonstration: cost {}, {} safe-set states",
        state.records[0].iteration_cost,
        state.safe_set.len()
    );
    Ok(state)
}

/// Copies the experiment file into the output tree with data paths resolved
/// to absolute ones, so `resume` works from any directory.
pub fn write_config_copy(
    exp_dir: &Path,
    file: &ExperimentFile,
    config_dir: &Path,
) -> anyhow::Result<()> {
    let mut copy = file.clone();
    if let Some(racing) = &mut copy.environment.racing {
        racing.track = absolutize(config_dir, &racing.track);
        racing.vehicle = absolutize(config_dir, &racing.vehicle);
    }
    let text = toml::to_string_pretty(&copy)?;
    write_atomic(&exp_dir.join("experiment.toml"), text.as_bytes())?;
    Ok(())
}

fn absolutize(base: &Path, rel: &str) -> String {
    let joined = base.join(rel);
    std::fs::canonicalize(&joined)
        .unwrap_or(joined)
        .to_string_lossy()
        .into_owned()
}

fn seed_label(name: &str, seed: u64) -> String {
    format!("{name}/{seed}")
}

fn run_seeds(
    exp: &Experiment,
    variant: Option<&Variant>,
    family_dir: &Path,
    iterations: usize,
) -> anyhow::Result<RunSummary> {
    let label_base = match variant {
        Some(v) => format!("{}/{}", exp.name, v.name),
        None => exp.name.clone(),
    };
    let mut per_seed = Vec::new();
    let mut all_records: Vec<Vec<IterationRecord>> = Vec::new();
    for &seed in &exp.seeds {
        let config = exp.run_config(seed, variant);
        let runner = Runner::new(exp.env.as_dyn(), config)?;
        let dir = family_dir.join(seed.to_string());
        let label = seed_label(&label_base, seed);
        let mut state = bootstrap_seed(&runner, &dir, &label)?;
        advance_seed(&runner, iterations, &dir, &mut state, &label)?;
        per_seed.push(metrics::seed_summary(seed, &state.records));
        all_records.push(state.records);
    }
    let summary = metrics::summarize(&label_base, iterations, per_seed);
    write_family_artifacts(family_dir, exp, &summary, &all_records)?;
    Ok(summary)
}

fn write_family_artifacts(
    family_dir: &Path,
    exp: &Experiment,
    summary: &RunSummary,
    all_records: &[Vec<IterationRecord>],
) -> anyhow::Result<()> {
    metrics::write_summary(&family_dir.join("summary.json"), summary)?;
    let curves: Vec<(u64, Vec<f64>)> = summary
        .per_seed
        .iter()
        .map(|s| (s.seed, s.costs.clone()))
        .collect();
    let chart = plot::cost_curves(
        &format!("{} iteration cost", summary.experiment),
        &curves,
        &summary.mean_curve,
    );
    write_atomic(&family_dir.join("cost_curves.svg"), chart.as_bytes())?;
    let scene = build_scene(&exp.env, all_records);
    let overlay =
        plot::trajectories(&format!("{} final trajectories", summary.experiment), &scene);
    write_atomic(&family_dir.join("trajectories.svg"), overlay.as_bytes())?;
    Ok(())
}

fn state_point(env: &BuiltEnv, x: &[f64]) -> ([f64; 2], f64) {
    match env {
        BuiltEnv::PointMass(_) => ([x[0], x[1]], x[2].hypot(x[3])),
        BuiltEnv::Racing(e) => (e.track().point_at(x[0], x[1]), x[2]),
    }
}

/// Last feasible episode of each seed (falling back to the demonstration),
/// plus the task geometry.
fn build_scene(env: &BuiltEnv, all_records: &[Vec<IterationRecord>]) -> TrajectoryScene {
    let mut scene = TrajectoryScene::default();
    match env {
        BuiltEnv::PointMass(e) => {
            let (center, radius) = e.obstacle();
            scene.disks.push((center, radius));
            let t = e.config().target_state;
            scene.marker = Some([t[0], t[1]]);
        }
        BuiltEnv::Racing(e) => {
            let track = e.track();
            let hw = track.half_width();
            let total = track.total_length();
            let n = 400;
            for side in [-hw, 0.0, hw] {
                let mut line: Vec<[f64; 2]> = (0..=n)
                    .map(|i| track.point_at(total * i as f64 / n as f64, side))
                    .collect();
                if track.is_closed() {
                    let first = line[0];
                    line.push(first);
                }
                scene.outlines.push(line);
            }
        }
    }
    for records in all_records {
        let Some(record) = records.iter().rev().find(|r| r.feasible).or(records.first())
        else {
            continue;
        };
        scene.paths.push(
            record
                .trajectory
                .states
                .iter()
                .map(|x| state_point(env, x.as_slice()))
                .collect(),
        );
    }
    scene
}

/// `sitlmpc run`: every seed of the experiment, fresh from bootstrap.
pub fn run_experiment(
    exp: &Experiment,
    file: &ExperimentFile,
    config_dir: &Path,
) -> anyhow::Result<RunSummary> {
    let exp_dir = exp.out.join(&exp.name);
    std::fs::create_dir_all(&exp_dir)?;
    write_config_copy(&exp_dir, file, config_dir)?;
    let summary = run_seeds(exp, None, &exp_dir, exp.iterations)?;
    print_headline(&summary);
    Ok(summary)
}

/// `sitlmpc ablate`: the requested variants over the same seed list. Seeds
/// are shared across variants so the comparison is paired.
pub fn run_ablation(
    exp: &Experiment,
    file: &ExperimentFile,
    config_dir: &Path,
    variants: &[Variant],
) -> anyhow::Result<Vec<RunSummary>> {
    let exp_dir = exp.out.join(&exp.name);
    let abl_dir = exp_dir.join("ablation");
    std::fs::create_dir_all(&abl_dir)?;
    write_config_copy(&exp_dir, file, config_dir)?;
    let mut summaries = Vec::new();
    for variant in variants {
        let family_dir = abl_dir.join(&variant.name);
        let summary = run_seeds(exp, Some(variant), &family_dir, exp.iterations)?;
        print_headline(&summary);
        summaries.push(summary);
    }
    let mut table = String::from(
        "variant,seed,bootstrap_cost,final_cost,infeasible_episodes,total_violations\n",
    );
    for (variant, summary) in variants.iter().zip(&summaries) {
        for s in &summary.per_seed {
            table.push_str(&format!(
                "{},{},{},{},{},{}\n",
                variant.name,
                s.seed,
                s.bootstrap_cost,
                s.costs.last().copied().unwrap_or(f64::NAN),
                s.feasible.iter().filter(|f| !**f).count(),
                s.violations.iter().sum::<usize>()
            ));
        }
    }
    write_atomic(&abl_dir.join("comparison.csv"), table.as_bytes())?;
    let series: Vec<(String, Vec<f64>)> = variants
        .iter()
        .zip(&summaries)
        .map(|(v, s)| (v.name.clone(), s.mean_curve.clone()))
        .collect();
    let chart = plot::labeled_curves(
        &format!("{} ablation mean cost", exp.name),
        "mean iteration cost",
        &series,
    );
    write_atomic(&abl_dir.join("comparison.svg"), chart.as_bytes())?;
    Ok(summaries)
}

fn print_headline(summary: &RunSummary) {
    if summary.iterations == 0 {
        println!(
            "[{}] bootstrap only: mean demonstration cost {}",
            summary.experiment, summary.mean_bootstrap_cost
        );
        return;
    }
    println!(
        "[{}] mean cost {} -> {} ({:+.1}%), infeasible rate {:.3}, {} violations",
        summary.experiment,
        summary.mean_bootstrap_cost,
        summary.final_mean_cost,
        -100.0 * summary.improvement,
        summary.infeasible_rate,
        summary.total_violations
    );
}

/// Where a resume starts from: the seed directory, its checkpoint, the
/// family directory holding sibling seeds, and the experiment root with the
/// config copy.
struct ResumeSite {
    seed_dir: PathBuf,
    family_dir: PathBuf,
    exp_dir: PathBuf,
}

fn locate_resume(path: &Path) -> anyhow::Result<ResumeSite> {
    let seed_dir = if path.join("checkpoint").join("run.json").is_file() {
        path.to_path_buf()
    } else if path.join("run.json").is_file() && path.ends_with("checkpoint") {
        path.parent().unwrap().to_path_buf()
    } else {
        anyhow::bail!(
            "{} is not a seed directory (no checkpoint/run.json found)",
            path.display()
        );
    };
    let family_dir = seed_dir
        .parent()
        .ok_or_else(|| anyhow::anyhow!("seed directory has no parent"))?
        .to_path_buf();
    // Plain runs keep experiment.toml right above the seed; ablation seeds
    // sit two levels deeper (ablation/<variant>/<seed>).
    let mut exp_dir = family_dir.clone();
    for _ in 0..3 {
        if exp_dir.join("experiment.toml").is_file() {
            return Ok(ResumeSite { seed_dir, family_dir, exp_dir });
        }
        match exp_dir.parent() {
            Some(p) => exp_dir = p.to_path_buf(),
            None => break,
        }
    }
    anyhow::bail!(
        "no experiment.toml found above {}; was this run produced by `sitlmpc run`?",
        seed_dir.display()
    )
}

/// `sitlmpc resume`: restore the checkpoint under `path` and finish its
/// remaining iterations. The master seed and variant come from the
/// checkpoint itself, so only the directory is needed.
pub fn resume_run(path: &Path, iterations_override: Option<usize>) -> anyhow::Result<()> {
    let site = locate_resume(path)?;
    let config_path = site.exp_dir.join("experiment.toml");
    let file = ExperimentFile::load(&config_path)?;
    let exp = match file.prepare(&site.exp_dir) {
        Ok(exp) => exp,
        Err(problems) => {
            anyhow::bail!("{} is not valid:\n  {}", config_path.display(), problems.join("\n  "))
        }
    };
    let ckpt = site.seed_dir.join("checkpoint");
    let run_json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(ckpt.join("run.json"))?)?;
    let seed = run_json["config"]["master_seed"]
        .as_u64()
        .ok_or_else(|| anyhow::anyhow!("run.json has no config.master_seed"))?;

    // The checkpoint embeds its run configuration; find which variant (or
    // the plain run) reproduces it. Runner::resume rejects any mismatch.
    let mut candidates: Vec<Option<Variant>> = vec![None];
    for name in variant_names() {
        if let Ok(v) = Variant::parse(name, &file.solver) {
            candidates.push(Some(v));
        }
    }
    let mut restored = None;
    let mut last_err = None;
    for candidate in candidates {
        let config = exp.run_config(seed, candidate.as_ref());
        let runner = Runner::new(exp.env.as_dyn(), config)?;
        match runner.resume(&ckpt) {
            Ok(state) => {
                restored = Some((runner, state, candidate));
                break;
            }
            Err(e) => last_err = Some(e),
        }
    }
    let Some((runner, mut state, variant)) = restored else {
        anyhow::bail!(
            "checkpoint {} does not match the experiment file: {}",
            ckpt.display(),
            last_err.map(|e| e.to_string()).unwrap_or_else(|| "no candidates".into())
        );
    };

    let iterations = iterations_override.unwrap_or(exp.iterations);
    let label_base = match &variant {
        Some(v) => format!("{}/{}", exp.name, v.name),
        None => exp.name.clone(),
    };
    let done = state.records.len().saturating_sub(1);
    println!(
        "[{}] resuming seed {seed} at iteration {} of {iterations}",
        label_base,
        done + 1
    );
    advance_seed(&runner, iterations, &site.seed_dir, &mut state, &seed_label(&label_base, seed))?;
    write_seed_tables(&site.seed_dir, &state.records)?;

    // With every sibling seed finished the family summary can be rebuilt.
    let mut per_seed = Vec::new();
    let mut all_records = Vec::new();
    for &s in &exp.seeds {
        let path = site.family_dir.join(s.to_string()).join("records.jsonl");
        let Ok(text) = std::fs::read_to_string(&path) else {
            println!("seed {s} has no records yet; family summary not rebuilt");
            return Ok(());
        };
        let mut records = Vec::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            records.push(serde_json::from_str::<IterationRecord>(line)?);
        }
        if records.len() != iterations + 1 {
            println!("seed {s} is incomplete; family summary not rebuilt");
            return Ok(());
        }
        per_seed.push(metrics::seed_summary(s, &records));
        all_records.push(records);
    }
    let summary = metrics::summarize(&label_base, iterations, per_seed);
    write_family_artifacts(&site.family_dir, &exp, &summary, &all_records)?;
    print_headline(&summary);
    Ok(())
}

pub fn variant_names() -> [&'static str; 6] {
    [
        "mppi-adaptive",
        "mppi-fixed-high",
        "mppi-fixed-low",
        "cem-adaptive",
        "cem-fixed-high",
        "cem-fixed-low",
    ]
}
