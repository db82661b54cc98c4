//! Tabular artifacts.
//!
//! metrics.csv is the deterministic record of a run: identical config and
//! seed must reproduce it byte for byte, so wall-clock times live in a
//! separate timings.csv. Columns:
//!
//!   iteration      1-based learned-iteration index (the demonstration is 0
//!                  and appears only in summary.json)
//!   cost           realized iteration cost (time steps to target)
//!   feasible       1 when every state was admissible and the target was hit
//!   violations     number of inadmissible states visited
//!   mean_lambda_x  mean selected admissibility penalty over the episode
//!   mean_lambda_cs mean selected terminal penalty over the episode
//!
//! summary.json aggregates per-seed cost curves and the cross-seed mean so
//! plots and acceptance checks never have to re-derive them.

use serde::Serialize;
use sitlmpc_core::fsio::write_atomic;
use sitlmpc_core::IterationRecord;
use std::path::Path;

pub const METRICS_HEADER: &str =
    "iteration,cost,feasible,violations,mean_lambda_x,mean_lambda_cs";

/// Means of the selected penalty pair across an episode; zeros when the
/// episode ended before any solver step ran.
pub fn lambda_means(record: &IterationRecord) -> (f64, f64) {
    let pairs = &record.diagnostics.selected_lambda;
    if pairs.is_empty() {
        return (0.0, 0.0);
    }
    let n = pairs.len() as f64;
    let sx: f64 = pairs.iter().map(|p| p.0).sum();
    let sc: f64 = pairs.iter().map(|p| p.1).sum();
    (sx / n, sc / n)
}

pub fn metrics_row(record: &IterationRecord) -> String {
    let (lx, lcs) = lambda_means(record);
    format!(
        "{},{},{},{},{},{}",
        record.iteration,
        record.iteration_cost,
        record.feasible as u8,
        record.violation_count,
        lx,
        lcs
    )
}

/// Writes metrics.csv for the learned iterations (the demonstration record
/// is skipped).
pub fn write_metrics(path: &Path, records: &[IterationRecord]) -> anyhow::Result<()> {
    let mut text = String::from(METRICS_HEADER);
    text.push('\n');
    for record in records.iter().filter(|r| r.iteration > 0) {
        text.push_str(&metrics_row(record));
        text.push('\n');
    }
    write_atomic(path, text.as_bytes())?;
    Ok(())
}

/// Wall-clock per iteration, demonstration included. Deliberately not part
/// of metrics.csv: timing is the one column reruns cannot reproduce.
pub fn write_timings(path: &Path, records: &[IterationRecord]) -> anyhow::Result<()> {
    let mut text = String::from("iteration,wall_time_s\n");
    for record in records {
        text.push_str(&format!("{},{:.6}\n", record.iteration, record.wall_time_s));
    }
    write_atomic(path, text.as_bytes())?;
    Ok(())
}

pub fn write_records(path: &Path, records: &[IterationRecord]) -> anyhow::Result<()> {
    let mut text = String::new();
    for record in records {
        text.push_str(&serde_json::to_string(record)?);
        text.push('\n');
    }
    write_atomic(path, text.as_bytes())?;
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct SeedSummary {
    pub seed: u64,
    pub bootstrap_cost: f64,
    /// Learned-iteration costs in order (index 0 is iteration 1).
    pub costs: Vec<f64>,
    pub feasible: Vec<bool>,
    pub violations: Vec<usize>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub experiment: String,
    pub iterations: usize,
    pub seeds: Vec<u64>,
    pub per_seed: Vec<SeedSummary>,
    /// Cross-seed mean cost per learned iteration.
    pub mean_curve: Vec<f64>,
    pub mean_bootstrap_cost: f64,
    /// Mean final-iteration cost over seeds; NaN when iterations == 0.
    pub final_mean_cost: f64,
    /// 1 - final/bootstrap, the headline learning number.
    pub improvement: f64,
    /// Fraction of learned episodes that ended infeasible.
    pub infeasible_rate: f64,
    /// Total inadmissible states visited across all learned episodes.
    pub total_violations: usize,
}

pub fn summarize(experiment: &str, iterations: usize, per_seed: Vec<SeedSummary>) -> RunSummary {
    let seeds: Vec<u64> = per_seed.iter().map(|s| s.seed).collect();
    let n_seeds = per_seed.len().max(1) as f64;
    let mean_curve: Vec<f64> = (0..iterations)
        .map(|i| per_seed.iter().map(|s| s.costs[i]).sum::<f64>() / n_seeds)
        .collect();
    let mean_bootstrap_cost =
        per_seed.iter().map(|s| s.bootstrap_cost).sum::<f64>() / n_seeds;
    let final_mean_cost = mean_curve.last().copied().unwrap_or(f64::NAN);
    let improvement = if mean_bootstrap_cost > 0.0 && final_mean_cost.is_finite() {
        1.0 - final_mean_cost / mean_bootstrap_cost
    } else {
        f64::NAN
    };
    let episodes: usize = per_seed.iter().map(|s| s.feasible.len()).sum();
    let infeasible: usize =
        per_seed.iter().map(|s| s.feasible.iter().filter(|f| !**f).count()).sum();
    let infeasible_rate = if episodes > 0 { infeasible as f64 / episodes as f64 } else { 0.0 };
    let total_violations = per_seed.iter().map(|s| s.violations.iter().sum::<usize>()).sum();
    RunSummary {
        experiment: experiment.to_string(),
        iterations,
        seeds,
        per_seed,
        mean_curve,
        mean_bootstrap_cost,
        final_mean_cost,
        improvement,
        infeasible_rate,
        total_violations,
    }
}

pub fn seed_summary(seed: u64, records: &[IterationRecord]) -> SeedSummary {
    let bootstrap_cost = records.first().map(|r| r.iteration_cost).unwrap_or(f64::NAN);
    let learned: Vec<&IterationRecord> = records.iter().filter(|r| r.iteration > 0).collect();
    SeedSummary {
        seed,
        bootstrap_cost,
        costs: learned.iter().map(|r| r.iteration_cost).collect(),
        feasible: learned.iter().map(|r| r.feasible).collect(),
        violations: learned.iter().map(|r| r.violation_count).collect(),
    }
}

pub fn write_summary(path: &Path, summary: &RunSummary) -> anyhow::Result<()> {
    let json = serde_json::to_string_pretty(summary)?;
    write_atomic(path, json.as_bytes())?;
    Ok(())
}
