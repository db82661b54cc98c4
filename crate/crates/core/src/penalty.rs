//! Adaptive penalty selection around the sampling solver. One control step
//! evaluates a shared rollout batch under several penalty weight pairs,
//! averages controls per pair, re-rolls each averaged sequence noise-free,
//! and keeps the pair whose nominal trajectory is feasible with the lowest
//! sampled cost; if no pair is feasible the one with the smallest constraint
//! violation wins. Ties break toward the lower candidate index.

use crate::mppi::{assemble_costs, cem_update, importance_weights, weighted_control_average};
use crate::rng::{self, role};
use crate::safeset::SafeSet;
use crate::sampling::{
    rollout_batch, rollout_sequence, sample_control_sequences, sample_lambda_pairs, RolloutBatch,
    RolloutEval,
};
use crate::systems::Environment;
use crate::types::ControlSequence;
use crate::valuefn::ValueModel;
use crate::{Error, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Hull membership tolerance: exact zero distance is unattainable in floating
/// point, so anything at most this counts as inside the terminal set.
pub const DEFAULT_HULL_TOL: f64 = 1e-6;

/// When the penalty weight pairs are redrawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaSchedule {
    /// One draw shared by the whole run.
    Run,
    /// Redrawn at the start of every iteration.
    Iteration,
    /// Redrawn at every control step.
    Step,
}

/// How the sampled batch is turned into one control sequence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Optimizer {
    /// Importance-sampling weighted average over all samples.
    Mppi,
    /// Elite mean, optionally refit over extra sampling rounds.
    Cem { elite_frac: f64, rounds: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum PenaltyRule {
    /// Sample weight pairs uniformly and pick per the feasibility rule.
    Adaptive,
    Fixed { lambda_x: f64, lambda_cs: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub horizon: usize,
    pub n_samples: usize,
    /// Softmax temperature of the importance weights.
    pub temperature: f64,
    /// Per-input sampling noise, length n_u.
    pub sigma: Vec<f64>,
    /// Number of penalty pairs drawn per schedule tick.
    pub n_lambda: usize,
    /// Upper edge of the uniform box both weights are drawn from.
    pub lambda_max: f64,
    pub lambda_schedule: LambdaSchedule,
    /// Neighbors forming the local hull for terminal-set distances.
    pub hull_neighbors: usize,
    /// Latent draws per terminal value estimate.
    pub value_draws: usize,
    pub hull_tol: f64,
    pub optimizer: Optimizer,
    pub penalty: PenaltyRule,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            horizon: 30,
            n_samples: 256,
            temperature: 5.0,
            sigma: Vec::new(),
            n_lambda: 8,
            lambda_max: 1e3,
            lambda_schedule: LambdaSchedule::Iteration,
            hull_neighbors: 32,
            value_draws: 32,
            hull_tol: DEFAULT_HULL_TOL,
            optimizer: Optimizer::Mppi,
            penalty: PenaltyRule::Adaptive,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self, n_u: usize) -> Result<()> {
        let mut problems = Vec::new();
        if self.horizon == 0 {
            problems.push("horizon must be at least 1".to_string());
        }
        if self.n_samples == 0 {
            problems.push("n_samples must be at least 1".to_string());
        }
        if !(self.temperature > 0.0) {
            problems.push(format!("temperature must be positive, got {}", self.temperature));
        }
        if self.sigma.len() != n_u {
            problems.push(format!(
                "sigma has {} entries for {} inputs",
                self.sigma.len(),
                n_u
            ));
        }
        if self.sigma.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
            problems.push("sigma entries must be positive and finite".to_string());
        }
        if self.n_lambda == 0 {
            problems.push("n_lambda must be at least 1".to_string());
        }
        if !(self.lambda_max > 0.0) || !self.lambda_max.is_finite() {
            problems.push(format!("lambda_max must be positive, got {}", self.lambda_max));
        }
        if self.hull_neighbors == 0 {
            problems.push("hull_neighbors must be at least 1".to_string());
        }
        if self.value_draws == 0 {
            problems.push("value_draws must be at least 1".to_string());
        }
        if !(self.hull_tol >= 0.0) {
            problems.push(format!("hull_tol must be nonnegative, got {}", self.hull_tol));
        }
        if let Optimizer::Cem { elite_frac, rounds } = self.optimizer {
            if !(elite_frac > 0.0 && elite_frac <= 1.0) {
                problems.push(format!("elite_frac must be in (0, 1], got {elite_frac}"));
            }
            if rounds == 0 {
                problems.push("cem rounds must be at least 1".to_string());
            }
        }
        if let PenaltyRule::Fixed { lambda_x, lambda_cs } = self.penalty {
            if !(lambda_x >= 0.0) || !(lambda_cs >= 0.0) {
                problems.push("fixed penalty weights must be nonnegative".to_string());
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }
}

/// One evaluated penalty pair.
#[derive(Debug, Clone)]
pub struct PenaltyCandidate {
    pub lambda: (f64, f64),
    pub control: ControlSequence,
    /// Noise-free rollout of the averaged control.
    pub nominal: RolloutEval,
    /// Sampled cost of the nominal trajectory under this pair's weights.
    pub sampled_cost: f64,
    /// Admissibility violation summed over the first `horizon` states plus
    /// the terminal hull distance.
    pub violation: f64,
    pub feasible: bool,
}

/// Result of one control step.
#[derive(Debug, Clone)]
pub struct StepSolution {
    pub control: ControlSequence,
    pub lambda: (f64, f64),
    pub sampled_cost: f64,
    pub feasible: bool,
    pub feasible_count: usize,
    /// Zero when any candidate is feasible, else the smallest violation.
    pub min_violation: f64,
}

/// Penalty pairs for a given scheduling tick. The stream key carries only
/// the coordinates the schedule varies over, so a run-scoped schedule
/// reproduces the same pairs at every step.
pub fn lambda_pairs_for(
    cfg: &SolverConfig,
    master_seed: u64,
    iteration: u64,
    step: u64,
) -> Vec<(f64, f64)> {
    let key: Vec<u64> = match cfg.lambda_schedule {
        LambdaSchedule::Run => vec![role::LAMBDA],
        LambdaSchedule::Iteration => vec![role::LAMBDA, iteration],
        LambdaSchedule::Step => vec![role::LAMBDA, iteration, step],
    };
    let mut rng = rng::stream(master_seed, &key);
    sample_lambda_pairs(&mut rng, cfg.n_lambda, cfg.lambda_max)
}

/// Everything one control step reads: the task, the solver configuration,
/// the safe set and value model from the previous iteration, and the stream
/// coordinates that make the step reproducible.
pub struct StepProblem<'a> {
    pub env: &'a dyn Environment,
    pub cfg: &'a SolverConfig,
    pub safe_set: &'a SafeSet,
    pub model: &'a ValueModel,
    /// Latent draws shared by every terminal value estimate this step.
    pub latents: Vec<f64>,
    pub x0: Vec<f64>,
    pub master_seed: u64,
    pub iteration: u64,
    pub step: u64,
}

impl StepProblem<'_> {
    pub fn solve(&self, warm: &ControlSequence) -> Result<StepSolution> {
        if self.safe_set.is_empty() {
            return Err(Error::EmptySafeSet);
        }
        let cfg = self.cfg;
        debug_assert_eq!(warm.horizon(), cfg.horizon);
        let bounds = self.env.plant().input_bounds();
        let sequences = sample_control_sequences(
            warm,
            &cfg.sigma,
            bounds,
            cfg.n_samples,
            self.master_seed,
            self.iteration,
            self.step,
            0,
        );
        let batch = rollout_batch(self.env, &self.x0, &sequences);
        let (values, hull) = self.terminal_evaluations(&batch)?;
        let lambdas = match cfg.penalty {
            PenaltyRule::Adaptive => {
                lambda_pairs_for(cfg, self.master_seed, self.iteration, self.step)
            }
            PenaltyRule::Fixed { lambda_x, lambda_cs } => vec![(lambda_x, lambda_cs)],
        };
        let candidates = self.evaluate_candidates(&sequences, &batch, &values, &hull, &lambdas)?;
        let chosen = select_candidate(&candidates);
        let feasible_count = candidates.iter().filter(|c| c.feasible).count();
        let min_violation = if feasible_count > 0 {
            0.0
        } else {
            candidates.iter().map(|c| c.violation).fold(f64::INFINITY, f64::min)
        };
        let winner = &candidates[chosen];
        Ok(StepSolution {
            control: winner.control.clone(),
            lambda: winner.lambda,
            sampled_cost: winner.sampled_cost,
            feasible: winner.feasible,
            feasible_count,
            min_violation,
        })
    }

    /// Terminal value estimates and hull distances for every sample, shared
    /// across all penalty pairs.
    pub fn terminal_evaluations(&self, batch: &RolloutBatch) -> Result<(Vec<f64>, Vec<f64>)> {
        let n_x = batch.n_x;
        let hull: Result<Vec<f64>> = batch
            .evals
            .par_iter()
            .map(|ev| {
                if ev.diverged {
                    Ok(f64::INFINITY)
                } else {
                    self.safe_set.hull_distance(ev.terminal_state(n_x), self.cfg.hull_neighbors)
                }
            })
            .collect();
        let mut flat = vec![0.0; batch.len() * n_x];
        for (i, ev) in batch.evals.iter().enumerate() {
            flat[i * n_x..(i + 1) * n_x].copy_from_slice(ev.terminal_state(n_x));
        }
        let values = self.model.value_estimate(&flat, &self.latents);
        Ok((values, hull?))
    }

    /// One candidate per pair, all reading the same batch.
    pub fn evaluate_candidates(
        &self,
        sequences: &[ControlSequence],
        batch: &RolloutBatch,
        terminal_values: &[f64],
        hull_distances: &[f64],
        lambdas: &[(f64, f64)],
    ) -> Result<Vec<PenaltyCandidate>> {
        assert!(!lambdas.is_empty());
        lambdas
            .par_iter()
            .map(|&(lambda_x, lambda_cs)| {
                let costs =
                    assemble_costs(batch, terminal_values, hull_distances, lambda_x, lambda_cs);
                let control = match self.cfg.optimizer {
                    Optimizer::Mppi => {
                        let weights = importance_weights(&costs, self.cfg.temperature)?;
                        weighted_control_average(sequences, &weights)
                    }
                    Optimizer::Cem { elite_frac, rounds } => self.refit_elites(
                        sequences,
                        &costs,
                        elite_frac,
                        rounds,
                        (lambda_x, lambda_cs),
                    )?,
                };
                self.score_control(control, (lambda_x, lambda_cs))
            })
            .collect()
    }

    /// Elite mean on the shared batch, then optional extra rounds that
    /// sample around the refit mean.
    fn refit_elites(
        &self,
        sequences: &[ControlSequence],
        costs: &[f64],
        elite_frac: f64,
        rounds: usize,
        lambda: (f64, f64),
    ) -> Result<ControlSequence> {
        let mut mean = cem_update(sequences, costs, elite_frac)?;
        let bounds = self.env.plant().input_bounds();
        for round in 1..rounds {
            let seqs = sample_control_sequences(
                &mean,
                &self.cfg.sigma,
                bounds,
                self.cfg.n_samples,
                self.master_seed,
                self.iteration,
                self.step,
                round as u64,
            );
            let batch = rollout_batch(self.env, &self.x0, &seqs);
            let (values, hull) = self.terminal_evaluations(&batch)?;
            let costs = assemble_costs(&batch, &values, &hull, lambda.0, lambda.1);
            mean = cem_update(&seqs, &costs, elite_frac)?;
        }
        Ok(mean)
    }

    /// Noise-free re-rollout of an averaged control and its bookkeeping.
    fn score_control(
        &self,
        control: ControlSequence,
        lambda: (f64, f64),
    ) -> Result<PenaltyCandidate> {
        let nominal = rollout_sequence(self.env, &self.x0, &control);
        if nominal.diverged {
            return Ok(PenaltyCandidate {
                lambda,
                control,
                nominal,
                sampled_cost: f64::INFINITY,
                violation: f64::INFINITY,
                feasible: false,
            });
        }
        let n_x = self.env.plant().n_x();
        let terminal = nominal.terminal_state(n_x);
        let hull = self.safe_set.hull_distance(terminal, self.cfg.hull_neighbors)?;
        let value = self.model.value_estimate(terminal, &self.latents)[0];
        let sampled_cost =
            nominal.stage_sum + lambda.0 * nominal.violation_sum + value + lambda.1 * hull;
        let violation = nominal.violation_sum + hull;
        let feasible = nominal.max_violation == 0.0 && hull <= self.cfg.hull_tol;
        Ok(PenaltyCandidate { lambda, control, nominal, sampled_cost, violation, feasible })
    }
}

/// Index of the winning candidate: lowest sampled cost among the feasible
/// ones, else lowest violation; ties keep the earlier index.
pub fn select_candidate(candidates: &[PenaltyCandidate]) -> usize {
    assert!(!candidates.is_empty());
    let mut best_feasible: Option<usize> = None;
    for (i, c) in candidates.iter().enumerate() {
        if c.feasible && best_feasible.map_or(true, |b| c.sampled_cost < candidates[b].sampled_cost)
        {
            best_feasible = Some(i);
        }
    }
    if let Some(i) = best_feasible {
        return i;
    }
    let mut best = 0;
    for (i, c) in candidates.iter().enumerate().skip(1) {
        if c.violation < candidates[best].violation {
            best = i;
        }
    }
    best
}
