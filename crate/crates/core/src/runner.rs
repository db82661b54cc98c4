//! Episode loop and learning schedule: bootstrap from a scripted
//! demonstration, run closed-loop episodes against the solver, grow the safe
//! set on feasible episodes, refit the value model, and persist enough to
//! resume a run bit-exactly.

use crate::penalty::{SolverConfig, StepProblem};
use crate::rng::{self, role};
use crate::safeset::{HullMetric, SafeSet};
use crate::systems::Environment;
use crate::types::{ControlSequence, EpisodeDiagnostics, IterationRecord, StateVector, Trajectory};
use crate::valuefn::{self, ModelConfig, TrainConfig, TrainStats, ValueModel};
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::path::Path;
use std::time::Instant;

/// Fraction of each coordinate's characteristic magnitude used to floor the
/// hull metric's standard deviations.
const SCALE_FLOOR_FRAC: f64 = 0.1;

const RUN_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub master_seed: u64,
    pub solver: SolverConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// Epochs for refits after the first fit; the warm-started model only
    /// needs a short continuation per iteration.
    pub refit_epochs: usize,
    /// Episode step cap as a multiple of the demonstration length.
    pub step_cap_factor: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            master_seed: 0,
            solver: SolverConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            refit_epochs: 20,
            step_cap_factor: 4.0,
        }
    }
}

impl RunConfig {
    pub fn validate(&self, n_u: usize) -> Result<()> {
        let mut problems = Vec::new();
        if let Err(Error::Config(msg)) = self.solver.validate(n_u) {
            problems.push(msg);
        }
        if self.model.bins < 2 {
            problems.push("model bins must be at least 2".into());
        }
        if self.model.flow_layers == 0 {
            problems.push("model flow_layers must be at least 1".into());
        }
        if self.model.hidden == 0 {
            problems.push("model hidden width must be at least 1".into());
        }
        if !(self.model.bound > 0.0) {
            problems.push(format!("model bound must be positive, got {}", self.model.bound));
        }
        if !(self.model.min_bin > 0.0)
            || self.model.min_bin * self.model.bins as f64 >= 1.0
        {
            problems.push(format!(
                "model min_bin must be in (0, 1/bins), got {}",
                self.model.min_bin
            ));
        }
        if self.train.epochs == 0 || self.refit_epochs == 0 {
            problems.push("train epochs and refit_epochs must be at least 1".into());
        }
        if !(self.train.lr > 0.0) || !self.train.lr.is_finite() {
            problems.push(format!("learning rate must be positive, got {}", self.train.lr));
        }
        if self.train.batch_size == 0 || self.train.grad_chunk == 0 {
            problems.push("batch_size and grad_chunk must be at least 1".into());
        }
        if !(self.step_cap_factor >= 1.0) {
            problems.push(format!(
                "step_cap_factor must be at least 1, got {}",
                self.step_cap_factor
            ));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }
}

/// Everything a run carries between iterations.
pub struct RunState {
    pub safe_set: SafeSet,
    pub model: ValueModel,
    pub records: Vec<IterationRecord>,
}

impl RunState {
    /// Index of the next iteration to execute (the demonstration is 0).
    pub fn next_iteration(&self) -> usize {
        self.records.len()
    }
}

/// What an iteration advance did to the model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ModelUpdate {
    Trained(TrainStats),
    /// Dataset unchanged (infeasible episode), nothing to refit.
    SkippedUnchanged,
    /// Training diverged; the previous model is kept.
    KeptPrevious,
}

#[derive(Debug, Serialize, Deserialize)]
struct RunFile {
    version: u32,
    environment: String,
    next_iteration: usize,
    config: RunConfig,
}

pub struct Runner<'a> {
    env: &'a dyn Environment,
    config: RunConfig,
}

impl<'a> Runner<'a> {
    pub fn new(env: &'a dyn Environment, config: RunConfig) -> Result<Self> {
        config.validate(env.plant().n_u())?;
        Ok(Self { env, config })
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn env(&self) -> &dyn Environment {
        self.env
    }

    /// Episode step cap: a multiple of the demonstration length, but always
    /// strictly longer than the planning horizon.
    pub fn step_cap(&self, state: &RunState) -> usize {
        let demo_steps = state.records[0].trajectory.len_steps();
        let cap = (self.config.step_cap_factor * demo_steps as f64).ceil() as usize;
        cap.max(self.config.solver.horizon + 1)
    }

    /// Runs the scripted demonstration, seeds the safe set with it, and fits
    /// the initial value model on its costs-to-go.
    pub fn bootstrap(&self) -> Result<RunState> {
        let env = self.env;
        let record = self.demonstration_episode()?;
        if !record.feasible {
            let reason = if record.violation_count > 0 {
                "demonstration left the admissible set"
            } else {
                "demonstration did not reach the target within its step cap"
            };
            return Err(Error::BootstrapFailed(reason.into()));
        }
        let n_x = env.plant().n_x();
        let floors: Vec<f64> =
            env.state_scales().iter().map(|s| s * SCALE_FLOOR_FRAC).collect();
        let mut safe_set = SafeSet::new(n_x, HullMetric::normalized(floors));
        safe_set.insert_record(
            &record,
            |x, u| env.stage_cost(x, u),
            |x| env.in_target(x),
        )?;
        let mut model = ValueModel::new(n_x, self.config.model.clone(), self.config.master_seed);
        let (states, costs) = dataset_arrays(&safe_set);
        model.train(&states, &costs, &self.config.train, self.config.master_seed, 0)?;
        Ok(RunState { safe_set, model, records: vec![record] })
    }

    fn demonstration_episode(&self) -> Result<IterationRecord> {
        let env = self.env;
        let plant = env.plant();
        let n_x = plant.n_x();
        let cap = env.demonstration_step_cap();
        let started = Instant::now();
        let mut x = env.initial_state().into_vec();
        let mut states = vec![StateVector::from_checked(x.clone())];
        let mut inputs = Vec::new();
        let mut violated = false;
        let mut reached = false;
        for step in 0..cap {
            if env.admissible_distance(&x) > 0.0 {
                violated = true;
                break;
            }
            if env.in_target(&x) {
                reached = true;
                break;
            }
            let obs = self.observe(&x, 0, step as u64);
            let u = env.demonstration_control(&obs, step);
            let w = self.control_noise(0, step as u64);
            let mut next = vec![0.0; n_x];
            plant.sim_step(&x, u.as_slice(), &w, &mut next)?;
            x = next;
            inputs.push(u);
            states.push(StateVector::from_checked(x.clone()));
        }
        if !violated && !reached {
            // The cap loop can exit right as the state enters the target.
            if env.admissible_distance(&x) > 0.0 {
                violated = true;
            } else {
                reached = env.in_target(&x);
            }
        }
        self.finish_record(0, states, inputs, violated, reached, started, Default::default())
    }

    /// One closed-loop episode under the current safe set and model. Solver
    /// and dynamics errors terminate the episode as infeasible rather than
    /// failing the run.
    pub fn run_episode(&self, state: &RunState) -> Result<IterationRecord> {
        let env = self.env;
        let plant = env.plant();
        let n_x = plant.n_x();
        let n_u = plant.n_u();
        let iteration = state.next_iteration();
        let cap = self.step_cap(state);
        let started = Instant::now();

        let mut x = env.initial_state().into_vec();
        let mut states = vec![StateVector::from_checked(x.clone())];
        let mut inputs = Vec::new();
        let mut warm = ControlSequence::zeros(self.config.solver.horizon, n_u);
        let mut diagnostics = EpisodeDiagnostics::default();
        let mut violated = false;
        let mut reached = false;
        for step in 0..cap {
            if env.admissible_distance(&x) > 0.0 {
                violated = true;
                break;
            }
            if env.in_target(&x) {
                reached = true;
                break;
            }
            let obs = self.observe(&x, iteration as u64, step as u64);
            let problem = StepProblem {
                env,
                cfg: &self.config.solver,
                safe_set: &state.safe_set,
                model: &state.model,
                latents: valuefn::draw_latents(
                    self.config.master_seed,
                    iteration as u64,
                    step as u64,
                    self.config.solver.value_draws,
                ),
                x0: obs,
                master_seed: self.config.master_seed,
                iteration: iteration as u64,
                step: step as u64,
            };
            let solution = match problem.solve(&warm) {
                Ok(s) => s,
                // A solver failure means no applicable control exists; the
                // episode ends here and is scored infeasible.
                Err(Error::NoFiniteCostSamples) | Err(Error::DynamicsDiverged) => break,
                Err(e) => return Err(e),
            };
            diagnostics.selected_lambda.push(solution.lambda);
            diagnostics.feasible_counts.push(solution.feasible_count);
            diagnostics.min_violations.push(solution.min_violation);
            let u = solution.control.first();
            let w = self.control_noise(iteration as u64, step as u64);
            let mut next = vec![0.0; n_x];
            match plant.sim_step(&x, u.as_slice(), &w, &mut next) {
                Ok(()) => {}
                Err(Error::DynamicsDiverged) | Err(Error::OffTrackProjection) => break,
                Err(e) => return Err(e),
            }
            x = next;
            inputs.push(u);
            states.push(StateVector::from_checked(x.clone()));
            warm = solution.control.warm_start_shift();
        }
        if !violated && !reached {
            if env.admissible_distance(&x) > 0.0 {
                violated = true;
            } else {
                reached = env.in_target(&x);
            }
        }
        self.finish_record(iteration, states, inputs, violated, reached, started, diagnostics)
    }

    #[allow(clippy::too_many_arguments)]
    fn finish_record(
        &self,
        iteration: usize,
        states: Vec<StateVector>,
        inputs: Vec<crate::types::ControlVector>,
        violated: bool,
        reached: bool,
        started: Instant,
        diagnostics: EpisodeDiagnostics,
    ) -> Result<IterationRecord> {
        let env = self.env;
        let iteration_cost: f64 = states
            .iter()
            .zip(&inputs)
            .map(|(x, u)| env.stage_cost(x.as_slice(), u.as_slice()))
            .sum();
        let violation_count =
            states.iter().filter(|x| env.admissible_distance(x.as_slice()) > 0.0).count();
        let trajectory = Trajectory::new(states, inputs)?;
        Ok(IterationRecord {
            iteration,
            trajectory,
            feasible: !violated && reached,
            iteration_cost,
            violation_count,
            wall_time_s: started.elapsed().as_secs_f64(),
            diagnostics,
        })
    }

    fn observe(&self, x: &[f64], iteration: u64, step: u64) -> Vec<f64> {
        let mut rng =
            rng::stream(self.config.master_seed, &[role::OBS_NOISE, iteration, step]);
        let noise = self.env.disturbance().sample_obs(&mut rng);
        x.iter().zip(&noise).map(|(v, n)| v + n).collect()
    }

    fn control_noise(&self, iteration: u64, step: u64) -> Vec<f64> {
        let mut rng =
            rng::stream(self.config.master_seed, &[role::CONTROL_NOISE, iteration, step]);
        self.env.disturbance().sample_ctrl(&mut rng)
    }

    /// Applies a finished episode: feasible records grow the safe set and
    /// refit the model on the enlarged dataset; infeasible ones change
    /// nothing. A diverging refit keeps the previous model.
    pub fn advance(
        &self,
        state: &mut RunState,
        record: IterationRecord,
    ) -> Result<ModelUpdate> {
        let env = self.env;
        let feasible = record.feasible;
        let iteration = record.iteration;
        state.records.push(record);
        if !feasible {
            return Ok(ModelUpdate::SkippedUnchanged);
        }
        let record = state.records.last().unwrap();
        state.safe_set.insert_record(
            record,
            |x, u| env.stage_cost(x, u),
            |x| env.in_target(x),
        )?;
        let (states, costs) = dataset_arrays(&state.safe_set);
        let tc = TrainConfig { epochs: self.config.refit_epochs, ..self.config.train.clone() };
        let mut candidate = state.model.clone();
        match candidate.train(&states, &costs, &tc, self.config.master_seed, iteration as u64) {
            Ok(stats) => {
                state.model = candidate;
                Ok(ModelUpdate::Trained(stats))
            }
            Err(Error::TrainingFailure(_)) => Ok(ModelUpdate::KeptPrevious),
            Err(e) => Err(e),
        }
    }

    /// Writes the full run state under `dir` (run.json, safeset.json,
    /// model.bin, records.jsonl), each file atomically.
    pub fn checkpoint(&self, state: &RunState, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        state.safe_set.save(&dir.join("safeset.json"))?;
        state.model.save(&dir.join("model.bin"))?;
        let mut lines = String::new();
        for record in &state.records {
            lines.push_str(&serde_json::to_string(record)?);
            lines.push('\n');
        }
        crate::fsio::write_atomic(&dir.join("records.jsonl"), lines.as_bytes())?;
        let run = RunFile {
            version: RUN_FORMAT_VERSION,
            environment: self.env.name().to_string(),
            next_iteration: state.records.len(),
            config: self.config.clone(),
        };
        let json = serde_json::to_string_pretty(&run)?;
        crate::fsio::write_atomic(&dir.join("run.json"), json.as_bytes())
    }

    /// Restores a checkpoint written by `checkpoint` for the same
    /// environment and configuration.
    pub fn resume(&self, dir: &Path) -> Result<RunState> {
        let run_path = dir.join("run.json");
        let text = std::fs::read_to_string(&run_path)?;
        let run: RunFile = serde_json::from_str(&text)?;
        if run.version != RUN_FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported run format version {}",
                run.version
            )));
        }
        if run.environment != self.env.name() {
            return Err(Error::Checkpoint(format!(
                "checkpoint is for environment '{}', runner has '{}'",
                run.environment,
                self.env.name()
            )));
        }
        if run.config != self.config {
            return Err(Error::Checkpoint(
                "checkpoint configuration differs from the runner's".into(),
            ));
        }
        let safe_set = SafeSet::load(&dir.join("safeset.json"))?;
        let model = ValueModel::load(&dir.join("model.bin"))?;
        let n_x = self.env.plant().n_x();
        if safe_set.n_x() != n_x || model.n_ctx() != n_x {
            return Err(Error::Checkpoint("checkpoint dimensions do not match".into()));
        }
        let records_text = std::fs::read_to_string(dir.join("records.jsonl"))?;
        let mut records = Vec::new();
        for line in records_text.lines().filter(|l| !l.trim().is_empty()) {
            records.push(serde_json::from_str::<IterationRecord>(line)?);
        }
        if records.len() != run.next_iteration {
            return Err(Error::Checkpoint(format!(
                "records.jsonl holds {} records, run.json expects {}",
                records.len(),
                run.next_iteration
            )));
        }
        for (i, r) in records.iter().enumerate() {
            if r.iteration != i {
                return Err(Error::Checkpoint(format!(
                    "record {} is labeled iteration {}",
                    i, r.iteration
                )));
            }
        }
        if records.is_empty() {
            return Err(Error::Checkpoint("checkpoint has no demonstration record".into()));
        }
        Ok(RunState { safe_set, model, records })
    }
}

/// Safe-set contents as flat training arrays, in insertion order.
pub fn dataset_arrays(safe_set: &SafeSet) -> (Vec<f64>, Vec<f64>) {
    let n = safe_set.len();
    let n_x = safe_set.n_x();
    let mut states = Vec::with_capacity(n * n_x);
    let mut costs = Vec::with_capacity(n);
    for entry in safe_set.entries() {
        states.extend_from_slice(entry.state.as_slice());
        costs.push(entry.cost_to_go);
    }
    (states, costs)
}
