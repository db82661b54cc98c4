//! Experiment file schema.
//!
//! One TOML file declares everything a run needs: the environment, the
//! solver, the value model, and the experiment protocol (seeds, iteration
//! count, output root). Unknown keys are rejected so typos fail loudly, and
//! validation reports every problem in one pass rather than stopping at the
//! first.

use serde::{Deserialize, Serialize};
use sitlmpc_core::penalty::{LambdaSchedule, Optimizer, PenaltyRule, SolverConfig};
use sitlmpc_core::runner::RunConfig;
use sitlmpc_core::systems::{
    parse_track_csv, DisturbanceModel, Environment, PointMassConfig, PointMassEnv, RacingConfig,
    RacingEnv, TrackGeometry, VehicleParams,
};
use sitlmpc_core::valuefn::{ModelConfig, TrainConfig};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentFile {
    pub experiment: ExperimentSection,
    pub environment: EnvironmentSection,
    pub solver: SolverSection,
    pub model: ModelSection,
    pub train: TrainSection,
    #[serde(default)]
    pub ablation: AblationSection,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    /// Output subdirectory name.
    pub name: String,
    /// Learned iterations per seed (the demonstration is iteration 0).
    pub iterations: usize,
    /// One independent run per seed; the seed is the run's master seed.
    pub seeds: Vec<u64>,
    /// Output root; the CLI --out flag overrides it.
    #[serde(default = "default_out")]
    pub out: String,
    #[serde(default = "default_step_cap_factor")]
    pub step_cap_factor: f64,
}

fn default_out() -> String {
    "out".into()
}

fn default_step_cap_factor() -> f64 {
    4.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvironmentSection {
    pub kind: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub point_mass: Option<PointMassSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub racing: Option<RacingSection>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PointMassSection {
    #[serde(default = "default_pm_dt")]
    pub dt: f64,
    #[serde(default = "default_one")]
    pub accel_limit: f64,
    pub obstacle_center: [f64; 2],
    pub obstacle_radius: f64,
    pub target_state: [f64; 4],
    #[serde(default = "default_one")]
    pub target_pos_tol: f64,
    #[serde(default = "default_half")]
    pub target_vel_tol: f64,
    pub demo_speed: f64,
    pub demo_accel: f64,
    #[serde(default)]
    pub noise: NoiseSection,
}

fn default_pm_dt() -> f64 {
    0.1
}

fn default_one() -> f64 {
    1.0
}

fn default_half() -> f64 {
    0.5
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RacingSection {
    /// Centerline CSV, resolved relative to the experiment file.
    pub track: String,
    /// Vehicle parameter JSON, resolved relative to the experiment file.
    pub vehicle: String,
    /// Track half width; optional when the CSV carries width columns.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub half_width: Option<f64>,
    #[serde(default = "default_racing_dt")]
    pub control_dt: f64,
    #[serde(default = "default_one_usize")]
    pub plan_substeps: usize,
    #[serde(default = "default_three_usize")]
    pub sim_substeps: usize,
    #[serde(default = "default_one")]
    pub laps: f64,
    #[serde(default = "default_racing_v0")]
    pub initial_speed: f64,
    pub demo_speed: f64,
    #[serde(default = "default_lookahead")]
    pub demo_lookahead: f64,
    #[serde(default)]
    pub noise: NoiseSection,
}

fn default_racing_dt() -> f64 {
    0.05
}

fn default_one_usize() -> usize {
    1
}

fn default_three_usize() -> usize {
    3
}

fn default_racing_v0() -> f64 {
    1.5
}

fn default_lookahead() -> f64 {
    0.8
}

/// Truncated-Gaussian noise; empty vectors mean noise-free.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSection {
    #[serde(default)]
    pub obs_std: Vec<f64>,
    #[serde(default)]
    pub obs_bound: Vec<f64>,
    #[serde(default)]
    pub ctrl_std: Vec<f64>,
    #[serde(default)]
    pub ctrl_bound: Vec<f64>,
}

impl NoiseSection {
    fn build(&self, n_x: usize, n_u: usize, problems: &mut Vec<String>) -> DisturbanceModel {
        let mut model = DisturbanceModel::none(n_x, n_u);
        let mut fill = |name: &str, src: &[f64], dst: &mut Vec<f64>| {
            if src.is_empty() {
                return;
            }
            if src.len() != dst.len() {
                problems.push(format!(
                    "noise.{name} needs {} entries, got {}",
                    dst.len(),
                    src.len()
                ));
                return;
            }
            if src.iter().any(|v| !v.is_finite() || *v < 0.0) {
                problems.push(format!("noise.{name} entries must be finite and nonnegative"));
                return;
            }
            dst.copy_from_slice(src);
        };
        fill("obs_std", &self.obs_std, &mut model.obs_std);
        fill("obs_bound", &self.obs_bound, &mut model.obs_bound);
        fill("ctrl_std", &self.ctrl_std, &mut model.ctrl_std);
        fill("ctrl_bound", &self.ctrl_bound, &mut model.ctrl_bound);
        model
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    pub horizon: usize,
    pub samples: usize,
    pub temperature: f64,
    pub sigma: Vec<f64>,
    #[serde(default = "default_lambda_count")]
    pub lambda_count: usize,
    #[serde(default = "default_lambda_max")]
    pub lambda_max: f64,
    #[serde(default = "default_schedule")]
    pub lambda_schedule: String,
    #[serde(default = "default_neighbors")]
    pub hull_neighbors: usize,
    #[serde(default = "default_value_draws")]
    pub value_draws: usize,
    #[serde(default = "default_hull_tol")]
    pub hull_tol: f64,
    #[serde(default = "default_optimizer")]
    pub optimizer: String,
    #[serde(default = "default_elite_frac")]
    pub cem_elite_frac: f64,
    #[serde(default = "default_cem_rounds")]
    pub cem_rounds: usize,
    #[serde(default = "default_penalty")]
    pub penalty: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fixed_lambda_x: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fixed_lambda_cs: Option<f64>,
}

fn default_lambda_count() -> usize {
    8
}

fn default_lambda_max() -> f64 {
    1e3
}

fn default_schedule() -> String {
    "iteration".into()
}

fn default_neighbors() -> usize {
    32
}

fn default_value_draws() -> usize {
    32
}

fn default_hull_tol() -> f64 {
    1e-6
}

fn default_optimizer() -> String {
    "mppi".into()
}

fn default_elite_frac() -> f64 {
    0.1
}

fn default_cem_rounds() -> usize {
    3
}

fn default_penalty() -> String {
    "adaptive".into()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    #[serde(default = "default_hidden")]
    pub hidden: usize,
    #[serde(default = "default_bins")]
    pub bins: usize,
    #[serde(default = "default_layers")]
    pub flow_layers: usize,
    #[serde(default = "default_bound")]
    pub bound: f64,
    #[serde(default = "default_min_bin")]
    pub min_bin: f64,
}

fn default_hidden() -> usize {
    96
}

fn default_bins() -> usize {
    8
}

fn default_layers() -> usize {
    4
}

fn default_bound() -> f64 {
    4.0
}

fn default_min_bin() -> f64 {
    1e-3
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_refit_epochs")]
    pub refit_epochs: usize,
    #[serde(default = "default_grad_chunk")]
    pub grad_chunk: usize,
}

fn default_lr() -> f64 {
    1e-4
}

fn default_batch() -> usize {
    256
}

fn default_epochs() -> usize {
    200
}

fn default_refit_epochs() -> usize {
    20
}

fn default_grad_chunk() -> usize {
    32
}

/// Penalty weights the ablation presets substitute for the adaptive rule.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationSection {
    #[serde(default = "default_fixed_high")]
    pub fixed_high: f64,
    #[serde(default = "default_fixed_low")]
    pub fixed_low: f64,
}

impl Default for AblationSection {
    fn default() -> Self {
        Self { fixed_high: default_fixed_high(), fixed_low: default_fixed_low() }
    }
}

fn default_fixed_high() -> f64 {
    1e3
}

fn default_fixed_low() -> f64 {
    1.0
}

/// A built environment; the concrete type is kept so plots can reach the
/// task geometry.
pub enum BuiltEnv {
    PointMass(PointMassEnv),
    Racing(RacingEnv),
}

impl BuiltEnv {
    pub fn as_dyn(&self) -> &dyn Environment {
        match self {
            BuiltEnv::PointMass(e) => e,
            BuiltEnv::Racing(e) => e,
        }
    }
}

/// A validated experiment: environment plus everything needed to configure a
/// run for any seed.
pub struct Experiment {
    pub name: String,
    pub iterations: usize,
    pub seeds: Vec<u64>,
    pub out: PathBuf,
    pub env: BuiltEnv,
    pub ablation: AblationSection,
    base: RunConfig,
}

impl Experiment {
    /// Run configuration for one seed under an optional ablation variant.
    pub fn run_config(&self, seed: u64, variant: Option<&Variant>) -> RunConfig {
        let mut config = self.base.clone();
        config.master_seed = seed;
        if let Some(v) = variant {
            config.solver.optimizer = v.optimizer.clone();
            config.solver.penalty = match v.penalty {
                PenaltyChoice::Adaptive => PenaltyRule::Adaptive,
                PenaltyChoice::FixedHigh => PenaltyRule::Fixed {
                    lambda_x: self.ablation.fixed_high,
                    lambda_cs: self.ablation.fixed_high,
                },
                PenaltyChoice::FixedLow => PenaltyRule::Fixed {
                    lambda_x: self.ablation.fixed_low,
                    lambda_cs: self.ablation.fixed_low,
                },
            };
        }
        config
    }
}

/// One optimizer x penalty combination of the ablation grid.
#[derive(Debug, Clone)]
pub struct Variant {
    pub name: String,
    pub optimizer: Optimizer,
    pub penalty: PenaltyChoice,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PenaltyChoice {
    Adaptive,
    FixedHigh,
    FixedLow,
}

impl Variant {
    /// Parses names of the form `<optimizer>-<penalty>`: mppi or cem crossed
    /// with adaptive, fixed-high, or fixed-low.
    pub fn parse(name: &str, solver: &SolverSection) -> Result<Self, String> {
        let (opt_name, pen_name) = name
            .split_once('-')
            .ok_or_else(|| format!("variant '{name}' is not <optimizer>-<penalty>"))?;
        let optimizer = match opt_name {
            "mppi" => Optimizer::Mppi,
            "cem" => Optimizer::Cem {
                elite_frac: solver.cem_elite_frac,
                rounds: solver.cem_rounds,
            },
            other => return Err(format!("unknown optimizer '{other}' in variant '{name}'")),
        };
        let penalty = match pen_name {
            "adaptive" => PenaltyChoice::Adaptive,
            "fixed-high" => PenaltyChoice::FixedHigh,
            "fixed-low" => PenaltyChoice::FixedLow,
            other => return Err(format!("unknown penalty '{other}' in variant '{name}'")),
        };
        Ok(Self { name: name.to_string(), optimizer, penalty })
    }
}

impl ExperimentFile {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| anyhow::anyhow!("cannot read {}: {e}", path.display()))?;
        let file: ExperimentFile = toml::from_str(&text)
            .map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))?;
        Ok(file)
    }

    /// Builds the environment and run configuration, collecting every
    /// validation problem. Paths are resolved relative to `config_dir`.
    pub fn prepare(&self, config_dir: &Path) -> Result<Experiment, Vec<String>> {
        let mut problems = Vec::new();
        let exp = &self.experiment;
        if exp.name.is_empty()
            || !exp.name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
        {
            problems.push("experiment.name must be a nonempty [A-Za-z0-9_-]+ token".into());
        }
        if exp.seeds.is_empty() {
            problems.push("experiment.seeds must list at least one seed".into());
        }
        let mut sorted = exp.seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != exp.seeds.len() {
            problems.push("experiment.seeds contains duplicates".into());
        }
        if !(exp.step_cap_factor > 0.0 && exp.step_cap_factor.is_finite()) {
            problems.push("experiment.step_cap_factor must be positive".into());
        }

        let env = self.build_env(config_dir, &mut problems);
        let solver = self.build_solver(&mut problems);

        let base = RunConfig {
            master_seed: 0,
            solver,
            model: ModelConfig {
                hidden: self.model.hidden,
                bins: self.model.bins,
                flow_layers: self.model.flow_layers,
                bound: self.model.bound,
                min_bin: self.model.min_bin,
            },
            train: TrainConfig {
                lr: self.train.lr,
                batch_size: self.train.batch_size,
                epochs: self.train.epochs,
                grad_chunk: self.train.grad_chunk,
            },
            refit_epochs: self.train.refit_epochs,
            step_cap_factor: exp.step_cap_factor,
        };
        if !(self.ablation.fixed_high > 0.0 && self.ablation.fixed_high.is_finite()) {
            problems.push("ablation.fixed_high must be positive".into());
        }
        if !(self.ablation.fixed_low > 0.0 && self.ablation.fixed_low.is_finite()) {
            problems.push("ablation.fixed_low must be positive".into());
        }

        // The core validator catches whatever the field checks above missed
        // (sigma length against the plant, model/train ranges).
        if let Some(env) = &env {
            if let Err(e) = base.validate(env.as_dyn().plant().n_u()) {
                problems.push(e.to_string());
            }
        }

        match (env, problems.is_empty()) {
            (Some(env), true) => Ok(Experiment {
                name: exp.name.clone(),
                iterations: exp.iterations,
                seeds: exp.seeds.clone(),
                out: PathBuf::from(&exp.out),
                env,
                ablation: self.ablation.clone(),
                base,
            }),
            _ => Err(problems),
        }
    }

    fn build_env(&self, config_dir: &Path, problems: &mut Vec<String>) -> Option<BuiltEnv> {
        // Problems recorded by earlier sections must not stop environment
        // construction, or their fixes would uncover a second error wave.
        let before = problems.len();
        match self.environment.kind.as_str() {
            "point_mass" => {
                if self.environment.racing.is_some() {
                    problems
                        .push("environment.racing is set but kind is 'point_mass'".into());
                }
                let Some(section) = &self.environment.point_mass else {
                    problems.push("environment.point_mass section is missing".into());
                    return None;
                };
                for (name, v) in [
                    ("dt", section.dt),
                    ("accel_limit", section.accel_limit),
                    ("obstacle_radius", section.obstacle_radius),
                    ("target_pos_tol", section.target_pos_tol),
                    ("target_vel_tol", section.target_vel_tol),
                    ("demo_speed", section.demo_speed),
                    ("demo_accel", section.demo_accel),
                ] {
                    if !(v > 0.0 && v.is_finite()) {
                        problems.push(format!("environment.point_mass.{name} must be positive"));
                    }
                }
                let disturbance = section.noise.build(4, 2, problems);
                if problems.len() > before {
                    // Construction below assumes the checks passed.
                    return None;
                }
                Some(BuiltEnv::PointMass(PointMassEnv::new(PointMassConfig {
                    dt: section.dt,
                    accel_limit: section.accel_limit,
                    obstacle_center: section.obstacle_center,
                    obstacle_radius: section.obstacle_radius,
                    target_state: section.target_state,
                    target_pos_tol: section.target_pos_tol,
                    target_vel_tol: section.target_vel_tol,
                    disturbance,
                    demo_speed: section.demo_speed,
                    demo_accel: section.demo_accel,
                })))
            }
            "racing" => {
                if self.environment.point_mass.is_some() {
                    problems
                        .push("environment.point_mass is set but kind is 'racing'".into());
                }
                let Some(section) = &self.environment.racing else {
                    problems.push("environment.racing section is missing".into());
                    return None;
                };
                let track_path = config_dir.join(&section.track);
                let vehicle_path = config_dir.join(&section.vehicle);
                let track_text = match std::fs::read_to_string(&track_path) {
                    Ok(t) => Some(t),
                    Err(e) => {
                        problems.push(format!(
                            "cannot read track file {}: {e}",
                            track_path.display()
                        ));
                        None
                    }
                };
                let vehicle = match VehicleParams::from_json_file(&vehicle_path) {
                    Ok(v) => Some(v),
                    Err(e) => {
                        problems.push(format!(
                            "cannot load vehicle file {}: {e}",
                            vehicle_path.display()
                        ));
                        None
                    }
                };
                let parsed = track_text.and_then(|text| match parse_track_csv(&text) {
                    Ok(p) => Some(p),
                    Err(e) => {
                        problems.push(format!("track file {}: {e}", track_path.display()));
                        None
                    }
                });
                let half_width = match (section.half_width, parsed.as_ref()) {
                    (Some(w), _) if w > 0.0 && w.is_finite() => Some(w),
                    (Some(_), _) => {
                        problems.push("environment.racing.half_width must be positive".into());
                        None
                    }
                    (None, Some((_, Some(w)))) => Some(*w),
                    (None, Some((_, None))) => {
                        problems.push(
                            "environment.racing.half_width missing and the track file \
                             carries no width columns"
                                .into(),
                        );
                        None
                    }
                    (None, None) => None,
                };
                let noise = section.noise.build(7, 2, problems);
                let config = RacingConfig {
                    control_dt: section.control_dt,
                    plan_substeps: section.plan_substeps,
                    sim_substeps: section.sim_substeps,
                    laps: section.laps,
                    initial_speed: section.initial_speed,
                    disturbance: noise,
                    demo_speed: section.demo_speed,
                    demo_lookahead: section.demo_lookahead,
                };
                let (Some((points, _)), Some(vehicle), Some(half_width)) =
                    (parsed, vehicle, half_width)
                else {
                    return None;
                };
                let track = match TrackGeometry::new(&points, half_width, true) {
                    Ok(t) => t,
                    Err(e) => {
                        problems.push(format!("track geometry: {e}"));
                        return None;
                    }
                };
                match RacingEnv::new(track, vehicle, config) {
                    Ok(env) => {
                        if problems.len() > before {
                            return None;
                        }
                        Some(BuiltEnv::Racing(env))
                    }
                    Err(e) => {
                        problems.push(format!("racing environment: {e}"));
                        None
                    }
                }
            }
            other => {
                problems.push(format!(
                    "environment.kind '{other}' is not one of: point_mass, racing"
                ));
                None
            }
        }
    }

    fn build_solver(&self, problems: &mut Vec<String>) -> SolverConfig {
        let s = &self.solver;
        let lambda_schedule = match s.lambda_schedule.as_str() {
            "run" => LambdaSchedule::Run,
            "iteration" => LambdaSchedule::Iteration,
            "step" => LambdaSchedule::Step,
            other => {
                problems.push(format!(
                    "solver.lambda_schedule '{other}' is not one of: run, iteration, step"
                ));
                LambdaSchedule::Iteration
            }
        };
        let optimizer = match s.optimizer.as_str() {
            "mppi" => Optimizer::Mppi,
            "cem" => Optimizer::Cem { elite_frac: s.cem_elite_frac, rounds: s.cem_rounds },
            other => {
                problems.push(format!("solver.optimizer '{other}' is not one of: mppi, cem"));
                Optimizer::Mppi
            }
        };
        let penalty = match s.penalty.as_str() {
            "adaptive" => {
                if s.fixed_lambda_x.is_some() || s.fixed_lambda_cs.is_some() {
                    problems.push(
                        "solver.fixed_lambda_x/_cs are set but solver.penalty is 'adaptive'"
                            .into(),
                    );
                }
                PenaltyRule::Adaptive
            }
            "fixed" => match (s.fixed_lambda_x, s.fixed_lambda_cs) {
                (Some(x), Some(cs)) => PenaltyRule::Fixed { lambda_x: x, lambda_cs: cs },
                _ => {
                    problems.push(
                        "solver.penalty 'fixed' needs both fixed_lambda_x and fixed_lambda_cs"
                            .into(),
                    );
                    PenaltyRule::Adaptive
                }
            },
            other => {
                problems.push(format!(
                    "solver.penalty '{other}' is not one of: adaptive, fixed"
                ));
                PenaltyRule::Adaptive
            }
        };
        SolverConfig {
            horizon: s.horizon,
            n_samples: s.samples,
            temperature: s.temperature,
            sigma: s.sigma.clone(),
            n_lambda: s.lambda_count,
            lambda_max: s.lambda_max,
            lambda_schedule,
            hull_neighbors: s.hull_neighbors,
            value_draws: s.value_draws,
            hull_tol: s.hull_tol,
            optimizer,
            penalty,
        }
    }
}
