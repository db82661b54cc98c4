//! Shared setup for the solver benchmarks: a bootstrapped point-mass run
//! whose safe set and value model feed a single control-step problem.

use sitlmpc_core::penalty::{SolverConfig, StepProblem};
use sitlmpc_core::runner::{RunConfig, RunState, Runner};
use sitlmpc_core::systems::{Environment, PointMassConfig, PointMassEnv};
use sitlmpc_core::types::ControlSequence;
use sitlmpc_core::valuefn;

pub struct StepFixture {
    env: PointMassEnv,
    config: RunConfig,
    state: RunState,
}

impl StepFixture {
    /// Bootstrap the demonstration and train the initial model once; the
    /// benchmark then times solve calls against this frozen state.
    pub fn prepare(solver: SolverConfig) -> Self {
        let env = PointMassEnv::new(PointMassConfig::default());
        let config = RunConfig { master_seed: 7, solver, ..RunConfig::default() };
        let state = {
            let runner = Runner::new(&env, config.clone()).expect("config rejected");
            runner.bootstrap().expect("bootstrap failed")
        };
        Self { env, config, state }
    }

    pub fn warm(&self) -> ControlSequence {
        ControlSequence::zeros(self.config.solver.horizon, 2)
    }

    pub fn solve_once(&self, warm: &ControlSequence) {
        let problem = StepProblem {
            env: &self.env,
            cfg: &self.config.solver,
            safe_set: &self.state.safe_set,
            model: &self.state.model,
            latents: valuefn::draw_latents(
                self.config.master_seed,
                1,
                0,
                self.config.solver.value_draws,
            ),
            x0: self.env.initial_state().into_vec(),
            master_seed: self.config.master_seed,
            iteration: 1,
            step: 0,
        };
        problem.solve(warm).expect("solve failed");
    }
}
