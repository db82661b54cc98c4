//! Shared domain types: states, controls, trajectories, iteration records.
//!
//! Everything is plain `Vec<f64>` under the hood. Dimensions are checked at
//! construction; hot paths (rollouts) work on flat slices and only build these
//! types at module boundaries.

use crate::{Error, Result};
use serde::{Deserialize, Serialize};

/// State vector x ∈ R^{n_x}. All components must be finite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StateVector(Vec<f64>);

/// Control vector u ∈ R^{n_u}. All components must be finite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ControlVector(Vec<f64>);

macro_rules! vector_impl {
    ($name:ident, $context:literal) => {
        impl $name {
            pub fn new(values: Vec<f64>) -> Result<Self> {
                if values.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite { context: $context });
                }
                Ok(Self(values))
            }

            /// Construction without the finiteness scan, for values produced
            /// by code that already guarantees it.
            pub fn from_checked(values: Vec<f64>) -> Self {
                debug_assert!(values.iter().all(|v| v.is_finite()));
                Self(values)
            }

            pub fn dim(&self) -> usize {
                self.0.len()
            }

            pub fn as_slice(&self) -> &[f64] {
                &self.0
            }

            pub fn into_vec(self) -> Vec<f64> {
                self.0
            }
        }

        impl std::ops::Index<usize> for $name {
            type Output = f64;
            fn index(&self, i: usize) -> &f64 {
                &self.0[i]
            }
        }

        impl AsRef<[f64]> for $name {
            fn as_ref(&self) -> &[f64] {
                &self.0
            }
        }
    };
}

vector_impl!(StateVector, "state vector");
vector_impl!(ControlVector, "control vector");

/// Open-loop control sequence over a fixed horizon, row k = u(t+k).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlSequence {
    n_u: usize,
    /// Flat row-major storage, horizon × n_u.
    data: Vec<f64>,
}

impl ControlSequence {
    pub fn zeros(horizon: usize, n_u: usize) -> Self {
        Self { n_u, data: vec![0.0; horizon * n_u] }
    }

    pub fn from_rows(rows: &[ControlVector]) -> Result<Self> {
        let n_u = rows.first().map(|r| r.dim()).unwrap_or(0);
        let mut data = Vec::with_capacity(rows.len() * n_u);
        for r in rows {
            if r.dim() != n_u {
                return Err(Error::DimensionMismatch { expected: n_u, got: r.dim() });
            }
            data.extend_from_slice(r.as_slice());
        }
        Ok(Self { n_u, data })
    }

    pub fn from_flat(horizon: usize, n_u: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != horizon * n_u {
            return Err(Error::DimensionMismatch { expected: horizon * n_u, got: data.len() });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { context: "control sequence" });
        }
        Ok(Self { n_u, data })
    }

    /// Caller guarantees shape and finiteness.
    pub(crate) fn from_checked(n_u: usize, data: Vec<f64>) -> Self {
        debug_assert!(n_u > 0 && data.len() % n_u == 0);
        debug_assert!(data.iter().all(|v| v.is_finite()));
        Self { n_u, data }
    }

    pub fn horizon(&self) -> usize {
        if self.n_u == 0 { 0 } else { self.data.len() / self.n_u }
    }

    pub fn n_u(&self) -> usize {
        self.n_u
    }

    pub fn row(&self, k: usize) -> &[f64] {
        &self.data[k * self.n_u..(k + 1) * self.n_u]
    }

    pub fn row_mut(&mut self, k: usize) -> &mut [f64] {
        &mut self.data[k * self.n_u..(k + 1) * self.n_u]
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.data
    }

    pub fn first(&self) -> ControlVector {
        ControlVector::from_checked(self.row(0).to_vec())
    }

    /// Receding-horizon warm start: drop the first control, repeat the last.
    pub fn warm_start_shift(&self) -> Self {
        let h = self.horizon();
        if h <= 1 {
            return self.clone();
        }
        let mut data = Vec::with_capacity(self.data.len());
        data.extend_from_slice(&self.data[self.n_u..]);
        data.extend_from_slice(&self.data[(h - 1) * self.n_u..]);
        Self { n_u: self.n_u, data }
    }
}

/// Closed-loop trajectory: states has exactly one more entry than inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub states: Vec<StateVector>,
    pub inputs: Vec<ControlVector>,
}

impl Trajectory {
    pub fn new(states: Vec<StateVector>, inputs: Vec<ControlVector>) -> Result<Self> {
        if states.len() != inputs.len() + 1 {
            return Err(Error::DimensionMismatch {
                expected: inputs.len() + 1,
                got: states.len(),
            });
        }
        let n_x = states[0].dim();
        if states.iter().any(|s| s.dim() != n_x) {
            return Err(Error::DimensionMismatch { expected: n_x, got: 0 });
        }
        Ok(Self { states, inputs })
    }

    pub fn len_steps(&self) -> usize {
        self.inputs.len()
    }

    pub fn final_state(&self) -> &StateVector {
        self.states.last().expect("trajectory has at least one state")
    }
}

/// Per-step solver diagnostics recorded during an episode.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EpisodeDiagnostics {
    /// Selected penalty pair (λ_admissible, λ_terminal) at each step.
    pub selected_lambda: Vec<(f64, f64)>,
    /// Number of feasible candidates at each step.
    pub feasible_counts: Vec<usize>,
    /// Smallest candidate violation at each step (0 when any candidate is feasible).
    pub min_violations: Vec<f64>,
}

/// Outcome of one closed-loop episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub trajectory: Trajectory,
    /// True iff every visited state was admissible and the final state is in
    /// the target set.
    pub feasible: bool,
    /// Sum of stage costs along the trajectory.
    pub iteration_cost: f64,
    pub violation_count: usize,
    pub wall_time_s: f64,
    #[serde(default)]
    pub diagnostics: EpisodeDiagnostics,
}

/// Suffix sums of the stage cost along a trajectory that ends in the target
/// set: entry k is the recorded cost-to-go from state k. The final entry is
/// always zero.
pub fn cost_to_go<H, T>(trajectory: &Trajectory, stage_cost: H, in_target: T) -> Result<Vec<f64>>
where
    H: Fn(&[f64], &[f64]) -> f64,
    T: Fn(&[f64]) -> bool,
{
    if !in_target(trajectory.final_state().as_slice()) {
        return Err(Error::NonTerminating);
    }
    let n = trajectory.states.len();
    let mut ctg = vec![0.0; n];
    for k in (0..n - 1).rev() {
        let h = stage_cost(trajectory.states[k].as_slice(), trajectory.inputs[k].as_slice());
        if !h.is_finite() {
            return Err(Error::NonFinite { context: "stage cost" });
        }
        ctg[k] = ctg[k + 1] + h;
    }
    Ok(ctg)
}
