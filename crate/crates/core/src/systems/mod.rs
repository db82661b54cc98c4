//! Plants, disturbance models, and task environments.
//!
//! A `Plant` exposes two step functions: `plan_step` is the noise-free model
//! the solver rolls out, `sim_step` is the higher-fidelity update the episode
//! loop advances the true state with (finer integration plus an additive
//! control disturbance). An `Environment` bundles a plant with the task data:
//! admissible-set distance, target membership, stage cost, initial state, and
//! the scripted demonstration controller that records iteration zero.

mod frenet;
mod point_mass;
mod racing;
mod single_track;
mod track;

pub use frenet::{from_frenet, to_frenet, wrap_angle, FrenetPose};
pub use point_mass::{PointMassConfig, PointMassEnv};
pub use racing::{RacingConfig, RacingEnv};
pub use single_track::{
    body_rates, single_track_derivative, single_track_step, BodyRates, SingleTrackPlant,
    VehicleParams,
};
pub use track::{oval_centerline, parse_track_csv, TrackGeometry};

use crate::types::{ControlVector, StateVector};
use crate::{Error, Result};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Discrete-time plant x⁺ = f(x, u, w).
pub trait Plant: Send + Sync {
    fn n_x(&self) -> usize;
    fn n_u(&self) -> usize;
    /// Control period in seconds; one plan/sim step advances this long.
    fn control_dt(&self) -> f64;
    /// Per-component closed control bounds.
    fn input_bounds(&self) -> &[(f64, f64)];
    /// Noise-free planning model used for rollouts. Errors when the input is
    /// outside bounds or the state diverges.
    fn plan_step(&self, x: &[f64], u: &[f64], out: &mut [f64]) -> Result<()>;
    /// Plant-fidelity step with additive control disturbance `w_ctrl`.
    fn sim_step(&self, x: &[f64], u: &[f64], w_ctrl: &[f64], out: &mut [f64]) -> Result<()>;
}

/// Checks a commanded input against the plant's box bounds.
pub fn check_input_bounds(bounds: &[(f64, f64)], u: &[f64]) -> Result<()> {
    if u.len() != bounds.len() {
        return Err(Error::DimensionMismatch { expected: bounds.len(), got: u.len() });
    }
    for (i, (value, (lo, hi))) in u.iter().zip(bounds).enumerate() {
        if !value.is_finite() || *value < *lo || *value > *hi {
            return Err(Error::InputOutsideBounds { index: i, value: *value });
        }
    }
    Ok(())
}

/// Truncated-Gaussian noise on observations and applied controls.
/// Standard deviations and hard truncation half-widths are per coordinate;
/// zero std means the coordinate is noise-free.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisturbanceModel {
    pub obs_std: Vec<f64>,
    pub obs_bound: Vec<f64>,
    pub ctrl_std: Vec<f64>,
    pub ctrl_bound: Vec<f64>,
}

impl DisturbanceModel {
    pub fn none(n_x: usize, n_u: usize) -> Self {
        Self {
            obs_std: vec![0.0; n_x],
            obs_bound: vec![0.0; n_x],
            ctrl_std: vec![0.0; n_u],
            ctrl_bound: vec![0.0; n_u],
        }
    }

    pub fn is_zero(&self) -> bool {
        self.obs_std.iter().all(|&s| s == 0.0) && self.ctrl_std.iter().all(|&s| s == 0.0)
    }

    fn sample(std: &[f64], bound: &[f64], rng: &mut impl Rng) -> Vec<f64> {
        std.iter()
            .zip(bound)
            .map(|(&s, &b)| {
                if s == 0.0 || b == 0.0 {
                    0.0
                } else {
                    crate::sampling::truncated_normal(0.0, s, -b, b, rng)
                }
            })
            .collect()
    }

    /// Observation noise vector (state dimension).
    pub fn sample_obs(&self, rng: &mut impl Rng) -> Vec<f64> {
        Self::sample(&self.obs_std, &self.obs_bound, rng)
    }

    /// Control noise vector (input dimension).
    pub fn sample_ctrl(&self, rng: &mut impl Rng) -> Vec<f64> {
        Self::sample(&self.ctrl_std, &self.ctrl_bound, rng)
    }
}

/// A control task: plant, disturbances, constraints, costs, demonstration.
pub trait Environment: Send + Sync {
    fn name(&self) -> &str;
    fn plant(&self) -> &dyn Plant;
    fn disturbance(&self) -> &DisturbanceModel;
    fn initial_state(&self) -> StateVector;
    /// Euclidean distance from x to the admissible set; zero inside.
    fn admissible_distance(&self, x: &[f64]) -> f64;
    fn in_target(&self, x: &[f64]) -> bool;
    fn stage_cost(&self, x: &[f64], u: &[f64]) -> f64;
    /// Scripted low-performance controller that records iteration zero.
    fn demonstration_control(&self, x: &[f64], step: usize) -> ControlVector;
    /// Hard cap on demonstration length before bootstrap is declared failed.
    fn demonstration_step_cap(&self) -> usize;
    /// Characteristic per-coordinate magnitudes; used to floor the normalized
    /// hull metric so near-constant coordinates cannot blow up distances.
    fn state_scales(&self) -> Vec<f64>;
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bounds_check_flags_component() {
        let bounds = [(-1.0, 1.0), (0.0, 2.0)];
        assert!(check_input_bounds(&bounds, &[0.5, 1.0]).is_ok());
        assert!(check_input_bounds(&bounds, &[1.0, 2.0]).is_ok());
        let err = check_input_bounds(&bounds, &[0.0, 2.5]).unwrap_err();
        match err {
            Error::InputOutsideBounds { index, value } => {
                assert_eq!(index, 1);
                assert_eq!(value, 2.5);
            }
            other => panic!("unexpected error {other:?}"),
        }
        assert!(check_input_bounds(&bounds, &[f64::NAN, 0.0]).is_err());
    }

    #[test]
    fn zero_disturbance_samples_zero() {
        let d = DisturbanceModel::none(3, 2);
        assert!(d.is_zero());
        let mut rng = crate::rng::stream(1, &[2]);
        assert_eq!(d.sample_obs(&mut rng), vec![0.0; 3]);
        assert_eq!(d.sample_ctrl(&mut rng), vec![0.0; 2]);
    }

    #[test]
    fn disturbance_respects_truncation_bounds() {
        let d = DisturbanceModel {
            obs_std: vec![0.5, 2.0],
            obs_bound: vec![0.3, 1.0],
            ctrl_std: vec![10.0],
            ctrl_bound: vec![0.05],
        };
        let mut rng = crate::rng::stream(3, &[4]);
        for _ in 0..2000 {
            let obs = d.sample_obs(&mut rng);
            assert!(obs[0].abs() <= 0.3 && obs[1].abs() <= 1.0);
            let ctrl = d.sample_ctrl(&mut rng);
            assert!(ctrl[0].abs() <= 0.05);
        }
    }
}
