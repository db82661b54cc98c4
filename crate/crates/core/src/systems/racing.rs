//! Lap-driving environment: the single-track vehicle expressed directly in
//! track coordinates.
//!
//! State [s, e_y, v, delta, e_psi, psi_dot, beta] with s the UNWRAPPED arc
//! position (it keeps growing across laps so the target set {s >= s_target}
//! and the terminal hull live in a consistent chart). Progress follows
//!   ds/dt    = v_t / (1 - kappa(s) e_y)
//!   de_y/dt  = v_n
//!   de_psi/dt = dpsi/dt - kappa(s) ds/dt
//! where (v_t, v_n) is the planar velocity in the tangent/normal frame. The
//! slip dynamics are shared with the Cartesian model, so the two frames agree
//! up to curvature-table resolution.

use super::single_track::{body_rates, VehicleParams};
use super::track::TrackGeometry;
use super::{check_input_bounds, DisturbanceModel, Environment, Plant};
use crate::types::{ControlVector, StateVector};
use crate::{Error, Result};
use serde::{Deserialize, Serialize};

/// Below this value of 1 - kappa e_y the state has crossed the instantaneous
/// turn center and the chart is meaningless.
const CHART_FLOOR: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RacingConfig {
    pub control_dt: f64,
    /// RK4 substeps used by the planning model.
    pub plan_substeps: usize,
    /// RK4 substeps used by the simulated plant (finer than planning).
    pub sim_substeps: usize,
    /// Laps to complete; the target set is {s >= laps * track length}.
    pub laps: f64,
    pub initial_speed: f64,
    pub disturbance: DisturbanceModel,
    /// Cruise speed of the scripted demonstration lap.
    pub demo_speed: f64,
    /// Seconds of curvature preview for the demonstration steering.
    pub demo_lookahead: f64,
}

impl Default for RacingConfig {
    fn default() -> Self {
        Self {
            control_dt: 0.05,
            plan_substeps: 1,
            sim_substeps: 3,
            laps: 1.0,
            initial_speed: 1.5,
            disturbance: DisturbanceModel::none(7, 2),
            demo_speed: 3.0,
            demo_lookahead: 0.8,
        }
    }
}

/// Single-track dynamics integrated in track coordinates.
pub struct FrenetPlant {
    track: TrackGeometry,
    params: VehicleParams,
    dt: f64,
    plan_substeps: usize,
    sim_substeps: usize,
    bounds: [(f64, f64); 2],
}

impl FrenetPlant {
    pub fn track(&self) -> &TrackGeometry {
        &self.track
    }

    pub fn params(&self) -> &VehicleParams {
        &self.params
    }

    fn derivative(&self, x: &[f64], u: &[f64], out: &mut [f64; 7]) -> Result<()> {
        let (s, e_y, v, delta, e_psi, psi_dot, beta) = (
            x[0], x[1], x[2], x[3], x[4], x[5], x[6],
        );
        let kappa = self.track.curvature(s);
        let denom = 1.0 - kappa * e_y;
        if denom < CHART_FLOOR {
            return Err(Error::DynamicsDiverged);
        }
        let r = body_rates(&self.params, v, delta, psi_dot, beta, u);
        let w = r.dyn_weight;
        let v_t = v * ((1.0 - w) * e_psi.cos() + w * (e_psi + beta).cos());
        let v_n = v * ((1.0 - w) * e_psi.sin() + w * (e_psi + beta).sin());
        let ds = v_t / denom;
        *out = [ds, v_n, r.dv, r.d_delta, r.d_psi - kappa * ds, r.dd_psi, r.d_beta];
        Ok(())
    }

    fn integrate(&self, x: &[f64], u: &[f64], substeps: usize, out: &mut [f64]) -> Result<()> {
        let h = self.dt / substeps as f64;
        let mut cur = [0.0; 7];
        cur.copy_from_slice(x);
        let mut k1 = [0.0; 7];
        let mut k2 = [0.0; 7];
        let mut k3 = [0.0; 7];
        let mut k4 = [0.0; 7];
        let mut tmp = [0.0; 7];
        for _ in 0..substeps {
            self.derivative(&cur, u, &mut k1)?;
            for i in 0..7 {
                tmp[i] = cur[i] + 0.5 * h * k1[i];
            }
            self.derivative(&tmp, u, &mut k2)?;
            for i in 0..7 {
                tmp[i] = cur[i] + 0.5 * h * k2[i];
            }
            self.derivative(&tmp, u, &mut k3)?;
            for i in 0..7 {
                tmp[i] = cur[i] + h * k3[i];
            }
            self.derivative(&tmp, u, &mut k4)?;
            for i in 0..7 {
                cur[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
        }
        if cur.iter().any(|v| !v.is_finite()) {
            return Err(Error::DynamicsDiverged);
        }
        out.copy_from_slice(&cur);
        Ok(())
    }
}

impl Plant for FrenetPlant {
    fn n_x(&self) -> usize {
        7
    }

    fn n_u(&self) -> usize {
        2
    }

    fn control_dt(&self) -> f64 {
        self.dt
    }

    fn input_bounds(&self) -> &[(f64, f64)] {
        &self.bounds
    }

    fn plan_step(&self, x: &[f64], u: &[f64], out: &mut [f64]) -> Result<()> {
        check_input_bounds(&self.bounds, u)?;
        self.integrate(x, u, self.plan_substeps, out)
    }

    fn sim_step(&self, x: &[f64], u: &[f64], w_ctrl: &[f64], out: &mut [f64]) -> Result<()> {
        check_input_bounds(&self.bounds, u)?;
        let noisy = [u[0] + w_ctrl[0], u[1] + w_ctrl[1]];
        self.integrate(x, &noisy, self.sim_substeps, out)
    }
}

pub struct RacingEnv {
    config: RacingConfig,
    plant: FrenetPlant,
    target_s: f64,
    half_width: f64,
}

impl RacingEnv {
    pub fn new(track: TrackGeometry, params: VehicleParams, config: RacingConfig) -> Result<Self> {
        params.validate()?;
        if !(config.control_dt > 0.0) || config.plan_substeps == 0 || config.sim_substeps == 0 {
            return Err(Error::Config("racing timing parameters must be positive".into()));
        }
        if !(config.laps > 0.0) {
            return Err(Error::Config("laps must be positive".into()));
        }
        let target_s = config.laps * track.total_length();
        let half_width = track.half_width();
        let bounds = [
            (-params.a_max, params.a_max),
            (params.steer_rate_min, params.steer_rate_max),
        ];
        let plant = FrenetPlant {
            track,
            params,
            dt: config.control_dt,
            plan_substeps: config.plan_substeps,
            sim_substeps: config.sim_substeps,
            bounds,
        };
        Ok(Self { config, plant, target_s, half_width })
    }

    pub fn track(&self) -> &TrackGeometry {
        self.plant.track()
    }

    pub fn config(&self) -> &RacingConfig {
        &self.config
    }

    pub fn target_s(&self) -> f64 {
        self.target_s
    }
}

impl Environment for RacingEnv {
    fn name(&self) -> &str {
        "racing"
    }

    fn plant(&self) -> &dyn Plant {
        &self.plant
    }

    fn disturbance(&self) -> &DisturbanceModel {
        &self.config.disturbance
    }

    fn initial_state(&self) -> StateVector {
        StateVector::from_checked(vec![0.0, 0.0, self.config.initial_speed, 0.0, 0.0, 0.0, 0.0])
    }

    fn admissible_distance(&self, x: &[f64]) -> f64 {
        (x[1].abs() - self.half_width).max(0.0)
    }

    fn in_target(&self, x: &[f64]) -> bool {
        x[0] >= self.target_s
    }

    fn stage_cost(&self, x: &[f64], _u: &[f64]) -> f64 {
        if self.in_target(x) {
            0.0
        } else {
            1.0
        }
    }

    /// Centerline tracker: curvature-preview feedforward on the steering
    /// angle plus heading and cross-track corrections, with a speed target
    /// capped by a comfortable lateral acceleration.
    fn demonstration_control(&self, x: &[f64], _step: usize) -> ControlVector {
        let p = self.plant.params();
        let track = self.plant.track();
        let (s, e_y, v, delta, e_psi) = (x[0], x[1], x[2], x[3], x[4]);
        let kappa_ahead = track.curvature(s + self.config.demo_lookahead * v.max(0.5));
        let v_ref = if kappa_ahead.abs() > 1e-9 {
            self.config.demo_speed.min((2.0 / kappa_ahead.abs()).sqrt())
        } else {
            self.config.demo_speed
        };
        let a = (1.5 * (v_ref - v)).clamp(-p.a_max, p.a_max);
        let delta_des = (p.wheelbase() * kappa_ahead).atan()
            - 1.2 * e_psi
            - (0.6 * e_y / v.max(1.0)).atan();
        let delta_des = delta_des.clamp(p.steer_min, p.steer_max);
        let rate = (4.0 * (delta_des - delta)).clamp(p.steer_rate_min, p.steer_rate_max);
        ControlVector::from_checked(vec![a, rate])
    }

    fn demonstration_step_cap(&self) -> usize {
        // Generous: assumes the tracker averages at least 1 m/s.
        (self.target_s / self.config.control_dt).ceil() as usize
    }

    fn state_scales(&self) -> Vec<f64> {
        vec![3.0, 0.9, 1.5, 0.15, 0.25, 0.4, 0.04]
    }
}
