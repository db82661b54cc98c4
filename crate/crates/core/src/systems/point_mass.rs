//! Planar point mass with acceleration inputs and a disk obstacle.
//!
//! State [p_x, p_y, v_x, v_y], input [a_x, a_y] with |a| ≤ 1 per axis. The
//! discrete update is the exact zero-order-hold double integrator, so the
//! planning model and the simulation model coincide. The task is minimum time
//! from the origin to a ball around [60, 0, 0, 0] while staying outside the
//! obstacle disk.

use super::{check_input_bounds, DisturbanceModel, Environment, Plant};
use crate::types::{ControlVector, StateVector};
use crate::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointMassConfig {
    pub dt: f64,
    pub accel_limit: f64,
    pub obstacle_center: [f64; 2],
    pub obstacle_radius: f64,
    pub target_state: [f64; 4],
    pub target_pos_tol: f64,
    pub target_vel_tol: f64,
    pub disturbance: DisturbanceModel,
    /// Peak reference speed of the scripted demonstration.
    pub demo_speed: f64,
    /// Reference acceleration of the demonstration speed ramp.
    pub demo_accel: f64,
}

impl Default for PointMassConfig {
    fn default() -> Self {
        Self {
            dt: 0.1,
            accel_limit: 1.0,
            obstacle_center: [30.0, 0.0],
            obstacle_radius: 10.0,
            target_state: [60.0, 0.0, 0.0, 0.0],
            target_pos_tol: 1.0,
            target_vel_tol: 0.5,
            disturbance: DisturbanceModel::none(4, 2),
            demo_speed: 2.6,
            demo_accel: 0.45,
        }
    }
}

/// Exact zero-order-hold double integrator.
#[derive(Debug, Clone)]
pub struct PointMassPlant {
    dt: f64,
    bounds: [(f64, f64); 2],
}

impl PointMassPlant {
    pub fn new(dt: f64, accel_limit: f64) -> Self {
        Self { dt, bounds: [(-accel_limit, accel_limit); 2] }
    }

    fn step(&self, x: &[f64], a: [f64; 2], out: &mut [f64]) -> Result<()> {
        let dt = self.dt;
        out[0] = x[0] + x[2] * dt + 0.5 * a[0] * dt * dt;
        out[1] = x[1] + x[3] * dt + 0.5 * a[1] * dt * dt;
        out[2] = x[2] + a[0] * dt;
        out[3] = x[3] + a[1] * dt;
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::DynamicsDiverged);
        }
        Ok(())
    }
}

impl Plant for PointMassPlant {
    fn n_x(&self) -> usize {
        4
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
        self.step(x, [u[0], u[1]], out)
    }

    fn sim_step(&self, x: &[f64], u: &[f64], w_ctrl: &[f64], out: &mut [f64]) -> Result<()> {
        check_input_bounds(&self.bounds, u)?;
        self.step(x, [u[0] + w_ctrl[0], u[1] + w_ctrl[1]], out)
    }
}

/// Scripted demonstration: a PD tracker following a reference point that
/// travels a rounded detour path at a trapezoidal speed profile.
#[derive(Debug, Clone)]
struct DemoPath {
    waypoints: Vec<[f64; 2]>,
    cumulative: Vec<f64>,
    total_len: f64,
    speed: f64,
    accel: f64,
}

impl DemoPath {
    fn new(start: [f64; 2], goal: [f64; 2], speed: f64, accel: f64) -> Self {
        // Detour above the obstacle with gentle corner angles so the PD
        // tracker's transient stays well clear of the disk.
        let waypoints = vec![
            start,
            [9.0, 7.5],
            [13.0, 11.0],
            [17.0, 13.0],
            [30.0, 13.8],
            [43.0, 13.0],
            [47.0, 11.0],
            [52.0, 7.5],
            goal,
        ];
        let mut cumulative = vec![0.0];
        for w in waypoints.windows(2) {
            let d = ((w[1][0] - w[0][0]).powi(2) + (w[1][1] - w[0][1]).powi(2)).sqrt();
            cumulative.push(cumulative.last().unwrap() + d);
        }
        let total_len = *cumulative.last().unwrap();
        Self { waypoints, cumulative, total_len, speed, accel }
    }

    /// Reference arc position and speed at time t (trapezoidal profile that
    /// ends at rest at the path end).
    fn profile(&self, t: f64) -> (f64, f64) {
        let ramp_t = self.speed / self.accel;
        let ramp_d = 0.5 * self.accel * ramp_t * ramp_t;
        let (cruise_d, peak) = if 2.0 * ramp_d >= self.total_len {
            (0.0, (self.accel * self.total_len).sqrt())
        } else {
            (self.total_len - 2.0 * ramp_d, self.speed)
        };
        let ramp_t = peak / self.accel;
        let ramp_d = 0.5 * self.accel * ramp_t * ramp_t;
        let cruise_t = cruise_d / peak;
        let (sigma, v) = if t < ramp_t {
            (0.5 * self.accel * t * t, self.accel * t)
        } else if t < ramp_t + cruise_t {
            (ramp_d + peak * (t - ramp_t), peak)
        } else {
            let td = (t - ramp_t - cruise_t).min(ramp_t);
            (ramp_d + cruise_d + peak * td - 0.5 * self.accel * td * td, peak - self.accel * td)
        };
        (sigma.min(self.total_len), v.max(0.0))
    }

    /// Point and unit tangent at arc position sigma.
    fn point(&self, sigma: f64) -> ([f64; 2], [f64; 2]) {
        let sigma = sigma.clamp(0.0, self.total_len);
        let seg = match self.cumulative.binary_search_by(|c| c.partial_cmp(&sigma).unwrap()) {
            Ok(i) => i.min(self.waypoints.len() - 2),
            Err(i) => i.saturating_sub(1).min(self.waypoints.len() - 2),
        };
        let a = self.waypoints[seg];
        let b = self.waypoints[seg + 1];
        let len = (self.cumulative[seg + 1] - self.cumulative[seg]).max(1e-12);
        let frac = (sigma - self.cumulative[seg]) / len;
        let dir = [(b[0] - a[0]) / len, (b[1] - a[1]) / len];
        ([a[0] + (b[0] - a[0]) * frac, a[1] + (b[1] - a[1]) * frac], dir)
    }
}

pub struct PointMassEnv {
    config: PointMassConfig,
    plant: PointMassPlant,
    demo: DemoPath,
}

impl PointMassEnv {
    pub fn new(config: PointMassConfig) -> Self {
        let plant = PointMassPlant::new(config.dt, config.accel_limit);
        let demo = DemoPath::new(
            [0.0, 0.0],
            [config.target_state[0], config.target_state[1]],
            config.demo_speed,
            config.demo_accel,
        );
        Self { config, plant, demo }
    }

    pub fn config(&self) -> &PointMassConfig {
        &self.config
    }

    pub fn obstacle(&self) -> ([f64; 2], f64) {
        (self.config.obstacle_center, self.config.obstacle_radius)
    }
}

impl Environment for PointMassEnv {
    fn name(&self) -> &str {
        "point_mass"
    }

    fn plant(&self) -> &dyn Plant {
        &self.plant
    }

    fn disturbance(&self) -> &DisturbanceModel {
        &self.config.disturbance
    }

    fn initial_state(&self) -> StateVector {
        StateVector::from_checked(vec![0.0; 4])
    }

    fn admissible_distance(&self, x: &[f64]) -> f64 {
        let dx = x[0] - self.config.obstacle_center[0];
        let dy = x[1] - self.config.obstacle_center[1];
        (self.config.obstacle_radius - (dx * dx + dy * dy).sqrt()).max(0.0)
    }

    fn in_target(&self, x: &[f64]) -> bool {
        let t = &self.config.target_state;
        let dp = ((x[0] - t[0]).powi(2) + (x[1] - t[1]).powi(2)).sqrt();
        let dv = ((x[2] - t[2]).powi(2) + (x[3] - t[3]).powi(2)).sqrt();
        dp <= self.config.target_pos_tol && dv <= self.config.target_vel_tol
    }

    fn stage_cost(&self, x: &[f64], _u: &[f64]) -> f64 {
        if self.in_target(x) {
            0.0
        } else {
            1.0
        }
    }

    fn demonstration_control(&self, x: &[f64], step: usize) -> ControlVector {
        let t = step as f64 * self.config.dt;
        let (sigma, v_ref) = self.demo.profile(t);
        let (p_ref, dir) = self.demo.point(sigma);
        let kp = 0.4;
        let kd = 1.2;
        let lim = self.config.accel_limit;
        let ax = kp * (p_ref[0] - x[0]) + kd * (v_ref * dir[0] - x[2]);
        let ay = kp * (p_ref[1] - x[1]) + kd * (v_ref * dir[1] - x[3]);
        ControlVector::from_checked(vec![ax.clamp(-lim, lim), ay.clamp(-lim, lim)])
    }

    fn demonstration_step_cap(&self) -> usize {
        let ramp = self.config.demo_speed / self.config.demo_accel;
        let nominal = self.demo.total_len / self.config.demo_speed + ramp;
        ((nominal * 2.5) / self.config.dt).ceil() as usize
    }

    fn state_scales(&self) -> Vec<f64> {
        vec![20.0, 8.0, 2.0, 1.5]
    }
}
