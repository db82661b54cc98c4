//! Dynamic single-track vehicle model with load transfer and a low-speed
//! kinematic fallback.
//!
//! State layout [p_x, p_y, v, delta, psi, psi_dot, beta]; inputs
//! [a_long, steer_rate]. Input shaping (acceleration envelope above the
//! switching speed, steering stops at the rack limits) happens inside the
//! derivative evaluation, so every integration stage sees feasible inputs.
//! Below 1 m/s the slip-angle dynamics lose validity (terms scale with 1/v),
//! so the derivative blends linearly into a kinematic model between 1.0 and
//! 0.5 m/s.

use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::path::Path;

const GRAVITY: f64 = 9.81;

/// Speed interval over which the kinematic and dynamic derivatives blend.
const BLEND_LOW: f64 = 0.5;
const BLEND_HIGH: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleParams {
    /// Mass in kg.
    pub m: f64,
    /// Yaw inertia in kg m^2.
    pub i_z: f64,
    /// Distance from center of gravity to the front axle.
    pub l_f: f64,
    /// Distance from center of gravity to the rear axle.
    pub l_r: f64,
    /// Height of the center of gravity.
    pub h_cg: f64,
    /// Front cornering stiffness coefficient (1/rad).
    pub c_sf: f64,
    /// Rear cornering stiffness coefficient (1/rad).
    pub c_sr: f64,
    /// Friction coefficient.
    pub mu: f64,
    pub steer_min: f64,
    pub steer_max: f64,
    pub steer_rate_min: f64,
    pub steer_rate_max: f64,
    pub v_min: f64,
    pub v_max: f64,
    /// Speed above which engine power limits the feasible acceleration.
    pub v_switch: f64,
    pub a_max: f64,
}

impl VehicleParams {
    /// Compact hatchback parameter set used by the lap experiments.
    pub fn vehicle_id_1() -> Self {
        Self {
            m: 1225.887,
            i_z: 1538.853_371,
            l_f: 0.883,
            l_r: 1.508,
            h_cg: 0.557,
            c_sf: 20.89,
            c_sr: 20.89,
            mu: 1.0489,
            steer_min: -0.910,
            steer_max: 0.910,
            steer_rate_min: -0.4,
            steer_rate_max: 0.4,
            v_min: -13.9,
            v_max: 45.8,
            v_switch: 4.755,
            a_max: 11.5,
        }
    }

    pub fn wheelbase(&self) -> f64 {
        self.l_f + self.l_r
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let params: Self = serde_json::from_str(&text)?;
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("m", self.m),
            ("i_z", self.i_z),
            ("l_f", self.l_f),
            ("l_r", self.l_r),
            ("h_cg", self.h_cg),
            ("c_sf", self.c_sf),
            ("c_sr", self.c_sr),
            ("mu", self.mu),
            ("a_max", self.a_max),
            ("v_switch", self.v_switch),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("vehicle parameter {name} must be positive")));
            }
        }
        if self.steer_min >= self.steer_max || self.steer_rate_min >= self.steer_rate_max {
            return Err(Error::Config("vehicle steering bounds are inverted".into()));
        }
        if self.v_min >= self.v_max {
            return Err(Error::Config("vehicle speed bounds are inverted".into()));
        }
        Ok(())
    }

    /// Steering-rate shaping: the rack stops at its limits.
    pub fn shape_steer_rate(&self, delta: f64, v_delta: f64) -> f64 {
        if (delta <= self.steer_min && v_delta < 0.0)
            || (delta >= self.steer_max && v_delta > 0.0)
        {
            0.0
        } else {
            v_delta.clamp(self.steer_rate_min, self.steer_rate_max)
        }
    }

    /// Acceleration shaping: power-limited above the switching speed and cut
    /// to zero at the speed envelope.
    pub fn shape_accel(&self, v: f64, a: f64) -> f64 {
        let pos_limit = if v > self.v_switch {
            self.a_max * self.v_switch / v
        } else {
            self.a_max
        };
        if (v <= self.v_min && a < 0.0) || (v >= self.v_max && a > 0.0) {
            0.0
        } else {
            a.clamp(-self.a_max, pos_limit)
        }
    }
}

/// Rates of the non-position coordinates plus the branch blend weight. The
/// lap dynamics reuse these so the planar and track-relative frames share the
/// slip physics bit for bit.
#[derive(Debug, Clone, Copy)]
pub struct BodyRates {
    pub dv: f64,
    pub d_delta: f64,
    /// Heading angle rate; the kinematic branch substitutes the kinematic
    /// yaw rate for the yaw-rate state.
    pub d_psi: f64,
    pub dd_psi: f64,
    pub d_beta: f64,
    /// Weight of the dynamic branch in [0, 1]; position rates mix the two
    /// branch velocity directions with this weight.
    pub dyn_weight: f64,
}

pub fn body_rates(
    p: &VehicleParams,
    v: f64,
    delta: f64,
    psi_dot: f64,
    beta: f64,
    u: &[f64],
) -> BodyRates {
    let a = p.shape_accel(v, u[0]);
    let v_delta = p.shape_steer_rate(delta, u[1]);
    let w = ((v.abs() - BLEND_LOW) / (BLEND_HIGH - BLEND_LOW)).clamp(0.0, 1.0);
    let lwb = p.wheelbase();
    let (mut d_psi, mut dd_psi, mut d_beta) = (0.0, 0.0, 0.0);
    if w < 1.0 {
        // Kinematic branch, regular at v = 0. The slip angle relaxes toward
        // atan(l_r tan(delta) / lwb) and the yaw accel is the derivative of
        // the kinematic yaw rate v cos(beta) tan(delta) / lwb.
        let cos_d2 = delta.cos() * delta.cos();
        let tan_d = delta.tan();
        d_beta = (p.l_r * v_delta) / (lwb * cos_d2 * (1.0 + (tan_d * p.l_r / lwb).powi(2)));
        dd_psi = (a * beta.cos() * tan_d - v * beta.sin() * tan_d * d_beta
            + v * beta.cos() * v_delta / cos_d2)
            / lwb;
        d_psi = v * tan_d / lwb;
    }
    if w > 0.0 {
        // Dynamic branch with longitudinal load transfer on the axle loads.
        let load_f = GRAVITY * p.l_r - a * p.h_cg;
        let load_r = GRAVITY * p.l_f + a * p.h_cg;
        let cf = p.c_sf * load_f;
        let cr = p.c_sr * load_r;
        let k_yaw = p.mu * p.m / (p.i_z * lwb);
        let dd_psi_dyn = k_yaw
            * (p.l_f * cf * delta + (p.l_r * cr - p.l_f * cf) * beta
                - (p.l_f * p.l_f * cf + p.l_r * p.l_r * cr) * psi_dot / v);
        let k_slip = p.mu / (v * lwb);
        let d_beta_dyn = k_slip * (cf * delta - (cr + cf) * beta)
            + (p.mu * (cr * p.l_r - cf * p.l_f) / (v * v * lwb) - 1.0) * psi_dot;
        d_psi = (1.0 - w) * d_psi + w * psi_dot;
        dd_psi = (1.0 - w) * dd_psi + w * dd_psi_dyn;
        d_beta = (1.0 - w) * d_beta + w * d_beta_dyn;
    }
    BodyRates { dv: a, d_delta: v_delta, d_psi, dd_psi, d_beta, dyn_weight: w }
}

/// Shaped time derivative of the Cartesian single-track state.
pub fn single_track_derivative(p: &VehicleParams, x: &[f64], u: &[f64], out: &mut [f64; 7]) {
    let (v, psi, beta) = (x[2], x[4], x[6]);
    let r = body_rates(p, v, x[3], x[5], beta, u);
    let w = r.dyn_weight;
    out[0] = v * ((1.0 - w) * psi.cos() + w * (psi + beta).cos());
    out[1] = v * ((1.0 - w) * psi.sin() + w * (psi + beta).sin());
    out[2] = r.dv;
    out[3] = r.d_delta;
    out[4] = r.d_psi;
    out[5] = r.dd_psi;
    out[6] = r.d_beta;
}

/// One RK4 step of length dt, split into `substeps` substeps.
pub fn single_track_step(
    p: &VehicleParams,
    x: &[f64],
    u: &[f64],
    dt: f64,
    substeps: usize,
) -> Result<[f64; 7]> {
    debug_assert_eq!(x.len(), 7);
    let mut cur = [0.0; 7];
    cur.copy_from_slice(x);
    let h = dt / substeps as f64;
    let mut k1 = [0.0; 7];
    let mut k2 = [0.0; 7];
    let mut k3 = [0.0; 7];
    let mut k4 = [0.0; 7];
    let mut tmp = [0.0; 7];
    for _ in 0..substeps {
        single_track_derivative(p, &cur, u, &mut k1);
        for i in 0..7 {
            tmp[i] = cur[i] + 0.5 * h * k1[i];
        }
        single_track_derivative(p, &tmp, u, &mut k2);
        for i in 0..7 {
            tmp[i] = cur[i] + 0.5 * h * k2[i];
        }
        single_track_derivative(p, &tmp, u, &mut k3);
        for i in 0..7 {
            tmp[i] = cur[i] + h * k3[i];
        }
        single_track_derivative(p, &tmp, u, &mut k4);
        for i in 0..7 {
            cur[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
    }
    if cur.iter().any(|v| !v.is_finite()) {
        return Err(Error::DynamicsDiverged);
    }
    Ok(cur)
}

/// Cartesian plant wrapper around the single-track step, used for validating
/// the track-relative dynamics against ground truth.
pub struct SingleTrackPlant {
    params: VehicleParams,
    dt: f64,
    substeps: usize,
    bounds: [(f64, f64); 2],
}

impl SingleTrackPlant {
    pub fn new(params: VehicleParams, dt: f64, substeps: usize) -> Self {
        let bounds = [
            (-params.a_max, params.a_max),
            (params.steer_rate_min, params.steer_rate_max),
        ];
        Self { params, dt, substeps, bounds }
    }

    pub fn params(&self) -> &VehicleParams {
        &self.params
    }
}

impl super::Plant for SingleTrackPlant {
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
        super::check_input_bounds(&self.bounds, u)?;
        let next = single_track_step(&self.params, x, u, self.dt, self.substeps)?;
        out.copy_from_slice(&next);
        Ok(())
    }

    fn sim_step(&self, x: &[f64], u: &[f64], w_ctrl: &[f64], out: &mut [f64]) -> Result<()> {
        super::check_input_bounds(&self.bounds, u)?;
        let noisy = [u[0] + w_ctrl[0], u[1] + w_ctrl[1]];
        let next = single_track_step(&self.params, x, &noisy, self.dt, self.substeps)?;
        out.copy_from_slice(&next);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p() -> VehicleParams {
        VehicleParams::vehicle_id_1()
    }

    #[test]
    fn straight_line_at_speed() {
        let p = p();
        let x = [0.0, 0.0, 8.0, 0.0, 0.3, 0.0, 0.0];
        let next = single_track_step(&p, &x, &[0.0, 0.0], 0.1, 5).unwrap();
        assert!((next[0] - 0.8 * 0.3_f64.cos()).abs() < 1e-9);
        assert!((next[1] - 0.8 * 0.3_f64.sin()).abs() < 1e-9);
        assert_eq!(next[2], 8.0);
        assert_eq!(next[5], 0.0);
        assert_eq!(next[6], 0.0);
    }

    #[test]
    fn steady_state_cornering_matches_linear_solve() {
        // For fixed v and delta with a = 0 the slip/yaw dynamics are linear,
        // so the analytic fixed point of the 2x2 system is exact. Long
        // integration of the full model must land on it.
        let p = p();
        let (v, delta) = (8.0, 0.03);
        let lwb = p.wheelbase();
        let load_f = GRAVITY * p.l_r;
        let load_r = GRAVITY * p.l_f;
        let cf = p.c_sf * load_f;
        let cr = p.c_sr * load_r;
        let k_yaw = p.mu * p.m / (p.i_z * lwb);
        let k_slip = p.mu / (v * lwb);
        // d/dt [beta; psi_dot] = A [beta; psi_dot] + b delta
        let a11 = -k_slip * (cr + cf);
        let a12 = p.mu * (cr * p.l_r - cf * p.l_f) / (v * v * lwb) - 1.0;
        let a21 = k_yaw * (p.l_r * cr - p.l_f * cf);
        let a22 = -k_yaw * (p.l_f * p.l_f * cf + p.l_r * p.l_r * cr) / v;
        let b1 = k_slip * cf * delta;
        let b2 = k_yaw * p.l_f * cf * delta;
        let det = a11 * a22 - a12 * a21;
        let beta_ss = (-b1 * a22 + b2 * a12) / det;
        let psi_dot_ss = (-a11 * b2 + a21 * b1) / det;

        let mut x = [0.0, 0.0, v, delta, 0.0, 0.0, 0.0];
        for _ in 0..2000 {
            x = single_track_step(&p, &x, &[0.0, 0.0], 0.01, 1).unwrap();
        }
        assert!((x[6] - beta_ss).abs() < 1e-8, "beta {} vs {beta_ss}", x[6]);
        assert!((x[5] - psi_dot_ss).abs() < 1e-8, "psi_dot {} vs {psi_dot_ss}", x[5]);
        assert_eq!(x[2], v);
    }

    #[test]
    fn rk4_converges_at_fourth_order() {
        // The slip dynamics stiffen as 1/v, so a fixed tolerance against a
        // fine reference is meaningless across the speed range. Check the
        // integrator the way its order predicts: halving the substep length
        // must shrink the error roughly sixteenfold, and the substep count
        // the lap simulation runs with must stay within millimetres per step.
        let p = p();
        use rand::Rng;
        let mut rng = crate::rng::stream(3, &[0]);
        for _ in 0..25 {
            let x = [
                rng.gen_range(-5.0..5.0),
                rng.gen_range(-5.0..5.0),
                rng.gen_range(2.0..10.0),
                rng.gen_range(-0.2..0.2),
                rng.gen_range(-3.0..3.0),
                rng.gen_range(-0.5..0.5),
                rng.gen_range(-0.1..0.1),
            ];
            let u = [rng.gen_range(-3.0..3.0), rng.gen_range(-0.3..0.3)];
            let reference = single_track_step(&p, &x, &u, 0.05, 256).unwrap();
            let err = |subs: usize| -> f64 {
                let y = single_track_step(&p, &x, &u, 0.05, subs).unwrap();
                (0..7).map(|i| (y[i] - reference[i]).abs()).fold(0.0, f64::max)
            };
            let (e2, e3, e4, e8) = (err(2), err(3), err(4), err(8));
            assert!(e3 < 1e-2, "3-substep error {e3:.3e} at v {:.2}", x[2]);
            if e8 > 1e-12 {
                assert!(e4 / e8 > 8.0, "e4 {e4:.3e} e8 {e8:.3e}");
                assert!(e2 / e8 > 100.0, "e2 {e2:.3e} e8 {e8:.3e}");
            }
        }
    }

    #[test]
    fn input_shaping_limits() {
        let p = p();
        // Above the switching speed the feasible acceleration shrinks.
        let v = 2.0 * p.v_switch;
        assert!((p.shape_accel(v, p.a_max) - p.a_max / 2.0).abs() < 1e-12);
        // Below it the full envelope applies.
        assert_eq!(p.shape_accel(2.0, p.a_max), p.a_max);
        // At the speed ceiling positive acceleration is cut.
        assert_eq!(p.shape_accel(p.v_max, 3.0), 0.0);
        assert_eq!(p.shape_accel(p.v_min, -3.0), 0.0);
        // Steering rack stops.
        assert_eq!(p.shape_steer_rate(p.steer_max, 0.2), 0.0);
        assert_eq!(p.shape_steer_rate(p.steer_max, -0.2), -0.2);
        assert_eq!(p.shape_steer_rate(0.0, 0.9), p.steer_rate_max);
    }

    #[test]
    fn blend_is_continuous_at_the_edges() {
        let p = p();
        let u = [1.0, 0.1];
        let mut lo = [0.0; 7];
        let mut hi = [0.0; 7];
        for (va, vb) in [(0.499, 0.501), (0.999, 1.001)] {
            let xa = [0.0, 0.0, va, 0.05, 0.2, 0.05, 0.01];
            let xb = [0.0, 0.0, vb, 0.05, 0.2, 0.05, 0.01];
            single_track_derivative(&p, &xa, &u, &mut lo);
            single_track_derivative(&p, &xb, &u, &mut hi);
            for i in 0..7 {
                assert!(
                    (lo[i] - hi[i]).abs() < 0.1,
                    "derivative jump at v={va}: coord {i} {} vs {}",
                    lo[i],
                    hi[i]
                );
            }
        }
    }

    #[test]
    fn low_speed_is_kinematic() {
        let p = p();
        let x = [0.0, 0.0, 0.2, 0.1, 0.0, 0.05, 0.02];
        let mut f = [0.0; 7];
        single_track_derivative(&p, &x, &[0.5, 0.1], &mut f);
        // Yaw angle derivative equals the kinematic rate, not the state.
        assert!((f[4] - 0.2 * 0.1_f64.tan() / p.wheelbase()).abs() < 1e-12);
        assert!(f.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn params_json_round_trip() {
        let p = p();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("veh.json");
        std::fs::write(&path, serde_json::to_string_pretty(&p).unwrap()).unwrap();
        let loaded = VehicleParams::from_json_file(&path).unwrap();
        assert_eq!(p, loaded);
    }

    #[test]
    fn invalid_params_rejected() {
        let mut bad = p();
        bad.m = -1.0;
        assert!(bad.validate().is_err());
        let mut bad2 = p();
        bad2.steer_min = bad2.steer_max;
        assert!(bad2.validate().is_err());
    }
}
