//! Conversions between Cartesian vehicle states and track-relative ones.
//!
//! Lap states replace position and heading with (arc position s, lateral
//! offset e_y, heading error e_psi); the remaining vehicle coordinates pass
//! through unchanged. State layouts:
//!   Cartesian: [p_x, p_y, v, delta, psi, psi_dot, beta]
//!   Frenet:    [s,   e_y, v, delta, e_psi, psi_dot, beta]

use super::track::TrackGeometry;
use crate::Result;
use std::f64::consts::PI;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrenetPose {
    pub s: f64,
    pub e_y: f64,
    pub e_psi: f64,
}

/// Wrap an angle into (-pi, pi].
pub fn wrap_angle(a: f64) -> f64 {
    let w = (-a + PI).rem_euclid(2.0 * PI);
    PI - w
}

/// Convert a Cartesian vehicle state to the track-relative frame. With a
/// hint, the arc position is unwrapped to stay on the same lap count.
pub fn to_frenet(track: &TrackGeometry, cart: &[f64], s_hint: Option<f64>) -> Result<Vec<f64>> {
    let (s_wrapped, e_y) = track.project([cart[0], cart[1]])?;
    let s = match s_hint {
        Some(h) => track.unwrap_near(s_wrapped, h),
        None => s_wrapped,
    };
    let e_psi = wrap_angle(cart[4] - track.tangent_angle(s_wrapped));
    let mut out = cart.to_vec();
    out[0] = s;
    out[1] = e_y;
    out[4] = e_psi;
    Ok(out)
}

/// Convert a track-relative state back to Cartesian coordinates.
pub fn from_frenet(track: &TrackGeometry, frenet: &[f64]) -> Vec<f64> {
    let p = track.point_at(frenet[0], frenet[1]);
    let psi = wrap_angle(track.tangent_angle(frenet[0]) + frenet[4]);
    let mut out = frenet.to_vec();
    out[0] = p[0];
    out[1] = p[1];
    out[4] = psi;
    out
}
