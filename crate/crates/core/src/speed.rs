//! Reference-speed assignment: curvature-based dynamic and no-slip kinematic
//! limits, the legal cap, and a backward pass that keeps every deceleration
//! within reach of the brakes.

use thiserror::Error;

use crate::domain::{ReferencePath, VehicleParams};

/// Curvatures below this are treated as straight road (unbounded limit).
pub const KAPPA_EPS: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum SpeedError {
    #[error("turn radius {radius:.2} m at or below wheelbase {wheelbase:.2} m")]
    TurnRadiusBelowWheelbase { radius: f64, wheelbase: f64 },
}

/// Per-point limit breakdown.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpeedLimits {
    pub v_dyn: f64,
    pub v_kin: f64,
    pub v_set: f64,
    pub v_ref: f64,
}

/// Adhesion-limited curve speed `lambda_d * sqrt(g mu / |kappa|)`, with a
/// safety share `lambda_d` of the ideal limit. Unbounded on straight road.
pub fn dynamic_speed_limit(kappa: f64, params: &VehicleParams, lambda_d: f64) -> f64 {
    if kappa.abs() < KAPPA_EPS {
        return f64::INFINITY;
    }
    lambda_d * (params.g * params.mu / kappa.abs()).sqrt()
}

/// No-side-slip speed limit of the steering geometry,
/// `sqrt(mu g sqrt(1 + L^2 kappa^2) * sqrt(R^2 - L^2))` with `R = 1/|kappa|`.
pub fn kinematic_speed_limit(kappa: f64, params: &VehicleParams) -> Result<f64, SpeedError> {
    if kappa.abs() < KAPPA_EPS {
        return Ok(f64::INFINITY);
    }
    let wheelbase = params.wheelbase();
    let radius = 1.0 / kappa.abs();
    if radius <= wheelbase {
        return Err(SpeedError::TurnRadiusBelowWheelbase { radius, wheelbase });
    }
    let bend = (1.0 + wheelbase * wheelbase * kappa * kappa).sqrt();
    let reach = (radius * radius - wheelbase * wheelbase).sqrt();
    Ok((params.mu * params.g * bend * reach).sqrt())
}

/// Largest front-wheel angle that keeps the tires linear at speed `vx`:
/// `min(0.4 g L / vx^2, L / r_min)`.
pub fn front_wheel_limit(vx: f64, params: &VehicleParams, r_min: f64) -> f64 {
    let wheelbase = params.wheelbase();
    (0.4 * params.g * wheelbase / (vx * vx)).min(wheelbase / r_min)
}

/// Understeer gain of the chassis; positive values mean yaw response
/// saturates as speed grows. Diagnostic only.
pub fn understeer_gain(params: &VehicleParams) -> f64 {
    let l = params.wheelbase();
    params.m / (l * l) * (params.lr / params.cf - params.lf / params.cr)
}

/// Steady-state yaw-rate-per-steer gain `(vx/L) / (1 + K vx^2)`.
/// Diagnostic only.
pub fn steering_gain(vx: f64, params: &VehicleParams) -> f64 {
    let k = understeer_gain(params);
    (vx / params.wheelbase()) / (1.0 + k * vx * vx)
}

/// The limit stack for one curvature sample, before the backward pass.
pub fn speed_limits(kappa: f64, params: &VehicleParams, lambda_d: f64, v_set: f64) -> SpeedLimits {
    let v_dyn = dynamic_speed_limit(kappa, params, lambda_d);
    // A turn tighter than the wheelbase cannot be negotiated at any speed.
    let v_kin = kinematic_speed_limit(kappa, params).unwrap_or(0.0);
    SpeedLimits {
        v_dyn,
        v_kin,
        v_set,
        v_ref: v_set.min(v_dyn).min(v_kin),
    }
}

/// Fills `v_ref` on every point: the minimum of the legal cap and both curve
/// limits, then a backward pass enforcing
/// `v(i)^2 <= v(i+1)^2 + 2 a_dec_max ds` so braking for a curve always starts
/// early enough. The final point is a stop.
pub fn assign_reference_speeds(
    path: ReferencePath,
    v_set: f64,
    lambda_d: f64,
    a_dec_max: f64,
    params: &VehicleParams,
) -> ReferencePath {
    let n = path.points().len();
    let mut v: Vec<f64> = path
        .points()
        .iter()
        .map(|p| speed_limits(p.curvature, params, lambda_d, v_set).v_ref)
        .collect();
    v[n - 1] = 0.0;
    let s: Vec<f64> = path.points().iter().map(|p| p.s).collect();
    for i in (0..n - 1).rev() {
        let reachable = (v[i + 1] * v[i + 1] + 2.0 * a_dec_max * (s[i + 1] - s[i])).sqrt();
        if v[i] > reachable {
            v[i] = reachable;
        }
    }
    let mut iter = v.into_iter();
    path.map_points(|mut p| {
        p.v_ref = iter.next().unwrap();
        p
    })
}
