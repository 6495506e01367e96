//! Simulation plant: continuous two-degree-of-freedom lateral error dynamics,
//! global pose propagation, path-error projection, steady-state slip gain,
//! preview deviation with slip compensation, a measurement delay line and an
//! idealized longitudinal speed loop.
//!
//! Sign conventions are fixed by the error-state equations and used
//! consistently everywhere: body +y is the driver's left, heading and yaw are
//! counter-clockwise positive, and the deviations are desired-minus-actual,
//! so `dy` is positive with the vehicle displaced to the path's right and
//! `dphi` positive with the nose pointing right of the path tangent.

use std::collections::VecDeque;

use nalgebra::{Matrix4, Matrix4x2, Vector4};
use thiserror::Error;

use crate::domain::{normalize_angle, Pose, ReferencePath, VehicleParams};

/// Below this longitudinal speed the lateral dynamic model is singular and
/// the plant falls back to pure kinematics.
pub const VX_MIN_DYNAMIC: f64 = 0.5;

#[derive(Debug, Error)]
pub enum PlantError {
    #[error("slip-gain denominator vanished at vx = {vx:.2} m/s (critical speed)")]
    CriticalSpeed { vx: f64 },
    #[error("steering angle {delta:.3} rad out of kinematic range")]
    SteeringOutOfRange { delta: f64 },
    #[error("pose diverged {distance:.2} m from the path (guard {guard} m)")]
    DivergedFromPath { distance: f64, guard: f64 },
}

/// Lateral tracking error state `(dy, ydot, dphi, phidot)`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LateralErrorState {
    /// Current lateral deviation (m), desired minus actual.
    pub dy: f64,
    /// Body-frame lateral velocity (m/s).
    pub ydot: f64,
    /// Yaw deviation (rad), desired minus actual.
    pub dphi: f64,
    /// Yaw rate (rad/s).
    pub phidot: f64,
}

impl LateralErrorState {
    pub fn new(dy: f64, ydot: f64, dphi: f64, phidot: f64) -> Self {
        LateralErrorState {
            dy,
            ydot,
            dphi: normalize_angle(dphi),
            phidot,
        }
    }

    pub fn as_vector(&self) -> Vector4<f64> {
        Vector4::new(self.dy, self.ydot, self.dphi, self.phidot)
    }
}

/// Continuous state-space form of the error dynamics at one operating point.
/// Outputs are `(dy, dphi, y_l2_slipcomp, phidot)`; inputs are
/// `(delta_f, phidot_des)`.
#[derive(Debug, Clone, PartialEq)]
pub struct StateSpace {
    pub a: Matrix4<f64>,
    pub b: Matrix4x2<f64>,
    pub c: Matrix4<f64>,
    pub d: Matrix4x2<f64>,
    pub vx_at_build: f64,
    pub l_eff_at_build: f64,
}

/// Body-frame lateral and yaw accelerations of the two-degree-of-freedom
/// model at constant longitudinal speed.
pub fn body_accelerations(
    ydot: f64,
    phidot: f64,
    delta_f: f64,
    vx: f64,
    p: &VehicleParams,
) -> (f64, f64) {
    let yddot = -(p.cf + p.cr) / (vx * p.m) * ydot
        + (-vx - (p.cf * p.lf - p.cr * p.lr) / (vx * p.m)) * phidot
        + p.cf / p.m * delta_f;
    let phiddot = -(p.cf * p.lf - p.cr * p.lr) / (p.iz * vx) * ydot
        - (p.cf * p.lf * p.lf + p.cr * p.lr * p.lr) / (p.iz * vx) * phidot
        + p.cf * p.lf / p.iz * delta_f;
    (yddot, phiddot)
}

/// Right-hand side of the error-state dynamics:
/// `d(dy) = -ydot + vx*dphi` and `d(dphi) = phidot_des - phidot`, with the
/// body accelerations driving `ydot` and `phidot`.
pub fn lateral_derivative(
    state: &LateralErrorState,
    delta_f: f64,
    phidot_des: f64,
    vx: f64,
    p: &VehicleParams,
) -> [f64; 4] {
    let (yddot, phiddot) = body_accelerations(state.ydot, state.phidot, delta_f, vx, p);
    [
        -state.ydot + vx * state.dphi,
        yddot,
        phidot_des - state.phidot,
        phiddot,
    ]
}

/// Steady-state side-slip gain `beta = ydot / (delta_f * vx)` of the
/// two-degree-of-freedom model.
pub fn slip_gain(vx: f64, p: &VehicleParams) -> Result<f64, PlantError> {
    let l = p.wheelbase();
    let num = p.cf * (p.cr * p.lr * l - p.lf * p.m * vx * vx);
    let den = p.cf * p.cr * l * l + p.m * vx * vx * (p.cr * p.lr - p.cf * p.lf);
    if den.abs() < 1e-9 * p.cf * p.cr * l * l {
        return Err(PlantError::CriticalSpeed { vx });
    }
    Ok(num / den)
}

/// Builds the continuous state space at operating point `(vx, l_eff)`.
pub fn build_state_space(
    vx: f64,
    l_eff: f64,
    p: &VehicleParams,
) -> Result<StateSpace, PlantError> {
    let beta = slip_gain(vx, p)?;
    let a = Matrix4::new(
        0.0, -1.0, vx, 0.0,
        0.0, -(p.cf + p.cr) / (vx * p.m), 0.0, -vx - (p.cf * p.lf - p.cr * p.lr) / (vx * p.m),
        0.0, 0.0, 0.0, -1.0,
        0.0, -(p.cf * p.lf - p.cr * p.lr) / (p.iz * vx), 0.0, -(p.cf * p.lf * p.lf + p.cr * p.lr * p.lr) / (p.iz * vx),
    );
    let b = Matrix4x2::new(
        0.0, 0.0,
        p.cf / p.m, 0.0,
        0.0, 1.0,
        p.cf * p.lf / p.iz, 0.0,
    );
    let c = Matrix4::new(
        1.0, 0.0, 0.0, 0.0,
        0.0, 0.0, 1.0, 0.0,
        1.0, 0.0, l_eff, 0.0,
        0.0, 0.0, 0.0, 1.0,
    );
    let d = Matrix4x2::new(
        0.0, 0.0,
        0.0, 0.0,
        -l_eff * beta, l_eff * l_eff / (2.0 * vx),
        0.0, 0.0,
    );
    Ok(StateSpace {
        a,
        b,
        c,
        d,
        vx_at_build: vx,
        l_eff_at_build: l_eff,
    })
}

/// Predicted lateral deviation at preview distance `l_eff`, compensated for
/// body side slip:
/// `l_eff^2 * phidot_des / (2 vx) - beta * l_eff * delta_f + dy + l_eff * dphi`.
pub fn preview_deviation(
    state: &LateralErrorState,
    delta_f: f64,
    phidot_des: f64,
    vx: f64,
    l_eff: f64,
    p: &VehicleParams,
) -> Result<f64, PlantError> {
    let beta = slip_gain(vx, p)?;
    Ok(l_eff * l_eff * phidot_des / (2.0 * vx) - beta * l_eff * delta_f
        + state.dy
        + l_eff * state.dphi)
}

/// One RK4 step of the kinematic bicycle at constant speed.
pub fn propagate_pose(
    pose: &Pose,
    delta_f: f64,
    v: f64,
    ts: f64,
    p: &VehicleParams,
) -> Result<Pose, PlantError> {
    if delta_f.abs() >= 89f64.to_radians() {
        return Err(PlantError::SteeringOutOfRange { delta: delta_f });
    }
    let yaw_rate = v * delta_f.tan() / p.wheelbase();
    let deriv = |theta: f64| (v * theta.cos(), v * theta.sin(), yaw_rate);
    let (k1x, k1y, k1t) = deriv(pose.theta);
    let (k2x, k2y, k2t) = deriv(pose.theta + 0.5 * ts * k1t);
    let (k3x, k3y, k3t) = deriv(pose.theta + 0.5 * ts * k2t);
    let (k4x, k4y, k4t) = deriv(pose.theta + ts * k3t);
    Ok(Pose::new(
        pose.x + ts / 6.0 * (k1x + 2.0 * k2x + 2.0 * k3x + k4x),
        pose.y + ts / 6.0 * (k1y + 2.0 * k2y + 2.0 * k3y + k4y),
        pose.theta + ts / 6.0 * (k1t + 2.0 * k2t + 2.0 * k3t + k4t),
        v,
    ))
}

/// Full dynamic plant state: global pose plus the body-frame velocities the
/// pose propagation is driven by.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlantState {
    pub pose: Pose,
    pub ydot: f64,
    pub phidot: f64,
}

impl PlantState {
    pub fn at_rest(pose: Pose) -> Self {
        PlantState {
            pose,
            ydot: 0.0,
            phidot: 0.0,
        }
    }
}

/// One RK4 step of the coupled system (pose + body velocities) under the
/// dynamic tire model. Below [`VX_MIN_DYNAMIC`] the caller should use
/// [`propagate_pose`] instead.
pub fn dynamic_step(
    st: &PlantState,
    delta_f: f64,
    vx: f64,
    ts: f64,
    p: &VehicleParams,
) -> PlantState {
    // state: (x, y, theta, ydot, phidot)
    let f = |s: [f64; 5]| -> [f64; 5] {
        let (yddot, phiddot) = body_accelerations(s[3], s[4], delta_f, vx, p);
        [
            vx * s[2].cos() - s[3] * s[2].sin(),
            vx * s[2].sin() + s[3] * s[2].cos(),
            s[4],
            yddot,
            phiddot,
        ]
    };
    let s0 = [st.pose.x, st.pose.y, st.pose.theta, st.ydot, st.phidot];
    let add = |a: [f64; 5], k: [f64; 5], h: f64| {
        [a[0] + h * k[0], a[1] + h * k[1], a[2] + h * k[2], a[3] + h * k[3], a[4] + h * k[4]]
    };
    let k1 = f(s0);
    let k2 = f(add(s0, k1, 0.5 * ts));
    let k3 = f(add(s0, k2, 0.5 * ts));
    let k4 = f(add(s0, k3, ts));
    let mut out = [0.0; 5];
    for i in 0..5 {
        out[i] = s0[i] + ts / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    PlantState {
        pose: Pose::new(out[0], out[1], out[2], vx),
        ydot: out[3],
        phidot: out[4],
    }
}

/// Result of projecting a pose onto the reference path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    /// Lateral deviation (m), positive with the vehicle right of the path.
    pub dy: f64,
    /// Heading deviation (rad), path heading minus vehicle heading.
    pub dphi: f64,
    pub kappa_ref: f64,
    pub v_ref: f64,
    /// Foot-point arc length (m), never behind the search hint.
    pub s: f64,
    /// Euclidean distance pose-to-foot-point (m).
    pub distance: f64,
}

/// Divergence guard radius for the projection (m).
pub const PROJECTION_GUARD: f64 = 10.0;

/// Nearest-point projection by local search forward of `s_hint`; the foot
/// point never moves backwards, matching a vehicle that only drives forward.
pub fn project_errors(
    pose: &Pose,
    path: &ReferencePath,
    s_hint: f64,
) -> Result<Projection, PlantError> {
    const LOOKAHEAD: f64 = 30.0;
    let pts = path.points();
    let start_idx = path.segment_index(s_hint);
    let mut best_s = f64::NAN;
    let mut best_d2 = f64::INFINITY;
    for i in start_idx..pts.len() - 1 {
        if pts[i].s > s_hint + LOOKAHEAD {
            break;
        }
        let (ax, ay) = (pts[i].x, pts[i].y);
        let (bx, by) = (pts[i + 1].x, pts[i + 1].y);
        let (ex, ey) = (bx - ax, by - ay);
        let len2 = ex * ex + ey * ey;
        let mut t = ((pose.x - ax) * ex + (pose.y - ay) * ey) / len2;
        t = t.clamp(0.0, 1.0);
        let mut s_cand = pts[i].s + t * (pts[i + 1].s - pts[i].s);
        s_cand = s_cand.max(s_hint);
        let foot = path.interp_at(s_cand);
        let d2 = (pose.x - foot.x).powi(2) + (pose.y - foot.y).powi(2);
        if d2 < best_d2 {
            best_d2 = d2;
            best_s = s_cand;
        }
    }
    let s = if best_s.is_nan() {
        s_hint.min(path.last().s)
    } else {
        best_s
    };
    let foot = path.interp_at(s);
    let distance = (pose.x - foot.x).hypot(pose.y - foot.y);
    if distance > PROJECTION_GUARD {
        return Err(PlantError::DivergedFromPath {
            distance,
            guard: PROJECTION_GUARD,
        });
    }
    // Signed offset along the path's left normal; desired minus actual.
    let (nx, ny) = (-foot.heading.sin(), foot.heading.cos());
    let dy = nx * (foot.x - pose.x) + ny * (foot.y - pose.y);
    Ok(Projection {
        dy,
        dphi: normalize_angle(foot.heading - pose.theta),
        kappa_ref: foot.curvature,
        v_ref: foot.v_ref,
        s,
        distance,
    })
}

/// Default forward acceleration of the idealized speed loop (m/s^2).
pub const A_MAX_DEFAULT: f64 = 2.0;
/// Default braking deceleration of the idealized speed loop (m/s^2).
pub const A_DEC_MAX_DEFAULT: f64 = 2.5;

/// First-order speed pursuit with acceleration clamps; gain fixed at 1/s.
pub fn longitudinal_step(v: f64, v_ref: f64, ts: f64, a_max: f64, a_dec_max: f64) -> f64 {
    const K_V: f64 = 1.0;
    let accel = (K_V * (v_ref - v)).clamp(-a_dec_max, a_max);
    (v + accel * ts).max(0.0)
}

/// Fixed-depth transport delay: output at tick k is the input at tick
/// k - depth, with the pre-fill value during warm-up.
#[derive(Debug, Clone)]
pub struct DelayLine {
    buf: VecDeque<f64>,
    depth: usize,
}

impl DelayLine {
    pub fn new(depth: usize, init: f64) -> Self {
        DelayLine {
            buf: std::iter::repeat_n(init, depth).collect(),
            depth,
        }
    }

    /// Depth from a delay duration and tick period.
    pub fn from_timing(t_delay: f64, ts: f64, init: f64) -> Self {
        Self::new((t_delay / ts).round() as usize, init)
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    /// Push the newest sample, pop the delayed one.
    pub fn push_pop(&mut self, sample: f64) -> f64 {
        if self.depth == 0 {
            return sample;
        }
        self.buf.push_back(sample);
        self.buf.pop_front().unwrap()
    }
}
