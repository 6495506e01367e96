//! Shared domain types and unit conventions.
//!
//! Everything internal is SI: metres, seconds, radians, kilograms. The
//! scenario file may express speeds in km/h and angles in degrees; those are
//! converted once at the parse boundary (see [`crate::config`]) and never
//! leak past it.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Conversion factor from km/h to m/s.
pub const KMH_TO_MS: f64 = 1.0 / 3.6;

#[derive(Debug, Error)]
pub enum DomainError {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("validation error: {field}: {message}")]
    Validation { field: &'static str, message: String },
}

impl DomainError {
    pub(crate) fn invalid(field: &'static str, message: impl Into<String>) -> Self {
        DomainError::Validation {
            field,
            message: message.into(),
        }
    }
}

/// Normalize an angle to `(-pi, pi]`.
///
/// Panics on non-finite input; angles reaching this function are always the
/// result of finite arithmetic.
pub fn normalize_angle(a: f64) -> f64 {
    assert!(a.is_finite(), "normalize_angle: non-finite input {a}");
    let r = a.rem_euclid(2.0 * PI);
    if r > PI {
        r - 2.0 * PI
    } else {
        r
    }
}

/// Chassis and tire parameters of the single-track model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VehicleParams {
    /// Vehicle mass (kg).
    pub m: f64,
    /// Yaw moment of inertia (kg m^2).
    pub iz: f64,
    /// Distance from center of mass to front axle (m).
    pub lf: f64,
    /// Distance from center of mass to rear axle (m).
    pub lr: f64,
    /// Front cornering stiffness (N/rad).
    pub cf: f64,
    /// Rear cornering stiffness (N/rad).
    pub cr: f64,
    /// Steering-wheel to road-wheel ratio.
    pub steer_ratio: f64,
    /// Tire-road adhesion coefficient.
    pub mu: f64,
    /// Gravitational acceleration (m/s^2).
    pub g: f64,
}

impl Default for VehicleParams {
    fn default() -> Self {
        // Representative mid-size sedan; steer ratio and mu per the target
        // operating setup.
        VehicleParams {
            m: 1500.0,
            iz: 2500.0,
            lf: 1.2,
            lr: 1.5,
            cf: 80_000.0,
            cr: 80_000.0,
            steer_ratio: 16.0,
            mu: 0.85,
            g: 9.81,
        }
    }
}

impl VehicleParams {
    /// Wheelbase `lf + lr` (m).
    pub fn wheelbase(&self) -> f64 {
        self.lf + self.lr
    }

    pub fn validate(&self) -> Result<(), DomainError> {
        let positive = [
            ("m", self.m),
            ("iz", self.iz),
            ("lf", self.lf),
            ("lr", self.lr),
            ("cf", self.cf),
            ("cr", self.cr),
        ];
        for (name, v) in positive {
            if !v.is_finite() || v <= 0.0 {
                return Err(DomainError::invalid("vehicle", format!("{name} must be > 0, got {v}")));
            }
        }
        if !self.mu.is_finite() || self.mu <= 0.0 || self.mu > 1.2 {
            return Err(DomainError::invalid("vehicle.mu", format!("must be in (0, 1.2], got {}", self.mu)));
        }
        if !self.steer_ratio.is_finite() || self.steer_ratio < 1.0 {
            return Err(DomainError::invalid("vehicle.steer_ratio", format!("must be >= 1, got {}", self.steer_ratio)));
        }
        Ok(())
    }
}

/// Global planar pose plus tangential speed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    /// Heading (rad), normalized to `(-pi, pi]`.
    pub theta: f64,
    /// Tangential speed (m/s), never negative.
    pub v: f64,
}

impl Pose {
    pub fn new(x: f64, y: f64, theta: f64, v: f64) -> Self {
        Pose {
            x,
            y,
            theta: normalize_angle(theta),
            v: v.max(0.0),
        }
    }
}

/// One sample of a reference path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathPoint {
    /// Arc length from the path start (m).
    pub s: f64,
    pub x: f64,
    pub y: f64,
    /// Tangent heading (rad).
    pub heading: f64,
    /// Signed curvature (1/m); counter-clockwise turns are positive.
    pub curvature: f64,
    /// Reference speed (m/s).
    pub v_ref: f64,
}

/// Arc-length-indexed path: the contract between planner and controllers.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferencePath {
    points: Vec<PathPoint>,
    resolution: f64,
}

impl ReferencePath {
    /// Builds a path and checks the structural invariants: at least two
    /// points, strictly increasing arc length, per-segment spacing within
    /// `[0.25, 4] * resolution` and headings consistent with chord
    /// directions to within 30 degrees.
    pub fn new(points: Vec<PathPoint>, resolution: f64) -> Result<Self, DomainError> {
        if points.len() < 2 {
            return Err(DomainError::invalid("path", "needs at least 2 points"));
        }
        if !resolution.is_finite() || resolution <= 0.0 {
            return Err(DomainError::invalid("path.resolution", "must be > 0"));
        }
        for w in points.windows(2) {
            let (a, b) = (&w[0], &w[1]);
            let ds = b.s - a.s;
            if !ds.is_finite() || ds <= 0.0 {
                return Err(DomainError::invalid("path.s", format!("arc length not strictly increasing at s={}", a.s)));
            }
            let chord = (b.x - a.x).hypot(b.y - a.y);
            if chord < 0.25 * resolution || chord > 4.0 * resolution {
                return Err(DomainError::invalid(
                    "path.spacing",
                    format!("segment length {chord:.3} outside [{:.3}, {:.3}] at s={:.3}", 0.25 * resolution, 4.0 * resolution, a.s),
                ));
            }
            let chord_dir = (b.y - a.y).atan2(b.x - a.x);
            let mis = normalize_angle(a.heading - chord_dir).abs();
            if mis > 30f64.to_radians() {
                return Err(DomainError::invalid(
                    "path.heading",
                    format!("heading deviates {:.1} deg from chord at s={:.3}", mis.to_degrees(), a.s),
                ));
            }
        }
        Ok(ReferencePath { points, resolution })
    }

    pub fn points(&self) -> &[PathPoint] {
        &self.points
    }

    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    /// Total arc length (m).
    pub fn length(&self) -> f64 {
        self.points.last().unwrap().s - self.points[0].s
    }

    pub fn first(&self) -> &PathPoint {
        &self.points[0]
    }

    pub fn last(&self) -> &PathPoint {
        self.points.last().unwrap()
    }

    /// Index of the segment containing arc length `s` (clamped to the ends).
    pub fn segment_index(&self, s: f64) -> usize {
        match self
            .points
            .binary_search_by(|p| p.s.partial_cmp(&s).unwrap())
        {
            Ok(i) => i.min(self.points.len() - 2),
            Err(0) => 0,
            Err(i) => (i - 1).min(self.points.len() - 2),
        }
    }

    /// Linear interpolation at arc length `s`, clamped to the path ends.
    pub fn interp_at(&self, s: f64) -> PathPoint {
        let s = s.clamp(self.points[0].s, self.points.last().unwrap().s);
        let i = self.segment_index(s);
        let (a, b) = (&self.points[i], &self.points[i + 1]);
        let t = (s - a.s) / (b.s - a.s);
        PathPoint {
            s,
            x: a.x + t * (b.x - a.x),
            y: a.y + t * (b.y - a.y),
            heading: normalize_angle(a.heading + t * normalize_angle(b.heading - a.heading)),
            curvature: a.curvature + t * (b.curvature - a.curvature),
            v_ref: a.v_ref + t * (b.v_ref - a.v_ref),
        }
    }

    /// Replaces the stored points. Intended for the pipeline stages; callers
    /// must keep the invariants intact.
    pub fn map_points(mut self, f: impl FnMut(PathPoint) -> PathPoint) -> Self {
        self.points = self.points.into_iter().map(f).collect();
        self
    }
}

/// Disc obstacle with a repulsive influence band.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Obstacle {
    pub cx: f64,
    pub cy: f64,
    /// Bounding-circle radius (m).
    pub r: f64,
    /// Influence range beyond which the obstacle exerts no force (m),
    /// compared against the edge distance.
    pub q_star: f64,
    /// Repulsive coefficient.
    pub eta: f64,
}

impl Obstacle {
    pub fn validate(&self) -> Result<(), DomainError> {
        if !self.r.is_finite() || self.r <= 0.0 {
            return Err(DomainError::invalid("obstacle.r", "must be > 0"));
        }
        if !self.q_star.is_finite() || self.q_star <= self.r {
            return Err(DomainError::invalid("obstacle.q_star", format!("q_star must exceed r ({} <= {})", self.q_star, self.r)));
        }
        if !self.eta.is_finite() || self.eta <= 0.0 {
            return Err(DomainError::invalid("obstacle.eta", "must be > 0"));
        }
        Ok(())
    }

    /// Shortest distance from a point to the disc edge (negative inside).
    pub fn edge_distance(&self, x: f64, y: f64) -> f64 {
        (x - self.cx).hypot(y - self.cy) - self.r
    }

    /// Copy with the body radius grown by `margin` (vehicle footprint).
    pub fn inflated(&self, margin: f64) -> Obstacle {
        Obstacle {
            r: self.r + margin,
            ..*self
        }
    }
}

/// Rectangular workspace bounds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bounds {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl Bounds {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x_min && x <= self.x_max && y >= self.y_min && y <= self.y_max
    }
}

/// Which tracking controller closes the loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ControllerKind {
    Cc,
    Mpc,
}

impl ControllerKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ControllerKind::Cc => "cc",
            ControllerKind::Mpc => "mpc",
        }
    }
}

/// Simulation timing: plant step, horizon and measurement delay.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimTiming {
    /// Plant integration step (s).
    pub ts: f64,
    /// Wall horizon after which a run is abandoned (s).
    pub t_end: f64,
    /// Measurement delay for the deviation loops (s).
    pub t_delay: f64,
}

impl Default for SimTiming {
    fn default() -> Self {
        SimTiming {
            ts: 0.005,
            t_end: 180.0,
            t_delay: 0.065,
        }
    }
}

/// A full task description: where to drive, what stands in the way, how fast.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub start: Pose,
    pub goal: (f64, f64),
    pub obstacles: Vec<Obstacle>,
    /// Legal target speed (m/s).
    pub v_set: f64,
    /// Curve-speed adjustment factor of the dynamic limit.
    pub lambda_d: f64,
    pub bounds: Bounds,
    pub controller: ControllerKind,
    pub sim: SimTiming,
}

impl Scenario {
    pub fn validate(&self) -> Result<(), DomainError> {
        if !self.bounds.contains(self.start.x, self.start.y) {
            return Err(DomainError::invalid("scenario.start", "start outside bounds"));
        }
        if !self.bounds.contains(self.goal.0, self.goal.1) {
            return Err(DomainError::invalid("scenario.goal", "goal outside bounds"));
        }
        if !self.v_set.is_finite() || self.v_set <= 0.0 {
            return Err(DomainError::invalid("scenario.v_set", "must be > 0"));
        }
        if !self.lambda_d.is_finite() || self.lambda_d <= 0.0 || self.lambda_d > 1.0 {
            return Err(DomainError::invalid("scenario.lambda_d", format!("must be in (0, 1], got {}", self.lambda_d)));
        }
        if !self.sim.ts.is_finite() || self.sim.ts <= 0.0 {
            return Err(DomainError::invalid("scenario.sim.ts", "must be > 0"));
        }
        for ob in &self.obstacles {
            ob.validate()?;
        }
        Ok(())
    }
}

/// Front-wheel steering angle limit (rad): the physical stop of the rack.
pub const STEER_PHYSICAL_LIMIT: f64 = 25.0 * PI / 180.0;

/// Per-tick controller output.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlCommand {
    /// Front-wheel steering angle (rad), clamped to the physical stop.
    pub delta_f: f64,
    /// Commanded speed (m/s).
    pub v_ref: f64,
}

impl ControlCommand {
    pub fn new(delta_f: f64, v_ref: f64) -> Self {
        ControlCommand {
            delta_f: delta_f.clamp(-STEER_PHYSICAL_LIMIT, STEER_PHYSICAL_LIMIT),
            v_ref: v_ref.max(0.0),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalize_angle_identity_and_periodicity() {
        assert_eq!(normalize_angle(0.0), 0.0);
        assert!((normalize_angle(3.0 * PI) - PI).abs() < 1e-12);
        assert!((normalize_angle(-1.5 * PI) - 0.5 * PI).abs() < 1e-12);
        assert!((normalize_angle(PI) - PI).abs() < 1e-12);
        assert!((normalize_angle(-PI) - PI).abs() < 1e-12);
    }

    #[test]
    fn normalize_angle_periodic_property() {
        // normalize(a + 2*pi*k) == normalize(a) for k in [-3, 3]
        let mut a = -7.3;
        while a < 7.3 {
            let base = normalize_angle(a);
            for k in -3i32..=3 {
                let shifted = normalize_angle(a + 2.0 * PI * f64::from(k));
                assert!(
                    (shifted - base).abs() < 1e-9,
                    "a={a} k={k}: {shifted} vs {base}"
                );
            }
            a += 0.31;
        }
    }

    #[test]
    #[should_panic]
    fn normalize_angle_rejects_non_finite() {
        normalize_angle(f64::NAN);
    }

    #[test]
    fn obstacle_validation_catches_small_q_star() {
        let ob = Obstacle {
            cx: 0.0,
            cy: 0.0,
            r: 2.0,
            q_star: 1.0,
            eta: 1.0,
        };
        let err = ob.validate().unwrap_err();
        assert!(err.to_string().contains("q_star must exceed r"), "{err}");
    }

    #[test]
    fn reference_path_rejects_bad_spacing() {
        let mk = |s: f64, x: f64| PathPoint {
            s,
            x,
            y: 0.0,
            heading: 0.0,
            curvature: 0.0,
            v_ref: 1.0,
        };
        // 5 m jump at 0.5 m resolution: outside 4x bound.
        let err = ReferencePath::new(vec![mk(0.0, 0.0), mk(5.0, 5.0)], 0.5);
        assert!(err.is_err());
        let ok = ReferencePath::new(vec![mk(0.0, 0.0), mk(0.5, 0.5)], 0.5);
        assert!(ok.is_ok());
    }

    #[test]
    fn reference_path_interpolation() {
        let mk = |s: f64| PathPoint {
            s,
            x: s,
            y: 0.0,
            heading: 0.0,
            curvature: 0.01 * s,
            v_ref: 2.0 * s,
        };
        let path = ReferencePath::new((0..11).map(|i| mk(i as f64 * 0.5)).collect(), 0.5).unwrap();
        let p = path.interp_at(1.25);
        assert!((p.x - 1.25).abs() < 1e-12);
        assert!((p.curvature - 0.0125).abs() < 1e-12);
        assert!((p.v_ref - 2.5).abs() < 1e-12);
        // clamped beyond the ends
        assert_eq!(path.interp_at(99.0).s, 5.0);
        assert_eq!(path.interp_at(-1.0).s, 0.0);
    }
}
