//! Artificial-potential-field path planner.
//!
//! Two departures from the textbook field make goals near obstacles
//! reachable and break collinear deadlocks:
//! - the repulsive magnitude is scaled by the squared goal distance, so both
//!   forces vanish together at the goal, and
//! - the body-directed repulsive component is redirected along the obstacle
//!   tangent that stays within 90 degrees of the attraction.
//!
//! The radial (non-reformed) direction is kept behind [`RepulsionStyle`] as a
//! comparison baseline.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{DomainError, Obstacle, PathPoint, ReferencePath, Scenario};

/// Minimum edge clearance a planned vertex keeps from every obstacle body (m).
/// Also guarantees straight segments between vertices cannot clip a disc.
pub const MIN_CLEARANCE: f64 = 0.05;

/// Descent configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ApfConfig {
    /// Attractive coefficient of the quadratic goal potential.
    pub xi: f64,
    /// Descent step length (m); also the output resolution.
    pub step: f64,
    /// Iteration cap.
    pub max_iters: usize,
    /// Arrival tolerance around the goal (m).
    pub goal_tol: f64,
    /// Number of iterations over which progress is measured.
    pub stall_window: usize,
    /// Minimum goal-distance decrease over the window (m).
    pub stall_eps: f64,
    /// Circumscribed-circle radius of the vehicle; obstacle bodies are
    /// inflated by this much so the vehicle can be treated as a point (m).
    pub vehicle_radius: f64,
}

impl Default for ApfConfig {
    fn default() -> Self {
        ApfConfig {
            xi: 1.0,
            step: 0.5,
            max_iters: 5000,
            goal_tol: 1.0,
            stall_window: 50,
            stall_eps: 0.05,
            vehicle_radius: 1.5,
        }
    }
}

impl ApfConfig {
    pub fn validate(&self) -> Result<(), String> {
        for (name, v) in [
            ("xi", self.xi),
            ("step", self.step),
            ("goal_tol", self.goal_tol),
            ("stall_eps", self.stall_eps),
            ("vehicle_radius", self.vehicle_radius),
        ] {
            if !v.is_finite() || v <= 0.0 {
                return Err(format!("{name} must be > 0, got {v}"));
            }
        }
        if self.max_iters == 0 || self.stall_window == 0 {
            return Err("max_iters and stall_window must be nonzero".into());
        }
        if self.goal_tol >= self.step * self.max_iters as f64 {
            return Err("goal_tol must be smaller than step * max_iters".into());
        }
        Ok(())
    }
}

/// Planar force (potential-gradient units).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ForceVec {
    pub fx: f64,
    pub fy: f64,
}

impl ForceVec {
    pub fn norm(&self) -> f64 {
        self.fx.hypot(self.fy)
    }
}

impl std::ops::Add for ForceVec {
    type Output = ForceVec;
    fn add(self, rhs: ForceVec) -> ForceVec {
        ForceVec {
            fx: self.fx + rhs.fx,
            fy: self.fy + rhs.fy,
        }
    }
}

/// Direction rule for the body-directed repulsive component.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RepulsionStyle {
    /// Reformed rule: along the obstacle tangent closest to the attraction.
    Tangent,
    /// Baseline rule: radially away from the obstacle center.
    Radial,
}

#[derive(Debug, Error)]
pub enum ApfError {
    #[error("pose in collision with obstacle at ({cx:.2}, {cy:.2})")]
    Collision { cx: f64, cy: f64 },
    #[error("position coincides with obstacle center ({cx:.2}, {cy:.2})")]
    ObstacleCenter { cx: f64, cy: f64 },
    #[error("planner stalled: goal distance {goal_distance:.3} m decreased less than {eps} m over {window} iterations")]
    StallDetected {
        goal_distance: f64,
        window: usize,
        eps: f64,
        partial: Vec<(f64, f64)>,
    },
    #[error("iteration cap {cap} reached at goal distance {goal_distance:.3} m")]
    IterationCap {
        cap: usize,
        goal_distance: f64,
        partial: Vec<(f64, f64)>,
    },
    #[error(transparent)]
    Domain(#[from] DomainError),
}

fn dist(a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - b.0).hypot(a.1 - b.1)
}

/// Gradient of the quadratic attractive potential `1/2 * xi * d^2`:
/// `xi * (goal - p)`, pointing at the goal with magnitude `xi * d`.
pub fn attractive_force(p: (f64, f64), goal: (f64, f64), xi: f64) -> ForceVec {
    ForceVec {
        fx: xi * (goal.0 - p.0),
        fy: xi * (goal.1 - p.1),
    }
}

/// Goal-distance-scaled repulsive potential of one obstacle.
pub fn repulsive_potential(p: (f64, f64), goal: (f64, f64), ob: &Obstacle) -> Result<f64, ApfError> {
    let d_edge = ob.edge_distance(p.0, p.1);
    if d_edge <= 0.0 {
        return Err(ApfError::Collision { cx: ob.cx, cy: ob.cy });
    }
    if d_edge > ob.q_star {
        return Ok(0.0);
    }
    let gap = 1.0 / d_edge - 1.0 / ob.q_star;
    let d_goal = dist(p, goal);
    Ok(0.5 * ob.eta * gap * gap * d_goal * d_goal)
}

/// Unit tangent of the circle around `ob` through `p`, picked so its angle to
/// the attractive-force direction is at most 90 degrees. An exact tie is
/// broken toward the counter-clockwise tangent.
pub fn tangent_direction(
    p: (f64, f64),
    goal: (f64, f64),
    ob: &Obstacle,
) -> Result<(f64, f64), ApfError> {
    let rx = p.0 - ob.cx;
    let ry = p.1 - ob.cy;
    let rn = rx.hypot(ry);
    if rn < 1e-12 {
        return Err(ApfError::ObstacleCenter { cx: ob.cx, cy: ob.cy });
    }
    let u = (rx / rn, ry / rn);
    let ccw = (-u.1, u.0);
    let toward_goal = (goal.0 - p.0, goal.1 - p.1);
    let d = ccw.0 * toward_goal.0 + ccw.1 * toward_goal.1;
    if d >= 0.0 {
        Ok(ccw)
    } else {
        Ok((u.1, -u.0))
    }
}

/// Repulsive force of one obstacle with a selectable direction rule.
///
/// Outside the influence range the force is zero. Inside, the two split
/// magnitudes are
/// `F1 = eta * (1/d - 1/Q*) * d_goal^2 / d^2` along the direction rule and
/// `F2 = eta * (1/d - 1/Q*)^2 * d_goal` toward the goal,
/// with `d` the edge distance. Both vanish at the goal.
pub fn repulsive_force_styled(
    p: (f64, f64),
    goal: (f64, f64),
    ob: &Obstacle,
    style: RepulsionStyle,
) -> Result<ForceVec, ApfError> {
    let d_edge = ob.edge_distance(p.0, p.1);
    if d_edge <= 0.0 {
        return Err(ApfError::Collision { cx: ob.cx, cy: ob.cy });
    }
    if d_edge > ob.q_star {
        return Ok(ForceVec::default());
    }
    let d_goal = dist(p, goal);
    if d_goal < 1e-12 {
        return Ok(ForceVec::default());
    }
    let gap = 1.0 / d_edge - 1.0 / ob.q_star;
    let f1 = ob.eta * gap * d_goal * d_goal / (d_edge * d_edge);
    let f2 = ob.eta * gap * gap * d_goal;
    let n1 = match style {
        RepulsionStyle::Tangent => tangent_direction(p, goal, ob)?,
        RepulsionStyle::Radial => {
            let rx = p.0 - ob.cx;
            let ry = p.1 - ob.cy;
            let rn = rx.hypot(ry);
            (rx / rn, ry / rn)
        }
    };
    let n2 = ((goal.0 - p.0) / d_goal, (goal.1 - p.1) / d_goal);
    Ok(ForceVec {
        fx: f1 * n1.0 + f2 * n2.0,
        fy: f1 * n1.1 + f2 * n2.1,
    })
}

/// Repulsive force with the reformed tangent direction.
pub fn repulsive_force(p: (f64, f64), goal: (f64, f64), ob: &Obstacle) -> Result<ForceVec, ApfError> {
    repulsive_force_styled(p, goal, ob, RepulsionStyle::Tangent)
}

pub fn total_force_styled(
    p: (f64, f64),
    goal: (f64, f64),
    obstacles: &[Obstacle],
    xi: f64,
    style: RepulsionStyle,
) -> Result<ForceVec, ApfError> {
    let mut f = attractive_force(p, goal, xi);
    for ob in obstacles {
        f = f + repulsive_force_styled(p, goal, ob, style)?;
    }
    Ok(f)
}

pub fn total_force(
    p: (f64, f64),
    goal: (f64, f64),
    obstacles: &[Obstacle],
    xi: f64,
) -> Result<ForceVec, ApfError> {
    total_force_styled(p, goal, obstacles, xi, RepulsionStyle::Tangent)
}

/// Gradient descent from the scenario start to its goal.
///
/// Returns a position-only path: arc length and chord headings are filled in,
/// curvature and reference speed are left at zero for the downstream stages.
/// Obstacle bodies are inflated by `cfg.vehicle_radius` before planning.
pub fn plan_path_styled(
    scenario: &Scenario,
    cfg: &ApfConfig,
    style: RepulsionStyle,
) -> Result<ReferencePath, ApfError> {
    let obstacles: Vec<Obstacle> = scenario
        .obstacles
        .iter()
        .map(|ob| ob.inflated(cfg.vehicle_radius))
        .collect();
    let start = (scenario.start.x, scenario.start.y);
    let goal = scenario.goal;
    for ob in &obstacles {
        if ob.edge_distance(start.0, start.1) <= 0.0 {
            return Err(ApfError::Collision { cx: ob.cx, cy: ob.cy });
        }
        if ob.edge_distance(goal.0, goal.1) <= 0.0 {
            return Err(ApfError::Collision { cx: ob.cx, cy: ob.cy });
        }
    }

    let min_clearance = |p: (f64, f64)| -> f64 {
        obstacles
            .iter()
            .map(|ob| ob.edge_distance(p.0, p.1))
            .fold(f64::INFINITY, f64::min)
    };

    let mut raw = vec![start];
    let mut p = start;
    let mut recent: VecDeque<f64> = VecDeque::with_capacity(cfg.stall_window + 1);
    let mut reached = false;

    for _ in 0..cfg.max_iters {
        let d_goal = dist(p, goal);
        if d_goal <= cfg.goal_tol {
            // close the polyline on the goal itself (known collision-free)
            if d_goal > 1e-9 {
                raw.push(goal);
            }
            reached = true;
            break;
        }

        let f = total_force_styled(p, goal, &obstacles, cfg.xi, style)?;
        let mag = f.norm();
        if mag < 1e-12 {
            return Err(ApfError::StallDetected {
                goal_distance: d_goal,
                window: cfg.stall_window,
                eps: cfg.stall_eps,
                partial: raw,
            });
        }
        let dir = (f.fx / mag, f.fy / mag);

        // Fixed-length step along the normalized force; shrink it when the
        // raw landing point would violate the clearance floor.
        let mut step = cfg.step.min(d_goal);
        let mut cand = (p.0 + step * dir.0, p.1 + step * dir.1);
        let mut shrinks = 0;
        while min_clearance(cand) <= MIN_CLEARANCE && shrinks < 24 {
            step *= 0.5;
            cand = (p.0 + step * dir.0, p.1 + step * dir.1);
            shrinks += 1;
        }
        if shrinks == 24 {
            return Err(ApfError::StallDetected {
                goal_distance: d_goal,
                window: cfg.stall_window,
                eps: cfg.stall_eps,
                partial: raw,
            });
        }

        p = cand;
        raw.push(p);

        recent.push_back(dist(p, goal));
        if recent.len() > cfg.stall_window {
            let old = recent.pop_front().unwrap();
            if old - recent.back().unwrap() < cfg.stall_eps {
                return Err(ApfError::StallDetected {
                    goal_distance: dist(p, goal),
                    window: cfg.stall_window,
                    eps: cfg.stall_eps,
                    partial: raw,
                });
            }
        }
    }

    if !reached {
        return Err(ApfError::IterationCap {
            cap: cfg.max_iters,
            goal_distance: dist(p, goal),
            partial: raw,
        });
    }

    // The normalized-direction descent ping-pongs across the potential
    // valley near obstacles with amplitude on the order of the step length.
    // Relax the polyline with a clearance-guarded Laplacian pass so the
    // interpolating spline downstream does not reproduce the sawtooth.
    let relaxed = relax_polyline(&raw, &min_clearance);

    // Merge sub-steps so the output spacing stays within the ReferencePath
    // bounds.
    let mut pts: Vec<(f64, f64)> = vec![relaxed[0]];
    for q in relaxed.iter().skip(1) {
        if dist(*pts.last().unwrap(), *q) >= 0.3 * cfg.step {
            pts.push(*q);
        }
    }
    let end = *relaxed.last().unwrap();
    if *pts.last().unwrap() != end {
        if dist(*pts.last().unwrap(), end) >= 0.25 * cfg.step || pts.len() < 2 {
            pts.push(end);
        } else {
            *pts.last_mut().unwrap() = end;
        }
    }
    if pts.len() < 2 {
        // Start already within goal tolerance: emit a nominal straight stub.
        pts.push((start.0 + 0.5 * cfg.step, start.1));
    }

    let mut points = Vec::with_capacity(pts.len());
    let mut s = 0.0;
    for (i, &(x, y)) in pts.iter().enumerate() {
        if i > 0 {
            s += dist(pts[i - 1], (x, y));
        }
        let (nx, ny) = if i + 1 < pts.len() {
            pts[i + 1]
        } else {
            (x, y)
        };
        let heading = if i + 1 < pts.len() {
            (ny - y).atan2(nx - x)
        } else {
            let (px, py) = pts[i - 1];
            (y - py).atan2(x - px)
        };
        points.push(PathPoint {
            s,
            x,
            y,
            heading,
            curvature: 0.0,
            v_ref: 0.0,
        });
    }
    Ok(ReferencePath::new(points, cfg.step)?)
}

/// Iterative Laplacian relaxation with fixed endpoints. Vertex moves keep a
/// comfortable standoff where possible and never drop below the hard
/// clearance floor, so rounding a kink cannot drag the line into a body.
fn relax_polyline(
    pts: &[(f64, f64)],
    min_clearance: &impl Fn((f64, f64)) -> f64,
) -> Vec<(f64, f64)> {
    let mut out = pts.to_vec();
    if out.len() < 3 {
        return out;
    }
    for pass in 0..160 {
        let guard = if pass < 148 { 0.35 } else { MIN_CLEARANCE };
        let snapshot = out.clone();
        for i in 1..out.len() - 1 {
            let target = (
                snapshot[i].0 + 0.3 * (snapshot[i - 1].0 - 2.0 * snapshot[i].0 + snapshot[i + 1].0),
                snapshot[i].1 + 0.3 * (snapshot[i - 1].1 - 2.0 * snapshot[i].1 + snapshot[i + 1].1),
            );
            let before = min_clearance(snapshot[i]);
            let after = min_clearance(target);
            // never tighten below the guard; loosening is always fine
            if after > guard.min(before).max(MIN_CLEARANCE) || after >= before {
                out[i] = target;
            }
        }
    }
    out
}

/// Plans with the reformed tangent rule (the default planner).
pub fn plan_path(scenario: &Scenario, cfg: &ApfConfig) -> Result<ReferencePath, ApfError> {
    plan_path_styled(scenario, cfg, RepulsionStyle::Tangent)
}
