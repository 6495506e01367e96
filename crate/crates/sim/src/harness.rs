//! Closed-loop orchestrator: plan, smooth, profile, then track with the
//! selected controller against the dynamic single-track plant, producing a
//! per-tick trace, summary metrics and plot files.

use std::collections::hash_map::DefaultHasher;
use std::fmt::Write as _;
use std::hash::{Hash, Hasher};
use std::io::Write as _;
use std::path::Path;
use std::time::Instant;

use parktrack_core::apf::{self, ApfError};
use parktrack_core::cc::{CcController, CcMeasurement};
use parktrack_core::config::ScenarioDoc;
use parktrack_core::domain::{ControllerKind, DomainError, ReferencePath, Scenario, VehicleParams};
use parktrack_core::mpc::{MpcController, MpcError, MpcMeasurement};
use parktrack_core::path::{self, PathError};
use parktrack_core::plant::{
    self, longitudinal_step, project_errors, propagate_pose, PlantError, PlantState,
    VX_MIN_DYNAMIC,
};
use parktrack_core::speed;

use crate::plots;

/// Output resolution of the smoothed reference path (m).
pub const PATH_RESOLUTION: f64 = 0.5;
/// Forward acceleration available to the speed loop (m/s^2).
pub const A_MAX: f64 = plant::A_MAX_DEFAULT;
/// Braking deceleration assumed by the profile and the speed loop (m/s^2).
pub const A_DEC_MAX: f64 = plant::A_DEC_MAX_DEFAULT;
/// A run completes when the vehicle is this slow inside the goal tolerance.
pub const V_DONE: f64 = 0.5;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("scenario: {0}")]
    Scenario(#[from] DomainError),
    #[error("planner: {0}")]
    Planner(#[from] ApfError),
    #[error("path pipeline: {0}")]
    Pipeline(#[from] PathError),
    #[error("tracking: {0}")]
    Tracking(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl HarnessError {
    /// CLI exit code family of this failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Scenario(_) => 2,
            HarnessError::Planner(_) | HarnessError::Pipeline(_) => 3,
            HarnessError::Tracking(_) => 4,
            HarnessError::Io(_) => 1,
        }
    }
}

impl From<PlantError> for HarnessError {
    fn from(e: PlantError) -> Self {
        HarnessError::Tracking(e.to_string())
    }
}

impl From<MpcError> for HarnessError {
    fn from(e: MpcError) -> Self {
        HarnessError::Tracking(e.to_string())
    }
}

/// One plant tick of the trace.
#[derive(Debug, Clone, Copy)]
pub struct TickRecord {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub theta: f64,
    pub v: f64,
    pub v_ref: f64,
    pub dy: f64,
    pub dphi: f64,
    pub y_l2: f64,
    pub delta_f: f64,
    pub steering_wheel: f64,
    /// Fuzzy preview time; present only for the CC controller.
    pub tp: Option<f64>,
    pub a_lat: f64,
    pub phidot: f64,
    pub kappa_ref: f64,
    /// Output-band slack; present only for the MPC controller.
    pub sigma: Option<f64>,
    /// QP objective; present only for the MPC controller.
    pub mpc_cost: Option<f64>,
}

/// Flat summary of one closed-loop run.
#[derive(Debug, Clone, serde::Serialize)]
pub struct RunMetrics {
    pub controller: String,
    pub v_set_kmh: f64,
    pub max_abs_dy: f64,
    pub rms_dy: f64,
    pub max_a_lat: f64,
    pub max_abs_delta_f: f64,
    pub speed_rmse: f64,
    pub completed: bool,
    pub wallclock: f64,
    pub sim_time: f64,
    pub ticks: usize,
    pub path_hash: u64,
    pub path_length: f64,
    pub peak_abs_curvature: f64,
    pub violations_du: u64,
    pub violations_u: u64,
    pub violations_output_dev: u64,
    pub violations_yaw_rate: u64,
    pub violations_side_slip: u64,
    pub failure: Option<String>,
}

/// Hash of the path geometry (arc length, position, heading, curvature).
/// Reference speeds are excluded so per-speed profiles share the hash.
pub fn path_geometry_hash(path: &ReferencePath) -> u64 {
    let mut h = DefaultHasher::new();
    for p in path.points() {
        p.s.to_bits().hash(&mut h);
        p.x.to_bits().hash(&mut h);
        p.y.to_bits().hash(&mut h);
        p.heading.to_bits().hash(&mut h);
        p.curvature.to_bits().hash(&mut h);
    }
    h.finish()
}

/// Plans the collision-free polyline and smooths it into a drivable path
/// (no speeds yet): descent, spline resampling, quintic windows, then
/// heading and curvature.
pub fn plan_geometry(doc: &ScenarioDoc) -> Result<ReferencePath, HarnessError> {
    let scenario = doc.to_scenario()?;
    let polyline = apf::plan_path(&scenario, &doc.planner)?;
    let positions: Vec<(f64, f64)> = polyline.points().iter().map(|p| (p.x, p.y)).collect();
    let resampled = path::spline_interpolate(&positions, PATH_RESOLUTION)?;
    let (_, smoothed) =
        path::quintic_fit_smoothed(&resampled, 10, path::QUINTIC_RMS_MAX)?;
    Ok(path::compute_heading_curvature(&smoothed, PATH_RESOLUTION)?)
}

/// Attaches the speed profile for the given legal cap.
pub fn profile_speeds(
    geometry: &ReferencePath,
    scenario: &Scenario,
    vehicle: &VehicleParams,
) -> ReferencePath {
    speed::assign_reference_speeds(
        geometry.clone(),
        scenario.v_set,
        scenario.lambda_d,
        A_DEC_MAX,
        vehicle,
    )
}

enum Tracker {
    Cc(Box<CcController>),
    Mpc {
        ctrl: Box<MpcController>,
        every: usize,
        held_sigma: f64,
        held_cost: f64,
    },
}

/// Runs the closed loop on a profiled path. Controller failures and
/// projection divergence are recorded in the metrics rather than aborting.
pub fn track(
    doc: &ScenarioDoc,
    scenario: &Scenario,
    kind: ControllerKind,
    path: &ReferencePath,
) -> (Vec<TickRecord>, RunMetrics) {
    let started = Instant::now();
    let vehicle = doc.vehicle;
    let ts = scenario.sim.ts;
    let goal_tol = doc.planner.goal_tol;
    let mpc_cfg = doc.controller.mpc;
    let mut cc_cfg = doc.controller.cc;
    cc_cfg.t_delay = scenario.sim.t_delay;

    let mut tracker = match kind {
        ControllerKind::Cc => Tracker::Cc(Box::new(CcController::new(
            cc_cfg,
            doc.controller.fuzzy.clone(),
            vehicle,
            ts,
        ))),
        ControllerKind::Mpc => Tracker::Mpc {
            ctrl: Box::new(MpcController::new(mpc_cfg, vehicle)),
            every: (mpc_cfg.t / ts).round().max(1.0) as usize,
            held_sigma: 0.0,
            held_cost: 0.0,
        },
    };

    let mut st = PlantState::at_rest(scenario.start);
    let mut v = scenario.start.v;
    let mut s_hint = 0.0;
    let mut held_delta = 0.0f64;
    let mut records: Vec<TickRecord> = Vec::new();
    let mut completed = false;
    let mut failure: Option<String> = None;

    let mut violations_du = 0u64;
    let mut violations_u = 0u64;
    let mut violations_output_dev = 0u64;
    let mut violations_yaw_rate = 0u64;
    let mut violations_side_slip = 0u64;

    let steps = (scenario.sim.t_end / ts).ceil() as usize;
    for k in 0..steps {
        let t = k as f64 * ts;
        let pr = match project_errors(&st.pose, path, s_hint) {
            Ok(p) => p,
            Err(e) => {
                failure = Some(format!("tick {k}: {e}"));
                break;
            }
        };
        s_hint = pr.s;

        let goal_dist = (st.pose.x - scenario.goal.0).hypot(st.pose.y - scenario.goal.1);
        if goal_dist <= goal_tol && v < V_DONE {
            completed = true;
            break;
        }

        let mut tp = None;
        let mut sigma = None;
        let mut mpc_cost = None;
        let mut y_l2 = 0.0;
        if v >= VX_MIN_DYNAMIC {
            match &mut tracker {
                Tracker::Cc(ctrl) => {
                    let meas = CcMeasurement {
                        dy: pr.dy,
                        dphi: pr.dphi,
                        kappa_ref: pr.kappa_ref,
                        v_ref: pr.v_ref,
                        vx: v,
                    };
                    match ctrl.step(&meas, |d| path.interp_at(pr.s + d).curvature) {
                        Ok(out) => {
                            held_delta = out.command.delta_f;
                            tp = Some(out.tp);
                            y_l2 = out.y_l2;
                        }
                        Err(e) => {
                            failure = Some(format!("tick {k}: {e}"));
                            break;
                        }
                    }
                }
                Tracker::Mpc {
                    ctrl,
                    every,
                    held_sigma,
                    held_cost,
                } => {
                    if k % *every == 0 {
                        let meas = MpcMeasurement {
                            dy: pr.dy,
                            ydot: st.ydot,
                            dphi: pr.dphi,
                            phidot: st.phidot,
                            vx: v,
                            v_ref: pr.v_ref,
                            s: pr.s,
                        };
                        match ctrl.step(&meas, path) {
                            Ok(out) => {
                                let du = out.command.delta_f - held_delta;
                                if du.abs() > ctrl.config().du_bound + 1e-9 {
                                    violations_du += 1;
                                }
                                held_delta = out.command.delta_f;
                                *held_sigma = out.sigma;
                                *held_cost = out.cost;
                            }
                            Err(e) => {
                                failure = Some(format!("tick {k}: {e}"));
                                break;
                            }
                        }
                    }
                    sigma = Some(*held_sigma);
                    mpc_cost = Some(*held_cost);
                    let l_eff = (v * ctrl.config().preview_time).max(1.0);
                    let state = plant::LateralErrorState::new(pr.dy, st.ydot, pr.dphi, st.phidot);
                    y_l2 = plant::preview_deviation(&state, held_delta, v * pr.kappa_ref, v, l_eff, &vehicle)
                        .unwrap_or(0.0);
                }
            }
        } else {
            held_delta = 0.0;
        }

        // violation monitors
        let u_limit = match kind {
            ControllerKind::Cc => 25f64.to_radians(),
            ControllerKind::Mpc => mpc_cfg.u_bound,
        };
        if held_delta.abs() > u_limit + 1e-9 {
            violations_u += 1;
        }
        if pr.dy.abs() > mpc_cfg.output_dev_bound {
            violations_output_dev += 1;
        }
        if v >= VX_MIN_DYNAMIC {
            if st.phidot.abs() > 0.85 * vehicle.mu * vehicle.g / v + 1e-9 {
                violations_yaw_rate += 1;
            }
            let alpha_front = held_delta - (st.ydot + vehicle.lf * st.phidot) / v;
            if alpha_front.abs() > 2.5f64.to_radians() {
                violations_side_slip += 1;
            }
        }

        records.push(TickRecord {
            t,
            x: st.pose.x,
            y: st.pose.y,
            theta: st.pose.theta,
            v,
            v_ref: pr.v_ref,
            dy: pr.dy,
            dphi: pr.dphi,
            y_l2,
            delta_f: held_delta,
            steering_wheel: held_delta * vehicle.steer_ratio,
            tp,
            a_lat: v * st.phidot,
            phidot: st.phidot,
            kappa_ref: pr.kappa_ref,
            sigma,
            mpc_cost,
        });

        // plant update; the speed command leads the foot point by one pursuit
        // time constant so braking ramps are met without overshoot
        let v_cmd = path.interp_at(pr.s + v * 1.0).v_ref.min(pr.v_ref.max(0.3));
        let v_next = longitudinal_step(v, v_cmd, ts, A_MAX, A_DEC_MAX);
        if v >= VX_MIN_DYNAMIC {
            st = plant::dynamic_step(&st, held_delta, v, ts, &vehicle);
        } else {
            match propagate_pose(&st.pose, held_delta, v, ts, &vehicle) {
                Ok(pose) => {
                    let phidot = if v > 0.0 {
                        v * held_delta.tan() / vehicle.wheelbase()
                    } else {
                        0.0
                    };
                    st = PlantState {
                        pose,
                        ydot: 0.0,
                        phidot,
                    };
                }
                Err(e) => {
                    failure = Some(format!("tick {k}: {e}"));
                    break;
                }
            }
        }
        st.pose.v = v_next;
        v = v_next;
    }

    let n = records.len().max(1) as f64;
    let metrics = RunMetrics {
        controller: kind.as_str().to_string(),
        v_set_kmh: scenario.v_set * 3.6,
        max_abs_dy: records.iter().map(|r| r.dy.abs()).fold(0.0, f64::max),
        rms_dy: (records.iter().map(|r| r.dy * r.dy).sum::<f64>() / n).sqrt(),
        max_a_lat: records.iter().map(|r| r.a_lat.abs()).fold(0.0, f64::max),
        max_abs_delta_f: records.iter().map(|r| r.delta_f.abs()).fold(0.0, f64::max),
        speed_rmse: (records.iter().map(|r| (r.v - r.v_ref).powi(2)).sum::<f64>() / n).sqrt(),
        completed,
        wallclock: started.elapsed().as_secs_f64(),
        sim_time: records.last().map(|r| r.t).unwrap_or(0.0),
        ticks: records.len(),
        path_hash: path_geometry_hash(path),
        path_length: path.length(),
        peak_abs_curvature: path
            .points()
            .iter()
            .map(|p| p.curvature.abs())
            .fold(0.0, f64::max),
        violations_du,
        violations_u,
        violations_output_dev,
        violations_yaw_rate,
        violations_side_slip,
        failure,
    };
    (records, metrics)
}

/// Formats a float with the fixed trace precision.
fn cell(v: f64) -> String {
    format!("{v:.6}")
}

/// Writes the trace with one row per tick; optional fields are empty cells.
pub fn emit_csv(records: &[TickRecord], out: &Path) -> Result<(), HarnessError> {
    let mut s = String::with_capacity(records.len() * 160 + 160);
    s.push_str(
        "t,X,Y,theta,v,v_ref,dy,dphi,y_l2,delta_f,steering_wheel,Tp,a_lat,phidot,kappa_ref,sigma\n",
    );
    for r in records {
        let tp = r.tp.map(cell).unwrap_or_default();
        let sigma = r.sigma.map(cell).unwrap_or_default();
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            cell(r.t),
            cell(r.x),
            cell(r.y),
            cell(r.theta),
            cell(r.v),
            cell(r.v_ref),
            cell(r.dy),
            cell(r.dphi),
            cell(r.y_l2),
            cell(r.delta_f),
            cell(r.steering_wheel),
            tp,
            cell(r.a_lat),
            cell(r.phidot),
            cell(r.kappa_ref),
            sigma,
        );
    }
    let mut f = std::fs::File::create(out)?;
    f.write_all(s.as_bytes())?;
    Ok(())
}

fn write_metrics(metrics: &RunMetrics, out: &Path) -> Result<(), HarnessError> {
    let text = serde_json::to_string_pretty(metrics).expect("metrics serialize");
    std::fs::write(out, text)?;
    Ok(())
}

/// Full pipeline for one scenario and controller choice; writes trace.csv,
/// metrics.json and the SVG plots into `out_dir`.
pub fn run(
    doc: &ScenarioDoc,
    kind: ControllerKind,
    out_dir: &Path,
) -> Result<RunMetrics, HarnessError> {
    let scenario = doc.to_scenario()?;
    let geometry = plan_geometry(doc)?;
    let path = profile_speeds(&geometry, &scenario, &doc.vehicle);
    run_on_path(doc, &scenario, kind, &path, out_dir)
}

/// Tracks a pre-planned path and writes the artifacts. Tracking failures
/// are recorded inside the returned metrics (with the failing tick), not
/// raised; only I/O problems error out.
pub fn run_on_path(
    doc: &ScenarioDoc,
    scenario: &Scenario,
    kind: ControllerKind,
    path: &ReferencePath,
    out_dir: &Path,
) -> Result<RunMetrics, HarnessError> {
    std::fs::create_dir_all(out_dir)?;
    let (records, metrics) = track(doc, scenario, kind, path);
    emit_csv(&records, &out_dir.join("trace.csv"))?;
    write_metrics(&metrics, &out_dir.join("metrics.json"))?;
    plots::write_run_plots(scenario, path, &records, out_dir)?;
    Ok(metrics)
}

/// Comparison row: the metrics of one controller at one legal speed.
#[derive(Debug, Clone, serde::Serialize)]
pub struct CompareRow {
    pub label: String,
    #[serde(flatten)]
    pub metrics: RunMetrics,
}

/// Plans once, then tracks with both controllers at 30 and 50 km/h (four
/// runs, concurrently). Failures are recorded per row; remaining rows still
/// run.
pub fn compare(doc: &ScenarioDoc, out_dir: &Path) -> Result<Vec<CompareRow>, HarnessError> {
    std::fs::create_dir_all(out_dir)?;
    let geometry = plan_geometry(doc)?;

    let cases = [
        (ControllerKind::Cc, 30.0),
        (ControllerKind::Mpc, 30.0),
        (ControllerKind::Cc, 50.0),
        (ControllerKind::Mpc, 50.0),
    ];
    let rows: Vec<CompareRow> = std::thread::scope(|scope| {
        let geometry = &geometry;
        let handles: Vec<_> = cases
            .iter()
            .map(|(kind, kmh)| {
                let label = format!("{}_{}kmh", kind.as_str(), *kmh as i64);
                let sub = out_dir.join(&label);
                scope.spawn(move || {
                    let mut scenario = doc.to_scenario().expect("validated earlier");
                    scenario.v_set = kmh / 3.6;
                    let path = profile_speeds(geometry, &scenario, &doc.vehicle);
                    let metrics = run_on_path(doc, &scenario, *kind, &path, &sub)
                        .unwrap_or_else(|e| {
                            let (_, mut m) = track(doc, &scenario, *kind, &path);
                            m.failure.get_or_insert(e.to_string());
                            m
                        });
                    CompareRow { label, metrics }
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("run thread")).collect()
    });

    let table = serde_json::to_string_pretty(&rows).expect("rows serialize");
    std::fs::write(out_dir.join("comparison.json"), table)?;
    Ok(rows)
}

/// Renders the comparison as a fixed-width text table.
pub fn format_comparison(rows: &[CompareRow]) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<12} {:>10} {:>10} {:>10} {:>12} {:>10} {:>10}",
        "run", "max|dy| m", "rms dy m", "max a_lat", "max|d_f| deg", "v rmse", "completed"
    );
    for r in rows {
        let _ = writeln!(
            s,
            "{:<12} {:>10.3} {:>10.3} {:>10.2} {:>12.2} {:>10.2} {:>10}",
            r.label,
            r.metrics.max_abs_dy,
            r.metrics.rms_dy,
            r.metrics.max_a_lat,
            r.metrics.max_abs_delta_f.to_degrees(),
            r.metrics.speed_rmse,
            r.metrics.completed,
        );
    }
    s
}
