//! Acceptance suite: one test per release criterion, each printing a
//! pass/fail line. Closed-loop criteria share one comparison run of the
//! bundled park scenario.

use std::path::{Path, PathBuf};
use std::sync::OnceLock;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};

use parktrack_core::apf::{self, ApfConfig, ApfError, RepulsionStyle};
use parktrack_core::config;
use parktrack_core::domain::{Bounds, ControllerKind, Obstacle, Pose, Scenario, SimTiming, VehicleParams};
use parktrack_core::mpc::{build_prediction, solve_qp, DiscreteModel, QpProblem};
use parktrack_core::plant::{body_accelerations, build_state_space, lateral_derivative, slip_gain, LateralErrorState};
use parktrack_core::speed;
use parktrack_sim::harness;

struct Rng(u64);

impl Rng {
    fn next_f64(&mut self) -> f64 {
        self.0 ^= self.0 << 13;
        self.0 ^= self.0 >> 7;
        self.0 ^= self.0 << 17;
        (self.0 >> 11) as f64 / (1u64 << 53) as f64
    }
    fn range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }
}

fn park_json_path() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios/park.json")
}

fn park_doc() -> config::ScenarioDoc {
    let text = std::fs::read_to_string(park_json_path()).expect("bundled scenario");
    config::parse_document(&text).expect("valid scenario")
}

struct ParkRuns {
    rows: Vec<harness::CompareRow>,
    traces: Vec<(String, Vec<TraceRow>)>,
}

#[derive(Debug, Clone, Copy)]
struct TraceRow {
    delta_f: f64,
    tp: Option<f64>,
    kappa_ref: f64,
}

fn parse_trace(path: &Path) -> Vec<TraceRow> {
    let text = std::fs::read_to_string(path).expect("trace file");
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().expect("header").split(',').collect();
    let col = |name: &str| header.iter().position(|h| *h == name).expect("column");
    let (c_df, c_tp, c_k) = (col("delta_f"), col("Tp"), col("kappa_ref"));
    lines
        .map(|line| {
            let f: Vec<&str> = line.split(',').collect();
            TraceRow {
                delta_f: f[c_df].parse().unwrap(),
                tp: if f[c_tp].is_empty() {
                    None
                } else {
                    Some(f[c_tp].parse().unwrap())
                },
                kappa_ref: f[c_k].parse().unwrap(),
            }
        })
        .collect()
}

fn park_runs() -> &'static ParkRuns {
    static RUNS: OnceLock<ParkRuns> = OnceLock::new();
    RUNS.get_or_init(|| {
        let out = Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance_compare");
        let doc = park_doc();
        let rows = harness::compare(&doc, &out).expect("compare run");
        let traces = rows
            .iter()
            .map(|r| (r.label.clone(), parse_trace(&out.join(&r.label).join("trace.csv"))))
            .collect();
        ParkRuns { rows, traces }
    })
}

fn metric<'a>(runs: &'a ParkRuns, label: &str) -> &'a harness::RunMetrics {
    &runs
        .rows
        .iter()
        .find(|r| r.label == label)
        .unwrap_or_else(|| panic!("missing run {label}"))
        .metrics
}

/// Brute-force objective minimum over the box grid, allocation-free.
fn grid_oracle(qp: &QpProblem, bounds: &[f64], step: f64) -> f64 {
    let n = bounds.len();
    let counts: Vec<usize> = bounds
        .iter()
        .map(|b| (2.0 * b / step).round() as usize + 1)
        .collect();
    let mut idx = vec![0usize; n];
    let mut x = vec![0.0f64; n];
    let mut best = f64::INFINITY;
    loop {
        for i in 0..n {
            x[i] = -bounds[i] + idx[i] as f64 * step;
        }
        // objective: -x'M + x'Nx
        let mut obj = 0.0;
        for i in 0..n {
            obj -= x[i] * qp.m_vec[i];
            let mut row = 0.0;
            for (j, xj) in x.iter().enumerate() {
                row += qp.n_mat[(i, j)] * xj;
            }
            obj += x[i] * row;
        }
        if obj < best {
            best = obj;
        }
        let mut carry = 0;
        loop {
            idx[carry] += 1;
            if idx[carry] < counts[carry] {
                break;
            }
            idx[carry] = 0;
            carry += 1;
            if carry == n {
                return best;
            }
        }
    }
}

fn random_psd(rng: &mut Rng, n: usize, eig_lo: f64, eig_hi: f64) -> DMatrix<f64> {
    // random rotation via QR of a random matrix, eigenvalues in range
    let a = DMatrix::from_fn(n, n, |_, _| rng.range(-1.0, 1.0));
    let q = a.qr().q();
    let d = DMatrix::from_diagonal(&DVector::from_fn(n, |_, _| rng.range(eig_lo, eig_hi)));
    &q * d * q.transpose()
}

#[test]
fn criterion_1_qp_solver_matches_grid_oracle() {
    let started = Instant::now();
    let mut rng = Rng(0x1111_2222_3333_4444);

    // unconstrained instances return the closed-form optimum
    for _ in 0..50 {
        let n = 1 + (rng.next_f64() * 3.0) as usize;
        let n_mat = random_psd(&mut rng, n, 0.5, 1.2);
        let m_vec = DVector::from_fn(n, |_, _| rng.range(-0.3, 0.3));
        let qp = QpProblem {
            n_mat: n_mat.clone(),
            m_vec: m_vec.clone(),
            a_ineq: DMatrix::zeros(0, n),
            b_ineq: DVector::zeros(0),
            cost_const: 0.0,
            n_du: n,
            has_slack: false,
        };
        let sol = solve_qp(&qp, None).unwrap();
        let grad = -&m_vec + 2.0 * &n_mat * &sol.x;
        assert!(grad.amax() < 1e-9, "gradient residual {}", grad.amax());
    }

    // boxed instances against the dense grid
    let step = 1e-3;
    let mut checked = 0;
    for trial in 0..200 {
        let n = if trial % 4 == 0 { 3 } else { 1 + trial % 2 };
        let n_mat = random_psd(&mut rng, n, 0.5, 1.2);
        let m_vec = DVector::from_fn(n, |_, _| rng.range(-0.15, 0.15));
        let bounds: Vec<f64> = (0..n)
            .map(|_| (rng.range(0.02, 0.08) / step).round() * step)
            .collect();
        let mut a = DMatrix::zeros(2 * n, n);
        let mut b = DVector::zeros(2 * n);
        for i in 0..n {
            a[(2 * i, i)] = 1.0;
            b[2 * i] = bounds[i];
            a[(2 * i + 1, i)] = -1.0;
            b[2 * i + 1] = bounds[i];
        }
        let qp = QpProblem {
            n_mat,
            m_vec,
            a_ineq: a,
            b_ineq: b,
            cost_const: 0.0,
            n_du: n,
            has_slack: false,
        };
        let sol = solve_qp(&qp, None).unwrap();
        assert!(sol.converged, "trial {trial} did not converge");
        let solver_obj = {
            let x = &sol.x;
            -x.dot(&qp.m_vec) + (x.transpose() * &qp.n_mat * x)[(0, 0)]
        };
        let viol = (&qp.a_ineq * &sol.x - &qp.b_ineq)
            .iter()
            .fold(f64::NEG_INFINITY, |m, v| m.max(*v));
        assert!(viol <= 1e-8, "trial {trial}: constraint violation {viol}");
        let oracle = grid_oracle(&qp, &bounds, step);
        assert!(
            (solver_obj - oracle).abs() <= 1e-6,
            "trial {trial}: solver {solver_obj} vs grid {oracle}"
        );
        checked += 1;
    }
    let elapsed = started.elapsed().as_secs_f64();
    assert!(elapsed < 10.0, "runtime {elapsed:.1} s exceeds 10 s");
    println!("[PASS] criterion 1: {checked} boxed QPs within 1e-6 of the grid oracle in {elapsed:.1} s");
}

#[test]
fn criterion_2_prediction_matrices_match_rollout() {
    let mut rng = Rng(0x5555_6666_7777_8888);
    for trial in 0..100 {
        let n = 1 + trial % 4;
        let stable = 0.9 / n as f64;
        let dm = DiscreteModel {
            a: DMatrix::from_fn(n, n, |_, _| rng.range(-stable, stable)),
            b: DMatrix::from_fn(n, 2, |_, _| rng.range(-1.0, 1.0)),
            c: DMatrix::from_fn(2, n, |_, _| rng.range(-1.0, 1.0)),
            d: DMatrix::from_fn(2, 2, |_, _| rng.range(-0.5, 0.5)),
            dt: 0.05,
        };
        let np = 4 + trial % 5;
        let nc = 1 + trial % np.min(4);
        let pm = build_prediction(&dm, np, nc);

        let x0 = DVector::from_fn(n, |_, _| rng.range(-1.0, 1.0));
        let u_prev = rng.range(-0.5, 0.5);
        let du: Vec<f64> = (0..nc).map(|_| rng.range(-0.2, 0.2)).collect();
        let w: Vec<f64> = (0..=np).map(|_| rng.range(-0.4, 0.4)).collect();

        // independent step-by-step rollout
        let u_at = |j: usize| -> f64 { u_prev + du[..(j + 1).min(nc)].iter().sum::<f64>() };
        let mut x = x0.clone();
        let mut z_oracle = Vec::new();
        for i in 1..=np {
            let uin = DVector::from_column_slice(&[u_at(i - 1), w[i - 1]]);
            x = &dm.a * &x + &dm.b * &uin;
            let uout = DVector::from_column_slice(&[u_at(i), w[i]]);
            z_oracle.push(&dm.c * &x + &dm.d * &uout);
        }

        let z = &pm.h * &x0
            + &pm.p * u_prev
            + &pm.s * DVector::from_column_slice(&du)
            + &pm.sw * DVector::from_column_slice(&w);
        for i in 0..np {
            for k in 0..2 {
                let got = z[i * 2 + k];
                let want = z_oracle[i][k];
                assert!(
                    (got - want).abs() < 1e-10,
                    "trial {trial} step {i} output {k}: {got} vs {want}"
                );
            }
        }
    }

    // dimensions for the operating configuration
    let p = VehicleParams::default();
    let ss = build_state_space(30.0 / 3.6, 8.0, &p).unwrap();
    let dm = parktrack_core::mpc::discretize_ss(&ss, 0.05);
    let pm = build_prediction(&dm, 25, 10);
    assert_eq!(pm.h.shape(), (100, 4));
    assert_eq!(pm.p.shape(), (100, 1));
    assert_eq!(pm.s.shape(), (100, 10));
    assert_eq!(pm.gamma.shape(), (10, 1));
    assert_eq!(pm.lambda.shape(), (10, 10));
    println!("[PASS] criterion 2: 100 random rollouts within 1e-10, dimensions 100x4/100x1/100x10 as configured");
}

#[test]
fn criterion_3_dynamics_fidelity() {
    let p = VehicleParams::default();

    // finite-difference Jacobian against the A matrix
    let vx = 8.0;
    let ss = build_state_space(vx, 7.0, &p).unwrap();
    let base = LateralErrorState::new(0.12, 0.4, 0.06, 0.25);
    let h = 1e-6;
    for col in 0..4 {
        let mut plus = base.as_vector();
        let mut minus = base.as_vector();
        plus[col] += h;
        minus[col] -= h;
        let sp = LateralErrorState::new(plus[0], plus[1], plus[2], plus[3]);
        let sm = LateralErrorState::new(minus[0], minus[1], minus[2], minus[3]);
        let dp = lateral_derivative(&sp, 0.03, 0.12, vx, &p);
        let dm = lateral_derivative(&sm, 0.03, 0.12, vx, &p);
        for row in 0..4 {
            let fd = (dp[row] - dm[row]) / (2.0 * h);
            let a = ss.a[(row, col)];
            assert!(
                (fd - a).abs() / a.abs().max(1.0) < 1e-6,
                "A[{row}][{col}]: {fd} vs {a}"
            );
        }
    }

    // steady-state slip gain at the three operating speeds
    for vx in [5.0, 30.0 / 3.6, 50.0 / 3.6] {
        let delta = 0.01;
        let (mut ydot, mut phidot) = (0.0, 0.0);
        let dt = 5e-4;
        for _ in 0..200_000 {
            let (a1, b1) = body_accelerations(ydot, phidot, delta, vx, &p);
            if a1.abs() < 1e-9 && b1.abs() < 1e-9 {
                break;
            }
            let (a2, b2) = body_accelerations(ydot + 0.5 * dt * a1, phidot + 0.5 * dt * b1, delta, vx, &p);
            let (a3, b3) = body_accelerations(ydot + 0.5 * dt * a2, phidot + 0.5 * dt * b2, delta, vx, &p);
            let (a4, b4) = body_accelerations(ydot + dt * a3, phidot + dt * b3, delta, vx, &p);
            ydot += dt / 6.0 * (a1 + 2.0 * a2 + 2.0 * a3 + a4);
            phidot += dt / 6.0 * (b1 + 2.0 * b2 + 2.0 * b3 + b4);
        }
        let measured = ydot / (delta * vx);
        let beta = slip_gain(vx, &p).unwrap();
        assert!(
            ((measured - beta) / beta).abs() < 1e-3,
            "vx {vx}: steady-state {measured} vs slip gain {beta}"
        );
    }
    println!("[PASS] criterion 3: Jacobian matches A within 1e-6; slip gain within 0.1% at 5/8.33/13.89 m/s");
}

fn test_scenario(start: (f64, f64), goal: (f64, f64), obstacles: Vec<Obstacle>) -> Scenario {
    Scenario {
        start: Pose::new(start.0, start.1, 0.0, 0.0),
        goal,
        obstacles,
        v_set: 30.0 / 3.6,
        lambda_d: 0.65,
        bounds: Bounds {
            x_min: -50.0,
            x_max: 400.0,
            y_min: -200.0,
            y_max: 200.0,
        },
        controller: ControllerKind::Cc,
        sim: SimTiming::default(),
    }
}

#[test]
fn criterion_4_apf_reachability_and_clearance() {
    let started = Instant::now();
    let cfg = ApfConfig::default();

    // (a) goal adjacent to an obstacle: the goal-distance factor lets the
    // descent terminate at the goal
    let ob = Obstacle {
        cx: 50.0,
        cy: 4.2,
        r: 0.5,
        q_star: 3.5,
        eta: 15.0,
    };
    let sc = test_scenario((0.0, 0.0), (50.0, 0.0), vec![ob]);
    let inflated = ob.inflated(cfg.vehicle_radius);
    let edge = inflated.edge_distance(50.0, 0.0);
    assert!(edge > 0.0 && edge <= inflated.q_star, "goal not inside influence band");
    let path = apf::plan_path(&sc, &cfg).expect("goal-adjacent plan");
    let last = path.last();
    assert!(
        (last.x - 50.0).hypot(last.y) <= cfg.goal_tol,
        "stopped {:.2} m from goal",
        (last.x - 50.0).hypot(last.y)
    );

    // (b) collinear blockage: baseline stalls, tangent rule succeeds
    let ob = Obstacle {
        cx: 15.0,
        cy: 0.0,
        r: 1.0,
        q_star: 5.5,
        eta: 15.0,
    };
    let sc = test_scenario((0.0, 0.0), (30.0, 0.0), vec![ob]);
    let baseline = apf::plan_path_styled(&sc, &cfg, RepulsionStyle::Radial);
    assert!(
        matches!(baseline, Err(ApfError::StallDetected { .. })),
        "baseline should stall, got {baseline:?}"
    );
    let path = apf::plan_path(&sc, &cfg).expect("reformed plan");
    assert!((path.last().x - 30.0).hypot(path.last().y) <= cfg.goal_tol);

    // (c) 50 randomized fields: every planned path clear of every body
    let mut rng = Rng(0x2468_1357_9bdf_0ace);
    let mut planned = 0;
    for field in 0..50 {
        let goal = (90.0 + rng.range(0.0, 30.0), rng.range(-25.0, 25.0));
        let n_obs = 5 + (rng.next_f64() * 4.0) as usize;
        let mut obstacles: Vec<Obstacle> = Vec::new();
        while obstacles.len() < n_obs {
            let r = rng.range(1.0, 2.5);
            let cand = Obstacle {
                cx: rng.range(15.0, goal.0 - 12.0),
                cy: rng.range(-22.0, 22.0),
                r,
                q_star: r + 3.0,
                eta: 15.0,
            };
            let clear_of = |x: f64, y: f64, margin: f64| {
                (cand.cx - x).hypot(cand.cy - y) > cand.r + cfg.vehicle_radius + margin
            };
            let overlaps = obstacles.iter().any(|o| {
                (cand.cx - o.cx).hypot(cand.cy - o.cy) < cand.r + o.r + 2.0 * cfg.vehicle_radius + 1.0
            });
            if clear_of(0.0, 0.0, 5.0) && clear_of(goal.0, goal.1, 5.0) && !overlaps {
                obstacles.push(cand);
            }
        }
        let sc = test_scenario((0.0, 0.0), goal, obstacles.clone());
        let path = match apf::plan_path(&sc, &cfg) {
            Ok(p) => p,
            Err(e) => panic!("field {field} failed to plan: {e}"),
        };
        let inflated: Vec<Obstacle> = obstacles.iter().map(|o| o.inflated(cfg.vehicle_radius)).collect();
        for w in path.points().windows(2) {
            for k in 0..=10 {
                let t = k as f64 / 10.0;
                let x = w[0].x + t * (w[1].x - w[0].x);
                let y = w[0].y + t * (w[1].y - w[0].y);
                for o in &inflated {
                    assert!(
                        o.edge_distance(x, y) > 0.0,
                        "field {field}: collision at ({x:.2}, {y:.2})"
                    );
                }
            }
        }
        planned += 1;
    }
    let elapsed = started.elapsed().as_secs_f64();
    assert!(elapsed < 30.0, "runtime {elapsed:.1} s exceeds 30 s");
    println!("[PASS] criterion 4: goal-adjacent reached, collinear escape vs stalled baseline, {planned} random fields collision-free in {elapsed:.1} s");
}

#[test]
fn criterion_5_speed_planner_values_and_feasibility() {
    let p = VehicleParams::default();
    let v = speed::dynamic_speed_limit(0.1, &p, 0.65);
    assert!((v - 5.935).abs() <= 1e-3, "dynamic limit {v}");

    // backward-pass feasibility on the bundled scenario at both legal speeds
    let doc = park_doc();
    let geometry = harness::plan_geometry(&doc).expect("park geometry");
    for kmh in [30.0, 50.0] {
        let mut sc = doc.to_scenario().unwrap();
        sc.v_set = kmh / 3.6;
        let path = harness::profile_speeds(&geometry, &sc, &doc.vehicle);
        for w in path.points().windows(2) {
            let ds = w[1].s - w[0].s;
            assert!(
                w[0].v_ref.powi(2) - w[1].v_ref.powi(2) <= 2.0 * harness::A_DEC_MAX * ds + 1e-9,
                "infeasible deceleration at s={:.1} ({} km/h)",
                w[0].s,
                kmh
            );
            let lims = speed::speed_limits(w[0].curvature, &p, sc.lambda_d, sc.v_set);
            assert!(w[0].v_ref <= lims.v_ref + 1e-12);
        }
        assert_eq!(path.last().v_ref, 0.0);
    }
    println!("[PASS] criterion 5: dynamic limit 5.935 m/s at kappa 0.1; braking feasibility holds on the park profiles");
}

#[test]
fn criterion_6_closed_loop_regime() {
    let runs = park_runs();
    let m30 = metric(runs, "mpc_30kmh");
    let m50 = metric(runs, "mpc_50kmh");
    let c30 = metric(runs, "cc_30kmh");
    let c50 = metric(runs, "cc_50kmh");
    for m in [m30, m50, c30, c50] {
        assert!(m.completed, "{} did not complete: {:?}", m.controller, m.failure);
        assert!(m.wallclock < 60.0, "{} took {:.1} s", m.controller, m.wallclock);
    }
    assert!(
        m30.max_abs_dy <= 0.35,
        "(a) 30 km/h MPC max |dy| = {:.3}",
        m30.max_abs_dy
    );
    assert!(
        m50.max_abs_dy <= 0.55,
        "(b) 50 km/h MPC max |dy| = {:.3}",
        m50.max_abs_dy
    );
    assert!(
        m50.max_abs_dy < c50.max_abs_dy,
        "(c) MPC {:.3} not below CC {:.3} at 50 km/h",
        m50.max_abs_dy,
        c50.max_abs_dy
    );
    assert!(
        (m30.max_abs_dy - c30.max_abs_dy).abs() < 0.15,
        "(c) controllers differ by {:.3} at 30 km/h",
        (m30.max_abs_dy - c30.max_abs_dy).abs()
    );
    println!(
        "[PASS] criterion 6: MPC 30 {:.3} m <= 0.35; MPC 50 {:.3} m <= 0.55; MPC {:.3} < CC {:.3} at 50; |diff| {:.3} < 0.15 at 30",
        m30.max_abs_dy, m50.max_abs_dy, m50.max_abs_dy, c50.max_abs_dy,
        (m30.max_abs_dy - c30.max_abs_dy).abs()
    );
}

#[test]
fn criterion_7_constraint_enforcement_from_traces() {
    let runs = park_runs();
    // the trace quantizes to 6 decimals, so allow one rounding step on
    // each of the two samples forming a difference
    let du_bound = 0.47f64.to_radians() + 2e-6;
    let u_bound_mpc = 20f64.to_radians() + 1e-6;
    let u_bound_cc = 25f64.to_radians() + 1e-6;
    for (label, trace) in &runs.traces {
        let mpc = label.starts_with("mpc");
        let mut prev = 0.0f64;
        for (i, row) in trace.iter().enumerate() {
            if mpc {
                assert!(
                    (row.delta_f - prev).abs() <= du_bound,
                    "{label} tick {i}: |d delta_f| = {:.5} rad",
                    (row.delta_f - prev).abs()
                );
                assert!(
                    row.delta_f.abs() <= u_bound_mpc,
                    "{label} tick {i}: |delta_f| = {:.5} rad",
                    row.delta_f.abs()
                );
            } else {
                assert!(
                    row.delta_f.abs() <= u_bound_cc,
                    "{label} tick {i}: |delta_f| = {:.5} rad",
                    row.delta_f.abs()
                );
            }
            prev = row.delta_f;
        }
    }
    println!("[PASS] criterion 7: per-tick |d delta_f| <= 0.47 deg and |delta_f| <= 20 deg on MPC traces; CC within 25 deg");
}

#[test]
fn criterion_8_determinism() {
    let doc = park_doc();
    let base = Path::new(env!("CARGO_TARGET_TMPDIR")).join("determinism");
    let a = base.join("a");
    let b = base.join("b");
    harness::run(&doc, ControllerKind::Mpc, &a).expect("first run");
    harness::run(&doc, ControllerKind::Mpc, &b).expect("second run");
    let ta = std::fs::read(a.join("trace.csv")).unwrap();
    let tb = std::fs::read(b.join("trace.csv")).unwrap();
    assert_eq!(ta, tb, "trace.csv differs between identical runs");
    println!("[PASS] criterion 8: byte-identical trace.csv across two runs ({} bytes)", ta.len());
}

/// Supporting anchor, not a numbered criterion: on the curved portions of
/// the 50 km/h park run the fuzzy preview time concentrates around one
/// second.
#[test]
fn preview_time_concentrates_on_curves() {
    let runs = park_runs();
    let (_, trace) = runs
        .traces
        .iter()
        .find(|(l, _)| l == "cc_50kmh")
        .expect("cc 50 trace");
    let mut tps: Vec<f64> = trace
        .iter()
        .filter(|r| r.kappa_ref.abs() > 0.02)
        .filter_map(|r| r.tp)
        .collect();
    assert!(tps.len() > 500, "too few curved-section samples");
    tps.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median = tps[tps.len() / 2];
    assert!(
        (0.8..=1.2).contains(&median),
        "median preview time {median:.2} s outside [0.8, 1.2]"
    );
    println!("[PASS] anchor: curved-section preview-time median {median:.2} s within [0.8, 1.2] s");
}
