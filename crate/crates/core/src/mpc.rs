//! Linear model-predictive tracking controller: zero-order-hold
//! discretization of the lateral error model, stacked output prediction over
//! the horizon, quadratic cost in the input increments, stacked inequality
//! constraints with one softened output band, and a dual coordinate-ascent
//! (Hildreth) solver for the resulting dense QP.
//!
//! The steering angle is the only decision channel; the desired-yaw-rate
//! input is a known path property and enters the prediction as a disturbance
//! sequence folded into the tracking deviation.

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{ControlCommand, ReferencePath, VehicleParams, STEER_PHYSICAL_LIMIT};
use crate::plant::{build_state_space, PlantError, StateSpace, VX_MIN_DYNAMIC};

#[derive(Debug, Error)]
pub enum MpcError {
    #[error("cost matrix not positive definite after symmetrization")]
    NotPositiveDefinite,
    #[error("hard constraint row {row} infeasible (slack {violation:.3e})")]
    Infeasible { row: usize, violation: f64 },
    #[error(transparent)]
    Plant(#[from] PlantError),
}

/// Controller tuning; defaults follow the operating setup of the stack:
/// 20 Hz update, 25-step prediction, 10-step control horizon.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MpcConfig {
    /// Sample period (s).
    pub t: f64,
    /// Prediction steps.
    pub np: usize,
    /// Control steps.
    pub nc: usize,
    /// Per-step output weights on `(dy, dphi, y_l2, phidot)`.
    pub q_diag: [f64; 4],
    /// Input-magnitude weight.
    pub ru: f64,
    /// Input-increment weight.
    pub r: f64,
    /// Quadratic weight on the shared output-band slack.
    pub slack_weight: f64,
    /// Per-step increment bound (rad).
    pub du_bound: f64,
    /// Steering-angle bound (rad).
    pub u_bound: f64,
    /// Softened deviation band on the lateral-offset output (m).
    pub output_dev_bound: f64,
    /// Preview time defining the predicted-deviation output distance (s).
    pub preview_time: f64,
}

impl Default for MpcConfig {
    fn default() -> Self {
        MpcConfig {
            t: 0.05,
            np: 25,
            nc: 10,
            q_diag: [2000.0, 1000.0, 1000.0, 1000.0],
            ru: 0.0,
            r: 1.5e5,
            slack_weight: 1000.0,
            du_bound: 0.47f64.to_radians(),
            u_bound: 20f64.to_radians(),
            output_dev_bound: 0.5,
            preview_time: 1.0,
        }
    }
}

impl MpcConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !self.t.is_finite() || self.t <= 0.0 {
            return Err("sample period must be > 0".into());
        }
        if self.nc == 0 || self.nc > self.np {
            return Err(format!("need 1 <= nc <= np, got nc={} np={}", self.nc, self.np));
        }
        for (name, v) in [
            ("du_bound", self.du_bound),
            ("u_bound", self.u_bound),
            ("output_dev_bound", self.output_dev_bound),
            ("slack_weight", self.slack_weight),
        ] {
            if !v.is_finite() || v <= 0.0 {
                return Err(format!("{name} must be > 0"));
            }
        }
        if self.r < 0.0 || self.ru < 0.0 || self.q_diag.iter().any(|q| *q < 0.0) {
            return Err("weights must be nonnegative".into());
        }
        Ok(())
    }
}

/// Matrix exponential by scaling-and-squaring with a Taylor series.
pub fn matrix_exp(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    assert_eq!(n, m.ncols());
    let norm = m.amax() * n as f64;
    let squarings = if norm > 0.25 {
        (norm / 0.25).log2().ceil() as u32
    } else {
        0
    };
    let scaled = m / 2f64.powi(squarings as i32);
    let mut term = DMatrix::identity(n, n);
    let mut sum = DMatrix::identity(n, n);
    for k in 1..=20 {
        term = &term * &scaled / k as f64;
        sum += &term;
    }
    for _ in 0..squarings {
        sum = &sum * &sum;
    }
    sum
}

/// Discrete-time model `x+ = A x + B u`, `z = C x + D u`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteModel {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub d: DMatrix<f64>,
    pub dt: f64,
}

/// Exact zero-order-hold discretization via the augmented matrix exponential
/// `exp([[A, B], [0, 0]] T) = [[Ad, Bd], [0, I]]`; no explicit inverse, so a
/// singular `A` is fine.
pub fn discretize(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    c: &DMatrix<f64>,
    d: &DMatrix<f64>,
    t: f64,
) -> DiscreteModel {
    let n = a.nrows();
    let l = b.ncols();
    let mut aug = DMatrix::zeros(n + l, n + l);
    aug.view_mut((0, 0), (n, n)).copy_from(&(a * t));
    aug.view_mut((0, n), (n, l)).copy_from(&(b * t));
    let e = matrix_exp(&aug);
    DiscreteModel {
        a: e.view((0, 0), (n, n)).into_owned(),
        b: e.view((0, n), (n, l)).into_owned(),
        c: c.clone(),
        d: d.clone(),
        dt: t,
    }
}

/// Discretizes the plant's continuous lateral state space.
pub fn discretize_ss(ss: &StateSpace, t: f64) -> DiscreteModel {
    let to_d = |m: &dyn Fn(usize, usize) -> f64, r: usize, c: usize| {
        DMatrix::from_fn(r, c, m)
    };
    discretize(
        &to_d(&|i, j| ss.a[(i, j)], 4, 4),
        &to_d(&|i, j| ss.b[(i, j)], 4, 2),
        &to_d(&|i, j| ss.c[(i, j)], 4, 4),
        &to_d(&|i, j| ss.d[(i, j)], 4, 2),
        t,
    )
}

/// Stacked receding-horizon maps for a single decision channel (column 0 of
/// B/D); remaining input columns are treated as a known disturbance sequence
/// mapped by `sw`.
///
/// `Z = H x(k) + P u(k-1) + S dU + Sw W` with
/// `W = [w(k), ..., w(k+Np)]` and `U = Gamma u(k-1) + Lambda dU`.
#[derive(Debug, Clone)]
pub struct PredictionMatrices {
    pub h: DMatrix<f64>,
    pub p: DMatrix<f64>,
    pub s: DMatrix<f64>,
    pub gamma: DMatrix<f64>,
    pub lambda: DMatrix<f64>,
    pub sw: DMatrix<f64>,
    pub np: usize,
    pub nc: usize,
    /// Output dimension per step.
    pub ny: usize,
}

pub fn build_prediction(dm: &DiscreteModel, np: usize, nc: usize) -> PredictionMatrices {
    assert!(nc >= 1 && nc <= np, "need 1 <= nc <= np");
    let n = dm.a.nrows();
    let ny = dm.c.nrows();
    let n_dist = dm.b.ncols() - 1;
    let bu = dm.b.column(0).into_owned();
    let du = dm.d.column(0).into_owned();

    // powers[r] = A^r, acc[r] = I + A + ... + A^r
    let mut powers = Vec::with_capacity(np + 1);
    powers.push(DMatrix::<f64>::identity(n, n));
    for r in 1..=np {
        let next = &powers[r - 1] * &dm.a;
        powers.push(next);
    }
    let mut acc = Vec::with_capacity(np);
    acc.push(powers[0].clone());
    for r in 1..np {
        let next = &acc[r - 1] + &powers[r];
        acc.push(next);
    }

    let mut h = DMatrix::zeros(ny * np, n);
    let mut p = DMatrix::zeros(ny * np, 1);
    let mut s = DMatrix::zeros(ny * np, nc);
    let mut sw = DMatrix::zeros(ny * np, np + 1);
    for i in 1..=np {
        let row = (i - 1) * ny;
        h.view_mut((row, 0), (ny, n)).copy_from(&(&dm.c * &powers[i]));
        // coefficient of the held previous input
        let p_blk = &dm.c * (&acc[i - 1] * &bu) + &du;
        p.view_mut((row, 0), (ny, 1)).copy_from(&p_blk);
        for q in 0..nc.min(i + 1) {
            let mut blk = DVector::zeros(ny);
            if q < i {
                blk += &dm.c * (&acc[i - 1 - q] * &bu);
            }
            if q <= i {
                blk += &du;
            }
            s.view_mut((row, q), (ny, 1)).copy_from(&blk);
        }
        if n_dist > 0 {
            let bw = dm.b.column(1).into_owned();
            let dw = dm.d.column(1).into_owned();
            for j in 0..=np {
                let mut blk = DVector::zeros(ny);
                if j < i {
                    blk += &dm.c * (&powers[i - 1 - j] * &bw);
                }
                if j == i {
                    blk += &dw;
                }
                sw.view_mut((row, j), (ny, 1)).copy_from(&blk);
            }
        }
    }

    let gamma = DMatrix::from_element(nc, 1, 1.0);
    let lambda = DMatrix::from_fn(nc, nc, |i, j| if j <= i { 1.0 } else { 0.0 });
    PredictionMatrices {
        h,
        p,
        s,
        gamma,
        lambda,
        sw,
        np,
        nc,
        ny,
    }
}

/// Dense QP in the increment vector (plus one appended slack column):
/// minimize `-x' M + x' N x` subject to `A x <= b`.
#[derive(Debug, Clone)]
pub struct QpProblem {
    pub n_mat: DMatrix<f64>,
    pub m_vec: DVector<f64>,
    pub a_ineq: DMatrix<f64>,
    pub b_ineq: DVector<f64>,
    /// Constant cost term, so `V = cost_const - x'M + x'Nx`.
    pub cost_const: f64,
    /// Number of increment variables (the slack, when present, is last).
    pub n_du: usize,
    pub has_slack: bool,
}

impl QpProblem {
    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        self.cost_const - x.dot(&self.m_vec) + (x.transpose() * &self.n_mat * x)[(0, 0)]
    }
}

/// Assembles the quadratic cost
/// `N = Lambda' Ru Lambda + R + S' Q S`, `M = 2 S' Q eps - 2 Lambda' Ru Gamma u(k-1)`
/// from the stacked deviation `eps` and the held input.
pub fn build_cost(
    pm: &PredictionMatrices,
    q_diag: &[f64],
    ru: f64,
    r: f64,
    eps: &DVector<f64>,
    u_prev: f64,
) -> QpProblem {
    assert_eq!(q_diag.len(), pm.ny);
    assert_eq!(eps.len(), pm.ny * pm.np);
    let nc = pm.nc;
    // Q eps and Q S with the block-diagonal stacked weight
    let qs = {
        let mut qs = pm.s.clone();
        for i in 0..qs.nrows() {
            let w = q_diag[i % pm.ny];
            for j in 0..qs.ncols() {
                qs[(i, j)] *= w;
            }
        }
        qs
    };
    let qeps = DVector::from_fn(eps.len(), |i, _| eps[i] * q_diag[i % pm.ny]);

    let mut n_mat = pm.s.transpose() * &qs;
    for i in 0..nc {
        n_mat[(i, i)] += r;
    }
    if ru != 0.0 {
        n_mat += pm.lambda.transpose() * ru * &pm.lambda;
    }
    let mut m_vec = 2.0 * pm.s.transpose() * &qeps;
    if ru != 0.0 {
        m_vec -= 2.0 * pm.lambda.transpose() * ru * &pm.gamma * u_prev;
    }
    let cost_const = eps.dot(&qeps) + ru * (nc as f64) * u_prev * u_prev;
    QpProblem {
        n_mat,
        m_vec,
        a_ineq: DMatrix::zeros(0, nc),
        b_ineq: DVector::zeros(0),
        cost_const,
        n_du: nc,
        has_slack: false,
    }
}

/// Appends the three constraint families and the softened output band:
/// per-step increment bounds, cumulative input bounds, a `+-bound` band on
/// the first output row softened by one shared slack, and hard bounds on the
/// yaw-rate output row. The slack variable is appended to the cost with
/// weight `slack_weight`.
#[allow(clippy::too_many_arguments)]
pub fn build_constraints(
    mut qp: QpProblem,
    pm: &PredictionMatrices,
    free_response: &DVector<f64>,
    u_prev: f64,
    du_bound: f64,
    u_bound: f64,
    output_dev_bound: f64,
    yaw_rate_bound: f64,
    slack_weight: f64,
) -> QpProblem {
    let nc = pm.nc;
    let np = pm.np;
    let ny = pm.ny;
    let cols = nc + 1; // slack appended
    let rows = 4 * nc + 4 * np + 1;
    let mut a = DMatrix::zeros(rows, cols);
    let mut b = DVector::zeros(rows);
    let mut row = 0;

    // per-step increment bounds
    for i in 0..nc {
        a[(row, i)] = 1.0;
        b[row] = du_bound;
        row += 1;
        a[(row, i)] = -1.0;
        b[row] = du_bound;
        row += 1;
    }
    // cumulative-input bounds: |u_prev + sum_{q<=i} dU_q| <= u_bound
    for i in 0..nc {
        for q in 0..=i {
            a[(row, q)] = 1.0;
            a[(row + 1, q)] = -1.0;
        }
        b[row] = u_bound - u_prev;
        b[row + 1] = u_bound + u_prev;
        row += 2;
    }
    // softened band on output row 0 (lateral deviation)
    for i in 0..np {
        let zrow = i * ny;
        let z0 = free_response[zrow];
        for q in 0..nc {
            a[(row, q)] = pm.s[(zrow, q)];
            a[(row + 1, q)] = -pm.s[(zrow, q)];
        }
        a[(row, nc)] = -1.0;
        a[(row + 1, nc)] = -1.0;
        b[row] = output_dev_bound - z0;
        b[row + 1] = output_dev_bound + z0;
        row += 2;
    }
    // hard yaw-rate band on output row 3
    for i in 0..np {
        let zrow = i * ny + (ny - 1);
        let z0 = free_response[zrow];
        for q in 0..nc {
            a[(row, q)] = pm.s[(zrow, q)];
            a[(row + 1, q)] = -pm.s[(zrow, q)];
        }
        b[row] = yaw_rate_bound - z0;
        b[row + 1] = yaw_rate_bound + z0;
        row += 2;
    }
    // slack nonnegativity
    a[(row, nc)] = -1.0;
    b[row] = 0.0;

    // extend the cost with the slack column
    let mut n_ext = DMatrix::zeros(cols, cols);
    n_ext.view_mut((0, 0), (nc, nc)).copy_from(&qp.n_mat);
    n_ext[(nc, nc)] = slack_weight;
    let mut m_ext = DVector::zeros(cols);
    m_ext.rows_mut(0, nc).copy_from(&qp.m_vec);

    qp.n_mat = n_ext;
    qp.m_vec = m_ext;
    qp.a_ineq = a;
    qp.b_ineq = b;
    qp.has_slack = true;
    qp
}

/// Solver result.
#[derive(Debug, Clone)]
pub struct QpSolution {
    pub x: DVector<f64>,
    pub iterations: usize,
    /// False when the iteration cap was reached before the KKT residual
    /// dropped below tolerance; the returned iterate is then projected onto
    /// the simple bounds.
    pub converged: bool,
    /// Dual multipliers, for warm-starting the next solve.
    pub lambda: DVector<f64>,
}

pub const QP_KKT_TOL: f64 = 1e-8;
pub const QP_MAX_ITERS: usize = 500;

/// Solves the QP: the unconstrained minimizer `x* = N^{-1} M / 2` is
/// returned directly when feasible, otherwise the dual is iterated by
/// cyclic coordinate ascent (Hildreth) until the KKT residual passes
/// [`QP_KKT_TOL`] or [`QP_MAX_ITERS`] sweeps. A warm-started dual makes the
/// receding-horizon sequence converge in a few sweeps per tick.
pub fn solve_qp(qp: &QpProblem, warm: Option<&DVector<f64>>) -> Result<QpSolution, MpcError> {
    let n_sym = (&qp.n_mat + qp.n_mat.transpose()) * 0.5;
    let chol = Cholesky::new(n_sym).ok_or(MpcError::NotPositiveDefinite)?;
    let x_free = chol.solve(&(&qp.m_vec * 0.5));
    let m_rows = qp.a_ineq.nrows();
    if m_rows == 0 {
        return Ok(QpSolution {
            x: x_free,
            iterations: 0,
            converged: true,
            lambda: DVector::zeros(0),
        });
    }

    let viol_free = (&qp.a_ineq * &x_free) - &qp.b_ineq;
    if viol_free.iter().all(|v| *v <= QP_KKT_TOL) {
        return Ok(QpSolution {
            x: x_free,
            iterations: 0,
            converged: true,
            lambda: DVector::zeros(m_rows),
        });
    }

    // Dual problem data: P = A H^{-1} A', d = A x* - b, with H = 2N.
    let hinv_at = chol.solve(&qp.a_ineq.transpose()) * 0.5;
    let p = &qp.a_ineq * &hinv_at;
    let d = viol_free;
    let scale = qp
        .b_ineq
        .iter()
        .fold(1.0f64, |m, b| m.max(b.abs()));

    let mut lambda = match warm {
        Some(w) if w.len() == m_rows => w.clone(),
        _ => DVector::zeros(m_rows),
    };
    let mut iterations = 0;
    let mut converged = false;
    while iterations < QP_MAX_ITERS {
        iterations += 1;
        let mut max_update = 0.0f64;
        for i in 0..m_rows {
            let pii = p[(i, i)];
            if pii < 1e-14 {
                continue;
            }
            let resid = d[i] - p.row(i).transpose().dot(&lambda);
            // over-relaxed ascent step; projection keeps the dual feasible
            let next = (lambda[i] + 1.6 * resid / pii).max(0.0);
            max_update = max_update.max((next - lambda[i]).abs() * pii.sqrt());
            lambda[i] = next;
        }
        if max_update < QP_KKT_TOL {
            converged = true;
            break;
        }
        // periodic primal KKT check: feasible and complementary is done
        if iterations % 32 == 0 {
            let x = &x_free - &hinv_at * &lambda;
            let v = &qp.a_ineq * &x - &qp.b_ineq;
            let primal = v.iter().fold(f64::NEG_INFINITY, |m, t| m.max(*t));
            let comp = v
                .iter()
                .zip(lambda.iter())
                .fold(0.0f64, |m, (t, l)| m.max((t * l).abs()));
            if primal <= QP_KKT_TOL * scale && comp <= QP_KKT_TOL * scale {
                converged = true;
                break;
            }
        }
    }

    let mut x = &x_free - &hinv_at * &lambda;
    if !converged {
        // project onto the simple rows (unit-coefficient bounds) so the
        // returned iterate at least respects them
        for i in 0..m_rows {
            let row = qp.a_ineq.row(i);
            let nonzero: Vec<usize> = (0..row.ncols()).filter(|j| row[*j] != 0.0).collect();
            if nonzero.len() == 1 {
                let j = nonzero[0];
                let coeff = row[j];
                let bound = qp.b_ineq[i] / coeff;
                let exceeded = (coeff > 0.0 && x[j] > bound) || (coeff < 0.0 && x[j] < bound);
                if exceeded {
                    x[j] = bound;
                }
            }
        }
    }
    Ok(QpSolution {
        x,
        iterations,
        converged,
        lambda,
    })
}

/// Per-tick measurement for the controller: the projected errors plus the
/// plant's body rates.
#[derive(Debug, Clone, Copy)]
pub struct MpcMeasurement {
    pub dy: f64,
    pub ydot: f64,
    pub dphi: f64,
    pub phidot: f64,
    pub vx: f64,
    pub v_ref: f64,
    /// Foot-point arc length on the path (m).
    pub s: f64,
}

/// Diagnostics of one control step.
#[derive(Debug, Clone, Copy)]
pub struct MpcStepOutput {
    pub command: ControlCommand,
    pub delta_u: f64,
    pub cost: f64,
    pub sigma: f64,
    pub converged: bool,
    pub iterations: usize,
}

/// Stateful controller owning the held input and the dual warm start.
pub struct MpcController {
    cfg: MpcConfig,
    params: VehicleParams,
    u_prev: f64,
    warm: Option<DVector<f64>>,
}

impl MpcController {
    pub fn new(cfg: MpcConfig, params: VehicleParams) -> Self {
        MpcController {
            cfg,
            params,
            u_prev: 0.0,
            warm: None,
        }
    }

    pub fn config(&self) -> &MpcConfig {
        &self.cfg
    }

    pub fn held_input(&self) -> f64 {
        self.u_prev
    }

    /// One receding-horizon step: rebuild the model at the current speed,
    /// stack the reference and disturbance previews, solve the constrained
    /// QP and apply the first increment.
    pub fn step(
        &mut self,
        meas: &MpcMeasurement,
        path: &ReferencePath,
    ) -> Result<MpcStepOutput, MpcError> {
        let cfg = &self.cfg;
        let vx = meas.vx.max(VX_MIN_DYNAMIC);
        let l_eff = (vx * cfg.preview_time).max(1.0);
        let ss = build_state_space(vx, l_eff, &self.params)?;
        let dm = discretize_ss(&ss, cfg.t);
        let pm = build_prediction(&dm, cfg.np, cfg.nc);

        // Known desired-yaw-rate sequence over the horizon, padded past the
        // path end by the interpolation clamp. The preview walks the arc at
        // the planned speed profile, so braking into a curve shifts the
        // anticipated curvature to where the vehicle will actually be.
        let mut w = DVector::zeros(cfg.np + 1);
        let mut s_ahead = meas.s;
        let mut v_ahead = vx;
        for j in 0..=cfg.np {
            let point = path.interp_at(s_ahead);
            w[j] = v_ahead.max(VX_MIN_DYNAMIC) * point.curvature;
            v_ahead = crate::plant::longitudinal_step(
                v_ahead,
                point.v_ref,
                cfg.t,
                crate::plant::A_MAX_DEFAULT,
                crate::plant::A_DEC_MAX_DEFAULT,
            );
            s_ahead += v_ahead * cfg.t;
        }

        // Reference: zero tracking deviations and the path yaw rate. The
        // preview output is a model quantity that equals its curvature
        // feedforward l_eff^2 * phidot_des / (2 vx) at perfect tracking;
        // referencing it to zero would pay the controller to cut curves.
        let mut r_stack = DVector::zeros(4 * cfg.np);
        for i in 1..=cfg.np {
            r_stack[(i - 1) * 4 + 2] = l_eff * l_eff * w[i] / (2.0 * vx);
            r_stack[(i - 1) * 4 + 3] = w[i];
        }

        let x = DVector::from_column_slice(&[meas.dy, meas.ydot, meas.dphi, meas.phidot]);
        let free_response = &pm.h * &x + &pm.p * self.u_prev + &pm.sw * &w;
        let eps = &r_stack - &free_response;

        let qp = build_cost(&pm, &cfg.q_diag, cfg.ru, cfg.r, &eps, self.u_prev);
        let yaw_bound = 0.85 * self.params.mu * self.params.g / vx;
        let qp = build_constraints(
            qp,
            &pm,
            &free_response,
            self.u_prev,
            cfg.du_bound,
            cfg.u_bound,
            cfg.output_dev_bound,
            yaw_bound,
            cfg.slack_weight,
        );

        let sol = solve_qp(&qp, self.warm.as_ref())?;
        self.warm = Some(sol.lambda.clone());
        let delta_u = sol.x[0].clamp(-cfg.du_bound, cfg.du_bound);
        let u = (self.u_prev + delta_u)
            .clamp(-cfg.u_bound, cfg.u_bound)
            .clamp(-STEER_PHYSICAL_LIMIT, STEER_PHYSICAL_LIMIT);
        self.u_prev = u;

        Ok(MpcStepOutput {
            command: ControlCommand::new(u, meas.v_ref),
            delta_u,
            cost: qp.objective(&sol.x),
            sigma: sol.x[qp.n_du],
            converged: sol.converged,
            iterations: sol.iterations,
        })
    }
}
