//! Path post-processing: cubic-spline interpolation of the planner polyline,
//! piecewise quintic fitting over 10-point windows and heading/curvature
//! computation, producing a drivable [`ReferencePath`].

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::domain::{DomainError, PathPoint, ReferencePath};

/// Windows whose least-squares residual RMS exceeds this are rejected (m).
pub const QUINTIC_RMS_MAX: f64 = 0.05;

#[derive(Debug, Error)]
pub enum PathError {
    #[error("need at least {needed} points, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("duplicate consecutive point at index {index}")]
    DuplicatePoint { index: usize },
    #[error("window {window} is degenerate: chainage not strictly increasing in the rotated frame")]
    DegenerateWindow { window: usize },
    #[error("window {window} fit residual RMS {rms:.4} m exceeds {max} m")]
    FitResidual { window: usize, rms: f64, max: f64 },
    #[error("rank-deficient fit in window {window}")]
    RankDeficient { window: usize },
    #[error(transparent)]
    Domain(#[from] DomainError),
}

/// One cubic piece of a chord-length-parameterized 2D spline. The local
/// parameter u runs over [0, 1]; `t0` and `h` place the piece on the global
/// chainage axis.
#[derive(Debug, Clone, Copy)]
pub struct SplineSegment {
    pub t0: f64,
    pub h: f64,
    pub ax: [f64; 4],
    pub ay: [f64; 4],
}

impl SplineSegment {
    fn eval_poly(c: &[f64; 4], u: f64) -> f64 {
        c[0] + u * (c[1] + u * (c[2] + u * c[3]))
    }

    pub fn position(&self, u: f64) -> (f64, f64) {
        (Self::eval_poly(&self.ax, u), Self::eval_poly(&self.ay, u))
    }

    /// First derivative with respect to the global chainage parameter.
    pub fn derivative(&self, u: f64) -> (f64, f64) {
        let dx = self.ax[1] + u * (2.0 * self.ax[2] + 3.0 * u * self.ax[3]);
        let dy = self.ay[1] + u * (2.0 * self.ay[2] + 3.0 * u * self.ay[3]);
        (dx / self.h, dy / self.h)
    }

    /// Second derivative with respect to the global chainage parameter.
    pub fn second_derivative(&self, u: f64) -> (f64, f64) {
        let dx = 2.0 * self.ax[2] + 6.0 * u * self.ax[3];
        let dy = 2.0 * self.ay[2] + 6.0 * u * self.ay[3];
        (dx / (self.h * self.h), dy / (self.h * self.h))
    }
}

/// Natural cubic spline through 1D values at given knots (Thomas algorithm).
/// Returns per-segment coefficients in the local form
/// `f(t) = a + b dt + c dt^2 + d dt^3`, `dt = t - t_i`.
fn natural_spline_1d(t: &[f64], f: &[f64]) -> Vec<[f64; 4]> {
    let n = t.len();
    let h: Vec<f64> = (0..n - 1).map(|i| t[i + 1] - t[i]).collect();

    // Second-derivative system with natural boundary conditions.
    let mut sub = vec![0.0; n];
    let mut diag = vec![1.0; n];
    let mut sup = vec![0.0; n];
    let mut rhs = vec![0.0; n];
    for i in 1..n - 1 {
        sub[i] = h[i - 1];
        diag[i] = 2.0 * (h[i - 1] + h[i]);
        sup[i] = h[i];
        rhs[i] = 6.0 * ((f[i + 1] - f[i]) / h[i] - (f[i] - f[i - 1]) / h[i - 1]);
    }
    // Forward elimination.
    for i in 1..n {
        let w = sub[i] / diag[i - 1];
        diag[i] -= w * sup[i - 1];
        rhs[i] -= w * rhs[i - 1];
    }
    let mut m = vec![0.0; n];
    m[n - 1] = rhs[n - 1] / diag[n - 1];
    for i in (0..n - 1).rev() {
        m[i] = (rhs[i] - sup[i] * m[i + 1]) / diag[i];
    }

    (0..n - 1)
        .map(|i| {
            let a = f[i];
            let b = (f[i + 1] - f[i]) / h[i] - h[i] * (2.0 * m[i] + m[i + 1]) / 6.0;
            let c = m[i] / 2.0;
            let d = (m[i + 1] - m[i]) / (6.0 * h[i]);
            [a, b, c, d]
        })
        .collect()
}

/// Fits a natural cubic spline through the polyline, parameterized by
/// cumulative chord length.
pub fn fit_spline(polyline: &[(f64, f64)]) -> Result<Vec<SplineSegment>, PathError> {
    if polyline.len() < 4 {
        return Err(PathError::TooFewPoints {
            needed: 4,
            got: polyline.len(),
        });
    }
    let mut t = Vec::with_capacity(polyline.len());
    t.push(0.0);
    for (i, w) in polyline.windows(2).enumerate() {
        let d = (w[1].0 - w[0].0).hypot(w[1].1 - w[0].1);
        if d < 1e-12 {
            return Err(PathError::DuplicatePoint { index: i + 1 });
        }
        t.push(t[i] + d);
    }
    let xs: Vec<f64> = polyline.iter().map(|p| p.0).collect();
    let ys: Vec<f64> = polyline.iter().map(|p| p.1).collect();
    let cx = natural_spline_1d(&t, &xs);
    let cy = natural_spline_1d(&t, &ys);

    Ok((0..polyline.len() - 1)
        .map(|i| {
            let h = t[i + 1] - t[i];
            let to_unit = |c: [f64; 4]| [c[0], c[1] * h, c[2] * h * h, c[3] * h * h * h];
            SplineSegment {
                t0: t[i],
                h,
                ax: to_unit(cx[i]),
                ay: to_unit(cy[i]),
            }
        })
        .collect())
}

fn eval_segments(segments: &[SplineSegment], t: f64) -> (f64, f64) {
    let last = segments.last().unwrap();
    let total = last.t0 + last.h;
    let t = t.clamp(0.0, total);
    let i = segments
        .partition_point(|s| s.t0 + s.h < t)
        .min(segments.len() - 1);
    let seg = &segments[i];
    seg.position((t - seg.t0) / seg.h)
}

/// Interpolates the polyline with a natural cubic spline and resamples it at
/// uniform chord spacing. The spline passes through every input point; the
/// final sample lands exactly on the last input point.
pub fn spline_interpolate(
    polyline: &[(f64, f64)],
    spacing: f64,
) -> Result<Vec<(f64, f64)>, PathError> {
    let segments = fit_spline(polyline)?;
    let last = segments.last().unwrap();
    let total = last.t0 + last.h;
    let n = (total / spacing).floor() as usize;
    let mut out: Vec<(f64, f64)> = (0..=n).map(|k| eval_segments(&segments, k as f64 * spacing)).collect();
    let end = *polyline.last().unwrap();
    let tail_gap = total - n as f64 * spacing;
    if tail_gap > 1e-9 {
        if tail_gap < 0.25 * spacing && out.len() > 1 {
            *out.last_mut().unwrap() = end;
        } else {
            out.push(end);
        }
    } else {
        *out.last_mut().unwrap() = end;
    }
    Ok(out)
}

/// Degree-5 fit of one 10-point window, expressed in a window-local frame
/// whose x-axis is the window chord so y(x) stays single-valued on curved
/// geometry.
#[derive(Debug, Clone)]
pub struct QuinticPiece {
    pub window: usize,
    /// `y_local = sum coeffs[k] * x_local^k`.
    pub coeffs: [f64; 6],
    /// Global position of the local frame origin.
    pub origin: (f64, f64),
    /// (cos, sin) of the local x-axis direction.
    pub rot: (f64, f64),
    /// Covered local chainage range.
    pub x_span: (f64, f64),
    /// Fit residual RMS over the window points (m).
    pub rms: f64,
}

impl QuinticPiece {
    pub fn eval_local(&self, x: f64) -> f64 {
        self.coeffs
            .iter()
            .rev()
            .fold(0.0, |acc, c| acc * x + c)
    }

    pub fn eval_global(&self, x_local: f64) -> (f64, f64) {
        let y = self.eval_local(x_local);
        let (c, s) = self.rot;
        (
            self.origin.0 + c * x_local - s * y,
            self.origin.1 + s * x_local + c * y,
        )
    }
}

fn fit_window(
    window_idx: usize,
    pts: &[(f64, f64)],
    max_rms: f64,
) -> Result<(QuinticPiece, Vec<(f64, f64)>), PathError> {
    let first = pts[0];
    let last = *pts.last().unwrap();
    let chord = ((last.0 - first.0), (last.1 - first.1));
    let len = chord.0.hypot(chord.1);
    if len < 1e-9 {
        return Err(PathError::DegenerateWindow { window: window_idx });
    }
    let rot = (chord.0 / len, chord.1 / len);
    let local: Vec<(f64, f64)> = pts
        .iter()
        .map(|p| {
            let dx = p.0 - first.0;
            let dy = p.1 - first.1;
            (rot.0 * dx + rot.1 * dy, -rot.1 * dx + rot.0 * dy)
        })
        .collect();
    for w in local.windows(2) {
        if w[1].0 <= w[0].0 {
            return Err(PathError::DegenerateWindow { window: window_idx });
        }
    }

    // The frame origin is the window's first point, so pinning the constant
    // term to zero makes the fitted curve start exactly there; consecutive
    // windows then join without a jump.
    let rows = local.len();
    let mut design = DMatrix::zeros(rows, 5);
    let mut target = DVector::zeros(rows);
    for (i, &(x, y)) in local.iter().enumerate() {
        let mut pow = x;
        for k in 0..5 {
            design[(i, k)] = pow;
            pow *= x;
        }
        target[i] = y;
    }
    let svd = design.svd(true, true);
    let sol = svd
        .solve(&target, 1e-12)
        .map_err(|_| PathError::RankDeficient { window: window_idx })?;
    let mut coeffs = [0.0; 6];
    for k in 0..5 {
        coeffs[k + 1] = sol[k];
    }

    let piece = QuinticPiece {
        window: window_idx,
        coeffs,
        origin: first,
        rot,
        x_span: (local[0].0, local.last().unwrap().0),
        rms: 0.0,
    };
    let mut sq = 0.0;
    let mut fitted = Vec::with_capacity(rows);
    for &(x, y) in &local {
        let r = piece.eval_local(x) - y;
        sq += r * r;
        fitted.push(piece.eval_global(x));
    }
    let rms = (sq / rows as f64).sqrt();
    if rms > max_rms {
        return Err(PathError::FitResidual {
            window: window_idx,
            rms,
            max: max_rms,
        });
    }
    Ok((QuinticPiece { rms, ..piece }, fitted))
}

/// Least-squares quintic fit per `window`-point window, with one shared
/// boundary point between consecutive windows: each window starts at the
/// previous window's last fitted point, so the evaluated curve is continuous
/// by construction.
pub fn quintic_fit(points: &[(f64, f64)], window: usize) -> Result<Vec<QuinticPiece>, PathError> {
    quintic_fit_smoothed(points, window, QUINTIC_RMS_MAX).map(|(pieces, _)| pieces)
}

/// Fit result plus the smoothed point sequence.
pub type QuinticFit = (Vec<QuinticPiece>, Vec<(f64, f64)>);

/// Same fit, additionally returning the smoothed point sequence.
pub fn quintic_fit_smoothed(
    points: &[(f64, f64)],
    window: usize,
    max_rms: f64,
) -> Result<QuinticFit, PathError> {
    let n = points.len();
    if window < 6 || n < window {
        return Err(PathError::TooFewPoints {
            needed: window.max(6),
            got: n,
        });
    }

    // Window index ranges with a shared boundary point; a short tail merges
    // into the final window instead of forming one with < 6 points.
    let mut ranges: Vec<(usize, usize)> = Vec::new();
    let mut start = 0;
    loop {
        let end = (start + window - 1).min(n - 1);
        if n - 1 - end < 5 {
            ranges.push((start, n - 1));
            break;
        }
        ranges.push((start, end));
        start = end;
    }

    let mut work: Vec<(f64, f64)> = points.to_vec();
    let mut pieces = Vec::with_capacity(ranges.len());
    let mut smoothed: Vec<(f64, f64)> = Vec::with_capacity(n);
    for (w, &(i0, i1)) in ranges.iter().enumerate() {
        let (piece, fitted) = fit_window(w, &work[i0..=i1], max_rms)?;
        // Chain: the shared boundary point becomes its fitted position.
        work[i1] = *fitted.last().unwrap();
        let keep_from = if w == 0 { 0 } else { 1 };
        smoothed.extend_from_slice(&fitted[keep_from..]);
        pieces.push(piece);
    }
    Ok((pieces, smoothed))
}

/// Quadratic-fit first and second derivatives of `f(s)` at `s_at`, using the
/// three samples `(s, f)`; one-sided when `s_at` is an endpoint.
fn three_point_derivatives(s: [f64; 3], f: [f64; 3], s_at: f64) -> (f64, f64) {
    let d01 = s[0] - s[1];
    let d02 = s[0] - s[2];
    let d12 = s[1] - s[2];
    let w0 = f[0] / (d01 * d02);
    let w1 = f[1] / (-d01 * d12);
    let w2 = f[2] / (d02 * d12);
    let first = w0 * (2.0 * s_at - s[1] - s[2]) + w1 * (2.0 * s_at - s[0] - s[2])
        + w2 * (2.0 * s_at - s[0] - s[1]);
    let second = 2.0 * (w0 + w1 + w2);
    (first, second)
}

/// Computes arc length, heading and signed curvature from positions by
/// finite differences; counter-clockwise turns get positive curvature.
/// Reference speeds are left at zero.
pub fn compute_heading_curvature(
    points: &[(f64, f64)],
    resolution: f64,
) -> Result<ReferencePath, PathError> {
    let n = points.len();
    if n < 3 {
        return Err(PathError::TooFewPoints { needed: 3, got: n });
    }
    let mut s = vec![0.0; n];
    for i in 1..n {
        let d = (points[i].0 - points[i - 1].0).hypot(points[i].1 - points[i - 1].1);
        if d < 1e-12 {
            return Err(PathError::DuplicatePoint { index: i });
        }
        s[i] = s[i - 1] + d;
    }

    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let j = i.clamp(1, n - 2);
        let sv = [s[j - 1], s[j], s[j + 1]];
        let xv = [points[j - 1].0, points[j].0, points[j + 1].0];
        let yv = [points[j - 1].1, points[j].1, points[j + 1].1];
        let (dx, ddx) = three_point_derivatives(sv, xv, s[i]);
        let (dy, ddy) = three_point_derivatives(sv, yv, s[i]);
        let speed_sq = dx * dx + dy * dy;
        let curvature = (dx * ddy - dy * ddx) / speed_sq.powf(1.5);
        out.push(PathPoint {
            s: s[i],
            x: points[i].0,
            y: points[i].1,
            heading: dy.atan2(dx),
            curvature,
            v_ref: 0.0,
        });
    }
    Ok(ReferencePath::new(out, resolution)?)
}
