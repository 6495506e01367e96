//! Self-contained SVG plots built from polyline primitives; no plotting
//! dependency, so runs stay headless-friendly.

// SVG fragments are emitted as multiline blocks with their own trailing
// newlines.
#![allow(clippy::write_with_newline)]

/// One named, colored time series.
type Series<'a> = (&'a str, &'a str, Vec<(f64, f64)>);

use std::fmt::Write as _;
use std::path::Path;

use parktrack_core::domain::{ReferencePath, Scenario};

use crate::harness::{HarnessError, TickRecord};

const W: f64 = 840.0;
const H: f64 = 560.0;
const MARGIN: f64 = 58.0;

struct Frame {
    x_min: f64,
    x_max: f64,
    y_min: f64,
    y_max: f64,
}

impl Frame {
    fn of(points: impl Iterator<Item = (f64, f64)>, equal_aspect: bool) -> Frame {
        let mut f = Frame {
            x_min: f64::INFINITY,
            x_max: f64::NEG_INFINITY,
            y_min: f64::INFINITY,
            y_max: f64::NEG_INFINITY,
        };
        for (x, y) in points {
            f.x_min = f.x_min.min(x);
            f.x_max = f.x_max.max(x);
            f.y_min = f.y_min.min(y);
            f.y_max = f.y_max.max(y);
        }
        if !f.x_min.is_finite() {
            f = Frame { x_min: 0.0, x_max: 1.0, y_min: 0.0, y_max: 1.0 };
        }
        let pad = |lo: &mut f64, hi: &mut f64| {
            let span = (*hi - *lo).max(1e-9);
            *lo -= 0.05 * span;
            *hi += 0.05 * span;
        };
        pad(&mut f.x_min, &mut f.x_max);
        pad(&mut f.y_min, &mut f.y_max);
        if equal_aspect {
            let (sx, sy) = (f.x_max - f.x_min, f.y_max - f.y_min);
            let plot_ratio = (W - 2.0 * MARGIN) / (H - 2.0 * MARGIN);
            if sx / sy > plot_ratio {
                let want = sx / plot_ratio;
                let grow = (want - sy) / 2.0;
                f.y_min -= grow;
                f.y_max += grow;
            } else {
                let want = sy * plot_ratio;
                let grow = (want - sx) / 2.0;
                f.x_min -= grow;
                f.x_max += grow;
            }
        }
        f
    }

    fn px(&self, x: f64) -> f64 {
        MARGIN + (x - self.x_min) / (self.x_max - self.x_min) * (W - 2.0 * MARGIN)
    }

    fn py(&self, y: f64) -> f64 {
        H - MARGIN - (y - self.y_min) / (self.y_max - self.y_min) * (H - 2.0 * MARGIN)
    }
}

fn axis_ticks(lo: f64, hi: f64) -> Vec<f64> {
    let span = hi - lo;
    let raw = span / 6.0;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|s| span / s <= 7.0)
        .unwrap_or(mag * 10.0);
    let mut t = (lo / step).ceil() * step;
    let mut out = Vec::new();
    while t <= hi + 1e-12 {
        out.push(t);
        t += step;
    }
    out
}

struct Svg {
    body: String,
    frame: Frame,
}

impl Svg {
    fn new(frame: Frame, title: &str, xlabel: &str, ylabel: &str) -> Svg {
        let mut body = String::new();
        let _ = write!(
            body,
            r##"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">
<rect width="{W}" height="{H}" fill="white"/>
<text x="{:.0}" y="24" font-family="sans-serif" font-size="16" text-anchor="middle">{title}</text>
<text x="{:.0}" y="{:.0}" font-family="sans-serif" font-size="12" text-anchor="middle">{xlabel}</text>
<text x="16" y="{:.0}" font-family="sans-serif" font-size="12" text-anchor="middle" transform="rotate(-90 16 {:.0})">{ylabel}</text>
"##,
            W / 2.0,
            W / 2.0,
            H - 12.0,
            H / 2.0,
            H / 2.0,
        );
        let f = &frame;
        for tx in axis_ticks(f.x_min, f.x_max) {
            let px = f.px(tx);
            let _ = write!(
                body,
                r##"<line x1="{px:.1}" y1="{:.1}" x2="{px:.1}" y2="{:.1}" stroke="#dddddd"/>
<text x="{px:.1}" y="{:.1}" font-family="sans-serif" font-size="10" text-anchor="middle">{tx:.6}</text>
"##,
                MARGIN,
                H - MARGIN,
                H - MARGIN + 16.0
            );
        }
        for ty in axis_ticks(f.y_min, f.y_max) {
            let py = f.py(ty);
            let _ = write!(
                body,
                r##"<line x1="{:.1}" y1="{py:.1}" x2="{:.1}" y2="{py:.1}" stroke="#dddddd"/>
<text x="{:.1}" y="{py:.1}" font-family="sans-serif" font-size="10" text-anchor="end">{ty:.6}</text>
"##,
                MARGIN,
                W - MARGIN,
                MARGIN - 6.0
            );
        }
        let _ = write!(
            body,
            r##"<rect x="{MARGIN}" y="{MARGIN}" width="{:.1}" height="{:.1}" fill="none" stroke="#333333"/>
"##,
            W - 2.0 * MARGIN,
            H - 2.0 * MARGIN
        );
        Svg { body, frame }
    }

    fn polyline(&mut self, pts: impl Iterator<Item = (f64, f64)>, color: &str, width: f64) {
        let mut d = String::new();
        for (x, y) in pts {
            let _ = write!(d, "{:.2},{:.2} ", self.frame.px(x), self.frame.py(y));
        }
        let _ = write!(
            self.body,
            r##"<polyline points="{}" fill="none" stroke="{color}" stroke-width="{width}"/>
"##,
            d.trim_end()
        );
    }

    fn circle(&mut self, cx: f64, cy: f64, r_world: f64, stroke: &str, fill: &str) {
        let rx = (self.frame.px(cx + r_world) - self.frame.px(cx)).abs();
        let _ = write!(
            self.body,
            r##"<circle cx="{:.2}" cy="{:.2}" r="{rx:.2}" stroke="{stroke}" fill="{fill}" fill-opacity="0.35"/>
"##,
            self.frame.px(cx),
            self.frame.py(cy)
        );
    }

    fn legend(&mut self, entries: &[(&str, &str)]) {
        for (i, (label, color)) in entries.iter().enumerate() {
            let y = MARGIN + 16.0 + 18.0 * i as f64;
            let _ = write!(
                self.body,
                r##"<line x1="{:.1}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="{color}" stroke-width="2"/>
<text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="11">{label}</text>
"##,
                W - MARGIN - 130.0,
                W - MARGIN - 104.0,
                W - MARGIN - 98.0,
                y + 4.0
            );
        }
    }

    fn finish(mut self) -> String {
        self.body.push_str("</svg>\n");
        self.body
    }
}

fn time_series(
    title: &str,
    ylabel: &str,
    series: &[Series],
    out: &Path,
) -> Result<(), HarnessError> {
    let frame = Frame::of(
        series.iter().flat_map(|(_, _, pts)| pts.iter().copied()),
        false,
    );
    let mut svg = Svg::new(frame, title, "t [s]", ylabel);
    for (_, color, pts) in series {
        svg.polyline(pts.iter().copied(), color, 1.4);
    }
    svg.legend(
        &series
            .iter()
            .map(|(label, color, _)| (*label, *color))
            .collect::<Vec<_>>(),
    );
    std::fs::write(out, svg.finish())?;
    Ok(())
}

/// Writes the per-run plot set: path overlay with obstacles plus the time
/// series of deviation, speed, steering-wheel angle, lateral acceleration
/// and (for the CC controller) preview time.
pub fn write_run_plots(
    scenario: &Scenario,
    path: &ReferencePath,
    records: &[TickRecord],
    out_dir: &Path,
) -> Result<(), HarnessError> {
    // path overlay
    let frame = Frame::of(
        path.points()
            .iter()
            .map(|p| (p.x, p.y))
            .chain(records.iter().map(|r| (r.x, r.y)))
            .chain(
                scenario
                    .obstacles
                    .iter()
                    .flat_map(|o| [(o.cx - o.r, o.cy - o.r), (o.cx + o.r, o.cy + o.r)]),
            ),
        true,
    );
    let mut svg = Svg::new(frame, "Planned path and driven trajectory", "X [m]", "Y [m]");
    for ob in &scenario.obstacles {
        svg.circle(ob.cx, ob.cy, ob.r + ob.q_star, "#bbbbbb", "none");
        svg.circle(ob.cx, ob.cy, ob.r, "#884444", "#cc8888");
    }
    svg.polyline(path.points().iter().map(|p| (p.x, p.y)), "#555555", 1.2);
    svg.polyline(records.iter().map(|r| (r.x, r.y)), "#1565c0", 1.8);
    svg.legend(&[("reference", "#555555"), ("driven", "#1565c0")]);
    std::fs::write(out_dir.join("path.svg"), svg.finish())?;

    time_series(
        "Lateral deviation",
        "dy [m]",
        &[("dy", "#c62828", records.iter().map(|r| (r.t, r.dy)).collect())],
        &out_dir.join("dy.svg"),
    )?;
    time_series(
        "Speed tracking",
        "v [m/s]",
        &[
            ("v", "#1565c0", records.iter().map(|r| (r.t, r.v)).collect()),
            ("v_ref", "#555555", records.iter().map(|r| (r.t, r.v_ref)).collect()),
        ],
        &out_dir.join("speed.svg"),
    )?;
    time_series(
        "Steering wheel angle",
        "delta_sw [deg]",
        &[(
            "delta_sw",
            "#2e7d32",
            records
                .iter()
                .map(|r| (r.t, r.steering_wheel.to_degrees()))
                .collect(),
        )],
        &out_dir.join("steering.svg"),
    )?;
    time_series(
        "Lateral acceleration",
        "a_lat [m/s^2]",
        &[("a_lat", "#6a1b9a", records.iter().map(|r| (r.t, r.a_lat)).collect())],
        &out_dir.join("alat.svg"),
    )?;
    let tp: Vec<(f64, f64)> = records
        .iter()
        .filter_map(|r| r.tp.map(|tp| (r.t, tp)))
        .collect();
    if !tp.is_empty() {
        time_series(
            "Preview time",
            "Tp [s]",
            &[("Tp", "#ef6c00", tp)],
            &out_dir.join("tp.svg"),
        )?;
    }
    Ok(())
}
