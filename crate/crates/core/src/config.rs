//! Scenario file model: one nested JSON document with top-level sections
//! `scenario`, `vehicle`, `planner` and `controller`. Unknown keys are
//! rejected everywhere. Speeds may be written in km/h or m/s and headings in
//! degrees or radians; exactly one spelling per field, converted to SI here
//! and nowhere else.

use serde::{Deserialize, Serialize};

use crate::apf::ApfConfig;
use crate::cc::{CcConfig, FuzzyPreviewConfig};
use crate::domain::{
    Bounds, ControllerKind, DomainError, Obstacle, Pose, Scenario, SimTiming, VehicleParams,
    KMH_TO_MS,
};
use crate::mpc::MpcConfig;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioDoc {
    pub scenario: ScenarioSection,
    #[serde(default)]
    pub vehicle: VehicleParams,
    #[serde(default)]
    pub planner: ApfConfig,
    #[serde(default)]
    pub controller: ControllerSection,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControllerSection {
    pub cc: CcConfig,
    pub fuzzy: FuzzyPreviewConfig,
    pub mpc: MpcConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSection {
    pub start: StartDoc,
    pub goal: PointDoc,
    #[serde(default)]
    pub obstacles: Vec<ObstacleDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v_set_kmh: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v_set_ms: Option<f64>,
    #[serde(default = "default_lambda_d")]
    pub lambda_d: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bounds: Option<BoundsDoc>,
    #[serde(default)]
    pub controller: ControllerChoice,
    #[serde(default)]
    pub sim: SimDoc,
}

fn default_lambda_d() -> f64 {
    0.65
}

#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ControllerChoice {
    #[default]
    Cc,
    Mpc,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StartDoc {
    pub x: f64,
    pub y: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub heading_deg: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub heading_rad: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub speed_kmh: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub speed_ms: Option<f64>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PointDoc {
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundsDoc {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObstacleDoc {
    pub cx: f64,
    pub cy: f64,
    pub r: f64,
    /// Influence range; defaults to `r + 3` m.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q_star: Option<f64>,
    /// Repulsive coefficient; defaults to 15.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimDoc {
    pub ts_s: f64,
    pub t_end_s: f64,
    pub t_delay_s: f64,
}

impl Default for SimDoc {
    fn default() -> Self {
        let t = SimTiming::default();
        SimDoc {
            ts_s: t.ts,
            t_end_s: t.t_end,
            t_delay_s: t.t_delay,
        }
    }
}

/// Picks the SI value from an either-unit pair; at most one may be present.
fn one_of(
    field: &'static str,
    si: Option<f64>,
    other: Option<f64>,
    factor: f64,
    default: f64,
) -> Result<f64, DomainError> {
    match (si, other) {
        (Some(_), Some(_)) => Err(DomainError::invalid(
            field,
            "give the value in exactly one unit, not both".to_string(),
        )),
        (Some(v), None) => Ok(v),
        (None, Some(v)) => Ok(v * factor),
        (None, None) => Ok(default),
    }
}

impl ScenarioDoc {
    pub fn to_scenario(&self) -> Result<Scenario, DomainError> {
        let s = &self.scenario;
        let heading = one_of(
            "scenario.start.heading",
            s.start.heading_rad,
            s.start.heading_deg,
            std::f64::consts::PI / 180.0,
            0.0,
        )?;
        let speed = one_of(
            "scenario.start.speed",
            s.start.speed_ms,
            s.start.speed_kmh,
            KMH_TO_MS,
            0.0,
        )?;
        let v_set = one_of("scenario.v_set", s.v_set_ms, s.v_set_kmh, KMH_TO_MS, 30.0 * KMH_TO_MS)?;

        let obstacles: Vec<Obstacle> = s
            .obstacles
            .iter()
            .map(|o| Obstacle {
                cx: o.cx,
                cy: o.cy,
                r: o.r,
                q_star: o.q_star.unwrap_or(o.r + 3.0),
                eta: o.eta.unwrap_or(15.0),
            })
            .collect();

        let bounds = match s.bounds {
            Some(b) => Bounds {
                x_min: b.x_min,
                x_max: b.x_max,
                y_min: b.y_min,
                y_max: b.y_max,
            },
            None => {
                // pad a box around everything in the scenario
                let mut xs = vec![s.start.x, s.goal.x];
                let mut ys = vec![s.start.y, s.goal.y];
                for o in &obstacles {
                    xs.push(o.cx - o.r - o.q_star);
                    xs.push(o.cx + o.r + o.q_star);
                    ys.push(o.cy - o.r - o.q_star);
                    ys.push(o.cy + o.r + o.q_star);
                }
                let fold = |v: &[f64], f: fn(f64, f64) -> f64, init: f64| {
                    v.iter().copied().fold(init, f)
                };
                Bounds {
                    x_min: fold(&xs, f64::min, f64::INFINITY) - 25.0,
                    x_max: fold(&xs, f64::max, f64::NEG_INFINITY) + 25.0,
                    y_min: fold(&ys, f64::min, f64::INFINITY) - 25.0,
                    y_max: fold(&ys, f64::max, f64::NEG_INFINITY) + 25.0,
                }
            }
        };

        let scenario = Scenario {
            start: Pose::new(s.start.x, s.start.y, heading, speed),
            goal: (s.goal.x, s.goal.y),
            obstacles,
            v_set,
            lambda_d: s.lambda_d,
            bounds,
            controller: match s.controller {
                ControllerChoice::Cc => ControllerKind::Cc,
                ControllerChoice::Mpc => ControllerKind::Mpc,
            },
            sim: SimTiming {
                ts: s.sim.ts_s,
                t_end: s.sim.t_end_s,
                t_delay: s.sim.t_delay_s,
            },
        };
        self.vehicle.validate()?;
        scenario.validate()?;
        Ok(scenario)
    }
}

/// Parses the full document, validating every section.
pub fn parse_document(text: &str) -> Result<ScenarioDoc, DomainError> {
    let doc: ScenarioDoc =
        serde_json::from_str(text).map_err(|e| DomainError::Parse(e.to_string()))?;
    doc.to_scenario()?; // fail fast on invariant violations
    for (name, check) in [
        ("planner", doc.planner.validate()),
        ("controller.cc", doc.controller.cc.validate()),
        ("controller.fuzzy", doc.controller.fuzzy.validate()),
        ("controller.mpc", doc.controller.mpc.validate()),
    ] {
        check.map_err(|m| DomainError::Validation {
            field: name,
            message: m,
        })?;
    }
    Ok(doc)
}

/// Parses a document and returns the validated scenario alone.
pub fn load_scenario(text: &str) -> Result<Scenario, DomainError> {
    parse_document(text).and_then(|doc| doc.to_scenario())
}

/// Renders a scenario back into the document format using SI spellings, so a
/// serialize/load round trip is exact.
pub fn serialize_scenario(sc: &Scenario) -> String {
    let doc = ScenarioDoc {
        scenario: ScenarioSection {
            start: StartDoc {
                x: sc.start.x,
                y: sc.start.y,
                heading_deg: None,
                heading_rad: Some(sc.start.theta),
                speed_kmh: None,
                speed_ms: Some(sc.start.v),
            },
            goal: PointDoc {
                x: sc.goal.0,
                y: sc.goal.1,
            },
            obstacles: sc
                .obstacles
                .iter()
                .map(|o| ObstacleDoc {
                    cx: o.cx,
                    cy: o.cy,
                    r: o.r,
                    q_star: Some(o.q_star),
                    eta: Some(o.eta),
                })
                .collect(),
            v_set_kmh: None,
            v_set_ms: Some(sc.v_set),
            lambda_d: sc.lambda_d,
            bounds: Some(BoundsDoc {
                x_min: sc.bounds.x_min,
                x_max: sc.bounds.x_max,
                y_min: sc.bounds.y_min,
                y_max: sc.bounds.y_max,
            }),
            controller: match sc.controller {
                ControllerKind::Cc => ControllerChoice::Cc,
                ControllerKind::Mpc => ControllerChoice::Mpc,
            },
            sim: SimDoc {
                ts_s: sc.sim.ts,
                t_end_s: sc.sim.t_end,
                t_delay_s: sc.sim.t_delay,
            },
        },
        vehicle: VehicleParams::default(),
        planner: ApfConfig::default(),
        controller: ControllerSection::default(),
    };
    serde_json::to_string_pretty(&doc).expect("scenario serialization cannot fail")
}
