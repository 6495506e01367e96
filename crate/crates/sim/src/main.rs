use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use parktrack_core::config::{self, ScenarioDoc};
use parktrack_core::domain::ControllerKind;
use parktrack_sim::harness::{self, HarnessError};

#[derive(Parser)]
#[command(name = "parktrack", about = "Obstacle-field path planning and tracking simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Plan and smooth the reference path only; writes path.csv and path.svg.
    Plan {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Full closed-loop run; writes trace.csv, metrics.json and plots.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        /// Override the scenario's controller choice.
        #[arg(long, value_parser = parse_controller)]
        controller: Option<ControllerKind>,
        /// Override the legal speed (km/h).
        #[arg(long)]
        speed: Option<f64>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Plan once, then track with both controllers at 30 and 50 km/h.
    Compare {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
}

fn parse_controller(s: &str) -> Result<ControllerKind, String> {
    match s.to_ascii_lowercase().as_str() {
        "cc" => Ok(ControllerKind::Cc),
        "mpc" => Ok(ControllerKind::Mpc),
        other => Err(format!("unknown controller '{other}', expected cc or mpc")),
    }
}

fn load_doc(path: &PathBuf, speed_kmh: Option<f64>) -> Result<ScenarioDoc, HarnessError> {
    let text = std::fs::read_to_string(path)?;
    let mut doc = config::parse_document(&text).map_err(HarnessError::Scenario)?;
    if let Some(kmh) = speed_kmh {
        doc.scenario.v_set_kmh = Some(kmh);
        doc.scenario.v_set_ms = None;
        doc.to_scenario().map_err(HarnessError::Scenario)?;
    }
    Ok(doc)
}

fn execute() -> Result<(), HarnessError> {
    match Cli::parse().command {
        Command::Plan { scenario, out } => {
            let doc = load_doc(&scenario, None)?;
            let sc = doc.to_scenario().map_err(HarnessError::Scenario)?;
            let geometry = harness::plan_geometry(&doc)?;
            let path = harness::profile_speeds(&geometry, &sc, &doc.vehicle);
            std::fs::create_dir_all(&out)?;
            let mut csv = String::from("s,x,y,heading,curvature,v_ref\n");
            for p in path.points() {
                csv.push_str(&format!(
                    "{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}\n",
                    p.s, p.x, p.y, p.heading, p.curvature, p.v_ref
                ));
            }
            std::fs::write(out.join("path.csv"), csv)?;
            parktrack_sim::plots::write_run_plots(&sc, &path, &[], &out)?;
            println!(
                "planned {:.1} m, peak |curvature| {:.3} 1/m -> {}",
                path.length(),
                path.points().iter().map(|p| p.curvature.abs()).fold(0.0, f64::max),
                out.display()
            );
            Ok(())
        }
        Command::Run {
            scenario,
            controller,
            speed,
            out,
        } => {
            let doc = load_doc(&scenario, speed)?;
            let sc = doc.to_scenario().map_err(HarnessError::Scenario)?;
            let kind = controller.unwrap_or(sc.controller);
            let metrics = harness::run(&doc, kind, &out)?;
            println!(
                "{} at {:.0} km/h: max|dy| {:.3} m, rms {:.3} m, completed {}",
                metrics.controller, metrics.v_set_kmh, metrics.max_abs_dy, metrics.rms_dy,
                metrics.completed
            );
            if let Some(f) = &metrics.failure {
                return Err(HarnessError::Tracking(f.clone()));
            }
            Ok(())
        }
        Command::Compare { scenario, out } => {
            let doc = load_doc(&scenario, None)?;
            let rows = harness::compare(&doc, &out)?;
            print!("{}", harness::format_comparison(&rows));
            if let Some(bad) = rows.iter().find_map(|r| r.metrics.failure.clone()) {
                return Err(HarnessError::Tracking(bad));
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match execute() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
