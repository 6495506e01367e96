//! Closed-loop simulation harness for the planning and tracking stack:
//! scenario ingestion, plan/smooth/profile pipeline, tracking runs with
//! either controller, CSV traces, metrics and SVG plots.

pub mod harness;
pub mod plots;

pub use harness::{
    compare, emit_csv, format_comparison, path_geometry_hash, plan_geometry, profile_speeds, run,
    run_on_path, track, CompareRow, HarnessError, RunMetrics, TickRecord,
};
