//! Planning and tracking stack for a drive-by-wire vehicle in an obstacle
//! field: potential-field path planning, spline/quintic smoothing, constraint
//! aware speed profiling and two interchangeable lateral controllers closed
//! over a single-track plant model.

pub mod apf;
pub mod cc;
pub mod config;
pub mod domain;
pub mod mpc;
pub mod path;
pub mod plant;
pub mod speed;

pub use domain::{
    normalize_angle, Bounds, ControlCommand, ControllerKind, DomainError, Obstacle, PathPoint,
    Pose, ReferencePath, Scenario, SimTiming, VehicleParams,
};
