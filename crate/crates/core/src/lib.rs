//! Part-based manipulation trajectory transfer.
//!
//! A segmented object part and a natural-language instruction are embedded
//! next to trajectories in a shared space; the trajectory library entry
//! closest to the query is transferred to the new part.

pub mod dataset;
pub mod dtw;
pub mod error;
pub mod featurize;
pub mod frame;
pub mod geometry;
pub mod inference;
pub mod interp;
pub mod neural;
pub mod synthetic;
pub mod types;

pub use error::{Error, Result};
pub use types::{
    ColoredPoint, Gripper, PointCloudPart, Trajectory, TrajectoryParseError, ValidationError,
    Waypoint,
};
