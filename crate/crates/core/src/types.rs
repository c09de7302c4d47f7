//! Trajectory and point-cloud data model.
//!
//! Translations are in meters; rotations are quaternions stored as
//! `(x, y, z, w)` on the wire. Values are validated on construction and on
//! deserialization, but never rewritten, so a trajectory that passes
//! validation serializes back to the same bytes it was parsed from.

use nalgebra::{Quaternion, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance on `| |q| - 1 |` accepted for incoming rotations.
pub const UNIT_NORM_TOLERANCE: f64 = 1e-6;

/// Largest translation norm (meters) accepted for a waypoint in a part frame.
pub const PART_FRAME_BOUND: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Gripper {
    Open,
    Closed,
    Holding,
}

impl Gripper {
    pub const ALL: [Gripper; 3] = [Gripper::Open, Gripper::Closed, Gripper::Holding];

    pub fn index(self) -> usize {
        match self {
            Gripper::Open => 0,
            Gripper::Closed => 1,
            Gripper::Holding => 2,
        }
    }
}

/// Why a waypoint, trajectory or point cloud was rejected.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ValidationError {
    #[error("trajectory has no waypoints")]
    EmptyTrajectory,
    #[error("rotation not unit norm (waypoint {index}, norm {norm})")]
    NonUnitRotation { index: usize, norm: f64 },
    #[error("non-finite value in waypoint {index}")]
    NonFinite { index: usize },
    #[error("translation out of part-frame bounds (waypoint {index})")]
    OutOfBounds { index: usize },
    #[error("point cloud has no points")]
    EmptyCloud,
    #[error("non-finite coordinate in point {index}")]
    NonFinitePoint { index: usize },
}

impl ValidationError {
    /// Short machine-readable reason, stable across releases.
    pub fn reason(&self) -> &'static str {
        match self {
            ValidationError::EmptyTrajectory => "trajectory has no waypoints",
            ValidationError::NonUnitRotation { .. } => "rotation not unit norm",
            ValidationError::NonFinite { .. } => "non-finite value",
            ValidationError::OutOfBounds { .. } => "translation out of part-frame bounds",
            ValidationError::EmptyCloud => "point cloud has no points",
            ValidationError::NonFinitePoint { .. } => "non-finite coordinate",
        }
    }

    /// Waypoint or point index the error refers to, if any.
    pub fn index(&self) -> Option<usize> {
        match *self {
            ValidationError::NonUnitRotation { index, .. }
            | ValidationError::NonFinite { index }
            | ValidationError::OutOfBounds { index }
            | ValidationError::NonFinitePoint { index } => Some(index),
            ValidationError::EmptyTrajectory | ValidationError::EmptyCloud => None,
        }
    }
}

/// One trajectory sample: gripper state plus end-effector pose.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "WaypointWire", into = "WaypointWire")]
pub struct Waypoint {
    pub gripper: Gripper,
    pub translation: Vector3<f64>,
    pub rotation: Quaternion<f64>,
}

#[derive(Serialize, Deserialize)]
struct WaypointWire {
    g: Gripper,
    t: [f64; 3],
    r: [f64; 4],
}

impl TryFrom<WaypointWire> for Waypoint {
    type Error = ValidationError;

    fn try_from(w: WaypointWire) -> Result<Self, Self::Error> {
        let [x, y, z, qw] = [w.r[0], w.r[1], w.r[2], w.r[3]];
        Waypoint::new(
            w.g,
            Vector3::new(w.t[0], w.t[1], w.t[2]),
            Quaternion::new(qw, x, y, z),
        )
    }
}

impl From<Waypoint> for WaypointWire {
    fn from(w: Waypoint) -> Self {
        let q = w.rotation.coords;
        WaypointWire {
            g: w.gripper,
            t: [w.translation.x, w.translation.y, w.translation.z],
            r: [q[0], q[1], q[2], q[3]],
        }
    }
}

impl Waypoint {
    pub fn new(
        gripper: Gripper,
        translation: Vector3<f64>,
        rotation: Quaternion<f64>,
    ) -> Result<Self, ValidationError> {
        let wp = Waypoint {
            gripper,
            translation,
            rotation,
        };
        wp.validate(0)?;
        Ok(wp)
    }

    /// Builds a waypoint whose rotation is normalized first; only fails on
    /// non-finite or zero-length input.
    pub fn normalized(
        gripper: Gripper,
        translation: Vector3<f64>,
        rotation: Quaternion<f64>,
    ) -> Result<Self, ValidationError> {
        let n = rotation.norm();
        if !(n.is_finite() && n > 0.0) {
            return Err(ValidationError::NonUnitRotation { index: 0, norm: n });
        }
        Waypoint::new(gripper, translation, rotation / n)
    }

    pub(crate) fn validate(&self, index: usize) -> Result<(), ValidationError> {
        let finite = self.translation.iter().all(|v| v.is_finite())
            && self.rotation.coords.iter().all(|v| v.is_finite());
        if !finite {
            return Err(ValidationError::NonFinite { index });
        }
        let norm = self.rotation.norm();
        if (norm - 1.0).abs() > UNIT_NORM_TOLERANCE {
            return Err(ValidationError::NonUnitRotation { index, norm });
        }
        Ok(())
    }
}

/// Ordered, non-empty sequence of waypoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TrajectoryWire", into = "TrajectoryWire")]
pub struct Trajectory {
    id: String,
    waypoints: Vec<Waypoint>,
}

#[derive(Serialize, Deserialize)]
struct TrajectoryWire {
    id: String,
    waypoints: Vec<Waypoint>,
}

#[derive(Deserialize)]
struct UncheckedTrajectory {
    id: String,
    waypoints: Vec<WaypointWire>,
}

/// Why a Trajectory JSON document was rejected.
#[derive(Debug, Error)]
pub enum TrajectoryParseError {
    #[error("malformed trajectory JSON: {0}")]
    Malformed(#[from] serde_json::Error),
    #[error(transparent)]
    Invalid(#[from] ValidationError),
}

impl TrajectoryParseError {
    pub fn reason(&self) -> &'static str {
        match self {
            TrajectoryParseError::Malformed(_) => "malformed trajectory JSON",
            TrajectoryParseError::Invalid(e) => e.reason(),
        }
    }
}

impl TryFrom<TrajectoryWire> for Trajectory {
    type Error = ValidationError;

    fn try_from(w: TrajectoryWire) -> Result<Self, Self::Error> {
        Trajectory::new(w.id, w.waypoints)
    }
}

impl From<Trajectory> for TrajectoryWire {
    fn from(t: Trajectory) -> Self {
        TrajectoryWire {
            id: t.id,
            waypoints: t.waypoints,
        }
    }
}

impl Trajectory {
    pub fn new(id: impl Into<String>, waypoints: Vec<Waypoint>) -> Result<Self, ValidationError> {
        if waypoints.is_empty() {
            return Err(ValidationError::EmptyTrajectory);
        }
        for (i, wp) in waypoints.iter().enumerate() {
            wp.validate(i)?;
        }
        Ok(Trajectory {
            id: id.into(),
            waypoints,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn waypoints(&self) -> &[Waypoint] {
        &self.waypoints
    }

    pub fn len(&self) -> usize {
        self.waypoints.len()
    }

    /// Always false; kept for clippy's `len_without_is_empty`.
    pub fn is_empty(&self) -> bool {
        self.waypoints.is_empty()
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.id = id.into();
        self
    }

    /// Parses Trajectory JSON; validation errors carry the index of the
    /// offending waypoint.
    pub fn from_json(text: &str) -> Result<Self, TrajectoryParseError> {
        let raw: UncheckedTrajectory = serde_json::from_str(text)?;
        let waypoints = raw
            .waypoints
            .into_iter()
            .enumerate()
            .map(|(i, w)| {
                let wp = Waypoint {
                    gripper: w.g,
                    translation: Vector3::from(w.t),
                    rotation: Quaternion::new(w.r[3], w.r[0], w.r[1], w.r[2]),
                };
                wp.validate(i).map(|_| wp)
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Trajectory::new(raw.id, waypoints)?)
    }

    /// Gripper sequence with consecutive repeats collapsed.
    pub fn gripper_runs(&self) -> Vec<Gripper> {
        let mut runs: Vec<Gripper> = Vec::new();
        for wp in &self.waypoints {
            if runs.last() != Some(&wp.gripper) {
                runs.push(wp.gripper);
            }
        }
        runs
    }

    /// Extra check applied to submitted demonstrations.
    pub fn check_part_frame_bounds(&self) -> Result<(), ValidationError> {
        match self
            .waypoints
            .iter()
            .position(|wp| wp.translation.norm() > PART_FRAME_BOUND)
        {
            Some(index) => Err(ValidationError::OutOfBounds { index }),
            None => Ok(()),
        }
    }

    /// Canonical JSON encoding (`id`, then `waypoints` of `g`, `t`, `r`).
    pub fn to_canonical_json(&self) -> String {
        serde_json::to_string(self).expect("trajectory serialization is infallible")
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ColoredPoint {
    pub position: Vector3<f64>,
    pub rgb: [u8; 3],
}

impl Serialize for ColoredPoint {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let p = &self.position;
        (p.x, p.y, p.z, self.rgb[0], self.rgb[1], self.rgb[2]).serialize(s)
    }
}

impl<'de> Deserialize<'de> for ColoredPoint {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let (x, y, z, r, g, b) = <(f64, f64, f64, u8, u8, u8)>::deserialize(d)?;
        Ok(ColoredPoint {
            position: Vector3::new(x, y, z),
            rgb: [r, g, b],
        })
    }
}

/// Colored points of one segmented object part.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PartWire", into = "PartWire")]
pub struct PointCloudPart {
    id: String,
    points: Vec<ColoredPoint>,
}

#[derive(Serialize, Deserialize)]
struct PartWire {
    #[serde(default, skip_serializing_if = "String::is_empty")]
    id: String,
    points: Vec<ColoredPoint>,
}

impl TryFrom<PartWire> for PointCloudPart {
    type Error = ValidationError;

    fn try_from(w: PartWire) -> Result<Self, Self::Error> {
        PointCloudPart::new(w.id, w.points)
    }
}

impl From<PointCloudPart> for PartWire {
    fn from(p: PointCloudPart) -> Self {
        PartWire {
            id: p.id,
            points: p.points,
        }
    }
}

impl PointCloudPart {
    pub fn new(id: impl Into<String>, points: Vec<ColoredPoint>) -> Result<Self, ValidationError> {
        if points.is_empty() {
            return Err(ValidationError::EmptyCloud);
        }
        if let Some(index) = points
            .iter()
            .position(|p| !p.position.iter().all(|v| v.is_finite()))
        {
            return Err(ValidationError::NonFinitePoint { index });
        }
        Ok(PointCloudPart {
            id: id.into(),
            points,
        })
    }

    /// Uncolored convenience constructor.
    pub fn from_positions(
        id: impl Into<String>,
        positions: impl IntoIterator<Item = Vector3<f64>>,
    ) -> Result<Self, ValidationError> {
        let points = positions
            .into_iter()
            .map(|position| ColoredPoint {
                position,
                rgb: [128, 128, 128],
            })
            .collect();
        PointCloudPart::new(id, points)
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn points(&self) -> &[ColoredPoint] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn positions(&self) -> impl Iterator<Item = Vector3<f64>> + '_ {
        self.points.iter().map(|p| p.position)
    }

    pub fn mean(&self) -> Vector3<f64> {
        self.positions().sum::<Vector3<f64>>() / self.points.len() as f64
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.id = id.into();
        self
    }

    pub(crate) fn map_positions(&self, f: impl Fn(Vector3<f64>) -> Vector3<f64>) -> Self {
        PointCloudPart {
            id: self.id.clone(),
            points: self
                .points
                .iter()
                .map(|p| ColoredPoint {
                    position: f(p.position),
                    rgb: p.rgb,
                })
                .collect(),
        }
    }
}
