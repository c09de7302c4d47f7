//! Canonical part frames: origin at the part mean, `-z` along gravity and
//! `x` along the horizontal principal axis of the part.

use nalgebra::{Matrix3, Quaternion, Rotation3, UnitQuaternion, Vector3};

use crate::error::{invalid, Error, Result};
use crate::types::{PointCloudPart, Trajectory, Waypoint};

/// World-to-part rigid transform.
#[derive(Debug, Clone, PartialEq)]
pub struct PartFrame {
    pub origin: Vector3<f64>,
    /// Rows are the part axes expressed in world coordinates.
    pub rotation: Matrix3<f64>,
}

impl PartFrame {
    pub fn identity() -> Self {
        PartFrame {
            origin: Vector3::zeros(),
            rotation: Matrix3::identity(),
        }
    }

    pub fn x_axis(&self) -> Vector3<f64> {
        self.rotation.row(0).transpose()
    }

    pub fn z_axis(&self) -> Vector3<f64> {
        self.rotation.row(2).transpose()
    }

    fn rotation_quaternion(&self) -> Quaternion<f64> {
        let rot = Rotation3::from_matrix_unchecked(self.rotation);
        UnitQuaternion::from_rotation_matrix(&rot).into_inner()
    }

    pub fn point_to_part(&self, p: Vector3<f64>) -> Vector3<f64> {
        self.rotation * (p - self.origin)
    }

    pub fn point_to_world(&self, p: Vector3<f64>) -> Vector3<f64> {
        self.rotation.transpose() * p + self.origin
    }

    pub fn cloud_to_part(&self, part: &PointCloudPart) -> PointCloudPart {
        part.map_positions(|p| self.point_to_part(p))
    }
}

/// Computes the part frame of `part` under the given gravity direction.
///
/// PCA runs on the points projected onto the plane orthogonal to gravity,
/// so the `z` constraint and the principal-axis constraint hold together.
/// The `x` sign makes most points non-negative along `x`; on a tie the point
/// farthest from the mean decides.
pub fn part_frame(part: &PointCloudPart, gravity: Vector3<f64>) -> Result<PartFrame> {
    let gn = gravity.norm();
    if !(gn.is_finite() && gn > 0.0) {
        return Err(invalid("gravity must be a non-zero finite vector"));
    }
    let z = -gravity / gn;
    let origin = part.mean();
    let horizontal: Vec<Vector3<f64>> = part
        .positions()
        .map(|p| {
            let d = p - origin;
            d - z * z.dot(&d)
        })
        .collect();
    let cov = horizontal
        .iter()
        .fold(Matrix3::zeros(), |acc, d| acc + d * d.transpose())
        / horizontal.len() as f64;
    let eig = cov.symmetric_eigen();
    // z lies in the null space, so the largest eigenvalue is horizontal.
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    if eig.eigenvalues[order[0]] < 1e-12 {
        return Err(Error::DegenerateGeometry(
            "point cloud has no horizontal spread".into(),
        ));
    }
    let principal = eig.eigenvectors.column(order[0]).into_owned();
    let mut x = (principal - z * z.dot(&principal)).normalize();

    let (mut pos, mut neg) = (0usize, 0usize);
    for d in &horizontal {
        let s = d.dot(&x);
        if s > 0.0 {
            pos += 1;
        } else if s < 0.0 {
            neg += 1;
        }
    }
    let flip = if neg != pos {
        neg > pos
    } else {
        let far = horizontal
            .iter()
            .enumerate()
            .filter(|(_, d)| d.dot(&x) != 0.0)
            .max_by(|(ia, a), (ib, b)| a.norm().total_cmp(&b.norm()).then(ib.cmp(ia)));
        far.is_some_and(|(_, d)| d.dot(&x) < 0.0)
    };
    if flip {
        x = -x;
    }
    let y = z.cross(&x);
    let rotation = Matrix3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]);
    Ok(PartFrame { origin, rotation })
}

/// Expresses a world-frame trajectory in the part frame.
pub fn to_part_frame(traj: &Trajectory, frame: &PartFrame) -> Trajectory {
    let qf = frame.rotation_quaternion();
    map_trajectory(traj, |wp| Waypoint {
        gripper: wp.gripper,
        translation: frame.point_to_part(wp.translation),
        rotation: qf * wp.rotation,
    })
}

/// Inverse of [`to_part_frame`].
pub fn from_part_frame(traj: &Trajectory, frame: &PartFrame) -> Trajectory {
    let qf = frame.rotation_quaternion().conjugate();
    map_trajectory(traj, |wp| Waypoint {
        gripper: wp.gripper,
        translation: frame.point_to_world(wp.translation),
        rotation: qf * wp.rotation,
    })
}

fn map_trajectory(traj: &Trajectory, f: impl Fn(&Waypoint) -> Waypoint) -> Trajectory {
    let wps = traj.waypoints().iter().map(f).collect();
    Trajectory::new(traj.id(), wps).expect("rigid maps preserve waypoint validity")
}
