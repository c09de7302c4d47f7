//! DTW-MT: dynamic-time-warping distance between manipulation trajectories.
//!
//! The pairwise cost combines translation, rotation and gripper
//! disagreement, weighted down for waypoints far from the part origin. The
//! cumulative cost of the optimal warp is divided by the number of matched
//! pairs on that warp.

use nalgebra::Quaternion;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::geometry::rotation_angle;
use crate::types::{Trajectory, Waypoint};

/// Metric constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricParams {
    /// Translation scale, meters.
    pub alpha_t: f64,
    /// Rotation scale, degrees.
    pub alpha_r: f64,
    /// Gripper-mismatch penalty.
    pub beta: f64,
    /// Proximity decay, 1/meters.
    pub gamma: f64,
}

impl Default for MetricParams {
    fn default() -> Self {
        MetricParams {
            alpha_t: 0.0075,
            alpha_r: 3.75,
            beta: 1.0,
            gamma: 4.0,
        }
    }
}

impl MetricParams {
    pub fn new(alpha_t: f64, alpha_r: f64, beta: f64, gamma: f64) -> Result<Self> {
        let p = MetricParams {
            alpha_t,
            alpha_r,
            beta,
            gamma,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.alpha_t, self.alpha_r, self.beta, self.gamma];
        if all.iter().all(|v| v.is_finite() && *v > 0.0) {
            Ok(())
        } else {
            Err(invalid(format!(
                "metric parameters must be positive: {self:?}"
            )))
        }
    }
}

/// Outcome of one DTW-MT comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DtwResult {
    /// `cumulative / path_length`.
    pub distance: f64,
    /// Cumulative cost `D(m_A, m_B)` of the optimal warp.
    pub cumulative: f64,
    pub path_length: usize,
    /// Matched index pairs, 0-based, from `(0, 0)` to `(m_A - 1, m_B - 1)`.
    pub path: Vec<(usize, usize)>,
}

/// Angle between two orientations in degrees, in `[0, 180]`.
pub fn angle_difference(a: &Quaternion<f64>, b: &Quaternion<f64>) -> f64 {
    rotation_angle(a, b).to_degrees()
}

fn proximity_weight(wp: &Waypoint, gamma: f64) -> f64 {
    (-gamma * wp.translation.norm()).exp()
}

/// Local cost between two waypoints, each expressed in its own part frame.
pub fn waypoint_cost(a: &Waypoint, b: &Waypoint, params: &MetricParams) -> f64 {
    let d_t = (a.translation - b.translation).norm();
    let d_r = angle_difference(&a.rotation, &b.rotation);
    let d_g = if a.gripper != b.gripper { 1.0 } else { 0.0 };
    proximity_weight(a, params.gamma)
        * proximity_weight(b, params.gamma)
        * (d_t / params.alpha_t + d_r / params.alpha_r)
        * (1.0 + params.beta * d_g)
}

/// Cumulative-cost matrix, row-major `m_a x m_b`.
pub(crate) fn cumulative_matrix(a: &[Waypoint], b: &[Waypoint], params: &MetricParams) -> Vec<f64> {
    let (ma, mb) = (a.len(), b.len());
    let mut d = vec![0.0; ma * mb];
    for i in 0..ma {
        for j in 0..mb {
            let c = waypoint_cost(&a[i], &b[j], params);
            d[i * mb + j] = match (i, j) {
                (0, 0) => c,
                (_, 0) => d[(i - 1) * mb] + c,
                (0, _) => d[j - 1] + c,
                _ => {
                    let diag = d[(i - 1) * mb + j - 1];
                    let up = d[(i - 1) * mb + j];
                    let left = d[i * mb + j - 1];
                    c + diag.min(up).min(left)
                }
            };
        }
    }
    d
}

/// DTW-MT over raw waypoint slices; fails on empty input.
pub fn dtw_waypoints(a: &[Waypoint], b: &[Waypoint], params: &MetricParams) -> Result<DtwResult> {
    if a.is_empty() || b.is_empty() {
        return Err(invalid("DTW-MT needs non-empty trajectories"));
    }
    let (ma, mb) = (a.len(), b.len());
    let d = cumulative_matrix(a, b, params);
    let at = |i: usize, j: usize| d[i * mb + j];

    // Backtrace; ties prefer diagonal, then up (i - 1), then left (j - 1).
    let (mut i, mut j) = (ma - 1, mb - 1);
    let mut path = vec![(i, j)];
    while (i, j) != (0, 0) {
        if i == 0 {
            j -= 1;
        } else if j == 0 {
            i -= 1;
        } else {
            let diag = at(i - 1, j - 1);
            let up = at(i - 1, j);
            let left = at(i, j - 1);
            if diag <= up && diag <= left {
                i -= 1;
                j -= 1;
            } else if up <= left {
                i -= 1;
            } else {
                j -= 1;
            }
        }
        path.push((i, j));
    }
    path.reverse();

    let cumulative = at(ma - 1, mb - 1);
    let path_length = path.len();
    Ok(DtwResult {
        distance: cumulative / path_length as f64,
        cumulative,
        path_length,
        path,
    })
}

/// DTW-MT between two trajectories expressed in their part frames.
pub fn dtw_mt(a: &Trajectory, b: &Trajectory, params: &MetricParams) -> DtwResult {
    dtw_waypoints(a.waypoints(), b.waypoints(), params).expect("trajectories are non-empty")
}

/// Shorthand for `dtw_mt(a, b, params).distance`.
pub fn distance(a: &Trajectory, b: &Trajectory, params: &MetricParams) -> f64 {
    dtw_mt(a, b, params).distance
}
