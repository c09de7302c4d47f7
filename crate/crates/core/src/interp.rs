//! Smooth interpolation and fixed-length resampling of trajectories.

use crate::error::{invalid, Result};
use crate::geometry::{rotation_angle, slerp_unchecked};
use crate::types::{Gripper, Trajectory, Waypoint};

/// Default number of waypoints after normalization.
pub const DEFAULT_M_NORM: usize = 15;

/// Default interpolation spacing (meters) used before normalization.
pub const DEFAULT_SPACING: f64 = 0.005;

/// Meters of arc length charged per radian of rotation when resampling.
pub const ROTATION_ARC_SCALE: f64 = 0.02;

fn blend(a: &Waypoint, b: &Waypoint, u: f64, gripper: Gripper) -> Waypoint {
    Waypoint {
        gripper,
        translation: a.translation + (b.translation - a.translation) * u,
        rotation: slerp_unchecked(&a.rotation, &b.rotation, u),
    }
}

/// Inserts waypoints so that consecutive translations are at most `spacing`
/// apart. Inserted waypoints take the gripper state of the waypoint before them.
pub fn interpolate_trajectory(traj: &Trajectory, spacing: f64) -> Result<Trajectory> {
    if !(spacing > 0.0 && spacing.is_finite()) {
        return Err(invalid(format!("spacing must be positive, got {spacing}")));
    }
    let wps = traj.waypoints();
    let mut out = Vec::with_capacity(wps.len());
    for pair in wps.windows(2) {
        let (a, b) = (&pair[0], &pair[1]);
        out.push(a.clone());
        let d = (b.translation - a.translation).norm();
        let inserted = ((d / spacing - 1e-9).ceil() as usize).saturating_sub(1);
        for k in 1..=inserted {
            let u = k as f64 / (inserted + 1) as f64;
            out.push(blend(a, b, u, a.gripper));
        }
    }
    out.push(wps[wps.len() - 1].clone());
    Ok(Trajectory::new(traj.id(), out)?)
}

fn segment_length(a: &Waypoint, b: &Waypoint) -> f64 {
    (b.translation - a.translation).norm()
        + ROTATION_ARC_SCALE * rotation_angle(&a.rotation, &b.rotation)
}

/// Inclusive index ranges of constant-gripper runs.
fn gripper_runs(wps: &[Waypoint]) -> Vec<(usize, usize)> {
    let mut runs = Vec::new();
    let mut start = 0;
    for i in 1..=wps.len() {
        if i == wps.len() || wps[i].gripper != wps[start].gripper {
            runs.push((start, i - 1));
            start = i;
        }
    }
    runs
}

/// Splits `total` slots across runs: one each, then the rest in proportion
/// to `weights` with largest-remainder rounding (ties go to the earlier run).
fn allocate_slots(weights: &[f64], total: usize) -> Vec<usize> {
    let n = weights.len();
    let mut slots = vec![1usize; n];
    let extra = total - n;
    if extra == 0 {
        return slots;
    }
    let sum: f64 = weights.iter().sum();
    let weights: Vec<f64> = if sum > 0.0 {
        weights.to_vec()
    } else {
        vec![1.0; n]
    };
    let sum: f64 = weights.iter().sum();
    let quotas: Vec<f64> = weights.iter().map(|w| extra as f64 * w / sum).collect();
    let mut given = 0;
    for (s, q) in slots.iter_mut().zip(&quotas) {
        let f = q.floor() as usize;
        *s += f;
        given += f;
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        let fa = quotas[a] - quotas[a].floor();
        let fb = quotas[b] - quotas[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &i in order.iter().cycle().take(extra - given) {
        slots[i] += 1;
    }
    slots
}

/// Resamples one run at `count` evenly spaced arc-length fractions.
fn resample_run(run: &[Waypoint], count: usize, out: &mut Vec<Waypoint>) {
    let gripper = run[0].gripper;
    if run.len() == 1 || count == 1 {
        out.extend(std::iter::repeat_n(run[0].clone(), count));
        return;
    }
    let mut cum = Vec::with_capacity(run.len());
    cum.push(0.0);
    for pair in run.windows(2) {
        let last = *cum.last().unwrap();
        cum.push(last + segment_length(&pair[0], &pair[1]));
    }
    let total = *cum.last().unwrap();
    if total <= 1e-15 {
        // All poses coincide; fall back to index parametrization.
        for (i, c) in cum.iter_mut().enumerate() {
            *c = i as f64;
        }
    }
    let total = *cum.last().unwrap();
    for k in 0..count {
        if k == count - 1 {
            out.push(run[run.len() - 1].clone());
            continue;
        }
        let target = total * k as f64 / (count - 1) as f64;
        let seg = (0..run.len() - 1)
            .find(|&s| cum[s + 1] > target)
            .unwrap_or(run.len() - 2);
        let len = cum[seg + 1] - cum[seg];
        let u = if len > 0.0 {
            ((target - cum[seg]) / len).clamp(0.0, 1.0)
        } else {
            0.0
        };
        out.push(blend(&run[seg], &run[seg + 1], u, gripper));
    }
}

/// Resamples to exactly `m_norm` waypoints while keeping the collapsed
/// gripper sequence. Each constant-gripper run keeps at least one waypoint;
/// the remaining slots follow run arc length.
pub fn normalize_trajectory(traj: &Trajectory, m_norm: usize) -> Result<Trajectory> {
    let wps = traj.waypoints();
    let runs = gripper_runs(wps);
    if m_norm < runs.len() {
        return Err(invalid(format!(
            "m_norm {m_norm} is smaller than the {} gripper runs",
            runs.len()
        )));
    }
    let weights: Vec<f64> = runs
        .iter()
        .map(|&(s, e)| {
            wps[s..=e]
                .windows(2)
                .map(|p| segment_length(&p[0], &p[1]))
                .sum()
        })
        .collect();
    let slots = allocate_slots(&weights, m_norm);
    let mut out = Vec::with_capacity(m_norm);
    for (&(s, e), &count) in runs.iter().zip(&slots) {
        resample_run(&wps[s..=e], count, &mut out);
    }
    Ok(Trajectory::new(traj.id(), out)?)
}

/// Pose at playback parameter `t` in `[0, 1]`.
///
/// Waypoints are spaced uniformly in `t`; within a segment translation is
/// linear and rotation is Slerp, with the gripper of the segment's first
/// waypoint. This is the reference the browser editor's playback follows.
pub fn pose_at(traj: &Trajectory, t: f64) -> Result<Waypoint> {
    if !(0.0..=1.0).contains(&t) {
        return Err(invalid(format!("playback parameter {t} outside [0, 1]")));
    }
    let wps = traj.waypoints();
    if wps.len() == 1 || t == 1.0 {
        return Ok(wps[wps.len() - 1].clone());
    }
    let u = t * (wps.len() - 1) as f64;
    let k = (u.floor() as usize).min(wps.len() - 2);
    Ok(blend(&wps[k], &wps[k + 1], u - k as f64, wps[k].gripper))
}
