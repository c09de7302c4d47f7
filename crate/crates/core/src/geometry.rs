//! Quaternion helpers: Slerp, angle between orientations, constructors.

use nalgebra::{Quaternion, Vector3};

use crate::error::{invalid, Result};
use crate::types::UNIT_NORM_TOLERANCE;

pub(crate) fn check_unit(q: &Quaternion<f64>, what: &str) -> Result<()> {
    let n = q.norm();
    if !n.is_finite() || (n - 1.0).abs() > UNIT_NORM_TOLERANCE {
        return Err(invalid(format!(
            "{what} is not a unit quaternion (norm {n})"
        )));
    }
    Ok(())
}

/// Rotation of `angle` radians about `axis` (normalized internally).
pub fn axis_angle(axis: Vector3<f64>, angle: f64) -> Quaternion<f64> {
    let a = axis.normalize() * (angle / 2.0).sin();
    Quaternion::new((angle / 2.0).cos(), a.x, a.y, a.z)
}

/// Spherical linear interpolation along the shorter great-circle arc.
///
/// `q1` is negated when `<q0, q1> < 0`, so `t = 1` returns `q1` up to sign.
pub fn slerp(q0: &Quaternion<f64>, q1: &Quaternion<f64>, t: f64) -> Result<Quaternion<f64>> {
    check_unit(q0, "q0")?;
    check_unit(q1, "q1")?;
    if !(0.0..=1.0).contains(&t) {
        return Err(invalid(format!("slerp parameter {t} outside [0, 1]")));
    }
    Ok(slerp_unchecked(q0, q1, t))
}

pub(crate) fn slerp_unchecked(
    q0: &Quaternion<f64>,
    q1: &Quaternion<f64>,
    t: f64,
) -> Quaternion<f64> {
    let mut dot = q0.dot(q1);
    let q1 = if dot < 0.0 {
        dot = -dot;
        -*q1
    } else {
        *q1
    };
    let out = if dot > 1.0 - 1e-12 {
        // Nearly parallel: the sine weights degenerate, lerp is exact enough.
        q0 * (1.0 - t) + q1 * t
    } else {
        let theta = dot.min(1.0).acos();
        let s = theta.sin();
        q0 * (((1.0 - t) * theta).sin() / s) + q1 * ((t * theta).sin() / s)
    };
    out / out.norm()
}

/// Rotation angle in radians between two orientations, in `[0, pi]`.
///
/// Invariant to the sign of either quaternion.
pub fn rotation_angle(a: &Quaternion<f64>, b: &Quaternion<f64>) -> f64 {
    // Relative rotation a * conj(b), with terms paired so that a == b gives
    // an exactly zero vector part.
    let w = a.w * b.w + a.i * b.i + a.j * b.j + a.k * b.k;
    let x = (b.w * a.i - a.w * b.i) + (a.k * b.j - a.j * b.k);
    let y = (b.w * a.j - a.w * b.j) + (a.i * b.k - a.k * b.i);
    let z = (b.w * a.k - a.w * b.k) + (a.j * b.i - a.i * b.j);
    2.0 * (x * x + y * y + z * z).sqrt().atan2(w.abs())
}

/// Representative of `q` with `w >= 0`.
pub fn canonical_sign(q: &Quaternion<f64>) -> Quaternion<f64> {
    if q.w < 0.0 {
        -*q
    } else {
        *q
    }
}
