//! Gyro integration and local-to-world transforms for the insole IMUs.

use nalgebra::{Matrix3, UnitQuaternion, Vector3};

use crate::data::Vec3;
use crate::error::{invalid, MotionError, Result};

pub type Rotation = UnitQuaternion<f64>;

/// Integrates local-frame angular rates (degree/s) into orientations.
///
/// `out[0] = initial`, `out[k] = out[k-1] * exp(rate[k] * dt)`, with the
/// quaternion renormalized after every step.
pub fn integrate_orientation(gyro_deg: &[Vec3], initial: Rotation, dt: f64) -> Result<Vec<Rotation>> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(invalid(format!("integration step must be positive, got {dt}")));
    }
    let mut out = Vec::with_capacity(gyro_deg.len());
    let mut q = initial;
    for (k, w) in gyro_deg.iter().enumerate() {
        if w.iter().any(|v| !v.is_finite()) {
            return Err(MotionError::NonFinite {
                index: k,
                what: format!("angular rate {w:?}"),
            });
        }
        if k > 0 {
            let rad = Vector3::new(w[0], w[1], w[2]).map(f64::to_radians) * dt;
            q *= UnitQuaternion::from_scaled_axis(rad);
            q.renormalize();
        }
        out.push(q);
    }
    Ok(out)
}

/// Inverse of one integration step: the local angular rate (degree/s) that
/// rotates `from` into `to` over `dt`.
pub fn relative_rate(from: &Rotation, to: &Rotation, dt: f64) -> Vec3 {
    let w = (from.inverse() * to).scaled_axis() / dt;
    [w.x.to_degrees(), w.y.to_degrees(), w.z.to_degrees()]
}

/// Rotates a local-frame acceleration into the world frame. The rotation is
/// given as a matrix so callers holding raw data get an orthonormality check.
pub fn to_world_acceleration(accel_local: Vec3, orientation: &Matrix3<f64>) -> Result<Vec3> {
    let gram = orientation.transpose() * orientation;
    let off = (gram - Matrix3::identity()).abs().max();
    if off > 1e-6 || orientation.determinant() < 0.0 {
        return Err(invalid(format!(
            "orientation is not a proper rotation (|R^T R - I| = {off:.3e})"
        )));
    }
    let v = orientation * Vector3::from(accel_local);
    Ok([v.x, v.y, v.z])
}

#[cfg(test)]
mod tests {
    use super::*;

    const DT: f64 = 1.0 / 30.0;

    fn angle_between(a: &Rotation, b: &Rotation) -> f64 {
        a.angle_to(b)
    }

    #[test]
    fn zero_rate_stays_at_identity() {
        let out = integrate_orientation(&vec![[0.0; 3]; 50], Rotation::identity(), DT).unwrap();
        assert!(out.iter().all(|q| angle_between(q, &Rotation::identity()) == 0.0));
    }

    #[test]
    fn constant_yaw_rate_matches_closed_form() {
        // 31 samples = 30 increments = 1 s
        let out = integrate_orientation(&vec![[0.0, 0.0, 90.0]; 31], Rotation::identity(), DT).unwrap();
        let expect = Rotation::from_axis_angle(&Vector3::z_axis(), std::f64::consts::FRAC_PI_2);
        let last = out.last().unwrap();
        assert!((last.to_rotation_matrix().matrix() - expect.to_rotation_matrix().matrix()).abs().max() < 1e-6);
    }

    #[test]
    fn full_turn_returns_to_identity() {
        let out = integrate_orientation(&vec![[90.0, 0.0, 0.0]; 121], Rotation::identity(), DT).unwrap();
        let m = out.last().unwrap().to_rotation_matrix();
        assert!((m.matrix() - Matrix3::identity()).abs().max() < 1e-5);
    }

    #[test]
    fn stays_orthonormal_over_long_runs() {
        let gyro: Vec<Vec3> = (0..100_000)
            .map(|k| {
                let t = k as f64 * 0.01;
                [120.0 * t.sin(), 80.0 * (1.3 * t).cos(), 45.0]
            })
            .collect();
        let out = integrate_orientation(&gyro, Rotation::identity(), DT).unwrap();
        let m = out.last().unwrap().to_rotation_matrix();
        let gram = m.matrix().transpose() * m.matrix();
        assert!((gram - Matrix3::identity()).abs().max() < 1e-6);
    }

    #[test]
    fn non_finite_rate_reports_index() {
        let mut gyro = vec![[0.0; 3]; 10];
        gyro[7][1] = f64::NAN;
        match integrate_orientation(&gyro, Rotation::identity(), DT) {
            Err(MotionError::NonFinite { index, .. }) => assert_eq!(index, 7),
            other => panic!("unexpected {other:?}"),
        }
        assert!(integrate_orientation(&gyro, Rotation::identity(), 0.0).is_err());
    }

    #[test]
    fn relative_rate_inverts_integration() {
        let a = Rotation::from_euler_angles(0.1, -0.3, 1.0);
        let b = a * Rotation::from_scaled_axis(Vector3::new(0.01, 0.02, -0.03));
        let w = relative_rate(&a, &b, DT);
        let back = integrate_orientation(&[[0.0; 3], w], a, DT).unwrap();
        assert!(back[1].angle_to(&b) < 1e-12);
    }

    #[test]
    fn world_acceleration_cases() {
        let id = Matrix3::identity();
        assert_eq!(to_world_acceleration([0.0, 0.0, 1.0], &id).unwrap(), [0.0, 0.0, 1.0]);
        let yaw = Rotation::from_axis_angle(&Vector3::z_axis(), std::f64::consts::FRAC_PI_2);
        let r = *yaw.to_rotation_matrix().matrix();
        let out = to_world_acceleration([1.0, 0.0, 0.0], &r).unwrap();
        // explicit 90-degree yaw: (x, y) -> (-y, x)
        let oracle = Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0) * Vector3::new(1.0, 0.0, 0.0);
        for i in 0..3 {
            assert!((out[i] - oracle[i]).abs() < 1e-12);
        }
        let norm = out.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-6);
        assert_eq!(to_world_acceleration([0.0; 3], &r).unwrap(), [0.0; 3]);
        let skew = Matrix3::new(1.0, 0.1, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0);
        assert!(to_world_acceleration([1.0, 0.0, 0.0], &skew).is_err());
    }
}
