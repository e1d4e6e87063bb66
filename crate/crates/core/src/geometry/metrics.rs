use super::cloud::{transform_all, ObjectModel, PointCloud};
use super::neighbors::nearest_distances;
use super::pose::{dist2, norm, sub, Pose, Quat, Vec3};
use crate::error::{HgnnError, Result};

/// Default visibility threshold for occlusion levels (meters).
pub const DEFAULT_OCCLUSION_THRESHOLD: f64 = 0.005;

/// Rotation angle between two unit quaternions in degrees, in `[0, 180]`.
///
/// Equals `acos(2<a, b>^2 - 1)`, evaluated as `2 atan2(|v|, |s|)` on the
/// relative rotation `s + v = conj(a) b` so that nearly identical rotations
/// do not lose precision to the flat top of `acos`.
pub fn angular_error(q_est: Quat, q_gt: Quat) -> f64 {
    let [aw, ax, ay, az] = q_est;
    let [bw, bx, by, bz] = q_gt;
    let s = aw * bw + ax * bx + ay * by + az * bz;
    let v = [
        aw * bx - ax * bw - ay * bz + az * by,
        aw * by + ax * bz - ay * bw - az * bx,
        aw * bz - ax * by + ay * bx - az * bw,
    ];
    let angle = 2.0 * norm(v).atan2(s.abs());
    angle.to_degrees().clamp(0.0, 180.0)
}

/// The textbook form `acos(clamp(2<a, b>^2 - 1))` in degrees.
pub fn angular_error_acos(q_est: Quat, q_gt: Quat) -> f64 {
    let d: f64 = q_est.iter().zip(&q_gt).map(|(a, b)| a * b).sum();
    (2.0 * d * d - 1.0).clamp(-1.0, 1.0).acos().to_degrees()
}

pub fn position_error(t_est: Vec3, t_gt: Vec3) -> f64 {
    norm(sub(t_est, t_gt))
}

/// Mean distance between model points under the two poses.
pub fn add_metric(model: &ObjectModel, pose_est: &Pose, pose_gt: &Pose) -> f64 {
    let est = transform_all(&model.surface_points, pose_est);
    let gt = transform_all(&model.surface_points, pose_gt);
    let total: f64 = est.iter().zip(&gt).map(|(a, b)| dist2(*a, *b).sqrt()).sum();
    total / model.num_points() as f64
}

/// Percentage of posed model points with no camera point within
/// `threshold` (nearest-neighbor test).
pub fn occlusion_level(
    model: &ObjectModel,
    pose_gt: &Pose,
    camera_cloud: &PointCloud,
    threshold: f64,
) -> Result<f64> {
    if !(threshold > 0.0) {
        return Err(HgnnError::invalid(format!(
            "threshold {threshold} must be positive"
        )));
    }
    if camera_cloud.is_empty() {
        return Ok(100.0);
    }
    let posed = transform_all(&model.surface_points, pose_gt);
    let hidden = nearest_distances(&posed, &camera_cloud.points)
        .into_iter()
        .filter(|&d| d > threshold)
        .count();
    Ok(100.0 * hidden as f64 / posed.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::pose::quat_from_axis_angle;
    use std::f64::consts::FRAC_PI_4;

    #[test]
    fn quarter_turn_is_ninety_degrees() {
        let q = [FRAC_PI_4.cos(), 0.0, 0.0, FRAC_PI_4.sin()];
        assert!((angular_error([1.0, 0.0, 0.0, 0.0], q) - 90.0).abs() < 1e-9);
    }

    #[test]
    fn double_cover() {
        let q = quat_from_axis_angle([0.3, -0.4, 0.8], 1.1);
        let neg = [-q[0], -q[1], -q[2], -q[3]];
        assert!(angular_error(q, q).abs() < 1e-9);
        assert!(angular_error(q, neg).abs() < 1e-9);
    }

    #[test]
    fn three_four_five() {
        assert_eq!(position_error([0.0; 3], [0.0, 3.0, 4.0]), 5.0);
        assert_eq!(position_error([1.0, 2.0, 3.0], [1.0, 2.0, 3.0]), 0.0);
    }

    #[test]
    fn half_turn_is_180() {
        let q = quat_from_axis_angle([0.0, 1.0, 0.0], std::f64::consts::PI);
        assert!((angular_error([1.0, 0.0, 0.0, 0.0], q) - 180.0).abs() < 1e-9);
    }
}
