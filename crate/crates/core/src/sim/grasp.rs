use rand::Rng;

use super::camera::CameraModel;
use crate::error::{HgnnError, Result};
use crate::geometry::{add, cross, dist2, dot, normalize, scale, sub, ObjectModel, Pose, Vec3};

/// Hand layout: fingers carrying tactile sensors.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GripperConfig {
    pub n_fingers: usize,
    pub sensors_per_finger: usize,
    /// Radius within which a sensor registers surface contact (meters).
    pub contact_radius: f64,
    pub max_points_per_sensor: usize,
}

impl Default for GripperConfig {
    fn default() -> Self {
        Self {
            n_fingers: 4,
            sensors_per_finger: 3,
            contact_radius: 0.012,
            max_points_per_sensor: 16,
        }
    }
}

impl GripperConfig {
    pub fn n_sensors(&self) -> usize {
        self.n_fingers * self.sensors_per_finger
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_fingers == 0 || self.sensors_per_finger == 0 {
            return Err(HgnnError::invalid(
                "gripper needs at least one finger and sensor",
            ));
        }
        if !(self.contact_radius > 0.0) {
            return Err(HgnnError::invalid("contact radius must be positive"));
        }
        if self.max_points_per_sensor == 0 {
            return Err(HgnnError::invalid(
                "max points per sensor must be at least 1",
            ));
        }
        Ok(())
    }
}

pub const MIN_DEPTH: f64 = 0.3;
pub const MAX_DEPTH: f64 = 0.8;

fn nearest_surface(model: &ObjectModel, p: Vec3) -> usize {
    let mut best = (f64::INFINITY, 0);
    for (i, &s) in model.surface_points.iter().enumerate() {
        let d = dist2(p, s);
        if d < best.0 {
            best = (d, i);
        }
    }
    best.1
}

/// Random in-hand pose and sensor placement (camera frame).
///
/// The rotation is uniform; the translation puts the object center 0.3 to
/// 0.8 m in front of the camera, inside the central half of the image.
/// Between one and `n_fingers` fingers touch the object: their sensors sit
/// at most half a contact radius off the surface. The remaining fingers
/// hover between 1.1 and 1.9 contact radii away.
pub fn sample_grasp<R: Rng + ?Sized>(
    model: &ObjectModel,
    gripper: &GripperConfig,
    camera: &CameraModel,
    rng: &mut R,
) -> (Pose, Vec<Vec3>) {
    let rotation = Pose::random_rotation(rng);
    let z = rng.random_range(MIN_DEPTH..=MAX_DEPTH);
    let w = camera.width as f64;
    let h = camera.height as f64;
    let u = rng.random_range(0.25 * w..=0.75 * w);
    let v = rng.random_range(0.25 * h..=0.75 * h);
    let pose = Pose::new(rotation, camera.unproject(u, v, z));

    let r = gripper.contact_radius;
    let n_contact = rng.random_range(1..=gripper.n_fingers);
    let mut fingers: Vec<usize> = (0..gripper.n_fingers).collect();
    for i in (1..fingers.len()).rev() {
        fingers.swap(i, rng.random_range(0..=i));
    }
    let touching: Vec<bool> = (0..gripper.n_fingers)
        .map(|f| fingers.iter().position(|&x| x == f).unwrap() < n_contact)
        .collect();

    let mut sensors = Vec::with_capacity(gripper.n_sensors());
    for &touch in &touching {
        let anchor = rng.random_range(0..model.num_points());
        let n = model.normals[anchor];
        let mut t = [
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        ];
        t = sub(t, scale(n, dot(t, n)));
        if dot(t, t) < 1e-12 {
            t = normalize(cross(n, [1.0, 0.0, 0.0]));
        }
        let t = normalize(t);
        for j in 0..gripper.sensors_per_finger {
            let target = add(model.surface_points[anchor], scale(t, 2.0 * r * j as f64));
            let s = nearest_surface(model, target);
            let offset = if touch {
                rng.random_range(0.0..=0.5 * r)
            } else {
                rng.random_range(1.1 * r..=1.9 * r)
            };
            let local = add(model.surface_points[s], scale(model.normals[s], offset));
            sensors.push(pose.apply(local));
        }
    }
    (pose, sensors)
}
