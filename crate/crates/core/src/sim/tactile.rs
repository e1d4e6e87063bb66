use rand::Rng;
use rand_distr::Normal;

use super::grasp::GripperConfig;
use super::render::round_f32;
use crate::error::{HgnnError, Result};
use crate::geometry::{add, dist2, ObjectModel, PointCloud, Pose, Vec3};

/// Standard deviation of the contact-point jitter (meters).
pub const CONTACT_NOISE: f64 = 0.0005;

/// Per-sensor contact clouds: posed surface points within the contact
/// radius, nearest first, capped, jittered, and indexed by sensor.
pub fn tactile_contacts<R: Rng + ?Sized>(
    model: &ObjectModel,
    pose: &Pose,
    sensors: &[Vec3],
    gripper: &GripperConfig,
    rng: &mut R,
) -> Result<Vec<PointCloud>> {
    let r2 = gripper.contact_radius * gripper.contact_radius;
    let posed: Vec<Vec3> = model
        .surface_points
        .iter()
        .map(|&p| pose.apply(p))
        .collect();
    let noise = Normal::new(0.0, CONTACT_NOISE).expect("valid sigma");
    let mut clouds = Vec::with_capacity(sensors.len());
    let mut total = 0;
    for &s in sensors {
        let mut near: Vec<(f64, usize)> = posed
            .iter()
            .enumerate()
            .filter_map(|(i, &p)| {
                let d = dist2(p, s);
                (d < r2).then_some((d, i))
            })
            .collect();
        near.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        near.truncate(gripper.max_points_per_sensor);
        let points: Vec<Vec3> = near
            .into_iter()
            .map(|(_, i)| {
                let j = [rng.sample(noise), rng.sample(noise), rng.sample(noise)];
                round_f32(add(posed[i], j))
            })
            .filter(|&p| dist2(p, s) < r2)
            .collect();
        total += points.len();
        clouds.push(PointCloud::new(points));
    }
    if total == 0 {
        return Err(HgnnError::Generation("no tactile contact points".into()));
    }
    Ok(clouds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::objects::{make_object, ObjectSpec};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn far_sensor_gets_nothing_and_cap_holds() {
        let m = make_object(&ObjectSpec::Sphere { radius: 0.04 }, 2048).unwrap();
        let pose = Pose::new([1.0, 0.0, 0.0, 0.0], [0.0, 0.0, 0.5]);
        let g = GripperConfig {
            max_points_per_sensor: 8,
            ..GripperConfig::default()
        };
        let sensors = [[0.0, 0.0, 0.46], [1.0, 1.0, 1.0]];
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let c = tactile_contacts(&m, &pose, &sensors, &g, &mut rng).unwrap();
        assert!(!c[0].is_empty() && c[0].len() <= 8);
        assert!(c[1].is_empty());
        for p in &c[0].points {
            assert!(dist2(*p, sensors[0]) < g.contact_radius.powi(2));
        }
    }

    #[test]
    fn no_contact_is_an_error() {
        let m = make_object(&ObjectSpec::Sphere { radius: 0.04 }, 1024).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let res = tactile_contacts(
            &m,
            &Pose::identity(),
            &[[1.0; 3]],
            &GripperConfig::default(),
            &mut rng,
        );
        assert!(res.is_err());
    }
}
