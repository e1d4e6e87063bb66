//! Point-splat z-buffer rendering of an in-hand object.

use rand::Rng;

use super::camera::{to_u8, CameraModel, RgbImage};
use super::grasp::GripperConfig;
use crate::error::{HgnnError, Result};
use crate::geometry::{
    add, dist2, dot, mat_vec, nearest_distances, normalize, scale, sub, ObjectModel, PointCloud,
    Pose, Vec3,
};

/// Hand occluders are discs this many contact radii wide.
pub const HAND_DISC_SCALE: f64 = 1.5;
/// Palm disc radius relative to the object diameter.
pub const PALM_SCALE: f64 = 0.3;
const HAND_COLOR: Vec3 = [0.86, 0.70, 0.58];

/// Output of [`render_scene`].
#[derive(Clone, Debug)]
pub struct Rendering {
    pub rgb: RgbImage,
    /// Visible object points, rounded to `f32` precision.
    pub vision_cloud: PointCloud,
    /// Pixel `(u, v)` of each vision point.
    pub vision_pixels: Vec<[u32; 2]>,
    /// Inclusive pixel rectangle `(u0, v0, u1, v1)` of rendered object pixels.
    pub segment_bbox: [u32; 4],
}

#[derive(Clone, Copy, PartialEq)]
enum Owner {
    Background,
    Hand,
    Object(usize),
}

/// Mean nearest-neighbor spacing of the model surface samples.
pub fn surface_spacing(model: &ObjectModel) -> f64 {
    let pts = &model.surface_points;
    let grid = crate::geometry::SpatialGrid::new(pts, crate::geometry::SpatialGrid::auto_cell(pts));
    let total: f64 = pts
        .iter()
        .map(|&p| {
            let nn = grid.knn(p, 2);
            crate::geometry::dist2(p, pts[nn[1]]).sqrt()
        })
        .sum();
    total / pts.len() as f64
}

#[inline]
pub(crate) fn round_f32(p: Vec3) -> Vec3 {
    [p[0] as f32 as f64, p[1] as f32 as f64, p[2] as f32 as f64]
}

/// Renders the posed object, occluded by the fingers carrying the sensors.
///
/// Each surface point is splatted as a disc slightly wider than the
/// sampling gap; a point enters the vision cloud when nothing nearer than
/// `spacing` in front of it covers its own pixel.
pub fn render_scene<R: Rng + ?Sized>(
    model: &ObjectModel,
    pose: &Pose,
    sensors: &[Vec3],
    gripper: &GripperConfig,
    camera: &CameraModel,
    rng: &mut R,
) -> Result<Rendering> {
    let (w, h) = (camera.width, camera.height);
    let background = [
        rng.random::<f64>(),
        rng.random::<f64>(),
        rng.random::<f64>(),
    ];
    let mut rgb = RgbImage::filled(w, h, to_u8(background));
    let mut depth = vec![f64::INFINITY; w * h];
    let mut owner = vec![Owner::Background; w * h];

    let spacing = surface_spacing(model);
    let rot = pose.matrix();
    let posed: Vec<Vec3> = model
        .surface_points
        .iter()
        .map(|&p| pose.apply(p))
        .collect();
    let normals: Vec<Vec3> = model.normals.iter().map(|&n| mat_vec(&rot, n)).collect();

    // Oriented surfels: each pixel takes the depth where its ray meets the
    // tangent disc, so grazing surfaces do not swallow their neighbors.
    let mut splat = |center: Vec3, normal: Vec3, radius: f64, who: Owner| {
        let Some((u, v)) = camera.project(center) else {
            return;
        };
        let pr = (camera.fx.max(camera.fy) * radius / center[2]).max(0.5);
        let (u0, u1) = (
            (u - pr).floor().max(0.0),
            (u + pr).ceil().min(w as f64 - 1.0),
        );
        let (v0, v1) = (
            (v - pr).floor().max(0.0),
            (v + pr).ceil().min(h as f64 - 1.0),
        );
        if u0 > u1 || v0 > v1 {
            return;
        }
        let (cu, cv) = (u.round(), v.round());
        for y in v0 as usize..=v1 as usize {
            for x in u0 as usize..=u1 as usize {
                let z = if x as f64 == cu && y as f64 == cv {
                    Some(center[2])
                } else {
                    surfel_depth(camera, center, normal, radius, x, y)
                };
                let k = y * w + x;
                if let Some(z) = z {
                    if z < depth[k] {
                        depth[k] = z;
                        owner[k] = who;
                    }
                }
            }
        }
    };

    let radius = 0.8 * spacing;
    for (i, &p) in posed.iter().enumerate() {
        splat(p, normals[i], radius, Owner::Object(i));
    }
    for link in hand_discs(model, pose, sensors, gripper) {
        splat(link.0, [0.0, 0.0, -1.0], link.1, Owner::Hand);
    }

    let mut bbox = [u32::MAX, u32::MAX, 0, 0];
    let mut any = false;
    for y in 0..h {
        for x in 0..w {
            match owner[y * w + x] {
                Owner::Background => {}
                Owner::Hand => rgb.set(x, y, to_u8(HAND_COLOR)),
                Owner::Object(i) => {
                    let view = normalize(posed[i]);
                    let lambert = (-dot(normals[i], view)).max(0.0);
                    let shade = 0.3 + 0.7 * lambert;
                    let c = model.base_color;
                    rgb.set(x, y, to_u8([c[0] * shade, c[1] * shade, c[2] * shade]));
                    any = true;
                    bbox[0] = bbox[0].min(x as u32);
                    bbox[1] = bbox[1].min(y as u32);
                    bbox[2] = bbox[2].max(x as u32);
                    bbox[3] = bbox[3].max(y as u32);
                }
            }
        }
    }
    if !any {
        return Err(HgnnError::Generation(
            "object not visible in the image".into(),
        ));
    }

    let mut points = Vec::new();
    let mut pixels = Vec::new();
    for (i, &p) in posed.iter().enumerate() {
        let Some((x, y)) = camera.pixel(p) else {
            continue;
        };
        if x == 0 || y == 0 || x + 1 == w || y + 1 == h {
            continue;
        }
        let own = surfel_depth(camera, p, normals[i], spacing, x, y).unwrap_or(p[2]);
        if own <= depth[y * w + x] + 0.25 * spacing {
            points.push(round_f32(p));
            pixels.push([x as u32, y as u32]);
        }
    }
    if points.is_empty() {
        return Err(HgnnError::Generation("no visible object points".into()));
    }
    Ok(Rendering {
        rgb,
        vision_cloud: PointCloud::new(points),
        vision_pixels: pixels,
        segment_bbox: bbox,
    })
}

/// Disc centers and radii approximating the hand: one disc per sensor,
/// links between consecutive sensors of a finger, a palm on the side of the
/// object the fingers close around, and a link from each finger to it.
pub fn hand_discs(
    model: &ObjectModel,
    pose: &Pose,
    sensors: &[Vec3],
    gripper: &GripperConfig,
) -> Vec<(Vec3, f64)> {
    let disc = HAND_DISC_SCALE * gripper.contact_radius;
    let mut out = Vec::new();
    let link = |a: Vec3, b: Vec3, out: &mut Vec<(Vec3, f64)>| {
        let steps = (dist2(a, b).sqrt() / disc).ceil().max(1.0) as usize;
        for k in 1..steps {
            let t = k as f64 / steps as f64;
            out.push((add(scale(a, 1.0 - t), scale(b, t)), disc));
        }
    };
    if sensors.is_empty() {
        return out;
    }
    let center = pose.translation;
    let mut dir = [0.0; 3];
    for &s in sensors {
        dir = add(dir, sub(s, center));
    }
    let dir = if dot(dir, dir) > 1e-12 {
        normalize(dir)
    } else {
        [0.0, 0.0, 1.0]
    };
    let palm = add(
        center,
        scale(dir, 0.5 * model.diameter + 2.0 * gripper.contact_radius),
    );
    out.push((palm, PALM_SCALE * model.diameter));
    for finger in sensors.chunks(gripper.sensors_per_finger) {
        for (j, &s) in finger.iter().enumerate() {
            out.push((s, disc));
            if let Some(&next) = finger.get(j + 1) {
                link(s, next, &mut out);
            }
        }
        link(palm, finger[0], &mut out);
    }
    out
}

/// Depth along the pixel ray where it meets the disc of `radius` around
/// `center` in the plane with `normal`, if it does.
fn surfel_depth(
    camera: &CameraModel,
    center: Vec3,
    normal: Vec3,
    radius: f64,
    x: usize,
    y: usize,
) -> Option<f64> {
    let ray = [
        (x as f64 - camera.cx) / camera.fx,
        (y as f64 - camera.cy) / camera.fy,
        1.0,
    ];
    let denom = dot(normal, ray);
    if denom.abs() < 1e-6 {
        return None;
    }
    let t = dot(normal, center) / denom;
    if t <= 0.0 {
        return None;
    }
    let hit = [ray[0] * t, ray[1] * t, t];
    (crate::geometry::dist2(hit, center) <= radius * radius).then_some(t)
}

/// Fraction of posed model points farther than `threshold` from `cloud`.
pub fn hidden_fraction(model: &ObjectModel, pose: &Pose, cloud: &[Vec3], threshold: f64) -> f64 {
    let posed: Vec<Vec3> = model
        .surface_points
        .iter()
        .map(|&p| pose.apply(p))
        .collect();
    let d = nearest_distances(&posed, cloud);
    d.iter().filter(|&&x| x > threshold).count() as f64 / posed.len() as f64
}
