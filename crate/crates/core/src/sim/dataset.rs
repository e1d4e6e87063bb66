//! Sample generation and the `VTDS` dataset container.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::camera::{CameraModel, RgbImage};
use super::grasp::{sample_grasp, GripperConfig};
use super::render::render_scene;
use super::tactile::tactile_contacts;
use crate::error::{HgnnError, Result};
use crate::geometry::{ObjectModel, PointCloud, Pose, Vec3};

pub const MAGIC: &[u8; 4] = b"VTDS";
pub const VERSION: u32 = 1;
/// Grasp resampling attempts before a sample is declared a failure.
pub const MAX_ATTEMPTS: usize = 64;

/// One simulated observation of an object held in the hand.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneSample {
    pub sample_id: u32,
    /// Index into the dataset object list.
    pub object_index: u32,
    pub rgb: RgbImage,
    pub vision_cloud: PointCloud,
    pub vision_pixels: Vec<[u32; 2]>,
    /// One cloud per sensor, in sensor order.
    pub touch_clouds: Vec<PointCloud>,
    pub sensor_locations: Vec<Vec3>,
    pub segment_bbox: [u32; 4],
    pub pose_gt: Pose,
}

impl SceneSample {
    pub fn num_touch_points(&self) -> usize {
        self.touch_clouds.iter().map(|c| c.len()).sum()
    }

    pub fn validate(
        &self,
        camera: &CameraModel,
        gripper: &GripperConfig,
        n_objects: usize,
    ) -> Result<()> {
        let bad = |m: String| Err(HgnnError::Format(format!("sample {}: {m}", self.sample_id)));
        if self.object_index as usize >= n_objects {
            return bad(format!("object index {} out of range", self.object_index));
        }
        if self.rgb.width != camera.width || self.rgb.height != camera.height {
            return bad("image size differs from the camera".into());
        }
        if self.vision_cloud.len() != self.vision_pixels.len() {
            return bad("vision pixels do not match vision points".into());
        }
        self.vision_cloud.validate()?;
        for (p, px) in self.vision_cloud.points.iter().zip(&self.vision_pixels) {
            let inside = camera.project(*p).is_some_and(|(u, v)| {
                u >= -0.5
                    && v >= -0.5
                    && u < camera.width as f64 - 0.5
                    && v < camera.height as f64 - 0.5
            });
            if !inside || px[0] as usize >= camera.width || px[1] as usize >= camera.height {
                return bad("vision point projects outside the image".into());
            }
        }
        if self.touch_clouds.len() != gripper.n_sensors()
            || self.sensor_locations.len() != gripper.n_sensors()
        {
            return bad("sensor count differs from the gripper".into());
        }
        for c in &self.touch_clouds {
            c.validate()?;
            if c.len() > gripper.max_points_per_sensor {
                return bad(format!(
                    "touch cloud exceeds {} points",
                    gripper.max_points_per_sensor
                ));
            }
        }
        if self
            .sensor_locations
            .iter()
            .flatten()
            .any(|v| !v.is_finite())
        {
            return bad("non-finite sensor location".into());
        }
        if self.num_touch_points() == 0 {
            return bad("no sensor in contact".into());
        }
        if !self.pose_gt.is_valid() {
            return bad("invalid ground-truth pose".into());
        }
        let [u0, v0, u1, v1] = self.segment_bbox;
        if u0 > u1 || v0 > v1 || u1 as usize >= camera.width || v1 as usize >= camera.height {
            return bad("segment box outside the image".into());
        }
        Ok(())
    }
}

/// SplitMix64 finalizer, used to derive independent per-sample seeds.
pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

pub fn child_seed(seed: u64, index: u64) -> u64 {
    splitmix64(splitmix64(seed) ^ index)
}

/// Simulates one sample, resampling the grasp until it renders and touches.
pub fn generate_sample(
    sample_id: u32,
    object_index: u32,
    object: &ObjectModel,
    gripper: &GripperConfig,
    camera: &CameraModel,
    seed: u64,
) -> Result<SceneSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut last = None;
    for _ in 0..MAX_ATTEMPTS {
        let (pose, sensors) = sample_grasp(object, gripper, camera, &mut rng);
        let touch = match tactile_contacts(object, &pose, &sensors, gripper, &mut rng) {
            Ok(t) => t,
            Err(e) => {
                last = Some(e);
                continue;
            }
        };
        let r = match render_scene(object, &pose, &sensors, gripper, camera, &mut rng) {
            Ok(r) => r,
            Err(e) => {
                last = Some(e);
                continue;
            }
        };
        return Ok(SceneSample {
            sample_id,
            object_index,
            rgb: r.rgb,
            vision_cloud: r.vision_cloud,
            vision_pixels: r.vision_pixels,
            touch_clouds: touch,
            sensor_locations: sensors,
            segment_bbox: r.segment_bbox,
            pose_gt: pose,
        });
    }
    Err(HgnnError::Generation(format!(
        "sample {sample_id}: no valid grasp after {MAX_ATTEMPTS} attempts ({})",
        last.map(|e| e.to_string()).unwrap_or_default()
    )))
}

/// Scenes plus everything needed to interpret them.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub camera: CameraModel,
    pub gripper: GripperConfig,
    pub objects: Vec<ObjectModel>,
    pub samples: Vec<SceneSample>,
}

impl Dataset {
    /// Generates `n_samples` scenes, assigning objects round-robin.
    ///
    /// Samples are simulated in parallel from per-sample seeds, so the
    /// result does not depend on the thread count.
    pub fn generate(
        n_samples: usize,
        objects: Vec<ObjectModel>,
        gripper: GripperConfig,
        camera: CameraModel,
        seed: u64,
    ) -> Result<Self> {
        if n_samples == 0 {
            return Err(HgnnError::invalid("n_samples must be at least 1"));
        }
        if objects.is_empty() {
            return Err(HgnnError::invalid("object library is empty"));
        }
        gripper.validate()?;
        camera.validate()?;
        for o in &objects {
            o.validate()?;
        }
        let samples = (0..n_samples)
            .into_par_iter()
            .map(|i| {
                let oi = i % objects.len();
                generate_sample(
                    i as u32,
                    oi as u32,
                    &objects[oi],
                    &gripper,
                    &camera,
                    child_seed(seed, i as u64),
                )
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            camera,
            gripper,
            objects,
            samples,
        })
    }

    pub fn object(&self, sample: &SceneSample) -> &ObjectModel {
        &self.objects[sample.object_index as usize]
    }

    pub fn validate(&self) -> Result<()> {
        self.camera.validate()?;
        self.gripper.validate()?;
        for o in &self.objects {
            o.validate()?;
        }
        for s in &self.samples {
            s.validate(&self.camera, &self.gripper, self.objects.len())?;
        }
        Ok(())
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        self.validate()?;
        self.encode(w)
            .map_err(|e| HgnnError::io("<dataset stream>", e))
    }

    fn encode<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_u32::<LE>(VERSION)?;
        w.write_u32::<LE>(self.samples.len() as u32)?;
        w.write_u32::<LE>(self.objects.len() as u32)?;
        let c = &self.camera;
        for v in [c.fx, c.fy, c.cx, c.cy] {
            w.write_f64::<LE>(v)?;
        }
        w.write_u32::<LE>(c.width as u32)?;
        w.write_u32::<LE>(c.height as u32)?;
        let g = &self.gripper;
        w.write_u32::<LE>(g.n_fingers as u32)?;
        w.write_u32::<LE>(g.sensors_per_finger as u32)?;
        w.write_f64::<LE>(g.contact_radius)?;
        w.write_u32::<LE>(g.max_points_per_sensor as u32)?;
        for o in &self.objects {
            w.write_u32::<LE>(o.id.len() as u32)?;
            w.write_all(o.id.as_bytes())?;
            for v in o.base_color {
                w.write_f64::<LE>(v)?;
            }
            w.write_u32::<LE>(o.num_points() as u32)?;
            for p in o.surface_points.iter().chain(&o.normals) {
                for v in p {
                    w.write_f64::<LE>(*v)?;
                }
            }
        }
        for s in &self.samples {
            w.write_u32::<LE>(s.sample_id)?;
            w.write_u32::<LE>(s.object_index)?;
            for v in s.pose_gt.rotation.iter().chain(&s.pose_gt.translation) {
                w.write_f64::<LE>(*v)?;
            }
            w.write_all(&s.rgb.data)?;
            for v in s.segment_bbox {
                w.write_u32::<LE>(v)?;
            }
            w.write_u32::<LE>(s.vision_cloud.len() as u32)?;
            write_points_f32(w, &s.vision_cloud.points)?;
            for px in &s.vision_pixels {
                w.write_u32::<LE>(px[0])?;
                w.write_u32::<LE>(px[1])?;
            }
            for p in &s.sensor_locations {
                for v in p {
                    w.write_f64::<LE>(*v)?;
                }
            }
            for c in &s.touch_clouds {
                w.write_u32::<LE>(c.len() as u32)?;
                write_points_f32(w, &c.points)?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let ds = decode(r).map_err(|e| match e {
            DecodeError::Io(e) => {
                HgnnError::Format(format!("truncated or unreadable dataset: {e}"))
            }
            DecodeError::Bad(e) => e,
        })?;
        ds.validate()?;
        Ok(ds)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = File::create(path).map_err(|e| HgnnError::io(path, e))?;
        let mut w = BufWriter::new(f);
        self.validate()?;
        self.encode(&mut w).map_err(|e| HgnnError::io(path, e))?;
        w.flush().map_err(|e| HgnnError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = File::open(path).map_err(|e| HgnnError::io(path, e))?;
        Self::read_from(&mut BufReader::new(f))
    }

    /// Human-readable rendering of one record.
    pub fn dump_sample(&self, index: usize) -> Result<String> {
        let s = self.samples.get(index).ok_or_else(|| {
            HgnnError::invalid(format!(
                "index {index} out of range for {} samples",
                self.samples.len()
            ))
        })?;
        let o = self.object(s);
        let mut out = String::new();
        let q = s.pose_gt.rotation;
        let t = s.pose_gt.translation;
        let _ = writeln!(out, "sample {}", s.sample_id);
        let _ = writeln!(
            out,
            "object {} ({}) diameter {:.4} m",
            s.object_index, o.id, o.diameter
        );
        let _ = writeln!(
            out,
            "rotation wxyz {:.6} {:.6} {:.6} {:.6}",
            q[0], q[1], q[2], q[3]
        );
        let _ = writeln!(out, "translation {:.6} {:.6} {:.6}", t[0], t[1], t[2]);
        let _ = writeln!(out, "image {}x{}", s.rgb.width, s.rgb.height);
        let b = s.segment_bbox;
        let _ = writeln!(out, "segment_bbox {} {} {} {}", b[0], b[1], b[2], b[3]);
        let _ = writeln!(out, "vision_points {}", s.vision_cloud.len());
        for (p, px) in s.vision_cloud.points.iter().zip(&s.vision_pixels) {
            let _ = writeln!(
                out,
                "  v {:.6} {:.6} {:.6} px {} {}",
                p[0], p[1], p[2], px[0], px[1]
            );
        }
        let _ = writeln!(out, "sensors {}", s.sensor_locations.len());
        for (i, (loc, c)) in s.sensor_locations.iter().zip(&s.touch_clouds).enumerate() {
            let _ = writeln!(
                out,
                "  sensor {i} at {:.6} {:.6} {:.6} contacts {}",
                loc[0],
                loc[1],
                loc[2],
                c.len()
            );
            for p in &c.points {
                let _ = writeln!(out, "    t {:.6} {:.6} {:.6}", p[0], p[1], p[2]);
            }
        }
        Ok(out)
    }
}

/// Writes a dataset generated from `seed` to `out_path`.
pub fn generate_dataset(
    n_samples: usize,
    objects: Vec<ObjectModel>,
    gripper: GripperConfig,
    camera: CameraModel,
    seed: u64,
    out_path: &Path,
) -> Result<Dataset> {
    let ds = Dataset::generate(n_samples, objects, gripper, camera, seed)?;
    ds.save(out_path)?;
    Ok(ds)
}

fn write_points_f32<W: Write>(w: &mut W, pts: &[Vec3]) -> std::io::Result<()> {
    for p in pts {
        for v in p {
            w.write_f32::<LE>(*v as f32)?;
        }
    }
    Ok(())
}

enum DecodeError {
    Io(std::io::Error),
    Bad(HgnnError),
}

impl From<std::io::Error> for DecodeError {
    fn from(e: std::io::Error) -> Self {
        Self::Io(e)
    }
}

fn bad(msg: impl Into<String>) -> DecodeError {
    DecodeError::Bad(HgnnError::Format(msg.into()))
}

fn read_len<R: Read>(
    r: &mut R,
    limit: usize,
    what: &str,
) -> std::result::Result<usize, DecodeError> {
    let n = r.read_u32::<LE>()? as usize;
    if n > limit {
        return Err(bad(format!("{what} count {n} exceeds {limit}")));
    }
    Ok(n)
}

fn read_vec3_f64<R: Read>(r: &mut R) -> std::io::Result<Vec3> {
    Ok([
        r.read_f64::<LE>()?,
        r.read_f64::<LE>()?,
        r.read_f64::<LE>()?,
    ])
}

fn read_points_f32<R: Read>(r: &mut R, n: usize) -> std::io::Result<Vec<Vec3>> {
    (0..n)
        .map(|_| {
            Ok([
                r.read_f32::<LE>()? as f64,
                r.read_f32::<LE>()? as f64,
                r.read_f32::<LE>()? as f64,
            ])
        })
        .collect()
}

const MAX_COUNT: usize = 1 << 24;

fn decode<R: Read>(r: &mut R) -> std::result::Result<Dataset, DecodeError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(bad("not a VTDS dataset"));
    }
    let version = r.read_u32::<LE>()?;
    if version != VERSION {
        return Err(bad(format!("unsupported dataset version {version}")));
    }
    let n_samples = read_len(r, MAX_COUNT, "sample")?;
    let n_objects = read_len(r, 1 << 16, "object")?;
    let (fx, fy, cx, cy) = (
        r.read_f64::<LE>()?,
        r.read_f64::<LE>()?,
        r.read_f64::<LE>()?,
        r.read_f64::<LE>()?,
    );
    let width = read_len(r, 1 << 14, "image width")?;
    let height = read_len(r, 1 << 14, "image height")?;
    let camera = CameraModel {
        fx,
        fy,
        cx,
        cy,
        width,
        height,
    };
    let gripper = GripperConfig {
        n_fingers: read_len(r, 1 << 10, "finger")?,
        sensors_per_finger: read_len(r, 1 << 10, "sensor")?,
        contact_radius: r.read_f64::<LE>()?,
        max_points_per_sensor: read_len(r, MAX_COUNT, "contact cap")?,
    };
    camera.validate().map_err(DecodeError::Bad)?;
    gripper.validate().map_err(DecodeError::Bad)?;

    let mut objects = Vec::with_capacity(n_objects);
    for _ in 0..n_objects {
        let len = read_len(r, 1 << 12, "object id byte")?;
        let mut id = vec![0u8; len];
        r.read_exact(&mut id)?;
        let id = String::from_utf8(id).map_err(|_| bad("object id is not UTF-8"))?;
        let color = read_vec3_f64(r)?;
        let p = read_len(r, MAX_COUNT, "surface point")?;
        let points = (0..p)
            .map(|_| read_vec3_f64(r))
            .collect::<std::io::Result<Vec<_>>>()?;
        let normals = (0..p)
            .map(|_| read_vec3_f64(r))
            .collect::<std::io::Result<Vec<_>>>()?;
        objects.push(ObjectModel::new(id, points, normals, color).map_err(DecodeError::Bad)?);
    }

    let mut samples = Vec::with_capacity(n_samples.min(4096));
    for _ in 0..n_samples {
        let sample_id = r.read_u32::<LE>()?;
        let object_index = r.read_u32::<LE>()?;
        let mut pose = [0.0; 7];
        for v in &mut pose {
            *v = r.read_f64::<LE>()?;
        }
        let mut rgb = RgbImage::filled(width, height, [0; 3]);
        r.read_exact(&mut rgb.data)?;
        let mut bbox = [0u32; 4];
        for v in &mut bbox {
            *v = r.read_u32::<LE>()?;
        }
        let nv = read_len(r, width * height, "vision point")?;
        let vision = read_points_f32(r, nv)?;
        let pixels = (0..nv)
            .map(|_| Ok([r.read_u32::<LE>()?, r.read_u32::<LE>()?]))
            .collect::<std::io::Result<Vec<_>>>()?;
        let sensors = (0..gripper.n_sensors())
            .map(|_| read_vec3_f64(r))
            .collect::<std::io::Result<Vec<_>>>()?;
        let mut touch = Vec::with_capacity(gripper.n_sensors());
        for _ in 0..gripper.n_sensors() {
            let n = read_len(r, MAX_COUNT, "contact point")?;
            touch.push(PointCloud::new(read_points_f32(r, n)?));
        }
        samples.push(SceneSample {
            sample_id,
            object_index,
            rgb,
            vision_cloud: PointCloud::new(vision),
            vision_pixels: pixels,
            touch_clouds: touch,
            sensor_locations: sensors,
            segment_bbox: bbox,
            pose_gt: Pose {
                rotation: [pose[0], pose[1], pose[2], pose[3]],
                translation: [pose[4], pose[5], pose[6]],
            },
        });
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(bad("trailing bytes after the last record"));
    }
    Ok(Dataset {
        camera,
        gripper,
        objects,
        samples,
    })
}
