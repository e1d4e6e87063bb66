use std::collections::HashMap;

use super::pose::{add, Pose, Vec3};
use crate::error::{HgnnError, Result};

/// Set of 3-D points (meters, camera frame) with optional RGB in `[0, 1]`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Vec3>,
    pub colors: Option<Vec<Vec3>>,
}

impl PointCloud {
    pub fn new(points: Vec<Vec3>) -> Self {
        Self {
            points,
            colors: None,
        }
    }

    pub fn with_colors(points: Vec<Vec3>, colors: Vec<Vec3>) -> Result<Self> {
        let cloud = Self {
            points,
            colors: Some(colors),
        };
        cloud.validate()?;
        Ok(cloud)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.points.iter().flatten().any(|v| !v.is_finite()) {
            return Err(HgnnError::invalid("point cloud has non-finite coordinates"));
        }
        if let Some(c) = &self.colors {
            if c.len() != self.points.len() {
                return Err(HgnnError::invalid(format!(
                    "{} colors for {} points",
                    c.len(),
                    self.points.len()
                )));
            }
        }
        Ok(())
    }
}

/// Object surface model in its own frame.
#[derive(Clone, Debug, PartialEq)]
pub struct ObjectModel {
    pub id: String,
    pub surface_points: Vec<Vec3>,
    /// Outward unit normal per surface point.
    pub normals: Vec<Vec3>,
    pub diameter: f64,
    pub base_color: Vec3,
}

impl ObjectModel {
    pub const MIN_POINTS: usize = 64;

    pub fn new(
        id: impl Into<String>,
        surface_points: Vec<Vec3>,
        normals: Vec<Vec3>,
        base_color: Vec3,
    ) -> Result<Self> {
        let diameter = max_extent(&surface_points);
        let model = Self {
            id: id.into(),
            surface_points,
            normals,
            diameter,
            base_color,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        if self.surface_points.len() < Self::MIN_POINTS {
            return Err(HgnnError::invalid(format!(
                "object `{}` has {} surface points, need at least {}",
                self.id,
                self.surface_points.len(),
                Self::MIN_POINTS
            )));
        }
        if self.normals.len() != self.surface_points.len() {
            return Err(HgnnError::invalid("normal count differs from point count"));
        }
        if !(self.diameter > 0.0) {
            return Err(HgnnError::invalid("object diameter must be positive"));
        }
        Ok(())
    }

    pub fn num_points(&self) -> usize {
        self.surface_points.len()
    }
}

/// Largest pairwise distance.
pub fn max_extent(points: &[Vec3]) -> f64 {
    let mut best = 0.0f64;
    for (i, a) in points.iter().enumerate() {
        for b in &points[i + 1..] {
            best = best.max(super::pose::dist2(*a, *b));
        }
    }
    best.sqrt()
}

/// Applies `pose` to every model point.
pub fn transform_points(model: &ObjectModel, pose: &Pose) -> PointCloud {
    PointCloud::new(transform_all(&model.surface_points, pose))
}

pub fn transform_all(points: &[Vec3], pose: &Pose) -> Vec<Vec3> {
    let m = pose.matrix();
    points
        .iter()
        .map(|&p| add(super::pose::mat_vec(&m, p), pose.translation))
        .collect()
}

/// Integer voxel coordinates of `p`.
#[inline]
pub fn voxel_key(p: Vec3, voxel_size: f64) -> [i64; 3] {
    [
        (p[0] / voxel_size).floor() as i64,
        (p[1] / voxel_size).floor() as i64,
        (p[2] / voxel_size).floor() as i64,
    ]
}

/// Replaces the points in each occupied voxel by their centroid (colors are
/// averaged the same way). Output is ordered by voxel key.
pub fn voxel_downsample(cloud: &PointCloud, voxel_size: f64) -> Result<PointCloud> {
    if !(voxel_size > 0.0) {
        return Err(HgnnError::invalid(format!(
            "voxel size {voxel_size} must be positive"
        )));
    }
    struct Acc {
        sum: Vec3,
        color: Vec3,
        count: usize,
    }
    let mut cells: HashMap<[i64; 3], Acc> = HashMap::new();
    for (i, &p) in cloud.points.iter().enumerate() {
        let acc = cells.entry(voxel_key(p, voxel_size)).or_insert(Acc {
            sum: [0.0; 3],
            color: [0.0; 3],
            count: 0,
        });
        acc.sum = add(acc.sum, p);
        if let Some(c) = &cloud.colors {
            acc.color = add(acc.color, c[i]);
        }
        acc.count += 1;
    }
    let mut keys: Vec<[i64; 3]> = cells.keys().copied().collect();
    keys.sort_unstable();
    let mut points = Vec::with_capacity(keys.len());
    let mut colors = cloud
        .colors
        .as_ref()
        .map(|_| Vec::with_capacity(keys.len()));
    for k in keys {
        let acc = &cells[&k];
        let n = acc.count as f64;
        points.push(acc.sum.map(|v| v / n));
        if let Some(c) = colors.as_mut() {
            c.push(acc.color.map(|v| v / n));
        }
    }
    Ok(PointCloud { points, colors })
}
