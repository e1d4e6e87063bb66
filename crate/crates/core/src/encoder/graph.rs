//! Node sets and edge sets of the visuo-tactile graph.

use std::fmt::Write as _;

use crate::error::{HgnnError, Result};
use crate::geometry::{knn, norm, radius_pairs, sub, voxel_downsample, PointCloud, Vec3};
use crate::sim::SceneSample;

/// Geometry-side settings of the graph construction.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GraphConfig {
    /// Upper bound on vision nodes after downsampling.
    pub target_vision_nodes: usize,
    /// Base vision voxel as a fraction of the object diameter.
    pub voxel_divisor: f64,
    /// Radius-edge threshold in units of the voxel size.
    pub r_multiplier: f64,
    /// Touch points are far denser than vision nodes; their radius edges
    /// use a voxel this many times smaller than the vision voxel.
    pub touch_voxel_ratio: f64,
    /// Partners per node across modalities.
    pub k_inter: usize,
}

impl Default for GraphConfig {
    fn default() -> Self {
        Self {
            target_vision_nodes: 256,
            voxel_divisor: 12.0,
            r_multiplier: 1.5,
            touch_voxel_ratio: 2.0,
            k_inter: 3,
        }
    }
}

impl GraphConfig {
    pub fn validate(&self) -> Result<()> {
        if self.target_vision_nodes == 0 || self.k_inter == 0 {
            return Err(HgnnError::invalid(
                "node target and k_inter must be at least 1",
            ));
        }
        if !(self.voxel_divisor > 0.0 && self.r_multiplier > 0.0 && self.touch_voxel_ratio > 0.0) {
            return Err(HgnnError::invalid(
                "voxel divisor, r multiplier and touch ratio must be positive",
            ));
        }
        Ok(())
    }
}

/// Structure of one observation's graph. Edge lists are directed
/// `(source, destination)` pairs; intra-modality lists hold both
/// directions of every radius pair.
#[derive(Clone, Debug, PartialEq)]
pub struct MultimodalGraph {
    pub vision_positions: Vec<Vec3>,
    pub touch_positions: Vec<Vec3>,
    /// Owning sensor of each touch node.
    pub touch_sensor: Vec<usize>,
    pub sensor_locations: Vec<Vec3>,
    pub vision_edges: Vec<(usize, usize)>,
    pub touch_edges: Vec<(usize, usize)>,
    /// Merged `(vision node, touch node)` pairs, sorted.
    pub inter_pairs: Vec<(usize, usize)>,
    pub vision_voxel: f64,
    pub vision_radius: f64,
    pub touch_radius: f64,
}

impl MultimodalGraph {
    pub fn num_vision(&self) -> usize {
        self.vision_positions.len()
    }

    pub fn num_touch(&self) -> usize {
        self.touch_positions.len()
    }

    pub fn num_nodes(&self) -> usize {
        self.num_vision() + self.num_touch()
    }

    /// Mean of the vision node positions; the frame origin of the model
    /// inputs.
    pub fn anchor(&self) -> Vec3 {
        let n = self.num_vision().max(1) as f64;
        let mut c = [0.0; 3];
        for p in &self.vision_positions {
            for a in 0..3 {
                c[a] += p[a];
            }
        }
        c.map(|v| v / n)
    }

    /// Inter-modality edges in both directions over the joint node index
    /// space (vision nodes first, touch nodes offset by `num_vision`).
    pub fn inter_edges_directed(&self) -> Vec<(usize, usize)> {
        let nv = self.num_vision();
        let mut out = Vec::with_capacity(2 * self.inter_pairs.len());
        for &(v, t) in &self.inter_pairs {
            out.push((v, nv + t));
        }
        for &(v, t) in &self.inter_pairs {
            out.push((nv + t, v));
        }
        out
    }

    pub fn joint_positions(&self) -> Vec<Vec3> {
        self.vision_positions
            .iter()
            .chain(&self.touch_positions)
            .copied()
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let (nv, nt) = (self.num_vision(), self.num_touch());
        let bad = |m: &str| Err(HgnnError::Encoding(m.to_string()));
        if self.touch_sensor.len() != nt {
            return bad("touch sensor tags do not match touch nodes");
        }
        if self
            .touch_sensor
            .iter()
            .any(|&s| s >= self.sensor_locations.len())
        {
            return bad("touch node refers to a missing sensor");
        }
        if self.vision_edges.iter().any(|&(a, b)| a >= nv || b >= nv)
            || self.touch_edges.iter().any(|&(a, b)| a >= nt || b >= nt)
            || self.inter_pairs.iter().any(|&(a, b)| a >= nv || b >= nt)
        {
            return bad("dangling edge index");
        }
        for edges in [&self.vision_edges, &self.touch_edges] {
            let mut fwd: Vec<(usize, usize)> = edges.clone();
            let mut rev: Vec<(usize, usize)> = edges.iter().map(|&(a, b)| (b, a)).collect();
            fwd.sort_unstable();
            rev.sort_unstable();
            if fwd != rev {
                return bad("intra-modality edges are not symmetric");
            }
        }
        Ok(())
    }

    /// Line-oriented text form: one line per node and per edge.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "graph vision {} touch {} sensors {} vision_edges {} touch_edges {} inter_pairs {}",
            self.num_vision(),
            self.num_touch(),
            self.sensor_locations.len(),
            self.vision_edges.len(),
            self.touch_edges.len(),
            self.inter_pairs.len()
        );
        let _ = writeln!(
            s,
            "voxel {:.6} vision_radius {:.6} touch_radius {:.6}",
            self.vision_voxel, self.vision_radius, self.touch_radius
        );
        for (i, p) in self.vision_positions.iter().enumerate() {
            let _ = writeln!(s, "v {i} {:.6} {:.6} {:.6}", p[0], p[1], p[2]);
        }
        for (i, (p, k)) in self
            .touch_positions
            .iter()
            .zip(&self.touch_sensor)
            .enumerate()
        {
            let _ = writeln!(s, "t {i} {:.6} {:.6} {:.6} sensor {k}", p[0], p[1], p[2]);
        }
        for (i, p) in self.sensor_locations.iter().enumerate() {
            let _ = writeln!(s, "s {i} {:.6} {:.6} {:.6}", p[0], p[1], p[2]);
        }
        for &(a, b) in &self.vision_edges {
            let _ = writeln!(s, "ev {a} {b}");
        }
        for &(a, b) in &self.touch_edges {
            let _ = writeln!(s, "et {a} {b}");
        }
        for &(a, b) in &self.inter_pairs {
            let _ = writeln!(s, "evt {a} {b}");
        }
        s
    }
}

/// Both directions of every pair, ordered by pair.
pub fn symmetric_edges(pairs: &[(usize, usize)]) -> Vec<(usize, usize)> {
    let mut out = Vec::with_capacity(2 * pairs.len());
    for &(i, j) in pairs {
        out.push((i, j));
        out.push((j, i));
    }
    out
}

/// Voxel-downsampled vision nodes and their radius edges.
///
/// Starts from `diameter / voxel_divisor` and, while that leaves more than
/// the node target, bisects the voxel size (at most 8 steps) for the
/// smallest size that meets it.
pub fn build_vision_graph(
    cloud: &PointCloud,
    diameter: f64,
    cfg: &GraphConfig,
) -> Result<(Vec<Vec3>, Vec<(usize, usize)>, f64)> {
    if cloud.is_empty() {
        return Err(HgnnError::Encoding("empty vision cloud".into()));
    }
    if !(diameter > 0.0) {
        return Err(HgnnError::invalid("object diameter must be positive"));
    }
    let base = diameter / cfg.voxel_divisor;
    let count = |v: f64| voxel_downsample(cloud, v).map(|c| c.len());
    let mut voxel = base;
    if count(base)? > cfg.target_vision_nodes {
        let mut hi = base * 2.0;
        let mut guard = 0;
        while count(hi)? > cfg.target_vision_nodes {
            hi *= 2.0;
            guard += 1;
            if guard > 40 {
                return Err(HgnnError::Encoding("voxel search did not converge".into()));
            }
        }
        let mut lo = hi / 2.0;
        for _ in 0..8 {
            let mid = 0.5 * (lo + hi);
            if count(mid)? > cfg.target_vision_nodes {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        voxel = hi;
    }
    let nodes = voxel_downsample(cloud, voxel)?.points;
    let r = cfg.r_multiplier * voxel;
    let edges = symmetric_edges(&radius_pairs(&nodes, r)?);
    Ok((nodes, edges, voxel))
}

/// Touch nodes (every contact point, tagged with its sensor) and radius
/// edges across all of them.
pub fn build_touch_graph(
    touch_clouds: &[PointCloud],
    radius: f64,
) -> Result<(Vec<Vec3>, Vec<usize>, Vec<(usize, usize)>)> {
    let mut points = Vec::new();
    let mut sensor = Vec::new();
    for (k, c) in touch_clouds.iter().enumerate() {
        points.extend_from_slice(&c.points);
        sensor.extend(std::iter::repeat_n(k, c.len()));
    }
    if points.is_empty() {
        return Err(HgnnError::Encoding("no tactile contact points".into()));
    }
    let edges = symmetric_edges(&radius_pairs(&points, radius)?);
    Ok((points, sensor, edges))
}

/// Each vision node linked to its `k` nearest touch nodes and each touch
/// node to its `k` nearest vision nodes; duplicates merged, sorted.
pub fn build_inter_edges(vision: &[Vec3], touch: &[Vec3], k: usize) -> Result<Vec<(usize, usize)>> {
    if vision.is_empty() || touch.is_empty() {
        return Err(HgnnError::Encoding(
            "inter-modality edges need both node sets".into(),
        ));
    }
    let mut pairs = Vec::new();
    for (v, nn) in knn(vision, touch, k)?.into_iter().enumerate() {
        pairs.extend(nn.into_iter().map(|t| (v, t)));
    }
    for (t, nn) in knn(touch, vision, k)?.into_iter().enumerate() {
        pairs.extend(nn.into_iter().map(|v| (v, t)));
    }
    pairs.sort_unstable();
    pairs.dedup();
    Ok(pairs)
}

/// Full graph structure of a sample.
pub fn build_graph(
    sample: &SceneSample,
    diameter: f64,
    cfg: &GraphConfig,
) -> Result<MultimodalGraph> {
    cfg.validate()?;
    let (vision, _, voxel) = build_vision_graph(&sample.vision_cloud, diameter, cfg)?;
    assemble_graph(
        vision,
        voxel,
        &sample.touch_clouds,
        sample.sensor_locations.clone(),
        cfg,
    )
}

/// Graph over given vision nodes and per-sensor touch points: radius
/// edges within each modality (vision radius `r_multiplier * voxel`) and
/// k-NN pairs across them.
pub fn assemble_graph(
    vision: Vec<Vec3>,
    voxel: f64,
    touch_clouds: &[PointCloud],
    sensor_locations: Vec<Vec3>,
    cfg: &GraphConfig,
) -> Result<MultimodalGraph> {
    if vision.is_empty() {
        return Err(HgnnError::Encoding("no vision nodes".into()));
    }
    let vision_radius = cfg.r_multiplier * voxel;
    let vision_edges = symmetric_edges(&radius_pairs(&vision, vision_radius)?);
    let touch_radius = vision_radius / cfg.touch_voxel_ratio;
    let (touch, touch_sensor, touch_edges) = build_touch_graph(touch_clouds, touch_radius)?;
    let inter_pairs = build_inter_edges(&vision, &touch, cfg.k_inter)?;
    let g = MultimodalGraph {
        vision_positions: vision,
        touch_positions: touch,
        touch_sensor,
        sensor_locations,
        vision_edges,
        touch_edges,
        inter_pairs,
        vision_voxel: voxel,
        vision_radius,
        touch_radius,
    };
    g.validate()?;
    Ok(g)
}

/// `[offset, |offset|]` rows for directed edges, offset = `x_src - x_dst`,
/// divided by `scale`.
pub fn edge_features(positions: &[Vec3], edges: &[(usize, usize)], scale: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(edges.len() * 4);
    for &(i, j) in edges {
        let d = sub(positions[i], positions[j]);
        out.extend_from_slice(&[d[0] / scale, d[1] / scale, d[2] / scale, norm(d) / scale]);
    }
    out
}
