//! Exact neighbor queries backed by a uniform-grid spatial hash.

use std::collections::HashMap;

use super::cloud::voxel_key;
use super::pose::{dist2, Vec3};
use crate::error::{HgnnError, Result};

/// Uniform grid bucketing point indices by cell.
pub struct SpatialGrid<'a> {
    points: &'a [Vec3],
    cell: f64,
    cells: HashMap<[i64; 3], Vec<usize>>,
    lo: [i64; 3],
    hi: [i64; 3],
}

impl<'a> SpatialGrid<'a> {
    pub fn new(points: &'a [Vec3], cell: f64) -> Self {
        let mut cells: HashMap<[i64; 3], Vec<usize>> = HashMap::new();
        let mut lo = [i64::MAX; 3];
        let mut hi = [i64::MIN; 3];
        for (i, &p) in points.iter().enumerate() {
            let k = voxel_key(p, cell);
            for a in 0..3 {
                lo[a] = lo[a].min(k[a]);
                hi[a] = hi[a].max(k[a]);
            }
            cells.entry(k).or_default().push(i);
        }
        Self {
            points,
            cell,
            cells,
            lo,
            hi,
        }
    }

    /// Cell size chosen so a cell holds a handful of points on average.
    pub fn auto_cell(points: &[Vec3]) -> f64 {
        if points.len() < 2 {
            return 1.0;
        }
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for p in points {
            for a in 0..3 {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
        let ext: Vec<f64> = (0..3).map(|a| (hi[a] - lo[a]).max(1e-9)).collect();
        let vol = ext[0] * ext[1] * ext[2];
        let per_cell = 4.0;
        let c = (vol * per_cell / points.len() as f64).cbrt();
        // Surface-like clouds have tiny volume; fall back to area scaling.
        let max_ext = ext.iter().cloned().fold(0.0, f64::max);
        c.max(max_ext / (points.len() as f64).sqrt()).max(1e-9)
    }

    fn ring(&self, center: [i64; 3], r: i64, mut f: impl FnMut(usize)) {
        for dx in -r..=r {
            for dy in -r..=r {
                for dz in -r..=r {
                    if dx.abs().max(dy.abs()).max(dz.abs()) != r {
                        continue;
                    }
                    let k = [center[0] + dx, center[1] + dy, center[2] + dz];
                    if let Some(ids) = self.cells.get(&k) {
                        ids.iter().for_each(|&i| f(i));
                    }
                }
            }
        }
    }

    /// `k` nearest indices to `q`, sorted by distance then index.
    pub fn knn(&self, q: Vec3, k: usize) -> Vec<usize> {
        if self.points.is_empty() || k == 0 {
            return Vec::new();
        }
        let k = k.min(self.points.len());
        let center = voxel_key(q, self.cell);
        // Rings beyond this reach no occupied cell.
        let max_r = (0..3)
            .map(|a| {
                (center[a] - self.lo[a])
                    .abs()
                    .max((self.hi[a] - center[a]).abs())
            })
            .max()
            .unwrap_or(0);
        let mut cand: Vec<(f64, usize)> = Vec::new();
        let mut r = 0;
        loop {
            self.ring(center, r, |i| cand.push((dist2(q, self.points[i]), i)));
            if cand.len() >= k {
                cand.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                cand.truncate(k);
                // Anything in ring r + 1 or beyond is at least r * cell away.
                let bound = r as f64 * self.cell;
                if cand[k - 1].0 < bound * bound {
                    break;
                }
            }
            if r >= max_r {
                cand.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                cand.truncate(k);
                break;
            }
            r += 1;
        }
        cand.into_iter().map(|(_, i)| i).collect()
    }
}

/// For each query point, the `min(k, |reference|)` nearest reference
/// indices, distance-sorted with ties broken by lower index.
pub fn knn(query: &[Vec3], reference: &[Vec3], k: usize) -> Result<Vec<Vec<usize>>> {
    if k == 0 {
        return Err(HgnnError::invalid("knn requires k >= 1"));
    }
    if reference.is_empty() {
        return Ok(vec![Vec::new(); query.len()]);
    }
    let grid = SpatialGrid::new(reference, SpatialGrid::auto_cell(reference));
    Ok(query.iter().map(|&q| grid.knn(q, k)).collect())
}

/// Distance from each query point to its nearest reference point.
pub fn nearest_distances(query: &[Vec3], reference: &[Vec3]) -> Vec<f64> {
    if reference.is_empty() {
        return vec![f64::INFINITY; query.len()];
    }
    let grid = SpatialGrid::new(reference, SpatialGrid::auto_cell(reference));
    query
        .iter()
        .map(|&q| dist2(q, reference[grid.knn(q, 1)[0]]).sqrt())
        .collect()
}

/// Every unordered pair `(i, j)`, `i < j`, with `|x_i - x_j| < r`, sorted.
pub fn radius_pairs(points: &[Vec3], r: f64) -> Result<Vec<(usize, usize)>> {
    if !(r > 0.0) {
        return Err(HgnnError::invalid(format!("radius {r} must be positive")));
    }
    let grid = SpatialGrid::new(points, r);
    let r2 = r * r;
    let mut pairs = Vec::new();
    for (i, &p) in points.iter().enumerate() {
        let c = voxel_key(p, r);
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    if let Some(ids) = grid.cells.get(&[c[0] + dx, c[1] + dy, c[2] + dz]) {
                        for &j in ids {
                            if j > i && dist2(p, points[j]) < r2 {
                                pairs.push((i, j));
                            }
                        }
                    }
                }
            }
        }
    }
    pairs.sort_unstable();
    Ok(pairs)
}
