//! Parametric stand-ins for graspable household objects.

use std::f64::consts::PI;

use rand::Rng;

use crate::error::{HgnnError, Result};
use crate::geometry::{add, normalize, scale, ObjectModel, Vec3};

/// Default surface sample count per object.
pub const DEFAULT_SURFACE_POINTS: usize = 2048;

const GOLDEN_ANGLE: f64 = 2.399_963_229_728_653;

/// Shape parameters of one object category (meters).
#[derive(Clone, Debug, PartialEq)]
pub enum ObjectSpec {
    Box {
        size: Vec3,
    },
    Cylinder {
        radius: f64,
        height: f64,
    },
    Sphere {
        radius: f64,
    },
    /// Cylinder closed by hemispherical caps; `height` is the straight part.
    Can {
        radius: f64,
        height: f64,
    },
    /// Box body with a half-torus handle on its `+x` face.
    Mug {
        size: Vec3,
        handle_radius: f64,
        handle_thickness: f64,
    },
}

impl ObjectSpec {
    pub fn category(&self) -> &'static str {
        match self {
            ObjectSpec::Box { .. } => "box",
            ObjectSpec::Cylinder { .. } => "cylinder",
            ObjectSpec::Sphere { .. } => "sphere",
            ObjectSpec::Can { .. } => "can",
            ObjectSpec::Mug { .. } => "mug",
        }
    }

    fn dims(&self) -> Vec<f64> {
        match self {
            ObjectSpec::Box { size } => size.to_vec(),
            ObjectSpec::Cylinder { radius, height } | ObjectSpec::Can { radius, height } => {
                vec![*radius, *height]
            }
            ObjectSpec::Sphere { radius } => vec![*radius],
            ObjectSpec::Mug {
                size,
                handle_radius,
                handle_thickness,
            } => vec![size[0], size[1], size[2], *handle_radius, *handle_thickness],
        }
    }

    fn default_color(&self) -> Vec3 {
        match self {
            ObjectSpec::Box { .. } => [0.80, 0.22, 0.18],
            ObjectSpec::Cylinder { .. } => [0.20, 0.45, 0.80],
            ObjectSpec::Sphere { .. } => [0.92, 0.72, 0.12],
            ObjectSpec::Can { .. } => [0.25, 0.65, 0.30],
            ObjectSpec::Mug { .. } => [0.85, 0.85, 0.80],
        }
    }

    /// Nominal desk-scale object of each category (about 10 cm across).
    pub fn nominal() -> Vec<ObjectSpec> {
        vec![
            ObjectSpec::Box {
                size: [0.10, 0.07, 0.05],
            },
            ObjectSpec::Cylinder {
                radius: 0.035,
                height: 0.10,
            },
            ObjectSpec::Sphere { radius: 0.045 },
            ObjectSpec::Can {
                radius: 0.032,
                height: 0.06,
            },
            ObjectSpec::Mug {
                size: [0.075, 0.075, 0.085],
                handle_radius: 0.025,
                handle_thickness: 0.007,
            },
        ]
    }

    /// Scales every dimension independently by a factor in `[1 - spread, 1 + spread]`.
    pub fn randomized<R: Rng + ?Sized>(&self, rng: &mut R, spread: f64) -> ObjectSpec {
        let mut f = || rng.random_range(1.0 - spread..=1.0 + spread);
        match self {
            ObjectSpec::Box { size } => ObjectSpec::Box {
                size: [size[0] * f(), size[1] * f(), size[2] * f()],
            },
            ObjectSpec::Cylinder { radius, height } => ObjectSpec::Cylinder {
                radius: radius * f(),
                height: height * f(),
            },
            ObjectSpec::Sphere { radius } => ObjectSpec::Sphere {
                radius: radius * f(),
            },
            ObjectSpec::Can { radius, height } => ObjectSpec::Can {
                radius: radius * f(),
                height: height * f(),
            },
            ObjectSpec::Mug {
                size,
                handle_radius,
                handle_thickness,
            } => ObjectSpec::Mug {
                size: [size[0] * f(), size[1] * f(), size[2] * f()],
                handle_radius: handle_radius * f(),
                handle_thickness: handle_thickness * f(),
            },
        }
    }
}

/// One object per category with dimensions jittered by ±20%.
pub fn default_library(seed: u64) -> Result<Vec<ObjectModel>> {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    ObjectSpec::nominal()
        .iter()
        .map(|s| make_object(&s.randomized(&mut rng, 0.2), DEFAULT_SURFACE_POINTS))
        .collect()
}

/// Samples the surface of `spec` quasi-uniformly with exactly `n_points`
/// points distributed over its faces in proportion to area.
pub fn make_object(spec: &ObjectSpec, n_points: usize) -> Result<ObjectModel> {
    if spec.dims().iter().any(|d| !(*d > 0.0) || !d.is_finite()) {
        return Err(HgnnError::invalid(format!(
            "degenerate dimensions in {spec:?}"
        )));
    }
    if !(512..=2048).contains(&n_points) {
        return Err(HgnnError::invalid(format!(
            "surface point count {n_points} outside [512, 2048]"
        )));
    }
    let mut pts = Vec::with_capacity(n_points);
    let mut nrm = Vec::with_capacity(n_points);
    match spec {
        ObjectSpec::Box { size } => box_surface(*size, n_points, true, &mut pts, &mut nrm),
        ObjectSpec::Cylinder { radius, height } => {
            let side = 2.0 * PI * radius * height;
            let cap = PI * radius * radius;
            let counts = allocate(n_points, &[side, cap, cap]);
            cylinder_side(*radius, *height, counts[0], &mut pts, &mut nrm);
            disc(*radius, height / 2.0, 1.0, counts[1], &mut pts, &mut nrm);
            disc(*radius, -height / 2.0, -1.0, counts[2], &mut pts, &mut nrm);
        }
        ObjectSpec::Sphere { radius } => sphere(*radius, n_points, &mut pts, &mut nrm),
        ObjectSpec::Can { radius, height } => {
            let side = 2.0 * PI * radius * height;
            let cap = 2.0 * PI * radius * radius;
            let counts = allocate(n_points, &[side, cap, cap]);
            cylinder_side(*radius, *height, counts[0], &mut pts, &mut nrm);
            hemisphere(*radius, height / 2.0, 1.0, counts[1], &mut pts, &mut nrm);
            hemisphere(*radius, -height / 2.0, -1.0, counts[2], &mut pts, &mut nrm);
        }
        ObjectSpec::Mug {
            size,
            handle_radius,
            handle_thickness,
        } => {
            let body = 2.0 * (size[0] * size[1] + size[1] * size[2] + size[0] * size[2]);
            let handle = PI * handle_radius * 2.0 * PI * handle_thickness;
            let counts = allocate(n_points, &[body, handle]);
            box_surface(*size, counts[0], false, &mut pts, &mut nrm);
            half_torus(
                [size[0] / 2.0, 0.0, 0.0],
                *handle_radius,
                *handle_thickness,
                counts[1],
                &mut pts,
                &mut nrm,
            );
        }
    }
    debug_assert_eq!(pts.len(), n_points);
    ObjectModel::new(spec.category(), pts, nrm, spec.default_color())
}

/// Largest-remainder apportionment of `n` over `weights`.
fn allocate(n: usize, weights: &[f64]) -> Vec<usize> {
    let total: f64 = weights.iter().sum();
    let exact: Vec<f64> = weights.iter().map(|w| n as f64 * w / total).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut rem: Vec<(usize, f64)> = exact
        .iter()
        .enumerate()
        .map(|(i, e)| (i, e - e.floor()))
        .collect();
    rem.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let short = n - counts.iter().sum::<usize>();
    for &(i, _) in rem.iter().take(short) {
        counts[i] += 1;
    }
    counts
}

/// Exactly `n` cell-centered samples of `[0, 1]^2` on a grid whose aspect
/// follows `aspect = extent_u / extent_v`.
fn unit_grid(n: usize, aspect: f64) -> Vec<(f64, f64)> {
    if n == 0 {
        return Vec::new();
    }
    let nu = ((n as f64 * aspect).sqrt().ceil() as usize).clamp(1, n);
    let nv = n.div_ceil(nu);
    let total = nu * nv;
    (0..n)
        .map(|i| {
            let k = i * total / n;
            let (a, b) = (k % nu, k / nu);
            ((a as f64 + 0.5) / nu as f64, (b as f64 + 0.5) / nv as f64)
        })
        .collect()
}

fn box_surface(size: Vec3, n: usize, corners: bool, pts: &mut Vec<Vec3>, nrm: &mut Vec<Vec3>) {
    let h = scale(size, 0.5);
    let n_faces = if corners { n - 8 } else { n };
    // Faces as (normal axis, sign, u axis, v axis).
    let faces = [
        (0, 1.0, 1, 2),
        (0, -1.0, 1, 2),
        (1, 1.0, 0, 2),
        (1, -1.0, 0, 2),
        (2, 1.0, 0, 1),
        (2, -1.0, 0, 1),
    ];
    let areas: Vec<f64> = faces
        .iter()
        .map(|&(_, _, u, v)| size[u] * size[v])
        .collect();
    let counts = allocate(n_faces, &areas);
    for (&(axis, sign, u, v), &count) in faces.iter().zip(&counts) {
        for (a, b) in unit_grid(count, size[u] / size[v]) {
            let mut p = [0.0; 3];
            p[axis] = sign * h[axis];
            p[u] = (a - 0.5) * size[u];
            p[v] = (b - 0.5) * size[v];
            let mut n = [0.0; 3];
            n[axis] = sign;
            pts.push(p);
            nrm.push(n);
        }
    }
    if corners {
        for i in 0..8 {
            let s = [
                if i & 1 == 0 { -1.0 } else { 1.0 },
                if i & 2 == 0 { -1.0 } else { 1.0 },
                if i & 4 == 0 { -1.0 } else { 1.0 },
            ];
            pts.push([s[0] * h[0], s[1] * h[1], s[2] * h[2]]);
            nrm.push(normalize(s));
        }
    }
}

fn cylinder_side(radius: f64, height: f64, n: usize, pts: &mut Vec<Vec3>, nrm: &mut Vec<Vec3>) {
    for (a, b) in unit_grid(n, 2.0 * PI * radius / height) {
        let t = 2.0 * PI * a;
        let (s, c) = t.sin_cos();
        pts.push([radius * c, radius * s, (b - 0.5) * height]);
        nrm.push([c, s, 0.0]);
    }
}

/// Sunflower-pattern disc at height `z` facing `sign * z`.
fn disc(radius: f64, z: f64, sign: f64, n: usize, pts: &mut Vec<Vec3>, nrm: &mut Vec<Vec3>) {
    for i in 0..n {
        let r = radius * ((i as f64 + 0.5) / n as f64).sqrt();
        let (s, c) = (i as f64 * GOLDEN_ANGLE).sin_cos();
        pts.push([r * c, r * s, z]);
        nrm.push([0.0, 0.0, sign]);
    }
}

/// Fibonacci hemisphere (uniform in height, hence in area).
fn hemisphere(radius: f64, z0: f64, sign: f64, n: usize, pts: &mut Vec<Vec3>, nrm: &mut Vec<Vec3>) {
    for i in 0..n {
        let h = (i as f64 + 0.5) / n as f64;
        let ring = (1.0 - h * h).sqrt();
        let (s, c) = (i as f64 * GOLDEN_ANGLE).sin_cos();
        let d = [ring * c, ring * s, sign * h];
        pts.push([radius * d[0], radius * d[1], z0 + radius * d[2]]);
        nrm.push(d);
    }
}

/// Fibonacci sphere made antipodally symmetric (odd `n` adds a pole).
fn sphere(radius: f64, n: usize, pts: &mut Vec<Vec3>, nrm: &mut Vec<Vec3>) {
    let half = n / 2;
    let mut dirs = Vec::with_capacity(n);
    for i in 0..half {
        let z = 1.0 - (i as f64 + 0.5) / half as f64;
        let ring = (1.0 - z * z).sqrt();
        let (s, c) = (i as f64 * GOLDEN_ANGLE).sin_cos();
        dirs.push([ring * c, ring * s, z]);
    }
    for i in 0..half {
        let d: Vec3 = dirs[i];
        dirs.push([-d[0], -d[1], -d[2]]);
    }
    if n % 2 == 1 {
        dirs.push([0.0, 0.0, 1.0]);
    }
    for d in dirs {
        pts.push(scale(d, radius));
        nrm.push(d);
    }
}

/// Half torus in the `x-z` plane centered at `center`, sweeping `+x`.
fn half_torus(
    center: Vec3,
    major: f64,
    minor: f64,
    n: usize,
    pts: &mut Vec<Vec3>,
    nrm: &mut Vec<Vec3>,
) {
    // Rings around the tube, each weighted by its sweep radius.
    let n_rings = ((n as f64 * minor / major).sqrt().ceil() as usize).max(4);
    let weights: Vec<f64> = (0..n_rings)
        .map(|j| {
            let v = 2.0 * PI * (j as f64 + 0.5) / n_rings as f64;
            major + minor * v.cos()
        })
        .collect();
    let counts = allocate(n, &weights);
    let y = [0.0, 1.0, 0.0];
    for (j, &count) in counts.iter().enumerate() {
        let v = 2.0 * PI * (j as f64 + 0.5) / n_rings as f64;
        let (sv, cv) = v.sin_cos();
        for k in 0..count {
            let u = -PI / 2.0 + PI * (k as f64 + 0.5) / count as f64;
            let d = [u.cos(), 0.0, u.sin()];
            let normal = add(scale(d, cv), scale(y, sv));
            let p = add(
                center,
                add(scale(d, major + minor * cv), scale(y, minor * sv)),
            );
            pts.push(p);
            nrm.push(normal);
        }
    }
}
