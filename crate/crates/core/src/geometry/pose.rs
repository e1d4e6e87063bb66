use rand::Rng;
use rand_distr::StandardNormal;

pub type Vec3 = [f64; 3];
/// Quaternion stored as `(w, x, y, z)`.
pub type Quat = [f64; 4];

#[inline]
pub fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}
#[inline]
pub fn add(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}
#[inline]
pub fn scale(a: Vec3, s: f64) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}
#[inline]
pub fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}
#[inline]
pub fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}
#[inline]
pub fn norm(a: Vec3) -> f64 {
    dot(a, a).sqrt()
}
#[inline]
pub fn dist2(a: Vec3, b: Vec3) -> f64 {
    let d = sub(a, b);
    d[0] * d[0] + d[1] * d[1] + d[2] * d[2]
}
pub fn normalize(a: Vec3) -> Vec3 {
    let n = norm(a);
    if n > 0.0 {
        scale(a, 1.0 / n)
    } else {
        a
    }
}

pub fn quat_normalize(q: Quat) -> Quat {
    let n = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
    if n < 1e-12 {
        return [1.0, 0.0, 0.0, 0.0];
    }
    [q[0] / n, q[1] / n, q[2] / n, q[3] / n]
}

/// Flips to the `w >= 0` hemisphere.
pub fn quat_canonical(q: Quat) -> Quat {
    if q[0] < 0.0 {
        [-q[0], -q[1], -q[2], -q[3]]
    } else {
        q
    }
}

pub fn quat_mul(a: Quat, b: Quat) -> Quat {
    [
        a[0] * b[0] - a[1] * b[1] - a[2] * b[2] - a[3] * b[3],
        a[0] * b[1] + a[1] * b[0] + a[2] * b[3] - a[3] * b[2],
        a[0] * b[2] - a[1] * b[3] + a[2] * b[0] + a[3] * b[1],
        a[0] * b[3] + a[1] * b[2] - a[2] * b[1] + a[3] * b[0],
    ]
}

pub fn quat_from_axis_angle(axis: Vec3, angle: f64) -> Quat {
    let a = normalize(axis);
    let (s, c) = (angle / 2.0).sin_cos();
    [c, a[0] * s, a[1] * s, a[2] * s]
}

/// Row-major rotation matrix of a unit quaternion.
pub fn quat_to_matrix(q: Quat) -> [[f64; 3]; 3] {
    let [w, x, y, z] = q;
    [
        [
            1.0 - 2.0 * (y * y + z * z),
            2.0 * (x * y - w * z),
            2.0 * (x * z + w * y),
        ],
        [
            2.0 * (x * y + w * z),
            1.0 - 2.0 * (x * x + z * z),
            2.0 * (y * z - w * x),
        ],
        [
            2.0 * (x * z - w * y),
            2.0 * (y * z + w * x),
            1.0 - 2.0 * (x * x + y * y),
        ],
    ]
}

#[inline]
pub fn mat_vec(m: &[[f64; 3]; 3], v: Vec3) -> Vec3 {
    [dot(m[0], v), dot(m[1], v), dot(m[2], v)]
}

/// Rigid transform: unit-quaternion rotation followed by a translation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose {
    pub rotation: Quat,
    pub translation: Vec3,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            rotation: [1.0, 0.0, 0.0, 0.0],
            translation: [0.0; 3],
        }
    }

    /// Normalizes the rotation and maps it to the `w >= 0` hemisphere.
    pub fn new(rotation: Quat, translation: Vec3) -> Self {
        Self {
            rotation: quat_canonical(quat_normalize(rotation)),
            translation,
        }
    }

    pub fn matrix(&self) -> [[f64; 3]; 3] {
        quat_to_matrix(self.rotation)
    }

    pub fn apply(&self, p: Vec3) -> Vec3 {
        add(mat_vec(&self.matrix(), p), self.translation)
    }

    /// Uniformly distributed rotation (normalized Gaussian 4-vector).
    pub fn random_rotation<R: Rng + ?Sized>(rng: &mut R) -> Quat {
        loop {
            let q: Quat = [
                rng.sample(StandardNormal),
                rng.sample(StandardNormal),
                rng.sample(StandardNormal),
                rng.sample(StandardNormal),
            ];
            let n2: f64 = q.iter().map(|v| v * v).sum();
            if n2 > 1e-12 {
                return quat_normalize(q);
            }
        }
    }

    pub fn is_valid(&self) -> bool {
        let n: f64 = self.rotation.iter().map(|v| v * v).sum::<f64>().sqrt();
        (n - 1.0).abs() <= 1e-9
            && self.rotation.iter().all(|v| v.is_finite())
            && self.translation.iter().all(|v| v.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quarter_turn_about_z() {
        let q = quat_from_axis_angle([0.0, 0.0, 1.0], std::f64::consts::FRAC_PI_2);
        let p = Pose::new(q, [0.0; 3]).apply([1.0, 0.0, 0.0]);
        assert!((p[0]).abs() < 1e-12 && (p[1] - 1.0).abs() < 1e-12 && p[2].abs() < 1e-12);
    }

    #[test]
    fn product_matches_matrix_composition() {
        let a = quat_normalize([0.3, -0.2, 0.9, 0.1]);
        let b = quat_normalize([-0.5, 0.4, 0.1, 0.7]);
        let v = [0.3, -1.2, 2.0];
        let direct = mat_vec(&quat_to_matrix(quat_mul(a, b)), v);
        let composed = mat_vec(&quat_to_matrix(a), mat_vec(&quat_to_matrix(b), v));
        for i in 0..3 {
            assert!((direct[i] - composed[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn canonical_hemisphere() {
        let p = Pose::new([-2.0, 0.0, 0.0, 0.0], [0.0; 3]);
        assert_eq!(p.rotation, [1.0, 0.0, 0.0, 0.0]);
        assert!(p.is_valid());
    }
}
