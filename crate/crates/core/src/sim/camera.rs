use crate::error::{HgnnError, Result};
use crate::geometry::Vec3;

/// Pinhole camera at the origin looking down `+z`, image `y` pointing down.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CameraModel {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl Default for CameraModel {
    fn default() -> Self {
        Self {
            fx: 400.0,
            fy: 400.0,
            cx: 160.0,
            cy: 120.0,
            width: 320,
            height: 240,
        }
    }
}

impl CameraModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(HgnnError::invalid("focal lengths must be positive"));
        }
        if !(self.cx >= 0.0
            && self.cx < self.width as f64
            && self.cy >= 0.0
            && self.cy < self.height as f64)
        {
            return Err(HgnnError::invalid("principal point outside the image"));
        }
        Ok(())
    }

    /// Continuous pixel coordinates, or `None` behind the camera.
    pub fn project(&self, p: Vec3) -> Option<(f64, f64)> {
        if p[2] <= 1e-9 {
            return None;
        }
        Some((
            self.fx * p[0] / p[2] + self.cx,
            self.fy * p[1] / p[2] + self.cy,
        ))
    }

    /// Rounded pixel, or `None` if behind the camera or outside the image.
    pub fn pixel(&self, p: Vec3) -> Option<(usize, usize)> {
        let (u, v) = self.project(p)?;
        let (u, v) = (u.round(), v.round());
        if u < 0.0 || v < 0.0 || u >= self.width as f64 || v >= self.height as f64 {
            return None;
        }
        Some((u as usize, v as usize))
    }

    pub fn unproject(&self, u: f64, v: f64, depth: f64) -> Vec3 {
        [
            (u - self.cx) * depth / self.fx,
            (v - self.cy) * depth / self.fy,
            depth,
        ]
    }
}

/// 8-bit RGB image, row-major, 3 bytes per pixel.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl RgbImage {
    pub fn filled(width: usize, height: usize, color: [u8; 3]) -> Self {
        let mut data = Vec::with_capacity(width * height * 3);
        for _ in 0..width * height {
            data.extend_from_slice(&color);
        }
        Self {
            width,
            height,
            data,
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&c);
    }

    /// Pixel value in `[0, 1]`.
    #[inline]
    pub fn get_unit(&self, x: usize, y: usize) -> [f32; 3] {
        let c = self.get(x, y);
        [
            c[0] as f32 / 255.0,
            c[1] as f32 / 255.0,
            c[2] as f32 / 255.0,
        ]
    }
}

pub fn to_u8(c: Vec3) -> [u8; 3] {
    [
        (c[0].clamp(0.0, 1.0) * 255.0).round() as u8,
        (c[1].clamp(0.0, 1.0) * 255.0).round() as u8,
        (c[2].clamp(0.0, 1.0) * 255.0).round() as u8,
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn principal_point_projection() {
        let cam = CameraModel::default();
        assert_eq!(cam.pixel([0.0, 0.0, 0.5]), Some((160, 120)));
        assert_eq!(cam.pixel([0.0, 0.0, -0.5]), None);
        let p = cam.unproject(200.0, 100.0, 0.4);
        let (u, v) = cam.project(p).unwrap();
        assert!((u - 200.0).abs() < 1e-9 && (v - 100.0).abs() < 1e-9);
    }

    #[test]
    fn rejects_bad_intrinsics() {
        let cam = CameraModel {
            cx: 400.0,
            ..CameraModel::default()
        };
        assert!(cam.validate().is_err());
    }
}
