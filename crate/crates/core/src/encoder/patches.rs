//! Image crops fed to the convolutional feature encoders.

use crate::error::{HgnnError, Result};
use crate::geometry::Vec3;
use crate::sim::{CameraModel, RgbImage};

pub const LOCAL_PATCH: usize = 8;
pub const SENSOR_PATCH: usize = 64;
pub const OBJECT_PATCH: usize = 32;

/// `size x size x 3` crop (row-major, channels last, values in `[0, 1]`)
/// whose pixel `(size / 2, size / 2)` is the rounded projection of `point`.
/// Pixels outside the image, and every pixel for points behind the camera,
/// are zero.
pub fn crop_patch(rgb: &RgbImage, point: Vec3, camera: &CameraModel, size: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; size * size * 3];
    let Some((u, v)) = camera.project(point) else {
        return out;
    };
    if !u.is_finite() || !v.is_finite() {
        return out;
    }
    let half = (size / 2) as f64;
    let (x0, y0) = (u.round() - half, v.round() - half);
    let (w, h) = (rgb.width as f64, rgb.height as f64);
    for py in 0..size {
        let y = y0 + py as f64;
        if y < 0.0 || y >= h {
            continue;
        }
        for px in 0..size {
            let x = x0 + px as f64;
            if x < 0.0 || x >= w {
                continue;
            }
            let c = rgb.get_unit(x as usize, y as usize);
            out[(py * size + px) * 3..(py * size + px) * 3 + 3].copy_from_slice(&c);
        }
    }
    out
}

/// Bilinear resize of the inclusive pixel box `(u0, v0, u1, v1)` to
/// `size x size x 3`, sampling at pixel centers.
pub fn crop_resized(rgb: &RgbImage, bbox: [u32; 4], size: usize) -> Result<Vec<f32>> {
    let [u0, v0, u1, v1] = bbox;
    if u0 > u1 || v0 > v1 || u1 as usize >= rgb.width || v1 as usize >= rgb.height {
        return Err(HgnnError::Encoding(format!(
            "bounding box {bbox:?} outside the image"
        )));
    }
    let (bw, bh) = ((u1 - u0 + 1) as f64, (v1 - v0 + 1) as f64);
    let mut out = vec![0.0f32; size * size * 3];
    let sample = |x: f64, y: f64| -> [f32; 3] {
        let x = x.clamp(u0 as f64, u1 as f64);
        let y = y.clamp(v0 as f64, v1 as f64);
        let (xa, ya) = (x.floor(), y.floor());
        let (xb, yb) = ((xa + 1.0).min(u1 as f64), (ya + 1.0).min(v1 as f64));
        let (fx, fy) = ((x - xa) as f32, (y - ya) as f32);
        let p = |xx: f64, yy: f64| rgb.get_unit(xx as usize, yy as usize);
        let (a, b, c, d) = (p(xa, ya), p(xb, ya), p(xa, yb), p(xb, yb));
        let mut o = [0.0f32; 3];
        for k in 0..3 {
            let top = a[k] * (1.0 - fx) + b[k] * fx;
            let bottom = c[k] * (1.0 - fx) + d[k] * fx;
            o[k] = top * (1.0 - fy) + bottom * fy;
        }
        o
    };
    for py in 0..size {
        let y = v0 as f64 + (py as f64 + 0.5) * bh / size as f64 - 0.5;
        for px in 0..size {
            let x = u0 as f64 + (px as f64 + 0.5) * bw / size as f64 - 0.5;
            out[(py * size + px) * 3..(py * size + px) * 3 + 3].copy_from_slice(&sample(x, y));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gradient_image() -> RgbImage {
        let mut img = RgbImage::filled(40, 30, [0; 3]);
        for y in 0..30 {
            for x in 0..40 {
                img.set(x, y, [x as u8 * 5, y as u8 * 7, 100]);
            }
        }
        img
    }

    fn cam() -> CameraModel {
        CameraModel {
            fx: 50.0,
            fy: 50.0,
            cx: 20.0,
            cy: 15.0,
            width: 40,
            height: 30,
        }
    }

    #[test]
    fn uniform_image_gives_uniform_patch() {
        let img = RgbImage::filled(40, 30, [128; 3]);
        let p = crop_patch(&img, [0.0, 0.0, 1.0], &cam(), 8);
        assert!(p.iter().all(|&v| v == 128.0 / 255.0));
    }

    #[test]
    fn center_pixel_is_the_projection() {
        let img = gradient_image();
        let c = cam();
        for point in [[0.1, -0.05, 1.0], [-0.3, 0.2, 2.0], [0.013, 0.021, 0.7]] {
            let (u, v) = c.project(point).unwrap();
            let (u, v) = (u.round() as usize, v.round() as usize);
            let p = crop_patch(&img, point, &c, 8);
            let k = (4 * 8 + 4) * 3;
            assert_eq!(&p[k..k + 3], &img.get_unit(u, v));
        }
    }

    #[test]
    fn off_image_and_behind_camera_are_zero() {
        let img = RgbImage::filled(40, 30, [200; 3]);
        assert!(crop_patch(&img, [10.0, 0.0, 1.0], &cam(), 8)
            .iter()
            .all(|&v| v == 0.0));
        assert!(crop_patch(&img, [0.0, 0.0, -1.0], &cam(), 8)
            .iter()
            .all(|&v| v == 0.0));
    }

    #[test]
    fn border_is_zero_padded() {
        let img = RgbImage::filled(40, 30, [255; 3]);
        // Projects to pixel (0, 0): the top-left 4x4 block lies outside.
        let p = crop_patch(&img, [-0.4, -0.3, 1.0], &cam(), 8);
        assert_eq!(p[0], 0.0);
        assert_eq!(p[(4 * 8 + 4) * 3], 1.0);
        assert_eq!(p.iter().filter(|&&v| v == 1.0).count(), 16 * 3);
    }

    #[test]
    fn resize_of_constant_box_is_constant() {
        let img = RgbImage::filled(40, 30, [51; 3]);
        let p = crop_resized(&img, [3, 4, 20, 9], 32).unwrap();
        assert!(p.iter().all(|&v| (v - 0.2).abs() < 1e-6));
        assert!(crop_resized(&img, [3, 4, 40, 9], 32).is_err());
    }

    #[test]
    fn identity_resize_copies_pixels() {
        let img = gradient_image();
        let p = crop_resized(&img, [5, 6, 12, 13], 8).unwrap();
        for y in 0..8 {
            for x in 0..8 {
                let k = (y * 8 + x) * 3;
                assert_eq!(&p[k..k + 3], &img.get_unit(5 + x, 6 + y));
            }
        }
    }
}
