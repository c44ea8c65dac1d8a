//! Pinhole deprojection of depth pixels into camera-frame points.
//!
//! Camera frame: +x right, +y down, +z along the optical axis into the scene.
//! Integer pixel indices address pixel centers.

use rayon::prelude::*;
use thiserror::Error;

use crate::geom::{Frame, Point3, PointCloud};
use crate::meshio::{CameraIntrinsics, ColorImage, DepthImage};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DeprojectError {
    #[error("pixel ({u}, {v}) has no depth return")]
    InvalidPixel { u: f64, v: f64 },
    #[error("pixel ({u}, {v}) lies outside the {width}x{height} image")]
    OutOfBounds { u: f64, v: f64, width: u32, height: u32 },
    #[error("depth scale must be positive, got {0}")]
    BadScale(f64),
    #[error("{what} is {got_w}x{got_h} but intrinsics are {want_w}x{want_h}")]
    DimensionMismatch { what: &'static str, got_w: u32, got_h: u32, want_w: u32, want_h: u32 },
}

/// `(x, y, z) = d/s · ((u − cx)/fx, (v − cy)/fy, 1)`.
///
/// `d` is in raw sensor units and `s` is raw units per meter. Sub-pixel
/// `(u, v)` are accepted; bounds are checked against the pixel-center grid
/// extended by half a pixel.
pub fn deproject_pixel(intr: &CameraIntrinsics, s: f64, u: f64, v: f64, d: f64) -> Result<Point3, DeprojectError> {
    if !(s > 0.0 && s.is_finite()) {
        return Err(DeprojectError::BadScale(s));
    }
    let in_range = |x: f64, n: u32| x >= -0.5 && x < n as f64 - 0.5;
    if !in_range(u, intr.width) || !in_range(v, intr.height) {
        return Err(DeprojectError::OutOfBounds { u, v, width: intr.width, height: intr.height });
    }
    if !(d > 0.0 && d.is_finite()) {
        return Err(DeprojectError::InvalidPixel { u, v });
    }
    Ok(deproject_unchecked(intr, s, u, v, d))
}

#[inline]
fn deproject_unchecked(intr: &CameraIntrinsics, s: f64, u: f64, v: f64, d: f64) -> Point3 {
    let z = d / s;
    Point3::new(z * (u - intr.cx) / intr.fx, z * (v - intr.cy) / intr.fy, z)
}

/// Inverse of [`deproject_pixel`]: camera-frame point to `(u, v, d)`.
/// Returns `None` for points at or behind the camera plane.
pub fn project_point(intr: &CameraIntrinsics, s: f64, p: &Point3) -> Option<(f64, f64, f64)> {
    (p.z > 0.0).then(|| (intr.fx * p.x / p.z + intr.cx, intr.fy * p.y / p.z + intr.cy, p.z * s))
}

/// One point per nonzero sample, in row-major order. Colors are taken from
/// `rgb` at the same pixel when given.
pub fn deproject_image(
    img: &DepthImage,
    intr: &CameraIntrinsics,
    rgb: Option<&ColorImage>,
) -> Result<PointCloud, DeprojectError> {
    let dims = |what, w: u32, h: u32| {
        if (w, h) != (intr.width, intr.height) {
            Err(DeprojectError::DimensionMismatch { what, got_w: w, got_h: h, want_w: intr.width, want_h: intr.height })
        } else {
            Ok(())
        }
    };
    dims("depth image", img.width(), img.height())?;
    if let Some(c) = rgb {
        dims("color image", c.width, c.height)?;
    }
    let s = img.depth_scale();
    let w = img.width() as usize;
    let rows: Vec<Vec<(Point3, [u8; 3])>> = img
        .data()
        .par_chunks(w)
        .enumerate()
        .map(|(v, row)| {
            row.iter()
                .enumerate()
                .filter(|(_, &d)| d != 0)
                .map(|(u, &d)| {
                    let p = deproject_unchecked(intr, s, u as f64, v as f64, d as f64);
                    let c = rgb.and_then(|c| c.get(u as u32, v as u32)).unwrap_or([0; 3]);
                    (p, c)
                })
                .collect()
        })
        .collect();
    let (points, colors): (Vec<_>, Vec<_>) = rows.into_iter().flatten().unzip();
    Ok(match rgb {
        Some(_) => PointCloud::with_colors(points, colors, Frame::Camera).expect("equal lengths"),
        None => PointCloud::new(points, Frame::Camera),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn principal_point_at_one_meter() {
        let intr = CameraIntrinsics::vga();
        let p = deproject_pixel(&intr, 1000.0, intr.cx, intr.cy, 1000.0).unwrap();
        assert_eq!(p, Point3::new(0.0, 0.0, 1.0));
    }

    #[test]
    fn off_axis_substitution() {
        // x = (2000/1000)·(920 − 320)/600 = 2; u = 920 is past the VGA edge,
        // so widen the sensor for this check.
        let intr = CameraIntrinsics::new(600.0, 600.0, 320.0, 240.0, 1280, 480).unwrap();
        let p = deproject_pixel(&intr, 1000.0, 920.0, 240.0, 2000.0).unwrap();
        assert_eq!(p, Point3::new(2.0, 0.0, 2.0));
    }

    #[test]
    fn zero_depth_is_invalid() {
        let intr = CameraIntrinsics::vga();
        assert!(matches!(deproject_pixel(&intr, 1000.0, 10.0, 10.0, 0.0), Err(DeprojectError::InvalidPixel { .. })));
        assert!(matches!(
            deproject_pixel(&intr, 1000.0, 640.0, 10.0, 5.0),
            Err(DeprojectError::OutOfBounds { .. })
        ));
    }

    #[test]
    fn all_zero_image_gives_empty_cloud() {
        let intr = CameraIntrinsics::new(1.0, 1.0, 0.5, 0.5, 2, 2).unwrap();
        let img = DepthImage::zeros(2, 2, 1000.0).unwrap();
        assert!(deproject_image(&img, &intr, None).unwrap().is_empty());
        let one = DepthImage::new(2, 2, vec![0, 0, 1500, 0], 1000.0).unwrap();
        let pc = deproject_image(&one, &intr, None).unwrap();
        assert_eq!(pc.len(), 1);
        assert_eq!(pc.points()[0], Point3::new(-0.75, 0.75, 1.5));
    }

    #[test]
    fn colors_follow_pixels() {
        let intr = CameraIntrinsics::new(1.0, 1.0, 0.5, 0.5, 2, 1).unwrap();
        let img = DepthImage::new(2, 1, vec![0, 10], 10.0).unwrap();
        let rgb = ColorImage { width: 2, height: 1, data: vec![[1, 1, 1], [9, 8, 7]] };
        let pc = deproject_image(&img, &intr, Some(&rgb)).unwrap();
        assert_eq!(pc.colors().unwrap(), &[[9, 8, 7]]);
        let bad = ColorImage { width: 1, height: 1, data: vec![[0; 3]] };
        assert!(deproject_image(&img, &intr, Some(&bad)).is_err());
    }

    #[test]
    fn dimension_mismatch() {
        let img = DepthImage::zeros(4, 4, 1000.0).unwrap();
        assert!(matches!(
            deproject_image(&img, &CameraIntrinsics::vga(), None),
            Err(DeprojectError::DimensionMismatch { .. })
        ));
    }

    proptest! {
        #[test]
        fn pinhole_round_trip(u in 0u32..640, v in 0u32..480, d in 1u16..=u16::MAX, s in 100.0f64..20000.0) {
            let intr = CameraIntrinsics::vga();
            let p = deproject_pixel(&intr, s, u as f64, v as f64, d as f64).unwrap();
            let (pu, pv, pd) = project_point(&intr, s, &p).unwrap();
            prop_assert!((pu - u as f64).abs() < 1e-9);
            prop_assert!((pv - v as f64).abs() < 1e-9);
            prop_assert_eq!(pd.round(), d as f64);
            prop_assert!((pd - d as f64).abs() < 1e-9 * d as f64);
        }

        #[test]
        fn cloud_size_counts_nonzero(data in proptest::collection::vec(prop_oneof![Just(0u16), 1u16..5000], 12)) {
            let intr = CameraIntrinsics::new(3.0, 3.0, 1.5, 1.0, 4, 3).unwrap();
            let img = DepthImage::new(4, 3, data.clone(), 1000.0).unwrap();
            let pc = deproject_image(&img, &intr, None).unwrap();
            prop_assert_eq!(pc.len(), data.iter().filter(|&&d| d != 0).count());
            prop_assert_eq!(pc.frame(), Frame::Camera);
        }

        #[test]
        fn scaling_depth_and_scale_together_is_invisible(data in proptest::collection::vec(0u16..4000, 12), k in 1u16..16) {
            let intr = CameraIntrinsics::new(3.0, 3.0, 1.5, 1.0, 4, 3).unwrap();
            let a = deproject_image(&DepthImage::new(4, 3, data.clone(), 1000.0).unwrap(), &intr, None).unwrap();
            let scaled: Vec<u16> = data.iter().map(|d| d * k).collect();
            let b = deproject_image(&DepthImage::new(4, 3, scaled, 1000.0 * k as f64).unwrap(), &intr, None).unwrap();
            prop_assert_eq!(a.len(), b.len());
            for (p, q) in a.points().iter().zip(b.points()) {
                prop_assert!((p - q).norm() <= 1e-15 * (1.0 + p.coords.norm()));
            }
        }
    }
}
