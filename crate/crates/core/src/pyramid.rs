//! Depth images to coarse-to-fine pyramids of organized point clouds.

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Pinhole intrinsics in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Intrinsics {
    /// Kinect v1 defaults of the Freiburg benchmark at 640x480.
    pub const FREIBURG: Intrinsics = Intrinsics {
        fx: 525.0,
        fy: 525.0,
        cx: 319.5,
        cy: 239.5,
    };

    pub fn validate(&self) -> Result<()> {
        if self.fx > 0.0 && self.fy > 0.0 && self.fx.is_finite() && self.fy.is_finite() {
            Ok(())
        } else {
            Err(Error::BadIntrinsics {
                fx: self.fx,
                fy: self.fy,
            })
        }
    }

    /// Intrinsics of an image downsampled by two (pixel centers preserved).
    pub fn halved(&self) -> Intrinsics {
        Intrinsics {
            fx: self.fx * 0.5,
            fy: self.fy * 0.5,
            cx: (self.cx + 0.5) * 0.5 - 0.5,
            cy: (self.cy + 0.5) * 0.5 - 0.5,
        }
    }

    pub fn backproject(&self, u: f64, v: f64, depth: f64) -> Vector3<f64> {
        Vector3::new(depth * (u - self.cx) / self.fx, depth * (v - self.cy) / self.fy, depth)
    }

    /// Sub-pixel image coordinates of `p`, or `None` behind the camera.
    pub fn project(&self, p: &Vector3<f64>) -> Option<(f64, f64)> {
        if p.z <= 0.0 {
            return None;
        }
        Some((self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy))
    }
}

/// Row-major depth map in meters; `0` or `NaN` marks missing depth.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthImage {
    pub width: usize,
    pub height: usize,
    pub depths: Vec<f64>,
    pub intrinsics: Intrinsics,
}

impl DepthImage {
    pub fn new(width: usize, height: usize, depths: Vec<f64>, intrinsics: Intrinsics) -> Result<Self> {
        if depths.len() != width * height {
            return Err(Error::InvalidInput(format!(
                "depth buffer has {} entries, expected {}x{}",
                depths.len(),
                width,
                height
            )));
        }
        Ok(Self {
            width,
            height,
            depths,
            intrinsics,
        })
    }

    pub fn constant(width: usize, height: usize, depth: f64, intrinsics: Intrinsics) -> Self {
        Self {
            width,
            height,
            depths: vec![depth; width * height],
            intrinsics,
        }
    }

    pub fn at(&self, u: usize, v: usize) -> f64 {
        self.depths[v * self.width + u]
    }

    pub fn valid_count(&self, depth_max: f64) -> usize {
        self.depths.iter().filter(|&&d| is_valid_depth(d, depth_max)).count()
    }
}

pub fn is_valid_depth(d: f64, depth_max: f64) -> bool {
    d.is_finite() && d > 0.0 && d <= depth_max
}

/// Per-pixel points and normals on the image grid.
#[derive(Debug, Clone, PartialEq)]
pub struct OrganizedCloud {
    pub width: usize,
    pub height: usize,
    pub intrinsics: Intrinsics,
    pub points: Vec<Vector3<f64>>,
    pub normals: Vec<Vector3<f64>>,
    /// Point validity.
    pub valid: Vec<bool>,
    /// Normal validity; implies point validity.
    pub normal_valid: Vec<bool>,
}

impl OrganizedCloud {
    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, u: usize, v: usize) -> usize {
        v * self.width + u
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }

    pub fn normal_count(&self) -> usize {
        self.normal_valid.iter().filter(|&&v| v).count()
    }

    /// Pixel nearest to the projection of `p`, if inside the image.
    pub fn pixel_of(&self, p: &Vector3<f64>) -> Option<usize> {
        let (u, v) = self.intrinsics.project(p)?;
        let (u, v) = (u.round(), v.round());
        if u < 0.0 || v < 0.0 || u >= self.width as f64 || v >= self.height as f64 {
            return None;
        }
        Some(self.index(u as usize, v as usize))
    }
}

/// Pinhole back-projection; depths outside `(0, depth_max]` are masked.
pub fn backproject(d: &DepthImage, depth_max: f64) -> Result<OrganizedCloud> {
    d.intrinsics.validate()?;
    let n = d.width * d.height;
    let mut points = vec![Vector3::zeros(); n];
    let mut valid = vec![false; n];
    for v in 0..d.height {
        for u in 0..d.width {
            let i = v * d.width + u;
            let z = d.depths[i];
            if is_valid_depth(z, depth_max) {
                points[i] = d.intrinsics.backproject(u as f64, v as f64, z);
                valid[i] = true;
            }
        }
    }
    Ok(OrganizedCloud {
        width: d.width,
        height: d.height,
        intrinsics: d.intrinsics,
        points,
        normals: vec![Vector3::zeros(); n],
        valid,
        normal_valid: vec![false; n],
    })
}

/// Summed-area table with a zero guard row and column.
struct Integral<T> {
    stride: usize,
    data: Vec<T>,
}

impl<T> Integral<T>
where
    T: Copy + Default + std::ops::Add<Output = T> + std::ops::Sub<Output = T>,
{
    fn build(width: usize, height: usize, value: impl Fn(usize) -> T) -> Self {
        let stride = width + 1;
        let mut data = vec![T::default(); stride * (height + 1)];
        for v in 0..height {
            let mut row = T::default();
            for u in 0..width {
                row = row + value(v * width + u);
                data[(v + 1) * stride + u + 1] = data[v * stride + u + 1] + row;
            }
        }
        Self { stride, data }
    }

    /// Sum over columns `u0..u1` and rows `v0..v1` (half-open).
    fn sum(&self, u0: usize, u1: usize, v0: usize, v1: usize) -> T {
        let s = self.stride;
        self.data[v1 * s + u1] - self.data[v0 * s + u1] - self.data[v1 * s + u0] + self.data[v0 * s + u0]
    }
}

#[derive(Clone, Copy, Default)]
struct Vec3Sum(f64, f64, f64);

impl std::ops::Add for Vec3Sum {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Vec3Sum(self.0 + o.0, self.1 + o.1, self.2 + o.2)
    }
}

impl std::ops::Sub for Vec3Sum {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Vec3Sum(self.0 - o.0, self.1 - o.1, self.2 - o.2)
    }
}

impl Vec3Sum {
    fn mean(self, count: f64) -> Vector3<f64> {
        Vector3::new(self.0, self.1, self.2) / count
    }
}

/// Integral-image normals.
///
/// For each pixel the horizontal tangent is the mean point of the
/// `half_window x (2 half_window + 1)` block to its right minus the block to
/// its left; the vertical tangent is built the same way below/above. The
/// normal is their cross product, oriented toward the camera. A pixel gets
/// no normal when its window leaves the image, contains an invalid point, or
/// spans a neighbor depth jump larger than `disc_threshold`.
pub fn estimate_normals(cloud: &OrganizedCloud, half_window: usize, disc_threshold: f64) -> OrganizedCloud {
    let (w, h) = (cloud.width, cloud.height);
    let hw = half_window.max(1);
    let pts = &cloud.points;
    let valid = &cloud.valid;

    let sums = Integral::build(w, h, |i| {
        if valid[i] {
            let p = pts[i];
            Vec3Sum(p.x, p.y, p.z)
        } else {
            Vec3Sum::default()
        }
    });
    let invalid = Integral::build(w, h, |i| i64::from(!valid[i]));
    // jump to the right neighbor, stored at the left pixel
    let jump_h = Integral::build(w, h, |i| {
        let u = i % w;
        i64::from(u + 1 < w && valid[i] && valid[i + 1] && (pts[i].z - pts[i + 1].z).abs() > disc_threshold)
    });
    // jump to the lower neighbor, stored at the upper pixel
    let jump_v = Integral::build(w, h, |i| {
        i64::from(i + w < w * h && valid[i] && valid[i + w] && (pts[i].z - pts[i + w].z).abs() > disc_threshold)
    });

    let block = (hw * (2 * hw + 1)) as f64;
    let results: Vec<Option<Vector3<f64>>> = (0..w * h)
        .into_par_iter()
        .map(|i| {
            let (u, v) = (i % w, i / w);
            if !valid[i] || u < hw || v < hw || u + hw >= w || v + hw >= h {
                return None;
            }
            let (u0, u1, v0, v1) = (u - hw, u + hw + 1, v - hw, v + hw + 1);
            if invalid.sum(u0, u1, v0, v1) > 0
                || jump_h.sum(u0, u1 - 1, v0, v1) > 0
                || jump_v.sum(u0, u1, v0, v1 - 1) > 0
            {
                return None;
            }
            let right = sums.sum(u + 1, u1, v0, v1).mean(block);
            let left = sums.sum(u0, u, v0, v1).mean(block);
            let below = sums.sum(u0, u1, v + 1, v1).mean(block);
            let above = sums.sum(u0, u1, v0, v).mean(block);
            let n = (right - left).cross(&(below - above));
            let len = n.norm();
            if !len.is_finite() || len < 1e-15 {
                return None;
            }
            let mut n = n / len;
            if n.dot(&pts[i]) > 0.0 {
                n = -n;
            }
            Some(n)
        })
        .collect();

    let mut out = cloud.clone();
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Some(n) => {
                out.normals[i] = n;
                out.normal_valid[i] = true;
            }
            None => {
                out.normals[i] = Vector3::zeros();
                out.normal_valid[i] = false;
            }
        }
    }
    out
}

/// Pyramid construction parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PyramidConfig {
    pub levels: usize,
    /// Normal window half-size at the finest level, halved per level.
    pub half_window: usize,
    /// Depth jump (m) invalidating a normal window at the finest level,
    /// doubled per level along with the pixel footprint.
    pub disc_threshold: f64,
    pub depth_max: f64,
}

impl Default for PyramidConfig {
    fn default() -> Self {
        Self {
            levels: 3,
            half_window: 5,
            disc_threshold: 0.05,
            depth_max: 6.0,
        }
    }
}

impl PyramidConfig {
    pub fn half_window_at(&self, level: usize) -> usize {
        let scaled = self.half_window as f64 / f64::powi(2.0, level as i32);
        (scaled.round() as usize).max(1)
    }

    pub fn disc_threshold_at(&self, level: usize) -> f64 {
        self.disc_threshold * f64::powi(2.0, level as i32)
    }
}

/// Finest level first.
#[derive(Debug, Clone, PartialEq)]
pub struct CloudPyramid {
    pub levels: Vec<OrganizedCloud>,
}

impl CloudPyramid {
    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    pub fn finest(&self) -> &OrganizedCloud {
        &self.levels[0]
    }
}

/// Halves the resolution, taking the lower median of the valid depths in
/// each 2x2 block so that no output depth mixes the two sides of an edge.
pub fn downsample_depth(d: &DepthImage, depth_max: f64) -> DepthImage {
    let (w2, h2) = (d.width.div_ceil(2), d.height.div_ceil(2));
    let mut depths = vec![0.0; w2 * h2];
    let mut block = Vec::with_capacity(4);
    for v in 0..h2 {
        for u in 0..w2 {
            block.clear();
            for dv in 0..2 {
                for du in 0..2 {
                    let (x, y) = (2 * u + du, 2 * v + dv);
                    if x < d.width && y < d.height {
                        let z = d.at(x, y);
                        if is_valid_depth(z, depth_max) {
                            block.push(z);
                        }
                    }
                }
            }
            if !block.is_empty() {
                block.sort_by(f64::total_cmp);
                depths[v * w2 + u] = block[(block.len() - 1) / 2];
            }
        }
    }
    DepthImage {
        width: w2,
        height: h2,
        depths,
        intrinsics: d.intrinsics.halved(),
    }
}

pub fn build_pyramid(d: &DepthImage, cfg: &PyramidConfig) -> Result<CloudPyramid> {
    if cfg.levels == 0 {
        return Err(Error::Config("pyramid needs at least one level".into()));
    }
    d.intrinsics.validate()?;
    let mut levels = Vec::with_capacity(cfg.levels);
    let mut depth = d.clone();
    for level in 0..cfg.levels {
        if level > 0 {
            depth = downsample_depth(&depth, cfg.depth_max);
        }
        let cloud = backproject(&depth, cfg.depth_max)?;
        levels.push(estimate_normals(
            &cloud,
            cfg.half_window_at(level),
            cfg.disc_threshold_at(level),
        ));
    }
    Ok(CloudPyramid { levels })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_intrinsics(w: usize, h: usize) -> Intrinsics {
        Intrinsics {
            fx: 150.0,
            fy: 150.0,
            cx: (w as f64 - 1.0) / 2.0,
            cy: (h as f64 - 1.0) / 2.0,
        }
    }

    /// Depth of the plane `n . X = c` seen through pixel (u, v).
    fn plane_depth(k: &Intrinsics, u: usize, v: usize, n: &Vector3<f64>, c: f64) -> f64 {
        let ray = Vector3::new((u as f64 - k.cx) / k.fx, (v as f64 - k.cy) / k.fy, 1.0);
        c / n.dot(&ray)
    }

    fn plane_image(w: usize, h: usize, n: Vector3<f64>, c: f64) -> DepthImage {
        let k = small_intrinsics(w, h);
        let depths = (0..w * h).map(|i| plane_depth(&k, i % w, i / w, &n, c)).collect();
        DepthImage::new(w, h, depths, k).unwrap()
    }

    fn angle_deg(a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
        a.dot(b).clamp(-1.0, 1.0).acos().to_degrees()
    }

    #[test]
    fn principal_point_backprojects_on_axis() {
        let k = Intrinsics {
            fx: 500.0,
            fy: 500.0,
            cx: 2.0,
            cy: 1.0,
        };
        let mut d = DepthImage::constant(5, 3, 0.0, k);
        d.depths[5 + 2] = 1.0;
        let c = backproject(&d, 6.0).unwrap();
        assert_eq!(c.points[7], Vector3::new(0.0, 0.0, 1.0));
        assert!(c.valid[7]);
        assert!(!c.valid[0]);
    }

    #[test]
    fn bad_intrinsics_rejected() {
        let k = Intrinsics {
            fx: 0.0,
            fy: 500.0,
            cx: 0.0,
            cy: 0.0,
        };
        let d = DepthImage::constant(4, 4, 1.0, k);
        assert!(matches!(backproject(&d, 6.0), Err(Error::BadIntrinsics { .. })));
    }

    #[test]
    fn backprojection_reprojects() {
        let k = Intrinsics {
            fx: 517.3,
            fy: 516.5,
            cx: 318.6,
            cy: 255.3,
        };
        let (w, h) = (640, 480);
        let mut d = DepthImage::constant(w, h, 0.0, k);
        let probes = [(0usize, 0usize, 0.5), (639, 479, 5.9), (100, 300, 2.25), (411, 17, 1.0)];
        for &(u, v, z) in &probes {
            d.depths[v * w + u] = z;
        }
        let c = backproject(&d, 6.0).unwrap();
        for &(u, v, z) in &probes {
            let p = c.points[v * w + u];
            let (pu, pv) = k.project(&p).unwrap();
            assert!((pu - u as f64).abs() < 1e-9 && (pv - v as f64).abs() < 1e-9 && (p.z - z).abs() < 1e-9);
        }
    }

    #[test]
    fn fronto_parallel_normals() {
        let d = DepthImage::constant(40, 30, 2.0, small_intrinsics(40, 30));
        let c = estimate_normals(&backproject(&d, 6.0).unwrap(), 5, 0.05);
        let mut interior = 0;
        for v in 0..30 {
            for u in 0..40 {
                let i = v * 40 + u;
                let inside = u >= 5 && v >= 5 && u + 5 < 40 && v + 5 < 30;
                assert_eq!(c.normal_valid[i], inside);
                if inside {
                    interior += 1;
                    assert!((c.normals[i] - Vector3::new(0.0, 0.0, -1.0)).norm() < 1e-6);
                }
            }
        }
        assert!(interior > 0);
    }

    #[test]
    fn ramp_normals_match_plane() {
        // 45 degree ramp: z = 2 + x
        let n = Vector3::new(-1.0, 0.0, 1.0).normalize();
        let d = plane_image(60, 40, n, 2.0 / 2f64.sqrt());
        let c = estimate_normals(&backproject(&d, 6.0).unwrap(), 5, 0.05);
        let expected = -n;
        assert!(c.normal_count() > 100);
        for i in 0..c.len() {
            if c.normal_valid[i] {
                assert!(angle_deg(&c.normals[i], &expected) < 1.0);
                assert!(c.normals[i].dot(&c.points[i]) <= 0.0);
                assert!((c.normals[i].norm() - 1.0).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn depth_step_invalidates_neighbors() {
        let k = small_intrinsics(40, 30);
        let mut d = DepthImage::constant(40, 30, 1.0, k);
        for v in 0..30 {
            for u in 20..40 {
                d.depths[v * 40 + u] = 2.0;
            }
        }
        let c = estimate_normals(&backproject(&d, 6.0).unwrap(), 3, 0.05);
        for v in 0..30 {
            assert!(!c.normal_valid[v * 40 + 19]);
            assert!(!c.normal_valid[v * 40 + 20]);
        }
        assert!(c.normal_valid[15 * 40 + 10]);
        assert!(c.normal_valid[15 * 40 + 30]);
    }

    #[test]
    fn pyramid_sizes() {
        let d = DepthImage::constant(640, 480, 1.5, Intrinsics::FREIBURG);
        let p = build_pyramid(&d, &PyramidConfig::default()).unwrap();
        let dims: Vec<_> = p.levels.iter().map(|l| (l.width, l.height)).collect();
        assert_eq!(dims, vec![(640, 480), (320, 240), (160, 120)]);
        for l in &p.levels {
            assert!(l.points.iter().zip(&l.valid).all(|(p, &v)| v && p.z == 1.5));
        }
        let odd = DepthImage::constant(81, 61, 1.0, small_intrinsics(81, 61));
        let p = build_pyramid(&odd, &PyramidConfig::default()).unwrap();
        let dims: Vec<_> = p.levels.iter().map(|l| (l.width, l.height)).collect();
        assert_eq!(dims, vec![(81, 61), (41, 31), (21, 16)]);
    }

    #[test]
    fn coarse_normals_match_fine_on_plane() {
        let n = Vector3::new(0.3, -0.4, 1.0).normalize();
        let d = plane_image(160, 120, n, 2.0);
        let p = build_pyramid(&d, &PyramidConfig::default()).unwrap();
        let expected = -n;
        for (level, cloud) in p.levels.iter().enumerate() {
            assert!(cloud.normal_count() > 0, "level {level}");
            for i in 0..cloud.len() {
                if cloud.normal_valid[i] {
                    assert!(angle_deg(&cloud.normals[i], &expected) < 2.0, "level {level}");
                }
            }
        }
    }

    #[test]
    fn pyramid_validity_is_monotone() {
        let k = small_intrinsics(32, 24);
        let mut d = DepthImage::constant(32, 24, 0.0, k);
        d.depths[5 * 32 + 7] = 1.0;
        d.depths[20 * 32 + 30] = 3.0;
        let coarse = downsample_depth(&d, 6.0);
        for v in 0..coarse.height {
            for u in 0..coarse.width {
                let any_child = (0..2).any(|dv| {
                    (0..2).any(|du| {
                        let (x, y) = (2 * u + du, 2 * v + dv);
                        x < 32 && y < 24 && d.at(x, y) > 0.0
                    })
                });
                assert_eq!(coarse.at(u, v) > 0.0, any_child);
            }
        }
    }
}
