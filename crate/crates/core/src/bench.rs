//! Analytic test scenes, depth ray casting and angular-shift trial generation.
//!
//! Scenes live in a camera-style world frame: `+x` right, `+y` down, `+z`
//! forward, so the canonical camera at the origin looks down `+z` and "up"
//! is `-y`.

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{exp_so3, RigidTransform};
use crate::pyramid::{DepthImage, Intrinsics};

/// Circular planar patch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlanePrimitive {
    pub point: [f64; 3],
    pub normal: [f64; 3],
    /// Radius of the patch around `point` (m).
    pub extent: f64,
}

/// Axis-aligned box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxPrimitive {
    pub center: [f64; 3],
    pub half_extents: [f64; 3],
}

/// Declarative scene: primitives plus the nominal viewpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub name: String,
    #[serde(default)]
    pub planes: Vec<PlanePrimitive>,
    #[serde(default)]
    pub boxes: Vec<BoxPrimitive>,
    /// Nominal camera position.
    pub eye: [f64; 3],
    /// Point the nominal camera looks at; orbits turn around it.
    pub focus: [f64; 3],
}

fn v3(a: [f64; 3]) -> Vector3<f64> {
    Vector3::new(a[0], a[1], a[2])
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.planes.is_empty() && self.boxes.is_empty() {
            return Err(Error::Config(format!("scene `{}` has no primitives", self.name)));
        }
        for p in &self.planes {
            if !(p.extent > 0.0) || v3(p.normal).norm() == 0.0 {
                return Err(Error::Config(format!("scene `{}`: bad plane {:?}", self.name, p)));
            }
        }
        for b in &self.boxes {
            if b.half_extents.iter().any(|&e| !(e > 0.0)) {
                return Err(Error::Config(format!("scene `{}`: bad box {:?}", self.name, b)));
            }
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let s: SceneSpec = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scene specs always serialize")
    }

    /// Nominal camera pose (camera to world).
    pub fn nominal_pose(&self) -> RigidTransform {
        look_at(&v3(self.eye), &v3(self.focus))
    }

    /// Distance along the ray `origin + t dir` to the closest surface.
    pub fn intersect(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<f64> {
        let mut best = f64::INFINITY;
        for p in &self.planes {
            if let Some(t) = intersect_disc(p, origin, dir) {
                best = best.min(t);
            }
        }
        for b in &self.boxes {
            if let Some(t) = intersect_box(b, origin, dir) {
                best = best.min(t);
            }
        }
        best.is_finite().then_some(best)
    }
}

fn intersect_disc(p: &PlanePrimitive, o: &Vector3<f64>, d: &Vector3<f64>) -> Option<f64> {
    let n = v3(p.normal).normalize();
    let c = v3(p.point);
    let denom = n.dot(d);
    if denom.abs() < 1e-12 {
        return None;
    }
    let t = n.dot(&(c - o)) / denom;
    if t <= 1e-9 {
        return None;
    }
    ((o + d * t - c).norm() <= p.extent).then_some(t)
}

fn intersect_box(b: &BoxPrimitive, o: &Vector3<f64>, d: &Vector3<f64>) -> Option<f64> {
    let (mut t0, mut t1) = (f64::NEG_INFINITY, f64::INFINITY);
    for i in 0..3 {
        let lo = b.center[i] - b.half_extents[i];
        let hi = b.center[i] + b.half_extents[i];
        if d[i].abs() < 1e-15 {
            if o[i] < lo || o[i] > hi {
                return None;
            }
            continue;
        }
        let (mut a, mut c) = ((lo - o[i]) / d[i], (hi - o[i]) / d[i]);
        if a > c {
            std::mem::swap(&mut a, &mut c);
        }
        t0 = t0.max(a);
        t1 = t1.min(c);
    }
    if t0 > t1 {
        return None;
    }
    if t0 > 1e-9 {
        Some(t0)
    } else if t1 > 1e-9 {
        Some(t1)
    } else {
        None
    }
}

/// Camera-to-world pose at `eye` looking at `target`, image `y` pointing
/// toward world `+y`.
pub fn look_at(eye: &Vector3<f64>, target: &Vector3<f64>) -> RigidTransform {
    let z = (target - eye).normalize();
    let down = Vector3::new(0.0, 1.0, 0.0);
    let mut x = down.cross(&z);
    if x.norm() < 1e-9 {
        x = Vector3::x();
    }
    let x = x.normalize();
    let y = z.cross(&x);
    RigidTransform::new(Matrix3::from_columns(&[x, y, z]), *eye)
}

/// Image size plus intrinsics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    pub width: usize,
    pub height: usize,
    pub intrinsics: Intrinsics,
}

impl CameraModel {
    /// Kinect v1 sized camera.
    pub fn freiburg() -> Self {
        Self {
            width: 640,
            height: 480,
            intrinsics: Intrinsics::FREIBURG,
        }
    }

    /// 160x120 camera with a 56 x 44 degree field of view, used by the
    /// synthetic benchmarks.
    pub fn bench() -> Self {
        Self {
            width: 160,
            height: 120,
            intrinsics: Intrinsics {
                fx: 150.0,
                fy: 150.0,
                cx: 79.5,
                cy: 59.5,
            },
        }
    }

    pub fn horizontal_fov_deg(&self) -> f64 {
        2.0 * (self.width as f64 * 0.5 / self.intrinsics.fx).atan().to_degrees()
    }
}

/// Z-depth rendering of `scene` from `pose` (camera to world). Pixels with
/// no hit get depth 0.
pub fn render_depth(scene: &SceneSpec, pose: &RigidTransform, camera: &CameraModel) -> DepthImage {
    let k = camera.intrinsics;
    let origin = pose.translation;
    let mut depths = vec![0.0; camera.width * camera.height];
    for v in 0..camera.height {
        for u in 0..camera.width {
            let ray_cam = Vector3::new((u as f64 - k.cx) / k.fx, (v as f64 - k.cy) / k.fy, 1.0);
            let ray = pose.apply_to_vector(&ray_cam);
            // ray_cam has unit z, so the ray parameter is the z-depth
            if let Some(t) = scene.intersect(&origin, &ray) {
                depths[v * camera.width + u] = t;
            }
        }
    }
    DepthImage {
        width: camera.width,
        height: camera.height,
        depths,
        intrinsics: k,
    }
}

pub fn builtin_scenes() -> Vec<SceneSpec> {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    vec![
        SceneSpec {
            name: "corner".into(),
            planes: vec![
                PlanePrimitive {
                    point: [0.0, 0.8, 2.5],
                    normal: [0.0, -1.0, 0.0],
                    extent: 5.0,
                },
                PlanePrimitive {
                    point: [0.0, 0.8, 2.5],
                    normal: [s, 0.0, -s],
                    extent: 5.0,
                },
                PlanePrimitive {
                    point: [0.0, 0.8, 2.5],
                    normal: [-s, 0.0, -s],
                    extent: 5.0,
                },
            ],
            boxes: vec![],
            eye: [0.0, 0.0, 0.0],
            focus: [0.0, 0.8, 2.5],
        },
        SceneSpec {
            name: "desk".into(),
            // floor, back wall and two monitors angled 30 degrees inward
            planes: vec![
                PlanePrimitive {
                    point: [0.0, 0.7, 2.2],
                    normal: [0.0, -1.0, 0.0],
                    extent: 5.0,
                },
                PlanePrimitive {
                    point: [0.0, 0.7, 3.3],
                    normal: [0.0, 0.0, -1.0],
                    extent: 4.0,
                },
                PlanePrimitive {
                    point: [-0.4, 0.15, 2.85],
                    normal: [0.5, 0.0, -0.866_025_403_784_438_6],
                    extent: 0.3,
                },
                PlanePrimitive {
                    point: [0.45, 0.2, 2.95],
                    normal: [-0.5, 0.0, -0.866_025_403_784_438_6],
                    extent: 0.3,
                },
            ],
            boxes: vec![
                BoxPrimitive {
                    center: [-0.3, 0.45, 2.0],
                    half_extents: [0.25, 0.25, 0.2],
                },
                BoxPrimitive {
                    center: [0.35, 0.5, 2.4],
                    half_extents: [0.2, 0.2, 0.3],
                },
            ],
            eye: [0.0, 0.0, 0.0],
            focus: [0.0, 0.5, 2.2],
        },
        SceneSpec {
            name: "single_plane".into(),
            planes: vec![PlanePrimitive {
                point: [0.0, 0.0, 2.5],
                normal: [0.0, 0.0, -1.0],
                extent: 20.0,
            }],
            boxes: vec![],
            eye: [0.0, 0.0, 0.0],
            focus: [0.0, 0.0, 2.5],
        },
    ]
}

pub fn scene_by_name(name: &str) -> Result<SceneSpec> {
    builtin_scenes()
        .into_iter()
        .find(|s| s.name == name)
        .ok_or_else(|| Error::UnknownScene(name.to_string()))
}

/// Camera poses orbiting the scene focus about the vertical axis, centered
/// on the nominal viewpoint, with a small vertical bob.
pub fn orbit_poses(scene: &SceneSpec, frames: usize, step_deg: f64, bob: f64) -> Vec<RigidTransform> {
    let focus = v3(scene.focus);
    let arm = v3(scene.eye) - focus;
    let mid = (frames as f64 - 1.0) * 0.5;
    (0..frames)
        .map(|k| {
            let phi = ((k as f64 - mid) * step_deg).to_radians();
            let r = exp_so3(&Vector3::new(0.0, phi, 0.0));
            let lift = if frames > 1 {
                bob * (std::f64::consts::TAU * k as f64 / (frames - 1) as f64).sin()
            } else {
                0.0
            };
            let eye = focus + r * arm + Vector3::new(0.0, -lift, 0.0);
            look_at(&eye, &focus)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrialConfig {
    pub camera: CameraModel,
    /// Largest angle between the rotation axis and the camera up axis.
    pub max_axis_tilt_deg: f64,
    /// Per-axis translation bound (m); each component is uniform in `[0, max]`.
    pub max_translation: f64,
}

impl Default for TrialConfig {
    fn default() -> Self {
        Self {
            camera: CameraModel::bench(),
            max_axis_tilt_deg: 5.0,
            max_translation: 0.05,
        }
    }
}

/// One angular-shift registration problem.
#[derive(Debug, Clone, PartialEq)]
pub struct Trial {
    pub source: DepthImage,
    pub target: DepthImage,
    /// Maps source camera coordinates to target camera coordinates.
    pub truth: RigidTransform,
    /// Rotation axis in the nominal camera frame.
    pub axis: Vector3<f64>,
    /// Fraction of valid source pixels that are visible in the target.
    pub overlap: f64,
}

/// Angular-shift trial.
///
/// Both cameras sit at the nominal eye, turned by `-angle/2` and `+angle/2`
/// about a random axis near the camera up direction; the target camera is
/// also displaced by a random translation. The scene focus therefore stays
/// in the middle of whatever overlap the two views keep.
pub fn trial_generator(scene: &SceneSpec, angle_deg: f64, seed: u64, cfg: &TrialConfig) -> Result<Trial> {
    if !(angle_deg > 0.0 && angle_deg < 90.0) {
        return Err(Error::InvalidInput(format!("trial angle {angle_deg} outside (0, 90)")));
    }
    scene.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base = scene.nominal_pose();
    let theta = angle_deg.to_radians();
    let up = Vector3::new(0.0, -1.0, 0.0);
    for _ in 0..10 {
        let cos_tilt = rng.random_range(cfg.max_axis_tilt_deg.to_radians().cos()..=1.0);
        let sin_tilt = (1.0 - cos_tilt * cos_tilt).max(0.0).sqrt();
        let psi = rng.random_range(0.0..std::f64::consts::TAU);
        let axis = up * cos_tilt + (Vector3::x() * psi.cos() + Vector3::z() * psi.sin()) * sin_tilt;
        let offset = Vector3::from_fn(|_, _| rng.random_range(0.0..=cfg.max_translation));

        let src_pose = base.compose(&RigidTransform::from_rotation(exp_so3(&(axis * (-0.5 * theta)))));
        let tgt_pose = base.compose(&RigidTransform::new(exp_so3(&(axis * (0.5 * theta))), offset));
        let source = render_depth(scene, &src_pose, &cfg.camera);
        let target = render_depth(scene, &tgt_pose, &cfg.camera);
        if source.valid_count(f64::INFINITY) == 0 || target.valid_count(f64::INFINITY) == 0 {
            continue;
        }
        let truth = tgt_pose.inverse().compose(&src_pose);
        let overlap = view_overlap(&source, &target, &truth);
        return Ok(Trial {
            source,
            target,
            truth,
            axis,
            overlap,
        });
    }
    Err(Error::EmptyFrame)
}

/// Fraction of valid source pixels whose point, moved by `truth`, lands on a
/// target pixel with matching depth (2 cm).
pub fn view_overlap(source: &DepthImage, target: &DepthImage, truth: &RigidTransform) -> f64 {
    let mut valid = 0usize;
    let mut seen = 0usize;
    for v in 0..source.height {
        for u in 0..source.width {
            let d = source.at(u, v);
            if !(d > 0.0) {
                continue;
            }
            valid += 1;
            let p = truth.apply_to_point(&source.intrinsics.backproject(u as f64, v as f64, d));
            if let Some((pu, pv)) = target.intrinsics.project(&p) {
                let (pu, pv) = (pu.round(), pv.round());
                if pu >= 0.0 && pv >= 0.0 && (pu as usize) < target.width && (pv as usize) < target.height {
                    let dt = target.at(pu as usize, pv as usize);
                    if dt > 0.0 && (dt - p.z).abs() < 0.02 {
                        seen += 1;
                    }
                }
            }
        }
    }
    if valid == 0 {
        0.0
    } else {
        seen as f64 / valid as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::geodesic_distance;

    #[test]
    fn builtin_names_and_lookup() {
        let names: Vec<_> = builtin_scenes().into_iter().map(|s| s.name).collect();
        assert_eq!(names, vec!["corner", "desk", "single_plane"]);
        assert!(builtin_scenes().iter().all(|s| s.validate().is_ok()));
        assert!(matches!(scene_by_name("kitchen"), Err(Error::UnknownScene(_))));
    }

    #[test]
    fn fronto_parallel_plane_depth() {
        let scene = SceneSpec {
            name: "wall".into(),
            planes: vec![PlanePrimitive {
                point: [0.0, 0.0, 2.0],
                normal: [0.0, 0.0, -1.0],
                extent: 50.0,
            }],
            boxes: vec![],
            eye: [0.0; 3],
            focus: [0.0, 0.0, 1.0],
        };
        let cam = CameraModel::bench();
        let d = render_depth(&scene, &RigidTransform::identity(), &cam);
        assert!(d.depths.iter().all(|&z| (z - 2.0).abs() < 1e-12));
        let closer = RigidTransform::from_translation(Vector3::new(0.0, 0.0, 0.1));
        let d = render_depth(&scene, &closer, &cam);
        assert!(d.depths.iter().all(|&z| (z - 1.9).abs() < 1e-12));
    }

    #[test]
    fn nothing_in_view_is_empty() {
        let scene = scene_by_name("single_plane").unwrap();
        let away = RigidTransform::from_rotation(exp_so3(&Vector3::new(0.0, std::f64::consts::PI, 0.0)));
        assert_eq!(render_depth(&scene, &away, &CameraModel::bench()).valid_count(10.0), 0);
    }

    #[test]
    fn toml_round_trip() {
        for s in builtin_scenes() {
            assert_eq!(SceneSpec::from_toml(&s.to_toml()).unwrap(), s);
        }
        assert!(SceneSpec::from_toml("name = \"x\"\neye = [0,0,0]\nfocus = [0,0,1]\n").is_err());
    }

    #[test]
    fn trial_rotation_magnitude_and_determinism() {
        let scene = scene_by_name("corner").unwrap();
        let cfg = TrialConfig::default();
        for angle in [5.0, 20.0, 45.0] {
            let t = trial_generator(&scene, angle, 7, &cfg).unwrap();
            assert!((t.truth.rotation_angle().to_degrees() - angle).abs() < 1e-9);
            let again = trial_generator(&scene, angle, 7, &cfg).unwrap();
            assert_eq!(t, again);
            assert!(t.truth.translation.norm() > 0.0);
        }
        let a = trial_generator(&scene, 10.0, 1, &cfg).unwrap();
        let b = trial_generator(&scene, 10.0, 2, &cfg).unwrap();
        assert!(geodesic_distance(&a.truth.rotation, &b.truth.rotation) > 0.0);
        assert!(trial_generator(&scene, 90.0, 1, &cfg).is_err());
    }

    #[test]
    fn look_at_faces_target() {
        let p = look_at(&Vector3::new(1.0, -0.5, 0.0), &Vector3::new(0.0, 0.8, 2.5));
        let fwd = p.apply_to_vector(&Vector3::z());
        assert!((fwd - (Vector3::new(0.0, 0.8, 2.5) - Vector3::new(1.0, -0.5, 0.0)).normalize()).norm() < 1e-12);
        assert!(p.orthonormality_error() < 1e-12);
    }
}
