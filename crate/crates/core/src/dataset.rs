//! Trajectory files, TUM RGB-D sequence ingestion and synthetic sequences.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use image::{ImageBuffer, Luma};
use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::bench::{render_depth, CameraModel, SceneSpec};
use crate::error::{Error, Result};
use crate::geom::{RigidTransform, UnitQuaternion};
use crate::pyramid::{DepthImage, Intrinsics};

/// Raw 16-bit depth units per meter.
pub const DEPTH_SCALE: f64 = 5000.0;

/// Default association window (s).
pub const DEFAULT_MAX_DT: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryEntry {
    pub timestamp: f64,
    pub pose: RigidTransform,
}

/// Time-ordered camera-to-world poses.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    entries: Vec<TrajectoryEntry>,
}

impl Trajectory {
    /// Fails unless timestamps strictly increase.
    pub fn new(entries: Vec<TrajectoryEntry>) -> Result<Self> {
        if let Some(w) = entries.windows(2).find(|w| !(w[1].timestamp > w[0].timestamp)) {
            return Err(Error::InvalidInput(format!(
                "trajectory timestamps must increase ({} then {})",
                w[0].timestamp, w[1].timestamp
            )));
        }
        Ok(Self { entries })
    }

    pub fn from_poses(timestamps: &[f64], poses: &[RigidTransform]) -> Result<Self> {
        if timestamps.len() != poses.len() {
            return Err(Error::InvalidInput("timestamp and pose counts differ".into()));
        }
        Self::new(
            timestamps
                .iter()
                .zip(poses)
                .map(|(&timestamp, &pose)| TrajectoryEntry { timestamp, pose })
                .collect(),
        )
    }

    pub fn entries(&self) -> &[TrajectoryEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn timestamps(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.timestamp).collect()
    }

    pub fn poses(&self) -> Vec<RigidTransform> {
        self.entries.iter().map(|e| e.pose).collect()
    }

    pub fn positions(&self) -> Vec<Vector3<f64>> {
        self.entries.iter().map(|e| e.pose.translation).collect()
    }

    /// Applies `t` on the left of every pose.
    pub fn transformed(&self, t: &RigidTransform) -> Self {
        Self {
            entries: self
                .entries
                .iter()
                .map(|e| TrajectoryEntry {
                    timestamp: e.timestamp,
                    pose: t.compose(&e.pose),
                })
                .collect(),
        }
    }

    /// TUM text (`timestamp tx ty tz qx qy qz qw`), quaternions with `qw >= 0`.
    pub fn to_tum_string(&self) -> String {
        let mut s = String::from("# timestamp tx ty tz qx qy qz qw\n");
        for e in &self.entries {
            let t = e.pose.translation;
            let q = e.pose.quaternion().canonical();
            writeln!(
                s,
                "{:.6} {:.9} {:.9} {:.9} {:.9} {:.9} {:.9} {:.9}",
                e.timestamp, t.x, t.y, t.z, q.x, q.y, q.z, q.w
            )
            .expect("writing to a String cannot fail");
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut entries: Vec<TrajectoryEntry> = Vec::new();
        for (k, raw) in text.lines().enumerate() {
            let line_no = k + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |reason: String| Error::ParseError { line: line_no, reason };
            let fields: Vec<f64> = line
                .split_whitespace()
                .map(|f| f.parse::<f64>().map_err(|e| bad(format!("`{f}`: {e}"))))
                .collect::<Result<_>>()?;
            if fields.len() != 8 {
                return Err(bad(format!("expected 8 fields, found {}", fields.len())));
            }
            if !fields.iter().all(|v| v.is_finite()) {
                return Err(bad("non-finite value".into()));
            }
            let q = UnitQuaternion::new(fields[7], fields[4], fields[5], fields[6])
                .map_err(|_| bad("zero quaternion".into()))?;
            let timestamp = fields[0];
            if let Some(prev) = entries.last() {
                if !(timestamp > prev.timestamp) {
                    return Err(bad(format!("timestamp {timestamp} does not increase")));
                }
            }
            entries.push(TrajectoryEntry {
                timestamp,
                pose: RigidTransform::from_quaternion(&q, Vector3::new(fields[1], fields[2], fields[3])),
            });
        }
        Ok(Self { entries })
    }
}

pub fn load_trajectory(path: &Path) -> Result<Trajectory> {
    Trajectory::parse(&fs::read_to_string(path)?)
}

pub fn save_trajectory(t: &Trajectory, path: &Path) -> Result<()> {
    fs::write(path, t.to_tum_string())?;
    Ok(())
}

/// Greedy nearest-timestamp matching: candidate pairs within `max_dt` are
/// taken in order of increasing time difference, each index at most once.
/// The result is sorted by the index into `a`.
pub fn associate(a: &[f64], b: &[f64], max_dt: f64) -> Vec<(usize, usize)> {
    let mut sorted_b: Vec<(f64, usize)> = b.iter().copied().zip(0..).collect();
    sorted_b.sort_by(|x, y| x.0.total_cmp(&y.0));
    let mut candidates = Vec::new();
    for (i, &ta) in a.iter().enumerate() {
        let start = sorted_b.partition_point(|&(tb, _)| tb < ta - max_dt);
        for &(tb, j) in &sorted_b[start..] {
            if tb > ta + max_dt {
                break;
            }
            let dt = (ta - tb).abs();
            if dt < max_dt {
                candidates.push((dt, i, j));
            }
        }
    }
    candidates.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));
    let mut used_a = vec![false; a.len()];
    let mut used_b = vec![false; b.len()];
    let mut out = Vec::new();
    for (_, i, j) in candidates {
        if !used_a[i] && !used_b[j] {
            used_a[i] = true;
            used_b[j] = true;
            out.push((i, j));
        }
    }
    out.sort_unstable();
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SequenceOptions {
    pub intrinsics: Intrinsics,
    pub max_dt: f64,
}

impl Default for SequenceOptions {
    fn default() -> Self {
        Self {
            intrinsics: Intrinsics::FREIBURG,
            max_dt: DEFAULT_MAX_DT,
        }
    }
}

/// One downloadable sequence archive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub url: String,
    /// Hex digest of the archive, when known.
    #[serde(default)]
    pub sha256: Option<String>,
    pub intrinsics: Intrinsics,
}

/// List of public sequences that can be fetched and run locally.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct DatasetManifest {
    pub sequences: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn from_toml(text: &str) -> Result<Self> {
        let m: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        for e in &m.sequences {
            e.intrinsics.validate()?;
        }
        Ok(m)
    }

    pub fn get(&self, name: &str) -> Option<&ManifestEntry> {
        self.sequences.iter().find(|e| e.name == name)
    }

    /// Options for reading an extracted copy of `name`.
    pub fn options(&self, name: &str) -> Option<SequenceOptions> {
        self.get(name).map(|e| SequenceOptions {
            intrinsics: e.intrinsics,
            max_dt: DEFAULT_MAX_DT,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DepthEntry {
    pub timestamp: f64,
    pub path: PathBuf,
}

/// Parsed layout of a TUM RGB-D sequence directory.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceIndex {
    pub root: PathBuf,
    pub depth: Vec<DepthEntry>,
    pub groundtruth: Trajectory,
    /// (depth index, ground-truth index) pairs, sorted by depth index.
    pub associations: Vec<(usize, usize)>,
    pub intrinsics: Intrinsics,
}

impl SequenceIndex {
    pub fn read_depth(&self, depth_index: usize) -> Result<DepthImage> {
        read_depth_png(&self.depth[depth_index].path, self.intrinsics)
    }
}

fn malformed(path: &Path, reason: impl Into<String>) -> Error {
    Error::MalformedSequence {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

fn parse_depth_list(root: &Path, list: &Path) -> Result<Vec<DepthEntry>> {
    let text = fs::read_to_string(list).map_err(|e| malformed(list, e.to_string()))?;
    let mut out: Vec<DepthEntry> = Vec::new();
    for (k, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut it = line.split_whitespace();
        let (Some(ts), Some(file), None) = (it.next(), it.next(), it.next()) else {
            return Err(Error::ParseError {
                line: k + 1,
                reason: "expected `timestamp filename`".into(),
            });
        };
        let timestamp: f64 = ts.parse().map_err(|e| Error::ParseError {
            line: k + 1,
            reason: format!("`{ts}`: {e}"),
        })?;
        if out.last().is_some_and(|p| !(timestamp > p.timestamp)) {
            return Err(Error::ParseError {
                line: k + 1,
                reason: format!("timestamp {timestamp} does not increase"),
            });
        }
        out.push(DepthEntry {
            timestamp,
            path: root.join(file),
        });
    }
    Ok(out)
}

/// Indexes a TUM sequence directory holding `depth.txt` and `groundtruth.txt`.
pub fn load_tum_sequence(root: &Path, opts: &SequenceOptions) -> Result<SequenceIndex> {
    opts.intrinsics.validate()?;
    if !root.is_dir() {
        return Err(malformed(root, "not a directory"));
    }
    let depth_list = root.join("depth.txt");
    let gt_file = root.join("groundtruth.txt");
    for f in [&depth_list, &gt_file] {
        if !f.is_file() {
            return Err(malformed(f, "missing file"));
        }
    }
    let depth = parse_depth_list(root, &depth_list)?;
    let groundtruth = load_trajectory(&gt_file)?;
    let dts: Vec<f64> = depth.iter().map(|d| d.timestamp).collect();
    let associations = associate(&dts, &groundtruth.timestamps(), opts.max_dt);
    Ok(SequenceIndex {
        root: root.to_path_buf(),
        depth,
        groundtruth,
        associations,
        intrinsics: opts.intrinsics,
    })
}

pub fn encode_depth(d: f64) -> u16 {
    if d > 0.0 && d.is_finite() {
        (d * DEPTH_SCALE).round().clamp(0.0, u16::MAX as f64) as u16
    } else {
        0
    }
}

pub fn decode_depth(raw: u16) -> f64 {
    raw as f64 / DEPTH_SCALE
}

pub fn read_depth_png(path: &Path, intrinsics: Intrinsics) -> Result<DepthImage> {
    let img = image::ImageReader::open(path)?.decode()?;
    let image::DynamicImage::ImageLuma16(buf) = img else {
        return Err(malformed(path, "depth image is not 16-bit single channel"));
    };
    let (w, h) = (buf.width() as usize, buf.height() as usize);
    let depths = buf.as_raw().iter().map(|&r| decode_depth(r)).collect();
    DepthImage::new(w, h, depths, intrinsics)
}

pub fn write_depth_png(d: &DepthImage, path: &Path) -> Result<()> {
    let raw: Vec<u16> = d.depths.iter().map(|&z| encode_depth(z)).collect();
    let buf: ImageBuffer<Luma<u16>, Vec<u16>> = ImageBuffer::from_raw(d.width as u32, d.height as u32, raw)
        .ok_or_else(|| Error::InvalidInput("depth buffer does not match its size".into()))?;
    buf.save_with_format(path, image::ImageFormat::Png)?;
    Ok(())
}

/// Ray-cast depth frames with exact ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSequence {
    pub frames: Vec<DepthImage>,
    pub truth: Trajectory,
    pub camera: CameraModel,
}

pub const SYNTH_FRAME_RATE: f64 = 30.0;

/// Renders `scene` from every pose of `motion` at 30 frames per second.
pub fn synth_sequence(scene: &SceneSpec, motion: &[RigidTransform], camera: &CameraModel) -> Result<SyntheticSequence> {
    scene.validate()?;
    camera.intrinsics.validate()?;
    let frames: Vec<DepthImage> = motion.iter().map(|p| render_depth(scene, p, camera)).collect();
    if frames.iter().any(|f| f.valid_count(f64::INFINITY) == 0) {
        return Err(Error::EmptyFrame);
    }
    let ts: Vec<f64> = (0..motion.len()).map(|k| k as f64 / SYNTH_FRAME_RATE).collect();
    Ok(SyntheticSequence {
        frames,
        truth: Trajectory::from_poses(&ts, motion)?,
        camera: *camera,
    })
}

impl SyntheticSequence {
    /// Writes the sequence in TUM layout (`depth/`, `depth.txt`,
    /// `groundtruth.txt`).
    pub fn write_tum(&self, root: &Path) -> Result<()> {
        fs::create_dir_all(root.join("depth"))?;
        let mut list = String::from("# timestamp filename\n");
        for (frame, entry) in self.frames.iter().zip(self.truth.entries()) {
            let name = format!("depth/{:.6}.png", entry.timestamp);
            write_depth_png(frame, &root.join(&name))?;
            writeln!(list, "{:.6} {name}", entry.timestamp).expect("writing to a String cannot fail");
        }
        fs::write(root.join("depth.txt"), list)?;
        save_trajectory(&self.truth, &root.join("groundtruth.txt"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::{orbit_poses, scene_by_name};
    use crate::geom::exp_so3;
    use proptest::prelude::*;

    #[test]
    fn depth_scale() {
        assert_eq!(decode_depth(5000), 1.0);
        assert_eq!(encode_depth(1.0), 5000);
        assert_eq!(encode_depth(0.0), 0);
        assert_eq!(encode_depth(f64::NAN), 0);
    }

    proptest! {
        #[test]
        fn depth_codec_within_quantum(d in 1e-4f64..13.1) {
            prop_assert!((decode_depth(encode_depth(d)) - d).abs() <= 1.0 / DEPTH_SCALE);
        }

        #[test]
        fn trajectory_round_trip(poses in prop::collection::vec(
            (prop::array::uniform3(-3.0f64..3.0), prop::array::uniform3(-10.0f64..10.0)), 1..100)) {
            let ts: Vec<f64> = (0..poses.len()).map(|k| 1000.0 + k as f64 * 0.033).collect();
            let ps: Vec<RigidTransform> = poses
                .iter()
                .map(|(r, t)| RigidTransform::new(exp_so3(&Vector3::from(*r)), Vector3::from(*t)))
                .collect();
            let traj = Trajectory::from_poses(&ts, &ps).unwrap();
            let back = Trajectory::parse(&traj.to_tum_string()).unwrap();
            prop_assert_eq!(back.len(), traj.len());
            for (a, b) in traj.entries().iter().zip(back.entries()) {
                prop_assert!((a.timestamp - b.timestamp).abs() <= 1e-6);
                prop_assert!((a.pose.translation - b.pose.translation).amax() <= 1e-6);
                prop_assert!((a.pose.rotation - b.pose.rotation).amax() <= 1e-6);
            }
        }
    }

    #[test]
    fn parse_identity_and_comments() {
        let t = Trajectory::parse("# header\n\n1.0 0 0 0 0 0 0 1\n# mid\n2.0 1 2 3 0 0 0 1\n").unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!(t.entries()[0].pose.rotation, nalgebra::Matrix3::identity());
        assert_eq!(t.entries()[1].pose.translation, Vector3::new(1.0, 2.0, 3.0));
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        match Trajectory::parse("# c\n1.0 0 0 0 0 0 0 1\n2.0 0 0 0 0 0 1\n") {
            Err(Error::ParseError { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        match Trajectory::parse("1.0 0 0 x 0 0 0 1\n") {
            Err(Error::ParseError { line, .. }) => assert_eq!(line, 1),
            other => panic!("{other:?}"),
        }
        assert!(Trajectory::parse("2.0 0 0 0 0 0 0 1\n1.0 0 0 0 0 0 0 1\n").is_err());
        assert!(Trajectory::parse("1.0 0 0 0 0 0 0 0\n").is_err());
    }

    #[test]
    fn association_rules() {
        let a = [0.0, 0.033, 0.066, 0.5];
        let b = [0.001, 0.030, 0.035, 0.07, 0.2];
        let m = associate(&a, &b, 0.02);
        assert_eq!(m, vec![(0, 0), (1, 2), (2, 3)]);
        let mut used: Vec<usize> = m.iter().map(|p| p.1).collect();
        used.dedup();
        assert_eq!(used.len(), m.len());
        assert!(associate(&a, &[], 0.02).is_empty());
    }

    #[test]
    fn missing_files_are_malformed() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            load_tum_sequence(dir.path(), &SequenceOptions::default()),
            Err(Error::MalformedSequence { .. })
        ));
    }

    #[test]
    fn synthetic_sequence_round_trips_through_tum_layout() {
        let scene = scene_by_name("desk").unwrap();
        let cam = CameraModel::bench();
        let seq = synth_sequence(&scene, &orbit_poses(&scene, 4, 1.0, 0.02), &cam).unwrap();
        let dir = tempfile::tempdir().unwrap();
        seq.write_tum(dir.path()).unwrap();
        let idx = load_tum_sequence(
            dir.path(),
            &SequenceOptions {
                intrinsics: cam.intrinsics,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(idx.associations, vec![(0, 0), (1, 1), (2, 2), (3, 3)]);
        for (k, frame) in seq.frames.iter().enumerate() {
            let back = idx.read_depth(k).unwrap();
            assert_eq!(back.width, frame.width);
            for (a, b) in back.depths.iter().zip(&frame.depths) {
                assert_eq!(*a, decode_depth(encode_depth(*b)));
            }
        }
        for (a, b) in idx.groundtruth.entries().iter().zip(seq.truth.entries()) {
            assert!((a.pose.translation - b.pose.translation).amax() < 1e-9);
        }
    }

    #[test]
    fn empty_view_is_rejected() {
        let scene = scene_by_name("desk").unwrap();
        let away = RigidTransform::from_translation(Vector3::new(100.0, 0.0, 0.0));
        assert!(matches!(
            synth_sequence(&scene, &[away], &CameraModel::bench()),
            Err(Error::EmptyFrame)
        ));
    }

    #[test]
    fn manifest_validates_intrinsics() {
        let good = r#"
[[sequences]]
name = "s"
url = "https://example.org/s.tgz"
intrinsics = { fx = 500.0, fy = 500.0, cx = 320.0, cy = 240.0 }
"#;
        let m = DatasetManifest::from_toml(good).unwrap();
        assert_eq!(m.get("s").unwrap().sha256, None);
        assert_eq!(m.options("s").unwrap().intrinsics.cx, 320.0);
        assert!(m.get("other").is_none());
        let bad = good.replace("fx = 500.0", "fx = -1.0");
        assert!(DatasetManifest::from_toml(&bad).is_err());
    }
}
