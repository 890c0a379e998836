//! Coarse-to-fine point-to-plane registration with optional orientation
//! seeding, median filtering and median-based convergence control.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::correspond::{
    build_histogram_partitioned, median_band, median_filter, median_from_cdf, normal_shoot, CorrespondenceSet,
    ShootConfig,
};
use crate::error::{Error, Result};
use crate::geom::{geodesic_distance, orthonormalize, small_angle_transform, RigidTransform, UnitQuaternion};
use crate::pyramid::{CloudPyramid, PyramidConfig};
use crate::solver::{build_normal_equations_partitioned, pointwise_residual, solve_regularized_with, Lambda, Regularizer};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IcpMode {
    /// Run exactly `cadence[level]` iterations per level.
    FixedCadence,
    /// Iterate until the median distance settles, up to `max_iters_per_level`.
    MedianConvergence,
}

/// Distance histogram layout at the finest level; the range doubles on
/// every coarser level while the bin count stays fixed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistogramConfig {
    pub bins: usize,
    pub range: f64,
}

impl Default for HistogramConfig {
    fn default() -> Self {
        Self { bins: 512, range: 0.5 }
    }
}

impl HistogramConfig {
    pub fn range_at(&self, level: usize) -> f64 {
        self.range * f64::powi(2.0, level as i32)
    }

    pub fn bin_width_at(&self, level: usize) -> f64 {
        self.range_at(level) / self.bins as f64
    }
}

/// Registration settings. Per-level vectors run coarse to fine.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IcpConfig {
    pub mode: IcpMode,
    pub cadence: Vec<usize>,
    pub max_iters_per_level: usize,
    pub convergence_patience: usize,
    pub lambda: Lambda,
    pub filter_enabled: bool,
    /// MAD multiplier of the median filter band.
    pub kappa: f64,
    pub histogram: HistogramConfig,
    pub max_dist: Vec<f64>,
    pub normal_gate_deg: Option<f64>,
    pub rcond: f64,
    pub partitions: usize,
    pub pyramid: PyramidConfig,
}

impl Default for IcpConfig {
    fn default() -> Self {
        Self::seeded_convergent()
    }
}

impl IcpConfig {
    /// Plain coarse-to-fine ICP with the (10, 5, 4) cadence, no filter and
    /// no regularization.
    pub fn baseline() -> Self {
        Self {
            mode: IcpMode::FixedCadence,
            cadence: vec![10, 5, 4],
            max_iters_per_level: 50,
            convergence_patience: 3,
            lambda: Lambda::Constant(0.0),
            filter_enabled: false,
            kappa: 3.0,
            histogram: HistogramConfig::default(),
            max_dist: vec![0.4, 0.2, 0.1],
            normal_gate_deg: Some(60.0),
            rcond: crate::solver::DEFAULT_RCOND,
            partitions: crate::solver::DEFAULT_PARTITIONS,
            pyramid: PyramidConfig::default(),
        }
    }

    /// Seeded variant on the reduced (3, 2, 2) cadence.
    pub fn seeded_fixed() -> Self {
        Self {
            cadence: vec![3, 2, 2],
            lambda: Lambda::Constant(5.0),
            filter_enabled: true,
            ..Self::baseline()
        }
    }

    /// Seeded variant with median filtering and median convergence.
    pub fn seeded_convergent() -> Self {
        Self {
            mode: IcpMode::MedianConvergence,
            ..Self::seeded_fixed()
        }
    }

    pub fn with_lambda(mut self, lambda: f64) -> Self {
        self.lambda = Lambda::Constant(lambda);
        self
    }

    pub fn levels(&self) -> usize {
        self.cadence.len()
    }

    pub fn validate(&self) -> Result<()> {
        let levels = self.pyramid.levels;
        if self.cadence.len() != levels || self.max_dist.len() != levels {
            return Err(Error::Config(format!(
                "cadence ({}) and max_dist ({}) must have one entry per pyramid level ({levels})",
                self.cadence.len(),
                self.max_dist.len()
            )));
        }
        if self.convergence_patience == 0 {
            return Err(Error::Config("convergence_patience must be at least 1".into()));
        }
        if self.max_iters_per_level == 0 {
            return Err(Error::Config("max_iters_per_level must be at least 1".into()));
        }
        if self.histogram.bins == 0 || !(self.histogram.range > 0.0) {
            return Err(Error::Config("histogram needs bins > 0 and range > 0".into()));
        }
        if self.max_dist.iter().any(|&d| !(d > 0.0)) {
            return Err(Error::Config("max_dist entries must be positive".into()));
        }
        let lambda = match self.lambda {
            Lambda::Constant(l) | Lambda::PerPair(l) => l,
        };
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(Error::Config(format!("lambda must be finite and non-negative, got {lambda}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationRecord {
    /// Pyramid level, 0 = finest.
    pub level: usize,
    pub iter: usize,
    pub median: f64,
    pub kept_fraction: f64,
    pub rms_residual: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IcpResult {
    /// Maps source coordinates to target coordinates.
    pub transform: RigidTransform,
    pub converged: bool,
    pub tracking_lost: bool,
    /// Coarse to fine.
    pub iterations_per_level: Vec<usize>,
    pub final_median: Option<f64>,
    pub kept_fraction_history: Vec<f64>,
    pub residual_history: Vec<f64>,
    pub trace: Vec<IterationRecord>,
}

impl IcpResult {
    pub fn total_iterations(&self) -> usize {
        self.iterations_per_level.iter().sum()
    }

    /// Medians recorded at pyramid `level`.
    pub fn medians_at(&self, level: usize) -> Vec<f64> {
        self.trace.iter().filter(|r| r.level == level).map(|r| r.median).collect()
    }
}

/// True once the last `patience + 1` medians lie within one bin width of
/// each other.
///
/// Medians are bin centers, so this admits a one-bin jitter: the filtered
/// estimate can settle into a 2-cycle straddling a bin edge.
pub fn median_converged(medians: &[f64], patience: usize, bin_width: f64) -> bool {
    if medians.len() < patience + 1 {
        return false;
    }
    let tail = &medians[medians.len() - patience - 1..];
    let lo = tail.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = tail.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    hi - lo <= bin_width * (1.0 + 1e-9)
}

/// Absolute pose seed from two orientation readings.
///
/// `extrinsic` rotates IMU-frame vectors into the camera frame. The seed
/// keeps the previous position: orientation sensors say nothing about it.
pub fn seed_from_imu(
    prev_pose: &RigidTransform,
    imu_prev: &UnitQuaternion,
    imu_curr: &UnitQuaternion,
    extrinsic: &RigidTransform,
) -> RigidTransform {
    prev_pose.compose(&RigidTransform::from_rotation(imu_delta(imu_prev, imu_curr, extrinsic)))
}

/// Camera-frame rotation between two orientation readings.
pub fn imu_delta(
    imu_prev: &UnitQuaternion,
    imu_curr: &UnitQuaternion,
    extrinsic: &RigidTransform,
) -> nalgebra::Matrix3<f64> {
    let e = extrinsic.rotation;
    e * imu_prev.to_matrix().transpose() * imu_curr.to_matrix() * e.transpose()
}

struct Step {
    median: f64,
    kept_fraction: f64,
    rms: f64,
    update: RigidTransform,
}

fn iterate_once(
    source: &crate::pyramid::OrganizedCloud,
    target: &crate::pyramid::OrganizedCloud,
    estimate: &RigidTransform,
    level: usize,
    level_idx: usize,
    cfg: &IcpConfig,
) -> Result<Step> {
    let bw = cfg.histogram.bin_width_at(level);
    let shoot = ShootConfig {
        step_len: bw,
        max_dist: cfg.max_dist[level_idx],
        normal_gate_deg: cfg.normal_gate_deg,
    };
    let pairs = normal_shoot(source, target, estimate, &shoot)?;
    let hist = build_histogram_partitioned(&pairs, bw, cfg.histogram.range_at(level), cfg.partitions)?;
    let median = median_from_cdf(&hist)?;
    let (set, kept_fraction): (CorrespondenceSet, f64) = if cfg.filter_enabled {
        let band = median_band(&hist, median, cfg.kappa)?;
        let out = median_filter(&pairs, median, band)?;
        (out.set, out.kept_fraction)
    } else {
        (pairs, 1.0)
    };
    let ne = build_normal_equations_partitioned(&set, cfg.partitions);
    let x = solve_regularized_with(&ne, &Regularizer { lambda: cfg.lambda }, cfg.rcond)?;
    if !x.is_finite() {
        return Err(Error::DegenerateSystem);
    }
    let rms = pointwise_residual(&set, &x).rms;
    let update = orthonormalize(&small_angle_transform(&x))?;
    Ok(Step {
        median,
        kept_fraction,
        rms,
        update,
    })
}

/// Registers `source` onto `target`, starting from `seed` (source to target).
pub fn register(source: &CloudPyramid, target: &CloudPyramid, seed: &RigidTransform, cfg: &IcpConfig) -> Result<IcpResult> {
    if source.len() != target.len() {
        return Err(Error::InvalidInput(format!(
            "pyramid level counts differ ({} vs {})",
            source.len(),
            target.len()
        )));
    }
    if source.len() != cfg.levels() {
        return Err(Error::Config(format!(
            "config describes {} levels, pyramids have {}",
            cfg.levels(),
            source.len()
        )));
    }
    cfg.validate()?;

    let levels = source.len();
    let mut estimate = *seed;
    let mut result = IcpResult {
        transform: estimate,
        converged: false,
        tracking_lost: false,
        iterations_per_level: vec![0; levels],
        final_median: None,
        kept_fraction_history: Vec::new(),
        residual_history: Vec::new(),
        trace: Vec::new(),
    };

    for level_idx in 0..levels {
        let level = levels - 1 - level_idx;
        let finest = level == 0;
        let bw = cfg.histogram.bin_width_at(level);
        let budget = match cfg.mode {
            IcpMode::FixedCadence => cfg.cadence[level_idx],
            IcpMode::MedianConvergence => cfg.max_iters_per_level,
        };
        let mut medians = Vec::new();
        let mut settled = false;
        for iter in 0..budget {
            result.iterations_per_level[level_idx] += 1;
            let step = match iterate_once(&source.levels[level], &target.levels[level], &estimate, level, level_idx, cfg) {
                Ok(s) => s,
                Err(
                    Error::NoCorrespondences
                    | Error::AllPairsRejected
                    | Error::EmptyHistogram
                    | Error::DegenerateSystem
                    | Error::DegenerateRotation,
                ) => {
                    if finest {
                        result.tracking_lost = true;
                    }
                    break;
                }
                Err(e) => return Err(e),
            };
            estimate = step.update.compose(&estimate);
            medians.push(step.median);
            result.kept_fraction_history.push(step.kept_fraction);
            result.residual_history.push(step.rms);
            result.trace.push(IterationRecord {
                level,
                iter,
                median: step.median,
                kept_fraction: step.kept_fraction,
                rms_residual: step.rms,
            });
            if finest {
                result.final_median = Some(step.median);
            }
            settled = median_converged(&medians, cfg.convergence_patience, bw);
            if cfg.mode == IcpMode::MedianConvergence && settled {
                break;
            }
        }
        if finest {
            result.converged = settled && !result.tracking_lost;
        }
    }
    result.transform = estimate;
    Ok(result)
}

/// Failure judgment against a known motion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FailureTolerance {
    pub rot_deg: f64,
    pub trans_m: f64,
}

impl Default for FailureTolerance {
    fn default() -> Self {
        Self {
            rot_deg: 5.0,
            trans_m: 0.05,
        }
    }
}

/// Rotation and translation error of `estimate` against `truth`.
pub fn pose_error(estimate: &RigidTransform, truth: &RigidTransform) -> (f64, f64) {
    let rot = geodesic_distance(&estimate.rotation, &truth.rotation).to_degrees();
    let trans = (estimate.translation - truth.translation).norm();
    (rot, trans)
}

/// A run fails when it lost tracking or lands outside the tolerance.
pub fn classify_failure(result: &IcpResult, truth: &RigidTransform, tol: &FailureTolerance) -> bool {
    let (rot, trans) = pose_error(&result.transform, truth);
    result.tracking_lost || rot > tol.rot_deg || trans > tol.trans_m
}

pub fn write_trace_csv<W: Write>(records: &[IterationRecord], mut out: W) -> std::io::Result<()> {
    writeln!(out, "level,iter,median,kept_fraction,rms_residual")?;
    for r in records {
        writeln!(
            out,
            "{},{},{:.9},{:.6},{:.9}",
            r.level, r.iter, r.median, r.kept_fraction, r.rms_residual
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::{render_depth, scene_by_name, CameraModel};
    use crate::geom::exp_so3;
    use crate::pyramid::build_pyramid;
    use nalgebra::Vector3;
    use proptest::prelude::*;

    fn pyramid_at(scene: &str, pose: &RigidTransform) -> CloudPyramid {
        let s = scene_by_name(scene).unwrap();
        let d = render_depth(&s, pose, &CameraModel::bench());
        build_pyramid(&d, &PyramidConfig::default()).unwrap()
    }

    #[test]
    fn convergence_rule_on_constructed_sequences() {
        let bw = 0.001;
        assert!(!median_converged(&[0.0105, 0.0105, 0.0105], 3, bw));
        assert!(median_converged(&[0.0105, 0.0105, 0.0105, 0.0105], 3, bw));
        assert!(median_converged(&[0.05, 0.0205, 0.0205, 0.0205, 0.0205], 3, bw));
        assert!(median_converged(&[0.0205, 0.0215, 0.0205, 0.0215], 3, bw));
        assert!(!median_converged(&[0.0205, 0.0205, 0.0225, 0.0205], 3, bw));
        assert!(!median_converged(&[0.0105, 0.0115, 0.0125, 0.0125], 3, bw));
        assert!(!median_converged(&[0.0105, 0.0105, 0.0105, 0.0135], 3, bw));
        assert!(median_converged(&[0.3, 0.3], 1, bw));
        assert!(!median_converged(&[], 1, bw));
    }

    #[test]
    fn presets_and_validation() {
        assert_eq!(IcpConfig::baseline().cadence.iter().sum::<usize>(), 19);
        assert_eq!(IcpConfig::seeded_fixed().cadence.iter().sum::<usize>(), 7);
        for c in [IcpConfig::baseline(), IcpConfig::seeded_fixed(), IcpConfig::seeded_convergent()] {
            c.validate().unwrap();
        }
        let mut bad = IcpConfig::baseline();
        bad.cadence.pop();
        assert!(bad.validate().is_err());
        let mut bad = IcpConfig::baseline();
        bad.convergence_patience = 0;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn seed_trivial_cases() {
        let prev = RigidTransform::new(exp_so3(&Vector3::new(0.1, -0.2, 0.3)), Vector3::new(1.0, 2.0, 3.0));
        let q = UnitQuaternion::from_rotation_vector(&Vector3::new(0.3, 0.1, -0.4));
        let s = seed_from_imu(&prev, &q, &q, &RigidTransform::identity());
        assert!((s.rotation - prev.rotation).norm() < 1e-12);
        assert_eq!(s.translation, prev.translation);

        let q2 = q.mul(&UnitQuaternion::from_axis_angle(&Vector3::z(), 30f64.to_radians()));
        let s = seed_from_imu(&prev, &q, &q2, &RigidTransform::identity());
        let rel = prev.rotation.transpose() * s.rotation;
        assert!((rel - crate::geom::rot_z(30f64.to_radians())).norm() < 1e-9);
    }

    proptest! {
        #[test]
        fn seed_extrinsic_conjugation(
            e in prop::array::uniform3(-2.0f64..2.0),
            a in prop::array::uniform3(-2.0f64..2.0),
            b in prop::array::uniform3(-2.0f64..2.0),
        ) {
            let ext = RigidTransform::from_rotation(exp_so3(&Vector3::from(e)));
            let qa = UnitQuaternion::from_rotation_vector(&Vector3::from(a));
            let qb = UnitQuaternion::from_rotation_vector(&Vector3::from(b));
            let s = seed_from_imu(&RigidTransform::identity(), &qa, &qb, &ext);
            let back = ext.rotation.transpose() * s.rotation * ext.rotation;
            let raw = qa.to_matrix().transpose() * qb.to_matrix();
            prop_assert!((back - raw).norm() < 1e-9);
        }

        #[test]
        fn failure_tolerance_is_monotone(deg in 0.0f64..20.0, t in 0.0f64..0.2, tol_a in 0.0f64..10.0, tol_b in 0.0f64..10.0) {
            let truth = RigidTransform::identity();
            let r = IcpResult {
                transform: RigidTransform::new(crate::geom::rot_x(deg.to_radians()), Vector3::new(t, 0.0, 0.0)),
                converged: true,
                tracking_lost: false,
                iterations_per_level: vec![],
                final_median: None,
                kept_fraction_history: vec![],
                residual_history: vec![],
                trace: vec![],
            };
            let (lo, hi) = if tol_a < tol_b { (tol_a, tol_b) } else { (tol_b, tol_a) };
            let strict = FailureTolerance { rot_deg: lo, trans_m: lo * 0.01 };
            let loose = FailureTolerance { rot_deg: hi, trans_m: hi * 0.01 };
            if classify_failure(&r, &truth, &loose) {
                prop_assert!(classify_failure(&r, &truth, &strict));
            }
        }
    }

    #[test]
    fn classify_trivial() {
        let truth = RigidTransform::new(crate::geom::rot_y(0.2), Vector3::new(0.01, 0.0, 0.0));
        let mut r = IcpResult {
            transform: truth,
            converged: true,
            tracking_lost: false,
            iterations_per_level: vec![],
            final_median: None,
            kept_fraction_history: vec![],
            residual_history: vec![],
            trace: vec![],
        };
        assert!(!classify_failure(&r, &truth, &FailureTolerance::default()));
        r.transform = RigidTransform::new(crate::geom::rot_y(0.2 + 10f64.to_radians()), truth.translation);
        assert!(classify_failure(&r, &truth, &FailureTolerance::default()));
    }

    #[test]
    fn identical_frames_are_a_fixpoint() {
        let pose = scene_by_name("corner").unwrap().nominal_pose();
        let p = pyramid_at("corner", &pose);
        let cfg = IcpConfig::seeded_convergent().with_lambda(0.0);
        let r = register(&p, &p, &RigidTransform::identity(), &cfg).unwrap();
        assert!(r.converged);
        assert!(r.transform.rotation_angle() < 1e-6);
        assert!(r.transform.translation.norm() < 1e-6);
        for &n in &r.iterations_per_level {
            assert!(n <= cfg.convergence_patience + 1);
        }
    }

    fn corner_pair(rot_deg: f64, axis: Vector3<f64>, shift: Vector3<f64>) -> (CloudPyramid, CloudPyramid, RigidTransform) {
        let scene = scene_by_name("corner").unwrap();
        let base = scene.nominal_pose();
        let tgt_pose = base;
        let src_pose = base.compose(&RigidTransform::new(exp_so3(&(axis.normalize() * rot_deg.to_radians())), shift));
        let truth = tgt_pose.inverse().compose(&src_pose);
        (pyramid_at("corner", &src_pose), pyramid_at("corner", &tgt_pose), truth)
    }

    #[test]
    fn seeded_ten_degrees_recovers_motion() {
        let (src, tgt, truth) = corner_pair(10.0, Vector3::new(0.2, -1.0, 0.1), Vector3::new(0.03, -0.03, 0.03));
        let seed = RigidTransform::from_rotation(truth.rotation);
        let r = register(&src, &tgt, &seed, &IcpConfig::seeded_convergent().with_lambda(0.0)).unwrap();
        let (rot, trans) = pose_error(&r.transform, &truth);
        assert!(rot < 0.5 && trans < 0.005, "rot {rot} deg, trans {trans} m");
    }

    #[test]
    fn forty_degrees_needs_the_seed() {
        let scene = scene_by_name("corner").unwrap();
        let trial = crate::bench::trial_generator(&scene, 40.0, 40_000, &Default::default()).unwrap();
        let src = build_pyramid(&trial.source, &PyramidConfig::default()).unwrap();
        let tgt = build_pyramid(&trial.target, &PyramidConfig::default()).unwrap();
        let truth = trial.truth;
        let plain = register(&src, &tgt, &RigidTransform::identity(), &IcpConfig::baseline()).unwrap();
        assert!(pose_error(&plain.transform, &truth).0 > 5.0);
        let seed = RigidTransform::from_rotation(truth.rotation);
        let seeded = register(&src, &tgt, &seed, &IcpConfig::seeded_convergent()).unwrap();
        assert!(pose_error(&seeded.transform, &truth).0 < 1.0);
    }

    #[test]
    fn seeding_saves_iterations() {
        let (src, tgt, truth) = corner_pair(12.0, Vector3::new(0.1, -1.0, 0.05), Vector3::new(0.02, 0.0, 0.01));
        let cfg = IcpConfig::seeded_convergent().with_lambda(0.0);
        let seeded = register(&src, &tgt, &RigidTransform::from_rotation(truth.rotation), &cfg).unwrap();
        let plain = register(&src, &tgt, &RigidTransform::identity(), &cfg).unwrap();
        assert!(seeded.total_iterations() < plain.total_iterations());
    }

    #[test]
    fn strong_lambda_pins_rotation() {
        let (src, tgt, truth) = corner_pair(8.0, Vector3::new(0.0, -1.0, 0.2), Vector3::new(0.02, 0.01, 0.0));
        let off = exp_so3(&Vector3::new(0.0, 0.03, 0.02)) * truth.rotation;
        let seed = RigidTransform::from_rotation(off);
        let r = register(&src, &tgt, &seed, &IcpConfig::seeded_convergent().with_lambda(1e4)).unwrap();
        assert!(geodesic_distance(&r.transform.rotation, &off).to_degrees() <= 0.1);
    }

    #[test]
    fn deterministic_and_traced() {
        let (src, tgt, truth) = corner_pair(6.0, Vector3::new(0.3, -1.0, 0.0), Vector3::new(0.01, 0.01, 0.01));
        let seed = RigidTransform::from_rotation(truth.rotation);
        let cfg = IcpConfig::seeded_convergent();
        let a = register(&src, &tgt, &seed, &cfg).unwrap();
        let b = register(&src, &tgt, &seed, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.trace.len(), a.residual_history.len());
        let mut buf = Vec::new();
        write_trace_csv(&a.trace, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("level,iter,median,kept_fraction,rms_residual\n"));
        assert_eq!(text.lines().count(), a.trace.len() + 1);
        if a.converged {
            let bw = cfg.histogram.bin_width_at(0);
            assert!(median_converged(&a.medians_at(0), cfg.convergence_patience, bw));
        }
    }

    #[test]
    fn fixed_cadence_counts() {
        let (src, tgt, truth) = corner_pair(3.0, Vector3::new(0.0, -1.0, 0.0), Vector3::new(0.01, 0.0, 0.0));
        let seed = RigidTransform::from_rotation(truth.rotation);
        let r = register(&src, &tgt, &seed, &IcpConfig::seeded_fixed()).unwrap();
        assert_eq!(r.iterations_per_level, vec![3, 2, 2]);
        let r = register(&src, &tgt, &RigidTransform::identity(), &IcpConfig::baseline()).unwrap();
        assert_eq!(r.iterations_per_level, vec![10, 5, 4]);
    }
}
