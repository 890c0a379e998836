//! Reproducible experiment drivers behind the command-line verbs.
//!
//! Every command is a pure function of its configuration, input files and
//! seed. Wall-clock timings are returned to the caller for display but never
//! written to output files, so reruns produce identical bytes.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bench::{orbit_poses, scene_by_name, trial_generator, CameraModel, SceneSpec, TrialConfig};
use crate::dataset::{load_trajectory, load_tum_sequence, synth_sequence, SequenceIndex, SequenceOptions, SyntheticSequence, Trajectory, TrajectoryEntry};
use crate::error::{Error, Result};
use crate::eval::{ate, compare_report, rpe, trajectory_svg, AteReport, ComparisonReport, RpeDelta, RpeReport};
use crate::geom::{RigidTransform, UnitQuaternion};
use crate::icp::{classify_failure, imu_delta, pose_error, register, FailureTolerance, IcpConfig, IcpMode, IterationRecord};
use crate::imu::{export_noisy, stream_from_trajectory, ImuNoiseModel, OrientationSample};
use crate::pyramid::{build_pyramid, DepthImage};

pub const EXIT_OK: u8 = 0;
pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_DATA: u8 = 3;
pub const EXIT_TRACKING_LOSS: u8 = 4;

/// Process exit code for an error.
pub fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::UnknownScene(_) | Error::InvalidInput(_) | Error::BadIntrinsics { .. } => EXIT_CONFIG,
        _ => EXIT_DATA,
    }
}

/// Synthetic orbit sequence around a scene's focus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSource {
    /// Builtin scene name, used when `scene_file` is absent.
    pub scene: String,
    pub scene_file: Option<PathBuf>,
    pub frames: usize,
    /// Orbit increment per frame (degrees).
    pub step_deg: f64,
    /// Vertical bob amplitude (m).
    pub bob: f64,
    pub camera: CameraModel,
    /// Depth noise standard deviation at 1 m; grows with depth squared.
    pub depth_noise: f64,
}

impl Default for SyntheticSource {
    fn default() -> Self {
        Self {
            scene: "corner".into(),
            scene_file: None,
            frames: 60,
            step_deg: 0.75,
            bob: 0.03,
            camera: CameraModel::bench(),
            depth_noise: 0.0,
        }
    }
}

impl SyntheticSource {
    pub fn scene_spec(&self) -> Result<SceneSpec> {
        match &self.scene_file {
            Some(p) => SceneSpec::from_toml(&fs::read_to_string(p)?),
            None => scene_by_name(&self.scene),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SequenceSource {
    Tum {
        path: PathBuf,
        #[serde(default)]
        options: SequenceOptions,
    },
    Synthetic(SyntheticSource),
}

impl Default for SequenceSource {
    fn default() -> Self {
        SequenceSource::Synthetic(SyntheticSource::default())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum ImuMode {
    Off,
    #[default]
    GroundTruth,
    Noisy {
        #[serde(default)]
        model: ImuNoiseModel,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub sequence: SequenceSource,
    pub icp: IcpConfig,
    pub imu: ImuMode,
    /// IMU-to-camera rotation.
    pub extrinsic: RigidTransform,
    pub rpe_delta: RpeDelta,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            output_dir: PathBuf::from("out"),
            sequence: SequenceSource::default(),
            icp: IcpConfig::seeded_convergent(),
            imu: ImuMode::GroundTruth,
            extrinsic: RigidTransform::identity(),
            rpe_delta: RpeDelta::Frames(1),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run configs always serialize")
    }
}

/// Depth frames with their truth, either in memory or read lazily.
pub enum FrameSource {
    Synthetic(SyntheticSequence),
    Tum(SequenceIndex),
}

impl FrameSource {
    pub fn open(cfg: &RunConfig) -> Result<Self> {
        match &cfg.sequence {
            SequenceSource::Tum { path, options } => Ok(FrameSource::Tum(load_tum_sequence(path, options)?)),
            SequenceSource::Synthetic(s) => {
                let scene = s.scene_spec()?;
                let poses = orbit_poses(&scene, s.frames, s.step_deg, s.bob);
                let mut seq = synth_sequence(&scene, &poses, &s.camera)?;
                if s.depth_noise > 0.0 {
                    add_depth_noise(&mut seq.frames, s.depth_noise, cfg.seed)?;
                }
                Ok(FrameSource::Synthetic(seq))
            }
        }
    }

    pub fn len(&self) -> usize {
        match self {
            FrameSource::Synthetic(s) => s.frames.len(),
            FrameSource::Tum(t) => t.associations.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn timestamp(&self, k: usize) -> f64 {
        match self {
            FrameSource::Synthetic(s) => s.truth.entries()[k].timestamp,
            FrameSource::Tum(t) => t.depth[t.associations[k].0].timestamp,
        }
    }

    pub fn truth_pose(&self, k: usize) -> RigidTransform {
        match self {
            FrameSource::Synthetic(s) => s.truth.entries()[k].pose,
            FrameSource::Tum(t) => t.groundtruth.entries()[t.associations[k].1].pose,
        }
    }

    pub fn depth(&self, k: usize) -> Result<DepthImage> {
        match self {
            FrameSource::Synthetic(s) => Ok(s.frames[k].clone()),
            FrameSource::Tum(t) => t.read_depth(t.associations[k].0),
        }
    }

    /// Reference trajectory for evaluation.
    pub fn truth(&self) -> Trajectory {
        match self {
            FrameSource::Synthetic(s) => s.truth.clone(),
            FrameSource::Tum(t) => t.groundtruth.clone(),
        }
    }

    /// Truth poses at the frame timestamps.
    pub fn frame_truth(&self) -> Result<Trajectory> {
        Trajectory::new(
            (0..self.len())
                .map(|k| TrajectoryEntry {
                    timestamp: self.timestamp(k),
                    pose: self.truth_pose(k),
                })
                .collect(),
        )
    }
}

/// Zero-mean Gaussian depth noise with `sigma * z^2` deviation.
pub fn add_depth_noise(frames: &mut [DepthImage], sigma: f64, seed: u64) -> Result<()> {
    let normal = Normal::new(0.0, 1.0).map_err(|e| Error::Config(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_de97);
    for f in frames {
        for z in f.depths.iter_mut().filter(|z| **z > 0.0) {
            *z += sigma * *z * *z * normal.sample(&mut rng);
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameRecord {
    pub timestamp: f64,
    pub iterations: usize,
    pub converged: bool,
    pub tracking_lost: bool,
}

#[derive(Debug, Clone)]
pub struct OdometryRun {
    pub trajectory: Trajectory,
    pub frames: Vec<FrameRecord>,
    /// (frame index, record).
    pub trace: Vec<(usize, IterationRecord)>,
    pub orientations: Option<Vec<OrientationSample>>,
    pub tracking_losses: usize,
    pub skipped_frames: usize,
    /// Per registered frame; display only.
    pub elapsed_ms: Vec<f64>,
}

impl OdometryRun {
    pub fn mean_iterations(&self) -> f64 {
        let reg: Vec<_> = self.frames.iter().skip(1).collect();
        if reg.is_empty() {
            return 0.0;
        }
        reg.iter().map(|f| f.iterations as f64).sum::<f64>() / reg.len() as f64
    }

    pub fn mean_ms(&self) -> f64 {
        if self.elapsed_ms.is_empty() {
            0.0
        } else {
            self.elapsed_ms.iter().sum::<f64>() / self.elapsed_ms.len() as f64
        }
    }

    pub fn trace_csv(&self) -> String {
        let mut s = String::from("frame,level,iter,median,kept_fraction,rms_residual\n");
        for (k, r) in &self.trace {
            writeln!(
                s,
                "{k},{},{},{:.9},{:.6},{:.9}",
                r.level, r.iter, r.median, r.kept_fraction, r.rms_residual
            )
            .expect("writing to a String cannot fail");
        }
        s
    }
}

/// Frame-to-frame tracking. Frame `k` registers onto frame `k - 1`; on
/// tracking loss the previous pose is held.
pub fn run_odometry(source: &FrameSource, icp: &IcpConfig, imu: &ImuMode, extrinsic: &RigidTransform) -> Result<OdometryRun> {
    icp.validate()?;
    if source.is_empty() {
        return Err(Error::InvalidInput("sequence has no frames".into()));
    }
    let orientations = match imu {
        ImuMode::Off => None,
        ImuMode::GroundTruth => Some(stream_from_trajectory(&source.frame_truth()?, None)?),
        ImuMode::Noisy { model } => Some(stream_from_trajectory(&source.frame_truth()?, Some(model))?),
    };
    let orientation = |k: usize| -> Option<UnitQuaternion> { orientations.as_ref().map(|o| o[k].q) };

    let mut entries = Vec::with_capacity(source.len());
    let mut frames = Vec::with_capacity(source.len());
    let mut trace = Vec::new();
    let mut elapsed_ms = Vec::new();
    let (mut losses, mut skipped) = (0usize, 0usize);
    let mut prev: Option<(usize, crate::pyramid::CloudPyramid, RigidTransform)> = None;

    for k in 0..source.len() {
        let depth = match source.depth(k) {
            Ok(d) => d,
            Err(e @ (Error::Image(_) | Error::Io(_) | Error::MalformedSequence { .. })) => {
                eprintln!("warning: skipping frame {k}: {e}");
                skipped += 1;
                continue;
            }
            Err(e) => return Err(e),
        };
        let pyr = build_pyramid(&depth, &icp.pyramid)?;
        let timestamp = source.timestamp(k);
        let Some((pk, prev_pyr, prev_pose)) = prev.take() else {
            entries.push(TrajectoryEntry {
                timestamp,
                pose: RigidTransform::identity(),
            });
            frames.push(FrameRecord {
                timestamp,
                iterations: 0,
                converged: true,
                tracking_lost: false,
            });
            prev = Some((k, pyr, RigidTransform::identity()));
            continue;
        };
        let seed = match (orientation(pk), orientation(k)) {
            (Some(a), Some(b)) => RigidTransform::from_rotation(imu_delta(&a, &b, extrinsic)),
            _ => RigidTransform::identity(),
        };
        let t0 = Instant::now();
        let result = register(&pyr, &prev_pyr, &seed, icp)?;
        elapsed_ms.push(t0.elapsed().as_secs_f64() * 1e3);
        let pose = if result.tracking_lost {
            losses += 1;
            prev_pose
        } else {
            prev_pose.compose(&result.transform)
        };
        trace.extend(result.trace.iter().map(|r| (k, *r)));
        entries.push(TrajectoryEntry { timestamp, pose });
        frames.push(FrameRecord {
            timestamp,
            iterations: result.total_iterations(),
            converged: result.converged,
            tracking_lost: result.tracking_lost,
        });
        prev = Some((k, pyr, pose));
    }
    Ok(OdometryRun {
        trajectory: Trajectory::new(entries)?,
        frames,
        trace,
        orientations,
        tracking_losses: losses,
        skipped_frames: skipped,
        elapsed_ms,
    })
}

#[derive(Debug, Clone)]
pub struct OdometryReport {
    pub run: OdometryRun,
    pub ate: Option<AteReport>,
    pub rpe: Option<RpeReport>,
}

impl OdometryReport {
    /// Deterministic summary (no timings).
    pub fn summary(&self) -> String {
        let mut s = String::new();
        let r = &self.run;
        writeln!(s, "frames = {}", r.frames.len()).unwrap();
        writeln!(s, "mean_iterations = {:.6}", r.mean_iterations()).unwrap();
        writeln!(s, "tracking_losses = {}", r.tracking_losses).unwrap();
        writeln!(s, "skipped_frames = {}", r.skipped_frames).unwrap();
        if let Some(a) = &self.ate {
            writeln!(s, "ate_rmse_m = {:.9}", a.rmse).unwrap();
        }
        if let Some(p) = &self.rpe {
            writeln!(s, "rpe_rmse_m = {:.9}", p.rmse).unwrap();
        }
        s
    }
}

fn evaluate_run(run: &OdometryRun, truth: &Trajectory, delta: RpeDelta) -> (Option<AteReport>, Option<RpeReport>) {
    (ate(&run.trajectory, truth).ok(), rpe(&run.trajectory, truth, delta).ok())
}

/// `odometry`: writes `trajectory.txt`, `trace.csv`, `summary.txt`,
/// `trajectory.svg`, `groundtruth.txt` for synthetic sequences and, with an
/// orientation prior, `orientations.txt`.
pub fn cmd_odometry(cfg: &RunConfig) -> Result<OdometryReport> {
    let source = FrameSource::open(cfg)?;
    let run = run_odometry(&source, &cfg.icp, &cfg.imu, &cfg.extrinsic)?;
    let (ate, rpe) = evaluate_run(&run, &source.truth(), cfg.rpe_delta);
    let report = OdometryReport { run, ate, rpe };

    let out = &cfg.output_dir;
    fs::create_dir_all(out)?;
    crate::dataset::save_trajectory(&report.run.trajectory, &out.join("trajectory.txt"))?;
    if let FrameSource::Synthetic(seq) = &source {
        crate::dataset::save_trajectory(&seq.truth, &out.join("groundtruth.txt"))?;
    }
    fs::write(out.join("trace.csv"), report.run.trace_csv())?;
    fs::write(out.join("summary.txt"), report.summary())?;
    if let Some(o) = &report.run.orientations {
        export_noisy(&source.frame_truth()?, o, &out.join("orientations.txt"))?;
    }
    if let Some(a) = &report.ate {
        fs::write(out.join("trajectory.svg"), trajectory_svg(&report.run.trajectory, &source.truth(), a))?;
    }
    Ok(report)
}

/// One registration setup compared in an angle sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepEntry {
    pub name: String,
    pub icp: IcpConfig,
    /// Seed with the exact relative rotation.
    pub seeded: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AngleSweepConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub scene: String,
    pub angles: Vec<f64>,
    pub trials: usize,
    pub trial: TrialConfig,
    pub tolerance: FailureTolerance,
    pub configs: Vec<SweepEntry>,
}

impl Default for AngleSweepConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            output_dir: PathBuf::from("out"),
            scene: "corner".into(),
            angles: (1..=12).map(|k| 5.0 * k as f64).collect(),
            trials: 20,
            trial: TrialConfig::default(),
            tolerance: FailureTolerance::default(),
            configs: vec![
                SweepEntry {
                    name: "original".into(),
                    icp: IcpConfig::baseline(),
                    seeded: false,
                },
                SweepEntry {
                    name: "seeded".into(),
                    icp: IcpConfig::seeded_convergent(),
                    seeded: true,
                },
            ],
        }
    }
}

impl AngleSweepConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialOutcome {
    pub angle_deg: f64,
    pub trial: usize,
    pub config: String,
    pub rot_err_deg: f64,
    pub trans_err_m: f64,
    pub iterations: usize,
    pub tracking_lost: bool,
    pub failed: bool,
    pub overlap: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AngleSweepReport {
    pub angles: Vec<f64>,
    pub configs: Vec<String>,
    /// `failure_pct[config][angle]`.
    pub failure_pct: Vec<Vec<f64>>,
    pub mean_overlap: Vec<f64>,
    pub outcomes: Vec<TrialOutcome>,
}

impl AngleSweepReport {
    pub fn failure(&self, config: &str, angle: f64) -> Option<f64> {
        let c = self.configs.iter().position(|n| n == config)?;
        let a = self.angles.iter().position(|&x| x == angle)?;
        Some(self.failure_pct[c][a])
    }

    /// One row per configuration, one column per angle.
    pub fn table_csv(&self) -> String {
        let mut s = String::from("config");
        for a in &self.angles {
            write!(s, ",{a}").unwrap();
        }
        s.push('\n');
        for (name, row) in self.configs.iter().zip(&self.failure_pct) {
            s.push_str(name);
            for v in row {
                write!(s, ",{v:.1}").unwrap();
            }
            s.push('\n');
        }
        s.push_str("mean_overlap");
        for v in &self.mean_overlap {
            write!(s, ",{v:.3}").unwrap();
        }
        s.push('\n');
        s
    }

    pub fn trials_csv(&self) -> String {
        let mut s = String::from("angle_deg,trial,config,rot_err_deg,trans_err_m,iterations,tracking_lost,failed,overlap\n");
        for o in &self.outcomes {
            writeln!(
                s,
                "{},{},{},{:.6},{:.6},{},{},{},{:.4}",
                o.angle_deg, o.trial, o.config, o.rot_err_deg, o.trans_err_m, o.iterations, o.tracking_lost, o.failed, o.overlap
            )
            .unwrap();
        }
        s
    }
}

fn trial_seed(seed: u64, angle_idx: usize, trial: usize) -> u64 {
    seed.wrapping_mul(1_000_003).wrapping_add((angle_idx as u64) << 20).wrapping_add(trial as u64)
}

/// Failure rates over random angular-shift trials.
pub fn run_angle_sweep(cfg: &AngleSweepConfig) -> Result<AngleSweepReport> {
    if cfg.trials == 0 {
        return Err(Error::Config("trials must be at least 1".into()));
    }
    if let Some(a) = cfg.angles.iter().find(|&&a| !(a > 0.0 && a < 90.0)) {
        return Err(Error::Config(format!("angle {a} outside (0, 90)")));
    }
    for c in &cfg.configs {
        c.icp.validate()?;
    }
    let scene = scene_by_name(&cfg.scene)?;
    let jobs: Vec<(usize, usize)> = (0..cfg.angles.len())
        .flat_map(|a| (0..cfg.trials).map(move |t| (a, t)))
        .collect();
    let per_job: Vec<Vec<TrialOutcome>> = jobs
        .par_iter()
        .map(|&(ai, t)| -> Result<Vec<TrialOutcome>> {
            let angle = cfg.angles[ai];
            let trial = trial_generator(&scene, angle, trial_seed(cfg.seed, ai, t), &cfg.trial)?;
            cfg.configs
                .iter()
                .map(|c| {
                    let src = build_pyramid(&trial.source, &c.icp.pyramid)?;
                    let tgt = build_pyramid(&trial.target, &c.icp.pyramid)?;
                    let seed = if c.seeded {
                        RigidTransform::from_rotation(trial.truth.rotation)
                    } else {
                        RigidTransform::identity()
                    };
                    let r = register(&src, &tgt, &seed, &c.icp)?;
                    let (rot, trans) = pose_error(&r.transform, &trial.truth);
                    Ok(TrialOutcome {
                        angle_deg: angle,
                        trial: t,
                        config: c.name.clone(),
                        rot_err_deg: rot,
                        trans_err_m: trans,
                        iterations: r.total_iterations(),
                        tracking_lost: r.tracking_lost,
                        failed: classify_failure(&r, &trial.truth, &cfg.tolerance),
                        overlap: trial.overlap,
                    })
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    let outcomes: Vec<TrialOutcome> = per_job.into_iter().flatten().collect();

    let failure_pct = cfg
        .configs
        .iter()
        .map(|c| {
            cfg.angles
                .iter()
                .map(|&a| {
                    let n = outcomes
                        .iter()
                        .filter(|o| o.config == c.name && o.angle_deg == a && o.failed)
                        .count();
                    100.0 * n as f64 / cfg.trials as f64
                })
                .collect()
        })
        .collect();
    let first = cfg.configs.first().map(|c| c.name.clone()).unwrap_or_default();
    let mean_overlap = cfg
        .angles
        .iter()
        .map(|&a| {
            let v: Vec<f64> = outcomes
                .iter()
                .filter(|o| o.angle_deg == a && o.config == first)
                .map(|o| o.overlap)
                .collect();
            v.iter().sum::<f64>() / v.len().max(1) as f64
        })
        .collect();
    Ok(AngleSweepReport {
        angles: cfg.angles.clone(),
        configs: cfg.configs.iter().map(|c| c.name.clone()).collect(),
        failure_pct,
        mean_overlap,
        outcomes,
    })
}

/// `angle-sweep`: writes `failure_rates.csv` and `trials.csv`.
pub fn cmd_angle_sweep(cfg: &AngleSweepConfig) -> Result<AngleSweepReport> {
    let rep = run_angle_sweep(cfg)?;
    fs::create_dir_all(&cfg.output_dir)?;
    fs::write(cfg.output_dir.join("failure_rates.csv"), rep.table_csv())?;
    fs::write(cfg.output_dir.join("trials.csv"), rep.trials_csv())?;
    Ok(rep)
}

fn lambda_label(l: f64) -> String {
    format!("lambda={l}")
}

pub struct LambdaSweepReport {
    pub report: ComparisonReport,
    pub runs: Vec<(String, OdometryRun)>,
}

/// One odometry run per lambda plus an unregularized baseline (first row).
pub fn run_lambda_sweep(cfg: &RunConfig, lambdas: &[f64]) -> Result<LambdaSweepReport> {
    if matches!(cfg.imu, ImuMode::Off) {
        return Err(Error::Config("lambda sweep needs an orientation prior (imu mode ground_truth or noisy)".into()));
    }
    let source = FrameSource::open(cfg)?;
    let mut runs = Vec::with_capacity(lambdas.len() + 1);
    let base = run_odometry(&source, &cfg.icp.clone().with_lambda(0.0), &cfg.imu, &cfg.extrinsic)?;
    runs.push(("baseline".to_string(), base));
    for &l in lambdas {
        let run = run_odometry(&source, &cfg.icp.clone().with_lambda(l), &cfg.imu, &cfg.extrinsic)?;
        runs.push((lambda_label(l), run));
    }
    let named: Vec<(String, Trajectory)> = runs.iter().map(|(n, r)| (n.clone(), r.trajectory.clone())).collect();
    let report = compare_report(&named, &source.truth(), 0, cfg.rpe_delta)?;
    Ok(LambdaSweepReport { report, runs })
}

/// `lambda-sweep`: writes `lambda_report.csv` and `lambda_report.txt`.
pub fn cmd_lambda_sweep(cfg: &RunConfig, lambdas: &[f64]) -> Result<LambdaSweepReport> {
    let rep = run_lambda_sweep(cfg, lambdas)?;
    fs::create_dir_all(&cfg.output_dir)?;
    fs::write(cfg.output_dir.join("lambda_report.csv"), rep.report.to_csv())?;
    fs::write(cfg.output_dir.join("lambda_report.txt"), rep.report.to_text())?;
    Ok(rep)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub config: String,
    pub frames: usize,
    pub mean_iterations: f64,
    pub tracking_losses: usize,
    /// Display only.
    pub mean_ms: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationBenchReport {
    pub rows: Vec<BenchRow>,
}

impl IterationBenchReport {
    /// Iteration table; deltas are relative to the first row.
    pub fn to_csv(&self) -> String {
        let base = self.rows.first().map_or(0.0, |r| r.mean_iterations);
        let mut s = String::from("config,frames,mean_iterations,iterations_delta_pct,tracking_losses\n");
        for r in &self.rows {
            let d = crate::eval::improvement_pct(r.mean_iterations, base)
                .map_or_else(|| "n/a".to_string(), |p| format!("{:.3}", -p));
            writeln!(s, "{},{},{:.6},{},{}", r.config, r.frames, r.mean_iterations, d, r.tracking_losses).unwrap();
        }
        s
    }

    /// Includes wall-clock means; not deterministic.
    pub fn timing_text(&self) -> String {
        let base = self.rows.first().map_or(0.0, |r| r.mean_ms);
        let mut s = format!("{:<18} {:>10} {:>12} {:>10}\n", "config", "iters", "ms/frame", "ms delta");
        for r in &self.rows {
            let d = crate::eval::improvement_pct(r.mean_ms, base).map_or_else(|| "n/a".into(), |p| format!("{:+.1}%", -p));
            writeln!(s, "{:<18} {:>10.2} {:>12.2} {:>10}", r.config, r.mean_iterations, r.mean_ms, d).unwrap();
        }
        s
    }
}

/// The three registration setups compared by the iteration benchmark.
pub fn bench_setups(cfg: &RunConfig) -> Vec<(String, IcpConfig, ImuMode)> {
    let prior = match cfg.imu {
        ImuMode::Off => ImuMode::GroundTruth,
        other => other,
    };
    vec![
        ("baseline_fixed".into(), IcpConfig { pyramid: cfg.icp.pyramid, ..IcpConfig::baseline() }, ImuMode::Off),
        (
            "seeded_fixed".into(),
            IcpConfig {
                mode: IcpMode::FixedCadence,
                cadence: IcpConfig::seeded_fixed().cadence,
                ..cfg.icp.clone()
            },
            prior,
        ),
        (
            "seeded_convergent".into(),
            IcpConfig {
                mode: IcpMode::MedianConvergence,
                ..cfg.icp.clone()
            },
            prior,
        ),
    ]
}

pub fn run_iteration_bench(cfg: &RunConfig) -> Result<IterationBenchReport> {
    let source = FrameSource::open(cfg)?;
    let rows = bench_setups(cfg)
        .into_iter()
        .map(|(name, icp, imu)| {
            let run = run_odometry(&source, &icp, &imu, &cfg.extrinsic)?;
            Ok(BenchRow {
                config: name,
                frames: run.frames.len(),
                mean_iterations: run.mean_iterations(),
                tracking_losses: run.tracking_losses,
                mean_ms: run.mean_ms(),
            })
        })
        .collect::<Result<_>>()?;
    Ok(IterationBenchReport { rows })
}

/// `iteration-bench`: writes `iterations.csv`.
pub fn cmd_iteration_bench(cfg: &RunConfig) -> Result<IterationBenchReport> {
    let rep = run_iteration_bench(cfg)?;
    fs::create_dir_all(&cfg.output_dir)?;
    fs::write(cfg.output_dir.join("iterations.csv"), rep.to_csv())?;
    Ok(rep)
}

/// `simulate-imu`: perturbs the orientations of a ground-truth file.
pub fn cmd_simulate_imu(groundtruth: &Path, model: &ImuNoiseModel, out: &Path) -> Result<Trajectory> {
    model.validate()?;
    let truth = load_trajectory(groundtruth)?;
    let samples = stream_from_trajectory(&truth, Some(model))?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    export_noisy(&truth, &samples, out)?;
    crate::imu::noisy_trajectory(&truth, &samples)
}

#[derive(Debug, Clone)]
pub struct EvaluateReport {
    pub ate: AteReport,
    pub rpe: RpeReport,
}

impl EvaluateReport {
    pub fn text(&self) -> String {
        format!(
            "matched_poses = {}\nate_rmse_m = {:.9}\nate_mean_m = {:.9}\nate_median_m = {:.9}\nate_max_m = {:.9}\nrpe_rmse_m = {:.9}\n",
            self.ate.matches.len(),
            self.ate.rmse,
            self.ate.mean,
            self.ate.median,
            self.ate.max,
            self.rpe.rmse
        )
    }
}

/// `evaluate`: ATE and RPE of an estimate against a ground-truth file;
/// optionally writes the metrics and an SVG plot.
pub fn cmd_evaluate(
    estimate: &Path,
    groundtruth: &Path,
    delta: RpeDelta,
    out_dir: Option<&Path>,
) -> Result<EvaluateReport> {
    let est = load_trajectory(estimate)?;
    let truth = load_trajectory(groundtruth)?;
    let report = EvaluateReport {
        ate: ate(&est, &truth)?,
        rpe: rpe(&est, &truth, delta)?,
    };
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("metrics.txt"), report.text())?;
        fs::write(dir.join("trajectory.svg"), trajectory_svg(&est, &truth, &report.ate))?;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg(dir: &Path) -> RunConfig {
        RunConfig {
            output_dir: dir.to_path_buf(),
            sequence: SequenceSource::Synthetic(SyntheticSource {
                frames: 6,
                ..Default::default()
            }),
            ..Default::default()
        }
    }

    #[test]
    fn config_round_trip() {
        let cfg = RunConfig {
            imu: ImuMode::Noisy {
                model: ImuNoiseModel::with_seed(3),
            },
            ..Default::default()
        };
        assert_eq!(RunConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
        let tum = RunConfig::from_toml("[sequence]\nkind = \"tum\"\npath = \"/data/fr1_desk\"\n").unwrap();
        assert!(matches!(tum.sequence, SequenceSource::Tum { .. }));
        assert!(matches!(RunConfig::from_toml("seed = \"x\""), Err(Error::Config(_))));
        assert_eq!(AngleSweepConfig::from_toml("trials = 3").unwrap().trials, 3);
    }

    #[test]
    fn exit_codes_are_distinct() {
        assert_eq!(exit_code(&Error::Config("x".into())), EXIT_CONFIG);
        assert_eq!(exit_code(&Error::UnknownScene("x".into())), EXIT_CONFIG);
        assert_eq!(exit_code(&Error::EmptyFrame), EXIT_DATA);
        assert_ne!(EXIT_TRACKING_LOSS, EXIT_DATA);
    }

    #[test]
    fn static_sequence_stays_at_identity() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = small_cfg(dir.path());
        cfg.sequence = SequenceSource::Synthetic(SyntheticSource {
            frames: 4,
            step_deg: 0.0,
            bob: 0.0,
            ..Default::default()
        });
        let rep = cmd_odometry(&cfg).unwrap();
        for e in rep.run.trajectory.entries() {
            assert!(e.pose.translation.norm() < 1e-5);
            assert!(e.pose.rotation_angle() < 1e-5);
        }
    }

    #[test]
    fn lambda_sweep_needs_prior_and_counts_rows() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = small_cfg(dir.path());
        let rep = run_lambda_sweep(&cfg, &[0.0]).unwrap();
        assert_eq!(rep.report.rows.len(), 2);
        assert_eq!(rep.runs[0].1.trajectory, rep.runs[1].1.trajectory);
        cfg.imu = ImuMode::Off;
        assert!(matches!(run_lambda_sweep(&cfg, &[1.0]), Err(Error::Config(_))));
    }

    #[test]
    fn bench_fixed_counts() {
        let dir = tempfile::tempdir().unwrap();
        let rep = run_iteration_bench(&small_cfg(dir.path())).unwrap();
        assert_eq!(rep.rows[0].mean_iterations, 19.0);
        assert_eq!(rep.rows[1].mean_iterations, 7.0);
        assert!(rep.to_csv().starts_with("config,frames,mean_iterations,iterations_delta_pct,tracking_losses\n"));
    }

    #[test]
    fn sweep_rejects_bad_angles() {
        let cfg = AngleSweepConfig {
            angles: vec![95.0],
            ..Default::default()
        };
        assert!(run_angle_sweep(&cfg).is_err());
    }
}
