use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use seeded_icp::cli::{
    cmd_angle_sweep, cmd_evaluate, cmd_iteration_bench, cmd_lambda_sweep, cmd_odometry, cmd_simulate_imu, exit_code,
    AngleSweepConfig, ImuMode, RunConfig, SequenceSource, EXIT_OK, EXIT_TRACKING_LOSS,
};
use seeded_icp::dataset::SequenceOptions;
use seeded_icp::eval::RpeDelta;
use seeded_icp::imu::ImuNoiseModel;
use seeded_icp::{Error, Result};

#[derive(Parser)]
#[command(name = "seeded-icp", version, about = "Orientation-seeded point-to-plane ICP odometry and benchmarks")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Frame-to-frame tracking over a TUM or synthetic sequence.
    Odometry(RunArgs),
    /// Failure rate of registration versus inter-frame rotation angle.
    AngleSweep(SweepArgs),
    /// Odometry accuracy for a list of regularization weights.
    LambdaSweep {
        #[command(flatten)]
        run: RunArgs,
        /// Comma-separated weights; a lambda = 0 baseline row is always added.
        #[arg(long, value_delimiter = ',', default_value = "0.05,0.2,1,2,5")]
        lambdas: Vec<f64>,
    },
    /// Mean iterations per frame for the fixed and convergent cadences.
    IterationBench(RunArgs),
    /// Perturb the orientations of a ground-truth trajectory file.
    SimulateImu(SimulateArgs),
    /// ATE and RPE of an estimated trajectory against ground truth.
    Evaluate(EvaluateArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum ImuArg {
    Off,
    GroundTruth,
    Noisy,
}

#[derive(Args)]
struct RunArgs {
    /// TOML run configuration; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seed for every random draw (depth noise, IMU noise term).
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory [config default: out].
    #[arg(long)]
    out: Option<PathBuf>,
    /// Read a TUM RGB-D sequence directory instead of a synthetic orbit.
    #[arg(long, conflicts_with = "scene")]
    tum: Option<PathBuf>,
    /// Builtin synthetic scene: corner, desk or single_plane [default: corner].
    #[arg(long)]
    scene: Option<String>,
    /// Synthetic frame count [default: 60].
    #[arg(long)]
    frames: Option<usize>,
    /// Synthetic depth noise sigma at 1 m (grows with depth squared) [default: 0].
    #[arg(long)]
    depth_noise: Option<f64>,
    /// Orientation prior [default: ground-truth].
    #[arg(long, value_enum)]
    imu: Option<ImuArg>,
    /// Rotation regularization weight [default: 5].
    #[arg(long)]
    lambda: Option<f64>,
}

impl RunArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
            if let ImuMode::Noisy { model } = &mut cfg.imu {
                model.seed = s;
            }
        }
        if let Some(o) = &self.out {
            cfg.output_dir = o.clone();
        }
        if let Some(p) = &self.tum {
            cfg.sequence = SequenceSource::Tum {
                path: p.clone(),
                options: SequenceOptions::default(),
            };
        }
        if self.scene.is_some() || self.frames.is_some() || self.depth_noise.is_some() {
            let SequenceSource::Synthetic(s) = &mut cfg.sequence else {
                return Err(Error::Config("--scene, --frames and --depth-noise need a synthetic sequence".into()));
            };
            if let Some(name) = &self.scene {
                s.scene = name.clone();
                s.scene_file = None;
            }
            if let Some(n) = self.frames {
                s.frames = n;
            }
            if let Some(d) = self.depth_noise {
                s.depth_noise = d;
            }
        }
        if let Some(m) = self.imu {
            cfg.imu = match m {
                ImuArg::Off => ImuMode::Off,
                ImuArg::GroundTruth => ImuMode::GroundTruth,
                ImuArg::Noisy => ImuMode::Noisy {
                    model: ImuNoiseModel::with_seed(cfg.seed),
                },
            };
        }
        if let Some(l) = self.lambda {
            cfg.icp = cfg.icp.with_lambda(l);
        }
        Ok(cfg)
    }
}

#[derive(Args)]
struct SweepArgs {
    /// TOML sweep configuration; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Builtin scene [default: corner].
    #[arg(long)]
    scene: Option<String>,
    /// Comma-separated angles in degrees [default: 5,10,...,60].
    #[arg(long, value_delimiter = ',')]
    angles: Option<Vec<f64>>,
    /// Trials per angle [default: 20].
    #[arg(long)]
    trials: Option<usize>,
}

#[derive(Args)]
struct SimulateArgs {
    /// Ground-truth trajectory in TUM format.
    #[arg(long)]
    groundtruth: PathBuf,
    /// Output trajectory file.
    #[arg(long)]
    out: PathBuf,
    /// TOML noise model; flags below override it.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Seed for the error phases and the random term.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Error amplitudes in degrees [default: 3, 3, 10].
    #[arg(long)]
    amp_x: Option<f64>,
    #[arg(long)]
    amp_y: Option<f64>,
    #[arg(long)]
    amp_z: Option<f64>,
    /// Gaussian term per axis in degrees [default: 0].
    #[arg(long)]
    random_sigma: Option<f64>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    estimate: PathBuf,
    #[arg(long)]
    groundtruth: PathBuf,
    /// RPE interval in frames.
    #[arg(long, default_value_t = 1, conflicts_with = "delta_seconds")]
    delta_frames: usize,
    /// RPE interval in seconds.
    #[arg(long)]
    delta_seconds: Option<f64>,
    /// Directory for metrics.txt and trajectory.svg.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn read_toml<T: serde::de::DeserializeOwned>(p: &Path) -> Result<T> {
    let text = std::fs::read_to_string(p).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
    toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))
}

fn run(cli: Cli) -> Result<u8> {
    let t0 = Instant::now();
    let mut code = EXIT_OK;
    match cli.cmd {
        Cmd::Odometry(a) => {
            let rep = cmd_odometry(&a.resolve()?)?;
            print!("{}", rep.summary());
            println!("mean_ms_per_frame = {:.2}", rep.run.mean_ms());
            if rep.run.tracking_losses > 0 {
                code = EXIT_TRACKING_LOSS;
            }
        }
        Cmd::AngleSweep(a) => {
            let mut cfg = match &a.config {
                Some(p) => read_toml(p)?,
                None => AngleSweepConfig::default(),
            };
            if let Some(s) = a.seed {
                cfg.seed = s;
            }
            if let Some(o) = a.out {
                cfg.output_dir = o;
            }
            if let Some(s) = a.scene {
                cfg.scene = s;
            }
            if let Some(v) = a.angles {
                cfg.angles = v;
            }
            if let Some(n) = a.trials {
                cfg.trials = n;
            }
            print!("{}", cmd_angle_sweep(&cfg)?.table_csv());
        }
        Cmd::LambdaSweep { run, lambdas } => {
            let rep = cmd_lambda_sweep(&run.resolve()?, &lambdas)?;
            print!("{}", rep.report.to_text());
        }
        Cmd::IterationBench(a) => {
            let rep = cmd_iteration_bench(&a.resolve()?)?;
            print!("{}", rep.timing_text());
        }
        Cmd::SimulateImu(a) => {
            let mut model = match &a.model {
                Some(p) => read_toml(p)?,
                None => ImuNoiseModel::with_seed(a.seed),
            };
            model.seed = a.seed;
            if let Some(v) = a.amp_x {
                model.amp_x = v;
            }
            if let Some(v) = a.amp_y {
                model.amp_y = v;
            }
            if let Some(v) = a.amp_z {
                model.amp_z = v;
            }
            if let Some(v) = a.random_sigma {
                model.random_sigma = v;
            }
            let t = cmd_simulate_imu(&a.groundtruth, &model, &a.out)?;
            println!("wrote {} orientations to {}", t.len(), a.out.display());
        }
        Cmd::Evaluate(a) => {
            let delta = match a.delta_seconds {
                Some(s) => RpeDelta::Seconds(s),
                None => RpeDelta::Frames(a.delta_frames),
            };
            print!("{}", cmd_evaluate(&a.estimate, &a.groundtruth, delta, a.out.as_deref())?.text());
        }
    }
    println!("elapsed_s = {:.2}", t0.elapsed().as_secs_f64());
    Ok(code)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(c) => ExitCode::from(c),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
