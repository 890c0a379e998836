//! Track a synthetic orbit with ground-truth and noisy orientation priors.

use seeded_icp::cli::{run_odometry, FrameSource, ImuMode, RunConfig};
use seeded_icp::eval::ate;
use seeded_icp::imu::ImuNoiseModel;

fn main() -> seeded_icp::Result<()> {
    let cfg = RunConfig::default();
    let source = FrameSource::open(&cfg)?;
    for (name, imu) in [
        ("ground truth", ImuMode::GroundTruth),
        (
            "noisy",
            ImuMode::Noisy {
                model: ImuNoiseModel::default(),
            },
        ),
    ] {
        let run = run_odometry(&source, &cfg.icp, &imu, &cfg.extrinsic)?;
        let a = ate(&run.trajectory, &source.truth())?;
        println!(
            "{name:>12}: ATE {:.2} mm, {:.2} iterations/frame, {} tracking losses",
            a.rmse * 1e3,
            run.mean_iterations(),
            run.tracking_losses
        );
    }
    Ok(())
}
