//! ATE and RPE of a drifting estimate against its ground truth.

use nalgebra::Vector3;
use seeded_icp::dataset::Trajectory;
use seeded_icp::eval::{ate, rpe, RpeDelta};
use seeded_icp::geom::{exp_so3, RigidTransform};

fn main() -> seeded_icp::Result<()> {
    let ts: Vec<f64> = (0..100).map(|k| k as f64 * 0.1).collect();
    let truth: Vec<RigidTransform> = ts
        .iter()
        .map(|&t| RigidTransform::new(exp_so3(&Vector3::new(0.0, 0.1 * t, 0.0)), Vector3::new(t.cos(), 0.1 * t, t.sin())))
        .collect();
    // constant per-step bias in heading and scale
    let est: Vec<RigidTransform> = truth
        .iter()
        .enumerate()
        .map(|(k, p)| {
            let drift = RigidTransform::new(exp_so3(&Vector3::new(0.0, 0.001 * k as f64, 0.0)), Vector3::zeros());
            let mut q = drift.compose(p);
            q.translation *= 1.0 + 0.0005 * k as f64;
            q
        })
        .collect();
    let (est, truth) = (Trajectory::from_poses(&ts, &est)?, Trajectory::from_poses(&ts, &truth)?);
    let a = ate(&est, &truth)?;
    println!("ATE rmse {:.4} m (max {:.4} m over {} poses)", a.rmse, a.max, a.matches.len());
    for d in [1, 10] {
        println!("RPE delta {d} frames: {:.4} m", rpe(&est, &truth, RpeDelta::Frames(d))?.rmse);
    }
    println!("RPE delta 2 s: {:.4} m", rpe(&est, &truth, RpeDelta::Seconds(2.0))?.rmse);
    Ok(())
}
