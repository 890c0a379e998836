//! Register one wide-angle pair with and without an orientation seed.

use seeded_icp::bench::{scene_by_name, trial_generator, TrialConfig};
use seeded_icp::geom::RigidTransform;
use seeded_icp::icp::{pose_error, register, IcpConfig};
use seeded_icp::pyramid::build_pyramid;

fn main() -> seeded_icp::Result<()> {
    let scene = scene_by_name("corner")?;
    let trial = trial_generator(&scene, 35.0, 7, &TrialConfig::default())?;
    println!("35 deg trial, view overlap {:.2}", trial.overlap);
    for (name, cfg, seed) in [
        ("original", IcpConfig::baseline(), RigidTransform::identity()),
        ("seeded", IcpConfig::seeded_convergent(), RigidTransform::from_rotation(trial.truth.rotation)),
    ] {
        let src = build_pyramid(&trial.source, &cfg.pyramid)?;
        let tgt = build_pyramid(&trial.target, &cfg.pyramid)?;
        let r = register(&src, &tgt, &seed, &cfg)?;
        let (rot, trans) = pose_error(&r.transform, &trial.truth);
        println!(
            "{name:>9}: rotation error {rot:.3} deg, translation error {:.1} mm, iterations {:?}, converged {}",
            trans * 1e3,
            r.iterations_per_level,
            r.converged
        );
    }
    Ok(())
}
