//! A reduced failure-rate sweep over inter-frame rotation angles.

use seeded_icp::cli::{run_angle_sweep, AngleSweepConfig};

fn main() -> seeded_icp::Result<()> {
    let cfg = AngleSweepConfig {
        angles: vec![10.0, 30.0, 50.0, 60.0],
        trials: 5,
        ..Default::default()
    };
    print!("{}", run_angle_sweep(&cfg)?.table_csv());
    Ok(())
}
