//! Systematic orientation error of the simulated IMU along a yaw sweep.

use nalgebra::Vector3;
use seeded_icp::geom::UnitQuaternion;
use seeded_icp::imu::{apply_noise, axis_deviation_deg, ImuNoiseModel};

fn main() {
    let model = ImuNoiseModel::with_seed(0);
    println!("amplitudes (deg): {} {} {}", model.amp_x, model.amp_y, model.amp_z);
    for yaw in (0..=360).step_by(45) {
        let q = UnitQuaternion::from_rotation_vector(&Vector3::new(0.1, 0.0, (yaw as f64).to_radians()));
        let d = axis_deviation_deg(&apply_noise(&q, &model), &q);
        println!("yaw {yaw:>3}: error x {:+.2} y {:+.2} z {:+.2} deg", d.x, d.y, d.z);
    }
}
