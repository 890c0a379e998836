//! First-order rotation model versus the exact exponential map.

use nalgebra::{Vector3, Vector6};
use seeded_icp::geom::{exp_so3, geodesic_distance, orthonormalize, small_angle_transform, TwistParams};

fn main() {
    let axis = Vector3::new(0.3, -0.8, 0.5).normalize();
    println!("{:>10} {:>14} {:>14}", "theta", "error (rad)", "theta^2/2");
    for theta in [1e-4, 1e-3, 1e-2, 0.05, 0.1, 0.2, 0.5] {
        let v = axis * theta;
        let x = TwistParams::from_vector(&Vector6::new(v.x, v.y, v.z, 0.0, 0.0, 0.0));
        let approx = orthonormalize(&small_angle_transform(&x)).expect("near-identity block");
        let err = geodesic_distance(&approx.rotation, &exp_so3(&v));
        println!("{theta:>10.4} {err:>14.3e} {:>14.3e}", theta * theta / 2.0);
    }
}
