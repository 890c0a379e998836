//! Render a depth frame and inspect the three-level cloud pyramid.

use seeded_icp::bench::{render_depth, scene_by_name, CameraModel};
use seeded_icp::pyramid::{build_pyramid, PyramidConfig};

fn main() -> seeded_icp::Result<()> {
    let scene = scene_by_name("desk")?;
    let depth = render_depth(&scene, &scene.nominal_pose(), &CameraModel::bench());
    let cfg = PyramidConfig::default();
    let pyr = build_pyramid(&depth, &cfg)?;
    for (l, c) in pyr.levels.iter().enumerate() {
        println!(
            "level {l}: {}x{} points {} normals {} (window {}, disc {:.2} m)",
            c.width,
            c.height,
            c.valid_count(),
            c.normal_count(),
            cfg.half_window_at(l),
            cfg.disc_threshold_at(l)
        );
    }
    let fine = pyr.finest();
    let i = fine.index(fine.width / 2, fine.height * 7 / 8);
    if fine.normal_valid[i] {
        println!("floor normal below the image center: {:.3?}", fine.normals[i].as_slice());
    }
    Ok(())
}
