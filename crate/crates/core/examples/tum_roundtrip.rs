//! Write a synthetic sequence in TUM RGB-D layout and read it back.

use seeded_icp::bench::{orbit_poses, scene_by_name, CameraModel};
use seeded_icp::dataset::{load_tum_sequence, synth_sequence, SequenceOptions};

fn main() -> seeded_icp::Result<()> {
    let scene = scene_by_name("corner")?;
    let camera = CameraModel::bench();
    let seq = synth_sequence(&scene, &orbit_poses(&scene, 10, 1.0, 0.02), &camera)?;
    let dir = std::env::temp_dir().join("seeded-icp-tum-roundtrip");
    seq.write_tum(&dir)?;
    let opts = SequenceOptions {
        intrinsics: camera.intrinsics,
        ..Default::default()
    };
    let idx = load_tum_sequence(&dir, &opts)?;
    let back = idx.read_depth(idx.associations[3].0)?;
    let worst = back
        .depths
        .iter()
        .zip(&seq.frames[3].depths)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    println!(
        "{}: {} depth frames, {} poses, {} associations; max depth quantization error {:.2e} m",
        dir.display(),
        idx.depth.len(),
        idx.groundtruth.len(),
        idx.associations.len(),
        worst
    );
    Ok(())
}
