//! Histogram median, MAD band and filtering on a contaminated distance set.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use seeded_icp::correspond::{
    build_histogram, median_band, median_filter, median_from_cdf, Correspondence, CorrespondenceSet,
};

fn main() -> seeded_icp::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    // 80% inliers near 2 cm, 20% outliers spread up to 40 cm
    let pairs: Vec<Correspondence> = (0..5000)
        .map(|i| {
            let d = if rng.random_bool(0.8) {
                0.02 + rng.random_range(-0.003..0.003)
            } else {
                rng.random_range(0.0..0.4)
            };
            let source = Vector3::new(0.0, 0.0, 2.0);
            Correspondence {
                pixel: i,
                source,
                target: source + Vector3::new(0.0, 0.0, d),
                normal: Vector3::z(),
                distance: d,
            }
        })
        .collect();
    let set = CorrespondenceSet::new(pairs);
    let bw = 0.5 / 512.0;
    let h = build_histogram(&set, bw, 0.5)?;
    let med = median_from_cdf(&h)?;
    let band = median_band(&h, med, 3.0)?;
    let kept = median_filter(&set, med, band)?;
    println!("median {med:.4} m, band +/-{band:.4} m, kept {:.1}%", 100.0 * kept.kept_fraction);
    Ok(())
}
