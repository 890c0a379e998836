//! How the rotation penalty shrinks the angular part of one linear step.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use seeded_icp::correspond::{Correspondence, CorrespondenceSet};
use seeded_icp::solver::{build_normal_equations, solve_regularized, Regularizer};

fn main() -> seeded_icp::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    // pairs consistent with a rotation of 0.02 rad about y and 1 cm along x
    let (w, t) = (Vector3::new(0.0, 0.02, 0.0), Vector3::new(0.01, 0.0, 0.0));
    let pairs: Vec<Correspondence> = (0..2000)
        .map(|i| {
            let p = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(1.0..3.0));
            let n = Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0f64)).normalize();
            let b = p.cross(&n).dot(&w) + n.dot(&t);
            Correspondence {
                pixel: i,
                source: p,
                target: p + n * b,
                normal: n,
                distance: b.abs(),
            }
        })
        .collect();
    let ne = build_normal_equations(&CorrespondenceSet::new(pairs));
    // the translation absorbs whatever the penalized angles cannot explain
    println!("{:>8} {:>12} {:>12}", "lambda", "|angles|", "|t|");
    for lambda in [0.0, 0.05, 0.2, 1.0, 5.0, 1e4] {
        let x = solve_regularized(&ne, &Regularizer::constant(lambda))?;
        println!("{lambda:>8} {:>12.6} {:>12.6}", x.rotation().norm(), x.translation().norm());
    }
    Ok(())
}
