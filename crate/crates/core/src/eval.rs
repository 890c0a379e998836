//! Trajectory metrics: absolute trajectory error after rigid alignment,
//! translational relative pose error, and comparison reports.

use std::fmt::Write as _;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::dataset::{associate, Trajectory, DEFAULT_MAX_DT};
use crate::error::{Error, Result};
use crate::geom::RigidTransform;

/// Rigid transform `T` minimizing `sum |T est_i - truth_i|^2` (no scale).
pub fn align_points(est: &[Vector3<f64>], truth: &[Vector3<f64>]) -> Result<RigidTransform> {
    if est.len() != truth.len() {
        return Err(Error::InvalidInput("point sets differ in size".into()));
    }
    if est.len() < 3 {
        return Err(Error::DegenerateAlignment("fewer than three points"));
    }
    let n = est.len() as f64;
    let mu_e = est.iter().sum::<Vector3<f64>>() / n;
    let mu_t = truth.iter().sum::<Vector3<f64>>() / n;
    let mut cov = Matrix3::zeros();
    let mut spread = Matrix3::zeros();
    for (e, t) in est.iter().zip(truth) {
        let (de, dt) = (e - mu_e, t - mu_t);
        cov += dt * de.transpose();
        spread += de * de.transpose();
    }
    cov /= n;
    spread /= n;

    let s_spread = spread.symmetric_eigen().eigenvalues;
    let mut ev: Vec<f64> = s_spread.iter().copied().collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    if !(ev[0] > 0.0) || ev[1] <= 1e-12 * ev[0] {
        return Err(Error::DegenerateAlignment("positions are collinear"));
    }

    let svd = cov.svd(true, true);
    let (u, v_t) = (svd.u.expect("u requested"), svd.v_t.expect("v_t requested"));
    let mut idx = [0usize, 1, 2];
    idx.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let mut d = Matrix3::identity();
    if (u * v_t).determinant() < 0.0 {
        d[(idx[2], idx[2])] = -1.0;
        // An exact mirror image fits the improper solution perfectly; flipping
        // the weakest axis would then report a meaningless residual.
        let residual = |r: &Matrix3<f64>| {
            est.iter()
                .zip(truth)
                .map(|(e, t)| (r * (e - mu_e) - (t - mu_t)).norm_squared())
                .sum::<f64>()
                / n
        };
        let scale = spread.trace().max(f64::MIN_POSITIVE);
        let (improper, proper) = (residual(&(u * v_t)), residual(&(u * d * v_t)));
        if improper <= 1e-18 * scale && proper > 1e-12 * scale {
            return Err(Error::DegenerateAlignment("positions are a mirror image of the truth"));
        }
    }
    let r = u * d * v_t;
    Ok(RigidTransform::new(r, mu_t - r * mu_e))
}

fn matched(est: &Trajectory, truth: &Trajectory, max_dt: f64) -> Vec<(usize, usize)> {
    associate(&est.timestamps(), &truth.timestamps(), max_dt)
}

/// Aligns estimated positions onto the truth at matched timestamps.
pub fn align_umeyama(est: &Trajectory, truth: &Trajectory) -> Result<RigidTransform> {
    let m = matched(est, truth, DEFAULT_MAX_DT);
    let (pe, pt) = (est.positions(), truth.positions());
    let e: Vec<_> = m.iter().map(|&(i, _)| pe[i]).collect();
    let t: Vec<_> = m.iter().map(|&(_, j)| pt[j]).collect();
    align_points(&e, &t)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AteReport {
    pub rmse: f64,
    pub mean: f64,
    pub median: f64,
    pub max: f64,
    /// Maps the estimate onto the truth.
    pub alignment: RigidTransform,
    pub errors: Vec<f64>,
    /// (estimate index, truth index).
    pub matches: Vec<(usize, usize)>,
}

fn stats(errors: &[f64]) -> (f64, f64, f64, f64) {
    let n = errors.len() as f64;
    let rmse = (errors.iter().map(|e| e * e).sum::<f64>() / n).sqrt();
    let mean = errors.iter().sum::<f64>() / n;
    let mut s = errors.to_vec();
    s.sort_by(f64::total_cmp);
    let median = if s.len() % 2 == 1 {
        s[s.len() / 2]
    } else {
        0.5 * (s[s.len() / 2 - 1] + s[s.len() / 2])
    };
    (rmse, mean, median, s[s.len() - 1])
}

pub fn ate(est: &Trajectory, truth: &Trajectory) -> Result<AteReport> {
    ate_with(est, truth, DEFAULT_MAX_DT)
}

pub fn ate_with(est: &Trajectory, truth: &Trajectory, max_dt: f64) -> Result<AteReport> {
    let matches = matched(est, truth, max_dt);
    if matches.len() < 3 {
        return Err(Error::InsufficientOverlap(format!("{} matched poses, need 3", matches.len())));
    }
    let (pe, pt) = (est.positions(), truth.positions());
    let e: Vec<_> = matches.iter().map(|&(i, _)| pe[i]).collect();
    let t: Vec<_> = matches.iter().map(|&(_, j)| pt[j]).collect();
    let alignment = align_points(&e, &t)?;
    let errors: Vec<f64> = e
        .iter()
        .zip(&t)
        .map(|(a, b)| (alignment.apply_to_point(a) - b).norm())
        .collect();
    let (rmse, mean, median, max) = stats(&errors);
    Ok(AteReport {
        rmse,
        mean,
        median,
        max,
        alignment,
        errors,
        matches,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RpeDelta {
    Frames(usize),
    Seconds(f64),
}

impl Default for RpeDelta {
    fn default() -> Self {
        RpeDelta::Frames(1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RpeReport {
    pub rmse: f64,
    pub delta: RpeDelta,
    pub errors: Vec<f64>,
    /// Interval endpoints as indices into the matched pose list.
    pub intervals: Vec<(usize, usize)>,
}

/// Translational relative pose error over matched poses.
pub fn rpe(est: &Trajectory, truth: &Trajectory, delta: RpeDelta) -> Result<RpeReport> {
    let m = matched(est, truth, DEFAULT_MAX_DT);
    let (pe, pt) = (est.entries(), truth.entries());
    let mut intervals = Vec::new();
    match delta {
        RpeDelta::Frames(d) => {
            if d == 0 {
                return Err(Error::InvalidInput("RPE delta must be at least one frame".into()));
            }
            intervals.extend((0..m.len().saturating_sub(d)).map(|i| (i, i + d)));
        }
        RpeDelta::Seconds(s) => {
            if !(s > 0.0) {
                return Err(Error::InvalidInput("RPE delta must be positive".into()));
            }
            for i in 0..m.len() {
                let t0 = pe[m[i].0].timestamp;
                if let Some(j) = (i + 1..m.len()).find(|&j| pe[m[j].0].timestamp - t0 >= s) {
                    intervals.push((i, j));
                }
            }
        }
    }
    if intervals.is_empty() {
        return Err(Error::InsufficientOverlap("no RPE intervals inside both trajectories".into()));
    }
    let errors: Vec<f64> = intervals
        .iter()
        .map(|&(a, b)| {
            let de = pe[m[a].0].pose.inverse().compose(&pe[m[b].0].pose);
            let dt = pt[m[a].1].pose.inverse().compose(&pt[m[b].1].pose);
            dt.inverse().compose(&de).translation.norm()
        })
        .collect();
    let rmse = stats(&errors).0;
    Ok(RpeReport {
        rmse,
        delta,
        errors,
        intervals,
    })
}

/// `(1 - ours / base) * 100`, or `None` when the baseline is zero.
pub fn improvement_pct(ours: f64, base: f64) -> Option<f64> {
    (base != 0.0).then(|| (1.0 - ours / base) * 100.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub run: String,
    pub ate_rmse: f64,
    pub rpe_rmse: f64,
    pub ate_improvement_pct: Option<f64>,
    pub rpe_improvement_pct: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonReport {
    pub baseline: String,
    pub rows: Vec<ReportRow>,
}

fn pct(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |p| format!("{p:.3}"))
}

impl ComparisonReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("run,ate_rmse_m,rpe_rmse_m,ate_improvement_pct,rpe_improvement_pct\n");
        for r in &self.rows {
            writeln!(
                s,
                "{},{:.9},{:.9},{},{}",
                r.run,
                r.ate_rmse,
                r.rpe_rmse,
                pct(r.ate_improvement_pct),
                pct(r.rpe_improvement_pct)
            )
            .expect("writing to a String cannot fail");
        }
        s
    }

    pub fn to_text(&self) -> String {
        let w = self.rows.iter().map(|r| r.run.len()).max().unwrap_or(3).max(3);
        let mut s = format!(
            "{:<w$}  {:>12}  {:>12}  {:>9}  {:>9}\n",
            "run", "ATE rmse (m)", "RPE rmse (m)", "ATE %", "RPE %"
        );
        for r in &self.rows {
            writeln!(
                s,
                "{:<w$}  {:>12.6}  {:>12.6}  {:>9}  {:>9}",
                r.run,
                r.ate_rmse,
                r.rpe_rmse,
                pct(r.ate_improvement_pct),
                pct(r.rpe_improvement_pct)
            )
            .expect("writing to a String cannot fail");
        }
        writeln!(s, "(improvement relative to `{}`)", self.baseline).expect("writing to a String cannot fail");
        s
    }
}

/// ATE/RPE for every named run against one truth; improvements are relative
/// to `runs[baseline]`.
pub fn compare_report(
    runs: &[(String, Trajectory)],
    truth: &Trajectory,
    baseline: usize,
    delta: RpeDelta,
) -> Result<ComparisonReport> {
    if baseline >= runs.len() {
        return Err(Error::InvalidInput("baseline index out of range".into()));
    }
    let metrics: Vec<(f64, f64)> = runs
        .iter()
        .map(|(_, t)| Ok((ate(t, truth)?.rmse, rpe(t, truth, delta)?.rmse)))
        .collect::<Result<_>>()?;
    let (base_ate, base_rpe) = metrics[baseline];
    let rows = runs
        .iter()
        .zip(&metrics)
        .map(|((name, _), &(a, r))| ReportRow {
            run: name.clone(),
            ate_rmse: a,
            rpe_rmse: r,
            ate_improvement_pct: improvement_pct(a, base_ate),
            rpe_improvement_pct: improvement_pct(r, base_rpe),
        })
        .collect();
    Ok(ComparisonReport {
        baseline: runs[baseline].0.clone(),
        rows,
    })
}

/// Top-down (x-z) SVG of the truth (black), the aligned estimate (blue) and
/// per-pose error segments (red).
pub fn trajectory_svg(est: &Trajectory, truth: &Trajectory, report: &AteReport) -> String {
    let pe = est.positions();
    let pt = truth.positions();
    let aligned: Vec<Vector3<f64>> = report.matches.iter().map(|&(i, _)| report.alignment.apply_to_point(&pe[i])).collect();
    let gt: Vec<Vector3<f64>> = report.matches.iter().map(|&(_, j)| pt[j]).collect();

    let all = aligned.iter().chain(&gt);
    let (mut x0, mut x1, mut z0, mut z1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for p in all {
        x0 = x0.min(p.x);
        x1 = x1.max(p.x);
        z0 = z0.min(p.z);
        z1 = z1.max(p.z);
    }
    let (size, margin) = (600.0, 30.0);
    let span = (x1 - x0).max(z1 - z0).max(1e-6);
    let scale = (size - 2.0 * margin) / span;
    let map = |p: &Vector3<f64>| (margin + (p.x - x0) * scale, size - margin - (p.z - z0) * scale);
    let poly = |pts: &[Vector3<f64>]| {
        pts.iter()
            .map(|p| {
                let (x, y) = map(p);
                format!("{x:.2},{y:.2}")
            })
            .collect::<Vec<_>>()
            .join(" ")
    };

    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{size}\" height=\"{size}\" viewBox=\"0 0 {size} {size}\">\n"
    );
    s.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    for (a, b) in aligned.iter().zip(&gt) {
        let (ax, ay) = map(a);
        let (bx, by) = map(b);
        writeln!(
            s,
            "<line x1=\"{ax:.2}\" y1=\"{ay:.2}\" x2=\"{bx:.2}\" y2=\"{by:.2}\" stroke=\"red\" stroke-width=\"0.8\"/>"
        )
        .expect("writing to a String cannot fail");
    }
    writeln!(s, "<polyline points=\"{}\" fill=\"none\" stroke=\"black\" stroke-width=\"1.5\"/>", poly(&gt))
        .expect("writing to a String cannot fail");
    writeln!(s, "<polyline points=\"{}\" fill=\"none\" stroke=\"blue\" stroke-width=\"1.5\"/>", poly(&aligned))
        .expect("writing to a String cannot fail");
    writeln!(
        s,
        "<text x=\"{margin}\" y=\"20\" font-family=\"monospace\" font-size=\"12\">ATE rmse {:.4} m (x-z view)</text>",
        report.rmse
    )
    .expect("writing to a String cannot fail");
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::exp_so3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_rigid(rng: &mut ChaCha8Rng) -> RigidTransform {
        let r = Vector3::from_fn(|_, _| rng.random_range(-2.0..2.0));
        let t = Vector3::from_fn(|_, _| rng.random_range(-3.0..3.0));
        RigidTransform::new(exp_so3(&r), t)
    }

    fn random_walk(rng: &mut ChaCha8Rng, n: usize) -> Trajectory {
        let mut pose = RigidTransform::identity();
        let mut poses = Vec::new();
        for _ in 0..n {
            let step = RigidTransform::new(
                exp_so3(&Vector3::from_fn(|_, _| rng.random_range(-0.05..0.05))),
                Vector3::from_fn(|_, _| rng.random_range(-0.05..0.05)),
            );
            pose = pose.compose(&step);
            poses.push(pose);
        }
        let ts: Vec<f64> = (0..n).map(|k| k as f64 / 30.0).collect();
        Trajectory::from_poses(&ts, &poses).unwrap()
    }

    #[test]
    fn identity_alignment() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t = random_walk(&mut rng, 50);
        let a = align_umeyama(&t, &t).unwrap();
        assert!((a.rotation - Matrix3::identity()).amax() < 1e-9);
        assert!(a.translation.norm() < 1e-9);
    }

    #[test]
    fn forward_construction_recovers_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let truth = random_walk(&mut rng, 40);
            let t = random_rigid(&mut rng);
            let est = truth.transformed(&t);
            let a = align_umeyama(&est, &truth).unwrap();
            let inv = t.inverse();
            assert!((a.rotation - inv.rotation).amax() < 1e-9);
            assert!((a.translation - inv.translation).amax() < 1e-9);
        }
    }

    #[test]
    fn degenerate_inputs() {
        let line: Vec<Vector3<f64>> = (0..10).map(|k| Vector3::new(k as f64, 0.0, 0.0)).collect();
        assert!(matches!(align_points(&line, &line), Err(Error::DegenerateAlignment(_))));
        let pts = vec![
            Vector3::new(0.0, 0.0, 0.0),
            Vector3::new(1.0, 0.0, 0.0),
            Vector3::new(0.0, 2.0, 0.0),
            Vector3::new(0.0, 0.0, 3.0),
            Vector3::new(1.0, 1.0, 1.0),
        ];
        let mirrored: Vec<_> = pts.iter().map(|p| Vector3::new(-p.x, p.y, p.z)).collect();
        assert!(matches!(align_points(&mirrored, &pts), Err(Error::DegenerateAlignment(_))));
    }

    #[test]
    fn ate_trivial_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let t = random_walk(&mut rng, 30);
        assert!(ate(&t, &t).unwrap().rmse < 1e-12);
        let shifted = t.transformed(&RigidTransform::from_translation(Vector3::new(1.0, -2.0, 0.5)));
        assert!(ate(&shifted, &t).unwrap().rmse < 1e-9);
        let short = Trajectory::from_poses(&[0.0, 1.0], &[RigidTransform::identity(); 2]).unwrap();
        assert!(matches!(ate(&short, &short), Err(Error::InsufficientOverlap(_))));
    }

    #[test]
    fn ate_matches_noise_level() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let normal = rand_distr::Normal::new(0.0, 0.01).unwrap();
        use rand_distr::Distribution;
        let mut acc = 0.0;
        for _ in 0..20 {
            let truth = random_walk(&mut rng, 100);
            let noisy: Vec<RigidTransform> = truth
                .poses()
                .iter()
                .map(|p| RigidTransform::new(p.rotation, p.translation + Vector3::from_fn(|_, _| normal.sample(&mut rng))))
                .collect();
            let est = Trajectory::from_poses(&truth.timestamps(), &noisy).unwrap();
            acc += ate(&est, &truth).unwrap().rmse;
        }
        let expected = 0.01 * 3f64.sqrt();
        assert!(((acc / 20.0) - expected).abs() < 0.15 * expected);
    }

    #[test]
    fn rpe_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let t = random_walk(&mut rng, 30);
        assert!(rpe(&t, &t, RpeDelta::Frames(1)).unwrap().rmse < 1e-12);
        let g = random_rigid(&mut rng);
        assert!(rpe(&t.transformed(&g), &t, RpeDelta::Frames(3)).unwrap().rmse < 1e-9);

        // constant bias b in the body frame of every step
        let b = Vector3::new(0.01, -0.02, 0.005);
        let poses = t.poses();
        let mut biased = vec![poses[0]];
        for k in 1..poses.len() {
            let step = poses[k - 1].inverse().compose(&poses[k]);
            let step = RigidTransform::new(step.rotation, step.translation + b);
            biased.push(biased[k - 1].compose(&step));
        }
        let est = Trajectory::from_poses(&t.timestamps(), &biased).unwrap();
        let r = rpe(&est, &t, RpeDelta::Frames(1)).unwrap();
        assert!((r.rmse - b.norm()).abs() < 1e-12);
        assert!(rpe(&t, &t, RpeDelta::Frames(100)).is_err());
        let by_time = rpe(&t, &t, RpeDelta::Seconds(0.099)).unwrap();
        assert!(by_time.intervals.iter().all(|&(a, b)| b == a + 3));
    }

    #[test]
    fn report_definitions() {
        assert_eq!(improvement_pct(1.0, 1.0), Some(0.0));
        assert_eq!(improvement_pct(0.5, 1.0), Some(50.0));
        assert_eq!(improvement_pct(0.5, 0.0), None);

        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let truth = random_walk(&mut rng, 20);
        let drifted = random_walk(&mut rng, 20);
        let drifted = Trajectory::from_poses(&truth.timestamps(), &drifted.poses()).unwrap();
        let runs = vec![("base".to_string(), drifted.clone()), ("same".to_string(), drifted)];
        let rep = compare_report(&runs, &truth, 0, RpeDelta::Frames(1)).unwrap();
        let csv = rep.to_csv();
        assert!(csv.starts_with("run,ate_rmse_m,rpe_rmse_m,ate_improvement_pct,rpe_improvement_pct\n"));
        assert_eq!(csv.lines().count(), 3);
        assert!(csv.lines().nth(2).unwrap().ends_with(",0.000,0.000"));
        assert!(rep.to_text().contains("same"));
    }

    #[test]
    fn svg_has_three_layers() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let truth = random_walk(&mut rng, 20);
        let rep = ate(&truth, &truth).unwrap();
        let svg = trajectory_svg(&truth, &truth, &rep);
        assert!(svg.starts_with("<svg") && svg.contains("stroke=\"black\"") && svg.contains("stroke=\"blue\""));
        assert_eq!(svg.matches("<line").count(), 20);
    }
}
