//! Orientation priors: ground-truth pass-through and a synthetic systematic
//! error model matching a characterized low-cost IMU (about 3 degrees on the
//! tilt axes, 10 degrees on heading, no random component).

use std::path::Path;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::{save_trajectory, Trajectory, TrajectoryEntry};
use crate::error::{Error, Result};
use crate::geom::{log_so3, RigidTransform, UnitQuaternion};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OrientationSource {
    GroundTruth,
    SyntheticNoisy,
    External,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrientationSample {
    pub timestamp: f64,
    pub q: UnitQuaternion,
    pub source: OrientationSource,
    /// The true orientation sat next to the Euler gimbal singularity.
    pub gimbal_adjacent: bool,
}

/// Bounded, orientation-dependent bias per world axis.
///
/// For true Euler XYZ angles `theta`, the error on axis `a` is
/// `amp_a * sin(harmonics * theta_a + phase_a)`, applied as a rotation
/// vector in the world frame, plus optional Gaussian noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ImuNoiseModel {
    /// Degrees.
    pub amp_x: f64,
    pub amp_y: f64,
    pub amp_z: f64,
    /// Radians.
    pub phase_x: f64,
    pub phase_y: f64,
    pub phase_z: f64,
    pub harmonics: u32,
    /// Degrees, per axis.
    pub random_sigma: f64,
    /// Drives the Gaussian term of noisy streams.
    pub seed: u64,
}

impl Default for ImuNoiseModel {
    fn default() -> Self {
        Self::with_seed(0)
    }
}

impl ImuNoiseModel {
    /// Default amplitudes with phases drawn from `seed`.
    pub fn with_seed(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tau = std::f64::consts::TAU;
        Self {
            amp_x: 3.0,
            amp_y: 3.0,
            amp_z: 10.0,
            phase_x: rng.random_range(0.0..tau),
            phase_y: rng.random_range(0.0..tau),
            phase_z: rng.random_range(0.0..tau),
            harmonics: 1,
            random_sigma: 0.0,
            seed,
        }
    }

    pub fn zero() -> Self {
        Self {
            amp_x: 0.0,
            amp_y: 0.0,
            amp_z: 0.0,
            ..Self::with_seed(0)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let vals = [self.amp_x, self.amp_y, self.amp_z, self.random_sigma];
        if vals.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::Config("IMU amplitudes and sigma must be finite and >= 0".into()));
        }
        Ok(())
    }

    pub fn amplitudes_rad(&self) -> Vector3<f64> {
        Vector3::new(self.amp_x, self.amp_y, self.amp_z).map(f64::to_radians)
    }

    /// Systematic error (rad) for true orientation `q`.
    pub fn systematic_error(&self, q: &UnitQuaternion) -> Vector3<f64> {
        let e = q.to_euler_xyz();
        let h = self.harmonics as f64;
        let amp = self.amplitudes_rad();
        Vector3::new(
            amp.x * (h * e.x + self.phase_x).sin(),
            amp.y * (h * e.y + self.phase_y).sin(),
            amp.z * (h * e.z + self.phase_z).sin(),
        )
    }
}

fn perturb(q: &UnitQuaternion, e: &Vector3<f64>) -> UnitQuaternion {
    if *e == Vector3::zeros() {
        return *q;
    }
    UnitQuaternion::from_rotation_vector(e).mul(q)
}

/// Systematic part only; a pure function of `q_true`.
pub fn apply_noise(q_true: &UnitQuaternion, model: &ImuNoiseModel) -> UnitQuaternion {
    perturb(q_true, &model.systematic_error(q_true))
}

/// Systematic part plus Gaussian noise drawn from `rng` when `random_sigma > 0`.
pub fn apply_noise_with_rng<R: Rng>(q_true: &UnitQuaternion, model: &ImuNoiseModel, rng: &mut R) -> UnitQuaternion {
    let mut e = model.systematic_error(q_true);
    if model.random_sigma > 0.0 {
        let n = Normal::new(0.0, model.random_sigma.to_radians()).expect("sigma is positive and finite");
        e += Vector3::from_fn(|_, _| n.sample(rng));
    }
    perturb(q_true, &e)
}

/// World-axis rotation vector taking `truth` to `measured`, in degrees.
pub fn axis_deviation_deg(measured: &UnitQuaternion, truth: &UnitQuaternion) -> Vector3<f64> {
    log_so3(&(measured.to_matrix() * truth.to_matrix().transpose())).map(f64::to_degrees)
}

/// One orientation sample per pose, perturbed when a model is given.
pub fn stream_from_trajectory(traj: &Trajectory, model: Option<&ImuNoiseModel>) -> Result<Vec<OrientationSample>> {
    if traj.is_empty() {
        return Err(Error::InvalidInput("trajectory is empty".into()));
    }
    if let Some(m) = model {
        m.validate()?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(model.map_or(0, |m| m.seed));
    Ok(traj
        .entries()
        .iter()
        .map(|e| {
            let truth = e.pose.quaternion();
            let gimbal_adjacent = truth.to_euler_xyz().gimbal_adjacent;
            let (q, source) = match model {
                Some(m) => (apply_noise_with_rng(&truth, m, &mut rng), OrientationSource::SyntheticNoisy),
                None => (truth, OrientationSource::GroundTruth),
            };
            OrientationSample {
                timestamp: e.timestamp,
                q,
                source,
                gimbal_adjacent,
            }
        })
        .collect())
}

/// Ground-truth-format trajectory carrying the sample orientations and the
/// truth positions.
pub fn noisy_trajectory(truth: &Trajectory, samples: &[OrientationSample]) -> Result<Trajectory> {
    if truth.len() != samples.len() {
        return Err(Error::InvalidInput("sample count does not match trajectory".into()));
    }
    Trajectory::new(
        truth
            .entries()
            .iter()
            .zip(samples)
            .map(|(e, s)| TrajectoryEntry {
                timestamp: e.timestamp,
                pose: RigidTransform::from_quaternion(&s.q, e.pose.translation),
            })
            .collect(),
    )
}

pub fn export_noisy(truth: &Trajectory, samples: &[OrientationSample], path: &Path) -> Result<()> {
    save_trajectory(&noisy_trajectory(truth, samples)?, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::exp_so3;
    use proptest::prelude::*;
    use rand::Rng;

    fn random_q(rng: &mut ChaCha8Rng) -> UnitQuaternion {
        let v = Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0));
        UnitQuaternion::from_rotation_vector(&(v * rng.random_range(0.0..std::f64::consts::PI)))
    }

    #[test]
    fn zero_model_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let q = random_q(&mut rng);
            assert_eq!(apply_noise(&q, &ImuNoiseModel::zero()), q);
        }
    }

    #[test]
    fn deviation_bound_over_random_orientations() {
        let model = ImuNoiseModel::with_seed(11);
        let bound = Vector3::new(3.0f64, 3.0, 10.0).norm().to_radians();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10_000 {
            let q = random_q(&mut rng);
            let n = apply_noise(&q, &model);
            assert!(n.angle_to(&q) <= bound + 1e-12);
            let dev = axis_deviation_deg(&n, &q);
            assert!(dev.x.abs() <= 3.0 + 1e-9 && dev.y.abs() <= 3.0 + 1e-9 && dev.z.abs() <= 10.0 + 1e-9);
        }
    }

    #[test]
    fn systematic_error_is_repeatable() {
        let model = ImuNoiseModel::with_seed(2);
        let q = UnitQuaternion::from_rotation_vector(&Vector3::new(0.3, -0.7, 1.1));
        assert_eq!(apply_noise(&q, &model), apply_noise(&q, &model));
        assert_ne!(apply_noise(&q, &model), q);
    }

    #[test]
    fn streams() {
        let poses: Vec<RigidTransform> = (0..20)
            .map(|k| RigidTransform::new(exp_so3(&Vector3::new(0.0, k as f64 * 0.05, 0.01)), Vector3::zeros()))
            .collect();
        let ts: Vec<f64> = (0..20).map(|k| k as f64 * 0.1).collect();
        let traj = Trajectory::from_poses(&ts, &poses).unwrap();
        let clean = stream_from_trajectory(&traj, None).unwrap();
        for (s, e) in clean.iter().zip(traj.entries()) {
            assert_eq!(s.source, OrientationSource::GroundTruth);
            assert!(s.q.angle_to(&e.pose.quaternion()) < 1e-12);
        }
        let mut model = ImuNoiseModel::with_seed(4);
        model.random_sigma = 0.5;
        let a = stream_from_trajectory(&traj, Some(&model)).unwrap();
        let b = stream_from_trajectory(&traj, Some(&model)).unwrap();
        assert_eq!(a, b);
        assert!(stream_from_trajectory(&Trajectory::default(), None).is_err());

        let noisy = noisy_trajectory(&traj, &a).unwrap();
        assert_eq!(noisy.positions(), traj.positions());
    }

    proptest! {
        #[test]
        fn per_axis_within_amplitudes(r in prop::array::uniform3(-3.0f64..3.0), seed in 0u64..1000) {
            let model = ImuNoiseModel::with_seed(seed);
            let q = UnitQuaternion::from_rotation_vector(&Vector3::from(r));
            let d = axis_deviation_deg(&apply_noise(&q, &model), &q);
            prop_assert!(d.x.abs() <= model.amp_x + 1e-9);
            prop_assert!(d.y.abs() <= model.amp_y + 1e-9);
            prop_assert!(d.z.abs() <= model.amp_z + 1e-9);
        }
    }
}
