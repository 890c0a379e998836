//! Rotation and rigid-transform algebra.
//!
//! Euler angles throughout the crate use the intrinsic X-Y'-Z'' convention,
//! `R = Rx(alpha) * Ry(beta) * Rz(gamma)`. To first order this is exactly the
//! off-diagonal layout of [`small_angle_transform`], so a [`TwistParams`]
//! rotation triple and an Euler triple agree for small angles.

use nalgebra::{Matrix3, Matrix4, Rotation3, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Angles below this magnitude (radians) are considered inside the regime
/// where the first-order rotation model is trustworthy.
pub const SMALL_ANGLE_LIMIT: f64 = 0.2;

/// Distance from +-pi/2 pitch at which Euler extraction is flagged.
pub const GIMBAL_MARGIN: f64 = 1e-6;

/// Unit quaternion stored as `(w, x, y, z)`.
///
/// `q` and `-q` describe the same rotation; [`UnitQuaternion::same_rotation`]
/// and [`UnitQuaternion::angle_to`] account for that.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnitQuaternion {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl UnitQuaternion {
    pub const IDENTITY: UnitQuaternion = UnitQuaternion {
        w: 1.0,
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    /// Normalizing constructor. Fails on zero or non-finite input.
    pub fn new(w: f64, x: f64, y: f64, z: f64) -> Result<Self> {
        let norm = (w * w + x * x + y * y + z * z).sqrt();
        if !norm.is_finite() || norm < 1e-12 {
            return Err(Error::InvalidInput(format!(
                "quaternion ({w}, {x}, {y}, {z}) cannot be normalized"
            )));
        }
        Ok(Self {
            w: w / norm,
            x: x / norm,
            y: y / norm,
            z: z / norm,
        })
    }

    pub fn from_axis_angle(axis: &Vector3<f64>, angle: f64) -> Self {
        let n = axis.norm();
        if n == 0.0 || angle == 0.0 {
            return Self::IDENTITY;
        }
        let (s, c) = (angle * 0.5).sin_cos();
        let a = axis / n;
        Self {
            w: c,
            x: a.x * s,
            y: a.y * s,
            z: a.z * s,
        }
    }

    /// Quaternion of the rotation `exp([v]x)`.
    pub fn from_rotation_vector(v: &Vector3<f64>) -> Self {
        Self::from_axis_angle(v, v.norm())
    }

    pub fn from_matrix(m: &Matrix3<f64>) -> Self {
        let q = nalgebra::UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(*m));
        Self {
            w: q.w,
            x: q.i,
            y: q.j,
            z: q.k,
        }
    }

    pub fn to_matrix(&self) -> Matrix3<f64> {
        let (w, x, y, z) = (self.w, self.x, self.y, self.z);
        Matrix3::new(
            1.0 - 2.0 * (y * y + z * z),
            2.0 * (x * y - w * z),
            2.0 * (x * z + w * y),
            2.0 * (x * y + w * z),
            1.0 - 2.0 * (x * x + z * z),
            2.0 * (y * z - w * x),
            2.0 * (x * z - w * y),
            2.0 * (y * z + w * x),
            1.0 - 2.0 * (x * x + y * y),
        )
    }

    pub fn norm(&self) -> f64 {
        (self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn conjugate(&self) -> Self {
        Self {
            w: self.w,
            x: -self.x,
            y: -self.y,
            z: -self.z,
        }
    }

    /// Hamilton product `self * rhs`.
    pub fn mul(&self, rhs: &Self) -> Self {
        let (a, b) = (self, rhs);
        Self {
            w: a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z,
            x: a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y,
            y: a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x,
            z: a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w,
        }
    }

    /// Sign-canonical form with `w >= 0`.
    pub fn canonical(&self) -> Self {
        if self.w < 0.0 {
            Self {
                w: -self.w,
                x: -self.x,
                y: -self.y,
                z: -self.z,
            }
        } else {
            *self
        }
    }

    /// Geodesic angle between the two rotations, in radians.
    pub fn angle_to(&self, other: &Self) -> f64 {
        let d = self.conjugate().mul(other);
        let v = (d.x * d.x + d.y * d.y + d.z * d.z).sqrt();
        2.0 * v.atan2(d.w.abs())
    }

    pub fn same_rotation(&self, other: &Self, tol: f64) -> bool {
        self.angle_to(other) <= tol
    }

    pub fn to_euler_xyz(&self) -> EulerXyz {
        EulerXyz::from_matrix(&self.to_matrix())
    }
}

/// Intrinsic X-Y'-Z'' Euler angles in radians.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EulerXyz {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    /// Pitch within [`GIMBAL_MARGIN`] of +-pi/2; `x` and `z` are then not separable.
    pub gimbal_adjacent: bool,
}

impl EulerXyz {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Self {
            x,
            y,
            z,
            gimbal_adjacent: (y.abs() - std::f64::consts::FRAC_PI_2).abs() < GIMBAL_MARGIN,
        }
    }

    pub fn from_matrix(r: &Matrix3<f64>) -> Self {
        let sy = r[(0, 2)].clamp(-1.0, 1.0);
        let y = sy.asin();
        let gimbal = (y.abs() - std::f64::consts::FRAC_PI_2).abs() < GIMBAL_MARGIN;
        let (x, z) = if gimbal {
            // only x + z (or z - x) is observable; attribute it all to x
            let sum = r[(1, 0)].atan2(r[(1, 1)]);
            (if sy > 0.0 { sum } else { -sum }, 0.0)
        } else {
            ((-r[(1, 2)]).atan2(r[(2, 2)]), (-r[(0, 1)]).atan2(r[(0, 0)]))
        };
        Self {
            x,
            y,
            z,
            gimbal_adjacent: gimbal,
        }
    }

    pub fn to_matrix(&self) -> Matrix3<f64> {
        rot_x(self.x) * rot_y(self.y) * rot_z(self.z)
    }

    pub fn as_vector(&self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.z)
    }
}

pub fn rot_x(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
}

pub fn rot_y(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

pub fn rot_z(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

/// Exact rotation `exp([v]x)`.
pub fn exp_so3(v: &Vector3<f64>) -> Matrix3<f64> {
    Rotation3::new(*v).into_inner()
}

/// Rotation vector of `r` (inverse of [`exp_so3`] for angles below pi).
pub fn log_so3(r: &Matrix3<f64>) -> Vector3<f64> {
    Rotation3::from_matrix_unchecked(*r).scaled_axis()
}

/// Rotation angle of `r` in radians, accurate for small angles.
pub fn rotation_angle(r: &Matrix3<f64>) -> f64 {
    let v = Vector3::new(
        r[(2, 1)] - r[(1, 2)],
        r[(0, 2)] - r[(2, 0)],
        r[(1, 0)] - r[(0, 1)],
    );
    let s = 0.5 * v.norm();
    let c = 0.5 * (r.trace() - 1.0);
    s.atan2(c)
}

/// Geodesic distance between two rotations, in radians.
pub fn geodesic_distance(a: &Matrix3<f64>, b: &Matrix3<f64>) -> f64 {
    rotation_angle(&(a.transpose() * b))
}

/// Incremental motion `(alpha, beta, gamma, tx, ty, tz)` of the linearized
/// point-to-plane step: small rotations about X, Y, Z in radians and a
/// translation in meters.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TwistParams {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub tx: f64,
    pub ty: f64,
    pub tz: f64,
}

impl TwistParams {
    pub fn from_vector(v: &Vector6<f64>) -> Self {
        Self {
            alpha: v[0],
            beta: v[1],
            gamma: v[2],
            tx: v[3],
            ty: v[4],
            tz: v[5],
        }
    }

    pub fn to_vector(&self) -> Vector6<f64> {
        Vector6::new(self.alpha, self.beta, self.gamma, self.tx, self.ty, self.tz)
    }

    pub fn rotation(&self) -> Vector3<f64> {
        Vector3::new(self.alpha, self.beta, self.gamma)
    }

    pub fn translation(&self) -> Vector3<f64> {
        Vector3::new(self.tx, self.ty, self.tz)
    }

    pub fn is_finite(&self) -> bool {
        self.to_vector().iter().all(|v| v.is_finite())
    }

    /// Diagnostic only: every angle is below [`SMALL_ANGLE_LIMIT`].
    pub fn is_small_angle(&self) -> bool {
        self.alpha.abs() < SMALL_ANGLE_LIMIT
            && self.beta.abs() < SMALL_ANGLE_LIMIT
            && self.gamma.abs() < SMALL_ANGLE_LIMIT
    }
}

/// First-order transform: identity plus the skew matrix of the angles, with
/// the translation in the last column. Not a rigid transform in general.
pub fn small_angle_transform(x: &TwistParams) -> Matrix4<f64> {
    let &TwistParams {
        alpha,
        beta,
        gamma,
        tx,
        ty,
        tz,
    } = x;
    Matrix4::new(
        1.0, -gamma, beta, tx, //
        gamma, 1.0, -alpha, ty, //
        -beta, alpha, 1.0, tz, //
        0.0, 0.0, 0.0, 1.0,
    )
}

/// Projects the upper-left block of `m` onto SO(3) with the polar
/// decomposition `R = U V^T`; the translation column is copied through.
pub fn orthonormalize(m: &Matrix4<f64>) -> Result<RigidTransform> {
    let block: Matrix3<f64> = m.fixed_view::<3, 3>(0, 0).into_owned();
    let det = block.determinant();
    if !det.is_finite() || det <= 0.0 {
        return Err(Error::DegenerateRotation);
    }
    let svd = block.svd(true, true);
    let (u, v_t) = match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => return Err(Error::DegenerateRotation),
    };
    let s = svd.singular_values;
    if s.min() <= 1e-12 * s.max() {
        return Err(Error::DegenerateRotation);
    }
    let rotation = u * v_t;
    if rotation.determinant() <= 0.0 {
        return Err(Error::DegenerateRotation);
    }
    let translation = Vector3::new(m[(0, 3)], m[(1, 3)], m[(2, 3)]);
    Ok(RigidTransform {
        rotation,
        translation,
    })
}

/// Element of SE(3): `p -> R p + t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn from_rotation(rotation: Matrix3<f64>) -> Self {
        Self::new(rotation, Vector3::zeros())
    }

    pub fn from_translation(translation: Vector3<f64>) -> Self {
        Self::new(Matrix3::identity(), translation)
    }

    pub fn from_quaternion(q: &UnitQuaternion, translation: Vector3<f64>) -> Self {
        Self::new(q.to_matrix(), translation)
    }

    pub fn quaternion(&self) -> UnitQuaternion {
        UnitQuaternion::from_matrix(&self.rotation)
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let rt = self.rotation.transpose();
        RigidTransform {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    pub fn apply_to_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn apply_to_vector(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * v
    }

    pub fn to_matrix(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    pub fn rotation_angle(&self) -> f64 {
        rotation_angle(&self.rotation)
    }

    /// Max deviation of `R^T R` from identity and of `det R` from one.
    pub fn orthonormality_error(&self) -> f64 {
        let e = (self.rotation.transpose() * self.rotation - Matrix3::identity()).abs().max();
        e.max((self.rotation.determinant() - 1.0).abs())
    }

    pub fn is_finite(&self) -> bool {
        self.rotation.iter().chain(self.translation.iter()).all(|v| v.is_finite())
    }
}
