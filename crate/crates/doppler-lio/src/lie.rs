//! Minimal SE(3)/SO(3) machinery: skew operator, 6-vector wedge, closed-form
//! exponential map, and the 6x6 adjoint of a rigid transform.
//!
//! Twists are ordered (translational, angular) everywhere in this crate.

use nalgebra::{Matrix3, Matrix4, Matrix6, Vector3, Vector6};

use crate::error::{Error, Result};

/// Angle below which the exponential map switches to its Taylor-series branch.
const SMALL_ANGLE: f64 = 1e-7;

/// Constructs the skew-symmetric matrix `[v]x` such that `[v]x u = v x u`.
#[inline]
pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(
        0.0, -v.z, v.y, //
        v.z, 0.0, -v.x, //
        -v.y, v.x, 0.0,
    )
}

/// 6-DOF body velocity: translational part `nu` (m/s) and angular part
/// `omega` (rad/s), both expressed in the vehicle frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BodyVelocity {
    pub nu: Vector3<f64>,
    pub omega: Vector3<f64>,
}

impl BodyVelocity {
    pub fn new(nu: Vector3<f64>, omega: Vector3<f64>) -> Self {
        Self { nu, omega }
    }

    pub fn zero() -> Self {
        Self {
            nu: Vector3::zeros(),
            omega: Vector3::zeros(),
        }
    }

    /// Stacked 6-vector in (nu, omega) order.
    pub fn to_vector(&self) -> Vector6<f64> {
        Vector6::new(
            self.nu.x,
            self.nu.y,
            self.nu.z,
            self.omega.x,
            self.omega.y,
            self.omega.z,
        )
    }

    pub fn from_vector(v: &Vector6<f64>) -> Self {
        Self {
            nu: Vector3::new(v[0], v[1], v[2]),
            omega: Vector3::new(v[3], v[4], v[5]),
        }
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            nu: self.nu * s,
            omega: self.omega * s,
        }
    }

    /// Forward translational speed component (vehicle x-axis).
    pub fn forward_speed(&self) -> f64 {
        self.nu.x
    }

    pub fn is_finite(&self) -> bool {
        self.nu
            .iter()
            .chain(self.omega.iter())
            .all(|x| x.is_finite())
    }
}

/// A rigid transform: orthonormal rotation plus translation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl RigidTransform {
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

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

    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// Deviation of the rotation block from special orthogonality.
    pub fn orthonormality_defect(&self) -> f64 {
        let d = self.rotation.transpose() * self.rotation - Matrix3::identity();
        let det = self.rotation.determinant() - 1.0;
        d.norm().max(det.abs())
    }

    /// Re-projects the rotation block onto SO(3) via polar decomposition.
    pub fn orthonormalized(&self) -> RigidTransform {
        let svd = self.rotation.svd(true, true);
        let u = svd.u.expect("svd with u");
        let vt = svd.v_t.expect("svd with v_t");
        let mut r = u * vt;
        if r.determinant() < 0.0 {
            // Flip the weakest singular direction to stay in SO(3).
            let mut u2 = u;
            u2.column_mut(2).neg_mut();
            r = u2 * vt;
        }
        RigidTransform {
            rotation: r,
            translation: self.translation,
        }
    }
}

/// 6x6 adjoint of a rigid transform, block structure `[R, t^ R; 0, R]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Adjoint6(pub Matrix6<f64>);

impl Adjoint6 {
    pub fn matrix(&self) -> &Matrix6<f64> {
        &self.0
    }

    /// Transports a twist between frames: `w_out = Ad * w_in`.
    pub fn apply(&self, w: &BodyVelocity) -> BodyVelocity {
        BodyVelocity::from_vector(&(self.0 * w.to_vector()))
    }
}

/// The wedge overloading for twists: maps a 6-vector to its 4x4 generator,
/// `[omega^, nu; 0, 0]`.
pub fn wedge6(w: &BodyVelocity) -> Matrix4<f64> {
    let mut m = Matrix4::zeros();
    m.fixed_view_mut::<3, 3>(0, 0).copy_from(&skew(&w.omega));
    m.fixed_view_mut::<3, 1>(0, 3).copy_from(&w.nu);
    m
}

/// Closed-form SE(3) exponential of a wedge matrix (Rodrigues rotation plus
/// left-Jacobian translation), with a Taylor branch near zero angle.
pub fn exp_se3(xi: &Matrix4<f64>) -> RigidTransform {
    let omega = Vector3::new(xi[(2, 1)], xi[(0, 2)], xi[(1, 0)]);
    let nu = Vector3::new(xi[(0, 3)], xi[(1, 3)], xi[(2, 3)]);

    let theta = omega.norm();
    let a = skew(&omega);
    let a2 = a * a;

    let (rot, jac) = if theta < SMALL_ANGLE {
        // Second-order Taylor expansions; exact to well below 1e-12 here.
        let rot = Matrix3::identity() + a + a2 * 0.5;
        let jac = Matrix3::identity() + a * 0.5 + a2 / 6.0;
        (rot, jac)
    } else {
        let t2 = theta * theta;
        let s = theta.sin();
        // 1 - cos via the half-angle form, which does not cancel.
        let half_sin = (theta * 0.5).sin();
        let one_minus_cos = 2.0 * half_sin * half_sin;
        // (theta - sin theta) / theta^3 cancels below ~1e-4; use its series.
        let c2 = if theta < 1e-4 {
            1.0 / 6.0 - t2 / 120.0
        } else {
            (theta - s) / (t2 * theta)
        };
        let rot = Matrix3::identity() + a * (s / theta) + a2 * (one_minus_cos / t2);
        let jac = Matrix3::identity() + a * (one_minus_cos / t2) + a2 * c2;
        (rot, jac)
    };

    RigidTransform {
        rotation: rot,
        translation: jac * nu,
    }
}

/// Exponential of a twist, `exp((w)^)`.
pub fn exp_twist(w: &BodyVelocity) -> RigidTransform {
    exp_se3(&wedge6(w))
}

/// Inverse of [`exp_twist`]: recovers the twist of a rigid transform.
pub fn log_se3(t: &RigidTransform) -> BodyVelocity {
    let r = &t.rotation;
    let cos_theta = ((r.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let theta = cos_theta.acos();

    let omega = if theta < SMALL_ANGLE {
        // First order: R ~ I + omega^.
        Vector3::new(
            (r[(2, 1)] - r[(1, 2)]) * 0.5,
            (r[(0, 2)] - r[(2, 0)]) * 0.5,
            (r[(1, 0)] - r[(0, 1)]) * 0.5,
        )
    } else {
        let axis = Vector3::new(
            r[(2, 1)] - r[(1, 2)],
            r[(0, 2)] - r[(2, 0)],
            r[(1, 0)] - r[(0, 1)],
        ) * (0.5 / theta.sin());
        axis * theta
    };

    let a = skew(&omega);
    let a2 = a * a;
    let jac_inv = if theta < SMALL_ANGLE {
        Matrix3::identity() - a * 0.5 + a2 / 12.0
    } else {
        let t2 = theta * theta;
        let half = theta * 0.5;
        let coeff = (1.0 - half * half.cos() / half.sin()) / t2;
        Matrix3::identity() - a * 0.5 + a2 * coeff
    };

    BodyVelocity {
        nu: jac_inv * t.translation,
        omega,
    }
}

/// Adjoint of a rigid transform: `[R, t^ R; 0, R]`.
pub fn adjoint(t: &RigidTransform) -> Result<Adjoint6> {
    if t.orthonormality_defect() > 1e-9 {
        return Err(Error::Numerical(
            "adjoint of a transform whose rotation is not orthonormal".into(),
        ));
    }
    let mut m = Matrix6::zeros();
    let tr = skew(&t.translation) * t.rotation;
    m.fixed_view_mut::<3, 3>(0, 0).copy_from(&t.rotation);
    m.fixed_view_mut::<3, 3>(0, 3).copy_from(&tr);
    m.fixed_view_mut::<3, 3>(3, 3).copy_from(&t.rotation);
    Ok(Adjoint6(m))
}

/// Rotation about a unit axis by `angle` radians.
pub fn rotation_about(axis: &Vector3<f64>, angle: f64) -> Matrix3<f64> {
    let w = axis.normalize() * angle;
    exp_se3(&wedge6(&BodyVelocity::new(Vector3::zeros(), w))).rotation
}

/// Rotation from roll-pitch-yaw angles (radians), composed as Rz * Ry * Rx.
pub fn rotation_rpy(roll: f64, pitch: f64, yaw: f64) -> Matrix3<f64> {
    rotation_about(&Vector3::z(), yaw)
        * rotation_about(&Vector3::y(), pitch)
        * rotation_about(&Vector3::x(), roll)
}
