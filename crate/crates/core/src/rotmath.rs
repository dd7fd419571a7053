//! Quaternion, Rodrigues-vector and rotation-matrix algebra.
//!
//! Conventions:
//! - quaternions are scalar-first `[s, η]` with the Hamilton product;
//! - the attitude quaternion `q` (navigation to body) maps a navigation-frame
//!   vector into the body frame by conjugation, `v_b = q* ∘ v_n ∘ q`;
//! - the matching rotation matrix `C` satisfies `v_b = C v_n`;
//! - a Rodrigues vector is scaled as `g = 2 tan(θ/2) u`.

use std::ops::{Mul, Neg};

use nalgebra::{Matrix3, Matrix4, Vector3, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `|Δs|` at or below this value is treated as a 180 degree rotation.
pub const RODRIGUES_SINGULARITY: f64 = 1e-6;

/// Rotation matrix `C` mapping navigation-frame vectors to the body frame.
pub type RotationMatrix = Matrix3<f64>;

/// Scalar-first quaternion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quaternion {
    pub s: f64,
    pub eta: Vector3<f64>,
}

/// Rodrigues (Gibbs) vector with the `2 tan(θ/2)` scaling.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RodriguesVector(pub Vector3<f64>);

impl Quaternion {
    pub fn new(s: f64, x: f64, y: f64, z: f64) -> Self {
        Self {
            s,
            eta: Vector3::new(x, y, z),
        }
    }

    pub fn identity() -> Self {
        Self::new(1.0, 0.0, 0.0, 0.0)
    }

    /// Embeds a 3-vector as the pure quaternion `[0, v]`.
    pub fn pure(v: &Vector3<f64>) -> Self {
        Self { s: 0.0, eta: *v }
    }

    pub fn from_vec4(v: &Vector4<f64>) -> Self {
        Self::new(v[0], v[1], v[2], v[3])
    }

    pub fn to_vec4(&self) -> Vector4<f64> {
        Vector4::new(self.s, self.eta.x, self.eta.y, self.eta.z)
    }

    /// Active rotation by `angle` radians about the unit axis `axis`.
    pub fn from_axis_angle(axis: &Vector3<f64>, angle: f64) -> Self {
        let u = axis.normalize();
        let half = 0.5 * angle;
        Self {
            s: half.cos(),
            eta: u * half.sin(),
        }
    }

    /// Rotation-vector exponential; `phi` is the rotation axis times the angle.
    pub fn from_rotation_vector(phi: &Vector3<f64>) -> Self {
        let angle = phi.norm();
        if angle < 1e-12 {
            Self {
                s: 1.0,
                eta: 0.5 * phi,
            }
            .normalize()
        } else {
            Self::from_axis_angle(phi, angle)
        }
    }

    pub fn norm(&self) -> f64 {
        (self.s * self.s + self.eta.norm_squared()).sqrt()
    }

    pub fn normalize(&self) -> Self {
        let n = self.norm();
        Self {
            s: self.s / n,
            eta: self.eta / n,
        }
    }

    pub fn conj(&self) -> Self {
        Self {
            s: self.s,
            eta: -self.eta,
        }
    }

    /// Same rotation with a nonnegative scalar part.
    pub fn canonical(&self) -> Self {
        if self.s < 0.0 {
            -*self
        } else {
            *self
        }
    }

    pub fn dot(&self, other: &Quaternion) -> f64 {
        self.s * other.s + self.eta.dot(&other.eta)
    }

    /// Left multiplication matrix: `q ∘ p = [q]⁺ p`.
    pub fn plus_matrix(&self) -> Matrix4<f64> {
        quat_left_matrix(&self.to_vec4())
    }

    /// Right multiplication matrix: `p ∘ q = [q]⁻ p`.
    pub fn minus_matrix(&self) -> Matrix4<f64> {
        quat_right_matrix(&self.to_vec4())
    }

    /// `q* ∘ [0, v] ∘ q`, i.e. the navigation-frame vector `v` seen in the body frame.
    pub fn rotate(&self, v: &Vector3<f64>) -> Vector3<f64> {
        conj_rotate(&self.to_vec4(), v)
    }

    pub fn to_rotmat(&self) -> RotationMatrix {
        quat_to_rotmat(self)
    }

    /// Total rotation angle in `[0, π]`.
    pub fn angle(&self) -> f64 {
        2.0 * self.eta.norm().atan2(self.s.abs())
    }
}

impl Mul for Quaternion {
    type Output = Quaternion;

    fn mul(self, rhs: Quaternion) -> Quaternion {
        quat_mul(&self, &rhs)
    }
}

impl Neg for Quaternion {
    type Output = Quaternion;

    fn neg(self) -> Quaternion {
        Quaternion {
            s: -self.s,
            eta: -self.eta,
        }
    }
}

impl Default for Quaternion {
    fn default() -> Self {
        Self::identity()
    }
}

/// Skew-symmetric matrix with `skew(a) b = a × b`.
pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// `[q]⁺` for a raw 4-vector.
pub fn quat_left_matrix(q: &Vector4<f64>) -> Matrix4<f64> {
    let (s, x, y, z) = (q[0], q[1], q[2], q[3]);
    Matrix4::new(
        s, -x, -y, -z, //
        x, s, -z, y, //
        y, z, s, -x, //
        z, -y, x, s,
    )
}

/// `[q]⁻` for a raw 4-vector.
pub fn quat_right_matrix(q: &Vector4<f64>) -> Matrix4<f64> {
    let (s, x, y, z) = (q[0], q[1], q[2], q[3]);
    Matrix4::new(
        s, -x, -y, -z, //
        x, s, z, -y, //
        y, -z, s, x, //
        z, y, -x, s,
    )
}

pub fn quat_mul(q1: &Quaternion, q2: &Quaternion) -> Quaternion {
    Quaternion {
        s: q1.s * q2.s - q1.eta.dot(&q2.eta),
        eta: q1.s * q2.eta + q2.s * q1.eta + q1.eta.cross(&q2.eta),
    }
}

pub fn quat_conj(q: &Quaternion) -> Quaternion {
    q.conj()
}

pub fn rotate_vector(q: &Quaternion, v_n: &Vector3<f64>) -> Vector3<f64> {
    q.rotate(v_n)
}

/// Vector part of `q* ∘ [0, v] ∘ q` for a possibly unnormalized quaternion
/// stored as `[s, x, y, z]`. The result scales with `‖q‖²`.
pub fn conj_rotate(q: &Vector4<f64>, v: &Vector3<f64>) -> Vector3<f64> {
    let s = q[0];
    let eta = Vector3::new(q[1], q[2], q[3]);
    (s * s - eta.norm_squared()) * v + 2.0 * eta.dot(v) * eta - 2.0 * s * eta.cross(v)
}

/// Jacobian of [`conj_rotate`] with respect to the four quaternion entries.
pub fn conj_rotate_jacobian(q: &Vector4<f64>, v: &Vector3<f64>) -> nalgebra::Matrix3x4<f64> {
    let s = q[0];
    let eta = Vector3::new(q[1], q[2], q[3]);
    let mut j = nalgebra::Matrix3x4::zeros();
    let ds = 2.0 * s * v - 2.0 * eta.cross(v);
    j.set_column(0, &ds);
    // d/dη of (-η·η) v + 2 (η·v) η - 2 s η × v
    let deta = -2.0 * v * eta.transpose()
        + 2.0 * (eta * v.transpose() + Matrix3::identity() * eta.dot(v))
        + 2.0 * s * skew(v);
    j.fixed_view_mut::<3, 3>(0, 1).copy_from(&deta);
    j
}

pub fn quat_to_rotmat(q: &Quaternion) -> RotationMatrix {
    let s = q.s;
    let eta = q.eta;
    Matrix3::identity() * (s * s - eta.norm_squared()) + 2.0 * eta * eta.transpose()
        - 2.0 * s * skew(&eta)
}

pub fn rodrigues_to_quat(g: &RodriguesVector) -> Quaternion {
    let n = (4.0 + g.0.norm_squared()).sqrt();
    Quaternion {
        s: 2.0 / n,
        eta: g.0 / n,
    }
}

pub fn quat_to_rodrigues(dq: &Quaternion) -> Result<RodriguesVector> {
    if dq.s.abs() <= RODRIGUES_SINGULARITY {
        return Err(Error::SingularRotation { scalar: dq.s });
    }
    Ok(RodriguesVector(2.0 * dq.eta / dq.s))
}

pub fn rodrigues_to_rotmat(g: &RodriguesVector) -> RotationMatrix {
    quat_to_rotmat(&rodrigues_to_quat(g))
}

/// Small-angle attitude error `2 [q_true ∘ q_est*]₂:₄` in radians.
///
/// The error rotation is resolved in the navigation frame: `q_true ≈ δq ∘ q_est`
/// with `δq ≈ [1, δψ/2]`.
pub fn attitude_error(q_true: &Quaternion, q_est: &Quaternion) -> Vector3<f64> {
    2.0 * quat_mul(q_true, &q_est.conj()).eta
}

/// Total angle of the rotation separating two attitudes, in `[0, π]`.
pub fn rotation_between(q_a: &Quaternion, q_b: &Quaternion) -> f64 {
    quat_mul(q_a, &q_b.conj()).angle()
}

/// Active rotation about navigation axis `axis` (0 = North, 1 = Up, 2 = East).
fn axis_quat(axis: usize, angle: f64) -> Quaternion {
    let mut u = Vector3::zeros();
    u[axis] = 1.0;
    Quaternion::from_axis_angle(&u, angle)
}

/// Builds a rotation from `[roll, yaw, pitch]` (radians) about the North, Up
/// and East axes, composed as yaw ∘ pitch ∘ roll.
pub fn quat_from_euler_nue(angles: &Vector3<f64>) -> Quaternion {
    axis_quat(1, angles[1]) * axis_quat(2, angles[2]) * axis_quat(0, angles[0])
}

/// Inverse of [`quat_from_euler_nue`]: returns `[roll, yaw, pitch]` in radians.
pub fn euler_nue(q: &Quaternion) -> Vector3<f64> {
    // active rotation matrix R = C^T
    let r = quat_to_rotmat(q).transpose();
    let pitch = r[(1, 0)].clamp(-1.0, 1.0).asin();
    let roll = (-r[(1, 2)]).atan2(r[(1, 1)]);
    let yaw = (-r[(2, 0)]).atan2(r[(0, 0)]);
    Vector3::new(roll, yaw, pitch)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn unit_quat() -> impl Strategy<Value = Quaternion> {
        (
            -1.0..1.0f64,
            -1.0..1.0f64,
            -1.0..1.0f64,
            -1.0..1.0f64,
        )
            .prop_filter("nonzero", |(a, b, c, d)| a * a + b * b + c * c + d * d > 1e-3)
            .prop_map(|(a, b, c, d)| Quaternion::new(a, b, c, d).normalize())
    }

    fn vec3(bound: f64) -> impl Strategy<Value = Vector3<f64>> {
        (-bound..bound, -bound..bound, -bound..bound).prop_map(|(a, b, c)| Vector3::new(a, b, c))
    }

    fn assert_quat_eq(a: &Quaternion, b: &Quaternion, tol: f64) {
        assert_relative_eq!(a.to_vec4(), b.to_vec4(), epsilon = tol);
    }

    #[test]
    fn identity_and_unit_products() {
        let q = Quaternion::new(0.3, -0.2, 0.9, 0.1).normalize();
        assert_quat_eq(&(q * Quaternion::identity()), &q, 1e-15);
        let i = Quaternion::new(0.0, 1.0, 0.0, 0.0);
        assert_quat_eq(&(i * i), &Quaternion::new(-1.0, 0.0, 0.0, 0.0), 0.0);
    }

    #[test]
    fn conjugate_examples() {
        assert_eq!(Quaternion::identity().conj(), Quaternion::identity());
        assert_eq!(
            Quaternion::new(0.0, 1.0, 0.0, 0.0).conj(),
            Quaternion::new(0.0, -1.0, 0.0, 0.0)
        );
    }

    #[test]
    fn rotate_identity_and_quarter_turn() {
        let v = Vector3::new(1.0, 2.0, 3.0);
        assert_eq!(Quaternion::identity().rotate(&v), v);
        // Active 90° about axis 3; the body frame sees the navigation x axis at -y.
        let q = Quaternion::from_axis_angle(&Vector3::z(), std::f64::consts::FRAC_PI_2);
        // by hand: q* ∘ [0,1,0,0] ∘ q with q = [c, 0, 0, c], c = √2/2
        let c = std::f64::consts::FRAC_1_SQRT_2;
        let lhs = Quaternion::new(c, 0.0, 0.0, -c) * Quaternion::new(0.0, 1.0, 0.0, 0.0);
        let by_hand = lhs * Quaternion::new(c, 0.0, 0.0, c);
        let out = q.rotate(&Vector3::x());
        assert_relative_eq!(out, by_hand.eta, epsilon = 1e-15);
        assert_relative_eq!(out, Vector3::new(0.0, -1.0, 0.0), epsilon = 1e-15);
        assert_relative_eq!(q.to_rotmat() * Vector3::x(), out, epsilon = 1e-15);
    }

    #[test]
    fn rotmat_examples() {
        assert_eq!(quat_to_rotmat(&Quaternion::identity()), Matrix3::identity());
        let q = Quaternion::new(0.4, 0.1, -0.7, 0.2).normalize();
        assert_relative_eq!(quat_to_rotmat(&q), quat_to_rotmat(&-q), epsilon = 1e-15);
    }

    #[test]
    fn rodrigues_examples() {
        assert_eq!(
            rodrigues_to_quat(&RodriguesVector(Vector3::zeros())),
            Quaternion::identity()
        );
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let q = rodrigues_to_quat(&RodriguesVector(Vector3::new(2.0, 0.0, 0.0)));
        assert_quat_eq(&q, &Quaternion::new(h, h, 0.0, 0.0), 1e-15);
        let g = quat_to_rodrigues(&Quaternion::new(h, h, 0.0, 0.0)).unwrap();
        assert_relative_eq!(g.0, Vector3::new(2.0, 0.0, 0.0), epsilon = 1e-15);
        assert_eq!(
            quat_to_rodrigues(&Quaternion::identity()).unwrap().0,
            Vector3::zeros()
        );
        let err = quat_to_rodrigues(&Quaternion::new(1e-7, 1.0, 0.0, 0.0)).unwrap_err();
        assert!(matches!(err, Error::SingularRotation { .. }));
    }

    #[test]
    fn rodrigues_rotmat_composition() {
        for g in [
            Vector3::zeros(),
            Vector3::new(2.0, 0.0, 0.0),
            Vector3::new(-0.3, 0.5, 1.7),
        ] {
            let g = RodriguesVector(g);
            assert_relative_eq!(
                rodrigues_to_rotmat(&g),
                quat_to_rotmat(&rodrigues_to_quat(&g)),
                epsilon = 1e-15
            );
        }
    }

    #[test]
    fn attitude_error_examples() {
        let q = Quaternion::new(0.2, 0.5, -0.1, 0.8).normalize();
        assert_relative_eq!(attitude_error(&q, &q), Vector3::zeros(), epsilon = 1e-15);
        let theta = 1e-3;
        let q_est = Quaternion::from_axis_angle(&Vector3::x(), theta) * q;
        let e = attitude_error(&q, &q_est);
        assert!((e.norm() - theta).abs() < 1e-9);
        let flipped = attitude_error(&q, &-q_est);
        assert_relative_eq!(flipped, -e, epsilon = 1e-15);
    }

    #[test]
    fn euler_round_trip() {
        let angles = Vector3::new(0.1, -2.5, 0.3);
        let q = quat_from_euler_nue(&angles);
        assert_relative_eq!(euler_nue(&q), angles, epsilon = 1e-12);
        // small angles agree with the attitude error vector to second order
        let small = Vector3::new(1e-4, -2e-4, 3e-4);
        let e = attitude_error(&quat_from_euler_nue(&small), &Quaternion::identity());
        assert_relative_eq!(e, small, epsilon = 1e-7);
    }

    #[test]
    fn conj_rotate_jacobian_matches_fd() {
        let q = Vector4::new(0.9, -0.3, 0.2, 0.4);
        let v = Vector3::new(0.3, -1.2, 0.5);
        let j = conj_rotate_jacobian(&q, &v);
        let h = 1e-6;
        for k in 0..4 {
            let mut qp = q;
            let mut qm = q;
            qp[k] += h;
            qm[k] -= h;
            let fd = (conj_rotate(&qp, &v) - conj_rotate(&qm, &v)) / (2.0 * h);
            assert_relative_eq!(j.column(k).into_owned(), fd, epsilon = 1e-8);
        }
    }

    proptest! {
        #[test]
        fn mul_matches_matrix_forms(q1 in unit_quat(), q2 in unit_quat()) {
            let p = quat_mul(&q1, &q2).to_vec4();
            prop_assert!((q1.plus_matrix() * q2.to_vec4() - p).norm() < 1e-14);
            prop_assert!((q2.minus_matrix() * q1.to_vec4() - p).norm() < 1e-14);
        }

        #[test]
        fn mul_is_associative(a in unit_quat(), b in unit_quat(), c in unit_quat()) {
            let l = (a * b) * c;
            let r = a * (b * c);
            prop_assert!((l.to_vec4() - r.to_vec4()).norm() < 1e-12);
        }

        #[test]
        fn conj_gives_identity(q in unit_quat()) {
            let p = q * q.conj();
            prop_assert!((p.to_vec4() - Quaternion::identity().to_vec4()).norm() < 1e-12);
        }

        #[test]
        fn rotation_preserves_norm(q in unit_quat(), v in vec3(10.0)) {
            let out = rotate_vector(&q, &v);
            prop_assert!((out.norm() - v.norm()).abs() < 1e-12);
            prop_assert!((quat_to_rotmat(&q) * v - out).norm() < 1e-12);
        }

        #[test]
        fn rotmat_is_orthonormal(q in unit_quat()) {
            let c = quat_to_rotmat(&q);
            prop_assert!((c.transpose() * c - Matrix3::identity()).norm() < 1e-12);
            prop_assert!((c.determinant() - 1.0).abs() < 1e-12);
            for k in 0..3 {
                prop_assert!((c.column(k).norm() - 1.0).abs() < 1e-12);
            }
        }

        #[test]
        fn composition_order(q1 in unit_quat(), q2 in unit_quat()) {
            let lhs = quat_to_rotmat(&(q1 * q2));
            let rhs = quat_to_rotmat(&q2) * quat_to_rotmat(&q1);
            prop_assert!((lhs - rhs).norm() < 1e-12);
        }

        #[test]
        fn rodrigues_round_trip(g in vec3(57.0)) {
            prop_assume!(g.norm() <= 100.0);
            let q = rodrigues_to_quat(&RodriguesVector(g));
            prop_assert!((q.norm() - 1.0).abs() < 1e-14);
            let back = quat_to_rodrigues(&q).unwrap();
            prop_assert!((back.0 - g).norm() < 1e-12);
        }
    }
}
