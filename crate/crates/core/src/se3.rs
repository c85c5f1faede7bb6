//! Lie group machinery for SO(3), SE(3), and unit quaternions.
//!
//! Twists are ordered `(rho, phi)`: translational part first, rotational part
//! second. All exponential-map coefficient ratios switch to a three-term
//! Taylor expansion below an angle of `1e-4` rad so the seam at zero stays
//! continuous to machine precision.
//!
//! Quaternions are stored **scalar-last** `(e1, e2, e3, q)`, composed with
//! Shuster's product so that quaternions and rotation matrices compose in the
//! same order. Note that under these conventions the quaternion exponential
//! carries a negated vector part relative to the Hamilton convention used by
//! most libraries.

use nalgebra::{Matrix3, Matrix4, Matrix6, Vector3, Vector4, Vector6};
use serde::{Deserialize, Serialize};

/// Angle below which trigonometric coefficient ratios use Taylor fallbacks.
pub const TAYLOR_EPS: f64 = 1e-4;

/// Frobenius drift above which a rotation is re-orthonormalized.
const ORTHO_DRIFT: f64 = 1e-7;

/// A rotation matrix in SO(3).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rot3(Matrix3<f64>);

impl Rot3 {
    pub fn identity() -> Self {
        Rot3(Matrix3::identity())
    }

    /// Wraps a matrix, re-orthonormalizing when it has drifted.
    pub fn from_matrix(m: Matrix3<f64>) -> Self {
        let drift = (m.transpose() * m - Matrix3::identity()).norm();
        if drift > ORTHO_DRIFT {
            Rot3(polar_orthonormalize(&m))
        } else {
            Rot3(m)
        }
    }

    /// Wraps a matrix that is already orthonormal by construction.
    pub(crate) fn from_matrix_unchecked(m: Matrix3<f64>) -> Self {
        Rot3(m)
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn transpose(&self) -> Rot3 {
        Rot3(self.0.transpose())
    }

    pub fn compose(&self, other: &Rot3) -> Rot3 {
        Rot3::from_matrix(self.0 * other.0)
    }

    pub fn rotate(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.0 * v
    }

    /// Geodesic angle to another rotation, in radians.
    pub fn angle_to(&self, other: &Rot3) -> f64 {
        log_so3(&self.compose(&other.transpose())).norm()
    }
}

/// A rigid-body transformation in SE(3): rotation plus translation.
///
/// Stored as `(Rot3, Vector3)`; the homogeneous 4x4 view is built on demand.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub rot: Rot3,
    pub trans: Vector3<f64>,
}

impl Pose {
    pub fn identity() -> Self {
        Pose {
            rot: Rot3::identity(),
            trans: Vector3::zeros(),
        }
    }

    pub fn new(rot: Rot3, trans: Vector3<f64>) -> Self {
        Pose { rot, trans }
    }

    pub fn matrix(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(self.rot.matrix());
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.trans);
        m
    }

    pub fn from_matrix(m: &Matrix4<f64>) -> Self {
        Pose {
            rot: Rot3::from_matrix(m.fixed_view::<3, 3>(0, 0).into_owned()),
            trans: m.fixed_view::<3, 1>(0, 3).into_owned(),
        }
    }

    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rot: self.rot.compose(&other.rot),
            trans: self.rot.rotate(&other.trans) + self.trans,
        }
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.rot.transpose();
        Pose {
            trans: -rt.rotate(&self.trans),
            rot: rt,
        }
    }

    /// Pose-point composition `T ⊗ p`.
    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rot.rotate(p) + self.trans
    }
}

/// A compact se(3) element `(rho, phi)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Twist {
    pub rho: Vector3<f64>,
    pub phi: Vector3<f64>,
}

impl Twist {
    pub fn zero() -> Self {
        Twist {
            rho: Vector3::zeros(),
            phi: Vector3::zeros(),
        }
    }

    pub fn new(rho: Vector3<f64>, phi: Vector3<f64>) -> Self {
        Twist { rho, phi }
    }

    pub fn from_vector(v: &Vector6<f64>) -> Self {
        Twist {
            rho: Vector3::new(v[0], v[1], v[2]),
            phi: Vector3::new(v[3], v[4], v[5]),
        }
    }

    pub fn vector(&self) -> Vector6<f64> {
        Vector6::new(
            self.rho[0], self.rho[1], self.rho[2], self.phi[0], self.phi[1], self.phi[2],
        )
    }

    pub fn scale(&self, s: f64) -> Twist {
        Twist {
            rho: self.rho * s,
            phi: self.phi * s,
        }
    }

    pub fn norm(&self) -> f64 {
        self.vector().norm()
    }

    /// The 4x4 matrix form `xi^`.
    pub fn hat(&self) -> Matrix4<f64> {
        let mut m = Matrix4::zeros();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&hat3(&self.phi));
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.rho);
        m
    }
}

/// A unit quaternion with scalar-last ordering `(e, q)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnitQuat {
    /// Vector part.
    pub e: Vector3<f64>,
    /// Scalar part.
    pub q: f64,
}

impl UnitQuat {
    pub fn identity() -> Self {
        UnitQuat {
            e: Vector3::zeros(),
            q: 1.0,
        }
    }

    pub fn new_normalized(e: Vector3<f64>, q: f64) -> Self {
        let n = (e.norm_squared() + q * q).sqrt();
        UnitQuat { e: e / n, q: q / n }
    }

    pub fn conjugate(&self) -> UnitQuat {
        UnitQuat {
            e: -self.e,
            q: self.q,
        }
    }

    pub fn as_vector(&self) -> Vector4<f64> {
        Vector4::new(self.e[0], self.e[1], self.e[2], self.q)
    }

    /// Componentwise distance up to the global sign ambiguity.
    pub fn dist_up_to_sign(&self, other: &UnitQuat) -> f64 {
        let a = self.as_vector();
        let b = other.as_vector();
        (a - b).norm().min((a + b).norm())
    }
}

/// Maps a 3-vector to its skew-symmetric matrix, `hat3(a) * b == a x b`.
pub fn hat3(phi: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(
        0.0, -phi[2], phi[1], phi[2], 0.0, -phi[0], -phi[1], phi[0], 0.0,
    )
}

/// Inverse of [`hat3`] on skew-symmetric input.
pub fn vee3(m: &Matrix3<f64>) -> Vector3<f64> {
    Vector3::new(m[(2, 1)], m[(0, 2)], m[(1, 0)])
}

/// `sin(t)/t` with Taylor fallback.
fn sinc(t: f64) -> f64 {
    if t.abs() < TAYLOR_EPS {
        let t2 = t * t;
        1.0 - t2 / 6.0 + t2 * t2 / 120.0
    } else {
        t.sin() / t
    }
}

/// `(1 - cos(t))/t^2` with Taylor fallback.
fn cosc(t: f64) -> f64 {
    if t.abs() < TAYLOR_EPS {
        let t2 = t * t;
        0.5 - t2 / 24.0 + t2 * t2 / 720.0
    } else {
        (1.0 - t.cos()) / (t * t)
    }
}

/// `(t - sin(t))/t^3` with Taylor fallback.
fn sincc(t: f64) -> f64 {
    if t.abs() < TAYLOR_EPS {
        let t2 = t * t;
        1.0 / 6.0 - t2 / 120.0 + t2 * t2 / 5040.0
    } else {
        (t - t.sin()) / (t * t * t)
    }
}

/// Rodrigues rotation formula.
pub fn exp_so3(phi: &Vector3<f64>) -> Rot3 {
    let theta = phi.norm();
    let k = hat3(phi);
    let m = Matrix3::identity() + k * sinc(theta) + k * k * cosc(theta);
    Rot3::from_matrix_unchecked(m)
}

/// Logarithm map of SO(3).
///
/// Near `theta = pi` the rotation axis is extracted from the largest diagonal
/// element of the symmetric part `(R + R^T)/2`, which stays well conditioned
/// where the antisymmetric part vanishes.
pub fn log_so3(rot: &Rot3) -> Vector3<f64> {
    let r = rot.matrix();
    let cos_theta = ((r.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let theta = cos_theta.acos();

    if theta < std::f64::consts::PI - 1e-3 {
        // vee((R - R^T)/2) = sin(theta) * axis
        let w = vee3(&((r - r.transpose()) * 0.5));
        return w / sinc(theta);
    }

    // Near-pi branch: aa^T = (S - cos(theta) I) / (1 - cos(theta)).
    let s = (r + r.transpose()) * 0.5;
    let aat = (s - Matrix3::identity() * cos_theta) / (1.0 - cos_theta);
    let k = (0..3)
        .max_by(|&i, &j| aat[(i, i)].partial_cmp(&aat[(j, j)]).unwrap())
        .unwrap();
    let ak = aat[(k, k)].max(0.0).sqrt();
    let mut axis = Vector3::new(aat[(0, k)] / ak, aat[(1, k)] / ak, aat[(2, k)] / ak);
    axis /= axis.norm();
    // Resolve the sign against the (small but usable) antisymmetric part.
    let w = vee3(&((r - r.transpose()) * 0.5));
    if w.dot(&axis) < 0.0 {
        axis = -axis;
    }
    axis * theta
}

/// Left Jacobian of SO(3), the `N(phi)` matrix of the SE(3) exponential.
pub fn se3_n(phi: &Vector3<f64>) -> Matrix3<f64> {
    let theta = phi.norm();
    let k = hat3(phi);
    Matrix3::identity() + k * cosc(theta) + k * k * sincc(theta)
}

/// Exponential map of SE(3).
pub fn exp_se3(xi: &Twist) -> Pose {
    Pose {
        rot: exp_so3(&xi.phi),
        trans: se3_n(&xi.phi) * xi.rho,
    }
}

/// Logarithm map of SE(3).
pub fn log_se3(pose: &Pose) -> Twist {
    let phi = log_so3(&pose.rot);
    let n_inv = se3_n(&phi)
        .try_inverse()
        .expect("N(phi) is invertible for |phi| < 2*pi");
    Twist {
        rho: n_inv * pose.trans,
        phi,
    }
}

/// Adjoint action of a group element on the Lie algebra.
pub fn adjoint(pose: &Pose) -> Matrix6<f64> {
    let mut a = Matrix6::zeros();
    let r = pose.rot.matrix();
    a.fixed_view_mut::<3, 3>(0, 0).copy_from(r);
    a.fixed_view_mut::<3, 3>(0, 3)
        .copy_from(&(hat3(&pose.trans) * r));
    a.fixed_view_mut::<3, 3>(3, 3).copy_from(r);
    a
}

/// Adjoint action of the Lie algebra on itself (`ad`), i.e. the Lie bracket
/// as a linear map.
pub fn ad_se3(xi: &Twist) -> Matrix6<f64> {
    let mut a = Matrix6::zeros();
    let ph = hat3(&xi.phi);
    a.fixed_view_mut::<3, 3>(0, 0).copy_from(&ph);
    a.fixed_view_mut::<3, 3>(0, 3).copy_from(&hat3(&xi.rho));
    a.fixed_view_mut::<3, 3>(3, 3).copy_from(&ph);
    a
}

/// Left composition `g ⊕ xi = exp(xi^) * g`.
pub fn oplus(g: &Pose, xi: &Twist) -> Pose {
    exp_se3(xi).compose(g)
}

/// Inverse of [`oplus`]: `g1 ⊖ g0` is the twist with `g0 ⊕ (g1 ⊖ g0) = g1`.
pub fn ominus(g1: &Pose, g0: &Pose) -> Twist {
    log_se3(&g1.compose(&g0.inverse()))
}

/// Rotation matrix of a unit quaternion:
/// `R = (q^2 - |e|^2) I - 2q e^ + 2 e e^T`.
pub fn quat_to_rot(quat: &UnitQuat) -> Rot3 {
    let e = &quat.e;
    let q = quat.q;
    let m = Matrix3::identity() * (q * q - e.norm_squared()) - hat3(e) * (2.0 * q)
        + (e * e.transpose()) * 2.0;
    Rot3::from_matrix_unchecked(m)
}

/// Inverse of [`quat_to_rot`], defined up to quaternion sign.
pub fn rot_to_quat(rot: &Rot3) -> UnitQuat {
    let r = rot.matrix();
    let tr = r.trace();
    // Shepperd's method on the matrix map used by quat_to_rot (which has the
    // skew term negated relative to the Hamilton map).
    let (e, q) = if tr > r[(0, 0)] && tr > r[(1, 1)] && tr > r[(2, 2)] {
        let s = (tr + 1.0).sqrt() * 2.0;
        (
            Vector3::new(
                (r[(1, 2)] - r[(2, 1)]) / s,
                (r[(2, 0)] - r[(0, 2)]) / s,
                (r[(0, 1)] - r[(1, 0)]) / s,
            ),
            s * 0.25,
        )
    } else if r[(0, 0)] > r[(1, 1)] && r[(0, 0)] > r[(2, 2)] {
        let s = (1.0 + r[(0, 0)] - r[(1, 1)] - r[(2, 2)]).sqrt() * 2.0;
        (
            Vector3::new(
                s * 0.25,
                (r[(0, 1)] + r[(1, 0)]) / s,
                (r[(0, 2)] + r[(2, 0)]) / s,
            ),
            (r[(1, 2)] - r[(2, 1)]) / s,
        )
    } else if r[(1, 1)] > r[(2, 2)] {
        let s = (1.0 + r[(1, 1)] - r[(0, 0)] - r[(2, 2)]).sqrt() * 2.0;
        (
            Vector3::new(
                (r[(0, 1)] + r[(1, 0)]) / s,
                s * 0.25,
                (r[(1, 2)] + r[(2, 1)]) / s,
            ),
            (r[(2, 0)] - r[(0, 2)]) / s,
        )
    } else {
        let s = (1.0 + r[(2, 2)] - r[(0, 0)] - r[(1, 1)]).sqrt() * 2.0;
        (
            Vector3::new(
                (r[(0, 2)] + r[(2, 0)]) / s,
                (r[(1, 2)] + r[(2, 1)]) / s,
                s * 0.25,
            ),
            (r[(0, 1)] - r[(1, 0)]) / s,
        )
    };
    UnitQuat::new_normalized(e, q)
}

/// Shuster's quaternion product; composes in the same order as rotation
/// matrices: `quat_to_rot(q0 ⊗ q1) = quat_to_rot(q0) * quat_to_rot(q1)`.
pub fn shuster_product(q0: &UnitQuat, q1: &UnitQuat) -> UnitQuat {
    let e = q0.q * q1.e + q1.q * q0.e - q0.e.cross(&q1.e);
    let q = q0.q * q1.q - q0.e.dot(&q1.e);
    UnitQuat::new_normalized(e, q)
}

/// Quaternion exponential consistent with [`quat_to_rot`] and [`exp_so3`]:
/// `quat_to_rot(exp_quat(phi)) == exp_so3(phi)`.
///
/// The vector part is negated relative to the Hamilton-convention closed form
/// because the rotation map above carries a `-2q e^` term.
pub fn exp_quat(phi: &Vector3<f64>) -> UnitQuat {
    let theta = phi.norm();
    let half = theta * 0.5;
    UnitQuat {
        e: -phi * (0.5 * sinc(half)),
        q: half.cos(),
    }
}

/// The `M` matrix coupling translational and rotational perturbations in the
/// error-state transition (the long trigonometric expansion; leading term
/// `rho^ / 2`).
pub fn se3_m(xi: &Twist) -> Matrix3<f64> {
    let rh = hat3(&xi.rho);
    let ph = hat3(&xi.phi);
    let t = xi.phi.norm();
    // c1 = (t - sin t)/t^3
    let c1 = sincc(t);
    // c2 = (t^2 + 2 cos t - 2)/(2 t^4)
    // c3 = (2t - 3 sin t + t cos t)/(2 t^5)
    let (c2, c3) = if t.abs() < TAYLOR_EPS {
        let t2 = t * t;
        (
            1.0 / 24.0 - t2 / 720.0 + t2 * t2 / 40320.0,
            1.0 / 120.0 - t2 / 2520.0,
        )
    } else {
        let t2 = t * t;
        let t4 = t2 * t2;
        (
            (t2 + 2.0 * t.cos() - 2.0) / (2.0 * t4),
            (2.0 * t - 3.0 * t.sin() + t * t.cos()) / (2.0 * t4 * t),
        )
    };
    rh * 0.5
        + (ph * rh + rh * ph + ph * rh * ph) * c1
        + (ph * ph * rh + rh * ph * ph - ph * rh * ph * 3.0) * c2
        + (ph * rh * ph * ph + ph * ph * rh * ph) * c3
}

/// [`oplus`] evaluated through the quaternion parameterization; agrees with
/// the matrix path to within roundoff.
pub fn oplus_quat(g: &Pose, xi: &Twist) -> Pose {
    let dq = exp_quat(&xi.phi);
    let q = rot_to_quat(&g.rot);
    let rot = quat_to_rot(&shuster_product(&dq, &q));
    let trans = se3_n(&xi.phi) * xi.rho + quat_to_rot(&dq).rotate(&g.trans);
    Pose { rot, trans }
}

/// Nearest orthonormal matrix with positive determinant (polar factor).
fn polar_orthonormalize(m: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = m.svd(true, true);
    let u = svd.u.unwrap();
    let vt = svd.v_t.unwrap();
    let mut r = u * vt;
    if r.determinant() < 0.0 {
        let mut u2 = u;
        u2.set_column(2, &(-u.column(2)));
        r = u2 * vt;
    }
    r
}
