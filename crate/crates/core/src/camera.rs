//! Pinhole camera model, reprojection residuals, and analytic Jacobians.
//!
//! Jacobians are taken with respect to a *left* perturbation
//! `exp(eps^) * T` of the pose, in the twist column order
//! `(rho1, rho2, rho3, phi1, phi2, phi3)`.

use crate::se3::{hat3, Pose};
use nalgebra::{Matrix2x3, Matrix3, RowVector6, Vector2, Vector3};
use nalgebra::Matrix2x6;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Depth below which a point counts as behind the camera (meters).
pub const DEPTH_EPS: f64 = 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum CameraError {
    #[error("point behind camera (depth {0:.3e} m)")]
    BehindCamera(f64),
}

/// Pinhole intrinsic parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    /// Focal scalings in pixels.
    pub fx: f64,
    pub fy: f64,
    /// Principal point in pixels.
    pub d1: f64,
    pub d2: f64,
    /// Sensor size in pixels.
    pub width: usize,
    pub height: usize,
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, d1: f64, d2: f64, width: usize, height: usize) -> Self {
        assert!(fx > 0.0 && fy > 0.0, "focal scalings must be positive");
        assert!(d1 >= 0.0 && d1 < width as f64, "principal point out of sensor");
        assert!(d2 >= 0.0 && d2 < height as f64, "principal point out of sensor");
        Intrinsics {
            fx,
            fy,
            d1,
            d2,
            width,
            height,
        }
    }

    pub fn k_matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.d1, 0.0, self.fy, self.d2, 0.0, 0.0, 1.0)
    }
}

/// A point on the image plane, in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImagePoint {
    pub z1: f64,
    pub z2: f64,
}

impl ImagePoint {
    pub fn new(z1: f64, z2: f64) -> Self {
        ImagePoint { z1, z2 }
    }

    pub fn vector(&self) -> Vector2<f64> {
        Vector2::new(self.z1, self.z2)
    }

    pub fn dist(&self, other: &ImagePoint) -> f64 {
        (self.vector() - other.vector()).norm()
    }
}

/// A homogeneous image line `l`, normalized so `l1^2 + l2^2 = 1`; the residual
/// `l . (z1, z2, 1)` is then the signed point-to-line distance in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImageLine {
    pub l: Vector3<f64>,
}

impl ImageLine {
    /// Normalizes the coefficient vector; panics on a degenerate direction.
    pub fn new(l: Vector3<f64>) -> Self {
        let n = (l[0] * l[0] + l[1] * l[1]).sqrt();
        assert!(n > 0.0, "degenerate line: (l1, l2) = (0, 0)");
        ImageLine { l: l / n }
    }

    /// Line through two image points.
    pub fn through(a: &ImagePoint, b: &ImagePoint) -> Self {
        let ha = Vector3::new(a.z1, a.z2, 1.0);
        let hb = Vector3::new(b.z1, b.z2, 1.0);
        ImageLine::new(ha.cross(&hb))
    }

    /// Signed distance from an image point.
    pub fn signed_dist(&self, z: &ImagePoint) -> f64 {
        self.l[0] * z.z1 + self.l[1] * z.z2 + self.l[2]
    }
}

/// Perspective projection `z = pi(K T (x) p)`.
pub fn project(k: &Intrinsics, pose: &Pose, p: &Vector3<f64>) -> Result<ImagePoint, CameraError> {
    let pc = pose.transform_point(p);
    if pc[2] <= DEPTH_EPS {
        return Err(CameraError::BehindCamera(pc[2]));
    }
    Ok(ImagePoint::new(
        k.fx * pc[0] / pc[2] + k.d1,
        k.fy * pc[1] / pc[2] + k.d2,
    ))
}

/// 2x6 Jacobian of the projection with respect to a left se(3) perturbation.
pub fn point_jacobian(
    k: &Intrinsics,
    pose: &Pose,
    p: &Vector3<f64>,
) -> Result<Matrix2x6<f64>, CameraError> {
    let pc = pose.transform_point(p);
    if pc[2] <= DEPTH_EPS {
        return Err(CameraError::BehindCamera(pc[2]));
    }
    let (x, y, z) = (pc[0], pc[1], pc[2]);
    let z2 = z * z;
    // d pi(K p') / d p'
    let dproj = Matrix2x3::new(
        k.fx / z,
        0.0,
        -k.fx * x / z2,
        0.0,
        k.fy / z,
        -k.fy * y / z2,
    );
    // d (exp(eps^) p') / d eps = [I | -p'^]
    let mut jac = Matrix2x6::zeros();
    jac.fixed_view_mut::<2, 3>(0, 0).copy_from(&dproj);
    jac.fixed_view_mut::<2, 3>(0, 3)
        .copy_from(&(-dproj * hat3(&pc)));
    Ok(jac)
}

/// Signed pixel distance of a reprojected 3D point from an image line.
pub fn line_residual(
    line: &ImageLine,
    k: &Intrinsics,
    pose: &Pose,
    p: &Vector3<f64>,
) -> Result<f64, CameraError> {
    let z = project(k, pose, p)?;
    Ok(line.signed_dist(&z))
}

/// 1x6 Jacobian of [`line_residual`]; the chain rule `(l1, l2) . J_point`.
pub fn line_jacobian(
    line: &ImageLine,
    k: &Intrinsics,
    pose: &Pose,
    p: &Vector3<f64>,
) -> Result<RowVector6<f64>, CameraError> {
    let jp = point_jacobian(k, pose, p)?;
    let lt = nalgebra::RowVector2::new(line.l[0], line.l[1]);
    Ok((lt * jp).fixed_view::<1, 6>(0, 0).into_owned())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::se3::{exp_se3, oplus, Twist};
    use approx::assert_abs_diff_eq;
    use nalgebra::{Matrix3x4, Vector4, Vector6};
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn test_k() -> Intrinsics {
        Intrinsics::new(100.0, 100.0, 320.0, 240.0, 640, 480)
    }

    fn rand_scene(rng: &mut StdRng) -> (Intrinsics, Pose, Vector3<f64>) {
        let k = Intrinsics::new(
            rng.random_range(200.0..800.0),
            rng.random_range(200.0..800.0),
            rng.random_range(200.0..400.0),
            rng.random_range(150.0..300.0),
            640,
            480,
        );
        let pose = exp_se3(&Twist::new(
            Vector3::new(
                rng.random_range(-0.5..0.5),
                rng.random_range(-0.5..0.5),
                rng.random_range(3.0..8.0),
            ),
            Vector3::new(
                rng.random_range(-0.3..0.3),
                rng.random_range(-0.3..0.3),
                rng.random_range(-0.3..0.3),
            ),
        ));
        let p = Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        (k, pose, p)
    }

    /// Central finite differences of `project` over left perturbations.
    fn fd_point_jacobian(k: &Intrinsics, pose: &Pose, p: &Vector3<f64>) -> Matrix2x6<f64> {
        let eps = 1e-6;
        let mut jac = Matrix2x6::zeros();
        for i in 0..6 {
            let mut v = Vector6::zeros();
            v[i] = eps;
            let plus = project(k, &oplus(pose, &Twist::from_vector(&v)), p).unwrap();
            v[i] = -eps;
            let minus = project(k, &oplus(pose, &Twist::from_vector(&v)), p).unwrap();
            jac[(0, i)] = (plus.z1 - minus.z1) / (2.0 * eps);
            jac[(1, i)] = (plus.z2 - minus.z2) / (2.0 * eps);
        }
        jac
    }

    #[test]
    fn project_principal_point_and_offset() {
        let k = test_k();
        let z = project(&k, &Pose::identity(), &Vector3::new(0.0, 0.0, 1.0)).unwrap();
        assert_abs_diff_eq!(z.z1, 320.0, epsilon = 1e-12);
        assert_abs_diff_eq!(z.z2, 240.0, epsilon = 1e-12);

        let z = project(&k, &Pose::identity(), &Vector3::new(0.1, 0.0, 1.0)).unwrap();
        assert_abs_diff_eq!(z.z1, 330.0, epsilon = 1e-12);
        assert_abs_diff_eq!(z.z2, 240.0, epsilon = 1e-12);
    }

    #[test]
    fn project_matches_homogeneous_oracle() {
        let mut rng = StdRng::seed_from_u64(11);
        for _ in 0..200 {
            let (k, pose, p) = rand_scene(&mut rng);
            // direct 3x4 multiply-then-divide
            let proj34: Matrix3x4<f64> =
                k.k_matrix() * pose.matrix().fixed_view::<3, 4>(0, 0).into_owned();
            let hz = proj34 * Vector4::new(p[0], p[1], p[2], 1.0);
            let z = project(&k, &pose, &p).unwrap();
            assert_abs_diff_eq!(z.z1, hz[0] / hz[2], epsilon = 1e-9);
            assert_abs_diff_eq!(z.z2, hz[1] / hz[2], epsilon = 1e-9);
        }
    }

    #[test]
    fn project_behind_camera_is_error() {
        let k = test_k();
        let res = project(&k, &Pose::identity(), &Vector3::new(0.0, 0.0, -1.0));
        assert!(matches!(res, Err(CameraError::BehindCamera(_))));
    }

    #[test]
    fn point_jacobian_unit_depth_closed_form() {
        // p' = (0,0,1), fx = fy = 1 evaluates to a fixed 2x6 block.
        let k = Intrinsics::new(1.0, 1.0, 0.5, 0.5, 2, 2);
        let jac = point_jacobian(&k, &Pose::identity(), &Vector3::new(0.0, 0.0, 1.0)).unwrap();
        let expect = Matrix2x6::new(
            1.0, 0.0, 0.0, 0.0, 1.0, 0.0, //
            0.0, 1.0, 0.0, -1.0, 0.0, 0.0,
        );
        assert_abs_diff_eq!(jac, expect, epsilon = 1e-12);
    }

    #[test]
    fn point_jacobian_matches_finite_differences() {
        let mut rng = StdRng::seed_from_u64(12);
        let mut max_rel = 0.0f64;
        for _ in 0..1000 {
            let (k, pose, p) = rand_scene(&mut rng);
            let analytic = point_jacobian(&k, &pose, &p).unwrap();
            let numeric = fd_point_jacobian(&k, &pose, &p);
            let rel = (analytic - numeric).norm() / analytic.norm().max(1.0);
            max_rel = max_rel.max(rel);
        }
        assert!(max_rel < 1e-5, "max relative error {max_rel}");
    }

    #[test]
    fn point_jacobian_depth_scaling() {
        let k = test_k();
        let j1 = point_jacobian(&k, &Pose::identity(), &Vector3::new(0.2, -0.1, 2.0)).unwrap();
        let j2 = point_jacobian(&k, &Pose::identity(), &Vector3::new(0.4, -0.2, 4.0)).unwrap();
        // doubling depth (same ray) halves the first two translational columns
        assert_abs_diff_eq!(j2[(0, 0)], j1[(0, 0)] / 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(j2[(1, 1)], j1[(1, 1)] / 2.0, epsilon = 1e-12);
    }

    #[test]
    fn line_residual_signed_distance() {
        let k = test_k();
        // horizontal line through row 240: 0*z1 + 1*z2 - 240 = 0
        let line = ImageLine::new(Vector3::new(0.0, 1.0, -240.0));
        // point reprojecting to (320, 250): p = (0, 0.1, 1)
        let r = line_residual(&line, &k, &Pose::identity(), &Vector3::new(0.0, 0.1, 1.0)).unwrap();
        assert_abs_diff_eq!(r, 10.0, epsilon = 1e-12);
        // point on the line
        let r0 = line_residual(&line, &k, &Pose::identity(), &Vector3::new(0.3, 0.0, 1.0)).unwrap();
        assert_abs_diff_eq!(r0, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn line_residual_matches_distance_oracle() {
        let mut rng = StdRng::seed_from_u64(13);
        for _ in 0..200 {
            let (k, pose, p) = rand_scene(&mut rng);
            let a = ImagePoint::new(rng.random_range(0.0..640.0), rng.random_range(0.0..480.0));
            let b = ImagePoint::new(rng.random_range(0.0..640.0), rng.random_range(0.0..480.0));
            if a.dist(&b) < 1.0 {
                continue;
            }
            let line = ImageLine::through(&a, &b);
            let z = project(&k, &pose, &p).unwrap();
            // point-to-line distance via the projection formula
            let ab = b.vector() - a.vector();
            let n = Vector2::new(-ab[1], ab[0]).normalize();
            let dist = n.dot(&(z.vector() - a.vector()));
            let r = line_residual(&line, &k, &pose, &p).unwrap();
            assert!((r.abs() - dist.abs()).abs() < 1e-9);
        }
    }

    #[test]
    fn line_jacobian_chain_rule_and_finite_differences() {
        let mut rng = StdRng::seed_from_u64(14);
        let eps = 1e-6;
        let mut max_rel = 0.0f64;
        for _ in 0..1000 {
            let (k, pose, p) = rand_scene(&mut rng);
            let a = ImagePoint::new(rng.random_range(0.0..640.0), rng.random_range(0.0..480.0));
            let b = ImagePoint::new(rng.random_range(0.0..640.0), rng.random_range(0.0..480.0));
            if a.dist(&b) < 1.0 {
                continue;
            }
            let line = ImageLine::through(&a, &b);
            let analytic = line_jacobian(&line, &k, &pose, &p).unwrap();

            // chain rule identity against the point Jacobian
            let jp = point_jacobian(&k, &pose, &p).unwrap();
            let chain = nalgebra::RowVector2::new(line.l[0], line.l[1]) * jp;
            assert_abs_diff_eq!(analytic, chain, epsilon = 1e-12);

            // finite differences
            let mut numeric = RowVector6::zeros();
            for i in 0..6 {
                let mut v = Vector6::zeros();
                v[i] = eps;
                let plus =
                    line_residual(&line, &k, &oplus(&pose, &Twist::from_vector(&v)), &p).unwrap();
                v[i] = -eps;
                let minus =
                    line_residual(&line, &k, &oplus(&pose, &Twist::from_vector(&v)), &p).unwrap();
                numeric[i] = (plus - minus) / (2.0 * eps);
            }
            let rel = (analytic - numeric).norm() / analytic.norm().max(1.0);
            max_rel = max_rel.max(rel);
        }
        assert!(max_rel < 1e-5, "max relative error {max_rel}");
    }

    #[test]
    fn projection_remainder_is_second_order() {
        // project(T ⊕ eps*xi) - project(T) - eps*J*xi should shrink as eps^2
        let k = test_k();
        let pose = exp_se3(&Twist::new(
            Vector3::new(0.1, -0.2, 4.0),
            Vector3::new(0.2, 0.1, -0.1),
        ));
        let p = Vector3::new(0.3, -0.5, 0.2);
        let xi = Twist::from_vector(&Vector6::new(0.4, -0.2, 0.3, 0.1, -0.3, 0.2));
        let jac = point_jacobian(&k, &pose, &p).unwrap();
        let base = project(&k, &pose, &p).unwrap().vector();
        let mut prev_remainder = f64::INFINITY;
        for &eps in &[1e-2, 1e-3, 1e-4] {
            let moved = project(&k, &oplus(&pose, &xi.scale(eps)), &p).unwrap().vector();
            let lin = base + jac * xi.vector() * eps;
            let remainder = (moved - lin).norm();
            // each 10x reduction in eps must reduce the remainder ~100x
            assert!(remainder < prev_remainder * 0.05 || remainder < 1e-12);
            prev_remainder = remainder;
        }
    }
}
