//! Error-state extended Kalman filter on the tangent space of SE(3).
//!
//! The nominal state is a relative pose `u` together with a constant
//! generalized velocity (twist) `w = (nu, omega)`; the 12-dimensional error
//! state is `(delta_xi, delta_w)` with `delta_xi = (d_rho, d_phi)` a left
//! perturbation of the pose. Prediction uses the closed-form error-state
//! transition matrix and a closed-form discrete process noise covariance;
//! correction fuses pose pseudo-measurements with `H = [I6 0]`, a Joseph-form
//! covariance update, and an RMSE validation gate upstream of the filter.

use crate::se3::{exp_so3, hat3, ominus, oplus, oplus_quat, se3_m, se3_n, Pose, Twist};
use nalgebra::{Matrix6, SMatrix, SVector, Vector6};
use thiserror::Error;

pub type Matrix12 = SMatrix<f64, 12, 12>;
pub type Vector12 = SVector<f64, 12>;

/// Default validation-gate threshold for point features (pixels RMSE).
pub const GATE_POINTS_PX: f64 = 2.5;
/// Default validation-gate threshold for edge features (pixels RMSE).
pub const GATE_EDGES_PX: f64 = 5.0;

#[derive(Debug, Error, PartialEq)]
pub enum EkfError {
    #[error("innovation covariance is numerically singular")]
    SingularInnovation,
}

/// How the nominal pose is parameterized when injecting tangent updates.
///
/// Both paths realize the same left composition `u <- exp(dxi^) * u`; the
/// quaternion path carries the attitude through unit quaternions instead of
/// rotation matrices and agrees with the matrix path to within roundoff.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PoseParam {
    #[default]
    Matrix,
    Quaternion,
}

fn compose(pose: &Pose, xi: &Twist, param: PoseParam) -> Pose {
    match param {
        PoseParam::Matrix => oplus(pose, xi),
        PoseParam::Quaternion => oplus_quat(pose, xi),
    }
}

/// Continuous-time process noise spectral densities (diagonal).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProcessNoise {
    /// Linear velocity spectral density, per axis (m^2/s^3).
    pub sigma2_nu: f64,
    /// Angular velocity spectral density, per axis (rad^2/s^3).
    pub sigma2_omega: f64,
}

impl ProcessNoise {
    pub fn new(sigma2_nu: f64, sigma2_omega: f64) -> Self {
        assert!(
            sigma2_nu >= 0.0 && sigma2_omega >= 0.0,
            "spectral densities must be non-negative"
        );
        ProcessNoise {
            sigma2_nu,
            sigma2_omega,
        }
    }
}

/// Filter state: nominal pose and twist plus the 12x12 error covariance over
/// `(d_rho, d_phi, d_nu, d_omega)`.
#[derive(Debug, Clone)]
pub struct FilterState {
    pub pose: Pose,
    pub twist: Twist,
    pub covariance: Matrix12,
}

impl FilterState {
    /// Initial state with the given pose, a zero twist (pessimistic velocity
    /// prior), and a block-diagonal covariance from per-group standard
    /// deviations.
    pub fn initialize(pose: Pose, sigma_pos: f64, sigma_att: f64, sigma_vel: f64) -> Self {
        let mut p = Matrix12::zeros();
        for i in 0..3 {
            p[(i, i)] = sigma_pos * sigma_pos;
            p[(3 + i, 3 + i)] = sigma_att * sigma_att;
            p[(6 + i, 6 + i)] = sigma_vel * sigma_vel;
            p[(9 + i, 9 + i)] = sigma_vel * sigma_vel;
        }
        FilterState {
            pose,
            twist: Twist::zero(),
            covariance: p,
        }
    }
}

/// Which measurement pipeline produced a pose pseudo-measurement.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeasurementSource {
    Points,
    Edges,
}

impl MeasurementSource {
    /// Default RMSE gate threshold for this source (pixels).
    pub fn gate_threshold(self) -> f64 {
        match self {
            MeasurementSource::Points => GATE_POINTS_PX,
            MeasurementSource::Edges => GATE_EDGES_PX,
        }
    }
}

/// A full-pose pseudo-measurement with tangent-space covariance.
#[derive(Debug, Clone)]
pub struct PoseMeasurement {
    pub pose: Pose,
    pub covariance: Matrix6<f64>,
    pub source: MeasurementSource,
    /// Residual RMSE of the upstream minimization, in pixels.
    pub rmse: f64,
}

/// Error-state transition matrix over `dt` seconds at the nominal twist.
///
/// Block form (state order `(d_rho, d_phi, d_nu, d_omega)`):
///
/// ```text
/// [ A   EA  Z   Th ]      A  = exp_so3(dt w)
/// [ 0   A   0   Z  ]      E  = (N(dt w) dt v)^
/// [ 0   0   I   0  ]      Z  = dt N(dt w)
/// [ 0   0   0   I  ]      Th = dt M(dt (v, w))
/// ```
///
/// The top-left 6x6 is the adjoint of `exp(dt w^)`; the top-right 6x6 is
/// `dt` times the left Jacobian of SE(3) evaluated at `dt` times the twist.
pub fn stm(twist: &Twist, dt: f64) -> Matrix12 {
    let v = twist.rho;
    let w = twist.phi;
    let a = *exp_so3(&(w * dt)).matrix();
    let n = se3_n(&(w * dt));
    let e = hat3(&(n * (v * dt)));
    let z = n * dt;
    let th = se3_m(&twist.scale(dt)) * dt;

    let mut phi = Matrix12::identity();
    phi.fixed_view_mut::<3, 3>(0, 0).copy_from(&a);
    phi.fixed_view_mut::<3, 3>(0, 3).copy_from(&(e * a));
    phi.fixed_view_mut::<3, 3>(0, 6).copy_from(&z);
    phi.fixed_view_mut::<3, 3>(0, 9).copy_from(&th);
    phi.fixed_view_mut::<3, 3>(3, 3).copy_from(&a);
    phi.fixed_view_mut::<3, 3>(3, 9).copy_from(&z);
    phi
}

/// Closed-form discrete process noise covariance, truncated after the cubic
/// terms of the integrand's small-angle expansion.
///
/// Valid for small inter-frame rotational motion, `dt * |omega| << 1`.
/// The result is symmetrized and its eigenvalues floored at zero.
pub fn process_noise(twist: &Twist, dt: f64, q: &ProcessNoise) -> Matrix12 {
    let gamma = process_noise_unfloored(twist, dt, q);
    // symmetrize, then floor eigenvalues at zero so downstream Cholesky
    // factorizations cannot fail on roundoff-negative directions
    let sym = (gamma + gamma.transpose()) * 0.5;
    let mut eig = sym.symmetric_eigen();
    for ev in eig.eigenvalues.iter_mut() {
        if *ev < 0.0 {
            *ev = 0.0;
        }
    }
    let floored = eig.recompose();
    (floored + floored.transpose()) * 0.5
}

fn process_noise_unfloored(twist: &Twist, dt: f64, q: &ProcessNoise) -> Matrix12 {
    let sv = q.sigma2_nu;
    let sw = q.sigma2_omega;
    let vh = hat3(&twist.rho);
    let wh = hat3(&twist.phi);
    let i3 = nalgebra::Matrix3::<f64>::identity();
    let dt2 = dt * dt;
    let dt3 = dt2 * dt;
    let dt4 = dt3 * dt;

    let g11 = i3 * (sv * dt3 / 3.0);
    let g12 = vh * (sw * dt4 / 8.0);
    let g13 = i3 * (sv * dt2 / 2.0) + wh * (sv * dt3 / 6.0);
    let g14 = vh * (sw * dt3 / 6.0);
    let g22 = i3 * (sw * dt3 / 3.0);
    let g24 = i3 * (sw * dt2 / 2.0) + wh * (sw * dt3 / 6.0);
    let g33 = i3 * (sv * dt);
    let g44 = i3 * (sw * dt);

    let mut g = Matrix12::zeros();
    g.fixed_view_mut::<3, 3>(0, 0).copy_from(&g11);
    g.fixed_view_mut::<3, 3>(0, 3).copy_from(&g12);
    g.fixed_view_mut::<3, 3>(0, 6).copy_from(&g13);
    g.fixed_view_mut::<3, 3>(0, 9).copy_from(&g14);
    g.fixed_view_mut::<3, 3>(3, 0).copy_from(&g12.transpose());
    g.fixed_view_mut::<3, 3>(3, 3).copy_from(&g22);
    g.fixed_view_mut::<3, 3>(3, 9).copy_from(&g24);
    g.fixed_view_mut::<3, 3>(6, 0).copy_from(&g13.transpose());
    g.fixed_view_mut::<3, 3>(6, 6).copy_from(&g33);
    g.fixed_view_mut::<3, 3>(9, 0).copy_from(&g14.transpose());
    g.fixed_view_mut::<3, 3>(9, 3).copy_from(&g24.transpose());
    g.fixed_view_mut::<3, 3>(9, 9).copy_from(&g44);
    g
}

/// Constant-twist prediction: `u <- u (+) dt*w`, twist unchanged,
/// `P <- Phi P Phi^T + Gamma`.
pub fn predict(state: &FilterState, dt: f64, q: &ProcessNoise, param: PoseParam) -> FilterState {
    assert!(dt > 0.0, "dt must be positive");
    let phi = stm(&state.twist, dt);
    let gamma = process_noise(&state.twist, dt, q);
    let p = phi * state.covariance * phi.transpose() + gamma;
    FilterState {
        pose: compose(&state.pose, &state.twist.scale(dt), param),
        twist: state.twist,
        covariance: (p + p.transpose()) * 0.5,
    }
}

/// EKF correction with a full-pose pseudo-measurement (`H = [I6 0]`).
///
/// The innovation is `y (-) u_pred` in the tangent space; the posterior error
/// state is injected into the nominal state and reset to zero, and the
/// covariance is updated in Joseph form.
pub fn correct(
    state: &FilterState,
    meas: &PoseMeasurement,
    param: PoseParam,
) -> Result<FilterState, EkfError> {
    let p = &state.covariance;
    let s = p.fixed_view::<6, 6>(0, 0) + meas.covariance;
    let s_inv = s.try_inverse().ok_or(EkfError::SingularInnovation)?;
    if !s_inv.iter().all(|x| x.is_finite()) {
        return Err(EkfError::SingularInnovation);
    }

    // K = P H^T S^-1 with H = [I6 0]: the left 12x6 columns of P times S^-1
    let k = p.fixed_view::<12, 6>(0, 0) * s_inv;
    let innovation: Vector6<f64> = ominus(&meas.pose, &state.pose).vector();
    let dx: Vector12 = k * innovation;

    let dxi = Twist::from_vector(&dx.fixed_rows::<6>(0).into_owned());
    let dw = dx.fixed_rows::<6>(6).into_owned();

    // Joseph form: (I - K H) P (I - K H)^T + K R K^T
    let mut ikh = Matrix12::identity();
    let left = ikh.fixed_view::<12, 6>(0, 0) - k;
    ikh.fixed_view_mut::<12, 6>(0, 0).copy_from(&left);
    let p_post = ikh * p * ikh.transpose() + k * meas.covariance * k.transpose();

    Ok(FilterState {
        pose: compose(&state.pose, &dxi, param),
        twist: Twist::from_vector(&(state.twist.vector() + dw)),
        covariance: (p_post + p_post.transpose()) * 0.5,
    })
}

/// Validation gate: accept a measurement iff its residual RMSE is within the
/// pixel threshold.
pub fn gate(meas: &PoseMeasurement, threshold_px: f64) -> bool {
    meas.rmse <= threshold_px
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::se3::{ad_se3, exp_se3, log_se3};
    use approx::assert_abs_diff_eq;
    use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn random_twist(rng: &mut StdRng, v_max: f64, w_max: f64) -> Twist {
        Twist::new(
            Vector3::new(
                rng.random_range(-v_max..v_max),
                rng.random_range(-v_max..v_max),
                rng.random_range(-v_max..v_max),
            ),
            Vector3::new(
                rng.random_range(-w_max..w_max),
                rng.random_range(-w_max..w_max),
                rng.random_range(-w_max..w_max),
            ),
        )
    }

    fn random_pose(rng: &mut StdRng) -> Pose {
        exp_se3(&random_twist(rng, 2.0, 1.5))
    }

    fn f_matrix(twist: &Twist) -> Matrix12 {
        let mut f = Matrix12::zeros();
        f.fixed_view_mut::<6, 6>(0, 0).copy_from(&ad_se3(twist));
        f.fixed_view_mut::<6, 6>(0, 6)
            .copy_from(&Matrix6::identity());
        f
    }

    #[test]
    fn stm_zero_twist_is_double_integrator() {
        let dt = 0.37;
        let phi = stm(&Twist::zero(), dt);
        let mut expected = Matrix12::identity();
        for i in 0..6 {
            expected[(i, 6 + i)] = dt;
        }
        assert_abs_diff_eq!(phi, expected, epsilon = 1e-14);
    }

    #[test]
    fn stm_semigroup_property() {
        let mut rng = StdRng::seed_from_u64(11);
        for _ in 0..50 {
            let w = random_twist(&mut rng, 0.5, 0.3);
            let dt = rng.random_range(0.01..0.2);
            let once = stm(&w, 2.0 * dt);
            let twice = stm(&w, dt) * stm(&w, dt);
            assert_abs_diff_eq!(once, twice, epsilon = 1e-8);
        }
    }

    #[test]
    fn stm_matches_rk4_ode_oracle() {
        // Phi solves dPhi/dt = F Phi with constant F = [[ad(w), I],[0, 0]]
        let mut rng = StdRng::seed_from_u64(12);
        let dt = 0.1;
        let steps = 1000;
        for _ in 0..200 {
            let w = random_twist(&mut rng, 0.3, 0.1 / f64::sqrt(3.0));
            let f = f_matrix(&w);
            let h = dt / steps as f64;
            let mut phi_num = Matrix12::identity();
            for _ in 0..steps {
                let k1 = f * phi_num;
                let k2 = f * (phi_num + k1 * (h / 2.0));
                let k3 = f * (phi_num + k2 * (h / 2.0));
                let k4 = f * (phi_num + k3 * h);
                phi_num += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
            }
            let phi = stm(&w, dt);
            let err = (phi - phi_num).abs().max();
            assert!(err < 1e-6, "max element error {err}");
        }
    }

    #[test]
    fn process_noise_zero_twist_closed_form() {
        let dt = 0.25;
        let q = ProcessNoise::new(0.3, 0.7);
        let g = process_noise(&Twist::zero(), dt, &q);
        let dt2 = dt * dt;
        let dt3 = dt2 * dt;
        for i in 0..3 {
            assert_abs_diff_eq!(g[(i, i)], 0.3 * dt3 / 3.0, epsilon = 1e-12);
            assert_abs_diff_eq!(g[(3 + i, 3 + i)], 0.7 * dt3 / 3.0, epsilon = 1e-12);
            assert_abs_diff_eq!(g[(6 + i, 6 + i)], 0.3 * dt, epsilon = 1e-12);
            assert_abs_diff_eq!(g[(9 + i, 9 + i)], 0.7 * dt, epsilon = 1e-12);
            assert_abs_diff_eq!(g[(i, 6 + i)], 0.3 * dt2 / 2.0, epsilon = 1e-12);
            assert_abs_diff_eq!(g[(3 + i, 9 + i)], 0.7 * dt2 / 2.0, epsilon = 1e-12);
        }
        // no pose-rate cross coupling at zero twist
        assert_abs_diff_eq!(
            g.fixed_view::<3, 3>(0, 3).into_owned(),
            Matrix3::zeros(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn process_noise_linear_in_spectral_density() {
        let mut rng = StdRng::seed_from_u64(13);
        let w = random_twist(&mut rng, 0.3, 0.2);
        let dt = 0.1;
        let g1 = process_noise(&w, dt, &ProcessNoise::new(0.2, 0.5));
        let g2 = process_noise(&w, dt, &ProcessNoise::new(0.4, 1.0));
        assert_abs_diff_eq!(g2, g1 * 2.0, epsilon = 1e-12);
    }

    #[test]
    fn process_noise_matches_quadrature_oracle() {
        // exact integrand: Gamma = int_0^dt B(tau) Q B(tau)^T dtau where
        // B(tau) is the right 12x6 block of the exact transition matrix
        let spin = 3.5_f64.to_radians(); // 0.0611 rad/s
        let w = Twist::new(
            Vector3::new(0.05, -0.03, 0.02),
            Vector3::new(spin / f64::sqrt(3.0), -spin / f64::sqrt(3.0), spin / f64::sqrt(3.0)),
        );
        let dt = 0.1;
        let q = ProcessNoise::new(0.04, 0.01);
        let mut q6 = Matrix6::<f64>::zeros();
        for i in 0..3 {
            q6[(i, i)] = q.sigma2_nu;
            q6[(3 + i, 3 + i)] = q.sigma2_omega;
        }
        let integrand = |tau: f64| {
            let b = stm(&w, tau.max(1e-300)).fixed_view::<12, 6>(0, 6).into_owned();
            b * q6 * b.transpose()
        };
        // composite Simpson
        let n = 2000;
        let h = dt / n as f64;
        let mut acc = integrand(0.0) + integrand(dt);
        for i in 1..n {
            let weight = if i % 2 == 1 { 4.0 } else { 2.0 };
            acc += integrand(i as f64 * h) * weight;
        }
        let oracle = acc * (h / 3.0);
        let gamma = process_noise(&w, dt, &q);
        let rel = (gamma - oracle).norm() / oracle.norm();
        assert!(rel < 1e-3, "relative error {rel}");
    }

    #[test]
    fn process_noise_psd_before_flooring() {
        let mut rng = StdRng::seed_from_u64(14);
        let mut min_eig = f64::INFINITY;
        for _ in 0..1000 {
            let w = random_twist(&mut rng, 0.2, 0.2);
            let dt = rng.random_range(1e-3..0.2);
            let q = ProcessNoise::new(rng.random_range(0.0..1.0), rng.random_range(0.0..1.0));
            let g = process_noise_unfloored(&w, dt, &q);
            let sym = (g + g.transpose()) * 0.5;
            let ev = sym.symmetric_eigen().eigenvalues;
            min_eig = min_eig.min(ev.min());
        }
        assert!(min_eig >= -1e-12, "min eigenvalue {min_eig}");
    }

    #[test]
    fn predict_zero_twist_zero_noise() {
        let mut rng = StdRng::seed_from_u64(15);
        let pose = random_pose(&mut rng);
        let state = FilterState::initialize(pose, 0.1, 0.05, 0.01);
        let next = predict(&state, 0.2, &ProcessNoise::new(0.0, 0.0), PoseParam::Matrix);
        assert_abs_diff_eq!(
            ominus(&next.pose, &state.pose).norm(),
            0.0,
            epsilon = 1e-12
        );
        let phi = stm(&Twist::zero(), 0.2);
        assert_abs_diff_eq!(
            next.covariance,
            phi * state.covariance * phi.transpose(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn predict_constant_twist_closed_form() {
        let mut rng = StdRng::seed_from_u64(16);
        let pose0 = random_pose(&mut rng);
        let w = random_twist(&mut rng, 0.2, 0.1);
        let dt = 0.05;
        let k = 40;
        let mut state = FilterState {
            pose: pose0,
            twist: w,
            covariance: Matrix12::identity() * 1e-4,
        };
        for _ in 0..k {
            state = predict(&state, dt, &ProcessNoise::new(1e-6, 1e-6), PoseParam::Matrix);
        }
        let expected = exp_se3(&w.scale(k as f64 * dt)).compose(&pose0);
        assert!(ominus(&state.pose, &expected).norm() < 1e-9);
    }

    #[test]
    fn predict_inflates_covariance() {
        let mut rng = StdRng::seed_from_u64(17);
        let mut state = FilterState::initialize(random_pose(&mut rng), 0.1, 0.05, 0.01);
        state.twist = random_twist(&mut rng, 0.1, 0.1);
        let q = ProcessNoise::new(1e-4, 1e-5);
        for _ in 0..20 {
            let next = predict(&state, 0.1, &q, PoseParam::Matrix);
            assert!(next.covariance.trace() >= state.covariance.trace());
            state = next;
        }
    }

    fn meas_from(pose: Pose, sigma: f64) -> PoseMeasurement {
        PoseMeasurement {
            pose,
            covariance: Matrix6::identity() * sigma * sigma,
            source: MeasurementSource::Points,
            rmse: 0.0,
        }
    }

    #[test]
    fn correct_zero_innovation_keeps_pose() {
        let mut rng = StdRng::seed_from_u64(18);
        let state = FilterState::initialize(random_pose(&mut rng), 0.1, 0.05, 0.01);
        let next = correct(&state, &meas_from(state.pose, 0.3), PoseParam::Matrix).unwrap();
        assert!(ominus(&next.pose, &state.pose).norm() < 1e-12);
        assert_abs_diff_eq!(next.twist.vector(), state.twist.vector(), epsilon = 1e-12);
    }

    #[test]
    fn correct_perfect_measurement_snaps_to_it() {
        let mut rng = StdRng::seed_from_u64(19);
        let state = FilterState::initialize(random_pose(&mut rng), 0.5, 0.3, 0.1);
        let target = oplus(
            &state.pose,
            &Twist::new(Vector3::new(0.2, -0.1, 0.05), Vector3::new(0.05, 0.1, -0.05)),
        );
        let next = correct(&state, &meas_from(target, 1e-6), PoseParam::Matrix).unwrap();
        assert!(ominus(&next.pose, &target).norm() < 1e-6);
    }

    #[test]
    fn sequential_fusion_matches_batch_oracle() {
        // two pose measurements fused one at a time vs a single batch update
        // with stacked H and block-diagonal R (equal for a linear model)
        let mut rng = StdRng::seed_from_u64(20);
        for _ in 0..20 {
            let state = FilterState::initialize(random_pose(&mut rng), 0.1, 0.05, 0.02);
            let tiny = |rng: &mut StdRng| {
                Twist::from_vector(&Vector6::from_fn(|_, _| rng.random_range(-1e-5..1e-5)))
            };
            let y1 = oplus(&state.pose, &tiny(&mut rng));
            let y2 = oplus(&state.pose, &tiny(&mut rng));
            let r1 = Matrix6::identity() * 1e-4;
            let r2 = Matrix6::identity() * 4e-4;

            let m1 = PoseMeasurement {
                pose: y1,
                covariance: r1,
                source: MeasurementSource::Points,
                rmse: 0.0,
            };
            let m2 = PoseMeasurement {
                pose: y2,
                covariance: r2,
                source: MeasurementSource::Edges,
                rmse: 0.0,
            };
            let seq = correct(
                &correct(&state, &m1, PoseParam::Matrix).unwrap(),
                &m2,
                PoseParam::Matrix,
            )
            .unwrap();

            // batch oracle in dynamic matrices
            let p = DMatrix::from_fn(12, 12, |i, j| state.covariance[(i, j)]);
            let mut h = DMatrix::zeros(12, 12);
            for i in 0..6 {
                h[(i, i)] = 1.0;
                h[(6 + i, i)] = 1.0;
            }
            let mut r = DMatrix::zeros(12, 12);
            for i in 0..6 {
                r[(i, i)] = r1[(i, i)];
                r[(6 + i, 6 + i)] = r2[(i, i)];
            }
            let mut innov = DVector::zeros(12);
            let v1 = ominus(&y1, &state.pose).vector();
            let v2 = ominus(&y2, &state.pose).vector();
            for i in 0..6 {
                innov[i] = v1[i];
                innov[6 + i] = v2[i];
            }
            let s = &h * &p * h.transpose() + &r;
            let k = &p * h.transpose() * s.try_inverse().unwrap();
            let dx = &k * innov;
            let dxi = Twist::from_vector(&Vector6::from_fn(|i, _| dx[i]));
            let batch_pose = oplus(&state.pose, &dxi);
            let ikh = DMatrix::identity(12, 12) - &k * &h;
            let p_batch = &ikh * &p * ikh.transpose() + &k * &r * k.transpose();

            assert!(ominus(&seq.pose, &batch_pose).norm() < 1e-8);
            for i in 0..12 {
                for j in 0..12 {
                    assert_abs_diff_eq!(seq.covariance[(i, j)], p_batch[(i, j)], epsilon = 1e-8);
                }
            }
        }
    }

    #[test]
    fn correct_singular_innovation_detected() {
        let mut rng = StdRng::seed_from_u64(21);
        let mut state = FilterState::initialize(random_pose(&mut rng), 0.0, 0.0, 0.0);
        state.covariance = Matrix12::zeros();
        let mut meas = meas_from(state.pose, 0.0);
        meas.covariance = Matrix6::zeros();
        match correct(&state, &meas, PoseParam::Matrix) {
            Err(EkfError::SingularInnovation) => {}
            other => panic!("expected SingularInnovation, got {other:?}"),
        }
    }

    fn gauss(rng: &mut StdRng) -> f64 {
        // Box-Muller
        let u1: f64 = rng.random_range(1e-12..1.0);
        let u2: f64 = rng.random_range(0.0..1.0);
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }

    /// Samples a 12-dim zero-mean Gaussian with the given covariance.
    fn sample_noise(rng: &mut StdRng, cov: &Matrix12) -> Vector12 {
        let chol = (cov + Matrix12::identity() * 1e-18)
            .cholesky()
            .expect("covariance is PD");
        let z = Vector12::from_fn(|_, _| gauss(rng));
        chol.l() * z
    }

    fn run_consistency(param: PoseParam, seed: u64) -> (Vec<Pose>, f64) {
        let mut rng = StdRng::seed_from_u64(seed);
        let dt = 0.5;
        let q = ProcessNoise::new(1e-6, 1e-7);
        let r_sigma = 0.01;
        let steps = 500;

        let mut truth_pose = exp_se3(&Twist::new(
            Vector3::new(0.0, 0.0, 10.0),
            Vector3::new(0.1, -0.2, 0.3),
        ));
        let mut truth_twist = Twist::new(
            Vector3::new(0.01, -0.005, 0.002),
            Vector3::new(0.02, 0.01, -0.015),
        );
        let mut state = FilterState::initialize(truth_pose, 0.05, 0.02, 0.05);
        let gamma = process_noise(&truth_twist, dt, &q);

        // chi-square 95% envelope for 12 degrees of freedom
        let (lo, hi) = (4.403789, 23.336664);
        let mut in_envelope = 0usize;
        let mut traj = Vec::new();

        for _ in 0..steps {
            // propagate truth with matched process noise
            let w = sample_noise(&mut rng, &gamma);
            truth_pose = oplus(
                &oplus(&truth_pose, &truth_twist.scale(dt)),
                &Twist::from_vector(&w.fixed_rows::<6>(0).into_owned()),
            );
            truth_twist =
                Twist::from_vector(&(truth_twist.vector() + w.fixed_rows::<6>(6).into_owned()));

            state = predict(&state, dt, &q, param);
            let noise = Twist::from_vector(&Vector6::from_fn(|_, _| gauss(&mut rng) * r_sigma));
            let meas = PoseMeasurement {
                pose: oplus(&truth_pose, &noise),
                covariance: Matrix6::identity() * r_sigma * r_sigma,
                source: MeasurementSource::Points,
                rmse: 0.0,
            };
            state = correct(&state, &meas, param).unwrap();
            traj.push(state.pose);

            let mut err = Vector12::zeros();
            let e_xi = ominus(&truth_pose, &state.pose).vector();
            let e_w = truth_twist.vector() - state.twist.vector();
            for i in 0..6 {
                err[i] = e_xi[i];
                err[6 + i] = e_w[i];
            }
            let p_inv = state.covariance.try_inverse().expect("P invertible");
            let nees = (err.transpose() * p_inv * err)[0];
            if nees >= lo && nees <= hi {
                in_envelope += 1;
            }
        }
        (traj, in_envelope as f64 / steps as f64)
    }

    #[test]
    fn filter_nees_consistency() {
        let (_, frac) = run_consistency(PoseParam::Matrix, 400);
        assert!(frac >= 0.90, "NEES in 95% envelope only {frac} of steps");
    }

    #[test]
    fn parameterization_independence() {
        let (mat, _) = run_consistency(PoseParam::Matrix, 401);
        let (quat, _) = run_consistency(PoseParam::Quaternion, 401);
        for (a, b) in mat.iter().zip(&quat) {
            assert!(ominus(a, b).norm() < 1e-8);
        }
    }

    #[test]
    fn gate_thresholds() {
        let mut rng = StdRng::seed_from_u64(22);
        let mut meas = meas_from(random_pose(&mut rng), 1.0);
        meas.rmse = 2.4;
        assert!(gate(&meas, MeasurementSource::Points.gate_threshold()));
        meas.rmse = 5.1;
        assert!(!gate(&meas, MeasurementSource::Edges.gate_threshold()));
        meas.rmse = 0.0;
        assert!(gate(&meas, 0.0));
    }

    #[test]
    fn log_roundtrip_sanity() {
        // guards the tangent-space conventions this module relies on
        let mut rng = StdRng::seed_from_u64(23);
        let g = random_pose(&mut rng);
        let xi = random_twist(&mut rng, 0.3, 0.3);
        let moved = oplus(&g, &xi);
        assert_abs_diff_eq!(
            ominus(&moved, &g).vector(),
            xi.vector(),
            epsilon = 1e-10
        );
        let _ = log_se3(&g);
    }
}
