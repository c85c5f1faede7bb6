//! Python bindings for the relnav pose estimation toolkit.
//!
//! Exposes the core types through a thin, copy-in/copy-out layer: poses and
//! twists travel as plain lists of floats, matrices as nested lists, so the
//! Python side needs nothing beyond the standard library (NumPy arrays
//! convert implicitly through the sequence protocol).

use nalgebra::{Matrix3, Vector3, Vector6};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use relnav::camera::{self, ImageLine, ImagePoint, Intrinsics};
use relnav::mixture::{classify, ClassDatabase};
use relnav::pipeline::silhouette_feature;
use relnav::robust::{huber_joint_fit, ReprojectionProblem, RobustConfig, RobustError};
use relnav::se3::{
    exp_se3, log_se3, quat_to_rot, rot_to_quat, Pose, Rot3, Twist, UnitQuat,
};
use relnav::zernike::BinaryMask;

fn vec3(v: [f64; 3]) -> Vector3<f64> {
    Vector3::new(v[0], v[1], v[2])
}

/// Rigid transform in SE(3): rotation plus translation.
#[pyclass(name = "Pose")]
#[derive(Clone)]
struct PyPose {
    inner: Pose,
}

#[pymethods]
impl PyPose {
    /// Build from a translation `[x, y, z]` and a unit quaternion
    /// `[e1, e2, e3, q]` with the scalar part last.
    #[new]
    fn new(translation: [f64; 3], quaternion: [f64; 4]) -> Self {
        let quat = UnitQuat::new_normalized(
            Vector3::new(quaternion[0], quaternion[1], quaternion[2]),
            quaternion[3],
        );
        PyPose {
            inner: Pose::new(quat_to_rot(&quat), vec3(translation)),
        }
    }

    #[staticmethod]
    fn identity() -> Self {
        PyPose { inner: Pose::identity() }
    }

    /// Exponential map of a twist `[rho_x, rho_y, rho_z, phi_x, phi_y, phi_z]`.
    #[staticmethod]
    fn exp(twist: [f64; 6]) -> Self {
        PyPose {
            inner: exp_se3(&Twist::from_vector(&Vector6::from_row_slice(&twist))),
        }
    }

    /// Logarithmic map: the twist whose exponential is this pose.
    fn log(&self) -> [f64; 6] {
        let v = log_se3(&self.inner).vector();
        [v[0], v[1], v[2], v[3], v[4], v[5]]
    }

    fn compose(&self, other: &PyPose) -> PyPose {
        PyPose { inner: self.inner.compose(&other.inner) }
    }

    fn inverse(&self) -> PyPose {
        PyPose { inner: self.inner.inverse() }
    }

    fn transform_point(&self, p: [f64; 3]) -> [f64; 3] {
        let q = self.inner.transform_point(&vec3(p));
        [q[0], q[1], q[2]]
    }

    fn translation(&self) -> [f64; 3] {
        let t = self.inner.trans;
        [t[0], t[1], t[2]]
    }

    /// Unit quaternion `[e1, e2, e3, q]` with the scalar part last.
    fn quaternion(&self) -> [f64; 4] {
        let v = rot_to_quat(&self.inner.rot).as_vector();
        [v[0], v[1], v[2], v[3]]
    }

    /// Homogeneous 4x4 transform as nested lists, row major.
    fn matrix(&self) -> Vec<Vec<f64>> {
        let m = self.inner.matrix();
        (0..4).map(|i| (0..4).map(|j| m[(i, j)]).collect()).collect()
    }

    fn __repr__(&self) -> String {
        let t = self.inner.trans;
        let q = rot_to_quat(&self.inner.rot).as_vector();
        format!(
            "Pose(translation=[{:.6}, {:.6}, {:.6}], quaternion=[{:.6}, {:.6}, {:.6}, {:.6}])",
            t[0], t[1], t[2], q[0], q[1], q[2], q[3]
        )
    }
}

/// Pinhole camera intrinsics.
#[pyclass(name = "Camera")]
#[derive(Clone)]
struct PyCamera {
    inner: Intrinsics,
}

#[pymethods]
impl PyCamera {
    #[new]
    fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Self {
        PyCamera { inner: Intrinsics::new(fx, fy, cx, cy, width, height) }
    }

    /// Project a target-frame point through `pose` onto the image plane.
    fn project(&self, pose: &PyPose, p: [f64; 3]) -> PyResult<(f64, f64)> {
        let z = camera::project(&self.inner, &pose.inner, &vec3(p))
            .map_err(|e| PyValueError::new_err(e.to_string()))?;
        Ok((z.z1, z.z2))
    }

    /// Calibration matrix K as nested lists, row major.
    fn k_matrix(&self) -> Vec<Vec<f64>> {
        let m: Matrix3<f64> = self.inner.k_matrix();
        (0..3).map(|i| (0..3).map(|j| m[(i, j)]).collect()).collect()
    }
}

/// Robust pose fit: refined pose, 6x6 tangent covariance, scale, inlier
/// flags (one per residual row), residual RMSE, and whether the minimizer
/// converged within its iteration budget.
#[pyclass(name = "PoseEstimate")]
struct PyPoseEstimate {
    #[pyo3(get)]
    pose: PyPose,
    #[pyo3(get)]
    covariance: Vec<Vec<f64>>,
    #[pyo3(get)]
    sigma: f64,
    #[pyo3(get)]
    inliers: Vec<bool>,
    #[pyo3(get)]
    rmse: f64,
    #[pyo3(get)]
    converged: bool,
}

/// Gaussian-mixture view-class database with Bayesian classification.
#[pyclass(name = "ClassDatabase")]
struct PyClassDatabase {
    inner: ClassDatabase,
}

#[pymethods]
impl PyClassDatabase {
    /// Load a database previously written by `relnav train`.
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PyValueError::new_err(format!("{path}: {e}")))?;
        let db = ClassDatabase::from_json(&text)
            .map_err(|e| PyValueError::new_err(e.to_string()))?;
        Ok(PyClassDatabase { inner: db })
    }

    /// Posterior-ranked `(az_bin, el_bin, probability)` triples for a
    /// feature vector, most probable first.
    fn classify(&self, feature: Vec<f64>) -> PyResult<Vec<(usize, usize, f64)>> {
        let f = nalgebra::DVector::from_vec(feature);
        let ranked = classify(&self.inner, &f)
            .map_err(|e| PyValueError::new_err(e.to_string()))?;
        Ok(ranked.into_iter().map(|(id, p)| (id.az_bin, id.el_bin, p)).collect())
    }

    /// Feature dimension the database was trained with.
    fn feature_dim(&self) -> usize {
        self.inner.d
    }
}

/// Rotation-normalized Zernike feature of a PGM silhouette mask.
#[pyfunction]
fn feature_from_pgm(path: &str, d: usize) -> PyResult<Vec<f64>> {
    let bytes = std::fs::read(path)
        .map_err(|e| PyValueError::new_err(format!("{path}: {e}")))?;
    let mask = BinaryMask::read_pgm(&mut bytes.as_slice())
        .map_err(|e| PyValueError::new_err(e.to_string()))?;
    let f = silhouette_feature(&mask, d)
        .map_err(|e| PyValueError::new_err(e.to_string()))?;
    Ok(f.iter().copied().collect())
}

/// Robust pose refinement from point and line correspondences with Huber's
/// joint scale iteration. `points` pairs a target-frame point with its pixel
/// measurement; `lines` pairs a target-frame point with the coefficients
/// `[l1, l2, l3]` of the normalized image line it should fall on.
#[pyfunction]
#[pyo3(signature = (camera, points, initial, lines = vec![]))]
fn fit_pose(
    camera: &PyCamera,
    points: Vec<([f64; 3], [f64; 2])>,
    initial: &PyPose,
    lines: Vec<([f64; 3], [f64; 3])>,
) -> PyResult<PyPoseEstimate> {
    let problem = ReprojectionProblem {
        k: camera.inner,
        points: points
            .into_iter()
            .map(|(p, z)| (vec3(p), ImagePoint::new(z[0], z[1])))
            .collect(),
        lines: lines
            .into_iter()
            .map(|(p, l)| (vec3(p), ImageLine::new(vec3(l))))
            .collect(),
    };
    // The joint scale update keeps nudging the cost, so the library's
    // 1e-10 defaults rarely trip; 1e-8 on the step norm is still far below
    // measurement noise.
    let config = RobustConfig {
        max_iters: 100,
        tol_step: 1e-8,
        ..RobustConfig::huber_joint()
    };
    let (estimate, converged) = match huber_joint_fit(&problem, &initial.inner, &config) {
        Ok(e) => (e, true),
        Err(RobustError::DidNotConverge(e)) => (*e, false),
        Err(e) => return Err(PyRuntimeError::new_err(e.to_string())),
    };
    Ok(PyPoseEstimate {
        pose: PyPose { inner: estimate.pose },
        covariance: (0..6)
            .map(|i| (0..6).map(|j| estimate.covariance[(i, j)]).collect())
            .collect(),
        sigma: estimate.sigma,
        inliers: estimate.inliers,
        rmse: estimate.rmse,
        converged,
    })
}

/// Angle in radians between the rotations of two poses.
#[pyfunction]
fn rotation_angle(a: &PyPose, b: &PyPose) -> f64 {
    Rot3::angle_to(&a.inner.rot, &b.inner.rot)
}

#[pymodule]
fn relnav_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyPose>()?;
    m.add_class::<PyCamera>()?;
    m.add_class::<PyPoseEstimate>()?;
    m.add_class::<PyClassDatabase>()?;
    m.add_function(wrap_pyfunction!(feature_from_pgm, m)?)?;
    m.add_function(wrap_pyfunction!(fit_pose, m)?)?;
    m.add_function(wrap_pyfunction!(rotation_angle, m)?)?;
    Ok(())
}
