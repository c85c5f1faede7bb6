//! Model-based monocular relative pose estimation.
//!
//! The library covers the full estimation chain for tracking a known rigid
//! target with a single calibrated camera:
//!
//! - [`se3`]: exact SO(3)/SE(3) Lie group machinery, quaternions, and the
//!   `⊕`/`⊖` composition operators everything else builds on.
//! - [`camera`]: pinhole projection, point/line reprojection residuals, and
//!   analytic Jacobians with respect to se(3) perturbations.
//! - [`zernike`]: complex Zernike moments of binary silhouettes as
//!   translation/scale/rotation invariant global shape descriptors.
//! - [`mixture`]: Gaussian mixture densities per view class (EM plus
//!   Figueiredo-Jain model selection) and Bayesian classification.
//! - [`robust`]: Levenberg-Marquardt on the SE(3) manifold with M-estimation
//!   (Huber joint scale, IRLS + MAD, Tukey polish) and covariance
//!   backpropagation.
//! - [`contour`]: closed-contour alignment by linear least squares over a 2D
//!   similarity transform with cyclic correspondence search.
//! - [`ekf`]: error-state extended Kalman filter on the tangent space of
//!   SE(3) with closed-form transition and process-noise matrices.
//! - [`scene`]: synthetic ground-truth generation (mesh rasterization,
//!   viewsphere sampling, keyframe catalogs, correspondence simulation).
//! - [`pipeline`]: the online loop gluing classification, matching, robust
//!   refinement, gating, and filtering together.

pub mod camera;
pub mod contour;
pub mod ekf;
pub mod mixture;
pub mod pipeline;
pub mod robust;
pub mod scene;
pub mod se3;
pub mod zernike;

pub use camera::{ImageLine, ImagePoint, Intrinsics};
pub use ekf::{FilterState, PoseMeasurement, PoseParam, ProcessNoise};
pub use pipeline::{Frame, FrameResult, Pipeline, PipelineConfig};
pub use scene::{Keyframe, TriMesh};
pub use se3::{Pose, Rot3, Twist, UnitQuat};
pub use zernike::BinaryMask;
