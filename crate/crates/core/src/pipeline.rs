//! Online relative-navigation loop: coarse silhouette classification for
//! initialization, keyframe selection, feature matching by detection or by
//! tracking, robust pose pseudo-measurements, gating, and filter fusion.
//!
//! One [`Pipeline`] instance tracks one target. Frames carry a segmented
//! silhouette and simulated point detections; edge measurements are derived
//! from the silhouette boundary itself (contour alignment when matching by
//! detection, perpendicular search when matching by tracking).

use crate::camera::{project, ImageLine, ImagePoint, Intrinsics};
use crate::contour::{align_contours, resample_contour, ContourError};
use crate::ekf::{
    correct, gate, predict, FilterState, Matrix12, MeasurementSource, PoseMeasurement, PoseParam,
    ProcessNoise, Vector12,
};
use crate::mixture::{classify, ClassDatabase, ClassId, MixtureError};
use crate::robust::{
    huber_joint_fit, rmse, tukey_polish, PoseEstimate, ReprojectionProblem, ResidualProblem,
    RobustConfig, RobustError,
};
use crate::scene::{
    grid_bin, rasterize, simulate_correspondences, viewsphere_pose, CorruptionModel, Keyframe,
    PointMatch, SceneError, TriMesh,
};
use crate::se3::{log_so3, ominus, Pose};
use crate::zernike::{
    descriptor_to_feature, rotation_normalize, zernike_descriptor, BinaryMask, ZernikeError,
};
use nalgebra::{DVector, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use thiserror::Error;

/// Zernike order used for classification features.
pub const FEATURE_NMAX: usize = 10;
/// Classification feature dimension at [`FEATURE_NMAX`].
pub const FEATURE_DIM: usize = 60;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("silhouette is empty")]
    EmptySilhouette,
    #[error("no usable matches")]
    NoMatches,
    #[error("pipeline has no initialized state")]
    NotInitialized,
    #[error("no class database loaded")]
    NoClassDatabase,
    #[error("keyframe database is empty")]
    EmptyDatabase,
    #[error(transparent)]
    Classifier(#[from] MixtureError),
    #[error(transparent)]
    Shape(#[from] ZernikeError),
    #[error(transparent)]
    Contour(#[from] ContourError),
    #[error(transparent)]
    Robust(#[from] RobustError),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error("filter update failed: {0}")]
    Filter(String),
}

/// Tuning knobs of the online loop.
#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub k: Intrinsics,
    /// Robust fit used for both feature types (Huber with joint scale).
    pub fit: RobustConfig,
    pub gate_points_px: f64,
    pub gate_edges_px: f64,
    pub process_noise: ProcessNoise,
    pub sigma0_pos: f64,
    pub sigma0_att: f64,
    pub sigma0_vel: f64,
    /// Grid (columns, rows) used for tracking candidate reduction.
    pub grid: (usize, usize),
    pub param: PoseParam,
    /// Detection matches farther than this from the contour-alignment
    /// prediction are discarded as ambiguous.
    pub ambiguity_radius_px: f64,
    /// Maximum prediction-to-measurement distance accepted while tracking.
    pub track_radius_px: f64,
    /// Half-length of the perpendicular boundary search for edges.
    pub edge_search_px: f64,
    pub min_point_matches: usize,
    pub min_edge_matches: usize,
    /// Lower bound on the residual scale used for the fused measurement
    /// covariance (pixels); guards against overconfidence when the robust
    /// fit's residuals undershoot the true front-end noise.
    pub meas_sigma_floor_px: f64,
    /// Consecutive frames without a fused measurement before the pose is
    /// re-initialized from the classifier.
    pub reinit_after: usize,
    /// Common resampling length for contour alignment.
    pub contour_samples: usize,
}

impl PipelineConfig {
    pub fn new(k: Intrinsics) -> Self {
        PipelineConfig {
            k,
            fit: RobustConfig::huber_joint(),
            gate_points_px: MeasurementSource::Points.gate_threshold(),
            gate_edges_px: MeasurementSource::Edges.gate_threshold(),
            process_noise: ProcessNoise {
                sigma2_nu: 1e-4,
                sigma2_omega: 1e-4,
            },
            sigma0_pos: 1.0,
            sigma0_att: 0.2,
            sigma0_vel: 0.1,
            grid: (4, 4),
            param: PoseParam::Matrix,
            ambiguity_radius_px: 15.0,
            track_radius_px: 10.0,
            edge_search_px: 15.0,
            min_point_matches: 4,
            min_edge_matches: 6,
            meas_sigma_floor_px: 1.0,
            reinit_after: 30,
            contour_samples: 256,
        }
    }
}

/// One camera frame as seen by the pipeline: a segmented silhouette plus the
/// point detections of the simulated front end.
#[derive(Debug, Clone)]
pub struct Frame {
    pub t: f64,
    pub silhouette: Option<BinaryMask>,
    pub points: Vec<PointMatch>,
}

/// Correspondences selected for the robust fit, with bookkeeping for
/// match-quality evaluation.
#[derive(Debug, Clone)]
pub struct Matches {
    pub points: Vec<(Vector3<f64>, ImagePoint)>,
    /// `(catalog id, index into the frame's point detections)` per point.
    pub point_pairs: Vec<(u32, usize)>,
    pub lines: Vec<(Vector3<f64>, ImageLine)>,
    pub by_detection: bool,
}

/// Per-frame output of [`Pipeline::step`].
#[derive(Debug, Clone)]
pub struct FrameResult {
    pub t: f64,
    pub keyframe_id: u32,
    pub by_detection: bool,
    pub reinitialized: bool,
    pub n_point_matches: usize,
    pub n_edge_matches: usize,
    pub n_point_inliers: usize,
    pub n_edge_inliers: usize,
    pub points_meas: Option<PoseMeasurement>,
    pub points_fused: bool,
    pub edges_meas: Option<PoseMeasurement>,
    pub edges_fused: bool,
    pub state: FilterState,
    /// `(translation m, rotation rad)` error versus truth, when provided.
    pub truth_error: Option<(f64, f64)>,
}

/// Flattens a silhouette into the rotation-normalized Zernike feature used
/// by the classifier.
pub fn silhouette_feature(mask: &BinaryMask, d: usize) -> Result<DVector<f64>, PipelineError> {
    if mask.count() == 0 {
        return Err(PipelineError::EmptySilhouette);
    }
    let desc = zernike_descriptor(mask, FEATURE_NMAX)?;
    let norm = rotation_normalize(&desc)?;
    Ok(descriptor_to_feature(&norm, d))
}

/// Viewsphere class bin of an `(az, el)` direction for the given bin widths.
pub fn class_of_view(az_deg: f64, el_deg: f64, az_width: f64, el_width: f64) -> ClassId {
    let n_az = (360.0 / az_width).round() as usize;
    let az_bin = (az_deg.rem_euclid(360.0) / az_width).floor() as usize % n_az;
    let n_el = (180.0 / el_width).round() as usize;
    let el_bin = (((el_deg + 90.0) / el_width).floor() as usize).min(n_el - 1);
    ClassId { az_bin, el_bin }
}

/// Center direction of a class bin.
pub fn class_center(id: ClassId, az_width: f64, el_width: f64) -> (f64, f64) {
    (
        (id.az_bin as f64 + 0.5) * az_width,
        -90.0 + (id.el_bin as f64 + 0.5) * el_width,
    )
}

/// Camera-range of a pose: distance from the camera to the target origin.
pub fn pose_range(pose: &Pose) -> f64 {
    pose.inverse().transform_point(&Vector3::zeros()).norm()
}

/// 12-dof normalized estimation error squared against ground truth.
pub fn nees(state: &FilterState, truth_pose: &Pose, truth_twist: &crate::se3::Twist) -> f64 {
    let ep = ominus(truth_pose, &state.pose).vector();
    let ev = truth_twist.rho - state.twist.rho;
    let ew = truth_twist.phi - state.twist.phi;
    let mut e = Vector12::zeros();
    for i in 0..3 {
        e[i] = ep[i];
        e[3 + i] = ep[3 + i];
        e[6 + i] = ev[i];
        e[9 + i] = ew[i];
    }
    let inv = state
        .covariance
        .cholesky()
        .map(|c| c.solve(&e))
        .unwrap_or_else(|| {
            state
                .covariance
                .lu()
                .solve(&e)
                .unwrap_or_else(Vector12::zeros)
        });
    e.dot(&inv)
}

/// Builds a synthetic frame: the true silhouette plus contaminated point
/// detections against the given keyframe's catalog.
pub fn simulate_frame(
    mesh: &TriMesh,
    keyframe: &Keyframe,
    k: &Intrinsics,
    truth: &Pose,
    t: f64,
    model: &CorruptionModel,
    seed: u64,
) -> Frame {
    let (mask, _) = rasterize(mesh, k, truth);
    let (points, _) = simulate_correspondences(keyframe, truth, k, model, seed);
    Frame {
        t,
        silhouette: (mask.count() > 0).then_some(mask),
        points,
    }
}

/// The online tracking loop for one target.
pub struct Pipeline {
    pub config: PipelineConfig,
    pub keyframes: Vec<Keyframe>,
    pub class_db: Option<ClassDatabase>,
    state: Option<FilterState>,
    current_kf: usize,
    gated_streak: usize,
    last_t: Option<f64>,
}

impl Pipeline {
    pub fn new(
        config: PipelineConfig,
        keyframes: Vec<Keyframe>,
        class_db: Option<ClassDatabase>,
    ) -> Self {
        Pipeline {
            config,
            keyframes,
            class_db,
            state: None,
            current_kf: 0,
            gated_streak: 0,
            last_t: None,
        }
    }

    pub fn state(&self) -> Option<&FilterState> {
        self.state.as_ref()
    }

    /// Installs a filter state directly (testing and restart plumbing).
    pub fn force_state(&mut self, state: FilterState, keyframe: usize) {
        self.state = Some(state);
        self.current_kf = keyframe;
        self.gated_streak = 0;
    }

    pub fn current_keyframe(&self) -> usize {
        self.current_kf
    }

    /// Index of the keyframe whose attitude is rotation-geodesically nearest
    /// to `pose`.
    pub fn nearest_keyframe(&self, pose: &Pose) -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (i, kf) in self.keyframes.iter().enumerate() {
            let d = log_so3(&kf.pose.rot.compose(&pose.rot.transpose())).norm();
            if d < best_d {
                best_d = d;
                best = i;
            }
        }
        best
    }

    /// Coarse initialization from a silhouette: Bayesian classification of
    /// the Zernike feature picks the viewsphere bin; the bin center fixes the
    /// direction and the apparent-size ratio against the class keyframe
    /// fixes the range.
    pub fn initialize(&self, mask: &BinaryMask) -> Result<(usize, Pose), PipelineError> {
        let db = self.class_db.as_ref().ok_or(PipelineError::NoClassDatabase)?;
        if self.keyframes.is_empty() {
            return Err(PipelineError::EmptyDatabase);
        }
        let y = silhouette_feature(mask, db.d)?;
        let ranked = classify(db, &y)?;
        let top = ranked[0].0;
        // representative keyframe: nearest to the class in bin space
        let (aw, ew) = (db.az_bin_width_deg, db.el_bin_width_deg);
        let n_az = (360.0 / aw).round() as usize;
        let kf_idx = (0..self.keyframes.len())
            .min_by_key(|&i| {
                let kf = &self.keyframes[i];
                let id = class_of_view(kf.az_deg, kf.el_deg, aw, ew);
                let da = {
                    let d = (id.az_bin as i64 - top.az_bin as i64).rem_euclid(n_az as i64) as usize;
                    d.min(n_az - d)
                };
                da + id.el_bin.abs_diff(top.el_bin)
            })
            .unwrap();
        let kf = &self.keyframes[kf_idx];
        let area_kf = kf.silhouette.count() as f64;
        let area_q = mask.count() as f64;
        if area_q == 0.0 {
            return Err(PipelineError::EmptySilhouette);
        }
        let range = pose_range(&kf.pose) * (area_kf / area_q).sqrt();
        let (az_c, el_c) = class_center(top, aw, ew);
        Ok((kf_idx, viewsphere_pose(az_c, el_c, range)))
    }

    /// Contour-alignment transform mapping keyframe image coordinates onto
    /// the query image.
    fn alignment(
        &self,
        kf: &Keyframe,
        query: &BinaryMask,
    ) -> Result<crate::contour::SimilarityTransform, PipelineError> {
        let n = self.config.contour_samples;
        let cq = resample_contour(&crate::scene::silhouette_contour(query)?, n)?;
        let ct = resample_contour(&crate::scene::silhouette_contour(&kf.silhouette)?, n)?;
        let (tf, _shift, _res) = align_contours(&cq, &ct)?;
        Ok(tf)
    }

    /// Edge measurements from contour alignment: each keyframe edge point is
    /// mapped into the query image by the recovered similarity, and the line
    /// direction follows the rotated keyline.
    fn edges_from_alignment(
        &self,
        kf: &Keyframe,
        tf: &crate::contour::SimilarityTransform,
    ) -> Vec<(Vector3<f64>, ImageLine)> {
        let mut out = Vec::new();
        for e in &kf.edge_points {
            let Ok(zk) = project(&self.config.k, &kf.pose, &e.p) else {
                continue;
            };
            let dir = kf.keyline_dirs[e.keyline as usize];
            let Ok(zk2) = project(&self.config.k, &kf.pose, &(e.p + dir * 0.05)) else {
                continue;
            };
            let zq = tf.apply(&zk.vector());
            let zq2 = tf.apply(&zk2.vector());
            if (zq2 - zq).norm() < 1e-9 {
                continue;
            }
            out.push((
                e.p,
                ImageLine::through(
                    &ImagePoint::new(zq[0], zq[1]),
                    &ImagePoint::new(zq2[0], zq2[1]),
                ),
            ));
        }
        out
    }

    /// Brute-force (id channel) matching with contour-alignment consistency
    /// filtering; edge measurements from the alignment's recovered shift.
    pub fn match_by_detection(&self, frame: &Frame) -> Result<Matches, PipelineError> {
        let kf = &self.keyframes[self.current_kf];
        if kf.catalog.is_empty() && kf.edge_points.is_empty() {
            return Err(PipelineError::NoMatches);
        }
        let tf = frame
            .silhouette
            .as_ref()
            .and_then(|m| self.alignment(kf, m).ok());

        let mut points = Vec::new();
        let mut point_pairs = Vec::new();
        for c in &kf.catalog {
            let Some((mi, m)) = frame.points.iter().enumerate().find(|(_, m)| m.id == c.id)
            else {
                continue;
            };
            // ambiguity filter: the measurement must agree with where the
            // aligned keyframe silhouette says this feature should be
            if let Some(tf) = &tf {
                let predicted = tf.apply(&c.z.vector());
                if (predicted - m.z.vector()).norm() > self.config.ambiguity_radius_px {
                    continue;
                }
            }
            points.push((c.p, m.z));
            point_pairs.push((c.id, mi));
        }
        let lines = tf
            .as_ref()
            .map(|tf| self.edges_from_alignment(kf, tf))
            .unwrap_or_default();
        if points.len() < self.config.min_point_matches
            && lines.len() < self.config.min_edge_matches
        {
            return Err(PipelineError::NoMatches);
        }
        Ok(Matches {
            points,
            point_pairs,
            lines,
            by_detection: true,
        })
    }

    /// Predictive matching: catalog points are reprojected under the
    /// predicted pose and associated to nearby detections within grid cells;
    /// edge points search the query boundary perpendicular to the predicted
    /// keyline.
    pub fn match_by_tracking(
        &self,
        frame: &Frame,
        predicted: &Pose,
    ) -> Result<Matches, PipelineError> {
        let kf = &self.keyframes[self.current_kf];
        let k = &self.config.k;
        let in_frame = |z: &ImagePoint| {
            z.z1 >= 0.0 && z.z1 < k.width as f64 && z.z2 >= 0.0 && z.z2 < k.height as f64
        };

        // predicted reprojections of the catalog
        let mut pred: Vec<(usize, ImagePoint)> = Vec::new();
        for (i, c) in kf.catalog.iter().enumerate() {
            if let Ok(z) = project(k, predicted, &c.p) {
                if in_frame(&z) {
                    pred.push((i, z));
                }
            }
        }

        let mut points = Vec::new();
        let mut point_pairs = Vec::new();
        if pred.len() >= self.config.min_point_matches && !frame.points.is_empty() {
            // shared grid over the union, cells keyed from the prediction box
            let all: Vec<ImagePoint> = pred
                .iter()
                .map(|(_, z)| *z)
                .chain(frame.points.iter().map(|m| m.z))
                .collect();
            let bbox = {
                let (mut x0, mut y0, mut x1, mut y1) =
                    (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
                for z in &all {
                    x0 = x0.min(z.z1);
                    y0 = y0.min(z.z2);
                    x1 = x1.max(z.z1);
                    y1 = y1.max(z.z2);
                }
                (x0, y0, x1, y1)
            };
            let (p, q) = self.config.grid;
            let cells = grid_bin(&all, bbox, p, q);
            let (pred_cells, meas_cells) = cells.split_at(pred.len());
            let mut used = vec![false; frame.points.len()];
            for (pi, (ci, z)) in pred.iter().enumerate() {
                let mut best: Option<(usize, f64)> = None;
                for (mi, m) in frame.points.iter().enumerate() {
                    if used[mi] || meas_cells[mi] != pred_cells[pi] {
                        continue;
                    }
                    let d = z.dist(&m.z);
                    if d <= self.config.track_radius_px
                        && best.map_or(true, |(_, bd)| d < bd)
                    {
                        best = Some((mi, d));
                    }
                }
                if let Some((mi, _)) = best {
                    used[mi] = true;
                    points.push((kf.catalog[*ci].p, frame.points[mi].z));
                    point_pairs.push((kf.catalog[*ci].id, mi));
                }
            }
        }

        // perpendicular 1D search against the query boundary
        let mut lines = Vec::new();
        if let Some(mask) = &frame.silhouette {
            if let Ok(boundary) = crate::scene::boundary_trace(mask) {
                let bset: HashSet<(i64, i64)> = boundary
                    .iter()
                    .map(|b| (b[0].round() as i64, b[1].round() as i64))
                    .collect();
                for e in &kf.edge_points {
                    let Ok(z) = project(k, predicted, &e.p) else {
                        continue;
                    };
                    let dir3 = kf.keyline_dirs[e.keyline as usize];
                    let Ok(z2) = project(k, predicted, &(e.p + dir3 * 0.05)) else {
                        continue;
                    };
                    let d2 = z2.vector() - z.vector();
                    if d2.norm() < 1e-9 {
                        continue;
                    }
                    let d2 = d2.normalize();
                    let n2 = Vector2::new(-d2[1], d2[0]);
                    let mut hit: Option<Vector2<f64>> = None;
                    let mut s = 0.0;
                    while s <= self.config.edge_search_px {
                        for sign in [1.0, -1.0] {
                            let c = z.vector() + n2 * (s * sign);
                            if bset.contains(&(c[0].round() as i64, c[1].round() as i64)) {
                                hit = Some(c);
                                break;
                            }
                        }
                        if hit.is_some() {
                            break;
                        }
                        s += 0.5;
                    }
                    if let Some(b) = hit {
                        let a = ImagePoint::new(b[0], b[1]);
                        let bb = ImagePoint::new(b[0] + d2[0], b[1] + d2[1]);
                        lines.push((e.p, ImageLine::through(&a, &bb)));
                    }
                }
            }
        }

        if points.len() < self.config.min_point_matches
            && lines.len() < self.config.min_edge_matches
        {
            return Err(PipelineError::NoMatches);
        }
        Ok(Matches {
            points,
            point_pairs,
            lines,
            by_detection: false,
        })
    }

    /// Robust pose fit of one feature type; returns the measurement and the
    /// inlier count.
    fn fit_measurement(
        &self,
        problem: &ReprojectionProblem,
        u0: &Pose,
        source: MeasurementSource,
    ) -> Option<(PoseMeasurement, usize)> {
        let est = match huber_joint_fit(problem, u0, &self.config.fit) {
            Ok(est) => est,
            Err(RobustError::DidNotConverge(est)) => *est,
            Err(_) => return None,
        };
        let est = tukey_polish(problem, &est.pose, est.sigma.max(1e-6)).unwrap_or(est);
        let (inlier_rmse, n_inliers) = inlier_stats(problem, &est);
        // the residual-estimated scale can undershoot the true front-end
        // noise (contour-derived edge residuals in particular are strongly
        // correlated), so the fused covariance is floored at the configured
        // noise level to keep the filter honest
        let mut covariance = est.covariance;
        let floor = self.config.meas_sigma_floor_px;
        if est.sigma < floor {
            covariance *= (floor / est.sigma.max(1e-9)).powi(2);
        }
        Some((
            PoseMeasurement {
                pose: est.pose,
                covariance,
                source,
                rmse: inlier_rmse,
            },
            n_inliers,
        ))
    }

    /// Runs one frame through the loop: (re-)initialize if needed, predict,
    /// match (detection, falling back to predictive tracking), fit, gate,
    /// fuse, and select the next keyframe.
    pub fn step(
        &mut self,
        frame: &Frame,
        truth: Option<&Pose>,
    ) -> Result<FrameResult, PipelineError> {
        let mut reinitialized = false;

        // initialization / re-initialization from the classifier
        if self.state.is_none() {
            let mask = frame
                .silhouette
                .as_ref()
                .ok_or(PipelineError::NotInitialized)?;
            let (kf_idx, coarse) = self.initialize(mask)?;
            self.state = Some(FilterState::initialize(
                coarse,
                self.config.sigma0_pos,
                self.config.sigma0_att,
                self.config.sigma0_vel,
            ));
            self.current_kf = kf_idx;
            self.gated_streak = 0;
            self.last_t = None;
            reinitialized = true;
        }
        let prior = self.state.as_ref().unwrap().clone();

        // time update
        let mut st = match self.last_t {
            Some(t0) if frame.t > t0 => predict(
                &prior,
                frame.t - t0,
                &self.config.process_noise,
                self.config.param,
            ),
            _ => prior,
        };
        self.last_t = Some(frame.t);
        let predicted_pose = st.pose;

        // matching: the descriptor channel first (predictive association can
        // silently confirm a drifting prediction, so it is the fallback)
        let matches = match self.match_by_detection(frame) {
            Ok(m) => Some(m),
            Err(_) => self.match_by_tracking(frame, &predicted_pose).ok(),
        };
        let by_detection = matches.as_ref().map_or(false, |m| m.by_detection);

        let mut result = FrameResult {
            t: frame.t,
            keyframe_id: self.keyframes[self.current_kf].id,
            by_detection,
            reinitialized,
            n_point_matches: 0,
            n_edge_matches: 0,
            n_point_inliers: 0,
            n_edge_inliers: 0,
            points_meas: None,
            points_fused: false,
            edges_meas: None,
            edges_fused: false,
            state: st.clone(),
            truth_error: None,
        };

        if let Some(m) = matches {
            result.n_point_matches = m.points.len();
            result.n_edge_matches = m.lines.len();
            // points measurement; skipped on (re-)acquisition frames, where
            // the keyframe was only just selected from the silhouette and the
            // frame's correspondence ids cannot refer to its catalog yet
            if !reinitialized && m.points.len() >= self.config.min_point_matches {
                let problem = ReprojectionProblem {
                    k: self.config.k,
                    points: m.points.clone(),
                    lines: Vec::new(),
                };
                if let Some((meas, ni)) =
                    self.fit_measurement(&problem, &predicted_pose, MeasurementSource::Points)
                {
                    // inlier flags are per residual row; points have two rows
                    result.n_point_inliers = ni / 2;
                    if gate(&meas, self.config.gate_points_px) {
                        st = correct(&st, &meas, self.config.param)
                            .map_err(|e| PipelineError::Filter(e.to_string()))?;
                        result.points_fused = true;
                    }
                    result.points_meas = Some(meas);
                }
            }
            // edges measurement, fused after points
            if m.lines.len() >= self.config.min_edge_matches {
                let problem = ReprojectionProblem {
                    k: self.config.k,
                    points: Vec::new(),
                    lines: m.lines.clone(),
                };
                if let Some((meas, ni)) =
                    self.fit_measurement(&problem, &st.pose, MeasurementSource::Edges)
                {
                    result.n_edge_inliers = ni;
                    if gate(&meas, self.config.gate_edges_px) {
                        st = correct(&st, &meas, self.config.param)
                            .map_err(|e| PipelineError::Filter(e.to_string()))?;
                        result.edges_fused = true;
                    }
                    result.edges_meas = Some(meas);
                }
            }
        }

        if result.points_fused || result.edges_fused {
            self.gated_streak = 0;
        } else {
            self.gated_streak += 1;
        }

        // next keyframe from the fused (or predicted) attitude
        self.current_kf = self.nearest_keyframe(&st.pose);
        result.state = st.clone();
        self.state = Some(st);

        if self.gated_streak >= self.config.reinit_after {
            self.state = None; // force re-initialization on the next frame
        }

        if let Some(truth) = truth {
            let e = ominus(truth, &result.state.pose);
            result.truth_error = Some((e.rho.norm(), e.phi.norm()));
        }
        Ok(result)
    }
}

/// RMSE over inlier residual rows plus the inlier count of an estimate.
fn inlier_stats(problem: &ReprojectionProblem, est: &PoseEstimate) -> (f64, usize) {
    let Some(r) = problem.residuals(&est.pose) else {
        return (f64::INFINITY, 0);
    };
    let rows: Vec<f64> = r
        .iter()
        .zip(&est.inliers)
        .filter(|(_, &inl)| inl)
        .map(|(&v, _)| v)
        .collect();
    let n_inliers = est.inliers.iter().filter(|&&b| b).count();
    if rows.is_empty() {
        return (f64::INFINITY, 0);
    }
    (rmse(&DVector::from_vec(rows)), n_inliers)
}

// ---------------------------------------------------------------------------
// Run artifacts
// ---------------------------------------------------------------------------

/// CSV trace of a tracking run, one row per frame.
pub fn trace_csv(results: &[FrameResult]) -> String {
    let mut s = String::from(
        "t,keyframe,by_detection,n_point_matches,n_point_inliers,n_edge_matches,\
         n_edge_inliers,points_fused,edges_fused,cov_trace,err_t,err_r\n",
    );
    for r in results {
        let (et, er) = r.truth_error.unwrap_or((f64::NAN, f64::NAN));
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}\n",
            r.t,
            r.keyframe_id,
            r.by_detection as u8,
            r.n_point_matches,
            r.n_point_inliers,
            r.n_edge_matches,
            r.n_edge_inliers,
            r.points_fused as u8,
            r.edges_fused as u8,
            r.state.covariance.trace(),
            et,
            er,
        ));
    }
    s
}

/// Aggregate figures of merit of a tracking run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSummary {
    pub n_frames: usize,
    pub steady_after_s: f64,
    pub fused_fraction: f64,
    pub mean_point_matches: f64,
    pub mean_point_inliers: f64,
    pub mean_edge_matches: f64,
    /// Steady-state statistics (frames with `t >= steady_after_s`), present
    /// only when truth was supplied.
    pub mean_pos_err_m: Option<f64>,
    pub max_pos_err_m: Option<f64>,
    pub mean_att_err_deg: Option<f64>,
    pub max_att_err_deg: Option<f64>,
}

impl RunSummary {
    pub fn from_results(results: &[FrameResult], steady_after_s: f64) -> RunSummary {
        let n = results.len().max(1) as f64;
        let fused = results
            .iter()
            .filter(|r| r.points_fused || r.edges_fused)
            .count() as f64;
        let steady: Vec<(f64, f64)> = results
            .iter()
            .filter(|r| r.t >= steady_after_s)
            .filter_map(|r| r.truth_error)
            .collect();
        let stats = |f: &dyn Fn(&(f64, f64)) -> f64| -> (Option<f64>, Option<f64>) {
            if steady.is_empty() {
                (None, None)
            } else {
                let vals: Vec<f64> = steady.iter().map(f).collect();
                (
                    Some(vals.iter().sum::<f64>() / vals.len() as f64),
                    Some(vals.iter().cloned().fold(0.0, f64::max)),
                )
            }
        };
        let (mean_t, max_t) = stats(&|e| e.0);
        let (mean_r, max_r) = stats(&|e| e.1.to_degrees());
        RunSummary {
            n_frames: results.len(),
            steady_after_s,
            fused_fraction: fused / n,
            mean_point_matches: results.iter().map(|r| r.n_point_matches as f64).sum::<f64>() / n,
            mean_point_inliers: results.iter().map(|r| r.n_point_inliers as f64).sum::<f64>() / n,
            mean_edge_matches: results.iter().map(|r| r.n_edge_matches as f64).sum::<f64>() / n,
            mean_pos_err_m: mean_t,
            max_pos_err_m: max_t,
            mean_att_err_deg: mean_r,
            max_att_err_deg: max_r,
        }
    }
}

/// Symmetric positive semidefinite check helper used by run diagnostics.
pub fn covariance_trace(p: &Matrix12) -> f64 {
    p.trace()
}
