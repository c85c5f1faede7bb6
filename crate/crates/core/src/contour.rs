//! Closed-contour alignment by linear least squares over a 2D similarity.
//!
//! Two closed edge-point sets of equal size are related (up to noise) by
//! `q_i = β R(θ) t_{i'} + t` with an unknown cyclic index shift. With the
//! change of variables `b1 = β cos θ`, `b2 = β sin θ` the per-shift problem
//! becomes linear in `(t1, t2, b1, b2)`, and the shift search reuses a single
//! QR factorization because only the right-hand side permutes.

use nalgebra::{DMatrix, DVector, Vector2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ContourError {
    #[error("degenerate contour (perimeter {0:.3e})")]
    DegenerateContour(f64),
    #[error("rank-deficient alignment system")]
    RankDeficient,
    #[error("contour size mismatch ({0} vs {1})")]
    SizeMismatch(usize, usize),
    #[error("too few distinct points ({0})")]
    TooFewPoints(usize),
}

/// A closed polyline of ordered 2D edge points (pixels); the last point
/// connects back to the first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Contour {
    points: Vec<Vector2<f64>>,
}

impl Contour {
    /// Builds a contour, dropping consecutive duplicate points (including a
    /// duplicated closing point).
    pub fn new(points: Vec<Vector2<f64>>) -> Result<Self, ContourError> {
        let mut pts: Vec<Vector2<f64>> = Vec::with_capacity(points.len());
        for p in points {
            if pts.last().map_or(true, |q| (p - q).norm() > 1e-12) {
                pts.push(p);
            }
        }
        while pts.len() > 1 && (pts[0] - *pts.last().unwrap()).norm() <= 1e-12 {
            pts.pop();
        }
        if pts.len() < 3 {
            return Err(ContourError::TooFewPoints(pts.len()));
        }
        Ok(Contour { points: pts })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Vector2<f64>] {
        &self.points
    }

    /// Total arc length of the closed polyline.
    pub fn perimeter(&self) -> f64 {
        let n = self.points.len();
        (0..n)
            .map(|i| (self.points[(i + 1) % n] - self.points[i]).norm())
            .sum()
    }

    /// Shoelace signed area; positive for counter-clockwise orientation in a
    /// y-up frame.
    pub fn signed_area(&self) -> f64 {
        let n = self.points.len();
        0.5 * (0..n)
            .map(|i| {
                let a = &self.points[i];
                let b = &self.points[(i + 1) % n];
                a[0] * b[1] - b[0] * a[1]
            })
            .sum::<f64>()
    }

    pub fn centroid(&self) -> Vector2<f64> {
        self.points.iter().sum::<Vector2<f64>>() / self.points.len() as f64
    }

    /// Returns a counter-clockwise copy, reversing the traversal if needed
    /// (the start point is kept).
    pub fn oriented_ccw(&self) -> Contour {
        if self.signed_area() >= 0.0 {
            return self.clone();
        }
        let mut pts = self.points.clone();
        pts[1..].reverse();
        Contour { points: pts }
    }

    /// Cyclic shift: output index `i` holds input index `(i + s) mod n`.
    pub fn shifted(&self, s: usize) -> Contour {
        let n = self.points.len();
        let pts = (0..n).map(|i| self.points[(i + s) % n]).collect();
        Contour { points: pts }
    }
}

/// 2D similarity `q = β R(θ) p + t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimilarityTransform {
    /// Translation in pixels.
    pub t: Vector2<f64>,
    /// Scale, > 0.
    pub beta: f64,
    /// Rotation in radians, in `[-π, π)`.
    pub theta: f64,
}

impl SimilarityTransform {
    pub fn identity() -> Self {
        SimilarityTransform {
            t: Vector2::zeros(),
            beta: 1.0,
            theta: 0.0,
        }
    }

    pub fn apply(&self, p: &Vector2<f64>) -> Vector2<f64> {
        let (s, c) = self.theta.sin_cos();
        Vector2::new(
            self.beta * (c * p[0] - s * p[1]) + self.t[0],
            self.beta * (s * p[0] + c * p[1]) + self.t[1],
        )
    }

    pub fn apply_contour(&self, c: &Contour) -> Contour {
        Contour {
            points: c.points.iter().map(|p| self.apply(p)).collect(),
        }
    }
}

/// Resamples a closed contour to `n` points equally spaced by arc length,
/// preserving orientation and the start point.
pub fn resample_contour(raw: &Contour, n: usize) -> Result<Contour, ContourError> {
    assert!(n >= 3, "need at least 3 resampled points");
    let m = raw.points.len();
    let perim = raw.perimeter();
    if perim <= 1e-12 {
        return Err(ContourError::DegenerateContour(perim));
    }
    // cumulative arc length at each vertex (cum[0] = 0, cum[m] = perimeter)
    let mut cum = Vec::with_capacity(m + 1);
    cum.push(0.0);
    for i in 0..m {
        let d = (raw.points[(i + 1) % m] - raw.points[i]).norm();
        cum.push(cum[i] + d);
    }
    let mut pts = Vec::with_capacity(n);
    let mut seg = 0usize;
    for k in 0..n {
        let s = perim * k as f64 / n as f64;
        while seg + 1 < m && cum[seg + 1] < s {
            seg += 1;
        }
        let seg_len = cum[seg + 1] - cum[seg];
        let a = raw.points[seg];
        let b = raw.points[(seg + 1) % m];
        let t = if seg_len > 0.0 { (s - cum[seg]) / seg_len } else { 0.0 };
        pts.push(a + (b - a) * t);
    }
    Ok(Contour { points: pts })
}

/// Thin-QR data reused across cyclic shifts of the right-hand side.
struct AlignSolver {
    qt: DMatrix<f64>,
    r: DMatrix<f64>,
    a: DMatrix<f64>,
}

impl AlignSolver {
    /// Builds and factors the 2n×4 stacked basis for the train contour.
    fn new(dt: &Contour) -> Result<Self, ContourError> {
        let n = dt.len();
        let mut a = DMatrix::zeros(2 * n, 4);
        for (i, p) in dt.points.iter().enumerate() {
            a[(2 * i, 0)] = 1.0;
            a[(2 * i, 2)] = p[0];
            a[(2 * i, 3)] = -p[1];
            a[(2 * i + 1, 1)] = 1.0;
            a[(2 * i + 1, 2)] = p[1];
            a[(2 * i + 1, 3)] = p[0];
        }
        let qr = a.clone().qr();
        let r = qr.r();
        let rmax = (0..4).map(|i| r[(i, i)].abs()).fold(0.0f64, f64::max);
        if (0..4).any(|i| r[(i, i)].abs() < 1e-10 * rmax.max(1.0)) {
            return Err(ContourError::RankDeficient);
        }
        Ok(AlignSolver {
            qt: qr.q().transpose(),
            r,
            a,
        })
    }

    /// Solves for one right-hand side; returns the transform and `‖Ax − b‖`.
    fn solve(&self, b: &DVector<f64>) -> (SimilarityTransform, f64) {
        let y = &self.qt * b;
        let x = self
            .r
            .view((0, 0), (4, 4))
            .solve_upper_triangular(&y)
            .expect("rank checked at factorization");
        let residual = (&self.a * &x - b).norm();
        let (b1, b2) = (x[2], x[3]);
        let beta = (b1 * b1 + b2 * b2).sqrt();
        let mut theta = b2.atan2(b1);
        if theta >= std::f64::consts::PI {
            theta -= 2.0 * std::f64::consts::PI;
        }
        (
            SimilarityTransform {
                t: Vector2::new(x[0], x[1]),
                beta,
                theta,
            },
            residual,
        )
    }
}

fn stack_rhs(dq: &Contour, shift: usize) -> DVector<f64> {
    let n = dq.len();
    let mut b = DVector::zeros(2 * n);
    for i in 0..n {
        let q = &dq.points[(i + shift) % n];
        b[2 * i] = q[0];
        b[2 * i + 1] = q[1];
    }
    b
}

/// Least-squares similarity between equally sized contours with assumed
/// index-to-index correspondence. Returns the transform mapping `dt` onto
/// `dq` and the residual norm of the stacked linear system.
pub fn align_fixed_shift(
    dq: &Contour,
    dt: &Contour,
) -> Result<(SimilarityTransform, f64), ContourError> {
    if dq.len() != dt.len() {
        return Err(ContourError::SizeMismatch(dq.len(), dt.len()));
    }
    let solver = AlignSolver::new(dt)?;
    Ok(solver.solve(&stack_rhs(dq, 0)))
}

/// Full alignment: both contours are normalized to counter-clockwise
/// orientation, then all `n` cyclic shifts of the correspondence are scored
/// and the minimum-residual one returned (ties broken by smaller shift).
/// The returned shift `s` pairs `dq[(i + s) mod n]` with `dt[i]`.
pub fn align_contours(
    dq: &Contour,
    dt: &Contour,
) -> Result<(SimilarityTransform, usize, f64), ContourError> {
    if dq.len() != dt.len() {
        return Err(ContourError::SizeMismatch(dq.len(), dt.len()));
    }
    let dq = dq.oriented_ccw();
    let dt = dt.oriented_ccw();
    let n = dq.len();
    let solver = AlignSolver::new(&dt)?;
    let mut best: Option<(SimilarityTransform, usize, f64)> = None;
    for s in 0..n {
        let (tf, res) = solver.solve(&stack_rhs(&dq, s));
        if best.as_ref().map_or(true, |(_, _, r)| res < *r) {
            best = Some((tf, s, res));
        }
    }
    Ok(best.expect("n >= 3"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};
    use std::f64::consts::PI;

    fn square(side: f64) -> Contour {
        Contour::new(vec![
            Vector2::new(0.0, 0.0),
            Vector2::new(side, 0.0),
            Vector2::new(side, side),
            Vector2::new(0.0, side),
        ])
        .unwrap()
    }

    /// An asymmetric blob: unit circle with a radial bump, sampled densely.
    fn blob(n: usize) -> Contour {
        let pts = (0..n)
            .map(|i| {
                let a = 2.0 * PI * i as f64 / n as f64;
                let r = 10.0 + 3.0 * (a).cos() + 1.5 * (2.0 * a).sin() + 0.8 * (3.0 * a).cos();
                Vector2::new(r * a.cos() + 320.0, r * a.sin() + 240.0)
            })
            .collect();
        Contour::new(pts).unwrap()
    }

    /// A densely sampled random ellipse (a convex polygon with 512 vertices).
    fn rand_convex(rng: &mut StdRng) -> Contour {
        let a = rng.random_range(10.0..50.0);
        let b = a * rng.random_range(0.5..1.0);
        let rot = rng.random_range(0.0..PI);
        let (sr, cr) = rot.sin_cos();
        let pts = (0..512)
            .map(|i| {
                let t = 2.0 * PI * i as f64 / 512.0;
                let (x, y) = (a * t.cos(), b * t.sin());
                Vector2::new(cr * x - sr * y, sr * x + cr * y)
            })
            .collect();
        Contour::new(pts).unwrap()
    }

    #[test]
    fn dedup_and_closing_point() {
        let c = Contour::new(vec![
            Vector2::new(0.0, 0.0),
            Vector2::new(0.0, 0.0),
            Vector2::new(1.0, 0.0),
            Vector2::new(1.0, 1.0),
            Vector2::new(0.0, 0.0), // duplicated closing point
        ])
        .unwrap();
        assert_eq!(c.len(), 3);
    }

    #[test]
    fn resample_square_hits_corners_and_midpoints() {
        let c = resample_contour(&square(4.0), 8).unwrap();
        let expect = [
            (0.0, 0.0),
            (2.0, 0.0),
            (4.0, 0.0),
            (4.0, 2.0),
            (4.0, 4.0),
            (2.0, 4.0),
            (0.0, 4.0),
            (0.0, 2.0),
        ];
        for (p, (x, y)) in c.points().iter().zip(expect.iter()) {
            assert_abs_diff_eq!(p[0], *x, epsilon = 1e-12);
            assert_abs_diff_eq!(p[1], *y, epsilon = 1e-12);
        }
    }

    #[test]
    fn resample_uniform_is_identity() {
        // a regular polygon already has equal segment lengths
        let u: Contour = Contour::new(
            (0..128)
                .map(|i| {
                    let a = 2.0 * PI * i as f64 / 128.0;
                    Vector2::new(20.0 * a.cos() + 3.0, 20.0 * a.sin() - 7.0)
                })
                .collect(),
        )
        .unwrap();
        let u2 = resample_contour(&u, 128).unwrap();
        for (a, b) in u.points().iter().zip(u2.points().iter()) {
            assert!((a - b).norm() < 1e-9);
        }
    }

    #[test]
    fn resample_preserves_perimeter_on_convex_polygons() {
        let mut rng = StdRng::seed_from_u64(21);
        for _ in 0..50 {
            let c = rand_convex(&mut rng);
            let r = resample_contour(&c, 64).unwrap();
            let rel = (r.perimeter() - c.perimeter()).abs() / c.perimeter();
            assert!(rel < 1e-3, "perimeter off by {rel}");
        }
    }

    #[test]
    fn resample_zero_perimeter_is_error() {
        let c = Contour {
            points: vec![Vector2::zeros(); 4],
        };
        assert!(matches!(
            resample_contour(&c, 8),
            Err(ContourError::DegenerateContour(_))
        ));
    }

    #[test]
    fn align_identity() {
        let c = resample_contour(&blob(400), 128).unwrap();
        let (tf, res) = align_fixed_shift(&c, &c).unwrap();
        assert_abs_diff_eq!(tf.beta, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(tf.theta, 0.0, epsilon = 1e-12);
        assert!(tf.t.norm() < 1e-9);
        assert!(res < 1e-9);
    }

    #[test]
    fn align_construct_and_recover() {
        let dt = resample_contour(&blob(400), 128).unwrap();
        let planted = SimilarityTransform {
            t: Vector2::new(5.0, -3.0),
            beta: 2.0,
            theta: PI / 2.0,
        };
        let dq = planted.apply_contour(&dt);
        let (tf, res) = align_fixed_shift(&dq, &dt).unwrap();
        assert_abs_diff_eq!(tf.beta, 2.0, epsilon = 1e-9);
        assert_abs_diff_eq!(tf.theta, PI / 2.0, epsilon = 1e-9);
        assert_abs_diff_eq!(tf.t[0], 5.0, epsilon = 1e-8);
        assert_abs_diff_eq!(tf.t[1], -3.0, epsilon = 1e-8);
        assert!(res < 1e-8);
    }

    #[test]
    fn angle_recovery_covers_all_quadrants() {
        let dt = resample_contour(&blob(400), 128).unwrap();
        for &theta in &[
            -3.0 * PI / 4.0,
            3.0 * PI / 4.0,
            -PI / 4.0,
            PI / 4.0,
            -PI / 2.0,
            PI / 2.0,
            0.0,
            PI - 0.01,
        ] {
            let planted = SimilarityTransform {
                t: Vector2::new(1.0, 2.0),
                beta: 1.3,
                theta,
            };
            let dq = planted.apply_contour(&dt);
            let (tf, _) = align_fixed_shift(&dq, &dt).unwrap();
            let mut dth = tf.theta - theta;
            while dth > PI {
                dth -= 2.0 * PI;
            }
            while dth < -PI {
                dth += 2.0 * PI;
            }
            assert!(dth.abs() < 1e-9, "theta {theta}: error {dth}");
        }
    }

    #[test]
    fn noise_error_shrinks_with_sqrt_n() {
        // Monte-Carlo: σ=0.5 px noise, compare mean |β−1| at n=64 vs n=1024.
        let mut rng = StdRng::seed_from_u64(22);
        let base = blob(4096);
        let mut mean_err = [0.0f64; 2];
        let trials = 60;
        for (k, &n) in [64usize, 1024].iter().enumerate() {
            let dt = resample_contour(&base, n).unwrap();
            for _ in 0..trials {
                let noisy = Contour {
                    points: dt
                        .points()
                        .iter()
                        .map(|p| {
                            // Box-Muller pairs for isotropic Gaussian noise
                            let (u1, u2): (f64, f64) =
                                (rng.random_range(1e-12..1.0), rng.random_range(0.0..1.0));
                            let r = 0.5 * (-2.0 * u1.ln()).sqrt();
                            p + Vector2::new(
                                r * (2.0 * PI * u2).cos(),
                                r * (2.0 * PI * u2).sin(),
                            )
                        })
                        .collect(),
                };
                let (tf, _) = align_fixed_shift(&noisy, &dt).unwrap();
                mean_err[k] += (tf.beta - 1.0).abs() / trials as f64;
            }
        }
        // 16x more points → ~4x smaller error; allow generous slack
        let ratio = mean_err[1] / mean_err[0];
        assert!(ratio < 0.5, "error ratio {ratio} (expected ~0.25)");
    }

    #[test]
    fn shift_recovery() {
        let dt = resample_contour(&blob(400), 128).unwrap();
        let dq = dt.shifted(17);
        // dq[i] = dt[i + 17]; pairing dq[(i + s) % n] with dt[i] needs
        // dq[(i + s) % n] = dt[i], i.e. s = n − 17.
        let (tf, s, res) = align_contours(&dq, &dt).unwrap();
        assert_eq!(s, 128 - 17);
        assert_abs_diff_eq!(tf.beta, 1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(tf.theta, 0.0, epsilon = 1e-9);
        assert!(tf.t.norm() < 1e-8);
        assert!(res < 1e-8);
    }

    #[test]
    fn cyclic_consistency_all_shifts() {
        let d = resample_contour(&blob(200), 32).unwrap();
        for k in 0..32 {
            let (_, s, res) = align_contours(&d.shifted(k), &d).unwrap();
            assert_eq!(s, (32 - k) % 32, "planted shift {k}");
            assert!(res < 1e-8);
        }
    }

    #[test]
    fn shift_and_similarity_combined() {
        let dt = resample_contour(&blob(400), 128).unwrap();
        let planted = SimilarityTransform {
            t: Vector2::new(-7.0, 11.0),
            beta: 0.6,
            theta: -2.0,
        };
        let dq = planted.apply_contour(&dt).shifted(40);
        let (tf, s, res) = align_contours(&dq, &dt).unwrap();
        assert_eq!(s, 128 - 40);
        assert_abs_diff_eq!(tf.beta, 0.6, epsilon = 1e-9);
        assert_abs_diff_eq!(tf.theta, -2.0, epsilon = 1e-9);
        assert!(res < 1e-7);
    }

    #[test]
    fn reversed_traversal_is_renormalized() {
        // plain order reversal flips the signed area; CCW normalization in
        // align_contours undoes it, so alignment still succeeds
        let dt = resample_contour(&blob(400), 64).unwrap();
        let mut rev = dt.points().to_vec();
        rev.reverse();
        let dq = Contour::new(rev).unwrap();
        let (tf, _, res) = align_contours(&dq, &dt).unwrap();
        assert!(res < 1e-8);
        assert_abs_diff_eq!(tf.beta, 1.0, epsilon = 1e-9);
    }

    #[test]
    fn reflected_contour_never_aligns() {
        // a mirror image is outside the similarity group: every shift leaves
        // a large residual (reflections are not searched)
        let dt = resample_contour(&blob(400), 64).unwrap();
        let mirrored = Contour::new(
            dt.points()
                .iter()
                .map(|p| Vector2::new(-p[0], p[1]))
                .collect(),
        )
        .unwrap();
        let (_, _, res) = align_contours(&mirrored, &dt).unwrap();
        // perimeter ~ hundreds of px; a good fit would be < 1e-6
        assert!(res > 1.0, "reflected residual unexpectedly small: {res}");
    }

    #[test]
    fn linear_solution_beats_random_candidates() {
        let mut rng = StdRng::seed_from_u64(23);
        let dt = resample_contour(&blob(300), 64).unwrap();
        let planted = SimilarityTransform {
            t: Vector2::new(2.0, -1.0),
            beta: 1.4,
            theta: 0.7,
        };
        // noisy construct so the optimum is not exactly zero
        let dq = Contour {
            points: planted
                .apply_contour(&dt)
                .points()
                .iter()
                .map(|p| p + Vector2::new(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5)))
                .collect(),
        };
        let (tf, res) = align_fixed_shift(&dq, &dt).unwrap();
        let cost = |tf: &SimilarityTransform| -> f64 {
            dq.points()
                .iter()
                .zip(dt.points())
                .map(|(q, t)| (q - tf.apply(t)).norm_squared())
                .sum::<f64>()
                .sqrt()
        };
        assert_abs_diff_eq!(cost(&tf), res, epsilon = 1e-9);
        for _ in 0..1000 {
            let cand = SimilarityTransform {
                t: tf.t + Vector2::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)),
                beta: tf.beta * rng.random_range(0.8..1.2),
                theta: tf.theta + rng.random_range(-0.3..0.3),
            };
            assert!(cost(&cand) >= res - 1e-12);
        }
    }

    #[test]
    fn rank_deficient_degenerate_contour() {
        // all points identical after the dedup guard is bypassed
        let c = Contour {
            points: vec![Vector2::new(1.0, 1.0); 16],
        };
        assert_eq!(
            align_fixed_shift(&c, &c).unwrap_err(),
            ContourError::RankDeficient
        );
    }
}
