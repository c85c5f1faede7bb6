//! Gaussian-mixture view-class models and Bayesian classification.
//!
//! Every viewsphere class stores a diagonal-covariance Gaussian mixture over
//! shape-descriptor vectors. Mixtures are fitted either with plain EM (fixed
//! component count) or with the Figueiredo–Jain procedure, which starts from
//! a deliberately large mixture and annihilates unsupported components while
//! descending a minimum-message-length cost, removing the need to guess the
//! component count per class.

use nalgebra::DVector;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

/// Relative variance floor: per-dimension variances are clamped to this
/// fraction of the per-dimension data variance.
pub const VARIANCE_FLOOR_REL: f64 = 1e-8;

/// Schema version of the serialized class database.
pub const DB_VERSION: u32 = 1;

#[derive(Debug, Error, PartialEq)]
pub enum MixtureError {
    #[error("dimension mismatch ({0} vs {1})")]
    DimensionMismatch(usize, usize),
    #[error("degenerate component: variance floored on all dimensions")]
    Degenerate,
    #[error("all mixture components annihilated (too few samples)")]
    AllAnnihilated,
    #[error("class needs at least {need} samples, has {have}")]
    InsufficientSamples { need: usize, have: usize },
    #[error("unsupported database version {0} (expected {DB_VERSION})")]
    UnsupportedVersion(u32),
    #[error("malformed database: {0}")]
    Malformed(String),
}

/// One mixture component with diagonal covariance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GmmComponent {
    pub alpha: f64,
    pub mu: DVector<f64>,
    pub var: DVector<f64>,
}

/// A Gaussian mixture with diagonal covariances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GmmModel {
    pub components: Vec<GmmComponent>,
}

impl GmmModel {
    pub fn dim(&self) -> usize {
        self.components.first().map_or(0, |c| c.mu.len())
    }

    pub fn n_components(&self) -> usize {
        self.components.len()
    }
}

/// Viewsphere class identifier: (azimuth bin, elevation bin).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ClassId {
    pub az_bin: usize,
    pub el_bin: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassEntry {
    pub az_bin: usize,
    pub el_bin: usize,
    pub prior: f64,
    pub model: GmmModel,
}

/// The trained classifier: one mixture and prior per viewsphere class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassDatabase {
    pub version: u32,
    pub d: usize,
    pub az_bin_width_deg: f64,
    pub el_bin_width_deg: f64,
    pub classes: Vec<ClassEntry>,
}

impl ClassDatabase {
    /// Checks schema version and probability invariants after a reload.
    pub fn validate(&self) -> Result<(), MixtureError> {
        if self.version != DB_VERSION {
            return Err(MixtureError::UnsupportedVersion(self.version));
        }
        let psum: f64 = self.classes.iter().map(|c| c.prior).sum();
        if (psum - 1.0).abs() > 1e-9 {
            return Err(MixtureError::Malformed(format!("priors sum to {psum}")));
        }
        for c in &self.classes {
            let asum: f64 = c.model.components.iter().map(|g| g.alpha).sum();
            if (asum - 1.0).abs() > 1e-9 {
                return Err(MixtureError::Malformed(format!(
                    "class ({},{}) weights sum to {asum}",
                    c.az_bin, c.el_bin
                )));
            }
            for g in &c.model.components {
                if g.mu.len() != self.d || g.var.len() != self.d {
                    return Err(MixtureError::Malformed("component dimension".into()));
                }
                if g.var.iter().any(|&v| v <= 0.0) {
                    return Err(MixtureError::Malformed("non-positive variance".into()));
                }
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("database serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, MixtureError> {
        let db: ClassDatabase =
            serde_json::from_str(s).map_err(|e| MixtureError::Malformed(e.to_string()))?;
        db.validate()?;
        Ok(db)
    }
}

fn logsumexp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Per-component log of `α_i · N(y; μ_i, diag σ²_i)`.
fn component_logpdfs(model: &GmmModel, y: &DVector<f64>) -> Vec<f64> {
    model
        .components
        .iter()
        .map(|c| {
            let mut e = c.alpha.ln();
            for j in 0..y.len() {
                let dy = y[j] - c.mu[j];
                e -= 0.5 * ((2.0 * PI * c.var[j]).ln() + dy * dy / c.var[j]);
            }
            e
        })
        .collect()
}

/// Log mixture density, via log-sum-exp.
pub fn gmm_logpdf(model: &GmmModel, y: &DVector<f64>) -> Result<f64, MixtureError> {
    if model.dim() != y.len() {
        return Err(MixtureError::DimensionMismatch(model.dim(), y.len()));
    }
    Ok(logsumexp(&component_logpdfs(model, y)))
}

fn data_variance_floor(data: &[DVector<f64>]) -> DVector<f64> {
    let d = data[0].len();
    let m = data.len() as f64;
    let mean = data.iter().sum::<DVector<f64>>() / m;
    let mut var = DVector::zeros(d);
    for y in data {
        let dy = y - &mean;
        var += dy.component_mul(&dy);
    }
    var /= m;
    var.map(|v| (VARIANCE_FLOOR_REL * v).max(1e-300))
}

/// Responsibility matrix `w[i][p]` and total log-likelihood.
fn responsibilities(model: &GmmModel, data: &[DVector<f64>]) -> (Vec<Vec<f64>>, f64) {
    let mut w = Vec::with_capacity(data.len());
    let mut loglik = 0.0;
    for y in data {
        let lp = component_logpdfs(model, y);
        let lse = logsumexp(&lp);
        loglik += lse;
        w.push(lp.iter().map(|&l| (l - lse).exp()).collect());
    }
    (w, loglik)
}

fn init_model<R: Rng>(data: &[DVector<f64>], n: usize, rng: &mut R) -> GmmModel {
    let m = data.len();
    let d = data[0].len();
    let mean = data.iter().sum::<DVector<f64>>() / m as f64;
    let mut var = DVector::zeros(d);
    for y in data {
        let dy = y - &mean;
        var += dy.component_mul(&dy);
    }
    var /= m as f64;
    let var = var.map(|v: f64| v.max(1e-12));
    let mut idx: Vec<usize> = (0..m).collect();
    idx.shuffle(rng);
    GmmModel {
        components: idx[..n.min(m)]
            .iter()
            .map(|&i| GmmComponent {
                alpha: 1.0 / n.min(m) as f64,
                mu: data[i].clone(),
                var: var.clone(),
            })
            .collect(),
    }
}

/// Classical EM with a fixed component count; also returns the per-iteration
/// log-likelihood trace.
pub fn em_fit_with_trace<R: Rng>(
    data: &[DVector<f64>],
    n_components: usize,
    rng: &mut R,
) -> Result<(GmmModel, Vec<f64>), MixtureError> {
    assert!(n_components >= 1);
    if data.len() <= 2 * n_components {
        return Err(MixtureError::InsufficientSamples {
            need: 2 * n_components + 1,
            have: data.len(),
        });
    }
    let floor = data_variance_floor(data);
    let mut model = init_model(data, n_components, rng);
    let m = data.len();
    let d = data[0].len();
    let mut trace: Vec<f64> = Vec::new();
    for _ in 0..300 {
        let (w, loglik) = responsibilities(&model, data);
        if let Some(&prev) = trace.last() {
            if (loglik - prev).abs() < 1e-7 * loglik.abs().max(1.0) {
                trace.push(loglik);
                break;
            }
        }
        trace.push(loglik);
        for p in 0..model.components.len() {
            let sw: f64 = (0..m).map(|i| w[i][p]).sum();
            let mut mu = DVector::zeros(d);
            for i in 0..m {
                mu += w[i][p] * &data[i];
            }
            mu /= sw;
            let mut var = DVector::zeros(d);
            for i in 0..m {
                let dy = &data[i] - &mu;
                var += w[i][p] * dy.component_mul(&dy);
            }
            var /= sw;
            let var = var.zip_map(&floor, |v, f| v.max(f));
            if var.iter().zip(floor.iter()).all(|(v, f)| *v <= f * (1.0 + 1e-12)) {
                return Err(MixtureError::Degenerate);
            }
            model.components[p] = GmmComponent {
                alpha: sw / m as f64,
                mu,
                var,
            };
        }
    }
    Ok((model, trace))
}

/// Classical EM with a fixed component count.
pub fn em_fit<R: Rng>(
    data: &[DVector<f64>],
    n_components: usize,
    rng: &mut R,
) -> Result<GmmModel, MixtureError> {
    em_fit_with_trace(data, n_components, rng).map(|(m, _)| m)
}

/// Minimum-message-length cost of a mixture on a dataset; `N = 2d` is the
/// parameter count of a diagonal-covariance component.
pub fn mml_cost(model: &GmmModel, data: &[DVector<f64>]) -> f64 {
    let m = data.len() as f64;
    let n = model.n_components() as f64;
    let nn = 2.0 * model.dim() as f64;
    let loglik: f64 = data
        .iter()
        .map(|y| logsumexp(&component_logpdfs(model, y)))
        .sum();
    let wterm: f64 = model
        .components
        .iter()
        .map(|c| (m * c.alpha / 12.0).ln())
        .sum();
    0.5 * nn * wterm + 0.5 * n * (m / 12.0).ln() + 0.5 * n * (nn + 1.0) - loglik
}

/// One component-wise EM sweep with explicit annihilation: responsibilities
/// are recomputed after each component update so the mass of a dying
/// component is redistributed immediately. Returns true if any component was
/// removed.
pub(crate) fn cem_sweep(
    model: &mut GmmModel,
    data: &[DVector<f64>],
    floor: &DVector<f64>,
) -> bool {
    let m = data.len();
    let d = data[0].len();
    let big_n = 2.0 * d as f64;
    let mut removed = false;
    let mut p = 0;
    while p < model.components.len() {
        let (w, _) = responsibilities(model, data);
        let sums: Vec<f64> = (0..model.components.len())
            .map(|q| (0..m).map(|i| w[i][q]).sum())
            .collect();
        let clipped: Vec<f64> = sums.iter().map(|&s| (s - big_n / 2.0).max(0.0)).collect();
        let denom: f64 = clipped.iter().sum();
        if denom <= 0.0 {
            // no component retains support; annihilate them all
            model.components.clear();
            return true;
        }
        if clipped[p] <= 0.0 {
            model.components.remove(p);
            removed = true;
            // renormalize survivors against the same denominator rule on the
            // next pass; weights are rescaled below as other comps update
            let asum: f64 = model.components.iter().map(|c| c.alpha).sum();
            for c in &mut model.components {
                c.alpha /= asum;
            }
            continue;
        }
        let sw = sums[p];
        let mut mu = DVector::zeros(d);
        for i in 0..m {
            mu += w[i][p] * &data[i];
        }
        mu /= sw;
        let mut var = DVector::zeros(d);
        for i in 0..m {
            let dy = &data[i] - &mu;
            var += w[i][p] * dy.component_mul(&dy);
        }
        var /= sw;
        let var = var.zip_map(floor, |v, f| v.max(f));
        model.components[p] = GmmComponent {
            alpha: clipped[p] / denom,
            mu,
            var,
        };
        // keep Σα = 1 across the partially updated sweep
        let asum: f64 = model.components.iter().map(|c| c.alpha).sum();
        for c in &mut model.components {
            c.alpha /= asum;
        }
        p += 1;
    }
    removed
}

/// Figueiredo–Jain fit: start from `n_max` components, run component-wise EM
/// with annihilation to convergence, then repeatedly force the weakest
/// component out, and return the visited model with the lowest MML cost.
pub fn fj_fit<R: Rng>(
    data: &[DVector<f64>],
    n_max_components: usize,
    rng: &mut R,
) -> Result<GmmModel, MixtureError> {
    assert!(n_max_components >= 1);
    let d = data[0].len();
    if data.len() <= 2 * d {
        return Err(MixtureError::InsufficientSamples {
            need: 2 * d + 1,
            have: data.len(),
        });
    }
    let floor = data_variance_floor(data);
    let mut model = init_model(data, n_max_components, rng);
    let mut best: Option<(f64, GmmModel)> = None;
    loop {
        // CEM until the cost stalls
        let mut prev = f64::INFINITY;
        for _ in 0..300 {
            cem_sweep(&mut model, data, &floor);
            if model.components.is_empty() {
                return best.map(|(_, m)| m).ok_or(MixtureError::AllAnnihilated);
            }
            let cost = mml_cost(&model, data);
            if (prev - cost).abs() < 1e-7 * cost.abs().max(1.0) {
                break;
            }
            prev = cost;
        }
        let cost = mml_cost(&model, data);
        if best.as_ref().map_or(true, |(c, _)| cost < *c) {
            best = Some((cost, model.clone()));
        }
        if model.n_components() == 1 {
            break;
        }
        // force the least-supported component out and continue
        let weakest = model
            .components
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.alpha.partial_cmp(&b.1.alpha).unwrap())
            .map(|(i, _)| i)
            .unwrap();
        model.components.remove(weakest);
        let asum: f64 = model.components.iter().map(|c| c.alpha).sum();
        for c in &mut model.components {
            c.alpha /= asum;
        }
    }
    let _ = rng;
    best.map(|(_, m)| m).ok_or(MixtureError::AllAnnihilated)
}

/// Ranked Bayesian classification: posteriors `∝ p(y|C_m) P(C_m)`, summed to
/// one, descending; ties keep database order (lower class index first).
pub fn classify(
    db: &ClassDatabase,
    y: &DVector<f64>,
) -> Result<Vec<(ClassId, f64)>, MixtureError> {
    if y.len() != db.d {
        return Err(MixtureError::DimensionMismatch(db.d, y.len()));
    }
    let logs: Vec<f64> = db
        .classes
        .iter()
        .map(|c| {
            gmm_logpdf(&c.model, y).map(|lp| lp + c.prior.ln())
        })
        .collect::<Result<_, _>>()?;
    let lse = logsumexp(&logs);
    let mut ranked: Vec<(ClassId, f64)> = db
        .classes
        .iter()
        .zip(&logs)
        .map(|(c, &l)| {
            (
                ClassId {
                    az_bin: c.az_bin,
                    el_bin: c.el_bin,
                },
                (l - lse).exp(),
            )
        })
        .collect();
    ranked.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
    Ok(ranked)
}

/// Fits one mixture per class with [`fj_fit`] and assembles a database with
/// equiprobable priors.
pub fn fit_class_database<R: Rng>(
    classes: &[(ClassId, Vec<DVector<f64>>)],
    n_max_components: usize,
    az_bin_width_deg: f64,
    el_bin_width_deg: f64,
    rng: &mut R,
) -> Result<ClassDatabase, MixtureError> {
    assert!(!classes.is_empty());
    let d = classes[0].1[0].len();
    let prior = 1.0 / classes.len() as f64;
    let mut entries = Vec::with_capacity(classes.len());
    for (id, data) in classes {
        let model = fj_fit(data, n_max_components, rng)?;
        entries.push(ClassEntry {
            az_bin: id.az_bin,
            el_bin: id.el_bin,
            prior,
            model,
        });
    }
    Ok(ClassDatabase {
        version: DB_VERSION,
        d,
        az_bin_width_deg,
        el_bin_width_deg,
        classes: entries,
    })
}

/// Azimuth bin distance under the 180° aliasing of silhouettes: the shortest
/// circular distance to either the true bin or its antipode.
pub fn az_bin_distance(a: usize, b: usize, n_az: usize) -> usize {
    let circ = |a: usize, b: usize| {
        let d = (a as i64 - b as i64).rem_euclid(n_az as i64) as usize;
        d.min(n_az - d)
    };
    circ(a, b).min(circ(a, (b + n_az / 2) % n_az))
}

/// Elevation bin distance (plain absolute difference).
pub fn el_bin_distance(a: usize, b: usize) -> usize {
    a.abs_diff(b)
}

/// Cross-validated confusion statistics over bin distances.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConfusionStats {
    /// PMF over azimuth bin distance (modulo 180°), index = distance.
    pub az_pmf: Vec<f64>,
    /// PMF over elevation bin distance.
    pub el_pmf: Vec<f64>,
    pub n_tested: usize,
}

impl ConfusionStats {
    pub fn az_exact(&self) -> f64 {
        self.az_pmf.first().copied().unwrap_or(0.0)
    }

    pub fn az_within(&self, k: usize) -> f64 {
        self.az_pmf.iter().take(k + 1).sum()
    }

    pub fn el_exact(&self) -> f64 {
        self.el_pmf.first().copied().unwrap_or(0.0)
    }

    pub fn el_within(&self, k: usize) -> f64 {
        self.el_pmf.iter().take(k + 1).sum()
    }
}

/// K-fold cross-validation. For every fold, `builder` is trained on the
/// remaining folds and must return a classifier closure mapping a feature to
/// a class id; the fold's samples are then scored by azimuth/elevation bin
/// distance.
pub fn kfold_validate<R, F, C>(
    classes: &[(ClassId, Vec<DVector<f64>>)],
    k: usize,
    n_az: usize,
    rng: &mut R,
    mut builder: F,
) -> Result<ConfusionStats, MixtureError>
where
    R: Rng,
    F: FnMut(&[(ClassId, Vec<DVector<f64>>)]) -> Result<C, MixtureError>,
    C: FnMut(&DVector<f64>) -> ClassId,
{
    assert!(k >= 2);
    for (id, data) in classes {
        if data.len() < k {
            let _ = id;
            return Err(MixtureError::InsufficientSamples {
                need: k,
                have: data.len(),
            });
        }
    }
    // per-class shuffled fold assignment
    let folds: Vec<Vec<usize>> = classes
        .iter()
        .map(|(_, data)| {
            let mut idx: Vec<usize> = (0..data.len()).collect();
            idx.shuffle(rng);
            idx
        })
        .collect();
    let mut az_hist = vec![0usize; n_az / 2 + 1];
    let mut el_hist = vec![0usize; 64];
    let mut n_tested = 0usize;
    for fold in 0..k {
        let mut train: Vec<(ClassId, Vec<DVector<f64>>)> = Vec::with_capacity(classes.len());
        let mut test: Vec<(ClassId, Vec<DVector<f64>>)> = Vec::with_capacity(classes.len());
        for (ci, (id, data)) in classes.iter().enumerate() {
            let mut tr = Vec::new();
            let mut te = Vec::new();
            for (j, &si) in folds[ci].iter().enumerate() {
                if j % k == fold {
                    te.push(data[si].clone());
                } else {
                    tr.push(data[si].clone());
                }
            }
            train.push((*id, tr));
            test.push((*id, te));
        }
        let mut classifier = builder(&train)?;
        for (id, samples) in &test {
            for y in samples {
                let pred = classifier(y);
                az_hist[az_bin_distance(pred.az_bin, id.az_bin, n_az)] += 1;
                let eld = el_bin_distance(pred.el_bin, id.el_bin);
                if eld < el_hist.len() {
                    el_hist[eld] += 1;
                }
                n_tested += 1;
            }
        }
    }
    let norm = n_tested.max(1) as f64;
    Ok(ConfusionStats {
        az_pmf: az_hist.iter().map(|&c| c as f64 / norm).collect(),
        el_pmf: el_hist.iter().map(|&c| c as f64 / norm).collect(),
        n_tested,
    })
}
