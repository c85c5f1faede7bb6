//! Complex Zernike moments of binary silhouettes.
//!
//! A silhouette mask is centered at its binary centroid and mapped into the
//! unit disk, where the moments `A_nl` of the Zernike basis are accumulated
//! with the `(n+1)/π` normalization. Translation invariance comes from the
//! centering, scale invariance from the area-based disk radius, and rotation
//! invariance from phase normalization against a reference moment. Radial
//! polynomials are evaluated with the Kintner three-term recurrence, which is
//! stable far beyond the factorial sum.

use nalgebra::{Complex, DVector};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::io::{Read, Write};
use thiserror::Error;

/// Default disk-radius margin: the shape is shrunk to fit strictly inside
/// the unit disk so boundary pixels are not clipped.
pub const DEFAULT_DISK_MARGIN: f64 = 1.2;

/// Moments with phase magnitude below this floor cannot anchor the rotation
/// normalization.
pub const PHASE_FLOOR: f64 = 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum ZernikeError {
    #[error("mask has no set pixels")]
    EmptyMask,
    #[error("invalid radial index (n={n}, l={l})")]
    InvalidIndex { n: usize, l: i64 },
    #[error("all candidate normalizing moments below the phase floor")]
    DegeneratePhase,
    #[error("malformed PGM: {0}")]
    MalformedPgm(String),
    #[error("io error: {0}")]
    Io(String),
}

/// A binary image, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryMask {
    pub width: usize,
    pub height: usize,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: usize, height: usize) -> Self {
        BinaryMask {
            width,
            height,
            bits: vec![false; width * height],
        }
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.bits[y * self.width + x] = v;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    /// Iterator over set-pixel coordinates `(x, y)`.
    pub fn set_pixels(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(|(i, _)| (i % self.width, i / self.width))
    }

    /// Writes the mask as a binary PGM (P5, maxval 255, pixels 0/255).
    pub fn write_pgm<W: Write>(&self, w: &mut W) -> Result<(), ZernikeError> {
        let header = format!("P5\n{} {}\n255\n", self.width, self.height);
        let mut buf = Vec::with_capacity(header.len() + self.bits.len());
        buf.extend_from_slice(header.as_bytes());
        buf.extend(self.bits.iter().map(|&b| if b { 255u8 } else { 0 }));
        w.write_all(&buf).map_err(|e| ZernikeError::Io(e.to_string()))
    }

    /// Reads a binary PGM; any pixel value above 127 counts as set.
    pub fn read_pgm<R: Read>(r: &mut R) -> Result<Self, ZernikeError> {
        let mut data = Vec::new();
        r.read_to_end(&mut data)
            .map_err(|e| ZernikeError::Io(e.to_string()))?;
        // parse the three whitespace-separated header tokens after "P5",
        // skipping '#' comment lines
        if !data.starts_with(b"P5") {
            return Err(ZernikeError::MalformedPgm("missing P5 magic".into()));
        }
        let mut pos = 2;
        let mut tokens = Vec::with_capacity(3);
        while tokens.len() < 3 && pos < data.len() {
            while pos < data.len() && data[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < data.len() && data[pos] == b'#' {
                while pos < data.len() && data[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            let start = pos;
            while pos < data.len() && !data[pos].is_ascii_whitespace() {
                pos += 1;
            }
            tokens.push(
                std::str::from_utf8(&data[start..pos])
                    .ok()
                    .and_then(|s| s.parse::<usize>().ok())
                    .ok_or_else(|| ZernikeError::MalformedPgm("bad header token".into()))?,
            );
        }
        if tokens.len() != 3 {
            return Err(ZernikeError::MalformedPgm("truncated header".into()));
        }
        let (width, height, maxval) = (tokens[0], tokens[1], tokens[2]);
        if maxval == 0 || maxval > 255 {
            return Err(ZernikeError::MalformedPgm(format!("maxval {maxval}")));
        }
        pos += 1; // single whitespace byte after maxval
        if data.len() < pos + width * height {
            return Err(ZernikeError::MalformedPgm("truncated pixel data".into()));
        }
        Ok(BinaryMask {
            width,
            height,
            bits: data[pos..pos + width * height].iter().map(|&v| v > 127).collect(),
        })
    }
}

/// Geometric moment table `M_pq = Σ x^p y^q` over set pixels, `p, q ≤ order`.
#[derive(Debug, Clone)]
pub struct MomentTable {
    pub order: usize,
    m: Vec<f64>,
}

impl MomentTable {
    pub fn get(&self, p: usize, q: usize) -> f64 {
        assert!(p <= self.order && q <= self.order);
        self.m[p * (self.order + 1) + q]
    }

    pub fn centroid(&self) -> (f64, f64) {
        let m00 = self.get(0, 0);
        (self.get(1, 0) / m00, self.get(0, 1) / m00)
    }
}

/// Raw geometric moments of a mask up to the given order in each index.
pub fn geometric_moments(mask: &BinaryMask, order: usize) -> Result<MomentTable, ZernikeError> {
    if mask.count() == 0 {
        return Err(ZernikeError::EmptyMask);
    }
    let mut m = vec![0.0; (order + 1) * (order + 1)];
    for (x, y) in mask.set_pixels() {
        let mut xp = 1.0;
        for p in 0..=order {
            let mut t = xp;
            for q in 0..=order {
                m[p * (order + 1) + q] += t;
                t *= y as f64;
            }
            xp *= x as f64;
        }
    }
    Ok(MomentTable { order, m })
}

fn check_index(n: usize, l: i64) -> Result<usize, ZernikeError> {
    let la = l.unsigned_abs() as usize;
    if la > n || (n - la) % 2 != 0 {
        return Err(ZernikeError::InvalidIndex { n, l });
    }
    Ok(la)
}

/// Radial Zernike polynomial `R_nl(r)` via the Kintner recurrence.
pub fn radial_poly(n: usize, l: i64, r: f64) -> Result<f64, ZernikeError> {
    let la = check_index(n, l)?;
    // walk the recurrence up in n at fixed |l|
    let mut rm4 = r.powi(la as i32); // R_{l,l}
    if n == la {
        return Ok(rm4);
    }
    let lf = la as f64;
    let mut rm2 = ((lf + 2.0) * r * r - (lf + 1.0)) * rm4; // R_{l+2,l}
    if n == la + 2 {
        return Ok(rm2);
    }
    let mut m = la + 4;
    loop {
        let nf = m as f64;
        let k1 = (nf + lf) * (nf - lf) * (nf - 2.0) / 2.0;
        let k2 = 2.0 * nf * (nf - 1.0) * (nf - 2.0);
        let k3 = -lf * lf * (nf - 1.0) - nf * (nf - 1.0) * (nf - 2.0);
        let k4 = -nf * (nf + lf - 2.0) * (nf - lf - 2.0) / 2.0;
        let rn = ((k2 * r * r + k3) * rm2 + k4 * rm4) / k1;
        if m == n {
            return Ok(rn);
        }
        rm4 = rm2;
        rm2 = rn;
        m += 2;
    }
}

/// Complex Zernike moments `A_nl` for `0 ≤ l ≤ n ≤ n_max`, `n − l` even.
/// Negative repetitions are the conjugates and are not stored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZernikeDescriptor {
    pub n_max: usize,
    /// `(n, l, A_nl)` ordered by `n` then `l`.
    moments: Vec<(usize, usize, Complex<f64>)>,
    /// Index `(n, l)` of the moment whose phase was zeroed, once normalized.
    pub normalizer: Option<(usize, usize)>,
}

impl ZernikeDescriptor {
    fn index_of(&self, n: usize, l: usize) -> Option<usize> {
        self.moments.iter().position(|&(a, b, _)| a == n && b == l)
    }

    /// `A_nl`, resolving negative `l` through conjugate symmetry.
    pub fn get(&self, n: usize, l: i64) -> Result<Complex<f64>, ZernikeError> {
        let la = check_index(n, l)?;
        let idx = self
            .index_of(n, la)
            .ok_or(ZernikeError::InvalidIndex { n, l })?;
        let a = self.moments[idx].2;
        Ok(if l < 0 { a.conj() } else { a })
    }

    pub fn moments(&self) -> &[(usize, usize, Complex<f64>)] {
        &self.moments
    }

    /// Euclidean distance over the stored complex coefficients.
    pub fn dist(&self, other: &ZernikeDescriptor) -> f64 {
        assert_eq!(self.n_max, other.n_max);
        self.moments
            .iter()
            .zip(&other.moments)
            .map(|(a, b)| (a.2 - b.2).norm_sqr())
            .sum::<f64>()
            .sqrt()
    }

    pub fn norm(&self) -> f64 {
        self.moments.iter().map(|m| m.2.norm_sqr()).sum::<f64>().sqrt()
    }
}

/// Zernike descriptor with the default disk margin.
pub fn zernike_descriptor(mask: &BinaryMask, n_max: usize) -> Result<ZernikeDescriptor, ZernikeError> {
    zernike_descriptor_with_margin(mask, n_max, DEFAULT_DISK_MARGIN)
}

/// Zernike descriptor of a mask mapped to the unit disk centered at the
/// binary centroid with radius `margin · sqrt(M00/π)`; pixels falling outside
/// the disk are dropped.
pub fn zernike_descriptor_with_margin(
    mask: &BinaryMask,
    n_max: usize,
    margin: f64,
) -> Result<ZernikeDescriptor, ZernikeError> {
    assert!(n_max >= 4, "n_max must be at least 4");
    assert!(margin > 0.0);
    let m = geometric_moments(mask, 1)?;
    let (cx, cy) = m.centroid();
    let radius = margin * (m.get(0, 0) / PI).sqrt();

    let pairs: Vec<(usize, usize)> = (0..=n_max)
        .flat_map(|n| (n % 2..=n).step_by(2).map(move |l| (n, l)))
        .collect();
    // index lookup (n, l) -> position in `pairs`
    let mut idx_of = vec![usize::MAX; (n_max + 1) * (n_max + 1)];
    for (i, &(n, l)) in pairs.iter().enumerate() {
        idx_of[n * (n_max + 1) + l] = i;
    }
    let mut acc = vec![Complex::new(0.0, 0.0); pairs.len()];
    let mut radial = vec![0.0f64; pairs.len()];
    let mut ang = vec![Complex::new(1.0, 0.0); n_max + 1];

    for (x, y) in mask.set_pixels() {
        let dx = (x as f64 - cx) / radius;
        let dy = (y as f64 - cy) / radius;
        let r = (dx * dx + dy * dy).sqrt();
        if r > 1.0 {
            continue;
        }
        let theta = dy.atan2(dx);
        // radial recurrence up in n at each fixed l
        for l in 0..=n_max {
            let lf = l as f64;
            let mut rm4 = r.powi(l as i32);
            let mut rm2 = if l + 2 <= n_max {
                ((lf + 2.0) * r * r - (lf + 1.0)) * rm4
            } else {
                0.0
            };
            let mut n = l;
            while n <= n_max {
                radial[idx_of[n * (n_max + 1) + l]] = match n - l {
                    0 => rm4,
                    2 => rm2,
                    _ => {
                        let nf = n as f64;
                        let k1 = (nf + lf) * (nf - lf) * (nf - 2.0) / 2.0;
                        let k2 = 2.0 * nf * (nf - 1.0) * (nf - 2.0);
                        let k3 = -lf * lf * (nf - 1.0) - nf * (nf - 1.0) * (nf - 2.0);
                        let k4 = -nf * (nf + lf - 2.0) * (nf - lf - 2.0) / 2.0;
                        let rn = ((k2 * r * r + k3) * rm2 + k4 * rm4) / k1;
                        rm4 = rm2;
                        rm2 = rn;
                        rn
                    }
                };
                n += 2;
            }
        }
        // e^{-i l θ} by iterated multiplication
        let w = Complex::from_polar(1.0, -theta);
        for l in 1..=n_max {
            ang[l] = ang[l - 1] * w;
        }
        for (idx, &(_, l)) in pairs.iter().enumerate() {
            acc[idx] += radial[idx] * ang[l];
        }
    }

    let area = 1.0 / (radius * radius); // pixel area in disk units
    let moments = pairs
        .iter()
        .zip(acc)
        .map(|(&(n, l), a)| (n, l, a * ((n as f64 + 1.0) / PI) * area))
        .collect();
    Ok(ZernikeDescriptor {
        n_max,
        moments,
        normalizer: None,
    })
}

/// Candidate normalizing moments, in fallback order.
const NORMALIZER_CANDIDATES: [(usize, usize); 3] = [(3, 1), (5, 1), (1, 1)];

/// Zeroes the phase of the first usable reference moment: every `A_nl` is
/// multiplied by `exp(-i l θ̂)` with `θ̂ = arg(A_ref)`, leaving the reference
/// real and positive. Magnitudes are untouched.
pub fn rotation_normalize(desc: &ZernikeDescriptor) -> Result<ZernikeDescriptor, ZernikeError> {
    let mut chosen = None;
    for &(n, l) in &NORMALIZER_CANDIDATES {
        if n > desc.n_max {
            continue;
        }
        let a = desc.get(n, l as i64)?;
        if a.norm() > PHASE_FLOOR {
            chosen = Some(((n, l), a.arg()));
            break;
        }
    }
    let ((nr, lr), theta) = chosen.ok_or(ZernikeError::DegeneratePhase)?;
    let moments = desc
        .moments
        .iter()
        .map(|&(n, l, a)| (n, l, a * Complex::from_polar(1.0, -(l as f64) * theta)))
        .collect();
    Ok(ZernikeDescriptor {
        n_max: desc.n_max,
        moments,
        normalizer: Some((nr, lr)),
    })
}

/// Flattening order: moments with `l ≥ 1` by `(n, l)`, real and imaginary
/// parts interleaved, the normalizing moment's imaginary part dropped.
fn feature_layout(n_max: usize) -> Vec<(usize, usize)> {
    (0..=n_max)
        .flat_map(|n| {
            let start = if n % 2 == 0 { 2 } else { 1 };
            (start..=n).step_by(2).map(move |l| (n, l))
        })
        .collect()
}

/// Flattens a rotation-normalized descriptor into a fixed-dimension real
/// vector (default `d = 60` at `n_max = 10`), truncating or zero-padding.
pub fn descriptor_to_feature(desc: &ZernikeDescriptor, d: usize) -> DVector<f64> {
    let norm_idx = desc.normalizer.unwrap_or(NORMALIZER_CANDIDATES[0]);
    let mut v = Vec::with_capacity(d);
    for (n, l) in feature_layout(desc.n_max) {
        let a = desc.get(n, l as i64).expect("layout indices valid");
        v.push(a.re);
        if (n, l) != norm_idx {
            v.push(a.im);
        }
    }
    v.resize(d, 0.0);
    DVector::from_vec(v)
}

/// Inverse of [`descriptor_to_feature`] up to the dropped `l = 0` moments
/// (restored as zero) and any truncation.
pub fn feature_to_descriptor(
    v: &DVector<f64>,
    n_max: usize,
    normalizer: (usize, usize),
) -> ZernikeDescriptor {
    let mut moments: Vec<(usize, usize, Complex<f64>)> = (0..=n_max)
        .flat_map(|n| (n % 2..=n).step_by(2).map(move |l| (n, l, Complex::new(0.0, 0.0))))
        .collect();
    let mut k = 0;
    for (n, l) in feature_layout(n_max) {
        let re = if k < v.len() { v[k] } else { 0.0 };
        k += 1;
        let im = if (n, l) != normalizer {
            let x = if k < v.len() { v[k] } else { 0.0 };
            k += 1;
            x
        } else {
            0.0
        };
        let idx = moments.iter().position(|&(a, b, _)| a == n && b == l).unwrap();
        moments[idx].2 = Complex::new(re, im);
    }
    ZernikeDescriptor {
        n_max,
        moments,
        normalizer: Some(normalizer),
    }
}
