//! Synthetic ground-truth generation: triangle-mesh silhouette and depth
//! rasterization, viewsphere sampling, keyframe feature catalogs, constant
//! twist trajectories, and correspondence simulation with outlier and
//! id-confusion injection.
//!
//! This module stands in for the offline rendering and online feature
//! detection stacks: instead of photorealistic images and real descriptors,
//! it produces binary silhouettes, depth maps, and correspondences that carry
//! ground-truth feature ids, with configurable contamination.

use crate::camera::{project, ImageLine, ImagePoint, Intrinsics, DEPTH_EPS};
use crate::contour::Contour;
use crate::se3::{exp_se3, quat_to_rot, rot_to_quat, Pose, Twist, UnitQuat};
use crate::zernike::BinaryMask;
use nalgebra::{Vector2, Vector3};
use rand::rngs::StdRng;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("OBJ parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("silhouette is empty")]
    EmptySilhouette,
    #[error("bad raster file: {0}")]
    BadRaster(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("bad catalog file: {0}")]
    BadCatalog(String),
}

// ---------------------------------------------------------------------------
// Triangle meshes
// ---------------------------------------------------------------------------

/// An indexed triangle mesh in the target body frame (meters).
#[derive(Debug, Clone)]
pub struct TriMesh {
    pub vertices: Vec<Vector3<f64>>,
    pub faces: Vec<[usize; 3]>,
}

impl TriMesh {
    /// Parses the `v`/`f` subset of Wavefront OBJ; polygonal faces are
    /// fan-triangulated. Degenerate (zero-area) faces are dropped.
    pub fn parse_obj(text: &str) -> Result<TriMesh, SceneError> {
        let mut vertices: Vec<Vector3<f64>> = Vec::new();
        let mut faces = Vec::new();
        for (ln, raw) in text.lines().enumerate() {
            let line = ln + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let mut it = trimmed.split_whitespace();
            match it.next() {
                Some("v") => {
                    let mut coords = [0.0f64; 3];
                    for c in &mut coords {
                        *c = it
                            .next()
                            .ok_or(SceneError::Parse {
                                line,
                                msg: "vertex needs 3 coordinates".into(),
                            })?
                            .parse()
                            .map_err(|e| SceneError::Parse {
                                line,
                                msg: format!("bad coordinate: {e}"),
                            })?;
                    }
                    vertices.push(Vector3::new(coords[0], coords[1], coords[2]));
                }
                Some("f") => {
                    let mut idx = Vec::new();
                    for tok in it {
                        // accept v, v/vt, v/vt/vn, v//vn forms
                        let v = tok.split('/').next().unwrap_or("");
                        let i: i64 = v.parse().map_err(|e| SceneError::Parse {
                            line,
                            msg: format!("bad face index: {e}"),
                        })?;
                        let n = vertices.len() as i64;
                        let zero_based = if i > 0 { i - 1 } else { n + i };
                        if zero_based < 0 || zero_based >= n {
                            return Err(SceneError::Parse {
                                line,
                                msg: format!("face index {i} out of range"),
                            });
                        }
                        idx.push(zero_based as usize);
                    }
                    if idx.len() < 3 {
                        return Err(SceneError::Parse {
                            line,
                            msg: "face needs at least 3 vertices".into(),
                        });
                    }
                    for k in 1..idx.len() - 1 {
                        faces.push([idx[0], idx[k], idx[k + 1]]);
                    }
                }
                // ignore normals, texcoords, groups, materials
                Some("vn") | Some("vt") | Some("g") | Some("o") | Some("s") | Some("usemtl")
                | Some("mtllib") => {}
                Some(other) => {
                    return Err(SceneError::Parse {
                        line,
                        msg: format!("unsupported record '{other}'"),
                    });
                }
                None => {}
            }
        }
        // drop degenerate faces
        faces.retain(|f| {
            let a = vertices[f[0]];
            let b = vertices[f[1]];
            let c = vertices[f[2]];
            (b - a).cross(&(c - a)).norm() > 1e-12
        });
        Ok(TriMesh { vertices, faces })
    }

    pub fn write_obj<W: Write>(&self, w: &mut W) -> Result<(), SceneError> {
        for v in &self.vertices {
            writeln!(w, "v {} {} {}", v[0], v[1], v[2])?;
        }
        for f in &self.faces {
            writeln!(w, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1)?;
        }
        Ok(())
    }
}

pub fn load_obj<P: AsRef<Path>>(path: P) -> Result<TriMesh, SceneError> {
    TriMesh::parse_obj(&std::fs::read_to_string(path)?)
}

fn push_box(mesh: &mut TriMesh, center: Vector3<f64>, half: Vector3<f64>) {
    let base = mesh.vertices.len();
    for iz in [-1.0, 1.0] {
        for iy in [-1.0, 1.0] {
            for ix in [-1.0, 1.0] {
                mesh.vertices.push(
                    center + Vector3::new(ix * half[0], iy * half[1], iz * half[2]),
                );
            }
        }
    }
    // quads per face of the box, CCW from outside
    const QUADS: [[usize; 4]; 6] = [
        [0, 2, 3, 1], // -z
        [4, 5, 7, 6], // +z
        [0, 1, 5, 4], // -y
        [2, 6, 7, 3], // +y
        [0, 4, 6, 2], // -x
        [1, 3, 7, 5], // +x
    ];
    for q in QUADS {
        mesh.faces.push([base + q[0], base + q[1], base + q[2]]);
        mesh.faces.push([base + q[0], base + q[2], base + q[3]]);
    }
}

/// Bundled asymmetric test target: a main cuboid with an offset panel and a
/// corner block, so that no two sampled views are related by symmetry.
pub fn bundled_target() -> TriMesh {
    let mut mesh = TriMesh {
        vertices: Vec::new(),
        faces: Vec::new(),
    };
    // main body
    push_box(&mut mesh, Vector3::new(0.0, 0.0, 0.0), Vector3::new(0.6, 0.4, 0.25));
    // solar-panel-like slab on +y, tilted placement via offset in z
    push_box(&mut mesh, Vector3::new(0.1, 1.1, 0.08), Vector3::new(0.35, 0.7, 0.02));
    // small instrument block breaking the remaining symmetry
    push_box(&mut mesh, Vector3::new(0.45, -0.25, 0.4), Vector3::new(0.15, 0.12, 0.18));
    mesh
}

// ---------------------------------------------------------------------------
// Rasterization
// ---------------------------------------------------------------------------

/// Per-pixel depth raster; 0 marks background. Depth is the camera-frame `z`
/// coordinate of the nearest surface (meters).
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    pub width: usize,
    pub height: usize,
    data: Vec<f32>,
}

impl DepthMap {
    pub fn new(width: usize, height: usize) -> Self {
        DepthMap {
            width,
            height,
            data: vec![0.0; width * height],
        }
    }

    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: f32) {
        self.data[y * self.width + x] = v;
    }

    /// Binary format: magic `DPF1`, little-endian u32 width and height, then
    /// row-major little-endian f32 samples.
    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<(), SceneError> {
        w.write_all(b"DPF1")?;
        w.write_all(&(self.width as u32).to_le_bytes())?;
        w.write_all(&(self.height as u32).to_le_bytes())?;
        for v in &self.data {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self, SceneError> {
        let mut head = [0u8; 12];
        r.read_exact(&mut head)?;
        if &head[0..4] != b"DPF1" {
            return Err(SceneError::BadRaster("missing DPF1 magic".into()));
        }
        let width = u32::from_le_bytes(head[4..8].try_into().unwrap()) as usize;
        let height = u32::from_le_bytes(head[8..12].try_into().unwrap()) as usize;
        let mut buf = vec![0u8; width * height * 4];
        r.read_exact(&mut buf)?;
        let data = buf
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(DepthMap {
            width,
            height,
            data,
        })
    }
}

/// Z-buffered perspective rasterization of the mesh silhouette and depth map.
///
/// Pixels sample the projection at integer coordinates; faces with any vertex
/// behind the camera are skipped (adequate for targets fully in front).
pub fn rasterize(mesh: &TriMesh, k: &Intrinsics, pose: &Pose) -> (BinaryMask, DepthMap) {
    let mut mask = BinaryMask::new(k.width, k.height);
    let mut depth = DepthMap::new(k.width, k.height);
    let cam: Vec<Vector3<f64>> = mesh.vertices.iter().map(|v| pose.transform_point(v)).collect();

    for f in &mesh.faces {
        let p = [cam[f[0]], cam[f[1]], cam[f[2]]];
        if p.iter().any(|v| v[2] <= DEPTH_EPS) {
            continue;
        }
        let proj: Vec<Vector2<f64>> = p
            .iter()
            .map(|v| Vector2::new(k.fx * v[0] / v[2] + k.d1, k.fy * v[1] / v[2] + k.d2))
            .collect();
        let area2 = (proj[1] - proj[0]).perp(&(proj[2] - proj[0]));
        if area2.abs() < 1e-12 {
            continue;
        }
        let min_x = proj.iter().map(|q| q[0]).fold(f64::INFINITY, f64::min).floor().max(0.0) as usize;
        let max_x = proj.iter().map(|q| q[0]).fold(f64::NEG_INFINITY, f64::max).ceil().min((k.width - 1) as f64) as usize;
        let min_y = proj.iter().map(|q| q[1]).fold(f64::INFINITY, f64::min).floor().max(0.0) as usize;
        let max_y = proj.iter().map(|q| q[1]).fold(f64::NEG_INFINITY, f64::max).ceil().min((k.height - 1) as f64) as usize;
        if min_x > max_x || min_y > max_y {
            continue;
        }
        for y in min_y..=max_y {
            for x in min_x..=max_x {
                let q = Vector2::new(x as f64, y as f64);
                let w0 = (proj[2] - proj[1]).perp(&(q - proj[1])) / area2;
                let w1 = (proj[0] - proj[2]).perp(&(q - proj[2])) / area2;
                let w2 = (proj[1] - proj[0]).perp(&(q - proj[0])) / area2;
                // tolerate tiny negatives so shared triangle edges do not
                // leave pinholes; overlapping coverage is resolved by depth
                if w0 < -1e-9 || w1 < -1e-9 || w2 < -1e-9 {
                    continue;
                }
                // perspective-correct depth: 1/z interpolates linearly
                let inv_z = w0 / p[0][2] + w1 / p[1][2] + w2 / p[2][2];
                let z = (1.0 / inv_z) as f32;
                let cur = depth.get(x, y);
                if cur == 0.0 || z < cur {
                    depth.set(x, y, z);
                    mask.set(x, y, true);
                }
            }
        }
    }
    (mask, depth)
}

/// Back-projects pixel `(x, y)` with camera-frame depth `z` into the target
/// frame under the given pose.
pub fn back_project(k: &Intrinsics, pose: &Pose, x: f64, y: f64, z: f64) -> Vector3<f64> {
    let pc = Vector3::new((x - k.d1) / k.fx * z, (y - k.d2) / k.fy * z, z);
    pose.inverse().transform_point(&pc)
}

// ---------------------------------------------------------------------------
// Viewsphere
// ---------------------------------------------------------------------------

/// A camera placement on the viewsphere, boresight through the target origin.
#[derive(Debug, Clone)]
pub struct ViewPoint {
    pub az_deg: f64,
    pub el_deg: f64,
    pub pose: Pose,
}

/// Camera pose for spherical coordinates `(az, el, distance)` in the target
/// frame. Image up follows world `+z` projected out of the boresight; at the
/// poles (`|el| = 90`) the `+x` axis is used instead.
pub fn viewsphere_pose(az_deg: f64, el_deg: f64, distance: f64) -> Pose {
    let az = az_deg.to_radians();
    let el = el_deg.to_radians();
    let p = Vector3::new(el.cos() * az.cos(), el.cos() * az.sin(), el.sin()) * distance;
    let z_c = (-p).normalize(); // boresight: camera +z towards origin
    let up = if el_deg.abs() >= 90.0 - 1e-9 {
        Vector3::x()
    } else {
        Vector3::z()
    };
    let up_t = (up - z_c * up.dot(&z_c)).normalize();
    let y_c = -up_t; // image y grows downwards
    let x_c = y_c.cross(&z_c);
    let r = nalgebra::Matrix3::from_rows(&[
        x_c.transpose(),
        y_c.transpose(),
        z_c.transpose(),
    ]);
    let rot = crate::se3::Rot3::from_matrix(r);
    let trans = -(rot.rotate(&p));
    Pose::new(rot, trans)
}

/// Samples the viewsphere at band centers in both angles: elevations
/// `-90 + el_step*(k + 1/2)` (the poles are never sampled twice) and
/// azimuths `az_step*(j + 1/2)`, so every sample sits at the center of its
/// classification bin. Steps of 9 degrees yield 40 x 20 = 800 views.
pub fn sample_viewsphere(az_step_deg: f64, el_step_deg: f64, distance: f64) -> Vec<ViewPoint> {
    assert!(
        (360.0 / az_step_deg).fract().abs() < 1e-9,
        "azimuth step must divide 360"
    );
    assert!(
        (180.0 / el_step_deg).fract().abs() < 1e-9,
        "elevation step must divide 180"
    );
    let n_az = (360.0 / az_step_deg).round() as usize;
    let n_el = (180.0 / el_step_deg).round() as usize;
    let mut views = Vec::with_capacity(n_az * n_el);
    for ie in 0..n_el {
        let el = -90.0 + el_step_deg * (ie as f64 + 0.5);
        for ia in 0..n_az {
            let az = az_step_deg * (ia as f64 + 0.5);
            views.push(ViewPoint {
                az_deg: az,
                el_deg: el,
                pose: viewsphere_pose(az, el, distance),
            });
        }
    }
    views
}

// ---------------------------------------------------------------------------
// Boundary tracing and keylines
// ---------------------------------------------------------------------------

/// Ordered silhouette boundary pixels (Moore-neighbor tracing from the
/// topmost-leftmost set pixel).
pub fn boundary_trace(mask: &BinaryMask) -> Result<Vec<Vector2<f64>>, SceneError> {
    let (w, h) = (mask.width, mask.height);
    let get = |x: i64, y: i64| -> bool {
        x >= 0 && y >= 0 && (x as usize) < w && (y as usize) < h && mask.get(x as usize, y as usize)
    };
    let mut start = None;
    'scan: for y in 0..h {
        for x in 0..w {
            if mask.get(x, y) {
                start = Some((x as i64, y as i64));
                break 'scan;
            }
        }
    }
    let (sx, sy) = start.ok_or(SceneError::EmptySilhouette)?;
    // clockwise Moore neighborhood
    const NB: [(i64, i64); 8] = [
        (1, 0),
        (1, 1),
        (0, 1),
        (-1, 1),
        (-1, 0),
        (-1, -1),
        (0, -1),
        (1, -1),
    ];
    let mut contour = vec![Vector2::new(sx as f64, sy as f64)];
    let (mut cx, mut cy) = (sx, sy);
    // we entered the start pixel from the west (guaranteed background)
    let mut backtrack = 4usize; // index of (-1, 0)
    let cap = 4 * (w * h + 4);
    for _ in 0..cap {
        let mut found = None;
        for step in 1..=8 {
            let dir = (backtrack + step) % 8;
            let (dx, dy) = NB[dir];
            if get(cx + dx, cy + dy) {
                found = Some(dir);
                break;
            }
        }
        let Some(dir) = found else {
            break; // isolated pixel
        };
        let (dx, dy) = NB[dir];
        cx += dx;
        cy += dy;
        // next search restarts from the neighbor "behind" the move
        backtrack = (dir + 5) % 8;
        if cx == sx && cy == sy {
            break;
        }
        contour.push(Vector2::new(cx as f64, cy as f64));
    }
    Ok(contour)
}

/// Splits an ordered boundary into maximal straight segments (perpendicular
/// deviation below `tol_px`), then merges consecutive segments whose
/// orientations differ by less than `tol_deg` (including the wraparound
/// pair). Returns index ranges `[start, end]` (inclusive) into the boundary.
pub fn fit_keylines(points: &[Vector2<f64>], tol_px: f64, tol_deg: f64) -> Vec<(usize, usize)> {
    let n = points.len();
    if n < 2 {
        return Vec::new();
    }
    let mut segs: Vec<(usize, usize)> = Vec::new();
    let mut i0 = 0;
    while i0 + 1 < n {
        let mut j = i0 + 1;
        while j + 1 < n {
            // try extending to j+1; all interior points must stay close to
            // the chord (points[i0], points[j+1])
            let a = points[i0];
            let b = points[j + 1];
            let d = b - a;
            let len = d.norm();
            if len < 1e-9 {
                break;
            }
            let ok = (i0 + 1..=j).all(|m| {
                let v = points[m] - a;
                (v.perp(&d) / len).abs() <= tol_px
            });
            if ok {
                j += 1;
            } else {
                break;
            }
        }
        segs.push((i0, j));
        i0 = j;
    }
    // merge pass on orientations (mod 180 degrees)
    let angle = |s: &(usize, usize)| -> f64 {
        let d = points[s.1] - points[s.0];
        d[1].atan2(d[0]).rem_euclid(std::f64::consts::PI)
    };
    let close = |a: f64, b: f64| -> bool {
        let d = (a - b).abs();
        d.min(std::f64::consts::PI - d) < tol_deg.to_radians()
    };
    let mut merged: Vec<(usize, usize)> = Vec::new();
    for s in segs {
        if let Some(last) = merged.last_mut() {
            if close(angle(last), angle(&s)) {
                last.1 = s.1;
                continue;
            }
        }
        merged.push(s);
    }
    // wraparound: first and last segments may be halves of one edge
    if merged.len() > 1 {
        let first = merged[0];
        let last = *merged.last().unwrap();
        if close(angle(&first), angle(&last)) {
            merged[0] = (last.0, first.1 + n); // end index wraps past n
            merged.pop();
        }
    }
    merged
}

// ---------------------------------------------------------------------------
// Keyframes
// ---------------------------------------------------------------------------

/// A surface point registered offline: 3D position in the target frame, its
/// 2D projection in the keyframe, and a unique feature id.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CatalogPoint {
    pub p: Vector3<f64>,
    pub z: ImagePoint,
    pub id: u32,
}

/// A silhouette edge point back-projected into 3D, tagged with its keyline.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EdgePoint {
    pub p: Vector3<f64>,
    pub keyline: u32,
}

/// Serializable pose record: translation plus scalar-last unit quaternion.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PoseRecord {
    pub t: [f64; 3],
    pub q: [f64; 4],
}

impl PoseRecord {
    pub fn from_pose(pose: &Pose) -> Self {
        let q = rot_to_quat(&pose.rot).as_vector();
        PoseRecord {
            t: [pose.trans[0], pose.trans[1], pose.trans[2]],
            q: [q[0], q[1], q[2], q[3]],
        }
    }

    pub fn to_pose(&self) -> Pose {
        let quat = UnitQuat::new_normalized(
            Vector3::new(self.q[0], self.q[1], self.q[2]),
            self.q[3],
        );
        Pose::new(
            quat_to_rot(&quat),
            Vector3::new(self.t[0], self.t[1], self.t[2]),
        )
    }
}

/// An offline-rendered view with registered features.
#[derive(Debug, Clone)]
pub struct Keyframe {
    pub id: u32,
    pub pose: Pose,
    pub az_deg: f64,
    pub el_deg: f64,
    pub silhouette: BinaryMask,
    pub depth: DepthMap,
    pub catalog: Vec<CatalogPoint>,
    pub edge_points: Vec<EdgePoint>,
    /// Unit 3D direction of each keyline in the target frame, indexed by id.
    pub keyline_dirs: Vec<Vector3<f64>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CatalogFile {
    version: u32,
    id: u32,
    pose: PoseRecord,
    az_deg: f64,
    el_deg: f64,
    points: Vec<CatalogPoint>,
    edge_points: Vec<EdgePoint>,
    keyline_dirs: Vec<[f64; 3]>,
}

impl Keyframe {
    fn stem(id: u32) -> String {
        format!("kf_{id:04}")
    }

    /// Writes `kf_####.pgm` (silhouette), `kf_####.depth`, `kf_####.json`.
    pub fn save_to_dir<P: AsRef<Path>>(&self, dir: P) -> Result<(), SceneError> {
        let dir = dir.as_ref();
        let stem = Self::stem(self.id);
        let mut pgm = std::fs::File::create(dir.join(format!("{stem}.pgm")))?;
        self.silhouette
            .write_pgm(&mut pgm)
            .map_err(|e| SceneError::BadRaster(e.to_string()))?;
        let mut dep = std::fs::File::create(dir.join(format!("{stem}.depth")))?;
        self.depth.write_to(&mut dep)?;
        let file = CatalogFile {
            version: 1,
            id: self.id,
            pose: PoseRecord::from_pose(&self.pose),
            az_deg: self.az_deg,
            el_deg: self.el_deg,
            points: self.catalog.clone(),
            edge_points: self.edge_points.clone(),
            keyline_dirs: self
                .keyline_dirs
                .iter()
                .map(|d| [d[0], d[1], d[2]])
                .collect(),
        };
        let json = serde_json::to_string_pretty(&file)
            .map_err(|e| SceneError::BadCatalog(e.to_string()))?;
        std::fs::write(dir.join(format!("{stem}.json")), json)?;
        Ok(())
    }

    pub fn load_from_dir<P: AsRef<Path>>(dir: P, id: u32) -> Result<Keyframe, SceneError> {
        let dir = dir.as_ref();
        let stem = Self::stem(id);
        let mut pgm = std::fs::File::open(dir.join(format!("{stem}.pgm")))?;
        let silhouette = BinaryMask::read_pgm(&mut pgm)
            .map_err(|e| SceneError::BadRaster(e.to_string()))?;
        let mut dep = std::fs::File::open(dir.join(format!("{stem}.depth")))?;
        let depth = DepthMap::read_from(&mut dep)?;
        let json = std::fs::read_to_string(dir.join(format!("{stem}.json")))?;
        let file: CatalogFile = serde_json::from_str(&json)
            .map_err(|e| SceneError::BadCatalog(e.to_string()))?;
        if file.version != 1 {
            return Err(SceneError::BadCatalog(format!(
                "unsupported catalog version {}",
                file.version
            )));
        }
        Ok(Keyframe {
            id: file.id,
            pose: file.pose.to_pose(),
            az_deg: file.az_deg,
            el_deg: file.el_deg,
            silhouette,
            depth,
            catalog: file.points,
            edge_points: file.edge_points,
            keyline_dirs: file
                .keyline_dirs
                .iter()
                .map(|d| Vector3::new(d[0], d[1], d[2]))
                .collect(),
        })
    }
}

/// Renders a view and registers its features: surface points sampled from
/// the silhouette interior (ray through pixel + depth lookup) and boundary
/// edge points grouped into straight keylines.
///
/// `feature_density` is the fraction of silhouette pixels promoted to
/// catalog points (0 gives an empty catalog).
pub fn build_keyframe(
    mesh: &TriMesh,
    k: &Intrinsics,
    view: &ViewPoint,
    id: u32,
    feature_density: f64,
) -> Result<Keyframe, SceneError> {
    let (silhouette, depth) = rasterize(mesh, k, &view.pose);
    let pixels: Vec<(usize, usize)> = silhouette.set_pixels().collect();
    if pixels.is_empty() {
        return Err(SceneError::EmptySilhouette);
    }

    // interior point catalog, evenly strided over the silhouette pixels
    let target = (feature_density * pixels.len() as f64).round() as usize;
    let mut catalog = Vec::with_capacity(target);
    for i in 0..target {
        let (x, y) = pixels[i * pixels.len() / target.max(1)];
        let z = depth.get(x, y) as f64;
        let p = back_project(k, &view.pose, x as f64, y as f64, z);
        catalog.push(CatalogPoint {
            p,
            z: ImagePoint::new(x as f64, y as f64),
            id: i as u32,
        });
    }

    // boundary edge points and keylines
    let boundary = boundary_trace(&silhouette)?;
    let segs = fit_keylines(&boundary, 2.0, 2.0);
    let mut edge_points = Vec::new();
    let mut keyline_dirs = Vec::new();
    for (kid, (s, e)) in segs.iter().enumerate() {
        let n = boundary.len();
        let idx = |i: usize| i % n;
        let back3 = |i: usize| -> Vector3<f64> {
            let q = boundary[idx(i)];
            let z = depth.get(q[0] as usize, q[1] as usize) as f64;
            back_project(k, &view.pose, q[0], q[1], z)
        };
        // sample every third boundary pixel of the segment
        let mut pts3 = Vec::new();
        let mut i = *s;
        while i <= *e {
            pts3.push(back3(i));
            i += 3;
        }
        if pts3.len() < 2 {
            continue;
        }
        let dir = (pts3[pts3.len() - 1] - pts3[0]).normalize();
        for p in pts3 {
            edge_points.push(EdgePoint {
                p,
                keyline: kid as u32,
            });
        }
        keyline_dirs.push(dir);
    }

    Ok(Keyframe {
        id,
        pose: view.pose,
        az_deg: view.az_deg,
        el_deg: view.el_deg,
        silhouette,
        depth,
        catalog,
        edge_points,
        keyline_dirs,
    })
}

// ---------------------------------------------------------------------------
// Correspondence simulation
// ---------------------------------------------------------------------------

/// Ground-truth label carried by every simulated correspondence.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatchLabel {
    Inlier,
    Outlier,
    Confused,
}

/// A simulated 2D-3D point correspondence.
#[derive(Debug, Clone)]
pub struct PointMatch {
    pub p: Vector3<f64>,
    pub z: ImagePoint,
    pub id: u32,
    pub label: MatchLabel,
}

/// A simulated 3D-point-to-2D-line edge correspondence.
#[derive(Debug, Clone)]
pub struct EdgeMatch {
    pub p: Vector3<f64>,
    pub line: ImageLine,
    pub keyline: u32,
    pub label: MatchLabel,
}

/// Measurement contamination settings for [`simulate_correspondences`].
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CorruptionModel {
    /// Gaussian pixel noise on inlier measurements.
    pub noise_px: f64,
    /// Fraction of correspondences replaced by gross outliers.
    pub outlier_fraction: f64,
    /// Probability that a point's measurement is swapped with another point
    /// in the same grid cell (id confusion).
    pub confusion_rate: f64,
    /// Grid used for confusion locality.
    pub grid: (usize, usize),
}

impl Default for CorruptionModel {
    fn default() -> Self {
        CorruptionModel {
            noise_px: 1.0,
            outlier_fraction: 0.0,
            confusion_rate: 0.0,
            grid: (4, 4),
        }
    }
}

fn gauss(rng: &mut StdRng) -> f64 {
    // Box-Muller
    let u1: f64 = rng.random_range(1e-12..1.0);
    let u2: f64 = rng.random_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Simulates the detection+matching front end under a known true pose.
///
/// Inlier image points are exact reprojections plus Gaussian noise; outliers
/// are uniform draws over the target's bounding box in the image; confusion
/// swaps measurements between points sharing a grid cell. Edge lines pass
/// through the reprojected 3D edge point along the projected keyline
/// direction, perturbed perpendicular to themselves.
pub fn simulate_correspondences(
    keyframe: &Keyframe,
    true_pose: &Pose,
    k: &Intrinsics,
    model: &CorruptionModel,
    seed: u64,
) -> (Vec<PointMatch>, Vec<EdgeMatch>) {
    let mut rng = StdRng::seed_from_u64(seed);

    // visible catalog points
    let mut points: Vec<PointMatch> = keyframe
        .catalog
        .iter()
        .filter_map(|c| {
            let z = project(k, true_pose, &c.p).ok()?;
            let in_frame = z.z1 >= 0.0
                && z.z1 < k.width as f64
                && z.z2 >= 0.0
                && z.z2 < k.height as f64;
            in_frame.then_some(PointMatch {
                p: c.p,
                z,
                id: c.id,
                label: MatchLabel::Inlier,
            })
        })
        .collect();

    // bounding box of the projected target
    let bbox = bounding_box(points.iter().map(|m| m.z));

    // Gaussian noise on every point first
    for m in &mut points {
        m.z = ImagePoint::new(
            m.z.z1 + gauss(&mut rng) * model.noise_px,
            m.z.z2 + gauss(&mut rng) * model.noise_px,
        );
    }

    // confusion: swap measurements within grid cells
    if model.confusion_rate > 0.0 && points.len() > 1 {
        if let Some(b) = bbox {
            let zs: Vec<ImagePoint> = points.iter().map(|m| m.z).collect();
            let cells = grid_bin(&zs, b, model.grid.0, model.grid.1);
            for i in 0..points.len() {
                if rng.random_range(0.0..1.0) >= model.confusion_rate {
                    continue;
                }
                let mates: Vec<usize> = (0..points.len())
                    .filter(|&j| j != i && cells[j] == cells[i])
                    .collect();
                if let Some(&j) = mates.as_slice().choose(&mut rng) {
                    let tmp = points[i].z;
                    points[i].z = points[j].z;
                    points[j].z = tmp;
                    points[i].label = MatchLabel::Confused;
                    points[j].label = MatchLabel::Confused;
                }
            }
        }
    }

    // plant exactly floor(fraction * n) outliers
    let n_out = (model.outlier_fraction * points.len() as f64).floor() as usize;
    if n_out > 0 {
        if let Some((x0, y0, x1, y1)) = bbox {
            let mut order: Vec<usize> = (0..points.len()).collect();
            order.shuffle(&mut rng);
            for &i in order.iter().take(n_out) {
                points[i].z = ImagePoint::new(
                    rng.random_range(x0..x1.max(x0 + 1e-9)),
                    rng.random_range(y0..y1.max(y0 + 1e-9)),
                );
                points[i].label = MatchLabel::Outlier;
            }
        }
    }

    // edge matches: line through the reprojected edge point along the
    // projected 3D keyline direction
    let mut edges: Vec<EdgeMatch> = keyframe
        .edge_points
        .iter()
        .filter_map(|e| {
            let dir = keyframe.keyline_dirs[e.keyline as usize];
            let za = project(k, true_pose, &e.p).ok()?;
            let zb = project(k, true_pose, &(e.p + dir * 0.05)).ok()?;
            if za.dist(&zb) < 1e-6 {
                return None; // keyline viewed end-on
            }
            Some(EdgeMatch {
                p: e.p,
                line: ImageLine::through(&za, &zb),
                keyline: e.keyline,
                label: MatchLabel::Inlier,
            })
        })
        .collect();
    for e in &mut edges {
        // perpendicular offset noise
        let mut l = e.line.l;
        l[2] -= gauss(&mut rng) * model.noise_px;
        e.line = ImageLine::new(l);
    }
    let n_out_e = (model.outlier_fraction * edges.len() as f64).floor() as usize;
    if n_out_e > 0 {
        if let Some((x0, y0, x1, y1)) = bbox {
            let diag = ((x1 - x0).powi(2) + (y1 - y0).powi(2)).sqrt().max(1.0);
            let mut order: Vec<usize> = (0..edges.len()).collect();
            order.shuffle(&mut rng);
            for &i in order.iter().take(n_out_e) {
                let mut l = edges[i].line.l;
                l[2] -= rng.random_range(0.1 * diag..0.5 * diag)
                    * if rng.random_range(0.0..1.0) < 0.5 { -1.0 } else { 1.0 };
                edges[i].line = ImageLine::new(l);
                edges[i].label = MatchLabel::Outlier;
            }
        }
    }

    (points, edges)
}

fn bounding_box(points: impl Iterator<Item = ImagePoint>) -> Option<(f64, f64, f64, f64)> {
    let mut b: Option<(f64, f64, f64, f64)> = None;
    for z in points {
        b = Some(match b {
            None => (z.z1, z.z2, z.z1, z.z2),
            Some((x0, y0, x1, y1)) => (x0.min(z.z1), y0.min(z.z2), x1.max(z.z1), y1.max(z.z2)),
        });
    }
    b
}

/// Assigns each point to a cell of the `p x q` partition of the bounding box
/// (`p` columns, `q` rows, row-major cell ids). Points on a cell boundary go
/// to the lower-index cell; points outside the box clamp to the border cells.
pub fn grid_bin(
    points: &[ImagePoint],
    bbox: (f64, f64, f64, f64),
    p: usize,
    q: usize,
) -> Vec<usize> {
    assert!(p >= 1 && q >= 1, "grid must be at least 1x1");
    let (x0, y0, x1, y1) = bbox;
    let w = (x1 - x0).max(1e-9);
    let h = (y1 - y0).max(1e-9);
    points
        .iter()
        .map(|z| {
            let fx = (z.z1 - x0) / w * p as f64;
            let fy = (z.z2 - y0) / h * q as f64;
            // ceil - 1 sends exact boundaries to the lower cell
            let cx = (fx.ceil() as i64 - 1).clamp(0, p as i64 - 1) as usize;
            let cy = (fy.ceil() as i64 - 1).clamp(0, q as i64 - 1) as usize;
            cy * p + cx
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Trajectories
// ---------------------------------------------------------------------------

/// A simulated constant-twist relative trajectory with measurement
/// contamination settings. All units are SI: meters, seconds, radians,
/// pixels; `twist` is `(nu_x, nu_y, nu_z, omega_x, omega_y, omega_z)` in
/// m/s and rad/s.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectoryConfig {
    pub version: u32,
    pub initial_pose: PoseRecord,
    pub twist: [f64; 6],
    pub frame_rate_hz: f64,
    pub duration_s: f64,
    pub noise_px: f64,
    pub outlier_fraction: f64,
    pub confusion_rate: f64,
    pub seed: u64,
}

impl TrajectoryConfig {
    pub fn twist_value(&self) -> Twist {
        Twist::new(
            Vector3::new(self.twist[0], self.twist[1], self.twist[2]),
            Vector3::new(self.twist[3], self.twist[4], self.twist[5]),
        )
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.version != 1 {
            return Err(format!("unsupported config version {}", self.version));
        }
        if !(self.frame_rate_hz > 0.0) {
            return Err("frame rate must be positive".into());
        }
        if !(0.0..1.0).contains(&self.outlier_fraction) {
            return Err("outlier fraction must be in [0, 1)".into());
        }
        Ok(())
    }
}

/// Samples `pose(t) = exp(t * twist^) * pose0` at the configured frame rate.
pub fn constant_twist_trajectory(config: &TrajectoryConfig) -> Vec<(f64, Pose)> {
    let pose0 = config.initial_pose.to_pose();
    let w = config.twist_value();
    let dt = 1.0 / config.frame_rate_hz;
    let frames = (config.duration_s * config.frame_rate_hz).round() as usize;
    (0..=frames)
        .map(|i| {
            let t = i as f64 * dt;
            (t, exp_se3(&w.scale(t)).compose(&pose0))
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Training augmentation
// ---------------------------------------------------------------------------

/// Augmentation strengths: morphological boundary perturbation radius (px)
/// and in-plane tilt magnitude (degrees) for small projective warps.
#[derive(Debug, Clone, Copy)]
pub struct AugmentConfig {
    pub morph_radius: usize,
    pub tilt_deg: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            morph_radius: 2,
            tilt_deg: 3.0,
        }
    }
}

fn morph(mask: &BinaryMask, radius: usize, dilate: bool) -> BinaryMask {
    let (w, h) = (mask.width, mask.height);
    let r = radius as i64;
    let mut out = BinaryMask::new(w, h);
    for y in 0..h as i64 {
        for x in 0..w as i64 {
            let mut hit = !dilate;
            'nb: for dy in -r..=r {
                for dx in -r..=r {
                    let (nx, ny) = (x + dx, y + dy);
                    let v = nx >= 0
                        && ny >= 0
                        && nx < w as i64
                        && ny < h as i64
                        && mask.get(nx as usize, ny as usize);
                    if dilate && v {
                        hit = true;
                        break 'nb;
                    }
                    if !dilate && !v {
                        hit = false;
                        break 'nb;
                    }
                }
            }
            out.set(x as usize, y as usize, hit);
        }
    }
    out
}

fn tilt_warp(mask: &BinaryMask, axis: usize, deg: f64) -> BinaryMask {
    // homography H = K R K^-1 for a small rotation about an in-plane axis,
    // with a nominal focal length of the image width
    let (w, h) = (mask.width, mask.height);
    let f = w as f64;
    let (cx, cy) = (w as f64 / 2.0, h as f64 / 2.0);
    let km = nalgebra::Matrix3::new(f, 0.0, cx, 0.0, f, cy, 0.0, 0.0, 1.0);
    let a = deg.to_radians();
    let axis_v = if axis == 0 { Vector3::x() } else { Vector3::y() };
    let r = crate::se3::exp_so3(&(axis_v * a));
    let hmat = km * r.matrix() * km.try_inverse().unwrap();
    let hinv = hmat.try_inverse().unwrap();
    let mut out = BinaryMask::new(w, h);
    for y in 0..h {
        for x in 0..w {
            let src = hinv * Vector3::new(x as f64, y as f64, 1.0);
            let sx = (src[0] / src[2]).round();
            let sy = (src[1] / src[2]).round();
            if sx >= 0.0 && sy >= 0.0 && (sx as usize) < w && (sy as usize) < h {
                out.set(x, y, mask.get(sx as usize, sy as usize));
            }
        }
    }
    out
}

/// Produces training variants of a silhouette: the original, dilations and
/// erosions up to `morph_radius`, and `±tilt_deg` warps about both in-plane
/// axes. Zero strengths return only copies of the input.
pub fn augment_training(mask: &BinaryMask, config: &AugmentConfig) -> Vec<BinaryMask> {
    let mut out = vec![mask.clone()];
    for r in 1..=config.morph_radius {
        out.push(morph(mask, r, true));
        out.push(morph(mask, r, false));
    }
    if config.tilt_deg > 0.0 {
        for axis in 0..2 {
            for s in [-1.0, 1.0] {
                out.push(tilt_warp(mask, axis, s * config.tilt_deg));
            }
        }
    }
    out
}

/// Extracts the silhouette's outer contour as a [`Contour`] for alignment.
pub fn silhouette_contour(mask: &BinaryMask) -> Result<Contour, SceneError> {
    let pts = boundary_trace(mask)?;
    Contour::new(pts).map_err(|_| SceneError::EmptySilhouette)
}
