//! Camera model and CPU rasterization: hard z-buffer rasterization with
//! perspective-correct attribute interpolation, a soft (differentiable)
//! silhouette, point projection, sphere camera sampling, and multi-view
//! feature baking onto mesh vertices.
//!
//! The differentiable entry points are custom tape ops with hand-derived
//! backward passes; the unit tests pin each one against finite differences
//! and brute-force oracles.

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

use crate::diff::{Graph, Tensor, Var};
use crate::geom::{TriMesh, Vec3};
use crate::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Camera {
    /// World-to-camera rotation (camera looks along +z).
    pub rotation: [[f64; 3]; 3],
    pub translation: [f64; 3],
    pub focal: (f64, f64),
    pub principal: (f64, f64),
    /// (H, W) pixels.
    pub image_size: (usize, usize),
}

impl Camera {
    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        Matrix3::from_fn(|r, c| self.rotation[r][c])
    }

    pub fn translation_vec(&self) -> Vec3 {
        Vec3::new(self.translation[0], self.translation[1], self.translation[2])
    }

    pub fn to_camera(&self, p: &Vec3) -> Vec3 {
        self.rotation_matrix() * p + self.translation_vec()
    }

    /// Pinhole projection to pixel coordinates plus depth; validity is
    /// positive depth.
    pub fn project(&self, p: &Vec3) -> ([f64; 2], f64, bool) {
        let c = self.to_camera(p);
        let valid = c.z > 1e-9;
        let z = if valid { c.z } else { 1e-9 };
        (
            [
                self.principal.0 + self.focal.0 * c.x / z,
                self.principal.1 + self.focal.1 * c.y / z,
            ],
            c.z,
            valid,
        )
    }

    pub fn center(&self) -> Vec3 {
        -(self.rotation_matrix().transpose() * self.translation_vec())
    }

    /// Orthonormality and handedness check.
    pub fn validate(&self) -> Result<()> {
        let r = self.rotation_matrix();
        let err = (r * r.transpose() - Matrix3::identity()).norm();
        if err > 1e-6 {
            return Err(Error::Invalid(format!("camera rotation not orthonormal ({err:.2e})")));
        }
        if (r.determinant() - 1.0).abs() > 1e-6 {
            return Err(Error::Invalid("camera rotation determinant != +1".into()));
        }
        Ok(())
    }
}

/// Camera at `center` looking toward `target`, y-up convention, intrinsics
/// from a vertical field of view.
pub fn look_at_camera(
    center: Vec3,
    target: Vec3,
    vertical_fov_deg: f64,
    image_size: (usize, usize),
) -> Camera {
    let f = (target - center).normalize();
    let up_hint = if f.y.abs() > 0.999 {
        Vec3::new(0.0, 0.0, 1.0)
    } else {
        Vec3::new(0.0, 1.0, 0.0)
    };
    let r = f.cross(&up_hint).normalize();
    let d = f.cross(&r);
    let rot = Matrix3::from_rows(&[r.transpose(), d.transpose(), f.transpose()]);
    let t = -rot * center;
    let (h, w) = image_size;
    let fy = h as f64 / (2.0 * (vertical_fov_deg.to_radians() / 2.0).tan());
    Camera {
        rotation: [
            [rot[(0, 0)], rot[(0, 1)], rot[(0, 2)]],
            [rot[(1, 0)], rot[(1, 1)], rot[(1, 2)]],
            [rot[(2, 0)], rot[(2, 1)], rot[(2, 2)]],
        ],
        translation: [t.x, t.y, t.z],
        focal: (fy, fy),
        principal: (w as f64 / 2.0, h as f64 / 2.0),
        image_size,
    }
}

/// Near-uniform camera ring on a sphere: Fibonacci lattice directions at
/// `radius` around `look_at`, all oriented toward it. A single camera sits on
/// the +z pole by convention.
pub fn sample_sphere_cameras(
    n: usize,
    radius: f64,
    look_at: Vec3,
    vertical_fov_deg: f64,
    image_size: (usize, usize),
) -> Result<Vec<Camera>> {
    if n == 0 {
        return Err(Error::Invalid("need at least one camera".into()));
    }
    if radius <= 0.0 {
        return Err(Error::Invalid(format!("camera radius must be positive, got {radius}")));
    }
    let golden = std::f64::consts::PI * (3.0 - 5.0f64.sqrt());
    let mut cams = Vec::with_capacity(n);
    for i in 0..n {
        let dir = if n == 1 {
            Vec3::new(0.0, 0.0, 1.0)
        } else {
            let z = 1.0 - (2.0 * i as f64 + 1.0) / n as f64;
            let rho = (1.0 - z * z).max(0.0).sqrt();
            let phi = golden * i as f64;
            Vec3::new(rho * phi.cos(), rho * phi.sin(), z)
        };
        cams.push(look_at_camera(
            look_at + radius * dir,
            look_at,
            vertical_fov_deg,
            image_size,
        ));
    }
    Ok(cams)
}

pub fn save_cameras(path: &std::path::Path, cams: &[Camera]) -> Result<()> {
    let json = serde_json::to_string_pretty(cams).expect("cameras serialize");
    std::fs::write(path, json).map_err(|e| Error::io(path, e))
}

pub fn load_cameras(path: &std::path::Path) -> Result<Vec<Camera>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| Error::Load(format!("bad cameras json: {e}")))
}

// ---------------------------------------------------------------------------
// point projection
// ---------------------------------------------------------------------------

/// Project points, returning pixel coordinates and validity flags.
pub fn project_points(points: &[Vec3], camera: &Camera) -> (Vec<[f64; 2]>, Vec<bool>) {
    let mut px = Vec::with_capacity(points.len());
    let mut valid = Vec::with_capacity(points.len());
    for p in points {
        let (uv, _, ok) = camera.project(p);
        px.push(uv);
        valid.push(ok);
    }
    (px, valid)
}

/// Tape projection: `[N, 3]` world points to `[N, 2]` pixels. Depth is
/// guarded below `1e-6`, where the gradient is cut.
pub fn project_points_graph<'g>(g: &'g Graph, points: Var<'g>, camera: &Camera) -> Var<'g> {
    let val = points.value();
    let n = val.rows();
    let r = camera.rotation_matrix();
    let t = camera.translation_vec();
    let (fx, fy) = camera.focal;
    let (cx, cy) = camera.principal;

    let mut out = vec![0.0; n * 2];
    let mut cam_pts = vec![0.0; n * 3];
    for i in 0..n {
        let p = Vec3::new(val.data[i * 3], val.data[i * 3 + 1], val.data[i * 3 + 2]);
        let c = r * p + t;
        let z = c.z.max(1e-6);
        cam_pts[i * 3] = c.x;
        cam_pts[i * 3 + 1] = c.y;
        cam_pts[i * 3 + 2] = c.z;
        out[i * 2] = cx + fx * c.x / z;
        out[i * 2 + 1] = cy + fy * c.y / z;
    }
    let rmat = r;
    g.custom(
        &[points],
        Tensor::new(vec![n, 2], out),
        Box::new(move |gout| {
            let mut gp = vec![0.0; n * 3];
            for i in 0..n {
                let (x, y, z) = (cam_pts[i * 3], cam_pts[i * 3 + 1], cam_pts[i * 3 + 2]);
                if z <= 1e-6 {
                    continue; // behind-camera points carry no gradient
                }
                let (gu, gv) = (gout.data[i * 2], gout.data[i * 2 + 1]);
                let gc = Vec3::new(
                    gu * fx / z,
                    gv * fy / z,
                    -gu * fx * x / (z * z) - gv * fy * y / (z * z),
                );
                let gw = rmat.transpose() * gc;
                gp[i * 3] = gw.x;
                gp[i * 3 + 1] = gw.y;
                gp[i * 3 + 2] = gw.z;
            }
            vec![Tensor::new(vec![n, 3], gp)]
        }),
    )
}

// ---------------------------------------------------------------------------
// raster settings and hit maps
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct RasterSettings {
    /// Screen-space blur for soft silhouettes, in squared normalized screen
    /// units (normalized by the smaller image side). Zero means hard.
    pub softness_sigma: f64,
    /// Interface bound on blended faces per pixel. The CPU implementation
    /// blends every face within the influence margin, which is the exact
    /// product this bound approximates from below.
    pub faces_per_pixel: usize,
    pub background_value: f64,
}

impl Default for RasterSettings {
    fn default() -> Self {
        RasterSettings {
            softness_sigma: 1e-4,
            faces_per_pixel: 8,
            background_value: 0.0,
        }
    }
}

#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct RasterDiagnostics {
    pub degenerate_faces: usize,
    pub behind_camera_faces: usize,
}

/// Per-pixel hit data from the hard rasterizer.
pub struct HitMap {
    pub size: (usize, usize),
    /// Face index per pixel, `-1` for background.
    pub face: Vec<i32>,
    /// Perspective-correct barycentric weights.
    pub bary: Vec<[f64; 3]>,
    /// Camera-space depth of the surface point.
    pub depth: Vec<f64>,
    pub diagnostics: RasterDiagnostics,
}

impl HitMap {
    pub fn coverage(&self) -> Vec<f64> {
        self.face.iter().map(|&f| if f >= 0 { 1.0 } else { 0.0 }).collect()
    }
}

struct ProjectedFace {
    q: [[f64; 2]; 3],
    z: [f64; 3],
    idx: [usize; 3],
}

fn project_faces(
    vertices: &[Vec3],
    faces: &[[usize; 3]],
    camera: &Camera,
    diagnostics: &mut RasterDiagnostics,
) -> Vec<Option<ProjectedFace>> {
    let proj: Vec<([f64; 2], f64, bool)> = vertices.iter().map(|v| camera.project(v)).collect();
    faces
        .iter()
        .map(|f| {
            let (q0, z0, v0) = proj[f[0]];
            let (q1, z1, v1) = proj[f[1]];
            let (q2, z2, v2) = proj[f[2]];
            if !(v0 && v1 && v2) {
                diagnostics.behind_camera_faces += 1;
                return None;
            }
            let area = edge_fn(&q0, &q1, &q2);
            if area.abs() < 1e-12 {
                diagnostics.degenerate_faces += 1;
                return None;
            }
            Some(ProjectedFace {
                q: [q0, q1, q2],
                z: [z0, z1, z2],
                idx: *f,
            })
        })
        .collect()
}

#[inline]
fn edge_fn(a: &[f64; 2], b: &[f64; 2], c: &[f64; 2]) -> f64 {
    (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
}

/// Hard z-buffer rasterization with perspective-correct barycentrics.
pub fn rasterize_hits(mesh: &TriMesh, camera: &Camera) -> HitMap {
    let (h, w) = camera.image_size;
    let mut diagnostics = RasterDiagnostics::default();
    let projected = project_faces(&mesh.vertices, &mesh.faces, camera, &mut diagnostics);

    let mut face = vec![-1i32; h * w];
    let mut bary = vec![[0.0; 3]; h * w];
    let mut depth = vec![f64::INFINITY; h * w];

    for (fi, pf) in projected.iter().enumerate() {
        let Some(pf) = pf else { continue };
        let [q0, q1, q2] = &pf.q;
        let x_lo = q0[0].min(q1[0]).min(q2[0]).floor().max(0.0) as usize;
        let x_hi = (q0[0].max(q1[0]).max(q2[0]).ceil() as isize).min(w as isize - 1);
        let y_lo = q0[1].min(q1[1]).min(q2[1]).floor().max(0.0) as usize;
        let y_hi = (q0[1].max(q1[1]).max(q2[1]).ceil() as isize).min(h as isize - 1);
        if x_hi < x_lo as isize || y_hi < y_lo as isize {
            continue;
        }
        let area = edge_fn(q0, q1, q2);
        for py in y_lo..=y_hi as usize {
            for px in x_lo..=x_hi as usize {
                let p = [px as f64 + 0.5, py as f64 + 0.5];
                let w0 = edge_fn(&p, q1, q2);
                let w1 = edge_fn(q0, &p, q2);
                let w2 = edge_fn(q0, q1, &p);
                // inside iff all weights share the sign of the face area
                let inside = if area > 0.0 {
                    w0 >= 0.0 && w1 >= 0.0 && w2 >= 0.0
                } else {
                    w0 <= 0.0 && w1 <= 0.0 && w2 <= 0.0
                };
                if !inside {
                    continue;
                }
                let (a0, a1, a2) = (w0 / area, w1 / area, w2 / area);
                let inv_z = a0 / pf.z[0] + a1 / pf.z[1] + a2 / pf.z[2];
                let z = 1.0 / inv_z;
                let pix = py * w + px;
                if z < depth[pix] {
                    depth[pix] = z;
                    face[pix] = fi as i32;
                    bary[pix] = [
                        a0 / pf.z[0] * z,
                        a1 / pf.z[1] * z,
                        a2 / pf.z[2] * z,
                    ];
                }
            }
        }
    }
    HitMap {
        size: (h, w),
        face,
        bary,
        depth,
        diagnostics,
    }
}

/// Hard binary silhouette.
pub fn rasterize_silhouette_hard(mesh: &TriMesh, camera: &Camera) -> (Vec<f64>, RasterDiagnostics) {
    let hits = rasterize_hits(mesh, camera);
    (hits.coverage(), hits.diagnostics)
}

/// Plain (non-differentiable) silhouette render honoring the settings: soft
/// coverage when `softness_sigma > 0`, hard point-in-triangle otherwise.
pub fn rasterize_silhouette(
    mesh: &TriMesh,
    camera: &Camera,
    settings: &RasterSettings,
) -> (Vec<f64>, RasterDiagnostics) {
    if settings.softness_sigma > 0.0 {
        let (img, diag) = soft_silhouette_image(&mesh.vertices, &mesh.faces, camera, settings);
        (img, diag)
    } else {
        rasterize_silhouette_hard(mesh, camera)
    }
}

// ---------------------------------------------------------------------------
// soft silhouette
// ---------------------------------------------------------------------------

/// Influence cutoff: contributions with d^2/sigma beyond this are dropped.
const SOFT_CUTOFF: f64 = 14.0;

fn softplus(z: f64) -> f64 {
    if z > 30.0 {
        z
    } else if z < -30.0 {
        z.exp()
    } else {
        (1.0 + z.exp()).ln()
    }
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Squared distance from `p` to the boundary of triangle `(q0, q1, q2)` in
/// 2D, the index of the nearest edge, and the segment parameter of the foot.
fn boundary_distance_sq(p: &[f64; 2], q: &[[f64; 2]; 3]) -> (f64, usize, f64) {
    let mut best = f64::INFINITY;
    let mut best_edge = 0;
    let mut best_t = 0.0;
    for e in 0..3 {
        let a = &q[e];
        let b = &q[(e + 1) % 3];
        let ab = [b[0] - a[0], b[1] - a[1]];
        let ap = [p[0] - a[0], p[1] - a[1]];
        let len_sq = ab[0] * ab[0] + ab[1] * ab[1];
        let t = if len_sq > 1e-18 {
            ((ap[0] * ab[0] + ap[1] * ab[1]) / len_sq).clamp(0.0, 1.0)
        } else {
            0.0
        };
        let dx = ap[0] - t * ab[0];
        let dy = ap[1] - t * ab[1];
        let d2 = dx * dx + dy * dy;
        if d2 < best {
            best = d2;
            best_edge = e;
            best_t = t;
        }
    }
    (best, best_edge, best_t)
}

fn soft_log_miss_image(
    vertices: &[Vec3],
    faces: &[[usize; 3]],
    camera: &Camera,
    settings: &RasterSettings,
) -> (Vec<f64>, RasterDiagnostics) {
    let (h, w) = camera.image_size;
    let mut diagnostics = RasterDiagnostics::default();
    let projected = project_faces(vertices, faces, camera, &mut diagnostics);
    let norm = h.min(w) as f64;
    let sigma = settings.softness_sigma.max(1e-12);
    let margin = (SOFT_CUTOFF * sigma).sqrt() * norm;

    // S[pix] = sum_j log(1 - D_j) accumulated in log space
    let mut log_miss = vec![0.0; h * w];
    for pf in projected.iter().flatten() {
        let [q0, q1, q2] = &pf.q;
        let x_lo = (q0[0].min(q1[0]).min(q2[0]) - margin).floor().max(0.0) as usize;
        let x_hi = ((q0[0].max(q1[0]).max(q2[0]) + margin).ceil() as isize).min(w as isize - 1);
        let y_lo = (q0[1].min(q1[1]).min(q2[1]) - margin).floor().max(0.0) as usize;
        let y_hi = ((q0[1].max(q1[1]).max(q2[1]) + margin).ceil() as isize).min(h as isize - 1);
        if x_hi < x_lo as isize || y_hi < y_lo as isize {
            continue;
        }
        let area = edge_fn(q0, q1, q2);
        for py in y_lo..=y_hi as usize {
            for px in x_lo..=x_hi as usize {
                let p = [px as f64 + 0.5, py as f64 + 0.5];
                let w0 = edge_fn(&p, q1, q2);
                let w1 = edge_fn(q0, &p, q2);
                let w2 = edge_fn(q0, q1, &p);
                let inside = if area > 0.0 {
                    w0 >= 0.0 && w1 >= 0.0 && w2 >= 0.0
                } else {
                    w0 <= 0.0 && w1 <= 0.0 && w2 <= 0.0
                };
                let (d2, _, _) = boundary_distance_sq(&p, &pf.q);
                let d2n = d2 / (norm * norm);
                let z = if inside { d2n / sigma } else { -d2n / sigma };
                if !inside && z < -SOFT_CUTOFF {
                    continue;
                }
                // log(1 - sigmoid(z)) = -softplus(z)
                log_miss[py * w + px] -= softplus(z);
            }
        }
    }
    (log_miss, diagnostics)
}

fn soft_silhouette_image(
    vertices: &[Vec3],
    faces: &[[usize; 3]],
    camera: &Camera,
    settings: &RasterSettings,
) -> (Vec<f64>, RasterDiagnostics) {
    let (log_miss, diag) = soft_log_miss_image(vertices, faces, camera, settings);
    (log_miss.iter().map(|&s| 1.0 - s.exp()).collect(), diag)
}

/// Differentiable soft silhouette: `[V, 3]` world vertices to `[H, W]`
/// coverage in [0, 1]. Gradients flow to vertex positions through the
/// screen-space distance of each pixel to each face boundary.
pub fn soft_silhouette_graph<'g>(
    g: &'g Graph,
    vertices: Var<'g>,
    faces: &[[usize; 3]],
    camera: &Camera,
    settings: &RasterSettings,
) -> (Var<'g>, RasterDiagnostics) {
    assert!(
        settings.softness_sigma > 0.0,
        "differentiable silhouette requires softness_sigma > 0"
    );
    let val = vertices.value();
    let nv = val.rows();
    let verts: Vec<Vec3> = (0..nv)
        .map(|i| Vec3::new(val.data[i * 3], val.data[i * 3 + 1], val.data[i * 3 + 2]))
        .collect();
    let (log_miss, diag) = soft_log_miss_image(&verts, faces, camera, settings);
    let (h, w) = camera.image_size;
    let out: Vec<f64> = log_miss.iter().map(|&s| 1.0 - s.exp()).collect();

    let faces_c = faces.to_vec();
    let camera_c = camera.clone();
    let settings_c = *settings;
    let out_var = g.custom(
        &[vertices],
        Tensor::new(vec![h, w], out),
        Box::new(move |gout| {
            let mut grad = vec![0.0; nv * 3];
            backward_soft_silhouette(
                &verts,
                &faces_c,
                &camera_c,
                &settings_c,
                &log_miss,
                &gout.data,
                &mut grad,
            );
            vec![Tensor::new(vec![nv, 3], grad)]
        }),
    );
    (out_var, diag)
}

#[allow(clippy::too_many_arguments)]
fn backward_soft_silhouette(
    vertices: &[Vec3],
    faces: &[[usize; 3]],
    camera: &Camera,
    settings: &RasterSettings,
    log_miss: &[f64],
    gout: &[f64],
    grad: &mut [f64],
) {
    let (h, w) = camera.image_size;
    let mut diagnostics = RasterDiagnostics::default();
    let projected = project_faces(vertices, faces, camera, &mut diagnostics);
    let norm = h.min(w) as f64;
    let sigma = settings.softness_sigma.max(1e-12);
    let margin = (SOFT_CUTOFF * sigma).sqrt() * norm;

    // accumulate gradients on projected 2D vertices plus camera-space z
    let mut grad_q = vec![[0.0; 2]; vertices.len()];

    for pf in projected.iter().flatten() {
        let [q0, q1, q2] = &pf.q;
        let x_lo = (q0[0].min(q1[0]).min(q2[0]) - margin).floor().max(0.0) as usize;
        let x_hi = ((q0[0].max(q1[0]).max(q2[0]) + margin).ceil() as isize).min(w as isize - 1);
        let y_lo = (q0[1].min(q1[1]).min(q2[1]) - margin).floor().max(0.0) as usize;
        let y_hi = ((q0[1].max(q1[1]).max(q2[1]) + margin).ceil() as isize).min(h as isize - 1);
        if x_hi < x_lo as isize || y_hi < y_lo as isize {
            continue;
        }
        let area = edge_fn(q0, q1, q2);
        for py in y_lo..=y_hi as usize {
            for px in x_lo..=x_hi as usize {
                let pix = py * w + px;
                let go = gout[pix];
                if go == 0.0 {
                    continue;
                }
                let p = [px as f64 + 0.5, py as f64 + 0.5];
                let w0 = edge_fn(&p, q1, q2);
                let w1 = edge_fn(q0, &p, q2);
                let w2 = edge_fn(q0, q1, &p);
                let inside = if area > 0.0 {
                    w0 >= 0.0 && w1 >= 0.0 && w2 >= 0.0
                } else {
                    w0 <= 0.0 && w1 <= 0.0 && w2 <= 0.0
                };
                let (d2, edge, t) = boundary_distance_sq(&p, &pf.q);
                let d2n = d2 / (norm * norm);
                let z = if inside { d2n / sigma } else { -d2n / sigma };
                if !inside && z < -SOFT_CUTOFF {
                    continue;
                }
                // out = 1 - exp(S); dout/dz_j = exp(S) * sigmoid(z_j)
                let dl_dz = go * log_miss[pix].exp() * sigmoid(z);
                let sign = if inside { 1.0 } else { -1.0 };
                let dl_dd2 = dl_dz * sign / (sigma * norm * norm);
                // d(d^2)/d(segment endpoints) via the foot point
                let a_i = pf.idx[edge];
                let b_i = pf.idx[(edge + 1) % 3];
                let a = &pf.q[edge];
                let b = &pf.q[(edge + 1) % 3];
                let foot = [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])];
                let r = [p[0] - foot[0], p[1] - foot[1]];
                grad_q[a_i][0] += dl_dd2 * -2.0 * r[0] * (1.0 - t);
                grad_q[a_i][1] += dl_dd2 * -2.0 * r[1] * (1.0 - t);
                grad_q[b_i][0] += dl_dd2 * -2.0 * r[0] * t;
                grad_q[b_i][1] += dl_dd2 * -2.0 * r[1] * t;
            }
        }
    }

    // chain through the projection to world space
    let r = camera.rotation_matrix();
    let (fx, fy) = camera.focal;
    for (vi, v) in vertices.iter().enumerate() {
        let gq = grad_q[vi];
        if gq[0] == 0.0 && gq[1] == 0.0 {
            continue;
        }
        let c = camera.to_camera(v);
        if c.z <= 1e-6 {
            continue;
        }
        let gc = Vec3::new(
            gq[0] * fx / c.z,
            gq[1] * fy / c.z,
            -gq[0] * fx * c.x / (c.z * c.z) - gq[1] * fy * c.y / (c.z * c.z),
        );
        let gw = r.transpose() * gc;
        grad[vi * 3] += gw.x;
        grad[vi * 3 + 1] += gw.y;
        grad[vi * 3 + 2] += gw.z;
    }
}

// ---------------------------------------------------------------------------
// attribute rasterization
// ---------------------------------------------------------------------------

/// Plain attribute rasterization: perspective-correct interpolation of
/// per-vertex attributes over the front-most face. Returns `[H*W, C]` with
/// `background_value` outside coverage, plus the hit map.
pub fn rasterize_attributes(
    mesh: &TriMesh,
    attrs: &[f64],
    channels: usize,
    camera: &Camera,
    settings: &RasterSettings,
) -> (Vec<f64>, HitMap) {
    assert_eq!(attrs.len(), mesh.vertices.len() * channels);
    let hits = rasterize_hits(mesh, camera);
    let (h, w) = hits.size;
    let mut out = vec![settings.background_value; h * w * channels];
    for pix in 0..h * w {
        let f = hits.face[pix];
        if f < 0 {
            continue;
        }
        let face = mesh.faces[f as usize];
        let b = hits.bary[pix];
        for c in 0..channels {
            out[pix * channels + c] = b[0] * attrs[face[0] * channels + c]
                + b[1] * attrs[face[1] * channels + c]
                + b[2] * attrs[face[2] * channels + c];
        }
    }
    (out, hits)
}

/// Differentiable attribute rasterization on the tape: gradients flow to the
/// attributes (exactly, the map is linear) and to vertex positions through
/// the perspective-correct barycentric weights of the fixed hit faces.
pub fn rasterize_attributes_graph<'g>(
    g: &'g Graph,
    vertices: Var<'g>,
    attrs: Var<'g>,
    faces: &[[usize; 3]],
    camera: &Camera,
    settings: &RasterSettings,
) -> (Var<'g>, std::rc::Rc<HitMap>) {
    let vval = vertices.value();
    let aval = attrs.value();
    let nv = vval.rows();
    let channels = aval.cols();
    assert_eq!(aval.rows(), nv);

    let verts: Vec<Vec3> = (0..nv)
        .map(|i| Vec3::new(vval.data[i * 3], vval.data[i * 3 + 1], vval.data[i * 3 + 2]))
        .collect();
    let mesh = TriMesh {
        vertices: verts.clone(),
        faces: faces.to_vec(),
    };
    let (out, hits) = rasterize_attributes(&mesh, &aval.data, channels, camera, settings);
    let (h, w) = hits.size;
    let hits = std::rc::Rc::new(hits);

    let hits_b = hits.clone();
    let faces_b = faces.to_vec();
    let camera_b = camera.clone();
    let attrs_b = aval.clone();
    let out_var = g.custom(
        &[vertices, attrs],
        Tensor::new(vec![h * w, channels], out),
        Box::new(move |gout| {
            let mut gv = vec![0.0; nv * 3];
            let mut ga = vec![0.0; nv * channels];
            backward_attribute_raster(
                &verts, &faces_b, &camera_b, &attrs_b.data, channels, &hits_b, &gout.data,
                &mut gv, &mut ga,
            );
            vec![
                Tensor::new(vec![nv, 3], gv),
                Tensor::new(vec![nv, channels], ga),
            ]
        }),
    );
    (out_var, hits)
}

#[allow(clippy::too_many_arguments)]
fn backward_attribute_raster(
    vertices: &[Vec3],
    faces: &[[usize; 3]],
    camera: &Camera,
    attrs: &[f64],
    channels: usize,
    hits: &HitMap,
    gout: &[f64],
    grad_verts: &mut [f64],
    grad_attrs: &mut [f64],
) {
    let (h, w) = hits.size;
    let proj: Vec<([f64; 2], f64, bool)> = vertices.iter().map(|v| camera.project(v)).collect();

    let mut grad_q = vec![[0.0; 2]; vertices.len()];
    let mut grad_z = vec![0.0; vertices.len()];

    for py in 0..h {
        for px in 0..w {
            let pix = py * w + px;
            let fi = hits.face[pix];
            if fi < 0 {
                continue;
            }
            let go = &gout[pix * channels..(pix + 1) * channels];
            if go.iter().all(|&v| v == 0.0) {
                continue;
            }
            let face = faces[fi as usize];
            let q = [proj[face[0]].0, proj[face[1]].0, proj[face[2]].0];
            let z = [proj[face[0]].1, proj[face[1]].1, proj[face[2]].1];
            let p = [px as f64 + 0.5, py as f64 + 0.5];

            // forward quantities
            let wts = [
                edge_fn(&p, &q[1], &q[2]),
                edge_fn(&q[0], &p, &q[2]),
                edge_fn(&q[0], &q[1], &p),
            ];
            let gk = [wts[0] / z[0], wts[1] / z[1], wts[2] / z[2]];
            let gsum = gk[0] + gk[1] + gk[2];
            if gsum.abs() < 1e-18 {
                continue;
            }
            let b = [gk[0] / gsum, gk[1] / gsum, gk[2] / gsum];

            // attribute gradient and the pixel's sensitivity to each b_k
            let mut s = [0.0; 3];
            for (k, &vi) in face.iter().enumerate() {
                for c in 0..channels {
                    grad_attrs[vi * channels + c] += b[k] * go[c];
                    s[k] += go[c] * attrs[vi * channels + c];
                }
            }
            let sb = s[0] * b[0] + s[1] * b[1] + s[2] * b[2];
            let dl_dg = [
                (s[0] - sb) / gsum,
                (s[1] - sb) / gsum,
                (s[2] - sb) / gsum,
            ];
            let dl_dw = [dl_dg[0] / z[0], dl_dg[1] / z[1], dl_dg[2] / z[2]];
            for k in 0..3 {
                grad_z[face[k]] += -wts[k] / (z[k] * z[k]) * dl_dg[k];
            }

            // w0 = E(p, q1, q2)
            grad_q[face[1]][0] += dl_dw[0] * (q[2][1] - p[1]);
            grad_q[face[1]][1] += dl_dw[0] * (p[0] - q[2][0]);
            grad_q[face[2]][0] += dl_dw[0] * (p[1] - q[1][1]);
            grad_q[face[2]][1] += dl_dw[0] * (q[1][0] - p[0]);
            // w1 = E(q0, p, q2)
            grad_q[face[0]][0] += dl_dw[1] * (p[1] - q[2][1]);
            grad_q[face[0]][1] += dl_dw[1] * (q[2][0] - p[0]);
            grad_q[face[2]][0] += dl_dw[1] * (q[0][1] - p[1]);
            grad_q[face[2]][1] += dl_dw[1] * (p[0] - q[0][0]);
            // w2 = E(q0, q1, p)
            grad_q[face[0]][0] += dl_dw[2] * (q[1][1] - p[1]);
            grad_q[face[0]][1] += dl_dw[2] * (p[0] - q[1][0]);
            grad_q[face[1]][0] += dl_dw[2] * (p[1] - q[0][1]);
            grad_q[face[1]][1] += dl_dw[2] * (q[0][0] - p[0]);
        }
    }

    // chain projected-pixel and depth gradients back to world space
    let r = camera.rotation_matrix();
    let (fx, fy) = camera.focal;
    for (vi, v) in vertices.iter().enumerate() {
        let gq = grad_q[vi];
        let gz = grad_z[vi];
        if gq[0] == 0.0 && gq[1] == 0.0 && gz == 0.0 {
            continue;
        }
        let c = camera.to_camera(v);
        if c.z <= 1e-6 {
            continue;
        }
        let gc = Vec3::new(
            gq[0] * fx / c.z,
            gq[1] * fy / c.z,
            -gq[0] * fx * c.x / (c.z * c.z) - gq[1] * fy * c.y / (c.z * c.z) + gz,
        );
        let gw = r.transpose() * gc;
        grad_verts[vi * 3] += gw.x;
        grad_verts[vi * 3 + 1] += gw.y;
        grad_verts[vi * 3 + 2] += gw.z;
    }
}

// ---------------------------------------------------------------------------
// multi-view feature baking
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct BakedFeatures {
    /// `[V, C]` visibility-weighted means.
    pub features: Vec<f64>,
    pub channels: usize,
    /// Number of views each vertex was visible in.
    pub view_counts: Vec<usize>,
    /// True when the vertex was never visible (features are zero).
    pub never_visible: Vec<bool>,
}

/// Back-project per-camera feature images onto the mesh vertices. A vertex
/// samples a camera's image bilinearly at its projection when its depth
/// matches the depth buffer within `depth_tol_rel` of the mesh bounding-box
/// diagonal. Bilinear taps that fall on background or on a surface at a very
/// different depth are dropped and the remaining tap weights renormalized,
/// so features never bleed across silhouette or occlusion boundaries.
///
/// Per-vertex result is the visibility-weighted mean across cameras, where a
/// view's weight is the facing cosine between the vertex normal and the view
/// ray; grazing views contribute little, which keeps their smeared pixel
/// footprints from polluting the bake.
pub fn bake_vertex_features(
    mesh: &TriMesh,
    cameras: &[Camera],
    feature_images: &[(Vec<f32>, (usize, usize), usize)],
    depth_tol_rel: f64,
) -> BakedFeatures {
    use rayon::prelude::*;
    assert_eq!(cameras.len(), feature_images.len());
    let nv = mesh.vertices.len();
    let channels = feature_images.first().map(|f| f.2).unwrap_or(0);
    let (lo, hi) = mesh.bounding_box();
    let scene_scale = (hi - lo).norm().max(1e-12);
    let tol = depth_tol_rel * scene_scale;
    // looser gate for neighboring taps: surfaces slant across a pixel
    let tap_tol = 4.0 * tol;
    let normals = mesh.vertex_normals();

    // a sample is trusted only when the rasterized face belongs to the
    // vertex's two-ring, so near-coincident surfaces inside the depth
    // tolerance cannot contaminate the bake
    let ring1 = mesh.vertex_adjacency();
    let mut local: Vec<Vec<usize>> = Vec::with_capacity(nv);
    for vi in 0..nv {
        let mut set: Vec<usize> = vec![vi];
        for &a in &ring1[vi] {
            set.push(a);
            set.extend_from_slice(&ring1[a]);
        }
        set.sort_unstable();
        set.dedup();
        local.push(set);
    }
    let face_is_local = |vi: usize, fi: i32| -> bool {
        if fi < 0 {
            return false;
        }
        let f = mesh.faces[fi as usize];
        f.iter().any(|c| local[vi].binary_search(c).is_ok())
    };

    // per-view accumulation, reduced in camera order for reproducibility
    let partials: Vec<(Vec<f64>, Vec<f64>, Vec<usize>)> = cameras
        .par_iter()
        .zip(feature_images.par_iter())
        .map(|(cam, (img, (fh, fw), ch))| {
            assert_eq!(*ch, channels);
            let mut acc = vec![0.0f64; nv * channels];
            let mut wacc = vec![0.0f64; nv];
            let mut counts = vec![0usize; nv];
            let hits = rasterize_hits(mesh, cam);
            let (h, w) = hits.size;
            let cam_center = cam.center();
            for (vi, v) in mesh.vertices.iter().enumerate() {
                let (uv, z, ok) = cam.project(v);
                if !ok {
                    continue;
                }
                let (px, py) = (uv[0] as isize, uv[1] as isize);
                if px < 0 || py < 0 || px >= w as isize || py >= h as isize {
                    continue;
                }
                let pix = py as usize * w + px as usize;
                if !face_is_local(vi, hits.face[pix]) || (hits.depth[pix] - z).abs() > tol {
                    continue;
                }
                let ray = (v - cam_center).normalize();
                let cos = (-normals[vi].dot(&ray)).max(0.0);
                // squared facing cosine: contour-adjacent views see the
                // surface receding within a pixel and contribute poor samples
                let facing = cos * cos;
                if facing < 1e-6 {
                    continue;
                }
                // bilinear sample over depth-valid foreground taps
                let fu = uv[0] * *fw as f64 / w as f64 - 0.5;
                let fv = uv[1] * *fh as f64 / h as f64 - 0.5;
                let x0 = fu.floor();
                let y0 = fv.floor();
                let (tx, ty) = (fu - x0, fv - y0);
                let cl = |x: f64, n: usize| (x.max(0.0) as usize).min(n - 1);
                let taps = [
                    (cl(x0, *fw), cl(y0, *fh), (1.0 - tx) * (1.0 - ty)),
                    (cl(x0 + 1.0, *fw), cl(y0, *fh), tx * (1.0 - ty)),
                    (cl(x0, *fw), cl(y0 + 1.0, *fh), (1.0 - tx) * ty),
                    (cl(x0 + 1.0, *fw), cl(y0 + 1.0, *fh), tx * ty),
                ];
                let mut wsum = 0.0;
                let mut sample = vec![0.0f64; channels];
                for &(xi, yi, wt) in &taps {
                    if wt == 0.0 {
                        continue;
                    }
                    // validate the tap against the render-resolution buffers
                    let rx = (((xi as f64 + 0.5) * w as f64 / *fw as f64) as usize).min(w - 1);
                    let ry = (((yi as f64 + 0.5) * h as f64 / *fh as f64) as usize).min(h - 1);
                    let rpix = ry * w + rx;
                    if !face_is_local(vi, hits.face[rpix])
                        || (hits.depth[rpix] - z).abs() > tap_tol
                    {
                        continue;
                    }
                    for c in 0..channels {
                        sample[c] += wt * img[(yi * fw + xi) * channels + c] as f64;
                    }
                    wsum += wt;
                }
                // degenerate support collapses bilinear to nearest-neighbor
                if wsum < 0.3 {
                    continue;
                }
                for c in 0..channels {
                    acc[vi * channels + c] += facing * sample[c] / wsum;
                }
                wacc[vi] += facing;
                counts[vi] += 1;
            }
            (acc, wacc, counts)
        })
        .collect();

    let mut acc = vec![0.0f64; nv * channels];
    let mut wacc = vec![0.0f64; nv];
    let mut counts = vec![0usize; nv];
    for (pacc, pw, pcounts) in partials {
        for (a, p) in acc.iter_mut().zip(&pacc) {
            *a += p;
        }
        for (a, p) in wacc.iter_mut().zip(&pw) {
            *a += p;
        }
        for (c, p) in counts.iter_mut().zip(&pcounts) {
            *c += p;
        }
    }

    let mut never_visible = vec![false; nv];
    for vi in 0..nv {
        if counts[vi] == 0 || wacc[vi] < 1e-9 {
            never_visible[vi] = true;
            counts[vi] = 0;
        } else {
            for c in 0..channels {
                acc[vi * channels + c] /= wacc[vi];
            }
        }
    }
    BakedFeatures {
        features: acc,
        channels,
        view_counts: counts,
        never_visible,
    }
}

// ---------------------------------------------------------------------------
// png helpers
// ---------------------------------------------------------------------------

/// Save a grayscale image in [0, 1] as PNG.
pub fn save_gray_png(path: &std::path::Path, img: &[f64], size: (usize, usize)) -> Result<()> {
    let (h, w) = size;
    assert_eq!(img.len(), h * w);
    let buf: Vec<u8> = img
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    image::GrayImage::from_raw(w as u32, h as u32, buf)
        .expect("buffer matches dimensions")
        .save(path)
        .map_err(|e| Error::Load(format!("png write {}: {e}", path.display())))
}

pub fn load_gray_png(path: &std::path::Path) -> Result<(Vec<f64>, (usize, usize))> {
    let img = image::open(path)
        .map_err(|e| Error::Load(format!("png read {}: {e}", path.display())))?
        .into_luma8();
    let (w, h) = img.dimensions();
    let data = img.into_raw().iter().map(|&v| v as f64 / 255.0).collect();
    Ok((data, (h as usize, w as usize)))
}

/// Flat-shaded preview (Lambert against the view direction) for humans to
/// sanity-check registrations and tracked frames.
pub fn render_preview(mesh: &TriMesh, camera: &Camera) -> Vec<f64> {
    let hits = rasterize_hits(mesh, camera);
    let (h, w) = hits.size;
    let view = camera.rotation_matrix().transpose() * Vec3::new(0.0, 0.0, -1.0);
    let mut img = vec![1.0; h * w];
    for pix in 0..h * w {
        if hits.face[pix] >= 0 {
            let n = mesh.face_normal(hits.face[pix] as usize);
            img[pix] = 0.15 + 0.7 * n.dot(&view).abs();
        }
    }
    img
}
