//! Observation ingestion: input-mesh normalization, landmark reordering and
//! smoothing, silhouette extraction, and the reduced dense-feature basis.
//! File formats here are the interchange surface for external extractors;
//! the synthetic generator emits exactly the same layouts.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::body::{JOINT_NAMES, NUM_JOINTS};
use crate::geom::{load_mesh, TriMesh, Vec3};
use crate::{Error, Result};

pub const NUM_SOURCE_LANDMARKS: usize = 33;
pub const FEATURE_DIM: usize = 64;

// ---------------------------------------------------------------------------
// input mesh
// ---------------------------------------------------------------------------

/// Normalization applied to the raw mesh: `v' = (v - centroid) / scale`,
/// where `scale` is the original longest bounding-box side.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Normalization {
    pub centroid: [f64; 3],
    pub scale: f64,
}

impl Normalization {
    pub fn apply(&self, v: &Vec3) -> Vec3 {
        (v - Vec3::new(self.centroid[0], self.centroid[1], self.centroid[2])) / self.scale
    }

    pub fn invert(&self, v: &Vec3) -> Vec3 {
        v * self.scale + Vec3::new(self.centroid[0], self.centroid[1], self.centroid[2])
    }
}

#[derive(Debug, Clone)]
pub struct InputMesh {
    pub mesh: TriMesh,
    pub normalization: Normalization,
}

pub fn load_and_normalize_mesh(path: &Path) -> Result<InputMesh> {
    let mesh = load_mesh(path)?;
    normalize_mesh(mesh)
}

pub fn normalize_mesh(mut mesh: TriMesh) -> Result<InputMesh> {
    if mesh.vertices.is_empty() {
        return Err(Error::Invalid("empty mesh".into()));
    }
    let centroid = mesh.centroid();
    let (lo, hi) = mesh.bounding_box();
    let scale = (hi - lo).max();
    if scale <= 0.0 {
        return Err(Error::Invalid("mesh has zero extent".into()));
    }
    for v in &mut mesh.vertices {
        *v = (*v - centroid) / scale;
    }
    Ok(InputMesh {
        mesh,
        normalization: Normalization {
            centroid: [centroid.x, centroid.y, centroid.z],
            scale,
        },
    })
}

// ---------------------------------------------------------------------------
// landmarks
// ---------------------------------------------------------------------------

/// Which ordering a landmark frame is in; remapping raw extractor output
/// twice is a bug the provenance flag turns into an error.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LandmarkOrder {
    Source33,
    ModelJoints,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LandmarkFrame {
    /// Normalized pixel coordinates in [0, 1]^2.
    pub points: Vec<[f64; 2]>,
    pub confidence: Vec<f64>,
    pub order: LandmarkOrder,
}

impl LandmarkFrame {
    pub fn new_source(points: Vec<[f64; 2]>, confidence: Vec<f64>) -> Result<Self> {
        if points.len() != NUM_SOURCE_LANDMARKS || confidence.len() != NUM_SOURCE_LANDMARKS {
            return Err(Error::Dimension(format!(
                "expected {NUM_SOURCE_LANDMARKS} landmarks, got {}",
                points.len()
            )));
        }
        if confidence.iter().any(|&c| !(0.0..=1.0).contains(&c)) {
            return Err(Error::Invalid("landmark confidence outside [0, 1]".into()));
        }
        Ok(LandmarkFrame {
            points,
            confidence,
            order: LandmarkOrder::Source33,
        })
    }
}

/// Landmark-to-joint mapping: each model joint averages a fixed set of
/// source landmarks; joints with no source carry confidence zero. The table
/// is data so it can be inspected and inverted by the synthetic generator.
pub fn landmark_joint_table() -> [&'static [(usize, f64)]; NUM_JOINTS] {
    [
        &[(23, 0.5), (24, 0.5)], // pelvis: hip midpoint
        &[(23, 1.0)],            // left_hip
        &[(24, 1.0)],            // right_hip
        &[],                     // spine1
        &[(25, 1.0)],            // left_knee
        &[(26, 1.0)],            // right_knee
        &[],                     // spine2
        &[(27, 1.0)],            // left_ankle
        &[(28, 1.0)],            // right_ankle
        &[],                     // spine3
        &[(31, 1.0)],            // left_foot
        &[(32, 1.0)],            // right_foot
        &[(11, 0.5), (12, 0.5)], // neck: shoulder midpoint
        &[],                     // left_collar
        &[],                     // right_collar
        &[(7, 0.5), (8, 0.5)],   // head: ear midpoint
        &[(11, 1.0)],            // left_shoulder
        &[(12, 1.0)],            // right_shoulder
        &[(13, 1.0)],            // left_elbow
        &[(14, 1.0)],            // right_elbow
        &[(15, 1.0)],            // left_wrist
        &[(16, 1.0)],            // right_wrist
        &[(19, 1.0)],            // left_hand: index knuckle
        &[(20, 1.0)],            // right_hand
    ]
}

/// Reorder source landmarks into model-joint order. Combined confidence is
/// the weighted mean of the source confidences.
pub fn remap_landmarks(frame: &LandmarkFrame) -> Result<LandmarkFrame> {
    if frame.order == LandmarkOrder::ModelJoints {
        return Err(Error::Invalid(
            "landmarks already in model-joint order; remapping twice is not allowed".into(),
        ));
    }
    let table = landmark_joint_table();
    let mut points = Vec::with_capacity(NUM_JOINTS);
    let mut confidence = Vec::with_capacity(NUM_JOINTS);
    for sources in table.iter() {
        if sources.is_empty() {
            points.push([0.0, 0.0]);
            confidence.push(0.0);
            continue;
        }
        let mut p = [0.0, 0.0];
        let mut c = 0.0;
        let mut wsum = 0.0;
        for &(src, wt) in sources.iter() {
            p[0] += wt * frame.points[src][0];
            p[1] += wt * frame.points[src][1];
            c += wt * frame.confidence[src];
            wsum += wt;
        }
        points.push([p[0] / wsum, p[1] / wsum]);
        confidence.push(c / wsum);
    }
    Ok(LandmarkFrame {
        points,
        confidence,
        order: LandmarkOrder::ModelJoints,
    })
}

/// Confidence-weighted moving average over a temporal window with edge
/// replication. Confidences pass through unchanged.
pub fn smooth_landmarks(frames: &[LandmarkFrame], window: usize) -> Result<Vec<LandmarkFrame>> {
    if window % 2 == 0 || window == 0 {
        return Err(Error::Invalid(format!("smoothing window must be odd, got {window}")));
    }
    if window == 1 || frames.is_empty() {
        return Ok(frames.to_vec());
    }
    let n = frames.len() as isize;
    let half = (window / 2) as isize;
    let num_points = frames[0].points.len();
    let mut out = frames.to_vec();
    for t in 0..n {
        for i in 0..num_points {
            let mut acc = [0.0, 0.0];
            let mut wsum = 0.0;
            for k in -half..=half {
                let src = (t + k).clamp(0, n - 1) as usize;
                let wgt = frames[src].confidence[i];
                acc[0] += wgt * frames[src].points[i][0];
                acc[1] += wgt * frames[src].points[i][1];
                wsum += wgt;
            }
            if wsum > 0.0 {
                out[t as usize].points[i] = [acc[0] / wsum, acc[1] / wsum];
            }
        }
    }
    Ok(out)
}

#[derive(Serialize, Deserialize)]
struct LandmarkRecord {
    frame: usize,
    points: Vec<[f64; 2]>,
    confidence: Vec<f64>,
}

/// JSON-lines landmark files: one `{frame, points, confidence}` object per
/// line, in source (extractor) order.
pub fn load_landmark_file(path: &Path) -> Result<Vec<LandmarkFrame>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut frames: Vec<(usize, LandmarkFrame)> = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: LandmarkRecord = serde_json::from_str(&line)
            .map_err(|e| Error::Load(format!("bad landmark record at line {}: {e}", lineno + 1)))?;
        frames.push((rec.frame, LandmarkFrame::new_source(rec.points, rec.confidence)?));
    }
    frames.sort_by_key(|(f, _)| *f);
    Ok(frames.into_iter().map(|(_, f)| f).collect())
}

pub fn save_landmark_file(path: &Path, frames: &[LandmarkFrame]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    for (i, f) in frames.iter().enumerate() {
        let rec = LandmarkRecord {
            frame: i,
            points: f.points.clone(),
            confidence: f.confidence.clone(),
        };
        writeln!(w, "{}", serde_json::to_string(&rec).expect("landmark record serializes"))
            .map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// silhouettes
// ---------------------------------------------------------------------------

/// Foreground = not white background: a pixel is background iff every
/// channel exceeds the threshold.
pub fn extract_silhouette(rgb: &[f64], size: (usize, usize), threshold: f64) -> Vec<f64> {
    let (h, w) = size;
    assert_eq!(rgb.len(), h * w * 3);
    (0..h * w)
        .map(|p| {
            let bg = rgb[p * 3] > threshold && rgb[p * 3 + 1] > threshold && rgb[p * 3 + 2] > threshold;
            if bg {
                0.0
            } else {
                1.0
            }
        })
        .collect()
}

// ---------------------------------------------------------------------------
// feature basis
// ---------------------------------------------------------------------------

/// Mean and principal directions of the dense-feature distribution. When
/// the sample rank is below 64, the trailing components are zero rows and
/// `valid_components` records how many rows are meaningful.
#[derive(Debug, Clone)]
pub struct FeatureBasis {
    pub mean: Vec<f64>,
    /// `[64, D]` row-major; orthonormal rows up to `valid_components`.
    pub components: Vec<f64>,
    pub input_dim: usize,
    pub valid_components: usize,
}

impl FeatureBasis {
    /// Project one vector: `components * (x - mean)`.
    pub fn project(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.input_dim);
        let d = self.input_dim;
        let mut out = vec![0.0; FEATURE_DIM];
        let centered: Vec<f64> = x.iter().zip(&self.mean).map(|(a, m)| a - m).collect();
        for (k, o) in out.iter_mut().enumerate() {
            let row = &self.components[k * d..(k + 1) * d];
            *o = row.iter().zip(&centered).map(|(r, c)| r * c).sum();
        }
        out
    }

    /// Reconstruct from reduced coordinates: `mean + components^T * y`.
    pub fn reconstruct(&self, y: &[f64]) -> Vec<f64> {
        assert_eq!(y.len(), FEATURE_DIM);
        let d = self.input_dim;
        let mut out = self.mean.clone();
        for (k, &yk) in y.iter().enumerate() {
            if yk == 0.0 {
                continue;
            }
            let row = &self.components[k * d..(k + 1) * d];
            for (o, r) in out.iter_mut().zip(row) {
                *o += yk * r;
            }
        }
        out
    }

    pub fn project_rows(&self, data: &[f64], n: usize) -> Vec<f64> {
        let d = self.input_dim;
        assert_eq!(data.len(), n * d);
        let mut out = vec![0.0; n * FEATURE_DIM];
        for i in 0..n {
            let p = self.project(&data[i * d..(i + 1) * d]);
            out[i * FEATURE_DIM..(i + 1) * FEATURE_DIM].copy_from_slice(&p);
        }
        out
    }
}

/// Principal directions of mean-centered samples via the eigendecomposition
/// of the `D x D` covariance.
pub fn fit_feature_basis(samples: &[f64], n: usize, d: usize) -> Result<FeatureBasis> {
    if n <= FEATURE_DIM {
        return Err(Error::Invalid(format!(
            "need more than {FEATURE_DIM} samples to fit the basis, got {n}"
        )));
    }
    assert_eq!(samples.len(), n * d);
    let mut mean = vec![0.0; d];
    for i in 0..n {
        for j in 0..d {
            mean[j] += samples[i * d + j];
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }

    let mut cov = DMatrix::<f64>::zeros(d, d);
    for i in 0..n {
        let row = &samples[i * d..(i + 1) * d];
        for a in 0..d {
            let ca = row[a] - mean[a];
            if ca == 0.0 {
                continue;
            }
            for b in a..d {
                cov[(a, b)] += ca * (row[b] - mean[b]);
            }
        }
    }
    for a in 0..d {
        for b in 0..a {
            cov[(a, b)] = cov[(b, a)];
        }
    }
    cov /= n as f64 - 1.0;

    let eig = cov.symmetric_eigen();
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).unwrap());

    let total_var: f64 = eig.eigenvalues.iter().sum::<f64>().max(1e-300);
    let mut components = vec![0.0; FEATURE_DIM * d];
    let mut valid = 0;
    for (k, &ei) in order.iter().take(FEATURE_DIM.min(d)).enumerate() {
        // zero-variance directions are padding, not signal
        if eig.eigenvalues[ei] / total_var < 1e-12 {
            break;
        }
        for j in 0..d {
            components[k * d + j] = eig.eigenvectors[(j, ei)];
        }
        valid += 1;
    }
    Ok(FeatureBasis {
        mean,
        components,
        input_dim: d,
        valid_components: valid,
    })
}

pub fn save_feature_basis(path: &Path, basis: &FeatureBasis) -> Result<()> {
    let mut a = crate::archive::ArrayArchive::new();
    a.insert("mean", vec![basis.input_dim], basis.mean.clone());
    a.insert(
        "components",
        vec![FEATURE_DIM, basis.input_dim],
        basis.components.clone(),
    );
    a.insert("valid_components", vec![1], vec![basis.valid_components as f64]);
    a.meta.insert("kind".into(), "feature_basis".into());
    a.save_dir_dtype(path, "f64")
}

pub fn load_feature_basis(path: &Path) -> Result<FeatureBasis> {
    let a = crate::archive::ArrayArchive::load(path)?;
    let (mshape, mean) = a.get("mean")?;
    let d = mshape[0];
    let components = a.get_shaped("components", &[FEATURE_DIM, d])?.to_vec();
    let valid = a.get_shaped("valid_components", &[1])?[0] as usize;
    Ok(FeatureBasis {
        mean: mean.to_vec(),
        components,
        input_dim: d,
        valid_components: valid,
    })
}

// ---------------------------------------------------------------------------
// frame observations
// ---------------------------------------------------------------------------

/// Everything the tracker consumes for one frame.
#[derive(Debug, Clone)]
pub struct FrameObservations {
    pub frame_index: usize,
    /// Landmarks in model-joint order, normalized [0, 1]^2 coordinates.
    pub landmarks: LandmarkFrame,
    /// Binary silhouette, `(H, W)` row-major.
    pub silhouette: Vec<f64>,
    pub silhouette_size: (usize, usize),
    /// Reduced dense features, `(h, w, 64)` row-major, f32 on disk.
    pub features: Vec<f32>,
    pub feature_size: (usize, usize),
}

impl FrameObservations {
    pub fn validate(&self) -> Result<()> {
        let (h, w) = self.silhouette_size;
        if self.silhouette.len() != h * w {
            return Err(Error::Dimension("silhouette size mismatch".into()));
        }
        if self.silhouette.iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::Invalid("silhouette must be binary".into()));
        }
        let (fh, fw) = self.feature_size;
        if self.features.len() != fh * fw * FEATURE_DIM {
            return Err(Error::Dimension(format!(
                "feature map size mismatch: {} vs {}x{}x{FEATURE_DIM}",
                self.features.len(),
                fh,
                fw
            )));
        }
        if self.landmarks.order != LandmarkOrder::ModelJoints {
            return Err(Error::Invalid("landmarks must be in model-joint order".into()));
        }
        Ok(())
    }
}

/// Load a directory of observations: `landmarks.jsonl`, `sil/%04d.png`,
/// `feat/%04d.f32` (+ sidecars). Landmarks are remapped and smoothed here.
pub fn load_observation_dir(dir: &Path, smoothing_window: usize) -> Result<Vec<FrameObservations>> {
    let raw = load_landmark_file(&dir.join("landmarks.jsonl"))?;
    let remapped: Vec<LandmarkFrame> = raw.iter().map(remap_landmarks).collect::<Result<_>>()?;
    let smoothed = smooth_landmarks(&remapped, smoothing_window)?;

    let mut out = Vec::with_capacity(smoothed.len());
    for (i, landmarks) in smoothed.into_iter().enumerate() {
        let sil_path = dir.join(format!("sil/{i:04}.png"));
        let (sil, sil_size) = crate::render::load_gray_png(&sil_path)?;
        let sil: Vec<f64> = sil.iter().map(|&v| if v > 0.5 { 1.0 } else { 0.0 }).collect();
        let feat_path = dir.join(format!("feat/{i:04}.f32"));
        let (sidecar, feats) = crate::archive::load_raw_f32(&feat_path)?;
        if sidecar.shape.len() != 3 || sidecar.shape[2] != FEATURE_DIM || sidecar.layout != "hwc" {
            return Err(Error::Load(format!(
                "feature sidecar {}: expected [h, w, {FEATURE_DIM}] hwc",
                feat_path.display()
            )));
        }
        let obs = FrameObservations {
            frame_index: i,
            landmarks,
            silhouette: sil,
            silhouette_size: sil_size,
            features: feats,
            feature_size: (sidecar.shape[0], sidecar.shape[1]),
        };
        obs.validate()?;
        out.push(obs);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn normalize_unit_cube() {
        let verts = vec![
            Vec3::new(4.5, 4.5, 4.5),
            Vec3::new(5.5, 4.5, 4.5),
            Vec3::new(4.5, 5.5, 4.5),
            Vec3::new(4.5, 4.5, 5.5),
            Vec3::new(5.5, 5.5, 4.5),
            Vec3::new(5.5, 4.5, 5.5),
            Vec3::new(4.5, 5.5, 5.5),
            Vec3::new(5.5, 5.5, 5.5),
        ];
        let mesh = TriMesh::new(verts, vec![[0, 1, 2]]).unwrap();
        let im = normalize_mesh(mesh).unwrap();
        assert_relative_eq!(im.normalization.centroid[0], 5.0, epsilon = 1e-12);
        assert_relative_eq!(im.normalization.scale, 1.0, epsilon = 1e-12);
        let c = im.mesh.centroid();
        assert!(c.norm() < 1e-9);
        let (lo, hi) = im.mesh.bounding_box();
        assert_relative_eq!((hi - lo).max(), 1.0, epsilon = 1e-9);
    }

    #[test]
    fn normalize_elongated_box_and_round_trip() {
        let verts = vec![
            Vec3::new(-1.0, -0.5, -0.5),
            Vec3::new(1.0, -0.5, -0.5),
            Vec3::new(1.0, 0.5, 0.5),
            Vec3::new(-1.0, 0.5, 0.5),
        ];
        let mesh = TriMesh::new(verts.clone(), vec![[0, 1, 2], [0, 2, 3]]).unwrap();
        let im = normalize_mesh(mesh).unwrap();
        assert_relative_eq!(im.normalization.scale, 2.0, epsilon = 1e-12);
        let (lo, hi) = im.mesh.bounding_box();
        assert_relative_eq!((hi - lo).max(), 1.0, epsilon = 1e-12);
        for (orig, v) in verts.iter().zip(&im.mesh.vertices) {
            let back = im.normalization.invert(v);
            assert_relative_eq!(&back, orig, epsilon = 1e-6);
        }
    }

    fn uniform_frame(val: f64, conf: f64) -> LandmarkFrame {
        LandmarkFrame::new_source(
            vec![[val, val]; NUM_SOURCE_LANDMARKS],
            vec![conf; NUM_SOURCE_LANDMARKS],
        )
        .unwrap()
    }

    #[test]
    fn remap_moves_unique_coordinates() {
        let mut pts = vec![[0.0, 0.0]; NUM_SOURCE_LANDMARKS];
        for (i, p) in pts.iter_mut().enumerate() {
            *p = [i as f64 / 100.0, 0.5];
        }
        let frame = LandmarkFrame::new_source(pts, vec![1.0; NUM_SOURCE_LANDMARKS]).unwrap();
        let mapped = remap_landmarks(&frame).unwrap();
        let table = landmark_joint_table();
        for (j, sources) in table.iter().enumerate() {
            if sources.len() == 1 {
                let (src, _) = sources[0];
                assert_eq!(mapped.points[j], [src as f64 / 100.0, 0.5], "joint {j}");
                assert_eq!(mapped.confidence[j], 1.0);
            } else if sources.is_empty() {
                assert_eq!(mapped.confidence[j], 0.0);
            }
        }
        // pelvis is the hip midpoint
        assert_relative_eq!(mapped.points[0][0], (23.0 + 24.0) / 200.0, epsilon = 1e-12);
    }

    #[test]
    fn remap_zero_confidence_propagates_and_double_remap_errors() {
        let frame = uniform_frame(0.3, 0.0);
        let mapped = remap_landmarks(&frame).unwrap();
        assert!(mapped.confidence.iter().all(|&c| c == 0.0));
        assert!(matches!(remap_landmarks(&mapped), Err(Error::Invalid(_))));
    }

    fn scalar_frames(vals: &[f64]) -> Vec<LandmarkFrame> {
        vals.iter()
            .map(|&v| LandmarkFrame {
                points: vec![[v, v]],
                confidence: vec![1.0],
                order: LandmarkOrder::ModelJoints,
            })
            .collect()
    }

    #[test]
    fn smoothing_identity_and_constants() {
        let frames = scalar_frames(&[0.2, 0.8, 0.5]);
        let out = smooth_landmarks(&frames, 1).unwrap();
        for (a, b) in frames.iter().zip(&out) {
            assert_eq!(a.points, b.points);
        }
        let constant = scalar_frames(&[0.4; 7]);
        let out = smooth_landmarks(&constant, 5).unwrap();
        for f in &out {
            assert_relative_eq!(f.points[0][0], 0.4, epsilon = 1e-12);
        }
        assert!(smooth_landmarks(&frames, 2).is_err());
    }

    #[test]
    fn smoothing_alternating_sequence() {
        let frames = scalar_frames(&[0.0, 1.0, 0.0, 1.0, 0.0]);
        let out = smooth_landmarks(&frames, 3).unwrap();
        let expect = [1.0 / 3.0, 1.0 / 3.0, 2.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0];
        for (f, e) in out.iter().zip(&expect) {
            assert_relative_eq!(f.points[0][0], *e, epsilon = 1e-12);
        }
        // confidences unchanged
        for f in &out {
            assert_eq!(f.confidence[0], 1.0);
        }
    }

    proptest! {
        #[test]
        fn smoothing_is_shift_equivariant(
            vals in proptest::collection::vec(0.0f64..1.0, 3..12),
            shift in -0.3f64..0.3,
        ) {
            let frames = scalar_frames(&vals);
            let shifted: Vec<LandmarkFrame> = frames
                .iter()
                .map(|f| LandmarkFrame {
                    points: vec![[f.points[0][0] + shift, f.points[0][1] + shift]],
                    ..f.clone()
                })
                .collect();
            let a = smooth_landmarks(&frames, 3).unwrap();
            let b = smooth_landmarks(&shifted, 3).unwrap();
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x.points[0][0] + shift - y.points[0][0]).abs() < 1e-9);
            }
        }

        #[test]
        fn silhouette_monotone_in_threshold(
            pix in proptest::collection::vec(0.0f64..1.0, 27),
            t1 in 0.0f64..1.0,
            dt in 0.0f64..0.5,
        ) {
            let t2 = (t1 + dt).min(1.0);
            let s1 = extract_silhouette(&pix, (3, 3), t1);
            let s2 = extract_silhouette(&pix, (3, 3), t2);
            // raising the threshold never removes foreground
            for (a, b) in s1.iter().zip(&s2) {
                prop_assert!(b >= a);
            }
        }
    }

    #[test]
    fn silhouette_white_black_and_gray_square() {
        let all_white = vec![1.0; 4 * 4 * 3];
        assert!(extract_silhouette(&all_white, (4, 4), 0.97).iter().all(|&v| v == 0.0));
        let all_black = vec![0.0; 4 * 4 * 3];
        assert!(extract_silhouette(&all_black, (4, 4), 0.97).iter().all(|&v| v == 1.0));

        let mut img = vec![1.0; 8 * 8 * 3];
        for y in 2..5 {
            for x in 3..6 {
                for c in 0..3 {
                    img[(y * 8 + x) * 3 + c] = 0.5;
                }
            }
        }
        let sil = extract_silhouette(&img, (8, 8), 0.97);
        for y in 0..8 {
            for x in 0..8 {
                let expect = if (2..5).contains(&y) && (3..6).contains(&x) { 1.0 } else { 0.0 };
                assert_eq!(sil[y * 8 + x], expect, "({x},{y})");
            }
        }
    }

    fn low_rank_samples(n: usize, d: usize, rank: usize, seed: u64) -> Vec<f64> {
        use rand::rngs::StdRng;
        use rand::{Rng, SeedableRng};
        let mut rng = StdRng::seed_from_u64(seed);
        let basis: Vec<f64> = (0..rank * d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut out = vec![0.0; n * d];
        for i in 0..n {
            let coeffs: Vec<f64> = (0..rank).map(|_| rng.gen_range(-2.0..2.0)).collect();
            for j in 0..d {
                let mut acc = 0.3; // offset so the mean is nonzero
                for (k, c) in coeffs.iter().enumerate() {
                    acc += c * basis[k * d + j];
                }
                out[i * d + j] = acc;
            }
        }
        out
    }

    #[test]
    fn pca_orthonormal_and_rank_aware() {
        let d = 96;
        let samples = low_rank_samples(300, d, 2, 5);
        let basis = fit_feature_basis(&samples, 300, d).unwrap();
        assert_eq!(basis.valid_components, 2);
        // valid rows orthonormal, padding rows zero
        for a in 0..FEATURE_DIM {
            for b in a..FEATURE_DIM {
                let dot: f64 = (0..d)
                    .map(|j| basis.components[a * d + j] * basis.components[b * d + j])
                    .sum();
                let expect = if a == b && a < 2 { 1.0 } else { 0.0 };
                assert!((dot - expect).abs() < 1e-5, "({a},{b}) dot {dot}");
            }
        }
    }

    #[test]
    fn pca_projection_reconstruction_in_subspace() {
        let d = 80;
        let samples = low_rank_samples(400, d, 40, 9);
        let basis = fit_feature_basis(&samples, 400, d).unwrap();
        assert_eq!(basis.valid_components, 40);
        for i in [0usize, 17, 399] {
            let x = &samples[i * d..(i + 1) * d];
            let y = basis.project(x);
            let back = basis.reconstruct(&y);
            for (a, b) in x.iter().zip(&back) {
                assert!((a - b).abs() < 1e-5, "reconstruction error {}", (a - b).abs());
            }
        }
    }

    #[test]
    fn pca_preserves_inner_products_in_subspace() {
        let d = 70;
        let samples = low_rank_samples(200, d, 30, 13);
        let basis = fit_feature_basis(&samples, 200, d).unwrap();
        let x = &samples[0 * d..1 * d];
        let y = &samples[5 * d..6 * d];
        let cx: Vec<f64> = x.iter().zip(&basis.mean).map(|(a, m)| a - m).collect();
        let cy: Vec<f64> = y.iter().zip(&basis.mean).map(|(a, m)| a - m).collect();
        let raw: f64 = cx.iter().zip(&cy).map(|(a, b)| a * b).sum();
        let px = basis.project(x);
        let py = basis.project(y);
        let red: f64 = px.iter().zip(&py).map(|(a, b)| a * b).sum();
        assert!((raw - red).abs() < 1e-5 * raw.abs().max(1.0), "{raw} vs {red}");
    }

    #[test]
    fn pca_too_few_samples_errors() {
        let samples = vec![0.0; 10 * 8];
        assert!(fit_feature_basis(&samples, 10, 8).is_err());
    }

    #[test]
    fn landmark_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let frames = vec![uniform_frame(0.25, 0.9), uniform_frame(0.75, 0.4)];
        let p = dir.path().join("landmarks.jsonl");
        save_landmark_file(&p, &frames).unwrap();
        let back = load_landmark_file(&p).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0].points, frames[0].points);
        assert_eq!(back[1].confidence, frames[1].confidence);
    }
}
