//! Parametric body model: shape/pose blendshapes, joint regression, and
//! linear blend skinning, with a pluggable pose prior. The model is loaded
//! from a structured array archive and is immutable afterwards; forward
//! evaluation is stateless.
//!
//! Two evaluation paths exist on purpose: a plain one over nalgebra types
//! and a tape path used by the optimizers. The unit tests pin them to each
//! other and to finite differences.

use std::path::Path;

use nalgebra::Matrix3;

use crate::archive::ArrayArchive;
use crate::diff::{concat_rows, stack_cols, Graph, Tensor, Var};
use crate::geom::{rotation_from_axis_angle, TriMesh, Vec3};
use crate::{Error, Result};

pub const NUM_JOINTS: usize = 24;
pub const NUM_BODY_JOINTS: usize = 23;
pub const NUM_SHAPE_COEFFS: usize = 10;
pub const POSE_FEATURE_DIM: usize = NUM_BODY_JOINTS * 9;
pub const LATENT_DIM: usize = 32;

/// Joint parent indices of the standard 24-joint skeleton; `-1` marks the
/// root.
pub const KINEMATIC_PARENTS: [i64; NUM_JOINTS] = [
    -1, 0, 0, 0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 9, 9, 12, 13, 14, 16, 17, 18, 19, 20, 21,
];

pub const JOINT_NAMES: [&str; NUM_JOINTS] = [
    "pelvis",
    "left_hip",
    "right_hip",
    "spine1",
    "left_knee",
    "right_knee",
    "spine2",
    "left_ankle",
    "right_ankle",
    "spine3",
    "left_foot",
    "right_foot",
    "neck",
    "left_collar",
    "right_collar",
    "head",
    "left_shoulder",
    "right_shoulder",
    "left_elbow",
    "right_elbow",
    "left_wrist",
    "right_wrist",
    "left_hand",
    "right_hand",
];

#[derive(Clone, Debug)]
pub struct BodyModel {
    /// `[V, 3]` rest vertices.
    pub template_vertices: Vec<Vec3>,
    pub faces: Vec<[usize; 3]>,
    /// `[V, 3, 10]` flattened row-major.
    pub shape_dirs: Vec<f64>,
    /// `[V, 3, 207]` flattened row-major; empty-equivalent when all zero.
    pub pose_dirs: Vec<f64>,
    /// `[24, V]` row-major.
    pub joint_regressor: Vec<f64>,
    /// `[V, 24]` row-major, rows normalized.
    pub skin_weights: Vec<f64>,
    pub kinematic_parents: [i64; NUM_JOINTS],
    pub(crate) pose_dirs_all_zero: bool,
}

#[derive(Clone, Debug, Default)]
pub struct ShapeCoeffs {
    pub beta: [f64; NUM_SHAPE_COEFFS],
}

impl ShapeCoeffs {
    pub fn new(beta: [f64; NUM_SHAPE_COEFFS]) -> Self {
        ShapeCoeffs { beta }
    }
}

/// Pose of the body: 23 body joints in axis-angle plus the root orientation.
/// `latent` mirrors `body_pose` when a latent prior produced it.
#[derive(Clone, Debug)]
pub struct PoseState {
    pub body_pose: Vec<Vec3>,
    pub global_orient: Vec3,
    pub latent: Option<Vec<f64>>,
}

impl Default for PoseState {
    fn default() -> Self {
        PoseState {
            body_pose: vec![Vec3::zeros(); NUM_BODY_JOINTS],
            global_orient: Vec3::zeros(),
            latent: None,
        }
    }
}

impl PoseState {
    pub fn from_flat(flat: &[f64]) -> Self {
        assert_eq!(flat.len(), NUM_BODY_JOINTS * 3);
        PoseState {
            body_pose: flat
                .chunks_exact(3)
                .map(|c| Vec3::new(c[0], c[1], c[2]))
                .collect(),
            global_orient: Vec3::zeros(),
            latent: None,
        }
    }

    pub fn flat_body_pose(&self) -> Vec<f64> {
        self.body_pose.iter().flat_map(|v| [v.x, v.y, v.z]).collect()
    }

    /// `[24, 3]` rows: root orientation followed by body joints.
    pub fn full_pose_rows(&self) -> Vec<[f64; 3]> {
        let mut rows = Vec::with_capacity(NUM_JOINTS);
        rows.push([self.global_orient.x, self.global_orient.y, self.global_orient.z]);
        for v in &self.body_pose {
            rows.push([v.x, v.y, v.z]);
        }
        rows
    }
}

#[derive(Clone, Debug)]
pub struct PosedBody {
    pub vertices: Vec<Vec3>,
    pub joints: Vec<Vec3>,
}

impl PosedBody {
    pub fn mesh(&self, model: &BodyModel) -> TriMesh {
        TriMesh {
            vertices: self.vertices.clone(),
            faces: model.faces.clone(),
        }
    }
}

// ---------------------------------------------------------------------------
// loading
// ---------------------------------------------------------------------------

/// Loose tolerance accepted by the loader before renormalizing skin weights;
/// rows worse than this are rejected.
const SKIN_WEIGHT_LOAD_TOL: f64 = 1e-3;

pub fn load_body_model(path: &Path) -> Result<BodyModel> {
    let archive = ArrayArchive::load(path)?;
    body_model_from_archive(&archive)
}

pub fn body_model_from_archive(archive: &ArrayArchive) -> Result<BodyModel> {
    let (tshape, tdata) = archive.get("template_vertices")?;
    if tshape.len() != 2 || tshape[1] != 3 {
        return Err(Error::Dimension(format!(
            "template_vertices: expected [V, 3], got {tshape:?}"
        )));
    }
    let nv = tshape[0];
    let template_vertices: Vec<Vec3> = tdata
        .chunks_exact(3)
        .map(|c| Vec3::new(c[0], c[1], c[2]))
        .collect();

    let (fshape, fdata) = archive.get("faces")?;
    if fshape.len() != 2 || fshape[1] != 3 {
        return Err(Error::Dimension(format!("faces: expected [F, 3], got {fshape:?}")));
    }
    let mut faces = Vec::with_capacity(fshape[0]);
    for c in fdata.chunks_exact(3) {
        let f = [c[0] as usize, c[1] as usize, c[2] as usize];
        if f.iter().any(|&v| v >= nv) {
            return Err(Error::Load("faces index vertices out of range".into()));
        }
        faces.push(f);
    }

    let shape_dirs = archive
        .get_shaped("shape_dirs", &[nv, 3, NUM_SHAPE_COEFFS])?
        .to_vec();
    let pose_dirs = archive
        .get_shaped("pose_dirs", &[nv, 3, POSE_FEATURE_DIM])?
        .to_vec();
    let joint_regressor = archive.get_shaped("joint_regressor", &[NUM_JOINTS, nv])?.to_vec();
    let mut skin_weights = archive.get_shaped("skin_weights", &[nv, NUM_JOINTS])?.to_vec();
    let parents_raw = archive.get_shaped("kinematic_parents", &[NUM_JOINTS])?;

    let mut kinematic_parents = [0i64; NUM_JOINTS];
    for (j, &p) in parents_raw.iter().enumerate() {
        kinematic_parents[j] = p.round() as i64;
    }
    validate_kinematic_tree(&kinematic_parents)?;

    for (row, w) in skin_weights.chunks_exact_mut(NUM_JOINTS).enumerate() {
        if w.iter().any(|&v| v < -1e-9) {
            return Err(Error::Load(format!("skin_weights row {row} has negative entries")));
        }
        let sum: f64 = w.iter().sum();
        if (sum - 1.0).abs() > SKIN_WEIGHT_LOAD_TOL {
            return Err(Error::Load(format!(
                "skin_weights row {row} sums to {sum}, beyond tolerance {SKIN_WEIGHT_LOAD_TOL}"
            )));
        }
        for v in w.iter_mut() {
            *v = v.max(0.0) / sum;
        }
    }

    let pose_dirs_all_zero = pose_dirs.iter().all(|&v| v == 0.0);
    Ok(BodyModel {
        template_vertices,
        faces,
        shape_dirs,
        pose_dirs,
        joint_regressor,
        skin_weights,
        kinematic_parents,
        pose_dirs_all_zero,
    })
}

fn validate_kinematic_tree(parents: &[i64; NUM_JOINTS]) -> Result<()> {
    let roots = parents.iter().filter(|&&p| p < 0).count();
    if roots != 1 || parents[0] >= 0 {
        return Err(Error::Load(format!(
            "kinematic tree must have exactly one root at joint 0, got parents {parents:?}"
        )));
    }
    for (j, &p) in parents.iter().enumerate().skip(1) {
        if p < 0 || p as usize >= j {
            return Err(Error::Load(format!(
                "kinematic parent of joint {j} is {p}; parents must precede children"
            )));
        }
    }
    Ok(())
}

/// Serialize a model into the archive layout consumed by `load_body_model`.
pub fn body_model_to_archive(model: &BodyModel) -> ArrayArchive {
    let nv = model.template_vertices.len();
    let mut a = ArrayArchive::new();
    a.insert(
        "template_vertices",
        vec![nv, 3],
        model
            .template_vertices
            .iter()
            .flat_map(|v| [v.x, v.y, v.z])
            .collect(),
    );
    a.insert(
        "faces",
        vec![model.faces.len(), 3],
        model
            .faces
            .iter()
            .flat_map(|f| [f[0] as f64, f[1] as f64, f[2] as f64])
            .collect(),
    );
    a.insert("shape_dirs", vec![nv, 3, NUM_SHAPE_COEFFS], model.shape_dirs.clone());
    a.insert("pose_dirs", vec![nv, 3, POSE_FEATURE_DIM], model.pose_dirs.clone());
    a.insert(
        "joint_regressor",
        vec![NUM_JOINTS, nv],
        model.joint_regressor.clone(),
    );
    a.insert("skin_weights", vec![nv, NUM_JOINTS], model.skin_weights.clone());
    a.insert(
        "kinematic_parents",
        vec![NUM_JOINTS],
        model.kinematic_parents.iter().map(|&p| p as f64).collect(),
    );
    a.meta.insert("kind".into(), "body_model".into());
    a
}

impl BodyModel {
    pub fn num_vertices(&self) -> usize {
        self.template_vertices.len()
    }

    /// Rest-pose joints of the shaped template.
    pub fn rest_joints(&self, shape: &ShapeCoeffs) -> Vec<Vec3> {
        let shaped = self.shaped_template(shape);
        self.regress_joints(&shaped)
    }

    pub fn shaped_template(&self, shape: &ShapeCoeffs) -> Vec<Vec3> {
        let nv = self.num_vertices();
        let mut out = self.template_vertices.clone();
        for vi in 0..nv {
            for c in 0..3 {
                let base = (vi * 3 + c) * NUM_SHAPE_COEFFS;
                let mut acc = 0.0;
                for (k, b) in shape.beta.iter().enumerate() {
                    acc += self.shape_dirs[base + k] * b;
                }
                out[vi][c] += acc;
            }
        }
        out
    }

    pub fn regress_joints(&self, vertices: &[Vec3]) -> Vec<Vec3> {
        let nv = self.num_vertices();
        (0..NUM_JOINTS)
            .map(|j| {
                let row = &self.joint_regressor[j * nv..(j + 1) * nv];
                let mut p = Vec3::zeros();
                for (w, v) in row.iter().zip(vertices) {
                    if *w != 0.0 {
                        p += *w * v;
                    }
                }
                p
            })
            .collect()
    }
}

// ---------------------------------------------------------------------------
// plain forward
// ---------------------------------------------------------------------------

pub fn forward(model: &BodyModel, shape: &ShapeCoeffs, pose: &PoseState) -> PosedBody {
    let shaped = model.shaped_template(shape);
    let j_rest = model.regress_joints(&shaped);

    let rows = pose.full_pose_rows();
    let rots: Vec<Matrix3<f64>> = rows
        .iter()
        .map(|r| rotation_from_axis_angle(&Vec3::new(r[0], r[1], r[2])))
        .collect();

    // pose blendshapes on the rotation-minus-identity features of body joints
    let mut v_posed = shaped;
    if !model.pose_dirs_all_zero {
        let mut feat = [0.0; POSE_FEATURE_DIM];
        for j in 1..NUM_JOINTS {
            let r = &rots[j];
            for c in 0..9 {
                let (row, col) = (c / 3, c % 3);
                let ident = if row == col { 1.0 } else { 0.0 };
                feat[(j - 1) * 9 + c] = r[(row, col)] - ident;
            }
        }
        for (vi, v) in v_posed.iter_mut().enumerate() {
            for c in 0..3 {
                let base = (vi * 3 + c) * POSE_FEATURE_DIM;
                let mut acc = 0.0;
                for (k, f) in feat.iter().enumerate() {
                    acc += model.pose_dirs[base + k] * f;
                }
                v[c] += acc;
            }
        }
    }

    // forward kinematics
    let mut r_world = vec![Matrix3::identity(); NUM_JOINTS];
    let mut p_world = vec![Vec3::zeros(); NUM_JOINTS];
    r_world[0] = rots[0];
    p_world[0] = j_rest[0];
    for j in 1..NUM_JOINTS {
        let par = model.kinematic_parents[j] as usize;
        r_world[j] = r_world[par] * rots[j];
        p_world[j] = r_world[par] * (j_rest[j] - j_rest[par]) + p_world[par];
    }

    // skinning with transforms taken relative to the rest joints
    let nv = model.num_vertices();
    let mut vertices = vec![Vec3::zeros(); nv];
    for j in 0..NUM_JOINTS {
        let t = p_world[j] - r_world[j] * j_rest[j];
        for vi in 0..nv {
            let w = model.skin_weights[vi * NUM_JOINTS + j];
            if w != 0.0 {
                vertices[vi] += w * (r_world[j] * v_posed[vi] + t);
            }
        }
    }

    PosedBody {
        vertices,
        joints: p_world,
    }
}

// ---------------------------------------------------------------------------
// tape forward
// ---------------------------------------------------------------------------

pub struct BodyVars<'g> {
    /// `[V, 3]`, absent when skinning was skipped.
    pub vertices: Option<Var<'g>>,
    /// `[24, 3]` posed joints.
    pub joints: Var<'g>,
}

/// Batched axis-angle to rotation matrices on the tape: `[J, 3] -> [J, 9]`
/// row-major. A tiny smoothing of the angle keeps the zero pose exact while
/// making gradients well-defined there.
pub fn rodrigues_rows<'g>(g: &'g Graph, aa: Var<'g>) -> Var<'g> {
    let ssq = aa.square().sum_cols(); // [J]
    let theta = ssq.add_scalar(1e-24).sqrt();
    let inv_theta = theta.recip();
    let k = aa.mul_col(inv_theta); // unit axis rows
    let s = theta.sin();
    let c = theta.cos();
    let one_minus_c = c.neg().add_scalar(1.0);
    let (kx, ky, kz) = (k.col(0), k.col(1), k.col(2));

    let sx = s.mul(kx);
    let sy = s.mul(ky);
    let sz = s.mul(kz);
    let xy = one_minus_c.mul(kx).mul(ky);
    let xz = one_minus_c.mul(kx).mul(kz);
    let yz = one_minus_c.mul(ky).mul(kz);
    let xx = one_minus_c.mul(kx).mul(kx).add(c);
    let yy = one_minus_c.mul(ky).mul(ky).add(c);
    let zz = one_minus_c.mul(kz).mul(kz).add(c);

    stack_cols(
        g,
        &[
            xx,
            xy.sub(sz),
            xz.add(sy),
            xy.add(sz),
            yy,
            yz.sub(sx),
            xz.sub(sy),
            yz.add(sx),
            zz,
        ],
    )
}

/// Tape version of `forward`. `pose` is `[24, 3]` axis-angle rows (root
/// first); `beta` is `[10, 1]`. Skinning is skipped when `with_vertices` is
/// false, which the temporal regularizer uses to pose joints cheaply.
pub fn forward_graph<'g>(
    g: &'g Graph,
    model: &BodyModel,
    beta: Var<'g>,
    pose: Var<'g>,
    with_vertices: bool,
) -> BodyVars<'g> {
    let nv = model.num_vertices();
    assert_eq!(pose.shape(), vec![NUM_JOINTS, 3]);
    assert_eq!(beta.shape(), vec![NUM_SHAPE_COEFFS, 1]);

    let template = g.constant(Tensor::new(
        vec![nv, 3],
        model
            .template_vertices
            .iter()
            .flat_map(|v| [v.x, v.y, v.z])
            .collect(),
    ));
    let shape_dirs = g.constant(Tensor::new(vec![nv * 3, NUM_SHAPE_COEFFS], model.shape_dirs.clone()));
    let shaped = template.add(shape_dirs.matmul(beta).reshape(vec![nv, 3]));

    let regressor = g.constant(Tensor::new(vec![NUM_JOINTS, nv], model.joint_regressor.clone()));
    let j_rest = regressor.matmul(shaped); // [24, 3]

    let rots = rodrigues_rows(g, pose); // [24, 9]

    // pose blendshapes
    let v_posed = if model.pose_dirs_all_zero || !with_vertices {
        shaped
    } else {
        let ident = g.constant(Tensor::new(
            vec![NUM_BODY_JOINTS, 9],
            (0..NUM_BODY_JOINTS)
                .flat_map(|_| [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0])
                .collect(),
        ));
        let feat = rots
            .slice_rows(1, NUM_JOINTS)
            .sub(ident)
            .reshape(vec![POSE_FEATURE_DIM, 1]);
        let pose_dirs = g.constant(Tensor::new(vec![nv * 3, POSE_FEATURE_DIM], model.pose_dirs.clone()));
        shaped.add(pose_dirs.matmul(feat).reshape(vec![nv, 3]))
    };

    // forward kinematics over [3, 3] rotations and [1, 3] positions
    let mut r_world: Vec<Var<'g>> = Vec::with_capacity(NUM_JOINTS);
    let mut p_world: Vec<Var<'g>> = Vec::with_capacity(NUM_JOINTS);
    for j in 0..NUM_JOINTS {
        let r_local = rots.gather_rows(&[j]).reshape(vec![3, 3]);
        let j_here = j_rest.gather_rows(&[j]); // [1, 3]
        if j == 0 {
            r_world.push(r_local);
            p_world.push(j_here);
        } else {
            let par = model.kinematic_parents[j] as usize;
            let r = r_world[par].matmul(r_local);
            let offset = j_here.sub(j_rest.gather_rows(&[par])); // [1, 3]
            let p = offset
                .matmul(r_world[par].transpose())
                .add(p_world[par]);
            r_world.push(r);
            p_world.push(p);
        }
    }
    let joints = concat_rows(g, &p_world);

    if !with_vertices {
        return BodyVars {
            vertices: None,
            joints,
        };
    }

    // skinning: sum_j w_j * (v_posed R_j^T + t_j)
    let mut out: Option<Var<'g>> = None;
    for j in 0..NUM_JOINTS {
        let col: Vec<f64> = (0..nv).map(|vi| model.skin_weights[vi * NUM_JOINTS + j]).collect();
        if col.iter().all(|&w| w == 0.0) {
            continue;
        }
        let rt = r_world[j].transpose();
        let t = p_world[j].sub(j_rest.gather_rows(&[j]).matmul(rt));
        let x = v_posed.matmul(rt).add_row(t.reshape(vec![3]));
        let w = g.constant(Tensor::vector(col));
        let term = x.mul_col(w);
        out = Some(match out {
            Some(acc) => acc.add(term),
            None => term,
        });
    }

    BodyVars {
        vertices: Some(out.expect("at least one joint has weights")),
        joints,
    }
}

// ---------------------------------------------------------------------------
// pose prior
// ---------------------------------------------------------------------------

/// How decoder outputs map to the 23-joint axis-angle pose.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DecoderHead {
    /// Direct `[69]` axis-angle output.
    AxisAngle,
    /// `[126]` six-d rotation output for 21 joints; the two hand joints are
    /// padded with identity.
    Rot6d21,
}

#[derive(Clone)]
pub struct PoseDecoder {
    /// (weights `[out, in]`, bias `[out]`) per linear layer.
    pub layers: Vec<(Tensor, Tensor)>,
    pub head: DecoderHead,
    pub leaky_slope: f64,
}

/// Pose prior backend: raw axis-angle with an L2 penalty, or a latent code
/// run through a loaded decoder.
#[derive(Clone)]
pub enum PosePrior {
    Raw,
    Latent(PoseDecoder),
}

impl PosePrior {
    pub fn is_latent(&self) -> bool {
        matches!(self, PosePrior::Latent(_))
    }
}

pub fn load_pose_decoder(path: &Path) -> Result<PoseDecoder> {
    let archive = ArrayArchive::load(path)?;
    let head = match archive.meta.get("head").map(String::as_str) {
        Some("axis_angle") | None => DecoderHead::AxisAngle,
        Some("rot6d") => DecoderHead::Rot6d21,
        Some(other) => return Err(Error::Config(format!("unknown decoder head '{other}'"))),
    };
    let mut layers = Vec::new();
    for i in 0.. {
        let wname = format!("w{i}");
        let bname = format!("b{i}");
        if !archive.contains(&wname) {
            break;
        }
        let (wshape, wdata) = archive.get(&wname)?;
        let (bshape, bdata) = archive.get(&bname)?;
        if wshape.len() != 2 || bshape.len() != 1 || bshape[0] != wshape[0] {
            return Err(Error::Dimension(format!(
                "decoder layer {i}: weight {wshape:?} vs bias {bshape:?}"
            )));
        }
        layers.push((
            Tensor::new(wshape.to_vec(), wdata.to_vec()),
            Tensor::new(bshape.to_vec(), bdata.to_vec()),
        ));
    }
    if layers.is_empty() {
        return Err(Error::Config("decoder archive has no layers (w0 absent)".into()));
    }
    let expected_in = LATENT_DIM;
    if layers[0].0.cols() != expected_in {
        return Err(Error::Dimension(format!(
            "decoder input dim {} != latent dim {expected_in}",
            layers[0].0.cols()
        )));
    }
    let out_dim = layers.last().unwrap().0.rows();
    let need = match head {
        DecoderHead::AxisAngle => NUM_BODY_JOINTS * 3,
        DecoderHead::Rot6d21 => 21 * 6,
    };
    if out_dim != need {
        return Err(Error::Dimension(format!(
            "decoder output dim {out_dim} does not match head ({need})"
        )));
    }
    Ok(PoseDecoder {
        layers,
        head,
        leaky_slope: 0.01,
    })
}

pub fn save_pose_decoder(decoder: &PoseDecoder, dir: &Path) -> Result<()> {
    let mut a = ArrayArchive::new();
    for (i, (w, b)) in decoder.layers.iter().enumerate() {
        a.insert(&format!("w{i}"), w.shape.clone(), w.data.clone());
        a.insert(&format!("b{i}"), b.shape.clone(), b.data.clone());
    }
    a.meta.insert(
        "head".into(),
        match decoder.head {
            DecoderHead::AxisAngle => "axis_angle".into(),
            DecoderHead::Rot6d21 => "rot6d".into(),
        },
    );
    a.meta.insert("kind".into(), "pose_decoder".into());
    a.save_dir_dtype(dir, "f64")
}

impl PoseDecoder {
    /// Tape decode: `[B, 32] -> [B, 69]` axis-angle.
    pub fn decode_graph<'g>(&self, g: &'g Graph, latent: Var<'g>) -> Var<'g> {
        assert_eq!(latent.shape()[1], LATENT_DIM);
        let mut x = latent;
        let last = self.layers.len() - 1;
        for (i, (w, b)) in self.layers.iter().enumerate() {
            let wv = g.constant(w.clone());
            let bv = g.constant(b.clone());
            x = x.matmul(wv.transpose()).add_row(bv);
            if i < last {
                x = x.leaky_relu(self.leaky_slope);
            }
        }
        match self.head {
            DecoderHead::AxisAngle => x,
            DecoderHead::Rot6d21 => rot6d_to_axis_angle_graph(g, x),
        }
    }

    pub fn decode(&self, latent: &[f64]) -> PoseState {
        assert_eq!(latent.len(), LATENT_DIM);
        let g = Graph::new();
        let lv = g.constant(Tensor::new(vec![1, LATENT_DIM], latent.to_vec()));
        let out = self.decode_graph(&g, lv).value();
        let mut state = PoseState::from_flat(&out.data);
        state.latent = Some(latent.to_vec());
        state
    }
}

/// Six-d rotation representation to axis-angle on the tape:
/// `[B, 126] -> [B, 69]` (21 joints, hands padded with zeros).
fn rot6d_to_axis_angle_graph<'g>(g: &'g Graph, x: Var<'g>) -> Var<'g> {
    let b = x.shape()[0];
    let mut joint_cols: Vec<Var<'g>> = Vec::with_capacity(69);
    for j in 0..21 {
        // columns of the 3x2 representation
        let a1 = stack_cols(g, &[x.col(j * 6), x.col(j * 6 + 1), x.col(j * 6 + 2)]);
        let a2 = stack_cols(g, &[x.col(j * 6 + 3), x.col(j * 6 + 4), x.col(j * 6 + 5)]);
        let n1 = a1.square().sum_cols().add_scalar(1e-12).sqrt();
        let b1 = a1.mul_col(n1.recip());
        let d = b1.mul(a2).sum_cols(); // [B]
        let a2p = a2.sub(b1.mul_col(d));
        let n2 = a2p.square().sum_cols().add_scalar(1e-12).sqrt();
        let b2 = a2p.mul_col(n2.recip());
        // b3 = b1 x b2
        let (x1, y1, z1) = (b1.col(0), b1.col(1), b1.col(2));
        let (x2, y2, z2) = (b2.col(0), b2.col(1), b2.col(2));
        let b3x = y1.mul(z2).sub(z1.mul(y2));
        let b3y = z1.mul(x2).sub(x1.mul(z2));
        let b3z = x1.mul(y2).sub(y1.mul(x2));
        // rotation matrix columns are (b1, b2, b3); log map to axis-angle
        let trace = x1.add(y2).add(b3z);
        let cos_t = trace.add_scalar(-1.0).mul_scalar(0.5).clamp(-1.0, 1.0);
        let angle = cos_t.acos(); // [B]
        let sin_t = angle.sin();
        // guard the 1/(2 sin) factor; near zero rotation the numerator
        // vanishes at the same rate
        let denom = sin_t.mul_scalar(2.0);
        let safe = denom.square().add_scalar(1e-12).sqrt(); // |2 sin|
        let sign = denom.div(safe.add_scalar(1e-300)); // +-1, ~0 at 0
        let factor = angle.div(safe).mul(sign);
        // antisymmetric part: (R32 - R23, R13 - R31, R21 - R12)
        // with columns (b1, b2, b3): R = [b1 | b2 | b3]
        let r32 = z2; // row 3 col 2 = b2.z
        let r23 = b3y; // row 2 col 3 = b3.y
        let r13 = b3x;
        let r31 = z1;
        let r21 = y1;
        let r12 = x2;
        let ax = r32.sub(r23).mul(factor);
        let ay = r13.sub(r31).mul(factor);
        let az = r21.sub(r12).mul(factor);
        joint_cols.push(ax);
        joint_cols.push(ay);
        joint_cols.push(az);
    }
    // pad the two hand joints with zeros
    let zero = g.constant(Tensor::zeros(vec![b]));
    for _ in 0..6 {
        joint_cols.push(zero);
    }
    stack_cols(g, &joint_cols)
}

/// Decode a latent code (or pass a raw pose through) according to the
/// configured prior backend.
pub fn decode_pose(prior: &PosePrior, raw: &PoseState, latent: Option<&[f64]>) -> Result<PoseState> {
    match prior {
        PosePrior::Raw => Ok(raw.clone()),
        PosePrior::Latent(decoder) => {
            let latent =
                latent.ok_or_else(|| Error::Config("latent prior requires a latent code".into()))?;
            Ok(decoder.decode(latent))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diff::finite_difference;
    use crate::synth::demo_body_model;
    use approx::assert_relative_eq;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn random_pose(rng: &mut StdRng, scale: f64) -> PoseState {
        let mut pose = PoseState::default();
        for v in &mut pose.body_pose {
            *v = Vec3::new(
                rng.gen_range(-scale..scale),
                rng.gen_range(-scale..scale),
                rng.gen_range(-scale..scale),
            );
        }
        pose.global_orient = Vec3::new(
            rng.gen_range(-scale..scale),
            rng.gen_range(-scale..scale),
            rng.gen_range(-scale..scale),
        );
        pose
    }

    #[test]
    fn zero_pose_zero_shape_is_template() {
        let model = demo_body_model();
        let out = forward(&model, &ShapeCoeffs::default(), &PoseState::default());
        for (a, b) in out.vertices.iter().zip(&model.template_vertices) {
            assert_relative_eq!(a, b, epsilon = 1e-12);
        }
        let j = model.rest_joints(&ShapeCoeffs::default());
        for (a, b) in out.joints.iter().zip(&j) {
            assert_relative_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn global_rotation_is_rigid() {
        let model = demo_body_model();
        let rest = forward(&model, &ShapeCoeffs::default(), &PoseState::default());
        let mut pose = PoseState::default();
        pose.global_orient = Vec3::new(0.4, -0.3, 0.9);
        let out = forward(&model, &ShapeCoeffs::default(), &pose);
        let r = rotation_from_axis_angle(&pose.global_orient);
        let root = rest.joints[0];
        for (a, b) in out.vertices.iter().zip(&rest.vertices) {
            let expect = r * (b - root) + root;
            assert_relative_eq!(a, &expect, epsilon = 1e-9);
        }
        // pairwise distances preserved
        let mut rng = StdRng::seed_from_u64(7);
        for _ in 0..50 {
            let i = rng.gen_range(0..rest.vertices.len());
            let j = rng.gen_range(0..rest.vertices.len());
            let d0 = (rest.vertices[i] - rest.vertices[j]).norm();
            let d1 = (out.vertices[i] - out.vertices[j]).norm();
            assert!((d0 - d1).abs() < 1e-6);
        }
    }

    #[test]
    fn unit_beta_adds_first_shape_column() {
        let model = demo_body_model();
        let mut shape = ShapeCoeffs::default();
        shape.beta[0] = 1.0;
        let out = forward(&model, &shape, &PoseState::default());
        for (vi, v) in out.vertices.iter().enumerate() {
            for c in 0..3 {
                let expect = model.template_vertices[vi][c]
                    + model.shape_dirs[(vi * 3 + c) * NUM_SHAPE_COEFFS];
                assert_relative_eq!(v[c], expect, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn graph_forward_matches_plain() {
        let model = demo_body_model();
        let mut rng = StdRng::seed_from_u64(12);
        let pose = random_pose(&mut rng, 0.6);
        let mut shape = ShapeCoeffs::default();
        for b in &mut shape.beta {
            *b = rng.gen_range(-1.5..1.5);
        }
        let plain = forward(&model, &shape, &pose);

        let g = Graph::new();
        let beta = g.constant(Tensor::new(vec![NUM_SHAPE_COEFFS, 1], shape.beta.to_vec()));
        let pose_rows = Tensor::new(
            vec![NUM_JOINTS, 3],
            pose.full_pose_rows().concat(),
        );
        let pv = g.constant(pose_rows);
        let out = forward_graph(&g, &model, beta, pv, true);
        let verts = out.vertices.unwrap().value();
        let joints = out.joints.value();
        for (vi, v) in plain.vertices.iter().enumerate() {
            for c in 0..3 {
                assert_relative_eq!(verts.data[vi * 3 + c], v[c], epsilon = 1e-10);
            }
        }
        for (ji, j) in plain.joints.iter().enumerate() {
            for c in 0..3 {
                assert_relative_eq!(joints.data[ji * 3 + c], j[c], epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn lbs_gradients_match_finite_differences() {
        let model = demo_body_model();
        let mut rng = StdRng::seed_from_u64(99);
        let pose = random_pose(&mut rng, 0.4);
        let beta0 = Tensor::new(vec![NUM_SHAPE_COEFFS, 1], (0..10).map(|_| rng.gen_range(-1.0..1.0)).collect());
        let pose0 = Tensor::new(vec![NUM_JOINTS, 3], pose.full_pose_rows().concat());

        // random projection of the vertices as the scalar output
        let nv = model.num_vertices();
        let probe = Tensor::new(vec![nv, 3], (0..nv * 3).map(|_| rng.gen_range(-1.0..1.0)).collect());

        // d(vertices)/d(beta)
        let probe_b = probe.clone();
        let pose_b = pose0.clone();
        let g = Graph::new();
        let beta = g.leaf(beta0.clone());
        let pv = g.constant(pose_b.clone());
        let out = forward_graph(&g, &model, beta, pv, true);
        let loss = out.vertices.unwrap().mul(g.constant(probe_b.clone())).sum();
        let analytic = g.backward(loss).of(beta);
        let numeric = finite_difference(&beta0, |g, b| {
            let pv = g.constant(pose_b.clone());
            let out = forward_graph(g, &model, b, pv, true);
            out.vertices.unwrap().mul(g.constant(probe_b.clone())).sum().value().item()
        }, 1e-4);
        for i in 0..10 {
            let (a, n) = (analytic.data[i], numeric.data[i]);
            let rel = (a - n).abs() / a.abs().max(n.abs()).max(1e-8);
            assert!(rel < 1e-3, "beta grad {i}: {a} vs {n}");
        }

        // d(vertices)/d(pose) on 20 random coordinates
        let g = Graph::new();
        let beta = g.constant(beta0.clone());
        let pv = g.leaf(pose0.clone());
        let out = forward_graph(&g, &model, beta, pv, true);
        let loss = out.vertices.unwrap().mul(g.constant(probe.clone())).sum();
        let analytic = g.backward(loss).of(pv);
        let numeric = finite_difference(&pose0, |g, p| {
            let beta = g.constant(beta0.clone());
            let out = forward_graph(g, &model, beta, p, true);
            out.vertices.unwrap().mul(g.constant(probe.clone())).sum().value().item()
        }, 1e-4);
        let entries: Vec<usize> = (0..20).map(|_| rng.gen_range(0..NUM_JOINTS * 3)).collect();
        let worst = crate::diff::max_relative_error(&analytic, &numeric, &entries);
        assert!(worst < 1e-3, "pose grad rel err {worst}");
    }

    #[test]
    fn archive_round_trip_and_errors() {
        let model = demo_body_model();
        let dir = tempfile::tempdir().unwrap();
        let arch = body_model_to_archive(&model);
        arch.save_dir_dtype(dir.path(), "f64").unwrap();
        let loaded = load_body_model(dir.path()).unwrap();
        assert_eq!(loaded.num_vertices(), model.num_vertices());

        // identical forward after load (loader renormalizes weights)
        let mut rng = StdRng::seed_from_u64(3);
        let pose = random_pose(&mut rng, 0.5);
        let a = forward(&model, &ShapeCoeffs::default(), &pose);
        let b = forward(&loaded, &ShapeCoeffs::default(), &pose);
        for (x, y) in a.vertices.iter().zip(&b.vertices) {
            assert_relative_eq!(x, y, epsilon = 1e-6);
        }

        // missing array names the offender
        let missing = tempfile::tempdir().unwrap();
        let mut partial = body_model_to_archive(&model);
        partial.remove("joint_regressor");
        partial.save_dir_dtype(missing.path(), "f64").unwrap();
        match load_body_model(missing.path()) {
            Err(Error::Load(msg)) => assert!(msg.contains("joint_regressor"), "{msg}"),
            other => panic!("expected load error, got {other:?}"),
        }
    }

    #[test]
    fn skin_weight_partition_of_unity_after_load() {
        let model = demo_body_model();
        let dir = tempfile::tempdir().unwrap();

        // perturb weights within the loader tolerance
        let mut arch = body_model_to_archive(&model);
        let (shape, data) = arch.get("skin_weights").unwrap();
        let shape = shape.to_vec();
        let mut data = data.to_vec();
        for v in &mut data {
            *v *= 1.0 + 5e-4;
        }
        arch.insert("skin_weights", shape, data);
        arch.save_dir_dtype(dir.path(), "f64").unwrap();
        let loaded = load_body_model(dir.path()).unwrap();
        for row in loaded.skin_weights.chunks_exact(NUM_JOINTS) {
            let s: f64 = row.iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
            assert!(row.iter().all(|&w| w >= 0.0));
        }

        // beyond tolerance is a load error
        let dir2 = tempfile::tempdir().unwrap();
        let mut arch = body_model_to_archive(&model);
        let (shape, data) = arch.get("skin_weights").unwrap();
        let shape = shape.to_vec();
        let mut data = data.to_vec();
        data[0] += 0.5;
        arch.insert("skin_weights", shape, data);
        arch.save_dir_dtype(dir2.path(), "f64").unwrap();
        assert!(matches!(load_body_model(dir2.path()), Err(Error::Load(_))));
    }

    #[test]
    fn raw_prior_is_identity_and_deterministic() {
        let mut pose = PoseState::default();
        pose.body_pose[5] = Vec3::new(0.2, -0.1, 0.7);
        let out = decode_pose(&PosePrior::Raw, &pose, None).unwrap();
        assert_eq!(out.body_pose[5], pose.body_pose[5]);
    }

    fn synthetic_decoder(head: DecoderHead, seed: u64) -> PoseDecoder {
        let mut rng = StdRng::seed_from_u64(seed);
        let out_dim = match head {
            DecoderHead::AxisAngle => 69,
            DecoderHead::Rot6d21 => 126,
        };
        let dims = [LATENT_DIM, 64, 64, out_dim];
        let mut layers = Vec::new();
        for w in dims.windows(2) {
            let (i, o) = (w[0], w[1]);
            let scale = (1.0 / i as f64).sqrt() * 0.5;
            layers.push((
                Tensor::new(vec![o, i], (0..o * i).map(|_| rng.gen_range(-scale..scale)).collect()),
                Tensor::new(vec![o], (0..o).map(|_| rng.gen_range(-0.05..0.05)).collect()),
            ));
        }
        PoseDecoder {
            layers,
            head,
            leaky_slope: 0.01,
        }
    }

    #[test]
    fn latent_decoder_zero_gives_bias_pose() {
        let dec = synthetic_decoder(DecoderHead::AxisAngle, 4);
        // expected: forward the network by hand at zero latent
        let mut x = vec![0.0; LATENT_DIM];
        for (i, (w, b)) in dec.layers.iter().enumerate() {
            let mut y = vec![0.0; w.rows()];
            for r in 0..w.rows() {
                let mut acc = b.data[r];
                for c in 0..w.cols() {
                    acc += w.data[r * w.cols() + c] * x[c];
                }
                y[r] = acc;
            }
            if i + 1 < dec.layers.len() {
                for v in &mut y {
                    if *v < 0.0 {
                        *v *= dec.leaky_slope;
                    }
                }
            }
            x = y;
        }
        let prior = PosePrior::Latent(dec);
        let out = decode_pose(&prior, &PoseState::default(), Some(&vec![0.0; LATENT_DIM])).unwrap();
        assert_eq!(out.body_pose.len(), NUM_BODY_JOINTS);
        let flat = out.flat_body_pose();
        for (a, b) in flat.iter().zip(&x) {
            assert_relative_eq!(a, b, epsilon = 1e-12);
        }
        // determinism
        let out2 = decode_pose(&prior, &PoseState::default(), Some(&vec![0.0; LATENT_DIM])).unwrap();
        assert_eq!(out.flat_body_pose(), out2.flat_body_pose());
    }

    #[test]
    fn rot6d_decoder_produces_valid_pose_and_gradients() {
        let dec = synthetic_decoder(DecoderHead::Rot6d21, 11);
        let mut rng = StdRng::seed_from_u64(5);
        let latent: Vec<f64> = (0..LATENT_DIM).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let pose = dec.decode(&latent);
        assert_eq!(pose.body_pose.len(), 23);
        // hands are identity-padded
        assert_eq!(pose.body_pose[21], Vec3::zeros());
        assert_eq!(pose.body_pose[22], Vec3::zeros());
        assert!(pose.body_pose.iter().all(|v| v.norm() < std::f64::consts::PI + 1e-6));

        // decoder archive round trip
        let dir = tempfile::tempdir().unwrap();
        save_pose_decoder(&dec, dir.path()).unwrap();
        let back = load_pose_decoder(dir.path()).unwrap();
        let pose2 = back.decode(&latent);
        assert_eq!(pose.flat_body_pose(), pose2.flat_body_pose());

        // differentiable in the latent
        let l0 = Tensor::new(vec![1, LATENT_DIM], latent.clone());
        let probe: Vec<f64> = (0..69).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let g = Graph::new();
        let lv = g.leaf(l0.clone());
        let out = dec.decode_graph(&g, lv);
        let loss = out.mul(g.constant(Tensor::new(vec![1, 69], probe.clone()))).sum();
        let analytic = g.backward(loss).of(lv);
        let numeric = finite_difference(&l0, |g, lv| {
            dec.decode_graph(g, lv)
                .mul(g.constant(Tensor::new(vec![1, 69], probe.clone())))
                .sum()
                .value()
                .item()
        }, 1e-5);
        let entries: Vec<usize> = (0..LATENT_DIM).collect();
        let worst = crate::diff::max_relative_error(&analytic, &numeric, &entries);
        assert!(worst < 1e-3, "latent grad rel err {worst}");
    }
}
