//! Synthetic oracle: a procedural humanoid body model, scripted pose
//! sequences, and a generator that renders ground-truth observation data
//! (landmarks, silhouettes, dense features) in exactly the formats the
//! ingest module consumes. Everything is deterministic given the seed.

use nalgebra::Vector3;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::body::{
    forward, BodyModel, PoseState, ShapeCoeffs, JOINT_NAMES, KINEMATIC_PARENTS, NUM_BODY_JOINTS,
    NUM_JOINTS, NUM_SHAPE_COEFFS, POSE_FEATURE_DIM,
};
use crate::geom::{slerp_axis_angle, Vec3};
use crate::{Error, Result};

// ---------------------------------------------------------------------------
// procedural humanoid
// ---------------------------------------------------------------------------

/// Template joint centers (meters, y up, facing +z, left = +x).
fn joint_centers() -> [Vec3; NUM_JOINTS] {
    [
        Vector3::new(0.00, 0.95, 0.0),  // pelvis
        Vector3::new(0.09, 0.90, 0.0),  // left_hip
        Vector3::new(-0.09, 0.90, 0.0), // right_hip
        Vector3::new(0.00, 1.06, 0.0),  // spine1
        Vector3::new(0.10, 0.50, 0.0),  // left_knee
        Vector3::new(-0.10, 0.50, 0.0), // right_knee
        Vector3::new(0.00, 1.18, 0.0),  // spine2
        Vector3::new(0.11, 0.10, 0.0),  // left_ankle
        Vector3::new(-0.11, 0.10, 0.0), // right_ankle
        Vector3::new(0.00, 1.30, 0.0),  // spine3
        Vector3::new(0.11, 0.03, 0.13), // left_foot
        Vector3::new(-0.11, 0.03, 0.13), // right_foot
        Vector3::new(0.00, 1.45, 0.0),  // neck
        Vector3::new(0.07, 1.40, 0.0),  // left_collar
        Vector3::new(-0.07, 1.40, 0.0), // right_collar
        Vector3::new(0.00, 1.56, 0.0),  // head
        Vector3::new(0.18, 1.42, 0.0),  // left_shoulder
        Vector3::new(-0.18, 1.42, 0.0), // right_shoulder
        Vector3::new(0.44, 1.42, 0.0),  // left_elbow
        Vector3::new(-0.44, 1.42, 0.0), // right_elbow
        Vector3::new(0.68, 1.42, 0.0),  // left_wrist
        Vector3::new(-0.68, 1.42, 0.0), // right_wrist
        Vector3::new(0.76, 1.42, 0.0),  // left_hand
        Vector3::new(-0.76, 1.42, 0.0), // right_hand
    ]
}

struct Segment {
    /// Driving joint.
    from: usize,
    /// Far joint blended toward near the end; `from` again for leaf caps.
    to: usize,
    a: Vec3,
    b: Vec3,
    r0: f64,
    r1: f64,
    /// Record a regressor ring at `a` / `b` for these joints.
    ring_a: Option<usize>,
    ring_b: Option<usize>,
    /// Blend the start of the segment toward the parent of `from`.
    near_blend: bool,
}

const RING_N: usize = 8;

struct BuildState {
    vertices: Vec<Vec3>,
    faces: Vec<[usize; 3]>,
    /// (joint, vertex index) pairs for the regressor rings.
    rings: Vec<(usize, usize)>,
    /// per-vertex (joint, weight) list
    weights: Vec<Vec<(usize, f64)>>,
}

fn smoothstep(x: f64) -> f64 {
    let t = x.clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

fn orthonormal_frame(axis: &Vec3) -> (Vec3, Vec3) {
    let helper = if axis.x.abs() < 0.9 {
        Vec3::new(1.0, 0.0, 0.0)
    } else {
        Vec3::new(0.0, 1.0, 0.0)
    };
    let u = axis.cross(&helper).normalize();
    let v = axis.cross(&u).normalize();
    (u, v)
}

fn segment_weights(seg: &Segment, t: f64) -> Vec<(usize, f64)> {
    let mut w = Vec::with_capacity(3);
    let mut w_from = 1.0;
    if seg.to != seg.from {
        let far = 0.5 * smoothstep((t - 0.7) / 0.3);
        if far > 0.0 {
            w.push((seg.to, far));
            w_from -= far;
        }
    }
    if seg.near_blend {
        let parent = KINEMATIC_PARENTS[seg.from];
        if parent >= 0 {
            let near = 0.5 * smoothstep((0.3 - t) / 0.3);
            if near > 0.0 {
                w.push((parent as usize, near));
                w_from -= near;
            }
        }
    }
    w.push((seg.from, w_from));
    w
}

fn emit_capsule(state: &mut BuildState, seg: &Segment) {
    let axis_vec = seg.b - seg.a;
    let len = axis_vec.norm();
    let axis = if len > 1e-12 {
        axis_vec / len
    } else {
        Vec3::new(0.0, 1.0, 0.0)
    };
    let (u, v) = orthonormal_frame(&axis);

    let n_stations = ((len / 0.09).ceil() as usize).clamp(1, 6);
    let mut ring_starts = Vec::new();

    // body rings from t = 0 to t = 1
    for s in 0..=n_stations {
        let t = s as f64 / n_stations as f64;
        let center = seg.a + axis_vec * t;
        let r = seg.r0 + (seg.r1 - seg.r0) * t;
        let start = state.vertices.len();
        ring_starts.push((start, t));
        for k in 0..RING_N {
            let phi = 2.0 * std::f64::consts::PI * k as f64 / RING_N as f64;
            state.vertices.push(center + r * (phi.cos() * u + phi.sin() * v));
            state.weights.push(segment_weights(seg, t));
        }
        if s == 0 {
            if let Some(j) = seg.ring_a {
                for k in 0..RING_N {
                    state.rings.push((j, start + k));
                }
            }
        }
        if s == n_stations {
            if let Some(j) = seg.ring_b {
                for k in 0..RING_N {
                    state.rings.push((j, start + k));
                }
            }
        }
    }

    // hemispherical caps: two rings on the hemisphere profile plus an apex
    let cap = |state: &mut BuildState, center: Vec3, r: f64, dir: Vec3, t: f64| -> (Vec<usize>, usize) {
        let mut rings = Vec::new();
        for angle_deg in [30.0f64, 60.0] {
            let a = angle_deg.to_radians();
            let ring_start = state.vertices.len();
            rings.push(ring_start);
            let (offset, cr) = (r * a.sin(), r * a.cos());
            for k in 0..RING_N {
                let phi = 2.0 * std::f64::consts::PI * k as f64 / RING_N as f64;
                state
                    .vertices
                    .push(center + dir * offset + cr * (phi.cos() * u + phi.sin() * v));
                state.weights.push(segment_weights(seg, t));
            }
        }
        let apex = state.vertices.len();
        state.vertices.push(center + dir * r);
        state.weights.push(segment_weights(seg, t));
        (rings, apex)
    };
    let (cap_a_rings, cap_a_apex) = cap(state, seg.a, seg.r0, -axis, 0.0);
    let (cap_b_rings, cap_b_apex) = cap(state, seg.b, seg.r1, axis, 1.0);

    // connect consecutive rings with outward-facing quads; ring order is ccw
    // in the (u, v, axis) right-handed frame, so this winding faces outward
    let strip = |state: &mut BuildState, r0: usize, r1: usize| {
        for k in 0..RING_N {
            let k1 = (k + 1) % RING_N;
            let (a, b, c, d) = (r0 + k, r0 + k1, r1 + k1, r1 + k);
            state.faces.push([a, b, c]);
            state.faces.push([a, c, d]);
        }
    };
    for w in ring_starts.windows(2) {
        strip(state, w[0].0, w[1].0);
    }
    // cap rings march outward from the body: 30 deg, then 60 deg, then apex
    strip(state, cap_a_rings[1], cap_a_rings[0]);
    strip(state, cap_a_rings[0], ring_starts[0].0);
    strip(state, ring_starts[n_stations].0, cap_b_rings[0]);
    strip(state, cap_b_rings[0], cap_b_rings[1]);
    let fan = |state: &mut BuildState, ring: usize, apex: usize, flip: bool| {
        for k in 0..RING_N {
            let k1 = (k + 1) % RING_N;
            if flip {
                state.faces.push([ring + k, apex, ring + k1]);
            } else {
                state.faces.push([ring + k, ring + k1, apex]);
            }
        }
    };
    fan(state, cap_a_rings[1], cap_a_apex, true);
    fan(state, cap_b_rings[1], cap_b_apex, false);
}

/// Procedural low-poly humanoid in the standard 24-joint layout. Joint
/// regressor rows are uniform over a vertex ring centered exactly on each
/// joint, so regressed rest joints are exact.
pub fn demo_body_model() -> BodyModel {
    let j = joint_centers();
    let up = Vec3::new(0.0, 1.0, 0.0);
    let fwd = Vec3::new(0.0, 0.0, 1.0);
    let seg = |from: usize, to: usize, r0: f64, r1: f64, ring_a, ring_b, near_blend| Segment {
        from,
        to,
        a: j[from],
        b: j[to],
        r0,
        r1,
        ring_a,
        ring_b,
        near_blend,
    };

    let mut segments = vec![
        // pelvis block between the hips
        Segment {
            from: 0,
            to: 0,
            a: j[1],
            b: j[2],
            r0: 0.095,
            r1: 0.095,
            ring_a: Some(1),
            ring_b: Some(2),
            near_blend: false,
        },
        // spine column
        seg(0, 3, 0.11, 0.115, Some(0), Some(3), false),
        seg(3, 6, 0.115, 0.12, None, Some(6), true),
        seg(6, 9, 0.12, 0.105, None, Some(9), true),
        seg(9, 12, 0.095, 0.045, None, Some(12), true),
        seg(12, 15, 0.042, 0.045, None, Some(15), true),
        // head blob
        Segment {
            from: 15,
            to: 15,
            a: j[15],
            b: j[15] + up * 0.11,
            r0: 0.085,
            r1: 0.075,
            ring_a: None,
            ring_b: None,
            near_blend: true,
        },
        // collars and arms
        seg(9, 13, 0.05, 0.05, None, Some(13), false),
        seg(9, 14, 0.05, 0.05, None, Some(14), false),
        seg(13, 16, 0.05, 0.046, None, Some(16), true),
        seg(14, 17, 0.05, 0.046, None, Some(17), true),
        seg(16, 18, 0.044, 0.038, None, Some(18), true),
        seg(17, 19, 0.044, 0.038, None, Some(19), true),
        seg(18, 20, 0.036, 0.031, None, Some(20), true),
        seg(19, 21, 0.036, 0.031, None, Some(21), true),
        seg(20, 22, 0.03, 0.027, None, Some(22), true),
        seg(21, 23, 0.03, 0.027, None, Some(23), true),
        // legs
        seg(1, 4, 0.07, 0.052, None, Some(4), true),
        seg(2, 5, 0.07, 0.052, None, Some(5), true),
        seg(4, 7, 0.05, 0.04, None, Some(7), true),
        seg(5, 8, 0.05, 0.04, None, Some(8), true),
        seg(7, 10, 0.042, 0.036, None, Some(10), true),
        seg(8, 11, 0.042, 0.036, None, Some(11), true),
    ];
    // toe caps
    segments.push(Segment {
        from: 10,
        to: 10,
        a: j[10],
        b: j[10] + fwd * 0.05,
        r0: 0.034,
        r1: 0.03,
        ring_a: None,
        ring_b: None,
        near_blend: true,
    });
    segments.push(Segment {
        from: 11,
        to: 11,
        a: j[11],
        b: j[11] + fwd * 0.05,
        r0: 0.034,
        r1: 0.03,
        ring_a: None,
        ring_b: None,
        near_blend: true,
    });
    // hand tips
    segments.push(Segment {
        from: 22,
        to: 22,
        a: j[22],
        b: j[22] + Vec3::new(0.05, 0.0, 0.0),
        r0: 0.026,
        r1: 0.02,
        ring_a: None,
        ring_b: None,
        near_blend: true,
    });
    segments.push(Segment {
        from: 23,
        to: 23,
        a: j[23],
        b: j[23] - Vec3::new(0.05, 0.0, 0.0),
        r0: 0.026,
        r1: 0.02,
        ring_a: None,
        ring_b: None,
        near_blend: true,
    });

    let mut state = BuildState {
        vertices: Vec::new(),
        faces: Vec::new(),
        rings: Vec::new(),
        weights: Vec::new(),
    };
    for s in &segments {
        emit_capsule(&mut state, s);
    }

    let nv = state.vertices.len();

    // joint regressor: uniform over each joint's ring
    let mut joint_regressor = vec![0.0; NUM_JOINTS * nv];
    let mut counts = [0usize; NUM_JOINTS];
    for &(joint, _) in &state.rings {
        counts[joint] += 1;
    }
    for &(joint, vi) in &state.rings {
        joint_regressor[joint * nv + vi] = 1.0 / counts[joint] as f64;
    }
    assert!(counts.iter().all(|&c| c > 0), "every joint needs a ring");

    // skin weights
    let mut skin_weights = vec![0.0; nv * NUM_JOINTS];
    for (vi, ws) in state.weights.iter().enumerate() {
        let total: f64 = ws.iter().map(|(_, w)| w).sum();
        for &(joint, w) in ws {
            skin_weights[vi * NUM_JOINTS + joint] += w / total;
        }
    }

    // smooth analytic shape directions; joints follow through the regressor
    let mut shape_dirs = vec![0.0; nv * 3 * NUM_SHAPE_COEFFS];
    for (vi, p) in state.vertices.iter().enumerate() {
        let (x, y, z) = (p.x, p.y, p.z);
        let gauss = |c: f64, s: f64| (-((y - c) / s).powi(2)).exp();
        let modes: [[f64; 3]; NUM_SHAPE_COEFFS] = [
            [0.0, 0.12 * (y - 0.95), 0.0],
            [0.08 * x, 0.0, 0.08 * z],
            [0.08 * x * gauss(1.15, 0.25), 0.0, 0.08 * z * gauss(1.15, 0.25)],
            [0.05 * x * gauss(1.02, 0.15), 0.0, 0.08 * z * gauss(1.02, 0.15)],
            [
                0.08 * x * gauss(1.6, 0.12),
                0.08 * (y - 1.6) * gauss(1.6, 0.12),
                0.08 * z * gauss(1.6, 0.12),
            ],
            [0.0, -0.12 * smoothstep((0.95 - y) / 0.85), 0.0],
            [
                0.12 * x.signum() * smoothstep((x.abs() - 0.18) / 0.1) * gauss(1.42, 0.1),
                0.0,
                0.0,
            ],
            [
                0.06 * x.signum() * smoothstep((x.abs() - 0.05) / 0.1) * gauss(1.41, 0.08),
                0.0,
                0.0,
            ],
            [0.0, 0.1 * smoothstep((y - 0.95) / 0.5), 0.0],
            [
                0.02 * (6.0 * y).sin(),
                0.0,
                0.02 * (5.0 * y).cos(),
            ],
        ];
        for c in 0..3 {
            for (k, m) in modes.iter().enumerate() {
                shape_dirs[(vi * 3 + c) * NUM_SHAPE_COEFFS + k] = m[c];
            }
        }
    }

    BodyModel {
        template_vertices: state.vertices,
        faces: state.faces,
        shape_dirs,
        pose_dirs: vec![0.0; nv * 3 * POSE_FEATURE_DIM],
        joint_regressor,
        skin_weights,
        kinematic_parents: KINEMATIC_PARENTS,
        pose_dirs_all_zero: true,
    }
}

// ---------------------------------------------------------------------------
// pose scripts
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PoseKey {
    /// Phase in [0, 1] over the sequence.
    pub phase: f64,
    /// Sparse joint rotations by name, axis-angle radians.
    #[serde(default)]
    pub pose: std::collections::BTreeMap<String, [f64; 3]>,
    #[serde(default)]
    pub trans: [f64; 3],
    #[serde(default)]
    pub rot: [f64; 3],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PoseScript {
    pub name: String,
    pub keys: Vec<PoseKey>,
}

impl PoseScript {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Load(format!("bad pose script: {e}")))
    }

    pub fn builtin(name: &str) -> Result<Self> {
        let text = match name {
            "wave" => include_str!("scripts/wave.json"),
            "squat" => include_str!("scripts/squat.json"),
            "walk-in-place" => include_str!("scripts/walk_in_place.json"),
            other => {
                return Err(Error::Config(format!(
                    "unknown pose script '{other}' (builtins: wave, squat, walk-in-place)"
                )))
            }
        };
        Self::from_json(text)
    }

    fn joint_index(name: &str) -> Option<usize> {
        JOINT_NAMES.iter().position(|&n| n == name)
    }

    /// Evaluate the script at a phase in [0, 1] with per-joint spherical
    /// interpolation between bracketing keys.
    pub fn sample(&self, phase: f64) -> Result<(PoseState, Vec3, Vec3)> {
        if self.keys.is_empty() {
            return Err(Error::Invalid("pose script has no keys".into()));
        }
        let phase = phase.clamp(0.0, 1.0);
        let mut lo = &self.keys[0];
        let mut hi = &self.keys[self.keys.len() - 1];
        for w in self.keys.windows(2) {
            if phase >= w[0].phase && phase <= w[1].phase {
                lo = &w[0];
                hi = &w[1];
                break;
            }
        }
        let span = (hi.phase - lo.phase).max(1e-12);
        let t = ((phase - lo.phase) / span).clamp(0.0, 1.0);

        let key_pose = |key: &PoseKey| -> Result<Vec<Vec3>> {
            let mut rows = vec![Vec3::zeros(); NUM_BODY_JOINTS];
            for (name, aa) in &key.pose {
                let ji = Self::joint_index(name)
                    .ok_or_else(|| Error::Config(format!("unknown joint '{name}' in script")))?;
                if ji == 0 {
                    return Err(Error::Config(
                        "scripts drive the root through 'rot', not joint 'pelvis'".into(),
                    ));
                }
                rows[ji - 1] = Vec3::new(aa[0], aa[1], aa[2]);
            }
            Ok(rows)
        };
        let pa = key_pose(lo)?;
        let pb = key_pose(hi)?;
        let mut pose = PoseState::default();
        for ji in 0..NUM_BODY_JOINTS {
            pose.body_pose[ji] = slerp_axis_angle(&pa[ji], &pb[ji], t);
        }
        let lerp3 = |a: [f64; 3], b: [f64; 3]| {
            Vec3::new(
                a[0] + (b[0] - a[0]) * t,
                a[1] + (b[1] - a[1]) * t,
                a[2] + (b[2] - a[2]) * t,
            )
        };
        let trans = lerp3(lo.trans, hi.trans);
        let rot = slerp_axis_angle(
            &Vec3::new(lo.rot[0], lo.rot[1], lo.rot[2]),
            &Vec3::new(hi.rot[0], hi.rot[1], hi.rot[2]),
            t,
        );
        Ok((pose, trans, rot))
    }
}

// ---------------------------------------------------------------------------
// synthesis spec
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NoiseLevels {
    /// Landmark noise in pixels (std dev).
    pub landmark_px: f64,
    /// Per-pixel silhouette flip probability.
    pub silhouette_flip: f64,
    /// Additive feature noise (std dev).
    pub feature: f64,
}

impl Default for NoiseLevels {
    fn default() -> Self {
        NoiseLevels {
            landmark_px: 0.0,
            silhouette_flip: 0.0,
            feature: 0.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthSpec {
    pub frames: usize,
    pub resolution: (usize, usize),
    /// Feature-map resolution (h, w); defaults to resolution / 8.
    pub feature_resolution: Option<(usize, usize)>,
    pub script: String,
    pub beta: [f64; NUM_SHAPE_COEFFS],
    pub noise: NoiseLevels,
    pub seed: u64,
    /// Camera distance from the normalized mesh.
    pub camera_radius: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            frames: 60,
            resolution: (384, 640),
            feature_resolution: None,
            script: "wave".into(),
            beta: [0.0; NUM_SHAPE_COEFFS],
            noise: NoiseLevels::default(),
            seed: 7,
            camera_radius: 2.2,
        }
    }
}

pub(crate) fn gaussian(rng: &mut StdRng) -> f64 {
    // Box-Muller
    let u1: f64 = rng.gen_range(1e-12..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Ground-truth motion driven through the body model.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    pub shape: ShapeCoeffs,
    pub scale: f64,
    pub poses: Vec<PoseState>,
    pub trans: Vec<Vec3>,
    pub rot: Vec<Vec3>,
    /// Posed joints per frame, in the normalized mesh space.
    pub joints: Vec<Vec<Vec3>>,
    /// Deformed mesh vertices per frame, normalized mesh space.
    pub vertices: Vec<Vec<Vec3>>,
}

/// Scripted body states before normalization: the raw model-space sequence.
pub fn scripted_states(
    spec: &SynthSpec,
    model: &BodyModel,
) -> Result<(Vec<PoseState>, Vec<Vec3>, Vec<Vec3>, Vec<crate::body::PosedBody>)> {
    if spec.frames == 0 {
        return Err(Error::Invalid("frame count must be >= 1".into()));
    }
    let script = PoseScript::builtin(&spec.script)
        .or_else(|_| PoseScript::from_json(&spec.script))?;
    if script.keys.is_empty() {
        return Err(Error::Invalid("pose script has no keys".into()));
    }
    let shape = ShapeCoeffs::new(spec.beta);
    let mut poses = Vec::with_capacity(spec.frames);
    let mut trans = Vec::with_capacity(spec.frames);
    let mut rots = Vec::with_capacity(spec.frames);
    let mut bodies = Vec::with_capacity(spec.frames);
    for f in 0..spec.frames {
        let phase = if spec.frames == 1 {
            0.0
        } else {
            f as f64 / (spec.frames - 1) as f64
        };
        let (pose, t, r) = script.sample(phase)?;
        let body = forward(model, &shape, &pose);
        poses.push(pose);
        trans.push(t);
        rots.push(r);
        bodies.push(body);
    }
    Ok((poses, trans, rots, bodies))
}

#[cfg(test)]
mod builder_tests {
    use super::*;
    use crate::body::{forward, ShapeCoeffs};

    #[test]
    fn demo_model_is_well_formed() {
        let model = demo_body_model();
        let nv = model.num_vertices();
        assert!(nv > 300, "got {nv} vertices");
        assert!(model.faces.len() > 600);
        for f in &model.faces {
            assert!(f.iter().all(|&v| v < nv));
        }
        for row in model.skin_weights.chunks_exact(NUM_JOINTS) {
            let s: f64 = row.iter().sum();
            assert!((s - 1.0).abs() < 1e-9);
            assert!(row.iter().all(|&w| w >= 0.0));
        }
        // regressed joints hit the intended centers exactly
        let rest = model.rest_joints(&ShapeCoeffs::default());
        let expected = joint_centers();
        for (a, b) in rest.iter().zip(&expected) {
            assert!((a - b).norm() < 1e-9, "{a:?} vs {b:?}");
        }
    }

    #[test]
    fn bent_elbow_moves_forearm_only() {
        let model = demo_body_model();
        let rest = forward(&model, &ShapeCoeffs::default(), &PoseState::default());
        let mut pose = PoseState::default();
        // left elbow, joint 18 -> body index 17; bend about z
        pose.body_pose[17] = Vec3::new(0.0, 0.0, 1.0);
        let bent = forward(&model, &ShapeCoeffs::default(), &pose);
        // left wrist moved
        let wrist_shift = (bent.joints[20] - rest.joints[20]).norm();
        assert!(wrist_shift > 0.05, "wrist moved {wrist_shift}");
        // right side untouched
        let rwrist_shift = (bent.joints[21] - rest.joints[21]).norm();
        assert!(rwrist_shift < 1e-12);
        // pelvis untouched
        assert!((bent.joints[0] - rest.joints[0]).norm() < 1e-12);
    }

    #[test]
    fn scripts_parse_and_sample() {
        for name in ["wave", "squat", "walk-in-place"] {
            let script = PoseScript::builtin(name).unwrap();
            let (pose, _t, _r) = script.sample(0.5).unwrap();
            assert_eq!(pose.body_pose.len(), NUM_BODY_JOINTS);
        }
        assert!(PoseScript::builtin("nope").is_err());
    }

    #[test]
    fn faces_wind_outward() {
        // every capsule is closed, so the divergence-theorem volume of the
        // whole soup is the sum of capsule volumes: positive iff outward
        let model = demo_body_model();
        let mut vol = 0.0;
        for f in &model.faces {
            let a = model.template_vertices[f[0]];
            let b = model.template_vertices[f[1]];
            let c = model.template_vertices[f[2]];
            vol += a.dot(&b.cross(&c)) / 6.0;
        }
        assert!(vol > 0.02, "signed volume {vol} too small for a body");
        assert!(vol < 0.3, "signed volume {vol} implausibly large");
    }
}
