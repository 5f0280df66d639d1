//! Quantitative evaluation: Procrustes alignment, per-joint and per-vertex
//! position errors, and inter-frame acceleration error.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::geom::Vec3;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlignMode {
    None,
    Translation,
    Rigid,
    Similarity,
}

/// Similarity transform `x -> scale * R * x + t`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Alignment {
    pub scale: f64,
    pub rotation: [[f64; 3]; 3],
    pub translation: [f64; 3],
}

impl Alignment {
    pub fn identity() -> Self {
        Alignment {
            scale: 1.0,
            rotation: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            translation: [0.0; 3],
        }
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        Matrix3::from_fn(|r, c| self.rotation[r][c])
    }

    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.scale * (self.rotation_matrix() * p)
            + Vector3::new(self.translation[0], self.translation[1], self.translation[2])
    }
}

/// Least-squares alignment of `source` onto `target` in the requested class
/// (closed form via the cross-covariance SVD for rigid/similarity).
pub fn procrustes_align(source: &[Vec3], target: &[Vec3], mode: AlignMode) -> Result<Alignment> {
    if source.len() != target.len() {
        return Err(Error::Dimension(format!(
            "procrustes: {} source vs {} target points",
            source.len(),
            target.len()
        )));
    }
    if source.is_empty() {
        return Err(Error::Invalid("procrustes on empty point sets".into()));
    }
    let n = source.len() as f64;
    let ms: Vec3 = source.iter().sum::<Vec3>() / n;
    let mt: Vec3 = target.iter().sum::<Vec3>() / n;

    match mode {
        AlignMode::None => Ok(Alignment::identity()),
        AlignMode::Translation => {
            let t = mt - ms;
            Ok(Alignment {
                scale: 1.0,
                rotation: Alignment::identity().rotation,
                translation: [t.x, t.y, t.z],
            })
        }
        AlignMode::Rigid | AlignMode::Similarity => {
            if source.len() < 3 {
                return Err(Error::Invalid("rigid/similarity alignment needs >= 3 points".into()));
            }
            let mut cov = Matrix3::<f64>::zeros();
            let mut var_s = 0.0;
            for (s, t) in source.iter().zip(target) {
                let cs = s - ms;
                let ct = t - mt;
                cov += ct * cs.transpose();
                var_s += cs.norm_squared();
            }
            let svd = cov.svd(true, true);
            let u = svd.u.ok_or_else(|| Error::Numerical("svd failed".into()))?;
            let vt = svd.v_t.ok_or_else(|| Error::Numerical("svd failed".into()))?;
            // rank >= 2 needed to pin a rotation
            if svd.singular_values[1] < 1e-12 * svd.singular_values[0].max(1e-300) {
                return Err(Error::Invalid(
                    "degenerate point configuration (rank < 2) for rotation fitting".into(),
                ));
            }
            let mut d = Matrix3::identity();
            if (u * vt).determinant() < 0.0 {
                d[(2, 2)] = -1.0;
            }
            let r = u * d * vt;
            let scale = if mode == AlignMode::Similarity {
                let trace = (svd.singular_values[0]
                    + svd.singular_values[1]
                    + d[(2, 2)] * svd.singular_values[2])
                    .max(0.0);
                trace / var_s.max(1e-300)
            } else {
                1.0
            };
            let t = mt - scale * (r * ms);
            Ok(Alignment {
                scale,
                rotation: [
                    [r[(0, 0)], r[(0, 1)], r[(0, 2)]],
                    [r[(1, 0)], r[(1, 1)], r[(1, 2)]],
                    [r[(2, 0)], r[(2, 1)], r[(2, 2)]],
                ],
                translation: [t.x, t.y, t.z],
            })
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub mpjpe: f64,
    pub pve: f64,
    pub accel: f64,
    pub per_frame_mpjpe: Vec<f64>,
    pub per_frame_pve: Vec<f64>,
    /// Per valid frame (F - 2 entries).
    pub per_frame_accel: Vec<f64>,
    pub alignment: AlignMode,
}

fn check_shapes(pred: &[Vec<Vec3>], gt: &[Vec<Vec3>]) -> Result<()> {
    if pred.len() != gt.len() {
        return Err(Error::Dimension(format!(
            "{} predicted frames vs {} ground-truth frames",
            pred.len(),
            gt.len()
        )));
    }
    for (f, (p, g)) in pred.iter().zip(gt).enumerate() {
        if p.len() != g.len() {
            return Err(Error::Dimension(format!(
                "frame {f}: {} predicted points vs {}",
                p.len(),
                g.len()
            )));
        }
    }
    Ok(())
}

/// Mean Euclidean error per frame, after `align` is applied to predictions.
fn mean_errors(pred: &[Vec<Vec3>], gt: &[Vec<Vec3>], align: &Alignment) -> Vec<f64> {
    pred.iter()
        .zip(gt)
        .map(|(p, g)| {
            p.iter()
                .zip(g)
                .map(|(a, b)| (align.apply(a) - b).norm())
                .sum::<f64>()
                / p.len().max(1) as f64
        })
        .collect()
}

/// Mean per-joint position error over frames and joints.
pub fn mpjpe(pred_joints: &[Vec<Vec3>], gt_joints: &[Vec<Vec3>], align: &Alignment) -> Result<f64> {
    check_shapes(pred_joints, gt_joints)?;
    let per_frame = mean_errors(pred_joints, gt_joints, align);
    Ok(per_frame.iter().sum::<f64>() / per_frame.len().max(1) as f64)
}

/// Per-vertex error: same formula over vertices.
pub fn pve(pred_vertices: &[Vec<Vec3>], gt_vertices: &[Vec<Vec3>], align: &Alignment) -> Result<f64> {
    mpjpe(pred_vertices, gt_vertices, align)
}

/// Mean norm of the difference of second temporal differences, units per
/// frame squared.
pub fn accel_error(pred: &[Vec<Vec3>], gt: &[Vec<Vec3>], align: &Alignment) -> Result<f64> {
    check_shapes(pred, gt)?;
    let f = pred.len();
    if f < 3 {
        return Err(Error::Invalid(format!("acceleration error needs >= 3 frames, got {f}")));
    }
    let per = per_frame_accel(pred, gt, align);
    Ok(per.iter().sum::<f64>() / per.len() as f64)
}

fn per_frame_accel(pred: &[Vec<Vec3>], gt: &[Vec<Vec3>], align: &Alignment) -> Vec<f64> {
    let f = pred.len();
    let nj = pred[0].len().max(1);
    (1..f - 1)
        .map(|t| {
            let mut acc = 0.0;
            for j in 0..pred[t].len() {
                let ap = align.apply(&pred[t + 1][j]) - 2.0 * align.apply(&pred[t][j])
                    + align.apply(&pred[t - 1][j]);
                let ag = gt[t + 1][j] - 2.0 * gt[t][j] + gt[t - 1][j];
                acc += (ap - ag).norm();
            }
            acc / nj as f64
        })
        .collect()
}

/// Full evaluation: the alignment is fit on the first frame's joints and
/// applied to the whole sequence.
pub fn evaluate(
    pred_joints: &[Vec<Vec3>],
    gt_joints: &[Vec<Vec3>],
    pred_vertices: &[Vec<Vec3>],
    gt_vertices: &[Vec<Vec3>],
    mode: AlignMode,
) -> Result<EvalReport> {
    check_shapes(pred_joints, gt_joints)?;
    check_shapes(pred_vertices, gt_vertices)?;
    let align = procrustes_align(&pred_joints[0], &gt_joints[0], mode)?;
    let per_frame_mpjpe = mean_errors(pred_joints, gt_joints, &align);
    let per_frame_pve = mean_errors(pred_vertices, gt_vertices, &align);
    let pf_accel = if pred_joints.len() >= 3 {
        per_frame_accel(pred_joints, gt_joints, &align)
    } else {
        Vec::new()
    };
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len().max(1) as f64;
    Ok(EvalReport {
        mpjpe: mean(&per_frame_mpjpe),
        pve: mean(&per_frame_pve),
        accel: mean(&pf_accel),
        per_frame_mpjpe,
        per_frame_pve,
        per_frame_accel: pf_accel,
        alignment: mode,
    })
}

pub fn save_report(path: &std::path::Path, report: &EvalReport) -> Result<()> {
    let json = serde_json::to_string_pretty(report).expect("report serializes");
    std::fs::write(path, json).map_err(|e| Error::io(path, e))
}

pub fn save_report_csv(path: &std::path::Path, report: &EvalReport) -> Result<()> {
    let mut s = String::from("frame,mpjpe,pve,accel\n");
    for (t, (m, p)) in report
        .per_frame_mpjpe
        .iter()
        .zip(&report.per_frame_pve)
        .enumerate()
    {
        let a = if t >= 1 && t - 1 < report.per_frame_accel.len() {
            format!("{}", report.per_frame_accel[t - 1])
        } else {
            String::new()
        };
        s.push_str(&format!("{t},{m},{p},{a}\n"));
    }
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn random_points(rng: &mut StdRng, n: usize) -> Vec<Vec3> {
        (0..n)
            .map(|_| {
                Vec3::new(
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                )
            })
            .collect()
    }

    #[test]
    fn procrustes_identity_translation_similarity() {
        let mut rng = StdRng::seed_from_u64(2);
        let pts = random_points(&mut rng, 12);

        // target = source: identity
        let a = procrustes_align(&pts, &pts, AlignMode::Similarity).unwrap();
        assert_relative_eq!(a.scale, 1.0, epsilon = 1e-9);
        for p in &pts {
            assert_relative_eq!(a.apply(p), *p, epsilon = 1e-9);
        }

        // translation mode returns mean difference exactly
        let t = Vec3::new(0.3, -0.7, 0.2);
        let target: Vec<Vec3> = pts.iter().map(|p| p + t).collect();
        let a = procrustes_align(&pts, &target, AlignMode::Translation).unwrap();
        assert_relative_eq!(Vec3::from_row_slice(&a.translation), t, epsilon = 1e-12);

        // similarity recovers a known transform
        let r = crate::geom::rotation_from_axis_angle(&Vec3::new(0.5, -0.2, 0.8));
        let target: Vec<Vec3> = pts.iter().map(|p| 2.0 * (r * p) + t).collect();
        let a = procrustes_align(&pts, &target, AlignMode::Similarity).unwrap();
        assert_relative_eq!(a.scale, 2.0, epsilon = 1e-9);
        assert!((a.rotation_matrix() - r).norm() < 1e-9);
        for (p, q) in pts.iter().zip(&target) {
            assert!((a.apply(p) - q).norm() < 1e-9);
        }
    }

    #[test]
    fn procrustes_degenerate_rank() {
        // collinear points cannot pin a rotation
        let src: Vec<Vec3> = (0..5).map(|i| Vec3::new(i as f64, 0.0, 0.0)).collect();
        let dst = src.clone();
        assert!(matches!(
            procrustes_align(&src, &dst, AlignMode::Rigid),
            Err(Error::Invalid(_))
        ));
    }

    #[test]
    fn mpjpe_offset_and_alignment() {
        let mut rng = StdRng::seed_from_u64(7);
        let gt: Vec<Vec<Vec3>> = (0..4).map(|_| random_points(&mut rng, 10)).collect();
        assert_relative_eq!(
            mpjpe(&gt, &gt, &Alignment::identity()).unwrap(),
            0.0,
            epsilon = 1e-15
        );

        let off = Vec3::new(0.05, 0.0, 0.0);
        let pred: Vec<Vec<Vec3>> = gt
            .iter()
            .map(|f| f.iter().map(|p| p + off).collect())
            .collect();
        assert_relative_eq!(
            mpjpe(&pred, &gt, &Alignment::identity()).unwrap(),
            0.05,
            epsilon = 1e-12
        );
        // translation alignment of the first frame cancels a global offset
        let align = procrustes_align(&pred[0], &gt[0], AlignMode::Translation).unwrap();
        assert_relative_eq!(mpjpe(&pred, &gt, &align).unwrap(), 0.0, epsilon = 1e-12);
        // pve is the same formula
        assert_relative_eq!(
            pve(&pred, &gt, &Alignment::identity()).unwrap(),
            0.05,
            epsilon = 1e-12
        );
    }

    #[test]
    fn accel_error_cases() {
        let mut rng = StdRng::seed_from_u64(11);
        let base = random_points(&mut rng, 6);
        let vel = random_points(&mut rng, 6);

        // linear motion, pred = gt (plus a constant) -> zero
        let gt: Vec<Vec<Vec3>> = (0..6)
            .map(|t| base.iter().zip(&vel).map(|(b, v)| b + *v * t as f64).collect())
            .collect();
        assert_relative_eq!(
            accel_error(&gt, &gt, &Alignment::identity()).unwrap(),
            0.0,
            epsilon = 1e-12
        );
        let off = Vec3::new(0.3, -0.1, 0.7);
        let pred: Vec<Vec<Vec3>> = gt
            .iter()
            .map(|f| f.iter().map(|p| p + off).collect())
            .collect();
        assert_relative_eq!(
            accel_error(&pred, &gt, &Alignment::identity()).unwrap(),
            0.0,
            epsilon = 1e-12
        );

        // quadratic offset in one coordinate: error = |a| per frame^2
        let a = 0.04;
        let pred: Vec<Vec<Vec3>> = gt
            .iter()
            .enumerate()
            .map(|(t, f)| {
                f.iter()
                    .map(|p| p + Vec3::new(0.0, 0.0, a * (t as f64) * (t as f64) / 2.0))
                    .collect()
            })
            .collect();
        assert_relative_eq!(
            accel_error(&pred, &gt, &Alignment::identity()).unwrap(),
            a,
            epsilon = 1e-12
        );

        // too few frames
        assert!(accel_error(&gt[..2], &gt[..2], &Alignment::identity()).is_err());
    }

    #[test]
    fn metrics_invariant_under_time_reversal() {
        let mut rng = StdRng::seed_from_u64(13);
        let gt: Vec<Vec<Vec3>> = (0..5).map(|_| random_points(&mut rng, 8)).collect();
        let pred: Vec<Vec<Vec3>> = (0..5).map(|_| random_points(&mut rng, 8)).collect();
        let id = Alignment::identity();
        let m1 = mpjpe(&pred, &gt, &id).unwrap();
        let a1 = accel_error(&pred, &gt, &id).unwrap();
        let rpred: Vec<Vec<Vec3>> = pred.iter().rev().cloned().collect();
        let rgt: Vec<Vec<Vec3>> = gt.iter().rev().cloned().collect();
        assert_relative_eq!(m1, mpjpe(&rpred, &rgt, &id).unwrap(), epsilon = 1e-12);
        assert_relative_eq!(a1, accel_error(&rpred, &rgt, &id).unwrap(), epsilon = 1e-12);
    }

    #[test]
    fn mpjpe_triangle_inequality() {
        let mut rng = StdRng::seed_from_u64(17);
        let a: Vec<Vec<Vec3>> = (0..3).map(|_| random_points(&mut rng, 8)).collect();
        let b: Vec<Vec<Vec3>> = (0..3).map(|_| random_points(&mut rng, 8)).collect();
        let c: Vec<Vec<Vec3>> = (0..3).map(|_| random_points(&mut rng, 8)).collect();
        let id = Alignment::identity();
        let ac = mpjpe(&a, &c, &id).unwrap();
        let ab = mpjpe(&a, &b, &id).unwrap();
        let bc = mpjpe(&b, &c, &id).unwrap();
        assert!(ac <= ab + bc + 1e-12);
    }

    #[test]
    fn report_per_frame_means_match_scalars() {
        let mut rng = StdRng::seed_from_u64(19);
        let gt: Vec<Vec<Vec3>> = (0..5).map(|_| random_points(&mut rng, 9)).collect();
        let pred: Vec<Vec<Vec3>> = (0..5).map(|_| random_points(&mut rng, 9)).collect();
        let report = evaluate(&pred, &gt, &pred, &gt, AlignMode::Translation).unwrap();
        let m = report.per_frame_mpjpe.iter().sum::<f64>() / 5.0;
        assert_relative_eq!(report.mpjpe, m, epsilon = 1e-9);
        let a = report.per_frame_accel.iter().sum::<f64>() / 3.0;
        assert_relative_eq!(report.accel, a, epsilon = 1e-9);
        assert!(report.mpjpe >= 0.0 && report.pve >= 0.0 && report.accel >= 0.0);
    }
}
