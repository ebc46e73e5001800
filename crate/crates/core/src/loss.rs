use nalgebra::{Matrix3, Vector3};
use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hand::{Camera, HandParams};
use crate::maps::PART_CHANNELS;

/// Focal loss exponent on the prediction (positive and negative branches).
pub const FOCAL_PRED_EXP: f64 = 2.0;
/// Focal loss penalty-reduction exponent on soft ground truth.
pub const FOCAL_GT_EXP: f64 = 4.0;

/// Term weights of the training objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub center: f64,
    pub part: f64,
    pub pose: f64,
    pub shape: f64,
    pub joint3d: f64,
    pub pa_joint3d: f64,
    pub joint2d: f64,
    pub bone: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            center: 80.0,
            part: 160.0,
            pose: 80.0,
            shape: 10.0,
            joint3d: 200.0,
            pa_joint3d: 360.0,
            joint2d: 400.0,
            bone: 200.0,
        }
    }
}

// ---------------------------------------------------------------------------
// Map losses
// ---------------------------------------------------------------------------

/// Penalty-reduced pixel-wise focal loss over center heatmaps, normalized by
/// the number of peak (gt == 1) pixels. Predictions are clamped away from
/// {0, 1} so the logs stay finite.
pub fn focal_center_loss(pred: &Array3<f64>, gt: &Array3<f64>) -> f64 {
    focal_center_loss_with(pred, gt, FOCAL_PRED_EXP, FOCAL_GT_EXP)
}

pub fn focal_center_loss_with(
    pred: &Array3<f64>,
    gt: &Array3<f64>,
    pred_exp: f64,
    gt_exp: f64,
) -> f64 {
    assert_eq!(pred.dim(), gt.dim(), "center map shapes must match");
    let mut acc = 0.0;
    let mut peaks = 0usize;
    for (&p, &y) in pred.iter().zip(gt.iter()) {
        let p = p.clamp(1e-12, 1.0 - 1e-12);
        if y == 1.0 {
            acc -= (1.0 - p).powf(pred_exp) * p.ln();
            peaks += 1;
        } else {
            acc -= (1.0 - y).powf(gt_exp) * p.powf(pred_exp) * (1.0 - p).ln();
        }
    }
    acc / peaks.max(1) as f64
}

/// Mean pixel-wise cross entropy of part logits against integer labels.
pub fn part_seg_loss(logits: &Array3<f64>, labels: &Array2<u16>) -> Result<f64> {
    let (c, h, w) = logits.dim();
    if c != PART_CHANNELS {
        return Err(Error::Shape(format!(
            "part logits have {c} channels, expected {PART_CHANNELS}"
        )));
    }
    if labels.dim() != (h, w) {
        return Err(Error::Shape(format!(
            "label map shaped {:?}, logits {:?}",
            labels.dim(),
            (h, w)
        )));
    }
    let mut acc = 0.0;
    for y in 0..h {
        for x in 0..w {
            let label = labels[(y, x)] as usize;
            if label >= PART_CHANNELS {
                return Err(Error::InvalidLabel(labels[(y, x)] as u32));
            }
            // stable logsumexp over the 33 channels
            let mut max = f64::NEG_INFINITY;
            for ch in 0..c {
                max = max.max(logits[(ch, y, x)]);
            }
            let mut sum = 0.0;
            for ch in 0..c {
                sum += (logits[(ch, y, x)] - max).exp();
            }
            acc += max + sum.ln() - logits[(label, y, x)];
        }
    }
    Ok(acc / (h * w) as f64)
}

// ---------------------------------------------------------------------------
// Parameter and geometry losses
// ---------------------------------------------------------------------------

/// Weighted squared error on pose and shape entries:
/// pose_w * |theta - theta_gt|^2 + shape_w * |beta - beta_gt|^2.
pub fn mano_param_loss(pred: &HandParams, gt: &HandParams, w: &LossWeights) -> f64 {
    let mut pose_sq = 0.0;
    for j in 0..16 {
        for c in 0..6 {
            let d = pred.pose6d[j][c] - gt.pose6d[j][c];
            pose_sq += d * d;
        }
    }
    let mut shape_sq = 0.0;
    for k in 0..10 {
        let d = pred.shape[k] - gt.shape[k];
        shape_sq += d * d;
    }
    w.pose * pose_sq + w.shape * shape_sq
}

/// Gradient of [`mano_param_loss`] w.r.t. the 106 pose+shape entries of pred.
pub fn mano_param_loss_grad(pred: &HandParams, gt: &HandParams, w: &LossWeights) -> [f64; 106] {
    let mut g = [0.0; 106];
    for j in 0..16 {
        for c in 0..6 {
            g[j * 6 + c] = 2.0 * w.pose * (pred.pose6d[j][c] - gt.pose6d[j][c]);
        }
    }
    for k in 0..10 {
        g[96 + k] = 2.0 * w.shape * (pred.shape[k] - gt.shape[k]);
    }
    g
}

/// Weighted squared error of projected joints against 2D targets.
pub fn pj2d_loss(
    pred3d: &[Vector3<f64>],
    camera: &Camera,
    gt2d: &[(f64, f64)],
    w: &LossWeights,
) -> f64 {
    debug_assert_eq!(pred3d.len(), gt2d.len());
    let mut acc = 0.0;
    for (p, g) in pred3d.iter().zip(gt2d) {
        let rx = camera.s * p.x + camera.tx - g.0;
        let ry = camera.s * p.y + camera.ty - g.1;
        acc += rx * rx + ry * ry;
    }
    w.joint2d * acc
}

/// Gradient of [`pj2d_loss`] w.r.t. the 3D joints and (s, tx, ty).
pub fn pj2d_loss_grad(
    pred3d: &[Vector3<f64>],
    camera: &Camera,
    gt2d: &[(f64, f64)],
    w: &LossWeights,
) -> (Vec<Vector3<f64>>, [f64; 3]) {
    let mut joints = vec![Vector3::zeros(); pred3d.len()];
    let mut cam = [0.0; 3];
    for (i, (p, g)) in pred3d.iter().zip(gt2d).enumerate() {
        let rx = camera.s * p.x + camera.tx - g.0;
        let ry = camera.s * p.y + camera.ty - g.1;
        joints[i].x = 2.0 * w.joint2d * rx * camera.s;
        joints[i].y = 2.0 * w.joint2d * ry * camera.s;
        cam[0] += 2.0 * w.joint2d * (rx * p.x + ry * p.y);
        cam[1] += 2.0 * w.joint2d * rx;
        cam[2] += 2.0 * w.joint2d * ry;
    }
    (joints, cam)
}

/// Weighted squared error on bone lengths.
pub fn bone_loss(pred_bones: &[f64], gt_bones: &[f64], w: &LossWeights) -> f64 {
    debug_assert_eq!(pred_bones.len(), gt_bones.len());
    let acc: f64 = pred_bones
        .iter()
        .zip(gt_bones)
        .map(|(p, g)| (p - g) * (p - g))
        .sum();
    w.bone * acc
}

/// Gradient of [`bone_loss`] w.r.t. the predicted joints the bones span.
pub fn bone_loss_grad(
    pred_joints: &[Vector3<f64>],
    gt_bones: &[f64],
    edges: &[[usize; 2]],
    w: &LossWeights,
) -> Vec<Vector3<f64>> {
    let mut grad = vec![Vector3::zeros(); pred_joints.len()];
    for (e, &gt_len) in edges.iter().zip(gt_bones) {
        let d = pred_joints[e[1]] - pred_joints[e[0]];
        let len = d.norm();
        if len < 1e-12 {
            continue;
        }
        let coeff = 2.0 * w.bone * (len - gt_len) / len;
        grad[e[1]] += d * coeff;
        grad[e[0]] -= d * coeff;
    }
    grad
}

// ---------------------------------------------------------------------------
// Similarity alignment and joint metrics
// ---------------------------------------------------------------------------

/// Similarity transform p -> scale * rot * p + t.
#[derive(Debug, Clone, Copy)]
pub struct Similarity {
    pub scale: f64,
    pub rot: Matrix3<f64>,
    pub t: Vector3<f64>,
}

impl Similarity {
    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rot * p * self.scale + self.t
    }
}

/// Least-squares similarity aligning `pred` onto `gt` (scale, proper
/// rotation via SVD with reflection correction, translation). Errors on
/// fewer than 3 points, zero spread, or collinear configurations.
pub fn procrustes_solve(pred: &[Vector3<f64>], gt: &[Vector3<f64>]) -> Result<Similarity> {
    if pred.len() != gt.len() {
        return Err(Error::Shape(format!(
            "point sets of {} and {} points",
            pred.len(),
            gt.len()
        )));
    }
    let n = pred.len();
    if n < 3 {
        return Err(Error::DegenerateAlignment("fewer than 3 points"));
    }
    let nf = n as f64;
    let mu_p: Vector3<f64> = pred.iter().sum::<Vector3<f64>>() / nf;
    let mu_g: Vector3<f64> = gt.iter().sum::<Vector3<f64>>() / nf;
    let mut var_p = 0.0;
    let mut cov = Matrix3::<f64>::zeros();
    for (p, g) in pred.iter().zip(gt) {
        let pc = p - mu_p;
        let gc = g - mu_g;
        var_p += pc.norm_squared();
        cov += gc * pc.transpose();
    }
    var_p /= nf;
    cov /= nf;
    if var_p < 1e-18 {
        return Err(Error::DegenerateAlignment("source points have no spread"));
    }
    let svd = cov.svd(true, true);
    let u = svd.u.ok_or(Error::DegenerateAlignment("svd failed"))?;
    let v_t = svd.v_t.ok_or(Error::DegenerateAlignment("svd failed"))?;
    let d = svd.singular_values;
    if d[1] <= 1e-12 * d[0].max(1e-300) {
        return Err(Error::DegenerateAlignment("collinear points"));
    }
    let mut s_diag = Vector3::new(1.0, 1.0, 1.0);
    if (u.determinant() * v_t.determinant()) < 0.0 {
        s_diag.z = -1.0;
    }
    let rot = u * Matrix3::from_diagonal(&s_diag) * v_t;
    let scale = (d[0] * s_diag.x + d[1] * s_diag.y + d[2] * s_diag.z) / var_p;
    let t = mu_g - rot * mu_p * scale;
    Ok(Similarity { scale, rot, t })
}

/// Applies the best-fit similarity of `pred` onto `gt` to `pred`.
pub fn procrustes_align(pred: &[Vector3<f64>], gt: &[Vector3<f64>]) -> Result<Vec<Vector3<f64>>> {
    let sim = procrustes_solve(pred, gt)?;
    Ok(pred.iter().map(|p| sim.apply(p)).collect())
}

/// Mean per-joint error after subtracting the root joint (joint 0) from both
/// sets, in the input unit (meters here).
pub fn root_aligned_mpjpe_m(pred: &[Vector3<f64>], gt: &[Vector3<f64>]) -> Result<f64> {
    if pred.len() != gt.len() || pred.is_empty() {
        return Err(Error::Shape(format!(
            "joint sets of {} and {} points",
            pred.len(),
            gt.len()
        )));
    }
    let n = pred.len() as f64;
    let mut acc = 0.0;
    for (p, g) in pred.iter().zip(gt) {
        acc += ((p - pred[0]) - (g - gt[0])).norm();
    }
    Ok(acc / n)
}

/// Gradient of [`root_aligned_mpjpe_m`] w.r.t. the predicted joints.
pub fn root_aligned_mpjpe_grad(
    pred: &[Vector3<f64>],
    gt: &[Vector3<f64>],
) -> Vec<Vector3<f64>> {
    let n = pred.len() as f64;
    let mut grad = vec![Vector3::zeros(); pred.len()];
    for i in 1..pred.len() {
        let d = (pred[i] - pred[0]) - (gt[i] - gt[0]);
        let norm = d.norm();
        if norm < 1e-12 {
            continue;
        }
        let u = d / (norm * n);
        grad[i] += u;
        grad[0] -= u;
    }
    grad
}

/// Mean per-joint error after full similarity alignment, in the input unit.
pub fn pa_mpjpe_m(pred: &[Vector3<f64>], gt: &[Vector3<f64>]) -> Result<f64> {
    let aligned = procrustes_align(pred, gt)?;
    let n = pred.len() as f64;
    Ok(aligned
        .iter()
        .zip(gt)
        .map(|(a, g)| (a - g).norm())
        .sum::<f64>()
        / n)
}

/// The two reported joint metrics in millimeters.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct JointErrors {
    pub mpjpe_mm: f64,
    pub pa_mpjpe_mm: f64,
}

pub fn joint_errors(pred: &[Vector3<f64>], gt: &[Vector3<f64>]) -> Result<JointErrors> {
    Ok(JointErrors {
        mpjpe_mm: root_aligned_mpjpe_m(pred, gt)? * 1000.0,
        pa_mpjpe_mm: pa_mpjpe_m(pred, gt)? * 1000.0,
    })
}

// ---------------------------------------------------------------------------
// Weighted total
// ---------------------------------------------------------------------------

/// Raw (unweighted) term values; `None` marks a term as inactive.
#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct TermInputs {
    pub pose_sq: Option<f64>,
    pub shape_sq: Option<f64>,
    pub joint3d_m: Option<f64>,
    pub pa_joint3d_m: Option<f64>,
    pub joint2d_sq: Option<f64>,
    pub bone_sq: Option<f64>,
    pub center_focal: Option<f64>,
    pub part_ce: Option<f64>,
}

/// Weighted decomposition of the total loss. `total` is exactly the sum of
/// the `weighted` column in listed order, so re-summing reproduces it bit
/// for bit.
#[derive(Debug, Clone, Serialize)]
pub struct LossBreakdown {
    pub terms: Vec<LossTerm>,
    pub total: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct LossTerm {
    pub name: &'static str,
    pub raw: f64,
    pub weighted: f64,
}

/// Applies the weights to the active raw terms in a fixed order.
pub fn total_loss(inputs: &TermInputs, w: &LossWeights) -> LossBreakdown {
    let order: [(&'static str, Option<f64>, f64); 8] = [
        ("pose", inputs.pose_sq, w.pose),
        ("shape", inputs.shape_sq, w.shape),
        ("joint3d", inputs.joint3d_m, w.joint3d),
        ("pa_joint3d", inputs.pa_joint3d_m, w.pa_joint3d),
        ("joint2d", inputs.joint2d_sq, w.joint2d),
        ("bone", inputs.bone_sq, w.bone),
        ("center", inputs.center_focal, w.center),
        ("part", inputs.part_ce, w.part),
    ];
    let mut terms = Vec::new();
    let mut total = 0.0;
    for (name, raw, weight) in order {
        let Some(raw) = raw else { continue };
        let weighted = weight * raw;
        total += weighted;
        terms.push(LossTerm {
            name,
            raw,
            weighted,
        });
    }
    LossBreakdown { terms, total }
}
