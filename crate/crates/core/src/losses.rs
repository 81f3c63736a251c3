//! Training objectives.
//!
//! Every term is a mean over its elements and returns its gradient alongside
//! the value. Joint-space gradients are chained back onto heatmap values
//! through the first-moment decode in [`total_loss`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{bone_vectors, heading_with_jacobian, MotionSequence, SkeletonTopology};
use crate::heatmap::{clamped_soft_argmax, grid_center, soft_argmax_vjp, HeatmapField};
use crate::vec3::{self, Vec3};

/// Weights of the joint-space terms relative to the reconstruction term.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub pos: f64,
    pub vel: f64,
    pub sk: f64,
    pub ori: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { pos: 0.1, vel: 0.1, sk: 0.1, ori: 1.0 }
    }
}

impl LossWeights {
    pub fn zero() -> Self {
        Self { pos: 0.0, vel: 0.0, sk: 0.0, ori: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("pos", self.pos), ("vel", self.vel), ("sk", self.sk), ("ori", self.ori)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidConfig(format!("loss weight {name} = {v}")));
            }
        }
        Ok(())
    }
}

/// A scalar loss and its gradient.
#[derive(Debug, Clone)]
pub struct Term<G> {
    pub value: f64,
    pub grad: G,
}

/// Mean squared error over every field entry.
pub fn loss_rec(pred: &HeatmapField, target: &HeatmapField) -> Result<Term<Vec<f64>>> {
    pred.same_shape(target)?;
    let n = pred.values().len() as f64;
    let mut value = 0.0;
    let grad = pred
        .values()
        .iter()
        .zip(target.values())
        .map(|(p, t)| {
            let d = p - t;
            value += d * d;
            2.0 * d / n
        })
        .collect();
    Ok(Term { value: value / n, grad })
}

fn check_pair(pred: &MotionSequence, gt: &MotionSequence) -> Result<()> {
    if pred.frames() != gt.frames() || pred.joints() != gt.joints() {
        return Err(Error::ShapeMismatch(format!(
            "pred {}x{} vs gt {}x{}",
            pred.frames(),
            pred.joints(),
            gt.frames(),
            gt.joints()
        )));
    }
    Ok(())
}

/// Mean squared joint distance over all (t, k).
pub fn loss_pos(pred: &MotionSequence, gt: &MotionSequence) -> Result<Term<Vec<Vec3>>> {
    check_pair(pred, gt)?;
    let n = pred.positions().len() as f64;
    let mut value = 0.0;
    let grad = pred
        .positions()
        .iter()
        .zip(gt.positions())
        .map(|(&p, &g)| {
            let d = vec3::sub(p, g);
            value += vec3::norm_sq(d);
            vec3::scale(d, 2.0 / n)
        })
        .collect();
    Ok(Term { value: value / n, grad })
}

/// Mean squared difference of per-frame forward differences. A single-frame
/// sequence has no velocity and yields zero.
pub fn loss_vel(pred: &MotionSequence, gt: &MotionSequence) -> Result<Term<Vec<Vec3>>> {
    check_pair(pred, gt)?;
    let (t_len, k_len) = (pred.frames(), pred.joints());
    let mut grad = vec![[0.0; 3]; t_len * k_len];
    if t_len < 2 {
        return Ok(Term { value: 0.0, grad });
    }
    let n = ((t_len - 1) * k_len) as f64;
    let mut value = 0.0;
    for t in 0..t_len - 1 {
        for k in 0..k_len {
            let dp = vec3::sub(pred.joint(t + 1, k), pred.joint(t, k));
            let dg = vec3::sub(gt.joint(t + 1, k), gt.joint(t, k));
            let e = vec3::sub(dp, dg);
            value += vec3::norm_sq(e);
            let g = vec3::scale(e, 2.0 / n);
            grad[(t + 1) * k_len + k] = vec3::add(grad[(t + 1) * k_len + k], g);
            grad[t * k_len + k] = vec3::sub(grad[t * k_len + k], g);
        }
    }
    Ok(Term { value: value / n, grad })
}

/// Mean squared bone-vector error over all (t, bone).
pub fn loss_sk(pred: &MotionSequence, gt: &MotionSequence, topo: &SkeletonTopology) -> Result<Term<Vec<Vec3>>> {
    check_pair(pred, gt)?;
    pred.check_topology(topo)?;
    let (t_len, k_len) = (pred.frames(), pred.joints());
    let mut grad = vec![[0.0; 3]; t_len * k_len];
    let bones = topo.bones();
    if bones.is_empty() {
        return Ok(Term { value: 0.0, grad });
    }
    let n = (t_len * bones.len()) as f64;
    let mut value = 0.0;
    for t in 0..t_len {
        let sp = bone_vectors(pred.frame(t), topo);
        let sg = bone_vectors(gt.frame(t), topo);
        for ((b, p), g) in bones.iter().zip(sp).zip(sg) {
            let e = vec3::sub(p, g);
            value += vec3::norm_sq(e);
            let d = vec3::scale(e, 2.0 / n);
            let pi = t * k_len + b.parent;
            let ci = t * k_len + b.child;
            grad[pi] = vec3::add(grad[pi], d);
            grad[ci] = vec3::sub(grad[ci], d);
        }
    }
    Ok(Term { value: value / n, grad })
}

/// `1 - cos` between the first-frame hip headings of prediction and ground
/// truth. The gradient is with respect to the predicted first-frame joints.
pub fn loss_ori(pred_frame0: &[Vec3], gt_frame0: &[Vec3], topo: &SkeletonTopology) -> Result<Term<Vec<Vec3>>> {
    let n = topo.named();
    let (d_gt, _) = heading_with_jacobian(gt_frame0[n.root], gt_frame0[n.lhip], gt_frame0[n.rhip])?;
    let (d_pred, jac) = heading_with_jacobian(pred_frame0[n.root], pred_frame0[n.lhip], pred_frame0[n.rhip])?;
    let np = vec3::norm(d_pred);
    let ng = vec3::norm(d_gt);
    if np < 1e-12 || ng < 1e-12 {
        return Err(Error::DegenerateSkeleton("hip vectors are parallel".into()));
    }
    let cos = vec3::dot(d_pred, d_gt) / (np * ng);
    // d cos / d d_pred = d_gt/(|p||g|) - cos * d_pred/|p|^2
    let dcos: Vec3 = [0, 1, 2].map(|a| d_gt[a] / (np * ng) - cos * d_pred[a] / (np * np));
    let mut grad = vec![[0.0; 3]; pred_frame0.len()];
    for (slot, joint) in [n.root, n.lhip, n.rhip].into_iter().enumerate() {
        for b in 0..3 {
            let g: f64 = (0..3).map(|a| -dcos[a] * jac[slot][a][b]).sum();
            grad[joint][b] += g;
        }
    }
    Ok(Term { value: 1.0 - cos, grad })
}

/// Per-term values of the combined objective.
#[derive(Debug, Clone)]
pub struct LossReport {
    pub total: f64,
    pub rec: f64,
    pub pos: f64,
    pub vel: f64,
    pub sk: f64,
    pub ori: f64,
    /// Set when the predicted hips were degenerate; `ori` is then 1 with no gradient.
    pub ori_degenerate: bool,
    /// Gradient of `total` with respect to the predicted field values.
    pub grad: Option<Vec<f64>>,
}

impl LossReport {
    pub fn weighted_sum(rec: f64, pos: f64, vel: f64, sk: f64, ori: f64, w: &LossWeights) -> f64 {
        rec + w.pos * pos + w.vel * vel + w.sk * sk + w.ori * ori
    }
}

/// The combined objective on a predicted field.
///
/// `pred` and `target` live in the same (amplitude-scaled) space. The
/// prediction is decoded by clamp-normalize plus first moment, then scored
/// against `gt` with the joint-space terms.
pub fn total_loss(
    pred: &HeatmapField,
    target: &HeatmapField,
    gt: &MotionSequence,
    topo: &SkeletonTopology,
    w: &LossWeights,
    with_grad: bool,
) -> Result<LossReport> {
    pred.same_shape(target)?;
    if gt.frames() != pred.frames() || gt.joints() != pred.joints() {
        return Err(Error::ShapeMismatch("ground-truth motion does not match field".into()));
    }
    let spec = *pred.spec();
    let rec = loss_rec(pred, target)?;

    let decoded: Vec<Option<(Vec3, f64)>> = pred.channels().map(|ch| clamped_soft_argmax(ch, &spec)).collect();
    let center = grid_center(&spec);
    let joints: Vec<Vec3> = decoded.iter().map(|d| d.map_or(center, |(j, _)| j)).collect();
    let decoded_motion = MotionSequence::new(gt.fps(), gt.frames(), gt.joints(), joints)?;

    let pos = loss_pos(&decoded_motion, gt)?;
    let vel = loss_vel(&decoded_motion, gt)?;
    let sk = loss_sk(&decoded_motion, gt, topo)?;
    let (ori, ori_degenerate) = match loss_ori(decoded_motion.frame(0), gt.frame(0), topo) {
        Ok(term) => (Some(term), false),
        Err(Error::DegenerateSkeleton(_)) => {
            // Ground truth must be well formed; only the prediction may degenerate.
            let n = topo.named();
            let f = gt.frame(0);
            heading_with_jacobian(f[n.root], f[n.lhip], f[n.rhip])?;
            (None, true)
        }
        Err(e) => return Err(e),
    };
    let ori_value = ori.as_ref().map_or(1.0, |t| t.value);
    let total = LossReport::weighted_sum(rec.value, pos.value, vel.value, sk.value, ori_value, w);
    if !total.is_finite() {
        return Err(Error::NonFinite(format!("total loss {total}")));
    }

    let grad = with_grad.then(|| {
        let mut g = rec.grad;
        let n = spec.voxel_count();
        let k_len = gt.joints();
        for (c, d) in decoded.iter().enumerate() {
            let Some((joint, mass)) = *d else { continue };
            let mut up = vec3::add(
                vec3::add(vec3::scale(pos.grad[c], w.pos), vec3::scale(vel.grad[c], w.vel)),
                vec3::scale(sk.grad[c], w.sk),
            );
            if c < k_len {
                if let Some(o) = &ori {
                    up = vec3::add(up, vec3::scale(o.grad[c], w.ori));
                }
            }
            if up == [0.0; 3] {
                continue;
            }
            let ch = &pred.channel(c / k_len, c % k_len);
            soft_argmax_vjp(&spec, joint, mass, up, |i| ch[i] > 0.0, &mut g[c * n..(c + 1) * n]);
        }
        g
    });

    Ok(LossReport {
        total,
        rec: rec.value,
        pos: pos.value,
        vel: vel.value,
        sk: sk.value,
        ori: ori_value,
        ori_degenerate,
        grad,
    })
}
