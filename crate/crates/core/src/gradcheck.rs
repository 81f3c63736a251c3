//! Central finite-difference checks of every analytic gradient.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::denoiser::{ConditionFeatures, Denoiser, DenoiserConfig, PARAM_COUNT, PARAM_NAMES};
use crate::diffusion::X0Denoiser;
use crate::error::Result;
use crate::geometry::{MotionSequence, SkeletonTopology};
use crate::heatmap::{amplitude_scale, encode_motion, soft_argmax, soft_argmax_vjp, FieldMode, HeatmapField};
use crate::losses::{loss_ori, loss_pos, loss_rec, loss_sk, loss_vel, total_loss, LossWeights, Term};
use crate::synthdata::TaskId;
use crate::uiv::VolumeSpec;
use crate::vec3::{self, Vec3};

/// Tolerance for closed-form loss and decode gradients.
pub const LOSS_TOL: f64 = 1e-4;
/// Tolerance for denoiser parameter gradients.
pub const PARAM_TOL: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheck {
    pub name: String,
    /// `|analytic - numeric| / max(|analytic|, |numeric|)` in the 2-norm.
    pub rel_err: f64,
    pub tol: f64,
}

impl GradCheck {
    pub fn passed(&self) -> bool {
        self.rel_err < self.tol
    }
}

pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(b.iter().map(|x| x * x).sum::<f64>().sqrt());
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

/// Central differences of `f` at `x` with step `h * max(|x_i|, 1)`.
pub fn numeric_gradient(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut p = x.to_vec();
    (0..x.len())
        .map(|i| {
            let step = h * x[i].abs().max(1.0);
            p[i] = x[i] + step;
            let plus = f(&p);
            p[i] = x[i] - step;
            let minus = f(&p);
            p[i] = x[i];
            (plus - minus) / (2.0 * step)
        })
        .collect()
}

fn flat(v: &[Vec3]) -> Vec<f64> {
    v.iter().flatten().copied().collect()
}

fn unflat(v: &[f64]) -> Vec<Vec3> {
    v.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect()
}

/// Toy-skeleton motion near a yawed rest pose with random per-joint jitter.
fn jittered_motion(rng: &mut ChaCha8Rng, frames: usize) -> MotionSequence {
    let rest = SkeletonTopology::toy_rest_pose();
    let yaw = crate::geometry::RigidTransform::yaw(rng.random_range(-3.0..3.0), [0.0; 3]);
    let mut pts = Vec::with_capacity(frames * rest.len());
    for t in 0..frames {
        for p in &rest {
            let jitter = [0, 1, 2].map(|_| rng.random_range(-0.05..0.05));
            pts.push(vec3::add(yaw.apply(*p), vec3::add(jitter, [0.03 * t as f64, 0.0, 0.0])));
        }
    }
    MotionSequence::new(10.0, frames, rest.len(), pts).expect("consistent shape")
}

fn joint_check(name: &str, pred: &MotionSequence, f: impl Fn(&MotionSequence) -> Result<Term<Vec<Vec3>>>) -> Result<GradCheck> {
    let analytic = flat(&f(pred)?.grad);
    let (t, k) = (pred.frames(), pred.joints());
    let numeric = numeric_gradient(&flat(pred.positions()), 1e-5, |x| {
        let m = MotionSequence::new(pred.fps(), t, k, unflat(x)).expect("consistent shape");
        f(&m).map(|r| r.value).unwrap_or(f64::NAN)
    });
    Ok(GradCheck { name: name.into(), rel_err: rel_err(&analytic, &numeric), tol: LOSS_TOL })
}

/// Decoded-joint gradient of a random positive channel, contracted with a random direction.
fn decode_check(rng: &mut ChaCha8Rng) -> Result<GradCheck> {
    let spec = VolumeSpec::new([5, 6, 4], [0.2, 0.3, 0.25], [-0.9, 0.0, -0.5])?;
    let ch: Vec<f64> = (0..spec.voxel_count()).map(|_| rng.random_range(0.05..1.0)).collect();
    let dir: Vec3 = [0, 1, 2].map(|_| rng.random_range(-1.0..1.0));
    let (j, mass) = soft_argmax(&ch, &spec);
    let mut analytic = vec![0.0; ch.len()];
    soft_argmax_vjp(&spec, j, mass, dir, |_| true, &mut analytic);
    let numeric = numeric_gradient(&ch, 1e-5, |x| vec3::dot(soft_argmax(x, &spec).0, dir));
    Ok(GradCheck { name: "decode_expectation".into(), rel_err: rel_err(&analytic, &numeric), tol: LOSS_TOL })
}

fn rec_check(rng: &mut ChaCha8Rng) -> Result<GradCheck> {
    let spec = VolumeSpec::new([3, 3, 2], [0.1; 3], [0.0; 3])?;
    let n = 2 * spec.voxel_count();
    let field = |v: Vec<f64>| HeatmapField::from_values(spec, 2, 1, v, FieldMode::Raw).expect("consistent shape");
    let target = field((0..n).map(|_| rng.random_range(-1.0..1.0)).collect());
    let pred: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let analytic = loss_rec(&field(pred.clone()), &target)?.grad;
    let numeric = numeric_gradient(&pred, 1e-5, |x| loss_rec(&field(x.to_vec()), &target).map(|r| r.value).unwrap_or(f64::NAN));
    Ok(GradCheck { name: "loss_rec".into(), rel_err: rel_err(&analytic, &numeric), tol: LOSS_TOL })
}

/// Ground truth on a small grid plus a strictly positive noisy prediction.
fn tiny_fields(rng: &mut ChaCha8Rng, cfg: &DenoiserConfig) -> Result<(MotionSequence, SkeletonTopology, HeatmapField)> {
    let topo = SkeletonTopology::toy();
    let base = [0.0, 0.75, 0.0];
    let scale = 0.5;
    let frames: Vec<Vec<Vec3>> = (0..cfg.frames)
        .map(|t| {
            SkeletonTopology::toy_rest_pose()
                .iter()
                .take(cfg.joints)
                .map(|p| {
                    let q = vec3::add(vec3::scale(vec3::sub(*p, [0.0, 0.9, 0.0]), scale), base);
                    vec3::add(q, [0.05 * t as f64, 0.0, rng.random_range(-0.05..0.05)])
                })
                .collect()
        })
        .collect();
    let gt = MotionSequence::from_frames(10.0, frames)?;
    let target = encode_motion(&gt, &cfg.spec, cfg.sigma)?.field.scaled(amplitude_scale(cfg.sigma));
    Ok((gt, topo, target))
}

fn total_chain_check(rng: &mut ChaCha8Rng) -> Result<GradCheck> {
    let cfg = DenoiserConfig { joints: 8, ..DenoiserConfig::tiny() };
    let (gt, topo, target) = tiny_fields(rng, &cfg)?;
    let w = LossWeights::default();
    let pred: Vec<f64> = target.values().iter().map(|v| v + rng.random_range(0.05..0.8)).collect();
    let field = |v: &[f64]| HeatmapField::from_values(cfg.spec, cfg.frames, cfg.joints, v.to_vec(), FieldMode::Raw).expect("consistent shape");
    let analytic = total_loss(&field(&pred), &target, &gt, &topo, &w, true)?.grad.unwrap_or_default();
    let numeric = numeric_gradient(&pred, 1e-5, |x| total_loss(&field(x), &target, &gt, &topo, &w, false).map(|r| r.total).unwrap_or(f64::NAN));
    Ok(GradCheck { name: "total_loss".into(), rel_err: rel_err(&analytic, &numeric), tol: LOSS_TOL })
}

/// Parameter gradients of `total_loss(denoiser(x_i))` on the tiny config, one check per tensor.
fn denoiser_checks(rng: &mut ChaCha8Rng) -> Result<Vec<GradCheck>> {
    let cfg = DenoiserConfig { joints: 8, ..DenoiserConfig::tiny() };
    let (gt, topo, target) = tiny_fields(rng, &cfg)?;
    let model = Denoiser::init(cfg.clone(), rng.random())?;
    let noisy: Vec<f64> = target
        .values()
        .iter()
        .map(|v| {
            let z: f64 = StandardNormal.sample(&mut *rng);
            0.8 * v + 0.3 * z
        })
        .collect();
    let x = HeatmapField::from_values(cfg.spec, cfg.frames, cfg.joints, noisy, FieldMode::Raw)?;
    let cond = ConditionFeatures {
        task: TaskId::HumanScene,
        pooled: (0..cfg.pooled_len()).map(|_| rng.random_range(0.0..1.0)).collect(),
        goal: Some([0.2, 0.0, -0.1]),
    };
    let w = LossWeights::default();
    let i = 40;
    let (y, cache) = model.forward(&x, i, &cond)?;
    let report = total_loss(&y, &target, &gt, &topo, &w, true)?;
    let analytic = model.backward(&cache, report.grad.as_deref().unwrap_or_default())?;
    let mut out = Vec::with_capacity(PARAM_COUNT);
    let mut m = model.clone();
    for t in 0..PARAM_COUNT {
        let base = model.params().tensors()[t].clone();
        let numeric = numeric_gradient(&base, 1e-6, |v| {
            m.params_mut().tensors_mut()[t].copy_from_slice(v);
            m.predict_x0(&x, i, &cond)
                .and_then(|y| total_loss(&y, &target, &gt, &topo, &w, false))
                .map(|r| r.total)
                .unwrap_or(f64::NAN)
        });
        m.params_mut().tensors_mut()[t].copy_from_slice(&base);
        out.push(GradCheck {
            name: format!("denoiser.{}", PARAM_NAMES[t]),
            rel_err: rel_err(&analytic.tensors()[t], &numeric),
            tol: PARAM_TOL,
        });
    }
    Ok(out)
}

/// Runs every check on instances drawn from `seed`.
pub fn run_suite(seed: u64) -> Result<Vec<GradCheck>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let topo = SkeletonTopology::toy();
    let pred = jittered_motion(&mut rng, 4);
    let gt = jittered_motion(&mut rng, 4);
    let mut out = vec![decode_check(&mut rng)?, rec_check(&mut rng)?];
    out.push(joint_check("loss_pos", &pred, |m| loss_pos(m, &gt))?);
    out.push(joint_check("loss_vel", &pred, |m| loss_vel(m, &gt))?);
    out.push(joint_check("loss_sk", &pred, |m| loss_sk(m, &gt, &topo))?);
    let first = MotionSequence::new(10.0, 1, pred.joints(), pred.frame(0).to_vec())?;
    out.push(joint_check("loss_ori", &first, |m| loss_ori(m.frame(0), gt.frame(0), &topo))?);
    out.push(total_chain_check(&mut rng)?);
    out.extend(denoiser_checks(&mut rng)?);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numeric_gradient_of_a_quadratic() {
        let g = numeric_gradient(&[1.0, -2.0, 0.5], 1e-5, |x| x[0] * x[0] + 3.0 * x[1] * x[2]);
        assert!(rel_err(&g, &[2.0, 1.5, -6.0]) < 1e-9);
    }

    #[test]
    fn suite_passes() {
        for seed in 0..2 {
            for c in run_suite(seed).unwrap() {
                assert!(c.passed(), "seed {seed}: {} rel err {}", c.name, c.rel_err);
            }
        }
    }

    #[test]
    fn a_wrong_gradient_is_caught() {
        assert!(rel_err(&[1.0, 2.0], &[1.0, 2.1]) > LOSS_TOL);
    }
}
