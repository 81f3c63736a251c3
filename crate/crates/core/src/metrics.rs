//! Motion-quality metrics.
//!
//! Distances are reported in centimeters. FFD is a Fréchet distance between
//! Gaussian fits of hand-crafted motion features; it is not FID.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{MotionSequence, SkeletonTopology};
use crate::vec3::{self, Vec3};

pub const DEFAULT_FOOT_HEIGHT: f64 = 0.05;
pub const DEFAULT_CONTACT_THRESHOLD: f64 = 0.10;
pub const FFD_DIM: usize = 32;
const JACOBI_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub mpjpe_cm: f64,
    pub troot_cm: f64,
    pub fs: f64,
    pub c_prec: f64,
    pub c_rec: f64,
    pub c_acc: f64,
    pub c_f1: f64,
    pub goal_dist_cm: Option<f64>,
    pub diversity: Option<f64>,
    pub ffd: Option<f64>,
}

impl MetricReport {
    /// Two-column plain-text rendering.
    pub fn to_table(&self) -> String {
        let opt = |v: Option<f64>| v.map_or_else(|| "n/a".to_string(), |v| format!("{v:.4}"));
        let rows = [
            ("mpjpe_cm", format!("{:.4}", self.mpjpe_cm)),
            ("troot_cm", format!("{:.4}", self.troot_cm)),
            ("fs", format!("{:.4}", self.fs)),
            ("c_prec", format!("{:.4}", self.c_prec)),
            ("c_rec", format!("{:.4}", self.c_rec)),
            ("c_acc", format!("{:.4}", self.c_acc)),
            ("c_f1", format!("{:.4}", self.c_f1)),
            ("goal_dist_cm", opt(self.goal_dist_cm)),
            ("diversity", opt(self.diversity)),
            ("ffd", opt(self.ffd)),
        ];
        rows.iter().map(|(k, v)| format!("{k:<14}{v:>14}\n")).collect()
    }
}

fn same_shape(a: &MotionSequence, b: &MotionSequence) -> Result<()> {
    if a.frames() != b.frames() || a.joints() != b.joints() {
        return Err(Error::ShapeMismatch(format!(
            "motions {}x{} vs {}x{}",
            a.frames(),
            a.joints(),
            b.frames(),
            b.joints()
        )));
    }
    Ok(())
}

/// Mean per-joint position error, cm.
pub fn mpjpe(pred: &MotionSequence, gt: &MotionSequence) -> Result<f64> {
    same_shape(pred, gt)?;
    let n = pred.positions().len() as f64;
    Ok(pred.positions().iter().zip(gt.positions()).map(|(a, b)| vec3::dist(*a, *b)).sum::<f64>() / n * 100.0)
}

/// Mean root translation error, cm.
pub fn t_root(pred: &MotionSequence, gt: &MotionSequence, topo: &SkeletonTopology) -> Result<f64> {
    same_shape(pred, gt)?;
    let r = topo.named().root;
    let total: f64 = (0..pred.frames()).map(|t| vec3::dist(pred.joint(t, r), gt.joint(t, r))).sum();
    Ok(total / pred.frames() as f64 * 100.0)
}

/// Foot sliding: horizontal displacement (cm) to the next frame, summed over
/// foot-frames whose height above `floor_y` is below `h_thresh`, divided by
/// the number of such foot-frames. The last frame has no successor and is
/// not counted.
pub fn foot_sliding(motion: &MotionSequence, topo: &SkeletonTopology, floor_y: f64, h_thresh: f64) -> f64 {
    let n = topo.named();
    let mut total = 0.0;
    let mut count = 0usize;
    for t in 0..motion.frames().saturating_sub(1) {
        for foot in [n.lfoot, n.rfoot] {
            let p = motion.joint(t, foot);
            if p[1] - floor_y < h_thresh {
                total += vec3::horizontal_dist(p, motion.joint(t + 1, foot)) * 100.0;
                count += 1;
            }
        }
    }
    if count == 0 {
        0.0
    } else {
        total / count as f64
    }
}

/// Per frame, whether `[lhand, rhand]` lies within `threshold` of any object point.
pub fn hand_contacts(
    motion: &MotionSequence,
    topo: &SkeletonTopology,
    object_points: &[Vec3],
    threshold: f64,
) -> Vec<[bool; 2]> {
    let n = topo.named();
    let touches = |h: Vec3| object_points.iter().any(|p| vec3::dist(*p, h) < threshold);
    (0..motion.frames()).map(|t| [touches(motion.joint(t, n.lhand)), touches(motion.joint(t, n.rhand))]).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContactScores {
    pub prec: f64,
    pub rec: f64,
    pub acc: f64,
    pub f1: f64,
}

/// Binary classification scores pooled over both hands and all frames.
///
/// Precision and recall are 1 when there are neither positive predictions nor
/// positive labels, and 0 when their denominator is otherwise empty.
pub fn contact_scores(pred: &[[bool; 2]], gt: &[[bool; 2]]) -> Result<ContactScores> {
    if pred.len() != gt.len() || pred.is_empty() {
        return Err(Error::ShapeMismatch(format!("{} predicted vs {} labeled frames", pred.len(), gt.len())));
    }
    let (mut tp, mut fp, mut fneg, mut tn) = (0usize, 0usize, 0usize, 0usize);
    for (p, g) in pred.iter().flatten().zip(gt.iter().flatten()) {
        match (p, g) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fneg += 1,
            (false, false) => tn += 1,
        }
    }
    let none = tp + fp == 0 && tp + fneg == 0;
    let ratio = |num: usize, den: usize| if none { 1.0 } else if den == 0 { 0.0 } else { num as f64 / den as f64 };
    let prec = ratio(tp, tp + fp);
    let rec = ratio(tp, tp + fneg);
    let acc = (tp + tn) as f64 / (tp + fp + fneg + tn) as f64;
    let f1 = if prec + rec == 0.0 { 0.0 } else { 2.0 * prec * rec / (prec + rec) };
    Ok(ContactScores { prec, rec, acc, f1 })
}

pub fn contact_metrics(
    pred: &MotionSequence,
    topo: &SkeletonTopology,
    object_points: &[Vec3],
    gt_labels: &[[bool; 2]],
    threshold: f64,
) -> Result<ContactScores> {
    contact_scores(&hand_contacts(pred, topo, object_points, threshold), gt_labels)
}

/// Horizontal distance from the final root to `goal`, cm.
pub fn goal_distance(pred: &MotionSequence, goal: Vec3, topo: &SkeletonTopology) -> f64 {
    vec3::horizontal_dist(pred.joint(pred.frames() - 1, topo.named().root), goal) * 100.0
}

/// Flattened joint positions relative to the root of their frame.
pub fn root_relative_features(motion: &MotionSequence, topo: &SkeletonTopology) -> Vec<f64> {
    let r = topo.named().root;
    let mut out = Vec::with_capacity(motion.positions().len() * 3);
    for t in 0..motion.frames() {
        let root = motion.joint(t, r);
        for p in motion.frame(t) {
            out.extend_from_slice(&vec3::sub(*p, root));
        }
    }
    out
}

/// Mean feature distance between the two halves of a seeded random split.
pub fn diversity(samples: &[MotionSequence], topo: &SkeletonTopology, seed: u64) -> Result<f64> {
    if samples.len() < 2 {
        return Err(Error::InsufficientSamples(format!("diversity needs 2 samples, got {}", samples.len())));
    }
    let feats: Vec<Vec<f64>> = samples.iter().map(|m| root_relative_features(m, topo)).collect();
    if feats.iter().any(|f| f.len() != feats[0].len()) {
        return Err(Error::ShapeMismatch("diversity samples differ in shape".into()));
    }
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let half = samples.len() / 2;
    let total: f64 = (0..half).map(|i| euclid(&feats[order[i]], &feats[order[half + i]])).sum();
    Ok(total / half as f64)
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Root-relative positions followed by per-frame joint velocities
/// (forward differences, zero for the last frame).
pub fn motion_features(motion: &MotionSequence, topo: &SkeletonTopology) -> Vec<f64> {
    let mut out = root_relative_features(motion, topo);
    let (t_len, k) = (motion.frames(), motion.joints());
    for t in 0..t_len {
        for j in 0..k {
            let v = if t + 1 < t_len { vec3::sub(motion.joint(t + 1, j), motion.joint(t, j)) } else { [0.0; 3] };
            out.extend_from_slice(&v);
        }
    }
    out
}

/// Fixed Gaussian random projection to a lower dimension.
#[derive(Debug, Clone)]
pub struct RandomProjection {
    input: usize,
    output: usize,
    weights: Vec<f64>,
}

impl RandomProjection {
    pub fn new(input: usize, output: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = 1.0 / (output as f64).sqrt();
        let weights = (0..input * output).map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            scale * z
        })
        .collect();
        Self { input, output, weights }
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input {
            return Err(Error::ShapeMismatch(format!("projection expects {} inputs, got {}", self.input, x.len())));
        }
        Ok((0..self.output).map(|o| self.weights[o * self.input..(o + 1) * self.input].iter().zip(x).map(|(w, v)| w * v).sum()).collect())
    }
}

/// Projected FFD features for a set of motions.
pub fn ffd_features(motions: &[MotionSequence], topo: &SkeletonTopology, seed: u64) -> Result<Vec<Vec<f64>>> {
    let raw: Vec<Vec<f64>> = motions.iter().map(|m| motion_features(m, topo)).collect();
    let Some(first) = raw.first() else { return Ok(Vec::new()) };
    let proj = RandomProjection::new(first.len(), FFD_DIM, seed);
    raw.iter().map(|f| proj.apply(f)).collect()
}

/// Symmetric eigendecomposition by cyclic Jacobi rotations.
///
/// `a` is row-major `n x n`. Returns eigenvalues and row-major eigenvectors
/// stored as columns.
pub fn jacobi_eigen(a: &[f64], n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut m = a.to_vec();
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    let scale = m.iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
    for _sweep in 0..100 {
        let off: f64 = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| m[i * n + j].powi(2)).sum();
        if off.sqrt() <= JACOBI_TOL * scale {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (m[q * n + q] - m[p * n + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (mkp, mkq) = (m[k * n + p], m[k * n + q]);
                    m[k * n + p] = c * mkp - s * mkq;
                    m[k * n + q] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let (mpk, mqk) = (m[p * n + k], m[q * n + k]);
                    m[p * n + k] = c * mpk - s * mqk;
                    m[q * n + k] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let (vkp, vkq) = (v[k * n + p], v[k * n + q]);
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    ((0..n).map(|i| m[i * n + i]).collect(), v)
}

fn mean_cov(set: &[Vec<f64>], dim: usize) -> (Vec<f64>, Vec<f64>) {
    let n = set.len() as f64;
    let mut mu = vec![0.0; dim];
    for x in set {
        for (m, v) in mu.iter_mut().zip(x) {
            *m += v / n;
        }
    }
    let mut cov = vec![0.0; dim * dim];
    for x in set {
        for i in 0..dim {
            let di = x[i] - mu[i];
            for j in 0..dim {
                cov[i * dim + j] += di * (x[j] - mu[j]) / (n - 1.0);
            }
        }
    }
    (mu, cov)
}

fn matmul(a: &[f64], b: &[f64], n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for k in 0..n {
            let aik = a[i * n + k];
            for j in 0..n {
                out[i * n + j] += aik * b[k * n + j];
            }
        }
    }
    out
}

fn psd_sqrt(a: &[f64], n: usize) -> Vec<f64> {
    let (vals, vecs) = jacobi_eigen(a, n);
    let mut out = vec![0.0; n * n];
    for (e, &lam) in vals.iter().enumerate() {
        let s = lam.max(0.0).sqrt();
        for i in 0..n {
            for j in 0..n {
                out[i * n + j] += s * vecs[i * n + e] * vecs[j * n + e];
            }
        }
    }
    out
}

/// Fréchet distance between Gaussian fits of two feature sets.
pub fn frechet_feature_distance(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<f64> {
    let dim = a.first().or(b.first()).map_or(0, |v| v.len());
    if dim == 0 || dim > 64 {
        return Err(Error::ShapeMismatch(format!("feature dimension {dim} outside 1..=64")));
    }
    if a.iter().chain(b).any(|v| v.len() != dim) {
        return Err(Error::ShapeMismatch("feature vectors differ in length".into()));
    }
    for set in [a, b] {
        if set.len() < dim + 1 {
            return Err(Error::InsufficientSamples(format!("need {} feature vectors, got {}", dim + 1, set.len())));
        }
    }
    let (mu_a, cov_a) = mean_cov(a, dim);
    let (mu_b, cov_b) = mean_cov(b, dim);
    let sa = psd_sqrt(&cov_a, dim);
    let mut m = matmul(&matmul(&sa, &cov_b, dim), &sa, dim);
    for i in 0..dim {
        for j in 0..i {
            let s = 0.5 * (m[i * dim + j] + m[j * dim + i]);
            m[i * dim + j] = s;
            m[j * dim + i] = s;
        }
    }
    let (vals, _) = jacobi_eigen(&m, dim);
    let tr_sqrt: f64 = vals.iter().map(|l| l.max(0.0).sqrt()).sum();
    let mean_term: f64 = mu_a.iter().zip(&mu_b).map(|(x, y)| (x - y) * (x - y)).sum();
    let tr: f64 = (0..dim).map(|i| cov_a[i * dim + i] + cov_b[i * dim + i]).sum();
    let d = mean_term + tr - 2.0 * tr_sqrt;
    if !d.is_finite() {
        return Err(Error::NonFinite("frechet feature distance".into()));
    }
    Ok(d.max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn topo() -> SkeletonTopology {
        SkeletonTopology::toy()
    }

    fn random_motion(rng: &mut ChaCha8Rng, frames: usize) -> MotionSequence {
        let pos = (0..frames * 8).map(|_| [0, 1, 2].map(|_| rng.random_range(-1.0..1.0))).collect();
        MotionSequence::new(10.0, frames, 8, pos).unwrap()
    }

    fn offset(m: &MotionSequence, d: Vec3) -> MotionSequence {
        MotionSequence::new(m.fps(), m.frames(), m.joints(), m.positions().iter().map(|p| vec3::add(*p, d)).collect())
            .unwrap()
    }

    #[test]
    fn mpjpe_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = random_motion(&mut rng, 5);
        assert_eq!(mpjpe(&m, &m).unwrap(), 0.0);
        assert!((mpjpe(&offset(&m, [0.03, 0.0, 0.04]), &m).unwrap() - 5.0).abs() < 1e-9);
    }

    #[test]
    fn t_root_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let m = random_motion(&mut rng, 5);
        assert_eq!(t_root(&m, &m, &topo()).unwrap(), 0.0);
        assert!((t_root(&offset(&m, [0.0, 0.1, 0.0]), &m, &topo()).unwrap() - 10.0).abs() < 1e-9);
    }

    fn foot_motion(left: impl Fn(usize) -> Vec3, right: impl Fn(usize) -> Vec3, frames: usize) -> MotionSequence {
        let rest = SkeletonTopology::toy_rest_pose();
        let n = *topo().named();
        let f = (0..frames)
            .map(|t| {
                let mut p = rest.clone();
                p[n.lfoot] = left(t);
                p[n.rfoot] = right(t);
                p
            })
            .collect();
        MotionSequence::from_frames(10.0, f).unwrap()
    }

    #[test]
    fn foot_sliding_hand_case() {
        // 11 frames: 10 contact frames with a successor, each sliding 2 cm.
        let m = foot_motion(|t| [0.02 * t as f64, 0.0, 0.0], |_| [0.0, 0.3, 0.0], 11);
        assert!((foot_sliding(&m, &topo(), 0.0, 0.05) - 2.0).abs() < 1e-12);
        let lifted = foot_motion(|t| [0.02 * t as f64, 0.2, 0.0], |_| [0.0, 0.3, 0.0], 11);
        assert_eq!(foot_sliding(&lifted, &topo(), 0.0, 0.05), 0.0);
    }

    #[test]
    fn contact_mixed_hands() {
        // Left hand: TP, FP, FN, TN; right hand: FN, TN, TN, TN.
        let pred = [[true, false], [true, false], [false, false], [false, false]];
        let gt = [[true, true], [false, false], [true, false], [false, false]];
        let s = contact_scores(&pred, &gt).unwrap();
        assert_eq!(s.prec, 0.5);
        assert!((s.rec - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(s.acc, 0.625);
    }

    #[test]
    fn contact_single_stream_case() {
        // One TP, FP, FN and TN each, counted over exactly four hand-frames.
        let pred = [[true, false], [true, false]];
        let gt = [[true, true], [false, false]];
        let s = contact_scores(&pred, &gt).unwrap();
        assert_eq!((s.prec, s.rec, s.acc, s.f1), (0.5, 0.5, 0.5, 0.5));
    }

    #[test]
    fn contact_conventions() {
        let none = contact_scores(&[[false, false]], &[[false, false]]).unwrap();
        assert_eq!((none.prec, none.rec, none.acc, none.f1), (1.0, 1.0, 1.0, 1.0));
        let missed = contact_scores(&[[false, false]], &[[true, false]]).unwrap();
        assert_eq!((missed.prec, missed.rec, missed.f1), (0.0, 0.0, 0.0));
    }

    #[test]
    fn far_hand_has_zero_recall() {
        let m = MotionSequence::from_frames(10.0, vec![SkeletonTopology::toy_rest_pose(); 3]).unwrap();
        let s = contact_metrics(&m, &topo(), &[[5.0, 5.0, 5.0]], &[[true, true]; 3], 0.1).unwrap();
        assert_eq!(s.rec, 0.0);
    }

    #[test]
    fn goal_distance_cases() {
        let rest = SkeletonTopology::toy_rest_pose();
        let m = MotionSequence::from_frames(10.0, vec![rest.clone(); 2]).unwrap();
        let root = rest[0];
        assert_eq!(goal_distance(&m, [root[0], 0.0, root[2]], &topo()), 0.0);
        assert!((goal_distance(&m, [root[0] + 0.2, 5.0, root[2]], &topo()) - 20.0).abs() < 1e-9);
    }

    #[test]
    fn diversity_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = random_motion(&mut rng, 4);
        assert_eq!(diversity(&[m.clone(), m.clone(), m.clone(), m.clone()], &topo(), 0).unwrap(), 0.0);
        let o = random_motion(&mut rng, 4);
        let d = diversity(&[m.clone(), o.clone()], &topo(), 5).unwrap();
        let expect = euclid(&root_relative_features(&m, &topo()), &root_relative_features(&o, &topo()));
        assert!((d - expect).abs() < 1e-12);
        assert!(diversity(&[m], &topo(), 0).is_err());
    }

    #[test]
    fn diversity_fixed_seed_is_stable() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let set: Vec<_> = (0..10).map(|_| random_motion(&mut rng, 3)).collect();
        assert_eq!(diversity(&set, &topo(), 11).unwrap(), diversity(&set, &topo(), 11).unwrap());
    }

    fn random_set(rng: &mut ChaCha8Rng, n: usize, dim: usize, shift: f64) -> Vec<Vec<f64>> {
        (0..n).map(|_| (0..dim).map(|i| {
            let z: f64 = StandardNormal.sample(rng);
            shift + (i as f64 + 1.0) * z
        }).collect()).collect()
    }

    #[test]
    fn jacobi_matches_nalgebra() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 12;
        let mut a = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..=i {
                let v: f64 = rng.random_range(-1.0..1.0);
                a[i * n + j] = v;
                a[j * n + i] = v;
            }
        }
        let (mut ours, vecs) = jacobi_eigen(&a, n);
        ours.sort_by(f64::total_cmp);
        let na = nalgebra::DMatrix::from_row_slice(n, n, &a);
        let mut theirs: Vec<f64> = na.symmetric_eigen().eigenvalues.iter().copied().collect();
        theirs.sort_by(f64::total_cmp);
        for (x, y) in ours.iter().zip(&theirs) {
            assert!((x - y).abs() < 1e-9);
        }
        // Columns are orthonormal.
        for p in 0..n {
            for q in 0..n {
                let d: f64 = (0..n).map(|k| vecs[k * n + p] * vecs[k * n + q]).sum();
                assert!((d - if p == q { 1.0 } else { 0.0 }).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn ffd_self_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let a = random_set(&mut rng, 200, 16, 0.0);
        assert!(frechet_feature_distance(&a, &a).unwrap() < 1e-6);
    }

    #[test]
    fn ffd_one_dimensional_closed_form() {
        let a: Vec<Vec<f64>> = (0..50).map(|i| vec![(i as f64 - 24.5) * 0.1]).collect();
        let b: Vec<Vec<f64>> = a.iter().map(|v| vec![v[0] + 1.0]).collect();
        assert!((frechet_feature_distance(&a, &b).unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn ffd_matches_nalgebra_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let dim = 6;
        let a = random_set(&mut rng, 80, dim, 0.0);
        let b = random_set(&mut rng, 90, dim, 0.3);
        let fit = |s: &[Vec<f64>]| {
            let m = nalgebra::DMatrix::from_fn(s.len(), dim, |i, j| s[i][j]);
            let mu = m.row_mean();
            let c = m.clone() - nalgebra::DMatrix::from_fn(s.len(), dim, |_, j| mu[j]);
            (mu, c.transpose() * c / (s.len() as f64 - 1.0))
        };
        let (ma, ca) = fit(&a);
        let (mb, cb) = fit(&b);
        let sqrt = |m: &nalgebra::DMatrix<f64>| {
            let e = m.clone().symmetric_eigen();
            let d = nalgebra::DMatrix::from_diagonal(&e.eigenvalues.map(|l| l.max(0.0).sqrt()));
            &e.eigenvectors * d * e.eigenvectors.transpose()
        };
        let sa = sqrt(&ca);
        let inner = &sa * &cb * &sa;
        let inner = (&inner + inner.transpose()) * 0.5;
        let expect = (ma - mb).norm_squared() + ca.trace() + cb.trace() - 2.0 * sqrt(&inner).trace();
        assert!((frechet_feature_distance(&a, &b).unwrap() - expect).abs() < 1e-8);
    }

    #[test]
    fn ffd_needs_enough_samples() {
        let a = vec![vec![0.0, 1.0]; 2];
        assert!(matches!(frechet_feature_distance(&a, &a), Err(Error::InsufficientSamples(_))));
    }

    #[test]
    fn ffd_features_have_fixed_dim() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let set: Vec<_> = (0..3).map(|_| random_motion(&mut rng, 4)).collect();
        let f = ffd_features(&set, &topo(), 0).unwrap();
        assert!(f.iter().all(|v| v.len() == FFD_DIM));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn ffd_symmetric_nonnegative(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random_set(&mut rng, 30, 5, 0.0);
            let b = random_set(&mut rng, 40, 5, 0.5);
            let ab = frechet_feature_distance(&a, &b).unwrap();
            let ba = frechet_feature_distance(&b, &a).unwrap();
            prop_assert!(ab >= 0.0);
            prop_assert!((ab - ba).abs() < 1e-8 * ab.max(1.0));
        }

        #[test]
        fn ffd_rotation_invariant(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let dim = 4;
            let a = random_set(&mut rng, 30, dim, 0.0);
            let b = random_set(&mut rng, 30, dim, 0.4);
            let g = nalgebra::DMatrix::<f64>::from_fn(dim, dim, |_, _| StandardNormal.sample(&mut rng));
            let q = g.qr().q();
            let rot = |s: &[Vec<f64>]| -> Vec<Vec<f64>> {
                s.iter().map(|v| (&q * nalgebra::DVector::from_column_slice(v)).iter().copied().collect()).collect()
            };
            let d0 = frechet_feature_distance(&a, &b).unwrap();
            let d1 = frechet_feature_distance(&rot(&a), &rot(&b)).unwrap();
            prop_assert!((d0 - d1).abs() < 1e-6);
        }
    }
}
