//! Skeletons, motion sequences, rigid transforms and capsule body sampling.
//!
//! Conventions: right-handed world frame, y up, lengths in meters. The floor
//! is the plane y = 0.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vec3::{self, Vec3};

/// Default capture rate of generated motion.
pub const DEFAULT_FPS: f64 = 10.0;

const DEGENERATE_LEN: f64 = 1e-9;

/// Indices of the joints that losses, metrics and generators refer to by role.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NamedJoints {
    pub root: usize,
    pub lhip: usize,
    pub rhip: usize,
    pub lfoot: usize,
    pub rfoot: usize,
    pub lhand: usize,
    pub rhand: usize,
    pub head: usize,
}

impl NamedJoints {
    fn all(&self) -> [usize; 8] {
        [
            self.root, self.lhip, self.rhip, self.lfoot, self.rfoot, self.lhand, self.rhand,
            self.head,
        ]
    }
}

/// A bone connects `parent` to `child`; its vector is `j[parent] - j[child]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Bone {
    pub parent: usize,
    pub child: usize,
}

/// Joint tree with named role indices and per-bone capsule radii.
#[derive(Debug, Clone, PartialEq)]
pub struct SkeletonTopology {
    joint_names: Vec<String>,
    parents: Vec<Option<usize>>,
    bones: Vec<Bone>,
    named: NamedJoints,
    capsule_radii: Vec<f64>,
}

impl SkeletonTopology {
    /// Builds and validates a topology. Bones are listed in joint order, one
    /// per non-root joint, so `capsule_radii` has `K - 1` entries.
    pub fn new(
        joint_names: Vec<String>,
        parents: Vec<Option<usize>>,
        named: NamedJoints,
        capsule_radii: Vec<f64>,
    ) -> Result<Self> {
        let k = parents.len();
        if k == 0 {
            return Err(Error::InvalidTopology("no joints".into()));
        }
        if joint_names.len() != k {
            return Err(Error::InvalidTopology(format!(
                "{} joint names for {} joints",
                joint_names.len(),
                k
            )));
        }
        let roots: Vec<usize> = (0..k).filter(|&j| parents[j].is_none()).collect();
        if roots.len() != 1 {
            return Err(Error::InvalidTopology(format!(
                "expected exactly one root, found {}",
                roots.len()
            )));
        }
        for (j, p) in parents.iter().enumerate() {
            if let Some(p) = *p {
                if p >= k || p == j {
                    return Err(Error::InvalidTopology(format!("joint {j} has invalid parent {p}")));
                }
            }
        }
        // Every joint must reach the root within K hops, otherwise there is a cycle.
        for start in 0..k {
            let mut cur = start;
            let mut hops = 0;
            while let Some(p) = parents[cur] {
                cur = p;
                hops += 1;
                if hops > k {
                    return Err(Error::InvalidTopology(format!("cycle through joint {start}")));
                }
            }
        }
        if named.all().iter().any(|&i| i >= k) {
            return Err(Error::InvalidTopology("named joint index out of range".into()));
        }
        if named.lhip == named.rhip {
            return Err(Error::InvalidTopology("lhip and rhip must differ".into()));
        }
        let bones: Vec<Bone> = parents
            .iter()
            .enumerate()
            .filter_map(|(child, p)| p.map(|parent| Bone { parent, child }))
            .collect();
        if capsule_radii.len() != bones.len() {
            return Err(Error::InvalidTopology(format!(
                "{} capsule radii for {} bones",
                capsule_radii.len(),
                bones.len()
            )));
        }
        if capsule_radii.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
            return Err(Error::InvalidTopology("capsule radii must be positive".into()));
        }
        Ok(Self { joint_names, parents, bones, named, capsule_radii })
    }

    /// The 8-joint desk skeleton: root, lhip, rhip, lfoot, rfoot, lhand,
    /// rhand, head. Every limb hangs off the root; the root-head torso
    /// capsule is 0.10 m, all others 0.05 m.
    pub fn toy() -> Self {
        let names = ["root", "lhip", "rhip", "lfoot", "rfoot", "lhand", "rhand", "head"];
        let parents = vec![None, Some(0), Some(0), Some(1), Some(2), Some(0), Some(0), Some(0)];
        let named = NamedJoints {
            root: 0,
            lhip: 1,
            rhip: 2,
            lfoot: 3,
            rfoot: 4,
            lhand: 5,
            rhand: 6,
            head: 7,
        };
        let radii = vec![0.05, 0.05, 0.05, 0.05, 0.05, 0.05, 0.10];
        Self::new(names.iter().map(|s| s.to_string()).collect(), parents, named, radii)
            .expect("toy skeleton is valid")
    }

    /// Rest pose of [`SkeletonTopology::toy`] in its local frame: root above
    /// the origin, facing +z, feet on the floor. The hips are laid out so the
    /// hip cross product of [`initial_orientation`] points along +z.
    pub fn toy_rest_pose() -> Vec<Vec3> {
        vec![
            [0.0, 0.90, 0.0],
            [-0.12, 0.82, 0.0],
            [0.12, 0.82, 0.0],
            [-0.12, 0.0, 0.0],
            [0.12, 0.0, 0.0],
            [-0.30, 0.85, 0.05],
            [0.30, 0.85, 0.05],
            [0.0, 1.60, 0.0],
        ]
    }

    pub fn joint_count(&self) -> usize {
        self.parents.len()
    }

    pub fn joint_names(&self) -> &[String] {
        &self.joint_names
    }

    pub fn parents(&self) -> &[Option<usize>] {
        &self.parents
    }

    pub fn bones(&self) -> &[Bone] {
        &self.bones
    }

    pub fn named(&self) -> &NamedJoints {
        &self.named
    }

    pub fn capsule_radii(&self) -> &[f64] {
        &self.capsule_radii
    }
}

/// `T x K` joint positions in world meters, frame-major.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionSequence {
    fps: f64,
    frames: usize,
    joints: usize,
    positions: Vec<Vec3>,
}

impl MotionSequence {
    pub fn new(fps: f64, frames: usize, joints: usize, positions: Vec<Vec3>) -> Result<Self> {
        if frames == 0 || joints == 0 {
            return Err(Error::InvalidMotion("T and K must be at least 1".into()));
        }
        if positions.len() != frames * joints {
            return Err(Error::InvalidMotion(format!(
                "{} positions for T={frames}, K={joints}",
                positions.len()
            )));
        }
        if !(fps.is_finite() && fps > 0.0) {
            return Err(Error::InvalidMotion(format!("fps must be positive, got {fps}")));
        }
        if let Some(i) = positions.iter().position(|p| !vec3::is_finite(*p)) {
            return Err(Error::InvalidMotion(format!(
                "non-finite joint at frame {}, joint {}",
                i / joints,
                i % joints
            )));
        }
        Ok(Self { fps, frames, joints, positions })
    }

    /// Builds a sequence from per-frame joint lists.
    pub fn from_frames(fps: f64, frames: Vec<Vec<Vec3>>) -> Result<Self> {
        let t = frames.len();
        let k = frames.first().map_or(0, |f| f.len());
        if frames.iter().any(|f| f.len() != k) {
            return Err(Error::InvalidMotion("frames have differing joint counts".into()));
        }
        Self::new(fps, t, k, frames.into_iter().flatten().collect())
    }

    pub fn fps(&self) -> f64 {
        self.fps
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn joints(&self) -> usize {
        self.joints
    }

    pub fn positions(&self) -> &[Vec3] {
        &self.positions
    }

    pub fn frame(&self, t: usize) -> &[Vec3] {
        &self.positions[t * self.joints..(t + 1) * self.joints]
    }

    #[inline]
    pub fn joint(&self, t: usize, k: usize) -> Vec3 {
        self.positions[t * self.joints + k]
    }

    pub fn check_topology(&self, topo: &SkeletonTopology) -> Result<()> {
        if self.joints != topo.joint_count() {
            return Err(Error::ShapeMismatch(format!(
                "motion has {} joints, skeleton has {}",
                self.joints,
                topo.joint_count()
            )));
        }
        Ok(())
    }
}

/// Rotation followed by translation: `p -> R p + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    rotation: [[f64; 3]; 3],
    translation: Vec3,
}

impl RigidTransform {
    pub fn new(rotation: [[f64; 3]; 3], translation: Vec3) -> Result<Self> {
        let r = rotation;
        for (i, row) in r.iter().enumerate() {
            for (j, _) in row.iter().enumerate() {
                let rrt: f64 = (0..3).map(|m| r[i][m] * r[j][m]).sum();
                let expect = if i == j { 1.0 } else { 0.0 };
                if !rrt.is_finite() || (rrt - expect).abs() > 1e-6 {
                    return Err(Error::InvalidTransform("rotation is not orthonormal".into()));
                }
            }
        }
        let det = vec3::dot(r[0], vec3::cross(r[1], r[2]));
        if (det - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidTransform(format!("rotation determinant {det}, expected 1")));
        }
        if !vec3::is_finite(translation) {
            return Err(Error::InvalidTransform("non-finite translation".into()));
        }
        Ok(Self { rotation, translation })
    }

    pub fn identity() -> Self {
        Self {
            rotation: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            translation: [0.0; 3],
        }
    }

    /// Rotation by `angle` radians about +y, then translation.
    pub fn yaw(angle: f64, translation: Vec3) -> Self {
        let (s, c) = angle.sin_cos();
        Self { rotation: [[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]], translation }
    }

    pub fn rotation(&self) -> &[[f64; 3]; 3] {
        &self.rotation
    }

    pub fn translation(&self) -> Vec3 {
        self.translation
    }

    #[inline]
    pub fn rotate(&self, p: Vec3) -> Vec3 {
        let r = &self.rotation;
        [vec3::dot(r[0], p), vec3::dot(r[1], p), vec3::dot(r[2], p)]
    }

    #[inline]
    pub fn apply(&self, p: Vec3) -> Vec3 {
        vec3::add(self.rotate(p), self.translation)
    }
}

/// Maps every point through `xf`.
pub fn apply_transform(points: &[Vec3], xf: &RigidTransform) -> Vec<Vec3> {
    points.iter().map(|&p| xf.apply(p)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EntityClass {
    Human,
    Object,
    Scene,
}

impl EntityClass {
    /// One-hot label: human `[1,0,0]`, object `[0,1,0]`, scene `[0,0,1]`.
    pub fn one_hot(self) -> [u8; 3] {
        match self {
            EntityClass::Human => [1, 0, 0],
            EntityClass::Object => [0, 1, 0],
            EntityClass::Scene => [0, 0, 1],
        }
    }
}

/// A point set tagged with the class of the entity it samples.
#[derive(Debug, Clone, PartialEq)]
pub struct EntitySnapshot {
    points: Vec<Vec3>,
    class: EntityClass,
}

impl EntitySnapshot {
    pub fn new(points: Vec<Vec3>, class: EntityClass) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptyEntity);
        }
        if points.iter().any(|p| !vec3::is_finite(*p)) {
            return Err(Error::InvalidMotion("entity point is not finite".into()));
        }
        Ok(Self { points, class })
    }

    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    pub fn class(&self) -> EntityClass {
        self.class
    }
}

/// Samples points on a capsule around every bone of `frame`.
///
/// Each bone gets `samples_per_bone` points at uniformly random positions
/// along the segment, pushed out by the capsule radius in a random direction
/// perpendicular to the bone. A zero-length bone is replaced by a sphere of
/// the capsule radius.
pub fn sample_body_surface(
    frame: &[Vec3],
    topo: &SkeletonTopology,
    samples_per_bone: usize,
    seed: u64,
) -> Result<EntitySnapshot> {
    if frame.len() != topo.joint_count() {
        return Err(Error::ShapeMismatch(format!(
            "frame has {} joints, skeleton has {}",
            frame.len(),
            topo.joint_count()
        )));
    }
    if samples_per_bone == 0 {
        return Err(Error::InvalidConfig("samples_per_bone must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Vec::with_capacity(topo.bones().len() * samples_per_bone);
    for (bone, &radius) in topo.bones().iter().zip(topo.capsule_radii()) {
        let a = frame[bone.parent];
        let b = frame[bone.child];
        let axis = vec3::sub(b, a);
        let len = vec3::norm(axis);
        if len < DEGENERATE_LEN {
            for _ in 0..samples_per_bone {
                let dir = random_unit(&mut rng);
                points.push(vec3::add(a, vec3::scale(dir, radius)));
            }
            continue;
        }
        let unit = vec3::scale(axis, 1.0 / len);
        let e1 = vec3::any_perpendicular(unit);
        let e2 = vec3::cross(unit, e1);
        for _ in 0..samples_per_bone {
            let s: f64 = rng.random();
            let phi: f64 = rng.random::<f64>() * std::f64::consts::TAU;
            let radial = vec3::add(vec3::scale(e1, phi.cos()), vec3::scale(e2, phi.sin()));
            points.push(vec3::add(vec3::lerp(a, b, s), vec3::scale(radial, radius)));
        }
    }
    if points.is_empty() {
        // Single-joint skeleton: nothing to sample along, fall back to the root.
        let r = 0.05;
        for _ in 0..samples_per_bone {
            points.push(vec3::add(frame[0], vec3::scale(random_unit(&mut rng), r)));
        }
    }
    EntitySnapshot::new(points, EntityClass::Human)
}

fn random_unit(rng: &mut impl Rng) -> Vec3 {
    let z: f64 = rng.random_range(-1.0..1.0);
    let phi: f64 = rng.random::<f64>() * std::f64::consts::TAU;
    let r = (1.0 - z * z).sqrt();
    [r * phi.cos(), r * phi.sin(), z]
}

/// Bone vectors `j[parent(n)] - j[child(n)]`, one per bone.
pub fn bone_vectors(frame: &[Vec3], topo: &SkeletonTopology) -> Vec<Vec3> {
    topo.bones().iter().map(|b| vec3::sub(frame[b.parent], frame[b.child])).collect()
}

/// Result of [`initial_orientation`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Heading {
    /// Raw cross product of the unit hip vectors (not re-normalized).
    pub direction: Vec3,
    /// Set when the two hip vectors are parallel and `direction` is zero.
    pub degenerate: bool,
}

/// Heading vector from the hip geometry: `unit(s_lhip) x unit(s_rhip)` where
/// `s_hip = j[root] - j[hip]`.
pub fn initial_orientation(frame0: &[Vec3], topo: &SkeletonTopology) -> Result<Heading> {
    let n = topo.named();
    let (dir, _) = heading_with_jacobian(frame0[n.root], frame0[n.lhip], frame0[n.rhip])?;
    let degenerate = vec3::norm(dir) < 1e-12;
    Ok(Heading { direction: if degenerate { [0.0; 3] } else { dir }, degenerate })
}

/// Hip cross product together with its Jacobians with respect to the root,
/// lhip and rhip positions (`jac[j][a][b] = d dir[a] / d joint_j[b]`).
pub(crate) fn heading_with_jacobian(
    root: Vec3,
    lhip: Vec3,
    rhip: Vec3,
) -> Result<(Vec3, [[[f64; 3]; 3]; 3])> {
    let sl = vec3::sub(root, lhip);
    let sr = vec3::sub(root, rhip);
    let nl = vec3::norm(sl);
    let nr = vec3::norm(sr);
    if nl < DEGENERATE_LEN || nr < DEGENERATE_LEN {
        return Err(Error::DegenerateSkeleton("hip bone has zero length".into()));
    }
    let ul = vec3::scale(sl, 1.0 / nl);
    let ur = vec3::scale(sr, 1.0 / nr);
    let dir = vec3::cross(ul, ur);

    // d unit(s)/ds = (I - u u^T) / |s|
    let unit_jac = |u: Vec3, n: f64| {
        let mut m = [[0.0; 3]; 3];
        for a in 0..3 {
            for b in 0..3 {
                m[a][b] = ((a == b) as u8 as f64 - u[a] * u[b]) / n;
            }
        }
        m
    };
    let jl = unit_jac(ul, nl);
    let jr = unit_jac(ur, nr);
    // d(ul x ur) = dul x ur - dur x ul ... expressed column by column.
    let mut d_sl = [[0.0; 3]; 3];
    let mut d_sr = [[0.0; 3]; 3];
    for b in 0..3 {
        let col_l = [jl[0][b], jl[1][b], jl[2][b]];
        let col_r = [jr[0][b], jr[1][b], jr[2][b]];
        let dl = vec3::cross(col_l, ur);
        let dr = vec3::cross(ul, col_r);
        for a in 0..3 {
            d_sl[a][b] = dl[a];
            d_sr[a][b] = dr[a];
        }
    }
    // sl = root - lhip, sr = root - rhip
    let mut jac = [[[0.0; 3]; 3]; 3];
    for a in 0..3 {
        for b in 0..3 {
            jac[0][a][b] = d_sl[a][b] + d_sr[a][b];
            jac[1][a][b] = -d_sl[a][b];
            jac[2][a][b] = -d_sr[a][b];
        }
    }
    Ok((dir, jac))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single_bone(radius: f64) -> SkeletonTopology {
        let named = NamedJoints {
            root: 0,
            lhip: 0,
            rhip: 1,
            lfoot: 1,
            rfoot: 1,
            lhand: 1,
            rhand: 1,
            head: 1,
        };
        SkeletonTopology::new(vec!["a".into(), "b".into()], vec![None, Some(0)], named, vec![radius])
            .unwrap()
    }

    #[test]
    fn identity_transform() {
        let out = apply_transform(&[[1.0, 2.0, 3.0]], &RigidTransform::identity());
        assert_eq!(out, vec![[1.0, 2.0, 3.0]]);
    }

    #[test]
    fn yaw_quarter_turn() {
        let xf = RigidTransform::yaw(std::f64::consts::FRAC_PI_2, [0.0; 3]);
        let p = xf.apply([1.0, 0.0, 0.0]);
        assert!(p[0].abs() < 1e-15 && p[1].abs() < 1e-15 && (p[2] + 1.0).abs() < 1e-15);
    }

    #[test]
    fn pure_translation() {
        let xf = RigidTransform::yaw(0.0, [0.0, 1.0, 0.0]);
        assert_eq!(xf.apply([0.0; 3]), [0.0, 1.0, 0.0]);
    }

    #[test]
    fn rejects_non_orthonormal() {
        let bad = [[2.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        assert!(matches!(RigidTransform::new(bad, [0.0; 3]), Err(Error::InvalidTransform(_))));
        let reflect = [[-1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        assert!(RigidTransform::new(reflect, [0.0; 3]).is_err());
    }

    #[test]
    fn capsule_samples_sit_on_radius() {
        let topo = single_bone(0.05);
        let frame = [[0.0, 0.0, 0.0], [0.0, 0.4, 0.0]];
        let snap = sample_body_surface(&frame, &topo, 8, 3).unwrap();
        assert_eq!(snap.points().len(), 8);
        assert_eq!(snap.class(), EntityClass::Human);
        for p in snap.points() {
            let radial = (p[0] * p[0] + p[2] * p[2]).sqrt();
            assert!((radial - 0.05).abs() < 1e-12);
            assert!(p[1] >= 0.0 && p[1] <= 0.4);
        }
    }

    #[test]
    fn capsule_samples_near_bone_midpoint() {
        let topo = SkeletonTopology::toy();
        let frame = SkeletonTopology::toy_rest_pose();
        let snap = sample_body_surface(&frame, &topo, 16, 11).unwrap();
        assert_eq!(snap.points().len(), topo.bones().len() * 16);
        let max_len = bone_vectors(&frame, &topo).iter().map(|b| vec3::norm(*b)).fold(0.0, f64::max);
        for (i, p) in snap.points().iter().enumerate() {
            let bone = topo.bones()[i / 16];
            let r = topo.capsule_radii()[i / 16];
            let mid = vec3::lerp(frame[bone.parent], frame[bone.child], 0.5);
            assert!(vec3::dist(*p, mid) <= max_len / 2.0 + r + 1e-12);
        }
    }

    #[test]
    fn degenerate_bone_samples_sphere() {
        let topo = single_bone(0.05);
        let frame = [[1.0, 1.0, 1.0], [1.0, 1.0, 1.0]];
        let snap = sample_body_surface(&frame, &topo, 5, 0).unwrap();
        for p in snap.points() {
            assert!((vec3::dist(*p, frame[0]) - 0.05).abs() < 1e-12);
        }
    }

    #[test]
    fn surface_sampling_is_seeded() {
        let topo = SkeletonTopology::toy();
        let frame = SkeletonTopology::toy_rest_pose();
        let a = sample_body_surface(&frame, &topo, 4, 9).unwrap();
        let b = sample_body_surface(&frame, &topo, 4, 9).unwrap();
        let c = sample_body_surface(&frame, &topo, 4, 10).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn bone_vector_cases() {
        let topo = single_bone(0.05);
        assert_eq!(bone_vectors(&[[0.0, 1.0, 0.0], [0.0, 0.0, 0.0]], &topo), vec![[0.0, 1.0, 0.0]]);
        assert_eq!(bone_vectors(&[[0.5, 0.5, 0.5], [0.5, 0.5, 0.5]], &topo), vec![[0.0; 3]]);
    }

    fn hip_frame(sl: Vec3, sr: Vec3) -> (Vec<Vec3>, SkeletonTopology) {
        let named = NamedJoints {
            root: 0,
            lhip: 1,
            rhip: 2,
            lfoot: 1,
            rfoot: 2,
            lhand: 1,
            rhand: 2,
            head: 0,
        };
        let topo = SkeletonTopology::new(
            vec!["root".into(), "lhip".into(), "rhip".into()],
            vec![None, Some(0), Some(0)],
            named,
            vec![0.05, 0.05],
        )
        .unwrap();
        // s = root - hip, with the root at the origin.
        (vec![[0.0; 3], vec3::scale(sl, -1.0), vec3::scale(sr, -1.0)], topo)
    }

    #[test]
    fn heading_hand_cross_product() {
        let (frame, topo) = hip_frame([1.0, 0.0, 0.0], [0.0, 0.0, 1.0]);
        let h = initial_orientation(&frame, &topo).unwrap();
        assert!(!h.degenerate);
        assert_eq!(h.direction, [0.0, -1.0, 0.0]);
    }

    #[test]
    fn heading_parallel_hips_flagged() {
        let (frame, topo) = hip_frame([1.0, 0.0, 0.0], [2.0, 0.0, 0.0]);
        let h = initial_orientation(&frame, &topo).unwrap();
        assert!(h.degenerate);
        assert_eq!(h.direction, [0.0; 3]);
    }

    #[test]
    fn heading_zero_length_hip_errors() {
        let (frame, topo) = hip_frame([0.0; 3], [1.0, 0.0, 0.0]);
        assert!(matches!(initial_orientation(&frame, &topo), Err(Error::DegenerateSkeleton(_))));
    }

    #[test]
    fn heading_antisymmetric_in_hips() {
        let (frame, topo) = hip_frame([0.3, -0.2, 0.1], [-0.2, -0.1, 0.4]);
        let (swapped, _) = hip_frame([-0.2, -0.1, 0.4], [0.3, -0.2, 0.1]);
        let a = initial_orientation(&frame, &topo).unwrap().direction;
        let b = initial_orientation(&swapped, &topo).unwrap().direction;
        for i in 0..3 {
            assert!((a[i] + b[i]).abs() < 1e-15);
        }
    }

    #[test]
    fn toy_rest_pose_faces_plus_z() {
        let h = initial_orientation(&SkeletonTopology::toy_rest_pose(), &SkeletonTopology::toy())
            .unwrap();
        assert!(h.direction[2] > 0.0);
        assert!(h.direction[0].abs() < 1e-12 && h.direction[1].abs() < 1e-12);
    }

    #[test]
    fn heading_jacobian_matches_finite_differences() {
        let joints = [[0.1, 0.9, -0.2], [0.25, 0.8, -0.1], [-0.05, 0.78, -0.3]];
        let (_, jac) = heading_with_jacobian(joints[0], joints[1], joints[2]).unwrap();
        let h = 1e-6;
        for j in 0..3 {
            for b in 0..3 {
                let mut plus = joints;
                let mut minus = joints;
                plus[j][b] += h;
                minus[j][b] -= h;
                let (dp, _) = heading_with_jacobian(plus[0], plus[1], plus[2]).unwrap();
                let (dm, _) = heading_with_jacobian(minus[0], minus[1], minus[2]).unwrap();
                for a in 0..3 {
                    let fd = (dp[a] - dm[a]) / (2.0 * h);
                    assert!((fd - jac[j][a][b]).abs() < 1e-7, "j={j} a={a} b={b}");
                }
            }
        }
    }

    #[test]
    fn topology_validation() {
        let named = SkeletonTopology::toy().named;
        let names: Vec<String> = (0..8).map(|i| format!("j{i}")).collect();
        let two_roots = vec![None, None, Some(0), Some(1), Some(2), Some(0), Some(0), Some(0)];
        assert!(SkeletonTopology::new(names.clone(), two_roots, named, vec![0.05; 6]).is_err());
        let cycle = vec![None, Some(2), Some(1), Some(1), Some(2), Some(0), Some(0), Some(0)];
        assert!(SkeletonTopology::new(names.clone(), cycle, named, vec![0.05; 7]).is_err());
        let ok = SkeletonTopology::toy().parents().to_vec();
        assert!(SkeletonTopology::new(names.clone(), ok.clone(), named, vec![0.0; 7]).is_err());
        let mut same_hips = named;
        same_hips.rhip = same_hips.lhip;
        assert!(SkeletonTopology::new(names, ok, same_hips, vec![0.05; 7]).is_err());
    }

    #[test]
    fn motion_rejects_non_finite() {
        assert!(MotionSequence::new(10.0, 1, 1, vec![[f64::NAN, 0.0, 0.0]]).is_err());
        assert!(MotionSequence::new(10.0, 0, 1, vec![]).is_err());
        assert!(MotionSequence::new(10.0, 1, 2, vec![[0.0; 3]]).is_err());
    }
}
