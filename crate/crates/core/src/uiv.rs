//! The interaction volume: a bounded voxel grid over the scene and per-frame
//! semantic occupancy labels for every entity inside it.
//!
//! Grid axes are ordered (h, w, d) and map to world axes (y, x, z). A voxel
//! with integer index `i` has its center at `origin + (i + 0.5) * pitch`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{EntityClass, EntitySnapshot};
use crate::vec3::Vec3;

/// Grid resolution, voxel size and placement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VolumeSpec {
    /// Voxel counts (H, W, D) along (height, width, depth).
    pub dims: [usize; 3],
    /// Voxel edge lengths in meters along (height, width, depth).
    pub pitch: [f64; 3],
    /// World position (x, y, z) of the minimal corner of voxel (0, 0, 0).
    pub origin: Vec3,
}

impl VolumeSpec {
    pub fn new(dims: [usize; 3], pitch: [f64; 3], origin: Vec3) -> Result<Self> {
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::InvalidSpec(format!("dims must be positive, got {dims:?}")));
        }
        if pitch.iter().any(|p| !(p.is_finite() && *p > 0.0)) {
            return Err(Error::InvalidSpec(format!("pitch must be positive, got {pitch:?}")));
        }
        if origin.iter().any(|o| !o.is_finite()) {
            return Err(Error::InvalidSpec("origin must be finite".into()));
        }
        Ok(Self { dims, pitch, origin })
    }

    /// A grid of `dims` voxels covering `extents` meters (height, width,
    /// depth), centered horizontally on the world origin with its floor at
    /// y = 0.
    pub fn floor_centered(dims: [usize; 3], extents: [f64; 3]) -> Result<Self> {
        let pitch = [
            extents[0] / dims[0] as f64,
            extents[1] / dims[1] as f64,
            extents[2] / dims[2] as f64,
        ];
        Self::new(dims, pitch, [-extents[1] / 2.0, 0.0, -extents[2] / 2.0])
    }

    /// 48^3 voxels over 2.4 m (height) x 4.8 m x 4.8 m.
    pub fn full() -> Self {
        Self::floor_centered([48, 48, 48], [2.4, 4.8, 4.8]).expect("valid default spec")
    }

    /// 16^3 voxels over the same physical space as [`VolumeSpec::full`].
    pub fn desk() -> Self {
        Self::floor_centered([16, 16, 16], [2.4, 4.8, 4.8]).expect("valid desk spec")
    }

    pub fn voxel_count(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    /// Physical size (height, width, depth) in meters.
    pub fn extents(&self) -> [f64; 3] {
        [
            self.dims[0] as f64 * self.pitch[0],
            self.dims[1] as f64 * self.pitch[1],
            self.dims[2] as f64 * self.pitch[2],
        ]
    }

    /// World-space axis-aligned bounds `(min, max)`.
    pub fn world_bounds(&self) -> (Vec3, Vec3) {
        let e = self.extents();
        let o = self.origin;
        (o, [o[0] + e[1], o[1] + e[0], o[2] + e[2]])
    }

    #[inline]
    pub fn linear_index(&self, h: usize, w: usize, d: usize) -> usize {
        (h * self.dims[1] + w) * self.dims[2] + d
    }

    /// Inverse of [`VolumeSpec::linear_index`].
    #[inline]
    pub fn unravel(&self, idx: usize) -> [usize; 3] {
        let d = idx % self.dims[2];
        let w = (idx / self.dims[2]) % self.dims[1];
        let h = idx / (self.dims[1] * self.dims[2]);
        [h, w, d]
    }

    /// Same resolution and placement up to single-precision storage error.
    pub fn compatible(&self, other: &VolumeSpec) -> bool {
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-6 * (1.0 + a.abs().max(b.abs()));
        self.dims == other.dims
            && (0..3).all(|i| close(self.pitch[i], other.pitch[i]))
            && (0..3).all(|i| close(self.origin[i], other.origin[i]))
    }

    pub fn ensure_compatible(&self, other: &VolumeSpec) -> Result<()> {
        if self.compatible(other) {
            Ok(())
        } else {
            Err(Error::SpecMismatch(format!("{self:?} vs {other:?}")))
        }
    }

    /// Whether a world point lies inside the grid, with `margin` meters to spare.
    pub fn contains(&self, p: Vec3, margin: f64) -> bool {
        let (lo, hi) = self.world_bounds();
        (0..3).all(|i| p[i] >= lo[i] + margin && p[i] <= hi[i] - margin)
    }
}

/// Continuous voxel index (h, w, d) of a world point. Integer values are
/// voxel centers; no clipping is applied.
#[inline]
pub fn world_to_voxel(p: Vec3, spec: &VolumeSpec) -> [f64; 3] {
    [
        (p[1] - spec.origin[1]) / spec.pitch[0] - 0.5,
        (p[0] - spec.origin[0]) / spec.pitch[1] - 0.5,
        (p[2] - spec.origin[2]) / spec.pitch[2] - 0.5,
    ]
}

/// World position of a continuous voxel index; inverse of [`world_to_voxel`].
#[inline]
pub fn voxel_to_world(u: [f64; 3], spec: &VolumeSpec) -> Vec3 {
    [
        spec.origin[0] + (u[1] + 0.5) * spec.pitch[1],
        spec.origin[1] + (u[0] + 0.5) * spec.pitch[0],
        spec.origin[2] + (u[2] + 0.5) * spec.pitch[2],
    ]
}

/// The voxel containing `p`, if it is inside the grid. Equivalent to
/// rounding the continuous index half-up, i.e. half-open voxel cubes.
pub fn containing_voxel(p: Vec3, spec: &VolumeSpec) -> Option<[usize; 3]> {
    let u = world_to_voxel(p, spec);
    let mut out = [0usize; 3];
    for a in 0..3 {
        let i = (u[a] + 0.5).floor();
        if !(i >= 0.0 && i < spec.dims[a] as f64) {
            return None;
        }
        out[a] = i as usize;
    }
    Some(out)
}

/// Label codes as stored in [`SemanticVolume`] and on disk.
pub mod label {
    pub const EMPTY: u8 = 0;
    pub const HUMAN: u8 = 1;
    pub const OBJECT: u8 = 2;
    pub const SCENE: u8 = 3;
}

pub fn class_code(class: EntityClass) -> u8 {
    match class {
        EntityClass::Human => label::HUMAN,
        EntityClass::Object => label::OBJECT,
        EntityClass::Scene => label::SCENE,
    }
}

/// One-hot label vector of a stored code.
pub fn code_one_hot(code: u8) -> [u8; 3] {
    match code {
        label::HUMAN => [1, 0, 0],
        label::OBJECT => [0, 1, 0],
        label::SCENE => [0, 0, 1],
        _ => [0, 0, 0],
    }
}

/// Combines two codes under the priority human > object > scene > empty.
#[inline]
pub fn combine_codes(a: u8, b: u8) -> u8 {
    match (a, b) {
        (label::EMPTY, x) | (x, label::EMPTY) => x,
        (x, y) => x.min(y),
    }
}

/// Per-frame one-hot-or-empty labels over a [`VolumeSpec`], stored as codes
/// laid out `t`-major, then `h`, `w`, `d`.
#[derive(Debug, Clone, PartialEq)]
pub struct SemanticVolume {
    spec: VolumeSpec,
    frames: usize,
    labels: Vec<u8>,
}

impl SemanticVolume {
    pub fn empty(spec: VolumeSpec, frames: usize) -> Self {
        Self { spec, frames, labels: vec![label::EMPTY; frames * spec.voxel_count()] }
    }

    pub fn from_codes(spec: VolumeSpec, frames: usize, labels: Vec<u8>) -> Result<Self> {
        if labels.len() != frames * spec.voxel_count() {
            return Err(Error::ShapeMismatch(format!(
                "{} labels for {} frames of {} voxels",
                labels.len(),
                frames,
                spec.voxel_count()
            )));
        }
        if let Some(bad) = labels.iter().find(|&&c| c > label::SCENE) {
            return Err(Error::InvalidSpec(format!("label code {bad} is not one-hot-or-empty")));
        }
        Ok(Self { spec, frames, labels })
    }

    pub fn spec(&self) -> &VolumeSpec {
        &self.spec
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn codes(&self) -> &[u8] {
        &self.labels
    }

    pub fn frame_codes(&self, t: usize) -> &[u8] {
        let n = self.spec.voxel_count();
        &self.labels[t * n..(t + 1) * n]
    }

    pub fn code(&self, t: usize, h: usize, w: usize, d: usize) -> u8 {
        self.labels[t * self.spec.voxel_count() + self.spec.linear_index(h, w, d)]
    }

    /// One-hot label vector at a voxel.
    pub fn label(&self, t: usize, h: usize, w: usize, d: usize) -> [u8; 3] {
        code_one_hot(self.code(t, h, w, d))
    }

    pub fn occupied_count(&self) -> usize {
        self.labels.iter().filter(|&&c| c != label::EMPTY).count()
    }

    pub fn count_code(&self, code: u8) -> usize {
        self.labels.iter().filter(|&&c| c == code).count()
    }

    /// Stacks single-frame volumes into a sequence.
    pub fn stack(frames: Vec<SemanticVolume>) -> Result<Self> {
        let first = frames.first().ok_or_else(|| Error::ShapeMismatch("no frames".into()))?;
        let spec = first.spec;
        let mut labels = Vec::with_capacity(frames.len() * spec.voxel_count());
        let mut count = 0;
        for f in &frames {
            spec.ensure_compatible(&f.spec)?;
            labels.extend_from_slice(&f.labels);
            count += f.frames;
        }
        Ok(Self { spec, frames: count, labels })
    }
}

/// Marks every voxel that holds at least one of the entity's points with the
/// entity's class. Points outside the grid are dropped.
pub fn rasterize(entity: &EntitySnapshot, spec: &VolumeSpec) -> Result<SemanticVolume> {
    if entity.points().is_empty() {
        return Err(Error::EmptyEntity);
    }
    let mut vol = SemanticVolume::empty(*spec, 1);
    let code = class_code(entity.class());
    for &p in entity.points() {
        if let Some([h, w, d]) = containing_voxel(p, spec) {
            vol.labels[spec.linear_index(h, w, d)] = code;
        }
    }
    Ok(vol)
}

/// Voxelwise union of single-frame volumes; overlapping voxels keep the
/// highest-priority class (human > object > scene).
pub fn merge(volumes: &[SemanticVolume]) -> Result<SemanticVolume> {
    let first = volumes.first().ok_or_else(|| Error::ShapeMismatch("nothing to merge".into()))?;
    let mut out = first.clone();
    for v in &volumes[1..] {
        out.spec.ensure_compatible(&v.spec)?;
        if v.frames != out.frames {
            return Err(Error::ShapeMismatch(format!("{} vs {} frames", out.frames, v.frames)));
        }
        for (o, &c) in out.labels.iter_mut().zip(&v.labels) {
            *o = combine_codes(*o, c);
        }
    }
    Ok(out)
}

/// Rasterizes and merges the entities of every frame into one sequence.
/// A frame without entities is left empty.
pub fn build_uiv(entities_per_frame: &[Vec<EntitySnapshot>], spec: &VolumeSpec) -> Result<SemanticVolume> {
    if entities_per_frame.is_empty() {
        return Err(Error::ShapeMismatch("at least one frame is required".into()));
    }
    let mut frames = Vec::with_capacity(entities_per_frame.len());
    for entities in entities_per_frame {
        let layers = entities.iter().map(|e| rasterize(e, spec)).collect::<Result<Vec<_>>>()?;
        frames.push(if layers.is_empty() { SemanticVolume::empty(*spec, 1) } else { merge(&layers)? });
    }
    SemanticVolume::stack(frames)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::collections::HashSet;

    fn snap(points: Vec<Vec3>, class: EntityClass) -> EntitySnapshot {
        EntitySnapshot::new(points, class).unwrap()
    }

    #[test]
    fn default_spec_matches_physical_extents() {
        let s = VolumeSpec::full();
        assert_eq!(s.dims, [48, 48, 48]);
        for (a, b) in s.pitch.iter().zip([0.05, 0.10, 0.10]) {
            assert!((a - b).abs() < 1e-15);
        }
        assert_eq!(s.origin, [-2.4, 0.0, -2.4]);
    }

    #[test]
    fn first_voxel_center_maps_to_zero() {
        let s = VolumeSpec::full();
        let p = [s.origin[0] + 0.5 * s.pitch[1], s.origin[1] + 0.5 * s.pitch[0], s.origin[2] + 0.5 * s.pitch[2]];
        let u = world_to_voxel(p, &s);
        assert!(u.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn grid_center_index() {
        let u = world_to_voxel([0.0, 1.2, 0.0], &VolumeSpec::full());
        for v in u {
            assert!((v - 23.5).abs() < 1e-12);
        }
    }

    #[test]
    fn single_point_occupies_one_voxel() {
        let s = VolumeSpec::full();
        let p = voxel_to_world([3.0, 7.0, 11.0], &s);
        let v = rasterize(&snap(vec![p], EntityClass::Human), &s).unwrap();
        assert_eq!(v.occupied_count(), 1);
        assert_eq!(v.label(0, 3, 7, 11), [1, 0, 0]);
        let twice = rasterize(&snap(vec![p, p], EntityClass::Human), &s).unwrap();
        assert_eq!(twice, v);
    }

    #[test]
    fn out_of_grid_points_dropped() {
        let s = VolumeSpec::desk();
        let v = rasterize(&snap(vec![[10.0, 1.0, 0.0], [0.0, -0.01, 0.0]], EntityClass::Scene), &s).unwrap();
        assert_eq!(v.occupied_count(), 0);
        // The floor plane itself belongs to the bottom layer.
        let floor = rasterize(&snap(vec![[0.0, 0.0, 0.0]], EntityClass::Scene), &s).unwrap();
        assert_eq!(floor.occupied_count(), 1);
    }

    #[test]
    fn rasterize_matches_distinct_index_oracle() {
        let s = VolumeSpec::full();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (lo, hi) = s.world_bounds();
        let pts: Vec<Vec3> =
            (0..1000).map(|_| [0, 1, 2].map(|a| rng.random_range(lo[a]..hi[a]))).collect();
        let oracle: HashSet<[i64; 3]> = pts
            .iter()
            .map(|p| {
                let u = world_to_voxel(*p, &s);
                u.map(|x| (x + 0.5).floor() as i64)
            })
            .collect();
        let v = rasterize(&snap(pts, EntityClass::Object), &s).unwrap();
        assert_eq!(v.occupied_count(), oracle.len());
    }

    #[test]
    fn merge_priority_and_identity() {
        let s = VolumeSpec::desk();
        let p = voxel_to_world([2.0, 2.0, 2.0], &s);
        let human = rasterize(&snap(vec![p], EntityClass::Human), &s).unwrap();
        let scene = rasterize(&snap(vec![p], EntityClass::Scene), &s).unwrap();
        let merged = merge(&[scene.clone(), human.clone()]).unwrap();
        assert_eq!(merged.label(0, 2, 2, 2), [1, 0, 0]);
        let empty = SemanticVolume::empty(s, 1);
        assert_eq!(merge(&[scene.clone(), empty]).unwrap(), scene);
    }

    #[test]
    fn merge_rejects_spec_mismatch() {
        let a = SemanticVolume::empty(VolumeSpec::desk(), 1);
        let b = SemanticVolume::empty(VolumeSpec::full(), 1);
        assert!(matches!(merge(&[a, b]), Err(Error::SpecMismatch(_))));
    }

    #[test]
    fn merge_is_permutation_invariant() {
        let s = VolumeSpec::desk();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let (lo, hi) = s.world_bounds();
        let vols: Vec<SemanticVolume> = [EntityClass::Human, EntityClass::Object, EntityClass::Scene]
            .into_iter()
            .map(|c| {
                let pts = (0..800).map(|_| [0, 1, 2].map(|a| rng.random_range(lo[a]..hi[a]))).collect();
                rasterize(&snap(pts, c), &s).unwrap()
            })
            .collect();
        let reference = merge(&vols).unwrap();
        for perm in [[0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]] {
            let permuted: Vec<_> = perm.iter().map(|&i| vols[i].clone()).collect();
            assert_eq!(merge(&permuted).unwrap(), reference);
        }
    }

    #[test]
    fn static_scene_repeats_and_crossing_object_moves() {
        let s = VolumeSpec::desk();
        let scene = snap(vec![[0.0, 0.0, 0.0], [1.0, 0.0, 1.0]], EntityClass::Scene);
        // Object slides along +x; the w-index boundary between voxels 8 and 9 sits at x = 0.3.
        let xs = [0.1, 0.2, 0.29, 0.31, 0.4];
        let frames: Vec<Vec<EntitySnapshot>> = xs
            .iter()
            .map(|&x| vec![scene.clone(), snap(vec![[x, 1.0, 0.0]], EntityClass::Object)])
            .collect();
        let v = build_uiv(&frames, &s).unwrap();
        assert_eq!(v.frames(), 5);
        for t in 0..5 {
            assert_eq!(v.count_code(label::SCENE), 2 * 5);
            let w: Vec<usize> = (0..s.voxel_count())
                .filter(|&i| v.frame_codes(t)[i] == label::OBJECT)
                .map(|i| s.unravel(i)[1])
                .collect();
            assert_eq!(w, vec![if t < 3 { 8 } else { 9 }]);
        }
    }

    #[test]
    fn rejects_empty_entity_and_bad_codes() {
        assert!(EntitySnapshot::new(vec![], EntityClass::Human).is_err());
        assert!(SemanticVolume::from_codes(VolumeSpec::desk(), 1, vec![4; 4096]).is_err());
    }

    proptest! {
        #[test]
        fn merged_labels_stay_one_hot(codes in proptest::collection::vec(
            proptest::collection::vec(0u8..4, 64), 1..5)) {
            let spec = VolumeSpec::new([4, 4, 4], [0.1; 3], [0.0; 3]).unwrap();
            let vols: Vec<_> = codes.into_iter()
                .map(|c| SemanticVolume::from_codes(spec, 1, c).unwrap())
                .collect();
            let m = merge(&vols).unwrap();
            for &c in m.codes() {
                let oh = code_one_hot(c);
                prop_assert!(oh.iter().map(|&x| x as u32).sum::<u32>() <= 1);
            }
            // Priority rule: the merged code is the minimum nonzero input code.
            for i in 0..64 {
                let expect = vols.iter().map(|v| v.codes()[i]).filter(|&c| c != 0).min().unwrap_or(0);
                prop_assert_eq!(m.codes()[i], expect);
            }
        }

        #[test]
        fn voxel_round_trip(x in -3.0..3.0f64, y in -1.0..3.0f64, z in -3.0..3.0f64) {
            let s = VolumeSpec::full();
            let back = voxel_to_world(world_to_voxel([x, y, z], &s), &s);
            prop_assert!((back[0] - x).abs() < 1e-12 && (back[1] - y).abs() < 1e-12 && (back[2] - z).abs() < 1e-12);
        }
    }
}
