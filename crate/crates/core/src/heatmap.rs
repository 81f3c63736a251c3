//! Joint heatmaps over the interaction volume.
//!
//! Each joint of each frame is represented by a distribution over voxels.
//! Ground truth channels are isotropic Gaussians in voxel-index space; joints
//! are read back as the first moment of a channel, which is differentiable
//! and resolves positions below the voxel size.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::MotionSequence;
use crate::uiv::{voxel_to_world, world_to_voxel, VolumeSpec};
use crate::vec3::Vec3;

/// Channel mass below which [`normalize`] falls back to a uniform channel.
pub const NORMALIZE_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FieldMode {
    /// Nonnegative, every channel sums to one.
    Target,
    /// Unconstrained finite values, e.g. a diffusion state.
    Raw,
}

/// `T x K` channels of `H x W x D` values, channel-major in (t, k) order.
#[derive(Debug, Clone, PartialEq)]
pub struct HeatmapField {
    spec: VolumeSpec,
    frames: usize,
    joints: usize,
    values: Vec<f64>,
    mode: FieldMode,
}

impl HeatmapField {
    pub fn zeros(spec: VolumeSpec, frames: usize, joints: usize, mode: FieldMode) -> Self {
        Self { spec, frames, joints, values: vec![0.0; frames * joints * spec.voxel_count()], mode }
    }

    pub fn from_values(
        spec: VolumeSpec,
        frames: usize,
        joints: usize,
        values: Vec<f64>,
        mode: FieldMode,
    ) -> Result<Self> {
        let expect = frames * joints * spec.voxel_count();
        if values.len() != expect {
            return Err(Error::ShapeMismatch(format!("{} values, expected {expect}", values.len())));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("heatmap field".into()));
        }
        let field = Self { spec, frames, joints, values, mode };
        if mode == FieldMode::Target {
            field.check_target(1e-6)?;
        }
        Ok(field)
    }

    /// Verifies the target-mode invariants: nonnegative channels of unit mass.
    pub fn check_target(&self, tol: f64) -> Result<()> {
        for (c, ch) in self.channels().enumerate() {
            if ch.iter().any(|&v| v < 0.0) {
                return Err(Error::InvalidMotion(format!("channel {c} has negative mass")));
            }
            let s: f64 = ch.iter().sum();
            if (s - 1.0).abs() > tol {
                return Err(Error::InvalidMotion(format!("channel {c} sums to {s}")));
            }
        }
        Ok(())
    }

    pub fn spec(&self) -> &VolumeSpec {
        &self.spec
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn joints(&self) -> usize {
        self.joints
    }

    pub fn mode(&self) -> FieldMode {
        self.mode
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn channel_count(&self) -> usize {
        self.frames * self.joints
    }

    pub fn channel(&self, t: usize, k: usize) -> &[f64] {
        let n = self.spec.voxel_count();
        let c = t * self.joints + k;
        &self.values[c * n..(c + 1) * n]
    }

    pub fn channel_mut(&mut self, t: usize, k: usize) -> &mut [f64] {
        let n = self.spec.voxel_count();
        let c = t * self.joints + k;
        &mut self.values[c * n..(c + 1) * n]
    }

    pub fn channels(&self) -> std::slice::Chunks<'_, f64> {
        self.values.chunks(self.spec.voxel_count())
    }

    /// Same shape and grid as `other`.
    pub fn same_shape(&self, other: &HeatmapField) -> Result<()> {
        if self.frames != other.frames || self.joints != other.joints {
            return Err(Error::ShapeMismatch(format!(
                "T x K {}x{} vs {}x{}",
                self.frames, self.joints, other.frames, other.joints
            )));
        }
        self.spec.ensure_compatible(&other.spec)
    }

    /// Reinterprets the values as unconstrained.
    pub fn into_raw(mut self) -> Self {
        self.mode = FieldMode::Raw;
        self
    }

    /// Multiplies every value by `s`; the result is a raw field.
    pub fn scaled(&self, s: f64) -> Self {
        Self {
            spec: self.spec,
            frames: self.frames,
            joints: self.joints,
            values: self.values.iter().map(|v| v * s).collect(),
            mode: FieldMode::Raw,
        }
    }
}

/// Factor that lifts a normalized Gaussian channel to unit peak:
/// `(2 pi sigma^2)^(3/2)`. Diffusion runs on fields scaled by this.
pub fn amplitude_scale(sigma: f64) -> f64 {
    (2.0 * std::f64::consts::PI * sigma * sigma).powf(1.5)
}

/// Output of [`encode_motion`].
#[derive(Debug, Clone)]
pub struct EncodedMotion {
    pub field: HeatmapField,
    /// Lattice sum of each channel under the analytic Gaussian normalization,
    /// before discrete renormalization.
    pub analytic_mass: Vec<f64>,
    /// `(t, k)` channels whose joint lies more than 3 sigma outside the grid;
    /// these are emitted as uniform channels.
    pub out_of_grid: Vec<(usize, usize)>,
}

fn gaussian_profile(center: f64, len: usize, sigma: f64) -> Vec<f64> {
    let inv = 1.0 / (2.0 * sigma * sigma);
    (0..len).map(|i| (-((i as f64 - center).powi(2)) * inv).exp()).collect()
}

/// Encodes every joint as a renormalized isotropic Gaussian of standard
/// deviation `sigma` voxels, evaluated at voxel centers.
pub fn encode_motion(motion: &MotionSequence, spec: &VolumeSpec, sigma: f64) -> Result<EncodedMotion> {
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(Error::InvalidConfig(format!("sigma must be positive, got {sigma}")));
    }
    let (t_len, k_len) = (motion.frames(), motion.joints());
    let mut field = HeatmapField::zeros(*spec, t_len, k_len, FieldMode::Target);
    let norm = amplitude_scale(sigma).recip();
    let mut analytic_mass = Vec::with_capacity(t_len * k_len);
    let mut out_of_grid = Vec::new();
    let [dh, dw, dd] = spec.dims;
    for t in 0..t_len {
        for k in 0..k_len {
            let u = world_to_voxel(motion.joint(t, k), spec);
            let outside = (0..3).any(|a| {
                let lo = -0.5 - 3.0 * sigma;
                let hi = spec.dims[a] as f64 - 0.5 + 3.0 * sigma;
                u[a] < lo || u[a] > hi
            });
            let gh = gaussian_profile(u[0], dh, sigma);
            let gw = gaussian_profile(u[1], dw, sigma);
            let gd = gaussian_profile(u[2], dd, sigma);
            let mass: f64 = gh.iter().sum::<f64>() * gw.iter().sum::<f64>() * gd.iter().sum::<f64>();
            analytic_mass.push(mass * norm);
            let ch = field.channel_mut(t, k);
            if outside || !(mass > 0.0) {
                out_of_grid.push((t, k));
                ch.fill(1.0 / ch.len() as f64);
                continue;
            }
            let inv = 1.0 / mass;
            let mut i = 0;
            for &a in &gh {
                for &b in &gw {
                    let ab = a * b * inv;
                    for &c in &gd {
                        ch[i] = ab * c;
                        i += 1;
                    }
                }
            }
        }
    }
    Ok(EncodedMotion { field, analytic_mass, out_of_grid })
}

/// Clamps negatives to zero and rescales each channel to unit mass. Channels
/// whose clamped mass is below [`NORMALIZE_EPS`] become uniform.
pub fn normalize(field: &HeatmapField) -> HeatmapField {
    let mut out = field.clone();
    out.mode = FieldMode::Target;
    let n = field.spec.voxel_count();
    for ch in out.values.chunks_mut(n) {
        let mut mass = 0.0;
        for v in ch.iter_mut() {
            if *v < 0.0 {
                *v = 0.0;
            }
            mass += *v;
        }
        if mass < NORMALIZE_EPS {
            ch.fill(1.0 / n as f64);
        } else {
            let inv = 1.0 / mass;
            ch.iter_mut().for_each(|v| *v *= inv);
        }
    }
    out
}

/// Marginal mass of a channel along each grid axis.
fn marginals(channel: &[f64], spec: &VolumeSpec) -> [Vec<f64>; 3] {
    let [dh, dw, dd] = spec.dims;
    let mut mh = vec![0.0; dh];
    let mut mw = vec![0.0; dw];
    let mut md = vec![0.0; dd];
    let mut i = 0;
    for h in 0..dh {
        for w in 0..dw {
            let mut row = 0.0;
            for d in 0..dd {
                let v = channel[i];
                md[d] += v;
                row += v;
                i += 1;
            }
            mw[w] += row;
            mh[h] += row;
        }
    }
    [mh, mw, md]
}

/// Mass-weighted mean voxel center of a nonnegative channel, with the mass.
pub fn soft_argmax(channel: &[f64], spec: &VolumeSpec) -> (Vec3, f64) {
    let m = marginals(channel, spec);
    let mass: f64 = m[0].iter().sum();
    let mut u = [0.0; 3];
    for a in 0..3 {
        let first: f64 = m[a].iter().enumerate().map(|(i, v)| i as f64 * v).sum();
        u[a] = first / mass;
    }
    (voxel_to_world(u, spec), mass)
}

/// [`soft_argmax`] of a channel after clamping negatives to zero, matching
/// what [`normalize`] followed by [`decode_expectation`] produces. Returns
/// `None` when the clamped mass is below [`NORMALIZE_EPS`], in which case the
/// channel normalizes to uniform and decodes to the grid center.
pub fn clamped_soft_argmax(channel: &[f64], spec: &VolumeSpec) -> Option<(Vec3, f64)> {
    let [dh, dw, dd] = spec.dims;
    let mut mh = vec![0.0; dh];
    let mut mw = vec![0.0; dw];
    let mut md = vec![0.0; dd];
    let mut i = 0;
    for h in 0..dh {
        for w in 0..dw {
            let mut row = 0.0;
            for d in 0..dd {
                let v = channel[i].max(0.0);
                md[d] += v;
                row += v;
                i += 1;
            }
            mw[w] += row;
            mh[h] += row;
        }
    }
    let mass: f64 = mh.iter().sum();
    if mass < NORMALIZE_EPS {
        return None;
    }
    let m = [mh, mw, md];
    let mut u = [0.0; 3];
    for a in 0..3 {
        u[a] = m[a].iter().enumerate().map(|(i, v)| i as f64 * v).sum::<f64>() / mass;
    }
    Some((voxel_to_world(u, spec), mass))
}

/// World position of the grid center.
pub fn grid_center(spec: &VolumeSpec) -> Vec3 {
    voxel_to_world(spec.dims.map(|d| (d as f64 - 1.0) / 2.0), spec)
}

/// First-moment decode of every channel into joint positions.
pub fn decode_expectation(field: &HeatmapField, fps: f64) -> Result<MotionSequence> {
    let positions = field.channels().map(|ch| soft_argmax(ch, &field.spec).0).collect();
    MotionSequence::new(fps, field.frames, field.joints, positions)
}

/// World coordinate of every voxel center along each grid axis, in world
/// component order: index 0 holds x over w, 1 holds y over h, 2 holds z over d.
fn axis_centers(spec: &VolumeSpec) -> [Vec<f64>; 3] {
    let x = (0..spec.dims[1]).map(|w| voxel_to_world([0.0, w as f64, 0.0], spec)[0]).collect();
    let y = (0..spec.dims[0]).map(|h| voxel_to_world([h as f64, 0.0, 0.0], spec)[1]).collect();
    let z = (0..spec.dims[2]).map(|d| voxel_to_world([0.0, 0.0, d as f64], spec)[2]).collect();
    [x, y, z]
}

/// Vector-Jacobian product of [`soft_argmax`]: for an upstream gradient `g`
/// on the decoded joint `j`, writes `g . (center(v) - j) / mass` for every
/// voxel `v` into `out` (accumulating). Voxels where `active` is false get
/// nothing, which chains the clamp of [`normalize`].
pub fn soft_argmax_vjp(
    spec: &VolumeSpec,
    joint: Vec3,
    mass: f64,
    upstream: Vec3,
    active: impl Fn(usize) -> bool,
    out: &mut [f64],
) {
    let [cx, cy, cz] = axis_centers(spec);
    let inv = 1.0 / mass;
    let gy: Vec<f64> = cy.iter().map(|y| upstream[1] * (y - joint[1]) * inv).collect();
    let gx: Vec<f64> = cx.iter().map(|x| upstream[0] * (x - joint[0]) * inv).collect();
    let gz: Vec<f64> = cz.iter().map(|z| upstream[2] * (z - joint[2]) * inv).collect();
    let mut i = 0;
    for &a in &gy {
        for &b in &gx {
            let ab = a + b;
            for &c in &gz {
                if active(i) {
                    out[i] += ab + c;
                }
                i += 1;
            }
        }
    }
}

/// Gradient of the decoded joint of one channel with respect to each voxel
/// value: `(center(v) - j) / mass`, returned per world axis.
pub fn expectation_gradient(channel: &[f64], spec: &VolumeSpec) -> [Vec<f64>; 3] {
    let (j, mass) = soft_argmax(channel, spec);
    let mut out: [Vec<f64>; 3] = Default::default();
    for (a, o) in out.iter_mut().enumerate() {
        let mut g = [0.0; 3];
        g[a] = 1.0;
        *o = vec![0.0; channel.len()];
        soft_argmax_vjp(spec, j, mass, g, |_| true, o);
    }
    out
}
