//! Conditional x0-denoiser over heatmap fields, its training loop and
//! checkpoint format.
//!
//! Each (t, k) channel is block-averaged to a small trunk grid and passed,
//! together with peak estimates read off the smoothed channel and off joint
//! k averaged over frames, through a two-layer perceptron. The perceptron
//! also receives a shared injection built from the condition, the timestep
//! and the peak estimates of every channel, joint and frame. A head per
//! channel emits a position squashed into the grid extent, a gate logit and
//! a mix logit. The mix picks an anchor between the two peak estimates, the
//! gate blends the position with it, and the result is rendered back to the
//! grid as a unit-peak Gaussian, the shape of the training targets.
//! Gradients are written out by hand.

pub mod checkpoint;
mod resample;
pub mod train;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diffusion::X0Denoiser;
use crate::error::{Error, Result};
use crate::heatmap::{FieldMode, HeatmapField};
use crate::synthdata::TaskId;
use crate::uiv::{SemanticVolume, VolumeSpec};
use crate::vec3::Vec3;
use resample::{AxisOp, Separable};

/// Side lengths of the condition pyramid.
pub const POOL_SCALES: [usize; 3] = [4, 2, 1];
/// Mean over frames, first frame, last frame.
pub const TEMPORAL_STATS: usize = 3;
/// Human, object, scene.
pub const LABEL_CHANNELS: usize = 3;
/// Peak estimate per channel: normalized position and height.
pub const PEAK_FEATURES: usize = 4;
/// Peak estimate per frame on the horizontal plane: normalized (x, z) and height.
pub const FRAME_FEATURES: usize = 3;
/// Head outputs per channel: position, gate logit and anchor-mix logit.
const HEAD_OUT: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenoiserConfig {
    pub spec: VolumeSpec,
    pub frames: usize,
    pub joints: usize,
    pub trunk_grid: [usize; 3],
    pub width: usize,
    pub embed_dim: usize,
    pub time_dim: usize,
    pub tasks: usize,
    /// Heatmap standard deviation in voxels; fields are scaled to unit peak.
    pub sigma: f64,
}

impl DenoiserConfig {
    pub fn desk() -> Self {
        Self {
            spec: VolumeSpec::desk(),
            frames: 8,
            joints: 8,
            trunk_grid: [4, 4, 4],
            width: 64,
            embed_dim: 16,
            time_dim: 16,
            tasks: TaskId::ALL.len(),
            sigma: 1.0,
        }
    }

    /// Gradient-check size: 4^3 grid, 2 frames, 3 joints, width 8.
    pub fn tiny() -> Self {
        Self {
            spec: VolumeSpec::floor_centered([4, 4, 4], [1.2, 1.2, 1.2]).expect("valid tiny grid"),
            frames: 2,
            joints: 3,
            trunk_grid: [2, 2, 2],
            width: 8,
            embed_dim: 4,
            time_dim: 4,
            tasks: TaskId::ALL.len(),
            sigma: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.frames == 0 || self.joints == 0 || self.width == 0 || self.embed_dim == 0 || self.tasks == 0 {
            return bad("denoiser sizes must be positive");
        }
        if self.time_dim == 0 || self.time_dim % 2 != 0 {
            return bad("time_dim must be a positive even number");
        }
        if self.trunk_grid.iter().any(|&g| g == 0) {
            return bad("trunk grid must be nonempty");
        }
        if !(self.sigma.is_finite() && self.sigma > 0.0) {
            return bad("sigma must be positive");
        }
        Ok(())
    }

    pub fn channels(&self) -> usize {
        self.frames * self.joints
    }

    pub fn trunk_cells(&self) -> usize {
        self.trunk_grid.iter().product()
    }

    pub fn pooled_len(&self) -> usize {
        TEMPORAL_STATS * LABEL_CHANNELS * POOL_SCALES.iter().map(|s| s * s * s).sum::<usize>() + LABEL_CHANNELS * 3
    }

    /// Length of the condition feature vector: pooled statistics, task embedding, goal.
    pub fn feature_len(&self) -> usize {
        self.pooled_len() + self.embed_dim + 3
    }

    /// Per-channel MLP input: block averages, the channel's peak and the peak
    /// of its joint averaged over frames.
    pub fn input_len(&self) -> usize {
        self.trunk_cells() + 2 * PEAK_FEATURES
    }

    /// Peak estimates of every channel, every joint and every frame.
    pub fn context_len(&self) -> usize {
        PEAK_FEATURES * (self.channels() + self.joints) + FRAME_FEATURES * self.frames
    }

    pub fn param_shapes(&self) -> [Vec<usize>; PARAM_COUNT] {
        let (w, c) = (self.width, self.channels());
        [
            vec![self.tasks, self.embed_dim],
            vec![w, self.feature_len()],
            vec![w],
            vec![w, self.time_dim],
            vec![w, self.context_len()],
            vec![c, w],
            vec![w, self.input_len()],
            vec![w],
            vec![w, w],
            vec![w],
            vec![c, HEAD_OUT, w],
            vec![c, HEAD_OUT],
        ]
    }
}

pub const PARAM_COUNT: usize = 12;
pub const PARAM_NAMES: [&str; PARAM_COUNT] = [
    "task_embed",
    "cond.w",
    "cond.b",
    "time.w",
    "context.w",
    "chan_embed",
    "trunk.in.w",
    "trunk.in.b",
    "trunk.hidden.w",
    "trunk.hidden.b",
    "head.w",
    "head.b",
];

const TASK_EMBED: usize = 0;
const COND_W: usize = 1;
const COND_B: usize = 2;
const TIME_W: usize = 3;
const CTX_W: usize = 4;
const CHAN_EMBED: usize = 5;
const IN_W: usize = 6;
const IN_B: usize = 7;
const HID_W: usize = 8;
const HID_B: usize = 9;
const OUT_W: usize = 10;
const OUT_B: usize = 11;

/// Named weight tensors, also used to hold gradients and optimizer moments.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    tensors: Vec<Vec<f64>>,
}

impl Params {
    pub fn zeros(cfg: &DenoiserConfig) -> Self {
        Self { tensors: cfg.param_shapes().iter().map(|s| vec![0.0; s.iter().product()]).collect() }
    }

    /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, small embeddings,
    /// zero biases.
    pub fn init(cfg: &DenoiserConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = Self::zeros(cfg);
        for (idx, shape) in cfg.param_shapes().iter().enumerate() {
            let bound = match idx {
                TASK_EMBED | CHAN_EMBED => 0.1,
                COND_W | TIME_W | CTX_W | IN_W | HID_W | OUT_W => 1.0 / (shape[shape.len() - 1] as f64).sqrt(),
                _ => continue,
            };
            for v in &mut p.tensors[idx] {
                *v = rng.random_range(-bound..bound);
            }
        }
        p
    }

    pub fn from_tensors(cfg: &DenoiserConfig, tensors: Vec<Vec<f64>>) -> Result<Self> {
        let shapes = cfg.param_shapes();
        if tensors.len() != PARAM_COUNT {
            return Err(Error::ShapeMismatch(format!("{} tensors, expected {PARAM_COUNT}", tensors.len())));
        }
        for ((t, s), name) in tensors.iter().zip(&shapes).zip(PARAM_NAMES) {
            if t.len() != s.iter().product::<usize>() {
                return Err(Error::ShapeMismatch(format!("tensor {name} has {} values, expected shape {s:?}", t.len())));
            }
            if t.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("tensor {name}")));
            }
        }
        Ok(Self { tensors })
    }

    pub fn tensors(&self) -> &[Vec<f64>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Vec<f64>] {
        &mut self.tensors
    }

    pub fn len(&self) -> usize {
        self.tensors.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn scale(&mut self, s: f64) {
        self.tensors.iter_mut().flatten().for_each(|v| *v *= s);
    }

    pub fn add_assign(&mut self, other: &Params) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().flatten().all(|v| v.is_finite())
    }
}

/// Everything a sample is conditioned on.
#[derive(Debug, Clone)]
pub struct TaskCondition {
    pub task: TaskId,
    pub uiv: SemanticVolume,
    pub goal: Option<Vec3>,
}

/// Parameter-free part of the condition encoding, cached per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionFeatures {
    pub task: TaskId,
    pub pooled: Vec<f64>,
    pub goal: Option<Vec3>,
}

/// Label occupancy fractions pooled to 4^3, 2^3 and 1^3 for each label
/// channel, summarized over frames by mean, first and last, followed by the
/// frame-averaged occupancy centroid of each label in `[-1, 1]` grid units
/// (zero for a label absent from a frame).
pub fn pool_condition(cond: &TaskCondition, cfg: &DenoiserConfig) -> Result<ConditionFeatures> {
    cond.uiv.spec().ensure_compatible(&cfg.spec)?;
    if cond.uiv.frames() == 0 {
        return Err(Error::ShapeMismatch("condition volume has no frames".into()));
    }
    if let Some(g) = cond.goal {
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("goal".into()));
        }
    }
    let dims = cfg.spec.dims;
    let pools: Vec<Separable> = POOL_SCALES
        .iter()
        .map(|&s| Separable::new([0, 1, 2].map(|a| AxisOp::average(dims[a], s))))
        .collect();
    let per_scale: usize = POOL_SCALES.iter().map(|s| s * s * s).sum();
    let frame_len = LABEL_CHANNELS * per_scale;
    let frames = cond.uiv.frames();
    let mut per_frame = vec![0.0; frames * frame_len];
    let mut onehot = vec![0.0; cfg.spec.voxel_count()];
    let mut centroids = vec![0.0; LABEL_CHANNELS * 3];
    for t in 0..frames {
        let codes = cond.uiv.frame_codes(t);
        let mut off = t * frame_len;
        for ch in 0..LABEL_CHANNELS {
            let code = ch as u8 + 1;
            let mut sum = [0.0; 3];
            let mut count = 0usize;
            for (idx, (o, &c)) in onehot.iter_mut().zip(codes).enumerate() {
                *o = if c == code { 1.0 } else { 0.0 };
                if c == code {
                    let q = [idx / (dims[1] * dims[2]), (idx / dims[2]) % dims[1], idx % dims[2]];
                    for a in 0..3 {
                        sum[a] += q[a] as f64;
                    }
                    count += 1;
                }
            }
            if count > 0 {
                for a in 0..3 {
                    centroids[ch * 3 + a] += to_unit(sum[a] / count as f64, dims[a]) / frames as f64;
                }
            }
            for pool in &pools {
                let p = pool.apply(&onehot);
                per_frame[off..off + p.len()].copy_from_slice(&p);
                off += p.len();
            }
        }
    }
    let mut pooled = vec![0.0; TEMPORAL_STATS * frame_len];
    for t in 0..frames {
        for (m, v) in pooled[..frame_len].iter_mut().zip(&per_frame[t * frame_len..]) {
            *m += v / frames as f64;
        }
    }
    pooled[frame_len..2 * frame_len].copy_from_slice(&per_frame[..frame_len]);
    pooled[2 * frame_len..].copy_from_slice(&per_frame[(frames - 1) * frame_len..]);
    pooled.extend_from_slice(&centroids);
    Ok(ConditionFeatures { task: cond.task, pooled, goal: cond.goal })
}

/// Sinusoidal embedding of a diffusion timestep.
pub fn timestep_embedding(i: usize, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let mut out = vec![0.0; dim];
    for k in 0..half {
        let freq = (-(10000f64.ln()) * k as f64 / half as f64).exp();
        let a = i as f64 * freq;
        out[k] = a.sin();
        out[half + k] = a.cos();
    }
    out
}

fn argmax(s: &[f64]) -> usize {
    let (mut best, mut at) = (f64::NEG_INFINITY, 0);
    for (idx, &v) in s.iter().enumerate() {
        if v > best {
            best = v;
            at = idx;
        }
    }
    at
}

/// Sub-cell offset of a sampled peak from the parabola through the logs of
/// the peak and its two neighbours, exact for a Gaussian profile. Zero when
/// a neighbour is missing or not positive.
fn log_parabola_offset(left: Option<f64>, center: f64, right: Option<f64>) -> f64 {
    match (left, right) {
        (Some(l), Some(r)) if l > 0.0 && r > 0.0 && center > 0.0 => {
            let (l, c, r) = (l.ln(), center.ln(), r.ln());
            let den = l - 2.0 * c + r;
            if den < 0.0 {
                (0.5 * (l - r) / den).clamp(-0.5, 0.5)
            } else {
                0.0
            }
        }
        _ => 0.0,
    }
}

/// Refined location of the maximum of a grid of any rank, mapped to
/// `[-1, 1]` per axis, followed by the maximum value.
fn peak_estimate(s: &[f64], dims: &[usize], out: &mut Vec<f64>) {
    let at = argmax(s);
    let mut stride = s.len();
    for &n in dims {
        stride /= n;
        let m = (at / stride) % n;
        let left = (m > 0).then(|| s[at - stride]);
        let right = (m + 1 < n).then(|| s[at + stride]);
        out.push(to_unit(m as f64 + log_parabola_offset(left, s[at], right), n));
    }
    out.push(s[at]);
}

/// In-place `[1/4, 1/2, 1/4]` smoothing along every axis of a row-major
/// grid, with zero padding. `scratch` is resized as needed.
fn smooth_in_place(x: &mut [f64], dims: &[usize], scratch: &mut Vec<f64>) {
    scratch.resize(x.len(), 0.0);
    let mut stride = x.len();
    for &n in dims {
        let block = stride;
        stride /= n;
        scratch.copy_from_slice(x);
        if stride == 1 {
            for (dst, src) in x.chunks_exact_mut(n).zip(scratch.chunks_exact(n)) {
                for k in 0..n {
                    let l = if k > 0 { src[k - 1] } else { 0.0 };
                    let h = if k + 1 < n { src[k + 1] } else { 0.0 };
                    dst[k] = 0.5 * src[k] + 0.25 * (l + h);
                }
            }
            continue;
        }
        for (dst, src) in x.chunks_exact_mut(block).zip(scratch.chunks_exact(block)) {
            for k in 0..n {
                let row = &mut dst[k * stride..(k + 1) * stride];
                let mid = &src[k * stride..(k + 1) * stride];
                for (r, m) in row.iter_mut().zip(mid) {
                    *r = 0.5 * m;
                }
                if k > 0 {
                    for (r, l) in row.iter_mut().zip(&src[(k - 1) * stride..k * stride]) {
                        *r += 0.25 * l;
                    }
                }
                if k + 1 < n {
                    for (r, h) in row.iter_mut().zip(&src[(k + 1) * stride..(k + 2) * stride]) {
                        *r += 0.25 * h;
                    }
                }
            }
        }
    }
}

/// Continuous voxel index to `[-1, 1]` across the grid extent.
fn to_unit(q: f64, n: usize) -> f64 {
    (q - (n as f64 - 1.0) / 2.0) / (n as f64 / 2.0)
}

fn from_unit(u: f64, n: usize) -> f64 {
    (n as f64 - 1.0) / 2.0 + u * n as f64 / 2.0
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn gaussian_profile(center: f64, len: usize, sigma: f64) -> Vec<f64> {
    let inv = 1.0 / (2.0 * sigma * sigma);
    (0..len).map(|i| (-((i as f64 - center).powi(2)) * inv).exp()).collect()
}

// Dense helpers over row-major matrices.

fn matvec_add(w: &[f64], cols: usize, x: &[f64], out: &mut [f64]) {
    for (o, row) in out.iter_mut().zip(w.chunks_exact(cols)) {
        *o += row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
    }
}

fn matvec_t_add(w: &[f64], cols: usize, y: &[f64], out: &mut [f64]) {
    for (yv, row) in y.iter().zip(w.chunks_exact(cols)) {
        if *yv == 0.0 {
            continue;
        }
        for (o, a) in out.iter_mut().zip(row) {
            *o += yv * a;
        }
    }
}

fn outer_add(g: &mut [f64], cols: usize, a: &[f64], b: &[f64]) {
    for (av, row) in a.iter().zip(g.chunks_exact_mut(cols)) {
        if *av == 0.0 {
            continue;
        }
        for (r, bv) in row.iter_mut().zip(b) {
            *r += av * bv;
        }
    }
}

/// Intermediate values kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    task: usize,
    features: Vec<f64>,
    temb: Vec<f64>,
    context: Vec<f64>,
    /// Per channel: pooled input followed by its peak estimate.
    inputs: Vec<f64>,
    z1: Vec<f64>,
    z2: Vec<f64>,
    /// Per channel: head outputs.
    head: Vec<f64>,
    /// Per channel: rendered center in voxel index coordinates.
    centers: Vec<f64>,
}

/// Model config plus weights.
#[derive(Debug, Clone)]
pub struct Denoiser {
    config: DenoiserConfig,
    params: Params,
    down: Separable,
}

impl Denoiser {
    pub fn new(config: DenoiserConfig, params: Params) -> Result<Self> {
        config.validate()?;
        let shapes = config.param_shapes();
        for ((t, s), name) in params.tensors.iter().zip(&shapes).zip(PARAM_NAMES) {
            if t.len() != s.iter().product::<usize>() {
                return Err(Error::ShapeMismatch(format!("tensor {name} does not match config")));
            }
        }
        let dims = config.spec.dims;
        let g = config.trunk_grid;
        let down = Separable::new([0, 1, 2].map(|a| AxisOp::average(dims[a], g[a])));
        Ok(Self { config, params, down })
    }

    pub fn init(config: DenoiserConfig, seed: u64) -> Result<Self> {
        let params = Params::init(&config, seed);
        Self::new(config, params)
    }

    pub fn config(&self) -> &DenoiserConfig {
        &self.config
    }

    pub fn params(&self) -> &Params {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut Params {
        &mut self.params
    }

    /// Full condition feature vector: pooled statistics, task embedding, goal.
    pub fn encode_condition(&self, cond: &ConditionFeatures) -> Result<Vec<f64>> {
        let cfg = &self.config;
        if cond.pooled.len() != cfg.pooled_len() {
            return Err(Error::ShapeMismatch(format!(
                "pooled condition has {} values, expected {}",
                cond.pooled.len(),
                cfg.pooled_len()
            )));
        }
        let task = cond.task.index();
        if task >= cfg.tasks {
            return Err(Error::InvalidConfig(format!("task index {task} outside the embedding table")));
        }
        let e = cfg.embed_dim;
        let mut f = Vec::with_capacity(cfg.feature_len());
        f.extend_from_slice(&cond.pooled);
        f.extend_from_slice(&self.params.tensors[TASK_EMBED][task * e..(task + 1) * e]);
        f.extend_from_slice(&cond.goal.unwrap_or([0.0; 3]));
        Ok(f)
    }

    fn check_input(&self, x: &HeatmapField) -> Result<()> {
        let cfg = &self.config;
        x.spec().ensure_compatible(&cfg.spec)?;
        if x.frames() != cfg.frames || x.joints() != cfg.joints {
            return Err(Error::ShapeMismatch(format!(
                "field has {}x{} channels, model expects {}x{}",
                x.frames(),
                x.joints(),
                cfg.frames,
                cfg.joints
            )));
        }
        Ok(())
    }

    /// Forward pass returning the predicted clean field and the backward cache.
    pub fn forward(&self, x: &HeatmapField, i: usize, cond: &ConditionFeatures) -> Result<(HeatmapField, ForwardCache)> {
        self.check_input(x)?;
        let cfg = &self.config;
        let p = &self.params.tensors;
        let (w, g, c_len, v) = (cfg.width, cfg.trunk_cells(), cfg.channels(), cfg.spec.voxel_count());
        let dims = cfg.spec.dims;
        let in_len = cfg.input_len();
        let features = self.encode_condition(cond)?;
        let temb = timestep_embedding(i, cfg.time_dim);

        // Parameter-free input features: block averages and smoothed peaks
        // per channel, smoothed peaks of each joint averaged over frames,
        // and per frame the peak of the joint-averaged smoothed field
        // projected onto the horizontal plane.
        let mut inputs = vec![0.0; c_len * in_len];
        let mut context = Vec::with_capacity(cfg.context_len());
        let mut frame_peaks = Vec::with_capacity(cfg.frames * FRAME_FEATURES);
        let plane = dims[1] * dims[2];
        let mut proj = vec![0.0; plane];
        let mut s = vec![0.0; v];
        let mut line = Vec::new();
        let mut peak = Vec::with_capacity(PEAK_FEATURES);
        let inv_joints = 1.0 / cfg.joints as f64;
        let inv_frames = 1.0 / cfg.frames as f64;
        let mut joint_mean = vec![0.0; cfg.joints * v];
        for (c, ch) in x.channels().enumerate() {
            s.copy_from_slice(ch);
            smooth_in_place(&mut s, &dims, &mut line);
            peak.clear();
            peak_estimate(&s, &dims, &mut peak);
            let row = &mut inputs[c * in_len..(c + 1) * in_len];
            row[..g].copy_from_slice(&self.down.apply(ch));
            row[g..g + PEAK_FEATURES].copy_from_slice(&peak);
            context.extend_from_slice(&peak);
            let k = c % cfg.joints;
            for (a, b) in joint_mean[k * v..(k + 1) * v].iter_mut().zip(&s) {
                *a += b * inv_frames;
            }
            if c % cfg.joints == 0 {
                proj.fill(0.0);
            }
            for column in s.chunks_exact(plane) {
                for (a, b) in proj.iter_mut().zip(column) {
                    *a += b * inv_joints;
                }
            }
            if c % cfg.joints == cfg.joints - 1 {
                peak_estimate(&proj, &dims[1..], &mut frame_peaks);
            }
        }
        for (k, mean) in joint_mean.chunks_exact(v).enumerate() {
            peak.clear();
            peak_estimate(mean, &dims, &mut peak);
            context.extend_from_slice(&peak);
            for t in 0..cfg.frames {
                let c = t * cfg.joints + k;
                inputs[c * in_len + g + PEAK_FEATURES..(c + 1) * in_len].copy_from_slice(&peak);
            }
        }
        context.extend_from_slice(&frame_peaks);

        let mut shared = p[COND_B].clone();
        matvec_add(&p[COND_W], cfg.feature_len(), &features, &mut shared);
        matvec_add(&p[TIME_W], cfg.time_dim, &temb, &mut shared);
        matvec_add(&p[CTX_W], cfg.context_len(), &context, &mut shared);
        for (s, b) in shared.iter_mut().zip(&p[IN_B]) {
            *s += b;
        }

        let mut z1 = vec![0.0; c_len * w];
        let mut z2 = vec![0.0; c_len * w];
        let mut head = vec![0.0; c_len * HEAD_OUT];
        let mut centers = vec![0.0; c_len * 3];
        let mut out = vec![0.0; c_len * v];
        let mut h = vec![0.0; w];
        for c in 0..c_len {
            let input = &inputs[c * in_len..(c + 1) * in_len];
            let z1c = &mut z1[c * w..(c + 1) * w];
            for ((z, s), e) in z1c.iter_mut().zip(&shared).zip(&p[CHAN_EMBED][c * w..]) {
                *z = s + e;
            }
            matvec_add(&p[IN_W], in_len, input, z1c);
            for (hv, z) in h.iter_mut().zip(z1c.iter()) {
                *hv = z.max(0.0);
            }
            let z2c = &mut z2[c * w..(c + 1) * w];
            z2c.copy_from_slice(&p[HID_B]);
            matvec_add(&p[HID_W], w, &h, z2c);
            for (hv, z) in h.iter_mut().zip(z2c.iter()) {
                *hv = z.max(0.0);
            }
            let o = &mut head[c * HEAD_OUT..(c + 1) * HEAD_OUT];
            o.copy_from_slice(&p[OUT_B][c * HEAD_OUT..(c + 1) * HEAD_OUT]);
            matvec_add(&p[OUT_W][c * HEAD_OUT * w..(c + 1) * HEAD_OUT * w], w, &h, o);
            let (gate, mix) = (sigmoid(o[3]), sigmoid(o[4]));
            let mu = &mut centers[c * 3..(c + 1) * 3];
            for a in 0..3 {
                let r = o[a].tanh();
                let anchor = input[g + a] + mix * (input[g + PEAK_FEATURES + a] - input[g + a]);
                mu[a] = from_unit(r + gate * (anchor - r), dims[a]);
            }
            let gh = gaussian_profile(mu[0], dims[0], cfg.sigma);
            let gw = gaussian_profile(mu[1], dims[1], cfg.sigma);
            let gd = gaussian_profile(mu[2], dims[2], cfg.sigma);
            let mut it = out[c * v..(c + 1) * v].iter_mut();
            for a in &gh {
                for b in &gw {
                    let ab = a * b;
                    for d in &gd {
                        *it.next().expect("channel length") = ab * d;
                    }
                }
            }
        }
        let field = HeatmapField::from_values(cfg.spec, cfg.frames, cfg.joints, out, FieldMode::Raw)?;
        Ok((field, ForwardCache { task: cond.task.index(), features, temb, context, inputs, z1, z2, head, centers }))
    }

    /// Parameter gradients of `sum(upstream * output)` for the forward pass
    /// recorded in `cache`.
    pub fn backward(&self, cache: &ForwardCache, upstream: &[f64]) -> Result<Params> {
        let cfg = &self.config;
        let p = &self.params.tensors;
        let (w, g, c_len, v) = (cfg.width, cfg.trunk_cells(), cfg.channels(), cfg.spec.voxel_count());
        let [dh, dw, dd] = cfg.spec.dims;
        let in_len = cfg.input_len();
        if upstream.len() != c_len * v {
            return Err(Error::ShapeMismatch(format!("upstream has {} values, expected {}", upstream.len(), c_len * v)));
        }
        let inv_var = 1.0 / (cfg.sigma * cfg.sigma);
        let mut grads = Params::zeros(cfg);
        let gt = &mut grads.tensors;
        let mut d_shared = vec![0.0; w];
        let mut h1 = vec![0.0; w];
        let mut h2 = vec![0.0; w];
        let mut hw = vec![0.0; dh * dw];
        for c in 0..c_len {
            let dy = &upstream[c * v..(c + 1) * v];
            if dy.iter().all(|&d| d == 0.0) {
                continue;
            }
            let mu = &cache.centers[c * 3..(c + 1) * 3];
            let gh = gaussian_profile(mu[0], dh, cfg.sigma);
            let gw = gaussian_profile(mu[1], dw, cfg.sigma);
            let gd = gaussian_profile(mu[2], dd, cfg.sigma);
            // Contract the upstream against the separable profiles.
            let mut td = vec![0.0; dd];
            for (idx, row) in dy.chunks_exact(dd).enumerate() {
                let (hi, wi) = (idx / dw, idx % dw);
                hw[idx] = row.iter().zip(&gd).map(|(a, b)| a * b).sum();
                let ab = gh[hi] * gw[wi];
                for (t, r) in td.iter_mut().zip(row) {
                    *t += ab * r;
                }
            }
            let mut th = vec![0.0; dh];
            let mut tw = vec![0.0; dw];
            for hi in 0..dh {
                for wi in 0..dw {
                    let x = hw[hi * dw + wi];
                    th[hi] += x * gw[wi];
                    tw[wi] += x * gh[hi];
                }
            }
            let d_center = |prof: &[f64], t: &[f64], m: f64| -> f64 {
                prof.iter().zip(t).enumerate().map(|(k, (p, t))| p * t * (k as f64 - m) * inv_var).sum()
            };
            let d_mu = [d_center(&gh, &th, mu[0]), d_center(&gw, &tw, mu[1]), d_center(&gd, &td, mu[2])];

            let o = &cache.head[c * HEAD_OUT..(c + 1) * HEAD_OUT];
            let input = &cache.inputs[c * in_len..(c + 1) * in_len];
            let (gate, mix) = (sigmoid(o[3]), sigmoid(o[4]));
            let mut d_o = [0.0; HEAD_OUT];
            for a in 0..3 {
                let du = d_mu[a] * cfg.spec.dims[a] as f64 / 2.0;
                let r = o[a].tanh();
                let spread = input[g + PEAK_FEATURES + a] - input[g + a];
                let anchor = input[g + a] + mix * spread;
                d_o[a] = du * (1.0 - gate) * (1.0 - r * r);
                d_o[3] += du * (anchor - r) * gate * (1.0 - gate);
                d_o[4] += du * gate * spread * mix * (1.0 - mix);
            }

            let z1c = &cache.z1[c * w..(c + 1) * w];
            let z2c = &cache.z2[c * w..(c + 1) * w];
            for k in 0..w {
                h1[k] = z1c[k].max(0.0);
                h2[k] = z2c[k].max(0.0);
            }
            let head_w = c * HEAD_OUT * w..(c + 1) * HEAD_OUT * w;
            outer_add(&mut gt[OUT_W][head_w.clone()], w, &d_o, &h2);
            for (b, d) in gt[OUT_B][c * HEAD_OUT..].iter_mut().zip(&d_o) {
                *b += d;
            }
            let mut dz2 = vec![0.0; w];
            matvec_t_add(&p[OUT_W][head_w], w, &d_o, &mut dz2);
            for (d, z) in dz2.iter_mut().zip(z2c) {
                if *z <= 0.0 {
                    *d = 0.0;
                }
            }
            outer_add(&mut gt[HID_W], w, &dz2, &h1);
            for (b, d) in gt[HID_B].iter_mut().zip(&dz2) {
                *b += d;
            }
            let mut dz1 = vec![0.0; w];
            matvec_t_add(&p[HID_W], w, &dz2, &mut dz1);
            for (d, z) in dz1.iter_mut().zip(z1c) {
                if *z <= 0.0 {
                    *d = 0.0;
                }
            }
            outer_add(&mut gt[IN_W], in_len, &dz1, input);
            for k in 0..w {
                gt[IN_B][k] += dz1[k];
                gt[CHAN_EMBED][c * w + k] += dz1[k];
                d_shared[k] += dz1[k];
            }
        }
        for (b, d) in gt[COND_B].iter_mut().zip(&d_shared) {
            *b += d;
        }
        outer_add(&mut gt[COND_W], cfg.feature_len(), &d_shared, &cache.features);
        outer_add(&mut gt[TIME_W], cfg.time_dim, &d_shared, &cache.temb);
        outer_add(&mut gt[CTX_W], cfg.context_len(), &d_shared, &cache.context);
        let mut d_feat = vec![0.0; cfg.feature_len()];
        matvec_t_add(&p[COND_W], cfg.feature_len(), &d_shared, &mut d_feat);
        let e = cfg.embed_dim;
        let off = cfg.pooled_len();
        for k in 0..e {
            gt[TASK_EMBED][cache.task * e + k] += d_feat[off + k];
        }
        Ok(grads)
    }
}

impl X0Denoiser for Denoiser {
    type Condition = ConditionFeatures;

    fn predict_x0(&self, x_i: &HeatmapField, i: usize, cond: &ConditionFeatures) -> Result<HeatmapField> {
        self.forward(x_i, i, cond).map(|(f, _)| f)
    }
}
