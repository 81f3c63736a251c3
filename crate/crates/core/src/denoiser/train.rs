//! Training: per-item noising, loss, backprop and Adam updates.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{pool_condition, ConditionFeatures, Denoiser, Params, TaskCondition};
use crate::diffusion::{forward_noise_into, DiffusionSchedule};
use crate::error::{Error, Result};
use crate::geometry::{MotionSequence, SkeletonTopology};
use crate::heatmap::{amplitude_scale, encode_motion, FieldMode, HeatmapField};
use crate::losses::{total_loss, LossWeights};
use crate::synthdata::{TaskId, ToySample};
use crate::uiv::build_uiv;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// First and second moment estimates plus the update counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Params,
    pub v: Params,
    pub step: u64,
}

impl AdamState {
    pub fn new(like: &Params) -> Self {
        let mut m = like.clone();
        m.scale(0.0);
        Self { v: m.clone(), m, step: 0 }
    }

    pub fn update(&mut self, params: &mut Params, grads: &Params, lr: f64, cfg: &AdamConfig) {
        self.step += 1;
        let b1 = 1.0 - cfg.beta1.powi(self.step as i32);
        let b2 = 1.0 - cfg.beta2.powi(self.step as i32);
        let tensors = params.tensors_mut().iter_mut().zip(grads.tensors());
        for (((p, g), m), v) in tensors.zip(self.m.tensors_mut()).zip(self.v.tensors_mut()) {
            for j in 0..p.len() {
                m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g[j];
                v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g[j] * g[j];
                p[j] -= lr * (m[j] / b1) / ((v[j] / b2).sqrt() + cfg.eps);
            }
        }
    }
}

/// Linearly decayed learning rate, reaching zero after `total` steps.
pub fn decayed_lr(base: f64, step: u64, total: u64) -> f64 {
    if total == 0 {
        return base;
    }
    base * (1.0 - step as f64 / total as f64).max(0.0)
}

/// Deterministic interleaving of task types in a fixed integer ratio.
///
/// Uses smooth weighted round-robin, so any window of `sum(ratio)` draws
/// contains each task exactly its ratio number of times.
#[derive(Debug, Clone)]
pub struct TaskMixer {
    tasks: Vec<TaskId>,
    weights: Vec<i64>,
    credit: Vec<i64>,
}

impl TaskMixer {
    pub fn new(mix: &[(TaskId, u32)]) -> Result<Self> {
        let mix: Vec<_> = mix.iter().filter(|(_, w)| *w > 0).collect();
        if mix.is_empty() {
            return Err(Error::InvalidConfig("task mix has no positive weight".into()));
        }
        Ok(Self {
            tasks: mix.iter().map(|(t, _)| *t).collect(),
            weights: mix.iter().map(|(_, w)| *w as i64).collect(),
            credit: vec![0; mix.len()],
        })
    }

    pub fn next_task(&mut self) -> TaskId {
        let total: i64 = self.weights.iter().sum();
        for (c, w) in self.credit.iter_mut().zip(&self.weights) {
            *c += w;
        }
        let best = (0..self.credit.len()).max_by_key(|&i| (self.credit[i], std::cmp::Reverse(i))).unwrap_or(0);
        self.credit[best] -= total;
        self.tasks[best]
    }
}

/// Parses `h:o:s` into weights for approach, reach and goalwalk.
pub fn parse_mix(s: &str) -> Result<Vec<(TaskId, u32)>> {
    let parts: Vec<&str> = s.split(':').collect();
    if parts.len() != 3 {
        return Err(Error::InvalidConfig(format!("mix must look like h:o:s, got {s:?}")));
    }
    let tasks = [TaskId::HumanHuman, TaskId::HumanObject, TaskId::HumanScene];
    tasks
        .iter()
        .zip(parts)
        .map(|(t, p)| {
            p.trim().parse::<u32>().map(|w| (*t, w)).map_err(|_| Error::InvalidConfig(format!("bad mix weight {p:?}")))
        })
        .collect()
}

/// One training example with its condition statistics precomputed.
#[derive(Debug, Clone)]
pub struct TrainingItem {
    pub gt: MotionSequence,
    pub cond: ConditionFeatures,
}

impl TrainingItem {
    pub fn from_sample(sample: &ToySample, model: &Denoiser) -> Result<Self> {
        let cfg = model.config();
        if sample.motion.frames() != cfg.frames || sample.motion.joints() != cfg.joints {
            return Err(Error::ShapeMismatch("sample motion does not match the model".into()));
        }
        let uiv = build_uiv(&sample.entities, &cfg.spec)?;
        let cond = pool_condition(&TaskCondition { task: sample.task, uiv, goal: sample.goal }, cfg)?;
        Ok(Self { gt: sample.motion.clone(), cond })
    }

    /// Ground-truth heatmap field in the amplitude-scaled space the model predicts.
    pub fn target(&self, model: &Denoiser) -> Result<HeatmapField> {
        let cfg = model.config();
        let enc = encode_motion(&self.gt, &cfg.spec, cfg.sigma)?;
        Ok(enc.field.scaled(amplitude_scale(cfg.sigma)))
    }
}

/// Averaged losses of one update.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StepReport {
    pub total: f64,
    pub rec: f64,
    pub pos: f64,
    pub vel: f64,
    pub sk: f64,
    pub ori: f64,
    pub lr: f64,
}

/// One optimizer update on `batch`.
///
/// Per item: a timestep uniform in `1..=N` and standard-normal noise drawn
/// from `rng`, the noised target, the x0 prediction and the combined loss.
/// Gradients are averaged over the batch before the Adam update.
#[allow(clippy::too_many_arguments)]
pub fn train_step(
    model: &mut Denoiser,
    adam: &mut AdamState,
    batch: &[&TrainingItem],
    sched: &DiffusionSchedule,
    weights: &LossWeights,
    topo: &SkeletonTopology,
    lr: f64,
    adam_cfg: &AdamConfig,
    rng: &mut ChaCha8Rng,
) -> Result<StepReport> {
    if batch.is_empty() {
        return Err(Error::InvalidConfig("empty batch".into()));
    }
    let cfg = model.config().clone();
    let mut grads = Params::zeros(&cfg);
    let mut rep = StepReport { lr, ..Default::default() };
    let inv = 1.0 / batch.len() as f64;
    let n = cfg.channels() * cfg.spec.voxel_count();
    let mut noise = vec![0.0; n];
    let mut noisy = vec![0.0; n];
    for item in batch {
        let target = item.target(model)?;
        let i = rng.random_range(1..=sched.steps());
        for z in noise.iter_mut() {
            *z = StandardNormal.sample(rng);
        }
        forward_noise_into(target.values(), &noise, sched.alpha_bar(i), &mut noisy);
        let x_i = HeatmapField::from_values(cfg.spec, cfg.frames, cfg.joints, noisy.clone(), FieldMode::Raw)?;
        let (pred, cache) = model.forward(&x_i, i, &item.cond)?;
        let report = total_loss(&pred, &target, &item.gt, topo, weights, true)
            .map_err(|e| match e {
                Error::NonFinite(m) => Error::NonFinite(format!("{m} at timestep {i}")),
                e => e,
            })?;
        let g = model.backward(&cache, report.grad.as_deref().unwrap_or_default())?;
        grads.add_assign(&g);
        rep.total += report.total * inv;
        rep.rec += report.rec * inv;
        rep.pos += report.pos * inv;
        rep.vel += report.vel * inv;
        rep.sk += report.sk * inv;
        rep.ori += report.ori * inv;
    }
    grads.scale(inv);
    if !grads.is_finite() {
        return Err(Error::NonFinite("parameter gradients".into()));
    }
    adam.update(model.params_mut(), &grads, lr, adam_cfg);
    if !model.params().is_finite() {
        return Err(Error::NonFinite("parameters after update".into()));
    }
    Ok(rep)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: u64,
    pub batch: usize,
    pub lr: f64,
    pub seed: u64,
    pub mix: Vec<(TaskId, u32)>,
    pub weights: LossWeights,
    pub adam: AdamConfig,
}

/// Stateful training loop over a fixed pool of items.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub model: Denoiser,
    pub adam: AdamState,
    pub sched: DiffusionSchedule,
    pub topo: SkeletonTopology,
    pub config: TrainConfig,
    rng: ChaCha8Rng,
    mixer: TaskMixer,
}

impl Trainer {
    pub fn new(model: Denoiser, sched: DiffusionSchedule, topo: SkeletonTopology, config: TrainConfig) -> Result<Self> {
        config.weights.validate()?;
        if config.batch == 0 {
            return Err(Error::InvalidConfig("batch must be positive".into()));
        }
        if !(config.lr.is_finite() && config.lr >= 0.0) {
            return Err(Error::InvalidConfig("learning rate must be nonnegative".into()));
        }
        let mixer = TaskMixer::new(&config.mix)?;
        Ok(Self {
            adam: AdamState::new(model.params()),
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            model,
            sched,
            topo,
            config,
            mixer,
        })
    }

    /// Restores optimizer state, e.g. from a checkpoint.
    pub fn with_adam(mut self, adam: AdamState) -> Self {
        self.adam = adam;
        self
    }

    /// Draws a batch: tasks follow the mix, items within a task uniformly.
    pub fn draw_batch<'a>(&mut self, items: &'a [TrainingItem]) -> Result<Vec<&'a TrainingItem>> {
        let mut out = Vec::with_capacity(self.config.batch);
        for _ in 0..self.config.batch {
            let task = self.mixer.next_task();
            let count = items.iter().filter(|it| it.cond.task == task).count();
            if count == 0 {
                return Err(Error::InsufficientSamples(format!("no training items for task {task:?}")));
            }
            let pick = self.rng.random_range(0..count);
            out.push(items.iter().filter(|it| it.cond.task == task).nth(pick).expect("index in range"));
        }
        Ok(out)
    }

    /// One update with the decayed learning rate for the current step.
    pub fn step(&mut self, items: &[TrainingItem]) -> Result<StepReport> {
        let batch = self.draw_batch(items)?;
        let lr = decayed_lr(self.config.lr, self.adam.step, self.config.steps);
        train_step(
            &mut self.model,
            &mut self.adam,
            &batch,
            &self.sched,
            &self.config.weights,
            &self.topo,
            lr,
            &self.config.adam,
            &mut self.rng,
        )
    }

    /// Runs until `config.steps` updates have been applied, calling `on_step` after each.
    pub fn run(&mut self, items: &[TrainingItem], mut on_step: impl FnMut(u64, &StepReport)) -> Result<Vec<StepReport>> {
        let mut log = Vec::new();
        while self.adam.step < self.config.steps {
            let rep = self.step(items)?;
            on_step(self.adam.step, &rep);
            log.push(rep);
        }
        Ok(log)
    }
}
