//! Effective run configuration: a named profile, optionally overlaid by a
//! flat JSON file, then by command-line flags.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use voxmotion_core::denoiser::train::{parse_mix, AdamConfig, TrainConfig};
use voxmotion_core::denoiser::DenoiserConfig;
use voxmotion_core::diffusion::DiffusionSchedule;
use voxmotion_core::geometry::{SkeletonTopology, DEFAULT_FPS};
use voxmotion_core::losses::LossWeights;
use voxmotion_core::metrics::{DEFAULT_CONTACT_THRESHOLD, DEFAULT_FOOT_HEIGHT};
use voxmotion_core::synthdata::{GenContext, TaskId};
use voxmotion_core::uiv::VolumeSpec;
use voxmotion_core::{Error, Result};

fn malformed(e: serde_json::Error) -> Error {
    Error::Format { format: "config", reason: e.to_string() }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub profile: String,
    pub dims: [usize; 3],
    pub pitch: [f64; 3],
    pub origin: [f64; 3],
    pub sigma: f64,
    pub frames: usize,
    pub joints: usize,
    pub fps: f64,
    pub timesteps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub ddim_steps: usize,
    pub lambda_pos: f64,
    pub lambda_vel: f64,
    pub lambda_sk: f64,
    pub lambda_ori: f64,
    pub trunk_grid: [usize; 3],
    pub width: usize,
    pub embed_dim: usize,
    pub time_dim: usize,
    pub lr: f64,
    pub batch: usize,
    pub steps: u64,
    pub mix: String,
    pub seed: u64,
    pub data_count: usize,
    pub data_seed: u64,
    pub foot_height: f64,
    pub contact_threshold: f64,
    pub samples_per_bone: usize,
    pub log_every: u64,
}

impl RunConfig {
    /// 48^3 grid, sigma 3, T = 40, 500k steps at batch 32.
    pub fn full() -> Self {
        let spec = VolumeSpec::full();
        let w = LossWeights::default();
        Self {
            profile: "full".into(),
            dims: spec.dims,
            pitch: spec.pitch,
            origin: spec.origin,
            sigma: 3.0,
            frames: 40,
            joints: SkeletonTopology::toy().joint_count(),
            fps: DEFAULT_FPS,
            timesteps: voxmotion_core::diffusion::DEFAULT_TIMESTEPS,
            beta_start: voxmotion_core::diffusion::DEFAULT_BETA_START,
            beta_end: voxmotion_core::diffusion::DEFAULT_BETA_END,
            ddim_steps: voxmotion_core::diffusion::DEFAULT_DDIM_STEPS,
            lambda_pos: w.pos,
            lambda_vel: w.vel,
            lambda_sk: w.sk,
            lambda_ori: w.ori,
            trunk_grid: [4, 4, 4],
            width: 64,
            embed_dim: 16,
            time_dim: 16,
            lr: 3e-5,
            batch: 32,
            steps: 500_000,
            mix: "1:1:1".into(),
            seed: 0,
            data_count: 512,
            data_seed: 1,
            foot_height: DEFAULT_FOOT_HEIGHT,
            contact_threshold: DEFAULT_CONTACT_THRESHOLD,
            samples_per_bone: 48,
            log_every: 100,
        }
    }

    /// 16^3 grid, T = 8, sigma 1, batch 16; tuned for CPU training.
    pub fn desk() -> Self {
        let d = DenoiserConfig::desk();
        Self {
            profile: "desk".into(),
            dims: d.spec.dims,
            pitch: d.spec.pitch,
            origin: d.spec.origin,
            sigma: d.sigma,
            frames: d.frames,
            trunk_grid: d.trunk_grid,
            width: d.width,
            embed_dim: d.embed_dim,
            time_dim: d.time_dim,
            lr: 2e-3,
            batch: 16,
            steps: 7000,
            ..Self::full()
        }
    }

    pub fn profile(name: &str) -> Result<Self> {
        match name {
            "full" => Ok(Self::full()),
            "desk" => Ok(Self::desk()),
            _ => Err(Error::InvalidConfig(format!("unknown profile {name:?} (expected full or desk)"))),
        }
    }

    /// Profile defaults overlaid by the keys of a flat JSON object. The
    /// profile is taken from the document's `profile` key, else `fallback`.
    pub fn from_json(text: &str, fallback: &str) -> Result<Self> {
        let doc: Map<String, Value> = serde_json::from_str(text).map_err(malformed)?;
        let name = match doc.get("profile") {
            Some(Value::String(s)) => s.clone(),
            Some(_) => return Err(Error::InvalidConfig("profile must be a string".into())),
            None => fallback.to_string(),
        };
        let Value::Object(mut base) = serde_json::to_value(Self::profile(&name)?).expect("config serializes") else {
            unreachable!("config is a struct");
        };
        for (k, v) in doc {
            if !base.contains_key(&k) {
                return Err(Error::Format { format: "config", reason: format!("unknown key {k:?}") });
            }
            base.insert(k, v);
        }
        let cfg: Self = serde_json::from_value(Value::Object(base)).map_err(malformed)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, fallback: &str) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?, fallback)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.spec()?;
        self.denoiser()?.validate()?;
        self.schedule()?;
        self.weights().validate()?;
        parse_mix(&self.mix)?;
        let topo_joints = SkeletonTopology::toy().joint_count();
        if self.joints != topo_joints {
            return Err(Error::InvalidConfig(format!("joints must be {topo_joints} for the toy skeleton")));
        }
        if !(self.fps.is_finite() && self.fps > 0.0) {
            return Err(Error::InvalidConfig("fps must be positive".into()));
        }
        if self.ddim_steps == 0 || self.ddim_steps > self.timesteps {
            return Err(Error::InvalidConfig("ddim_steps must be in 1..=timesteps".into()));
        }
        if self.batch == 0 || self.log_every == 0 || self.samples_per_bone == 0 {
            return Err(Error::InvalidConfig("batch, log_every and samples_per_bone must be positive".into()));
        }
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return Err(Error::InvalidConfig("lr must be nonnegative".into()));
        }
        if !(self.foot_height > 0.0 && self.contact_threshold > 0.0) {
            return Err(Error::InvalidConfig("thresholds must be positive".into()));
        }
        Ok(())
    }

    pub fn spec(&self) -> Result<VolumeSpec> {
        VolumeSpec::new(self.dims, self.pitch, self.origin)
    }

    pub fn denoiser(&self) -> Result<DenoiserConfig> {
        Ok(DenoiserConfig {
            spec: self.spec()?,
            frames: self.frames,
            joints: self.joints,
            trunk_grid: self.trunk_grid,
            width: self.width,
            embed_dim: self.embed_dim,
            time_dim: self.time_dim,
            tasks: TaskId::ALL.len(),
            sigma: self.sigma,
        })
    }

    pub fn schedule(&self) -> Result<DiffusionSchedule> {
        DiffusionSchedule::new(self.timesteps, self.beta_start, self.beta_end)
    }

    pub fn weights(&self) -> LossWeights {
        LossWeights { pos: self.lambda_pos, vel: self.lambda_vel, sk: self.lambda_sk, ori: self.lambda_ori }
    }

    pub fn train(&self) -> Result<TrainConfig> {
        Ok(TrainConfig {
            steps: self.steps,
            batch: self.batch,
            lr: self.lr,
            seed: self.seed,
            mix: parse_mix(&self.mix)?,
            weights: self.weights(),
            adam: AdamConfig::default(),
        })
    }

    pub fn gen_context(&self) -> Result<GenContext> {
        GenContext::new(self.spec()?, self.frames)
    }
}
