//! Helpers shared by the training integration tests.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use voxmotion_core::denoiser::train::TrainingItem;
use voxmotion_core::denoiser::Denoiser;
use voxmotion_core::diffusion::{forward_noise_into, DiffusionSchedule};
use voxmotion_core::geometry::SkeletonTopology;
use voxmotion_core::heatmap::{FieldMode, HeatmapField};
use voxmotion_core::losses::{total_loss, LossWeights};

/// A noised training input: item index, timestep and field.
pub type Probe = (usize, usize, HeatmapField);

/// Fixed (timestep, noise) probes: `per_item` draws for each item.
pub fn make_probes(items: &[TrainingItem], model: &Denoiser, per_item: usize, seed: u64) -> Vec<Probe> {
    let cfg = model.config();
    let sched = DiffusionSchedule::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut probes = Vec::new();
    for (idx, it) in items.iter().enumerate() {
        let target = it.target(model).unwrap();
        for _ in 0..per_item {
            let i = rng.random_range(1..=sched.steps());
            let noise: Vec<f64> = (0..target.values().len()).map(|_| StandardNormal.sample(&mut rng)).collect();
            let mut x = vec![0.0; noise.len()];
            forward_noise_into(target.values(), &noise, sched.alpha_bar(i), &mut x);
            probes.push((idx, i, HeatmapField::from_values(cfg.spec, cfg.frames, cfg.joints, x, FieldMode::Raw).unwrap()));
        }
    }
    probes
}

/// Mean total loss of `model` over the probes.
pub fn probe_loss(model: &Denoiser, items: &[TrainingItem], probes: &[Probe]) -> f64 {
    let topo = SkeletonTopology::toy();
    let w = LossWeights::default();
    let total: f64 = probes
        .iter()
        .map(|(idx, i, x)| {
            let it = &items[*idx];
            let (pred, _) = model.forward(x, *i, &it.cond).unwrap();
            total_loss(&pred, &it.target(model).unwrap(), &it.gt, &topo, &w, false).unwrap().total
        })
        .sum();
    total / probes.len() as f64
}
