//! Noise schedule, forward corruption and deterministic DDIM sampling for an
//! x0-predicting denoiser.
//!
//! Timesteps are 1-based: `alpha_bar(i)` for `i` in `1..=N` comes from the
//! schedule and `alpha_bar(0) = 1`, so a step that lands on 0 returns the
//! clean estimate exactly.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::heatmap::{FieldMode, HeatmapField};
use crate::uiv::VolumeSpec;

pub const DEFAULT_TIMESTEPS: usize = 1000;
pub const DEFAULT_BETA_START: f64 = 1e-4;
pub const DEFAULT_BETA_END: f64 = 0.02;
pub const DEFAULT_DDIM_STEPS: usize = 50;

#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionSchedule {
    betas: Vec<f64>,
    alphas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

impl DiffusionSchedule {
    /// Linear beta schedule from `beta_start` to `beta_end` inclusive over `n` steps.
    pub fn new(n: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidSchedule("at least one timestep is required".into()));
        }
        if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
            return Err(Error::InvalidSchedule(format!(
                "need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}"
            )));
        }
        let betas: Vec<f64> = (0..n)
            .map(|i| {
                if n == 1 {
                    beta_start
                } else {
                    beta_start + (beta_end - beta_start) * i as f64 / (n - 1) as f64
                }
            })
            .collect();
        let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
        let alpha_bars = alphas
            .iter()
            .scan(1.0, |acc, a| {
                *acc *= a;
                Some(*acc)
            })
            .collect();
        Ok(Self { betas, alphas, alpha_bars })
    }

    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    pub fn beta(&self, i: usize) -> f64 {
        self.betas[i - 1]
    }

    pub fn alpha(&self, i: usize) -> f64 {
        self.alphas[i - 1]
    }

    /// Cumulative product of alphas up to `i`; 1 at `i = 0`.
    pub fn alpha_bar(&self, i: usize) -> f64 {
        if i == 0 {
            1.0
        } else {
            self.alpha_bars[i - 1]
        }
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }

    fn check_timestep(&self, i: usize) -> Result<()> {
        if i > self.steps() {
            return Err(Error::InvalidTimestep(format!("{i} exceeds {} steps", self.steps())));
        }
        Ok(())
    }
}

impl Default for DiffusionSchedule {
    fn default() -> Self {
        Self::new(DEFAULT_TIMESTEPS, DEFAULT_BETA_START, DEFAULT_BETA_END).expect("valid default schedule")
    }
}

/// `sqrt(ab) * x0 + sqrt(1 - ab) * noise`, elementwise into `out`.
pub fn forward_noise_into(x0: &[f64], noise: &[f64], alpha_bar: f64, out: &mut [f64]) {
    let a = alpha_bar.sqrt();
    let b = (1.0 - alpha_bar).sqrt();
    for ((o, x), n) in out.iter_mut().zip(x0).zip(noise) {
        *o = a * x + b * n;
    }
}

/// Corrupts `x0` to timestep `i` with the given standard-normal `noise`.
pub fn forward_noise(x0: &HeatmapField, i: usize, noise: &[f64], sched: &DiffusionSchedule) -> Result<HeatmapField> {
    sched.check_timestep(i)?;
    if noise.len() != x0.values().len() {
        return Err(Error::ShapeMismatch("noise does not match field".into()));
    }
    let mut out = x0.clone().into_raw();
    forward_noise_into(x0.values(), noise, sched.alpha_bar(i), out.values_mut());
    Ok(out)
}

/// The noise implied by a noisy sample and a clean estimate.
pub fn implied_noise(x_i: &[f64], x0: &[f64], alpha_bar: f64) -> Vec<f64> {
    let a = alpha_bar.sqrt();
    let b = (1.0 - alpha_bar).sqrt();
    x_i.iter().zip(x0).map(|(x, c)| (x - a * c) / b).collect()
}

/// One deterministic DDIM update from timestep `i` to `i_prev < i`.
pub fn ddim_step(
    x_i: &HeatmapField,
    x0_hat: &HeatmapField,
    i: usize,
    i_prev: usize,
    sched: &DiffusionSchedule,
) -> Result<HeatmapField> {
    if i_prev >= i {
        return Err(Error::InvalidTimestep(format!("DDIM must move backwards, got {i} -> {i_prev}")));
    }
    sched.check_timestep(i)?;
    x_i.same_shape(x0_hat)?;
    let ab_prev = sched.alpha_bar(i_prev);
    if ab_prev == 1.0 {
        return Ok(x0_hat.clone().into_raw());
    }
    let eps = implied_noise(x_i.values(), x0_hat.values(), sched.alpha_bar(i));
    let mut out = x0_hat.clone().into_raw();
    forward_noise_into(x0_hat.values(), &eps, ab_prev, out.values_mut());
    Ok(out)
}

/// Evenly spaced decreasing timesteps `N, ..., ~N/steps` used by [`sample`];
/// the final update goes from the last entry to 0.
pub fn ddim_timesteps(n: usize, steps: usize) -> Result<Vec<usize>> {
    if steps == 0 || steps > n {
        return Err(Error::InvalidTimestep(format!("step count {steps} must be in 1..={n}")));
    }
    Ok((1..=steps).rev().map(|j| j * n / steps).collect())
}

/// Anything that predicts a clean field from a noisy one.
pub trait X0Denoiser {
    type Condition;

    fn predict_x0(&self, x_i: &HeatmapField, i: usize, cond: &Self::Condition) -> Result<HeatmapField>;
}

/// Shape of the field a sampler produces.
#[derive(Debug, Clone, Copy)]
pub struct FieldShape {
    pub spec: VolumeSpec,
    pub frames: usize,
    pub joints: usize,
}

/// Standard-normal field drawn from `rng`.
pub fn gaussian_field(shape: FieldShape, rng: &mut ChaCha8Rng) -> HeatmapField {
    let mut f = HeatmapField::zeros(shape.spec, shape.frames, shape.joints, FieldMode::Raw);
    for v in f.values_mut() {
        *v = StandardNormal.sample(rng);
    }
    f
}

/// DDIM sampling from seeded pure noise; returns the final clean estimate.
pub fn sample<D: X0Denoiser>(
    denoiser: &D,
    cond: &D::Condition,
    sched: &DiffusionSchedule,
    shape: FieldShape,
    step_count: usize,
    seed: u64,
) -> Result<HeatmapField> {
    let ts = ddim_timesteps(sched.steps(), step_count)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = gaussian_field(shape, &mut rng);
    for (j, &i) in ts.iter().enumerate() {
        let i_prev = ts.get(j + 1).copied().unwrap_or(0);
        let x0_hat = denoiser.predict_x0(&x, i, cond)?;
        if x0_hat.values().iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("denoiser output at timestep {i}")));
        }
        x = ddim_step(&x, &x0_hat, i, i_prev, sched)?;
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Oracle(HeatmapField);

    impl X0Denoiser for Oracle {
        type Condition = ();
        fn predict_x0(&self, _: &HeatmapField, _: usize, _: &()) -> Result<HeatmapField> {
            Ok(self.0.clone())
        }
    }

    fn shape() -> FieldShape {
        FieldShape { spec: VolumeSpec::new([3, 4, 2], [0.1; 3], [0.0; 3]).unwrap(), frames: 2, joints: 2 }
    }

    fn clean(seed: u64) -> HeatmapField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut f = gaussian_field(shape(), &mut rng);
        f.values_mut().iter_mut().for_each(|v| *v = v.abs() * 0.7);
        f
    }

    #[test]
    fn schedule_basics() {
        let one = DiffusionSchedule::new(1, 1e-4, 0.02).unwrap();
        assert_eq!(one.betas(), &[1e-4]);
        let s = DiffusionSchedule::default();
        assert_eq!(s.steps(), 1000);
        assert!((s.alpha_bar(1) - 0.9999).abs() < 1e-15);
        assert_eq!(s.alpha_bar(0), 1.0);
        assert!(s.betas().windows(2).all(|w| w[1] > w[0]));
        assert!(s.alpha_bars().windows(2).all(|w| w[1] < w[0]));
        assert!(s.alpha_bars().iter().all(|&a| a > 0.0 && a < 1.0));
        assert!(DiffusionSchedule::new(10, 0.0, 0.02).is_err());
        assert!(DiffusionSchedule::new(10, 0.03, 0.02).is_err());
        assert!(DiffusionSchedule::new(10, 0.01, 1.0).is_err());
    }

    #[test]
    fn forward_noise_limits() {
        let s = DiffusionSchedule::default();
        let x0 = clean(1);
        let noise = vec![0.0; x0.values().len()];
        let at0 = forward_noise(&x0, 0, &vec![1.0; x0.values().len()], &s).unwrap();
        assert_eq!(at0.values(), x0.values());
        let xi = forward_noise(&x0, 300, &noise, &s).unwrap();
        let a = s.alpha_bar(300).sqrt();
        for (x, c) in xi.values().iter().zip(x0.values()) {
            assert_eq!(*x, a * c);
        }
    }

    #[test]
    fn noise_inversion_identity() {
        let s = DiffusionSchedule::default();
        let x0 = clean(2);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let noise: Vec<f64> = (0..x0.values().len()).map(|_| StandardNormal.sample(&mut rng)).collect();
        for i in [1, 10, 500, 1000] {
            let xi = forward_noise(&x0, i, &noise, &s).unwrap();
            let eps = implied_noise(xi.values(), x0.values(), s.alpha_bar(i));
            let ab = s.alpha_bar(i);
            for (j, e) in eps.iter().enumerate() {
                let back = (xi.values()[j] - (1.0 - ab).sqrt() * e) / ab.sqrt();
                assert!((back - x0.values()[j]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn forward_noise_variance_monte_carlo() {
        // Pick the timestep whose alpha_bar is closest to 0.5.
        let s = DiffusionSchedule::default();
        let i = (1..=1000).min_by(|&a, &b| {
            (s.alpha_bar(a) - 0.5).abs().partial_cmp(&(s.alpha_bar(b) - 0.5).abs()).unwrap()
        }).unwrap();
        let ab = s.alpha_bar(i);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let xs: Vec<f64> = (0..10_000)
            .map(|_| {
                let n: f64 = StandardNormal.sample(&mut rng);
                let mut o = [0.0];
                forward_noise_into(&[0.0], &[n], ab, &mut o);
                o[0]
            })
            .collect();
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (xs.len() - 1) as f64;
        assert!((var - (1.0 - ab)).abs() < 0.02 && (var - 0.5).abs() < 0.02, "var {var} ab {ab}");
    }

    #[test]
    fn final_step_returns_estimate() {
        let s = DiffusionSchedule::default();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = gaussian_field(shape(), &mut rng);
        let x0 = clean(5);
        let out = ddim_step(&x, &x0, 20, 0, &s).unwrap();
        assert_eq!(out.values(), x0.values());
        assert!(ddim_step(&x, &x0, 20, 20, &s).is_err());
        let a = ddim_step(&x, &x0, 600, 400, &s).unwrap();
        let b = ddim_step(&x, &x0, 600, 400, &s).unwrap();
        assert_eq!(a.values(), b.values());
    }

    #[test]
    fn oracle_sampling_is_exact() {
        let s = DiffusionSchedule::default();
        let x0 = clean(6);
        for steps in [1, 5, 50, 1000] {
            let out = sample(&Oracle(x0.clone()), &(), &s, shape(), steps, 9).unwrap();
            let err = out.values().iter().zip(x0.values()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(err < 1e-5, "steps {steps}: {err}");
        }
    }

    #[test]
    fn timestep_subsequences() {
        assert_eq!(ddim_timesteps(1000, 1).unwrap(), vec![1000]);
        assert_eq!(ddim_timesteps(10, 10).unwrap(), (1..=10).rev().collect::<Vec<_>>());
        let t = ddim_timesteps(1000, 50).unwrap();
        assert_eq!(t.len(), 50);
        assert_eq!(t[0], 1000);
        assert_eq!(*t.last().unwrap(), 20);
        assert!(t.windows(2).all(|w| w[0] > w[1]));
        assert!(ddim_timesteps(10, 11).is_err());
    }

    /// A denoiser that depends on its input, so the trajectory matters.
    struct Shrink;

    impl X0Denoiser for Shrink {
        type Condition = f64;
        fn predict_x0(&self, x: &HeatmapField, i: usize, c: &f64) -> Result<HeatmapField> {
            Ok(x.scaled(c / (1.0 + i as f64 * 1e-3)))
        }
    }

    #[test]
    fn sampling_is_seed_deterministic() {
        let s = DiffusionSchedule::default();
        let a = sample(&Shrink, &0.5, &s, shape(), 50, 3).unwrap();
        let b = sample(&Shrink, &0.5, &s, shape(), 50, 3).unwrap();
        let c = sample(&Shrink, &0.5, &s, shape(), 50, 4).unwrap();
        assert_eq!(a.values(), b.values());
        assert_ne!(a.values(), c.values());
    }
}
