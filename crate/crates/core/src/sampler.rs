//! Observation-guided reverse diffusion.
//!
//! Each reverse step predicts the noise, recovers the clean-field
//! estimate, forms the posterior mean, and shifts it by the soft-extended
//! observation gradient scaled with the fixed posterior variance. The
//! shift term always uses the schedule variance; `SigmaMode` only
//! controls whether sampling noise is added on top. The guidance gradient
//! is taken with respect to the clean-field estimate directly, so
//! inference never touches the autodiff tape.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::denoiser::{self, DenoiserError, DenoiserParams};
use crate::rng::{self, Stream};
use crate::schedule::{DiffusionSchedule, ScheduleError};
use crate::synth::{self, GridField, NormState, NormStats, SynthError};
use crate::tensor::Tensor;

#[derive(Debug, Error)]
pub enum SamplerError {
    #[error("guidance strength > 0 but the observation mask is empty")]
    EmptyMask,
    #[error("soft-extension kernel size {0} must be odd or 0")]
    EvenKernel(usize),
    #[error("invalid guidance config: {0}")]
    BadConfig(String),
    #[error("{0}")]
    DimsMismatch(String),
    #[error("non-finite state at reverse step t={t}")]
    NonFinite { t: usize },
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error(transparent)]
    Denoiser(#[from] DenoiserError),
    #[error(transparent)]
    Synth(#[from] SynthError),
}

pub type Result<T> = std::result::Result<T, SamplerError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SigmaMode {
    /// Deterministic reverse steps: no sampling noise.
    Zero,
    /// Ancestral sampling with the fixed posterior variance.
    Ddpm,
}

impl SigmaMode {
    pub fn label(self) -> &'static str {
        match self {
            SigmaMode::Zero => "zero",
            SigmaMode::Ddpm => "ddpm",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DistanceKind {
    /// L2 norm of the masked residual; gradient is the normalized residual.
    Euclidean,
    /// Squared L2 norm; gradient is 2x the residual.
    Squared,
}

/// Guidance hyperparameters: strength `s`, noise mode, soft-extension
/// kernel, and the distance function.
#[derive(Debug, Clone)]
pub struct GuidanceConfig {
    pub strength: f64,
    pub sigma_mode: SigmaMode,
    pub kernel_size: usize,
    pub kernel_sigma: f64,
    pub distance: DistanceKind,
}

impl GuidanceConfig {
    /// Kernel sigma defaults to size/4 so the tables' single "size" knob
    /// also fixes the width.
    pub fn new(strength: f64, sigma_mode: SigmaMode, kernel_size: usize) -> Result<Self> {
        let cfg = GuidanceConfig {
            strength,
            sigma_mode,
            kernel_size,
            kernel_sigma: kernel_size as f64 / 4.0,
            distance: DistanceKind::Squared,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_distance(mut self, distance: DistanceKind) -> Self {
        self.distance = distance;
        self
    }

    pub fn with_kernel_sigma(mut self, sigma: f64) -> Result<Self> {
        self.kernel_sigma = sigma;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.strength < 0.0 || !self.strength.is_finite() {
            return Err(SamplerError::BadConfig(format!("strength {}", self.strength)));
        }
        if self.kernel_size != 0 && self.kernel_size % 2 == 0 {
            return Err(SamplerError::EvenKernel(self.kernel_size));
        }
        if self.kernel_size > 0 && !(self.kernel_sigma > 0.0) {
            return Err(SamplerError::BadConfig(format!("kernel sigma {}", self.kernel_sigma)));
        }
        Ok(())
    }
}

/// Sparse observations: binary mask (1 = observed, never on land) and the
/// observed values in normalized units, stored dense with zeros off-mask.
#[derive(Debug, Clone)]
pub struct ObservationSet {
    pub layers: usize,
    pub height: usize,
    pub width: usize,
    pub mask: Vec<u8>,
    pub values: Vec<f32>,
    pub guided_rate: f64,
    pub trial_seed: u64,
}

impl ObservationSet {
    pub fn empty(layers: usize, height: usize, width: usize) -> Self {
        let n = layers * height * width;
        ObservationSet {
            layers,
            height,
            width,
            mask: vec![0; n],
            values: vec![0.0; n],
            guided_rate: 0.0,
            trial_seed: 0,
        }
    }

    pub fn numel(&self) -> usize {
        self.layers * self.height * self.width
    }

    pub fn observed_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m == 1).count()
    }
}

/// Geometry plus normalization context for sampling runs.
#[derive(Debug, Clone, Copy)]
pub struct SampleSpace<'a> {
    pub layers: usize,
    pub height: usize,
    pub width: usize,
    pub land_mask: &'a [u8],
    pub stats: &'a NormStats,
}

impl<'a> SampleSpace<'a> {
    pub fn numel(&self) -> usize {
        self.layers * self.height * self.width
    }

    /// Space borrowing a normalized field's geometry and stats.
    pub fn of_field(field: &'a GridField) -> Result<Self> {
        let stats = field.stats.as_ref().ok_or_else(|| {
            SamplerError::DimsMismatch("field carries no normalization stats".into())
        })?;
        Ok(SampleSpace {
            layers: field.layers,
            height: field.height,
            width: field.width,
            land_mask: &field.land_mask,
            stats,
        })
    }

    fn zero_land(&self, x: &mut [f64]) {
        let hw = self.height * self.width;
        for l in 0..self.layers {
            for (c, &m) in self.land_mask.iter().enumerate() {
                if m == 1 {
                    x[l * hw + c] = 0.0;
                }
            }
        }
    }
}

/// g = -s * d/dx0_hat of the masked observation distance. Nonzero only on
/// mask cells; zero everywhere when s = 0.
pub fn guidance_gradient(x0_hat: &[f64], obs: &ObservationSet, cfg: &GuidanceConfig) -> Result<Vec<f64>> {
    if x0_hat.len() != obs.numel() {
        return Err(SamplerError::DimsMismatch(format!(
            "x0_hat has {} elements, observations {}",
            x0_hat.len(),
            obs.numel()
        )));
    }
    if cfg.strength == 0.0 {
        return Ok(vec![0.0; x0_hat.len()]);
    }
    if obs.observed_count() == 0 {
        return Err(SamplerError::EmptyMask);
    }
    let mut diff = vec![0.0f64; x0_hat.len()];
    for (i, d) in diff.iter_mut().enumerate() {
        if obs.mask[i] == 1 {
            *d = x0_hat[i] - obs.values[i] as f64;
        }
    }
    match cfg.distance {
        DistanceKind::Euclidean => {
            let norm = diff.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-8);
            Ok(diff.iter().map(|v| -cfg.strength * v / norm).collect())
        }
        DistanceKind::Squared => Ok(diff.iter().map(|v| -cfg.strength * 2.0 * v).collect()),
    }
}

/// Per-layer 2D convolution with an unnormalized Gaussian kernel (peak 1
/// at the center), zero-padded borders, no cross-layer spreading.
/// kernel_size 0 returns the input unchanged.
pub fn soft_extension(
    g: &[f64],
    layers: usize,
    height: usize,
    width: usize,
    cfg: &GuidanceConfig,
) -> Result<Vec<f64>> {
    if g.len() != layers * height * width {
        return Err(SamplerError::DimsMismatch(format!(
            "gradient has {} elements for {}x{}x{}",
            g.len(),
            layers,
            height,
            width
        )));
    }
    if cfg.kernel_size == 0 {
        return Ok(g.to_vec());
    }
    if cfg.kernel_size % 2 == 0 {
        return Err(SamplerError::EvenKernel(cfg.kernel_size));
    }
    let r = (cfg.kernel_size / 2) as isize;
    let two_sigma_sq = 2.0 * cfg.kernel_sigma * cfg.kernel_sigma;
    let k = cfg.kernel_size;
    let mut weights = vec![0.0f64; k * k];
    for dy in -r..=r {
        for dx in -r..=r {
            weights[((dy + r) as usize) * k + (dx + r) as usize] =
                (-((dy * dy + dx * dx) as f64) / two_sigma_sq).exp();
        }
    }
    let hw = height * width;
    let mut out = vec![0.0f64; g.len()];
    for l in 0..layers {
        let src = &g[l * hw..(l + 1) * hw];
        let dst = &mut out[l * hw..(l + 1) * hw];
        for y in 0..height as isize {
            for x in 0..width as isize {
                let mut acc = 0.0;
                for dy in -r..=r {
                    let yy = y + dy;
                    if yy < 0 || yy >= height as isize {
                        continue;
                    }
                    for dx in -r..=r {
                        let xx = x + dx;
                        if xx < 0 || xx >= width as isize {
                            continue;
                        }
                        acc += weights[((dy + r) as usize) * k + (dx + r) as usize]
                            * src[yy as usize * width + xx as usize];
                    }
                }
                dst[y as usize * width + x as usize] = acc;
            }
        }
    }
    Ok(out)
}

fn predict_eps(params: &DenoiserParams, space: &SampleSpace, xt: &[f64], t: usize) -> Result<Vec<f64>> {
    let x32: Vec<f32> = xt.iter().map(|&v| v as f32).collect();
    let xt_t = Tensor::new(x32, &[1, space.layers, space.height, space.width])
        .map_err(DenoiserError::Tensor)?;
    let eps = denoiser::denoise(params, &xt_t, t)?;
    Ok(eps.data().iter().map(|&v| v as f64).collect())
}

/// One reverse transition x_t -> x_{t-1} with the guidance shift.
#[allow(clippy::too_many_arguments)]
pub fn guided_step(
    params: &DenoiserParams,
    space: &SampleSpace,
    xt: &[f64],
    t: usize,
    obs: &ObservationSet,
    cfg: &GuidanceConfig,
    sched: &DiffusionSchedule,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<f64>> {
    let eps_hat = predict_eps(params, space, xt, t)?;
    let x0_hat = sched.predict_x0(xt, &eps_hat, t)?;
    let mut next = sched.posterior_mean(&x0_hat, xt, t)?;

    let var = sched.posterior_var(t);
    if cfg.strength > 0.0 {
        let g = guidance_gradient(&x0_hat, obs, cfg)?;
        let g = soft_extension(&g, space.layers, space.height, space.width, cfg)?;
        for (n, gi) in next.iter_mut().zip(&g) {
            *n += var * gi;
        }
    }
    if cfg.sigma_mode == SigmaMode::Ddpm && t > 1 {
        let sd = var.sqrt();
        for n in next.iter_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *n += sd * z;
        }
    }
    space.zero_land(&mut next);
    if next.iter().any(|v| !v.is_finite()) {
        return Err(SamplerError::NonFinite { t });
    }
    Ok(next)
}

fn check_setup(params: &DenoiserParams, space: &SampleSpace, obs: &ObservationSet) -> Result<()> {
    let cfg = params.config();
    if cfg.in_channels != space.layers || cfg.out_channels != space.layers {
        return Err(SamplerError::DimsMismatch(format!(
            "denoiser has {} channels, space has {} layers",
            cfg.in_channels, space.layers
        )));
    }
    if space.land_mask.len() != space.height * space.width {
        return Err(SamplerError::DimsMismatch("land mask size".into()));
    }
    if space.stats.per_layer.len() != space.layers {
        return Err(SamplerError::DimsMismatch("stats layer count".into()));
    }
    if obs.numel() != space.numel() {
        return Err(SamplerError::DimsMismatch("observation dims".into()));
    }
    // observations must sit on ocean cells
    let hw = space.height * space.width;
    for l in 0..obs.layers {
        for c in 0..hw {
            if obs.mask[l * hw + c] == 1 && space.land_mask[c] == 1 {
                return Err(SamplerError::DimsMismatch(format!(
                    "observation on land at layer {l}, cell {c}"
                )));
            }
        }
    }
    Ok(())
}

/// Full reverse trajectory from pure noise, guided by `obs`; returns the
/// de-normalized physical field with land filled.
pub fn reconstruct(
    params: &DenoiserParams,
    space: &SampleSpace,
    obs: &ObservationSet,
    cfg: &GuidanceConfig,
    sched: &DiffusionSchedule,
    seed: u64,
) -> Result<GridField> {
    cfg.validate()?;
    check_setup(params, space, obs)?;
    let mut rng = rng::stream_rng(seed, Stream::SampleNoise);
    let mut x = rng::normal_f64(&mut rng, space.numel());
    space.zero_land(&mut x);
    for t in (1..=sched.steps()).rev() {
        x = guided_step(params, space, &x, t, obs, cfg, sched, &mut rng)?;
    }
    let normalized = GridField {
        layers: space.layers,
        height: space.height,
        width: space.width,
        data: x.iter().map(|&v| v as f32).collect(),
        land_mask: space.land_mask.to_vec(),
        norm_state: NormState::Normalized,
        stats: Some(space.stats.clone()),
    };
    Ok(synth::denormalize(&normalized, space.stats)?)
}

/// Plain ancestral sampling: guidance off, ddpm noise on.
pub fn sample_unconditional(
    params: &DenoiserParams,
    space: &SampleSpace,
    sched: &DiffusionSchedule,
    seed: u64,
) -> Result<GridField> {
    let obs = ObservationSet::empty(space.layers, space.height, space.width);
    let cfg = GuidanceConfig::new(0.0, SigmaMode::Ddpm, 0)?;
    reconstruct(params, space, &obs, &cfg, sched, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schedule::build_linear_schedule;
    use proptest::prelude::*;

    fn obs_1cell(l: usize, h: usize, w: usize, cell: usize, value: f32) -> ObservationSet {
        let mut obs = ObservationSet::empty(l, h, w);
        obs.mask[cell] = 1;
        obs.values[cell] = value;
        obs
    }

    #[test]
    fn gradient_zero_when_matching_or_unguided() {
        let cfg = GuidanceConfig::new(4.0, SigmaMode::Zero, 0).unwrap();
        let obs = obs_1cell(1, 4, 4, 5, 0.75);
        let mut x0 = vec![9.0f64; 16];
        x0[5] = 0.75;
        let g = guidance_gradient(&x0, &obs, &cfg).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));

        let cfg0 = GuidanceConfig::new(0.0, SigmaMode::Zero, 0).unwrap();
        let g0 = guidance_gradient(&vec![1.0; 16], &obs, &cfg0).unwrap();
        assert!(g0.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gradient_hand_value_squared_distance() {
        // single observed cell, squared distance, diff 0.5, s=4 -> -4.0
        let cfg = GuidanceConfig::new(4.0, SigmaMode::Zero, 0).unwrap();
        let obs = obs_1cell(1, 2, 2, 2, 1.0);
        let mut x0 = vec![0.0f64; 4];
        x0[2] = 1.5;
        let g = guidance_gradient(&x0, &obs, &cfg).unwrap();
        assert!((g[2] + 4.0).abs() < 1e-12, "{}", g[2]);
        assert_eq!(g[0], 0.0);
    }

    #[test]
    fn gradient_euclidean_normalizes() {
        let cfg = GuidanceConfig::new(2.0, SigmaMode::Zero, 0)
            .unwrap()
            .with_distance(DistanceKind::Euclidean);
        let mut obs = ObservationSet::empty(1, 2, 2);
        obs.mask[0] = 1;
        obs.mask[1] = 1;
        let x0 = vec![3.0f64, 4.0, 0.0, 0.0]; // residual (3,4), norm 5
        let g = guidance_gradient(&x0, &obs, &cfg).unwrap();
        assert!((g[0] + 2.0 * 3.0 / 5.0).abs() < 1e-12);
        assert!((g[1] + 2.0 * 4.0 / 5.0).abs() < 1e-12);
    }

    #[test]
    fn empty_mask_with_strength_is_error() {
        let cfg = GuidanceConfig::new(1.0, SigmaMode::Zero, 0).unwrap();
        let obs = ObservationSet::empty(1, 2, 2);
        assert!(matches!(
            guidance_gradient(&vec![0.0; 4], &obs, &cfg),
            Err(SamplerError::EmptyMask)
        ));
    }

    #[test]
    fn soft_extension_zero_passthrough_and_identity() {
        let cfg = GuidanceConfig::new(1.0, SigmaMode::Zero, 3).unwrap();
        let z = soft_extension(&vec![0.0; 32], 2, 4, 4, &cfg).unwrap();
        assert!(z.iter().all(|&v| v == 0.0));

        let cfg0 = GuidanceConfig::new(1.0, SigmaMode::Zero, 0).unwrap();
        let g: Vec<f64> = (0..32).map(|v| v as f64).collect();
        assert_eq!(soft_extension(&g, 2, 4, 4, &cfg0).unwrap(), g);
    }

    #[test]
    fn soft_extension_single_spike_hand_values() {
        let cfg = GuidanceConfig::new(1.0, SigmaMode::Zero, 3).unwrap();
        let sigma: f64 = 3.0 / 4.0;
        let (h, w) = (5, 5);
        let mut g = vec![0.0f64; h * w];
        let v: f64 = 2.5;
        g[2 * w + 2] = v;
        let out = soft_extension(&g, 1, h, w, &cfg).unwrap();
        assert!((out[2 * w + 2] - v).abs() < 1e-12, "center must stay exactly v");
        let near = v * (-1.0 / (2.0 * sigma * sigma)).exp();
        for idx in [1 * w + 2, 3 * w + 2, 2 * w + 1, 2 * w + 3] {
            assert!((out[idx] - near).abs() < 1e-12);
        }
        let diag = v * (-2.0 / (2.0 * sigma * sigma)).exp();
        assert!((out[1 * w + 1] - diag).abs() < 1e-12);
    }

    #[test]
    fn soft_extension_distant_spikes_superpose() {
        let cfg = GuidanceConfig::new(1.0, SigmaMode::Zero, 3).unwrap();
        let (h, w) = (8, 8);
        let mut a = vec![0.0f64; h * w];
        let mut b = vec![0.0f64; h * w];
        a[1 * w + 1] = 1.0;
        b[6 * w + 6] = -2.0;
        let mut both = vec![0.0f64; h * w];
        both[1 * w + 1] = 1.0;
        both[6 * w + 6] = -2.0;
        let ea = soft_extension(&a, 1, h, w, &cfg).unwrap();
        let eb = soft_extension(&b, 1, h, w, &cfg).unwrap();
        let eboth = soft_extension(&both, 1, h, w, &cfg).unwrap();
        for i in 0..h * w {
            assert!((eboth[i] - (ea[i] + eb[i])).abs() < 1e-12);
        }
    }

    #[test]
    fn even_kernel_is_error() {
        assert!(matches!(GuidanceConfig::new(1.0, SigmaMode::Zero, 4), Err(SamplerError::EvenKernel(4))));
        let mut cfg = GuidanceConfig::new(1.0, SigmaMode::Zero, 3).unwrap();
        cfg.kernel_size = 2;
        assert!(matches!(
            soft_extension(&vec![0.0; 4], 1, 2, 2, &cfg),
            Err(SamplerError::EvenKernel(2))
        ));
    }

    fn tiny_setup() -> (DenoiserParams, NormStats, Vec<u8>) {
        let cfg = crate::denoiser::DenoiserConfig {
            in_channels: 2,
            out_channels: 2,
            base_channels: 4,
            channel_mult: vec![1, 2],
            res_blocks_per_level: 1,
            time_embed_dim: 8,
        };
        let params = DenoiserParams::init(&cfg, 5).unwrap();
        let stats = NormStats {
            per_layer: vec![
                crate::synth::LayerStat { mean: 10.0, std: 2.0 },
                crate::synth::LayerStat { mean: 5.0, std: 1.0 },
            ],
        };
        let mut land = vec![0u8; 8 * 8];
        land[3] = 1;
        land[20] = 1;
        (params, stats, land)
    }

    #[test]
    fn unguided_ddpm_step_matches_manual_composition() {
        let (params, stats, land) = tiny_setup();
        let space = SampleSpace { layers: 2, height: 8, width: 8, land_mask: &land, stats: &stats };
        let sched = build_linear_schedule(50, 1e-3, 0.05).unwrap();
        let obs = ObservationSet::empty(2, 8, 8);
        let cfg = GuidanceConfig::new(0.0, SigmaMode::Ddpm, 0).unwrap();
        let xt: Vec<f64> = (0..128).map(|i| ((i * 37 % 23) as f64 - 11.0) / 7.0).collect();
        let t = 20;

        let mut rng_a = rng::stream_rng(4, Stream::SampleNoise);
        let stepped = guided_step(&params, &space, &xt, t, &obs, &cfg, &sched, &mut rng_a).unwrap();

        // manual: eps -> x0_hat -> posterior mean + sqrt(var) * z
        let mut rng_b = rng::stream_rng(4, Stream::SampleNoise);
        let eps = predict_eps(&params, &space, &xt, t).unwrap();
        let x0 = sched.predict_x0(&xt, &eps, t).unwrap();
        let mut manual = sched.posterior_mean(&x0, &xt, t).unwrap();
        let sd = sched.posterior_var(t).sqrt();
        for m in manual.iter_mut() {
            let z: f64 = rand::Rng::sample(&mut rng_b, StandardNormal);
            *m += sd * z;
        }
        space.zero_land(&mut manual);
        for (a, b) in stepped.iter().zip(&manual) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn sigma_zero_step_is_deterministic() {
        let (params, stats, land) = tiny_setup();
        let space = SampleSpace { layers: 2, height: 8, width: 8, land_mask: &land, stats: &stats };
        let sched = build_linear_schedule(50, 1e-3, 0.05).unwrap();
        let mut obs = ObservationSet::empty(2, 8, 8);
        obs.mask[9] = 1;
        obs.values[9] = 0.4;
        let cfg = GuidanceConfig::new(4.0, SigmaMode::Zero, 3).unwrap();
        let xt: Vec<f64> = (0..128).map(|i| (i as f64 * 0.71).sin()).collect();
        let mut r1 = rng::stream_rng(1, Stream::SampleNoise);
        let mut r2 = rng::stream_rng(2, Stream::SampleNoise);
        let a = guided_step(&params, &space, &xt, 11, &obs, &cfg, &sched, &mut r1).unwrap();
        let b = guided_step(&params, &space, &xt, 11, &obs, &cfg, &sched, &mut r2).unwrap();
        assert_eq!(a, b, "zero mode must not consume randomness");
    }

    #[test]
    fn final_step_collapses_to_x0_hat() {
        let (params, stats, land) = tiny_setup();
        let space = SampleSpace { layers: 2, height: 8, width: 8, land_mask: &land, stats: &stats };
        let sched = build_linear_schedule(50, 1e-3, 0.05).unwrap();
        let mut obs = ObservationSet::empty(2, 8, 8);
        obs.mask[10] = 1;
        obs.values[10] = -0.3;
        let cfg = GuidanceConfig::new(4.0, SigmaMode::Ddpm, 3).unwrap();
        let xt: Vec<f64> = (0..128).map(|i| ((i % 9) as f64 - 4.0) / 5.0).collect();
        let mut rng = rng::stream_rng(3, Stream::SampleNoise);
        let stepped = guided_step(&params, &space, &xt, 1, &obs, &cfg, &sched, &mut rng).unwrap();
        // posterior_var(1) = 0, so shift and noise both vanish: x_0 = x0_hat
        let eps = predict_eps(&params, &space, &xt, 1).unwrap();
        let mut x0 = sched.predict_x0(&xt, &eps, 1).unwrap();
        space.zero_land(&mut x0);
        for (a, b) in stepped.iter().zip(&x0) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn kernel_zero_guidance_stays_on_mask() {
        // with no extension, off-mask cells receive zero guidance at any step
        let cfg = GuidanceConfig::new(3.0, SigmaMode::Zero, 0).unwrap();
        let mut obs = ObservationSet::empty(1, 4, 4);
        obs.mask[6] = 1;
        obs.values[6] = 2.0;
        let x0: Vec<f64> = (0..16).map(|i| i as f64 * 0.1).collect();
        let g = guidance_gradient(&x0, &obs, &cfg).unwrap();
        let spread = soft_extension(&g, 1, 4, 4, &cfg).unwrap();
        for (i, &v) in spread.iter().enumerate() {
            if i != 6 {
                assert_eq!(v, 0.0);
            }
        }
    }

    #[test]
    fn reconstruct_zero_params_has_near_zero_mean() {
        // zero-initialized head: eps_hat = 0, x0_hat = xt / sqrt(abar_t);
        // the chain contracts toward zero in normalized space.
        let (params, stats, land) = tiny_setup();
        let space = SampleSpace { layers: 2, height: 8, width: 8, land_mask: &land, stats: &stats };
        let sched = build_linear_schedule(60, 1e-3, 0.04).unwrap();
        let field = sample_unconditional(&params, &space, &sched, 12).unwrap();
        assert_eq!(field.norm_state, NormState::Physical);
        // de-normalized mean should be near the per-layer stat means
        let means = field.layer_means();
        assert!((means[0] - 10.0).abs() < 2.0, "layer0 mean {}", means[0]);
        assert!((means[1] - 5.0).abs() < 1.0, "layer1 mean {}", means[1]);
        // land filled
        assert_eq!(field.data[3], crate::synth::LAND_FILL_PHYSICAL);
    }

    #[test]
    fn reconstruct_fixed_seed_reproducible() {
        let (params, stats, land) = tiny_setup();
        let space = SampleSpace { layers: 2, height: 8, width: 8, land_mask: &land, stats: &stats };
        let sched = build_linear_schedule(30, 1e-3, 0.05).unwrap();
        let mut obs = ObservationSet::empty(2, 8, 8);
        obs.mask[12] = 1;
        obs.values[12] = 0.2;
        let cfg = GuidanceConfig::new(2.0, SigmaMode::Zero, 3).unwrap();
        let a = reconstruct(&params, &space, &obs, &cfg, &sched, 31).unwrap();
        let b = reconstruct(&params, &space, &obs, &cfg, &sched, 31).unwrap();
        assert_eq!(a.data, b.data);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn soft_extension_is_linear(scale in -3.0f64..3.0, seed in 0u64..1000) {
            let cfg = GuidanceConfig::new(1.0, SigmaMode::Zero, 5).unwrap();
            let mut r = rng::stream_rng(seed, Stream::Heldout);
            let a = rng::normal_f64(&mut r, 48);
            let b = rng::normal_f64(&mut r, 48);
            let ea = soft_extension(&a, 3, 4, 4, &cfg).unwrap();
            let eb = soft_extension(&b, 3, 4, 4, &cfg).unwrap();
            // homogeneity + additivity
            let combo: Vec<f64> = a.iter().zip(&b).map(|(x, y)| scale * x + y).collect();
            let ecombo = soft_extension(&combo, 3, 4, 4, &cfg).unwrap();
            for i in 0..48 {
                prop_assert!((ecombo[i] - (scale * ea[i] + eb[i])).abs() < 1e-9);
            }
        }
    }
}
