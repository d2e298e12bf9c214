//! Training loops: unconditional DDPM pre-training and the
//! direct-regression U-Net baseline, plus held-out evaluation helpers.
//!
//! Each optimization step runs one forward/backward pass per batch
//! element on its own tape (batch elements are independent graphs), then
//! averages the per-sample gradients in index order and applies one Adam
//! update. The per-sample passes may run on a thread pool; the merge
//! order is fixed, so the result is bit-identical regardless of thread
//! count. Land cells are zeroed out of the network input and masked out
//! of the loss, so the loss is invariant to land values in the data.

use rand::Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::denoiser::{self, DenoiserConfig, DenoiserError, DenoiserParams};
use crate::rng::{self, Stream};
use crate::sampler::{ObservationSet, SampleSpace};
use crate::schedule::{DiffusionSchedule, ScheduleError};
use crate::synth::{self, GridField, NormState, SynthError};
use crate::tensor::{Tape, TensorError};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid train config: {0}")]
    BadConfig(String),
    #[error("training data is empty")]
    EmptyData,
    #[error("training fields must be normalized with shared geometry")]
    BadData,
    #[error("non-finite loss at step {step}; recent losses: {recent:?}")]
    NonFiniteLoss { step: usize, recent: Vec<f64> },
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Denoiser(#[from] DenoiserError),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error(transparent)]
    Synth(#[from] SynthError),
}

pub type Result<T> = std::result::Result<T, TrainError>;

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub learning_rate: f32,
    pub batch_size: usize,
    pub total_steps: usize,
    pub checkpoint_every: usize,
    pub seed: u64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.learning_rate < 0.0 || !self.learning_rate.is_finite() {
            return Err(TrainError::BadConfig(format!("learning rate {}", self.learning_rate)));
        }
        if self.batch_size == 0 || self.total_steps == 0 || self.checkpoint_every == 0 {
            return Err(TrainError::BadConfig("batch size, steps and checkpoint interval must be positive".into()));
        }
        if self.checkpoint_every > self.total_steps {
            return Err(TrainError::BadConfig(format!(
                "checkpoint_every {} > total_steps {}",
                self.checkpoint_every, self.total_steps
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct TrainLogEntry {
    pub step: usize,
    pub loss: f64,
    pub wall_ms: u64,
}

#[derive(Debug, Clone, Default)]
pub struct TrainLog {
    pub entries: Vec<TrainLogEntry>,
}

impl TrainLog {
    pub fn mean_loss(&self, range: std::ops::Range<usize>) -> f64 {
        let slice = &self.entries[range];
        slice.iter().map(|e| e.loss).sum::<f64>() / slice.len() as f64
    }
}

/// Side-channel for wall-clock and checkpoint emission; keeps the loops
/// free of IO.
pub trait TrainObserver {
    fn now_ms(&mut self) -> u64 {
        0
    }
    fn on_checkpoint(&mut self, _step: usize, _params: &DenoiserParams) {}
}

/// Observer that does nothing; for tests and library callers.
pub struct NullObserver;
impl TrainObserver for NullObserver {}

/// Adam with the standard (0.9, 0.999, 1e-8) moment configuration.
pub struct Adam {
    lr: f32,
    beta1: f32,
    beta2: f32,
    eps: f32,
    step_count: u32,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
}

impl Adam {
    pub fn new(lr: f32, sizes: &[usize]) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step_count: 0,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    /// One update over parallel slices of parameters and gradients.
    pub fn step(&mut self, params: &mut DenoiserParams, grads: &[Vec<f32>]) {
        assert_eq!(grads.len(), self.m.len());
        self.step_count += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step_count as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step_count as i32);
        for (i, g) in grads.iter().enumerate() {
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            let p = params.tensor_at_mut(i).data_mut();
            for j in 0..g.len() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g[j];
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g[j] * g[j];
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                p[j] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }
}

fn check_corpus(data: &[GridField]) -> Result<(usize, usize, usize, Vec<f32>, usize)> {
    let first = data.first().ok_or(TrainError::EmptyData)?;
    if data.iter().any(|f| {
        f.norm_state != NormState::Normalized
            || f.layers != first.layers
            || f.height != first.height
            || f.width != first.width
            || f.land_mask != first.land_mask
    }) {
        return Err(TrainError::BadData);
    }
    let (l, h, w) = (first.layers, first.height, first.width);
    let hw = h * w;
    let mut mask = vec![0.0f32; l * hw];
    for layer in 0..l {
        for c in 0..hw {
            mask[layer * hw + c] = if first.land_mask[c] == 0 { 1.0 } else { 0.0 };
        }
    }
    let ocean_total = first.ocean_cells() * l;
    if ocean_total == 0 {
        return Err(TrainError::BadData);
    }
    Ok((l, h, w, mask, ocean_total))
}

struct SamplePass {
    loss: f64,
    grads: Vec<Vec<f32>>,
}

/// Forward + backward for one training example already assembled as a
/// network input and regression target, masked to ocean cells.
fn masked_regression_pass(
    params: &DenoiserParams,
    input: Vec<f32>,
    in_shape: &[usize],
    target: Vec<f32>,
    target_shape: &[usize],
    mask: &[f32],
    ocean_total: usize,
    t: usize,
) -> Result<SamplePass> {
    let mut tape = Tape::new();
    let bound = denoiser::bind(&mut tape, params, true);
    let x = tape.constant(input, in_shape)?;
    let y = tape.constant(target, target_shape)?;
    let m = tape.constant(mask.to_vec(), target_shape)?;
    let out = denoiser::forward_bound(&mut tape, params.config(), &bound, x, t)?;
    let diff = tape.sub(out, y)?;
    let masked = tape.mul(diff, m)?;
    let sq = tape.mul(masked, masked)?;
    let total = tape.sum_all(sq)?;
    let loss = tape.scale(total, 1.0 / ocean_total as f32)?;
    let loss_value = tape.value(loss)[0] as f64;
    tape.backward(loss)?;
    let grads = bound
        .ids()
        .iter()
        .enumerate()
        .map(|(i, &id)| {
            tape.grad(id)
                .map(|g| g.to_vec())
                .unwrap_or_else(|| vec![0.0; params.tensor_at(i).numel()])
        })
        .collect();
    Ok(SamplePass { loss: loss_value, grads })
}

fn merge_gradients(passes: &[SamplePass], params: &DenoiserParams) -> Vec<Vec<f32>> {
    let inv = 1.0 / passes.len() as f32;
    let mut merged: Vec<Vec<f32>> = (0..params.tensor_count())
        .map(|i| vec![0.0f32; params.tensor_at(i).numel()])
        .collect();
    for pass in passes {
        for (acc, g) in merged.iter_mut().zip(&pass.grads) {
            for (a, &v) in acc.iter_mut().zip(g) {
                *a += v;
            }
        }
    }
    for acc in merged.iter_mut() {
        for a in acc.iter_mut() {
            *a *= inv;
        }
    }
    merged
}

/// Unconditional DDPM pre-training: per step, each batch element draws a
/// uniform timestep and fresh Gaussian noise, forms x_t through the
/// forward marginal, and the loss is the masked MSE between predicted and
/// true noise over ocean cells.
pub fn train_ddpm(
    data: &[GridField],
    cfg: &TrainConfig,
    sched: &DiffusionSchedule,
    dcfg: &DenoiserConfig,
    observer: &mut dyn TrainObserver,
) -> Result<(DenoiserParams, TrainLog)> {
    cfg.validate()?;
    let (l, h, w, mask, ocean_total) = check_corpus(data)?;
    if dcfg.in_channels != l || dcfg.out_channels != l {
        return Err(TrainError::BadConfig(format!(
            "denoiser channels {}x{} vs {} data layers",
            dcfg.in_channels, dcfg.out_channels, l
        )));
    }
    dcfg.validate_spatial(h, w).map_err(TrainError::Denoiser)?;

    let mut params = DenoiserParams::init(dcfg, cfg.seed)?;
    let sizes: Vec<usize> = (0..params.tensor_count()).map(|i| params.tensor_at(i).numel()).collect();
    let mut adam = Adam::new(cfg.learning_rate, &sizes);
    let mut log = TrainLog::default();
    let mut rng = rng::stream_rng(cfg.seed, Stream::TrainStep);
    let n_elem = l * h * w;
    let shape = [1usize, l, h, w];

    for step in 0..cfg.total_steps {
        // draw the whole batch sequentially so the stream is stable
        let jobs: Vec<(usize, usize, Vec<f32>)> = (0..cfg.batch_size)
            .map(|_| {
                let idx = rng.gen_range(0..data.len());
                let t = rng.gen_range(1..=sched.steps());
                let eps = rng::normal_f32(&mut rng, n_elem);
                (idx, t, eps)
            })
            .collect();

        let passes: Vec<Result<SamplePass>> = jobs
            .par_iter()
            .map(|(idx, t, eps)| {
                let x0 = &data[*idx].data;
                let ab = sched.alpha_bar(*t);
                let (ca, ce) = (ab.sqrt() as f32, (1.0 - ab).sqrt() as f32);
                // x_t by the forward marginal, land cells forced to zero
                let xt: Vec<f32> = x0
                    .iter()
                    .zip(eps)
                    .zip(&mask)
                    .map(|((&x, &e), &m)| (ca * x + ce * e) * m)
                    .collect();
                masked_regression_pass(&params, xt, &shape, eps.clone(), &shape, &mask, ocean_total, *t)
            })
            .collect();
        let passes: Vec<SamplePass> = passes.into_iter().collect::<Result<_>>()?;

        let loss = passes.iter().map(|p| p.loss).sum::<f64>() / passes.len() as f64;
        if !loss.is_finite() {
            let recent = log.entries.iter().rev().take(20).map(|e| e.loss).collect();
            return Err(TrainError::NonFiniteLoss { step, recent });
        }
        let grads = merge_gradients(&passes, &params);
        adam.step(&mut params, &grads);
        log.entries.push(TrainLogEntry { step, loss, wall_ms: observer.now_ms() });
        if (step + 1) % cfg.checkpoint_every == 0 {
            observer.on_checkpoint(step + 1, &params);
        }
    }
    Ok((params, log))
}

/// Builds the baseline's 2L-channel input: observed values (zeros
/// elsewhere) stacked with the binary mask.
pub fn baseline_input(obs: &ObservationSet) -> Vec<f32> {
    let n = obs.numel();
    let mut input = Vec::with_capacity(2 * n);
    input.extend_from_slice(&obs.values);
    input.extend(obs.mask.iter().map(|&m| m as f32));
    input
}

/// Direct-regression baseline: the same U-Net backbone maps sparse
/// observations (values + mask as 2L channels) straight to the full
/// field. Observation locations are resampled per batch element.
pub fn train_baseline(
    data: &[GridField],
    cfg: &TrainConfig,
    dcfg: &DenoiserConfig,
    pretrain_guided_rate: f64,
    observer: &mut dyn TrainObserver,
) -> Result<(DenoiserParams, TrainLog)> {
    cfg.validate()?;
    let (l, h, w, mask, ocean_total) = check_corpus(data)?;
    if dcfg.in_channels != 2 * l || dcfg.out_channels != l {
        return Err(TrainError::BadConfig(format!(
            "baseline needs in_channels = {} and out_channels = {}, got {}x{}",
            2 * l,
            l,
            dcfg.in_channels,
            dcfg.out_channels
        )));
    }
    dcfg.validate_spatial(h, w).map_err(TrainError::Denoiser)?;

    let mut params = DenoiserParams::init(dcfg, cfg.seed)?;
    let sizes: Vec<usize> = (0..params.tensor_count()).map(|i| params.tensor_at(i).numel()).collect();
    let mut adam = Adam::new(cfg.learning_rate, &sizes);
    let mut log = TrainLog::default();
    let mut rng = rng::stream_rng(cfg.seed, Stream::TrainStep);
    let in_shape = [1usize, 2 * l, h, w];
    let out_shape = [1usize, l, h, w];

    for step in 0..cfg.total_steps {
        let jobs: Vec<(usize, u64)> = (0..cfg.batch_size)
            .map(|_| (rng.gen_range(0..data.len()), rng.gen::<u64>()))
            .collect();

        let passes: Vec<Result<SamplePass>> = jobs
            .par_iter()
            .map(|(idx, obs_seed)| {
                let field = &data[*idx];
                let obs = synth::sample_observations(field, pretrain_guided_rate, *obs_seed)?;
                masked_regression_pass(
                    &params,
                    baseline_input(&obs),
                    &in_shape,
                    field.data.clone(),
                    &out_shape,
                    &mask,
                    ocean_total,
                    1,
                )
            })
            .collect();
        let passes: Vec<SamplePass> = passes.into_iter().collect::<Result<_>>()?;

        let loss = passes.iter().map(|p| p.loss).sum::<f64>() / passes.len() as f64;
        if !loss.is_finite() {
            let recent = log.entries.iter().rev().take(20).map(|e| e.loss).collect();
            return Err(TrainError::NonFiniteLoss { step, recent });
        }
        let grads = merge_gradients(&passes, &params);
        adam.step(&mut params, &grads);
        log.entries.push(TrainLogEntry { step, loss, wall_ms: observer.now_ms() });
        if (step + 1) % cfg.checkpoint_every == 0 {
            observer.on_checkpoint(step + 1, &params);
        }
    }
    Ok((params, log))
}

/// Runs the trained baseline on one observation set and de-normalizes.
pub fn baseline_reconstruct(
    params: &DenoiserParams,
    space: &SampleSpace,
    obs: &ObservationSet,
) -> Result<GridField> {
    let mut tape = Tape::new();
    let bound = denoiser::bind(&mut tape, params, false);
    let x = tape.constant(baseline_input(obs), &[1, 2 * space.layers, space.height, space.width])?;
    let out = denoiser::forward_bound(&mut tape, params.config(), &bound, x, 1)?;
    let normalized = GridField {
        layers: space.layers,
        height: space.height,
        width: space.width,
        data: tape.value(out).to_vec(),
        land_mask: space.land_mask.to_vec(),
        norm_state: NormState::Normalized,
        stats: Some(space.stats.clone()),
    };
    Ok(synth::denormalize(&normalized, space.stats)?)
}

/// Held-out noise-prediction MSE over ocean cells; the zero predictor
/// scores 1.0 by construction.
pub fn epsilon_mse(
    params: &DenoiserParams,
    sched: &DiffusionSchedule,
    heldout: &[GridField],
    draws: usize,
    seed: u64,
) -> Result<f64> {
    let (l, h, w, mask, ocean_total) = check_corpus(heldout)?;
    let n_elem = l * h * w;
    let results: Vec<Result<f64>> = (0..draws)
        .into_par_iter()
        .map(|i| {
            let mut rng = rng::indexed_rng(seed, Stream::Heldout, i as u64);
            let field = &heldout[i % heldout.len()];
            let t = rng.gen_range(1..=sched.steps());
            let eps = rng::normal_f32(&mut rng, n_elem);
            let ab = sched.alpha_bar(t);
            let (ca, ce) = (ab.sqrt() as f32, (1.0 - ab).sqrt() as f32);
            let xt: Vec<f32> = field
                .data
                .iter()
                .zip(&eps)
                .zip(&mask)
                .map(|((&x, &e), &m)| (ca * x + ce * e) * m)
                .collect();
            let xt_t = crate::tensor::Tensor::new(xt, &[1, l, h, w]).map_err(TrainError::Tensor)?;
            let pred = denoiser::denoise(params, &xt_t, t)?;
            let mut sum = 0.0f64;
            for ((&p, &e), &m) in pred.data().iter().zip(&eps).zip(&mask) {
                if m == 1.0 {
                    sum += ((p - e) as f64).powi(2);
                }
            }
            Ok(sum / ocean_total as f64)
        })
        .collect();
    let mut total = 0.0;
    for r in results {
        total += r?;
    }
    Ok(total / draws as f64)
}
