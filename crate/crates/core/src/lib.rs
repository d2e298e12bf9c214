//! Guided-diffusion reconstruction of multi-layer sea-temperature fields.
//!
//! The crate is organized around the pipeline stages:
//!
//! - [`tensor`]: dense f32 tensors with tape-based reverse-mode autodiff,
//!   enough to train the denoiser (conv, group norm, SiLU, linear,
//!   elementwise, reductions).
//! - [`schedule`]: noise-schedule construction and the closed-form diffusion
//!   quantities (forward marginal, posterior mean/variance, clean-field
//!   recovery).
//! - [`denoiser`]: U-Net-lite noise predictor with sinusoidal timestep
//!   embedding and residual blocks.
//! - [`trainer`]: unconditional diffusion pre-training plus the
//!   direct-regression U-Net baseline.
//! - [`synth`]: synthetic multi-layer temperature-field generator,
//!   observation sampling, and normalization.
//! - [`sampler`]: observation-guided reverse diffusion with Gaussian
//!   soft-extension of guidance gradients.
//! - [`metrics`]: reconstruction error reports, multi-trial averaging,
//!   ablation sweeps, and heatmap/CSV rendering.
//! - [`codec`]: binary codecs for parameter and grid-field files.
//! - [`oracle`]: independent reference implementations (f64, naive loops)
//!   used by the verification suites.

pub mod codec;
pub mod denoiser;
pub mod metrics;
pub mod oracle;
pub mod rng;
pub mod sampler;
pub mod schedule;
pub mod synth;
pub mod tensor;
pub mod trainer;
