//! Noise-schedule construction and closed-form diffusion quantities.
//!
//! All schedule math is carried in f64 so that the algebraic identities
//! (forward marginal vs. clean-field recovery) hold to tight tolerances;
//! only the tensor engine is f32. Timestep indices are 1-based: `t` runs
//! from 1 to `steps()`, and `alpha_bar(0)` is defined as 1 so the t=1
//! posterior collapses onto the predicted clean field.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ScheduleError {
    #[error("invalid beta range: start {start}, end {end} (need 0 < start <= end < 1)")]
    BadBetaRange { start: f64, end: f64 },
    #[error("schedule needs at least one step")]
    NoSteps,
    #[error("timestep {t} out of range 1..={steps}")]
    TimestepOutOfRange { t: usize, steps: usize },
    #[error("alpha_bar({t}) = {value:e} is numerically singular")]
    SingularAlphaBar { t: usize, value: f64 },
    #[error("{op}: length mismatch: {lhs} vs {rhs}")]
    LengthMismatch { op: &'static str, lhs: usize, rhs: usize },
}

pub type Result<T> = std::result::Result<T, ScheduleError>;

/// Variance schedule and derived per-step quantities for a diffusion chain.
#[derive(Debug, Clone)]
pub struct DiffusionSchedule {
    beta: Vec<f64>,
    alpha: Vec<f64>,
    alpha_bar: Vec<f64>,
    posterior_var: Vec<f64>,
}

/// Linear schedule endpoints used when the caller does not override them.
pub const DEFAULT_BETA_START: f64 = 1e-4;
pub const DEFAULT_BETA_END: f64 = 0.02;
pub const DEFAULT_STEPS: usize = 1000;

/// beta linearly interpolated over `steps` points, endpoints inclusive.
pub fn build_linear_schedule(steps: usize, beta_start: f64, beta_end: f64) -> Result<DiffusionSchedule> {
    if steps == 0 {
        return Err(ScheduleError::NoSteps);
    }
    if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
        return Err(ScheduleError::BadBetaRange { start: beta_start, end: beta_end });
    }
    let beta: Vec<f64> = if steps == 1 {
        vec![beta_start]
    } else {
        (0..steps)
            .map(|i| beta_start + (beta_end - beta_start) * i as f64 / (steps - 1) as f64)
            .collect()
    };
    let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();
    let mut alpha_bar = Vec::with_capacity(steps);
    let mut acc = 1.0;
    for a in &alpha {
        acc *= a;
        alpha_bar.push(acc);
    }
    // posterior variance beta_tilde_t = (1 - abar_{t-1}) / (1 - abar_t) * beta_t;
    // abar_0 := 1 makes beta_tilde_1 = 0 (no noise at the final denoising step).
    let mut posterior_var = Vec::with_capacity(steps);
    for t in 1..=steps {
        let prev = if t == 1 { 1.0 } else { alpha_bar[t - 2] };
        posterior_var.push((1.0 - prev) / (1.0 - alpha_bar[t - 1]) * beta[t - 1]);
    }
    Ok(DiffusionSchedule { beta, alpha, alpha_bar, posterior_var })
}

impl DiffusionSchedule {
    pub fn steps(&self) -> usize {
        self.beta.len()
    }

    fn check_t(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps() {
            return Err(ScheduleError::TimestepOutOfRange { t, steps: self.steps() });
        }
        Ok(())
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.beta[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alpha[t - 1]
    }

    /// Cumulative product of alphas; `alpha_bar(0) == 1`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bar[t - 1]
        }
    }

    /// Lower-bound reverse variance; zero at t = 1.
    pub fn posterior_var(&self, t: usize) -> f64 {
        self.posterior_var[t - 1]
    }

    pub fn betas(&self) -> &[f64] {
        &self.beta
    }

    /// Forward marginal: x_t = sqrt(abar_t) x_0 + sqrt(1 - abar_t) eps.
    pub fn q_sample(&self, x0: &[f64], eps: &[f64], t: usize) -> Result<Vec<f64>> {
        self.check_t(t)?;
        if x0.len() != eps.len() {
            return Err(ScheduleError::LengthMismatch { op: "q_sample", lhs: x0.len(), rhs: eps.len() });
        }
        let ab = self.alpha_bar(t);
        let (ca, ce) = (ab.sqrt(), (1.0 - ab).sqrt());
        Ok(x0.iter().zip(eps).map(|(&x, &e)| ca * x + ce * e).collect())
    }

    /// Clean-field estimate: x0_hat = (x_t - sqrt(1 - abar_t) eps_hat) / sqrt(abar_t).
    pub fn predict_x0(&self, xt: &[f64], eps_hat: &[f64], t: usize) -> Result<Vec<f64>> {
        self.check_t(t)?;
        if xt.len() != eps_hat.len() {
            return Err(ScheduleError::LengthMismatch { op: "predict_x0", lhs: xt.len(), rhs: eps_hat.len() });
        }
        let ab = self.alpha_bar(t);
        if ab < 1e-12 {
            return Err(ScheduleError::SingularAlphaBar { t, value: ab });
        }
        let inv = 1.0 / ab.sqrt();
        let ce = (1.0 - ab).sqrt();
        Ok(xt.iter().zip(eps_hat).map(|(&x, &e)| (x - ce * e) * inv).collect())
    }

    /// Coefficients (on x0, on x_t) of the reverse posterior mean.
    pub fn posterior_coefficients(&self, t: usize) -> Result<(f64, f64)> {
        self.check_t(t)?;
        let ab_t = self.alpha_bar(t);
        let ab_prev = self.alpha_bar(t - 1);
        let beta_t = self.beta(t);
        let alpha_t = self.alpha(t);
        let denom = 1.0 - ab_t;
        Ok((ab_prev.sqrt() * beta_t / denom, alpha_t.sqrt() * (1.0 - ab_prev) / denom))
    }

    /// mu_tilde(x_t, x_0); at t = 1 this collapses to x0 exactly.
    pub fn posterior_mean(&self, x0: &[f64], xt: &[f64], t: usize) -> Result<Vec<f64>> {
        if x0.len() != xt.len() {
            return Err(ScheduleError::LengthMismatch { op: "posterior_mean", lhs: x0.len(), rhs: xt.len() });
        }
        let (c0, ct) = self.posterior_coefficients(t)?;
        Ok(x0.iter().zip(xt).map(|(&a, &b)| c0 * a + ct * b).collect())
    }
}
