//! Independent reference implementations used by the verification suites.
//!
//! Everything here is written as naive f64 loops, on purpose: these
//! functions are the "other route" that the fast f32 engine is checked
//! against, so they must not share code with [`crate::tensor`] or
//! [`crate::schedule`]. Gradient checks run central finite differences
//! on these references and compare against the engine's analytic
//! gradients; the posterior estimator simulates the forward chain by
//! brute force.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Central finite-difference gradient of `f` at `x` with step `h`.
pub fn central_diff(f: &dyn Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut grad = vec![0.0; x.len()];
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        probe[i] = x[i] + h;
        let fp = f(&probe);
        probe[i] = x[i] - h;
        let fm = f(&probe);
        probe[i] = x[i];
        grad[i] = (fp - fm) / (2.0 * h);
    }
    grad
}

/// Reference 2D cross-correlation. x: [n,c,h,w], w: [o,c,k,k], b: [o].
#[allow(clippy::too_many_arguments)]
pub fn conv2d_ref(
    x: &[f64], w: &[f64], b: &[f64],
    n: usize, c: usize, h: usize, wd: usize,
    o: usize, k: usize, pad: usize, stride: usize,
) -> Vec<f64> {
    let h_out = (h + 2 * pad - k) / stride + 1;
    let w_out = (wd + 2 * pad - k) / stride + 1;
    let mut out = vec![0.0; n * o * h_out * w_out];
    for s in 0..n {
        for oc in 0..o {
            for oy in 0..h_out {
                for ox in 0..w_out {
                    let mut acc = b[oc];
                    for ic in 0..c {
                        for ki in 0..k {
                            for kj in 0..k {
                                let iy = (oy * stride + ki) as isize - pad as isize;
                                let ix = (ox * stride + kj) as isize - pad as isize;
                                if iy >= 0 && iy < h as isize && ix >= 0 && ix < wd as isize {
                                    let xi = ((s * c + ic) * h + iy as usize) * wd + ix as usize;
                                    let wi = ((oc * c + ic) * k + ki) * k + kj;
                                    acc += x[xi] * w[wi];
                                }
                            }
                        }
                    }
                    out[((s * o + oc) * h_out + oy) * w_out + ox] = acc;
                }
            }
        }
    }
    out
}

/// Reference group normalization with affine, eps = 1e-5.
#[allow(clippy::too_many_arguments)]
pub fn group_norm_ref(
    x: &[f64], gamma: &[f64], beta: &[f64],
    n: usize, c: usize, h: usize, w: usize, groups: usize,
) -> Vec<f64> {
    let cg = c / groups;
    let m = (cg * h * w) as f64;
    let mut out = vec![0.0; x.len()];
    for s in 0..n {
        for g in 0..groups {
            let base = (s * c + g * cg) * h * w;
            let slab = &x[base..base + cg * h * w];
            let mean = slab.iter().sum::<f64>() / m;
            let var = slab.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / m;
            let inv = 1.0 / (var + 1e-5).sqrt();
            for cc in 0..cg {
                let ch = g * cg + cc;
                for i in 0..h * w {
                    let idx = base + cc * h * w + i;
                    out[idx] = gamma[ch] * (x[idx] - mean) * inv + beta[ch];
                }
            }
        }
    }
    out
}

pub fn silu_ref(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| v / (1.0 + (-v).exp())).collect()
}

/// Reference affine map. x: [rows, d_in], w: [d_out, d_in], b: [d_out].
pub fn linear_ref(x: &[f64], w: &[f64], b: &[f64], rows: usize, d_in: usize, d_out: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * d_out];
    for r in 0..rows {
        for j in 0..d_out {
            let mut acc = b[j];
            for i in 0..d_in {
                acc += x[r * d_in + i] * w[j * d_in + i];
            }
            out[r * d_out + j] = acc;
        }
    }
    out
}

pub fn upsample_nearest_2x_ref(x: &[f64], planes: usize, h: usize, w: usize) -> Vec<f64> {
    let mut out = vec![0.0; planes * 4 * h * w];
    for p in 0..planes {
        for y in 0..2 * h {
            for x_ in 0..2 * w {
                out[p * 4 * h * w + y * 2 * w + x_] = x[p * h * w + (y / 2) * w + x_ / 2];
            }
        }
    }
    out
}

/// Weighted scalar readout used to reduce an op output to a loss for
/// finite differencing.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// One simulated forward chain x_0 -> x_t, returning (x_{t-1}, x_t).
/// Brute-force counterpart of the closed-form marginal/posterior.
pub fn simulate_forward_pair(x0: f64, betas: &[f64], t: usize, rng: &mut ChaCha8Rng) -> (f64, f64) {
    assert!(t >= 1 && t <= betas.len());
    let mut x = x0;
    let mut prev = x0;
    for (step, &beta) in betas.iter().take(t).enumerate() {
        prev = x;
        let eps: f64 = rng.sample(StandardNormal);
        x = (1.0 - beta).sqrt() * x + beta.sqrt() * eps;
        let _ = step;
    }
    (prev, x)
}

/// Monte-Carlo check of a claimed conditional mean E[x_{t-1} | x_t, x_0].
///
/// Draws `samples` forward chains from the same `x0`, evaluates the
/// claimed linear form at each observed x_t and returns the mean residual
/// together with its standard error. If the closed form is the true
/// conditional mean, the residual is zero in expectation.
pub fn posterior_residual(
    x0: f64,
    betas: &[f64],
    t: usize,
    samples: usize,
    rng: &mut ChaCha8Rng,
    claimed_mean: &dyn Fn(f64) -> f64,
) -> (f64, f64) {
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for _ in 0..samples {
        let (x_prev, x_t) = simulate_forward_pair(x0, betas, t, rng);
        let r = x_prev - claimed_mean(x_t);
        sum += r;
        sum_sq += r * r;
    }
    let n = samples as f64;
    let mean = sum / n;
    let var = (sum_sq / n - mean * mean).max(0.0);
    (mean, (var / n).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn central_diff_quadratic() {
        let f = |x: &[f64]| x.iter().map(|v| v * v).sum::<f64>();
        let g = central_diff(&f, &[1.0, -2.0], 1e-4);
        assert!((g[0] - 2.0).abs() < 1e-8);
        assert!((g[1] + 4.0).abs() < 1e-8);
    }

    #[test]
    fn conv_ref_identity_kernel() {
        let x: Vec<f64> = (0..9).map(|v| v as f64).collect();
        let mut w = vec![0.0; 9];
        w[4] = 1.0;
        let y = conv2d_ref(&x, &w, &[0.0], 1, 1, 3, 3, 1, 3, 1, 1);
        assert_eq!(y, x);
    }
}
