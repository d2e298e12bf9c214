//! Reconstruction error reports, multi-trial averaging, ablation sweeps,
//! and heatmap/CSV rendering.
//!
//! MSE is computed in physical units (°C²) over ocean cells of the upper
//! layers, split into guidance cells (MSE-g), the remaining ocean cells
//! (MSE-r), and their cell-count-weighted pool (total). Averaging across
//! trials sorts the addends first, so trial order can never change a
//! report.

use rayon::prelude::*;
use thiserror::Error;

use crate::denoiser::DenoiserParams;
use crate::sampler::{self, GuidanceConfig, ObservationSet, SampleSpace, SamplerError, SigmaMode};
use crate::schedule::DiffusionSchedule;
use crate::synth::{self, GridField, NormStats, NormState, SynthError};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("{0}")]
    DimsMismatch(String),
    #[error("fields must be in physical units")]
    NotPhysical,
    #[error("need at least one trial")]
    NoTrials,
    #[error("ablation axes must be non-empty")]
    EmptyAxes,
    #[error("layer {layer} out of range (field has {layers})")]
    LayerOutOfRange { layer: usize, layers: usize },
    #[error(transparent)]
    Sampler(#[from] SamplerError),
    #[error(transparent)]
    Synth(#[from] SynthError),
}

pub type Result<T> = std::result::Result<T, MetricsError>;

/// Configuration echoed into reports and CSV rows.
#[derive(Debug, Clone)]
pub struct ConfigEcho {
    pub s: f64,
    pub sigma_mode: String,
    pub kernel_size: usize,
    pub guided_rate: f64,
}

impl ConfigEcho {
    fn from_parts(cfg: &GuidanceConfig, rate: f64) -> Self {
        ConfigEcho {
            s: cfg.strength,
            sigma_mode: cfg.sigma_mode.label().to_string(),
            kernel_size: cfg.kernel_size,
            guided_rate: rate,
        }
    }

    fn bare(rate: f64) -> Self {
        ConfigEcho { s: 0.0, sigma_mode: "-".into(), kernel_size: 0, guided_rate: rate }
    }
}

/// Error report for one reconstruction (or a mean over trials).
#[derive(Debug, Clone)]
pub struct ReconstructionReport {
    pub mse_g: f64,
    pub mse_r: f64,
    pub mse_total: f64,
    pub per_layer_mse: Vec<f64>,
    pub trials: usize,
    pub echo: ConfigEcho,
}

/// Order-independent mean: sorts by total order before summing so the
/// result is exactly permutation-invariant.
pub fn stable_mean(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.iter().sum::<f64>() / sorted.len() as f64
}

/// MSE-g / MSE-r / total over the upper `min(upper_levels, L)` layers.
/// The weighted-mean identity `total = (n_g*g + n_r*r)/(n_g+n_r)` holds by
/// construction.
pub fn evaluate(
    recon: &GridField,
    truth: &GridField,
    obs: &ObservationSet,
    upper_levels: usize,
) -> Result<ReconstructionReport> {
    if recon.norm_state != NormState::Physical || truth.norm_state != NormState::Physical {
        return Err(MetricsError::NotPhysical);
    }
    if recon.layers != truth.layers
        || recon.height != truth.height
        || recon.width != truth.width
        || recon.land_mask != truth.land_mask
    {
        return Err(MetricsError::DimsMismatch("recon and truth geometry differ".into()));
    }
    if obs.layers != truth.layers || obs.height != truth.height || obs.width != truth.width {
        return Err(MetricsError::DimsMismatch("observation dims differ from fields".into()));
    }
    let hw = truth.cell_count();
    let upper = upper_levels.min(truth.layers).max(1);
    let (mut sum_g, mut n_g) = (0.0f64, 0usize);
    let (mut sum_r, mut n_r) = (0.0f64, 0usize);
    let mut per_layer = Vec::with_capacity(truth.layers);
    for l in 0..truth.layers {
        let mut layer_sum = 0.0f64;
        let mut layer_n = 0usize;
        for c in 0..hw {
            if truth.land_mask[c] == 1 {
                continue;
            }
            let i = l * hw + c;
            let d = (recon.data[i] as f64 - truth.data[i] as f64).powi(2);
            layer_sum += d;
            layer_n += 1;
            if l < upper {
                if obs.mask[i] == 1 {
                    sum_g += d;
                    n_g += 1;
                } else {
                    sum_r += d;
                    n_r += 1;
                }
            }
        }
        per_layer.push(if layer_n > 0 { layer_sum / layer_n as f64 } else { 0.0 });
    }
    let mse_g = if n_g > 0 { sum_g / n_g as f64 } else { 0.0 };
    let mse_r = if n_r > 0 { sum_r / n_r as f64 } else { 0.0 };
    let mse_total = (sum_g + sum_r) / (n_g + n_r).max(1) as f64;
    Ok(ReconstructionReport {
        mse_g,
        mse_r,
        mse_total,
        per_layer_mse: per_layer,
        trials: 1,
        echo: ConfigEcho::bare(obs.guided_rate),
    })
}

/// Mean of per-trial reports; permutation-invariant in trial order.
pub fn mean_reports(reports: &[ReconstructionReport]) -> Result<ReconstructionReport> {
    let first = reports.first().ok_or(MetricsError::NoTrials)?;
    let collect = |f: &dyn Fn(&ReconstructionReport) -> f64| -> Vec<f64> {
        reports.iter().map(f).collect()
    };
    let layers = first.per_layer_mse.len();
    let per_layer = (0..layers)
        .map(|l| stable_mean(&reports.iter().map(|r| r.per_layer_mse[l]).collect::<Vec<_>>()))
        .collect();
    Ok(ReconstructionReport {
        mse_g: stable_mean(&collect(&|r| r.mse_g)),
        mse_r: stable_mean(&collect(&|r| r.mse_r)),
        mse_total: stable_mean(&collect(&|r| r.mse_total)),
        per_layer_mse: per_layer,
        trials: reports.iter().map(|r| r.trials).sum(),
        echo: first.echo.clone(),
    })
}

/// Runs `n_trials` guided reconstructions of `truth` with fresh
/// observation locations per trial and reports the mean MSEs. Trials are
/// independent jobs and run in parallel; trial seeds derive from the
/// master seed by index, so a rate sweep with one master seed sees nested
/// observation sets and shared reverse-noise streams.
#[allow(clippy::too_many_arguments)]
pub fn run_trials(
    params: &DenoiserParams,
    sched: &DiffusionSchedule,
    truth: &GridField,
    stats: &NormStats,
    gcfg: &GuidanceConfig,
    rate: f64,
    n_trials: usize,
    upper_levels: usize,
    master_seed: u64,
) -> Result<ReconstructionReport> {
    if n_trials == 0 {
        return Err(MetricsError::NoTrials);
    }
    let truth_norm = synth::normalize(truth, stats)?;
    let space = SampleSpace {
        layers: truth.layers,
        height: truth.height,
        width: truth.width,
        land_mask: &truth.land_mask,
        stats,
    };
    let reports: Vec<Result<ReconstructionReport>> = (0..n_trials)
        .into_par_iter()
        .map(|trial| {
            let trial_seed = crate::rng::mix(master_seed, trial as u64);
            let obs = synth::sample_observations(&truth_norm, rate, trial_seed)?;
            let recon = sampler::reconstruct(params, &space, &obs, gcfg, sched, trial_seed)?;
            let mut report = evaluate(&recon, truth, &obs, upper_levels)?;
            report.echo = ConfigEcho::from_parts(gcfg, rate);
            Ok(report)
        })
        .collect();
    let reports: Vec<ReconstructionReport> = reports.into_iter().collect::<Result<_>>()?;
    mean_reports(&reports)
}

/// Cartesian ablation axes. Every cell runs `trials` reconstructions with
/// the same master seed, so cells share observation sets and noise
/// streams wherever the axes allow it.
#[derive(Debug, Clone)]
pub struct AblationSpec {
    pub s_values: Vec<f64>,
    pub kernel_sizes: Vec<usize>,
    pub sigma_modes: Vec<SigmaMode>,
    pub guided_rates: Vec<f64>,
    pub trials: usize,
    pub upper_levels: usize,
    pub master_seed: u64,
}

#[derive(Debug, Clone)]
pub struct AblationPoint {
    pub s: f64,
    pub kernel_size: usize,
    pub sigma_mode: SigmaMode,
    pub guided_rate: f64,
}

#[derive(Debug, Clone)]
pub struct AblationGrid {
    pub cells: Vec<(AblationPoint, ReconstructionReport)>,
}

pub fn run_ablation(
    params: &DenoiserParams,
    sched: &DiffusionSchedule,
    truth: &GridField,
    stats: &NormStats,
    spec: &AblationSpec,
) -> Result<AblationGrid> {
    if spec.s_values.is_empty()
        || spec.kernel_sizes.is_empty()
        || spec.sigma_modes.is_empty()
        || spec.guided_rates.is_empty()
    {
        return Err(MetricsError::EmptyAxes);
    }
    if spec.trials == 0 {
        return Err(MetricsError::NoTrials);
    }
    let mut cells = Vec::new();
    for &rate in &spec.guided_rates {
        for &s in &spec.s_values {
            for &kernel in &spec.kernel_sizes {
                for &mode in &spec.sigma_modes {
                    let gcfg = GuidanceConfig::new(s, mode, kernel)?;
                    let report = run_trials(
                        params,
                        sched,
                        truth,
                        stats,
                        &gcfg,
                        rate,
                        spec.trials,
                        spec.upper_levels,
                        spec.master_seed,
                    )?;
                    cells.push((AblationPoint { s, kernel_size: kernel, sigma_mode: mode, guided_rate: rate }, report));
                }
            }
        }
    }
    Ok(AblationGrid { cells })
}

/// One row per config tuple; stable column order.
pub fn render_ablation_csv(grid: &AblationGrid) -> String {
    let mut out = String::from("s,sigma,guided_rate,soft_ext,trials,mse_g,mse_r,mse_total\n");
    for (p, r) in &grid.cells {
        out.push_str(&format!(
            "{},{},{},{},{},{:.6},{:.6},{:.6}\n",
            p.s,
            p.sigma_mode.label(),
            p.guided_rate,
            p.kernel_size,
            r.trials,
            r.mse_g,
            r.mse_r,
            r.mse_total
        ));
    }
    out
}

/// Single-report CSV with the same schema as the ablation table.
pub fn render_report_csv(report: &ReconstructionReport) -> String {
    let mut out = String::from("s,sigma,guided_rate,soft_ext,trials,mse_g,mse_r,mse_total\n");
    out.push_str(&format!(
        "{},{},{},{},{},{:.6},{:.6},{:.6}\n",
        report.echo.s,
        report.echo.sigma_mode,
        report.echo.guided_rate,
        report.echo.kernel_size,
        report.trials,
        report.mse_g,
        report.mse_r,
        report.mse_total
    ));
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeatmapScale {
    /// Scale over the layer's ocean-cell min/max.
    MinMax,
    /// Scale symmetrically around zero; zero maps to mid-gray.
    Symmetric,
}

/// Binary PGM (P5) of one layer: land black, ocean scaled into 1..=255.
/// A constant layer renders as uniform mid-gray.
pub fn render_heatmap_pgm(field: &GridField, layer: usize, scale: HeatmapScale) -> Result<Vec<u8>> {
    if layer >= field.layers {
        return Err(MetricsError::LayerOutOfRange { layer, layers: field.layers });
    }
    let hw = field.cell_count();
    let slab = &field.data[layer * hw..(layer + 1) * hw];
    let ocean: Vec<f64> = slab
        .iter()
        .zip(&field.land_mask)
        .filter(|(_, &m)| m == 0)
        .map(|(&v, _)| v as f64)
        .collect();
    let to_byte: Box<dyn Fn(f64) -> u8> = match scale {
        HeatmapScale::MinMax => {
            let lo = ocean.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = ocean.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            if !(hi - lo).is_finite() || hi - lo < 1e-12 {
                Box::new(|_| 128u8)
            } else {
                Box::new(move |v| (1.0 + 254.0 * (v - lo) / (hi - lo)).round().clamp(1.0, 255.0) as u8)
            }
        }
        HeatmapScale::Symmetric => {
            let m = ocean.iter().fold(0.0f64, |a, &v| a.max(v.abs()));
            if m < 1e-12 {
                Box::new(|_| 128u8)
            } else {
                Box::new(move |v| (128.0 + 127.0 * v / m).round().clamp(1.0, 255.0) as u8)
            }
        }
    };
    let mut out = format!("P5\n{} {}\n255\n", field.width, field.height).into_bytes();
    for c in 0..hw {
        out.push(if field.land_mask[c] == 1 { 0 } else { to_byte(slab[c] as f64) });
    }
    Ok(out)
}

/// Raw values of one layer as CSV rows (H rows, W columns).
pub fn render_layer_csv(field: &GridField, layer: usize) -> Result<String> {
    if layer >= field.layers {
        return Err(MetricsError::LayerOutOfRange { layer, layers: field.layers });
    }
    let hw = field.cell_count();
    let slab = &field.data[layer * hw..(layer + 1) * hw];
    let mut out = String::new();
    for row in slab.chunks_exact(field.width) {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:.6}")).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::SyntheticFieldSpec;

    fn truth_and_obs() -> (GridField, GridField, ObservationSet) {
        let spec = SyntheticFieldSpec::family_a(3, 8, 8);
        let corpus = synth::build_corpus(&spec, 4).unwrap();
        let stats = synth::compute_stats(&corpus).unwrap();
        let truth = corpus[0].clone();
        let norm = synth::normalize(&truth, &stats).unwrap();
        let obs = synth::sample_observations(&norm, 0.2, 42).unwrap();
        (truth.clone(), truth, obs)
    }

    #[test]
    fn identical_fields_have_zero_error() {
        let (recon, truth, obs) = truth_and_obs();
        let r = evaluate(&recon, &truth, &obs, 10).unwrap();
        assert_eq!(r.mse_g, 0.0);
        assert_eq!(r.mse_r, 0.0);
        assert_eq!(r.mse_total, 0.0);
    }

    #[test]
    fn uniform_one_degree_offset_gives_unit_mse() {
        let (mut recon, truth, obs) = truth_and_obs();
        let hw = recon.cell_count();
        for l in 0..recon.layers {
            for c in 0..hw {
                if recon.land_mask[c] == 0 {
                    recon.data[l * hw + c] += 1.0;
                }
            }
        }
        let r = evaluate(&recon, &truth, &obs, 10).unwrap();
        assert!((r.mse_g - 1.0).abs() < 1e-5);
        assert!((r.mse_r - 1.0).abs() < 1e-5);
        assert!((r.mse_total - 1.0).abs() < 1e-5);
    }

    #[test]
    fn off_mask_perturbation_keeps_guidance_clean() {
        let (mut recon, truth, obs) = truth_and_obs();
        let hw = recon.cell_count();
        let mut n_g = 0usize;
        let mut n_r = 0usize;
        for l in 0..recon.layers {
            for c in 0..hw {
                if recon.land_mask[c] == 1 {
                    continue;
                }
                if obs.mask[l * hw + c] == 1 {
                    n_g += 1;
                } else {
                    recon.data[l * hw + c] += 0.5;
                    n_r += 1;
                }
            }
        }
        let r = evaluate(&recon, &truth, &obs, 10).unwrap();
        assert_eq!(r.mse_g, 0.0);
        let expect_total = r.mse_r * n_r as f64 / (n_g + n_r) as f64;
        let rel = (r.mse_total - expect_total).abs() / expect_total;
        assert!(rel < 1e-9, "identity violated: rel err {rel}");
    }

    #[test]
    fn weighted_mean_identity_holds_tightly() {
        let (mut recon, truth, obs) = truth_and_obs();
        let hw = recon.cell_count();
        // arbitrary perturbation everywhere
        for (i, v) in recon.data.iter_mut().enumerate() {
            if recon.land_mask[i % hw] == 0 {
                *v += ((i * 2654435761) % 17) as f32 * 0.013 - 0.1;
            }
        }
        let r = evaluate(&recon, &truth, &obs, 10).unwrap();
        let mut n_g = 0usize;
        let mut n_r = 0usize;
        for l in 0..recon.layers {
            for c in 0..hw {
                if recon.land_mask[c] == 0 {
                    if obs.mask[l * hw + c] == 1 {
                        n_g += 1;
                    } else {
                        n_r += 1;
                    }
                }
            }
        }
        let combo = (r.mse_g * n_g as f64 + r.mse_r * n_r as f64) / (n_g + n_r) as f64;
        assert!((combo - r.mse_total).abs() / r.mse_total <= 1e-9);
    }

    #[test]
    fn upper_levels_restrict_the_pool() {
        let (mut recon, truth, obs) = truth_and_obs();
        let hw = recon.cell_count();
        // perturb only the deepest layer
        for c in 0..hw {
            if recon.land_mask[c] == 0 {
                recon.data[2 * hw + c] += 2.0;
            }
        }
        let r = evaluate(&recon, &truth, &obs, 2).unwrap();
        assert_eq!(r.mse_total, 0.0, "deepest layer must be excluded");
        assert!(r.per_layer_mse[2] > 3.9, "per-layer vector still covers all layers");
    }

    #[test]
    fn mean_reports_is_permutation_invariant() {
        let (recon, truth, obs) = truth_and_obs();
        let base = evaluate(&recon, &truth, &obs, 10).unwrap();
        let mut a = base.clone();
        a.mse_total = 0.31;
        let mut b = base.clone();
        b.mse_total = 0.77;
        let mut c = base.clone();
        c.mse_total = 0.53;
        let forward = mean_reports(&[a.clone(), b.clone(), c.clone()]).unwrap();
        let backward = mean_reports(&[c, b, a]).unwrap();
        assert_eq!(forward.mse_total.to_bits(), backward.mse_total.to_bits());
    }

    #[test]
    fn heatmap_constant_field_is_uniform_gray() {
        let (mut f, _, _) = truth_and_obs();
        let hw = f.cell_count();
        for c in 0..hw {
            if f.land_mask[c] == 0 {
                f.data[c] = 4.25;
            }
        }
        let pgm = render_heatmap_pgm(&f, 0, HeatmapScale::MinMax).unwrap();
        let header_end = pgm.windows(4).position(|w| w == b"255\n").unwrap() + 4;
        for (i, &b) in pgm[header_end..].iter().enumerate() {
            let expect = if f.land_mask[i] == 1 { 0 } else { 128 };
            assert_eq!(b, expect);
        }
    }

    #[test]
    fn heatmap_zero_difference_is_mid_gray_under_symmetric_scaling() {
        let (mut f, _, _) = truth_and_obs();
        let hw = f.cell_count();
        for l in 0..f.layers {
            for c in 0..hw {
                f.data[l * hw + c] = if f.land_mask[c] == 1 { -9999.0 } else { 0.0 };
            }
        }
        let pgm = render_heatmap_pgm(&f, 1, HeatmapScale::Symmetric).unwrap();
        let header_end = pgm.windows(4).position(|w| w == b"255\n").unwrap() + 4;
        for (i, &b) in pgm[header_end..].iter().enumerate() {
            let expect = if f.land_mask[i] == 1 { 0 } else { 128 };
            assert_eq!(b, expect);
        }
    }

    #[test]
    fn layer_csv_has_grid_shape() {
        let (f, _, _) = truth_and_obs();
        let csv = render_layer_csv(&f, 0).unwrap();
        let rows: Vec<&str> = csv.lines().collect();
        assert_eq!(rows.len(), f.height);
        assert_eq!(rows[0].split(',').count(), f.width);
    }

    #[test]
    fn heatmap_layer_bounds_checked() {
        let (f, _, _) = truth_and_obs();
        assert!(matches!(
            render_heatmap_pgm(&f, 9, HeatmapScale::MinMax),
            Err(MetricsError::LayerOutOfRange { .. })
        ));
    }

    fn tiny_trained_setup() -> (crate::denoiser::DenoiserParams, crate::schedule::DiffusionSchedule, GridField, crate::synth::NormStats)
    {
        let spec = SyntheticFieldSpec::family_a(2, 8, 8);
        let corpus = synth::build_corpus(&spec, 4).unwrap();
        let stats = synth::compute_stats(&corpus).unwrap();
        let dcfg = crate::denoiser::DenoiserConfig {
            in_channels: 2,
            out_channels: 2,
            base_channels: 4,
            channel_mult: vec![1, 2],
            res_blocks_per_level: 1,
            time_embed_dim: 8,
        };
        let params = crate::denoiser::DenoiserParams::init(&dcfg, 2).unwrap();
        let sched = crate::schedule::build_linear_schedule(25, 1e-3, 0.05).unwrap();
        (params, sched, corpus[0].clone(), stats)
    }

    #[test]
    fn ablation_emits_every_cell_and_is_deterministic() {
        let (params, sched, truth, stats) = tiny_trained_setup();
        let spec = AblationSpec {
            s_values: vec![3.0, 4.0, 5.0, 6.0],
            kernel_sizes: vec![3],
            sigma_modes: vec![SigmaMode::Zero],
            guided_rates: vec![0.2],
            trials: 1,
            upper_levels: 2,
            master_seed: 9,
        };
        let grid = run_ablation(&params, &sched, &truth, &stats, &spec).unwrap();
        assert_eq!(grid.cells.len(), 4, "one report per s value");
        let csv_a = render_ablation_csv(&grid);
        assert_eq!(csv_a.lines().count(), 5);
        let grid_b = run_ablation(&params, &sched, &truth, &stats, &spec).unwrap();
        assert_eq!(csv_a, render_ablation_csv(&grid_b), "ablation must be deterministic");
    }

    #[test]
    fn run_trials_single_trial_equals_direct_evaluate() {
        let (params, sched, truth, stats) = tiny_trained_setup();
        let gcfg = GuidanceConfig::new(2.0, SigmaMode::Zero, 3).unwrap();
        let report = run_trials(&params, &sched, &truth, &stats, &gcfg, 0.2, 1, 2, 5).unwrap();

        let truth_norm = synth::normalize(&truth, &stats).unwrap();
        let trial_seed = crate::rng::mix(5, 0);
        let obs = synth::sample_observations(&truth_norm, 0.2, trial_seed).unwrap();
        let space = crate::sampler::SampleSpace {
            layers: truth.layers,
            height: truth.height,
            width: truth.width,
            land_mask: &truth.land_mask,
            stats: &stats,
        };
        let recon = crate::sampler::reconstruct(&params, &space, &obs, &gcfg, &sched, trial_seed).unwrap();
        let direct = evaluate(&recon, &truth, &obs, 2).unwrap();
        assert_eq!(report.mse_total.to_bits(), direct.mse_total.to_bits());
        assert_eq!(report.mse_g.to_bits(), direct.mse_g.to_bits());
    }
}
