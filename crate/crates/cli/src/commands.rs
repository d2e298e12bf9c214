//! Subcommand implementations.

use std::path::Path;
use std::time::Instant;

use searecon_core::denoiser::DenoiserConfig;
use searecon_core::metrics::{self, AblationSpec, HeatmapScale, ReconstructionReport};
use searecon_core::sampler::{self, DistanceKind, GuidanceConfig, ObservationSet, SampleSpace, SigmaMode};
use searecon_core::schedule::{self, build_linear_schedule};
use searecon_core::synth::{self, GridField, NormState, SyntheticFieldSpec};
use searecon_core::trainer::{self, TrainConfig, TrainLog, TrainObserver};

use crate::config::Config;
use crate::io::{self, AppError, Checkpoint, ModelKind, Result};

pub fn parse_sigma_mode(s: &str) -> Result<SigmaMode> {
    match s {
        "zero" => Ok(SigmaMode::Zero),
        "ddpm" => Ok(SigmaMode::Ddpm),
        other => Err(AppError::Config(format!("unknown sigma mode '{other}' (use zero|ddpm)"))),
    }
}

pub fn parse_distance(s: &str) -> Result<DistanceKind> {
    match s {
        "euclidean" => Ok(DistanceKind::Euclidean),
        "squared" => Ok(DistanceKind::Squared),
        other => Err(AppError::Config(format!("unknown distance '{other}' (use euclidean|squared)"))),
    }
}

fn synth_spec_from(cfg: &Config, seed: u64) -> Result<SyntheticFieldSpec> {
    let layers = cfg.get_usize_or("synth.layers", 8)?;
    let height = cfg.get_usize_or("synth.height", 32)?;
    let width = cfg.get_usize_or("synth.width", 64)?;
    let mut spec = match cfg.get_str_or("synth.family", "a").as_str() {
        "a" => SyntheticFieldSpec::family_a(layers, height, width),
        "b" => SyntheticFieldSpec::family_b(layers, height, width),
        other => return Err(AppError::Config(format!("unknown synth.family '{other}' (use a|b)"))),
    };
    spec.equator_peak_c = cfg.get_f64_or("synth.equator_peak", spec.equator_peak_c)?;
    spec.pole_contrast_c = cfg.get_f64_or("synth.pole_contrast", spec.pole_contrast_c)?;
    if cfg.raw("synth.basin_offsets").is_some() {
        spec.basin_offsets_c = cfg.get_list("synth.basin_offsets")?;
    }
    spec.depth_decay_layers = cfg.get_f64_or("synth.depth_decay", spec.depth_decay_layers)?;
    spec.seasonal_amp_c = cfg.get_f64_or("synth.seasonal_amp", spec.seasonal_amp_c)?;
    spec.seasonal_phase_months = cfg.get_f64_or("synth.seasonal_phase", spec.seasonal_phase_months)?;
    spec.noise_amp_c = cfg.get_f64_or("synth.noise_amp", spec.noise_amp_c)?;
    spec.noise_corr_cells = cfg.get_f64_or("synth.noise_corr", spec.noise_corr_cells)?;
    spec.geometry_seed = cfg.get_u64_or("synth.geometry_seed", spec.geometry_seed)?;
    spec.field_seed = cfg.get_u64_or("synth.field_seed", seed)?;
    Ok(spec)
}

pub fn generate_data(spec_path: &Path, months: usize, out_dir: &Path, obs_rate: Option<f64>, seed: u64) -> Result<()> {
    if months == 0 {
        return Err(AppError::Config("--months must be at least 1".into()));
    }
    let cfg = Config::parse(&io::read_text(spec_path)?)?;
    let spec = synth_spec_from(&cfg, seed)?;
    let corpus = synth::build_corpus(&spec, months)?;
    let stats = synth::compute_stats(&corpus)?;
    for (i, field) in corpus.iter().enumerate() {
        io::write_field(&out_dir.join(format!("field_{:04}.sfgf", i + 1)), field)?;
        if let Some(rate) = obs_rate {
            let normalized = synth::normalize(field, &stats)?;
            let obs = synth::sample_observations(&normalized, rate, searecon_core::rng::mix(seed, i as u64))?;
            let (obs_field, mask_field) = observation_fields(field, &obs);
            io::write_field(&out_dir.join(format!("obs_{:04}.sfgf", i + 1)), &obs_field)?;
            io::write_field(&out_dir.join(format!("mask_{:04}.sfgf", i + 1)), &mask_field)?;
        }
    }
    io::write_text(&out_dir.join("stats.csv"), &searecon_core::codec::render_stats_csv(&stats))?;
    println!(
        "wrote {} fields ({}x{}x{}, {} ocean cells/layer) to {}",
        corpus.len(),
        spec.layers,
        spec.height,
        spec.width,
        corpus[0].ocean_cells(),
        out_dir.display()
    );
    Ok(())
}

/// Physical-unit observation values (zeros off-mask) and a 0/1 mask field.
fn observation_fields(truth: &GridField, obs: &ObservationSet) -> (GridField, GridField) {
    let hw = truth.cell_count();
    let mut values = vec![0.0f32; truth.numel()];
    let mut mask = vec![0.0f32; truth.numel()];
    for l in 0..truth.layers {
        for c in 0..hw {
            if truth.land_mask[c] == 1 {
                values[l * hw + c] = synth::LAND_FILL_PHYSICAL;
                continue;
            }
            if obs.mask[l * hw + c] == 1 {
                values[l * hw + c] = truth.data[l * hw + c];
                mask[l * hw + c] = 1.0;
            }
        }
    }
    let obs_field = GridField {
        layers: truth.layers,
        height: truth.height,
        width: truth.width,
        data: values,
        land_mask: truth.land_mask.clone(),
        norm_state: NormState::Physical,
        stats: None,
    };
    let mask_field = GridField { data: mask, stats: None, ..obs_field.clone() };
    (obs_field, mask_field)
}

fn load_corpus(dir: &Path) -> Result<Vec<GridField>> {
    let mut paths: Vec<_> = std::fs::read_dir(dir)
        .map_err(|e| AppError::Io(dir.to_path_buf(), e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension().is_some_and(|ext| ext == "sfgf")
                && p.file_name().is_some_and(|n| n.to_string_lossy().starts_with("field_"))
        })
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(AppError::Config(format!("no field_*.sfgf files in {}", dir.display())));
    }
    paths.iter().map(|p| io::read_field(p)).collect()
}

struct CliObserver {
    start: Instant,
}

impl TrainObserver for CliObserver {
    fn now_ms(&mut self) -> u64 {
        self.start.elapsed().as_millis() as u64
    }
}

fn render_loss_csv(log: &TrainLog) -> String {
    let mut out = String::from("step,loss,wall_ms\n");
    for e in &log.entries {
        out.push_str(&format!("{},{:.6},{}\n", e.step, e.loss, e.wall_ms));
    }
    out
}

fn train_config_from(cfg: &Config, seed: u64) -> Result<TrainConfig> {
    let total_steps = cfg.get_usize_or("train.total_steps", 5000)?;
    Ok(TrainConfig {
        learning_rate: cfg.get_f64_or("train.learning_rate", 1e-4)? as f32,
        batch_size: cfg.get_usize_or("train.batch_size", 4)?,
        total_steps,
        checkpoint_every: cfg.get_usize_or("train.checkpoint_every", total_steps)?,
        seed: cfg.get_u64_or("train.seed", seed)?,
    })
}

fn model_config_from(cfg: &Config, in_channels: usize, out_channels: usize) -> Result<DenoiserConfig> {
    Ok(DenoiserConfig {
        in_channels,
        out_channels,
        base_channels: cfg.get_usize_or("model.base_channels", 32)?,
        channel_mult: cfg.get_list_or("model.channel_mult", vec![1, 2, 2])?,
        res_blocks_per_level: cfg.get_usize_or("model.res_blocks", 2)?,
        time_embed_dim: cfg.get_usize_or("model.time_embed_dim", 128)?,
    })
}

fn diffusion_from(cfg: &Config) -> Result<(usize, f64, f64)> {
    Ok((
        cfg.get_usize_or("diffusion.steps", schedule::DEFAULT_STEPS)?,
        cfg.get_f64_or("diffusion.beta_start", schedule::DEFAULT_BETA_START)?,
        cfg.get_f64_or("diffusion.beta_end", schedule::DEFAULT_BETA_END)?,
    ))
}

pub fn train(config_path: &Path, out: &Path, seed: u64, baseline: bool) -> Result<()> {
    let cfg = Config::parse(&io::read_text(config_path)?)?;
    let corpus = load_corpus(Path::new(&cfg.get_str("data.dir")?))?;
    let stats = synth::compute_stats(&corpus)?;
    let data: Vec<GridField> = corpus
        .iter()
        .map(|f| synth::normalize(f, &stats))
        .collect::<std::result::Result<_, _>>()?;
    let (l, h, w) = (data[0].layers, data[0].height, data[0].width);

    let tcfg = train_config_from(&cfg, seed)?;
    let diffusion = diffusion_from(&cfg)?;
    let kind = if baseline { ModelKind::Baseline } else { ModelKind::Ddpm };
    let mcfg = if baseline {
        model_config_from(&cfg, 2 * l, l)?
    } else {
        model_config_from(&cfg, l, l)?
    };

    let mut observer = CliObserver { start: Instant::now() };
    let (params, log) = if baseline {
        let rate = cfg.get_f64_or("train.pretrain_guided_rate", 0.075)?;
        trainer::train_baseline(&data, &tcfg, &mcfg, rate, &mut observer)?
    } else {
        let sched = build_linear_schedule(diffusion.0, diffusion.1, diffusion.2)?;
        trainer::train_ddpm(&data, &tcfg, &sched, &mcfg, &mut observer)?
    };

    io::save_checkpoint(out, &params, diffusion, &stats, kind, (l, h, w), &corpus[0].land_mask)?;
    io::write_text(&io::loss_path(out), &render_loss_csv(&log))?;
    println!(
        "trained {} ({} params, {} steps) -> {}; final loss {:.4}",
        kind.label(),
        params.param_count(),
        tcfg.total_steps,
        out.display(),
        log.entries.last().map(|e| e.loss).unwrap_or(f64::NAN)
    );
    Ok(())
}

fn field_space<'a>(ckpt: &'a Checkpoint, land: &'a [u8]) -> SampleSpace<'a> {
    SampleSpace {
        layers: ckpt.layers,
        height: ckpt.height,
        width: ckpt.width,
        land_mask: land,
        stats: &ckpt.stats,
    }
}

/// Observation set from a physical values field and a 0/1 mask field,
/// normalized with the checkpoint statistics.
fn observations_from_files(ckpt: &Checkpoint, obs_field: &GridField, mask_field: &GridField) -> Result<ObservationSet> {
    if obs_field.layers != ckpt.layers || obs_field.height != ckpt.height || obs_field.width != ckpt.width {
        return Err(AppError::Config(format!(
            "observation field is {}x{}x{}, checkpoint expects {}x{}x{}",
            obs_field.layers, obs_field.height, obs_field.width, ckpt.layers, ckpt.height, ckpt.width
        )));
    }
    if mask_field.layers != obs_field.layers
        || mask_field.height != obs_field.height
        || mask_field.width != obs_field.width
        || mask_field.land_mask != obs_field.land_mask
    {
        return Err(AppError::Config("mask file geometry differs from observation file".into()));
    }
    if obs_field.land_mask != ckpt.land_mask {
        return Err(AppError::Config("observation land mask differs from checkpoint geometry".into()));
    }
    let hw = obs_field.cell_count();
    let n = obs_field.numel();
    let mut mask = vec![0u8; n];
    let mut values = vec![0.0f32; n];
    let mut count = 0usize;
    for l in 0..obs_field.layers {
        let stat = ckpt.stats.per_layer[l];
        for c in 0..hw {
            let i = l * hw + c;
            if mask_field.data[i] > 0.5 {
                if obs_field.land_mask[c] == 1 {
                    return Err(AppError::Config(format!("mask selects a land cell (layer {l}, cell {c})")));
                }
                mask[i] = 1;
                values[i] = ((obs_field.data[i] as f64 - stat.mean) / stat.std) as f32;
                count += 1;
            }
        }
    }
    let ocean = obs_field.ocean_cells() * obs_field.layers;
    Ok(ObservationSet {
        layers: obs_field.layers,
        height: obs_field.height,
        width: obs_field.width,
        mask,
        values,
        guided_rate: count as f64 / ocean as f64,
        trial_seed: 0,
    })
}

#[allow(clippy::too_many_arguments)]
pub fn reconstruct(
    ckpt_path: &Path,
    obs_path: &Path,
    mask_path: &Path,
    s: f64,
    sigma_mode: &str,
    kernel: usize,
    kernel_sigma: Option<f64>,
    distance: &str,
    out: &Path,
    seed: u64,
) -> Result<()> {
    let ckpt = io::load_checkpoint(ckpt_path)?;
    let obs_field = io::read_field(obs_path)?;
    let mask_field = io::read_field(mask_path)?;
    let obs = observations_from_files(&ckpt, &obs_field, &mask_field)?;
    let space = field_space(&ckpt, &obs_field.land_mask);

    let recon = match ckpt.kind {
        ModelKind::Ddpm => {
            let mut gcfg = GuidanceConfig::new(s, parse_sigma_mode(sigma_mode)?, kernel)?
                .with_distance(parse_distance(distance)?);
            if let Some(sig) = kernel_sigma {
                gcfg = gcfg.with_kernel_sigma(sig)?;
            }
            sampler::reconstruct(&ckpt.params, &space, &obs, &gcfg, &ckpt.schedule, seed)?
        }
        ModelKind::Baseline => trainer::baseline_reconstruct(&ckpt.params, &space, &obs)?,
    };
    io::write_field(out, &recon)?;
    println!(
        "reconstructed {}x{}x{} field from {} observations -> {}",
        recon.layers,
        recon.height,
        recon.width,
        obs.observed_count(),
        out.display()
    );
    Ok(())
}

pub fn sample(ckpt_path: &Path, out: &Path, seed: u64) -> Result<()> {
    let ckpt = io::load_checkpoint(ckpt_path)?;
    if ckpt.kind != ModelKind::Ddpm {
        return Err(AppError::Config("sample needs a ddpm checkpoint".into()));
    }
    let land = ckpt.land_mask.clone();
    let space = field_space(&ckpt, &land);
    let field = sampler::sample_unconditional(&ckpt.params, &space, &ckpt.schedule, seed)?;
    io::write_field(out, &field)?;
    println!("sampled unconditional field -> {}", out.display());
    Ok(())
}

fn print_report(report: &ReconstructionReport) {
    println!(
        "mse_g = {:.6}  mse_r = {:.6}  mse_total = {:.6}  (trials = {}, rate = {:.4})",
        report.mse_g, report.mse_r, report.mse_total, report.trials, report.echo.guided_rate
    );
    let layers: Vec<String> = report.per_layer_mse.iter().map(|v| format!("{v:.4}")).collect();
    println!("per-layer mse: [{}]", layers.join(", "));
}

pub fn evaluate(
    recon_path: &Path,
    truth_path: &Path,
    mask_path: &Path,
    upper_levels: usize,
    csv_out: Option<&Path>,
    heatmap_out: Option<&Path>,
    heatmap_layer: usize,
) -> Result<()> {
    let recon = io::read_field(recon_path)?;
    let truth = io::read_field(truth_path)?;
    let mask_field = io::read_field(mask_path)?;
    if mask_field.numel() != truth.numel() {
        return Err(AppError::Config("mask dims differ from truth".into()));
    }
    let mask: Vec<u8> = mask_field.data.iter().map(|&v| u8::from(v > 0.5)).collect();
    let observed = mask.iter().filter(|&&m| m == 1).count();
    let ocean = truth.ocean_cells() * truth.layers;
    let obs = ObservationSet {
        layers: truth.layers,
        height: truth.height,
        width: truth.width,
        mask,
        values: vec![0.0; truth.numel()],
        guided_rate: observed as f64 / ocean.max(1) as f64,
        trial_seed: 0,
    };
    let report = metrics::evaluate(&recon, &truth, &obs, upper_levels)?;
    print_report(&report);
    if let Some(path) = csv_out {
        io::write_text(path, &metrics::render_report_csv(&report))?;
    }
    if let Some(path) = heatmap_out {
        // truth, reconstruction, and signed difference for one layer
        io::write_bytes(&path.with_extension("truth.pgm"), &metrics::render_heatmap_pgm(&truth, heatmap_layer, HeatmapScale::MinMax)?)?;
        io::write_bytes(&path.with_extension("recon.pgm"), &metrics::render_heatmap_pgm(&recon, heatmap_layer, HeatmapScale::MinMax)?)?;
        let mut diff = recon.clone();
        for (d, t) in diff.data.iter_mut().zip(&truth.data) {
            *d -= t;
        }
        io::write_bytes(&path.with_extension("diff.pgm"), &metrics::render_heatmap_pgm(&diff, heatmap_layer, HeatmapScale::Symmetric)?)?;
        io::write_text(&path.with_extension("recon.csv"), &metrics::render_layer_csv(&recon, heatmap_layer)?)?;
    }
    Ok(())
}

pub fn ablate(config_path: &Path, ckpt_path: &Path, truth_path: &Path, out: &Path, seed: u64) -> Result<()> {
    let cfg = Config::parse(&io::read_text(config_path)?)?;
    let ckpt = io::load_checkpoint(ckpt_path)?;
    if ckpt.kind != ModelKind::Ddpm {
        return Err(AppError::Config("ablate needs a ddpm checkpoint".into()));
    }
    let truth = io::read_field(truth_path)?;
    let sigma_modes: Vec<SigmaMode> = cfg
        .get_list_or::<String>("ablate.sigma_modes", vec!["zero".into()])?
        .iter()
        .map(|s| parse_sigma_mode(s))
        .collect::<Result<_>>()?;
    let spec = AblationSpec {
        s_values: cfg.get_list_or("ablate.s_values", vec![4.0])?,
        kernel_sizes: cfg.get_list_or("ablate.kernel_sizes", vec![5])?,
        sigma_modes,
        guided_rates: cfg.get_list_or("ablate.guided_rates", vec![0.075])?,
        trials: cfg.get_usize_or("ablate.trials", 4)?,
        upper_levels: cfg.get_usize_or("ablate.upper_levels", 10)?,
        master_seed: cfg.get_u64_or("ablate.seed", seed)?,
    };
    let grid = metrics::run_ablation(&ckpt.params, &ckpt.schedule, &truth, &ckpt.stats, &spec)?;
    let csv = metrics::render_ablation_csv(&grid);
    io::write_text(out, &csv)?;
    print!("{csv}");
    Ok(())
}
