//! File IO: grid fields, checkpoint bundles, and error-to-exit-code
//! mapping.
//!
//! A checkpoint is the parameter file plus two sidecars: `<path>.cfg`
//! (text dump of the model and diffusion settings) and
//! `<path>.stats.csv` (per-layer normalization statistics).

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use searecon_core::codec::{self, CodecError};
use searecon_core::denoiser::{DenoiserConfig, DenoiserParams};
use searecon_core::sampler::SamplerError;
use searecon_core::schedule::{build_linear_schedule, DiffusionSchedule};
use searecon_core::synth::{GridField, NormStats};
use searecon_core::tensor::TensorError;
use searecon_core::trainer::TrainError;

use crate::config::{Config, ConfigError};

/// Process exit codes: 0 ok, 2 config/input error, 3 numeric failure,
/// 1 anything else.
#[derive(Debug)]
pub enum AppError {
    Config(String),
    Io(PathBuf, std::io::Error),
    Numeric(String),
}

impl AppError {
    pub fn exit_code(&self) -> i32 {
        match self {
            AppError::Config(_) => 2,
            AppError::Numeric(_) => 3,
            AppError::Io(..) => 1,
        }
    }
}

impl fmt::Display for AppError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AppError::Config(m) => write!(f, "{m}"),
            AppError::Io(p, e) => write!(f, "{}: {e}", p.display()),
            AppError::Numeric(m) => write!(f, "numeric failure: {m}"),
        }
    }
}

impl From<ConfigError> for AppError {
    fn from(e: ConfigError) -> Self {
        AppError::Config(e.to_string())
    }
}

impl From<CodecError> for AppError {
    fn from(e: CodecError) -> Self {
        AppError::Config(format!("bad file format: {e}"))
    }
}

impl From<searecon_core::synth::SynthError> for AppError {
    fn from(e: searecon_core::synth::SynthError) -> Self {
        AppError::Config(e.to_string())
    }
}

impl From<searecon_core::denoiser::DenoiserError> for AppError {
    fn from(e: searecon_core::denoiser::DenoiserError) -> Self {
        match e {
            searecon_core::denoiser::DenoiserError::Tensor(TensorError::NonFinite { op }) => {
                AppError::Numeric(format!("non-finite values in {op}"))
            }
            other => AppError::Config(other.to_string()),
        }
    }
}

impl From<searecon_core::schedule::ScheduleError> for AppError {
    fn from(e: searecon_core::schedule::ScheduleError) -> Self {
        AppError::Config(e.to_string())
    }
}

impl From<TrainError> for AppError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::NonFiniteLoss { .. } => AppError::Numeric(e.to_string()),
            TrainError::Tensor(TensorError::NonFinite { op }) => {
                AppError::Numeric(format!("non-finite values in {op}"))
            }
            other => AppError::Config(other.to_string()),
        }
    }
}

impl From<SamplerError> for AppError {
    fn from(e: SamplerError) -> Self {
        match e {
            SamplerError::NonFinite { .. } => AppError::Numeric(e.to_string()),
            SamplerError::Denoiser(inner) => AppError::from(inner),
            other => AppError::Config(other.to_string()),
        }
    }
}

impl From<searecon_core::metrics::MetricsError> for AppError {
    fn from(e: searecon_core::metrics::MetricsError) -> Self {
        match e {
            searecon_core::metrics::MetricsError::Sampler(inner) => AppError::from(inner),
            other => AppError::Config(other.to_string()),
        }
    }
}

pub type Result<T> = std::result::Result<T, AppError>;

pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| AppError::Io(path.to_path_buf(), e))
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| AppError::Io(path.to_path_buf(), e))
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| AppError::Io(parent.to_path_buf(), e))?;
        }
    }
    fs::write(path, bytes).map_err(|e| AppError::Io(path.to_path_buf(), e))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    write_bytes(path, text.as_bytes())
}

pub fn read_field(path: &Path) -> Result<GridField> {
    Ok(codec::decode_field(&read_bytes(path)?)?)
}

pub fn write_field(path: &Path, field: &GridField) -> Result<()> {
    write_bytes(path, &codec::encode_field(field))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Ddpm,
    Baseline,
}

impl ModelKind {
    pub fn label(self) -> &'static str {
        match self {
            ModelKind::Ddpm => "ddpm",
            ModelKind::Baseline => "baseline",
        }
    }
}

pub struct Checkpoint {
    pub params: DenoiserParams,
    pub schedule: DiffusionSchedule,
    pub stats: NormStats,
    pub kind: ModelKind,
    pub layers: usize,
    pub height: usize,
    pub width: usize,
    pub land_mask: Vec<u8>,
}

fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path.file_name().map(|s| s.to_os_string()).unwrap_or_default();
    name.push(suffix);
    path.with_file_name(name)
}

pub fn cfg_path(ckpt: &Path) -> PathBuf {
    sidecar(ckpt, ".cfg")
}

pub fn stats_path(ckpt: &Path) -> PathBuf {
    sidecar(ckpt, ".stats.csv")
}

pub fn loss_path(ckpt: &Path) -> PathBuf {
    sidecar(ckpt, ".loss.csv")
}

pub fn land_path(ckpt: &Path) -> PathBuf {
    sidecar(ckpt, ".land.sfgf")
}

#[allow(clippy::too_many_arguments)]
pub fn save_checkpoint(
    path: &Path,
    params: &DenoiserParams,
    diffusion: (usize, f64, f64),
    stats: &NormStats,
    kind: ModelKind,
    dims: (usize, usize, usize),
    land_mask: &[u8],
) -> Result<()> {
    let entries: Vec<(&str, &[usize], &[f32])> =
        params.tensors().map(|(n, t)| (n, t.shape(), t.data())).collect();
    write_bytes(path, &codec::encode_params(&entries))?;

    let mcfg = params.config();
    let mut dump = Config::default();
    dump.set("model.kind", kind.label());
    dump.set("model.in_channels", mcfg.in_channels);
    dump.set("model.out_channels", mcfg.out_channels);
    dump.set("model.base_channels", mcfg.base_channels);
    dump.set(
        "model.channel_mult",
        mcfg.channel_mult.iter().map(|m| m.to_string()).collect::<Vec<_>>().join(","),
    );
    dump.set("model.res_blocks", mcfg.res_blocks_per_level);
    dump.set("model.time_embed_dim", mcfg.time_embed_dim);
    dump.set("diffusion.steps", diffusion.0);
    dump.set("diffusion.beta_start", diffusion.1);
    dump.set("diffusion.beta_end", diffusion.2);
    dump.set("field.layers", dims.0);
    dump.set("field.height", dims.1);
    dump.set("field.width", dims.2);
    write_text(&cfg_path(path), &dump.render())?;
    write_text(&stats_path(path), &codec::render_stats_csv(stats))?;
    // land geometry travels as a one-layer field whose mask is the payload
    let land_field = GridField {
        layers: 1,
        height: dims.1,
        width: dims.2,
        data: vec![0.0; dims.1 * dims.2],
        land_mask: land_mask.to_vec(),
        norm_state: searecon_core::synth::NormState::Normalized,
        stats: None,
    };
    write_bytes(&land_path(path), &codec::encode_field(&land_field))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let entries = codec::decode_params(&read_bytes(path)?)?;
    let dump = Config::parse(&read_text(&cfg_path(path))?)?;
    let kind = match dump.get_str_or("model.kind", "ddpm").as_str() {
        "ddpm" => ModelKind::Ddpm,
        "baseline" => ModelKind::Baseline,
        other => return Err(AppError::Config(format!("unknown model.kind '{other}'"))),
    };
    let mcfg = DenoiserConfig {
        in_channels: dump.get_usize("model.in_channels")?,
        out_channels: dump.get_usize("model.out_channels")?,
        base_channels: dump.get_usize("model.base_channels")?,
        channel_mult: dump.get_list("model.channel_mult")?,
        res_blocks_per_level: dump.get_usize("model.res_blocks")?,
        time_embed_dim: dump.get_usize("model.time_embed_dim")?,
    };
    let params = DenoiserParams::from_entries(&mcfg, entries)?;
    let schedule = build_linear_schedule(
        dump.get_usize("diffusion.steps")?,
        dump.get_f64("diffusion.beta_start")?,
        dump.get_f64("diffusion.beta_end")?,
    )?;
    let stats = codec::parse_stats_csv(&read_text(&stats_path(path))?)?;
    let land_field = codec::decode_field(&read_bytes(&land_path(path))?)?;
    let (layers, height, width) = (
        dump.get_usize("field.layers")?,
        dump.get_usize("field.height")?,
        dump.get_usize("field.width")?,
    );
    if land_field.height != height || land_field.width != width {
        return Err(AppError::Config("land sidecar geometry differs from checkpoint config".into()));
    }
    Ok(Checkpoint {
        params,
        schedule,
        stats,
        kind,
        layers,
        height,
        width,
        land_mask: land_field.land_mask,
    })
}
