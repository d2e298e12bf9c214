//! Synthetic multi-layer temperature fields, observation sampling,
//! normalization, and corpus statistics.
//!
//! The generator encodes the qualitative structure the diffusion model is
//! supposed to learn: warm equator, cold poles, per-basin offsets, a
//! seasonal cycle, smooth spatially correlated noise, and layer values
//! that decay with depth toward a 2 °C abyssal temperature. Land is a
//! fixed set of connected blobs shared by every field of a corpus.

use rand::Rng;
use thiserror::Error;

use crate::rng::{self, Stream};
use crate::sampler::ObservationSet;

pub const LAND_FILL_PHYSICAL: f32 = -9999.0;
const ABYSSAL_C: f64 = 2.0;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("month {0} outside 1..=12")]
    InvalidMonth(usize),
    #[error("invalid field spec: {0}")]
    BadSpec(String),
    #[error("layer {layer} has zero variance; cannot normalize")]
    ZeroStd { layer: usize },
    #[error("field is {actual:?}, operation needs {needed:?}")]
    WrongNormState { needed: NormState, actual: NormState },
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("fields disagree in dims or land mask")]
    MixedGeometry,
    #[error("guided rate {0} outside (0, 1]")]
    BadRate(f64),
    #[error("guided rate yields zero observations on layer {layer}")]
    NoObservations { layer: usize },
    #[error("{0}")]
    DimsMismatch(String),
}

pub type Result<T> = std::result::Result<T, SynthError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormState {
    Physical,
    Normalized,
}

#[derive(Debug, Clone, Copy)]
pub struct LayerStat {
    pub mean: f64,
    pub std: f64,
}

/// Per-layer z-score statistics computed over ocean cells of a corpus.
#[derive(Debug, Clone)]
pub struct NormStats {
    pub per_layer: Vec<LayerStat>,
}

/// L x H x W temperature field with a shared land mask.
///
/// Data is layer-major. Land cells hold [`LAND_FILL_PHYSICAL`] in
/// physical form and 0.0 in normalized form. `stats` records the
/// normalization applied, when any.
#[derive(Debug, Clone)]
pub struct GridField {
    pub layers: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
    pub land_mask: Vec<u8>,
    pub norm_state: NormState,
    pub stats: Option<NormStats>,
}

impl GridField {
    pub fn cell_count(&self) -> usize {
        self.height * self.width
    }

    pub fn numel(&self) -> usize {
        self.layers * self.cell_count()
    }

    pub fn is_land(&self, y: usize, x: usize) -> bool {
        self.land_mask[y * self.width + x] == 1
    }

    /// Ocean cells per layer.
    pub fn ocean_cells(&self) -> usize {
        self.land_mask.iter().filter(|&&m| m == 0).count()
    }

    pub fn idx(&self, l: usize, y: usize, x: usize) -> usize {
        (l * self.height + y) * self.width + x
    }

    /// Spatial mean of each layer over ocean cells.
    pub fn layer_means(&self) -> Vec<f64> {
        let hw = self.cell_count();
        let n = self.ocean_cells().max(1);
        (0..self.layers)
            .map(|l| {
                let mut s = 0.0f64;
                for c in 0..hw {
                    if self.land_mask[c] == 0 {
                        s += self.data[l * hw + c] as f64;
                    }
                }
                s / n as f64
            })
            .collect()
    }

    fn same_geometry(&self, other: &GridField) -> bool {
        self.layers == other.layers
            && self.height == other.height
            && self.width == other.width
            && self.land_mask == other.land_mask
    }
}

/// Family parameters for the synthetic generator. One spec plus a month
/// and a field seed determine one field.
#[derive(Debug, Clone)]
pub struct SyntheticFieldSpec {
    pub layers: usize,
    pub height: usize,
    pub width: usize,
    pub equator_peak_c: f64,
    pub pole_contrast_c: f64,
    pub basin_offsets_c: Vec<f64>,
    pub depth_decay_layers: f64,
    pub seasonal_amp_c: f64,
    pub seasonal_phase_months: f64,
    pub noise_amp_c: f64,
    pub noise_corr_cells: f64,
    pub geometry_seed: u64,
    pub field_seed: u64,
}

impl SyntheticFieldSpec {
    /// Primary desk-scale family.
    pub fn family_a(layers: usize, height: usize, width: usize) -> Self {
        SyntheticFieldSpec {
            layers,
            height,
            width,
            equator_peak_c: 30.0,
            pole_contrast_c: 30.0,
            basin_offsets_c: vec![1.5, -0.5, 0.5, -1.5],
            depth_decay_layers: 8.0,
            seasonal_amp_c: 2.0,
            seasonal_phase_months: 1.0,
            noise_amp_c: 2.0,
            noise_corr_cells: 4.0,
            geometry_seed: 77,
            field_seed: 0,
        }
    }

    /// Shifted family for generalization experiments: basin offsets moved
    /// warm by 3 °C relative to family A, same geometry.
    pub fn family_b(layers: usize, height: usize, width: usize) -> Self {
        let mut spec = Self::family_a(layers, height, width);
        spec.basin_offsets_c = vec![4.5, 2.5, 3.5, 1.5];
        spec
    }

    fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.height < 2 || self.width == 0 {
            return Err(SynthError::BadSpec(format!(
                "dims {}x{}x{}",
                self.layers, self.height, self.width
            )));
        }
        if self.pole_contrast_c <= 0.0 {
            return Err(SynthError::BadSpec("pole contrast must be positive".into()));
        }
        if self.basin_offsets_c.is_empty() {
            return Err(SynthError::BadSpec("need at least one basin".into()));
        }
        if self.depth_decay_layers <= 0.0 {
            return Err(SynthError::BadSpec("depth decay must be positive".into()));
        }
        if self.noise_amp_c < 0.0 || self.noise_corr_cells <= 0.0 {
            return Err(SynthError::BadSpec("bad noise parameters".into()));
        }
        Ok(())
    }
}

/// Connected land blobs covering 25-35% of cells, fixed per geometry seed.
/// Walkers wrap in longitude and clamp in latitude.
pub fn make_land_mask(geometry_seed: u64, height: usize, width: usize) -> Vec<u8> {
    let mut rng = rng::stream_rng(geometry_seed, Stream::LandGeometry);
    let total = height * width;
    let target = ((0.25 + 0.10 * rng.gen::<f64>()) * total as f64).round() as usize;
    let mut mask = vec![0u8; total];
    let mut covered = 0usize;
    let walkers = 4.min(total);
    let mut pos: Vec<(usize, usize)> = (0..walkers)
        .map(|_| (rng.gen_range(0..height), rng.gen_range(0..width)))
        .collect();
    for &(y, x) in &pos {
        if mask[y * width + x] == 0 {
            mask[y * width + x] = 1;
            covered += 1;
        }
    }
    while covered < target {
        let i = rng.gen_range(0..walkers);
        let (mut y, mut x) = pos[i];
        match rng.gen_range(0..4) {
            0 => y = y.saturating_sub(1),
            1 => y = (y + 1).min(height - 1),
            2 => x = (x + width - 1) % width,
            _ => x = (x + 1) % width,
        }
        pos[i] = (y, x);
        let c = y * width + x;
        if mask[c] == 0 {
            mask[c] = 1;
            covered += 1;
        }
    }
    mask
}

/// Smooth unit-variance noise: white noise blurred by a separable
/// Gaussian (longitude wraps), then re-standardized.
fn smooth_noise(seed: u64, height: usize, width: usize, corr: f64) -> Vec<f64> {
    let mut rng = rng::stream_rng(seed, Stream::FieldNoise);
    let white = rng::normal_f64(&mut rng, height * width);
    let radius = (3.0 * corr).ceil() as isize;
    let weights: Vec<f64> = (-radius..=radius)
        .map(|d| (-((d * d) as f64) / (2.0 * corr * corr)).exp())
        .collect();
    let wsum: f64 = weights.iter().sum();

    // horizontal pass with wraparound
    let mut hpass = vec![0.0f64; height * width];
    for y in 0..height {
        for x in 0..width {
            let mut acc = 0.0;
            for (wi, d) in (-radius..=radius).enumerate() {
                let xx = (x as isize + d).rem_euclid(width as isize) as usize;
                acc += weights[wi] * white[y * width + xx];
            }
            hpass[y * width + x] = acc / wsum;
        }
    }
    // vertical pass with clamping
    let mut vpass = vec![0.0f64; height * width];
    for y in 0..height {
        for x in 0..width {
            let mut acc = 0.0;
            for (wi, d) in (-radius..=radius).enumerate() {
                let yy = (y as isize + d).clamp(0, height as isize - 1) as usize;
                acc += weights[wi] * hpass[yy * width + x];
            }
            vpass[y * width + x] = acc / wsum;
        }
    }
    let n = (height * width) as f64;
    let mean = vpass.iter().sum::<f64>() / n;
    let var = vpass.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let inv = 1.0 / var.sqrt().max(1e-12);
    vpass.iter().map(|v| (v - mean) * inv).collect()
}

/// One physical field for a given month.
pub fn generate_field(spec: &SyntheticFieldSpec, month: usize) -> Result<GridField> {
    if month == 0 || month > 12 {
        return Err(SynthError::InvalidMonth(month));
    }
    spec.validate()?;
    let (l, h, w) = (spec.layers, spec.height, spec.width);
    let hw = h * w;
    let land = make_land_mask(spec.geometry_seed, h, w);
    let noise = if spec.noise_amp_c > 0.0 {
        smooth_noise(rng::mix(spec.field_seed, month as u64), h, w, spec.noise_corr_cells)
    } else {
        vec![0.0; hw]
    };
    let seasonal = spec.seasonal_amp_c
        * (std::f64::consts::TAU * (month as f64 - spec.seasonal_phase_months) / 12.0).cos();
    let basins = spec.basin_offsets_c.len();

    let mut data = vec![0.0f32; l * hw];
    for y in 0..h {
        let lat_deg = -90.0 + 180.0 * y as f64 / (h - 1) as f64;
        let lat_term = (lat_deg.to_radians()).sin().powi(2);
        for x in 0..w {
            let c = y * w + x;
            if land[c] == 1 {
                for layer in 0..l {
                    data[layer * hw + c] = LAND_FILL_PHYSICAL;
                }
                continue;
            }
            let basin = spec.basin_offsets_c[(x * basins / w).min(basins - 1)];
            let surface = spec.equator_peak_c - spec.pole_contrast_c * lat_term
                + basin
                + seasonal
                + spec.noise_amp_c * noise[c];
            for layer in 0..l {
                let decay = (-(layer as f64) / spec.depth_decay_layers).exp();
                data[layer * hw + c] = (ABYSSAL_C + (surface - ABYSSAL_C) * decay) as f32;
            }
        }
    }
    Ok(GridField {
        layers: l,
        height: h,
        width: w,
        data,
        land_mask: land,
        norm_state: NormState::Physical,
        stats: None,
    })
}

/// A corpus of `count` fields cycling through months, with a fresh noise
/// seed per field. All fields share the spec's geometry.
pub fn build_corpus(spec: &SyntheticFieldSpec, count: usize) -> Result<Vec<GridField>> {
    (0..count)
        .map(|i| {
            let mut s = spec.clone();
            s.field_seed = rng::mix(spec.field_seed, i as u64);
            generate_field(&s, 1 + i % 12)
        })
        .collect()
}

/// Per-layer mean/std over ocean cells of the whole corpus.
pub fn compute_stats(corpus: &[GridField]) -> Result<NormStats> {
    let first = corpus.first().ok_or(SynthError::EmptyCorpus)?;
    if corpus.iter().any(|f| !f.same_geometry(first)) {
        return Err(SynthError::MixedGeometry);
    }
    let hw = first.cell_count();
    let mut per_layer = Vec::with_capacity(first.layers);
    for l in 0..first.layers {
        let mut sum = 0.0f64;
        let mut sum_sq = 0.0f64;
        let mut n = 0usize;
        for f in corpus {
            for c in 0..hw {
                if f.land_mask[c] == 0 {
                    let v = f.data[l * hw + c] as f64;
                    sum += v;
                    sum_sq += v * v;
                    n += 1;
                }
            }
        }
        let mean = sum / n as f64;
        let var = (sum_sq / n as f64 - mean * mean).max(0.0);
        let std = var.sqrt();
        if std < 1e-9 {
            return Err(SynthError::ZeroStd { layer: l });
        }
        per_layer.push(LayerStat { mean, std });
    }
    Ok(NormStats { per_layer })
}

/// Physical -> normalized. Land cells become 0.0.
pub fn normalize(field: &GridField, stats: &NormStats) -> Result<GridField> {
    if field.norm_state != NormState::Physical {
        return Err(SynthError::WrongNormState { needed: NormState::Physical, actual: field.norm_state });
    }
    if stats.per_layer.len() != field.layers {
        return Err(SynthError::DimsMismatch(format!(
            "stats have {} layers, field has {}",
            stats.per_layer.len(),
            field.layers
        )));
    }
    let hw = field.cell_count();
    let mut out = field.clone();
    for l in 0..field.layers {
        let LayerStat { mean, std } = stats.per_layer[l];
        if std < 1e-9 {
            return Err(SynthError::ZeroStd { layer: l });
        }
        for c in 0..hw {
            out.data[l * hw + c] = if field.land_mask[c] == 1 {
                0.0
            } else {
                ((field.data[l * hw + c] as f64 - mean) / std) as f32
            };
        }
    }
    out.norm_state = NormState::Normalized;
    out.stats = Some(stats.clone());
    Ok(out)
}

/// Normalized -> physical. Land cells become the physical fill value.
pub fn denormalize(field: &GridField, stats: &NormStats) -> Result<GridField> {
    if field.norm_state != NormState::Normalized {
        return Err(SynthError::WrongNormState { needed: NormState::Normalized, actual: field.norm_state });
    }
    if stats.per_layer.len() != field.layers {
        return Err(SynthError::DimsMismatch(format!(
            "stats have {} layers, field has {}",
            stats.per_layer.len(),
            field.layers
        )));
    }
    let hw = field.cell_count();
    let mut out = field.clone();
    for l in 0..field.layers {
        let LayerStat { mean, std } = stats.per_layer[l];
        for c in 0..hw {
            out.data[l * hw + c] = if field.land_mask[c] == 1 {
                LAND_FILL_PHYSICAL
            } else {
                (field.data[l * hw + c] as f64 * std + mean) as f32
            };
        }
    }
    out.norm_state = NormState::Physical;
    out.stats = Some(stats.clone());
    Ok(out)
}

/// Uniformly samples `round(rate * ocean_cells)` distinct ocean cells per
/// layer, locations independent across layers. Values are exact copies of
/// the (normalized) field.
pub fn sample_observations(field: &GridField, guided_rate: f64, trial_seed: u64) -> Result<ObservationSet> {
    if field.norm_state != NormState::Normalized {
        return Err(SynthError::WrongNormState { needed: NormState::Normalized, actual: field.norm_state });
    }
    if !(guided_rate > 0.0 && guided_rate <= 1.0) {
        return Err(SynthError::BadRate(guided_rate));
    }
    let hw = field.cell_count();
    let ocean: Vec<u32> = (0..hw as u32).filter(|&c| field.land_mask[c as usize] == 0).collect();
    let per_layer = (guided_rate * ocean.len() as f64).round() as usize;
    let mut mask = vec![0u8; field.numel()];
    let mut values = vec![0.0f32; field.numel()];
    for l in 0..field.layers {
        if per_layer == 0 {
            return Err(SynthError::NoObservations { layer: l });
        }
        let mut rng = rng::indexed_rng(trial_seed, Stream::Observation, l as u64);
        let mut pool = ocean.clone();
        // partial Fisher-Yates: the first `per_layer` entries are the sample
        for i in 0..per_layer {
            let j = rng.gen_range(i..pool.len());
            pool.swap(i, j);
            let c = pool[i] as usize;
            mask[l * hw + c] = 1;
            values[l * hw + c] = field.data[l * hw + c];
        }
    }
    Ok(ObservationSet {
        layers: field.layers,
        height: field.height,
        width: field.width,
        mask,
        values,
        guided_rate,
        trial_seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec() -> SyntheticFieldSpec {
        SyntheticFieldSpec::family_a(4, 17, 24)
    }

    #[test]
    fn closed_form_surface_without_noise() {
        // odd height so the middle row sits exactly on the equator
        let mut spec = SyntheticFieldSpec::family_a(2, 33, 16);
        spec.noise_amp_c = 0.0;
        spec.basin_offsets_c = vec![1.25];
        let month = 4;
        let field = generate_field(&spec, month).unwrap();
        let seasonal = spec.seasonal_amp_c
            * (std::f64::consts::TAU * (month as f64 - spec.seasonal_phase_months) / 12.0).cos();
        let hw = field.cell_count();
        // equator row: peak + basin + seasonal
        let eq = 16usize;
        for x in 0..16 {
            if !field.is_land(eq, x) {
                let expect = (30.0 + 1.25 + seasonal) as f32;
                assert!((field.data[eq * 16 + x] - expect).abs() < 1e-4);
            }
        }
        // pole rows: peak - contrast + basin + seasonal = 0 + offsets
        for x in 0..16 {
            for y in [0usize, 32] {
                if !field.is_land(y, x) {
                    let expect = (0.0 + 1.25 + seasonal) as f32;
                    assert!((field.data[y * 16 + x] - expect).abs() < 1e-4);
                }
            }
        }
        let _ = hw;
    }

    #[test]
    fn layer_means_non_increasing() {
        let field = generate_field(&small_spec(), 7).unwrap();
        let means = field.layer_means();
        for k in 1..means.len() {
            assert!(
                means[k] <= means[k - 1] + 1e-9,
                "layer {k}: {} > {}",
                means[k],
                means[k - 1]
            );
        }
    }

    #[test]
    fn field_seeds_differ_land_shared() {
        let mut a = small_spec();
        let mut b = small_spec();
        a.field_seed = 1;
        b.field_seed = 2;
        let fa = generate_field(&a, 3).unwrap();
        let fb = generate_field(&b, 3).unwrap();
        assert_eq!(fa.land_mask, fb.land_mask);
        assert_ne!(fa.data, fb.data);
    }

    #[test]
    fn land_coverage_in_band() {
        for seed in [1u64, 9, 77, 1234] {
            let mask = make_land_mask(seed, 32, 64);
            let frac = mask.iter().filter(|&&m| m == 1).count() as f64 / (32.0 * 64.0);
            assert!((0.25..=0.35).contains(&frac), "seed {seed}: coverage {frac}");
        }
    }

    #[test]
    fn invalid_month_is_error() {
        assert!(matches!(generate_field(&small_spec(), 0), Err(SynthError::InvalidMonth(0))));
        assert!(matches!(generate_field(&small_spec(), 13), Err(SynthError::InvalidMonth(13))));
    }

    #[test]
    fn normalize_roundtrip_and_stats() {
        let corpus = build_corpus(&small_spec(), 24).unwrap();
        let stats = compute_stats(&corpus).unwrap();
        // normalized corpus must have per-layer mean ~0, std ~1 over ocean
        let hw = corpus[0].cell_count();
        for l in 0..corpus[0].layers {
            let mut sum = 0.0f64;
            let mut sq = 0.0f64;
            let mut n = 0usize;
            for f in &corpus {
                let nf = normalize(f, &stats).unwrap();
                for c in 0..hw {
                    if nf.land_mask[c] == 0 {
                        let v = nf.data[l * hw + c] as f64;
                        sum += v;
                        sq += v * v;
                        n += 1;
                    }
                }
            }
            let mean = sum / n as f64;
            let std = (sq / n as f64 - mean * mean).sqrt();
            assert!(mean.abs() < 0.05, "layer {l} mean {mean}");
            assert!((std - 1.0).abs() < 0.05, "layer {l} std {std}");
        }
        // roundtrip
        let nf = normalize(&corpus[0], &stats).unwrap();
        let back = denormalize(&nf, &stats).unwrap();
        for (a, b) in back.data.iter().zip(&corpus[0].data) {
            assert!((a - b).abs() < 1e-3, "{a} vs {b}");
        }
        // land cells hold the fill values
        for c in 0..hw {
            if corpus[0].land_mask[c] == 1 {
                assert_eq!(nf.data[c], 0.0);
                assert_eq!(back.data[c], LAND_FILL_PHYSICAL);
            }
        }
    }

    #[test]
    fn constant_corpus_has_zero_std() {
        let mut f = generate_field(&small_spec(), 1).unwrap();
        let hw = f.cell_count();
        for l in 0..f.layers {
            for c in 0..hw {
                if f.land_mask[c] == 0 {
                    f.data[l * hw + c] = 5.0;
                }
            }
        }
        assert!(matches!(compute_stats(&[f]), Err(SynthError::ZeroStd { layer: 0 })));
    }

    #[test]
    fn observations_full_rate_covers_ocean_exactly() {
        let corpus = build_corpus(&small_spec(), 6).unwrap();
        let stats = compute_stats(&corpus).unwrap();
        let nf = normalize(&corpus[0], &stats).unwrap();
        let obs = sample_observations(&nf, 1.0, 5).unwrap();
        let hw = nf.cell_count();
        for l in 0..nf.layers {
            for c in 0..hw {
                let expect = u8::from(nf.land_mask[c] == 0);
                assert_eq!(obs.mask[l * hw + c], expect);
            }
        }
    }

    #[test]
    fn observation_count_matches_buoy_density_arithmetic() {
        // grid with exactly 42510 ocean cells; 7.5% must give 3188 points
        let (h, w) = (205, 210);
        let total = h * w; // 43050
        let mut land = vec![0u8; total];
        for c in 0..(total - 42510) {
            land[c] = 1;
        }
        let field = GridField {
            layers: 1,
            height: h,
            width: w,
            data: vec![0.5; total],
            land_mask: land,
            norm_state: NormState::Normalized,
            stats: None,
        };
        let obs = sample_observations(&field, 0.075, 1).unwrap();
        assert_eq!(obs.mask.iter().filter(|&&m| m == 1).count(), 3188);
    }

    #[test]
    fn observations_are_deterministic_and_on_ocean() {
        let corpus = build_corpus(&small_spec(), 6).unwrap();
        let stats = compute_stats(&corpus).unwrap();
        let nf = normalize(&corpus[2], &stats).unwrap();
        let a = sample_observations(&nf, 0.1, 99).unwrap();
        let b = sample_observations(&nf, 0.1, 99).unwrap();
        assert_eq!(a.mask, b.mask);
        assert_eq!(a.values, b.values);
        let hw = nf.cell_count();
        for l in 0..nf.layers {
            for c in 0..hw {
                if a.mask[l * hw + c] == 1 {
                    assert_eq!(nf.land_mask[c], 0, "observation on land");
                    assert_eq!(a.values[l * hw + c], nf.data[l * hw + c]);
                }
            }
        }
        // per-layer counts equal, locations vary across layers
        let count0 = (0..hw).filter(|&c| a.mask[c] == 1).count();
        let count1 = (0..hw).filter(|&c| a.mask[hw + c] == 1).count();
        assert_eq!(count0, count1);
    }

    #[test]
    fn zero_rate_and_bad_rate_are_errors() {
        let corpus = build_corpus(&small_spec(), 2).unwrap();
        let stats = compute_stats(&corpus).unwrap();
        let nf = normalize(&corpus[0], &stats).unwrap();
        assert!(matches!(sample_observations(&nf, 0.0, 1), Err(SynthError::BadRate(_))));
        assert!(matches!(sample_observations(&nf, 1.5, 1), Err(SynthError::BadRate(_))));
        // tiny rate on a small grid rounds to zero points
        assert!(matches!(
            sample_observations(&nf, 1e-6, 1),
            Err(SynthError::NoObservations { .. })
        ));
    }

    #[test]
    fn family_separation_at_least_one_degree() {
        let a = build_corpus(&SyntheticFieldSpec::family_a(8, 16, 16), 24).unwrap();
        let b = build_corpus(&SyntheticFieldSpec::family_b(8, 16, 16), 24).unwrap();
        for l in 0..8 {
            let ma: f64 = a.iter().map(|f| f.layer_means()[l]).sum::<f64>() / a.len() as f64;
            let mb: f64 = b.iter().map(|f| f.layer_means()[l]).sum::<f64>() / b.len() as f64;
            assert!((mb - ma).abs() >= 1.0, "layer {l}: {} vs {}", ma, mb);
        }
    }
}
