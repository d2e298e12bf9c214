//! U-Net-lite noise predictor over multi-layer fields.
//!
//! Standard DDPM topology scaled down for desk-size grids: sinusoidal
//! timestep embedding fed through a small MLP, residual blocks with
//! group norm and SiLU, stride-2 conv downsampling, nearest-neighbor +
//! conv upsampling, and skip connections by channel concatenation. The
//! final conv is zero-initialized so a freshly built network is the zero
//! function. No attention blocks.

use std::collections::HashMap;

use thiserror::Error;

use crate::rng::{self, Stream};
use crate::tensor::{Tape, Tensor, TensorError, TensorId};

#[derive(Debug, Error)]
pub enum DenoiserError {
    #[error("invalid denoiser config: {0}")]
    BadConfig(String),
    #[error("parameter set mismatch: {0}")]
    ParamSetMismatch(String),
    #[error("time embedding dim {0} must be even and >= 2")]
    OddEmbeddingDim(usize),
    #[error("t must be >= 1")]
    TimestepZero,
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type Result<T> = std::result::Result<T, DenoiserError>;

/// Architecture descriptor. `in_channels` equals the number of vertical
/// layers for the diffusion denoiser; the regression baseline stacks
/// observations and mask into `2 * layers` input channels instead.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DenoiserConfig {
    pub in_channels: usize,
    pub out_channels: usize,
    pub base_channels: usize,
    pub channel_mult: Vec<usize>,
    pub res_blocks_per_level: usize,
    pub time_embed_dim: usize,
}

impl DenoiserConfig {
    /// Desk-scale default used throughout the toy experiments.
    pub fn desk_default(layers: usize) -> Self {
        DenoiserConfig {
            in_channels: layers,
            out_channels: layers,
            base_channels: 32,
            channel_mult: vec![1, 2, 2],
            res_blocks_per_level: 2,
            time_embed_dim: 128,
        }
    }

    /// Full-scale preset (42 layers, 128 base channels); kept for
    /// reference, not exercised by the test suite.
    pub fn full_scale_preset() -> Self {
        DenoiserConfig {
            in_channels: 42,
            out_channels: 42,
            base_channels: 128,
            channel_mult: vec![1, 2, 2, 2, 4, 4],
            res_blocks_per_level: 3,
            time_embed_dim: 512,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.out_channels == 0 || self.base_channels == 0 {
            return Err(DenoiserError::BadConfig("channel counts must be positive".into()));
        }
        if self.channel_mult.is_empty() || self.channel_mult[0] != 1 {
            return Err(DenoiserError::BadConfig(format!(
                "channel_mult must be non-empty and start with 1, got {:?}",
                self.channel_mult
            )));
        }
        if self.res_blocks_per_level == 0 {
            return Err(DenoiserError::BadConfig("need at least one res block per level".into()));
        }
        if self.time_embed_dim < 2 || self.time_embed_dim % 2 != 0 {
            return Err(DenoiserError::OddEmbeddingDim(self.time_embed_dim));
        }
        Ok(())
    }

    pub fn levels(&self) -> usize {
        self.channel_mult.len()
    }

    /// Spatial dims must survive `levels - 1` halvings.
    pub fn validate_spatial(&self, h: usize, w: usize) -> Result<()> {
        let div = 1usize << (self.levels() - 1);
        if h == 0 || w == 0 || h % div != 0 || w % div != 0 {
            return Err(DenoiserError::BadConfig(format!(
                "spatial {}x{} not divisible by {}",
                h, w, div
            )));
        }
        Ok(())
    }
}

/// Largest group count in {8,4,2,1} dividing `c`.
fn norm_groups(c: usize) -> usize {
    for g in [8, 4, 2] {
        if c % g == 0 {
            return g;
        }
    }
    1
}

/// Sinusoidal timestep embedding: half sines, half cosines, with divisors
/// spanning [1, 1e4] geometrically.
pub fn time_embedding(t: usize, dim: usize) -> Result<Vec<f32>> {
    if dim < 2 || dim % 2 != 0 {
        return Err(DenoiserError::OddEmbeddingDim(dim));
    }
    let half = dim / 2;
    let mut out = vec![0.0f32; dim];
    for i in 0..half {
        let exponent = if half == 1 { 0.0 } else { 4.0 * i as f64 / (half - 1) as f64 };
        let arg = t as f64 / 10f64.powf(exponent);
        out[i] = arg.sin() as f32;
        out[half + i] = arg.cos() as f32;
    }
    Ok(out)
}

#[derive(Debug, Clone)]
struct ResBlockPlan {
    prefix: String,
    c_in: usize,
    c_out: usize,
}

#[derive(Debug, Clone)]
struct UnetPlan {
    stem_out: usize,
    down: Vec<(Vec<ResBlockPlan>, Option<usize>)>, // blocks, downsample channels
    mid: Vec<ResBlockPlan>,
    up: Vec<(Vec<ResBlockPlan>, Option<usize>)>, // blocks, upsample channels
    head_channels: usize,
}

fn build_plan(cfg: &DenoiserConfig) -> UnetPlan {
    let base = cfg.base_channels;
    let levels = cfg.levels();
    let r = cfg.res_blocks_per_level;

    let mut skips: Vec<usize> = vec![base];
    let mut ch = base;
    let mut down = Vec::new();
    for (i, &mult) in cfg.channel_mult.iter().enumerate() {
        let c = base * mult;
        let mut blocks = Vec::new();
        for b in 0..r {
            blocks.push(ResBlockPlan { prefix: format!("down{i}.rb{b}"), c_in: ch, c_out: c });
            ch = c;
            skips.push(c);
        }
        let ds = if i + 1 < levels {
            skips.push(c);
            Some(c)
        } else {
            None
        };
        down.push((blocks, ds));
    }

    let mid = vec![
        ResBlockPlan { prefix: "mid.rb0".into(), c_in: ch, c_out: ch },
        ResBlockPlan { prefix: "mid.rb1".into(), c_in: ch, c_out: ch },
    ];

    let mut up = Vec::new();
    for (i, &mult) in cfg.channel_mult.iter().enumerate().rev() {
        let c = base * mult;
        let mut blocks = Vec::new();
        for b in 0..=r {
            let skip = skips.pop().expect("skip stack underflow");
            blocks.push(ResBlockPlan { prefix: format!("up{i}.rb{b}"), c_in: ch + skip, c_out: c });
            ch = c;
        }
        let us = if i > 0 { Some(c) } else { None };
        up.push((blocks, us));
    }
    debug_assert!(skips.is_empty());

    UnetPlan { stem_out: base, down, mid, up, head_channels: base }
}

/// The complete, closed set of learnable weights plus the architecture
/// descriptor. Entry order is the construction order and is what the
/// parameter file format serializes.
#[derive(Debug, Clone)]
pub struct DenoiserParams {
    cfg: DenoiserConfig,
    names: Vec<String>,
    tensors: Vec<Tensor>,
    index: HashMap<String, usize>,
}

struct ParamBuilder {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    rng: rand_chacha::ChaCha8Rng,
}

impl ParamBuilder {
    fn push(&mut self, name: String, t: Tensor) {
        self.names.push(name);
        self.tensors.push(t);
    }

    fn conv(&mut self, name: &str, c_in: usize, c_out: usize, k: usize, zero: bool) {
        let fan_in = c_in * k * k;
        let std = 1.0 / (fan_in as f32).sqrt();
        let w = if zero {
            vec![0.0; c_out * fan_in]
        } else {
            rng::normal_f32(&mut self.rng, c_out * fan_in).iter().map(|v| v * std).collect()
        };
        self.push(format!("{name}.w"), Tensor::new(w, &[c_out, c_in, k, k]).unwrap());
        self.push(format!("{name}.b"), Tensor::zeros(&[c_out]));
    }

    fn linear(&mut self, name: &str, d_in: usize, d_out: usize) {
        let std = 1.0 / (d_in as f32).sqrt();
        let w: Vec<f32> = rng::normal_f32(&mut self.rng, d_out * d_in).iter().map(|v| v * std).collect();
        self.push(format!("{name}.w"), Tensor::new(w, &[d_out, d_in]).unwrap());
        self.push(format!("{name}.b"), Tensor::zeros(&[d_out]));
    }

    fn norm(&mut self, name: &str, c: usize) {
        self.push(format!("{name}.g"), Tensor::new(vec![1.0; c], &[c]).unwrap());
        self.push(format!("{name}.b"), Tensor::zeros(&[c]));
    }

    fn res_block(&mut self, plan: &ResBlockPlan, ted: usize) {
        let p = plan.prefix.clone();
        self.norm(&format!("{p}.norm1"), plan.c_in);
        self.conv(&format!("{p}.conv1"), plan.c_in, plan.c_out, 3, false);
        self.linear(&format!("{p}.emb"), ted, plan.c_out);
        self.norm(&format!("{p}.norm2"), plan.c_out);
        self.conv(&format!("{p}.conv2"), plan.c_out, plan.c_out, 3, true);
        if plan.c_in != plan.c_out {
            self.conv(&format!("{p}.skip"), plan.c_in, plan.c_out, 1, false);
        }
    }
}

impl DenoiserParams {
    pub fn init(cfg: &DenoiserConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let plan = build_plan(cfg);
        let ted = cfg.time_embed_dim;
        let mut b = ParamBuilder {
            names: Vec::new(),
            tensors: Vec::new(),
            rng: rng::stream_rng(seed, Stream::ParamInit),
        };
        b.linear("time.l1", ted, ted);
        b.linear("time.l2", ted, ted);
        b.conv("stem", cfg.in_channels, plan.stem_out, 3, false);
        for (i, (blocks, ds)) in plan.down.iter().enumerate() {
            for rb in blocks {
                b.res_block(rb, ted);
            }
            if let Some(c) = ds {
                b.conv(&format!("down{i}.ds"), *c, *c, 3, false);
            }
        }
        for rb in &plan.mid {
            b.res_block(rb, ted);
        }
        for (blocks, us) in &plan.up {
            for rb in blocks {
                b.res_block(rb, ted);
            }
            if let Some(c) = us {
                let level = blocks[0].prefix.split('.').next().unwrap().to_string();
                b.conv(&format!("{level}.us"), *c, *c, 3, false);
            }
        }
        b.norm("head.norm", plan.head_channels);
        b.conv("head.conv", plan.head_channels, cfg.out_channels, 3, true);

        let index = b.names.iter().enumerate().map(|(i, n)| (n.clone(), i)).collect();
        Ok(DenoiserParams { cfg: cfg.clone(), names: b.names, tensors: b.tensors, index })
    }

    pub fn config(&self) -> &DenoiserConfig {
        &self.cfg
    }

    pub fn param_count(&self) -> usize {
        self.tensors.iter().map(|t| t.numel()).sum()
    }

    pub fn tensor_count(&self) -> usize {
        self.tensors.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index.get(name).map(|&i| &self.tensors[i])
    }

    pub fn tensors(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(|n| n.as_str()).zip(self.tensors.iter())
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.names.iter().map(|n| n.as_str()).zip(self.tensors.iter_mut())
    }

    pub fn tensor_at(&self, i: usize) -> &Tensor {
        &self.tensors[i]
    }

    pub fn tensor_at_mut(&mut self, i: usize) -> &mut Tensor {
        &mut self.tensors[i]
    }

    /// Rebuilds a parameter set from serialized entries. The entry list
    /// must match the config's parameter plan exactly (same names, same
    /// shapes, same order): the set is closed.
    pub fn from_entries(cfg: &DenoiserConfig, entries: Vec<(String, Vec<usize>, Vec<f32>)>) -> Result<Self> {
        let template = DenoiserParams::init(cfg, 0)?;
        if entries.len() != template.names.len() {
            return Err(DenoiserError::ParamSetMismatch(format!(
                "expected {} tensors, file has {}",
                template.names.len(),
                entries.len()
            )));
        }
        let mut tensors = Vec::with_capacity(entries.len());
        for ((name, shape, data), expect_name) in entries.into_iter().zip(&template.names) {
            if &name != expect_name {
                return Err(DenoiserError::ParamSetMismatch(format!(
                    "expected tensor '{expect_name}', file has '{name}'"
                )));
            }
            let expect_shape = template.get(expect_name).unwrap().shape();
            if shape != expect_shape {
                return Err(DenoiserError::ParamSetMismatch(format!(
                    "tensor '{name}': shape {shape:?} vs expected {expect_shape:?}"
                )));
            }
            tensors.push(Tensor::new(data, &shape).map_err(DenoiserError::Tensor)?);
        }
        Ok(DenoiserParams { cfg: cfg.clone(), names: template.names, tensors, index: template.index })
    }
}

/// Tape-resident handles for one parameter set.
pub struct Binding {
    ids: Vec<TensorId>,
    by_name: HashMap<String, TensorId>,
}

impl Binding {
    fn id(&self, name: &str) -> TensorId {
        *self.by_name.get(name).unwrap_or_else(|| panic!("unknown parameter '{name}'"))
    }

    pub fn ids(&self) -> &[TensorId] {
        &self.ids
    }
}

/// Copies every parameter onto the tape; `trainable` marks them as
/// gradient roots.
pub fn bind(tape: &mut Tape, params: &DenoiserParams, trainable: bool) -> Binding {
    let mut ids = Vec::with_capacity(params.tensors.len());
    let mut by_name = HashMap::with_capacity(params.tensors.len());
    for (name, t) in params.tensors() {
        let mut node = t.clone();
        if trainable {
            node = node.with_grad();
        }
        let id = tape.leaf(node);
        ids.push(id);
        by_name.insert(name.to_string(), id);
    }
    Binding { ids, by_name }
}

fn res_block_forward(
    tape: &mut Tape,
    bound: &Binding,
    plan: &ResBlockPlan,
    h: TensorId,
    emb: TensorId,
) -> Result<TensorId> {
    let p = &plan.prefix;
    let n1 = tape.group_norm(
        h,
        norm_groups(plan.c_in),
        bound.id(&format!("{p}.norm1.g")),
        bound.id(&format!("{p}.norm1.b")),
    )?;
    let a1 = tape.silu(n1)?;
    let c1 = tape.conv2d(a1, bound.id(&format!("{p}.conv1.w")), bound.id(&format!("{p}.conv1.b")), 1, 1)?;

    let eact = tape.silu(emb)?;
    let eout = tape.linear(eact, bound.id(&format!("{p}.emb.w")), bound.id(&format!("{p}.emb.b")))?;
    let ebias = tape.reshape(eout, &[plan.c_out])?;
    let h2 = tape.add_channel_bias(c1, ebias)?;

    let n2 = tape.group_norm(
        h2,
        norm_groups(plan.c_out),
        bound.id(&format!("{p}.norm2.g")),
        bound.id(&format!("{p}.norm2.b")),
    )?;
    let a2 = tape.silu(n2)?;
    let c2 = tape.conv2d(a2, bound.id(&format!("{p}.conv2.w")), bound.id(&format!("{p}.conv2.b")), 1, 1)?;

    let skip = if plan.c_in == plan.c_out {
        h
    } else {
        tape.conv2d(h, bound.id(&format!("{p}.skip.w")), bound.id(&format!("{p}.skip.b")), 0, 1)?
    };
    Ok(tape.add(skip, c2)?)
}

/// Full U-Net forward on an existing tape. `x` is [N, in_channels, H, W].
pub fn forward_bound(
    tape: &mut Tape,
    cfg: &DenoiserConfig,
    bound: &Binding,
    x: TensorId,
    t: usize,
) -> Result<TensorId> {
    if t == 0 {
        return Err(DenoiserError::TimestepZero);
    }
    let xs = tape.shape(x).to_vec();
    if xs.len() != 4 || xs[1] != cfg.in_channels {
        return Err(DenoiserError::BadConfig(format!(
            "input shape {:?} does not match in_channels {}",
            xs, cfg.in_channels
        )));
    }
    cfg.validate_spatial(xs[2], xs[3])?;
    let plan = build_plan(cfg);

    let sin_emb = time_embedding(t, cfg.time_embed_dim)?;
    let e0 = tape.constant(sin_emb, &[1, cfg.time_embed_dim])?;
    let e1 = tape.linear(e0, bound.id("time.l1.w"), bound.id("time.l1.b"))?;
    let e1a = tape.silu(e1)?;
    let emb = tape.linear(e1a, bound.id("time.l2.w"), bound.id("time.l2.b"))?;

    let mut h = tape.conv2d(x, bound.id("stem.w"), bound.id("stem.b"), 1, 1)?;
    let mut skips = vec![h];
    for (i, (blocks, ds)) in plan.down.iter().enumerate() {
        for rb in blocks {
            h = res_block_forward(tape, bound, rb, h, emb)?;
            skips.push(h);
        }
        if ds.is_some() {
            h = tape.conv2d(h, bound.id(&format!("down{i}.ds.w")), bound.id(&format!("down{i}.ds.b")), 1, 2)?;
            skips.push(h);
        }
    }
    for rb in &plan.mid {
        h = res_block_forward(tape, bound, rb, h, emb)?;
    }
    for (blocks, us) in &plan.up {
        for rb in blocks {
            let skip = skips.pop().expect("skip stack underflow");
            let cat = tape.concat_channels(h, skip)?;
            h = res_block_forward(tape, bound, rb, cat, emb)?;
        }
        if us.is_some() {
            let level = blocks[0].prefix.split('.').next().unwrap();
            let up = tape.upsample_nearest_2x(h)?;
            h = tape.conv2d(up, bound.id(&format!("{level}.us.w")), bound.id(&format!("{level}.us.b")), 1, 1)?;
        }
    }
    debug_assert!(skips.is_empty());

    let hn = tape.group_norm(h, norm_groups(plan.head_channels), bound.id("head.norm.g"), bound.id("head.norm.b"))?;
    let ha = tape.silu(hn)?;
    Ok(tape.conv2d(ha, bound.id("head.conv.w"), bound.id("head.conv.b"), 1, 1)?)
}

/// Predicted noise for a noised field; pure function of (params, xt, t).
pub fn denoise(params: &DenoiserParams, xt: &Tensor, t: usize) -> Result<Tensor> {
    let mut tape = Tape::new();
    let bound = bind(&mut tape, params, false);
    let x = tape.leaf(xt.clone());
    let out = forward_bound(&mut tape, &params.cfg, &bound, x, t)?;
    Ok(Tensor::new(tape.value(out).to_vec(), tape.shape(out)).expect("consistent output"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_cfg() -> DenoiserConfig {
        DenoiserConfig {
            in_channels: 2,
            out_channels: 2,
            base_channels: 6,
            channel_mult: vec![1, 2],
            res_blocks_per_level: 1,
            time_embed_dim: 8,
        }
    }

    #[test]
    fn embedding_t0_is_sin_zero_cos_one() {
        let e = time_embedding(0, 8).unwrap();
        for i in 0..4 {
            assert_eq!(e[i], 0.0);
            assert_eq!(e[4 + i], 1.0);
        }
    }

    #[test]
    fn embedding_dim4_matches_recomputation() {
        let e = time_embedding(1, 4).unwrap();
        let expect = [
            (1f64).sin() as f32,
            (1e-4f64).sin() as f32,
            (1f64).cos() as f32,
            (1e-4f64).cos() as f32,
        ];
        for (a, b) in e.iter().zip(&expect) {
            assert!((a - b).abs() < 1e-7, "{a} vs {b}");
        }
    }

    #[test]
    fn embedding_injective_over_horizon() {
        let mut seen = std::collections::HashSet::new();
        for t in 1..=1000usize {
            let bits: Vec<u32> = time_embedding(t, 128).unwrap().iter().map(|v| v.to_bits()).collect();
            assert!(seen.insert(bits), "duplicate embedding at t={t}");
        }
    }

    #[test]
    fn embedding_odd_dim_is_error() {
        assert!(time_embedding(5, 7).is_err());
        assert!(time_embedding(5, 0).is_err());
    }

    #[test]
    fn zero_initialized_head_gives_zero_output() {
        let cfg = tiny_cfg();
        let params = DenoiserParams::init(&cfg, 3).unwrap();
        let xt = Tensor::new(vec![0.37; 2 * 8 * 8], &[1, 2, 8, 8]).unwrap();
        let out = denoise(&params, &xt, 5).unwrap();
        assert_eq!(out.shape(), &[1, 2, 8, 8]);
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn denoise_is_deterministic() {
        let cfg = tiny_cfg();
        let mut params = DenoiserParams::init(&cfg, 3).unwrap();
        // give the head nonzero weights so the output is nontrivial
        for (name, t) in params.tensors_mut() {
            if name == "head.conv.w" {
                for (i, v) in t.data_mut().iter_mut().enumerate() {
                    *v = ((i % 7) as f32 - 3.0) * 0.05;
                }
            }
        }
        let xt = Tensor::new((0..128).map(|v| (v as f32).sin()).collect(), &[1, 2, 8, 8]).unwrap();
        let a = denoise(&params, &xt, 9).unwrap();
        let b = denoise(&params, &xt, 9).unwrap();
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn output_shape_matches_input_for_valid_configs() {
        for (cfg, h, w) in [
            (tiny_cfg(), 8, 16),
            (
                DenoiserConfig {
                    in_channels: 3,
                    out_channels: 3,
                    base_channels: 4,
                    channel_mult: vec![1, 2, 2],
                    res_blocks_per_level: 1,
                    time_embed_dim: 4,
                },
                16,
                16,
            ),
        ] {
            let params = DenoiserParams::init(&cfg, 0).unwrap();
            let xt = Tensor::zeros(&[1, cfg.in_channels, h, w]);
            let out = denoise(&params, &xt, 1).unwrap();
            assert_eq!(out.shape(), xt.shape());
        }
    }

    #[test]
    fn indivisible_spatial_dims_are_rejected() {
        let cfg = tiny_cfg(); // two levels -> dims must be even
        let params = DenoiserParams::init(&cfg, 0).unwrap();
        let xt = Tensor::zeros(&[1, 2, 7, 8]);
        assert!(denoise(&params, &xt, 1).is_err());
    }

    #[test]
    fn param_count_matches_closed_form_for_desk_default() {
        let cfg = DenoiserConfig::desk_default(8);
        let params = DenoiserParams::init(&cfg, 0).unwrap();

        // independent closed-form count for base=32, mult=(1,2,2), r=2,
        // ted=128, in=out=8
        let (c, ted, l) = (32usize, 128usize, 8usize);
        let rb = |cin: usize, cout: usize| {
            let mut n = 2 * cin; // norm1
            n += cin * cout * 9 + cout; // conv1
            n += ted * cout + cout; // emb
            n += 2 * cout; // norm2
            n += cout * cout * 9 + cout; // conv2
            if cin != cout {
                n += cin * cout + cout; // 1x1 skip
            }
            n
        };
        let mut expect = 0usize;
        expect += 2 * (ted * ted + ted); // time mlp
        expect += l * c * 9 + c; // stem
        // encoder: level0 (c,c),(c,c) + down; level1 (c,2c),(2c,2c) + down; level2 (2c,2c)x2
        expect += rb(c, c) + rb(c, c) + (c * c * 9 + c);
        expect += rb(c, 2 * c) + rb(2 * c, 2 * c) + (2 * c * 2 * c * 9 + 2 * c);
        expect += rb(2 * c, 2 * c) + rb(2 * c, 2 * c);
        // middle
        expect += 2 * rb(2 * c, 2 * c);
        // decoder level2: skips 2c,2c,2c; level1: skips 2c,2c,c; level0: skips c,c,c
        expect += rb(4 * c, 2 * c) * 3 + (2 * c * 2 * c * 9 + 2 * c);
        expect += rb(4 * c, 2 * c) * 2 + rb(3 * c, 2 * c) + (2 * c * 2 * c * 9 + 2 * c);
        expect += rb(3 * c, c) + rb(2 * c, c) * 2;
        // head
        expect += 2 * c + (c * l * 9 + l);

        assert_eq!(params.param_count(), expect);
    }

    #[test]
    fn from_entries_roundtrip_and_mismatch() {
        let cfg = tiny_cfg();
        let params = DenoiserParams::init(&cfg, 17).unwrap();
        let entries: Vec<(String, Vec<usize>, Vec<f32>)> = params
            .tensors()
            .map(|(n, t)| (n.to_string(), t.shape().to_vec(), t.data().to_vec()))
            .collect();
        let rebuilt = DenoiserParams::from_entries(&cfg, entries.clone()).unwrap();
        for ((_, a), (_, b)) in params.tensors().zip(rebuilt.tensors()) {
            assert_eq!(a.data(), b.data());
        }

        let mut missing = entries.clone();
        missing.pop();
        assert!(DenoiserParams::from_entries(&cfg, missing).is_err());

        let mut renamed = entries;
        renamed[0].0 = "bogus".into();
        assert!(DenoiserParams::from_entries(&cfg, renamed).is_err());
    }
}
