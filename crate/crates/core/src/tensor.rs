//! Dense f32 tensors with tape-based reverse-mode automatic differentiation.
//!
//! The engine is deliberately small: the only consumers are the U-Net
//! denoiser and its training loss. Operations are recorded on a
//! [`Tape`]; [`Tape::backward`] replays them in reverse, accumulating
//! gradients additively into every reachable node. A tape is
//! single-threaded; parallelism happens across independent tapes.
//!
//! Convolution uses cross-correlation semantics (no kernel flip) and is
//! lowered to GEMM through im2col. Broadcasting is limited to bias adds
//! and scalar ops; everything else requires explicit shapes.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("{op}: shape mismatch: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("{op}: invalid argument: {detail}")]
    InvalidArg { op: &'static str, detail: String },
    #[error("{op}: non-finite values in output")]
    NonFinite { op: &'static str },
    #[error("backward: loss must be scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("group_norm: {channels} channels not divisible by {groups} groups")]
    BadGroupCount { channels: usize, groups: usize },
}

pub type Result<T> = std::result::Result<T, TensorError>;

fn numel_of(shape: &[usize]) -> usize {
    shape.iter().product()
}

/// An owned dense f32 tensor. Used both for long-lived parameters and as
/// node storage inside a [`Tape`].
#[derive(Debug, Clone)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
    requires_grad: bool,
    grad: Option<Vec<f32>>,
}

impl Tensor {
    pub fn new(data: Vec<f32>, shape: &[usize]) -> Result<Self> {
        if data.len() != numel_of(shape) {
            return Err(TensorError::ShapeMismatch {
                op: "Tensor::new",
                detail: format!("data length {} vs shape {:?}", data.len(), shape),
            });
        }
        Ok(Tensor { shape: shape.to_vec(), data, requires_grad: false, grad: None })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Tensor { shape: shape.to_vec(), data: vec![0.0; numel_of(shape)], requires_grad: false, grad: None }
    }

    pub fn scalar(v: f32) -> Self {
        Tensor { shape: vec![1], data: vec![v], requires_grad: false, grad: None }
    }

    pub fn with_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn grad(&self) -> Option<&[f32]> {
        self.grad.as_deref()
    }

    fn accumulate(&mut self, g: &[f32]) {
        debug_assert_eq!(g.len(), self.data.len());
        match &mut self.grad {
            Some(buf) => {
                for (a, b) in buf.iter_mut().zip(g) {
                    *a += b;
                }
            }
            None => self.grad = Some(g.to_vec()),
        }
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TensorId(usize);

#[derive(Debug, Clone, Copy)]
struct ConvDims {
    n: usize,
    c_in: usize,
    h: usize,
    w: usize,
    c_out: usize,
    k: usize,
    pad: usize,
    stride: usize,
    h_out: usize,
    w_out: usize,
}

enum Op {
    Conv2d { x: TensorId, w: TensorId, b: TensorId, out: TensorId, dims: ConvDims },
    GroupNorm {
        x: TensorId,
        gamma: TensorId,
        beta: TensorId,
        out: TensorId,
        groups: usize,
        // saved per (n, group): mean and 1/sqrt(var + eps)
        mean: Vec<f32>,
        inv_std: Vec<f32>,
    },
    Silu { x: TensorId, out: TensorId },
    Linear { x: TensorId, w: TensorId, b: TensorId, out: TensorId, rows: usize, d_in: usize, d_out: usize },
    Add { a: TensorId, b: TensorId, out: TensorId },
    Sub { a: TensorId, b: TensorId, out: TensorId },
    Mul { a: TensorId, b: TensorId, out: TensorId },
    Scale { x: TensorId, factor: f32, out: TensorId },
    // bias shape is either [C] (broadcast over N) or [N, C]
    AddChannelBias { x: TensorId, bias: TensorId, out: TensorId, per_sample: bool },
    SumAll { x: TensorId, out: TensorId },
    MeanAll { x: TensorId, out: TensorId },
    ConcatChannels { a: TensorId, b: TensorId, out: TensorId, c_a: usize, c_b: usize, hw: usize },
    UpsampleNearest2x { x: TensorId, out: TensorId },
    Reshape { x: TensorId, out: TensorId },
}

/// Records operations during the forward pass; replays them in reverse to
/// accumulate gradients. Cleared of recorded operations by `backward`.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Tensor>,
    ops: Vec<Op>,
}

const EPS_STAB: f32 = 1e-5;

/// Row-major sgemm: c[m,n] (+)= alpha * a[m,k] @ b[k,n].
fn sgemm_rowmajor(m: usize, k: usize, n: usize, alpha: f32, a: &[f32], b: &[f32], beta: f32, c: &mut [f32]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    if m == 0 || k == 0 || n == 0 {
        return;
    }
    unsafe {
        matrixmultiply::sgemm(
            m, k, n, alpha,
            a.as_ptr(), k as isize, 1,
            b.as_ptr(), n as isize, 1,
            beta,
            c.as_mut_ptr(), n as isize, 1,
        );
    }
}

/// Like `sgemm_rowmajor` but with `a` read transposed: c[m,n] += alpha * a^T @ b
/// where the stored `a` is [k, m] row-major.
fn sgemm_at_b(m: usize, k: usize, n: usize, alpha: f32, a_t: &[f32], b: &[f32], beta: f32, c: &mut [f32]) {
    debug_assert_eq!(a_t.len(), k * m);
    if m == 0 || k == 0 || n == 0 {
        return;
    }
    unsafe {
        matrixmultiply::sgemm(
            m, k, n, alpha,
            a_t.as_ptr(), 1, m as isize,
            b.as_ptr(), n as isize, 1,
            beta,
            c.as_mut_ptr(), n as isize, 1,
        );
    }
}

/// c[m,n] += alpha * a[m,k] @ b^T where the stored `b` is [n, k] row-major.
fn sgemm_a_bt(m: usize, k: usize, n: usize, alpha: f32, a: &[f32], b_t: &[f32], beta: f32, c: &mut [f32]) {
    debug_assert_eq!(b_t.len(), n * k);
    if m == 0 || k == 0 || n == 0 {
        return;
    }
    unsafe {
        matrixmultiply::sgemm(
            m, k, n, alpha,
            a.as_ptr(), k as isize, 1,
            b_t.as_ptr(), 1, k as isize,
            beta,
            c.as_mut_ptr(), n as isize, 1,
        );
    }
}

/// For a kernel column offset `kj`, the output x-range whose source
/// column `ox * stride + kj - pad` lands inside [0, w).
fn valid_ox_range(d: &ConvDims, kj: usize) -> (usize, usize) {
    let shift = kj as isize - d.pad as isize;
    let lo = if shift >= 0 { 0 } else { ((-shift) as usize).div_ceil(d.stride) };
    // largest ox with ox*stride + shift <= w-1
    let hi_num = d.w as isize - 1 - shift;
    if hi_num < 0 {
        return (0, 0);
    }
    let hi = (hi_num as usize / d.stride + 1).min(d.w_out);
    (lo.min(hi), hi)
}

/// Gathers k×k patches of one sample into a [c*k*k, h_out*w_out] matrix.
/// Stride-1 rows are contiguous copies; other strides take a scalar path.
fn im2col(x: &[f32], d: &ConvDims, cols: &mut [f32]) {
    let hw_out = d.h_out * d.w_out;
    debug_assert_eq!(cols.len(), d.c_in * d.k * d.k * hw_out);
    for c in 0..d.c_in {
        let plane = &x[c * d.h * d.w..(c + 1) * d.h * d.w];
        for ki in 0..d.k {
            for kj in 0..d.k {
                let row = ((c * d.k + ki) * d.k + kj) * hw_out;
                let (lo, hi) = valid_ox_range(d, kj);
                let shift = kj as isize - d.pad as isize;
                for oy in 0..d.h_out {
                    let iy = (oy * d.stride + ki) as isize - d.pad as isize;
                    let dst = &mut cols[row + oy * d.w_out..row + (oy + 1) * d.w_out];
                    if iy < 0 || iy >= d.h as isize {
                        dst.fill(0.0);
                        continue;
                    }
                    let src_row = &plane[iy as usize * d.w..(iy as usize + 1) * d.w];
                    dst[..lo].fill(0.0);
                    dst[hi..].fill(0.0);
                    if lo >= hi {
                        continue;
                    }
                    if d.stride == 1 {
                        let start = (lo as isize + shift) as usize;
                        dst[lo..hi].copy_from_slice(&src_row[start..start + (hi - lo)]);
                    } else {
                        for (ox, slot) in dst[lo..hi].iter_mut().enumerate() {
                            let ix = ((lo + ox) * d.stride) as isize + shift;
                            *slot = src_row[ix as usize];
                        }
                    }
                }
            }
        }
    }
}

/// Scatter-add of a column matrix back onto one input sample.
fn col2im(cols: &[f32], d: &ConvDims, dx: &mut [f32]) {
    let hw_out = d.h_out * d.w_out;
    for c in 0..d.c_in {
        let plane = &mut dx[c * d.h * d.w..(c + 1) * d.h * d.w];
        for ki in 0..d.k {
            for kj in 0..d.k {
                let row = ((c * d.k + ki) * d.k + kj) * hw_out;
                let (lo, hi) = valid_ox_range(d, kj);
                let shift = kj as isize - d.pad as isize;
                if lo >= hi {
                    continue;
                }
                for oy in 0..d.h_out {
                    let iy = (oy * d.stride + ki) as isize - d.pad as isize;
                    if iy < 0 || iy >= d.h as isize {
                        continue;
                    }
                    let src = &cols[row + oy * d.w_out..row + (oy + 1) * d.w_out];
                    let dst_row = &mut plane[iy as usize * d.w..(iy as usize + 1) * d.w];
                    if d.stride == 1 {
                        let start = (lo as isize + shift) as usize;
                        for (a, &v) in dst_row[start..start + (hi - lo)].iter_mut().zip(&src[lo..hi]) {
                            *a += v;
                        }
                    } else {
                        for (ox, &v) in src[lo..hi].iter().enumerate() {
                            let ix = ((lo + ox) * d.stride) as isize + shift;
                            dst_row[ix as usize] += v;
                        }
                    }
                }
            }
        }
    }
}

fn sigmoid(x: f32) -> f32 {
    1.0 / (1.0 + (-x).exp())
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn op_count(&self) -> usize {
        self.ops.len()
    }

    /// Adds an owned tensor as a leaf node.
    pub fn leaf(&mut self, t: Tensor) -> TensorId {
        let id = TensorId(self.nodes.len());
        self.nodes.push(t);
        id
    }

    /// Adds a non-differentiable leaf from raw data.
    pub fn constant(&mut self, data: Vec<f32>, shape: &[usize]) -> Result<TensorId> {
        Ok(self.leaf(Tensor::new(data, shape)?))
    }

    /// Adds a differentiable leaf from raw data.
    pub fn variable(&mut self, data: Vec<f32>, shape: &[usize]) -> Result<TensorId> {
        Ok(self.leaf(Tensor::new(data, shape)?.with_grad()))
    }

    pub fn shape(&self, id: TensorId) -> &[usize] {
        &self.nodes[id.0].shape
    }

    pub fn value(&self, id: TensorId) -> &[f32] {
        &self.nodes[id.0].data
    }

    pub fn grad(&self, id: TensorId) -> Option<&[f32]> {
        self.nodes[id.0].grad.as_deref()
    }

    pub fn requires_grad(&self, id: TensorId) -> bool {
        self.nodes[id.0].requires_grad
    }

    fn push_output(&mut self, data: Vec<f32>, shape: Vec<usize>, requires_grad: bool, op: &'static str) -> Result<TensorId> {
        if data.iter().any(|v| !v.is_finite()) {
            return Err(TensorError::NonFinite { op });
        }
        let id = TensorId(self.nodes.len());
        self.nodes.push(Tensor { shape, data, requires_grad, grad: None });
        Ok(id)
    }

    fn any_grad(&self, ids: &[TensorId]) -> bool {
        ids.iter().any(|id| self.nodes[id.0].requires_grad)
    }

    /// 2D cross-correlation with square odd kernel.
    /// x: [N,C,H,W], w: [O,C,k,k], b: [O] -> [N,O,H',W'].
    pub fn conv2d(&mut self, x: TensorId, w: TensorId, b: TensorId, pad: usize, stride: usize) -> Result<TensorId> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        let bs = self.shape(b).to_vec();
        if xs.len() != 4 || ws.len() != 4 || bs.len() != 1 {
            return Err(TensorError::ShapeMismatch {
                op: "conv2d",
                detail: format!("x {:?}, w {:?}, b {:?}", xs, ws, bs),
            });
        }
        let (n, c_in, h, wdt) = (xs[0], xs[1], xs[2], xs[3]);
        let (c_out, wc, k, k2) = (ws[0], ws[1], ws[2], ws[3]);
        if wc != c_in || k != k2 || bs[0] != c_out {
            return Err(TensorError::ShapeMismatch {
                op: "conv2d",
                detail: format!("x {:?}, w {:?}, b {:?}", xs, ws, bs),
            });
        }
        if k % 2 == 0 || stride == 0 {
            return Err(TensorError::InvalidArg {
                op: "conv2d",
                detail: format!("kernel {} must be odd, stride {} >= 1", k, stride),
            });
        }
        if h + 2 * pad < k || wdt + 2 * pad < k {
            return Err(TensorError::InvalidArg {
                op: "conv2d",
                detail: format!("spatial {}x{} too small for kernel {} pad {}", h, wdt, k, pad),
            });
        }
        let h_out = (h + 2 * pad - k) / stride + 1;
        let w_out = (wdt + 2 * pad - k) / stride + 1;
        let dims = ConvDims { n, c_in, h, w: wdt, c_out, k, pad, stride, h_out, w_out };

        let hw_out = h_out * w_out;
        let kk = c_in * k * k;
        let mut out = vec![0.0f32; n * c_out * hw_out];
        let mut cols = vec![0.0f32; kk * hw_out];
        let (xv, wv, bv) = (
            &self.nodes[x.0].data,
            &self.nodes[w.0].data,
            &self.nodes[b.0].data,
        );
        for s in 0..n {
            im2col(&xv[s * c_in * h * wdt..(s + 1) * c_in * h * wdt], &dims, &mut cols);
            let out_s = &mut out[s * c_out * hw_out..(s + 1) * c_out * hw_out];
            sgemm_rowmajor(c_out, kk, hw_out, 1.0, wv, &cols, 0.0, out_s);
            for (o, row) in out_s.chunks_exact_mut(hw_out).enumerate() {
                let bias = bv[o];
                for v in row {
                    *v += bias;
                }
            }
        }
        let rg = self.any_grad(&[x, w, b]);
        let id = self.push_output(out, vec![n, c_out, h_out, w_out], rg, "conv2d")?;
        if rg {
            self.ops.push(Op::Conv2d { x, w, b, out: id, dims });
        }
        Ok(id)
    }

    /// Per-(sample, group) normalization with learned channel affine.
    /// x: [N,C,H,W], gamma/beta: [C].
    pub fn group_norm(&mut self, x: TensorId, groups: usize, gamma: TensorId, beta: TensorId) -> Result<TensorId> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 4 {
            return Err(TensorError::ShapeMismatch {
                op: "group_norm",
                detail: format!("expected rank-4 input, got {:?}", xs),
            });
        }
        let (n, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        if groups == 0 || c % groups != 0 {
            return Err(TensorError::BadGroupCount { channels: c, groups });
        }
        if self.shape(gamma) != [c] || self.shape(beta) != [c] {
            return Err(TensorError::ShapeMismatch {
                op: "group_norm",
                detail: format!("gamma {:?} beta {:?} for {} channels", self.shape(gamma), self.shape(beta), c),
            });
        }
        let cg = c / groups;
        let m = cg * h * w;
        let mut out = vec![0.0f32; n * c * h * w];
        let mut means = vec![0.0f32; n * groups];
        let mut inv_stds = vec![0.0f32; n * groups];
        let xv = &self.nodes[x.0].data;
        let gv = &self.nodes[gamma.0].data;
        let bv = &self.nodes[beta.0].data;
        for s in 0..n {
            for g in 0..groups {
                let base = s * c * h * w + g * cg * h * w;
                let slab = &xv[base..base + m];
                let mean = slab.iter().map(|&v| v as f64).sum::<f64>() / m as f64;
                let var = slab.iter().map(|&v| (v as f64 - mean) * (v as f64 - mean)).sum::<f64>() / m as f64;
                let inv_std = 1.0 / (var + EPS_STAB as f64).sqrt();
                means[s * groups + g] = mean as f32;
                inv_stds[s * groups + g] = inv_std as f32;
                for cc in 0..cg {
                    let ch = g * cg + cc;
                    let (ga, be) = (gv[ch], bv[ch]);
                    let off = base + cc * h * w;
                    for i in 0..h * w {
                        let y = (xv[off + i] - mean as f32) * inv_std as f32;
                        out[off + i] = ga * y + be;
                    }
                }
            }
        }
        let rg = self.any_grad(&[x, gamma, beta]);
        let id = self.push_output(out, xs, rg, "group_norm")?;
        if rg {
            self.ops.push(Op::GroupNorm { x, gamma, beta, out: id, groups, mean: means, inv_std: inv_stds });
        }
        Ok(id)
    }

    /// x * sigmoid(x), elementwise.
    pub fn silu(&mut self, x: TensorId) -> Result<TensorId> {
        let out: Vec<f32> = self.nodes[x.0].data.iter().map(|&v| v * sigmoid(v)).collect();
        let shape = self.nodes[x.0].shape.clone();
        let rg = self.nodes[x.0].requires_grad;
        let id = self.push_output(out, shape, rg, "silu")?;
        if rg {
            self.ops.push(Op::Silu { x, out: id });
        }
        Ok(id)
    }

    /// x: [rows, d_in], w: [d_out, d_in], b: [d_out] -> [rows, d_out].
    pub fn linear(&mut self, x: TensorId, w: TensorId, b: TensorId) -> Result<TensorId> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        let bs = self.shape(b).to_vec();
        if xs.len() != 2 || ws.len() != 2 || bs.len() != 1 || xs[1] != ws[1] || ws[0] != bs[0] {
            return Err(TensorError::ShapeMismatch {
                op: "linear",
                detail: format!("x {:?}, w {:?}, b {:?}", xs, ws, bs),
            });
        }
        let (rows, d_in, d_out) = (xs[0], xs[1], ws[0]);
        let mut out = vec![0.0f32; rows * d_out];
        sgemm_a_bt(rows, d_in, d_out, 1.0, &self.nodes[x.0].data, &self.nodes[w.0].data, 0.0, &mut out);
        for row in out.chunks_exact_mut(d_out) {
            for (v, bv) in row.iter_mut().zip(&self.nodes[b.0].data) {
                *v += bv;
            }
        }
        let rg = self.any_grad(&[x, w, b]);
        let id = self.push_output(out, vec![rows, d_out], rg, "linear")?;
        if rg {
            self.ops.push(Op::Linear { x, w, b, out: id, rows, d_in, d_out });
        }
        Ok(id)
    }

    fn elementwise_binary(
        &mut self,
        a: TensorId,
        b: TensorId,
        op: &'static str,
        f: impl Fn(f32, f32) -> f32,
    ) -> Result<(Vec<f32>, Vec<usize>, bool)> {
        if self.shape(a) != self.shape(b) {
            return Err(TensorError::ShapeMismatch {
                op,
                detail: format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            });
        }
        let out: Vec<f32> = self.nodes[a.0]
            .data
            .iter()
            .zip(&self.nodes[b.0].data)
            .map(|(&x, &y)| f(x, y))
            .collect();
        Ok((out, self.nodes[a.0].shape.clone(), self.any_grad(&[a, b])))
    }

    pub fn add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (out, shape, rg) = self.elementwise_binary(a, b, "add", |x, y| x + y)?;
        let id = self.push_output(out, shape, rg, "add")?;
        if rg {
            self.ops.push(Op::Add { a, b, out: id });
        }
        Ok(id)
    }

    pub fn sub(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (out, shape, rg) = self.elementwise_binary(a, b, "sub", |x, y| x - y)?;
        let id = self.push_output(out, shape, rg, "sub")?;
        if rg {
            self.ops.push(Op::Sub { a, b, out: id });
        }
        Ok(id)
    }

    pub fn mul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (out, shape, rg) = self.elementwise_binary(a, b, "mul", |x, y| x * y)?;
        let id = self.push_output(out, shape, rg, "mul")?;
        if rg {
            self.ops.push(Op::Mul { a, b, out: id });
        }
        Ok(id)
    }

    pub fn scale(&mut self, x: TensorId, factor: f32) -> Result<TensorId> {
        let out: Vec<f32> = self.nodes[x.0].data.iter().map(|&v| v * factor).collect();
        let shape = self.nodes[x.0].shape.clone();
        let rg = self.nodes[x.0].requires_grad;
        let id = self.push_output(out, shape, rg, "scale")?;
        if rg {
            self.ops.push(Op::Scale { x, factor, out: id });
        }
        Ok(id)
    }

    /// x: [N,C,H,W] plus a channel bias of shape [C] or [N,C].
    pub fn add_channel_bias(&mut self, x: TensorId, bias: TensorId) -> Result<TensorId> {
        let xs = self.shape(x).to_vec();
        let bs = self.shape(bias).to_vec();
        if xs.len() != 4 {
            return Err(TensorError::ShapeMismatch {
                op: "add_channel_bias",
                detail: format!("expected rank-4 input, got {:?}", xs),
            });
        }
        let (n, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        let per_sample = match bs.as_slice() {
            [ch] if *ch == c => false,
            [bn, ch] if *bn == n && *ch == c => true,
            _ => {
                return Err(TensorError::ShapeMismatch {
                    op: "add_channel_bias",
                    detail: format!("bias {:?} for input {:?}", bs, xs),
                })
            }
        };
        let hw = h * w;
        let mut out = self.nodes[x.0].data.clone();
        let bv = &self.nodes[bias.0].data;
        for s in 0..n {
            for ch in 0..c {
                let bval = if per_sample { bv[s * c + ch] } else { bv[ch] };
                let off = (s * c + ch) * hw;
                for v in &mut out[off..off + hw] {
                    *v += bval;
                }
            }
        }
        let rg = self.any_grad(&[x, bias]);
        let id = self.push_output(out, xs, rg, "add_channel_bias")?;
        if rg {
            self.ops.push(Op::AddChannelBias { x, bias, out: id, per_sample });
        }
        Ok(id)
    }

    pub fn sum_all(&mut self, x: TensorId) -> Result<TensorId> {
        let s: f64 = self.nodes[x.0].data.iter().map(|&v| v as f64).sum();
        let rg = self.nodes[x.0].requires_grad;
        let id = self.push_output(vec![s as f32], vec![1], rg, "sum")?;
        if rg {
            self.ops.push(Op::SumAll { x, out: id });
        }
        Ok(id)
    }

    pub fn mean_all(&mut self, x: TensorId) -> Result<TensorId> {
        let n = self.nodes[x.0].data.len();
        if n == 0 {
            return Err(TensorError::InvalidArg { op: "mean", detail: "empty tensor".into() });
        }
        let s: f64 = self.nodes[x.0].data.iter().map(|&v| v as f64).sum();
        let rg = self.nodes[x.0].requires_grad;
        let id = self.push_output(vec![(s / n as f64) as f32], vec![1], rg, "mean")?;
        if rg {
            self.ops.push(Op::MeanAll { x, out: id });
        }
        Ok(id)
    }

    /// Concatenates two [N,C,H,W] tensors along the channel axis.
    pub fn concat_channels(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        if sa.len() != 4 || sb.len() != 4 || sa[0] != sb[0] || sa[2] != sb[2] || sa[3] != sb[3] {
            return Err(TensorError::ShapeMismatch {
                op: "concat_channels",
                detail: format!("{:?} vs {:?}", sa, sb),
            });
        }
        let (n, c_a, c_b, hw) = (sa[0], sa[1], sb[1], sa[2] * sa[3]);
        let mut out = Vec::with_capacity(n * (c_a + c_b) * hw);
        let av = &self.nodes[a.0].data;
        let bv = &self.nodes[b.0].data;
        for s in 0..n {
            out.extend_from_slice(&av[s * c_a * hw..(s + 1) * c_a * hw]);
            out.extend_from_slice(&bv[s * c_b * hw..(s + 1) * c_b * hw]);
        }
        let rg = self.any_grad(&[a, b]);
        let id = self.push_output(out, vec![n, c_a + c_b, sa[2], sa[3]], rg, "concat_channels")?;
        if rg {
            self.ops.push(Op::ConcatChannels { a, b, out: id, c_a, c_b, hw });
        }
        Ok(id)
    }

    /// Same data, new shape; element count must match.
    pub fn reshape(&mut self, x: TensorId, shape: &[usize]) -> Result<TensorId> {
        if numel_of(shape) != self.nodes[x.0].data.len() {
            return Err(TensorError::ShapeMismatch {
                op: "reshape",
                detail: format!("{:?} -> {:?}", self.nodes[x.0].shape, shape),
            });
        }
        let data = self.nodes[x.0].data.clone();
        let rg = self.nodes[x.0].requires_grad;
        let id = self.push_output(data, shape.to_vec(), rg, "reshape")?;
        if rg {
            self.ops.push(Op::Reshape { x, out: id });
        }
        Ok(id)
    }

    /// Nearest-neighbor 2x spatial upsampling of [N,C,H,W].
    pub fn upsample_nearest_2x(&mut self, x: TensorId) -> Result<TensorId> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 4 {
            return Err(TensorError::ShapeMismatch {
                op: "upsample_nearest_2x",
                detail: format!("expected rank-4 input, got {:?}", xs),
            });
        }
        let (n, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        let mut out = vec![0.0f32; n * c * 4 * h * w];
        let xv = &self.nodes[x.0].data;
        for plane in 0..n * c {
            let src = &xv[plane * h * w..(plane + 1) * h * w];
            let dst = &mut out[plane * 4 * h * w..(plane + 1) * 4 * h * w];
            for y in 0..h {
                for x_ in 0..w {
                    let v = src[y * w + x_];
                    let base = 2 * y * 2 * w + 2 * x_;
                    dst[base] = v;
                    dst[base + 1] = v;
                    dst[base + 2 * w] = v;
                    dst[base + 2 * w + 1] = v;
                }
            }
        }
        let rg = self.nodes[x.0].requires_grad;
        let id = self.push_output(out, vec![n, c, 2 * h, 2 * w], rg, "upsample_nearest_2x")?;
        if rg {
            self.ops.push(Op::UpsampleNearest2x { x, out: id });
        }
        Ok(id)
    }

    fn grad_of(&self, id: TensorId) -> Option<Vec<f32>> {
        self.nodes[id.0].grad.clone()
    }

    fn accumulate_into(&mut self, id: TensorId, g: &[f32]) {
        self.nodes[id.0].accumulate(g);
    }

    /// Reverse replay from a scalar loss. Gradients accumulate additively
    /// into every node reachable from `loss`; recorded operations are
    /// cleared afterwards so the tape can be reused or dropped.
    pub fn backward(&mut self, loss: TensorId) -> Result<()> {
        if self.shape(loss) != [1] {
            return Err(TensorError::NonScalarLoss(self.shape(loss).to_vec()));
        }
        if self.ops.is_empty() {
            return Err(TensorError::InvalidArg { op: "backward", detail: "tape is empty".into() });
        }
        self.nodes[loss.0].grad = Some(vec![1.0]);
        let ops = std::mem::take(&mut self.ops);
        for op in ops.iter().rev() {
            self.backward_op(op);
        }
        Ok(())
    }

    fn backward_op(&mut self, op: &Op) {
        match op {
            Op::Conv2d { x, w, b, out, dims } => {
                let Some(dy) = self.grad_of(*out) else { return };
                let d = *dims;
                let hw_out = d.h_out * d.w_out;
                let kk = d.c_in * d.k * d.k;
                let mut dw = vec![0.0f32; d.c_out * kk];
                let mut db = vec![0.0f32; d.c_out];
                let mut dx = vec![0.0f32; d.n * d.c_in * d.h * d.w];
                {
                    let mut cols = vec![0.0f32; kk * hw_out];
                    let mut dcols = vec![0.0f32; kk * hw_out];
                    let xv = &self.nodes[x.0].data;
                    let wv = &self.nodes[w.0].data;
                    for s in 0..d.n {
                        let dy_s = &dy[s * d.c_out * hw_out..(s + 1) * d.c_out * hw_out];
                        // dW += dY @ cols^T
                        im2col(&xv[s * d.c_in * d.h * d.w..(s + 1) * d.c_in * d.h * d.w], &d, &mut cols);
                        sgemm_a_bt(d.c_out, hw_out, kk, 1.0, dy_s, &cols, 1.0, &mut dw);
                        // db += row sums of dY
                        for (o, row) in dy_s.chunks_exact(hw_out).enumerate() {
                            db[o] += row.iter().sum::<f32>();
                        }
                        // dX = col2im(W^T @ dY)
                        sgemm_at_b(kk, d.c_out, hw_out, 1.0, wv, dy_s, 0.0, &mut dcols);
                        col2im(&dcols, &d, &mut dx[s * d.c_in * d.h * d.w..(s + 1) * d.c_in * d.h * d.w]);
                    }
                }
                self.accumulate_into(*x, &dx);
                self.accumulate_into(*w, &dw);
                self.accumulate_into(*b, &db);
            }
            Op::GroupNorm { x, gamma, beta, out, groups, mean, inv_std } => {
                let Some(dy) = self.grad_of(*out) else { return };
                let xs = self.nodes[x.0].shape.clone();
                let (n, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
                let cg = c / groups;
                let m = cg * h * w;
                let hw = h * w;
                let mut dx = vec![0.0f32; self.nodes[x.0].data.len()];
                let mut dgamma = vec![0.0f32; c];
                let mut dbeta = vec![0.0f32; c];
                let xv = &self.nodes[x.0].data;
                let gv = &self.nodes[gamma.0].data;
                for s in 0..n {
                    for g in 0..*groups {
                        let mu = mean[s * groups + g];
                        let is = inv_std[s * groups + g];
                        let base = s * c * hw + g * cg * hw;
                        // first pass: group means of gamma*dy and gamma*dy*yhat
                        let mut sum_dyg = 0.0f64;
                        let mut sum_dyg_y = 0.0f64;
                        for cc in 0..cg {
                            let ch = g * cg + cc;
                            let off = base + cc * hw;
                            let ga = gv[ch];
                            for i in 0..hw {
                                let yhat = (xv[off + i] - mu) * is;
                                let dyg = dy[off + i] * ga;
                                sum_dyg += dyg as f64;
                                sum_dyg_y += (dyg * yhat) as f64;
                                dgamma[ch] += dy[off + i] * yhat;
                                dbeta[ch] += dy[off + i];
                            }
                        }
                        let mean_dyg = (sum_dyg / m as f64) as f32;
                        let mean_dyg_y = (sum_dyg_y / m as f64) as f32;
                        for cc in 0..cg {
                            let ch = g * cg + cc;
                            let off = base + cc * hw;
                            let ga = gv[ch];
                            for i in 0..hw {
                                let yhat = (xv[off + i] - mu) * is;
                                let dyg = dy[off + i] * ga;
                                dx[off + i] = is * (dyg - mean_dyg - yhat * mean_dyg_y);
                            }
                        }
                    }
                }
                self.accumulate_into(*x, &dx);
                self.accumulate_into(*gamma, &dgamma);
                self.accumulate_into(*beta, &dbeta);
            }
            Op::Silu { x, out } => {
                let Some(dy) = self.grad_of(*out) else { return };
                let xv = &self.nodes[x.0].data;
                let dx: Vec<f32> = dy
                    .iter()
                    .zip(xv)
                    .map(|(&d, &v)| {
                        let s = sigmoid(v);
                        d * (s + v * s * (1.0 - s))
                    })
                    .collect();
                self.accumulate_into(*x, &dx);
            }
            Op::Linear { x, w, b, out, rows, d_in, d_out } => {
                let Some(dy) = self.grad_of(*out) else { return };
                let (rows, d_in, d_out) = (*rows, *d_in, *d_out);
                let xv = &self.nodes[x.0].data;
                let wv = &self.nodes[w.0].data;
                // dX = dY @ W
                let mut dx = vec![0.0f32; rows * d_in];
                sgemm_rowmajor(rows, d_out, d_in, 1.0, &dy, wv, 0.0, &mut dx);
                // dW = dY^T @ X
                let mut dw = vec![0.0f32; d_out * d_in];
                sgemm_at_b(d_out, rows, d_in, 1.0, &dy, xv, 0.0, &mut dw);
                let mut db = vec![0.0f32; d_out];
                for row in dy.chunks_exact(d_out) {
                    for (acc, &v) in db.iter_mut().zip(row) {
                        *acc += v;
                    }
                }
                self.accumulate_into(*x, &dx);
                self.accumulate_into(*w, &dw);
                self.accumulate_into(*b, &db);
            }
            Op::Add { a, b, out } => {
                let Some(dy) = self.grad_of(*out) else { return };
                self.accumulate_into(*a, &dy);
                self.accumulate_into(*b, &dy);
            }
            Op::Sub { a, b, out } => {
                let Some(dy) = self.grad_of(*out) else { return };
                self.accumulate_into(*a, &dy);
                let neg: Vec<f32> = dy.iter().map(|&v| -v).collect();
                self.accumulate_into(*b, &neg);
            }
            Op::Mul { a, b, out } => {
                let Some(dy) = self.grad_of(*out) else { return };
                let da: Vec<f32> = dy.iter().zip(&self.nodes[b.0].data).map(|(&d, &v)| d * v).collect();
                let db: Vec<f32> = dy.iter().zip(&self.nodes[a.0].data).map(|(&d, &v)| d * v).collect();
                self.accumulate_into(*a, &da);
                self.accumulate_into(*b, &db);
            }
            Op::Scale { x, factor, out } => {
                let Some(dy) = self.grad_of(*out) else { return };
                let dx: Vec<f32> = dy.iter().map(|&v| v * factor).collect();
                self.accumulate_into(*x, &dx);
            }
            Op::AddChannelBias { x, bias, out, per_sample } => {
                let Some(dy) = self.grad_of(*out) else { return };
                self.accumulate_into(*x, &dy);
                let xs = self.nodes[x.0].shape.clone();
                let (n, c, hw) = (xs[0], xs[1], xs[2] * xs[3]);
                let blen = if *per_sample { n * c } else { c };
                let mut db = vec![0.0f32; blen];
                for s in 0..n {
                    for ch in 0..c {
                        let off = (s * c + ch) * hw;
                        let sum: f32 = dy[off..off + hw].iter().sum();
                        if *per_sample {
                            db[s * c + ch] += sum;
                        } else {
                            db[ch] += sum;
                        }
                    }
                }
                self.accumulate_into(*bias, &db);
            }
            Op::SumAll { x, out } => {
                let Some(dy) = self.grad_of(*out) else { return };
                let dx = vec![dy[0]; self.nodes[x.0].data.len()];
                self.accumulate_into(*x, &dx);
            }
            Op::MeanAll { x, out } => {
                let Some(dy) = self.grad_of(*out) else { return };
                let n = self.nodes[x.0].data.len();
                let dx = vec![dy[0] / n as f32; n];
                self.accumulate_into(*x, &dx);
            }
            Op::ConcatChannels { a, b, out, c_a, c_b, hw } => {
                let Some(dy) = self.grad_of(*out) else { return };
                let n = self.nodes[a.0].shape[0];
                let mut da = vec![0.0f32; n * c_a * hw];
                let mut db = vec![0.0f32; n * c_b * hw];
                let stride = (c_a + c_b) * hw;
                for s in 0..n {
                    da[s * c_a * hw..(s + 1) * c_a * hw]
                        .copy_from_slice(&dy[s * stride..s * stride + c_a * hw]);
                    db[s * c_b * hw..(s + 1) * c_b * hw]
                        .copy_from_slice(&dy[s * stride + c_a * hw..(s + 1) * stride]);
                }
                self.accumulate_into(*a, &da);
                self.accumulate_into(*b, &db);
            }
            Op::Reshape { x, out } => {
                let Some(dy) = self.grad_of(*out) else { return };
                self.accumulate_into(*x, &dy);
            }
            Op::UpsampleNearest2x { x, out } => {
                let Some(dy) = self.grad_of(*out) else { return };
                let xs = self.nodes[x.0].shape.clone();
                let (n, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
                let mut dx = vec![0.0f32; n * c * h * w];
                for plane in 0..n * c {
                    let src = &dy[plane * 4 * h * w..(plane + 1) * 4 * h * w];
                    let dst = &mut dx[plane * h * w..(plane + 1) * h * w];
                    for y in 0..h {
                        for x_ in 0..w {
                            let base = 2 * y * 2 * w + 2 * x_;
                            dst[y * w + x_] =
                                src[base] + src[base + 1] + src[base + 2 * w] + src[base + 2 * w + 1];
                        }
                    }
                }
                self.accumulate_into(*x, &dx);
            }
        }
    }
}
