//! Convolutional energy network mapping a six-channel stack to a scalar.
//!
//! Architecture: C1(6→128) → C2(128→128) → pool → C3(128→128) → pool →
//! C4(128→256) → global max → FC256 → FC256 → linear output. All convolutions
//! are 3×3, stride 1, zero-padded to preserve size; every hidden layer uses
//! tanh. Parameters are stored in `f32`; all arithmetic runs in `f64`.

use std::io::Write;
use std::path::Path;

use rand::Rng;

use crate::error::{ContractError, IoError};
use crate::observation::{ChannelStack, CHANNELS};
use crate::render::{MAX_RENDER_SIZE, MIN_WINDOW};

pub const KERNEL: usize = 3;
/// Initial output-layer weights are multiplied by this factor.
pub const OUTPUT_INIT_SCALE: f64 = 1000.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    /// `out × in × 3 × 3` kernels.
    Conv { outputs: usize, inputs: usize },
    /// `out × in` matrix.
    Dense { outputs: usize, inputs: usize },
}

impl LayerKind {
    pub fn outputs(&self) -> usize {
        match *self {
            LayerKind::Conv { outputs, .. } | LayerKind::Dense { outputs, .. } => outputs,
        }
    }

    pub fn fan_in(&self) -> usize {
        match *self {
            LayerKind::Conv { inputs, .. } => inputs * KERNEL * KERNEL,
            LayerKind::Dense { inputs, .. } => inputs,
        }
    }

    pub fn weight_count(&self) -> usize {
        self.outputs() * self.fan_in()
    }
}

/// The fixed layer sequence.
pub const ARCHITECTURE: [LayerKind; 7] = [
    LayerKind::Conv { outputs: 128, inputs: CHANNELS },
    LayerKind::Conv { outputs: 128, inputs: 128 },
    LayerKind::Conv { outputs: 128, inputs: 128 },
    LayerKind::Conv { outputs: 256, inputs: 128 },
    LayerKind::Dense { outputs: 256, inputs: 256 },
    LayerKind::Dense { outputs: 256, inputs: 256 },
    LayerKind::Dense { outputs: 1, inputs: 256 },
];

/// Indices into [`ARCHITECTURE`].
pub mod layer {
    pub const CONV1: usize = 0;
    pub const CONV2: usize = 1;
    pub const CONV3: usize = 2;
    pub const CONV4: usize = 3;
    pub const FC1: usize = 4;
    pub const FC2: usize = 5;
    pub const OUTPUT: usize = 6;
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub kind: LayerKind,
    /// Row-major: output index outermost; conv kernels as `[out][in][ky][kx]`.
    pub weights: Vec<f32>,
    pub bias: Vec<f32>,
}

impl LayerParams {
    fn zeros(kind: LayerKind) -> Self {
        Self {
            kind,
            weights: vec![0.0; kind.weight_count()],
            bias: vec![0.0; kind.outputs()],
        }
    }
}

/// All weights and biases of the network.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergyNetParams {
    pub layers: Vec<LayerParams>,
}

/// Addresses a single scalar parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamIndex {
    pub layer: usize,
    pub bias: bool,
    pub index: usize,
}

impl EnergyNetParams {
    pub fn zeros() -> Self {
        Self {
            layers: ARCHITECTURE.iter().map(|&k| LayerParams::zeros(k)).collect(),
        }
    }

    pub fn scalar_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    pub fn get(&self, p: ParamIndex) -> f32 {
        let l = &self.layers[p.layer];
        if p.bias {
            l.bias[p.index]
        } else {
            l.weights[p.index]
        }
    }

    pub fn set(&mut self, p: ParamIndex, v: f32) {
        let l = &mut self.layers[p.layer];
        if p.bias {
            l.bias[p.index] = v;
        } else {
            l.weights[p.index] = v;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.bias).all(|v| v.is_finite()))
    }

    /// `θ ← θ − step · g`, rounded to `f32`.
    pub fn apply_gradient(&mut self, grad: &ParamGradient, step: f64) {
        for (l, g) in self.layers.iter_mut().zip(&grad.layers) {
            for (w, d) in l.weights.iter_mut().zip(&g.weights) {
                *w = (*w as f64 - step * d) as f32;
            }
            for (b, d) in l.bias.iter_mut().zip(&g.bias) {
                *b = (*b as f64 - step * d) as f32;
            }
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), IoError> {
        let bytes = self.to_bytes();
        let mut f = std::fs::File::create(path).map_err(|e| IoError::io(path, e))?;
        f.write_all(&bytes).map_err(|e| IoError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self, IoError> {
        let bytes = std::fs::read(path).map_err(|e| IoError::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// `ENET`, version, layer count, per layer (kind tag, dims, weights,
    /// biases), CRC32 of everything before it. Little-endian throughout.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + 4 * self.scalar_count() + 64 * self.layers.len());
        out.extend_from_slice(WEIGHT_MAGIC);
        out.extend_from_slice(&WEIGHT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.layers.len() as u32).to_le_bytes());
        for l in &self.layers {
            let dims: Vec<u32> = match l.kind {
                LayerKind::Conv { outputs, inputs } => {
                    vec![outputs as u32, inputs as u32, KERNEL as u32, KERNEL as u32]
                }
                LayerKind::Dense { outputs, inputs } => vec![outputs as u32, inputs as u32],
            };
            let tag: u32 = match l.kind {
                LayerKind::Conv { .. } => TAG_CONV,
                LayerKind::Dense { .. } => TAG_DENSE,
            };
            out.extend_from_slice(&tag.to_le_bytes());
            out.extend_from_slice(&(dims.len() as u32).to_le_bytes());
            for d in dims {
                out.extend_from_slice(&d.to_le_bytes());
            }
            for v in l.weights.iter().chain(&l.bias) {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, IoError> {
        let corrupt = |m: &str| IoError::CorruptModel(m.to_string());
        if bytes.len() < 16 {
            return Err(corrupt("file too short"));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        let mut r = ByteReader { data: body, pos: 0 };
        if r.take(4).ok_or_else(|| corrupt("file too short"))? != WEIGHT_MAGIC {
            return Err(corrupt("bad magic"));
        }
        let version = r.u32().ok_or_else(|| corrupt("truncated header"))?;
        if version != WEIGHT_VERSION {
            return Err(corrupt(&format!("unsupported version {version}")));
        }
        let count = r.u32().ok_or_else(|| corrupt("truncated header"))? as usize;
        if count != ARCHITECTURE.len() {
            return Err(corrupt(&format!("expected {} layers, found {count}", ARCHITECTURE.len())));
        }
        let mut layers = Vec::with_capacity(count);
        for (i, expected) in ARCHITECTURE.iter().enumerate() {
            let truncated = || corrupt(&format!("layer {i} truncated"));
            let tag = r.u32().ok_or_else(truncated)?;
            let ndims = r.u32().ok_or_else(truncated)? as usize;
            if ndims > 8 {
                return Err(corrupt(&format!("layer {i}: implausible rank {ndims}")));
            }
            let dims: Vec<usize> = (0..ndims)
                .map(|_| r.u32().map(|d| d as usize))
                .collect::<Option<_>>()
                .ok_or_else(truncated)?;
            let kind = match (tag, dims.as_slice()) {
                (TAG_CONV, &[o, inp, KERNEL, KERNEL]) => LayerKind::Conv { outputs: o, inputs: inp },
                (TAG_DENSE, &[o, inp]) => LayerKind::Dense { outputs: o, inputs: inp },
                _ => return Err(corrupt(&format!("layer {i}: bad kind tag {tag} or shape {dims:?}"))),
            };
            if kind != *expected {
                return Err(corrupt(&format!(
                    "layer {i}: shape {kind:?} does not match {expected:?}"
                )));
            }
            let mut read = |n: usize| -> Result<Vec<f32>, IoError> {
                (0..n).map(|_| r.f32().ok_or_else(truncated)).collect()
            };
            let weights = read(kind.weight_count())?;
            let bias = read(kind.outputs())?;
            layers.push(LayerParams { kind, weights, bias });
        }
        if r.pos != body.len() {
            return Err(corrupt("trailing bytes before checksum"));
        }
        let stored = u32::from_le_bytes(tail.try_into().expect("4-byte tail"));
        if stored != crc32fast::hash(body) {
            return Err(corrupt("checksum mismatch"));
        }
        Ok(Self { layers })
    }
}

const WEIGHT_MAGIC: &[u8; 4] = b"ENET";
const WEIGHT_VERSION: u32 = 1;
const TAG_CONV: u32 = 1;
const TAG_DENSE: u32 = 2;

struct ByteReader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let s = self.data.get(self.pos..self.pos + n)?;
        self.pos += n;
        Some(s)
    }

    fn u32(&mut self) -> Option<u32> {
        self.take(4).map(|b| u32::from_le_bytes(b.try_into().unwrap()))
    }

    fn f32(&mut self) -> Option<f32> {
        self.take(4).map(|b| f32::from_le_bytes(b.try_into().unwrap()))
    }
}

/// Uniform(−1/√fan_in, 1/√fan_in) weights, zero biases, output weights ×1000.
pub fn init_params<R: Rng + ?Sized>(rng: &mut R) -> EnergyNetParams {
    let mut params = EnergyNetParams::zeros();
    for (i, l) in params.layers.iter_mut().enumerate() {
        let a = 1.0 / (l.kind.fan_in() as f64).sqrt();
        let scale = if i == layer::OUTPUT { OUTPUT_INIT_SCALE } else { 1.0 };
        for w in l.weights.iter_mut() {
            *w = (rng.gen_range(-a..a) * scale) as f32;
        }
    }
    params
}

/// Gradient of the energy with respect to every parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGradient {
    pub layers: Vec<LayerGradient>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGradient {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl ParamGradient {
    pub fn zeros() -> Self {
        Self {
            layers: ARCHITECTURE
                .iter()
                .map(|k| LayerGradient {
                    weights: vec![0.0; k.weight_count()],
                    bias: vec![0.0; k.outputs()],
                })
                .collect(),
        }
    }

    pub fn get(&self, p: ParamIndex) -> f64 {
        let l = &self.layers[p.layer];
        if p.bias {
            l.bias[p.index]
        } else {
            l.weights[p.index]
        }
    }

    /// `self += scale · other`
    pub fn add_scaled(&mut self, other: &ParamGradient, scale: f64) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            for (x, y) in a.weights.iter_mut().zip(&b.weights) {
                *x += scale * y;
            }
            for (x, y) in a.bias.iter_mut().zip(&b.bias) {
                *x += scale * y;
            }
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = f64> + '_ {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.bias).copied())
    }

    pub fn max_abs(&self) -> f64 {
        self.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.iter().all(f64::is_finite)
    }
}

/// Parameters widened to `f64`, ready for evaluation. Read-only; share freely
/// across threads.
#[derive(Debug, Clone)]
pub struct EnergyNet {
    params: EnergyNetParams,
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
}

struct ConvCache {
    cols: Vec<f64>,
    /// Post-tanh activations `[out][h*w]`.
    act: Vec<f64>,
    h: usize,
    w: usize,
}

struct PoolCache {
    /// Source index (within the input plane stack) of each pooled value.
    argmax: Vec<usize>,
    out: Vec<f64>,
    h: usize,
    w: usize,
}

struct ForwardCache {
    conv: Vec<ConvCache>,
    pools: Vec<PoolCache>,
    global_argmax: Vec<usize>,
    global: Vec<f64>,
    fc1: Vec<f64>,
    fc2: Vec<f64>,
    energy: f64,
}

impl EnergyNet {
    pub fn new(params: EnergyNetParams) -> Self {
        let weights = params
            .layers
            .iter()
            .map(|l| l.weights.iter().map(|&v| v as f64).collect())
            .collect();
        let biases = params
            .layers
            .iter()
            .map(|l| l.bias.iter().map(|&v| v as f64).collect())
            .collect();
        Self {
            params,
            weights,
            biases,
        }
    }

    pub fn params(&self) -> &EnergyNetParams {
        &self.params
    }

    pub fn into_params(self) -> EnergyNetParams {
        self.params
    }

    fn check(stack: &ChannelStack) -> Result<(), ContractError> {
        let s = stack.size();
        if !(MIN_WINDOW..=MAX_RENDER_SIZE).contains(&s) {
            return Err(ContractError::WindowSize(s));
        }
        Ok(())
    }

    /// Energy of a channel stack.
    pub fn forward(&self, stack: &ChannelStack) -> Result<f64, ContractError> {
        Self::check(stack)?;
        Ok(self.run(stack).energy)
    }

    /// Energy and its gradient with respect to all parameters.
    pub fn backward(&self, stack: &ChannelStack) -> Result<(f64, ParamGradient), ContractError> {
        Self::check(stack)?;
        let cache = self.run(stack);
        let grad = self.backprop(&cache);
        Ok((cache.energy, grad))
    }

    fn conv(&self, li: usize, input: &[f64], h: usize, w: usize) -> ConvCache {
        let LayerKind::Conv { outputs, inputs } = ARCHITECTURE[li] else {
            unreachable!("layer {li} is not a convolution")
        };
        let p = h * w;
        let k = inputs * KERNEL * KERNEL;
        let cols = im2col(input, inputs, h, w);
        let mut act = vec![0.0; outputs * p];
        for (o, row) in act.chunks_exact_mut(p).enumerate() {
            row.fill(self.biases[li][o]);
        }
        let (ki, pi) = (k as isize, p as isize);
        gemm(outputs, k, p, &self.weights[li], (ki, 1), &cols, (pi, 1), &mut act, (pi, 1), 1.0);
        act.iter_mut().for_each(|v| *v = v.tanh());
        ConvCache { cols, act, h, w }
    }

    fn run(&self, stack: &ChannelStack) -> ForwardCache {
        let s = stack.size();
        let c1 = self.conv(layer::CONV1, stack.data(), s, s);
        let c2 = self.conv(layer::CONV2, &c1.act, s, s);
        let p2 = max_pool2(&c2.act, 128, s, s);
        let c3 = self.conv(layer::CONV3, &p2.out, p2.h, p2.w);
        let p3 = max_pool2(&c3.act, 128, c3.h, c3.w);
        let c4 = self.conv(layer::CONV4, &p3.out, p3.h, p3.w);

        let plane = c4.h * c4.w;
        let mut global = vec![0.0; 256];
        let mut global_argmax = vec![0; 256];
        for (c, chunk) in c4.act.chunks_exact(plane).enumerate() {
            let mut best = 0;
            for (i, &v) in chunk.iter().enumerate() {
                if v > chunk[best] {
                    best = i;
                }
            }
            global[c] = chunk[best];
            global_argmax[c] = best;
        }

        let fc1 = self.dense(layer::FC1, &global, true);
        let fc2 = self.dense(layer::FC2, &fc1, true);
        let energy = self.dense(layer::OUTPUT, &fc2, false)[0];
        ForwardCache {
            conv: vec![c1, c2, c3, c4],
            pools: vec![p2, p3],
            global_argmax,
            global,
            fc1,
            fc2,
            energy,
        }
    }

    fn dense(&self, li: usize, x: &[f64], activate: bool) -> Vec<f64> {
        let n = x.len();
        self.weights[li]
            .chunks_exact(n)
            .zip(&self.biases[li])
            .map(|(row, b)| {
                let z = b + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
                if activate {
                    z.tanh()
                } else {
                    z
                }
            })
            .collect()
    }

    fn backprop(&self, cache: &ForwardCache) -> ParamGradient {
        let mut grad = ParamGradient::zeros();

        // Output unit.
        grad.layers[layer::OUTPUT].bias[0] = 1.0;
        grad.layers[layer::OUTPUT].weights.copy_from_slice(&cache.fc2);
        let d_fc2: Vec<f64> = self.weights[layer::OUTPUT].clone();

        let d_fc1 = self.dense_backward(layer::FC2, &cache.fc1, &cache.fc2, &d_fc2, &mut grad);
        let d_global = self.dense_backward(layer::FC1, &cache.global, &cache.fc1, &d_fc1, &mut grad);

        // Global max pool: route to the winning position of each channel.
        let c4 = &cache.conv[3];
        let plane = c4.h * c4.w;
        let mut d_act4 = vec![0.0; 256 * plane];
        for c in 0..256 {
            d_act4[c * plane + cache.global_argmax[c]] = d_global[c];
        }

        let d_pool3 = self.conv_backward(layer::CONV4, c4, d_act4, &mut grad, true);
        let d_act3 = unpool(&cache.pools[1], &d_pool3.unwrap(), cache.conv[2].act.len());
        let d_pool2 = self.conv_backward(layer::CONV3, &cache.conv[2], d_act3, &mut grad, true);
        let d_act2 = unpool(&cache.pools[0], &d_pool2.unwrap(), cache.conv[1].act.len());
        let d_act1 = self
            .conv_backward(layer::CONV2, &cache.conv[1], d_act2, &mut grad, true)
            .unwrap();
        self.conv_backward(layer::CONV1, &cache.conv[0], d_act1, &mut grad, false);
        grad
    }

    /// Given dE/d(output activations), fills the layer gradient and returns
    /// dE/d(input).
    fn dense_backward(
        &self,
        li: usize,
        input: &[f64],
        output: &[f64],
        d_out: &[f64],
        grad: &mut ParamGradient,
    ) -> Vec<f64> {
        let n = input.len();
        let mut d_in = vec![0.0; n];
        let g = &mut grad.layers[li];
        for (o, (&a, &d)) in output.iter().zip(d_out).enumerate() {
            let dz = d * (1.0 - a * a);
            g.bias[o] = dz;
            let row = &self.weights[li][o * n..(o + 1) * n];
            for j in 0..n {
                g.weights[o * n + j] = dz * input[j];
                d_in[j] += row[j] * dz;
            }
        }
        d_in
    }

    fn conv_backward(
        &self,
        li: usize,
        cache: &ConvCache,
        mut d_act: Vec<f64>,
        grad: &mut ParamGradient,
        need_input: bool,
    ) -> Option<Vec<f64>> {
        let LayerKind::Conv { outputs, inputs } = ARCHITECTURE[li] else {
            unreachable!("layer {li} is not a convolution")
        };
        let p = cache.h * cache.w;
        let k = inputs * KERNEL * KERNEL;
        for (d, a) in d_act.iter_mut().zip(&cache.act) {
            *d *= 1.0 - a * a;
        }
        let g = &mut grad.layers[li];
        for (o, row) in d_act.chunks_exact(p).enumerate() {
            g.bias[o] = row.iter().sum();
        }
        // dW[o][k] = Σ_p dZ[o][p] · cols[k][p]
        let (ki, pi) = (k as isize, p as isize);
        gemm(outputs, p, k, &d_act, (pi, 1), &cache.cols, (1, pi), &mut g.weights, (ki, 1), 0.0);
        if !need_input {
            return None;
        }
        // dCols[k][p] = Σ_o W[o][k] · dZ[o][p]
        let mut d_cols = vec![0.0; k * p];
        gemm(k, outputs, p, &self.weights[li], (1, ki), &d_act, (pi, 1), &mut d_cols, (pi, 1), 0.0);
        Some(col2im(&d_cols, inputs, cache.h, cache.w))
    }
}

/// `C = A·B + beta·C` with explicit strides (A is m×k, B is k×n).
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (isize, isize),
    b: &[f64],
    (rsb, csb): (isize, isize),
    c: &mut [f64],
    (rsc, csc): (isize, isize),
    beta: f64,
) {
    let span = |rows: usize, cols: usize, rs: isize, cs: isize| {
        if rows == 0 || cols == 0 {
            0
        } else {
            (rows as isize - 1) * rs + (cols as isize - 1) * cs + 1
        }
    };
    assert!(a.len() as isize >= span(m, k, rsa, csa));
    assert!(b.len() as isize >= span(k, n, rsb, csb));
    assert!(c.len() as isize >= span(m, n, rsc, csc));
    // SAFETY: the asserts above bound every strided access within the slices,
    // and `c` is uniquely borrowed.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            rsc,
            csc,
        );
    }
}

/// `[c*9 + ky*3 + kx][y*w + x]` patch matrix with zero padding of one pixel.
fn im2col(input: &[f64], channels: usize, h: usize, w: usize) -> Vec<f64> {
    let p = h * w;
    let mut cols = vec![0.0; channels * KERNEL * KERNEL * p];
    for c in 0..channels {
        let plane = &input[c * p..(c + 1) * p];
        for ky in 0..KERNEL {
            for kx in 0..KERNEL {
                let row = (c * KERNEL + ky) * KERNEL + kx;
                let dst = &mut cols[row * p..(row + 1) * p];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let src_row = &plane[sy as usize * w..(sy as usize + 1) * w];
                    let out_row = &mut dst[y * w..(y + 1) * w];
                    // x + kx - 1 in range
                    let x_lo = 1usize.saturating_sub(kx);
                    let x_hi = (w + 1 - kx).min(w);
                    for x in x_lo..x_hi {
                        out_row[x] = src_row[x + kx - 1];
                    }
                }
            }
        }
    }
    cols
}

fn col2im(d_cols: &[f64], channels: usize, h: usize, w: usize) -> Vec<f64> {
    let p = h * w;
    let mut out = vec![0.0; channels * p];
    for c in 0..channels {
        let plane = &mut out[c * p..(c + 1) * p];
        for ky in 0..KERNEL {
            for kx in 0..KERNEL {
                let row = (c * KERNEL + ky) * KERNEL + kx;
                let src = &d_cols[row * p..(row + 1) * p];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let x_lo = 1usize.saturating_sub(kx);
                    let x_hi = (w + 1 - kx).min(w);
                    for x in x_lo..x_hi {
                        plane[sy as usize * w + x + kx - 1] += src[y * w + x];
                    }
                }
            }
        }
    }
    out
}

/// 2×2 stride-2 max pool; odd trailing rows/columns are dropped and ties go
/// to the first element in row-major order.
fn max_pool2(input: &[f64], channels: usize, h: usize, w: usize) -> PoolCache {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = vec![0.0; channels * oh * ow];
    let mut argmax = vec![0; channels * oh * ow];
    for c in 0..channels {
        for y in 0..oh {
            for x in 0..ow {
                let base = c * h * w;
                let cand = [
                    base + 2 * y * w + 2 * x,
                    base + 2 * y * w + 2 * x + 1,
                    base + (2 * y + 1) * w + 2 * x,
                    base + (2 * y + 1) * w + 2 * x + 1,
                ];
                let mut best = cand[0];
                for &i in &cand[1..] {
                    if input[i] > input[best] {
                        best = i;
                    }
                }
                let o = (c * oh + y) * ow + x;
                out[o] = input[best];
                argmax[o] = best;
            }
        }
    }
    PoolCache { argmax, out, h: oh, w: ow }
}

fn unpool(cache: &PoolCache, d_out: &[f64], input_len: usize) -> Vec<f64> {
    let mut d_in = vec![0.0; input_len];
    for (&src, &d) in cache.argmax.iter().zip(d_out) {
        d_in[src] += d;
    }
    d_in
}
