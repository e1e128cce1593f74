//! Residual convolutional denoiser: `D(z) = z − net(z)`.
//!
//! `net` is a stack of 3×3 unit-stride convolutions, ReLU between layers and
//! a linear last layer. Weights are stored `[out][in][ky][kx]`.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::image::Dims;
use crate::priors::blur::mirror;
use crate::rng::{stream, Stream};

pub const KERNEL: usize = 3;
const TAPS: usize = KERNEL * KERNEL;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Padding {
    /// Half-sample mirror at the borders.
    #[default]
    Symmetric,
    Zero,
    /// Wrap-around; makes the stack exactly shift-covariant.
    Periodic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Provenance {
    ZeroStart,
    Pretrained,
    Adapted { pairs: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Architecture {
    pub depth: usize,
    pub channels: usize,
    #[serde(default)]
    pub padding: Padding,
}

impl Default for Architecture {
    fn default() -> Self {
        Architecture {
            depth: 5,
            channels: 16,
            padding: Padding::Symmetric,
        }
    }
}

impl Architecture {
    /// `(in, out)` channel counts per layer.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        assert!(self.depth >= 1, "network depth must be at least 1");
        (0..self.depth)
            .map(|l| {
                let cin = if l == 0 { 1 } else { self.channels };
                let cout = if l + 1 == self.depth { 1 } else { self.channels };
                (cin, cout)
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    pub in_ch: usize,
    pub out_ch: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl ConvLayer {
    pub fn zeros(in_ch: usize, out_ch: usize) -> Self {
        ConvLayer {
            in_ch,
            out_ch,
            weights: vec![0.0; in_ch * out_ch * TAPS],
            bias: vec![0.0; out_ch],
        }
    }

    #[inline]
    pub fn w(&self, o: usize, i: usize, ky: usize, kx: usize) -> f64 {
        self.weights[((o * self.in_ch + i) * KERNEL + ky) * KERNEL + kx]
    }

    pub fn n_params(&self) -> usize {
        self.weights.len() + self.bias.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserParams {
    pub arch: Architecture,
    pub layers: Vec<ConvLayer>,
    pub sigma_train: f64,
    pub provenance: Provenance,
    pub seed: u64,
}

/// Gradients share the parameter layout.
pub type Gradients = Vec<ConvLayer>;

impl DenoiserParams {
    pub fn zeros(arch: Architecture) -> Self {
        let layers = arch
            .layer_shapes()
            .into_iter()
            .map(|(i, o)| ConvLayer::zeros(i, o))
            .collect();
        DenoiserParams {
            arch,
            layers,
            sigma_train: 0.0,
            provenance: Provenance::ZeroStart,
            seed: 0,
        }
    }

    /// He-scaled Gaussian weights, zero biases. The last layer is scaled down
    /// so the initial residual branch is small.
    pub fn init(arch: Architecture, seed: u64) -> Self {
        let mut p = Self::zeros(arch);
        p.seed = seed;
        let mut rng = stream(seed, Stream::Init);
        let depth = p.layers.len();
        for (l, layer) in p.layers.iter_mut().enumerate() {
            let fan_in = (layer.in_ch * TAPS) as f64;
            let mut std = (2.0 / fan_in).sqrt();
            if l + 1 == depth {
                std *= 0.1;
            }
            for w in &mut layer.weights {
                *w = std * rng.sample::<f64, _>(StandardNormal);
            }
        }
        p
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(ConvLayer::n_params).sum()
    }

    pub fn zero_grads(&self) -> Gradients {
        self.layers
            .iter()
            .map(|l| ConvLayer::zeros(l.in_ch, l.out_ch))
            .collect()
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weights.iter_mut().chain(l.bias.iter_mut()))
    }

    pub fn params(&self) -> impl Iterator<Item = &f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(l.bias.iter()))
    }

    pub fn is_finite(&self) -> bool {
        self.params().all(|v| v.is_finite())
    }

    /// Denoised image `z − net(z)`.
    pub fn denoise(&self, z: &[f64], dims: Dims) -> Vec<f64> {
        let net = self.forward_cached(z, dims, &mut None);
        z.iter().zip(&net).map(|(a, b)| a - b).collect()
    }

    /// Residual branch output `net(z)`.
    pub fn residual(&self, z: &[f64], dims: Dims) -> Vec<f64> {
        self.forward_cached(z, dims, &mut None)
    }

    /// ReLU on/off pattern of every interior pre-activation, in layer order.
    pub fn activation_pattern(&self, z: &[f64], dims: Dims) -> Vec<bool> {
        let mut cache = Some(Cache::default());
        self.forward_cached(z, dims, &mut cache);
        let cache = cache.unwrap();
        let last = self.layers.len() - 1;
        cache.pre[..last]
            .iter()
            .flat_map(|p| p.iter().map(|&v| v > 0.0))
            .collect()
    }

    pub(crate) fn forward_cached(&self, z: &[f64], dims: Dims, cache: &mut Option<Cache>) -> Vec<f64> {
        assert_eq!(z.len(), dims.len(), "denoiser input does not match dims");
        let map = PadMap::new(dims, self.arch.padding);
        let mut act = z.to_vec();
        let last = self.layers.len() - 1;
        if let Some(c) = cache.as_mut() {
            c.padded.clear();
            c.pre.clear();
        }
        for (l, layer) in self.layers.iter().enumerate() {
            let padded = map.pad(&act, layer.in_ch);
            let mut pre = vec![0.0; layer.out_ch * dims.len()];
            conv_forward(layer, &padded, &map, &mut pre);
            act = if l == last {
                pre.clone()
            } else {
                pre.iter().map(|&v| v.max(0.0)).collect()
            };
            if let Some(c) = cache.as_mut() {
                c.padded.push(padded);
                c.pre.push(pre);
            }
        }
        act
    }

    /// Accumulates into `grads` the parameter gradient of `⟨g, D(z)⟩`, where
    /// `g = d_output` is the gradient of a loss with respect to the denoiser output.
    pub(crate) fn backward(&self, dims: Dims, cache: &Cache, d_output: &[f64], grads: &mut Gradients) {
        let map = PadMap::new(dims, self.arch.padding);
        let n = dims.len();
        // D(z) = z − net(z)
        let mut d_act: Vec<f64> = d_output.iter().map(|g| -g).collect();
        let last = self.layers.len() - 1;
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let d_pre: Vec<f64> = if l == last {
                d_act
            } else {
                d_act
                    .iter()
                    .zip(&cache.pre[l])
                    .map(|(g, &p)| if p > 0.0 { *g } else { 0.0 })
                    .collect()
            };
            let mut d_padded = if l > 0 {
                Some(vec![0.0; layer.in_ch * map.padded_len()])
            } else {
                None
            };
            conv_backward(layer, &cache.padded[l], &map, &d_pre, &mut grads[l], d_padded.as_deref_mut());
            d_act = match d_padded {
                Some(dp) => map.unpad_accumulate(&dp, layer.in_ch, n),
                None => Vec::new(),
            };
        }
    }
}

#[derive(Debug, Default)]
pub(crate) struct Cache {
    padded: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
}

/// Source pixel for every position of the one-pixel padded frame.
pub(crate) struct PadMap {
    w: usize,
    h: usize,
    src: Vec<Option<usize>>,
}

impl PadMap {
    fn new(dims: Dims, padding: Padding) -> Self {
        let (w, h) = (dims.width, dims.height);
        let (pw, ph) = (w + 2, h + 2);
        let mut src = Vec::with_capacity(pw * ph);
        for py in 0..ph {
            for px in 0..pw {
                let (y, x) = (py as isize - 1, px as isize - 1);
                let s = match padding {
                    Padding::Zero => {
                        if y < 0 || x < 0 || y >= h as isize || x >= w as isize {
                            None
                        } else {
                            Some(y as usize * w + x as usize)
                        }
                    }
                    Padding::Symmetric => Some(mirror(y, h) * w + mirror(x, w)),
                    Padding::Periodic => {
                        Some(y.rem_euclid(h as isize) as usize * w + x.rem_euclid(w as isize) as usize)
                    }
                };
                src.push(s);
            }
        }
        PadMap { w, h, src }
    }

    fn padded_len(&self) -> usize {
        self.src.len()
    }

    fn pad(&self, input: &[f64], channels: usize) -> Vec<f64> {
        let n = self.w * self.h;
        let pl = self.padded_len();
        let mut out = vec![0.0; channels * pl];
        for c in 0..channels {
            let src = &input[c * n..(c + 1) * n];
            for (o, s) in out[c * pl..(c + 1) * pl].iter_mut().zip(&self.src) {
                if let Some(i) = s {
                    *o = src[*i];
                }
            }
        }
        out
    }

    fn unpad_accumulate(&self, d_padded: &[f64], channels: usize, n: usize) -> Vec<f64> {
        let pl = self.padded_len();
        let mut out = vec![0.0; channels * n];
        for c in 0..channels {
            let dst = &mut out[c * n..(c + 1) * n];
            for (g, s) in d_padded[c * pl..(c + 1) * pl].iter().zip(&self.src) {
                if let Some(i) = s {
                    dst[*i] += g;
                }
            }
        }
        out
    }
}

fn conv_forward(layer: &ConvLayer, padded: &[f64], map: &PadMap, out: &mut [f64]) {
    let (w, h) = (map.w, map.h);
    let pw = w + 2;
    let pl = map.padded_len();
    let n = w * h;
    for o in 0..layer.out_ch {
        let out_o = &mut out[o * n..(o + 1) * n];
        out_o.fill(layer.bias[o]);
        for i in 0..layer.in_ch {
            let p_i = &padded[i * pl..(i + 1) * pl];
            let k = &layer.weights[(o * layer.in_ch + i) * TAPS..(o * layer.in_ch + i + 1) * TAPS];
            for y in 0..h {
                let dst = &mut out_o[y * w..(y + 1) * w];
                for ky in 0..KERNEL {
                    let row = &p_i[(y + ky) * pw..(y + ky + 1) * pw];
                    let (k0, k1, k2) = (k[ky * 3], k[ky * 3 + 1], k[ky * 3 + 2]);
                    for (x, d) in dst.iter_mut().enumerate() {
                        *d += k0 * row[x] + k1 * row[x + 1] + k2 * row[x + 2];
                    }
                }
            }
        }
    }
}

fn conv_backward(
    layer: &ConvLayer,
    padded: &[f64],
    map: &PadMap,
    d_out: &[f64],
    grad: &mut ConvLayer,
    mut d_padded: Option<&mut [f64]>,
) {
    let (w, h) = (map.w, map.h);
    let pw = w + 2;
    let pl = map.padded_len();
    let n = w * h;
    for o in 0..layer.out_ch {
        let g_o = &d_out[o * n..(o + 1) * n];
        grad.bias[o] += g_o.iter().sum::<f64>();
        for i in 0..layer.in_ch {
            let p_i = &padded[i * pl..(i + 1) * pl];
            let base = (o * layer.in_ch + i) * TAPS;
            let mut acc = [0.0; TAPS];
            for y in 0..h {
                let g_row = &g_o[y * w..(y + 1) * w];
                for ky in 0..KERNEL {
                    let row = &p_i[(y + ky) * pw..(y + ky + 1) * pw];
                    let (mut a0, mut a1, mut a2) = (0.0, 0.0, 0.0);
                    for (x, g) in g_row.iter().enumerate() {
                        a0 += g * row[x];
                        a1 += g * row[x + 1];
                        a2 += g * row[x + 2];
                    }
                    acc[ky * 3] += a0;
                    acc[ky * 3 + 1] += a1;
                    acc[ky * 3 + 2] += a2;
                }
            }
            for (t, a) in acc.iter().enumerate() {
                grad.weights[base + t] += a;
            }
            if let Some(dp) = d_padded.as_deref_mut() {
                let dp_i = &mut dp[i * pl..(i + 1) * pl];
                let k = &layer.weights[base..base + TAPS];
                for y in 0..h {
                    let g_row = &g_o[y * w..(y + 1) * w];
                    for ky in 0..KERNEL {
                        let row = &mut dp_i[(y + ky) * pw..(y + ky + 1) * pw];
                        let (k0, k1, k2) = (k[ky * 3], k[ky * 3 + 1], k[ky * 3 + 2]);
                        for (x, g) in g_row.iter().enumerate() {
                            row[x] += k0 * g;
                            row[x + 1] += k1 * g;
                            row[x + 2] += k2 * g;
                        }
                    }
                }
            }
        }
    }
}
