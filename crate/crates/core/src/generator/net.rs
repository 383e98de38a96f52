//! The toy velocity network `u(x_t, t, c)`.
//!
//! Two paths feed the per-pixel prediction:
//!
//! * a *layout* MLP maps `[text; frame position; time]` to a full-resolution
//!   RGB canvas for every frame, which is what lets captions place content;
//! * a *pixel* path (1×1 convolutions) mixes `x_t` with the canvas, with the
//!   time embedding and the text embedding broadcast-added to its hidden units.
//!
//! The network estimates the clean video `x̂1 = canvas + residual` and returns
//! the straight-path velocity `(x̂1 − x_t) / max(1 − t, T_FLOOR)`.
//! The objective is still the velocity regression; only the parameterization
//! of `u` is fixed.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::flow::VelocityField;
use super::linear::{silu, silu_grad, LayerGrad, Linear};
use super::tensor::{VideoShape, VideoTensor};
use super::text::TextEmbedding;
use crate::error::{ensure, Result};
use crate::lora::LoraLayer;

pub const LAYER_NAMES: [&str; 8] = [
    "time_in",
    "layout_in",
    "layout_mid",
    "layout_out",
    "pixel_in",
    "pixel_time",
    "pixel_text",
    "pixel_out",
];

const TIME_IN: usize = 0;
const LAYOUT_IN: usize = 1;
const LAYOUT_MID: usize = 2;
const LAYOUT_OUT: usize = 3;
const PIXEL_IN: usize = 4;
const PIXEL_TIME: usize = 5;
const PIXEL_TEXT: usize = 6;
const PIXEL_OUT: usize = 7;

/// Lower bound on `1 − t` in the velocity parameterization.
pub const T_FLOOR: f64 = 0.25;

/// `1 / max(1 − t, T_FLOOR)`.
pub fn velocity_scale(t: f64) -> f64 {
    1.0 / (1.0 - t).max(T_FLOOR)
}

pub type AdapterMap = BTreeMap<String, LoraLayer>;

/// Architecture descriptor, stored in checkpoint headers.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Arch {
    pub text_dim: usize,
    pub time_features: usize,
    pub time_hidden: usize,
    pub frame_features: usize,
    pub layout_hidden: usize,
    pub pixel_hidden: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl Default for Arch {
    fn default() -> Self {
        Self::toy()
    }
}

impl Arch {
    /// Desk-scale default: 32×32 RGB, 64-d text.
    pub fn toy() -> Self {
        Self {
            text_dim: 64,
            time_features: 16,
            time_hidden: 64,
            frame_features: 16,
            layout_hidden: 128,
            pixel_hidden: 16,
            height: 32,
            width: 32,
            channels: 3,
        }
    }

    /// A 2×2 instance with fewer than 200 parameters, for gradient checks.
    pub fn tiny() -> Self {
        Self {
            text_dim: 4,
            time_features: 4,
            time_hidden: 3,
            frame_features: 2,
            layout_hidden: 3,
            pixel_hidden: 2,
            height: 2,
            width: 2,
            channels: 3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure(self.time_features.is_multiple_of(2) && self.time_features > 0, || {
            "time_features must be positive and even".into()
        })?;
        ensure(self.frame_features.is_multiple_of(2) && self.frame_features > 0, || {
            "frame_features must be positive and even".into()
        })?;
        ensure(
            [self.text_dim, self.time_hidden, self.layout_hidden, self.pixel_hidden]
                .iter()
                .all(|d| *d > 0),
            || "hidden sizes must be positive".into(),
        )?;
        ensure(self.height > 0 && self.width > 0 && self.channels > 0, || {
            "frame size must be positive".into()
        })
    }

    pub fn frame_len(&self) -> usize {
        self.height * self.width * self.channels
    }

    fn layout_in_dim(&self) -> usize {
        self.text_dim + self.frame_features + self.time_hidden
    }

    /// `(out_dim, in_dim)` for each entry of [`LAYER_NAMES`].
    pub fn layer_shapes(&self) -> [(usize, usize); 8] {
        let c = self.channels;
        [
            (self.time_hidden, self.time_features),
            (self.layout_hidden, self.layout_in_dim()),
            (self.layout_hidden, self.layout_hidden),
            (self.frame_len(), self.layout_hidden),
            (self.pixel_hidden, 2 * c),
            (self.pixel_hidden, self.time_hidden),
            (self.pixel_hidden, self.text_dim),
            (c, self.pixel_hidden),
        ]
    }

    pub fn param_count(&self) -> usize {
        self.layer_shapes().iter().map(|(o, i)| o * i + o).sum()
    }

    pub fn video_shape(&self, frames: usize) -> VideoShape {
        VideoShape::new(frames, self.height, self.width, self.channels)
    }
}

/// Sinusoidal features of the flow time `t ∈ [0, 1]`; frequencies `π·2^i / 2`.
pub fn time_embedding(t: f64, features: usize) -> Vec<f64> {
    let half = features / 2;
    let mut out = vec![0.0; features];
    for i in 0..half {
        let w = 0.5 * PI * (1u64 << i) as f64;
        out[2 * i] = (w * t).sin();
        out[2 * i + 1] = (w * t).cos();
    }
    out
}

/// Sinusoidal features of an integer frame index.
pub fn frame_embedding(frame: usize, features: usize) -> Vec<f64> {
    let half = features / 2;
    let mut out = vec![0.0; features];
    for i in 0..half {
        let w = 10_000f64.powf(-(i as f64) / half as f64);
        out[2 * i] = (w * frame as f64).sin();
        out[2 * i + 1] = (w * frame as f64).cos();
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct VelocityNet {
    pub arch: Arch,
    pub layers: Vec<Linear>,
}

/// Activations kept from the forward pass.
pub struct ForwardCache {
    frames: usize,
    te: Vec<f64>,
    tau_pre: Vec<f64>,
    tau: Vec<f64>,
    scale: f64,
    z: Vec<f64>,
    h1_pre: Vec<f64>,
    h1: Vec<f64>,
    h2_pre: Vec<f64>,
    h2: Vec<f64>,
    canvas: Vec<f64>,
    q: Vec<f64>,
    s_pre: Vec<f64>,
    s: Vec<f64>,
    ax: Vec<Vec<f64>>,
}

impl ForwardCache {
    /// The layout canvas for all frames, laid out like the video.
    pub fn canvas(&self) -> &[f64] {
        &self.canvas
    }
}

/// Per-layer gradients in [`LAYER_NAMES`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct Grads {
    pub layers: Vec<LayerGrad>,
}

/// Which tensors receive gradients.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Trainable {
    Base,
    Adapters,
}

impl Grads {
    pub fn zeros(net: &VelocityNet, adapters: Option<&AdapterMap>, mode: Trainable) -> Self {
        let layers = LAYER_NAMES
            .iter()
            .zip(&net.layers)
            .map(|(name, lin)| match mode {
                Trainable::Base => LayerGrad::for_base(lin),
                Trainable::Adapters => adapters
                    .and_then(|a| a.get(*name))
                    .map(LayerGrad::for_lora)
                    .unwrap_or_default(),
            })
            .collect();
        Self { layers }
    }

    /// Gradient tensors in the same order as [`VelocityNet::param_slices_mut`]
    /// (base mode) or [`crate::lora::AdaptedParams::adapter_slices_mut`].
    pub fn slices(&self) -> Vec<&[f64]> {
        let mut out = Vec::new();
        for g in &self.layers {
            for part in [&g.weight, &g.bias, &g.lora_a, &g.lora_b].into_iter().flatten() {
                out.push(part.as_slice());
            }
        }
        out
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.slices().concat()
    }

    /// Whether a base tensor of this layer received a gradient buffer.
    pub fn touches_base(&self, layer: usize) -> bool {
        let g = &self.layers[layer];
        g.weight.is_some() || g.bias.is_some()
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|g| {
            [&g.weight, &g.bias, &g.lora_a, &g.lora_b]
                .into_iter()
                .flatten()
                .all(|v| v.iter().all(|x| x.is_finite()))
        })
    }
}

impl VelocityNet {
    /// Standard initialization: LeCun-normal hidden layers, zero output
    /// output projections, so the initial clean-video estimate is zero.
    pub fn init(arch: Arch, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = arch
            .layer_shapes()
            .iter()
            .enumerate()
            .map(|(i, &(o, n))| match i {
                LAYOUT_OUT | PIXEL_OUT => Linear::zeros(o, n),
                _ => Linear::lecun(o, n, &mut rng),
            })
            .collect();
        Ok(Self { arch, layers })
    }

    /// Every weight and bias drawn from `N(0, std²)`; used by gradient checks,
    /// where zero-initialized layers would hide errors.
    pub fn init_random(arch: Arch, seed: u64, std: f64) -> Result<Self> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, std).map_err(|e| crate::error::validation(e.to_string()))?;
        let layers = arch
            .layer_shapes()
            .iter()
            .map(|&(o, n)| Linear {
                out_dim: o,
                in_dim: n,
                weight: (0..o * n).map(|_| normal.sample(&mut rng)).collect(),
                bias: (0..o).map(|_| normal.sample(&mut rng)).collect(),
            })
            .collect();
        Ok(Self { arch, layers })
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Linear::param_count).sum()
    }

    pub fn named_layers(&self) -> impl Iterator<Item = (&'static str, &Linear)> {
        LAYER_NAMES.iter().copied().zip(self.layers.iter())
    }

    pub fn layer_index(&self, name: &str) -> Option<usize> {
        LAYER_NAMES.iter().position(|n| *n == name)
    }

    pub fn layer(&self, name: &str) -> Option<&Linear> {
        self.layer_index(name).map(|i| &self.layers[i])
    }

    pub fn layer_mut(&mut self, name: &str) -> Option<&mut Linear> {
        self.layer_index(name).map(move |i| &mut self.layers[i])
    }

    pub fn flat_params(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            v.extend_from_slice(&l.weight);
            v.extend_from_slice(&l.bias);
        }
        v
    }

    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::with_capacity(2 * self.layers.len());
        for l in &mut self.layers {
            out.push(&mut l.weight);
            out.push(&mut l.bias);
        }
        out
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        ensure(flat.len() == self.param_count(), || {
            format!("{} values for {} parameters", flat.len(), self.param_count())
        })?;
        let mut off = 0;
        for l in &mut self.layers {
            let nw = l.weight.len();
            l.weight.copy_from_slice(&flat[off..off + nw]);
            off += nw;
            let nb = l.bias.len();
            l.bias.copy_from_slice(&flat[off..off + nb]);
            off += nb;
        }
        Ok(())
    }

    /// sha256 over the little-endian parameter bytes.
    pub fn param_hash(&self) -> String {
        let bytes: Vec<u8> = self.flat_params().iter().flat_map(|v| v.to_le_bytes()).collect();
        crate::chain_model::sha256_hex(&bytes)
    }

    fn check_inputs(&self, x_t: &VideoTensor, c: &TextEmbedding) -> Result<()> {
        let a = &self.arch;
        ensure(
            x_t.shape.height == a.height && x_t.shape.width == a.width && x_t.shape.channels == a.channels,
            || {
                format!(
                    "input {:?} does not match the {}x{}x{} generator",
                    x_t.shape, a.height, a.width, a.channels
                )
            },
        )?;
        ensure(x_t.shape.frames >= 1, || "input has no frames".into())?;
        ensure(c.dim() == a.text_dim, || {
            format!("text embedding has {} dims, expected {}", c.dim(), a.text_dim)
        })
    }

    fn adapter_slots<'a>(&self, adapters: Option<&'a AdapterMap>) -> Vec<Option<&'a LoraLayer>> {
        LAYER_NAMES.iter().map(|n| adapters.and_then(|a| a.get(*n))).collect()
    }

    pub fn forward(
        &self,
        adapters: Option<&AdapterMap>,
        x_t: &VideoTensor,
        t: f64,
        c: &TextEmbedding,
    ) -> Result<(VideoTensor, ForwardCache)> {
        self.check_inputs(x_t, c)?;
        let a = &self.arch;
        let lora = self.adapter_slots(adapters);
        let l = &self.layers;
        let ch = a.channels;
        let frames = x_t.shape.frames;
        let pixels = frames * a.height * a.width;
        let mut ax = vec![Vec::new(); LAYER_NAMES.len()];

        let te = time_embedding(t, a.time_features);
        let (tau_pre, ax_t) = l[TIME_IN].forward(lora[TIME_IN], &te, 1);
        ax[TIME_IN] = ax_t;
        let tau: Vec<f64> = tau_pre.iter().map(|v| silu(*v)).collect();

        let (pt, ax_pt) = l[PIXEL_TIME].forward(lora[PIXEL_TIME], &tau, 1);
        ax[PIXEL_TIME] = ax_pt;
        let (pc, ax_pc) = l[PIXEL_TEXT].forward(lora[PIXEL_TEXT], &c.vector, 1);
        ax[PIXEL_TEXT] = ax_pc;

        let zdim = a.layout_in_dim();
        let mut z = Vec::with_capacity(frames * zdim);
        for f in 0..frames {
            z.extend_from_slice(&c.vector);
            z.extend(frame_embedding(f, a.frame_features));
            z.extend_from_slice(&tau);
        }
        let (h1_pre, ax_1) = l[LAYOUT_IN].forward(lora[LAYOUT_IN], &z, frames);
        ax[LAYOUT_IN] = ax_1;
        let h1: Vec<f64> = h1_pre.iter().map(|v| silu(*v)).collect();
        let (h2_pre, ax_2) = l[LAYOUT_MID].forward(lora[LAYOUT_MID], &h1, frames);
        ax[LAYOUT_MID] = ax_2;
        let h2: Vec<f64> = h2_pre.iter().map(|v| silu(*v)).collect();
        let (canvas, ax_3) = l[LAYOUT_OUT].forward(lora[LAYOUT_OUT], &h2, frames);
        ax[LAYOUT_OUT] = ax_3;

        let mut q = Vec::with_capacity(pixels * 2 * ch);
        for p in 0..pixels {
            q.extend_from_slice(&x_t.data[p * ch..(p + 1) * ch]);
            q.extend_from_slice(&canvas[p * ch..(p + 1) * ch]);
        }
        let (mut s_pre, ax_pi) = l[PIXEL_IN].forward(lora[PIXEL_IN], &q, pixels);
        ax[PIXEL_IN] = ax_pi;
        let ph = a.pixel_hidden;
        for row in s_pre.chunks_exact_mut(ph) {
            for ((v, tb), cb) in row.iter_mut().zip(&pt).zip(&pc) {
                *v += tb + cb;
            }
        }
        let s: Vec<f64> = s_pre.iter().map(|v| silu(*v)).collect();
        let (r, ax_po) = l[PIXEL_OUT].forward(lora[PIXEL_OUT], &s, pixels);
        ax[PIXEL_OUT] = ax_po;

        let scale = velocity_scale(t);
        let mut u = r;
        for ((ui, ci), xi) in u.iter_mut().zip(&canvas).zip(&x_t.data) {
            *ui = scale * (*ui + ci - xi);
        }
        let out = VideoTensor {
            shape: x_t.shape,
            data: u,
        };
        let cache = ForwardCache {
            frames,
            te,
            tau_pre,
            tau,
            scale,
            z,
            h1_pre,
            h1,
            h2_pre,
            h2,
            canvas,
            q,
            s_pre,
            s,
            ax,
        };
        Ok((out, cache))
    }

    /// Backpropagates `du = dL/du` through a cached forward pass, accumulating
    /// into `grads`.
    pub fn backward(
        &self,
        adapters: Option<&AdapterMap>,
        cache: &ForwardCache,
        c: &TextEmbedding,
        du: &[f64],
        grads: &mut Grads,
    ) {
        let a = &self.arch;
        let lora = self.adapter_slots(adapters);
        let l = &self.layers;
        let ch = a.channels;
        let ph = a.pixel_hidden;
        let frames = cache.frames;
        let pixels = frames * a.height * a.width;
        let g = &mut grads.layers;

        let dx1: Vec<f64> = du.iter().map(|d| cache.scale * d).collect();
        let ds = l[PIXEL_OUT]
            .backward(
                lora[PIXEL_OUT],
                &cache.s,
                &cache.ax[PIXEL_OUT],
                &dx1,
                pixels,
                &mut g[PIXEL_OUT],
                true,
            )
            .expect("dx requested");
        let mut ds_pre = ds;
        for (d, sp) in ds_pre.iter_mut().zip(&cache.s_pre) {
            *d *= silu_grad(*sp);
        }
        let mut dbias = vec![0.0; ph];
        for row in ds_pre.chunks_exact(ph) {
            for (acc, v) in dbias.iter_mut().zip(row) {
                *acc += v;
            }
        }
        let dq = l[PIXEL_IN]
            .backward(
                lora[PIXEL_IN],
                &cache.q,
                &cache.ax[PIXEL_IN],
                &ds_pre,
                pixels,
                &mut g[PIXEL_IN],
                true,
            )
            .expect("dx requested");

        let mut dcanvas = dx1;
        for p in 0..pixels {
            for k in 0..ch {
                dcanvas[p * ch + k] += dq[p * 2 * ch + ch + k];
            }
        }

        let dh2 = l[LAYOUT_OUT]
            .backward(
                lora[LAYOUT_OUT],
                &cache.h2,
                &cache.ax[LAYOUT_OUT],
                &dcanvas,
                frames,
                &mut g[LAYOUT_OUT],
                true,
            )
            .expect("dx requested");
        let dh2_pre: Vec<f64> = dh2.iter().zip(&cache.h2_pre).map(|(d, x)| d * silu_grad(*x)).collect();
        let dh1 = l[LAYOUT_MID]
            .backward(
                lora[LAYOUT_MID],
                &cache.h1,
                &cache.ax[LAYOUT_MID],
                &dh2_pre,
                frames,
                &mut g[LAYOUT_MID],
                true,
            )
            .expect("dx requested");
        let dh1_pre: Vec<f64> = dh1.iter().zip(&cache.h1_pre).map(|(d, x)| d * silu_grad(*x)).collect();
        let dz = l[LAYOUT_IN]
            .backward(
                lora[LAYOUT_IN],
                &cache.z,
                &cache.ax[LAYOUT_IN],
                &dh1_pre,
                frames,
                &mut g[LAYOUT_IN],
                true,
            )
            .expect("dx requested");

        let th = a.time_hidden;
        let zdim = a.layout_in_dim();
        let tau_off = a.text_dim + a.frame_features;
        let mut dtau = vec![0.0; th];
        for f in 0..frames {
            for (acc, v) in dtau.iter_mut().zip(&dz[f * zdim + tau_off..(f + 1) * zdim]) {
                *acc += v;
            }
        }
        let d = l[PIXEL_TIME].backward(
            lora[PIXEL_TIME],
            &cache.tau,
            &cache.ax[PIXEL_TIME],
            &dbias,
            1,
            &mut g[PIXEL_TIME],
            true,
        );
        if let Some(d) = d {
            for (x, y) in dtau.iter_mut().zip(d) {
                *x += y;
            }
        }
        l[PIXEL_TEXT].backward(
            lora[PIXEL_TEXT],
            &c.vector,
            &cache.ax[PIXEL_TEXT],
            &dbias,
            1,
            &mut g[PIXEL_TEXT],
            false,
        );
        let dtau_pre: Vec<f64> = dtau
            .iter()
            .zip(&cache.tau_pre)
            .map(|(d, x)| d * silu_grad(*x))
            .collect();
        l[TIME_IN].backward(
            lora[TIME_IN],
            &cache.te,
            &cache.ax[TIME_IN],
            &dtau_pre,
            1,
            &mut g[TIME_IN],
            false,
        );
    }

    pub fn predict(
        &self,
        adapters: Option<&AdapterMap>,
        x_t: &VideoTensor,
        t: f64,
        c: &TextEmbedding,
    ) -> Result<VideoTensor> {
        self.forward(adapters, x_t, t, c).map(|(u, _)| u)
    }
}

impl VelocityField for VelocityNet {
    fn velocity(&self, x_t: &VideoTensor, t: f64, c: &TextEmbedding) -> Result<VideoTensor> {
        self.predict(None, x_t, t, c)
    }
}

impl VelocityField for crate::lora::AdaptedParams {
    fn velocity(&self, x_t: &VideoTensor, t: f64, c: &TextEmbedding) -> Result<VideoTensor> {
        self.base.predict(Some(&self.adapters), x_t, t, c)
    }
}
