//! Dense layers applied row-wise to `rows × in_dim` activation buffers, with an
//! optional low-rank adapter on the weight.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::lora::LoraLayer;

/// `y = W·x + b` with `W` stored `out_dim × in_dim`, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub out_dim: usize,
    pub in_dim: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Linear {
    pub fn zeros(out_dim: usize, in_dim: usize) -> Self {
        Self {
            out_dim,
            in_dim,
            weight: vec![0.0; out_dim * in_dim],
            bias: vec![0.0; out_dim],
        }
    }

    /// LeCun-normal weights, zero bias.
    pub fn lecun<R: Rng + ?Sized>(out_dim: usize, in_dim: usize, rng: &mut R) -> Self {
        let std = (1.0 / in_dim as f64).sqrt();
        let weight = (0..out_dim * in_dim)
            .map(|_| std * rng.sample::<f64, _>(StandardNormal))
            .collect();
        Self {
            out_dim,
            in_dim,
            weight,
            bias: vec![0.0; out_dim],
        }
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.weight[i * self.in_dim..(i + 1) * self.in_dim]
    }

    /// Forward over `rows` inputs. Returns `y` and, when an adapter is given,
    /// the cached `A·x` needed by the backward pass.
    pub fn forward(&self, lora: Option<&LoraLayer>, x: &[f64], rows: usize) -> (Vec<f64>, Vec<f64>) {
        debug_assert_eq!(x.len(), rows * self.in_dim);
        let mut y = vec![0.0; rows * self.out_dim];
        for r in 0..rows {
            let xr = &x[r * self.in_dim..(r + 1) * self.in_dim];
            let yr = &mut y[r * self.out_dim..(r + 1) * self.out_dim];
            for (i, out) in yr.iter_mut().enumerate() {
                *out = dot(self.row(i), xr) + self.bias[i];
            }
        }
        let ax = match lora {
            None => Vec::new(),
            Some(l) => {
                let rank = l.rank;
                let scale = l.scale();
                let mut ax = vec![0.0; rows * rank];
                for r in 0..rows {
                    let xr = &x[r * self.in_dim..(r + 1) * self.in_dim];
                    let axr = &mut ax[r * rank..(r + 1) * rank];
                    for (k, v) in axr.iter_mut().enumerate() {
                        *v = dot(&l.a[k * self.in_dim..(k + 1) * self.in_dim], xr);
                    }
                    let yr = &mut y[r * self.out_dim..(r + 1) * self.out_dim];
                    for (i, out) in yr.iter_mut().enumerate() {
                        *out += scale * dot(&l.b[i * rank..(i + 1) * rank], axr);
                    }
                }
                ax
            }
        };
        (y, ax)
    }

    /// Backward pass. Accumulates into whichever gradient buffers are present
    /// and returns `dL/dx` when `want_dx` is set.
    #[allow(clippy::too_many_arguments)]
    pub fn backward(
        &self,
        lora: Option<&LoraLayer>,
        x: &[f64],
        ax: &[f64],
        dy: &[f64],
        rows: usize,
        grad: &mut LayerGrad,
        want_dx: bool,
    ) -> Option<Vec<f64>> {
        let (n_in, n_out) = (self.in_dim, self.out_dim);
        if let Some(dw) = grad.weight.as_mut() {
            for r in 0..rows {
                let xr = &x[r * n_in..(r + 1) * n_in];
                let dyr = &dy[r * n_out..(r + 1) * n_out];
                for (i, &g) in dyr.iter().enumerate() {
                    if g != 0.0 {
                        axpy(g, xr, &mut dw[i * n_in..(i + 1) * n_in]);
                    }
                }
            }
        }
        if let Some(db) = grad.bias.as_mut() {
            for r in 0..rows {
                for (acc, g) in db.iter_mut().zip(&dy[r * n_out..(r + 1) * n_out]) {
                    *acc += g;
                }
            }
        }
        let mut dx = want_dx.then(|| vec![0.0; rows * n_in]);
        if let Some(dx) = dx.as_mut() {
            for r in 0..rows {
                let dyr = &dy[r * n_out..(r + 1) * n_out];
                let dxr = &mut dx[r * n_in..(r + 1) * n_in];
                for (i, &g) in dyr.iter().enumerate() {
                    if g != 0.0 {
                        axpy(g, self.row(i), dxr);
                    }
                }
            }
        }
        if let Some(l) = lora {
            let rank = l.rank;
            let scale = l.scale();
            let mut dax = vec![0.0; rank];
            for r in 0..rows {
                let xr = &x[r * n_in..(r + 1) * n_in];
                let axr = &ax[r * rank..(r + 1) * rank];
                let dyr = &dy[r * n_out..(r + 1) * n_out];
                dax.iter_mut().for_each(|v| *v = 0.0);
                for (i, &g) in dyr.iter().enumerate() {
                    if g == 0.0 {
                        continue;
                    }
                    let sg = scale * g;
                    if let Some(db) = grad.lora_b.as_mut() {
                        axpy(sg, axr, &mut db[i * rank..(i + 1) * rank]);
                    }
                    axpy(sg, &l.b[i * rank..(i + 1) * rank], &mut dax);
                }
                if let Some(da) = grad.lora_a.as_mut() {
                    for (k, &g) in dax.iter().enumerate() {
                        axpy(g, xr, &mut da[k * n_in..(k + 1) * n_in]);
                    }
                }
                if let Some(dx) = dx.as_mut() {
                    let dxr = &mut dx[r * n_in..(r + 1) * n_in];
                    for (k, &g) in dax.iter().enumerate() {
                        axpy(g, &l.a[k * n_in..(k + 1) * n_in], dxr);
                    }
                }
            }
        }
        dx
    }
}

/// Gradient buffers for one layer; `None` marks a frozen tensor.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LayerGrad {
    pub weight: Option<Vec<f64>>,
    pub bias: Option<Vec<f64>>,
    pub lora_a: Option<Vec<f64>>,
    pub lora_b: Option<Vec<f64>>,
}

impl LayerGrad {
    pub fn for_base(layer: &Linear) -> Self {
        Self {
            weight: Some(vec![0.0; layer.weight.len()]),
            bias: Some(vec![0.0; layer.bias.len()]),
            ..Default::default()
        }
    }

    pub fn for_lora(lora: &LoraLayer) -> Self {
        Self {
            lora_a: Some(vec![0.0; lora.a.len()]),
            lora_b: Some(vec![0.0; lora.b.len()]),
            ..Default::default()
        }
    }

    pub fn is_frozen(&self) -> bool {
        self.weight.is_none() && self.bias.is_none() && self.lora_a.is_none() && self.lora_b.is_none()
    }
}

/// Dot product with four independent accumulators; the summation order is
/// fixed, so results are reproducible.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let i = c * 4;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in chunks * 4..a.len() {
        s += a[i] * b[i];
    }
    s
}

/// `y += alpha·x`.
#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[inline]
pub fn silu(x: f64) -> f64 {
    x / (1.0 + (-x).exp())
}

#[inline]
pub fn silu_grad(x: f64) -> f64 {
    let s = 1.0 / (1.0 + (-x).exp());
    s * (1.0 + x * (1.0 - s))
}
