//! Low-rank adapters: a frozen weight `W0 (d × k)` plus a trainable delta
//! `(alpha / r)·B·A` with `A (r × k)` and `B (d × r)`.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{ensure, validation, Result};
use crate::generator::linear::dot;
use crate::generator::net::{VelocityNet, LAYER_NAMES};

/// Borrowed row-major matrix.
#[derive(Debug, Clone, Copy)]
pub struct MatrixRef<'a> {
    pub rows: usize,
    pub cols: usize,
    pub data: &'a [f64],
}

impl<'a> MatrixRef<'a> {
    pub fn new(rows: usize, cols: usize, data: &'a [f64]) -> Result<Self> {
        ensure(data.len() == rows * cols, || {
            format!("{} values for a {rows}x{cols} matrix", data.len())
        })?;
        Ok(Self { rows, cols, data })
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.rows)
            .map(|i| dot(&self.data[i * self.cols..(i + 1) * self.cols], x))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoraLayer {
    pub rank: usize,
    pub alpha: f64,
    pub out_dim: usize,
    pub in_dim: usize,
    /// `rank × in_dim`.
    pub a: Vec<f64>,
    /// `out_dim × rank`.
    pub b: Vec<f64>,
    /// Name of the frozen base weight this adapter modifies.
    pub base_ref: String,
}

impl LoraLayer {
    pub fn scale(&self) -> f64 {
        self.alpha / self.rank as f64
    }

    pub fn param_count(&self) -> usize {
        self.a.len() + self.b.len()
    }

    /// `(alpha / r)·B·A`, `out_dim × in_dim`.
    pub fn delta(&self) -> Vec<f64> {
        let (d, k, r) = (self.out_dim, self.in_dim, self.rank);
        let s = self.scale();
        let mut out = vec![0.0; d * k];
        for i in 0..d {
            for m in 0..r {
                let bim = s * self.b[i * r + m];
                if bim == 0.0 {
                    continue;
                }
                let arow = &self.a[m * k..(m + 1) * k];
                for (o, a) in out[i * k..(i + 1) * k].iter_mut().zip(arow) {
                    *o += bim * a;
                }
            }
        }
        out
    }

    fn check_base(&self, w0: &MatrixRef<'_>) -> Result<()> {
        ensure(w0.rows == self.out_dim && w0.cols == self.in_dim, || {
            format!(
                "adapter {} is {}x{} but base weight is {}x{}",
                self.base_ref, self.out_dim, self.in_dim, w0.rows, w0.cols
            )
        })
    }
}

/// Fresh adapter: `A ~ N(0, 1/k)`, `B = 0`, so the initial delta is exactly zero.
pub fn init_lora(d: usize, k: usize, r: usize, alpha: f64, seed: u64) -> Result<LoraLayer> {
    ensure(r >= 1 && r <= d.min(k), || {
        format!("rank {r} is outside [1, min({d}, {k})]")
    })?;
    ensure(alpha.is_finite() && alpha > 0.0, || {
        format!("alpha {alpha} must be positive")
    })?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let std = (1.0 / k as f64).sqrt();
    let a = (0..r * k)
        .map(|_| std * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng))
        .collect();
    Ok(LoraLayer {
        rank: r,
        alpha,
        out_dim: d,
        in_dim: k,
        a,
        b: vec![0.0; d * r],
        base_ref: String::new(),
    })
}

/// `W0·x + (alpha / r)·B·A·x`.
pub fn lora_forward(layer: &LoraLayer, w0: &MatrixRef<'_>, x: &[f64]) -> Result<Vec<f64>> {
    layer.check_base(w0)?;
    ensure(x.len() == layer.in_dim, || {
        format!("input has {} values, expected {}", x.len(), layer.in_dim)
    })?;
    let mut h = w0.matvec(x);
    let r = layer.rank;
    let ax: Vec<f64> = (0..r)
        .map(|m| dot(&layer.a[m * layer.in_dim..(m + 1) * layer.in_dim], x))
        .collect();
    let s = layer.scale();
    for (i, hi) in h.iter_mut().enumerate() {
        *hi += s * dot(&layer.b[i * r..(i + 1) * r], &ax);
    }
    Ok(h)
}

/// `W0 + (alpha / r)·B·A`.
pub fn merge(layer: &LoraLayer, w0: &MatrixRef<'_>) -> Result<Vec<f64>> {
    layer.check_base(w0)?;
    let delta = layer.delta();
    Ok(w0.data.iter().zip(&delta).map(|(w, d)| w + d).collect())
}

/// Which linear maps of the generator receive adapters.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LayerSelector {
    /// Every linear map whose shape admits the requested rank.
    #[default]
    AllLinear,
    /// Exactly these layers; each must exist and admit the rank.
    Names(Vec<String>),
}

/// A frozen base network plus its adapters. Only adapter tensors are trainable.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptedParams {
    pub base: VelocityNet,
    pub adapters: BTreeMap<String, LoraLayer>,
}

impl AdaptedParams {
    pub fn trainable_count(&self) -> usize {
        self.adapters.values().map(|l| l.param_count()).sum()
    }

    pub fn adapter_for(&self, name: &str) -> Option<&LoraLayer> {
        self.adapters.get(name)
    }

    /// Folds every adapter into its base weight.
    pub fn merged(&self) -> Result<VelocityNet> {
        let mut net = self.base.clone();
        for (name, layer) in &self.adapters {
            let lin = net
                .layer_mut(name)
                .ok_or_else(|| validation(format!("adapter targets unknown layer {name}")))?;
            let merged = merge(layer, &MatrixRef::new(lin.out_dim, lin.in_dim, &lin.weight)?)?;
            lin.weight = merged;
        }
        Ok(net)
    }

    /// Adapters in network layer order.
    pub fn ordered(&self) -> impl Iterator<Item = &LoraLayer> {
        LAYER_NAMES.iter().filter_map(|n| self.adapters.get(*n))
    }

    /// Mutable `A` and `B` tensors in network layer order, matching
    /// [`crate::generator::net::Grads::slices`].
    pub fn adapter_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        let mut by_name: BTreeMap<&str, &mut LoraLayer> =
            self.adapters.iter_mut().map(|(k, v)| (k.as_str(), v)).collect();
        for name in LAYER_NAMES {
            if let Some(l) = by_name.remove(name) {
                out.push(&mut l.a);
                out.push(&mut l.b);
            }
        }
        out
    }

    /// Adapter tensors flattened in network layer order (`A` then `B`).
    pub fn flat_adapter_params(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.trainable_count());
        for l in self.ordered() {
            v.extend_from_slice(&l.a);
            v.extend_from_slice(&l.b);
        }
        v
    }

    pub fn set_flat_adapter_params(&mut self, flat: &[f64]) -> Result<()> {
        ensure(flat.len() == self.trainable_count(), || {
            format!(
                "{} values for {} adapter parameters",
                flat.len(),
                self.trainable_count()
            )
        })?;
        let mut off = 0;
        for part in self.adapter_slices_mut() {
            let n = part.len();
            part.copy_from_slice(&flat[off..off + n]);
            off += n;
        }
        Ok(())
    }
}

/// Wraps the selected linear maps of `params` with zero-delta adapters.
pub fn inject(
    params: &VelocityNet,
    selector: &LayerSelector,
    r: usize,
    alpha: f64,
    seed: u64,
) -> Result<AdaptedParams> {
    let names: Vec<String> = match selector {
        LayerSelector::AllLinear => params
            .named_layers()
            .filter(|(_, l)| r <= l.out_dim.min(l.in_dim))
            .map(|(n, _)| n.to_string())
            .collect(),
        LayerSelector::Names(list) => list.clone(),
    };
    ensure(!names.is_empty(), || {
        format!("layer selector {selector:?} matches no layer at rank {r}")
    })?;
    let mut adapters = BTreeMap::new();
    for name in names {
        let idx = params
            .layer_index(&name)
            .ok_or_else(|| validation(format!("selector names unknown layer {name:?}")))?;
        let lin = &params.layers[idx];
        let mut layer = init_lora(
            lin.out_dim,
            lin.in_dim,
            r,
            alpha,
            seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(idx as u64),
        )?;
        layer.base_ref = name.clone();
        adapters.insert(name, layer);
    }
    Ok(AdaptedParams {
        base: params.clone(),
        adapters,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn explicit_two_by_two_example() {
        let w0 = [1.0, 0.0, 0.0, 1.0];
        let layer = LoraLayer {
            rank: 1,
            alpha: 1.0,
            out_dim: 2,
            in_dim: 2,
            a: vec![1.0, 0.0],
            b: vec![1.0, 0.0],
            base_ref: "w".into(),
        };
        let w = MatrixRef::new(2, 2, &w0).unwrap();
        assert_eq!(lora_forward(&layer, &w, &[1.0, 1.0]).unwrap(), vec![2.0, 1.0]);
    }

    #[test]
    fn fresh_layer_is_identity_delta() {
        let l = init_lora(5, 4, 3, 3.0, 7).unwrap();
        assert!(l.b.iter().all(|v| *v == 0.0));
        let w0: Vec<f64> = (0..20).map(|i| i as f64 * 0.1).collect();
        let w = MatrixRef::new(5, 4, &w0).unwrap();
        let x = [0.3, -1.0, 2.0, 0.5];
        assert_eq!(lora_forward(&l, &w, &x).unwrap(), w.matvec(&x));
        assert_eq!(merge(&l, &w).unwrap(), w0);
    }

    #[test]
    fn rank_bounds() {
        assert!(init_lora(4, 8, 0, 1.0, 0).is_err());
        assert!(init_lora(4, 8, 5, 1.0, 0).is_err());
        assert!(init_lora(4, 8, 4, 1.0, 0).is_ok());
        assert_eq!(init_lora(16, 32, 16, 16.0, 1).unwrap().scale(), 1.0);
    }

    #[test]
    fn same_seed_same_a() {
        assert_eq!(
            init_lora(6, 6, 2, 2.0, 11).unwrap(),
            init_lora(6, 6, 2, 2.0, 11).unwrap()
        );
        assert_ne!(
            init_lora(6, 6, 2, 2.0, 11).unwrap().a,
            init_lora(6, 6, 2, 2.0, 12).unwrap().a
        );
    }

    #[test]
    fn shape_mismatch_rejected() {
        let l = init_lora(3, 3, 1, 1.0, 0).unwrap();
        let w0 = [0.0; 6];
        let w = MatrixRef::new(2, 3, &w0).unwrap();
        assert!(lora_forward(&l, &w, &[0.0; 3]).is_err());
        assert!(merge(&l, &w).is_err());
        let w0 = [0.0; 9];
        let w = MatrixRef::new(3, 3, &w0).unwrap();
        assert!(lora_forward(&l, &w, &[0.0; 2]).is_err());
    }

    #[test]
    fn merge_minus_base_is_scaled_ba() {
        let mut l = init_lora(3, 4, 2, 5.0, 3).unwrap();
        l.b = vec![0.5, -1.0, 2.0, 0.0, 1.5, 0.25];
        let w0: Vec<f64> = (0..12).map(|i| (i as f64).cos()).collect();
        let merged = merge(&l, &MatrixRef::new(3, 4, &w0).unwrap()).unwrap();
        let s = 5.0 / 2.0;
        for i in 0..3 {
            for j in 0..4 {
                let ba: f64 = (0..2).map(|m| l.b[i * 2 + m] * l.a[m * 4 + j]).sum();
                assert!((merged[i * 4 + j] - w0[i * 4 + j] - s * ba).abs() < 1e-12);
            }
        }
    }
}
