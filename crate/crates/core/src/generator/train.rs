//! Loss/gradient evaluation, single optimizer steps and the pre-training loop.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::flow::{fm_loss_batch, sample_timestep, FlowSample, VelocityField};
use super::net::{AdapterMap, Grads, Trainable, VelocityNet};
use super::optim::{OptimConfig, Optimizer};
use super::tensor::VideoTensor;
use super::text::{encode_text, TextEmbedding};
use crate::error::{ensure, Error, Result};
use crate::lora::AdaptedParams;

/// A caption and the video it describes, plus optional paraphrase embeddings
/// that training draws from instead of the canonical caption.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainItem {
    pub caption: String,
    pub c: TextEmbedding,
    pub x1: VideoTensor,
    pub variants: Vec<TextEmbedding>,
}

impl TrainItem {
    pub fn new(caption: &str, x1: VideoTensor, text_dim: usize) -> Result<Self> {
        Ok(Self {
            caption: caption.to_string(),
            c: encode_text(caption, text_dim)?,
            x1,
            variants: Vec::new(),
        })
    }

    pub fn with_variants(mut self, captions: &[String]) -> Result<Self> {
        let dim = self.c.dim();
        self.variants = captions.iter().map(|c| encode_text(c, dim)).collect::<Result<_>>()?;
        Ok(self)
    }
}

/// Owned `(x0, t)` draws for a list of item indices.
#[derive(Debug, Clone)]
pub struct Draws {
    pub items: Vec<usize>,
    pub x0: Vec<VideoTensor>,
    pub t: Vec<f64>,
    /// Caption variant per draw; `None` selects the canonical caption.
    pub variant: Vec<Option<usize>>,
}

impl Draws {
    /// Canonical captions only.
    pub fn sample<R: Rng + ?Sized>(records: &[TrainItem], items: Vec<usize>, rng: &mut R) -> Self {
        Self::sample_with(records, items, rng, false)
    }

    /// With `augment`, items that carry paraphrases use a uniformly drawn one.
    pub fn sample_with<R: Rng + ?Sized>(records: &[TrainItem], items: Vec<usize>, rng: &mut R, augment: bool) -> Self {
        let mut x0 = Vec::with_capacity(items.len());
        let mut t = Vec::with_capacity(items.len());
        let mut variant = Vec::with_capacity(items.len());
        for &i in &items {
            x0.push(VideoTensor::randn(records[i].x1.shape, rng));
            t.push(sample_timestep(rng));
            let n = records[i].variants.len();
            variant.push((augment && n > 0).then(|| rng.random_range(0..n)));
        }
        Self { items, x0, t, variant }
    }

    pub fn batch<'a>(&'a self, records: &'a [TrainItem]) -> Vec<FlowSample<'a>> {
        self.items
            .iter()
            .zip(self.x0.iter().zip(&self.t))
            .zip(&self.variant)
            .map(|((&i, (x0, &t)), v)| FlowSample {
                x1: &records[i].x1,
                c: v.map_or(&records[i].c, |k| &records[i].variants[k]),
                x0,
                t,
            })
            .collect()
    }
}

fn non_finite(what: &str, data: &[f64]) -> Error {
    let bad = data.iter().filter(|v| !v.is_finite()).count();
    Error::Numeric(format!("{what}: {bad} of {} values are non-finite", data.len()))
}

/// Flow-matching loss over `batch` and its gradient with respect to the
/// tensors selected by `mode`.
pub fn loss_and_grad(
    net: &VelocityNet,
    adapters: Option<&AdapterMap>,
    batch: &[FlowSample<'_>],
    mode: Trainable,
) -> Result<(f64, Grads)> {
    ensure(!batch.is_empty(), || "empty flow-matching batch".into())?;
    let mut grads = Grads::zeros(net, adapters, mode);
    let mut total = 0.0;
    let nb = batch.len() as f64;
    for s in batch {
        let x_t = s.x_t()?;
        let v = s.target()?;
        let (u, cache) = net.forward(adapters, &x_t, s.t, s.c)?;
        if !u.is_finite() {
            return Err(non_finite(&format!("forward pass at t = {:.4}", s.t), &u.data));
        }
        let n = u.data.len() as f64;
        let mut sq = 0.0;
        let du: Vec<f64> = u
            .data
            .iter()
            .zip(&v.data)
            .map(|(a, b)| {
                let d = a - b;
                sq += d * d;
                2.0 * d / (n * nb)
            })
            .collect();
        total += sq / n;
        net.backward(adapters, &cache, s.c, &du, &mut grads);
    }
    if !grads.is_finite() {
        return Err(non_finite("gradient", &grads.flatten()));
    }
    Ok((total / nb, grads))
}

/// One optimizer step on the base weights. The parameters are left untouched
/// when the loss or gradient is non-finite.
pub fn train_step(net: &mut VelocityNet, opt: &mut Optimizer, batch: &[FlowSample<'_>]) -> Result<f64> {
    let (loss, grads) = loss_and_grad(net, None, batch, Trainable::Base)?;
    opt.step(net.param_slices_mut(), &grads.slices())?;
    Ok(loss)
}

/// One optimizer step on adapter tensors only; the base network is read-only.
pub fn adapter_step(params: &mut AdaptedParams, opt: &mut Optimizer, batch: &[FlowSample<'_>]) -> Result<f64> {
    let (loss, grads) = loss_and_grad(&params.base, Some(&params.adapters), batch, Trainable::Adapters)?;
    opt.step(params.adapter_slices_mut(), &grads.slices())?;
    Ok(loss)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub optimizer: OptimConfig,
    pub seed: u64,
    /// `(x0, t)` draws per item in the fixed evaluation set.
    pub eval_draws: usize,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            steps: 1000,
            batch_size: 4,
            optimizer: OptimConfig::adam(2e-3),
            seed: 0,
            eval_draws: 2,
        }
    }
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<()> {
        ensure(self.steps >= 1, || "pretraining needs at least one step".into())?;
        ensure(self.batch_size >= 1, || "batch_size must be positive".into())?;
        ensure(self.eval_draws >= 1, || "eval_draws must be positive".into())?;
        self.optimizer.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainReport {
    pub initial_eval_loss: f64,
    pub final_eval_loss: f64,
    pub step_losses: Vec<f64>,
    pub seconds: f64,
}

/// A fixed set of draws, `per_item` for every item, reproducible from `seed`.
pub fn eval_draws(items: &[TrainItem], per_item: usize, seed: u64) -> Draws {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let idx = (0..items.len())
        .flat_map(|i| std::iter::repeat_n(i, per_item))
        .collect();
    Draws::sample(items, idx, &mut rng)
}

pub fn eval_loss<V: VelocityField + ?Sized>(field: &V, items: &[TrainItem], draws: &Draws) -> Result<f64> {
    fm_loss_batch(field, &draws.batch(items))
}

/// Trains base weights on `items`, visiting them in reshuffled epochs.
pub fn pretrain(
    net: &mut VelocityNet,
    items: &[TrainItem],
    cfg: &PretrainConfig,
    mut on_step: impl FnMut(usize, f64),
) -> Result<PretrainReport> {
    cfg.validate()?;
    ensure(!items.is_empty(), || "empty training set".into())?;
    let start = std::time::Instant::now();
    let eval = eval_draws(items, cfg.eval_draws, cfg.seed ^ 0x5eed_e7a1);
    let initial_eval_loss = eval_loss(net, items, &eval)?;
    let mut opt = Optimizer::new(cfg.optimizer.clone())?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = Vec::new();
    let mut step_losses = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let mut idx = Vec::with_capacity(cfg.batch_size);
        while idx.len() < cfg.batch_size {
            if order.is_empty() {
                order = (0..items.len()).collect();
                order.shuffle(&mut rng);
            }
            idx.push(order.pop().expect("refilled above"));
        }
        let draws = Draws::sample_with(items, idx, &mut rng, true);
        let loss = train_step(net, &mut opt, &draws.batch(items))?;
        step_losses.push(loss);
        on_step(step, loss);
    }
    let final_eval_loss = eval_loss(net, items, &eval)?;
    Ok(PretrainReport {
        initial_eval_loss,
        final_eval_loss,
        step_losses,
        seconds: start.elapsed().as_secs_f64(),
    })
}
