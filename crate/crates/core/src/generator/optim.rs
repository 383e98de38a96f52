//! First-order optimizers over lists of parameter tensors.

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    #[default]
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimConfig {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            kind: OptimizerKind::Adam,
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl OptimConfig {
    pub fn sgd(lr: f64) -> Self {
        Self {
            kind: OptimizerKind::Sgd,
            lr,
            ..Self::default()
        }
    }

    pub fn adam(lr: f64) -> Self {
        Self { lr, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        ensure(self.lr.is_finite() && self.lr >= 0.0, || {
            format!("learning rate {} must be finite and non-negative", self.lr)
        })?;
        ensure(
            (0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2),
            || "Adam betas must lie in [0, 1)".into(),
        )?;
        ensure(self.eps > 0.0, || "Adam epsilon must be positive".into())
    }
}

/// Optimizer state. Tensor order must stay the same across calls to [`Optimizer::step`].
#[derive(Debug, Clone)]
pub struct Optimizer {
    pub config: OptimConfig,
    pub steps_taken: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Optimizer {
    pub fn new(config: OptimConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            steps_taken: 0,
            m: Vec::new(),
            v: Vec::new(),
        })
    }

    pub fn step(&mut self, mut params: Vec<&mut [f64]>, grads: &[&[f64]]) -> Result<()> {
        ensure(params.len() == grads.len(), || {
            format!("{} parameter tensors but {} gradients", params.len(), grads.len())
        })?;
        for (p, g) in params.iter().zip(grads) {
            ensure(p.len() == g.len(), || "parameter/gradient size mismatch".into())?;
        }
        let c = self.config.clone();
        self.steps_taken += 1;
        match c.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.iter_mut().zip(grads) {
                    for (pi, gi) in p.iter_mut().zip(g.iter()) {
                        *pi -= c.lr * gi;
                    }
                }
            }
            OptimizerKind::Adam => {
                if self.m.is_empty() {
                    self.m = grads.iter().map(|g| vec![0.0; g.len()]).collect();
                    self.v = self.m.clone();
                }
                ensure(self.m.len() == grads.len(), || "optimizer state shape changed".into())?;
                let n = self.steps_taken as i32;
                let bc1 = 1.0 - c.beta1.powi(n);
                let bc2 = 1.0 - c.beta2.powi(n);
                for ((p, g), (m, v)) in params
                    .iter_mut()
                    .zip(grads)
                    .zip(self.m.iter_mut().zip(self.v.iter_mut()))
                {
                    for i in 0..p.len() {
                        let gi = g[i];
                        m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * gi;
                        v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * gi * gi;
                        let mh = m[i] / bc1;
                        let vh = v[i] / bc2;
                        p[i] -= c.lr * mh / (vh.sqrt() + c.eps);
                    }
                }
            }
        }
        Ok(())
    }
}
