//! Flow-matching primitives: the linear noise/data path, its velocity, the
//! logit-normal timestep and the squared-error objective.
//!
//! Pre-training and sparse tuning both build their batches from these
//! functions, so the objective is defined in exactly one place.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::tensor::{VideoShape, VideoTensor};
use super::text::TextEmbedding;
use crate::error::{ensure, Error, Result};

/// `t·x1 + (1−t)·x0`.
pub fn interpolate(x0: &VideoTensor, x1: &VideoTensor, t: f64) -> Result<VideoTensor> {
    x0.same_shape(x1)?;
    ensure((0.0..=1.0).contains(&t), || format!("t = {t} is outside [0, 1]"))?;
    let data = x0
        .data
        .iter()
        .zip(&x1.data)
        .map(|(a, b)| t * b + (1.0 - t) * a)
        .collect();
    Ok(VideoTensor { shape: x0.shape, data })
}

/// `x1 − x0`, the constant time derivative of [`interpolate`].
pub fn target_velocity(x0: &VideoTensor, x1: &VideoTensor) -> Result<VideoTensor> {
    x0.same_shape(x1)?;
    let data = x0.data.iter().zip(&x1.data).map(|(a, b)| b - a).collect();
    Ok(VideoTensor { shape: x0.shape, data })
}

pub fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Logit-normal draw: `sigmoid(z)`, `z ~ N(0, 1)`. Clamped away from the
/// endpoints so the result is always strictly inside (0, 1).
pub fn sample_timestep<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let z: f64 = rng.sample(StandardNormal);
    sigmoid(z).clamp(f64::EPSILON, 1.0 - f64::EPSILON)
}

/// A standard normal noise sample that can be regenerated from its seed.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseDraw {
    pub x0: VideoTensor,
    pub seed: u64,
}

impl NoiseDraw {
    pub fn from_seed(shape: VideoShape, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self {
            x0: VideoTensor::randn(shape, &mut rng),
            seed,
        }
    }
}

/// Anything that predicts a velocity `u(x_t, t, c)`.
pub trait VelocityField {
    fn velocity(&self, x_t: &VideoTensor, t: f64, c: &TextEmbedding) -> Result<VideoTensor>;
}

impl<F> VelocityField for F
where
    F: Fn(&VideoTensor, f64, &TextEmbedding) -> Result<VideoTensor>,
{
    fn velocity(&self, x_t: &VideoTensor, t: f64, c: &TextEmbedding) -> Result<VideoTensor> {
        self(x_t, t, c)
    }
}

/// One term of the flow-matching expectation.
#[derive(Debug, Clone, Copy)]
pub struct FlowSample<'a> {
    pub x1: &'a VideoTensor,
    pub c: &'a TextEmbedding,
    pub x0: &'a VideoTensor,
    pub t: f64,
}

impl FlowSample<'_> {
    pub fn x_t(&self) -> Result<VideoTensor> {
        interpolate(self.x0, self.x1, self.t)
    }

    pub fn target(&self) -> Result<VideoTensor> {
        target_velocity(self.x0, self.x1)
    }
}

/// Mean of `(u − v)²` over all samples and elements.
pub fn fm_loss_batch<V: VelocityField + ?Sized>(field: &V, batch: &[FlowSample<'_>]) -> Result<f64> {
    ensure(!batch.is_empty(), || "empty flow-matching batch".into())?;
    let mut total = 0.0;
    for (i, s) in batch.iter().enumerate() {
        let x_t = s.x_t()?;
        let v = s.target()?;
        let u = field.velocity(&x_t, s.t, s.c)?;
        u.same_shape(&v)?;
        if !u.is_finite() {
            let bad = u.data.iter().filter(|x| !x.is_finite()).count();
            return Err(Error::Numeric(format!(
                "forward pass produced {bad} non-finite values (batch item {i}, t = {:.4})",
                s.t
            )));
        }
        total += super::tensor::mean_sq_diff(&u.data, &v.data);
    }
    Ok(total / batch.len() as f64)
}

/// Loss for a single target `x1` with caption `c` over several `(x0, t)` draws.
pub fn fm_loss<V: VelocityField + ?Sized>(
    field: &V,
    x1: &VideoTensor,
    c: &TextEmbedding,
    draws: &[(VideoTensor, f64)],
) -> Result<f64> {
    let batch: Vec<_> = draws.iter().map(|(x0, t)| FlowSample { x1, c, x0, t: *t }).collect();
    fm_loss_batch(field, &batch)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vec1(v: &[f64]) -> VideoTensor {
        VideoTensor::from_vec(VideoShape::new(1, 1, v.len(), 1), v.to_vec()).unwrap()
    }

    #[test]
    fn endpoints_and_midpoint() {
        let x0 = vec1(&[0.0, 0.0]);
        let x1 = vec1(&[2.0, 4.0]);
        assert_eq!(interpolate(&x0, &x1, 0.0).unwrap(), x0);
        assert_eq!(interpolate(&x0, &x1, 1.0).unwrap(), x1);
        assert_eq!(interpolate(&x0, &x1, 0.5).unwrap().data, vec![1.0, 2.0]);
        assert!(interpolate(&x0, &x1, 1.5).is_err());
        assert!(interpolate(&x0, &vec1(&[1.0]), 0.5).is_err());
    }

    #[test]
    fn velocity_cases() {
        let x = vec1(&[1.5, -2.0]);
        assert!(target_velocity(&x, &x).unwrap().data.iter().all(|v| *v == 0.0));
        assert_eq!(target_velocity(&vec1(&[1.0]), &vec1(&[3.0])).unwrap().data, vec![2.0]);
        assert!(target_velocity(&x, &vec1(&[1.0])).is_err());
    }

    #[test]
    fn timestep_in_open_interval() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..10_000 {
            let t = sample_timestep(&mut rng);
            assert!(t > 0.0 && t < 1.0);
        }
    }

    #[test]
    fn noise_draw_reproducible() {
        let s = VideoShape::new(2, 3, 4, 3);
        assert_eq!(NoiseDraw::from_seed(s, 9), NoiseDraw::from_seed(s, 9));
        assert_ne!(NoiseDraw::from_seed(s, 9).x0, NoiseDraw::from_seed(s, 10).x0);
    }
}
