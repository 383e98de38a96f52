//! Forward Euler integration of the learned velocity field.

use super::flow::{NoiseDraw, VelocityField};
use super::tensor::{VideoShape, VideoTensor};
use super::text::TextEmbedding;
use crate::error::{ensure, Error, Result};

/// Integrates `dx/dt = u(x, t, c)` from `t = 0` to `1` with `steps` uniform
/// steps, starting from the noise draw for `seed`. The result is unclamped.
pub fn euler_sample<V: VelocityField + ?Sized>(
    field: &V,
    c: &TextEmbedding,
    shape: VideoShape,
    steps: usize,
    seed: u64,
) -> Result<VideoTensor> {
    ensure(steps >= 1, || "euler_sample needs at least one step".into())?;
    let mut x = NoiseDraw::from_seed(shape, seed).x0;
    let dt = 1.0 / steps as f64;
    for k in 0..steps {
        let t = k as f64 * dt;
        let u = field.velocity(&x, t, c)?;
        u.same_shape(&x)?;
        for (xi, ui) in x.data.iter_mut().zip(&u.data) {
            *xi += dt * ui;
        }
        if !x.is_finite() {
            return Err(Error::Numeric(format!(
                "sampler state became non-finite at step {k} of {steps} (t = {t:.4})"
            )));
        }
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generator::text::encode_text;

    fn zero_field(x: &VideoTensor, _t: f64, _c: &TextEmbedding) -> Result<VideoTensor> {
        Ok(VideoTensor::zeros(x.shape))
    }

    #[test]
    fn zero_field_returns_noise() {
        let shape = VideoShape::new(2, 4, 4, 3);
        let c = encode_text("x", 8).unwrap();
        let out = euler_sample(&zero_field, &c, shape, 7, 42).unwrap();
        assert_eq!(out, NoiseDraw::from_seed(shape, 42).x0);
    }

    #[test]
    fn constant_field_integrates_exactly() {
        let shape = VideoShape::new(1, 2, 2, 1);
        let c = encode_text("x", 8).unwrap();
        let field = |x: &VideoTensor, _t: f64, _c: &TextEmbedding| Ok(VideoTensor::filled(x.shape, 2.0));
        let out = euler_sample(&field, &c, shape, 4, 1).unwrap();
        let x0 = NoiseDraw::from_seed(shape, 1).x0;
        for (a, b) in out.data.iter().zip(&x0.data) {
            assert!((a - b - 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_steps_rejected() {
        let c = encode_text("x", 8).unwrap();
        assert!(euler_sample(&zero_field, &c, VideoShape::new(1, 2, 2, 1), 0, 1).is_err());
    }

    #[test]
    fn blow_up_is_reported() {
        let c = encode_text("x", 8).unwrap();
        let field = |x: &VideoTensor, _t: f64, _c: &TextEmbedding| Ok(VideoTensor::filled(x.shape, f64::INFINITY));
        let err = euler_sample(&field, &c, VideoShape::new(1, 2, 2, 1), 3, 1).unwrap_err();
        assert!(matches!(err, Error::Numeric(_)));
    }
}
