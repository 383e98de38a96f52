use image::RgbImage;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{ensure, Error, Result};

/// Frames × height × width × channels, row-major, nominally in [-1, 1].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub struct VideoShape {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl VideoShape {
    pub fn new(frames: usize, height: usize, width: usize, channels: usize) -> Self {
        Self {
            frames,
            height,
            width,
            channels,
        }
    }

    pub fn numel(&self) -> usize {
        self.frames * self.frame_len()
    }

    pub fn frame_len(&self) -> usize {
        self.height * self.width * self.channels
    }

    /// Frames beyond the first (the `T` in `1+T`).
    pub fn extra_frames(&self) -> usize {
        self.frames.saturating_sub(1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VideoTensor {
    pub shape: VideoShape,
    pub data: Vec<f64>,
}

impl VideoTensor {
    pub fn zeros(shape: VideoShape) -> Self {
        Self {
            shape,
            data: vec![0.0; shape.numel()],
        }
    }

    pub fn filled(shape: VideoShape, value: f64) -> Self {
        Self {
            shape,
            data: vec![value; shape.numel()],
        }
    }

    pub fn from_vec(shape: VideoShape, data: Vec<f64>) -> Result<Self> {
        ensure(data.len() == shape.numel(), || {
            format!("{} values for shape {shape:?}", data.len())
        })?;
        ensure(shape.frames >= 1, || "a video needs at least one frame".into())?;
        Ok(Self { shape, data })
    }

    /// Standard normal draw of the given shape.
    pub fn randn<R: Rng + ?Sized>(shape: VideoShape, rng: &mut R) -> Self {
        let data = (0..shape.numel()).map(|_| rng.sample(StandardNormal)).collect();
        Self { shape, data }
    }

    #[inline]
    pub fn index(&self, f: usize, y: usize, x: usize, c: usize) -> usize {
        ((f * self.shape.height + y) * self.shape.width + x) * self.shape.channels + c
    }

    pub fn get(&self, f: usize, y: usize, x: usize, c: usize) -> f64 {
        self.data[self.index(f, y, x, c)]
    }

    pub fn frame(&self, f: usize) -> &[f64] {
        let n = self.shape.frame_len();
        &self.data[f * n..(f + 1) * n]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn check_finite(&self, what: &str) -> Result<()> {
        match self.data.iter().position(|v| !v.is_finite()) {
            None => Ok(()),
            Some(i) => Err(Error::Numeric(format!(
                "{what}: non-finite value {} at flat index {i}",
                self.data[i]
            ))),
        }
    }

    pub fn same_shape(&self, other: &Self) -> Result<()> {
        ensure(self.shape == other.shape, || {
            format!("shape mismatch: {:?} vs {:?}", self.shape, other.shape)
        })
    }

    pub fn clamped(&self) -> Self {
        Self {
            shape: self.shape,
            data: self.data.iter().map(|v| v.clamp(-1.0, 1.0)).collect(),
        }
    }

    pub fn mse(&self, other: &Self) -> Result<f64> {
        self.same_shape(other)?;
        Ok(mean_sq_diff(&self.data, &other.data))
    }

    /// Single frame `f` as its own one-frame video.
    pub fn frame_video(&self, f: usize) -> Self {
        Self {
            shape: VideoShape {
                frames: 1,
                ..self.shape
            },
            data: self.frame(f).to_vec(),
        }
    }

    /// Frame `f` quantized to 8-bit (values clamped to [-1, 1] first).
    pub fn frame_to_image(&self, f: usize) -> Result<RgbImage> {
        ensure(self.shape.channels == 3, || "only RGB frames can be exported".into())?;
        let (h, w) = (self.shape.height as u32, self.shape.width as u32);
        let frame = self.frame(f);
        let bytes: Vec<u8> = frame.iter().map(|&v| unit_to_byte(v)).collect();
        RgbImage::from_raw(w, h, bytes).ok_or_else(|| Error::Validation("frame buffer size mismatch".into()))
    }

    pub fn from_frames(frames: &[RgbImage]) -> Result<Self> {
        ensure(!frames.is_empty(), || "no frames".into())?;
        let (w, h) = frames[0].dimensions();
        let mut data = Vec::with_capacity(frames.len() * (w * h * 3) as usize);
        for img in frames {
            ensure(img.dimensions() == (w, h), || "frames differ in size".into())?;
            data.extend(img.as_raw().iter().map(|&b| byte_to_unit(b)));
        }
        Self::from_vec(VideoShape::new(frames.len(), h as usize, w as usize, 3), data)
    }
}

/// Linear map [0, 255] → [-1, 1].
#[inline]
pub fn byte_to_unit(b: u8) -> f64 {
    b as f64 / 127.5 - 1.0
}

/// Inverse of [`byte_to_unit`] with clamping and rounding.
#[inline]
pub fn unit_to_byte(v: f64) -> u8 {
    ((v.clamp(-1.0, 1.0) + 1.0) * 127.5).round() as u8
}

pub fn mean_sq_diff(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    if a.is_empty() {
        return 0.0;
    }
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn byte_map_roundtrip() {
        for b in 0..=255u8 {
            assert_eq!(unit_to_byte(byte_to_unit(b)), b);
        }
        assert_eq!(byte_to_unit(0), -1.0);
        assert_eq!(byte_to_unit(255), 1.0);
    }

    #[test]
    fn frames_roundtrip() {
        let mut img = RgbImage::new(8, 9);
        img.put_pixel(3, 4, image::Rgb([10, 200, 255]));
        let v = VideoTensor::from_frames(&[img.clone(), img.clone()]).unwrap();
        assert_eq!(v.shape, VideoShape::new(2, 9, 8, 3));
        assert_eq!(v.frame_to_image(1).unwrap(), img);
    }
}
