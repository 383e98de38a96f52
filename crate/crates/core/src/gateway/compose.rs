use image::RgbImage;

use crate::error::{ensure, Result};

/// Stitches images left to right in chain order.
pub fn compose_chain_image(images: &[&RgbImage]) -> Result<RgbImage> {
    ensure(!images.is_empty(), || "cannot compose an empty chain".into())?;
    let h = images[0].height();
    ensure(images.iter().all(|i| i.height() == h), || {
        let hs: Vec<u32> = images.iter().map(|i| i.height()).collect();
        format!("chain images have mixed heights {hs:?}")
    })?;
    let w: u32 = images.iter().map(|i| i.width()).sum();
    let mut out = RgbImage::new(w, h);
    let mut x0 = 0;
    for img in images {
        for (x, y, p) in img.enumerate_pixels() {
            out.put_pixel(x0 + x, y, *p);
        }
        x0 += img.width();
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::Rgb;

    fn ramp(w: u32, h: u32, seed: u8) -> RgbImage {
        RgbImage::from_fn(w, h, |x, y| Rgb([seed, x as u8, y as u8]))
    }

    #[test]
    fn identity_and_shape() {
        let a = ramp(64, 64, 1);
        assert_eq!(compose_chain_image(&[&a]).unwrap(), a);
        let b = ramp(64, 64, 2);
        let ab = compose_chain_image(&[&a, &b]).unwrap();
        assert_eq!((ab.height(), ab.width()), (64, 128));
    }

    #[test]
    fn index_mapping() {
        let (a, b, c) = (ramp(10, 8, 1), ramp(12, 8, 2), ramp(9, 8, 3));
        let abc = compose_chain_image(&[&a, &b, &c]).unwrap();
        assert_eq!(abc.get_pixel(10 + 3, 0), b.get_pixel(3, 0));
        assert_eq!(abc.get_pixel(22 + 4, 5), c.get_pixel(4, 5));
        let ab = compose_chain_image(&[&a, &b]).unwrap();
        assert_eq!(compose_chain_image(&[&ab, &c]).unwrap(), abc);
    }

    #[test]
    fn mixed_heights_rejected() {
        let (a, b) = (ramp(8, 8, 1), ramp(8, 9, 1));
        assert!(compose_chain_image(&[&a, &b]).is_err());
        assert!(compose_chain_image(&[]).is_err());
    }
}
