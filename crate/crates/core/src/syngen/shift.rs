//! Acquisition-batch shift applied to holdout images.

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::BBox;
use crate::error::{Error, Result};
use crate::image::GrayImage;
use crate::rng;

/// Minimum part/background contrast that must survive a shift.
pub const MIN_SHIFTED_CONTRAST: u8 = 20;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchShift {
    /// Added to every pixel.
    pub brightness_delta: i32,
    /// Extra per-pixel Gaussian noise.
    pub noise_sigma: f64,
    /// Box-blur radius.
    pub blur_radius: u32,
    /// Maximum whole-pixel translation along each axis.
    pub translation_jitter: u32,
}

impl Default for BatchShift {
    fn default() -> Self {
        Self {
            brightness_delta: 12,
            noise_sigma: 6.0,
            blur_radius: 1,
            translation_jitter: 2,
        }
    }
}

impl BatchShift {
    pub fn none() -> Self {
        Self {
            brightness_delta: 0,
            noise_sigma: 0.0,
            blur_radius: 0,
            translation_jitter: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.brightness_delta.abs() > 64 {
            return Err(Error::InvalidArgument(format!(
                "brightness_delta {} exceeds ±64",
                self.brightness_delta
            )));
        }
        if !(self.noise_sigma.is_finite() && (0.0..=20.0).contains(&self.noise_sigma)) {
            return Err(Error::InvalidArgument(format!(
                "noise_sigma {} outside [0, 20]",
                self.noise_sigma
            )));
        }
        if self.blur_radius > 3 {
            return Err(Error::InvalidArgument(format!(
                "blur_radius {} exceeds 3",
                self.blur_radius
            )));
        }
        if self.translation_jitter > super::part::MARGIN_PX as u32 {
            return Err(Error::InvalidArgument(format!(
                "translation_jitter {} exceeds the {} px part margin",
                self.translation_jitter,
                super::part::MARGIN_PX
            )));
        }
        Ok(())
    }

    /// Checks that a part with these intensities stays distinguishable.
    pub fn check_contrast(&self, base: u8, background: u8) -> Result<()> {
        let shifted = |v: u8| (i32::from(v) + self.brightness_delta).clamp(0, 255);
        let c = (shifted(base) - shifted(background)).unsigned_abs();
        if c < u32::from(MIN_SHIFTED_CONTRAST) {
            return Err(Error::InvalidArgument(format!(
                "shifted contrast {c} below {MIN_SHIFTED_CONTRAST}"
            )));
        }
        Ok(())
    }

    /// Applies translation, blur, brightness and noise in that order. Boxes
    /// follow the translation and are clipped to the frame.
    pub fn apply(
        &self,
        image: &GrayImage,
        boxes: &[BBox],
        background_intensity: u8,
        seed: u64,
    ) -> (GrayImage, Vec<BBox>) {
        let mut rng = rng::from_seed(seed);
        let j = self.translation_jitter as i64;
        let (dx, dy) = if j > 0 {
            (rng.gen_range(-j..=j), rng.gen_range(-j..=j))
        } else {
            (0, 0)
        };
        let mut out = image.translate(dx, dy, background_intensity);
        out = out.box_blur(self.blur_radius as usize);
        let noise = (self.noise_sigma > 0.0)
            .then(|| Normal::new(0.0, self.noise_sigma).ok())
            .flatten();
        let delta = f64::from(self.brightness_delta);
        for v in out.pixels_mut() {
            let mut x = f64::from(*v) + delta;
            if let Some(n) = &noise {
                x += n.sample(&mut rng);
            }
            *v = x.round().clamp(0.0, 255.0) as u8;
        }
        let (w, h) = (image.width(), image.height());
        let boxes = boxes
            .iter()
            .filter_map(|b| b.translated(dx, dy).clipped(w, h))
            .collect();
        (out, boxes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_shift_is_noop() {
        let img = GrayImage::from_fn(16, 16, |x, y| (x * 7 + y * 3) as u8);
        let b = [BBox::new(2, 2, 5, 5)];
        let (out, boxes) = BatchShift::none().apply(&img, &b, 0, 3);
        assert_eq!(out, img);
        assert_eq!(boxes, b);
    }

    #[test]
    fn brightness_only_shifts_levels() {
        let img = GrayImage::new(8, 8, 100);
        let s = BatchShift {
            brightness_delta: 12,
            ..BatchShift::none()
        };
        let (out, _) = s.apply(&img, &[], 0, 1);
        assert!(out.pixels().iter().all(|&v| v == 112));
    }

    #[test]
    fn boxes_follow_translation() {
        let mut img = GrayImage::new(32, 32, 0);
        img.set(10, 10, 255);
        let s = BatchShift {
            translation_jitter: 3,
            ..BatchShift::none()
        };
        for seed in 0..20 {
            let (out, boxes) = s.apply(&img, &[BBox::new(10, 10, 11, 11)], 0, seed);
            let b = boxes[0];
            assert_eq!(out.get(b.x_min as usize, b.y_min as usize), 255);
        }
    }

    #[test]
    fn limits_are_enforced() {
        assert!(BatchShift::default().validate().is_ok());
        let bad = BatchShift {
            translation_jitter: 9,
            ..BatchShift::default()
        };
        assert!(bad.validate().is_err());
        assert!(BatchShift::default().check_contrast(200, 60).is_ok());
        let dark = BatchShift {
            brightness_delta: 64,
            ..BatchShift::none()
        };
        assert!(dark.check_contrast(250, 225).is_err());
    }
}
