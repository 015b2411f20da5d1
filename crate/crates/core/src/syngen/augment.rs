//! Label-preserving augmentations with matching box transforms.

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::{BBox, ImageSample};
use crate::error::{Error, Result};
use crate::image::GrayImage;
use crate::rng;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "op")]
pub enum AugmentOp {
    /// `k` clockwise quarter turns.
    Rotate90k { k: u32 },
    FlipH,
    FlipV,
    GaussianNoise { sigma: f64 },
    Illumination { gain: f64, bias: f64 },
}

impl AugmentOp {
    pub fn is_geometric(&self) -> bool {
        matches!(self, AugmentOp::Rotate90k { .. } | AugmentOp::FlipH | AugmentOp::FlipV)
    }

    /// Maps a box through the op for an image of `width x height`.
    pub fn map_box(&self, b: &BBox, width: usize, height: usize) -> BBox {
        let (w, h) = (width as i64, height as i64);
        match *self {
            AugmentOp::Rotate90k { k } => {
                let (mut b, mut w, mut h) = (*b, w, h);
                for _ in 0..(k % 4) {
                    b = BBox::new(h - b.y_max, b.x_min, h - b.y_min, b.x_max);
                    std::mem::swap(&mut w, &mut h);
                }
                b
            }
            AugmentOp::FlipH => BBox::new(w - b.x_max, b.y_min, w - b.x_min, b.y_max),
            AugmentOp::FlipV => BBox::new(b.x_min, h - b.y_max, b.x_max, h - b.y_min),
            AugmentOp::GaussianNoise { .. } | AugmentOp::Illumination { .. } => *b,
        }
    }

    pub fn apply_image(&self, image: &GrayImage, seed: u64) -> GrayImage {
        match *self {
            AugmentOp::Rotate90k { k } => image.rotate90k(k),
            AugmentOp::FlipH => image.flip_h(),
            AugmentOp::FlipV => image.flip_v(),
            AugmentOp::GaussianNoise { sigma } => {
                let Ok(n) = Normal::new(0.0, sigma) else {
                    return image.clone();
                };
                let mut rng = rng::from_seed(seed);
                let mut out = image.clone();
                for v in out.pixels_mut() {
                    *v = (f64::from(*v) + n.sample(&mut rng)).round().clamp(0.0, 255.0) as u8;
                }
                out
            }
            AugmentOp::Illumination { gain, bias } => {
                let mut out = image.clone();
                for v in out.pixels_mut() {
                    *v = (gain * f64::from(*v) + bias).round().clamp(0.0, 255.0) as u8;
                }
                out
            }
        }
    }
}

/// Which ops the generator may apply, and how many augmented copies of each
/// training image to add.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AugmentSpec {
    #[serde(default)]
    pub ops: Vec<AugmentOp>,
    #[serde(default)]
    pub copies_per_train_sample: u32,
}

impl AugmentSpec {
    pub fn allows(&self, op: &AugmentOp) -> bool {
        self.ops.iter().any(|o| std::mem::discriminant(o) == std::mem::discriminant(op))
    }
}

/// Applies `op` to image and boxes together. Photometric ops leave boxes
/// untouched; quarter turns also advance the recorded rotation.
pub fn augment(input: &ImageSample, op: &AugmentOp, seed: u64) -> ImageSample {
    let (w, h) = (input.image.width(), input.image.height());
    let mut sample = input.sample.clone();
    sample.gt_boxes = sample.gt_boxes.iter().map(|b| op.map_box(b, w, h)).collect();
    if let AugmentOp::Rotate90k { k } = op {
        sample.rotation = (sample.rotation + 90 * (k % 4)) % 360;
    }
    ImageSample {
        sample,
        image: op.apply_image(&input.image, seed),
    }
}

/// Like [`augment`], but refuses ops the spec does not enable.
pub fn augment_checked(
    spec: &AugmentSpec,
    input: &ImageSample,
    op: &AugmentOp,
    seed: u64,
) -> Result<ImageSample> {
    if !spec.allows(op) {
        return Err(Error::InvalidArgument(format!("augmentation {op:?} not enabled")));
    }
    Ok(augment(input, op, seed))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Sample;

    fn sample_with_box(b: BBox) -> ImageSample {
        ImageSample {
            sample: Sample {
                image_id: "a".into(),
                image_path: "a.pgm".into(),
                batch_id: "B0".into(),
                rotation: 0,
                gt_boxes: vec![b],
                label: None,
            },
            image: GrayImage::from_fn(128, 128, |x, y| ((x * 31 + y * 17) % 251) as u8),
        }
    }

    #[test]
    fn four_quarter_turns_are_identity() {
        let s = sample_with_box(BBox::new(3, 40, 19, 47));
        let op = AugmentOp::Rotate90k { k: 1 };
        let mut cur = s.clone();
        for _ in 0..4 {
            cur = augment(&cur, &op, 0);
        }
        assert_eq!(cur, s);
    }

    #[test]
    fn flip_h_box_arithmetic() {
        let s = sample_with_box(BBox::new(10, 5, 20, 9));
        let out = augment(&s, &AugmentOp::FlipH, 0);
        let b = out.sample.gt_boxes[0];
        assert_eq!((b.x_min, b.x_max), (108, 118));
        assert_eq!((b.y_min, b.y_max), (5, 9));
    }

    #[test]
    fn identity_illumination() {
        let s = sample_with_box(BBox::new(1, 1, 4, 4));
        let out = augment(&s, &AugmentOp::Illumination { gain: 1.0, bias: 0.0 }, 0);
        assert_eq!(out, s);
    }

    #[test]
    fn noise_keeps_boxes_and_label() {
        let s = sample_with_box(BBox::new(1, 1, 4, 4));
        let out = augment(&s, &AugmentOp::GaussianNoise { sigma: 5.0 }, 9);
        assert_eq!(out.sample.gt_boxes, s.sample.gt_boxes);
        assert_eq!(out.sample.label(), s.sample.label());
        assert_ne!(out.image, s.image);
    }

    #[test]
    fn checked_variant_respects_spec() {
        let spec = AugmentSpec {
            ops: vec![AugmentOp::FlipH],
            copies_per_train_sample: 0,
        };
        let s = sample_with_box(BBox::new(1, 1, 4, 4));
        assert!(augment_checked(&spec, &s, &AugmentOp::FlipH, 0).is_ok());
        assert!(augment_checked(&spec, &s, &AugmentOp::FlipV, 0).is_err());
    }
}
