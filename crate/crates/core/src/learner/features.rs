//! Fixed feature map: pooled intensities plus gradient-orientation histograms.
//!
//! Any rectangle of an image (the whole frame, or a detector window) is split
//! into a `grid x grid` lattice of cells. Each cell contributes its mean
//! intensity, and `bins` unsigned-orientation bins of gradient magnitude
//! averaged over the cell. Standardization constants live in the config so a
//! trained model carries them.

use serde::{Deserialize, Serialize};

use crate::dataset::BBox;
use crate::error::{Error, Result};
use crate::image::GrayImage;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExtractorConfig {
    /// Expected input width (whole image).
    pub width: usize,
    /// Expected input height (whole image).
    pub height: usize,
    pub grid: usize,
    pub bins: usize,
    /// Per-dimension offsets; empty means none.
    #[serde(default)]
    pub mean: Vec<f64>,
    /// Per-dimension scales; empty means none.
    #[serde(default)]
    pub std: Vec<f64>,
}

impl Default for ExtractorConfig {
    fn default() -> Self {
        Self::new(128, 128)
    }
}

/// Standardized (or raw) feature values tagged with the layout that made them.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureVector {
    pub values: Vec<f64>,
    pub layout_id: String,
}

impl ExtractorConfig {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            grid: 8,
            bins: 4,
            mean: Vec::new(),
            std: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.grid * self.grid * (1 + self.bins)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn pooled_len(&self) -> usize {
        self.grid * self.grid
    }

    pub fn layout_id(&self) -> String {
        format!(
            "pool{g}x{g}+grad{g}x{g}x{b}@{w}x{h}",
            g = self.grid,
            b = self.bins,
            w = self.width,
            h = self.height
        )
    }

    pub fn is_normalized(&self) -> bool {
        !self.mean.is_empty()
    }

    /// Fits the standardization constants on raw vectors: each dimension is
    /// centred on its own mean, and each block (pooled intensities, gradient
    /// bins) is scaled by one shared standard deviation so relative
    /// magnitudes within a block survive.
    pub fn fit_normalization(&mut self, raw: &[Vec<f64>]) {
        let n = self.len();
        let split = self.pooled_len();
        let m = raw.len().max(1) as f64;
        let mut mean = vec![0.0; n];
        for v in raw {
            for (a, x) in mean.iter_mut().zip(v) {
                *a += x;
            }
        }
        mean.iter_mut().for_each(|a| *a /= m);
        let mut std = Vec::with_capacity(n);
        for range in [0..split, split..n] {
            let ss: f64 = raw
                .iter()
                .map(|v| range.clone().map(|i| (v[i] - mean[i]).powi(2)).sum::<f64>())
                .sum();
            let sd = (ss / (m * range.len().max(1) as f64)).sqrt().max(1e-6);
            std.extend(std::iter::repeat(sd).take(range.len()));
        }
        self.mean = mean;
        self.std = std;
    }

    pub fn normalize_in_place(&self, v: &mut [f64]) {
        if !self.is_normalized() {
            return;
        }
        for ((x, mu), sd) in v.iter_mut().zip(&self.mean).zip(&self.std) {
            *x = (*x - mu) / sd;
        }
    }

    pub fn check_size(&self, image: &GrayImage) -> Result<()> {
        if (image.width(), image.height()) != (self.width, self.height) {
            return Err(Error::SizeMismatch {
                expected_w: self.width,
                expected_h: self.height,
                found_w: image.width(),
                found_h: image.height(),
            });
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid == 0 || self.bins == 0 || self.width < self.grid || self.height < self.grid {
            return Err(Error::InvalidArgument(format!(
                "extractor grid {} / bins {} invalid for {}x{}",
                self.grid, self.bins, self.width, self.height
            )));
        }
        if (!self.mean.is_empty() || !self.std.is_empty())
            && (self.mean.len() != self.len() || self.std.len() != self.len())
        {
            return Err(Error::LengthMismatch {
                expected: self.len(),
                found: self.mean.len().min(self.std.len()),
            });
        }
        if self.mean.iter().chain(&self.std).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite normalization constant".into()));
        }
        Ok(())
    }
}

/// Summed-area tables of intensity and binned gradient magnitude for one
/// image, so any cell sum is O(1).
pub struct GradientField {
    width: usize,
    height: usize,
    bins: usize,
    /// `(width + 1) * (height + 1)` table per channel; channel 0 is intensity.
    tables: Vec<Vec<f64>>,
}

impl GradientField {
    pub fn new(image: &GrayImage, bins: usize) -> Self {
        let (w, h) = (image.width(), image.height());
        let px = |x: i64, y: i64| -> f64 {
            let xc = x.clamp(0, w as i64 - 1) as usize;
            let yc = y.clamp(0, h as i64 - 1) as usize;
            f64::from(image.get(xc, yc))
        };
        let mut channels = vec![vec![0.0; w * h]; bins + 1];
        for y in 0..h {
            for x in 0..w {
                let (xi, yi) = (x as i64, y as i64);
                channels[0][y * w + x] = px(xi, yi);
                let gx = (px(xi + 1, yi) - px(xi - 1, yi)) / 2.0;
                let gy = (px(xi, yi + 1) - px(xi, yi - 1)) / 2.0;
                let mag = (gx * gx + gy * gy).sqrt();
                if mag > 0.0 {
                    let mut theta = gy.atan2(gx);
                    if theta < 0.0 {
                        theta += std::f64::consts::PI;
                    }
                    let bin = ((theta / std::f64::consts::PI * bins as f64) as usize).min(bins - 1);
                    channels[1 + bin][y * w + x] = mag;
                }
            }
        }
        let tables = channels
            .into_iter()
            .map(|c| {
                let mut t = vec![0.0; (w + 1) * (h + 1)];
                for y in 0..h {
                    let mut row = 0.0;
                    for x in 0..w {
                        row += c[y * w + x];
                        t[(y + 1) * (w + 1) + x + 1] = t[y * (w + 1) + x + 1] + row;
                    }
                }
                t
            })
            .collect();
        Self {
            width: w,
            height: h,
            bins,
            tables,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    fn rect_sum(&self, channel: usize, x0: usize, y0: usize, x1: usize, y1: usize) -> f64 {
        let t = &self.tables[channel];
        let s = self.width + 1;
        t[y1 * s + x1] - t[y0 * s + x1] - t[y1 * s + x0] + t[y0 * s + x0]
    }

    /// Raw (unstandardized) features of `rect`, which must lie in the image.
    pub fn raw_features(&self, rect: &BBox, grid: usize) -> Vec<f64> {
        debug_assert!(rect.fits_in(self.width, self.height));
        let (rx, ry) = (rect.x_min as usize, rect.y_min as usize);
        let (rw, rh) = (rect.width() as usize, rect.height() as usize);
        let mut pooled = Vec::with_capacity(grid * grid);
        let mut grads = Vec::with_capacity(grid * grid * self.bins);
        for gy in 0..grid {
            let y0 = ry + gy * rh / grid;
            let y1 = ry + (gy + 1) * rh / grid;
            for gx in 0..grid {
                let x0 = rx + gx * rw / grid;
                let x1 = rx + (gx + 1) * rw / grid;
                let area = ((x1 - x0) * (y1 - y0)).max(1) as f64;
                pooled.push(self.rect_sum(0, x0, y0, x1, y1) / area);
                for b in 0..self.bins {
                    grads.push(self.rect_sum(1 + b, x0, y0, x1, y1) / area);
                }
            }
        }
        pooled.extend(grads);
        pooled
    }
}

/// Whole-image features, standardized with the config's constants if present.
pub fn extract_features(image: &GrayImage, config: &ExtractorConfig) -> Result<FeatureVector> {
    config.check_size(image)?;
    let field = GradientField::new(image, config.bins);
    let rect = BBox::new(0, 0, image.width() as i64, image.height() as i64);
    let mut values = field.raw_features(&rect, config.grid);
    config.normalize_in_place(&mut values);
    Ok(FeatureVector {
        values,
        layout_id: config.layout_id(),
    })
}

/// Unstandardized whole-image features.
pub fn raw_image_features(image: &GrayImage, config: &ExtractorConfig) -> Result<Vec<f64>> {
    config.check_size(image)?;
    let field = GradientField::new(image, config.bins);
    let rect = BBox::new(0, 0, image.width() as i64, image.height() as i64);
    Ok(field.raw_features(&rect, config.grid))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_length() {
        let cfg = ExtractorConfig::default();
        let img = GrayImage::new(128, 128, 0);
        let f = extract_features(&img, &cfg).unwrap();
        assert_eq!(f.values.len(), 64 + 256);
        assert_eq!(f.layout_id, cfg.layout_id());
    }

    #[test]
    fn constant_image() {
        let cfg = ExtractorConfig::default();
        let f = extract_features(&GrayImage::new(128, 128, 77), &cfg).unwrap();
        assert!(f.values[..64].iter().all(|&v| v == 77.0));
        assert!(f.values[64..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn flip_reverses_pooled_columns() {
        let cfg = ExtractorConfig::default();
        let img = GrayImage::from_fn(128, 128, |x, y| ((x * x + 3 * y) % 256) as u8);
        let a = extract_features(&img, &cfg).unwrap().values;
        let b = extract_features(&img.flip_h(), &cfg).unwrap().values;
        // oracle: per-pixel mean of each mirrored 16 x 16 cell
        for gy in 0..8 {
            for gx in 0..8 {
                let mut acc = 0.0;
                for y in gy * 16..(gy + 1) * 16 {
                    for x in (7 - gx) * 16..(8 - gx) * 16 {
                        acc += f64::from(img.get(x, y));
                    }
                }
                let expect = acc / 256.0;
                assert!((b[gy * 8 + gx] - expect).abs() < 1e-9);
                assert!((b[gy * 8 + gx] - a[gy * 8 + 7 - gx]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn vertical_edge_lands_in_horizontal_gradient_bin() {
        let img = GrayImage::from_fn(16, 16, |x, _| if x < 8 { 0 } else { 200 });
        let field = GradientField::new(&img, 4);
        let f = field.raw_features(&BBox::new(0, 0, 16, 16), 1);
        // pooled mean, then bins [0, 45), [45, 90), [90, 135), [135, 180)
        assert_eq!(f[0], 100.0);
        assert!(f[1] > 0.0);
        assert_eq!(&f[2..], &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn size_mismatch_is_an_error() {
        let cfg = ExtractorConfig::default();
        assert!(extract_features(&GrayImage::new(64, 128, 0), &cfg).is_err());
    }

    #[test]
    fn normalization_standardizes() {
        let mut cfg = ExtractorConfig::new(16, 16);
        cfg.grid = 1;
        cfg.bins = 1;
        cfg.fit_normalization(&[vec![1.0, 0.0], vec![3.0, 0.0]]);
        let mut v = vec![3.0, 0.0];
        cfg.normalize_in_place(&mut v);
        assert!((v[0] - 1.0).abs() < 1e-12);
        assert_eq!(v[1], 0.0);
    }

    #[test]
    fn blocks_share_one_scale() {
        let mut cfg = ExtractorConfig::new(16, 16);
        cfg.grid = 2;
        cfg.bins = 1;
        let raw: Vec<Vec<f64>> = (0..6)
            .map(|i| (0..8).map(|j| ((i * 7 + j * 3) % 5) as f64 * (1 + j) as f64).collect())
            .collect();
        cfg.fit_normalization(&raw);
        assert!(cfg.std[..4].iter().all(|&s| s == cfg.std[0]));
        assert!(cfg.std[4..].iter().all(|&s| s == cfg.std[4]));
        let z: Vec<Vec<f64>> = raw
            .iter()
            .map(|v| {
                let mut v = v.clone();
                cfg.normalize_in_place(&mut v);
                v
            })
            .collect();
        for block in [0..4, 4..8] {
            let vals: Vec<f64> = z.iter().flat_map(|v| v[block.clone()].to_vec()).collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|x| x * x).sum::<f64>() / vals.len() as f64;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-12);
        }
    }
}
