//! Sliding-window box detector built on the linear scorer.
//!
//! Training windows are labelled against ground truth: a window is positive
//! when it overlaps a defect box with IOU ≥ `tau_pos` or covers at least
//! `cover_pos` of the box, negative when IOU ≤ `tau_neg` and it covers less
//! than `cover_neg` of every box, and ignored otherwise. Inference keeps
//! windows scoring ≥ `s_min` and applies greedy NMS.

use serde::{Deserialize, Serialize};

use super::features::{ExtractorConfig, GradientField};
use super::focal::{logistic, FocalSchedule};
use super::linear::{fit_linear, Design, ModelKind, ModelParams, ScanConfig, SgdOptions, FORMAT_VERSION};
use crate::dataset::{BBox, ImageSample, Label};
use crate::error::{Error, Result};
use crate::image::GrayImage;
use crate::metrics::iou;
use crate::par;
use crate::util::config_hash;

/// A scored box.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    #[serde(flatten)]
    pub bbox: BBox,
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    pub scan: ScanConfig,
    pub tau_pos: f64,
    pub tau_neg: f64,
    /// Fraction of a box a window must cover to count as positive.
    pub cover_pos: f64,
    /// Windows covering at least this fraction of a box are never negatives.
    pub cover_neg: f64,
    pub sgd: SgdOptions,
    pub alpha: f64,
    pub gamma: f64,
    pub seed: u64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            scan: ScanConfig::default(),
            tau_pos: 0.3,
            tau_neg: 0.1,
            cover_pos: 0.7,
            cover_neg: 0.3,
            sgd: SgdOptions {
                epochs: 300,
                learning_rate: 0.01,
                batch_size: 128,
                l2: 0.0,
            },
            alpha: 0.25,
            gamma: 2.0,
            seed: 0,
        }
    }
}

/// All window rectangles for a `width x height` frame, row-major.
pub fn window_grid(width: usize, height: usize, scan: &ScanConfig) -> Vec<BBox> {
    let mut out = Vec::new();
    if scan.window > width || scan.window > height || scan.stride == 0 {
        return out;
    }
    let mut y = 0;
    while y + scan.window <= height {
        let mut x = 0;
        while x + scan.window <= width {
            out.push(BBox::new(
                x as i64,
                y as i64,
                (x + scan.window) as i64,
                (y + scan.window) as i64,
            ));
            x += scan.stride;
        }
        y += scan.stride;
    }
    out
}

/// Training label of one window: `Some(1)`, `Some(0)` or `None` (ignored).
pub fn window_label(window: &BBox, gt: &[BBox], cfg: &DetectorConfig) -> Option<u8> {
    let mut best_iou: f64 = 0.0;
    let mut best_cover: f64 = 0.0;
    for b in gt {
        best_iou = best_iou.max(iou(window, b));
        best_cover = best_cover.max(window.intersection_area(b) as f64 / b.area() as f64);
    }
    if best_iou >= cfg.tau_pos || best_cover >= cfg.cover_pos {
        Some(1)
    } else if best_iou <= cfg.tau_neg && best_cover < cfg.cover_neg {
        Some(0)
    } else {
        None
    }
}

/// Counts of window labels over a training set.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowStats {
    pub positives: usize,
    pub negatives: usize,
    pub ignored: usize,
    pub ng_images: usize,
    pub ng_images_with_positive: usize,
}

pub fn window_stats(samples: &[ImageSample], cfg: &DetectorConfig) -> WindowStats {
    let mut st = WindowStats::default();
    for s in samples {
        let windows = window_grid(s.image.width(), s.image.height(), &cfg.scan);
        let mut pos_here = 0;
        for w in &windows {
            match window_label(w, s.boxes(), cfg) {
                Some(1) => pos_here += 1,
                Some(_) => st.negatives += 1,
                None => st.ignored += 1,
            }
        }
        st.positives += pos_here;
        if s.label() == Label::Ng {
            st.ng_images += 1;
            if pos_here > 0 {
                st.ng_images_with_positive += 1;
            }
        }
    }
    st
}

fn window_extractor(scan: &ScanConfig) -> ExtractorConfig {
    ExtractorConfig::new(scan.window, scan.window)
}

/// Trains a window scorer with focal loss.
pub fn train_detector(samples: &[ImageSample], cfg: &DetectorConfig) -> Result<ModelParams> {
    if !samples.iter().any(|s| s.label() == Label::Ng) {
        return Err(Error::Training("detector training needs at least one NG sample".into()));
    }
    if cfg.scan.window == 0 || cfg.scan.stride == 0 {
        return Err(Error::Training("window and stride must be positive".into()));
    }
    let mut extractor = window_extractor(&cfg.scan);
    extractor.validate()?;
    let grid = extractor.grid;
    let bins = extractor.bins;
    let per_image: Vec<Vec<(Vec<f64>, u8)>> = par::map_slice(samples, |s| {
        let field = GradientField::new(&s.image, bins);
        window_grid(s.image.width(), s.image.height(), &cfg.scan)
            .iter()
            .filter_map(|w| window_label(w, s.boxes(), cfg).map(|y| (field.raw_features(w, grid), y)))
            .collect()
    });
    let n_pos: usize = per_image.iter().flatten().filter(|(_, y)| *y == 1).count();
    if n_pos == 0 {
        let largest = samples
            .iter()
            .flat_map(|s| s.boxes())
            .map(|b| b.area())
            .max()
            .unwrap_or(0);
        return Err(Error::Training(format!(
            "no positive windows: window {}px, tau_pos {}, cover_pos {}, largest defect box {} px²",
            cfg.scan.window, cfg.tau_pos, cfg.cover_pos, largest
        )));
    }
    let raw: Vec<Vec<f64>> = per_image.iter().flatten().map(|(f, _)| f.clone()).collect();
    extractor.fit_normalization(&raw);
    drop(raw);
    let mut design = Design::new(extractor.len());
    for (mut f, y) in per_image.into_iter().flatten() {
        extractor.normalize_in_place(&mut f);
        design.push(&f, y);
    }
    let schedule = FocalSchedule {
        alpha: cfg.alpha,
        gamma: cfg.gamma,
    };
    let fit = fit_linear(&design, schedule, &cfg.sgd, cfg.seed)?;
    Ok(ModelParams {
        kind: ModelKind::Detector,
        weights: fit.weights,
        bias: fit.bias,
        extractor,
        scan: cfg.scan,
        training_hash: config_hash(cfg),
        final_train_loss: fit.final_loss,
        format_version: FORMAT_VERSION,
    })
}

/// Scores every window of the image, in grid order.
pub fn score_windows(params: &ModelParams, image: &GrayImage) -> Result<Vec<Detection>> {
    if params.kind != ModelKind::Detector {
        return Err(Error::InvalidArgument("window scoring needs detector parameters".into()));
    }
    let field = GradientField::new(image, params.extractor.bins);
    Ok(window_grid(image.width(), image.height(), &params.scan)
        .into_iter()
        .map(|w| {
            let mut f = field.raw_features(&w, params.extractor.grid);
            params.extractor.normalize_in_place(&mut f);
            Detection {
                bbox: w,
                score: logistic(params.logit(&f)),
            }
        })
        .collect())
}

/// Greedy non-maximum suppression. Output is sorted by descending score
/// (ties keep input order).
pub fn nms(mut detections: Vec<Detection>, iou_threshold: f64) -> Vec<Detection> {
    detections.sort_by(|a, b| b.score.total_cmp(&a.score));
    let mut kept: Vec<Detection> = Vec::new();
    for d in detections {
        if kept.iter().all(|k| iou(&k.bbox, &d.bbox) <= iou_threshold) {
            kept.push(d);
        }
    }
    kept
}

/// Windows scoring at least `s_min`, after NMS.
pub fn detect(params: &ModelParams, image: &GrayImage) -> Result<Vec<Detection>> {
    if params.kind != ModelKind::Detector {
        return Err(Error::InvalidArgument(
            "detect called with classifier parameters".into(),
        ));
    }
    let all = score_windows(params, image)?;
    let kept = all.into_iter().filter(|d| d.score >= params.scan.s_min).collect();
    Ok(nms(kept, params.scan.nms_iou))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_covers_frame() {
        let w = window_grid(128, 128, &ScanConfig::default());
        assert_eq!(w.len(), 15 * 15);
        assert_eq!(w[0], BBox::new(0, 0, 16, 16));
        assert_eq!(*w.last().unwrap(), BBox::new(112, 112, 128, 128));
    }

    #[test]
    fn labelling_rules() {
        let cfg = DetectorConfig::default();
        let gt = [BBox::new(4, 4, 12, 12)];
        assert_eq!(window_label(&BBox::new(0, 0, 16, 16), &gt, &cfg), Some(1));
        assert_eq!(window_label(&BBox::new(40, 40, 56, 56), &gt, &cfg), Some(0));
        // half the box: neither
        assert_eq!(window_label(&BBox::new(8, 0, 24, 16), &gt, &cfg), None);
        assert_eq!(window_label(&BBox::new(8, 8, 24, 24), &[], &cfg), Some(0));
    }

    #[test]
    fn nms_keeps_best_of_overlapping_pair() {
        // 10 x 10 boxes shifted by 2 px vertically: IOU = 80 / 120 ≈ 0.67
        let a = Detection {
            bbox: BBox::new(0, 0, 10, 10),
            score: 0.8,
        };
        let b = Detection {
            bbox: BBox::new(0, 2, 10, 12),
            score: 0.9,
        };
        assert!(iou(&a.bbox, &b.bbox) > 0.5);
        let out = nms(vec![a, b], 0.5);
        assert_eq!(out, vec![b]);
    }

    #[test]
    fn nms_sorts_and_keeps_disjoint() {
        let d = |x: i64, s: f64| Detection {
            bbox: BBox::new(x, 0, x + 4, 4),
            score: s,
        };
        let out = nms(vec![d(0, 0.2), d(10, 0.7), d(20, 0.5)], 0.5);
        let scores: Vec<f64> = out.iter().map(|d| d.score).collect();
        assert_eq!(scores, vec![0.7, 0.5, 0.2]);
    }

    #[test]
    fn detector_needs_defects() {
        let s = ImageSample {
            sample: crate::dataset::Sample {
                image_id: "a".into(),
                image_path: "a".into(),
                batch_id: "B0".into(),
                rotation: 0,
                gt_boxes: vec![],
                label: None,
            },
            image: GrayImage::new(32, 32, 0),
        };
        assert!(train_detector(&[s], &DetectorConfig::default()).is_err());
    }
}
