//! Linear logistic scorer and its mini-batch trainer.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::features::{ExtractorConfig, FeatureVector};
use super::focal::{focal_loss_grad, focal_loss_logit, logistic, FocalSchedule};
use crate::error::{Error, Result};
use crate::rng;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Classifier,
    Detector,
}

impl ModelKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ModelKind::Classifier => "classifier",
            ModelKind::Detector => "detector",
        }
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "classifier" => Ok(ModelKind::Classifier),
            "detector" => Ok(ModelKind::Detector),
            other => Err(Error::InvalidArgument(format!("unknown model kind {other:?}"))),
        }
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Sliding-window geometry and post-processing used by detectors.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanConfig {
    pub window: usize,
    pub stride: usize,
    /// Minimum window score reported as a detection.
    pub s_min: f64,
    /// Boxes overlapping a kept box above this IOU are suppressed.
    pub nms_iou: f64,
}

impl Default for ScanConfig {
    fn default() -> Self {
        Self {
            window: 16,
            stride: 8,
            s_min: 0.5,
            nms_iou: 0.5,
        }
    }
}

/// A trained linear scorer.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub kind: ModelKind,
    pub weights: Vec<f64>,
    pub bias: f64,
    /// Extractor for whole images (classifier) or windows (detector).
    pub extractor: ExtractorConfig,
    pub scan: ScanConfig,
    pub training_hash: String,
    pub final_train_loss: f64,
    pub format_version: u32,
}

impl ModelParams {
    pub fn validate(&self) -> Result<()> {
        self.extractor.validate()?;
        if self.weights.len() != self.extractor.len() {
            return Err(Error::LengthMismatch {
                expected: self.extractor.len(),
                found: self.weights.len(),
            });
        }
        if !self.bias.is_finite() || self.weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::InvalidArgument("non-finite model weights".into()));
        }
        Ok(())
    }

    #[inline]
    pub fn logit(&self, x: &[f64]) -> f64 {
        self.weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + self.bias
    }
}

/// `logistic(w . x + b)`.
pub fn sigmoid_score(params: &ModelParams, features: &FeatureVector) -> Result<f64> {
    if features.values.len() != params.weights.len() {
        return Err(Error::LengthMismatch {
            expected: params.weights.len(),
            found: features.values.len(),
        });
    }
    Ok(logistic(params.logit(&features.values)))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SgdOptions {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// L2 penalty on weights (not bias).
    #[serde(default)]
    pub l2: f64,
}

/// Dense row-major design matrix stored in single precision.
pub struct Design {
    dim: usize,
    rows: Vec<f32>,
    labels: Vec<u8>,
}

impl Design {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            rows: Vec::new(),
            labels: Vec::new(),
        }
    }

    pub fn push(&mut self, x: &[f64], y: u8) {
        debug_assert_eq!(x.len(), self.dim);
        self.rows.extend(x.iter().map(|v| *v as f32));
        self.labels.push(y);
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.rows[i * self.dim..(i + 1) * self.dim]
    }

    pub fn label(&self, i: usize) -> u8 {
        self.labels[i]
    }

    pub fn count_positive(&self) -> usize {
        self.labels.iter().filter(|&&y| y == 1).count()
    }
}

#[inline]
fn dot(w: &[f64], x: &[f32]) -> f64 {
    w.iter().zip(x).map(|(a, b)| a * f64::from(*b)).sum()
}

/// Single-precision dot product with eight independent accumulators so the
/// loop vectorizes. The summation order is fixed, so results reproduce.
fn dot_f32(w: &[f32], x: &[f32]) -> f32 {
    const LANES: usize = 8;
    let mut acc = [0.0f32; LANES];
    let (wc, xc) = (w.chunks_exact(LANES), x.chunks_exact(LANES));
    let (wr, xr) = (wc.remainder(), xc.remainder());
    for (a, b) in wc.zip(xc) {
        for l in 0..LANES {
            acc[l] += a[l] * b[l];
        }
    }
    let tail: f32 = wr.iter().zip(xr).map(|(a, b)| a * b).sum();
    acc.iter().sum::<f32>() + tail
}

/// Rows are visited in random order, so upcoming rows are requested from
/// memory a few iterations early.
const PREFETCH_AHEAD: usize = 4;

#[inline]
fn prefetch(row: &[f32]) {
    #[cfg(target_arch = "x86_64")]
    for line in row.chunks(16) {
        // SAFETY: prefetching is a hint and never faults; the pointer is in bounds.
        unsafe { std::arch::x86_64::_mm_prefetch::<{ std::arch::x86_64::_MM_HINT_T0 }>(line.as_ptr().cast()) }
    }
    #[cfg(not(target_arch = "x86_64"))]
    let _ = row;
}

/// Result of [`fit_linear`].
pub struct LinearFit {
    pub weights: Vec<f64>,
    pub bias: f64,
    /// Mean focal loss over the training rows after the last epoch.
    pub final_loss: f64,
}

/// Minimizes the mean focal loss with mini-batch gradient descent. Each epoch
/// visits the rows in a permutation drawn from `(seed, epoch)`.
pub fn fit_linear(data: &Design, schedule: FocalSchedule, opts: &SgdOptions, seed: u64) -> Result<LinearFit> {
    if data.is_empty() {
        return Err(Error::Training("empty training set".into()));
    }
    if opts.batch_size == 0 || opts.epochs == 0 || !(opts.learning_rate > 0.0) {
        return Err(Error::Training(format!("invalid optimizer settings {opts:?}")));
    }
    let dim = data.dim();
    let mut w = vec![0.0; dim];
    let mut b = 0.0;
    // the inner loops run in single precision against a copy of `w`; the
    // parameters themselves are updated in double precision
    let mut w32 = vec![0.0f32; dim];
    let mut grad = vec![0.0f32; dim];
    let mut order: Vec<usize> = (0..data.len()).collect();
    for epoch in 0..opts.epochs {
        order.shuffle(&mut rng::stream(seed, epoch as u64));
        for batch in order.chunks(opts.batch_size) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let mut gb = 0.0;
            for (k, &i) in batch.iter().enumerate() {
                if let Some(&next) = batch.get(k + PREFETCH_AHEAD) {
                    prefetch(data.row(next));
                }
                let x = data.row(i);
                let y = data.label(i);
                let z = f64::from(dot_f32(&w32, x)) + b;
                let g = focal_loss_grad(z, y, &schedule.for_label(y));
                let g32 = g as f32;
                for (gj, xj) in grad.iter_mut().zip(x) {
                    *gj += g32 * xj;
                }
                gb += g;
            }
            let scale = opts.learning_rate / batch.len() as f64;
            for ((wj, w32j), gj) in w.iter_mut().zip(w32.iter_mut()).zip(&grad) {
                *wj -= scale * f64::from(*gj) + opts.learning_rate * opts.l2 * *wj;
                *w32j = *wj as f32;
            }
            b -= scale * gb;
        }
    }
    if !b.is_finite() || w.iter().any(|v| !v.is_finite()) {
        return Err(Error::Training("optimizer diverged".into()));
    }
    let final_loss = (0..data.len())
        .map(|i| {
            let y = data.label(i);
            focal_loss_logit(dot(&w, data.row(i)) + b, y, &schedule.for_label(y))
        })
        .sum::<f64>()
        / data.len() as f64;
    Ok(LinearFit {
        weights: w,
        bias: b,
        final_loss,
    })
}
