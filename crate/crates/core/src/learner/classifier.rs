//! Whole-image OK/NG classifier.

use serde::{Deserialize, Serialize};

use super::features::{extract_features, raw_image_features, ExtractorConfig};
use super::focal::FocalSchedule;
use super::linear::{fit_linear, sigmoid_score, Design, ModelKind, ModelParams, ScanConfig, SgdOptions, FORMAT_VERSION};
use crate::dataset::{ImageSample, Label};
use crate::error::{Error, Result};
use crate::image::GrayImage;
use crate::par;
use crate::util::config_hash;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifierConfig {
    pub sgd: SgdOptions,
    pub alpha: f64,
    pub gamma: f64,
    pub seed: u64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            sgd: SgdOptions {
                epochs: 200,
                learning_rate: 0.05,
                batch_size: 16,
                l2: 0.0,
            },
            alpha: 0.5,
            gamma: 0.0,
            seed: 0,
        }
    }
}

pub fn train_classifier(samples: &[ImageSample], cfg: &ClassifierConfig) -> Result<ModelParams> {
    if samples.len() < 2 {
        return Err(Error::Training(format!(
            "classifier needs at least 2 samples, got {}",
            samples.len()
        )));
    }
    let n_ng = samples.iter().filter(|s| s.label() == Label::Ng).count();
    if n_ng == 0 || n_ng == samples.len() {
        return Err(Error::Training(format!(
            "single-class training set ({} samples, all {})",
            samples.len(),
            samples[0].label()
        )));
    }
    let first = &samples[0].image;
    let mut extractor = ExtractorConfig::new(first.width(), first.height());
    extractor.validate()?;
    let raw: Vec<Vec<f64>> = par::map_slice(samples, |s| raw_image_features(&s.image, &extractor))
        .into_iter()
        .collect::<Result<_>>()?;
    extractor.fit_normalization(&raw);
    let mut design = Design::new(extractor.len());
    for (mut f, s) in raw.into_iter().zip(samples) {
        extractor.normalize_in_place(&mut f);
        design.push(&f, u8::from(s.label() == Label::Ng));
    }
    let schedule = FocalSchedule {
        alpha: cfg.alpha,
        gamma: cfg.gamma,
    };
    let fit = fit_linear(&design, schedule, &cfg.sgd, cfg.seed)?;
    Ok(ModelParams {
        kind: ModelKind::Classifier,
        weights: fit.weights,
        bias: fit.bias,
        extractor,
        scan: ScanConfig::default(),
        training_hash: config_hash(cfg),
        final_train_loss: fit.final_loss,
        format_version: FORMAT_VERSION,
    })
}

/// NG probability of a whole image under a classifier.
pub fn classify(params: &ModelParams, image: &GrayImage) -> Result<f64> {
    if params.kind != ModelKind::Classifier {
        return Err(Error::InvalidArgument("classify needs classifier parameters".into()));
    }
    sigmoid_score(params, &extract_features(image, &params.extractor)?)
}
