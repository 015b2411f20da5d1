//! Image-level NG scores for both model kinds.

use serde::{Deserialize, Serialize};

use super::classifier::classify;
use super::detector::{detect, Detection};
use super::linear::{ModelKind, ModelParams};
use crate::error::Result;
use crate::image::GrayImage;

/// How detection scores collapse to one image score.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Aggregation {
    /// Strongest detection.
    #[default]
    #[serde(rename = "max", alias = "max_box")]
    MaxBox,
    /// Weakest detection.
    #[serde(rename = "min", alias = "min_box")]
    MinBox,
}

impl Aggregation {
    pub fn as_str(&self) -> &'static str {
        match self {
            Aggregation::MaxBox => "max",
            Aggregation::MinBox => "min",
        }
    }

    /// Aggregate of detection scores; 0.0 when there are none.
    pub fn apply(&self, detections: &[Detection]) -> f64 {
        let scores = detections.iter().map(|d| d.score);
        let agg = match self {
            Aggregation::MaxBox => scores.fold(f64::NEG_INFINITY, f64::max),
            Aggregation::MinBox => scores.fold(f64::INFINITY, f64::min),
        };
        if agg.is_finite() {
            agg
        } else {
            0.0
        }
    }
}

impl std::str::FromStr for Aggregation {
    type Err = crate::error::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "max" | "max_box" => Ok(Aggregation::MaxBox),
            "min" | "min_box" => Ok(Aggregation::MinBox),
            other => Err(crate::error::Error::InvalidArgument(format!(
                "unknown aggregation {other:?}"
            ))),
        }
    }
}

/// Image score plus the detections behind it (empty for classifiers).
#[derive(Clone, Debug, PartialEq)]
pub struct ScoredImage {
    pub score: f64,
    pub detections: Vec<Detection>,
}

pub fn score_image(params: &ModelParams, image: &GrayImage, aggregation: Aggregation) -> Result<ScoredImage> {
    match params.kind {
        ModelKind::Classifier => Ok(ScoredImage {
            score: classify(params, image)?,
            detections: Vec::new(),
        }),
        ModelKind::Detector => {
            let detections = detect(params, image)?;
            Ok(ScoredImage {
                score: aggregation.apply(&detections),
                detections,
            })
        }
    }
}

/// NG probability of an image.
pub fn image_score(params: &ModelParams, image: &GrayImage, aggregation: Aggregation) -> Result<f64> {
    score_image(params, image, aggregation).map(|s| s.score)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::BBox;

    fn dets(scores: &[f64]) -> Vec<Detection> {
        scores
            .iter()
            .enumerate()
            .map(|(i, &s)| Detection {
                bbox: BBox::new(i as i64 * 20, 0, i as i64 * 20 + 16, 16),
                score: s,
            })
            .collect()
    }

    #[test]
    fn aggregations() {
        let d = dets(&[0.2, 0.7]);
        assert_eq!(Aggregation::MaxBox.apply(&d), 0.7);
        assert_eq!(Aggregation::MinBox.apply(&d), 0.2);
        assert_eq!(Aggregation::MaxBox.apply(&[]), 0.0);
        assert_eq!(Aggregation::MinBox.apply(&[]), 0.0);
    }

    #[test]
    fn parses_cli_spellings() {
        assert_eq!("max".parse::<Aggregation>().unwrap(), Aggregation::MaxBox);
        assert_eq!("min_box".parse::<Aggregation>().unwrap(), Aggregation::MinBox);
        assert!("mean".parse::<Aggregation>().is_err());
    }
}
