//! Binary classification and detection metrics.
//!
//! ROC and AUC treat NG as the positive class, with the score read as the
//! predicted probability of a defect. An image is predicted NG when its score
//! is at least the threshold.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::dataset::{BBox, Label};
use crate::error::{Error, Result};
use crate::learner::Detection;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub fp: usize,
    pub tn: usize,
    pub positive_class: Label,
}

impl ConfusionMatrix {
    pub fn total(&self) -> usize {
        self.tp + self.fn_ + self.fp + self.tn
    }
}

/// Counts `(truth, predicted)` pairs against `positive_class`.
pub fn confusion(pairs: &[(Label, Label)], positive_class: Label) -> Result<ConfusionMatrix> {
    if pairs.is_empty() {
        return Err(Error::Metric("confusion matrix of an empty set".into()));
    }
    let mut m = ConfusionMatrix {
        tp: 0,
        fn_: 0,
        fp: 0,
        tn: 0,
        positive_class,
    };
    for &(truth, pred) in pairs {
        match (truth == positive_class, pred == positive_class) {
            (true, true) => m.tp += 1,
            (true, false) => m.fn_ += 1,
            (false, true) => m.fp += 1,
            (false, false) => m.tn += 1,
        }
    }
    Ok(m)
}

/// One image's score and ground truth.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredLabel {
    pub image_id: String,
    pub score: f64,
    pub truth: Label,
}

impl ScoredLabel {
    pub fn new(image_id: impl Into<String>, score: f64, truth: Label) -> Self {
        Self {
            image_id: image_id.into(),
            score,
            truth,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    /// `(fpr, tpr)` from `(0, 0)` to `(1, 1)`.
    pub points: Vec<(f64, f64)>,
    /// Threshold of each point; the first is `+inf`.
    pub thresholds: Vec<f64>,
}

impl RocCurve {
    /// Trapezoidal area under the curve.
    pub fn area(&self) -> f64 {
        self.points
            .windows(2)
            .map(|w| (w[1].0 - w[0].0) * (w[0].1 + w[1].1) / 2.0)
            .sum()
    }

    /// `threshold,fpr,tpr` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("threshold,fpr,tpr\n");
        for (t, (fpr, tpr)) in self.thresholds.iter().zip(&self.points) {
            let _ = writeln!(out, "{t},{fpr},{tpr}");
        }
        out
    }
}

fn class_counts(scored: &[ScoredLabel]) -> Result<(usize, usize)> {
    let pos = scored.iter().filter(|s| s.truth == Label::Ng).count();
    let neg = scored.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::Metric(format!(
            "ROC needs both classes (NG: {pos}, OK: {neg})"
        )));
    }
    if let Some(s) = scored.iter().find(|s| !s.score.is_finite()) {
        return Err(Error::Metric(format!("non-finite score for {}", s.image_id)));
    }
    Ok((pos, neg))
}

/// Threshold sweep over the distinct scores, highest first.
pub fn roc_curve(scored: &[ScoredLabel]) -> Result<RocCurve> {
    let (n_pos, n_neg) = class_counts(scored)?;
    let mut order: Vec<&ScoredLabel> = scored.iter().collect();
    order.sort_by(|a, b| b.score.total_cmp(&a.score));
    let mut points = vec![(0.0, 0.0)];
    let mut thresholds = vec![f64::INFINITY];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let t = order[i].score;
        while i < order.len() && order[i].score == t {
            match order[i].truth {
                Label::Ng => tp += 1,
                Label::Ok => fp += 1,
            }
            i += 1;
        }
        points.push((fp as f64 / n_neg as f64, tp as f64 / n_pos as f64));
        thresholds.push(t);
    }
    Ok(RocCurve { points, thresholds })
}

pub fn auc(scored: &[ScoredLabel]) -> Result<f64> {
    Ok(roc_curve(scored)?.area())
}

/// Pixel-area intersection over union; 0 for disjoint or empty boxes.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let inter = a.intersection_area(b);
    if inter == 0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    inter as f64 / union as f64
}

/// Area under the max-interpolated precision/recall curve with detections
/// ranked globally across images. Each detection, in score order, claims
/// the unmatched ground-truth box of its image with the highest IOU if that
/// IOU reaches `iou_threshold`.
pub fn average_precision(detections: &[Vec<Detection>], gts: &[Vec<BBox>], iou_threshold: f64) -> Result<f64> {
    if detections.len() != gts.len() {
        return Err(Error::LengthMismatch {
            expected: gts.len(),
            found: detections.len(),
        });
    }
    let n_gt: usize = gts.iter().map(Vec::len).sum();
    if n_gt == 0 {
        return Err(Error::Metric("average precision needs ground-truth boxes".into()));
    }
    let mut ranked: Vec<(usize, &Detection)> = detections
        .iter()
        .enumerate()
        .flat_map(|(img, ds)| ds.iter().map(move |d| (img, d)))
        .collect();
    ranked.sort_by(|a, b| b.1.score.total_cmp(&a.1.score));

    let mut matched: Vec<Vec<bool>> = gts.iter().map(|g| vec![false; g.len()]).collect();
    let mut recall = Vec::with_capacity(ranked.len());
    let mut precision = Vec::with_capacity(ranked.len());
    let mut tp = 0usize;
    for (k, (img, det)) in ranked.iter().enumerate() {
        let mut best: Option<(usize, f64)> = None;
        for (j, g) in gts[*img].iter().enumerate() {
            if matched[*img][j] {
                continue;
            }
            let o = iou(&det.bbox, g);
            if o >= iou_threshold && best.map_or(true, |(_, b)| o > b) {
                best = Some((j, o));
            }
        }
        if let Some((j, _)) = best {
            matched[*img][j] = true;
            tp += 1;
        }
        recall.push(tp as f64 / n_gt as f64);
        precision.push(tp as f64 / (k + 1) as f64);
    }
    for i in (0..precision.len().saturating_sub(1)).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    let mut ap = 0.0;
    let mut prev_r = 0.0;
    for (r, p) in recall.iter().zip(&precision) {
        ap += (r - prev_r) * p;
        prev_r = *r;
    }
    Ok(ap)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub threshold: f64,
    pub confusion: ConfusionMatrix,
    pub auc: f64,
    pub roc: RocCurve,
}

pub fn predict(score: f64, threshold: f64) -> Label {
    if score >= threshold {
        Label::Ng
    } else {
        Label::Ok
    }
}

pub fn evaluate_scored(scored: &[ScoredLabel], threshold: f64) -> Result<EvalSummary> {
    let roc = roc_curve(scored)?;
    let pairs: Vec<(Label, Label)> = scored
        .iter()
        .map(|s| (s.truth, predict(s.score, threshold)))
        .collect();
    Ok(EvalSummary {
        threshold,
        confusion: confusion(&pairs, Label::Ng)?,
        auc: roc.area(),
        roc,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImagePrediction {
    pub image_id: String,
    pub score: f64,
    pub detections: Vec<Detection>,
}

/// Per-image scores written by `eval`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionsFile {
    pub model_id: String,
    pub aggregation: String,
    pub images: Vec<ImagePrediction>,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sl(score: f64, truth: Label) -> ScoredLabel {
        ScoredLabel::new("x", score, truth)
    }

    fn four() -> Vec<ScoredLabel> {
        vec![
            sl(0.9, Label::Ng),
            sl(0.6, Label::Ok),
            sl(0.4, Label::Ng),
            sl(0.1, Label::Ok),
        ]
    }

    #[test]
    fn confusion_quadrants() {
        use Label::*;
        let pairs = [(Ng, Ng), (Ng, Ok), (Ok, Ok), (Ok, Ng)];
        let m = confusion(&pairs, Ng).unwrap();
        assert_eq!((m.tp, m.fn_, m.fp, m.tn), (1, 1, 1, 1));
        let m = confusion(&[(Ok, Ok), (Ok, Ok), (Ng, Ok)], Ok).unwrap();
        assert_eq!((m.tp, m.fn_, m.fp, m.tn), (2, 0, 1, 0));
        assert!(confusion(&[], Ng).is_err());
    }

    #[test]
    fn roc_of_four_points() {
        let roc = roc_curve(&four()).unwrap();
        assert_eq!(
            roc.points,
            vec![(0.0, 0.0), (0.0, 0.5), (0.5, 0.5), (0.5, 1.0), (1.0, 1.0)]
        );
        assert_eq!(auc(&four()).unwrap(), 0.75);
    }

    #[test]
    fn constant_scores() {
        let s = vec![sl(0.5, Label::Ng), sl(0.5, Label::Ok), sl(0.5, Label::Ok)];
        let roc = roc_curve(&s).unwrap();
        assert_eq!(roc.points, vec![(0.0, 0.0), (1.0, 1.0)]);
        assert_eq!(roc.area(), 0.5);
    }

    #[test]
    fn perfect_separation() {
        let s = vec![
            sl(0.9, Label::Ng),
            sl(0.8, Label::Ng),
            sl(0.2, Label::Ok),
            sl(0.1, Label::Ok),
        ];
        assert!(roc_curve(&s).unwrap().points.contains(&(0.0, 1.0)));
        assert_eq!(auc(&s).unwrap(), 1.0);
    }

    #[test]
    fn single_class_rejected() {
        assert!(auc(&[sl(0.3, Label::Ok), sl(0.4, Label::Ok)]).is_err());
    }

    #[test]
    fn iou_hand_cases() {
        let a = BBox::new(0, 0, 2, 2);
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&a, &BBox::new(5, 5, 6, 6)), 0.0);
        assert_eq!(iou(&a, &BBox::new(1, 0, 3, 2)), 1.0 / 3.0);
    }

    #[test]
    fn ap_hand_cases() {
        let g = BBox::new(0, 0, 10, 10);
        let det = |b: BBox, s: f64| Detection { bbox: b, score: s };
        let miss = det(BBox::new(50, 50, 60, 60), 0.9);
        let hit = det(g, 0.8);
        assert_eq!(average_precision(&[vec![miss, hit]], &[vec![g]], 0.5).unwrap(), 0.5);
        assert_eq!(average_precision(&[vec![hit]], &[vec![g]], 0.5).unwrap(), 1.0);
        assert_eq!(average_precision(&[vec![]], &[vec![g]], 0.5).unwrap(), 0.0);
        assert!(average_precision(&[vec![hit]], &[vec![]], 0.5).is_err());
    }

    #[test]
    fn evaluate_boundary_and_example() {
        let e = evaluate_scored(&four(), 0.5).unwrap();
        assert_eq!((e.confusion.fp, e.confusion.fn_), (1, 1));
        let c = vec![sl(0.5, Label::Ng), sl(0.5, Label::Ok)];
        let e = evaluate_scored(&c, 0.5).unwrap();
        assert_eq!((e.confusion.tp, e.confusion.fp), (1, 1));
    }

    #[test]
    fn roc_csv_header() {
        let csv = roc_curve(&four()).unwrap().to_csv();
        assert!(csv.starts_with("threshold,fpr,tpr\ninf,0,0\n"));
    }
}
