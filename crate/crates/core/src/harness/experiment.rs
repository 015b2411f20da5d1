//! Single train/evaluate runs and their reports.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::dataset::{load_manifest, DatasetManifest, ImageSample, Split};
use crate::error::{Error, Result};
use crate::fsutil;
use crate::learner::{
    model_io, score_image, train_classifier, train_detector, Aggregation, ClassifierConfig, Detection,
    DetectorConfig, ModelKind, ModelParams,
};
use crate::metrics::{
    average_precision, evaluate_scored, ConfusionMatrix, ImagePrediction, PredictionsFile, RocCurve, ScoredLabel,
};
use crate::par;
use crate::util::{bytes_hash, config_hash};

/// A manifest file plus one of its splits, written `path:split`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct DatasetRef {
    pub manifest: PathBuf,
    pub split: Split,
}

impl DatasetRef {
    pub fn new(manifest: impl Into<PathBuf>, split: Split) -> Self {
        Self {
            manifest: manifest.into(),
            split,
        }
    }

    /// Resolves a relative manifest path against `base`.
    pub fn resolved(&self, base: &Path) -> Self {
        if self.manifest.is_absolute() {
            self.clone()
        } else {
            Self::new(base.join(&self.manifest), self.split)
        }
    }
}

impl fmt::Display for DatasetRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.manifest.display(), self.split)
    }
}

impl FromStr for DatasetRef {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (path, split) = s
            .rsplit_once(':')
            .ok_or_else(|| Error::InvalidArgument(format!("expected <manifest>:<split>, got {s:?}")))?;
        if path.is_empty() {
            return Err(Error::InvalidArgument(format!("missing manifest path in {s:?}")));
        }
        Ok(Self::new(path, split.parse()?))
    }
}

impl Serialize for DatasetRef {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for DatasetRef {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

fn default_threshold() -> f64 {
    0.5
}

fn default_ap_iou() -> f64 {
    0.1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub experiment_id: String,
    pub model_kind: ModelKind,
    pub train: DatasetRef,
    pub test: DatasetRef,
    #[serde(default)]
    pub aggregation: Aggregation,
    pub seed: u64,
    /// Decision threshold for the confusion matrix.
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    /// IOU a detection needs to count as a hit in AP.
    #[serde(default = "default_ap_iou")]
    pub ap_iou: f64,
    #[serde(default)]
    pub classifier: ClassifierConfig,
    #[serde(default)]
    pub detector: DetectorConfig,
}

impl ExperimentConfig {
    pub fn new(experiment_id: impl Into<String>, model_kind: ModelKind, train: DatasetRef, test: DatasetRef, seed: u64) -> Self {
        Self {
            experiment_id: experiment_id.into(),
            model_kind,
            train,
            test,
            aggregation: Aggregation::default(),
            seed,
            threshold: default_threshold(),
            ap_iou: default_ap_iou(),
            classifier: ClassifierConfig::default(),
            detector: DetectorConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.experiment_id.is_empty() {
            return Err(Error::InvalidArgument("experiment_id is empty".into()));
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::InvalidArgument(format!("threshold {} outside [0, 1]", self.threshold)));
        }
        if !(0.0..=1.0).contains(&self.ap_iou) {
            return Err(Error::InvalidArgument(format!("ap_iou {} outside [0, 1]", self.ap_iou)));
        }
        if self.train.split == Split::Holdout {
            return Err(Error::InvalidArgument(format!(
                "{}: training on a holdout split is not allowed",
                self.experiment_id
            )));
        }
        Ok(())
    }

    /// Training settings with the experiment seed applied.
    pub fn training(&self) -> TrainingSpec {
        match self.model_kind {
            ModelKind::Classifier => TrainingSpec::Classifier(ClassifierConfig {
                seed: self.seed,
                ..self.classifier.clone()
            }),
            ModelKind::Detector => TrainingSpec::Detector(DetectorConfig {
                seed: self.seed,
                ..self.detector.clone()
            }),
        }
    }
}

/// What to train, independent of data.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum TrainingSpec {
    Classifier(ClassifierConfig),
    Detector(DetectorConfig),
}

impl TrainingSpec {
    pub fn kind(&self) -> ModelKind {
        match self {
            TrainingSpec::Classifier(_) => ModelKind::Classifier,
            TrainingSpec::Detector(_) => ModelKind::Detector,
        }
    }

    pub fn default_for(kind: ModelKind, seed: u64) -> Self {
        match kind {
            ModelKind::Classifier => TrainingSpec::Classifier(ClassifierConfig {
                seed,
                ..Default::default()
            }),
            ModelKind::Detector => TrainingSpec::Detector(DetectorConfig {
                seed,
                ..Default::default()
            }),
        }
    }
}

pub fn train_model(samples: &[ImageSample], spec: &TrainingSpec) -> Result<ModelParams> {
    match spec {
        TrainingSpec::Classifier(c) => train_classifier(samples, c),
        TrainingSpec::Detector(d) => train_detector(samples, d),
    }
}

/// Stable identifier of a trained model: a hash of its file bytes.
pub fn model_id(params: &ModelParams) -> String {
    bytes_hash(&model_io::to_bytes(params))
}

/// Scores of one test split under a trained model.
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub scored: Vec<ScoredLabel>,
    pub predictions: Vec<ImagePrediction>,
    pub auc: f64,
    pub ap: Option<f64>,
    pub confusion: ConfusionMatrix,
    pub roc: RocCurve,
}

/// Scores every test image and computes AUC, the confusion matrix at
/// `threshold` and, for detectors with ground truth, AP.
pub fn evaluate_model(
    params: &ModelParams,
    test: &[ImageSample],
    aggregation: Aggregation,
    threshold: f64,
    ap_iou: f64,
) -> Result<Evaluation> {
    let scored_images = par::map_slice(test, |s| score_image(params, &s.image, aggregation))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let scored: Vec<ScoredLabel> = test
        .iter()
        .zip(&scored_images)
        .map(|(s, r)| ScoredLabel::new(s.sample.image_id.clone(), r.score, s.label()))
        .collect();
    let summary = evaluate_scored(&scored, threshold)?;
    let ap = if params.kind == ModelKind::Detector && test.iter().any(|s| !s.boxes().is_empty()) {
        let dets: Vec<Vec<Detection>> = scored_images.iter().map(|r| r.detections.clone()).collect();
        let gts: Vec<Vec<_>> = test.iter().map(|s| s.boxes().to_vec()).collect();
        Some(average_precision(&dets, &gts, ap_iou)?)
    } else {
        None
    };
    let predictions = test
        .iter()
        .zip(scored_images)
        .map(|(s, r)| ImagePrediction {
            image_id: s.sample.image_id.clone(),
            score: r.score,
            detections: r.detections,
        })
        .collect();
    Ok(Evaluation {
        scored,
        predictions,
        auc: summary.auc,
        ap,
        confusion: summary.confusion,
        roc: summary.roc,
    })
}

/// Everything needed to reproduce and audit one evaluation. Contains no
/// paths or timings, so identical inputs give identical bytes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub experiment_id: String,
    pub model_kind: ModelKind,
    /// `dataset-name:split`, absent when a saved model was evaluated.
    pub train: Option<String>,
    pub test: String,
    pub aggregation: Aggregation,
    pub seed: u64,
    pub threshold: f64,
    pub config_hash: String,
    pub model_id: String,
    pub final_train_loss: f64,
    pub n_train: usize,
    pub n_test: usize,
    pub auc: f64,
    pub ap: Option<f64>,
    pub confusion: ConfusionMatrix,
    pub scored: Vec<ScoredLabel>,
}

impl ExperimentReport {
    pub fn to_json(&self) -> Result<Vec<u8>> {
        let mut bytes = serde_json::to_vec_pretty(self).map_err(|e| Error::json("report", e))?;
        bytes.push(b'\n');
        Ok(bytes)
    }

    pub fn from_json(bytes: &[u8], context: &str) -> Result<Self> {
        serde_json::from_slice(bytes).map_err(|e| Error::json(context, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&bytes, &path.display().to_string())
    }

    /// ROC curve recomputed from the stored per-image scores.
    pub fn roc(&self) -> Result<RocCurve> {
        crate::metrics::roc_curve(&self.scored)
    }
}

fn label_of_ref(manifest: &DatasetManifest, split: Split) -> String {
    format!("{}:{}", manifest.name, split)
}

/// Path-free description of an experiment, hashed into the report.
#[derive(Serialize)]
struct HashedConfig<'a> {
    experiment_id: &'a str,
    train: &'a str,
    test: &'a str,
    aggregation: Aggregation,
    threshold: f64,
    ap_iou: f64,
    training: &'a TrainingSpec,
}

/// Builds the report of an already trained model on loaded test data.
#[allow(clippy::too_many_arguments)]
pub fn make_report(
    experiment_id: &str,
    params: &ModelParams,
    train_label: Option<String>,
    n_train: usize,
    test_label: String,
    test: &[ImageSample],
    aggregation: Aggregation,
    seed: u64,
    threshold: f64,
    ap_iou: f64,
    training: Option<&TrainingSpec>,
) -> Result<(ExperimentReport, Evaluation)> {
    let eval = evaluate_model(params, test, aggregation, threshold, ap_iou)?;
    let fallback = TrainingSpec::default_for(params.kind, seed);
    let hash = config_hash(&HashedConfig {
        experiment_id,
        train: train_label.as_deref().unwrap_or(""),
        test: &test_label,
        aggregation,
        threshold,
        ap_iou,
        training: training.unwrap_or(&fallback),
    });
    let report = ExperimentReport {
        experiment_id: experiment_id.to_string(),
        model_kind: params.kind,
        train: train_label,
        test: test_label,
        aggregation,
        seed,
        threshold,
        config_hash: hash,
        model_id: model_id(params),
        final_train_loss: params.final_train_loss,
        n_train,
        n_test: test.len(),
        auc: eval.auc,
        ap: eval.ap,
        confusion: eval.confusion,
        scored: eval.scored.clone(),
    };
    Ok((report, eval))
}

/// Output files of one experiment.
#[derive(Clone, Debug)]
pub struct ExperimentOutput {
    pub report: ExperimentReport,
    pub report_path: PathBuf,
    pub roc_path: PathBuf,
    pub predictions_path: PathBuf,
    pub wall_time_s: f64,
}

/// File names next to a report: `x.json` gets `x.roc.csv` and
/// `x.predictions.json`.
pub fn sidecar_paths(report_path: &Path) -> (PathBuf, PathBuf) {
    let stem = report_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "report".into());
    let dir = report_path.parent().unwrap_or(Path::new(""));
    (dir.join(format!("{stem}.roc.csv")), dir.join(format!("{stem}.predictions.json")))
}

/// Writes a report, its ROC CSV and its predictions file atomically.
pub fn write_report(report: &ExperimentReport, eval: &Evaluation, report_path: &Path) -> Result<(PathBuf, PathBuf)> {
    let (roc_path, pred_path) = sidecar_paths(report_path);
    let predictions = PredictionsFile {
        model_id: report.model_id.clone(),
        aggregation: report.aggregation.as_str().to_string(),
        images: eval.predictions.clone(),
    };
    let mut pred_bytes = serde_json::to_vec_pretty(&predictions).map_err(|e| Error::json("predictions", e))?;
    pred_bytes.push(b'\n');
    fsutil::write_atomic(report_path, &report.to_json()?)?;
    fsutil::write_atomic(&roc_path, eval.roc.to_csv().as_bytes())?;
    fsutil::write_atomic(&pred_path, &pred_bytes)?;
    Ok((roc_path, pred_path))
}

/// Loaded inputs of an experiment.
pub struct ExperimentData {
    pub train_manifest: DatasetManifest,
    pub train: Vec<ImageSample>,
    pub test_manifest: DatasetManifest,
    pub test: Vec<ImageSample>,
}

pub fn load_ref(r: &DatasetRef) -> Result<(DatasetManifest, Vec<ImageSample>)> {
    let m = load_manifest(&r.manifest)?;
    let samples = m.load_split(r.split)?;
    Ok((m, samples))
}

/// Runs an experiment on data that is already loaded.
pub fn run_experiment_on(
    config: &ExperimentConfig,
    train_label: String,
    train: &[ImageSample],
    test_label: String,
    test: &[ImageSample],
) -> Result<(ExperimentReport, Evaluation)> {
    config.validate()?;
    let spec = config.training();
    let params = train_model(train, &spec)?;
    make_report(
        &config.experiment_id,
        &params,
        Some(train_label),
        train.len(),
        test_label,
        test,
        config.aggregation,
        config.seed,
        config.threshold,
        config.ap_iou,
        Some(&spec),
    )
}

/// Trains on the configured train split, scores the test split and writes
/// `<out_dir>/<experiment_id>.json` with its ROC CSV and predictions.
pub fn run_experiment(config: &ExperimentConfig, out_dir: &Path) -> Result<ExperimentOutput> {
    let wrap = |e: Error| Error::Experiment {
        experiment: config.experiment_id.clone(),
        source: Box::new(e),
    };
    let start = Instant::now();
    config.validate().map_err(wrap)?;
    let (train_m, train) = load_ref(&config.train).map_err(wrap)?;
    let (test_m, test) = load_ref(&config.test).map_err(wrap)?;
    let (report, eval) = run_experiment_on(
        config,
        label_of_ref(&train_m, config.train.split),
        &train,
        label_of_ref(&test_m, config.test.split),
        &test,
    )
    .map_err(wrap)?;
    let report_path = out_dir.join(format!("{}.json", config.experiment_id));
    let (roc_path, predictions_path) = write_report(&report, &eval, &report_path).map_err(wrap)?;
    Ok(ExperimentOutput {
        report,
        report_path,
        roc_path,
        predictions_path,
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}

/// Evaluates a saved model on one split of a manifest.
pub fn evaluate_saved_model(
    model_path: &Path,
    test_ref: &DatasetRef,
    aggregation: Aggregation,
    threshold: f64,
) -> Result<(ExperimentReport, Evaluation)> {
    let params = model_io::load_model(model_path)?;
    let (m, test) = load_ref(test_ref)?;
    let id = format!("eval-{}", m.name);
    make_report(
        &id,
        &params,
        None,
        0,
        label_of_ref(&m, test_ref.split),
        &test,
        aggregation,
        0,
        threshold,
        default_ap_iou(),
        None,
    )
}
