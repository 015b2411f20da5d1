//! Trainable linear baselines: a whole-image classifier and a sliding-window
//! detector trained with focal loss.

pub mod classifier;
pub mod detector;
pub mod features;
pub mod focal;
pub mod linear;
pub mod model_io;
pub mod scoring;

pub use classifier::{classify, train_classifier, ClassifierConfig};
pub use detector::{detect, nms, score_windows, train_detector, window_grid, window_label, window_stats, Detection, DetectorConfig, WindowStats};
pub use features::{extract_features, ExtractorConfig, FeatureVector, GradientField};
pub use focal::{focal_loss, focal_loss_grad, focal_loss_logit, logistic, FocalLossParams, FocalSchedule};
pub use linear::{fit_linear, sigmoid_score, Design, ModelKind, ModelParams, ScanConfig, SgdOptions, FORMAT_VERSION};
pub use model_io::{load_model, save_model};
pub use scoring::{image_score, score_image, Aggregation, ScoredImage};
