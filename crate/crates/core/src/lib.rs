//! Desk-scale benchmark for robustness of visual defect inspection.
//!
//! Generates uniform and diverse synthetic part datasets with crescent
//! defects and a shifted holdout batch, trains linear whole-image and
//! sliding-window baselines, scores them with ROC/AUC/IOU/AP and curates
//! training data by Ward clustering.

pub mod cluster;
pub mod dataset;
pub mod error;
pub mod fsutil;
pub mod harness;
pub mod image;
pub mod learner;
pub mod metrics;
pub mod par;
pub mod rng;
pub mod syngen;
mod util;

pub use dataset::{label_of, load_manifest, split_dataset, BBox, DatasetManifest, Label, Sample, Split};
pub use error::{Error, Result};
pub use image::GrayImage;
pub use util::{bytes_hash, config_hash};
