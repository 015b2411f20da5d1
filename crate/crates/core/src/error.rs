use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("JSON error in {context}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },

    #[error("invalid manifest: {image_id}: {field}: {message}")]
    Manifest {
        image_id: String,
        field: String,
        message: String,
    },

    #[error("invalid image: {0}")]
    Image(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("generation failed: {0}")]
    Generation(String),

    #[error("no valid edge placement for defect after {retries} retries")]
    DefectPlacement { retries: usize },

    #[error("training failed: {0}")]
    Training(String),

    #[error("corrupt model file: {0}")]
    CorruptModel(String),

    #[error("unsupported version: model format {found}, expected {expected}")]
    UnsupportedVersion { found: u32, expected: u32 },

    #[error("feature length mismatch: expected {expected}, got {found}")]
    LengthMismatch { expected: usize, found: usize },

    #[error("image size mismatch: expected {expected_w}x{expected_h}, got {found_w}x{found_h}")]
    SizeMismatch {
        expected_w: usize,
        expected_h: usize,
        found_w: usize,
        found_h: usize,
    },

    #[error("metric error: {0}")]
    Metric(String),

    #[error("clustering error: {0}")]
    Cluster(String),

    #[error("assignment/manifest mismatch: {0}")]
    AssignmentMismatch(String),

    #[error("experiment {experiment} failed")]
    Experiment {
        experiment: String,
        #[source]
        source: Box<Error>,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(context: impl Into<String>, source: serde_json::Error) -> Self {
        Error::Json {
            context: context.into(),
            source,
        }
    }

    pub(crate) fn manifest(
        image_id: impl Into<String>,
        field: impl Into<String>,
        message: impl Into<String>,
    ) -> Self {
        Error::Manifest {
            image_id: image_id.into(),
            field: field.into(),
            message: message.into(),
        }
    }

    /// This error and all of its causes, joined with `": "`.
    pub fn chain(&self) -> String {
        let mut out = self.to_string();
        let mut cur: Option<&dyn std::error::Error> = std::error::Error::source(self);
        while let Some(e) = cur {
            out.push_str(": ");
            out.push_str(&e.to_string());
            cur = e.source();
        }
        out
    }
}
