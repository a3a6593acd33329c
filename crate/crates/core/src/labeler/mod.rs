//! Boosted-tree user labeling: training with random search, prediction,
//! fine-tuning and annotation files.

use std::path::Path;

use thiserror::Error;

pub mod annotations;
pub mod binning;
pub mod boost;
pub mod metrics;
pub mod model;
pub mod search;
pub mod tree;

pub use annotations::{annotation_template, load_annotations, read_annotations, AnnotationRecord};
pub use boost::{fine_tune, fit, BoostParams, FineTuneOptions};
pub use model::{ModelMetadata, TreeEnsembleModel};
pub use search::{train, SearchConfig, SearchReport, SearchSpace, MIN_TRAINING_ROWS};
pub use tree::{Tree, TreeNode};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LabelError {
    #[error("{rows} feature rows but {labels} labels")]
    LengthMismatch { rows: usize, labels: usize },
    #[error("need at least {min} labeled rows, got {got}")]
    TooFewRows { got: usize, min: usize },
    #[error("degenerate labels: both classes must be present")]
    DegenerateLabels,
    #[error("label {0} outside [0, 1]")]
    LabelOutOfRange(f64),
    #[error("feature schema mismatch: missing [{}], extra [{}]", .missing.join(", "), .extra.join(", "))]
    SchemaMismatch { missing: Vec<String>, extra: Vec<String> },
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("malformed model JSON: {0}")]
    Json(String),
    #[error("annotation file line {line}: {message}")]
    Annotation { line: u64, message: String },
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

impl LabelError {
    pub(crate) fn io(path: &Path, e: &std::io::Error) -> Self {
        LabelError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        }
    }
}

impl From<serde_json::Error> for LabelError {
    fn from(e: serde_json::Error) -> Self {
        LabelError::Json(e.to_string())
    }
}
