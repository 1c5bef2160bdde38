//! Validation statistics.

mod metrics;
mod sampling;
mod sensitivity;

pub use metrics::{
    accuracy, cohens_kappa, confusion, mcc_binary, mcc_binary_counts, mcc_multiclass,
    per_class_accuracy, softmax_temperature, Confusion, ConfusionMatrix,
};
pub use sampling::{margin_of_error, normal_quantile, required_sample_size, z_for_confidence};
pub use sensitivity::{
    agreement, sensitivity_report, sensitivity_run, AgreementMatrix, GoldMetrics, SensitivityReport,
    SetMetrics, SetRun, Summary,
};

use crate::zeroshot::ClassifyError;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EvalError {
    #[error("label `{label}` for `{id}` is not in label set `{label_set}`")]
    UnknownLabel {
        id: String,
        label: String,
        label_set: String,
    },
    #[error("prediction for `{0}` has no gold label")]
    MissingGold(String),
    #[error("labelings cover different documents (only in first: {only_a:?}; only in second: {only_b:?})")]
    IdMismatch {
        only_a: Vec<String>,
        only_b: Vec<String>,
    },
    #[error("class `{0}` has no gold examples")]
    EmptyClass(String),
    #[error("confusion matrix is empty")]
    Empty,
    #[error("expected a {expected}x{expected} matrix")]
    Shape { expected: usize },
    #[error("binary MCC needs exactly 2 classes, got {0}")]
    NotBinary(usize),
    #[error("{0}")]
    InvalidArgument(String),
    #[error("hypothesis set `{set}` uses label set `{found}`, expected `{expected}`")]
    MismatchedLabelSets {
        set: String,
        found: String,
        expected: String,
    },
    #[error("sensitivity analysis needs at least 2 hypothesis sets, got {0}")]
    TooFewSets(usize),
    #[error(transparent)]
    Classify(#[from] ClassifyError),
}
