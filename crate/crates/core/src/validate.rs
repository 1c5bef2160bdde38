//! Exhaustiveness checks for hypothesis sets.

use serde::Serialize;

use crate::types::{HypothesisSet, Label};

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub set_id: String,
    /// Labels with no hypothesis. Any entry here fails validation.
    pub missing_labels: Vec<Label>,
    /// Advisory notes that do not fail validation.
    pub advisories: Vec<String>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.missing_labels.is_empty()
    }
}

/// Checks that every label of the set's label set has at least one hypothesis.
///
/// A two-label set forces every document into one of two stances and gets a
/// false-dilemma advisory; it still passes.
pub fn validate_set(hset: &HypothesisSet) -> ValidationReport {
    let missing_labels: Vec<Label> = hset
        .label_set
        .labels()
        .iter()
        .filter(|label| !hset.hypotheses.iter().any(|h| &h.label == *label))
        .cloned()
        .collect();

    let mut advisories = Vec::new();
    if hset.label_set.len() <= 2 {
        advisories.push(format!(
            "false dilemma: label set `{}` offers only {} labels ({}); documents without either stance must still pick one",
            hset.label_set.name(),
            hset.label_set.len(),
            hset.label_set
                .labels()
                .iter()
                .map(Label::as_str)
                .collect::<Vec<_>>()
                .join("/"),
        ));
    }

    ValidationReport {
        set_id: hset.id.clone(),
        missing_labels,
        advisories,
    }
}
