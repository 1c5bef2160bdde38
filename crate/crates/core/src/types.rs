//! Domain types shared by every stage of the pipeline.

use std::collections::{BTreeMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::backends::EntailmentScore;

/// A label token such as `support`, `oppose` or `neutral`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Label(String);

impl Label {
    pub fn new(token: impl Into<String>) -> Self {
        Label(token.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for Label {
    fn from(s: &str) -> Self {
        Label(s.to_string())
    }
}

impl From<String> for Label {
    fn from(s: String) -> Self {
        Label(s)
    }
}

impl AsRef<str> for Label {
    fn as_ref(&self) -> &str {
        &self.0
    }
}

impl PartialEq<str> for Label {
    fn eq(&self, other: &str) -> bool {
        self.0 == other
    }
}

impl PartialEq<&str> for Label {
    fn eq(&self, other: &&str) -> bool {
        self.0 == *other
    }
}

/// A unit of text to classify.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub text: String,
    #[serde(default)]
    pub metadata: BTreeMap<String, String>,
}

impl Document {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Self {
        Document {
            id: id.into(),
            text: text.into(),
            metadata: BTreeMap::new(),
        }
    }

    pub fn with_meta(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.metadata.insert(key.into(), value.into());
        self
    }
}

/// An ordered collection of documents with unique ids.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Dataset {
    documents: Vec<Document>,
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum DatasetError {
    #[error("duplicate document id `{0}`")]
    DuplicateId(String),
    #[error("document `{0}` has empty text")]
    EmptyText(String),
}

impl Dataset {
    pub fn new(documents: Vec<Document>) -> Result<Self, DatasetError> {
        let mut seen = HashSet::with_capacity(documents.len());
        for doc in &documents {
            if doc.text.trim().is_empty() {
                return Err(DatasetError::EmptyText(doc.id.clone()));
            }
            if !seen.insert(doc.id.as_str()) {
                return Err(DatasetError::DuplicateId(doc.id.clone()));
            }
        }
        Ok(Dataset { documents })
    }

    pub fn documents(&self) -> &[Document] {
        &self.documents
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Document> {
        self.documents.iter().find(|d| d.id == id)
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Document> {
        self.documents.iter()
    }

    /// Keeps the documents accepted by `keep`, preserving order.
    pub fn filter(&self, mut keep: impl FnMut(&Document) -> bool) -> Dataset {
        Dataset {
            documents: self.documents.iter().filter(|d| keep(d)).cloned().collect(),
        }
    }

    pub fn into_documents(self) -> Vec<Document> {
        self.documents
    }
}

impl<'a> IntoIterator for &'a Dataset {
    type Item = &'a Document;
    type IntoIter = std::slice::Iter<'a, Document>;

    fn into_iter(self) -> Self::IntoIter {
        self.documents.iter()
    }
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum LabelSetError {
    #[error("label set `{0}` needs at least two labels")]
    TooFewLabels(String),
    #[error("label set `{set}` repeats label `{label}`")]
    DuplicateLabel { set: String, label: String },
    #[error("label set `{0}` contains an empty label")]
    EmptyLabel(String),
}

/// The universe of assignable labels, in declared tie-break order.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawLabelSet")]
pub struct LabelSet {
    name: String,
    labels: Vec<Label>,
}

#[derive(Deserialize)]
struct RawLabelSet {
    name: String,
    labels: Vec<Label>,
}

impl TryFrom<RawLabelSet> for LabelSet {
    type Error = LabelSetError;

    fn try_from(raw: RawLabelSet) -> Result<Self, Self::Error> {
        LabelSet::new(raw.name, raw.labels)
    }
}

impl LabelSet {
    pub fn new<L: Into<Label>>(
        name: impl Into<String>,
        labels: impl IntoIterator<Item = L>,
    ) -> Result<Self, LabelSetError> {
        let name = name.into();
        let labels: Vec<Label> = labels.into_iter().map(Into::into).collect();
        if labels.len() < 2 {
            return Err(LabelSetError::TooFewLabels(name));
        }
        let mut seen = HashSet::new();
        for label in &labels {
            if label.as_str().trim().is_empty() {
                return Err(LabelSetError::EmptyLabel(name));
            }
            if !seen.insert(label) {
                return Err(LabelSetError::DuplicateLabel {
                    set: name,
                    label: label.to_string(),
                });
            }
        }
        Ok(LabelSet { name, labels })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn contains(&self, label: &str) -> bool {
        self.labels.iter().any(|l| l.as_str() == label)
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l.as_str() == label)
    }

    /// Resolves a token to the set's own `Label` value.
    pub fn get(&self, label: &str) -> Option<&Label> {
        self.labels.iter().find(|l| l.as_str() == label)
    }
}

/// A natural-language statement standing for one label.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Hypothesis {
    pub id: String,
    pub text: String,
    pub label: Label,
}

impl Hypothesis {
    pub fn new(id: impl Into<String>, label: impl Into<Label>, text: impl Into<String>) -> Self {
        Hypothesis {
            id: id.into(),
            text: text.into(),
            label: label.into(),
        }
    }
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum HypothesisSetError {
    #[error("hypothesis set `{set}`: hypothesis `{hypothesis}` uses label `{label}` outside label set `{label_set}`")]
    UnknownLabel {
        set: String,
        hypothesis: String,
        label: String,
        label_set: String,
    },
    #[error("hypothesis set `{set}`: duplicate hypothesis id `{hypothesis}`")]
    DuplicateId { set: String, hypothesis: String },
    #[error("hypothesis set `{set}`: hypothesis `{hypothesis}` has empty text")]
    EmptyText { set: String, hypothesis: String },
}

/// Candidate hypotheses for one classification task. Order is the tie-break order.
///
/// Construction enforces the structural invariants (known labels, distinct ids,
/// non-empty text). Exhaustiveness is reported by [`crate::validate::validate_set`]
/// so that incomplete sets can still be inspected.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HypothesisSet {
    pub id: String,
    pub label_set: LabelSet,
    pub hypotheses: Vec<Hypothesis>,
}

impl HypothesisSet {
    pub fn new(
        id: impl Into<String>,
        label_set: LabelSet,
        hypotheses: Vec<Hypothesis>,
    ) -> Result<Self, HypothesisSetError> {
        let id = id.into();
        let mut seen = HashSet::new();
        for h in &hypotheses {
            if !label_set.contains(h.label.as_str()) {
                return Err(HypothesisSetError::UnknownLabel {
                    set: id,
                    hypothesis: h.id.clone(),
                    label: h.label.to_string(),
                    label_set: label_set.name().to_string(),
                });
            }
            if h.text.trim().is_empty() {
                return Err(HypothesisSetError::EmptyText {
                    set: id,
                    hypothesis: h.id.clone(),
                });
            }
            if !seen.insert(h.id.as_str()) {
                return Err(HypothesisSetError::DuplicateId {
                    set: id,
                    hypothesis: h.id.clone(),
                });
            }
        }
        Ok(HypothesisSet {
            id,
            label_set,
            hypotheses,
        })
    }

    pub fn hypothesis(&self, id: &str) -> Option<&Hypothesis> {
        self.hypotheses.iter().find(|h| h.id == id)
    }
}

/// Score of one hypothesis against one document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypothesisScore {
    pub hypothesis_id: String,
    #[serde(flatten)]
    pub score: EntailmentScore,
}

/// A chosen label plus the evidence and provenance behind it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub document_id: String,
    pub label: Label,
    /// Per-hypothesis scores in declared order. Empty for generative predictions.
    #[serde(default)]
    pub per_hypothesis: Vec<HypothesisScore>,
    pub hypothesis_set_id: String,
    pub backend_id: String,
    pub model_id: String,
    /// Hash of the rendered prompt, set for generative predictions.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_hash: Option<String>,
}
