//! Keyword matching and dimension routing.
//!
//! A keyword matches at word boundaries by default, where a word is a maximal
//! run of alphanumeric characters: `mask` matches "Mask mandates" but neither
//! "unmasked" nor "masks". A trailing `*` turns a keyword into a prefix pattern
//! (`mask*` matches "masks" and "masked" but still not "unmasked").
//! Case-insensitive matching applies full Unicode case folding to both sides.

use std::borrow::Cow;
use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::types::{Dataset, Document, HypothesisSet, Label};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatchMode {
    #[default]
    Any,
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct MatchPolicy {
    pub mode: MatchMode,
    pub case_sensitive: bool,
    pub boundary: bool,
}

impl Default for MatchPolicy {
    fn default() -> Self {
        MatchPolicy {
            mode: MatchMode::Any,
            case_sensitive: false,
            boundary: true,
        }
    }
}

fn fold<'a>(s: &'a str, policy: &MatchPolicy) -> Cow<'a, str> {
    if policy.case_sensitive {
        Cow::Borrowed(s)
    } else {
        Cow::Owned(caseless::default_case_fold_str(s))
    }
}

/// Looks for `keyword` in already-folded `haystack`.
fn find_keyword(haystack: &str, keyword: &str, policy: &MatchPolicy) -> bool {
    let (needle, prefix) = match keyword.strip_suffix('*') {
        Some(stem) if !stem.is_empty() => (stem, true),
        _ => (keyword, false),
    };
    let needle = fold(needle, policy);
    if needle.is_empty() {
        return false;
    }
    if !policy.boundary {
        return haystack.contains(needle.as_ref());
    }
    let mut from = 0;
    while let Some(offset) = haystack[from..].find(needle.as_ref()) {
        let start = from + offset;
        let end = start + needle.len();
        let before_ok = haystack[..start]
            .chars()
            .next_back()
            .is_none_or(|c| !c.is_alphanumeric());
        let after_ok = prefix
            || haystack[end..]
                .chars()
                .next()
                .is_none_or(|c| !c.is_alphanumeric());
        if before_ok && after_ok {
            return true;
        }
        // step one character so overlapping occurrences are still considered
        from = start + haystack[start..].chars().next().map_or(1, char::len_utf8);
    }
    false
}

/// True iff the document satisfies the keyword condition under `policy`.
/// An empty keyword list never matches.
pub fn matches<S: AsRef<str>>(doc: &Document, keywords: &[S], policy: &MatchPolicy) -> bool {
    text_matches(&doc.text, keywords, policy)
}

pub fn text_matches<S: AsRef<str>>(text: &str, keywords: &[S], policy: &MatchPolicy) -> bool {
    if keywords.is_empty() {
        return false;
    }
    let haystack = fold(text, policy);
    let mut hits = keywords
        .iter()
        .map(|k| find_keyword(&haystack, k.as_ref(), policy));
    match policy.mode {
        MatchMode::Any => hits.any(|h| h),
        MatchMode::All => hits.all(|h| h),
    }
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum DimensionError {
    #[error("dimension `{0}` has no keywords")]
    NoKeywords(String),
    #[error("dimension `{dimension}`: flagged label `{label}` is not in label set `{label_set}`")]
    UnknownFlaggedLabel {
        dimension: String,
        label: String,
        label_set: String,
    },
    #[error("duplicate dimension name `{0}`")]
    DuplicateName(String),
}

/// A topical slice of the task with its own keywords and hypotheses.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Dimension {
    pub name: String,
    pub keywords: Vec<String>,
    pub hypothesis_set: HypothesisSet,
    /// Labels that count toward the aggregate flag.
    pub flagged_labels: Vec<Label>,
}

impl Dimension {
    pub fn new(
        name: impl Into<String>,
        keywords: Vec<String>,
        hypothesis_set: HypothesisSet,
        flagged_labels: Vec<Label>,
    ) -> Result<Self, DimensionError> {
        let name = name.into();
        if keywords.iter().all(|k| k.trim().is_empty()) {
            return Err(DimensionError::NoKeywords(name));
        }
        for label in &flagged_labels {
            if !hypothesis_set.label_set.contains(label.as_str()) {
                return Err(DimensionError::UnknownFlaggedLabel {
                    dimension: name,
                    label: label.to_string(),
                    label_set: hypothesis_set.label_set.name().to_string(),
                });
            }
        }
        Ok(Dimension {
            name,
            keywords,
            hypothesis_set,
            flagged_labels,
        })
    }

    pub fn is_flagged(&self, label: &Label) -> bool {
        self.flagged_labels.contains(label)
    }
}

pub fn check_distinct_names(dimensions: &[Dimension]) -> Result<(), DimensionError> {
    let mut seen = HashSet::new();
    for d in dimensions {
        if !seen.insert(d.name.as_str()) {
            return Err(DimensionError::DuplicateName(d.name.clone()));
        }
    }
    Ok(())
}

/// Names of every dimension whose keywords match, in declared order.
pub fn route(doc: &Document, dimensions: &[Dimension], policy: &MatchPolicy) -> Vec<String> {
    route_indices(doc, dimensions, policy)
        .into_iter()
        .map(|i| dimensions[i].name.clone())
        .collect()
}

pub fn route_indices(doc: &Document, dimensions: &[Dimension], policy: &MatchPolicy) -> Vec<usize> {
    let haystack = fold(&doc.text, policy);
    dimensions
        .iter()
        .enumerate()
        .filter(|(_, d)| {
            let mut hits = d
                .keywords
                .iter()
                .map(|k| find_keyword(&haystack, k, policy));
            !d.keywords.is_empty()
                && match policy.mode {
                    MatchMode::Any => hits.any(|h| h),
                    MatchMode::All => hits.all(|h| h),
                }
        })
        .map(|(i, _)| i)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ContextReport {
    pub total: usize,
    pub matched: usize,
    /// `None` for an empty dataset.
    pub fraction: Option<f64>,
    pub empty: bool,
    pub unmatched_ids: Vec<String>,
}

/// How much of a dataset mentions the target keywords.
pub fn context_report<S: AsRef<str>>(
    dataset: &Dataset,
    keywords: &[S],
    policy: &MatchPolicy,
) -> ContextReport {
    let total = dataset.len();
    let unmatched_ids: Vec<String> = dataset
        .iter()
        .filter(|d| !matches(d, keywords, policy))
        .map(|d| d.id.clone())
        .collect();
    let matched = total - unmatched_ids.len();
    ContextReport {
        total,
        matched,
        fraction: (total > 0).then(|| matched as f64 / total as f64),
        empty: total == 0,
        unmatched_ids,
    }
}
