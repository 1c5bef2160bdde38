//! Zero-shot NLI classification.
//!
//! Every hypothesis of a set is scored against the document independently; the
//! hypothesis with the highest entailment probability gives the label, ties going
//! to the earliest hypothesis in declared order.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::backends::{Backend, BackendError, EntailmentScore, PairRequest};
use crate::exec::map_indexed;
use crate::matching::{route_indices, Dimension, MatchPolicy};
use crate::types::{Dataset, Document, Hypothesis, HypothesisScore, HypothesisSet, Label, Prediction};
use crate::validate::validate_set;

/// What hypotheses are ranked by.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScoringMode {
    /// Entailment probability alone.
    #[default]
    Entail,
    /// Entailment minus contradiction probability.
    EntailMinusContradict,
}

impl ScoringMode {
    pub fn key(&self, score: &EntailmentScore) -> f64 {
        match self {
            ScoringMode::Entail => score.entail(),
            ScoringMode::EntailMinusContradict => score.entail() - score.contradict(),
        }
    }
}

#[derive(Debug, Clone, thiserror::Error, PartialEq)]
pub enum ClassifyError {
    #[error("hypothesis set `{set}` is not exhaustive; labels without hypotheses: {missing}")]
    IncompleteSet { set: String, missing: String },
    #[error("hypothesis set `{0}` has no hypotheses")]
    EmptySet(String),
    #[error("document `{document_id}`, hypothesis `{hypothesis_id}`: {source}")]
    Backend {
        document_id: String,
        hypothesis_id: String,
        #[source]
        source: BackendError,
    },
    #[error("threshold must lie strictly between 0 and 1, got {0}")]
    Threshold(f64),
    #[error(transparent)]
    ErrorBudget(#[from] BudgetExceeded),
    #[error("inconsistent aggregation for `{document_id}`: {reason}")]
    Inconsistent { document_id: String, reason: String },
}

fn summarize(failures: &[DocumentFailure]) -> String {
    const SHOWN: usize = 5;
    let mut parts: Vec<String> = failures
        .iter()
        .take(SHOWN)
        .map(|f| format!("{}: {}", f.document_id, f.error))
        .collect();
    if failures.len() > SHOWN {
        parts.push(format!("and {} more", failures.len() - SHOWN));
    }
    parts.join("; ")
}

/// More documents failed than the run's error budget allows.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("{failed} of {total} documents failed (limit {limit}): {}", summarize(.failures))]
pub struct BudgetExceeded {
    pub failed: usize,
    pub total: usize,
    pub limit: f64,
    pub failures: Vec<DocumentFailure>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocumentFailure {
    pub document_id: String,
    pub error: String,
}

pub(crate) fn check_set(hset: &HypothesisSet) -> Result<(), ClassifyError> {
    if hset.hypotheses.is_empty() {
        return Err(ClassifyError::EmptySet(hset.id.clone()));
    }
    let report = validate_set(hset);
    if !report.passed() {
        return Err(ClassifyError::IncompleteSet {
            set: hset.id.clone(),
            missing: report
                .missing_labels
                .iter()
                .map(Label::as_str)
                .collect::<Vec<_>>()
                .join(", "),
        });
    }
    Ok(())
}

/// Index of the largest key; the earliest wins ties. `None` for an empty slice.
pub fn argmax_first(keys: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &k) in keys.iter().enumerate() {
        match best {
            Some(b) if k <= keys[b] => {}
            _ => best = Some(i),
        }
    }
    best
}

fn score_one(
    backend: &dyn Backend,
    doc: &Document,
    hypothesis: &Hypothesis,
) -> Result<EntailmentScore, ClassifyError> {
    backend
        .score(&PairRequest {
            premise_id: &doc.id,
            premise: &doc.text,
            hypothesis_id: &hypothesis.id,
            hypothesis: &hypothesis.text,
        })
        .map_err(|source| ClassifyError::Backend {
            document_id: doc.id.clone(),
            hypothesis_id: hypothesis.id.clone(),
            source,
        })
}

fn classify_checked(
    backend: &dyn Backend,
    doc: &Document,
    hset: &HypothesisSet,
    mode: ScoringMode,
) -> Result<Prediction, ClassifyError> {
    let per_hypothesis = hset
        .hypotheses
        .iter()
        .map(|h| {
            score_one(backend, doc, h).map(|score| HypothesisScore {
                hypothesis_id: h.id.clone(),
                score,
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    let keys: Vec<f64> = per_hypothesis.iter().map(|s| mode.key(&s.score)).collect();
    let winner = argmax_first(&keys).expect("set checked non-empty");
    Ok(Prediction {
        document_id: doc.id.clone(),
        label: hset.hypotheses[winner].label.clone(),
        per_hypothesis,
        hypothesis_set_id: hset.id.clone(),
        backend_id: backend.id().to_string(),
        model_id: backend.model_id().to_string(),
        prompt_hash: None,
    })
}

/// Labels a document with the label of its most-entailed hypothesis.
pub fn classify_multi(
    backend: &dyn Backend,
    doc: &Document,
    hset: &HypothesisSet,
) -> Result<Prediction, ClassifyError> {
    classify_multi_with(backend, doc, hset, ScoringMode::Entail)
}

pub fn classify_multi_with(
    backend: &dyn Backend,
    doc: &Document,
    hset: &HypothesisSet,
    mode: ScoringMode,
) -> Result<Prediction, ClassifyError> {
    check_set(hset)?;
    classify_checked(backend, doc, hset, mode)
}

pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinaryDecision {
    pub document_id: String,
    pub hypothesis_id: String,
    pub entail_probability: f64,
    pub threshold: f64,
    /// `entail_probability >= threshold`
    pub decision: bool,
    pub score: EntailmentScore,
}

/// Single-hypothesis mode: does the document entail `hypothesis`?
pub fn classify_binary(
    backend: &dyn Backend,
    doc: &Document,
    hypothesis: &Hypothesis,
    threshold: f64,
) -> Result<BinaryDecision, ClassifyError> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(ClassifyError::Threshold(threshold));
    }
    let score = score_one(backend, doc, hypothesis)?;
    Ok(BinaryDecision {
        document_id: doc.id.clone(),
        hypothesis_id: hypothesis.id.clone(),
        entail_probability: score.entail(),
        threshold,
        decision: score.entail() >= threshold,
        score,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunOptions {
    pub parallelism: usize,
    /// Largest tolerated fraction of failed documents.
    pub error_budget: f64,
    pub scoring: ScoringMode,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            parallelism: 1,
            error_budget: 0.0,
            scoring: ScoringMode::Entail,
        }
    }
}

impl RunOptions {
    pub fn with_parallelism(parallelism: usize) -> Self {
        RunOptions {
            parallelism,
            ..Default::default()
        }
    }
}

pub(crate) fn enforce_budget(
    failures: Vec<DocumentFailure>,
    total: usize,
    limit: f64,
) -> Result<Vec<DocumentFailure>, BudgetExceeded> {
    if failures.is_empty() {
        return Ok(failures);
    }
    let fraction = failures.len() as f64 / total.max(1) as f64;
    if fraction > limit {
        return Err(BudgetExceeded {
            failed: failures.len(),
            total,
            limit,
            failures,
        });
    }
    for f in &failures {
        tracing::warn!(document = %f.document_id, error = %f.error, "document failed within error budget");
    }
    Ok(failures)
}

/// Predictions for a dataset, in input order.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetRun {
    pub predictions: Vec<Prediction>,
    pub failures: Vec<DocumentFailure>,
}

pub fn classify_dataset(
    backend: &dyn Backend,
    dataset: &Dataset,
    hset: &HypothesisSet,
    options: &RunOptions,
) -> Result<DatasetRun, ClassifyError> {
    check_set(hset)?;
    let docs = dataset.documents();
    let outcomes = map_indexed(docs.len(), options.parallelism, |i| {
        classify_checked(backend, &docs[i], hset, options.scoring)
    });
    let mut predictions = Vec::with_capacity(docs.len());
    let mut failures = Vec::new();
    for (doc, outcome) in docs.iter().zip(outcomes) {
        match outcome {
            Ok(p) => predictions.push(p),
            Err(e) => failures.push(DocumentFailure {
                document_id: doc.id.clone(),
                error: e.to_string(),
            }),
        }
    }
    let failures = enforce_budget(failures, docs.len(), options.error_budget)?;
    Ok(DatasetRun {
        predictions,
        failures,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AggregateLabel {
    Flagged,
    NotFlagged,
    Unrouted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimensionPrediction {
    pub dimension: String,
    pub prediction: Prediction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateResult {
    pub document_id: String,
    pub per_dimension: Vec<DimensionPrediction>,
    pub aggregate_label: AggregateLabel,
}

/// OR-aggregation: flagged when any routed dimension predicts one of its flagged labels.
///
/// `predictions` must cover exactly the dimensions `doc` routes to.
pub fn aggregate_or(
    doc: &Document,
    dimensions: &[Dimension],
    policy: &MatchPolicy,
    predictions: Vec<DimensionPrediction>,
) -> Result<AggregateResult, ClassifyError> {
    let inconsistent = |reason: String| ClassifyError::Inconsistent {
        document_id: doc.id.clone(),
        reason,
    };
    let routed = route_indices(doc, dimensions, policy);
    let mut by_name: BTreeMap<&str, &DimensionPrediction> = BTreeMap::new();
    for p in &predictions {
        if p.prediction.document_id != doc.id {
            return Err(inconsistent(format!(
                "prediction for document `{}`",
                p.prediction.document_id
            )));
        }
        if !routed.iter().any(|&i| dimensions[i].name == p.dimension) {
            return Err(inconsistent(format!(
                "prediction for unrouted dimension `{}`",
                p.dimension
            )));
        }
        if by_name.insert(&p.dimension, p).is_some() {
            return Err(inconsistent(format!("two predictions for `{}`", p.dimension)));
        }
    }
    let mut flagged = false;
    for &i in &routed {
        let dim = &dimensions[i];
        let Some(p) = by_name.get(dim.name.as_str()) else {
            return Err(inconsistent(format!("no prediction for routed dimension `{}`", dim.name)));
        };
        flagged |= dim.is_flagged(&p.prediction.label);
    }
    let aggregate_label = if routed.is_empty() {
        AggregateLabel::Unrouted
    } else if flagged {
        AggregateLabel::Flagged
    } else {
        AggregateLabel::NotFlagged
    };
    // keep declared dimension order in the output
    let mut per_dimension = predictions;
    per_dimension.sort_by_key(|p| dimensions.iter().position(|d| d.name == p.dimension));
    Ok(AggregateResult {
        document_id: doc.id.clone(),
        per_dimension,
        aggregate_label,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DimensionRun {
    pub results: Vec<AggregateResult>,
    pub failures: Vec<DocumentFailure>,
}

/// Routes each document, classifies it once per matched dimension, then OR-aggregates.
pub fn classify_dimensions(
    backend: &dyn Backend,
    dataset: &Dataset,
    dimensions: &[Dimension],
    policy: &MatchPolicy,
    options: &RunOptions,
) -> Result<DimensionRun, ClassifyError> {
    for d in dimensions {
        check_set(&d.hypothesis_set)?;
    }
    let docs = dataset.documents();
    let tasks: Vec<(usize, usize)> = docs
        .iter()
        .enumerate()
        .flat_map(|(di, doc)| route_indices(doc, dimensions, policy).into_iter().map(move |k| (di, k)))
        .collect();
    let outcomes = map_indexed(tasks.len(), options.parallelism, |t| {
        let (di, k) = tasks[t];
        classify_checked(backend, &docs[di], &dimensions[k].hypothesis_set, options.scoring)
    });

    let mut per_doc: Vec<Result<Vec<DimensionPrediction>, String>> =
        docs.iter().map(|_| Ok(Vec::new())).collect();
    for (&(di, k), outcome) in tasks.iter().zip(outcomes) {
        match (&mut per_doc[di], outcome) {
            (Ok(list), Ok(prediction)) => list.push(DimensionPrediction {
                dimension: dimensions[k].name.clone(),
                prediction,
            }),
            (slot @ Ok(_), Err(e)) => *slot = Err(e.to_string()),
            (Err(_), _) => {}
        }
    }

    let mut results = Vec::with_capacity(docs.len());
    let mut failures = Vec::new();
    for (doc, outcome) in docs.iter().zip(per_doc) {
        match outcome {
            Ok(predictions) => results.push(aggregate_or(doc, dimensions, policy, predictions)?),
            Err(error) => failures.push(DocumentFailure {
                document_id: doc.id.clone(),
                error,
            }),
        }
    }
    let failures = enforce_budget(failures, docs.len(), options.error_budget)?;
    Ok(DimensionRun { results, failures })
}

/// Label counts for a finished run.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunReport {
    pub documents: usize,
    pub failed: usize,
    pub label_counts: BTreeMap<String, usize>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub per_dimension: BTreeMap<String, BTreeMap<String, usize>>,
    pub unrouted: usize,
}

impl RunReport {
    pub fn from_predictions(predictions: &[Prediction], failed: usize) -> Self {
        let mut label_counts = BTreeMap::new();
        for p in predictions {
            *label_counts.entry(p.label.to_string()).or_insert(0) += 1;
        }
        RunReport {
            documents: predictions.len() + failed,
            failed,
            label_counts,
            ..Default::default()
        }
    }

    pub fn from_aggregates(results: &[AggregateResult], failed: usize) -> Self {
        let mut report = RunReport {
            documents: results.len() + failed,
            failed,
            ..Default::default()
        };
        for r in results {
            let key = match r.aggregate_label {
                AggregateLabel::Flagged => "flagged",
                AggregateLabel::NotFlagged => "not-flagged",
                AggregateLabel::Unrouted => {
                    report.unrouted += 1;
                    "unrouted"
                }
            };
            *report.label_counts.entry(key.to_string()).or_insert(0) += 1;
            for dp in &r.per_dimension {
                *report
                    .per_dimension
                    .entry(dp.dimension.clone())
                    .or_default()
                    .entry(dp.prediction.label.to_string())
                    .or_insert(0) += 1;
            }
        }
        report
    }
}
