//! Stance detection framed as textual entailment.
//!
//! Documents are classified against hypothesis sets through an NLI scoring
//! backend ([`zeroshot`]) or through few-shot prompts sent to a generative
//! backend ([`fewshot`]). Keyword routing ([`matching`]) controls which
//! hypotheses a document is paired with, and [`eval`] holds the validation
//! statistics: confusion matrices, MCC, Cohen's kappa, sample-size planning
//! and synonymous-hypothesis sensitivity runs.

pub mod backends;
pub mod config;
pub mod eval;
pub mod fewshot;
mod exec;
pub mod io;
pub mod manifest;
pub mod matching;
pub mod types;
pub mod validate;
pub mod zeroshot;

pub use types::{Dataset, Document, Hypothesis, HypothesisScore, HypothesisSet, Label, LabelSet, Prediction};
