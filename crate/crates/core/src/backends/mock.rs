use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    prompt_hash, Backend, BackendError, BackendKind, EntailmentScore, GenerationParams,
    PairRequest,
};
use crate::matching::{text_matches, MatchPolicy};

/// One row of a mock score table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockScoreRow {
    pub premise_id: String,
    pub hypothesis_id: String,
    pub entail: f64,
    pub neutral: f64,
    pub contradict: f64,
}

/// Deterministic offline backend.
///
/// Scores come from an explicit `(premise id, hypothesis id)` table. Pairs
/// missing from the table fall back to a keyword rule: entail 0.8 when any of
/// the hypothesis' keywords occurs in the premise, otherwise contradict 0.8
/// (the remaining mass is split evenly). Completions are looked up by prompt hash.
#[derive(Debug, Clone, Default)]
pub struct MockBackend {
    id: String,
    model_id: String,
    table: HashMap<(String, String), EntailmentScore>,
    keywords: HashMap<String, Vec<String>>,
    completions: HashMap<String, String>,
    default_completion: Option<String>,
    failures: HashMap<String, BackendError>,
}

impl MockBackend {
    pub fn new(id: impl Into<String>, model_id: impl Into<String>) -> Self {
        MockBackend {
            id: id.into(),
            model_id: model_id.into(),
            ..Default::default()
        }
    }

    pub fn with_score(mut self, premise_id: &str, hypothesis_id: &str, score: EntailmentScore) -> Self {
        self.insert_score(premise_id, hypothesis_id, score);
        self
    }

    pub fn insert_score(&mut self, premise_id: &str, hypothesis_id: &str, score: EntailmentScore) {
        self.table
            .insert((premise_id.to_string(), hypothesis_id.to_string()), score);
    }

    pub fn with_keywords<S: Into<String>>(
        mut self,
        hypothesis_id: &str,
        keywords: impl IntoIterator<Item = S>,
    ) -> Self {
        self.keywords.insert(
            hypothesis_id.to_string(),
            keywords.into_iter().map(Into::into).collect(),
        );
        self
    }

    pub fn with_completion(mut self, prompt: &str, completion: impl Into<String>) -> Self {
        self.completions.insert(prompt_hash(prompt), completion.into());
        self
    }

    pub fn with_completion_for_hash(mut self, hash: &str, completion: impl Into<String>) -> Self {
        self.completions.insert(hash.to_string(), completion.into());
        self
    }

    pub fn with_default_completion(mut self, completion: impl Into<String>) -> Self {
        self.default_completion = Some(completion.into());
        self
    }

    /// Every request about `premise_id` fails with `error`.
    pub fn failing_on(mut self, premise_id: &str, error: BackendError) -> Self {
        self.failures.insert(premise_id.to_string(), error);
        self
    }

    pub fn extend_rows(&mut self, rows: impl IntoIterator<Item = MockScoreRow>) -> Result<(), BackendError> {
        for row in rows {
            let score = EntailmentScore::normalized(row.entail, row.neutral, row.contradict)
                .map_err(|e| {
                    BackendError::Config(format!(
                        "mock row ({}, {}): {e}",
                        row.premise_id, row.hypothesis_id
                    ))
                })?;
            self.insert_score(&row.premise_id, &row.hypothesis_id, score);
        }
        Ok(())
    }

    /// Loads `premise_id,hypothesis_id,entail,neutral,contradict` rows from CSV.
    pub fn load_table(&mut self, path: &Path) -> Result<(), BackendError> {
        let mut reader = csv::Reader::from_path(path)
            .map_err(|e| BackendError::Config(format!("{}: {e}", path.display())))?;
        let rows = reader
            .deserialize::<MockScoreRow>()
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| BackendError::Config(format!("{}: {e}", path.display())))?;
        self.extend_rows(rows)
    }

    pub fn table_len(&self) -> usize {
        self.table.len()
    }

    fn keyword_rule(&self, req: &PairRequest<'_>) -> EntailmentScore {
        let hit = self
            .keywords
            .get(req.hypothesis_id)
            .is_some_and(|kws| text_matches(req.premise, kws, &MatchPolicy::default()));
        let (e, n, c) = if hit { (0.8, 0.1, 0.1) } else { (0.1, 0.1, 0.8) };
        EntailmentScore::new(e, n, c).expect("constant score is valid")
    }
}

#[derive(Serialize)]
struct MockPayload<'a> {
    premise_id: &'a str,
    hypothesis_id: &'a str,
    premise: &'a str,
    hypothesis: &'a str,
}

impl Backend for MockBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn kind(&self) -> BackendKind {
        BackendKind::Mock
    }

    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn score(&self, req: &PairRequest<'_>) -> Result<EntailmentScore, BackendError> {
        req.check()?;
        if let Some(err) = self.failures.get(req.premise_id) {
            return Err(err.clone());
        }
        Ok(self
            .table
            .get(&(req.premise_id.to_string(), req.hypothesis_id.to_string()))
            .copied()
            .unwrap_or_else(|| self.keyword_rule(req)))
    }

    fn generate(&self, prompt: &str, params: &GenerationParams) -> Result<String, BackendError> {
        params.check()?;
        let hash = prompt_hash(prompt);
        let completion = self
            .completions
            .get(&hash)
            .or(self.default_completion.as_ref())
            .ok_or(BackendError::NoMockCompletion(hash))?;
        if completion.trim().is_empty() {
            return Err(BackendError::EmptyCompletion);
        }
        Ok(completion.clone())
    }

    // the table is keyed by ids, so ids are part of what the response depends on
    fn score_payload(&self, req: &PairRequest<'_>) -> String {
        serde_json::to_string(&MockPayload {
            premise_id: req.premise_id,
            hypothesis_id: req.hypothesis_id,
            premise: req.premise,
            hypothesis: req.hypothesis,
        })
        .expect("payload serializes")
    }
}
