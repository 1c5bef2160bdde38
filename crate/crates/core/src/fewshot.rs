//! Few-shot classification with a generative backend.
//!
//! A prompt is an optional task description followed by labeled examples and
//! finally the target document with an empty label slot:
//!
//! ```text
//! Classify the stance of each tweet toward Trump.
//!
//! <example text>
//! Stance: support
//!
//! <target text>
//! Stance:
//! ```
//!
//! The model's completion is parsed back into a label. Example order matters to
//! generative models (they lean toward the labels at the end of a prompt), so
//! ordering strategies keep the final run of identically labeled examples short.

use std::collections::{BTreeMap, HashMap};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backends::{prompt_hash, Backend, BackendError, BackendKind, GenerationParams};
use crate::exec::map_indexed;
use crate::types::{Dataset, Document, Label, LabelSet, Prediction};
use crate::zeroshot::{enforce_budget, BudgetExceeded, DocumentFailure, RunOptions};

pub const DEFAULT_CUE: &str = "Stance:";
pub const DEFAULT_ITEM_TEMPLATE: &str = "{text}\n{cue}";
pub const DEFAULT_MAX_TAIL_RUN: usize = 2;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledExample {
    pub text: String,
    pub label: Label,
}

impl LabeledExample {
    pub fn new(text: impl Into<String>, label: impl Into<Label>) -> Self {
        LabeledExample {
            text: text.into(),
            label: label.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "strategy", rename_all = "kebab-case")]
pub enum OrderStrategy {
    #[default]
    AsGiven,
    Shuffled {
        seed: u64,
    },
    BalancedInterleave {
        seed: u64,
    },
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FewShotError {
    #[error("no examples to order")]
    NoExamples,
    #[error("max_tail_run must be at least 1")]
    ZeroTailRun,
    #[error("all {count} examples are labeled `{label}`; cannot keep the final run at or below {max_tail_run}")]
    Unsatisfiable {
        label: String,
        count: usize,
        max_tail_run: usize,
    },
    #[error("examples end with {run} consecutive `{label}` labels (max {max_tail_run})")]
    TailRun {
        label: String,
        run: usize,
        max_tail_run: usize,
    },
    #[error("example label `{label}` is not in label set `{label_set}`")]
    UnknownLabel { label: String, label_set: String },
    #[error("item template {0}")]
    Template(String),
    #[error("oversampling factor must be at least 1")]
    ZeroFactor,
    #[error("completion does not name a label: {completion:?}")]
    Unparseable { completion: String },
    #[error("document `{document_id}`: {source}")]
    Backend {
        document_id: String,
        #[source]
        source: BackendError,
    },
    #[error(transparent)]
    Precondition(BackendError),
    #[error(transparent)]
    ErrorBudget(#[from] BudgetExceeded),
}

/// Length of the run of identical labels at the end of `labels`.
pub fn tail_run<T: PartialEq>(labels: &[T]) -> usize {
    match labels.last() {
        None => 0,
        Some(last) => labels.iter().rev().take_while(|l| *l == last).count(),
    }
}

/// Longest run of identical adjacent labels anywhere in `labels`.
pub fn max_run<T: PartialEq>(labels: &[T]) -> usize {
    let mut best = 0;
    let mut run = 0;
    for (i, l) in labels.iter().enumerate() {
        run = if i > 0 && labels[i - 1] == *l { run + 1 } else { 1 };
        best = best.max(run);
    }
    best
}

pub fn satisfies_tail<T: PartialEq>(labels: &[T], max_tail_run: usize) -> bool {
    tail_run(labels) <= max_tail_run
}

fn labels_of(examples: &[LabeledExample]) -> Vec<&Label> {
    examples.iter().map(|e| &e.label).collect()
}

fn check_satisfiable(examples: &[LabeledExample], max_tail_run: usize) -> Result<(), FewShotError> {
    if examples.is_empty() {
        return Err(FewShotError::NoExamples);
    }
    if max_tail_run == 0 {
        return Err(FewShotError::ZeroTailRun);
    }
    let first = &examples[0].label;
    if examples.len() > max_tail_run && examples.iter().all(|e| e.label == *first) {
        return Err(FewShotError::Unsatisfiable {
            label: first.to_string(),
            count: examples.len(),
            max_tail_run,
        });
    }
    Ok(())
}

/// Shortens an over-long final run by moving the last differently labeled
/// example so that `max_tail_run - 1` examples follow it.
fn repair_tail(examples: &mut Vec<LabeledExample>, max_tail_run: usize) {
    if satisfies_tail(&labels_of(examples), max_tail_run) {
        return;
    }
    let last = examples.last().expect("non-empty").label.clone();
    let pos = examples
        .iter()
        .rposition(|e| e.label != last)
        .expect("satisfiable sequences have a second label");
    let moved = examples.remove(pos);
    let at = examples.len() + 1 - max_tail_run;
    examples.insert(at, moved);
}

/// Orders examples so the final run of one label is at most `max_tail_run` long.
///
/// `AsGiven` and `Shuffled` keep their order except for the minimal move that
/// fixes an over-long final run. `BalancedInterleave` also minimizes the longest
/// run anywhere in the sequence.
pub fn order_examples(
    examples: &[LabeledExample],
    strategy: OrderStrategy,
    max_tail_run: usize,
) -> Result<Vec<LabeledExample>, FewShotError> {
    check_satisfiable(examples, max_tail_run)?;
    let mut out = examples.to_vec();
    match strategy {
        OrderStrategy::AsGiven => repair_tail(&mut out, max_tail_run),
        OrderStrategy::Shuffled { seed } => {
            out.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            repair_tail(&mut out, max_tail_run);
        }
        OrderStrategy::BalancedInterleave { seed } => {
            out = balanced_interleave(examples, max_tail_run, seed);
        }
    }
    debug_assert!(satisfies_tail(&labels_of(&out), max_tail_run));
    Ok(out)
}

struct Interleaver {
    max_tail_run: usize,
    limit: usize,
    memo: HashMap<(Vec<usize>, usize, usize), bool>,
}

impl Interleaver {
    /// Can the remaining `counts` be placed after a run of `run` copies of `last`?
    fn feasible(&mut self, counts: &mut Vec<usize>, last: usize, run: usize) -> bool {
        if counts.iter().all(|&c| c == 0) {
            return run <= self.max_tail_run;
        }
        let state = (counts.clone(), last, run);
        if let Some(&known) = self.memo.get(&state) {
            return known;
        }
        let mut ok = false;
        for l in 0..counts.len() {
            if counts[l] == 0 {
                continue;
            }
            let next_run = if l == last { run + 1 } else { 1 };
            if next_run > self.limit {
                continue;
            }
            counts[l] -= 1;
            ok = self.feasible(counts, l, next_run);
            counts[l] += 1;
            if ok {
                break;
            }
        }
        self.memo.insert(state, ok);
        ok
    }
}

fn balanced_interleave(examples: &[LabeledExample], max_tail_run: usize, seed: u64) -> Vec<LabeledExample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut distinct: Vec<&Label> = Vec::new();
    for e in examples {
        if !distinct.contains(&&e.label) {
            distinct.push(&e.label);
        }
    }
    // seeded tie-break order among labels and within each label
    distinct.shuffle(&mut rng);
    let mut pools: Vec<Vec<&LabeledExample>> = distinct
        .iter()
        .map(|l| examples.iter().filter(|e| e.label == **l).collect())
        .collect();
    for pool in &mut pools {
        pool.shuffle(&mut rng);
        pool.reverse(); // popped from the back
    }
    let mut counts: Vec<usize> = pools.iter().map(Vec::len).collect();
    let n = examples.len();
    let largest = *counts.iter().max().expect("non-empty");
    let others = n - largest;
    let lower = largest.div_ceil(others + 1);
    let none = usize::MAX;

    for limit in lower..=n {
        let mut search = Interleaver {
            max_tail_run,
            limit,
            memo: HashMap::new(),
        };
        if !search.feasible(&mut counts, none, 0) {
            continue;
        }
        let mut out = Vec::with_capacity(n);
        let (mut last, mut run) = (none, 0);
        for _ in 0..n {
            let mut order: Vec<usize> = (0..counts.len()).filter(|&l| counts[l] > 0).collect();
            // most remaining first keeps the sequence balanced
            order.sort_by_key(|&l| std::cmp::Reverse(counts[l]));
            let pick = order
                .into_iter()
                .find(|&l| {
                    let next_run = if l == last { run + 1 } else { 1 };
                    if next_run > limit {
                        return false;
                    }
                    counts[l] -= 1;
                    let ok = search.feasible(&mut counts, l, next_run);
                    counts[l] += 1;
                    ok
                })
                .expect("a feasible state has a feasible successor");
            run = if pick == last { run + 1 } else { 1 };
            last = pick;
            counts[pick] -= 1;
            out.push(pools[pick].pop().expect("count tracks pool").clone());
        }
        return out;
    }
    unreachable!("satisfiable input has a feasible ordering at limit n")
}

/// Repeats every example labeled `label` `factor` times, in place.
pub fn over_sample(
    examples: &[LabeledExample],
    label: &str,
    factor: usize,
) -> Result<Vec<LabeledExample>, FewShotError> {
    if factor == 0 {
        return Err(FewShotError::ZeroFactor);
    }
    Ok(examples
        .iter()
        .flat_map(|e| {
            let copies = if e.label == label { factor } else { 1 };
            std::iter::repeat_n(e.clone(), copies)
        })
        .collect())
}

/// Label balance and run lengths of an example sequence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptAudit {
    pub label_counts: BTreeMap<String, usize>,
    pub majority_label: Option<String>,
    pub final_label: Option<String>,
    pub tail_run: usize,
    pub max_run: usize,
}

pub fn audit(examples: &[LabeledExample]) -> PromptAudit {
    let mut label_counts = BTreeMap::new();
    for e in examples {
        *label_counts.entry(e.label.to_string()).or_insert(0) += 1;
    }
    let top = label_counts.values().copied().max().unwrap_or(0);
    let mut leaders = label_counts.iter().filter(|(_, &c)| c == top);
    let majority_label = match (leaders.next(), leaders.next()) {
        (Some((l, _)), None) => Some(l.clone()),
        _ => None,
    };
    let labels = labels_of(examples);
    PromptAudit {
        label_counts,
        majority_label,
        final_label: examples.last().map(|e| e.label.to_string()),
        tail_run: tail_run(&labels),
        max_run: max_run(&labels),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptSpec {
    pub task_description: Option<String>,
    pub examples: Vec<LabeledExample>,
    pub target: Document,
    pub label_set: LabelSet,
    /// Must contain `{text}` and end with `{cue}`.
    pub item_template: String,
    pub cue: String,
    pub ordering: OrderStrategy,
    pub max_tail_run: usize,
}

impl PromptSpec {
    pub fn new(label_set: LabelSet, target: Document) -> Self {
        PromptSpec {
            task_description: None,
            examples: Vec::new(),
            target,
            label_set,
            item_template: DEFAULT_ITEM_TEMPLATE.to_string(),
            cue: DEFAULT_CUE.to_string(),
            ordering: OrderStrategy::AsGiven,
            max_tail_run: DEFAULT_MAX_TAIL_RUN,
        }
    }

    pub fn with_description(mut self, description: impl Into<String>) -> Self {
        self.task_description = Some(description.into());
        self
    }

    pub fn with_examples(mut self, examples: Vec<LabeledExample>) -> Self {
        self.examples = examples;
        self
    }

    pub fn with_ordering(mut self, ordering: OrderStrategy) -> Self {
        self.ordering = ordering;
        self
    }

    fn check(&self) -> Result<(), FewShotError> {
        if !self.item_template.contains("{text}") {
            return Err(FewShotError::Template("has no {text} slot".into()));
        }
        if !self.item_template.ends_with("{cue}") {
            return Err(FewShotError::Template("must end with the {cue} slot".into()));
        }
        if self.cue.trim().is_empty() {
            return Err(FewShotError::Template("cue is empty".into()));
        }
        if self.max_tail_run == 0 {
            return Err(FewShotError::ZeroTailRun);
        }
        for e in &self.examples {
            if !self.label_set.contains(e.label.as_str()) {
                return Err(FewShotError::UnknownLabel {
                    label: e.label.to_string(),
                    label_set: self.label_set.name().to_string(),
                });
            }
        }
        Ok(())
    }

    /// Orders the examples once so many targets can share the result.
    pub fn prepare(&self) -> Result<PreparedPrompt<'_>, FewShotError> {
        self.check()?;
        let examples = if self.examples.is_empty() {
            Vec::new()
        } else {
            order_examples(&self.examples, self.ordering, self.max_tail_run)?
        };
        Ok(PreparedPrompt { spec: self, examples })
    }
}

/// A spec whose examples are already in final order.
#[derive(Debug, Clone)]
pub struct PreparedPrompt<'a> {
    spec: &'a PromptSpec,
    examples: Vec<LabeledExample>,
}

impl PreparedPrompt<'_> {
    pub fn examples(&self) -> &[LabeledExample] {
        &self.examples
    }

    pub fn render(&self, target: &Document) -> String {
        render_blocks(self.spec, &self.examples, &target.text)
    }
}

/// Replaces `{text}` and `{cue}` in one pass, so slot-like strings inside the
/// inserted text are left alone.
fn fill(template: &str, text: &str, cue: &str) -> String {
    let mut out = String::with_capacity(template.len() + text.len());
    let mut rest = template;
    while !rest.is_empty() {
        if let Some(tail) = rest.strip_prefix("{text}") {
            out.push_str(text);
            rest = tail;
        } else if let Some(tail) = rest.strip_prefix("{cue}") {
            out.push_str(cue);
            rest = tail;
        } else {
            let ch = rest.chars().next().expect("non-empty");
            out.push(ch);
            rest = &rest[ch.len_utf8()..];
        }
    }
    out
}

fn render_blocks(spec: &PromptSpec, examples: &[LabeledExample], target_text: &str) -> String {
    let mut blocks = Vec::with_capacity(examples.len() + 2);
    if let Some(d) = &spec.task_description {
        blocks.push(d.clone());
    }
    for e in examples {
        blocks.push(format!("{} {}", fill(&spec.item_template, &e.text, &spec.cue), e.label));
    }
    blocks.push(fill(&spec.item_template, target_text, &spec.cue));
    blocks.join("\n\n")
}

/// Renders the examples in their given order.
///
/// Fails when that order ends with a run longer than `max_tail_run`; use
/// [`build_prompt`] to apply the prompt's ordering strategy first.
pub fn render_prompt(spec: &PromptSpec) -> Result<String, FewShotError> {
    spec.check()?;
    let labels = labels_of(&spec.examples);
    let run = tail_run(&labels);
    if run > spec.max_tail_run {
        return Err(FewShotError::TailRun {
            label: labels.last().expect("run > 0").to_string(),
            run,
            max_tail_run: spec.max_tail_run,
        });
    }
    Ok(render_blocks(spec, &spec.examples, &spec.target.text))
}

/// Orders the examples with the prompt's ordering strategy, then renders.
pub fn build_prompt(spec: &PromptSpec) -> Result<String, FewShotError> {
    Ok(spec.prepare()?.render(&spec.target))
}

fn is_trim_char(c: char) -> bool {
    c.is_whitespace() || c.is_ascii_punctuation() || matches!(c, '\u{2014}' | '\u{2013}' | '\u{2018}' | '\u{2019}' | '\u{201C}' | '\u{201D}' | '\u{2026}')
}

/// Reads a label from a completion: the first whitespace-delimited token,
/// stripped of surrounding punctuation and case-folded, must equal a label.
pub fn parse_label(completion: &str, label_set: &LabelSet) -> Result<Label, FewShotError> {
    let unparseable = || FewShotError::Unparseable {
        completion: completion.to_string(),
    };
    let token = completion
        .trim_matches(is_trim_char)
        .split_whitespace()
        .next()
        .map(|t| t.trim_matches(is_trim_char))
        .filter(|t| !t.is_empty())
        .ok_or_else(unparseable)?;
    let folded = caseless::default_case_fold_str(token);
    label_set
        .labels()
        .iter()
        .find(|l| caseless::default_case_fold_str(l.as_str()) == folded)
        .cloned()
        .ok_or_else(unparseable)
}

fn check_backend(backend: &dyn Backend, params: &GenerationParams) -> Result<(), FewShotError> {
    if backend.kind() == BackendKind::Nli {
        return Err(FewShotError::Precondition(BackendError::Unsupported {
            backend: backend.id().to_string(),
            operation: "generate",
        }));
    }
    params.check_for_classification().map_err(FewShotError::Precondition)
}

fn classify_prepared(
    backend: &dyn Backend,
    prepared: &PreparedPrompt<'_>,
    target: &Document,
    params: &GenerationParams,
) -> Result<Prediction, FewShotError> {
    let prompt = prepared.render(target);
    let completion = backend
        .generate(&prompt, params)
        .map_err(|source| FewShotError::Backend {
            document_id: target.id.clone(),
            source,
        })?;
    let label = parse_label(&completion, &prepared.spec.label_set)?;
    Ok(Prediction {
        document_id: target.id.clone(),
        label,
        per_hypothesis: Vec::new(),
        hypothesis_set_id: prepared.spec.label_set.name().to_string(),
        backend_id: backend.id().to_string(),
        model_id: backend.model_id().to_string(),
        prompt_hash: Some(prompt_hash(&prompt)),
    })
}

/// Classifies `spec.target`; the temperature must be zero.
pub fn classify_generative(
    backend: &dyn Backend,
    spec: &PromptSpec,
    params: &GenerationParams,
) -> Result<Prediction, FewShotError> {
    check_backend(backend, params)?;
    classify_prepared(backend, &spec.prepare()?, &spec.target, params)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FewShotRun {
    pub predictions: Vec<Prediction>,
    pub failures: Vec<DocumentFailure>,
}

/// Classifies every document in `dataset` with the examples of `spec`; the
/// spec's own target is ignored. Unparseable completions count as failures.
pub fn classify_generative_dataset(
    backend: &dyn Backend,
    dataset: &Dataset,
    spec: &PromptSpec,
    params: &GenerationParams,
    options: &RunOptions,
) -> Result<FewShotRun, FewShotError> {
    check_backend(backend, params)?;
    let prepared = spec.prepare()?;
    let docs = dataset.documents();
    let outcomes = map_indexed(docs.len(), options.parallelism, |i| {
        classify_prepared(backend, &prepared, &docs[i], params)
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
    Ok(FewShotRun {
        predictions,
        failures,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::MockBackend;
    use proptest::prelude::*;

    fn stance() -> LabelSet {
        LabelSet::new("stance", ["support", "oppose", "neutral"]).unwrap()
    }

    fn ex(label: &str, i: usize) -> LabeledExample {
        LabeledExample::new(format!("{label} tweet {i}"), label)
    }

    fn seq(labels: &[&str]) -> Vec<LabeledExample> {
        labels.iter().enumerate().map(|(i, l)| ex(l, i)).collect()
    }

    fn label_strs(examples: &[LabeledExample]) -> Vec<String> {
        examples.iter().map(|e| e.label.to_string()).collect()
    }

    #[test]
    fn tail_and_max_run() {
        assert_eq!(tail_run(&["s", "s", "o", "o", "o"]), 3);
        assert_eq!(tail_run::<&str>(&[]), 0);
        assert_eq!(max_run(&["s", "s", "s", "o", "s"]), 3);
    }

    #[test]
    fn as_given_repair_on_sss_o() {
        let input = seq(&["o", "s", "s", "s"]);
        let out = order_examples(&input, OrderStrategy::AsGiven, 2).unwrap();
        assert_eq!(label_strs(&out), ["s", "s", "o", "s"]);
        let fine = seq(&["s", "s", "o", "s"]);
        assert_eq!(order_examples(&fine, OrderStrategy::AsGiven, 2).unwrap(), fine);
    }

    #[test]
    fn single_example_and_unsatisfiable() {
        let one = seq(&["s"]);
        assert_eq!(order_examples(&one, OrderStrategy::AsGiven, 1).unwrap(), one);
        let err = order_examples(&seq(&["s"; 5]), OrderStrategy::BalancedInterleave { seed: 1 }, 2).unwrap_err();
        assert!(err.to_string().contains("`s`"), "{err}");
        assert_eq!(order_examples(&[], OrderStrategy::AsGiven, 2), Err(FewShotError::NoExamples));
    }

    #[test]
    fn balanced_interleave_spreads_labels() {
        let input = seq(&["s", "s", "s", "s", "o", "o", "n", "n"]);
        let out = order_examples(&input, OrderStrategy::BalancedInterleave { seed: 3 }, 2).unwrap();
        assert_eq!(max_run(&label_strs(&out)), 1);
        let again = order_examples(&input, OrderStrategy::BalancedInterleave { seed: 3 }, 2).unwrap();
        assert_eq!(out, again);
    }

    #[test]
    fn balanced_interleave_honors_tail_over_run() {
        // s s s o s s would have max run 3 but ends in two s
        let input = seq(&["s", "s", "s", "s", "s", "o"]);
        let out = order_examples(&input, OrderStrategy::BalancedInterleave { seed: 0 }, 1).unwrap();
        assert_eq!(label_strs(&out), ["s", "s", "s", "s", "o", "s"]);
    }

    #[test]
    fn oversampling_and_audit() {
        let input = seq(&["s", "o", "n"]);
        let out = over_sample(&input, "o", 3).unwrap();
        assert_eq!(label_strs(&out), ["s", "o", "o", "o", "n"]);
        let a = audit(&out);
        assert_eq!(a.label_counts["o"], 3);
        assert_eq!(a.majority_label.as_deref(), Some("o"));
        assert_eq!((a.tail_run, a.max_run), (1, 3));
        assert_eq!(over_sample(&input, "o", 0), Err(FewShotError::ZeroFactor));
    }

    fn three_shot() -> PromptSpec {
        PromptSpec::new(stance(), Document::new("t", "Can't wait to vote him out"))
            .with_description("Classify the stance toward Trump.")
            .with_examples(seq(&["support", "oppose", "neutral"]))
    }

    #[test]
    fn render_three_shot_layout() {
        let text = render_prompt(&three_shot()).unwrap();
        assert_eq!(text.split("\n\n").count(), 5);
        assert!(text.ends_with("Can't wait to vote him out\nStance:"));
        assert!(text.contains("support tweet 0\nStance: support"));
        assert_eq!(text, render_prompt(&three_shot()).unwrap());
    }

    #[test]
    fn zero_shot_prompt() {
        let spec = PromptSpec::new(stance(), Document::new("t", "hello")).with_description("Describe.");
        assert_eq!(build_prompt(&spec).unwrap(), "Describe.\n\nhello\nStance:");
    }

    #[test]
    fn template_errors() {
        let mut spec = three_shot();
        spec.item_template = "{cue} {text}".into();
        assert!(matches!(render_prompt(&spec), Err(FewShotError::Template(_))));
        spec.item_template = "Tweet\n{cue}".into();
        assert!(matches!(render_prompt(&spec), Err(FewShotError::Template(_))));
    }

    #[test]
    fn slot_text_inside_documents_is_not_expanded() {
        let spec = PromptSpec::new(stance(), Document::new("t", "literal {cue} and {text}"));
        assert_eq!(build_prompt(&spec).unwrap(), "literal {cue} and {text}\nStance:");
    }

    #[test]
    fn parse_label_examples() {
        let set = stance();
        assert_eq!(parse_label(" Oppose.", &set).unwrap(), "oppose");
        assert_eq!(parse_label("oppose \u{2014} the author criticizes", &set).unwrap(), "oppose");
        assert!(matches!(parse_label("maybe", &set), Err(FewShotError::Unparseable { .. })));
        assert!(parse_label("", &set).is_err());
        assert!(parse_label("opposed", &set).is_err());
    }

    #[test]
    fn classify_with_mock() {
        let spec = three_shot();
        let prompt = build_prompt(&spec).unwrap();
        let mock = MockBackend::new("mock", "gpt").with_completion(&prompt, " oppose");
        let params = GenerationParams::deterministic(5);
        let p = classify_generative(&mock, &spec, &params).unwrap();
        assert_eq!(p.label, "oppose");
        assert_eq!(p.prompt_hash.as_deref(), Some(prompt_hash(&prompt).as_str()));
        assert_eq!(p, classify_generative(&mock, &spec, &params).unwrap());

        let warm = GenerationParams {
            temperature: 0.7,
            ..params
        };
        assert!(matches!(
            classify_generative(&mock, &spec, &warm),
            Err(FewShotError::Precondition(_))
        ));
    }

    #[test]
    fn unparseable_completions_fail_documents() {
        let spec = three_shot();
        let ds = Dataset::new(vec![Document::new("a", "x"), Document::new("b", "y")]).unwrap();
        let b_prompt = spec.prepare().unwrap().render(&ds.documents()[1]);
        let mock = MockBackend::new("mock", "gpt")
            .with_default_completion("support")
            .with_completion(&b_prompt, "no idea");
        let params = GenerationParams::deterministic(5);
        let err = classify_generative_dataset(&mock, &ds, &spec, &params, &RunOptions::default()).unwrap_err();
        assert!(matches!(err, FewShotError::ErrorBudget(_)));
        let lenient = RunOptions {
            error_budget: 0.5,
            ..Default::default()
        };
        let run = classify_generative_dataset(&mock, &ds, &spec, &params, &lenient).unwrap();
        assert_eq!(run.predictions.len(), 1);
        assert_eq!(run.failures[0].document_id, "b");
    }

    fn arb_labels() -> impl Strategy<Value = Vec<usize>> {
        proptest::collection::vec(0usize..3, 1..9)
    }

    proptest! {
        #[test]
        fn ordering_is_a_permutation(labels in arb_labels(), seed in any::<u64>(), m in 1usize..4, which in 0u8..3) {
            let names = ["support", "oppose", "neutral"];
            let input: Vec<LabeledExample> = labels.iter().enumerate().map(|(i, &l)| ex(names[l], i)).collect();
            let strategy = match which {
                0 => OrderStrategy::AsGiven,
                1 => OrderStrategy::Shuffled { seed },
                _ => OrderStrategy::BalancedInterleave { seed },
            };
            match order_examples(&input, strategy, m) {
                Ok(out) => {
                    prop_assert!(satisfies_tail(&label_strs(&out), m));
                    prop_assert_eq!(audit(&out).label_counts, audit(&input).label_counts);
                    let mut a: Vec<String> = out.iter().map(|e| e.text.clone()).collect();
                    let mut b: Vec<String> = input.iter().map(|e| e.text.clone()).collect();
                    a.sort();
                    b.sort();
                    prop_assert_eq!(a, b);
                }
                Err(FewShotError::Unsatisfiable { .. }) => {
                    prop_assert!(labels.iter().all(|&l| l == labels[0]) && labels.len() > m);
                }
                Err(e) => prop_assert!(false, "unexpected error {}", e),
            }
        }

        #[test]
        fn parse_label_is_idempotent(i in 0usize..3) {
            let set = stance();
            let label = parse_label(set.labels()[i].as_str(), &set).unwrap();
            prop_assert_eq!(parse_label(label.as_str(), &set).unwrap(), label);
        }
    }
}
