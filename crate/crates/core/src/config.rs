//! TOML run configuration.
//!
//! ```toml
//! [[label_sets]]
//! name = "stance"
//! labels = ["support", "oppose", "neutral"]
//!
//! [[hypothesis_sets]]
//! id = "trump"
//! label_set = "stance"
//! hypotheses = [
//!   { id = "s", label = "support", text = "The author of this tweet supports Trump." },
//!   { id = "o", label = "oppose", text = "The author of this tweet opposes Trump." },
//!   { id = "n", label = "neutral", text = "The author of this tweet is neutral about Trump." },
//! ]
//!
//! [backend]
//! backend_id = "offline"
//! kind = "mock"
//! model_id = "fixture"
//! ```
//!
//! Relative paths inside the file are resolved against the file's directory.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::backends::{
    connect, Backend, BackendDescriptor, BackendError, BackendKind, CachedBackend, GenerationParams,
    MockBackend, ResponseCache,
};
use crate::fewshot::{
    over_sample, LabeledExample, OrderStrategy, PromptSpec, DEFAULT_CUE, DEFAULT_ITEM_TEMPLATE,
    DEFAULT_MAX_TAIL_RUN,
};
use crate::io::read_jsonl;
use crate::manifest::content_digest;
use crate::matching::{check_distinct_names, Dimension, MatchPolicy};
use crate::types::{Document, Hypothesis, HypothesisSet, Label, LabelSet};
use crate::zeroshot::{RunOptions, ScoringMode, DEFAULT_THRESHOLD};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Backend(#[from] BackendError),
}

fn invalid(message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid(message.into())
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    #[serde(default)]
    label_sets: Vec<LabelSet>,
    #[serde(default)]
    hypothesis_sets: Vec<RawHypothesisSet>,
    #[serde(default)]
    dimensions: Vec<RawDimension>,
    #[serde(default)]
    matching: MatchPolicy,
    backend: BackendSection,
    #[serde(default)]
    cache: Option<CacheSection>,
    #[serde(default)]
    run: RunSection,
    #[serde(default)]
    fewshot: Option<FewShotSection>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawHypothesisSet {
    id: String,
    label_set: String,
    hypotheses: Vec<Hypothesis>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDimension {
    name: String,
    keywords: Vec<String>,
    hypothesis_set: String,
    #[serde(default)]
    flagged_labels: Vec<Label>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendSection {
    #[serde(flatten)]
    pub descriptor: BackendDescriptor,
    #[serde(default)]
    pub mock: Option<MockSection>,
}

/// Offline backend fixtures.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MockSection {
    /// CSV with `premise_id,hypothesis_id,entail,neutral,contradict` rows.
    #[serde(default)]
    pub scores: Option<PathBuf>,
    /// Hypothesis id to keywords for the fallback rule.
    #[serde(default)]
    pub keywords: BTreeMap<String, Vec<String>>,
    /// Prompt sha256 (hex) to completion.
    #[serde(default)]
    pub completions: BTreeMap<String, String>,
    #[serde(default)]
    pub default_completion: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CacheSection {
    pub dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub parallelism: usize,
    pub error_budget: f64,
    pub scoring: ScoringMode,
    pub seed: u64,
    pub threshold: f64,
    pub notes: Option<String>,
    pub codebook: Option<String>,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            parallelism: 1,
            error_budget: 0.0,
            scoring: ScoringMode::Entail,
            seed: 0,
            threshold: DEFAULT_THRESHOLD,
            notes: None,
            codebook: None,
        }
    }
}

impl RunSection {
    pub fn options(&self) -> RunOptions {
        RunOptions {
            parallelism: self.parallelism,
            error_budget: self.error_budget,
            scoring: self.scoring,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OrderingName {
    #[default]
    AsGiven,
    Shuffled,
    BalancedInterleave,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OverSample {
    pub label: Label,
    pub factor: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FewShotSection {
    pub label_set: String,
    pub task_description: Option<String>,
    /// JSONL file of `{"text": .., "label": ..}` objects.
    pub examples_file: Option<PathBuf>,
    #[serde(rename = "example")]
    pub examples: Vec<LabeledExample>,
    pub item_template: String,
    pub cue: String,
    pub ordering: OrderingName,
    pub max_tail_run: usize,
    /// Keep at most this many examples (after oversampling, before ordering).
    pub max_examples: Option<usize>,
    pub over_sample: Option<OverSample>,
    pub max_tokens: u32,
    pub temperature: f64,
    /// Rendered prompts are written here, one file per document.
    pub audit_dir: Option<PathBuf>,
}

impl Default for FewShotSection {
    fn default() -> Self {
        FewShotSection {
            label_set: String::new(),
            task_description: None,
            examples_file: None,
            examples: Vec::new(),
            item_template: DEFAULT_ITEM_TEMPLATE.to_string(),
            cue: DEFAULT_CUE.to_string(),
            ordering: OrderingName::AsGiven,
            max_tail_run: DEFAULT_MAX_TAIL_RUN,
            max_examples: None,
            over_sample: None,
            max_tokens: 5,
            temperature: 0.0,
            audit_dir: None,
        }
    }
}

/// A validated configuration with every cross-reference resolved.
#[derive(Debug, Clone)]
pub struct Config {
    pub base_dir: PathBuf,
    pub label_sets: Vec<LabelSet>,
    pub hypothesis_sets: Vec<HypothesisSet>,
    pub dimensions: Vec<Dimension>,
    pub matching: MatchPolicy,
    pub backend: BackendSection,
    pub cache_dir: Option<PathBuf>,
    pub run: RunSection,
    pub fewshot: Option<FewShotSection>,
}

impl Config {
    pub fn load(path: &Path) -> Result<Config, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Config::parse(&text, &base).map_err(|e| match e {
            ConfigError::Parse { message, .. } => ConfigError::Parse {
                path: path.to_path_buf(),
                message,
            },
            other => other,
        })
    }

    pub fn parse(text: &str, base_dir: &Path) -> Result<Config, ConfigError> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: PathBuf::from("<config>"),
            message: e.to_string(),
        })?;
        Config::resolve(raw, base_dir)
    }

    fn resolve(raw: RawConfig, base_dir: &Path) -> Result<Config, ConfigError> {
        let mut label_sets: HashMap<&str, &LabelSet> = HashMap::new();
        for ls in &raw.label_sets {
            if label_sets.insert(ls.name(), ls).is_some() {
                return Err(invalid(format!("label set `{}` declared twice", ls.name())));
            }
        }
        let find_label_set = |name: &str| {
            label_sets
                .get(name)
                .map(|ls| (*ls).clone())
                .ok_or_else(|| invalid(format!("unknown label set `{name}`")))
        };

        let mut hypothesis_sets = Vec::with_capacity(raw.hypothesis_sets.len());
        for h in raw.hypothesis_sets {
            if hypothesis_sets.iter().any(|s: &HypothesisSet| s.id == h.id) {
                return Err(invalid(format!("hypothesis set `{}` declared twice", h.id)));
            }
            let set = HypothesisSet::new(h.id, find_label_set(&h.label_set)?, h.hypotheses)
                .map_err(|e| invalid(e.to_string()))?;
            hypothesis_sets.push(set);
        }

        let mut dimensions = Vec::with_capacity(raw.dimensions.len());
        for d in raw.dimensions {
            let set = hypothesis_sets
                .iter()
                .find(|s| s.id == d.hypothesis_set)
                .cloned()
                .ok_or_else(|| {
                    invalid(format!(
                        "dimension `{}` refers to unknown hypothesis set `{}`",
                        d.name, d.hypothesis_set
                    ))
                })?;
            dimensions.push(
                Dimension::new(d.name, d.keywords, set, d.flagged_labels)
                    .map_err(|e| invalid(e.to_string()))?,
            );
        }
        check_distinct_names(&dimensions).map_err(|e| invalid(e.to_string()))?;

        raw.backend.descriptor.check()?;
        if raw.backend.mock.is_some() && raw.backend.descriptor.kind != BackendKind::Mock {
            return Err(invalid("[backend.mock] is only valid with kind = \"mock\""));
        }
        if raw.run.parallelism == 0 {
            return Err(invalid("run.parallelism must be at least 1"));
        }
        if !(0.0..=1.0).contains(&raw.run.error_budget) {
            return Err(invalid("run.error_budget must lie in [0, 1]"));
        }
        if !(raw.run.threshold > 0.0 && raw.run.threshold < 1.0) {
            return Err(invalid("run.threshold must lie strictly between 0 and 1"));
        }
        if let Some(f) = &raw.fewshot {
            find_label_set(&f.label_set)?;
            if f.max_tail_run == 0 {
                return Err(invalid("fewshot.max_tail_run must be at least 1"));
            }
        }

        let resolve = |p: PathBuf| if p.is_absolute() { p } else { base_dir.join(p) };
        let mut backend = raw.backend;
        if let Some(mock) = &mut backend.mock {
            mock.scores = mock.scores.take().map(resolve);
        }
        let mut fewshot = raw.fewshot;
        if let Some(f) = &mut fewshot {
            f.examples_file = f.examples_file.take().map(resolve);
            f.audit_dir = f.audit_dir.take().map(resolve);
        }

        Ok(Config {
            base_dir: base_dir.to_path_buf(),
            label_sets: raw.label_sets,
            hypothesis_sets,
            dimensions,
            matching: raw.matching,
            backend,
            cache_dir: raw.cache.map(|c| resolve(c.dir)),
            run: raw.run,
            fewshot,
        })
    }

    pub fn label_set(&self, name: &str) -> Result<&LabelSet, ConfigError> {
        self.label_sets
            .iter()
            .find(|l| l.name() == name)
            .ok_or_else(|| invalid(format!("unknown label set `{name}`")))
    }

    pub fn hypothesis_set(&self, id: &str) -> Result<&HypothesisSet, ConfigError> {
        self.hypothesis_sets
            .iter()
            .find(|s| s.id == id)
            .ok_or_else(|| invalid(format!("unknown hypothesis set `{id}`")))
    }

    /// Builds the configured backend, behind the response cache when one is set.
    pub fn build_backend(&self) -> Result<Arc<dyn Backend>, ConfigError> {
        let desc = &self.backend.descriptor;
        let inner: Arc<dyn Backend> = match desc.kind {
            BackendKind::Mock => Arc::new(self.build_mock()?),
            _ => connect(desc)?,
        };
        match &self.cache_dir {
            None => Ok(inner),
            Some(dir) => {
                let cache = ResponseCache::open(dir).map_err(|source| ConfigError::Io {
                    path: dir.clone(),
                    source,
                })?;
                Ok(Arc::new(CachedBackend::new(inner, Arc::new(cache))))
            }
        }
    }

    pub fn build_mock(&self) -> Result<MockBackend, ConfigError> {
        let desc = &self.backend.descriptor;
        let mut mock = MockBackend::new(&desc.backend_id, &desc.model_id);
        let Some(section) = &self.backend.mock else {
            return Ok(mock);
        };
        if let Some(path) = &section.scores {
            mock.load_table(path)?;
        }
        for (hypothesis, keywords) in &section.keywords {
            mock = mock.with_keywords(hypothesis, keywords.iter().cloned());
        }
        for (hash, completion) in &section.completions {
            mock = mock.with_completion_for_hash(hash, completion.clone());
        }
        if let Some(c) = &section.default_completion {
            mock = mock.with_default_completion(c.clone());
        }
        Ok(mock)
    }

    pub fn fewshot_section(&self) -> Result<&FewShotSection, ConfigError> {
        self.fewshot
            .as_ref()
            .ok_or_else(|| invalid("no [fewshot] section in the configuration"))
    }

    /// Prompt spec for `target` built from the `[fewshot]` section.
    pub fn fewshot_spec(&self, target: Document) -> Result<PromptSpec, ConfigError> {
        let f = self.fewshot_section()?;
        let mut examples = f.examples.clone();
        if let Some(path) = &f.examples_file {
            let loaded: Vec<LabeledExample> =
                read_jsonl(path).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
            examples.extend(loaded);
        }
        if let Some(o) = &f.over_sample {
            examples = over_sample(&examples, o.label.as_str(), o.factor).map_err(|e| invalid(e.to_string()))?;
        }
        if let Some(max) = f.max_examples {
            examples.truncate(max);
        }
        let seed = self.run.seed;
        let ordering = match f.ordering {
            OrderingName::AsGiven => OrderStrategy::AsGiven,
            OrderingName::Shuffled => OrderStrategy::Shuffled { seed },
            OrderingName::BalancedInterleave => OrderStrategy::BalancedInterleave { seed },
        };
        Ok(PromptSpec {
            task_description: f.task_description.clone(),
            examples,
            target,
            label_set: self.label_set(&f.label_set)?.clone(),
            item_template: f.item_template.clone(),
            cue: f.cue.clone(),
            ordering,
            max_tail_run: f.max_tail_run,
        })
    }

    pub fn generation_params(&self) -> Result<GenerationParams, ConfigError> {
        let f = self.fewshot_section()?;
        Ok(GenerationParams {
            temperature: f.temperature,
            max_tokens: f.max_tokens,
        })
    }

    /// Digest of everything that determines classification output.
    pub fn content_hash(&self) -> String {
        #[derive(Serialize)]
        struct Content<'a> {
            hypothesis_sets: &'a [HypothesisSet],
            dimensions: &'a [Dimension],
            matching: &'a MatchPolicy,
            fewshot: &'a Option<FewShotSection>,
        }
        content_digest(&Content {
            hypothesis_sets: &self.hypothesis_sets,
            dimensions: &self.dimensions,
            matching: &self.matching,
            fewshot: &self.fewshot,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"
[[label_sets]]
name = "stance"
labels = ["support", "oppose", "neutral"]

[[label_sets]]
name = "compliance"
labels = ["compliant", "noncompliant", "neutral"]

[[hypothesis_sets]]
id = "trump"
label_set = "stance"
hypotheses = [
  { id = "s", label = "support", text = "The author of this tweet supports Trump." },
  { id = "o", label = "oppose", text = "The author of this tweet opposes Trump." },
  { id = "n", label = "neutral", text = "The author of this tweet is neutral about Trump." },
]

[[hypothesis_sets]]
id = "masks"
label_set = "compliance"
hypotheses = [
  { id = "m_good", label = "compliant", text = "The author of this tweet believes masks are good." },
  { id = "m_bad", label = "noncompliant", text = "The author of this tweet believes masks are bad." },
  { id = "m_neutral", label = "neutral", text = "The author of this tweet is neutral about masks." },
]

[[dimensions]]
name = "masks"
keywords = ["mask*"]
hypothesis_set = "masks"
flagged_labels = ["noncompliant"]

[backend]
backend_id = "offline"
kind = "mock"
model_id = "fixture"

[backend.mock]
keywords = { s = ["great"] }
default_completion = "neutral"

[cache]
dir = "cache"

[run]
parallelism = 4
seed = 9

[fewshot]
label_set = "stance"
task_description = "Classify the stance toward Trump."
ordering = "balanced-interleave"

[[fewshot.example]]
text = "He is great"
label = "support"

[[fewshot.example]]
text = "He is awful"
label = "oppose"
"#;

    #[test]
    fn full_config_resolves() {
        let c = Config::parse(BASE, Path::new("/work")).unwrap();
        assert_eq!(c.hypothesis_sets.len(), 2);
        assert_eq!(c.dimensions[0].hypothesis_set.id, "masks");
        assert_eq!(c.cache_dir.as_deref(), Some(Path::new("/work/cache")));
        assert_eq!(c.run.options().parallelism, 4);
        assert_eq!(c.run.threshold, 0.5);
        let spec = c.fewshot_spec(Document::new("t", "text")).unwrap();
        assert_eq!(spec.ordering, OrderStrategy::BalancedInterleave { seed: 9 });
        assert_eq!(spec.examples.len(), 2);
        assert_eq!(c.generation_params().unwrap().temperature, 0.0);
    }

    #[test]
    fn mock_backend_from_config() {
        let mut c = Config::parse(BASE, Path::new("/work")).unwrap();
        c.cache_dir = None;
        let backend = c.build_backend().unwrap();
        let score = backend
            .score(&crate::backends::PairRequest {
                premise_id: "d",
                premise: "what a great day",
                hypothesis_id: "s",
                hypothesis: "x",
            })
            .unwrap();
        assert_eq!(score.entail(), 0.8);
        assert_eq!(backend.generate("anything", &GenerationParams::default()).unwrap(), "neutral");
    }

    #[test]
    fn broken_references_are_reported() {
        let bad = BASE.replace("hypothesis_set = \"masks\"", "hypothesis_set = \"nope\"");
        let err = Config::parse(&bad, Path::new(".")).unwrap_err();
        assert!(err.to_string().contains("unknown hypothesis set `nope`"), "{err}");

        let bad = BASE.replace("label = \"oppose\", text", "label = \"against\", text");
        assert!(Config::parse(&bad, Path::new(".")).is_err());

        let bad = BASE.replace("parallelism = 4", "parallelism = 0");
        assert!(Config::parse(&bad, Path::new(".")).is_err());

        let bad = BASE.replace("[run]", "[run]\nbogus = 1");
        assert!(matches!(Config::parse(&bad, Path::new(".")), Err(ConfigError::Parse { .. })));
    }

    #[test]
    fn content_hash_tracks_hypothesis_text() {
        let a = Config::parse(BASE, Path::new(".")).unwrap();
        let b = Config::parse(&BASE.replace("supports Trump.", "supports Trump!"), Path::new(".")).unwrap();
        assert_ne!(a.content_hash(), b.content_hash());
        let c = Config::parse(&BASE.replace("seed = 9", "seed = 10"), Path::new(".")).unwrap();
        assert_eq!(a.content_hash(), c.content_hash());
    }

    #[test]
    fn live_backend_needs_endpoint() {
        let bad = BASE
            .replace("kind = \"mock\"", "kind = \"nli\"")
            .replace("[backend.mock]\nkeywords = { s = [\"great\"] }\ndefault_completion = \"neutral\"\n", "");
        assert!(matches!(Config::parse(&bad, Path::new(".")), Err(ConfigError::Backend(_))));
    }
}
