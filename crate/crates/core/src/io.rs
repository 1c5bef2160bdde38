//! Reading and writing documents, gold labels and predictions.
//!
//! Documents come as JSONL (one object per line with `id`, `text` and optional
//! extra fields) or CSV with a header row. `id` and `text` are reserved; every
//! other field lands in [`Document::metadata`] as a string.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Serialize;
use serde_json::Value;

use crate::types::{Dataset, DatasetError, Document, Label, LabelSet, Prediction};

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Record {
        path: PathBuf,
        line: u64,
        message: String,
    },
    #[error("{path}: missing required column `{column}`")]
    MissingColumn { path: PathBuf, column: String },
    #[error("{path}: duplicate id `{id}` (line {line})")]
    DuplicateId { path: PathBuf, id: String, line: u64 },
    #[error("{path}:{line}: document `{id}` has empty text")]
    EmptyText { path: PathBuf, id: String, line: u64 },
    #[error("{path}:{line}: unknown label `{label}` for `{id}` (label set `{label_set}`)")]
    UnknownLabel {
        path: PathBuf,
        line: u64,
        id: String,
        label: String,
        label_set: String,
    },
    #[error("cannot infer document format from {0}; use .jsonl or .csv")]
    UnknownFormat(PathBuf),
}

impl IngestError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        IngestError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    fn record(path: &Path, line: u64, message: impl Into<String>) -> Self {
        IngestError::Record {
            path: path.to_path_buf(),
            line,
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DocFormat {
    Jsonl,
    Csv,
}

impl DocFormat {
    pub fn from_path(path: &Path) -> Result<Self, IngestError> {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("jsonl") || e.eq_ignore_ascii_case("ndjson") => {
                Ok(DocFormat::Jsonl)
            }
            Some(e) if e.eq_ignore_ascii_case("csv") => Ok(DocFormat::Csv),
            _ => Err(IngestError::UnknownFormat(path.to_path_buf())),
        }
    }
}

impl FromStr for DocFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "jsonl" => Ok(DocFormat::Jsonl),
            "csv" => Ok(DocFormat::Csv),
            other => Err(format!("unknown document format `{other}`")),
        }
    }
}

fn open(path: &Path) -> Result<File, IngestError> {
    File::open(path).map_err(|e| IngestError::io(path, e))
}

/// Loads a dataset, checking id uniqueness and non-empty text per record.
pub fn load_documents(path: &Path, format: DocFormat) -> Result<Dataset, IngestError> {
    let records = match format {
        DocFormat::Jsonl => read_jsonl_documents(path)?,
        DocFormat::Csv => read_csv_documents(path)?,
    };
    let mut seen = BTreeMap::new();
    for (line, doc) in &records {
        if doc.text.trim().is_empty() {
            return Err(IngestError::EmptyText {
                path: path.to_path_buf(),
                id: doc.id.clone(),
                line: *line,
            });
        }
        if seen.insert(doc.id.as_str(), *line).is_some() {
            return Err(IngestError::DuplicateId {
                path: path.to_path_buf(),
                id: doc.id.clone(),
                line: *line,
            });
        }
    }
    let docs = records.into_iter().map(|(_, d)| d).collect();
    Dataset::new(docs).map_err(|e| match e {
        DatasetError::DuplicateId(id) | DatasetError::EmptyText(id) => {
            IngestError::record(path, 0, format!("invalid document `{id}`"))
        }
    })
}

fn scalar_to_string(value: &Value) -> String {
    match value {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

fn read_jsonl_documents(path: &Path) -> Result<Vec<(u64, Document)>, IngestError> {
    let reader = BufReader::new(open(path)?);
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx as u64 + 1;
        let line = line.map_err(|e| IngestError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let value: Value = serde_json::from_str(&line)
            .map_err(|e| IngestError::record(path, line_no, e.to_string()))?;
        let Value::Object(map) = value else {
            return Err(IngestError::record(path, line_no, "expected a JSON object"));
        };
        let mut id = None;
        let mut text = None;
        let mut metadata = BTreeMap::new();
        for (key, value) in map {
            match key.as_str() {
                "id" => match value {
                    Value::String(s) => id = Some(s),
                    Value::Number(n) => id = Some(n.to_string()),
                    _ => return Err(IngestError::record(path, line_no, "`id` must be a string")),
                },
                "text" => match value {
                    Value::String(s) => text = Some(s),
                    _ => {
                        return Err(IngestError::record(path, line_no, "`text` must be a string"))
                    }
                },
                _ => {
                    metadata.insert(key, scalar_to_string(&value));
                }
            }
        }
        let id = id.ok_or_else(|| IngestError::record(path, line_no, "missing `id`"))?;
        let text = text.ok_or_else(|| IngestError::record(path, line_no, "missing `text`"))?;
        out.push((line_no, Document { id, text, metadata }));
    }
    Ok(out)
}

fn read_csv_documents(path: &Path) -> Result<Vec<(u64, Document)>, IngestError> {
    let mut reader = csv::Reader::from_reader(open(path)?);
    let headers = reader
        .headers()
        .map_err(|e| IngestError::record(path, 1, e.to_string()))?
        .clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| IngestError::MissingColumn {
                path: path.to_path_buf(),
                column: name.to_string(),
            })
    };
    let id_col = find("id")?;
    let text_col = find("text")?;
    let mut out = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            IngestError::record(path, line, e.to_string())
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let mut metadata = BTreeMap::new();
        for (i, (name, value)) in headers.iter().zip(record.iter()).enumerate() {
            if i != id_col && i != text_col {
                metadata.insert(name.to_string(), value.to_string());
            }
        }
        out.push((
            line,
            Document {
                id: record[id_col].to_string(),
                text: record[text_col].to_string(),
                metadata,
            },
        ));
    }
    Ok(out)
}

fn create(path: &Path) -> Result<BufWriter<File>, IngestError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| IngestError::io(parent, e))?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| IngestError::io(path, e))
}

/// Writes a dataset as JSONL; metadata is flattened next to `id` and `text`.
pub fn save_documents(path: &Path, dataset: &Dataset) -> Result<(), IngestError> {
    let mut w = create(path)?;
    for doc in dataset {
        let mut map = serde_json::Map::new();
        map.insert("id".into(), Value::String(doc.id.clone()));
        map.insert("text".into(), Value::String(doc.text.clone()));
        for (k, v) in &doc.metadata {
            map.insert(k.clone(), Value::String(v.clone()));
        }
        writeln!(w, "{}", Value::Object(map)).map_err(|e| IngestError::io(path, e))?;
    }
    w.flush().map_err(|e| IngestError::io(path, e))
}

/// Gold-standard labels keyed by document id.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct GoldLabels {
    labels: BTreeMap<String, Label>,
}

impl GoldLabels {
    pub fn new(labels: BTreeMap<String, Label>) -> Self {
        GoldLabels { labels }
    }

    pub fn get(&self, id: &str) -> Option<&Label> {
        self.labels.get(id)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Label)> {
        self.labels.iter()
    }

    pub fn as_map(&self) -> &BTreeMap<String, Label> {
        &self.labels
    }
}

/// Loads a two-column `id,label` file. A leading `id,label` header row is optional.
pub fn load_gold(path: &Path, label_set: &LabelSet) -> Result<GoldLabels, IngestError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(open(path)?);
    let mut labels = BTreeMap::new();
    for (idx, record) in reader.records().enumerate() {
        let record = record.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            IngestError::record(path, line, e.to_string())
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(idx as u64 + 1);
        if record.len() != 2 {
            return Err(IngestError::record(
                path,
                line,
                format!("expected 2 columns (id,label), found {}", record.len()),
            ));
        }
        let (id, label) = (&record[0], &record[1]);
        if idx == 0 && id == "id" && label == "label" {
            continue;
        }
        let Some(known) = label_set.get(label) else {
            return Err(IngestError::UnknownLabel {
                path: path.to_path_buf(),
                line,
                id: id.to_string(),
                label: label.to_string(),
                label_set: label_set.name().to_string(),
            });
        };
        if labels.insert(id.to_string(), known.clone()).is_some() {
            return Err(IngestError::DuplicateId {
                path: path.to_path_buf(),
                id: id.to_string(),
                line,
            });
        }
    }
    Ok(GoldLabels { labels })
}

pub fn save_gold<'a>(
    path: &Path,
    labels: impl IntoIterator<Item = (&'a str, &'a Label)>,
) -> Result<(), IngestError> {
    let w = create(path)?;
    let mut writer = csv::Writer::from_writer(w);
    let wrap = |e: csv::Error| IngestError::record(path, 0, e.to_string());
    writer.write_record(["id", "label"]).map_err(wrap)?;
    for (id, label) in labels {
        writer.write_record([id, label.as_str()]).map_err(wrap)?;
    }
    writer.flush().map_err(|e| IngestError::io(path, e))
}

/// Writes any serializable rows as JSONL.
pub fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), IngestError> {
    let mut w = create(path)?;
    for row in rows {
        let line = serde_json::to_string(row)
            .map_err(|e| IngestError::record(path, 0, e.to_string()))?;
        writeln!(w, "{line}").map_err(|e| IngestError::io(path, e))?;
    }
    w.flush().map_err(|e| IngestError::io(path, e))
}

pub fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>, IngestError> {
    let reader = BufReader::new(open(path)?);
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| IngestError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let row = serde_json::from_str(&line)
            .map_err(|e| IngestError::record(path, idx as u64 + 1, e.to_string()))?;
        out.push(row);
    }
    Ok(out)
}

pub fn save_predictions(path: &Path, predictions: &[Prediction]) -> Result<(), IngestError> {
    write_jsonl(path, predictions)
}

pub fn load_predictions(path: &Path) -> Result<Vec<Prediction>, IngestError> {
    read_jsonl(path)
}
