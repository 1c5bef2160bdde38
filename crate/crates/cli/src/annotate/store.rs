use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use stance_core::Label;

/// One line of the annotation log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationEvent {
    pub document_id: String,
    pub label: Label,
    pub annotator: String,
    pub timestamp: DateTime<Utc>,
}

struct Inner {
    file: File,
    /// Latest label per (annotator, document).
    latest: BTreeMap<String, BTreeMap<String, Label>>,
    events: usize,
}

/// Append-only JSONL log. Later entries for the same annotator and document
/// supersede earlier ones; reopening the file replays it.
pub struct AnnotationStore {
    path: PathBuf,
    inner: Mutex<Inner>,
}

impl AnnotationStore {
    pub fn open(path: &Path) -> io::Result<Self> {
        let mut latest: BTreeMap<String, BTreeMap<String, Label>> = BTreeMap::new();
        let mut events = 0;
        let bytes = match std::fs::read(path) {
            Ok(b) => b,
            Err(e) if e.kind() == io::ErrorKind::NotFound => Vec::new(),
            Err(e) => return Err(e),
        };
        // byte length of the intact prefix; a damaged final line is cut off
        let mut keep = bytes.len();
        let mut offset = 0;
        let lines: Vec<&[u8]> = bytes.split_inclusive(|&b| b == b'\n').collect();
        for (i, line) in lines.iter().enumerate() {
            let start = offset;
            offset += line.len();
            let text = String::from_utf8_lossy(line);
            if text.trim().is_empty() {
                continue;
            }
            match serde_json::from_str::<AnnotationEvent>(&text) {
                Ok(e) if line.ends_with(b"\n") => {
                    latest.entry(e.annotator).or_default().insert(e.document_id, e.label);
                    events += 1;
                }
                // a crash mid-write can only damage the final line
                _ if i + 1 == lines.len() => {
                    tracing::warn!(path = %path.display(), "dropping incomplete final annotation");
                    keep = start;
                }
                parsed => {
                    let reason = parsed.err().map_or_else(|| "missing newline".to_string(), |e| e.to_string());
                    return Err(io::Error::new(
                        io::ErrorKind::InvalidData,
                        format!("{}:{}: {reason}", path.display(), i + 1),
                    ));
                }
            }
        }
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent)?;
        }
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        if keep < bytes.len() {
            file.set_len(keep as u64)?;
        }
        Ok(AnnotationStore {
            path: path.to_path_buf(),
            inner: Mutex::new(Inner {
                file,
                latest,
                events,
            }),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn record(&self, document_id: &str, label: Label, annotator: &str) -> io::Result<AnnotationEvent> {
        let event = AnnotationEvent {
            document_id: document_id.to_string(),
            label,
            annotator: annotator.to_string(),
            timestamp: Utc::now(),
        };
        let mut line = serde_json::to_string(&event).expect("event serializes");
        line.push('\n');
        let mut inner = self.inner.lock().expect("store lock poisoned");
        inner.file.write_all(line.as_bytes())?;
        inner.file.sync_data()?;
        inner
            .latest
            .entry(event.annotator.clone())
            .or_default()
            .insert(event.document_id.clone(), event.label.clone());
        inner.events += 1;
        Ok(event)
    }

    pub fn labels_for(&self, annotator: &str) -> BTreeMap<String, Label> {
        self.inner
            .lock()
            .expect("store lock poisoned")
            .latest
            .get(annotator)
            .cloned()
            .unwrap_or_default()
    }

    pub fn annotators(&self) -> Vec<String> {
        self.inner.lock().expect("store lock poisoned").latest.keys().cloned().collect()
    }

    pub fn event_count(&self) -> usize {
        self.inner.lock().expect("store lock poisoned").events
    }
}
