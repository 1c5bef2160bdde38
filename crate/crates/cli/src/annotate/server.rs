use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::{self, Read};
use std::net::SocketAddr;
use std::path::{Component, Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use stance_core::{Dataset, Document, Label, LabelSet};
use tiny_http::{Header, Method, Request, Response, Server};

use super::plan::SamplePlan;
use super::store::AnnotationStore;

pub const DEFAULT_ANNOTATOR: &str = "default";
const MAX_BODY: u64 = 1 << 20;

/// One document offered for labeling.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnnotationTask {
    pub document: Document,
    pub label_set: LabelSet,
    pub position: usize,
    pub required_n: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Progress {
    pub annotator: String,
    pub labeled: usize,
    pub required: usize,
    pub fraction: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Disagreement {
    pub document_id: String,
    pub text: String,
    /// Predicted label per loaded run, keyed by run name.
    pub labels: BTreeMap<String, Label>,
    pub gold: Option<Label>,
}

/// Everything the annotation service needs; shared by the worker threads.
pub struct AnnotationState {
    dataset: Dataset,
    label_set: LabelSet,
    plan: SamplePlan,
    store: AnnotationStore,
    runs: Vec<(String, BTreeMap<String, Label>)>,
    codebook: Option<String>,
    ui_dir: Option<PathBuf>,
    /// Per-annotator skip queue; skipped documents are served after the rest.
    skipped: Mutex<HashMap<String, Vec<String>>>,
}

impl AnnotationState {
    pub fn new(dataset: Dataset, label_set: LabelSet, plan: SamplePlan, store: AnnotationStore) -> Self {
        AnnotationState {
            dataset,
            label_set,
            plan,
            store,
            runs: Vec::new(),
            codebook: None,
            ui_dir: None,
            skipped: Mutex::new(HashMap::new()),
        }
    }

    /// Adds a prediction run to compare in the disagreement view.
    pub fn with_run(mut self, name: impl Into<String>, labels: BTreeMap<String, Label>) -> Self {
        self.runs.push((name.into(), labels));
        self
    }

    pub fn with_codebook(mut self, codebook: Option<String>) -> Self {
        self.codebook = codebook;
        self
    }

    pub fn with_ui_dir(mut self, dir: Option<PathBuf>) -> Self {
        self.ui_dir = dir;
        self
    }

    pub fn plan(&self) -> &SamplePlan {
        &self.plan
    }

    pub fn store(&self) -> &AnnotationStore {
        &self.store
    }

    fn task(&self, id: &str) -> AnnotationTask {
        AnnotationTask {
            document: self.dataset.get(id).expect("planned ids come from the dataset").clone(),
            label_set: self.label_set.clone(),
            position: self.plan.position(id).expect("planned id"),
            required_n: self.plan.required_n,
        }
    }

    /// Next planned document this annotator has not labeled yet.
    pub fn next_task(&self, annotator: &str) -> Option<AnnotationTask> {
        let done = self.store.labels_for(annotator);
        let skipped = self.skipped.lock().expect("skip lock poisoned");
        let queue = skipped.get(annotator);
        let is_skipped = |id: &String| queue.is_some_and(|q| q.contains(id));
        self.plan
            .sample()
            .iter()
            .find(|id| !done.contains_key(*id) && !is_skipped(id))
            .or_else(|| queue.and_then(|q| q.iter().find(|id| !done.contains_key(*id))))
            .map(|id| self.task(id))
    }

    pub fn skip(&self, annotator: &str, document_id: &str) -> Result<(), ApiError> {
        if !self.plan.in_sample(document_id) {
            return Err(ApiError::conflict(format!("document `{document_id}` is not in the planned sample")));
        }
        let mut skipped = self.skipped.lock().expect("skip lock poisoned");
        let queue = skipped.entry(annotator.to_string()).or_default();
        queue.retain(|id| id != document_id);
        queue.push(document_id.to_string());
        Ok(())
    }

    pub fn label(&self, annotator: &str, document_id: &str, label: &str) -> Result<(), ApiError> {
        let Some(label) = self.label_set.get(label) else {
            return Err(ApiError::new(
                422,
                format!("label `{label}` is not in label set `{}`", self.label_set.name()),
            ));
        };
        if self.dataset.get(document_id).is_none() {
            return Err(ApiError::conflict(format!("document `{document_id}` is not in the dataset")));
        }
        if !self.plan.in_sample(document_id) && !self.is_disputed(document_id) {
            return Err(ApiError::conflict(format!(
                "document `{document_id}` is outside the planned sample of {}",
                self.plan.required_n
            )));
        }
        self.store
            .record(document_id, label.clone(), annotator)
            .map_err(|e| ApiError::new(500, format!("cannot write annotation: {e}")))?;
        if let Some(q) = self.skipped.lock().expect("skip lock poisoned").get_mut(annotator) {
            q.retain(|id| id != document_id);
        }
        Ok(())
    }

    pub fn progress(&self, annotator: &str) -> Progress {
        let done = self.store.labels_for(annotator);
        let labeled = self.plan.sample().iter().filter(|id| done.contains_key(*id)).count();
        let required = self.plan.required_n;
        let fraction = if required == 0 {
            1.0
        } else {
            (labeled as f64 / required as f64).clamp(0.0, 1.0)
        };
        Progress {
            annotator: annotator.to_string(),
            labeled,
            required,
            fraction,
        }
    }

    fn is_disputed(&self, id: &str) -> bool {
        let mut seen: Option<&Label> = None;
        for (_, labels) in &self.runs {
            if let Some(l) = labels.get(id) {
                match seen {
                    Some(s) if s != l => return true,
                    Some(_) => {}
                    None => seen = Some(l),
                }
            }
        }
        false
    }

    /// Dataset documents on which the loaded runs do not all agree.
    pub fn disagreements(&self, annotator: &str) -> Vec<Disagreement> {
        let gold = self.store.labels_for(annotator);
        self.dataset
            .iter()
            .filter(|d| self.is_disputed(&d.id))
            .map(|d| Disagreement {
                document_id: d.id.clone(),
                text: d.text.clone(),
                labels: self
                    .runs
                    .iter()
                    .filter_map(|(name, labels)| labels.get(&d.id).map(|l| (name.clone(), l.clone())))
                    .collect(),
                gold: gold.get(&d.id).cloned(),
            })
            .collect()
    }

    /// `id,label` CSV of this annotator's labels, readable by `load_gold`.
    pub fn export(&self, annotator: &str) -> String {
        let mut writer = csv::Writer::from_writer(Vec::new());
        writer.write_record(["id", "label"]).expect("in-memory write");
        for (id, label) in self.store.labels_for(annotator) {
            writer.write_record([id.as_str(), label.as_str()]).expect("in-memory write");
        }
        String::from_utf8(writer.into_inner().expect("in-memory flush")).expect("csv is utf-8")
    }

    fn meta(&self) -> Value {
        json!({
            "label_set": self.label_set,
            "required_n": self.plan.required_n,
            "seed": self.plan.seed,
            "documents": self.dataset.len(),
            "runs": self.runs.iter().map(|(n, _)| n).collect::<Vec<_>>(),
            "annotators": self.store.annotators(),
            "codebook": self.codebook,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ApiError {
    pub status: u16,
    pub message: String,
}

impl ApiError {
    fn new(status: u16, message: impl Into<String>) -> Self {
        ApiError {
            status,
            message: message.into(),
        }
    }

    fn conflict(message: String) -> Self {
        ApiError::new(409, message)
    }
}

#[derive(Deserialize)]
struct LabelBody {
    document_id: String,
    label: String,
    #[serde(default)]
    annotator: Option<String>,
}

#[derive(Deserialize)]
struct SkipBody {
    document_id: String,
    #[serde(default)]
    annotator: Option<String>,
}

type Reply = Response<io::Cursor<Vec<u8>>>;

fn header(name: &str, value: &str) -> Header {
    Header::from_bytes(name.as_bytes(), value.as_bytes()).expect("static header is valid")
}

fn json_reply(status: u16, body: &impl Serialize) -> Reply {
    let bytes = serde_json::to_vec(body).expect("response serializes");
    Response::from_data(bytes)
        .with_status_code(status)
        .with_header(header("Content-Type", "application/json"))
}

fn error_reply(e: ApiError) -> Reply {
    json_reply(e.status, &json!({ "error": e.message }))
}

fn query_params(url: &str) -> HashMap<String, String> {
    let query = url.split_once('?').map_or("", |(_, q)| q);
    url::form_urlencoded::parse(query.as_bytes()).into_owned().collect()
}

fn annotator_of(params: &HashMap<String, String>, body: Option<&str>) -> String {
    body.or(params.get("annotator").map(String::as_str))
        .filter(|a| !a.trim().is_empty())
        .unwrap_or(DEFAULT_ANNOTATOR)
        .to_string()
}

fn read_json<T: for<'de> Deserialize<'de>>(request: &mut Request) -> Result<T, ApiError> {
    let mut body = String::new();
    request
        .as_reader()
        .take(MAX_BODY)
        .read_to_string(&mut body)
        .map_err(|e| ApiError::new(400, format!("cannot read request body: {e}")))?;
    serde_json::from_str(&body).map_err(|e| ApiError::new(400, format!("invalid JSON body: {e}")))
}

fn handle(state: &AnnotationState, request: &mut Request) -> Reply {
    let url = request.url().to_string();
    let path = url.split('?').next().unwrap_or("/").to_string();
    let params = query_params(&url);
    let method = request.method().clone();
    let outcome = match (&method, path.as_str()) {
        (Method::Get, "/api/next") => {
            let annotator = annotator_of(&params, None);
            let task = state.next_task(&annotator);
            Ok(json_reply(
                200,
                &json!({
                    "done": task.is_none(),
                    "task": task,
                    "progress": state.progress(&annotator),
                }),
            ))
        }
        (Method::Post, "/api/label") => read_json::<LabelBody>(request).and_then(|b| {
            let annotator = annotator_of(&params, b.annotator.as_deref());
            state.label(&annotator, &b.document_id, &b.label)?;
            Ok(json_reply(200, &json!({ "ok": true, "progress": state.progress(&annotator) })))
        }),
        (Method::Post, "/api/skip") => read_json::<SkipBody>(request).and_then(|b| {
            let annotator = annotator_of(&params, b.annotator.as_deref());
            state.skip(&annotator, &b.document_id)?;
            Ok(json_reply(200, &json!({ "ok": true })))
        }),
        (Method::Get, "/api/progress") => Ok(json_reply(200, &state.progress(&annotator_of(&params, None)))),
        (Method::Get, "/api/disagreements") => {
            Ok(json_reply(200, &state.disagreements(&annotator_of(&params, None))))
        }
        (Method::Get, "/api/export") => {
            let body = state.export(&annotator_of(&params, None));
            Ok(Response::from_data(body.into_bytes())
                .with_header(header("Content-Type", "text/csv; charset=utf-8"))
                .with_header(header("Content-Disposition", "attachment; filename=\"gold.csv\"")))
        }
        (Method::Get, "/api/meta") => Ok(json_reply(200, &state.meta())),
        (_, p) if p.starts_with("/api/") => Err(ApiError::new(404, format!("no endpoint {method} {p}"))),
        (Method::Get, p) => Ok(static_file(state.ui_dir.as_deref(), p)),
        _ => Err(ApiError::new(405, format!("{method} is not supported here"))),
    };
    outcome.unwrap_or_else(error_reply)
}

const PLACEHOLDER_INDEX: &str = "<!doctype html><meta charset=\"utf-8\"><title>stance annotate</title>\
<p>The annotation UI bundle is not installed. Pass <code>--ui DIR</code> to serve it; the JSON API is under <code>/api/</code>.</p>\n";

fn content_type(path: &Path) -> &'static str {
    match path.extension().and_then(|e| e.to_str()) {
        Some("html") => "text/html; charset=utf-8",
        Some("js" | "mjs") => "text/javascript",
        Some("css") => "text/css",
        Some("json") => "application/json",
        Some("svg") => "image/svg+xml",
        Some("png") => "image/png",
        Some("ico") => "image/x-icon",
        _ => "application/octet-stream",
    }
}

fn static_file(ui_dir: Option<&Path>, url_path: &str) -> Reply {
    let decoded = percent_encoding::percent_decode_str(url_path).decode_utf8_lossy();
    let relative = decoded.trim_start_matches('/');
    let relative = if relative.is_empty() { "index.html" } else { relative };
    let Some(dir) = ui_dir else {
        return if relative == "index.html" {
            Response::from_data(PLACEHOLDER_INDEX.as_bytes().to_vec())
                .with_header(header("Content-Type", "text/html; charset=utf-8"))
        } else {
            error_reply(ApiError::new(404, "not found"))
        };
    };
    let rel = Path::new(relative);
    if !rel.components().all(|c| matches!(c, Component::Normal(_))) {
        return error_reply(ApiError::new(404, "not found"));
    }
    let full = dir.join(rel);
    match fs::read(&full) {
        Ok(bytes) => Response::from_data(bytes).with_header(header("Content-Type", content_type(&full))),
        Err(_) => error_reply(ApiError::new(404, "not found")),
    }
}

/// A running annotation service.
pub struct AnnotationServer {
    server: Arc<Server>,
    workers: Vec<JoinHandle<()>>,
    addr: SocketAddr,
}

impl AnnotationServer {
    /// Binds `addr` (port 0 picks a free port) and starts `threads` workers.
    pub fn start(state: Arc<AnnotationState>, addr: SocketAddr, threads: usize) -> io::Result<Self> {
        let server = Server::http(addr).map_err(|e| io::Error::new(io::ErrorKind::AddrInUse, e.to_string()))?;
        let addr = server
            .server_addr()
            .to_ip()
            .ok_or_else(|| io::Error::other("server is not bound to an IP address"))?;
        let server = Arc::new(server);
        let workers = (0..threads.max(1))
            .map(|_| {
                let server = Arc::clone(&server);
                let state = Arc::clone(&state);
                std::thread::spawn(move || {
                    while let Ok(mut request) = server.recv() {
                        let reply = handle(&state, &mut request);
                        tracing::debug!(method = %request.method(), url = request.url(), status = reply.status_code().0);
                        if let Err(e) = request.respond(reply) {
                            tracing::warn!(error = %e, "failed to send response");
                        }
                    }
                })
            })
            .collect();
        Ok(AnnotationServer { server, workers, addr })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    /// Blocks until the workers exit.
    pub fn wait(mut self) {
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }

    pub fn shutdown(mut self) {
        self.stop();
    }

    fn stop(&mut self) {
        // each unblock wakes exactly one waiting worker
        for _ in 0..self.workers.len() {
            self.server.unblock();
        }
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }
}

impl Drop for AnnotationServer {
    fn drop(&mut self) {
        self.stop();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn state(dir: &Path, n: usize, required: usize) -> AnnotationState {
        let ds = Dataset::new((0..n).map(|i| Document::new(format!("t{i}"), format!("text {i}"))).collect()).unwrap();
        let ls = LabelSet::new("stance", ["support", "oppose", "neutral"]).unwrap();
        let plan = SamplePlan::new(&ds, 7, required);
        let store = AnnotationStore::open(&dir.join("labels.jsonl")).unwrap();
        AnnotationState::new(ds, ls, plan, store)
    }

    #[test]
    fn next_skips_labeled_and_skipped() {
        let dir = tempfile::tempdir().unwrap();
        let s = state(dir.path(), 10, 3);
        let sample = s.plan().sample().to_vec();
        assert_eq!(s.next_task("a").unwrap().document.id, sample[0]);
        s.skip("a", &sample[0]).unwrap();
        assert_eq!(s.next_task("a").unwrap().document.id, sample[1]);
        s.label("a", &sample[1], "support").unwrap();
        s.label("a", &sample[2], "oppose").unwrap();
        assert_eq!(s.next_task("a").unwrap().document.id, sample[0]);
        assert_eq!(s.next_task("b").unwrap().document.id, sample[0]);
        s.label("a", &sample[0], "neutral").unwrap();
        assert!(s.next_task("a").is_none());
        assert_eq!(s.progress("a").fraction, 1.0);
    }

    #[test]
    fn label_errors() {
        let dir = tempfile::tempdir().unwrap();
        let s = state(dir.path(), 10, 3);
        let first = s.plan().sample()[0].clone();
        assert_eq!(s.label("a", &first, "maybe").unwrap_err().status, 422);
        assert_eq!(s.label("a", "t99", "support").unwrap_err().status, 409);
        let outside = (0..10).map(|i| format!("t{i}")).find(|id| !s.plan().in_sample(id)).unwrap();
        assert_eq!(s.label("a", &outside, "support").unwrap_err().status, 409);
    }

    #[test]
    fn disputed_documents_accept_labels_outside_the_plan() {
        let dir = tempfile::tempdir().unwrap();
        let s = state(dir.path(), 10, 1);
        let outside = (0..10).map(|i| format!("t{i}")).find(|id| !s.plan().in_sample(id)).unwrap();
        let a: BTreeMap<String, Label> = [(outside.clone(), Label::new("support"))].into();
        let b: BTreeMap<String, Label> = [(outside.clone(), Label::new("oppose"))].into();
        let s = s.with_run("a", a).with_run("b", b);
        s.label("x", &outside, "oppose").unwrap();
        let d = s.disagreements("x");
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].gold, Some(Label::new("oppose")));
        assert!(s.export("x").contains(&format!("{outside},oppose")));
    }

    #[test]
    fn static_paths_cannot_escape() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("index.html"), "hi").unwrap();
        assert_eq!(static_file(Some(dir.path()), "/").status_code().0, 200);
        assert_eq!(static_file(Some(dir.path()), "/../etc/passwd").status_code().0, 404);
        assert_eq!(static_file(Some(dir.path()), "/%2e%2e/etc/passwd").status_code().0, 404);
        assert_eq!(static_file(None, "/").status_code().0, 200);
        assert_eq!(static_file(None, "/app.js").status_code().0, 404);
    }
}
