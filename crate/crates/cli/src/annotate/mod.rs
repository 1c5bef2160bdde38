//! Local annotation service: a seeded labeling plan, an append-only label
//! store and a small JSON API.

mod plan;
mod server;
mod store;

pub use plan::SamplePlan;
pub use server::{
    AnnotationServer, AnnotationState, AnnotationTask, ApiError, Disagreement, Progress, DEFAULT_ANNOTATOR,
};
pub use store::{AnnotationEvent, AnnotationStore};

use std::collections::BTreeMap;
use std::io::Write;
use std::net::{IpAddr, SocketAddr};
use std::path::PathBuf;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Subcommand};
use serde_json::json;
use stance_core::eval::required_sample_size;
use stance_core::io::load_predictions;
use stance_core::{Label, LabelSet};

use crate::{load_dataset, LabelSetArgs, Session};

#[derive(Debug, Subcommand)]
pub enum AnnotateCommand {
    /// Serve the annotation UI and API until interrupted.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Documents to sample from (.jsonl or .csv).
    #[arg(long)]
    pub input: PathBuf,
    #[command(flatten)]
    pub labels: LabelSetArgs,
    /// Append-only label log (JSONL); created if missing.
    #[arg(long, default_value = "annotations.jsonl")]
    pub store: PathBuf,
    /// Loopback by default; binding elsewhere exposes document text.
    #[arg(long, default_value = "127.0.0.1")]
    pub host: IpAddr,
    /// 0 picks a free port.
    #[arg(long, default_value_t = 8765)]
    pub port: u16,
    #[arg(long, default_value_t = 0.95)]
    pub confidence: f64,
    #[arg(long, default_value_t = 0.05)]
    pub margin: f64,
    #[arg(long, default_value_t = 0.5)]
    pub p: f64,
    /// Fixed sample size instead of the computed one.
    #[arg(long)]
    pub required: Option<usize>,
    /// Prediction runs to compare for disagreement review, as NAME=PATH or PATH.
    #[arg(long = "predictions")]
    pub predictions: Vec<String>,
    /// Directory holding the built UI bundle.
    #[arg(long)]
    pub ui: Option<PathBuf>,
    #[arg(long, default_value_t = 4)]
    pub threads: usize,
}

fn load_run(spec: &str, label_set: &LabelSet) -> Result<(String, BTreeMap<String, Label>)> {
    let (name, path) = match spec.split_once('=') {
        Some((n, p)) => (n.to_string(), PathBuf::from(p)),
        None => {
            let path = PathBuf::from(spec);
            let name = path
                .parent()
                .and_then(|d| d.file_name())
                .or(path.file_stem())
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| spec.to_string());
            (name, path)
        }
    };
    let predictions = load_predictions(&path).with_context(|| format!("cannot load predictions {}", path.display()))?;
    let mut labels = BTreeMap::new();
    for p in predictions {
        if !label_set.contains(p.label.as_str()) {
            bail!(
                "{}: label `{}` for `{}` is not in label set `{}`",
                path.display(),
                p.label,
                p.document_id,
                label_set.name()
            );
        }
        labels.insert(p.document_id, p.label);
    }
    Ok((name, labels))
}

pub(crate) fn run(session: &Session, seed: Option<u64>, cmd: AnnotateCommand, out: &mut dyn Write) -> Result<()> {
    let AnnotateCommand::Serve(args) = cmd;
    let label_set = session.label_set(&args.labels)?;
    let dataset = load_dataset(&args.input)?;
    let seed = session.config.as_ref().map(|c| c.run.seed).or(seed).unwrap_or(0);
    let required = match args.required {
        Some(n) => n,
        None => required_sample_size(args.confidence, args.margin, args.p, Some(dataset.len() as u64))? as usize,
    };
    let plan = SamplePlan::new(&dataset, seed, required);
    let store = AnnotationStore::open(&args.store).with_context(|| format!("cannot open {}", args.store.display()))?;

    let plan_path = args.store.with_extension("plan.json");
    let plan_body = json!({
        "seed": plan.seed,
        "required_n": plan.required_n,
        "confidence": args.confidence,
        "margin": args.margin,
        "p": args.p,
        "sample": plan.sample(),
    });
    std::fs::write(&plan_path, serde_json::to_string_pretty(&plan_body)? + "\n")
        .with_context(|| format!("cannot write {}", plan_path.display()))?;

    let codebook = session.config.as_ref().and_then(|c| c.run.codebook.clone());
    let mut state = AnnotationState::new(dataset, label_set.clone(), plan, store)
        .with_codebook(codebook)
        .with_ui_dir(args.ui.clone());
    for spec in &args.predictions {
        let (name, labels) = load_run(spec, &label_set)?;
        state = state.with_run(name, labels);
    }
    let state = Arc::new(state);
    let server = AnnotationServer::start(Arc::clone(&state), SocketAddr::new(args.host, args.port), args.threads)
        .with_context(|| format!("cannot listen on {}:{}", args.host, args.port))?;
    if !args.host.is_loopback() {
        tracing::warn!(host = %args.host, "annotation service is reachable from other machines");
    }
    let info = json!({
        "url": format!("http://{}", server.addr()),
        "required_n": state.plan().required_n,
        "seed": state.plan().seed,
        "store": state.store().path(),
        "plan": plan_path,
    });
    session.emit(out, &info, || {
        format!(
            "listening on http://{}\nsample of {} documents (seed {}), labels in {}\n",
            server.addr(),
            state.plan().required_n,
            state.plan().seed,
            state.store().path().display()
        )
    })?;
    out.flush()?;
    server.wait();
    Ok(())
}
