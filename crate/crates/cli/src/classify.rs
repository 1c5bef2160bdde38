use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use chrono::Utc;
use clap::Args;
use serde::Serialize;
use stance_core::backends::prompt_hash;
use stance_core::config::Config;
use stance_core::fewshot::{audit, classify_generative_dataset};
use stance_core::io::{save_predictions, write_jsonl};
use stance_core::manifest::{content_digest, write_manifest, RunConfig, RunManifest};
use stance_core::zeroshot::{classify_dataset, classify_dimensions, DocumentFailure, RunReport};
use stance_core::Dataset;

use crate::{load_dataset, Session};

#[derive(Debug, Args)]
pub struct ClassifyArgs {
    /// Documents to classify (.jsonl or .csv).
    #[arg(long)]
    pub input: PathBuf,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Classify with this hypothesis set.
    #[arg(long, conflicts_with_all = ["dimensions", "fewshot"])]
    pub hset: Option<String>,
    /// Route documents through the configured keyword dimensions and OR-aggregate.
    #[arg(long, conflicts_with = "fewshot")]
    pub dimensions: bool,
    /// Classify with the configured few-shot prompt.
    #[arg(long)]
    pub fewshot: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Mode {
    Hypotheses,
    Dimensions,
    FewShot,
}

impl Mode {
    fn name(self) -> &'static str {
        match self {
            Mode::Hypotheses => "hypotheses",
            Mode::Dimensions => "dimensions",
            Mode::FewShot => "fewshot",
        }
    }
}

#[derive(Serialize)]
struct Summary<'a> {
    out: &'a Path,
    outputs: Vec<String>,
    run_id: &'a str,
    report: &'a RunReport,
}

fn parameters(config: &Config, mode: Mode, args: &ClassifyArgs, dataset: &Dataset) -> Result<BTreeMap<String, String>> {
    let mut p = BTreeMap::new();
    p.insert("mode".to_string(), mode.name().to_string());
    p.insert("input_digest".to_string(), content_digest(dataset.documents()));
    p.insert("seed".to_string(), config.run.seed.to_string());
    p.insert("error_budget".to_string(), config.run.error_budget.to_string());
    let scoring = serde_json::to_value(config.run.scoring)?;
    match mode {
        Mode::Hypotheses | Mode::Dimensions => {
            if let Some(h) = &args.hset {
                p.insert("hypothesis_set".to_string(), h.clone());
            }
            p.insert("scoring".to_string(), scoring.as_str().unwrap_or_default().to_string());
        }
        Mode::FewShot => {
            let g = config.generation_params()?;
            p.insert("temperature".to_string(), g.temperature.to_string());
            p.insert("max_tokens".to_string(), g.max_tokens.to_string());
        }
    }
    Ok(p)
}

pub fn run(session: &Session, args: ClassifyArgs, out: &mut dyn Write) -> Result<()> {
    let config = session.config()?;
    let mode = match (&args.hset, args.dimensions, args.fewshot) {
        (Some(_), false, false) => Mode::Hypotheses,
        (None, true, false) => Mode::Dimensions,
        (None, false, true) => Mode::FewShot,
        _ => bail!("choose exactly one of --hset ID, --dimensions or --fewshot"),
    };
    let dataset = load_dataset(&args.input)?;
    let backend = config.build_backend()?;
    let options = config.run.options();
    std::fs::create_dir_all(&args.out).with_context(|| format!("cannot create {}", args.out.display()))?;

    let mut outputs = Vec::new();
    let (report, failures): (RunReport, Vec<DocumentFailure>) = match mode {
        Mode::Hypotheses => {
            let hset = config.hypothesis_set(args.hset.as_deref().unwrap_or_default())?;
            let run = classify_dataset(backend.as_ref(), &dataset, hset, &options)?;
            save_predictions(&args.out.join("predictions.jsonl"), &run.predictions)?;
            outputs.push("predictions.jsonl".to_string());
            (RunReport::from_predictions(&run.predictions, run.failures.len()), run.failures)
        }
        Mode::Dimensions => {
            if config.dimensions.is_empty() {
                bail!("--dimensions needs at least one [[dimensions]] entry in the configuration");
            }
            let run = classify_dimensions(backend.as_ref(), &dataset, &config.dimensions, &config.matching, &options)?;
            write_jsonl(&args.out.join("aggregates.jsonl"), &run.results)?;
            outputs.push("aggregates.jsonl".to_string());
            (RunReport::from_aggregates(&run.results, run.failures.len()), run.failures)
        }
        Mode::FewShot => {
            let Some(first) = dataset.iter().next() else {
                bail!("{} contains no documents", args.input.display());
            };
            let spec = config.fewshot_spec(first.clone())?;
            let params = config.generation_params()?;
            if let Some(dir) = &config.fewshot_section()?.audit_dir {
                write_prompt_audit(dir, &spec, &dataset)?;
            }
            let run = classify_generative_dataset(backend.as_ref(), &dataset, &spec, &params, &options)?;
            save_predictions(&args.out.join("predictions.jsonl"), &run.predictions)?;
            outputs.push("predictions.jsonl".to_string());
            (RunReport::from_predictions(&run.predictions, run.failures.len()), run.failures)
        }
    };
    if !failures.is_empty() {
        write_jsonl(&args.out.join("failures.jsonl"), &failures)?;
        outputs.push("failures.jsonl".to_string());
    }

    let desc = &config.backend.descriptor;
    let manifest = RunManifest::new(
        RunConfig {
            backend_id: desc.backend_id.clone(),
            model_id: desc.model_id.clone(),
            content_hash: config.content_hash(),
            parameters: parameters(config, mode, &args, &dataset)?,
            notes: config.run.notes.clone(),
            codebook: config.run.codebook.clone(),
        },
        Utc::now(),
    );
    write_manifest(&args.out.join("manifest.json"), &manifest)?;
    outputs.push("manifest.json".to_string());
    let report_body = serde_json::to_string_pretty(&report)? + "\n";
    std::fs::write(args.out.join("report.json"), report_body)?;
    outputs.push("report.json".to_string());

    let summary = Summary {
        out: &args.out,
        outputs,
        run_id: &manifest.run_id,
        report: &report,
    };
    session.emit(out, &summary, || render_report(&summary))
}

fn render_report(s: &Summary<'_>) -> String {
    let mut t = String::new();
    let _ = writeln!(t, "run {}  ->  {}", s.run_id, s.out.display());
    let _ = writeln!(t, "documents {}  failed {}", s.report.documents, s.report.failed);
    for (label, n) in &s.report.label_counts {
        let _ = writeln!(t, "  {label:<14} {n:>6}");
    }
    if !s.report.per_dimension.is_empty() {
        let _ = writeln!(t, "per dimension:");
        for (dim, counts) in &s.report.per_dimension {
            let parts: Vec<String> = counts.iter().map(|(l, n)| format!("{l}={n}")).collect();
            let _ = writeln!(t, "  {dim:<14} {}", parts.join(" "));
        }
    }
    t
}

#[derive(Serialize)]
struct PromptRecord<'a> {
    document_id: &'a str,
    prompt_hash: String,
    prompt: String,
}

fn write_prompt_audit(dir: &Path, spec: &stance_core::fewshot::PromptSpec, dataset: &Dataset) -> Result<()> {
    let prepared = spec.prepare()?;
    std::fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    let audit = audit(prepared.examples());
    std::fs::write(dir.join("audit.json"), serde_json::to_string_pretty(&audit)? + "\n")?;
    let prompts: Vec<PromptRecord<'_>> = dataset
        .iter()
        .map(|d| {
            let prompt = prepared.render(d);
            PromptRecord {
                document_id: &d.id,
                prompt_hash: prompt_hash(&prompt),
                prompt,
            }
        })
        .collect();
    write_jsonl(&dir.join("prompts.jsonl"), &prompts)?;
    Ok(())
}
