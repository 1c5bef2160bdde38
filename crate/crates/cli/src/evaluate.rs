use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::Args;
use serde::Serialize;
use stance_core::eval::{
    cohens_kappa, confusion, margin_of_error, mcc_binary, mcc_multiclass, per_class_accuracy,
    required_sample_size, sensitivity_run, z_for_confidence, ConfusionMatrix,
};
use stance_core::io::{load_gold, load_predictions, GoldLabels};
use stance_core::{Label, LabelSet, Prediction};

use crate::{load_dataset, LabelSetArgs, Session};

#[derive(Debug, Args)]
pub struct ValidateArgs {
    /// Predictions: a predictions.jsonl from `classify`, or an `id,label` CSV.
    #[arg(long)]
    pub predictions: PathBuf,
    /// Gold labels as an `id,label` CSV.
    #[arg(long)]
    pub gold: PathBuf,
    #[command(flatten)]
    pub labels: LabelSetArgs,
    /// Score only the predictions that have a gold label instead of failing.
    #[arg(long)]
    pub allow_missing_gold: bool,
}

#[derive(Debug, Serialize)]
struct ValidationOutput {
    label_set: LabelSet,
    n: u64,
    mcc: f64,
    /// Two-class MCC with the first label as the positive class.
    #[serde(skip_serializing_if = "Option::is_none")]
    mcc_binary: Option<f64>,
    kappa: f64,
    accuracy: f64,
    per_class_accuracy: BTreeMap<String, Option<f64>>,
    confusion: Vec<Vec<u64>>,
    missing_predictions: Vec<String>,
    ungraded_predictions: Vec<String>,
}

fn read_predictions(path: &std::path::Path, label_set: &LabelSet) -> Result<Vec<Prediction>> {
    let is_csv = path.extension().and_then(|e| e.to_str()).is_some_and(|e| e.eq_ignore_ascii_case("csv"));
    if !is_csv {
        return Ok(load_predictions(path)?);
    }
    let rows = load_gold(path, label_set)?;
    Ok(rows
        .iter()
        .map(|(id, label)| Prediction {
            document_id: id.clone(),
            label: label.clone(),
            per_hypothesis: Vec::new(),
            hypothesis_set_id: String::new(),
            backend_id: String::new(),
            model_id: String::new(),
            prompt_hash: None,
        })
        .collect())
}

pub fn validate(session: &Session, args: ValidateArgs, out: &mut dyn Write) -> Result<()> {
    let label_set = session.label_set(&args.labels)?;
    let gold = load_gold(&args.gold, &label_set)?;
    let mut predictions = read_predictions(&args.predictions, &label_set)
        .with_context(|| format!("cannot read predictions from {}", args.predictions.display()))?;
    let ungraded: Vec<String> = predictions
        .iter()
        .filter(|p| gold.get(&p.document_id).is_none())
        .map(|p| p.document_id.clone())
        .collect();
    if !ungraded.is_empty() {
        if !args.allow_missing_gold {
            bail!(
                "{} prediction(s) have no gold label: {}{}",
                ungraded.len(),
                ungraded.iter().take(10).cloned().collect::<Vec<_>>().join(", "),
                if ungraded.len() > 10 { ", ..." } else { "" }
            );
        }
        predictions.retain(|p| gold.get(&p.document_id).is_some());
    }
    if predictions.is_empty() {
        bail!("no predictions to score");
    }
    let result = confusion(&gold, &predictions, &label_set)?;
    let cm = &result.matrix;
    let output = ValidationOutput {
        n: cm.n(),
        mcc: mcc_multiclass(cm),
        mcc_binary: if label_set.len() == 2 { Some(mcc_binary(cm)?) } else { None },
        kappa: kappa(&gold, &predictions, &label_set)?,
        accuracy: cm.correct() as f64 / cm.n() as f64,
        per_class_accuracy: label_set
            .labels()
            .iter()
            .map(|l| (l.to_string(), per_class_accuracy(cm, l.as_str()).ok()))
            .collect(),
        confusion: cm.counts().to_vec(),
        missing_predictions: result.missing_predictions.clone(),
        ungraded_predictions: ungraded,
        label_set,
    };
    session.emit(out, &output, || render_validation(&output, cm))
}

fn kappa(gold: &GoldLabels, predictions: &[Prediction], label_set: &LabelSet) -> Result<f64> {
    let predicted: BTreeMap<String, Label> =
        predictions.iter().map(|p| (p.document_id.clone(), p.label.clone())).collect();
    let graded: BTreeMap<String, Label> = gold
        .iter()
        .filter(|(id, _)| predicted.contains_key(*id))
        .map(|(id, l)| (id.clone(), l.clone()))
        .collect();
    Ok(cohens_kappa(&graded, &predicted, label_set)?)
}

fn render_validation(v: &ValidationOutput, cm: &ConfusionMatrix) -> String {
    let mut t = String::new();
    let _ = writeln!(t, "documents  {}", v.n);
    let _ = writeln!(t, "MCC        {:.4}", v.mcc);
    if let Some(b) = v.mcc_binary {
        let _ = writeln!(t, "MCC (bin)  {b:.4}  (positive class: {})", v.label_set.labels()[0]);
    }
    let _ = writeln!(t, "kappa      {:.4}", v.kappa);
    let _ = writeln!(t, "accuracy   {:.4}", v.accuracy);
    let _ = writeln!(t, "\nper-class accuracy");
    for (label, acc) in &v.per_class_accuracy {
        match acc {
            Some(a) => writeln!(t, "  {label:<12} {a:.4}"),
            None => writeln!(t, "  {label:<12} -  (no gold examples)"),
        }
        .ok();
    }
    let labels = cm.label_set().labels();
    let width = labels.iter().map(|l| l.as_str().len()).max().unwrap_or(0).max(9);
    let _ = writeln!(t, "\nconfusion (rows gold, columns predicted)");
    let _ = write!(t, "  {:<width$}", "");
    for l in labels {
        let _ = write!(t, " {:>width$}", l.as_str());
    }
    t.push('\n');
    for (l, row) in labels.iter().zip(cm.counts()) {
        let _ = write!(t, "  {:<width$}", l.as_str());
        for c in row {
            let _ = write!(t, " {c:>width$}");
        }
        t.push('\n');
    }
    if !v.missing_predictions.is_empty() {
        let _ = writeln!(
            t,
            "\n{} gold document(s) have no prediction: {}",
            v.missing_predictions.len(),
            v.missing_predictions.join(", ")
        );
    }
    if !v.ungraded_predictions.is_empty() {
        let _ = writeln!(t, "{} prediction(s) without gold were skipped", v.ungraded_predictions.len());
    }
    t
}

#[derive(Debug, Args)]
pub struct SampleSizeArgs {
    /// Confidence level, e.g. 0.95.
    #[arg(long, default_value_t = 0.95)]
    pub confidence: f64,
    /// Margin of error as a proportion, e.g. 0.05.
    #[arg(long, default_value_t = 0.05)]
    pub margin: f64,
    /// Anticipated accuracy; 0.5 is the conservative choice.
    #[arg(long, default_value_t = 0.5)]
    pub p: f64,
    /// Corpus size, for the finite-population correction.
    #[arg(long)]
    pub population: Option<u64>,
}

#[derive(Debug, Serialize)]
struct SampleSizeOutput {
    required: u64,
    confidence: f64,
    margin: f64,
    p: f64,
    population: Option<u64>,
    z: f64,
    unadjusted: u64,
    achieved_margin: f64,
}

pub fn sample_size(session: &Session, args: SampleSizeArgs, out: &mut dyn Write) -> Result<()> {
    let required = required_sample_size(args.confidence, args.margin, args.p, args.population)?;
    let unadjusted = required_sample_size(args.confidence, args.margin, args.p, None)?;
    let output = SampleSizeOutput {
        required,
        confidence: args.confidence,
        margin: args.margin,
        p: args.p,
        population: args.population,
        z: z_for_confidence(args.confidence)?,
        unadjusted,
        achieved_margin: margin_of_error(required, args.p, args.confidence, args.population)?,
    };
    session.emit(out, &output, || {
        let o = &output;
        let mut t = format!("{}\n", o.required);
        let _ = writeln!(
            t,
            "Label {} documents to estimate accuracy within ±{} at {}% confidence.",
            o.required,
            o.margin,
            o.confidence * 100.0
        );
        let _ = writeln!(
            t,
            "n0 = z² p(1-p) / e² with z = {:.6}, p = {}, e = {} gives {}.",
            o.z, o.p, o.margin, o.unadjusted
        );
        if let Some(n) = o.population {
            let _ = writeln!(t, "Finite-population correction for N = {n}: n0 / (1 + (n0 - 1)/N) gives {}.", o.required);
        }
        let _ = writeln!(t, "Margin achieved with {} labels: {:.6}", o.required, o.achieved_margin);
        t
    })
}

#[derive(Debug, Args)]
pub struct SensitivityArgs {
    /// Documents to classify (.jsonl or .csv).
    #[arg(long)]
    pub input: PathBuf,
    /// Comma-separated hypothesis set ids (at least two, sharing a label set).
    #[arg(long, value_delimiter = ',', required = true)]
    pub sets: Vec<String>,
    /// Optional gold labels (`id,label` CSV) for per-set MCC.
    #[arg(long)]
    pub gold: Option<PathBuf>,
    /// Also write the pairwise agreement table to this CSV file.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

pub fn sensitivity(session: &Session, args: SensitivityArgs, out: &mut dyn Write) -> Result<()> {
    let config = session.config()?;
    let sets = args
        .sets
        .iter()
        .map(|id| config.hypothesis_set(id.trim()).cloned())
        .collect::<Result<Vec<_>, _>>()?;
    let dataset = load_dataset(&args.input)?;
    let gold = match (&args.gold, sets.first()) {
        (Some(path), Some(first)) => Some(load_gold(path, &first.label_set)?),
        _ => None,
    };
    let backend = config.build_backend()?;
    let report = sensitivity_run(backend.as_ref(), &dataset, &sets, gold.as_ref(), &config.run.options())?;
    if let Some(path) = &args.csv {
        std::fs::write(path, report.agreement.to_csv()).with_context(|| format!("cannot write {}", path.display()))?;
    }
    session.emit(out, &report, || report.to_table())
}
