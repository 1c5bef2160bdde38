use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::metrics::{kappa_matrix, mcc_multiclass, paired_matrix, per_class_accuracy, ConfusionMatrix};
use super::EvalError;
use crate::backends::Backend;
use crate::io::GoldLabels;
use crate::types::{Dataset, HypothesisSet, Label, LabelSet, Prediction};
use crate::zeroshot::{classify_dataset, RunOptions};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub min: f64,
    pub mean: f64,
    pub max: f64,
    pub count: usize,
}

impl Summary {
    pub fn of(values: &[f64]) -> Option<Summary> {
        if values.is_empty() {
            return None;
        }
        Some(Summary {
            min: values.iter().cloned().fold(f64::INFINITY, f64::min),
            mean: values.iter().sum::<f64>() / values.len() as f64,
            max: values.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
            count: values.len(),
        })
    }
}

/// Agreement of one set's predictions with gold labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoldMetrics {
    /// Predictions that had a gold label.
    pub n: u64,
    pub mcc: f64,
    pub kappa: f64,
    pub accuracy: f64,
    /// `None` for classes without gold examples.
    pub per_class_accuracy: BTreeMap<String, Option<f64>>,
    /// Rows gold, columns predicted, in label-set order.
    pub confusion: Vec<Vec<u64>>,
    pub missing_predictions: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SetMetrics {
    pub set_id: String,
    pub predicted: usize,
    pub failed: usize,
    pub label_counts: BTreeMap<String, usize>,
    pub vs_gold: Option<GoldMetrics>,
}

/// Pairwise agreement between sets, computed over the documents both labeled.
/// Symmetric with ones on the diagonal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementMatrix {
    pub set_ids: Vec<String>,
    pub mcc: Vec<Vec<f64>>,
    pub kappa: Vec<Vec<f64>>,
}

impl AgreementMatrix {
    fn off_diagonal(values: &[Vec<f64>]) -> Vec<f64> {
        let mut out = Vec::new();
        for (i, row) in values.iter().enumerate() {
            out.extend(row.iter().skip(i + 1));
        }
        out
    }

    /// `set_a,set_b,mcc,kappa` for every unordered pair.
    pub fn to_csv(&self) -> String {
        let mut writer = csv::Writer::from_writer(Vec::new());
        writer
            .write_record(["set_a", "set_b", "mcc", "kappa"])
            .expect("in-memory write");
        for i in 0..self.set_ids.len() {
            for j in i + 1..self.set_ids.len() {
                writer
                    .write_record([
                        self.set_ids[i].as_str(),
                        self.set_ids[j].as_str(),
                        &self.mcc[i][j].to_string(),
                        &self.kappa[i][j].to_string(),
                    ])
                    .expect("in-memory write");
            }
        }
        String::from_utf8(writer.into_inner().expect("in-memory flush")).expect("csv is utf-8")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityReport {
    pub label_set: String,
    pub documents: usize,
    pub sets: Vec<SetMetrics>,
    pub agreement: AgreementMatrix,
    /// Spread of each set's MCC against gold labels.
    pub mcc_vs_gold: Option<Summary>,
    /// Spread of MCC between distinct pairs of sets.
    pub pairwise_mcc: Option<Summary>,
    pub pairwise_kappa: Option<Summary>,
}

impl SensitivityReport {
    pub fn to_table(&self) -> String {
        let width = self
            .sets
            .iter()
            .map(|s| s.set_id.len())
            .max()
            .unwrap_or(0)
            .max("set".len());
        let mut out = String::new();
        let _ = writeln!(out, "{:<width$}  {:>6}  {:>6}  {:>8}  {:>7}", "set", "n", "failed", "mcc_gold", "acc");
        for s in &self.sets {
            let (mcc, acc) = match &s.vs_gold {
                Some(g) => (format!("{:.4}", g.mcc), format!("{:.4}", g.accuracy)),
                None => ("-".into(), "-".into()),
            };
            let _ = writeln!(out, "{:<width$}  {:>6}  {:>6}  {:>8}  {:>7}", s.set_id, s.predicted, s.failed, mcc, acc);
        }
        let mut line = |name: &str, summary: &Option<Summary>| {
            if let Some(x) = summary {
                let _ = writeln!(out, "{name}: min {:.4}  mean {:.4}  max {:.4}", x.min, x.mean, x.max);
            }
        };
        line("\nMCC vs gold", &self.mcc_vs_gold);
        line("pairwise MCC", &self.pairwise_mcc);
        line("pairwise kappa", &self.pairwise_kappa);
        out.push_str("\npairwise MCC matrix\n");
        let _ = write!(out, "{:<width$}", "");
        for id in &self.agreement.set_ids {
            let _ = write!(out, "  {:>8}", truncate(id, 8));
        }
        out.push('\n');
        for (id, row) in self.agreement.set_ids.iter().zip(&self.agreement.mcc) {
            let _ = write!(out, "{id:<width$}");
            for v in row {
                let _ = write!(out, "  {v:>8.4}");
            }
            out.push('\n');
        }
        out
    }
}

fn truncate(s: &str, n: usize) -> &str {
    s.char_indices().nth(n).map_or(s, |(i, _)| &s[..i])
}

fn labeling(predictions: &[Prediction]) -> BTreeMap<String, Label> {
    predictions
        .iter()
        .map(|p| (p.document_id.clone(), p.label.clone()))
        .collect()
}

fn restrict(map: &BTreeMap<String, Label>, keep: &BTreeMap<String, Label>) -> BTreeMap<String, Label> {
    map.iter()
        .filter(|(k, _)| keep.contains_key(*k))
        .map(|(k, v)| (k.clone(), v.clone()))
        .collect()
}

/// Pairwise MCC and kappa between labelings, each over the ids both contain.
pub fn agreement(
    labelings: &[(String, BTreeMap<String, Label>)],
    label_set: &LabelSet,
) -> Result<AgreementMatrix, EvalError> {
    let k = labelings.len();
    let mut mcc = vec![vec![1.0; k]; k];
    let mut kappa = vec![vec![1.0; k]; k];
    for i in 0..k {
        for j in i + 1..k {
            let a = restrict(&labelings[i].1, &labelings[j].1);
            let b = restrict(&labelings[j].1, &labelings[i].1);
            let cm = paired_matrix(&a, &b, label_set)?;
            mcc[i][j] = mcc_multiclass(&cm);
            mcc[j][i] = mcc[i][j];
            kappa[i][j] = kappa_matrix(&cm)?;
            kappa[j][i] = kappa[i][j];
        }
    }
    Ok(AgreementMatrix {
        set_ids: labelings.iter().map(|(id, _)| id.clone()).collect(),
        mcc,
        kappa,
    })
}

fn gold_metrics(
    predictions: &BTreeMap<String, Label>,
    gold: &GoldLabels,
    label_set: &LabelSet,
) -> Result<GoldMetrics, EvalError> {
    let labeled: Vec<(&str, &str, &str)> = predictions
        .iter()
        .filter_map(|(id, p)| gold.get(id).map(|g| (id.as_str(), g.as_str(), p.as_str())))
        .collect();
    let cm = ConfusionMatrix::from_pairs(label_set.clone(), labeled)?;
    if cm.n() == 0 {
        return Err(EvalError::Empty);
    }
    let per_class_accuracy = label_set
        .labels()
        .iter()
        .map(|l| (l.to_string(), per_class_accuracy(&cm, l.as_str()).ok()))
        .collect();
    Ok(GoldMetrics {
        n: cm.n(),
        mcc: mcc_multiclass(&cm),
        kappa: kappa_matrix(&cm)?,
        accuracy: cm.correct() as f64 / cm.n() as f64,
        per_class_accuracy,
        confusion: cm.counts().to_vec(),
        missing_predictions: gold
            .iter()
            .filter(|(id, _)| !predictions.contains_key(*id))
            .map(|(id, _)| id.clone())
            .collect(),
    })
}

/// One finished classification pass for a set.
#[derive(Debug, Clone, PartialEq)]
pub struct SetRun {
    pub set_id: String,
    pub predictions: Vec<Prediction>,
    pub failed: usize,
}

/// Builds the report from finished runs; predictions without a gold label
/// are left out of the gold comparison.
pub fn sensitivity_report(
    label_set: &LabelSet,
    documents: usize,
    runs: &[SetRun],
    gold: Option<&GoldLabels>,
) -> Result<SensitivityReport, EvalError> {
    let labelings: Vec<(String, BTreeMap<String, Label>)> = runs
        .iter()
        .map(|r| (r.set_id.clone(), labeling(&r.predictions)))
        .collect();
    let mut sets = Vec::with_capacity(runs.len());
    for (run, (_, labels)) in runs.iter().zip(&labelings) {
        let mut label_counts = BTreeMap::new();
        for l in labels.values() {
            *label_counts.entry(l.to_string()).or_insert(0) += 1;
        }
        sets.push(SetMetrics {
            set_id: run.set_id.clone(),
            predicted: run.predictions.len(),
            failed: run.failed,
            label_counts,
            vs_gold: gold.map(|g| gold_metrics(labels, g, label_set)).transpose()?,
        });
    }
    let agreement = agreement(&labelings, label_set)?;
    let gold_mccs: Vec<f64> = sets.iter().filter_map(|s| s.vs_gold.as_ref().map(|g| g.mcc)).collect();
    Ok(SensitivityReport {
        label_set: label_set.name().to_string(),
        documents,
        mcc_vs_gold: Summary::of(&gold_mccs),
        pairwise_mcc: Summary::of(&AgreementMatrix::off_diagonal(&agreement.mcc)),
        pairwise_kappa: Summary::of(&AgreementMatrix::off_diagonal(&agreement.kappa)),
        sets,
        agreement,
    })
}

/// Classifies the dataset once per synonymous hypothesis set and compares the runs.
pub fn sensitivity_run(
    backend: &dyn Backend,
    dataset: &Dataset,
    sets: &[HypothesisSet],
    gold: Option<&GoldLabels>,
    options: &RunOptions,
) -> Result<SensitivityReport, EvalError> {
    if sets.len() < 2 {
        return Err(EvalError::TooFewSets(sets.len()));
    }
    let label_set = &sets[0].label_set;
    for s in &sets[1..] {
        if s.label_set != *label_set {
            return Err(EvalError::MismatchedLabelSets {
                set: s.id.clone(),
                found: s.label_set.name().to_string(),
                expected: label_set.name().to_string(),
            });
        }
    }
    let mut runs = Vec::with_capacity(sets.len());
    for set in sets {
        let run = classify_dataset(backend, dataset, set, options)?;
        runs.push(SetRun {
            set_id: set.id.clone(),
            failed: run.failures.len(),
            predictions: run.predictions,
        });
    }
    sensitivity_report(label_set, dataset.len(), &runs, gold)
}
