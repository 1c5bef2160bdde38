use std::collections::BTreeMap;

use serde::Serialize;

use super::EvalError;
use crate::io::GoldLabels;
use crate::types::{Label, LabelSet, Prediction};

/// Rows are gold labels, columns predicted labels, both in label-set order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ConfusionMatrix {
    label_set: LabelSet,
    counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn zeros(label_set: LabelSet) -> Self {
        let k = label_set.len();
        ConfusionMatrix {
            label_set,
            counts: vec![vec![0; k]; k],
        }
    }

    pub fn from_counts(label_set: LabelSet, counts: Vec<Vec<u64>>) -> Result<Self, EvalError> {
        let k = label_set.len();
        if counts.len() != k || counts.iter().any(|r| r.len() != k) {
            return Err(EvalError::Shape { expected: k });
        }
        Ok(ConfusionMatrix { label_set, counts })
    }

    /// Tallies `(gold, predicted)` pairs. The id is only used in errors.
    pub fn from_pairs<'a>(
        label_set: LabelSet,
        pairs: impl IntoIterator<Item = (&'a str, &'a str, &'a str)>,
    ) -> Result<Self, EvalError> {
        let mut cm = ConfusionMatrix::zeros(label_set);
        for (id, gold, predicted) in pairs {
            let g = cm.index(id, gold)?;
            let p = cm.index(id, predicted)?;
            cm.counts[g][p] += 1;
        }
        Ok(cm)
    }

    fn index(&self, id: &str, label: &str) -> Result<usize, EvalError> {
        self.label_set.index_of(label).ok_or_else(|| EvalError::UnknownLabel {
            id: id.to_string(),
            label: label.to_string(),
            label_set: self.label_set.name().to_string(),
        })
    }

    pub fn label_set(&self) -> &LabelSet {
        &self.label_set
    }

    pub fn counts(&self) -> &[Vec<u64>] {
        &self.counts
    }

    pub fn get(&self, gold: &str, predicted: &str) -> Option<u64> {
        Some(self.counts[self.label_set.index_of(gold)?][self.label_set.index_of(predicted)?])
    }

    pub fn k(&self) -> usize {
        self.counts.len()
    }

    pub fn n(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn correct(&self) -> u64 {
        (0..self.k()).map(|i| self.counts[i][i]).sum()
    }

    pub fn row_sums(&self) -> Vec<u64> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<u64> {
        (0..self.k())
            .map(|j| self.counts.iter().map(|r| r[j]).sum())
            .collect()
    }
}

/// A confusion matrix plus the gold ids nothing was predicted for.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Confusion {
    pub matrix: ConfusionMatrix,
    pub missing_predictions: Vec<String>,
}

/// Compares predictions with gold labels. Every prediction needs a gold label;
/// gold ids without a prediction are listed in the result.
pub fn confusion(
    gold: &GoldLabels,
    predictions: &[Prediction],
    label_set: &LabelSet,
) -> Result<Confusion, EvalError> {
    let mut pairs = Vec::with_capacity(predictions.len());
    for p in predictions {
        let g = gold
            .get(&p.document_id)
            .ok_or_else(|| EvalError::MissingGold(p.document_id.clone()))?;
        pairs.push((p.document_id.as_str(), g.as_str(), p.label.as_str()));
    }
    let matrix = ConfusionMatrix::from_pairs(label_set.clone(), pairs)?;
    let predicted: std::collections::HashSet<&str> =
        predictions.iter().map(|p| p.document_id.as_str()).collect();
    let missing_predictions = gold
        .iter()
        .filter(|(id, _)| !predicted.contains(id.as_str()))
        .map(|(id, _)| id.clone())
        .collect();
    Ok(Confusion {
        matrix,
        missing_predictions,
    })
}

/// Zero whenever a marginal is empty.
pub fn mcc_binary_counts(tp: u64, tn: u64, fp: u64, fn_: u64) -> f64 {
    let (tp, tn, fp, fn_) = (tp as f64, tn as f64, fp as f64, fn_ as f64);
    let denom = (tp + fp) * (tp + fn_) * (tn + fp) * (tn + fn_);
    if denom == 0.0 {
        return 0.0;
    }
    ((tp * tn - fp * fn_) / denom.sqrt()).clamp(-1.0, 1.0)
}

/// The first label of the set is treated as positive; the value is the same
/// either way.
pub fn mcc_binary(cm: &ConfusionMatrix) -> Result<f64, EvalError> {
    if cm.k() != 2 {
        return Err(EvalError::NotBinary(cm.k()));
    }
    let c = cm.counts();
    Ok(mcc_binary_counts(c[0][0], c[1][1], c[1][0], c[0][1]))
}

/// Gorodkin's R_K statistic; zero when either marginal is concentrated on one class.
pub fn mcc_multiclass(cm: &ConfusionMatrix) -> f64 {
    let s = cm.n() as i128;
    let c = cm.correct() as i128;
    let t = cm.row_sums();
    let p = cm.col_sums();
    let pt: i128 = p.iter().zip(&t).map(|(&a, &b)| a as i128 * b as i128).sum();
    let pp: i128 = p.iter().map(|&a| a as i128 * a as i128).sum();
    let tt: i128 = t.iter().map(|&a| a as i128 * a as i128).sum();
    let left = s * s - pp;
    let right = s * s - tt;
    if left == 0 || right == 0 {
        return 0.0;
    }
    let denom = if left == right {
        left as f64
    } else {
        ((left as f64) * (right as f64)).sqrt()
    };
    ((c * s - pt) as f64 / denom).clamp(-1.0, 1.0)
}

pub fn accuracy(cm: &ConfusionMatrix) -> Result<f64, EvalError> {
    match cm.n() {
        0 => Err(EvalError::Empty),
        n => Ok(cm.correct() as f64 / n as f64),
    }
}

/// Share of gold `class` documents predicted as `class`.
pub fn per_class_accuracy(cm: &ConfusionMatrix, class: &str) -> Result<f64, EvalError> {
    let i = cm.index("", class)?;
    let row: u64 = cm.counts[i].iter().sum();
    if row == 0 {
        return Err(EvalError::EmptyClass(class.to_string()));
    }
    Ok(cm.counts[i][i] as f64 / row as f64)
}

/// Kappa between the row and column labelings of `cm`.
pub(crate) fn kappa_matrix(cm: &ConfusionMatrix) -> Result<f64, EvalError> {
    let n = cm.n() as u128;
    if n == 0 {
        return Err(EvalError::Empty);
    }
    let agree = cm.correct() as u128;
    let chance: u128 = cm
        .row_sums()
        .iter()
        .zip(cm.col_sums())
        .map(|(&r, c)| r as u128 * c as u128)
        .sum();
    // (p_o - p_e) / (1 - p_e), scaled by n^2
    if chance == n * n {
        return Ok(if agree == n { 1.0 } else { 0.0 });
    }
    let num = (n * agree) as i128 - chance as i128;
    Ok(num as f64 / (n * n - chance) as f64)
}

/// Cohen's kappa between two labelings of the same documents.
pub fn cohens_kappa(
    a: &BTreeMap<String, Label>,
    b: &BTreeMap<String, Label>,
    label_set: &LabelSet,
) -> Result<f64, EvalError> {
    kappa_matrix(&paired_matrix(a, b, label_set)?)
}

/// Cross-tabulates two labelings keyed by document id; `a` gives the rows.
pub(crate) fn paired_matrix(
    a: &BTreeMap<String, Label>,
    b: &BTreeMap<String, Label>,
    label_set: &LabelSet,
) -> Result<ConfusionMatrix, EvalError> {
    let only_a: Vec<String> = a.keys().filter(|k| !b.contains_key(*k)).cloned().collect();
    let only_b: Vec<String> = b.keys().filter(|k| !a.contains_key(*k)).cloned().collect();
    if !only_a.is_empty() || !only_b.is_empty() {
        return Err(EvalError::IdMismatch { only_a, only_b });
    }
    ConfusionMatrix::from_pairs(
        label_set.clone(),
        a.iter().map(|(id, la)| (id.as_str(), la.as_str(), b[id].as_str())),
    )
}

/// `exp(x_i / t) / sum_j exp(x_j / t)`. At `t = 0` the mass is split evenly
/// among the maximal logits.
pub fn softmax_temperature(logits: &[f64], t: f64) -> Result<Vec<f64>, EvalError> {
    if logits.is_empty() {
        return Err(EvalError::InvalidArgument("softmax of an empty vector".into()));
    }
    if logits.iter().any(|x| !x.is_finite()) {
        return Err(EvalError::InvalidArgument("logits must be finite".into()));
    }
    if t.is_nan() || t < 0.0 || t.is_infinite() {
        return Err(EvalError::InvalidArgument(format!(
            "temperature must be a finite non-negative number, got {t}"
        )));
    }
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if t == 0.0 {
        let ties = logits.iter().filter(|&&x| x == max).count() as f64;
        return Ok(logits
            .iter()
            .map(|&x| if x == max { 1.0 / ties } else { 0.0 })
            .collect());
    }
    // subtracting the max before dividing keeps every exponent <= 0
    let exps: Vec<f64> = logits.iter().map(|&x| ((x - max) / t).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / total).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn stance() -> LabelSet {
        LabelSet::new("stance", ["support", "oppose", "neutral"]).unwrap()
    }

    fn binary() -> LabelSet {
        LabelSet::new("bin", ["pos", "neg"]).unwrap()
    }

    fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
        let n = x.len() as f64;
        let mx = x.iter().sum::<f64>() / n;
        let my = y.iter().sum::<f64>() / n;
        let cov: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
        let vx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
        let vy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
        (vx > 0.0 && vy > 0.0).then(|| cov / (vx * vy).sqrt())
    }

    fn labeling(pairs: &[(&str, &str)]) -> BTreeMap<String, Label> {
        pairs.iter().map(|(i, l)| (i.to_string(), Label::from(*l))).collect()
    }

    #[test]
    fn identical_labelings_are_diagonal() {
        let gold = GoldLabels::new(labeling(&[("a", "support"), ("b", "oppose"), ("c", "neutral"), ("d", "support")]));
        let preds: Vec<Prediction> = gold
            .iter()
            .map(|(id, l)| Prediction {
                document_id: id.clone(),
                label: l.clone(),
                per_hypothesis: vec![],
                hypothesis_set_id: "s".into(),
                backend_id: "b".into(),
                model_id: "m".into(),
                prompt_hash: None,
            })
            .collect();
        let c = confusion(&gold, &preds, &stance()).unwrap();
        assert_eq!(c.matrix.n(), 4);
        assert_eq!(c.matrix.correct(), 4);
        assert_eq!(mcc_multiclass(&c.matrix), 1.0);
        assert!(c.missing_predictions.is_empty());

        let c = confusion(&gold, &preds[..3], &stance()).unwrap();
        assert_eq!(c.missing_predictions, ["d"]);

        let mut stray = preds[0].clone();
        stray.document_id = "zzz".into();
        assert_eq!(confusion(&gold, &[stray], &stance()), Err(EvalError::MissingGold("zzz".into())));
    }

    fn built_45_40_5_10() -> (Vec<f64>, Vec<f64>, ConfusionMatrix) {
        let mut gold = Vec::new();
        let mut pred = Vec::new();
        for (g, p, n) in [(1.0, 1.0, 45), (0.0, 0.0, 40), (0.0, 1.0, 5), (1.0, 0.0, 10)] {
            for _ in 0..n {
                gold.push(g);
                pred.push(p);
            }
        }
        let ids: Vec<String> = (0..gold.len()).map(|i| i.to_string()).collect();
        let name = |v: f64| if v == 1.0 { "pos" } else { "neg" };
        let cm = ConfusionMatrix::from_pairs(
            binary(),
            ids.iter().enumerate().map(|(i, id)| (id.as_str(), name(gold[i]), name(pred[i]))),
        )
        .unwrap();
        (gold, pred, cm)
    }

    #[test]
    fn constructed_binary_cells_and_mcc() {
        let (gold, pred, cm) = built_45_40_5_10();
        assert_eq!(cm.get("pos", "pos"), Some(45));
        assert_eq!(cm.get("neg", "neg"), Some(40));
        assert_eq!(cm.get("neg", "pos"), Some(5));
        assert_eq!(cm.get("pos", "neg"), Some(10));
        let mcc = mcc_binary(&cm).unwrap();
        assert!((mcc - pearson(&gold, &pred).unwrap()).abs() < 1e-12);
        assert!((mcc - 0.7035).abs() < 5e-5, "{mcc}");
        assert!((mcc_multiclass(&cm) - mcc).abs() < 1e-12);
    }

    #[test]
    fn mcc_degenerate_is_zero() {
        assert_eq!(mcc_binary_counts(50, 0, 50, 0), 0.0);
        let cm = ConfusionMatrix::from_counts(stance(), vec![vec![5, 0, 0], vec![3, 0, 0], vec![2, 0, 0]]).unwrap();
        assert_eq!(mcc_multiclass(&cm), 0.0);
        assert!(mcc_binary(&cm).is_err());
    }

    #[test]
    fn kappa_worked_example() {
        let a = labeling(&[("1", "support"), ("2", "support"), ("3", "oppose"), ("4", "oppose"), ("5", "neutral"), ("6", "neutral")]);
        let b = labeling(&[("1", "support"), ("2", "support"), ("3", "oppose"), ("4", "oppose"), ("5", "neutral"), ("6", "oppose")]);
        assert_eq!(cohens_kappa(&a, &b, &stance()).unwrap(), 0.75);
        assert_eq!(cohens_kappa(&b, &a, &stance()).unwrap(), 0.75);
        assert_eq!(cohens_kappa(&a, &a, &stance()).unwrap(), 1.0);
        let mut c = b.clone();
        c.remove("6");
        assert!(matches!(cohens_kappa(&a, &c, &stance()), Err(EvalError::IdMismatch { .. })));
    }

    #[test]
    fn kappa_single_class_agreement() {
        let a = labeling(&[("1", "support"), ("2", "support")]);
        assert_eq!(cohens_kappa(&a, &a, &stance()).unwrap(), 1.0);
    }

    #[test]
    fn per_class_support_row() {
        let cm = ConfusionMatrix::from_counts(stance(), vec![vec![88, 7, 5], vec![3, 90, 7], vec![10, 10, 80]]).unwrap();
        assert_eq!(per_class_accuracy(&cm, "support").unwrap(), 0.88);
        let empty = ConfusionMatrix::zeros(stance());
        assert_eq!(per_class_accuracy(&empty, "oppose"), Err(EvalError::EmptyClass("oppose".into())));
        assert_eq!(accuracy(&cm).unwrap(), 258.0 / 300.0);
    }

    #[test]
    fn softmax_examples() {
        let third = softmax_temperature(&[1.0, 1.0, 1.0], 0.3).unwrap();
        assert!(third.iter().all(|p| (p - 1.0 / 3.0).abs() < 1e-15));
        let p = softmax_temperature(&[2.0, 1.0], 1.0).unwrap();
        let reference = 1.0 / (1.0 + (-1.0f64).exp());
        assert!((p[0] - reference).abs() < 1e-15);
        assert!((p[0] - 0.7311).abs() < 1e-4 && (p[1] - 0.2689).abs() < 1e-4);
        let hot = softmax_temperature(&[2.0, 1.0], 1e6).unwrap();
        assert!((hot[0] - 0.5).abs() < 1e-6 && (hot[1] - 0.5).abs() < 1e-6);
        assert_eq!(softmax_temperature(&[2.0, 1.0], 0.0).unwrap(), [1.0, 0.0]);
        assert_eq!(softmax_temperature(&[3.0, 1.0, 3.0], 0.0).unwrap(), [0.5, 0.0, 0.5]);
        assert!(softmax_temperature(&[1.0], -1.0).is_err());
        assert!(softmax_temperature(&[], 1.0).is_err());
    }

    #[test]
    fn uniform_random_predictions_have_small_mcc() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let names = ["support", "oppose", "neutral"];
        let ids: Vec<String> = (0..10_000).map(|i| i.to_string()).collect();
        let cm = ConfusionMatrix::from_pairs(
            stance(),
            ids.iter()
                .map(|id| (id.as_str(), names[rng.gen_range(0..3)], names[rng.gen_range(0..3)])),
        )
        .unwrap();
        assert!(mcc_multiclass(&cm).abs() < 0.05);
    }

    proptest! {
        #[test]
        fn binary_mcc_is_pearson(pairs in proptest::collection::vec((any::<bool>(), any::<bool>()), 2..60)) {
            let x: Vec<f64> = pairs.iter().map(|p| p.0 as u8 as f64).collect();
            let y: Vec<f64> = pairs.iter().map(|p| p.1 as u8 as f64).collect();
            let count = |g: bool, p: bool| pairs.iter().filter(|q| **q == (g, p)).count() as u64;
            let mcc = mcc_binary_counts(count(true, true), count(false, false), count(false, true), count(true, false));
            match pearson(&x, &y) {
                Some(r) => prop_assert!((mcc - r).abs() < 1e-9),
                None => prop_assert_eq!(mcc, 0.0),
            }
        }

        #[test]
        fn multiclass_restricted_to_two_is_binary(cells in proptest::array::uniform4(0u64..200)) {
            let cm = ConfusionMatrix::from_counts(binary(), vec![vec![cells[0], cells[1]], vec![cells[2], cells[3]]]).unwrap();
            prop_assert!((mcc_multiclass(&cm) - mcc_binary(&cm).unwrap()).abs() < 1e-12);
        }

        #[test]
        fn kappa_and_mcc_are_symmetric(labels in proptest::collection::vec((0usize..3, 0usize..3), 1..40)) {
            let names = ["support", "oppose", "neutral"];
            let a: BTreeMap<String, Label> = labels.iter().enumerate().map(|(i, l)| (i.to_string(), names[l.0].into())).collect();
            let b: BTreeMap<String, Label> = labels.iter().enumerate().map(|(i, l)| (i.to_string(), names[l.1].into())).collect();
            let ab = paired_matrix(&a, &b, &stance()).unwrap();
            let ba = paired_matrix(&b, &a, &stance()).unwrap();
            prop_assert!((mcc_multiclass(&ab) - mcc_multiclass(&ba)).abs() < 1e-12);
            prop_assert!((cohens_kappa(&a, &b, &stance()).unwrap() - cohens_kappa(&b, &a, &stance()).unwrap()).abs() < 1e-12);
            prop_assert_eq!(cohens_kappa(&a, &a, &stance()).unwrap(), 1.0);
        }

        #[test]
        fn softmax_sums_to_one_and_ignores_shifts(
            logits in proptest::collection::vec(-50.0f64..50.0, 1..10),
            t in 0.01f64..100.0,
            shift in -100.0f64..100.0,
        ) {
            let p = softmax_temperature(&logits, t).unwrap();
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            let shifted: Vec<f64> = logits.iter().map(|x| x + shift).collect();
            let q = softmax_temperature(&shifted, t).unwrap();
            for (a, b) in p.iter().zip(&q) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }
    }
}
