use serde::{Deserialize, Serialize};

use crate::dataset::{SensorDropSpec, TaskMode};
use crate::error::{Error, Result};
use crate::model::AblationVariant;

fn positives(labels: &[u8]) -> usize {
    labels.iter().filter(|&&l| l == 1).count()
}

/// Area under the ROC curve via the Mann-Whitney statistic with midranks.
pub fn auroc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::shape("auroc", &[scores.len()], &[labels.len()]));
    }
    let p = positives(labels);
    let n = labels.len() - p;
    if p == 0 || n == 0 {
        return Err(Error::UndefinedMetric("auroc needs both classes".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j+1 share their mean
        let mid = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += mid * order[i..=j].iter().filter(|&&k| labels[k] == 1).count() as f64;
        i = j + 1;
    }
    let u = rank_sum - (p * (p + 1)) as f64 / 2.0;
    Ok(u / (p * n) as f64)
}

/// Average precision over descending score thresholds, ties grouped.
pub fn auprc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::shape("auprc", &[scores.len()], &[labels.len()]));
    }
    let p = positives(labels);
    if p == 0 {
        return Err(Error::UndefinedMetric("auprc needs at least one positive".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let (mut tp, mut fp, mut prev_recall, mut ap) = (0usize, 0usize, 0.0, 0.0);
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        for &k in &order[i..=j] {
            if labels[k] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
        }
        let recall = tp as f64 / p as f64;
        let precision = tp as f64 / (tp + fp) as f64;
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
        i = j + 1;
    }
    Ok(ap)
}

/// Provenance attached to a report.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub variant: Option<AblationVariant>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub drop: Option<SensorDropSpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epochs: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub n_samples: usize,
    pub accuracy: f64,
    pub weighted_precision: f64,
    pub weighted_recall: f64,
    pub weighted_f1: f64,
    pub macro_f1: f64,
    /// Binary: positive-class AUROC. Otherwise the mean over classes that
    /// have both positives and negatives. Absent when no class qualifies.
    pub auroc: Option<f64>,
    pub auprc: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub loss: Option<f64>,
    pub per_class_precision: Vec<f64>,
    pub per_class_recall: Vec<f64>,
    pub per_class_f1: Vec<f64>,
    pub support: Vec<usize>,
    /// Rows are true classes, columns predictions (multiclass only).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub confusion: Option<Vec<Vec<usize>>>,
    #[serde(default)]
    pub meta: RunMeta,
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

/// Precision/recall/F1 from per-class indicator rows; accuracy is exact
/// match over whole rows.
fn indicator_report(pred: &[Vec<u8>], truth: &[Vec<u8>], n_classes: usize) -> MetricsReport {
    let (mut tp, mut fp, mut fneg) = (vec![0; n_classes], vec![0; n_classes], vec![0; n_classes]);
    let mut exact = 0;
    for (p, t) in pred.iter().zip(truth) {
        if p == t {
            exact += 1;
        }
        for c in 0..n_classes {
            match (p[c], t[c]) {
                (1, 1) => tp[c] += 1,
                (1, 0) => fp[c] += 1,
                (0, 1) => fneg[c] += 1,
                _ => {}
            }
        }
    }
    let support: Vec<usize> = (0..n_classes).map(|c| tp[c] + fneg[c]).collect();
    let precision: Vec<f64> = (0..n_classes).map(|c| ratio(tp[c], tp[c] + fp[c])).collect();
    let recall: Vec<f64> = (0..n_classes).map(|c| ratio(tp[c], support[c])).collect();
    let f1: Vec<f64> = (0..n_classes)
        .map(|c| {
            let d = precision[c] + recall[c];
            if d == 0.0 {
                0.0
            } else {
                2.0 * precision[c] * recall[c] / d
            }
        })
        .collect();
    let total: usize = support.iter().sum();
    let weighted = |v: &[f64]| {
        if total == 0 {
            0.0
        } else {
            v.iter().zip(&support).map(|(x, &s)| x * s as f64).sum::<f64>() / total as f64
        }
    };
    MetricsReport {
        n_samples: pred.len(),
        accuracy: ratio(exact, pred.len()),
        weighted_precision: weighted(&precision),
        weighted_recall: weighted(&recall),
        weighted_f1: weighted(&f1),
        macro_f1: f1.iter().sum::<f64>() / n_classes as f64,
        auroc: None,
        auprc: None,
        loss: None,
        per_class_precision: precision,
        per_class_recall: recall,
        per_class_f1: f1,
        support,
        confusion: None,
        meta: RunMeta::default(),
    }
}

fn one_hot(c: usize, n: usize) -> Vec<u8> {
    (0..n).map(|k| u8::from(k == c)).collect()
}

/// Multiclass report from predicted and true class indices.
pub fn classification_report(predictions: &[usize], labels: &[usize], n_classes: usize) -> Result<MetricsReport> {
    if predictions.len() != labels.len() || predictions.is_empty() {
        return Err(Error::Contract("predictions and labels must be non-empty and equally long".into()));
    }
    if predictions.iter().chain(labels).any(|&c| c >= n_classes) {
        return Err(Error::Contract(format!("class index outside 0..{n_classes}")));
    }
    let pred: Vec<Vec<u8>> = predictions.iter().map(|&c| one_hot(c, n_classes)).collect();
    let truth: Vec<Vec<u8>> = labels.iter().map(|&c| one_hot(c, n_classes)).collect();
    let mut report = indicator_report(&pred, &truth, n_classes);
    let mut confusion = vec![vec![0; n_classes]; n_classes];
    for (&p, &t) in predictions.iter().zip(labels) {
        confusion[t][p] += 1;
    }
    report.confusion = Some(confusion);
    Ok(report)
}

/// Multilabel report from 0/1 prediction and label rows.
pub fn multilabel_report(predictions: &[Vec<u8>], labels: &[Vec<u8>], n_classes: usize) -> Result<MetricsReport> {
    if predictions.len() != labels.len() || predictions.is_empty() {
        return Err(Error::Contract("predictions and labels must be non-empty and equally long".into()));
    }
    if predictions.iter().chain(labels).any(|r| r.len() != n_classes) {
        return Err(Error::Contract(format!("indicator rows must have {n_classes} entries")));
    }
    Ok(indicator_report(predictions, labels, n_classes))
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|x| (x - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Full report from raw logits and labels (as 0/1 rows), including ranking
/// metrics computed from class probabilities.
pub fn report_from_logits(logits: &[Vec<f64>], labels: &[Vec<u8>], task_mode: TaskMode) -> Result<MetricsReport> {
    let n_classes = labels.first().map_or(0, Vec::len);
    let probs: Vec<Vec<f64>> = match task_mode {
        TaskMode::Multiclass => logits.iter().map(|l| softmax(l)).collect(),
        TaskMode::Multilabel => logits.iter().map(|l| l.iter().map(|&x| logistic(x)).collect()).collect(),
    };
    let mut report = match task_mode {
        TaskMode::Multiclass => {
            let pred: Vec<usize> = logits.iter().map(|l| argmax(l)).collect();
            let truth: Vec<usize> = labels
                .iter()
                .map(|r| r.iter().position(|&b| b == 1).unwrap_or(0))
                .collect();
            classification_report(&pred, &truth, n_classes)?
        }
        TaskMode::Multilabel => {
            let pred: Vec<Vec<u8>> = probs.iter().map(|p| p.iter().map(|&x| u8::from(x >= 0.5)).collect()).collect();
            multilabel_report(&pred, labels, n_classes)?
        }
    };
    let column = |c: usize| -> (Vec<f64>, Vec<u8>) {
        (probs.iter().map(|p| p[c]).collect(), labels.iter().map(|r| r[c]).collect())
    };
    let classes: Vec<usize> = if task_mode == TaskMode::Multiclass && n_classes == 2 {
        vec![1]
    } else {
        (0..n_classes).collect()
    };
    let (mut roc, mut pr) = (Vec::new(), Vec::new());
    for c in classes {
        let (s, y) = column(c);
        if let Ok(v) = auroc(&s, &y) {
            roc.push(v);
        }
        if let Ok(v) = auprc(&s, &y) {
            pr.push(v);
        }
    }
    let mean = |v: &[f64]| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
    report.auroc = mean(&roc);
    report.auprc = mean(&pr);
    Ok(report)
}
