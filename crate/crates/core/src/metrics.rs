//! Curation metrics (precision and mean average precision at t%),
//! recognition metrics (multi-label top-1 accuracy, macro F1), and
//! confusion-matrix remapping for cross-vocabulary evaluation.

use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec::Vec;

use crate::dataset::{AlbumRecord, EventLabelDistribution};
use crate::linalg::{argmax, ranked_indices};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MetricsError {
    #[error("album has no images")]
    EmptyAlbum,
    #[error("prediction and ground-truth lists disagree in length or width")]
    LengthMismatch,
    #[error("percent must lie in (0, 100], got {0}")]
    InvalidPercent(u32),
    #[error("ground-truth importance must lie in [0, 1]")]
    GroundTruthOutOfRange,
    #[error("album is missing ground-truth importance")]
    MissingGroundTruth,
    #[error("every source class is dropped by the mapping")]
    AllDropped,
    #[error("invalid label mapping: {0}")]
    InvalidMapping(String),
    #[error("nothing to evaluate")]
    EmptyEvaluation,
}

/// One album's predicted importance scores next to its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct CurationEval {
    predicted: Vec<f64>,
    ground_truth: Vec<f64>,
}

impl CurationEval {
    pub fn new(predicted: Vec<f64>, ground_truth: Vec<f64>) -> Result<Self, MetricsError> {
        if predicted.is_empty() {
            return Err(MetricsError::EmptyAlbum);
        }
        if predicted.len() != ground_truth.len() {
            return Err(MetricsError::LengthMismatch);
        }
        if ground_truth.iter().any(|&g| !(0.0..=1.0).contains(&g)) {
            return Err(MetricsError::GroundTruthOutOfRange);
        }
        Ok(CurationEval { predicted, ground_truth })
    }

    pub fn len(&self) -> usize {
        self.predicted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.predicted.is_empty()
    }
}

/// Retrieval cutoff for an album of `n` images at `t` percent: at least one
/// image, otherwise the ceiling of t% of n.
fn cutoff(n: usize, t: u32) -> Result<usize, MetricsError> {
    if t == 0 || t > 100 {
        return Err(MetricsError::InvalidPercent(t));
    }
    Ok((n * t as usize).div_ceil(100).max(1))
}

fn top_k(scores: &[f64], k: usize) -> BTreeSet<usize> {
    ranked_indices(scores).into_iter().take(k).collect()
}

/// Fraction of the top-t% ground-truth images recovered among the top-t%
/// predicted images. Ties rank the lower image index first.
pub fn precision_at(eval: &CurationEval, t: u32) -> Result<f64, MetricsError> {
    let k = cutoff(eval.len(), t)?;
    let relevant = top_k(&eval.ground_truth, k);
    let retrieved = top_k(&eval.predicted, k);
    Ok(relevant.intersection(&retrieved).count() as f64 / k as f64)
}

/// Average precision over the predicted ranking against the top-t%
/// ground-truth set: mean of precision-at-r over the ranks r that hold a
/// relevant image, divided by the relevant-set size.
pub fn map_at(eval: &CurationEval, t: u32) -> Result<f64, MetricsError> {
    let k = cutoff(eval.len(), t)?;
    let relevant = top_k(&eval.ground_truth, k);
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (pos, idx) in ranked_indices(&eval.predicted).into_iter().enumerate() {
        if relevant.contains(&idx) {
            hits += 1;
            sum += hits as f64 / (pos + 1) as f64;
        }
    }
    Ok(sum / k as f64)
}

fn check_recognition_inputs(
    predictions: &[Vec<f64>],
    gts: &[EventLabelDistribution],
) -> Result<(), MetricsError> {
    if predictions.is_empty() {
        return Err(MetricsError::EmptyEvaluation);
    }
    if predictions.len() != gts.len() {
        return Err(MetricsError::LengthMismatch);
    }
    if predictions.iter().zip(gts).any(|(p, g)| p.is_empty() || p.len() != g.len()) {
        return Err(MetricsError::LengthMismatch);
    }
    Ok(())
}

/// Fraction of albums whose predicted argmax lies in the ground-truth label
/// support. Argmax ties resolve to the lower event index.
pub fn top1_accuracy(
    predictions: &[Vec<f64>],
    gts: &[EventLabelDistribution],
) -> Result<f64, MetricsError> {
    check_recognition_inputs(predictions, gts)?;
    let correct = predictions
        .iter()
        .zip(gts)
        .filter(|(p, g)| g.support().contains(&argmax(p)))
        .count();
    Ok(correct as f64 / predictions.len() as f64)
}

/// Macro F1 over event classes that appear in some ground-truth support.
///
/// A prediction counts for class c as: true positive when the argmax is c
/// and c is supported; false positive when the argmax is c and c is not
/// supported; false negative when c is supported but the prediction is wrong
/// outright (its argmax supported elsewhere does not penalize c).
pub fn f1_score(
    predictions: &[Vec<f64>],
    gts: &[EventLabelDistribution],
) -> Result<f64, MetricsError> {
    check_recognition_inputs(predictions, gts)?;
    let c = gts[0].len();
    let mut tp = alloc::vec![0usize; c];
    let mut fp = alloc::vec![0usize; c];
    let mut fnc = alloc::vec![0usize; c];
    let mut present = alloc::vec![false; c];

    for (p, g) in predictions.iter().zip(gts) {
        let support = g.support();
        for &s in &support {
            present[s] = true;
        }
        let top = argmax(p);
        let correct = support.contains(&top);
        if correct {
            tp[top] += 1;
        } else {
            fp[top] += 1;
            for &s in &support {
                fnc[s] += 1;
            }
        }
    }

    let mut sum = 0.0;
    let mut classes = 0usize;
    for cls in 0..c {
        if !present[cls] {
            continue;
        }
        classes += 1;
        let p_denom = tp[cls] + fp[cls];
        let r_denom = tp[cls] + fnc[cls];
        if p_denom == 0 || r_denom == 0 {
            continue;
        }
        let precision = tp[cls] as f64 / p_denom as f64;
        let recall = tp[cls] as f64 / r_denom as f64;
        if precision + recall > 0.0 {
            sum += 2.0 * precision * recall / (precision + recall);
        }
    }
    if classes == 0 {
        return Err(MetricsError::EmptyEvaluation);
    }
    Ok(sum / classes as f64)
}

/// Row = true class, column = predicted class.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(counts: Vec<Vec<u64>>) -> Result<Self, MetricsError> {
        let c = counts.len();
        if c == 0 || counts.iter().any(|row| row.len() != c) {
            return Err(MetricsError::LengthMismatch);
        }
        Ok(ConfusionMatrix { counts })
    }

    /// Tally from per-album predictions: the true class is the ground-truth
    /// argmax, restricted to single-winner use.
    pub fn from_predictions(
        predictions: &[Vec<f64>],
        gts: &[EventLabelDistribution],
    ) -> Result<Self, MetricsError> {
        check_recognition_inputs(predictions, gts)?;
        let c = gts[0].len();
        let mut counts = alloc::vec![alloc::vec![0u64; c]; c];
        for (p, g) in predictions.iter().zip(gts) {
            counts[argmax(g.probs())][argmax(p)] += 1;
        }
        Ok(ConfusionMatrix { counts })
    }

    pub fn num_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn counts(&self) -> &[Vec<u64>] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.counts.len()).map(|i| self.counts[i][i]).sum()
    }

    pub fn accuracy(&self) -> f64 {
        let total = self.total();
        if total == 0 {
            0.0
        } else {
            self.trace() as f64 / total as f64
        }
    }
}

/// Source class -> target class (or dropped), onto `target_count` classes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMapping {
    targets: Vec<Option<usize>>,
    target_count: usize,
}

impl LabelMapping {
    pub fn new(targets: Vec<Option<usize>>, target_count: usize) -> Result<Self, MetricsError> {
        if targets.iter().all(Option::is_none) {
            return Err(MetricsError::AllDropped);
        }
        if let Some(&bad) = targets.iter().flatten().find(|&&t| t >= target_count) {
            return Err(MetricsError::InvalidMapping(alloc::format!(
                "target {bad} out of range for {target_count} classes"
            )));
        }
        Ok(LabelMapping { targets, target_count })
    }

    pub fn source_count(&self) -> usize {
        self.targets.len()
    }

    pub fn target_count(&self) -> usize {
        self.target_count
    }

    pub fn target(&self, source: usize) -> Option<usize> {
        self.targets[source]
    }
}

/// Re-expresses a confusion matrix in a new vocabulary. Classes sharing a
/// target merge; dropped rows leave the evaluation; counts in dropped
/// columns move onto their row's diagonal (the loose best-case reading of
/// predictions outside the target vocabulary).
pub fn remap_confusion(
    cm: &ConfusionMatrix,
    mapping: &LabelMapping,
) -> Result<(ConfusionMatrix, f64), MetricsError> {
    if mapping.source_count() != cm.num_classes() {
        return Err(MetricsError::InvalidMapping(alloc::format!(
            "mapping covers {} classes but the matrix has {}",
            mapping.source_count(),
            cm.num_classes()
        )));
    }
    let t = mapping.target_count();
    let mut counts = alloc::vec![alloc::vec![0u64; t]; t];
    for (r, row) in cm.counts().iter().enumerate() {
        let Some(tr) = mapping.target(r) else { continue };
        for (c, &count) in row.iter().enumerate() {
            match mapping.target(c) {
                Some(tc) => counts[tr][tc] += count,
                None => counts[tr][tr] += count,
            }
        }
    }
    let remapped = ConfusionMatrix { counts };
    let accuracy = remapped.accuracy();
    Ok((remapped, accuracy))
}

/// One output cell: a metric name, an optional percent, and a value.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub metric: String,
    pub t: Option<u32>,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EvaluationReport {
    pub rows: Vec<ReportRow>,
}

impl EvaluationReport {
    pub fn new() -> Self {
        EvaluationReport { rows: Vec::new() }
    }

    pub fn push(&mut self, metric: &str, t: Option<u32>, value: f64) {
        self.rows.push(ReportRow { metric: String::from(metric), t, value });
    }

    pub fn value(&self, metric: &str, t: Option<u32>) -> Option<f64> {
        self.rows.iter().find(|r| r.metric == metric && r.t == t).map(|r| r.value)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,t,value\n");
        for row in &self.rows {
            match row.t {
                Some(t) => out.push_str(&alloc::format!("{},{},{:.6}\n", row.metric, t, row.value)),
                None => out.push_str(&alloc::format!("{},,{:.6}\n", row.metric, row.value)),
            }
        }
        out
    }
}

/// Mean MAP@t and precision@t across albums for each requested t. `scores`
/// holds one predicted importance vector per album, aligned with `albums`.
pub fn evaluate_curation(
    albums: &[&AlbumRecord],
    scores: &[Vec<f64>],
    t_list: &[u32],
) -> Result<EvaluationReport, MetricsError> {
    if albums.is_empty() || t_list.is_empty() {
        return Err(MetricsError::EmptyEvaluation);
    }
    if albums.len() != scores.len() {
        return Err(MetricsError::LengthMismatch);
    }
    let mut evals = Vec::with_capacity(albums.len());
    for (album, v) in albums.iter().zip(scores) {
        let gt = album.gt_importance.as_ref().ok_or(MetricsError::MissingGroundTruth)?;
        evals.push(CurationEval::new(v.clone(), gt.clone())?);
    }

    let mut report = EvaluationReport::new();
    let n = evals.len() as f64;
    for &t in t_list {
        let mut sum = 0.0;
        for eval in &evals {
            sum += map_at(eval, t)?;
        }
        report.push("map", Some(t), sum / n);
    }
    for &t in t_list {
        let mut sum = 0.0;
        for eval in &evals {
            sum += precision_at(eval, t)?;
        }
        report.push("precision", Some(t), sum / n);
    }
    Ok(report)
}
