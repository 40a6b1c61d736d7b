//! Weighted classification metrics, stratified k-fold cross-validation,
//! grid search on weighted F1, and the paired pipeline comparison.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gbdt::{self, GbdtParams};
use crate::preprocess::{self, PipelineConfig, PipelineMode};
use crate::rng;
use crate::stats::{paired_t_test, TTestResult};
use crate::tabular::{BinaryTarget, Table};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
}

impl ConfusionMatrix {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub weighted_precision: f64,
    pub weighted_recall: f64,
    pub weighted_f1: f64,
    /// Indexed by class label (0 = alive, 1 = deceased).
    pub per_class: [ClassMetrics; 2],
    pub confusion: ConfusionMatrix,
    /// Some class had no predicted rows; its precision was reported as 0.
    pub undefined_precision: bool,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn metrics(predictions: &[u8], truth: &BinaryTarget) -> Result<MetricsReport> {
    if predictions.len() != truth.len() {
        return Err(Error::Input(format!(
            "{} predictions for {} labels",
            predictions.len(),
            truth.len()
        )));
    }
    if predictions.is_empty() {
        return Err(Error::Input("no predictions to score".into()));
    }
    let mut cm = ConfusionMatrix { tp: 0, fp: 0, fn_: 0, tn: 0 };
    for (&p, &y) in predictions.iter().zip(&truth.values) {
        match (p == 1, y == 1) {
            (true, true) => cm.tp += 1,
            (true, false) => cm.fp += 1,
            (false, true) => cm.fn_ += 1,
            (false, false) => cm.tn += 1,
        }
    }
    let n = cm.total();
    // (hits, predicted, actual) per class
    let counts = [(cm.tn, cm.tn + cm.fn_, cm.tn + cm.fp), (cm.tp, cm.tp + cm.fp, cm.tp + cm.fn_)];
    let per_class = counts.map(|(hit, predicted, actual)| {
        let precision = ratio(hit, predicted);
        let recall = ratio(hit, actual);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        ClassMetrics { precision, recall, f1, support: actual }
    });
    let weighted = |f: fn(&ClassMetrics) -> f64| {
        per_class.iter().map(|c| c.support as f64 * f(c)).sum::<f64>() / n as f64
    };
    let correct = cm.tp + cm.tn;
    Ok(MetricsReport {
        accuracy: ratio(correct, n),
        weighted_precision: weighted(|c| c.precision),
        // support_c * recall_c is the hit count of class c, so the weighted
        // recall is exactly the share of correct predictions.
        weighted_recall: ratio(correct, n),
        weighted_f1: weighted(|c| c.f1),
        per_class,
        confusion: cm,
        undefined_precision: counts.iter().any(|&(_, predicted, _)| predicted == 0),
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPartition {
    pub k: usize,
    pub seed: u64,
    /// Fold index of every row.
    pub assignment: Vec<usize>,
}

impl FoldPartition {
    pub fn folds(&self) -> Vec<Vec<usize>> {
        let mut folds = vec![Vec::new(); self.k];
        for (row, &f) in self.assignment.iter().enumerate() {
            folds[f].push(row);
        }
        folds
    }

    /// Rows outside `fold`, ascending.
    pub fn training_rows(&self, fold: usize) -> Vec<usize> {
        (0..self.assignment.len())
            .filter(|&r| self.assignment[r] != fold)
            .collect()
    }

    /// FNV-1a of the assignment, hex encoded.
    pub fn hash(&self) -> String {
        let bytes: Vec<u8> = self
            .assignment
            .iter()
            .flat_map(|&f| (f as u32).to_le_bytes())
            .collect();
        format!("{:016x}", rng::fnv1a(&bytes))
    }
}

/// Shuffles each class with the `"folds"` substream, then deals the
/// concatenated classes round-robin so fold sizes and per-class counts
/// differ by at most one.
pub fn stratified_kfold(target: &BinaryTarget, k: usize, seed: u64) -> Result<FoldPartition> {
    if k < 2 {
        return Err(Error::Parameter(format!("k = {k}; need at least 2 folds")));
    }
    let counts = target.class_counts();
    if counts.iter().any(|&c| c < k) {
        return Err(Error::Stratification(format!(
            "class sizes {counts:?} are smaller than k = {k}"
        )));
    }
    let mut rng = rng::substream(seed, "folds");
    let mut assignment = vec![0; target.len()];
    let mut position = 0;
    for mut rows in target.class_rows() {
        rng::shuffle(&mut rows, &mut rng);
        for r in rows {
            assignment[r] = position % k;
            position += 1;
        }
    }
    Ok(FoldPartition { k, seed, assignment })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub params: GbdtParams,
    pub pipeline: PipelineConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub weighted_f1: f64,
    pub weighted_precision: f64,
    pub weighted_recall: f64,
    pub accuracy: f64,
}

impl MetricSummary {
    fn of(m: &MetricsReport) -> Self {
        Self {
            weighted_f1: m.weighted_f1,
            weighted_precision: m.weighted_precision,
            weighted_recall: m.weighted_recall,
            accuracy: m.accuracy,
        }
    }

    fn map2(a: &[Self], f: impl Fn(&[f64]) -> f64) -> Self {
        let col = |g: fn(&Self) -> f64| f(&a.iter().map(g).collect::<Vec<_>>());
        Self {
            weighted_f1: col(|s| s.weighted_f1),
            weighted_precision: col(|s| s.weighted_precision),
            weighted_recall: col(|s| s.weighted_recall),
            accuracy: col(|s| s.accuracy),
        }
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn sample_sd(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v);
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    pub fold_metrics: Vec<MetricsReport>,
    pub mean: MetricSummary,
    pub std: MetricSummary,
    pub k: usize,
    pub seed: u64,
    pub partition_hash: String,
}

impl CvResult {
    pub fn fold_f1(&self) -> Vec<f64> {
        self.fold_metrics.iter().map(|m| m.weighted_f1).collect()
    }
}

/// Fits the pipeline and the model on `train_rows` and scores `eval_rows`.
pub fn fit_and_score(
    table: &Table,
    target: &BinaryTarget,
    train_rows: &[usize],
    eval_rows: &[usize],
    candidate: &Candidate,
) -> Result<MetricsReport> {
    let train = table.select_rows(train_rows);
    let fitted = preprocess::fit_transform(&train, &target.select(train_rows), &candidate.pipeline)?;
    let model = gbdt::fit(&fitted.matrix, &fitted.target, &candidate.params)?;
    let held_out = preprocess::transform(&table.select_rows(eval_rows), &fitted.state)?;
    let predictions = gbdt::predict_labels(&model, &held_out)?;
    metrics(&predictions, &target.select(eval_rows))
}

/// Cross-validates one candidate; preprocessing is refit inside each fold
/// on that fold's training part only.
pub fn cross_validate(
    table: &Table,
    target: &BinaryTarget,
    candidate: &Candidate,
    partition: &FoldPartition,
) -> Result<CvResult> {
    if partition.assignment.len() != table.n_rows() || target.len() != table.n_rows() {
        return Err(Error::Input("partition, table and target disagree in length".into()));
    }
    let folds = partition.folds();
    let fold_metrics = folds
        .par_iter()
        .enumerate()
        .map(|(f, rows)| fit_and_score(table, target, &partition.training_rows(f), rows, candidate))
        .collect::<Result<Vec<_>>>()?;
    let summaries: Vec<MetricSummary> = fold_metrics.iter().map(MetricSummary::of).collect();
    Ok(CvResult {
        mean: MetricSummary::map2(&summaries, mean),
        std: MetricSummary::map2(&summaries, sample_sd),
        fold_metrics,
        k: partition.k,
        seed: partition.seed,
        partition_hash: partition.hash(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub candidates: Vec<Candidate>,
    pub cv_folds: usize,
}

pub const DEFAULT_K_VALUES: [usize; 3] = [15, 35, 50];

/// Default search space: n_trees × learning_rate × max_leaves ×
/// min_samples_leaf, crossed with k ∈ {15, 35, 50} for the preprocessed
/// pipeline.
pub fn default_grid(base: &GbdtParams, pipeline: &PipelineConfig, cv_folds: usize) -> GridSpec {
    let ks: Vec<usize> = match pipeline.mode {
        PipelineMode::Preprocessed => DEFAULT_K_VALUES.to_vec(),
        PipelineMode::Raw => vec![pipeline.k],
    };
    let mut candidates = Vec::new();
    for &k in &ks {
        for n_trees in [100, 300] {
            for learning_rate in [0.05, 0.1] {
                for max_leaves in [15, 31, 63] {
                    for min_samples_leaf in [5, 20] {
                        candidates.push(Candidate {
                            params: GbdtParams {
                                n_trees,
                                learning_rate,
                                max_leaves,
                                min_samples_leaf,
                                ..base.clone()
                            },
                            pipeline: PipelineConfig { k, ..pipeline.clone() },
                        });
                    }
                }
            }
        }
    }
    GridSpec { candidates, cv_folds }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateResult {
    pub candidate: Candidate,
    pub cv: Option<CvResult>,
    pub error: Option<String>,
}

impl CandidateResult {
    pub fn score(&self) -> Option<f64> {
        self.cv.as_ref().map(|c| c.mean.weighted_f1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSearchResult {
    pub best_index: usize,
    pub best: Candidate,
    pub best_score: f64,
    pub results: Vec<CandidateResult>,
    pub seed: u64,
    pub partition_hash: String,
}

/// Scores every candidate by mean weighted F1 over a shared stratified
/// partition and returns the best (first on ties). Failed candidates are
/// recorded; the search fails only when all of them fail.
pub fn grid_search(table: &Table, target: &BinaryTarget, grid: &GridSpec, seed: u64) -> Result<GridSearchResult> {
    if grid.candidates.is_empty() {
        return Err(Error::Parameter("grid has no candidates".into()));
    }
    let partition = stratified_kfold(target, grid.cv_folds, seed)?;
    let results: Vec<CandidateResult> = grid
        .candidates
        .par_iter()
        .map(|c| match cross_validate(table, target, c, &partition) {
            Ok(cv) => CandidateResult { candidate: c.clone(), cv: Some(cv), error: None },
            Err(e) => CandidateResult { candidate: c.clone(), cv: None, error: Some(e.to_string()) },
        })
        .collect();
    let mut best: Option<(usize, f64)> = None;
    for (i, r) in results.iter().enumerate() {
        if let Some(s) = r.score() {
            if best.is_none_or(|(_, b)| s > b) {
                best = Some((i, s));
            }
        }
    }
    let (best_index, best_score) = best.ok_or_else(|| {
        Error::Training(format!(
            "every candidate failed; first error: {}",
            results[0].error.as_deref().unwrap_or("unknown")
        ))
    })?;
    Ok(GridSearchResult {
        best_index,
        best: results[best_index].candidate.clone(),
        best_score,
        results,
        seed,
        partition_hash: partition.hash(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineRun {
    pub label: String,
    pub candidate: Candidate,
    pub cv: CvResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub k: usize,
    pub seed: u64,
    pub partition_hash: String,
    pub partition: FoldPartition,
    pub runs: [PipelineRun; 2],
    /// Fold-wise weighted F1 of the first run against the second.
    pub t_test: TTestResult,
}

/// One side of a comparison: a label, the table it sees and its candidate.
/// The tables of both sides must hold the same rows in the same order.
pub type Arm<'a> = (&'a str, &'a Table, &'a Candidate);

/// Cross-validates two candidates on one shared partition and runs the
/// paired t-test on their fold-wise weighted F1.
pub fn compare(target: &BinaryTarget, first: Arm<'_>, second: Arm<'_>, k: usize, seed: u64) -> Result<Comparison> {
    if first.1.n_rows() != second.1.n_rows() {
        return Err(Error::Input("compared tables differ in row count".into()));
    }
    let partition = stratified_kfold(target, k, seed)?;
    let run = |(label, table, c): Arm<'_>| -> Result<PipelineRun> {
        Ok(PipelineRun {
            label: label.to_string(),
            candidate: c.clone(),
            cv: cross_validate(table, target, c, &partition)?,
        })
    };
    let a = run(first)?;
    let b = run(second)?;
    let t_test = paired_t_test(&a.cv.fold_f1(), &b.cv.fold_f1())?;
    Ok(Comparison {
        k,
        seed,
        partition_hash: partition.hash(),
        partition,
        runs: [a, b],
        t_test,
    })
}

/// One line of a results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub model: String,
    pub pipeline: u8,
    pub metrics: MetricSummary,
}

/// Aligned plain-text table: Model, Pipeline, wF1, wPrecision, wRecall, Accuracy.
pub fn format_table(rows: &[ReportRow]) -> String {
    let width = rows.iter().map(|r| r.model.len()).max().unwrap_or(5).max(5);
    let mut out = format!(
        "{:<width$}  {:>8}  {:>6}  {:>10}  {:>7}  {:>8}\n",
        "Model", "Pipeline", "wF1", "wPrecision", "wRecall", "Accuracy"
    );
    for r in rows {
        let m = &r.metrics;
        out.push_str(&format!(
            "{:<width$}  {:>8}  {:>6.3}  {:>10.3}  {:>7.3}  {:>8.3}\n",
            r.model, r.pipeline, m.weighted_f1, m.weighted_precision, m.weighted_recall, m.accuracy
        ));
    }
    out
}

impl Comparison {
    pub fn rows(&self) -> Vec<ReportRow> {
        self.runs
            .iter()
            .map(|r| ReportRow {
                model: r.label.clone(),
                pipeline: r.candidate.pipeline.mode.number(),
                metrics: r.cv.mean,
            })
            .collect()
    }

    pub fn to_text(&self) -> String {
        let mut out = format_table(&self.rows());
        out.push_str(&format!(
            "\npaired t-test on fold-wise wF1 ({} folds): t = {:.4}, df = {}, p = {:.4}{}\n",
            self.k,
            self.t_test.t_statistic,
            self.t_test.degrees_of_freedom,
            self.t_test.p_value,
            if self.t_test.zero_variance { " (zero variance)" } else { "" }
        ));
        out.push_str(&format!("seed = {}, partition = {}\n", self.seed, self.partition_hash));
        out
    }
}
