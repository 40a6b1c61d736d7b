//! One function per subcommand. Each computes all of its outputs in memory
//! and returns them; the caller writes them only on success.

use std::path::Path;

use serde::{Deserialize, Serialize};

use mortality_core::eval::{self, Candidate, Comparison, GridSearchResult, MetricSummary, MetricsReport, ReportRow};
use mortality_core::explain::{self, GlobalImportance};
use mortality_core::preprocess::{
    self, CleaningReport, PipelineConfig, PipelineFitState, PipelineMode,
};
use mortality_core::tabular::{self, SplitIndices, DEFAULT_MISSING_TOKENS};
use mortality_core::{gbdt, plot, BinaryTarget, Error, Forest, Result, Table};

use crate::artifact::{self, Outputs, Provenance};
use crate::config::RunConfig;

pub const MODEL_FILE: &str = "model.json";
pub const STATE_FILE: &str = "pipeline_state.json";
pub const METRICS_FILE: &str = "metrics.json";
pub const ABLATION_FILE: &str = "ablation.json";
pub const GRID_FILE: &str = "gridsearch.json";
pub const RANKING_FILE: &str = "importance_ranking.txt";
const MODEL_LABEL: &str = "GBDT";

/// The dataset after loading, with the target binarized and the shared
/// train/test split drawn.
pub struct Dataset {
    /// All input columns plus the target, every row.
    pub stripped: Table,
    /// Cleaned inputs plus the target, every row.
    pub cleaned: Table,
    pub cleaning: CleaningReport,
    pub target: BinaryTarget,
    pub split: SplitIndices,
}

impl Dataset {
    pub fn load(cfg: &RunConfig) -> Result<Self> {
        cfg.check_inputs()?;
        let schema = tabular::load_schema(&cfg.schema_path)?;
        let raw = tabular::load_table(&cfg.data_path, &schema, &DEFAULT_MISSING_TOKENS)?;
        let target = tabular::binarize_target(&raw, &cfg.target_column)?;
        let stripped = preprocess::strip_non_inputs(&raw, &cfg.target_column)?;
        let (cleaned, cleaning) = preprocess::clean(&raw, &cfg.target_column)?;
        let split = tabular::stratified_split(&target, cfg.test_fraction, cfg.seed)?;
        Ok(Self { stripped, cleaned, cleaning, target, split })
    }

    /// The table a pipeline of this mode starts from.
    pub fn table_for(&self, mode: PipelineMode) -> &Table {
        match mode {
            PipelineMode::Preprocessed => &self.cleaned,
            PipelineMode::Raw => &self.stripped,
        }
    }
}

fn provenance(cfg: &RunConfig) -> Provenance {
    Provenance { seed: cfg.seed, config_hash: cfg.hash() }
}

fn table_bytes(table: &Table) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    tabular::write_table(table, &mut buf)?;
    Ok(buf)
}

fn text(prov: &Provenance, body: &str) -> String {
    prov.text_header() + body
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CleaningArtifact {
    /// Whether the threshold drops were applied to the written tables.
    pub applied: bool,
    pub mode: PipelineMode,
    pub report: CleaningReport,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplitArtifact {
    pub train_rows: Vec<usize>,
    pub test_rows: Vec<usize>,
    pub test_fraction: f64,
    pub train_class_counts: [usize; 2],
    pub test_class_counts: [usize; 2],
}

struct Fitted {
    model: Forest,
    state: PipelineFitState,
    fit_rows: usize,
    fit_class_counts: [usize; 2],
    train_metrics: MetricsReport,
}

fn fit_on_train(cfg: &RunConfig, data: &Dataset) -> Result<Fitted> {
    let table = data.table_for(cfg.pipeline.mode).select_rows(&data.split.train);
    let target = data.target.select(&data.split.train);
    let fitted = preprocess::fit_transform(&table, &target, &cfg.pipeline)?;
    let mut model = gbdt::fit(&fitted.matrix, &fitted.target, &cfg.gbdt)?;
    model.config_hash = Some(cfg.hash());
    let predictions = gbdt::predict_labels(&model, &fitted.matrix)?;
    let train_metrics = eval::metrics(&predictions, &fitted.target)?;
    Ok(Fitted {
        fit_rows: fitted.matrix.n_rows,
        fit_class_counts: fitted.target.class_counts(),
        model,
        state: fitted.state,
        train_metrics,
    })
}

pub fn prepare(cfg: &RunConfig) -> Result<Outputs> {
    let data = Dataset::load(cfg)?;
    let prov = provenance(cfg);
    let table = data.table_for(cfg.pipeline.mode);
    let train_target = data.target.select(&data.split.train);
    let train = table.select_rows(&data.split.train);
    let fitted = preprocess::fit_transform(&train, &train_target, &cfg.pipeline)?;

    let mut out = Outputs::default();
    out.add("train.csv", table_bytes(&train)?);
    out.add("test.csv", table_bytes(&table.select_rows(&data.split.test))?);
    out.add("columns.schema", tabular::format_schema(table.schema()));
    out.add(
        "cleaning_report.json",
        artifact::to_json(
            "cleaning_report",
            &prov,
            &CleaningArtifact {
                applied: cfg.pipeline.mode == PipelineMode::Preprocessed,
                mode: cfg.pipeline.mode,
                report: data.cleaning.clone(),
            },
        )?,
    );
    out.add(
        "split.json",
        artifact::to_json(
            "split",
            &prov,
            &SplitArtifact {
                train_class_counts: train_target.class_counts(),
                test_class_counts: data.target.select(&data.split.test).class_counts(),
                train_rows: data.split.train.clone(),
                test_rows: data.split.test.clone(),
                test_fraction: data.split.test_fraction,
            },
        )?,
    );
    out.add(STATE_FILE, artifact::to_json("pipeline_state", &prov, &fitted.state)?);
    Ok(out)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainSummary {
    pub mode: PipelineMode,
    pub train_rows: usize,
    /// Rows the model saw, after undersampling.
    pub fit_rows: usize,
    pub fit_class_counts: [usize; 2],
    pub n_trees: usize,
    pub feature_names: Vec<String>,
    pub train_metrics: MetricsReport,
}

pub fn train(cfg: &RunConfig) -> Result<Outputs> {
    let data = Dataset::load(cfg)?;
    let prov = provenance(cfg);
    let fitted = fit_on_train(cfg, &data)?;
    let summary = TrainSummary {
        mode: cfg.pipeline.mode,
        train_rows: data.split.train.len(),
        fit_rows: fitted.fit_rows,
        fit_class_counts: fitted.fit_class_counts,
        n_trees: fitted.model.trees.len(),
        feature_names: fitted.model.feature_names.clone(),
        train_metrics: fitted.train_metrics,
    };
    let mut out = Outputs::default();
    out.add(MODEL_FILE, fitted.model.to_json()? + "\n");
    out.add(STATE_FILE, artifact::to_json("pipeline_state", &prov, &fitted.state)?);
    out.add("train_summary.json", artifact::to_json("train_summary", &prov, &summary)?);
    Ok(out)
}

/// Loads a trained model and its pipeline state and checks they agree.
pub fn load_model(dir: &Path) -> Result<(Forest, PipelineFitState)> {
    let model_path = dir.join(MODEL_FILE);
    if !model_path.is_file() {
        return Err(Error::Input(format!("{} not found; run `train` first", model_path.display())));
    }
    let model = Forest::load(&model_path)?;
    let envelope = artifact::read_json::<serde_json::Value>(&dir.join(STATE_FILE), "pipeline_state")?;
    let state = PipelineFitState::from_json(&envelope.body.to_string())?;
    if state.feature_names() != model.feature_names {
        return Err(Error::Schema(format!(
            "model in {} was trained on different features than its pipeline state",
            dir.display()
        )));
    }
    Ok((model, state))
}

fn warn_if_foreign(model: &Forest, cfg: &RunConfig) {
    if model.config_hash.as_deref() != Some(cfg.hash().as_str()) {
        log::warn!("model was trained under a different configuration; the test split may overlap its training rows");
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvaluationArtifact {
    pub mode: PipelineMode,
    pub test_rows: usize,
    pub metrics: MetricsReport,
}

pub fn evaluate(cfg: &RunConfig, model_dir: &Path) -> Result<Outputs> {
    let (model, state) = load_model(model_dir)?;
    warn_if_foreign(&model, cfg);
    let data = Dataset::load(cfg)?;
    let prov = provenance(cfg);
    let features = preprocess::transform(&data.stripped.select_rows(&data.split.test), &state)?;
    let predictions = gbdt::predict_labels(&model, &features)?;
    let metrics = eval::metrics(&predictions, &data.target.select(&data.split.test))?;
    let row = ReportRow {
        model: MODEL_LABEL.into(),
        pipeline: state.mode.number(),
        metrics: summary_of(&metrics),
    };
    let body = EvaluationArtifact { mode: state.mode, test_rows: features.n_rows, metrics };
    let mut out = Outputs::default();
    out.add(METRICS_FILE, artifact::to_json("evaluation", &prov, &body)?);
    out.add("metrics.txt", text(&prov, &eval::format_table(&[row])));
    Ok(out)
}

fn summary_of(m: &MetricsReport) -> MetricSummary {
    MetricSummary {
        weighted_f1: m.weighted_f1,
        weighted_precision: m.weighted_precision,
        weighted_recall: m.weighted_recall,
        accuracy: m.accuracy,
    }
}

/// Config file fragment selecting the winning candidate.
fn best_ini(cfg: &RunConfig, best: &Candidate) -> String {
    let mut chosen = cfg.clone();
    chosen.gbdt = best.params.clone();
    chosen.pipeline = best.pipeline.clone();
    chosen.to_ini()
}

pub fn gridsearch(cfg: &RunConfig) -> Result<Outputs> {
    let data = Dataset::load(cfg)?;
    let prov = provenance(cfg);
    let table = data.table_for(cfg.pipeline.mode).select_rows(&data.split.train);
    let target = data.target.select(&data.split.train);
    let grid = eval::default_grid(&cfg.gbdt, &cfg.pipeline, cfg.cv_folds);
    let result = eval::grid_search(&table, &target, &grid, cfg.seed)?;

    let mut body = format!(
        "{:>4}  {:>3}  {:>7}  {:>13}  {:>10}  {:>16}  {:>8}  {:>8}\n",
        "rank", "k", "n_trees", "learning_rate", "max_leaves", "min_samples_leaf", "wF1", "sd"
    );
    let mut order: Vec<usize> = (0..result.results.len()).collect();
    order.sort_by(|&a, &b| {
        let s = |i: usize| result.results[i].score().unwrap_or(f64::NEG_INFINITY);
        s(b).total_cmp(&s(a)).then(a.cmp(&b))
    });
    for (rank, &i) in order.iter().enumerate() {
        let r = &result.results[i];
        let p = &r.candidate.params;
        let (score, sd) = match &r.cv {
            Some(cv) => (format!("{:.4}", cv.mean.weighted_f1), format!("{:.4}", cv.std.weighted_f1)),
            None => ("failed".into(), "-".into()),
        };
        body.push_str(&format!(
            "{:>4}  {:>3}  {:>7}  {:>13}  {:>10}  {:>16}  {:>8}  {:>8}\n",
            rank + 1,
            r.candidate.pipeline.k,
            p.n_trees,
            p.learning_rate,
            p.max_leaves,
            p.min_samples_leaf,
            score,
            sd
        ));
    }
    body.push_str(&format!(
        "\nbest: candidate {} with mean wF1 {:.4} over {} folds (partition {})\n",
        result.best_index, result.best_score, cfg.cv_folds, result.partition_hash
    ));

    let mut out = Outputs::default();
    out.add(GRID_FILE, artifact::to_json("gridsearch", &prov, &result)?);
    out.add("gridsearch.txt", text(&prov, &body));
    out.add("best.ini", text(&prov, &best_ini(cfg, &result.best)));
    Ok(out)
}

fn label(mode: PipelineMode) -> String {
    format!("{MODEL_LABEL} (pipeline {})", mode.number())
}

pub fn ablate(cfg: &RunConfig, modes: [PipelineMode; 2]) -> Result<Outputs> {
    let data = Dataset::load(cfg)?;
    let prov = provenance(cfg);
    let candidates = modes.map(|mode| Candidate {
        params: cfg.gbdt.clone(),
        pipeline: PipelineConfig { mode, ..cfg.pipeline.clone() },
    });
    let labels = modes.map(label);
    let comparison = eval::compare(
        &data.target,
        (&labels[0], data.table_for(modes[0]), &candidates[0]),
        (&labels[1], data.table_for(modes[1]), &candidates[1]),
        cfg.cv_folds,
        cfg.seed,
    )?;
    let mut body = comparison.to_text();
    body.push_str("\nper-fold weighted F1\n");
    body.push_str(&format!("{:>4}  {:>10}  {:>10}\n", "fold", "first", "second"));
    let (a, b) = (comparison.runs[0].cv.fold_f1(), comparison.runs[1].cv.fold_f1());
    for (i, (x, y)) in a.iter().zip(&b).enumerate() {
        body.push_str(&format!("{:>4}  {:>10.4}  {:>10.4}\n", i, x, y));
    }
    let mut out = Outputs::default();
    out.add(ABLATION_FILE, artifact::to_json("ablation", &prov, &comparison)?);
    out.add("ablation.txt", text(&prov, &body));
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum RowSet {
    Train,
    Test,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ShapArtifact {
    pub rows: String,
    pub base_value: f64,
    pub feature_names: Vec<String>,
    pub values: Vec<Vec<f64>>,
    pub importance: GlobalImportance,
}

pub fn explain(cfg: &RunConfig, model_dir: &Path, rows: RowSet, max_display: usize) -> Result<Outputs> {
    let (model, state) = load_model(model_dir)?;
    warn_if_foreign(&model, cfg);
    let data = Dataset::load(cfg)?;
    let prov = provenance(cfg);
    let (which, indices) = match rows {
        RowSet::Test => ("test", &data.split.test),
        RowSet::Train => ("train", &data.split.train),
    };
    let features = preprocess::transform(&data.stripped.select_rows(indices), &state)?;
    let shap = explain::tree_shap(&model, &features)?;
    let importance = explain::global_importance(&shap);
    let svg = plot::beeswarm_svg(&shap, &features, &importance, max_display)?;
    let svg = svg.replacen(
        '\n',
        &format!(
            "\n<!-- format_version={} seed={} config_hash={} -->\n",
            preprocess::FORMAT_VERSION,
            prov.seed,
            prov.config_hash
        ),
        1,
    );
    let mut csv = Vec::new();
    shap.write_csv(&mut csv)?;
    let body = ShapArtifact {
        rows: which.into(),
        base_value: shap.base_value,
        feature_names: shap.feature_names.clone(),
        values: shap.values.clone(),
        importance: importance.clone(),
    };
    let mut out = Outputs::default();
    out.add("shap_values.json", artifact::to_json("shap_values", &prov, &body)?);
    out.add("shap_values.csv", csv);
    out.add(RANKING_FILE, text(&prov, &importance.to_text()));
    out.add("beeswarm.svg", svg);
    Ok(out)
}

/// Collects whatever evaluation, ablation, search and explanation results
/// exist in `dir` into one plain-text report.
pub fn report(cfg: &RunConfig, dir: &Path) -> Result<Outputs> {
    let prov = provenance(cfg);
    let mut sections = Vec::new();
    let metrics_path = dir.join(METRICS_FILE);
    if metrics_path.is_file() {
        let e = artifact::read_json::<EvaluationArtifact>(&metrics_path, "evaluation")?;
        let row = ReportRow {
            model: MODEL_LABEL.into(),
            pipeline: e.body.mode.number(),
            metrics: summary_of(&e.body.metrics),
        };
        sections.push(format!(
            "Held-out test set ({} rows, seed {})\n\n{}",
            e.body.test_rows,
            e.seed,
            eval::format_table(&[row])
        ));
    }
    let ablation_path = dir.join(ABLATION_FILE);
    if ablation_path.is_file() {
        let a = artifact::read_json::<Comparison>(&ablation_path, "ablation")?;
        sections.push(format!("Pipeline comparison, {}-fold cross-validation\n\n{}", a.body.k, a.body.to_text()));
    }
    let grid_path = dir.join(GRID_FILE);
    if grid_path.is_file() {
        let g = artifact::read_json::<GridSearchResult>(&grid_path, "gridsearch")?;
        let p = &g.body.best.params;
        sections.push(format!(
            "Grid search: {} candidates, best mean wF1 {:.4}\n\nk = {}, n_trees = {}, learning_rate = {}, max_leaves = {}, min_samples_leaf = {}\n",
            g.body.results.len(),
            g.body.best_score,
            g.body.best.pipeline.k,
            p.n_trees,
            p.learning_rate,
            p.max_leaves,
            p.min_samples_leaf
        ));
    }
    let ranking_path = dir.join(RANKING_FILE);
    if ranking_path.is_file() {
        let ranking = std::fs::read_to_string(&ranking_path)?;
        let body: String = ranking
            .lines()
            .filter(|l| !l.starts_with('#'))
            .take(21)
            .map(|l| format!("{l}\n"))
            .collect();
        sections.push(format!("Global feature importance (top 20)\n\n{body}"));
    }
    if sections.is_empty() {
        return Err(Error::Input(format!(
            "no results in {}; run evaluate, ablate, gridsearch or explain first",
            dir.display()
        )));
    }
    let mut out = Outputs::default();
    out.add("report.txt", text(&prov, &sections.join("\n")));
    Ok(out)
}
