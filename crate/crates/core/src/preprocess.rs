//! The preprocessed pipeline (cleaning, random undersampling, encoding,
//! imputation, min-max scaling, chi-squared top-k selection) and the raw
//! pipeline that hands the model the input columns untouched.
//!
//! Everything in [`PipelineFitState`] is computed from training rows only;
//! [`transform`] applies the stored statistics and never refits.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::tabular::{BinaryTarget, ColumnKind, ColumnValues, FeatureMatrix, Table};

pub const FORMAT_VERSION: u32 = 1;
pub const MISSING_THRESHOLD: f64 = 0.10;
pub const DOMINANCE_THRESHOLD: f64 = 0.95;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnStat {
    pub name: String,
    pub fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CleaningReport {
    pub format_version: u32,
    pub target_column: String,
    pub n_rows: usize,
    pub n_input_features: usize,
    /// Fraction of rows with at least one missing input cell.
    pub rows_with_missing_fraction: f64,
    /// Fraction of input cells that are missing.
    pub cells_missing_fraction: f64,
    pub dropped_missing: Vec<ColumnStat>,
    pub dropped_dominant: Vec<ColumnStat>,
    pub surviving_features: Vec<String>,
}

fn target_index(table: &Table, target_column: &str) -> Result<usize> {
    let col = table
        .column_index(target_column)
        .ok_or_else(|| Error::Schema(format!("unknown target column `{target_column}`")))?;
    if table.schema()[col].kind != ColumnKind::Target {
        return Err(Error::Schema(format!("`{target_column}` is not a target column")));
    }
    Ok(col)
}

/// Drops the id column and every target other than `target_column`,
/// keeping all inputs. This is the only reshaping the raw pipeline does.
pub fn strip_non_inputs(table: &Table, target_column: &str) -> Result<Table> {
    let target = target_index(table, target_column)?;
    let mut keep = table.input_columns();
    keep.push(target);
    Ok(table.select_columns(&keep))
}

fn missing_fraction(mask: &[bool]) -> f64 {
    if mask.is_empty() {
        return 0.0;
    }
    mask.iter().filter(|&&m| m).count() as f64 / mask.len() as f64
}

/// Share of non-missing cells taken by the most frequent value.
pub fn dominance_fraction(table: &Table, col: usize) -> f64 {
    let mask = table.missing_mask(col);
    let observed = mask.iter().filter(|&&m| !m).count();
    if observed == 0 {
        return 0.0;
    }
    let top = match table.column(col) {
        ColumnValues::Numbers(v) => {
            let mut counts: HashMap<u64, usize> = HashMap::new();
            for (x, _) in v.iter().zip(mask).filter(|(_, &m)| !m) {
                *counts.entry((x + 0.0).to_bits()).or_default() += 1;
            }
            counts.into_values().max().unwrap_or(0)
        }
        ColumnValues::Labels(v) => {
            let mut counts: HashMap<&str, usize> = HashMap::new();
            for (x, _) in v.iter().zip(mask).filter(|(_, &m)| !m) {
                *counts.entry(x.as_str()).or_default() += 1;
            }
            counts.into_values().max().unwrap_or(0)
        }
    };
    top as f64 / observed as f64
}

/// Removes id and non-chosen targets, then input columns with more than 10%
/// missing cells (over all rows), then input columns whose most frequent
/// value covers more than 95% of their non-missing cells.
pub fn clean(table: &Table, target_column: &str) -> Result<(Table, CleaningReport)> {
    let target = target_index(table, target_column)?;
    let inputs = table.input_columns();
    let n = table.n_rows();

    let missing_cells: usize = inputs
        .iter()
        .map(|&c| table.missing_mask(c).iter().filter(|&&m| m).count())
        .sum();
    let rows_with_missing = (0..n)
        .filter(|&r| inputs.iter().any(|&c| table.is_missing(c, r)))
        .count();
    let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };

    let mut dropped_missing = Vec::new();
    let mut dropped_dominant = Vec::new();
    let mut keep = Vec::new();
    for &c in &inputs {
        let name = table.schema()[c].name.clone();
        let miss = missing_fraction(table.missing_mask(c));
        if miss > MISSING_THRESHOLD {
            dropped_missing.push(ColumnStat { name, fraction: miss });
            continue;
        }
        let dom = dominance_fraction(table, c);
        if dom > DOMINANCE_THRESHOLD {
            dropped_dominant.push(ColumnStat { name, fraction: dom });
            continue;
        }
        keep.push(c);
    }
    let surviving_features = keep.iter().map(|&c| table.schema()[c].name.clone()).collect();
    keep.push(target);
    let report = CleaningReport {
        format_version: FORMAT_VERSION,
        target_column: target_column.to_string(),
        n_rows: n,
        n_input_features: inputs.len(),
        rows_with_missing_fraction: ratio(rows_with_missing, n),
        cells_missing_fraction: ratio(missing_cells, n * inputs.len()),
        dropped_missing,
        dropped_dominant,
        surviving_features,
    };
    Ok((table.select_columns(&keep), report))
}

/// Keeps every minority row and `floor(N_min / alpha)` majority rows drawn
/// without replacement. Returns `rows` unchanged (sorted) when the majority
/// is already that small.
pub fn random_undersample(
    rows: &[usize],
    target: &BinaryTarget,
    alpha: f64,
    seed: u64,
) -> Result<Vec<usize>> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::Parameter(format!("undersampling ratio {alpha} outside (0, 1]")));
    }
    let (pos, neg): (Vec<usize>, Vec<usize>) =
        rows.iter().partition(|&&r| target.values[r] == 1);
    let (minority, majority) = if pos.len() <= neg.len() { (pos, neg) } else { (neg, pos) };
    // The epsilon keeps e.g. 200 / 0.8 from flooring to 249.
    let keep_major = (minority.len() as f64 / alpha + 1e-9).floor() as usize;
    let mut out = if majority.len() <= keep_major {
        rows.to_vec()
    } else {
        let mut rng = rng::substream(seed, "undersample");
        let mut kept = rng::sample(&majority, keep_major, &mut rng);
        kept.extend_from_slice(&minority);
        kept
    };
    out.sort_unstable();
    Ok(out)
}

/// Chi-squared statistic of each non-negative feature against the class,
/// treating feature values as frequencies.
pub fn chi2_scores(features: &FeatureMatrix, target: &BinaryTarget) -> Result<Vec<f64>> {
    if features.n_rows != target.len() {
        return Err(Error::Input("feature rows and target length differ".into()));
    }
    let n = target.len() as f64;
    let counts = target.class_counts();
    let mut scores = Vec::with_capacity(features.n_features());
    for j in 0..features.n_features() {
        let mut observed = [0.0f64; 2];
        for i in 0..features.n_rows {
            let x = features.get(i, j);
            if !(x >= 0.0) {
                return Err(Error::Domain(format!(
                    "feature `{}` has value {x} at row {i}; chi-squared needs non-negative values",
                    features.feature_names[j]
                )));
            }
            observed[target.values[i] as usize] += x;
        }
        let total = observed[0] + observed[1];
        if total == 0.0 {
            scores.push(0.0);
            continue;
        }
        let score: f64 = (0..2)
            .map(|c| {
                let expected = total * counts[c] as f64 / n;
                if expected > 0.0 {
                    (observed[c] - expected).powi(2) / expected
                } else {
                    0.0
                }
            })
            .sum();
        scores.push(score);
    }
    Ok(scores)
}

/// Indices of the `k` best scores, best first; ties go to the lower index.
pub fn select_k_best(scores: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order.truncate(k.min(scores.len()));
    order
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PipelineMode {
    Preprocessed,
    Raw,
}

impl std::str::FromStr for PipelineMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "preprocessed" | "1" => Ok(PipelineMode::Preprocessed),
            "raw" | "2" => Ok(PipelineMode::Raw),
            other => Err(Error::Parameter(format!("unknown pipeline `{other}`"))),
        }
    }
}

impl std::fmt::Display for PipelineMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            PipelineMode::Preprocessed => "preprocessed",
            PipelineMode::Raw => "raw",
        })
    }
}

impl PipelineMode {
    pub fn number(self) -> u8 {
        match self {
            PipelineMode::Preprocessed => 1,
            PipelineMode::Raw => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub mode: PipelineMode,
    /// Target minority/majority ratio after undersampling.
    pub alpha: f64,
    /// Number of features kept by the chi-squared selector.
    pub k: usize,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            mode: PipelineMode::Preprocessed,
            alpha: 0.5,
            k: 50,
            seed: 42,
        }
    }
}

impl PipelineConfig {
    pub fn raw(seed: u64) -> Self {
        Self {
            mode: PipelineMode::Raw,
            seed,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ColumnEncoding {
    Passthrough,
    /// Category -> rank in the schema order.
    Ordinal { order: Vec<String> },
    /// One indicator column per training category.
    OneHot { categories: Vec<String> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnEncoder {
    pub name: String,
    pub kind: ColumnKind,
    pub encoding: ColumnEncoding,
    /// Fill value in encoded units: the median for numeric columns, the
    /// mode (value, rank, or category index) otherwise.
    pub impute_value: f64,
}

impl ColumnEncoder {
    fn output_names(&self) -> Vec<String> {
        match &self.encoding {
            ColumnEncoding::OneHot { categories } => categories
                .iter()
                .map(|c| format!("{}={c}", self.name))
                .collect(),
            _ => vec![self.name.clone()],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinMax {
    pub feature: String,
    pub min: f64,
    pub max: f64,
}

impl MinMax {
    /// Affine map to [0, 1] on training data; not clamped. A constant
    /// training column maps everything to 0.
    pub fn apply(&self, x: f64) -> f64 {
        if self.max > self.min {
            (x - self.min) / (self.max - self.min)
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectedFeature {
    pub feature: String,
    /// Position among the encoded columns.
    pub index: usize,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineFitState {
    pub format_version: u32,
    pub mode: PipelineMode,
    pub alpha: f64,
    pub k: usize,
    pub seed: u64,
    /// Input columns the pipeline consumes, in order.
    pub input_features: Vec<String>,
    pub encoders: Vec<ColumnEncoder>,
    pub normalizer: Vec<MinMax>,
    pub chi2_scores: Vec<f64>,
    /// Selected encoded columns in ascending encoded-column order.
    pub selected: Vec<SelectedFeature>,
    pub n_training_rows: usize,
}

impl PipelineFitState {
    pub fn feature_names(&self) -> Vec<String> {
        match self.mode {
            PipelineMode::Raw => self.input_features.clone(),
            PipelineMode::Preprocessed => self.selected.iter().map(|s| s.feature.clone()).collect(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        check_version(&value)?;
        Ok(serde_json::from_value(value)?)
    }
}

pub(crate) fn check_version(value: &serde_json::Value) -> Result<()> {
    match value.get("format_version").and_then(|v| v.as_u64()) {
        Some(v) if v == FORMAT_VERSION as u64 => Ok(()),
        Some(v) => Err(Error::Schema(format!("unsupported format_version {v}"))),
        None => Err(Error::Schema("missing format_version".into())),
    }
}

#[derive(Debug, Clone)]
pub struct FittedPipeline {
    pub matrix: FeatureMatrix,
    /// Labels of the rows in `matrix` (after undersampling).
    pub target: BinaryTarget,
    /// Rows of the training table that survived undersampling.
    pub rows: Vec<usize>,
    pub state: PipelineFitState,
}

/// Fits the pipeline on `train` and returns the transformed training matrix.
/// In raw mode this is the identity over input columns (missing stays
/// missing) and the state carries no statistics.
pub fn fit_transform(
    train: &Table,
    target: &BinaryTarget,
    config: &PipelineConfig,
) -> Result<FittedPipeline> {
    if train.n_rows() != target.len() {
        return Err(Error::Input("training rows and target length differ".into()));
    }
    let input_features: Vec<String> = train
        .input_columns()
        .into_iter()
        .map(|c| train.schema()[c].name.clone())
        .collect();
    let mut state = PipelineFitState {
        format_version: FORMAT_VERSION,
        mode: config.mode,
        alpha: config.alpha,
        k: config.k,
        seed: config.seed,
        input_features,
        encoders: Vec::new(),
        normalizer: Vec::new(),
        chi2_scores: Vec::new(),
        selected: Vec::new(),
        n_training_rows: train.n_rows(),
    };
    if config.mode == PipelineMode::Raw {
        let matrix = transform(train, &state)?;
        let rows = (0..train.n_rows()).collect();
        return Ok(FittedPipeline {
            matrix,
            target: target.clone(),
            rows,
            state,
        });
    }
    if config.k == 0 {
        return Err(Error::Parameter("k must be positive".into()));
    }

    let all: Vec<usize> = (0..train.n_rows()).collect();
    let rows = random_undersample(&all, target, config.alpha, config.seed)?;
    let sub = train.select_rows(&rows);
    let sub_target = target.select(&rows);

    state.encoders = train
        .input_columns()
        .into_iter()
        .map(|c| fit_encoder(&sub, c))
        .collect::<Result<_>>()?;
    state.n_training_rows = sub.n_rows();

    let encoded = encode_impute(&sub, &state.encoders)?;
    state.normalizer = (0..encoded.n_features())
        .map(|j| {
            let col = encoded.column(j);
            let min = col.iter().copied().fold(f64::INFINITY, f64::min);
            let max = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let (min, max) = if col.is_empty() { (0.0, 0.0) } else { (min, max) };
            MinMax {
                feature: encoded.feature_names[j].clone(),
                min,
                max,
            }
        })
        .collect();
    let normalized = normalize(&encoded, &state.normalizer)?;
    let scores = chi2_scores(&normalized, &sub_target)?;
    let mut chosen = select_k_best(&scores, config.k);
    chosen.sort_unstable();
    state.selected = chosen
        .into_iter()
        .map(|j| SelectedFeature {
            feature: normalized.feature_names[j].clone(),
            index: j,
            score: scores[j],
        })
        .collect();
    state.chi2_scores = scores;

    let matrix = transform(&sub, &state)?;
    Ok(FittedPipeline {
        matrix,
        target: sub_target,
        rows,
        state,
    })
}

/// Applies a fitted state to new rows. Unseen nominal categories become an
/// all-zero indicator block.
pub fn transform(table: &Table, state: &PipelineFitState) -> Result<FeatureMatrix> {
    if state.format_version != FORMAT_VERSION {
        return Err(Error::Schema(format!(
            "unsupported format_version {}",
            state.format_version
        )));
    }
    match state.mode {
        PipelineMode::Raw => raw_matrix(table, &state.input_features),
        PipelineMode::Preprocessed => {
            let encoded = encode_impute(table, &state.encoders)?;
            let normalized = normalize(&encoded, &state.normalizer)?;
            let cols: Vec<usize> = state.selected.iter().map(|s| s.index).collect();
            Ok(normalized.select_columns(&cols))
        }
    }
}

fn find_column(table: &Table, name: &str) -> Result<usize> {
    table
        .column_index(name)
        .ok_or_else(|| Error::Schema(format!("table lacks fitted column `{name}`")))
}

fn raw_matrix(table: &Table, names: &[String]) -> Result<FeatureMatrix> {
    let cols: Vec<usize> = names
        .iter()
        .map(|n| find_column(table, n))
        .collect::<Result<_>>()?;
    let mut values = Vec::with_capacity(table.n_rows() * cols.len());
    for row in 0..table.n_rows() {
        for &c in &cols {
            let schema = &table.schema()[c];
            let v = match schema.kind {
                ColumnKind::CategoricalOrdinal => table
                    .label(c, row)
                    .and_then(|t| schema.ordinal_rank(t))
                    .map_or(f64::NAN, |r| r as f64),
                ColumnKind::CategoricalNominal => match table.label(c, row) {
                    None => f64::NAN,
                    Some(t) => t.parse::<f64>().map_err(|_| {
                        Error::Schema(format!(
                            "raw pipeline needs numeric codes in nominal column `{}`, found {t:?}",
                            schema.name
                        ))
                    })?,
                },
                _ => table.number(c, row).unwrap_or(f64::NAN),
            };
            values.push(v);
        }
    }
    FeatureMatrix::new(names.to_vec(), table.n_rows(), values)
}

fn numeric_cmp(a: &str, b: &str) -> std::cmp::Ordering {
    match (a.parse::<f64>(), b.parse::<f64>()) {
        (Ok(x), Ok(y)) => x.total_cmp(&y).then_with(|| a.cmp(b)),
        _ => a.cmp(b),
    }
}

/// Most frequent value; ties go to the smallest.
fn mode(values: &[f64]) -> Option<f64> {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut best: Option<(f64, usize)> = None;
    let mut i = 0;
    while i < sorted.len() {
        let j = sorted[i..].iter().take_while(|&&v| v == sorted[i]).count() + i;
        if best.is_none_or(|(_, n)| j - i > n) {
            best = Some((sorted[i], j - i));
        }
        i = j;
    }
    best.map(|(v, _)| v)
}

fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let m = sorted.len() / 2;
    Some(if sorted.len() % 2 == 1 {
        sorted[m]
    } else {
        (sorted[m - 1] + sorted[m]) / 2.0
    })
}

fn fit_encoder(table: &Table, col: usize) -> Result<ColumnEncoder> {
    let schema = &table.schema()[col];
    let rows = 0..table.n_rows();
    let (encoding, observed): (ColumnEncoding, Vec<f64>) = match schema.kind {
        ColumnKind::CategoricalOrdinal => {
            let codes = rows
                .filter_map(|r| table.label(col, r).and_then(|t| schema.ordinal_rank(t)))
                .map(|r| r as f64)
                .collect();
            let order = schema.ordinal_order.clone().unwrap_or_default();
            (ColumnEncoding::Ordinal { order }, codes)
        }
        ColumnKind::CategoricalNominal => {
            let mut categories: Vec<String> = rows
                .clone()
                .filter_map(|r| table.label(col, r).map(str::to_string))
                .collect();
            categories.sort_by(|a, b| numeric_cmp(a, b));
            categories.dedup();
            let index: HashMap<&str, usize> = categories
                .iter()
                .enumerate()
                .map(|(i, c)| (c.as_str(), i))
                .collect();
            let codes = rows
                .filter_map(|r| table.label(col, r).map(|t| index[t] as f64))
                .collect();
            (ColumnEncoding::OneHot { categories }, codes)
        }
        _ => (
            ColumnEncoding::Passthrough,
            rows.filter_map(|r| table.number(col, r)).collect(),
        ),
    };
    let fill = if schema.kind == ColumnKind::Numeric {
        median(&observed)
    } else {
        mode(&observed)
    };
    let impute_value = fill.ok_or_else(|| Error::Imputation(schema.name.clone()))?;
    Ok(ColumnEncoder {
        name: schema.name.clone(),
        kind: schema.kind,
        encoding,
        impute_value,
    })
}

/// Encoded, imputed (but not yet scaled) matrix.
fn encode_impute(table: &Table, encoders: &[ColumnEncoder]) -> Result<FeatureMatrix> {
    let cols: Vec<usize> = encoders
        .iter()
        .map(|e| find_column(table, &e.name))
        .collect::<Result<_>>()?;
    let names: Vec<String> = encoders.iter().flat_map(ColumnEncoder::output_names).collect();
    let width = names.len();
    let mut values = Vec::with_capacity(table.n_rows() * width);
    let mut unseen: HashMap<&str, usize> = HashMap::new();
    for row in 0..table.n_rows() {
        for (enc, &c) in encoders.iter().zip(&cols) {
            match &enc.encoding {
                ColumnEncoding::Passthrough => {
                    values.push(table.number(c, row).unwrap_or(enc.impute_value))
                }
                ColumnEncoding::Ordinal { order } => {
                    let rank = table
                        .label(c, row)
                        .and_then(|t| order.iter().position(|o| o == t))
                        .map_or(enc.impute_value, |r| r as f64);
                    values.push(rank);
                }
                ColumnEncoding::OneHot { categories } => {
                    let hot = match table.label(c, row) {
                        None => Some(enc.impute_value as usize),
                        Some(t) => {
                            let pos = categories.iter().position(|x| x == t);
                            if pos.is_none() {
                                *unseen.entry(enc.name.as_str()).or_default() += 1;
                            }
                            pos
                        }
                    };
                    values.extend((0..categories.len()).map(|i| {
                        if Some(i) == hot {
                            1.0
                        } else {
                            0.0
                        }
                    }));
                }
            }
        }
    }
    for (name, count) in unseen {
        log::warn!("{count} value(s) of `{name}` were not seen in training; encoded as all zeros");
    }
    FeatureMatrix::new(names, table.n_rows(), values)
}

fn normalize(encoded: &FeatureMatrix, normalizer: &[MinMax]) -> Result<FeatureMatrix> {
    if normalizer.len() != encoded.n_features() {
        return Err(Error::Schema("normalizer does not match encoded width".into()));
    }
    let values = (0..encoded.n_rows)
        .flat_map(|r| {
            encoded
                .row(r)
                .iter()
                .zip(normalizer)
                .map(|(&x, mm)| mm.apply(x))
                .collect::<Vec<_>>()
        })
        .collect();
    FeatureMatrix::new(encoded.feature_names.clone(), encoded.n_rows, values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tabular::{read_table, ColumnSchema, DEFAULT_MISSING_TOKENS};

    fn schema() -> Vec<ColumnSchema> {
        vec![
            ColumnSchema::new("ID", ColumnKind::Id),
            ColumnSchema::new("AGE", ColumnKind::Numeric),
            ColumnSchema::new("SEX", ColumnKind::Binary),
            ColumnSchema::ordinal("GRADE", &[0, 1, 2]),
            ColumnSchema::new("COLOR", ColumnKind::CategoricalNominal),
            ColumnSchema::new("OTHER", ColumnKind::Target),
            ColumnSchema::new("LET_IS", ColumnKind::Target),
        ]
    }

    fn table(text: &str) -> Table {
        read_table(text.as_bytes(), &schema(), &DEFAULT_MISSING_TOKENS).unwrap()
    }

    const SMALL: &str = "ID,AGE,SEX,GRADE,COLOR,OTHER,LET_IS
1,1,0,0,red,0,0
2,2,1,2,blue,1,1
3,?,1,?,red,0,0
4,4,0,1,?,0,1
";

    fn config(k: usize) -> PipelineConfig {
        PipelineConfig {
            mode: PipelineMode::Preprocessed,
            alpha: 1.0,
            k,
            seed: 3,
        }
    }

    #[test]
    fn median_impute_then_scale() {
        let t = table(SMALL);
        let target = BinaryTarget::new(vec![0, 1, 0, 1]).unwrap();
        let fit = fit_transform(&t, &target, &config(100)).unwrap();
        let age = fit.matrix.feature_names.iter().position(|n| n == "AGE").unwrap();
        let got = fit.matrix.column(age);
        let want = [0.0, 1.0 / 3.0, 1.0 / 3.0, 1.0];
        for (g, w) in got.iter().zip(want) {
            assert!((g - w).abs() < 1e-15, "{got:?}");
        }
        assert!(!fit.matrix.has_missing());
    }

    #[test]
    fn one_hot_and_mode_imputation() {
        let t = table(SMALL);
        let target = BinaryTarget::new(vec![0, 1, 0, 1]).unwrap();
        let fit = fit_transform(&t, &target, &config(100)).unwrap();
        let names = &fit.matrix.feature_names;
        assert!(names.contains(&"COLOR=blue".to_string()));
        let red = names.iter().position(|n| n == "COLOR=red").unwrap();
        let blue = names.iter().position(|n| n == "COLOR=blue").unwrap();
        for r in 0..4 {
            assert_eq!(fit.matrix.get(r, red) + fit.matrix.get(r, blue), 1.0);
        }
        // row 3 COLOR missing -> mode "red"
        assert_eq!(fit.matrix.get(3, red), 1.0);
        // GRADE missing -> mode over ranks {0,2,1} is tied -> smallest rank 0
        let grade = names.iter().position(|n| n == "GRADE").unwrap();
        assert_eq!(fit.matrix.get(2, grade), 0.0);
    }

    #[test]
    fn transform_uses_training_statistics_without_clamping() {
        let t = table(SMALL);
        let target = BinaryTarget::new(vec![0, 1, 0, 1]).unwrap();
        let fit = fit_transform(&t, &target, &config(100)).unwrap();
        let test = table("ID,AGE,SEX,GRADE,COLOR,OTHER,LET_IS\n9,7,1,2,green,0,0\n");
        let m = transform(&test, &fit.state).unwrap();
        let age = m.feature_names.iter().position(|n| n == "AGE").unwrap();
        assert_eq!(m.get(0, age), 2.0);
        for name in ["COLOR=red", "COLOR=blue"] {
            let j = m.feature_names.iter().position(|n| n == name).unwrap();
            assert_eq!(m.get(0, j), 0.0);
        }
    }

    #[test]
    fn affine_rule_example() {
        let mm = MinMax { feature: "x".into(), min: 0.0, max: 10.0 };
        assert_eq!(mm.apply(12.0), 1.2);
        let flat = MinMax { feature: "x".into(), min: 3.0, max: 3.0 };
        assert_eq!(flat.apply(3.0), 0.0);
        assert_eq!(flat.apply(99.0), 0.0);
    }

    #[test]
    fn transform_of_training_rows_reproduces_fit() {
        let t = table(SMALL);
        let target = BinaryTarget::new(vec![0, 1, 0, 1]).unwrap();
        let fit = fit_transform(&t, &target, &config(3)).unwrap();
        assert_eq!(transform(&t, &fit.state).unwrap(), fit.matrix);
        assert_eq!(fit.matrix.n_features(), 3);
    }

    #[test]
    fn raw_mode_is_identity_over_inputs() {
        let t = table(SMALL);
        let target = BinaryTarget::new(vec![0, 1, 0, 1]).unwrap();
        let err = fit_transform(&t, &target, &PipelineConfig::raw(1)).unwrap_err();
        assert!(matches!(err, Error::Schema(_)), "text nominal codes are rejected");
        let numeric = table(&SMALL.replace("red", "1").replace("blue", "2"));
        let fit = fit_transform(&numeric, &target, &PipelineConfig::raw(1)).unwrap();
        assert_eq!(fit.matrix.feature_names, ["AGE", "SEX", "GRADE", "COLOR"]);
        assert!(fit.matrix.get(2, 0).is_nan());
        assert_eq!(fit.matrix.get(1, 3), 2.0);
        assert!(fit.state.encoders.is_empty() && fit.state.normalizer.is_empty());
    }

    #[test]
    fn entirely_missing_column_is_an_imputation_error() {
        let t = table("ID,AGE,SEX,GRADE,COLOR,OTHER,LET_IS\n1,?,0,0,red,0,0\n2,?,1,1,red,0,1\n");
        let target = BinaryTarget::new(vec![0, 1]).unwrap();
        match fit_transform(&t, &target, &config(5)) {
            Err(Error::Imputation(col)) => assert_eq!(col, "AGE"),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(fit_transform(&table(SMALL), &BinaryTarget::new(vec![0, 1, 0, 1]).unwrap(), &config(0)), Err(Error::Parameter(_))));
    }

    #[test]
    fn unknown_column_in_transform() {
        let t = table(SMALL);
        let target = BinaryTarget::new(vec![0, 1, 0, 1]).unwrap();
        let fit = fit_transform(&t, &target, &config(5)).unwrap();
        let narrower = t.select_columns(&[0, 1, 2, 3, 6]);
        assert!(matches!(transform(&narrower, &fit.state), Err(Error::Schema(_))));
    }

    #[test]
    fn missing_threshold_is_strict() {
        let schema = vec![
            ColumnSchema::new("ID", ColumnKind::Id),
            ColumnSchema::new("A", ColumnKind::Numeric),
            ColumnSchema::new("B", ColumnKind::Numeric),
            ColumnSchema::new("C", ColumnKind::Binary),
            ColumnSchema::new("Y", ColumnKind::Target),
        ];
        let mut text = String::from("ID,A,B,C,Y\n");
        for i in 0..1700 {
            let a = if i < 171 { "?".to_string() } else { (i % 13).to_string() };
            let b = if i < 170 { "?".to_string() } else { (i % 11).to_string() };
            let c = if i % 25 == 0 { "1" } else { "0" }; // 96% zeros
            text.push_str(&format!("{i},{a},{b},{c},0\n"));
        }
        let t = read_table(text.as_bytes(), &schema, &DEFAULT_MISSING_TOKENS).unwrap();
        let (cleaned, report) = clean(&t, "Y").unwrap();
        assert_eq!(report.dropped_missing.len(), 1);
        assert_eq!(report.dropped_missing[0].name, "A");
        assert_eq!(report.dropped_dominant.len(), 1);
        assert_eq!(report.dropped_dominant[0].name, "C");
        assert!((report.dropped_dominant[0].fraction - 0.96).abs() < 1e-12);
        assert_eq!(report.surviving_features, ["B"]);
        assert_eq!(cleaned.n_columns(), 2);
        assert!((report.cells_missing_fraction - 341.0 / 5100.0).abs() < 1e-15);
        assert!((report.rows_with_missing_fraction - 171.0 / 1700.0).abs() < 1e-15);
    }

    #[test]
    fn cleaning_drops_id_and_other_targets() {
        let (cleaned, report) = clean(&table(SMALL), "LET_IS").unwrap();
        let names: Vec<_> = cleaned.schema().iter().map(|c| c.name.as_str()).collect();
        assert!(!names.contains(&"ID") && !names.contains(&"OTHER"));
        assert!(names.contains(&"LET_IS"));
        assert_eq!(report.n_input_features, 4);
        assert!(clean(&table(SMALL), "AGE").is_err());
        let stripped = strip_non_inputs(&table(SMALL), "LET_IS").unwrap();
        assert_eq!(stripped.n_columns(), 5);
    }

    #[test]
    fn empty_feature_set_cleans_to_empty() {
        let schema = vec![ColumnSchema::new("ID", ColumnKind::Id), ColumnSchema::new("Y", ColumnKind::Target)];
        let t = read_table("ID,Y\n".as_bytes(), &schema, &DEFAULT_MISSING_TOKENS).unwrap();
        let (cleaned, report) = clean(&t, "Y").unwrap();
        assert!(report.surviving_features.is_empty());
        assert_eq!(cleaned.n_columns(), 1);
    }

    fn target_of(pos: usize, neg: usize) -> BinaryTarget {
        let mut v = vec![1u8; pos];
        v.extend(std::iter::repeat_n(0, neg));
        BinaryTarget::new(v).unwrap()
    }

    #[test]
    fn undersampling_counts() {
        let t = target_of(200, 1000);
        let rows: Vec<usize> = (0..1200).collect();
        let kept = random_undersample(&rows, &t, 0.5, 1).unwrap();
        assert_eq!(kept.iter().filter(|&&r| t.values[r] == 1).count(), 200);
        assert_eq!(kept.iter().filter(|&&r| t.values[r] == 0).count(), 400);

        let t = target_of(200, 500);
        let rows: Vec<usize> = (0..700).collect();
        assert_eq!(random_undersample(&rows, &t, 1.0, 1).unwrap().len(), 400);
        assert_eq!(
            random_undersample(&rows, &t, 0.8, 1).unwrap().len(),
            200 + 250
        );

        let t = target_of(90, 100);
        let rows: Vec<usize> = (0..190).collect();
        assert_eq!(random_undersample(&rows, &t, 0.5, 1).unwrap(), rows);

        assert!(matches!(random_undersample(&rows, &t, 0.0, 1), Err(Error::Parameter(_))));
        assert!(matches!(random_undersample(&rows, &t, 1.5, 1), Err(Error::Parameter(_))));
    }

    #[test]
    fn chi2_examples() {
        let m = FeatureMatrix::from_rows(
            vec!["x".into(), "flat".into(), "zero".into()],
            &[vec![1.0, 1.0, 0.0], vec![1.0, 1.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 1.0, 0.0]],
        )
        .unwrap();
        let y = BinaryTarget::new(vec![1, 1, 0, 0]).unwrap();
        assert_eq!(chi2_scores(&m, &y).unwrap(), vec![2.0, 0.0, 0.0]);
        let neg = FeatureMatrix::from_rows(vec!["x".into()], &[vec![-1.0], vec![1.0]]).unwrap();
        let y2 = BinaryTarget::new(vec![0, 1]).unwrap();
        assert!(matches!(chi2_scores(&neg, &y2), Err(Error::Domain(_))));
    }

    #[test]
    fn select_k_best_tie_break() {
        assert_eq!(select_k_best(&[1.0, 3.0, 3.0, 0.5], 2), vec![1, 2]);
        assert_eq!(select_k_best(&[1.0, 3.0], 5), vec![1, 0]);
    }

    #[test]
    fn state_json_round_trip_and_version_check() {
        let t = table(SMALL);
        let target = BinaryTarget::new(vec![0, 1, 0, 1]).unwrap();
        let fit = fit_transform(&t, &target, &config(4)).unwrap();
        let json = fit.state.to_json().unwrap();
        assert_eq!(PipelineFitState::from_json(&json).unwrap(), fit.state);
        let bumped = json.replacen("\"format_version\": 1", "\"format_version\": 99", 1);
        assert!(PipelineFitState::from_json(&bumped).is_err());
    }

    #[test]
    fn mode_and_median_helpers() {
        assert_eq!(mode(&[2.0, 1.0, 2.0, 1.0]), Some(1.0));
        assert_eq!(mode(&[3.0, 3.0, 1.0]), Some(3.0));
        assert_eq!(median(&[1.0, 2.0, 4.0]), Some(2.0));
        assert_eq!(median(&[1.0, 2.0, 4.0, 10.0]), Some(3.0));
        assert_eq!(median(&[]), None);
    }
}
