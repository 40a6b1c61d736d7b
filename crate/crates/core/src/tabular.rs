//! Columnar tables with explicit missing masks, schema files, target
//! binarization and stratified train/test splitting.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

pub const DEFAULT_MISSING_TOKENS: [&str; 3] = ["", "?", "NA"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnKind {
    Numeric,
    Binary,
    CategoricalOrdinal,
    CategoricalNominal,
    Id,
    Target,
}

impl ColumnKind {
    pub fn is_input(self) -> bool {
        !matches!(self, ColumnKind::Id | ColumnKind::Target)
    }

    pub fn is_categorical(self) -> bool {
        matches!(
            self,
            ColumnKind::CategoricalOrdinal | ColumnKind::CategoricalNominal
        )
    }

    fn parse(word: &str) -> Option<Self> {
        Some(match word {
            "numeric" => ColumnKind::Numeric,
            "binary" => ColumnKind::Binary,
            "ordinal" | "categorical_ordinal" => ColumnKind::CategoricalOrdinal,
            "nominal" | "categorical_nominal" => ColumnKind::CategoricalNominal,
            "id" => ColumnKind::Id,
            "target" => ColumnKind::Target,
            _ => return None,
        })
    }

    fn keyword(self) -> &'static str {
        match self {
            ColumnKind::Numeric => "numeric",
            ColumnKind::Binary => "binary",
            ColumnKind::CategoricalOrdinal => "ordinal",
            ColumnKind::CategoricalNominal => "nominal",
            ColumnKind::Id => "id",
            ColumnKind::Target => "target",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnSchema {
    pub name: String,
    pub kind: ColumnKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ordinal_order: Option<Vec<String>>,
}

impl ColumnSchema {
    pub fn new(name: impl Into<String>, kind: ColumnKind) -> Self {
        Self {
            name: name.into(),
            kind,
            ordinal_order: None,
        }
    }

    pub fn ordinal<S: ToString>(name: impl Into<String>, order: &[S]) -> Self {
        Self {
            name: name.into(),
            kind: ColumnKind::CategoricalOrdinal,
            ordinal_order: Some(order.iter().map(ToString::to_string).collect()),
        }
    }

    /// Rank of `token` in the ordinal order. Tokens that are numerically
    /// equal to an entry ("1.0" vs "1") match that entry.
    pub fn ordinal_rank(&self, token: &str) -> Option<usize> {
        let order = self.ordinal_order.as_ref()?;
        if let Some(i) = order.iter().position(|c| c == token) {
            return Some(i);
        }
        let value: f64 = token.parse().ok()?;
        order
            .iter()
            .position(|c| c.parse::<f64>() == Ok(value))
    }
}

/// Parses the line-oriented schema format `name = kind[, ordered categories]`.
/// Blank lines and `#` comments are ignored.
pub fn parse_schema(text: &str) -> Result<Vec<ColumnSchema>> {
    let mut schema = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (name, rest) = line.split_once('=').ok_or_else(|| {
            Error::Schema(format!("line {}: expected `name = kind`", lineno + 1))
        })?;
        let mut parts = rest.split(',').map(str::trim);
        let word = parts.next().unwrap_or("");
        let kind = ColumnKind::parse(word).ok_or_else(|| {
            Error::Schema(format!("line {}: unknown column kind `{word}`", lineno + 1))
        })?;
        let cats: Vec<String> = parts.map(str::to_string).collect();
        let ordinal_order = if cats.is_empty() { None } else { Some(cats) };
        schema.push(ColumnSchema {
            name: name.trim().to_string(),
            kind,
            ordinal_order,
        });
    }
    validate_schema(&schema)?;
    Ok(schema)
}

pub fn load_schema(path: impl AsRef<Path>) -> Result<Vec<ColumnSchema>> {
    parse_schema(&std::fs::read_to_string(path)?)
}

pub fn format_schema(schema: &[ColumnSchema]) -> String {
    let mut out = String::new();
    for col in schema {
        out.push_str(&col.name);
        out.push_str(" = ");
        out.push_str(col.kind.keyword());
        for c in col.ordinal_order.iter().flatten() {
            out.push_str(", ");
            out.push_str(c);
        }
        out.push('\n');
    }
    out
}

pub fn validate_schema(schema: &[ColumnSchema]) -> Result<()> {
    let mut names = HashSet::new();
    for col in schema {
        if col.name.is_empty() {
            return Err(Error::Schema("empty column name".into()));
        }
        if !names.insert(col.name.as_str()) {
            return Err(Error::Schema(format!("duplicate column `{}`", col.name)));
        }
        let is_ordinal = col.kind == ColumnKind::CategoricalOrdinal;
        match (&col.ordinal_order, is_ordinal) {
            (Some(order), true) => {
                let unique: HashSet<_> = order.iter().collect();
                if unique.len() != order.len() {
                    return Err(Error::Schema(format!(
                        "ordinal column `{}` repeats a category",
                        col.name
                    )));
                }
            }
            (None, true) => {
                return Err(Error::Schema(format!(
                    "ordinal column `{}` needs an ordered category list",
                    col.name
                )))
            }
            (Some(_), false) => {
                return Err(Error::Schema(format!(
                    "column `{}` lists categories but is not ordinal",
                    col.name
                )))
            }
            (None, false) => {}
        }
    }
    let ids = schema.iter().filter(|c| c.kind == ColumnKind::Id).count();
    if ids != 1 {
        return Err(Error::Schema(format!(
            "expected exactly one id column, found {ids}"
        )));
    }
    if !schema.iter().any(|c| c.kind == ColumnKind::Target) {
        return Err(Error::Schema("no target column".into()));
    }
    Ok(())
}

/// Cell storage for one column. Missing cells hold `NaN` / an empty string
/// and are only observable through the missing mask.
#[derive(Debug, Clone)]
pub enum ColumnValues {
    Numbers(Vec<f64>),
    Labels(Vec<String>),
}

/// Bitwise on numbers, so two tables with the same missing cells compare equal.
impl PartialEq for ColumnValues {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (ColumnValues::Numbers(a), ColumnValues::Numbers(b)) => {
                a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
            }
            (ColumnValues::Labels(a), ColumnValues::Labels(b)) => a == b,
            _ => false,
        }
    }
}

impl ColumnValues {
    fn len(&self) -> usize {
        match self {
            ColumnValues::Numbers(v) => v.len(),
            ColumnValues::Labels(v) => v.len(),
        }
    }

    fn select(&self, rows: &[usize]) -> Self {
        match self {
            ColumnValues::Numbers(v) => ColumnValues::Numbers(rows.iter().map(|&r| v[r]).collect()),
            ColumnValues::Labels(v) => {
                ColumnValues::Labels(rows.iter().map(|&r| v[r].clone()).collect())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    schema: Vec<ColumnSchema>,
    n_rows: usize,
    columns: Vec<ColumnValues>,
    missing: Vec<Vec<bool>>,
}

impl Table {
    pub fn new(
        schema: Vec<ColumnSchema>,
        columns: Vec<ColumnValues>,
        missing: Vec<Vec<bool>>,
    ) -> Result<Self> {
        if schema.len() != columns.len() || schema.len() != missing.len() {
            return Err(Error::Schema("schema, columns and masks disagree in count".into()));
        }
        let n_rows = columns.first().map_or(0, ColumnValues::len);
        for ((col, values), mask) in schema.iter().zip(&columns).zip(&missing) {
            if values.len() != n_rows || mask.len() != n_rows {
                return Err(Error::Schema(format!("column `{}` has wrong length", col.name)));
            }
            let numeric = matches!(values, ColumnValues::Numbers(_));
            if numeric == col.kind.is_categorical() {
                return Err(Error::Schema(format!(
                    "column `{}` storage does not match its kind",
                    col.name
                )));
            }
        }
        let mut columns = columns;
        for (values, mask) in columns.iter_mut().zip(&missing) {
            match values {
                ColumnValues::Numbers(v) => v
                    .iter_mut()
                    .zip(mask)
                    .filter(|(_, &m)| m)
                    .for_each(|(x, _)| *x = f64::NAN),
                ColumnValues::Labels(v) => v
                    .iter_mut()
                    .zip(mask)
                    .filter(|(_, &m)| m)
                    .for_each(|(x, _)| x.clear()),
            }
        }
        Ok(Self {
            schema,
            n_rows,
            columns,
            missing,
        })
    }

    pub fn schema(&self) -> &[ColumnSchema] {
        &self.schema
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_columns(&self) -> usize {
        self.schema.len()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.schema.iter().position(|c| c.name == name)
    }

    pub fn column(&self, col: usize) -> &ColumnValues {
        &self.columns[col]
    }

    pub fn missing_mask(&self, col: usize) -> &[bool] {
        &self.missing[col]
    }

    pub fn is_missing(&self, col: usize, row: usize) -> bool {
        self.missing[col][row]
    }

    /// Numeric cell value; `None` when missing or when the column holds labels.
    pub fn number(&self, col: usize, row: usize) -> Option<f64> {
        match &self.columns[col] {
            ColumnValues::Numbers(v) if !self.missing[col][row] => Some(v[row]),
            _ => None,
        }
    }

    pub fn label(&self, col: usize, row: usize) -> Option<&str> {
        match &self.columns[col] {
            ColumnValues::Labels(v) if !self.missing[col][row] => Some(v[row].as_str()),
            _ => None,
        }
    }

    /// Cell rendered as text; `None` when missing.
    pub fn cell_text(&self, col: usize, row: usize) -> Option<String> {
        if self.missing[col][row] {
            return None;
        }
        Some(match &self.columns[col] {
            ColumnValues::Numbers(v) => v[row].to_string(),
            ColumnValues::Labels(v) => v[row].clone(),
        })
    }

    /// Indices of input (non-id, non-target) columns in schema order.
    pub fn input_columns(&self) -> Vec<usize> {
        (0..self.schema.len())
            .filter(|&c| self.schema[c].kind.is_input())
            .collect()
    }

    pub fn select_rows(&self, rows: &[usize]) -> Table {
        Table {
            schema: self.schema.clone(),
            n_rows: rows.len(),
            columns: self.columns.iter().map(|c| c.select(rows)).collect(),
            missing: self
                .missing
                .iter()
                .map(|m| rows.iter().map(|&r| m[r]).collect())
                .collect(),
        }
    }

    pub fn select_columns(&self, cols: &[usize]) -> Table {
        Table {
            schema: cols.iter().map(|&c| self.schema[c].clone()).collect(),
            n_rows: self.n_rows,
            columns: cols.iter().map(|&c| self.columns[c].clone()).collect(),
            missing: cols.iter().map(|&c| self.missing[c].clone()).collect(),
        }
    }
}

pub fn load_table(
    path: impl AsRef<Path>,
    schema: &[ColumnSchema],
    missing_tokens: &[&str],
) -> Result<Table> {
    read_table(File::open(path)?, schema, missing_tokens)
}

/// Reads comma-separated text with a header row. Header names must be
/// exactly the schema's names (any order); columns come out in schema order.
pub fn read_table<R: Read>(
    reader: R,
    schema: &[ColumnSchema],
    missing_tokens: &[&str],
) -> Result<Table> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let by_name: HashMap<&str, usize> = schema
        .iter()
        .enumerate()
        .map(|(i, c)| (c.name.as_str(), i))
        .collect();
    let mut source_of = vec![usize::MAX; schema.len()];
    for (pos, name) in header.iter().enumerate() {
        let &i = by_name
            .get(name.as_str())
            .ok_or_else(|| Error::Schema(format!("unknown header column `{name}`")))?;
        if source_of[i] != usize::MAX {
            return Err(Error::Schema(format!("header repeats column `{name}`")));
        }
        source_of[i] = pos;
    }
    if let Some(i) = source_of.iter().position(|&p| p == usize::MAX) {
        return Err(Error::Schema(format!(
            "header lacks schema column `{}`",
            schema[i].name
        )));
    }

    let mut columns: Vec<ColumnValues> = schema
        .iter()
        .map(|c| {
            if c.kind.is_categorical() {
                ColumnValues::Labels(Vec::new())
            } else {
                ColumnValues::Numbers(Vec::new())
            }
        })
        .collect();
    let mut missing: Vec<Vec<bool>> = vec![Vec::new(); schema.len()];

    for (row, record) in rdr.records().enumerate() {
        let record = record?;
        if record.len() != header.len() {
            return Err(Error::RowLength {
                row,
                expected: header.len(),
                found: record.len(),
            });
        }
        for (c, col) in schema.iter().enumerate() {
            let token = &record[source_of[c]];
            let is_missing = missing_tokens.contains(&token);
            missing[c].push(is_missing);
            let parse_err = || Error::Parse {
                row,
                column: col.name.clone(),
                token: token.to_string(),
            };
            match &mut columns[c] {
                ColumnValues::Numbers(v) => {
                    if is_missing {
                        v.push(f64::NAN);
                    } else {
                        let x: f64 = token.parse().map_err(|_| parse_err())?;
                        if !x.is_finite() {
                            return Err(parse_err());
                        }
                        v.push(x);
                    }
                }
                ColumnValues::Labels(v) => {
                    if is_missing {
                        v.push(String::new());
                    } else if col.kind == ColumnKind::CategoricalOrdinal {
                        let rank = col.ordinal_rank(token).ok_or_else(parse_err)?;
                        v.push(col.ordinal_order.as_ref().unwrap()[rank].clone());
                    } else {
                        v.push(token.to_string());
                    }
                }
            }
        }
    }
    Table::new(schema.to_vec(), columns, missing)
}

/// Writes the table as comma-separated text; missing cells are empty.
pub fn write_table<W: Write>(table: &Table, writer: W) -> Result<()> {
    let mut wtr = csv::WriterBuilder::new().from_writer(writer);
    wtr.write_record(table.schema.iter().map(|c| c.name.as_str()))?;
    for row in 0..table.n_rows {
        let cells: Vec<String> = (0..table.n_columns())
            .map(|c| table.cell_text(c, row).unwrap_or_default())
            .collect();
        wtr.write_record(&cells)?;
    }
    wtr.flush()?;
    Ok(())
}

/// 0 = alive, 1 = deceased.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinaryTarget {
    pub values: Vec<u8>,
}

impl BinaryTarget {
    pub fn new(values: Vec<u8>) -> Result<Self> {
        if let Some(v) = values.iter().find(|&&v| v > 1) {
            return Err(Error::Data(format!("binary target value {v} is not 0 or 1")));
        }
        Ok(Self { values })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn positives(&self) -> usize {
        self.values.iter().filter(|&&v| v == 1).count()
    }

    pub fn class_counts(&self) -> [usize; 2] {
        let p = self.positives();
        [self.values.len() - p, p]
    }

    pub fn select(&self, rows: &[usize]) -> BinaryTarget {
        BinaryTarget {
            values: rows.iter().map(|&r| self.values[r]).collect(),
        }
    }

    /// Row indices of each class, ascending.
    pub fn class_rows(&self) -> [Vec<usize>; 2] {
        let mut out = [Vec::new(), Vec::new()];
        for (i, &v) in self.values.iter().enumerate() {
            out[v as usize].push(i);
        }
        out
    }
}

/// Maps the lethal-outcome category column to {0: alive, 1: any of the
/// seven lethal causes}.
pub fn binarize_target(table: &Table, lethal_column: &str) -> Result<BinaryTarget> {
    let col = table
        .column_index(lethal_column)
        .ok_or_else(|| Error::Schema(format!("unknown column `{lethal_column}`")))?;
    if table.schema()[col].kind != ColumnKind::Target {
        return Err(Error::Schema(format!("`{lethal_column}` is not a target column")));
    }
    let mut values = Vec::with_capacity(table.n_rows());
    for row in 0..table.n_rows() {
        let cat = table.number(col, row).ok_or_else(|| {
            Error::Data(format!("target `{lethal_column}` is missing at row {row}"))
        })?;
        let v = match cat {
            c if c == 0.0 => 0,
            c if c.fract() == 0.0 && (1.0..=7.0).contains(&c) => 1,
            c => {
                return Err(Error::Data(format!(
                    "target `{lethal_column}` has unexpected category {c} at row {row}"
                )))
            }
        };
        values.push(v);
    }
    BinaryTarget::new(values)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub seed: u64,
    pub test_fraction: f64,
}

pub(crate) fn round_half_up(x: f64) -> usize {
    (x + 0.5).floor().max(0.0) as usize
}

/// Per-class test counts: round-half-up of each class share, with the
/// majority class nudged so the total equals round-half-up(n * fraction).
pub fn apportion(class_counts: [usize; 2], fraction: f64) -> [usize; 2] {
    let n = class_counts[0] + class_counts[1];
    let global = round_half_up(n as f64 * fraction).min(n);
    let mut per = class_counts.map(|c| round_half_up(c as f64 * fraction).min(c));
    let major = if class_counts[1] > class_counts[0] { 1 } else { 0 };
    let minor = 1 - major;
    let want_major = global.saturating_sub(per[minor]);
    per[major] = want_major.min(class_counts[major]);
    per
}

/// Deterministic stratified split: each class is shuffled with the
/// `"split"` substream and its first apportioned rows go to test.
pub fn stratified_split(target: &BinaryTarget, test_fraction: f64, seed: u64) -> Result<SplitIndices> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::Parameter(format!(
            "test fraction {test_fraction} outside (0, 1)"
        )));
    }
    let counts = target.class_counts();
    if counts.contains(&0) {
        return Err(Error::Stratification("a class has no rows".into()));
    }
    let per_class = apportion(counts, test_fraction);
    let mut rng = rng::substream(seed, "split");
    let mut train = Vec::with_capacity(target.len());
    let mut test = Vec::new();
    for (mut rows, take) in target.class_rows().into_iter().zip(per_class) {
        rng::shuffle(&mut rows, &mut rng);
        test.extend_from_slice(&rows[..take]);
        train.extend_from_slice(&rows[take..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok(SplitIndices {
        train,
        test,
        seed,
        test_fraction,
    })
}

/// Dense row-major numeric matrix; `NaN` marks a missing cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    pub feature_names: Vec<String>,
    pub n_rows: usize,
    values: Vec<f64>,
}

impl FeatureMatrix {
    pub fn new(feature_names: Vec<String>, n_rows: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != n_rows * feature_names.len() {
            return Err(Error::Schema(format!(
                "matrix of {n_rows} x {} needs {} values, got {}",
                feature_names.len(),
                n_rows * feature_names.len(),
                values.len()
            )));
        }
        Ok(Self {
            feature_names,
            n_rows,
            values,
        })
    }

    pub fn from_rows(feature_names: Vec<String>, rows: &[Vec<f64>]) -> Result<Self> {
        let n_cols = feature_names.len();
        if let Some(r) = rows.iter().find(|r| r.len() != n_cols) {
            return Err(Error::Schema(format!(
                "row has {} values, expected {n_cols}",
                r.len()
            )));
        }
        let values = rows.iter().flatten().copied().collect();
        Self::new(feature_names, rows.len(), values)
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let w = self.n_features();
        &self.values[r * w..(r + 1) * w]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.values[r * self.n_features() + c]
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.n_rows).map(|r| self.get(r, c)).collect()
    }

    pub fn has_missing(&self) -> bool {
        self.values.iter().any(|v| v.is_nan())
    }

    pub fn select_rows(&self, rows: &[usize]) -> FeatureMatrix {
        let values = rows.iter().flat_map(|&r| self.row(r).iter().copied()).collect();
        FeatureMatrix {
            feature_names: self.feature_names.clone(),
            n_rows: rows.len(),
            values,
        }
    }

    pub fn select_columns(&self, cols: &[usize]) -> FeatureMatrix {
        let values = (0..self.n_rows)
            .flat_map(|r| cols.iter().map(move |&c| self.get(r, c)))
            .collect();
        FeatureMatrix {
            feature_names: cols.iter().map(|&c| self.feature_names[c].clone()).collect(),
            n_rows: self.n_rows,
            values,
        }
    }
}
