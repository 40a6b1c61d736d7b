//! Exact path-dependent Tree SHAP for [`Forest`] margins.
//!
//! The value of a coalition `S` is the expected tree output when features
//! in `S` follow the instance and every other split is averaged over its
//! children weighted by training cover. [`tree_shap`] computes the Shapley
//! values of that game in polynomial time by tracking, along each root-leaf
//! path, the proportion of coalitions of every size that reach the leaf.
//! [`brute_force_shap`] enumerates coalitions directly and is kept as a test
//! oracle.

use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gbdt::{Forest, Node, Tree};
use crate::tabular::FeatureMatrix;

pub const BRUTE_FORCE_MAX_FEATURES: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapMatrix {
    /// Expected margin over the training distribution.
    pub base_value: f64,
    pub feature_names: Vec<String>,
    #[serde(rename = "rows")]
    pub values: Vec<Vec<f64>>,
}

impl ShapMatrix {
    pub fn n_rows(&self) -> usize {
        self.values.len()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// One row per instance, `base_value` first.
    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        let mut header = vec!["base_value".to_string()];
        header.extend(self.feature_names.iter().cloned());
        wtr.write_record(&header)?;
        for row in &self.values {
            let mut rec = vec![self.base_value.to_string()];
            rec.extend(row.iter().map(f64::to_string));
            wtr.write_record(&rec)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
struct PathElement {
    feature: usize,
    zero_fraction: f64,
    one_fraction: f64,
    weight: f64,
}

const ROOT: usize = usize::MAX;

fn extend_path(path: &mut Vec<PathElement>, zero_fraction: f64, one_fraction: f64, feature: usize) {
    let depth = path.len();
    path.push(PathElement {
        feature,
        zero_fraction,
        one_fraction,
        weight: if depth == 0 { 1.0 } else { 0.0 },
    });
    let d = depth as f64;
    for i in (0..depth).rev() {
        let w = path[i].weight;
        path[i + 1].weight += one_fraction * w * (i as f64 + 1.0) / (d + 1.0);
        path[i].weight = zero_fraction * w * (d - i as f64) / (d + 1.0);
    }
}

/// Undoes the extension at `index`, leaving the path one element shorter.
fn unwind_path(path: &mut Vec<PathElement>, index: usize) {
    let depth = path.len() - 1;
    let d = depth as f64;
    let one = path[index].one_fraction;
    let zero = path[index].zero_fraction;
    let mut next = path[depth].weight;
    for i in (0..depth).rev() {
        if one != 0.0 {
            let tmp = path[i].weight;
            path[i].weight = next * (d + 1.0) / ((i as f64 + 1.0) * one);
            next = tmp - path[i].weight * zero * (d - i as f64) / (d + 1.0);
        } else {
            path[i].weight = path[i].weight * (d + 1.0) / (zero * (d - i as f64));
        }
    }
    for i in index..depth {
        path[i].feature = path[i + 1].feature;
        path[i].zero_fraction = path[i + 1].zero_fraction;
        path[i].one_fraction = path[i + 1].one_fraction;
    }
    path.truncate(depth);
}

/// Total weight the path would carry with element `index` unwound.
fn unwound_path_sum(path: &[PathElement], index: usize) -> f64 {
    let depth = path.len() - 1;
    let d = depth as f64;
    let one = path[index].one_fraction;
    let zero = path[index].zero_fraction;
    let mut next = path[depth].weight;
    let mut total = 0.0;
    for i in (0..depth).rev() {
        if one != 0.0 {
            let tmp = next * (d + 1.0) / ((i as f64 + 1.0) * one);
            total += tmp;
            next = path[i].weight - tmp * zero * (d - i as f64) / (d + 1.0);
        } else if zero != 0.0 {
            total += path[i].weight / zero / ((d - i as f64) / (d + 1.0));
        }
    }
    total
}

fn goes_left(x: f64, threshold: f64, default_left: bool) -> bool {
    if x.is_nan() {
        default_left
    } else {
        x <= threshold
    }
}

#[allow(clippy::too_many_arguments)]
fn recurse(
    nodes: &[Node],
    row: &[f64],
    phi: &mut [f64],
    node: usize,
    mut path: Vec<PathElement>,
    zero_fraction: f64,
    one_fraction: f64,
    feature: usize,
) {
    extend_path(&mut path, zero_fraction, one_fraction, feature);
    match nodes[node] {
        Node::Leaf { value, .. } => {
            for i in 1..path.len() {
                let w = unwound_path_sum(&path, i);
                let el = path[i];
                phi[el.feature] += w * (el.one_fraction - el.zero_fraction) * value;
            }
        }
        Node::Split {
            feature: split,
            threshold,
            default_left,
            left,
            right,
            cover,
        } => {
            let (hot, cold) = if goes_left(row[split], threshold, default_left) {
                (left, right)
            } else {
                (right, left)
            };
            let mut incoming_zero = 1.0;
            let mut incoming_one = 1.0;
            if let Some(k) = (1..path.len()).find(|&k| path[k].feature == split) {
                incoming_zero = path[k].zero_fraction;
                incoming_one = path[k].one_fraction;
                unwind_path(&mut path, k);
            }
            let hot_share = nodes[hot].cover() / cover;
            let cold_share = nodes[cold].cover() / cover;
            recurse(nodes, row, phi, hot, path.clone(), incoming_zero * hot_share, incoming_one, split);
            recurse(nodes, row, phi, cold, path, incoming_zero * cold_share, 0.0, split);
        }
    }
}

/// Cover-weighted mean leaf value of one tree.
pub fn expected_value(tree: &Tree) -> f64 {
    let nodes = tree.nodes();
    let root = nodes[0].cover();
    nodes
        .iter()
        .filter_map(|n| match *n {
            Node::Leaf { value, cover } => Some(cover / root * value),
            Node::Split { .. } => None,
        })
        .sum()
}

fn check_model(model: &Forest, width: usize) -> Result<()> {
    if width != model.n_features() {
        return Err(Error::Schema(format!(
            "model expects {} features, got {width}",
            model.n_features()
        )));
    }
    for (t, tree) in model.trees.iter().enumerate() {
        let root = tree.nodes()[0].cover();
        if !(root > 0.0) {
            return Err(Error::Model(format!("tree {t} has zero cover at the root")));
        }
    }
    Ok(())
}

pub fn base_value(model: &Forest) -> f64 {
    model.base_score + model.trees.iter().map(expected_value).sum::<f64>()
}

/// SHAP values of one instance.
pub fn tree_shap_row(model: &Forest, row: &[f64]) -> Result<Vec<f64>> {
    check_model(model, row.len())?;
    Ok(shap_row_unchecked(model, row))
}

fn shap_row_unchecked(model: &Forest, row: &[f64]) -> Vec<f64> {
    let mut phi = vec![0.0; model.n_features()];
    for tree in &model.trees {
        let depth = tree.depth();
        recurse(tree.nodes(), row, &mut phi, 0, Vec::with_capacity(depth + 2), 1.0, 1.0, ROOT);
    }
    phi
}

pub fn tree_shap(model: &Forest, features: &FeatureMatrix) -> Result<ShapMatrix> {
    check_model(model, features.n_features())?;
    let values = (0..features.n_rows)
        .into_par_iter()
        .map(|r| shap_row_unchecked(model, features.row(r)))
        .collect();
    Ok(ShapMatrix {
        base_value: base_value(model),
        feature_names: model.feature_names.clone(),
        values,
    })
}

/// Path-dependent value of coalition `in_set` for one tree.
fn conditional_expectation(nodes: &[Node], node: usize, row: &[f64], in_set: &[bool]) -> f64 {
    match nodes[node] {
        Node::Leaf { value, .. } => value,
        Node::Split {
            feature,
            threshold,
            default_left,
            left,
            right,
            cover,
        } => {
            if in_set[feature] {
                let next = if goes_left(row[feature], threshold, default_left) { left } else { right };
                conditional_expectation(nodes, next, row, in_set)
            } else {
                (nodes[left].cover() * conditional_expectation(nodes, left, row, in_set)
                    + nodes[right].cover() * conditional_expectation(nodes, right, row, in_set))
                    / cover
            }
        }
    }
}

/// Model value `v(S)` of a coalition (base score included).
pub fn coalition_value(model: &Forest, row: &[f64], in_set: &[bool]) -> f64 {
    model.base_score
        + model
            .trees
            .iter()
            .map(|t| conditional_expectation(t.nodes(), 0, row, in_set))
            .sum::<f64>()
}

/// Shapley values by enumerating every coalition of the features the model
/// splits on. Exponential; meant as a test oracle.
pub fn brute_force_shap(model: &Forest, row: &[f64]) -> Result<Vec<f64>> {
    check_model(model, row.len())?;
    let used: Vec<usize> = model
        .trees
        .iter()
        .flat_map(|t| t.nodes().iter())
        .filter_map(|n| match n {
            Node::Split { feature, .. } => Some(*feature),
            Node::Leaf { .. } => None,
        })
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let m = used.len();
    if m > BRUTE_FORCE_MAX_FEATURES {
        return Err(Error::Capacity(format!(
            "{m} features exceed the enumeration bound of {BRUTE_FORCE_MAX_FEATURES}"
        )));
    }
    let mut phi = vec![0.0; model.n_features()];
    if m == 0 {
        return Ok(phi);
    }
    let values: Vec<f64> = (0..1usize << m)
        .map(|mask| {
            let mut in_set = vec![false; model.n_features()];
            for (bit, &f) in used.iter().enumerate() {
                in_set[f] = mask >> bit & 1 == 1;
            }
            coalition_value(model, row, &in_set)
        })
        .collect();
    // weight(s) = s! (m - s - 1)! / m! = 1 / (m * C(m - 1, s))
    let binom = |n: usize, k: usize| (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64);
    let weights: Vec<f64> = (0..m).map(|s| 1.0 / (m as f64 * binom(m - 1, s))).collect();
    for (bit, &f) in used.iter().enumerate() {
        let mut total = 0.0;
        for mask in 0..1usize << m {
            if mask >> bit & 1 == 1 {
                continue;
            }
            let s = mask.count_ones() as usize;
            total += weights[s] * (values[mask | 1 << bit] - values[mask]);
        }
        phi[f] = total;
    }
    Ok(phi)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureImportance {
    pub feature: String,
    pub mean_abs_shap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalImportance {
    /// In the original feature order.
    pub features: Vec<FeatureImportance>,
    /// Feature names by descending importance; ties by ascending name.
    pub ranking: Vec<String>,
}

impl GlobalImportance {
    pub fn rank_of(&self, feature: &str) -> Option<usize> {
        self.ranking.iter().position(|f| f == feature)
    }

    pub fn to_text(&self) -> String {
        let by_name: std::collections::HashMap<&str, f64> = self
            .features
            .iter()
            .map(|f| (f.feature.as_str(), f.mean_abs_shap))
            .collect();
        let width = self.ranking.iter().map(String::len).max().unwrap_or(7).max(7);
        let mut out = format!("{:>4}  {:<width$}  mean|SHAP|\n", "rank", "feature");
        for (i, name) in self.ranking.iter().enumerate() {
            out.push_str(&format!("{:>4}  {:<width$}  {:.6}\n", i + 1, name, by_name[name.as_str()]));
        }
        out
    }
}

pub fn global_importance(shap: &ShapMatrix) -> GlobalImportance {
    let n = shap.n_rows().max(1) as f64;
    let features: Vec<FeatureImportance> = shap
        .feature_names
        .iter()
        .enumerate()
        .map(|(j, name)| FeatureImportance {
            feature: name.clone(),
            mean_abs_shap: shap.values.iter().map(|r| r[j].abs()).sum::<f64>() / n,
        })
        .collect();
    let mut order: Vec<&FeatureImportance> = features.iter().collect();
    order.sort_by(|a, b| {
        b.mean_abs_shap
            .total_cmp(&a.mean_abs_shap)
            .then_with(|| a.feature.cmp(&b.feature))
    });
    let ranking = order.into_iter().map(|f| f.feature.clone()).collect();
    GlobalImportance { features, ranking }
}
