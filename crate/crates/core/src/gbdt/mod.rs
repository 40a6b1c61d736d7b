//! Binary-classification gradient boosting: logistic loss, quantile-binned
//! histograms, leaf-wise tree growth and learned default directions for
//! missing values.

mod grow;
pub mod histogram;
pub mod tree;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tabular::{BinaryTarget, FeatureMatrix};

pub use grow::split_gain;
pub use histogram::{BinEdges, BinnedMatrix, Histogram};
pub use tree::{Forest, Node, Tree};

const HESSIAN_FLOOR: f64 = 1e-16;
const MARGIN_LIMIT: f64 = 700.0;
const PRIOR_CLAMP: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbdtParams {
    pub n_trees: usize,
    pub learning_rate: f64,
    pub max_leaves: usize,
    /// `None` for unlimited depth.
    pub max_depth: Option<usize>,
    pub min_samples_leaf: usize,
    pub min_hessian_leaf: f64,
    pub lambda_l2: f64,
    pub gamma: f64,
    pub max_bins: usize,
    pub seed: u64,
    /// Multiplier on the loss of positive rows; 1 disables class weighting.
    #[serde(default = "one")]
    pub positive_weight: f64,
    /// Stop when validation log-loss has not improved for this many rounds.
    /// Only used by [`fit_with_validation`].
    #[serde(default)]
    pub early_stopping_rounds: Option<usize>,
}

fn one() -> f64 {
    1.0
}

impl Default for GbdtParams {
    fn default() -> Self {
        Self {
            n_trees: 100,
            learning_rate: 0.1,
            max_leaves: 31,
            max_depth: None,
            min_samples_leaf: 20,
            min_hessian_leaf: 1e-3,
            lambda_l2: 0.0,
            gamma: 0.0,
            max_bins: 255,
            seed: 42,
            positive_weight: 1.0,
            early_stopping_rounds: None,
        }
    }
}

impl GbdtParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Parameter(msg));
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return bad(format!("learning_rate {} outside (0, 1]", self.learning_rate));
        }
        if self.max_leaves < 2 {
            return bad("max_leaves must be at least 2".into());
        }
        if self.max_depth == Some(0) {
            return bad("max_depth must be at least 1".into());
        }
        if self.min_samples_leaf < 1 {
            return bad("min_samples_leaf must be at least 1".into());
        }
        if !(2..=256).contains(&self.max_bins) {
            return bad(format!("max_bins {} outside 2..=256", self.max_bins));
        }
        for (name, v) in [
            ("min_hessian_leaf", self.min_hessian_leaf),
            ("lambda_l2", self.lambda_l2),
            ("gamma", self.gamma),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be a non-negative real"));
            }
        }
        if !(self.positive_weight > 0.0 && self.positive_weight.is_finite()) {
            return bad("positive_weight must be positive".into());
        }
        if self.early_stopping_rounds == Some(0) {
            return bad("early_stopping_rounds must be at least 1".into());
        }
        Ok(())
    }
}

pub fn sigmoid(margin: f64) -> f64 {
    1.0 / (1.0 + (-margin.clamp(-MARGIN_LIMIT, MARGIN_LIMIT)).exp())
}

/// Gradient and hessian of the log-loss with respect to the margin.
pub fn logistic_grad_hess(margin: f64, label: u8) -> (f64, f64) {
    let p = 1.0 / (1.0 + (-margin).exp());
    (p - label as f64, (p * (1.0 - p)).max(HESSIAN_FLOOR))
}

/// Mean log-loss of margins against labels.
pub fn log_loss(margins: &[f64], target: &BinaryTarget) -> f64 {
    let softplus = |m: f64| m.max(0.0) + (-m.abs()).exp().ln_1p();
    let total: f64 = margins
        .iter()
        .zip(&target.values)
        .map(|(&m, &y)| if y == 1 { softplus(-m) } else { softplus(m) })
        .sum();
    total / margins.len().max(1) as f64
}

/// Trains a forest. Missing cells (`NaN`) are routed by learned defaults.
pub fn fit(features: &FeatureMatrix, target: &BinaryTarget, params: &GbdtParams) -> Result<Forest> {
    fit_with_validation(features, target, None, params)
}

/// As [`fit`], with an optional validation set driving early stopping.
pub fn fit_with_validation(
    features: &FeatureMatrix,
    target: &BinaryTarget,
    validation: Option<(&FeatureMatrix, &BinaryTarget)>,
    params: &GbdtParams,
) -> Result<Forest> {
    params.validate()?;
    if features.n_rows != target.len() {
        return Err(Error::Input("feature rows and target length differ".into()));
    }
    if features.n_features() == 0 {
        return Err(Error::Training("empty feature set".into()));
    }
    if features.n_rows < 2 {
        return Err(Error::Training("need at least two rows".into()));
    }
    let counts = target.class_counts();
    if counts.contains(&0) {
        return Err(Error::Training("target has a single class".into()));
    }

    let weight = |y: u8| if y == 1 { params.positive_weight } else { 1.0 };
    let weighted_pos = counts[1] as f64 * params.positive_weight;
    let prior = (weighted_pos / (weighted_pos + counts[0] as f64)).clamp(PRIOR_CLAMP, 1.0 - PRIOR_CLAMP);
    let base_score = (prior / (1.0 - prior)).ln();

    let binned = BinnedMatrix::new(features, params.max_bins);
    let rows: Vec<u32> = (0..features.n_rows as u32).collect();
    let mut margins = vec![base_score; features.n_rows];
    let mut grad = vec![0.0; features.n_rows];
    let mut hess = vec![0.0; features.n_rows];
    let mut trees = Vec::with_capacity(params.n_trees);

    let mut valid_margins = validation.map(|(m, _)| vec![base_score; m.n_rows]);
    let mut best_loss = f64::INFINITY;
    let mut best_len = 0;

    for _ in 0..params.n_trees {
        for i in 0..features.n_rows {
            let y = target.values[i];
            let (g, h) = logistic_grad_hess(margins[i], y);
            grad[i] = g * weight(y);
            hess[i] = h * weight(y);
        }
        let grown = grow::grow_tree(&binned, &rows, &grad, &hess, params);
        for &(r, v) in &grown.row_values {
            margins[r as usize] += v;
        }
        if let (Some((vm, vt)), Some(acc)) = (validation, valid_margins.as_mut()) {
            for (i, m) in acc.iter_mut().enumerate() {
                *m += grown.tree.predict_row(vm.row(i));
            }
            trees.push(grown.tree);
            let loss = log_loss(acc, vt);
            if loss < best_loss {
                best_loss = loss;
                best_len = trees.len();
            } else if let Some(patience) = params.early_stopping_rounds {
                if trees.len() - best_len >= patience {
                    trees.truncate(best_len);
                    break;
                }
            }
        } else {
            trees.push(grown.tree);
        }
    }
    Forest::new(base_score, params.clone(), features.feature_names.clone(), trees)
}

fn check_width(model: &Forest, features: &FeatureMatrix) -> Result<()> {
    if features.n_features() != model.n_features() {
        return Err(Error::Schema(format!(
            "model expects {} features, matrix has {}",
            model.n_features(),
            features.n_features()
        )));
    }
    Ok(())
}

pub fn predict_margin(model: &Forest, features: &FeatureMatrix) -> Result<Vec<f64>> {
    check_width(model, features)?;
    Ok((0..features.n_rows)
        .into_par_iter()
        .map(|r| model.margin_row(features.row(r)))
        .collect())
}

pub fn predict_proba(model: &Forest, features: &FeatureMatrix) -> Result<Vec<f64>> {
    Ok(predict_margin(model, features)?.into_iter().map(sigmoid).collect())
}

/// Labels at the 0.5 probability threshold.
pub fn predict_labels(model: &Forest, features: &FeatureMatrix) -> Result<Vec<u8>> {
    Ok(predict_proba(model, features)?
        .into_iter()
        .map(|p| u8::from(p >= 0.5))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn matrix(cols: &[&str], rows: &[Vec<f64>]) -> FeatureMatrix {
        FeatureMatrix::from_rows(cols.iter().map(|s| s.to_string()).collect(), rows).unwrap()
    }

    fn tiny_params() -> GbdtParams {
        GbdtParams {
            n_trees: 1,
            learning_rate: 1.0,
            lambda_l2: 0.0,
            gamma: 0.0,
            min_samples_leaf: 1,
            min_hessian_leaf: 0.0,
            ..GbdtParams::default()
        }
    }

    #[test]
    fn grad_hess_examples() {
        assert_eq!(logistic_grad_hess(0.0, 1), (-0.5, 0.25));
        let (g, h) = logistic_grad_hess(50.0, 0);
        assert!((g - 1.0).abs() < 1e-15);
        assert!(h < 1e-20 || h == HESSIAN_FLOOR);
        assert_eq!(logistic_grad_hess(1e4, 0).1, HESSIAN_FLOOR);
    }

    #[test]
    fn zero_trees_gives_prior() {
        let x = matrix(&["x"], &[vec![0.0], vec![1.0], vec![2.0], vec![3.0]]);
        let y = BinaryTarget::new(vec![1, 1, 0, 0]).unwrap();
        let f = fit(&x, &y, &GbdtParams { n_trees: 0, ..tiny_params() }).unwrap();
        assert_eq!(f.base_score, 0.0);
        assert_eq!(predict_proba(&f, &x).unwrap(), vec![0.5; 4]);
    }

    #[test]
    fn single_round_single_split_by_hand() {
        let x = matrix(&["x"], &[vec![0.0], vec![0.0], vec![1.0], vec![1.0]]);
        let y = BinaryTarget::new(vec![0, 0, 1, 1]).unwrap();
        let f = fit(&x, &y, &tiny_params()).unwrap();
        assert_eq!(f.base_score, 0.0);
        let nodes = f.trees[0].nodes();
        assert_eq!(nodes.len(), 3);
        match nodes[0] {
            Node::Split { feature, threshold, cover, .. } => {
                assert_eq!((feature, threshold, cover), (0, 0.5, 1.0));
            }
            _ => panic!("expected a split"),
        }
        assert_eq!(nodes[1], Node::Leaf { value: -2.0, cover: 0.5 });
        assert_eq!(nodes[2], Node::Leaf { value: 2.0, cover: 0.5 });
        let p = predict_proba(&f, &x).unwrap();
        let lo = 1.0 / (1.0 + 2f64.exp());
        for (got, want) in p.iter().zip([lo, lo, 1.0 - lo, 1.0 - lo]) {
            assert!((got - want).abs() < 1e-15);
        }
        assert!((lo - 0.119).abs() < 1e-3);
    }

    #[test]
    fn missing_cells_follow_the_learned_side() {
        let rows: Vec<Vec<f64>> = (0..40)
            .map(|i| {
                let v = if i % 4 == 0 { f64::NAN } else { (i % 2) as f64 };
                vec![v]
            })
            .collect();
        // label 1 when x = 1 or missing
        let y = BinaryTarget::new(
            rows.iter().map(|r| u8::from(r[0].is_nan() || r[0] == 1.0)).collect(),
        )
        .unwrap();
        let x = matrix(&["x"], &rows);
        let f = fit(&x, &y, &GbdtParams { n_trees: 5, min_samples_leaf: 2, ..tiny_params() }).unwrap();
        match f.trees[0].nodes()[0] {
            Node::Split { default_left, .. } => assert!(!default_left),
            _ => panic!("expected a split"),
        }
        let probe = matrix(&["x"], &[vec![f64::NAN], vec![0.0]]);
        let p = predict_proba(&f, &probe).unwrap();
        assert!(p[0] > 0.9 && p[1] < 0.1);
    }

    #[test]
    fn training_errors() {
        let x = matrix(&["x"], &[vec![0.0], vec![1.0]]);
        let same = BinaryTarget::new(vec![1, 1]).unwrap();
        assert!(matches!(fit(&x, &same, &tiny_params()), Err(Error::Training(_))));
        let empty = FeatureMatrix::new(vec![], 2, vec![]).unwrap();
        let y = BinaryTarget::new(vec![0, 1]).unwrap();
        assert!(matches!(fit(&empty, &y, &tiny_params()), Err(Error::Training(_))));
        let bad = GbdtParams { learning_rate: 0.0, ..tiny_params() };
        assert!(matches!(fit(&x, &y, &bad), Err(Error::Parameter(_))));
        let wide = matrix(&["x", "z"], &[vec![0.0, 0.0]]);
        let f = fit(&x, &y, &tiny_params()).unwrap();
        assert!(matches!(predict_margin(&f, &wide), Err(Error::Schema(_))));
    }

    #[test]
    fn probability_guard() {
        assert_eq!(sigmoid(0.0), 0.5);
        let hi = sigmoid(1e6);
        let lo = sigmoid(-1e6);
        assert!(hi > 0.0 && hi <= 1.0 && lo > 0.0 && lo < 1.0);
    }

    #[test]
    fn early_stopping_truncates() {
        let rows: Vec<Vec<f64>> = (0..200).map(|i| vec![(i % 17) as f64, (i % 5) as f64]).collect();
        let y = BinaryTarget::new((0..200).map(|i| u8::from((i * 7919) % 13 < 4)).collect()).unwrap();
        let x = matrix(&["a", "b"], &rows);
        let params = GbdtParams {
            n_trees: 200,
            learning_rate: 0.5,
            min_samples_leaf: 1,
            early_stopping_rounds: Some(3),
            ..GbdtParams::default()
        };
        let f = fit_with_validation(&x, &y, Some((&x.select_rows(&[0, 1, 2, 3]), &y.select(&[0, 1, 2, 3]))), &params).unwrap();
        assert!(f.trees.len() < 200);
    }
}
