use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::preprocess::{check_version, FORMAT_VERSION};

use super::GbdtParams;

/// One node of a tree stored in preorder. Covers are training hessian sums.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Node {
    Leaf {
        value: f64,
        cover: f64,
    },
    Split {
        feature: usize,
        /// Rows with `x <= threshold` go left.
        threshold: f64,
        /// Where rows with a missing value go.
        default_left: bool,
        left: usize,
        right: usize,
        cover: f64,
    },
}

impl Node {
    pub fn cover(&self) -> f64 {
        match *self {
            Node::Leaf { cover, .. } | Node::Split { cover, .. } => cover,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    /// Builds a tree from preorder nodes (root at 0, children after parents).
    pub fn new(nodes: Vec<Node>) -> Result<Self> {
        if nodes.is_empty() {
            return Err(Error::Model("tree has no nodes".into()));
        }
        let mut parents = vec![0usize; nodes.len()];
        for (i, node) in nodes.iter().enumerate() {
            if let Node::Split {
                threshold,
                left,
                right,
                ..
            } = *node
            {
                if !threshold.is_finite() {
                    return Err(Error::Model(format!("node {i} has non-finite threshold")));
                }
                for child in [left, right] {
                    if child <= i || child >= nodes.len() {
                        return Err(Error::Model(format!("node {i} has invalid child {child}")));
                    }
                    parents[child] += 1;
                }
            }
        }
        if parents[0] != 0 || parents[1..].iter().any(|&p| p != 1) {
            return Err(Error::Model("nodes do not form a single tree".into()));
        }
        Ok(Self { nodes })
    }

    pub fn leaf(value: f64, cover: f64) -> Self {
        Self {
            nodes: vec![Node::Leaf { value, cover }],
        }
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    /// Index of the leaf reached by `row`.
    pub fn leaf_index(&self, row: &[f64]) -> usize {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf { .. } => return i,
                Node::Split {
                    feature,
                    threshold,
                    default_left,
                    left,
                    right,
                    ..
                } => {
                    let x = row[feature];
                    let go_left = if x.is_nan() { default_left } else { x <= threshold };
                    i = if go_left { left } else { right };
                }
            }
        }
    }

    pub fn predict_row(&self, row: &[f64]) -> f64 {
        match self.nodes[self.leaf_index(row)] {
            Node::Leaf { value, .. } => value,
            Node::Split { .. } => unreachable!(),
        }
    }

    pub fn max_feature(&self) -> Option<usize> {
        self.nodes
            .iter()
            .filter_map(|n| match n {
                Node::Split { feature, .. } => Some(*feature),
                Node::Leaf { .. } => None,
            })
            .max()
    }

    pub fn depth(&self) -> usize {
        fn go(nodes: &[Node], i: usize) -> usize {
            match nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + go(nodes, left).max(go(nodes, right)),
            }
        }
        go(&self.nodes, 0)
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(n, Node::Leaf { .. }))
            .count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    pub format_version: u32,
    /// Initial log-odds.
    pub base_score: f64,
    pub params: GbdtParams,
    pub feature_names: Vec<String>,
    pub trees: Vec<Tree>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
}

impl Forest {
    pub fn new(base_score: f64, params: GbdtParams, feature_names: Vec<String>, trees: Vec<Tree>) -> Result<Self> {
        let width = feature_names.len();
        if let Some(f) = trees.iter().filter_map(Tree::max_feature).find(|&f| f >= width) {
            return Err(Error::Model(format!("tree splits on feature {f} but model has {width}")));
        }
        Ok(Self {
            format_version: FORMAT_VERSION,
            base_score,
            params,
            feature_names,
            trees,
            config_hash: None,
        })
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn margin_row(&self, row: &[f64]) -> f64 {
        self.base_score + self.trees.iter().map(|t| t.predict_row(row)).sum::<f64>()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        check_version(&value)?;
        let forest: Forest = serde_json::from_value(value)?;
        let trees = forest
            .trees
            .iter()
            .map(|t| Tree::new(t.nodes.clone()))
            .collect::<Result<Vec<_>>>()?;
        let mut checked = Forest::new(forest.base_score, forest.params, forest.feature_names, trees)?;
        checked.config_hash = forest.config_hash;
        Ok(checked)
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n")?;
        Ok(())
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
