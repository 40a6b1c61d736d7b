//! Leaf-wise growth of a single regression tree on gradient statistics.

use rayon::prelude::*;

use super::histogram::{BinnedMatrix, Histogram};
use super::tree::{Node, Tree};
use super::GbdtParams;

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct SplitCandidate {
    pub gain: f64,
    pub feature: usize,
    /// Last finite bin routed left.
    pub bin: usize,
    pub default_left: bool,
}

/// Split objective: `½[G_L²/(H_L+λ) + G_R²/(H_R+λ) − G²/(H+λ)] − γ`.
pub fn split_gain(g_left: f64, h_left: f64, g_right: f64, h_right: f64, lambda: f64, gamma: f64) -> f64 {
    let score = |g: f64, h: f64| g * g / (h + lambda);
    0.5 * (score(g_left, h_left) + score(g_right, h_right)
        - score(g_left + g_right, h_left + h_right))
        - gamma
}

#[derive(Clone, Copy)]
struct Side {
    grad: f64,
    hess: f64,
    count: u32,
}

fn admissible(side: Side, params: &GbdtParams) -> bool {
    side.count as usize >= params.min_samples_leaf && side.hess >= params.min_hessian_leaf
}

/// Best split over all features and bin boundaries; the missing bin is
/// tried on both sides. Ties go to the lower feature, then the lower bin.
pub(crate) fn best_split(hist: &Histogram, binned: &BinnedMatrix, params: &GbdtParams) -> Option<SplitCandidate> {
    let per_feature: Vec<Option<SplitCandidate>> = hist
        .features
        .par_iter()
        .enumerate()
        .map(|(feature, fh)| {
            let n_finite = binned.edges[feature].n_finite_bins();
            let m = n_finite;
            let missing = Side {
                grad: fh.grad[m],
                hess: fh.hess[m],
                count: fh.count[m],
            };
            let mut total = missing;
            for b in 0..n_finite {
                total.grad += fh.grad[b];
                total.hess += fh.hess[b];
                total.count += fh.count[b];
            }
            let mut best: Option<SplitCandidate> = None;
            let mut acc = Side { grad: 0.0, hess: 0.0, count: 0 };
            for b in 0..n_finite.saturating_sub(1) {
                acc.grad += fh.grad[b];
                acc.hess += fh.hess[b];
                acc.count += fh.count[b];
                let evaluate = |left: Side| -> Option<f64> {
                    let right = Side {
                        grad: total.grad - left.grad,
                        hess: total.hess - left.hess,
                        count: total.count - left.count,
                    };
                    (admissible(left, params) && admissible(right, params)).then(|| {
                        split_gain(left.grad, left.hess, right.grad, right.hess, params.lambda_l2, params.gamma)
                    })
                };
                let (gain, default_left) = if missing.count == 0 {
                    let Some(gain) = evaluate(acc) else { continue };
                    let right_hess = total.hess - acc.hess;
                    (gain, acc.hess >= right_hess)
                } else {
                    let with_missing = Side {
                        grad: acc.grad + missing.grad,
                        hess: acc.hess + missing.hess,
                        count: acc.count + missing.count,
                    };
                    match (evaluate(acc), evaluate(with_missing)) {
                        (None, None) => continue,
                        (Some(right), None) => (right, false),
                        (None, Some(left)) => (left, true),
                        (Some(right), Some(left)) => {
                            if left >= right {
                                (left, true)
                            } else {
                                (right, false)
                            }
                        }
                    }
                };
                if best.is_none_or(|c| gain > c.gain) {
                    best = Some(SplitCandidate {
                        gain,
                        feature,
                        bin: b,
                        default_left,
                    });
                }
            }
            best
        })
        .collect();
    per_feature
        .into_iter()
        .flatten()
        .fold(None, |best: Option<SplitCandidate>, c| match best {
            Some(b) if b.gain >= c.gain => Some(b),
            _ => Some(c),
        })
}

enum BuildNode {
    Leaf { hess: f64 },
    Split {
        feature: usize,
        threshold: f64,
        default_left: bool,
        left: usize,
        right: usize,
    },
}

struct OpenLeaf {
    node: usize,
    start: usize,
    end: usize,
    depth: usize,
    hist: Histogram,
    best: Option<SplitCandidate>,
}

/// Result of growing one tree: the tree plus, for every training row in
/// `rows`, the value of the leaf it landed in.
pub(crate) struct GrownTree {
    pub tree: Tree,
    pub row_values: Vec<(u32, f64)>,
}

pub(crate) fn grow_tree(
    binned: &BinnedMatrix,
    rows: &[u32],
    grad: &[f64],
    hess: &[f64],
    params: &GbdtParams,
) -> GrownTree {
    let mut order = rows.to_vec();
    let mut arena: Vec<BuildNode> = Vec::new();
    let depth_ok = |d: usize| params.max_depth.is_none_or(|m| d < m);

    let root_hist = Histogram::build(binned, &order, grad, hess);
    let root_best = if depth_ok(0) { best_split(&root_hist, binned, params) } else { None };
    arena.push(BuildNode::Leaf { hess: 0.0 });
    let mut open = vec![OpenLeaf {
        node: 0,
        start: 0,
        end: order.len(),
        depth: 0,
        hist: root_hist,
        best: root_best,
    }];
    let mut n_leaves = 1;

    while n_leaves < params.max_leaves {
        let pick = open
            .iter()
            .enumerate()
            .filter_map(|(i, l)| l.best.filter(|c| c.gain > 0.0).map(|c| (i, c.gain)))
            .fold(None, |acc: Option<(usize, f64)>, (i, g)| match acc {
                Some((_, bg)) if bg >= g => acc,
                _ => Some((i, g)),
            });
        let Some((idx, _)) = pick else { break };
        let leaf = open.swap_remove(idx);
        let split = leaf.best.unwrap();
        let bins = &binned.bins[split.feature];
        let missing_bin = binned.edges[split.feature].missing_bin();
        let goes_left = |r: u32| {
            let b = bins[r as usize] as usize;
            if b == missing_bin {
                split.default_left
            } else {
                b <= split.bin
            }
        };
        let slice = &order[leaf.start..leaf.end];
        let (left_rows, right_rows): (Vec<u32>, Vec<u32>) = slice.iter().partition(|&&r| goes_left(r));
        let mid = leaf.start + left_rows.len();
        order[leaf.start..mid].copy_from_slice(&left_rows);
        order[mid..leaf.end].copy_from_slice(&right_rows);

        let (small, large_is_left) = if left_rows.len() <= right_rows.len() {
            (&left_rows, false)
        } else {
            (&right_rows, true)
        };
        let small_hist = Histogram::build(binned, small, grad, hess);
        let large_hist = leaf.hist.subtract(&small_hist);
        let (left_hist, right_hist) = if large_is_left {
            (large_hist, small_hist)
        } else {
            (small_hist, large_hist)
        };

        let left_node = arena.len();
        let right_node = left_node + 1;
        arena.push(BuildNode::Leaf { hess: 0.0 });
        arena.push(BuildNode::Leaf { hess: 0.0 });
        arena[leaf.node] = BuildNode::Split {
            feature: split.feature,
            threshold: binned.edges[split.feature].edges[split.bin],
            default_left: split.default_left,
            left: left_node,
            right: right_node,
        };
        let depth = leaf.depth + 1;
        for (node, start, end, hist) in [
            (left_node, leaf.start, mid, left_hist),
            (right_node, mid, leaf.end, right_hist),
        ] {
            let best = if depth_ok(depth) { best_split(&hist, binned, params) } else { None };
            open.push(OpenLeaf { node, start, end, depth, hist, best });
        }
        n_leaves += 1;
    }
    open.sort_by_key(|l| l.node);

    let mut row_values = Vec::with_capacity(order.len());
    let mut leaf_values = vec![0.0; arena.len()];
    for leaf in &open {
        let rows = &order[leaf.start..leaf.end];
        let g: f64 = rows.iter().map(|&r| grad[r as usize]).sum();
        let h: f64 = rows.iter().map(|&r| hess[r as usize]).sum();
        let value = -params.learning_rate * g / (h + params.lambda_l2);
        arena[leaf.node] = BuildNode::Leaf { hess: h };
        leaf_values[leaf.node] = value;
        row_values.extend(rows.iter().map(|&r| (r, value)));
    }

    let mut nodes = Vec::with_capacity(arena.len());
    emit_preorder(&arena, &leaf_values, 0, &mut nodes);
    let tree = Tree::new(nodes).expect("grown tree is well formed");
    GrownTree { tree, row_values }
}

/// Appends the subtree at `i` in preorder and returns its cover; split
/// covers are the exact sums of their children's covers.
fn emit_preorder(arena: &[BuildNode], leaf_values: &[f64], i: usize, out: &mut Vec<Node>) -> f64 {
    match arena[i] {
        BuildNode::Leaf { hess, .. } => {
            out.push(Node::Leaf {
                value: leaf_values[i],
                cover: hess,
            });
            hess
        }
        BuildNode::Split {
            feature,
            threshold,
            default_left,
            left,
            right,
        } => {
            let at = out.len();
            out.push(Node::Leaf { value: 0.0, cover: 0.0 });
            let left_at = out.len();
            let left_cover = emit_preorder(arena, leaf_values, left, out);
            let right_at = out.len();
            let right_cover = emit_preorder(arena, leaf_values, right, out);
            let cover = left_cover + right_cover;
            out[at] = Node::Split {
                feature,
                threshold,
                default_left,
                left: left_at,
                right: right_at,
                cover,
            };
            cover
        }
    }
}
