//! Independent reference computations used by the property and acceptance
//! tests. Nothing here calls the routine it checks.
#![allow(dead_code, clippy::too_many_arguments)]

use mortality_core::gbdt::{Forest, GbdtParams, Node, Tree};
use mortality_core::rng::{self, SeededRng};
use rand_core::Rng;

pub fn unit(rng: &mut SeededRng) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

// ---------------------------------------------------------------- t tests

/// Lanczos approximation (g = 7, n = 9).
pub fn ln_gamma(x: f64) -> f64 {
    const G: f64 = 7.0;
    const C: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = C[0];
    let t = x + G + 0.5;
    for (i, c) in C.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

pub fn t_pdf(x: f64, df: f64) -> f64 {
    let ln_norm = ln_gamma((df + 1.0) / 2.0) - ln_gamma(df / 2.0) - 0.5 * (df * std::f64::consts::PI).ln();
    (ln_norm - (df + 1.0) / 2.0 * (1.0 + x * x / df).ln()).exp()
}

fn simpson(a: f64, b: f64, fa: f64, fm: f64, fb: f64) -> f64 {
    (b - a) / 6.0 * (fa + 4.0 * fm + fb)
}

fn adaptive(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, eps: f64, depth: u32) -> f64 {
    let m = 0.5 * (a + b);
    let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
    let (flm, frm) = (f(lm), f(rm));
    let left = simpson(a, m, fa, flm, fm);
    let right = simpson(m, b, fm, frm, fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * eps {
        return left + right + delta / 15.0;
    }
    adaptive(f, a, m, fa, flm, fm, left, eps / 2.0, depth - 1)
        + adaptive(f, m, b, fm, frm, fb, right, eps / 2.0, depth - 1)
}

pub fn integrate(f: &dyn Fn(f64) -> f64, a: f64, b: f64, eps: f64) -> f64 {
    let (fa, fb, fm) = (f(a), f(b), f(0.5 * (a + b)));
    let whole = simpson(a, b, fa, fm, fb);
    adaptive(f, a, b, fa, fm, fb, whole, eps, 50)
}

/// `P(T <= t)` by integrating the density; beyond 1 the substitution
/// `x = 1 / s` keeps the interval finite.
pub fn t_cdf_quadrature(t: f64, df: f64) -> f64 {
    let a = t.abs();
    let mass = if a <= 1.0 {
        integrate(&|x| t_pdf(x, df), 0.0, a, 1e-13)
    } else {
        let core = integrate(&|x| t_pdf(x, df), 0.0, 1.0, 1e-13);
        // ∫_1^a f(x) dx with x = 1/s: ∫_{1/a}^1 f(1/s) / s² ds
        let tail = integrate(&|s: f64| t_pdf(1.0 / s, df) / (s * s), 1.0 / a, 1.0, 1e-13);
        core + tail
    };
    if t >= 0.0 {
        0.5 + mass
    } else {
        0.5 - mass
    }
}

/// Paired t statistic and two-sided p from the quadrature CDF.
pub fn paired_t_quadrature(a: &[f64], b: &[f64]) -> (f64, f64) {
    let n = a.len() as f64;
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = d.iter().sum::<f64>() / n;
    let ss: f64 = d.iter().map(|v| (v - mean) * (v - mean)).sum();
    let t = mean / ((ss / (n - 1.0)).sqrt() / n.sqrt());
    let p = 2.0 * (1.0 - t_cdf_quadrature(t.abs(), n - 1.0));
    (t, p)
}

// --------------------------------------------------------------- chi2

/// Two-class chi-squared of a frequency feature in closed form:
/// `T (q - π)² / (π (1 - π))`, where `T` is the feature total, `q` the
/// share of it in the positive class and `π` the positive prior.
pub fn chi2_closed_form(x: &[f64], y: &[u8]) -> f64 {
    let n = y.len() as f64;
    let pi = y.iter().filter(|&&v| v == 1).count() as f64 / n;
    let total: f64 = x.iter().sum();
    if total == 0.0 || pi == 0.0 || pi == 1.0 {
        return 0.0;
    }
    let pos: f64 = x.iter().zip(y).filter(|(_, &c)| c == 1).map(|(v, _)| v).sum();
    let q = pos / total;
    total * (q - pi) * (q - pi) / (pi * (1.0 - pi))
}

// --------------------------------------------------------------- SHAP

/// Expected output of the subtree at `i` when only features in `known`
/// follow `row`; unknown splits average their children by cover.
fn conditional_value(nodes: &[Node], i: usize, row: &[f64], known: u32) -> f64 {
    match nodes[i] {
        Node::Leaf { value, .. } => value,
        Node::Split { feature, threshold, default_left, left, right, .. } => {
            if known >> feature & 1 == 1 {
                let x = row[feature];
                let go_left = if x.is_nan() { default_left } else { x <= threshold };
                conditional_value(nodes, if go_left { left } else { right }, row, known)
            } else {
                let (cl, cr) = (nodes[left].cover(), nodes[right].cover());
                (cl * conditional_value(nodes, left, row, known) + cr * conditional_value(nodes, right, row, known))
                    / (cl + cr)
            }
        }
    }
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Shapley values of the cover-weighted conditional expectation game,
/// summed over subsets with the classic weights.
pub fn shap_by_subsets(forest: &Forest, row: &[f64]) -> Vec<f64> {
    let m = forest.n_features();
    assert!(m <= 16);
    let value = |s: u32| -> f64 {
        forest.trees.iter().map(|t| conditional_value(t.nodes(), 0, row, s)).sum()
    };
    let values: Vec<f64> = (0..1u32 << m).map(value).collect();
    (0..m)
        .map(|j| {
            let mut phi = 0.0;
            for s in 0..1u32 << m {
                if s >> j & 1 == 1 {
                    continue;
                }
                let size = s.count_ones() as usize;
                let w = 1.0 / (m as f64 * binomial(m - 1, size));
                phi += w * (values[(s | 1 << j) as usize] - values[s as usize]);
            }
            phi
        })
        .collect()
}

fn random_subtree(rng: &mut SeededRng, depth: usize, max_depth: usize, n_features: usize, nodes: &mut Vec<Node>) -> f64 {
    let split = depth < max_depth && (depth == 0 || unit(rng) < 0.7);
    if !split {
        let cover = 0.5 + 10.0 * unit(rng);
        nodes.push(Node::Leaf { value: 4.0 * unit(rng) - 2.0, cover });
        return cover;
    }
    let at = nodes.len();
    nodes.push(Node::Leaf { value: 0.0, cover: 0.0 });
    let feature = rng::below(rng, n_features as u64) as usize;
    let threshold = (unit(rng) * 8.0).round() / 4.0 - 1.0;
    let default_left = rng.next_u64() & 1 == 1;
    let left = nodes.len();
    let cl = random_subtree(rng, depth + 1, max_depth, n_features, nodes);
    let right = nodes.len();
    let cr = random_subtree(rng, depth + 1, max_depth, n_features, nodes);
    nodes[at] = Node::Split { feature, threshold, default_left, left, right, cover: cl + cr };
    cl + cr
}

/// Forest of up to `max_trees` trees of depth at most `max_depth` over
/// `n_features` features, with consistent covers.
pub fn random_forest(seed: u64, max_trees: usize, max_depth: usize, n_features: usize) -> Forest {
    let mut rng = rng::substream(seed, "oracle-forest");
    let n_trees = 1 + rng::below(&mut rng, max_trees as u64) as usize;
    let trees = (0..n_trees)
        .map(|_| {
            let mut nodes = Vec::new();
            random_subtree(&mut rng, 0, max_depth, n_features, &mut nodes);
            Tree::new(nodes).unwrap()
        })
        .collect();
    let names = (0..n_features).map(|j| format!("f{j}")).collect();
    Forest::new(unit(&mut rng) - 0.5, GbdtParams::default(), names, trees).unwrap()
}

/// Instance whose values land on both sides of the random thresholds,
/// exactly on some, and occasionally missing.
pub fn random_row(rng: &mut SeededRng, n_features: usize) -> Vec<f64> {
    (0..n_features)
        .map(|_| {
            let u = unit(rng);
            if u < 0.1 {
                f64::NAN
            } else {
                (unit(rng) * 12.0).round() / 4.0 - 1.5
            }
        })
        .collect()
}

// ---------------------------------------------------------- log-loss

/// Log-loss of one example, straight from the definition.
/// `-ln p` is written as `ln(1 + e^-m)` so large margins keep precision.
pub fn log_loss_one(margin: f64, label: u8) -> f64 {
    if label == 1 {
        (-margin).exp().ln_1p()
    } else {
        margin.exp().ln_1p()
    }
}
