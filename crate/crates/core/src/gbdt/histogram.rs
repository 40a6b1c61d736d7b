//! Quantile binning and per-node gradient histograms.

use rayon::prelude::*;

use crate::tabular::FeatureMatrix;

/// Upper bin edges of one feature: a finite value `x` lands in the first
/// bin `b` with `x <= edges[b]`, or in the last finite bin. Missing values
/// use a dedicated bin after the finite ones.
#[derive(Debug, Clone, PartialEq)]
pub struct BinEdges {
    pub edges: Vec<f64>,
}

impl BinEdges {
    /// At most `max_bins - 1` edges. Few distinct values get one bin each,
    /// split at midpoints; otherwise edges sit at training quantiles.
    pub fn from_values(values: &[f64], max_bins: usize) -> Self {
        let mut sorted: Vec<f64> = values.iter().copied().filter(|v| !v.is_nan()).collect();
        sorted.sort_by(f64::total_cmp);
        let mut distinct = sorted.clone();
        distinct.dedup();
        let mut edges: Vec<f64> = if distinct.len() <= max_bins {
            distinct.windows(2).map(|w| w[0] + (w[1] - w[0]) / 2.0).collect()
        } else {
            let n = sorted.len();
            (1..max_bins).map(|q| sorted[q * n / max_bins]).collect()
        };
        edges.dedup();
        if let Some(&top) = distinct.last() {
            edges.retain(|&e| e < top);
        }
        Self { edges }
    }

    pub fn n_finite_bins(&self) -> usize {
        self.edges.len() + 1
    }

    pub fn missing_bin(&self) -> usize {
        self.edges.len() + 1
    }

    pub fn bin(&self, x: f64) -> usize {
        if x.is_nan() {
            self.missing_bin()
        } else {
            self.edges.partition_point(|&e| e < x)
        }
    }
}

/// Column-major bin indices for a training matrix.
#[derive(Debug, Clone)]
pub struct BinnedMatrix {
    pub n_rows: usize,
    pub edges: Vec<BinEdges>,
    pub bins: Vec<Vec<u16>>,
}

impl BinnedMatrix {
    pub fn new(features: &FeatureMatrix, max_bins: usize) -> Self {
        let (edges, bins): (Vec<_>, Vec<_>) = (0..features.n_features())
            .into_par_iter()
            .map(|j| {
                let col = features.column(j);
                let edges = BinEdges::from_values(&col, max_bins);
                let bins = col.iter().map(|&x| edges.bin(x) as u16).collect();
                (edges, bins)
            })
            .unzip();
        Self {
            n_rows: features.n_rows,
            edges,
            bins,
        }
    }

    pub fn n_features(&self) -> usize {
        self.edges.len()
    }
}

/// Gradient sum, hessian sum and row count per bin of one feature; the
/// last entry is the missing bin.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureHistogram {
    pub grad: Vec<f64>,
    pub hess: Vec<f64>,
    pub count: Vec<u32>,
}

impl FeatureHistogram {
    fn zeros(n: usize) -> Self {
        Self {
            grad: vec![0.0; n],
            hess: vec![0.0; n],
            count: vec![0; n],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub features: Vec<FeatureHistogram>,
}

impl Histogram {
    /// Accumulates `rows` in the given order, one feature per task, so the
    /// sums do not depend on scheduling.
    pub fn build(binned: &BinnedMatrix, rows: &[u32], grad: &[f64], hess: &[f64]) -> Self {
        let features = (0..binned.n_features())
            .into_par_iter()
            .map(|j| {
                let bins = &binned.bins[j];
                let mut h = FeatureHistogram::zeros(binned.edges[j].missing_bin() + 1);
                for &r in rows {
                    let r = r as usize;
                    let b = bins[r] as usize;
                    h.grad[b] += grad[r];
                    h.hess[b] += hess[r];
                    h.count[b] += 1;
                }
                h
            })
            .collect();
        Self { features }
    }

    /// `self - other`, bin by bin (sibling histogram from parent and child).
    pub fn subtract(&self, other: &Histogram) -> Histogram {
        let features = self
            .features
            .iter()
            .zip(&other.features)
            .map(|(a, b)| FeatureHistogram {
                grad: a.grad.iter().zip(&b.grad).map(|(x, y)| x - y).collect(),
                hess: a.hess.iter().zip(&b.hess).map(|(x, y)| x - y).collect(),
                count: a.count.iter().zip(&b.count).map(|(x, y)| x - y).collect(),
            })
            .collect();
        Histogram { features }
    }
}
