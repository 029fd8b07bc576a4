//! Predictive-signal filter.
//!
//! A small bagged forest of extremely randomized regression trees is fit to
//! the dataset (classification targets one-hot encoded). The dataset passes
//! if the out-of-bag predictions beat the constant mean-label predictor on
//! enough bootstrap resamples of the per-sample squared-error differences.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::linalg::Matrix;
use crate::rng::RngStream;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SplitRule {
    /// Every feature gets one uniform threshold between its node min and max;
    /// the candidate with the largest variance reduction wins.
    ExtraTrees,
    /// One uniformly chosen non-constant feature with a uniform threshold.
    TotallyRandom,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FilterConfig {
    pub n_estimators: usize,
    pub max_depth: usize,
    pub n_bootstrap: usize,
    pub required_fraction: f64,
    pub split_rule: SplitRule,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            n_estimators: 25,
            max_depth: 6,
            n_bootstrap: 200,
            required_fraction: 0.95,
            split_rule: SplitRule::TotallyRandom,
        }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_estimators == 0 || self.n_bootstrap == 0 {
            return Err(invalid("filter needs at least one tree and one bootstrap resample"));
        }
        if !(0.0..=1.0).contains(&self.required_fraction) {
            return Err(invalid("required_fraction must lie in [0, 1]"));
        }
        Ok(())
    }

    /// Number of winning resamples needed to accept.
    pub fn required_wins(&self) -> usize {
        (self.required_fraction * self.n_bootstrap as f64 - 1e-9).ceil() as usize
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FilterOutcome {
    pub accept: bool,
    pub wins: usize,
    pub n_bootstrap: usize,
    /// Samples with at least one out-of-bag tree.
    pub n_scored: usize,
    pub oob_mse: f64,
    pub baseline_mse: f64,
}

#[derive(Clone, Debug)]
enum Node {
    Leaf(Vec<f64>),
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Clone, Debug)]
pub struct RegressionTree {
    nodes: Vec<Node>,
}

impl RegressionTree {
    pub fn predict(&self, x: &[f64]) -> &[f64] {
        let mut at = 0;
        loop {
            match &self.nodes[at] {
                Node::Leaf(v) => return v,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => at = if x[*feature] <= *threshold { *left } else { *right },
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn go(nodes: &[Node], at: usize) -> usize {
            match &nodes[at] {
                Node::Leaf(_) => 0,
                Node::Split { left, right, .. } => 1 + go(nodes, *left).max(go(nodes, *right)),
            }
        }
        go(&self.nodes, 0)
    }
}

struct Builder<'a> {
    /// Features stored column-major: `xt.row(j)` is feature `j`.
    xt: &'a Matrix,
    y: &'a Matrix,
    rule: SplitRule,
    max_depth: usize,
    nodes: Vec<Node>,
}

impl Builder<'_> {
    fn leaf_value(&self, idx: &[usize]) -> Vec<f64> {
        let k = self.y.cols();
        let mut mean = vec![0.0; k];
        for &i in idx {
            for (m, v) in mean.iter_mut().zip(self.y.row(i)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= idx.len() as f64);
        mean
    }

    fn is_pure(&self, idx: &[usize]) -> bool {
        let first = self.y.row(idx[0]);
        idx.iter().all(|&i| self.y.row(i) == first)
    }

    fn feature_range(&self, j: usize, idx: &[usize]) -> (f64, f64) {
        let col = self.xt.row(j);
        idx.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &i| {
            (lo.min(col[i]), hi.max(col[i]))
        })
    }

    fn varies(&self, j: usize, idx: &[usize]) -> bool {
        let col = self.xt.row(j);
        let first = col[idx[0]];
        idx.iter().any(|&i| col[i] != first)
    }

    /// Proxy for the variance reduction of a split: Σ_k (S_L² / n_L + S_R² / n_R).
    fn split_score(&self, j: usize, threshold: f64, idx: &[usize], left_sum: &mut [f64], total: &[f64]) -> Option<f64> {
        let col = self.xt.row(j);
        left_sum.iter_mut().for_each(|s| *s = 0.0);
        let mut n_left = 0usize;
        for &i in idx {
            if col[i] <= threshold {
                n_left += 1;
                for (s, v) in left_sum.iter_mut().zip(self.y.row(i)) {
                    *s += v;
                }
            }
        }
        let n_right = idx.len() - n_left;
        if n_left == 0 || n_right == 0 {
            return None;
        }
        let score = left_sum
            .iter()
            .zip(total)
            .map(|(l, t)| l * l / n_left as f64 + (t - l) * (t - l) / n_right as f64)
            .sum();
        Some(score)
    }

    fn choose_split(&self, idx: &[usize], stream: &mut RngStream) -> Option<(usize, f64)> {
        let d = self.xt.rows();
        match self.rule {
            SplitRule::TotallyRandom => {
                let candidates: Vec<usize> = (0..d).filter(|&j| self.varies(j, idx)).collect();
                if candidates.is_empty() {
                    return None;
                }
                let j = candidates[stream.index(candidates.len())];
                let (lo, hi) = self.feature_range(j, idx);
                Some((j, draw_threshold(lo, hi, stream)))
            }
            SplitRule::ExtraTrees => {
                let total = self.leaf_value(idx).iter().map(|m| m * idx.len() as f64).collect::<Vec<_>>();
                let mut left = vec![0.0; self.y.cols()];
                let mut best: Option<(usize, f64, f64)> = None;
                for j in 0..d {
                    let (lo, hi) = self.feature_range(j, idx);
                    if hi <= lo {
                        continue;
                    }
                    let t = draw_threshold(lo, hi, stream);
                    if let Some(score) = self.split_score(j, t, idx, &mut left, &total) {
                        if best.is_none_or(|(_, _, s)| score > s) {
                            best = Some((j, t, score));
                        }
                    }
                }
                best.map(|(j, t, _)| (j, t))
            }
        }
    }

    fn build(&mut self, idx: &mut [usize], depth: usize, stream: &mut RngStream) -> usize {
        let at = self.nodes.len();
        self.nodes.push(Node::Leaf(Vec::new()));
        let split = if depth < self.max_depth && idx.len() >= 2 && !self.is_pure(idx) {
            self.choose_split(idx, stream)
        } else {
            None
        };
        match split {
            None => self.nodes[at] = Node::Leaf(self.leaf_value(idx)),
            Some((feature, threshold)) => {
                let col = self.xt.row(feature);
                let mut mid = 0;
                for k in 0..idx.len() {
                    if col[idx[k]] <= threshold {
                        idx.swap(k, mid);
                        mid += 1;
                    }
                }
                let (l, r) = idx.split_at_mut(mid);
                let left = self.build(l, depth + 1, stream);
                let right = self.build(r, depth + 1, stream);
                self.nodes[at] = Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                };
            }
        }
        at
    }
}

/// Uniform threshold in `[lo, hi)`, kept strictly below `hi` so both sides are non-empty.
fn draw_threshold(lo: f64, hi: f64, stream: &mut RngStream) -> f64 {
    let t = lo + stream.uniform() * (hi - lo);
    if t >= hi {
        lo
    } else {
        t
    }
}

pub fn fit_tree(
    xt: &Matrix,
    y: &Matrix,
    sample: &[usize],
    rule: SplitRule,
    max_depth: usize,
    stream: &mut RngStream,
) -> RegressionTree {
    let mut b = Builder {
        xt,
        y,
        rule,
        max_depth,
        nodes: Vec::new(),
    };
    let mut idx = sample.to_vec();
    b.build(&mut idx, 0, stream);
    RegressionTree { nodes: b.nodes }
}

/// Bootstrap row indices for every tree, drawn from `stream`.
pub fn draw_bootstrap(n: usize, n_trees: usize, stream: &RngStream) -> Vec<Vec<usize>> {
    (0..n_trees)
        .map(|t| {
            let mut s = stream.split_index(t as u64).split("bootstrap");
            (0..n).map(|_| s.index(n)).collect()
        })
        .collect()
}

/// Fits the forest with the given bootstrap draws and returns out-of-bag
/// predictions (rows without any out-of-bag tree are `None`).
pub fn oob_predictions(
    x: &Matrix,
    y: &Matrix,
    bootstrap: &[Vec<usize>],
    cfg: &FilterConfig,
    stream: &RngStream,
) -> Vec<Option<Vec<f64>>> {
    let n = x.rows();
    let xt = x.transpose();
    let k = y.cols();
    let mut sums = vec![0.0; n * k];
    let mut counts = vec![0usize; n];
    let mut in_bag = vec![false; n];
    for (t, sample) in bootstrap.iter().enumerate() {
        let mut s = stream.split_index(t as u64).split("splits");
        let tree = fit_tree(&xt, y, sample, cfg.split_rule, cfg.max_depth, &mut s);
        in_bag.iter_mut().for_each(|b| *b = false);
        for &i in sample {
            in_bag[i] = true;
        }
        for i in (0..n).filter(|&i| !in_bag[i]) {
            counts[i] += 1;
            for (acc, v) in sums[i * k..(i + 1) * k].iter_mut().zip(tree.predict(x.row(i))) {
                *acc += v;
            }
        }
    }
    (0..n)
        .map(|i| {
            (counts[i] > 0).then(|| sums[i * k..(i + 1) * k].iter().map(|s| s / counts[i] as f64).collect())
        })
        .collect()
}

/// Runs the filter on features `x` and (possibly multi-output) targets `y`.
pub fn filter_xy(x: &Matrix, y: &Matrix, cfg: &FilterConfig, stream: &RngStream) -> Result<FilterOutcome> {
    let bootstrap = draw_bootstrap(x.rows(), cfg.n_estimators, stream);
    filter_with_bootstrap(x, y, &bootstrap, cfg, stream)
}

pub fn filter_with_bootstrap(
    x: &Matrix,
    y: &Matrix,
    bootstrap: &[Vec<usize>],
    cfg: &FilterConfig,
    stream: &RngStream,
) -> Result<FilterOutcome> {
    cfg.validate()?;
    if x.rows() != y.rows() {
        return Err(crate::error::Error::DimensionMismatch {
            context: "filter targets",
            expected: x.rows(),
            got: y.rows(),
        });
    }
    if x.rows() < 2 || x.cols() == 0 || y.cols() == 0 {
        return Err(invalid("filter needs at least two rows, one feature and one target"));
    }
    let k = y.cols();
    let mean: Vec<f64> = (0..k)
        .map(|j| (0..y.rows()).map(|i| y.get(i, j)).sum::<f64>() / y.rows() as f64)
        .collect();
    let oob = oob_predictions(x, y, bootstrap, cfg, stream);
    let mut diffs = Vec::with_capacity(x.rows());
    let (mut oob_se, mut base_se) = (0.0, 0.0);
    for (i, pred) in oob.iter().enumerate() {
        let Some(pred) = pred else { continue };
        let row = y.row(i);
        let e_base = row.iter().zip(&mean).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / k as f64;
        let e_oob = row.iter().zip(pred).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / k as f64;
        oob_se += e_oob;
        base_se += e_base;
        diffs.push(e_base - e_oob);
    }
    let n_scored = diffs.len();
    if n_scored == 0 {
        return Ok(FilterOutcome {
            accept: false,
            wins: 0,
            n_bootstrap: cfg.n_bootstrap,
            n_scored,
            oob_mse: f64::NAN,
            baseline_mse: f64::NAN,
        });
    }
    // canonical order so the resampling does not depend on row order
    diffs.sort_by(f64::total_cmp);
    let wins = paired_bootstrap_wins(&diffs, cfg.n_bootstrap, &mut stream.split("bootstrap-test"));
    Ok(FilterOutcome {
        accept: wins >= cfg.required_wins(),
        wins,
        n_bootstrap: cfg.n_bootstrap,
        n_scored,
        oob_mse: oob_se / n_scored as f64,
        baseline_mse: base_se / n_scored as f64,
    })
}

/// Number of bootstrap resamples of `diffs` whose mean is strictly positive.
pub fn paired_bootstrap_wins(diffs: &[f64], n_bootstrap: usize, stream: &mut RngStream) -> usize {
    let n = diffs.len();
    (0..n_bootstrap)
        .filter(|_| (0..n).map(|_| diffs[stream.index(n)]).sum::<f64>() > 0.0)
        .count()
}

/// One-hot encodes class labels `0..n_classes`.
pub fn one_hot(labels: &[f64], n_classes: usize) -> Matrix {
    let mut m = Matrix::zeros(labels.len(), n_classes);
    for (i, &c) in labels.iter().enumerate() {
        m.set(i, c as usize, 1.0);
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;

    fn data(seed: u64, n: usize, signal: bool) -> (Matrix, Matrix) {
        let mut s = RngStream::new(seed);
        let x = Matrix::from_fn(n, 3, |_, _| s.normal());
        let y = Matrix::from_fn(n, 1, |i, _| if signal { x.get(i, 0) } else { s.normal() });
        (x, y)
    }

    #[test]
    fn signal_is_accepted_and_noise_rejected() {
        let cfg = FilterConfig::default();
        let (x, y) = data(1, 300, true);
        assert!(filter_xy(&x, &y, &cfg, &RngStream::new(1)).unwrap().accept);
        let (x, y) = data(2, 300, false);
        assert!(!filter_xy(&x, &y, &cfg, &RngStream::new(2)).unwrap().accept);
    }

    #[test]
    fn baseline_mse_is_biased_variance() {
        let (x, y) = data(3, 200, false);
        let cfg = FilterConfig::default();
        // the first tree trains on row 0 alone
        let mut boot = draw_bootstrap(200, cfg.n_estimators, &RngStream::new(0));
        boot[0] = vec![0; 200];
        let out = filter_with_bootstrap(&x, &y, &boot, &cfg, &RngStream::new(0)).unwrap();
        let col = y.column(0);
        let mean = col.iter().sum::<f64>() / 200.0;
        let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 200.0;
        assert_eq!(out.n_scored, 200);
        assert!((out.baseline_mse - var).abs() < 1e-12);
    }

    #[test]
    fn trees_respect_depth() {
        let (x, y) = data(4, 256, true);
        let xt = x.transpose();
        let idx: Vec<usize> = (0..256).collect();
        for rule in [SplitRule::ExtraTrees, SplitRule::TotallyRandom] {
            let t = fit_tree(&xt, &y, &idx, rule, 6, &mut RngStream::new(1));
            assert!(t.depth() <= 6);
        }
    }

    #[test]
    fn required_wins_at_default() {
        assert_eq!(FilterConfig::default().required_wins(), 190);
    }
}
