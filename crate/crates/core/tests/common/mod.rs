#![allow(dead_code)]

use tabprior::qdist::QuantileDistribution;
use tabprior::rng::RngStream;

/// Three-point Gauss–Legendre rule on `[a, b]`, exact for quintics and never touching the endpoints.
pub fn gauss3(a: f64, b: f64, f: &impl Fn(f64) -> f64) -> f64 {
    let (m, h) = (0.5 * (a + b), 0.5 * (b - a));
    let r = (0.6f64).sqrt();
    h * (5.0 * f(m - h * r) + 8.0 * f(m) + 5.0 * f(m + h * r)) / 9.0
}

pub fn integrate(a: f64, b: f64, panels: usize, f: &impl Fn(f64) -> f64) -> f64 {
    let h = (b - a) / panels as f64;
    (0..panels).map(|k| gauss3(a + k as f64 * h, a + (k + 1) as f64 * h, f)).sum()
}

/// Integral of `f` over the real line, split at the knots and at `extra`.
/// Knot segments get one rule each, the exponential tails many panels.
fn integrate_over(d: &QuantileDistribution, extra: &[f64], f: impl Fn(f64) -> f64) -> f64 {
    let q = d.knots();
    let lo = q[0] - 80.0 * d.beta_l();
    let hi = q[q.len() - 1] + 80.0 * d.beta_r();
    let mut cuts: Vec<f64> = q.to_vec();
    cuts.extend(extra.iter().copied());
    cuts.push(lo.min(extra.iter().copied().fold(lo, f64::min) - 80.0 * d.beta_l()));
    cuts.push(hi.max(extra.iter().copied().fold(hi, f64::max) + 80.0 * d.beta_r()));
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    let (ql, qr) = (q[0], q[q.len() - 1]);
    cuts.windows(2)
        .map(|w| {
            let panels = if w[0] >= ql && w[1] <= qr { 1 } else { 4_000 };
            integrate(w[0], w[1], panels, &f)
        })
        .sum()
}

/// `∫ (F(t) − 1{t ≥ z})² dt` by quadrature.
pub fn crps_quadrature(d: &QuantileDistribution, z: f64) -> f64 {
    integrate_over(d, &[z], |t| {
        let step = if t >= z { 1.0 } else { 0.0 };
        (d.cdf(t) - step).powi(2)
    })
}

pub fn pdf_integral(d: &QuantileDistribution) -> f64 {
    integrate_over(d, &[], |t| d.pdf(t))
}

/// Isotonic regression by exhaustive search over contiguous block partitions.
pub fn pava_exhaustive(y: &[f64], w: &[f64]) -> Vec<f64> {
    let n = y.len();
    let mut best: Option<(f64, Vec<f64>)> = None;
    for mask in 0u32..(1 << (n - 1)) {
        let mut fit = Vec::with_capacity(n);
        let mut start = 0;
        for end in 1..=n {
            if end == n || mask & (1 << (end - 1)) != 0 {
                let tw: f64 = w[start..end].iter().sum();
                let m = (start..end).map(|k| w[k] * y[k]).sum::<f64>() / tw;
                fit.extend(std::iter::repeat_n(m, end - start));
                start = end;
            }
        }
        if fit.windows(2).any(|p| p[0] > p[1]) {
            continue;
        }
        let sse: f64 = (0..n).map(|k| w[k] * (y[k] - fit[k]).powi(2)).sum();
        if best.as_ref().is_none_or(|(b, _)| sse < *b) {
            best = Some((sse, fit));
        }
    }
    best.unwrap().1
}

/// Random monotone distribution with `k` levels, some pooled knots and random tails.
pub fn random_distribution(stream: &mut RngStream, k: usize, ties: bool) -> QuantileDistribution {
    let mut alphas: Vec<f64> = Vec::with_capacity(k);
    while alphas.len() < k {
        let a = stream.uniform_range(0.002, 0.998);
        if alphas.iter().all(|b| (a - b).abs() > 1e-4) {
            alphas.push(a);
        }
    }
    alphas.sort_by(f64::total_cmp);
    let mut q = Vec::with_capacity(k);
    let mut v = stream.uniform_range(-5.0, 5.0);
    for i in 0..k {
        if i > 0 && !(ties && stream.bernoulli(0.2)) {
            v += -stream.open_uniform().ln() * stream.log_uniform(0.01, 3.0);
        }
        q.push(v);
    }
    let bl = stream.log_uniform(0.02, 5.0);
    let br = stream.log_uniform(0.02, 5.0);
    QuantileDistribution::from_parts(alphas, q, bl, br).unwrap()
}

pub fn median_radius(a: f64, n: usize, stream: &mut RngStream) -> f64 {
    let mut r: Vec<f64> = (0..n).map(|_| tabprior::function::gp_radius(a, stream.uniform())).collect();
    r.sort_by(f64::total_cmp);
    0.5 * (r[n / 2 - 1] + r[n / 2])
}

/// Per-head attention by the textbook formula, with queries already scaled.
/// Returns the output and the per-(head, query) entropies.
pub fn dense_attention(
    q: &tabprior::linalg::Matrix,
    k: &tabprior::linalg::Matrix,
    v: &tabprior::linalg::Matrix,
    heads: usize,
    visible: impl Fn(usize, usize) -> bool,
) -> (tabprior::linalg::Matrix, Vec<f64>) {
    let d = q.cols() / heads;
    let mut out = tabprior::linalg::Matrix::zeros(q.rows(), q.cols());
    let mut entropies = Vec::new();
    for h in 0..heads {
        for i in 0..q.rows() {
            let keys: Vec<usize> = (0..k.rows()).filter(|&j| visible(i, j)).collect();
            let logits: Vec<f64> = keys
                .iter()
                .map(|&j| (0..d).map(|c| q.get(i, h * d + c) * k.get(j, h * d + c)).sum::<f64>() / (d as f64).sqrt())
                .collect();
            let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = logits.iter().map(|l| (l - m).exp()).sum();
            let p: Vec<f64> = logits.iter().map(|l| (l - m).exp() / z).collect();
            entropies.push(-p.iter().filter(|&&x| x > 0.0).map(|x| x * x.ln()).sum::<f64>());
            for (&j, pj) in keys.iter().zip(&p) {
                for c in 0..d {
                    let o = out.get(i, h * d + c) + pj * v.get(j, h * d + c);
                    out.set(i, h * d + c, o);
                }
            }
        }
    }
    (out, entropies)
}

/// Largest number of groups shared by any pair of distinct columns, by direct counting.
pub fn pair_count_oracle(groups: &[Vec<usize>]) -> usize {
    let mut counts = std::collections::HashMap::new();
    for g in groups {
        let set: std::collections::BTreeSet<usize> = g.iter().copied().collect();
        let cols: Vec<usize> = set.into_iter().collect();
        for a in 0..cols.len() {
            for b in a + 1..cols.len() {
                *counts.entry((cols[a], cols[b])).or_insert(0usize) += 1;
            }
        }
    }
    counts.values().copied().max().unwrap_or(0)
}

/// First violated dataset invariant, if any.
pub fn dataset_violation(ds: &tabprior::GeneratedDataset) -> Option<String> {
    use tabprior::linalg::{column_moments, Matrix};
    use tabprior::prior::{ColumnKind, TaskKind};
    if ds.n_cols() == 0 {
        return Some("no columns".into());
    }
    for j in 0..ds.n_cols() {
        let col = ds.x.column(j);
        if col.iter().all(|v| *v == col[0]) {
            return Some(format!("constant column {j}"));
        }
        match ds.column_meta[j] {
            ColumnKind::Categorical { cardinality } => {
                if !(2..=9).contains(&cardinality) {
                    return Some(format!("column {j} has cardinality {cardinality}"));
                }
                if !col.iter().all(|v| v.fract() == 0.0 && *v >= 0.0 && (*v as usize) < cardinality) {
                    return Some(format!("column {j} has codes outside [0, {cardinality})"));
                }
            }
            ColumnKind::Numeric => {
                let (m, sd) = column_moments(&ds.x, j);
                if m.abs() >= 1e-6 || (sd - 1.0).abs() >= 1e-6 {
                    return Some(format!("column {j} has mean {m} and std {sd}"));
                }
            }
        }
    }
    match ds.task {
        TaskKind::Classification => {
            if !(2..=10).contains(&ds.n_classes) {
                return Some(format!("{} classes", ds.n_classes));
            }
            for c in 0..ds.n_classes {
                let seen = |train: bool| ds.y.iter().zip(&ds.train_mask).any(|(y, t)| *t == train && *y as usize == c);
                if !(seen(true) && seen(false)) {
                    return Some(format!("class {c} missing from a split"));
                }
            }
        }
        TaskKind::Regression => {
            let (m, sd) = column_moments(&Matrix::column_vector(&ds.y), 0);
            if m.abs() >= 1e-6 || (sd - 1.0).abs() >= 1e-6 {
                return Some(format!("target has mean {m} and std {sd}"));
            }
        }
    }
    None
}
