//! Column grouping, target-aware embedding composition and mixed-radix label views.
//!
//! Three-way tensors `n × m × k` are stored as `n × (m·k)` matrices in row-major order.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg::Matrix;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupingPlan {
    pub m: usize,
    pub k: usize,
    /// Group `j` holds columns `(j + 2^l − 1) mod m` for `l = 0..k`.
    pub groups: Vec<Vec<usize>>,
}

pub fn group_offsets(k: usize) -> Vec<usize> {
    (0..k).map(|l| (1usize << l) - 1).collect()
}

pub fn grouping_plan(m: usize, k: usize) -> Result<GroupingPlan> {
    if m < 2 {
        return Err(invalid(format!("grouping needs at least 2 columns, got {m}")));
    }
    if k == 0 || k > m {
        return Err(invalid(format!("group size must lie in [1, {m}], got {k}")));
    }
    let offsets = group_offsets(k);
    let groups = (0..m)
        .map(|j| offsets.iter().map(|&o| (j + o % m) % m).collect())
        .collect();
    let plan = GroupingPlan { m, k, groups };
    if m > 2 && max_pair_cooccurrence(&plan) > 1 {
        log::warn!("{m} columns with group size {k}: some column pairs share more than one group");
    }
    Ok(plan)
}

/// Largest number of groups any unordered pair of distinct columns shares.
pub fn max_pair_cooccurrence(plan: &GroupingPlan) -> usize {
    let m = plan.m;
    let mut counts = vec![0usize; m * m];
    for g in &plan.groups {
        let mut cols = g.clone();
        cols.sort_unstable();
        cols.dedup();
        for (a, &i) in cols.iter().enumerate() {
            for &j in &cols[a + 1..] {
                counts[i * m + j] += 1;
            }
        }
    }
    counts.into_iter().max().unwrap_or(0)
}

/// `out[i, j·k + l] = x[i, groups[j][l]]`.
pub fn gather_groups(x: &Matrix, plan: &GroupingPlan) -> Result<Matrix> {
    if x.cols() != plan.m {
        return Err(Error::DimensionMismatch {
            context: "gather_groups",
            expected: plan.m,
            got: x.cols(),
        });
    }
    let k = plan.k;
    Ok(Matrix::from_fn(x.rows(), plan.m * k, |i, c| {
        x.get(i, plan.groups[c / k][c % k])
    }))
}

/// Averages every gathered copy back onto its source column.
pub fn scatter_mean(groups: &Matrix, plan: &GroupingPlan) -> Result<Matrix> {
    if groups.cols() != plan.m * plan.k {
        return Err(Error::DimensionMismatch {
            context: "scatter_mean",
            expected: plan.m * plan.k,
            got: groups.cols(),
        });
    }
    let counts = column_multiplicity(plan);
    let mut out = Matrix::zeros(groups.rows(), plan.m);
    for i in 0..groups.rows() {
        for (c, &v) in groups.row(i).iter().enumerate() {
            let col = plan.groups[c / plan.k][c % plan.k];
            out.set(i, col, out.get(i, col) + v / counts[col] as f64);
        }
    }
    Ok(out)
}

/// How many gathered slots read each column.
pub fn column_multiplicity(plan: &GroupingPlan) -> Vec<usize> {
    let mut counts = vec![0; plan.m];
    for g in &plan.groups {
        for &c in g {
            counts[c] += 1;
        }
    }
    counts
}

/// Adds `y_embed[i]` to every feature embedding of training row `i`.
/// `e` is `n × (m·d)`, `y_embed` is `n × d`.
pub fn add_target_embedding(e: &Matrix, y_embed: &Matrix, train_mask: &[bool]) -> Result<Matrix> {
    let (n, d) = y_embed.shape();
    if e.rows() != n || train_mask.len() != n {
        return Err(Error::DimensionMismatch {
            context: "add_target_embedding rows",
            expected: n,
            got: e.rows().min(train_mask.len()),
        });
    }
    if d == 0 || !e.cols().is_multiple_of(d) {
        return Err(Error::DimensionMismatch {
            context: "add_target_embedding width",
            expected: d,
            got: e.cols(),
        });
    }
    let mut out = e.clone();
    for (i, _) in train_mask.iter().enumerate().filter(|(_, &t)| t) {
        let y = y_embed.row(i);
        for chunk in out.row_mut(i).chunks_mut(d) {
            for (v, yv) in chunk.iter_mut().zip(y) {
                *v += yv;
            }
        }
    }
    Ok(out)
}

/// Fewest digits of base at most 10 covering `c` classes, with bases differing by at most one.
pub fn mixed_radix_bases(c: usize) -> Result<Vec<usize>> {
    if c < 2 {
        return Err(invalid(format!("need at least 2 classes, got {c}")));
    }
    let mut d = 1;
    while 10usize.saturating_pow(d as u32) < c {
        d += 1;
    }
    // largest b with b^d ≤ c
    let mut b = 1;
    while (b + 1usize).saturating_pow(d as u32) <= c {
        b += 1;
    }
    let mut bases = vec![b; d];
    let mut i = 0;
    while bases.iter().product::<usize>() < c {
        bases[i] += 1;
        i += 1;
    }
    Ok(bases)
}

fn validate_bases(bases: &[usize]) -> Result<usize> {
    if bases.is_empty() || bases.iter().any(|&b| b < 2) {
        return Err(invalid("bases must be non-empty and at least 2"));
    }
    Ok(bases.iter().product())
}

/// Digit views: `views[i][r] = ⌊y_r / Π_{j>i} k_j⌋ mod k_i`.
pub fn encode_views(y: &[usize], bases: &[usize]) -> Result<Vec<Vec<usize>>> {
    let total = validate_bases(bases)?;
    if let Some(&bad) = y.iter().find(|&&v| v >= total) {
        return Err(invalid(format!("label {bad} exceeds the code range {total}")));
    }
    let mut views = Vec::with_capacity(bases.len());
    let mut stride = total;
    for &k in bases {
        stride /= k;
        views.push(y.iter().map(|&v| (v / stride) % k).collect());
    }
    Ok(views)
}

pub fn decode_views(digits: &[Vec<usize>], bases: &[usize]) -> Result<Vec<usize>> {
    validate_bases(bases)?;
    if digits.len() != bases.len() {
        return Err(Error::DimensionMismatch {
            context: "decode_views",
            expected: bases.len(),
            got: digits.len(),
        });
    }
    let n = digits[0].len();
    let mut y = vec![0usize; n];
    for (view, &k) in digits.iter().zip(bases) {
        if view.len() != n {
            return Err(Error::DimensionMismatch {
                context: "decode_views lengths",
                expected: n,
                got: view.len(),
            });
        }
        for (acc, &dg) in y.iter_mut().zip(view) {
            if dg >= k {
                return Err(invalid(format!("digit {dg} is not below its base {k}")));
            }
            *acc = *acc * k + dg;
        }
    }
    Ok(y)
}

/// Arithmetic mean of per-view outputs.
pub fn average_views(outputs: &[Matrix]) -> Result<Matrix> {
    let first = outputs.first().ok_or_else(|| invalid("no views to average"))?;
    let mut acc = Matrix::zeros(first.rows(), first.cols());
    for o in outputs {
        if o.shape() != first.shape() {
            return Err(Error::DimensionMismatch {
                context: "average_views",
                expected: first.cols(),
                got: o.cols(),
            });
        }
        for (a, v) in acc.as_mut_slice().iter_mut().zip(o.as_slice()) {
            *a += v;
        }
    }
    acc.scale(1.0 / outputs.len() as f64);
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grouping_examples() {
        assert_eq!(grouping_plan(8, 3).unwrap().groups[0], vec![0, 1, 3]);
        assert_eq!(grouping_plan(4, 3).unwrap().groups[2], vec![2, 3, 1]);
        assert!(grouping_plan(3, 4).is_err());
        let tiny = grouping_plan(2, 2).unwrap();
        assert_eq!(tiny.groups, vec![vec![0, 1], vec![1, 0]]);
    }

    #[test]
    fn fano_plane_pairs_once() {
        let plan = grouping_plan(7, 3).unwrap();
        let mut seen = std::collections::HashMap::new();
        for g in &plan.groups {
            for a in 0..3 {
                for b in a + 1..3 {
                    let key = (g[a].min(g[b]), g[a].max(g[b]));
                    *seen.entry(key).or_insert(0) += 1;
                }
            }
        }
        assert_eq!(seen.len(), 21);
        assert!(seen.values().all(|&c| c == 1));
    }

    #[test]
    fn gather_and_scatter() {
        let plan = grouping_plan(2, 2).unwrap();
        let x = Matrix::from_rows(&[vec![5.0, 7.0]]).unwrap();
        let g = gather_groups(&x, &plan).unwrap();
        assert_eq!(g.as_slice(), &[5.0, 7.0, 7.0, 5.0]);
        assert_eq!(scatter_mean(&g, &plan).unwrap(), x);
        assert_eq!(column_multiplicity(&grouping_plan(9, 3).unwrap()), vec![3; 9]);
    }

    #[test]
    fn bases_examples() {
        assert_eq!(mixed_radix_bases(16).unwrap(), vec![4, 4]);
        assert_eq!(mixed_radix_bases(10).unwrap(), vec![10]);
        assert_eq!(mixed_radix_bases(1000).unwrap(), vec![10, 10, 10]);
        assert_eq!(mixed_radix_bases(11).unwrap(), vec![4, 3]);
    }

    #[test]
    fn sixteen_class_views() {
        let views = encode_views(&[13, 0], &[4, 4]).unwrap();
        assert_eq!((views[0][0], views[1][0]), (3, 1));
        assert_eq!((views[0][1], views[1][1]), (0, 0));
        assert!(encode_views(&[16], &[4, 4]).is_err());
    }

    #[test]
    fn target_embedding_touches_train_rows_only() {
        let e = Matrix::from_fn(3, 4, |i, j| (i * 4 + j) as f64);
        let y = Matrix::filled(3, 2, 1.0);
        let out = add_target_embedding(&e, &y, &[true, false, true]).unwrap();
        assert_eq!(out.row(1), e.row(1));
        assert_eq!(out.get(0, 3), e.get(0, 3) + 1.0);
    }
}
