mod common;

use common::pair_count_oracle;
use proptest::prelude::*;
use tabprior::encoding::{
    add_target_embedding, average_views, column_multiplicity, decode_views, encode_views, gather_groups,
    grouping_plan, max_pair_cooccurrence, mixed_radix_bases, scatter_mean,
};
use tabprior::linalg::Matrix;
use tabprior::rng::RngStream;

#[test]
fn no_pair_shares_two_groups_above_the_bound() {
    for k in 2..=5 {
        for m in (1 << k)..=64 {
            let plan = grouping_plan(m, k).unwrap();
            assert_eq!(plan.groups.len(), m);
            for (j, g) in plan.groups.iter().enumerate() {
                let want: Vec<usize> = (0..k).map(|l| (j + (1 << l) - 1) % m).collect();
                assert_eq!(g, &want);
            }
            assert!(pair_count_oracle(&plan.groups) <= 1, "k={k} m={m}");
            assert_eq!(max_pair_cooccurrence(&plan), pair_count_oracle(&plan.groups));
        }
    }
}

#[test]
fn seven_columns_cover_every_pair_once() {
    let plan = grouping_plan(7, 3).unwrap();
    assert_eq!(pair_count_oracle(&plan.groups), 1);
    let mut pairs = std::collections::BTreeSet::new();
    for g in &plan.groups {
        for a in 0..3 {
            for b in a + 1..3 {
                pairs.insert((g[a].min(g[b]), g[a].max(g[b])));
            }
        }
    }
    assert_eq!(pairs.len(), 21);
}

#[test]
fn small_tables_repeat_pairs() {
    assert!(pair_count_oracle(&grouping_plan(5, 3).unwrap().groups) > 1);
    assert_eq!(grouping_plan(64, 3).unwrap().groups[0], vec![0, 1, 3]);
    assert_eq!(grouping_plan(4, 3).unwrap().groups[2], vec![2, 3, 1]);
}

#[test]
fn gathered_values_appear_k_times() {
    let mut s = RngStream::new(1);
    for (m, k) in [(2, 2), (7, 3), (10, 3), (16, 4)] {
        let plan = grouping_plan(m, k).unwrap();
        assert_eq!(column_multiplicity(&plan), vec![k; m]);
        let x = Matrix::from_fn(5, m, |_, _| s.normal());
        let g = gather_groups(&x, &plan).unwrap();
        for i in 0..5 {
            for j in 0..m {
                let hits = g.row(i).iter().filter(|&&v| v == x.get(i, j)).count();
                assert_eq!(hits, k);
            }
        }
        let back = scatter_mean(&g, &plan).unwrap();
        for (a, b) in back.as_slice().iter().zip(x.as_slice()) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn target_embedding_separates_collapsed_columns() {
    let n = 6;
    let d = 3;
    // two features with identical embeddings
    let e = Matrix::from_fn(n, 2 * d, |i, c| (i + c % d) as f64);
    let y = Matrix::from_fn(n, d, |i, c| if i % 2 == 0 { 1.0 } else { -1.0 } * (c + 1) as f64);
    let mask: Vec<bool> = (0..n).map(|i| i < 4).collect();
    let out = add_target_embedding(&e, &y, &mask).unwrap();
    for i in 4..n {
        assert_eq!(out.row(i), e.row(i));
    }
    let zero = add_target_embedding(&e, &Matrix::zeros(n, d), &mask).unwrap();
    assert_eq!(zero, e);
    // rows 0 and 1 shared an embedding column before and differ after
    let col = |m: &Matrix, i: usize| m.row(i)[..d].to_vec();
    let before: f64 = col(&e, 0).iter().zip(col(&e, 1)).map(|(a, b)| (a - b + 1.0).powi(2)).sum();
    assert_eq!(before, 0.0);
    let after: f64 = col(&out, 0).iter().zip(col(&out, 1)).map(|(a, b)| (a - b).powi(2)).sum();
    assert!(after > 0.0);
}

#[test]
fn sixteen_classes_view_table() {
    assert_eq!(mixed_radix_bases(16).unwrap(), vec![4, 4]);
    let labels: Vec<usize> = (0..16).collect();
    let views = encode_views(&labels, &[4, 4]).unwrap();
    let high: Vec<usize> = (0..16).map(|y| y / 4).collect();
    let low: Vec<usize> = (0..16).map(|y| y % 4).collect();
    assert_eq!(views, vec![high, low]);
    assert_eq!((views[0][13], views[1][13]), (3, 1));
}

#[test]
fn bases_are_minimal_and_balanced() {
    for c in 2..=1000 {
        let b = mixed_radix_bases(c).unwrap();
        assert!(b.iter().all(|&k| (2..=10).contains(&k)), "{c}: {b:?}");
        assert!(b.iter().product::<usize>() >= c);
        assert!(10usize.pow(b.len() as u32 - 1) < c || b.len() == 1);
        let (lo, hi) = (*b.iter().min().unwrap(), *b.iter().max().unwrap());
        assert!(hi - lo <= 1, "{c}: {b:?}");
    }
    assert_eq!(mixed_radix_bases(1000).unwrap(), vec![10, 10, 10]);
    assert_eq!(mixed_radix_bases(10).unwrap(), vec![10]);
    assert!(mixed_radix_bases(1).is_err());
}

#[test]
fn encoding_is_a_bijection() {
    for c in 2..=1000 {
        let bases = mixed_radix_bases(c).unwrap();
        let labels: Vec<usize> = (0..c).collect();
        let views = encode_views(&labels, &bases).unwrap();
        assert_eq!(decode_views(&views, &bases).unwrap(), labels);
        let tuples: std::collections::HashSet<Vec<usize>> =
            (0..c).map(|y| views.iter().map(|v| v[y]).collect()).collect();
        assert_eq!(tuples.len(), c);
        assert!(views.iter().all(|v| v[0] == 0));
    }
}

#[test]
fn averaging_matches_manual_mean() {
    let mut s = RngStream::new(2);
    let outs: Vec<Matrix> = (0..3).map(|_| Matrix::from_fn(4, 5, |_, _| s.normal())).collect();
    let avg = average_views(&outs).unwrap();
    for i in 0..4 {
        for j in 0..5 {
            let want = (outs[0].get(i, j) + outs[1].get(i, j) + outs[2].get(i, j)) / 3.0;
            assert!((avg.get(i, j) - want).abs() < 1e-15);
        }
    }
    assert!(average_views(&[]).is_err());
    assert!(average_views(&[Matrix::zeros(2, 2), Matrix::zeros(2, 3)]).is_err());
}

proptest! {
    #[test]
    fn averaging_is_linear(seed in any::<u64>(), views in 1usize..6, a in -5.0..5.0f64) {
        let mut s = RngStream::new(seed);
        let xs: Vec<Matrix> = (0..views).map(|_| Matrix::from_fn(3, 2, |_, _| s.normal())).collect();
        let ys: Vec<Matrix> = (0..views).map(|_| Matrix::from_fn(3, 2, |_, _| s.normal())).collect();
        let combo: Vec<Matrix> = xs
            .iter()
            .zip(&ys)
            .map(|(x, y)| Matrix::from_fn(3, 2, |i, j| a * x.get(i, j) + y.get(i, j)))
            .collect();
        let lhs = average_views(&combo).unwrap();
        let (ax, ay) = (average_views(&xs).unwrap(), average_views(&ys).unwrap());
        for i in 0..3 {
            for j in 0..2 {
                prop_assert!((lhs.get(i, j) - (a * ax.get(i, j) + ay.get(i, j))).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn scatter_inverts_gather(seed in any::<u64>(), m in 2usize..40, k in 1usize..6) {
        prop_assume!(k <= m);
        let mut s = RngStream::new(seed);
        let plan = grouping_plan(m, k).unwrap();
        let x = Matrix::from_fn(4, m, |_, _| s.normal());
        let back = scatter_mean(&gather_groups(&x, &plan).unwrap(), &plan).unwrap();
        for (a, b) in back.as_slice().iter().zip(x.as_slice()) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn out_of_range_labels_are_rejected(c in 2usize..1000, extra in 0usize..50) {
        let bases = mixed_radix_bases(c).unwrap();
        let total: usize = bases.iter().product();
        prop_assert!(encode_views(&[total + extra], &bases).is_err());
    }
}
