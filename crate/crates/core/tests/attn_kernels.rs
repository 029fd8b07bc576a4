mod common;

use std::time::Instant;

use common::dense_attention;
use proptest::prelude::*;
use tabprior::attention::{
    attention, gate_factor, induced_self_attention, masked_cross_attention, rescale_queries,
    selective_kv_cross_attention, AttentionParams, Mlp, Projections, Scaling, MLP_HIDDEN,
};
use tabprior::linalg::Matrix;
use tabprior::rng::RngStream;

fn random(n: usize, d: usize, s: &mut RngStream) -> Matrix {
    Matrix::from_fn(n, d, |_, _| s.normal())
}

fn max_abs_diff(a: &Matrix, b: &Matrix) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn all_modes(heads: usize, d: usize, s: &mut RngStream) -> Vec<AttentionParams> {
    let ss: Vec<f64> = (0..heads).map(|_| s.uniform_range(0.2, 1.5)).collect();
    vec![
        AttentionParams::standard(heads, d),
        AttentionParams::ssmax(heads, d, ss),
        AttentionParams::qassmax_init(heads, d, s),
    ]
}

#[test]
fn selective_kv_matches_masked_attention() {
    let mut s = RngStream::new(1);
    for _ in 0..10 {
        for mut p in all_modes(4, 4, &mut s) {
            p.projections = Some(Projections::random(16, &mut s));
            let rows = random(96, 16, &mut s);
            let (a, _) = selective_kv_cross_attention(&rows, 64, &p).unwrap();
            let (b, _) = masked_cross_attention(&rows, 64, &p).unwrap();
            assert!(max_abs_diff(&a, &b) < 1e-6);
        }
    }
}

#[test]
fn selective_kv_matches_textbook_formula() {
    let mut s = RngStream::new(2);
    let p = AttentionParams::ssmax(2, 3, vec![0.7, 1.3]);
    let rows = random(20, 6, &mut s);
    let (got, diag) = selective_kv_cross_attention(&rows, 12, &p).unwrap();
    let q = rescale_queries(&rows, 12, &p).unwrap();
    let (want, entropies) = dense_attention(&q, &rows, &rows, 2, |_, j| j < 12);
    assert!(max_abs_diff(&got, &want) < 1e-12);
    for (a, b) in diag.entropy.iter().zip(&entropies) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn no_test_rows_is_plain_self_attention() {
    let mut s = RngStream::new(3);
    let p = AttentionParams::standard(2, 4);
    let rows = random(30, 8, &mut s);
    let (got, _) = selective_kv_cross_attention(&rows, 30, &p).unwrap();
    let (want, _) = dense_attention(&rows, &rows, &rows, 2, |_, _| true);
    assert!(max_abs_diff(&got, &want) < 1e-12);
    assert!(selective_kv_cross_attention(&rows, 0, &p).is_err());
}

#[test]
fn train_outputs_ignore_test_rows() {
    let mut s = RngStream::new(4);
    let mut p = AttentionParams::qassmax_init(2, 4, &mut s);
    p.projections = Some(Projections::random(8, &mut s));
    let rows = random(40, 8, &mut s);
    let mut other = rows.clone();
    for i in 25..40 {
        for j in 0..8 {
            other.set(i, j, 100.0 * s.normal());
        }
    }
    let (a, _) = selective_kv_cross_attention(&rows, 25, &p).unwrap();
    let (b, _) = selective_kv_cross_attention(&other, 25, &p).unwrap();
    for i in 0..25 {
        assert_eq!(a.row(i), b.row(i));
    }
}

#[test]
fn zero_gate_is_pure_base_scaling() {
    let mut s = RngStream::new(5);
    for _ in 0..20 {
        let p = AttentionParams::qassmax_init(3, 4, &mut s);
        let Scaling::QassMax { base, gate } = &p.scaling else { unreachable!() };
        let q = random(10, 12, &mut s);
        let n = 2 + s.index(5000);
        let got = rescale_queries(&q, n, &p).unwrap();
        let b = base.forward(&[(n as f64).ln()]);
        for i in 0..10 {
            assert!(gate_factor(gate, &q.row(i)[..4]).iter().all(|&g| g == 1.0));
            for j in 0..12 {
                assert_eq!(got.get(i, j), q.get(i, j) * b[j]);
            }
        }
    }
}

#[test]
fn constant_base_reproduces_ssmax() {
    let mut s = RngStream::new(6);
    let (heads, d) = (4, 3);
    for _ in 0..20 {
        let n = 2 + s.index(10_000);
        let scales: Vec<f64> = (0..heads).map(|_| s.uniform_range(0.1, 2.0)).collect();
        let log_n = (n as f64).ln();
        let b2: Vec<f64> = (0..heads * d).map(|j| scales[j / d] * log_n).collect();
        let base = Mlp::new(
            random(MLP_HIDDEN, 1, &mut s),
            vec![0.0; MLP_HIDDEN],
            Matrix::zeros(heads * d, MLP_HIDDEN),
            b2,
        )
        .unwrap();
        let gate = Mlp::random(d, MLP_HIDDEN, d, &mut s).zero_last_layer();
        let qass = AttentionParams::standard(heads, d).with_scaling(Scaling::QassMax { base, gate });
        let ss = AttentionParams::ssmax(heads, d, scales);
        let q = random(8, heads * d, &mut s);
        let k = random(n.min(200), heads * d, &mut s);
        let (a, _) = attention(&q, &k, &k, &qass, None, n).unwrap();
        let (b, _) = attention(&q, &k, &k, &ss, None, n).unwrap();
        assert!(max_abs_diff(&a, &b) < 1e-7);
    }
}

#[test]
fn scaling_queries_sharpens_attention() {
    let mut s = RngStream::new(7);
    let p = AttentionParams::standard(1, 8);
    for _ in 0..200 {
        let q = random(1, 8, &mut s);
        let k = random(16, 8, &mut s);
        let mut q4 = q.clone();
        q4.scale(4.0);
        let (_, d1) = attention(&q, &k, &k, &p, None, 16).unwrap();
        let (_, d4) = attention(&q4, &k, &k, &p, None, 16).unwrap();
        assert!(d4.entropy[0] < d1.entropy[0]);
    }
}

#[test]
fn weights_sum_to_one_in_every_mode() {
    let mut s = RngStream::new(8);
    for p in all_modes(2, 4, &mut s) {
        let q = random(12, 8, &mut s);
        let k = random(30, 8, &mut s);
        let ones = Matrix::filled(30, 8, 1.0);
        let (out, diag) = attention(&q, &k, &ones, &p, None, 30).unwrap();
        assert!(out.as_slice().iter().all(|v| (v - 1.0).abs() < 1e-6));
        assert!(diag.normalized_entropy.iter().all(|e| (0.0..=1.0).contains(e)));
    }
}

#[test]
fn induced_with_all_rows_is_dense_attention() {
    let mut s = RngStream::new(9);
    let x = random(24, 6, &mut s);
    let p = AttentionParams::ssmax(2, 3, vec![0.5, 0.9]);
    let out = induced_self_attention(&x, &x, &p).unwrap();
    let q = rescale_queries(&x, 24, &p).unwrap();
    let (want, _) = dense_attention(&q, &x, &x, 2, |_, _| true);
    assert!(max_abs_diff(&out.induced, &want) < 1e-12);
    let (second, _) = dense_attention(&x, &out.induced, &out.induced, 2, |_, _| true);
    assert!(max_abs_diff(&out.output, &second) < 1e-12);
}

#[test]
fn induced_attention_is_set_equivariant() {
    let mut s = RngStream::new(10);
    let mut p = AttentionParams::qassmax_init(2, 4, &mut s);
    p.projections = Some(Projections::random(8, &mut s));
    let x = random(50, 8, &mut s);
    let inducing = random(6, 8, &mut s);
    let perm = s.permutation(50);
    let a = induced_self_attention(&x, &inducing, &p).unwrap();
    let b = induced_self_attention(&x.select_rows(&perm), &inducing, &p).unwrap();
    assert!(max_abs_diff(&a.induced, &b.induced) < 1e-12);
    assert!(max_abs_diff(&a.output.select_rows(&perm), &b.output) < 1e-12);
}

#[test]
fn induced_attention_runtime_is_linear() {
    let mut s = RngStream::new(11);
    let p = AttentionParams::standard(2, 4);
    let inducing = random(16, 8, &mut s);
    let fastest = |n: usize, s: &mut RngStream| {
        let x = random(n, 8, s);
        (0..7)
            .map(|_| {
                let t = Instant::now();
                std::hint::black_box(induced_self_attention(&x, &inducing, &p).unwrap());
                t.elapsed().as_secs_f64()
            })
            .fold(f64::INFINITY, f64::min)
    };
    let small = fastest(1024, &mut s);
    let large = fastest(8192, &mut s);
    let ratio = large / small;
    assert!((6.0..=10.0).contains(&ratio), "ratio {ratio}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn normalized_entropy_is_bounded(seed in any::<u64>(), n_q in 1usize..6, n_k in 1usize..40, scale in 0.0..50.0f64) {
        let mut s = RngStream::new(seed);
        for p in all_modes(2, 3, &mut s) {
            let mut q = random(n_q, 6, &mut s);
            q.scale(scale);
            let k = random(n_k, 6, &mut s);
            let (out, diag) = attention(&q, &k, &k, &p, None, n_k.max(2)).unwrap();
            prop_assert!(out.is_finite());
            prop_assert!(diag.normalized_entropy.iter().all(|e| (0.0..=1.0).contains(e)));
            prop_assert!(diag.entropy.iter().all(|&e| e >= 0.0 && e <= (n_k as f64).ln() + 1e-12));
        }
    }
}
