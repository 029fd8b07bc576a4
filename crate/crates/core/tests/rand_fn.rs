mod common;

use common::median_radius;
use proptest::prelude::*;
use tabprior::function::{
    eval_multi, gp_radius, nearest_center, sample_function, sample_multi, Aggregation, DiscretizationFunction, FunctionKind,
    GpFunction, LinearFunction, MultiFunction, ObliviousTree, QuadraticFunction, RandomFunction, TreeFunction,
    GP_FEATURES,
};
use tabprior::linalg::Matrix;
use tabprior::matrix::gaussian;
use tabprior::rng::RngStream;
use tabprior::sampler::CorrelatedSampler;

fn setup(seed: u64) -> (CorrelatedSampler, RngStream) {
    let s = RngStream::new(seed);
    (CorrelatedSampler::new(&s), s.split("draws"))
}

#[test]
fn linear_matches_triple_loop() {
    let (mut ctx, mut s) = setup(1);
    let f = LinearFunction::sample(3, 3, &mut ctx, &mut s);
    let x = gaussian(5, 3, &mut s);
    let out = f.eval(&x).unwrap();
    for i in 0..5 {
        for o in 0..3 {
            let mut acc = 0.0;
            for j in 0..3 {
                acc += f.matrix.get(o, j) * x.get(i, j);
            }
            assert!((out.get(i, o) - acc).abs() < 1e-12);
        }
    }
}

#[test]
fn tree_outputs_within_leaf_range() {
    let (mut ctx, mut s) = setup(2);
    let data = gaussian(300, 4, &mut s);
    for _ in 0..10 {
        let f = TreeFunction::sample(2, &data, &mut ctx, &mut s);
        let out = f.eval(&gaussian(200, 4, &mut s));
        for (k, trees) in f.ensembles.iter().enumerate() {
            let lo = trees.iter().flat_map(|t| t.leaves.iter()).cloned().fold(f64::INFINITY, f64::min);
            let hi = trees.iter().flat_map(|t| t.leaves.iter()).cloned().fold(f64::NEG_INFINITY, f64::max);
            for i in 0..out.rows() {
                assert!(out.get(i, k) >= lo - 1e-12 && out.get(i, k) <= hi + 1e-12);
            }
        }
    }
}

#[test]
fn oblivious_tree_matches_explicit_traversal() {
    // A full binary tree where every node at depth l tests splits[l].
    fn walk(t: &ObliviousTree, x: &[f64]) -> f64 {
        let mut index = 0;
        for (l, &(dim, thr)) in t.splits.iter().enumerate() {
            if x[dim] > thr {
                index += 1 << l;
            }
        }
        t.leaves[index]
    }
    let (mut ctx, mut s) = setup(3);
    let data = gaussian(100, 5, &mut s);
    let f = TreeFunction::sample(1, &data, &mut ctx, &mut s);
    for t in &f.ensembles[0] {
        assert_eq!(t.leaves.len(), 1 << t.splits.len());
        for i in 0..data.rows() {
            assert_eq!(t.eval(data.row(i)), walk(t, data.row(i)));
        }
    }
}

#[test]
fn gp_median_radius() {
    let mut s = RngStream::new(4);
    for a in [2.5, 5.0, 20.0] {
        let want = 2f64.powf(1.0 / (a - 1.0)) - 1.0;
        let got = median_radius(a, 100_000, &mut s);
        assert!((got / want - 1.0).abs() < 0.02, "a={a}: {got} vs {want}");
    }
}

#[test]
fn gp_features_bounded() {
    let (mut ctx, mut s) = setup(5);
    let f = GpFunction::sample(3, 2, &mut ctx, &mut s);
    let x = gaussian(50, 3, &mut s);
    let feats = f.features(&x).unwrap();
    let bound = (GP_FEATURES as f64).powf(-0.5);
    assert!(feats.as_slice().iter().all(|v| v.abs() <= bound + 1e-15));
    let out = f.eval(&x).unwrap();
    for k in 0..2 {
        let l1: f64 = f.z.row(k).iter().map(|v| v.abs()).sum();
        for i in 0..50 {
            assert!(out.get(i, k).abs() <= l1 * bound + 1e-12);
        }
    }
}

#[test]
fn product_kernel_gp_is_axis_aligned() {
    let (mut ctx, mut s) = setup(6);
    let mut f = GpFunction::sample(4, 2, &mut ctx, &mut s);
    f.product_kernel = true;
    f.frequencies = Matrix::from_fn(GP_FEATURES, 4, |_, _| gp_radius(f.a, s.uniform()));
    let x = gaussian(40, 4, &mut s);
    let perm = [2, 0, 3, 1];
    let mut g = f.clone();
    g.frequencies = f.frequencies.select_columns(&perm);
    let xp = x.select_columns(&perm);
    let (a, b) = (f.eval(&x).unwrap(), g.eval(&xp).unwrap());
    // equal up to summation order
    for (u, v) in a.as_slice().iter().zip(b.as_slice()) {
        assert!((u - v).abs() < 1e-12);
    }
}

#[test]
fn em_assignments_sum_to_one() {
    let (mut ctx, mut s) = setup(7);
    let data = gaussian(80, 3, &mut s);
    let RandomFunction::EmAssignment(f) =
        sample_function(Some(FunctionKind::EmAssignment), 3, 4, Some(&data), &mut ctx, &mut s).unwrap()
    else {
        unreachable!()
    };
    let a = f.assignments(&data);
    for i in 0..a.rows() {
        assert!((a.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn quadratic_with_identity_slices() {
    let f = QuadraticFunction {
        d_in: 2,
        inputs: vec![0, 1],
        slices: vec![Matrix::identity(3)],
    };
    let x = Matrix::from_rows(&[vec![1.0, 2.0]]).unwrap();
    let xt = [1.0, 2.0, 1.0];
    let mut want = 0.0;
    for j in 0..3 {
        for k in 0..3 {
            want += if j == k { xt[j] * xt[k] } else { 0.0 };
        }
    }
    assert_eq!(f.eval(&x).get(0, 0), want);
}

#[test]
fn discretization_maps_centers_to_themselves() {
    let (mut ctx, mut s) = setup(8);
    let data = gaussian(30, 3, &mut s);
    let f = DiscretizationFunction {
        centers: data.clone(),
        p: 2.0,
        linear: LinearFunction::sample(3, 2, &mut ctx, &mut s),
    };
    for i in 0..30 {
        assert_eq!(f.nearest(data.row(i)), i);
    }
}

#[test]
fn missing_data_hint_is_an_error() {
    let (mut ctx, mut s) = setup(9);
    for kind in [FunctionKind::Tree, FunctionKind::Discretization, FunctionKind::EmAssignment] {
        assert!(sample_function(Some(kind), 2, 2, None, &mut ctx, &mut s).is_err());
    }
}

#[test]
fn multi_function_reductions() {
    let (mut ctx, mut s) = setup(10);
    let p = gaussian(20, 3, &mut s);
    let single = sample_multi(&[&p], 2, &mut ctx, &mut s).unwrap();
    let MultiFunction::Concat(f) = &single else { panic!("single parent concatenates") };
    assert_eq!(eval_multi(&single, &[&p]).unwrap(), f.eval(&p).unwrap());

    let q = gaussian(20, 2, &mut s);
    let f1 = RandomFunction::Linear(LinearFunction::sample(3, 2, &mut ctx, &mut s));
    let f2 = RandomFunction::Linear(LinearFunction::sample(2, 2, &mut ctx, &mut s));
    let (o1, o2) = (f1.eval(&p).unwrap(), f2.eval(&q).unwrap());
    let sum = MultiFunction::Aggregate {
        aggregation: Aggregation::Sum,
        inner: vec![f1, f2],
    };
    let got = eval_multi(&sum, &[&p, &q]).unwrap();
    for (k, v) in got.as_slice().iter().enumerate() {
        assert_eq!(*v, o1.as_slice()[k] + o2.as_slice()[k]);
    }
    assert!(eval_multi(&sum, &[&p]).is_err());
}

#[test]
fn logsumexp_of_zeros_is_log_two() {
    let zero = RandomFunction::Linear(LinearFunction {
        matrix: Matrix::zeros(2, 2),
    });
    let mf = MultiFunction::Aggregate {
        aggregation: Aggregation::LogSumExp,
        inner: vec![zero.clone(), zero],
    };
    let x = Matrix::filled(4, 2, 1.0);
    let out = eval_multi(&mf, &[&x, &x]).unwrap();
    assert!(out.as_slice().iter().all(|v| (v - 2f64.ln()).abs() < 1e-15));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(120))]

    #[test]
    fn every_family_is_finite_and_pure(seed in any::<u64>(), k in 0usize..8, d_in in 1usize..8, d_out in 1usize..6) {
        let (mut ctx, mut s) = setup(seed);
        let kind = FunctionKind::ALL[k];
        let data = gaussian(40, d_in, &mut s);
        let f = sample_function(Some(kind), d_in, d_out, Some(&data), &mut ctx, &mut s).unwrap();
        prop_assert_eq!(f.d_in(), d_in);
        prop_assert_eq!(f.d_out(), d_out);
        let x = gaussian(25, d_in, &mut s);
        let a = f.eval(&x).unwrap();
        let b = f.eval(&x).unwrap();
        prop_assert_eq!(a.shape(), (25, d_out));
        prop_assert!(a.is_finite());
        prop_assert_eq!(a, b);
        prop_assert!(f.eval(&gaussian(3, d_in + 1, &mut s)).is_err());
    }

    #[test]
    fn radius_inverse_cdf_round_trip(a in 2.0..20.0f64, u in 0.0..0.999f64) {
        let r = gp_radius(a, u);
        let h = 1.0 - (1.0 + r).powf(1.0 - a);
        prop_assert!(r >= 0.0);
        prop_assert!((h - u).abs() < 1e-9);
    }

    #[test]
    fn nearest_center_is_brute_force_argmin(
        seed in any::<u64>(),
        k in 1usize..40,
        d in 1usize..6,
        p in prop_oneof![Just(1.0), Just(2.0), 0.5..4.0f64],
        snap in any::<bool>(),
    ) {
        let mut s = RngStream::new(seed);
        // snapping to a coarse grid forces exact ties
        let round = |v: f64| if snap { (v * 2.0).round() / 2.0 } else { v };
        let centers = Matrix::from_fn(k, d, |_, _| round(s.normal()));
        for _ in 0..20 {
            let x: Vec<f64> = (0..d).map(|_| round(s.normal())).collect();
            let dist = |c: usize| -> f64 {
                centers.row(c).iter().zip(&x).map(|(a, b)| (a - b).abs().powf(p)).sum()
            };
            let mut want = 0;
            for c in 1..k {
                if dist(c) < dist(want) {
                    want = c;
                }
            }
            prop_assert_eq!(nearest_center(&centers, &x, p), want);
        }
    }
}
