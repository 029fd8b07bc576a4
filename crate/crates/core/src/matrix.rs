//! Random matrices.

use serde::{Deserialize, Serialize};

use crate::activation::ActivationSpec;
use crate::linalg::Matrix;
use crate::points::{base_points, BasePoints};
use crate::rng::RngStream;
use crate::sampler::{random_weights, CorrelatedSampler};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum BaseMatrixKind {
    Gaussian,
    Weights,
    SingularValues,
    Kernel,
}

impl BaseMatrixKind {
    pub const ALL: [BaseMatrixKind; 4] = [
        Self::Gaussian,
        Self::Weights,
        Self::SingularValues,
        Self::Kernel,
    ];
}

/// The activation variant wraps a non-activation kind, so nesting is ruled out by the type.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum RandomMatrixKind {
    Gaussian,
    Weights,
    SingularValues,
    Kernel,
    Activation(BaseMatrixKind),
}

impl From<BaseMatrixKind> for RandomMatrixKind {
    fn from(kind: BaseMatrixKind) -> Self {
        match kind {
            BaseMatrixKind::Gaussian => Self::Gaussian,
            BaseMatrixKind::Weights => Self::Weights,
            BaseMatrixKind::SingularValues => Self::SingularValues,
            BaseMatrixKind::Kernel => Self::Kernel,
        }
    }
}

impl RandomMatrixKind {
    pub fn sample(ctx: &mut CorrelatedSampler, stream: &mut RngStream) -> Self {
        match ctx.choice("matrix_type", 5, stream) {
            4 => {
                let inner = ctx.choice("activation_matrix_inner", 4, stream);
                Self::Activation(BaseMatrixKind::ALL[inner])
            }
            i => BaseMatrixKind::ALL[i].into(),
        }
    }
}

/// A matrix of a randomly chosen kind.
pub fn random_matrix(rows: usize, cols: usize, ctx: &mut CorrelatedSampler, stream: &mut RngStream) -> Matrix {
    let kind = RandomMatrixKind::sample(ctx, stream);
    sample_matrix(kind, rows, cols, ctx, stream)
}

/// Samples a matrix of `kind`, then adds `1e-6` Gaussian noise and normalizes every row.
pub fn sample_matrix(
    kind: RandomMatrixKind,
    rows: usize,
    cols: usize,
    ctx: &mut CorrelatedSampler,
    stream: &mut RngStream,
) -> Matrix {
    assert!(rows >= 1 && cols >= 1, "matrix shape must be positive");
    let mut m = raw_matrix(kind, rows, cols, ctx, stream);
    for v in m.as_mut_slice() {
        *v += 1e-6 * stream.normal();
    }
    m.normalize_rows();
    m
}

/// The matrix before the shared noise and row normalization.
pub fn raw_matrix(
    kind: RandomMatrixKind,
    rows: usize,
    cols: usize,
    ctx: &mut CorrelatedSampler,
    stream: &mut RngStream,
) -> Matrix {
    match kind {
        RandomMatrixKind::Gaussian => gaussian(rows, cols, stream),
        RandomMatrixKind::Weights => {
            let mut m = gaussian(rows, cols, stream);
            for i in 0..rows {
                let w = random_weights(cols, ctx, stream);
                for (v, wj) in m.row_mut(i).iter_mut().zip(w.values()) {
                    *v *= wj;
                }
            }
            m.normalize_rows();
            m
        }
        RandomMatrixKind::SingularValues => {
            let r = rows.min(cols);
            let u = gaussian(rows, r, stream);
            let v = gaussian(cols, r, stream);
            let w = random_weights(r, ctx, stream);
            singular_values_product(&u, w.values(), &v)
        }
        RandomMatrixKind::Kernel => {
            let (m, _) = kernel_matrix(rows, cols, ctx, stream);
            m
        }
        RandomMatrixKind::Activation(inner) => {
            let base = raw_matrix(inner.into(), rows, cols, ctx, stream);
            let spec = ActivationSpec::sample(ctx, stream);
            let flat = Matrix::from_vec(1, rows * cols, base.into_vec()).expect("same length");
            let mut out = spec.apply(&flat);
            for v in out.as_mut_slice() {
                *v += 1e-3 * stream.normal();
            }
            Matrix::from_vec(rows, cols, out.into_vec()).expect("same length")
        }
    }
}

pub fn gaussian(rows: usize, cols: usize, stream: &mut RngStream) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| stream.normal())
}

/// `U diag(w) Vᵀ`.
pub fn singular_values_product(u: &Matrix, w: &[f64], v: &Matrix) -> Matrix {
    let mut scaled = u.clone();
    for i in 0..scaled.rows() {
        for (x, wk) in scaled.row_mut(i).iter_mut().zip(w) {
            *x *= wk;
        }
    }
    scaled.matmul_t(v).expect("inner dimensions agree")
}

/// Laplace kernel between `rows + cols` points in ℝ³ with random signs.
/// Also returns the unsigned kernel values.
pub fn kernel_matrix(
    rows: usize,
    cols: usize,
    ctx: &mut CorrelatedSampler,
    stream: &mut RngStream,
) -> (Matrix, Matrix) {
    let kind = BasePoints::sample(ctx, stream);
    let points = base_points(kind, rows + cols, 3, ctx, stream);
    let gamma = ctx.log_num("kernel_gamma", 0.1, 10.0, stream);
    let unsigned = Matrix::from_fn(rows, cols, |i, j| {
        let d = crate::linalg::lp_distance(points.row(i), points.row(rows + j), 2.0);
        (-gamma * d).exp()
    });
    let signed = Matrix::from_fn(rows, cols, |i, j| {
        let s = if stream.bernoulli(0.5) { 1.0 } else { -1.0 };
        s * unsigned.get(i, j)
    });
    (signed, unsigned)
}

/// Names of the matrix kinds, used in gallery output.
pub fn kind_name(kind: RandomMatrixKind) -> &'static str {
    match kind {
        RandomMatrixKind::Gaussian => "gaussian",
        RandomMatrixKind::Weights => "weights",
        RandomMatrixKind::SingularValues => "singular_values",
        RandomMatrixKind::Kernel => "kernel",
        RandomMatrixKind::Activation(_) => "activation",
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn all_kinds() -> Vec<RandomMatrixKind> {
        let mut kinds: Vec<RandomMatrixKind> = BaseMatrixKind::ALL.iter().map(|&k| k.into()).collect();
        kinds.extend(BaseMatrixKind::ALL.iter().map(|&k| RandomMatrixKind::Activation(k)));
        kinds
    }

    #[test]
    fn rows_have_unit_norm() {
        for (seed, kind) in all_kinds().into_iter().enumerate() {
            for &(r, c) in &[(1, 1), (3, 7), (16, 4)] {
                let mut s = RngStream::new(seed as u64);
                let mut ctx = CorrelatedSampler::new(&s);
                let m = sample_matrix(kind, r, c, &mut ctx, &mut s);
                assert!(m.is_finite());
                for n in m.row_norms() {
                    assert!((n - 1.0).abs() < 1e-6, "{kind:?}: {n}");
                }
            }
        }
    }

    #[test]
    fn kernel_entries_in_unit_interval() {
        let mut s = RngStream::new(3);
        let mut ctx = CorrelatedSampler::new(&s);
        let (signed, unsigned) = kernel_matrix(6, 5, &mut ctx, &mut s);
        for (a, b) in signed.as_slice().iter().zip(unsigned.as_slice()) {
            assert!(*b > 0.0 && *b <= 1.0);
            assert_eq!(a.abs(), *b);
        }
    }

    #[test]
    fn singular_values_matches_triple_loop() {
        let mut s = RngStream::new(4);
        let u = gaussian(8, 8, &mut s);
        let v = gaussian(8, 8, &mut s);
        let w: Vec<f64> = (0..8).map(|_| s.uniform()).collect();
        let got = singular_values_product(&u, &w, &v);
        for i in 0..8 {
            for j in 0..8 {
                let mut want = 0.0;
                for k in 0..8 {
                    want += u.get(i, k) * w[k] * v.get(j, k);
                }
                assert!((got.get(i, j) - want).abs() < 1e-12);
            }
        }
    }
}
