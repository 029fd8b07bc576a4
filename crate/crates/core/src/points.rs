//! Random point clouds for root nodes and other places that need fresh inputs.

use serde::{Deserialize, Serialize};

use crate::function::{sample_function, FunctionKind};
use crate::linalg::{norm, Matrix};
use crate::matrix::gaussian;
use crate::rng::RngStream;
use crate::sampler::{random_weights, CorrelatedSampler};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum BasePoints {
    Normal,
    Cube,
    Ball,
    RandomCovariance,
}

impl BasePoints {
    pub const ALL: [BasePoints; 4] = [Self::Normal, Self::Cube, Self::Ball, Self::RandomCovariance];

    pub fn sample(ctx: &mut CorrelatedSampler, stream: &mut RngStream) -> Self {
        Self::ALL[ctx.choice("points_base", 4, stream)]
    }
}

/// Function families cheap enough to shape random points.
pub const POINT_FUNCTIONS: [FunctionKind; 5] = [
    FunctionKind::Tree,
    FunctionKind::Discretization,
    FunctionKind::Gp,
    FunctionKind::Linear,
    FunctionKind::Quadratic,
];

/// `n` points in ℝ^d: a base distribution pushed through a random function.
pub fn random_points(n: usize, d: usize, ctx: &mut CorrelatedSampler, stream: &mut RngStream) -> Matrix {
    assert!(n >= 1 && d >= 1, "random_points needs n, d >= 1");
    let kind = BasePoints::sample(ctx, stream);
    let base = base_points(kind, n, d, ctx, stream);
    let fkind = POINT_FUNCTIONS[ctx.choice("points_function_type", POINT_FUNCTIONS.len(), stream)];
    let f = sample_function(Some(fkind), d, d, Some(&base), ctx, stream)
        .expect("data hint supplied and dims positive");
    f.eval(&base).expect("dims match by construction")
}

pub fn base_points(
    kind: BasePoints,
    n: usize,
    d: usize,
    ctx: &mut CorrelatedSampler,
    stream: &mut RngStream,
) -> Matrix {
    match kind {
        BasePoints::Normal => gaussian(n, d, stream),
        BasePoints::Cube => Matrix::from_fn(n, d, |_, _| stream.uniform_range(-1.0, 1.0)),
        BasePoints::Ball => {
            let mut m = gaussian(n, d, stream);
            for i in 0..n {
                let radius = stream.uniform().powf(1.0 / d as f64);
                let row = m.row_mut(i);
                let len = norm(row);
                if len > 0.0 {
                    for v in row.iter_mut() {
                        *v *= radius / len;
                    }
                }
            }
            m
        }
        BasePoints::RandomCovariance => {
            let w = random_weights(d, ctx, stream);
            let a = gaussian(d, d, stream);
            covariance_points(n, w.values(), &a, stream)
        }
    }
}

/// Rows `A (w ⊙ x)` with standard normal `x`.
pub fn covariance_points(n: usize, weights: &[f64], a: &Matrix, stream: &mut RngStream) -> Matrix {
    let d = weights.len();
    let mut x = gaussian(n, d, stream);
    for i in 0..n {
        for (v, w) in x.row_mut(i).iter_mut().zip(weights) {
            *v *= w;
        }
    }
    x.matmul_t(a).expect("square mixing matrix")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::norm;

    #[test]
    fn ball_and_cube_bounds() {
        let mut s = RngStream::new(1);
        let mut ctx = CorrelatedSampler::new(&s);
        let ball = base_points(BasePoints::Ball, 500, 4, &mut ctx, &mut s);
        for i in 0..ball.rows() {
            assert!(norm(ball.row(i)) <= 1.0 + 1e-12);
        }
        let cube = base_points(BasePoints::Cube, 500, 4, &mut ctx, &mut s);
        assert!(cube.as_slice().iter().all(|v| (-1.0..=1.0).contains(v)));
    }

    #[test]
    fn random_points_shape_and_finite() {
        for seed in 0..30 {
            let mut s = RngStream::new(seed);
            let mut ctx = CorrelatedSampler::new(&s);
            let p = random_points(40, 3, &mut ctx, &mut s);
            assert_eq!(p.shape(), (40, 3));
            assert!(p.is_finite());
        }
    }
}
