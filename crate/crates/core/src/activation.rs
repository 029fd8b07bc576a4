//! Random activations.
//!
//! An activation maps each sample vector `x ∈ ℝ^d` to `ℝ^d`. Most are
//! element-wise; softmax, one-hot argmax, argsort and rank act along the
//! feature axis of each row.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::linalg::{column_moments, Matrix};
use crate::rng::RngStream;
use crate::sampler::CorrelatedSampler;

/// Output magnitude cap applied after every activation.
pub const ACTIVATION_CLAMP: f64 = 1e150;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum FixedActivation {
    Tanh,
    LeakyRelu,
    Elu,
    Identity,
    Selu,
    Silu,
    Relu,
    Softplus,
    Relu6,
    HardTanh,
    Signum,
    Heaviside,
    GaussianBump,
    Exp,
    UnitIndicator,
    Sin,
    Square,
    Abs,
    Softmax,
    OneHotArgmax,
    Argsort,
    LogSigmoid,
    LogAbs,
    Rank,
    Sigmoid,
    Round,
    Mod1,
}

impl FixedActivation {
    pub const ALL: [FixedActivation; 27] = [
        Self::Tanh,
        Self::LeakyRelu,
        Self::Elu,
        Self::Identity,
        Self::Selu,
        Self::Silu,
        Self::Relu,
        Self::Softplus,
        Self::Relu6,
        Self::HardTanh,
        Self::Signum,
        Self::Heaviside,
        Self::GaussianBump,
        Self::Exp,
        Self::UnitIndicator,
        Self::Sin,
        Self::Square,
        Self::Abs,
        Self::Softmax,
        Self::OneHotArgmax,
        Self::Argsort,
        Self::LogSigmoid,
        Self::LogAbs,
        Self::Rank,
        Self::Sigmoid,
        Self::Round,
        Self::Mod1,
    ];

    /// Whether the activation couples the entries of a row.
    pub fn is_row_wise(self) -> bool {
        matches!(
            self,
            Self::Softmax | Self::OneHotArgmax | Self::Argsort | Self::Rank
        )
    }

    fn scalar(self, x: f64) -> f64 {
        match self {
            Self::Tanh => x.tanh(),
            Self::LeakyRelu => {
                if x >= 0.0 {
                    x
                } else {
                    0.01 * x
                }
            }
            Self::Elu => {
                if x >= 0.0 {
                    x
                } else {
                    x.exp_m1()
                }
            }
            Self::Identity => x,
            Self::Selu => {
                const LAMBDA: f64 = 1.050_700_987_355_480_5;
                const ALPHA: f64 = 1.673_263_242_354_377_3;
                if x >= 0.0 {
                    LAMBDA * x
                } else {
                    LAMBDA * ALPHA * x.exp_m1()
                }
            }
            Self::Silu => x * sigmoid(x),
            Self::Relu => x.max(0.0),
            Self::Softplus => softplus(x),
            Self::Relu6 => x.clamp(0.0, 6.0),
            Self::HardTanh => x.clamp(-1.0, 1.0),
            Self::Signum => {
                if x > 0.0 {
                    1.0
                } else if x < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            }
            Self::Heaviside => {
                if x >= 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Self::GaussianBump => (-x * x).exp(),
            Self::Exp => x.exp(),
            Self::UnitIndicator => {
                if (0.0..=1.0).contains(&x) {
                    1.0
                } else {
                    0.0
                }
            }
            Self::Sin => x.sin(),
            Self::Square => x * x,
            Self::Abs => x.abs(),
            Self::LogSigmoid => -softplus(-x),
            Self::LogAbs => x.abs().max(1e-6).ln(),
            Self::Sigmoid => sigmoid(x),
            Self::Round => x.round(),
            Self::Mod1 => x - x.floor(),
            Self::Softmax | Self::OneHotArgmax | Self::Argsort | Self::Rank => {
                unreachable!("row-wise activation")
            }
        }
    }

    fn row(self, row: &mut [f64]) {
        match self {
            Self::Softmax => softmax_inplace(row),
            Self::OneHotArgmax => {
                let arg = argmax(row);
                for (j, v) in row.iter_mut().enumerate() {
                    *v = if j == arg { 1.0 } else { 0.0 };
                }
            }
            Self::Argsort => {
                let order = argsort(row);
                for (v, idx) in row.iter_mut().zip(order) {
                    *v = idx as f64;
                }
            }
            Self::Rank => {
                let order = argsort(row);
                for (rank, idx) in order.into_iter().enumerate() {
                    row[idx] = rank as f64;
                }
            }
            other => {
                for v in row.iter_mut() {
                    *v = other.scalar(*v);
                }
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum ActivationSpec {
    Fixed(FixedActivation),
    /// `relu(x)^q`
    ReluPow(f64),
    /// `sign(x) |x|^q`
    SignedPow(f64),
    /// `(|x| + 1e-3)^(-q)`
    InversePow(f64),
    /// `x^m`
    IntPow(i32),
}

impl ActivationSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Self::ReluPow(q) | Self::SignedPow(q) | Self::InversePow(q) if !(0.1..=10.0).contains(&q) => {
                Err(invalid(format!("activation exponent {q} outside [0.1, 10]")))
            }
            Self::IntPow(m) if !(2..=5).contains(&m) => {
                Err(invalid(format!("integer power {m} outside [2, 5]")))
            }
            _ => Ok(()),
        }
    }

    /// Fixed activation with probability 2/3, otherwise a parametric family.
    pub fn sample(ctx: &mut CorrelatedSampler, stream: &mut RngStream) -> Self {
        if stream.bernoulli(2.0 / 3.0) {
            let idx = ctx.choice("activation_fixed", FixedActivation::ALL.len(), stream);
            Self::Fixed(FixedActivation::ALL[idx])
        } else {
            match ctx.choice("activation_parametric", 4, stream) {
                0 => Self::ReluPow(ctx.log_num("activation_power", 0.1, 10.0, stream)),
                1 => Self::SignedPow(ctx.log_num("activation_power", 0.1, 10.0, stream)),
                2 => Self::InversePow(ctx.log_num("activation_power", 0.1, 10.0, stream)),
                _ => Self::IntPow(ctx.int("activation_int_power", 2, 5, stream) as i32),
            }
        }
    }

    /// Applies the activation to every row of `x`.
    pub fn apply(&self, x: &Matrix) -> Matrix {
        let mut out = x.clone();
        match *self {
            Self::Fixed(f) => {
                for i in 0..out.rows() {
                    f.row(out.row_mut(i));
                }
            }
            Self::ReluPow(q) => out.map_inplace(|v| v.max(0.0).powf(q)),
            Self::SignedPow(q) => out.map_inplace(|v| v.signum() * v.abs().powf(q)),
            Self::InversePow(q) => out.map_inplace(|v| (v.abs() + 1e-3).powf(-q)),
            Self::IntPow(m) => out.map_inplace(|v| v.powi(m)),
        }
        out.map_inplace(sanitize);
        out
    }
}

/// An activation frozen together with its rescaling parameters, as used
/// inside random networks: standardize, `x ← a (x − b)`, activate, standardize.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WrappedActivation {
    pub spec: ActivationSpec,
    pub scale: f64,
    /// Position in `[0, 1)` of the batch row used as the offset `b`.
    pub offset_position: f64,
}

impl WrappedActivation {
    pub fn sample(ctx: &mut CorrelatedSampler, stream: &mut RngStream) -> Self {
        let spec = ActivationSpec::sample(ctx, stream);
        Self::with_spec(spec, ctx, stream)
    }

    pub fn with_spec(spec: ActivationSpec, ctx: &mut CorrelatedSampler, stream: &mut RngStream) -> Self {
        Self {
            spec,
            scale: ctx.log_num("activation_scale", 1.0, 10.0, stream),
            offset_position: stream.uniform(),
        }
    }

    pub fn apply(&self, x: &Matrix) -> Matrix {
        let mut z = x.clone();
        z.standardize_columns();
        if z.rows() > 0 {
            let b_row = ((self.offset_position * z.rows() as f64) as usize).min(z.rows() - 1);
            let offset = z.row(b_row).to_vec();
            for i in 0..z.rows() {
                for (v, b) in z.row_mut(i).iter_mut().zip(&offset) {
                    *v = self.scale * (*v - b);
                }
            }
        }
        let mut out = self.spec.apply(&z);
        out.standardize_columns();
        out
    }
}

/// Samples any needed rescaling parameters and applies `spec` to `x`.
///
/// In wrapped mode the columns are standardized over the batch before the
/// random rescale and again after the activation, which needs at least two rows.
pub fn apply_activation(
    spec: ActivationSpec,
    x: &Matrix,
    ctx: &mut CorrelatedSampler,
    stream: &mut RngStream,
    wrapped: bool,
) -> Result<Matrix> {
    spec.validate()?;
    if x.rows() == 0 || x.cols() == 0 {
        return Err(invalid("activation input is empty"));
    }
    if wrapped {
        if x.rows() < 2 {
            return Err(invalid("wrapped activation needs at least two rows"));
        }
        Ok(WrappedActivation::with_spec(spec, ctx, stream).apply(x))
    } else {
        Ok(spec.apply(x))
    }
}

#[inline]
pub fn sanitize(v: f64) -> f64 {
    if v.is_nan() {
        0.0
    } else {
        v.clamp(-ACTIVATION_CLAMP, ACTIVATION_CLAMP)
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.max(0.0) + (-x.abs()).exp().ln_1p()
    }
}

pub fn softmax_inplace(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (j, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = j;
        }
    }
    best
}

fn argsort(row: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..row.len()).collect();
    idx.sort_by(|&a, &b| row[a].total_cmp(&row[b]));
    idx
}

/// Mean and std of each column; exposed for tests of the wrapped mode.
pub fn column_stats(m: &Matrix) -> Vec<(f64, f64)> {
    (0..m.cols()).map(|j| column_moments(m, j)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(values: &[f64]) -> Matrix {
        Matrix::from_vec(1, values.len(), values.to_vec()).unwrap()
    }

    #[test]
    fn relu_unwrapped() {
        let y = ActivationSpec::Fixed(FixedActivation::Relu).apply(&row(&[-1.0, 2.0]));
        assert_eq!(y.as_slice(), &[0.0, 2.0]);
    }

    #[test]
    fn signed_square() {
        let y = ActivationSpec::SignedPow(2.0).apply(&row(&[-2.0, 3.0]));
        assert_eq!(y.as_slice(), &[-4.0, 9.0]);
    }

    #[test]
    fn conventions_at_zero() {
        let z = row(&[0.0]);
        assert_eq!(ActivationSpec::Fixed(FixedActivation::Heaviside).apply(&z).get(0, 0), 1.0);
        assert_eq!(ActivationSpec::Fixed(FixedActivation::Signum).apply(&z).get(0, 0), 0.0);
    }

    #[test]
    fn row_wise_activations() {
        let x = row(&[0.5, -1.0, 3.0, 0.0]);
        let oh = ActivationSpec::Fixed(FixedActivation::OneHotArgmax).apply(&x);
        assert_eq!(oh.as_slice(), &[0.0, 0.0, 1.0, 0.0]);
        let sort = ActivationSpec::Fixed(FixedActivation::Argsort).apply(&x);
        assert_eq!(sort.as_slice(), &[1.0, 3.0, 0.0, 2.0]);
        let rank = ActivationSpec::Fixed(FixedActivation::Rank).apply(&x);
        assert_eq!(rank.as_slice(), &[2.0, 0.0, 3.0, 1.0]);
        let sm = ActivationSpec::Fixed(FixedActivation::Softmax).apply(&x);
        assert!((sm.as_slice().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn wrapped_identity_is_standardized() {
        let mut r = RngStream::new(1);
        let mut ctx = CorrelatedSampler::new(&r);
        let x = Matrix::from_fn(50, 3, |i, j| (i * (j + 1)) as f64 + r.normal());
        let y = apply_activation(
            ActivationSpec::Fixed(FixedActivation::Identity),
            &x,
            &mut ctx,
            &mut r,
            true,
        )
        .unwrap();
        for (mu, sd) in column_stats(&y) {
            assert!(mu.abs() < 1e-6 && (sd - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn wrapped_needs_two_rows() {
        let mut r = RngStream::new(1);
        let mut ctx = CorrelatedSampler::new(&r);
        let spec = ActivationSpec::Fixed(FixedActivation::Tanh);
        assert!(apply_activation(spec, &row(&[1.0]), &mut ctx, &mut r, true).is_err());
        assert!(apply_activation(ActivationSpec::IntPow(7), &row(&[1.0]), &mut ctx, &mut r, false).is_err());
    }

    #[test]
    fn every_activation_finite_after_wrapping() {
        let mut r = RngStream::new(2);
        let mut ctx = CorrelatedSampler::new(&r);
        let x = Matrix::from_fn(64, 4, |_, _| r.uniform_range(-1e3, 1e3));
        let mut specs: Vec<ActivationSpec> =
            FixedActivation::ALL.iter().map(|&f| ActivationSpec::Fixed(f)).collect();
        for q in [0.1, 1.0, 10.0] {
            specs.extend([
                ActivationSpec::ReluPow(q),
                ActivationSpec::SignedPow(q),
                ActivationSpec::InversePow(q),
            ]);
        }
        specs.extend((2..=5).map(ActivationSpec::IntPow));
        for spec in specs {
            for _ in 0..5 {
                let y = apply_activation(spec, &x, &mut ctx, &mut r, true).unwrap();
                assert!(y.is_finite(), "{spec:?}");
            }
        }
    }
}
