//! Random functions placed on graph edges.
//!
//! Sampling draws and freezes every parameter; evaluation is then a pure
//! function of the frozen parameters and the input matrix.

use serde::{Deserialize, Serialize};

use crate::activation::{sanitize, softmax_inplace, WrappedActivation};
use crate::error::{Error, Result};
use crate::linalg::{column_moments, lp_distance, Matrix};
use crate::matrix::{random_matrix, sample_matrix, RandomMatrixKind};
use crate::points::POINT_FUNCTIONS;
use crate::rng::RngStream;
use crate::sampler::{random_weights, CorrelatedSampler};

/// Number of random Fourier features in GP functions.
pub const GP_FEATURES: usize = 256;
/// Input dimensions kept by quadratic functions.
pub const QUADRATIC_MAX_INPUTS: usize = 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FunctionKind {
    Nn,
    Tree,
    Discretization,
    Gp,
    Linear,
    Quadratic,
    EmAssignment,
    Product,
}

impl FunctionKind {
    pub const ALL: [FunctionKind; 8] = [
        Self::Nn,
        Self::Tree,
        Self::Discretization,
        Self::Gp,
        Self::Linear,
        Self::Quadratic,
        Self::EmAssignment,
        Self::Product,
    ];

    /// Families that draw centers or split points from arriving data.
    pub fn needs_data(self) -> bool {
        matches!(self, Self::Tree | Self::Discretization | Self::EmAssignment | Self::Product)
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Nn => "nn",
            Self::Tree => "tree",
            Self::Discretization => "discretization",
            Self::Gp => "gp",
            Self::Linear => "linear",
            Self::Quadratic => "quadratic",
            Self::EmAssignment => "em_assignment",
            Self::Product => "product",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearFunction {
    /// `d_out × d_in`
    pub matrix: Matrix,
}

impl LinearFunction {
    pub fn sample(d_in: usize, d_out: usize, ctx: &mut CorrelatedSampler, stream: &mut RngStream) -> Self {
        Self {
            matrix: random_matrix(d_out, d_in, ctx, stream),
        }
    }

    pub fn eval(&self, x: &Matrix) -> Result<Matrix> {
        x.matmul_t(&self.matrix)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum NnStep {
    Linear(LinearFunction),
    Activation(WrappedActivation),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NnFunction {
    pub steps: Vec<NnStep>,
}

impl NnFunction {
    pub fn sample(d_in: usize, d_out: usize, ctx: &mut CorrelatedSampler, stream: &mut RngStream) -> Self {
        let n_layers = ctx.log_int("nn_layers", 1, 3, stream) as usize;
        let width = ctx.log_int("nn_width", 1, 127, stream) as usize;
        let mut dims = vec![width; n_layers + 1];
        dims[0] = d_in;
        dims[n_layers] = d_out;
        let mut steps = Vec::new();
        if stream.bernoulli(0.5) {
            steps.push(NnStep::Activation(WrappedActivation::sample(ctx, stream)));
        }
        for l in 0..n_layers {
            steps.push(NnStep::Linear(LinearFunction::sample(dims[l], dims[l + 1], ctx, stream)));
            if l + 1 < n_layers {
                steps.push(NnStep::Activation(WrappedActivation::sample(ctx, stream)));
            }
        }
        if stream.bernoulli(0.5) {
            steps.push(NnStep::Activation(WrappedActivation::sample(ctx, stream)));
        }
        Self { steps }
    }

    pub fn eval(&self, x: &Matrix) -> Result<Matrix> {
        let mut h = x.clone();
        for step in &self.steps {
            h = match step {
                NnStep::Linear(l) => l.eval(&h)?,
                NnStep::Activation(a) => a.apply(&h),
            };
        }
        Ok(h)
    }
}

/// A symmetric tree: level `l` tests `x[dim_l] > threshold_l` everywhere.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObliviousTree {
    pub splits: Vec<(usize, f64)>,
    pub leaves: Vec<f64>,
}

impl ObliviousTree {
    #[inline]
    pub fn leaf_index(&self, x: &[f64]) -> usize {
        self.splits
            .iter()
            .enumerate()
            .fold(0, |acc, (l, &(dim, t))| acc | (usize::from(x[dim] > t) << l))
    }

    #[inline]
    pub fn eval(&self, x: &[f64]) -> f64 {
        self.leaves[self.leaf_index(x)]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TreeFunction {
    pub d_in: usize,
    /// One ensemble per output dimension.
    pub ensembles: Vec<Vec<ObliviousTree>>,
}

impl TreeFunction {
    pub fn sample(
        d_out: usize,
        data: &Matrix,
        ctx: &mut CorrelatedSampler,
        stream: &mut RngStream,
    ) -> Self {
        let n_trees = ctx.log_int("tree_count", 1, 128, stream) as usize;
        let depth = ctx.int("tree_depth", 1, 7, stream) as usize;
        let mut stds: Vec<f64> = (0..data.cols()).map(|j| column_moments(data, j).1).collect();
        if !stds.iter().any(|s| *s > 0.0) {
            stds.iter_mut().for_each(|s| *s = 1.0);
        }
        let ensembles = (0..d_out)
            .map(|_| {
                (0..n_trees)
                    .map(|_| {
                        let splits = (0..depth)
                            .map(|_| {
                                let dim = stream.weighted_index(&stds);
                                let row = stream.index(data.rows());
                                (dim, data.get(row, dim))
                            })
                            .collect();
                        let leaves = stream.normals(1 << depth);
                        ObliviousTree { splits, leaves }
                    })
                    .collect()
            })
            .collect();
        Self {
            d_in: data.cols(),
            ensembles,
        }
    }

    pub fn eval(&self, x: &Matrix) -> Matrix {
        let n = x.rows();
        let xt = x.transpose();
        let mut out = Matrix::zeros(n, self.ensembles.len());
        let mut acc = vec![0.0; n];
        let mut leaf = vec![0usize; n];
        for (k, trees) in self.ensembles.iter().enumerate() {
            acc.iter_mut().for_each(|a| *a = 0.0);
            for t in trees {
                match t.splits.first() {
                    Some(&(dim, thr)) => {
                        for (idx, &v) in leaf.iter_mut().zip(xt.row(dim)) {
                            *idx = usize::from(v > thr);
                        }
                    }
                    None => leaf.iter_mut().for_each(|l| *l = 0),
                }
                for (l, &(dim, thr)) in t.splits.iter().enumerate().skip(1) {
                    for (idx, &v) in leaf.iter_mut().zip(xt.row(dim)) {
                        *idx |= usize::from(v > thr) << l;
                    }
                }
                for (a, &idx) in acc.iter_mut().zip(&leaf) {
                    *a += t.leaves[idx];
                }
            }
            let inv = 1.0 / trees.len() as f64;
            for (i, a) in acc.iter().enumerate() {
                out.set(i, k, a * inv);
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscretizationFunction {
    pub centers: Matrix,
    pub p: f64,
    pub linear: LinearFunction,
}

impl DiscretizationFunction {
    pub fn sample(
        d_out: usize,
        data: &Matrix,
        ctx: &mut CorrelatedSampler,
        stream: &mut RngStream,
    ) -> Self {
        let k = (ctx.log_int("discretization_centers", 2, 255, stream) as usize).min(data.rows());
        let rows = stream.sample_indices(data.rows(), k);
        let p = ctx.log_num("discretization_p", 0.5, 4.0, stream);
        Self {
            centers: data.select_rows(&rows),
            p,
            linear: LinearFunction::sample(data.cols(), d_out, ctx, stream),
        }
    }

    pub fn nearest(&self, x: &[f64]) -> usize {
        nearest_center(&self.centers, x, self.p)
    }

    pub fn eval(&self, x: &Matrix) -> Result<Matrix> {
        let mapped = self.linear.eval(&self.centers)?;
        let idx: Vec<usize> = (0..x.rows()).map(|i| self.nearest(x.row(i))).collect();
        Ok(mapped.select_rows(&idx))
    }
}

/// Index of the closest row of `centers` under the `L^p` distance; ties go to the lower index.
pub fn nearest_center(centers: &Matrix, x: &[f64], p: f64) -> usize {
    // the 1/p root is monotone, so it is skipped
    if p == 2.0 {
        return lp_scan(centers, x, |d| d * d, f64::sqrt, None);
    }
    if p == 1.0 {
        return lp_scan(centers, x, f64::abs, |d| d, None);
    }
    // the Euclidean winner gives a tight starting bound for the costly powers
    let hint = lp_scan(centers, x, |d| d * d, f64::sqrt, None);
    lp_scan(centers, x, |d| d.abs().powf(p), |d| d.powf(1.0 / p), Some(hint))
}

/// `root(bound)` is the largest single coordinate gap a center may have and still tie the best.
fn lp_scan(
    centers: &Matrix,
    x: &[f64],
    term: impl Fn(f64) -> f64,
    root: impl Fn(f64) -> f64,
    hint: Option<usize>,
) -> usize {
    let dist = |c: usize, bound: f64| {
        let mut d = 0.0;
        for (a, b) in centers.row(c).iter().zip(x) {
            d += term(a - b);
            if d > bound {
                return None;
            }
        }
        (!d.is_nan()).then_some(d)
    };
    let (mut best, mut best_d) = (usize::MAX, f64::INFINITY);
    if let Some(d) = hint.and_then(|h| dist(h, f64::INFINITY)) {
        (best, best_d) = (hint.unwrap(), d);
    }
    let mut gap = root(best_d) * (1.0 + 1e-9);
    for c in 0..centers.rows() {
        if centers.row(c).iter().zip(x).any(|(a, b)| (a - b).abs() > gap) {
            continue;
        }
        if let Some(d) = dist(c, best_d) {
            if d < best_d || (d == best_d && c < best) {
                (best, best_d) = (c, d);
                gap = root(best_d) * (1.0 + 1e-9);
            }
        }
    }
    if best_d.is_finite() {
        best
    } else {
        0
    }
}

/// Inverse CDF of `H_a(r) = 1 - (1 + r)^(1 - a)`.
pub fn gp_radius(a: f64, u: f64) -> f64 {
    let u = u.min(1.0 - 1e-12);
    (1.0 - u).powf(1.0 / (1.0 - a)) - 1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GpFunction {
    /// Frequencies with the input map folded in, `p × d_in`.
    pub frequencies: Matrix,
    pub phases: Vec<f64>,
    /// `d_out × p`
    pub z: Matrix,
    pub a: f64,
    pub product_kernel: bool,
}

impl GpFunction {
    pub fn sample(d_in: usize, d_out: usize, ctx: &mut CorrelatedSampler, stream: &mut RngStream) -> Self {
        let a = ctx.log_num("gp_tail", 2.0, 20.0, stream);
        let product_kernel = ctx.choice("gp_kernel_mode", 2, stream) == 1;
        let frequencies = if product_kernel {
            Matrix::from_fn(GP_FEATURES, d_in, |_, _| gp_radius(a, stream.uniform()))
        } else {
            let mut w = Matrix::zeros(GP_FEATURES, d_in);
            for i in 0..GP_FEATURES {
                let r = gp_radius(a, stream.uniform());
                let z = stream.normals(d_in);
                let len = crate::linalg::norm(&z);
                for (j, zj) in z.iter().enumerate() {
                    w.set(i, j, if len > 0.0 { r * zj / len } else { 0.0 });
                }
            }
            let alpha = ctx.log_num("gp_scale", 0.5, 10.0, stream);
            let weights = random_weights(d_in, ctx, stream);
            let m = Matrix::from_fn(d_in, d_in, |i, _| alpha * weights.values()[i] * stream.normal());
            w.matmul(&m).expect("square input map")
        };
        let phases = (0..GP_FEATURES)
            .map(|_| stream.uniform_range(0.0, std::f64::consts::TAU))
            .collect();
        let z = Matrix::from_fn(d_out, GP_FEATURES, |_, _| stream.normal());
        Self {
            frequencies,
            phases,
            z,
            a,
            product_kernel,
        }
    }

    pub fn features(&self, x: &Matrix) -> Result<Matrix> {
        let mut f = x.matmul_t(&self.frequencies)?;
        let scale = (GP_FEATURES as f64).powf(-0.5);
        for i in 0..f.rows() {
            for (v, b) in f.row_mut(i).iter_mut().zip(&self.phases) {
                *v = scale * (*v + b).cos();
            }
        }
        Ok(f)
    }

    pub fn eval(&self, x: &Matrix) -> Result<Matrix> {
        self.features(x)?.matmul_t(&self.z)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuadraticFunction {
    pub d_in: usize,
    pub inputs: Vec<usize>,
    /// One `(s+1) × (s+1)` matrix per output, `s = inputs.len()`.
    pub slices: Vec<Matrix>,
}

impl QuadraticFunction {
    pub fn sample(d_in: usize, d_out: usize, ctx: &mut CorrelatedSampler, stream: &mut RngStream) -> Self {
        let mut inputs = if d_in > QUADRATIC_MAX_INPUTS {
            stream.sample_indices(d_in, QUADRATIC_MAX_INPUTS)
        } else {
            (0..d_in).collect()
        };
        inputs.sort_unstable();
        let s = inputs.len() + 1;
        let kind = RandomMatrixKind::sample(ctx, stream);
        let slices = (0..d_out).map(|_| sample_matrix(kind, s, s, ctx, stream)).collect();
        Self { d_in, inputs, slices }
    }

    pub fn eval(&self, x: &Matrix) -> Matrix {
        let s = self.inputs.len() + 1;
        let mut xt = vec![1.0; s];
        let mut out = Matrix::zeros(x.rows(), self.slices.len());
        for i in 0..x.rows() {
            for (t, &j) in self.inputs.iter().enumerate() {
                xt[t] = x.get(i, j);
            }
            for (k, m) in self.slices.iter().enumerate() {
                let mut acc = 0.0;
                for (a, xa) in xt.iter().enumerate() {
                    acc += xa * crate::linalg::dot(m.row(a), &xt);
                }
                out.set(i, k, acc);
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmFunction {
    pub centers: Matrix,
    pub sigmas: Vec<f64>,
    pub p: f64,
    pub q: f64,
    pub linear: LinearFunction,
}

impl EmFunction {
    pub fn sample(
        d_out: usize,
        data: &Matrix,
        ctx: &mut CorrelatedSampler,
        stream: &mut RngStream,
    ) -> Self {
        let hi = 16.max(2 * d_out) as i64;
        let m = ctx.log_int("em_components", 2, hi, stream) as usize;
        let mut centers = Matrix::zeros(m, data.cols());
        for c in 0..m {
            let r = stream.index(data.rows());
            for j in 0..data.cols() {
                centers.set(c, j, data.get(r, j) + stream.normal());
            }
        }
        let sigmas = (0..m).map(|_| (0.1 * stream.normal()).exp()).collect();
        let p = ctx.log_num("em_p", 1.0, 4.0, stream);
        let q = ctx.log_num("em_q", 1.0, 2.0, stream);
        Self {
            centers,
            sigmas,
            p,
            q,
            linear: LinearFunction::sample(m, d_out, ctx, stream),
        }
    }

    /// Softmax of the component logits for every row.
    pub fn assignments(&self, x: &Matrix) -> Matrix {
        let m = self.centers.rows();
        let mut out = Matrix::zeros(x.rows(), m);
        for i in 0..x.rows() {
            let row = out.row_mut(i);
            for c in 0..m {
                let s = self.sigmas[c];
                let dist = lp_distance(x.row(i), self.centers.row(c), self.p);
                row[c] = -0.5 * (std::f64::consts::TAU * s * s).ln() - (dist / s).powf(self.q);
            }
            softmax_inplace(row);
        }
        out
    }

    pub fn eval(&self, x: &Matrix) -> Result<Matrix> {
        self.linear.eval(&self.assignments(x))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum RandomFunction {
    Nn(NnFunction),
    Tree(TreeFunction),
    Discretization(DiscretizationFunction),
    Gp(GpFunction),
    Linear(LinearFunction),
    Quadratic(QuadraticFunction),
    EmAssignment(EmFunction),
    Product(Box<RandomFunction>, Box<RandomFunction>),
}

impl RandomFunction {
    pub fn kind(&self) -> FunctionKind {
        match self {
            Self::Nn(_) => FunctionKind::Nn,
            Self::Tree(_) => FunctionKind::Tree,
            Self::Discretization(_) => FunctionKind::Discretization,
            Self::Gp(_) => FunctionKind::Gp,
            Self::Linear(_) => FunctionKind::Linear,
            Self::Quadratic(_) => FunctionKind::Quadratic,
            Self::EmAssignment(_) => FunctionKind::EmAssignment,
            Self::Product(..) => FunctionKind::Product,
        }
    }

    pub fn d_in(&self) -> usize {
        match self {
            Self::Nn(f) => f
                .steps
                .iter()
                .find_map(|s| match s {
                    NnStep::Linear(l) => Some(l.matrix.cols()),
                    NnStep::Activation(_) => None,
                })
                .expect("at least one layer"),
            Self::Tree(f) => f.d_in,
            Self::Discretization(f) => f.centers.cols(),
            Self::Gp(f) => f.frequencies.cols(),
            Self::Linear(f) => f.matrix.cols(),
            Self::Quadratic(f) => f.d_in,
            Self::EmAssignment(f) => f.centers.cols(),
            Self::Product(f, _) => f.d_in(),
        }
    }

    pub fn d_out(&self) -> usize {
        match self {
            Self::Nn(f) => f
                .steps
                .iter()
                .rev()
                .find_map(|s| match s {
                    NnStep::Linear(l) => Some(l.matrix.rows()),
                    NnStep::Activation(_) => None,
                })
                .expect("at least one layer"),
            Self::Tree(f) => f.ensembles.len(),
            Self::Discretization(f) => f.linear.matrix.rows(),
            Self::Gp(f) => f.z.rows(),
            Self::Linear(f) => f.matrix.rows(),
            Self::Quadratic(f) => f.slices.len(),
            Self::EmAssignment(f) => f.linear.matrix.rows(),
            Self::Product(f, _) => f.d_out(),
        }
    }

    pub fn eval(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.d_in() {
            return Err(Error::DimensionMismatch {
                context: "eval_function",
                expected: self.d_in(),
                got: x.cols(),
            });
        }
        let mut out = match self {
            Self::Nn(f) => f.eval(x)?,
            Self::Tree(f) => f.eval(x),
            Self::Discretization(f) => f.eval(x)?,
            Self::Gp(f) => f.eval(x)?,
            Self::Linear(f) => f.eval(x)?,
            Self::Quadratic(f) => f.eval(x),
            Self::EmAssignment(f) => f.eval(x)?,
            Self::Product(f, g) => {
                let mut a = f.eval(x)?;
                let b = g.eval(x)?;
                for (u, v) in a.as_mut_slice().iter_mut().zip(b.as_slice()) {
                    *u *= v;
                }
                a
            }
        };
        out.map_inplace(sanitize);
        Ok(out)
    }
}

pub fn eval_function(f: &RandomFunction, x: &Matrix) -> Result<Matrix> {
    f.eval(x)
}

/// Samples a function of the given family, or of a random family when `kind` is `None`.
pub fn sample_function(
    kind: Option<FunctionKind>,
    d_in: usize,
    d_out: usize,
    data_hint: Option<&Matrix>,
    ctx: &mut CorrelatedSampler,
    stream: &mut RngStream,
) -> Result<RandomFunction> {
    if d_in == 0 || d_out == 0 {
        return Err(crate::error::invalid("function dims must be positive"));
    }
    if let Some(h) = data_hint {
        if h.cols() != d_in {
            return Err(Error::DimensionMismatch {
                context: "sample_function data hint",
                expected: d_in,
                got: h.cols(),
            });
        }
        if h.rows() == 0 {
            return Err(crate::error::invalid("data hint has no rows"));
        }
    }
    let kind = kind.unwrap_or_else(|| FunctionKind::ALL[ctx.choice("function_type", 8, stream)]);
    let need = |name| data_hint.ok_or(Error::MissingDataHint(name));
    Ok(match kind {
        FunctionKind::Nn => RandomFunction::Nn(NnFunction::sample(d_in, d_out, ctx, stream)),
        FunctionKind::Tree => {
            RandomFunction::Tree(TreeFunction::sample(d_out, need("tree")?, ctx, stream))
        }
        FunctionKind::Discretization => RandomFunction::Discretization(
            DiscretizationFunction::sample(d_out, need("discretization")?, ctx, stream),
        ),
        FunctionKind::Gp => RandomFunction::Gp(GpFunction::sample(d_in, d_out, ctx, stream)),
        FunctionKind::Linear => {
            RandomFunction::Linear(LinearFunction::sample(d_in, d_out, ctx, stream))
        }
        FunctionKind::Quadratic => {
            RandomFunction::Quadratic(QuadraticFunction::sample(d_in, d_out, ctx, stream))
        }
        FunctionKind::EmAssignment => {
            RandomFunction::EmAssignment(EmFunction::sample(d_out, need("em_assignment")?, ctx, stream))
        }
        FunctionKind::Product => {
            let factor = |ctx: &mut CorrelatedSampler, stream: &mut RngStream| {
                let k = POINT_FUNCTIONS[ctx.choice("product_factor_type", POINT_FUNCTIONS.len(), stream)];
                sample_function(Some(k), d_in, d_out, data_hint, ctx, stream).map(Box::new)
            };
            let f = factor(ctx, stream)?;
            let g = factor(ctx, stream)?;
            RandomFunction::Product(f, g)
        }
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Aggregation {
    Sum,
    Product,
    Max,
    LogSumExp,
}

impl Aggregation {
    pub const ALL: [Aggregation; 4] = [Self::Sum, Self::Product, Self::Max, Self::LogSumExp];

    fn combine(self, values: &[f64]) -> f64 {
        match self {
            Self::Sum => values.iter().sum(),
            Self::Product => values.iter().product(),
            Self::Max => values.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
            Self::LogSumExp => {
                let m = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                m + values.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum MultiFunction {
    /// Parents concatenated along the feature axis, then one function.
    Concat(RandomFunction),
    /// One function per parent, combined element-wise.
    Aggregate {
        aggregation: Aggregation,
        inner: Vec<RandomFunction>,
    },
}

pub fn sample_multi(
    parents: &[&Matrix],
    d_out: usize,
    ctx: &mut CorrelatedSampler,
    stream: &mut RngStream,
) -> Result<MultiFunction> {
    if parents.is_empty() {
        return Err(crate::error::invalid("multi-function needs at least one parent"));
    }
    if parents.len() == 1 || stream.bernoulli(0.5) {
        let joined = Matrix::hcat(parents)?;
        let f = sample_function(None, joined.cols(), d_out, Some(&joined), ctx, stream)?;
        return Ok(MultiFunction::Concat(f));
    }
    let aggregation = Aggregation::ALL[ctx.choice("aggregation", 4, stream)];
    let inner = parents
        .iter()
        .map(|p| sample_function(None, p.cols(), d_out, Some(p), ctx, stream))
        .collect::<Result<_>>()?;
    Ok(MultiFunction::Aggregate { aggregation, inner })
}

pub fn eval_multi(mf: &MultiFunction, parents: &[&Matrix]) -> Result<Matrix> {
    match mf {
        MultiFunction::Concat(f) => f.eval(&Matrix::hcat(parents)?),
        MultiFunction::Aggregate { aggregation, inner } => {
            if inner.len() != parents.len() {
                return Err(Error::DimensionMismatch {
                    context: "eval_multi parents",
                    expected: inner.len(),
                    got: parents.len(),
                });
            }
            let outs = inner
                .iter()
                .zip(parents)
                .map(|(f, p)| f.eval(p))
                .collect::<Result<Vec<_>>>()?;
            let (rows, cols) = outs[0].shape();
            if let Some(bad) = outs.iter().find(|o| o.shape() != (rows, cols)) {
                return Err(Error::DimensionMismatch {
                    context: "eval_multi outputs",
                    expected: rows * cols,
                    got: bad.rows() * bad.cols(),
                });
            }
            let mut buf = vec![0.0; outs.len()];
            let mut out = Matrix::zeros(rows, cols);
            for (idx, v) in out.as_mut_slice().iter_mut().enumerate() {
                for (b, o) in buf.iter_mut().zip(&outs) {
                    *b = o.as_slice()[idx];
                }
                *v = sanitize(aggregation.combine(&buf));
            }
            Ok(out)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::gaussian;

    fn setup(seed: u64) -> (CorrelatedSampler, RngStream) {
        let s = RngStream::new(seed);
        (CorrelatedSampler::new(&s), s)
    }

    #[test]
    fn linear_matches_triple_loop() {
        let (mut ctx, mut s) = setup(1);
        let f = sample_function(Some(FunctionKind::Linear), 3, 3, None, &mut ctx, &mut s).unwrap();
        let RandomFunction::Linear(lin) = &f else { unreachable!() };
        let x = gaussian(5, 3, &mut s);
        let y = f.eval(&x).unwrap();
        for i in 0..5 {
            for o in 0..3 {
                let mut want = 0.0;
                for j in 0..3 {
                    want += lin.matrix.get(o, j) * x.get(i, j);
                }
                assert!((y.get(i, o) - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn tree_output_within_leaf_range() {
        let (mut ctx, mut s) = setup(2);
        let data = gaussian(100, 4, &mut s);
        let f = TreeFunction::sample(2, &data, &mut ctx, &mut s);
        let y = f.eval(&gaussian(50, 4, &mut s));
        for (k, trees) in f.ensembles.iter().enumerate() {
            let lo = trees.iter().flat_map(|t| &t.leaves).cloned().fold(f64::INFINITY, f64::min);
            let hi = trees.iter().flat_map(|t| &t.leaves).cloned().fold(f64::NEG_INFINITY, f64::max);
            for i in 0..50 {
                assert!((lo..=hi).contains(&y.get(i, k)));
            }
        }
        for tree in f.ensembles.iter().flatten() {
            assert_eq!(tree.leaves.len(), 1 << tree.splits.len());
        }
    }

    #[test]
    fn missing_hint_is_an_error() {
        let (mut ctx, mut s) = setup(3);
        for kind in [FunctionKind::Tree, FunctionKind::Discretization, FunctionKind::EmAssignment] {
            let err = sample_function(Some(kind), 2, 2, None, &mut ctx, &mut s).unwrap_err();
            assert!(matches!(err, Error::MissingDataHint(_)));
        }
    }

    #[test]
    fn em_assignments_sum_to_one() {
        let (mut ctx, mut s) = setup(4);
        let data = gaussian(30, 3, &mut s);
        let f = EmFunction::sample(2, &data, &mut ctx, &mut s);
        let w = f.assignments(&data);
        for i in 0..w.rows() {
            assert!((w.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn quadratic_identity_slices() {
        let f = QuadraticFunction {
            d_in: 2,
            inputs: vec![0, 1],
            slices: vec![Matrix::identity(3)],
        };
        let x = Matrix::from_rows(&[vec![1.0, 2.0]]).unwrap();
        // x̃ = (1, 2, 1)
        let xt = [1.0, 2.0, 1.0];
        let mut want = 0.0;
        for j in 0..3 {
            for k in 0..3 {
                want += if j == k { 1.0 } else { 0.0 } * xt[j] * xt[k];
            }
        }
        assert_eq!(f.eval(&x).get(0, 0), want);
    }

    #[test]
    fn discretization_maps_centers_to_themselves() {
        let (mut ctx, mut s) = setup(5);
        let data = gaussian(40, 3, &mut s);
        let mut f = DiscretizationFunction::sample(2, &data, &mut ctx, &mut s);
        f.centers = data.clone();
        f.p = 2.0;
        for i in 0..data.rows() {
            assert_eq!(f.nearest(data.row(i)), i);
        }
    }

    #[test]
    fn gp_radius_median() {
        for a in [2.5, 5.0, 20.0] {
            let want = 2f64.powf(1.0 / (a - 1.0)) - 1.0;
            assert!((gp_radius(a, 0.5) - want).abs() < 1e-12);
        }
        assert!(gp_radius(2.0, 1.0).is_finite());
    }

    #[test]
    fn logsumexp_of_zeros() {
        let f = RandomFunction::Linear(LinearFunction {
            matrix: Matrix::zeros(2, 2),
        });
        let mf = MultiFunction::Aggregate {
            aggregation: Aggregation::LogSumExp,
            inner: vec![f.clone(), f],
        };
        let x = Matrix::filled(3, 2, 1.0);
        let y = eval_multi(&mf, &[&x, &x]).unwrap();
        assert!(y.as_slice().iter().all(|v| (v - 2f64.ln()).abs() < 1e-15));
    }

    #[test]
    fn every_family_is_finite_and_deterministic() {
        for seed in 0..10 {
            for kind in FunctionKind::ALL {
                let (mut ctx, mut s) = setup(seed);
                let data = gaussian(64, 5, &mut s);
                let f = sample_function(Some(kind), 5, 3, Some(&data), &mut ctx, &mut s).unwrap();
                assert_eq!((f.d_in(), f.d_out(), f.kind()), (5, 3, kind));
                let a = f.eval(&data).unwrap();
                let b = f.eval(&data).unwrap();
                assert!(a.is_finite());
                assert_eq!(a, b);
            }
        }
    }
}
