//! End-to-end synthetic dataset generation.
//!
//! A dataset is drawn by sampling global characteristics, a random DAG whose
//! nodes carry random functions, and converters that read dataset columns
//! off the node data. Nodes are evaluated in index order (edges always point
//! from lower to higher index), the columns are postprocessed, and an
//! optional predictive filter decides whether the dataset is kept.

use std::collections::VecDeque;
use std::fmt;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::activation::sigmoid;
use crate::error::{invalid, Error, Result};
use crate::filter::{filter_xy, one_hot, FilterConfig, FilterOutcome};
use crate::function::{eval_multi, nearest_center, sample_function, sample_multi};
use crate::linalg::{moments, Matrix};
use crate::points::{random_points, POINT_FUNCTIONS};
use crate::rng::RngStream;
use crate::sampler::{random_weights, CorrelatedSampler, ScalarDistSpec};

/// Graph resamples allowed inside one attempt before the attempt is rejected.
pub const MAX_GRAPH_RESAMPLES: usize = 1000;
/// Values further than this many standard deviations from the median are clipped.
pub const OUTLIER_STDS: f64 = 4.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Classification,
    Regression,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskMix {
    Classification,
    Regression,
    /// Each seed picks one of the two with equal probability.
    Mixed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerationConfig {
    /// Inclusive range of sample counts.
    pub rows: (usize, usize),
    /// Inclusive range of column counts.
    pub cols: (usize, usize),
    pub task: TaskMix,
    pub train_fraction: f64,
    pub filter: bool,
    pub filter_config: FilterConfig,
    pub max_attempts: usize,
    /// Skip nodes that no assigned node depends on.
    pub prune: bool,
    /// Apply the Kumaraswamy warp to the extracted value as well as to the node data.
    pub warp_values: bool,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        Self {
            rows: (1024, 1024),
            cols: (2, 100),
            task: TaskMix::Mixed,
            train_fraction: 0.5,
            filter: true,
            filter_config: FilterConfig::default(),
            max_attempts: 64,
            prune: true,
            warp_values: false,
        }
    }
}

impl GenerationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rows.0 < 4 || self.rows.0 > self.rows.1 {
            return Err(invalid(format!("row range {:?} must be non-empty with at least 4 rows", self.rows)));
        }
        if self.cols.0 < 1 || self.cols.0 > self.cols.1 {
            return Err(invalid(format!("column range {:?} must be non-empty and positive", self.cols)));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(invalid("train_fraction must lie in (0, 1)"));
        }
        if self.max_attempts == 0 {
            return Err(invalid("max_attempts must be positive"));
        }
        self.filter_config.validate()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Task {
    Classification { n_classes: usize },
    Regression,
}

impl Task {
    pub fn kind(self) -> TaskKind {
        match self {
            Task::Classification { .. } => TaskKind::Classification,
            Task::Regression => TaskKind::Regression,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub n_samples: usize,
    pub n_columns: usize,
    pub task: Task,
    pub train_fraction: f64,
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ColumnKind {
    Numeric,
    Categorical { cardinality: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GlobalCharacteristics {
    pub categorical_ratio: f64,
    pub max_cardinality: usize,
    pub columns: Vec<ColumnKind>,
    pub n_nodes: usize,
}

/// Ratio of categorical columns from a raw `Uniform(-0.5, 1.2)` draw.
pub fn clip_ratio(raw: f64) -> f64 {
    raw.clamp(0.0, 1.0)
}

pub fn sample_spec(
    config: &GenerationConfig,
    task: TaskKind,
    seed: u64,
    ctx: &mut CorrelatedSampler,
    stream: &mut RngStream,
) -> (DatasetSpec, GlobalCharacteristics) {
    let n_samples = stream.int_inclusive(config.rows.0 as i64, config.rows.1 as i64) as usize;
    let n_columns = stream.int_inclusive(config.cols.0 as i64, config.cols.1 as i64) as usize;
    let task = match task {
        TaskKind::Classification => Task::Classification {
            n_classes: stream.int_inclusive(2, 10) as usize,
        },
        TaskKind::Regression => Task::Regression,
    };
    let ratio = clip_ratio(stream.uniform_range(-0.5, 1.2));
    let max_cardinality = ctx.log_int("max_cardinality", 2, 9, stream) as usize;
    let n_categorical = (ratio * n_columns as f64).round() as usize;
    let correlated_fraction = stream.uniform();
    let columns = (0..n_columns)
        .map(|j| {
            if j >= n_categorical {
                return ColumnKind::Numeric;
            }
            let cardinality = if stream.uniform() < correlated_fraction {
                ctx.log_int("categorical_cardinality", 2, max_cardinality as i64, stream)
            } else {
                ScalarDistSpec::log_int("categorical_cardinality", 2, max_cardinality as i64)
                    .map_base(stream.uniform()) as i64
            };
            ColumnKind::Categorical {
                cardinality: cardinality as usize,
            }
        })
        .collect();
    let n_nodes = ctx.log_int("graph_nodes", 2, 32, stream) as usize;
    (
        DatasetSpec {
            n_samples,
            n_columns,
            task,
            train_fraction: config.train_fraction,
            seed,
        },
        GlobalCharacteristics {
            categorical_ratio: ratio,
            max_cardinality,
            columns,
            n_nodes,
        },
    )
}

/// Edges `(i, j)`, `i < j`, each present with probability `sigmoid(A + B_i + C_j)`
/// for standard Cauchy `A`, `B_i`, `C_j`.
pub fn sample_graph(n_nodes: usize, stream: &mut RngStream) -> Vec<(usize, usize)> {
    let a = stream.cauchy();
    let b: Vec<f64> = (0..n_nodes).map(|_| stream.cauchy()).collect();
    let c: Vec<f64> = (0..n_nodes).map(|_| stream.cauchy()).collect();
    sample_graph_with(a, &b, &c, stream)
}

pub fn edge_probability(a: f64, b_i: f64, c_j: f64) -> f64 {
    sigmoid(a + b_i + c_j)
}

pub fn sample_graph_with(a: f64, b: &[f64], c: &[f64], stream: &mut RngStream) -> Vec<(usize, usize)> {
    let n = b.len();
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if stream.bernoulli(edge_probability(a, b[i], c[j])) {
                edges.push((i, j));
            }
        }
    }
    edges
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NeighborOutput {
    Input,
    Index,
    Center,
    FunctionOfCenter,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SoftmaxOutput {
    Input,
    Index,
    RandomPoints,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Converter {
    NumericIdentity,
    NumericKumaraswamy {
        a: f64,
        b: f64,
    },
    CatNeighbor {
        output: NeighborOutput,
        c: usize,
        d: usize,
        p: f64,
    },
    CatSoftmax {
        output: SoftmaxOutput,
        c: usize,
        a: f64,
        weights: Vec<f64>,
    },
}

impl Converter {
    pub fn dim(&self) -> usize {
        match self {
            Converter::NumericIdentity | Converter::NumericKumaraswamy { .. } => 1,
            Converter::CatNeighbor { d, .. } => *d,
            Converter::CatSoftmax { c, .. } => *c,
        }
    }

    pub fn sample(kind: ColumnKind, ctx: &mut CorrelatedSampler, stream: &mut RngStream) -> Self {
        match kind {
            ColumnKind::Numeric => {
                if ctx.choice("numeric_converter", 2, stream) == 0 {
                    Converter::NumericIdentity
                } else {
                    Converter::NumericKumaraswamy {
                        a: ctx.log_num("kumaraswamy_a", 0.2, 5.0, stream),
                        b: ctx.log_num("kumaraswamy_b", 0.2, 5.0, stream),
                    }
                }
            }
            ColumnKind::Categorical { cardinality: c } => {
                let variant = ctx.choice("categorical_converter", 7, stream);
                if variant < 4 {
                    let output = [
                        NeighborOutput::Input,
                        NeighborOutput::Index,
                        NeighborOutput::Center,
                        NeighborOutput::FunctionOfCenter,
                    ][variant];
                    let d = if stream.bernoulli(0.5) {
                        c
                    } else {
                        ctx.int("neighbor_dim", 1, c as i64 - 1, stream) as usize
                    };
                    let p = ctx.log_num("neighbor_p", 0.5, 4.0, stream);
                    Converter::CatNeighbor { output, c, d, p }
                } else {
                    let output = [SoftmaxOutput::Input, SoftmaxOutput::Index, SoftmaxOutput::RandomPoints][variant - 4];
                    let a = ctx.log_num("softmax_scale", 0.1, 10.0, stream);
                    let weights = random_weights(c, ctx, stream).values().to_vec();
                    Converter::CatSoftmax { output, c, a, weights }
                }
            }
        }
    }
}

/// `1 - (1 - x^a)^b` after min-max scaling to `[0, 1]`.
pub fn kumaraswamy_warp(values: &[f64], a: f64, b: f64) -> Vec<f64> {
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    values
        .iter()
        .map(|&v| {
            let x = if span > 0.0 { ((v - lo) / span).clamp(0.0, 1.0) } else { 0.0 };
            1.0 - (1.0 - x.powf(a)).powf(b)
        })
        .collect()
}

/// Applies `conv` to the node slice `x`, returning the updated slice and the extracted column.
pub fn apply_converter(
    conv: &Converter,
    x: &Matrix,
    ctx: &mut CorrelatedSampler,
    stream: &mut RngStream,
) -> Result<(Matrix, Vec<f64>)> {
    if x.cols() != conv.dim() || x.rows() == 0 {
        return Err(Error::DimensionMismatch {
            context: "apply_converter",
            expected: conv.dim(),
            got: x.cols(),
        });
    }
    let n = x.rows();
    Ok(match conv {
        Converter::NumericIdentity => (x.clone(), x.column(0)),
        Converter::NumericKumaraswamy { a, b } => {
            let v = x.column(0);
            let warped = kumaraswamy_warp(&v, *a, *b);
            (Matrix::column_vector(&warped), v)
        }
        Converter::CatNeighbor { output, c, d, p } => {
            let rows: Vec<usize> = if n >= *c {
                stream.sample_indices(n, *c)
            } else {
                (0..*c).map(|_| stream.index(n)).collect()
            };
            let centers = x.select_rows(&rows);
            let cats: Vec<usize> = (0..n).map(|i| nearest_center(&centers, x.row(i), *p)).collect();
            let out = match output {
                NeighborOutput::Input => x.clone(),
                NeighborOutput::Index => Matrix::from_fn(n, *d, |i, _| cats[i] as f64),
                NeighborOutput::Center => centers.select_rows(&cats),
                NeighborOutput::FunctionOfCenter => {
                    let kind = POINT_FUNCTIONS[ctx.choice("converter_function_type", POINT_FUNCTIONS.len(), stream)];
                    let f = sample_function(Some(kind), *d, *d, Some(&centers), ctx, stream)?;
                    f.eval(&centers)?.select_rows(&cats)
                }
            };
            (out, cats.iter().map(|&k| k as f64).collect())
        }
        Converter::CatSoftmax { output, c, a, weights } => {
            let mut z = x.clone();
            z.standardize_columns();
            let bias: Vec<f64> = weights.iter().map(|w| (w + 1e-4).ln()).collect();
            let mut logits = vec![0.0; *c];
            let cats: Vec<usize> = (0..n)
                .map(|i| {
                    for ((l, zi), b) in logits.iter_mut().zip(z.row(i)).zip(&bias) {
                        *l = a * zi + b;
                    }
                    crate::activation::softmax_inplace(&mut logits);
                    stream.weighted_index(&logits)
                })
                .collect();
            let out = match output {
                SoftmaxOutput::Input => x.clone(),
                SoftmaxOutput::Index => Matrix::from_fn(n, *c, |i, _| cats[i] as f64),
                SoftmaxOutput::RandomPoints => random_points(*c, *c, ctx, stream).select_rows(&cats),
            };
            (out, cats.iter().map(|&k| k as f64).collect())
        }
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Slot {
    Column(usize),
    Target,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    pub slot: Slot,
    pub node: usize,
    pub start: usize,
    pub converter: Converter,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PriorGraph {
    pub n_nodes: usize,
    pub edges: Vec<(usize, usize)>,
    pub node_dims: Vec<usize>,
    /// Column assignments in column order, then the target.
    pub assignments: Vec<Assignment>,
}

impl PriorGraph {
    pub fn parents(&self, node: usize) -> Vec<usize> {
        self.edges.iter().filter(|e| e.1 == node).map(|e| e.0).collect()
    }

    /// `node` together with everything that has a path into it.
    pub fn ancestors(&self, node: usize) -> Vec<bool> {
        let mut seen = vec![false; self.n_nodes];
        let mut queue = VecDeque::from([node]);
        seen[node] = true;
        while let Some(v) = queue.pop_front() {
            for &(i, j) in &self.edges {
                if j == v && !seen[i] {
                    seen[i] = true;
                    queue.push_back(i);
                }
            }
        }
        seen
    }

    pub fn target_node(&self) -> usize {
        self.assignments
            .iter()
            .find(|a| a.slot == Slot::Target)
            .expect("target is always assigned")
            .node
    }

    /// Nodes some assignment depends on.
    pub fn required_nodes(&self) -> Vec<bool> {
        let mut need = vec![false; self.n_nodes];
        for a in &self.assignments {
            for (n, anc) in need.iter_mut().zip(self.ancestors(a.node)) {
                *n |= anc;
            }
        }
        need
    }
}

/// Accepts the graph iff some feature node shares an ancestor (itself included) with the target node.
pub fn filter_graph(graph: &PriorGraph) -> bool {
    let target = graph.ancestors(graph.target_node());
    graph
        .assignments
        .iter()
        .filter(|a| a.slot != Slot::Target)
        .any(|a| graph.ancestors(a.node).iter().zip(&target).any(|(x, y)| *x && *y))
}

/// Picks a uniform number of eligible nodes, a subset of that size, then a node per item.
pub fn assign_nodes(n_items: usize, n_nodes: usize, stream: &mut RngStream) -> Vec<usize> {
    let k = stream.int_inclusive(1, n_nodes as i64) as usize;
    let eligible = stream.sample_indices(n_nodes, k);
    (0..n_items).map(|_| eligible[stream.index(k)]).collect()
}

/// Samples graphs and node assignments until the graph filter accepts.
/// Returns the graph and the number of rejected draws.
pub fn sample_prior_graph(
    chars: &GlobalCharacteristics,
    converters: &[Converter],
    ctx: &mut CorrelatedSampler,
    stream: &mut RngStream,
) -> Option<(PriorGraph, usize)> {
    let n_nodes = chars.n_nodes;
    let n_x = converters.len() - 1;
    for retry in 0..MAX_GRAPH_RESAMPLES {
        let edges = sample_graph(n_nodes, stream);
        let x_nodes = assign_nodes(n_x, n_nodes, stream);
        let y_node = assign_nodes(1, n_nodes, stream)[0];
        let assignments: Vec<Assignment> = x_nodes
            .iter()
            .enumerate()
            .map(|(j, &node)| (Slot::Column(j), node))
            .chain([(Slot::Target, y_node)])
            .zip(converters)
            .map(|((slot, node), conv)| Assignment {
                slot,
                node,
                start: 0,
                converter: conv.clone(),
            })
            .collect();
        let mut graph = PriorGraph {
            n_nodes,
            edges,
            node_dims: vec![0; n_nodes],
            assignments,
        };
        if !filter_graph(&graph) {
            continue;
        }
        for a in &mut graph.assignments {
            a.start = graph.node_dims[a.node];
            graph.node_dims[a.node] += a.converter.dim();
        }
        for d in &mut graph.node_dims {
            *d += ctx.log_int("node_extra_dims", 1, 32, stream) as usize;
        }
        return Some((graph, retry));
    }
    None
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct NodeOptions {
    /// Overrides the random node importance.
    pub importance: Option<f64>,
    pub warp_values: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NodeOutput {
    pub data: Matrix,
    pub columns: Vec<(Slot, Vec<f64>)>,
}

/// Node data before converters: function output (or random points), standardized,
/// scaled by random feature importances and divided by the mean row norm.
pub fn prepare_node_data(
    node: usize,
    parents: &[&Matrix],
    graph: &PriorGraph,
    n_samples: usize,
    ctx: &mut CorrelatedSampler,
    stream: &mut RngStream,
) -> Result<Matrix> {
    let d = graph.node_dims[node];
    let mut x = if parents.is_empty() {
        random_points(n_samples, d, ctx, stream)
    } else {
        let mf = sample_multi(parents, d, ctx, stream)?;
        eval_multi(&mf, parents)?
    };
    x.standardize_columns();
    let w = random_weights(d, ctx, stream);
    for i in 0..x.rows() {
        for (v, wj) in x.row_mut(i).iter_mut().zip(w.values()) {
            *v *= wj;
        }
    }
    let mean_norm = x.row_norms().iter().sum::<f64>() / x.rows() as f64;
    if mean_norm > 0.0 && mean_norm.is_finite() {
        x.scale(1.0 / mean_norm);
    }
    Ok(x)
}

pub fn run_node(
    node: usize,
    parents: &[&Matrix],
    graph: &PriorGraph,
    n_samples: usize,
    ctx: &mut CorrelatedSampler,
    stream: &mut RngStream,
    opts: &NodeOptions,
) -> Result<NodeOutput> {
    let mut x = prepare_node_data(node, parents, graph, n_samples, ctx, stream)?;
    let mut columns = Vec::new();
    for a in graph.assignments.iter().filter(|a| a.node == node) {
        let len = a.converter.dim();
        let slice = x.column_block(a.start, len);
        let (updated, mut values) = apply_converter(&a.converter, &slice, ctx, stream)?;
        if opts.warp_values && matches!(a.converter, Converter::NumericKumaraswamy { .. }) {
            values = updated.column(0);
        }
        x.set_column_block(a.start, &updated);
        columns.push((a.slot, values));
    }
    let importance = match opts.importance {
        Some(v) => v,
        None => ctx.log_num("node_importance", 0.1, 10.0, stream),
    };
    x.scale(importance);
    Ok(NodeOutput { data: x, columns })
}

/// Columns as read off the graph, before postprocessing.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RawDataset {
    pub columns: Vec<Vec<f64>>,
    pub kinds: Vec<ColumnKind>,
    pub y: Vec<f64>,
    pub task: Task,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratedDataset {
    /// `n × m`, categoricals ordinal-encoded.
    pub x: Matrix,
    /// Class indices or standardized regression targets.
    pub y: Vec<f64>,
    pub column_meta: Vec<ColumnKind>,
    pub task: TaskKind,
    /// Zero for regression.
    pub n_classes: usize,
    pub train_mask: Vec<bool>,
    pub seed: u64,
}

impl GeneratedDataset {
    pub fn n_rows(&self) -> usize {
        self.x.rows()
    }

    pub fn n_cols(&self) -> usize {
        self.x.cols()
    }

    /// Targets as the filter sees them: one-hot for classification.
    pub fn filter_targets(&self) -> Matrix {
        match self.task {
            TaskKind::Classification => one_hot(&self.y, self.n_classes),
            TaskKind::Regression => Matrix::column_vector(&self.y),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    GraphResamples,
    NoColumns,
    TooFewClasses,
    SplitUnfixable,
    ConstantTarget,
    Filter,
}

#[derive(Clone, Debug, PartialEq)]
pub enum PostprocessOutcome {
    Accepted(GeneratedDataset),
    Rejected(RejectReason),
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PostprocessOptions {
    /// `perm[c]` is the new index of compacted class `c`; random when absent.
    pub class_permutation: Option<Vec<usize>>,
}

/// Clips values beyond `OUTLIER_STDS` standard deviations from the median,
/// then standardizes with the population standard deviation.
pub fn clip_and_standardize(values: &mut [f64]) {
    let (_, std) = moments(values);
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let m = sorted.len();
    let median = if m % 2 == 1 {
        sorted[m / 2]
    } else {
        0.5 * (sorted[m / 2 - 1] + sorted[m / 2])
    };
    let (lo, hi) = (median - OUTLIER_STDS * std, median + OUTLIER_STDS * std);
    values.iter_mut().for_each(|v| *v = v.clamp(lo, hi));
    let (mean, std) = moments(values);
    let inv = if std > 0.0 { 1.0 / std } else { 1.0 };
    values.iter_mut().for_each(|v| *v = (*v - mean) * inv);
}

fn is_constant(values: &[f64]) -> bool {
    values.iter().all(|v| *v == values[0])
}

/// Maps each distinct value to its rank among the distinct values.
fn ordinal_encode(values: &[f64]) -> (Vec<f64>, usize) {
    let mut distinct = values.to_vec();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    let coded = values
        .iter()
        .map(|v| distinct.binary_search_by(|d| d.total_cmp(v)).expect("present") as f64)
        .collect();
    (coded, distinct.len())
}

/// Moves rows between the train and test parts until every class appears in both.
/// `order` lists rows with the first `n_train` forming the training part.
fn fix_split(labels: &[usize], n_classes: usize, order: &mut [usize], n_train: usize) -> bool {
    let count = |part: &[usize]| {
        let mut c = vec![0usize; n_classes];
        for &r in part {
            c[labels[r]] += 1;
        }
        c
    };
    for class in 0..n_classes {
        let (train, test) = order.split_at(n_train);
        let (tr, te) = (count(train), count(test));
        if tr[class] + te[class] < 2 {
            return false;
        }
        if tr[class] > 0 && te[class] > 0 {
            continue;
        }
        let missing_in_test = te[class] == 0;
        let (donor, spare) = if missing_in_test { (&tr, &te) } else { (&te, &tr) };
        debug_assert!(donor[class] >= 2);
        let (from_part, to_part) = if missing_in_test {
            (0..n_train, n_train..order.len())
        } else {
            (n_train..order.len(), 0..n_train)
        };
        let Some(a) = from_part.clone().find(|&k| labels[order[k]] == class) else {
            return false;
        };
        let Some(b) = to_part.clone().find(|&k| spare[labels[order[k]]] >= 2) else {
            return false;
        };
        order.swap(a, b);
    }
    true
}

pub fn postprocess(
    raw: &RawDataset,
    train_fraction: f64,
    seed: u64,
    stream: &mut RngStream,
    opts: &PostprocessOptions,
) -> Result<PostprocessOutcome> {
    let n = raw.y.len();
    if raw.columns.iter().any(|c| c.len() != n) || raw.columns.len() != raw.kinds.len() {
        return Err(invalid("raw dataset columns disagree in length"));
    }
    let mut order = stream.permutation(n);
    let n_train = ((train_fraction * n as f64).round() as usize).clamp(1, n.saturating_sub(1).max(1));

    let keep: Vec<usize> = (0..raw.columns.len()).filter(|&j| !is_constant(&raw.columns[j])).collect();
    if keep.is_empty() {
        return Ok(PostprocessOutcome::Rejected(RejectReason::NoColumns));
    }

    let (mut y, n_classes) = match raw.task {
        Task::Classification { .. } => {
            let (coded, k) = ordinal_encode(&raw.y);
            if k < 2 {
                return Ok(PostprocessOutcome::Rejected(RejectReason::TooFewClasses));
            }
            let labels: Vec<usize> = coded.iter().map(|&c| c as usize).collect();
            if !fix_split(&labels, k, &mut order, n_train) {
                return Ok(PostprocessOutcome::Rejected(RejectReason::SplitUnfixable));
            }
            (coded, k)
        }
        Task::Regression => {
            if is_constant(&raw.y) {
                return Ok(PostprocessOutcome::Rejected(RejectReason::ConstantTarget));
            }
            let mut y = raw.y.clone();
            clip_and_standardize(&mut y);
            (y, 0)
        }
    };

    let col_perm = stream.permutation(keep.len());
    if n_classes > 0 {
        let perm = match &opts.class_permutation {
            Some(p) => {
                let mut check = p.clone();
                check.sort_unstable();
                if check != (0..n_classes).collect::<Vec<_>>() {
                    return Err(invalid("class permutation does not match the class count"));
                }
                p.clone()
            }
            None => stream.permutation(n_classes),
        };
        y.iter_mut().for_each(|v| *v = perm[*v as usize] as f64);
    }

    let mut x = Matrix::zeros(n, keep.len());
    let mut meta = Vec::with_capacity(keep.len());
    for (out_j, &p) in col_perm.iter().enumerate() {
        let src = keep[p];
        let mut values = raw.columns[src].clone();
        let kind = match raw.kinds[src] {
            ColumnKind::Categorical { .. } => {
                let (coded, k) = ordinal_encode(&values);
                values = coded;
                ColumnKind::Categorical { cardinality: k }
            }
            ColumnKind::Numeric => {
                clip_and_standardize(&mut values);
                ColumnKind::Numeric
            }
        };
        for (i, &r) in order.iter().enumerate() {
            x.set(i, out_j, values[r]);
        }
        meta.push(kind);
    }
    let y_rows = order.iter().map(|&r| y[r]).collect();
    let train_mask = (0..n).map(|i| i < n_train).collect();
    Ok(PostprocessOutcome::Accepted(GeneratedDataset {
        x,
        y: y_rows,
        column_meta: meta,
        task: raw.task.kind(),
        n_classes,
        train_mask,
        seed,
    }))
}

/// Counts of what happened while producing one dataset.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RejectionStats {
    pub attempts: usize,
    pub graph_resamples: usize,
    pub graph_exhausted: usize,
    pub no_columns: usize,
    pub too_few_classes: usize,
    pub split_unfixable: usize,
    pub constant_target: usize,
    pub filter_evaluated: usize,
    pub filter_rejected: usize,
}

impl RejectionStats {
    pub fn record(&mut self, reason: RejectReason) {
        match reason {
            RejectReason::GraphResamples => self.graph_exhausted += 1,
            RejectReason::NoColumns => self.no_columns += 1,
            RejectReason::TooFewClasses => self.too_few_classes += 1,
            RejectReason::SplitUnfixable => self.split_unfixable += 1,
            RejectReason::ConstantTarget => self.constant_target += 1,
            RejectReason::Filter => self.filter_rejected += 1,
        }
    }

    pub fn merge(&mut self, other: &RejectionStats) {
        self.attempts += other.attempts;
        self.graph_resamples += other.graph_resamples;
        self.graph_exhausted += other.graph_exhausted;
        self.no_columns += other.no_columns;
        self.too_few_classes += other.too_few_classes;
        self.split_unfixable += other.split_unfixable;
        self.constant_target += other.constant_target;
        self.filter_evaluated += other.filter_evaluated;
        self.filter_rejected += other.filter_rejected;
    }

    /// Fraction of filter evaluations that rejected the dataset.
    pub fn filter_rejection_rate(&self) -> f64 {
        if self.filter_evaluated == 0 {
            0.0
        } else {
            self.filter_rejected as f64 / self.filter_evaluated as f64
        }
    }
}

impl fmt::Display for RejectionStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "graph exhausted {}, no columns {}, <2 classes {}, unfixable split {}, constant target {}, filtered {}/{}",
            self.graph_exhausted,
            self.no_columns,
            self.too_few_classes,
            self.split_unfixable,
            self.constant_target,
            self.filter_rejected,
            self.filter_evaluated
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerationReport {
    pub dataset: GeneratedDataset,
    pub spec: DatasetSpec,
    pub stats: RejectionStats,
    pub elapsed_ms: f64,
}

/// Everything one attempt produced, for inspection and telemetry.
#[derive(Clone, Debug)]
pub struct Attempt {
    pub spec: DatasetSpec,
    pub characteristics: GlobalCharacteristics,
    pub graph: Option<PriorGraph>,
    pub raw: Option<RawDataset>,
    pub outcome: PostprocessOutcome,
    pub filter: Option<FilterOutcome>,
    pub graph_resamples: usize,
}

pub fn task_for_seed(mix: TaskMix, seed: u64) -> TaskKind {
    match mix {
        TaskMix::Classification => TaskKind::Classification,
        TaskMix::Regression => TaskKind::Regression,
        TaskMix::Mixed => {
            if RngStream::new(seed).split("task").bernoulli(0.5) {
                TaskKind::Classification
            } else {
                TaskKind::Regression
            }
        }
    }
}

/// Evaluates the graph and reads off the raw columns.
pub fn evaluate_graph(
    graph: &PriorGraph,
    spec: &DatasetSpec,
    kinds: &[ColumnKind],
    ctx: &mut CorrelatedSampler,
    stream: &RngStream,
    prune: bool,
    opts: &NodeOptions,
) -> Result<RawDataset> {
    let needed = if prune {
        graph.required_nodes()
    } else {
        vec![true; graph.n_nodes]
    };
    let mut data: Vec<Option<Matrix>> = vec![None; graph.n_nodes];
    let mut columns = vec![Vec::new(); kinds.len()];
    let mut y = Vec::new();
    for node in 0..graph.n_nodes {
        if !needed[node] {
            continue;
        }
        let parents = graph.parents(node);
        let parent_data: Vec<&Matrix> = parents
            .iter()
            .map(|&p| data[p].as_ref().expect("parents precede children"))
            .collect();
        let mut s = stream.split(&format!("node{node}"));
        let out = run_node(node, &parent_data, graph, spec.n_samples, ctx, &mut s, opts)?;
        for (slot, values) in out.columns {
            match slot {
                Slot::Column(j) => columns[j] = values,
                Slot::Target => y = values,
            }
        }
        data[node] = Some(out.data);
    }
    Ok(RawDataset {
        columns,
        kinds: kinds.to_vec(),
        y,
        task: spec.task,
    })
}

/// One generation attempt; `attempt` selects an independent child stream of the seed.
pub fn generate_attempt(config: &GenerationConfig, seed: u64, attempt: usize) -> Result<Attempt> {
    let task = task_for_seed(config.task, seed);
    let stream = RngStream::new(seed).split_index(attempt as u64);
    let mut ctx = CorrelatedSampler::new(&stream);
    let (spec, chars) = sample_spec(config, task, seed, &mut ctx, &mut stream.split("spec"));

    let mut conv_stream = stream.split("converters");
    let mut kinds_with_target = chars.columns.clone();
    kinds_with_target.push(match spec.task {
        Task::Classification { n_classes } => ColumnKind::Categorical { cardinality: n_classes },
        Task::Regression => ColumnKind::Numeric,
    });
    let converters: Vec<Converter> = kinds_with_target
        .iter()
        .map(|&k| Converter::sample(k, &mut ctx, &mut conv_stream))
        .collect();

    let Some((graph, graph_resamples)) =
        sample_prior_graph(&chars, &converters, &mut ctx, &mut stream.split("graph"))
    else {
        return Ok(Attempt {
            spec,
            characteristics: chars,
            graph: None,
            raw: None,
            outcome: PostprocessOutcome::Rejected(RejectReason::GraphResamples),
            filter: None,
            graph_resamples: MAX_GRAPH_RESAMPLES,
        });
    };

    let node_opts = NodeOptions {
        importance: None,
        warp_values: config.warp_values,
    };
    let raw = evaluate_graph(&graph, &spec, &chars.columns, &mut ctx, &stream, config.prune, &node_opts)?;
    let mut outcome = postprocess(
        &raw,
        spec.train_fraction,
        seed,
        &mut stream.split("postprocess"),
        &PostprocessOptions::default(),
    )?;
    let mut filter = None;
    if config.filter {
        if let PostprocessOutcome::Accepted(ds) = &outcome {
            let result = filter_dataset_with(ds, &config.filter_config, &stream.split("filter"))?;
            if !result.accept {
                outcome = PostprocessOutcome::Rejected(RejectReason::Filter);
            }
            filter = Some(result);
        }
    }
    Ok(Attempt {
        spec,
        characteristics: chars,
        graph: Some(graph),
        raw: Some(raw),
        outcome,
        filter,
        graph_resamples,
    })
}

pub fn filter_dataset(ds: &GeneratedDataset, stream: &RngStream) -> Result<bool> {
    Ok(filter_dataset_with(ds, &FilterConfig::default(), stream)?.accept)
}

pub fn filter_dataset_with(ds: &GeneratedDataset, cfg: &FilterConfig, stream: &RngStream) -> Result<FilterOutcome> {
    filter_xy(&ds.x, &ds.filter_targets(), cfg, stream)
}

pub fn generate_with_report(config: &GenerationConfig, seed: u64) -> Result<GenerationReport> {
    config.validate()?;
    let start = Instant::now();
    let mut stats = RejectionStats::default();
    for attempt in 0..config.max_attempts {
        let a = generate_attempt(config, seed, attempt)?;
        stats.attempts += 1;
        stats.graph_resamples += a.graph_resamples;
        if a.filter.is_some() {
            stats.filter_evaluated += 1;
        }
        match a.outcome {
            PostprocessOutcome::Accepted(dataset) => {
                return Ok(GenerationReport {
                    dataset,
                    spec: a.spec,
                    stats,
                    elapsed_ms: start.elapsed().as_secs_f64() * 1e3,
                })
            }
            PostprocessOutcome::Rejected(reason) => {
                log::debug!("seed {seed} attempt {attempt} rejected: {reason:?}");
                stats.record(reason);
            }
        }
    }
    Err(Error::RetriesExhausted {
        attempts: config.max_attempts,
        stats,
    })
}

pub fn generate_dataset(config: &GenerationConfig, seed: u64) -> Result<GeneratedDataset> {
    generate_with_report(config, seed).map(|r| r.dataset)
}

/// Generates one dataset per seed on up to `jobs` threads. Results keep the seed order.
pub fn generate_batch(config: &GenerationConfig, seeds: &[u64], jobs: usize) -> Vec<Result<GenerationReport>> {
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Mutex;

    let jobs = jobs.clamp(1, seeds.len().max(1));
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<GenerationReport>>>> =
        Mutex::new((0..seeds.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..jobs {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= seeds.len() {
                    break;
                }
                let r = generate_with_report(config, seeds[i]);
                results.lock().expect("no panics while holding the lock")[i] = Some(r);
            });
        }
    });
    results
        .into_inner()
        .expect("threads joined")
        .into_iter()
        .map(|r| r.expect("every index visited"))
        .collect()
}
