//! Multi-head scaled dot-product attention with length-aware query scaling.
//!
//! Query, key and value tensors of shape `n × H × d_head` are stored as
//! `n × (H·d_head)` matrices: the row-major layout is the same.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg::Matrix;
use crate::rng::RngStream;

pub const MLP_HIDDEN: usize = 64;

pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

/// Two-layer perceptron `W₂ gelu(W₁x + b₁) + b₂`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub w1: Matrix,
    pub b1: Vec<f64>,
    pub w2: Matrix,
    pub b2: Vec<f64>,
}

impl Mlp {
    pub fn new(w1: Matrix, b1: Vec<f64>, w2: Matrix, b2: Vec<f64>) -> Result<Self> {
        if b1.len() != w1.rows() || w2.cols() != w1.rows() || b2.len() != w2.rows() {
            return Err(invalid(format!(
                "inconsistent MLP shapes: w1 {:?}, b1 {}, w2 {:?}, b2 {}",
                w1.shape(),
                b1.len(),
                w2.shape(),
                b2.len()
            )));
        }
        Ok(Self { w1, b1, w2, b2 })
    }

    /// Uniform `±1/√fan_in` initialization.
    pub fn random(d_in: usize, hidden: usize, d_out: usize, stream: &mut RngStream) -> Self {
        let mut layer = |rows: usize, cols: usize| {
            let bound = 1.0 / (cols as f64).sqrt();
            let w = Matrix::from_fn(rows, cols, |_, _| stream.uniform_range(-bound, bound));
            let b = (0..rows).map(|_| stream.uniform_range(-bound, bound)).collect();
            (w, b)
        };
        let (w1, b1) = layer(hidden, d_in);
        let (w2, b2) = layer(d_out, hidden);
        Self { w1, b1, w2, b2 }
    }

    pub fn zero_last_layer(mut self) -> Self {
        self.w2.map_inplace(|_| 0.0);
        self.b2.iter_mut().for_each(|b| *b = 0.0);
        self
    }

    pub fn d_in(&self) -> usize {
        self.w1.cols()
    }

    pub fn d_out(&self) -> usize {
        self.w2.rows()
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let h: Vec<f64> = (0..self.w1.rows())
            .map(|r| gelu(crate::linalg::dot(self.w1.row(r), x) + self.b1[r]))
            .collect();
        (0..self.w2.rows())
            .map(|r| crate::linalg::dot(self.w2.row(r), &h) + self.b2[r])
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum Scaling {
    Standard,
    /// Per-head `s_h`; queries are multiplied by `s_h ln n`.
    SsMax { s: Vec<f64> },
    /// `q ⊙ base(ln n) ⊙ (1 + tanh(gate(q_h)))`.
    QassMax { base: Mlp, gate: Mlp },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Projections {
    pub q: Matrix,
    pub k: Matrix,
    pub v: Matrix,
}

impl Projections {
    pub fn identity(d: usize) -> Self {
        Self {
            q: Matrix::identity(d),
            k: Matrix::identity(d),
            v: Matrix::identity(d),
        }
    }

    pub fn random(d: usize, stream: &mut RngStream) -> Self {
        let bound = 1.0 / (d as f64).sqrt();
        let mut m = || Matrix::from_fn(d, d, |_, _| stream.uniform_range(-bound, bound));
        Self {
            q: m(),
            k: m(),
            v: m(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionParams {
    pub heads: usize,
    pub head_dim: usize,
    pub scaling: Scaling,
    /// Maps applied to model-dimension inputs; identity when absent.
    #[serde(default)]
    pub projections: Option<Projections>,
}

impl AttentionParams {
    pub fn standard(heads: usize, head_dim: usize) -> Self {
        Self {
            heads,
            head_dim,
            scaling: Scaling::Standard,
            projections: None,
        }
    }

    pub fn ssmax(heads: usize, head_dim: usize, s: Vec<f64>) -> Self {
        Self {
            scaling: Scaling::SsMax { s },
            ..Self::standard(heads, head_dim)
        }
    }

    /// Random base network and a gate whose last layer is zero.
    pub fn qassmax_init(heads: usize, head_dim: usize, stream: &mut RngStream) -> Self {
        let base = Mlp::random(1, MLP_HIDDEN, heads * head_dim, stream);
        let gate = Mlp::random(head_dim, MLP_HIDDEN, head_dim, stream).zero_last_layer();
        Self {
            scaling: Scaling::QassMax { base, gate },
            ..Self::standard(heads, head_dim)
        }
    }

    pub fn model_dim(&self) -> usize {
        self.heads * self.head_dim
    }

    pub fn with_scaling(&self, scaling: Scaling) -> Self {
        Self {
            scaling,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 || self.head_dim == 0 {
            return Err(invalid("heads and head_dim must be positive"));
        }
        let d = self.model_dim();
        match &self.scaling {
            Scaling::Standard => {}
            Scaling::SsMax { s } => {
                if s.len() != self.heads {
                    return Err(Error::DimensionMismatch {
                        context: "SSMax scales",
                        expected: self.heads,
                        got: s.len(),
                    });
                }
            }
            Scaling::QassMax { base, gate } => {
                if base.d_in() != 1 || base.d_out() != d {
                    return Err(invalid(format!("base MLP must map 1 -> {d}")));
                }
                if gate.d_in() != self.head_dim || gate.d_out() != self.head_dim {
                    return Err(invalid(format!("gate MLP must map {0} -> {0}", self.head_dim)));
                }
            }
        }
        if let Some(p) = &self.projections {
            for m in [&p.q, &p.k, &p.v] {
                if m.shape() != (d, d) {
                    return Err(invalid(format!("projections must be {d}x{d}")));
                }
            }
        }
        Ok(())
    }

    fn project(&self, x: &Matrix, which: fn(&Projections) -> &Matrix) -> Result<Matrix> {
        match &self.projections {
            Some(p) => x.matmul_t(which(p)),
            None => Ok(x.clone()),
        }
    }
}

fn check_width(m: &Matrix, params: &AttentionParams, context: &'static str) -> Result<()> {
    if m.cols() != params.model_dim() {
        return Err(Error::DimensionMismatch {
            context,
            expected: params.model_dim(),
            got: m.cols(),
        });
    }
    Ok(())
}

/// Per-element factor `1 + tanh(gate(q_h))`, in `(0, 2)`.
pub fn gate_factor(gate: &Mlp, q_head: &[f64]) -> Vec<f64> {
    gate.forward(q_head).into_iter().map(|g| 1.0 + g.tanh()).collect()
}

pub fn rescale_queries(q: &Matrix, n_ctx: usize, params: &AttentionParams) -> Result<Matrix> {
    params.validate()?;
    check_width(q, params, "rescale_queries")?;
    if n_ctx < 2 {
        return Err(invalid(format!("context length must be at least 2, got {n_ctx}")));
    }
    let log_n = (n_ctx as f64).ln();
    let d = params.head_dim;
    let mut out = q.clone();
    match &params.scaling {
        Scaling::Standard => {}
        Scaling::SsMax { s } => {
            for i in 0..out.rows() {
                for (h, chunk) in out.row_mut(i).chunks_mut(d).enumerate() {
                    let f = s[h] * log_n;
                    chunk.iter_mut().for_each(|v| *v *= f);
                }
            }
        }
        Scaling::QassMax { base, gate } => {
            let b = base.forward(&[log_n]);
            for i in 0..out.rows() {
                for (h, chunk) in out.row_mut(i).chunks_mut(d).enumerate() {
                    let g = gate_factor(gate, chunk);
                    for ((v, bj), gj) in chunk.iter_mut().zip(&b[h * d..(h + 1) * d]).zip(g) {
                        *v = *v * bj * gj;
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Attention entropies, indexed `[head * n_queries + query]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionDiagnostics {
    pub heads: usize,
    pub n_queries: usize,
    pub entropy: Vec<f64>,
    /// Entropy divided by the log of the number of visible keys; 0 with a single key.
    pub normalized_entropy: Vec<f64>,
}

impl AttentionDiagnostics {
    pub fn mean_normalized_entropy(&self) -> f64 {
        self.normalized_entropy.iter().sum::<f64>() / self.normalized_entropy.len().max(1) as f64
    }

    pub fn entropy_at(&self, head: usize, query: usize) -> f64 {
        self.entropy[head * self.n_queries + query]
    }
}

/// Additive mask, `n_q × n_k`: 0 where visible, `-∞` where hidden.
pub fn key_mask(n_q: usize, n_k: usize, visible: impl Fn(usize, usize) -> bool) -> Matrix {
    Matrix::from_fn(n_q, n_k, |i, j| if visible(i, j) { 0.0 } else { f64::NEG_INFINITY })
}

/// Softmax in place with max subtraction; returns `(entropy, visible count)`.
fn softmax_with_entropy(logits: &mut [f64]) -> (f64, usize) {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for l in logits.iter_mut() {
        *l -= max;
        sum += l.exp();
    }
    let log_sum = sum.ln();
    let mut entropy = 0.0;
    let mut visible = 0;
    for l in logits.iter_mut() {
        let log_p = *l - log_sum;
        *l = log_p.exp();
        if *l > 0.0 {
            entropy -= *l * log_p;
        }
        if log_p > f64::NEG_INFINITY {
            visible += 1;
        }
    }
    (entropy.max(0.0), visible)
}

/// `softmax(rescale(Q) Kᵀ / √d_head + mask) V` per head, on already projected tensors.
pub fn attention(
    q: &Matrix,
    k: &Matrix,
    v: &Matrix,
    params: &AttentionParams,
    mask: Option<&Matrix>,
    n_ctx: usize,
) -> Result<(Matrix, AttentionDiagnostics)> {
    check_width(q, params, "attention queries")?;
    check_width(k, params, "attention keys")?;
    check_width(v, params, "attention values")?;
    if k.rows() != v.rows() || k.rows() == 0 {
        return Err(Error::DimensionMismatch {
            context: "attention keys/values",
            expected: k.rows(),
            got: v.rows(),
        });
    }
    if let Some(m) = mask {
        if m.shape() != (q.rows(), k.rows()) {
            return Err(Error::DimensionMismatch {
                context: "attention mask",
                expected: q.rows() * k.rows(),
                got: m.rows() * m.cols(),
            });
        }
        if let Some(row) = (0..m.rows()).find(|&i| m.row(i).iter().all(|&x| x == f64::NEG_INFINITY)) {
            return Err(Error::AllMasked { row });
        }
    }
    let q = match params.scaling {
        Scaling::Standard => q.clone(),
        _ => rescale_queries(q, n_ctx, params)?,
    };
    let (n_q, n_k, d, heads) = (q.rows(), k.rows(), params.head_dim, params.heads);
    let inv_sqrt = 1.0 / (d as f64).sqrt();
    let mut out = Matrix::zeros(n_q, params.model_dim());
    let mut entropy = vec![0.0; heads * n_q];
    let mut normalized = vec![0.0; heads * n_q];
    let mut p = vec![0.0; n_k];
    for h in 0..heads {
        let cols = h * d..(h + 1) * d;
        for i in 0..n_q {
            let qi = &q.row(i)[cols.clone()];
            for (j, pj) in p.iter_mut().enumerate() {
                let bias = mask.map_or(0.0, |m| m.get(i, j));
                *pj = crate::linalg::dot(qi, &k.row(j)[cols.clone()]) * inv_sqrt + bias;
            }
            let (e, visible) = softmax_with_entropy(&mut p);
            entropy[h * n_q + i] = e;
            normalized[h * n_q + i] = if visible > 1 {
                (e / (visible as f64).ln()).clamp(0.0, 1.0)
            } else {
                0.0
            };
            let o = &mut out.row_mut(i)[cols.clone()];
            for (j, &pj) in p.iter().enumerate() {
                if pj == 0.0 {
                    continue;
                }
                for (ov, vv) in o.iter_mut().zip(&v.row(j)[cols.clone()]) {
                    *ov += pj * vv;
                }
            }
        }
    }
    Ok((
        out,
        AttentionDiagnostics {
            heads,
            n_queries: n_q,
            entropy,
            normalized_entropy: normalized,
        },
    ))
}

#[derive(Clone, Debug, PartialEq)]
pub struct InducedOutput {
    /// Inducing vectors after aggregating the input, `k × d`.
    pub induced: Matrix,
    pub output: Matrix,
    pub stage1: AttentionDiagnostics,
    pub stage2: AttentionDiagnostics,
}

/// Inducing vectors attend to `x` with the configured scaling (`n_ctx = n`),
/// then `x` attends to the result with standard scaling.
pub fn induced_self_attention(x: &Matrix, inducing: &Matrix, params: &AttentionParams) -> Result<InducedOutput> {
    params.validate()?;
    check_width(x, params, "induced_self_attention input")?;
    check_width(inducing, params, "induced_self_attention inducing")?;
    if inducing.rows() == 0 {
        return Err(invalid("at least one inducing vector is needed"));
    }
    let n = x.rows();
    let q1 = params.project(inducing, |p| &p.q)?;
    let k1 = params.project(x, |p| &p.k)?;
    let v1 = params.project(x, |p| &p.v)?;
    let (induced, stage1) = attention(&q1, &k1, &v1, params, None, n.max(2))?;
    let plain = params.with_scaling(Scaling::Standard);
    let q2 = plain.project(x, |p| &p.q)?;
    let k2 = plain.project(&induced, |p| &p.k)?;
    let v2 = plain.project(&induced, |p| &p.v)?;
    let (output, stage2) = attention(&q2, &k2, &v2, &plain, None, induced.rows().max(2))?;
    Ok(InducedOutput {
        induced,
        output,
        stage1,
        stage2,
    })
}

/// Every row attends to the first `n_train` rows; keys and values are computed for those rows only.
pub fn selective_kv_cross_attention(
    rows: &Matrix,
    n_train: usize,
    params: &AttentionParams,
) -> Result<(Matrix, AttentionDiagnostics)> {
    params.validate()?;
    check_width(rows, params, "selective_kv_cross_attention")?;
    if n_train == 0 || n_train > rows.rows() {
        return Err(invalid(format!("n_train must lie in [1, {}], got {n_train}", rows.rows())));
    }
    let train: Vec<usize> = (0..n_train).collect();
    let context = rows.select_rows(&train);
    let q = params.project(rows, |p| &p.q)?;
    let k = params.project(&context, |p| &p.k)?;
    let v = params.project(&context, |p| &p.v)?;
    attention(&q, &k, &v, params, None, n_train.max(2))
}

/// Reference path: keys and values for all rows, test columns masked out.
pub fn masked_cross_attention(
    rows: &Matrix,
    n_train: usize,
    params: &AttentionParams,
) -> Result<(Matrix, AttentionDiagnostics)> {
    params.validate()?;
    check_width(rows, params, "masked_cross_attention")?;
    if n_train == 0 || n_train > rows.rows() {
        return Err(invalid(format!("n_train must lie in [1, {}], got {n_train}", rows.rows())));
    }
    let q = params.project(rows, |p| &p.q)?;
    let k = params.project(rows, |p| &p.k)?;
    let v = params.project(rows, |p| &p.v)?;
    let mask = key_mask(rows.rows(), rows.rows(), |_, j| j < n_train);
    attention(&q, &k, &v, params, Some(&mask), n_train.max(2))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// Flat list of named row-major tensors.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TensorManifest {
    pub tensors: Vec<NamedTensor>,
}

impl TensorManifest {
    pub fn get(&self, name: &str) -> Result<&NamedTensor> {
        self.tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| Error::MissingTensor(name.to_string()))
    }

    fn push_matrix(&mut self, name: &str, m: &Matrix) {
        self.tensors.push(NamedTensor {
            name: name.to_string(),
            shape: vec![m.rows(), m.cols()],
            data: m.as_slice().to_vec(),
        });
    }

    fn push_vector(&mut self, name: &str, v: &[f64]) {
        self.tensors.push(NamedTensor {
            name: name.to_string(),
            shape: vec![v.len()],
            data: v.to_vec(),
        });
    }

    fn matrix(&self, name: &str) -> Result<Matrix> {
        let t = self.get(name)?;
        match t.shape[..] {
            [r, c] => Matrix::from_vec(r, c, t.data.clone()),
            _ => Err(invalid(format!("tensor {name} must be 2-d"))),
        }
    }

    fn vector(&self, name: &str) -> Result<Vec<f64>> {
        let t = self.get(name)?;
        if t.shape.len() != 1 || t.shape[0] != t.data.len() {
            return Err(invalid(format!("tensor {name} must be 1-d")));
        }
        Ok(t.data.clone())
    }

    fn push_mlp(&mut self, prefix: &str, mlp: &Mlp) {
        self.push_matrix(&format!("{prefix}.fc1.weight"), &mlp.w1);
        self.push_vector(&format!("{prefix}.fc1.bias"), &mlp.b1);
        self.push_matrix(&format!("{prefix}.fc2.weight"), &mlp.w2);
        self.push_vector(&format!("{prefix}.fc2.bias"), &mlp.b2);
    }

    fn mlp(&self, prefix: &str) -> Result<Mlp> {
        Mlp::new(
            self.matrix(&format!("{prefix}.fc1.weight"))?,
            self.vector(&format!("{prefix}.fc1.bias"))?,
            self.matrix(&format!("{prefix}.fc2.weight"))?,
            self.vector(&format!("{prefix}.fc2.bias"))?,
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScalingMode {
    Standard,
    Ssmax,
    Qassmax,
}

impl AttentionParams {
    pub fn to_manifest(&self) -> TensorManifest {
        let mut m = TensorManifest::default();
        match &self.scaling {
            Scaling::Standard => {}
            Scaling::SsMax { s } => m.push_vector("ssmax.s", s),
            Scaling::QassMax { base, gate } => {
                m.push_mlp("qassmax.base", base);
                m.push_mlp("qassmax.gate", gate);
            }
        }
        if let Some(p) = &self.projections {
            m.push_matrix("proj.q.weight", &p.q);
            m.push_matrix("proj.k.weight", &p.k);
            m.push_matrix("proj.v.weight", &p.v);
        }
        m
    }

    /// Loads weights for `mode`; projections are read when `proj.q.weight` is present.
    pub fn from_manifest(heads: usize, head_dim: usize, mode: ScalingMode, manifest: &TensorManifest) -> Result<Self> {
        let scaling = match mode {
            ScalingMode::Standard => Scaling::Standard,
            ScalingMode::Ssmax => Scaling::SsMax {
                s: manifest.vector("ssmax.s")?,
            },
            ScalingMode::Qassmax => Scaling::QassMax {
                base: manifest.mlp("qassmax.base")?,
                gate: manifest.mlp("qassmax.gate")?,
            },
        };
        let projections = if manifest.get("proj.q.weight").is_ok() {
            Some(Projections {
                q: manifest.matrix("proj.q.weight")?,
                k: manifest.matrix("proj.k.weight")?,
                v: manifest.matrix("proj.v.weight")?,
            })
        } else {
            None
        };
        let params = Self {
            heads,
            head_dim,
            scaling,
            projections,
        };
        params.validate()?;
        Ok(params)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random(n: usize, d: usize, s: &mut RngStream) -> Matrix {
        Matrix::from_fn(n, d, |_, _| s.normal())
    }

    #[test]
    fn gelu_values() {
        assert_eq!(gelu(0.0), 0.0);
        let g = gelu(1.0);
        assert!((g - 0.841_344_746_068_542_9).abs() < 1e-12, "{g}");
    }

    #[test]
    fn single_key_returns_value_row() {
        let mut s = RngStream::new(1);
        let p = AttentionParams::qassmax_init(2, 3, &mut s);
        let q = random(4, 6, &mut s);
        let k = random(1, 6, &mut s);
        let v = random(1, 6, &mut s);
        let (out, diag) = attention(&q, &k, &v, &p, None, 2).unwrap();
        for i in 0..4 {
            assert_eq!(out.row(i), v.row(0));
        }
        assert!(diag.entropy.iter().all(|&e| e == 0.0));
    }

    #[test]
    fn uniform_logits_have_unit_normalized_entropy() {
        let p = AttentionParams::standard(1, 4);
        let q = Matrix::zeros(2, 4);
        let mut s = RngStream::new(2);
        let k = random(9, 4, &mut s);
        let (_, diag) = attention(&q, &k, &k, &p, None, 9).unwrap();
        for e in diag.normalized_entropy {
            assert!((e - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn ssmax_identity_when_scale_cancels() {
        let n = 50;
        let p = AttentionParams::ssmax(2, 2, vec![1.0 / (n as f64).ln(); 2]);
        let mut s = RngStream::new(3);
        let q = random(3, 4, &mut s);
        let r = rescale_queries(&q, n, &p).unwrap();
        for (a, b) in q.as_slice().iter().zip(r.as_slice()) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!(rescale_queries(&q, 1, &p).is_err());
    }

    #[test]
    fn all_masked_row_is_an_error() {
        let p = AttentionParams::standard(1, 2);
        let q = Matrix::zeros(2, 2);
        let mask = key_mask(2, 3, |i, _| i == 0);
        assert!(matches!(
            attention(&q, &Matrix::zeros(3, 2), &Matrix::zeros(3, 2), &p, Some(&mask), 3),
            Err(Error::AllMasked { row: 1 })
        ));
    }

    #[test]
    fn manifest_round_trip() {
        let mut s = RngStream::new(4);
        let mut p = AttentionParams::qassmax_init(2, 4, &mut s);
        p.projections = Some(Projections::random(8, &mut s));
        let m = p.to_manifest();
        let json = serde_json::to_string(&m).unwrap();
        let back: TensorManifest = serde_json::from_str(&json).unwrap();
        assert_eq!(AttentionParams::from_manifest(2, 4, ScalingMode::Qassmax, &back).unwrap(), p);
        assert!(matches!(
            AttentionParams::from_manifest(2, 4, ScalingMode::Ssmax, &back),
            Err(Error::MissingTensor(_))
        ));
    }
}
