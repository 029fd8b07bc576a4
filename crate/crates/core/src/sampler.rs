//! Correlated sampling of scalar hyperparameters.
//!
//! Every scalar drawn inside the prior carries a name. All draws that share a
//! name within one dataset come from the same Beta-distributed base variable
//! (numeric kinds) or the same weight vector (categorical kinds), whose
//! parameters are themselves drawn once per name. A sampler therefore lives
//! for exactly one dataset generation.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::rng::RngStream;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScalarKind {
    Num,
    Int,
    LogNum,
    LogInt,
    Categorical,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalarDistSpec {
    pub name: String,
    pub kind: ScalarKind,
    pub low: f64,
    pub high: f64,
    pub n_categories: usize,
}

impl ScalarDistSpec {
    fn bounded(name: &str, kind: ScalarKind, low: f64, high: f64) -> Self {
        Self {
            name: name.to_owned(),
            kind,
            low,
            high,
            n_categories: 0,
        }
    }

    pub fn num(name: &str, low: f64, high: f64) -> Self {
        Self::bounded(name, ScalarKind::Num, low, high)
    }

    pub fn int(name: &str, low: i64, high: i64) -> Self {
        Self::bounded(name, ScalarKind::Int, low as f64, high as f64)
    }

    pub fn log_num(name: &str, low: f64, high: f64) -> Self {
        Self::bounded(name, ScalarKind::LogNum, low, high)
    }

    pub fn log_int(name: &str, low: i64, high: i64) -> Self {
        Self::bounded(name, ScalarKind::LogInt, low as f64, high as f64)
    }

    pub fn categorical(name: &str, n_categories: usize) -> Self {
        Self {
            name: name.to_owned(),
            kind: ScalarKind::Categorical,
            low: 0.0,
            high: 0.0,
            n_categories,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            ScalarKind::Categorical => {
                if self.n_categories == 0 {
                    return Err(invalid(format!("`{}`: zero categories", self.name)));
                }
            }
            kind => {
                if !(self.low.is_finite() && self.high.is_finite()) {
                    return Err(invalid(format!("`{}`: non-finite bounds", self.name)));
                }
                let ordered = match kind {
                    // integer ranges may be a single value
                    ScalarKind::Int | ScalarKind::LogInt => self.low <= self.high,
                    _ => self.low < self.high,
                };
                if !ordered {
                    return Err(invalid(format!(
                        "`{}`: low {} not below high {}",
                        self.name, self.low, self.high
                    )));
                }
                if matches!(kind, ScalarKind::LogNum | ScalarKind::LogInt) && self.low <= 0.0 {
                    return Err(invalid(format!(
                        "`{}`: log-scale bounds need low > 0",
                        self.name
                    )));
                }
            }
        }
        Ok(())
    }

    /// Maps a base variable `u` in `[0, 1]` into the range of this spec.
    pub fn map_base(&self, u: f64) -> f64 {
        let (lo, hi) = (self.low, self.high);
        match self.kind {
            ScalarKind::Num => (lo + u * (hi - lo)).clamp(lo, hi),
            ScalarKind::LogNum => (lo.ln() + u * (hi.ln() - lo.ln())).exp().clamp(lo, hi),
            ScalarKind::Int => (lo + u * (hi - lo + 1.0)).floor().min(hi),
            ScalarKind::LogInt => (lo.ln() + u * ((hi + 1.0).ln() - lo.ln()))
                .exp()
                .floor()
                .clamp(lo, hi),
            ScalarKind::Categorical => {
                ((u * self.n_categories as f64).floor()).min(self.n_categories as f64 - 1.0)
            }
        }
    }
}

/// Parameters of the Beta base distribution attached to one name.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BetaParams {
    pub alpha: f64,
    pub beta: f64,
}

impl BetaParams {
    /// `alpha = s t`, `beta = s (1 - t)`.
    pub fn from_location_scale(t: f64, s: f64) -> Self {
        Self {
            alpha: s * t,
            beta: s * (1.0 - t),
        }
    }

    pub const UNIFORM: BetaParams = BetaParams {
        alpha: 1.0,
        beta: 1.0,
    };
}

/// Positive weights summing to one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightsVector {
    values: Vec<f64>,
}

impl WeightsVector {
    /// Normalizes strictly positive raw weights.
    pub fn from_raw(raw: Vec<f64>) -> Result<Self> {
        if raw.is_empty() || raw.iter().any(|w| !(*w > 0.0 && w.is_finite())) {
            return Err(invalid("weights must be non-empty, finite and positive"));
        }
        let total: f64 = raw.iter().sum();
        Ok(Self {
            values: raw.into_iter().map(|w| w / total).collect(),
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

#[derive(Clone, Debug)]
pub struct CorrelatedSampler {
    root: RngStream,
    numeric: HashMap<String, BetaParams>,
    categorical: HashMap<String, WeightsVector>,
}

/// Starts a fresh correlation context whose per-name parameters are derived from `stream`.
pub fn new_sampler_context(stream: &RngStream) -> CorrelatedSampler {
    CorrelatedSampler::new(stream)
}

impl CorrelatedSampler {
    pub fn new(stream: &RngStream) -> Self {
        Self {
            root: stream.split("correlated-sampler"),
            numeric: HashMap::new(),
            categorical: HashMap::new(),
        }
    }

    /// Beta parameters for `name`, drawn on first use. The draw depends only on
    /// the context seed and the name, not on the order in which names appear.
    pub fn numeric_params(&mut self, name: &str) -> BetaParams {
        if let Some(p) = self.numeric.get(name) {
            return *p;
        }
        let mut r = self.root.split(&format!("num:{name}"));
        let t = r.uniform();
        let s = r.log_uniform(0.1, 10_000.0);
        let params = BetaParams::from_location_scale(t, s);
        self.numeric.insert(name.to_owned(), params);
        params
    }

    /// Overrides the Beta parameters of `name`.
    pub fn pin_numeric(&mut self, name: &str, params: BetaParams) {
        self.numeric.insert(name.to_owned(), params);
    }

    /// Overrides the weight vector of a categorical `name`.
    pub fn pin_categorical(&mut self, name: &str, weights: WeightsVector) {
        self.categorical.insert(name.to_owned(), weights);
    }

    pub fn categorical_weights(&self, name: &str) -> Option<&WeightsVector> {
        self.categorical.get(name)
    }

    /// Base variable `u ~ Beta(alpha, beta)` for `name`.
    pub fn sample_base(&mut self, name: &str, stream: &mut RngStream) -> f64 {
        let p = self.numeric_params(name);
        stream.beta(p.alpha, p.beta)
    }

    pub fn sample_scalar(&mut self, spec: &ScalarDistSpec, stream: &mut RngStream) -> Result<f64> {
        spec.validate()?;
        if spec.kind == ScalarKind::Categorical {
            return self
                .sample_categorical(&spec.name, spec.n_categories, stream)
                .map(|i| i as f64);
        }
        let u = self.sample_base(&spec.name, stream);
        Ok(spec.map_base(u))
    }

    pub fn sample_categorical(
        &mut self,
        name: &str,
        n_categories: usize,
        stream: &mut RngStream,
    ) -> Result<usize> {
        if n_categories == 0 {
            return Err(invalid(format!("`{name}`: zero categories")));
        }
        if let Some(w) = self.categorical.get(name) {
            if w.len() != n_categories {
                return Err(Error::CategoryConflict {
                    name: name.to_owned(),
                    existing: w.len(),
                    requested: n_categories,
                });
            }
        } else {
            let mut r = self.root.split(&format!("cat:{name}"));
            let w = random_weights(n_categories, self, &mut r);
            self.categorical.insert(name.to_owned(), w);
        }
        let w = &self.categorical[name];
        Ok(stream.weighted_index(w.values()))
    }

    // Shorthands used throughout the prior. Bounds are compile-time constants
    // at every call site, so they are only checked in debug builds.

    pub fn num(&mut self, name: &str, low: f64, high: f64, stream: &mut RngStream) -> f64 {
        let spec = ScalarDistSpec::num(name, low, high);
        debug_assert!(spec.validate().is_ok());
        spec.map_base(self.sample_base(name, stream))
    }

    pub fn log_num(&mut self, name: &str, low: f64, high: f64, stream: &mut RngStream) -> f64 {
        let spec = ScalarDistSpec::log_num(name, low, high);
        debug_assert!(spec.validate().is_ok());
        spec.map_base(self.sample_base(name, stream))
    }

    pub fn int(&mut self, name: &str, low: i64, high: i64, stream: &mut RngStream) -> i64 {
        let spec = ScalarDistSpec::int(name, low, high);
        debug_assert!(spec.validate().is_ok());
        spec.map_base(self.sample_base(name, stream)) as i64
    }

    pub fn log_int(&mut self, name: &str, low: i64, high: i64, stream: &mut RngStream) -> i64 {
        let spec = ScalarDistSpec::log_int(name, low, high);
        debug_assert!(spec.validate().is_ok());
        spec.map_base(self.sample_base(name, stream)) as i64
    }

    /// Categorical draw for keys whose cardinality is fixed at the call site.
    pub fn choice(&mut self, name: &str, n_categories: usize, stream: &mut RngStream) -> usize {
        self.sample_categorical(name, n_categories, stream)
            .expect("call sites use a fixed cardinality per key")
    }
}

/// Random positive weights `w_m = m^-q exp(N(0, sigma^2))`, normalized and shuffled.
pub fn random_weights(d: usize, ctx: &mut CorrelatedSampler, stream: &mut RngStream) -> WeightsVector {
    assert!(d >= 1, "random_weights needs d >= 1");
    let q = ctx.log_num("weights_decay", 0.1 / ((d + 1) as f64).ln(), 6.0, stream);
    let sigma = ctx.log_num("weights_noise", 1e-4, 10.0, stream);
    weights_from_params(d, q, sigma, stream)
}

/// The weight construction with fixed decay `q` and log-noise scale `sigma`.
pub fn weights_from_params(d: usize, q: f64, sigma: f64, stream: &mut RngStream) -> WeightsVector {
    let mut log_w: Vec<f64> = (1..=d)
        .map(|m| -q * (m as f64).ln() + sigma * stream.normal())
        .collect();
    let max = log_w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    for lw in &mut log_w {
        *lw = (*lw - max).exp();
    }
    stream.shuffle(&mut log_w);
    // exp of a difference from the max is in (0, 1], so every entry stays positive
    // unless it underflows; floor at the smallest normal to keep the invariant
    for w in &mut log_w {
        *w = w.max(f64::MIN_POSITIVE);
    }
    WeightsVector::from_raw(log_w).expect("positive by construction")
}
