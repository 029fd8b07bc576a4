//! Full predictive distributions from a grid of predicted quantiles.
//!
//! Between the outermost levels the quantile function is piecewise linear
//! through the knots; beyond them it continues with exponential tails whose
//! scales are fitted by log-space regression on the outermost knots.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::rng::RngStream;

pub const DEFAULT_LEVELS: usize = 999;
pub const DEFAULT_TAIL_KNOTS: usize = 20;
pub const BETA_MIN: f64 = 0.01;
pub const BETA_MAX: f64 = 100.0;
/// `log_pdf` value reported where the density is infinite.
pub const LOG_PDF_CAP: f64 = 1e9;

/// Levels `0.001, 0.002, …, 0.999`.
pub fn default_alphas() -> Vec<f64> {
    (1..=DEFAULT_LEVELS).map(|k| k as f64 / 1000.0).collect()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CrossingPolicy {
    NoCorrection,
    #[default]
    Sort,
    Isotonic,
}

/// Weighted L² projection of `y` onto nondecreasing sequences (pool adjacent violators).
pub fn pava(y: &[f64], weights: Option<&[f64]>) -> Result<Vec<f64>> {
    if let Some(w) = weights {
        if w.len() != y.len() {
            return Err(Error::DimensionMismatch {
                context: "pava weights",
                expected: y.len(),
                got: w.len(),
            });
        }
        if w.iter().any(|&v| !v.is_finite() || v <= 0.0) {
            return Err(invalid("isotonic weights must be positive and finite"));
        }
    }
    // blocks of (weighted mean, total weight, length)
    let mut blocks: Vec<(f64, f64, usize)> = Vec::with_capacity(y.len());
    for (k, &v) in y.iter().enumerate() {
        let w = weights.map_or(1.0, |w| w[k]);
        let mut cur = (v, w, 1);
        while let Some(&(m, bw, len)) = blocks.last() {
            if m <= cur.0 {
                break;
            }
            blocks.pop();
            let total = bw + cur.1;
            cur = ((m * bw + cur.0 * cur.1) / total, total, len + cur.2);
        }
        blocks.push(cur);
    }
    Ok(blocks
        .into_iter()
        .flat_map(|(m, _, len)| std::iter::repeat_n(m, len))
        .collect())
}

pub fn enforce_monotone(raw: &[f64], weights: Option<&[f64]>, policy: CrossingPolicy) -> Result<Vec<f64>> {
    match policy {
        CrossingPolicy::NoCorrection => Ok(raw.to_vec()),
        CrossingPolicy::Sort => {
            let mut q = raw.to_vec();
            q.sort_by(f64::total_cmp);
            Ok(q)
        }
        CrossingPolicy::Isotonic => pava(raw, weights),
    }
}

fn ols_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
    }
    sxy / sxx
}

fn clamp_beta(raw: f64) -> f64 {
    if raw.is_nan() {
        BETA_MIN
    } else {
        raw.clamp(BETA_MIN, BETA_MAX)
    }
}

/// Tail scales `(β_L, β_R)` from the outermost `k_tail` knots on each side.
pub fn fit_tails(q: &[f64], alphas: &[f64], k_tail: usize) -> Result<(f64, f64)> {
    let k = q.len();
    if alphas.len() != k {
        return Err(Error::DimensionMismatch {
            context: "fit_tails",
            expected: k,
            got: alphas.len(),
        });
    }
    if k_tail < 2 || k_tail > k / 2 {
        return Err(invalid(format!("k_tail must lie in [2, {}], got {k_tail}", k / 2)));
    }
    let left_x: Vec<f64> = alphas[..k_tail].iter().map(|a| a.ln()).collect();
    let right_x: Vec<f64> = alphas[k - k_tail..].iter().map(|a| (1.0 - a).ln()).collect();
    let beta_l = ols_slope(&left_x, &q[..k_tail]);
    let beta_r = -ols_slope(&right_x, &q[k - k_tail..]);
    Ok((clamp_beta(beta_l), clamp_beta(beta_r)))
}

#[derive(Clone, Debug, PartialEq)]
pub struct BuildOptions {
    pub policy: CrossingPolicy,
    pub weights: Option<Vec<f64>>,
    pub k_tail: usize,
}

impl Default for BuildOptions {
    fn default() -> Self {
        Self {
            policy: CrossingPolicy::Sort,
            weights: None,
            k_tail: DEFAULT_TAIL_KNOTS,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DistributionJson", into = "DistributionJson")]
pub struct QuantileDistribution {
    alphas: Vec<f64>,
    q: Vec<f64>,
    beta_l: f64,
    beta_r: f64,
    slopes: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct DistributionJson {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    alphas: Option<Vec<f64>>,
    knots: Vec<f64>,
    beta_l: f64,
    beta_r: f64,
}

impl TryFrom<DistributionJson> for QuantileDistribution {
    type Error = Error;

    fn try_from(j: DistributionJson) -> Result<Self> {
        let alphas = j.alphas.unwrap_or_else(default_alphas);
        Self::from_parts(alphas, j.knots, j.beta_l, j.beta_r)
    }
}

impl From<QuantileDistribution> for DistributionJson {
    fn from(d: QuantileDistribution) -> Self {
        let implicit = d.alphas == default_alphas();
        Self {
            alphas: (!implicit).then_some(d.alphas),
            knots: d.q,
            beta_l: d.beta_l,
            beta_r: d.beta_r,
        }
    }
}

fn validate_alphas(alphas: &[f64]) -> Result<()> {
    if alphas.len() < 2 {
        return Err(invalid("at least two quantile levels are needed"));
    }
    if alphas.iter().any(|&a| !(a > 0.0 && a < 1.0)) || alphas.windows(2).any(|w| w[0] >= w[1]) {
        return Err(invalid("quantile levels must be strictly increasing inside (0, 1)"));
    }
    Ok(())
}

impl QuantileDistribution {
    /// Corrects crossings, fits the tails and caches the segment slopes.
    pub fn from_quantiles(raw_q: &[f64], alphas: Option<&[f64]>, opts: &BuildOptions) -> Result<Self> {
        let alphas = alphas.map_or_else(default_alphas, <[f64]>::to_vec);
        if raw_q.len() != alphas.len() {
            return Err(Error::DimensionMismatch {
                context: "QuantileDistribution::from_quantiles",
                expected: alphas.len(),
                got: raw_q.len(),
            });
        }
        if raw_q.iter().any(|v| !v.is_finite()) {
            return Err(invalid("quantile values must be finite"));
        }
        validate_alphas(&alphas)?;
        let q = enforce_monotone(raw_q, opts.weights.as_deref(), opts.policy)?;
        let (beta_l, beta_r) = fit_tails(&q, &alphas, opts.k_tail)?;
        Self::from_parts(alphas, q, beta_l, beta_r)
    }

    /// Builds a distribution from already monotone knots and tail scales.
    pub fn from_parts(alphas: Vec<f64>, q: Vec<f64>, beta_l: f64, beta_r: f64) -> Result<Self> {
        validate_alphas(&alphas)?;
        if q.len() != alphas.len() {
            return Err(Error::DimensionMismatch {
                context: "QuantileDistribution::from_parts",
                expected: alphas.len(),
                got: q.len(),
            });
        }
        if !(beta_l > 0.0 && beta_r > 0.0 && beta_l.is_finite() && beta_r.is_finite()) {
            return Err(invalid("tail scales must be positive and finite"));
        }
        let slopes = alphas
            .windows(2)
            .zip(q.windows(2))
            .map(|(a, v)| (v[1] - v[0]) / (a[1] - a[0]))
            .collect();
        Ok(Self {
            alphas,
            q,
            beta_l,
            beta_r,
            slopes,
        })
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    pub fn knots(&self) -> &[f64] {
        &self.q
    }

    pub fn slopes(&self) -> &[f64] {
        &self.slopes
    }

    pub fn beta_l(&self) -> f64 {
        self.beta_l
    }

    pub fn beta_r(&self) -> f64 {
        self.beta_r
    }

    fn alpha_l(&self) -> f64 {
        self.alphas[0]
    }

    fn alpha_r(&self) -> f64 {
        self.alphas[self.alphas.len() - 1]
    }

    fn q_l(&self) -> f64 {
        self.q[0]
    }

    fn q_r(&self) -> f64 {
        self.q[self.q.len() - 1]
    }

    pub fn quantile(&self, alpha: f64) -> Result<f64> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(invalid(format!("quantile level {alpha} is outside (0, 1)")));
        }
        Ok(self.quantile_inner(alpha))
    }

    fn quantile_inner(&self, alpha: f64) -> f64 {
        let (al, ar) = (self.alpha_l(), self.alpha_r());
        if alpha < al {
            self.q_l() + self.beta_l * (alpha / al).ln()
        } else if alpha > ar {
            self.q_r() - self.beta_r * ((1.0 - alpha) / (1.0 - ar)).ln()
        } else {
            let i = self.alphas.partition_point(|&a| a <= alpha) - 1;
            if i == self.alphas.len() - 1 {
                return self.q_r();
            }
            self.q[i] + self.slopes[i] * (alpha - self.alphas[i])
        }
    }

    pub fn quantiles(&self, alphas: &[f64]) -> Result<Vec<f64>> {
        alphas.iter().map(|&a| self.quantile(a)).collect()
    }

    /// Where `z` falls: below the knots, on a knot, inside a segment, or above the knots.
    fn locate(&self, z: f64) -> Region {
        if z < self.q_l() {
            return Region::Left;
        }
        if z > self.q_r() {
            return Region::Right;
        }
        let first_ge = self.q.partition_point(|&v| v < z);
        if self.q[first_ge] == z {
            Region::Knot(first_ge)
        } else {
            Region::Segment(first_ge - 1)
        }
    }

    pub fn cdf(&self, z: f64) -> f64 {
        match self.locate(z) {
            Region::Left => self.alpha_l() * ((z - self.q_l()) / self.beta_l).exp(),
            Region::Right => 1.0 - (1.0 - self.alpha_r()) * (-(z - self.q_r()) / self.beta_r).exp(),
            // first level of a run of equal knots
            Region::Knot(k) => self.alphas[k],
            Region::Segment(i) => {
                let da = self.alphas[i + 1] - self.alphas[i];
                self.alphas[i] + (z - self.q[i]) / (self.q[i + 1] - self.q[i]) * da
            }
        }
    }

    /// `dQ/dα` at `F(z)`, zero on pooled knots.
    fn quantile_derivative(&self, z: f64) -> f64 {
        match self.locate(z) {
            Region::Left => self.beta_l / self.cdf(z),
            Region::Right => self.beta_r / (1.0 - self.cdf(z)),
            Region::Knot(k) if k == self.q.len() - 1 => self.beta_r / (1.0 - self.alpha_r()),
            Region::Knot(k) => self.slopes[k],
            Region::Segment(i) => self.slopes[i],
        }
    }

    /// Density; `+∞` on runs of equal knots.
    pub fn pdf(&self, z: f64) -> f64 {
        match self.locate(z) {
            Region::Left => self.alpha_l() / self.beta_l * ((z - self.q_l()) / self.beta_l).exp(),
            Region::Right => (1.0 - self.alpha_r()) / self.beta_r * (-(z - self.q_r()) / self.beta_r).exp(),
            _ => {
                let d = self.quantile_derivative(z);
                if d > 0.0 {
                    1.0 / d
                } else {
                    f64::INFINITY
                }
            }
        }
    }

    pub fn log_pdf(&self, z: f64) -> f64 {
        match self.locate(z) {
            Region::Left => self.alpha_l().ln() + (z - self.q_l()) / self.beta_l - self.beta_l.ln(),
            Region::Right => (1.0 - self.alpha_r()).ln() - (z - self.q_r()) / self.beta_r - self.beta_r.ln(),
            _ => {
                let d = self.quantile_derivative(z);
                if d > 0.0 {
                    -d.ln()
                } else {
                    LOG_PDF_CAP
                }
            }
        }
    }

    pub fn crps(&self, z: f64) -> f64 {
        let f = self.cdf(z);
        self.crps_left(z, f) + self.crps_spline(z, f) + self.crps_right(z, f)
    }

    fn crps_spline(&self, z: f64, f: f64) -> f64 {
        let mut total = 0.0;
        for i in 0..self.slopes.len() {
            let (a, b) = (self.alphas[i], self.alphas[i + 1]);
            let m = self.slopes[i];
            let width = b - a;
            // local coordinate u = α − α_i
            let s = f.clamp(a, b) - a;
            let i1 = 2.0 * (z - self.q[i]) * (a * s + 0.5 * s * s) - 2.0 * m * (0.5 * a * s * s + s * s * s / 3.0);
            let c = 1.0 - a;
            let e = self.q[i] - z;
            let antider = |u: f64| c * e * u + 0.5 * (c * m - e) * u * u - m * u * u * u / 3.0;
            let i2 = 2.0 * (antider(width) - antider(s));
            total += i1 + i2;
        }
        total
    }

    fn crps_left(&self, z: f64, f: f64) -> f64 {
        let (al, beta, ql) = (self.alpha_l(), self.beta_l, self.q_l());
        let at = f.min(al);
        let b = ql - beta * al.ln();
        let t = if z < ql {
            2.0 * al * beta * (al.ln() - 1.0) + 2.0 * at * (-z + b + beta)
        } else {
            0.0
        };
        (z - b) * (al * al - 2.0 * al + 2.0 * at) + al * al * beta * (-al.ln() + 0.5) + t
    }

    fn crps_right(&self, z: f64, f: f64) -> f64 {
        let (ar, beta, qr) = (self.alpha_r(), self.beta_r, self.q_r());
        let at = f.max(ar);
        let a = -beta;
        let b = qr + beta * (1.0 - ar).ln();
        let t = if z > qr {
            2.0 * (1.0 - at) * (z - b)
        } else {
            2.0 * a * (1.0 - ar) * (1.0 - ar).ln()
        };
        (z - b) * (-1.0 - ar * ar + 2.0 * at)
            + a * (-(1.0 + ar) * (1.0 + ar) / 2.0 + (ar * ar - 1.0) * (1.0 - ar).ln() + 2.0 * at)
            + t
    }

    pub fn mean(&self) -> f64 {
        let (al, ar) = (self.alpha_l(), self.alpha_r());
        let spline: f64 = (0..self.slopes.len())
            .map(|i| 0.5 * (self.q[i] + self.q[i + 1]) * (self.alphas[i + 1] - self.alphas[i]))
            .sum();
        al * (self.q_l() - self.beta_l) + spline + (1.0 - ar) * (self.q_r() + self.beta_r)
    }

    pub fn second_moment(&self) -> f64 {
        let (al, ar) = (self.alpha_l(), self.alpha_r());
        let (ql, qr, bl, br) = (self.q_l(), self.q_r(), self.beta_l, self.beta_r);
        let spline: f64 = (0..self.slopes.len())
            .map(|i| {
                let (u, v) = (self.q[i], self.q[i + 1]);
                (self.alphas[i + 1] - self.alphas[i]) * (u * u + u * v + v * v) / 3.0
            })
            .sum();
        al * (ql * ql - 2.0 * bl * ql + 2.0 * bl * bl) + spline + (1.0 - ar) * (qr * qr + 2.0 * br * qr + 2.0 * br * br)
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        (self.second_moment() - m * m).max(0.0)
    }

    /// Inverse-transform samples.
    pub fn sample(&self, stream: &mut RngStream, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.quantile_inner(stream.open_uniform())).collect()
    }

    pub fn cdf_many(&self, z: &[f64]) -> Vec<f64> {
        z.iter().map(|&v| self.cdf(v)).collect()
    }

    pub fn pdf_many(&self, z: &[f64]) -> Vec<f64> {
        z.iter().map(|&v| self.pdf(v)).collect()
    }

    pub fn log_pdf_many(&self, z: &[f64]) -> Vec<f64> {
        z.iter().map(|&v| self.log_pdf(v)).collect()
    }

    pub fn crps_many(&self, z: &[f64]) -> Vec<f64> {
        z.iter().map(|&v| self.crps(v)).collect()
    }
}

#[derive(Clone, Copy, Debug)]
enum Region {
    Left,
    Right,
    Knot(usize),
    Segment(usize),
}

/// Synthetic regression tasks with known conditional distributions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValidationTask {
    /// `y = 0.15x² − 0.5 + ε`, `σ = 0.25`.
    Quadratic,
    /// `y = sin 2x + 0.2x + ε`, `σ(x) = 0.12 + 0.1|x|`.
    Sinusoidal,
    /// `y = ±1 + ε` by the sign of `x`, `σ = 0.3`.
    Step,
    /// `y = 0.3x + ε` with ε a 0.9/0.1 mixture of `N(0, 0.2²)` and `N(0, 0.8²)`.
    HeavyTail,
}

pub const HEAVY_TAIL_WEIGHT: f64 = 0.1;
pub const HEAVY_TAIL_SIGMAS: (f64, f64) = (0.2, 0.8);
pub const VALIDATION_X_RANGE: (f64, f64) = (-3.0, 3.0);

pub fn make_validation_suite() -> [ValidationTask; 4] {
    [
        ValidationTask::Quadratic,
        ValidationTask::Sinusoidal,
        ValidationTask::Step,
        ValidationTask::HeavyTail,
    ]
}

fn std_normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

fn std_normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

pub fn std_normal_quantile(alpha: f64) -> f64 {
    -std::f64::consts::SQRT_2 * statrs::function::erf::erfc_inv(2.0 * alpha)
}

impl ValidationTask {
    pub fn name(self) -> &'static str {
        match self {
            ValidationTask::Quadratic => "quadratic",
            ValidationTask::Sinusoidal => "sinusoidal",
            ValidationTask::Step => "step",
            ValidationTask::HeavyTail => "heavy_tail",
        }
    }

    pub fn mean(self, x: f64) -> f64 {
        match self {
            ValidationTask::Quadratic => 0.15 * x * x - 0.5,
            ValidationTask::Sinusoidal => (2.0 * x).sin() + 0.2 * x,
            ValidationTask::Step => {
                if x < 0.0 {
                    -1.0
                } else {
                    1.0
                }
            }
            ValidationTask::HeavyTail => 0.3 * x,
        }
    }

    /// Noise standard deviation (the Gaussian one, or the mixture's overall one).
    pub fn noise_std(self, x: f64) -> f64 {
        match self {
            ValidationTask::Quadratic => 0.25,
            ValidationTask::Sinusoidal => 0.12 + 0.1 * x.abs(),
            ValidationTask::Step => 0.3,
            ValidationTask::HeavyTail => {
                let (s1, s2) = HEAVY_TAIL_SIGMAS;
                ((1.0 - HEAVY_TAIL_WEIGHT) * s1 * s1 + HEAVY_TAIL_WEIGHT * s2 * s2).sqrt()
            }
        }
    }

    pub fn cdf(self, x: f64, y: f64) -> f64 {
        let r = y - self.mean(x);
        match self {
            ValidationTask::HeavyTail => {
                let (s1, s2) = HEAVY_TAIL_SIGMAS;
                (1.0 - HEAVY_TAIL_WEIGHT) * std_normal_cdf(r / s1) + HEAVY_TAIL_WEIGHT * std_normal_cdf(r / s2)
            }
            _ => std_normal_cdf(r / self.noise_std(x)),
        }
    }

    pub fn pdf(self, x: f64, y: f64) -> f64 {
        let r = y - self.mean(x);
        match self {
            ValidationTask::HeavyTail => {
                let (s1, s2) = HEAVY_TAIL_SIGMAS;
                (1.0 - HEAVY_TAIL_WEIGHT) * std_normal_pdf(r / s1) / s1
                    + HEAVY_TAIL_WEIGHT * std_normal_pdf(r / s2) / s2
            }
            _ => {
                let s = self.noise_std(x);
                std_normal_pdf(r / s) / s
            }
        }
    }

    pub fn quantile(self, x: f64, alpha: f64) -> f64 {
        match self {
            ValidationTask::HeavyTail => {
                // bisection on the mixture CDF
                let (mut lo, mut hi) = (self.mean(x) - 10.0, self.mean(x) + 10.0);
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    if self.cdf(x, mid) < alpha {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                0.5 * (lo + hi)
            }
            _ => self.mean(x) + self.noise_std(x) * std_normal_quantile(alpha),
        }
    }

    /// `n` pairs with `x ~ U(-3, 3)`.
    pub fn sample(self, n: usize, stream: &mut RngStream) -> (Vec<f64>, Vec<f64>) {
        let (lo, hi) = VALIDATION_X_RANGE;
        let mut xs = Vec::with_capacity(n);
        let mut ys = Vec::with_capacity(n);
        for _ in 0..n {
            let x = stream.uniform_range(lo, hi);
            let noise = match self {
                ValidationTask::HeavyTail => {
                    let (s1, s2) = HEAVY_TAIL_SIGMAS;
                    let s = if stream.bernoulli(HEAVY_TAIL_WEIGHT) { s2 } else { s1 };
                    s * stream.normal()
                }
                _ => self.noise_std(x) * stream.normal(),
            };
            xs.push(x);
            ys.push(self.mean(x) + noise);
        }
        (xs, ys)
    }

    /// Distribution built from the exact conditional quantiles at `x`.
    pub fn oracle_distribution(self, x: f64) -> Result<QuantileDistribution> {
        let alphas = default_alphas();
        let q: Vec<f64> = alphas.iter().map(|&a| self.quantile(x, a)).collect();
        QuantileDistribution::from_quantiles(&q, None, &BuildOptions::default())
    }
}

/// Largest `|F(z) − F_true(z)|` over a grid spanning the knot range.
pub fn sup_cdf_distance(d: &QuantileDistribution, truth: impl Fn(f64) -> f64, grid: usize) -> f64 {
    let (lo, hi) = (d.knots()[0], d.knots()[d.knots().len() - 1]);
    (0..=grid)
        .map(|k| {
            let z = lo + (hi - lo) * k as f64 / grid as f64;
            (d.cdf(z) - truth(z)).abs()
        })
        .fold(0.0, f64::max)
}
