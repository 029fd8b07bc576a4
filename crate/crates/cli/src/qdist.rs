use std::path::Path;

use serde::{Deserialize, Serialize};
use tabprior::qdist::{
    default_alphas, make_validation_suite, std_normal_quantile, sup_cdf_distance, BuildOptions, CrossingPolicy,
    QuantileDistribution, ValidationTask,
};
use tabprior::RngStream;

use crate::args::{PolicyArg, QdistArgs};
use crate::{write_json, CliError, CliResult};

#[derive(Deserialize)]
#[serde(untagged)]
enum QuantileInput {
    Levels(Vec<f64>),
    Explicit { alphas: Vec<f64>, quantiles: Vec<f64> },
}

#[derive(Debug, Serialize)]
pub struct PointReport {
    pub z: f64,
    pub cdf: f64,
    pub pdf: f64,
    pub crps: f64,
}

#[derive(Debug, Serialize)]
pub struct DistributionReport {
    pub source: String,
    pub n_levels: usize,
    pub mean: f64,
    pub variance: f64,
    pub beta_l: f64,
    pub beta_r: f64,
    pub points: Vec<PointReport>,
}

#[derive(Debug, Serialize)]
pub struct SuiteReport {
    pub task: ValidationTask,
    pub n_x: usize,
    /// Worst sup-distance between the constructed and true CDF over the x grid.
    pub max_sup_cdf: f64,
    /// Mean L¹ distance between the constructed and true density.
    pub mean_pdf_l1: f64,
    /// Mean CRPS of the constructed distributions on fresh samples.
    pub mean_crps: f64,
}

#[derive(Debug, Serialize)]
pub struct QdistReport {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub distribution: Option<DistributionReport>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub suite: Vec<SuiteReport>,
}

fn policy(p: PolicyArg) -> CrossingPolicy {
    match p {
        PolicyArg::None => CrossingPolicy::NoCorrection,
        PolicyArg::Sort => CrossingPolicy::Sort,
        PolicyArg::Isotonic => CrossingPolicy::Isotonic,
    }
}

pub fn load_quantiles(path: &Path) -> CliResult<(Vec<f64>, Vec<f64>)> {
    let text = std::fs::read_to_string(path).map_err(CliError::io(path))?;
    let input: QuantileInput = serde_json::from_str(&text)
        .map_err(|e| CliError::Config(format!("{}: expected a quantile array or object: {e}", path.display())))?;
    Ok(match input {
        QuantileInput::Levels(q) => (default_alphas(), q),
        QuantileInput::Explicit { alphas, quantiles } => (alphas, quantiles),
    })
}

pub fn describe(d: &QuantileDistribution, source: String, at: &[f64]) -> DistributionReport {
    DistributionReport {
        source,
        n_levels: d.knots().len(),
        mean: d.mean(),
        variance: d.variance(),
        beta_l: d.beta_l(),
        beta_r: d.beta_r(),
        points: at
            .iter()
            .map(|&z| PointReport {
                z,
                cdf: d.cdf(z),
                pdf: d.pdf(z),
                crps: d.crps(z),
            })
            .collect(),
    }
}

fn pdf_l1(d: &QuantileDistribution, truth: impl Fn(f64) -> f64) -> f64 {
    let q = d.knots();
    let (lo, hi) = (q[0], q[q.len() - 1]);
    let n = 4_000;
    let h = (hi - lo) / n as f64;
    // midpoint rule keeps clear of the knots
    (0..n).map(|k| {
        let z = lo + (k as f64 + 0.5) * h;
        (d.pdf(z) - truth(z)).abs() * h
    })
    .sum()
}

pub fn run_suite(seed: u64) -> CliResult<Vec<SuiteReport>> {
    let mut stream = RngStream::new(seed).split("qdist-suite");
    let mut out = Vec::new();
    for task in make_validation_suite() {
        let xs: Vec<f64> = (0..=24).map(|i| -3.0 + 0.25 * i as f64).collect();
        let (mut sup, mut l1) = (0.0f64, 0.0);
        for &x in &xs {
            let d = task.oracle_distribution(x)?;
            sup = sup.max(sup_cdf_distance(&d, |y| task.cdf(x, y), 2_000));
            l1 += pdf_l1(&d, |y| task.pdf(x, y));
        }
        let (sx, sy) = task.sample(200, &mut stream);
        let mut crps = 0.0;
        for (&x, &y) in sx.iter().zip(&sy) {
            crps += task.oracle_distribution(x)?.crps(y);
        }
        out.push(SuiteReport {
            task,
            n_x: xs.len(),
            max_sup_cdf: sup,
            mean_pdf_l1: l1 / xs.len() as f64,
            mean_crps: crps / sx.len() as f64,
        });
    }
    Ok(out)
}

pub fn report(args: &QdistArgs) -> CliResult<QdistReport> {
    let opts = BuildOptions {
        policy: policy(args.policy),
        ..BuildOptions::default()
    };
    let distribution = match &args.quantiles {
        Some(path) => {
            let (alphas, q) = load_quantiles(path)?;
            let d = QuantileDistribution::from_quantiles(&q, Some(&alphas), &opts)?;
            Some(describe(&d, path.display().to_string(), &args.at))
        }
        None if !args.suite || !args.at.is_empty() => {
            let q: Vec<f64> = default_alphas().iter().map(|&a| std_normal_quantile(a)).collect();
            let d = QuantileDistribution::from_quantiles(&q, None, &opts)?;
            Some(describe(&d, "standard normal knots".into(), &args.at))
        }
        None => None,
    };
    let suite = if args.suite { run_suite(args.seed)? } else { Vec::new() };
    Ok(QdistReport { distribution, suite })
}

pub fn run(args: &QdistArgs) -> CliResult<()> {
    let r = report(args)?;
    match &args.out {
        Some(path) => write_json(path, &r),
        None => {
            println!("{}", serde_json::to_string_pretty(&r).expect("report serializes"));
            Ok(())
        }
    }
}
