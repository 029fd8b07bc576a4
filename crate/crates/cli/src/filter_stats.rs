use rayon::prelude::*;
use serde::Serialize;
use tabprior::prior::{generate_attempt, PostprocessOutcome, RejectionStats, TaskKind};
use tabprior::GenerationConfig;

use crate::args::FilterStatsArgs;
use crate::{write_json, CliError, CliResult};

#[derive(Debug, Default, Serialize)]
pub struct TaskRates {
    pub task: Option<TaskKind>,
    pub draws: usize,
    /// First attempts that survived postprocessing and reached the filter.
    pub evaluated: usize,
    pub rejected: usize,
    pub rejection_rate: f64,
    pub kept_fraction: f64,
    /// Everything else that happened on the first attempts.
    pub stats: RejectionStats,
}

#[derive(Debug, Serialize)]
pub struct FilterReport {
    pub base_seed: u64,
    pub count: usize,
    pub config: GenerationConfig,
    pub tasks: Vec<TaskRates>,
}

/// First-attempt filter outcomes for every seed, split by task.
pub fn measure(cfg: &GenerationConfig, seeds: &[u64], jobs: usize) -> CliResult<Vec<TaskRates>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| CliError::Config(e.to_string()))?;
    let attempts: Vec<_> = pool.install(|| {
        seeds
            .par_iter()
            .map(|&seed| generate_attempt(cfg, seed, 0))
            .collect::<Result<Vec<_>, _>>()
    })?;
    let mut by_task = [TaskKind::Classification, TaskKind::Regression].map(|t| TaskRates {
        task: Some(t),
        ..TaskRates::default()
    });
    for a in &attempts {
        let r = &mut by_task[usize::from(a.spec.task.kind() == TaskKind::Regression)];
        r.draws += 1;
        r.stats.attempts += 1;
        r.stats.graph_resamples += a.graph_resamples;
        if let Some(f) = &a.filter {
            r.evaluated += 1;
            r.rejected += usize::from(!f.accept);
            r.stats.filter_evaluated += 1;
        }
        if let PostprocessOutcome::Rejected(reason) = a.outcome {
            r.stats.record(reason);
        }
    }
    let mut out: Vec<TaskRates> = by_task.into_iter().filter(|r| r.draws > 0).collect();
    for r in &mut out {
        if r.evaluated > 0 {
            r.rejection_rate = r.rejected as f64 / r.evaluated as f64;
            r.kept_fraction = 1.0 - r.rejection_rate;
        }
    }
    Ok(out)
}

pub fn run(args: &FilterStatsArgs) -> CliResult<()> {
    let mut cfg = args.prior.config()?;
    cfg.filter = true;
    let tasks = measure(&cfg, &args.prior.seeds(), args.prior.jobs)?;
    println!("{:<15} {:>7} {:>10} {:>9} {:>9} {:>7}", "task", "draws", "evaluated", "rejected", "rate", "kept");
    for r in &tasks {
        let name = match r.task {
            Some(TaskKind::Classification) => "classification",
            _ => "regression",
        };
        println!(
            "{name:<15} {:>7} {:>10} {:>9} {:>8.1}% {:>6.1}%",
            r.draws,
            r.evaluated,
            r.rejected,
            100.0 * r.rejection_rate,
            100.0 * r.kept_fraction
        );
    }
    if let Some(path) = &args.out {
        let report = FilterReport {
            base_seed: args.prior.seed,
            count: args.prior.count,
            config: cfg,
            tasks,
        };
        write_json(path, &report)?;
    }
    Ok(())
}
