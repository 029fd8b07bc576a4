use std::io::BufWriter;
use std::path::Path;
use std::time::Instant;

use serde::Serialize;
use tabprior::prior::{ColumnKind, DatasetSpec, GenerationReport, RejectionStats, TaskKind};
use tabprior::{generate_batch, GenerationConfig};

use crate::args::{Format, GenerateArgs};
use crate::{create_dir, io, write_json, CliError, CliResult};

#[derive(Serialize)]
pub struct Metadata<'a> {
    pub seed: u64,
    pub data: String,
    pub format: &'static str,
    pub task: TaskKind,
    pub n_rows: usize,
    pub n_cols: usize,
    pub n_classes: usize,
    pub columns: &'a [ColumnKind],
    pub spec: &'a DatasetSpec,
    pub telemetry: &'a RejectionStats,
}

#[derive(Serialize)]
pub struct ManifestEntry {
    pub index: usize,
    pub seed: u64,
    pub status: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub metadata: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Serialize)]
pub struct Manifest<'a> {
    pub command: &'static str,
    pub base_seed: u64,
    pub count: usize,
    pub format: &'static str,
    pub config: &'a GenerationConfig,
    pub datasets: Vec<ManifestEntry>,
    pub totals: RejectionStats,
}

fn write_dataset(dir: &Path, stem: &str, format: Format, report: &GenerationReport) -> CliResult<(String, String)> {
    let ds = &report.dataset;
    let data_name = format!("{stem}.{}", format.extension());
    let meta_name = format!("{stem}.json");
    let path = dir.join(&data_name);
    let file = std::fs::File::create(&path).map_err(CliError::io(&path))?;
    let mut w = BufWriter::new(file);
    match format {
        Format::Csv => io::write_csv(ds, &mut w),
        Format::Bin => io::write_bin(ds, &mut w),
    }
    .and_then(|_| std::io::Write::flush(&mut w))
    .map_err(CliError::io(&path))?;
    let meta = Metadata {
        seed: ds.seed,
        data: data_name.clone(),
        format: format.extension(),
        task: ds.task,
        n_rows: ds.n_rows(),
        n_cols: ds.n_cols(),
        n_classes: ds.n_classes,
        columns: &ds.column_meta,
        spec: &report.spec,
        telemetry: &report.stats,
    };
    write_json(&dir.join(&meta_name), &meta)?;
    Ok((data_name, meta_name))
}

pub fn run(args: &GenerateArgs) -> CliResult<()> {
    let cfg = args.prior.config()?;
    create_dir(&args.out)?;
    let seeds = args.prior.seeds();
    let start = Instant::now();
    let mut entries = Vec::with_capacity(seeds.len());
    let mut totals = RejectionStats::default();
    let mut exhausted = 0;
    // bounded batches keep memory flat for large counts
    let chunk = 8 * args.prior.jobs;
    for (c, block) in seeds.chunks(chunk).enumerate() {
        for (k, result) in generate_batch(&cfg, block, args.prior.jobs).into_iter().enumerate() {
            let index = c * chunk + k;
            let seed = block[k];
            match result {
                Ok(report) => {
                    totals.merge(&report.stats);
                    let (data, metadata) = write_dataset(&args.out, &format!("dataset_{index:05}"), args.format, &report)?;
                    entries.push(ManifestEntry {
                        index,
                        seed,
                        status: "ok",
                        data: Some(data),
                        metadata: Some(metadata),
                        error: None,
                    });
                }
                Err(tabprior::Error::RetriesExhausted { stats, .. }) => {
                    exhausted += 1;
                    totals.merge(&stats);
                    entries.push(ManifestEntry {
                        index,
                        seed,
                        status: "exhausted",
                        data: None,
                        metadata: None,
                        error: Some(stats.to_string()),
                    });
                }
                Err(e) => return Err(e.into()),
            }
        }
    }
    let manifest = Manifest {
        command: "generate",
        base_seed: args.prior.seed,
        count: seeds.len(),
        format: args.format.extension(),
        config: &cfg,
        datasets: entries,
        totals,
    };
    write_json(&args.out.join("manifest.json"), &manifest)?;
    eprintln!(
        "wrote {} datasets to {} in {:.1}s ({})",
        seeds.len() - exhausted,
        args.out.display(),
        start.elapsed().as_secs_f64(),
        manifest.totals
    );
    if exhausted > 0 {
        return Err(CliError::Exhausted(format!(
            "{exhausted} of {} datasets exhausted {} attempts",
            seeds.len(),
            cfg.max_attempts
        )));
    }
    Ok(())
}
