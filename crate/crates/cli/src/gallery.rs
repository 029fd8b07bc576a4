use std::collections::HashSet;
use std::io::BufWriter;
use std::path::Path;

use image::{Rgb, RgbImage};
use serde::Serialize;
use tabprior::function::{sample_function, FunctionKind};
use tabprior::prior::TaskMix;
use tabprior::{generate_batch, CorrelatedSampler, GeneratedDataset, GenerationConfig, Matrix, RngStream};

use crate::args::GalleryArgs;
use crate::{create_dir, io, write_json, CliError, CliResult};

pub const MIN_UNIQUE: usize = 10;
pub const FIELD_GRID: usize = 64;
pub const FIELD_SAMPLES: usize = 4;
pub const FIELD_RANGE: f64 = 3.0;
const TILE: u32 = 128;

const PALETTE: [[u8; 3]; 10] = [
    [31, 119, 180],
    [255, 127, 14],
    [44, 160, 44],
    [214, 39, 40],
    [148, 103, 189],
    [140, 86, 75],
    [227, 119, 194],
    [127, 127, 127],
    [188, 189, 34],
    [23, 190, 207],
];

#[derive(Debug, Serialize)]
pub struct GalleryEntry {
    pub index: usize,
    pub seed: u64,
    pub file: String,
    pub n_classes: usize,
    pub unique_x: usize,
    pub unique_y: usize,
}

#[derive(Debug, Serialize)]
pub struct FunctionField {
    pub family: &'static str,
    pub sample: usize,
    pub grid: usize,
    pub range: [f64; 2],
    /// Row-major, row `i` at `x₂ = -3 + 6i/(grid-1)`.
    pub values: Vec<f64>,
}

#[derive(Debug, Serialize)]
pub struct GalleryManifest {
    pub base_seed: u64,
    pub seeds_tried: usize,
    pub datasets: Vec<GalleryEntry>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub functions: Option<String>,
}

pub fn unique_count(values: &[f64]) -> usize {
    values.iter().map(|v| v.to_bits()).collect::<HashSet<_>>().len()
}

/// Datasets with two columns and at least `MIN_UNIQUE` distinct values in each.
pub fn collect_datasets(args: &GalleryArgs) -> CliResult<(Vec<GeneratedDataset>, usize)> {
    let cfg = GenerationConfig {
        rows: (args.rows, args.rows),
        cols: (2, 2),
        task: TaskMix::Classification,
        ..GenerationConfig::default()
    };
    cfg.validate().map_err(|e| CliError::Config(e.to_string()))?;
    let limit = 50 * args.count.max(1);
    let mut kept = Vec::with_capacity(args.count);
    let mut tried = 0;
    let chunk = 8 * args.jobs.max(1);
    while kept.len() < args.count {
        if tried >= limit {
            return Err(CliError::Exhausted(format!(
                "only {} of {} displayable datasets after {tried} seeds",
                kept.len(),
                args.count
            )));
        }
        let seeds: Vec<u64> = (tried..tried + chunk).map(|i| args.seed.wrapping_add(i as u64)).collect();
        tried += chunk;
        for r in generate_batch(&cfg, &seeds, args.jobs.max(1)) {
            let Ok(report) = r else { continue };
            let ds = report.dataset;
            if ds.n_cols() == 2
                && unique_count(&ds.x.column(0)) >= MIN_UNIQUE
                && unique_count(&ds.x.column(1)) >= MIN_UNIQUE
                && kept.len() < args.count
            {
                kept.push(ds);
            }
        }
    }
    Ok((kept, tried))
}

fn put_dot(img: &mut RgbImage, x: i64, y: i64, color: Rgb<u8>) {
    for dx in 0..2 {
        for dy in 0..2 {
            let (px, py) = (x + dx, y + dy);
            if px >= 0 && py >= 0 && (px as u32) < img.width() && (py as u32) < img.height() {
                img.put_pixel(px as u32, py as u32, color);
            }
        }
    }
}

pub fn render_scatter_grid(datasets: &[GeneratedDataset]) -> RgbImage {
    let cols = (datasets.len() as f64).sqrt().ceil().max(1.0) as u32;
    let rows = (datasets.len() as u32).div_ceil(cols).max(1);
    let mut img = RgbImage::from_pixel(cols * TILE, rows * TILE, Rgb([255, 255, 255]));
    for (k, ds) in datasets.iter().enumerate() {
        let (ox, oy) = ((k as u32 % cols) * TILE, (k as u32 / cols) * TILE);
        let range = |v: &[f64]| {
            let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            (lo, (hi - lo).max(1e-12))
        };
        let (c0, c1) = (ds.x.column(0), ds.x.column(1));
        let ((lx, wx), (ly, wy)) = (range(&c0), range(&c1));
        let inner = (TILE - 8) as f64;
        for i in 0..ds.n_rows() {
            let px = ox as i64 + 4 + ((c0[i] - lx) / wx * inner) as i64;
            let py = oy as i64 + 4 + ((1.0 - (c1[i] - ly) / wy) * inner) as i64;
            put_dot(&mut img, px, py, Rgb(PALETTE[ds.y[i] as usize % PALETTE.len()]));
        }
        for t in 0..TILE {
            img.put_pixel(ox + t, oy, Rgb([200, 200, 200]));
            img.put_pixel(ox, oy + t, Rgb([200, 200, 200]));
        }
    }
    img
}

pub fn function_fields(seed: u64) -> CliResult<Vec<FunctionField>> {
    let root = RngStream::new(seed).split("functions");
    let g = FIELD_GRID;
    let coord = |i: usize| -FIELD_RANGE + 2.0 * FIELD_RANGE * i as f64 / (g - 1) as f64;
    let grid = Matrix::from_fn(g * g, 2, |r, c| if c == 0 { coord(r % g) } else { coord(r / g) });
    let mut out = Vec::new();
    for kind in FunctionKind::ALL {
        for sample in 0..FIELD_SAMPLES {
            let base = root.split(kind.name()).split_index(sample as u64);
            let mut ctx = CorrelatedSampler::new(&base);
            let mut s = base.split("draws");
            let hint = Matrix::from_fn(256, 2, |_, _| s.uniform_range(-FIELD_RANGE, FIELD_RANGE));
            let f = sample_function(Some(kind), 2, 1, Some(&hint), &mut ctx, &mut s)?;
            out.push(FunctionField {
                family: kind.name(),
                sample,
                grid: g,
                range: [-FIELD_RANGE, FIELD_RANGE],
                values: f.eval(&grid)?.column(0),
            });
        }
    }
    Ok(out)
}

fn diverging(t: f64) -> Rgb<u8> {
    // blue → white → red
    let t = t.clamp(0.0, 1.0);
    let (r, g, b) = if t < 0.5 {
        let u = t / 0.5;
        (59.0 + u * 196.0, 76.0 + u * 179.0, 192.0 + u * 63.0)
    } else {
        let u = (t - 0.5) / 0.5;
        (255.0 - u * 75.0, 255.0 - u * 251.0, 255.0 - u * 217.0)
    };
    Rgb([r as u8, g as u8, b as u8])
}

pub fn render_fields(fields: &[FunctionField]) -> RgbImage {
    let scale = TILE / FIELD_GRID as u32;
    let mut img = RgbImage::from_pixel(FIELD_SAMPLES as u32 * TILE, FunctionKind::ALL.len() as u32 * TILE, Rgb([255, 255, 255]));
    for (k, f) in fields.iter().enumerate() {
        let (ox, oy) = ((k % FIELD_SAMPLES) as u32 * TILE, (k / FIELD_SAMPLES) as u32 * TILE);
        let lo = f.values.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = f.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let w = (hi - lo).max(1e-12);
        for (idx, &v) in f.values.iter().enumerate() {
            let (i, j) = ((idx % f.grid) as u32, (idx / f.grid) as u32);
            let c = diverging((v - lo) / w);
            for dx in 0..scale {
                for dy in 0..scale {
                    img.put_pixel(ox + i * scale + dx, oy + (f.grid as u32 - 1 - j) * scale + dy, c);
                }
            }
        }
    }
    img
}

fn save_png(img: &RgbImage, path: &Path) -> CliResult<()> {
    img.save(path).map_err(|e| CliError::Io {
        path: path.to_path_buf(),
        source: std::io::Error::other(e),
    })
}

pub fn run(args: &GalleryArgs) -> CliResult<()> {
    if args.count == 0 {
        return Err(CliError::Config("--count must be at least 1".into()));
    }
    let data_dir = args.out.join("data");
    create_dir(&data_dir)?;
    let (datasets, tried) = collect_datasets(args)?;
    let mut entries = Vec::with_capacity(datasets.len());
    for (index, ds) in datasets.iter().enumerate() {
        let file = format!("data/dataset_{index:02}.csv");
        let path = args.out.join(&file);
        let fh = std::fs::File::create(&path).map_err(CliError::io(&path))?;
        let mut w = BufWriter::new(fh);
        io::write_csv(ds, &mut w)
            .and_then(|_| std::io::Write::flush(&mut w))
            .map_err(CliError::io(&path))?;
        entries.push(GalleryEntry {
            index,
            seed: ds.seed,
            file,
            n_classes: ds.n_classes,
            unique_x: unique_count(&ds.x.column(0)),
            unique_y: unique_count(&ds.x.column(1)),
        });
    }
    if args.png {
        save_png(&render_scatter_grid(&datasets), &args.out.join("datasets.png"))?;
    }
    let functions = if args.functions {
        let fields = function_fields(args.seed)?;
        write_json(&args.out.join("functions.json"), &fields)?;
        if args.png {
            save_png(&render_fields(&fields), &args.out.join("functions.png"))?;
        }
        Some("functions.json".to_string())
    } else {
        None
    };
    let manifest = GalleryManifest {
        base_seed: args.seed,
        seeds_tried: tried,
        datasets: entries,
        functions,
    };
    write_json(&args.out.join("gallery.json"), &manifest)?;
    eprintln!("wrote {} datasets to {}", manifest.datasets.len(), args.out.display());
    Ok(())
}
