use serde::Serialize;
use tabprior::attention::{attention, AttentionParams};
use tabprior::{Matrix, RngStream};

use crate::args::{AttnDiagArgs, ModeArg};
use crate::{CliError, CliResult};

pub const HEADS: usize = 4;
pub const HEAD_DIM: usize = 16;
pub const QUERIES: usize = 16;

/// Mean normalized entropy per mode at one context length.
#[derive(Debug, Serialize)]
pub struct EntropyRow {
    pub n: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub standard: Option<f64>,
    /// Standard attention with every query multiplied by 4.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub standard_x4: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ssmax: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub qassmax: Option<f64>,
}

fn gaussian(n: usize, d: usize, s: &mut RngStream) -> Matrix {
    Matrix::from_fn(n, d, |_, _| s.normal())
}

pub fn entropy_table(args: &AttnDiagArgs) -> CliResult<Vec<EntropyRow>> {
    if args.min_pow < 1 || args.min_pow > args.max_pow || args.max_pow > 20 {
        return Err(CliError::Config("need 1 <= --min-pow <= --max-pow <= 20".into()));
    }
    if args.trials == 0 {
        return Err(CliError::Config("--trials must be at least 1".into()));
    }
    let root = RngStream::new(args.seed);
    let want = |m: ModeArg| args.mode == ModeArg::All || args.mode == m;
    let standard = AttentionParams::standard(HEADS, HEAD_DIM);
    let ssmax = AttentionParams::ssmax(HEADS, HEAD_DIM, vec![args.ssmax_scale; HEADS]);
    let qassmax = AttentionParams::qassmax_init(HEADS, HEAD_DIM, &mut root.split("qassmax"));
    let mut rows = Vec::new();
    for p in args.min_pow..=args.max_pow {
        let n = 1usize << p;
        let mut s = root.split_index(p as u64);
        let mut sums = [0.0f64; 4];
        for _ in 0..args.trials {
            let q = gaussian(QUERIES, HEADS * HEAD_DIM, &mut s);
            let k = gaussian(n, HEADS * HEAD_DIM, &mut s);
            let mut q4 = q.clone();
            q4.scale(4.0);
            let mean = |q: &Matrix, params: &AttentionParams| -> CliResult<f64> {
                Ok(attention(q, &k, &k, params, None, n)?.1.mean_normalized_entropy())
            };
            if want(ModeArg::Standard) {
                sums[0] += mean(&q, &standard)?;
                sums[1] += mean(&q4, &standard)?;
            }
            if want(ModeArg::Ssmax) {
                sums[2] += mean(&q, &ssmax)?;
            }
            if want(ModeArg::Qassmax) {
                sums[3] += mean(&q, &qassmax)?;
            }
        }
        let avg = |i: usize, on: bool| on.then(|| sums[i] / args.trials as f64);
        rows.push(EntropyRow {
            n,
            standard: avg(0, want(ModeArg::Standard)),
            standard_x4: avg(1, want(ModeArg::Standard)),
            ssmax: avg(2, want(ModeArg::Ssmax)),
            qassmax: avg(3, want(ModeArg::Qassmax)),
        });
    }
    Ok(rows)
}

pub fn run(args: &AttnDiagArgs) -> CliResult<()> {
    let rows = entropy_table(args)?;
    if args.json {
        println!("{}", serde_json::to_string_pretty(&rows).expect("rows serialize"));
        return Ok(());
    }
    let cell = |v: Option<f64>| v.map_or_else(|| format!("{:>11}", "-"), |x| format!("{x:>11.4}"));
    println!("{:>7} {:>11} {:>11} {:>11} {:>11}", "n", "standard", "standard×4", "ssmax", "qassmax");
    for r in &rows {
        println!(
            "{:>7} {} {} {} {}",
            r.n,
            cell(r.standard),
            cell(r.standard_x4),
            cell(r.ssmax),
            cell(r.qassmax)
        );
    }
    Ok(())
}
