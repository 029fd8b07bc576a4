//! Dataset files: self-describing CSV and a compact little-endian binary layout.
//!
//! Binary layout: magic `TPDS`, version `u32`, rows `u64`, columns `u64`,
//! task `u8`, classes `u32`, seed `u64`, one `(kind u8, cardinality u32)` entry
//! per column, one train-mask byte per row, then row-major `f64` values of
//! `X` followed by `y`.

use std::io::{self, Read, Write};

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};
use tabprior::prior::{ColumnKind, TaskKind};
use tabprior::{GeneratedDataset, Matrix};

pub const MAGIC: &[u8; 4] = b"TPDS";
pub const VERSION: u32 = 1;

fn bad(msg: impl Into<String>) -> io::Error {
    io::Error::new(io::ErrorKind::InvalidData, msg.into())
}

fn kind_suffix(kind: ColumnKind) -> String {
    match kind {
        ColumnKind::Numeric => "num".into(),
        ColumnKind::Categorical { cardinality } => format!("cat{cardinality}"),
    }
}

fn parse_suffix(s: &str) -> io::Result<ColumnKind> {
    if s == "num" {
        return Ok(ColumnKind::Numeric);
    }
    s.strip_prefix("cat")
        .and_then(|k| k.parse().ok())
        .map(|cardinality| ColumnKind::Categorical { cardinality })
        .ok_or_else(|| bad(format!("unknown column kind `{s}`")))
}

/// Header `x0:num,x1:cat3,...,y:cat{K}|y:num,split`; `split` is `train` or `test`.
pub fn write_csv(ds: &GeneratedDataset, out: &mut impl Write) -> io::Result<()> {
    let mut header: Vec<String> = ds
        .column_meta
        .iter()
        .enumerate()
        .map(|(j, &k)| format!("x{j}:{}", kind_suffix(k)))
        .collect();
    header.push(match ds.task {
        TaskKind::Classification => format!("y:cat{}", ds.n_classes),
        TaskKind::Regression => "y:num".into(),
    });
    header.push("split".into());
    writeln!(out, "{}", header.join(","))?;
    let mut line = String::new();
    for i in 0..ds.n_rows() {
        line.clear();
        for v in ds.x.row(i) {
            line.push_str(&format!("{v},"));
        }
        let split = if ds.train_mask[i] { "train" } else { "test" };
        line.push_str(&format!("{},{split}", ds.y[i]));
        writeln!(out, "{line}")?;
    }
    Ok(())
}

/// Reads a file written by [`write_csv`]; the seed is not part of the CSV and is set to `seed`.
pub fn read_csv(input: &mut impl Read, seed: u64) -> io::Result<GeneratedDataset> {
    let mut text = String::new();
    input.read_to_string(&mut text)?;
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().ok_or_else(|| bad("empty CSV"))?.split(',').collect();
    if header.len() < 3 || header[header.len() - 1] != "split" {
        return Err(bad("header must end with `y:...,split`"));
    }
    let m = header.len() - 2;
    let kind_of = |h: &str| parse_suffix(h.split_once(':').map_or("", |(_, k)| k));
    let column_meta = header[..m].iter().map(|h| kind_of(h)).collect::<io::Result<Vec<_>>>()?;
    let (task, n_classes) = match kind_of(header[m])? {
        ColumnKind::Numeric => (TaskKind::Regression, 0),
        ColumnKind::Categorical { cardinality } => (TaskKind::Classification, cardinality),
    };
    let (mut values, mut y, mut train_mask) = (Vec::new(), Vec::new(), Vec::new());
    for (r, line) in lines.enumerate() {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != m + 2 {
            return Err(bad(format!("row {r} has {} fields, expected {}", fields.len(), m + 2)));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|e| bad(format!("row {r}: `{s}`: {e}")));
        for f in &fields[..m] {
            values.push(num(f)?);
        }
        y.push(num(fields[m])?);
        train_mask.push(match fields[m + 1] {
            "train" => true,
            "test" => false,
            other => return Err(bad(format!("row {r}: split `{other}`"))),
        });
    }
    let x = Matrix::from_vec(y.len(), m, values).map_err(|e| bad(e.to_string()))?;
    Ok(GeneratedDataset {
        x,
        y,
        column_meta,
        task,
        n_classes,
        train_mask,
        seed,
    })
}

pub fn write_bin(ds: &GeneratedDataset, out: &mut impl Write) -> io::Result<()> {
    out.write_all(MAGIC)?;
    out.write_u32::<LE>(VERSION)?;
    out.write_u64::<LE>(ds.n_rows() as u64)?;
    out.write_u64::<LE>(ds.n_cols() as u64)?;
    out.write_u8(match ds.task {
        TaskKind::Classification => 0,
        TaskKind::Regression => 1,
    })?;
    out.write_u32::<LE>(ds.n_classes as u32)?;
    out.write_u64::<LE>(ds.seed)?;
    for &k in &ds.column_meta {
        let (tag, card) = match k {
            ColumnKind::Numeric => (0, 0),
            ColumnKind::Categorical { cardinality } => (1, cardinality as u32),
        };
        out.write_u8(tag)?;
        out.write_u32::<LE>(card)?;
    }
    for &t in &ds.train_mask {
        out.write_u8(u8::from(t))?;
    }
    for &v in ds.x.as_slice().iter().chain(&ds.y) {
        out.write_f64::<LE>(v)?;
    }
    Ok(())
}

pub fn read_bin(input: &mut impl Read) -> io::Result<GeneratedDataset> {
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(bad("not a tabprior dataset"));
    }
    let version = input.read_u32::<LE>()?;
    if version != VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let n = input.read_u64::<LE>()? as usize;
    let m = input.read_u64::<LE>()? as usize;
    let task = match input.read_u8()? {
        0 => TaskKind::Classification,
        1 => TaskKind::Regression,
        t => return Err(bad(format!("unknown task tag {t}"))),
    };
    let n_classes = input.read_u32::<LE>()? as usize;
    let seed = input.read_u64::<LE>()?;
    let mut column_meta = Vec::with_capacity(m);
    for _ in 0..m {
        let tag = input.read_u8()?;
        let card = input.read_u32::<LE>()? as usize;
        column_meta.push(match tag {
            0 => ColumnKind::Numeric,
            1 => ColumnKind::Categorical { cardinality: card },
            t => return Err(bad(format!("unknown column tag {t}"))),
        });
    }
    let mut train_mask = Vec::with_capacity(n);
    for _ in 0..n {
        train_mask.push(input.read_u8()? != 0);
    }
    let mut values = vec![0.0; n * m];
    input.read_f64_into::<LE>(&mut values)?;
    let mut y = vec![0.0; n];
    input.read_f64_into::<LE>(&mut y)?;
    let x = Matrix::from_vec(n, m, values).map_err(|e| bad(e.to_string()))?;
    Ok(GeneratedDataset {
        x,
        y,
        column_meta,
        task,
        n_classes,
        train_mask,
        seed,
    })
}
