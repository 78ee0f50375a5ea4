//! CSV and JSON-lines writers for run records and sweep grids.
//!
//! Floats are written in scientific notation with 17 significant digits,
//! which reads back to the identical `f64`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use super::sweep::CellSummary;
use super::{EvalRow, RunRecord};
use crate::error::{Error, Result};

pub const RUN_COLUMNS: [&str; 7] = [
    "epoch",
    "train_loss",
    "eval_loss",
    "eval_error",
    "eta",
    "lambda_eff",
    "restart_index",
];

pub const SWEEP_COLUMNS: [&str; 5] = [
    "alpha",
    "lambda",
    "final_eval_error",
    "best_eval_error",
    "diverged",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Jsonl,
}

impl FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Format::Csv),
            "jsonl" => Ok(Format::Jsonl),
            other => Err(Error::Config(format!("unknown output format '{other}'"))),
        }
    }
}

impl Format {
    /// Picks the format from a file extension, defaulting to CSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("jsonl") => Format::Jsonl,
            _ => Format::Csv,
        }
    }
}

pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

enum Value {
    Float(f64),
    Int(u64),
    Bool(bool),
}

impl Value {
    fn render(&self) -> String {
        match self {
            Value::Float(x) => fmt_f64(*x),
            Value::Int(i) => i.to_string(),
            Value::Bool(b) => b.to_string(),
        }
    }
}

fn run_row(r: &EvalRow) -> [Value; 7] {
    [
        Value::Float(r.epoch),
        Value::Float(r.train_loss),
        Value::Float(r.eval_loss),
        Value::Float(r.eval_error),
        Value::Float(r.eta),
        Value::Float(r.lambda_eff),
        Value::Int(u64::from(r.restart_index)),
    ]
}

fn sweep_row(c: &CellSummary) -> [Value; 5] {
    [
        Value::Float(c.lr),
        Value::Float(c.decay),
        Value::Float(c.final_eval_error),
        Value::Float(c.best_eval_error),
        Value::Bool(c.diverged),
    ]
}

fn render<const N: usize>(columns: &[&str; N], rows: &[[Value; N]], format: Format) -> String {
    let mut out = String::new();
    match format {
        Format::Csv => {
            out.push_str(&columns.join(","));
            out.push('\n');
            for row in rows {
                let fields: Vec<String> = row.iter().map(Value::render).collect();
                out.push_str(&fields.join(","));
                out.push('\n');
            }
        }
        Format::Jsonl => {
            for row in rows {
                out.push('{');
                for (k, (name, value)) in columns.iter().zip(row).enumerate() {
                    if k > 0 {
                        out.push(',');
                    }
                    let _ = write!(out, "\"{name}\":{}", value.render());
                }
                out.push_str("}\n");
            }
        }
    }
    out
}

pub fn render_run(record: &RunRecord, format: Format) -> String {
    let rows: Vec<_> = record.rows.iter().map(run_row).collect();
    render(&RUN_COLUMNS, &rows, format)
}

pub fn render_sweep(cells: &[CellSummary], format: Format) -> String {
    let rows: Vec<_> = cells.iter().map(sweep_row).collect();
    render(&SWEEP_COLUMNS, &rows, format)
}

fn write(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

pub fn emit_run(record: &RunRecord, path: impl AsRef<Path>, format: Format) -> Result<()> {
    write(path.as_ref(), &render_run(record, format))
}

pub fn emit_sweep(cells: &[CellSummary], path: impl AsRef<Path>, format: Format) -> Result<()> {
    write(path.as_ref(), &render_sweep(cells, format))
}

/// Reads a run CSV written by [`emit_run`] back into rows.
pub fn read_run_csv(path: impl AsRef<Path>) -> Result<Vec<EvalRow>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    let header = lines.next().unwrap_or_default();
    if header != RUN_COLUMNS.join(",") {
        return Err(Error::Parse {
            path: path.into(),
            line: 1,
            msg: format!("unexpected header '{header}'"),
        });
    }
    lines
        .enumerate()
        .map(|(k, line)| {
            let parse_err = |msg: String| Error::Parse {
                path: path.into(),
                line: k + 2,
                msg,
            };
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != RUN_COLUMNS.len() {
                return Err(parse_err(format!("expected 7 fields, found {}", fields.len())));
            }
            let f = |i: usize| fields[i].parse::<f64>().map_err(|e| parse_err(e.to_string()));
            Ok(EvalRow {
                epoch: f(0)?,
                train_loss: f(1)?,
                eval_loss: f(2)?,
                eval_error: f(3)?,
                eta: f(4)?,
                lambda_eff: f(5)?,
                restart_index: fields[6].parse().map_err(|e: std::num::ParseIntError| parse_err(e.to_string()))?,
            })
        })
        .collect()
}
