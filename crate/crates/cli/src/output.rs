//! Output files and reports.
//!
//! Every CSV starts with three comment lines:
//!
//! ```text
//! # schema=<name>/1
//! # scenario_sha256=<hex>
//! # seed=<u64 or none>
//! ```
//!
//! Numbers are written as `{:.10e}` so re-runs are byte-identical.

use std::fmt::Write as _;
use std::fs;
use std::path::PathBuf;

use crate::scenario::Expectation;
use crate::{CliError, Context};

pub const SCHEMA_VERSION: u32 = 1;

/// Quantities, files and problems produced by one command.
#[derive(Debug, Clone, Default)]
pub struct Report {
    pub command: String,
    pub quantities: Vec<(String, f64)>,
    pub files: Vec<PathBuf>,
    /// Human-readable table for the console.
    pub table: String,
    /// Recoverable problems (e.g. a failed sweep point).
    pub notes: Vec<String>,
    /// Failures that make the run unsuccessful.
    pub errors: Vec<String>,
}

impl Report {
    pub fn new(command: &str) -> Self {
        Self {
            command: command.into(),
            ..Default::default()
        }
    }

    pub fn set(&mut self, name: impl Into<String>, value: f64) {
        let name = name.into();
        match self.quantities.iter_mut().find(|(n, _)| *n == name) {
            Some(slot) => slot.1 = value,
            None => self.quantities.push((name, value)),
        }
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.quantities
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| *v)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub quantity: String,
    pub value: Option<f64>,
    pub expected: String,
    pub passed: bool,
}

impl Check {
    pub fn line(&self) -> String {
        let value = self
            .value
            .map_or("missing".to_string(), |v| format!("{v:.6e}"));
        let status = if self.passed { "PASS" } else { "FAIL" };
        format!(
            "{status} {} = {value} (expected {})",
            self.quantity, self.expected
        )
    }
}

pub fn evaluate(report: &Report, expectations: &[Expectation]) -> Vec<Check> {
    expectations
        .iter()
        .map(|e| {
            let value = report.get(&e.quantity);
            Check {
                quantity: e.quantity.clone(),
                value,
                expected: e.describe(),
                passed: value.is_some_and(|v| e.check(v)),
            }
        })
        .collect()
}

pub fn num(v: f64) -> String {
    format!("{v:.10e}")
}

pub fn header(ctx: &Context, schema: &str) -> String {
    let seed = ctx.seed.map_or("none".to_string(), |s| s.to_string());
    format!(
        "# schema={schema}/{SCHEMA_VERSION}\n# scenario_sha256={}\n# seed={seed}\n",
        ctx.loaded.sha256
    )
}

/// Writes `contents` to `name` in the output directory, if there is one.
pub fn write(
    ctx: &Context,
    report: &mut Report,
    name: &str,
    contents: &str,
) -> Result<(), CliError> {
    let Some(dir) = &ctx.out else {
        return Ok(());
    };
    let path = dir.join(name);
    let io = |source| CliError::Io {
        path: path.clone(),
        source,
    };
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(io)?;
    }
    fs::write(&path, contents).map_err(io)?;
    report.files.push(path);
    Ok(())
}

/// Writes a CSV table with the standard header.
pub fn write_csv(
    ctx: &Context,
    report: &mut Report,
    name: &str,
    schema: &str,
    columns: &[String],
    rows: &[Vec<String>],
) -> Result<(), CliError> {
    let mut text = header(ctx, schema);
    text.push_str(&columns.join(","));
    text.push('\n');
    for row in rows {
        text.push_str(&row.join(","));
        text.push('\n');
    }
    write(ctx, report, name, &text)
}

pub(crate) fn write_summary(
    ctx: &Context,
    report: &mut Report,
    checks: &[Check],
) -> Result<(), CliError> {
    let mut rows: Vec<Vec<String>> = report
        .quantities
        .iter()
        .map(|(n, v)| vec!["quantity".into(), n.clone(), num(*v), String::new()])
        .collect();
    for c in checks {
        rows.push(vec![
            if c.passed { "pass" } else { "fail" }.into(),
            c.quantity.clone(),
            c.value.map_or(String::new(), num),
            csv_safe(&c.expected),
        ]);
    }
    for e in &report.errors {
        rows.push(vec![
            "error".into(),
            String::new(),
            String::new(),
            csv_safe(e),
        ]);
    }
    let columns = ["kind", "name", "value", "detail"].map(String::from);
    write_csv(ctx, report, "summary.csv", "summary", &columns, &rows)
}

/// Free text in a CSV cell: commas and newlines replaced.
pub fn csv_safe(s: &str) -> String {
    s.replace(',', ";").replace('\n', " ")
}

/// Fixed-width console table.
pub fn table(columns: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = columns.iter().map(|c| c.len()).collect();
    for row in rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.len());
        }
    }
    let mut out = String::new();
    let line = |cells: Vec<&str>, out: &mut String| {
        let padded: Vec<String> = cells
            .iter()
            .zip(&widths)
            .map(|(c, w)| format!("{c:>w$}"))
            .collect();
        let _ = writeln!(out, "{}", padded.join("  "));
    };
    line(columns.to_vec(), &mut out);
    for row in rows {
        line(row.iter().map(String::as_str).collect(), &mut out);
    }
    out
}
