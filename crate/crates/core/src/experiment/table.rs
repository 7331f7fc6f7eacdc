//! Numeric CSV tables with a schema line.
//!
//! Every file starts with `# stackelberg-<kind> v<version>` followed by a
//! header row. Values are written in Rust's shortest round-trip form, so a
//! reader parsing them back gets bit-identical `f64`s.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use super::ExperimentError;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableKind {
    /// Per-timestep states, controls and (filter modes) beliefs.
    Trace,
    /// Per-iteration solver progress.
    Iterations,
}

impl TableKind {
    fn tag(self) -> &'static str {
        match self {
            TableKind::Trace => "trace",
            TableKind::Iterations => "iterations",
        }
    }

    fn schema_line(self) -> String {
        format!("# stackelberg-{} v{SCHEMA_VERSION}", self.tag())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub kind: TableKind,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn new(kind: TableKind, columns: Vec<String>) -> Self {
        Self { kind, columns, rows: Vec::new() }
    }

    /// # Panics
    /// If the row length differs from the header.
    pub fn push(&mut self, row: Vec<f64>) {
        assert_eq!(row.len(), self.columns.len(), "row length must match the header");
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    /// Indices of `prefix0, prefix1, ...` in order.
    pub fn indexed_columns(&self, prefix: &str) -> Vec<usize> {
        (0..).map_while(|k| self.column(&format!("{prefix}{k}"))).collect()
    }

    pub fn write(&self, path: &Path) -> Result<(), ExperimentError> {
        let io = |e: std::io::Error| ExperimentError::io(path, e);
        let mut out = BufWriter::new(File::create(path).map_err(io)?);
        writeln!(out, "{}", self.kind.schema_line()).map_err(io)?;
        let mut w = csv::Writer::from_writer(out);
        let csv_err = |e: csv::Error| ExperimentError::Schema(format!("{}: {e}", path.display()));
        w.write_record(&self.columns).map_err(csv_err)?;
        for row in &self.rows {
            w.write_record(row.iter().map(|v| format!("{v:?}"))).map_err(csv_err)?;
        }
        w.flush().map_err(io)
    }

    pub fn read(path: &Path, kind: TableKind) -> Result<Self, ExperimentError> {
        let file = File::open(path).map_err(|e| ExperimentError::io(path, e))?;
        let mut reader = BufReader::new(file);
        let mut first = String::new();
        reader.read_line(&mut first).map_err(|e| ExperimentError::io(path, e))?;
        let schema = |msg: String| ExperimentError::Schema(format!("{}: {msg}", path.display()));
        let first = first.trim_end();
        let expected_prefix = format!("# stackelberg-{} v", kind.tag());
        let version = first
            .strip_prefix(&expected_prefix)
            .ok_or_else(|| schema(format!("missing `{}` schema line, found `{first}`", kind.schema_line())))?;
        if version != SCHEMA_VERSION.to_string() {
            return Err(schema(format!("unsupported schema version `{version}` (supported: {SCHEMA_VERSION})")));
        }

        let mut r = csv::Reader::from_reader(reader);
        let columns: Vec<String> =
            r.headers().map_err(|e| schema(e.to_string()))?.iter().map(str::to_owned).collect();
        let mut table = Table::new(kind, columns);
        for (line, record) in r.records().enumerate() {
            let record = record.map_err(|e| schema(e.to_string()))?;
            if record.len() != table.columns.len() {
                return Err(schema(format!("row {line} has {} fields, header has {}", record.len(), table.columns.len())));
            }
            let row = record
                .iter()
                .enumerate()
                .map(|(c, v)| {
                    v.trim()
                        .parse::<f64>()
                        .map_err(|_| schema(format!("row {line}, column `{}`: `{v}` is not a number", table.columns[c])))
                })
                .collect::<Result<Vec<_>, _>>()?;
            table.rows.push(row);
        }
        Ok(table)
    }
}
