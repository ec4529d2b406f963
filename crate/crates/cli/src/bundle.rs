//! Result bundles: tables plus `summary.json` and the canonical scenario,
//! written atomically into one directory.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde_json::{json, Map, Value};

use crate::scenario::Scenario;
use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, clap::ValueEnum)]
pub enum Format {
    #[default]
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Int(i64),
    Float(f64),
    Text(String),
    Empty,
}

impl Cell {
    fn csv(&self) -> String {
        match self {
            Cell::Int(v) => v.to_string(),
            Cell::Float(v) => fmt_float(*v),
            Cell::Text(s) => s.clone(),
            Cell::Empty => String::new(),
        }
    }

    fn json(&self) -> Value {
        match self {
            Cell::Int(v) => json!(v),
            Cell::Float(v) if v.is_finite() => json!(v),
            Cell::Float(_) | Cell::Empty => Value::Null,
            Cell::Text(s) => json!(s),
        }
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as i64)
    }
}

impl From<u64> for Cell {
    fn from(v: u64) -> Self {
        Cell::Int(v as i64)
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Float(v)
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.to_string())
    }
}

impl From<String> for Cell {
    fn from(v: String) -> Self {
        Cell::Text(v)
    }
}

impl<T: Into<Cell>> From<Option<T>> for Cell {
    fn from(v: Option<T>) -> Self {
        v.map_or(Cell::Empty, Into::into)
    }
}

/// Shortest text that parses back to the same `f64`.
pub fn fmt_float(v: f64) -> String {
    if v.is_nan() {
        "NaN".into()
    } else if v.is_infinite() {
        if v > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{v:?}")
    }
}

#[derive(Debug, Clone)]
pub struct Table {
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(name: &str, header: &[&str]) -> Self {
        Table {
            name: name.to_string(),
            header: header.iter().map(|h| h.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> Result<Vec<u8>, CliError> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(Vec::new());
        w.write_record(&self.header).map_err(runtime)?;
        for row in &self.rows {
            w.write_record(row.iter().map(Cell::csv)).map_err(runtime)?;
        }
        w.into_inner().map_err(|e| CliError::Runtime(e.to_string()))
    }

    pub fn to_json(&self) -> Value {
        Value::Array(
            self.rows
                .iter()
                .map(|row| {
                    let obj: Map<String, Value> = self.header.iter().cloned().zip(row.iter().map(Cell::json)).collect();
                    Value::Object(obj)
                })
                .collect(),
        )
    }
}

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

/// Writes `bytes` to `path` through a temporary file in the same directory.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(runtime)?;
    tmp.write_all(bytes).map_err(runtime)?;
    tmp.as_file().sync_all().map_err(runtime)?;
    tmp.persist(path).map_err(|e| runtime(e.error))?;
    Ok(())
}

/// Everything one command produces.
#[derive(Debug, Clone)]
pub struct Bundle {
    pub command: String,
    pub tables: Vec<Table>,
    /// Command-specific headline numbers.
    pub results: Map<String, Value>,
    /// Definitions and settings needed to read the tables.
    pub metadata: Map<String, Value>,
}

impl Bundle {
    pub fn new(command: &str) -> Self {
        Bundle {
            command: command.to_string(),
            tables: Vec::new(),
            results: Map::new(),
            metadata: Map::new(),
        }
    }

    pub fn result(&mut self, key: &str, value: impl serde::Serialize) {
        self.results.insert(key.to_string(), serde_json::to_value(value).unwrap_or(Value::Null));
    }

    pub fn meta(&mut self, key: &str, value: impl serde::Serialize) {
        self.metadata.insert(key.to_string(), serde_json::to_value(value).unwrap_or(Value::Null));
    }

    /// Writes the bundle and returns the paths written, in order.
    pub fn write(&self, dir: &Path, format: Format, scenario: &Scenario) -> Result<Vec<PathBuf>, CliError> {
        std::fs::create_dir_all(dir).map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", dir.display())))?;
        let mut files = Vec::new();
        match format {
            Format::Csv => {
                for t in &self.tables {
                    let p = dir.join(format!("{}.csv", t.name));
                    write_atomic(&p, &t.to_csv()?)?;
                    files.push(p);
                }
            }
            Format::Json => {
                let obj: Map<String, Value> = self.tables.iter().map(|t| (t.name.clone(), t.to_json())).collect();
                let p = dir.join("results.json");
                write_atomic(&p, &pretty(&Value::Object(obj)))?;
                files.push(p);
            }
        }
        let p = dir.join("scenario.toml");
        write_atomic(&p, scenario.to_toml().as_bytes())?;
        files.push(p);

        let names: Vec<String> = files
            .iter()
            .filter_map(|f| f.file_name().map(|n| n.to_string_lossy().into_owned()))
            .collect();
        let summary = json!({
            "command": self.command,
            "experiment": scenario.experiment.name(),
            "scenario_hash": scenario.hash(),
            "seed": scenario.seed,
            "version": env!("CARGO_PKG_VERSION"),
            "files": names,
            "metadata": Value::Object(self.metadata.clone()),
            "results": Value::Object(self.results.clone()),
        });
        let p = dir.join("summary.json");
        write_atomic(&p, &pretty(&summary))?;
        files.push(p);
        Ok(files)
    }
}

fn pretty(v: &Value) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(v).expect("json serializes");
    out.push(b'\n');
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_round_trip() {
        for v in [0.1, 1.0, -2.5e-12, 1e300, 123456.789] {
            assert_eq!(fmt_float(v).parse::<f64>().unwrap(), v);
        }
        assert_eq!(fmt_float(f64::INFINITY), "inf");
    }

    #[test]
    fn csv_has_header_and_lf() {
        let mut t = Table::new("t", &["a", "b", "c"]);
        t.push(vec![1usize.into(), 0.5.into(), Cell::Empty]);
        let text = String::from_utf8(t.to_csv().unwrap()).unwrap();
        assert_eq!(text, "a,b,c\n1,0.5,\n");
    }

    #[test]
    fn json_rows_are_objects() {
        let mut t = Table::new("t", &["x", "y"]);
        t.push(vec!["p".into(), f64::NAN.into()]);
        assert_eq!(t.to_json(), json!([{"x": "p", "y": null}]));
    }
}
