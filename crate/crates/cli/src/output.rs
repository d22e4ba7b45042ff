//! Reports and their CSV / JSON rendering.
//!
//! Floats use Rust's shortest round-trip formatting (`{:?}`), so equal values
//! always render to the same bytes and parse back exactly.

use std::fmt::Write as _;

use qstoch_core::{OperatorMatrix, C64};
use serde_json::{json, Map, Value};

use crate::args::Format;

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Int(u64),
    Float(f64),
    Text(String),
    Empty,
}

impl Cell {
    fn csv(&self) -> String {
        match self {
            Cell::Int(i) => i.to_string(),
            Cell::Float(x) => fmt_f64(*x),
            Cell::Text(s) => s.clone(),
            Cell::Empty => String::new(),
        }
    }

    fn json(&self) -> Value {
        match self {
            Cell::Int(i) => json!(i),
            Cell::Float(x) if x.is_finite() => json!(x),
            Cell::Float(x) => json!(fmt_f64(*x)),
            Cell::Text(s) => json!(s),
            Cell::Empty => Value::Null,
        }
    }
}

impl From<f64> for Cell {
    fn from(x: f64) -> Self {
        Cell::Float(x)
    }
}

impl From<usize> for Cell {
    fn from(i: usize) -> Self {
        Cell::Int(i as u64)
    }
}

impl From<Option<f64>> for Cell {
    fn from(x: Option<f64>) -> Self {
        x.map_or(Cell::Empty, Cell::Float)
    }
}

pub fn fmt_f64(x: f64) -> String {
    if x.is_nan() {
        "nan".into()
    } else if x.is_infinite() {
        if x > 0.0 { "inf" } else { "-inf" }.into()
    } else {
        format!("{x:?}")
    }
}

pub fn fmt_c64(z: C64) -> String {
    format!("{},{}", fmt_f64(z.re), fmt_f64(z.im))
}

#[derive(Debug, Clone)]
pub enum Body {
    Table { columns: Vec<&'static str>, rows: Vec<Vec<Cell>> },
    Matrices(Vec<(String, OperatorMatrix)>),
}

#[derive(Debug, Clone)]
pub struct Report {
    /// Metadata in insertion order.
    pub meta: Vec<(String, String)>,
    pub body: Body,
}

impl Report {
    pub fn table(columns: Vec<&'static str>, rows: Vec<Vec<Cell>>) -> Self {
        Self { meta: Vec::new(), body: Body::Table { columns, rows } }
    }

    pub fn matrices(ms: Vec<(String, OperatorMatrix)>) -> Self {
        Self { meta: Vec::new(), body: Body::Matrices(ms) }
    }

    pub fn with(mut self, key: &str, value: impl ToString) -> Self {
        self.meta.push((key.to_string(), value.to_string()));
        self
    }

    pub fn render(&self, format: Format) -> String {
        match format {
            Format::Csv => self.csv(),
            Format::Json => {
                let mut s = serde_json::to_string_pretty(&self.json()).expect("report serializes");
                s.push('\n');
                s
            }
        }
    }

    fn csv(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.meta {
            let v = v.replace('\n', " ");
            writeln!(out, "# {k}={v}").unwrap();
        }
        match &self.body {
            Body::Table { columns, rows } => {
                writeln!(out, "{}", columns.join(",")).unwrap();
                for row in rows {
                    let cells: Vec<String> = row.iter().map(Cell::csv).collect();
                    writeln!(out, "{}", cells.join(",")).unwrap();
                }
            }
            Body::Matrices(ms) => {
                out.push_str("name,row,col,re,im\n");
                for (name, m) in ms {
                    for r in 0..m.dim() {
                        for c in 0..m.dim() {
                            let z = m.get(r, c);
                            writeln!(out, "{name},{r},{c},{},{}", fmt_f64(z.re), fmt_f64(z.im)).unwrap();
                        }
                    }
                }
            }
        }
        out
    }

    fn json(&self) -> Value {
        let meta: Map<String, Value> = self.meta.iter().map(|(k, v)| (k.clone(), json!(v))).collect();
        let body = match &self.body {
            Body::Table { columns, rows } => {
                let rows: Vec<Value> = rows
                    .iter()
                    .map(|r| Value::Object(columns.iter().zip(r).map(|(c, v)| (c.to_string(), v.json())).collect()))
                    .collect();
                json!({ "columns": columns, "rows": rows })
            }
            Body::Matrices(ms) => {
                let m: Map<String, Value> = ms
                    .iter()
                    .map(|(n, m)| (n.clone(), serde_json::to_value(m).expect("matrix serializes")))
                    .collect();
                json!({ "matrices": m })
            }
        };
        json!({ "meta": meta, "result": body })
    }
}
