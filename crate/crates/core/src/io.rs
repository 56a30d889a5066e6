//! Tabular output as CSV or JSON.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::Result;
use crate::simulate::Trajectory;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Csv,
    Json,
}

impl Format {
    pub fn extension(&self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Json => "json",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Int(i64),
    Num(f64),
    Text(String),
}

impl Cell {
    fn render(&self) -> String {
        match self {
            Cell::Int(i) => i.to_string(),
            Cell::Num(x) => x.to_string(),
            Cell::Text(s) => s.clone(),
        }
    }

    fn json(&self) -> Value {
        match self {
            Cell::Int(i) => Value::from(*i),
            Cell::Num(x) => serde_json::Number::from_f64(*x).map_or(Value::Null, Value::Number),
            Cell::Text(s) => Value::from(s.as_str()),
        }
    }
}

impl From<f64> for Cell {
    fn from(x: f64) -> Self {
        Cell::Num(x)
    }
}

impl From<usize> for Cell {
    fn from(i: usize) -> Self {
        Cell::Int(i as i64)
    }
}

impl From<u32> for Cell {
    fn from(i: u32) -> Self {
        Cell::Int(i as i64)
    }
}

impl From<&str> for Cell {
    fn from(s: &str) -> Self {
        Cell::Text(s.to_owned())
    }
}

impl From<String> for Cell {
    fn from(s: String) -> Self {
        Cell::Text(s)
    }
}

/// Column-named rows, written as CSV with a header or as a JSON array of
/// objects.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub columns: Vec<&'static str>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(columns: &[&'static str]) -> Self {
        Table {
            columns: columns.to_vec(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(&self.columns)?;
        for row in &self.rows {
            w.write_record(row.iter().map(Cell::render))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_json(&self) -> Value {
        Value::Array(
            self.rows
                .iter()
                .map(|row| {
                    let obj: Map<String, Value> = self
                        .columns
                        .iter()
                        .zip(row)
                        .map(|(c, v)| ((*c).to_owned(), v.json()))
                        .collect();
                    Value::Object(obj)
                })
                .collect(),
        )
    }

    pub fn write<W: Write>(&self, format: Format, mut writer: W) -> Result<()> {
        match format {
            Format::Csv => self.write_csv(writer),
            Format::Json => {
                serde_json::to_writer_pretty(&mut writer, &self.to_json())?;
                writer.write_all(b"\n")?;
                Ok(())
            }
        }
    }

    /// Writes `<dir>/<stem>.<ext>` and returns the file name.
    pub fn save(&self, dir: &Path, stem: &str, format: Format) -> Result<String> {
        let name = format!("{stem}.{}", format.extension());
        let file = BufWriter::new(File::create(dir.join(&name))?);
        self.write(format, file)?;
        Ok(name)
    }
}

/// One row per recorded state: `path, time, value`.
pub fn frequency_table(paths: &[Trajectory<f64>]) -> Table {
    let mut t = Table::new(&["path", "time", "value"]);
    for (i, p) in paths.iter().enumerate() {
        for (time, v) in p.times.iter().zip(&p.values) {
            t.push(vec![i.into(), (*time).into(), (*v).into()]);
        }
    }
    t
}

/// One row per recorded state: `path, time, value, value2`.
pub fn pair_table(paths: &[Trajectory<[f64; 2]>]) -> Table {
    let mut t = Table::new(&["path", "time", "value", "value2"]);
    for (i, p) in paths.iter().enumerate() {
        for (time, v) in p.times.iter().zip(&p.values) {
            t.push(vec![i.into(), (*time).into(), v[0].into(), v[1].into()]);
        }
    }
    t
}

/// One row per logged event: `path, time, event_kind, payload`.
pub fn event_table<'a, S: 'a>(paths: impl IntoIterator<Item = &'a Trajectory<S>>) -> Table {
    let mut t = Table::new(&["path", "time", "event_kind", "payload"]);
    for (i, p) in paths.into_iter().enumerate() {
        for e in &p.events {
            t.push(vec![i.into(), e.time.into(), e.kind.as_str().into(), e.payload.into()]);
        }
    }
    t
}
