//! Named tables that `load_table` can read, usually loaded from a directory
//! of CSV files.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::value::{Table, Value};

#[derive(Debug, Error)]
pub enum FixtureError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("bad csv in {name}: {source}")]
    Csv { name: String, source: csv::Error },
    #[error("bad table {name}: {message}")]
    Shape { name: String, message: String },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Fixtures {
    tables: BTreeMap<String, Table>,
}

impl Fixtures {
    /// Loads every `*.csv` in `dir`, named by file stem.
    pub fn load_dir(dir: impl AsRef<Path>) -> Result<Fixtures, FixtureError> {
        let dir = dir.as_ref();
        let io = |source| FixtureError::Io {
            path: dir.display().to_string(),
            source,
        };
        let mut fixtures = Fixtures::default();
        let mut paths: Vec<_> = std::fs::read_dir(dir)
            .map_err(io)?
            .collect::<Result<Vec<_>, _>>()
            .map_err(io)?
            .into_iter()
            .map(|e| e.path())
            .filter(|p| p.extension().is_some_and(|e| e == "csv"))
            .collect();
        paths.sort();
        for path in paths {
            let name = path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            let text = std::fs::read_to_string(&path).map_err(|source| FixtureError::Io {
                path: path.display().to_string(),
                source,
            })?;
            let table = Fixtures::table_from_csv(&name, &text)?;
            fixtures.insert(name, table);
        }
        Ok(fixtures)
    }

    /// Parses CSV with a header row. Each field is typed on its own: empty
    /// is null, then integer, then finite float, otherwise text.
    pub fn table_from_csv(name: &str, text: &str) -> Result<Table, FixtureError> {
        let csv_err = |source| FixtureError::Csv {
            name: name.to_string(),
            source,
        };
        let mut reader = csv::Reader::from_reader(text.as_bytes());
        let headers: Vec<String> = reader.headers().map_err(csv_err)?.iter().map(str::to_string).collect();
        let mut columns: Vec<Vec<Value>> = vec![Vec::new(); headers.len()];
        for record in reader.records() {
            let record = record.map_err(csv_err)?;
            for (col, field) in columns.iter_mut().zip(record.iter()) {
                col.push(type_field(field));
            }
        }
        Table::from_columns(headers.into_iter().zip(columns)).map_err(|message| FixtureError::Shape {
            name: name.to_string(),
            message,
        })
    }

    pub fn insert(&mut self, name: impl Into<String>, table: Table) {
        self.tables.insert(name.into(), table);
    }

    pub fn get(&self, name: &str) -> Option<&Table> {
        self.tables.get(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tables.keys().map(String::as_str)
    }

    pub fn is_empty(&self) -> bool {
        self.tables.is_empty()
    }
}

fn type_field(field: &str) -> Value {
    if field.is_empty() {
        return Value::Null;
    }
    if let Ok(i) = field.parse::<i64>() {
        return Value::Int(i);
    }
    match field.parse::<f64>() {
        Ok(f) if f.is_finite() => Value::Float(f),
        _ => Value::Text(field.to_string()),
    }
}
