use std::fmt;

use indexmap::IndexMap;
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::lang::{encode_string, format_float, Expr, ExprKind, UnaryOp};

/// An owned runtime value, detached from any kernel.
#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Null,
    Bool(bool),
    Int(i64),
    Float(f64),
    Text(String),
    Array(Vec<Value>),
    Mapping(IndexMap<String, Value>),
    Table(Table),
    /// The value bound to `_group`; only the kernel creates these.
    ScopeHandle(String),
    /// An imported module such as `stats`.
    Module(String),
}

impl Value {
    pub fn type_tag(&self) -> &'static str {
        match self {
            Value::Null => "Null",
            Value::Bool(_) => "Bool",
            Value::Int(_) => "Int",
            Value::Float(_) => "Float",
            Value::Text(_) => "Text",
            Value::Array(_) => "Array",
            Value::Mapping(_) => "Mapping",
            Value::Table(_) => "Table",
            Value::ScopeHandle(_) => "ScopeHandle",
            Value::Module(_) => "Module",
        }
    }

    pub fn is_scalar(&self) -> bool {
        matches!(
            self,
            Value::Null | Value::Bool(_) | Value::Int(_) | Value::Float(_) | Value::Text(_)
        )
    }

    /// Source-like rendering; text is quoted.
    pub fn repr(&self) -> String {
        let mut out = String::new();
        write_repr(self, &mut out);
        out
    }

    /// What `print` and `str` produce: like [`Value::repr`] except that a
    /// top-level text is shown raw.
    pub fn display(&self) -> String {
        match self {
            Value::Text(s) => s.clone(),
            other => other.repr(),
        }
    }

    /// The one-line form shown in the variable panel.
    pub fn summary(&self) -> String {
        match self {
            Value::Text(s) => s.chars().take(40).collect(),
            Value::Array(items) => format!("Array({})", items.len()),
            Value::Mapping(m) => format!("Mapping({})", m.len()),
            Value::Table(t) => format!("Table({}×{})", t.rows(), t.width()),
            other => other.repr(),
        }
    }

    /// Builds a value from a literal expression: scalars, negated numbers,
    /// arrays and mappings of literals.
    pub fn from_literal(expr: &Expr) -> Result<Value, String> {
        Ok(match &expr.kind {
            ExprKind::Int(v) => Value::Int(*v),
            ExprKind::Float(v) => Value::Float(*v),
            ExprKind::Text(s) => Value::Text(s.clone()),
            ExprKind::Bool(b) => Value::Bool(*b),
            ExprKind::None => Value::Null,
            ExprKind::Unary {
                op: UnaryOp::Neg,
                operand,
            } => match Value::from_literal(operand)? {
                Value::Int(v) => Value::Int(v.checked_neg().ok_or("integer overflow")?),
                Value::Float(v) => Value::Float(-v),
                _ => return Err("only numbers can be negated".into()),
            },
            ExprKind::Array(items) => Value::Array(items.iter().map(Value::from_literal).collect::<Result<_, _>>()?),
            ExprKind::Mapping(entries) => Value::Mapping(
                entries
                    .iter()
                    .map(|(k, v)| Ok((k.clone(), Value::from_literal(v)?)))
                    .collect::<Result<_, String>>()?,
            ),
            _ => return Err("not a literal".into()),
        })
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.display())
    }
}

fn write_repr(v: &Value, out: &mut String) {
    match v {
        Value::Null => out.push_str("None"),
        Value::Bool(true) => out.push_str("True"),
        Value::Bool(false) => out.push_str("False"),
        Value::Int(i) => out.push_str(&i.to_string()),
        Value::Float(f) => out.push_str(&format_float(*f)),
        Value::Text(s) => out.push_str(&encode_string(s)),
        Value::Array(items) => {
            out.push('[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push_str(", ");
                }
                write_repr(item, out);
            }
            out.push(']');
        }
        Value::Mapping(m) => {
            out.push('{');
            for (i, (k, item)) in m.iter().enumerate() {
                if i > 0 {
                    out.push_str(", ");
                }
                out.push_str(&encode_string(k));
                out.push_str(": ");
                write_repr(item, out);
            }
            out.push('}');
        }
        Value::Table(t) => out.push_str(&t.render()),
        Value::ScopeHandle(g) => out.push_str(&format!("<scope {g}>")),
        Value::Module(m) => out.push_str(&format!("<module {m}>")),
    }
}

/// Named columns of scalar values, all of the same length. `Null` marks a
/// missing entry.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Table {
    columns: IndexMap<String, Vec<Value>>,
}

impl Table {
    pub fn new() -> Self {
        Table::default()
    }

    /// Fails if a column holds a non-scalar or the lengths differ.
    pub fn from_columns<I>(columns: I) -> Result<Table, String>
    where
        I: IntoIterator<Item = (String, Vec<Value>)>,
    {
        let mut table = Table::new();
        for (name, values) in columns {
            table.set_column(name, values)?;
        }
        Ok(table)
    }

    pub fn rows(&self) -> usize {
        self.columns.values().next().map_or(0, Vec::len)
    }

    pub fn width(&self) -> usize {
        self.columns.len()
    }

    pub fn column(&self, name: &str) -> Option<&[Value]> {
        self.columns.get(name).map(Vec::as_slice)
    }

    pub fn column_names(&self) -> impl Iterator<Item = &str> {
        self.columns.keys().map(String::as_str)
    }

    pub fn columns(&self) -> impl Iterator<Item = (&str, &[Value])> {
        self.columns.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    pub fn row(&self, index: usize) -> Option<IndexMap<String, Value>> {
        (index < self.rows()).then(|| {
            self.columns
                .iter()
                .map(|(k, v)| (k.clone(), v[index].clone()))
                .collect()
        })
    }

    /// Replaces or appends a column, keeping its position if it exists.
    pub fn set_column(&mut self, name: String, values: Vec<Value>) -> Result<(), String> {
        if let Some(bad) = values.iter().find(|v| !v.is_scalar()) {
            return Err(format!("table cells must be scalars, got {}", bad.type_tag()));
        }
        let others = self.columns.iter().filter(|(k, _)| **k != name).count();
        if others > 0 && values.len() != self.rows() {
            return Err(format!(
                "column has {} values but the table has {} rows",
                values.len(),
                self.rows()
            ));
        }
        self.columns.insert(name, values);
        Ok(())
    }

    pub fn drop_column(&mut self, name: &str) -> bool {
        self.columns.shift_remove(name).is_some()
    }

    /// Appends one row. Missing columns get `Null`; unknown keys are an
    /// error unless the table has no columns yet.
    pub fn append_row(&mut self, row: &IndexMap<String, Value>) -> Result<(), String> {
        if let Some((k, bad)) = row.iter().find(|(_, v)| !v.is_scalar()) {
            return Err(format!("table cell {k} must be a scalar, got {}", bad.type_tag()));
        }
        if self.columns.is_empty() {
            for (k, v) in row {
                self.columns.insert(k.clone(), vec![v.clone()]);
            }
            return Ok(());
        }
        if let Some(k) = row.keys().find(|k| !self.columns.contains_key(*k)) {
            return Err(format!("unknown column {}", encode_string(k)));
        }
        for (name, values) in &mut self.columns {
            values.push(row.get(name).cloned().unwrap_or(Value::Null));
        }
        Ok(())
    }

    /// Keeps only the rows for which `keep` returns true.
    pub fn retain_rows(&mut self, keep: impl Fn(usize) -> bool) {
        for values in self.columns.values_mut() {
            let mut i = 0;
            values.retain(|_| {
                let k = keep(i);
                i += 1;
                k
            });
        }
    }

    pub fn select_rows(&self, indices: &[usize]) -> Table {
        Table {
            columns: self
                .columns
                .iter()
                .map(|(k, v)| (k.clone(), indices.iter().map(|&i| v[i].clone()).collect()))
                .collect(),
        }
    }

    pub fn has_null(&self, row: usize) -> bool {
        self.columns.values().any(|v| v[row] == Value::Null)
    }

    pub fn render(&self) -> String {
        if self.columns.is_empty() {
            return "Table(0×0)".to_string();
        }
        let mut lines = vec![self.columns.keys().cloned().collect::<Vec<_>>().join(" | ")];
        for r in 0..self.rows() {
            let cells: Vec<String> = self.columns.values().map(|v| v[r].display()).collect();
            lines.push(cells.join(" | "));
        }
        lines.join("\n")
    }
}

fn scalar_to_json(v: &Value) -> serde_json::Value {
    match v {
        Value::Bool(b) => (*b).into(),
        Value::Int(i) => (*i).into(),
        Value::Float(f) => serde_json::Number::from_f64(*f).map_or(serde_json::Value::Null, Into::into),
        Value::Text(s) => s.clone().into(),
        _ => serde_json::Value::Null,
    }
}

fn scalar_from_json(v: serde_json::Value) -> Result<Value, String> {
    Ok(match v {
        serde_json::Value::Null => Value::Null,
        serde_json::Value::Bool(b) => Value::Bool(b),
        serde_json::Value::Number(n) => match n.as_i64() {
            Some(i) if !n.is_f64() => Value::Int(i),
            _ => Value::Float(n.as_f64().ok_or("number out of range")?),
        },
        serde_json::Value::String(s) => Value::Text(s),
        other => return Err(format!("table cells must be scalars, got {other}")),
    })
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ColumnRepr {
    name: String,
    values: Vec<serde_json::Value>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TableRepr {
    columns: Vec<ColumnRepr>,
}

impl Serialize for Table {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        TableRepr {
            columns: self
                .columns
                .iter()
                .map(|(name, values)| ColumnRepr {
                    name: name.clone(),
                    values: values.iter().map(scalar_to_json).collect(),
                })
                .collect(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Table {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let repr = TableRepr::deserialize(d)?;
        let mut columns = Vec::with_capacity(repr.columns.len());
        for col in repr.columns {
            let values = col
                .values
                .into_iter()
                .map(scalar_from_json)
                .collect::<Result<Vec<_>, _>>()
                .map_err(D::Error::custom)?;
            columns.push((col.name, values));
        }
        Table::from_columns(columns).map_err(D::Error::custom)
    }
}
