//! Built-in functions, modules and methods.

use std::collections::HashMap;

use indexmap::IndexMap;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use regex::Regex;

use super::heap::{Obj, Val};
use super::interp::{as_f64, err, float_result, Exec, RResult};
use super::value::{Table, Value};
use super::ErrorKind;

pub const BUILTINS: &[&str] = &["print", "len", "range", "str", "copy", "load_table", "table"];

pub const MODULES: &[&str] = &["stats", "re"];

/// Methods that change their receiver.
pub const MUTATING_METHODS: &[&str] = &["append", "pop", "set_col", "drop_na", "drop_col", "append_row"];

pub const TABLE_METHODS: &[&str] = &[
    "head",
    "count",
    "col",
    "cols",
    "copy",
    "sample",
    "set_col",
    "drop_na",
    "drop_col",
    "append_row",
    "len",
];
pub const TEXT_METHODS: &[&str] = &[
    "lower",
    "upper",
    "replace",
    "split",
    "starts_with",
    "contains",
    "strip",
    "join",
    "len",
];
pub const ARRAY_METHODS: &[&str] = &["append", "pop", "len", "copy", "contains"];
pub const MAPPING_METHODS: &[&str] = &["keys", "values", "get", "len", "copy", "contains"];
pub const MODULE_FUNCTIONS: &[(&str, &[&str])] = &[
    ("stats", &["mean", "sum", "max", "min", "median"]),
    ("re", &["sub", "search"]),
];

const RANGE_LIMIT: i64 = 1_000_000;

fn arity(name: &str, args: &[Val], min: usize, max: usize) -> RResult<()> {
    if args.len() < min || args.len() > max {
        let expected = if min == max {
            format!("{min}")
        } else {
            format!("{min} to {max}")
        };
        return err(
            ErrorKind::TypeError,
            format!("{name}() takes {expected} arguments, got {}", args.len()),
        );
    }
    Ok(())
}

impl Exec<'_> {
    fn text_arg<'a>(&self, func: &str, v: &'a Val) -> RResult<&'a str> {
        match v {
            Val::Text(s) => Ok(s),
            other => err(
                ErrorKind::TypeError,
                format!("{func}() expects Text, got {}", self.type_name(other)),
            ),
        }
    }

    fn int_arg(&self, func: &str, v: &Val) -> RResult<i64> {
        match v {
            Val::Int(i) => Ok(*i),
            other => err(
                ErrorKind::TypeError,
                format!("{func}() expects Int, got {}", self.type_name(other)),
            ),
        }
    }

    fn array_arg(&self, func: &str, v: &Val) -> RResult<Vec<Val>> {
        match v {
            Val::Obj(id) => match self.k.heap.get(*id) {
                Obj::Array(items) => Ok(items.clone()),
                other => err(
                    ErrorKind::TypeError,
                    format!("{func}() expects Array, got {}", other.type_tag()),
                ),
            },
            other => err(
                ErrorKind::TypeError,
                format!("{func}() expects Array, got {}", self.type_name(other)),
            ),
        }
    }

    fn fresh_copy(&mut self, v: &Val) -> RResult<Val> {
        if let Val::Obj(_) = v {
            let size = self.k.heap.export(v).repr().len() as u64 / 8;
            self.charge(size)?;
        }
        Ok(self.k.heap.deep_copy(v, &mut HashMap::new()))
    }

    fn table_val(&mut self, t: Table) -> RResult<Val> {
        self.charge((t.rows() * t.width().max(1)) as u64)?;
        self.alloc(Obj::Table(t))
    }

    fn text_array(&mut self, items: Vec<String>) -> RResult<Val> {
        self.charge(items.len() as u64)?;
        self.alloc(Obj::Array(items.into_iter().map(Val::Text).collect()))
    }

    pub(super) fn call_builtin(&mut self, name: &str, args: Vec<Val>) -> RResult<Val> {
        match name {
            "print" => {
                let parts: Vec<String> = args.iter().map(|a| self.k.heap.export(a).display()).collect();
                let line = parts.join(" ");
                self.charge(line.len() as u64 / 8)?;
                self.emit(&format!("{line}\n"));
                Ok(Val::Null)
            }
            "len" => {
                arity(name, &args, 1, 1)?;
                self.length(&args[0])
            }
            "range" => {
                arity(name, &args, 1, 3)?;
                let ints: Vec<i64> = args.iter().map(|a| self.int_arg(name, a)).collect::<RResult<_>>()?;
                let (start, stop, step) = match ints[..] {
                    [stop] => (0, stop, 1),
                    [start, stop] => (start, stop, 1),
                    [start, stop, step] => (start, stop, step),
                    _ => unreachable!("arity checked"),
                };
                if step == 0 {
                    return err(ErrorKind::ValueError, "range() step must not be zero");
                }
                let mut items = Vec::new();
                let mut i = start;
                while (step > 0 && i < stop) || (step < 0 && i > stop) {
                    if items.len() as i64 >= RANGE_LIMIT {
                        return err(ErrorKind::ValueError, "range() is too long");
                    }
                    self.charge(1)?;
                    items.push(Val::Int(i));
                    i = match i.checked_add(step) {
                        Some(next) => next,
                        None => break,
                    };
                }
                self.alloc(Obj::Array(items))
            }
            "str" => {
                arity(name, &args, 1, 1)?;
                Ok(Val::Text(self.k.heap.export(&args[0]).display()))
            }
            "copy" => {
                arity(name, &args, 1, 1)?;
                self.fresh_copy(&args[0])
            }
            "load_table" => {
                arity(name, &args, 1, 1)?;
                let fixture = self.text_arg(name, &args[0])?;
                let table = self.k.fixtures.get(fixture).cloned().ok_or_else(|| {
                    super::RuntimeError::new(ErrorKind::KeyError, format!("no fixture named {fixture}"))
                })?;
                self.table_val(table)
            }
            "table" => {
                arity(name, &args, 0, 1)?;
                let Some(arg) = args.first() else {
                    return self.alloc(Obj::Table(Table::new()));
                };
                let columns = match self.k.heap.export(arg) {
                    Value::Mapping(m) => m,
                    other => {
                        return err(
                            ErrorKind::TypeError,
                            format!("table() expects a Mapping of columns, got {}", other.type_tag()),
                        )
                    }
                };
                let mut cols = Vec::with_capacity(columns.len());
                for (k, v) in columns {
                    match v {
                        Value::Array(items) => cols.push((k, items)),
                        other => {
                            return err(
                                ErrorKind::TypeError,
                                format!("column {k} must be an Array, got {}", other.type_tag()),
                            )
                        }
                    }
                }
                let t = Table::from_columns(cols).or_else(|m| err(ErrorKind::ValueError, m))?;
                self.table_val(t)
            }
            _ => err(ErrorKind::NameError, format!("name {name} is not defined")),
        }
    }

    fn length(&self, v: &Val) -> RResult<Val> {
        let n = match v {
            Val::Text(s) => s.chars().count(),
            Val::Obj(id) => match self.k.heap.get(*id) {
                Obj::Array(items) => items.len(),
                Obj::Mapping(m) => m.len(),
                Obj::Table(t) => t.rows(),
            },
            other => return err(ErrorKind::TypeError, format!("{} has no length", self.type_name(other))),
        };
        Ok(Val::Int(n as i64))
    }

    pub(super) fn call_method(&mut self, recv: &Val, name: &str, args: Vec<Val>) -> RResult<Val> {
        match recv {
            Val::Module(m) => {
                let m = m.clone();
                self.call_module(&m, name, args)
            }
            Val::Text(s) => {
                let s = s.clone();
                self.text_method(&s, name, args)
            }
            Val::Obj(id) => {
                let id = *id;
                match self.k.heap.get(id) {
                    Obj::Array(_) => self.array_method(id, name, args),
                    Obj::Mapping(_) => self.mapping_method(id, name, args),
                    Obj::Table(_) => self.table_method(id, name, args),
                }
            }
            other => err(
                ErrorKind::TypeError,
                format!("{} has no method {name}", self.type_name(other)),
            ),
        }
    }

    fn no_method(&self, recv: &str, name: &str) -> RResult<Val> {
        err(ErrorKind::TypeError, format!("{recv} has no method {name}"))
    }

    fn text_method(&mut self, s: &str, name: &str, args: Vec<Val>) -> RResult<Val> {
        self.charge(s.len() as u64 / 8)?;
        match name {
            "lower" | "upper" | "strip" | "len" => {
                arity(name, &args, 0, 0)?;
                Ok(match name {
                    "lower" => Val::Text(s.to_lowercase()),
                    "upper" => Val::Text(s.to_uppercase()),
                    "strip" => Val::Text(s.trim().to_string()),
                    _ => Val::Int(s.chars().count() as i64),
                })
            }
            "replace" => {
                arity(name, &args, 2, 2)?;
                let from = self.text_arg(name, &args[0])?;
                let to = self.text_arg(name, &args[1])?;
                Ok(Val::Text(s.replace(from, to)))
            }
            "split" => {
                arity(name, &args, 0, 1)?;
                let parts: Vec<String> = match args.first() {
                    None => s.split_whitespace().map(str::to_string).collect(),
                    Some(sep) => {
                        let sep = self.text_arg(name, sep)?;
                        if sep.is_empty() {
                            return err(ErrorKind::ValueError, "split() separator is empty");
                        }
                        s.split(sep).map(str::to_string).collect()
                    }
                };
                self.text_array(parts)
            }
            "starts_with" | "contains" => {
                arity(name, &args, 1, 1)?;
                let needle = self.text_arg(name, &args[0])?;
                Ok(Val::Bool(if name == "contains" {
                    s.contains(needle)
                } else {
                    s.starts_with(needle)
                }))
            }
            "join" => {
                arity(name, &args, 1, 1)?;
                let items = self.array_arg(name, &args[0])?;
                let mut parts = Vec::with_capacity(items.len());
                for item in &items {
                    parts.push(self.text_arg(name, item)?.to_string());
                }
                self.charge(parts.len() as u64)?;
                Ok(Val::Text(parts.join(s)))
            }
            _ => self.no_method("Text", name),
        }
    }

    fn array_method(&mut self, id: u32, name: &str, args: Vec<Val>) -> RResult<Val> {
        let Obj::Array(items) = self.k.heap.get(id) else {
            unreachable!("dispatched on type")
        };
        match name {
            "len" => {
                arity(name, &args, 0, 0)?;
                Ok(Val::Int(items.len() as i64))
            }
            "contains" => {
                arity(name, &args, 1, 1)?;
                let items = items.clone();
                self.charge(items.len() as u64)?;
                Ok(Val::Bool(items.iter().any(|i| self.k.heap.deep_equal(i, &args[0]))))
            }
            "copy" => {
                arity(name, &args, 0, 0)?;
                self.fresh_copy(&Val::Obj(id))
            }
            "append" => {
                arity(name, &args, 1, 1)?;
                let v = args.into_iter().next().expect("arity checked");
                self.store_check(id, &v)?;
                if let Obj::Array(items) = self.k.heap.get_mut(id) {
                    items.push(v);
                }
                Ok(Val::Null)
            }
            "pop" => {
                arity(name, &args, 0, 0)?;
                if items.is_empty() {
                    return err(ErrorKind::IndexError, "pop from an empty Array");
                }
                let Obj::Array(items) = self.k.heap.get_mut(id) else {
                    unreachable!()
                };
                Ok(items.pop().expect("non-empty"))
            }
            _ => self.no_method("Array", name),
        }
    }

    fn mapping_method(&mut self, id: u32, name: &str, args: Vec<Val>) -> RResult<Val> {
        let Obj::Mapping(m) = self.k.heap.get(id) else {
            unreachable!("dispatched on type")
        };
        match name {
            "len" => {
                arity(name, &args, 0, 0)?;
                Ok(Val::Int(m.len() as i64))
            }
            "keys" => {
                arity(name, &args, 0, 0)?;
                let keys = m.keys().cloned().collect();
                self.text_array(keys)
            }
            "values" => {
                arity(name, &args, 0, 0)?;
                let values: Vec<Val> = m.values().cloned().collect();
                self.charge(values.len() as u64)?;
                self.alloc(Obj::Array(values))
            }
            "contains" => {
                arity(name, &args, 1, 1)?;
                let key = self.text_arg(name, &args[0])?;
                Ok(Val::Bool(m.contains_key(key)))
            }
            "get" => {
                arity(name, &args, 1, 2)?;
                let key = self.text_arg(name, &args[0])?;
                Ok(m.get(key)
                    .cloned()
                    .unwrap_or_else(|| args.get(1).cloned().unwrap_or(Val::Null)))
            }
            "copy" => {
                arity(name, &args, 0, 0)?;
                self.fresh_copy(&Val::Obj(id))
            }
            _ => self.no_method("Mapping", name),
        }
    }

    fn table_method(&mut self, id: u32, name: &str, args: Vec<Val>) -> RResult<Val> {
        let Obj::Table(t) = self.k.heap.get(id) else {
            unreachable!("dispatched on type")
        };
        match name {
            "len" | "count" => {
                arity(name, &args, 0, 0)?;
                Ok(Val::Int(t.rows() as i64))
            }
            "cols" => {
                arity(name, &args, 0, 0)?;
                let names = t.column_names().map(str::to_string).collect();
                self.text_array(names)
            }
            "col" => {
                arity(name, &args, 1, 1)?;
                let col_name = self.text_arg(name, &args[0])?;
                let col = t
                    .column(col_name)
                    .map(<[_]>::to_vec)
                    .ok_or_else(|| super::RuntimeError::new(ErrorKind::KeyError, format!("no column {col_name}")))?;
                self.column_array(&col)
            }
            "copy" => {
                arity(name, &args, 0, 0)?;
                let t = t.clone();
                self.table_val(t)
            }
            "head" => {
                arity(name, &args, 0, 1)?;
                let n = match args.first() {
                    Some(v) => self.int_arg(name, v)?.max(0) as usize,
                    None => 5,
                };
                let indices: Vec<usize> = (0..t.rows().min(n)).collect();
                let head = t.select_rows(&indices);
                self.table_val(head)
            }
            "sample" => {
                arity(name, &args, 1, 1)?;
                let n = self.int_arg(name, &args[0])?;
                let rows = t.rows();
                if n < 0 || n as usize > rows {
                    return err(
                        ErrorKind::ValueError,
                        format!("cannot sample {n} rows from a table of {rows}"),
                    );
                }
                self.rng_calls += 1;
                let seed = self.k.rng_seed ^ self.k.exec_counter.rotate_left(17) ^ self.rng_calls.rotate_left(40);
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let indices = rand::seq::index::sample(&mut rng, rows, n as usize).into_vec();
                let Obj::Table(t) = self.k.heap.get(id) else {
                    unreachable!()
                };
                let sample = t.select_rows(&indices);
                self.table_val(sample)
            }
            "set_col" => {
                arity(name, &args, 2, 2)?;
                let col_name = self.text_arg(name, &args[0])?.to_string();
                self.set_column(id, &col_name, &args[1])?;
                Ok(Val::Null)
            }
            "drop_col" => {
                arity(name, &args, 1, 1)?;
                let col_name = self.text_arg(name, &args[0])?.to_string();
                let Obj::Table(t) = self.k.heap.get_mut(id) else {
                    unreachable!()
                };
                if !t.drop_column(&col_name) {
                    return err(ErrorKind::KeyError, format!("no column {col_name}"));
                }
                Ok(Val::Null)
            }
            "drop_na" => {
                arity(name, &args, 0, 0)?;
                self.charge((t.rows() * t.width().max(1)) as u64)?;
                let Obj::Table(t) = self.k.heap.get_mut(id) else {
                    unreachable!()
                };
                let keep: Vec<bool> = (0..t.rows()).map(|r| !t.has_null(r)).collect();
                t.retain_rows(|r| keep[r]);
                Ok(Val::Obj(id))
            }
            "append_row" => {
                arity(name, &args, 1, 1)?;
                let row: IndexMap<String, Value> = match self.k.heap.export(&args[0]) {
                    Value::Mapping(m) => m,
                    other => {
                        return err(
                            ErrorKind::TypeError,
                            format!("append_row() expects a Mapping, got {}", other.type_tag()),
                        )
                    }
                };
                self.charge(row.len() as u64)?;
                let Obj::Table(t) = self.k.heap.get_mut(id) else {
                    unreachable!()
                };
                t.append_row(&row).or_else(|m| err(ErrorKind::ValueError, m))?;
                Ok(Val::Null)
            }
            _ => self.no_method("Table", name),
        }
    }

    fn call_module(&mut self, module: &str, name: &str, args: Vec<Val>) -> RResult<Val> {
        match module {
            "stats" => self.stats(name, args),
            "re" => self.regex(name, args),
            _ => err(ErrorKind::ImportError, format!("no module named {module}")),
        }
    }

    fn stats(&mut self, name: &str, args: Vec<Val>) -> RResult<Val> {
        if !["mean", "sum", "max", "min", "median"].contains(&name) {
            return err(ErrorKind::TypeError, format!("stats has no function {name}"));
        }
        arity(name, &args, 1, 1)?;
        let items = self.array_arg(name, &args[0])?;
        self.charge(items.len() as u64)?;
        let mut nums = Vec::with_capacity(items.len());
        let mut all_int = true;
        for item in &items {
            match item {
                Val::Null => {}
                Val::Int(_) | Val::Float(_) => {
                    all_int &= matches!(item, Val::Int(_));
                    nums.push(item.clone());
                }
                other => {
                    return err(
                        ErrorKind::TypeError,
                        format!("stats.{name}() expects numbers, got {}", self.type_name(other)),
                    )
                }
            }
        }
        if nums.is_empty() {
            return if name == "sum" {
                Ok(Val::Int(0))
            } else {
                err(ErrorKind::ValueError, format!("stats.{name}() of no numbers"))
            };
        }
        let floats: Vec<f64> = nums.iter().map(as_f64).collect();
        match name {
            "sum" if all_int => {
                let mut total: i64 = 0;
                for v in &nums {
                    let Val::Int(i) = v else { unreachable!() };
                    total = total
                        .checked_add(*i)
                        .ok_or_else(|| super::RuntimeError::new(ErrorKind::Overflow, "integer overflow"))?;
                }
                Ok(Val::Int(total))
            }
            "sum" => float_result(floats.iter().sum()),
            "mean" => float_result(floats.iter().sum::<f64>() / floats.len() as f64),
            "max" | "min" => {
                let mut best = 0;
                for i in 1..nums.len() {
                    let better = if name == "max" {
                        floats[i] > floats[best]
                    } else {
                        floats[i] < floats[best]
                    };
                    if better {
                        best = i;
                    }
                }
                Ok(nums[best].clone())
            }
            _ => {
                let mut sorted = floats;
                sorted.sort_by(f64::total_cmp);
                let mid = sorted.len() / 2;
                if sorted.len() % 2 == 1 {
                    let mut ordered = nums.clone();
                    ordered.sort_by(|a, b| as_f64(a).total_cmp(&as_f64(b)));
                    Ok(ordered[mid].clone())
                } else {
                    float_result((sorted[mid - 1] + sorted[mid]) / 2.0)
                }
            }
        }
    }

    fn regex(&mut self, name: &str, args: Vec<Val>) -> RResult<Val> {
        let compile = |p: &str| Regex::new(p).or_else(|e| err(ErrorKind::ValueError, format!("bad pattern: {e}")));
        match name {
            "sub" => {
                arity(name, &args, 3, 3)?;
                let re = compile(self.text_arg(name, &args[0])?)?;
                let repl = self.text_arg(name, &args[1])?;
                let text = self.text_arg(name, &args[2])?;
                self.charge(text.len() as u64 / 4 + 1)?;
                Ok(Val::Text(re.replace_all(text, regex::NoExpand(repl)).into_owned()))
            }
            "search" => {
                arity(name, &args, 2, 2)?;
                let re = compile(self.text_arg(name, &args[0])?)?;
                let text = self.text_arg(name, &args[1])?;
                self.charge(text.len() as u64 / 4 + 1)?;
                Ok(re
                    .find(text)
                    .map(|m| Val::Text(m.as_str().to_string()))
                    .unwrap_or(Val::Null))
            }
            _ => err(ErrorKind::TypeError, format!("re has no function {name}")),
        }
    }
}
