//! Seeded generators shared by the integration tests and the acceptance
//! run. Everything is driven by a `ChaCha8Rng` so a failing seed can be
//! replayed exactly.

#![allow(dead_code)]

pub mod sim;

use std::collections::{BTreeMap, BTreeSet};

use nbcollab::kernel::Value;
use nbcollab::model::{AclTarget, CellId, CellKind, Notebook, Output, Position, StructuralEdit, TabId};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type TestRng = ChaCha8Rng;

pub fn rng(seed: u64) -> TestRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Globals every generated program may use. No two names share a container.
pub const PRELUDE: &str = "n = 3
f = 1.5
s = \"ab c\"
flag = True
nums = [1, 2, 3]
nested = [[1], [2, 3]]
m = {\"a\": 1, \"b\": [4]}
t = table({\"k\": [1, 2, None], \"v\": [\"x\", None, \"z\"]})";

pub const GLOBALS: &[&str] = &["n", "f", "s", "flag", "nums", "nested", "m", "t"];
const LOCALS: &[&str] = &["a", "b", "c", "d"];

/// Names whose binding differs between two environments.
pub fn changed_names(before: &BTreeMap<String, Value>, after: &BTreeMap<String, Value>) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    for (name, v) in before {
        if after.get(name) != Some(v) {
            out.insert(name.clone());
        }
    }
    for name in after.keys() {
        if !before.contains_key(name) {
            out.insert(name.clone());
        }
    }
    out
}

struct Gen<'r> {
    rng: &'r mut TestRng,
    out: String,
    defined: Vec<String>,
}

/// A random program over [`PRELUDE`]'s globals: loops, branches, aliasing,
/// container mutation through access paths, deletes and imports. Many
/// programs stop early with a runtime error, which is part of the point.
pub fn program(rng: &mut TestRng) -> String {
    let mut g = Gen {
        rng,
        out: String::new(),
        defined: GLOBALS.iter().map(|s| s.to_string()).collect(),
    };
    let n = g.rng.gen_range(1..=8);
    for _ in 0..n {
        g.stmt(0);
    }
    g.out
}

impl Gen<'_> {
    fn name(&mut self) -> String {
        if !self.defined.is_empty() && self.rng.gen_bool(0.9) {
            self.defined.choose(self.rng).unwrap().clone()
        } else {
            self.target()
        }
    }

    fn target(&mut self) -> String {
        let all: Vec<&str> = GLOBALS.iter().chain(LOCALS).copied().collect();
        all.choose(self.rng).unwrap().to_string()
    }

    fn expr(&mut self, depth: u32) -> String {
        let top = if depth >= 2 { 5 } else { 16 };
        match self.rng.gen_range(0..top) {
            0 => self.rng.gen_range(-5..20).to_string(),
            1 => ["\"x\"", "\"hello\"", "\"a b\"", "\"\""]
                .choose(self.rng)
                .unwrap()
                .to_string(),
            2 | 4 => self.name(),
            3 => ["True", "False", "None", "2.5"].choose(self.rng).unwrap().to_string(),
            5 => {
                let op = ["+", "-", "*", "%", "==", "<", "and", "or"].choose(self.rng).unwrap();
                format!("({} {op} {})", self.expr(depth + 1), self.expr(depth + 1))
            }
            6 => format!("len({})", self.name()),
            7 => format!("[{}, {}]", self.expr(depth + 1), self.expr(depth + 1)),
            8 => format!("{{\"p\": {}}}", self.expr(depth + 1)),
            9 => format!("{}[0]", self.name()),
            10 => format!("{}[\"b\"]", self.name()),
            11 => format!("copy({})", self.name()),
            12 => format!("{}.copy()", self.name()),
            13 => format!("str({})", self.expr(depth + 1)),
            14 => ["t.col(\"k\")", "t.count()", "t.cols()", "m.keys()", "m.get(\"b\")"]
                .choose(self.rng)
                .unwrap()
                .to_string(),
            _ => format!("range({})", self.rng.gen_range(0..4)),
        }
    }

    fn line(&mut self, depth: u32, text: String) {
        self.out.push_str(&"    ".repeat(depth as usize));
        self.out.push_str(&text);
        self.out.push('\n');
    }

    fn block(&mut self, depth: u32) {
        for _ in 0..self.rng.gen_range(1..=3) {
            self.stmt(depth);
        }
    }

    fn stmt(&mut self, depth: u32) {
        let top = if depth >= 2 { 16 } else { 18 };
        match self.rng.gen_range(0..top) {
            0 => {
                let x = self.target();
                let e = self.expr(0);
                self.line(depth, format!("{x} = {e}"));
                self.defined.push(x);
            }
            1 => {
                let (x, e) = (self.name(), self.expr(1));
                self.line(depth, format!("{x} += {e}"));
            }
            2 => {
                let x = self.name();
                let idx = ["0", "-1", "\"a\"", "\"q\""].choose(self.rng).unwrap().to_string();
                let e = self.expr(1);
                self.line(depth, format!("{x}[{idx}] = {e}"));
            }
            3 => {
                let (x, e) = (self.name(), self.expr(1));
                self.line(depth, format!("{x}.append({e})"));
            }
            4 => {
                let x = self.name();
                self.line(depth, format!("{x}.pop()"));
            }
            5 => {
                let x = if self.rng.gen_bool(0.7) {
                    "t".to_string()
                } else {
                    self.name()
                };
                let call = [
                    "drop_na()",
                    "set_col(\"w\", [7, 8, 9])",
                    "drop_col(\"k\")",
                    "append_row({\"k\": 4, \"v\": \"w\"})",
                ]
                .choose(self.rng)
                .unwrap()
                .to_string();
                self.line(depth, format!("{x}.{call}"));
            }
            6 => {
                let (x, y) = (self.target(), self.name());
                self.line(depth, format!("{x} = {y}"));
                self.defined.push(x);
            }
            7 => {
                let base = ["nested[0]", "m[\"b\"]", "nested[-1]"]
                    .choose(self.rng)
                    .unwrap()
                    .to_string();
                let base = if self.rng.gen_bool(0.3) {
                    format!("{}[0]", self.name())
                } else {
                    base
                };
                let e = self.expr(1);
                self.line(depth, format!("{base}.append({e})"));
            }
            8 => {
                let x = self.name();
                self.line(depth, format!("del {x}"));
                self.defined.retain(|d| d != &x);
            }
            9 => {
                let e = self.expr(0);
                self.line(depth, format!("print({e})"));
            }
            10 => {
                let e = self.expr(0);
                self.line(depth, e);
            }
            11 => {
                let x = if self.rng.gen_bool(0.7) {
                    "t".to_string()
                } else {
                    self.name()
                };
                self.line(depth, format!("{x}.v = [5, 6, 7]"));
            }
            12 => {
                let import = ["import re", "import stats"].choose(self.rng).unwrap().to_string();
                self.line(depth, import);
            }
            13 => {
                let (holder, stored) = (self.name(), self.name());
                let text = if self.rng.gen_bool(0.5) {
                    format!("{holder}[\"z\"] = {stored}")
                } else {
                    format!("{holder}.append({stored})")
                };
                self.line(depth, text);
            }
            14 | 15 => {
                let x = self.target();
                let e = self.expr(1);
                self.line(depth, format!("{x} = {e}"));
                self.defined.push(x);
            }
            16 => {
                let var = self.target();
                let iterable = match self.rng.gen_range(0..5) {
                    0 => format!("range({})", self.rng.gen_range(0..4)),
                    1 => "nested".to_string(),
                    2 => "m.keys()".to_string(),
                    3 => "t.col(\"v\")".to_string(),
                    _ => self.name(),
                };
                self.line(depth, format!("for {var} in {iterable}:"));
                self.defined.push(var);
                self.block(depth + 1);
            }
            _ => {
                let cond = self.expr(1);
                self.line(depth, format!("if {cond}:"));
                self.block(depth + 1);
                if self.rng.gen_bool(0.5) {
                    self.line(depth, "else:".to_string());
                    self.block(depth + 1);
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Kind {
    Number,
    Text,
    Bool,
    Array,
    Nested,
    Mapping,
    Table,
}

/// A straight-line program over [`PRELUDE`] without aliasing or runtime
/// errors in which every statement with an effect really changes the
/// value it names. For these the static impact set must equal the names
/// that changed.
pub fn straight_line_program(rng: &mut TestRng) -> String {
    let mut kinds: BTreeMap<String, Kind> = [
        ("n", Kind::Number),
        ("f", Kind::Number),
        ("s", Kind::Text),
        ("flag", Kind::Bool),
        ("nums", Kind::Array),
        ("nested", Kind::Nested),
        ("m", Kind::Mapping),
        ("t", Kind::Table),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect();
    let mut written: BTreeSet<String> = BTreeSet::new();
    let mut dead: BTreeSet<String> = BTreeSet::new();
    let mut u = 1000;
    let mut out = String::new();
    let alive_of = |kinds: &BTreeMap<String, Kind>, want: &[Kind]| -> Vec<String> {
        kinds
            .iter()
            .filter(|(_, k)| want.contains(k))
            .map(|(n, _)| n.clone())
            .collect()
    };
    for _ in 0..rng.gen_range(1..=8) {
        u += 1;
        let line = match rng.gen_range(0..8) {
            0 | 1 => {
                let names: Vec<&str> = GLOBALS
                    .iter()
                    .chain(LOCALS)
                    .copied()
                    .filter(|n| !dead.contains(*n))
                    .collect();
                let x = names.choose(rng).unwrap().to_string();
                let sized = alive_of(
                    &kinds,
                    &[Kind::Array, Kind::Nested, Kind::Mapping, Kind::Text, Kind::Table],
                );
                let (value, kind) = match rng.gen_range(0..5) {
                    0 => (u.to_string(), Kind::Number),
                    1 => (format!("[{u}]"), Kind::Array),
                    2 => (format!("{{\"k\": {u}}}"), Kind::Mapping),
                    3 => (format!("\"w{u}\""), Kind::Text),
                    _ => match sized.choose(rng) {
                        Some(src) => (format!("len({src}) + {u}"), Kind::Number),
                        None => (u.to_string(), Kind::Number),
                    },
                };
                kinds.insert(x.clone(), kind);
                written.insert(x.clone());
                format!("{x} = {value}")
            }
            2 => match alive_of(&kinds, &[Kind::Number]).choose(rng) {
                Some(x) => format!("{x} += 1"),
                None => continue,
            },
            3 => match alive_of(&kinds, &[Kind::Array]).choose(rng) {
                Some(x) if rng.gen_bool(0.5) => format!("{x}.append({u})"),
                Some(x) => format!("{x}[0] = {u}"),
                None => continue,
            },
            4 => match alive_of(&kinds, &[Kind::Nested]).choose(rng) {
                Some(x) if rng.gen_bool(0.5) => format!("{x}[0].append({u})"),
                Some(x) => format!("{x}.append([{u}])"),
                None => continue,
            },
            5 => match alive_of(&kinds, &[Kind::Mapping]).choose(rng) {
                Some(x) => format!("{x}[\"k{u}\"] = {u}"),
                None => continue,
            },
            6 => match alive_of(&kinds, &[Kind::Table]).choose(rng) {
                Some(x) => format!("{x}.append_row({{\"k\": {u}, \"v\": \"r\"}})"),
                None => continue,
            },
            _ => {
                let deletable: Vec<&str> = GLOBALS
                    .iter()
                    .copied()
                    .filter(|n| !written.contains(*n) && !dead.contains(*n))
                    .collect();
                match deletable.choose(rng) {
                    Some(x) if rng.gen_bool(0.5) => {
                        dead.insert(x.to_string());
                        kinds.remove(*x);
                        format!("del {x}")
                    }
                    _ => match kinds.keys().cloned().collect::<Vec<_>>().choose(rng) {
                        Some(x) => format!("print({x})"),
                        None => continue,
                    },
                }
            }
        };
        out.push_str(&line);
        out.push('\n');
    }
    out
}

const TEXT_ALPHABET: &[char] = &[
    'a', 'b', 'z', 'A', 'Q', '0', '7', ' ', ' ', '_', '=', '(', ')', '"', '\\', '\n', '\n', '\t', '{', '}', '[', ']',
    ':', '#', 'é', 'ß', '漢', '字', '🙂', '\u{7f}', '\u{1}', '\u{2028}', '/', '<', '>', '&',
];

pub fn random_text(rng: &mut TestRng, max: usize) -> String {
    let len = rng.gen_range(0..=max);
    (0..len).map(|_| *TEXT_ALPHABET.choose(rng).unwrap()).collect()
}

const USERS: &[&str] = &["ana", "bo", "cy", "dee"];

fn random_acl_target(rng: &mut TestRng) -> AclTarget {
    if rng.gen_bool(0.3) {
        AclTarget::Default
    } else {
        AclTarget::User(USERS.choose(rng).unwrap().to_string())
    }
}

/// Every group cell id with its tab ids.
pub fn groups(nb: &Notebook) -> Vec<(CellId, Vec<TabId>)> {
    nb.cells
        .iter()
        .filter_map(|c| {
            c.group
                .as_ref()
                .map(|g| (c.id.clone(), g.tabs.iter().map(|t| t.id.clone()).collect()))
        })
        .collect()
}

/// A structural edit that is usually, but not always, valid for `nb`.
pub fn random_edit(rng: &mut TestRng, nb: &Notebook, text: &mut dyn FnMut(&mut TestRng) -> String) -> StructuralEdit {
    let cells: Vec<_> = nb
        .all_cells()
        .into_iter()
        .map(|c| (c.id.clone(), c.kind, c.source.chars().count(), c.text_version))
        .collect();
    let top: Vec<_> = nb.cells.iter().map(|c| c.id.clone()).collect();
    let groups = groups(nb);
    let pick_cell = |rng: &mut TestRng| {
        cells
            .choose(rng)
            .map(|c| c.0.clone())
            .unwrap_or_else(|| CellId::new("c404"))
    };
    let position = |rng: &mut TestRng| -> Position {
        match groups.choose(rng) {
            Some((g, tabs)) if rng.gen_bool(0.3) => {
                let tab = tabs.choose(rng).unwrap().clone();
                Position::in_tab(g.clone(), tab, rng.gen_range(0..3))
            }
            _ => Position::top(rng.gen_range(0..=top.len())),
        }
    };
    match rng.gen_range(0..12) {
        0..=2 => StructuralEdit::InsertCell {
            position: position(rng),
            kind: if rng.gen_bool(0.8) {
                CellKind::Code
            } else {
                CellKind::Markdown
            },
        },
        3 => StructuralEdit::DeleteCell { id: pick_cell(rng) },
        4 => StructuralEdit::MoveCell {
            id: pick_cell(rng),
            position: position(rng),
        },
        5..=7 => match cells
            .iter()
            .filter(|c| c.1 != CellKind::Group)
            .collect::<Vec<_>>()
            .choose(rng)
        {
            Some((id, _, len, version)) => {
                let offset = rng.gen_range(0..=*len);
                let delete_len = rng.gen_range(0..=(len - offset).min(6));
                StructuralEdit::SpliceText {
                    id: id.clone(),
                    offset,
                    delete_len,
                    insert_text: text(rng),
                    base_version: *version,
                }
            }
            None => StructuralEdit::InsertCell {
                position: Position::top(0),
                kind: CellKind::Code,
            },
        },
        8 => StructuralEdit::IndentToGroup {
            id: top.choose(rng).cloned().unwrap_or_else(|| CellId::new("c404")),
            group_name: ["plel", "grp"].choose(rng).unwrap().to_string(),
        },
        9 => match groups.choose(rng) {
            Some((g, _)) => StructuralEdit::AddTab {
                group_id: g.clone(),
                label: ["alt", "mine"].choose(rng).unwrap().to_string(),
            },
            None => StructuralEdit::DeleteCell { id: pick_cell(rng) },
        },
        10 => match groups.choose(rng) {
            Some((g, tabs)) => {
                let tab_id = tabs.choose(rng).unwrap().clone();
                match rng.gen_range(0..3) {
                    0 => StructuralEdit::RemoveTab {
                        group_id: g.clone(),
                        tab_id,
                    },
                    _ => StructuralEdit::SetMainTab {
                        group_id: g.clone(),
                        tab_id,
                    },
                }
            }
            None => StructuralEdit::MoveCell {
                id: pick_cell(rng),
                position: Position::top(0),
            },
        },
        _ => match groups.choose(rng) {
            Some((g, _)) => StructuralEdit::Unindent { group_id: g.clone() },
            None => StructuralEdit::DeleteCell { id: pick_cell(rng) },
        },
    }
}

/// A random notebook exercising every field of the file format.
pub fn notebook(rng: &mut TestRng) -> Notebook {
    let mut nb = Notebook::new();
    for _ in 0..rng.gen_range(0..30) {
        let edit = random_edit(rng, &nb, &mut |r| random_text(r, 12));
        let _ = nb.apply_edit(&edit);
    }
    let ids: Vec<CellId> = nb.all_cells().into_iter().map(|c| c.id.clone()).collect();
    for id in ids {
        let cell = nb.cell_mut(&id).unwrap();
        for _ in 0..rng.gen_range(0..3) {
            let target = random_acl_target(rng);
            cell.acl.set(&target, rng.gen_bool(0.7), rng.gen_bool(0.5));
        }
        if cell.kind == CellKind::Group {
            continue;
        }
        if rng.gen_bool(0.5) {
            cell.source = random_text(rng, 40);
        }
        cell.text_version = rng.gen_range(0..50);
        if cell.kind == CellKind::Code && rng.gen_bool(0.5) {
            cell.exec_count = rng.gen_range(1..20);
            for _ in 0..rng.gen_range(0..3) {
                cell.outputs.push(match rng.gen_range(0..3) {
                    0 => Output::Stream {
                        text: random_text(rng, 10),
                    },
                    1 => Output::Value {
                        repr: random_text(rng, 10),
                    },
                    _ => Output::Error {
                        kind: "NameError".into(),
                        message: random_text(rng, 10),
                    },
                });
            }
        }
    }
    for _ in 0..rng.gen_range(0..3) {
        let target = random_acl_target(rng);
        nb.default_cell_acl.set(&target, rng.gen_bool(0.7), rng.gen_bool(0.5));
    }
    for _ in 0..rng.gen_range(0..4) {
        let name = GLOBALS.choose(rng).unwrap();
        let target = random_acl_target(rng);
        nb.variable_acl.set(name, &target, rng.gen_bool(0.7), rng.gen_bool(0.5));
    }
    nb
}
