//! Text report of what each code cell would do to the notebook's variables.

use std::collections::BTreeSet;
use std::fmt::Write;

use crate::effects::{analyze_detailed, collapse, PurityTable};
use crate::lang::parse;
use crate::model::{Cell, CellKind, Notebook};

/// For every non-empty code cell: its effect sites, then one line per
/// protected name it would impact. Unparsable cells get a single line.
pub fn analyze_notebook(nb: &Notebook, protected: &BTreeSet<String>) -> String {
    let purity = PurityTable::standard();
    let groups = nb.group_names();
    let mut out = String::new();
    for cell in code_cells(nb) {
        if cell.source.trim().is_empty() {
            continue;
        }
        let ast = match parse(&cell.source) {
            Ok(ast) => ast,
            Err(e) => {
                let _ = writeln!(out, "{}: parse error at {}:{}", cell.id, e.span.line, e.span.column);
                let _ = writeln!(out, "  expected {}, found {}", e.expected, e.found);
                continue;
            }
        };
        let sites = analyze_detailed(&ast, &purity, &groups);
        let _ = writeln!(out, "{}:", cell.id);
        for site in &sites {
            let _ = writeln!(out, "  {site}");
        }
        let effects = collapse(&sites);
        for name in protected {
            for (verb, set) in [
                ("WRITES", &effects.writes),
                ("MUTATES", &effects.mutates),
                ("DELETES", &effects.deletes),
            ] {
                if set.contains(name) {
                    let _ = writeln!(out, "cell {} {verb} {name}", cell.id);
                }
            }
        }
    }
    out
}

fn code_cells(nb: &Notebook) -> Vec<&Cell> {
    nb.all_cells()
        .into_iter()
        .filter(|c| c.kind == CellKind::Code)
        .collect()
}
