//! Builds a notebook with a parallel group and access rules, writes it in
//! the canonical file form and reads it back.
//!
//!     cargo run -p nbcollab --example notebook_file -- out.pnb.json

use nbcollab::model::{self, AclTarget, CellId, CellKind, Position, StructuralEdit};
use nbcollab::Notebook;

fn main() {
    let mut nb = Notebook::new();
    for (i, src) in [
        "import stats\ndata = load_table(\"points\")",
        "avg = stats.mean(data.col(\"y\"))",
    ]
    .iter()
    .enumerate()
    {
        let outcome = nb
            .apply_edit(&StructuralEdit::InsertCell {
                position: Position::top(i),
                kind: CellKind::Code,
            })
            .unwrap();
        let id = outcome.created_cell.clone().unwrap();
        nb.cell_mut(&id).unwrap().source = src.to_string();
    }
    nb.apply_edit(&StructuralEdit::IndentToGroup {
        id: CellId::new("c2"),
        group_name: "models".into(),
    })
    .unwrap();
    nb.cell_mut(&CellId::new("c1"))
        .unwrap()
        .acl
        .set(&AclTarget::Default, true, false);
    nb.variable_acl.set("data", &AclTarget::Default, true, false);

    let bytes = model::save(&nb);
    match std::env::args().nth(1) {
        Some(path) => std::fs::write(&path, &bytes).unwrap(),
        None => print!("{}", String::from_utf8_lossy(&bytes)),
    }
    let back = model::load(&bytes).unwrap();
    assert_eq!(back, nb);
    assert_eq!(model::save(&back), bytes);
    eprintln!("{} cells, round trip ok", back.all_cells().len());
}
