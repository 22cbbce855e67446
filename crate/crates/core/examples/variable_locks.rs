//! Effect analysis decides, before a cell runs, which protected variables
//! it would touch. A write-locked table survives a cleanup cell run by a
//! collaborator.
//!
//!     cargo run -p nbcollab --example variable_locks

use std::path::Path;

use nbcollab::effects::{analyze, PurityTable};
use nbcollab::kernel::Fixtures;
use nbcollab::lang::parse;
use nbcollab::model::{AclTarget, CellId};
use nbcollab::protocol::{ClientOp, EventBody, OpBody};
use nbcollab::scenario::{notebook_from_cells, CellSpec};
use nbcollab::session::Session;

const CLEANUP: &str = "clean = df\nclean.drop_na()\nprint(clean.count())";

fn main() {
    let effects = analyze(&parse(CLEANUP).unwrap(), &PurityTable::standard());
    println!("cleanup cell reads {:?}", effects.reads);
    println!("cleanup cell may change {:?}", effects.impact());

    let fixtures = Fixtures::load_dir(Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")).unwrap();
    let nb = notebook_from_cells(&[
        CellSpec::Code("df = load_table(\"sales\")".into()),
        CellSpec::Code(CLEANUP.into()),
        CellSpec::Code("clean = df.copy()\nclean.drop_na()\nprint(clean.count(), df.count())".into()),
    ]);
    let mut s = Session::new(&nb, fixtures, vec!["lead".into()]);
    s.join("lead").unwrap();
    s.join("ben").unwrap();

    let ops = [
        (
            "lead",
            OpBody::ExecuteCell {
                cell: CellId::new("c1"),
            },
        ),
        (
            "lead",
            OpBody::SetVariableAcl {
                name: "df".into(),
                target: AclTarget::Default,
                read: true,
                write: false,
            },
        ),
        (
            "ben",
            OpBody::ExecuteCell {
                cell: CellId::new("c2"),
            },
        ),
        (
            "ben",
            OpBody::ExecuteCell {
                cell: CellId::new("c3"),
            },
        ),
    ];
    for (i, (actor, body)) in ops.into_iter().enumerate() {
        let op = ClientOp {
            op_id: format!("op{i}"),
            actor: actor.into(),
            body,
        };
        for ev in s.submit(&op).into_iter().chain(s.drain()) {
            match &ev.body {
                EventBody::Error { code, detail, .. } => println!("{actor}: refused {code}: {detail}"),
                EventBody::ExecutionResult { report, .. } => {
                    let text: String = report.outputs.iter().map(|o| o.text()).collect();
                    println!("{actor}: {} -> {}", report.cell, text.trim_end());
                }
                _ => {}
            }
        }
    }
    for entry in s.audit() {
        println!(
            "audit {} {} {:?} {:?}",
            entry.decision, entry.user, entry.cell, entry.names
        );
    }
}
