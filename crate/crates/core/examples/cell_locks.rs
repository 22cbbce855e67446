//! A host locks a cell; a guest can still read it but can no longer edit
//! or run it.
//!
//!     cargo run -p nbcollab --example cell_locks

use nbcollab::kernel::Fixtures;
use nbcollab::model::{AclTarget, CellId, StructuralEdit};
use nbcollab::protocol::{ClientOp, OpBody};
use nbcollab::scenario::{notebook_from_cells, CellSpec};
use nbcollab::session::Session;

fn main() {
    let nb = notebook_from_cells(&[
        CellSpec::Code("threshold = 10".into()),
        CellSpec::Code("print(threshold * 2)".into()),
    ]);
    let mut s = Session::new(&nb, Fixtures::default(), vec!["lead".into()]);
    s.join("lead").unwrap();
    s.join("ana").unwrap();

    let send = |s: &mut Session, actor: &str, body: OpBody| {
        let op = ClientOp {
            op_id: format!("{actor}-{}", s.log().len()),
            actor: actor.into(),
            body,
        };
        for ev in s.submit(&op).into_iter().chain(s.drain()) {
            println!("{:>8} -> {}", actor, s.frame_for(&ev, "ana"));
        }
    };

    send(
        &mut s,
        "lead",
        OpBody::ExecuteCell {
            cell: CellId::new("c1"),
        },
    );
    send(
        &mut s,
        "lead",
        OpBody::SetCellAcl {
            cell: Some(CellId::new("c1")),
            target: AclTarget::Default,
            read: true,
            edit: false,
        },
    );
    let version = s.state().notebook.cell(&CellId::new("c1")).unwrap().text_version;
    send(
        &mut s,
        "ana",
        OpBody::Structural {
            edit: StructuralEdit::SpliceText {
                id: CellId::new("c1"),
                offset: 12,
                delete_len: 2,
                insert_text: "99".into(),
                base_version: version,
            },
        },
    );
    send(
        &mut s,
        "ana",
        OpBody::ExecuteCell {
            cell: CellId::new("c1"),
        },
    );
    send(
        &mut s,
        "ana",
        OpBody::ExecuteCell {
            cell: CellId::new("c2"),
        },
    );
}
