//! What each participant receives over the wire. The same log entry is
//! projected per recipient, so a cell hidden from one user arrives as a
//! redacted stub while others see the text.
//!
//!     cargo run -p nbcollab --example wire_session

use nbcollab::kernel::Fixtures;
use nbcollab::model::{CellId, StructuralEdit};
use nbcollab::protocol::{decode, ClientOp, Message, OpBody};
use nbcollab::scenario::{notebook_from_cells, CellSpec};
use nbcollab::session::Session;

fn main() {
    let nb = notebook_from_cells(&[
        CellSpec::Code("api_key = \"k-123\"".into()),
        CellSpec::Code("print(1 + 1)".into()),
    ]);
    let mut s = Session::new(&nb, Fixtures::default(), vec!["lead".into()]);
    s.join("lead").unwrap();
    s.join("guest").unwrap();

    // An op as a client would send it.
    let line = r#"{"v":1,"type":"op","op_id":"a1","actor":"lead","body":{"op":"set_cell_acl","cell":"c1","target":{"user":"guest"},"read":false,"edit":false}}"#;
    let Ok(Message::Op(op)) = decode(line.as_bytes()) else {
        panic!("bad frame");
    };
    s.submit(&op);
    let edit = ClientOp {
        op_id: "a2".into(),
        actor: "lead".into(),
        body: OpBody::Structural {
            edit: StructuralEdit::SpliceText {
                id: CellId::new("c1"),
                offset: 0,
                delete_len: 0,
                insert_text: "# rotate monthly\n".into(),
                base_version: s.state().notebook.cell(&CellId::new("c1")).unwrap().text_version,
            },
        },
    };
    let events = s.submit(&edit);
    for user in ["lead", "guest"] {
        println!("{user}: {}", s.frame_for(&events[0], user));
    }
    println!("guest welcome: {}", s.welcome("guest"));
}
