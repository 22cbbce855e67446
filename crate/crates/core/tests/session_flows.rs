use std::path::Path;

use nbcollab::codes::ErrorCode;
use nbcollab::kernel::{Fixtures, ScopeRef, Value};
use nbcollab::model::{AclTarget, CellId, CellKind, Output, Position, StructuralEdit, TabId};
use nbcollab::protocol::{ClientOp, EventBody, OpBody, ServerEvent};
use nbcollab::scenario::{notebook_from_cells, CellSpec};
use nbcollab::session::Session;

fn fixtures() -> Fixtures {
    Fixtures::load_dir(Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")).unwrap()
}

fn session(cells: &[&str]) -> Session {
    let cells: Vec<CellSpec> = cells.iter().map(|s| CellSpec::Code(s.to_string())).collect();
    let mut s = Session::new(&notebook_from_cells(&cells), fixtures(), vec!["host".into()]);
    s.set_clock(|| "2026-01-01T00:00:00Z".into());
    for u in ["host", "guest"] {
        s.join(u).unwrap();
    }
    s
}

fn send(s: &mut Session, actor: &str, body: OpBody) -> Vec<ServerEvent> {
    let mut events = s.submit(&ClientOp {
        op_id: format!("{actor}-{}", s.log().len()),
        actor: actor.into(),
        body,
    });
    events.extend(s.drain());
    events
}

fn exec(s: &mut Session, actor: &str, cell: &str) -> Vec<ServerEvent> {
    send(
        s,
        actor,
        OpBody::ExecuteCell {
            cell: CellId::new(cell),
        },
    )
}

fn error_code(events: &[ServerEvent]) -> Option<ErrorCode> {
    events.iter().find_map(|e| match &e.body {
        EventBody::Error { code, .. } => Some(*code),
        _ => None,
    })
}

fn text_of(s: &Session, cell: &str) -> String {
    let cell = s.state().notebook.cell(&CellId::new(cell)).unwrap();
    cell.outputs.iter().map(Output::text).collect()
}

fn edit(s: &Session, cell: &str, offset: usize, insert: &str) -> OpBody {
    let version = s.state().notebook.cell(&CellId::new(cell)).unwrap().text_version;
    OpBody::Structural {
        edit: StructuralEdit::SpliceText {
            id: CellId::new(cell),
            offset,
            delete_len: 0,
            insert_text: insert.into(),
            base_version: version,
        },
    }
}

fn lock_cell(s: &mut Session, cell: &str) {
    let events = send(
        s,
        "host",
        OpBody::SetCellAcl {
            cell: Some(CellId::new(cell)),
            target: AclTarget::Default,
            read: true,
            edit: false,
        },
    );
    assert_eq!(error_code(&events), None);
}

#[test]
fn locked_cell_refuses_edit_and_execute_but_stays_readable() {
    let mut s = session(&["x = 1", "print(x)"]);
    lock_cell(&mut s, "c1");
    let body = edit(&s, "c1", 0, "# ");
    assert_eq!(
        error_code(&send(&mut s, "guest", body)),
        Some(ErrorCode::PermissionDeniedCellEdit)
    );
    assert_eq!(
        error_code(&exec(&mut s, "guest", "c1")),
        Some(ErrorCode::PermissionDeniedCellEdit)
    );
    assert!(s
        .frame_for(s.log().last().unwrap(), "guest")
        .contains("PERMISSION_DENIED_CELL_EDIT"));
    // Locking a cell does not hide it.
    assert!(s.welcome("guest").contains("x = 1"));
    // The host is bound by the same ACL until they change it.
    let body = edit(&s, "c1", 0, "# ");
    assert_eq!(
        error_code(&send(&mut s, "host", body)),
        Some(ErrorCode::PermissionDeniedCellEdit)
    );
    assert_eq!(error_code(&exec(&mut s, "guest", "c2")), None);
}

#[test]
fn protected_variable_blocks_mutation_from_any_cell() {
    let mut s = session(&[
        "df = load_table(\"tweets\")",
        "df.drop_na()",
        "n = df.count()\nprint(n)",
    ]);
    assert_eq!(error_code(&exec(&mut s, "host", "c1")), None);
    send(
        &mut s,
        "host",
        OpBody::SetVariableAcl {
            name: "df".into(),
            target: AclTarget::Default,
            read: true,
            write: false,
        },
    );
    let events = exec(&mut s, "guest", "c2");
    assert_eq!(error_code(&events), Some(ErrorCode::VariableProtected));
    let refused = events.iter().find(|e| e.body.is_error()).unwrap();
    assert!(matches!(&refused.body, EventBody::Error { names, .. } if names == &["df".to_string()]));
    // Reading is still fine.
    assert_eq!(error_code(&exec(&mut s, "guest", "c3")), None);
    assert_eq!(text_of(&s, "c3"), "3\n");
    let audit = s.audit();
    assert!(audit
        .iter()
        .any(|a| a.decision == "deny" && a.user == "guest" && a.names == ["df"]));
    assert!(audit
        .iter()
        .any(|a| a.decision == "allow" && a.cell == Some(CellId::new("c3"))));
}

#[test]
fn group_tabs_run_apart_until_merged() {
    let mut s = session(&["x = 1", "x = x + 10\nprint(x)"]);
    exec(&mut s, "host", "c1");
    let events = send(
        &mut s,
        "host",
        OpBody::Structural {
            edit: StructuralEdit::IndentToGroup {
                id: CellId::new("c2"),
                group_name: "plel".into(),
            },
        },
    );
    assert_eq!(error_code(&events), None);
    // The group cell gets a fresh id and holds c2 in its main tab.
    let group_id = CellId::new("c3");
    let group = s.state().notebook.cell(&group_id).unwrap().group.clone().unwrap();
    let main = group.main_tab.clone().unwrap();
    assert_eq!(group.name, "plel");

    assert_eq!(error_code(&exec(&mut s, "guest", "c2")), None);
    assert_eq!(text_of(&s, "c2"), "11\n");
    let kernel = &s.state().kernel;
    assert_eq!(kernel.global("x"), Some(Value::Int(1)));
    assert_eq!(
        kernel.get(&ScopeRef::tab("plel", main.clone()), "x"),
        Some(Value::Int(11))
    );

    // A second tab starts from global, not from the main tab.
    let add_tab = StructuralEdit::AddTab {
        group_id: group_id.clone(),
        label: "alt".into(),
    };
    assert_eq!(
        error_code(&send(&mut s, "guest", OpBody::Structural { edit: add_tab })),
        None
    );
    let insert = StructuralEdit::InsertCell {
        position: Position::in_tab(group_id, TabId::new("t2"), 0),
        kind: CellKind::Code,
    };
    assert_eq!(
        error_code(&send(&mut s, "guest", OpBody::Structural { edit: insert })),
        None
    );
    let body = edit(&s, "c4", 0, "print(x)");
    send(&mut s, "guest", body);
    exec(&mut s, "guest", "c4");
    assert_eq!(text_of(&s, "c4"), "1\n");

    let events = send(&mut s, "host", OpBody::MergeMain { group: "plel".into() });
    assert!(events
        .iter()
        .any(|e| matches!(&e.body, EventBody::Merged { names, .. } if names == &["x".to_string()])));
    assert_eq!(s.state().kernel.global("x"), Some(Value::Int(11)));
}

#[test]
fn run_and_lock_above_freezes_the_prefix() {
    let mut s = session(&["a = 1", "b = a + 1", "print(b)"]);
    // The index is inclusive: this runs and locks c1 and c2.
    let events = send(&mut s, "host", OpBody::RunAndLockAbove { index: 1 });
    let (locked_cells, locked_variables) = events
        .iter()
        .find_map(|e| match &e.body {
            EventBody::RanAndLocked {
                locked_cells,
                locked_variables,
                failure: None,
                ..
            } => Some((locked_cells.clone(), locked_variables.clone())),
            _ => None,
        })
        .expect("ran and locked");
    assert_eq!(locked_cells, [CellId::new("c1"), CellId::new("c2")]);
    assert_eq!(locked_variables, ["a", "b"]);
    let body = edit(&s, "c2", 0, "# ");
    assert_eq!(
        error_code(&send(&mut s, "guest", body)),
        Some(ErrorCode::PermissionDeniedCellEdit)
    );
    assert_eq!(error_code(&exec(&mut s, "guest", "c3")), None);
    assert_eq!(text_of(&s, "c3"), "2\n");
}

#[test]
fn hidden_cells_are_redacted_in_frames_and_welcome() {
    let mut s = session(&["secret = \"hunter2\"", "print(1)"]);
    send(
        &mut s,
        "host",
        OpBody::SetCellAcl {
            cell: Some(CellId::new("c1")),
            target: AclTarget::User("guest".into()),
            read: false,
            edit: false,
        },
    );
    let body = edit(&s, "c1", 0, "# hunter3\n");
    let events = send(&mut s, "host", body);
    let frame = s.frame_for(&events[0], "guest");
    assert!(!frame.contains("hunter3"), "{frame}");
    assert!(s.frame_for(&events[0], "host").contains("hunter3"));
    let welcome = s.welcome("guest");
    assert!(!welcome.contains("hunter"), "{welcome}");
    assert!(welcome.contains("\"redacted\":true"), "{welcome}");
    assert_eq!(
        error_code(&exec(&mut s, "guest", "c1")),
        Some(ErrorCode::PermissionDeniedCellRead)
    );
}

#[test]
fn a_session_restores_from_its_log() {
    let mut s = session(&["x = [1, 2]", "x.append(3)\nprint(x)"]);
    exec(&mut s, "host", "c1");
    exec(&mut s, "guest", "c2");
    s.leave("guest");
    let restored = Session::from_log(s.log().to_vec()).unwrap();
    assert!(restored.state() == s.state());
    assert_eq!(text_of(&restored, "c2"), "[1, 2, 3]\n");

    let mut gap = s.log().to_vec();
    gap.remove(3);
    assert!(Session::from_log(gap).is_err());
}
