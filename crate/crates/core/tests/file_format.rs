use nbcollab::model::{self, AclTarget, CellId, CellKind, Output, Position, StructuralEdit};
use nbcollab::Notebook;
use serde_json::{json, Value};

/// A file as another tool might write it: keys out of order, no id
/// counters, optional fields left out.
fn handwritten() -> Value {
    json!({
        "version": 1,
        "cells": [
            {"id": "c1", "kind": "code", "source": "x = 1", "text_version": 0, "exec_count": 0, "outputs": [],
             "acl": {"default_read": true, "default_edit": false, "per_user": {"ana": {"read": true, "edit": true}}}},
            {"kind": "group", "id": "c2", "name": "plel", "main_tab": "t1",
             "acl": {"default_read": true, "default_edit": true, "per_user": {}},
             "tabs": [{"id": "t1", "label": "main", "cells": [
                 {"id": "c3", "kind": "code", "source": "x = 2", "text_version": 4, "exec_count": 1,
                  "outputs": [{"type": "stream", "text": "hi\n"}],
                  "acl": {"default_read": true, "default_edit": true, "per_user": {}}}
             ]}]},
            {"id": "c7", "kind": "markdown", "source": "# notes", "text_version": 0, "exec_count": 0, "outputs": [],
             "acl": {"default_read": false, "default_edit": false, "per_user": {}}}
        ],
        "default_cell_acl": {"default_read": true, "default_edit": true, "per_user": {}},
        "variable_acl": {"x": {"default_read": true, "default_write": false, "per_user": {}}}
    })
}

fn load_value(v: &Value) -> Result<Notebook, model::FormatError> {
    model::load(&serde_json::to_vec(v).unwrap())
}

#[test]
fn handwritten_file_loads_with_derived_counters() {
    let nb = load_value(&handwritten()).unwrap();
    let ids: Vec<String> = nb.all_cells().iter().map(|c| c.id.to_string()).collect();
    assert_eq!(ids, ["c1", "c2", "c3", "c7"]);
    let inner = nb.cell(&CellId::new("c3")).unwrap();
    assert_eq!(inner.outputs, [Output::Stream { text: "hi\n".into() }]);
    assert_eq!(inner.text_version, 4);
    assert!(!nb.variable_acl.effective("x", "ana").write);
    assert!(nb.cell(&CellId::new("c1")).unwrap().acl.effective("ana").edit);

    // New ids continue after the largest one in the file.
    let mut nb = nb;
    let outcome = nb
        .apply_edit(&StructuralEdit::InsertCell {
            position: Position::top(0),
            kind: CellKind::Code,
        })
        .unwrap();
    assert!(nb.cell(&CellId::new("c8")).is_some(), "{outcome:?}");
}

#[test]
fn save_is_canonical_and_stable() {
    let nb = load_value(&handwritten()).unwrap();
    let bytes = model::save(&nb);
    let text = String::from_utf8(bytes.clone()).unwrap();
    assert!(text.ends_with("}\n"));
    assert!(text.starts_with("{\n  \"cells\": ["), "{text}");
    // Keys come out sorted at every level.
    let first_cell = &text[text.find("\"acl\"").unwrap()..];
    assert!(first_cell.find("\"default_edit\"").unwrap() < first_cell.find("\"default_read\"").unwrap());
    let back = model::load(&bytes).unwrap();
    assert_eq!(back, nb);
    assert_eq!(model::save(&back), bytes);
}

#[test]
fn schema_errors_name_the_offending_path() {
    let mut v = handwritten();
    v["cells"][1]["tabs"][0]["cells"][0]["text_version"] = json!("four");
    let err = load_value(&v).unwrap_err();
    assert_eq!(err.path, "cells[1].tabs[0].cells[0].text_version", "{err}");

    let mut v = handwritten();
    v["cells"][0]["kind"] = json!("chart");
    assert_eq!(load_value(&v).unwrap_err().path, "cells[0].kind");

    let mut v = handwritten();
    v["version"] = json!(2);
    assert_eq!(load_value(&v).unwrap_err().path, "version");

    let mut v = handwritten();
    v["extra"] = json!(true);
    assert!(load_value(&v).is_err());

    assert!(model::load(b"{\"cells\": []} trailing").is_err());
}

#[test]
fn structural_rules_are_enforced_on_load() {
    let mut v = handwritten();
    v["cells"][2]["id"] = json!("c3");
    let err = load_value(&v).unwrap_err();
    assert!(err.message.contains("duplicate cell id c3"), "{err}");

    let mut v = handwritten();
    v["cells"][1]["main_tab"] = json!("t9");
    assert_eq!(load_value(&v).unwrap_err().path, "cells[1].main_tab");

    let mut v = handwritten();
    v["cells"][1]["tabs"] = json!([]);
    assert_eq!(load_value(&v).unwrap_err().path, "cells[1].tabs");

    let mut v = handwritten();
    let mut nested = v["cells"][1].clone();
    nested["id"] = json!("c9");
    nested["name"] = json!("inner");
    nested["tabs"][0]["id"] = json!("t5");
    nested["tabs"][0]["cells"] = json!([]);
    v["cells"][1]["tabs"][0]["cells"].as_array_mut().unwrap().push(nested);
    let err = load_value(&v).unwrap_err();
    assert!(err.message.contains("nested"), "{err}");
}

#[test]
fn stored_counters_never_reuse_ids() {
    let mut v = handwritten();
    v["next_ids"] = json!({"cell": 2, "tab": 1});
    let mut nb = load_value(&v).unwrap();
    nb.apply_edit(&StructuralEdit::InsertCell {
        position: Position::top(0),
        kind: CellKind::Markdown,
    })
    .unwrap();
    assert_eq!(nb.cells[0].id, CellId::new("c8"));
}

#[test]
fn acl_changes_survive_a_round_trip() {
    let mut nb = Notebook::new();
    nb.apply_edit(&StructuralEdit::InsertCell {
        position: Position::top(0),
        kind: CellKind::Code,
    })
    .unwrap();
    let id = nb.cells[0].id.clone();
    nb.cell_mut(&id)
        .unwrap()
        .acl
        .set(&AclTarget::User("ben".into()), false, false);
    nb.variable_acl.set("df", &AclTarget::Default, true, false);
    let back = model::load(&model::save(&nb)).unwrap();
    assert!(!back.cell(&id).unwrap().acl.effective("ben").read);
    assert!(!back.variable_acl.effective("df", "anyone").write);
}
