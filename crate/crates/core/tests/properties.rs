mod common;

use std::collections::BTreeMap;

use nbcollab::access::{can, Capability};
use nbcollab::effects::{analyze, PurityTable};
use nbcollab::kernel::{handle_name, Kernel, ScopeRef};
use nbcollab::lang::{parse, unparse};
use nbcollab::model::{self, splice, TabId};
use nbcollab::protocol::{replay, ClientOp, EventBody, Welcome};
use nbcollab::scenario::{notebook_from_cells, CellSpec};
use nbcollab::session::Session;
use proptest::prelude::*;
use serde_json::Value;

use common::sim::{random_op, Sim};

fn prelude_kernel() -> Kernel {
    let mut k = Kernel::new();
    k.execute_source(&ScopeRef::Global, common::PRELUDE).unwrap();
    k
}

fn tab_kernel() -> (Kernel, ScopeRef, TabId) {
    let mut k = prelude_kernel();
    k.register_group("g");
    let tab = TabId::new("t1");
    k.create_tab_env("g", &tab).unwrap();
    (k, ScopeRef::tab("g", tab.clone()), tab)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn splice_then_inverse_restores_text(text in "[a-zé😀\n ]{0,20}", a in 0usize..25, b in 0usize..25, ins in "[xyß]{0,5}") {
        let len = text.chars().count();
        let offset = a.min(len);
        let del = b.min(len - offset);
        let removed: String = text.chars().skip(offset).take(del).collect();
        let once = splice(&text, offset, del, &ins).unwrap();
        prop_assert_eq!(once.chars().count(), len - del + ins.chars().count());
        let back = splice(&once, offset, ins.chars().count(), &removed).unwrap();
        prop_assert_eq!(back, text);
    }

    #[test]
    fn splice_past_the_end_is_rejected(text in "[a-z]{0,10}", extra in 1usize..5) {
        let len = text.chars().count();
        prop_assert!(splice(&text, len + extra, 0, "x").is_err());
        prop_assert!(splice(&text, 0, len + extra, "").is_err());
    }

    #[test]
    fn save_load_round_trips(seed in any::<u64>()) {
        let nb = common::notebook(&mut common::rng(seed));
        let bytes = model::save(&nb);
        let back = model::load(&bytes).unwrap();
        prop_assert_eq!(&back, &nb);
        prop_assert_eq!(model::save(&back), bytes);
    }

    #[test]
    fn unparse_is_a_fixpoint(seed in any::<u64>()) {
        let src = common::program(&mut common::rng(seed));
        let once = unparse(&parse(&src).unwrap());
        let twice = unparse(&parse(&once).unwrap());
        prop_assert_eq!(&once, &twice);
        // Reformatting does not change what the code touches.
        let purity = PurityTable::standard();
        prop_assert_eq!(
            analyze(&parse(&src).unwrap(), &purity),
            analyze(&parse(&once).unwrap(), &purity)
        );
    }

    #[test]
    fn tab_execution_never_touches_global(seed in any::<u64>()) {
        let mut rng = common::rng(seed);
        let (mut k, scope, _) = tab_kernel();
        let before = k.global_values();
        for _ in 0..3 {
            k.execute_source(&scope, &common::program(&mut rng)).unwrap();
        }
        prop_assert_eq!(k.global_values(), before);
    }

    #[test]
    fn global_changes_stay_within_static_impact(seed in any::<u64>()) {
        let src = common::program(&mut common::rng(seed));
        let ast = parse(&src).unwrap();
        let impact = analyze(&ast, &PurityTable::standard()).impact();
        let mut k = prelude_kernel();
        let before = k.global_values();
        k.execute(&ScopeRef::Global, &ast);
        let changed = common::changed_names(&before, &k.global_values());
        prop_assert!(changed.is_subset(&impact), "{:?} not in {:?}\n{}", changed, impact, src);
    }

    #[test]
    fn straight_line_impact_is_exact(seed in any::<u64>()) {
        let src = common::straight_line_program(&mut common::rng(seed));
        let ast = parse(&src).unwrap();
        let impact = analyze(&ast, &PurityTable::standard()).impact();
        let mut k = prelude_kernel();
        let before = k.global_values();
        let result = k.execute(&ScopeRef::Global, &ast);
        prop_assert!(result.error.is_none(), "{:?}\n{}", result.error, src);
        prop_assert_eq!(common::changed_names(&before, &k.global_values()), impact, "{}", src);
    }

    #[test]
    fn merge_copies_the_overlay_then_decouples(seed in any::<u64>()) {
        let mut rng = common::rng(seed);
        let (mut k, scope, tab) = tab_kernel();
        k.set_main_tab("g", Some(tab.clone())).unwrap();
        k.execute_source(&scope, &common::program(&mut rng)).unwrap();
        let overlay = k.overlay_names("g", &tab).unwrap();
        let local: Vec<_> = overlay.iter().map(|n| (n.clone(), k.get(&scope, n))).collect();
        k.merge_main_tab("g").unwrap();
        for (name, value) in &local {
            prop_assert_eq!(&k.global(name), value, "{}", name);
        }
        let merged = k.global_values();
        k.execute_source(&scope, &common::program(&mut rng)).unwrap();
        prop_assert_eq!(k.global_values(), merged);
    }

    #[test]
    fn sync_makes_the_tab_see_global(seed in any::<u64>()) {
        let mut rng = common::rng(seed);
        let (mut k, scope, tab) = tab_kernel();
        k.execute_source(&scope, &common::program(&mut rng)).unwrap();
        k.execute_source(&ScopeRef::Global, &common::program(&mut rng)).unwrap();
        k.sync_tab("g", &tab).unwrap();
        let overlay = k.overlay_names("g", &tab).unwrap();
        for (name, value) in k.global_values() {
            // A group's own handle is not in scope inside its tabs.
            if !overlay.contains(&name) && name != handle_name("g") {
                prop_assert_eq!(k.get(&scope, &name), Some(value), "{}", name);
            }
        }
    }
}

fn small_notebook(seed: u64) -> model::Notebook {
    let mut rng = common::rng(seed);
    notebook_from_cells(&[
        CellSpec::Code(common::PRELUDE.into()),
        CellSpec::Code(common::program(&mut rng)),
        CellSpec::Code(common::program(&mut rng)),
    ])
}

/// Cells keyed by id, group cells without their nested tabs.
fn cells_by_id(notebook: &Value) -> BTreeMap<String, Value> {
    fn walk(cells: &Value, out: &mut BTreeMap<String, Value>) {
        for cell in cells.as_array().into_iter().flatten() {
            let mut flat = cell.clone();
            if let Some(tabs) = flat.as_object_mut().and_then(|o| o.remove("tabs")) {
                for tab in tabs.as_array().into_iter().flatten() {
                    walk(&tab["cells"], out);
                }
            }
            out.insert(cell["id"].as_str().unwrap().to_string(), flat);
        }
    }
    let mut out = BTreeMap::new();
    walk(&notebook["cells"], &mut out);
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn replicas_converge(seed in any::<u64>()) {
        let mut sim = Sim::new(seed, &small_notebook(seed), &["a", "b", "c"], &["a"], None);
        for _ in 0..60 {
            sim.step();
        }
        sim.finish();
        let server = sim.session.state();
        for c in &sim.clients {
            prop_assert!(&c.replica == server, "{} diverged", c.name);
        }
        let violations = model::validate(&server.notebook);
        prop_assert!(violations.is_empty(), "{:?}", violations);
        let replayed = replay(sim.session.log()).unwrap();
        prop_assert!(&replayed == server);
        let restored = Session::from_log(sim.session.log().to_vec()).unwrap();
        prop_assert!(restored.state() == server);
    }

    #[test]
    fn rejected_ops_change_nothing_but_the_log(seed in any::<u64>()) {
        let mut sim = Sim::new(seed, &small_notebook(seed), &["a", "b"], &["a"], None);
        for i in 0..80 {
            let actor = if i % 2 == 0 { "a" } else { "b" };
            let stale = sim.clients[i % 2].replica.clone();
            let body = random_op(&mut sim.rng, &stale, actor, None);
            let mut before = sim.session.state().clone();
            let events = sim.session.submit(&ClientOp { op_id: format!("op{i}"), actor: actor.into(), body });
            if let [ev] = events.as_slice() {
                if matches!(ev.body, EventBody::Error { .. }) {
                    before.log_length += 1;
                    prop_assert!(sim.session.state() == &before, "error event changed state: {:?}", ev);
                }
            }
            if i % 3 == 0 {
                sim.session.drain();
            }
            sim.clients[i % 2].replica = sim.session.state().clone();
        }
    }

    #[test]
    fn welcome_matches_replayed_prefix(seed in any::<u64>(), cut in 1usize..40) {
        let mut sim = Sim::new(seed, &small_notebook(seed), &["a", "b"], &["a"], None);
        for _ in 0..40 {
            sim.step();
        }
        sim.finish();
        let log = sim.session.log();
        let cut = cut.min(log.len());
        let prefix = replay(&log[..cut]).unwrap();
        // Readable cells appear as stored, the rest only as redacted stubs.
        let welcome = Welcome::for_user(&prefix, "b");
        let shown = cells_by_id(&welcome.notebook);
        let full = cells_by_id(&prefix.notebook.to_json_value());
        prop_assert_eq!(shown.len(), full.len());
        for cell in prefix.notebook.all_cells() {
            let id = cell.id.to_string();
            if can("b", cell, Capability::ReadCell, &prefix.roles) {
                prop_assert_eq!(&shown[&id], &full[&id]);
            } else {
                prop_assert_eq!(&shown[&id]["redacted"], &Value::Bool(true));
                prop_assert!(shown[&id].get("source").is_none());
            }
        }
        // Continuing from the prefix reaches the server state.
        let mut replica = prefix;
        for ev in &log[cut..] {
            replica.apply_event(ev).unwrap();
        }
        prop_assert!(&replica == sim.session.state());
    }
}
