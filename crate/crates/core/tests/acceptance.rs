//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any criterion fails. Counts and time limits are pinned
//! here rather than read from the environment.

mod common;

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use common::sim::{marker, Hidden, Sim};
use nbcollab::effects::{analyze, PurityTable};
use nbcollab::kernel::{Kernel, ScopeRef};
use nbcollab::lang::parse;
use nbcollab::model::{self, AclTarget, CellId, Output, TabId};
use nbcollab::protocol::{encode, replay, EventBody, Message};
use nbcollab::scenario::{notebook_from_cells, run_scenario, CellSpec, Report, ScenarioScript};

const RUBRIC_SCRIPTS: usize = 18;
const RUBRIC_LIMIT: Duration = Duration::from_secs(10);
const ISOLATION_PROGRAMS: u64 = 1000;
const ISOLATION_LIMIT: Duration = Duration::from_secs(5);
const SOUNDNESS_PROGRAMS: u64 = 1000;
const SOUNDNESS_LIMIT: Duration = Duration::from_secs(10);
const CLIENTS: usize = 5;
const OPS_PER_RUN: usize = 200;
const CONVERGENCE_SEEDS: u64 = 50;
const CONVERGENCE_LIMIT: Duration = Duration::from_secs(30);
const LEAK_SEEDS: u64 = 500;
const LEAK_STEPS: usize = 60;
const ROUND_TRIP_NOTEBOOKS: u64 = 500;

fn scenarios_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

fn run_file(name: &str) -> Result<Report, String> {
    let script = ScenarioScript::load(scenarios_dir().join(name)).map_err(|e| format!("{name}: {e}"))?;
    run_scenario(&script).map_err(|e| format!("{name}: {e}"))
}

fn rubric() -> Result<String, String> {
    let mut names: Vec<String> = std::fs::read_dir(scenarios_dir())
        .map_err(|e| e.to_string())?
        .filter_map(|e| e.ok()?.file_name().into_string().ok())
        .filter(|n| n.starts_with("rubric_") && n.ends_with(".json"))
        .collect();
    names.sort();
    let baseline = names.iter().filter(|n| n.ends_with("_baseline.json")).count();
    if names.len() != RUBRIC_SCRIPTS || baseline != RUBRIC_SCRIPTS / 2 {
        return Err(format!(
            "expected 9 configured and 9 baseline scripts, found {} and {baseline}",
            names.len() - baseline
        ));
    }
    let mut failed = Vec::new();
    let mut checks = 0;
    for name in &names {
        let report = run_file(name)?;
        checks += report.passed + report.failed.len();
        if !report.ok() {
            failed.push(report.summary());
        }
    }
    if failed.is_empty() {
        Ok(format!(
            "{}/{} scripts, {checks} expectations",
            names.len(),
            names.len()
        ))
    } else {
        Err(failed.join("; "))
    }
}

fn silent_conflict() -> Result<String, String> {
    let t2 = run_file("paired_t2_baseline.json")?;
    let t3 = run_file("paired_t3_parallel.json")?;
    for r in [&t2, &t3] {
        if !r.ok() {
            return Err(r.summary());
        }
    }
    // The corrupted run must look like a normal one: no error event and no
    // runtime error anywhere in the participant's last step.
    let last = t2.transcript.last().ok_or("empty transcript")?;
    for ev in &last.events {
        match &ev.body {
            EventBody::Error { code, .. } => return Err(format!("T2 surfaced {code}")),
            EventBody::ExecutionResult { report, .. }
                if report.outputs.iter().any(|o| matches!(o, Output::Error { .. })) =>
            {
                return Err("T2 raised a runtime error".into());
            }
            _ => {}
        }
    }
    Ok("T2 wrong output with no error, T3 correct output (exact match)".into())
}

fn isolation() -> Result<String, String> {
    let mut touched = 0;
    for seed in 0..ISOLATION_PROGRAMS / 2 {
        let mut rng = common::rng(seed);
        let mut k = Kernel::new();
        k.execute_source(&ScopeRef::Global, common::PRELUDE)
            .map_err(|e| e.to_string())?;
        k.register_group("g");
        let tab = TabId::new("t1");
        k.create_tab_env("g", &tab).map_err(|e| e.to_string())?;
        let scope = ScopeRef::tab("g", tab.clone());
        for _ in 0..2 {
            let src = common::program(&mut rng);
            let before = k.global_values();
            k.execute_source(&scope, &src)
                .map_err(|e| format!("seed {seed}: generated program does not parse: {e}\n{src}"))?;
            if k.global_values() != before {
                return Err(format!("seed {seed}: global changed by\n{src}"));
            }
        }
        if !k.overlay_names("g", &tab).map_err(|e| e.to_string())?.is_empty() {
            touched += 1;
        }
    }
    Ok(format!(
        "{ISOLATION_PROGRAMS}/{ISOLATION_PROGRAMS} global unchanged ({touched} tabs with local bindings)"
    ))
}

fn soundness() -> Result<String, String> {
    let purity = PurityTable::standard();
    let mut changed_any = 0;
    for seed in 0..SOUNDNESS_PROGRAMS {
        let mut rng = common::rng(seed);
        for straight in [false, true] {
            let src = if straight {
                common::straight_line_program(&mut rng)
            } else {
                common::program(&mut rng)
            };
            let ast = parse(&src).map_err(|e| format!("seed {seed}: {e}\n{src}"))?;
            let stat = analyze(&ast, &purity).impact();
            let mut k = Kernel::new();
            k.execute_source(&ScopeRef::Global, common::PRELUDE)
                .map_err(|e| e.to_string())?;
            let before = k.global_values();
            let result = k.execute(&ScopeRef::Global, &ast);
            let dynamic = common::changed_names(&before, &k.global_values());
            if !dynamic.is_subset(&stat) {
                return Err(format!(
                    "seed {seed}: changed {dynamic:?} but static impact {stat:?}\n{src}"
                ));
            }
            if straight {
                if let Some(e) = result.error {
                    return Err(format!("seed {seed}: straight-line program failed: {e:?}\n{src}"));
                }
                if dynamic != stat {
                    return Err(format!(
                        "seed {seed}: changed {dynamic:?} != static impact {stat:?}\n{src}"
                    ));
                }
            }
            changed_any += usize::from(!dynamic.is_empty());
        }
    }
    Ok(format!(
        "{SOUNDNESS_PROGRAMS}/{SOUNDNESS_PROGRAMS} subset, {SOUNDNESS_PROGRAMS}/{SOUNDNESS_PROGRAMS} straight-line equal ({changed_any} programs changed globals)"
    ))
}

fn session_notebook(rng: &mut common::TestRng) -> model::Notebook {
    let mut cells = vec![CellSpec::Code(common::PRELUDE.to_string())];
    for _ in 0..3 {
        cells.push(CellSpec::Code(common::program(rng)));
    }
    cells.push(CellSpec::Typed {
        kind: model::CellKind::Markdown,
        source: "notes".into(),
    });
    notebook_from_cells(&cells)
}

const USERS: [&str; CLIENTS] = ["u0", "u1", "u2", "u3", "u4"];

fn convergence() -> Result<String, String> {
    let mut events = 0;
    for seed in 0..CONVERGENCE_SEEDS {
        let nb = session_notebook(&mut common::rng(seed ^ 0xc0ffee));
        let mut sim = Sim::new(seed, &nb, &USERS, &["u0"], None);
        for _ in 0..OPS_PER_RUN {
            sim.step();
        }
        sim.finish();
        let server = sim.session.state();
        for c in &sim.clients {
            if &c.replica != server {
                return Err(format!("seed {seed}: replica of {} differs from the server", c.name));
            }
        }
        let replayed = replay(sim.session.log()).map_err(|e| format!("seed {seed}: replay failed: {e:?}"))?;
        if &replayed != server {
            return Err(format!("seed {seed}: replay(log) differs from the server"));
        }
        events += sim.session.log().len();
    }
    Ok(format!(
        "{CONVERGENCE_SEEDS}/{CONVERGENCE_SEEDS} seeds, {CLIENTS} replicas equal to server and replay(log), {events} events"
    ))
}

fn leak_scan() -> Result<String, String> {
    let mut frames = 0;
    let mut markers = 0;
    let mut live = 0;
    for seed in 0..LEAK_SEEDS {
        let mut rng = common::rng(seed ^ 0x1eaf);
        let mut nb = session_notebook(&mut rng);
        let mut hidden = Hidden::default();
        let restricted: Vec<&str> = if seed % 2 == 0 { vec!["u3"] } else { vec!["u3", "u4"] };
        hidden.restricted = restricted.iter().map(|s| s.to_string()).collect();
        let ids: Vec<CellId> = nb.all_cells().into_iter().map(|c| c.id.clone()).collect();
        let count = 1 + (seed as usize % 3);
        for id in ids.iter().skip(1).take(count) {
            let m1 = marker(&mut rng);
            let m2 = marker(&mut rng);
            let cell = nb.cell_mut(id).unwrap();
            cell.source = format!("# {m1}\n{}\nprint(\"{m2}\")\n", cell.source.trim_end());
            for u in &restricted {
                cell.acl.set(&AclTarget::User(u.to_string()), false, false);
            }
            hidden.cells.insert(id.clone());
            hidden.markers.extend([m1, m2]);
        }
        let mut sim = Sim::new(seed, &nb, &USERS, &["u0"], Some(hidden));
        for _ in 0..LEAK_STEPS {
            sim.step();
        }
        sim.finish();
        let leaks = sim.leaks();
        if let Some((user, what)) = leaks.first() {
            return Err(format!("seed {seed}: frame to {user} leaks {what}"));
        }
        // Control: the same markers do travel in the unprojected log, so a
        // clean scan means projection removed them.
        let h = sim.hidden.as_ref().unwrap();
        if sim.session.log().iter().any(|ev| {
            let line = encode(&Message::Event(ev.clone()));
            h.markers.iter().any(|m| line.contains(m.as_str()))
        }) {
            live += 1;
        }
        frames += sim.frames.len();
        markers += h.markers.len();
    }
    if live < LEAK_SEEDS / 2 {
        return Err(format!(
            "markers reached the raw log in only {live} seeds, scan is not exercising redaction"
        ));
    }
    Ok(format!(
        "{LEAK_SEEDS}/{LEAK_SEEDS} seeds clean ({frames} frames scanned for {markers} markers, present unredacted in {live} logs)"
    ))
}

fn round_trip() -> Result<String, String> {
    let mut cells = 0;
    for seed in 0..ROUND_TRIP_NOTEBOOKS {
        let nb = common::notebook(&mut common::rng(seed));
        let bytes = model::save(&nb);
        let back = model::load(&bytes).map_err(|e| format!("seed {seed}: {e}"))?;
        if back != nb {
            return Err(format!("seed {seed}: load(save(nb)) != nb"));
        }
        if model::save(&back) != bytes {
            return Err(format!("seed {seed}: re-save is not byte-stable"));
        }
        cells += nb.all_cells().len();
    }
    Ok(format!(
        "{ROUND_TRIP_NOTEBOOKS}/{ROUND_TRIP_NOTEBOOKS} notebooks ({cells} cells) equal and byte-stable"
    ))
}

fn cross_reference() -> Result<String, String> {
    let r = run_file("parallel_cross_reference.json")?;
    if r.ok() {
        Ok(format!("{} exact-value checks", r.passed))
    } else {
        Err(r.summary())
    }
}

type Check = fn() -> Result<String, String>;

fn main() -> ExitCode {
    let criteria: [(&str, Option<Duration>, Check); 8] = [
        ("rubric corpus", Some(RUBRIC_LIMIT), rubric),
        ("silent conflict T2/T3", None, silent_conflict),
        ("scope isolation", Some(ISOLATION_LIMIT), isolation),
        ("effect soundness", Some(SOUNDNESS_LIMIT), soundness),
        ("convergence", Some(CONVERGENCE_LIMIT), convergence),
        ("redaction leak scan", None, leak_scan),
        ("file round-trip", None, round_trip),
        ("cross-reference semantics", None, cross_reference),
    ];
    let mut failures = BTreeSet::new();
    for (name, limit, check) in criteria {
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(check).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let elapsed = start.elapsed();
        let outcome = match (outcome, limit) {
            (Ok(_), Some(limit)) if elapsed > limit => Err(format!("took {elapsed:.2?}, limit {limit:?}")),
            (o, _) => o,
        };
        let budget = limit.map(|l| format!(", limit {l:?}")).unwrap_or_default();
        match outcome {
            Ok(detail) => println!("PASS {name}: {detail} [{elapsed:.2?}{budget}]"),
            Err(detail) => {
                println!("FAIL {name}: {detail} [{elapsed:.2?}{budget}]");
                failures.insert(name);
            }
        }
    }
    if failures.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
