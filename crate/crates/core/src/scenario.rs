//! Scripted multi-user sessions with checked expectations.
//!
//! A script names its participants, a starting notebook and fixtures, then
//! lists steps. Each step is one action by one participant followed by the
//! expectations that must hold afterwards. Steps run in order against an
//! in-process [`Session`], so a script always produces the same transcript.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value as Json;
use thiserror::Error;

use crate::codes::ErrorCode;
use crate::kernel::{render_outputs, Fixtures, ScopeRef, Value};
use crate::lang::parse_expr;
use crate::model::{self, CellId, CellKind, Notebook, Output, Position, StructuralEdit, TabId};
use crate::protocol::{ClientOp, EventBody, ExecutionReport, OpBody, ServerEvent};
use crate::session::Session;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioScript {
    pub name: String,
    #[serde(default)]
    pub description: String,
    /// A directory of CSV files (relative to the script) or inline tables.
    #[serde(default)]
    pub fixtures: Option<FixtureSource>,
    /// A notebook file relative to the script. Ignored when `cells` is set.
    #[serde(default)]
    pub notebook: Option<String>,
    /// Top-level cells to start from, given by source; ids are `c1`, `c2`...
    #[serde(default)]
    pub cells: Option<Vec<CellSpec>>,
    pub participants: Vec<Participant>,
    #[serde(default)]
    pub steps: Vec<Step>,
    #[serde(skip)]
    pub base_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FixtureSource {
    Dir(String),
    Inline(std::collections::BTreeMap<String, String>),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CellSpec {
    Code(String),
    Typed { kind: CellKind, source: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Host,
    Collaborator,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Participant {
    pub name: String,
    pub role: Role,
    /// What this participant is scripted to do, for readers.
    #[serde(default)]
    pub script: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Step {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub actor: Option<String>,
    /// An op body, or one of the harness actions `join`, `leave`,
    /// `set_source` and `drain`. Splices may omit `base_version`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub action: Option<Json>,
    /// Leave queued executions waiting instead of running them now.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub hold: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
    #[serde(default, with = "one_or_many")]
    pub expect: Vec<Expectation>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Expectation {
    /// The step's actor got no error.
    Accepted,
    Rejected(ErrorCode),
    /// The cell's rendered outputs, exactly.
    OutputEquals {
        cell: CellId,
        text: String,
    },
    /// A global equals a literal written in the notebook language.
    GlobalEquals {
        name: String,
        value: String,
    },
    GlobalUnchanged(String),
    GlobalAbsent(String),
    /// A name as seen from inside a tab.
    TabEquals {
        group: String,
        tab: TabId,
        name: String,
        value: String,
    },
    PanelContains(String),
    /// An execution in this step failed with this error kind.
    RuntimeError(String),
    SourceEquals {
        cell: CellId,
        text: String,
    },
}

impl fmt::Display for Expectation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&serde_json::to_string(self).expect("expectations serialize"))
    }
}

mod one_or_many {
    use super::Expectation;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Either {
        One(Expectation),
        Many(Vec<Expectation>),
    }

    pub fn serialize<S: Serializer>(v: &Vec<Expectation>, s: S) -> Result<S::Ok, S::Error> {
        v.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Expectation>, D::Error> {
        Ok(match Either::deserialize(d)? {
            Either::One(e) => vec![e],
            Either::Many(v) => v,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("SCRIPT_ERROR{}: {message}", step.map(|s| format!(" at step {s}")).unwrap_or_default())]
pub struct ScriptError {
    pub step: Option<usize>,
    pub message: String,
}

fn script_error(step: Option<usize>, message: impl Into<String>) -> ScriptError {
    ScriptError {
        step,
        message: message.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub expect: Expectation,
    pub passed: bool,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub step: usize,
    pub actor: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
    pub events: Vec<ServerEvent>,
    pub checks: Vec<Check>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub step: usize,
    pub expect: Expectation,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub name: String,
    pub passed: usize,
    pub failed: Vec<Failure>,
    pub transcript: Vec<TranscriptEntry>,
}

impl Report {
    pub fn ok(&self) -> bool {
        self.failed.is_empty()
    }

    /// The transcript as JSON lines.
    pub fn transcript_ndjson(&self) -> String {
        let mut out = String::new();
        for entry in &self.transcript {
            out.push_str(&serde_json::to_string(entry).expect("transcripts serialize"));
            out.push('\n');
        }
        out
    }

    pub fn summary(&self) -> String {
        let mut out = format!("{}: {} passed, {} failed\n", self.name, self.passed, self.failed.len());
        for f in &self.failed {
            out.push_str(&format!("  step {}: {} ({})\n", f.step, f.expect, f.detail));
        }
        out
    }
}

impl ScenarioScript {
    pub fn from_json(text: &str) -> Result<ScenarioScript, ScriptError> {
        let mut de = serde_json::Deserializer::from_str(text);
        let script: ScenarioScript = serde_path_to_error::deserialize(&mut de)
            .map_err(|e| script_error(None, format!("{}: {}", e.path(), e.inner())))?;
        de.end().map_err(|e| script_error(None, e.to_string()))?;
        Ok(script)
    }

    /// Reads a script; relative paths inside it resolve against its folder.
    pub fn load(path: impl AsRef<Path>) -> Result<ScenarioScript, ScriptError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| script_error(None, format!("{}: {e}", path.display())))?;
        let mut script = Self::from_json(&text)?;
        script.base_dir = path.parent().map(Path::to_path_buf);
        Ok(script)
    }

    fn resolve(&self, rel: &str) -> PathBuf {
        match &self.base_dir {
            Some(base) => base.join(rel),
            None => PathBuf::from(rel),
        }
    }

    fn load_fixtures(&self) -> Result<Fixtures, ScriptError> {
        match &self.fixtures {
            None => Ok(Fixtures::default()),
            Some(FixtureSource::Dir(dir)) => {
                Fixtures::load_dir(self.resolve(dir)).map_err(|e| script_error(None, e.to_string()))
            }
            Some(FixtureSource::Inline(tables)) => {
                let mut f = Fixtures::default();
                for (name, csv) in tables {
                    let t = Fixtures::table_from_csv(name, csv).map_err(|e| script_error(None, e.to_string()))?;
                    f.insert(name.clone(), t);
                }
                Ok(f)
            }
        }
    }

    fn initial_notebook(&self) -> Result<Notebook, ScriptError> {
        if let Some(cells) = &self.cells {
            return Ok(notebook_from_cells(cells));
        }
        match &self.notebook {
            Some(rel) => {
                let path = self.resolve(rel);
                let bytes = std::fs::read(&path).map_err(|e| script_error(None, format!("{}: {e}", path.display())))?;
                model::load(&bytes).map_err(|e| script_error(None, e.to_string()))
            }
            None => Ok(Notebook::new()),
        }
    }

    fn validate(&self) -> Result<(), ScriptError> {
        if self.participants.is_empty() {
            return Err(script_error(None, "no participants"));
        }
        for (i, p) in self.participants.iter().enumerate() {
            if self.participants[..i].iter().any(|q| q.name == p.name) {
                return Err(script_error(None, format!("participant {} listed twice", p.name)));
            }
        }
        for (i, step) in self.steps.iter().enumerate() {
            let n = i + 1;
            if let Some(actor) = &step.actor {
                if !self.participants.iter().any(|p| &p.name == actor) {
                    return Err(script_error(Some(n), format!("unknown actor {actor}")));
                }
            }
            if step.action.is_some() && step.actor.is_none() && !is_drain(step.action.as_ref()) {
                return Err(script_error(Some(n), "action without an actor"));
            }
            for e in &step.expect {
                if let Expectation::GlobalEquals { value, .. } | Expectation::TabEquals { value, .. } = e {
                    literal(value).map_err(|m| script_error(Some(n), m))?;
                }
            }
        }
        Ok(())
    }
}

/// Builds a notebook of top-level cells with ids `c1`, `c2`...
pub fn notebook_from_cells(cells: &[CellSpec]) -> Notebook {
    let mut nb = Notebook::new();
    for (i, spec) in cells.iter().enumerate() {
        let (kind, source) = match spec {
            CellSpec::Code(src) => (CellKind::Code, src.as_str()),
            CellSpec::Typed { kind, source } => (*kind, source.as_str()),
        };
        let out = nb
            .apply_edit(&StructuralEdit::InsertCell {
                position: Position::top(i),
                kind,
            })
            .expect("appending a cell always works");
        let id = out.created_cell.expect("insert creates a cell");
        if !source.is_empty() {
            nb.apply_edit(&StructuralEdit::SpliceText {
                id,
                offset: 0,
                delete_len: 0,
                insert_text: source.to_string(),
                base_version: 0,
            })
            .expect("splicing into a new cell always works");
        }
    }
    nb
}

fn is_drain(action: Option<&Json>) -> bool {
    action.and_then(|a| a.get("op")).and_then(Json::as_str) == Some("drain")
}

fn literal(text: &str) -> Result<Value, String> {
    let expr = parse_expr(text).map_err(|e| format!("bad literal {text:?}: {e}"))?;
    Value::from_literal(&expr).map_err(|e| format!("bad literal {text:?}: {e}"))
}

enum Action {
    Op(OpBody),
    Join,
    Leave,
    Drain,
}

/// Turns a step's action template into something runnable, filling in
/// splice versions and expanding `set_source`.
fn instantiate(session: &Session, raw: &Json, step: usize) -> Result<Action, ScriptError> {
    let bad = |m: String| script_error(Some(step), m);
    let op = raw
        .get("op")
        .and_then(Json::as_str)
        .ok_or_else(|| bad("action has no \"op\"".into()))?;
    let nb = &session.state().notebook;
    let version_of = |id: &Json| -> Result<(CellId, &model::Cell), ScriptError> {
        let id: CellId = serde_json::from_value(id.clone()).map_err(|e| bad(e.to_string()))?;
        let cell = nb.cell(&id).ok_or_else(|| bad(format!("no cell {id}")))?;
        Ok((id, cell))
    };
    match op {
        "join" => return Ok(Action::Join),
        "leave" => return Ok(Action::Leave),
        "drain" => return Ok(Action::Drain),
        "set_source" => {
            let (id, cell) = version_of(raw.get("cell").unwrap_or(&Json::Null))?;
            let source = raw
                .get("source")
                .and_then(Json::as_str)
                .ok_or_else(|| bad("set_source needs \"source\"".into()))?;
            return Ok(Action::Op(OpBody::Structural {
                edit: StructuralEdit::SpliceText {
                    id,
                    offset: 0,
                    delete_len: cell.source.chars().count(),
                    insert_text: source.to_string(),
                    base_version: cell.text_version,
                },
            }));
        }
        _ => {}
    }
    let mut raw = raw.clone();
    if op == "structural" {
        if let Some(edit) = raw.get_mut("edit").and_then(Json::as_object_mut) {
            if edit.get("type").and_then(Json::as_str) == Some("splice_text") && !edit.contains_key("base_version") {
                let (_, cell) = version_of(edit.get("id").unwrap_or(&Json::Null))?;
                edit.insert("base_version".into(), cell.text_version.into());
            }
        }
    }
    serde_path_to_error::deserialize(raw)
        .map(Action::Op)
        .map_err(|e| bad(format!("action.{}: {}", e.path(), e.inner())))
}

fn reports(events: &[ServerEvent]) -> Vec<&ExecutionReport> {
    let mut out = Vec::new();
    for ev in events {
        match &ev.body {
            EventBody::ExecutionResult { report, .. } => out.push(report),
            EventBody::RanAndLocked { executed, .. } => out.extend(executed),
            _ => {}
        }
    }
    out
}

struct Ctx<'a> {
    session: &'a Session,
    actor: Option<&'a str>,
    events: &'a [ServerEvent],
    before: &'a std::collections::BTreeMap<String, Value>,
    step: usize,
}

impl Ctx<'_> {
    fn errors(&self) -> Vec<ErrorCode> {
        self.events
            .iter()
            .filter(|e| self.actor.is_none() || e.actor.as_deref() == self.actor)
            .filter_map(|e| e.body.error_code())
            .collect()
    }

    fn cell(&self, id: &CellId) -> Result<&model::Cell, ScriptError> {
        self.session
            .state()
            .notebook
            .cell(id)
            .ok_or_else(|| script_error(Some(self.step), format!("expectation names unknown cell {id}")))
    }

    fn check(&self, e: &Expectation) -> Result<(bool, String), ScriptError> {
        let kernel = &self.session.state().kernel;
        let show = |v: Option<Value>| v.map_or("<unbound>".to_string(), |v| v.repr());
        Ok(match e {
            Expectation::Accepted => {
                let errors = self.errors();
                (errors.is_empty(), format!("errors: {errors:?}"))
            }
            Expectation::Rejected(code) => {
                let errors = self.errors();
                (errors.contains(code), format!("errors: {errors:?}"))
            }
            Expectation::OutputEquals { cell, text } => {
                let got = render_outputs(&self.cell(cell)?.outputs);
                (&got == text, format!("output was {got:?}"))
            }
            Expectation::SourceEquals { cell, text } => {
                let got = &self.cell(cell)?.source;
                (got == text, format!("source was {got:?}"))
            }
            Expectation::GlobalEquals { name, value } => {
                let want = literal(value).map_err(|m| script_error(Some(self.step), m))?;
                let got = kernel.global(name);
                (got.as_ref() == Some(&want), format!("{name} is {}", show(got)))
            }
            Expectation::GlobalUnchanged(name) => {
                let got = kernel.global(name);
                let was = self.before.get(name).cloned();
                (
                    got == was,
                    format!("{name} went from {} to {}", show(was.clone()), show(got.clone())),
                )
            }
            Expectation::GlobalAbsent(name) => {
                let got = kernel.global(name);
                (got.is_none(), format!("{name} is {}", show(got)))
            }
            Expectation::TabEquals {
                group,
                tab,
                name,
                value,
            } => {
                let want = literal(value).map_err(|m| script_error(Some(self.step), m))?;
                let got = kernel.get(&ScopeRef::tab(group.clone(), tab.clone()), name);
                (
                    got.as_ref() == Some(&want),
                    format!("{name} in {group}/{tab} is {}", show(got)),
                )
            }
            Expectation::PanelContains(name) => {
                let panel = self.session.state().panel();
                (
                    panel.iter().any(|p| &p.name == name),
                    format!("panel has {:?}", panel.iter().map(|p| &p.name).collect::<Vec<_>>()),
                )
            }
            Expectation::RuntimeError(kind) => {
                let kinds: Vec<&str> = reports(self.events)
                    .into_iter()
                    .flat_map(|r| &r.outputs)
                    .filter_map(|o| match o {
                        Output::Error { kind, .. } => Some(kind.as_str()),
                        _ => None,
                    })
                    .collect();
                (kinds.contains(&kind.as_str()), format!("runtime errors: {kinds:?}"))
            }
        })
    }
}

/// Runs a script from a fresh session and checks every expectation.
pub fn run_scenario(script: &ScenarioScript) -> Result<Report, ScriptError> {
    script.validate()?;
    let notebook = script.initial_notebook()?;
    let fixtures = script.load_fixtures()?;
    let hosts = script
        .participants
        .iter()
        .filter(|p| p.role == Role::Host)
        .map(|p| p.name.clone())
        .collect();
    let mut session = Session::new(&notebook, fixtures, hosts);
    session.set_clock(|| "1970-01-01T00:00:00.000Z".to_string());
    let mut opening = session.log().to_vec();
    for p in &script.participants {
        let ev = session
            .join(&p.name)
            .map_err(|d| script_error(None, format!("{} cannot join: {}", p.name, d.detail)))?;
        opening.push(ev);
    }
    let mut report = Report {
        name: script.name.clone(),
        passed: 0,
        failed: Vec::new(),
        transcript: vec![TranscriptEntry {
            step: 0,
            actor: None,
            note: Some("session opened".into()),
            events: opening,
            checks: Vec::new(),
        }],
    };
    for (i, step) in script.steps.iter().enumerate() {
        let n = i + 1;
        let before = session.state().kernel.global_values();
        let actor = step.actor.as_deref();
        let mut events = Vec::new();
        if let Some(raw) = &step.action {
            let action = instantiate(&session, raw, n)?;
            let who = || actor.ok_or_else(|| script_error(Some(n), "action without an actor"));
            match action {
                Action::Join => match session.join(who()?) {
                    Ok(ev) => events.push(ev),
                    Err(d) => return Err(script_error(Some(n), format!("join refused: {}", d.code))),
                },
                Action::Leave => events.extend(session.leave(who()?)),
                Action::Drain => {}
                Action::Op(body) => {
                    let op = ClientOp {
                        op_id: format!("{}-{n}", who()?),
                        actor: who()?.to_string(),
                        body,
                    };
                    events.extend(session.submit(&op));
                }
            }
        }
        if !step.hold {
            events.extend(session.drain());
        }
        let ctx = Ctx {
            session: &session,
            actor,
            events: &events,
            before: &before,
            step: n,
        };
        let mut checks = Vec::new();
        for e in &step.expect {
            let (passed, detail) = ctx.check(e)?;
            if passed {
                report.passed += 1;
            } else {
                report.failed.push(Failure {
                    step: n,
                    expect: e.clone(),
                    detail: detail.clone(),
                });
            }
            checks.push(Check {
                expect: e.clone(),
                passed,
                detail: if passed { String::new() } else { detail },
            });
        }
        report.transcript.push(TranscriptEntry {
            step: n,
            actor: step.actor.clone(),
            note: step.note.clone(),
            events,
            checks,
        });
    }
    Ok(report)
}
