use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use super::{ClientOp, EventBody, ExecutionReport, OpBody, PanelEntry, PresenceInfo, ServerEvent, SessionState};
use crate::access::{can, project_cell, project_notebook, Capability, SessionRoles};
use crate::codes::ErrorCode;
use crate::model::{Notebook, StructuralEdit, UserId};

pub const PROTOCOL_VERSION: u32 = 1;

/// Stands in for a value summary the recipient may not read.
pub const REDACTED_SUMMARY: &str = "•••";

/// The frame every message travels in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    pub v: u32,
    #[serde(rename = "type")]
    pub kind: String,
    pub seq: Option<u64>,
    pub op_id: Option<String>,
    pub actor: Option<String>,
    #[serde(default = "empty_body")]
    pub body: Value,
}

fn empty_body() -> Value {
    json!({})
}

/// The first message a client receives after `hello`: a snapshot as of
/// the envelope's `seq`, already filtered for that user.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Welcome {
    pub user: UserId,
    pub notebook: Value,
    pub hosts: Vec<UserId>,
    pub participants: Vec<UserId>,
    pub presence: BTreeMap<UserId, PresenceInfo>,
    pub variables: Vec<PanelEntry>,
}

impl Welcome {
    pub fn for_user(state: &SessionState, user: &str) -> Welcome {
        Welcome {
            user: user.to_string(),
            notebook: project_notebook(user, &state.notebook, &state.roles),
            hosts: state.roles.hosts.iter().cloned().collect(),
            participants: state.online.iter().cloned().collect(),
            presence: state.presence.clone(),
            variables: annotate_panel(&state.panel(), &state.notebook, user),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Message {
    Hello {
        user: UserId,
    },
    /// `seq` is the log length the snapshot reflects.
    Welcome {
        seq: u64,
        welcome: Welcome,
    },
    Op(ClientOp),
    Event(ServerEvent),
    /// Connection-level failure not tied to a log position.
    Error {
        op_id: Option<String>,
        code: ErrorCode,
        detail: String,
    },
    Ping,
    Pong,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("DECODE_ERROR: {0}")]
pub struct DecodeError(pub String);

impl DecodeError {
    pub fn code(&self) -> ErrorCode {
        ErrorCode::DecodeError
    }
}

#[derive(Serialize, Deserialize)]
struct HelloBody {
    user: UserId,
}

#[derive(Serialize, Deserialize)]
struct ErrorBody {
    code: ErrorCode,
    detail: String,
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("protocol types serialize")
}

pub fn to_envelope(msg: &Message) -> Envelope {
    let frame = |kind: &str, seq, op_id, actor, body| Envelope {
        v: PROTOCOL_VERSION,
        kind: kind.to_string(),
        seq,
        op_id,
        actor,
        body,
    };
    match msg {
        Message::Hello { user } => frame("hello", None, None, None, to_value(&HelloBody { user: user.clone() })),
        Message::Welcome { seq, welcome } => frame(
            "welcome",
            Some(*seq),
            None,
            Some(welcome.user.clone()),
            to_value(welcome),
        ),
        Message::Op(op) => frame(
            "op",
            None,
            Some(op.op_id.clone()),
            Some(op.actor.clone()),
            to_value(&op.body),
        ),
        Message::Event(ev) => {
            let kind = if ev.body.is_error() { "error" } else { "event" };
            frame(
                kind,
                Some(ev.seq),
                ev.op_id.clone(),
                ev.actor.clone(),
                to_value(&ev.body),
            )
        }
        Message::Error { op_id, code, detail } => frame(
            "error",
            None,
            op_id.clone(),
            None,
            to_value(&ErrorBody {
                code: *code,
                detail: detail.clone(),
            }),
        ),
        Message::Ping => frame("ping", None, None, None, empty_body()),
        Message::Pong => frame("pong", None, None, None, empty_body()),
    }
}

/// One frame as a single line of JSON, without the newline.
pub fn encode(msg: &Message) -> String {
    serde_json::to_string(&to_envelope(msg)).expect("envelopes serialize")
}

fn body_as<T: for<'de> Deserialize<'de>>(body: Value) -> Result<T, DecodeError> {
    serde_path_to_error::deserialize(body).map_err(|e| DecodeError(format!("body.{}: {}", e.path(), e.inner())))
}

pub fn decode(bytes: &[u8]) -> Result<Message, DecodeError> {
    let mut de = serde_json::Deserializer::from_slice(bytes);
    let env: Envelope = serde_path_to_error::deserialize(&mut de).map_err(|e| {
        let path = e.path().to_string();
        if path == "." {
            DecodeError(e.inner().to_string())
        } else {
            DecodeError(format!("{path}: {}", e.inner()))
        }
    })?;
    de.end().map_err(|e| DecodeError(e.to_string()))?;
    if env.v != PROTOCOL_VERSION {
        return Err(DecodeError(format!("unsupported protocol version {}", env.v)));
    }
    let need_seq = || {
        env.seq
            .ok_or_else(|| DecodeError(format!("{} frame without seq", env.kind)))
    };
    match env.kind.as_str() {
        "hello" => {
            let b: HelloBody = body_as(env.body)?;
            Ok(Message::Hello { user: b.user })
        }
        "welcome" => {
            let seq = need_seq()?;
            Ok(Message::Welcome {
                seq,
                welcome: body_as(env.body)?,
            })
        }
        "op" => {
            let op_id = env.op_id.ok_or_else(|| DecodeError("op frame without op_id".into()))?;
            let actor = env.actor.ok_or_else(|| DecodeError("op frame without actor".into()))?;
            let body: OpBody = body_as(env.body)?;
            Ok(Message::Op(ClientOp { op_id, actor, body }))
        }
        "event" | "error" if env.seq.is_some() => {
            let body: EventBody = body_as(env.body)?;
            if (env.kind == "error") != body.is_error() {
                return Err(DecodeError(format!("{} frame with a mismatched body", env.kind)));
            }
            Ok(Message::Event(ServerEvent {
                seq: need_seq()?,
                actor: env.actor,
                op_id: env.op_id,
                body,
            }))
        }
        "event" => Err(DecodeError("event frame without seq".into())),
        "error" => {
            let b: ErrorBody = body_as(env.body)?;
            Ok(Message::Error {
                op_id: env.op_id,
                code: b.code,
                detail: b.detail,
            })
        }
        "ping" => Ok(Message::Ping),
        "pong" => Ok(Message::Pong),
        other => Err(DecodeError(format!("unknown frame type {other:?}"))),
    }
}

/// What `recipient` may see of `event`. `state` must be the session right
/// after the event was applied.
pub fn project_event(event: &ServerEvent, recipient: &str, state: &SessionState) -> ServerEvent {
    let nb = &state.notebook;
    let roles = &state.roles;
    let body = match &event.body {
        EventBody::Error { .. } if event.actor.as_deref() != Some(recipient) => EventBody::Noop,
        EventBody::SessionStarted {
            notebook,
            fixtures,
            hosts,
            max_participants,
        } => {
            // Before anyone joins nobody is a host, so the file's own ACLs
            // decide.
            let projected = Notebook::from_json_value(notebook.clone())
                .map(|nb| project_notebook(recipient, &nb, &SessionRoles::default()))
                .unwrap_or(Value::Null);
            EventBody::SessionStarted {
                notebook: projected,
                fixtures: fixtures.clone(),
                hosts: hosts.clone(),
                max_participants: *max_participants,
            }
        }
        EventBody::Structural {
            edit: StructuralEdit::SpliceText { id, base_version, .. },
            ..
        } => match nb.cell(id) {
            Some(cell) if !can(recipient, cell, Capability::ReadCell, roles) => EventBody::RedactedSplice {
                id: id.clone(),
                base_version: *base_version,
                line_shape: cell.line_shape(),
            },
            _ => event.body.clone(),
        },
        EventBody::CellAclChanged { cell, acl, view } => EventBody::CellAclChanged {
            cell: cell.clone(),
            acl: acl.clone(),
            view: match (cell, view) {
                (Some(id), Some(_)) => nb.cell(id).map(|c| project_cell(recipient, c, roles)),
                _ => None,
            },
        },
        EventBody::ExecutionResult { ticket, report } => EventBody::ExecutionResult {
            ticket: *ticket,
            report: project_report(report, recipient, state),
        },
        EventBody::RanAndLocked {
            index,
            executed,
            locked_cells,
            locked_variables,
            failure,
        } => EventBody::RanAndLocked {
            index: *index,
            executed: executed.iter().map(|r| project_report(r, recipient, state)).collect(),
            locked_cells: locked_cells.clone(),
            locked_variables: locked_variables.clone(),
            failure: failure.clone(),
        },
        EventBody::VariablePanel { variables } => EventBody::VariablePanel {
            variables: annotate_panel(variables, nb, recipient),
        },
        other => other.clone(),
    };
    ServerEvent {
        seq: event.seq,
        actor: event.actor.clone(),
        op_id: event.op_id.clone(),
        body,
    }
}

/// [`project_event`] encoded as a frame.
pub fn encode_for(event: &ServerEvent, recipient: &str, state: &SessionState) -> String {
    encode(&Message::Event(project_event(event, recipient, state)))
}

fn project_report(report: &ExecutionReport, recipient: &str, state: &SessionState) -> ExecutionReport {
    let readable = state
        .notebook
        .cell(&report.cell)
        .is_some_and(|c| can(recipient, c, Capability::ReadCell, &state.roles));
    if readable {
        return report.clone();
    }
    ExecutionReport {
        cell: report.cell.clone(),
        scope: report.scope.clone(),
        exec_count: report.exec_count,
        outputs: Vec::new(),
        changed: Vec::new(),
        effects: Default::default(),
        redacted: true,
    }
}

fn annotate_panel(entries: &[PanelEntry], nb: &Notebook, user: &str) -> Vec<PanelEntry> {
    entries
        .iter()
        .map(|e| {
            let perm = nb.variable_acl.effective(&e.name, user);
            PanelEntry {
                name: e.name.clone(),
                type_tag: e.type_tag.clone(),
                summary: if perm.read {
                    e.summary.clone()
                } else {
                    REDACTED_SUMMARY.to_string()
                },
                read: perm.read,
                write: perm.write,
            }
        })
        .collect()
}
