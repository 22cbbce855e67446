//! The sequenced operation log.
//!
//! Clients send [`ClientOp`]s. The server validates each one against the
//! current [`SessionState`] and turns it into one or more [`ServerEvent`]s
//! with gapless sequence numbers. Every event is a deterministic state
//! transition, so any replica that applies the same prefix of the log ends
//! up in the same state, and [`replay`] rebuilds a session from its log.
//!
//! The log stores plaintext. What each user may see is decided when an
//! event is encoded for them ([`encode_for`]).

mod state;
mod wire;

use serde::{Deserialize, Serialize};

use crate::codes::ErrorCode;
use crate::effects::EffectSet;
use crate::kernel::{Fixtures, ScopeRef, VariableInfo};
use crate::lang::SourceSpan;
use crate::model::{AclTarget, CellAcl, CellId, EditOutcome, Output, StructuralEdit, TabId, UserId, VariableAcl};

pub use state::{replay, ApplyError, PresenceInfo, QueuedExecution, SessionState, DEFAULT_MAX_PARTICIPANTS};
pub use wire::{
    decode, encode, encode_for, project_event, to_envelope, DecodeError, Envelope, Message, Welcome, PROTOCOL_VERSION,
    REDACTED_SUMMARY,
};

/// A request from a client.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClientOp {
    pub op_id: String,
    pub actor: UserId,
    pub body: OpBody,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum OpBody {
    Structural {
        edit: StructuralEdit,
    },
    /// `cell: None` changes the template copied into new cells.
    SetCellAcl {
        #[serde(default)]
        cell: Option<CellId>,
        target: AclTarget,
        read: bool,
        edit: bool,
    },
    SetVariableAcl {
        name: String,
        target: AclTarget,
        read: bool,
        write: bool,
    },
    ExecuteCell {
        cell: CellId,
    },
    SyncTab {
        group: String,
        tab: TabId,
    },
    MergeMain {
        group: String,
    },
    RunAndLockAbove {
        index: i64,
    },
    Chat {
        text: String,
    },
    Presence {
        #[serde(default)]
        cell: Option<CellId>,
        #[serde(default)]
        offset: usize,
    },
    RestartKernel,
}

/// A log entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServerEvent {
    pub seq: u64,
    pub actor: Option<UserId>,
    pub op_id: Option<String>,
    pub body: EventBody,
}

/// One row of the variable side panel. In the log the flags are the
/// defaults; each recipient gets their own.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PanelEntry {
    pub name: String,
    pub type_tag: String,
    pub summary: String,
    pub read: bool,
    pub write: bool,
}

impl PanelEntry {
    pub fn from_info(info: VariableInfo, read: bool, write: bool) -> Self {
        PanelEntry {
            name: info.name,
            type_tag: info.type_tag,
            summary: info.summary,
            read,
            write,
        }
    }
}

/// What one execution did, as shipped to clients.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecutionReport {
    pub cell: CellId,
    pub scope: ScopeRef,
    pub exec_count: u64,
    pub outputs: Vec<Output>,
    pub changed: Vec<String>,
    pub effects: EffectSet,
    /// Set on copies sent to users who may not read the cell; outputs,
    /// names and effects are then empty.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub redacted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum EventBody {
    /// Always the first event. `notebook` is in file form.
    SessionStarted {
        notebook: serde_json::Value,
        fixtures: Fixtures,
        /// Users who become hosts when they join. When empty, the first
        /// user to join is the host.
        hosts: Vec<UserId>,
        max_participants: usize,
    },
    Joined {
        user: UserId,
        host: bool,
    },
    Left {
        user: UserId,
    },
    Structural {
        edit: StructuralEdit,
        outcome: EditOutcome,
    },
    CellAclChanged {
        cell: Option<CellId>,
        acl: CellAcl,
        /// The cell after the change, so users who just gained read access
        /// receive its text. Projected per recipient.
        #[serde(default)]
        view: Option<serde_json::Value>,
    },
    VariableAclChanged {
        name: String,
        /// `None` when the variable is back to fully open.
        acl: Option<VariableAcl>,
    },
    ExecutionQueued {
        cell: CellId,
    },
    /// Outcome of the queued execution whose `ExecutionQueued` event had
    /// sequence number `ticket`.
    ExecutionResult {
        ticket: u64,
        report: ExecutionReport,
    },
    RanAndLocked {
        index: i64,
        executed: Vec<ExecutionReport>,
        locked_cells: Vec<CellId>,
        locked_variables: Vec<String>,
        failure: Option<String>,
    },
    TabSynced {
        group: String,
        tab: TabId,
        refreshed: Vec<String>,
    },
    Merged {
        group: String,
        names: Vec<String>,
    },
    KernelRestarted,
    VariablePanel {
        variables: Vec<PanelEntry>,
    },
    Chat {
        text: String,
    },
    Presence {
        cell: Option<CellId>,
        offset: usize,
    },
    /// A rejected op. Only the actor sees the details. `ticket` is set when
    /// a queued execution was refused at dequeue time.
    Error {
        code: ErrorCode,
        detail: String,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        names: Vec<String>,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        spans: Vec<(String, SourceSpan)>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        ticket: Option<u64>,
    },
    /// Wire-only: a text splice on a cell the recipient may not read.
    RedactedSplice {
        id: CellId,
        base_version: u64,
        line_shape: Vec<usize>,
    },
    /// Wire-only: stands in for another user's error so sequence numbers
    /// stay gapless for every recipient.
    Noop,
}

impl EventBody {
    pub fn is_error(&self) -> bool {
        matches!(self, EventBody::Error { .. })
    }

    pub fn error_code(&self) -> Option<ErrorCode> {
        match self {
            EventBody::Error { code, .. } => Some(*code),
            _ => None,
        }
    }
}
