use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{ClientOp, EventBody, ExecutionReport, OpBody, PanelEntry, ServerEvent};
use crate::access::{
    self, can, cell_acl_after, gate_execution, gate_merge, variable_acl_after, Capability, Denial, SessionRoles,
};
use crate::codes::ErrorCode;
use crate::effects::EffectSet;
use crate::kernel::{ExecResult, Fixtures, Kernel, ScopeRef};
use crate::model::{Cell, CellId, CellKind, Notebook, StructuralEdit, TabId, UserId};

pub const DEFAULT_MAX_PARTICIPANTS: usize = 32;

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PresenceInfo {
    pub cell: Option<CellId>,
    pub offset: usize,
}

/// An accepted execution request waiting for the kernel.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueuedExecution {
    /// Sequence number of the `ExecutionQueued` event.
    pub ticket: u64,
    pub actor: UserId,
    pub op_id: Option<String>,
    pub cell: CellId,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ApplyError {
    #[error("expected event {expected}, got {got}")]
    Gap { expected: u64, got: u64 },
    #[error("event {seq} cannot be applied: {detail}")]
    Invalid { seq: u64, detail: String },
    #[error("event {seq} does not match what the session computes")]
    Diverged { seq: u64 },
}

impl ApplyError {
    pub fn code(&self) -> ErrorCode {
        match self {
            ApplyError::Gap { .. } => ErrorCode::SequenceGap,
            _ => ErrorCode::DecodeError,
        }
    }
}

/// Everything a replica knows. Two replicas that applied the same events
/// compare equal.
#[derive(Debug, Clone)]
pub struct SessionState {
    pub notebook: Notebook,
    pub kernel: Kernel,
    pub roles: SessionRoles,
    pub online: BTreeSet<UserId>,
    pub presence: BTreeMap<UserId, PresenceInfo>,
    pub queue: VecDeque<QueuedExecution>,
    pub log_length: u64,
    pub configured_hosts: Vec<UserId>,
    pub max_participants: usize,
    started: bool,
}

impl PartialEq for SessionState {
    fn eq(&self, other: &Self) -> bool {
        self.notebook == other.notebook
            && self.roles == other.roles
            && self.online == other.online
            && self.presence == other.presence
            && self.queue == other.queue
            && self.log_length == other.log_length
            && self.configured_hosts == other.configured_hosts
            && self.max_participants == other.max_participants
            && self.started == other.started
            && self.kernel.fixtures() == other.kernel.fixtures()
            && self.kernel.snapshot() == other.kernel.snapshot()
    }
}

impl Default for SessionState {
    fn default() -> Self {
        Self::empty()
    }
}

type Step = Result<EventBody, Denial>;

impl SessionState {
    /// The state before any event.
    pub fn empty() -> Self {
        SessionState {
            notebook: Notebook::new(),
            kernel: Kernel::new(),
            roles: SessionRoles::default(),
            online: BTreeSet::new(),
            presence: BTreeMap::new(),
            queue: VecDeque::new(),
            log_length: 0,
            configured_hosts: Vec::new(),
            max_participants: DEFAULT_MAX_PARTICIPANTS,
            started: false,
        }
    }

    pub fn is_started(&self) -> bool {
        self.started
    }

    /// Emits the opening event of a session.
    pub fn start(
        &mut self,
        notebook: &Notebook,
        fixtures: Fixtures,
        hosts: Vec<UserId>,
        max_participants: usize,
    ) -> Result<ServerEvent, Denial> {
        if self.started {
            return Err(Denial::new(ErrorCode::DuplicateUser, "session already started"));
        }
        let body = EventBody::SessionStarted {
            notebook: notebook.to_json_value(),
            fixtures,
            hosts,
            max_participants,
        };
        self.emit(None, None, body)
    }

    pub fn join(&mut self, user: &str) -> Result<ServerEvent, Denial> {
        if !self.started {
            return Err(Denial::new(ErrorCode::UnknownSession, "session not started"));
        }
        if self.online.contains(user) {
            return Err(Denial::new(
                ErrorCode::DuplicateUser,
                format!("{user} is already connected"),
            ));
        }
        if self.online.len() >= self.max_participants {
            return Err(Denial::new(ErrorCode::SessionFull, "session is full"));
        }
        if user.is_empty() {
            return Err(Denial::new(ErrorCode::InvalidName, "empty user id"));
        }
        let host = self.roles.is_host(user)
            || self.configured_hosts.iter().any(|h| h == user)
            || (self.configured_hosts.is_empty() && self.roles.hosts.is_empty());
        let body = EventBody::Joined {
            user: user.to_string(),
            host,
        };
        self.emit(Some(user), None, body)
    }

    /// Returns `None` when the user was not connected.
    pub fn leave(&mut self, user: &str) -> Option<ServerEvent> {
        if !self.online.contains(user) {
            return None;
        }
        let body = EventBody::Left { user: user.to_string() };
        self.emit(Some(user), None, body).ok()
    }

    /// Validates an op and appends its events. A refused op yields exactly
    /// one `Error` event addressed to its actor.
    pub fn submit(&mut self, op: &ClientOp) -> Vec<ServerEvent> {
        let actor = op.actor.as_str();
        let op_id = Some(op.op_id.as_str());
        let plan = match self.plan(op) {
            Ok(plan) => plan,
            Err(denial) => return vec![self.error_event(actor, op_id, denial, None)],
        };
        let mut events = Vec::new();
        for (i, body) in plan.into_iter().enumerate() {
            match self.emit(Some(actor), op_id, body) {
                Ok(ev) => events.push(ev),
                // Only the first planned step can fail; later ones are
                // panel refreshes.
                Err(denial) => {
                    debug_assert_eq!(i, 0);
                    events.push(self.error_event(actor, op_id, denial, None));
                    break;
                }
            }
        }
        events
    }

    /// Runs the oldest queued execution, re-checking permissions against
    /// the current state. `None` when the queue is empty.
    pub fn run_next(&mut self) -> Option<Vec<ServerEvent>> {
        let q = self.queue.front()?.clone();
        let actor = Some(q.actor.as_str());
        let op_id = q.op_id.as_deref();
        if let Err(denial) = gate_execution(&self.notebook, &self.kernel, &q.actor, &q.cell, &self.roles) {
            return Some(vec![self.error_event(&q.actor, op_id, denial, Some(q.ticket))]);
        }
        let placeholder = EventBody::ExecutionResult {
            ticket: q.ticket,
            report: ExecutionReport {
                cell: q.cell.clone(),
                scope: ScopeRef::Global,
                exec_count: 0,
                outputs: Vec::new(),
                changed: Vec::new(),
                effects: EffectSet::default(),
                redacted: false,
            },
        };
        let ev = self.emit(actor, op_id, placeholder).expect("gate passed");
        let mut events = vec![ev];
        if let EventBody::ExecutionResult { report, .. } = &events[0].body {
            if report.scope == ScopeRef::Global && !report.changed.is_empty() {
                events.push(self.panel_event(actor, op_id));
            }
        }
        Some(events)
    }

    /// Applies a logged event. The event must be next in sequence and must
    /// be exactly what this state computes for it.
    pub fn apply_event(&mut self, event: &ServerEvent) -> Result<(), ApplyError> {
        let expected = self.log_length + 1;
        if event.seq != expected {
            return Err(ApplyError::Gap {
                expected,
                got: event.seq,
            });
        }
        let filled = self
            .perform(event.actor.as_deref(), event.op_id.as_deref(), &event.body)
            .map_err(|d| ApplyError::Invalid {
                seq: event.seq,
                detail: format!("{}: {}", d.code, d.detail),
            })?;
        self.log_length = expected;
        if filled != event.body {
            return Err(ApplyError::Diverged { seq: event.seq });
        }
        Ok(())
    }

    /// The variable panel with default flags.
    pub fn panel(&self) -> Vec<PanelEntry> {
        self.kernel
            .list_variables(&ScopeRef::Global)
            .unwrap_or_default()
            .into_iter()
            .map(|info| {
                let (read, write) = self
                    .notebook
                    .variable_acl
                    .get(&info.name)
                    .map_or((true, true), |acl| (acl.default_read, acl.default_write));
                PanelEntry::from_info(info, read, write)
            })
            .collect()
    }

    fn emit(&mut self, actor: Option<&str>, op_id: Option<&str>, body: EventBody) -> Result<ServerEvent, Denial> {
        let body = self.perform(actor, op_id, &body)?;
        self.log_length += 1;
        Ok(ServerEvent {
            seq: self.log_length,
            actor: actor.map(str::to_string),
            op_id: op_id.map(str::to_string),
            body,
        })
    }

    fn error_event(&mut self, actor: &str, op_id: Option<&str>, d: Denial, ticket: Option<u64>) -> ServerEvent {
        let body = EventBody::Error {
            code: d.code,
            detail: d.detail,
            names: d.names,
            spans: d.spans,
            ticket,
        };
        self.emit(Some(actor), op_id, body).expect("error events always apply")
    }

    fn panel_event(&mut self, actor: Option<&str>, op_id: Option<&str>) -> ServerEvent {
        let body = EventBody::VariablePanel { variables: Vec::new() };
        self.emit(actor, op_id, body).expect("panel events always apply")
    }

    /// Checks an op and lists the events it becomes. Results inside the
    /// bodies are placeholders that [`Self::perform`] fills in.
    fn plan(&self, op: &ClientOp) -> Result<Vec<EventBody>, Denial> {
        let actor = op.actor.as_str();
        if !self.started {
            return Err(Denial::new(ErrorCode::UnknownSession, "session not started"));
        }
        if !self.roles.is_participant(actor) {
            return Err(Denial::new(ErrorCode::UnknownId, format!("unknown user {actor}")));
        }
        let nb = &self.notebook;
        let panel = || EventBody::VariablePanel { variables: Vec::new() };
        let host_only = |what: &str| {
            if self.roles.is_host(actor) {
                Ok(())
            } else {
                Err(Denial::new(
                    ErrorCode::PermissionDeniedAcl,
                    format!("only hosts may {what}"),
                ))
            }
        };
        let plan = match &op.body {
            OpBody::Structural { edit } => {
                for id in cells_touched(nb, edit) {
                    let cell = nb.cell(&id).expect("listed cells exist");
                    if matches!(edit, StructuralEdit::SpliceText { .. })
                        && !can(actor, cell, Capability::ReadCell, &self.roles)
                    {
                        return Err(Denial::new(
                            ErrorCode::PermissionDeniedCellRead,
                            format!("{actor} may not read {id}"),
                        ));
                    }
                    if !can(actor, cell, Capability::EditCell, &self.roles) {
                        return Err(Denial::new(
                            ErrorCode::PermissionDeniedCellEdit,
                            format!("{actor} may not edit {id}"),
                        ));
                    }
                }
                vec![EventBody::Structural {
                    edit: edit.clone(),
                    outcome: Default::default(),
                }]
            }
            OpBody::SetCellAcl {
                cell,
                target,
                read,
                edit,
            } => {
                let acl = cell_acl_after(nb, actor, cell.as_ref(), target, *read, *edit, &self.roles)?;
                vec![EventBody::CellAclChanged {
                    cell: cell.clone(),
                    acl,
                    view: None,
                }]
            }
            OpBody::SetVariableAcl {
                name,
                target,
                read,
                write,
            } => {
                let acl = variable_acl_after(&nb.variable_acl, actor, name, target, *read, *write, &self.roles)?;
                vec![
                    EventBody::VariableAclChanged {
                        name: name.clone(),
                        acl,
                    },
                    panel(),
                ]
            }
            OpBody::ExecuteCell { cell } => {
                let c = nb
                    .cell(cell)
                    .ok_or_else(|| Denial::new(ErrorCode::UnknownId, format!("no cell {cell}")))?;
                if c.kind != CellKind::Code {
                    return Err(Denial::new(
                        ErrorCode::InvalidKind,
                        format!("{cell} is not a code cell"),
                    ));
                }
                if !can(actor, c, Capability::ReadCell, &self.roles) {
                    return Err(Denial::new(
                        ErrorCode::PermissionDeniedCellRead,
                        format!("{actor} may not read {cell}"),
                    ));
                }
                if !can(actor, c, Capability::Execute, &self.roles) {
                    return Err(Denial::new(
                        ErrorCode::PermissionDeniedCellEdit,
                        format!("{actor} may not edit {cell}"),
                    ));
                }
                vec![EventBody::ExecutionQueued { cell: cell.clone() }]
            }
            OpBody::SyncTab { group, tab } => {
                if !self.kernel.has_tab(group, tab) {
                    return Err(Denial::new(ErrorCode::UnknownId, format!("no tab {tab} in {group}")));
                }
                vec![EventBody::TabSynced {
                    group: group.clone(),
                    tab: tab.clone(),
                    refreshed: Vec::new(),
                }]
            }
            OpBody::MergeMain { group } => {
                gate_merge(nb, &self.kernel, actor, group)?;
                vec![
                    EventBody::Merged {
                        group: group.clone(),
                        names: Vec::new(),
                    },
                    panel(),
                ]
            }
            OpBody::RunAndLockAbove { index } => {
                host_only("run and lock")?;
                if *index < -1 || *index >= nb.cells.len() as i64 {
                    return Err(Denial::new(
                        ErrorCode::InvalidRange,
                        format!("no top-level cell at index {index}"),
                    ));
                }
                vec![
                    EventBody::RanAndLocked {
                        index: *index,
                        executed: Vec::new(),
                        locked_cells: Vec::new(),
                        locked_variables: Vec::new(),
                        failure: None,
                    },
                    panel(),
                ]
            }
            OpBody::Chat { text } => vec![EventBody::Chat { text: text.clone() }],
            OpBody::Presence { cell, offset } => {
                if let Some(id) = cell.as_ref().filter(|id| nb.cell(id).is_none()) {
                    return Err(Denial::new(ErrorCode::UnknownId, format!("no cell {id}")));
                }
                vec![EventBody::Presence {
                    cell: cell.clone(),
                    offset: *offset,
                }]
            }
            OpBody::RestartKernel => {
                host_only("restart the kernel")?;
                vec![EventBody::KernelRestarted, panel()]
            }
        };
        Ok(plan)
    }

    /// The state transition for one event. Returns the body with every
    /// computed field filled in.
    fn perform(&mut self, actor: Option<&str>, op_id: Option<&str>, body: &EventBody) -> Step {
        if !self.started && !matches!(body, EventBody::SessionStarted { .. }) {
            return Err(Denial::new(ErrorCode::UnknownSession, "session not started"));
        }
        let need_actor = || actor.ok_or_else(|| Denial::new(ErrorCode::UnknownId, "event has no actor"));
        match body {
            EventBody::SessionStarted {
                notebook,
                fixtures,
                hosts,
                max_participants,
            } => {
                if self.started {
                    return Err(Denial::new(ErrorCode::SequenceGap, "session already started"));
                }
                let nb = Notebook::from_json_value(notebook.clone())
                    .map_err(|e| Denial::new(ErrorCode::DecodeError, e.to_string()))?;
                let mut kernel = Kernel::with_fixtures(fixtures.clone());
                mirror_structure(&nb, &mut kernel);
                self.notebook = nb;
                self.kernel = kernel;
                self.configured_hosts = hosts.clone();
                self.max_participants = *max_participants;
                self.started = true;
                Ok(body.clone())
            }
            EventBody::Joined { user, host } => {
                if *host {
                    self.roles.collaborators.remove(user);
                    self.roles.hosts.insert(user.clone());
                } else if !self.roles.is_host(user) {
                    self.roles.collaborators.insert(user.clone());
                }
                self.online.insert(user.clone());
                Ok(body.clone())
            }
            EventBody::Left { user } => {
                self.online.remove(user);
                self.presence.remove(user);
                Ok(body.clone())
            }
            EventBody::Structural { edit, .. } => {
                let outcome = self
                    .notebook
                    .apply_edit(edit)
                    .map_err(|e| Denial::new(ErrorCode::from(e), format!("structural edit refused: {e}")))?;
                mirror_structure(&self.notebook, &mut self.kernel);
                self.forget_missing_presence();
                Ok(EventBody::Structural {
                    edit: edit.clone(),
                    outcome,
                })
            }
            EventBody::CellAclChanged { cell, acl, .. } => {
                let view = match cell {
                    None => {
                        self.notebook.default_cell_acl = acl.clone();
                        None
                    }
                    Some(id) => {
                        let c = self
                            .notebook
                            .cell_mut(id)
                            .ok_or_else(|| Denial::new(ErrorCode::UnknownId, format!("no cell {id}")))?;
                        c.acl = acl.clone();
                        Some(c.to_json_value())
                    }
                };
                Ok(EventBody::CellAclChanged {
                    cell: cell.clone(),
                    acl: acl.clone(),
                    view,
                })
            }
            EventBody::VariableAclChanged { name, acl } => {
                let table = &mut self.notebook.variable_acl.per_variable;
                match acl {
                    Some(acl) => table.insert(name.clone(), acl.clone()),
                    None => table.remove(name),
                };
                Ok(body.clone())
            }
            EventBody::ExecutionQueued { .. } => {
                let EventBody::ExecutionQueued { cell } = body else {
                    unreachable!()
                };
                self.queue.push_back(QueuedExecution {
                    ticket: self.log_length + 1,
                    actor: need_actor()?.to_string(),
                    op_id: op_id.map(str::to_string),
                    cell: cell.clone(),
                });
                Ok(body.clone())
            }
            EventBody::ExecutionResult { ticket, .. } => {
                let q = self.pop_ticket(*ticket)?;
                let grant = gate_execution(&self.notebook, &self.kernel, &q.actor, &q.cell, &self.roles)?;
                let result = access::run_cell(&mut self.notebook, &mut self.kernel, &q.cell, &grant);
                let report = report_for(&self.notebook, &q.cell, grant.scope, grant.effects, result);
                Ok(EventBody::ExecutionResult {
                    ticket: *ticket,
                    report,
                })
            }
            EventBody::RanAndLocked { index, .. } => {
                let actor = need_actor()?;
                let lock =
                    access::run_and_lock_above(&mut self.notebook, &mut self.kernel, actor, *index, &self.roles)?;
                let executed = lock
                    .executed
                    .into_iter()
                    .map(|run| {
                        let scope = ScopeRef::Global;
                        report_for(&self.notebook, &run.cell, scope, run.effects, run.result)
                    })
                    .collect();
                Ok(EventBody::RanAndLocked {
                    index: *index,
                    executed,
                    locked_cells: lock.locked_cells,
                    locked_variables: lock.locked_variables,
                    failure: lock.failure.map(|(cell, why)| format!("{cell}: {why}")),
                })
            }
            EventBody::TabSynced { group, tab, .. } => {
                let refreshed = self
                    .kernel
                    .sync_tab(group, tab)
                    .map_err(|e| Denial::new(ErrorCode::UnknownId, e.message))?;
                Ok(EventBody::TabSynced {
                    group: group.clone(),
                    tab: tab.clone(),
                    refreshed: refreshed.into_iter().collect(),
                })
            }
            EventBody::Merged { group, .. } => {
                let actor = need_actor()?;
                gate_merge(&self.notebook, &self.kernel, actor, group)?;
                let names = self
                    .kernel
                    .merge_main_tab(group)
                    .map_err(|e| Denial::new(ErrorCode::NoMainTab, e.message))?;
                Ok(EventBody::Merged {
                    group: group.clone(),
                    names: names.into_iter().collect(),
                })
            }
            EventBody::KernelRestarted => {
                self.kernel.restart();
                clear_outputs(&mut self.notebook.cells);
                mirror_structure(&self.notebook, &mut self.kernel);
                Ok(EventBody::KernelRestarted)
            }
            EventBody::VariablePanel { .. } => Ok(EventBody::VariablePanel {
                variables: self.panel(),
            }),
            EventBody::Chat { .. } => Ok(body.clone()),
            EventBody::Presence { cell, offset } => {
                let actor = need_actor()?;
                self.presence.insert(
                    actor.to_string(),
                    PresenceInfo {
                        cell: cell.clone(),
                        offset: *offset,
                    },
                );
                Ok(body.clone())
            }
            EventBody::Error { ticket, .. } => {
                if let Some(t) = ticket {
                    self.pop_ticket(*t)?;
                }
                Ok(body.clone())
            }
            EventBody::RedactedSplice { .. } | EventBody::Noop => {
                Err(Denial::new(ErrorCode::DecodeError, "wire-only event in the log"))
            }
        }
    }

    fn pop_ticket(&mut self, ticket: u64) -> Result<QueuedExecution, Denial> {
        match self.queue.front() {
            Some(q) if q.ticket == ticket => Ok(self.queue.pop_front().expect("front exists")),
            _ => Err(Denial::new(
                ErrorCode::SequenceGap,
                format!("execution {ticket} is not next in the queue"),
            )),
        }
    }

    fn forget_missing_presence(&mut self) {
        let nb = &self.notebook;
        for info in self.presence.values_mut() {
            if info.cell.as_ref().is_some_and(|id| nb.cell(id).is_none()) {
                *info = PresenceInfo::default();
            }
        }
    }
}

/// Rebuilds a session from its log.
pub fn replay(events: &[ServerEvent]) -> Result<SessionState, ApplyError> {
    let mut state = SessionState::empty();
    for ev in events {
        state.apply_event(ev)?;
    }
    Ok(state)
}

fn report_for(
    nb: &Notebook,
    cell: &CellId,
    scope: ScopeRef,
    effects: EffectSet,
    result: ExecResult,
) -> ExecutionReport {
    ExecutionReport {
        cell: cell.clone(),
        scope,
        exec_count: nb.cell(cell).map_or(0, |c| c.exec_count),
        outputs: result.outputs,
        changed: result.changed.into_iter().collect(),
        effects,
        redacted: false,
    }
}

/// Cells whose edit permission an edit needs: its subject plus every cell
/// it would remove from the notebook.
fn cells_touched(nb: &Notebook, edit: &StructuralEdit) -> Vec<CellId> {
    let Some(subject) = edit.subject() else {
        return Vec::new();
    };
    let Some(cell) = nb.cell(subject) else {
        return Vec::new();
    };
    let mut out = vec![subject.clone()];
    let inner = |tabs: &mut dyn Iterator<Item = &crate::model::Tab>, out: &mut Vec<CellId>| {
        for tab in tabs {
            out.extend(tab.cells.iter().map(|c| c.id.clone()));
        }
    };
    match (edit, &cell.group) {
        (StructuralEdit::DeleteCell { .. }, Some(g)) => inner(&mut g.tabs.iter(), &mut out),
        (StructuralEdit::RemoveTab { tab_id, .. }, Some(g)) => {
            inner(&mut g.tabs.iter().filter(|t| &t.id == tab_id), &mut out)
        }
        (StructuralEdit::Unindent { .. }, Some(g)) => {
            // Only the main tab's cells survive an unindent.
            let main = g.main_tab.clone();
            inner(&mut g.tabs.iter().filter(|t| Some(&t.id) != main.as_ref()), &mut out)
        }
        _ => {}
    }
    out
}

fn clear_outputs(cells: &mut [Cell]) {
    for cell in cells {
        cell.outputs.clear();
        if let Some(g) = &mut cell.group {
            for tab in &mut g.tabs {
                clear_outputs(&mut tab.cells);
            }
        }
    }
}

/// Makes the kernel's groups and tab environments match the notebook.
/// Idempotent; new tab environments start from the current global.
pub(crate) fn mirror_structure(nb: &Notebook, kernel: &mut Kernel) {
    let mut wanted: BTreeMap<String, (Vec<TabId>, Option<TabId>)> = BTreeMap::new();
    let mut order = Vec::new();
    for cell in &nb.cells {
        if let Some(g) = &cell.group {
            order.push(g.name.clone());
            wanted.insert(
                g.name.clone(),
                (g.tabs.iter().map(|t| t.id.clone()).collect(), g.main_tab.clone()),
            );
        }
    }
    for name in kernel.group_names() {
        if !wanted.contains_key(&name) {
            kernel.unregister_group(&name);
        }
    }
    for name in order {
        let (tabs, main) = &wanted[&name];
        kernel.register_group(&name);
        for existing in kernel.tab_ids(&name) {
            if !tabs.contains(&existing) {
                kernel.drop_tab_env(&name, &existing);
            }
        }
        for tab in tabs {
            if !kernel.has_tab(&name, tab) {
                kernel.create_tab_env(&name, tab).expect("group was registered");
            }
        }
        kernel.set_main_tab(&name, main.clone()).expect("group was registered");
    }
}
