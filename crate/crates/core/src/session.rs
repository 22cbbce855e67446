//! A live session: the state machine plus its log and audit trail.

use crate::access::{now_iso8601, AuditEntry, Denial};
use crate::kernel::Fixtures;
use crate::model::{CellId, Notebook, UserId};
use crate::protocol::{
    encode, encode_for, ApplyError, ClientOp, EventBody, Message, OpBody, ServerEvent, SessionState, Welcome,
    DEFAULT_MAX_PARTICIPANTS,
};

type Clock = Box<dyn FnMut() -> String + Send>;

pub struct Session {
    state: SessionState,
    log: Vec<ServerEvent>,
    audit: Vec<AuditEntry>,
    clock: Clock,
}

impl std::fmt::Debug for Session {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Session")
            .field("log_length", &self.log.len())
            .field("online", &self.state.online)
            .finish_non_exhaustive()
    }
}

impl Session {
    pub fn new(notebook: &Notebook, fixtures: Fixtures, hosts: Vec<UserId>) -> Session {
        Self::with_capacity(notebook, fixtures, hosts, DEFAULT_MAX_PARTICIPANTS)
    }

    pub fn with_capacity(notebook: &Notebook, fixtures: Fixtures, hosts: Vec<UserId>, max: usize) -> Session {
        let mut state = SessionState::empty();
        let first = state
            .start(notebook, fixtures, hosts, max)
            .expect("a fresh state accepts its opening event");
        Session {
            state,
            log: vec![first],
            audit: Vec::new(),
            clock: Box::new(now_iso8601),
        }
    }

    /// Rebuilds a session from a log written by another one.
    pub fn from_log(log: Vec<ServerEvent>) -> Result<Session, ApplyError> {
        let state = crate::protocol::replay(&log)?;
        Ok(Session {
            state,
            log,
            audit: Vec::new(),
            clock: Box::new(now_iso8601),
        })
    }

    /// Replaces the wall clock used for audit lines.
    pub fn set_clock(&mut self, clock: impl FnMut() -> String + Send + 'static) {
        self.clock = Box::new(clock);
    }

    pub fn state(&self) -> &SessionState {
        &self.state
    }

    pub fn log(&self) -> &[ServerEvent] {
        &self.log
    }

    pub fn audit(&self) -> &[AuditEntry] {
        &self.audit
    }

    pub fn join(&mut self, user: &str) -> Result<ServerEvent, Denial> {
        let ev = self.state.join(user)?;
        self.log.push(ev.clone());
        Ok(ev)
    }

    pub fn leave(&mut self, user: &str) -> Option<ServerEvent> {
        let ev = self.state.leave(user)?;
        self.log.push(ev.clone());
        Some(ev)
    }

    /// Validates and logs an op. Accepted executions wait in the queue
    /// until [`Session::drain`].
    pub fn submit(&mut self, op: &ClientOp) -> Vec<ServerEvent> {
        let events = self.state.submit(op);
        for ev in &events {
            if let EventBody::Error { .. } = &ev.body {
                let cell = op_cell(&op.body);
                self.record_denial(&op.actor, cell.as_ref(), &ev.body);
            }
        }
        self.log.extend(events.iter().cloned());
        events
    }

    /// Runs every queued execution.
    pub fn drain(&mut self) -> Vec<ServerEvent> {
        let mut out = Vec::new();
        while let Some(front) = self.state.queue.front().cloned() {
            let events = self.state.run_next().expect("queue is not empty");
            for ev in &events {
                match &ev.body {
                    EventBody::ExecutionResult { report, .. } => {
                        let entry = AuditEntry::allow((self.clock)(), &front.actor, &report.cell, &report.effects);
                        self.audit.push(entry);
                    }
                    EventBody::Error { .. } => self.record_denial(&front.actor, Some(&front.cell), &ev.body),
                    _ => {}
                }
            }
            self.log.extend(events.iter().cloned());
            out.extend(events);
        }
        out
    }

    /// [`Session::submit`] followed by [`Session::drain`].
    pub fn handle(&mut self, op: &ClientOp) -> Vec<ServerEvent> {
        let mut events = self.submit(op);
        events.extend(self.drain());
        events
    }

    /// The snapshot frame a newly connected user starts from.
    pub fn welcome(&self, user: &str) -> String {
        encode(&Message::Welcome {
            seq: self.state.log_length,
            welcome: Welcome::for_user(&self.state, user),
        })
    }

    /// `event` as `user` may see it. Only meaningful for events from the
    /// most recent batch, since projection reads the current ACLs.
    pub fn frame_for(&self, event: &ServerEvent, user: &str) -> String {
        encode_for(event, user, &self.state)
    }

    fn record_denial(&mut self, actor: &str, cell: Option<&CellId>, body: &EventBody) {
        if let EventBody::Error {
            code,
            detail,
            names,
            spans,
            ..
        } = body
        {
            let denial = Denial {
                code: *code,
                detail: detail.clone(),
                names: names.clone(),
                spans: spans.clone(),
            };
            let entry = AuditEntry::deny((self.clock)(), actor, cell, &denial);
            self.audit.push(entry);
        }
    }
}

fn op_cell(body: &OpBody) -> Option<CellId> {
    match body {
        OpBody::ExecuteCell { cell } => Some(cell.clone()),
        OpBody::SetCellAcl { cell, .. } => cell.clone(),
        OpBody::Structural { edit } => edit.subject().cloned(),
        OpBody::Presence { cell, .. } => cell.clone(),
        _ => None,
    }
}
