//! The per-session event loop. It owns the [`Session`] and therefore the
//! kernel; connections talk to it over a channel and get encoded frames
//! back on their own outboxes.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};

use nbcollab::codes::ErrorCode;
use nbcollab::protocol::{encode, ClientOp, Message, ServerEvent};
use nbcollab::session::Session;
use tokio::sync::{mpsc, oneshot};

/// What a connection's writer should do next.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Outgoing {
    Frame(String),
    Close,
}

pub type Outbox = mpsc::UnboundedSender<Outgoing>;

pub type ConnId = u64;

#[derive(Debug)]
enum Command {
    Connect {
        user: String,
        outbox: Outbox,
        reply: oneshot::Sender<Result<ConnId, (ErrorCode, String)>>,
    },
    Op {
        conn: ConnId,
        op: ClientOp,
    },
    Disconnect {
        conn: ConnId,
    },
}

/// Cheap handle to a running hub.
#[derive(Debug, Clone)]
pub struct HubHandle {
    tx: mpsc::UnboundedSender<Command>,
}

impl HubHandle {
    /// Joins `user`. On success the welcome frame is already queued on
    /// `outbox`.
    pub async fn connect(&self, user: String, outbox: Outbox) -> Result<ConnId, (ErrorCode, String)> {
        let (reply, rx) = oneshot::channel();
        let gone = || (ErrorCode::UnknownSession, "session is shutting down".to_string());
        self.tx
            .send(Command::Connect { user, outbox, reply })
            .map_err(|_| gone())?;
        rx.await.map_err(|_| gone())?
    }

    pub fn op(&self, conn: ConnId, op: ClientOp) {
        let _ = self.tx.send(Command::Op { conn, op });
    }

    pub fn disconnect(&self, conn: ConnId) {
        let _ = self.tx.send(Command::Disconnect { conn });
    }
}

struct Conn {
    user: String,
    outbox: Outbox,
}

struct Hub {
    session: Session,
    conns: BTreeMap<ConnId, Conn>,
    next_conn: ConnId,
    log: Option<BufWriter<File>>,
}

/// Starts the loop on its own thread. Events already in `session` are
/// assumed to be on disk; new ones are appended to `log`.
pub fn spawn(session: Session, log: Option<File>) -> HubHandle {
    let (tx, mut rx) = mpsc::unbounded_channel();
    let mut hub = Hub {
        session,
        conns: BTreeMap::new(),
        next_conn: 1,
        log: log.map(BufWriter::new),
    };
    std::thread::Builder::new()
        .name("session".into())
        .spawn(move || {
            while let Some(cmd) = rx.blocking_recv() {
                hub.handle(cmd);
            }
        })
        .expect("spawning the session thread");
    HubHandle { tx }
}

impl Hub {
    fn handle(&mut self, cmd: Command) {
        match cmd {
            Command::Connect { user, outbox, reply } => {
                let result = self.connect(user, outbox);
                let _ = reply.send(result);
            }
            Command::Op { conn, op } => self.op(conn, op),
            Command::Disconnect { conn } => {
                if let Some(c) = self.conns.remove(&conn) {
                    let ev = self.session.leave(&c.user);
                    self.publish(ev.into_iter().collect());
                }
            }
        }
    }

    fn connect(&mut self, user: String, outbox: Outbox) -> Result<ConnId, (ErrorCode, String)> {
        let ev = self.session.join(&user).map_err(|d| (d.code, d.detail))?;
        tracing::info!(%user, seq = ev.seq, "joined");
        // Everyone else hears about the join; the newcomer's welcome
        // already reflects it.
        self.publish(vec![ev]);
        let id = self.next_conn;
        self.next_conn += 1;
        let _ = outbox.send(Outgoing::Frame(self.session.welcome(&user)));
        self.conns.insert(id, Conn { user, outbox });
        Ok(id)
    }

    fn op(&mut self, conn: ConnId, op: ClientOp) {
        let Some(c) = self.conns.get(&conn) else {
            return;
        };
        if c.user != op.actor {
            let frame = encode(&Message::Error {
                op_id: Some(op.op_id),
                code: ErrorCode::UnknownId,
                detail: "actor does not match this connection".into(),
            });
            let _ = c.outbox.send(Outgoing::Frame(frame));
            return;
        }
        let events = self.session.submit(&op);
        self.publish(events);
        let events = self.session.drain();
        self.publish(events);
    }

    fn publish(&mut self, events: Vec<ServerEvent>) {
        if events.is_empty() {
            return;
        }
        if let Some(log) = &mut self.log {
            let written = events
                .iter()
                .try_for_each(|ev| writeln!(log, "{}", encode(&Message::Event(ev.clone()))))
                .and_then(|()| log.flush());
            if let Err(e) = written {
                tracing::error!("event log write failed: {e}");
            }
        }
        for c in self.conns.values() {
            for ev in &events {
                let _ = c.outbox.send(Outgoing::Frame(self.session.frame_for(ev, &c.user)));
            }
        }
    }
}
