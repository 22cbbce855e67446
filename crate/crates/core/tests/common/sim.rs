//! A whole session driven by random clients. Every client keeps its own
//! replica fed from the wire encoding of the log, with random delivery
//! delays, and submits ops computed against that possibly stale replica.

use std::collections::{BTreeSet, VecDeque};

use nbcollab::kernel::Fixtures;
use nbcollab::model::{AclTarget, CellId, CellKind, Notebook, StructuralEdit};
use nbcollab::protocol::{decode, encode, ClientOp, Message, OpBody, ServerEvent, SessionState};
use nbcollab::session::Session;
use rand::seq::SliceRandom;
use rand::Rng;

use super::{program, random_edit, rng, TestRng, GLOBALS};

/// Cells some users may not read, and the marker strings that have been
/// written into them. Markers use letters the rest of the generator never
/// produces, so finding one in a frame means hidden source escaped.
#[derive(Debug, Default)]
pub struct Hidden {
    pub restricted: BTreeSet<String>,
    pub cells: BTreeSet<CellId>,
    pub markers: Vec<String>,
}

pub fn marker(rng: &mut TestRng) -> String {
    let tail: String = (0..6)
        .map(|_| *['J', 'X', 'K', 'V', 'W'].choose(rng).unwrap())
        .collect();
    format!("ZQ{tail}")
}

pub struct Client {
    pub name: String,
    pub replica: SessionState,
    inbox: VecDeque<ServerEvent>,
    ops: u64,
}

pub struct Sim {
    pub session: Session,
    pub clients: Vec<Client>,
    pub rng: TestRng,
    pub hidden: Option<Hidden>,
    /// Every frame sent, with its recipient. Only kept when `hidden` is set.
    pub frames: Vec<(String, String)>,
    published: usize,
}

impl Sim {
    pub fn new(seed: u64, nb: &Notebook, users: &[&str], hosts: &[&str], hidden: Option<Hidden>) -> Sim {
        let hosts = hosts.iter().map(|h| h.to_string()).collect();
        let mut sim = Sim {
            session: Session::new(nb, Fixtures::default(), hosts),
            clients: users
                .iter()
                .map(|u| Client {
                    name: u.to_string(),
                    replica: SessionState::empty(),
                    inbox: VecDeque::new(),
                    ops: 0,
                })
                .collect(),
            rng: rng(seed),
            hidden,
            frames: Vec::new(),
            published: 0,
        };
        for u in users {
            sim.join(u);
        }
        sim
    }

    fn join(&mut self, user: &str) {
        self.session.join(user).expect("generated users may join");
        self.publish();
        if self.hidden.is_some() {
            self.frames.push((user.to_string(), self.session.welcome(user)));
        }
    }

    /// Fans out new log entries: projected frames to online users, and the
    /// full event, through the wire format, to every replica.
    fn publish(&mut self) {
        let log = self.session.log();
        for ev in &log[self.published..] {
            if self.hidden.is_some() {
                for user in &self.session.state().online {
                    self.frames.push((user.clone(), self.session.frame_for(ev, user)));
                }
            }
            let line = encode(&Message::Event(ev.clone()));
            let Ok(Message::Event(back)) = decode(line.as_bytes()) else {
                panic!("event did not survive the wire: {line}");
            };
            for c in &mut self.clients {
                c.inbox.push_back(back.clone());
            }
        }
        self.published = log.len();
    }

    fn deliver_some(&mut self) {
        for c in &mut self.clients {
            let k = self.rng.gen_range(0..=c.inbox.len());
            for ev in c.inbox.drain(..k) {
                c.replica
                    .apply_event(&ev)
                    .unwrap_or_else(|e| panic!("{} diverged at {}: {e:?}", c.name, ev.seq));
            }
        }
    }

    pub fn step(&mut self) {
        let i = self.rng.gen_range(0..self.clients.len());
        let name = self.clients[i].name.clone();
        let online = self.session.state().online.contains(&name);
        if !online || self.rng.gen_bool(0.02) {
            if online {
                self.session.leave(&name);
                self.publish();
            } else {
                self.join(&name);
            }
        } else {
            let body = random_op(&mut self.rng, &self.clients[i].replica, &name, self.hidden.as_mut());
            let c = &mut self.clients[i];
            c.ops += 1;
            let op = ClientOp {
                op_id: format!("{name}-{}", c.ops),
                actor: name,
                body,
            };
            self.session.submit(&op);
            self.publish();
        }
        if self.rng.gen_bool(0.7) {
            self.session.drain();
            self.publish();
        }
        self.deliver_some();
    }

    /// Drains the queue and delivers everything still in flight.
    pub fn finish(&mut self) {
        self.session.drain();
        self.publish();
        for c in &mut self.clients {
            for ev in c.inbox.drain(..) {
                c.replica
                    .apply_event(&ev)
                    .unwrap_or_else(|e| panic!("{} diverged at {}: {e:?}", c.name, ev.seq));
            }
        }
    }

    /// Recipients' frames that contain a hidden marker.
    pub fn leaks(&self) -> Vec<(String, String)> {
        let Some(h) = &self.hidden else {
            return Vec::new();
        };
        self.frames
            .iter()
            .filter(|(user, _)| h.restricted.contains(user))
            .filter_map(|(user, frame)| {
                h.markers
                    .iter()
                    .find(|m| frame.contains(m.as_str()))
                    .map(|m| (user.clone(), format!("{m} in {frame}")))
            })
            .collect()
    }
}

fn line_starts(source: &str) -> Vec<usize> {
    let mut starts = vec![0];
    for (i, ch) in source.chars().enumerate() {
        if ch == '\n' {
            starts.push(i + 1);
        }
    }
    starts
}

fn hidden_splice(rng: &mut TestRng, id: &CellId, source: &str, version: u64, hidden: &mut Hidden) -> StructuralEdit {
    let starts = line_starts(source);
    let len = source.chars().count();
    if rng.gen_bool(0.7) || len == 0 {
        let m = marker(rng);
        let line = match rng.gen_range(0..3) {
            0 => format!("# {m}\n"),
            1 => format!("print(\"{m}\")\n"),
            _ => format!("\"{m}\"\n"),
        };
        hidden.markers.push(m);
        let at = *starts
            .iter()
            .filter(|s| **s < len || len == 0)
            .collect::<Vec<_>>()
            .choose(rng)
            .unwrap_or(&&0);
        StructuralEdit::SpliceText {
            id: id.clone(),
            offset: *at,
            delete_len: 0,
            insert_text: line,
            base_version: version,
        }
    } else {
        let i = rng.gen_range(0..starts.len());
        let start = starts[i];
        let end = starts.get(i + 1).copied().unwrap_or(len);
        StructuralEdit::SpliceText {
            id: id.clone(),
            offset: start,
            delete_len: end - start,
            insert_text: String::new(),
            base_version: version,
        }
    }
}

fn snippet(rng: &mut TestRng) -> String {
    match rng.gen_range(0..4) {
        0 => program(rng),
        1 => ["x", " = ", "1", "\n", "print(n)", "nums", ".append(", ")", "del "]
            .choose(rng)
            .unwrap()
            .to_string(),
        _ => program(rng).lines().next().unwrap_or("").to_string(),
    }
}

/// An op `actor` might send given what its replica shows.
pub fn random_op(rng: &mut TestRng, view: &SessionState, actor: &str, mut hidden: Option<&mut Hidden>) -> OpBody {
    let nb = &view.notebook;
    let cells = nb.all_cells();
    let text_cells: Vec<_> = cells.iter().filter(|c| c.kind != CellKind::Group).collect();
    let is_hidden = |id: &CellId, h: &Option<&mut Hidden>| h.as_ref().is_some_and(|h| h.cells.contains(id));
    let restricted_actor = hidden.as_ref().is_some_and(|h| h.restricted.contains(actor));
    let group_list = super::groups(nb);
    let group_name = |id: &CellId| nb.cell(id).and_then(|c| c.group.as_ref()).map(|g| g.name.clone());
    match rng.gen_range(0..100) {
        0..=29 => {
            let Some(cell) = text_cells.choose(rng) else {
                return OpBody::Chat { text: "empty".into() };
            };
            let version = cell.text_version;
            if is_hidden(&cell.id, &hidden) {
                let h = hidden.as_deref_mut().unwrap();
                return OpBody::Structural {
                    edit: hidden_splice(rng, &cell.id, &cell.source, version, h),
                };
            }
            let len = cell.source.chars().count();
            let edit = if rng.gen_bool(0.3) {
                StructuralEdit::SpliceText {
                    id: cell.id.clone(),
                    offset: 0,
                    delete_len: len,
                    insert_text: program(rng),
                    base_version: version,
                }
            } else {
                let offset = rng.gen_range(0..=len);
                StructuralEdit::SpliceText {
                    id: cell.id.clone(),
                    offset,
                    delete_len: rng.gen_range(0..=(len - offset).min(8)),
                    insert_text: snippet(rng),
                    base_version: version,
                }
            };
            OpBody::Structural { edit }
        }
        30..=51 => match cells.choose(rng) {
            Some(c) => OpBody::ExecuteCell { cell: c.id.clone() },
            None => OpBody::RestartKernel,
        },
        52..=66 => {
            let mut edit = random_edit(rng, nb, &mut snippet);
            // Hidden cells only ever receive whole marker lines.
            if let StructuralEdit::SpliceText { id, .. } = &edit {
                if is_hidden(id, &hidden) {
                    edit = StructuralEdit::DeleteCell { id: id.clone() };
                }
            }
            OpBody::Structural { edit }
        }
        67..=74 => {
            let choices: Vec<_> = cells
                .iter()
                .filter(|c| restricted_actor || !is_hidden(&c.id, &hidden))
                .map(|c| Some(c.id.clone()))
                .chain([None])
                .collect();
            let cell = choices.choose(rng).unwrap().clone();
            let target = if rng.gen_bool(0.4) {
                AclTarget::Default
            } else {
                AclTarget::User(["u0", "u1", "u2", "u3", "u4"].choose(rng).unwrap().to_string())
            };
            OpBody::SetCellAcl {
                cell,
                target,
                read: rng.gen_bool(0.8),
                edit: rng.gen_bool(0.6),
            }
        }
        75..=80 => {
            let mut names: Vec<String> = view.kernel.global_values().into_keys().collect();
            names.extend(GLOBALS.iter().map(|s| s.to_string()));
            OpBody::SetVariableAcl {
                name: names.choose(rng).unwrap().clone(),
                target: if rng.gen_bool(0.5) {
                    AclTarget::Default
                } else {
                    AclTarget::User(["u0", "u1", "u2"].choose(rng).unwrap().to_string())
                },
                read: rng.gen_bool(0.8),
                write: rng.gen_bool(0.6),
            }
        }
        81..=86 => match group_list.choose(rng) {
            Some((g, tabs)) => {
                let group = group_name(g).unwrap();
                if rng.gen_bool(0.5) {
                    OpBody::SyncTab {
                        group,
                        tab: tabs.choose(rng).unwrap().clone(),
                    }
                } else {
                    OpBody::MergeMain { group }
                }
            }
            None => OpBody::MergeMain { group: "plel".into() },
        },
        87..=88 => OpBody::RunAndLockAbove {
            index: rng.gen_range(-1..=nb.cells.len() as i64),
        },
        89..=93 => OpBody::Chat {
            text: ["hi", "running it now", "look at c2", ""]
                .choose(rng)
                .unwrap()
                .to_string(),
        },
        94..=98 => OpBody::Presence {
            cell: cells.choose(rng).map(|c| c.id.clone()),
            offset: rng.gen_range(0..10),
        },
        _ => OpBody::RestartKernel,
    }
}
