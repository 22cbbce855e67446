//! Network front end. One port speaks two protocols: a connection whose
//! first byte is `{` carries newline-delimited JSON frames; anything else is
//! HTTP (`GET /health`, `GET /ws` upgrading to a WebSocket with the same
//! frames, and optional static files).

use std::future::Future;
use std::io::{self, BufRead, BufReader};
use std::net::SocketAddr;
use std::path::PathBuf;

use axum::extract::ws::{Message as WsMessage, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::response::IntoResponse;
use axum::routing::get;
use axum::Router;
use futures_util::{SinkExt, Stream, StreamExt};
use hyper_util::rt::{TokioExecutor, TokioIo};
use hyper_util::server::conn::auto;
use hyper_util::service::TowerToHyperService;
use nbcollab::codes::ErrorCode;
use nbcollab::kernel::Fixtures;
use nbcollab::model::{self, Notebook};
use nbcollab::protocol::{decode, encode, Message, ServerEvent, DEFAULT_MAX_PARTICIPANTS};
use nbcollab::session::Session;
use thiserror::Error;
use tokio::io::{AsyncBufReadExt, AsyncWriteExt};
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::mpsc;
use tower_http::services::ServeDir;

use crate::hub::{self, HubHandle, Outbox, Outgoing};

#[derive(Debug, Clone)]
pub struct ServerConfig {
    pub addr: SocketAddr,
    /// Notebook to open; an empty notebook when absent.
    pub notebook: Option<PathBuf>,
    /// Directory of CSV fixtures.
    pub fixtures: Option<PathBuf>,
    pub hosts: Vec<String>,
    /// Append-only event log. An existing non-empty log is replayed and
    /// the session continues from it.
    pub log: Option<PathBuf>,
    pub static_dir: Option<PathBuf>,
    pub max_participants: usize,
}

impl ServerConfig {
    pub fn new(addr: SocketAddr) -> Self {
        ServerConfig {
            addr,
            notebook: None,
            fixtures: None,
            hosts: Vec::new(),
            log: None,
            static_dir: None,
            max_participants: DEFAULT_MAX_PARTICIPANTS,
        }
    }
}

#[derive(Debug, Error)]
pub enum ServeError {
    #[error("{path}: {source}")]
    Io { path: String, source: io::Error },
    #[error("{0}")]
    Notebook(#[from] model::FormatError),
    #[error("{0}")]
    Fixtures(#[from] nbcollab::kernel::FixtureError),
    #[error("event log line {line}: {detail}")]
    Log { line: usize, detail: String },
}

fn io_err(path: &std::path::Path) -> impl FnOnce(io::Error) -> ServeError + '_ {
    move |source| ServeError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// A bound, not yet running server.
pub struct Server {
    listener: TcpListener,
    hub: HubHandle,
    router: Router,
}

impl Server {
    pub async fn bind(config: ServerConfig) -> Result<Server, ServeError> {
        let (session, log) = open_session(&config)?;
        let hub = hub::spawn(session, log);
        let listener = TcpListener::bind(config.addr).await.map_err(|source| ServeError::Io {
            path: config.addr.to_string(),
            source,
        })?;
        let mut router = Router::new()
            .route("/health", get(|| async { "ok" }))
            .route("/ws", get(ws_upgrade))
            .with_state(hub.clone());
        if let Some(dir) = &config.static_dir {
            router = router.fallback_service(ServeDir::new(dir));
        }
        Ok(Server { listener, hub, router })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.listener.local_addr().expect("bound listener has an address")
    }

    /// Accepts connections until `shutdown` resolves, then drops every
    /// open connection without recording departures, so a later run on the
    /// same log sees them as stale.
    pub async fn run(self, shutdown: impl Future<Output = ()>) {
        tokio::pin!(shutdown);
        let mut conns = tokio::task::JoinSet::new();
        loop {
            while conns.try_join_next().is_some() {}
            let accepted = tokio::select! {
                _ = &mut shutdown => break,
                a = self.listener.accept() => a,
            };
            let (stream, peer) = match accepted {
                Ok(a) => a,
                Err(e) => {
                    tracing::warn!("accept failed: {e}");
                    continue;
                }
            };
            let hub = self.hub.clone();
            let router = self.router.clone();
            conns.spawn(async move {
                if let Err(e) = dispatch(stream, hub, router).await {
                    tracing::debug!(%peer, "connection ended: {e}");
                }
            });
        }
        conns.shutdown().await;
    }
}

fn open_session(config: &ServerConfig) -> Result<(Session, Option<std::fs::File>), ServeError> {
    let existing = match &config.log {
        Some(path) if path.exists() => read_log(path)?,
        _ => Vec::new(),
    };
    let resumed = !existing.is_empty();
    let mut session = if resumed {
        Session::from_log(existing).map_err(|e| ServeError::Log {
            line: 0,
            detail: e.to_string(),
        })?
    } else {
        let notebook = match &config.notebook {
            Some(path) => model::load(&std::fs::read(path).map_err(io_err(path))?)?,
            None => Notebook::new(),
        };
        let fixtures = match &config.fixtures {
            Some(dir) => Fixtures::load_dir(dir)?,
            None => Fixtures::default(),
        };
        Session::with_capacity(&notebook, fixtures, config.hosts.clone(), config.max_participants)
    };
    let mut pending: Vec<ServerEvent> = if resumed { Vec::new() } else { session.log().to_vec() };
    // Whoever was connected when the previous process stopped is gone now.
    let stale: Vec<String> = session.state().online.iter().cloned().collect();
    for user in stale {
        pending.extend(session.leave(&user));
    }
    let file = match &config.log {
        Some(path) => {
            let mut f = std::fs::OpenOptions::new()
                .create(true)
                .append(true)
                .open(path)
                .map_err(io_err(path))?;
            use std::io::Write;
            for ev in &pending {
                writeln!(f, "{}", encode(&Message::Event(ev.clone()))).map_err(io_err(path))?;
            }
            Some(f)
        }
        None => None,
    };
    Ok((session, file))
}

/// Reads an event log written by a previous run.
pub fn read_log(path: &std::path::Path) -> Result<Vec<ServerEvent>, ServeError> {
    let f = std::fs::File::open(path).map_err(io_err(path))?;
    let mut events = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        match decode(line.as_bytes()) {
            Ok(Message::Event(ev)) => events.push(ev),
            Ok(_) => {
                return Err(ServeError::Log {
                    line: i + 1,
                    detail: "not an event frame".into(),
                })
            }
            Err(e) => {
                return Err(ServeError::Log {
                    line: i + 1,
                    detail: e.to_string(),
                })
            }
        }
    }
    Ok(events)
}

async fn dispatch(stream: TcpStream, hub: HubHandle, router: Router) -> io::Result<()> {
    let mut first = [0u8; 1];
    if stream.peek(&mut first).await? == 0 {
        return Ok(());
    }
    if first[0] == b'{' {
        return serve_tcp(stream, hub).await;
    }
    let service = TowerToHyperService::new(router);
    auto::Builder::new(TokioExecutor::new())
        .serve_connection_with_upgrades(TokioIo::new(stream), service)
        .await
        .map_err(io::Error::other)
}

async fn serve_tcp(stream: TcpStream, hub: HubHandle) -> io::Result<()> {
    let (read, mut write) = stream.into_split();
    let (tx, mut rx) = mpsc::unbounded_channel();
    let writer = tokio::spawn(async move {
        while let Some(out) = rx.recv().await {
            match out {
                Outgoing::Frame(f) => {
                    let mut line = f.into_bytes();
                    line.push(b'\n');
                    if write.write_all(&line).await.is_err() {
                        break;
                    }
                }
                Outgoing::Close => break,
            }
        }
        let _ = write.shutdown().await;
    });
    let lines = tokio_stream_lines(tokio::io::BufReader::new(read));
    converse(hub, lines, tx).await;
    let _ = writer.await;
    Ok(())
}

fn tokio_stream_lines<R: tokio::io::AsyncBufRead + Unpin + Send + 'static>(
    r: R,
) -> impl Stream<Item = String> + Unpin + Send {
    Box::pin(futures_util::stream::unfold(r.lines(), |mut lines| async move {
        match lines.next_line().await {
            Ok(Some(line)) => Some((line, lines)),
            _ => None,
        }
    }))
}

async fn ws_upgrade(ws: WebSocketUpgrade, State(hub): State<HubHandle>) -> impl IntoResponse {
    ws.on_upgrade(move |socket| serve_ws(socket, hub))
}

async fn serve_ws(socket: WebSocket, hub: HubHandle) {
    let (mut sink, stream) = socket.split();
    let (tx, mut rx) = mpsc::unbounded_channel();
    let writer = tokio::spawn(async move {
        while let Some(out) = rx.recv().await {
            match out {
                Outgoing::Frame(f) => {
                    if sink.send(WsMessage::Text(f)).await.is_err() {
                        break;
                    }
                }
                Outgoing::Close => {
                    let _ = sink.send(WsMessage::Close(None)).await;
                    break;
                }
            }
        }
    });
    let frames = stream
        .take_while(|m| futures_util::future::ready(matches!(m, Ok(m) if !matches!(m, WsMessage::Close(_)))))
        .filter_map(|m| async move {
            match m {
                Ok(WsMessage::Text(t)) => Some(t),
                Ok(WsMessage::Binary(b)) => Some(String::from_utf8_lossy(&b).into_owned()),
                _ => None,
            }
        });
    converse(hub, Box::pin(frames), tx).await;
    let _ = writer.await;
}

fn refuse(out: &Outbox, op_id: Option<String>, code: ErrorCode, detail: String) {
    let _ = out.send(Outgoing::Frame(encode(&Message::Error { op_id, code, detail })));
    let _ = out.send(Outgoing::Close);
}

/// The transport-independent part of a connection: `hello`, then ops until
/// the peer hangs up or sends something undecodable.
async fn converse(hub: HubHandle, mut frames: impl Stream<Item = String> + Unpin, out: Outbox) {
    let user = loop {
        let Some(frame) = frames.next().await else {
            return;
        };
        if frame.trim().is_empty() {
            continue;
        }
        match decode(frame.as_bytes()) {
            Ok(Message::Hello { user }) => break user,
            Ok(_) => return refuse(&out, None, ErrorCode::DecodeError, "expected hello".into()),
            Err(e) => return refuse(&out, None, e.code(), e.to_string()),
        }
    };
    let conn = match hub.connect(user, out.clone()).await {
        Ok(id) => id,
        Err((code, detail)) => return refuse(&out, None, code, detail),
    };
    while let Some(frame) = frames.next().await {
        if frame.trim().is_empty() {
            continue;
        }
        match decode(frame.as_bytes()) {
            Ok(Message::Op(op)) => hub.op(conn, op),
            Ok(Message::Ping) => {
                let _ = out.send(Outgoing::Frame(encode(&Message::Pong)));
            }
            Ok(Message::Pong) => {}
            Ok(_) => {
                refuse(&out, None, ErrorCode::DecodeError, "unexpected frame type".into());
                break;
            }
            Err(e) => {
                refuse(&out, None, e.code(), e.to_string());
                break;
            }
        }
    }
    hub.disconnect(conn);
    let _ = out.send(Outgoing::Close);
}
