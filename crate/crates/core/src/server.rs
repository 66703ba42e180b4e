//! The live session host.
//!
//! One task owns the [`Session`]. Connection handlers only parse frames,
//! stamp receipt times and push commands into a single ordered queue; the
//! loop drains that queue at each tick boundary and fans the resulting
//! messages out to every client.

use std::collections::BTreeMap;
use std::io;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use futures_util::{SinkExt, StreamExt};
use thiserror::Error;
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::{broadcast, mpsc, watch, Notify};
use tokio::task::JoinHandle;
use tokio_tungstenite::tungstenite::Message;

use crate::clock::Clock;
use crate::log::{header, log_path, LogError, LogEvent, LogWriter, SnapshotRate};
use crate::model::{validate_scenario, ScenarioConfig, ScenarioError, ValidatedScenario};
use crate::protocol::{ClientMessage, ClientRole, ServerMessage};
use crate::replay::{observer_messages, playback, PlaybackStats, ReplayError};
use crate::session::{Audience, Command, Outgoing, Session, SessionError};

pub const DEFAULT_PORT: u16 = 8765;

#[derive(Debug, Error)]
pub enum ServerError {
    #[error("port {0} is already in use")]
    PortInUse(u16),
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Log(#[from] LogError),
    #[error(transparent)]
    Session(#[from] SessionError),
    #[error(transparent)]
    Replay(#[from] ReplayError),
}

impl From<ScenarioError> for ServerError {
    fn from(e: ScenarioError) -> Self {
        ServerError::InvalidScenario(e.to_string())
    }
}

/// Reads and validates a scenario file.
pub fn load_scenario(path: &Path) -> Result<ValidatedScenario, ServerError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ServerError::InvalidScenario(format!("{}: {e}", path.display())))?;
    let config: ScenarioConfig =
        serde_json::from_str(&text).map_err(|e| ServerError::InvalidScenario(format!("{}: {e}", path.display())))?;
    Ok(validate_scenario(config)?)
}

#[derive(Debug, Clone)]
pub struct ServeOptions {
    pub scenario: ValidatedScenario,
    pub host: String,
    /// 0 picks a free port.
    pub port: u16,
    pub snapshot: SnapshotRate,
    pub log_dir: PathBuf,
    pub session_id: Option<String>,
}

impl ServeOptions {
    pub fn new(scenario: ValidatedScenario, log_dir: impl Into<PathBuf>) -> Self {
        ServeOptions {
            scenario,
            host: "127.0.0.1".into(),
            port: 0,
            snapshot: SnapshotRate::EveryTick,
            log_dir: log_dir.into(),
            session_id: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SessionSummary {
    pub session_id: String,
    pub log_path: PathBuf,
    pub ticks: u64,
}

pub struct ServerHandle {
    pub addr: SocketAddr,
    pub session_id: String,
    pub log_path: PathBuf,
    shutdown: watch::Sender<bool>,
    task: JoinHandle<Result<SessionSummary, ServerError>>,
}

impl ServerHandle {
    pub fn url(&self) -> String {
        format!("ws://{}", self.addr)
    }

    /// Stops the tick loop and closes the log.
    pub async fn shutdown(self) -> Result<SessionSummary, ServerError> {
        let _ = self.shutdown.send(true);
        self.wait().await
    }

    pub async fn wait(self) -> Result<SessionSummary, ServerError> {
        match self.task.await {
            Ok(r) => r,
            Err(e) => Err(ServerError::Io(io::Error::other(e))),
        }
    }
}

enum Inbound {
    Join {
        client: u64,
        role: ClientRole,
        tx: mpsc::UnboundedSender<String>,
    },
    Leave {
        client: u64,
    },
    Cmd(Command),
}

/// Binds, opens the session log and starts the tick loop.
pub async fn serve(opts: ServeOptions) -> Result<ServerHandle, ServerError> {
    let listener = TcpListener::bind((opts.host.as_str(), opts.port))
        .await
        .map_err(|e| match e.kind() {
            io::ErrorKind::AddrInUse => ServerError::PortInUse(opts.port),
            _ => ServerError::Io(e),
        })?;
    let addr = listener.local_addr()?;

    let session_id = opts
        .session_id
        .clone()
        .unwrap_or_else(|| uuid::Uuid::new_v4().simple().to_string());
    std::fs::create_dir_all(&opts.log_dir)?;
    let path = log_path(&opts.log_dir, &session_id);
    let clock = Clock::start();
    let log = LogWriter::create(&path, &session_id, &opts.scenario, opts.snapshot, clock.clone())?;
    let session = Session::new(&session_id, &opts.scenario, opts.snapshot, Some(log), clock.clone())?;

    let (in_tx, in_rx) = mpsc::unbounded_channel();
    let (stop_tx, stop_rx) = watch::channel(false);

    let accept_stop = stop_rx.clone();
    let wizard = Arc::new(AtomicBool::new(false));
    let ids = Arc::new(AtomicU64::new(1));
    tokio::spawn(accept_loop(listener, in_tx, accept_stop, wizard, ids, clock));

    let summary_path = path.clone();
    let task = tokio::spawn(session_loop(session, in_rx, stop_rx, summary_path));
    Ok(ServerHandle {
        addr,
        session_id,
        log_path: path,
        shutdown: stop_tx,
        task,
    })
}

async fn accept_loop(
    listener: TcpListener,
    inbound: mpsc::UnboundedSender<Inbound>,
    mut stop: watch::Receiver<bool>,
    wizard: Arc<AtomicBool>,
    ids: Arc<AtomicU64>,
    clock: Clock,
) {
    loop {
        tokio::select! {
            _ = stop.changed() => break,
            r = listener.accept() => {
                let Ok((stream, _)) = r else { continue };
                let _ = stream.set_nodelay(true);
                let id = ids.fetch_add(1, Ordering::SeqCst);
                tokio::spawn(handle_connection(stream, id, inbound.clone(), wizard.clone(), clock.clone()));
            }
        }
    }
}

fn send(tx: &mpsc::UnboundedSender<String>, msg: &ServerMessage) {
    let _ = tx.send(msg.to_json());
}

async fn handle_connection(
    stream: TcpStream,
    client: u64,
    inbound: mpsc::UnboundedSender<Inbound>,
    wizard: Arc<AtomicBool>,
    clock: Clock,
) {
    let Ok(ws) = tokio_tungstenite::accept_async(stream).await else {
        return;
    };
    let (mut sink, mut source) = ws.split();

    let role = loop {
        let Some(Ok(frame)) = source.next().await else { return };
        let Message::Text(text) = frame else {
            if frame.is_close() {
                return;
            }
            continue;
        };
        match serde_json::from_str::<ClientMessage>(&text) {
            Ok(ClientMessage::Hello { role, .. }) => break role,
            Ok(_) => {
                let m = ServerMessage::error("handshake_required", "send hello first");
                let _ = sink.send(Message::text(m.to_json())).await;
            }
            Err(e) => {
                let m = ServerMessage::error("malformed_message", e.to_string());
                let _ = sink.send(Message::text(m.to_json())).await;
            }
        }
    };
    if role == ClientRole::Wizard && wizard.compare_exchange(false, true, Ordering::SeqCst, Ordering::SeqCst).is_err() {
        let m = ServerMessage::Refused {
            code: "role_taken".into(),
        };
        let _ = sink.send(Message::text(m.to_json())).await;
        let _ = sink.close().await;
        return;
    }

    let (tx, mut rx) = mpsc::unbounded_channel::<String>();
    let writer = tokio::spawn(async move {
        while let Some(s) = rx.recv().await {
            if sink.send(Message::text(s)).await.is_err() {
                break;
            }
        }
        let _ = sink.close().await;
    });
    let joined = inbound
        .send(Inbound::Join {
            client,
            role,
            tx: tx.clone(),
        })
        .is_ok();

    while joined {
        let Some(Ok(frame)) = source.next().await else { break };
        let text = match frame {
            Message::Text(t) => t,
            Message::Close(_) => break,
            _ => continue,
        };
        let received_ms = clock.now_ms();
        let msg = match serde_json::from_str::<ClientMessage>(&text) {
            Ok(m) => m,
            Err(e) => {
                send(&tx, &ServerMessage::error("malformed_message", e.to_string()));
                continue;
            }
        };
        match to_command(role, msg, received_ms) {
            Ok(Some(cmd)) => {
                if inbound.send(Inbound::Cmd(cmd)).is_err() {
                    break;
                }
            }
            Ok(None) => {}
            Err(e) => send(&tx, &e),
        }
    }

    let _ = inbound.send(Inbound::Leave { client });
    if role == ClientRole::Wizard {
        wizard.store(false, Ordering::SeqCst);
    }
    drop(tx);
    let _ = writer.await;
}

/// Maps a client message to a session command, enforcing role rights.
fn to_command(role: ClientRole, msg: ClientMessage, received_ms: u64) -> Result<Option<Command>, ServerMessage> {
    use ClientMessage as M;
    let forbidden = |what: &str| ServerMessage::error("forbidden", format!("{what} is not allowed for this role"));
    Ok(Some(match (role, msg) {
        (_, M::Hello { .. }) => return Err(ServerMessage::error("already_joined", "hello was already sent")),
        (ClientRole::Wizard, M::Click { x, y, command_id }) => Command::Click {
            x,
            y,
            command_id,
            received_ms,
        },
        (ClientRole::Wizard, M::CancelAll {}) => Command::CancelAll {
            command_id: None,
            received_ms,
        },
        (ClientRole::User, M::Utterance { text }) => Command::Utterance { text, received_ms },
        (ClientRole::User, M::ViewPose { pose }) => Command::ViewPose { pose },
        (ClientRole::User, M::Controller { action, value }) => Command::Controller { action, value },
        (ClientRole::User, M::AckDelta { tick }) => Command::AckDelta { tick, received_ms },
        (ClientRole::Observer, M::AckDelta { .. }) => return Ok(None),
        (_, M::Click { .. }) => return Err(forbidden("click")),
        (_, M::CancelAll {}) => return Err(forbidden("cancel_all")),
        (_, M::Utterance { .. }) => return Err(forbidden("utterance")),
        (_, M::ViewPose { .. }) => return Err(forbidden("view_pose")),
        (_, M::Controller { .. }) => return Err(forbidden("controller")),
        (_, M::AckDelta { .. }) => return Err(forbidden("ack_delta")),
    }))
}

struct Client {
    role: ClientRole,
    tx: mpsc::UnboundedSender<String>,
}

fn dispatch(clients: &BTreeMap<u64, Client>, out: Vec<Outgoing>) {
    for o in out {
        let json = o.msg.to_json();
        for c in clients.values() {
            if o.audience == Audience::All || c.role == ClientRole::Wizard {
                let _ = c.tx.send(json.clone());
            }
        }
    }
}

async fn session_loop(
    mut session: Session,
    mut inbound: mpsc::UnboundedReceiver<Inbound>,
    mut stop: watch::Receiver<bool>,
    log_path: PathBuf,
) -> Result<SessionSummary, ServerError> {
    let tick_ms = session.scenario().tick_ms();
    let mut clients: BTreeMap<u64, Client> = BTreeMap::new();
    let mut queue: Vec<Command> = Vec::new();
    let mut interval = tokio::time::interval(Duration::from_millis(tick_ms));
    interval.tick().await;

    loop {
        tokio::select! {
            biased;
            _ = stop.changed() => break,
            Some(msg) = inbound.recv() => match msg {
                Inbound::Join { client, role, tx } => {
                    send(&tx, &ServerMessage::Welcome {
                        session_id: session.session_id().to_string(),
                        scenario: session.scenario().config().clone(),
                    });
                    send(&tx, &session.keyframe());
                    clients.insert(client, Client { role, tx });
                }
                Inbound::Leave { client } => {
                    clients.remove(&client);
                }
                Inbound::Cmd(cmd) => queue.push(cmd),
            },
            _ = interval.tick() => {
                for cmd in queue.drain(..) {
                    dispatch(&clients, session.apply(cmd)?);
                }
                dispatch(&clients, session.tick()?);
            }
        }
    }
    Ok(SessionSummary {
        session_id: session.session_id().to_string(),
        log_path,
        ticks: session.world().tick,
    })
}

/// Serves a recorded session to observers. Playback starts when the first
/// observer has joined; everyone receives `end` when it finishes.
pub struct ReplayHandle {
    pub addr: SocketAddr,
    task: JoinHandle<Result<PlaybackStats, ReplayError>>,
}

impl ReplayHandle {
    pub fn url(&self) -> String {
        format!("ws://{}", self.addr)
    }

    pub async fn wait(self) -> Result<PlaybackStats, ReplayError> {
        self.task
            .await
            .unwrap_or_else(|e| Err(ReplayError::Log(LogError::Io(io::Error::other(e)))))
    }
}

pub async fn serve_replay(
    events: Vec<LogEvent>,
    speed: f64,
    host: &str,
    port: u16,
) -> Result<ReplayHandle, ServerError> {
    if !(speed > 0.0 && speed.is_finite()) {
        return Err(ServerError::Replay(ReplayError::InvalidSpeed(speed)));
    }
    let head = header(&events)?;
    let session_id = events[0].session_id.clone();
    let listener = TcpListener::bind((host, port)).await.map_err(|e| match e.kind() {
        io::ErrorKind::AddrInUse => ServerError::PortInUse(port),
        _ => ServerError::Io(e),
    })?;
    let addr = listener.local_addr()?;
    let (tx, _) = broadcast::channel::<String>(4096);
    let first = Arc::new(Notify::new());
    let welcome = ServerMessage::Welcome {
        session_id,
        scenario: head.scenario,
    }
    .to_json();

    let accept_tx = tx.clone();
    let accept_first = first.clone();
    let acceptor = tokio::spawn(async move {
        while let Ok((stream, _)) = listener.accept().await {
            let _ = stream.set_nodelay(true);
            let rx = accept_tx.subscribe();
            tokio::spawn(replay_connection(stream, rx, welcome.clone(), accept_first.clone()));
        }
    });

    let task = tokio::spawn(async move {
        first.notified().await;
        let items = observer_messages(&events);
        let stats = playback(items, speed, |m| {
            let _ = tx.send(m.to_json());
            true
        })
        .await;
        let _ = tx.send(ServerMessage::End {}.to_json());
        // Let the forwarders flush the end marker before the listener goes.
        tokio::time::sleep(Duration::from_millis(50)).await;
        acceptor.abort();
        stats
    });
    Ok(ReplayHandle { addr, task })
}

async fn replay_connection(stream: TcpStream, mut rx: broadcast::Receiver<String>, welcome: String, first: Arc<Notify>) {
    let Ok(ws) = tokio_tungstenite::accept_async(stream).await else {
        return;
    };
    let (mut sink, mut source) = ws.split();
    let role = loop {
        match source.next().await {
            Some(Ok(Message::Text(t))) => match serde_json::from_str::<ClientMessage>(&t) {
                Ok(ClientMessage::Hello { role, .. }) => break role,
                _ => {
                    let m = ServerMessage::error("handshake_required", "send hello first");
                    let _ = sink.send(Message::text(m.to_json())).await;
                }
            },
            Some(Ok(_)) => continue,
            _ => return,
        }
    };
    if role != ClientRole::Observer {
        let m = ServerMessage::Refused {
            code: "observer_only".into(),
        };
        let _ = sink.send(Message::text(m.to_json())).await;
        let _ = sink.close().await;
        return;
    }
    if sink.send(Message::text(welcome)).await.is_err() {
        return;
    }
    first.notify_one();
    let end = ServerMessage::End {}.to_json();
    loop {
        match rx.recv().await {
            Ok(s) => {
                let done = s == end;
                if sink.send(Message::text(s)).await.is_err() || done {
                    break;
                }
            }
            Err(broadcast::error::RecvError::Lagged(_)) => continue,
            Err(broadcast::error::RecvError::Closed) => break,
        }
    }
    let _ = sink.close().await;
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roles_gate_commands() {
        let click = ClientMessage::Click {
            x: 1.0,
            y: 1.0,
            command_id: None,
        };
        assert!(to_command(ClientRole::Wizard, click.clone(), 5).unwrap().is_some());
        assert!(matches!(
            to_command(ClientRole::User, click, 5),
            Err(ServerMessage::Error { code, .. }) if code == "forbidden"
        ));
        let ack = ClientMessage::AckDelta { tick: 3 };
        assert_eq!(to_command(ClientRole::Observer, ack, 0).unwrap(), None);
    }

    #[test]
    fn missing_scenario_is_invalid() {
        let err = load_scenario(Path::new("/nonexistent/scenario.json")).unwrap_err();
        assert!(matches!(err, ServerError::InvalidScenario(_)));
    }
}
