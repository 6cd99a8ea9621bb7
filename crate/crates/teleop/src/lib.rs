//! Teleoperation server: hosts one [`Session`] on a fixed-rate tick task and
//! speaks its JSON wire protocol over WebSocket text frames.
//!
//! The tick task is the only owner of the session. Socket readers validate
//! frames and push commands into a bounded channel; every tick fans the
//! resulting messages out to all connected clients.

use std::sync::Arc;
use std::time::Duration;

use axum::extract::ws::{Message, Utf8Bytes, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::response::IntoResponse;
use axum::routing::get;
use axum::Router;
use futures::{SinkExt, StreamExt};
use tokio::sync::{broadcast, mpsc, oneshot};
use tokio::time::{Instant, MissedTickBehavior};
use vascnav::semi_auto::TICK_HZ;
use vascnav::session::{ClientMsg, ServerMsg, Session};

const COMMAND_CAPACITY: usize = 1024;
const BROADCAST_CAPACITY: usize = 4096;

type Frame = Arc<str>;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TickConfig {
    pub hz: f64,
}

impl Default for TickConfig {
    fn default() -> Self {
        Self { hz: TICK_HZ }
    }
}

/// Messages a joining client starts with, plus its live feed.
pub struct Joined {
    /// Map, then a state snapshot.
    pub initial: Vec<String>,
    pub updates: broadcast::Receiver<Frame>,
}

/// Point-in-time copy of what the session has recorded.
#[derive(Clone, Debug)]
pub struct Snapshot {
    pub tick: u64,
    pub log: String,
    pub recording: String,
}

enum Command {
    Join(oneshot::Sender<Joined>),
    Message {
        msg: ClientMsg,
        reply: Option<mpsc::UnboundedSender<Frame>>,
    },
    Snapshot(oneshot::Sender<Snapshot>),
    Stop(oneshot::Sender<Session>),
}

/// Cloneable handle to a running session.
#[derive(Clone)]
pub struct SessionHandle {
    commands: mpsc::Sender<Command>,
}

#[derive(Debug)]
pub struct Closed;

impl std::fmt::Display for Closed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("session tick loop has stopped")
    }
}

impl std::error::Error for Closed {}

impl SessionHandle {
    async fn request<T>(&self, make: impl FnOnce(oneshot::Sender<T>) -> Command) -> Result<T, Closed> {
        let (tx, rx) = oneshot::channel();
        self.commands.send(make(tx)).await.map_err(|_| Closed)?;
        rx.await.map_err(|_| Closed)
    }

    pub async fn join(&self) -> Result<Joined, Closed> {
        self.request(Command::Join).await
    }

    /// Queues a validated message for the next tick boundary; replies (if
    /// any) go to `reply`.
    pub async fn send(&self, msg: ClientMsg, reply: Option<mpsc::UnboundedSender<Frame>>) -> Result<(), Closed> {
        self.commands
            .send(Command::Message { msg, reply })
            .await
            .map_err(|_| Closed)
    }

    pub async fn snapshot(&self) -> Result<Snapshot, Closed> {
        self.request(Command::Snapshot).await
    }

    /// Stops the tick loop and hands the session back.
    pub async fn stop(&self) -> Result<Session, Closed> {
        self.request(Command::Stop).await
    }
}

/// Starts the tick loop for `session` on the current runtime.
pub fn spawn_session(session: Session, config: TickConfig) -> SessionHandle {
    let (tx, rx) = mpsc::channel(COMMAND_CAPACITY);
    tokio::spawn(tick_loop(session, config, rx));
    SessionHandle { commands: tx }
}

fn frame(msg: &ServerMsg) -> Frame {
    Arc::from(msg.to_json())
}

async fn tick_loop(mut session: Session, config: TickConfig, mut rx: mpsc::Receiver<Command>) {
    let period = Duration::from_secs_f64(1.0 / config.hz);
    let (feed, _) = broadcast::channel::<Frame>(BROADCAST_CAPACITY);
    let mut interval = tokio::time::interval(period);
    interval.set_missed_tick_behavior(MissedTickBehavior::Burst);
    let mut stop: Option<oneshot::Sender<Session>> = None;
    'outer: loop {
        let deadline = interval.tick().await;
        let late = Instant::now().saturating_duration_since(deadline);
        if late > period {
            log::warn!(
                "tick {} started {:.1} ms late",
                session.tick_count() + 1,
                late.as_secs_f64() * 1e3
            );
        }
        loop {
            let cmd = match rx.try_recv() {
                Ok(c) => c,
                Err(mpsc::error::TryRecvError::Empty) => break,
                Err(mpsc::error::TryRecvError::Disconnected) => break 'outer,
            };
            match cmd {
                Command::Join(tx) => {
                    let joined = Joined {
                        initial: session.join_messages().iter().map(|m| m.to_json()).collect(),
                        updates: feed.subscribe(),
                    };
                    let _ = tx.send(joined);
                }
                Command::Message { msg, reply } => {
                    let out = session.handle_message(msg);
                    if let (Some(r), Some(to)) = (out.reply, reply) {
                        let _ = to.send(frame(&r));
                    }
                    for m in &out.broadcast {
                        let _ = feed.send(frame(m));
                    }
                }
                Command::Snapshot(tx) => {
                    let _ = tx.send(Snapshot {
                        tick: session.tick_count(),
                        log: session.log().to_owned(),
                        recording: session.recording(),
                    });
                }
                Command::Stop(tx) => {
                    stop = Some(tx);
                    break 'outer;
                }
            }
        }
        for m in session.tick() {
            // No subscribers is fine: the session still advances and records.
            let _ = feed.send(frame(&m));
        }
    }
    if let Some(tx) = stop {
        let _ = tx.send(session);
    }
}

/// HTTP routes: `/ws` for the cockpit channel, `/recording` and `/log` for
/// the current recording and session log.
pub fn router(handle: SessionHandle) -> Router {
    Router::new()
        .route("/", get(|| async { "vascnav teleop server; connect to /ws\n" }))
        .route("/ws", get(ws_upgrade))
        .route("/recording", get(recording))
        .route("/log", get(session_log))
        .with_state(handle)
}

async fn recording(State(handle): State<SessionHandle>) -> impl IntoResponse {
    match handle.snapshot().await {
        Ok(s) => (axum::http::StatusCode::OK, s.recording),
        Err(e) => (axum::http::StatusCode::SERVICE_UNAVAILABLE, e.to_string()),
    }
}

async fn session_log(State(handle): State<SessionHandle>) -> impl IntoResponse {
    match handle.snapshot().await {
        Ok(s) => (axum::http::StatusCode::OK, s.log),
        Err(e) => (axum::http::StatusCode::SERVICE_UNAVAILABLE, e.to_string()),
    }
}

async fn ws_upgrade(ws: WebSocketUpgrade, State(handle): State<SessionHandle>) -> impl IntoResponse {
    ws.on_upgrade(move |socket| client(socket, handle))
}

async fn client(socket: WebSocket, handle: SessionHandle) {
    let Ok(Joined { initial, mut updates }) = handle.join().await else {
        return;
    };
    let (mut sink, mut stream) = socket.split();
    let (direct_tx, mut direct_rx) = mpsc::unbounded_channel::<Frame>();
    let writer = tokio::spawn(async move {
        for text in initial {
            if sink.send(Message::Text(text.into())).await.is_err() {
                return;
            }
        }
        loop {
            let text = tokio::select! {
                d = direct_rx.recv() => match d {
                    Some(t) => t,
                    None => return,
                },
                b = updates.recv() => match b {
                    Ok(t) => t,
                    Err(broadcast::error::RecvError::Lagged(n)) => {
                        log::warn!("client lagged; {n} messages dropped");
                        continue;
                    }
                    Err(broadcast::error::RecvError::Closed) => return,
                },
            };
            if sink.send(Message::Text(Utf8Bytes::from(&*text))).await.is_err() {
                return;
            }
        }
    });
    while let Some(Ok(msg)) = stream.next().await {
        let text = match msg {
            Message::Text(t) => t,
            Message::Close(_) => break,
            Message::Binary(_) => {
                let _ = direct_tx.send(frame(&ServerMsg::error("binary frames are not supported")));
                continue;
            }
            _ => continue,
        };
        match ClientMsg::parse(text.as_str()) {
            Ok(m) => {
                if handle.send(m, Some(direct_tx.clone())).await.is_err() {
                    break;
                }
            }
            Err(reason) => {
                let _ = direct_tx.send(frame(&ServerMsg::error(reason)));
            }
        }
    }
    drop(direct_tx);
    writer.abort();
}

/// Serves `router(handle)` on `listener` until `shutdown` resolves.
pub async fn serve(
    listener: tokio::net::TcpListener,
    handle: SessionHandle,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(handle))
        .with_graceful_shutdown(shutdown)
        .await
}
