//! Teleoperation session engine: one simulator plus controller advanced on a
//! fixed 60 Hz tick, driven by wire messages, with an always-on recording
//! that replays to the identical session log.

pub mod wire;

use std::collections::VecDeque;
use std::io::Cursor;
use std::sync::Arc;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine as _;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::env::{EnvConfig, Point, VascEnv};
use crate::error::{Error, Result};
use crate::grid::OccupancyGrid;
use crate::metrics::{session_log_row, SESSION_LOG_HEADER};
use crate::policy::{Policy, PolicyParams};
use crate::semi_auto::{
    tick_ms, ControlEvent, ControlMode, ControllerConfig, ControllerState, OperatorInput,
};

pub use wire::{ClientMsg, CriticalWire, EventKind, ServerMsg};

pub const RECORDING_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SessionConfig {
    pub env: EnvConfig,
    pub controller: ControllerConfig,
    /// Seed of the initial start/target draw.
    pub seed: u64,
    /// Pending hand deltas kept between ticks; the oldest are dropped first.
    pub queue_capacity: usize,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            env: EnvConfig::default(),
            controller: ControllerConfig::default(),
            seed: 0,
            queue_capacity: 64,
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct QueuedDelta {
    dx: f64,
    dy: f64,
    order_ms: u64,
    seq: u64,
}

/// Outcome of one client message.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Response {
    /// Sent only to the client that sent the message.
    pub reply: Option<ServerMsg>,
    /// Sent to every client.
    pub broadcast: Vec<ServerMsg>,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum RecordLine {
    Header {
        version: u32,
        config: SessionConfig,
        map: String,
        checkpoint: Value,
    },
    Msg {
        tick: u64,
        msg: ClientMsg,
    },
    End {
        ticks: u64,
    },
}

pub struct Session {
    grid: Arc<OccupancyGrid>,
    policy: PolicyParams,
    config: SessionConfig,
    env: VascEnv,
    ctrl: ControllerState,
    tick: u64,
    running: bool,
    queue: VecDeque<QueuedDelta>,
    seq: u64,
    hand: Point,
    reward: f64,
    pending: Vec<&'static str>,
    log: String,
    header: String,
    messages: Vec<String>,
}

impl std::fmt::Debug for Session {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Session")
            .field("tick", &self.tick)
            .field("running", &self.running)
            .field("mode", &self.ctrl.mode)
            .field("position", &self.ctrl.position)
            .finish_non_exhaustive()
    }
}

impl Session {
    /// A paused session in AUTO mode at tick 0.
    pub fn new(grid: Arc<OccupancyGrid>, policy: PolicyParams, config: SessionConfig) -> Result<Self> {
        config.controller.validate()?;
        if config.queue_capacity == 0 {
            return Err(Error::Config("queue_capacity must be at least 1".into()));
        }
        if !policy.all_finite() {
            return Err(Error::NonFinite("checkpoint parameters".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let env = VascEnv::new(grid.clone(), config.env.clone(), &mut rng)?;
        let ctrl = ControllerState::new(env.state().position, config.controller);
        let header = serde_json::to_string(&RecordLine::Header {
            version: RECORDING_VERSION,
            config: config.clone(),
            map: B64.encode(grid.to_cache_bytes()),
            checkpoint: serde_json::from_str(&policy.to_json()?)?,
        })?;
        let mut s = Self {
            grid,
            policy,
            config,
            env,
            ctrl,
            tick: 0,
            running: false,
            queue: VecDeque::new(),
            seq: 0,
            hand: Point::new(0.0, 0.0),
            reward: 0.0,
            pending: Vec::new(),
            log: format!("{SESSION_LOG_HEADER}\n"),
            header,
            messages: Vec::new(),
        };
        s.log_row("");
        Ok(s)
    }

    pub fn tick_count(&self) -> u64 {
        self.tick
    }

    pub fn t_ms(&self) -> u64 {
        tick_ms(self.tick)
    }

    pub fn is_running(&self) -> bool {
        self.running
    }

    pub fn mode(&self) -> ControlMode {
        self.ctrl.mode
    }

    pub fn controller(&self) -> &ControllerState {
        &self.ctrl
    }

    pub fn env(&self) -> &VascEnv {
        &self.env
    }

    pub fn grid(&self) -> &Arc<OccupancyGrid> {
        &self.grid
    }

    pub fn config(&self) -> &SessionConfig {
        &self.config
    }

    /// Session log CSV so far.
    pub fn log(&self) -> &str {
        &self.log
    }

    pub fn state_message(&self) -> ServerMsg {
        let st = self.env.state();
        ServerMsg::State {
            tick: self.tick,
            t_ms: self.t_ms(),
            robot: [self.ctrl.position.x, self.ctrl.position.y],
            target: [st.target.x, st.target.y],
            mode: self.ctrl.mode,
            critical: self.ctrl.critical.map(|c| CriticalWire {
                x: c.center.x,
                y: c.center.y,
                eps: c.eps,
            }),
            reward: self.reward,
            collisions: self.ctrl.collisions,
            done: st.done,
        }
    }

    pub fn map_message(&self) -> ServerMsg {
        let img = self.grid.to_image();
        let mut png = Vec::new();
        img.write_to(&mut Cursor::new(&mut png), image::ImageFormat::Png)
            .expect("in-memory png encoding");
        ServerMsg::Map {
            width: img.width(),
            height: img.height(),
            png_base64: B64.encode(png),
        }
    }

    /// What a joining client receives: the map then a state snapshot.
    pub fn join_messages(&self) -> Vec<ServerMsg> {
        vec![self.map_message(), self.state_message()]
    }

    /// Parses a text frame and applies it. Schema violations produce an
    /// error reply and leave the session untouched.
    pub fn handle_text(&mut self, text: &str) -> Response {
        match ClientMsg::parse(text) {
            Ok(msg) => self.handle_message(msg),
            Err(reason) => Response {
                reply: Some(ServerMsg::error(reason)),
                broadcast: Vec::new(),
            },
        }
    }

    pub fn handle_message(&mut self, msg: ClientMsg) -> Response {
        if let Err(reason) = msg.validate() {
            return Response {
                reply: Some(ServerMsg::error(reason)),
                broadcast: Vec::new(),
            };
        }
        let line = RecordLine::Msg {
            tick: self.tick,
            msg: msg.clone(),
        };
        self.messages.push(serde_json::to_string(&line).expect("messages serialize"));
        let now = self.t_ms();
        let mut out = Response::default();
        match msg {
            ClientMsg::HandDelta { dx, dy, t_ms } => {
                if self.ctrl.mode != ControlMode::Manual {
                    out.reply = Some(ServerMsg::error("hand_delta rejected: session is in AUTO mode"));
                    return out;
                }
                if self.queue.len() >= self.config.queue_capacity {
                    self.queue.pop_front();
                    self.pending.push("fault");
                    out.broadcast.push(ServerMsg::event(
                        EventKind::Fault,
                        "input queue full: oldest hand_delta dropped",
                    ));
                }
                self.queue.push_back(QueuedDelta {
                    dx,
                    dy,
                    order_ms: t_ms.unwrap_or(now),
                    seq: self.seq,
                });
                self.seq += 1;
            }
            ClientMsg::Takeover => {
                if let Some(ev) = self.ctrl.takeover(now) {
                    self.ctrl.anchor_hand(self.hand, now);
                    self.push_event(&ev, &mut out.broadcast);
                }
            }
            ClientMsg::ReArm => {
                self.queue.clear();
                if let Some(ev) = self.ctrl.re_arm(now) {
                    self.push_event(&ev, &mut out.broadcast);
                }
            }
            ClientMsg::MarkCritical { x, y, eps } => {
                if let Err(e) = self.ctrl.mark_critical_area(&self.grid, Point::new(x, y), eps) {
                    out.reply = Some(ServerMsg::error(format!("mark_critical rejected: {e}")));
                }
            }
            ClientMsg::Start => self.running = true,
            ClientMsg::Pause => self.running = false,
            ClientMsg::Reset { seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                match self.env.reset(&mut rng) {
                    Ok(st) => {
                        self.ctrl = ControllerState::new(st.position, self.config.controller);
                        self.queue.clear();
                        self.reward = 0.0;
                    }
                    Err(e) => out.reply = Some(ServerMsg::error(format!("reset failed: {e}"))),
                }
            }
        }
        out
    }

    /// Advances one tick when running and returns the messages to broadcast:
    /// events of this tick followed by exactly one state message. A paused
    /// session returns nothing.
    pub fn tick(&mut self) -> Vec<ServerMsg> {
        if !self.running {
            return Vec::new();
        }
        self.tick += 1;
        let now = self.t_ms();
        let mut deltas: Vec<QueuedDelta> = self.queue.drain(..).collect();
        deltas.sort_by_key(|d| (d.order_ms, d.seq));
        let input = if self.ctrl.mode == ControlMode::Manual && !deltas.is_empty() {
            for d in &deltas {
                self.hand = self.hand.offset(d.dx, d.dy);
            }
            Some(OperatorInput {
                hand: self.hand,
                t_ms: now,
            })
        } else {
            None
        };
        let before = self.ctrl.mode;
        let events = match self
            .ctrl
            .tick(input, Some(&self.policy as &dyn Policy), &mut self.env, now)
        {
            Ok(ev) => ev,
            Err(e) => vec![ControlEvent::Fault(e.to_string())],
        };
        if before == ControlMode::Auto && self.ctrl.mode == ControlMode::Manual {
            self.ctrl.anchor_hand(self.hand, now);
        }
        self.reward = self.ctrl.last_reward.unwrap_or(0.0);
        let mut out = Vec::new();
        for ev in &events {
            self.push_event(ev, &mut out);
        }
        let tags = std::mem::take(&mut self.pending).join(";");
        self.log_row(&tags);
        out.push(self.state_message());
        out
    }

    fn push_event(&mut self, ev: &ControlEvent, out: &mut Vec<ServerMsg>) {
        let (kind, detail) = match ev {
            ControlEvent::Moved { .. } => return,
            ControlEvent::ModeChanged(tr) => (
                EventKind::ModeChanged,
                format!(
                    "{}->{} ({})",
                    tr.from,
                    tr.to,
                    serde_json::to_value(tr.reason)
                        .ok()
                        .and_then(|v| v.as_str().map(str::to_owned))
                        .unwrap_or_default()
                ),
            ),
            ControlEvent::Collision { at } => (EventKind::Collision, format!("blocked at ({}, {})", at.x, at.y)),
            ControlEvent::Arrived { at } => (EventKind::Arrived, format!("arrived at ({}, {})", at.x, at.y)),
            ControlEvent::Fault(s) => (EventKind::Fault, s.clone()),
        };
        self.pending.push(ev.tag());
        out.push(ServerMsg::event(kind, detail));
    }

    fn log_row(&mut self, event: &str) {
        let p = self.ctrl.position;
        session_log_row(&mut self.log, self.tick, tick_ms(self.tick), self.ctrl.mode, p.x, p.y, event);
    }

    /// JSON-lines recording: header (config, map cache, checkpoint), every
    /// applied message stamped with its tick, then the final tick count.
    pub fn recording(&self) -> String {
        let mut out = String::with_capacity(self.header.len() + 64 * (self.messages.len() + 2));
        out.push_str(&self.header);
        out.push('\n');
        for m in &self.messages {
            out.push_str(m);
            out.push('\n');
        }
        out.push_str(&serde_json::to_string(&RecordLine::End { ticks: self.tick }).expect("end line"));
        out.push('\n');
        out
    }
}

fn advance_to(session: &mut Session, tick: u64) -> Result<()> {
    while session.tick < tick {
        let before = session.tick;
        session.tick();
        if session.tick == before {
            return Err(Error::Parse(format!(
                "recording expects tick {tick} but the session is paused at {before}"
            )));
        }
    }
    Ok(())
}

/// Rebuilds a session from its recording and re-applies every message at
/// its tick. The resulting log equals the original byte for byte.
pub fn replay(recording: &str) -> Result<Session> {
    let mut lines = recording.lines().filter(|l| !l.trim().is_empty()).enumerate();
    let (_, first) = lines.next().ok_or_else(|| Error::Parse("empty recording".into()))?;
    let mut session = match serde_json::from_str(first)? {
        RecordLine::Header {
            version,
            config,
            map,
            checkpoint,
        } => {
            if version != RECORDING_VERSION {
                return Err(Error::Parse(format!("unsupported recording version {version}")));
            }
            let bytes = B64
                .decode(map.as_bytes())
                .map_err(|e| Error::Parse(format!("map: {e}")))?;
            let grid = Arc::new(OccupancyGrid::from_cache_bytes(&bytes)?);
            let policy = PolicyParams::from_json(&checkpoint.to_string())?;
            Session::new(grid, policy, config)?
        }
        _ => return Err(Error::Parse("recording must start with a header".into())),
    };
    let mut ended = false;
    for (n, line) in lines {
        if ended {
            return Err(Error::Parse(format!("line {}: data after end", n + 1)));
        }
        match serde_json::from_str(line)? {
            RecordLine::Msg { tick, msg } => {
                if tick < session.tick {
                    return Err(Error::Parse(format!("line {}: tick {tick} goes backwards", n + 1)));
                }
                advance_to(&mut session, tick)?;
                session.handle_message(msg);
            }
            RecordLine::End { ticks } => {
                advance_to(&mut session, ticks)?;
                ended = true;
            }
            RecordLine::Header { .. } => {
                return Err(Error::Parse(format!("line {}: repeated header", n + 1)));
            }
        }
    }
    if !ended {
        return Err(Error::Parse("recording has no end line".into()));
    }
    Ok(session)
}
