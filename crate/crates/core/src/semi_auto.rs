//! Semi-autonomous controller: the learned policy drives toward an
//! operator-marked critical area, hands over to manual control on arrival,
//! and manual control applies scaled, clamped hand increments.

use serde::{Deserialize, Serialize};

use crate::env::{observe, reward, EnvState, Point, VascEnv};
use crate::error::{Error, Result};
use crate::grid::OccupancyGrid;
use crate::policy::Policy;

/// Controller ticks per second.
pub const TICK_HZ: f64 = 60.0;

/// Simulation time of `tick`, whole milliseconds.
pub fn tick_ms(tick: u64) -> u64 {
    tick * 1000 / 60
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ControlMode {
    #[serde(rename = "AUTO")]
    Auto,
    #[serde(rename = "MANUAL")]
    Manual,
}

impl ControlMode {
    pub fn as_str(self) -> &'static str {
        match self {
            ControlMode::Auto => "AUTO",
            ControlMode::Manual => "MANUAL",
        }
    }
}

impl std::fmt::Display for ControlMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for ControlMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "AUTO" => Ok(ControlMode::Auto),
            "MANUAL" => Ok(ControlMode::Manual),
            other => Err(Error::Parse(format!("unknown mode '{other}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CriticalArea {
    pub center: Point,
    pub eps: f64,
}

/// Absolute hand position `P_m(t)` with its timestamp.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OperatorInput {
    pub hand: Point,
    pub t_ms: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControllerConfig {
    /// Hand-to-robot scale factor τ.
    pub tau: f64,
    /// Per-tick bound on each increment component, pixels.
    pub cap: f64,
    /// Default critical-area radius ε, pixels.
    pub eps: f64,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self {
            tau: 1.0,
            cap: 50.0,
            eps: 50.0,
        }
    }
}

impl ControllerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau.is_finite() && self.tau > 0.0) {
            return Err(Error::Config("tau must be positive".into()));
        }
        if !(self.cap.is_finite() && self.cap > 0.0) {
            return Err(Error::Config("cap must be positive".into()));
        }
        if !(self.eps.is_finite() && self.eps > 0.0) {
            return Err(Error::Config("eps must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SwitchReason {
    CriticalArea,
    Takeover,
    ReArm,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub t_ms: u64,
    pub from: ControlMode,
    pub to: ControlMode,
    pub reason: SwitchReason,
}

#[derive(Clone, Debug, PartialEq)]
pub enum ControlEvent {
    Moved { from: Point, to: Point },
    ModeChanged(Transition),
    Collision { at: Point },
    Arrived { at: Point },
    Fault(String),
}

impl ControlEvent {
    /// Short tag used in session logs.
    pub fn tag(&self) -> &'static str {
        match self {
            ControlEvent::Moved { .. } => "moved",
            ControlEvent::ModeChanged(_) => "mode_changed",
            ControlEvent::Collision { .. } => "collision",
            ControlEvent::Arrived { .. } => "arrived",
            ControlEvent::Fault(_) => "fault",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ControllerState {
    pub mode: ControlMode,
    /// Robot / end-effector position `P_s(t)`.
    pub position: Point,
    /// Previous hand position and its timestamp.
    pub last_hand: Option<OperatorInput>,
    pub config: ControllerConfig,
    pub critical: Option<CriticalArea>,
    /// The critical area has not yet triggered a handover.
    pub armed: bool,
    pub collisions: u32,
    pub history: Vec<Transition>,
    /// Reward of the move made in the latest tick, if any.
    pub last_reward: Option<f64>,
}

impl ControllerState {
    pub fn new(position: Point, config: ControllerConfig) -> Self {
        Self {
            mode: ControlMode::Auto,
            position,
            last_hand: None,
            config,
            critical: None,
            armed: false,
            collisions: 0,
            history: Vec::new(),
            last_reward: None,
        }
    }

    fn switch(&mut self, to: ControlMode, reason: SwitchReason, t_ms: u64) -> Option<ControlEvent> {
        if self.mode == to {
            return None;
        }
        let tr = Transition {
            t_ms,
            from: self.mode,
            to,
            reason,
        };
        self.mode = to;
        self.history.push(tr);
        Some(ControlEvent::ModeChanged(tr))
    }

    /// Sets the hand reference without moving the robot, so the next input
    /// is applied as an increment from `hand`.
    pub fn anchor_hand(&mut self, hand: Point, t_ms: u64) {
        self.last_hand = Some(OperatorInput { hand, t_ms });
    }

    /// `P_s(t) = P_s(t−1) + τ·(P_m(t) − P_m(t−1))`, each component clamped to
    /// `±cap`. A move whose swept path leaves the free region is blocked and
    /// counted as a collision. The first input only sets the reference.
    pub fn manual_step(
        &mut self,
        input: OperatorInput,
        env: &mut VascEnv,
    ) -> Result<Vec<ControlEvent>> {
        if self.mode != ControlMode::Manual {
            return Err(Error::WrongMode("manual input outside MANUAL mode".into()));
        }
        if !(input.hand.x.is_finite() && input.hand.y.is_finite()) {
            return Err(Error::InvalidInput("non-finite hand position".into()));
        }
        let Some(prev) = self.last_hand else {
            self.last_hand = Some(input);
            return Ok(Vec::new());
        };
        if input.t_ms <= prev.t_ms {
            return Err(Error::InvalidInput(format!(
                "timestamp {} not after {}",
                input.t_ms, prev.t_ms
            )));
        }
        self.last_hand = Some(input);
        let (dx, dy) = self.increment(prev.hand, input.hand);
        let from = self.position;
        let to = from.offset(dx, dy);
        let mut events = Vec::new();
        let target = env.state().target;
        let commanded = dx.hypot(dy);
        if !env.grid().is_segment_free((from.x, from.y), (to.x, to.y)) {
            self.collisions += 1;
            self.last_reward = Some(reward(from.distance(target), commanded, false, true, env.config()));
            events.push(ControlEvent::Collision { at: from });
            return Ok(events);
        }
        if to != from {
            self.position = to;
            events.push(ControlEvent::Moved { from, to });
        }
        let was_done = env.state().done;
        let arrived = env.place(to);
        self.last_reward = Some(reward(to.distance(target), commanded, arrived, false, env.config()));
        if arrived && !was_done {
            events.push(ControlEvent::Arrived { at: to });
        }
        Ok(events)
    }

    /// Clamped, scaled hand increment.
    pub fn increment(&self, prev: Point, hand: Point) -> (f64, f64) {
        let c = self.config.cap;
        (
            (self.config.tau * (hand.x - prev.x)).clamp(-c, c),
            (self.config.tau * (hand.y - prev.y)).clamp(-c, c),
        )
    }

    /// Where the policy is steering: the armed critical area, else the
    /// episode target.
    pub fn auto_goal(&self, state: &EnvState) -> Point {
        match self.critical {
            Some(c) if self.armed => c.center,
            _ => state.target,
        }
    }

    /// One env step with the greedy policy action toward [`Self::auto_goal`].
    pub fn auto_step(
        &mut self,
        policy: Option<&dyn Policy>,
        env: &mut VascEnv,
    ) -> Result<Vec<ControlEvent>> {
        if self.mode != ControlMode::Auto {
            return Err(Error::WrongMode("autopilot step outside AUTO mode".into()));
        }
        let policy = policy.ok_or(Error::PolicyMissing)?;
        if env.state().done {
            return Ok(Vec::new());
        }
        let mut steer = *env.state();
        steer.target = self.auto_goal(env.state());
        let obs = observe(&steer, env.grid());
        let r = env.step(policy.act(&obs))?;
        self.last_reward = Some(r.reward);
        let from = self.position;
        self.position = r.next_state.position;
        let mut events = Vec::new();
        if r.hit_wall {
            self.collisions += 1;
            events.push(ControlEvent::Collision { at: from });
        } else {
            events.push(ControlEvent::Moved {
                from,
                to: self.position,
            });
        }
        if r.arrived {
            events.push(ControlEvent::Arrived { at: self.position });
        }
        Ok(events)
    }

    /// `ΔP = |P_s − P_critical| ≤ ε` while armed switches to MANUAL, once.
    pub fn check_switch(&mut self, t_ms: u64) -> Option<ControlEvent> {
        if self.mode != ControlMode::Auto || !self.armed {
            return None;
        }
        let c = self.critical?;
        if self.position.distance(c.center) <= c.eps {
            self.armed = false;
            self.last_hand = None;
            return self.switch(ControlMode::Manual, SwitchReason::CriticalArea, t_ms);
        }
        None
    }

    /// One controller tick: AUTO steps the policy then tests the switch;
    /// MANUAL applies the input if there is one.
    pub fn tick(
        &mut self,
        input: Option<OperatorInput>,
        policy: Option<&dyn Policy>,
        env: &mut VascEnv,
        t_ms: u64,
    ) -> Result<Vec<ControlEvent>> {
        self.last_reward = None;
        match self.mode {
            ControlMode::Auto => {
                let mut events = self.auto_step(policy, env)?;
                events.extend(self.check_switch(t_ms));
                Ok(events)
            }
            ControlMode::Manual => match input {
                Some(i) => self.manual_step(i, env),
                None => Ok(Vec::new()),
            },
        }
    }

    /// Stores a critical area (replacing any previous one) and arms the
    /// switch.
    pub fn mark_critical_area(
        &mut self,
        grid: &OccupancyGrid,
        center: Point,
        eps: f64,
    ) -> Result<CriticalArea> {
        if !(eps.is_finite() && eps > 0.0) {
            return Err(Error::InvalidInput("eps must be positive".into()));
        }
        if !grid.is_free(center.x, center.y) {
            return Err(Error::NotNavigable {
                x: center.x,
                y: center.y,
            });
        }
        let area = CriticalArea { center, eps };
        self.critical = Some(area);
        self.armed = true;
        Ok(area)
    }

    /// Operator override to MANUAL from any state.
    pub fn takeover(&mut self, t_ms: u64) -> Option<ControlEvent> {
        if self.mode == ControlMode::Manual {
            return None;
        }
        self.last_hand = None;
        self.switch(ControlMode::Manual, SwitchReason::Takeover, t_ms)
    }

    /// Hands control back to the policy.
    pub fn re_arm(&mut self, t_ms: u64) -> Option<ControlEvent> {
        self.switch(ControlMode::Auto, SwitchReason::ReArm, t_ms)
    }
}
