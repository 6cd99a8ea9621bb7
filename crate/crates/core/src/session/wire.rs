use serde::{Deserialize, Serialize};

use crate::semi_auto::ControlMode;

/// Messages from the cockpit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ClientMsg {
    HandDelta {
        dx: f64,
        dy: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        t_ms: Option<u64>,
    },
    Takeover,
    ReArm,
    MarkCritical {
        x: f64,
        y: f64,
        eps: f64,
    },
    Start,
    Pause,
    Reset {
        seed: u64,
    },
}

impl ClientMsg {
    /// Parses and validates one text frame; the error is the reason sent
    /// back to the client.
    pub fn parse(text: &str) -> Result<Self, String> {
        let msg: ClientMsg = serde_json::from_str(text).map_err(|e| format!("invalid message: {e}"))?;
        msg.validate()?;
        Ok(msg)
    }

    pub fn validate(&self) -> Result<(), String> {
        match *self {
            ClientMsg::HandDelta { dx, dy, .. } if !(dx.is_finite() && dy.is_finite()) => {
                Err("hand_delta: dx and dy must be finite".into())
            }
            ClientMsg::MarkCritical { x, y, eps } => {
                if !(x.is_finite() && y.is_finite()) {
                    Err("mark_critical: x and y must be finite".into())
                } else if !(eps.is_finite() && eps > 0.0) {
                    Err("mark_critical: eps must be positive".into())
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CriticalWire {
    pub x: f64,
    pub y: f64,
    pub eps: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    ModeChanged,
    Collision,
    Arrived,
    Fault,
}

/// Messages to the cockpit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMsg {
    State {
        tick: u64,
        t_ms: u64,
        robot: [f64; 2],
        target: [f64; 2],
        mode: ControlMode,
        critical: Option<CriticalWire>,
        reward: f64,
        collisions: u32,
        done: bool,
    },
    Event {
        kind: EventKind,
        detail: String,
    },
    Map {
        width: u32,
        height: u32,
        png_base64: String,
    },
    Error {
        reason: String,
    },
}

impl ServerMsg {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("server messages serialize")
    }

    pub fn error(reason: impl Into<String>) -> Self {
        ServerMsg::Error { reason: reason.into() }
    }

    pub fn event(kind: EventKind, detail: impl Into<String>) -> Self {
        ServerMsg::Event {
            kind,
            detail: detail.into(),
        }
    }
}
