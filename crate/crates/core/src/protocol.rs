//! Wire messages. One JSON object per websocket text frame, tagged by
//! `type`.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::engine::StatusEvent;
use crate::latency::LatencyBreakdown;
use crate::log::CameraPose;
use crate::model::{CommandId, GoalId, GoalStatus, Phase, ProgressReport, RobotState, ScenarioConfig, WorldObject};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClientRole {
    Wizard,
    User,
    Observer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ClientMessage {
    Hello {
        role: ClientRole,
        #[serde(default)]
        client_info: Option<Value>,
    },
    Click {
        x: f64,
        y: f64,
        #[serde(default)]
        command_id: Option<CommandId>,
    },
    CancelAll {},
    Utterance {
        text: String,
    },
    ViewPose {
        pose: CameraPose,
    },
    Controller {
        action: String,
        value: f64,
    },
    AckDelta {
        tick: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMessage {
    Welcome {
        session_id: String,
        scenario: ScenarioConfig,
    },
    Refused {
        code: String,
    },
    StateDelta {
        tick: u64,
        t_mono_ms: u64,
        robot: RobotState,
        changed_objects: Vec<WorldObject>,
    },
    Keyframe {
        tick: u64,
        t_mono_ms: u64,
        robot: RobotState,
        objects: Vec<WorldObject>,
    },
    GoalStatus {
        goal_id: GoalId,
        status: GoalStatus,
        tick: u64,
        command_id: Option<CommandId>,
    },
    Cancelled {
        goal_ids: Vec<GoalId>,
        tick: u64,
    },
    Progress {
        goal_id: GoalId,
        phase: Phase,
        fraction: f64,
        est_remaining_ms: u64,
    },
    Error {
        code: String,
        message: String,
    },
    RelayUtterance {
        text: String,
        command_id: CommandId,
    },
    Latency {
        command_id: CommandId,
        l1_ms: Option<i64>,
        l2_ms: i64,
        l3_ms: Option<i64>,
        l4_ms: Option<i64>,
    },
    /// Sent to observers when a replayed log has been fully emitted.
    End {},
}

impl ServerMessage {
    pub fn error(code: &str, message: impl Into<String>) -> Self {
        ServerMessage::Error {
            code: code.to_string(),
            message: message.into(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("server messages always serialize")
    }
}

impl From<&StatusEvent> for ServerMessage {
    fn from(s: &StatusEvent) -> Self {
        ServerMessage::GoalStatus {
            goal_id: s.goal_id,
            status: s.status,
            tick: s.tick,
            command_id: s.command_id,
        }
    }
}

impl From<&ProgressReport> for ServerMessage {
    fn from(p: &ProgressReport) -> Self {
        ServerMessage::Progress {
            goal_id: p.goal_id,
            phase: p.phase,
            fraction: p.fraction,
            est_remaining_ms: p.est_remaining_ms,
        }
    }
}

impl From<&LatencyBreakdown> for ServerMessage {
    fn from(b: &LatencyBreakdown) -> Self {
        ServerMessage::Latency {
            command_id: b.command_id,
            l1_ms: b.l1_ms,
            l2_ms: b.l2_ms,
            l3_ms: b.l3_ms,
            l4_ms: b.l4_ms,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn client_messages_parse() {
        let m: ClientMessage = serde_json::from_str(r#"{"type":"click","x":2.0,"y":3.5}"#).unwrap();
        assert_eq!(m, ClientMessage::Click { x: 2.0, y: 3.5, command_id: None });
        let m: ClientMessage = serde_json::from_str(r#"{"type":"cancel_all"}"#).unwrap();
        assert_eq!(m, ClientMessage::CancelAll {});
        let m: ClientMessage =
            serde_json::from_str(r#"{"type":"hello","role":"observer","client_info":{"ua":"x"}}"#).unwrap();
        assert!(matches!(m, ClientMessage::Hello { role: ClientRole::Observer, .. }));
        assert!(serde_json::from_str::<ClientMessage>(r#"{"type":"click"}"#).is_err());
    }

    #[test]
    fn server_error_shape() {
        let v: Value = serde_json::from_str(&ServerMessage::error("illegal_click", "blocked").to_json()).unwrap();
        assert_eq!(v["type"], "error");
        assert_eq!(v["code"], "illegal_click");
    }
}
