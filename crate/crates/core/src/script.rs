//! Timed scripts that drive a live session through real websocket clients.
//!
//! ```text
//! # the remote scene
//! at 1000ms user says "put the remote on the table"
//! at 1800ms wizard clicks (3.5, 2.5)
//! at 6000ms wizard cancels
//! at 0ms user views (5, 1.6, 0) (0, 0, 0, 1)
//! at 2500ms user controller "trigger" 1.0
//! at 20000ms end
//! ```

use std::collections::BTreeMap;
use std::str::FromStr;
use std::time::Duration;

use thiserror::Error;
use tokio::sync::mpsc;
use tokio::time::Instant;

use crate::client::{ClientError, WsClient};
use crate::log::CameraPose;
use crate::model::GoalId;
use crate::protocol::{ClientMessage, ClientRole, ServerMessage};

#[derive(Debug, Clone, PartialEq)]
pub enum Action {
    Says(String),
    Clicks(f64, f64),
    Cancels,
    Views(CameraPose),
    Controller(String, f64),
    End,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScriptLine {
    pub at_ms: u64,
    pub line: usize,
    pub action: Action,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Script {
    pub lines: Vec<ScriptLine>,
}

#[derive(Debug, Error, PartialEq)]
#[error("ScriptParseError({line}): {detail}")]
pub struct ScriptParseError {
    pub line: usize,
    pub detail: String,
}

#[derive(Debug, Error)]
pub enum ScriptError {
    #[error(transparent)]
    Client(#[from] ClientError),
    #[error("wizard role refused: {0}")]
    Refused(String),
    #[error("server closed the connection")]
    Closed,
}

fn numbers(s: &str) -> Option<Vec<f64>> {
    let inner = s.trim().strip_prefix('(')?.strip_suffix(')')?;
    inner.split(',').map(|p| p.trim().parse().ok()).collect()
}

fn quoted(s: &str) -> Option<(String, &str)> {
    let rest = s.trim_start().strip_prefix('"')?;
    let end = rest.find('"')?;
    Some((rest[..end].to_string(), &rest[end + 1..]))
}

fn parse_action(s: &str) -> Option<Action> {
    if s == "end" {
        return Some(Action::End);
    }
    if let Some(rest) = s.strip_prefix("user says ") {
        let (text, tail) = quoted(rest)?;
        return tail.trim().is_empty().then_some(Action::Says(text));
    }
    if let Some(rest) = s.strip_prefix("wizard clicks ") {
        let v = numbers(rest)?;
        return (v.len() == 2).then(|| Action::Clicks(v[0], v[1]));
    }
    if s == "wizard cancels" {
        return Some(Action::Cancels);
    }
    if let Some(rest) = s.strip_prefix("user views ") {
        let split = rest.find(')')? + 1;
        let p = numbers(&rest[..split])?;
        let q = numbers(&rest[split..])?;
        if p.len() != 3 || q.len() != 4 {
            return None;
        }
        return Some(Action::Views(CameraPose {
            position: [p[0], p[1], p[2]],
            rotation: [q[0], q[1], q[2], q[3]],
        }));
    }
    if let Some(rest) = s.strip_prefix("user controller ") {
        let (action, tail) = quoted(rest)?;
        return Some(Action::Controller(action, tail.trim().parse().ok()?));
    }
    None
}

impl FromStr for Script {
    type Err = ScriptParseError;

    fn from_str(src: &str) -> Result<Self, Self::Err> {
        let mut lines = Vec::new();
        for (i, raw) in src.lines().enumerate() {
            let line = i + 1;
            let s = raw.trim();
            if s.is_empty() || s.starts_with('#') {
                continue;
            }
            let err = |detail: &str| ScriptParseError {
                line,
                detail: detail.to_string(),
            };
            let rest = s.strip_prefix("at ").ok_or_else(|| err("expected `at <N>ms`"))?;
            let (time, action) = rest.split_once(' ').ok_or_else(|| err("missing action"))?;
            let at_ms = time
                .strip_suffix("ms")
                .and_then(|n| n.parse().ok())
                .ok_or_else(|| err("bad time"))?;
            let action = parse_action(action.trim()).ok_or_else(|| err("unknown action"))?;
            lines.push(ScriptLine { at_ms, line, action });
        }
        lines.sort_by_key(|l| l.at_ms);
        Ok(Script { lines })
    }
}

impl Script {
    pub fn is_empty(&self) -> bool {
        self.lines.is_empty()
    }

    fn end_ms(&self) -> Option<u64> {
        self.lines.iter().find(|l| l.action == Action::End).map(|l| l.at_ms)
    }
}

/// What each scripted client saw.
#[derive(Debug, Default)]
pub struct ScriptOutcome {
    pub wizard: Vec<ServerMessage>,
    pub user: Vec<ServerMessage>,
}

/// Keeps the user's view acknowledged: every moving state update is acked
/// straight back, which is what timestamps first perceived motion.
async fn user_actor(mut c: WsClient, mut cmds: mpsc::UnboundedReceiver<ClientMessage>) -> Vec<ServerMessage> {
    let mut seen = Vec::new();
    loop {
        tokio::select! {
            m = cmds.recv() => match m {
                Some(m) => { let _ = c.send(&m).await; }
                None => break,
            },
            m = c.recv() => {
                let Some(m) = m else { break };
                let moving = match &m {
                    ServerMessage::StateDelta { tick, robot, .. } | ServerMessage::Keyframe { tick, robot, .. } => {
                        (robot.linear_velocity != 0.0).then_some(*tick)
                    }
                    _ => None,
                };
                if let Some(tick) = moving {
                    let _ = c.send(&ClientMessage::AckDelta { tick }).await;
                } else {
                    seen.push(m);
                }
            }
        }
    }
    c.close().await;
    seen
}

#[derive(Debug, Default)]
struct WizardView {
    live: BTreeMap<GoalId, bool>,
    moving: bool,
    messages: Vec<ServerMessage>,
}

impl WizardView {
    fn observe(&mut self, m: ServerMessage) {
        match &m {
            ServerMessage::StateDelta { robot, .. } | ServerMessage::Keyframe { robot, .. } => {
                self.moving = robot.linear_velocity != 0.0;
                return;
            }
            ServerMessage::GoalStatus { goal_id, status, .. } => {
                self.live.insert(*goal_id, !status.is_terminal());
            }
            _ => {}
        }
        self.messages.push(m);
    }

    fn settled(&self) -> bool {
        !self.moving && self.live.values().all(|l| !l)
    }
}

/// Runs `script` against the server at `url`. Without an `end` line the run
/// finishes once every goal is terminal and the robot is still, or after
/// `settle_limit` past the last line.
pub async fn run_script(url: &str, script: &Script, settle_limit: Duration) -> Result<ScriptOutcome, ScriptError> {
    let mut wizard = WsClient::connect(url, ClientRole::Wizard).await?;
    match wizard.recv().await {
        Some(ServerMessage::Welcome { .. }) => {}
        Some(ServerMessage::Refused { code }) => return Err(ScriptError::Refused(code)),
        _ => return Err(ScriptError::Closed),
    }
    let user = WsClient::connect(url, ClientRole::User).await?;
    let (user_tx, user_rx) = mpsc::unbounded_channel();
    let user_task = tokio::spawn(user_actor(user, user_rx));

    let start = Instant::now();
    let mut view = WizardView::default();
    let end_at = script.end_ms();
    for l in &script.lines {
        let due = start + Duration::from_millis(l.at_ms);
        while let Ok(Some(m)) = tokio::time::timeout_at(due, wizard.recv()).await {
            view.observe(m);
        }
        match &l.action {
            Action::Says(text) => {
                let _ = user_tx.send(ClientMessage::Utterance { text: text.clone() });
            }
            Action::Views(pose) => {
                let _ = user_tx.send(ClientMessage::ViewPose { pose: *pose });
            }
            Action::Controller(action, value) => {
                let _ = user_tx.send(ClientMessage::Controller {
                    action: action.clone(),
                    value: *value,
                });
            }
            Action::Clicks(x, y) => {
                wizard
                    .send(&ClientMessage::Click {
                        x: *x,
                        y: *y,
                        command_id: None,
                    })
                    .await?
            }
            Action::Cancels => wizard.send(&ClientMessage::CancelAll {}).await?,
            Action::End => break,
        }
    }

    if end_at.is_none() {
        // Let the last command register before judging whether things settled.
        let grace = Instant::now() + Duration::from_millis(100);
        while let Ok(Some(m)) = tokio::time::timeout_at(grace, wizard.recv()).await {
            view.observe(m);
        }
        let limit = Instant::now() + settle_limit;
        while !view.settled() {
            match tokio::time::timeout_at(limit, wizard.recv()).await {
                Ok(Some(m)) => view.observe(m),
                _ => break,
            }
        }
    }
    // Give in-flight acks a moment to land before the clients go away.
    let drain = Instant::now() + Duration::from_millis(50);
    while let Ok(Some(m)) = tokio::time::timeout_at(drain, wizard.recv()).await {
        view.observe(m);
    }

    drop(user_tx);
    let user = user_task.await.unwrap_or_default();
    wizard.close().await;
    Ok(ScriptOutcome {
        wizard: view.messages,
        user,
    })
}
