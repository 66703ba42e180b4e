//! One simulation session: world, engine, latency marks and log, advanced
//! only at tick boundaries.
//!
//! Inbound commands are applied in order with `apply`, then `tick` steps the
//! world. Both return the messages to fan out to clients. The live server,
//! in-process drivers and re-simulation all go through this type, which is
//! what makes a log re-simulate exactly.

use std::collections::VecDeque;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::Clock;
use crate::engine::{Engine, EngineError, StatusEvent};
use crate::latency::{LatencyMark, LatencyStore, MarkKind};
use crate::log::{
    snapshot_policy, LogError, LogWriter, ObjectStatePayload, Snapshot, SnapshotRate, Snapshotter, Stream,
    UserControllerPayload, UserUtterancePayload, UserViewPayload, WizardActionPayload,
};
use crate::log::CameraPose;
use crate::model::{CommandId, GoalId, GoalStatus, ValidatedScenario, WorldState};
use crate::protocol::ServerMessage;

/// A client input, already stamped with its server receipt time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Command {
    Click {
        x: f64,
        y: f64,
        command_id: Option<CommandId>,
        received_ms: u64,
    },
    CancelAll {
        command_id: Option<CommandId>,
        received_ms: u64,
    },
    Utterance {
        text: String,
        received_ms: u64,
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
        received_ms: u64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Audience {
    All,
    Wizard,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Outgoing {
    pub audience: Audience,
    pub msg: ServerMessage,
}

#[derive(Debug, Error)]
pub enum SessionError {
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Log(#[from] LogError),
}

#[derive(Debug, Clone)]
struct AwaitingMotion {
    command_id: CommandId,
    goal_id: GoalId,
    first_moving_tick: Option<u64>,
}

pub struct Session<W: Write = std::fs::File> {
    session_id: String,
    scenario: ValidatedScenario,
    engine: Engine,
    world: WorldState,
    latency: LatencyStore,
    snapshotter: Snapshotter,
    log: Option<LogWriter<W>>,
    clock: Clock,
    next_command_id: CommandId,
    pending_utterances: VecDeque<CommandId>,
    awaiting_motion: Vec<AwaitingMotion>,
    status_history: Vec<StatusEvent>,
    duplicate_marks: u64,
    last_snapshot: Option<Snapshot>,
}

impl<W: Write> Session<W> {
    pub fn new(
        session_id: &str,
        scenario: &ValidatedScenario,
        snapshot: SnapshotRate,
        log: Option<LogWriter<W>>,
        clock: Clock,
    ) -> Result<Self, SessionError> {
        let policy = snapshot_policy(snapshot, scenario.tick_ms())?;
        Ok(Session {
            session_id: session_id.to_string(),
            engine: Engine::new(scenario)?,
            world: WorldState::initial(scenario),
            scenario: scenario.clone(),
            latency: LatencyStore::new(),
            snapshotter: Snapshotter::new(policy),
            log,
            clock,
            next_command_id: 1,
            pending_utterances: VecDeque::new(),
            awaiting_motion: Vec::new(),
            status_history: Vec::new(),
            duplicate_marks: 0,
            last_snapshot: None,
        })
    }

    pub fn session_id(&self) -> &str {
        &self.session_id
    }

    pub fn scenario(&self) -> &ValidatedScenario {
        &self.scenario
    }

    pub fn world(&self) -> &WorldState {
        &self.world
    }

    pub fn engine(&self) -> &Engine {
        &self.engine
    }

    pub fn latency(&self) -> &LatencyStore {
        &self.latency
    }

    pub fn clock(&self) -> &Clock {
        &self.clock
    }

    /// Every goal status change so far, in emission order.
    pub fn status_history(&self) -> &[StatusEvent] {
        &self.status_history
    }

    pub fn duplicate_marks(&self) -> u64 {
        self.duplicate_marks
    }

    pub fn into_log(self) -> Option<LogWriter<W>> {
        self.log
    }

    fn now(&self) -> u64 {
        self.clock.now_ms()
    }

    fn record<T: Serialize>(&mut self, stream: Stream, payload: &T) -> Result<(), SessionError> {
        if let Some(log) = self.log.as_mut() {
            log.append(stream, payload, self.world.tick)?;
        }
        Ok(())
    }

    fn mark(&mut self, command_id: CommandId, kind: MarkKind, t_mono_ms: u64) -> Result<(), SessionError> {
        let m = LatencyMark {
            command_id,
            kind,
            t_mono_ms,
        };
        match self.latency.mark(m) {
            Ok(()) => self.record(Stream::LatencyMark, &m),
            Err(_) => {
                self.duplicate_marks += 1;
                Ok(())
            }
        }
    }

    fn fresh_command_id(&mut self) -> CommandId {
        let id = self.next_command_id;
        self.next_command_id += 1;
        id
    }

    /// Explicit id, else the oldest unanswered utterance, else a new id.
    fn command_for_wizard(&mut self, explicit: Option<CommandId>) -> CommandId {
        if let Some(id) = explicit {
            self.next_command_id = self.next_command_id.max(id + 1);
            self.pending_utterances.retain(|&p| p != id);
            return id;
        }
        match self.pending_utterances.pop_front() {
            Some(id) => id,
            None => self.fresh_command_id(),
        }
    }

    fn publish_statuses(&mut self, events: &[StatusEvent], out: &mut Vec<Outgoing>) -> Result<(), SessionError> {
        for s in events {
            self.record(Stream::GoalStatus, s)?;
            out.push(Outgoing {
                audience: Audience::All,
                msg: s.into(),
            });
            self.status_history.push(s.clone());
        }
        Ok(())
    }

    /// Applies one command at the current tick boundary.
    pub fn apply(&mut self, cmd: Command) -> Result<Vec<Outgoing>, SessionError> {
        let mut out = Vec::new();
        let tick = self.world.tick;
        match cmd {
            Command::Click {
                x,
                y,
                command_id,
                received_ms,
            } => {
                let cid = self.command_for_wizard(command_id);
                let repair = self.engine.active().is_some();
                self.mark(cid, MarkKind::WizardInput, received_ms)?;
                if repair {
                    self.mark(cid, MarkKind::RepairRequested, received_ms)?;
                }
                let target = self.engine.validate_target(&self.world, [x, y]);
                self.record(
                    Stream::WizardAction,
                    &WizardActionPayload {
                        click: Some([x, y]),
                        target: Some(target.resolved.clone()),
                        cancel_all: false,
                        command_id: Some(cid),
                        received_ms: Some(received_ms),
                    },
                )?;
                let Some(variant) = target.goal_variant() else {
                    out.push(Outgoing {
                        audience: Audience::Wizard,
                        msg: ServerMessage::error(
                            "illegal_click",
                            format!("({x:.2}, {y:.2}) is blocked or outside the room"),
                        ),
                    });
                    return Ok(out);
                };
                let (goal_id, events) = self.engine.submit_goal(&mut self.world, variant, Some(cid), tick)?;
                self.publish_statuses(&events, &mut out)?;
                match self.engine.goal(goal_id).map(|(_, s)| s) {
                    Some(GoalStatus::Active) => {
                        let now = self.now();
                        self.mark(cid, MarkKind::GoalActive, now)?;
                        if repair {
                            self.mark(cid, MarkKind::RepairActive, now)?;
                        }
                        self.awaiting_motion.push(AwaitingMotion {
                            command_id: cid,
                            goal_id,
                            first_moving_tick: None,
                        });
                        if let Ok(p) = self.engine.poll(goal_id) {
                            out.push(Outgoing {
                                audience: Audience::All,
                                msg: (&p).into(),
                            });
                        }
                    }
                    Some(GoalStatus::Rejected(reason)) => out.push(Outgoing {
                        audience: Audience::Wizard,
                        msg: ServerMessage::error("goal_rejected", reason.to_string()),
                    }),
                    _ => {}
                }
            }
            Command::CancelAll {
                command_id,
                received_ms,
            } => {
                let cid = self.command_for_wizard(command_id);
                let repair = self.engine.active().is_some();
                self.mark(cid, MarkKind::WizardInput, received_ms)?;
                if repair {
                    self.mark(cid, MarkKind::RepairRequested, received_ms)?;
                }
                self.record(
                    Stream::WizardAction,
                    &WizardActionPayload {
                        click: None,
                        target: None,
                        cancel_all: true,
                        command_id: Some(cid),
                        received_ms: Some(received_ms),
                    },
                )?;
                let (ids, events) = self.engine.cancel_all(&mut self.world, tick)?;
                self.publish_statuses(&events, &mut out)?;
                if repair {
                    let now = self.now();
                    self.mark(cid, MarkKind::RepairActive, now)?;
                }
                out.push(Outgoing {
                    audience: Audience::All,
                    msg: ServerMessage::Cancelled { goal_ids: ids, tick },
                });
            }
            Command::Utterance { text, received_ms } => {
                let cid = self.fresh_command_id();
                self.mark(cid, MarkKind::UserRequest, received_ms)?;
                self.record(
                    Stream::UserUtterance,
                    &UserUtterancePayload {
                        text: text.clone(),
                        command_id: cid,
                    },
                )?;
                self.pending_utterances.push_back(cid);
                out.push(Outgoing {
                    audience: Audience::Wizard,
                    msg: ServerMessage::RelayUtterance { text, command_id: cid },
                });
            }
            Command::ViewPose { pose } => self.record(Stream::UserView, &UserViewPayload { pose })?,
            Command::Controller { action, value } => {
                self.record(Stream::UserController, &UserControllerPayload { action, value })?
            }
            Command::AckDelta { tick: acked, received_ms } => {
                let (seen, rest): (Vec<_>, Vec<_>) = std::mem::take(&mut self.awaiting_motion)
                    .into_iter()
                    .partition(|a| a.first_moving_tick.is_some_and(|t| t <= acked));
                self.awaiting_motion = rest;
                for a in seen {
                    self.mark(a.command_id, MarkKind::FirstMotionPerceived, received_ms)?;
                    if let Ok(b) = self.latency.breakdown(a.command_id) {
                        out.push(Outgoing {
                            audience: Audience::All,
                            msg: (&b).into(),
                        });
                    }
                }
            }
        }
        Ok(out)
    }

    /// Steps the world by one tick.
    pub fn tick(&mut self) -> Result<Vec<Outgoing>, SessionError> {
        let mut out = Vec::new();
        let step = self.engine.tick(&self.world)?;
        self.world = step.world;
        self.clock.advance_to(self.world.tick * self.scenario.tick_ms());

        self.publish_statuses(&step.status_events, &mut out)?;
        if let Some(p) = &step.progress {
            self.record(Stream::Progress, p)?;
            out.push(Outgoing {
                audience: Audience::All,
                msg: p.into(),
            });
        }

        if let Some(snap) = self.snapshotter.observe(&self.world) {
            let robot = &snap.robot;
            self.record(Stream::RobotState, robot)?;
            if snap.keyframe || !snap.objects.is_empty() {
                self.record(
                    Stream::ObjectState,
                    &ObjectStatePayload {
                        keyframe: snap.keyframe,
                        objects: snap.objects.clone(),
                    },
                )?;
            }
            if robot.linear_velocity != 0.0 {
                for a in self.awaiting_motion.iter_mut().filter(|a| a.first_moving_tick.is_none()) {
                    a.first_moving_tick = Some(snap.tick);
                }
            }
            out.push(Outgoing {
                audience: Audience::All,
                msg: self.snapshot_message(&snap),
            });
            self.last_snapshot = Some(snap);
        }

        let engine = &self.engine;
        self.awaiting_motion.retain(|a| {
            a.first_moving_tick.is_some()
                || engine
                    .goal(a.goal_id)
                    .is_some_and(|(_, s)| !s.is_terminal())
        });
        Ok(out)
    }

    fn snapshot_message(&self, snap: &Snapshot) -> ServerMessage {
        let t_mono_ms = self.now();
        if snap.keyframe {
            ServerMessage::Keyframe {
                tick: snap.tick,
                t_mono_ms,
                robot: snap.robot.clone(),
                objects: snap.objects.clone(),
            }
        } else {
            ServerMessage::StateDelta {
                tick: snap.tick,
                t_mono_ms,
                robot: snap.robot.clone(),
                changed_objects: snap.objects.clone(),
            }
        }
    }

    /// Full state for a client that joins mid-session.
    pub fn keyframe(&self) -> ServerMessage {
        ServerMessage::Keyframe {
            tick: self.world.tick,
            t_mono_ms: self.now(),
            robot: self.world.robot.clone(),
            objects: self.world.objects.values().cloned().collect(),
        }
    }

    /// Applies every command scheduled for the current tick, then steps.
    /// `schedule` must be sorted by tick.
    pub fn run_schedule(&mut self, schedule: &[(u64, Command)], until_tick: u64) -> Result<Vec<Outgoing>, SessionError> {
        let mut out = Vec::new();
        let mut next = schedule.iter().peekable();
        while self.world.tick < until_tick {
            while let Some((_, cmd)) = next.next_if(|(t, _)| *t <= self.world.tick) {
                out.extend(self.apply(cmd.clone())?);
            }
            out.extend(self.tick()?);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::log::read_from;
    use crate::model::{starter_scenario, validate_scenario, WorldObject};
    use std::collections::BTreeMap;

    fn session() -> Session<Vec<u8>> {
        let s = validate_scenario(starter_scenario()).unwrap();
        let clock = Clock::manual();
        let log = LogWriter::new(Vec::new(), "t", &s, SnapshotRate::EveryTick, clock.clone()).unwrap();
        Session::new("t", &s, SnapshotRate::EveryTick, Some(log), clock).unwrap()
    }

    fn click(x: f64, y: f64, at: u64) -> Command {
        Command::Click {
            x,
            y,
            command_id: None,
            received_ms: at,
        }
    }

    #[test]
    fn illegal_click_goes_to_wizard_only() {
        let mut s = session();
        let out = s.apply(click(5.0, 5.0, 0)).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].audience, Audience::Wizard);
        assert!(matches!(&out[0].msg, ServerMessage::Error { code, .. } if code == "illegal_click"));
        assert!(s.engine().active().is_none());
    }

    #[test]
    fn floor_click_activates_navigation() {
        let mut s = session();
        let out = s.apply(click(2.0, 3.5, 0)).unwrap();
        assert!(out.iter().any(|o| matches!(o.msg, ServerMessage::GoalStatus { status: GoalStatus::Active, .. })));
    }

    #[test]
    fn two_clicks_in_one_tick_preempt() {
        let mut s = session();
        s.apply(click(2.0, 3.5, 0)).unwrap();
        s.apply(click(3.0, 3.5, 0)).unwrap();
        let h = s.status_history();
        assert!(h.iter().any(|e| e.goal_id == 1 && e.status == GoalStatus::Preempted));
        assert!(h.iter().any(|e| e.goal_id == 2 && e.status == GoalStatus::Active));
    }

    #[test]
    fn utterance_relays_and_correlates() {
        let mut s = session();
        let out = s
            .apply(Command::Utterance {
                text: "put the remote on the table".into(),
                received_ms: 0,
            })
            .unwrap();
        assert!(matches!(&out[0].msg, ServerMessage::RelayUtterance { command_id: 1, .. }));
        assert_eq!(out[0].audience, Audience::Wizard);
        s.run_schedule(&[], 80).unwrap();
        s.apply(click(3.5, 2.5, 800)).unwrap();
        let b = s.latency().breakdown(1).unwrap();
        assert_eq!(b.l1_ms, Some(800));
        assert_eq!(b.l2_ms, 0);
    }

    #[test]
    fn ack_after_motion_completes_trace() {
        let mut s = session();
        s.apply(Command::Utterance { text: "go".into(), received_ms: 0 }).unwrap();
        s.apply(click(4.0, 1.125, 0)).unwrap();
        s.tick().unwrap();
        let out = s.apply(Command::AckDelta { tick: 1, received_ms: 15 }).unwrap();
        assert!(matches!(out[0].msg, ServerMessage::Latency { l3_ms: Some(15), .. }));
    }

    #[test]
    fn cancel_marks_repair() {
        let mut s = session();
        s.apply(click(4.0, 1.125, 0)).unwrap();
        s.run_schedule(&[], 50).unwrap();
        let out = s.apply(Command::CancelAll { command_id: None, received_ms: 500 }).unwrap();
        assert!(out.iter().any(|o| matches!(&o.msg, ServerMessage::Cancelled { goal_ids, .. } if goal_ids == &vec![1])));
        assert!(s.latency().has(2, MarkKind::RepairActive));
    }

    #[test]
    fn deltas_reconstruct_world() {
        let mut s = session();
        let schedule = vec![
            (0, click(3.5, 2.5, 0)),
            (400, click(2.5, 8.5, 4000)),
        ];
        let mut client: BTreeMap<String, WorldObject> = BTreeMap::new();
        let mut next = schedule.iter().peekable();
        while s.world().tick < 1500 {
            while let Some((_, c)) = next.next_if(|(t, _)| *t <= s.world().tick) {
                s.apply(c.clone()).unwrap();
            }
            for o in s.tick().unwrap() {
                match o.msg {
                    ServerMessage::Keyframe { objects, robot, .. } => {
                        client = objects.into_iter().map(|o| (o.id.clone(), o)).collect();
                        assert_eq!(robot, s.world().robot);
                    }
                    ServerMessage::StateDelta { changed_objects, robot, .. } => {
                        for o in changed_objects {
                            client.insert(o.id.clone(), o);
                        }
                        assert_eq!(robot, s.world().robot);
                    }
                    _ => continue,
                }
                assert_eq!(client, s.world().objects);
            }
        }
        // The remote was carried, so deltas were exercised.
        assert_eq!(s.world().objects["remote"].resting_on.as_deref(), Some("table_left"));
    }

    #[test]
    fn log_is_readable() {
        let mut s = session();
        s.apply(click(2.0, 3.5, 0)).unwrap();
        s.run_schedule(&[], 20).unwrap();
        let bytes = s.into_log().unwrap().into_inner();
        let events = read_from(&bytes[..]).unwrap();
        assert!(events.iter().any(|e| e.stream == Stream::WizardAction));
        assert_eq!(events.iter().filter(|e| e.stream == Stream::RobotState).count(), 20);
    }
}
