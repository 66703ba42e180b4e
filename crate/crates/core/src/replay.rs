//! Paced playback of a session log, and re-simulation of it from its
//! commands alone.

use std::collections::BTreeMap;
use std::io;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::Clock;
use crate::engine::StatusEvent;
use crate::log::{
    header, LogError, LogEvent, LogWriter, ObjectStatePayload, Stream, UserControllerPayload, UserUtterancePayload,
    UserViewPayload, WizardActionPayload,
};
use crate::model::{validate_scenario, GoalId, ProgressReport, RobotState, ScenarioError, WorldState};
use crate::protocol::ServerMessage;
use crate::session::{Command, Session, SessionError};

pub const DEFAULT_POS_TOL_M: f64 = 1e-9;
pub const DEFAULT_TIMING_TOL_TICKS: u64 = 0;

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error("speed factor must be positive, got {0}")]
    InvalidSpeed(f64),
    #[error("log has no scenario header")]
    MissingScenarioHeader,
    #[error("command at event {event_id} is stamped tick {tick}, before tick {previous}")]
    CommandOutOfRange { event_id: u64, tick: u64, previous: u64 },
    #[error("event {event_id} has an unreadable {stream} payload")]
    BadPayload { event_id: u64, stream: Stream },
    #[error("embedded scenario is invalid: {0}")]
    InvalidScenario(#[from] ScenarioError),
    #[error(transparent)]
    Session(#[from] SessionError),
    #[error(transparent)]
    Log(#[from] LogError),
}

/// The session's commands, in log order, with the tick they were applied at.
pub fn commands(events: &[LogEvent]) -> Result<Vec<(u64, Command)>, ReplayError> {
    let mut out = Vec::new();
    let mut previous = 0;
    for e in events.iter().skip(1) {
        let bad = || ReplayError::BadPayload {
            event_id: e.event_id,
            stream: e.stream.clone(),
        };
        let cmd = match e.stream {
            Stream::WizardAction => {
                let p: WizardActionPayload = e.decode().map_err(|_| bad())?;
                let received_ms = p.received_ms.unwrap_or(e.t_mono_ms);
                match (p.cancel_all, p.click) {
                    (true, _) => Command::CancelAll {
                        command_id: p.command_id,
                        received_ms,
                    },
                    (false, Some([x, y])) => Command::Click {
                        x,
                        y,
                        command_id: p.command_id,
                        received_ms,
                    },
                    (false, None) => return Err(bad()),
                }
            }
            Stream::UserUtterance => {
                let p: UserUtterancePayload = e.decode().map_err(|_| bad())?;
                Command::Utterance {
                    text: p.text,
                    received_ms: e.t_mono_ms,
                }
            }
            Stream::UserView => Command::ViewPose {
                pose: e.decode::<UserViewPayload>().map_err(|_| bad())?.pose,
            },
            Stream::UserController => {
                let p: UserControllerPayload = e.decode().map_err(|_| bad())?;
                Command::Controller {
                    action: p.action,
                    value: p.value,
                }
            }
            _ => continue,
        };
        if e.tick < previous {
            return Err(ReplayError::CommandOutOfRange {
                event_id: e.event_id,
                tick: e.tick,
                previous,
            });
        }
        previous = e.tick;
        out.push((e.tick, cmd));
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct Resimulation {
    /// World state at every tick; index = tick.
    pub trajectory: Vec<WorldState>,
    pub status: Vec<StatusEvent>,
}

/// Rebuilds the session from the embedded scenario and the logged commands,
/// up to the last tick the log mentions.
pub fn resimulate(events: &[LogEvent]) -> Result<Resimulation, ReplayError> {
    let last_tick = events.iter().map(|e| e.tick).max().unwrap_or(0);
    resimulate_to(events, last_tick)
}

/// As [`resimulate`], but runs to `last_tick` whatever the log covers.
pub fn resimulate_to(events: &[LogEvent], last_tick: u64) -> Result<Resimulation, ReplayError> {
    let head = header(events).map_err(|_| ReplayError::MissingScenarioHeader)?;
    let scenario = validate_scenario(head.scenario)?;
    let schedule = commands(events)?;

    let mut session: Session<io::Sink> =
        Session::new("resim", &scenario, head.snapshot, None::<LogWriter<io::Sink>>, Clock::manual())?;
    let mut trajectory = vec![session.world().clone()];
    let mut next = schedule.into_iter().peekable();
    while session.world().tick < last_tick {
        while let Some((_, cmd)) = next.next_if(|(t, _)| *t <= session.world().tick) {
            session.apply(cmd)?;
        }
        session.tick()?;
        trajectory.push(session.world().clone());
    }
    // Commands stamped at the final tick still change goal state.
    for (_, cmd) in next {
        session.apply(cmd)?;
    }
    Ok(Resimulation {
        trajectory,
        status: session.status_history().to_vec(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DivergenceReport {
    pub max_position_dev_m: f64,
    pub max_timing_dev_ticks: u64,
    pub first_divergent_tick: Option<u64>,
    pub events_compared: u64,
    /// Logged snapshots or statuses with no resimulated counterpart.
    pub unmatched: u64,
}

impl DivergenceReport {
    pub fn diverged(&self) -> bool {
        self.first_divergent_tick.is_some()
    }
}

fn planar(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// Compares logged snapshots and goal statuses against a re-simulation.
pub fn verify(events: &[LogEvent], pos_tol_m: f64, timing_tol_ticks: u64) -> Result<DivergenceReport, ReplayError> {
    let resim = resimulate(events)?;
    let mut rep = DivergenceReport {
        max_position_dev_m: 0.0,
        max_timing_dev_ticks: 0,
        first_divergent_tick: None,
        events_compared: 0,
        unmatched: 0,
    };
    let flag = |rep: &mut DivergenceReport, tick: u64| {
        rep.first_divergent_tick = Some(rep.first_divergent_tick.map_or(tick, |t| t.min(tick)));
    };

    // Resimulated transition ticks, in order, per (goal, status).
    let mut transitions: BTreeMap<(GoalId, &'static str), Vec<u64>> = BTreeMap::new();
    for s in &resim.status {
        transitions.entry((s.goal_id, s.status.name())).or_default().push(s.tick);
    }
    let mut used: BTreeMap<(GoalId, &'static str), usize> = BTreeMap::new();

    for e in events {
        match e.stream {
            Stream::RobotState => {
                let Ok(logged) = e.decode::<RobotState>() else {
                    rep.unmatched += 1;
                    continue;
                };
                let Some(w) = resim.trajectory.get(e.tick as usize) else {
                    rep.unmatched += 1;
                    continue;
                };
                rep.events_compared += 1;
                let dev = planar(logged.base.point(), w.robot.base.point());
                rep.max_position_dev_m = rep.max_position_dev_m.max(dev);
                if dev > pos_tol_m {
                    flag(&mut rep, e.tick);
                }
            }
            Stream::ObjectState => {
                let Ok(logged) = e.decode::<ObjectStatePayload>() else {
                    rep.unmatched += 1;
                    continue;
                };
                let Some(w) = resim.trajectory.get(e.tick as usize) else {
                    rep.unmatched += 1;
                    continue;
                };
                rep.events_compared += 1;
                for o in &logged.objects {
                    let dev = match w.objects.get(&o.id) {
                        Some(r) => planar(o.pose.point(), r.pose.point()),
                        None => f64::INFINITY,
                    };
                    rep.max_position_dev_m = rep.max_position_dev_m.max(dev);
                    if dev > pos_tol_m {
                        flag(&mut rep, e.tick);
                    }
                }
            }
            Stream::GoalStatus => {
                let Ok(logged) = e.decode::<StatusEvent>() else {
                    rep.unmatched += 1;
                    continue;
                };
                let key = (logged.goal_id, logged.status.name());
                let i = used.entry(key).or_default();
                match transitions.get(&key).and_then(|v| v.get(*i)) {
                    Some(&t) => {
                        *i += 1;
                        rep.events_compared += 1;
                        let dev = t.abs_diff(logged.tick);
                        rep.max_timing_dev_ticks = rep.max_timing_dev_ticks.max(dev);
                        if dev > timing_tol_ticks {
                            flag(&mut rep, logged.tick.min(t));
                        }
                    }
                    None => {
                        rep.unmatched += 1;
                        flag(&mut rep, logged.tick);
                    }
                }
            }
            _ => {}
        }
    }
    Ok(rep)
}

/// Turns a log into the messages an observer would have seen live, each
/// with its recorded session time.
pub fn observer_messages(events: &[LogEvent]) -> Vec<(u64, ServerMessage)> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < events.len() {
        let e = &events[i];
        i += 1;
        let msg = match e.stream {
            Stream::RobotState => {
                let Ok(robot) = e.decode::<RobotState>() else { continue };
                let objects = events
                    .get(i)
                    .filter(|n| n.stream == Stream::ObjectState && n.tick == e.tick)
                    .and_then(|n| n.decode::<ObjectStatePayload>().ok());
                if objects.is_some() {
                    i += 1;
                }
                match objects {
                    Some(p) if p.keyframe => ServerMessage::Keyframe {
                        tick: e.tick,
                        t_mono_ms: e.t_mono_ms,
                        robot,
                        objects: p.objects,
                    },
                    p => ServerMessage::StateDelta {
                        tick: e.tick,
                        t_mono_ms: e.t_mono_ms,
                        robot,
                        changed_objects: p.map(|p| p.objects).unwrap_or_default(),
                    },
                }
            }
            Stream::GoalStatus => match e.decode::<StatusEvent>() {
                Ok(s) => (&s).into(),
                Err(_) => continue,
            },
            Stream::Progress => match e.decode::<ProgressReport>() {
                Ok(p) => (&p).into(),
                Err(_) => continue,
            },
            Stream::UserUtterance => match e.decode::<UserUtterancePayload>() {
                Ok(u) => ServerMessage::RelayUtterance {
                    text: u.text,
                    command_id: u.command_id,
                },
                Err(_) => continue,
            },
            _ => continue,
        };
        out.push((e.t_mono_ms, msg));
    }
    out
}

#[cfg(feature = "net")]
#[derive(Debug, Clone, Default)]
pub struct PlaybackStats {
    pub emitted: u64,
    /// Largest |actual gap − recorded gap / speed| between consecutive
    /// emissions.
    pub max_gap_error_ms: f64,
}

#[cfg(feature = "net")]
/// Emits `items` at their recorded offsets divided by `speed`. Deadlines are
/// absolute from the first item, so scheduling error does not accumulate.
pub async fn playback<T>(
    items: Vec<(u64, T)>,
    speed: f64,
    mut emit: impl FnMut(T) -> bool,
) -> Result<PlaybackStats, ReplayError> {
    if !(speed > 0.0 && speed.is_finite()) {
        return Err(ReplayError::InvalidSpeed(speed));
    }
    let mut stats = PlaybackStats::default();
    let Some(t0) = items.first().map(|(t, _)| *t) else {
        return Ok(stats);
    };
    let start = tokio::time::Instant::now();
    let mut prev: Option<(u64, tokio::time::Instant)> = None;
    for (t, item) in items {
        let offset = std::time::Duration::from_secs_f64((t - t0) as f64 / 1000.0 / speed);
        tokio::time::sleep_until(start + offset).await;
        let now = tokio::time::Instant::now();
        if let Some((pt, pi)) = prev {
            let want = (t - pt) as f64 / speed;
            let got = now.duration_since(pi).as_secs_f64() * 1000.0;
            stats.max_gap_error_ms = stats.max_gap_error_ms.max((got - want).abs());
        }
        prev = Some((t, now));
        stats.emitted += 1;
        if !emit(item) {
            break;
        }
    }
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::log::{read_from, SnapshotRate};
    use crate::model::{starter_scenario, validate_scenario};

    fn recorded(schedule: &[(u64, Command)], ticks: u64) -> Vec<LogEvent> {
        let s = validate_scenario(starter_scenario()).unwrap();
        let clock = Clock::manual();
        let log = LogWriter::new(Vec::new(), "r", &s, SnapshotRate::EveryTick, clock.clone()).unwrap();
        let mut session = Session::new("r", &s, SnapshotRate::EveryTick, Some(log), clock).unwrap();
        session.run_schedule(schedule, ticks).unwrap();
        read_from(&session.into_log().unwrap().into_inner()[..]).unwrap()
    }

    fn click(x: f64, y: f64) -> Command {
        Command::Click {
            x,
            y,
            command_id: None,
            received_ms: 0,
        }
    }

    #[test]
    fn clean_log_has_no_divergence() {
        let ev = recorded(&[(0, click(3.5, 2.5)), (300, click(2.0, 3.5))], 600);
        let r = verify(&ev, DEFAULT_POS_TOL_M, 0).unwrap();
        assert_eq!(r.max_position_dev_m, 0.0);
        assert_eq!(r.max_timing_dev_ticks, 0);
        assert_eq!(r.first_divergent_tick, None);
        assert_eq!(r.unmatched, 0);
        assert!(r.events_compared > 600);
    }

    #[test]
    fn injected_shift_is_reported() {
        let mut ev = recorded(&[(0, click(4.0, 1.125))], 200);
        let i = ev.iter().position(|e| e.stream == Stream::RobotState && e.tick == 57).unwrap();
        let x = ev[i].payload["base"]["x"].as_f64().unwrap();
        ev[i].payload["base"]["x"] = (x + 0.1).into();
        let r = verify(&ev, DEFAULT_POS_TOL_M, 0).unwrap();
        assert!((r.max_position_dev_m - 0.1).abs() < 1e-9);
        assert_eq!(r.first_divergent_tick, Some(57));
    }

    #[test]
    fn truncated_log_covers_prefix() {
        let ev = recorded(&[(0, click(4.0, 1.125))], 300);
        let full = verify(&ev, DEFAULT_POS_TOL_M, 0).unwrap();
        let cut: Vec<_> = ev.iter().filter(|e| e.tick <= 120).cloned().collect();
        let r = verify(&cut, DEFAULT_POS_TOL_M, 0).unwrap();
        assert!(!r.diverged());
        assert!(r.events_compared < full.events_compared);
    }

    #[test]
    fn snapshots_are_not_needed() {
        let ev = recorded(&[(0, click(3.5, 2.5)), (500, click(7.5, 8.5))], 900);
        let stripped: Vec<_> = ev.iter().filter(|e| !e.stream.is_snapshot()).cloned().collect();
        let a = resimulate(&ev).unwrap();
        let b = resimulate_to(&stripped, 900).unwrap();
        assert_eq!(a.status, b.status);
        assert_eq!(a.trajectory, b.trajectory);
    }

    #[test]
    fn header_required() {
        let ev = recorded(&[], 5);
        assert!(matches!(resimulate(&ev[1..]), Err(ReplayError::MissingScenarioHeader)));
    }

    #[test]
    fn out_of_order_command() {
        let mut ev = recorded(&[(10, click(2.0, 3.5)), (20, click(3.0, 3.5))], 30);
        let actions: Vec<usize> =
            ev.iter().enumerate().filter(|(_, e)| e.stream == Stream::WizardAction).map(|(i, _)| i).collect();
        ev[actions[1]].tick = 5;
        assert!(matches!(resimulate(&ev), Err(ReplayError::CommandOutOfRange { tick: 5, .. })));
    }

    #[test]
    fn observer_stream_mirrors_snapshots() {
        let ev = recorded(&[(0, click(2.0, 3.5))], 150);
        let msgs = observer_messages(&ev);
        let keyframes = msgs.iter().filter(|(_, m)| matches!(m, ServerMessage::Keyframe { .. })).count();
        let deltas = msgs.iter().filter(|(_, m)| matches!(m, ServerMessage::StateDelta { .. })).count();
        assert_eq!(keyframes, 2);
        assert_eq!(keyframes + deltas, 150);
    }

    #[cfg(feature = "net")]
    #[tokio::test]
    async fn zero_speed_is_rejected() {
        let r = playback(vec![(0u64, ())], 0.0, |_| true).await;
        assert!(matches!(r, Err(ReplayError::InvalidSpeed(_))));
    }

    #[cfg(feature = "net")]
    #[tokio::test]
    async fn pacing_follows_recorded_gaps() {
        let items: Vec<(u64, u64)> = (0..20).map(|i| (i * 20, i)).collect();
        let t = std::time::Instant::now();
        let stats = playback(items, 2.0, |_| true).await.unwrap();
        let span = t.elapsed().as_millis();
        assert_eq!(stats.emitted, 20);
        assert!((185..260).contains(&span), "{span}");
        assert!(stats.max_gap_error_ms <= 10.0, "{}", stats.max_gap_error_ms);
    }
}
