//! Append-only JSONL session log.
//!
//! One event per line, fields in the order
//! `event_id, session_id, tick, t_mono_ms, t_wall_ms, stream, payload`.
//! Line 1 is always a `scenario` event carrying the full scenario, so a log
//! file is self-contained for replay. Each append is written and flushed as
//! a single line, so a file cut at any line boundary stays readable.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::{File, OpenOptions};
use std::io::{self, BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::Value;
use thiserror::Error;

use crate::clock::{wall_ms, Clock};
use crate::engine::{Resolved, StatusEvent};
use crate::latency::LatencyMark;
use crate::model::{
    CommandId, ObjectId, Point, ProgressReport, RobotState, ScenarioConfig, ValidatedScenario,
    WorldObject, WorldState,
};

pub const LOG_SUFFIX: &str = ".woz.jsonl";

/// Snapshots between full object keyframes.
pub const KEYFRAME_EVERY: u64 = 100;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Stream {
    WizardAction,
    RobotState,
    ObjectState,
    UserView,
    UserController,
    UserUtterance,
    GoalStatus,
    Progress,
    LatencyMark,
    Scenario,
    /// A stream this version does not know; kept verbatim.
    Other(String),
}

impl Stream {
    pub fn as_str(&self) -> &str {
        match self {
            Stream::WizardAction => "wizard_action",
            Stream::RobotState => "robot_state",
            Stream::ObjectState => "object_state",
            Stream::UserView => "user_view",
            Stream::UserController => "user_controller",
            Stream::UserUtterance => "user_utterance",
            Stream::GoalStatus => "goal_status",
            Stream::Progress => "progress",
            Stream::LatencyMark => "latency_mark",
            Stream::Scenario => "scenario",
            Stream::Other(s) => s,
        }
    }

    pub fn parse(s: &str) -> Self {
        match s {
            "wizard_action" => Stream::WizardAction,
            "robot_state" => Stream::RobotState,
            "object_state" => Stream::ObjectState,
            "user_view" => Stream::UserView,
            "user_controller" => Stream::UserController,
            "user_utterance" => Stream::UserUtterance,
            "goal_status" => Stream::GoalStatus,
            "progress" => Stream::Progress,
            "latency_mark" => Stream::LatencyMark,
            "scenario" => Stream::Scenario,
            other => Stream::Other(other.to_string()),
        }
    }

    /// The five streams every scripted session must cover: wizard clicks,
    /// robot base and joints, object poses, user camera and user controller.
    pub const REQUIRED: [Stream; 5] = [
        Stream::WizardAction,
        Stream::RobotState,
        Stream::ObjectState,
        Stream::UserView,
        Stream::UserController,
    ];

    /// Snapshot streams; re-simulation never needs them.
    pub fn is_snapshot(&self) -> bool {
        matches!(self, Stream::RobotState | Stream::ObjectState)
    }
}

impl fmt::Display for Stream {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl Serialize for Stream {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for Stream {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        Ok(Stream::parse(&String::deserialize(d)?))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEvent {
    pub event_id: u64,
    pub session_id: String,
    pub tick: u64,
    pub t_mono_ms: u64,
    pub t_wall_ms: u64,
    pub stream: Stream,
    pub payload: Value,
}

impl LogEvent {
    pub fn decode<T: DeserializeOwned>(&self) -> Result<T, serde_json::Error> {
        T::deserialize(&self.payload)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SnapshotRate {
    EveryTick,
    #[serde(untagged)]
    Hz(u32),
}

impl std::str::FromStr for SnapshotRate {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "every-tick" | "every_tick" => Ok(SnapshotRate::EveryTick),
            n => n
                .parse()
                .map(SnapshotRate::Hz)
                .map_err(|_| format!("expected a rate in Hz or `every-tick`, got `{n}`")),
        }
    }
}

// Payloads, one per known stream.

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioPayload {
    pub scenario: ScenarioConfig,
    pub snapshot: SnapshotRate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WizardActionPayload {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub click: Option<Point>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<Resolved>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub cancel_all: bool,
    #[serde(default)]
    pub command_id: Option<CommandId>,
    /// Server receipt time, before the command waited for a tick boundary.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub received_ms: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectStatePayload {
    pub keyframe: bool,
    pub objects: Vec<WorldObject>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraPose {
    pub position: [f64; 3],
    /// Quaternion `[x, y, z, w]`.
    pub rotation: [f64; 4],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UserViewPayload {
    pub pose: CameraPose,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UserControllerPayload {
    pub action: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UserUtterancePayload {
    pub text: String,
    pub command_id: CommandId,
}

fn check<T: DeserializeOwned>(payload: &Value) -> Result<(), String> {
    T::deserialize(payload).map(|_| ()).map_err(|e| e.to_string())
}

/// Checks that `payload` has the shape `stream` requires. Unknown streams
/// accept anything.
pub fn validate_payload(stream: &Stream, payload: &Value) -> Result<(), String> {
    match stream {
        Stream::Scenario => check::<ScenarioPayload>(payload),
        Stream::WizardAction => check::<WizardActionPayload>(payload),
        Stream::RobotState => check::<RobotState>(payload),
        Stream::ObjectState => check::<ObjectStatePayload>(payload),
        Stream::UserView => check::<UserViewPayload>(payload),
        Stream::UserController => check::<UserControllerPayload>(payload),
        Stream::UserUtterance => check::<UserUtterancePayload>(payload),
        Stream::GoalStatus => check::<StatusEvent>(payload),
        Stream::Progress => check::<ProgressReport>(payload),
        Stream::LatencyMark => check::<LatencyMark>(payload),
        Stream::Other(_) => Ok(()),
    }
}

#[derive(Debug, Error)]
pub enum LogError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("refusing to overwrite existing session log {0}")]
    RefusedExisting(PathBuf),
    #[error("payload does not match stream `{stream}`: {detail}")]
    SchemaViolation { stream: Stream, detail: String },
    #[error("line {0}: malformed event")]
    MalformedLine(usize),
    #[error("line {line}: payload does not match stream `{stream}`")]
    InvalidPayload { line: usize, stream: Stream },
    #[error("line {0}: t_mono_ms went backwards")]
    NonMonotonicTimestamp(usize),
    #[error("line {0}: event_id did not increase")]
    NonMonotonicEventId(usize),
    #[error("first line is not a scenario header")]
    MissingScenarioHeader,
    #[error("snapshot rate must divide the tick rate")]
    InvalidRate,
}

pub fn log_path(dir: &Path, session_id: &str) -> PathBuf {
    dir.join(format!("{session_id}{LOG_SUFFIX}"))
}

/// The single writer for one session.
pub struct LogWriter<W: Write = File> {
    out: W,
    session_id: String,
    next_event_id: u64,
    last_mono: u64,
    clock: Clock,
}

impl LogWriter<File> {
    /// Creates `path` and writes the scenario header. An existing file is
    /// never appended to.
    pub fn create(
        path: &Path,
        session_id: &str,
        scenario: &ValidatedScenario,
        snapshot: SnapshotRate,
        clock: Clock,
    ) -> Result<Self, LogError> {
        let file = OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(path)
            .map_err(|e| match e.kind() {
                io::ErrorKind::AlreadyExists => LogError::RefusedExisting(path.to_path_buf()),
                _ => LogError::Io(e),
            })?;
        LogWriter::new(file, session_id, scenario, snapshot, clock)
    }
}

impl<W: Write> LogWriter<W> {
    pub fn new(
        out: W,
        session_id: &str,
        scenario: &ValidatedScenario,
        snapshot: SnapshotRate,
        clock: Clock,
    ) -> Result<Self, LogError> {
        let mut writer = LogWriter {
            out,
            session_id: session_id.to_string(),
            next_event_id: 0,
            last_mono: 0,
            clock,
        };
        let header = ScenarioPayload {
            scenario: scenario.config().clone(),
            snapshot,
        };
        writer.append(Stream::Scenario, &header, 0)?;
        Ok(writer)
    }

    pub fn session_id(&self) -> &str {
        &self.session_id
    }

    /// Stamps, validates and writes one event. Returns its event_id.
    pub fn append<T: Serialize>(&mut self, stream: Stream, payload: &T, tick: u64) -> Result<u64, LogError> {
        let payload = serde_json::to_value(payload).map_err(|e| LogError::SchemaViolation {
            stream: stream.clone(),
            detail: e.to_string(),
        })?;
        validate_payload(&stream, &payload)
            .map_err(|detail| LogError::SchemaViolation { stream: stream.clone(), detail })?;
        let t_mono_ms = self.clock.now_ms().max(self.last_mono);
        let event = LogEvent {
            event_id: self.next_event_id,
            session_id: self.session_id.clone(),
            tick,
            t_mono_ms,
            t_wall_ms: wall_ms(),
            stream,
            payload,
        };
        self.write_event(&event)?;
        self.last_mono = t_mono_ms;
        self.next_event_id += 1;
        Ok(event.event_id)
    }

    fn write_event(&mut self, event: &LogEvent) -> Result<(), LogError> {
        let mut line = serde_json::to_vec(event).map_err(io::Error::from)?;
        line.push(b'\n');
        self.out.write_all(&line)?;
        self.out.flush()?;
        Ok(())
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

/// Writes already-stamped events verbatim, e.g. after editing a log.
pub fn write_events<W: Write>(mut out: W, events: &[LogEvent]) -> io::Result<()> {
    for e in events {
        let mut line = serde_json::to_vec(e)?;
        line.push(b'\n');
        out.write_all(&line)?;
    }
    out.flush()
}

pub fn read(path: &Path) -> Result<Vec<LogEvent>, LogError> {
    read_from(BufReader::new(File::open(path)?))
}

/// Parses and validates a whole log. A final line without its newline is a
/// torn write and is dropped if it does not parse.
pub fn read_from<R: Read>(reader: R) -> Result<Vec<LogEvent>, LogError> {
    let mut reader = BufReader::new(reader);
    let mut events: Vec<LogEvent> = Vec::new();
    let mut buf = String::new();
    let mut line_no = 0;
    loop {
        buf.clear();
        if reader.read_line(&mut buf)? == 0 {
            break;
        }
        line_no += 1;
        let complete = buf.ends_with('\n');
        let event: LogEvent = match serde_json::from_str(buf.trim_end_matches(['\n', '\r'])) {
            Ok(e) => e,
            Err(_) if !complete => break,
            Err(_) => return Err(LogError::MalformedLine(line_no)),
        };
        if line_no == 1 && (event.stream != Stream::Scenario || event.event_id != 0) {
            return Err(LogError::MissingScenarioHeader);
        }
        if validate_payload(&event.stream, &event.payload).is_err() {
            if line_no == 1 {
                return Err(LogError::MissingScenarioHeader);
            }
            return Err(LogError::InvalidPayload {
                line: line_no,
                stream: event.stream,
            });
        }
        if let Some(prev) = events.last() {
            if event.event_id <= prev.event_id {
                return Err(LogError::NonMonotonicEventId(line_no));
            }
            if event.t_mono_ms < prev.t_mono_ms {
                return Err(LogError::NonMonotonicTimestamp(line_no));
            }
        }
        events.push(event);
    }
    if events.is_empty() {
        return Err(LogError::MissingScenarioHeader);
    }
    Ok(events)
}

/// The scenario header of a parsed log.
pub fn header(events: &[LogEvent]) -> Result<ScenarioPayload, LogError> {
    events
        .first()
        .filter(|e| e.stream == Stream::Scenario)
        .and_then(|e| e.decode().ok())
        .ok_or(LogError::MissingScenarioHeader)
}

/// Which ticks produce a snapshot.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SnapshotPolicy {
    pub interval_ticks: u64,
}

impl SnapshotPolicy {
    pub fn due(&self, tick: u64) -> bool {
        tick % self.interval_ticks == 0
    }
}

/// Every tick, or `hz` times per second when `hz` evenly divides the tick
/// rate.
pub fn snapshot_policy(rate: SnapshotRate, tick_ms: u64) -> Result<SnapshotPolicy, LogError> {
    match rate {
        SnapshotRate::EveryTick => Ok(SnapshotPolicy { interval_ticks: 1 }),
        SnapshotRate::Hz(hz) => {
            let per_snapshot = u64::from(hz) * tick_ms;
            if hz == 0 || tick_ms == 0 || 1000 % per_snapshot != 0 {
                return Err(LogError::InvalidRate);
            }
            Ok(SnapshotPolicy {
                interval_ticks: 1000 / per_snapshot,
            })
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub tick: u64,
    pub keyframe: bool,
    pub robot: RobotState,
    /// All objects on a keyframe, otherwise only the changed ones.
    pub objects: Vec<WorldObject>,
}

/// Turns world states into keyframes and deltas. Shared by the log and the
/// wire so both carry the same snapshots.
#[derive(Debug, Clone)]
pub struct Snapshotter {
    policy: SnapshotPolicy,
    count: u64,
    last: BTreeMap<ObjectId, WorldObject>,
}

impl Snapshotter {
    pub fn new(policy: SnapshotPolicy) -> Self {
        Snapshotter {
            policy,
            count: 0,
            last: BTreeMap::new(),
        }
    }

    pub fn policy(&self) -> SnapshotPolicy {
        self.policy
    }

    pub fn observe(&mut self, world: &WorldState) -> Option<Snapshot> {
        if !self.policy.due(world.tick) {
            return None;
        }
        let keyframe = self.count % KEYFRAME_EVERY == 0;
        self.count += 1;
        let objects: Vec<WorldObject> = world
            .objects
            .values()
            .filter(|o| keyframe || self.last.get(&o.id) != Some(*o))
            .cloned()
            .collect();
        for o in &objects {
            self.last.insert(o.id.clone(), o.clone());
        }
        Some(Snapshot {
            tick: world.tick,
            keyframe,
            robot: world.robot.clone(),
            objects,
        })
    }
}
