//! Shared domain types: poses, robot and world state, goals and their
//! lifecycle, progress reports and the scenario configuration.

use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::PI;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type ObjectId = String;
pub type GoalId = u64;
pub type CommandId = u64;
pub type Point = [f64; 2];

#[derive(Debug, Clone, Copy, PartialEq, Error)]
#[error("angle is not finite: {0}")]
pub struct NonFinite(pub f64);

/// Maps an angle onto `(-π, π]`.
pub fn normalize_angle(theta: f64) -> Result<f64, NonFinite> {
    if !theta.is_finite() {
        return Err(NonFinite(theta));
    }
    let two_pi = 2.0 * PI;
    let mut t = theta % two_pi;
    if t <= -PI {
        t += two_pi;
    } else if t > PI {
        t -= two_pi;
    }
    Ok(t)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl Pose {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Pose { x, y, theta }
    }

    pub fn point(&self) -> Point {
        [self.x, self.y]
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Gripper {
    Open,
    Closed,
    Holding(ObjectId),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JointState {
    /// 0 = retracted, 1 = fully extended.
    pub arm_extension: f64,
    pub gripper: Gripper,
}

impl Default for JointState {
    fn default() -> Self {
        JointState {
            arm_extension: 0.0,
            gripper: Gripper::Open,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectKind {
    Item,
    Surface,
    Obstacle,
}

/// An axis-aligned rectangle in the top-down world.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldObject {
    pub id: ObjectId,
    pub kind: ObjectKind,
    pub pose: Pose,
    pub half_extents: [f64; 2],
    pub graspable: bool,
    #[serde(default)]
    pub resting_on: Option<ObjectId>,
}

impl WorldObject {
    /// Footprint containment; the boundary counts as inside.
    pub fn contains(&self, p: Point) -> bool {
        (p[0] - self.pose.x).abs() <= self.half_extents[0]
            && (p[1] - self.pose.y).abs() <= self.half_extents[1]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RobotState {
    pub base: Pose,
    pub linear_velocity: f64,
    pub angular_velocity: f64,
    pub joints: JointState,
    pub carried: Option<ObjectId>,
}

impl RobotState {
    pub fn at(spawn: Pose) -> Self {
        RobotState {
            base: spawn,
            linear_velocity: 0.0,
            angular_velocity: 0.0,
            joints: JointState::default(),
            carried: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    pub tick: u64,
    pub robot: RobotState,
    pub objects: BTreeMap<ObjectId, WorldObject>,
}

impl WorldState {
    pub fn initial(scenario: &ValidatedScenario) -> Self {
        let cfg = scenario.config();
        WorldState {
            tick: 0,
            robot: RobotState::at(cfg.robot.spawn),
            objects: cfg
                .objects
                .iter()
                .map(|o| (o.id.clone(), o.clone()))
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum GoalVariant {
    NavigateTo { target: Point },
    Pick { object_id: ObjectId },
    Place { destination: Point },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionGoal {
    pub goal_id: GoalId,
    pub command_id: Option<CommandId>,
    pub variant: GoalVariant,
}

/// Why a goal was rejected at submission or failed while running.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reason {
    NoObject,
    NotCarrying,
    AlreadyCarrying,
    NoSurface,
    TargetBlocked,
    Unreachable,
    OutOfReach,
}

impl fmt::Display for Reason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Reason::NoObject => "no_object",
            Reason::NotCarrying => "not_carrying",
            Reason::AlreadyCarrying => "already_carrying",
            Reason::NoSurface => "no_surface",
            Reason::TargetBlocked => "target_blocked",
            Reason::Unreachable => "unreachable",
            Reason::OutOfReach => "out_of_reach",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GoalStatus {
    Pending,
    Active,
    Succeeded,
    Preempted,
    Cancelled,
    Rejected(Reason),
    Failed(Reason),
}

impl GoalStatus {
    pub fn is_terminal(&self) -> bool {
        !matches!(self, GoalStatus::Pending | GoalStatus::Active)
    }

    /// Status name without the reason payload.
    pub fn name(&self) -> &'static str {
        match self {
            GoalStatus::Pending => "pending",
            GoalStatus::Active => "active",
            GoalStatus::Succeeded => "succeeded",
            GoalStatus::Preempted => "preempted",
            GoalStatus::Cancelled => "cancelled",
            GoalStatus::Rejected(_) => "rejected",
            GoalStatus::Failed(_) => "failed",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LifecycleEvent {
    Activate,
    Succeed,
    /// Override by a newly submitted goal.
    Preempt,
    Cancel,
    Reject(Reason),
    Fail(Reason),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("illegal goal transition: {from:?} on {event:?}")]
pub struct IllegalTransition {
    pub from: GoalStatus,
    pub event: LifecycleEvent,
}

/// Advances a goal status along the lifecycle graph.
pub fn transition(
    status: GoalStatus,
    event: LifecycleEvent,
) -> Result<GoalStatus, IllegalTransition> {
    use GoalStatus as S;
    use LifecycleEvent as E;
    match (status, event) {
        (S::Pending, E::Activate) => Ok(S::Active),
        (S::Pending, E::Cancel) => Ok(S::Cancelled),
        (S::Pending, E::Reject(r)) => Ok(S::Rejected(r)),
        (S::Active, E::Succeed) => Ok(S::Succeeded),
        (S::Active, E::Preempt) => Ok(S::Preempted),
        (S::Active, E::Cancel) => Ok(S::Cancelled),
        (S::Active, E::Fail(r)) => Ok(S::Failed(r)),
        (from, event) => Err(IllegalTransition { from, event }),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Planning,
    Driving,
    Reaching,
    Grasping,
    Releasing,
    Done,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProgressReport {
    pub goal_id: GoalId,
    pub phase: Phase,
    pub fraction: f64,
    pub est_remaining_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RobotConfig {
    pub spawn: Pose,
    pub v_max: f64,
    pub a_max: f64,
    pub decel: f64,
    pub radius: f64,
    pub reach_radius: f64,
    pub grasp_duration_ms: u64,
    pub release_duration_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub world_width: f64,
    pub world_height: f64,
    pub cell_size: f64,
    pub robot: RobotConfig,
    pub objects: Vec<WorldObject>,
    pub tick_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScenarioError {
    #[error("robot spawn overlaps obstacle `{0}`")]
    SpawnBlocked(ObjectId),
    #[error("duplicate object id `{0}`")]
    DuplicateObjectId(ObjectId),
    #[error("`{0}` must be strictly positive")]
    NonPositiveParameter(String),
    #[error("`{0}` lies outside the world bounds")]
    OutOfBounds(String),
    #[error("object `{id}` is inconsistent: {problem}")]
    InvalidObject { id: ObjectId, problem: String },
}

/// A scenario whose invariants have been checked.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct ValidatedScenario(ScenarioConfig);

impl ValidatedScenario {
    pub fn config(&self) -> &ScenarioConfig {
        &self.0
    }

    pub fn into_config(self) -> ScenarioConfig {
        self.0
    }

    pub fn tick_ms(&self) -> u64 {
        self.0.tick_ms
    }

    /// Returns a copy running at a different tick length.
    pub fn with_tick_ms(&self, tick_ms: u64) -> Result<Self, ScenarioError> {
        let mut cfg = self.0.clone();
        cfg.tick_ms = tick_ms;
        validate_scenario(cfg)
    }
}

fn positive(value: f64, field: &str) -> Result<(), ScenarioError> {
    if value.is_finite() && value > 0.0 {
        Ok(())
    } else {
        Err(ScenarioError::NonPositiveParameter(field.to_string()))
    }
}

fn normalized(theta: f64, field: &str) -> Result<f64, ScenarioError> {
    normalize_angle(theta).map_err(|_| ScenarioError::OutOfBounds(field.to_string()))
}

pub fn validate_scenario(mut config: ScenarioConfig) -> Result<ValidatedScenario, ScenarioError> {
    positive(config.world_width, "world_width")?;
    positive(config.world_height, "world_height")?;
    positive(config.cell_size, "cell_size")?;
    if config.tick_ms == 0 {
        return Err(ScenarioError::NonPositiveParameter("tick_ms".into()));
    }
    let r = &config.robot;
    positive(r.v_max, "robot.v_max")?;
    positive(r.a_max, "robot.a_max")?;
    positive(r.decel, "robot.decel")?;
    positive(r.radius, "robot.radius")?;
    positive(r.reach_radius, "robot.reach_radius")?;
    if r.grasp_duration_ms == 0 {
        return Err(ScenarioError::NonPositiveParameter("robot.grasp_duration_ms".into()));
    }
    if r.release_duration_ms == 0 {
        return Err(ScenarioError::NonPositiveParameter("robot.release_duration_ms".into()));
    }

    let (w, h) = (config.world_width, config.world_height);
    let inside = |x: f64, y: f64| x.is_finite() && y.is_finite() && (0.0..=w).contains(&x) && (0.0..=h).contains(&y);

    let spawn = config.robot.spawn;
    if !inside(spawn.x, spawn.y) {
        return Err(ScenarioError::OutOfBounds("robot.spawn".into()));
    }
    config.robot.spawn.theta = normalized(spawn.theta, "robot.spawn.theta")?;

    let mut seen = BTreeSet::new();
    for obj in &config.objects {
        if !seen.insert(obj.id.as_str()) {
            return Err(ScenarioError::DuplicateObjectId(obj.id.clone()));
        }
    }

    let surfaces: BTreeSet<String> = config
        .objects
        .iter()
        .filter(|o| o.kind == ObjectKind::Surface)
        .map(|o| o.id.clone())
        .collect();

    for obj in &mut config.objects {
        let field = |f: &str| format!("objects.{}.{}", obj.id, f);
        positive(obj.half_extents[0], &field("half_extents[0]"))?;
        positive(obj.half_extents[1], &field("half_extents[1]"))?;
        if !inside(obj.pose.x, obj.pose.y) {
            return Err(ScenarioError::OutOfBounds(field("pose")));
        }
        obj.pose.theta = normalized(obj.pose.theta, &field("pose.theta"))?;
        let invalid = |problem: &str| ScenarioError::InvalidObject {
            id: obj.id.clone(),
            problem: problem.to_string(),
        };
        match obj.kind {
            ObjectKind::Item if !obj.graspable => return Err(invalid("items must be graspable")),
            ObjectKind::Obstacle if obj.graspable => {
                return Err(invalid("obstacles cannot be graspable"))
            }
            _ => {}
        }
        if let Some(s) = &obj.resting_on {
            if !surfaces.contains(s) {
                return Err(invalid("resting_on must name a surface"));
            }
        }
    }

    let radius = config.robot.radius;
    for obj in config.objects.iter().filter(|o| o.kind == ObjectKind::Obstacle) {
        let dx = ((spawn.x - obj.pose.x).abs() - obj.half_extents[0]).max(0.0);
        let dy = ((spawn.y - obj.pose.y).abs() - obj.half_extents[1]).max(0.0);
        if dx * dx + dy * dy < radius * radius {
            return Err(ScenarioError::SpawnBlocked(obj.id.clone()));
        }
    }

    Ok(ValidatedScenario(config))
}

/// The living-room scene used by `new-scenario`: a remote on the floor,
/// two tables and a sofa between the robot and the tables.
pub fn starter_scenario() -> ScenarioConfig {
    let surface = |id: &str, x: f64, y: f64| WorldObject {
        id: id.into(),
        kind: ObjectKind::Surface,
        pose: Pose::new(x, y, 0.0),
        half_extents: [0.6, 0.4],
        graspable: false,
        resting_on: None,
    };
    ScenarioConfig {
        world_width: 10.0,
        world_height: 10.0,
        cell_size: 0.25,
        robot: RobotConfig {
            spawn: Pose::new(1.125, 1.125, 0.0),
            v_max: 1.5,
            a_max: 2.0,
            decel: 2.0,
            radius: 0.25,
            reach_radius: 1.0,
            grasp_duration_ms: 800,
            release_duration_ms: 800,
        },
        objects: vec![
            WorldObject {
                id: "remote".into(),
                kind: ObjectKind::Item,
                pose: Pose::new(3.5, 2.5, 0.0),
                half_extents: [0.1, 0.05],
                graspable: true,
                resting_on: None,
            },
            surface("table_left", 2.5, 8.5),
            surface("table_right", 7.5, 8.5),
            WorldObject {
                id: "sofa".into(),
                kind: ObjectKind::Obstacle,
                pose: Pose::new(5.0, 5.0, 0.0),
                half_extents: [1.2, 0.4],
                graspable: false,
                resting_on: None,
            },
        ],
        tick_ms: 10,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn room() -> ScenarioConfig {
        ScenarioConfig {
            world_width: 10.0,
            world_height: 10.0,
            cell_size: 0.5,
            robot: RobotConfig {
                spawn: Pose::new(1.0, 1.0, 0.0),
                v_max: 1.0,
                a_max: 2.0,
                decel: 2.0,
                radius: 0.25,
                reach_radius: 1.0,
                grasp_duration_ms: 1000,
                release_duration_ms: 1000,
            },
            objects: vec![WorldObject {
                id: "table".into(),
                kind: ObjectKind::Surface,
                pose: Pose::new(4.0, 1.0, 0.0),
                half_extents: [0.5, 0.4],
                graspable: false,
                resting_on: None,
            }],
            tick_ms: 10,
        }
    }

    #[test]
    fn lifecycle_edges() {
        use GoalStatus as S;
        use LifecycleEvent as E;
        assert_eq!(transition(S::Pending, E::Activate), Ok(S::Active));
        assert_eq!(transition(S::Active, E::Preempt), Ok(S::Preempted));
        assert!(transition(S::Succeeded, E::Cancel).is_err());
        assert!(transition(S::Succeeded, E::Activate).is_err());
        assert!(transition(S::Pending, E::Succeed).is_err());
        assert_eq!(
            transition(S::Pending, E::Reject(Reason::NotCarrying)),
            Ok(S::Rejected(Reason::NotCarrying))
        );
    }

    #[test]
    fn terminal_states_accept_nothing() {
        let events = [
            LifecycleEvent::Activate,
            LifecycleEvent::Succeed,
            LifecycleEvent::Preempt,
            LifecycleEvent::Cancel,
            LifecycleEvent::Reject(Reason::NoObject),
            LifecycleEvent::Fail(Reason::OutOfReach),
        ];
        let terminal = [
            GoalStatus::Succeeded,
            GoalStatus::Preempted,
            GoalStatus::Cancelled,
            GoalStatus::Rejected(Reason::NoObject),
            GoalStatus::Failed(Reason::Unreachable),
        ];
        for s in terminal {
            assert!(s.is_terminal());
            for e in events {
                assert!(transition(s, e).is_err(), "{s:?} accepted {e:?}");
            }
        }
    }

    #[test]
    fn angle_examples() {
        assert_eq!(normalize_angle(0.0).unwrap(), 0.0);
        assert!((normalize_angle(3.0 * PI).unwrap() - PI).abs() < 1e-12);
        assert_eq!(normalize_angle(-PI).unwrap(), PI);
        assert!(normalize_angle(f64::NAN).is_err());
        assert!(normalize_angle(f64::INFINITY).is_err());
    }

    #[test]
    fn scenario_examples() {
        assert!(validate_scenario(room()).is_ok());

        let mut dup = room();
        dup.objects.push(dup.objects[0].clone());
        dup.objects[0].id = "cup".into();
        dup.objects[1].id = "cup".into();
        assert_eq!(
            validate_scenario(dup),
            Err(ScenarioError::DuplicateObjectId("cup".into()))
        );

        let mut slow = room();
        slow.robot.v_max = 0.0;
        assert_eq!(
            validate_scenario(slow),
            Err(ScenarioError::NonPositiveParameter("robot.v_max".into()))
        );

        let mut outside = room();
        outside.objects[0].pose.x = 12.0;
        assert!(matches!(validate_scenario(outside), Err(ScenarioError::OutOfBounds(_))));

        let mut blocked = room();
        blocked.objects.push(WorldObject {
            id: "crate".into(),
            kind: ObjectKind::Obstacle,
            pose: Pose::new(1.2, 1.0, 0.0),
            half_extents: [0.3, 0.3],
            graspable: false,
            resting_on: None,
        });
        assert_eq!(
            validate_scenario(blocked),
            Err(ScenarioError::SpawnBlocked("crate".into()))
        );
    }

    #[test]
    fn scenario_angles_are_normalized() {
        let mut cfg = room();
        cfg.robot.spawn.theta = 3.0 * PI;
        let v = validate_scenario(cfg).unwrap();
        assert!((v.config().robot.spawn.theta - PI).abs() < 1e-12);
    }

    #[test]
    fn starter_is_valid() {
        validate_scenario(starter_scenario()).unwrap();
    }

    #[test]
    fn scenario_json_field_names() {
        let json = serde_json::to_value(room()).unwrap();
        for key in ["world_width", "world_height", "cell_size", "robot", "objects", "tick_ms"] {
            assert!(json.get(key).is_some(), "missing {key}");
        }
        assert!(json["robot"].get("grasp_duration_ms").is_some());
        assert_eq!(json["objects"][0]["kind"], "surface");
    }

    proptest::proptest! {
        #[test]
        fn normalize_is_idempotent_and_in_range(theta in -1.0e6f64..1.0e6) {
            let n = normalize_angle(theta).unwrap();
            proptest::prop_assert!(n > -PI && n <= PI);
            proptest::prop_assert_eq!(normalize_angle(n).unwrap(), n);
        }
    }
}
