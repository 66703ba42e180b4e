//! Preemptible goal execution.
//!
//! The engine holds at most one live goal. Submitting a new goal while one
//! is active overrides it in the same tick (the old goal ends `Preempted`),
//! `cancel_all` revokes everything and brakes the base, and every goal can
//! be polled for its phase and completion fraction at any tick.

use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    transition, ActionGoal, CommandId, GoalId, GoalStatus, GoalVariant, IllegalTransition,
    LifecycleEvent, ObjectId, ObjectKind, Phase, Point, ProgressReport, Reason, ValidatedScenario,
    WorldState,
};
use crate::sim::grid::distance;
use crate::sim::{
    approach_point, build_grid, plan_path, step, step_manipulation, ActiveMotion, GridError,
    Manipulation, MotionProfile, OccupancyGrid, Path, PlanError,
};

/// Ticks a terminal goal stays pollable.
pub const RETENTION_TICKS: u64 = 1000;

const DRIVE_WEIGHT: f64 = 0.6;
const MANIPULATION_WEIGHT: f64 = 0.4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StatusEvent {
    pub goal_id: GoalId,
    pub command_id: Option<CommandId>,
    pub status: GoalStatus,
    pub tick: u64,
}

/// What a Wizard click landed on.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Resolved {
    Floor,
    Object(ObjectId),
    Surface(ObjectId),
    Blocked,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClickTarget {
    pub point: Point,
    pub resolved: Resolved,
}

impl ClickTarget {
    /// The goal a click on this target requests, or `None` for blocked clicks.
    pub fn goal_variant(&self) -> Option<GoalVariant> {
        match &self.resolved {
            Resolved::Floor => Some(GoalVariant::NavigateTo { target: self.point }),
            Resolved::Object(id) => Some(GoalVariant::Pick { object_id: id.clone() }),
            Resolved::Surface(_) => Some(GoalVariant::Place {
                destination: self.point,
            }),
            Resolved::Blocked => None,
        }
    }
}

/// Resolves a click by footprint containment: carried items are skipped,
/// then items, surfaces and obstacles are tried in that order.
pub fn validate_target(world: &WorldState, bounds: [f64; 2], point: Point) -> ClickTarget {
    let in_bounds = point[0].is_finite()
        && point[1].is_finite()
        && (0.0..=bounds[0]).contains(&point[0])
        && (0.0..=bounds[1]).contains(&point[1]);
    let hit = |kind: ObjectKind| {
        world
            .objects
            .values()
            .filter(|o| o.kind == kind && world.robot.carried.as_ref() != Some(&o.id))
            .find(|o| o.contains(point))
            .map(|o| o.id.clone())
    };
    let resolved = if !in_bounds {
        Resolved::Blocked
    } else if let Some(id) = hit(ObjectKind::Item) {
        Resolved::Object(id)
    } else if let Some(id) = hit(ObjectKind::Surface) {
        Resolved::Surface(id)
    } else if hit(ObjectKind::Obstacle).is_some() {
        Resolved::Blocked
    } else {
        Resolved::Floor
    };
    ClickTarget { point, resolved }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EngineError {
    #[error(transparent)]
    IllegalTransition(#[from] IllegalTransition),
    #[error("unknown goal {0}")]
    UnknownGoal(GoalId),
    #[error(transparent)]
    Grid(#[from] GridError),
}

#[derive(Debug, Clone)]
struct GoalRecord {
    goal: ActionGoal,
    status: GoalStatus,
    progress: ProgressReport,
}

#[derive(Debug, Clone)]
enum Stage {
    Planning,
    Driving,
    Manipulating { manip: Manipulation, elapsed_ms: u64 },
}

#[derive(Debug, Clone)]
struct Execution {
    goal_id: GoalId,
    stage: Stage,
    /// Pending gripper work once the drive ends.
    manip: Option<Manipulation>,
}

#[derive(Debug, Clone)]
pub struct TickOutput {
    pub world: WorldState,
    pub status_events: Vec<StatusEvent>,
    pub progress: Option<ProgressReport>,
}

#[derive(Debug, Clone)]
pub struct Engine {
    scenario: ValidatedScenario,
    grid: OccupancyGrid,
    profile: MotionProfile,
    goals: BTreeMap<GoalId, GoalRecord>,
    active: Option<GoalId>,
    exec: Option<Execution>,
    motion: Option<ActiveMotion>,
    next_goal_id: GoalId,
    expiry: VecDeque<(u64, GoalId)>,
}

impl Engine {
    pub fn new(scenario: &ValidatedScenario) -> Result<Self, EngineError> {
        let grid = build_grid(scenario)?;
        let r = &scenario.config().robot;
        Ok(Engine {
            profile: MotionProfile {
                v_max: r.v_max,
                a_max: r.a_max,
                decel: r.decel,
            },
            scenario: scenario.clone(),
            grid,
            goals: BTreeMap::new(),
            active: None,
            exec: None,
            motion: None,
            next_goal_id: 1,
            expiry: VecDeque::new(),
        })
    }

    pub fn grid(&self) -> &OccupancyGrid {
        &self.grid
    }

    pub fn profile(&self) -> MotionProfile {
        self.profile
    }

    pub fn active(&self) -> Option<GoalId> {
        self.active
    }

    pub fn goal(&self, id: GoalId) -> Option<(&ActionGoal, GoalStatus)> {
        self.goals.get(&id).map(|r| (&r.goal, r.status))
    }

    /// Goals currently Pending or Active.
    pub fn live_goals(&self) -> impl Iterator<Item = GoalId> + '_ {
        self.goals
            .iter()
            .filter(|(_, r)| !r.status.is_terminal())
            .map(|(id, _)| *id)
    }

    /// The motion the base is following, if any.
    pub fn motion(&self) -> Option<&ActiveMotion> {
        self.motion.as_ref()
    }

    pub fn validate_target(&self, world: &WorldState, point: Point) -> ClickTarget {
        let cfg = self.scenario.config();
        validate_target(world, [cfg.world_width, cfg.world_height], point)
    }

    fn set_status(&mut self, id: GoalId, event: LifecycleEvent, tick: u64) -> Result<StatusEvent, EngineError> {
        let rec = self.goals.get_mut(&id).ok_or(EngineError::UnknownGoal(id))?;
        rec.status = transition(rec.status, event)?;
        if rec.status.is_terminal() {
            if rec.status == GoalStatus::Succeeded {
                rec.progress.phase = Phase::Done;
                rec.progress.fraction = 1.0;
            }
            rec.progress.est_remaining_ms = 0;
            self.expiry.push_back((tick, id));
        }
        Ok(StatusEvent {
            goal_id: id,
            command_id: rec.goal.command_id,
            status: rec.status,
            tick,
        })
    }

    /// Resolves where the base must drive and what the gripper does there.
    fn resolve(&self, world: &WorldState, variant: &GoalVariant) -> Result<(Path, Option<Manipulation>), Reason> {
        let here = world.robot.base.point();
        let reach = self.scenario.config().robot.reach_radius;
        let plan = |to: Point| {
            plan_path(&self.grid, here, to).map_err(|e| match e {
                PlanError::TargetBlocked => Reason::TargetBlocked,
                PlanError::StartBlocked | PlanError::Unreachable => Reason::Unreachable,
            })
        };
        let approach = |target: Point| {
            if distance(here, target) <= reach {
                return Ok(Path::empty());
            }
            let stop = approach_point(&self.grid, here, target, reach).ok_or(Reason::Unreachable)?;
            plan(stop)
        };
        match variant {
            GoalVariant::NavigateTo { target } => Ok((plan(*target)?, None)),
            GoalVariant::Pick { object_id } => {
                let obj = world
                    .objects
                    .get(object_id)
                    .filter(|o| o.kind == ObjectKind::Item)
                    .ok_or(Reason::NoObject)?;
                if world.robot.carried.is_some() {
                    return Err(Reason::AlreadyCarrying);
                }
                let manip = Manipulation::Grasping {
                    object_id: object_id.clone(),
                };
                Ok((approach(obj.pose.point())?, Some(manip)))
            }
            GoalVariant::Place { destination } => {
                let carried = world.robot.carried.clone().ok_or(Reason::NotCarrying)?;
                let surface = world
                    .objects
                    .values()
                    .find(|o| o.kind == ObjectKind::Surface && o.contains(*destination))
                    .ok_or(Reason::NoSurface)?;
                let manip = Manipulation::Releasing {
                    object_id: carried,
                    destination: *destination,
                    surface: surface.id.clone(),
                };
                Ok((approach(*destination)?, Some(manip)))
            }
        }
    }

    /// Submits a goal at `tick`. A successfully planned goal preempts the
    /// active one within the same tick; a goal that cannot be planned is
    /// recorded as Rejected and leaves the active goal alone.
    pub fn submit_goal(
        &mut self,
        world: &mut WorldState,
        variant: GoalVariant,
        command_id: Option<CommandId>,
        tick: u64,
    ) -> Result<(GoalId, Vec<StatusEvent>), EngineError> {
        let goal_id = self.next_goal_id;
        self.next_goal_id += 1;
        let goal = ActionGoal {
            goal_id,
            command_id,
            variant,
        };
        let resolved = self.resolve(world, &goal.variant);
        self.goals.insert(
            goal_id,
            GoalRecord {
                goal,
                status: GoalStatus::Pending,
                progress: ProgressReport {
                    goal_id,
                    phase: Phase::Planning,
                    fraction: 0.0,
                    est_remaining_ms: 0,
                },
            },
        );
        let mut events = vec![StatusEvent {
            goal_id,
            command_id,
            status: GoalStatus::Pending,
            tick,
        }];

        let (path, manip) = match resolved {
            Ok(r) => r,
            Err(reason) => {
                events.push(self.set_status(goal_id, LifecycleEvent::Reject(reason), tick)?);
                return Ok((goal_id, events));
            }
        };

        if let Some(old) = self.active.take() {
            self.interrupt(world);
            events.push(self.set_status(old, LifecycleEvent::Preempt, tick)?);
        }
        let origin = world.robot.base.point();
        self.motion = Some(ActiveMotion::new(origin, path, self.profile));
        self.exec = Some(Execution {
            goal_id,
            stage: Stage::Planning,
            manip,
        });
        self.active = Some(goal_id);
        events.push(self.set_status(goal_id, LifecycleEvent::Activate, tick)?);
        let est = self.estimate(world);
        if let Some(rec) = self.goals.get_mut(&goal_id) {
            rec.progress.est_remaining_ms = est;
        }
        Ok((goal_id, events))
    }

    /// Abandons gripper work in progress.
    fn interrupt(&mut self, world: &mut WorldState) {
        if let Some(Execution {
            stage: Stage::Manipulating { .. },
            ..
        }) = self.exec
        {
            world.robot.joints.arm_extension = 0.0;
        }
        self.exec = None;
    }

    /// Cancels every live goal and brakes the base. Returns the cancelled
    /// ids in ascending order; a second call returns nothing.
    pub fn cancel_all(
        &mut self,
        world: &mut WorldState,
        tick: u64,
    ) -> Result<(Vec<GoalId>, Vec<StatusEvent>), EngineError> {
        let live: Vec<GoalId> = self.live_goals().collect();
        let mut events = Vec::with_capacity(live.len());
        for id in &live {
            events.push(self.set_status(*id, LifecycleEvent::Cancel, tick)?);
        }
        self.active = None;
        self.interrupt(world);
        if let Some(m) = self.motion.as_mut() {
            m.decelerating = true;
        }
        Ok((live, events))
    }

    pub fn poll(&self, goal_id: GoalId) -> Result<ProgressReport, EngineError> {
        self.goals
            .get(&goal_id)
            .map(|r| r.progress.clone())
            .ok_or(EngineError::UnknownGoal(goal_id))
    }

    fn durations(&self, manip: &Manipulation) -> u64 {
        let r = &self.scenario.config().robot;
        match manip {
            Manipulation::Grasping { .. } => r.grasp_duration_ms,
            Manipulation::Releasing { .. } => r.release_duration_ms,
        }
    }

    fn drive_fraction(&self) -> f64 {
        match &self.motion {
            Some(m) if m.path.total_length > 0.0 && !m.finished => m.traveled / m.path.total_length,
            _ => 1.0,
        }
    }

    fn estimate(&self, world: &WorldState) -> u64 {
        let Some(exec) = &self.exec else { return 0 };
        let mut ms = match (&exec.stage, &self.motion) {
            (Stage::Planning | Stage::Driving, Some(m)) if !m.finished => {
                1000.0 * self.profile.traverse_time(m.remaining(), world.robot.linear_velocity)
            }
            _ => 0.0,
        };
        match &exec.stage {
            Stage::Manipulating { manip, elapsed_ms } => {
                ms += self.durations(manip).saturating_sub(*elapsed_ms) as f64;
            }
            _ => {
                if let Some(manip) = &exec.manip {
                    ms += self.durations(manip) as f64;
                }
            }
        }
        ms.ceil() as u64
    }

    fn live_progress(&self, world: &WorldState) -> Option<ProgressReport> {
        let exec = self.exec.as_ref()?;
        let drive = self.drive_fraction();
        let (phase, fraction) = match (&exec.stage, &exec.manip) {
            (Stage::Planning, _) => (Phase::Planning, 0.0),
            (Stage::Driving, None) => (Phase::Driving, drive),
            (Stage::Driving, Some(_)) => (Phase::Driving, DRIVE_WEIGHT * drive),
            (Stage::Manipulating { manip, elapsed_ms }, _) => {
                let f = (*elapsed_ms as f64 / self.durations(manip) as f64).min(1.0);
                let phase = if f < 0.5 {
                    Phase::Reaching
                } else {
                    match manip {
                        Manipulation::Grasping { .. } => Phase::Grasping,
                        Manipulation::Releasing { .. } => Phase::Releasing,
                    }
                };
                (phase, DRIVE_WEIGHT + MANIPULATION_WEIGHT * f)
            }
        };
        Some(ProgressReport {
            goal_id: exec.goal_id,
            phase,
            fraction,
            est_remaining_ms: self.estimate(world),
        })
    }

    /// Advances the world one tick and moves the active goal through its
    /// phases. Status changes made here carry the new tick.
    pub fn tick(&mut self, world: &WorldState) -> Result<TickOutput, EngineError> {
        let tick_ms = self.scenario.tick_ms();
        let mut next = step(world, self.motion.as_mut(), tick_ms);
        let now = next.tick;
        if self.motion.as_ref().is_some_and(|m| m.finished && m.decelerating) {
            self.motion = None;
        }
        self.expire(now);

        let mut status_events = Vec::new();
        let Some(mut exec) = self.exec.take() else {
            return Ok(TickOutput {
                world: next,
                status_events,
                progress: None,
            });
        };
        let reach = self.scenario.config().robot.reach_radius;

        if matches!(exec.stage, Stage::Planning) {
            exec.stage = Stage::Driving;
        }
        let mut outcome = None;
        if matches!(exec.stage, Stage::Driving) && self.motion.as_ref().is_none_or(|m| m.finished) {
            match exec.manip.take() {
                None => outcome = Some(LifecycleEvent::Succeed),
                Some(manip) => {
                    let dur = self.durations(&manip);
                    match step_manipulation(&next, &manip, 0, dur, reach) {
                        Ok(_) => exec.stage = Stage::Manipulating { manip, elapsed_ms: 0 },
                        Err(_) => outcome = Some(LifecycleEvent::Fail(Reason::OutOfReach)),
                    }
                }
            }
        } else if let Stage::Manipulating { manip, elapsed_ms } = &mut exec.stage {
            *elapsed_ms += tick_ms;
            let dur = self.durations(manip);
            match step_manipulation(&next, manip, *elapsed_ms, dur, reach) {
                Ok((w, f)) => {
                    next = w;
                    if f >= 1.0 {
                        outcome = Some(LifecycleEvent::Succeed);
                    }
                }
                Err(_) => outcome = Some(LifecycleEvent::Fail(Reason::OutOfReach)),
            }
        }

        let goal_id = exec.goal_id;
        self.exec = Some(exec);
        if let Some(p) = self.live_progress(&next) {
            if let Some(rec) = self.goals.get_mut(&goal_id) {
                rec.progress = p;
            }
        }
        if let Some(event) = outcome {
            self.exec = None;
            self.active = None;
            if matches!(event, LifecycleEvent::Fail(_)) {
                next.robot.joints.arm_extension = 0.0;
            }
            status_events.push(self.set_status(goal_id, event, now)?);
        }
        let progress = self.goals.get(&goal_id).map(|r| r.progress.clone());
        Ok(TickOutput {
            world: next,
            status_events,
            progress,
        })
    }

    fn expire(&mut self, now: u64) {
        while let Some(&(at, id)) = self.expiry.front() {
            if at + RETENTION_TICKS >= now {
                break;
            }
            self.expiry.pop_front();
            self.goals.remove(&id);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{validate_scenario, Pose, RobotConfig, ScenarioConfig, WorldObject};

    fn scenario() -> ValidatedScenario {
        let obj = |id: &str, kind, x, y, hx, hy| WorldObject {
            id: String::from(id),
            kind,
            pose: Pose::new(x, y, 0.0),
            half_extents: [hx, hy],
            graspable: kind == ObjectKind::Item,
            resting_on: None,
        };
        validate_scenario(ScenarioConfig {
            world_width: 10.0,
            world_height: 10.0,
            cell_size: 0.25,
            robot: RobotConfig {
                spawn: Pose::new(1.125, 1.125, 0.0),
                v_max: 1.0,
                a_max: 2.0,
                decel: 2.0,
                radius: 0.25,
                reach_radius: 1.0,
                grasp_duration_ms: 1000,
                release_duration_ms: 500,
            },
            objects: vec![
                obj("cup", ObjectKind::Item, 3.0, 1.125, 0.05, 0.05),
                obj("table", ObjectKind::Surface, 8.0, 8.0, 0.6, 0.4),
                obj("crate", ObjectKind::Obstacle, 5.0, 5.0, 0.5, 0.5),
            ],
            tick_ms: 10,
        })
        .unwrap()
    }

    fn setup() -> (Engine, WorldState) {
        let s = scenario();
        (Engine::new(&s).unwrap(), WorldState::initial(&s))
    }

    fn nav(x: f64, y: f64) -> GoalVariant {
        GoalVariant::NavigateTo { target: [x, y] }
    }

    fn run(engine: &mut Engine, world: &mut WorldState, ticks: usize) -> Vec<StatusEvent> {
        let mut events = Vec::new();
        for _ in 0..ticks {
            let out = engine.tick(world).unwrap();
            *world = out.world;
            events.extend(out.status_events);
        }
        events
    }

    #[test]
    fn click_resolution() {
        let (engine, world) = setup();
        let r = |x, y| engine.validate_target(&world, [x, y]).resolved;
        assert_eq!(r(2.0, 6.0), Resolved::Floor);
        assert_eq!(r(5.2, 5.1), Resolved::Blocked);
        assert_eq!(r(3.0, 1.1), Resolved::Object("cup".into()));
        assert_eq!(r(8.0, 8.0), Resolved::Surface("table".into()));
        assert_eq!(r(-1.0, 5.0), Resolved::Blocked);
    }

    #[test]
    fn idle_submit_activates() {
        let (mut e, mut w) = setup();
        let (id, ev) = e.submit_goal(&mut w, nav(4.125, 1.125), None, 0).unwrap();
        assert_eq!(id, 1);
        assert_eq!(ev.last().unwrap().status, GoalStatus::Active);
        let p = e.poll(id).unwrap();
        assert_eq!((p.phase, p.fraction), (Phase::Planning, 0.0));
    }

    #[test]
    fn override_is_atomic() {
        let (mut e, mut w) = setup();
        let (g1, _) = e.submit_goal(&mut w, nav(4.125, 1.125), None, 0).unwrap();
        run(&mut e, &mut w, 30);
        let t = w.tick;
        let (g2, ev) = e.submit_goal(&mut w, nav(1.125, 4.125), None, t).unwrap();
        assert_eq!(g2, g1 + 1);
        assert!(ev.iter().any(|s| s.goal_id == g1 && s.status == GoalStatus::Preempted && s.tick == t));
        assert!(ev.iter().any(|s| s.goal_id == g2 && s.status == GoalStatus::Active && s.tick == t));
        assert_eq!(e.live_goals().collect::<Vec<_>>(), vec![g2]);
        // Speed carries across the override.
        assert!(w.robot.linear_velocity > 0.0);
    }

    #[test]
    fn place_without_carrying_is_rejected() {
        let (mut e, mut w) = setup();
        let (g1, _) = e.submit_goal(&mut w, nav(4.125, 1.125), None, 0).unwrap();
        let (g2, ev) = e
            .submit_goal(&mut w, GoalVariant::Place { destination: [8.0, 8.0] }, None, 0)
            .unwrap();
        assert_eq!(ev.last().unwrap().status, GoalStatus::Rejected(Reason::NotCarrying));
        assert_eq!(e.goal(g1).unwrap().1, GoalStatus::Active);
        assert_eq!(e.goal(g2).unwrap().1, GoalStatus::Rejected(Reason::NotCarrying));
        assert_eq!(e.active(), Some(g1));
    }

    #[test]
    fn blocked_and_missing_targets_are_rejected() {
        let (mut e, mut w) = setup();
        let (_, ev) = e.submit_goal(&mut w, nav(5.0, 5.0), None, 0).unwrap();
        assert_eq!(ev.last().unwrap().status, GoalStatus::Rejected(Reason::TargetBlocked));
        let (_, ev) = e
            .submit_goal(&mut w, GoalVariant::Pick { object_id: "ghost".into() }, None, 0)
            .unwrap();
        assert_eq!(ev.last().unwrap().status, GoalStatus::Rejected(Reason::NoObject));
        let (_, ev) = e
            .submit_goal(&mut w, GoalVariant::Pick { object_id: "table".into() }, None, 0)
            .unwrap();
        assert_eq!(ev.last().unwrap().status, GoalStatus::Rejected(Reason::NoObject));
    }

    #[test]
    fn cancel_all_examples() {
        let (mut e, mut w) = setup();
        assert_eq!(e.cancel_all(&mut w, 0).unwrap().0, Vec::<GoalId>::new());

        let (g1, _) = e.submit_goal(&mut w, nav(9.125, 1.125), None, 0).unwrap();
        run(&mut e, &mut w, 200);
        assert!((w.robot.linear_velocity - 1.0).abs() < 1e-12);
        let t = w.tick;
        let (ids, ev) = e.cancel_all(&mut w, t).unwrap();
        assert_eq!(ids, vec![g1]);
        assert_eq!(ev[0].status, GoalStatus::Cancelled);
        assert!(e.cancel_all(&mut w, t).unwrap().0.is_empty());
        let mut ticks = 0;
        while w.robot.linear_velocity > 0.0 {
            run(&mut e, &mut w, 1);
            ticks += 1;
        }
        assert!(ticks <= 51, "stopped after {ticks} ticks");
        let x = w.robot.base.x;
        run(&mut e, &mut w, 100);
        assert_eq!(w.robot.base.x, x);
        assert_eq!(e.poll(g1).unwrap().est_remaining_ms, 0);
    }

    #[test]
    fn nav_progress_and_success() {
        let (mut e, mut w) = setup();
        // 4.0 m straight: halfway at t = 2.25 s (0.25 m ramp + 1.75 m cruise).
        let (g, _) = e.submit_goal(&mut w, nav(5.125, 1.125), None, 0).unwrap();
        run(&mut e, &mut w, 225);
        let p = e.poll(g).unwrap();
        assert_eq!(p.phase, Phase::Driving);
        assert!((p.fraction - 0.5).abs() < 1e-9, "fraction {}", p.fraction);
        assert!((p.est_remaining_ms as i64 - 2250).abs() <= 1);
        let ev = run(&mut e, &mut w, 300);
        let done = ev.iter().find(|s| s.status == GoalStatus::Succeeded).unwrap();
        assert!((done.tick as i64 - 450).abs() <= 1);
        let p = e.poll(g).unwrap();
        assert_eq!((p.phase, p.fraction), (Phase::Done, 1.0));
    }

    #[test]
    fn pick_schedule() {
        let (mut e, mut w) = setup();
        // The cup is 1.875 m away; the robot stops once within 1.0 m.
        let (g, _) = e
            .submit_goal(&mut w, GoalVariant::Pick { object_id: "cup".into() }, None, 0)
            .unwrap();
        let mut phases = Vec::new();
        let mut succeeded_at = None;
        for _ in 0..1000 {
            let out = e.tick(&w).unwrap();
            w = out.world;
            let p = out.progress.unwrap();
            if phases.last() != Some(&p.phase) {
                phases.push(p.phase);
            }
            if let Some(s) = out.status_events.iter().find(|s| s.status == GoalStatus::Succeeded) {
                succeeded_at = Some(s.tick);
                break;
            }
        }
        assert_eq!(
            phases,
            vec![Phase::Driving, Phase::Reaching, Phase::Grasping, Phase::Done]
        );
        assert_eq!(w.robot.carried.as_deref(), Some("cup"));
        let drive = e.profile().traverse_time(1.0, 0.0);
        let expected = (drive * 100.0).round() as u64 + 100;
        assert!((succeeded_at.unwrap() as i64 - expected as i64).abs() <= 2);
        assert_eq!(e.poll(g).unwrap().fraction, 1.0);
    }

    #[test]
    fn poll_unknown_and_retention() {
        let (mut e, mut w) = setup();
        assert!(matches!(e.poll(7), Err(EngineError::UnknownGoal(7))));
        let (g, _) = e.submit_goal(&mut w, nav(1.625, 1.125), None, 0).unwrap();
        run(&mut e, &mut w, 200);
        assert_eq!(e.poll(g).unwrap().phase, Phase::Done);
        run(&mut e, &mut w, RETENTION_TICKS as usize);
        assert!(e.poll(g).is_err());
    }
}
