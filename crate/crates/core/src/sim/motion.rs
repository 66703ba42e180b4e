//! Fixed-timestep base motion along a planned path, plus gripper phases.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::grid::{distance, Path};
use crate::model::{normalize_angle, Gripper, ObjectId, Point, Pose, WorldState};

/// Arrival slack for accumulated floating-point error, in meters.
const ARRIVAL_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MotionProfile {
    pub v_max: f64,
    pub a_max: f64,
    pub decel: f64,
}

impl MotionProfile {
    /// Seconds needed to cover `length` meters starting at speed `v0` and
    /// ending at rest, following the trapezoid (or triangle) profile.
    pub fn traverse_time(&self, length: f64, v0: f64) -> f64 {
        let (a, d, vm) = (self.a_max, self.decel, self.v_max);
        let v0 = v0.clamp(0.0, vm);
        if length <= 0.0 {
            return 0.0;
        }
        if v0 * v0 / (2.0 * d) >= length {
            return (v0 - (v0 * v0 - 2.0 * d * length).max(0.0).sqrt()) / d;
        }
        let vp = ((2.0 * a * d * length + d * v0 * v0) / (a + d)).sqrt();
        if vp <= vm {
            (vp - v0) / a + vp / d
        } else {
            let ramp = (vm * vm - v0 * v0) / (2.0 * a) + vm * vm / (2.0 * d);
            (vm - v0) / a + vm / d + (length - ramp) / vm
        }
    }

    /// Distance covered while braking from `v` to rest.
    pub fn stopping_distance(&self, v: f64) -> f64 {
        v * v / (2.0 * self.decel)
    }
}

/// A path being followed by the base.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActiveMotion {
    /// Where the base was when the path was planned.
    pub origin: Point,
    pub path: Path,
    pub profile: MotionProfile,
    /// Arc length covered so far.
    pub traveled: f64,
    /// Set by a cancel: brake to rest and abandon the path.
    pub decelerating: bool,
    pub finished: bool,
}

impl ActiveMotion {
    pub fn new(origin: Point, path: Path, profile: MotionProfile) -> Self {
        let finished = path.waypoints.is_empty();
        ActiveMotion {
            origin,
            path,
            profile,
            traveled: 0.0,
            decelerating: false,
            finished,
        }
    }

    pub fn remaining(&self) -> f64 {
        (self.path.total_length - self.traveled).max(0.0)
    }

    /// Point and heading at arc length `s` along the polyline.
    fn locate(&self, s: f64) -> Option<(Point, f64)> {
        let mut prev = self.origin;
        let mut acc = 0.0;
        let mut last = None;
        for w in &self.path.waypoints {
            let seg = distance(prev, *w);
            if seg > 0.0 {
                let heading = (w[1] - prev[1]).atan2(w[0] - prev[0]);
                if s <= acc + seg {
                    let t = ((s - acc) / seg).clamp(0.0, 1.0);
                    let p = [prev[0] + t * (w[0] - prev[0]), prev[1] + t * (w[1] - prev[1])];
                    return Some((p, heading));
                }
                last = Some((*w, heading));
            }
            acc += seg;
            prev = *w;
        }
        last
    }
}

/// Advances the world by one tick. With no motion (or a finished one) only
/// the tick counter changes. Otherwise the base moves along the path: the
/// speed rises by at most `a_max·dt`, never exceeds `v_max`, and is capped
/// by the braking curve so the base comes to rest exactly at the path end.
/// A decelerating motion sheds `decel·dt` per tick until it stops.
///
/// If a carried-over speed is too high to brake within the remaining path,
/// the base brakes at `decel` and is clamped to rest at the path end.
pub fn step(world: &WorldState, motion: Option<&mut ActiveMotion>, tick_ms: u64) -> WorldState {
    let mut next = world.clone();
    next.tick += 1;
    let Some(m) = motion.filter(|m| !m.finished) else {
        next.robot.linear_velocity = 0.0;
        next.robot.angular_velocity = 0.0;
        return next;
    };

    let dt = tick_ms as f64 / 1000.0;
    let p = m.profile;
    let v = world.robot.linear_velocity;
    let remaining = m.remaining();
    let floor = (v - p.decel * dt).max(0.0);

    let v_next = if m.decelerating {
        floor
    } else {
        let d = p.decel;
        let disc = d * d * dt * dt + 8.0 * d * remaining - 4.0 * d * dt * v;
        let v_brake = if disc > 0.0 { 0.5 * (disc.sqrt() - d * dt) } else { 0.0 };
        (v + p.a_max * dt).min(p.v_max).min(v_brake).max(floor)
    };
    let ds = 0.5 * (v + v_next) * dt;

    let (traveled, speed) = if ds >= remaining - ARRIVAL_EPS {
        m.finished = true;
        (m.path.total_length, 0.0)
    } else {
        if m.decelerating && v_next == 0.0 {
            m.finished = true;
        }
        (m.traveled + ds, v_next)
    };
    m.traveled = traveled;

    if let Some((pt, heading)) = m.locate(traveled) {
        let old = world.robot.base.theta;
        next.robot.base = Pose::new(pt[0], pt[1], heading);
        let turn = normalize_angle(heading - old).unwrap_or(0.0);
        next.robot.angular_velocity = turn / dt;
    }
    next.robot.linear_velocity = speed;
    carry_with_base(&mut next);
    next
}

fn carry_with_base(world: &mut WorldState) {
    if let Some(id) = world.robot.carried.clone() {
        if let Some(obj) = world.objects.get_mut(&id) {
            obj.pose.x = world.robot.base.x;
            obj.pose.y = world.robot.base.y;
            obj.resting_on = None;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "phase", rename_all = "snake_case")]
pub enum Manipulation {
    Grasping {
        object_id: ObjectId,
    },
    Releasing {
        object_id: ObjectId,
        destination: Point,
        surface: ObjectId,
    },
}

impl Manipulation {
    pub fn target(&self, world: &WorldState) -> Option<Point> {
        match self {
            Manipulation::Grasping { object_id } => world.objects.get(object_id).map(|o| o.pose.point()),
            Manipulation::Releasing { destination, .. } => Some(*destination),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("target is {distance:.3} m away, beyond reach {reach:.3} m")]
    OutOfReach { distance: f64, reach: f64 },
    #[error("unknown object `{0}`")]
    UnknownObject(ObjectId),
}

/// Applies `elapsed_ms` of a grasp or release lasting `duration_ms`.
/// The arm extends over the first half and retracts over the second; the
/// gripper and object change only on completion.
pub fn step_manipulation(
    world: &WorldState,
    manip: &Manipulation,
    elapsed_ms: u64,
    duration_ms: u64,
    reach_radius: f64,
) -> Result<(WorldState, f64), SimError> {
    let target = manip.target(world).ok_or_else(|| match manip {
        Manipulation::Grasping { object_id } | Manipulation::Releasing { object_id, .. } => {
            SimError::UnknownObject(object_id.clone())
        }
    })?;
    let dist = distance(world.robot.base.point(), target);
    if dist > reach_radius {
        return Err(SimError::OutOfReach {
            distance: dist,
            reach: reach_radius,
        });
    }

    let fraction = (elapsed_ms as f64 / duration_ms as f64).min(1.0);
    let mut next = world.clone();
    next.robot.joints.arm_extension = 1.0 - (2.0 * fraction - 1.0).abs();
    if fraction >= 1.0 {
        next.robot.joints.arm_extension = 0.0;
        match manip {
            Manipulation::Grasping { object_id } => {
                next.robot.joints.gripper = Gripper::Holding(object_id.clone());
                next.robot.carried = Some(object_id.clone());
                carry_with_base(&mut next);
            }
            Manipulation::Releasing {
                object_id,
                destination,
                surface,
            } => {
                next.robot.joints.gripper = Gripper::Open;
                next.robot.carried = None;
                if let Some(obj) = next.objects.get_mut(object_id) {
                    obj.pose.x = destination[0];
                    obj.pose.y = destination[1];
                    obj.resting_on = Some(surface.clone());
                }
            }
        }
    }
    Ok((next, fraction))
}
