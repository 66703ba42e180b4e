//! Deterministic kinematic simulator: occupancy grid, A* planner,
//! trapezoidal base motion and timed gripper phases.
//!
//! Everything here is single-threaded and bit-reproducible: integer ticks,
//! and floating-point work in a fixed evaluation order.

pub mod grid;
pub mod motion;

pub use grid::{approach_point, build_grid, plan_path, GridError, OccupancyGrid, Path, PlanError};
pub use motion::{step, step_manipulation, ActiveMotion, Manipulation, MotionProfile, SimError};
