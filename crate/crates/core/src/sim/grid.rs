//! Occupancy grid and A* planner.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ObjectKind, Point, ValidatedScenario, WorldObject};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GridError {
    #[error("robot spawn cell is blocked after inflation")]
    SpawnBlocked,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum PlanError {
    #[error("start point lies in a blocked or out-of-bounds cell")]
    StartBlocked,
    #[error("target point lies in a blocked or out-of-bounds cell")]
    TargetBlocked,
    #[error("no path to target")]
    Unreachable,
}

/// Row-major boolean occupancy. Cell `(col, row)` spans
/// `[col·cell, (col+1)·cell) × [row·cell, (row+1)·cell)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccupancyGrid {
    pub width_cells: usize,
    pub height_cells: usize,
    pub cell_size: f64,
    pub blocked: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Path {
    pub waypoints: Vec<Point>,
    pub total_length: f64,
}

impl Path {
    pub fn empty() -> Self {
        Path {
            waypoints: Vec::new(),
            total_length: 0.0,
        }
    }
}

/// Polyline length starting at `from` and visiting every waypoint.
pub fn polyline_length(from: Point, waypoints: &[Point]) -> f64 {
    let mut prev = from;
    let mut total = 0.0;
    for w in waypoints {
        total += distance(prev, *w);
        prev = *w;
    }
    total
}

pub fn distance(a: Point, b: Point) -> f64 {
    let dx = b[0] - a[0];
    let dy = b[1] - a[1];
    (dx * dx + dy * dy).sqrt()
}

impl OccupancyGrid {
    /// An obstacle-free grid covering `width × height` meters.
    pub fn empty(width: f64, height: f64, cell_size: f64) -> Self {
        let width_cells = (width / cell_size).ceil() as usize;
        let height_cells = (height / cell_size).ceil() as usize;
        OccupancyGrid {
            width_cells,
            height_cells,
            cell_size,
            blocked: vec![false; width_cells * height_cells],
        }
    }

    /// Marks every cell intersecting `obj`'s footprint grown by `inflation`.
    pub fn block_footprint(&mut self, obj: &WorldObject, inflation: f64) {
        let min_x = obj.pose.x - obj.half_extents[0] - inflation;
        let max_x = obj.pose.x + obj.half_extents[0] + inflation;
        let min_y = obj.pose.y - obj.half_extents[1] - inflation;
        let max_y = obj.pose.y + obj.half_extents[1] + inflation;
        let cs = self.cell_size;
        for row in 0..self.height_cells {
            let (y0, y1) = (row as f64 * cs, (row + 1) as f64 * cs);
            if !(y0 < max_y && y1 > min_y) {
                continue;
            }
            for col in 0..self.width_cells {
                let (x0, x1) = (col as f64 * cs, (col + 1) as f64 * cs);
                if x0 < max_x && x1 > min_x {
                    self.blocked[row * self.width_cells + col] = true;
                }
            }
        }
    }

    pub fn cell_of(&self, p: Point) -> Option<(usize, usize)> {
        if !(p[0].is_finite() && p[1].is_finite()) || p[0] < 0.0 || p[1] < 0.0 {
            return None;
        }
        let col = (p[0] / self.cell_size).floor() as usize;
        let row = (p[1] / self.cell_size).floor() as usize;
        (col < self.width_cells && row < self.height_cells).then_some((col, row))
    }

    pub fn index(&self, col: usize, row: usize) -> usize {
        row * self.width_cells + col
    }

    pub fn center(&self, col: usize, row: usize) -> Point {
        [
            (col as f64 + 0.5) * self.cell_size,
            (row as f64 + 0.5) * self.cell_size,
        ]
    }

    pub fn is_blocked(&self, col: usize, row: usize) -> bool {
        self.blocked[self.index(col, row)]
    }

    /// Blocked or outside the grid.
    pub fn point_blocked(&self, p: Point) -> bool {
        match self.cell_of(p) {
            Some((c, r)) => self.is_blocked(c, r),
            None => true,
        }
    }

    /// 4-connected free neighbours in ascending cell-index order.
    pub fn neighbours(&self, idx: usize) -> impl Iterator<Item = usize> + '_ {
        let (col, row) = (idx % self.width_cells, idx / self.width_cells);
        let w = self.width_cells;
        let candidates = [
            (row > 0).then(|| idx - w),
            (col > 0).then(|| idx - 1),
            (col + 1 < w).then(|| idx + 1),
            (row + 1 < self.height_cells).then(|| idx + w),
        ];
        candidates
            .into_iter()
            .flatten()
            .filter(move |&n| !self.blocked[n])
    }
}

/// Obstacles and surfaces, inflated by the robot radius.
pub fn build_grid(scenario: &ValidatedScenario) -> Result<OccupancyGrid, GridError> {
    let cfg = scenario.config();
    let mut grid = OccupancyGrid::empty(cfg.world_width, cfg.world_height, cfg.cell_size);
    for obj in &cfg.objects {
        if matches!(obj.kind, ObjectKind::Obstacle | ObjectKind::Surface) {
            grid.block_footprint(obj, cfg.robot.radius);
        }
    }
    if grid.point_blocked(cfg.robot.spawn.point()) {
        return Err(GridError::SpawnBlocked);
    }
    Ok(grid)
}

/// Shortest 4-connected path by A* with a Manhattan heuristic.
///
/// Ties on f-cost resolve to the lower cell index. Waypoints are the
/// centers of every path cell after the start cell, with the last one
/// replaced by `to` itself.
pub fn plan_path(grid: &OccupancyGrid, from: Point, to: Point) -> Result<Path, PlanError> {
    let (sc, sr) = grid
        .cell_of(from)
        .filter(|&(c, r)| !grid.is_blocked(c, r))
        .ok_or(PlanError::StartBlocked)?;
    let (tc, tr) = grid
        .cell_of(to)
        .filter(|&(c, r)| !grid.is_blocked(c, r))
        .ok_or(PlanError::TargetBlocked)?;
    if from == to {
        return Ok(Path::empty());
    }
    let cells = astar(grid, grid.index(sc, sr), grid.index(tc, tr)).ok_or(PlanError::Unreachable)?;
    let mut waypoints: Vec<Point> = cells[1..]
        .iter()
        .map(|&i| grid.center(i % grid.width_cells, i / grid.width_cells))
        .collect();
    match waypoints.last_mut() {
        Some(last) => *last = to,
        None => waypoints.push(to),
    }
    let total_length = polyline_length(from, &waypoints);
    Ok(Path {
        waypoints,
        total_length,
    })
}

fn astar(grid: &OccupancyGrid, start: usize, goal: usize) -> Option<Vec<usize>> {
    let w = grid.width_cells;
    let (gc, gr) = (goal % w, goal / w);
    let h = |i: usize| (i % w).abs_diff(gc) + (i / w).abs_diff(gr);

    let n = grid.blocked.len();
    let mut g = vec![usize::MAX; n];
    let mut parent = vec![usize::MAX; n];
    let mut closed = vec![false; n];
    let mut open = BinaryHeap::new();
    g[start] = 0;
    open.push(Reverse((h(start), start)));

    while let Some(Reverse((_, cur))) = open.pop() {
        if closed[cur] {
            continue;
        }
        if cur == goal {
            let mut cells = vec![cur];
            let mut c = cur;
            while c != start {
                c = parent[c];
                cells.push(c);
            }
            cells.reverse();
            return Some(cells);
        }
        closed[cur] = true;
        for nb in grid.neighbours(cur) {
            let cand = g[cur] + 1;
            if cand < g[nb] {
                g[nb] = cand;
                parent[nb] = cur;
                open.push(Reverse((cand + h(nb), nb)));
            }
        }
    }
    None
}

/// Nearest free cell (by path length from `from`) whose center lies within
/// `radius` of `target`. Returns the cell center.
pub fn approach_point(grid: &OccupancyGrid, from: Point, target: Point, radius: f64) -> Option<Point> {
    let (sc, sr) = grid.cell_of(from).filter(|&(c, r)| !grid.is_blocked(c, r))?;
    let start = grid.index(sc, sr);
    let mut seen = vec![false; grid.blocked.len()];
    let mut frontier = std::collections::VecDeque::from([start]);
    seen[start] = true;
    while let Some(cur) = frontier.pop_front() {
        let center = grid.center(cur % grid.width_cells, cur / grid.width_cells);
        if distance(center, target) <= radius {
            return Some(center);
        }
        for nb in grid.neighbours(cur) {
            if !seen[nb] {
                seen[nb] = true;
                frontier.push_back(nb);
            }
        }
    }
    None
}
