//! The planner and motion model, compiled for the browser. Every export
//! returns a JSON string for the page to draw.

use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

use fluid_woz::engine::Engine;
use fluid_woz::model::{starter_scenario, validate_scenario, GoalStatus, Pose, ValidatedScenario, WorldState};
use fluid_woz::sim::{step, ActiveMotion, MotionProfile, Path};

fn scenario() -> ValidatedScenario {
    validate_scenario(starter_scenario()).expect("starter scene is valid")
}

/// The starter room: bounds, occupancy grid, objects and the robot.
#[wasm_bindgen]
pub fn scene() -> String {
    let s = scenario();
    let engine = Engine::new(&s).expect("starter scene has a free spawn");
    let g = engine.grid();
    let world = WorldState::initial(&s);
    json!({
        "width": s.config().world_width,
        "height": s.config().world_height,
        "cell_size": g.cell_size,
        "cols": g.width_cells,
        "rows": g.height_cells,
        "blocked": g.blocked,
        "objects": world.objects.values().collect::<Vec<_>>(),
        "robot": world.robot,
        "radius": s.config().robot.radius,
        "reach": s.config().robot.reach_radius,
    })
    .to_string()
}

/// Resolves a click on the room as the Wizard console would and, if it
/// becomes a goal, returns the planned route from the robot's spawn.
#[wasm_bindgen]
pub fn click(x: f64, y: f64) -> String {
    let s = scenario();
    let mut engine = Engine::new(&s).expect("starter scene has a free spawn");
    let mut world = WorldState::initial(&s);
    let target = engine.validate_target(&world, [x, y]);
    let mut out = json!({ "target": target.resolved });
    let Some(variant) = target.goal_variant() else {
        out["status"] = "illegal_click".into();
        return out.to_string();
    };
    out["goal"] = serde_json::to_value(&variant).unwrap_or(Value::Null);
    let (id, _) = engine.submit_goal(&mut world, variant, None, 0).expect("fresh engine");
    match engine.goal(id).map(|(_, st)| st) {
        Some(GoalStatus::Rejected(reason)) => {
            out["status"] = "rejected".into();
            out["reason"] = reason.to_string().into();
        }
        _ => {
            let path = engine.motion().map(|m| m.path.clone()).unwrap_or_else(Path::empty);
            out["status"] = "active".into();
            out["waypoints"] = json!(path.waypoints);
            out["total_length"] = path.total_length.into();
            out["eta_ms"] = engine.poll(id).map(|p| p.est_remaining_ms).unwrap_or(0).into();
        }
    }
    out.to_string()
}

/// Speed and distance along a straight drive, one sample per tick, with the
/// brake applied at `cancel_ms` when it is non-negative.
#[wasm_bindgen]
pub fn profile(distance: f64, v_max: f64, a_max: f64, decel: f64, cancel_ms: f64, tick_ms: u32) -> String {
    if !(distance > 0.0 && v_max > 0.0 && a_max > 0.0 && decel > 0.0 && tick_ms > 0) {
        return json!({ "error": "all parameters must be positive" }).to_string();
    }
    let p = MotionProfile { v_max, a_max, decel };
    let mut world = WorldState::initial(&scenario());
    world.robot.base = Pose::new(0.0, 0.0, 0.0);
    let path = Path {
        waypoints: vec![[distance, 0.0]],
        total_length: distance,
    };
    let mut m = ActiveMotion::new([0.0, 0.0], path, p);
    let mut samples = vec![[0.0, 0.0, 0.0]];
    let mut cancel_v = None;
    let limit = 200_000;
    for _ in 0..limit {
        let t = world.tick * tick_ms as u64;
        if cancel_ms >= 0.0 && t as f64 >= cancel_ms && !m.decelerating {
            m.decelerating = true;
            cancel_v = Some(world.robot.linear_velocity);
        }
        world = step(&world, Some(&mut m), tick_ms as u64);
        samples.push([(world.tick * tick_ms as u64) as f64, world.robot.linear_velocity, m.traveled]);
        if m.finished || (m.decelerating && world.robot.linear_velocity == 0.0) {
            break;
        }
    }
    json!({
        "samples": samples,
        "closed_form_ms": p.traverse_time(distance, 0.0) * 1000.0,
        "cancel_speed": cancel_v,
        "stopping_distance": cancel_v.map(|v| p.stopping_distance(v)),
    })
    .to_string()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(s: String) -> Value {
        serde_json::from_str(&s).unwrap()
    }

    #[test]
    fn scene_grid_matches_dimensions() {
        let v = parse(scene());
        let cells = v["cols"].as_u64().unwrap() * v["rows"].as_u64().unwrap();
        assert_eq!(v["blocked"].as_array().unwrap().len() as u64, cells);
        assert_eq!(v["objects"].as_array().unwrap().len(), 4);
    }

    #[test]
    fn clicks_resolve_like_the_server() {
        let floor = parse(click(2.0, 3.5));
        assert_eq!(floor["status"], "active");
        let wps = floor["waypoints"].as_array().unwrap();
        assert_eq!(wps.last().unwrap(), &json!([2.0, 3.5]));

        assert_eq!(parse(click(5.0, 5.0))["status"], "illegal_click");
        let pick = parse(click(3.5, 2.5));
        assert_eq!(pick["target"], json!({ "object": "remote" }));
        let place = parse(click(7.5, 8.5));
        assert_eq!(place["status"], "rejected");
    }

    #[test]
    fn profile_reaches_closed_form_time() {
        let v = parse(profile(4.0, 1.5, 2.0, 2.0, -1.0, 10));
        let last = v["samples"].as_array().unwrap().last().unwrap().clone();
        let t = last[0].as_f64().unwrap();
        assert!((t - v["closed_form_ms"].as_f64().unwrap()).abs() <= 10.0);
        assert!((last[2].as_f64().unwrap() - 4.0).abs() < 1e-9);
    }

    #[test]
    fn cancel_brakes_to_rest() {
        let v = parse(profile(8.0, 1.5, 2.0, 2.0, 1500.0, 10));
        let samples = v["samples"].as_array().unwrap();
        let last = samples.last().unwrap();
        assert_eq!(last[1].as_f64().unwrap(), 0.0);
        assert!(last[2].as_f64().unwrap() < 8.0);
        assert!(v["stopping_distance"].as_f64().unwrap() > 0.0);
        assert!(parse(profile(0.0, 1.0, 1.0, 1.0, -1.0, 10))["error"].is_string());
    }
}
