//! Geometric directive-compliance checks.
//!
//! Language-style directives are scored against the logged trajectory with
//! plain geometry: pass directives by signed lateral offset from the
//! *undirected* reference path, wall-hugging by mean clearance, stop-short
//! by the final distance to the goal. The checks assume the episode either
//! succeeded or ran long enough (≥ 10 s) to show its behaviour.

use crate::planner::{astar, densify, polyline_length, shortcut, PlanGrid};
use crate::runtime::EpisodeOutcome;
use crate::scenario::Scenario;
use crate::world::{Directive, GridMap};

/// Offset (m) a pass directive must exceed, with sign: left positive.
pub const PASS_COMPLY_OFFSET_M: f64 = 0.2;
/// Mean clearance (m) below which a trajectory counts as hugging the wall.
pub const HUG_COMPLY_CLEARANCE_M: f64 = 0.5;
/// Final distance (m) to the goal at or beyond which a stop counts as short.
pub const STOP_SHORT_COMPLY_M: f64 = 0.8;
/// Arc length (m) at each end of the reference path excluded from the pass
/// segment — the same span over which the expert's own offset tapers to
/// zero, where no lateral deviation can be demanded.
pub const PASS_TAPER_M: f64 = 1.0;

/// Plan the undirected reference path on the static map: where the robot
/// would go with no directive and no pedestrians. Dense (10 cm) polyline.
pub fn reference_path(scenario: &Scenario) -> Option<Vec<[f64; 2]>> {
    let map = GridMap::from_rows(scenario.cell_size_m, &scenario.rows).ok()?;
    let start = scenario.start_pose();
    let goal = scenario.goal_spec().pose;
    let s = [start.x, start.y];
    let g = [goal.x, goal.y];
    let grid = PlanGrid::from_map(&map, &[], &[s, g]);
    let path = astar(&grid, s, g)?;
    Some(densify(&shortcut(&grid, &path), 0.1))
}

/// Arc-length position and signed lateral offset (left positive) of point
/// `p` relative to a dense polyline, measured at the nearest vertex.
pub fn signed_lateral_offset(path: &[[f64; 2]], p: [f64; 2]) -> (f64, f64) {
    assert!(!path.is_empty(), "reference path has at least one vertex");
    let mut best = (0usize, f64::INFINITY);
    for (i, q) in path.iter().enumerate() {
        let d2 = (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2);
        if d2 < best.1 {
            best = (i, d2);
        }
    }
    let i = best.0;
    let s: f64 = path[..=i]
        .windows(2)
        .map(|w| ((w[1][0] - w[0][0]).powi(2) + (w[1][1] - w[0][1]).powi(2)).sqrt())
        .sum();
    let a = path[i.saturating_sub(1)];
    let b = path[(i + 1).min(path.len() - 1)];
    let (tx, ty) = (b[0] - a[0], b[1] - a[1]);
    let len = (tx * tx + ty * ty).sqrt();
    if len < 1e-9 {
        return (s, best.1.sqrt());
    }
    let cross = (tx / len) * (p[1] - path[i][1]) - (ty / len) * (p[0] - path[i][0]);
    (s, cross)
}

/// Whether positions keep a signed offset beyond ±[`PASS_COMPLY_OFFSET_M`]
/// on the requested side over at least half of the pass segment (the
/// reference path minus its tapered ends).
pub fn pass_compliance(path: &[[f64; 2]], positions: &[(f64, f64)], left: bool) -> bool {
    let total = polyline_length(path);
    let (s0, s1) = (PASS_TAPER_M, total - PASS_TAPER_M);
    if s1 <= s0 {
        return false;
    }
    let mut in_segment = 0usize;
    let mut clear = 0usize;
    for &(x, y) in positions {
        let (s, off) = signed_lateral_offset(path, [x, y]);
        if s < s0 || s > s1 {
            continue;
        }
        in_segment += 1;
        let ok = if left { off > PASS_COMPLY_OFFSET_M } else { off < -PASS_COMPLY_OFFSET_M };
        if ok {
            clear += 1;
        }
    }
    in_segment > 0 && 2 * clear >= in_segment
}

/// Score the episode's behaviour against the scenario's directive.
/// Vacuously true when the directive is [`Directive::None`].
pub fn directive_compliance(outcome: &EpisodeOutcome, scenario: &Scenario) -> bool {
    let directive = scenario.goal_spec().directive;
    match directive {
        Directive::None => true,
        Directive::StopShort => {
            let goal = scenario.goal_spec().pose;
            let p = outcome.final_pose;
            ((p.x - goal.x).powi(2) + (p.y - goal.y).powi(2)).sqrt() >= STOP_SHORT_COMPLY_M
        }
        Directive::HugWall => {
            let Ok(map) = GridMap::from_rows(scenario.cell_size_m, &scenario.rows) else {
                return false;
            };
            let poses = outcome.log.poses_for("pd");
            if poses.is_empty() {
                return false;
            }
            let mean: f64 = poses.iter().map(|&(_, x, y, _)| map.clearance(x, y, 4.0)).sum::<f64>()
                / poses.len() as f64;
            mean < HUG_COMPLY_CLEARANCE_M
        }
        Directive::PassLeft | Directive::PassRight => {
            let Some(path) = reference_path(scenario) else {
                return false;
            };
            let positions: Vec<(f64, f64)> =
                outcome.log.poses_for("pd").iter().map(|&(_, x, y, _)| (x, y)).collect();
            pass_compliance(&path, &positions, directive == Directive::PassLeft)
        }
    }
}
