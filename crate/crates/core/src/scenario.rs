//! Scenario catalog: JSON descriptions of maps (ASCII-art occupancy rows),
//! start/goal poses, steering directives, pedestrian scripts, and hazard
//! regions. The standard catalog ships embedded in the library; extra
//! scenarios can be loaded from a directory at runtime.

use crate::world::{Directive, GoalSpec, HazardRect, PedScript, SimError};
use crate::Pose2;
use serde::{Deserialize, Serialize};

/// Goal pose plus directive as written in scenario files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoalJson {
    pub pose: [f64; 3],
    #[serde(default)]
    pub directive: Directive,
}

/// One episode description. `rows` is the occupancy grid written top row
/// first, `#` occupied and `.` free, each cell `cell_size_m` on a side.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub id: String,
    pub cell_size_m: f64,
    pub rows: Vec<String>,
    /// `[x, y, theta]` in metres/radians.
    pub start: [f64; 3],
    pub goal: GoalJson,
    #[serde(default)]
    pub pedestrians: Vec<PedScript>,
    /// Permitted straight-line start-to-goal distance `[min, max]`; checked
    /// when the world spawns so map edits cannot silently move the goal.
    pub declared_distance_m: [f64; 2],
    #[serde(default)]
    pub hazards: Vec<HazardRect>,
}

impl Scenario {
    pub fn goal_spec(&self) -> GoalSpec {
        GoalSpec {
            pose: Pose2::new(self.goal.pose[0], self.goal.pose[1], self.goal.pose[2]),
            directive: self.goal.directive,
        }
    }

    pub fn start_pose(&self) -> Pose2 {
        Pose2::new(self.start[0], self.start[1], self.start[2])
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serialization cannot fail")
    }

    /// The same scenario with every pedestrian removed.
    pub fn without_pedestrians(&self) -> Scenario {
        let mut s = self.clone();
        s.pedestrians.clear();
        s.id = format!("{}~static", s.id);
        s
    }
}

/// The ten-scenario evaluation suite, in canonical order.
pub const SUITE_IDS: [&str; 10] = [
    "corridor_12m",
    "open_hall",
    "doorway",
    "l_turn",
    "s_baffles",
    "pillars",
    "ped_cross_front",
    "ped_headon",
    "ped_overtake",
    "zigzag",
];

/// Directive-bearing scenarios used for shaping data and compliance checks.
pub const DIRECTIVE_IDS: [&str; 4] = [
    "directive_pass_left",
    "directive_pass_right",
    "directive_hug_wall",
    "directive_stop_short",
];

macro_rules! embedded {
    ($($name:literal),* $(,)?) => {
        [$(($name, include_str!(concat!("../scenarios/", $name, ".json")))),*]
    };
}

const EMBEDDED: [(&str, &str); 15] = embedded![
    "corridor_12m",
    "open_hall",
    "doorway",
    "l_turn",
    "s_baffles",
    "pillars",
    "ped_cross_front",
    "ped_headon",
    "ped_overtake",
    "zigzag",
    "directive_pass_left",
    "directive_pass_right",
    "directive_hug_wall",
    "directive_stop_short",
    "open_empty",
];

/// Every scenario shipped with the library.
pub fn catalog() -> Vec<Scenario> {
    EMBEDDED
        .iter()
        .map(|(name, text)| {
            let s = Scenario::from_json(text)
                .unwrap_or_else(|e| panic!("embedded scenario {name} is malformed: {e}"));
            assert_eq!(&s.id, name, "embedded scenario file name disagrees with its id");
            s
        })
        .collect()
}

/// Look up one embedded scenario by id.
pub fn find(id: &str) -> Result<Scenario, SimError> {
    EMBEDDED
        .iter()
        .find(|(name, _)| *name == id)
        .map(|(_, text)| Scenario::from_json(text).expect("embedded scenario is well-formed"))
        .ok_or_else(|| SimError::UnknownScenario(id.to_string()))
}

/// Load every `*.json` scenario in a directory (sorted by file name).
pub fn load_dir(dir: &std::path::Path) -> std::io::Result<Vec<Scenario>> {
    let mut paths: Vec<_> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    let mut out = Vec::new();
    for p in paths {
        let text = std::fs::read_to_string(&p)?;
        let s = Scenario::from_json(&text)
            .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?;
        out.push(s);
    }
    Ok(out)
}
