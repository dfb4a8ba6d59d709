//! The deterministic 2D world: occupancy grid, unicycle robot, scripted
//! pedestrians, a forward-arc range scanner, and episode termination rules.
//!
//! Determinism contract: a world advanced through the same sequence of
//! commands and time splits produces bit-identical state. Pedestrians walk on
//! a fixed 100 ms internal grid and are the only consumers of the world's
//! random stream, so their trajectories depend only on (scenario, seed) —
//! never on the robot or on how finely the caller slices time.

use crate::geom::{normalize_angle, Pose2};
use crate::scenario::Scenario;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Robot speed cap, m/s.
pub const MAX_SPEED: f64 = 0.3;
/// Robot turn-rate cap, rad/s.
pub const MAX_TURN: f64 = 1.0;
/// Beams per scan.
pub const SCAN_BEAMS: usize = 64;
/// Scan field of view, centred on the heading (radians).
pub const SCAN_FOV: f64 = 270.0 * std::f64::consts::PI / 180.0;
/// Scan range cap, metres.
pub const SCAN_MAX_RANGE: f64 = 5.0;
/// Robot body radius, metres.
pub const ROBOT_RADIUS: f64 = 0.2;
/// Goal acceptance radius, metres.
pub const GOAL_RADIUS: f64 = 1.0;
/// Episode time limit, seconds.
pub const TIME_LIMIT_S: f64 = 120.0;
/// Pedestrian integration substep, microseconds.
pub const PED_SUBSTEP_US: u64 = 100_000;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("non-finite or non-positive command: v={v}, omega={omega}, dt={dt}")]
    BadCommand { v: f64, omega: f64, dt: f64 },
    #[error("scenario {0:?} not found in the catalog")]
    UnknownScenario(String),
    #[error("bad scenario {id:?}: {reason}")]
    BadScenario { id: String, reason: String },
}

/// Semantic steering hint attached to a goal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum Directive {
    #[default]
    None,
    PassLeft,
    PassRight,
    HugWall,
    StopShort,
}

impl Directive {
    pub fn index(self) -> usize {
        match self {
            Directive::None => 0,
            Directive::PassLeft => 1,
            Directive::PassRight => 2,
            Directive::HugWall => 3,
            Directive::StopShort => 4,
        }
    }
}

/// Where the robot should go and how.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GoalSpec {
    pub pose: Pose2,
    pub directive: Directive,
}

/// A commanded body velocity.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Twist {
    pub v: f64,
    pub omega: f64,
}

/// One range scan plus the odometry and goal at the same instant.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationFrame {
    /// Microseconds since episode start.
    pub stamp: u64,
    pub scan: Vec<f32>,
    pub odom: Pose2,
    pub goal: GoalSpec,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CollisionKind {
    Static,
    Dynamic,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CollisionEvent {
    pub kind: CollisionKind,
    pub time_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Termination {
    Success,
    Timeout,
    Unsafe,
}

/// Axis-aligned occupancy grid. Cell `(0, 0)` spans `[0, cell) x [0, cell)`;
/// everything outside the grid counts as occupied.
#[derive(Debug, Clone)]
pub struct GridMap {
    pub cell_size: f64,
    pub width: usize,
    pub height: usize,
    occupied: Vec<bool>,
}

impl GridMap {
    pub fn new(cell_size: f64, width: usize, height: usize) -> Self {
        GridMap { cell_size, width, height, occupied: vec![false; width * height] }
    }

    /// Build from ASCII art rows written top to bottom (`#` = occupied).
    pub fn from_rows(cell_size: f64, rows: &[String]) -> Result<Self, String> {
        let height = rows.len();
        let width = rows.first().map_or(0, |r| r.chars().count());
        if height == 0 || width == 0 {
            return Err("empty grid".into());
        }
        let mut map = GridMap::new(cell_size, width, height);
        for (i, row) in rows.iter().enumerate() {
            if row.chars().count() != width {
                return Err(format!("row {i} has ragged width"));
            }
            let y = height - 1 - i;
            for (x, ch) in row.chars().enumerate() {
                match ch {
                    '#' => map.set(x, y, true),
                    '.' => {}
                    other => return Err(format!("unexpected grid character {other:?}")),
                }
            }
        }
        Ok(map)
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.occupied[y * self.width + x] = v;
    }

    /// Occupancy by signed cell index; out-of-bounds is occupied.
    #[inline]
    pub fn occupied_cell(&self, x: i64, y: i64) -> bool {
        if x < 0 || y < 0 || x as usize >= self.width || y as usize >= self.height {
            return true;
        }
        self.occupied[y as usize * self.width + x as usize]
    }

    #[inline]
    pub fn cell_of(&self, x: f64, y: f64) -> (i64, i64) {
        ((x / self.cell_size).floor() as i64, (y / self.cell_size).floor() as i64)
    }

    pub fn size_m(&self) -> (f64, f64) {
        (self.width as f64 * self.cell_size, self.height as f64 * self.cell_size)
    }

    /// Distance from a point to the nearest occupied cell rectangle, capped.
    pub fn clearance(&self, x: f64, y: f64, cap: f64) -> f64 {
        let (cx, cy) = self.cell_of(x, y);
        let reach = (cap / self.cell_size).ceil() as i64 + 1;
        let mut best = cap;
        for iy in cy - reach..=cy + reach {
            for ix in cx - reach..=cx + reach {
                if !self.occupied_cell(ix, iy) {
                    continue;
                }
                let d = self.point_to_cell_distance(x, y, ix, iy);
                if d < best {
                    best = d;
                }
            }
        }
        best
    }

    fn point_to_cell_distance(&self, x: f64, y: f64, ix: i64, iy: i64) -> f64 {
        let (x0, y0) = (ix as f64 * self.cell_size, iy as f64 * self.cell_size);
        let dx = (x0 - x).max(0.0).max(x - (x0 + self.cell_size));
        let dy = (y0 - y).max(0.0).max(y - (y0 + self.cell_size));
        (dx * dx + dy * dy).sqrt()
    }

    /// True when a disc of `radius` around the point overlaps no occupied cell.
    pub fn disc_free(&self, x: f64, y: f64, radius: f64) -> bool {
        self.clearance(x, y, radius + self.cell_size) > radius
    }

    /// Exact grid ray march: distance to the first occupied cell along the
    /// ray, capped at `max_range`.
    pub fn raycast(&self, ox: f64, oy: f64, angle: f64, max_range: f64) -> f64 {
        let (dy, dx) = angle.sin_cos();
        let (mut ix, mut iy) = self.cell_of(ox, oy);
        if self.occupied_cell(ix, iy) {
            return 0.0;
        }
        let step_x: i64 = if dx > 0.0 { 1 } else { -1 };
        let step_y: i64 = if dy > 0.0 { 1 } else { -1 };
        let next_boundary =
            |i: i64, step: i64| -> f64 { (i + if step > 0 { 1 } else { 0 }) as f64 * self.cell_size };
        let mut t_max_x =
            if dx != 0.0 { (next_boundary(ix, step_x) - ox) / dx } else { f64::INFINITY };
        let mut t_max_y =
            if dy != 0.0 { (next_boundary(iy, step_y) - oy) / dy } else { f64::INFINITY };
        let t_delta_x = if dx != 0.0 { self.cell_size / dx.abs() } else { f64::INFINITY };
        let t_delta_y = if dy != 0.0 { self.cell_size / dy.abs() } else { f64::INFINITY };
        loop {
            let t = t_max_x.min(t_max_y);
            if t > max_range {
                return max_range;
            }
            if t_max_x <= t_max_y {
                ix += step_x;
                t_max_x += t_delta_x;
            } else {
                iy += step_y;
                t_max_y += t_delta_y;
            }
            if self.occupied_cell(ix, iy) {
                return t;
            }
        }
    }
}

/// Open-loop pedestrian script: start point, a waypoint chain, a walking
/// speed, optional per-substep heading noise, and a start delay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PedScript {
    pub start: [f64; 2],
    pub waypoints: Vec<[f64; 2]>,
    pub speed: f64,
    #[serde(default = "default_ped_radius")]
    pub radius: f64,
    #[serde(default)]
    pub noise_sigma: f64,
    #[serde(default)]
    pub start_delay_s: f64,
    #[serde(default)]
    pub cyclic: bool,
}

fn default_ped_radius() -> f64 {
    0.3
}

#[derive(Debug, Clone)]
pub struct PedState {
    pub pos: [f64; 2],
    pub script: PedScript,
    leg: usize,
    done: bool,
}

impl PedState {
    fn new(script: PedScript) -> Self {
        PedState { pos: script.start, script, leg: 0, done: false }
    }

    /// One 100 ms substep toward the current waypoint, with seeded heading
    /// noise. `interval_start_s` is the time the substep covers from; the
    /// pedestrian moves only once its start delay has fully elapsed.
    /// Finished pedestrians stand still (and still block).
    fn substep(&mut self, interval_start_s: f64, rng: &mut ChaCha8Rng) {
        // The noise draw happens unconditionally so the random stream depends
        // only on substep count, not on script phase.
        let z: f64 = rng.gen_range(-1.0..1.0);
        if self.done
            || interval_start_s < self.script.start_delay_s
            || self.script.waypoints.is_empty()
        {
            return;
        }
        let target = self.script.waypoints[self.leg];
        let (dx, dy) = (target[0] - self.pos[0], target[1] - self.pos[1]);
        let dist = (dx * dx + dy * dy).sqrt();
        let dt = PED_SUBSTEP_US as f64 * 1e-6;
        let step = self.script.speed * dt;
        if dist <= step.max(0.05) {
            self.pos = target;
            self.leg += 1;
            if self.leg >= self.script.waypoints.len() {
                if self.script.cyclic {
                    self.leg = 0;
                } else {
                    self.done = true;
                }
            }
            return;
        }
        let heading = dy.atan2(dx) + z * self.script.noise_sigma;
        self.pos[0] += step * heading.cos();
        self.pos[1] += step * heading.sin();
    }
}

/// Axis-aligned region that terminates the episode as `Unsafe`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HazardRect {
    pub min: [f64; 2],
    pub max: [f64; 2],
}

impl HazardRect {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.min[0] && x <= self.max[0] && y >= self.min[1] && y <= self.max[1]
    }
}

/// Full mutable simulation state for one episode.
#[derive(Debug, Clone)]
pub struct WorldState {
    pub map: GridMap,
    pub robot: Pose2,
    pub twist: Twist,
    pub peds: Vec<PedState>,
    pub goal: GoalSpec,
    pub start: Pose2,
    pub hazards: Vec<HazardRect>,
    pub scenario_id: String,
    pub seed: u64,
    sim_time_us: u64,
    ped_clock_us: u64,
    rng: ChaCha8Rng,
    contact_static: bool,
    contact_ped: Vec<bool>,
}

impl WorldState {
    /// Instantiate a scenario with a seed. Pedestrian noise derives from the
    /// seed and scenario id only.
    pub fn spawn(scenario: &Scenario, seed: u64) -> Result<Self, SimError> {
        let bad = |reason: String| SimError::BadScenario { id: scenario.id.clone(), reason };
        let map = GridMap::from_rows(scenario.cell_size_m, &scenario.rows).map_err(bad)?;
        let start = Pose2::new(scenario.start[0], scenario.start[1], scenario.start[2]);
        let goal = scenario.goal_spec();
        if !map.disc_free(start.x, start.y, ROBOT_RADIUS) {
            return Err(bad("start pose is not free".into()));
        }
        if !map.disc_free(goal.pose.x, goal.pose.y, ROBOT_RADIUS) {
            return Err(bad("goal pose is not free".into()));
        }
        let dist = start.distance(&goal.pose);
        let [lo, hi] = scenario.declared_distance_m;
        if dist < lo - 1e-9 || dist > hi + 1e-9 {
            return Err(bad(format!("goal distance {dist:.3} outside declared [{lo}, {hi}]")));
        }
        let mut hasher = 0xcbf2_9ce4_8422_2325u64;
        for b in scenario.id.bytes() {
            hasher ^= b as u64;
            hasher = hasher.wrapping_mul(0x1000_0000_01b3);
        }
        let peds: Vec<PedState> =
            scenario.pedestrians.iter().cloned().map(PedState::new).collect();
        let contact_ped = vec![false; peds.len()];
        Ok(WorldState {
            map,
            robot: start,
            twist: Twist::default(),
            peds,
            goal,
            start,
            hazards: scenario.hazards.clone(),
            scenario_id: scenario.id.clone(),
            seed,
            sim_time_us: 0,
            ped_clock_us: 0,
            rng: ChaCha8Rng::seed_from_u64(seed ^ hasher),
            contact_static: false,
            contact_ped,
        })
    }

    pub fn sim_time_us(&self) -> u64 {
        self.sim_time_us
    }

    pub fn sim_time_s(&self) -> f64 {
        self.sim_time_us as f64 * 1e-6
    }

    /// Latch a command; it holds until replaced.
    pub fn set_command(&mut self, cmd: Twist) -> Result<(), SimError> {
        if !cmd.v.is_finite() || !cmd.omega.is_finite() {
            return Err(SimError::BadCommand { v: cmd.v, omega: cmd.omega, dt: 0.0 });
        }
        self.twist = Twist {
            v: cmd.v.clamp(-MAX_SPEED, MAX_SPEED),
            omega: cmd.omega.clamp(-MAX_TURN, MAX_TURN),
        };
        Ok(())
    }

    /// Apply a command over `dt` seconds: exact constant-twist arc for the
    /// robot, fixed 100 ms substeps for pedestrians.
    pub fn step(&mut self, v: f64, omega: f64, dt: f64) -> Result<(), SimError> {
        if !v.is_finite() || !omega.is_finite() || !dt.is_finite() || dt <= 0.0 {
            return Err(SimError::BadCommand { v, omega, dt });
        }
        self.set_command(Twist { v, omega })?;
        let target = self.sim_time_us + (dt * 1e6).round() as u64;
        self.advance_to(target);
        Ok(())
    }

    /// Advance to an absolute microsecond stamp using the latched command.
    /// A no-op when `target_us` is not in the future.
    pub fn advance_to(&mut self, target_us: u64) {
        if target_us <= self.sim_time_us {
            return;
        }
        let dt = (target_us - self.sim_time_us) as f64 * 1e-6;
        self.robot = arc_step(&self.robot, self.twist.v, self.twist.omega, dt);
        self.sim_time_us = target_us;
        while self.ped_clock_us + PED_SUBSTEP_US <= self.sim_time_us {
            let interval_start = self.ped_clock_us as f64 * 1e-6;
            self.ped_clock_us += PED_SUBSTEP_US;
            for p in &mut self.peds {
                p.substep(interval_start, &mut self.rng);
            }
        }
    }

    /// Current pedestrian positions and radii, for privileged planning.
    pub fn ped_discs(&self) -> Vec<([f64; 2], f64)> {
        self.peds.iter().map(|p| (p.pos, p.script.radius)).collect()
    }

    /// Range scan plus odometry and goal, stamped with the current time.
    pub fn sense(&self) -> ObservationFrame {
        let mut scan = Vec::with_capacity(SCAN_BEAMS);
        for i in 0..SCAN_BEAMS {
            let frac = i as f64 / (SCAN_BEAMS - 1) as f64 - 0.5;
            let angle = normalize_angle(self.robot.theta + frac * SCAN_FOV);
            let mut range = self.map.raycast(self.robot.x, self.robot.y, angle, SCAN_MAX_RANGE);
            for p in &self.peds {
                if let Some(t) = ray_circle(
                    self.robot.x,
                    self.robot.y,
                    angle,
                    p.pos[0],
                    p.pos[1],
                    p.script.radius,
                ) {
                    if t < range {
                        range = t;
                    }
                }
            }
            scan.push(range.max(1e-6) as f32);
        }
        ObservationFrame { stamp: self.sim_time_us, scan, odom: self.robot, goal: self.goal }
    }

    /// Success, hazard, or timeout — in that precedence.
    pub fn check_termination(&self) -> Option<Termination> {
        if self.robot.distance(&self.goal.pose) < GOAL_RADIUS {
            return Some(Termination::Success);
        }
        if self.hazards.iter().any(|h| h.contains(self.robot.x, self.robot.y)) {
            return Some(Termination::Unsafe);
        }
        if self.sim_time_s() > TIME_LIMIT_S {
            return Some(Termination::Timeout);
        }
        None
    }

    /// Debounced contact check: one event per continuous contact episode,
    /// separately for the static map and for each pedestrian.
    pub fn detect_collisions(&mut self) -> Vec<CollisionEvent> {
        let mut events = Vec::new();
        let hit_static = !self.map.disc_free(self.robot.x, self.robot.y, ROBOT_RADIUS);
        if hit_static && !self.contact_static {
            events.push(CollisionEvent { kind: CollisionKind::Static, time_s: self.sim_time_s() });
        }
        self.contact_static = hit_static;
        for (i, p) in self.peds.iter().enumerate() {
            let dx = self.robot.x - p.pos[0];
            let dy = self.robot.y - p.pos[1];
            let touching =
                (dx * dx + dy * dy).sqrt() < ROBOT_RADIUS + p.script.radius;
            if touching && !self.contact_ped[i] {
                events
                    .push(CollisionEvent { kind: CollisionKind::Dynamic, time_s: self.sim_time_s() });
            }
            self.contact_ped[i] = touching;
        }
        events
    }
}

/// Exact unicycle arc: constant `(v, omega)` over `dt`.
pub fn arc_step(pose: &Pose2, v: f64, omega: f64, dt: f64) -> Pose2 {
    if omega.abs() < 1e-9 {
        let (s, c) = pose.theta.sin_cos();
        return Pose2::new(pose.x + v * dt * c, pose.y + v * dt * s, pose.theta);
    }
    let r = v / omega;
    let th1 = pose.theta + omega * dt;
    Pose2::new(
        pose.x + r * (th1.sin() - pose.theta.sin()),
        pose.y - r * (th1.cos() - pose.theta.cos()),
        th1,
    )
}

/// Smallest positive ray parameter hitting a circle, if any.
fn ray_circle(ox: f64, oy: f64, angle: f64, cx: f64, cy: f64, r: f64) -> Option<f64> {
    let (dy, dx) = angle.sin_cos();
    let (fx, fy) = (cx - ox, cy - oy);
    let b = fx * dx + fy * dy;
    let disc = b * b - (fx * fx + fy * fy) + r * r;
    if disc < 0.0 {
        return None;
    }
    let t = b - disc.sqrt();
    (t > 0.0).then_some(t)
}
