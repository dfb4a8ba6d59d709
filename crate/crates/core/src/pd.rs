//! Low-level chunk follower: a 10 Hz polar PD loop that tracks the waypoint
//! two steps ahead of its progress marker, with a heading gate so the robot
//! turns in place before driving. This is the only thing that ever commands
//! the motors; every policy above it just swaps chunks.

use crate::geom::{ActionChunk, Pose2};
use crate::world::{Twist, MAX_SPEED, MAX_TURN};

/// Follower tick rate.
pub const PD_RATE_HZ: f64 = 10.0;
/// Follower period in microseconds (exact on the event grid).
pub const PD_PERIOD_US: u64 = 100_000;
/// A waypoint closer than this counts as passed.
pub const PASS_RADIUS_M: f64 = 0.05;
/// Look-ahead: track the waypoint this many steps past the progress marker.
pub const LOOKAHEAD_STEPS: usize = 2;
/// Proportional speed gain (per metre of range).
pub const KP_V: f64 = 1.5;
/// Proportional turn gain (per radian of bearing error).
pub const KP_W: f64 = 2.0;
/// Derivative turn gain.
pub const KD_W: f64 = 0.1;
/// Bearing error beyond which the robot turns in place.
pub const HEADING_GATE_RAD: f64 = std::f64::consts::FRAC_PI_3;

/// Tracks one action chunk expressed in a known world frame.
#[derive(Debug, Clone)]
pub struct ChunkFollower {
    chunk: ActionChunk,
    /// World pose of the chunk frame (the robot pose the chunk is local to).
    frame: Pose2,
    base_idx: usize,
    prev_err: f64,
    has_prev: bool,
}

impl ChunkFollower {
    pub fn new(chunk: ActionChunk, frame_world: Pose2) -> Self {
        ChunkFollower { chunk, frame: frame_world, base_idx: 0, prev_err: 0.0, has_prev: false }
    }

    /// Adopt a new chunk; tracking progress and the derivative memory reset.
    pub fn swap_chunk(&mut self, chunk: ActionChunk, frame_world: Pose2) {
        self.chunk = chunk;
        self.frame = frame_world;
        self.base_idx = 0;
        self.prev_err = 0.0;
        self.has_prev = false;
    }

    pub fn chunk(&self) -> &ActionChunk {
        &self.chunk
    }

    pub fn frame(&self) -> Pose2 {
        self.frame
    }

    pub fn base_idx(&self) -> usize {
        self.base_idx
    }

    fn waypoint_world(&self, i: usize) -> Pose2 {
        crate::geom::compose(&self.frame, &self.chunk.waypoints[i])
    }

    /// One control tick: returns the body twist for the next `dt` seconds.
    pub fn tick(&mut self, robot: Pose2, dt: f64) -> Twist {
        let n = self.chunk.waypoints.len();
        let dist_to = |i: usize| {
            let w = crate::geom::compose(&self.frame, &self.chunk.waypoints[i]);
            robot.distance(&w)
        };
        // Progress marker: walk forward while the next waypoint is nearer,
        // then consume any waypoint inside the pass radius.
        while self.base_idx + 1 < n && dist_to(self.base_idx + 1) <= dist_to(self.base_idx) {
            self.base_idx += 1;
        }
        while self.base_idx + 1 < n && dist_to(self.base_idx) < PASS_RADIUS_M {
            self.base_idx += 1;
        }
        // Arrived at the chunk's end: hold position.
        if dist_to(n - 1) < PASS_RADIUS_M {
            self.prev_err = 0.0;
            self.has_prev = false;
            return Twist { v: 0.0, omega: 0.0 };
        }
        let target = self.waypoint_world((self.base_idx + LOOKAHEAD_STEPS).min(n - 1));
        let rel = crate::geom::relative_to(&robot, &target);
        let range = (rel.x * rel.x + rel.y * rel.y).sqrt();
        let bearing = rel.y.atan2(rel.x);
        let de = if self.has_prev { (bearing - self.prev_err) / dt } else { 0.0 };
        self.prev_err = bearing;
        self.has_prev = true;
        let omega = (KP_W * bearing + KD_W * de).clamp(-MAX_TURN, MAX_TURN);
        let v = if bearing.abs() > HEADING_GATE_RAD {
            0.0
        } else {
            (KP_V * range).clamp(0.0, MAX_SPEED)
        };
        Twist { v, omega }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::CHUNK_LEN;
    use crate::world::arc_step;

    fn straight_chunk() -> ActionChunk {
        ActionChunk::from_planar_steps(0, &vec![(0.1, 0.0); CHUNK_LEN]).unwrap()
    }

    #[test]
    fn converges_onto_a_straight_chunk() {
        // Start 0.2 m off the line the chunk runs along.
        let mut follower = ChunkFollower::new(straight_chunk(), Pose2::identity());
        let mut robot = Pose2::new(0.0, 0.2, 0.0);
        let mut tail_cross_track: Vec<f64> = Vec::new();
        for k in 0..200 {
            let cmd = follower.tick(robot, 0.1);
            assert!(cmd.v >= 0.0, "the follower never reverses");
            robot = arc_step(&robot, cmd.v, cmd.omega, 0.1);
            if k >= 150 {
                tail_cross_track.push(robot.y.abs());
            }
        }
        let end = Pose2::new(0.8, 0.0, 0.0);
        assert!(robot.distance(&end) < 0.1, "robot ended {:.3} m from the endpoint", robot.distance(&end));
        let worst = tail_cross_track.iter().cloned().fold(0.0, f64::max);
        assert!(worst < 0.05, "steady-state cross-track {worst:.3}");
    }

    #[test]
    fn arrived_means_zero_twist() {
        let mut follower = ChunkFollower::new(straight_chunk(), Pose2::identity());
        let cmd = follower.tick(Pose2::new(0.8, 0.0, 0.0), 0.1);
        assert_eq!((cmd.v, cmd.omega), (0.0, 0.0));
    }

    #[test]
    fn stationary_chunk_holds_position() {
        let chunk = ActionChunk::safe_stop(0);
        let mut follower = ChunkFollower::new(chunk, Pose2::new(3.0, 2.0, 1.0));
        let cmd = follower.tick(Pose2::new(3.0, 2.0, 1.0), 0.1);
        assert_eq!((cmd.v, cmd.omega), (0.0, 0.0));
    }

    #[test]
    fn heading_gate_turns_in_place_first() {
        // Chunk runs along -x from the frame; the robot faces +x.
        let chunk =
            ActionChunk::from_planar_steps(0, &vec![(-0.1, 0.0); CHUNK_LEN]).unwrap();
        let mut follower = ChunkFollower::new(chunk, Pose2::identity());
        let cmd = follower.tick(Pose2::identity(), 0.1);
        assert_eq!(cmd.v, 0.0, "target behind: drive is gated off");
        assert!(cmd.omega.abs() > 0.5, "and the robot spins toward it");
        assert!(cmd.omega.abs() <= MAX_TURN + 1e-12);
    }

    #[test]
    fn turn_rate_saturates_at_the_cap() {
        let chunk =
            ActionChunk::from_planar_steps(0, &vec![(0.0, 0.1); CHUNK_LEN]).unwrap();
        let mut follower = ChunkFollower::new(chunk, Pose2::identity());
        let cmd = follower.tick(Pose2::identity(), 0.1);
        assert_eq!(cmd.omega, MAX_TURN);
    }

    #[test]
    fn derivative_damps_a_closing_error() {
        let mut follower = ChunkFollower::new(straight_chunk(), Pose2::identity());
        // First tick from a heading 0.3 rad off the line: pure P.
        follower.tick(Pose2::new(0.0, 0.0, -0.3), 0.1);
        // Second tick with most of the error gone: D term opposes.
        let cmd = follower.tick(Pose2::new(0.0, 0.0, -0.05), 0.1);
        let bearing_now = 0.05f64.atan2(0.0f64).min(0.3); // bearing is ~0.05 rad
        let _ = bearing_now;
        // The closing error makes the derivative negative, so omega is less
        // than the proportional part alone.
        assert!(cmd.omega < KP_W * 0.06, "derivative should damp, got {}", cmd.omega);
    }

    #[test]
    fn swapping_chunks_resets_progress() {
        let mut follower = ChunkFollower::new(straight_chunk(), Pose2::identity());
        let mut robot = Pose2::identity();
        for _ in 0..40 {
            let cmd = follower.tick(robot, 0.1);
            robot = arc_step(&robot, cmd.v, cmd.omega, 0.1);
        }
        assert!(follower.base_idx() > 0, "made progress on the first chunk");
        follower.swap_chunk(straight_chunk(), robot);
        assert_eq!(follower.base_idx(), 0);
        // The new chunk is local to the robot, so tracking just continues.
        let cmd = follower.tick(robot, 0.1);
        assert!(cmd.v > 0.0);
    }
}
