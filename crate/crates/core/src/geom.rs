//! Planar rigid-body poses and short action chunks.
//!
//! Everything downstream — the simulator, the planner, the networks, the
//! controller — exchanges motion as either a [`Pose2`] or an [`ActionChunk`].
//! A chunk is a short horizon of future waypoints kept in *two* forms at once:
//! absolute waypoints in the frame the chunk was authored in, and the
//! step-relative deltas between consecutive waypoints. The two forms are kept
//! consistent by construction: `integrate_deltas` of the stored deltas always
//! reproduces the stored waypoints.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Number of waypoints in every action chunk.
pub const CHUNK_LEN: usize = 8;

/// Nominal spacing between consecutive chunk waypoints, metres.
pub const CHUNK_STEP_M: f64 = 0.1;

/// Period of the chunk's temporal grid, seconds (waypoint i sits at
/// `(i + 1) * CHUNK_PERIOD_S` after the chunk's frame stamp).
pub const CHUNK_PERIOD_S: f64 = 1.0 / 3.0;

#[derive(Debug, Error, PartialEq)]
pub enum GeomError {
    #[error("action chunk must contain at least one waypoint")]
    EmptyChunk,
    #[error("non-finite pose component")]
    NonFinitePose,
}

/// Wrap an angle into `(-pi, pi]`. Angles already in range pass through
/// bit-exactly, which keeps identity transforms identities.
#[inline]
pub fn normalize_angle(theta: f64) -> f64 {
    use std::f64::consts::PI;
    if theta > -PI && theta <= PI {
        return theta;
    }
    PI - (PI - theta).rem_euclid(2.0 * PI)
}

/// A planar pose: position in metres, heading in radians, heading always
/// normalized to `(-pi, pi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose2 {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl Pose2 {
    #[inline]
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Pose2 { x, y, theta: normalize_angle(theta) }
    }

    #[inline]
    pub fn identity() -> Self {
        Pose2 { x: 0.0, y: 0.0, theta: normalize_angle(0.0) }
    }

    #[inline]
    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.theta.is_finite()
    }

    /// Euclidean distance between the positions of two poses.
    #[inline]
    pub fn distance(&self, other: &Pose2) -> f64 {
        ((self.x - other.x).powi(2) + (self.y - other.y).powi(2)).sqrt()
    }
}

/// Compose two poses: the result is `b` expressed in the frame `a` is
/// expressed in, when `b` is given relative to `a`.
///
/// ```text
/// compose(a, b).xy = a.xy + R(a.theta) * b.xy
/// compose(a, b).theta = wrap(a.theta + b.theta)
/// ```
#[inline]
pub fn compose(a: &Pose2, b: &Pose2) -> Pose2 {
    let (s, c) = a.theta.sin_cos();
    Pose2 {
        x: a.x + c * b.x - s * b.y,
        y: a.y + s * b.x + c * b.y,
        theta: normalize_angle(a.theta + b.theta),
    }
}

/// Invert a pose so that `compose(a, inverse(a))` is the identity.
#[inline]
pub fn inverse(a: &Pose2) -> Pose2 {
    let (s, c) = a.theta.sin_cos();
    Pose2 {
        x: -(c * a.x + s * a.y),
        y: -(-s * a.x + c * a.y),
        theta: normalize_angle(-a.theta),
    }
}

/// Express `pose` (world frame) relative to `frame` (world frame).
#[inline]
pub fn relative_to(frame: &Pose2, pose: &Pose2) -> Pose2 {
    compose(&inverse(frame), pose)
}

/// Integrate step-relative deltas into absolute waypoints.
///
/// `waypoints[0] = deltas[0]` (the implicit start is the frame origin) and
/// `waypoints[i] = compose(waypoints[i-1], deltas[i])`.
pub fn integrate_deltas(deltas: &[Pose2]) -> Result<Vec<Pose2>, GeomError> {
    if deltas.is_empty() {
        return Err(GeomError::EmptyChunk);
    }
    let mut out = Vec::with_capacity(deltas.len());
    let mut cur = Pose2::identity();
    for d in deltas {
        cur = compose(&cur, d);
        out.push(cur);
    }
    Ok(out)
}

/// Recover step-relative deltas from absolute waypoints (the inverse of
/// [`integrate_deltas`] up to angle wrapping).
pub fn differentiate_waypoints(waypoints: &[Pose2]) -> Result<Vec<Pose2>, GeomError> {
    if waypoints.is_empty() {
        return Err(GeomError::EmptyChunk);
    }
    let mut out = Vec::with_capacity(waypoints.len());
    let mut prev = Pose2::identity();
    for w in waypoints {
        out.push(relative_to(&prev, w));
        prev = *w;
    }
    Ok(out)
}

/// A short horizon of future motion expressed in one local frame.
///
/// `frame_stamp` identifies the observation time whose robot pose defines the
/// chunk's frame; waypoints are where the robot should be `(i+1)` chunk
/// periods later. Both representations are stored and kept consistent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionChunk {
    pub frame_stamp: u64,
    pub waypoints: Vec<Pose2>,
    pub deltas: Vec<Pose2>,
}

impl ActionChunk {
    /// Build a chunk from step-relative deltas; waypoints are derived.
    ///
    /// The stored deltas are re-derived from the integrated waypoints so that
    /// both representations are exactly self-consistent regardless of which
    /// one the caller supplied (the round trip moves them by at most a few
    /// ulps).
    pub fn from_deltas(frame_stamp: u64, deltas: Vec<Pose2>) -> Result<Self, GeomError> {
        let waypoints = integrate_deltas(&deltas)?;
        Self::from_waypoints(frame_stamp, waypoints)
    }

    /// Build a chunk from absolute waypoints; deltas are derived.
    pub fn from_waypoints(frame_stamp: u64, waypoints: Vec<Pose2>) -> Result<Self, GeomError> {
        let deltas = differentiate_waypoints(&waypoints)?;
        Ok(ActionChunk { frame_stamp, waypoints, deltas })
    }

    /// Build a chunk from planar per-step displacements `(dx, dy)` expressed
    /// in the chunk frame. Positions are running sums; each waypoint's heading
    /// is the direction of the step that reached it (carrying the previous
    /// heading over zero-length steps).
    pub fn from_planar_steps(frame_stamp: u64, steps: &[(f64, f64)]) -> Result<Self, GeomError> {
        if steps.is_empty() {
            return Err(GeomError::EmptyChunk);
        }
        let mut waypoints = Vec::with_capacity(steps.len());
        let (mut x, mut y, mut heading) = (0.0f64, 0.0f64, 0.0f64);
        for &(dx, dy) in steps {
            x += dx;
            y += dy;
            if dx != 0.0 || dy != 0.0 {
                heading = dy.atan2(dx);
            }
            waypoints.push(Pose2::new(x, y, heading));
        }
        Self::from_waypoints(frame_stamp, waypoints)
    }

    /// All-zero chunk: the safe-stop command.
    pub fn safe_stop(frame_stamp: u64) -> Self {
        let deltas = vec![Pose2::identity(); CHUNK_LEN];
        ActionChunk::from_deltas(frame_stamp, deltas).expect("non-empty")
    }

    pub fn len(&self) -> usize {
        self.waypoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.waypoints.is_empty()
    }

    /// Final waypoint of the chunk.
    pub fn endpoint(&self) -> Pose2 {
        *self.waypoints.last().expect("chunks are non-empty by construction")
    }
}

/// Relative odometry between two observation times.
///
/// `rel` is the later robot pose expressed in the frame of the earlier one;
/// `elapsed` is the wall separation in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OdomDelta {
    pub rel: Pose2,
    pub elapsed: f64,
}

impl OdomDelta {
    pub fn identity() -> Self {
        OdomDelta { rel: Pose2::identity(), elapsed: 0.0 }
    }

    /// Delta taking the frame of `from` to the frame of `to` (world poses).
    pub fn between(from: &Pose2, to: &Pose2, elapsed: f64) -> Self {
        OdomDelta { rel: relative_to(from, to), elapsed }
    }
}

/// Re-express a chunk authored in an older frame in the newer frame described
/// by `delta`. Waypoints transform; step-relative deltas are recomputed from
/// the transformed waypoints (a frame change leaves them unchanged up to
/// floating-point noise). The frame stamp advances by the elapsed time.
pub fn rebase_chunk(chunk: &ActionChunk, delta: &OdomDelta) -> ActionChunk {
    let inv = inverse(&delta.rel);
    let waypoints: Vec<Pose2> = chunk.waypoints.iter().map(|w| compose(&inv, w)).collect();
    let deltas = differentiate_waypoints(&waypoints).expect("chunk is non-empty");
    let micros = (delta.elapsed * 1e6).round() as i64;
    let frame_stamp = (chunk.frame_stamp as i64 + micros).max(0) as u64;
    ActionChunk { frame_stamp, waypoints, deltas }
}

/// Planar distance between the final waypoints of two chunks, each read in
/// its own frame. Heading plays no part: only where the chunks end up.
pub fn endpoint_divergence(a: &ActionChunk, b: &ActionChunk) -> f64 {
    let ea = a.endpoint();
    let eb = b.endpoint();
    ((ea.x - eb.x).powi(2) + (ea.y - eb.y).powi(2)).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_PI_2, PI};

    const TOL: f64 = 1e-9;

    /// Independent oracle: a pose as a 3x3 homogeneous matrix.
    fn pose_matrix(p: &Pose2) -> [[f64; 3]; 3] {
        let (s, c) = p.theta.sin_cos();
        [[c, -s, p.x], [s, c, p.y], [0.0, 0.0, 1.0]]
    }

    fn mat_mul(a: &[[f64; 3]; 3], b: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
        let mut out = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                for k in 0..3 {
                    out[i][j] += a[i][k] * b[k][j];
                }
            }
        }
        out
    }

    fn matrix_to_pose(m: &[[f64; 3]; 3]) -> Pose2 {
        Pose2::new(m[0][2], m[1][2], m[1][0].atan2(m[0][0]))
    }

    fn assert_pose_close(a: &Pose2, b: &Pose2, tol: f64) {
        assert!((a.x - b.x).abs() < tol, "x: {} vs {}", a.x, b.x);
        assert!((a.y - b.y).abs() < tol, "y: {} vs {}", a.y, b.y);
        let dth = normalize_angle(a.theta - b.theta).abs();
        assert!(dth < tol, "theta: {} vs {}", a.theta, b.theta);
    }

    #[test]
    fn compose_matches_matrix_oracle() {
        let cases = [
            (Pose2::new(1.0, 0.0, FRAC_PI_2), Pose2::new(1.0, 0.0, 0.0)),
            (Pose2::new(0.5, -2.0, 0.3), Pose2::new(-1.0, 4.0, -2.9)),
            (Pose2::new(0.0, 0.0, PI), Pose2::new(3.0, 1.0, 1.0)),
            (Pose2::new(-7.0, 2.5, -0.001), Pose2::new(0.0, 0.0, 3.0)),
        ];
        for (a, b) in &cases {
            let got = compose(a, b);
            let want = matrix_to_pose(&mat_mul(&pose_matrix(a), &pose_matrix(b)));
            assert_pose_close(&got, &want, TOL);
        }
    }

    #[test]
    fn compose_frozen_example() {
        let got = compose(&Pose2::new(1.0, 0.0, FRAC_PI_2), &Pose2::new(1.0, 0.0, 0.0));
        assert_pose_close(&got, &Pose2::new(1.0, 1.0, FRAC_PI_2), TOL);
    }

    #[test]
    fn inverse_frozen_example() {
        let got = inverse(&Pose2::new(1.0, 1.0, FRAC_PI_2));
        assert_pose_close(&got, &Pose2::new(-1.0, 1.0, -FRAC_PI_2), TOL);
    }

    #[test]
    fn inverse_matches_matrix_oracle() {
        // Matrix inverse of [R t; 0 1] is [R' -R't; 0 1].
        for p in [
            Pose2::new(1.0, 1.0, FRAC_PI_2),
            Pose2::new(-0.3, 2.0, -3.0),
            Pose2::new(4.0, -4.0, 0.0),
        ] {
            let m = pose_matrix(&p);
            let rt = [[m[0][0], m[1][0], 0.0], [m[0][1], m[1][1], 0.0], [0.0, 0.0, 1.0]];
            let t = [[1.0, 0.0, -m[0][2]], [0.0, 1.0, -m[1][2]], [0.0, 0.0, 1.0]];
            let want = matrix_to_pose(&mat_mul(&rt, &t));
            assert_pose_close(&inverse(&p), &want, TOL);
        }
    }

    #[test]
    fn angle_normalization_boundary() {
        assert_eq!(normalize_angle(PI), PI);
        assert_eq!(normalize_angle(-PI), PI);
        assert!((normalize_angle(3.0 * PI) - PI).abs() < TOL);
        assert!(normalize_angle(0.0).abs() < TOL);
        assert!((normalize_angle(1.5 * PI) + 0.5 * PI).abs() < TOL);
    }

    #[test]
    fn integrate_straight_chunk() {
        let deltas = vec![Pose2::new(CHUNK_STEP_M, 0.0, 0.0); CHUNK_LEN];
        let wps = integrate_deltas(&deltas).unwrap();
        for (i, w) in wps.iter().enumerate() {
            assert!((w.x - 0.1 * (i + 1) as f64).abs() < TOL);
            assert!(w.y.abs() < TOL && w.theta.abs() < TOL);
        }
    }

    #[test]
    fn integrate_quarter_turns() {
        let deltas = vec![Pose2::new(1.0, 0.0, FRAC_PI_2); 2];
        let wps = integrate_deltas(&deltas).unwrap();
        assert_pose_close(&wps[0], &Pose2::new(1.0, 0.0, FRAC_PI_2), TOL);
        assert_pose_close(&wps[1], &Pose2::new(1.0, 1.0, PI), TOL);
    }

    #[test]
    fn integrate_empty_is_error() {
        assert_eq!(integrate_deltas(&[]).unwrap_err(), GeomError::EmptyChunk);
        assert_eq!(differentiate_waypoints(&[]).unwrap_err(), GeomError::EmptyChunk);
    }

    #[test]
    fn chunk_dual_representation_consistent() {
        let deltas = vec![
            Pose2::new(0.1, 0.02, 0.2),
            Pose2::new(0.08, -0.01, -0.4),
            Pose2::new(0.0, 0.0, 0.0),
            Pose2::new(0.05, 0.05, 1.0),
        ];
        let chunk = ActionChunk::from_deltas(7, deltas).unwrap();
        let back = integrate_deltas(&chunk.deltas).unwrap();
        for (a, b) in chunk.waypoints.iter().zip(&back) {
            assert_pose_close(a, b, TOL);
        }
        let chunk2 = ActionChunk::from_waypoints(7, chunk.waypoints.clone()).unwrap();
        for (a, b) in chunk.deltas.iter().zip(&chunk2.deltas) {
            assert_pose_close(a, b, TOL);
        }
    }

    #[test]
    fn planar_steps_build_consistent_chunk() {
        let steps = [(0.1, 0.0), (0.1, 0.0), (0.0, 0.1), (0.0, 0.0), (-0.1, 0.0)];
        let chunk = ActionChunk::from_planar_steps(3, &steps).unwrap();
        assert_pose_close(&chunk.waypoints[1], &Pose2::new(0.2, 0.0, 0.0), TOL);
        assert_pose_close(&chunk.waypoints[2], &Pose2::new(0.2, 0.1, FRAC_PI_2), TOL);
        // Zero step keeps the previous heading.
        assert_pose_close(&chunk.waypoints[3], &Pose2::new(0.2, 0.1, FRAC_PI_2), TOL);
        let back = integrate_deltas(&chunk.deltas).unwrap();
        for (a, b) in chunk.waypoints.iter().zip(&back) {
            assert_pose_close(a, b, TOL);
        }
    }

    #[test]
    fn all_zero_steps_are_stationary() {
        let chunk = ActionChunk::from_planar_steps(0, &[(0.0, 0.0); CHUNK_LEN]).unwrap();
        for w in &chunk.waypoints {
            assert_pose_close(w, &Pose2::identity(), TOL);
        }
    }

    #[test]
    fn rebase_shifts_straight_chunk() {
        let deltas = vec![Pose2::new(0.1, 0.0, 0.0); 8];
        let chunk = ActionChunk::from_deltas(0, deltas).unwrap();
        let delta = OdomDelta { rel: Pose2::new(0.1, 0.0, 0.0), elapsed: 0.125 };
        let rebased = rebase_chunk(&chunk, &delta);
        for (i, w) in rebased.waypoints.iter().enumerate() {
            assert!((w.x - 0.1 * i as f64).abs() < TOL, "waypoint {i}: {}", w.x);
            assert!(w.y.abs() < TOL);
        }
        assert_eq!(rebased.frame_stamp, 125_000);
    }

    #[test]
    fn rebase_half_turn_mirrors() {
        let chunk = ActionChunk::from_deltas(0, vec![Pose2::new(0.1, 0.05, 0.0); 4]).unwrap();
        let delta = OdomDelta { rel: Pose2::new(0.0, 0.0, PI), elapsed: 0.0 };
        let rebased = rebase_chunk(&chunk, &delta);
        for (w, r) in chunk.waypoints.iter().zip(&rebased.waypoints) {
            assert!((r.x + w.x).abs() < TOL);
            assert!((r.y + w.y).abs() < TOL);
            assert!(normalize_angle(r.theta - w.theta - PI).abs() < TOL);
        }
    }

    #[test]
    fn rebase_identity_is_exact() {
        let chunk = ActionChunk::from_deltas(42, vec![Pose2::new(0.1, -0.02, 0.1); 8]).unwrap();
        let rebased = rebase_chunk(&chunk, &OdomDelta::identity());
        assert_eq!(chunk, rebased);
    }

    #[test]
    fn rebase_then_inverse_recovers() {
        let chunk = ActionChunk::from_deltas(0, vec![Pose2::new(0.09, 0.01, -0.15); 8]).unwrap();
        let delta = OdomDelta { rel: Pose2::new(0.3, -0.1, 0.7), elapsed: 1.0 };
        let back = rebase_chunk(
            &rebase_chunk(&chunk, &delta),
            &OdomDelta { rel: inverse(&delta.rel), elapsed: -1.0 },
        );
        for (a, b) in chunk.waypoints.iter().zip(&back.waypoints) {
            assert_pose_close(a, b, TOL);
        }
        assert_eq!(back.frame_stamp, 0);
    }

    #[test]
    fn divergence_straight_vs_quarter_turn() {
        // Straight 0.8 m ahead vs the same length bent fully sideways:
        // endpoints (0.8, 0) and (0, 0.8), read each in its own frame.
        let straight = ActionChunk::from_deltas(0, vec![Pose2::new(0.1, 0.0, 0.0); 8]).unwrap();
        let turned = ActionChunk::from_waypoints(
            0,
            (1..=8).map(|i| Pose2::new(0.0, 0.1 * i as f64, FRAC_PI_2)).collect(),
        )
        .unwrap();
        let d = endpoint_divergence(&straight, &turned);
        assert!((d - 0.8 * 2.0f64.sqrt()).abs() < 1e-12, "got {d}");
        assert!((d - 1.1313708498984762).abs() < 1e-12);
    }

    #[test]
    fn divergence_ignores_heading() {
        let a = ActionChunk::from_waypoints(0, vec![Pose2::new(0.5, 0.2, 0.0)]).unwrap();
        let b = ActionChunk::from_waypoints(0, vec![Pose2::new(0.5, 0.2, 3.0)]).unwrap();
        assert_eq!(endpoint_divergence(&a, &b), 0.0);
    }

    #[test]
    fn divergence_emergency_stop_under_threshold() {
        let straight = ActionChunk::from_deltas(0, vec![Pose2::new(0.1, 0.0, 0.0); 8]).unwrap();
        let stop = ActionChunk::safe_stop(0);
        let d = endpoint_divergence(&straight, &stop);
        assert!((d - 0.8).abs() < 1e-12);
    }
}
