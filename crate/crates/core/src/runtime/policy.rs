//! Policies plugged into the episode runners. A *base* policy answers
//! observations with guidance over the (delayed) link; an *edge* policy
//! turns the latest guidance plus fresh observations into an executable
//! chunk at the edge rate.

use crate::geom::{ActionChunk, OdomDelta, CHUNK_LEN};
use crate::nn::{pool_scan, scan_features, goal_encoding, GuidanceTokens, NnError, PolicyNet};
use crate::planner::{expert_chunk, reactive_refine, RefineParams};
use crate::runtime::codec::{GuidanceMessage, ObsMessage};
use crate::world::{GoalSpec, GridMap, ObservationFrame, SCAN_MAX_RANGE};
use crate::Pose2;
use std::rc::Rc;

/// Simulation-side context handed to base policies: the static map and the
/// pedestrian positions as they were when the observation was taken. Only
/// privileged (expert) bases may read it; learned bases must ignore it.
pub struct BaseContext<'a> {
    pub map: &'a GridMap,
    pub ped_discs: &'a [([f64; 2], f64)],
}

pub trait BasePolicy {
    /// Answer one observation, or withhold a reply entirely.
    fn guide(&mut self, obs: &ObsMessage, ctx: &BaseContext<'_>) -> Option<GuidanceMessage>;
}

pub trait EdgePolicy {
    /// Produce the chunk to execute *now*, local to the current pose.
    /// `obs_then` is the buffered observation the guidance echoes.
    /// A numerical failure aborts the episode as unsafe.
    fn refine(
        &mut self,
        guidance: &GuidanceMessage,
        obs_then: &ObservationFrame,
        obs_now: &ObservationFrame,
    ) -> Result<ActionChunk, NnError>;
}

/// Pooled-scan and goal features for the base network, from an observation.
/// The goal is re-expressed in the robot frame of that observation.
pub fn base_features(
    scan: &[f32],
    odom: &Pose2,
    goal: &GoalSpec,
    pooled: usize,
) -> (Vec<f64>, Vec<f64>) {
    let feats = scan_features(scan, SCAN_MAX_RANGE);
    let pooled_scan = pool_scan(&feats, pooled);
    let rel = crate::geom::relative_to(odom, &goal.pose);
    let goal_enc = goal_encoding(rel.x, rel.y, goal.directive.index());
    (pooled_scan, goal_enc)
}

/// Learned base: scan/goal features through the slow policy and projector,
/// emitting quantized guidance tokens.
pub struct NetBase {
    pub net: Rc<PolicyNet>,
}

impl BasePolicy for NetBase {
    fn guide(&mut self, obs: &ObsMessage, _ctx: &BaseContext<'_>) -> Option<GuidanceMessage> {
        let (pooled, goal) = base_features(&obs.scan, &obs.odom, &obs.goal, self.net.dims.pooled);
        let tokens = self
            .net
            .guidance(&pooled, &goal)
            .expect("validated checkpoint produces finite guidance");
        Some(GuidanceMessage { echo_stamp: obs.stamp, tokens })
    }
}

/// Learned edge: the adapter network, reading guidance plus both scans.
pub struct NetEdge {
    pub net: Rc<PolicyNet>,
}

impl EdgePolicy for NetEdge {
    fn refine(
        &mut self,
        guidance: &GuidanceMessage,
        obs_then: &ObservationFrame,
        obs_now: &ObservationFrame,
    ) -> Result<ActionChunk, NnError> {
        let steps =
            self.net.refine(&guidance.tokens, &obs_now.scan, &obs_then.scan, SCAN_MAX_RANGE)?;
        Ok(ActionChunk::from_planar_steps(obs_now.stamp, &steps)
            .expect("adapter emits a full-length chunk"))
    }
}

/// Pack a chunk's planar steps into a token block (token `i` carries step
/// `i` in lanes 0 and 1). Used by baselines that ship whole chunks over the
/// guidance link without a learned projector.
pub fn embed_chunk_in_tokens(chunk: &ActionChunk, token_dim: usize) -> GuidanceTokens {
    let mut tokens = vec![vec![0.0f32; token_dim]; CHUNK_LEN];
    let mut prev = (0.0, 0.0);
    for (i, wp) in chunk.waypoints.iter().enumerate() {
        tokens[i][0] = (wp.x - prev.0) as f32;
        tokens[i][1] = (wp.y - prev.1) as f32;
        prev = (wp.x, wp.y);
    }
    GuidanceTokens { tokens }
}

/// Inverse of [`embed_chunk_in_tokens`].
pub fn chunk_from_tokens(tokens: &GuidanceTokens, frame_stamp: u64) -> ActionChunk {
    let steps: Vec<(f64, f64)> =
        tokens.tokens.iter().map(|row| (row[0] as f64, row[1] as f64)).collect();
    ActionChunk::from_planar_steps(frame_stamp, &steps).expect("token block holds a full chunk")
}

/// Privileged base: plans an expert chunk from the world as it was at the
/// observation, shipping it verbatim in the token payload.
pub struct OracleBase;

impl BasePolicy for OracleBase {
    fn guide(&mut self, obs: &ObsMessage, ctx: &BaseContext<'_>) -> Option<GuidanceMessage> {
        let chunk = expert_chunk(ctx.map, ctx.ped_discs, obs.odom, &obs.goal, obs.stamp);
        Some(GuidanceMessage {
            echo_stamp: obs.stamp,
            tokens: embed_chunk_in_tokens(&chunk, 16),
        })
    }
}

/// Scripted edge: exact odometry rebase plus the analytic reactive refiner.
pub struct OracleEdge {
    pub params: RefineParams,
}

impl EdgePolicy for OracleEdge {
    fn refine(
        &mut self,
        guidance: &GuidanceMessage,
        obs_then: &ObservationFrame,
        obs_now: &ObservationFrame,
    ) -> Result<ActionChunk, NnError> {
        let chunk = chunk_from_tokens(&guidance.tokens, obs_then.stamp);
        let elapsed = (obs_now.stamp - obs_then.stamp) as f64 * 1e-6;
        let delta = OdomDelta::between(&obs_then.odom, &obs_now.odom, elapsed);
        let params = self.params.adjusted_for(obs_now.goal.directive);
        Ok(reactive_refine(&chunk, &delta, &obs_now.scan, &params))
    }
}

/// Baseline edge that executes stale guidance directly: the chunk is adopted
/// as if it were local to the *current* pose — no rebase, no reaction.
pub struct DirectAdopt;

impl EdgePolicy for DirectAdopt {
    fn refine(
        &mut self,
        guidance: &GuidanceMessage,
        _obs_then: &ObservationFrame,
        obs_now: &ObservationFrame,
    ) -> Result<ActionChunk, NnError> {
        Ok(chunk_from_tokens(&guidance.tokens, obs_now.stamp))
    }
}

/// A base that never answers; used to probe safe-stop behaviour.
pub struct SilentBase;

impl BasePolicy for SilentBase {
    fn guide(&mut self, _obs: &ObsMessage, _ctx: &BaseContext<'_>) -> Option<GuidanceMessage> {
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chunk_token_embedding_roundtrips() {
        let steps: Vec<(f64, f64)> =
            (0..CHUNK_LEN).map(|i| (0.05 + 0.005 * i as f64, -0.02 + 0.004 * i as f64)).collect();
        let chunk = ActionChunk::from_planar_steps(9, &steps).unwrap();
        let tokens = embed_chunk_in_tokens(&chunk, 16);
        let back = chunk_from_tokens(&tokens, 9);
        for i in 0..CHUNK_LEN {
            assert!((back.waypoints[i].x - chunk.waypoints[i].x).abs() < 1e-6);
            assert!((back.waypoints[i].y - chunk.waypoints[i].y).abs() < 1e-6);
        }
    }
}
