//! The evaluated policy wirings. Each mode is exactly one way of plugging
//! policies into the episode runners — nothing else about the run differs,
//! so a metrics gap between modes is attributable to the wiring alone.

use super::EvalError;
use crate::geom::ActionChunk;
use crate::nn::{GuidanceTokens, PolicyNet};
use crate::planner::RefineParams;
use crate::runtime::{
    base_features, embed_chunk_in_tokens, monolithic_run, vclock_run, BaseContext, BasePolicy,
    DirectAdopt, EpisodeOutcome, GuidanceMessage, NetBase, NetEdge, ObsMessage, OracleBase,
    OracleEdge, RunConfig,
};
use crate::scenario::Scenario;
use crate::world::{WorldState, SCAN_MAX_RANGE};
use serde::{Deserialize, Serialize};
use std::rc::Rc;

/// One wiring of the runtime.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyMode {
    /// The adapter alone, on-robot with zero guidance and no link at all:
    /// the small-policy baseline. Latency cannot touch it.
    EdgeOnly,
    /// The full-size policy's own chunk shipped through the delayed link
    /// and executed as-is — no rebase, no refinement.
    MonolithicDelayed,
    /// Stage-1 checkpoint (adapter fitted against a frozen trunk) in the
    /// full asynchronous wiring.
    NoE2E,
    /// Stage-2 checkpoint (whole stack fine-tuned) in the full
    /// asynchronous wiring.
    AsyncFull,
    /// Privileged planner guidance plus the analytic reactive refiner; the
    /// scripted stack that also generates training data.
    OracleRefiner,
}

pub const ALL_MODES: [PolicyMode; 5] = [
    PolicyMode::EdgeOnly,
    PolicyMode::MonolithicDelayed,
    PolicyMode::NoE2E,
    PolicyMode::AsyncFull,
    PolicyMode::OracleRefiner,
];

impl PolicyMode {
    pub fn label(self) -> &'static str {
        match self {
            PolicyMode::EdgeOnly => "edge_only",
            PolicyMode::MonolithicDelayed => "monolithic_delayed",
            PolicyMode::NoE2E => "no_e2e",
            PolicyMode::AsyncFull => "async_full",
            PolicyMode::OracleRefiner => "oracle_refiner",
        }
    }

    pub fn parse(s: &str) -> Option<PolicyMode> {
        ALL_MODES.into_iter().find(|m| m.label() == s)
    }

    /// Canonical ordering for reports.
    pub fn order(self) -> usize {
        ALL_MODES.iter().position(|m| *m == self).expect("every mode is listed")
    }
}

impl std::fmt::Display for PolicyMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

/// The trained checkpoints a suite may draw on. Modes that need a missing
/// checkpoint fail before any episode runs.
#[derive(Default, Clone)]
pub struct ModelSet {
    pub stage1: Option<Rc<PolicyNet>>,
    pub stage2: Option<Rc<PolicyNet>>,
}

impl ModelSet {
    pub fn none() -> ModelSet {
        ModelSet::default()
    }

    pub fn with(stage1: Option<PolicyNet>, stage2: Option<PolicyNet>) -> ModelSet {
        ModelSet { stage1: stage1.map(Rc::new), stage2: stage2.map(Rc::new) }
    }

    /// Verify the checkpoints `mode` needs are present.
    pub fn require(&self, mode: PolicyMode) -> Result<(), EvalError> {
        let missing = EvalError::MissingCheckpoint(mode.label());
        match mode {
            PolicyMode::NoE2E => self.stage1.as_ref().map(|_| ()).ok_or(missing),
            PolicyMode::EdgeOnly | PolicyMode::MonolithicDelayed | PolicyMode::AsyncFull => {
                self.stage2.as_ref().map(|_| ()).ok_or(missing)
            }
            PolicyMode::OracleRefiner => Ok(()),
        }
    }

    fn stage1(&self, mode: PolicyMode) -> Result<Rc<PolicyNet>, EvalError> {
        self.stage1.clone().ok_or(EvalError::MissingCheckpoint(mode.label()))
    }

    fn stage2(&self, mode: PolicyMode) -> Result<Rc<PolicyNet>, EvalError> {
        self.stage2.clone().ok_or(EvalError::MissingCheckpoint(mode.label()))
    }
}

/// Base that ships its own full chunk over the link: the trunk's chunk head
/// decodes planar steps, which ride verbatim in the token payload and are
/// executed by [`DirectAdopt`] at the edge.
pub struct ChunkShippingBase {
    pub net: Rc<PolicyNet>,
}

impl BasePolicy for ChunkShippingBase {
    fn guide(&mut self, obs: &ObsMessage, _ctx: &BaseContext<'_>) -> Option<GuidanceMessage> {
        let (pooled, goal) = base_features(&obs.scan, &obs.odom, &obs.goal, self.net.dims.pooled);
        let steps = self
            .net
            .base_steps(&pooled, &goal)
            .expect("validated checkpoint produces finite steps");
        let chunk = ActionChunk::from_planar_steps(obs.stamp, &steps)
            .expect("chunk head emits a full-length chunk");
        Some(GuidanceMessage {
            echo_stamp: obs.stamp,
            tokens: embed_chunk_in_tokens(&chunk, self.net.dims.proj_dim.max(2)),
        })
    }
}

/// Run one episode of `mode` on `scenario` with the given world seed.
pub fn run_episode(
    mode: PolicyMode,
    scenario: &Scenario,
    world_seed: u64,
    run: &RunConfig,
    models: &ModelSet,
) -> Result<EpisodeOutcome, EvalError> {
    let mut world = WorldState::spawn(scenario, world_seed)?;
    Ok(match mode {
        PolicyMode::EdgeOnly => {
            let net = models.stage2(mode)?;
            let silence = GuidanceTokens::zeros(&net.dims);
            let mut chunk_fn = |obs: &crate::world::ObservationFrame, _w: &WorldState| {
                let steps = net
                    .refine(&silence, &obs.scan, &obs.scan, SCAN_MAX_RANGE)
                    .expect("validated checkpoint produces finite steps");
                ActionChunk::from_planar_steps(obs.stamp, &steps)
                    .expect("adapter emits a full-length chunk")
            };
            monolithic_run(&mut world, &mut chunk_fn, run)
        }
        PolicyMode::MonolithicDelayed => {
            let mut base = ChunkShippingBase { net: models.stage2(mode)? };
            let mut edge = DirectAdopt;
            vclock_run(&mut world, &mut base, &mut edge, run)
        }
        PolicyMode::NoE2E => {
            let net = models.stage1(mode)?;
            let mut base = NetBase { net: net.clone() };
            let mut edge = NetEdge { net };
            vclock_run(&mut world, &mut base, &mut edge, run)
        }
        PolicyMode::AsyncFull => {
            let net = models.stage2(mode)?;
            let mut base = NetBase { net: net.clone() };
            let mut edge = NetEdge { net };
            vclock_run(&mut world, &mut base, &mut edge, run)
        }
        PolicyMode::OracleRefiner => {
            let mut base = OracleBase;
            let mut edge = OracleEdge { params: RefineParams::default() };
            vclock_run(&mut world, &mut base, &mut edge, run)
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::NetDims;
    use crate::runtime::{chunk_from_tokens, DelayModel};
    use crate::world::{Directive, GoalSpec, Termination};
    use crate::Pose2;

    fn small_net(seed: u64) -> PolicyNet {
        PolicyNet::new_random(
            NetDims {
                scan_beams: 64,
                pooled: 8,
                goal_dim: 8,
                base_hidden: 16,
                token_count: 8,
                token_dim: 12,
                proj_dim: 6,
                attn_ff: 8,
                head_hidden: [6, 8, 8],
                chunk_len: crate::geom::CHUNK_LEN,
            },
            seed,
        )
    }

    fn fixed(latency_s: f64) -> RunConfig {
        RunConfig { delay: DelayModel::Fixed(latency_s), ..RunConfig::default() }
    }

    #[test]
    fn mode_labels_round_trip() {
        for m in ALL_MODES {
            assert_eq!(PolicyMode::parse(m.label()), Some(m));
        }
        assert_eq!(PolicyMode::parse("banana"), None);
    }

    #[test]
    fn learned_modes_demand_their_checkpoints() {
        let empty = ModelSet::none();
        for mode in
            [PolicyMode::EdgeOnly, PolicyMode::MonolithicDelayed, PolicyMode::NoE2E, PolicyMode::AsyncFull]
        {
            assert!(matches!(empty.require(mode), Err(EvalError::MissingCheckpoint(_))));
            let sc = crate::scenario::find("open_empty").unwrap();
            assert!(matches!(
                run_episode(mode, &sc, 0, &fixed(0.2), &empty),
                Err(EvalError::MissingCheckpoint(_))
            ));
        }
        assert!(empty.require(PolicyMode::OracleRefiner).is_ok());

        let only_stage1 = ModelSet::with(Some(small_net(1)), None);
        assert!(only_stage1.require(PolicyMode::NoE2E).is_ok());
        assert!(matches!(
            only_stage1.require(PolicyMode::AsyncFull),
            Err(EvalError::MissingCheckpoint("async_full"))
        ));
    }

    #[test]
    fn oracle_refiner_solves_the_open_room() {
        let sc = crate::scenario::find("open_empty").unwrap();
        let out = run_episode(PolicyMode::OracleRefiner, &sc, 0, &fixed(0.2), &ModelSet::none())
            .unwrap();
        assert_eq!(out.termination, Termination::Success);
        assert!(out.collisions.is_empty());
    }

    #[test]
    fn chunk_shipping_base_moves_the_chunk_verbatim() {
        let net = Rc::new(small_net(7));
        let mut base = ChunkShippingBase { net: net.clone() };
        let obs = ObsMessage {
            stamp: 125_000,
            odom: Pose2::new(1.0, 2.0, 0.3),
            scan: vec![4.0; 64],
            goal: GoalSpec { pose: Pose2::new(5.0, 2.0, 0.0), directive: Directive::None },
        };
        let map = crate::world::GridMap::new(0.25, 8, 8);
        let ctx = BaseContext { map: &map, ped_discs: &[] };
        let msg = base.guide(&obs, &ctx).unwrap();
        assert_eq!(msg.echo_stamp, obs.stamp);

        let decoded = chunk_from_tokens(&msg.tokens, obs.stamp);
        let (pooled, goal) = base_features(&obs.scan, &obs.odom, &obs.goal, net.dims.pooled);
        let direct = net.base_steps(&pooled, &goal).unwrap();
        let expect = ActionChunk::from_planar_steps(obs.stamp, &direct).unwrap();
        for i in 0..expect.len() {
            // The link carries f32; quantization is the only permitted gap.
            assert!((decoded.waypoints[i].x - expect.waypoints[i].x).abs() < 1e-6);
            assert!((decoded.waypoints[i].y - expect.waypoints[i].y).abs() < 1e-6);
        }
    }

    #[test]
    fn edge_only_never_feels_the_link() {
        let models = ModelSet::with(None, Some(small_net(3)));
        let sc = crate::scenario::find("open_empty").unwrap();
        let near = run_episode(PolicyMode::EdgeOnly, &sc, 0, &fixed(0.2), &models).unwrap();
        let far = run_episode(PolicyMode::EdgeOnly, &sc, 0, &fixed(5.0), &models).unwrap();
        // The meta line hashes the config (which names the delay); the
        // behaviour itself must be identical row for row.
        assert_eq!(near.log.rows, far.log.rows);
        assert_eq!(near.termination, far.termination);
    }
}
