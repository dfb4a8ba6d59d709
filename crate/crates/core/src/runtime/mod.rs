//! Episode runners and the machinery between the edge and the base: wire
//! codec, observation buffer, delay models, policies, a deterministic
//! virtual-clock scheduler, a monolithic reference loop, and a live TCP
//! transport.

pub mod buffer;
pub mod codec;
pub mod delay;
pub mod live;
pub mod monolithic;
pub mod policy;
pub mod vclock;

pub use buffer::{BufferError, ObsBuffer, OBS_BUFFER_CAP, STALE_TOLERANCE_US};
pub use codec::{decode, encode, CodecError, GuidanceMessage, ObsMessage, WireMessage};
pub use delay::{DelayModel, DelaySampler, DELAY_CLIP_MAX_S, DELAY_CLIP_MIN_S};
pub use monolithic::monolithic_run;
pub use policy::{
    base_features, chunk_from_tokens, embed_chunk_in_tokens, BaseContext, BasePolicy,
    DirectAdopt, EdgePolicy, NetBase, NetEdge, OracleBase, OracleEdge, SilentBase,
};
pub use vclock::vclock_run;

use crate::world::{CollisionEvent, CollisionKind, ObservationFrame, Termination, WorldState};
use serde::{Deserialize, Serialize};

/// Shared timing and link configuration for a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    /// Edge sense/act rate, Hz.
    pub edge_hz: f64,
    /// Base service rate, Hz (the server is busy 1/rate per request).
    pub base_hz: f64,
    /// Low-level follower rate, Hz.
    pub pd_hz: f64,
    /// Base model compute time added before the link delay, seconds.
    pub inference_s: f64,
    pub delay: DelayModel,
    /// Seed for the delay sampler (the world has its own seed).
    pub seed: u64,
    /// Record per-edge-tick observations for dataset extraction.
    pub record_edge: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            edge_hz: 8.0,
            base_hz: 5.0,
            pd_hz: 10.0,
            inference_s: 0.0,
            delay: DelayModel::stochastic_default(),
            seed: 0,
            record_edge: false,
        }
    }
}

impl RunConfig {
    pub fn edge_period_us(&self) -> u64 {
        (1e6 / self.edge_hz).round() as u64
    }

    pub fn base_busy_us(&self) -> u64 {
        (1e6 / self.base_hz).round() as u64
    }

    pub fn pd_period_us(&self) -> u64 {
        (1e6 / self.pd_hz).round() as u64
    }

    /// Checksum of the serialized config, stamped into episode logs so a log
    /// can always be traced to the exact configuration that produced it.
    pub fn crc(&self) -> u32 {
        crate::util::crc32(serde_json::to_string(self).expect("config serializes").as_bytes())
    }
}

/// One line of an episode log.
#[derive(Debug, Clone, PartialEq)]
pub struct LogRow {
    pub t_s: f64,
    pub x: f64,
    pub y: f64,
    pub theta: f64,
    pub v: f64,
    pub omega: f64,
    pub echo_stamp: u64,
    pub event: &'static str,
}

/// Episode log: a JSON meta line plus CSV rows. Serialization is fully
/// deterministic — two identical runs produce byte-identical files.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeLog {
    pub meta: String,
    pub rows: Vec<LogRow>,
}

impl EpisodeLog {
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        out.push_str("# ");
        out.push_str(&self.meta);
        out.push('\n');
        out.push_str("sim_time,x,y,theta,v,omega,echo_stamp,event\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                r.t_s, r.x, r.y, r.theta, r.v, r.omega, r.echo_stamp, r.event
            ));
        }
        out
    }

    /// Poses of all rows with the given event tag.
    pub fn poses_for(&self, event: &str) -> Vec<(f64, f64, f64, f64)> {
        self.rows
            .iter()
            .filter(|r| r.event == event)
            .map(|r| (r.t_s, r.x, r.y, r.theta))
            .collect()
    }
}

/// Everything recorded at one edge sense, for dataset extraction.
#[derive(Debug, Clone)]
pub struct EdgeRecord {
    pub obs: ObservationFrame,
    pub ped_discs: Vec<([f64; 2], f64)>,
}

/// Result of one episode.
#[derive(Debug, Clone)]
pub struct EpisodeOutcome {
    pub termination: Termination,
    pub duration_s: f64,
    pub collisions: Vec<CollisionEvent>,
    pub final_pose: crate::Pose2,
    /// Guidance messages that arrived and matched an observation.
    pub guidance_count: usize,
    /// Guidance messages dropped because no buffered observation matched.
    pub stale_events: usize,
    pub log: EpisodeLog,
    pub edge_records: Vec<EdgeRecord>,
}

/// Internal recorder shared by the runners.
pub(crate) struct Tracker {
    pub rows: Vec<LogRow>,
    pub collisions: Vec<CollisionEvent>,
    pub guidance_count: usize,
    pub stale_events: usize,
    pub records: Vec<EdgeRecord>,
    pub last_twist: crate::world::Twist,
    pub last_echo: u64,
}

impl Tracker {
    pub fn new() -> Self {
        Tracker {
            rows: Vec::new(),
            collisions: Vec::new(),
            guidance_count: 0,
            stale_events: 0,
            records: Vec::new(),
            last_twist: crate::world::Twist::default(),
            last_echo: 0,
        }
    }

    pub fn row(&mut self, world: &WorldState, event: &'static str) {
        self.rows.push(LogRow {
            t_s: world.sim_time_s(),
            x: world.robot.x,
            y: world.robot.y,
            theta: world.robot.theta,
            v: self.last_twist.v,
            omega: self.last_twist.omega,
            echo_stamp: self.last_echo,
            event,
        });
    }

    /// Poll debounced collisions and log them.
    pub fn poll_collisions(&mut self, world: &mut WorldState) {
        for c in world.detect_collisions() {
            self.collisions.push(c);
            let tag = match c.kind {
                CollisionKind::Static => "collision_static",
                CollisionKind::Dynamic => "collision_ped",
            };
            self.row(world, tag);
        }
    }

    pub fn finish(
        mut self,
        world: &WorldState,
        termination: Termination,
        meta: String,
    ) -> EpisodeOutcome {
        let tag = match termination {
            Termination::Success => "success",
            Termination::Timeout => "timeout",
            Termination::Unsafe => "unsafe",
        };
        self.row(world, tag);
        EpisodeOutcome {
            termination,
            duration_s: world.sim_time_s(),
            collisions: self.collisions,
            final_pose: world.robot,
            guidance_count: self.guidance_count,
            stale_events: self.stale_events,
            log: EpisodeLog { meta, rows: self.rows },
            edge_records: self.records,
        }
    }
}

pub(crate) fn episode_meta(world: &WorldState, cfg: &RunConfig, runner: &str) -> String {
    format!(
        "{{\"scenario\":\"{}\",\"seed\":{},\"runner\":\"{}\",\"config_crc\":{},\"run_seed\":{}}}",
        world.scenario_id,
        world.seed,
        runner,
        cfg.crc(),
        cfg.seed
    )
}
