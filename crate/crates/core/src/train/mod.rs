//! Imitation training: datasets distilled from privileged-planner rollouts,
//! re-weighting of reactive segments, the chunk losses, and the staged
//! optimization drivers.
//!
//! The pipeline has three stages. First the slow policy's trunk is
//! pre-trained alone to imitate executed chunks from single observations
//! ([`pretrain_base`]). Then the projector and fast refiner are trained on
//! top of the frozen trunk ([`train_stage1`]). Finally every parameter is
//! fine-tuned end-to-end ([`train_stage2`]), which aligns the two halves of
//! the split policy across the delayed link they communicate over.
//!
//! Every sample pairs a *current* observation with a *delayed* one drawn
//! uniformly from the recent past of the same rollout, so the refiner learns
//! to act on fresh sensors while its guidance lags. Samples whose executed
//! future diverges from what the delayed frame predicted — dodges, yields,
//! hard stops — are rare but load-bearing, and get a higher loss weight.

mod data;
mod loss;
mod run;

pub use data::{gen_dataset, upweight_mask, Dataset, DatasetConfig, GenOutput};
pub use loss::{
    forward_sample, loss_final_only, loss_im, loss_sm, sample_loss, ForwardKind, TapeLoss,
};
pub use run::{
    epoch_batches, pretrain_base, split_reactive_holdout, train_stage1, train_stage2, EpochRow,
    Split, TrainConfig, TrainMetrics,
};

use crate::geom::{endpoint_divergence, ActionChunk, GeomError};
use crate::nn::NnError;
use crate::world::{GoalSpec, ObservationFrame, SimError};

/// Divergence threshold (metres) above which a sample counts as reactive.
pub const D_TH_DEFAULT_M: f64 = 1.0;

/// Loss multiplier applied to reactive samples.
pub const W_UP_DEFAULT: f64 = 4.0;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("chunk length mismatch: predicted {pred} steps, reference {reference}")]
    ChunkLengthMismatch { pred: usize, reference: usize },
    #[error("dataset file does not start with the expected magic")]
    BadMagic,
    #[error("unsupported dataset version {0}")]
    BadVersion(u8),
    #[error("dataset checksum mismatch")]
    BadCrc,
    #[error("dataset file is truncated or malformed")]
    Truncated,
    #[error("dataset holds no samples")]
    EmptyDataset,
    #[error(transparent)]
    Net(#[from] NnError),
    #[error(transparent)]
    Geom(#[from] GeomError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Which corner of the data mix a sample came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleDomain {
    /// Static-world navigation.
    Plain,
    /// Episode containing scripted pedestrians.
    Pedestrian,
    /// Directive-bearing goal supervised only at the chunk endpoint.
    DirectiveGoal,
}

/// One training example extracted from a rollout.
///
/// `ref_chunk_t` is the label: the trajectory the robot actually executed
/// after the current observation, expressed in that observation's frame.
/// `ref_chunk_tk` is the same construction anchored at the delayed
/// observation; it exists *only* to decide the sample weight and is never a
/// loss target.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSample {
    /// The stale frame the slow policy would have seen (time `t - k`).
    pub obs_delayed: ObservationFrame,
    /// The fresh frame the refiner sees (time `t`).
    pub obs_now: ObservationFrame,
    /// Delay between the two frames, in edge ticks.
    pub k_steps: u32,
    /// Episode goal (also carried by both frames).
    pub goal: GoalSpec,
    /// Executed future from `t`, in the frame at `t`. The label.
    pub ref_chunk_t: ActionChunk,
    /// Executed future from `t - k`, in the frame at `t - k`. Weighting only.
    pub ref_chunk_tk: ActionChunk,
    /// Loss multiplier; greater than one for reactive samples.
    pub weight: f64,
    /// Supervise only the final waypoint against the executed endpoint.
    pub final_only: bool,
    /// The source episode contained pedestrians.
    pub from_ped_episode: bool,
}

impl TrainSample {
    /// Planar distance between the endpoints of the two reference chunks,
    /// each read in its own frame. Zero for steady motion; large when the
    /// robot changed behaviour inside the window.
    pub fn divergence(&self) -> f64 {
        endpoint_divergence(&self.ref_chunk_t, &self.ref_chunk_tk)
    }

    pub fn domain(&self) -> SampleDomain {
        if self.final_only {
            SampleDomain::DirectiveGoal
        } else if self.from_ped_episode {
            SampleDomain::Pedestrian
        } else {
            SampleDomain::Plain
        }
    }
}

/// One optimizer step's worth of samples.
///
/// Only the slots marked eligible honour the stored sample weight; the rest
/// train at weight one. Half of each batch is eligible, so re-weighting
/// shifts emphasis without starving ordinary data.
#[derive(Debug, Clone)]
pub struct Batch {
    /// Indices into the dataset.
    pub indices: Vec<usize>,
    /// Per-slot: does the stored weight apply?
    pub eligible: Vec<bool>,
    /// Per-slot domain tags, for mix accounting.
    pub domains: Vec<SampleDomain>,
}
