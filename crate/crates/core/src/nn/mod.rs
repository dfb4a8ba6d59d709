//! Networks, gradients, and checkpoints.
//!
//! Everything is plain `f64` on a reverse-mode [`Tape`]; inference runs the
//! same graphs and simply discards the recording, so there is exactly one
//! implementation of every forward pass.

mod checkpoint;
pub mod gradcheck;
mod model;
mod store;
mod tape;
mod tensor;

pub use checkpoint::{dims_from_store, load_checkpoint, parse_checkpoint, save_checkpoint};
pub use model::{
    base_chunk_steps, forward_adapter, forward_base, goal_encoding, init_params, pool_scan,
    project_tokens, scan_features, GuidanceTokens, NetDims, DIRECTIVE_KINDS,
};
pub use store::{AdamConfig, ParamGroup, ParamStore, ParamSubset};
pub use tape::{NodeId, Tape};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite activation")]
    NumericalBlowup,
    #[error("backward called without a recorded forward pass")]
    NoTape,
    #[error("unknown parameter {0:?}")]
    UnknownParam(String),
    #[error("malformed checkpoint: {0}")]
    MalformedCheckpoint(String),
    #[error("checkpoint checksum mismatch")]
    ChecksumMismatch,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A frozen network stack ready for inference: dimensions plus parameters.
#[derive(Debug, Clone)]
pub struct PolicyNet {
    pub dims: NetDims,
    pub store: ParamStore,
}

impl PolicyNet {
    pub fn new_random(dims: NetDims, seed: u64) -> Self {
        let store = init_params(&dims, seed);
        PolicyNet { dims, store }
    }

    pub fn load(path: &std::path::Path) -> Result<Self, NnError> {
        let store = load_checkpoint(path)?;
        let dims = dims_from_store(&store)?;
        Ok(PolicyNet { dims, store })
    }

    pub fn save(&self, path: &std::path::Path) -> Result<(), NnError> {
        save_checkpoint(&self.store, path)
    }

    /// Raw guidance tokens for an observation, as a plain tensor.
    pub fn base_tokens(&self, pooled_scan: &[f64], goal: &[f64]) -> Result<Tensor, NnError> {
        let mut tape = Tape::new();
        let tokens = forward_base(&mut tape, &self.store, &self.dims, pooled_scan, goal)?;
        tape.check_finite()?;
        Ok(tape.value(tokens).clone())
    }

    /// Projected guidance tokens, quantized to `f32` exactly as they would
    /// cross the link.
    pub fn guidance(&self, pooled_scan: &[f64], goal: &[f64]) -> Result<GuidanceTokens, NnError> {
        let mut tape = Tape::new();
        let tokens = forward_base(&mut tape, &self.store, &self.dims, pooled_scan, goal)?;
        let projected = project_tokens(&mut tape, &self.store, &self.dims, tokens)?;
        tape.check_finite()?;
        Ok(GuidanceTokens::from_tensor(tape.value(projected)))
    }

    /// Planar steps decoded directly from the guidance policy's own tokens
    /// (the stack's stand-alone chunk source).
    pub fn base_steps(&self, pooled_scan: &[f64], goal: &[f64]) -> Result<Vec<(f64, f64)>, NnError> {
        let mut tape = Tape::new();
        let tokens = forward_base(&mut tape, &self.store, &self.dims, pooled_scan, goal)?;
        let steps = base_chunk_steps(&mut tape, &self.store, tokens)?;
        tape.check_finite()?;
        let v = tape.value(steps);
        Ok((0..v.rows).map(|r| (v.get(r, 0), v.get(r, 1))).collect())
    }

    /// Planar steps from the adapter given link guidance and the two scans.
    pub fn refine(
        &self,
        guidance: &GuidanceTokens,
        scan_now: &[f32],
        scan_delayed: &[f32],
        max_range: f64,
    ) -> Result<Vec<(f64, f64)>, NnError> {
        let mut tape = Tape::new();
        let g = tape.leaf(guidance.to_tensor());
        let steps = forward_adapter(
            &mut tape,
            &self.store,
            &self.dims,
            g,
            scan_now,
            scan_delayed,
            max_range,
        )?;
        tape.check_finite()?;
        let v = tape.value(steps);
        Ok((0..v.rows).map(|r| (v.get(r, 0), v.get(r, 1))).collect())
    }
}
