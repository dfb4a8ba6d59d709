//! Chunk losses, in two forms that are kept in lock-step.
//!
//! The plain functions take finished [`ActionChunk`]s and are the single
//! source of truth for reported metrics; they read both stored
//! representations (absolute waypoints and per-step deltas) exactly as the
//! chunk carries them. The tape builders take the network's raw planar
//! steps and build the training objective as differentiable graph nodes:
//! there the waypoint term integrates the steps by summation and the step
//! term compares against the reference's same-frame waypoint differences,
//! so both terms agree on what a perfect prediction is. On collinear
//! chunks — where stored deltas and planar steps coincide — the two forms
//! are pinned together by a unit test.

use super::{TrainError, TrainSample};
use crate::geom::{ActionChunk, Pose2};
use crate::nn::{
    base_chunk_steps, forward_adapter, forward_base, project_tokens, NetDims, NnError, NodeId,
    ParamStore, Tape, Tensor,
};
use crate::runtime::base_features;
use crate::world::SCAN_MAX_RANGE;

/// Mean over steps of the squared waypoint error plus the squared delta
/// error, each summed over (x, y). Headings are not penalized.
pub fn loss_im(pred: &ActionChunk, reference: &ActionChunk) -> Result<f64, TrainError> {
    if pred.len() != reference.len() {
        return Err(TrainError::ChunkLengthMismatch {
            pred: pred.len(),
            reference: reference.len(),
        });
    }
    let mut acc = 0.0;
    for i in 0..pred.len() {
        let (wp, wr) = (&pred.waypoints[i], &reference.waypoints[i]);
        let (dp, dr) = (&pred.deltas[i], &reference.deltas[i]);
        acc += (wr.x - wp.x).powi(2) + (wr.y - wp.y).powi(2);
        acc += (dr.x - dp.x).powi(2) + (dr.y - dp.y).powi(2);
    }
    Ok(acc / pred.len() as f64)
}

/// Mean squared step displacement. The first step is measured from the
/// chunk origin. Because rotations preserve length this equals the mean
/// squared magnitude of the stored deltas.
pub fn loss_sm(pred: &ActionChunk) -> f64 {
    let mut acc = 0.0;
    let mut prev = (0.0, 0.0);
    for w in &pred.waypoints {
        acc += (w.x - prev.0).powi(2) + (w.y - prev.1).powi(2);
        prev = (w.x, w.y);
    }
    acc / pred.len() as f64
}

/// Squared planar distance between the final waypoint and a goal given in
/// the chunk's frame. Supervision for samples that carry only an endpoint.
pub fn loss_final_only(pred: &ActionChunk, goal_local: &Pose2) -> f64 {
    let end = pred.endpoint();
    (end.x - goal_local.x).powi(2) + (end.y - goal_local.y).powi(2)
}

/// Which network path produces the predicted steps for a sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ForwardKind {
    /// Slow-policy trunk and its own chunk head, fed the fresh frame.
    /// Used to pre-train the trunk.
    BaseHead,
    /// The deployed pipeline: trunk on the delayed frame, projector,
    /// then the refiner fusing both scans.
    FullPipeline,
}

/// Build the forward pass for one sample, returning the `[chunk, 2]` node of
/// predicted planar steps.
pub fn forward_sample(
    tape: &mut Tape,
    store: &ParamStore,
    dims: &NetDims,
    sample: &TrainSample,
    kind: ForwardKind,
) -> Result<NodeId, NnError> {
    match kind {
        ForwardKind::BaseHead => {
            let (pooled, goal) = base_features(
                &sample.obs_now.scan,
                &sample.obs_now.odom,
                &sample.obs_now.goal,
                dims.pooled,
            );
            let tokens = forward_base(tape, store, dims, &pooled, &goal)?;
            base_chunk_steps(tape, store, tokens)
        }
        ForwardKind::FullPipeline => {
            let (pooled, goal) = base_features(
                &sample.obs_delayed.scan,
                &sample.obs_delayed.odom,
                &sample.obs_delayed.goal,
                dims.pooled,
            );
            let tokens = forward_base(tape, store, dims, &pooled, &goal)?;
            let guidance = project_tokens(tape, store, dims, tokens)?;
            forward_adapter(
                tape,
                store,
                dims,
                guidance,
                &sample.obs_now.scan,
                &sample.obs_delayed.scan,
                SCAN_MAX_RANGE,
            )
        }
    }
}

/// The loss graph for one sample.
pub struct TapeLoss {
    /// Weighted total: `w · (J_main + λ_sm · J_sm)`. Backward through this.
    pub total: NodeId,
    /// Unweighted main term (imitation or endpoint), as a value.
    pub j_main: f64,
    /// Unweighted smoothing term, as a value.
    pub j_sm: f64,
}

/// Attach the per-sample loss to `steps` (a `[chunk, 2]` node of planar
/// steps). The reference for imitation is always `ref_chunk_t`; for
/// endpoint-only samples the target is the executed endpoint, which doubles
/// as the local goal.
pub fn sample_loss(
    tape: &mut Tape,
    steps: NodeId,
    sample: &TrainSample,
    lambda_sm: f64,
    eff_weight: f64,
) -> Result<TapeLoss, TrainError> {
    let n = tape.value(steps).rows;
    let reference = &sample.ref_chunk_t;
    if n != reference.len() {
        return Err(TrainError::ChunkLengthMismatch { pred: n, reference: reference.len() });
    }

    // Smoothing: mean squared step magnitude, straight off the raw steps.
    let sq = tape.mul(steps, steps);
    let sm_sum = tape.sum_all(sq);
    let j_sm = tape.scale(sm_sum, 1.0 / n as f64);

    let waypoints = tape.cumsum_rows(steps);
    let j_main = if sample.final_only {
        let goal = reference.endpoint();
        let target = tape.leaf(Tensor::row_vec(vec![goal.x, goal.y]));
        let last = tape.select_row(waypoints, n - 1);
        let diff = tape.sub(last, target);
        let sq = tape.mul(diff, diff);
        tape.sum_all(sq)
    } else {
        // Step targets are the reference's waypoint differences in the
        // shared anchor frame — the same quantity the prediction integrates
        // — so a perfect fit of the steps is a perfect fit of both terms.
        let mut w_ref = Vec::with_capacity(n * 2);
        let mut d_ref = Vec::with_capacity(n * 2);
        let mut prev = (0.0, 0.0);
        for i in 0..n {
            let w = &reference.waypoints[i];
            w_ref.extend_from_slice(&[w.x, w.y]);
            d_ref.extend_from_slice(&[w.x - prev.0, w.y - prev.1]);
            prev = (w.x, w.y);
        }
        let w_leaf = tape.leaf(Tensor::from_vec(n, 2, w_ref));
        let d_leaf = tape.leaf(Tensor::from_vec(n, 2, d_ref));
        let dw = tape.sub(waypoints, w_leaf);
        let da = tape.sub(steps, d_leaf);
        let sq_w = tape.mul(dw, dw);
        let sq_a = tape.mul(da, da);
        let sw = tape.sum_all(sq_w);
        let sa = tape.sum_all(sq_a);
        let both = tape.add(sw, sa);
        tape.scale(both, 1.0 / n as f64)
    };

    let sm_scaled = tape.scale(j_sm, lambda_sm);
    let combined = tape.add(j_main, sm_scaled);
    let total = tape.scale(combined, eff_weight);
    Ok(TapeLoss { total, j_main: tape.scalar(j_main), j_sm: tape.scalar(j_sm) })
}
