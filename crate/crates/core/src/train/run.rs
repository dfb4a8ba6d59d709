//! Staged optimization drivers.
//!
//! All three stages share one loop: shuffle, batch, accumulate per-sample
//! gradients, take an Adam step over the stage's parameter subset, then
//! score the held-out reactive samples. The loss is sum-reduced across a
//! batch, so accumulating two half-batches and stepping once is bit-for-bit
//! the same as one full batch — which is what makes gradient accumulation a
//! safe memory valve rather than a different optimizer.
//!
//! A run snapshots its parameters after every finite epoch. If a loss or a
//! parameter ever turns non-finite the run stops, restores the last finite
//! snapshot, and reports itself aborted instead of returning poisoned
//! weights.

use super::{Batch, Dataset, ForwardKind, TrainError};
use crate::geom::ActionChunk;
use crate::nn::{
    dims_from_store, AdamConfig, NetDims, NnError, ParamStore, ParamSubset, Tape,
};
use crate::train::loss::{forward_sample, loss_im, sample_loss};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const HOLDOUT_MIX: u64 = 0x2545_F491_4F6C_DD1D;
const EPOCH_MIX: u64 = 0x9E6D_62D0_6F6A_9A9B;
const MIX_PRETRAIN: u64 = 0x1000_0000_0000_0001;
const MIX_STAGE1: u64 = 0x2000_0000_0000_0002;
const MIX_STAGE2: u64 = 0x3000_0000_0000_0003;

/// Knobs shared by every training stage.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Relative weight of the smoothing term.
    pub lambda_sm: f64,
    /// Seeds the shuffle, the batch eligibility, and the holdout split.
    pub seed: u64,
    /// Fraction of reactive samples reserved for validation, never trained.
    pub holdout_frac: f64,
    /// Fraction of each batch whose stored weights apply.
    pub eligible_frac: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 64,
            lr: 3e-3,
            lambda_sm: 1.0,
            seed: 0,
            holdout_frac: 0.1,
            eligible_frac: 0.5,
        }
    }
}

/// Train/holdout partition of a dataset, by index.
#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub train: Vec<usize>,
    pub holdout: Vec<usize>,
}

/// Reserve a fraction of the *reactive* (up-weighted) samples as a
/// validation set. The same dataset, fraction, and seed always produce the
/// same split, so separate stages trained with one seed share their holdout.
pub fn split_reactive_holdout(data: &Dataset, frac: f64, seed: u64) -> Split {
    let mut up = data.upweighted_indices();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ HOLDOUT_MIX);
    for i in (1..up.len()).rev() {
        up.swap(i, rng.gen_range(0..=i));
    }
    let n_hold = (up.len() as f64 * frac).floor() as usize;
    let mut holdout = up[..n_hold].to_vec();
    holdout.sort_unstable();
    let train =
        (0..data.len()).filter(|i| holdout.binary_search(i).is_err()).collect();
    Split { train, holdout }
}

/// Shuffle the training indices and cut them into batches. Within each
/// batch the leading `eligible_frac` of slots honour stored sample weights;
/// the rest train at weight one.
pub fn epoch_batches(
    data: &Dataset,
    train: &[usize],
    cfg: &TrainConfig,
    epoch: usize,
    stage_mix: u64,
) -> Vec<Batch> {
    let mut order = train.to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(
        cfg.seed ^ stage_mix ^ (epoch as u64).wrapping_mul(EPOCH_MIX),
    );
    for i in (1..order.len()).rev() {
        order.swap(i, rng.gen_range(0..=i));
    }
    order
        .chunks(cfg.batch_size.max(1))
        .map(|chunk| {
            let cut = ((chunk.len() as f64) * cfg.eligible_frac).ceil() as usize;
            Batch {
                indices: chunk.to_vec(),
                eligible: (0..chunk.len()).map(|s| s < cut).collect(),
                domains: chunk.iter().map(|&i| data.samples[i].domain()).collect(),
            }
        })
        .collect()
}

/// Loss sums accumulated over one batch.
#[derive(Debug, Default, Clone, Copy)]
pub struct BatchStats {
    /// Sum of weighted per-sample totals (the quantity whose gradient the
    /// optimizer sees).
    pub weighted_total: f64,
    /// Sum of unweighted main terms.
    pub main_sum: f64,
    /// Sum of unweighted smoothing terms.
    pub sm_sum: f64,
    pub n: usize,
}

/// Accumulate the gradients of one batch into the store without stepping.
///
/// Returns `Ok(None)` when a loss turns non-finite — the caller's signal to
/// abort and restore — and `Err` only for genuine contract violations.
pub fn accumulate_batch(
    store: &mut ParamStore,
    dims: &NetDims,
    data: &Dataset,
    batch: &Batch,
    lambda_sm: f64,
    kind: ForwardKind,
    subset: ParamSubset,
) -> Result<Option<BatchStats>, TrainError> {
    let mut stats = BatchStats::default();
    for (slot, &idx) in batch.indices.iter().enumerate() {
        let sample = &data.samples[idx];
        let eff_weight = if batch.eligible[slot] { sample.weight } else { 1.0 };
        let mut tape = Tape::new();
        let steps = forward_sample(&mut tape, store, dims, sample, kind)?;
        let out = sample_loss(&mut tape, steps, sample, lambda_sm, eff_weight)?;
        let total = tape.scalar(out.total);
        if !total.is_finite() {
            return Ok(None);
        }
        match tape.backward(out.total) {
            Ok(()) => {}
            Err(NnError::NumericalBlowup) => return Ok(None),
            Err(e) => return Err(e.into()),
        }
        tape.accumulate_param_grads(store, subset);
        stats.weighted_total += total;
        stats.main_sum += out.j_main;
        stats.sm_sum += out.j_sm;
        stats.n += 1;
    }
    Ok(Some(stats))
}

/// One epoch's reported numbers.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRow {
    pub epoch: usize,
    /// Mean weighted per-sample loss actually optimized.
    pub train_total: f64,
    /// Mean unweighted main term.
    pub train_main: f64,
    /// Mean unweighted smoothing term.
    pub train_sm: f64,
    /// Mean imitation loss of predictions on the held-out reactive samples;
    /// absent when the dataset had nothing to hold out.
    pub holdout_im: Option<f64>,
}

/// Loss curves for one stage.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainMetrics {
    pub rows: Vec<EpochRow>,
    /// The run hit a non-finite state and rolled back to its last finite
    /// snapshot.
    pub aborted: bool,
}

impl TrainMetrics {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_total,train_main,train_sm,holdout_im\n");
        for r in &self.rows {
            let holdout = r.holdout_im.map_or(String::new(), |v| v.to_string());
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.epoch, r.train_total, r.train_main, r.train_sm, holdout
            ));
        }
        out
    }

    /// The last recorded holdout score, if any epoch had one.
    pub fn final_holdout_im(&self) -> Option<f64> {
        self.rows.iter().rev().find_map(|r| r.holdout_im)
    }
}

/// Mean plain imitation loss of the network's predictions over `holdout`.
fn holdout_loss(
    store: &ParamStore,
    dims: &NetDims,
    data: &Dataset,
    holdout: &[usize],
    kind: ForwardKind,
) -> Result<Option<f64>, TrainError> {
    if holdout.is_empty() {
        return Ok(None);
    }
    let mut acc = 0.0;
    for &idx in holdout {
        let sample = &data.samples[idx];
        let mut tape = Tape::new();
        let steps = forward_sample(&mut tape, store, dims, sample, kind)?;
        let v = tape.value(steps);
        if !v.all_finite() {
            return Ok(Some(f64::NAN));
        }
        let planar: Vec<(f64, f64)> = (0..v.rows).map(|r| (v.get(r, 0), v.get(r, 1))).collect();
        let pred = ActionChunk::from_planar_steps(sample.obs_now.stamp, &planar)?;
        acc += loss_im(&pred, &sample.ref_chunk_t)?;
    }
    Ok(Some(acc / holdout.len() as f64))
}

fn run_training(
    store: &mut ParamStore,
    data: &Dataset,
    cfg: &TrainConfig,
    subset: ParamSubset,
    kind: ForwardKind,
    stage_mix: u64,
) -> Result<TrainMetrics, TrainError> {
    if data.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let dims = dims_from_store(store)?;
    let split = split_reactive_holdout(data, cfg.holdout_frac, cfg.seed);
    let adam = AdamConfig::with_lr(cfg.lr);
    store.zero_grads();
    let mut last_good = store.clone();
    let mut rows = Vec::new();
    let mut aborted = false;

    'epochs: for epoch in 0..cfg.epochs {
        let batches = epoch_batches(data, &split.train, cfg, epoch, stage_mix);
        let mut epoch_stats = BatchStats::default();
        for batch in &batches {
            let stats =
                match accumulate_batch(store, &dims, data, batch, cfg.lambda_sm, kind, subset)? {
                    Some(s) => s,
                    None => {
                        aborted = true;
                        break 'epochs;
                    }
                };
            store.adam_step(&adam, subset);
            store.zero_grads();
            if store.check_finite().is_err() {
                aborted = true;
                break 'epochs;
            }
            epoch_stats.weighted_total += stats.weighted_total;
            epoch_stats.main_sum += stats.main_sum;
            epoch_stats.sm_sum += stats.sm_sum;
            epoch_stats.n += stats.n;
        }
        let holdout_im = holdout_loss(store, &dims, data, &split.holdout, kind)?;
        if holdout_im.is_some_and(|v| !v.is_finite()) {
            aborted = true;
            break;
        }
        let n = epoch_stats.n.max(1) as f64;
        rows.push(EpochRow {
            epoch,
            train_total: epoch_stats.weighted_total / n,
            train_main: epoch_stats.main_sum / n,
            train_sm: epoch_stats.sm_sum / n,
            holdout_im,
        });
        last_good = store.clone();
    }

    if aborted {
        *store = last_good;
    }
    Ok(TrainMetrics { rows, aborted })
}

/// Pre-train the slow trunk and its chunk head to imitate executed chunks
/// from single fresh observations. Only trunk parameters move.
pub fn pretrain_base(
    store: &mut ParamStore,
    data: &Dataset,
    cfg: &TrainConfig,
) -> Result<TrainMetrics, TrainError> {
    run_training(store, data, cfg, ParamSubset::BASE_ONLY, ForwardKind::BaseHead, MIX_PRETRAIN)
}

/// Train the projector and refiner on top of a frozen trunk.
pub fn train_stage1(
    store: &mut ParamStore,
    data: &Dataset,
    cfg: &TrainConfig,
) -> Result<TrainMetrics, TrainError> {
    run_training(store, data, cfg, ParamSubset::STAGE1, ForwardKind::FullPipeline, MIX_STAGE1)
}

/// Fine-tune everything end-to-end, trunk included.
pub fn train_stage2(
    store: &mut ParamStore,
    data: &Dataset,
    cfg: &TrainConfig,
) -> Result<TrainMetrics, TrainError> {
    run_training(store, data, cfg, ParamSubset::ALL, ForwardKind::FullPipeline, MIX_STAGE2)
}
