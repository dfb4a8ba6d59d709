//! The three networks of the stack and their input featurizers.
//!
//! * **Guidance policy** (`base.*`): a two-hidden-layer tanh MLP mapping a
//!   pooled scan plus a goal encoding to a grid of guidance tokens, with a
//!   shared linear head that can decode each token into one planar step.
//! * **Token projector** (`proj.*`): a per-token linear compression followed
//!   by two residual MLP blocks; applied identically to every token, so it is
//!   equivariant to token order.
//! * **Local adapter** (`adapt.*`): embeds the current scan and the
//!   (current, delayed) scan pair alongside the projected guidance tokens,
//!   adds learned position embeddings, mixes everything with one single-head
//!   self-attention block plus a feed-forward block, and decodes planar steps
//!   from the token at the current-scan position only.

use super::store::{ParamGroup, ParamStore};
use super::tape::{NodeId, Tape};
use super::tensor::Tensor;
use super::NnError;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Number of goal-directive categories (the `None` directive included).
pub const DIRECTIVE_KINDS: usize = 5;

/// Layer sizes of the stack. The defaults are the deployed configuration;
/// tests shrink them to make exhaustive finite-difference checks cheap.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetDims {
    /// Beams in a raw scan.
    pub scan_beams: usize,
    /// Pooled scan width fed to the guidance policy.
    pub pooled: usize,
    /// Width of the goal encoding.
    pub goal_dim: usize,
    /// Hidden width of the guidance MLP.
    pub base_hidden: usize,
    /// Number of guidance tokens.
    pub token_count: usize,
    /// Width of a raw guidance token.
    pub token_dim: usize,
    /// Width of a projected token (also the adapter's working width).
    pub proj_dim: usize,
    /// Hidden width of the adapter's feed-forward block.
    pub attn_ff: usize,
    /// Hidden widths of the adapter's action head (three hidden layers).
    pub head_hidden: [usize; 3],
    /// Steps in an action chunk.
    pub chunk_len: usize,
}

impl Default for NetDims {
    fn default() -> Self {
        NetDims {
            scan_beams: 64,
            pooled: 16,
            goal_dim: 8,
            base_hidden: 128,
            token_count: 8,
            token_dim: 64,
            proj_dim: 16,
            attn_ff: 32,
            head_hidden: [16, 32, 32],
            chunk_len: 8,
        }
    }
}

impl NetDims {
    /// A small configuration for exhaustive gradient checks.
    pub fn tiny() -> Self {
        NetDims {
            scan_beams: 8,
            pooled: 4,
            goal_dim: 8,
            base_hidden: 10,
            token_count: 3,
            token_dim: 6,
            proj_dim: 4,
            attn_ff: 5,
            head_hidden: [4, 5, 5],
            chunk_len: 8,
        }
    }

    pub fn base_input(&self) -> usize {
        self.pooled + self.goal_dim
    }

    /// Token positions seen by the adapter: guidance tokens, then the
    /// current-scan token, then the scan-pair token.
    pub fn adapter_positions(&self) -> usize {
        self.token_count + 2
    }

    /// Row index of the current-scan token (the head's readout position).
    pub fn scan_now_position(&self) -> usize {
        self.token_count
    }
}

/// Projected guidance tokens as they travel over the link.
#[derive(Debug, Clone, PartialEq)]
pub struct GuidanceTokens {
    /// `[token_count][proj_dim]`.
    pub tokens: Vec<Vec<f32>>,
}

impl GuidanceTokens {
    pub fn zeros(dims: &NetDims) -> Self {
        GuidanceTokens { tokens: vec![vec![0.0; dims.proj_dim]; dims.token_count] }
    }

    pub fn to_tensor(&self) -> Tensor {
        let rows = self.tokens.len();
        let cols = self.tokens.first().map_or(0, |t| t.len());
        let mut data = Vec::with_capacity(rows * cols);
        for row in &self.tokens {
            data.extend(row.iter().map(|&v| v as f64));
        }
        Tensor::from_vec(rows, cols, data)
    }

    pub fn from_tensor(t: &Tensor) -> Self {
        GuidanceTokens {
            tokens: (0..t.rows).map(|r| t.row(r).iter().map(|&v| v as f32).collect()).collect(),
        }
    }
}

/// Normalize raw ranges (metres) into `[0, 1]` features.
pub fn scan_features(scan: &[f32], max_range: f64) -> Vec<f64> {
    scan.iter().map(|&r| (r as f64 / max_range).clamp(0.0, 1.0)).collect()
}

/// Average-pool normalized scan features down to `pooled` buckets.
pub fn pool_scan(features: &[f64], pooled: usize) -> Vec<f64> {
    assert!(pooled > 0 && features.len() % pooled == 0, "beam count must divide pooled width");
    let group = features.len() / pooled;
    (0..pooled)
        .map(|i| features[i * group..(i + 1) * group].iter().sum::<f64>() / group as f64)
        .collect()
}

/// Encode a goal given in the robot frame: bounded distance, bearing as a
/// unit vector, and a one-hot directive. Eight numbers.
pub fn goal_encoding(rel_x: f64, rel_y: f64, directive_idx: usize) -> Vec<f64> {
    assert!(directive_idx < DIRECTIVE_KINDS, "directive index out of range");
    let dist = (rel_x * rel_x + rel_y * rel_y).sqrt();
    let (cb, sb) = if dist > 1e-9 { (rel_x / dist, rel_y / dist) } else { (1.0, 0.0) };
    let mut out = vec![(dist / 20.0).min(1.0), cb, sb];
    for i in 0..DIRECTIVE_KINDS {
        out.push(if i == directive_idx { 1.0 } else { 0.0 });
    }
    out
}

fn xavier(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Tensor {
    let limit = (6.0 / (rows + cols) as f64).sqrt() * scale;
    let data = (0..rows * cols).map(|_| rng.gen_range(-limit..limit)).collect();
    Tensor::from_vec(rows, cols, data)
}

/// Create a freshly initialized store for `dims`, seeded deterministically.
pub fn init_params(dims: &NetDims, seed: u64) -> ParamStore {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = ParamStore::new();
    let g = ParamGroup::Base;
    let (bi, bh) = (dims.base_input(), dims.base_hidden);
    let token_out = dims.token_count * dims.token_dim;
    s.add("base.l1.w", g, xavier(&mut rng, bi, bh, 1.0));
    s.add("base.l1.b", g, Tensor::zeros(1, bh));
    s.add("base.l2.w", g, xavier(&mut rng, bh, bh, 1.0));
    s.add("base.l2.b", g, Tensor::zeros(1, bh));
    s.add("base.out.w", g, xavier(&mut rng, bh, token_out, 1.0));
    s.add("base.out.b", g, Tensor::zeros(1, token_out));
    // Shared per-token decoder used for pre-training and for running the
    // guidance policy as a standalone chunk source. Small init keeps early
    // chunks near the safe stop.
    s.add("base.head.w", g, xavier(&mut rng, dims.token_dim, 2, 0.1));
    s.add("base.head.b", g, Tensor::zeros(1, 2));

    let g = ParamGroup::Projector;
    s.add("proj.in.w", g, xavier(&mut rng, dims.token_dim, dims.proj_dim, 1.0));
    s.add("proj.in.b", g, Tensor::zeros(1, dims.proj_dim));
    for blk in 1..=2 {
        s.add(&format!("proj.res{blk}.w1"), g, xavier(&mut rng, dims.proj_dim, dims.proj_dim, 1.0));
        s.add(&format!("proj.res{blk}.b1"), g, Tensor::zeros(1, dims.proj_dim));
        s.add(&format!("proj.res{blk}.w2"), g, xavier(&mut rng, dims.proj_dim, dims.proj_dim, 1.0));
        s.add(&format!("proj.res{blk}.b2"), g, Tensor::zeros(1, dims.proj_dim));
    }

    let g = ParamGroup::Adapter;
    let d = dims.proj_dim;
    s.add("adapt.enc_now.w", g, xavier(&mut rng, dims.scan_beams, d, 1.0));
    s.add("adapt.enc_now.b", g, Tensor::zeros(1, d));
    s.add("adapt.enc_pair.w", g, xavier(&mut rng, 2 * dims.scan_beams, d, 1.0));
    s.add("adapt.enc_pair.b", g, Tensor::zeros(1, d));
    let pos = {
        let rows = dims.adapter_positions();
        let data = (0..rows * d).map(|_| rng.gen_range(-0.1..0.1)).collect();
        Tensor::from_vec(rows, d, data)
    };
    s.add("adapt.pos", g, pos);
    for w in ["wq", "wk", "wv", "wo"] {
        s.add(&format!("adapt.attn.{w}"), g, xavier(&mut rng, d, d, 1.0));
    }
    s.add("adapt.ff.w1", g, xavier(&mut rng, d, dims.attn_ff, 1.0));
    s.add("adapt.ff.b1", g, Tensor::zeros(1, dims.attn_ff));
    s.add("adapt.ff.w2", g, xavier(&mut rng, dims.attn_ff, d, 1.0));
    s.add("adapt.ff.b2", g, Tensor::zeros(1, d));
    let [h1, h2, h3] = dims.head_hidden;
    let out = 2 * dims.chunk_len;
    s.add("adapt.head.l1.w", g, xavier(&mut rng, d, h1, 1.0));
    s.add("adapt.head.l1.b", g, Tensor::zeros(1, h1));
    s.add("adapt.head.l2.w", g, xavier(&mut rng, h1, h2, 1.0));
    s.add("adapt.head.l2.b", g, Tensor::zeros(1, h2));
    s.add("adapt.head.l3.w", g, xavier(&mut rng, h2, h3, 1.0));
    s.add("adapt.head.l3.b", g, Tensor::zeros(1, h3));
    // Small final layer: a fresh adapter emits near-zero (near-stationary) steps.
    s.add("adapt.head.l4.w", g, xavier(&mut rng, h3, out, 0.1));
    s.add("adapt.head.l4.b", g, Tensor::zeros(1, out));
    s
}

fn dense(tape: &mut Tape, store: &ParamStore, x: NodeId, w: &str, b: &str) -> Result<NodeId, NnError> {
    let w = tape.param(store, w)?;
    let b = tape.param(store, b)?;
    let y = tape.matmul(x, w);
    Ok(tape.add_row_bias(y, b))
}

/// Guidance forward pass: pooled scan and goal encoding to raw tokens
/// (`[token_count, token_dim]`).
pub fn forward_base(
    tape: &mut Tape,
    store: &ParamStore,
    dims: &NetDims,
    pooled_scan: &[f64],
    goal: &[f64],
) -> Result<NodeId, NnError> {
    if pooled_scan.len() != dims.pooled || goal.len() != dims.goal_dim {
        return Err(NnError::Shape(format!(
            "guidance input: expected {}+{}, got {}+{}",
            dims.pooled,
            dims.goal_dim,
            pooled_scan.len(),
            goal.len()
        )));
    }
    let mut input = Vec::with_capacity(dims.base_input());
    input.extend_from_slice(pooled_scan);
    input.extend_from_slice(goal);
    let x = tape.leaf(Tensor::row_vec(input));
    let h1 = dense(tape, store, x, "base.l1.w", "base.l1.b")?;
    let h1 = tape.tanh(h1);
    let h2 = dense(tape, store, h1, "base.l2.w", "base.l2.b")?;
    let h2 = tape.tanh(h2);
    let flat = dense(tape, store, h2, "base.out.w", "base.out.b")?;
    Ok(tape.reshape(flat, dims.token_count, dims.token_dim))
}

/// Project raw tokens row by row: linear compression then two residual MLP
/// blocks, identical weights for every token.
pub fn project_tokens(
    tape: &mut Tape,
    store: &ParamStore,
    dims: &NetDims,
    tokens: NodeId,
) -> Result<NodeId, NnError> {
    let v = tape.value(tokens);
    if (v.rows, v.cols) != (dims.token_count, dims.token_dim) {
        return Err(NnError::Shape(format!(
            "project_tokens: expected {}x{}, got {}x{}",
            dims.token_count, dims.token_dim, v.rows, v.cols
        )));
    }
    let mut x = dense(tape, store, tokens, "proj.in.w", "proj.in.b")?;
    for blk in 1..=2 {
        let h = dense(tape, store, x, &format!("proj.res{blk}.w1"), &format!("proj.res{blk}.b1"))?;
        let h = tape.tanh(h);
        let h = dense(tape, store, h, &format!("proj.res{blk}.w2"), &format!("proj.res{blk}.b2"))?;
        x = tape.add(x, h);
    }
    Ok(x)
}

/// Decode each token into one planar step with the shared guidance head:
/// `[token_count, 2]`, token `i` giving step `i`.
pub fn base_chunk_steps(
    tape: &mut Tape,
    store: &ParamStore,
    tokens: NodeId,
) -> Result<NodeId, NnError> {
    dense(tape, store, tokens, "base.head.w", "base.head.b")
}

/// Adapter forward pass. `guidance` is a `[token_count, proj_dim]` node
/// (projected tokens); scans are raw ranges in metres. Returns planar steps
/// `[chunk_len, 2]` decoded from the current-scan token position.
pub fn forward_adapter(
    tape: &mut Tape,
    store: &ParamStore,
    dims: &NetDims,
    guidance: NodeId,
    scan_now: &[f32],
    scan_delayed: &[f32],
    max_range: f64,
) -> Result<NodeId, NnError> {
    let gv = tape.value(guidance);
    if (gv.rows, gv.cols) != (dims.token_count, dims.proj_dim) {
        return Err(NnError::Shape(format!(
            "forward_adapter: guidance expected {}x{}, got {}x{}",
            dims.token_count, dims.proj_dim, gv.rows, gv.cols
        )));
    }
    if scan_now.len() != dims.scan_beams || scan_delayed.len() != dims.scan_beams {
        return Err(NnError::Shape(format!(
            "forward_adapter: scans must have {} beams",
            dims.scan_beams
        )));
    }
    let now = scan_features(scan_now, max_range);
    let delayed = scan_features(scan_delayed, max_range);
    let mut pair = now.clone();
    pair.extend_from_slice(&delayed);

    let now_leaf = tape.leaf(Tensor::row_vec(now));
    let pair_leaf = tape.leaf(Tensor::row_vec(pair));
    let enc_now = dense(tape, store, now_leaf, "adapt.enc_now.w", "adapt.enc_now.b")?;
    let enc_pair = dense(tape, store, pair_leaf, "adapt.enc_pair.w", "adapt.enc_pair.b")?;

    let tokens = tape.concat_rows(&[guidance, enc_now, enc_pair]);
    let pos = tape.param(store, "adapt.pos")?;
    let x = tape.add(tokens, pos);

    // Single-head self-attention with residual connection.
    let wq = tape.param(store, "adapt.attn.wq")?;
    let wk = tape.param(store, "adapt.attn.wk")?;
    let wv = tape.param(store, "adapt.attn.wv")?;
    let wo = tape.param(store, "adapt.attn.wo")?;
    let q = tape.matmul(x, wq);
    let k = tape.matmul(x, wk);
    let v = tape.matmul(x, wv);
    let scores = tape.matmul_nt(q, k);
    let scaled = tape.scale(scores, 1.0 / (dims.proj_dim as f64).sqrt());
    let attn = tape.softmax_rows(scaled);
    let mixed = tape.matmul(attn, v);
    let proj = tape.matmul(mixed, wo);
    let x = tape.add(x, proj);

    // Feed-forward block with residual connection.
    let h = dense(tape, store, x, "adapt.ff.w1", "adapt.ff.b1")?;
    let h = tape.tanh(h);
    let h = dense(tape, store, h, "adapt.ff.w2", "adapt.ff.b2")?;
    let x = tape.add(x, h);

    // Only the current-scan token feeds the action head.
    let readout = tape.select_row(x, dims.scan_now_position());
    let h = dense(tape, store, readout, "adapt.head.l1.w", "adapt.head.l1.b")?;
    let h = tape.tanh(h);
    let h = dense(tape, store, h, "adapt.head.l2.w", "adapt.head.l2.b")?;
    let h = tape.tanh(h);
    let h = dense(tape, store, h, "adapt.head.l3.w", "adapt.head.l3.b")?;
    let h = tape.tanh(h);
    let flat = dense(tape, store, h, "adapt.head.l4.w", "adapt.head.l4.b")?;
    Ok(tape.reshape(flat, dims.chunk_len, 2))
}
