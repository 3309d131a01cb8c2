//! Coupled-modality cross-attention block.
//!
//! Each block projects both modality streams to queries, keys, and values,
//! propagates information across modalities (queries from one side, keys and
//! values from the other), and folds the propagated update back into each
//! stream through two residual + layer-norm stages with a feed-forward map in
//! between. Attention is single-head; parameters are not shared between
//! modalities.

use crate::matrix::Matrix;
use crate::tape::{NodeId, Tape};
use crate::Result;
use rand::Rng;

/// Layer-norm stabilizer used everywhere in the network.
pub const LN_EPS: f64 = 1e-5;

/// Projection, layer-norm, and feed-forward parameters for one modality's
/// half of a block.
#[derive(Clone, Debug, PartialEq)]
pub struct ModalityBlockParams {
    pub wq: Matrix,
    pub wk: Matrix,
    pub wv: Matrix,
    pub ln1_gain: Matrix,
    pub ln1_bias: Matrix,
    pub ln2_gain: Matrix,
    pub ln2_bias: Matrix,
    pub ffn_w1: Matrix,
    pub ffn_b1: Matrix,
    pub ffn_w2: Matrix,
    pub ffn_b2: Matrix,
}

impl ModalityBlockParams {
    /// Fan-in uniform init for projections and FFN weights; gains 1, biases 0.
    pub fn init(d: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        ModalityBlockParams {
            wq: uniform_init(d, d, rng),
            wk: uniform_init(d, d, rng),
            wv: uniform_init(d, d, rng),
            ln1_gain: Matrix::filled(1, d, 1.0),
            ln1_bias: Matrix::zeros(1, d),
            ln2_gain: Matrix::filled(1, d, 1.0),
            ln2_bias: Matrix::zeros(1, d),
            ffn_w1: uniform_init(d, hidden, rng),
            ffn_b1: Matrix::zeros(1, hidden),
            ffn_w2: uniform_init(hidden, d, rng),
            ffn_b2: Matrix::zeros(1, d),
        }
    }

    /// All-zero projections and FFN with unit gains; useful for degenerate
    /// configurations in tests.
    pub fn zeroed(d: usize, hidden: usize) -> Self {
        ModalityBlockParams {
            wq: Matrix::zeros(d, d),
            wk: Matrix::zeros(d, d),
            wv: Matrix::zeros(d, d),
            ln1_gain: Matrix::filled(1, d, 1.0),
            ln1_bias: Matrix::zeros(1, d),
            ln2_gain: Matrix::filled(1, d, 1.0),
            ln2_bias: Matrix::zeros(1, d),
            ffn_w1: Matrix::zeros(d, hidden),
            ffn_b1: Matrix::zeros(1, hidden),
            ffn_w2: Matrix::zeros(hidden, d),
            ffn_b2: Matrix::zeros(1, d),
        }
    }

    pub fn visit(&self, f: &mut impl FnMut(&Matrix)) {
        for m in [
            &self.wq,
            &self.wk,
            &self.wv,
            &self.ln1_gain,
            &self.ln1_bias,
            &self.ln2_gain,
            &self.ln2_bias,
            &self.ffn_w1,
            &self.ffn_b1,
            &self.ffn_w2,
            &self.ffn_b2,
        ] {
            f(m);
        }
    }

    pub fn visit_mut(&mut self, f: &mut impl FnMut(&mut Matrix)) {
        for m in [
            &mut self.wq,
            &mut self.wk,
            &mut self.wv,
            &mut self.ln1_gain,
            &mut self.ln1_bias,
            &mut self.ln2_gain,
            &mut self.ln2_bias,
            &mut self.ffn_w1,
            &mut self.ffn_b1,
            &mut self.ffn_w2,
            &mut self.ffn_b2,
        ] {
            f(m);
        }
    }

    pub fn register(&self, tape: &mut Tape) -> ModalityBlockNodes {
        ModalityBlockNodes {
            wq: tape.param(self.wq.clone()),
            wk: tape.param(self.wk.clone()),
            wv: tape.param(self.wv.clone()),
            ln1_gain: tape.param(self.ln1_gain.clone()),
            ln1_bias: tape.param(self.ln1_bias.clone()),
            ln2_gain: tape.param(self.ln2_gain.clone()),
            ln2_bias: tape.param(self.ln2_bias.clone()),
            ffn_w1: tape.param(self.ffn_w1.clone()),
            ffn_b1: tape.param(self.ffn_b1.clone()),
            ffn_w2: tape.param(self.ffn_w2.clone()),
            ffn_b2: tape.param(self.ffn_b2.clone()),
        }
    }
}

pub(crate) fn uniform_init(rows: usize, cols: usize, rng: &mut impl Rng) -> Matrix {
    let bound = 1.0 / (rows as f64).sqrt();
    let mut m = Matrix::zeros(rows, cols);
    for v in m.data_mut() {
        *v = rng.gen_range(-bound..bound);
    }
    m
}

/// One cross-attention layer: separate parameters per modality, shared width.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionBlockParams {
    pub visual: ModalityBlockParams,
    pub acoustic: ModalityBlockParams,
}

impl AttentionBlockParams {
    pub fn init(d: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        AttentionBlockParams {
            visual: ModalityBlockParams::init(d, hidden, rng),
            acoustic: ModalityBlockParams::init(d, hidden, rng),
        }
    }

    pub fn register(&self, tape: &mut Tape) -> AttentionBlockNodes {
        AttentionBlockNodes {
            visual: self.visual.register(tape),
            acoustic: self.acoustic.register(tape),
        }
    }
}

/// Tape handles for one modality's block parameters.
#[derive(Clone, Copy, Debug)]
pub struct ModalityBlockNodes {
    pub wq: NodeId,
    pub wk: NodeId,
    pub wv: NodeId,
    pub ln1_gain: NodeId,
    pub ln1_bias: NodeId,
    pub ln2_gain: NodeId,
    pub ln2_bias: NodeId,
    pub ffn_w1: NodeId,
    pub ffn_b1: NodeId,
    pub ffn_w2: NodeId,
    pub ffn_b2: NodeId,
}

impl ModalityBlockNodes {
    pub fn ids(&self) -> [NodeId; 11] {
        [
            self.wq,
            self.wk,
            self.wv,
            self.ln1_gain,
            self.ln1_bias,
            self.ln2_gain,
            self.ln2_bias,
            self.ffn_w1,
            self.ffn_b1,
            self.ffn_w2,
            self.ffn_b2,
        ]
    }
}

#[derive(Clone, Copy, Debug)]
pub struct AttentionBlockNodes {
    pub visual: ModalityBlockNodes,
    pub acoustic: ModalityBlockNodes,
}

/// Projects an `nxd` stream to query/key/value form, each `dxn`:
/// `Q = W_q Zᵀ`, `K = W_k Zᵀ`, `V = W_v Zᵀ`.
pub fn project_qkv(
    tape: &mut Tape,
    z: NodeId,
    params: &ModalityBlockNodes,
) -> Result<(NodeId, NodeId, NodeId)> {
    let zt = tape.transpose(z)?;
    let q = tape.matmul(params.wq, zt)?;
    let k = tape.matmul(params.wk, zt)?;
    let v = tape.matmul(params.wv, zt)?;
    Ok((q, k, v))
}

/// Cross-modal propagation: `softmax_rows(Q_tᵀ K_s / sqrt(d)) V_sᵀ`.
/// Queries come from the target stream, keys/values from the source stream;
/// each output row is a convex combination of source value vectors.
pub fn cross_propagate(
    tape: &mut Tape,
    q_target: NodeId,
    k_source: NodeId,
    v_source: NodeId,
    d: usize,
) -> Result<NodeId> {
    let qt = tape.transpose(q_target)?;
    let scores = tape.matmul(qt, k_source)?;
    let scaled = tape.scale(scores, 1.0 / (d as f64).sqrt())?;
    let weights = tape.softmax_rows(scaled)?;
    let vt = tape.transpose(v_source)?;
    tape.matmul(weights, vt)
}

/// Two sequential residual + layer-norm stages:
/// `Z ← LN(Z + ΔZ)` then `Z ← LN(Z + FFN(Z))`.
pub fn fuse_update(
    tape: &mut Tape,
    z: NodeId,
    dz: NodeId,
    params: &ModalityBlockNodes,
) -> Result<NodeId> {
    let residual = tape.add(z, dz)?;
    let z1 = tape.layer_norm(residual, params.ln1_gain, params.ln1_bias, LN_EPS)?;
    let pre = tape.matmul(z1, params.ffn_w1)?;
    let pre_b = tape.add_row_broadcast(pre, params.ffn_b1)?;
    let hidden = tape.relu(pre_b)?;
    let post = tape.matmul(hidden, params.ffn_w2)?;
    let ffn = tape.add_row_broadcast(post, params.ffn_b2)?;
    let residual2 = tape.add(z1, ffn)?;
    tape.layer_norm(residual2, params.ln2_gain, params.ln2_bias, LN_EPS)
}

/// `fuse_update` with a zero propagated term: the single-modality path used
/// when the other stream is absent and by the attention-free ablation.
pub fn fuse_update_identity(
    tape: &mut Tape,
    z: NodeId,
    params: &ModalityBlockNodes,
) -> Result<NodeId> {
    let shape = tape.value(z).shape();
    let zero = tape.input(Matrix::zeros(shape.0, shape.1));
    fuse_update(tape, z, zero, params)
}

/// Full coupled block: projects both streams, propagates both directions,
/// and applies both residual updates. Supports `n_v != n_a`.
pub fn cross_attention_block(
    tape: &mut Tape,
    zv: NodeId,
    za: NodeId,
    params: &AttentionBlockNodes,
) -> Result<(NodeId, NodeId)> {
    let d = tape.value(zv).cols();
    let (qv, kv, vv) = project_qkv(tape, zv, &params.visual)?;
    let (qa, ka, va) = project_qkv(tape, za, &params.acoustic)?;
    // visual-to-acoustic: queries from the acoustic stream.
    let dz_a = cross_propagate(tape, qa, kv, vv, d)?;
    // acoustic-to-visual: queries from the visual stream.
    let dz_v = cross_propagate(tape, qv, ka, va, d)?;
    let zv_out = fuse_update(tape, zv, dz_v, &params.visual)?;
    let za_out = fuse_update(tape, za, dz_a, &params.acoustic)?;
    Ok((zv_out, za_out))
}
