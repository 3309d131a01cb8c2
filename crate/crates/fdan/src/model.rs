//! The full two-stream network and its training objective.
//!
//! Both modalities are mapped by learned affine projections to a shared
//! width, passed through a stack of cross-attention blocks, and classified by
//! a single shared affine head. The objective is the sum of both modalities'
//! mean cross-entropy plus a trade-off-weighted sum of the per-layer
//! class-local discrepancies between the paired activations.

use crate::attention::{
    cross_attention_block, fuse_update_identity, AttentionBlockNodes, AttentionBlockParams,
    ModalityBlockParams,
};
use crate::kernel::{class_weights, lmmd, KernelSpec};
use crate::matrix::Matrix;
use crate::tape::{NodeId, Tape};
use crate::{Error, Result};
use rand::{Rng, SeedableRng};
use std::fs;
use std::io::Read;
use std::path::Path;

/// Architecture description; persisted in the checkpoint header.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModelConfig {
    pub d_in_visual: usize,
    pub d_in_acoustic: usize,
    /// Shared feature width of the attention stack.
    pub d: usize,
    /// Hidden width of the feed-forward maps.
    pub hidden: usize,
    pub layers: usize,
    pub classes: usize,
    /// When false, each modality gets its own classifier head. The shared
    /// head is the normal configuration; the separate-head form exists for
    /// modularity checks and cannot be written to a checkpoint.
    pub shared_classifier: bool,
}

impl ModelConfig {
    pub fn new(d_in_visual: usize, d_in_acoustic: usize, classes: usize) -> Self {
        ModelConfig {
            d_in_visual,
            d_in_acoustic,
            d: 64,
            hidden: 128,
            layers: 2,
            classes,
            shared_classifier: true,
        }
    }

    pub fn with_dims(mut self, d: usize, hidden: usize, layers: usize) -> Self {
        self.d = d;
        self.hidden = hidden;
        self.layers = layers;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 {
            return Err(Error::Config(
                "at least one attention layer required".into(),
            ));
        }
        if self.d < 2 {
            return Err(Error::Config("feature width must be at least 2".into()));
        }
        if self.classes < 2 || self.d_in_visual == 0 || self.d_in_acoustic == 0 || self.hidden == 0
        {
            return Err(Error::Config("degenerate architecture dimensions".into()));
        }
        Ok(())
    }
}

/// An affine map `x ↦ x W + b` with `W: in x out`, `b: 1 x out`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub weight: Matrix,
    pub bias: Matrix,
}

impl Linear {
    fn init(input: usize, output: usize, rng: &mut impl Rng) -> Self {
        Linear {
            weight: crate::attention::uniform_init(input, output, rng),
            bias: Matrix::zeros(1, output),
        }
    }

    fn register(&self, tape: &mut Tape) -> LinearNodes {
        LinearNodes {
            weight: tape.param(self.weight.clone()),
            bias: tape.param(self.bias.clone()),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LinearNodes {
    pub weight: NodeId,
    pub bias: NodeId,
}

impl LinearNodes {
    fn apply(&self, tape: &mut Tape, x: NodeId) -> Result<NodeId> {
        let wx = tape.matmul(x, self.weight)?;
        tape.add_row_broadcast(wx, self.bias)
    }
}

/// Full parameter set: per-modality input projections, the attention stack,
/// and the shared classifier head.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub proj_visual: Linear,
    pub proj_acoustic: Linear,
    pub blocks: Vec<AttentionBlockParams>,
    pub classifier: Linear,
    /// Present only when `config.shared_classifier` is false.
    pub classifier_acoustic: Option<Linear>,
}

impl ModelParams {
    pub fn init(config: ModelConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let proj_visual = Linear::init(config.d_in_visual, config.d, rng);
        let proj_acoustic = Linear::init(config.d_in_acoustic, config.d, rng);
        let blocks = (0..config.layers)
            .map(|_| AttentionBlockParams::init(config.d, config.hidden, rng))
            .collect();
        let classifier = Linear::init(config.d, config.classes, rng);
        let classifier_acoustic = if config.shared_classifier {
            None
        } else {
            Some(Linear::init(config.d, config.classes, rng))
        };
        Ok(ModelParams {
            config,
            proj_visual,
            proj_acoustic,
            blocks,
            classifier,
            classifier_acoustic,
        })
    }

    /// Visits every trainable matrix in the canonical declaration order used
    /// by the checkpoint format and the optimizer.
    pub fn visit(&self, f: &mut impl FnMut(&Matrix)) {
        f(&self.proj_visual.weight);
        f(&self.proj_visual.bias);
        f(&self.proj_acoustic.weight);
        f(&self.proj_acoustic.bias);
        for block in &self.blocks {
            block.visual.visit(f);
            block.acoustic.visit(f);
        }
        f(&self.classifier.weight);
        f(&self.classifier.bias);
        if let Some(head) = &self.classifier_acoustic {
            f(&head.weight);
            f(&head.bias);
        }
    }

    pub fn visit_mut(&mut self, f: &mut impl FnMut(&mut Matrix)) {
        f(&mut self.proj_visual.weight);
        f(&mut self.proj_visual.bias);
        f(&mut self.proj_acoustic.weight);
        f(&mut self.proj_acoustic.bias);
        for block in &mut self.blocks {
            block.visual.visit_mut(f);
            block.acoustic.visit_mut(f);
        }
        f(&mut self.classifier.weight);
        f(&mut self.classifier.bias);
        if let Some(head) = &mut self.classifier_acoustic {
            f(&mut head.weight);
            f(&mut head.bias);
        }
    }

    pub fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |_| n += 1);
        n
    }

    pub fn clone_params(&self) -> Vec<Matrix> {
        let mut out = Vec::new();
        self.visit(&mut |m| out.push(m.clone()));
        out
    }

    /// Registers every parameter on the tape, in canonical order.
    pub fn register(&self, tape: &mut Tape) -> ModelNodes {
        let proj_visual = self.proj_visual.register(tape);
        let proj_acoustic = self.proj_acoustic.register(tape);
        let blocks = self.blocks.iter().map(|b| b.register(tape)).collect();
        let classifier = self.classifier.register(tape);
        let classifier_acoustic = self.classifier_acoustic.as_ref().map(|h| h.register(tape));
        ModelNodes {
            proj_visual,
            proj_acoustic,
            blocks,
            classifier,
            classifier_acoustic,
        }
    }
}

/// Tape handles for a registered [`ModelParams`], same canonical order.
pub struct ModelNodes {
    pub proj_visual: LinearNodes,
    pub proj_acoustic: LinearNodes,
    pub blocks: Vec<AttentionBlockNodes>,
    pub classifier: LinearNodes,
    pub classifier_acoustic: Option<LinearNodes>,
}

impl ModelNodes {
    /// Parameter node ids in canonical order; aligns with
    /// [`ModelParams::visit`] and [`crate::tape::GradientMap`] entries.
    pub fn param_ids(&self) -> Vec<NodeId> {
        let mut ids = vec![
            self.proj_visual.weight,
            self.proj_visual.bias,
            self.proj_acoustic.weight,
            self.proj_acoustic.bias,
        ];
        for block in &self.blocks {
            ids.extend(block.visual.ids());
            ids.extend(block.acoustic.ids());
        }
        ids.push(self.classifier.weight);
        ids.push(self.classifier.bias);
        if let Some(head) = &self.classifier_acoustic {
            ids.push(head.weight);
            ids.push(head.bias);
        }
        ids
    }

    fn head_for(&self, modality: StreamSide) -> LinearNodes {
        match (modality, &self.classifier_acoustic) {
            (StreamSide::Acoustic, Some(head)) => *head,
            _ => self.classifier,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StreamSide {
    Visual,
    Acoustic,
}

/// Activations recorded during a coupled forward pass: one `(Z_v, Z_a)` pair
/// per layer plus both modality logits, as tape handles.
#[derive(Clone, Debug)]
pub struct ForwardTrace {
    pub layer_pairs: Vec<(NodeId, NodeId)>,
    pub logits_visual: NodeId,
    pub logits_acoustic: NodeId,
}

impl ForwardTrace {
    /// Clones all traced values off the tape (layer pairs, then both logits).
    pub fn values(&self, tape: &Tape) -> (Vec<(Matrix, Matrix)>, Matrix, Matrix) {
        let layers = self
            .layer_pairs
            .iter()
            .map(|&(v, a)| (tape.value(v).clone(), tape.value(a).clone()))
            .collect();
        (
            layers,
            tape.value(self.logits_visual).clone(),
            tape.value(self.logits_acoustic).clone(),
        )
    }
}

/// Coupled forward pass over both modalities. With `use_attention` false the
/// blocks degrade to their per-modality residual feed-forward path.
pub fn forward(
    tape: &mut Tape,
    nodes: &ModelNodes,
    xv: NodeId,
    xa: NodeId,
    use_attention: bool,
) -> Result<ForwardTrace> {
    let mut zv = nodes.proj_visual.apply(tape, xv)?;
    let mut za = nodes.proj_acoustic.apply(tape, xa)?;
    let mut layer_pairs = Vec::with_capacity(nodes.blocks.len());
    for block in &nodes.blocks {
        if use_attention {
            let (v, a) = cross_attention_block(tape, zv, za, block)?;
            zv = v;
            za = a;
        } else {
            zv = fuse_update_identity(tape, zv, &block.visual)?;
            za = fuse_update_identity(tape, za, &block.acoustic)?;
        }
        layer_pairs.push((zv, za));
    }
    let logits_visual = nodes.head_for(StreamSide::Visual).apply(tape, zv)?;
    let logits_acoustic = nodes.head_for(StreamSide::Acoustic).apply(tape, za)?;
    Ok(ForwardTrace {
        layer_pairs,
        logits_visual,
        logits_acoustic,
    })
}

/// Single-modality forward pass: the cross-propagated term is omitted (the
/// stream is updated as if it were zero), so no second modality is needed.
/// Returns the per-layer activations and the logits.
pub fn forward_single(
    tape: &mut Tape,
    nodes: &ModelNodes,
    x: NodeId,
    side: StreamSide,
) -> Result<(Vec<NodeId>, NodeId)> {
    let proj = match side {
        StreamSide::Visual => nodes.proj_visual,
        StreamSide::Acoustic => nodes.proj_acoustic,
    };
    let mut z = proj.apply(tape, x)?;
    let mut activations = Vec::with_capacity(nodes.blocks.len());
    for block in &nodes.blocks {
        let half = match side {
            StreamSide::Visual => &block.visual,
            StreamSide::Acoustic => &block.acoustic,
        };
        z = fuse_update_identity(tape, z, half)?;
        activations.push(z);
    }
    let logits = nodes.head_for(side).apply(tape, z)?;
    Ok((activations, logits))
}

/// Mean cross-entropy between logits and exactly-one-hot targets.
pub fn cross_entropy(tape: &mut Tape, logits: NodeId, targets: &Matrix) -> Result<NodeId> {
    tape.cross_entropy_mean(logits, targets)
}

/// Scalar values of the assembled objective, one per term.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub ce_visual: f64,
    pub ce_acoustic: f64,
    pub lmmd_sum: f64,
}

/// Assembles the total objective from a coupled trace:
/// `CE_a + CE_v + alpha * Σ_layers lmmd(Z_v, Z_a)`.
/// Per-layer discrepancies use the batch labels' class weights and are
/// weighted equally across layers.
pub fn total_loss(
    tape: &mut Tape,
    trace: &ForwardTrace,
    y_visual: &Matrix,
    y_acoustic: &Matrix,
    alpha: f64,
    spec: &KernelSpec,
) -> Result<(NodeId, LossBreakdown)> {
    if alpha < 0.0 {
        return Err(Error::InvalidParameter(format!(
            "trade-off weight must be nonnegative, got {alpha}"
        )));
    }
    let classes_v = y_visual.cols();
    let classes_a = y_acoustic.cols();
    let logit_classes = tape.value(trace.logits_visual).cols();
    if classes_v != classes_a || classes_v != logit_classes {
        return Err(Error::Config(format!(
            "class counts disagree: labels {classes_v}/{classes_a}, classifier {logit_classes}"
        )));
    }

    let ce_a = cross_entropy(tape, trace.logits_acoustic, y_acoustic)?;
    let ce_v = cross_entropy(tape, trace.logits_visual, y_visual)?;

    let wv = class_weights(y_visual)?;
    let wa = class_weights(y_acoustic)?;
    let mut lmmd_total: Option<NodeId> = None;
    for &(zv, za) in &trace.layer_pairs {
        let term = lmmd(tape, zv, za, &wv, &wa, spec)?;
        lmmd_total = Some(match lmmd_total {
            Some(acc) => tape.add(acc, term.node)?,
            None => term.node,
        });
    }
    let lmmd_sum = lmmd_total.expect("at least one layer");

    let ce = tape.add(ce_a, ce_v)?;
    let weighted = tape.scale(lmmd_sum, alpha)?;
    let total = tape.add(ce, weighted)?;

    let breakdown = LossBreakdown {
        total: tape.scalar(total),
        ce_visual: tape.scalar(ce_v),
        ce_acoustic: tape.scalar(ce_a),
        lmmd_sum: tape.scalar(lmmd_sum),
    };
    Ok((total, breakdown))
}

// ── Checkpoint format ───────────────────────────────────────────────────
//
// magic "FDAN", version u32 LE, then the architecture header
// (d_in_visual, d_in_acoustic, d, hidden, layers, classes as u32 LE),
// then every parameter in canonical declaration order as f64 LE row-major.

const CHECKPOINT_MAGIC: &[u8; 4] = b"FDAN";
const CHECKPOINT_VERSION: u32 = 1;

pub fn save_checkpoint(params: &ModelParams, path: &Path) -> Result<()> {
    if params.classifier_acoustic.is_some() {
        return Err(Error::Config(
            "checkpoint format stores shared-classifier models only".into(),
        ));
    }
    let cfg = &params.config;
    let mut bytes = Vec::new();
    bytes.extend_from_slice(CHECKPOINT_MAGIC);
    bytes.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    for dim in [
        cfg.d_in_visual,
        cfg.d_in_acoustic,
        cfg.d,
        cfg.hidden,
        cfg.layers,
        cfg.classes,
    ] {
        bytes.extend_from_slice(&(dim as u32).to_le_bytes());
    }
    params.visit(&mut |m| {
        for &v in m.data() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    });
    crate::data::write_atomic(path, &bytes)
}

pub fn load_checkpoint(path: &Path) -> Result<ModelParams> {
    let mut file = fs::File::open(path)?;
    let mut bytes = Vec::new();
    file.read_to_end(&mut bytes)?;
    let mut cursor = 0usize;

    let magic = take(&mut cursor, &bytes, 4)?;
    if magic != CHECKPOINT_MAGIC {
        return Err(Error::Format(format!(
            "bad checkpoint magic {:?}, expected {:?}",
            magic, CHECKPOINT_MAGIC
        )));
    }
    let version = read_u32(&mut cursor, &bytes)?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!(
            "unsupported checkpoint version {version}"
        )));
    }
    let d_in_visual = read_u32(&mut cursor, &bytes)? as usize;
    let d_in_acoustic = read_u32(&mut cursor, &bytes)? as usize;
    let d = read_u32(&mut cursor, &bytes)? as usize;
    let hidden = read_u32(&mut cursor, &bytes)? as usize;
    let layers = read_u32(&mut cursor, &bytes)? as usize;
    let classes = read_u32(&mut cursor, &bytes)? as usize;
    let config = ModelConfig {
        d_in_visual,
        d_in_acoustic,
        d,
        hidden,
        layers,
        classes,
        shared_classifier: true,
    };
    config
        .validate()
        .map_err(|e| Error::Format(e.to_string()))?;

    // Shape skeleton with zeroed values, then fill in declaration order.
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    let mut params = ModelParams::init(config, &mut rng)?;
    let mut failure = None;
    params.visit_mut(&mut |m| {
        if failure.is_some() {
            return;
        }
        for i in 0..m.data().len() {
            match take(&mut cursor, &bytes, 8) {
                Ok(chunk) => {
                    let mut buf = [0u8; 8];
                    buf.copy_from_slice(chunk);
                    m.data_mut()[i] = f64::from_le_bytes(buf);
                }
                Err(e) => {
                    failure = Some(e);
                    return;
                }
            }
        }
    });
    if let Some(e) = failure {
        return Err(e);
    }
    if cursor != bytes.len() {
        return Err(Error::Format(format!(
            "trailing bytes in checkpoint: {} unread",
            bytes.len() - cursor
        )));
    }
    Ok(params)
}

fn take<'a>(cursor: &mut usize, bytes: &'a [u8], len: usize) -> Result<&'a [u8]> {
    if *cursor + len > bytes.len() {
        return Err(Error::Format(format!(
            "truncated file: wanted {} bytes at offset {}, have {}",
            len,
            cursor,
            bytes.len()
        )));
    }
    let slice = &bytes[*cursor..*cursor + len];
    *cursor += len;
    Ok(slice)
}

fn read_u32(cursor: &mut usize, bytes: &[u8]) -> Result<u32> {
    let chunk = take(cursor, bytes, 4)?;
    let mut buf = [0u8; 4];
    buf.copy_from_slice(chunk);
    Ok(u32::from_le_bytes(buf))
}

/// Zeroes every projection and FFN weight; layer norms keep unit gains. Used
/// by degenerate-configuration tests.
pub fn zero_all_weights(params: &mut ModelParams) {
    let d = params.config.d;
    let hidden = params.config.hidden;
    params.proj_visual.weight = Matrix::zeros(params.config.d_in_visual, d);
    params.proj_visual.bias = Matrix::zeros(1, d);
    params.proj_acoustic.weight = Matrix::zeros(params.config.d_in_acoustic, d);
    params.proj_acoustic.bias = Matrix::zeros(1, d);
    for block in &mut params.blocks {
        block.visual = ModalityBlockParams::zeroed(d, hidden);
        block.acoustic = ModalityBlockParams::zeroed(d, hidden);
    }
}
