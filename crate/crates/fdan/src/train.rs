//! Mini-batch SGD-with-momentum training loop, evaluation, and the ablation
//! switches (attention-free blocks, zero adaptation weight).
//!
//! One training run is a single logical thread of parameter mutation; batches
//! are drawn in a deterministic seeded order, so identical configurations
//! produce bit-identical parameters and histories regardless of the host's
//! thread settings. Independent runs (seed sweeps) share no mutable state.

use crate::data::FeatureDomain;
use crate::kernel::KernelSpec;
use crate::matrix::Matrix;
use crate::metrics::{metrics, MetricsReport};
use crate::model::{forward, forward_single, total_loss, ModelConfig, ModelParams, StreamSide};
use crate::tape::Tape;
use crate::{Error, Result};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Ablation {
    /// Cross-attention blocks plus the weighted discrepancy term.
    Full,
    /// Blocks replaced by the per-modality residual feed-forward path.
    NoAttention,
    /// Attention kept, adaptation weight forced to zero. The discrepancy is
    /// still computed and recorded, it just carries no gradient weight.
    NoLmmd,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    /// Trade-off weight on the summed per-layer discrepancy; conventionally
    /// tuned over [`ALPHA_GRID`].
    pub alpha: f64,
    pub momentum: f64,
    /// L2 penalty added to the raw gradient; conventionally tuned over
    /// [`DECAY_GRID`].
    pub weight_decay: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub ablation: Ablation,
    pub kernel: KernelSpec,
}

/// Conventional tuning grid for the trade-off weight.
pub const ALPHA_GRID: [f64; 3] = [1e-3, 1e-4, 1e-5];

/// Conventional tuning grid for weight decay.
pub const DECAY_GRID: [f64; 2] = [1e-3, 1e-4];

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            alpha: 1e-3,
            momentum: 0.99,
            weight_decay: 1e-4,
            learning_rate: 1e-2,
            batch_size: 32,
            epochs: 300,
            seed: 0,
            ablation: Ablation::Full,
            kernel: KernelSpec::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::Config(
                "batch size must be at least 2 (the discrepancy estimator needs more than one sample)".into(),
            ));
        }
        if self.epochs == 0 {
            return Err(Error::Config("at least one epoch required".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!(
                "momentum must be in [0, 1), got {}",
                self.momentum
            )));
        }
        // lr = 0 is allowed: it turns training into a deterministic no-op.
        if self.alpha < 0.0 || self.weight_decay < 0.0 || self.learning_rate < 0.0 {
            return Err(Error::Config(
                "alpha, decay, and learning rate must be nonnegative".into(),
            ));
        }
        self.kernel
            .validate()
            .map_err(|e| Error::Config(e.to_string()))
    }
}

/// Per-epoch record: mean loss components over the epoch's steps plus the
/// target-split evaluation after the epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub ce_v: f64,
    pub ce_a: f64,
    pub lmmd_sum: f64,
    pub total: f64,
    pub war: f64,
    pub uar: f64,
    pub w_f1: f64,
}

pub type TrainHistory = Vec<EpochRecord>;

/// One momentum update:
/// `g ← grad + decay·param`, `v' ← momentum·v + g`, `param' ← param − lr·v'`.
pub fn sgd_momentum_step(
    param: &Matrix,
    grad: &Matrix,
    velocity: &Matrix,
    learning_rate: f64,
    momentum: f64,
    weight_decay: f64,
) -> Result<(Matrix, Matrix)> {
    if param.shape() != grad.shape() || param.shape() != velocity.shape() {
        return Err(Error::ShapeMismatch {
            op: "sgd_momentum_step",
            lhs: param.shape_string(),
            rhs: format!(
                "grad {} / velocity {}",
                grad.shape_string(),
                velocity.shape_string()
            ),
        });
    }
    let g = grad.add(&param.scale(weight_decay))?;
    let new_velocity = velocity.scale(momentum).add(&g)?;
    let new_param = param.sub(&new_velocity.scale(learning_rate))?;
    Ok((new_param, new_velocity))
}

/// Seeded index sampler. Each epoch both domains reshuffle; the larger
/// domain is consumed as one exact pass (its final chunk may be short),
/// while the shorter domain recycles, reshuffling whenever its order runs
/// out mid-epoch.
struct BatchSampler {
    order: Vec<usize>,
    pos: usize,
    rng: ChaCha8Rng,
}

impl BatchSampler {
    fn new(n: usize, rng: ChaCha8Rng) -> Self {
        let mut sampler = BatchSampler {
            order: (0..n).collect(),
            pos: 0,
            rng,
        };
        sampler.reshuffle();
        sampler
    }

    fn reshuffle(&mut self) {
        self.order.shuffle(&mut self.rng);
        self.pos = 0;
    }

    /// Next sequential chunk of up to `size` indices; empty once the pass
    /// is exhausted.
    fn next_chunk(&mut self, size: usize) -> Vec<usize> {
        let take = size.min(self.order.len() - self.pos);
        let chunk = self.order[self.pos..self.pos + take].to_vec();
        self.pos += take;
        chunk
    }

    /// Always-full batch; wraps with a reshuffle when the pass runs out.
    fn next_recycled(&mut self, size: usize) -> Vec<usize> {
        let mut batch = Vec::with_capacity(size);
        while batch.len() < size {
            if self.pos == self.order.len() {
                self.reshuffle();
            }
            let take = (size - batch.len()).min(self.order.len() - self.pos);
            batch.extend_from_slice(&self.order[self.pos..self.pos + take]);
            self.pos += take;
        }
        batch
    }
}

/// Trains on all source samples plus the target-train split and evaluates on
/// the target-test split after every epoch. Deterministic for a fixed seed.
pub fn train(
    config: &TrainConfig,
    source: &FeatureDomain,
    target_train: &FeatureDomain,
    target_test: &FeatureDomain,
    arch: &ModelConfig,
) -> Result<(ModelParams, TrainHistory)> {
    config.validate()?;
    arch.validate()?;
    let classes = arch.classes;
    for (name, domain) in [
        ("source", source),
        ("target-train", target_train),
        ("target-test", target_test),
    ] {
        if domain.class_count() != classes {
            return Err(Error::Config(format!(
                "{name} domain has {} classes, model expects {classes}",
                domain.class_count()
            )));
        }
    }
    if source.feature_width() != arch.d_in_visual
        || target_train.feature_width() != arch.d_in_acoustic
        || target_test.feature_width() != arch.d_in_acoustic
    {
        return Err(Error::Config(format!(
            "feature widths {}/{} do not match architecture {}/{}",
            source.feature_width(),
            target_train.feature_width(),
            arch.d_in_visual,
            arch.d_in_acoustic
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut params = ModelParams::init(arch.clone(), &mut rng)?;
    let mut velocities: Vec<Matrix> = params
        .clone_params()
        .iter()
        .map(|m| Matrix::zeros(m.rows(), m.cols()))
        .collect();

    let use_attention = config.ablation != Ablation::NoAttention;
    let alpha = match config.ablation {
        Ablation::NoLmmd => 0.0,
        _ => config.alpha,
    };

    let n_source = source.len();
    let n_target = target_train.len();
    let steps_per_epoch = n_source.max(n_target).div_ceil(config.batch_size);
    let source_is_larger = n_source >= n_target;
    let mut source_sampler = BatchSampler::new(
        n_source,
        ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1)),
    );
    let mut target_sampler = BatchSampler::new(
        n_target,
        ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(2)),
    );

    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        if epoch > 0 {
            source_sampler.reshuffle();
            target_sampler.reshuffle();
        }
        let mut sums = (0.0, 0.0, 0.0, 0.0);
        for step in 0..steps_per_epoch {
            let (source_idx, target_idx) = if source_is_larger {
                (
                    source_sampler.next_chunk(config.batch_size),
                    target_sampler.next_recycled(config.batch_size.min(n_target)),
                )
            } else {
                (
                    source_sampler.next_recycled(config.batch_size.min(n_source)),
                    target_sampler.next_chunk(config.batch_size),
                )
            };

            let xv = source.features.select_rows(&source_idx);
            let yv = source.labels.select_rows(&source_idx);
            let xa = target_train.features.select_rows(&target_idx);
            let ya = target_train.labels.select_rows(&target_idx);

            let mut tape = Tape::new();
            let nodes = params.register(&mut tape);
            let xv_node = tape.input(xv);
            let xa_node = tape.input(xa);
            let trace = forward(&mut tape, &nodes, xv_node, xa_node, use_attention)?;
            let (loss, breakdown) = total_loss(&mut tape, &trace, &yv, &ya, alpha, &config.kernel)?;
            if !breakdown.total.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    step,
                    value: breakdown.total,
                });
            }
            sums.0 += breakdown.ce_visual;
            sums.1 += breakdown.ce_acoustic;
            sums.2 += breakdown.lmmd_sum;
            sums.3 += breakdown.total;

            let grads = tape.backward(loss)?;
            let ordered: Vec<&Matrix> = grads.iter().map(|(_, g)| g).collect();
            debug_assert_eq!(ordered.len(), velocities.len());
            let mut i = 0;
            let mut step_err = None;
            params.visit_mut(&mut |p| {
                if step_err.is_some() {
                    return;
                }
                match sgd_momentum_step(
                    p,
                    ordered[i],
                    &velocities[i],
                    config.learning_rate,
                    config.momentum,
                    config.weight_decay,
                ) {
                    Ok((new_p, new_v)) => {
                        *p = new_p;
                        velocities[i] = new_v;
                    }
                    Err(e) => step_err = Some(e),
                }
                i += 1;
            });
            if let Some(e) = step_err {
                return Err(e);
            }
        }

        let report = evaluate(&params, target_test, target_test.modality)?;
        let steps = steps_per_epoch as f64;
        history.push(EpochRecord {
            epoch,
            ce_v: sums.0 / steps,
            ce_a: sums.1 / steps,
            lmmd_sum: sums.2 / steps,
            total: sums.3 / steps,
            war: report.war,
            uar: report.uar,
            w_f1: report.w_f1,
        });
    }
    Ok((params, history))
}

/// Runs a domain through its own modality stream (the cross-propagated term
/// is omitted at inference) and scores argmax predictions.
pub fn evaluate(
    params: &ModelParams,
    domain: &FeatureDomain,
    modality: crate::data::Modality,
) -> Result<MetricsReport> {
    let side = match modality {
        crate::data::Modality::Visual => StreamSide::Visual,
        crate::data::Modality::Acoustic => StreamSide::Acoustic,
    };
    let expected_width = match side {
        StreamSide::Visual => params.config.d_in_visual,
        StreamSide::Acoustic => params.config.d_in_acoustic,
    };
    if domain.feature_width() != expected_width {
        return Err(Error::ShapeMismatch {
            op: "evaluate",
            lhs: domain.features.shape_string(),
            rhs: format!("model expects width {expected_width}"),
        });
    }
    if domain.class_count() != params.config.classes {
        return Err(Error::Config(format!(
            "domain has {} classes, model expects {}",
            domain.class_count(),
            params.config.classes
        )));
    }
    let mut tape = Tape::new();
    let nodes = params.register(&mut tape);
    let x = tape.input(domain.features.clone());
    let (_, logits) = forward_single(&mut tape, &nodes, x, side)?;
    let predictions = argmax_rows(tape.value(logits));
    metrics(&predictions, &domain.label_indices(), params.config.classes)
}

/// Per-layer activations of a domain through its own stream; used for the
/// projection export.
pub fn final_layer_activations(params: &ModelParams, domain: &FeatureDomain) -> Result<Matrix> {
    let side = match domain.modality {
        crate::data::Modality::Visual => StreamSide::Visual,
        crate::data::Modality::Acoustic => StreamSide::Acoustic,
    };
    let mut tape = Tape::new();
    let nodes = params.register(&mut tape);
    let x = tape.input(domain.features.clone());
    let (activations, _) = forward_single(&mut tape, &nodes, x, side)?;
    let last = *activations.last().expect("at least one layer");
    Ok(tape.value(last).clone())
}

/// Row-wise argmax with ties resolved to the lowest index.
pub fn argmax_rows(m: &Matrix) -> Vec<usize> {
    (0..m.rows())
        .map(|i| {
            let row = m.row(i);
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}
