//! Shared test support: the central finite-difference oracle and the
//! gradient-check suite it drives. The oracle only ever evaluates forward
//! losses, so it stays independent of the backward implementation it checks.

#![allow(dead_code)]

use fdan::attention::{cross_attention_block, fuse_update, AttentionBlockParams};
use fdan::kernel::{class_weights, lmmd, KernelSpec};
use fdan::model::{forward, total_loss, ModelConfig, ModelParams};
use fdan::{Matrix, Tape};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;

pub fn rand_matrix(rows: usize, cols: usize, rng: &mut impl Rng) -> Matrix {
    let mut m = Matrix::zeros(rows, cols);
    for v in m.data_mut() {
        *v = rng.gen_range(-1.0..1.0);
    }
    m
}

pub fn one_hot(indices: &[usize], classes: usize) -> Matrix {
    let mut m = Matrix::zeros(indices.len(), classes);
    for (i, &c) in indices.iter().enumerate() {
        m.set(i, c, 1.0);
    }
    m
}

pub fn rand_labels(n: usize, classes: usize, rng: &mut impl Rng) -> Vec<usize> {
    (0..n).map(|_| rng.gen_range(0..classes)).collect()
}

/// Independent oracle for the linear-kernel class-local discrepancy: with the
/// identity feature map it is, per class present in both batches, the squared
/// distance between weighted feature means, averaged over those classes.
pub fn explicit_weighted_mean_difference(
    zv: &Matrix,
    za: &Matrix,
    yv: &Matrix,
    ya: &Matrix,
) -> f64 {
    let classes = yv.cols();
    let d = zv.cols();
    let mut total = 0.0;
    let mut shared = 0usize;
    for c in 0..classes {
        let count_v: f64 = (0..yv.rows()).map(|i| yv.get(i, c)).sum();
        let count_a: f64 = (0..ya.rows()).map(|i| ya.get(i, c)).sum();
        if count_v == 0.0 || count_a == 0.0 {
            continue;
        }
        shared += 1;
        let mut gap = vec![0.0; d];
        for i in 0..zv.rows() {
            let w = yv.get(i, c) / count_v;
            for (j, g) in gap.iter_mut().enumerate() {
                *g += w * zv.get(i, j);
            }
        }
        for i in 0..za.rows() {
            let w = ya.get(i, c) / count_a;
            for (j, g) in gap.iter_mut().enumerate() {
                *g -= w * za.get(i, j);
            }
        }
        total += gap.iter().map(|g| g * g).sum::<f64>();
    }
    if shared == 0 {
        0.0
    } else {
        total / shared as f64
    }
}

/// Central finite differences of `f` at `at`, one entry at a time.
pub fn finite_difference_gradients(
    f: &mut dyn FnMut(&[Matrix]) -> f64,
    at: &[Matrix],
    step: f64,
) -> Vec<Matrix> {
    let mut grads = Vec::with_capacity(at.len());
    for (which, base) in at.iter().enumerate() {
        let mut grad = Matrix::zeros(base.rows(), base.cols());
        for idx in 0..base.data().len() {
            let mut plus = at.to_vec();
            plus[which].data_mut()[idx] += step;
            let mut minus = at.to_vec();
            minus[which].data_mut()[idx] -= step;
            grad.data_mut()[idx] = (f(&plus) - f(&minus)) / (2.0 * step);
        }
        grads.push(grad);
    }
    grads
}

/// Scaled max-abs relative error between an analytic gradient and its
/// finite-difference estimate, maximized over all matrices. Each matrix is
/// scaled by its own estimate's magnitude (floored, so near-zero gradients
/// are compared absolutely).
pub fn max_rel_err(analytic: &[Matrix], estimate: &[Matrix]) -> f64 {
    let mut worst: f64 = 0.0;
    for (a, e) in analytic.iter().zip(estimate) {
        assert_eq!(a.shape(), e.shape(), "gradient shape drift");
        let denom = e.max_abs().max(1e-6);
        let num = a
            .data()
            .iter()
            .zip(e.data())
            .fold(0.0f64, |m, (&x, &y)| m.max((x - y).abs()));
        worst = worst.max(num / denom);
    }
    worst
}

/// Runs a taped scalar loss over explicit leaf inputs, returning (analytic
/// gradients, fd gradients). `build` records the loss given leaf node ids.
fn check_taped_loss(
    inputs: &[Matrix],
    build: &dyn Fn(&mut Tape, &[fdan::NodeId]) -> fdan::NodeId,
) -> (Vec<Matrix>, Vec<Matrix>) {
    let mut tape = Tape::new();
    let ids: Vec<_> = inputs.iter().map(|m| tape.param(m.clone())).collect();
    let loss = build(&mut tape, &ids);
    let grads = tape.backward(loss).unwrap();
    let analytic: Vec<Matrix> = ids
        .iter()
        .map(|&id| grads.get(id).unwrap().clone())
        .collect();

    let mut f = |at: &[Matrix]| -> f64 {
        let mut tape = Tape::new();
        let ids: Vec<_> = at.iter().map(|m| tape.input(m.clone())).collect();
        let loss = build(&mut tape, &ids);
        tape.scalar(loss)
    };
    let fd = finite_difference_gradients(&mut f, inputs, FD_STEP);
    (analytic, fd)
}

pub struct GradCheck {
    pub name: &'static str,
    pub rel_err: f64,
    pub tolerance: f64,
}

impl GradCheck {
    pub fn passes(&self) -> bool {
        self.rel_err <= self.tolerance
    }
}

/// A fixed random weighting makes a scalar readout of a matrix output; sum
/// alone would miss sign errors that cancel across entries.
fn weighted_readout(tape: &mut Tape, out: fdan::NodeId, weights: &Matrix) -> fdan::NodeId {
    let w = tape.input(weights.clone());
    let prod = tape.mul(out, w).unwrap();
    tape.sum(prod).unwrap()
}

pub fn check_matmul() -> GradCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let a = rand_matrix(3, 4, &mut rng);
    let b = rand_matrix(4, 2, &mut rng);
    let (analytic, fd) = check_taped_loss(&[a, b], &|tape, ids| {
        let c = tape.matmul(ids[0], ids[1]).unwrap();
        tape.sum(c).unwrap()
    });
    GradCheck {
        name: "matmul",
        rel_err: max_rel_err(&analytic, &fd),
        tolerance: 1e-6,
    }
}

pub fn check_relu() -> GradCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    // Keep entries away from the kink so the difference quotient is exact.
    let mut m = rand_matrix(4, 5, &mut rng);
    for v in m.data_mut() {
        if v.abs() < 0.1 {
            *v += 0.2 * v.signum().max(0.5);
        }
    }
    let w = rand_matrix(4, 5, &mut rng);
    let (analytic, fd) = check_taped_loss(&[m], &|tape, ids| {
        let r = tape.relu(ids[0]).unwrap();
        weighted_readout(tape, r, &w)
    });
    GradCheck {
        name: "relu",
        rel_err: max_rel_err(&analytic, &fd),
        tolerance: 1e-6,
    }
}

pub fn check_softmax_rows() -> GradCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(103);
    let m = rand_matrix(4, 6, &mut rng);
    let w = rand_matrix(4, 6, &mut rng);
    let (analytic, fd) = check_taped_loss(&[m], &|tape, ids| {
        let s = tape.softmax_rows(ids[0]).unwrap();
        weighted_readout(tape, s, &w)
    });
    GradCheck {
        name: "softmax_rows",
        rel_err: max_rel_err(&analytic, &fd),
        tolerance: 1e-6,
    }
}

pub fn check_layer_norm() -> GradCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(104);
    let m = rand_matrix(4, 8, &mut rng);
    let gain = rand_matrix(1, 8, &mut rng);
    let bias = rand_matrix(1, 8, &mut rng);
    let w = rand_matrix(4, 8, &mut rng);
    let (analytic, fd) = check_taped_loss(&[m, gain, bias], &|tape, ids| {
        let out = tape.layer_norm(ids[0], ids[1], ids[2], 1e-5).unwrap();
        weighted_readout(tape, out, &w)
    });
    GradCheck {
        name: "layer_norm",
        rel_err: max_rel_err(&analytic, &fd),
        tolerance: 1e-5,
    }
}

pub fn check_cross_entropy() -> GradCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(105);
    let logits = rand_matrix(6, 3, &mut rng);
    let targets = one_hot(&[0, 2, 1, 1, 0, 2], 3);
    let (analytic, fd) = check_taped_loss(&[logits], &|tape, ids| {
        tape.cross_entropy_mean(ids[0], &targets).unwrap()
    });
    GradCheck {
        name: "cross_entropy",
        rel_err: max_rel_err(&analytic, &fd),
        tolerance: 1e-5,
    }
}

pub fn check_gaussian_kernel() -> GradCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(106);
    let x = rand_matrix(5, 3, &mut rng);
    let y = rand_matrix(4, 3, &mut rng);
    let w = rand_matrix(5, 4, &mut rng);
    let (analytic, fd) = check_taped_loss(&[x, y], &|tape, ids| {
        let k = tape
            .gaussian_kernel(ids[0], ids[1], 1.7, &[0.5, 1.0, 2.0])
            .unwrap();
        weighted_readout(tape, k, &w)
    });
    GradCheck {
        name: "gaussian_kernel",
        rel_err: max_rel_err(&analytic, &fd),
        tolerance: 1e-4,
    }
}

pub fn check_lmmd(spec: KernelSpec, name: &'static str) -> GradCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(107);
    let zv = rand_matrix(6, 4, &mut rng);
    let za = rand_matrix(5, 4, &mut rng);
    let wv = class_weights(&one_hot(&[0, 1, 0, 1, 0, 1], 2)).unwrap();
    let wa = class_weights(&one_hot(&[1, 0, 1, 0, 1], 2)).unwrap();
    // Median bandwidths must be resolved once so the differentiated function
    // is the fixed-bandwidth one.
    let spec = match spec.bandwidth {
        fdan::Bandwidth::Median => {
            let resolved = spec.resolve(&zv, &za).unwrap();
            KernelSpec::gaussian_fixed(resolved.sigma2, resolved.ladder)
        }
        _ => spec,
    };
    let (analytic, fd) = check_taped_loss(&[zv, za], &|tape, ids| {
        lmmd(tape, ids[0], ids[1], &wv, &wa, &spec).unwrap().node
    });
    GradCheck {
        name,
        rel_err: max_rel_err(&analytic, &fd),
        tolerance: 1e-4,
    }
}

pub fn check_fuse_update() -> GradCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(108);
    let d = 4;
    let params = AttentionBlockParams::init(d, 2 * d, &mut rng);
    let z = rand_matrix(5, d, &mut rng);
    let dz = rand_matrix(5, d, &mut rng);
    let w = rand_matrix(5, d, &mut rng);
    let (analytic, fd) = check_taped_loss(&[z, dz], &|tape, ids| {
        let nodes = params.visual.register(tape);
        let out = fuse_update(tape, ids[0], ids[1], &nodes).unwrap();
        weighted_readout(tape, out, &w)
    });
    GradCheck {
        name: "fuse_update",
        rel_err: max_rel_err(&analytic, &fd),
        tolerance: 1e-4,
    }
}

pub fn check_attention_block() -> GradCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(109);
    let d = 4;
    let params = AttentionBlockParams::init(d, 2 * d, &mut rng);
    let zv = rand_matrix(5, d, &mut rng);
    let za = rand_matrix(3, d, &mut rng);
    let wv = rand_matrix(5, d, &mut rng);
    let wa = rand_matrix(3, d, &mut rng);
    let (analytic, fd) = check_taped_loss(&[zv, za], &|tape, ids| {
        let nodes = params.register(tape);
        let (v, a) = cross_attention_block(tape, ids[0], ids[1], &nodes).unwrap();
        let rv = weighted_readout(tape, v, &wv);
        let ra = weighted_readout(tape, a, &wa);
        tape.add(rv, ra).unwrap()
    });
    GradCheck {
        name: "cross_attention_block",
        rel_err: max_rel_err(&analytic, &fd),
        tolerance: 1e-4,
    }
}

/// Toy composite used by the full-objective gradient check:
/// n_v = 8, n_a = 6, d_in = 5, d = 4, l = 2, C = 3.
pub struct ToyProblem {
    pub params: ModelParams,
    pub xv: Matrix,
    pub xa: Matrix,
    pub yv: Matrix,
    pub ya: Matrix,
}

pub fn toy_problem(seed: u64) -> ToyProblem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let config = ModelConfig::new(5, 5, 3).with_dims(4, 8, 2);
    let params = ModelParams::init(config, &mut rng).unwrap();
    ToyProblem {
        params,
        xv: rand_matrix(8, 5, &mut rng),
        xa: rand_matrix(6, 5, &mut rng),
        yv: one_hot(&[0, 1, 2, 0, 1, 2, 0, 1], 3),
        ya: one_hot(&[0, 1, 2, 0, 1, 2], 3),
    }
}

fn set_params(params: &mut ModelParams, values: &[Matrix]) {
    let mut i = 0;
    params.visit_mut(&mut |m| {
        *m = values[i].clone();
        i += 1;
    });
    assert_eq!(i, values.len());
}

fn toy_loss(problem: &ToyProblem, values: &[Matrix], alpha: f64, spec: &KernelSpec) -> f64 {
    let mut params = problem.params.clone();
    set_params(&mut params, values);
    let mut tape = Tape::new();
    let nodes = params.register(&mut tape);
    let xv = tape.input(problem.xv.clone());
    let xa = tape.input(problem.xa.clone());
    let trace = forward(&mut tape, &nodes, xv, xa, true).unwrap();
    let (_, breakdown) =
        total_loss(&mut tape, &trace, &problem.yv, &problem.ya, alpha, spec).unwrap();
    breakdown.total
}

/// Full-objective gradient check over every parameter of the toy model.
/// The kernel bandwidth is pinned up front: within one optimization step it
/// is a constant of the objective.
pub fn check_composite(spec: KernelSpec, alpha: f64, name: &'static str) -> GradCheck {
    let problem = toy_problem(1234);
    let spec = match spec.bandwidth {
        fdan::Bandwidth::Median => KernelSpec::gaussian_fixed(2.0, spec.ladder),
        _ => spec,
    };

    let mut tape = Tape::new();
    let nodes = problem.params.register(&mut tape);
    let xv = tape.input(problem.xv.clone());
    let xa = tape.input(problem.xa.clone());
    let trace = forward(&mut tape, &nodes, xv, xa, true).unwrap();
    let (loss, _) = total_loss(&mut tape, &trace, &problem.yv, &problem.ya, alpha, &spec).unwrap();
    let grads = tape.backward(loss).unwrap();
    let analytic: Vec<Matrix> = grads.iter().map(|(_, g)| g.clone()).collect();

    let base = problem.params.clone_params();
    let mut f = |at: &[Matrix]| toy_loss(&problem, at, alpha, &spec);
    let fd = finite_difference_gradients(&mut f, &base, FD_STEP);
    GradCheck {
        name,
        rel_err: max_rel_err(&analytic, &fd),
        tolerance: 1e-4,
    }
}

/// Every gradient check in one sweep, for the acceptance suite.
pub fn run_gradient_suite() -> Vec<GradCheck> {
    vec![
        check_matmul(),
        check_relu(),
        check_softmax_rows(),
        check_layer_norm(),
        check_cross_entropy(),
        check_gaussian_kernel(),
        check_lmmd(KernelSpec::linear(), "lmmd_linear"),
        check_lmmd(KernelSpec::default(), "lmmd_gaussian_median"),
        check_fuse_update(),
        check_attention_block(),
        check_composite(KernelSpec::default(), 0.5, "composite_objective"),
    ]
}
