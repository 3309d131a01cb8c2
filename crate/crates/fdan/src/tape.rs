//! Reverse-mode gradient tape over [`Matrix`] values.
//!
//! Operations are recorded at matrix granularity during the forward pass and
//! replayed in reverse creation order to accumulate gradients. Node ids are
//! assigned in creation order, so the graph is acyclic by construction and a
//! plain reverse sweep is a valid reverse-topological order.
//!
//! A tape is owned by a single forward/backward pass and is not shared across
//! threads; all the math it performs is pure and runs in a fixed reduction
//! order, so results do not depend on the host's thread count.

use crate::matrix::Matrix;
use crate::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Per-row cache for the layer-norm backward pass.
#[derive(Debug)]
struct LayerNormCache {
    normalized: Matrix,
    inv_std: Vec<f64>,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Matmul {
        a: NodeId,
        b: NodeId,
    },
    Transpose {
        a: NodeId,
    },
    Add {
        a: NodeId,
        b: NodeId,
    },
    Sub {
        a: NodeId,
        b: NodeId,
    },
    Mul {
        a: NodeId,
        b: NodeId,
    },
    Scale {
        a: NodeId,
        factor: f64,
    },
    AddRowBroadcast {
        a: NodeId,
        row: NodeId,
    },
    Relu {
        a: NodeId,
    },
    SoftmaxRows {
        a: NodeId,
    },
    LayerNorm {
        a: NodeId,
        gain: NodeId,
        bias: NodeId,
        cache: LayerNormCache,
    },
    Sum {
        a: NodeId,
    },
    CrossEntropyMean {
        logits: NodeId,
        /// One-hot targets; constants, no gradient flows to them.
        targets: Matrix,
        softmax: Matrix,
    },
    GaussianKernel {
        x: NodeId,
        y: NodeId,
        sigma2: f64,
        ladder: Vec<f64>,
        sq_dists: Matrix,
    },
}

struct Node {
    value: Matrix,
    op: Op,
    param: bool,
}

/// Gradients of every parameter registered on a tape, in registration order.
/// Parameters the loss never touched get zero matrices of the right shape.
#[derive(Debug)]
pub struct GradientMap {
    entries: Vec<(NodeId, Matrix)>,
}

impl GradientMap {
    pub fn get(&self, id: NodeId) -> Option<&Matrix> {
        self.entries.iter().find(|(n, _)| *n == id).map(|(_, g)| g)
    }

    pub fn iter(&self) -> impl Iterator<Item = (NodeId, &Matrix)> {
        self.entries.iter().map(|(n, g)| (*n, g))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Recording tape. Create one per forward/backward pass.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    fn push(&mut self, value: Matrix, op: Op, param: bool) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node { value, op, param });
        id
    }

    /// Registers a constant/input leaf. No gradient is reported for it.
    pub fn input(&mut self, value: Matrix) -> NodeId {
        self.push(value, Op::Leaf, false)
    }

    /// Registers a trainable-parameter leaf; its gradient appears in the
    /// [`GradientMap`] returned by [`Tape::backward`].
    pub fn param(&mut self, value: Matrix) -> NodeId {
        self.push(value, Op::Leaf, true)
    }

    pub fn value(&self, id: NodeId) -> &Matrix {
        &self.nodes[id.0].value
    }

    /// Scalar value of a 1x1 node.
    pub fn scalar(&self, id: NodeId) -> f64 {
        debug_assert_eq!(self.nodes[id.0].value.shape(), (1, 1));
        self.nodes[id.0].value.get(0, 0)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    // ── Recorded operations ──────────────────────────────────────────

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = self.value(a).matmul(self.value(b))?;
        Ok(self.push(value, Op::Matmul { a, b }, false))
    }

    pub fn transpose(&mut self, a: NodeId) -> Result<NodeId> {
        let value = self.value(a).transpose();
        Ok(self.push(value, Op::Transpose { a }, false))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = self.value(a).add(self.value(b))?;
        Ok(self.push(value, Op::Add { a, b }, false))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = self.value(a).sub(self.value(b))?;
        Ok(self.push(value, Op::Sub { a, b }, false))
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = self.value(a).hadamard(self.value(b))?;
        Ok(self.push(value, Op::Mul { a, b }, false))
    }

    pub fn scale(&mut self, a: NodeId, factor: f64) -> Result<NodeId> {
        let value = self.value(a).scale(factor);
        Ok(self.push(value, Op::Scale { a, factor }, false))
    }

    /// Adds a `1xn` row vector to every row of an `mxn` matrix.
    pub fn add_row_broadcast(&mut self, a: NodeId, row: NodeId) -> Result<NodeId> {
        let m = self.value(a);
        let r = self.value(row);
        if r.rows() != 1 || r.cols() != m.cols() {
            return Err(Error::ShapeMismatch {
                op: "add_row_broadcast",
                lhs: m.shape_string(),
                rhs: r.shape_string(),
            });
        }
        let mut value = m.clone();
        for i in 0..value.rows() {
            for j in 0..value.cols() {
                let v = value.get(i, j) + r.get(0, j);
                value.set(i, j, v);
            }
        }
        Ok(self.push(value, Op::AddRowBroadcast { a, row }, false))
    }

    pub fn relu(&mut self, a: NodeId) -> Result<NodeId> {
        let value = self.value(a).map(|v| v.max(0.0));
        Ok(self.push(value, Op::Relu { a }, false))
    }

    /// Row-wise softmax with per-row max subtraction.
    pub fn softmax_rows(&mut self, a: NodeId) -> Result<NodeId> {
        let m = self.value(a);
        let mut value = Matrix::zeros(m.rows(), m.cols());
        for i in 0..m.rows() {
            let row = m.row(i);
            let max = row.iter().fold(f64::NEG_INFINITY, |acc, &v| acc.max(v));
            let mut denom = 0.0;
            for (j, &v) in row.iter().enumerate() {
                let e = (v - max).exp();
                value.set(i, j, e);
                denom += e;
            }
            for j in 0..m.cols() {
                value.set(i, j, value.get(i, j) / denom);
            }
        }
        Ok(self.push(value, Op::SoftmaxRows { a }, false))
    }

    /// Row-wise standardization (population variance, `eps` inside the square
    /// root) followed by a gain/bias affine map. `gain` and `bias` are `1xn`.
    /// Rows of width 1 are rejected: their variance is identically zero.
    pub fn layer_norm(
        &mut self,
        a: NodeId,
        gain: NodeId,
        bias: NodeId,
        eps: f64,
    ) -> Result<NodeId> {
        let m = self.value(a);
        let (rows, cols) = m.shape();
        if cols < 2 {
            return Err(Error::InvalidParameter(format!(
                "layer_norm needs at least 2 columns, got {cols}"
            )));
        }
        if eps <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "layer_norm eps must be positive, got {eps}"
            )));
        }
        let g = self.value(gain);
        let b = self.value(bias);
        for (name, v) in [("gain", g), ("bias", b)] {
            if v.rows() != 1 || v.cols() != cols {
                return Err(Error::ShapeMismatch {
                    op: "layer_norm",
                    lhs: m.shape_string(),
                    rhs: format!("{name} {}", v.shape_string()),
                });
            }
        }
        let mut normalized = Matrix::zeros(rows, cols);
        let mut inv_std = Vec::with_capacity(rows);
        let mut value = Matrix::zeros(rows, cols);
        for i in 0..rows {
            let row = m.row(i);
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std.push(is);
            for (j, &x) in row.iter().enumerate() {
                let n = (x - mean) * is;
                normalized.set(i, j, n);
                value.set(i, j, g.get(0, j) * n + b.get(0, j));
            }
        }
        Ok(self.push(
            value,
            Op::LayerNorm {
                a,
                gain,
                bias,
                cache: LayerNormCache {
                    normalized,
                    inv_std,
                },
            },
            false,
        ))
    }

    /// Sum of all entries, as a 1x1 node.
    pub fn sum(&mut self, a: NodeId) -> Result<NodeId> {
        let value = Matrix::from_vec(1, 1, vec![self.value(a).sum()])?;
        Ok(self.push(value, Op::Sum { a }, false))
    }

    /// Mean over rows of `-log softmax(logits)[true class]`, log-sum-exp
    /// stabilized. `targets` must be exactly one-hot per row.
    pub fn cross_entropy_mean(&mut self, logits: NodeId, targets: &Matrix) -> Result<NodeId> {
        let z = self.value(logits);
        if z.shape() != targets.shape() {
            return Err(Error::ShapeMismatch {
                op: "cross_entropy_mean",
                lhs: z.shape_string(),
                rhs: targets.shape_string(),
            });
        }
        crate::kernel::validate_one_hot(targets)?;
        let (rows, cols) = z.shape();
        let mut softmax = Matrix::zeros(rows, cols);
        let mut total = 0.0;
        for i in 0..rows {
            let row = z.row(i);
            let max = row.iter().fold(f64::NEG_INFINITY, |acc, &v| acc.max(v));
            let mut denom = 0.0;
            for &v in row {
                denom += (v - max).exp();
            }
            let lse = max + denom.ln();
            let mut true_logit = 0.0;
            for (j, &v) in row.iter().enumerate() {
                softmax.set(i, j, (v - max).exp() / denom);
                if targets.get(i, j) == 1.0 {
                    true_logit = v;
                }
            }
            total += lse - true_logit;
        }
        let value = Matrix::from_vec(1, 1, vec![total / rows as f64])?;
        Ok(self.push(
            value,
            Op::CrossEntropyMean {
                logits,
                targets: targets.clone(),
                softmax,
            },
            false,
        ))
    }

    /// Multi-bandwidth Gaussian kernel matrix between the rows of `x` and the
    /// rows of `y`: entry (i, j) is the mean over ladder multipliers `t` of
    /// `exp(-||x_i - y_j||^2 / (t * sigma2))`. The bandwidth is a constant of
    /// the operation; no gradient flows through it.
    pub fn gaussian_kernel(
        &mut self,
        x: NodeId,
        y: NodeId,
        sigma2: f64,
        ladder: &[f64],
    ) -> Result<NodeId> {
        let xv = self.value(x);
        let yv = self.value(y);
        if xv.cols() != yv.cols() {
            return Err(Error::ShapeMismatch {
                op: "gaussian_kernel",
                lhs: xv.shape_string(),
                rhs: yv.shape_string(),
            });
        }
        if sigma2 <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "gaussian kernel bandwidth must be positive, got {sigma2}"
            )));
        }
        if ladder.is_empty() || ladder.iter().any(|&t| t <= 0.0) {
            return Err(Error::InvalidParameter(
                "bandwidth ladder must be nonempty with positive multipliers".into(),
            ));
        }
        let (n, m) = (xv.rows(), yv.rows());
        let mut sq_dists = Matrix::zeros(n, m);
        for i in 0..n {
            for j in 0..m {
                sq_dists.set(i, j, xv.row_sq_dist(i, yv, j));
            }
        }
        let mut value = Matrix::zeros(n, m);
        for i in 0..n {
            for j in 0..m {
                let d = sq_dists.get(i, j);
                let mut k = 0.0;
                for &t in ladder {
                    k += (-d / (t * sigma2)).exp();
                }
                value.set(i, j, k / ladder.len() as f64);
            }
        }
        Ok(self.push(
            value,
            Op::GaussianKernel {
                x,
                y,
                sigma2,
                ladder: ladder.to_vec(),
                sq_dists,
            },
            false,
        ))
    }

    // ── Backward ─────────────────────────────────────────────────────

    /// Reverse-accumulates gradients from a scalar loss node and returns one
    /// gradient per registered parameter (zeros for parameters the loss does
    /// not depend on).
    pub fn backward(&self, loss: NodeId) -> Result<GradientMap> {
        let root = &self.nodes[loss.0];
        if root.value.shape() != (1, 1) {
            return Err(Error::NonScalarLoss {
                rows: root.value.rows(),
                cols: root.value.cols(),
            });
        }
        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Matrix::filled(1, 1, 1.0));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            self.backward_op(idx, &g, &mut grads)?;
            grads[idx] = Some(g);
        }

        let mut entries = Vec::new();
        for (idx, node) in self.nodes.iter().enumerate() {
            if node.param {
                let grad = grads[idx]
                    .take()
                    .unwrap_or_else(|| Matrix::zeros(node.value.rows(), node.value.cols()));
                entries.push((NodeId(idx), grad));
            }
        }
        Ok(GradientMap { entries })
    }

    fn backward_op(&self, idx: usize, g: &Matrix, grads: &mut [Option<Matrix>]) -> Result<()> {
        fn acc(slot: &mut Option<Matrix>, delta: Matrix) {
            match slot {
                Some(existing) => {
                    let sum = existing.add(&delta).expect("gradient shape drift");
                    *existing = sum;
                }
                None => *slot = Some(delta),
            }
        }

        let node = &self.nodes[idx];
        match &node.op {
            Op::Leaf => {}
            Op::Matmul { a, b } => {
                let av = self.value(*a);
                let bv = self.value(*b);
                acc(&mut grads[a.0], g.matmul(&bv.transpose())?);
                acc(&mut grads[b.0], av.transpose().matmul(g)?);
            }
            Op::Transpose { a } => {
                acc(&mut grads[a.0], g.transpose());
            }
            Op::Add { a, b } => {
                acc(&mut grads[a.0], g.clone());
                acc(&mut grads[b.0], g.clone());
            }
            Op::Sub { a, b } => {
                acc(&mut grads[a.0], g.clone());
                acc(&mut grads[b.0], g.scale(-1.0));
            }
            Op::Mul { a, b } => {
                acc(&mut grads[a.0], g.hadamard(self.value(*b))?);
                acc(&mut grads[b.0], g.hadamard(self.value(*a))?);
            }
            Op::Scale { a, factor } => {
                acc(&mut grads[a.0], g.scale(*factor));
            }
            Op::AddRowBroadcast { a, row } => {
                acc(&mut grads[a.0], g.clone());
                let mut row_grad = Matrix::zeros(1, g.cols());
                for i in 0..g.rows() {
                    for j in 0..g.cols() {
                        row_grad.set(0, j, row_grad.get(0, j) + g.get(i, j));
                    }
                }
                acc(&mut grads[row.0], row_grad);
            }
            Op::Relu { a } => {
                let mask = self.value(*a).map(|v| if v > 0.0 { 1.0 } else { 0.0 });
                acc(&mut grads[a.0], g.hadamard(&mask)?);
            }
            Op::SoftmaxRows { a } => {
                let s = &node.value;
                let mut da = Matrix::zeros(s.rows(), s.cols());
                for i in 0..s.rows() {
                    let dot: f64 = (0..s.cols()).map(|j| g.get(i, j) * s.get(i, j)).sum();
                    for j in 0..s.cols() {
                        da.set(i, j, s.get(i, j) * (g.get(i, j) - dot));
                    }
                }
                acc(&mut grads[a.0], da);
            }
            Op::LayerNorm {
                a,
                gain,
                bias,
                cache,
            } => {
                let gv = self.value(*gain);
                let (rows, cols) = cache.normalized.shape();
                let mut d_gain = Matrix::zeros(1, cols);
                let mut d_bias = Matrix::zeros(1, cols);
                let mut da = Matrix::zeros(rows, cols);
                for i in 0..rows {
                    // d/d normalized, then the standardization backward.
                    let mut dn = vec![0.0; cols];
                    let mut dn_mean = 0.0;
                    let mut dn_dot_n = 0.0;
                    for (j, slot) in dn.iter_mut().enumerate() {
                        let gij = g.get(i, j);
                        let nij = cache.normalized.get(i, j);
                        d_gain.set(0, j, d_gain.get(0, j) + gij * nij);
                        d_bias.set(0, j, d_bias.get(0, j) + gij);
                        let d = gij * gv.get(0, j);
                        *slot = d;
                        dn_mean += d;
                        dn_dot_n += d * nij;
                    }
                    dn_mean /= cols as f64;
                    dn_dot_n /= cols as f64;
                    let is = cache.inv_std[i];
                    for (j, &dnj) in dn.iter().enumerate() {
                        let nij = cache.normalized.get(i, j);
                        da.set(i, j, is * (dnj - dn_mean - nij * dn_dot_n));
                    }
                }
                acc(&mut grads[a.0], da);
                acc(&mut grads[gain.0], d_gain);
                acc(&mut grads[bias.0], d_bias);
            }
            Op::Sum { a } => {
                let av = self.value(*a);
                acc(
                    &mut grads[a.0],
                    Matrix::filled(av.rows(), av.cols(), g.get(0, 0)),
                );
            }
            Op::CrossEntropyMean {
                logits,
                targets,
                softmax,
            } => {
                let scale = g.get(0, 0) / softmax.rows() as f64;
                let d = softmax.sub(targets)?.scale(scale);
                acc(&mut grads[logits.0], d);
            }
            Op::GaussianKernel {
                x,
                y,
                sigma2,
                ladder,
                sq_dists,
            } => {
                let xv = self.value(*x);
                let yv = self.value(*y);
                let (n, m) = sq_dists.shape();
                let d = xv.cols();
                // S = g ∘ dK/dD where K = mean_t exp(-D / (t σ²)).
                let mut s = Matrix::zeros(n, m);
                for i in 0..n {
                    for j in 0..m {
                        let dist = sq_dists.get(i, j);
                        let mut w = 0.0;
                        for &t in ladder {
                            let denom = t * sigma2;
                            w += -(-dist / denom).exp() / denom;
                        }
                        s.set(i, j, g.get(i, j) * w / ladder.len() as f64);
                    }
                }
                // dX_i = Σ_j S_ij · 2 (x_i − y_j); dY_j = Σ_i S_ij · 2 (y_j − x_i).
                let mut dx = Matrix::zeros(n, d);
                let mut dy = Matrix::zeros(m, d);
                for i in 0..n {
                    for j in 0..m {
                        let sij = s.get(i, j);
                        if sij == 0.0 {
                            continue;
                        }
                        for c in 0..d {
                            let diff = xv.get(i, c) - yv.get(j, c);
                            dx.set(i, c, dx.get(i, c) + 2.0 * sij * diff);
                            dy.set(j, c, dy.get(j, c) - 2.0 * sij * diff);
                        }
                    }
                }
                acc(&mut grads[x.0], dx);
                acc(&mut grads[y.0], dy);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn softmax_symmetry_and_overflow_guard() {
        let mut tape = Tape::new();
        let a = tape.input(Matrix::from_rows(&[vec![0.0, 0.0]]).unwrap());
        let s = tape.softmax_rows(a).unwrap();
        assert!(close(tape.value(s).get(0, 0), 0.5, 1e-15));

        let b = tape.input(Matrix::from_rows(&[vec![1000.0, 1000.0, 1000.0]]).unwrap());
        let s = tape.softmax_rows(b).unwrap();
        for j in 0..3 {
            assert!(close(tape.value(s).get(0, j), 1.0 / 3.0, 1e-15));
        }

        let c = tape.input(Matrix::from_rows(&[vec![0.0, 3.0f64.ln()]]).unwrap());
        let s = tape.softmax_rows(c).unwrap();
        assert!(close(tape.value(s).get(0, 0), 0.25, 1e-12));
        assert!(close(tape.value(s).get(0, 1), 0.75, 1e-12));
    }

    #[test]
    fn layer_norm_constant_row_hits_eps_guard() {
        let mut tape = Tape::new();
        let a = tape.input(Matrix::from_rows(&[vec![5.0, 5.0, 5.0, 5.0]]).unwrap());
        let gain = tape.input(Matrix::filled(1, 4, 1.0));
        let bias = tape.input(Matrix::zeros(1, 4));
        let out = tape.layer_norm(a, gain, bias, 1e-5).unwrap();
        for j in 0..4 {
            assert_eq!(tape.value(out).get(0, j), 0.0);
        }
    }

    #[test]
    fn layer_norm_two_entry_row() {
        let mut tape = Tape::new();
        let a = tape.input(Matrix::from_rows(&[vec![1.0, 3.0]]).unwrap());
        let gain = tape.input(Matrix::filled(1, 2, 1.0));
        let bias = tape.input(Matrix::zeros(1, 2));
        let out = tape.layer_norm(a, gain, bias, 1e-12).unwrap();
        assert!(close(tape.value(out).get(0, 0), -1.0, 1e-9));
        assert!(close(tape.value(out).get(0, 1), 1.0, 1e-9));
    }

    #[test]
    fn layer_norm_rejects_single_column() {
        let mut tape = Tape::new();
        let a = tape.input(Matrix::zeros(3, 1));
        let gain = tape.input(Matrix::filled(1, 1, 1.0));
        let bias = tape.input(Matrix::zeros(1, 1));
        assert!(tape.layer_norm(a, gain, bias, 1e-5).is_err());
    }

    #[test]
    fn relu_examples() {
        let mut tape = Tape::new();
        let a = tape.input(Matrix::from_rows(&[vec![-1.0, 2.0]]).unwrap());
        let r = tape.relu(a).unwrap();
        assert_eq!(tape.value(r).row(0), &[0.0, 2.0]);

        let b = tape.input(Matrix::filled(2, 3, -4.0));
        let r = tape.relu(b).unwrap();
        assert_eq!(tape.value(r), &Matrix::zeros(2, 3));
    }

    #[test]
    fn backward_of_sum_is_all_ones() {
        let mut tape = Tape::new();
        let a = tape.param(Matrix::from_rows(&[vec![1.0, -2.0], vec![0.5, 3.0]]).unwrap());
        let loss = tape.sum(a).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(a).unwrap(), &Matrix::filled(2, 2, 1.0));
    }

    #[test]
    fn backward_of_half_squared_norm_is_identity() {
        let mut tape = Tape::new();
        let m = Matrix::from_rows(&[vec![1.0, -2.0], vec![0.5, 3.0]]).unwrap();
        let a = tape.param(m.clone());
        let sq = tape.mul(a, a).unwrap();
        let total = tape.sum(sq).unwrap();
        let loss = tape.scale(total, 0.5).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(a).unwrap(), &m);
    }

    #[test]
    fn backward_rejects_non_scalar_root() {
        let mut tape = Tape::new();
        let a = tape.param(Matrix::zeros(2, 2));
        let b = tape.relu(a).unwrap();
        assert!(matches!(
            tape.backward(b),
            Err(Error::NonScalarLoss { rows: 2, cols: 2 })
        ));
    }

    #[test]
    fn unused_parameter_gets_zero_gradient() {
        let mut tape = Tape::new();
        let a = tape.param(Matrix::filled(2, 2, 1.0));
        let unused = tape.param(Matrix::filled(3, 1, 7.0));
        let loss = tape.sum(a).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(unused).unwrap(), &Matrix::zeros(3, 1));
        assert_eq!(grads.len(), 2);
    }

    #[test]
    fn cross_entropy_uniform_logits() {
        let mut tape = Tape::new();
        let logits = tape.input(Matrix::zeros(3, 7));
        let mut targets = Matrix::zeros(3, 7);
        targets.set(0, 2, 1.0);
        targets.set(1, 0, 1.0);
        targets.set(2, 6, 1.0);
        let ce = tape.cross_entropy_mean(logits, &targets).unwrap();
        assert!(close(tape.scalar(ce), (7.0f64).ln(), 1e-12));
    }

    #[test]
    fn gaussian_kernel_self_diagonal_is_one() {
        let mut tape = Tape::new();
        let x = tape.input(Matrix::from_rows(&[vec![1.0, 2.0], vec![-3.0, 0.5]]).unwrap());
        let k = tape.gaussian_kernel(x, x, 2.5, &[1.0]).unwrap();
        assert_eq!(tape.value(k).get(0, 0), 1.0);
        assert_eq!(tape.value(k).get(1, 1), 1.0);
    }
}
