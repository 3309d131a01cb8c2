//! Kernel functions, per-class sample weights, and the class-local
//! discrepancy estimator with a plain unweighted baseline.
//!
//! The class-local discrepancy between two embedded batches is the average,
//! over classes present in both batches, of the squared RKHS distance between
//! the per-class weighted mean embeddings. With the kernel trick each class
//! term expands to `w_vᵀ K_vv w_v + w_aᵀ K_aa w_a − 2 w_vᵀ K_va w_a`.
//!
//! All estimators here are pure functions of their inputs with fixed
//! summation order, safe for concurrent invocation.

use crate::matrix::Matrix;
use crate::tape::{NodeId, Tape};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum KernelFamily {
    Gaussian,
    Linear,
}

/// Base bandwidth for the Gaussian family, in squared-distance units.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Bandwidth {
    /// Median of pairwise squared distances over the pooled batch, recomputed
    /// per invocation and treated as a constant during differentiation.
    Median,
    Fixed(f64),
}

/// Kernel family, base bandwidth, and multiplier ladder. Ladder entries scale
/// the base bandwidth; the per-entry kernels are combined by their mean.
#[derive(Clone, Debug, PartialEq)]
pub struct KernelSpec {
    pub family: KernelFamily,
    pub bandwidth: Bandwidth,
    pub ladder: Vec<f64>,
}

impl Default for KernelSpec {
    fn default() -> Self {
        KernelSpec {
            family: KernelFamily::Gaussian,
            bandwidth: Bandwidth::Median,
            ladder: vec![0.25, 0.5, 1.0, 2.0, 4.0],
        }
    }
}

impl KernelSpec {
    pub fn linear() -> Self {
        KernelSpec {
            family: KernelFamily::Linear,
            bandwidth: Bandwidth::Fixed(1.0),
            ladder: vec![1.0],
        }
    }

    pub fn gaussian_fixed(sigma2: f64, ladder: Vec<f64>) -> Self {
        KernelSpec {
            family: KernelFamily::Gaussian,
            bandwidth: Bandwidth::Fixed(sigma2),
            ladder,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.ladder.is_empty() || self.ladder.iter().any(|&t| t <= 0.0) {
            return Err(Error::InvalidParameter(
                "kernel ladder must be nonempty with positive multipliers".into(),
            ));
        }
        if let Bandwidth::Fixed(v) = self.bandwidth {
            if v <= 0.0 {
                return Err(Error::InvalidParameter(format!(
                    "kernel bandwidth must be positive, got {v}"
                )));
            }
        }
        Ok(())
    }

    /// Resolves the bandwidth against concrete data. The result is a plain
    /// number: downstream gradients never flow through this resolution.
    pub fn resolve(&self, x: &Matrix, y: &Matrix) -> Result<ResolvedKernel> {
        self.validate()?;
        let sigma2 = match (self.family, self.bandwidth) {
            (KernelFamily::Linear, _) => 1.0,
            (KernelFamily::Gaussian, Bandwidth::Fixed(v)) => v,
            (KernelFamily::Gaussian, Bandwidth::Median) => median_heuristic_bandwidth(x, y)?,
        };
        if sigma2 <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "resolved bandwidth must be positive, got {sigma2}"
            )));
        }
        Ok(ResolvedKernel {
            family: self.family,
            sigma2,
            ladder: self.ladder.clone(),
        })
    }
}

/// A kernel spec whose bandwidth has been pinned to a number.
#[derive(Clone, Debug)]
pub struct ResolvedKernel {
    pub family: KernelFamily,
    pub sigma2: f64,
    pub ladder: Vec<f64>,
}

impl ResolvedKernel {
    /// Records the kernel matrix between the rows of `x` and the rows of `y`
    /// on the tape; differentiable w.r.t. both inputs.
    pub fn matrix(&self, tape: &mut Tape, x: NodeId, y: NodeId) -> Result<NodeId> {
        match self.family {
            KernelFamily::Linear => {
                let yt = tape.transpose(y)?;
                tape.matmul(x, yt)
            }
            KernelFamily::Gaussian => tape.gaussian_kernel(x, y, self.sigma2, &self.ladder),
        }
    }
}

/// Gaussian kernel matrix as a plain value (no tape), sharing the resolution
/// rules of the differentiable path.
pub fn gaussian_kernel_matrix(x: &Matrix, y: &Matrix, spec: &KernelSpec) -> Result<Matrix> {
    let resolved = spec.resolve(x, y)?;
    let mut tape = Tape::new();
    let xn = tape.input(x.clone());
    let yn = tape.input(y.clone());
    let k = resolved.matrix(&mut tape, xn, yn)?;
    Ok(tape.value(k).clone())
}

/// Median of squared Euclidean distances over all unordered pairs of distinct
/// rows of the pooled set `x ∪ y`. Falls back to the mean of nonzero squared
/// distances when the median is 0, and to 1 when every distance is 0.
pub fn median_heuristic_bandwidth(x: &Matrix, y: &Matrix) -> Result<f64> {
    if x.cols() != y.cols() {
        return Err(Error::ShapeMismatch {
            op: "median_heuristic_bandwidth",
            lhs: x.shape_string(),
            rhs: y.shape_string(),
        });
    }
    let pooled = Matrix::vstack(&[x, y])?;
    let n = pooled.rows();
    if n < 2 {
        return Err(Error::InvalidParameter(
            "median heuristic needs at least two pooled rows".into(),
        ));
    }
    let mut dists = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            dists.push(pooled.row_sq_dist(i, &pooled, j));
        }
    }
    dists.sort_by(|a, b| a.partial_cmp(b).expect("finite distances"));
    let mid = dists.len() / 2;
    let median = if dists.len() % 2 == 1 {
        dists[mid]
    } else {
        (dists[mid - 1] + dists[mid]) / 2.0
    };
    if median > 0.0 {
        return Ok(median);
    }
    let nonzero: Vec<f64> = dists.iter().copied().filter(|&d| d > 0.0).collect();
    if nonzero.is_empty() {
        Ok(1.0)
    } else {
        Ok(nonzero.iter().sum::<f64>() / nonzero.len() as f64)
    }
}

/// Checks that every row of `y` is exactly one-hot (entries 0 or 1, one 1).
pub fn validate_one_hot(y: &Matrix) -> Result<()> {
    for i in 0..y.rows() {
        let mut ones = 0usize;
        for &v in y.row(i) {
            if v == 1.0 {
                ones += 1;
            } else if v != 0.0 {
                return Err(Error::Label {
                    row: i,
                    msg: format!("entry {v} is neither 0 nor 1"),
                });
            }
        }
        if ones != 1 {
            return Err(Error::Label {
                row: i,
                msg: format!("row has {ones} ones, expected exactly 1"),
            });
        }
    }
    Ok(())
}

/// Per-sample per-class weights: `w[n][c] = y[n][c] / Σ_m y[m][c]`.
/// Columns of classes absent from the batch are all zero.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassWeights {
    weights: Matrix,
}

impl ClassWeights {
    pub fn from_one_hot(y: &Matrix) -> Result<Self> {
        validate_one_hot(y)?;
        let (n, c) = y.shape();
        let mut counts = vec![0.0; c];
        for i in 0..n {
            for (j, count) in counts.iter_mut().enumerate() {
                *count += y.get(i, j);
            }
        }
        let mut weights = Matrix::zeros(n, c);
        for (j, &count) in counts.iter().enumerate() {
            if count == 0.0 {
                continue;
            }
            let mut sum = 0.0;
            let mut last = 0;
            for i in 0..n {
                if y.get(i, j) == 1.0 {
                    let w = 1.0 / count;
                    weights.set(i, j, w);
                    sum += w;
                    last = i;
                }
            }
            // 1/count rounds, so k copies of it can sum a few ulps away from
            // one; fold the residual into the last member to keep each
            // present class at exactly unit mass.
            let residual = 1.0 - sum;
            if residual != 0.0 {
                weights.set(last, j, weights.get(last, j) + residual);
            }
        }
        Ok(ClassWeights { weights })
    }

    pub fn matrix(&self) -> &Matrix {
        &self.weights
    }

    pub fn sample_count(&self) -> usize {
        self.weights.rows()
    }

    pub fn class_count(&self) -> usize {
        self.weights.cols()
    }

    pub fn class_present(&self, c: usize) -> bool {
        (0..self.weights.rows()).any(|i| self.weights.get(i, c) > 0.0)
    }

    /// The weight column for class `c`, as an `nx1` matrix.
    pub fn column(&self, c: usize) -> Matrix {
        let n = self.weights.rows();
        let mut out = Matrix::zeros(n, 1);
        for i in 0..n {
            out.set(i, 0, self.weights.get(i, c));
        }
        out
    }
}

/// Convenience alias matching the operation vocabulary.
pub fn class_weights(y: &Matrix) -> Result<ClassWeights> {
    ClassWeights::from_one_hot(y)
}

/// Tape-level class-local discrepancy between `zv` and `za`.
pub struct LmmdTerm {
    pub node: NodeId,
    /// Number of classes present in both batches; 0 means the estimator had
    /// no overlap to average over and the node is a constant zero.
    pub shared_classes: usize,
}

impl LmmdTerm {
    pub fn no_overlap(&self) -> bool {
        self.shared_classes == 0
    }
}

/// Class-local discrepancy estimator on the tape. Averages, over classes
/// present in both batches, the kernelized squared distance between the
/// weighted per-class mean embeddings; differentiable w.r.t. `zv` and `za`.
pub fn lmmd(
    tape: &mut Tape,
    zv: NodeId,
    za: NodeId,
    wv: &ClassWeights,
    wa: &ClassWeights,
    spec: &KernelSpec,
) -> Result<LmmdTerm> {
    if wv.class_count() != wa.class_count() {
        return Err(Error::InvalidParameter(format!(
            "class-count mismatch: {} vs {}",
            wv.class_count(),
            wa.class_count()
        )));
    }
    let (nv, na) = (tape.value(zv).rows(), tape.value(za).rows());
    if wv.sample_count() != nv || wa.sample_count() != na {
        return Err(Error::ShapeMismatch {
            op: "lmmd",
            lhs: format!("{nv}+{na} embedded rows"),
            rhs: format!("{}+{} weight rows", wv.sample_count(), wa.sample_count()),
        });
    }
    let shared: Vec<usize> = (0..wv.class_count())
        .filter(|&c| wv.class_present(c) && wa.class_present(c))
        .collect();
    if shared.is_empty() {
        let zero = tape.input(Matrix::zeros(1, 1));
        return Ok(LmmdTerm {
            node: zero,
            shared_classes: 0,
        });
    }

    let resolved = spec.resolve(tape.value(zv), tape.value(za))?;
    let k_vv = resolved.matrix(tape, zv, zv)?;
    let k_aa = resolved.matrix(tape, za, za)?;
    let k_va = resolved.matrix(tape, zv, za)?;

    let mut total: Option<NodeId> = None;
    for &c in &shared {
        let wv_col = tape.input(wv.column(c));
        let wa_col = tape.input(wa.column(c));
        let wv_row = tape.transpose(wv_col)?;
        let wa_row = tape.transpose(wa_col)?;

        let vv = quadratic_form(tape, wv_row, k_vv, wv_col)?;
        let aa = quadratic_form(tape, wa_row, k_aa, wa_col)?;
        let va = quadratic_form(tape, wv_row, k_va, wa_col)?;

        let same = tape.add(vv, aa)?;
        let cross = tape.scale(va, 2.0)?;
        let term = tape.sub(same, cross)?;
        total = Some(match total {
            Some(t) => tape.add(t, term)?,
            None => term,
        });
    }
    let node = tape.scale(
        total.expect("nonempty shared set"),
        1.0 / shared.len() as f64,
    )?;
    Ok(LmmdTerm {
        node,
        shared_classes: shared.len(),
    })
}

fn quadratic_form(
    tape: &mut Tape,
    left_row: NodeId,
    k: NodeId,
    right_col: NodeId,
) -> Result<NodeId> {
    let lk = tape.matmul(left_row, k)?;
    tape.matmul(lk, right_col)
}

/// Value-level convenience for [`lmmd`]; builds a throwaway tape.
pub fn lmmd_value(
    zv: &Matrix,
    za: &Matrix,
    wv: &ClassWeights,
    wa: &ClassWeights,
    spec: &KernelSpec,
) -> Result<(f64, usize)> {
    let mut tape = Tape::new();
    let zv_node = tape.input(zv.clone());
    let za_node = tape.input(za.clone());
    let term = lmmd(&mut tape, zv_node, za_node, wv, wa, spec)?;
    Ok((tape.scalar(term.node), term.shared_classes))
}

/// Unweighted discrepancy baseline, biased V-statistic form:
/// `mean(K_vv) + mean(K_aa) − 2 mean(K_va)`.
pub fn mmd(tape: &mut Tape, zv: NodeId, za: NodeId, spec: &KernelSpec) -> Result<NodeId> {
    let (nv, na) = (tape.value(zv).rows(), tape.value(za).rows());
    if nv == 0 || na == 0 {
        return Err(Error::InvalidParameter(
            "mmd requires nonempty inputs".into(),
        ));
    }
    let resolved = spec.resolve(tape.value(zv), tape.value(za))?;
    let k_vv = resolved.matrix(tape, zv, zv)?;
    let k_aa = resolved.matrix(tape, za, za)?;
    let k_va = resolved.matrix(tape, zv, za)?;
    let s_vv = tape.sum(k_vv)?;
    let s_aa = tape.sum(k_aa)?;
    let s_va = tape.sum(k_va)?;
    let m_vv = tape.scale(s_vv, 1.0 / (nv * nv) as f64)?;
    let m_aa = tape.scale(s_aa, 1.0 / (na * na) as f64)?;
    let m_va = tape.scale(s_va, -2.0 / (nv * na) as f64)?;
    let partial = tape.add(m_vv, m_aa)?;
    tape.add(partial, m_va)
}

/// Value-level convenience for [`mmd`].
pub fn mmd_value(zv: &Matrix, za: &Matrix, spec: &KernelSpec) -> Result<f64> {
    let mut tape = Tape::new();
    let zv_node = tape.input(zv.clone());
    let za_node = tape.input(za.clone());
    let node = mmd(&mut tape, zv_node, za_node, spec)?;
    Ok(tape.scalar(node))
}
