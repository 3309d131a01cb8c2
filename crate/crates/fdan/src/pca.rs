//! Deterministic linear projection to the top principal directions, used to
//! export 2-D views of learned activations.

use crate::matrix::Matrix;
use crate::{Error, Result};

/// Centers the columns of `features` and projects onto the top-`k` principal
/// directions. Each direction's largest-magnitude loading is made positive so
/// the output is deterministic up to nothing at all.
pub fn pca_project(features: &Matrix, k: usize) -> Result<Matrix> {
    let (n, d) = features.shape();
    if n < k {
        return Err(Error::InvalidParameter(format!(
            "projection needs at least k={k} samples, got {n}"
        )));
    }
    if k == 0 || k > d {
        return Err(Error::InvalidParameter(format!(
            "projection dimension k={k} out of range for width {d}"
        )));
    }

    // Column-centered data and its covariance (population normalization).
    let mut centered = features.clone();
    for j in 0..d {
        let mean = (0..n).map(|i| features.get(i, j)).sum::<f64>() / n as f64;
        for i in 0..n {
            centered.set(i, j, features.get(i, j) - mean);
        }
    }
    let cov = centered
        .transpose()
        .matmul(&centered)?
        .scale(1.0 / n as f64);

    let (eigenvalues, eigenvectors) = symmetric_eigen(&cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| {
        eigenvalues[b]
            .partial_cmp(&eigenvalues[a])
            .expect("finite eigenvalues")
            .then(a.cmp(&b))
    });

    let mut directions = Matrix::zeros(d, k);
    for (out_col, &src_col) in order.iter().take(k).enumerate() {
        // Sign convention: the largest-magnitude loading is positive.
        let mut best = 0usize;
        let mut best_abs = 0.0;
        for i in 0..d {
            let a = eigenvectors.get(i, src_col).abs();
            if a > best_abs {
                best_abs = a;
                best = i;
            }
        }
        let sign = if eigenvectors.get(best, src_col) < 0.0 {
            -1.0
        } else {
            1.0
        };
        for i in 0..d {
            directions.set(i, out_col, sign * eigenvectors.get(i, src_col));
        }
    }
    centered.matmul(&directions)
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix. Returns
/// (eigenvalues, eigenvector columns); deterministic sweep order.
pub fn symmetric_eigen(a: &Matrix) -> (Vec<f64>, Matrix) {
    let n = a.rows();
    debug_assert_eq!(n, a.cols());
    let mut m = a.clone();
    let mut v = Matrix::identity(n);
    let scale = a.max_abs().max(1.0);

    for _sweep in 0..100 {
        let mut off = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                off += m.get(p, q).abs();
            }
        }
        if off <= 1e-13 * scale {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m.get(p, q);
                if apq.abs() <= 1e-300 {
                    continue;
                }
                let app = m.get(p, p);
                let aqq = m.get(q, q);
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;

                for i in 0..n {
                    let mip = m.get(i, p);
                    let miq = m.get(i, q);
                    m.set(i, p, c * mip - s * miq);
                    m.set(i, q, s * mip + c * miq);
                }
                for i in 0..n {
                    let mpi = m.get(p, i);
                    let mqi = m.get(q, i);
                    m.set(p, i, c * mpi - s * mqi);
                    m.set(q, i, s * mpi + c * mqi);
                }
                for i in 0..n {
                    let vip = v.get(i, p);
                    let viq = v.get(i, q);
                    v.set(i, p, c * vip - s * viq);
                    v.set(i, q, s * vip + c * viq);
                }
            }
        }
    }
    let eigenvalues = (0..n).map(|i| m.get(i, i)).collect();
    (eigenvalues, v)
}
