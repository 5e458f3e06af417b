//! Proximal operators and symmetric matrix balancing.
//!
//! These are the small dense kernels behind the low-rank representation
//! solver (l1 shrinkage, singular value shrinkage, projection onto the
//! nonnegative orthant) and behind the Laplacian normalization (symmetric
//! Sinkhorn balancing).

use nalgebra::{DMatrix, DVector};

use crate::error::{CpscError, Result};

pub const DEFAULT_SINKHORN_TOL: f64 = 1e-6;
pub const DEFAULT_SINKHORN_MAX_ITER: usize = 1000;

/// Elementwise shrinkage `sign(x) * max(|x| - tau, 0)`.
pub fn soft_threshold(m: &DMatrix<f64>, tau: f64) -> Result<DMatrix<f64>> {
    check_tau(tau)?;
    Ok(m.map(|x| shrink(x, tau)))
}

#[inline]
pub(crate) fn shrink(x: f64, tau: f64) -> f64 {
    if x > tau {
        x - tau
    } else if x < -tau {
        x + tau
    } else {
        0.0
    }
}

/// Result of a singular value shrinkage: the shrunk matrix and the
/// nuclear norm of that matrix (sum of the surviving singular values).
#[derive(Clone, Debug)]
pub struct Shrunk {
    pub matrix: DMatrix<f64>,
    pub nuclear_norm: f64,
    pub rank: usize,
}

/// Proximal step of the nuclear norm: `U * shrink(Sigma, tau) * V^T`.
pub fn singular_value_threshold(m: &DMatrix<f64>, tau: f64) -> Result<DMatrix<f64>> {
    svt(m, tau).map(|s| s.matrix)
}

/// Same as [`singular_value_threshold`] but also reports the nuclear norm
/// and rank of the result, which the LRR solver logs every iteration.
pub fn svt(m: &DMatrix<f64>, tau: f64) -> Result<Shrunk> {
    check_tau(tau)?;
    if m.iter().any(|x| !x.is_finite()) {
        return Err(CpscError::arg("singular value threshold on non-finite matrix"));
    }
    let (rows, cols) = m.shape();
    if rows == 0 || cols == 0 {
        return Ok(Shrunk {
            matrix: m.clone(),
            nuclear_norm: 0.0,
            rank: 0,
        });
    }
    let svd = m.clone().svd(true, true);
    let u = svd.u.as_ref().expect("svd computed with u");
    let v_t = svd.v_t.as_ref().expect("svd computed with v_t");

    let mut out = DMatrix::zeros(rows, cols);
    let mut nuclear_norm = 0.0;
    let mut rank = 0;
    for (i, &s) in svd.singular_values.iter().enumerate() {
        let kept = s - tau;
        if kept <= 0.0 {
            continue;
        }
        nuclear_norm += kept;
        rank += 1;
        // rank-1 accumulation: out += kept * u_i v_i^T
        out.ger(kept, &u.column(i), &v_t.row(i).transpose(), 1.0);
    }
    Ok(Shrunk {
        matrix: out,
        nuclear_norm,
        rank,
    })
}

/// Elementwise `max(x, 0)`.
pub fn project_nonneg(m: &DMatrix<f64>) -> DMatrix<f64> {
    m.map(|x| x.max(0.0))
}

/// Output of [`sinkhorn_balance`].
#[derive(Clone, Debug)]
pub struct Balanced {
    /// Doubly stochastic `K = C^{-1/2} W C^{-1/2}`.
    pub kernel: DMatrix<f64>,
    /// Diagonal of `C`.
    pub scaling: DVector<f64>,
    pub iterations: usize,
    /// Largest `|row sum - 1|` of `kernel`.
    pub deviation: f64,
}

/// Symmetric Sinkhorn–Knopp balancing.
///
/// Iterates `x <- x / sqrt(x .* (W x))` starting from the all-ones vector
/// until every row sum of `diag(x) W diag(x)` is within `tol` of one.
/// The returned scaling is `C = diag(x)^{-2}`.
pub fn sinkhorn_balance(w: &DMatrix<f64>, tol: f64, max_iter: usize) -> Result<Balanced> {
    let n = w.nrows();
    if w.ncols() != n {
        return Err(CpscError::arg(format!(
            "sinkhorn_balance needs a square matrix, got {}x{}",
            n,
            w.ncols()
        )));
    }
    if !(tol > 0.0) {
        return Err(CpscError::arg("sinkhorn tolerance must be positive"));
    }
    let scale = w.amax();
    for j in 0..n {
        for i in 0..n {
            let x = w[(i, j)];
            if !x.is_finite() || x < 0.0 {
                return Err(CpscError::arg(format!(
                    "weight ({i}, {j}) = {x} is not a finite nonnegative value"
                )));
            }
            if (x - w[(j, i)]).abs() > 1e-12 * scale.max(1.0) {
                return Err(CpscError::arg(format!(
                    "weight matrix is not symmetric at ({i}, {j})"
                )));
            }
        }
    }
    for i in 0..n {
        if !w.column(i).iter().any(|&x| x > 0.0) {
            return Err(CpscError::DegenerateRow { row: i });
        }
    }

    let mut x = DVector::from_element(n, 1.0);
    let mut deviation = f64::INFINITY;
    for iter in 0..=max_iter {
        let wx = w * &x;
        deviation = x
            .iter()
            .zip(wx.iter())
            .map(|(a, b)| (a * b - 1.0).abs())
            .fold(0.0, f64::max);
        if deviation <= tol {
            let mut kernel = DMatrix::zeros(n, n);
            for j in 0..n {
                for i in 0..=j {
                    let k = x[i] * w[(i, j)] * x[j];
                    kernel[(i, j)] = k;
                    kernel[(j, i)] = k;
                }
            }
            let scaling = x.map(|v| 1.0 / (v * v));
            return Ok(Balanced {
                kernel,
                scaling,
                iterations: iter,
                deviation,
            });
        }
        if iter == max_iter {
            break;
        }
        for (xi, &s) in x.iter_mut().zip(wx.iter()) {
            *xi = (*xi / s).sqrt();
        }
    }
    Err(CpscError::Convergence {
        stage: "sinkhorn balancing",
        iterations: max_iter,
        residual: deviation,
    })
}

fn check_tau(tau: f64) -> Result<()> {
    if tau >= 0.0 && tau.is_finite() {
        Ok(())
    } else {
        Err(CpscError::arg(format!("threshold must be a finite nonnegative value, got {tau}")))
    }
}
