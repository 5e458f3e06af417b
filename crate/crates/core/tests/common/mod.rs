//! Reference implementations used as test oracles. They are deliberately
//! naive and share no code with the library's solvers.
#![allow(dead_code)]

use cpsc_core::patch::{ImagePlane, PatchSet};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand::rngs::StdRng;

pub fn rng(seed: u64) -> StdRng {
    StdRng::seed_from_u64(seed)
}

pub fn random_matrix(rng: &mut StdRng, rows: usize, cols: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-scale..scale))
}

/// One-sided Jacobi SVD. Returns `(u, sigma, v)` with `m = u diag(sigma) v^T`
/// for `m` with at least as many rows as columns.
pub fn jacobi_svd(m: &DMatrix<f64>) -> (Vec<Vec<f64>>, Vec<f64>, Vec<Vec<f64>>) {
    let (rows, cols) = m.shape();
    assert!(rows >= cols);
    let mut a: Vec<Vec<f64>> = (0..cols).map(|j| (0..rows).map(|i| m[(i, j)]).collect()).collect();
    let mut v: Vec<Vec<f64>> = (0..cols).map(|j| (0..cols).map(|i| f64::from(i == j)).collect()).collect();
    for _ in 0..100 {
        let mut rotated = false;
        for p in 0..cols {
            for q in p + 1..cols {
                let alpha: f64 = a[p].iter().map(|x| x * x).sum();
                let beta: f64 = a[q].iter().map(|x| x * x).sum();
                let gamma: f64 = a[p].iter().zip(&a[q]).map(|(x, y)| x * y).sum();
                if gamma.abs() <= 1e-15 * (alpha * beta).sqrt() || gamma == 0.0 {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let t = if zeta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for i in 0..rows {
                    let (x, y) = (a[p][i], a[q][i]);
                    a[p][i] = c * x - s * y;
                    a[q][i] = s * x + c * y;
                }
                for i in 0..cols {
                    let (x, y) = (v[p][i], v[q][i]);
                    v[p][i] = c * x - s * y;
                    v[q][i] = s * x + c * y;
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let sigma: Vec<f64> = a.iter().map(|col| col.iter().map(|x| x * x).sum::<f64>().sqrt()).collect();
    let u = a
        .iter()
        .zip(&sigma)
        .map(|(col, &s)| col.iter().map(|x| if s > 0.0 { x / s } else { 0.0 }).collect())
        .collect();
    (u, sigma, v)
}

/// Singular value shrinkage computed from [`jacobi_svd`].
pub fn svt_oracle(m: &DMatrix<f64>, tau: f64) -> DMatrix<f64> {
    let transpose = m.nrows() < m.ncols();
    let work = if transpose { m.transpose() } else { m.clone() };
    let (u, sigma, v) = jacobi_svd(&work);
    let mut out = DMatrix::zeros(work.nrows(), work.ncols());
    for k in 0..sigma.len() {
        let s = (sigma[k] - tau).max(0.0);
        for i in 0..work.nrows() {
            for j in 0..work.ncols() {
                out[(i, j)] += s * u[k][i] * v[k][j];
            }
        }
    }
    if transpose {
        out.transpose()
    } else {
        out
    }
}

/// Gaussian elimination with partial pivoting.
pub fn gauss_solve(a: &DMatrix<f64>, b: &[f64]) -> Vec<f64> {
    let n = a.nrows();
    let mut m: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| a[(i, j)]).chain(std::iter::once(b[i])).collect())
        .collect();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&x, &y| m[x][col].abs().total_cmp(&m[y][col].abs()))
            .unwrap();
        m.swap(col, pivot);
        for row in col + 1..n {
            let f = m[row][col] / m[col][col];
            for k in col..=n {
                m[row][k] -= f * m[col][k];
            }
        }
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|k| m[i][k] * x[k]).sum();
        x[i] = (m[i][n] - s) / m[i][i];
    }
    x
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations.
pub fn symmetric_eigenvalues(s: &DMatrix<f64>) -> Vec<f64> {
    let n = s.nrows();
    let mut a: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| s[(i, j)]).collect()).collect();
    for _ in 0..100 {
        let off: f64 = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| a[i][j] * a[i][j]).sum();
        if off < 1e-26 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q] == 0.0 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (x, y) = (a[k][p], a[k][q]);
                    a[k][p] = c * x - s * y;
                    a[k][q] = s * x + c * y;
                }
                for k in 0..n {
                    let (x, y) = (a[p][k], a[q][k]);
                    a[p][k] = c * x - s * y;
                    a[q][k] = s * x + c * y;
                }
            }
        }
    }
    (0..n).map(|i| a[i][i]).collect()
}

/// `sum_{i,j} |a_ij|`.
pub fn l1(m: &DMatrix<f64>) -> f64 {
    m.iter().map(|x| x.abs()).sum()
}

/// Dense `(I + mu sum U^T U) x = y + mu sum U^T e`, solved by elimination.
pub fn dense_aggregate(y: &ImagePlane, layout: &PatchSet, est: &DMatrix<f64>, mu: f64) -> Vec<f64> {
    let n = y.len();
    let w = y.width();
    let side = layout.patch_side;
    let mut a = DMatrix::<f64>::identity(n, n);
    let mut b = y.pixels().to_vec();
    for (k, &(r0, c0)) in layout.origins.iter().enumerate() {
        for dr in 0..side {
            for dc in 0..side {
                let p = (r0 + dr) * w + c0 + dc;
                a[(p, p)] += mu;
                b[p] += mu * est[(dr * side + dc, k)];
            }
        }
    }
    gauss_solve(&a, &b)
}

pub fn stationarity_gradient(x: &ImagePlane, y: &ImagePlane, layout: &PatchSet, est: &DMatrix<f64>, mu: f64) -> f64 {
    let w = y.width();
    let side = layout.patch_side;
    let mut g: Vec<f64> = x.pixels().iter().zip(y.pixels()).map(|(a, b)| 2.0 * (a - b)).collect();
    for (k, &(r0, c0)) in layout.origins.iter().enumerate() {
        for dr in 0..side {
            for dc in 0..side {
                let p = (r0 + dr) * w + c0 + dc;
                g[p] += 2.0 * mu * (x.pixels()[p] - est[(dr * side + dc, k)]);
            }
        }
    }
    g.iter().fold(0.0, |m, v| m.max(v.abs()))
}
