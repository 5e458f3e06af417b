//! Adaptive patch graph: a nonnegative low-rank representation of the node
//! patches, thresholded into symmetric weights, balanced into a normalized
//! Laplacian.

use log::{debug, warn};
use nalgebra::DMatrix;

use crate::error::{CpscError, Result};
use crate::prox::{self, sinkhorn_balance};

/// Settings of the linearized ADMM solver for
/// `min ||Z||_* + beta ||Z||_1 + alpha ||E||_1  s.t.  Y = A Z + E, Z >= 0`.
#[derive(Clone, Debug, PartialEq)]
pub struct LrrParams {
    pub alpha: f64,
    pub beta: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub initial_penalty: f64,
    pub penalty_growth: f64,
    pub max_penalty: f64,
    /// The penalty grows only while the scaled change of the iterates is
    /// below this value.
    pub growth_tol: f64,
}

impl Default for LrrParams {
    fn default() -> Self {
        LrrParams {
            alpha: 10.0,
            beta: 0.2,
            tol: 1e-4,
            max_iter: 3000,
            initial_penalty: 0.1,
            penalty_growth: 1.1,
            max_penalty: 1e10,
            growth_tol: 0.1,
        }
    }
}

#[derive(Clone, Debug)]
pub struct LrrSolution {
    /// `n x m` nonnegative coefficients.
    pub z_star: DMatrix<f64>,
    /// `d x n` sparse residual.
    pub e: DMatrix<f64>,
    pub iterations: usize,
    /// `||Y - A Z* - E||_F / ||Y||_F`.
    pub final_residual: f64,
    /// `||Z||_* + beta ||Z||_1 + alpha ||E||_1` after every iteration.
    pub objective_history: Vec<f64>,
}

/// Low-rank representation of the columns of `y` over the columns of `a`.
///
/// The composite penalty on `Z` is split with an auxiliary `W = Z`: the
/// nuclear norm acts on `Z` (linearized step, singular value shrinkage),
/// while the l1 norm and the nonnegativity act on `W` (shrink then clip).
/// The returned coefficients are `W`, so they are exactly nonnegative.
pub fn solve_lrr(y: &DMatrix<f64>, a: &DMatrix<f64>, params: &LrrParams) -> Result<LrrSolution> {
    let LrrParams {
        alpha,
        beta,
        tol,
        max_iter,
        initial_penalty,
        penalty_growth,
        max_penalty,
        growth_tol,
    } = *params;
    if !(alpha > 0.0 && beta > 0.0 && tol > 0.0 && growth_tol > 0.0 && initial_penalty > 0.0 && penalty_growth >= 1.0) {
        return Err(CpscError::arg(format!("invalid LRR parameters {params:?}")));
    }
    if y.nrows() != a.nrows() {
        return Err(CpscError::arg(format!(
            "LRR data has {} rows but the dictionary has {}",
            y.nrows(),
            a.nrows()
        )));
    }
    if y.iter().chain(a.iter()).any(|v| !v.is_finite()) {
        return Err(CpscError::arg("LRR inputs must be finite"));
    }
    if a.ncols() == 0 || a.iter().all(|&v| v == 0.0) {
        return Err(CpscError::arg("LRR dictionary is zero"));
    }
    let (d, n, m) = (y.nrows(), y.ncols(), a.ncols());
    let y_norm = y.norm();
    if y_norm == 0.0 {
        return Ok(LrrSolution {
            z_star: DMatrix::zeros(m, n),
            e: DMatrix::zeros(d, n),
            iterations: 0,
            final_residual: 0.0,
            objective_history: Vec::new(),
        });
    }

    let a_spec = a.singular_values().max();
    let eta = a_spec * a_spec + 1.0;

    let mut z = DMatrix::zeros(m, n);
    let mut w = DMatrix::zeros(m, n);
    let mut e = DMatrix::zeros(d, n);
    let mut lam1 = DMatrix::zeros(d, n);
    let mut lam2 = DMatrix::zeros(m, n);
    let mut pen = initial_penalty;
    let mut history = Vec::new();
    let mut residual = f64::INFINITY;

    for iter in 1..=max_iter {
        // Z: linearized step on the smooth part, then nuclear prox.
        let mut r1 = y - a * &z - &e;
        r1 += &lam1 * (1.0 / pen);
        let mut grad = -a.tr_mul(&r1);
        grad += &z - &w;
        grad += &lam2 * (1.0 / pen);
        let mut target = z.clone();
        target += &grad * (-1.0 / eta);
        let shrunk = prox::svt(&target, 1.0 / (eta * pen))?;
        let dz = (&shrunk.matrix - &z).norm();
        z = shrunk.matrix;

        // W: l1 prox restricted to the nonnegative orthant.
        let shift = beta / pen;
        let w_next = z.zip_map(&lam2, |zv, lv| (zv + lv / pen - shift).max(0.0));
        let dw = (&w_next - &w).norm();
        w = w_next;

        // E: l1 prox.
        let az = a * &z;
        let mut e_target = y - &az;
        e_target += &lam1 * (1.0 / pen);
        let e_next = prox::soft_threshold(&e_target, alpha / pen)?;
        let de = (&e_next - &e).norm();
        e = e_next;

        let c1 = y - &az - &e;
        let c2 = &z - &w;
        lam1 += &c1 * pen;
        lam2 += &c2 * pen;
        // the penalty only grows once the primal iterates have settled
        let movement = pen * (eta.sqrt() * dz).max(dw).max(de) / y_norm;
        if movement < growth_tol {
            pen = (pen * penalty_growth).min(max_penalty);
        }

        let objective = shrunk.nuclear_norm + beta * z.abs().sum() + alpha * e.abs().sum();
        if let Some(&last) = history.last() {
            if objective > last {
                debug!("lrr iteration {iter}: objective rose {last:.6e} -> {objective:.6e}");
            }
        }
        history.push(objective);

        residual = (y - a * &w - &e).norm() / y_norm;
        let split = c2.norm() / w.norm().max(1.0);
        if residual < tol && split < tol {
            debug!("lrr converged after {iter} iterations, residual {residual:.3e}");
            return Ok(LrrSolution {
                z_star: w,
                e,
                iterations: iter,
                final_residual: residual,
                objective_history: history,
            });
        }
    }
    Err(CpscError::Convergence {
        stage: "low-rank representation",
        iterations: max_iter,
        residual,
    })
}

/// `T = sigma * sqrt(2 ln(l^2))` for an `l x l` region.
pub fn universal_threshold(sigma: f64, region_side: usize) -> f64 {
    let l2 = (region_side * region_side) as f64;
    sigma * (2.0 * l2.ln()).sqrt()
}

/// Symmetric weights from an LRR solution.
#[derive(Clone, Debug)]
pub struct Weights {
    pub matrix: DMatrix<f64>,
    /// The intensity-domain threshold `T`.
    pub threshold: f64,
    /// The threshold actually applied: `(T / 255) * max |W|`.
    pub effective_threshold: f64,
}

/// `W = (Z* + Z*^T) / 2` with the diagonal removed; entries below the
/// rescaled universal threshold are zeroed.
pub fn build_weights(sol: &LrrSolution, sigma: f64, region_side: usize) -> Result<Weights> {
    let z = &sol.z_star;
    if z.nrows() != z.ncols() {
        return Err(CpscError::arg("weights need a square coefficient matrix"));
    }
    if !(sigma >= 0.0) || region_side < 2 {
        return Err(CpscError::arg(format!(
            "weights need sigma >= 0 and region side >= 2, got {sigma} and {region_side}"
        )));
    }
    let mut w = (z + z.transpose()) * 0.5;
    w.fill_diagonal(0.0);
    let threshold = universal_threshold(sigma, region_side);
    let effective_threshold = threshold / 255.0 * w.amax();
    if effective_threshold > 0.0 {
        w.apply(|v| {
            if *v < effective_threshold {
                *v = 0.0
            }
        });
    }
    Ok(Weights {
        matrix: w,
        threshold,
        effective_threshold,
    })
}

/// `I - K` with `K` the symmetric Sinkhorn balancing of `w`. Nodes with no
/// edge get a unit self-weight first, so their Laplacian row is zero.
pub fn normalized_laplacian(w: &DMatrix<f64>, tol: f64, max_iter: usize) -> Result<(DMatrix<f64>, usize)> {
    let n = w.nrows();
    let mut w = w.clone();
    if w.ncols() == n {
        for i in 0..n {
            if !w.column(i).iter().any(|&v| v > 0.0) {
                w[(i, i)] = 1.0;
            }
        }
    }
    let balanced = sinkhorn_balance(&w, tol, max_iter)?;
    Ok((DMatrix::identity(n, n) - balanced.kernel, balanced.iterations))
}

/// `Tr(S L S^T)`.
pub fn graph_regularizer(s: &DMatrix<f64>, laplacian: &DMatrix<f64>) -> Result<f64> {
    let n = s.ncols();
    if laplacian.shape() != (n, n) {
        return Err(CpscError::arg(format!(
            "{} codes against a {}x{} Laplacian",
            n,
            laplacian.nrows(),
            laplacian.ncols()
        )));
    }
    Ok((s * laplacian).dot(s))
}

/// Patch graph over a subset of the patches.
#[derive(Clone, Debug)]
pub struct GraphModel {
    /// Patch indices of the nodes, ascending.
    pub node_ids: Vec<usize>,
    pub weights: DMatrix<f64>,
    pub laplacian: DMatrix<f64>,
    pub threshold_used: f64,
    pub lrr_iterations: usize,
    pub lrr_residual: f64,
    pub sinkhorn_iterations: usize,
}

impl GraphModel {
    /// Node position of each of `patch_count` patches.
    pub fn membership(&self, patch_count: usize) -> Result<Vec<Option<usize>>> {
        let mut out = vec![None; patch_count];
        for (a, &i) in self.node_ids.iter().enumerate() {
            match out.get_mut(i) {
                Some(slot @ None) => *slot = Some(a),
                Some(Some(_)) => return Err(CpscError::arg(format!("patch {i} is listed twice as a node"))),
                None => {
                    return Err(CpscError::arg(format!(
                        "graph node {i} is outside the {patch_count} patches"
                    )))
                }
            }
        }
        Ok(out)
    }

    /// Columns of `codes` belonging to graph nodes, in node order.
    pub fn node_codes(&self, codes: &DMatrix<f64>) -> DMatrix<f64> {
        codes.select_columns(&self.node_ids)
    }

    pub fn len(&self) -> usize {
        self.node_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.node_ids.is_empty()
    }
}

/// Patches on a stride-`g` sub-grid of a `rows x cols` patch grid, with `g`
/// raised from `stride` until at most `cap` nodes remain. Returns the
/// row-major patch indices and the stride used.
pub fn select_nodes(grid: (usize, usize), stride: usize, cap: usize) -> Result<(Vec<usize>, usize)> {
    let (rows, cols) = grid;
    if stride == 0 || cap == 0 {
        return Err(CpscError::arg("graph stride and node cap must be positive"));
    }
    let mut g = stride;
    loop {
        let count = rows.div_ceil(g) * cols.div_ceil(g);
        if count <= cap {
            break;
        }
        g += 1;
    }
    let ids = (0..rows)
        .step_by(g)
        .flat_map(|r| (0..cols).step_by(g).map(move |c| r * cols + c))
        .collect();
    Ok((ids, g))
}

#[derive(Clone, Debug, PartialEq)]
pub struct GraphParams {
    pub lrr: LrrParams,
    pub region_side: usize,
    pub sinkhorn_tol: f64,
    pub sinkhorn_max_iter: usize,
}

impl Default for GraphParams {
    fn default() -> Self {
        GraphParams {
            lrr: LrrParams::default(),
            region_side: 8,
            sinkhorn_tol: prox::DEFAULT_SINKHORN_TOL,
            sinkhorn_max_iter: 20_000,
        }
    }
}

/// Builds the graph over the given columns of `vectors`.
///
/// Node patches are normalized to unit length and represented over
/// themselves. Every node also gets a self-weight equal to the smallest
/// retained edge scale, which guarantees the thresholded weights can be
/// balanced (a path graph alone cannot be made doubly stochastic).
pub fn build_graph(vectors: &DMatrix<f64>, node_ids: Vec<usize>, sigma: f64, params: &GraphParams) -> Result<GraphModel> {
    if node_ids.iter().any(|&i| i >= vectors.ncols()) {
        return Err(CpscError::arg("graph node index out of range"));
    }
    let mut y = vectors.select_columns(&node_ids);
    for mut col in y.column_iter_mut() {
        let norm = col.norm();
        if norm > 0.0 {
            col /= norm;
        }
    }
    let n = node_ids.len();
    let (weights, threshold, lrr_iterations, lrr_residual) = if y.iter().all(|&v| v == 0.0) {
        warn!("all graph node patches are flat; using an edgeless graph");
        (DMatrix::zeros(n, n), universal_threshold(sigma, params.region_side), 0, 0.0)
    } else {
        let sol = solve_lrr(&y, &y, &params.lrr).map_err(|e| e.context("graph construction"))?;
        let w = build_weights(&sol, sigma, params.region_side)?;
        (w.matrix, w.threshold, sol.iterations, sol.final_residual)
    };

    let mut balanced_input = weights.clone();
    let self_weight = (threshold / 255.0).max(0.01) * weights.amax();
    if self_weight > 0.0 {
        for i in 0..n {
            balanced_input[(i, i)] = self_weight;
        }
    }
    let (laplacian, sinkhorn_iterations) =
        normalized_laplacian(&balanced_input, params.sinkhorn_tol, params.sinkhorn_max_iter)
            .map_err(|e| e.context("graph construction"))?;
    Ok(GraphModel {
        node_ids,
        weights,
        laplacian,
        threshold_used: threshold,
        lrr_iterations,
        lrr_residual,
        sinkhorn_iterations,
    })
}
