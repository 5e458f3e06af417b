//! Locality-constrained coding and the graph-coupled coefficient update.
//!
//! Every patch code `s_i` minimizes the block quadratic
//!
//! ```text
//! mu ||D s_i - p_i||^2 + rho L_ii ||s_i||^2 + 2 rho s_i^T sum_{j != i} L_ij s_j
//!     + lambda ||phi_i .* s_i||^2 (+ eta ||s_i||_1)
//! ```
//!
//! with the other codes held fixed. Without the l1 term the block system is
//! `(mu D^T D + diag(w_i)) s_i = mu D^T p_i - rho sum_{j != i} L_ij s_j`
//! with `w_i = rho L_ii + lambda phi_i^2 > 0`. Since `D` is `r x k` with
//! `r < k`, the solve goes through the Woodbury identity and only factors an
//! `r x r` matrix per patch.
//!
//! After each block solve the code is moved onto the shift-invariance
//! hyperplane `1^T s_i = 1` along `A_i^{-1} 1` (the minimal change in the
//! metric of the block system), which makes the block update the exact
//! constrained minimizer.

use nalgebra::{Cholesky, DMatrix, DVector, DVectorView, Dyn};
use rayon::prelude::*;

use crate::dictionary::Dictionary;
use crate::error::{CpscError, Result};
use crate::graph::{graph_regularizer, GraphModel};
use crate::patch::PatchSet;

/// Sums below this magnitude are not rescaled onto `1^T s = 1`.
pub const NORMALIZATION_FLOOR: f64 = 1e-6;

const SINGULAR_JITTER: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct CodeParams {
    pub mu: f64,
    pub rho: f64,
    pub lambda: f64,
    pub delta: f64,
    /// Weight of the optional l1 term; zero gives pure quadratic blocks.
    pub l1_weight: f64,
    pub sweeps: usize,
}

impl Default for CodeParams {
    fn default() -> Self {
        CodeParams {
            mu: 1.2,
            rho: 0.5,
            lambda: 0.3,
            delta: 80.0,
            l1_weight: 0.0,
            sweeps: 3,
        }
    }
}

impl CodeParams {
    fn validate(&self) -> Result<()> {
        let ok = self.mu > 0.0
            && self.lambda > 0.0
            && self.rho >= 0.0
            && self.delta > 0.0
            && self.l1_weight >= 0.0
            && self.sweeps >= 1
            && [self.mu, self.rho, self.lambda, self.delta, self.l1_weight]
                .iter()
                .all(|v| v.is_finite());
        if ok {
            Ok(())
        } else {
            Err(CpscError::arg(format!("invalid coding parameters {self:?}")))
        }
    }
}

/// Sparse codes of all patches plus their locality adaptors.
#[derive(Clone, Debug)]
pub struct CodeSet {
    /// `k x M`, column `i` is the code of patch `i`.
    pub codes: DMatrix<f64>,
    /// `k x M` locality adaptors, every entry `>= 1`.
    pub adaptors: DMatrix<f64>,
    /// Nonzero pattern of the codes before the shift-invariance step. This
    /// is the atom usage the dictionary update works on.
    pub support: DMatrix<bool>,
    /// Graph node index of every patch, if it is a node.
    pub membership: Vec<Option<usize>>,
    /// Patches whose code sum was too small to normalize.
    pub unnormalized: Vec<bool>,
}

impl CodeSet {
    /// All-zero codes with unit adaptors.
    pub fn zeros(atoms: usize, patches: usize) -> Self {
        CodeSet {
            codes: DMatrix::zeros(atoms, patches),
            adaptors: DMatrix::from_element(atoms, patches, 1.0),
            support: DMatrix::from_element(atoms, patches, false),
            membership: vec![None; patches],
            unnormalized: vec![false; patches],
        }
    }

    pub fn atoms(&self) -> usize {
        self.codes.nrows()
    }

    pub fn len(&self) -> usize {
        self.codes.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.ncols() == 0
    }

    pub fn unnormalized_count(&self) -> usize {
        self.unnormalized.iter().filter(|&&u| u).count()
    }
}

/// Locality adaptor `phi_j = exp((dist(f, d_j) - min_l dist(f, d_l)) / delta)`.
pub fn locality_adaptor(f: DVectorView<'_, f64>, d: &Dictionary, delta: f64) -> Result<DVector<f64>> {
    if !(delta > 0.0) {
        return Err(CpscError::arg(format!("locality decay must be positive, got {delta}")));
    }
    if f.len() != d.dim() {
        return Err(CpscError::arg(format!(
            "feature of length {} against {}-dimensional atoms",
            f.len(),
            d.dim()
        )));
    }
    Ok(adaptor_unchecked(f, d.atoms(), delta))
}

/// Adaptors of every column of `patches`, as a `k x M` matrix.
pub fn locality_adaptors(patches: &DMatrix<f64>, d: &Dictionary, delta: f64) -> Result<DMatrix<f64>> {
    if !(delta > 0.0) {
        return Err(CpscError::arg(format!("locality decay must be positive, got {delta}")));
    }
    if patches.nrows() != d.dim() {
        return Err(CpscError::arg("patch dimension does not match the atoms"));
    }
    let cols: Vec<DVector<f64>> = (0..patches.ncols())
        .into_par_iter()
        .map(|i| adaptor_unchecked(patches.column(i), d.atoms(), delta))
        .collect();
    let mut out = DMatrix::zeros(d.len(), patches.ncols());
    for (i, a) in cols.iter().enumerate() {
        out.set_column(i, a);
    }
    Ok(out)
}

fn adaptor_unchecked(f: DVectorView<'_, f64>, atoms: &DMatrix<f64>, delta: f64) -> DVector<f64> {
    let dist = DVector::from_iterator(
        atoms.ncols(),
        atoms.column_iter().map(|a| (f - a).norm()),
    );
    let nearest = dist.min();
    dist.map(|x| ((x - nearest) / delta).exp())
}

/// Output of [`lc_code`].
#[derive(Clone, Debug)]
pub struct LcCode {
    pub code: DVector<f64>,
    pub adaptor: DVector<f64>,
    pub objective: f64,
    /// The normal equations were singular and a `1e-8 I` jitter was added.
    pub jittered: bool,
}

/// Locality-constrained code: argmin `||f - D e||^2 + gamma ||phi .* e||^2`
/// subject to `1^T e = 1`, from the constrained normal equations.
pub fn lc_code(f: DVectorView<'_, f64>, d: &Dictionary, gamma: f64, delta: f64) -> Result<LcCode> {
    if !(gamma >= 0.0) || !gamma.is_finite() {
        return Err(CpscError::arg(format!("locality weight must be nonnegative, got {gamma}")));
    }
    let adaptor = locality_adaptor(f, d, delta)?;
    let atoms = d.atoms();
    let k = atoms.ncols();
    let mut normal = atoms.tr_mul(atoms);
    for j in 0..k {
        normal[(j, j)] += gamma * adaptor[j] * adaptor[j];
    }
    let (chol, jittered) = match well_conditioned_cholesky(&normal) {
        Some(c) => (c, false),
        None => {
            let scale = (0..k).map(|j| normal[(j, j)]).fold(0.0, f64::max).max(1.0);
            for j in 0..k {
                normal[(j, j)] += SINGULAR_JITTER * scale;
            }
            let c = normal
                .cholesky()
                .ok_or_else(|| CpscError::arg("locality-constrained system is singular"))?;
            (c, true)
        }
    };
    let rhs = atoms.tr_mul(&f);
    let free = chol.solve(&rhs);
    let ones_dir = chol.solve(&DVector::from_element(k, 1.0));
    let slack = 1.0 - free.sum();
    let code = &free + &ones_dir * (slack / ones_dir.sum());
    let resid = f - atoms * &code;
    let objective = resid.norm_squared() + gamma * code.component_mul(&adaptor).norm_squared();
    Ok(LcCode {
        code,
        adaptor,
        objective,
        jittered,
    })
}

fn well_conditioned_cholesky(m: &DMatrix<f64>) -> Option<Cholesky<f64, Dyn>> {
    let scale = (0..m.nrows()).map(|j| m[(j, j)]).fold(0.0, f64::max);
    let chol = m.clone().cholesky()?;
    let l = chol.l_dirty();
    let min_pivot = (0..m.nrows()).map(|j| l[(j, j)] * l[(j, j)]).fold(f64::INFINITY, f64::min);
    if min_pivot > 1e-12 * scale {
        Some(chol)
    } else {
        None
    }
}

/// The per-patch block system `A = mu D^T D + diag(w)` in Woodbury form.
struct BlockSystem {
    inv_w: DVector<f64>,
    small: Cholesky<f64, Dyn>,
    ones_dir: DVector<f64>,
    ones_quad: f64,
}

impl BlockSystem {
    fn new(atoms: &DMatrix<f64>, mu: f64, w: &DVector<f64>) -> Option<Self> {
        let inv_w = w.map(|x| 1.0 / x);
        let mut scaled = atoms.clone();
        for (mut col, &iw) in scaled.column_iter_mut().zip(inv_w.iter()) {
            col.scale_mut(iw.sqrt());
        }
        let mut m = &scaled * scaled.transpose();
        for i in 0..m.nrows() {
            m[(i, i)] += 1.0 / mu;
        }
        let small = m.cholesky()?;
        let mut sys = BlockSystem {
            inv_w,
            small,
            ones_dir: DVector::zeros(0),
            ones_quad: 0.0,
        };
        let ones_dir = sys.solve(atoms, &DVector::from_element(atoms.ncols(), 1.0));
        sys.ones_quad = ones_dir.sum();
        sys.ones_dir = ones_dir;
        Some(sys)
    }

    /// `A^{-1} b`.
    fn solve(&self, atoms: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
        let scaled = b.component_mul(&self.inv_w);
        let t = self.small.solve(&(atoms * &scaled));
        scaled - atoms.tr_mul(&t).component_mul(&self.inv_w)
    }

    /// Moves `s` onto `1^T s = 1` along `A^{-1} 1`. Returns false when the
    /// sum is below [`NORMALIZATION_FLOOR`] and `s` was left alone.
    fn normalize(&self, s: &mut DVector<f64>) -> bool {
        let sum = s.sum();
        if sum.abs() <= NORMALIZATION_FLOOR {
            return false;
        }
        s.axpy((1.0 - sum) / self.ones_quad, &self.ones_dir, 1.0);
        true
    }
}

/// Result of one code stage.
#[derive(Clone, Debug)]
pub struct CodeUpdate {
    pub codes: CodeSet,
    /// Coding objective after every sweep.
    pub sweep_objectives: Vec<f64>,
    /// Frobenius norm of the change from the previous codes.
    pub delta: f64,
}

/// Terms of the coding objective.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct CodingObjective {
    pub fidelity: f64,
    pub graph: f64,
    pub locality: f64,
    pub sparsity: f64,
}

impl CodingObjective {
    pub fn total(&self) -> f64 {
        self.fidelity + self.graph + self.locality + self.sparsity
    }
}

/// Evaluates the coding objective of `codes` (with its stored adaptors)
/// against the centered patch vectors.
pub fn coding_objective(
    d: &Dictionary,
    patches: &DMatrix<f64>,
    graph: Option<&GraphModel>,
    params: &CodeParams,
    codes: &CodeSet,
) -> Result<CodingObjective> {
    if codes.codes.nrows() != d.len() || codes.codes.ncols() != patches.ncols() {
        return Err(CpscError::arg("code matrix does not match dictionary and patches"));
    }
    let resid = d.atoms() * &codes.codes - patches;
    let fidelity = params.mu * resid.norm_squared();
    let locality = params.lambda * codes.codes.component_mul(&codes.adaptors).norm_squared();
    let sparsity = params.l1_weight * codes.codes.iter().map(|v| v.abs()).sum::<f64>();
    let graph = match graph {
        Some(g) if params.rho > 0.0 => params.rho * graph_regularizer(&g.node_codes(&codes.codes), &g.laplacian)?,
        _ => 0.0,
    };
    Ok(CodingObjective {
        fidelity,
        graph,
        locality,
        sparsity,
    })
}

/// One code stage: block-coordinate sweeps over all patches with the
/// dictionary fixed.
///
/// Patches that are not graph nodes have no coupling, so their block
/// minimizer is computed once. Graph nodes are swept `params.sweeps`
/// times in node order, starting from `prev`.
pub fn update_codes(
    d: &Dictionary,
    patches: &PatchSet,
    graph: Option<&GraphModel>,
    params: &CodeParams,
    prev: &CodeSet,
) -> Result<CodeUpdate> {
    params.validate()?;
    let atoms = d.atoms();
    let (k, m) = (d.len(), patches.len());
    if patches.dim() != d.dim() {
        return Err(CpscError::arg(format!(
            "patches of dimension {} against {}-dimensional atoms",
            patches.dim(),
            d.dim()
        )));
    }
    if prev.codes.shape() != (k, m) {
        return Err(CpscError::arg("previous codes do not match dictionary and patches"));
    }
    let coupled = graph.filter(|_| params.rho > 0.0);
    let membership = match graph {
        Some(g) => g.membership(m)?,
        None => vec![None; m],
    };

    let adaptors = locality_adaptors(&patches.vectors, d, params.delta)?;
    let rhs = atoms.tr_mul(&patches.vectors) * params.mu;
    let gram = (params.l1_weight > 0.0).then(|| atoms.tr_mul(atoms) * params.mu);

    let block_weights = |i: usize, diag_coupling: f64| -> DVector<f64> {
        adaptors
            .column(i)
            .map(|phi| diag_coupling + params.lambda * phi * phi)
    };
    let solve_block = |i: usize,
                       sys: &BlockSystem,
                       b: &DVector<f64>,
                       w: &DVector<f64>,
                       warm: Option<DVector<f64>>|
     -> Result<(DVector<f64>, DVector<bool>, bool)> {
        let mut s = match &gram {
            None => sys.solve(atoms, b),
            Some(g) => feature_sign(g, w, b, params.l1_weight, warm),
        };
        if s.iter().any(|v| !v.is_finite()) {
            return Err(CpscError::Numerical { patch: i });
        }
        let support_mask = s.map(|v| v != 0.0);
        let normalized = sys.normalize(&mut s);
        if s.iter().any(|v| !v.is_finite()) {
            return Err(CpscError::Numerical { patch: i });
        }
        Ok((s, support_mask, normalized))
    };

    let mut codes = prev.codes.clone();
    let mut support = DMatrix::from_element(k, m, false);
    let mut unnormalized = vec![false; m];

    // Uncoupled patches.
    let free: Vec<usize> = (0..m)
        .filter(|&i| coupled.is_none() || membership[i].is_none())
        .collect();
    let solved: Vec<(usize, DVector<f64>, DVector<bool>, bool)> = free
        .par_iter()
        .map(|&i| {
            let w = block_weights(i, 0.0);
            let sys = BlockSystem::new(atoms, params.mu, &w).ok_or(CpscError::Numerical { patch: i })?;
            let b = rhs.column(i).into_owned();
            let warm = warm_start(prev, i);
            let (s, mask, normalized) = solve_block(i, &sys, &b, &w, warm)?;
            Ok((i, s, mask, normalized))
        })
        .collect::<Result<_>>()?;
    for (i, s, mask, normalized) in solved {
        codes.set_column(i, &s);
        support.set_column(i, &mask);
        unnormalized[i] = !normalized;
    }

    let mut sweep_objectives = Vec::with_capacity(params.sweeps);
    match coupled {
        None => {
            let snapshot = snapshot(&codes, &adaptors, &support, &membership, &unnormalized);
            let obj = coding_objective(d, &patches.vectors, None, params, &snapshot)?.total();
            sweep_objectives.extend(std::iter::repeat(obj).take(params.sweeps));
        }
        Some(g) => {
            let n = g.node_ids.len();
            let lap = &g.laplacian;
            let neighbours: Vec<Vec<(usize, f64)>> = (0..n)
                .map(|a| {
                    (0..n)
                        .filter(|&b| b != a && lap[(a, b)] != 0.0)
                        .map(|b| (g.node_ids[b], lap[(a, b)]))
                        .collect()
                })
                .collect();
            let systems: Vec<(BlockSystem, DVector<f64>)> = g
                .node_ids
                .par_iter()
                .enumerate()
                .map(|(a, &i)| {
                    let w = block_weights(i, params.rho * lap[(a, a)]);
                    let sys = BlockSystem::new(atoms, params.mu, &w).ok_or(CpscError::Numerical { patch: i })?;
                    Ok((sys, w))
                })
                .collect::<Result<_>>()?;
            for _ in 0..params.sweeps {
                for (a, &i) in g.node_ids.iter().enumerate() {
                    let mut b = rhs.column(i).into_owned();
                    for &(j, l) in &neighbours[a] {
                        b.axpy(-params.rho * l, &codes.column(j), 1.0);
                    }
                    let (sys, w) = &systems[a];
                    let warm = Some(support_restricted(&codes, &support, i));
                    let (s, mask, normalized) = solve_block(i, sys, &b, w, warm)?;
                    codes.set_column(i, &s);
                    support.set_column(i, &mask);
                    unnormalized[i] = !normalized;
                }
                let snapshot = snapshot(&codes, &adaptors, &support, &membership, &unnormalized);
                sweep_objectives.push(coding_objective(d, &patches.vectors, Some(g), params, &snapshot)?.total());
            }
        }
    }

    let delta = (&codes - &prev.codes).norm();
    Ok(CodeUpdate {
        codes: CodeSet {
            codes,
            adaptors,
            support,
            membership,
            unnormalized,
        },
        sweep_objectives,
        delta,
    })
}

fn snapshot(
    codes: &DMatrix<f64>,
    adaptors: &DMatrix<f64>,
    support: &DMatrix<bool>,
    membership: &[Option<usize>],
    unnormalized: &[bool],
) -> CodeSet {
    CodeSet {
        codes: codes.clone(),
        adaptors: adaptors.clone(),
        support: support.clone(),
        membership: membership.to_vec(),
        unnormalized: unnormalized.to_vec(),
    }
}

fn warm_start(prev: &CodeSet, i: usize) -> Option<DVector<f64>> {
    let s = support_restricted(&prev.codes, &prev.support, i);
    s.iter().any(|&v| v != 0.0).then_some(s)
}

fn support_restricted(codes: &DMatrix<f64>, support: &DMatrix<bool>, i: usize) -> DVector<f64> {
    DVector::from_iterator(
        codes.nrows(),
        codes
            .column(i)
            .iter()
            .zip(support.column(i).iter())
            .map(|(&v, &on)| if on { v } else { 0.0 }),
    )
}

/// Feature-sign search for
/// `min_x x^T (G + diag(w)) x - 2 b^T x + eta ||x||_1`.
///
/// `gram` is `mu D^T D`. The search keeps an active set with a fixed sign
/// pattern, solves the reduced unconstrained quadratic, and line-searches
/// toward it over the points where coefficients cross zero.
pub(crate) fn feature_sign(
    gram: &DMatrix<f64>,
    w: &DVector<f64>,
    b: &DVector<f64>,
    eta: f64,
    warm: Option<DVector<f64>>,
) -> DVector<f64> {
    let k = b.len();
    let a_mul = |x: &DVector<f64>| -> DVector<f64> {
        let mut out = x.component_mul(w);
        for (j, &v) in x.iter().enumerate() {
            if v != 0.0 {
                out.axpy(v, &gram.column(j), 1.0);
            }
        }
        out
    };
    let objective = |x: &DVector<f64>| -> f64 {
        let ax = a_mul(x);
        x.dot(&ax) - 2.0 * b.dot(x) + eta * x.iter().map(|v| v.abs()).sum::<f64>()
    };
    let tol = 1e-9 * (1.0 + eta + b.amax());

    let mut x = warm.unwrap_or_else(|| DVector::zeros(k));
    let max_outer = 10 * k;
    for _ in 0..max_outer {
        // gradient of the smooth part
        let grad = (a_mul(&x) - b) * 2.0;

        // nonzero coefficients must satisfy grad_j + eta sign(x_j) = 0
        let active_ok = x
            .iter()
            .zip(grad.iter())
            .all(|(&xj, &gj)| xj == 0.0 || (gj + eta * xj.signum()).abs() <= tol);

        let mut theta = x.map(f64::signum);
        for j in 0..k {
            if x[j] == 0.0 {
                theta[j] = 0.0;
            }
        }
        if active_ok {
            // activate the zero coefficient with the largest violation
            let candidate = (0..k)
                .filter(|&j| x[j] == 0.0)
                .max_by(|&p, &q| grad[p].abs().total_cmp(&grad[q].abs()));
            match candidate {
                Some(j) if grad[j].abs() > eta + tol => theta[j] = -grad[j].signum(),
                _ => return x,
            }
        }

        let active: Vec<usize> = (0..k).filter(|&j| theta[j] != 0.0).collect();
        let na = active.len();
        let mut sub = DMatrix::zeros(na, na);
        for (p, &jp) in active.iter().enumerate() {
            for (q, &jq) in active.iter().enumerate() {
                sub[(p, q)] = gram[(jp, jq)];
            }
            sub[(p, p)] += w[jp];
        }
        let rhs = DVector::from_iterator(na, active.iter().map(|&j| b[j] - 0.5 * eta * theta[j]));
        let Some(chol) = sub.cholesky() else {
            log::warn!("feature-sign: active set system is not positive definite");
            return x;
        };
        let target = chol.solve(&rhs);

        // discrete line search from the current point to the target
        let current = DVector::from_iterator(na, active.iter().map(|&j| x[j]));
        let mut breakpoints: Vec<(f64, Option<usize>)> = vec![(1.0, None)];
        for p in 0..na {
            let (c, t) = (current[p], target[p]);
            if c != 0.0 && c.signum() != t.signum() {
                breakpoints.push((c / (c - t), Some(p)));
            }
        }
        let mut best = (objective(&x), x.clone());
        for (t, crossing) in breakpoints {
            let mut trial = x.clone();
            for (p, &j) in active.iter().enumerate() {
                trial[j] = current[p] + t * (target[p] - current[p]);
            }
            if let Some(p) = crossing {
                trial[active[p]] = 0.0;
            }
            let value = objective(&trial);
            if value < best.0 {
                best = (value, trial);
            }
        }
        if best.1 == x {
            // no progress possible along this direction
            return x;
        }
        x = best.1;
    }
    log::warn!("feature-sign: iteration cap reached");
    x
}
