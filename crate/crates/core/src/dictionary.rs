//! Overcomplete DCT dictionaries and the K-SVD atom update.

use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::coder::CodeSet;
use crate::error::{CpscError, Result};
use crate::matrix_io;

/// Column-normalized basis `D` of shape `r x k`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dictionary {
    atoms: DMatrix<f64>,
}

impl Dictionary {
    /// Builds a dictionary from raw atoms, rescaling every column to unit norm.
    pub fn from_atoms(mut atoms: DMatrix<f64>) -> Result<Self> {
        if atoms.nrows() == 0 || atoms.ncols() == 0 {
            return Err(CpscError::arg("dictionary must have at least one atom"));
        }
        if atoms.iter().any(|v| !v.is_finite()) {
            return Err(CpscError::arg("dictionary has non-finite entries"));
        }
        for (j, mut col) in atoms.column_iter_mut().enumerate() {
            let norm = col.norm();
            if norm == 0.0 {
                return Err(CpscError::arg(format!("atom {j} is zero")));
            }
            // leave unit atoms bit-identical so saved dictionaries reload exactly
            if (norm - 1.0).abs() > 1e-12 {
                col /= norm;
            }
        }
        Ok(Dictionary { atoms })
    }

    pub fn atoms(&self) -> &DMatrix<f64> {
        &self.atoms
    }

    /// Patch dimension `r`.
    pub fn dim(&self) -> usize {
        self.atoms.nrows()
    }

    /// Number of atoms `k`.
    pub fn len(&self) -> usize {
        self.atoms.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.ncols() == 0
    }

    /// Writes the `r x k` atom matrix as plain text.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        matrix_io::write_matrix(path, &self.atoms)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_atoms(matrix_io::read_matrix(path)?)
    }
}

fn exact_sqrt(n: usize) -> Option<usize> {
    let s = (n as f64).sqrt().round() as usize;
    (s * s == n).then_some(s)
}

/// Separable overcomplete DCT dictionary.
///
/// The 1-D factor samples `sqrt(k)` cosine frequencies
/// `cos(pi * n * f / sqrt(k))` over `sqrt(r)` points; every non-DC factor is
/// mean-removed and all factors are unit-normalized. Atoms are outer
/// products of two factors, so the only atom with a nonzero mean is the
/// leading DC atom.
pub fn init_dct_dictionary(r: usize, k: usize) -> Result<Dictionary> {
    let side = exact_sqrt(r).filter(|&s| s > 0);
    let freqs = exact_sqrt(k).filter(|&s| s > 0);
    let (Some(side), Some(freqs)) = (side, freqs) else {
        return Err(CpscError::arg(format!(
            "DCT dictionary needs square patch dimension and atom count, got r={r}, k={k}"
        )));
    };
    let mut factor = DMatrix::zeros(side, freqs);
    for f in 0..freqs {
        let mut col = DVector::from_fn(side, |n, _| {
            (std::f64::consts::PI * n as f64 * f as f64 / freqs as f64).cos()
        });
        if f > 0 {
            let mean = col.mean();
            col.add_scalar_mut(-mean);
        }
        let norm = col.norm();
        if norm > 0.0 {
            col /= norm;
        }
        factor.set_column(f, &col);
    }
    let mut atoms = DMatrix::zeros(r, k);
    for fr in 0..freqs {
        for fc in 0..freqs {
            let j = fr * freqs + fc;
            for dr in 0..side {
                for dc in 0..side {
                    atoms[(dr * side + dc, j)] = factor[(dr, fr)] * factor[(dc, fc)];
                }
            }
        }
    }
    // Factors that vanish on a short support (e.g. the Nyquist cosine on two
    // points after mean removal) still normalize fine; a truly zero atom is
    // a configuration error.
    Dictionary::from_atoms(atoms)
}

/// Outcome of a K-SVD sweep.
#[derive(Clone, Debug)]
pub struct KsvdSweep {
    pub dictionary: Dictionary,
    /// Atoms no patch used, replaced by the worst-reconstructed patches.
    pub replaced: Vec<usize>,
    pub fidelity_before: f64,
    pub fidelity_after: f64,
}

/// `sum_i ||D s_i - p_i||^2` (without the `mu` weight).
pub fn reconstruction_error(d: &Dictionary, codes: &DMatrix<f64>, patches: &DMatrix<f64>) -> f64 {
    (d.atoms() * codes - patches).norm_squared()
}

/// One K-SVD sweep over all atoms.
///
/// For atom `j`, the patches in its support are refit by the best rank-1
/// approximation of the residual that excludes atom `j`; the atom becomes
/// the leading left singular vector and the coefficients on the support
/// become `sigma * v`. `codes.codes` is updated in place. Atoms with an
/// empty support are replaced by the (normalized) patch with the largest
/// current reconstruction error.
pub fn ksvd_update(d: &Dictionary, codes: &mut CodeSet, patches: &DMatrix<f64>) -> Result<KsvdSweep> {
    let (r, k) = (d.dim(), d.len());
    let m = patches.ncols();
    if patches.nrows() != r || codes.codes.shape() != (k, m) || codes.support.shape() != (k, m) {
        return Err(CpscError::arg("K-SVD inputs have inconsistent shapes"));
    }
    let mut atoms = d.atoms().clone();
    let s = &mut codes.codes;
    let mut residual = patches - &atoms * &*s;
    let fidelity_before = residual.norm_squared();
    let mut replaced = Vec::new();
    let mut taken = vec![false; m];

    for j in 0..k {
        let support: Vec<usize> = (0..m).filter(|&i| codes.support[(j, i)] && s[(j, i)] != 0.0).collect();
        if support.is_empty() {
            let worst = (0..m)
                .filter(|&i| !taken[i])
                .map(|i| (i, residual.column(i).norm_squared()))
                .filter(|&(i, _)| patches.column(i).norm() > 0.0)
                .max_by(|a, b| a.1.total_cmp(&b.1));
            if let Some((i, _)) = worst {
                taken[i] = true;
                let p = patches.column(i);
                let fresh = p / p.norm();
                // coefficients of an unused atom are zero except possibly
                // off-support leftovers, which must follow the atom change
                let old = atoms.column(j).into_owned();
                for q in 0..m {
                    let c = s[(j, q)];
                    if c != 0.0 {
                        residual.column_mut(q).axpy(c, &(&old - &fresh), 1.0);
                    }
                }
                atoms.set_column(j, &fresh);
                replaced.push(j);
            }
            continue;
        }

        let old_atom = atoms.column(j).into_owned();
        let mut err = DMatrix::zeros(r, support.len());
        for (c, &i) in support.iter().enumerate() {
            let mut col = err.column_mut(c);
            col.copy_from(&residual.column(i));
            col.axpy(s[(j, i)], &old_atom, 1.0);
        }
        let Some((u, sigma, v)) = leading_singular_triplet(&err, &old_atom) else {
            continue;
        };
        // leftover coefficients off the support keep multiplying this atom
        let shift = &old_atom - &u;
        for i in 0..m {
            let c = s[(j, i)];
            if c != 0.0 && !codes.support[(j, i)] {
                residual.column_mut(i).axpy(c, &shift, 1.0);
            }
        }
        for (c, &i) in support.iter().enumerate() {
            let coef = sigma * v[c];
            s[(j, i)] = coef;
            let mut col = residual.column_mut(i);
            col.copy_from(&err.column(c));
            col.axpy(-coef, &u, 1.0);
        }
        atoms.set_column(j, &u);
    }

    let fidelity_after = residual.norm_squared();
    Ok(KsvdSweep {
        dictionary: Dictionary::from_atoms(atoms)?,
        replaced,
        fidelity_before,
        fidelity_after,
    })
}

/// Leading singular triplet of `e`, with the sign of `u` chosen to agree
/// with `reference`. `None` when `e` is zero.
fn leading_singular_triplet(e: &DMatrix<f64>, reference: &DVector<f64>) -> Option<(DVector<f64>, f64, DVector<f64>)> {
    let mut u = if e.ncols() == 1 {
        let col = e.column(0).into_owned();
        let n = col.norm();
        if n == 0.0 {
            return None;
        }
        col / n
    } else {
        let gram = e * e.transpose();
        let eig = SymmetricEigen::new(gram);
        let top = eig.eigenvalues.imax();
        if eig.eigenvalues[top] <= 0.0 {
            return None;
        }
        eig.eigenvectors.column(top).normalize()
    };
    if u.dot(reference) < 0.0 {
        u.neg_mut();
    }
    let proj = e.tr_mul(&u);
    let sigma = proj.norm();
    if sigma == 0.0 {
        return None;
    }
    Some((u, sigma, proj / sigma))
}
