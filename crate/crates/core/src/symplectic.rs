//! Canonical Poisson structure and symplectic checks.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;

/// Default tolerance on `‖VᵀJV − J‖_F` for a basis to count as symplectic.
pub const DEFAULT_SYMPLECTIC_TOL: f64 = 1e-10;

/// The canonical Poisson tensor `J_2N = [[0, I], [-I, 0]]`, applied implicitly.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PoissonStructure {
    half_dim: usize,
}

impl PoissonStructure {
    pub fn new(half_dim: usize) -> Self {
        PoissonStructure { half_dim }
    }

    pub fn for_len(len: usize) -> Result<Self> {
        if len % 2 != 0 {
            return Err(Error::Dimension(format!("phase-space vector has odd length {len}")));
        }
        Ok(PoissonStructure { half_dim: len / 2 })
    }

    pub fn half_dim(&self) -> usize {
        self.half_dim
    }

    pub fn dim(&self) -> usize {
        2 * self.half_dim
    }

    /// `J x`: for `x = [q; p]` returns `[p; -q]`.
    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check(x.len())?;
        let n = self.half_dim;
        let mut out = vec![0.0; 2 * n];
        out[..n].copy_from_slice(&x[n..]);
        for i in 0..n {
            out[n + i] = -x[i];
        }
        Ok(out)
    }

    /// `Jᵀ x`: for `x = [q; p]` returns `[-p; q]`.
    pub fn apply_transpose(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check(x.len())?;
        let n = self.half_dim;
        let mut out = vec![0.0; 2 * n];
        for i in 0..n {
            out[i] = -x[n + i];
        }
        out[n..].copy_from_slice(&x[..n]);
        Ok(out)
    }

    fn check(&self, len: usize) -> Result<()> {
        if len != 2 * self.half_dim {
            return Err(Error::Dimension(format!(
                "expected length {}, got {len}",
                2 * self.half_dim
            )));
        }
        Ok(())
    }
}

/// `J x` for any even-length vector.
pub fn apply_poisson(x: &[f64]) -> Result<Vec<f64>> {
    PoissonStructure::for_len(x.len())?.apply(x)
}

/// A dense phase-space basis with `2N` rows and `2k` columns.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisMatrix {
    entries: DMatrix<f64>,
}

impl BasisMatrix {
    pub fn new(entries: DMatrix<f64>) -> Result<Self> {
        if entries.nrows() % 2 != 0 || entries.ncols() % 2 != 0 {
            return Err(Error::Dimension(format!(
                "basis must have even shape, got {}x{}",
                entries.nrows(),
                entries.ncols()
            )));
        }
        if entries.ncols() > entries.nrows() {
            return Err(Error::Dimension(format!(
                "basis has more columns ({}) than rows ({})",
                entries.ncols(),
                entries.nrows()
            )));
        }
        if entries.iter().any(|v| !v.is_finite()) {
            return Err(Error::Argument("basis has non-finite entries".into()));
        }
        Ok(BasisMatrix { entries })
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn into_entries(self) -> DMatrix<f64> {
        self.entries
    }

    pub fn half_dim(&self) -> usize {
        self.entries.nrows() / 2
    }

    pub fn half_rank(&self) -> usize {
        self.entries.ncols() / 2
    }
}

/// `‖VᵀJ_2N V − J_2k‖_F`.
pub fn symplectic_defect(v: &DMatrix<f64>) -> Result<f64> {
    if v.nrows() % 2 != 0 || v.ncols() % 2 != 0 {
        return Err(Error::Dimension(format!(
            "symplectic defect needs even shape, got {}x{}",
            v.nrows(),
            v.ncols()
        )));
    }
    let jv = linalg::poisson_apply_columns(v);
    let form = linalg::transpose_mul(v, &jv);
    Ok((form - linalg::poisson_dense(v.ncols() / 2)).norm())
}

/// `‖VᵀV − I‖_F`.
pub fn orthonormality_defect(v: &DMatrix<f64>) -> f64 {
    let g = linalg::gram(v);
    (g - DMatrix::identity(v.ncols(), v.ncols())).norm()
}

/// `V⁺ x = J_2kᵀ Vᵀ J_2N x`, rejecting bases whose defect exceeds `tol`.
pub fn symplectic_inverse_apply(v: &BasisMatrix, x: &DVector<f64>, tol: f64) -> Result<DVector<f64>> {
    let defect = symplectic_defect(v.entries())?;
    if defect > tol {
        return Err(Error::Contract(format!(
            "basis is not symplectic (defect {defect:e} > {tol:e})"
        )));
    }
    symplectic_inverse_apply_unchecked(v.entries(), x)
}

/// `V⁺ x` without the symplecticity check.
pub fn symplectic_inverse_apply_unchecked(v: &DMatrix<f64>, x: &DVector<f64>) -> Result<DVector<f64>> {
    if x.len() != v.nrows() {
        return Err(Error::Dimension(format!(
            "vector length {} does not match basis rows {}",
            x.len(),
            v.nrows()
        )));
    }
    let jx = DVector::from_vec(apply_poisson(x.as_slice())?);
    let vt_jx = v.tr_mul(&jx);
    Ok(linalg::poisson_transpose_apply_vec(&vt_jx))
}
