//! Error metrics, basis-size averages and the basis-change Hamiltonian bound.

use std::time::Duration;

use nalgebra::{DMatrix, DVector};

use crate::dictionary::StateDictionary;
use crate::error::{Error, Result};
use crate::model::AffineHamiltonianModel;
use crate::reduction_db::{basis_change_project, explicit_basis, BasisKind, OnlineBasis};
use crate::dictionary::Dictionary;
use crate::symplectic::symplectic_inverse_apply_unchecked;

/// Number of equispaced points on the segment used to sample `‖∇H‖₂`.
pub const BOUND_SAMPLES: usize = 65;

#[derive(Debug, Clone, Copy, Default)]
pub struct Timings {
    pub setup: Duration,
    pub selection: Duration,
    pub basis: Duration,
    pub stepping: Duration,
    pub projection: Duration,
}

#[derive(Debug, Clone)]
pub struct WindowRecord {
    pub index: usize,
    pub start_step: usize,
    pub indices: Vec<usize>,
    pub basis_size: usize,
    pub hyper_size: usize,
    pub hyper_rows: Vec<usize>,
}

/// Result of one online run.
#[derive(Debug, Clone)]
pub struct RunReport {
    pub mu: Vec<f64>,
    pub times: Vec<f64>,
    /// Reduced state after every step, in the basis of its window; index 0 is the initial value.
    pub reduced_states: Vec<DVector<f64>>,
    pub step_window: Vec<usize>,
    pub windows: Vec<WindowRecord>,
    pub bases: Vec<OnlineBasis>,
    pub timings: Timings,
    pub newton_iterations: usize,
    pub time_weight: f64,
}

impl RunReport {
    pub fn basis_sizes(&self) -> Vec<usize> {
        self.windows.iter().map(|w| w.basis_size).collect()
    }

    pub fn mean_basis_size(&self) -> f64 {
        average_basis_size(&self.basis_sizes()).unwrap_or(0.0)
    }
}

/// `√(Σ‖x_i − x̃_i‖²) / √(Σ‖x_i‖²)` over all steps.
pub fn relative_reduction_error(reference: &DMatrix<f64>, approx: &DMatrix<f64>) -> Result<f64> {
    if reference.shape() != approx.shape() {
        return Err(Error::Dimension(format!(
            "trajectories have shapes {:?} and {:?}",
            reference.shape(),
            approx.shape()
        )));
    }
    let denom = reference.norm();
    if denom == 0.0 {
        return Err(Error::ZeroDenominator("reference trajectory is zero".into()));
    }
    Ok((reference - approx).norm() / denom)
}

/// Reference values for the Hamiltonian error.
#[derive(Debug, Clone, Copy)]
pub enum HamiltonianReference<'a> {
    /// Full-order trajectory, one column per step.
    Trajectory(&'a DMatrix<f64>),
    /// A single value, normally `H(x0(μ))`.
    Constant(f64),
}

/// `|H(x_i) − H(x̃_i)| / |H(x_i)|` per step.
pub fn hamiltonian_error_series(
    model: &AffineHamiltonianModel,
    mu: &[f64],
    reference: HamiltonianReference<'_>,
    approx: &DMatrix<f64>,
) -> Result<Vec<f64>> {
    if let HamiltonianReference::Trajectory(r) = reference {
        if r.shape() != approx.shape() {
            return Err(Error::Dimension(format!(
                "trajectories have shapes {:?} and {:?}",
                r.shape(),
                approx.shape()
            )));
        }
    }
    let mut out = Vec::with_capacity(approx.ncols());
    for i in 0..approx.ncols() {
        let href = match reference {
            HamiltonianReference::Trajectory(r) => model.hamiltonian(&r.column(i).into_owned(), mu)?,
            HamiltonianReference::Constant(h) => h,
        };
        if href == 0.0 {
            return Err(Error::ZeroDenominator(format!("reference Hamiltonian vanishes at step {i}")));
        }
        let h = model.hamiltonian(&approx.column(i).into_owned(), mu)?;
        out.push((href - h).abs() / href.abs());
    }
    Ok(out)
}

/// Mean of the basis sizes over all basis computations.
pub fn average_basis_size(sizes: &[usize]) -> Result<f64> {
    if sizes.is_empty() {
        return Err(Error::Argument("no basis computations logged".into()));
    }
    Ok(sizes.iter().sum::<usize>() as f64 / sizes.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BasisChangeBound {
    pub bound: f64,
    pub actual_jump: f64,
}

/// Hamiltonian jump across a basis change and its mean-value bound
/// `max_s ‖∇H(x(s))‖₂ · ‖(I − V_new V_new⁺) V_old x_old‖₂`, the maximum sampled at
/// [`BOUND_SAMPLES`] points of the segment between the two reconstructions.
pub fn basis_change_bound(
    model: &AffineHamiltonianModel,
    mu: &[f64],
    old: &OnlineBasis,
    new: &OnlineBasis,
    dict: &Dictionary,
    x_old: &DVector<f64>,
) -> Result<BasisChangeBound> {
    let d: &StateDictionary = &dict.state;
    let vo = explicit_basis(old, d);
    let vn = explicit_basis(new, d);
    let a = &vo * x_old;
    let x_new = basis_change_project(old, new, dict, x_old)?;
    let b = &vn * &x_new;
    // V_new V_new⁺ a equals b; recompute it explicitly for the residual
    let proj = match new.kind {
        BasisKind::Csvd => &vn * symplectic_inverse_apply_unchecked(&vn, &a)?,
        BasisKind::Pod => &vn * vn.tr_mul(&a),
    };
    let residual = (&a - proj).norm();
    let mut sup = 0.0f64;
    for s in 0..BOUND_SAMPLES {
        let w = s as f64 / (BOUND_SAMPLES - 1) as f64;
        let x = &a * (1.0 - w) + &b * w;
        sup = sup.max(model.gradient(&x, mu)?.norm());
    }
    let actual_jump = (model.hamiltonian(&a, mu)? - model.hamiltonian(&b, mu)?).abs();
    Ok(BasisChangeBound {
        bound: sup * residual,
        actual_jump,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dictionary::{build_dictionary, OfflineOptions};
    use crate::model::build_wave2d;
    use crate::reduction_db::{db_csvd_basis, SpectralRoute, SizeRule};

    #[test]
    fn reduction_error_examples() {
        let x = DMatrix::from_column_slice(2, 1, &[3.0, 4.0]);
        assert_eq!(relative_reduction_error(&x, &x).unwrap(), 0.0);
        assert_eq!(relative_reduction_error(&x, &DMatrix::zeros(2, 1)).unwrap(), 1.0);
        let approx = DMatrix::from_column_slice(2, 1, &[3.0, 0.0]);
        assert!((relative_reduction_error(&x, &approx).unwrap() - 0.8).abs() < 1e-15);
        assert!(matches!(
            relative_reduction_error(&DMatrix::zeros(2, 1), &x),
            Err(Error::ZeroDenominator(_))
        ));
    }

    #[test]
    fn hamiltonian_series_examples() {
        let m = build_wave2d(4, 3, 10).unwrap();
        let mu = [8.0];
        let x = DMatrix::from_fn(m.dim(), 3, |i, j| ((i + j) as f64).sin());
        let zero = hamiltonian_error_series(&m, &mu, HamiltonianReference::Trajectory(&x), &x).unwrap();
        assert!(zero.iter().all(|&e| e == 0.0));
        let delta = 1e-3;
        let scaled = &x * (1.0 + delta);
        let s = hamiltonian_error_series(&m, &mu, HamiltonianReference::Trajectory(&x), &scaled).unwrap();
        for e in s {
            assert!((e - (2.0 * delta + delta * delta)).abs() <= 1e-12);
        }
    }

    #[test]
    fn average_size_examples() {
        assert_eq!(average_basis_size(&[10]).unwrap(), 10.0);
        assert_eq!(average_basis_size(&[8, 12]).unwrap(), 10.0);
        assert_eq!(average_basis_size(&[6; 4]).unwrap(), 6.0);
        assert!(average_basis_size(&[]).is_err());
    }

    #[test]
    fn bound_examples() {
        let m = build_wave2d(10, 5, 30).unwrap();
        let d = build_dictionary(&m, &[vec![7.0], vec![10.0]], &OfflineOptions::default()).unwrap();
        let old = db_csvd_basis(&d.state, &[1, 5, 9, 13], SizeRule::Energy(1e-12), SpectralRoute::Refined).unwrap();
        let x = DVector::from_fn(old.dim(), |i, _| 0.3 + 0.1 * i as f64);
        let same = basis_change_bound(&m, &[8.0], &old, &old, &d, &x).unwrap();
        assert!(same.bound <= 1e-9 * x.norm() && same.actual_jump <= 1e-9);
        let new = db_csvd_basis(&d.state, &[2, 5, 30, 44], SizeRule::Energy(1e-12), SpectralRoute::Refined).unwrap();
        let b = basis_change_bound(&m, &[8.0], &old, &new, &d, &x).unwrap();
        assert!(b.actual_jump <= b.bound);
        assert!(b.bound > 0.0);
    }
}
