//! Explicit-basis reduction: POD, cSVD via POD of `[X, JX]`, DEIM and the assembled ROMs.
//!
//! These routines form full-dimension bases and serve both as comparison methods
//! and as references for the dictionary-based online phase.

use log::warn;
use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{self, numerical_rank, poisson_apply_columns, poisson_transpose_apply_rows, SortedEigen};
use crate::model::AffineHamiltonianModel;
use crate::reduced::{HyperTerm, ReducedSystem};
use crate::symplectic;

/// Relative tolerance for eigenvalue pairs of `YᵀY`, scaled by the largest eigenvalue.
pub const PAIRING_TOL: f64 = 1e-8;

/// Loose sanity bound on the basis defect accepted by the projection routines.
pub const BASIS_CONTRACT_TOL: f64 = 1e-3;

/// Eigen-decomposition of a snapshot Gram matrix with its numerical rank.
#[derive(Debug, Clone)]
pub struct GramSpectrum {
    pub values: Vec<f64>,
    pub vectors: DMatrix<f64>,
    pub rank: usize,
}

impl GramSpectrum {
    pub fn new(gram: DMatrix<f64>) -> Self {
        let count = gram.nrows();
        let eig = SortedEigen::new(gram);
        let rank = numerical_rank(&eig.values, count);
        GramSpectrum {
            values: eig.values,
            vectors: eig.vectors,
            rank,
        }
    }

    /// `Φ S` restricted to the leading `m` eigenpairs, `S = diag(1/√λ)`.
    pub fn scaled_vectors(&self, m: usize) -> DMatrix<f64> {
        let mut phi = self.vectors.columns(0, m).into_owned();
        for (j, mut col) in phi.column_iter_mut().enumerate() {
            col /= self.values[j].sqrt();
        }
        phi
    }

    /// Clamps a requested size to the numerical rank.
    pub fn usable(&self, requested: usize) -> Result<usize> {
        if requested == 0 {
            return Err(Error::Argument("basis size must be positive".into()));
        }
        if self.rank == 0 {
            return Err(Error::EmptyBasis("snapshot spectrum is numerically zero".into()));
        }
        if requested > self.rank {
            warn!("requested {requested} modes but numerical rank is {}; truncating", self.rank);
        }
        Ok(requested.min(self.rank))
    }
}

#[derive(Debug, Clone)]
pub struct PodResult {
    pub basis: DMatrix<f64>,
    pub values: Vec<f64>,
    pub rank: usize,
}

/// POD by the method of snapshots: `V = X Φ S` from the eigenpairs of `XᵀX`.
pub fn pod(snapshots: &DMatrix<f64>, m: usize) -> Result<PodResult> {
    if m == 0 {
        return Err(Error::Argument("POD rank must be positive".into()));
    }
    let spectrum = GramSpectrum::new(linalg::gram(snapshots));
    pod_from_spectrum(snapshots, &spectrum, m)
}

pub fn pod_from_spectrum(snapshots: &DMatrix<f64>, spectrum: &GramSpectrum, m: usize) -> Result<PodResult> {
    let m = spectrum.usable(m)?;
    let basis = snapshots * spectrum.scaled_vectors(m);
    Ok(PodResult {
        basis,
        values: spectrum.values.clone(),
        rank: m,
    })
}

/// Spectrum of `YᵀY` for `Y = [X, JX]`.
#[derive(Debug, Clone)]
pub struct CsvdSpectrum {
    pub gram: GramSpectrum,
}

impl CsvdSpectrum {
    pub fn from_snapshots(snapshots: &DMatrix<f64>) -> Self {
        let y = extended_snapshots(snapshots);
        CsvdSpectrum {
            gram: GramSpectrum::new(linalg::gram(&y)),
        }
    }

    /// Builds the spectrum from `G = XᵀX` and `G_J = XᵀJX` without touching `X`.
    pub fn from_grams(g: &DMatrix<f64>, gj: &DMatrix<f64>) -> Self {
        CsvdSpectrum {
            gram: GramSpectrum::new(extended_gram(g, gj)),
        }
    }

    /// Number of complete pairs available above the rank cutoff.
    pub fn max_half_rank(&self) -> usize {
        self.gram.rank / 2
    }

    /// Validates pairing of the leading `half_rank` pairs and rejects clusters of four.
    pub fn check_pairs(&self, half_rank: usize) -> Result<()> {
        check_pairing(&self.gram.values, half_rank)
    }

    /// `Φ S` columns of the first vector of each leading pair.
    pub fn odd_scaled_vectors(&self, half_rank: usize) -> DMatrix<f64> {
        let all = self.gram.scaled_vectors(2 * half_rank);
        let odd: Vec<usize> = (0..half_rank).map(|i| 2 * i).collect();
        all.select_columns(&odd)
    }
}

/// `YᵀY = [[G, G_J], [−G_J, G]]`.
pub fn extended_gram(g: &DMatrix<f64>, gj: &DMatrix<f64>) -> DMatrix<f64> {
    let n = g.nrows();
    let mut out = DMatrix::zeros(2 * n, 2 * n);
    out.view_mut((0, 0), (n, n)).copy_from(g);
    out.view_mut((n, n), (n, n)).copy_from(g);
    out.view_mut((0, n), (n, n)).copy_from(gj);
    out.view_mut((n, 0), (n, n)).copy_from(&(-gj));
    linalg::symmetrize(&mut out);
    out
}

/// `[X, JX]`.
pub fn extended_snapshots(x: &DMatrix<f64>) -> DMatrix<f64> {
    let n = x.ncols();
    let mut y = DMatrix::zeros(x.nrows(), 2 * n);
    y.columns_mut(0, n).copy_from(x);
    y.columns_mut(n, n).copy_from(&poisson_apply_columns(x));
    y
}

pub fn check_pairing(values: &[f64], half_rank: usize) -> Result<()> {
    let top = values.first().copied().unwrap_or(0.0);
    let tol = PAIRING_TOL * top;
    for i in 0..half_rank {
        let (a, b) = (values[2 * i], values[2 * i + 1]);
        if (a - b).abs() > tol {
            return Err(Error::DegenerateSpectrum(format!(
                "eigenvalues {} and {} ({a:e}, {b:e}) are not paired",
                2 * i + 1,
                2 * i + 2
            )));
        }
        if i + 1 < half_rank {
            let next = values[2 * i + 2];
            if next > tol && (a - next).abs() <= PAIRING_TOL * a {
                return Err(Error::DegenerateSpectrum(format!(
                    "eigenvalue {a:e} has multiplicity of at least four (pairs {} and {})",
                    i + 1,
                    i + 2
                )));
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct CsvdResult {
    pub basis: DMatrix<f64>,
    pub values: Vec<f64>,
    pub half_rank: usize,
}

/// Symplectic, orthonormal basis of size `two_n` from the POD of `[X, JX]`.
pub fn csvd_via_pod_of_y(snapshots: &DMatrix<f64>, two_n: usize) -> Result<CsvdResult> {
    let spectrum = CsvdSpectrum::from_snapshots(snapshots);
    csvd_from_spectrum(snapshots, &spectrum, two_n)
}

pub fn csvd_from_spectrum(snapshots: &DMatrix<f64>, spectrum: &CsvdSpectrum, two_n: usize) -> Result<CsvdResult> {
    if two_n == 0 || two_n % 2 != 0 {
        return Err(Error::Argument(format!("cSVD basis size {two_n} must be even and positive")));
    }
    let available = spectrum.max_half_rank();
    if available == 0 {
        return Err(Error::EmptyBasis("snapshot matrix is numerically zero".into()));
    }
    let mut k = two_n / 2;
    if k > available {
        warn!("requested {two_n} cSVD vectors but only {} pairs are resolvable; truncating", available);
        k = available;
    }
    spectrum.check_pairs(k)?;
    let coeffs = spectrum.odd_scaled_vectors(k);
    let y = extended_snapshots(snapshots);
    let half = &y * coeffs;
    let basis = symplectic_completion(&half);
    Ok(CsvdResult {
        basis,
        values: spectrum.gram.values.clone(),
        half_rank: k,
    })
}

/// `[W, Jᵀ W]`.
pub fn symplectic_completion(w: &DMatrix<f64>) -> DMatrix<f64> {
    let k = w.ncols();
    let mut v = DMatrix::zeros(w.nrows(), 2 * k);
    v.columns_mut(0, k).copy_from(w);
    v.columns_mut(k, k).copy_from(&poisson_transpose_apply_rows(w));
    v
}

/// Greedy DEIM row selection.
///
/// Equivalent to solving the interpolation system on the rows chosen so far for each
/// new column; the elimination form below updates the residuals in place, which is
/// the same computation organized as Gaussian elimination with row pivoting.
pub fn deim(u: &DMatrix<f64>) -> Result<Vec<usize>> {
    let (rows, m) = u.shape();
    if m > rows {
        return Err(Error::Dimension(format!("DEIM needs at most {rows} columns, got {m}")));
    }
    let mut r = u.clone();
    let mut picked = Vec::with_capacity(m);
    for l in 0..m {
        let col = r.column(l);
        let mut best = 0;
        let mut best_abs = -1.0;
        for (i, v) in col.iter().enumerate() {
            if v.abs() > best_abs {
                best_abs = v.abs();
                best = i;
            }
        }
        let scale = u.column(l).amax();
        if !(best_abs > f64::EPSILON * scale) || scale == 0.0 {
            return Err(Error::Singular(format!(
                "DEIM interpolation system is singular at column {l} (residual {best_abs:e})"
            )));
        }
        picked.push(best);
        let pivot = r[(best, l)];
        for j in (l + 1)..m {
            let factor = r[(best, j)] / pivot;
            if factor != 0.0 {
                for i in 0..rows {
                    r[(i, j)] -= factor * r[(i, l)];
                }
            }
        }
    }
    Ok(picked)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProjectionMode {
    /// Galerkin projection `Vᵀ` of the full right-hand side.
    Orthogonal,
    /// Symplectic projection with `V⁺ = J_2kᵀ Vᵀ J_2N`.
    Symplectic,
}

fn check_basis(v: &DMatrix<f64>, model: &AffineHamiltonianModel, mode: ProjectionMode) -> Result<()> {
    if v.nrows() != model.dim() {
        return Err(Error::Dimension(format!("basis has {} rows, model dimension {}", v.nrows(), model.dim())));
    }
    match mode {
        ProjectionMode::Symplectic => {
            let d = symplectic::symplectic_defect(v)?;
            if d > BASIS_CONTRACT_TOL {
                return Err(Error::Contract(format!("symplectic projection requested but basis defect is {d:e}")));
            }
        }
        ProjectionMode::Orthogonal => {
            let d = symplectic::orthonormality_defect(v);
            if d > BASIS_CONTRACT_TOL {
                return Err(Error::Contract(format!("orthogonal projection requested but basis defect is {d:e}")));
            }
        }
    }
    Ok(())
}

/// Left factor `W` with reduced right-hand side `W ∇H(V y)`.
fn left_factor(v: &DMatrix<f64>, mode: ProjectionMode) -> DMatrix<f64> {
    match mode {
        // J_2k Vᵀ
        ProjectionMode::Symplectic => linalg::poisson_apply_rows(&v.transpose()),
        // Vᵀ J_2N = (J_2Nᵀ V)ᵀ
        ProjectionMode::Orthogonal => poisson_transpose_apply_rows(v).transpose(),
    }
}

fn reduced_initial_value(v: &DMatrix<f64>, x0: &DVector<f64>, mode: ProjectionMode) -> Result<DVector<f64>> {
    match mode {
        ProjectionMode::Symplectic => symplectic::symplectic_inverse_apply_unchecked(v, x0),
        ProjectionMode::Orthogonal => Ok(v.tr_mul(x0)),
    }
}

/// Reduced linear part, forcing and initial value for an explicit basis.
fn assemble_linear_parts(
    v: &DMatrix<f64>,
    model: &AffineHamiltonianModel,
    mu: &[f64],
    mode: ProjectionMode,
) -> Result<(DMatrix<f64>, DMatrix<f64>, Option<DVector<f64>>, DVector<f64>)> {
    check_basis(v, model, mode)?;
    let w = left_factor(v, mode);
    let hv = &model.operator(mu) * v;
    let operator = &w * hv;
    let forcing = model.forcing_vector(mu).map(|b| &w * b);
    let x0 = reduced_initial_value(v, &model.initial_value(mu), mode)?;
    Ok((w, operator, forcing, x0))
}

/// Reduced system `(A_r, c)` and reduced initial value; nonlinear models keep the
/// nonlinearity unapproximated, evaluated on every row it touches.
pub fn assemble_reduced(
    v: &DMatrix<f64>,
    model: &AffineHamiltonianModel,
    mu: &[f64],
    mode: ProjectionMode,
) -> Result<(ReducedSystem, DVector<f64>)> {
    let (w, operator, forcing, x0) = assemble_linear_parts(v, model, mu, mode)?;
    let hyper = match &model.nonlinearity {
        None => None,
        Some(nl) => {
            let rows: Vec<usize> = (0..model.dim()).filter(|&i| nl.reads[i].is_some()).collect();
            Some(hyper_term(v, &w.select_columns(&rows), &rows, model, mu))
        }
    };
    Ok((ReducedSystem::new(operator, forcing, hyper)?, x0))
}

/// Linear-only variant: ignores any nonlinearity.
pub fn assemble_reduced_linear(
    v: &DMatrix<f64>,
    model: &AffineHamiltonianModel,
    mu: &[f64],
    mode: ProjectionMode,
) -> Result<(ReducedSystem, DVector<f64>)> {
    let (_, operator, forcing, x0) = assemble_linear_parts(v, model, mu, mode)?;
    Ok((ReducedSystem::new(operator, forcing, None)?, x0))
}

fn hyper_term(v: &DMatrix<f64>, coupling: &DMatrix<f64>, rows: &[usize], model: &AffineHamiltonianModel, mu: &[f64]) -> HyperTerm {
    let nl = model.nonlinearity.as_ref().expect("hyper term requires a nonlinearity");
    let mut r = DMatrix::zeros(rows.len(), v.ncols());
    let mut active = Vec::with_capacity(rows.len());
    let mut shifts = Vec::with_capacity(rows.len());
    for (j, &row) in rows.iter().enumerate() {
        match nl.reads[row] {
            Some(src) => {
                r.set_row(j, &v.row(src));
                active.push(true);
                shifts.push((nl.shift)(row, mu));
            }
            None => {
                active.push(false);
                shifts.push(0.0);
            }
        }
    }
    HyperTerm {
        coupling: coupling.clone(),
        rows: r,
        shifts,
        active,
        map: nl.map,
        global_rows: rows.to_vec(),
    }
}

/// Interpolated coupling `W U (PᵀU)⁻¹`.
pub fn interpolation_coupling(w_u: &DMatrix<f64>, sampled_u: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let m = sampled_u.nrows();
    if sampled_u.ncols() != m || w_u.ncols() != m {
        return Err(Error::Dimension("interpolation matrix must be square".into()));
    }
    let lu = sampled_u.transpose().lu();
    let diag = lu.u().diagonal().map(f64::abs);
    if m > 0 && (diag.min() == 0.0 || diag.min() <= 1e-14 * diag.max()) {
        return Err(Error::Singular(format!(
            "interpolation matrix PᵀU is singular (pivot ratio {:e})",
            diag.min() / diag.max()
        )));
    }
    let bt = lu.solve(&w_u.transpose()).ok_or_else(|| Error::Singular("interpolation matrix PᵀU".into()))?;
    Ok(bt.transpose())
}

/// Hyper-reduced system with nonlinearity basis `U` and interpolation rows `rows`.
pub fn assemble_sdeim(
    v: &DMatrix<f64>,
    u: &DMatrix<f64>,
    rows: &[usize],
    model: &AffineHamiltonianModel,
    mu: &[f64],
    mode: ProjectionMode,
) -> Result<(ReducedSystem, DVector<f64>)> {
    let (w, operator, forcing, x0) = assemble_linear_parts(v, model, mu, mode)?;
    if model.nonlinearity.is_none() || u.ncols() == 0 {
        return Ok((ReducedSystem::new(operator, forcing, None)?, x0));
    }
    if u.nrows() != model.dim() || rows.len() != u.ncols() {
        return Err(Error::Dimension("nonlinearity basis and index vector do not match".into()));
    }
    let sampled = u.select_rows(rows);
    let coupling = interpolation_coupling(&(&w * u), &sampled)?;
    let hyper = hyper_term(v, &coupling, rows, model, mu);
    Ok((ReducedSystem::new(operator, forcing, Some(hyper))?, x0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::integrators::{integrate, integrate_full_order, NewtonSettings};
    use crate::model::{build_sine_gordon, build_wave2d};
    use crate::symplectic::{orthonormality_defect, symplectic_defect, symplectic_inverse_apply, BasisMatrix};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn pod_of_rank_one() {
        let mut x = DMatrix::zeros(3, 2);
        x[(0, 0)] = 3.0;
        let p = pod(&x, 1).unwrap();
        assert!((p.values[0] - 9.0).abs() < 1e-12);
        assert!((p.basis[(0, 0)].abs() - 1.0).abs() < 1e-14);
        assert_eq!(p.rank, 1);
    }

    #[test]
    fn pod_is_orthonormal() {
        let p = pod(&random_matrix(20, 6, 1), 4).unwrap();
        assert!(orthonormality_defect(&p.basis) < 1e-10);
    }

    #[test]
    fn pod_matches_svd_subspace() {
        let x = random_matrix(30, 8, 2);
        let p = pod(&x, 5).unwrap();
        let svd = x.clone().svd(true, false);
        let mut order: Vec<usize> = (0..8).collect();
        order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
        let u = svd.u.unwrap().select_columns(&order[..5]);
        // cosines of principal angles are the singular values of UᵀV
        // sine of the largest principal angle
        let sin = (&p.basis - &u * (u.transpose() * &p.basis)).norm();
        assert!(sin <= 1e-8);
    }

    #[test]
    fn pod_reconstruction_error_matches_tail_energy() {
        let x = random_matrix(25, 7, 3);
        let p = pod(&x, 4).unwrap();
        let resid = &x - &p.basis * p.basis.transpose() * &x;
        let tail: f64 = p.values[4..].iter().sum();
        assert!((resid.norm() - tail.sqrt()).abs() <= 1e-8 * tail.sqrt());
    }

    #[test]
    fn pod_rejects_zero_rank_and_truncates() {
        assert!(matches!(pod(&random_matrix(5, 3, 4), 0), Err(Error::Argument(_))));
        assert!(matches!(pod(&DMatrix::zeros(5, 3), 1), Err(Error::EmptyBasis(_))));
        let x = random_matrix(6, 2, 5);
        assert_eq!(pod(&x, 5).unwrap().rank, 2);
    }

    #[test]
    fn csvd_of_single_unit_snapshot() {
        let x = DMatrix::from_column_slice(2, 1, &[1.0, 0.0]);
        let c = csvd_via_pod_of_y(&x, 2).unwrap();
        assert_eq!(c.basis.shape(), (2, 2));
        assert!(symplectic_defect(&c.basis).unwrap() <= 1e-12);
    }

    #[test]
    fn csvd_is_symplectic_and_orthonormal() {
        let x = random_matrix(40, 6, 6);
        let c = csvd_via_pod_of_y(&x, 8).unwrap();
        assert!(symplectic_defect(&c.basis).unwrap() <= 1e-10);
        assert!(orthonormality_defect(&c.basis) <= 1e-10);
    }

    #[test]
    fn extended_gram_eigenvalues_are_paired() {
        let x = random_matrix(30, 5, 7);
        let s = CsvdSpectrum::from_snapshots(&x);
        let v = &s.gram.values;
        for i in 0..5 {
            assert!((v[2 * i] - v[2 * i + 1]).abs() / v[0] <= 1e-10);
        }
        let from_grams = CsvdSpectrum::from_grams(&linalg::gram(&x), &linalg::transpose_mul(&x, &poisson_apply_columns(&x)));
        for (a, b) in v.iter().zip(&from_grams.gram.values) {
            assert!((a - b).abs() <= 1e-10 * v[0]);
        }
    }

    #[test]
    fn fourfold_degenerate_spectrum_is_rejected() {
        // [e1, e2] in R^4: both canonical pairs carry the same energy
        let x = DMatrix::from_fn(4, 2, |i, j| if i == j { 1.0 } else { 0.0 });
        assert!(matches!(csvd_via_pod_of_y(&x, 4), Err(Error::DegenerateSpectrum(_))));
    }

    #[test]
    fn symplectic_inverse_recovers_coefficients() {
        let x = random_matrix(8, 3, 8);
        let v = csvd_via_pod_of_y(&x, 4).unwrap().basis;
        let basis = BasisMatrix::new(v.clone()).unwrap();
        let y = DVector::from_vec(vec![0.3, -1.2, 2.0, 0.7]);
        let back = symplectic_inverse_apply(&basis, &(&v * &y), 1e-10).unwrap();
        assert!((back - y).norm() <= 1e-10);
    }

    #[test]
    fn deim_examples() {
        let u = DMatrix::from_column_slice(3, 1, &[0.2, 0.9, 0.5]);
        assert_eq!(deim(&u).unwrap(), vec![1]);
        assert_eq!(deim(&DMatrix::identity(4, 4)).unwrap(), vec![0, 1, 2, 3]);
    }

    #[test]
    fn deim_matches_literal_greedy_solve() {
        let u = random_matrix(30, 5, 9);
        let fast = deim(&u).unwrap();
        let mut rho = vec![u.column(0).iamax()];
        for l in 1..5 {
            let pu = DMatrix::from_fn(l, l, |i, j| u[(rho[i], j)]);
            let rhs = DVector::from_fn(l, |i, _| u[(rho[i], l)]);
            let c = pu.lu().solve(&rhs).unwrap();
            let r = u.column(l) - u.columns(0, l) * c;
            rho.push(r.iamax());
        }
        assert_eq!(fast, rho);
    }

    #[test]
    fn deim_interpolation_is_exact_on_span() {
        let u = random_matrix(30, 5, 10);
        let rho = deim(&u).unwrap();
        let pu = u.select_rows(&rho);
        let proj = &u * pu.clone().try_inverse().unwrap() * pu;
        assert!((proj - &u).norm() <= 1e-12 * u.norm());
        let mut distinct = rho.clone();
        distinct.sort();
        distinct.dedup();
        assert_eq!(distinct.len(), 5);
    }

    #[test]
    fn deim_is_scale_invariant() {
        let u = random_matrix(20, 4, 11);
        let scaled = DMatrix::from_fn(20, 4, |i, j| u[(i, j)] * (1.0 + j as f64 * 3.5));
        assert_eq!(deim(&u).unwrap(), deim(&scaled).unwrap());
    }

    #[test]
    fn deim_reports_singular_column() {
        let mut u = random_matrix(6, 3, 12);
        let c0 = u.column(0).into_owned();
        u.set_column(2, &(c0 * 2.0));
        match deim(&u) {
            Err(Error::Singular(msg)) => assert!(msg.contains("column 2")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn identity_basis_reproduces_full_operator() {
        let m = build_wave2d(4, 3, 10).unwrap();
        let mu = [8.0];
        let v = DMatrix::identity(m.dim(), m.dim());
        let (sys, x0) = assemble_reduced_linear(&v, &m, &mu, ProjectionMode::Symplectic).unwrap();
        let full = crate::linalg::poisson_dense(m.half_dim) * m.dense_operator(&mu);
        assert!(crate::linalg::max_abs_diff(&sys.operator, &full) < 1e-9);
        assert_eq!(x0, m.initial_value(&mu));
    }

    #[test]
    fn reduced_hamiltonian_is_exact_for_quadratic_energy() {
        let m = build_wave2d(20, 4, 40).unwrap();
        let mu = [9.0];
        let traj = integrate_full_order(&m, &mu, &NewtonSettings::default()).unwrap();
        let v = csvd_via_pod_of_y(&traj, 10).unwrap().basis;
        let (_, xr) = assemble_reduced_linear(&v, &m, &mu, ProjectionMode::Symplectic).unwrap();
        let reduced_h = 0.5 * xr.dot(&(v.transpose() * (&m.operator(&mu) * &v) * &xr));
        let full_h = m.hamiltonian(&(&v * &xr), &mu).unwrap();
        assert!((reduced_h - full_h).abs() <= 1e-10 * full_h.abs());
    }

    #[test]
    fn rom_on_trajectory_span_tracks_fom() {
        let m = build_wave2d(200, 10, 300).unwrap();
        let mu = [8.5];
        let traj = integrate_full_order(&m, &mu, &NewtonSettings::default()).unwrap();
        let spec = CsvdSpectrum::from_snapshots(&traj);
        // every resolvable pair; the Gram cutoff at n_s·eps·λ_max limits accuracy to about 1e-6
        let v = csvd_from_spectrum(&traj, &spec, 2 * spec.max_half_rank()).unwrap().basis;
        let (sys, x0) = assemble_reduced_linear(&v, &m, &mu, ProjectionMode::Symplectic).unwrap();
        let grid = m.time_grid(&mu).unwrap();
        let mut st = sys.stepper(grid.dt(), NewtonSettings::default()).unwrap();
        let red = integrate(&mut st, &x0, &grid).unwrap();
        let err = (&v * red - &traj).norm() / traj.norm();
        assert!(err <= 5e-6, "relative error {err:e}");
    }

    #[test]
    fn sdeim_with_zero_nonlinearity_is_linear_rom() {
        let m = build_wave2d(5, 3, 10).unwrap();
        let x = random_matrix(m.dim(), 4, 13);
        let v = csvd_via_pod_of_y(&x, 4).unwrap().basis;
        let u = DMatrix::zeros(m.dim(), 0);
        let (a, _) = assemble_sdeim(&v, &u, &[], &m, &[8.0], ProjectionMode::Symplectic).unwrap();
        let (b, _) = assemble_reduced_linear(&v, &m, &[8.0], ProjectionMode::Symplectic).unwrap();
        assert_eq!(a.operator, b.operator);
        assert!(a.hyper.is_none());
    }

    #[test]
    fn sdeim_is_exact_when_nonlinearity_lies_in_span() {
        // f(x)_i = sin(x_i + shift_i) on the q-rows; with a tiny state the samples are
        // affine-equivalent to a basis spanning every q-row unit vector.
        let m = build_sine_gordon(6, 10).unwrap();
        let mu = [0.8];
        let n = m.half_dim;
        let x = random_matrix(m.dim(), 3, 14);
        let v = csvd_via_pod_of_y(&x, 6).unwrap().basis;
        let u = DMatrix::from_fn(2 * n, n, |i, j| if i == j { 1.0 } else { 0.0 });
        let rows = deim(&u).unwrap();
        let (hyper, _) = assemble_sdeim(&v, &u, &rows, &m, &mu, ProjectionMode::Symplectic).unwrap();
        let (full, _) = assemble_reduced(&v, &m, &mu, ProjectionMode::Symplectic).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        for _ in 0..5 {
            let y = DVector::from_fn(6, |_, _| rng.random_range(-1.0..1.0));
            assert!((hyper.rhs(&y) - full.rhs(&y)).norm() <= 1e-10 * full.rhs(&y).norm());
        }
    }

    #[test]
    fn sdeim_rom_reproduces_rom_when_samples_span_its_nonlinearity() {
        let m = build_sine_gordon(200, 60).unwrap();
        let mu = [0.8];
        let traj = integrate_full_order(&m, &mu, &NewtonSettings::default()).unwrap();
        let v = csvd_via_pod_of_y(&traj, 40).unwrap().basis;
        let (full, x0) = assemble_reduced(&v, &m, &mu, ProjectionMode::Symplectic).unwrap();
        let grid = m.time_grid(&mu).unwrap();
        let mut sb = full.stepper(grid.dt(), NewtonSettings::default()).unwrap();
        let yb = integrate(&mut sb, &x0, &grid).unwrap();
        // the midpoint rule samples the nonlinearity at step midpoints
        let f = DMatrix::from_columns(
            &(1..yb.ncols())
                .map(|j| {
                    let mid = (yb.column(j - 1) + yb.column(j)) * 0.5;
                    m.nonlinearity_values(&(&v * mid), &mu).unwrap()
                })
                .collect::<Vec<_>>(),
        );
        let p = pod(&f, f.ncols()).unwrap();
        let rows = deim(&p.basis).unwrap();
        let (hyper, _) = assemble_sdeim(&v, &p.basis, &rows, &m, &mu, ProjectionMode::Symplectic).unwrap();
        let mut sa = hyper.stepper(grid.dt(), NewtonSettings::default()).unwrap();
        let ya = integrate(&mut sa, &x0, &grid).unwrap();
        let rel = (&ya - &yb).norm() / yb.norm();
        assert!(rel <= 1e-6, "relative deviation {rel:e}");
    }

    #[test]
    fn mode_mismatch_is_a_contract_error() {
        let m = build_wave2d(3, 2, 10).unwrap();
        let v = DMatrix::from_fn(m.dim(), 2, |i, j| if i == j { 1.0 } else { 0.0 });
        assert!(matches!(
            assemble_reduced_linear(&v, &m, &[8.0], ProjectionMode::Symplectic),
            Err(Error::Contract(_))
        ));
        assert!(assemble_reduced_linear(&v, &m, &[8.0], ProjectionMode::Orthogonal).is_ok());
    }
}
