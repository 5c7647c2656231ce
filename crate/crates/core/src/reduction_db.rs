//! Online phase: bases, hyper-reduction and projections assembled from dictionary products.
//!
//! Nothing in here touches an array of length 2N except [`QueryProducts::new`], which
//! runs once per query before the window loop, and the diagnostic [`reconstruct`].

use std::time::{Duration, Instant};

use nalgebra::{Complex, DMatrix, DVector};

use crate::diagnostics::{RunReport, Timings, WindowRecord};
use crate::dictionary::{Dictionary, NonlinearityDictionary, OperatorBlocks, StateDictionary};
use crate::error::{Error, Result};
use crate::instrument;
use crate::integrators::{NewtonSettings, Stepper};
use crate::linalg::{
    self, complex_ad_mul, complex_mul, energy_truncation, numerical_rank, poisson_apply_rows, poisson_apply_vec, poisson_transpose_apply_vec,
    select_submatrix, HermitianEigen, SortedEigen,
};
use crate::model::{AffineHamiltonianModel, InitialValue};
use crate::reduced::{HyperTerm, ReducedSystem};
use crate::reduction_std::{check_pairing, deim, interpolation_coupling};
use crate::selection::{compute_time_weight, select_indices, training_parameters, SelectionConfig, TimeWeight};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BasisKind {
    Pod,
    Csvd,
}

/// How the size of an online basis is chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SizeRule {
    /// Smallest size whose eigenvalue energy exceeds `(1 − ε)` of the total.
    Energy(f64),
    /// Fixed number of columns (`m` for POD, `2k` for cSVD), capped by the rank.
    Fixed(usize),
}

impl SizeRule {
    fn validate(&self) -> Result<()> {
        match *self {
            SizeRule::Energy(eps) if !(eps > 0.0 && eps < 1.0) => {
                Err(Error::Argument(format!("energy tolerance {eps} must lie in (0, 1)")))
            }
            SizeRule::Fixed(0) => Err(Error::Argument("basis size must be positive".into())),
            _ => Ok(()),
        }
    }
}

/// How an online basis is extracted from the dictionary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SpectralRoute {
    /// Gram eigenvectors, then re-orthonormalized against the selected columns of the
    /// stored triangular factor. Costs about as much as [`SpectralRoute::Gram`] and is
    /// as accurate as [`SpectralRoute::Factor`].
    #[default]
    Refined,
    /// SVD of the selected columns of the stored triangular factor. The cSVD case works
    /// on the complex factor, so pairs are exact and the conditioning is not squared.
    Factor,
    /// Eigen-decomposition of the selected Gram blocks; cSVD uses the Hermitian form.
    Gram,
    /// Real `2n_s × 2n_s` extended Gram matrix, odd eigenvectors, explicit pair checks.
    /// POD treats it like [`SpectralRoute::Gram`].
    GramRealBlock,
}

/// Orthonormal left singular vectors in factor coordinates, `V = Q U`.
#[derive(Debug, Clone, PartialEq)]
pub enum LeftFactor {
    Real(DMatrix<f64>),
    Complex(DMatrix<Complex<f64>>),
}

/// An online basis, represented by its coefficients on the selected snapshots.
#[derive(Debug, Clone)]
pub struct OnlineBasis {
    pub kind: BasisKind,
    pub indices: Vec<usize>,
    /// POD: `Φ̃` (`n_s × m`) with `V = X_s Φ̃`.
    /// cSVD: `Φ̃` (`2n_s × k`) with `V = [Y_s Φ̃, Jᵀ Y_s Φ̃]`, `Y_s = [X_s, J X_s]`.
    pub coefficients: DMatrix<f64>,
    /// Eigenvalues of the selected Gram matrix, paired for cSVD.
    pub spectrum: Vec<f64>,
    pub left: Option<LeftFactor>,
    dictionary_id: u64,
}

impl OnlineBasis {
    /// Reduced dimension (`m` or `2k`).
    pub fn dim(&self) -> usize {
        match self.kind {
            BasisKind::Pod => self.coefficients.ncols(),
            BasisKind::Csvd => 2 * self.coefficients.ncols(),
        }
    }

    /// Full coefficient matrix `Ψ` with `V = X_s Ψ` (POD) or `V = Y_s Ψ` (cSVD).
    pub fn expansion(&self) -> DMatrix<f64> {
        match self.kind {
            BasisKind::Pod => self.coefficients.clone(),
            BasisKind::Csvd => {
                let phi = &self.coefficients;
                let (rows, k) = phi.shape();
                let mut psi = DMatrix::zeros(rows, 2 * k);
                psi.columns_mut(0, k).copy_from(phi);
                psi.columns_mut(k, k).copy_from(&block_rotate(phi));
                psi
            }
        }
    }
}

/// `K φ` for `K = [[0, I], [−I, 0]]` on `2n_s` rows; `Y_s K = Jᵀ Y_s`.
fn block_rotate(phi: &DMatrix<f64>) -> DMatrix<f64> {
    poisson_apply_rows(phi)
}

fn selected_gram(d: &StateDictionary, idx: &[usize]) -> (DMatrix<f64>, DMatrix<f64>) {
    (select_submatrix(&d.gram, idx, idx), select_submatrix(&d.gram_j, idx, idx))
}

fn size_from_rule(values: &[f64], rank: usize, rule: SizeRule) -> Result<usize> {
    if rank == 0 {
        return Err(Error::EmptyBasis("selected snapshots have a numerically zero spectrum".into()));
    }
    let size = match rule {
        SizeRule::Energy(eps) => energy_truncation(values, eps),
        SizeRule::Fixed(m) => m,
    };
    Ok(size.min(rank).max(1))
}

/// Number of pairs from the doubled spectrum, capped by the resolvable pair count.
fn pair_count(doubled: &[f64], pairs: usize, rule: SizeRule) -> Result<usize> {
    Ok(size_from_rule(doubled, 2 * pairs, rule)?.div_ceil(2).min(pairs))
}

fn scale_columns(mut v: DMatrix<f64>, values: &[f64]) -> DMatrix<f64> {
    for (j, mut col) in v.column_iter_mut().enumerate() {
        col /= values[j].sqrt();
    }
    v
}

fn check_indices(d: &StateDictionary, idx: &[usize]) -> Result<()> {
    if idx.is_empty() {
        return Err(Error::Argument("empty snapshot selection".into()));
    }
    if let Some(&bad) = idx.iter().find(|&&i| i >= d.len()) {
        return Err(Error::Argument(format!("snapshot index {bad} outside dictionary of {}", d.len())));
    }
    Ok(())
}

/// Singular triplets sorted by decreasing value; each right vector's largest entry is
/// made real and positive, the left vector rotated with it.
fn sorted_svd<T: nalgebra::ComplexField<RealField = f64>>(a: DMatrix<T>) -> (Vec<f64>, DMatrix<T>, DMatrix<T>) {
    let svd = a.svd(true, true);
    let (u, vt) = (svd.u.expect("requested"), svd.v_t.expect("requested"));
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]).then(i.cmp(&j)));
    let sigma = order.iter().map(|&i| svd.singular_values[i]).collect();
    let mut left = DMatrix::zeros(u.nrows(), order.len());
    let mut right = DMatrix::zeros(vt.ncols(), order.len());
    for (c, &i) in order.iter().enumerate() {
        let v: Vec<T> = vt.row(i).iter().map(|z| z.clone().conjugate()).collect();
        let big = (0..v.len())
            .max_by(|&a, &b| v[a].clone().modulus().total_cmp(&v[b].clone().modulus()).then(b.cmp(&a)))
            .unwrap_or(0);
        let m = v[big].clone().modulus();
        let phase = if m > 0.0 { v[big].clone().unscale(m).conjugate() } else { T::one() };
        for (r, z) in v.into_iter().enumerate() {
            right[(r, c)] = z * phase.clone();
        }
        for r in 0..u.nrows() {
            left[(r, c)] = u[(r, i)].clone() * phase.clone();
        }
    }
    (sigma, left, right)
}

/// Cholesky factor of the leading block of a Hermitian `s`, stopping at the first column
/// whose pivot falls below `tol` times its diagonal entry. Returns the factor and the
/// number of columns it covers.
fn truncated_cholesky<T: nalgebra::ComplexField<RealField = f64> + Copy>(s: &DMatrix<T>, tol: f64) -> (DMatrix<T>, usize) {
    let n = s.nrows();
    let mut l = DMatrix::<T>::zeros(n, n);
    for j in 0..n {
        let mut d = s[(j, j)].real();
        for k in 0..j {
            d -= l[(j, k)].modulus_squared();
        }
        if !(d > tol * s[(j, j)].real() && d > 0.0) {
            return (l.view((0, 0), (j, j)).into_owned(), j);
        }
        let djj = d.sqrt();
        l[(j, j)] = T::from_real(djj);
        for i in j + 1..n {
            let mut v = s[(i, j)];
            for k in 0..j {
                v -= l[(i, k)] * l[(j, k)].conjugate();
            }
            l[(i, j)] = v.unscale(djj);
        }
    }
    (l, n)
}

/// Two Cholesky passes on the Gram matrix of `W = R_s C`, so that `W` ends up with
/// orthonormal columns to working precision. Dependent trailing columns are dropped in
/// the first pass. Returns the updated `C` and `W`.
fn refine_coefficients<T: nalgebra::ComplexField<RealField = f64> + Copy>(
    mut c: DMatrix<T>,
    mut w: DMatrix<T>,
    gram: impl Fn(&DMatrix<T>) -> DMatrix<T>,
) -> Result<(DMatrix<T>, DMatrix<T>)> {
    for tol in [f64::EPSILON.sqrt(), 0.0] {
        let (l, keep) = truncated_cholesky(&gram(&w), tol);
        if keep == 0 {
            return Err(Error::EmptyBasis("selected snapshots have a numerically zero spectrum".into()));
        }
        let solve = |m: DMatrix<T>| -> DMatrix<T> {
            let t = m.columns(0, keep).adjoint();
            l.solve_lower_triangular(&t).expect("positive pivots").adjoint()
        };
        c = solve(c);
        w = solve(w);
    }
    Ok((c, w))
}

/// Eigenvalues above `eps·λ₁`: a column scaled by `1/√λ` then carries an error of at
/// most about `√eps` before refinement.
fn refined_rank(values: &[f64]) -> usize {
    let Some(&top) = values.first() else {
        return 0;
    };
    if top <= 0.0 {
        return 0;
    }
    values.iter().take_while(|&&v| v > f64::EPSILON * top).count()
}

/// POD basis of the selected snapshots.
pub fn db_pod_basis(d: &StateDictionary, idx: &[usize], rule: SizeRule, route: SpectralRoute) -> Result<OnlineBasis> {
    check_indices(d, idx)?;
    rule.validate()?;
    let basis = match route {
        SpectralRoute::Refined => {
            let eig = SortedEigen::new(select_submatrix(&d.gram, idx, idx));
            let m = size_from_rule(&eig.values, refined_rank(&eig.values), rule)?;
            let c = scale_columns(eig.vectors.columns(0, m).into_owned(), &eig.values);
            let w = d.factor.select_columns(idx) * &c;
            let (c, w) = refine_coefficients(c, w, |w| w.transpose() * w)?;
            OnlineBasis {
                kind: BasisKind::Pod,
                indices: idx.to_vec(),
                coefficients: c,
                spectrum: eig.values,
                left: Some(LeftFactor::Real(w)),
                dictionary_id: d.id(),
            }
        }
        SpectralRoute::Factor => {
            let (sigma, u, v) = sorted_svd(d.factor.select_columns(idx));
            let m = size_from_rule(&squares(&sigma), factor_rank(&sigma), rule)?;
            let mut phi = v.columns(0, m).into_owned();
            for (j, mut col) in phi.column_iter_mut().enumerate() {
                col /= sigma[j];
            }
            OnlineBasis {
                kind: BasisKind::Pod,
                indices: idx.to_vec(),
                coefficients: phi,
                spectrum: squares(&sigma),
                left: Some(LeftFactor::Real(u.columns(0, m).into_owned())),
                dictionary_id: d.id(),
            }
        }
        SpectralRoute::Gram | SpectralRoute::GramRealBlock => {
            let eig = SortedEigen::new(select_submatrix(&d.gram, idx, idx));
            let m = size_from_rule(&eig.values, numerical_rank(&eig.values, idx.len()), rule)?;
            OnlineBasis {
                kind: BasisKind::Pod,
                indices: idx.to_vec(),
                coefficients: scale_columns(eig.vectors.columns(0, m).into_owned(), &eig.values),
                spectrum: eig.values,
                left: None,
                dictionary_id: d.id(),
            }
        }
    };
    Ok(basis)
}

/// Singular values kept by the factor route. A column scaled by `1/σ` carries an error
/// of order `eps·σ₁/σ`, bounded here by `√eps`.
fn factor_rank(sigma: &[f64]) -> usize {
    let Some(&top) = sigma.first() else {
        return 0;
    };
    let cutoff = f64::EPSILON.sqrt() * top;
    sigma.iter().take_while(|&&s| s > cutoff).count()
}

fn squares(sigma: &[f64]) -> Vec<f64> {
    sigma.iter().map(|s| s * s).collect()
}

fn doubled(values: &[f64]) -> Vec<f64> {
    values.iter().flat_map(|&v| [v, v]).collect()
}

/// Coefficients `[Re c; Im c] / σ` of complex right vectors `c`.
fn split_complex(right: &DMatrix<Complex<f64>>, scale: &[f64], k: usize) -> DMatrix<f64> {
    let n = right.nrows();
    let mut phi = DMatrix::zeros(2 * n, k);
    for j in 0..k {
        for i in 0..n {
            let z = right[(i, j)] / scale[j];
            phi[(i, j)] = z.re;
            phi[(n + i, j)] = z.im;
        }
    }
    phi
}

/// Symplectic basis of the selected snapshots.
pub fn db_csvd_basis(d: &StateDictionary, idx: &[usize], rule: SizeRule, route: SpectralRoute) -> Result<OnlineBasis> {
    check_indices(d, idx)?;
    rule.validate()?;
    let n = idx.len();
    let (spectrum, coefficients, left) = match route {
        SpectralRoute::Refined => {
            let (g, gj) = selected_gram(d, idx);
            let eig = HermitianEigen::new(DMatrix::from_fn(n, n, |i, j| Complex::new(g[(i, j)], -gj[(i, j)])));
            let spectrum = doubled(&eig.values);
            let k = pair_count(&spectrum, refined_rank(&eig.values), rule)?;
            let mut c = eig.vectors.columns(0, k).into_owned();
            for (j, mut col) in c.column_iter_mut().enumerate() {
                col.unscale_mut(eig.values[j].sqrt());
            }
            let w = complex_mul(&d.factor_c.select_columns(idx), &c);
            let (c, w) = refine_coefficients(c, w, |w| complex_ad_mul(w, w))?;
            let ones = vec![1.0; c.ncols()];
            (spectrum, split_complex(&c, &ones, c.ncols()), Some(LeftFactor::Complex(w)))
        }
        SpectralRoute::Factor => {
            let (sigma, u, c) = sorted_svd(d.factor_c.select_columns(idx));
            let spectrum = doubled(&squares(&sigma));
            let k = pair_count(&spectrum, factor_rank(&sigma), rule)?;
            let phi = split_complex(&c, &sigma, k);
            (spectrum, phi, Some(LeftFactor::Complex(u.columns(0, k).into_owned())))
        }
        SpectralRoute::Gram => {
            let (g, gj) = selected_gram(d, idx);
            let c = DMatrix::from_fn(n, n, |i, j| Complex::new(g[(i, j)], -gj[(i, j)]));
            let eig = HermitianEigen::new(c);
            let spectrum = doubled(&eig.values);
            let k = pair_count(&spectrum, numerical_rank(&eig.values, 2 * n), rule)?;
            let scale: Vec<f64> = eig.values.iter().map(|v| v.max(0.0).sqrt()).collect();
            (spectrum, split_complex(&eig.vectors, &scale, k), None)
        }
        SpectralRoute::GramRealBlock => {
            let (g, gj) = selected_gram(d, idx);
            let eig = SortedEigen::new(crate::reduction_std::extended_gram(&g, &gj));
            let k = pair_count(&eig.values, numerical_rank(&eig.values, 2 * n) / 2, rule)?;
            check_pairing(&eig.values, k)?;
            let odd: Vec<usize> = (0..k).map(|i| 2 * i).collect();
            let vals: Vec<f64> = odd.iter().map(|&i| eig.values[i]).collect();
            (eig.values.clone(), scale_columns(eig.vectors.select_columns(&odd), &vals), None)
        }
    };
    Ok(OnlineBasis {
        kind: BasisKind::Csvd,
        indices: idx.to_vec(),
        coefficients,
        spectrum,
        left,
        dictionary_id: d.id(),
    })
}

/// Affine-weighted selected operator blocks.
fn weighted_blocks(d: &StateDictionary, rows: &[usize], cols: &[usize], theta: &[f64]) -> [DMatrix<f64>; 4] {
    let mut out = [
        DMatrix::zeros(rows.len(), cols.len()),
        DMatrix::zeros(rows.len(), cols.len()),
        DMatrix::zeros(rows.len(), cols.len()),
        DMatrix::zeros(rows.len(), cols.len()),
    ];
    for (b, &th) in d.operator_blocks.iter().zip(theta) {
        if th == 0.0 {
            continue;
        }
        for (dst, src) in out.iter_mut().zip([&b.hx, &b.hx_jr, &b.hx_jl, &b.hx_jj]) {
            for (j, &c) in cols.iter().enumerate() {
                for (i, &r) in rows.iter().enumerate() {
                    dst[(i, j)] += th * src[(r, c)];
                }
            }
        }
    }
    out
}

/// Products of the snapshots with the non-affine query data, formed once per query.
#[derive(Debug, Clone)]
pub struct QueryProducts {
    pub mu: Vec<f64>,
    /// `Xᵀ x0(μ)`
    pub initial_x: DVector<f64>,
    /// `Xᵀ J x0(μ)`
    pub initial_xj: DVector<f64>,
    /// `Xᵀ b(μ)` and `Xᵀ J b(μ)`.
    pub forcing: Option<(DVector<f64>, DVector<f64>)>,
    /// Shift of every row of the nonlinearity dictionary.
    pub row_shifts: Vec<f64>,
    pub row_active: Vec<bool>,
}

impl QueryProducts {
    pub fn new(model: &AffineHamiltonianModel, dict: &Dictionary, mu: &[f64]) -> Result<Self> {
        let d = &dict.state;
        if d.dim() != model.dim() {
            return Err(Error::Dimension(format!(
                "dictionary dimension {} differs from model dimension {}",
                d.dim(),
                model.dim()
            )));
        }
        let (initial_x, initial_xj) = match &model.initial {
            InitialValue::Affine(terms) => {
                if terms.len() != d.initial_x.len() {
                    return Err(Error::Dimension("dictionary lacks the initial-value products".into()));
                }
                let mut a = DVector::zeros(d.len());
                let mut b = DVector::zeros(d.len());
                for (r, (sigma, _)) in terms.iter().enumerate() {
                    let s = sigma(mu);
                    a.axpy(s, &d.initial_x[r], 1.0);
                    b.axpy(s, &d.initial_xj[r], 1.0);
                }
                (a, b)
            }
            InitialValue::General(_) => {
                let x0 = model.initial_value(mu);
                instrument::record_full_dim();
                (d.states.tr_mul(&x0), d.states.tr_mul(&poisson_apply_vec(&x0)))
            }
        };
        let forcing = model.forcing_vector(mu).map(|b| {
            instrument::record_full_dim();
            (d.states.tr_mul(&b), d.states.tr_mul(&poisson_apply_vec(&b)))
        });
        let (row_shifts, row_active) = match (&model.nonlinearity, &dict.nonlinear) {
            (Some(nl), Some(nd)) => nd
                .rows
                .iter()
                .map(|&r| match nl.reads[r] {
                    Some(_) => ((nl.shift)(r, mu), true),
                    None => (0.0, false),
                })
                .unzip(),
            _ => (Vec::new(), Vec::new()),
        };
        Ok(QueryProducts {
            mu: mu.to_vec(),
            initial_x,
            initial_xj,
            forcing,
            row_shifts,
            row_active,
        })
    }
}

/// Reduced operator and forcing for an online basis.
fn reduced_linear_parts(
    model: &AffineHamiltonianModel,
    d: &StateDictionary,
    basis: &OnlineBasis,
    query: &QueryProducts,
) -> (DMatrix<f64>, Option<DVector<f64>>) {
    let idx = &basis.indices;
    let theta = model.coefficients(&query.mu);
    let a = reduced_operator(d, basis, &theta);
    let c = match basis.kind {
        BasisKind::Pod => query
            .forcing
            .as_ref()
            .map(|(_, bxj)| basis.coefficients.transpose() * linalg::select_entries(bxj, idx)),
        BasisKind::Csvd => query.forcing.as_ref().map(|(bx, bxj)| {
            let n = idx.len();
            let mut yb = DVector::zeros(2 * n);
            for (i, &s) in idx.iter().enumerate() {
                yb[i] = bx[s];
                yb[n + i] = -bxj[s];
            }
            poisson_apply_vec(&(basis.expansion().transpose() * yb))
        }),
    };
    (a, c)
}

/// `Vᵀ J H V` (POD) or `J_2k Vᵀ H V` (cSVD). With a left factor the products come from the
/// orthonormal-factor blocks, which avoids the amplification of roundoff by `1/σ` coefficients.
fn reduced_operator(d: &StateDictionary, basis: &OnlineBasis, theta: &[f64]) -> DMatrix<f64> {
    let weighted = |mats: &[&DMatrix<f64>]| {
        let mut out = DMatrix::zeros(mats[0].nrows(), mats[0].ncols());
        for (m, &th) in mats.iter().zip(theta) {
            if th != 0.0 {
                out += *m * th;
            }
        }
        out
    };
    match (&basis.left, basis.kind) {
        (Some(LeftFactor::Real(w)), BasisKind::Pod) => {
            let mats: Vec<_> = d.factor_blocks.iter().collect();
            w.transpose() * weighted(&mats) * w
        }
        (Some(LeftFactor::Complex(w)), BasisKind::Csvd) => {
            let block = |f: fn(&OperatorBlocks) -> &DMatrix<f64>| {
                weighted(&d.factor_blocks_c.iter().map(f).collect::<Vec<_>>())
            };
            let m1 = csvd_block_matrix(
                &block(|b| &b.hx),
                &block(|b| &b.hx_jr),
                &block(|b| &b.hx_jl),
                &block(|b| &b.hx_jj),
            );
            let k = w.ncols();
            let mut phi = DMatrix::zeros(2 * w.nrows(), k);
            phi.rows_mut(0, w.nrows()).copy_from(&w.map(|z| z.re));
            phi.rows_mut(w.nrows(), w.nrows()).copy_from(&w.map(|z| z.im));
            let mut psi = DMatrix::zeros(phi.nrows(), 2 * k);
            psi.columns_mut(0, k).copy_from(&phi);
            psi.columns_mut(k, k).copy_from(&block_rotate(&phi));
            let mut m = psi.transpose() * m1 * &psi;
            linalg::symmetrize(&mut m);
            poisson_apply_rows(&m)
        }
        _ => {
            let idx = &basis.indices;
            let [hx, hx_jr, hx_jl, hx_jj] = weighted_blocks(d, idx, idx, theta);
            match basis.kind {
                BasisKind::Pod => {
                    let phi = &basis.coefficients;
                    phi.transpose() * hx_jl * phi
                }
                BasisKind::Csvd => {
                    let psi = basis.expansion();
                    let mut m = psi.transpose() * csvd_block_matrix(&hx, &hx_jr, &hx_jl, &hx_jj) * &psi;
                    linalg::symmetrize(&mut m);
                    poisson_apply_rows(&m)
                }
            }
        }
    }
}

/// `Y_sᵀ H Y_s = [[H_X, H_XJr], [−H_XJl, −H_XJJ]]`
fn csvd_block_matrix(hx: &DMatrix<f64>, hx_jr: &DMatrix<f64>, hx_jl: &DMatrix<f64>, hx_jj: &DMatrix<f64>) -> DMatrix<f64> {
    let n = hx.nrows();
    let mut m1 = DMatrix::zeros(2 * n, 2 * n);
    m1.view_mut((0, 0), (n, n)).copy_from(hx);
    m1.view_mut((0, n), (n, n)).copy_from(hx_jr);
    m1.view_mut((n, 0), (n, n)).copy_from(&(-hx_jl));
    m1.view_mut((n, n), (n, n)).copy_from(&(-hx_jj));
    m1
}

/// Reduced initial value `V⁺ x0` (cSVD) or `Vᵀ x0` (POD).
pub fn reduced_initial_value(basis: &OnlineBasis, query: &QueryProducts) -> DVector<f64> {
    let idx = &basis.indices;
    match basis.kind {
        BasisKind::Pod => basis.coefficients.transpose() * linalg::select_entries(&query.initial_x, idx),
        BasisKind::Csvd => {
            let n = idx.len();
            // Y_sᵀ J x0 = [Xᵀ J x0; Xᵀ x0]_s
            let mut yjx = DVector::zeros(2 * n);
            for (i, &s) in idx.iter().enumerate() {
                yjx[i] = query.initial_xj[s];
                yjx[n + i] = query.initial_x[s];
            }
            poisson_transpose_apply_vec(&(basis.expansion().transpose() * yjx))
        }
    }
}

/// DEIM data for one window.
#[derive(Debug, Clone)]
pub struct OnlineHyper {
    /// `Ψ̃` (`n_s × m̃`), `U = F_s Ψ̃`.
    pub coefficients: DMatrix<f64>,
    /// Online indices into the row dictionary.
    pub local_rows: Vec<usize>,
    /// Global state rows `ρ̂(ρ_o)`.
    pub global_rows: Vec<usize>,
    pub spectrum: Vec<f64>,
}

impl OnlineHyper {
    pub fn len(&self) -> usize {
        self.local_rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.local_rows.is_empty()
    }
}

/// Nonlinearity basis and online DEIM rows from `G_{F,s}` and the row dictionary.
///
/// Returns `None` when the selected nonlinearity snapshots vanish.
pub fn db_deim_indices(nd: &NonlinearityDictionary, idx: &[usize], eps: f64) -> Result<Option<OnlineHyper>> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::Argument(format!("hyper-reduction tolerance {eps} must lie in (0, 1)")));
    }
    let g = select_submatrix(&nd.gram_f, idx, idx);
    let eig = SortedEigen::new(g);
    let rank = numerical_rank(&eig.values, idx.len());
    if rank == 0 || nd.rows.is_empty() {
        return Ok(None);
    }
    let m = energy_truncation(&eig.values, eps).min(rank).max(1);
    let psi = scale_columns(eig.vectors.columns(0, m).into_owned(), &eig.values);
    let fp = nd.values_at_rows.select_columns(idx);
    let local_rows = deim(&(fp * &psi))?;
    let global_rows = local_rows.iter().map(|&j| nd.rows[j]).collect();
    Ok(Some(OnlineHyper {
        coefficients: psi,
        local_rows,
        global_rows,
        spectrum: eig.values,
    }))
}

/// Interpolated nonlinearity term for a basis and its DEIM data.
pub fn db_hyper_term(
    model: &AffineHamiltonianModel,
    nd: &NonlinearityDictionary,
    basis: &OnlineBasis,
    hyper: &OnlineHyper,
    query: &QueryProducts,
) -> Result<HyperTerm> {
    let nl = model
        .nonlinearity
        .as_ref()
        .ok_or_else(|| Error::Argument("hyper-reduction requested for a linear model".into()))?;
    let idx = &basis.indices;
    let n = idx.len();
    let psi_f = &hyper.coefficients;
    let fp_sel = select_submatrix(&nd.values_at_rows, &hyper.local_rows, idx);
    let sampled = fp_sel * psi_f;
    let (w_u, rows) = match basis.kind {
        BasisKind::Pod => {
            let phi = &basis.coefficients;
            // Vᵀ J U = Φ̃ᵀ (Xᵀ J F)_s Ψ̃
            let w_u = phi.transpose() * select_submatrix(&nd.gram_xfj, idx, idx) * psi_f;
            let rows = select_submatrix(&nd.states_at_reads, &hyper.local_rows, idx) * phi;
            (w_u, rows)
        }
        BasisKind::Csvd => {
            let psi = basis.expansion();
            // Y_sᵀ F_s = [Xᵀ F; −Xᵀ J F]_s
            let mut yf = DMatrix::zeros(2 * n, n);
            yf.view_mut((0, 0), (n, n)).copy_from(&select_submatrix(&nd.gram_xf, idx, idx));
            yf.view_mut((n, 0), (n, n)).copy_from(&(-select_submatrix(&nd.gram_xfj, idx, idx)));
            let vtu = psi.transpose() * yf * psi_f;
            let w_u = poisson_apply_rows(&vtu);
            let mut yrows = DMatrix::zeros(hyper.len(), 2 * n);
            yrows
                .columns_mut(0, n)
                .copy_from(&select_submatrix(&nd.states_at_reads, &hyper.local_rows, idx));
            yrows
                .columns_mut(n, n)
                .copy_from(&select_submatrix(&nd.jstates_at_reads, &hyper.local_rows, idx));
            (w_u, yrows * psi)
        }
    };
    let coupling = interpolation_coupling(&w_u, &sampled)?;
    let (shifts, active) = hyper
        .local_rows
        .iter()
        .map(|&j| {
            if query.row_active.is_empty() {
                let r = nd.rows[j];
                match nl.reads[r] {
                    Some(_) => ((nl.shift)(r, &query.mu), true),
                    None => (0.0, false),
                }
            } else {
                (query.row_shifts[j], query.row_active[j])
            }
        })
        .unzip();
    Ok(HyperTerm {
        coupling,
        rows,
        shifts,
        active,
        map: nl.map,
        global_rows: hyper.global_rows.clone(),
    })
}

/// Reduced system for a basis, with optional DEIM data.
pub fn db_reduced_system(
    model: &AffineHamiltonianModel,
    dict: &Dictionary,
    basis: &OnlineBasis,
    hyper: Option<&OnlineHyper>,
    query: &QueryProducts,
) -> Result<ReducedSystem> {
    check_identity(dict, basis)?;
    let (a, c) = reduced_linear_parts(model, &dict.state, basis, query);
    let term = match hyper {
        Some(h) => {
            let nd = dict
                .nonlinear
                .as_ref()
                .ok_or_else(|| Error::Argument("dictionary has no nonlinearity data".into()))?;
            Some(db_hyper_term(model, nd, basis, h, query)?)
        }
        None => None,
    };
    ReducedSystem::new(a, c, term)
}

/// DB-POD: basis, reduced system and reduced initial value.
pub fn db_pod_online(
    model: &AffineHamiltonianModel,
    dict: &Dictionary,
    idx: &[usize],
    rule: SizeRule,
    route: SpectralRoute,
    query: &QueryProducts,
) -> Result<(OnlineBasis, ReducedSystem)> {
    let basis = db_pod_basis(&dict.state, idx, rule, route)?;
    let sys = db_reduced_system(model, dict, &basis, None, query)?;
    Ok((basis, sys))
}

/// DB-cSVD: basis, reduced system and reduced initial value.
pub fn db_csvd_online(
    model: &AffineHamiltonianModel,
    dict: &Dictionary,
    idx: &[usize],
    rule: SizeRule,
    route: SpectralRoute,
    query: &QueryProducts,
) -> Result<(OnlineBasis, ReducedSystem)> {
    let basis = db_csvd_basis(&dict.state, idx, rule, route)?;
    let sys = db_reduced_system(model, dict, &basis, None, query)?;
    Ok((basis, sys))
}

fn check_identity(dict: &Dictionary, basis: &OnlineBasis) -> Result<()> {
    if basis.dictionary_id != dict.state.id() {
        return Err(Error::Contract("basis was built from a different dictionary".into()));
    }
    Ok(())
}

/// Coordinates of `V_old x_old` in the new basis: `V_new⁺ V_old x_old` (cSVD) or
/// `V_newᵀ V_old x_old` (POD), from cross sub-blocks of the Gram matrices.
pub fn basis_change_matrix(old: &OnlineBasis, new: &OnlineBasis, dict: &Dictionary) -> Result<DMatrix<f64>> {
    check_identity(dict, old)?;
    check_identity(dict, new)?;
    if old.kind != new.kind {
        return Err(Error::Contract("basis change between POD and cSVD bases".into()));
    }
    if old.indices == new.indices && old.coefficients == new.coefficients {
        return Ok(DMatrix::identity(new.dim(), old.dim()));
    }
    match (&old.left, &new.left) {
        (Some(LeftFactor::Real(uo)), Some(LeftFactor::Real(un))) => return Ok(un.tr_mul(uo)),
        (Some(LeftFactor::Complex(uo)), Some(LeftFactor::Complex(un))) => {
            // complex coordinates η = y_top − i y_bottom
            let t = un.ad_mul(uo);
            let (kn, ko) = t.shape();
            let mut m = DMatrix::zeros(2 * kn, 2 * ko);
            for j in 0..ko {
                for i in 0..kn {
                    let z = t[(i, j)];
                    m[(i, j)] = z.re;
                    m[(i, ko + j)] = z.im;
                    m[(kn + i, j)] = -z.im;
                    m[(kn + i, ko + j)] = z.re;
                }
            }
            return Ok(m);
        }
        _ => {}
    }
    let d = &dict.state;
    let g = select_submatrix(&d.gram, &new.indices, &old.indices);
    match new.kind {
        BasisKind::Pod => Ok(new.coefficients.transpose() * g * &old.coefficients),
        BasisKind::Csvd => {
            let gj = select_submatrix(&d.gram_j, &new.indices, &old.indices);
            let (nn, no) = g.shape();
            // Y_nᵀ J Y_o = [[G_J, −G], [G, G_J]]
            let mut m5 = DMatrix::zeros(2 * nn, 2 * no);
            m5.view_mut((0, 0), (nn, no)).copy_from(&gj);
            m5.view_mut((0, no), (nn, no)).copy_from(&(-&g));
            m5.view_mut((nn, 0), (nn, no)).copy_from(&g);
            m5.view_mut((nn, no), (nn, no)).copy_from(&gj);
            let m = new.expansion().transpose() * m5 * old.expansion();
            Ok(linalg::poisson_transpose_apply_rows(&m))
        }
    }
}

pub fn basis_change_project(old: &OnlineBasis, new: &OnlineBasis, dict: &Dictionary, x_old: &DVector<f64>) -> Result<DVector<f64>> {
    if x_old.len() != old.dim() {
        return Err(Error::Dimension(format!("reduced state of length {} for basis of size {}", x_old.len(), old.dim())));
    }
    Ok(basis_change_matrix(old, new, dict)? * x_old)
}

/// Explicit `V`. Diagnostic only: costs `O(N · n_s · size)`.
pub fn explicit_basis(basis: &OnlineBasis, d: &StateDictionary) -> DMatrix<f64> {
    instrument::record_full_dim();
    let xs = d.states.select_columns(&basis.indices);
    match basis.kind {
        BasisKind::Pod => xs * &basis.coefficients,
        BasisKind::Csvd => {
            let ys = crate::reduction_std::extended_snapshots(&xs);
            ys * basis.expansion()
        }
    }
}

/// `V x_r`. Diagnostic only.
pub fn reconstruct(basis: &OnlineBasis, d: &StateDictionary, x_r: &DVector<f64>) -> Result<DVector<f64>> {
    if x_r.len() != basis.dim() {
        return Err(Error::Dimension(format!("reduced state of length {} for basis of size {}", x_r.len(), basis.dim())));
    }
    instrument::record_full_dim();
    let coeff = basis.expansion() * x_r;
    let xs = d.states.select_columns(&basis.indices);
    match basis.kind {
        BasisKind::Pod => Ok(xs * coeff),
        BasisKind::Csvd => {
            let n = basis.indices.len();
            let top = &xs * coeff.rows(0, n);
            let bottom = &xs * coeff.rows(n, n);
            Ok(top + poisson_apply_vec(&bottom))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HyperReduction {
    None,
    Deim,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OnlineSettings {
    pub kind: BasisKind,
    pub hyper: HyperReduction,
    pub selection: SelectionConfig,
    pub size: SizeRule,
    /// Energy tolerance for the nonlinearity basis.
    pub hyper_tolerance: f64,
    pub route: SpectralRoute,
    pub newton: NewtonSettings,
}

impl OnlineSettings {
    pub fn new(kind: BasisKind, hyper: HyperReduction, selection: SelectionConfig) -> Self {
        OnlineSettings {
            kind,
            hyper,
            selection,
            size: SizeRule::Energy(1e-12),
            hyper_tolerance: 1e-12,
            route: SpectralRoute::Refined,
            newton: NewtonSettings::default(),
        }
    }
}

/// Windowed online simulation.
///
/// Window `i` covers steps `i·m_s + 1 ..= min((i+1)·m_s, n_t)` and selects snapshots at
/// its start time. Errors raised inside a window carry its index.
pub fn run_online(model: &AffineHamiltonianModel, dict: &Dictionary, mu: &[f64], settings: &OnlineSettings) -> Result<RunReport> {
    let d = &dict.state;
    settings.selection.validate(d.len())?;
    settings.newton.validate()?;
    if model.is_nonlinear() && settings.hyper == HyperReduction::None {
        return Err(Error::Argument(
            "nonlinear models need hyper-reduction in the online phase".into(),
        ));
    }
    if settings.hyper == HyperReduction::Deim && (!model.is_nonlinear() || dict.nonlinear.is_none()) {
        return Err(Error::Argument("hyper-reduction needs a nonlinear model and its dictionary".into()));
    }
    if !model.domain.contains(mu) {
        return Err(Error::Argument(format!("parameter {mu:?} outside the domain")));
    }
    let grid = model.time_grid(mu)?;
    let dt = grid.dt();
    let n_t = grid.steps;
    let c = match settings.selection.time_weight {
        TimeWeight::Explicit(c) => c,
        TimeWeight::Auto => compute_time_weight(&training_parameters(&d.labels), dt)?,
    };

    let setup_start = Instant::now();
    let query = QueryProducts::new(model, dict, mu)?;
    let setup = setup_start.elapsed();

    let full_before = instrument::full_dim_ops();
    let m_s = settings.selection.window;
    let window_count = n_t.div_ceil(m_s);
    let mut timings = Timings {
        setup,
        ..Default::default()
    };
    let mut states: Vec<DVector<f64>> = Vec::with_capacity(n_t + 1);
    let mut step_window = Vec::with_capacity(n_t + 1);
    let mut windows = Vec::with_capacity(window_count);
    let mut bases: Vec<OnlineBasis> = Vec::with_capacity(window_count);
    let mut newton_iterations = 0;
    let mut y = DVector::zeros(0);

    for w in 0..window_count {
        let run_window = |y: &DVector<f64>, timings: &mut Timings| -> Result<(OnlineBasis, Option<OnlineHyper>, Vec<DVector<f64>>, usize)> {
            let start = w * m_s;
            let steps = m_s.min(n_t - start);
            let t_start = grid.time(start);

            let clock = Instant::now();
            let idx = select_indices(&d.labels, mu, t_start, dt, m_s, settings.selection.count, c)?;
            timings.selection += clock.elapsed();

            let clock = Instant::now();
            let basis = match settings.kind {
                BasisKind::Pod => db_pod_basis(d, &idx, settings.size, settings.route)?,
                BasisKind::Csvd => db_csvd_basis(d, &idx, settings.size, settings.route)?,
            };
            let hyper = match settings.hyper {
                HyperReduction::None => None,
                HyperReduction::Deim => {
                    db_deim_indices(dict.nonlinear.as_ref().expect("checked above"), &idx, settings.hyper_tolerance)?
                }
            };
            let sys = db_reduced_system(model, dict, &basis, hyper.as_ref(), &query)?;
            timings.basis += clock.elapsed();

            let clock = Instant::now();
            let mut out = Vec::with_capacity(steps + 1);
            let y0 = match bases.last() {
                None => reduced_initial_value(&basis, &query),
                Some(prev) => basis_change_project(prev, &basis, dict, y)?,
            };
            timings.projection += clock.elapsed();

            let clock = Instant::now();
            let mut stepper = sys.stepper(dt, settings.newton)?;
            let mut cur = y0.clone();
            out.push(y0);
            for s in 0..steps {
                cur = stepper.step(&cur, grid.time(start + s)).map_err(|e| e.at_step(start + s + 1))?;
                out.push(cur.clone());
            }
            timings.stepping += clock.elapsed();
            Ok((basis, hyper, out, stepper.newton_iterations))
        };
        let (basis, hyper, traj, iters) = run_window(&y, &mut timings).map_err(|e| e.in_window(w))?;
        newton_iterations += iters;
        let start = w * m_s;
        if w == 0 {
            states.push(traj[0].clone());
            step_window.push(0);
        }
        y = traj.last().cloned().unwrap_or_default();
        states.extend(traj.into_iter().skip(1));
        step_window.extend(std::iter::repeat_n(w, n_t.min(start + m_s) - start));
        windows.push(WindowRecord {
            index: w,
            start_step: start,
            indices: basis.indices.clone(),
            basis_size: basis.dim(),
            hyper_size: hyper.as_ref().map_or(0, OnlineHyper::len),
            hyper_rows: hyper.as_ref().map(|h| h.global_rows.clone()).unwrap_or_default(),
        });
        bases.push(basis);
    }

    let full_dim_in_loop = instrument::full_dim_ops() - full_before;
    if full_dim_in_loop != 0 {
        return Err(Error::Contract(format!(
            "{full_dim_in_loop} full-dimension operations inside the online loop"
        )));
    }
    Ok(RunReport {
        mu: mu.to_vec(),
        times: (0..=n_t).map(|i| grid.time(i)).collect(),
        reduced_states: states,
        step_window,
        windows,
        bases,
        timings,
        newton_iterations,
        time_weight: c,
    })
}

/// Full-state trajectory of a run. Diagnostic only.
pub fn reconstruct_trajectory(report: &RunReport, d: &StateDictionary) -> Result<DMatrix<f64>> {
    let mut out = DMatrix::zeros(d.dim(), report.reduced_states.len());
    let mut cache: Option<(usize, DMatrix<f64>)> = None;
    for (i, y) in report.reduced_states.iter().enumerate() {
        let w = report.step_window[i];
        if cache.as_ref().map(|c| c.0) != Some(w) {
            cache = Some((w, explicit_basis(&report.bases[w], d)));
        }
        let v = &cache.as_ref().expect("set above").1;
        out.set_column(i, &(v * y));
    }
    Ok(out)
}

/// Per-window online time excluding the per-query setup.
pub fn online_time(t: &Timings) -> Duration {
    t.selection + t.basis + t.stepping + t.projection
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dictionary::{build_dictionary, OfflineOptions, SnapshotOptions};
    use crate::integrators::{integrate, integrate_full_order};
    use crate::model::{build_sine_gordon, build_wave2d};
    use crate::reduction_std::{assemble_reduced, assemble_reduced_linear, ProjectionMode};
    use crate::symplectic::{orthonormality_defect, symplectic_defect, symplectic_inverse_apply_unchecked};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn wave_dict(nx1: usize, nx2: usize, steps: usize) -> (AffineHamiltonianModel, Dictionary) {
        let m = build_wave2d(nx1, nx2, steps).unwrap();
        let d = build_dictionary(&m, &[vec![7.0], vec![8.5], vec![10.0]], &OfflineOptions::default()).unwrap();
        (m, d)
    }

    fn sg_dict(nz: usize, steps: usize) -> (AffineHamiltonianModel, Dictionary) {
        let m = build_sine_gordon(nz, steps).unwrap();
        let training: Vec<Vec<f64>> = (0..5).map(|j| vec![0.7 + 0.05 * j as f64]).collect();
        let d = build_dictionary(&m, &training, &OfflineOptions::default()).unwrap();
        (m, d)
    }

    fn random_indices(n: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
        let mut all: Vec<usize> = (0..n).collect();
        for i in 0..k {
            let j = rng.random_range(i..n);
            all.swap(i, j);
        }
        let mut s = all[..k].to_vec();
        s.sort_unstable();
        s
    }

    fn rel(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
        (a - b).norm() / b.norm().max(f64::MIN_POSITIVE)
    }

    #[test]
    fn pod_basis_is_implicitly_orthonormal() {
        let (_, d) = wave_dict(8, 4, 20);
        let idx: Vec<usize> = (0..60).step_by(3).collect();
        let b = db_pod_basis(&d.state, &idx, SizeRule::Energy(1e-8), SpectralRoute::Refined).unwrap();
        let g = select_submatrix(&d.state.gram, &idx, &idx);
        let m = b.coefficients.transpose() * g * &b.coefficients;
        assert!((m - DMatrix::identity(b.dim(), b.dim())).norm() <= 1e-8);
        assert!(orthonormality_defect(&explicit_basis(&b, &d.state)) <= 1e-8);
    }

    #[test]
    fn single_snapshot_pod_is_one_dimensional() {
        let (m, d) = wave_dict(10, 5, 10);
        let q = QueryProducts::new(&m, &d, &[8.0]).unwrap();
        let (b, sys) = db_pod_online(&m, &d, &[4], SizeRule::Energy(1e-12), SpectralRoute::Refined, &q).unwrap();
        assert_eq!(b.dim(), 1);
        assert_eq!(sys.operator.shape(), (1, 1));
    }

    #[test]
    fn csvd_size_criterion_counts_pairs() {
        let doubled = [1.0, 1.0, 0.0, 0.0];
        assert_eq!(energy_truncation(&doubled, 1e-12).div_ceil(2), 1);
        assert_eq!(energy_truncation(&[4.0, 1.0, 0.0], 1e-12), 2);
    }

    #[test]
    fn csvd_basis_is_symplectic_both_routes() {
        let (_, d) = wave_dict(10, 5, 30);
        let idx: Vec<usize> = (0..90).step_by(4).collect();
        for route in [SpectralRoute::Refined, SpectralRoute::Factor, SpectralRoute::Gram, SpectralRoute::GramRealBlock] {
            let b = db_csvd_basis(&d.state, &idx, SizeRule::Energy(1e-8), route).unwrap();
            let v = explicit_basis(&b, &d.state);
            assert!(v.nrows() <= 400);
            assert!(symplectic_defect(&v).unwrap() <= 1e-8, "{route:?}");
            assert!(orthonormality_defect(&v) <= 1e-8, "{route:?}");
        }
    }

    #[test]
    fn reduced_blocks_match_explicit_assembly() {
        let (m, d) = wave_dict(10, 5, 30);
        let mu = [9.3];
        let q = QueryProducts::new(&m, &d, &mu).unwrap();
        let idx: Vec<usize> = (5..80).step_by(5).collect();
        for kind in [BasisKind::Pod, BasisKind::Csvd] {
            let b = match kind {
                BasisKind::Pod => db_pod_basis(&d.state, &idx, SizeRule::Energy(1e-10), SpectralRoute::Refined).unwrap(),
                BasisKind::Csvd => db_csvd_basis(&d.state, &idx, SizeRule::Energy(1e-10), SpectralRoute::Refined).unwrap(),
            };
            let sys = db_reduced_system(&m, &d, &b, None, &q).unwrap();
            let v = explicit_basis(&b, &d.state);
            let mode = match kind {
                BasisKind::Pod => ProjectionMode::Orthogonal,
                BasisKind::Csvd => ProjectionMode::Symplectic,
            };
            let (expect, x0) = assemble_reduced_linear(&v, &m, &mu, mode).unwrap();
            assert!(rel(&sys.operator, &expect.operator) <= 1e-8, "{kind:?}");
            let y0 = reduced_initial_value(&b, &q);
            assert!((&y0 - &x0).norm() <= 1e-8 * x0.norm(), "{kind:?}");
        }
    }

    #[test]
    fn basis_change_examples() {
        let (m, d) = wave_dict(10, 5, 30);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_indices(90, 20, &mut rng);
        let b = random_indices(90, 25, &mut rng);
        let _ = m;
        for kind in [BasisKind::Pod, BasisKind::Csvd] {
            let make = |idx: &[usize]| match kind {
                BasisKind::Pod => db_pod_basis(&d.state, idx, SizeRule::Energy(1e-10), SpectralRoute::Refined).unwrap(),
                BasisKind::Csvd => db_csvd_basis(&d.state, idx, SizeRule::Energy(1e-10), SpectralRoute::Refined).unwrap(),
            };
            let (old, new) = (make(&a), make(&b));
            let x = DVector::from_fn(old.dim(), |_, _| rng.random_range(-1.0..1.0));
            let same = basis_change_project(&old, &old, &d, &x).unwrap();
            assert!((&same - &x).norm() <= 1e-12 * x.norm(), "{kind:?}");
            let vo = explicit_basis(&old, &d.state);
            let vn = explicit_basis(&new, &d.state);
            let got = basis_change_project(&old, &new, &d, &x).unwrap();
            let expect = match kind {
                BasisKind::Pod => vn.transpose() * (&vo * &x),
                BasisKind::Csvd => symplectic_inverse_apply_unchecked(&vn, &(&vo * &x)).unwrap(),
            };
            assert!((&got - &expect).norm() <= 1e-10 * expect.norm(), "{kind:?}");
        }
    }

    #[test]
    fn basis_change_preserves_states_in_both_spans() {
        let (_, d) = wave_dict(10, 5, 30);
        let shared: Vec<usize> = vec![10, 11, 12];
        let old = db_csvd_basis(&d.state, &[10, 11, 12, 40, 41], SizeRule::Fixed(1000), SpectralRoute::Refined).unwrap();
        let new = db_csvd_basis(&d.state, &[10, 11, 12, 70, 80], SizeRule::Fixed(1000), SpectralRoute::Refined).unwrap();
        // a snapshot combination lies in both spans
        let x: DVector<f64> = shared.iter().map(|&i| d.state.states.column(i).into_owned()).sum();
        let vo = explicit_basis(&old, &d.state);
        let y_old = symplectic_inverse_apply_unchecked(&vo, &x).unwrap();
        let y_new = basis_change_project(&old, &new, &d, &y_old).unwrap();
        let back = reconstruct(&new, &d.state, &y_new).unwrap();
        assert!((&back - &x).norm() <= 1e-8 * x.norm());
    }

    #[test]
    fn reconstruct_examples() {
        let (_, d) = wave_dict(8, 4, 20);
        let b = db_csvd_basis(&d.state, &[3, 9, 27, 33], SizeRule::Energy(1e-12), SpectralRoute::Refined).unwrap();
        assert_eq!(reconstruct(&b, &d.state, &DVector::zeros(b.dim())).unwrap().norm(), 0.0);
        let mut e1 = DVector::zeros(b.dim());
        e1[0] = 1.0;
        let col = reconstruct(&b, &d.state, &e1).unwrap();
        assert!((col.norm() - 1.0).abs() <= 1e-8);
        let v = explicit_basis(&b, &d.state);
        assert!((col - v.column(0)).norm() <= 1e-12);
        let x = &v * DVector::from_fn(b.dim(), |i, _| (i as f64).sin());
        let y = symplectic_inverse_apply_unchecked(&v, &x).unwrap();
        assert!((reconstruct(&b, &d.state, &y).unwrap() - &x).norm() <= 1e-8 * x.norm());
    }

    #[test]
    fn basis_from_other_dictionary_is_rejected() {
        let (_, d1) = wave_dict(10, 5, 10);
        let (_, d2) = wave_dict(12, 5, 10);
        let b1 = db_pod_basis(&d1.state, &[0, 1, 2], SizeRule::Energy(1e-12), SpectralRoute::Refined).unwrap();
        let b2 = db_pod_basis(&d2.state, &[0, 1, 2], SizeRule::Energy(1e-12), SpectralRoute::Refined).unwrap();
        assert!(matches!(basis_change_matrix(&b1, &b2, &d1), Err(Error::Contract(_))));
    }

    #[test]
    fn hyper_term_matches_standard_sdeim() {
        let (m, d) = sg_dict(60, 80);
        let mu = [0.82];
        let q = QueryProducts::new(&m, &d, &mu).unwrap();
        let nd = d.nonlinear.as_ref().unwrap();
        let idx: Vec<usize> = (0..400).step_by(7).collect();
        let basis = db_csvd_basis(&d.state, &idx, SizeRule::Energy(1e-10), SpectralRoute::Refined).unwrap();
        let hyper = db_deim_indices(nd, &idx, 1e-10).unwrap().unwrap();
        assert!(hyper.global_rows.iter().all(|&r| r < m.half_dim));
        let sys = db_reduced_system(&m, &d, &basis, Some(&hyper), &q).unwrap();

        let v = explicit_basis(&basis, &d.state);
        let u = nd.values.select_columns(&idx) * &hyper.coefficients;
        let rho = deim(&u).unwrap();
        // all nonzero rows are in the row dictionary, so the composed indices agree
        assert_eq!(rho, hyper.global_rows);
        let (expect, _) = crate::reduction_std::assemble_sdeim(&v, &u, &rho, &m, &mu, ProjectionMode::Symplectic).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..5 {
            let y = DVector::from_fn(basis.dim(), |_, _| rng.random_range(-0.5..0.5));
            let (a, b) = (sys.rhs(&y), expect.rhs(&y));
            assert!((&a - &b).norm() <= 1e-8 * b.norm());
        }
    }

    #[test]
    fn pod_deim_term_matches_standard_pipeline() {
        let (m, d) = sg_dict(50, 80);
        let mu = [0.77];
        let q = QueryProducts::new(&m, &d, &mu).unwrap();
        let nd = d.nonlinear.as_ref().unwrap();
        let idx: Vec<usize> = (3..400).step_by(9).collect();
        let basis = db_pod_basis(&d.state, &idx, SizeRule::Energy(1e-10), SpectralRoute::Refined).unwrap();
        let hyper = db_deim_indices(nd, &idx, 1e-10).unwrap().unwrap();
        let sys = db_reduced_system(&m, &d, &basis, Some(&hyper), &q).unwrap();
        let v = explicit_basis(&basis, &d.state);
        let u = nd.values.select_columns(&idx) * &hyper.coefficients;
        let rho = deim(&u).unwrap();
        let (expect, _) = crate::reduction_std::assemble_sdeim(&v, &u, &rho, &m, &mu, ProjectionMode::Orthogonal).unwrap();
        let y = DVector::from_fn(basis.dim(), |i, _| 0.1 * (i as f64).cos());
        assert!((sys.rhs(&y) - expect.rhs(&y)).norm() <= 1e-8 * expect.rhs(&y).norm());
    }

    #[test]
    fn deim_is_exact_on_dictionary_columns_at_full_rank() {
        let (_, d) = sg_dict(40, 60);
        let nd = d.nonlinear.as_ref().unwrap();
        let idx: Vec<usize> = (0..300).step_by(10).collect();
        let h = db_deim_indices(nd, &idx, 1e-15).unwrap().unwrap();
        let fs = nd.values.select_columns(&idx);
        let u = &fs * &h.coefficients;
        let pu = u.select_rows(&h.global_rows);
        let approx = &u * pu.lu().solve(&fs.select_rows(&h.global_rows)).unwrap();
        assert!((approx - &fs).norm() <= 1e-7 * fs.norm());
    }

    #[test]
    fn zero_nonlinearity_snapshots_give_no_hyper_term() {
        let (_, mut d) = sg_dict(20, 60);
        let nd = d.nonlinear.as_mut().unwrap();
        nd.gram_f.fill(0.0);
        assert!(db_deim_indices(nd, &[0, 1, 2], 1e-12).unwrap().is_none());
    }

    #[test]
    fn single_window_run_matches_single_basis_rom() {
        let (m, d) = wave_dict(10, 5, 30);
        let mu = [8.5];
        let mut sel = SelectionConfig::new(30, 40);
        sel.time_weight = TimeWeight::Auto;
        let settings = OnlineSettings::new(BasisKind::Csvd, HyperReduction::None, sel);
        let report = run_online(&m, &d, &mu, &settings).unwrap();
        assert_eq!(report.windows.len(), 1);
        assert_eq!(report.reduced_states.len(), 31);
        let q = QueryProducts::new(&m, &d, &mu).unwrap();
        let basis = &report.bases[0];
        let sys = db_reduced_system(&m, &d, basis, None, &q).unwrap();
        let grid = m.time_grid(&mu).unwrap();
        let mut st = sys.stepper(grid.dt(), NewtonSettings::default()).unwrap();
        let traj = integrate(&mut st, &reduced_initial_value(basis, &q), &grid).unwrap();
        for (i, y) in report.reduced_states.iter().enumerate() {
            assert!((y - traj.column(i)).norm() <= 1e-12 * traj.column(i).norm().max(1.0));
        }
    }

    #[test]
    fn window_count_and_log() {
        let (m, d) = wave_dict(10, 5, 30);
        let settings = OnlineSettings::new(BasisKind::Csvd, HyperReduction::None, SelectionConfig::new(7, 20));
        let r = run_online(&m, &d, &[9.0], &settings).unwrap();
        assert_eq!(r.windows.len(), 30usize.div_ceil(7));
        assert_eq!(r.step_window.len(), 31);
        assert_eq!(r.step_window[7], 0);
        assert_eq!(r.step_window[8], 1);
        assert_eq!(r.step_window[30], 4);
        assert_eq!(r.windows[4].start_step, 28);
    }

    #[test]
    fn reproduction_run_is_accurate() {
        // x0 must be a dictionary column for the snapshots to span the whole trajectory
        let m = build_wave2d(200, 10, 300).unwrap();
        let opts = OfflineOptions {
            snapshots: SnapshotOptions {
                include_initial_state: true,
                ..Default::default()
            },
            ..Default::default()
        };
        let d = build_dictionary(&m, &[vec![7.0], vec![8.5], vec![10.0]], &opts).unwrap();
        let mu = [8.5];
        let fom = integrate_full_order(&m, &mu, &NewtonSettings::default()).unwrap();
        let mut settings = OnlineSettings::new(BasisKind::Csvd, HyperReduction::None, SelectionConfig::new(600, d.state.len()));
        settings.size = SizeRule::Energy(1e-14);
        let r = run_online(&m, &d, &mu, &settings).unwrap();
        let approx = reconstruct_trajectory(&r, &d.state).unwrap();
        let e = crate::diagnostics::relative_reduction_error(&fom, &approx).unwrap();
        assert!(e <= 1e-6, "e_rel = {e:e}");
        let v = explicit_basis(&r.bases[0], &d.state);
        assert!(symplectic_defect(&v).unwrap() <= 1e-8);
    }

    #[test]
    fn hyper_reduced_run_stays_online() {
        let (m, d) = sg_dict(80, 100);
        let mut settings = OnlineSettings::new(BasisKind::Csvd, HyperReduction::Deim, SelectionConfig::new(20, 60));
        settings.size = SizeRule::Energy(1e-10);
        settings.hyper_tolerance = 1e-10;
        let r = run_online(&m, &d, &[0.81], &settings).unwrap();
        assert_eq!(r.windows.len(), 5);
        assert!(r.windows.iter().all(|w| w.hyper_size > 0));
        let fom = integrate_full_order(&m, &[0.81], &NewtonSettings::default()).unwrap();
        let approx = reconstruct_trajectory(&r, &d.state).unwrap();
        let e = crate::diagnostics::relative_reduction_error(&fom, &approx).unwrap();
        assert!(e < 1e-2, "e_rel = {e:e}");
    }

    #[test]
    fn nonlinear_model_without_hyper_reduction_is_rejected() {
        let (m, d) = sg_dict(20, 60);
        let settings = OnlineSettings::new(BasisKind::Csvd, HyperReduction::None, SelectionConfig::new(10, 10));
        assert!(matches!(run_online(&m, &d, &[0.8], &settings), Err(Error::Argument(_))));
    }

    #[test]
    fn unapproximated_oracle_runs() {
        // the explicit oracle for the hyper term is itself consistent with the FOM nonlinearity
        let (m, d) = sg_dict(30, 60);
        let idx: Vec<usize> = (0..300).step_by(5).collect();
        let b = db_csvd_basis(&d.state, &idx, SizeRule::Energy(1e-10), SpectralRoute::Refined).unwrap();
        let v = explicit_basis(&b, &d.state);
        let (sys, _) = assemble_reduced(&v, &m, &[0.8], ProjectionMode::Symplectic).unwrap();
        let y = DVector::from_fn(b.dim(), |i, _| 0.01 * i as f64);
        let x = &v * &y;
        let expect = crate::linalg::poisson_apply_rows(&v.transpose()) * m.gradient(&x, &[0.8]).unwrap();
        assert!((sys.rhs(&y) - expect).norm() <= 1e-9 * sys.rhs(&y).norm());
    }
}
