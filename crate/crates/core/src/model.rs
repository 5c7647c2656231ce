//! Parametric full-order Hamiltonian models and the two benchmark problems.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use nalgebra_sparse::{CooMatrix, CsrMatrix};

use crate::error::{Error, Result};
use crate::instrument;
use crate::integrators::TimeGrid;

pub type ParamFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
pub type VectorFn = Arc<dyn Fn(&[f64]) -> DVector<f64> + Send + Sync>;
/// Shift added to the state entry read by output row `row` at parameter `mu`.
pub type ShiftFn = Arc<dyn Fn(usize, &[f64]) -> f64 + Send + Sync>;

/// `θ_q(μ) H_q`.
#[derive(Clone)]
pub struct AffineTerm {
    pub coefficient: ParamFn,
    pub matrix: CsrMatrix<f64>,
}

/// Scalar function `s` together with its derivative and an antiderivative `S`.
#[derive(Debug, Clone, Copy)]
pub struct ScalarMap {
    pub value: fn(f64) -> f64,
    pub derivative: fn(f64) -> f64,
    pub antiderivative: fn(f64) -> f64,
}

/// `f(x)_i = s(x_{reads[i]} + shift(i, μ))`, or zero for rows that read nothing.
#[derive(Clone)]
pub struct PointwiseNonlinearity {
    pub map: ScalarMap,
    pub reads: Vec<Option<usize>>,
    pub shift: ShiftFn,
}

impl PointwiseNonlinearity {
    pub fn shifts(&self, mu: &[f64]) -> Vec<f64> {
        self.reads
            .iter()
            .enumerate()
            .map(|(row, r)| if r.is_some() { (self.shift)(row, mu) } else { 0.0 })
            .collect()
    }
}

#[derive(Clone)]
pub enum InitialValue {
    /// `x0(μ) = Σ σ_r(μ) x0_r`
    Affine(Vec<(ParamFn, DVector<f64>)>),
    /// Evaluated from scratch for every parameter.
    General(VectorFn),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParameterDomain {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl ParameterDomain {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() || lower.is_empty() {
            return Err(Error::Dimension("parameter bounds must have equal nonzero length".into()));
        }
        if lower.iter().zip(&upper).any(|(l, u)| !(l < u)) {
            return Err(Error::Argument(format!("lower bounds {lower:?} not below upper {upper:?}")));
        }
        Ok(ParameterDomain { lower, upper })
    }

    pub fn scalar(lower: f64, upper: f64) -> Result<Self> {
        Self::new(vec![lower], vec![upper])
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn contains(&self, mu: &[f64]) -> bool {
        mu.len() == self.dim()
            && mu
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(m, (l, u))| *m >= *l && *m <= *u)
    }
}

#[derive(Clone)]
pub struct TimeSpec {
    pub t0: f64,
    pub end: ParamFn,
    pub steps: usize,
}

/// `ẋ = J ∇H(x; μ)` with `∇H(x; μ) = H(μ) x + f(x; μ) + b(μ)`.
#[derive(Clone)]
pub struct AffineHamiltonianModel {
    pub name: String,
    pub half_dim: usize,
    pub affine_terms: Vec<AffineTerm>,
    pub nonlinearity: Option<PointwiseNonlinearity>,
    pub forcing: Option<VectorFn>,
    pub initial: InitialValue,
    pub time: TimeSpec,
    pub domain: ParameterDomain,
}

impl fmt::Debug for AffineHamiltonianModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("AffineHamiltonianModel")
            .field("name", &self.name)
            .field("half_dim", &self.half_dim)
            .field("affine_terms", &self.affine_terms.len())
            .field("nonlinear", &self.nonlinearity.is_some())
            .field("forced", &self.forcing.is_some())
            .field("steps", &self.time.steps)
            .finish()
    }
}

impl AffineHamiltonianModel {
    pub fn dim(&self) -> usize {
        2 * self.half_dim
    }

    pub fn validate(&self) -> Result<()> {
        let n2 = self.dim();
        for (q, term) in self.affine_terms.iter().enumerate() {
            let m = &term.matrix;
            if m.nrows() != n2 || m.ncols() != n2 {
                return Err(Error::Dimension(format!("affine term {q} is {}x{}", m.nrows(), m.ncols())));
            }
            for (i, j, v) in m.triplet_iter() {
                let t = m.get_entry(j, i).map(|e| e.into_value()).unwrap_or(0.0);
                if (t - v).abs() > 1e-12 * v.abs().max(1.0) {
                    return Err(Error::Argument(format!("affine term {q} is not symmetric at ({i}, {j})")));
                }
            }
        }
        if let Some(nl) = &self.nonlinearity {
            if nl.reads.len() != n2 {
                return Err(Error::Dimension(format!("nonlinearity has {} rows", nl.reads.len())));
            }
            if nl.reads.iter().flatten().any(|&r| r >= n2) {
                return Err(Error::Argument("nonlinearity reads past the state".into()));
            }
        }
        if let InitialValue::Affine(terms) = &self.initial {
            if terms.iter().any(|(_, v)| v.len() != n2) {
                return Err(Error::Dimension("initial value term has wrong length".into()));
            }
        }
        if self.time.steps == 0 {
            return Err(Error::Argument("time grid needs at least one step".into()));
        }
        Ok(())
    }

    pub fn is_nonlinear(&self) -> bool {
        self.nonlinearity.is_some()
    }

    pub fn time_grid(&self, mu: &[f64]) -> Result<TimeGrid> {
        TimeGrid::new(self.time.t0, (self.time.end)(mu), self.time.steps)
    }

    pub fn coefficients(&self, mu: &[f64]) -> Vec<f64> {
        self.affine_terms.iter().map(|t| (t.coefficient)(mu)).collect()
    }

    /// Assembled `H(μ)`.
    pub fn operator(&self, mu: &[f64]) -> CsrMatrix<f64> {
        let n2 = self.dim();
        let mut coo = CooMatrix::new(n2, n2);
        for term in &self.affine_terms {
            let theta = (term.coefficient)(mu);
            if theta == 0.0 {
                continue;
            }
            for (i, j, v) in term.matrix.triplet_iter() {
                coo.push(i, j, theta * v);
            }
        }
        CsrMatrix::from(&coo)
    }

    fn check_state(&self, x: &DVector<f64>) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::Dimension(format!("state length {} but model dimension {}", x.len(), self.dim())));
        }
        Ok(())
    }

    /// `H(μ) x` without assembling `H(μ)`.
    pub fn apply_operator(&self, x: &DVector<f64>, mu: &[f64]) -> Result<DVector<f64>> {
        self.check_state(x)?;
        instrument::record_full_dim();
        let mut out = DVector::zeros(self.dim());
        for term in &self.affine_terms {
            let theta = (term.coefficient)(mu);
            if theta == 0.0 {
                continue;
            }
            let m = &term.matrix;
            for (i, row) in m.row_iter().enumerate() {
                let mut s = 0.0;
                for (&j, &v) in row.col_indices().iter().zip(row.values()) {
                    s += v * x[j];
                }
                out[i] += theta * s;
            }
        }
        Ok(out)
    }

    /// Full `f(x; μ)`; zero vector for linear models.
    pub fn nonlinearity_values(&self, x: &DVector<f64>, mu: &[f64]) -> Result<DVector<f64>> {
        self.check_state(x)?;
        instrument::record_full_dim();
        let mut out = DVector::zeros(self.dim());
        if let Some(nl) = &self.nonlinearity {
            for (row, read) in nl.reads.iter().enumerate() {
                if let Some(r) = read {
                    out[row] = (nl.map.value)(x[*r] + (nl.shift)(row, mu));
                }
            }
        }
        Ok(out)
    }

    /// Selected components of `f`. `entries[j]` carries the state entry read by `rows[j]`.
    pub fn eval_nonlinearity_rows(&self, rows: &[usize], entries: &[Option<f64>], mu: &[f64]) -> Result<Vec<f64>> {
        if rows.len() != entries.len() {
            return Err(Error::Contract(format!(
                "{} rows requested but {} state entries supplied",
                rows.len(),
                entries.len()
            )));
        }
        let Some(nl) = &self.nonlinearity else {
            return Ok(vec![0.0; rows.len()]);
        };
        rows.iter()
            .zip(entries)
            .map(|(&row, entry)| {
                if row >= self.dim() {
                    return Err(Error::Argument(format!("row {row} outside state of length {}", self.dim())));
                }
                match (nl.reads[row], entry) {
                    (None, _) => Ok(0.0),
                    (Some(r), None) => Err(Error::Contract(format!(
                        "row {row} reads state entry {r}, which was not supplied"
                    ))),
                    (Some(_), Some(v)) => Ok((nl.map.value)(v + (nl.shift)(row, mu))),
                }
            })
            .collect()
    }

    pub fn forcing_vector(&self, mu: &[f64]) -> Option<DVector<f64>> {
        self.forcing.as_ref().map(|b| {
            instrument::record_full_dim();
            b(mu)
        })
    }

    pub fn initial_value(&self, mu: &[f64]) -> DVector<f64> {
        instrument::record_full_dim();
        match &self.initial {
            InitialValue::Affine(terms) => {
                let mut x = DVector::zeros(self.dim());
                for (sigma, v) in terms {
                    x.axpy(sigma(mu), v, 1.0);
                }
                x
            }
            InitialValue::General(f) => f(mu),
        }
    }

    /// `∇H(x; μ)`.
    pub fn gradient(&self, x: &DVector<f64>, mu: &[f64]) -> Result<DVector<f64>> {
        let mut g = self.apply_operator(x, mu)?;
        if self.nonlinearity.is_some() {
            g += self.nonlinearity_values(x, mu)?;
        }
        if let Some(b) = self.forcing_vector(mu) {
            g += b;
        }
        Ok(g)
    }

    /// `J ∇H(x; μ)`; the system is autonomous so `t` is unused.
    pub fn eval_rhs(&self, x: &DVector<f64>, _t: f64, mu: &[f64]) -> Result<DVector<f64>> {
        let g = self.gradient(x, mu)?;
        Ok(crate::linalg::poisson_apply_vec(&g))
    }

    pub fn hamiltonian(&self, x: &DVector<f64>, mu: &[f64]) -> Result<f64> {
        let hx = self.apply_operator(x, mu)?;
        let mut h = 0.5 * x.dot(&hx);
        if let Some(nl) = &self.nonlinearity {
            for (row, read) in nl.reads.iter().enumerate() {
                if let Some(r) = read {
                    h += (nl.map.antiderivative)(x[*r] + (nl.shift)(row, mu));
                }
            }
        }
        if let Some(b) = self.forcing_vector(mu) {
            h += b.dot(x);
        }
        Ok(h)
    }

    /// Nonzeros `(row, col, ∂f_row/∂x_col)` of the nonlinearity Jacobian.
    pub fn nonlinearity_jacobian(&self, x: &DVector<f64>, mu: &[f64]) -> Vec<(usize, usize, f64)> {
        let Some(nl) = &self.nonlinearity else {
            return Vec::new();
        };
        nl.reads
            .iter()
            .enumerate()
            .filter_map(|(row, read)| read.map(|r| (row, r, (nl.map.derivative)(x[r] + (nl.shift)(row, mu)))))
            .collect()
    }

    /// Dense `H(μ)`; for small test problems only.
    pub fn dense_operator(&self, mu: &[f64]) -> DMatrix<f64> {
        let mut d = DMatrix::zeros(self.dim(), self.dim());
        for (i, j, v) in self.operator(mu).triplet_iter() {
            d[(i, j)] += v;
        }
        d
    }
}

/// Three-point `−d²/dx²` on `n` interior points with spacing `h`.
fn negative_laplacian_1d(n: usize, h: f64) -> Vec<(usize, usize, f64)> {
    let w = 1.0 / (h * h);
    let mut t = Vec::with_capacity(3 * n);
    for i in 0..n {
        if i > 0 {
            t.push((i, i - 1, -w));
        }
        t.push((i, i, 2.0 * w));
        if i + 1 < n {
            t.push((i, i + 1, -w));
        }
    }
    t
}

fn csr_from_triplets(dim: usize, triplets: impl IntoIterator<Item = (usize, usize, f64)>) -> CsrMatrix<f64> {
    let mut coo = CooMatrix::new(dim, dim);
    for (i, j, v) in triplets {
        coo.push(i, j, v);
    }
    CsrMatrix::from(&coo)
}

/// `blockdiag(0, I_N)` of size `2N`.
fn momentum_identity(n: usize) -> CsrMatrix<f64> {
    csr_from_triplets(2 * n, (0..n).map(|i| (n + i, n + i, 1.0)))
}

/// Cubic bump of the wave benchmark's initial displacement.
pub fn wave_bump(s: f64) -> f64 {
    let a = s.abs();
    if a <= 1.0 {
        1.0 - 1.5 * a * a + 0.75 * a * a * a
    } else if a <= 2.0 {
        0.25 * (2.0 - a).powi(3)
    } else {
        0.0
    }
}

/// Derivative of [`wave_bump`].
pub fn wave_bump_slope(s: f64) -> f64 {
    let a = s.abs();
    if a <= 1.0 {
        -3.0 * s + 2.25 * s * a
    } else if a <= 2.0 {
        0.25 * (-12.0 * s.signum() + 12.0 * s - 3.0 * s * a)
    } else {
        0.0
    }
}

/// 2D linear wave on `(0,1)×(0,0.2)` with wave speed `μ ∈ [7, 10]`.
///
/// Grid points are ordered with the second coordinate running fastest.
pub fn build_wave2d(nx1: usize, nx2: usize, steps: usize) -> Result<AffineHamiltonianModel> {
    if nx1 < 2 || nx2 < 2 {
        return Err(Error::Argument(format!("wave grid {nx1}x{nx2} too small")));
    }
    let n = nx1 * nx2;
    let (len1, len2) = (1.0, 0.2);
    let h1 = len1 / (nx1 + 1) as f64;
    let h2 = len2 / (nx2 + 1) as f64;

    let mut stiffness = Vec::new();
    for (i, k, v) in negative_laplacian_1d(nx1, h1) {
        for j in 0..nx2 {
            stiffness.push((i * nx2 + j, k * nx2 + j, v));
        }
    }
    for (j, l, v) in negative_laplacian_1d(nx2, h2) {
        for i in 0..nx1 {
            stiffness.push((i * nx2 + j, i * nx2 + l, v));
        }
    }
    let stiffness = csr_from_triplets(2 * n, stiffness);

    let mut displacement = DVector::zeros(2 * n);
    let mut velocity = DVector::zeros(2 * n);
    for i in 0..nx1 {
        let xi1 = (i + 1) as f64 * h1;
        let s = 50.0 * (xi1 - 0.9 * len1);
        for j in 0..nx2 {
            displacement[i * nx2 + j] = wave_bump(s);
            velocity[n + i * nx2 + j] = 50.0 * wave_bump_slope(s);
        }
    }

    let model = AffineHamiltonianModel {
        name: "wave2d".into(),
        half_dim: n,
        affine_terms: vec![
            AffineTerm {
                coefficient: Arc::new(|mu: &[f64]| mu[0] * mu[0]),
                matrix: stiffness,
            },
            AffineTerm {
                coefficient: Arc::new(|_: &[f64]| 1.0),
                matrix: momentum_identity(n),
            },
        ],
        nonlinearity: None,
        forcing: None,
        initial: InitialValue::Affine(vec![
            (Arc::new(|_: &[f64]| 1.0), displacement),
            (Arc::new(|mu: &[f64]| mu[0]), velocity),
        ]),
        time: TimeSpec {
            t0: 0.0,
            end: Arc::new(|mu: &[f64]| 2.0 / mu[0]),
            steps,
        },
        domain: ParameterDomain::scalar(7.0, 10.0)?,
    };
    model.validate()?;
    Ok(model)
}

fn kink_width(v: f64) -> f64 {
    (1.0 - v * v).sqrt()
}

/// Travelling kink `4 arctan(exp((z − 10)/√(1−v²)))` at `t = 0`.
pub fn kink_displacement(z: f64, v: f64) -> f64 {
    4.0 * ((z - 10.0) / kink_width(v)).exp().atan()
}

pub fn kink_velocity(z: f64, v: f64) -> f64 {
    let a = kink_width(v);
    let phi = ((z - 10.0) / a).exp();
    if !phi.is_finite() {
        return 0.0;
    }
    -4.0 * v / a * phi / (1.0 + phi * phi)
}

/// `−∂²/∂z²` of the kink, which moves to the forcing after homogenization.
pub fn kink_forcing(z: f64, v: f64) -> f64 {
    let a = kink_width(v);
    let w = (z - 10.0) / a;
    2.0 / (a * a) * w.tanh() / w.cosh()
}

/// Exact travelling-kink solution of the continuous problem.
pub fn kink_solution(z: f64, t: f64, v: f64) -> f64 {
    4.0 * ((z - 10.0 - v * t) / kink_width(v)).exp().atan()
}

fn sine(u: f64) -> f64 {
    u.sin()
}

fn cosine(u: f64) -> f64 {
    u.cos()
}

fn one_minus_cosine(u: f64) -> f64 {
    1.0 - u.cos()
}

/// 1D Sine-Gordon on `(0, 50)` with kink speed `μ ∈ [0.7, 0.9]`, homogenized by the initial kink.
pub fn build_sine_gordon(nz: usize, steps: usize) -> Result<AffineHamiltonianModel> {
    if nz < 2 {
        return Err(Error::Argument(format!("Sine-Gordon grid {nz} too small")));
    }
    let n = nz;
    let len = 50.0;
    let h = len / (n + 1) as f64;
    let nodes: Arc<Vec<f64>> = Arc::new((1..=n).map(|i| i as f64 * h).collect());

    let mut triplets = negative_laplacian_1d(n, h);
    triplets.extend((0..n).map(|i| (n + i, n + i, 1.0)));
    let operator = csr_from_triplets(2 * n, triplets);

    let reads = (0..2 * n).map(|i| (i < n).then_some(i)).collect();
    let shift_nodes = Arc::clone(&nodes);
    let forcing_nodes = Arc::clone(&nodes);
    let initial_nodes = Arc::clone(&nodes);

    let model = AffineHamiltonianModel {
        name: "sine_gordon".into(),
        half_dim: n,
        affine_terms: vec![AffineTerm {
            coefficient: Arc::new(|_: &[f64]| 1.0),
            matrix: operator,
        }],
        nonlinearity: Some(PointwiseNonlinearity {
            map: ScalarMap {
                value: sine,
                derivative: cosine,
                antiderivative: one_minus_cosine,
            },
            reads,
            shift: Arc::new(move |row: usize, mu: &[f64]| kink_displacement(shift_nodes[row], mu[0])),
        }),
        forcing: Some(Arc::new(move |mu: &[f64]| {
            let mut b = DVector::zeros(2 * n);
            for (i, z) in forcing_nodes.iter().enumerate() {
                b[i] = kink_forcing(*z, mu[0]);
            }
            b
        })),
        initial: InitialValue::General(Arc::new(move |mu: &[f64]| {
            let mut x = DVector::zeros(2 * n);
            for (i, z) in initial_nodes.iter().enumerate() {
                x[n + i] = kink_velocity(*z, mu[0]);
            }
            x
        })),
        time: TimeSpec {
            t0: 0.0,
            end: Arc::new(|mu: &[f64]| 30.0 / mu[0]),
            steps,
        },
        domain: ParameterDomain::scalar(0.7, 0.9)?,
    };
    model.validate()?;
    Ok(model)
}

/// Interior grid nodes of the Sine-Gordon discretization.
pub fn sine_gordon_nodes(nz: usize) -> Vec<f64> {
    let h = 50.0 / (nz + 1) as f64;
    (1..=nz).map(|i| i as f64 * h).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn fd_gradient(model: &AffineHamiltonianModel, x: &DVector<f64>, mu: &[f64]) -> DVector<f64> {
        let h = 1e-6;
        DVector::from_fn(x.len(), |i, _| {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[i] += h;
            xm[i] -= h;
            (model.hamiltonian(&xp, mu).unwrap() - model.hamiltonian(&xm, mu).unwrap()) / (2.0 * h)
        })
    }

    #[test]
    fn bump_at_center() {
        assert_eq!(wave_bump(0.0), 1.0);
        assert_eq!(wave_bump_slope(0.0), 0.0);
    }

    #[test]
    fn bump_slope_matches_finite_differences() {
        for &s in &[-1.9, -1.5, -1.0001, -0.7, -0.2, 0.3, 0.99, 1.2, 1.8] {
            let fd = (wave_bump(s + 1e-7) - wave_bump(s - 1e-7)) / 2e-7;
            assert!((fd - wave_bump_slope(s)).abs() < 1e-6, "s = {s}");
        }
    }

    #[test]
    fn wave_paper_grid_dimension() {
        let m = build_wave2d(2000, 20, 600).unwrap();
        assert_eq!(m.dim(), 80000);
    }

    #[test]
    fn wave_zero_state_has_zero_energy_and_rhs() {
        let m = build_wave2d(6, 3, 10).unwrap();
        let z = DVector::zeros(m.dim());
        assert_eq!(m.hamiltonian(&z, &[8.0]).unwrap(), 0.0);
        assert_eq!(m.eval_rhs(&z, 0.0, &[8.0]).unwrap(), z);
    }

    #[test]
    fn wave_rhs_is_affine_in_coefficients() {
        let m = build_wave2d(5, 4, 10).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = DVector::from_fn(m.dim(), |_, _| rng.random_range(-1.0..1.0));
        let mu = [8.5];
        let k = m.affine_terms[0].matrix.clone();
        let i = m.affine_terms[1].matrix.clone();
        let combo = (&k * &DMatrix::from_column_slice(x.len(), 1, x.as_slice())) * (mu[0] * mu[0])
            + &i * &DMatrix::from_column_slice(x.len(), 1, x.as_slice());
        let expected = crate::linalg::poisson_apply_vec(&DVector::from_column_slice(combo.as_slice()));
        let rhs = m.eval_rhs(&x, 0.0, &mu).unwrap();
        assert!((rhs - expected).norm() < 1e-9);
    }

    #[test]
    fn wave_operator_positive_definite() {
        let m = build_wave2d(10, 4, 10).unwrap();
        for mu in [7.0, 10.0] {
            let e = m.dense_operator(&[mu]).symmetric_eigen();
            assert!(e.eigenvalues.min() > 0.0);
        }
    }

    #[test]
    fn kink_centre_is_pi() {
        for v in [0.7, 0.8, 0.9] {
            assert!((kink_displacement(10.0, v) - PI).abs() < 1e-15);
        }
    }

    #[test]
    fn kink_forcing_is_minus_curvature() {
        let v = 0.8;
        for z in [5.0, 9.5, 10.7, 14.0] {
            let h = 1e-4;
            let curv = (kink_displacement(z + h, v) - 2.0 * kink_displacement(z, v) + kink_displacement(z - h, v)) / (h * h);
            assert!((kink_forcing(z, v) + curv).abs() < 1e-5, "z = {z}");
        }
    }

    #[test]
    fn sine_gordon_paper_grid_dimension() {
        assert_eq!(build_sine_gordon(5000, 400).unwrap().dim(), 10000);
    }

    #[test]
    fn sine_gordon_momentum_rows_of_nonlinearity_vanish() {
        let m = build_sine_gordon(20, 10).unwrap();
        let x = DVector::from_fn(40, |i, _| 0.1 * i as f64);
        let f = m.nonlinearity_values(&x, &[0.8]).unwrap();
        assert!(f.rows(20, 20).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn selected_rows_agree_with_full_evaluation() {
        let n = 20;
        let m = build_sine_gordon(n, 10).unwrap();
        let mu = [0.75];
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = DVector::from_fn(2 * n, |_, _| rng.random_range(-1.0..1.0));
        let full = m.nonlinearity_values(&x, &mu).unwrap();
        let rows: Vec<usize> = (0..2 * n).collect();
        let entries: Vec<Option<f64>> = rows.iter().map(|&r| (r < n).then(|| x[r])).collect();
        let sel = m.eval_nonlinearity_rows(&rows, &entries, &mu).unwrap();
        for r in rows {
            assert_eq!(sel[r], full[r]);
        }
        let one = m.eval_nonlinearity_rows(&[3], &[Some(0.2)], &mu).unwrap();
        assert_eq!(one[0], (0.2 + kink_displacement(4.0 * 50.0 / 21.0, 0.75)).sin());
        assert_eq!(m.eval_nonlinearity_rows(&[n + 2], &[None], &mu).unwrap(), vec![0.0]);
        assert!(matches!(
            m.eval_nonlinearity_rows(&[1], &[None], &mu),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn rhs_matches_gradient_of_hamiltonian() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let sg = build_sine_gordon(50, 10).unwrap();
        let wave = build_wave2d(5, 4, 10).unwrap();
        for (model, mu) in [(&sg, [0.83]), (&wave, [9.1])] {
            for _ in 0..5 {
                let x = DVector::from_fn(model.dim(), |_, _| rng.random_range(-1.0..1.0));
                let rhs = model.eval_rhs(&x, 0.0, &mu).unwrap();
                let fd = crate::linalg::poisson_apply_vec(&fd_gradient(model, &x, &mu));
                assert!((&rhs - &fd).norm() <= 1e-6 * rhs.norm(), "{}", model.name);
            }
        }
    }

    #[test]
    fn validate_rejects_nonsymmetric_term() {
        let mut m = build_wave2d(3, 2, 5).unwrap();
        m.affine_terms[0].matrix = csr_from_triplets(12, [(0, 1, 1.0)]);
        assert!(m.validate().is_err());
    }
}
