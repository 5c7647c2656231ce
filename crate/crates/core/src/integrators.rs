//! Implicit midpoint time stepping for full and reduced systems.

use log::debug;
use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{poisson_apply_vec, BandedLu, BandedMatrix};
use crate::model::AffineHamiltonianModel;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    pub t0: f64,
    pub t_end: f64,
    pub steps: usize,
}

impl TimeGrid {
    pub fn new(t0: f64, t_end: f64, steps: usize) -> Result<Self> {
        if steps == 0 {
            return Err(Error::Argument("time grid needs at least one step".into()));
        }
        if !(t_end > t0) || !t0.is_finite() || !t_end.is_finite() {
            return Err(Error::Argument(format!("invalid time interval [{t0}, {t_end}]")));
        }
        Ok(TimeGrid { t0, t_end, steps })
    }

    pub fn dt(&self) -> f64 {
        (self.t_end - self.t0) / self.steps as f64
    }

    pub fn time(&self, step: usize) -> f64 {
        self.t0 + step as f64 * self.dt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum JacobianMode {
    #[default]
    Analytic,
    FiniteDifference,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonSettings {
    /// Absolute tolerance on the 2-norm of the midpoint residual.
    pub tolerance: f64,
    pub max_iterations: usize,
    pub jacobian: JacobianMode,
}

impl Default for NewtonSettings {
    fn default() -> Self {
        NewtonSettings {
            tolerance: 1e-10,
            max_iterations: 25,
            jacobian: JacobianMode::Analytic,
        }
    }
}

impl NewtonSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.tolerance > 0.0) || self.max_iterations == 0 {
            return Err(Error::Argument(format!(
                "Newton tolerance {} and iteration cap {} must be positive",
                self.tolerance, self.max_iterations
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct NewtonOutcome {
    pub state: DVector<f64>,
    pub iterations: usize,
    pub residual: f64,
}

/// One step of a time integrator advancing `x(t)` to `x(t + Δt)`.
pub trait Stepper {
    fn step(&mut self, x: &DVector<f64>, t: f64) -> Result<DVector<f64>>;
}

/// Runs `grid.steps` steps from `x0`; column `i` of the result is the state at step `i`.
pub fn integrate<S: Stepper + ?Sized>(stepper: &mut S, x0: &DVector<f64>, grid: &TimeGrid) -> Result<DMatrix<f64>> {
    let mut traj = DMatrix::zeros(x0.len(), grid.steps + 1);
    traj.set_column(0, x0);
    let mut x = x0.clone();
    for i in 0..grid.steps {
        x = stepper.step(&x, grid.time(i)).map_err(|e| e.at_step(i + 1))?;
        traj.set_column(i + 1, &x);
    }
    Ok(traj)
}

/// Prefactorized midpoint map for `ẋ = A x + c` with a dense `A`.
#[derive(Debug, Clone)]
pub struct LinearMidpoint {
    lu: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    explicit_part: DMatrix<f64>,
    shift: DVector<f64>,
}

impl LinearMidpoint {
    pub fn new(a: &DMatrix<f64>, c: Option<&DVector<f64>>, dt: f64) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(Error::Dimension(format!("midpoint operator is {}x{}", n, a.ncols())));
        }
        let half = 0.5 * dt;
        let implicit = DMatrix::identity(n, n) - a * half;
        let explicit_part = DMatrix::identity(n, n) + a * half;
        let lu = implicit.lu();
        check_lu(&lu)?;
        let shift = match c {
            Some(c) => {
                if c.len() != n {
                    return Err(Error::Dimension(format!("constant term of length {} for system {n}", c.len())));
                }
                c * dt
            }
            None => DVector::zeros(n),
        };
        Ok(LinearMidpoint {
            lu,
            explicit_part,
            shift,
        })
    }

    pub fn advance(&self, x: &DVector<f64>) -> DVector<f64> {
        let rhs = &self.explicit_part * x + &self.shift;
        self.lu.solve(&rhs).expect("factorization checked at construction")
    }
}

impl Stepper for LinearMidpoint {
    fn step(&mut self, x: &DVector<f64>, _t: f64) -> Result<DVector<f64>> {
        Ok(self.advance(x))
    }
}

fn check_lu(lu: &nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>) -> Result<()> {
    let u = lu.u();
    let diag = u.diagonal().map(f64::abs);
    let (lo, hi) = (diag.min(), diag.max());
    if lo == 0.0 || !lo.is_finite() || lo <= 1e-14 * hi {
        return Err(Error::Singular(format!(
            "midpoint matrix pivot ratio {:e} (min {lo:e}, max {hi:e})",
            if hi > 0.0 { lo / hi } else { 0.0 }
        )));
    }
    Ok(())
}

/// Solves `(I − Δt/2·A) x⁺ = (I + Δt/2·A) x + Δt·c`.
pub fn midpoint_step_linear(a: &DMatrix<f64>, c: Option<&DVector<f64>>, x: &DVector<f64>, dt: f64) -> Result<DVector<f64>> {
    Ok(LinearMidpoint::new(a, c, dt)?.advance(x))
}

/// Newton iteration on `x⁺ − x − Δt f((x + x⁺)/2, t + Δt/2) = 0`.
///
/// `correction(mid, t_mid, r)` must return `δ` with `(I − Δt/2·∂f(mid)) δ = r`.
pub fn newton_midpoint<F, C>(
    mut rhs: F,
    mut correction: C,
    x: &DVector<f64>,
    t: f64,
    dt: f64,
    settings: &NewtonSettings,
) -> Result<NewtonOutcome>
where
    F: FnMut(&DVector<f64>, f64) -> Result<DVector<f64>>,
    C: FnMut(&DVector<f64>, f64, &DVector<f64>) -> Result<DVector<f64>>,
{
    settings.validate()?;
    let t_mid = t + 0.5 * dt;
    let mut next = x.clone();
    let mut residual = f64::INFINITY;
    for iteration in 0..=settings.max_iterations {
        let mid = (x + &next) * 0.5;
        let r = &next - x - rhs(&mid, t_mid)? * dt;
        residual = r.norm();
        if !residual.is_finite() {
            break;
        }
        if residual <= settings.tolerance {
            debug!("midpoint Newton converged in {iteration} iterations (residual {residual:e})");
            return Ok(NewtonOutcome {
                state: next,
                iterations: iteration,
                residual,
            });
        }
        if iteration == settings.max_iterations {
            break;
        }
        let delta = correction(&mid, t_mid, &r)?;
        next -= delta;
    }
    Err(Error::NewtonNonConvergence {
        iterations: settings.max_iterations,
        residual,
    })
}

/// Dense finite-difference Jacobian of `f` at `x`.
pub fn finite_difference_jacobian<F>(f: &mut F, x: &DVector<f64>, t: f64) -> Result<DMatrix<f64>>
where
    F: FnMut(&DVector<f64>, f64) -> Result<DVector<f64>>,
{
    let n = x.len();
    let mut jac = DMatrix::zeros(n, n);
    let mut probe = x.clone();
    for j in 0..n {
        let h = 1e-7 * x[j].abs().max(1.0);
        probe[j] = x[j] + h;
        let fp = f(&probe, t)?;
        probe[j] = x[j] - h;
        let fm = f(&probe, t)?;
        probe[j] = x[j];
        jac.set_column(j, &((fp - fm) / (2.0 * h)));
    }
    Ok(jac)
}

/// Midpoint step for `ẋ = f(x, t)` with a dense Jacobian `∂f/∂x`.
///
/// In finite-difference mode `jacobian` is never called.
pub fn midpoint_step_nonlinear<F, J>(
    rhs: F,
    mut jacobian: J,
    x: &DVector<f64>,
    t: f64,
    dt: f64,
    settings: &NewtonSettings,
) -> Result<NewtonOutcome>
where
    F: Fn(&DVector<f64>, f64) -> Result<DVector<f64>>,
    J: FnMut(&DVector<f64>, f64) -> Result<DMatrix<f64>>,
{
    let n = x.len();
    let correction = |mid: &DVector<f64>, t_mid: f64, r: &DVector<f64>| -> Result<DVector<f64>> {
        let jac = match settings.jacobian {
            JacobianMode::Analytic => jacobian(mid, t_mid)?,
            JacobianMode::FiniteDifference => finite_difference_jacobian(&mut |y: &DVector<f64>, s| rhs(y, s), mid, t_mid)?,
        };
        let m = DMatrix::identity(n, n) - jac * (0.5 * dt);
        let lu = m.lu();
        check_lu(&lu)?;
        lu.solve(r).ok_or_else(|| Error::Singular("Newton matrix".into()))
    };
    newton_midpoint(|y, s| rhs(y, s), correction, x, t, dt, settings)
}

/// Row position of `J e_a`: `(row, sign)` such that `(J M)[row, :] = sign · M[a, :]`.
#[inline]
fn poisson_row(a: usize, n: usize) -> (usize, f64) {
    if a >= n {
        (a - n, 1.0)
    } else {
        (a + n, -1.0)
    }
}

/// `q_i → 2i`, `p_i → 2i + 1`; keeps `J` local so the midpoint matrix is banded.
#[inline]
fn interleave(i: usize, n: usize) -> usize {
    if i < n {
        2 * i
    } else {
        2 * (i - n) + 1
    }
}

/// Implicit midpoint for the full-order model with a banded direct solver.
pub struct FullOrderStepper<'a> {
    model: &'a AffineHamiltonianModel,
    mu: Vec<f64>,
    dt: f64,
    settings: NewtonSettings,
    /// Entries of `J H(μ)` in interleaved numbering.
    linear_entries: Vec<(usize, usize, f64)>,
    kl: usize,
    ku: usize,
    forcing: Option<DVector<f64>>,
    linear_lu: Option<BandedLu>,
    pub newton_iterations: usize,
}

impl<'a> FullOrderStepper<'a> {
    pub fn new(model: &'a AffineHamiltonianModel, mu: &[f64], dt: f64, settings: NewtonSettings) -> Result<Self> {
        settings.validate()?;
        let n = model.half_dim;
        let h = model.operator(mu);
        let mut linear_entries = Vec::with_capacity(h.nnz());
        for (a, j, v) in h.triplet_iter() {
            let (row, sign) = poisson_row(a, n);
            linear_entries.push((interleave(row, n), interleave(j, n), sign * v));
        }
        let mut kl = 0;
        let mut ku = 0;
        let mut widen = |i: usize, j: usize| {
            if i > j {
                kl = kl.max(i - j);
            } else {
                ku = ku.max(j - i);
            }
        };
        for &(i, j, _) in &linear_entries {
            widen(i, j);
        }
        if let Some(nl) = &model.nonlinearity {
            for (a, read) in nl.reads.iter().enumerate() {
                if let Some(r) = read {
                    let (row, _) = poisson_row(a, n);
                    widen(interleave(row, n), interleave(*r, n));
                }
            }
        }
        let forcing = model.forcing_vector(mu).map(|b| poisson_apply_vec(&b) * dt);
        let mut stepper = FullOrderStepper {
            model,
            mu: mu.to_vec(),
            dt,
            settings,
            linear_entries,
            kl,
            ku,
            forcing,
            linear_lu: None,
            newton_iterations: 0,
        };
        if !model.is_nonlinear() {
            stepper.linear_lu = Some(stepper.factor_midpoint(&[])?);
        }
        Ok(stepper)
    }

    /// Factors `I − Δt/2 (J H + J ∂f)` in interleaved numbering.
    fn factor_midpoint(&self, nonlinear: &[(usize, usize, f64)]) -> Result<BandedLu> {
        let n = self.model.half_dim;
        let half = 0.5 * self.dt;
        let mut band = BandedMatrix::zeros(2 * n, self.kl, self.ku);
        for i in 0..2 * n {
            band.add(i, i, 1.0);
        }
        for &(i, j, v) in &self.linear_entries {
            band.add(i, j, -half * v);
        }
        for &(a, col, d) in nonlinear {
            let (row, sign) = poisson_row(a, n);
            band.add(interleave(row, n), interleave(col, n), -half * sign * d);
        }
        band.factor()
    }

    fn solve_interleaved(&self, lu: &BandedLu, rhs: &DVector<f64>) -> DVector<f64> {
        let n = self.model.half_dim;
        let mut buf = vec![0.0; 2 * n];
        for (i, v) in rhs.iter().enumerate() {
            buf[interleave(i, n)] = *v;
        }
        lu.solve_in_place(&mut buf);
        DVector::from_fn(2 * n, |i, _| buf[interleave(i, n)])
    }

    fn rhs(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.model.eval_rhs(x, 0.0, &self.mu)
    }
}

impl Stepper for FullOrderStepper<'_> {
    fn step(&mut self, x: &DVector<f64>, t: f64) -> Result<DVector<f64>> {
        if let Some(lu) = &self.linear_lu {
            let hx = self.model.apply_operator(x, &self.mu)?;
            let mut rhs = x + poisson_apply_vec(&hx) * (0.5 * self.dt);
            if let Some(c) = &self.forcing {
                rhs += c;
            }
            return Ok(self.solve_interleaved(lu, &rhs));
        }
        let dt = self.dt;
        let settings = self.settings;
        let outcome = match settings.jacobian {
            JacobianMode::Analytic => {
                let this = &*self;
                newton_midpoint(
                    |y, _| this.rhs(y),
                    |mid, _, r| {
                        let jac = this.model.nonlinearity_jacobian(mid, &this.mu);
                        let lu = this.factor_midpoint(&jac)?;
                        Ok(this.solve_interleaved(&lu, r))
                    },
                    x,
                    t,
                    dt,
                    &settings,
                )?
            }
            JacobianMode::FiniteDifference => {
                let this = &*self;
                midpoint_step_nonlinear(
                    |y, _| this.rhs(y),
                    |_, _| unreachable!("finite-difference mode never asks for the analytic Jacobian"),
                    x,
                    t,
                    dt,
                    &settings,
                )?
            }
        };
        self.newton_iterations += outcome.iterations;
        Ok(outcome.state)
    }
}

/// Full-order trajectory for parameter `mu`, one column per time step.
pub fn integrate_full_order(model: &AffineHamiltonianModel, mu: &[f64], settings: &NewtonSettings) -> Result<DMatrix<f64>> {
    let grid = model.time_grid(mu)?;
    let mut stepper = FullOrderStepper::new(model, mu, grid.dt(), *settings)?;
    let x0 = model.initial_value(mu);
    integrate(&mut stepper, &x0, &grid)
}
