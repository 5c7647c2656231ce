//! Reduced Hamiltonian systems `ẏ = A y + B g(y) + c` and their midpoint stepping.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::integrators::{
    finite_difference_jacobian, newton_midpoint, JacobianMode, LinearMidpoint, NewtonSettings, Stepper,
};
use crate::model::ScalarMap;

/// Interpolated nonlinearity `B g(y)` with `g(y)_j = s((R y)_j + shift_j)` on the active rows.
#[derive(Debug, Clone)]
pub struct HyperTerm {
    /// `B`, reduced dimension × number of interpolation rows.
    pub coupling: DMatrix<f64>,
    /// `R`, one row per interpolation point mapping `y` to the state entry that point reads.
    pub rows: DMatrix<f64>,
    pub shifts: Vec<f64>,
    /// Rows whose nonlinearity reads no state entry contribute zero.
    pub active: Vec<bool>,
    pub map: ScalarMap,
    /// Global indices of the interpolation rows in the full state.
    pub global_rows: Vec<usize>,
}

impl HyperTerm {
    pub fn len(&self) -> usize {
        self.shifts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.shifts.is_empty()
    }

    pub fn samples(&self, y: &DVector<f64>) -> DVector<f64> {
        let ry = &self.rows * y;
        DVector::from_fn(self.len(), |j, _| {
            if self.active[j] {
                (self.map.value)(ry[j] + self.shifts[j])
            } else {
                0.0
            }
        })
    }

    fn sample_derivatives(&self, y: &DVector<f64>) -> DVector<f64> {
        let ry = &self.rows * y;
        DVector::from_fn(self.len(), |j, _| {
            if self.active[j] {
                (self.map.derivative)(ry[j] + self.shifts[j])
            } else {
                0.0
            }
        })
    }

    pub fn apply(&self, y: &DVector<f64>) -> DVector<f64> {
        &self.coupling * self.samples(y)
    }

    pub fn jacobian(&self, y: &DVector<f64>) -> DMatrix<f64> {
        let d = self.sample_derivatives(y);
        let mut scaled = self.rows.clone();
        for (j, mut row) in scaled.row_iter_mut().enumerate() {
            row *= d[j];
        }
        &self.coupling * scaled
    }
}

#[derive(Debug, Clone)]
pub struct ReducedSystem {
    pub operator: DMatrix<f64>,
    pub forcing: Option<DVector<f64>>,
    pub hyper: Option<HyperTerm>,
}

impl ReducedSystem {
    pub fn new(operator: DMatrix<f64>, forcing: Option<DVector<f64>>, hyper: Option<HyperTerm>) -> Result<Self> {
        let n = operator.nrows();
        if operator.ncols() != n {
            return Err(Error::Dimension(format!("reduced operator is {}x{}", n, operator.ncols())));
        }
        if forcing.as_ref().is_some_and(|c| c.len() != n) {
            return Err(Error::Dimension("reduced forcing length mismatch".into()));
        }
        if let Some(h) = &hyper {
            if h.coupling.nrows() != n || h.rows.ncols() != n || h.coupling.ncols() != h.len() || h.rows.nrows() != h.len() {
                return Err(Error::Dimension("hyper-reduction shapes do not match the reduced system".into()));
            }
        }
        Ok(ReducedSystem {
            operator,
            forcing,
            hyper,
        })
    }

    pub fn dim(&self) -> usize {
        self.operator.nrows()
    }

    pub fn rhs(&self, y: &DVector<f64>) -> DVector<f64> {
        let mut f = &self.operator * y;
        if let Some(h) = &self.hyper {
            f += h.apply(y);
        }
        if let Some(c) = &self.forcing {
            f += c;
        }
        f
    }

    pub fn jacobian(&self, y: &DVector<f64>) -> DMatrix<f64> {
        match &self.hyper {
            Some(h) => &self.operator + h.jacobian(y),
            None => self.operator.clone(),
        }
    }

    pub fn stepper(&self, dt: f64, settings: NewtonSettings) -> Result<ReducedStepper<'_>> {
        settings.validate()?;
        let linear = if self.hyper.is_none() {
            Some(LinearMidpoint::new(&self.operator, self.forcing.as_ref(), dt)?)
        } else {
            None
        };
        Ok(ReducedStepper {
            system: self,
            dt,
            settings,
            linear,
            newton_iterations: 0,
        })
    }
}

/// Midpoint stepper bound to one reduced system and step size.
pub struct ReducedStepper<'a> {
    system: &'a ReducedSystem,
    dt: f64,
    settings: NewtonSettings,
    linear: Option<LinearMidpoint>,
    pub newton_iterations: usize,
}

impl Stepper for ReducedStepper<'_> {
    fn step(&mut self, y: &DVector<f64>, t: f64) -> Result<DVector<f64>> {
        if let Some(lin) = &self.linear {
            return Ok(lin.advance(y));
        }
        let sys = self.system;
        let n = sys.dim();
        let dt = self.dt;
        let mode = self.settings.jacobian;
        let outcome = newton_midpoint(
            |x, _| Ok(sys.rhs(x)),
            |mid, t_mid, r| {
                let jac = match mode {
                    JacobianMode::Analytic => sys.jacobian(mid),
                    JacobianMode::FiniteDifference => {
                        finite_difference_jacobian(&mut |x: &DVector<f64>, _| Ok(sys.rhs(x)), mid, t_mid)?
                    }
                };
                let m = DMatrix::identity(n, n) - jac * (0.5 * dt);
                m.lu().solve(r).ok_or_else(|| Error::Singular("reduced Newton matrix".into()))
            },
            y,
            t,
            dt,
            &self.settings,
        )?;
        self.newton_iterations += outcome.iterations;
        Ok(outcome.state)
    }
}
