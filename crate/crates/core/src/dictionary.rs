//! Offline phase: labeled snapshot dictionaries and every product the online phase needs.

use log::{info, warn};
use nalgebra::{Complex, DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::instrument;
use crate::integrators::{integrate_full_order, NewtonSettings};
use crate::linalg::{self, poisson_apply_columns, poisson_apply_vec};
use crate::model::{AffineHamiltonianModel, InitialValue};
use crate::reduction_std::{deim, pod};

/// Parameter-time label of one snapshot.
#[derive(Debug, Clone, PartialEq)]
pub struct Label {
    pub mu: Vec<f64>,
    pub t: f64,
}

impl Label {
    pub fn new(mu: Vec<f64>, t: f64) -> Result<Self> {
        if mu.iter().any(|v| !v.is_finite()) || !t.is_finite() {
            return Err(Error::Argument(format!("non-finite label ({mu:?}, {t})")));
        }
        Ok(Label { mu, t })
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SnapshotOptions {
    /// Store the step-0 state as well as steps 1..n_t.
    pub include_initial_state: bool,
    pub newton: NewtonSettings,
}

#[derive(Debug, Clone)]
pub struct SnapshotSet {
    pub states: DMatrix<f64>,
    pub labels: Vec<Label>,
    /// Nonlinearity evaluated at every stored state; `None` for linear models.
    pub nonlinear: Option<DMatrix<f64>>,
}

/// Solves the full-order model at every training parameter, in parallel over parameters.
pub fn generate_snapshots(
    model: &AffineHamiltonianModel,
    training: &[Vec<f64>],
    options: &SnapshotOptions,
) -> Result<SnapshotSet> {
    if training.is_empty() {
        return Err(Error::Argument("no training parameters".into()));
    }
    for mu in training {
        if !model.domain.contains(mu) {
            return Err(Error::Argument(format!("training parameter {mu:?} outside the parameter domain")));
        }
    }
    let first = usize::from(!options.include_initial_state);
    let solved: Vec<Result<(DMatrix<f64>, Vec<Label>, Option<DMatrix<f64>>)>> = training
        .par_iter()
        .map(|mu| {
            let wrap = |e: Error| Error::Snapshot {
                mu: mu.clone(),
                source: Box::new(e),
            };
            let grid = model.time_grid(mu).map_err(wrap)?;
            let traj = integrate_full_order(model, mu, &options.newton).map_err(wrap)?;
            let keep = traj.columns(first, traj.ncols() - first).into_owned();
            let labels = (first..traj.ncols())
                .map(|j| Label::new(mu.clone(), grid.time(j)))
                .collect::<Result<Vec<_>>>()?;
            let f = if model.is_nonlinear() {
                let cols = keep
                    .column_iter()
                    .map(|c| model.nonlinearity_values(&c.into_owned(), mu))
                    .collect::<Result<Vec<_>>>()
                    .map_err(wrap)?;
                Some(DMatrix::from_columns(&cols))
            } else {
                None
            };
            Ok((keep, labels, f))
        })
        .collect();
    let mut blocks = Vec::with_capacity(solved.len());
    for s in solved {
        blocks.push(s?);
    }
    let total: usize = blocks.iter().map(|b| b.0.ncols()).sum();
    let dim = model.dim();
    let mut states = DMatrix::zeros(dim, total);
    let mut nonlinear = model.is_nonlinear().then(|| DMatrix::zeros(dim, total));
    let mut labels = Vec::with_capacity(total);
    let mut at = 0;
    for (x, l, f) in blocks {
        let n = x.ncols();
        states.columns_mut(at, n).copy_from(&x);
        if let (Some(dst), Some(f)) = (nonlinear.as_mut(), f) {
            dst.columns_mut(at, n).copy_from(&f);
        }
        labels.extend(l);
        at += n;
    }
    instrument::record_offline();
    Ok(SnapshotSet {
        states,
        labels,
        nonlinear,
    })
}

/// Products of one affine Hamiltonian term with the snapshots.
#[derive(Debug, Clone, PartialEq)]
pub struct OperatorBlocks {
    /// `Xᵀ H_q X`
    pub hx: DMatrix<f64>,
    /// `Xᵀ H_q J X`
    pub hx_jr: DMatrix<f64>,
    /// `Xᵀ J H_q X`
    pub hx_jl: DMatrix<f64>,
    /// `Xᵀ J H_q J X`
    pub hx_jj: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StateDictionary {
    pub states: DMatrix<f64>,
    pub labels: Vec<Label>,
    /// `XᵀX`
    pub gram: DMatrix<f64>,
    /// `XᵀJX`
    pub gram_j: DMatrix<f64>,
    pub operator_blocks: Vec<OperatorBlocks>,
    /// `Xᵀ x0_r` per affine initial-value term.
    pub initial_x: Vec<DVector<f64>>,
    /// `Xᵀ J x0_r` per affine initial-value term.
    pub initial_xj: Vec<DVector<f64>>,
    /// Upper-trapezoidal `R` of `X = QR`, so `RᵀR = XᵀX`.
    pub factor: DMatrix<f64>,
    /// Upper-trapezoidal `R` of `X_q − i X_p = QR`, so `RᴴR = XᵀX − i XᵀJX`.
    pub factor_c: DMatrix<Complex<f64>>,
    /// `Qᵀ J H_q Q` per affine term, `Q` the orthonormal factor of `X`.
    pub factor_blocks: Vec<DMatrix<f64>>,
    /// Operator blocks of the real embedding `[Re Q_Z; −Im Q_Z]` of the complex factor.
    pub factor_blocks_c: Vec<OperatorBlocks>,
    id: u64,
}

impl StateDictionary {
    pub fn len(&self) -> usize {
        self.states.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.states.ncols() == 0
    }

    pub fn dim(&self) -> usize {
        self.states.nrows()
    }

    pub fn param_dim(&self) -> usize {
        self.labels.first().map_or(0, |l| l.mu.len())
    }

    /// Content fingerprint used to check that two online bases share a dictionary.
    pub fn id(&self) -> u64 {
        self.id
    }

    #[allow(clippy::too_many_arguments)]
    pub(crate) fn from_parts(
        states: DMatrix<f64>,
        labels: Vec<Label>,
        gram: DMatrix<f64>,
        gram_j: DMatrix<f64>,
        operator_blocks: Vec<OperatorBlocks>,
        initial_x: Vec<DVector<f64>>,
        initial_xj: Vec<DVector<f64>>,
        factor: DMatrix<f64>,
        factor_c: DMatrix<Complex<f64>>,
        factor_blocks: Vec<DMatrix<f64>>,
        factor_blocks_c: Vec<OperatorBlocks>,
    ) -> Self {
        let id = fingerprint(&gram, states.nrows());
        StateDictionary {
            states,
            labels,
            gram,
            gram_j,
            operator_blocks,
            initial_x,
            initial_xj,
            factor,
            factor_c,
            factor_blocks,
            factor_blocks_c,
            id,
        }
    }
}

fn fingerprint(gram: &DMatrix<f64>, rows: usize) -> u64 {
    // FNV-1a over the shape and the Gram entries
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let mut eat = |v: u64| {
        for b in v.to_le_bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    };
    eat(rows as u64);
    eat(gram.nrows() as u64);
    for v in gram.iter() {
        eat(v.to_bits());
    }
    h
}

fn operator_blocks(h: &nalgebra_sparse::CsrMatrix<f64>, x: &DMatrix<f64>, jx: &DMatrix<f64>) -> OperatorBlocks {
    let hx_full = h * x;
    let hjx_full = h * jx;
    let (mut hx, (hx_jl, mut hx_jj)) = rayon::join(
        || linalg::transpose_mul(x, &hx_full),
        || {
            rayon::join(
                || linalg::transpose_mul(x, &poisson_apply_columns(&hx_full)),
                // Xᵀ J = −(J X)ᵀ
                || -linalg::transpose_mul(jx, &hjx_full),
            )
        },
    );
    linalg::symmetrize(&mut hx);
    linalg::symmetrize(&mut hx_jj);
    // (Xᵀ J H X)ᵀ = Xᵀ H Jᵀ X = −Xᵀ H J X
    let hx_jr = -hx_jl.transpose();
    OperatorBlocks {
        hx,
        hx_jr,
        hx_jl,
        hx_jj,
    }
}

/// Columns `[Re z; −Im z]`, inverse of [`complex_snapshots`].
pub fn embed_complex(z: &DMatrix<Complex<f64>>) -> DMatrix<f64> {
    let n = z.nrows();
    DMatrix::from_fn(2 * n, z.ncols(), |i, j| if i < n { z[(i, j)].re } else { -z[(i - n, j)].im })
}

/// Columns `q − i p` of the snapshots.
pub fn complex_snapshots(x: &DMatrix<f64>) -> DMatrix<Complex<f64>> {
    let n = x.nrows() / 2;
    DMatrix::from_fn(n, x.ncols(), |i, j| Complex::new(x[(i, j)], -x[(n + i, j)]))
}

pub fn build_state_dictionary(model: &AffineHamiltonianModel, states: DMatrix<f64>, labels: Vec<Label>) -> Result<StateDictionary> {
    if states.nrows() != model.dim() {
        return Err(Error::Dimension(format!(
            "snapshots have {} rows, model dimension {}",
            states.nrows(),
            model.dim()
        )));
    }
    if labels.len() != states.ncols() {
        return Err(Error::Dimension(format!("{} labels for {} snapshots", labels.len(), states.ncols())));
    }
    if labels.iter().any(|l| l.mu.len() != model.domain.dim()) {
        return Err(Error::Dimension("label parameter dimension differs from the model".into()));
    }
    instrument::record_offline();
    let x = &states;
    let jx = poisson_apply_columns(x);
    let (gram, mut gram_j) = rayon::join(|| linalg::gram(x), || linalg::transpose_mul(x, &jx));
    // exact skew-symmetry
    let n = gram_j.nrows();
    for j in 0..n {
        gram_j[(j, j)] = 0.0;
        for i in (j + 1)..n {
            let avg = 0.5 * (gram_j[(i, j)] - gram_j[(j, i)]);
            gram_j[(i, j)] = avg;
            gram_j[(j, i)] = -avg;
        }
    }
    let blocks: Vec<OperatorBlocks> = model
        .affine_terms
        .par_iter()
        .map(|t| operator_blocks(&t.matrix, x, &jx))
        .collect();
    let (initial_x, initial_xj) = match &model.initial {
        InitialValue::Affine(terms) => terms
            .iter()
            .map(|(_, v)| (x.tr_mul(v), x.tr_mul(&poisson_apply_vec(v))))
            .unzip(),
        InitialValue::General(_) => (Vec::new(), Vec::new()),
    };
    let (qr, qr_c) = rayon::join(|| x.clone().qr(), || complex_snapshots(x).qr());
    let (q, factor) = (qr.q(), qr.r());
    let (q_c, factor_c) = (qr_c.q(), qr_c.r());
    let g = embed_complex(&q_c);
    let jg = poisson_apply_columns(&g);
    let (factor_blocks, factor_blocks_c): (Vec<_>, Vec<_>) = model
        .affine_terms
        .par_iter()
        .map(|t| {
            let hq = &t.matrix * &q;
            let b = linalg::transpose_mul(&q, &poisson_apply_columns(&hq));
            (b, operator_blocks(&t.matrix, &g, &jg))
        })
        .unzip();
    info!("state dictionary: 2N = {}, N_X = {}, {} affine terms", x.nrows(), x.ncols(), blocks.len());
    Ok(StateDictionary::from_parts(
        states,
        labels,
        gram,
        gram_j,
        blocks,
        initial_x,
        initial_xj,
        factor,
        factor_c,
        factor_blocks,
        factor_blocks_c,
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub struct NonlinearityDictionary {
    pub values: DMatrix<f64>,
    /// `XᵀF`
    pub gram_xf: DMatrix<f64>,
    /// `FᵀF`
    pub gram_f: DMatrix<f64>,
    /// `XᵀJF`
    pub gram_xfj: DMatrix<f64>,
    /// DEIM row dictionary `ρ̂`.
    pub rows: Vec<usize>,
    /// `F` restricted to the rows `ρ̂`.
    pub values_at_rows: DMatrix<f64>,
    /// Row `j`: the state row read by `ρ̂_j`, taken from `X` (zero if it reads nothing).
    pub states_at_reads: DMatrix<f64>,
    /// Same rows taken from `JX`.
    pub jstates_at_reads: DMatrix<f64>,
}

impl NonlinearityDictionary {
    pub fn row_count(&self) -> usize {
        self.rows.len()
    }
}

/// `N_P` defaults to `N_X` and is truncated to the numerical rank of `F`.
pub fn build_nonlinearity_dictionary(
    model: &AffineHamiltonianModel,
    states: &DMatrix<f64>,
    values: DMatrix<f64>,
    row_count: Option<usize>,
) -> Result<NonlinearityDictionary> {
    let nl = model
        .nonlinearity
        .as_ref()
        .ok_or_else(|| Error::Argument("model has no nonlinearity".into()))?;
    if values.shape() != states.shape() {
        return Err(Error::Dimension(format!(
            "nonlinearity snapshots {:?} do not match states {:?}",
            values.shape(),
            states.shape()
        )));
    }
    instrument::record_offline();
    let requested = row_count.unwrap_or(values.ncols());
    if requested > values.ncols() {
        return Err(Error::Argument(format!("N_P = {requested} exceeds N_X = {}", values.ncols())));
    }
    let jx = poisson_apply_columns(states);
    let (gram_xf, (gram_f, gram_xfj)) = rayon::join(
        || linalg::transpose_mul(states, &values),
        || rayon::join(|| linalg::gram(&values), || -linalg::transpose_mul(&jx, &values)),
    );
    let (rows, values_at_rows) = if requested == 0 || values.iter().all(|v| *v == 0.0) {
        (Vec::new(), DMatrix::zeros(0, values.ncols()))
    } else {
        let basis = pod(&values, requested)?;
        if basis.rank < requested {
            warn!("nonlinearity snapshots have rank {}; N_P reduced from {requested}", basis.rank);
        }
        let rows = deim(&basis.basis)?;
        let sel = values.select_rows(&rows);
        (rows, sel)
    };
    let m = rows.len();
    let mut states_at_reads = DMatrix::zeros(m, states.ncols());
    let mut jstates_at_reads = DMatrix::zeros(m, states.ncols());
    for (j, &r) in rows.iter().enumerate() {
        if let Some(src) = nl.reads[r] {
            states_at_reads.set_row(j, &states.row(src));
            jstates_at_reads.set_row(j, &jx.row(src));
        }
    }
    info!("nonlinearity dictionary: N_P = {m}");
    Ok(NonlinearityDictionary {
        values,
        gram_xf,
        gram_f,
        gram_xfj,
        rows,
        values_at_rows,
        states_at_reads,
        jstates_at_reads,
    })
}

/// Everything the online phase reads, as persisted in one container.
#[derive(Debug, Clone, PartialEq)]
pub struct Dictionary {
    pub model: String,
    pub state: StateDictionary,
    pub nonlinear: Option<NonlinearityDictionary>,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct OfflineOptions {
    pub snapshots: SnapshotOptions,
    /// Size of the DEIM row dictionary; `None` uses `N_X`.
    pub row_count: Option<usize>,
}

/// Snapshot generation followed by both dictionary builds.
pub fn build_dictionary(model: &AffineHamiltonianModel, training: &[Vec<f64>], options: &OfflineOptions) -> Result<Dictionary> {
    let snaps = generate_snapshots(model, training, &options.snapshots)?;
    let nonlinear = match snaps.nonlinear {
        Some(f) => Some(build_nonlinearity_dictionary(model, &snaps.states, f, options.row_count)?),
        None => None,
    };
    let state = build_state_dictionary(model, snaps.states, snaps.labels)?;
    Ok(Dictionary {
        model: model.name.clone(),
        state,
        nonlinear,
    })
}
