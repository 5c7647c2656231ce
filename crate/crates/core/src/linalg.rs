//! Dense and banded linear-algebra helpers shared by the reduction routines.

use nalgebra::{Complex, DMatrix, DVector};

use crate::error::{Error, Result};

/// `aᵀ b`, routed through an explicit transpose so the product hits the blocked GEMM kernel.
pub fn transpose_mul(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let at = a.transpose();
    at * b
}

/// `aᵀ a`, symmetrized to remove rounding asymmetry.
pub fn gram(a: &DMatrix<f64>) -> DMatrix<f64> {
    let mut g = transpose_mul(a, a);
    symmetrize(&mut g);
    g
}

pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for j in 0..n {
        for i in (j + 1)..n {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
}

pub fn select_submatrix(m: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |i, j| m[(rows[i], cols[j])])
}

pub fn select_columns(m: &DMatrix<f64>, cols: &[usize]) -> DMatrix<f64> {
    m.select_columns(cols)
}

pub fn select_entries(v: &DVector<f64>, idx: &[usize]) -> DVector<f64> {
    DVector::from_iterator(idx.len(), idx.iter().map(|&i| v[i]))
}

/// `J_2N M` for a matrix with 2N rows, applied by permutation and sign flip.
pub fn poisson_apply_columns(m: &DMatrix<f64>) -> DMatrix<f64> {
    let two_n = m.nrows();
    debug_assert!(two_n % 2 == 0);
    let n = two_n / 2;
    DMatrix::from_fn(two_n, m.ncols(), |i, j| {
        if i < n {
            m[(i + n, j)]
        } else {
            -m[(i - n, j)]
        }
    })
}

/// Dense `J_2k`. Only used for small reduced dimensions.
pub fn poisson_dense(half: usize) -> DMatrix<f64> {
    let mut j = DMatrix::zeros(2 * half, 2 * half);
    for i in 0..half {
        j[(i, i + half)] = 1.0;
        j[(i + half, i)] = -1.0;
    }
    j
}

/// `J_2k v` for a short vector.
pub fn poisson_apply_vec(v: &DVector<f64>) -> DVector<f64> {
    let n = v.len() / 2;
    DVector::from_fn(v.len(), |i, _| if i < n { v[i + n] } else { -v[i - n] })
}

/// `J_2kᵀ v` for a short vector.
pub fn poisson_transpose_apply_vec(v: &DVector<f64>) -> DVector<f64> {
    let n = v.len() / 2;
    DVector::from_fn(v.len(), |i, _| if i < n { -v[i + n] } else { v[i - n] })
}

/// `J_2k M` (row permutation with sign) for a matrix with 2k rows.
pub fn poisson_apply_rows(m: &DMatrix<f64>) -> DMatrix<f64> {
    poisson_apply_columns(m)
}

/// `J_2kᵀ M` for a matrix with 2k rows.
pub fn poisson_transpose_apply_rows(m: &DMatrix<f64>) -> DMatrix<f64> {
    let two_n = m.nrows();
    let n = two_n / 2;
    DMatrix::from_fn(two_n, m.ncols(), |i, j| {
        if i < n {
            -m[(i + n, j)]
        } else {
            m[(i - n, j)]
        }
    })
}

/// Eigen-decomposition of a real symmetric matrix, eigenvalues sorted descending.
///
/// Each eigenvector is normalized so that its largest-magnitude entry is positive
/// (first such entry on ties), which fixes the sign independent of the platform.
#[derive(Debug, Clone)]
pub struct SortedEigen {
    pub values: Vec<f64>,
    pub vectors: DMatrix<f64>,
}

impl SortedEigen {
    pub fn new(m: DMatrix<f64>) -> Self {
        let n = m.nrows();
        let eig = m.symmetric_eigen();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
        let mut vectors = eig.eigenvectors.select_columns(&order);
        for mut col in vectors.column_iter_mut() {
            let mut best = 0;
            for i in 1..n {
                if col[i].abs() > col[best].abs() {
                    best = i;
                }
            }
            if col[best] < 0.0 {
                col.neg_mut();
            }
        }
        SortedEigen { values, vectors }
    }
}

/// Eigen-decomposition of a complex Hermitian matrix, eigenvalues sorted descending.
///
/// Phase convention: the largest-magnitude entry of every eigenvector is real positive.
#[derive(Debug, Clone)]
pub struct HermitianEigen {
    pub values: Vec<f64>,
    pub vectors: DMatrix<Complex<f64>>,
}

impl HermitianEigen {
    pub fn new(m: DMatrix<Complex<f64>>) -> Self {
        let n = m.nrows();
        let eig = m.symmetric_eigen();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
        let mut vectors = eig.eigenvectors.select_columns(&order);
        for mut col in vectors.column_iter_mut() {
            let mut best = 0;
            for i in 1..n {
                if col[i].norm() > col[best].norm() {
                    best = i;
                }
            }
            let z = col[best];
            let r = z.norm();
            if r > 0.0 {
                let phase = z.conj() / r;
                for v in col.iter_mut() {
                    *v *= phase;
                }
            }
        }
        HermitianEigen { values, vectors }
    }
}

fn split(a: &DMatrix<Complex<f64>>) -> (DMatrix<f64>, DMatrix<f64>) {
    (a.map(|z| z.re), a.map(|z| z.im))
}

/// `a b` through four real products, which use the blocked real kernel.
pub fn complex_mul(a: &DMatrix<Complex<f64>>, b: &DMatrix<Complex<f64>>) -> DMatrix<Complex<f64>> {
    let (ar, ai) = split(a);
    let (br, bi) = split(b);
    let re = &ar * &br - &ai * &bi;
    let im = &ar * &bi + &ai * &br;
    re.zip_map(&im, Complex::new)
}

/// `aᴴ b` through four real products.
pub fn complex_ad_mul(a: &DMatrix<Complex<f64>>, b: &DMatrix<Complex<f64>>) -> DMatrix<Complex<f64>> {
    let (ar, ai) = split(a);
    let (br, bi) = split(b);
    let (art, ait) = (ar.transpose(), ai.transpose());
    let re = &art * &br + &ait * &bi;
    let im = &art * &bi - &ait * &br;
    re.zip_map(&im, Complex::new)
}

/// Number of eigenvalues (sorted descending) above the `count·ε·λ_max` rank cutoff.
pub fn numerical_rank(values: &[f64], count: usize) -> usize {
    let Some(&top) = values.first() else {
        return 0;
    };
    if top <= 0.0 {
        return 0;
    }
    let cutoff = count.max(1) as f64 * f64::EPSILON * top;
    values.iter().take_while(|&&v| v > cutoff).count()
}

/// Smallest `k` with `Σ_{i<k} λ_i > (1 − ε) Σ_i λ_i` over the nonnegative part of a
/// descending spectrum. Returns 0 for an all-zero spectrum.
pub fn energy_truncation(values: &[f64], eps: f64) -> usize {
    let total: f64 = values.iter().map(|v| v.max(0.0)).sum();
    if total <= 0.0 {
        return 0;
    }
    let target = (1.0 - eps) * total;
    let mut partial = 0.0;
    for (k, v) in values.iter().enumerate() {
        partial += v.max(0.0);
        if partial > target {
            return k + 1;
        }
    }
    values.len()
}

/// Banded LU factorization with partial pivoting.
///
/// Row `i` stores columns `i − kl ..= i + kl + ku`; the extra `kl` upper diagonals
/// hold the fill produced by row interchanges.
#[derive(Debug, Clone)]
pub struct BandedLu {
    n: usize,
    kl: usize,
    ku: usize,
    width: usize,
    data: Vec<f64>,
    pivots: Vec<usize>,
}

/// Square banded matrix under assembly.
#[derive(Debug, Clone)]
pub struct BandedMatrix {
    n: usize,
    kl: usize,
    ku: usize,
    width: usize,
    data: Vec<f64>,
}

impl BandedMatrix {
    pub fn zeros(n: usize, kl: usize, ku: usize) -> Self {
        let width = 2 * kl + ku + 1;
        BandedMatrix {
            n,
            kl,
            ku,
            width,
            data: vec![0.0; n * width],
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    #[inline]
    fn offset(&self, i: usize, j: usize) -> usize {
        i * self.width + (j + self.kl - i)
    }

    /// Adds `v` at `(i, j)`; the entry must lie inside the declared band.
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        assert!(
            j + self.kl >= i && j <= i + self.ku,
            "entry ({i}, {j}) outside band kl={} ku={}",
            self.kl,
            self.ku
        );
        let o = self.offset(i, j);
        self.data[o] += v;
    }

    pub fn factor(self) -> Result<BandedLu> {
        let BandedMatrix {
            n,
            kl,
            ku,
            width,
            mut data,
        } = self;
        let idx = |i: usize, j: usize| i * width + (j + kl - i);
        let mut pivots = vec![0usize; n];
        let reach = kl + ku;
        let mut max_pivot = 0.0f64;
        let mut min_pivot = f64::INFINITY;
        for k in 0..n {
            let last_row = (k + kl).min(n - 1);
            let mut p = k;
            let mut best = data[idx(k, k)].abs();
            for i in (k + 1)..=last_row {
                let v = data[idx(i, k)].abs();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            pivots[k] = p;
            if best == 0.0 {
                return Err(Error::Singular(format!("zero pivot in banded LU at column {k}")));
            }
            max_pivot = max_pivot.max(best);
            min_pivot = min_pivot.min(best);
            let last_col = (k + reach).min(n - 1);
            if p != k {
                for j in k..=last_col {
                    data.swap(idx(k, j), idx(p, j));
                }
            }
            let pivot = data[idx(k, k)];
            for i in (k + 1)..=last_row {
                let l = data[idx(i, k)] / pivot;
                data[idx(i, k)] = l;
                if l != 0.0 {
                    for j in (k + 1)..=last_col {
                        data[idx(i, j)] -= l * data[idx(k, j)];
                    }
                }
            }
        }
        if min_pivot < 1e-14 * max_pivot {
            return Err(Error::Singular(format!(
                "banded LU pivot ratio {:e} indicates a numerically singular system",
                min_pivot / max_pivot
            )));
        }
        Ok(BandedLu {
            n,
            kl,
            ku,
            width,
            data,
            pivots,
        })
    }
}

impl BandedLu {
    #[inline]
    fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.width + (j + self.kl - i)]
    }

    pub fn solve_in_place(&self, b: &mut [f64]) {
        let n = self.n;
        assert_eq!(b.len(), n);
        for k in 0..n {
            let p = self.pivots[k];
            if p != k {
                b.swap(k, p);
            }
            let bk = b[k];
            if bk != 0.0 {
                for i in (k + 1)..=(k + self.kl).min(n - 1) {
                    b[i] -= self.at(i, k) * bk;
                }
            }
        }
        let reach = self.kl + self.ku;
        for k in (0..n).rev() {
            let mut s = b[k];
            for j in (k + 1)..=(k + reach).min(n - 1) {
                s -= self.at(k, j) * b[j];
            }
            b[k] = s / self.at(k, k);
        }
    }
}

/// Maximum absolute entry difference between two equally shaped matrices.
pub fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
