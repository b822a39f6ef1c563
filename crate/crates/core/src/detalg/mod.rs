//! Determinant algebra: determinants, numerical rank, the squared-determinant
//! test function, and the mixed-column sums `γ_r(A, B)` and `γ'_r(A, B, C)`.
//!
//! For `A, B` of size `d×d`, `γ_r(A, B)` is the sum of `det(G)` over the
//! `C(d, r)` matrices `G` that keep `r` columns of `A` in place and take the
//! remaining `d - r` columns from `B`. It is the coefficient of `h^{d-r}` in
//! the polynomial `h ↦ det(A + hB)`, which is the quantity the rank
//! statistics are built on.
//!
//! Everything here is generic over [`DetScalar`] so the same enumeration code
//! runs on floating matrices ([`SquareMatrix`]) and on exact integer matrices
//! ([`IntMatrix`], determinants accumulated in `i128`). The exact path backs
//! the property suites in [`oracle`].

pub mod oracle;

use std::fmt::Debug;
use std::ops::Add;

use thiserror::Error;

/// Default relative tolerance for [`rank`].
pub const DEFAULT_RANK_TOL: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DetError {
    #[error("matrix dimension must be at least 1")]
    EmptyDimension,
    #[error("expected {expected} entries for a {dim}x{dim} matrix, got {got}")]
    ShapeMismatch { dim: usize, expected: usize, got: usize },
    #[error("matrix entries must be finite")]
    NonFinite,
    #[error("matrices have different dimensions ({0} vs {1})")]
    DimensionMismatch(usize, usize),
    #[error("column count {r} is out of range for dimension {d}")]
    RankOutOfRange { r: usize, d: usize },
    #[error("the matrix list is empty")]
    EmptyList,
    #[error("column counts {counts:?} do not sum to {d}")]
    BadCounts { counts: Vec<usize>, d: usize },
}

/// Entry type for which a determinant kernel exists.
pub trait DetScalar: Copy + Debug + PartialEq + Send + Sync + 'static {
    /// Accumulator type of determinants and of sums of determinants.
    type Value: Copy + Debug + PartialEq + Default + Add<Output = Self::Value> + Send + Sync;

    /// Determinant of the row-major `d×d` matrix in `buf`. The buffer is
    /// used as scratch space and is left in an unspecified state.
    fn det_in_place(buf: &mut [Self], d: usize) -> Self::Value;

    fn is_valid(&self) -> bool;
}

impl DetScalar for f64 {
    type Value = f64;

    fn det_in_place(buf: &mut [f64], d: usize) -> f64 {
        det_row_major(buf, d)
    }

    fn is_valid(&self) -> bool {
        self.is_finite()
    }
}

impl DetScalar for i64 {
    type Value = i128;

    fn det_in_place(buf: &mut [i64], d: usize) -> i128 {
        let mut wide: Vec<i128> = buf.iter().map(|&v| v as i128).collect();
        bareiss(&mut wide, d)
    }

    fn is_valid(&self) -> bool {
        true
    }
}

/// Partial-pivot Gaussian elimination on a row-major `d×d` buffer.
///
/// Returns exactly `0.0` as soon as a pivot column is identically zero, so
/// matrices with an exactly-zero row or column give an exact zero.
pub fn det_row_major(a: &mut [f64], d: usize) -> f64 {
    debug_assert_eq!(a.len(), d * d);
    let mut det = 1.0;
    for k in 0..d {
        let mut piv_row = k;
        let mut piv_abs = a[k * d + k].abs();
        for i in (k + 1)..d {
            let v = a[i * d + k].abs();
            if v > piv_abs {
                piv_abs = v;
                piv_row = i;
            }
        }
        if piv_abs == 0.0 {
            return 0.0;
        }
        if piv_row != k {
            for j in 0..d {
                a.swap(k * d + j, piv_row * d + j);
            }
            det = -det;
        }
        let piv = a[k * d + k];
        det *= piv;
        for i in (k + 1)..d {
            let factor = a[i * d + k] / piv;
            if factor != 0.0 {
                for j in (k + 1)..d {
                    a[i * d + j] -= factor * a[k * d + j];
                }
            }
        }
    }
    det
}

/// Fraction-free (Bareiss) elimination; exact for integer input.
///
/// Panics on `i128` overflow, which needs entries far beyond the `d ≤ 6`,
/// small-integer regime this is meant for.
fn bareiss(m: &mut [i128], d: usize) -> i128 {
    let mut sign = 1i128;
    let mut prev = 1i128;
    for k in 0..d.saturating_sub(1) {
        if m[k * d + k] == 0 {
            let Some(swap) = ((k + 1)..d).find(|&i| m[i * d + k] != 0) else {
                return 0;
            };
            for j in 0..d {
                m.swap(k * d + j, swap * d + j);
            }
            sign = -sign;
        }
        let pivot = m[k * d + k];
        for i in (k + 1)..d {
            for j in (k + 1)..d {
                let lhs = m[i * d + j].checked_mul(pivot).expect("integer determinant overflow");
                let rhs = m[i * d + k]
                    .checked_mul(m[k * d + j])
                    .expect("integer determinant overflow");
                m[i * d + j] = (lhs - rhs) / prev;
            }
        }
        prev = pivot;
    }
    sign * m[d * d - 1]
}

/// A `d×d` matrix stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<T> {
    dim: usize,
    entries: Vec<T>,
}

/// Floating-point square matrix.
pub type SquareMatrix = Matrix<f64>;
/// Integer square matrix; its determinants are exact.
pub type IntMatrix = Matrix<i64>;

impl<T: DetScalar> Matrix<T> {
    pub fn from_row_major(dim: usize, entries: Vec<T>) -> Result<Self, DetError> {
        if dim == 0 {
            return Err(DetError::EmptyDimension);
        }
        if entries.len() != dim * dim {
            return Err(DetError::ShapeMismatch { dim, expected: dim * dim, got: entries.len() });
        }
        if !entries.iter().all(DetScalar::is_valid) {
            return Err(DetError::NonFinite);
        }
        Ok(Self { dim, entries })
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self, DetError> {
        let dim = rows.len();
        let mut entries = Vec::with_capacity(dim * dim);
        for row in rows {
            if row.len() != dim {
                return Err(DetError::ShapeMismatch { dim, expected: dim * dim, got: dim * row.len() });
            }
            entries.extend_from_slice(row);
        }
        Self::from_row_major(dim, entries)
    }

    /// Builds `mat(x_1, …, x_d)`: the `i`-th column is `columns[i]`.
    pub fn from_columns(columns: &[&[T]]) -> Result<Self, DetError> {
        let dim = columns.len();
        if dim == 0 {
            return Err(DetError::EmptyDimension);
        }
        let mut entries = Vec::with_capacity(dim * dim);
        for i in 0..dim {
            for col in columns {
                if col.len() != dim {
                    return Err(DetError::ShapeMismatch { dim, expected: dim * dim, got: dim * col.len() });
                }
                entries.push(col[i]);
            }
        }
        Self::from_row_major(dim, entries)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entries(&self) -> &[T] {
        &self.entries
    }

    pub fn get(&self, row: usize, col: usize) -> T {
        self.entries[row * self.dim + col]
    }

    pub fn column(&self, col: usize) -> Vec<T> {
        (0..self.dim).map(|i| self.get(i, col)).collect()
    }

    /// Applies `f` entrywise.
    pub fn map<U: DetScalar>(&self, f: impl Fn(T) -> U) -> Matrix<U> {
        Matrix { dim: self.dim, entries: self.entries.iter().map(|&v| f(v)).collect() }
    }

    /// Permutes columns: column `j` of the result is column `perm[j]` of `self`.
    pub fn permute_columns(&self, perm: &[usize]) -> Self {
        let d = self.dim;
        let mut entries = Vec::with_capacity(d * d);
        for i in 0..d {
            for &p in perm {
                entries.push(self.entries[i * d + p]);
            }
        }
        Self { dim: d, entries }
    }
}

impl SquareMatrix {
    pub fn identity(dim: usize) -> Self {
        Self::diagonal(&vec![1.0; dim])
    }

    pub fn zeros(dim: usize) -> Self {
        Self { dim, entries: vec![0.0; dim * dim] }
    }

    pub fn diagonal(diag: &[f64]) -> Self {
        let d = diag.len();
        let mut entries = vec![0.0; d * d];
        for (i, &v) in diag.iter().enumerate() {
            entries[i * d + i] = v;
        }
        Self { dim: d, entries }
    }

    pub fn scale(&self, c: f64) -> Self {
        self.map(|v| c * v)
    }

    pub fn matmul(&self, other: &Self) -> Self {
        let d = self.dim;
        assert_eq!(d, other.dim, "matmul dimension mismatch");
        let mut entries = vec![0.0; d * d];
        for i in 0..d {
            for k in 0..d {
                let a = self.entries[i * d + k];
                for j in 0..d {
                    entries[i * d + j] += a * other.entries[k * d + j];
                }
            }
        }
        Self { dim: d, entries }
    }

    /// `self + h * other`.
    pub fn add_scaled(&self, h: f64, other: &Self) -> Self {
        assert_eq!(self.dim, other.dim, "add_scaled dimension mismatch");
        let entries = self.entries.iter().zip(&other.entries).map(|(a, b)| a + h * b).collect();
        Self { dim: self.dim, entries }
    }
}

/// Determinant; partial-pivot elimination for floats, Bareiss for integers.
pub fn det<T: DetScalar>(m: &Matrix<T>) -> T::Value {
    let mut buf = m.entries.clone();
    T::det_in_place(&mut buf, m.dim)
}

/// Numerical rank: the number of singular values above `tol` times the
/// largest one. The zero matrix has rank 0.
pub fn rank(m: &SquareMatrix, tol: f64) -> usize {
    rank_of(m.dim, m.dim, m.entries(), tol)
}

/// [`rank`] for a general row-major `rows×cols` matrix.
pub fn rank_of(rows: usize, cols: usize, entries: &[f64], tol: f64) -> usize {
    assert!(tol > 0.0, "rank tolerance must be positive, got {tol}");
    assert_eq!(entries.len(), rows * cols);
    if rows == 0 || cols == 0 {
        return 0;
    }
    let m = nalgebra::DMatrix::from_row_slice(rows, cols, entries);
    let sv = m.singular_values();
    let largest = sv.iter().cloned().fold(0.0_f64, f64::max);
    if largest == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > tol * largest).count()
}

/// `f(x_1, …, x_d) = det(mat(x_1, …, x_d))²`.
pub fn test_function_f(columns: &[&[f64]]) -> f64 {
    let d = columns.len();
    assert!(d > 0, "test function needs at least one vector");
    let mut buf = vec![0.0; d * d];
    for (j, col) in columns.iter().enumerate() {
        assert_eq!(col.len(), d, "vector {j} has dimension {} instead of {d}", col.len());
        for i in 0..d {
            buf[i * d + j] = col[i];
        }
    }
    let det = det_row_major(&mut buf, d);
    det * det
}

/// Assignment of each column index to one of `m` source matrices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ColumnSelection {
    assignment: Vec<usize>,
    counts: Vec<usize>,
}

impl ColumnSelection {
    pub fn new(assignment: Vec<usize>, n_sources: usize) -> Self {
        let mut counts = vec![0; n_sources];
        for &s in &assignment {
            counts[s] += 1;
        }
        Self { assignment, counts }
    }

    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    /// Every assignment of `d = Σ counts` columns with exactly `counts[s]`
    /// columns taken from source `s`, in lexicographic order.
    pub fn enumerate(counts: &[usize]) -> Vec<ColumnSelection> {
        let d: usize = counts.iter().sum();
        let mut out = Vec::new();
        let mut remaining = counts.to_vec();
        let mut current = Vec::with_capacity(d);
        fill_selections(&mut remaining, &mut current, d, &mut out);
        out.into_iter().map(|a| ColumnSelection { assignment: a, counts: counts.to_vec() }).collect()
    }

    /// `G^I`: column `j` is column `j` of `sources[assignment[j]]`.
    pub fn assemble<T: DetScalar>(&self, sources: &[&Matrix<T>], buf: &mut Vec<T>) {
        let d = self.assignment.len();
        buf.clear();
        for i in 0..d {
            for (j, &s) in self.assignment.iter().enumerate() {
                buf.push(sources[s].entries[i * d + j]);
            }
        }
    }
}

fn fill_selections(remaining: &mut [usize], current: &mut Vec<usize>, d: usize, out: &mut Vec<Vec<usize>>) {
    if current.len() == d {
        out.push(current.clone());
        return;
    }
    for s in 0..remaining.len() {
        if remaining[s] > 0 {
            remaining[s] -= 1;
            current.push(s);
            fill_selections(remaining, current, d, out);
            current.pop();
            remaining[s] += 1;
        }
    }
}

fn check_same_dim<T>(ms: &[&Matrix<T>]) -> Result<usize, DetError> {
    let d = ms.first().ok_or(DetError::EmptyList)?.dim;
    for m in ms {
        if m.dim != d {
            return Err(DetError::DimensionMismatch(d, m.dim));
        }
    }
    Ok(d)
}

/// Sum of `det(G^I)` over every column selection with the given counts.
pub fn selection_sum<T: DetScalar>(counts: &[usize], sources: &[&Matrix<T>]) -> Result<T::Value, DetError> {
    let d = check_same_dim(sources)?;
    if counts.len() != sources.len() || counts.iter().sum::<usize>() != d {
        return Err(DetError::BadCounts { counts: counts.to_vec(), d });
    }
    let mut buf = Vec::with_capacity(d * d);
    let mut total = T::Value::default();
    for sel in ColumnSelection::enumerate(counts) {
        sel.assemble(sources, &mut buf);
        total = total + T::det_in_place(&mut buf, d);
    }
    Ok(total)
}

/// `γ_r(A, B)`: `r` columns from `a`, `d - r` from `b`.
pub fn gamma_r<T: DetScalar>(r: usize, a: &Matrix<T>, b: &Matrix<T>) -> Result<T::Value, DetError> {
    let d = check_same_dim(&[a, b])?;
    if r > d {
        return Err(DetError::RankOutOfRange { r, d });
    }
    selection_sum(&[r, d - r], &[a, b])
}

/// `γ_{r-1}(A, B)` with the convention `γ_{-1} = 0`.
pub fn gamma_r_minus_one<T: DetScalar>(r: usize, a: &Matrix<T>, b: &Matrix<T>) -> Result<T::Value, DetError> {
    match r.checked_sub(1) {
        Some(prev) => gamma_r(prev, a, b),
        None => {
            check_same_dim(&[a, b])?;
            Ok(T::Value::default())
        }
    }
}

/// `γ'_r(A, B, C)`: `r` columns from `a`, `d - r - 1` from `b`, one from `c`.
pub fn gamma_prime_r<T: DetScalar>(
    r: usize,
    a: &Matrix<T>,
    b: &Matrix<T>,
    c: &Matrix<T>,
) -> Result<T::Value, DetError> {
    let d = check_same_dim(&[a, b, c])?;
    if r >= d {
        return Err(DetError::RankOutOfRange { r, d });
    }
    selection_sum(&[r, d - r - 1, 1], &[a, b, c])
}

/// Sum of `det(G^I)` over all compositions `p` of `d` into `m` parts and all
/// partitions with those part sizes. Equals `det(A_1 + … + A_m)`; computed
/// without ever forming the sum.
pub fn multilinear_expansion<T: DetScalar>(matrices: &[Matrix<T>]) -> Result<T::Value, DetError> {
    let refs: Vec<&Matrix<T>> = matrices.iter().collect();
    let d = check_same_dim(&refs)?;
    let mut total = T::Value::default();
    for counts in compositions(d, refs.len()) {
        total = total + selection_sum(&counts, &refs)?;
    }
    Ok(total)
}

/// All `m`-part compositions of `d` (parts may be zero).
pub fn compositions(d: usize, m: usize) -> Vec<Vec<usize>> {
    fn go(left: usize, parts: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if parts == 1 {
            cur.push(left);
            out.push(cur.clone());
            cur.pop();
            return;
        }
        for k in 0..=left {
            cur.push(k);
            go(left - k, parts - 1, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    if m > 0 {
        go(d, m, &mut Vec::with_capacity(m), &mut out);
    }
    out
}
