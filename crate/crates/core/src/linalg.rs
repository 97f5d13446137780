//! Dense row-major matrices and the handful of decompositions the rest of
//! the crate needs: products, cyclic Jacobi for symmetric eigenproblems,
//! Cholesky factorization, and the symmetric-definite generalized
//! eigenproblem built from the two.

use alloc::vec;
use alloc::vec::Vec;
use core::ops::{Index, IndexMut};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LinalgError {
    #[error("{op}: incompatible shapes {left_rows}x{left_cols} and {right_rows}x{right_cols}")]
    DimensionMismatch {
        op: &'static str,
        left_rows: usize,
        left_cols: usize,
        right_rows: usize,
        right_cols: usize,
    },
    #[error("data length {len} does not match {rows}x{cols}")]
    BadLength { rows: usize, cols: usize, len: usize },
    #[error("non-finite entry at ({row}, {col})")]
    NonFinite { row: usize, col: usize },
    #[error("matrix must be square, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("matrix is not positive definite (pivot {pivot} = {value:e})")]
    NotPositiveDefinite { pivot: usize, value: f64 },
    #[error("Jacobi iteration did not converge after {sweeps} sweeps (off-diagonal norm {residual:e})")]
    NoConvergence { sweeps: usize, residual: f64 },
    #[error("requested {requested} eigenvectors from a {n}x{n} problem")]
    TooManyComponents { requested: usize, n: usize },
}

type LResult<T> = core::result::Result<T, LinalgError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    /// Builds a matrix from row-major data, rejecting wrong lengths and
    /// non-finite entries.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> LResult<Self> {
        if data.len() != rows * cols {
            return Err(LinalgError::BadLength { rows, cols, len: data.len() });
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(LinalgError::NonFinite { row: i / cols.max(1), col: i % cols.max(1) });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        let mut m = Self::zeros(diag.len(), diag.len());
        for (i, &d) in diag.iter().enumerate() {
            m[(i, i)] = d;
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    pub fn from_rows(rows: &[&[f64]]) -> LResult<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(LinalgError::BadLength { rows: rows.len(), cols, len: r.len() });
            }
            data.extend_from_slice(r);
        }
        Self::new(rows.len(), cols, data)
    }

    pub fn column(values: &[f64]) -> Self {
        Self { rows: values.len(), cols: 1, data: values.to_vec() }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn col_vec(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self[(r, c)]).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                t.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        t
    }

    /// Selects a subset of rows, in the given order.
    pub fn select_rows(&self, idx: &[usize]) -> Self {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Self { rows: idx.len(), cols: self.cols, data }
    }

    /// Stacks `other` below `self`.
    pub fn vstack(&self, other: &Matrix) -> LResult<Self> {
        if self.cols != other.cols {
            return Err(self.mismatch("vstack", other));
        }
        let mut data = Vec::with_capacity(self.data.len() + other.data.len());
        data.extend_from_slice(&self.data);
        data.extend_from_slice(&other.data);
        Ok(Self { rows: self.rows + other.rows, cols: self.cols, data })
    }

    /// Keeps the first `n` columns.
    pub fn leading_columns(&self, n: usize) -> Self {
        Self::from_fn(self.rows, n, |r, c| self[(r, c)])
    }

    fn mismatch(&self, op: &'static str, other: &Matrix) -> LinalgError {
        LinalgError::DimensionMismatch {
            op,
            left_rows: self.rows,
            left_cols: self.cols,
            right_rows: other.rows,
            right_cols: other.cols,
        }
    }

    /// `self · other`.
    pub fn matmul(&self, other: &Matrix) -> LResult<Matrix> {
        if self.cols != other.rows {
            return Err(self.mismatch("matmul", other));
        }
        let (n, k, m) = (self.rows, self.cols, other.cols);
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            let out_row = &mut out[i * m..(i + 1) * m];
            for (p, &a) in self.row(i).iter().enumerate().take(k) {
                if a == 0.0 {
                    continue;
                }
                for (o, &b) in out_row.iter_mut().zip(other.row(p)) {
                    *o += a * b;
                }
            }
        }
        Ok(Matrix { rows: n, cols: m, data: out })
    }

    /// `self · otherᵀ`, the natural product for row-major weight matrices.
    pub fn matmul_transposed(&self, other: &Matrix) -> LResult<Matrix> {
        if self.cols != other.cols {
            return Err(self.mismatch("matmul_transposed", other));
        }
        let (n, m) = (self.rows, other.rows);
        let mut out = Vec::with_capacity(n * m);
        for i in 0..n {
            let a = self.row(i);
            for j in 0..m {
                out.push(dot(a, other.row(j)));
            }
        }
        Ok(Matrix { rows: n, cols: m, data: out })
    }

    /// `selfᵀ · other`.
    pub fn transposed_matmul(&self, other: &Matrix) -> LResult<Matrix> {
        if self.rows != other.rows {
            return Err(self.mismatch("transposed_matmul", other));
        }
        let (k, m) = (self.cols, other.cols);
        let mut out = vec![0.0; k * m];
        for r in 0..self.rows {
            let b = other.row(r);
            for (p, &a) in self.row(r).iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                for (o, &bv) in out[p * m..(p + 1) * m].iter_mut().zip(b) {
                    *o += a * bv;
                }
            }
        }
        Ok(Matrix { rows: k, cols: m, data: out })
    }

    pub fn scale(&self, s: f64) -> Matrix {
        Matrix { rows: self.rows, cols: self.cols, data: self.data.iter().map(|v| v * s).collect() }
    }

    pub fn add(&self, other: &Matrix) -> LResult<Matrix> {
        self.zip_with(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Matrix) -> LResult<Matrix> {
        self.zip_with(other, "sub", |a, b| a - b)
    }

    fn zip_with(&self, other: &Matrix, op: &'static str, f: impl Fn(f64, f64) -> f64) -> LResult<Matrix> {
        if self.shape() != other.shape() {
            return Err(self.mismatch(op, other));
        }
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
        Ok(Matrix { rows: self.rows, cols: self.cols, data })
    }

    pub fn frobenius_norm(&self) -> f64 {
        libm::sqrt(self.data.iter().map(|v| v * v).sum())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| f64::max(m, libm::fabs(*v)))
    }

    /// Largest absolute difference between `a_ij` and `a_ji`.
    pub fn asymmetry(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.rows {
            for j in (i + 1)..self.cols.min(self.rows) {
                worst = worst.max(libm::fabs(self[(i, j)] - self[(j, i)]));
            }
        }
        worst
    }

    /// `(A + Aᵀ) / 2`.
    pub fn symmetrized(&self) -> Matrix {
        let n = self.rows;
        Matrix::from_fn(n, n, |i, j| 0.5 * (self[(i, j)] + self[(j, i)]))
    }

    fn require_square(&self) -> LResult<usize> {
        if self.rows != self.cols {
            return Err(LinalgError::NotSquare { rows: self.rows, cols: self.cols });
        }
        Ok(self.rows)
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;

    #[inline]
    fn index(&self, (r, c): (usize, usize)) -> &f64 {
        &self.data[r * self.cols + c]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    #[inline]
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut f64 {
        &mut self.data[r * self.cols + c]
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Checked matrix product.
pub fn matmul(a: &Matrix, b: &Matrix) -> LResult<Matrix> {
    a.matmul(b)
}

/// Eigen-decomposition of a symmetric matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SymmetricEigen {
    /// Eigenvalues in descending order.
    pub values: Vec<f64>,
    /// Unit eigenvectors stored as columns, matching `values`.
    pub vectors: Matrix,
}

pub const MAX_SWEEPS: usize = 100;
const SYMMETRY_TOL: f64 = 1e-9;
const OFF_DIAGONAL_TOL: f64 = 1e-13;

/// Cyclic Jacobi eigen-decomposition.
///
/// The input is symmetrized as `(A + Aᵀ)/2` first; an asymmetry above
/// `1e-9` (relative to the largest entry) is reported through `log::warn!`
/// rather than rejected. Equal eigenvalues keep their diagonal order.
pub fn jacobi_eigh(a: &Matrix) -> LResult<SymmetricEigen> {
    jacobi_eigh_with(a, MAX_SWEEPS)
}

pub fn jacobi_eigh_with(a: &Matrix, max_sweeps: usize) -> LResult<SymmetricEigen> {
    let n = a.require_square()?;
    if !a.is_finite() {
        let i = a.data.iter().position(|v| !v.is_finite()).unwrap_or(0);
        return Err(LinalgError::NonFinite { row: i / n, col: i % n });
    }
    let asym = a.asymmetry();
    if asym > SYMMETRY_TOL * a.max_abs().max(1.0) {
        log::warn!("jacobi_eigh: input asymmetric by {asym:e}; symmetrizing");
    }
    let mut m = a.symmetrized();
    // Rows of `vt` are the eigenvectors; keeps the rotation updates contiguous.
    let mut vt = Matrix::identity(n);
    let scale = m.frobenius_norm();

    let mut sweeps = 0;
    if n >= 2 && scale > 0.0 {
        loop {
            let off = off_diagonal_norm(&m);
            if off <= OFF_DIAGONAL_TOL * scale {
                break;
            }
            if sweeps == max_sweeps {
                return Err(LinalgError::NoConvergence { sweeps, residual: off });
            }
            for p in 0..n - 1 {
                for q in (p + 1)..n {
                    rotate(&mut m, &mut vt, p, q);
                }
            }
            sweeps += 1;
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    // Stable sort: ties keep the original index order.
    order.sort_by(|&i, &j| m[(j, j)].partial_cmp(&m[(i, i)]).unwrap_or(core::cmp::Ordering::Equal));
    let values = order.iter().map(|&i| m[(i, i)]).collect();
    let vectors = Matrix::from_fn(n, n, |r, c| vt[(order[c], r)]);
    Ok(SymmetricEigen { values, vectors })
}

fn off_diagonal_norm(m: &Matrix) -> f64 {
    let n = m.rows;
    let mut s = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            s += 2.0 * m[(i, j)] * m[(i, j)];
        }
    }
    libm::sqrt(s)
}

/// One Jacobi rotation annihilating `m[p][q]`.
fn rotate(m: &mut Matrix, vt: &mut Matrix, p: usize, q: usize) {
    let apq = m[(p, q)];
    if apq == 0.0 {
        return;
    }
    let n = m.rows;
    let app = m[(p, p)];
    let aqq = m[(q, q)];
    let theta = (aqq - app) / (2.0 * apq);
    let t = {
        let t = 1.0 / (libm::fabs(theta) + libm::sqrt(theta * theta + 1.0));
        if theta < 0.0 {
            -t
        } else {
            t
        }
    };
    let c = 1.0 / libm::sqrt(t * t + 1.0);
    let s = t * c;

    for k in 0..n {
        if k == p || k == q {
            continue;
        }
        let akp = m[(k, p)];
        let akq = m[(k, q)];
        let np = c * akp - s * akq;
        let nq = s * akp + c * akq;
        m[(k, p)] = np;
        m[(p, k)] = np;
        m[(k, q)] = nq;
        m[(q, k)] = nq;
    }
    m[(p, p)] = app - t * apq;
    m[(q, q)] = aqq + t * apq;
    m[(p, q)] = 0.0;
    m[(q, p)] = 0.0;

    let cols = vt.cols;
    let (head, tail) = vt.data.split_at_mut(q * cols);
    let vp = &mut head[p * cols..(p + 1) * cols];
    let vq = &mut tail[..cols];
    for (x, y) in vp.iter_mut().zip(vq.iter_mut()) {
        let (a, b) = (*x, *y);
        *x = c * a - s * b;
        *y = s * a + c * b;
    }
}

/// Lower-triangular Cholesky factor `L` with `A = L·Lᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct Cholesky {
    l: Matrix,
}

impl Cholesky {
    pub fn factor(a: &Matrix) -> LResult<Self> {
        let n = a.require_square()?;
        let mut l = Matrix::zeros(n, n);
        for j in 0..n {
            let mut d = a[(j, j)];
            for k in 0..j {
                d -= l[(j, k)] * l[(j, k)];
            }
            if !(d > 0.0) || !d.is_finite() {
                return Err(LinalgError::NotPositiveDefinite { pivot: j, value: d });
            }
            let d = libm::sqrt(d);
            l[(j, j)] = d;
            for i in (j + 1)..n {
                let s = a[(i, j)] - dot(&l.row(i)[..j], &l.row(j)[..j]);
                l[(i, j)] = s / d;
            }
        }
        Ok(Self { l })
    }

    pub fn lower(&self) -> &Matrix {
        &self.l
    }

    /// Solves `L·X = B` column by column.
    pub fn solve_lower(&self, b: &Matrix) -> LResult<Matrix> {
        let n = self.l.rows;
        if b.rows != n {
            return Err(self.l.mismatch("solve_lower", b));
        }
        let mut x = b.clone();
        for i in 0..n {
            let lii = self.l[(i, i)];
            for k in 0..i {
                let lik = self.l[(i, k)];
                if lik == 0.0 {
                    continue;
                }
                let (done, rest) = x.data.split_at_mut(i * b.cols);
                let src = &done[k * b.cols..(k + 1) * b.cols];
                for (d, s) in rest[..b.cols].iter_mut().zip(src) {
                    *d -= lik * s;
                }
            }
            for v in x.row_mut(i) {
                *v /= lii;
            }
        }
        Ok(x)
    }

    /// Solves `Lᵀ·X = B`.
    pub fn solve_upper(&self, b: &Matrix) -> LResult<Matrix> {
        let n = self.l.rows;
        if b.rows != n {
            return Err(self.l.mismatch("solve_upper", b));
        }
        let mut x = b.clone();
        for i in (0..n).rev() {
            let lii = self.l[(i, i)];
            for k in (i + 1)..n {
                let lki = self.l[(k, i)];
                if lki == 0.0 {
                    continue;
                }
                let (head, tail) = x.data.split_at_mut(k * b.cols);
                let src = &tail[..b.cols];
                for (d, s) in head[i * b.cols..(i + 1) * b.cols].iter_mut().zip(src) {
                    *d -= lki * s;
                }
            }
            for v in x.row_mut(i) {
                *v /= lii;
            }
        }
        Ok(x)
    }

    /// Solves `A·X = B`.
    pub fn solve(&self, b: &Matrix) -> LResult<Matrix> {
        self.solve_upper(&self.solve_lower(b)?)
    }
}

/// Solves `A·X = B` for symmetric positive definite `A`.
pub fn cholesky_solve(a: &Matrix, b: &Matrix) -> LResult<Matrix> {
    if a.rows != b.rows {
        return Err(a.mismatch("cholesky_solve", b));
    }
    Cholesky::factor(a)?.solve(b)
}

/// Leading solutions of `A·w = λ·B·w`.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneralizedEigen {
    /// The `m` largest generalized eigenvalues, descending.
    pub values: Vec<f64>,
    /// `n×m`, columns `B`-orthonormal.
    pub vectors: Matrix,
}

/// Top-`m` generalized eigenvectors of the symmetric-definite pencil
/// `(A, B)`: factor `B = L·Lᵀ`, decompose `L⁻¹·A·L⁻ᵀ` with Jacobi and map
/// back with `w = L⁻ᵀ·y`.
pub fn generalized_eigh(a: &Matrix, b: &Matrix, m: usize) -> LResult<GeneralizedEigen> {
    let n = a.require_square()?;
    b.require_square()?;
    if b.rows != n {
        return Err(a.mismatch("generalized_eigh", b));
    }
    if m > n {
        return Err(LinalgError::TooManyComponents { requested: m, n });
    }
    let chol = Cholesky::factor(&b.symmetrized())?;
    // C = L⁻¹ A L⁻ᵀ = L⁻¹ (L⁻¹ A)ᵀ for symmetric A.
    let y = chol.solve_lower(&a.symmetrized())?;
    let c = chol.solve_lower(&y.transpose())?;
    let eig = jacobi_eigh(&c.symmetrized())?;
    let top = eig.vectors.leading_columns(m);
    let vectors = chol.solve_upper(&top)?;
    Ok(GeneralizedEigen { values: eig.values[..m].to_vec(), vectors })
}
