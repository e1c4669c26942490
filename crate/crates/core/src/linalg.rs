//! Dense linear algebra for symmetric matrices: Cholesky, Jacobi eigensolver,
//! and diagonal dominance tests.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::conic::{self, ConeProgram, ProgramBuilder, SolveStatus};

/// Default absolute tolerance on row sums for dd/sdd checks.
pub const DD_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LinalgError {
    #[error("matrix is not positive definite (pivot {pivot} at row {row})")]
    NotPositiveDefinite { row: usize, pivot: f64 },
    #[error("Jacobi iteration did not converge after {sweeps} sweeps")]
    NoConvergence { sweeps: usize },
    #[error("matrix is not diagonally dominant")]
    NotDiagonallyDominant,
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("scaling LP failed: {0}")]
    Solver(String),
}

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Mat::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        let mut m = Mat::zeros(r, c);
        for (i, row) in rows.iter().enumerate() {
            assert_eq!(row.len(), c, "ragged rows");
            m.data[i * c..(i + 1) * c].copy_from_slice(row);
        }
        m
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn col(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn transpose(&self) -> Mat {
        let mut t = Mat::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    pub fn matmul(&self, other: &Mat) -> Mat {
        assert_eq!(self.cols, other.rows);
        let mut out = Mat::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                let orow = other.row(k);
                let dst = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (d, o) in dst.iter_mut().zip(orow) {
                    *d += a * o;
                }
            }
        }
        out
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.rows).map(|i| dot(self.row(i), x)).collect()
    }

    /// `selfᵀ x`
    pub fn tmatvec(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for i in 0..self.rows {
            let xi = x[i];
            if xi == 0.0 {
                continue;
            }
            for (o, a) in out.iter_mut().zip(self.row(i)) {
                *o += xi * a;
            }
        }
        out
    }

    pub fn is_identity(&self) -> bool {
        self.rows == self.cols
            && (0..self.rows).all(|i| {
                (0..self.cols).all(|j| self[(i, j)] == if i == j { 1.0 } else { 0.0 })
            })
    }

    pub fn is_upper_triangular(&self) -> bool {
        (0..self.rows).all(|i| (0..i.min(self.cols)).all(|j| self[(i, j)] == 0.0))
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

impl std::ops::Index<(usize, usize)> for Mat {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Mat {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

/// Symmetric matrix stored as its packed upper triangle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymMatrix {
    dim: usize,
    upper: Vec<f64>,
}

impl SymMatrix {
    pub fn zeros(dim: usize) -> Self {
        SymMatrix { dim, upper: vec![0.0; dim * (dim + 1) / 2] }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = SymMatrix::zeros(dim);
        for i in 0..dim {
            m.set(i, i, 1.0);
        }
        m
    }

    pub fn from_fn(dim: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let mut m = SymMatrix::zeros(dim);
        for i in 0..dim {
            for j in i..dim {
                m.set(i, j, f(i, j));
            }
        }
        m
    }

    /// Symmetric part `(A + Aᵀ)/2` of a square dense matrix.
    pub fn from_dense(a: &Mat) -> Self {
        assert_eq!(a.rows, a.cols);
        SymMatrix::from_fn(a.rows, |i, j| 0.5 * (a[(i, j)] + a[(j, i)]))
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        Self::from_dense(&Mat::from_rows(rows))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn idx(&self, i: usize, j: usize) -> usize {
        let (i, j) = if i <= j { (i, j) } else { (j, i) };
        i * self.dim - i * (i + 1) / 2 + j
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.upper[self.idx(i, j)]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        let k = self.idx(i, j);
        self.upper[k] = v;
    }

    pub fn add_to(&mut self, i: usize, j: usize, v: f64) {
        let k = self.idx(i, j);
        self.upper[k] += v;
    }

    pub fn to_dense(&self) -> Mat {
        let n = self.dim;
        let mut m = Mat::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                m[(i, j)] = self.get(i, j);
            }
        }
        m
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.dim).map(|i| (0..self.dim).map(|j| self.get(i, j)).collect()).collect()
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim).map(|i| self.get(i, i)).sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        let mut s = 0.0;
        for i in 0..self.dim {
            for j in 0..self.dim {
                let v = self.get(i, j);
                s += v * v;
            }
        }
        s.sqrt()
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.dim)
            .map(|i| (0..self.dim).map(|j| self.get(i, j) * x[j]).sum())
            .collect()
    }

    /// `uᵀ M u`
    pub fn quad(&self, u: &[f64]) -> f64 {
        dot(u, &self.matvec(u))
    }

    pub fn scale(&self, s: f64) -> SymMatrix {
        SymMatrix { dim: self.dim, upper: self.upper.iter().map(|v| v * s).collect() }
    }

    pub fn add(&self, other: &SymMatrix) -> SymMatrix {
        assert_eq!(self.dim, other.dim);
        SymMatrix {
            dim: self.dim,
            upper: self.upper.iter().zip(&other.upper).map(|(a, b)| a + b).collect(),
        }
    }

    /// `Uᵀ M U` for a square `U`.
    pub fn congruence(&self, u: &Mat) -> SymMatrix {
        let m = self.to_dense();
        let r = u.transpose().matmul(&m).matmul(u);
        SymMatrix::from_dense(&r)
    }

    /// Row dominance margins `M_ii - Σ_{j≠i} |M_ij|`.
    pub fn dd_margins(&self) -> Vec<f64> {
        (0..self.dim)
            .map(|i| {
                let off: f64 = (0..self.dim).filter(|&j| j != i).map(|j| self.get(i, j).abs()).sum();
                self.get(i, i) - off
            })
            .collect()
    }

    pub fn max_abs_diff(&self, other: &SymMatrix) -> f64 {
        self.upper
            .iter()
            .zip(&other.upper)
            .fold(0.0, |a, (x, y)| a.max((x - y).abs()))
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn norm_inf(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// Upper-triangular `U` with `UᵀU = M + μI`, `μ = reg · max(trace(M)/dim, 1)`.
pub fn cholesky(m: &SymMatrix, reg: f64) -> Result<Mat, LinalgError> {
    let n = m.dim();
    let mu = if n == 0 { 0.0 } else { reg * (m.trace() / n as f64).max(1.0) };
    let mut u = Mat::zeros(n, n);
    for j in 0..n {
        let mut d = m.get(j, j) + mu;
        for k in 0..j {
            d -= u[(k, j)] * u[(k, j)];
        }
        if d <= 0.0 || !d.is_finite() {
            return Err(LinalgError::NotPositiveDefinite { row: j, pivot: d });
        }
        let ujj = d.sqrt();
        u[(j, j)] = ujj;
        for i in j + 1..n {
            let mut s = m.get(j, i);
            for k in 0..j {
                s -= u[(k, j)] * u[(k, i)];
            }
            u[(j, i)] = s / ujj;
        }
    }
    Ok(u)
}

#[derive(Debug, Clone)]
pub struct EigenDecomposition {
    /// Ascending eigenvalues.
    pub values: Vec<f64>,
    /// Column `k` is the unit eigenvector of `values[k]`.
    pub vectors: Mat,
}

impl EigenDecomposition {
    pub fn vector(&self, k: usize) -> Vec<f64> {
        self.vectors.col(k)
    }
}

/// Full symmetric eigendecomposition by cyclic Jacobi rotations.
pub fn eig_sym(m: &SymMatrix) -> Result<EigenDecomposition, LinalgError> {
    const MAX_SWEEPS: usize = 100;
    let n = m.dim();
    let mut a = m.to_dense();
    let mut v = Mat::identity(n);
    let norm = m.frobenius_norm();
    let off = |a: &Mat| -> f64 {
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    s += a[(i, j)] * a[(i, j)];
                }
            }
        }
        s.sqrt()
    };
    let mut converged = norm == 0.0;
    for _ in 0..MAX_SWEEPS {
        if converged || off(&a) <= 1e-15 * norm {
            converged = true;
            break;
        }
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[(p, q)];
                if apq.abs() <= 1e-300 || apq.abs() < 1e-18 * norm {
                    continue;
                }
                rotated = true;
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
        if !rotated {
            converged = true;
            break;
        }
    }
    if !converged && off(&a) > 1e-10 * norm {
        return Err(LinalgError::NoConvergence { sweeps: MAX_SWEEPS });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(i, i)].total_cmp(&a[(j, j)]));
    let values = order.iter().map(|&i| a[(i, i)]).collect();
    let mut vectors = Mat::zeros(n, n);
    for (k, &i) in order.iter().enumerate() {
        for r in 0..n {
            vectors[(r, k)] = v[(r, i)];
        }
    }
    Ok(EigenDecomposition { values, vectors })
}

pub fn min_eigenvalue(m: &SymMatrix) -> Result<f64, LinalgError> {
    Ok(eig_sym(m)?.values.first().copied().unwrap_or(0.0))
}

/// `M_ii ≥ Σ_{j≠i} |M_ij| - tol` for every row.
pub fn is_dd(m: &SymMatrix, tol: f64) -> bool {
    m.dd_margins().iter().all(|&g| g >= -tol)
}

/// Scaled diagonal dominance: feasibility of `d_i M_ii ≥ Σ_{j≠i} d_j |M_ij|`
/// with `d_i ≥ 1`, decided by a small LP.
pub fn is_sdd(m: &SymMatrix, tol: f64) -> Result<bool, LinalgError> {
    let n = m.dim();
    if (0..n).any(|i| m.get(i, i) < -tol) {
        return Ok(false);
    }
    if is_dd(m, tol) {
        return Ok(true);
    }
    let prog = sdd_scaling_lp(m);
    let sol = conic::solve(&prog);
    match sol.status {
        SolveStatus::Optimal => {
            let dmax = SDD_WEIGHT_FLOOR / n as f64 + sol.x[..n].iter().fold(0.0f64, |a, &v| a.max(v));
            Ok(sol.x[n] <= tol * dmax)
        }
        other => Err(LinalgError::Solver(format!("{other:?}"))),
    }
}

/// Smallest weight in the sdd LP relative to their sum; bounds the ratio of
/// largest to smallest scaling by about `n / SDD_WEIGHT_FLOOR`.
const SDD_WEIGHT_FLOOR: f64 = 1e-4;

/// Variables `(e_0..e_{n-1}, t, s_0..)` with weights `d = floor + e` summing
/// to one, minimizing the largest row violation `t` (free).
fn sdd_scaling_lp(m: &SymMatrix) -> ConeProgram {
    let n = m.dim();
    let floor = SDD_WEIGHT_FLOOR / n as f64;
    let coef = |i: usize, j: usize| if i == j { -m.get(i, i) } else { m.get(i, j).abs() };
    let mut pb = ProgramBuilder::new();
    // Σ_j coef_ij e_j − t + s_i = −floor Σ_j coef_ij
    let rows: Vec<usize> = (0..n).map(|i| pb.add_row(-floor * (0..n).map(|j| coef(i, j)).sum::<f64>())).collect();
    let total = pb.add_row(1.0 - n as f64 * floor);
    for j in 0..n {
        let mut col: Vec<(usize, f64)> = (0..n).map(|i| (rows[i], coef(i, j))).collect();
        col.push((total, 1.0));
        pb.add_nonneg(col, 0.0);
    }
    pb.add_free(rows.iter().map(|&r| (r, -1.0)).collect(), 1.0);
    for &r in &rows {
        pb.add_nonneg(vec![(r, 1.0)], 0.0);
    }
    pb.build()
}

/// Writes a dd matrix as `Σ α_k v_k v_kᵀ` with each `v_k` having at most two
/// nonzero entries equal to ±1.
pub fn dd_extreme_decomposition(m: &SymMatrix) -> Result<Vec<(f64, Vec<f64>)>, LinalgError> {
    if !is_dd(m, DD_TOL) {
        return Err(LinalgError::NotDiagonallyDominant);
    }
    let n = m.dim();
    let mut out = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            let v = m.get(i, j);
            if v != 0.0 {
                let mut u = vec![0.0; n];
                u[i] = 1.0;
                u[j] = v.signum();
                out.push((v.abs(), u));
            }
        }
    }
    for (i, g) in m.dd_margins().into_iter().enumerate() {
        if g > 0.0 {
            let mut u = vec![0.0; n];
            u[i] = 1.0;
            out.push((g, u));
        }
    }
    Ok(out)
}

/// In-place Cholesky of a dense symmetric positive semidefinite matrix stored
/// row-major (lower triangle used). Pivots below `tiny · max diag` are
/// replaced by a huge value so that the matching solution component vanishes,
/// which keeps rank-deficient normal equations solvable.
pub struct DenseCholesky {
    n: usize,
    l: Vec<f64>,
    pub tiny_pivots: usize,
}

impl DenseCholesky {
    pub fn factor(mut a: Vec<f64>, n: usize, tiny: f64) -> Self {
        assert_eq!(a.len(), n * n);
        let maxdiag = (0..n).fold(0.0f64, |m, i| m.max(a[i * n + i].abs())).max(1e-300);
        let mut tiny_pivots = 0;
        for i in 0..n {
            let (done, rest) = a.split_at_mut(i * n);
            let rowi = &mut rest[..n];
            for j in 0..i {
                let rowj = &done[j * n..j * n + j + 1];
                let s = rowi[j] - dot(&rowi[..j], &rowj[..j]);
                rowi[j] = s / rowj[j];
            }
            let d = rowi[i] - dot(&rowi[..i], &rowi[..i]);
            rowi[i] = if d <= tiny * maxdiag || !d.is_finite() {
                tiny_pivots += 1;
                1e64
            } else {
                d.sqrt()
            };
        }
        DenseCholesky { n, l: a, tiny_pivots }
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let l = &self.l;
        let mut y = b.to_vec();
        for i in 0..n {
            let s = y[i] - dot(&l[i * n..i * n + i], &y[..i]);
            y[i] = s / l[i * n + i];
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in i + 1..n {
                s -= l[k * n + i] * y[k];
            }
            y[i] = s / l[i * n + i];
        }
        y
    }
}
