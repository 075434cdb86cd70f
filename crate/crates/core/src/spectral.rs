//! Dense real linear algebra: singular values, kernels, distances, norms.

use num_bigint::BigInt;
use num_traits::One;

use crate::bareiss;
use crate::error::{Error, Result};
use crate::rational::{lcm_of_denominators, Rational};

pub use crate::sampler::MatrixSample;

/// Row-major dense matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_fn(n, n, |i, j| if i == j { 1.0 } else { 0.0 })
    }

    pub fn from_fn(rows: usize, cols: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Matrix { rows, cols, data }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let cols = rows.first().map_or(0, |r| r.len());
        assert!(rows.iter().all(|r| r.len() == cols), "ragged rows");
        Matrix {
            rows: rows.len(),
            cols,
            data: rows.concat(),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn transpose(&self) -> Matrix {
        Self::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        self.data.chunks(self.cols).map(|r| dot(r, x)).collect()
    }

    pub fn mul_t_vec(&self, y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for (r, &yi) in self.data.chunks(self.cols).zip(y) {
            for (o, &v) in out.iter_mut().zip(r) {
                *o += v * yi;
            }
        }
        out
    }

    pub fn frobenius(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn without_col(&self, c: usize) -> Matrix {
        Self::from_fn(self.rows, self.cols - 1, |i, j| {
            self.get(i, if j < c { j } else { j + 1 })
        })
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, c)).collect()
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    // Scaled to avoid overflow/underflow on extreme inputs.
    let m = a.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if m == 0.0 || !m.is_finite() {
        return m;
    }
    m * a.iter().map(|v| (v / m) * (v / m)).sum::<f64>().sqrt()
}

/// Householder vector for x: (I - beta v v^T) x = alpha e_1.
fn householder(x: &[f64]) -> (Vec<f64>, f64, f64) {
    let nx = norm(x);
    let mut v = x.to_vec();
    if nx == 0.0 {
        return (v, 0.0, 0.0);
    }
    let alpha = if x[0] >= 0.0 { -nx } else { nx };
    v[0] -= alpha;
    let vv = dot(&v, &v);
    let beta = if vv == 0.0 { 0.0 } else { 2.0 / vv };
    (v, beta, alpha)
}

/// Upper bidiagonal form (diagonal d, superdiagonal e) of a matrix with rows >= cols.
fn bidiagonalize(m: &Matrix) -> (Vec<f64>, Vec<f64>) {
    let (rows, cols) = (m.rows, m.cols);
    let mut a = m.clone();
    let mut d = vec![0.0; cols];
    let mut e = vec![0.0; cols.saturating_sub(1)];
    for k in 0..cols {
        let x: Vec<f64> = (k..rows).map(|i| a.get(i, k)).collect();
        let (v, beta, alpha) = householder(&x);
        d[k] = alpha;
        if beta != 0.0 {
            for j in k..cols {
                let s: f64 = (k..rows).map(|i| v[i - k] * a.get(i, j)).sum();
                for i in k..rows {
                    let val = a.get(i, j) - beta * s * v[i - k];
                    a.set(i, j, val);
                }
            }
        } else {
            d[k] = a.get(k, k);
        }
        if k + 1 < cols {
            let x: Vec<f64> = (k + 1..cols).map(|j| a.get(k, j)).collect();
            let (v, beta, alpha) = householder(&x);
            e[k] = alpha;
            if beta != 0.0 {
                for i in k..rows {
                    let s: f64 = (k + 1..cols).map(|j| v[j - k - 1] * a.get(i, j)).sum();
                    for j in k + 1..cols {
                        let val = a.get(i, j) - beta * s * v[j - k - 1];
                        a.set(i, j, val);
                    }
                }
            } else {
                e[k] = a.get(k, k + 1);
            }
        }
    }
    (d, e)
}

/// Number of singular values of the bidiagonal (d, e) strictly below x, by a
/// Sturm count on the Golub-Kahan tridiagonal [[0, B^T], [B, 0]].
fn count_below(offdiag: &[f64], pivmin: f64, x: f64) -> usize {
    let mut q = -x;
    if q.abs() < pivmin {
        q = -pivmin;
    }
    let mut neg = usize::from(q < 0.0);
    for &b in offdiag {
        q = -x - b * b / q;
        if q.abs() < pivmin {
            q = -pivmin;
        }
        if q < 0.0 {
            neg += 1;
        }
    }
    neg - offdiag.len().div_ceil(2).min(neg)
}

fn tgk(d: &[f64], e: &[f64]) -> Vec<f64> {
    let mut t = Vec::with_capacity(2 * d.len());
    for (i, &di) in d.iter().enumerate() {
        t.push(di);
        if i < e.len() {
            t.push(e[i]);
        }
    }
    t
}

/// The `idx`-th smallest singular value (0-based) of a bidiagonal matrix.
fn bidiag_singular(d: &[f64], e: &[f64], idx: usize) -> f64 {
    if e.iter().all(|&v| v == 0.0) {
        let mut s: Vec<f64> = d.iter().map(|v| v.abs()).collect();
        s.sort_by(f64::total_cmp);
        return s[idx];
    }
    let t = tgk(d, e);
    let bmax = t.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if bmax == 0.0 {
        return 0.0;
    }
    let pivmin = f64::MIN_POSITIVE * bmax * bmax.max(1.0);
    let mut hi = 0.0f64;
    for i in 0..t.len() {
        let l = if i > 0 { t[i - 1].abs() } else { 0.0 };
        hi = hi.max(l + t[i].abs());
    }
    hi *= 1.0 + 1e-12;
    let mut lo = 0.0f64;
    // Number of singular values below x is count_below(x) with the n
    // negative eigenvalues already discounted.
    let below = |x: f64| count_below(&t, pivmin, x);
    for _ in 0..2000 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi || hi - lo <= 2.0 * f64::EPSILON * hi {
            break;
        }
        if below(mid) > idx {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}

fn oriented(m: &Matrix) -> Matrix {
    if m.rows >= m.cols {
        m.clone()
    } else {
        m.transpose()
    }
}

/// All singular values, ascending.
pub fn singular_values(m: &Matrix) -> Vec<f64> {
    let a = oriented(m);
    let (d, e) = bidiagonalize(&a);
    (0..d.len()).map(|i| bidiag_singular(&d, &e, i)).collect()
}

/// Smallest singular value of a square matrix (numeric).
pub fn smallest_singular(m: &Matrix) -> Result<f64> {
    if m.rows != m.cols {
        return Err(Error::InvalidInput(format!(
            "{}x{} matrix is not square",
            m.rows, m.cols
        )));
    }
    if m.rows == 0 {
        return Ok(0.0);
    }
    let (d, e) = bidiagonalize(m);
    Ok(bidiag_singular(&d, &e, 0))
}

/// Smallest singular value of an integer matrix; exactly 0 when singular.
pub fn smallest_singular_int(rows: &[Vec<i64>]) -> Result<f64> {
    let n = rows.len();
    if rows.iter().any(|r| r.len() != n) {
        return Err(Error::InvalidInput("matrix is not square".into()));
    }
    if bareiss::rank_i64(rows) < n {
        return Ok(0.0);
    }
    let m = Matrix::from_fn(n, n, |i, j| rows[i][j] as f64);
    smallest_singular(&m)
}

/// Rows scaled to integers (each row by the lcm of its denominators).
fn integer_rows(rows: &[Vec<Rational>]) -> Vec<Vec<BigInt>> {
    rows.iter()
        .map(|r| {
            let l = lcm_of_denominators(r);
            r.iter().map(|v| (v * &l).to_integer()).collect()
        })
        .collect()
}

/// Smallest singular value of a rational matrix with the exact-rank pre-check.
pub fn smallest_singular_rational(rows: &[Vec<Rational>]) -> Result<f64> {
    let n = rows.len();
    if rows.iter().any(|r| r.len() != n) {
        return Err(Error::InvalidInput("matrix is not square".into()));
    }
    if bareiss::rank(&integer_rows(rows)) < n {
        return Ok(0.0);
    }
    let m = Matrix::from_fn(n, n, |i, j| crate::rational::to_f64(&rows[i][j]));
    smallest_singular(&m)
}

/// Unit vector v with A v = 0 for A with fewer rows than columns, taken as the
/// last column of the Householder Q of A^T. First coordinate above 1e-8 in
/// magnitude is made positive.
pub fn kernel_vector(a: &Matrix) -> Result<Vec<f64>> {
    let (m, n) = (a.rows, a.cols);
    if m >= n {
        return Err(Error::InvalidInput(format!(
            "kernel_vector needs rows < cols, got {m}x{n}"
        )));
    }
    let mut at = a.transpose(); // n x m
    let mut refl: Vec<(Vec<f64>, f64)> = Vec::with_capacity(m);
    for k in 0..m {
        let x: Vec<f64> = (k..n).map(|i| at.get(i, k)).collect();
        let (v, beta, _) = householder(&x);
        if beta != 0.0 {
            for j in k..m {
                let s: f64 = (k..n).map(|i| v[i - k] * at.get(i, j)).sum();
                for i in k..n {
                    let val = at.get(i, j) - beta * s * v[i - k];
                    at.set(i, j, val);
                }
            }
        }
        refl.push((v, beta));
    }
    let mut q = vec![0.0; n];
    q[n - 1] = 1.0;
    for (k, (v, beta)) in refl.iter().enumerate().rev() {
        if *beta == 0.0 {
            continue;
        }
        let s: f64 = (k..n).map(|i| v[i - k] * q[i]).sum();
        for i in k..n {
            q[i] -= beta * s * v[i - k];
        }
    }
    let nq = norm(&q);
    q.iter_mut().for_each(|v| *v /= nq);
    if let Some(first) = q.iter().find(|v| v.abs() > 1e-8) {
        if *first < 0.0 {
            q.iter_mut().for_each(|v| *v = -*v);
        }
    }
    Ok(q)
}

/// Distance from column i (0-based) to the span of the other columns, by
/// Householder QR with column pivoting on the remaining columns.
pub fn dist_to_colspan(m: &Matrix, i: usize) -> Result<f64> {
    if i >= m.cols {
        return Err(Error::InvalidInput(format!("column {i} out of range")));
    }
    let mut b = m.without_col(i);
    let mut y = m.column(i);
    let (rows, cols) = (b.rows, b.cols);
    let scale = m.frobenius().max(f64::MIN_POSITIVE);
    let tol = 1e-13 * scale;
    let mut perm: Vec<usize> = (0..cols).collect();
    let mut rank = 0;
    while rank < rows.min(cols) {
        let k = rank;
        let col_norm = |j: usize| norm(&(k..rows).map(|r| b.get(r, j)).collect::<Vec<_>>());
        let (best, bn) = (k..cols)
            .map(|j| (j, col_norm(perm[j])))
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .expect("nonempty");
        if bn <= tol {
            break;
        }
        perm.swap(k, best);
        let pk = perm[k];
        let x: Vec<f64> = (k..rows).map(|r| b.get(r, pk)).collect();
        let (v, beta, _) = householder(&x);
        if beta != 0.0 {
            for &j in &perm[k..] {
                let s: f64 = (k..rows).map(|r| v[r - k] * b.get(r, j)).sum();
                for r in k..rows {
                    let val = b.get(r, j) - beta * s * v[r - k];
                    b.set(r, j, val);
                }
            }
            let s: f64 = (k..rows).map(|r| v[r - k] * y[r]).sum();
            for r in k..rows {
                y[r] -= beta * s * v[r - k];
            }
        }
        rank += 1;
    }
    Ok(norm(&y[rank..]))
}

/// Exact-checked distance for integer matrices: 0 exactly when column i is a
/// rational combination of the others.
pub fn dist_to_colspan_int(rows: &[Vec<i64>], i: usize) -> Result<f64> {
    let without: Vec<Vec<i64>> = rows
        .iter()
        .map(|r| {
            r.iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, &v)| v)
                .collect()
        })
        .collect();
    if bareiss::rank_i64(rows) == bareiss::rank_i64(&without) {
        return Ok(0.0);
    }
    let m = Matrix::from_rows(
        &rows
            .iter()
            .map(|r| r.iter().map(|&v| v as f64).collect())
            .collect::<Vec<_>>(),
    );
    dist_to_colspan(&m, i)
}

/// Spectral norm of M - mean·J by power iteration on the Gram operator.
pub fn opnorm_centered(m: &Matrix, mean: f64) -> f64 {
    let apply = |x: &[f64]| -> Vec<f64> {
        let sx: f64 = x.iter().sum();
        let mut y = m.mul_vec(x);
        y.iter_mut().for_each(|v| *v -= mean * sx);
        y
    };
    let apply_t = |y: &[f64]| -> Vec<f64> {
        let sy: f64 = y.iter().sum();
        let mut z = m.mul_t_vec(y);
        z.iter_mut().for_each(|v| *v -= mean * sy);
        z
    };
    let n = m.cols;
    if n == 0 || m.rows == 0 {
        return 0.0;
    }
    // Deterministic start vector with no special symmetry.
    let mut x: Vec<f64> = (0..n)
        .map(|i| 1.0 + ((i * 7919) % 97) as f64 / 97.0)
        .collect();
    let nx = norm(&x);
    x.iter_mut().for_each(|v| *v /= nx);
    let mut sigma = 0.0f64;
    for _ in 0..100_000 {
        let y = apply(&x);
        let s_new = norm(&y);
        if s_new == 0.0 {
            return 0.0;
        }
        let mut z = apply_t(&y);
        let nz = norm(&z);
        if nz == 0.0 {
            return s_new;
        }
        z.iter_mut().for_each(|v| *v /= nz);
        x = z;
        if (s_new - sigma).abs() <= 1e-12 * s_new {
            return s_new;
        }
        sigma = s_new;
    }
    sigma
}

/// Integer matrix is singular, decided exactly.
pub fn is_singular_int(rows: &[Vec<i64>]) -> bool {
    bareiss::rank_i64(rows) < rows.len()
}

/// Rational identity helper for tests and examples.
pub fn rational_identity(n: usize) -> Vec<Vec<Rational>> {
    (0..n)
        .map(|i| {
            (0..n)
                .map(|j| {
                    if i == j {
                        Rational::one()
                    } else {
                        Rational::from_integer(0.into())
                    }
                })
                .collect()
        })
        .collect()
}
