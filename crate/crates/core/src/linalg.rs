//! Dense row-major matrices and the handful of kernels the models need:
//! GEMM (backed by `matrixmultiply`), LU solves, and the matrix exponential.

use std::fmt;
use std::ops::{Index, IndexMut};

#[derive(Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for r in 0..self.rows.min(8) {
            let row = self.row(r);
            let shown: Vec<String> = row.iter().take(8).map(|v| format!("{v:.6}")).collect();
            let tail = if self.cols > 8 { ", ..." } else { "" };
            writeln!(f, "  [{}{}]", shown.join(", "), tail)?;
        }
        if self.rows > 8 {
            writeln!(f, "  ...")?;
        }
        write!(f, "]")
    }
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    /// Panics if `data.len() != rows * cols`.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(
            data.len(),
            rows * cols,
            "buffer of length {} cannot back a {rows}x{cols} matrix",
            data.len()
        );
        Self { rows, cols, data }
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Self {
        let n = rows.len();
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(n * cols);
        for r in rows {
            assert_eq!(r.as_ref().len(), cols, "ragged rows");
            data.extend_from_slice(r.as_ref());
        }
        Self {
            rows: n,
            cols,
            data,
        }
    }

    /// A single column vector.
    pub fn column(values: &[f64]) -> Self {
        Self::from_vec(values.len(), 1, values.to_vec())
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
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
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

    pub fn col(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self[(r, c)]).collect()
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        self.data.iter_mut().for_each(|v| *v *= alpha);
    }

    pub fn scaled(&self, alpha: f64) -> Matrix {
        self.map(|v| v * alpha)
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: f64, other: &Matrix) {
        assert_eq!(self.shape(), other.shape(), "axpy shape mismatch");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
    }

    pub fn add_assign(&mut self, other: &Matrix) {
        self.axpy(1.0, other);
    }

    pub fn sub(&self, other: &Matrix) -> Matrix {
        let mut out = self.clone();
        out.axpy(-1.0, other);
        out
    }

    pub fn fill(&mut self, value: f64) {
        self.data.iter_mut().for_each(|v| *v = value);
    }

    /// Rows reversed in order (time reversal for `T x C` sequences).
    pub fn reversed_rows(&self) -> Matrix {
        let mut out = Matrix::zeros(self.rows, self.cols);
        for r in 0..self.rows {
            out.row_mut(self.rows - 1 - r).copy_from_slice(self.row(r));
        }
        out
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn frobenius(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Maximum absolute column sum.
    pub fn norm1(&self) -> f64 {
        (0..self.cols)
            .map(|c| (0..self.rows).map(|r| self[(r, c)].abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn matmul(&self, other: &Matrix) -> Matrix {
        let mut out = Matrix::zeros(self.rows, other.cols);
        gemm(1.0, self, false, other, false, 0.0, &mut out);
        out
    }

    /// `self * other^T`.
    pub fn matmul_t(&self, other: &Matrix) -> Matrix {
        let mut out = Matrix::zeros(self.rows, other.rows);
        gemm(1.0, self, false, other, true, 0.0, &mut out);
        out
    }

    /// `self^T * other`.
    pub fn t_matmul(&self, other: &Matrix) -> Matrix {
        let mut out = Matrix::zeros(self.cols, other.cols);
        gemm(1.0, self, true, other, false, 0.0, &mut out);
        out
    }

    /// `out = self * v` for a plain vector.
    pub fn matvec_into(&self, v: &[f64], out: &mut [f64]) {
        debug_assert_eq!(v.len(), self.cols);
        debug_assert_eq!(out.len(), self.rows);
        for (r, o) in out.iter_mut().enumerate() {
            *o = dot(self.row(r), v);
        }
    }

    pub fn matvec(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.rows];
        self.matvec_into(v, &mut out);
        out
    }

    /// `out += self^T * v`.
    pub fn t_matvec_acc(&self, v: &[f64], out: &mut [f64]) {
        debug_assert_eq!(v.len(), self.rows);
        debug_assert_eq!(out.len(), self.cols);
        for (r, &vr) in v.iter().enumerate() {
            if vr != 0.0 {
                axpy_slice(vr, self.row(r), out);
            }
        }
    }

    pub fn column_sums(&self) -> Matrix {
        let mut out = Matrix::zeros(1, self.cols);
        for r in 0..self.rows {
            axpy_slice(1.0, self.row(r), &mut out.data);
        }
        out
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;
    #[inline]
    fn index(&self, (r, c): (usize, usize)) -> &f64 {
        debug_assert!(r < self.rows && c < self.cols);
        &self.data[r * self.cols + c]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    #[inline]
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut f64 {
        debug_assert!(r < self.rows && c < self.cols);
        &mut self.data[r * self.cols + c]
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn axpy_slice(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// `c = alpha * op(a) * op(b) + beta * c`, with `op` an optional transpose.
pub fn gemm(alpha: f64, a: &Matrix, ta: bool, b: &Matrix, tb: bool, beta: f64, c: &mut Matrix) {
    let (m, k) = if ta {
        (a.cols, a.rows)
    } else {
        (a.rows, a.cols)
    };
    let (kb, n) = if tb {
        (b.cols, b.rows)
    } else {
        (b.rows, b.cols)
    };
    assert_eq!(k, kb, "gemm inner dimension mismatch");
    assert_eq!(c.shape(), (m, n), "gemm output shape mismatch");
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c.scale(beta);
        return;
    }
    let (rsa, csa) = if ta { (1, a.cols) } else { (a.cols, 1) };
    let (rsb, csb) = if tb { (1, b.cols) } else { (b.cols, 1) };
    // SAFETY: strides and extents describe the owned buffers exactly; the
    // output does not alias either input because `c` is borrowed mutably.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.data.as_ptr(),
            rsa as isize,
            csa as isize,
            b.data.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.data.as_mut_ptr(),
            c.cols as isize,
            1,
        );
    }
}

/// LU factorization with partial pivoting.
pub struct Lu {
    lu: Matrix,
    perm: Vec<usize>,
}

impl Lu {
    /// Returns `None` when a pivot is exactly zero.
    pub fn factor(a: &Matrix) -> Option<Lu> {
        assert_eq!(a.rows, a.cols, "LU needs a square matrix");
        let n = a.rows;
        let mut lu = a.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        for k in 0..n {
            let (p, pmax) = (k..n)
                .map(|r| (r, lu[(r, k)].abs()))
                .fold(
                    (k, -1.0),
                    |best, cur| if cur.1 > best.1 { cur } else { best },
                );
            if pmax == 0.0 {
                return None;
            }
            if p != k {
                for c in 0..n {
                    lu.data.swap(k * n + c, p * n + c);
                }
                perm.swap(k, p);
            }
            let pivot = lu[(k, k)];
            for r in k + 1..n {
                let f = lu[(r, k)] / pivot;
                lu[(r, k)] = f;
                if f != 0.0 {
                    for c in k + 1..n {
                        lu.data[r * n + c] -= f * lu.data[k * n + c];
                    }
                }
            }
        }
        Some(Lu { lu, perm })
    }

    /// Solves `A X = B` for a matrix right-hand side.
    pub fn solve(&self, b: &Matrix) -> Matrix {
        let n = self.lu.rows;
        assert_eq!(b.rows, n, "LU solve dimension mismatch");
        let mut x = Matrix::zeros(n, b.cols);
        for (i, &p) in self.perm.iter().enumerate() {
            x.row_mut(i).copy_from_slice(b.row(p));
        }
        for c in 0..b.cols {
            for i in 0..n {
                let mut s = x[(i, c)];
                for j in 0..i {
                    s -= self.lu[(i, j)] * x[(j, c)];
                }
                x[(i, c)] = s;
            }
            for i in (0..n).rev() {
                let mut s = x[(i, c)];
                for j in i + 1..n {
                    s -= self.lu[(i, j)] * x[(j, c)];
                }
                x[(i, c)] = s / self.lu[(i, i)];
            }
        }
        x
    }
}

const PADE3: [f64; 4] = [120.0, 60.0, 12.0, 1.0];
const PADE5: [f64; 6] = [30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0];
const PADE7: [f64; 8] = [
    17297280.0, 8648640.0, 1995840.0, 277200.0, 25200.0, 1512.0, 56.0, 1.0,
];
const PADE9: [f64; 10] = [
    17643225600.0,
    8821612800.0,
    2075673600.0,
    302702400.0,
    30270240.0,
    2162160.0,
    110880.0,
    3960.0,
    90.0,
    1.0,
];
const PADE13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];

// 1-norm bounds below which each Padé degree is accurate to unit roundoff.
const THETA3: f64 = 1.495585217958292e-2;
const THETA5: f64 = 2.53939833006323e-1;
const THETA7: f64 = 9.504178996162932e-1;
const THETA9: f64 = 2.097847961257068e0;
const THETA13: f64 = 5.371920351148152e0;

/// Matrix exponential by scaling and squaring with a diagonal Padé
/// approximant of degree 3..13 chosen from the 1-norm.
///
/// Returns a matrix with non-finite entries when the result overflows;
/// callers decide how to report it.
pub fn expm(a: &Matrix) -> Matrix {
    assert_eq!(a.rows, a.cols, "expm needs a square matrix");
    let n = a.rows;
    if n == 0 {
        return Matrix::zeros(0, 0);
    }
    let norm = a.norm1();
    if !norm.is_finite() {
        return Matrix::filled(n, n, f64::NAN);
    }
    let ident = Matrix::identity(n);
    let a2 = a.matmul(a);

    let low_degree = [
        (THETA3, &PADE3[..]),
        (THETA5, &PADE5[..]),
        (THETA7, &PADE7[..]),
        (THETA9, &PADE9[..]),
    ];
    for (theta, coeffs) in low_degree {
        if norm <= theta {
            let (u, v) = pade_low(a, &a2, &ident, coeffs);
            return pade_solve(&u, &v);
        }
    }

    let s = if norm > THETA13 {
        (norm / THETA13).log2().ceil().max(0.0) as i32
    } else {
        0
    };
    let scale = 0.5f64.powi(s);
    let a_s = a.scaled(scale);
    let a2 = a2.scaled(scale * scale);
    let a4 = a2.matmul(&a2);
    let a6 = a4.matmul(&a2);
    let b = &PADE13;

    // U = A [A6 (b13 A6 + b11 A4 + b9 A2) + b7 A6 + b5 A4 + b3 A2 + b1 I]
    let mut inner = a6.scaled(b[13]);
    inner.axpy(b[11], &a4);
    inner.axpy(b[9], &a2);
    let mut u_core = a6.matmul(&inner);
    u_core.axpy(b[7], &a6);
    u_core.axpy(b[5], &a4);
    u_core.axpy(b[3], &a2);
    u_core.axpy(b[1], &ident);
    let u = a_s.matmul(&u_core);

    // V = A6 (b12 A6 + b10 A4 + b8 A2) + b6 A6 + b4 A4 + b2 A2 + b0 I
    let mut inner = a6.scaled(b[12]);
    inner.axpy(b[10], &a4);
    inner.axpy(b[8], &a2);
    let mut v = a6.matmul(&inner);
    v.axpy(b[6], &a6);
    v.axpy(b[4], &a4);
    v.axpy(b[2], &a2);
    v.axpy(b[0], &ident);

    let mut r = pade_solve(&u, &v);
    for _ in 0..s {
        r = r.matmul(&r);
    }
    r
}

fn pade_low(a: &Matrix, a2: &Matrix, ident: &Matrix, b: &[f64]) -> (Matrix, Matrix) {
    let n = a.rows;
    let mut u_core = Matrix::zeros(n, n);
    let mut v = Matrix::zeros(n, n);
    let mut power = ident.clone();
    for k in 0..b.len() / 2 {
        u_core.axpy(b[2 * k + 1], &power);
        v.axpy(b[2 * k], &power);
        if k + 1 < b.len() / 2 {
            power = power.matmul(a2);
        }
    }
    (a.matmul(&u_core), v)
}

fn pade_solve(u: &Matrix, v: &Matrix) -> Matrix {
    let n = u.rows;
    let p = {
        let mut p = v.clone();
        p.add_assign(u);
        p
    };
    let q = v.sub(u);
    match Lu::factor(&q) {
        Some(lu) => lu.solve(&p),
        None => Matrix::filled(n, n, f64::NAN),
    }
}

/// Largest singular value, by power iteration on `A^T A`.
pub fn spectral_norm(a: &Matrix) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    let mut v = vec![1.0 / (a.cols as f64).sqrt(); a.cols];
    let mut sigma = 0.0;
    for _ in 0..200 {
        let av = a.matvec(&v);
        let mut w = vec![0.0; a.cols];
        a.t_matvec_acc(&av, &mut w);
        let nw = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        if !nw.is_finite() || nw == 0.0 {
            return if nw.is_finite() { 0.0 } else { f64::INFINITY };
        }
        let next = nw.sqrt();
        v = w.into_iter().map(|x| x / nw).collect();
        if (next - sigma).abs() <= 1e-12 * next {
            return next;
        }
        sigma = next;
    }
    sigma
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemm_transposes() {
        let a = Matrix::from_rows(&[[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]]);
        let b = Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]);
        assert_eq!(a.matmul(&b), Matrix::from_rows(&[[4.0, 5.0], [10.0, 11.0]]));
        assert_eq!(
            a.matmul_t(&a),
            Matrix::from_rows(&[[14.0, 32.0], [32.0, 77.0]])
        );
        assert_eq!(a.t_matmul(&a).shape(), (3, 3));
        assert_eq!(a.t_matmul(&a)[(0, 2)], 27.0);
    }

    #[test]
    fn lu_solves_permuted_system() {
        let a = Matrix::from_rows(&[[0.0, 2.0, 1.0], [1.0, 1.0, 0.0], [3.0, 0.0, 1.0]]);
        let x = Matrix::column(&[1.0, -2.0, 0.5]);
        let b = a.matmul(&x);
        let solved = Lu::factor(&a).unwrap().solve(&b);
        assert!(solved.sub(&x).max_abs() < 1e-14);
        assert!(Lu::factor(&Matrix::zeros(2, 2)).is_none());
    }

    #[test]
    fn expm_scalar_and_diagonal() {
        for &x in &[-30.0, -1.0, -1e-3, 0.0, 0.2, 1.0, 7.5] {
            let e = expm(&Matrix::from_rows(&[[x]]));
            assert!(
                (e[(0, 0)] - f64::exp(x)).abs() <= 1e-14 * f64::exp(x).max(1.0),
                "x={x}"
            );
        }
        let d = Matrix::from_rows(&[[-2.0, 0.0], [0.0, 0.5]]);
        let e = expm(&d);
        assert!((e[(0, 0)] - (-2.0f64).exp()).abs() < 1e-15);
        assert!((e[(1, 1)] - 0.5f64.exp()).abs() < 1e-15);
        assert_eq!(e[(0, 1)], 0.0);
    }

    #[test]
    fn expm_nilpotent_is_exact_polynomial() {
        let n = Matrix::from_rows(&[[0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [0.0, 0.0, 0.0]]);
        let e = expm(&n.scaled(3.0));
        let expected = Matrix::from_rows(&[[1.0, 3.0, 4.5], [0.0, 1.0, 3.0], [0.0, 0.0, 1.0]]);
        assert!(e.sub(&expected).max_abs() < 1e-13);
    }

    #[test]
    fn expm_overflow_is_non_finite() {
        let e = expm(&Matrix::from_rows(&[[1000.0]]));
        assert!(!e.is_finite());
    }

    #[test]
    fn spectral_norm_of_diagonal() {
        let d = Matrix::from_rows(&[[3.0, 0.0], [0.0, -4.0]]);
        assert!((spectral_norm(&d) - 4.0).abs() < 1e-9);
    }
}
