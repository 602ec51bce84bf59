//! Dense row-major matrices and the factorizations the model needs, together
//! with the reverse-mode adjoints of each operation. Everything is f64 and
//! sized for the M <= a-few-thousand regime of this crate.

use crate::error::{Error, Result};

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Self {
        let r = rows.len();
        let c = if r == 0 { 0 } else { rows[0].len() };
        let mut data = Vec::with_capacity(r * c);
        for row in &rows {
            assert_eq!(row.len(), c, "ragged rows");
            data.extend_from_slice(row);
        }
        Mat { rows: r, cols: c, data }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols);
        Mat { rows, cols, data }
    }

    pub fn eye(n: usize) -> Self {
        let mut m = Mat::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
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

    /// self * other.
    pub fn matmul(&self, other: &Mat) -> Mat {
        assert_eq!(self.cols, other.rows);
        let mut out = Mat::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let a_row = self.row(i);
            let out_row = out.row_mut(i);
            for (k, &a_ik) in a_row.iter().enumerate() {
                if a_ik == 0.0 {
                    continue;
                }
                let b_row = other.row(k);
                for j in 0..other.cols {
                    out_row[j] += a_ik * b_row[j];
                }
            }
        }
        out
    }

    pub fn matvec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(self.cols, v.len());
        (0..self.rows).map(|i| dot(self.row(i), v)).collect()
    }

    pub fn frobenius_distance(&self, other: &Mat) -> f64 {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

impl std::ops::Index<(usize, usize)> for Mat {
    type Output = f64;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Mat {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

/// Four-way unrolled dot product; the independent accumulators let the
/// backend pipeline the FP adds.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let n = a.len();
    let chunks = n / 4 * 4;
    let (mut s0, mut s1, mut s2, mut s3) = (0.0, 0.0, 0.0, 0.0);
    let mut i = 0;
    while i < chunks {
        s0 += a[i] * b[i];
        s1 += a[i + 1] * b[i + 1];
        s2 += a[i + 2] * b[i + 2];
        s3 += a[i + 3] * b[i + 3];
        i += 4;
    }
    let mut acc = (s0 + s1) + (s2 + s3);
    while i < n {
        acc += a[i] * b[i];
        i += 1;
    }
    acc
}

#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for i in 0..x.len() {
        y[i] += alpha * x[i];
    }
}

/// Cholesky factor of a symmetric positive definite matrix: A = L L^T.
/// Only the lower triangle of `a` is read.
pub fn cholesky(a: &Mat) -> Result<Mat> {
    assert_eq!(a.rows, a.cols);
    let n = a.rows;
    let mut l = Mat::zeros(n, n);
    for i in 0..n {
        {
            let (head, tail) = l.data.split_at_mut(i * n);
            let row_i = &mut tail[..n];
            for j in 0..i {
                let s = dot(&row_i[..j], &head[j * n..j * n + j]);
                row_i[j] = (a[(i, j)] - s) / head[j * n + j];
            }
        }
        let s = {
            let row = &l.data[i * n..i * n + i];
            dot(row, row)
        };
        let d = a[(i, i)] - s;
        if d <= 0.0 || !d.is_finite() {
            let (dmin, dmax) = diag_range(a);
            return Err(Error::Numerical {
                context: format!("cholesky pivot {} non-positive ({:.3e})", i, d),
                size: n,
                diag_min: dmin,
                diag_max: dmax,
                jitter: 0.0,
            });
        }
        l.data[i * n + i] = d.sqrt();
    }
    Ok(l)
}

fn diag_range(a: &Mat) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for i in 0..a.rows {
        lo = lo.min(a[(i, i)]);
        hi = hi.max(a[(i, i)]);
    }
    (lo, hi)
}

/// Solve L x = b in place for lower-triangular L.
pub fn solve_lower(l: &Mat, b: &mut [f64]) {
    let n = l.rows;
    debug_assert_eq!(b.len(), n);
    for i in 0..n {
        let row = l.row(i);
        let s = dot(&row[..i], &b[..i]);
        b[i] = (b[i] - s) / row[i];
    }
}

/// Solve L^T x = b in place, given `lt` = L^T stored row-major
/// (i.e. upper-triangular with contiguous rows).
pub fn solve_upper_t(lt: &Mat, b: &mut [f64]) {
    let n = lt.rows;
    debug_assert_eq!(b.len(), n);
    for i in (0..n).rev() {
        let row = lt.row(i);
        let s = dot(&row[i + 1..], &b[i + 1..]);
        b[i] = (b[i] - s) / row[i];
    }
}

/// Solve L^T x = b in place using L itself (strided column access).
pub fn solve_upper(l: &Mat, b: &mut [f64]) {
    let n = l.rows;
    for i in (0..n).rev() {
        let mut s = 0.0;
        for k in i + 1..n {
            s += l[(k, i)] * b[k];
        }
        b[i] = (b[i] - s) / l[(i, i)];
    }
}

/// log det A = 2 sum log L_ii for A = L L^T.
pub fn logdet_from_chol(l: &Mat) -> f64 {
    (0..l.rows).map(|i| l[(i, i)].ln()).sum::<f64>() * 2.0
}

/// Reverse-mode adjoint of the Cholesky factorization.
///
/// Given `l` with A = L L^T and the adjoint `l_bar` of L, returns the adjoint
/// of A (symmetric). Uses the standard O(n^3) backward recursion: the result
/// equals Phi(L^T Lbar) propagated through L^{-T} . L^{-1} with the diagonal
/// halved, symmetrized at the end.
pub fn cholesky_backward(l: &Mat, l_bar: &Mat) -> Mat {
    let n = l.rows;
    // P = tril(L^T Lbar) with halved diagonal
    let mut p = Mat::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            // (L^T Lbar)[i][j] = sum_k L[k,i] Lbar[k,j]; only k >= max(i,j) contributes
            let mut s = 0.0;
            for k in i.max(j)..n {
                s += l[(k, i)] * l_bar[(k, j)];
            }
            p[(i, j)] = if i == j { 0.5 * s } else { s };
        }
    }
    // S = L^{-T} P L^{-1}: solve L^T X = P (column ops), then (L^T S^T = X^T).
    // Implement as: for each column j of P, x_j = L^{-T} p_j ; then for each row,
    // s_row = L^{-T} applied again on the transpose.
    let mut x = Mat::zeros(n, n);
    for j in 0..n {
        let mut col: Vec<f64> = (0..n).map(|i| p[(i, j)]).collect();
        solve_upper(l, &mut col);
        for i in 0..n {
            x[(i, j)] = col[i];
        }
    }
    // Now S = X L^{-1}  =>  S^T = L^{-T} X^T
    let mut s = Mat::zeros(n, n);
    for i in 0..n {
        let mut row: Vec<f64> = x.row(i).to_vec();
        solve_upper(l, &mut row); // solves L^T y = row  => y = L^{-T} row, giving row of X L^{-1} via symmetry
        s.row_mut(i).copy_from_slice(&row);
    }
    // a_bar = (S + S^T)/2
    let mut a_bar = Mat::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            a_bar[(i, j)] = 0.5 * (s[(i, j)] + s[(j, i)]);
        }
    }
    a_bar
}

/// Adjoint of `x = solve_lower(l, b)` (x = L^{-1} b) for a single RHS.
/// Accumulates into `b_bar` and `l_bar` given `x` and `x_bar`.
pub fn solve_lower_backward(
    l: &Mat,
    x: &[f64],
    x_bar: &[f64],
    b_bar: &mut [f64],
    l_bar: &mut Mat,
) {
    // b_bar += L^{-T} x_bar ; L_bar -= tril( (L^{-T} x_bar) x^T )
    let mut t = x_bar.to_vec();
    solve_upper(l, &mut t);
    for i in 0..t.len() {
        b_bar[i] += t[i];
        for j in 0..=i {
            l_bar[(i, j)] -= t[i] * x[j];
        }
    }
}

/// Adjoint of `x = solve_upper(l, b)` (x = L^{-T} b) for a single RHS.
pub fn solve_upper_backward(
    l: &Mat,
    x: &[f64],
    x_bar: &[f64],
    b_bar: &mut [f64],
    l_bar: &mut Mat,
) {
    // b_bar += L^{-1} x_bar ; L_bar -= tril( (L^{-1} x_bar) x^T )... transposed:
    // for x = L^{-T} b: d x = L^{-T}( db - dL^T x ), so
    // b_bar += L^{-1} x_bar and L_bar -= tril( x (L^{-1} x_bar)^T )^T -> lower part of x t^T with roles swapped.
    let mut t = x_bar.to_vec();
    solve_lower(l, &mut t);
    for i in 0..t.len() {
        b_bar[i] += t[i];
    }
    // <x_bar, L^{-T} dL^T x> = tr( x_bar^T L^{-T} dL^T x ) = <dL, t x^T ... with (i,j): dL[i][j] appears as dL^T[j][i]
    // contribution: sum over dL[i][j] of x_bar-path = (x[j] * t[i]) with i >= j? Derive: tr(x x_bar^T L^{-T} dL^T)
    //  = sum_{i,j} dL^T[j,i] (x x_bar^T L^{-T})[i,j] = sum dL[i,j] * (x t^T)[j,i] = sum dL[i,j] x[i] t[j]? Careful:
    //  (x x_bar^T L^{-T})[i,j] = x[i] * t[j]. Then term = sum_{i,j} dL[j,i]... final: L_bar[(i,j)] -= x[i]*t[j] for i>=j.
    for i in 0..t.len() {
        for j in 0..=i {
            l_bar[(i, j)] -= x[i] * t[j];
        }
    }
}

/// Jacobi eigenvalue iteration for symmetric matrices. Test-oracle quality:
/// O(n^3) per sweep, fine for n <= a few hundred. Returns eigenvalues.
pub fn symmetric_eigenvalues(a: &Mat) -> Vec<f64> {
    assert_eq!(a.rows, a.cols);
    let n = a.rows;
    let mut m = a.clone();
    for _sweep in 0..100 {
        let mut off = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                off += m[(i, j)] * m[(i, j)];
            }
        }
        if off.sqrt() < 1e-14 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[(p, q)];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let theta = (m[(q, q)] - m[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[(k, p)];
                    let mkq = m[(k, q)];
                    m[(k, p)] = c * mkp - s * mkq;
                    m[(k, q)] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[(p, k)];
                    let mqk = m[(q, k)];
                    m[(p, k)] = c * mpk - s * mqk;
                    m[(q, k)] = s * mpk + c * mqk;
                }
            }
        }
    }
    (0..n).map(|i| m[(i, i)]).collect()
}
