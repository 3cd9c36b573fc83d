//! Small linear-algebra kernels: tridiagonal matrices (Thomas algorithm) and
//! dense LU with partial pivoting for the nonsymmetric adjoint systems.

use crate::error::{check_len, QviError, Result};
use crate::scalar::Scalar;

/// Tridiagonal matrix stored by diagonals.
///
/// `lower[i]` is entry `(i + 1, i)`, `upper[i]` is entry `(i, i + 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tridiagonal<S> {
    pub lower: Vec<S>,
    pub diag: Vec<S>,
    pub upper: Vec<S>,
}

impl<S: Scalar> Tridiagonal<S> {
    pub fn new(lower: Vec<S>, diag: Vec<S>, upper: Vec<S>) -> Result<Self> {
        let n = diag.len();
        if n == 0 {
            return Err(QviError::Config("empty tridiagonal matrix".into()));
        }
        check_len(n - 1, lower.len())?;
        check_len(n - 1, upper.len())?;
        Ok(Self { lower, diag, upper })
    }

    pub fn from_diagonal(diag: Vec<S>) -> Self {
        let n = diag.len();
        Self {
            lower: vec![S::zero(); n.saturating_sub(1)],
            diag,
            upper: vec![S::zero(); n.saturating_sub(1)],
        }
    }

    pub fn dim(&self) -> usize {
        self.diag.len()
    }

    pub fn get(&self, i: usize, j: usize) -> S {
        if i == j {
            self.diag[i]
        } else if i == j + 1 {
            self.lower[j]
        } else if j == i + 1 {
            self.upper[i]
        } else {
            S::zero()
        }
    }

    pub fn transpose(&self) -> Self {
        Self {
            lower: self.upper.clone(),
            diag: self.diag.clone(),
            upper: self.lower.clone(),
        }
    }

    pub fn is_symmetric(&self) -> bool {
        self.lower == self.upper
    }

    pub fn scaled(&self, factor: S) -> Self {
        let f = |v: &Vec<S>| v.iter().map(|&x| x * factor).collect::<Vec<_>>();
        Self {
            lower: f(&self.lower),
            diag: f(&self.diag),
            upper: f(&self.upper),
        }
    }

    /// `self + diag(d)`.
    pub fn add_diagonal(&self, d: &[S]) -> Result<Self> {
        check_len(self.dim(), d.len())?;
        let mut out = self.clone();
        for (a, &b) in out.diag.iter_mut().zip(d) {
            *a += b;
        }
        Ok(out)
    }

    /// Off-diagonals nonpositive and weak row diagonal dominance, up to a few
    /// ulps of assembly rounding.
    pub fn is_m_matrix(&self) -> bool {
        let n = self.dim();
        if self.lower.iter().chain(&self.upper).any(|&x| x > S::zero()) {
            return false;
        }
        (0..n).all(|i| {
            let mut off = S::zero();
            if i > 0 {
                off += self.lower[i - 1].abs();
            }
            if i + 1 < n {
                off += self.upper[i].abs();
            }
            self.diag[i] > S::zero()
                && self.diag[i] >= off * (S::one() - S::lit(8.0) * S::epsilon())
        })
    }

    pub fn mul_vec(&self, x: &[S]) -> Result<Vec<S>> {
        let n = self.dim();
        check_len(n, x.len())?;
        let mut y = vec![S::zero(); n];
        for i in 0..n {
            let mut acc = self.diag[i] * x[i];
            if i > 0 {
                acc += self.lower[i - 1] * x[i - 1];
            }
            if i + 1 < n {
                acc += self.upper[i] * x[i + 1];
            }
            y[i] = acc;
        }
        Ok(y)
    }

    /// Thomas algorithm. No pivoting; intended for the diagonally dominant
    /// and row-replaced systems that occur in this crate.
    pub fn solve(&self, rhs: &[S]) -> Result<Vec<S>> {
        let n = self.dim();
        check_len(n, rhs.len())?;
        let scale = self
            .diag
            .iter()
            .chain(&self.lower)
            .chain(&self.upper)
            .fold(S::zero(), |m, &x| m.max(x.abs()));
        if scale == S::zero() {
            return Err(QviError::Singular {
                condition: f64::INFINITY,
            });
        }
        let tiny = S::epsilon() * S::lit(16.0) * scale;
        let mut c = vec![S::zero(); n];
        let mut d = vec![S::zero(); n];
        let mut min_pivot = S::infinity();
        let mut pivot = self.diag[0];
        min_pivot = min_pivot.min(pivot.abs());
        if pivot.abs() <= tiny {
            return Err(singular(scale, pivot));
        }
        if n > 1 {
            c[0] = self.upper[0] / pivot;
        }
        d[0] = rhs[0] / pivot;
        for i in 1..n {
            pivot = self.diag[i] - self.lower[i - 1] * c[i - 1];
            min_pivot = min_pivot.min(pivot.abs());
            if pivot.abs() <= tiny {
                return Err(singular(scale, pivot));
            }
            if i + 1 < n {
                c[i] = self.upper[i] / pivot;
            }
            d[i] = (rhs[i] - self.lower[i - 1] * d[i - 1]) / pivot;
        }
        let mut x = d;
        for i in (0..n - 1).rev() {
            let next = x[i + 1];
            x[i] -= c[i] * next;
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(singular(scale, min_pivot));
        }
        Ok(x)
    }

    pub fn to_dense(&self) -> DenseMatrix<S> {
        let n = self.dim();
        let mut m = DenseMatrix::zeros(n, n);
        for i in 0..n {
            for j in i.saturating_sub(1)..(i + 2).min(n) {
                m[(i, j)] = self.get(i, j);
            }
        }
        m
    }
}

fn singular<S: Scalar>(scale: S, pivot: S) -> QviError {
    let cond = if pivot == S::zero() {
        f64::INFINITY
    } else {
        (scale / pivot.abs()).to_f64_lossy()
    };
    QviError::Singular { condition: cond }
}

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix<S> {
    rows: usize,
    cols: usize,
    data: Vec<S>,
}

impl<S: Scalar> DenseMatrix<S> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![S::zero(); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = S::one();
        }
        m
    }

    /// Builds a matrix column by column from a linear map applied to the unit vectors.
    pub fn from_columns<F>(n: usize, mut column: F) -> Result<Self>
    where
        F: FnMut(&[S]) -> Result<Vec<S>>,
    {
        let mut m = Self::zeros(n, n);
        let mut e = vec![S::zero(); n];
        for j in 0..n {
            e[j] = S::one();
            let col = column(&e)?;
            check_len(n, col.len())?;
            for (i, v) in col.into_iter().enumerate() {
                m[(i, j)] = v;
            }
            e[j] = S::zero();
        }
        Ok(m)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    pub fn mul_vec(&self, x: &[S]) -> Result<Vec<S>> {
        check_len(self.cols, x.len())?;
        Ok((0..self.rows)
            .map(|i| {
                self.data[i * self.cols..(i + 1) * self.cols]
                    .iter()
                    .zip(x)
                    .map(|(&a, &b)| a * b)
                    .sum()
            })
            .collect())
    }

    pub fn matmul(&self, other: &Self) -> Result<Self> {
        check_len(self.cols, other.rows)?;
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == S::zero() {
                    continue;
                }
                for j in 0..other.cols {
                    out[(i, j)] += a * other[(k, j)];
                }
            }
        }
        Ok(out)
    }

    /// Multiplies row `i` by `d[i]` (left multiplication by a diagonal matrix).
    pub fn scale_rows(&mut self, d: &[S]) -> Result<()> {
        check_len(self.rows, d.len())?;
        if self.cols == 0 {
            return Ok(());
        }
        for (row, &di) in self.data.chunks_mut(self.cols).zip(d) {
            row.iter_mut().for_each(|v| *v *= di);
        }
        Ok(())
    }

    /// Multiplies column `j` by `d[j]` (right multiplication by a diagonal matrix).
    pub fn scale_cols(&mut self, d: &[S]) -> Result<()> {
        check_len(self.cols, d.len())?;
        if self.cols == 0 {
            return Ok(());
        }
        for row in self.data.chunks_mut(self.cols) {
            row.iter_mut().zip(d).for_each(|(v, &dj)| *v *= dj);
        }
        Ok(())
    }

    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        check_len(self.rows, other.rows)?;
        check_len(self.cols, other.cols)?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn lu(&self) -> Result<Lu<S>> {
        Lu::factor(self.clone())
    }

    pub fn solve(&self, rhs: &[S]) -> Result<Vec<S>> {
        self.lu()?.solve(rhs)
    }
}

impl<S> std::ops::Index<(usize, usize)> for DenseMatrix<S> {
    type Output = S;
    fn index(&self, (i, j): (usize, usize)) -> &S {
        &self.data[i * self.cols + j]
    }
}

impl<S> std::ops::IndexMut<(usize, usize)> for DenseMatrix<S> {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut S {
        &mut self.data[i * self.cols + j]
    }
}

/// LU factorization with partial pivoting, `P A = L U`.
#[derive(Debug, Clone)]
pub struct Lu<S> {
    lu: DenseMatrix<S>,
    perm: Vec<usize>,
}

impl<S: Scalar> Lu<S> {
    fn factor(mut a: DenseMatrix<S>) -> Result<Self> {
        let n = a.rows;
        check_len(n, a.cols)?;
        let scale = a.data.iter().fold(S::zero(), |m, &x| m.max(x.abs()));
        let tiny = S::epsilon() * S::lit(n.max(1) as f64) * scale;
        let mut perm: Vec<usize> = (0..n).collect();
        let mut min_pivot = S::infinity();
        for k in 0..n {
            let (p, pmax) =
                (k..n)
                    .map(|i| (i, a[(i, k)].abs()))
                    .fold(
                        (k, S::zero()),
                        |best, cur| if cur.1 > best.1 { cur } else { best },
                    );
            if pmax <= tiny {
                return Err(singular(scale, pmax));
            }
            min_pivot = min_pivot.min(pmax);
            if p != k {
                for j in 0..n {
                    a.data.swap(k * n + j, p * n + j);
                }
                perm.swap(k, p);
            }
            let pivot = a[(k, k)];
            for i in k + 1..n {
                let factor = a[(i, k)] / pivot;
                a[(i, k)] = factor;
                if factor != S::zero() {
                    for j in k + 1..n {
                        let akj = a[(k, j)];
                        a[(i, j)] -= factor * akj;
                    }
                }
            }
        }
        Ok(Self { lu: a, perm })
    }

    pub fn solve(&self, rhs: &[S]) -> Result<Vec<S>> {
        let n = self.lu.rows;
        check_len(n, rhs.len())?;
        let mut x: Vec<S> = self.perm.iter().map(|&p| rhs[p]).collect();
        for i in 0..n {
            let acc = (0..i).fold(x[i], |acc, j| acc - self.lu[(i, j)] * x[j]);
            x[i] = acc;
        }
        for i in (0..n).rev() {
            let acc = (i + 1..n).fold(x[i], |acc, j| acc - self.lu[(i, j)] * x[j]);
            x[i] = acc / self.lu[(i, i)];
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(QviError::NonFinite("dense LU solve"));
        }
        Ok(x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn laplace(n: usize) -> Tridiagonal<f64> {
        Tridiagonal::new(vec![-1.0; n - 1], vec![2.0; n], vec![-1.0; n - 1]).unwrap()
    }

    #[test]
    fn thomas_inverts_matvec() {
        let k = laplace(7);
        let v: Vec<f64> = (0..7).map(|i| (i as f64 * 0.7).sin()).collect();
        let b = k.mul_vec(&v).unwrap();
        let x = k.solve(&b).unwrap();
        for (a, b) in x.iter().zip(&v) {
            assert!((a - b).abs() < 1e-13);
        }
    }

    #[test]
    fn thomas_reports_singular() {
        let k = Tridiagonal::new(vec![1.0], vec![1.0, 1.0], vec![1.0]).unwrap();
        assert!(matches!(
            k.solve(&[1.0, 2.0]),
            Err(QviError::Singular { .. })
        ));
    }

    #[test]
    fn lu_matches_thomas_on_tridiagonal() {
        let k = laplace(6).add_diagonal(&[0.3; 6]).unwrap();
        let b = [1.0, -2.0, 0.5, 0.0, 3.0, 1.0];
        let x1 = k.solve(&b).unwrap();
        let x2 = k.to_dense().solve(&b).unwrap();
        for (a, b) in x1.iter().zip(&x2) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn lu_pivots() {
        let mut a = DenseMatrix::<f64>::zeros(2, 2);
        a[(0, 1)] = 1.0;
        a[(1, 0)] = 2.0;
        let x = a.solve(&[3.0, 4.0]).unwrap();
        assert_eq!(x, vec![2.0, 3.0]);
    }

    #[test]
    fn m_matrix_detection() {
        assert!(laplace(5).is_m_matrix());
        let bad = Tridiagonal::new(vec![0.5; 2], vec![2.0; 3], vec![-1.0; 2]).unwrap();
        assert!(!bad.is_m_matrix());
    }
}
