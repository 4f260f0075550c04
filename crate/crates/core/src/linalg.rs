//! Small dense complex linear algebra: fixed 3×3 phase blocks and general
//! square matrices with partial-pivot elimination.

use std::ops::{Add, Index, IndexMut, Mul, Sub};

use crate::scalar::{czero, Cplx, Scalar};

/// Per-phase complex vector, always indexed A=0, B=1, C=2.
pub type Phasor3<T> = [Cplx<T>; 3];

pub fn zero3<T: Scalar>() -> Phasor3<T> {
    [czero(); 3]
}

/// 3×3 complex matrix over phases A, B, C.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mat3<T: Scalar>(pub [[Cplx<T>; 3]; 3]);

impl<T: Scalar> Mat3<T> {
    pub fn zero() -> Self {
        Mat3([[czero(); 3]; 3])
    }

    pub fn identity() -> Self {
        Self::diag([Cplx::new(T::one(), T::zero()); 3])
    }

    pub fn diag(d: [Cplx<T>; 3]) -> Self {
        let mut m = Self::zero();
        for (i, v) in d.into_iter().enumerate() {
            m.0[i][i] = v;
        }
        m
    }

    pub fn from_real(rows: [[f64; 3]; 3]) -> Self {
        Self(rows.map(|r| r.map(|x| Cplx::new(T::lit(x), T::zero()))))
    }

    pub fn scale(&self, s: Cplx<T>) -> Self {
        let mut m = *self;
        for row in m.0.iter_mut() {
            for v in row.iter_mut() {
                *v = *v * s;
            }
        }
        m
    }

    pub fn transpose(&self) -> Self {
        let mut m = Self::zero();
        for i in 0..3 {
            for j in 0..3 {
                m.0[i][j] = self.0[j][i];
            }
        }
        m
    }

    pub fn mul_vec(&self, v: &Phasor3<T>) -> Phasor3<T> {
        let mut out = zero3();
        for (i, row) in self.0.iter().enumerate() {
            out[i] = row[0] * v[0] + row[1] * v[1] + row[2] * v[2];
        }
        out
    }

    /// Zeroes rows and columns of phases not present in `mask`.
    pub fn masked(&self, mask: [bool; 3]) -> Self {
        let mut m = *self;
        for i in 0..3 {
            for j in 0..3 {
                if !mask[i] || !mask[j] {
                    m.0[i][j] = czero();
                }
            }
        }
        m
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().flatten().all(|v| v.re == T::zero() && v.im == T::zero())
    }
}

impl<T: Scalar> Add for Mat3<T> {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        let mut m = self;
        for i in 0..3 {
            for j in 0..3 {
                m.0[i][j] = m.0[i][j] + rhs.0[i][j];
            }
        }
        m
    }
}

impl<T: Scalar> Mul for Mat3<T> {
    type Output = Self;
    fn mul(self, rhs: Self) -> Self {
        let mut m = Self::zero();
        for i in 0..3 {
            for j in 0..3 {
                m.0[i][j] = self.0[i][0] * rhs.0[0][j]
                    + self.0[i][1] * rhs.0[1][j]
                    + self.0[i][2] * rhs.0[2][j];
            }
        }
        m
    }
}

pub fn add3<T: Scalar>(a: &Phasor3<T>, b: &Phasor3<T>) -> Phasor3<T> {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

pub fn sub3<T: Scalar>(a: &Phasor3<T>, b: &Phasor3<T>) -> Phasor3<T> {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

/// Returned when elimination meets a pivot indistinguishable from zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Singular;

/// Row-major dense complex matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CMatrix<T: Scalar> {
    rows: usize,
    cols: usize,
    data: Vec<Cplx<T>>,
}

impl<T: Scalar> CMatrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        CMatrix { rows, cols, data: vec![czero(); rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = Cplx::new(T::one(), T::zero());
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> Cplx<T>) -> Self {
        let mut m = Self::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                m[(i, j)] = f(i, j);
            }
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    /// Copies the block starting at (`r0`, `c0`) of the given size.
    pub fn block(&self, r0: usize, c0: usize, rows: usize, cols: usize) -> Self {
        Self::from_fn(rows, cols, |i, j| self[(r0 + i, c0 + j)])
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn scale(&self, s: T) -> Self {
        Self::from_fn(self.rows, self.cols, |i, j| self[(i, j)] * s)
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |acc, v| acc.max(v.norm()))
    }

    /// Largest |a_ij - a_ji| relative to the largest entry; zero for exactly symmetric input.
    pub fn asymmetry(&self) -> T {
        let scale = self.max_abs();
        if scale == T::zero() {
            return T::zero();
        }
        let mut worst = T::zero();
        for i in 0..self.rows {
            for j in 0..i {
                worst = worst.max((self[(i, j)] - self[(j, i)]).norm());
            }
        }
        worst / scale
    }

    /// Solves `self · X = rhs` by Gaussian elimination with partial pivoting.
    pub fn solve(&self, rhs: &CMatrix<T>) -> Result<CMatrix<T>, Singular> {
        assert!(self.is_square() && rhs.rows == self.rows, "dimension mismatch in solve");
        let n = self.rows;
        let m = rhs.cols;
        let mut a = self.clone();
        let mut b = rhs.clone();
        let tol = self.max_abs() * T::EPS * T::lit(n.max(1) as f64) * T::lit(16.0);
        if n > 0 && self.max_abs() == T::zero() {
            return Err(Singular);
        }
        for k in 0..n {
            let (piv, piv_abs) = (k..n)
                .map(|r| (r, a[(r, k)].norm()))
                .fold((k, -T::one()), |best, cur| if cur.1 > best.1 { cur } else { best });
            if piv_abs <= tol {
                return Err(Singular);
            }
            if piv != k {
                a.swap_rows(piv, k);
                b.swap_rows(piv, k);
            }
            let inv = a[(k, k)].inv();
            for r in (k + 1)..n {
                let f = a[(r, k)] * inv;
                if f.re == T::zero() && f.im == T::zero() {
                    continue;
                }
                for c in k..n {
                    let v = a[(k, c)];
                    a[(r, c)] = a[(r, c)] - f * v;
                }
                for c in 0..m {
                    let v = b[(k, c)];
                    b[(r, c)] = b[(r, c)] - f * v;
                }
            }
        }
        let mut x = CMatrix::zeros(n, m);
        for c in 0..m {
            for r in (0..n).rev() {
                let mut acc = b[(r, c)];
                for j in (r + 1)..n {
                    acc = acc - a[(r, j)] * x[(j, c)];
                }
                x[(r, c)] = acc / a[(r, r)];
            }
        }
        Ok(x)
    }

    pub fn inverse(&self) -> Result<CMatrix<T>, Singular> {
        self.solve(&CMatrix::identity(self.rows))
    }

    fn swap_rows(&mut self, a: usize, b: usize) {
        for c in 0..self.cols {
            self.data.swap(a * self.cols + c, b * self.cols + c);
        }
    }
}

impl<T: Scalar> Index<(usize, usize)> for CMatrix<T> {
    type Output = Cplx<T>;
    fn index(&self, (r, c): (usize, usize)) -> &Cplx<T> {
        &self.data[r * self.cols + c]
    }
}

impl<T: Scalar> IndexMut<(usize, usize)> for CMatrix<T> {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut Cplx<T> {
        &mut self.data[r * self.cols + c]
    }
}

impl<T: Scalar> Mul for &CMatrix<T> {
    type Output = CMatrix<T>;
    fn mul(self, rhs: &CMatrix<T>) -> CMatrix<T> {
        assert_eq!(self.cols, rhs.rows, "dimension mismatch in product");
        let mut out = CMatrix::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                for j in 0..rhs.cols {
                    out[(i, j)] = out[(i, j)] + a * rhs[(k, j)];
                }
            }
        }
        out
    }
}

impl<T: Scalar> Sub for &CMatrix<T> {
    type Output = CMatrix<T>;
    fn sub(self, rhs: &CMatrix<T>) -> CMatrix<T> {
        assert!(self.rows == rhs.rows && self.cols == rhs.cols, "dimension mismatch in difference");
        CMatrix::from_fn(self.rows, self.cols, |i, j| self[(i, j)] - rhs[(i, j)])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex64;

    #[test]
    fn solve_recovers_known_solution() {
        let a = CMatrix::<f64>::from_fn(3, 3, |i, j| {
            Complex64::new((i + 2 * j) as f64 + if i == j { 5.0 } else { 0.0 }, (i as f64) - (j as f64))
        });
        let x = CMatrix::from_fn(3, 1, |i, _| Complex64::new(i as f64 + 1.0, -0.5));
        let b = &a * &x;
        let got = a.solve(&b).unwrap();
        for i in 0..3 {
            assert!((got[(i, 0)] - x[(i, 0)]).norm() < 1e-12);
        }
    }

    #[test]
    fn zero_matrix_is_singular() {
        let a = CMatrix::<f64>::zeros(2, 2);
        assert_eq!(a.inverse(), Err(Singular));
    }

    #[test]
    fn rank_deficient_is_singular() {
        let a = CMatrix::<f64>::from_fn(2, 2, |_, _| Complex64::new(1.0, 1.0));
        assert_eq!(a.inverse(), Err(Singular));
    }

    #[test]
    fn mat3_product_with_identity() {
        let m = Mat3::<f64>::from_real([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0], [7.0, 8.0, 9.0]]);
        assert_eq!(m * Mat3::identity(), m);
        assert_eq!(m.transpose().transpose(), m);
    }
}
