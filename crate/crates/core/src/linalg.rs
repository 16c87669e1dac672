//! Small dense linear algebra: 4×4 affines, square matrices, Cholesky.

use std::ops::{Index, IndexMut};

use crate::scalar::Real;

/// Homogeneous 4×4 matrix, row-major.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Affine<T>(pub [[T; 4]; 4]);

impl<T: Real> Affine<T> {
    pub fn identity() -> Self {
        let mut m = [[T::zero(); 4]; 4];
        for (i, row) in m.iter_mut().enumerate() {
            row[i] = T::one();
        }
        Affine(m)
    }

    pub fn translation(t: [T; 3]) -> Self {
        let mut a = Self::identity();
        for (i, &ti) in t.iter().enumerate() {
            a.0[i][3] = ti;
        }
        a
    }

    pub fn scaling(s: [T; 3]) -> Self {
        let mut a = Self::identity();
        for (i, &si) in s.iter().enumerate() {
            a.0[i][i] = si;
        }
        a
    }

    pub fn from_f64(m: [[f64; 4]; 4]) -> Self {
        Affine(m.map(|row| row.map(T::of)))
    }

    pub fn to_f64(&self) -> [[f64; 4]; 4] {
        self.0.map(|row| row.map(|x| x.f64()))
    }

    pub fn cast<U: Real>(&self) -> Affine<U> {
        Affine(self.0.map(|row| row.map(|x| U::of(x.f64()))))
    }

    pub fn mul(&self, rhs: &Self) -> Self {
        let mut out = [[T::zero(); 4]; 4];
        for (i, row) in out.iter_mut().enumerate() {
            for (j, cell) in row.iter_mut().enumerate() {
                let mut acc = T::zero();
                for k in 0..4 {
                    acc = acc + self.0[i][k] * rhs.0[k][j];
                }
                *cell = acc;
            }
        }
        Affine(out)
    }

    /// Applies the matrix to a point (homogeneous coordinate 1).
    #[inline]
    pub fn apply(&self, p: [T; 3]) -> [T; 3] {
        let m = &self.0;
        [
            m[0][0] * p[0] + m[0][1] * p[1] + m[0][2] * p[2] + m[0][3],
            m[1][0] * p[0] + m[1][1] * p[1] + m[1][2] * p[2] + m[1][3],
            m[2][0] * p[0] + m[2][1] * p[1] + m[2][2] * p[2] + m[2][3],
        ]
    }

    /// Applies only the linear 3×3 block.
    #[inline]
    pub fn apply_linear(&self, p: [T; 3]) -> [T; 3] {
        let m = &self.0;
        [
            m[0][0] * p[0] + m[0][1] * p[1] + m[0][2] * p[2],
            m[1][0] * p[0] + m[1][1] * p[1] + m[1][2] * p[2],
            m[2][0] * p[0] + m[2][1] * p[1] + m[2][2] * p[2],
        ]
    }

    pub fn linear_block(&self) -> [[T; 3]; 3] {
        let m = &self.0;
        [
            [m[0][0], m[0][1], m[0][2]],
            [m[1][0], m[1][1], m[1][2]],
            [m[2][0], m[2][1], m[2][2]],
        ]
    }

    pub fn det3(&self) -> T {
        det3(&self.linear_block())
    }

    /// Length of each column of the linear block: the voxel size for a
    /// voxel-to-world matrix.
    pub fn column_norms(&self) -> [T; 3] {
        let m = &self.0;
        [0, 1, 2].map(|j| (m[0][j] * m[0][j] + m[1][j] * m[1][j] + m[2][j] * m[2][j]).sqrt())
    }

    /// General inverse by Gauss-Jordan elimination with partial pivoting.
    pub fn inverse(&self) -> Option<Self> {
        let mut a = self.0;
        let mut inv = Self::identity().0;
        let scale = self
            .0
            .iter()
            .flatten()
            .fold(T::zero(), |acc, &x| acc.max(x.abs()));
        if scale == T::zero() || !scale.is_finite() {
            return None;
        }
        let tiny = scale * T::epsilon() * T::of(16.0);
        for col in 0..4 {
            let pivot = (col..4)
                .max_by(|&r, &s| a[r][col].abs().partial_cmp(&a[s][col].abs()).unwrap())
                .unwrap();
            if a[pivot][col].abs() <= tiny {
                return None;
            }
            a.swap(col, pivot);
            inv.swap(col, pivot);
            let p = a[col][col];
            for j in 0..4 {
                a[col][j] = a[col][j] / p;
                inv[col][j] = inv[col][j] / p;
            }
            for r in 0..4 {
                if r != col {
                    let f = a[r][col];
                    if f != T::zero() {
                        for j in 0..4 {
                            a[r][j] = a[r][j] - f * a[col][j];
                            inv[r][j] = inv[r][j] - f * inv[col][j];
                        }
                    }
                }
            }
        }
        Some(Affine(inv))
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.0
            .iter()
            .flatten()
            .zip(other.0.iter().flatten())
            .map(|(a, b)| (a.f64() - b.f64()).abs())
            .fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().flatten().all(|x| x.is_finite())
    }
}

pub fn det3<T: Real>(m: &[[T; 3]; 3]) -> T {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

/// Dense row-major matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct DMat<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Real> DMat<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        DMat { rows, cols, data: vec![T::zero(); rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = T::one();
        }
        m
    }

    pub fn from_rows(rows: usize, cols: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length");
        DMat { rows, cols, data }
    }

    pub fn from_fn(rows: usize, cols: usize, f: impl Fn(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        DMat { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn mul(&self, rhs: &Self) -> Self {
        assert_eq!(self.cols, rhs.rows, "matrix product shape");
        let mut out = Self::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == T::zero() {
                    continue;
                }
                for j in 0..rhs.cols {
                    out.data[i * rhs.cols + j] = out.data[i * rhs.cols + j] + a * rhs[(k, j)];
                }
            }
        }
        out
    }

    pub fn mul_vec(&self, v: &[T]) -> Vec<T> {
        assert_eq!(self.cols, v.len());
        (0..self.rows)
            .map(|i| (0..self.cols).fold(T::zero(), |acc, j| acc + self[(i, j)] * v[j]))
            .collect()
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn add(&self, rhs: &Self) -> Self {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols));
        let data = self.data.iter().zip(&rhs.data).map(|(&a, &b)| a + b).collect();
        DMat { rows: self.rows, cols: self.cols, data }
    }

    pub fn sub(&self, rhs: &Self) -> Self {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols));
        let data = self.data.iter().zip(&rhs.data).map(|(&a, &b)| a - b).collect();
        DMat { rows: self.rows, cols: self.cols, data }
    }

    pub fn scale(&self, s: T) -> Self {
        DMat { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&a| a * s).collect() }
    }

    pub fn trace(&self) -> T {
        (0..self.rows.min(self.cols)).fold(T::zero(), |acc, i| acc + self[(i, i)])
    }

    /// Maximum absolute row sum.
    pub fn norm_inf(&self) -> T {
        (0..self.rows)
            .map(|i| (0..self.cols).fold(T::zero(), |acc, j| acc + self[(i, j)].abs()))
            .fold(T::zero(), T::max)
    }

    pub fn symmetrize(&self) -> Self {
        Self::from_fn(self.rows, self.cols, |i, j| (self[(i, j)] + self[(j, i)]) * T::half())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// `xᵀ A y`.
    pub fn bilinear(&self, x: &[T], y: &[T]) -> T {
        let mut acc = T::zero();
        for i in 0..self.rows {
            let mut row = T::zero();
            for j in 0..self.cols {
                row = row + self[(i, j)] * y[j];
            }
            acc = acc + x[i] * row;
        }
        acc
    }

    /// Lower Cholesky factor of a symmetric positive-definite matrix.
    pub fn cholesky(&self) -> Option<Cholesky<T>> {
        assert_eq!(self.rows, self.cols, "cholesky needs a square matrix");
        let n = self.rows;
        let mut l = Self::zeros(n, n);
        for j in 0..n {
            let mut d = self[(j, j)];
            for k in 0..j {
                d = d - l[(j, k)] * l[(j, k)];
            }
            if !(d > T::zero()) || !d.is_finite() {
                return None;
            }
            let djj = d.sqrt();
            l[(j, j)] = djj;
            for i in j + 1..n {
                let mut s = self[(i, j)];
                for k in 0..j {
                    s = s - l[(i, k)] * l[(j, k)];
                }
                l[(i, j)] = s / djj;
            }
        }
        Some(Cholesky { l })
    }

    /// Solves `A x = b` for square `A` by Gaussian elimination with
    /// partial pivoting.
    pub fn solve(&self, b: &[T]) -> Option<Vec<T>> {
        assert_eq!(self.rows, self.cols);
        let n = self.rows;
        let mut a = self.clone();
        let mut x = b.to_vec();
        for col in 0..n {
            let pivot = (col..n)
                .max_by(|&r, &s| a[(r, col)].abs().partial_cmp(&a[(s, col)].abs()).unwrap())
                .unwrap();
            if a[(pivot, col)] == T::zero() || !a[(pivot, col)].is_finite() {
                return None;
            }
            if pivot != col {
                for j in 0..n {
                    a.data.swap(col * n + j, pivot * n + j);
                }
                x.swap(col, pivot);
            }
            for r in col + 1..n {
                let f = a[(r, col)] / a[(col, col)];
                if f == T::zero() {
                    continue;
                }
                for j in col..n {
                    let v = a[(col, j)];
                    a[(r, j)] = a[(r, j)] - f * v;
                }
                x[r] = x[r] - f * x[col];
            }
        }
        for i in (0..n).rev() {
            let mut s = x[i];
            for j in i + 1..n {
                s = s - a[(i, j)] * x[j];
            }
            x[i] = s / a[(i, i)];
        }
        x.iter().all(|v| v.is_finite()).then_some(x)
    }
}

impl<T> Index<(usize, usize)> for DMat<T> {
    type Output = T;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &T {
        &self.data[i * self.cols + j]
    }
}

impl<T> IndexMut<(usize, usize)> for DMat<T> {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        &mut self.data[i * self.cols + j]
    }
}

/// Cholesky factorisation `A = L Lᵀ`.
#[derive(Clone, Debug)]
pub struct Cholesky<T> {
    l: DMat<T>,
}

impl<T: Real> Cholesky<T> {
    pub fn factor(&self) -> &DMat<T> {
        &self.l
    }

    pub fn log_det(&self) -> f64 {
        (0..self.l.rows).map(|i| 2.0 * self.l[(i, i)].f64().ln()).sum()
    }

    pub fn solve(&self, b: &[T]) -> Vec<T> {
        let n = self.l.rows;
        let mut y = b.to_vec();
        for i in 0..n {
            let mut s = y[i];
            for k in 0..i {
                s = s - self.l[(i, k)] * y[k];
            }
            y[i] = s / self.l[(i, i)];
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in i + 1..n {
                s = s - self.l[(k, i)] * y[k];
            }
            y[i] = s / self.l[(i, i)];
        }
        y
    }

    pub fn inverse(&self) -> DMat<T> {
        let n = self.l.rows;
        let mut inv = DMat::zeros(n, n);
        let mut e = vec![T::zero(); n];
        for j in 0..n {
            e.iter_mut().for_each(|x| *x = T::zero());
            e[j] = T::one();
            let col = self.solve(&e);
            for i in 0..n {
                inv[(i, j)] = col[i];
            }
        }
        inv.symmetrize()
    }
}

/// Matrix exponential by scaling and squaring of a Taylor series summed
/// until the terms drop below machine precision.
pub fn expm<T: Real>(a: &DMat<T>) -> DMat<T> {
    assert_eq!(a.rows(), a.cols());
    let n = a.rows();
    let norm = a.norm_inf().f64();
    let mut squarings = 0u32;
    if norm > 0.5 {
        squarings = (norm / 0.5).log2().ceil() as u32;
    }
    let scaled = a.scale(T::of(0.5f64.powi(squarings as i32)));
    let mut result = DMat::identity(n);
    let mut term = DMat::identity(n);
    for k in 1..=40 {
        term = term.mul(&scaled).scale(T::one() / T::of_usize(k));
        result = result.add(&term);
        if term.norm_inf() <= T::epsilon() * result.norm_inf() {
            break;
        }
    }
    for _ in 0..squarings {
        result = result.mul(&result);
    }
    result
}

/// Solves a symmetric 3×3 system stored as `[xx, yy, zz, xy, xz, yz]`.
#[inline]
pub fn sym3_solve<T: Real>(h: &[T; 6], b: [T; 3]) -> Option<[T; 3]> {
    let m = [[h[0], h[3], h[4]], [h[3], h[1], h[5]], [h[4], h[5], h[2]]];
    let det = det3(&m);
    if det == T::zero() || !det.is_finite() {
        return None;
    }
    let inv = [
        [
            m[1][1] * m[2][2] - m[1][2] * m[2][1],
            m[0][2] * m[2][1] - m[0][1] * m[2][2],
            m[0][1] * m[1][2] - m[0][2] * m[1][1],
        ],
        [
            m[1][2] * m[2][0] - m[1][0] * m[2][2],
            m[0][0] * m[2][2] - m[0][2] * m[2][0],
            m[0][2] * m[1][0] - m[0][0] * m[1][2],
        ],
        [
            m[1][0] * m[2][1] - m[1][1] * m[2][0],
            m[0][1] * m[2][0] - m[0][0] * m[2][1],
            m[0][0] * m[1][1] - m[0][1] * m[1][0],
        ],
    ];
    Some([0, 1, 2].map(|i| (inv[i][0] * b[0] + inv[i][1] * b[1] + inv[i][2] * b[2]) / det))
}
