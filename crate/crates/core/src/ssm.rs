//! Dense general state spaces, used as an independent oracle for the
//! diagonal kernels.
//!
//! Discretization goes through a Taylor matrix exponential with
//! scaling-and-squaring and a pivoted Gaussian solve; nothing here touches
//! the closed-form diagonal code.

use crate::cnum::Complex;
use crate::error::{DssError, Result};
use crate::hippo::{symmetric_eigenvalues, RealMatrix};
use crate::kernel::Kernel;

const ZERO: Complex = Complex::new(0.0, 0.0);
const ONE: Complex = Complex::new(1.0, 0.0);

/// Largest state size the oracle accepts.
pub const ORACLE_MAX_N: usize = 16;

/// Dense complex matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct CMatrix {
    rows: usize,
    cols: usize,
    data: Vec<Complex>,
}

impl CMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![ZERO; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = ONE;
        }
        m
    }

    pub fn diag(values: &[Complex]) -> Self {
        let mut m = Self::zeros(values.len(), values.len());
        for (i, &v) in values.iter().enumerate() {
            m[(i, i)] = v;
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> Complex) -> Self {
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

    pub fn matmul(&self, other: &Self) -> Self {
        assert_eq!(self.cols, other.rows, "inner dimensions differ");
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                for j in 0..other.cols {
                    out.data[i * other.cols + j] += a * other.data[k * other.cols + j];
                }
            }
        }
        out
    }

    pub fn matvec(&self, x: &[Complex]) -> Vec<Complex> {
        assert_eq!(self.cols, x.len());
        (0..self.rows)
            .map(|i| (0..self.cols).map(|j| self[(i, j)] * x[j]).sum())
            .collect()
    }

    /// `xᵀ·self` for a row vector `x`.
    pub fn vecmat(&self, x: &[Complex]) -> Vec<Complex> {
        assert_eq!(self.rows, x.len());
        (0..self.cols)
            .map(|j| (0..self.rows).map(|i| x[i] * self[(i, j)]).sum())
            .collect()
    }

    pub fn scale(&self, s: Complex) -> Self {
        Self { rows: self.rows, cols: self.cols, data: self.data.iter().map(|v| v * s).collect() }
    }

    pub fn sub(&self, other: &Self) -> Self {
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect();
        Self { rows: self.rows, cols: self.cols, data }
    }

    /// Maximum absolute column sum.
    pub fn norm1(&self) -> f64 {
        (0..self.cols)
            .map(|j| (0..self.rows).map(|i| self[(i, j)].norm()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.norm()))
    }

    /// Solves `self·X = rhs` by Gaussian elimination with partial pivoting.
    pub fn solve(&self, rhs: &Self) -> Result<Self> {
        let n = self.rows;
        if self.cols != n || rhs.rows != n {
            return Err(DssError::ShapeMismatch("solve needs a square system".into()));
        }
        let mut a = self.clone();
        let mut b = rhs.clone();
        let floor = 1e-14 * a.max_abs().max(f64::MIN_POSITIVE);
        for col in 0..n {
            let pivot = (col..n)
                .max_by(|&x, &y| a[(x, col)].norm().total_cmp(&a[(y, col)].norm()))
                .expect("nonempty range");
            if a[(pivot, col)].norm() <= floor {
                return Err(DssError::NotInvertible);
            }
            if pivot != col {
                for j in 0..n {
                    a.data.swap(pivot * n + j, col * n + j);
                }
                for j in 0..b.cols {
                    b.data.swap(pivot * b.cols + j, col * b.cols + j);
                }
            }
            let inv = ONE / a[(col, col)];
            for r in (col + 1)..n {
                let f = a[(r, col)] * inv;
                if f == ZERO {
                    continue;
                }
                for j in col..n {
                    let v = a[(col, j)];
                    a[(r, j)] -= f * v;
                }
                for j in 0..b.cols {
                    let v = b[(col, j)];
                    b[(r, j)] -= f * v;
                }
            }
        }
        for col in (0..n).rev() {
            let inv = ONE / a[(col, col)];
            for j in 0..b.cols {
                let mut acc = b[(col, j)];
                for k in (col + 1)..n {
                    acc -= a[(col, k)] * b[(k, j)];
                }
                b[(col, j)] = acc * inv;
            }
        }
        Ok(b)
    }

    pub fn inverse(&self) -> Result<Self> {
        self.solve(&Self::identity(self.rows))
    }

    /// 2-norm condition number from the spectrum of `VᴴV`.
    pub fn condition_number(&self) -> Result<f64> {
        let n = self.rows;
        if self.cols != n {
            return Err(DssError::ShapeMismatch("condition number needs a square matrix".into()));
        }
        // Hermitian G = VᴴV embedded as the real symmetric [[Re G, −Im G], [Im G, Re G]].
        let g = Self::from_fn(n, n, |i, j| (0..n).map(|k| self[(k, i)].conj() * self[(k, j)]).sum());
        let mut m = RealMatrix::zeros(2 * n);
        for i in 0..n {
            for j in 0..n {
                let v = g[(i, j)];
                m[(i, j)] = v.re;
                m[(i + n, j + n)] = v.re;
                m[(i, j + n)] = -v.im;
                m[(i + n, j)] = v.im;
            }
        }
        let eig = symmetric_eigenvalues(&m, None)?;
        let hi = eig[0];
        let lo = eig[eig.len() - 1];
        if lo <= 0.0 {
            return Ok(f64::INFINITY);
        }
        Ok((hi / lo).sqrt())
    }
}

impl std::ops::Index<(usize, usize)> for CMatrix {
    type Output = Complex;
    fn index(&self, (i, j): (usize, usize)) -> &Complex {
        &self.data[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for CMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut Complex {
        &mut self.data[i * self.cols + j]
    }
}

const SQUARING_THRESHOLD: f64 = 0.5;
const TERM_FLOOR: f64 = 1e-18;
const MAX_TERMS: usize = 60;

/// `e^X` by a Taylor series on `X/2^s` with `‖X/2^s‖₁ ≤ ½`, squared back `s` times.
pub fn matexp(x: &CMatrix) -> Result<CMatrix> {
    let norm = x.norm1();
    if !norm.is_finite() {
        return Err(DssError::MatexpNonConvergence);
    }
    let mut squarings = 0u32;
    while norm / 2f64.powi(squarings as i32) > SQUARING_THRESHOLD {
        squarings += 1;
    }
    let y = x.scale(Complex::new(2f64.powi(-(squarings as i32)), 0.0));
    let n = x.rows();
    let mut sum = CMatrix::identity(n);
    let mut term = CMatrix::identity(n);
    let mut converged = false;
    for k in 1..=MAX_TERMS {
        term = term.matmul(&y).scale(Complex::new(1.0 / k as f64, 0.0));
        for (s, t) in sum.data.iter_mut().zip(&term.data) {
            *s += t;
        }
        if term.norm1() < TERM_FLOOR {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(DssError::MatexpNonConvergence);
    }
    for _ in 0..squarings {
        sum = sum.matmul(&sum);
    }
    Ok(sum)
}

/// A dense continuous-time state space `(A, B, C)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneralSSM {
    pub a: CMatrix,
    pub b: Vec<Complex>,
    pub c: Vec<Complex>,
}

/// Zero-order-hold discretization `(Ā, B̄)` of a dense system.
pub fn zoh_discretize(s: &GeneralSSM, delta: f64) -> Result<(CMatrix, Vec<Complex>)> {
    let n = s.a.rows();
    let a_bar = matexp(&s.a.scale(Complex::new(delta, 0.0)))?;
    let b_col = CMatrix::from_fn(n, 1, |i, _| s.b[i]);
    let a_inv_b = s.a.solve(&b_col)?;
    let b_bar = a_bar.sub(&CMatrix::identity(n)).matmul(&a_inv_b);
    Ok((a_bar, (0..n).map(|i| b_bar[(i, 0)]).collect()))
}

/// Kernel `K_k = Re(C Āᵏ B̄)` of a dense system by repeated matrix-vector products.
pub fn general_ssm_kernel(s: &GeneralSSM, delta: f64, l: usize) -> Result<Kernel> {
    let n = s.a.rows();
    if s.a.cols() != n || s.b.len() != n || s.c.len() != n {
        return Err(DssError::ShapeMismatch("A must be N×N with B, C of length N".into()));
    }
    if n == 0 || n > ORACLE_MAX_N {
        return Err(DssError::InvalidArgument(format!("oracle state size {n} outside 1..={ORACLE_MAX_N}")));
    }
    if !(delta > 0.0) {
        return Err(DssError::InvalidArgument("delta must be positive".into()));
    }
    let (a_bar, mut x) = zoh_discretize(s, delta)?;
    let mut values = Vec::with_capacity(l);
    for _ in 0..l {
        let y: Complex = s.c.iter().zip(&x).map(|(c, v)| c * v).sum();
        values.push(y.re);
        x = a_bar.matvec(&x);
    }
    Ok(Kernel { values })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::LN_2;

    fn c(re: f64, im: f64) -> Complex {
        Complex::new(re, im)
    }

    #[test]
    fn scalar_kernel() {
        let s = GeneralSSM { a: CMatrix::diag(&[c(-1.0, 0.0)]), b: vec![ONE], c: vec![ONE] };
        let k = general_ssm_kernel(&s, LN_2, 3).unwrap();
        for (got, want) in k.values.iter().zip([0.5, 0.25, 0.125]) {
            assert!((got - want).abs() < 1e-14);
        }
    }

    #[test]
    fn zero_output_matrix_gives_zero_kernel() {
        let s = GeneralSSM {
            a: CMatrix::diag(&[c(-1.0, 2.0), c(-0.3, 0.0)]),
            b: vec![ONE, c(0.5, 1.0)],
            c: vec![ZERO, ZERO],
        };
        assert!(general_ssm_kernel(&s, 0.1, 8).unwrap().values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn singular_state_matrix_rejected() {
        let s = GeneralSSM { a: CMatrix::diag(&[c(-1.0, 0.0), ZERO]), b: vec![ONE, ONE], c: vec![ONE, ONE] };
        assert_eq!(general_ssm_kernel(&s, 0.1, 4), Err(DssError::NotInvertible));
    }

    #[test]
    fn matexp_of_diagonal_and_rotation() {
        let d = CMatrix::diag(&[c(-3.0, 1.0), c(2.5, -0.5)]);
        let e = matexp(&d).unwrap();
        assert!((e[(0, 0)] - c(-3.0, 1.0).exp()).norm() < 1e-14);
        assert!((e[(1, 1)] - c(2.5, -0.5).exp()).norm() < 1e-13);
        assert!(e[(0, 1)].norm() < 1e-15);
        // exp([[0, -t], [t, 0]]) is a rotation by t.
        let t = 7.0;
        let r = CMatrix::from_fn(2, 2, |i, j| match (i, j) {
            (0, 1) => c(-t, 0.0),
            (1, 0) => c(t, 0.0),
            _ => ZERO,
        });
        let e = matexp(&r).unwrap();
        assert!((e[(0, 0)].re - t.cos()).abs() < 1e-13);
        assert!((e[(1, 0)].re - t.sin()).abs() < 1e-13);
    }

    #[test]
    fn solve_and_inverse() {
        let a = CMatrix::from_fn(3, 3, |i, j| c((i * 3 + j) as f64 + if i == j { 5.0 } else { 0.0 }, (i as f64) - (j as f64)));
        let inv = a.inverse().unwrap();
        let id = a.matmul(&inv);
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { ONE } else { ZERO };
                assert!((id[(i, j)] - want).norm() < 1e-13);
            }
        }
        assert!((CMatrix::identity(4).condition_number().unwrap() - 1.0).abs() < 1e-12);
        let d = CMatrix::diag(&[c(10.0, 0.0), c(0.0, 0.1)]);
        assert!((d.condition_number().unwrap() - 100.0).abs() < 1e-9);
    }
}
