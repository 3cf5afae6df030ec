//! Skew-HiPPO initialization of the diagonal state matrix.
//!
//! The 2N×2N matrix `−½·I + S` (S skew-symmetric) has spectrum
//! `−½ ± i·μ_k`. The magnitudes `μ_k` are the square roots of the
//! eigenvalues of the symmetric matrix `SᵀS`, each appearing twice, so a
//! real symmetric Jacobi solver is all that is needed.

use serde::{Deserialize, Serialize};

use crate::error::{DssError, Result};

/// Dense square real matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct RealMatrix {
    n: usize,
    data: Vec<f64>,
}

impl RealMatrix {
    pub fn zeros(n: usize) -> Self {
        Self { n, data: vec![0.0; n * n] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(DssError::ShapeMismatch("matrix must be square".into()));
        }
        Ok(Self { n, data: rows.concat() })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.n);
        for i in 0..self.n {
            for j in 0..self.n {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    pub fn matmul(&self, other: &Self) -> Self {
        let n = self.n;
        let mut out = Self::zeros(n);
        for i in 0..n {
            for k in 0..n {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                for j in 0..n {
                    out.data[i * n + j] += a * other.data[k * n + j];
                }
            }
        }
        out
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn trace(&self) -> f64 {
        (0..self.n).map(|i| self[(i, i)]).sum()
    }

    fn off_diagonal_norm(&self) -> f64 {
        let mut acc = 0.0;
        for i in 0..self.n {
            for j in 0..self.n {
                if i != j {
                    acc += self[(i, j)] * self[(i, j)];
                }
            }
        }
        acc.sqrt()
    }
}

impl std::ops::Index<(usize, usize)> for RealMatrix {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.n + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for RealMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.n + j]
    }
}

/// The 2N×2N Skew-HiPPO matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SkewHippoMatrix {
    pub n: usize,
    pub entries: RealMatrix,
}

/// Λ split into real and imaginary parts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagSpectrum {
    pub lambda_re: Vec<f64>,
    pub lambda_im: Vec<f64>,
}

/// Builds the Skew-HiPPO matrix with 0-based indices:
/// `√(2i+1)·√(2j+1)/2` above the diagonal, `−½` on it, negated below.
pub fn skew_hippo_matrix(n: usize) -> Result<SkewHippoMatrix> {
    if n == 0 {
        return Err(DssError::InvalidArgument("state size must be positive".into()));
    }
    let dim = 2 * n;
    let mut m = RealMatrix::zeros(dim);
    for i in 0..dim {
        m[(i, i)] = -0.5;
        for j in (i + 1)..dim {
            let v = ((2 * i + 1) as f64).sqrt() * ((2 * j + 1) as f64).sqrt() / 2.0;
            m[(i, j)] = v;
            m[(j, i)] = -v;
        }
    }
    Ok(SkewHippoMatrix { n, entries: m })
}

const MAX_SWEEPS: usize = 100;

/// Eigenvalues of a real symmetric matrix by cyclic Jacobi rotations,
/// sorted descending. `tol` bounds the off-diagonal Frobenius norm at exit;
/// `None` uses `1e-12·‖m‖_F`.
pub fn symmetric_eigenvalues(m: &RealMatrix, tol: Option<f64>) -> Result<Vec<f64>> {
    let n = m.dim();
    let scale = m.data.iter().fold(1.0f64, |acc, v| acc.max(v.abs()));
    for i in 0..n {
        for j in (i + 1)..n {
            if (m[(i, j)] - m[(j, i)]).abs() > 1e-12 * scale {
                return Err(DssError::NotSymmetric);
            }
        }
    }
    let tol = tol.unwrap_or(1e-12 * m.frobenius_norm());
    let mut a = m.clone();
    let mut sweeps = 0;
    while a.off_diagonal_norm() >= tol && tol > 0.0 {
        if sweeps == MAX_SWEEPS {
            return Err(DssError::EigensolverFailure(format!(
                "no convergence after {MAX_SWEEPS} sweeps"
            )));
        }
        for p in 0..n {
            for q in (p + 1)..n {
                rotate(&mut a, p, q);
            }
        }
        sweeps += 1;
    }
    let mut eig: Vec<f64> = (0..n).map(|i| a[(i, i)]).collect();
    eig.sort_by(|x, y| y.total_cmp(x));
    Ok(eig)
}

/// One Jacobi rotation annihilating `a[p][q]`.
fn rotate(a: &mut RealMatrix, p: usize, q: usize) {
    let apq = a[(p, q)];
    if apq == 0.0 {
        return;
    }
    let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
    let c = 1.0 / (t * t + 1.0).sqrt();
    let s = t * c;
    let n = a.dim();
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
    a[(p, q)] = 0.0;
    a[(q, p)] = 0.0;
}

/// The skew part `S = M + ½I` of the Skew-HiPPO matrix.
pub fn skew_part(n: usize) -> Result<RealMatrix> {
    let mut s = skew_hippo_matrix(n)?.entries;
    for i in 0..s.dim() {
        s[(i, i)] = 0.0;
    }
    Ok(s)
}

/// All 2N values `μ` (descending) with `±iμ` the eigenvalues of the skew part.
pub fn skew_magnitudes(n: usize) -> Result<Vec<f64>> {
    let s = skew_part(n)?;
    let sts = s.transpose().matmul(&s);
    let eig = symmetric_eigenvalues(&sts, None)?;
    eig.into_iter()
        .map(|v| {
            if v < -1e-9 {
                Err(DssError::EigensolverFailure(format!("negative eigenvalue {v} of SᵀS")))
            } else {
                Ok(v.max(0.0).sqrt())
            }
        })
        .collect()
}

/// Skew-HiPPO Λ: the N eigenvalues with positive imaginary part, ordered
/// by descending imaginary part.
pub fn skew_hippo_lambda(n: usize) -> Result<DiagSpectrum> {
    let mu = skew_magnitudes(n)?;
    let lambda_im: Vec<f64> = mu.into_iter().step_by(2).take(n).collect();
    Ok(DiagSpectrum { lambda_re: vec![-0.5; n], lambda_im })
}
