//! Small dense complex linear algebra helpers on top of `nalgebra`.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type CMatrix = DMatrix<Complex64>;

pub const I: Complex64 = Complex64::new(0.0, 1.0);

pub fn c(re: f64) -> Complex64 {
    Complex64::new(re, 0.0)
}

pub fn dagger(m: &CMatrix) -> CMatrix {
    m.adjoint()
}

/// Largest entry magnitude.
pub fn max_abs(m: &CMatrix) -> f64 {
    m.iter().fold(0.0_f64, |acc, z| acc.max(z.norm()))
}

pub fn hermiticity_residual(m: &CMatrix) -> f64 {
    max_abs(&(m - m.adjoint()))
}

/// `‖U†U − I‖_max`.
pub fn unitarity_residual(u: &CMatrix) -> f64 {
    let n = u.nrows();
    max_abs(&(u.adjoint() * u - CMatrix::identity(n, n)))
}

pub fn commutator(a: &CMatrix, b: &CMatrix) -> CMatrix {
    a * b - b * a
}

pub fn trace(m: &CMatrix) -> Complex64 {
    m.diagonal().iter().sum()
}

pub fn is_diagonal(m: &CMatrix, tol: f64) -> bool {
    off_diagonal_residual(m) <= tol
}

pub fn off_diagonal_residual(m: &CMatrix) -> f64 {
    let mut worst = 0.0_f64;
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            if i != j {
                worst = worst.max(m[(i, j)].norm());
            }
        }
    }
    worst
}

/// Zero every off-diagonal element.
pub fn dephase(m: &CMatrix) -> CMatrix {
    let n = m.nrows();
    CMatrix::from_fn(n, n, |i, j| if i == j { m[(i, j)] } else { c(0.0) })
}

/// `exp(−i h t)` for Hermitian `h`.
///
/// Diagonal generators are exponentiated entrywise; everything else goes
/// through the Hermitian eigendecomposition `h = V Λ V†`.
pub fn expm_hermitian(h: &CMatrix, t: f64) -> Result<CMatrix> {
    let scale = max_abs(h).max(1.0);
    let herm = hermiticity_residual(h);
    if herm > 1e-12 * scale {
        return Err(Error::NonHermitian(herm));
    }
    let n = h.nrows();
    if is_diagonal(h, 0.0) {
        return Ok(CMatrix::from_fn(n, n, |i, j| {
            if i == j {
                Complex64::from_polar(1.0, -h[(i, i)].re * t)
            } else {
                c(0.0)
            }
        }));
    }
    let eig = h.clone().symmetric_eigen();
    let v = &eig.eigenvectors;
    let mut scaled = v.clone();
    for (j, lambda) in eig.eigenvalues.iter().enumerate() {
        let phase = Complex64::from_polar(1.0, -lambda * t);
        for i in 0..n {
            scaled[(i, j)] *= phase;
        }
    }
    Ok(&scaled * v.adjoint())
}

/// `U ρ U†`.
pub fn conjugate(u: &CMatrix, rho: &CMatrix) -> CMatrix {
    u * rho * u.adjoint()
}

/// Phase-insensitive gate overlap `|Tr(V† U)| / d`.
pub fn gate_fidelity(u: &CMatrix, target: &CMatrix) -> f64 {
    let d = u.nrows() as f64;
    (target.adjoint() * u).trace().norm() / d
}

/// `U^n` by repeated squaring.
pub fn matrix_power(u: &CMatrix, mut n: u64) -> CMatrix {
    let dim = u.nrows();
    let mut result = CMatrix::identity(dim, dim);
    let mut base = u.clone();
    while n > 0 {
        if n & 1 == 1 {
            result = &result * &base;
        }
        n >>= 1;
        if n > 0 {
            base = &base * &base;
        }
    }
    result
}
