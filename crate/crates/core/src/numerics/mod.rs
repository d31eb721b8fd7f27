//! Dense linear-algebra kernels shared by the rest of the crate.
//!
//! Everything here works on small dynamically sized `nalgebra` matrices
//! (state dimensions up to a dozen or so) and is a pure function of its
//! inputs.

mod lyapunov;
mod matfun;
mod psd;
mod riccati;
mod skew;

pub use lyapunov::solve_lyapunov;
pub use matfun::{expm, logm, zoh_discretize};
pub use psd::{project_psd, project_psd_rank};
pub use riccati::{integrate_rde, kalman_gain, solve_discrete_filter_are, solve_filter_are};
pub use skew::skew_canonical_factor;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub type Mat = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Eigenvalues with real part at or above this are treated as unstable.
pub const HURWITZ_TOL: f64 = -1e-12;

/// `J = [[0, 1], [-1, 0]]`.
pub fn j2() -> Mat {
    Mat::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0])
}

/// The block-diagonal symplectic matrix `I_n ⊗ J` of size `2n × 2n`.
#[derive(Debug, Clone, PartialEq)]
pub struct SymplecticForm {
    pub n: usize,
    pub matrix: Mat,
}

impl SymplecticForm {
    pub fn new(n: usize) -> Self {
        let mut matrix = Mat::zeros(2 * n, 2 * n);
        for k in 0..n {
            matrix[(2 * k, 2 * k + 1)] = 1.0;
            matrix[(2 * k + 1, 2 * k)] = -1.0;
        }
        SymplecticForm { n, matrix }
    }
}

/// Shorthand for `SymplecticForm::new(n).matrix`.
pub fn symplectic(n: usize) -> Mat {
    SymplecticForm::new(n).matrix
}

pub fn require_square(name: &str, m: &Mat) -> Result<usize> {
    if m.nrows() != m.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "{name} must be square, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(m.nrows())
}

pub fn require_shape(name: &str, m: &Mat, rows: usize, cols: usize) -> Result<()> {
    if m.nrows() != rows || m.ncols() != cols {
        return Err(Error::DimensionMismatch(format!(
            "{name} must be {rows}x{cols}, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(())
}

/// Largest real part over the eigenvalues of `a`.
pub fn spectral_abscissa(a: &Mat) -> f64 {
    if a.nrows() == 0 {
        return f64::NEG_INFINITY;
    }
    a.complex_eigenvalues()
        .iter()
        .map(|z| z.re)
        .fold(f64::NEG_INFINITY, f64::max)
}

pub fn is_hurwitz(a: &Mat) -> bool {
    spectral_abscissa(a) < HURWITZ_TOL
}

pub fn require_hurwitz(a: &Mat) -> Result<()> {
    let max_real = spectral_abscissa(a);
    if max_real.is_finite() && max_real < HURWITZ_TOL {
        Ok(())
    } else {
        Err(Error::NotHurwitz { max_real })
    }
}

/// Spectral norm (largest singular value).
pub fn norm2(m: &Mat) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone().singular_values().max()
}

/// Threshold on [`normalized_det`] below which `Z` counts as singular.
pub const DET_Z_MIN: f64 = 1e-10;

/// `det(M / ‖M‖₂)`: a unit-free invertibility measure, in `[−1, 1]`.
pub fn normalized_det(m: &Mat) -> f64 {
    let s = norm2(m);
    if !(s > 0.0) {
        return 0.0;
    }
    (m / s).determinant()
}

/// Frobenius norm.
pub fn fro(m: &Mat) -> f64 {
    m.norm()
}

pub fn symmetrize(m: &Mat) -> Mat {
    (m + m.transpose()) * 0.5
}

pub fn skew_part(m: &Mat) -> Mat {
    (m - m.transpose()) * 0.5
}

/// 2-norm condition number; infinite for singular or empty input.
pub fn cond2(m: &Mat) -> f64 {
    if m.is_empty() {
        return f64::INFINITY;
    }
    let sv = m.clone().singular_values();
    let (hi, lo) = (sv.max(), sv.min());
    if lo <= 0.0 {
        f64::INFINITY
    } else {
        hi / lo
    }
}

/// Kronecker product `a ⊗ b`.
pub fn kron(a: &Mat, b: &Mat) -> Mat {
    a.kronecker(b)
}

/// Stack matrices with equal column counts on top of each other.
pub fn vstack(parts: &[&Mat]) -> Mat {
    let cols = parts.first().map_or(0, |p| p.ncols());
    let rows = parts.iter().map(|p| p.nrows()).sum();
    let mut out = Mat::zeros(rows, cols);
    let mut r = 0;
    for p in parts {
        out.view_mut((r, 0), (p.nrows(), cols)).copy_from(*p);
        r += p.nrows();
    }
    out
}

/// Place matrices with equal row counts side by side.
pub fn hstack(parts: &[&Mat]) -> Mat {
    let rows = parts.first().map_or(0, |p| p.nrows());
    let cols = parts.iter().map(|p| p.ncols()).sum();
    let mut out = Mat::zeros(rows, cols);
    let mut c = 0;
    for p in parts {
        out.view_mut((0, c), (rows, p.ncols())).copy_from(*p);
        c += p.ncols();
    }
    out
}

/// Build a matrix from row-major nested rows. Panics on ragged input, which
/// is only used for literals.
pub fn mat_from_rows(rows: &[&[f64]]) -> Mat {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, |r| r.len());
    let flat: Vec<f64> = rows
        .iter()
        .flat_map(|r| {
            assert_eq!(r.len(), ncols, "ragged matrix literal");
            r.iter().copied()
        })
        .collect();
    Mat::from_row_slice(nrows, ncols, &flat)
}
