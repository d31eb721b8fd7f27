use nalgebra::Schur;

use super::{require_hurwitz, require_shape, require_square, Mat};
use crate::error::{Error, Result};

/// Solve `A X + X Aᵀ + W = 0` for Hurwitz `A`.
///
/// Bartels–Stewart on the real Schur form `A = U T Uᵀ`: the transformed
/// equation `T Y + Y Tᵀ = -Uᵀ W U` is solved one diagonal block column at a
/// time, from the last block backwards. Skew-symmetric `W` gives a
/// skew-symmetric `X`; the result is re-projected so that this holds to
/// rounding.
pub fn solve_lyapunov(a: &Mat, w: &Mat) -> Result<Mat> {
    let d = require_square("A", a)?;
    require_shape("W", w, d, d)?;
    if d == 0 {
        return Ok(Mat::zeros(0, 0));
    }
    require_hurwitz(a)?;

    let schur = Schur::try_new(a.clone(), f64::EPSILON, 10_000)
        .ok_or_else(|| Error::NoStabilizingSolution("real Schur form did not converge".into()))?;
    let (u, t) = schur.unpack();
    let f = -(u.transpose() * w * &u);

    let blocks = diagonal_blocks(&t);
    let mut y = Mat::zeros(d, d);
    for &(start, size) in blocks.iter().rev() {
        let mut rhs = f.columns(start, size).into_owned();
        for &(k_start, k_size) in blocks.iter().filter(|(s, _)| *s > start) {
            let t_jk = t.view((start, k_start), (size, k_size));
            rhs -= y.columns(k_start, k_size) * t_jk.transpose();
        }
        let s = t.view((start, start), (size, size)).into_owned();
        let yj = solve_block_sylvester(&t, &s, &rhs)?;
        y.columns_mut(start, size).copy_from(&yj);
    }

    let x = &u * y * u.transpose();
    let sym = (&x + x.transpose()) * 0.5;
    let skew = (&x - x.transpose()) * 0.5;
    let w_sym = (w + w.transpose()).norm();
    let w_skew = (w - w.transpose()).norm();
    // Exact symmetry classes of W are inherited by X.
    Ok(if w_skew == 0.0 {
        sym
    } else if w_sym == 0.0 {
        skew
    } else {
        x
    })
}

/// `(start, size)` of the 1×1 and 2×2 diagonal blocks of a quasi-triangular matrix.
fn diagonal_blocks(t: &Mat) -> Vec<(usize, usize)> {
    let d = t.nrows();
    let mut out = Vec::new();
    let mut i = 0;
    while i < d {
        if i + 1 < d && t[(i + 1, i)] != 0.0 {
            out.push((i, 2));
            i += 2;
        } else {
            out.push((i, 1));
            i += 1;
        }
    }
    out
}

/// Solve `T Y + Y Sᵀ = R` for small `S` via the vectorized system
/// `(I ⊗ T + S ⊗ I) vec Y = vec R`.
fn solve_block_sylvester(t: &Mat, s: &Mat, r: &Mat) -> Result<Mat> {
    let d = t.nrows();
    let b = s.nrows();
    let op = Mat::identity(b, b).kronecker(t) + s.kronecker(&Mat::identity(d, d));
    let rhs = nalgebra::DVector::from_column_slice(r.as_slice());
    let sol = op
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::NoStabilizingSolution("singular Lyapunov operator".into()))?;
    Ok(Mat::from_column_slice(d, b, sol.as_slice()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{j2, mat_from_rows, symplectic};

    fn residual(a: &Mat, x: &Mat, w: &Mat) -> f64 {
        (a * x + x * a.transpose() + w).norm()
    }

    #[test]
    fn diagonal_balance() {
        let a = -Mat::identity(2, 2);
        let x = solve_lyapunov(&a, &(Mat::identity(2, 2) * 2.0)).unwrap();
        assert!((x - Mat::identity(2, 2)).norm() < 1e-14);
    }

    #[test]
    fn cavity_symplectic_source() {
        // B 𝕁₃ Bᵀ = (5 + 3 + 2) J for the three-port cavity.
        let a = mat_from_rows(&[&[-5.0, 20.0], &[-20.0, -5.0]]);
        let w = j2() * 10.0;
        let x = solve_lyapunov(&a, &w).unwrap();
        assert!((&x - j2()).norm() < 1e-12, "{x}");
        assert!(residual(&a, &x, &w) < 1e-12);
    }

    #[test]
    fn homogeneous_equation_has_zero_solution() {
        let a = mat_from_rows(&[
            &[-1.0, 3.0, 0.0, 0.5],
            &[-3.0, -1.0, 0.2, 0.0],
            &[0.0, 0.0, -2.0, 1.0],
            &[0.0, 0.1, -1.0, -2.0],
        ]);
        let x = solve_lyapunov(&a, &Mat::zeros(4, 4)).unwrap();
        assert_eq!(x.norm(), 0.0);
    }

    #[test]
    fn skew_source_gives_skew_solution() {
        let a = mat_from_rows(&[
            &[-0.7, 2.0, 0.1, 0.0],
            &[-2.5, -0.3, 0.0, 0.4],
            &[0.3, 0.0, -1.1, 0.9],
            &[0.0, -0.2, -0.8, -0.5],
        ]);
        let w = symplectic(2) * 1.7;
        let x = solve_lyapunov(&a, &w).unwrap();
        assert!((&x + x.transpose()).norm() < 1e-12);
        assert!(residual(&a, &x, &w) < 1e-12);
    }

    #[test]
    fn rejects_unstable_and_bad_shapes() {
        let a = mat_from_rows(&[&[0.1, 0.0], &[0.0, -1.0]]);
        assert!(matches!(
            solve_lyapunov(&a, &Mat::identity(2, 2)),
            Err(Error::NotHurwitz { .. })
        ));
        assert!(matches!(
            solve_lyapunov(&(-Mat::identity(2, 2)), &Mat::identity(3, 3)),
            Err(Error::DimensionMismatch(_))
        ));
    }
}
