use nalgebra::SymmetricEigen;

use super::{require_square, Mat};
use crate::error::{Error, Result};

/// Real invertible `V` with `V 𝕁ₙ Vᵀ = Z` for skew-symmetric invertible `Z`.
///
/// The eigenvectors of the symmetric matrix `-Z²` come in pairs sharing the
/// eigenvalue `σ²`. For each unit `u` in such an eigenspace, `v = Z u / σ`
/// completes an orthonormal pair on which `Z` acts as `σ J` in the ordering
/// `(v, u)`. Pairs are taken in order of descending `σ`, and
/// `V = [v₁ u₁ v₂ u₂ …] · diag(√σ₁, √σ₁, √σ₂, …)`.
pub fn skew_canonical_factor(z: &Mat) -> Result<Mat> {
    let d = require_square("Z", z)?;
    if d % 2 != 0 {
        return Err(Error::DimensionMismatch(format!("Z must have even size, got {d}")));
    }
    let asym = (z + z.transpose()).norm();
    if asym > 1e-8 * z.norm().max(1.0) {
        return Err(Error::NotSkew { asym });
    }
    let z = (z - z.transpose()) * 0.5;
    let det = z.determinant();
    if !(super::normalized_det(&z).abs() > super::DET_Z_MIN) {
        return Err(Error::SingularZ { det });
    }

    let eig = SymmetricEigen::new(-(&z * &z));
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));

    let mut basis: Vec<nalgebra::DVector<f64>> = Vec::with_capacity(d);
    let mut sigmas = Vec::with_capacity(d / 2);
    for &i in &order {
        if basis.len() == d {
            break;
        }
        let mut u = eig.eigenvectors.column(i).into_owned();
        for b in &basis {
            let c = b.dot(&u);
            u -= c * b;
        }
        let nu = u.norm();
        if nu < 0.5 {
            continue;
        }
        u /= nu;
        let zu = &z * &u;
        let sigma = zu.norm();
        if sigma <= 0.0 {
            return Err(Error::SingularZ { det });
        }
        let v = zu / sigma;
        basis.push(v);
        basis.push(u);
        sigmas.push(sigma);
    }
    if basis.len() != d {
        return Err(Error::SingularZ { det });
    }

    let mut out = Mat::zeros(d, d);
    for (k, col) in basis.iter().enumerate() {
        let s = sigmas[k / 2].sqrt();
        out.set_column(k, &(col * s));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{mat_from_rows, symplectic};

    fn check(z: &Mat) -> Mat {
        let v = skew_canonical_factor(z).unwrap();
        let n = z.nrows() / 2;
        let back = &v * symplectic(n) * v.transpose();
        assert!((&back - z).norm() <= 1e-8 * z.norm(), "{back} vs {z}");
        v
    }

    #[test]
    fn symplectic_input() {
        for n in 1..4 {
            check(&symplectic(n));
        }
    }

    #[test]
    fn scaled_symplectic() {
        let z = symplectic(1) * 2.5;
        let v = check(&z);
        assert!((v.determinant() - 2.5).abs() < 1e-12);
    }

    #[test]
    fn one_mode_structure_matrix() {
        let zq = mat_from_rows(&[&[0.0, -1.193], &[1.193, 0.0]]);
        let v = check(&zq);
        // Any valid 2x2 factor has det V = -1.193; the rounded factor diag(1.09, -1.09)
        // has det -1.1881.
        assert!((v.determinant() + 1.193).abs() < 1e-12);
        let rounded = mat_from_rows(&[&[1.09, 0.0], &[0.0, -1.09]]);
        let approx = &rounded * symplectic(1) * rounded.transpose();
        assert!((approx - &zq).norm() < 0.01);
    }

    #[test]
    fn repeated_blocks() {
        let z = symplectic(3) * -0.7;
        check(&z);
    }

    #[test]
    fn errors() {
        assert!(matches!(
            skew_canonical_factor(&Mat::identity(2, 2)),
            Err(Error::NotSkew { .. })
        ));
        assert!(matches!(
            skew_canonical_factor(&Mat::zeros(2, 2)),
            Err(Error::SingularZ { .. })
        ));
    }
}
