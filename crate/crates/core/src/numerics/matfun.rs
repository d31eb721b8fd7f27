use super::{require_square, Mat};
use crate::error::{Error, Result};

/// Matrix exponential (Padé with scaling and squaring, via nalgebra).
pub fn expm(a: &Mat) -> Mat {
    a.clone().exp()
}

/// Zero-order-hold discretization: returns `(e^{A Ts}, ∫₀^{Ts} e^{A s} ds · B)`.
pub fn zoh_discretize(a: &Mat, b: &Mat, ts: f64) -> (Mat, Mat) {
    let nx = a.nrows();
    let nu = b.ncols();
    let mut aug = Mat::zeros(nx + nu, nx + nu);
    aug.view_mut((0, 0), (nx, nx)).copy_from(&(a * ts));
    aug.view_mut((0, nx), (nx, nu)).copy_from(&(b * ts));
    let e = expm(&aug);
    (
        e.view((0, 0), (nx, nx)).into_owned(),
        e.view((0, nx), (nx, nu)).into_owned(),
    )
}

/// Principal matrix logarithm by inverse scaling and squaring.
///
/// Square roots (Denman–Beavers) are taken until `‖X − I‖ ≤ 1/4`, then the
/// Gregory series `log X = 2 Σ S^{2j+1}/(2j+1)`, `S = (X − I)(X + I)⁻¹`, is
/// summed and rescaled.
pub fn logm(a: &Mat) -> Result<Mat> {
    let d = require_square("A", a)?;
    if d == 0 {
        return Ok(Mat::zeros(0, 0));
    }
    let scale = a.norm().max(1.0);
    for ev in a.complex_eigenvalues().iter() {
        if ev.re <= 0.0 && ev.im.abs() <= 1e-12 * scale {
            return Err(Error::LogUndefined(format!(
                "eigenvalue {:.4e}{:+.4e}i on the closed negative real axis",
                ev.re, ev.im
            )));
        }
    }

    let id = Mat::identity(d, d);
    let mut x = a.clone();
    let mut squarings = 0u32;
    while (&x - &id).norm() > 0.25 {
        if squarings >= 60 {
            return Err(Error::LogUndefined("square-root iteration did not settle".into()));
        }
        x = sqrtm_db(&x)?;
        squarings += 1;
    }

    let s = (&x - &id) * (&x + &id)
        .try_inverse()
        .ok_or_else(|| Error::LogUndefined("X + I singular".into()))?;
    let s2 = &s * &s;
    let mut term = s.clone();
    let mut sum = s.clone();
    let mut k = 1.0;
    for _ in 0..200 {
        term = &term * &s2;
        k += 2.0;
        let add = &term / k;
        let done = add.norm() <= 1e-18 * sum.norm().max(1e-300);
        sum += add;
        if done {
            break;
        }
    }
    Ok(sum * (2.0 * f64::powi(2.0, squarings as i32)))
}

/// Principal square root by the Denman–Beavers iteration.
fn sqrtm_db(a: &Mat) -> Result<Mat> {
    let d = a.nrows();
    let mut y = a.clone();
    let mut z = Mat::identity(d, d);
    for _ in 0..100 {
        let yi = y
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::LogUndefined("singular iterate in square root".into()))?;
        let zi = z
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::LogUndefined("singular iterate in square root".into()))?;
        let y_next = (&y + zi) * 0.5;
        let z_next = (&z + yi) * 0.5;
        let delta = (&y_next - &y).norm();
        y = y_next;
        z = z_next;
        if delta <= 1e-15 * y.norm() {
            return Ok(y);
        }
    }
    Ok(y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::mat_from_rows;

    #[test]
    fn log_of_scaled_identity() {
        let ts = 0.01;
        let ad = Mat::identity(2, 2) * (-ts as f64).exp();
        let ac = logm(&ad).unwrap() / ts;
        assert!((ac + Mat::identity(2, 2)).norm() < 1e-12);
    }

    #[test]
    fn log_inverts_exp_for_cavity_drift() {
        let a = mat_from_rows(&[&[-5.0, 20.0], &[-20.0, -5.0]]);
        let ts = 0.01;
        let ad = expm(&(&a * ts));
        let back = logm(&ad).unwrap() / ts;
        assert!((back - &a).norm() < 1e-8);
    }

    #[test]
    fn log_of_large_rotation() {
        // Rotation by 3 rad: principal log is 3J, needs several square roots.
        let theta = 3.0_f64;
        let r = mat_from_rows(&[&[theta.cos(), theta.sin()], &[-theta.sin(), theta.cos()]]);
        let l = logm(&r).unwrap();
        assert!((expm(&l) - &r).norm() < 1e-12);
        assert!((l[(0, 1)] - theta).abs() < 1e-10);
    }

    #[test]
    fn log_rejects_negative_real_eigenvalue() {
        let a = mat_from_rows(&[&[-0.5, 0.0], &[0.0, 0.9]]);
        assert!(matches!(logm(&a), Err(Error::LogUndefined(_))));
    }

    #[test]
    fn zoh_scalar() {
        let (phi, gamma) = zoh_discretize(&mat_from_rows(&[&[-1.0]]), &mat_from_rows(&[&[1.0]]), 0.01);
        assert!((phi[(0, 0)] - (-0.01f64).exp()).abs() < 1e-15);
        assert!((gamma[(0, 0)] - (1.0 - (-0.01f64).exp())).abs() < 1e-15);
    }
}
