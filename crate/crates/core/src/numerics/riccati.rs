use super::{cond2, is_hurwitz, require_hurwitz, require_shape, require_square, solve_lyapunov, symmetrize, Mat};
use crate::error::{Error, Result};

/// Shapes of a filter problem: state `nx`, noise `nw`, outputs `ny`.
fn filter_dims(a: &Mat, b: &Mat, c: &Mat, d: &Mat) -> Result<(usize, usize, usize)> {
    let nx = require_square("A", a)?;
    let nw = b.ncols();
    let ny = c.nrows();
    require_shape("B", b, nx, nw)?;
    require_shape("C", c, ny, nx)?;
    require_shape("D", d, ny, nw)?;
    Ok((nx, nw, ny))
}

fn noise_inverse(d: &Mat) -> Result<Mat> {
    let r = d * d.transpose();
    let cond = cond2(&r);
    if !(cond < 1e12) {
        return Err(Error::SingularNoise { cond });
    }
    r.try_inverse().ok_or(Error::SingularNoise { cond })
}

fn are_rhs(q: &Mat, a: &Mat, b: &Mat, c: &Mat, d: &Mat, r_inv: &Mat) -> Mat {
    let l = q * c.transpose() + b * d.transpose();
    a * q + q * a.transpose() + b * b.transpose() - &l * r_inv * l.transpose()
}

/// Stabilizing solution of the filter algebraic Riccati equation
///
/// `A Q + Q Aᵀ + B Bᵀ − (Q Cᵀ + B Dᵀ)(D Dᵀ)⁻¹(Q Cᵀ + B Dᵀ)ᵀ = 0`.
///
/// The stable invariant subspace of the associated Hamiltonian matrix is
/// read off its matrix sign function; one Newton (Kleinman) step then
/// polishes the result.
pub fn solve_filter_are(a: &Mat, b: &Mat, c: &Mat, d: &Mat) -> Result<Mat> {
    let (nx, _, _) = filter_dims(a, b, c, d)?;
    let r_inv = noise_inverse(d)?;
    require_hurwitz(a)?;
    if nx == 0 {
        return Ok(Mat::zeros(0, 0));
    }

    // Remove the noise cross-correlation: Ã = A − S R⁻¹ C, G = B Bᵀ − S R⁻¹ Sᵀ.
    let s = b * d.transpose();
    let a_t = a - &s * &r_inv * c;
    let g = symmetrize(&(b * b.transpose() - &s * &r_inv * s.transpose()));
    let f = symmetrize(&(c.transpose() * &r_inv * c));

    let mut h = Mat::zeros(2 * nx, 2 * nx);
    h.view_mut((0, 0), (nx, nx)).copy_from(&a_t.transpose());
    h.view_mut((0, nx), (nx, nx)).copy_from(&(-&f));
    h.view_mut((nx, 0), (nx, nx)).copy_from(&(-&g));
    h.view_mut((nx, nx), (nx, nx)).copy_from(&(-&a_t));

    let w = matrix_sign(&h)?;
    let id = Mat::identity(nx, nx);
    let w11 = w.view((0, 0), (nx, nx)).into_owned();
    let w12 = w.view((0, nx), (nx, nx)).into_owned();
    let w21 = w.view((nx, 0), (nx, nx)).into_owned();
    let w22 = w.view((nx, nx), (nx, nx)).into_owned();
    let lhs = super::vstack(&[&w12, &(w22 + &id)]);
    let rhs = -super::vstack(&[&(w11 + &id), &w21]);
    let q = least_squares(&lhs, &rhs)
        .ok_or_else(|| Error::NoStabilizingSolution("invariant subspace is not a graph".into()))?;
    let mut q = symmetrize(&q);

    // Newton step: (Ã − Q F) Q⁺ + Q⁺ (Ã − Q F)ᵀ + G + Q F Q = 0.
    let closed = &a_t - &q * &f;
    if !is_hurwitz(&closed) {
        return Err(Error::NoStabilizingSolution("closed loop not Hurwitz".into()));
    }
    let res0 = are_rhs(&q, a, b, c, d, &r_inv).norm();
    if let Ok(q_new) = solve_lyapunov(&closed, &symmetrize(&(&g + &q * &f * &q))) {
        let q_new = symmetrize(&q_new);
        let res1 = are_rhs(&q_new, a, b, c, d, &r_inv).norm();
        if res1 <= res0 && is_hurwitz(&(&a_t - &q_new * &f)) {
            q = q_new;
        }
    }
    Ok(q)
}

/// Matrix sign function by the Newton iteration with determinant scaling.
fn matrix_sign(h: &Mat) -> Result<Mat> {
    let dim = h.nrows() as f64;
    let mut s = h.clone();
    for _ in 0..100 {
        let det = s.determinant();
        if det == 0.0 || !det.is_finite() {
            return Err(Error::NoStabilizingSolution(
                "Hamiltonian has eigenvalues on the imaginary axis".into(),
            ));
        }
        let mu = det.abs().powf(-1.0 / dim);
        let scaled = &s * mu;
        let inv = scaled
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::NoStabilizingSolution("singular sign iterate".into()))?;
        let next = (scaled + inv) * 0.5;
        let delta = (&next - &s).norm();
        s = next;
        if delta <= 1e-13 * s.norm() {
            return Ok(s);
        }
    }
    Err(Error::NoStabilizingSolution("sign iteration did not converge".into()))
}

fn least_squares(a: &Mat, b: &Mat) -> Option<Mat> {
    let svd = a.clone().svd(true, true);
    let tol = 1e-13 * svd.singular_values.max();
    if svd.singular_values.min() <= tol {
        return None;
    }
    svd.solve(b, tol).ok()
}

/// Steady-state gain `L = Q Cᵀ + B Dᵀ`.
pub fn kalman_gain(q: &Mat, b: &Mat, c: &Mat, d: &Mat) -> Result<Mat> {
    let nx = require_square("Q", q)?;
    let nw = b.ncols();
    require_shape("B", b, nx, nw)?;
    require_shape("C", c, c.nrows(), nx)?;
    require_shape("D", d, c.nrows(), nw)?;
    Ok(q * c.transpose() + b * d.transpose())
}

/// Integrate the filter Riccati differential equation with classical RK4.
///
/// Returns `Q(k·dt)` for `k = 0..=round(t_end / dt)`, symmetrized after every
/// step.
pub fn integrate_rde(q0: &Mat, a: &Mat, b: &Mat, c: &Mat, d: &Mat, t_end: f64, dt: f64) -> Result<Vec<Mat>> {
    let (nx, _, _) = filter_dims(a, b, c, d)?;
    require_shape("Q0", q0, nx, nx)?;
    if !(dt > 0.0) || !(t_end >= 0.0) {
        return Err(Error::InvalidParameter(format!("need dt > 0 and t_end >= 0, got dt={dt}, t_end={t_end}")));
    }
    let r_inv = noise_inverse(d)?;
    let steps = (t_end / dt).round() as usize;
    let f = |q: &Mat| are_rhs(q, a, b, c, d, &r_inv);

    let mut out = Vec::with_capacity(steps + 1);
    let mut q = symmetrize(q0);
    out.push(q.clone());
    for k in 1..=steps {
        let k1 = f(&q);
        let k2 = f(&(&q + &k1 * (dt / 2.0)));
        let k3 = f(&(&q + &k2 * (dt / 2.0)));
        let k4 = f(&(&q + &k3 * dt));
        q = symmetrize(&(&q + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0)));
        let norm = q.norm();
        if !norm.is_finite() || norm > 1e12 {
            return Err(Error::Blowup { t: k as f64 * dt });
        }
        out.push(q.clone());
    }
    Ok(out)
}

/// Stationary discrete-time filter Riccati solution with noise cross term.
///
/// For `x⁺ = A x + w`, `y = C x + v` with `cov(w, v) = [[Qw, S], [Sᵀ, R]]`,
/// iterates `P ← A P Aᵀ + Qw − (A P Cᵀ + S)(C P Cᵀ + R)⁻¹(A P Cᵀ + S)ᵀ` from
/// `P = 0`. Returns `(P, K, Re)` with `K = (A P Cᵀ + S) Re⁻¹` and
/// `Re = C P Cᵀ + R`.
pub fn solve_discrete_filter_are(a: &Mat, c: &Mat, qw: &Mat, r: &Mat, s: &Mat) -> Result<(Mat, Mat, Mat)> {
    let nx = require_square("A", a)?;
    let ny = c.nrows();
    require_shape("C", c, ny, nx)?;
    require_shape("Qw", qw, nx, nx)?;
    require_shape("R", r, ny, ny)?;
    require_shape("S", s, nx, ny)?;

    let mut p = Mat::zeros(nx, nx);
    for _ in 0..200_000 {
        let re = c * &p * c.transpose() + r;
        let re_inv = re
            .clone()
            .try_inverse()
            .ok_or(Error::SingularNoise { cond: f64::INFINITY })?;
        let m = a * &p * c.transpose() + s;
        let next = symmetrize(&(a * &p * a.transpose() + qw - &m * &re_inv * m.transpose()));
        let delta = (&next - &p).norm();
        p = next;
        if !p.norm().is_finite() {
            return Err(Error::NoStabilizingSolution("discrete Riccati iteration diverged".into()));
        }
        if delta <= 1e-14 * p.norm().max(1e-300) {
            break;
        }
    }
    let re = symmetrize(&(c * &p * c.transpose() + r));
    let re_inv = re
        .clone()
        .try_inverse()
        .ok_or(Error::SingularNoise { cond: f64::INFINITY })?;
    let k = (a * &p * c.transpose() + s) * re_inv;
    Ok((p, k, re))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::mat_from_rows;

    fn cavity_q() -> (Mat, Mat, Mat, Mat) {
        let a = mat_from_rows(&[&[-5.0, 20.0], &[-20.0, -5.0]]);
        let (s5, s3, s2) = (5f64.sqrt(), 3f64.sqrt(), 2f64.sqrt());
        let b = mat_from_rows(&[
            &[-s5, 0.0, -s3, 0.0, -s2, 0.0],
            &[0.0, -s5, 0.0, -s3, 0.0, -s2],
        ]);
        let c = mat_from_rows(&[&[s5, 0.0], &[s3, 0.0], &[s2, 0.0]]);
        let mut d = Mat::zeros(3, 6);
        for j in 0..3 {
            d[(j, 2 * j)] = 1.0;
        }
        (a, b, c, d)
    }

    #[test]
    fn cavity_filter_is_identity() {
        let (a, b, c, d) = cavity_q();
        let q = solve_filter_are(&a, &b, &c, &d).unwrap();
        assert!((&q - Mat::identity(2, 2)).norm() < 1e-10, "{q}");
        let l = kalman_gain(&q, &b, &c, &d).unwrap();
        assert!(l.norm() < 1e-10);
    }

    #[test]
    fn no_process_noise_gives_zero() {
        let a = -Mat::identity(2, 2);
        let b = Mat::zeros(2, 2);
        let c = mat_from_rows(&[&[1.0, 0.5]]);
        let d = mat_from_rows(&[&[1.0, 0.3]]);
        let q = solve_filter_are(&a, &b, &c, &d).unwrap();
        assert!(q.norm() < 1e-14);
    }

    #[test]
    fn gain_term_by_term() {
        let q = Mat::identity(2, 2);
        let b = Mat::zeros(2, 2);
        let c = mat_from_rows(&[&[1.0, 0.0]]);
        let d = mat_from_rows(&[&[0.3, -0.8]]);
        let l = kalman_gain(&q, &b, &c, &d).unwrap();
        assert_eq!(l, mat_from_rows(&[&[1.0], &[0.0]]));
        assert!(kalman_gain(&q, &b, &Mat::zeros(1, 3), &d).is_err());
    }

    #[test]
    fn singular_noise_rejected() {
        let (a, b, c, _) = cavity_q();
        let d = Mat::zeros(3, 6);
        assert!(matches!(solve_filter_are(&a, &b, &c, &d), Err(Error::SingularNoise { .. })));
    }

    #[test]
    fn rde_fixed_point_and_convergence() {
        let (a, b, c, d) = cavity_q();
        let q_are = solve_filter_are(&a, &b, &c, &d).unwrap();
        let traj = integrate_rde(&q_are, &a, &b, &c, &d, 1.0, 1e-3).unwrap();
        assert!(traj.iter().all(|q| (q - &q_are).norm() < 1e-8));

        let traj = integrate_rde(&Mat::zeros(2, 2), &a, &b, &c, &d, 5.0, 1e-3).unwrap();
        assert!((traj.last().unwrap() - Mat::identity(2, 2)).norm() < 1e-6);
    }

    #[test]
    fn rde_pure_decay() {
        let a = -Mat::identity(2, 2);
        let b = Mat::zeros(2, 2);
        let c = Mat::zeros(1, 2);
        let d = mat_from_rows(&[&[1.0, 0.0]]);
        let q0 = mat_from_rows(&[&[2.0, 0.5], &[0.5, 1.0]]);
        let traj = integrate_rde(&q0, &a, &b, &c, &d, 1.0, 1e-3).unwrap();
        assert_eq!(traj.len(), 1001);
        let expect = &q0 * (-2.0f64).exp();
        assert!((traj.last().unwrap() - expect).norm() < 1e-10);
    }

    #[test]
    fn rde_blowup_detected() {
        let a = -Mat::identity(1, 1);
        let b = mat_from_rows(&[&[1e7, 0.0]]);
        let c = Mat::zeros(1, 1);
        let d = mat_from_rows(&[&[0.0, 1.0]]);
        assert!(matches!(
            integrate_rde(&Mat::zeros(1, 1), &a, &b, &c, &d, 10.0, 0.1),
            Err(Error::Blowup { .. })
        ));
    }

    #[test]
    fn discrete_are_scalar() {
        // x⁺ = 0.9 x + w, y = x + v, Qw = 1, R = 1: P = 0.81 P + 1 - 0.81 P²/(P+1).
        let a = mat_from_rows(&[&[0.9]]);
        let c = mat_from_rows(&[&[1.0]]);
        let (p, k, re) = solve_discrete_filter_are(&a, &c, &Mat::identity(1, 1), &Mat::identity(1, 1), &Mat::zeros(1, 1)).unwrap();
        let pv = p[(0, 0)];
        let resid = 0.81 * pv + 1.0 - 0.81 * pv * pv / (pv + 1.0) - pv;
        assert!(resid.abs() < 1e-12);
        assert!((k[(0, 0)] - 0.9 * pv / (pv + 1.0)).abs() < 1e-12);
        assert!((re[(0, 0)] - (pv + 1.0)).abs() < 1e-12);
    }
}
