//! Projection by elimination: `Z` from the Lyapunov equation, `C̄` from the
//! output constraint, so only `(Ā, B̄)` are free.

use std::collections::VecDeque;

use super::{loss, ProjectionTarget};
use crate::error::{Error, Result};
use crate::numerics::{normalized_det, solve_lyapunov, spectral_abscissa, symplectic, Mat, DET_Z_MIN};

/// Realizable system determined by `(Ā, B̄)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Completion {
    pub a: Mat,
    pub b: Mat,
    pub c: Mat,
    pub z: Mat,
}

/// `Z = lyap(Ā, B̄ 𝕁 B̄ᵀ)`, `C̄ = −(Z⁻¹ B̄ 𝕁 Dᵀ)ᵀ`.
pub fn complete(a: &Mat, b: &Mat, d_meas: &Mat) -> Result<Completion> {
    let jm = symplectic(b.ncols() / 2);
    let bj = b * &jm;
    let z = solve_lyapunov(a, &(&bj * b.transpose()))?;
    let det = z.determinant();
    if !(normalized_det(&z).abs() >= DET_Z_MIN) {
        return Err(Error::SingularZ { det });
    }
    let k = bj * d_meas.transpose();
    let zinv_k = z.clone().lu().solve(&k).ok_or(Error::SingularZ { det })?;
    Ok(Completion { a: a.clone(), b: b.clone(), c: -zinv_k.transpose(), z })
}

/// Reduced objective `f(Ā, B̄) = loss(Ā, B̄, C̄(Ā, B̄))`.
pub fn reduced_loss(a: &Mat, b: &Mat, target: &ProjectionTarget) -> Result<f64> {
    let comp = complete(a, b, &target.d_meas)?;
    loss(a, b, &comp.c, target)
}

/// Value and analytic gradient `(f, ∂f/∂Ā, ∂f/∂B̄)`.
pub fn reduced_gradient(a: &Mat, b: &Mat, target: &ProjectionTarget) -> Result<(f64, Mat, Mat)> {
    let comp = complete(a, b, &target.d_meas)?;
    let f = loss(a, b, &comp.c, target)?;
    let jm = symplectic(b.ncols() / 2);
    let d = &target.d_meas;
    let k = b * &jm * d.transpose();
    let zt_inv = comp
        .z
        .transpose()
        .try_inverse()
        .ok_or(Error::SingularZ { det: comp.z.determinant() })?;
    let gc = &comp.c - &target.c;
    let g_k = -(&zt_inv * gc.transpose());
    let g_z = &zt_inv * gc.transpose() * k.transpose() * &zt_inv;
    let lambda = solve_lyapunov(&a.transpose(), &g_z)?;
    let g_a = (a - &target.a) + &lambda * comp.z.transpose() + lambda.transpose() * &comp.z;
    let g_b = (b - &target.b)
        + g_k * d * jm.transpose()
        + &lambda * b * jm.transpose()
        + lambda.transpose() * b * &jm;
    Ok((f, g_a, g_b))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReducedOptions {
    pub max_iter: usize,
    /// Stop when the gradient norm falls below `grad_tol · (1 + ‖target‖)`.
    pub grad_tol: f64,
    /// L-BFGS memory.
    pub memory: usize,
    /// Steps are rejected unless every eigenvalue of `Ā` has real part below
    /// `−margin`; matches the lifted certificate `P ⪰ εI, ĀᵀP + PĀ ⪯ −εP`
    /// at `margin = ε/2`.
    pub margin: f64,
}

impl Default for ReducedOptions {
    fn default() -> Self {
        ReducedOptions { max_iter: 5000, grad_tol: 1e-12, memory: 10, margin: 5e-4 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReducedSolution {
    pub completion: Completion,
    pub loss: f64,
    pub iterations: usize,
    pub grad_norm: f64,
}

fn pack(a: &Mat, b: &Mat) -> Vec<f64> {
    a.iter().chain(b.iter()).copied().collect()
}

fn unpack(x: &[f64], nx: usize, nu: usize) -> (Mat, Mat) {
    let a = Mat::from_column_slice(nx, nx, &x[..nx * nx]);
    let b = Mat::from_column_slice(nx, nu, &x[nx * nx..]);
    (a, b)
}

fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

/// Minimize the reduced objective from `(a0, b0)` with L-BFGS and a
/// backtracking line search that rejects `Ā` outside the stability margin and
/// singular `Z`.
pub fn minimize_reduced(a0: &Mat, b0: &Mat, target: &ProjectionTarget, opts: &ReducedOptions) -> Result<ReducedSolution> {
    let nx = a0.nrows();
    let nu = b0.ncols();
    if !(spectral_abscissa(a0) < -opts.margin) {
        return Err(Error::NotHurwitz { max_real: spectral_abscissa(a0) });
    }
    let eval = |x: &[f64]| -> Option<(f64, Vec<f64>)> {
        let (a, b) = unpack(x, nx, nu);
        if !(spectral_abscissa(&a) < -opts.margin) {
            return None;
        }
        match reduced_gradient(&a, &b, target) {
            Ok((f, ga, gb)) if f.is_finite() => Some((f, pack(&ga, &gb))),
            _ => None,
        }
    };

    let mut x = pack(a0, b0);
    let (mut f, mut g) = match eval(&x) {
        Some(v) => v,
        None => return Err(Error::ZSingularOnPath),
    };
    let scale = 1.0 + target.norm();
    let mut history: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::new();
    let mut iterations = 0;
    let mut flat = 0;
    for it in 0..opts.max_iter {
        iterations = it;
        let gnorm = dot(&g, &g).sqrt();
        if gnorm <= opts.grad_tol * scale {
            break;
        }
        // Two-loop recursion.
        let mut q = g.clone();
        let mut alphas = Vec::with_capacity(history.len());
        for (s, y, rho) in history.iter().rev() {
            let alpha = rho * dot(s, &q);
            for (qi, yi) in q.iter_mut().zip(y) {
                *qi -= alpha * yi;
            }
            alphas.push(alpha);
        }
        if let Some((s, y, _)) = history.back() {
            let gamma = dot(s, y) / dot(y, y);
            q.iter_mut().for_each(|v| *v *= gamma);
        }
        for ((s, y, rho), alpha) in history.iter().zip(alphas.iter().rev()) {
            let beta = rho * dot(y, &q);
            for (qi, si) in q.iter_mut().zip(s) {
                *qi += (alpha - beta) * si;
            }
        }
        let mut dir: Vec<f64> = q.iter().map(|v| -v).collect();
        let mut slope = dot(&g, &dir);
        if !(slope < 0.0) {
            history.clear();
            dir = g.iter().map(|v| -v).collect();
            slope = -gnorm * gnorm;
        }

        let mut step = if history.is_empty() { (1.0 / gnorm).min(1.0) } else { 1.0 };
        let mut accepted = None;
        for _ in 0..60 {
            let trial: Vec<f64> = x.iter().zip(&dir).map(|(xi, di)| xi + step * di).collect();
            if let Some((ft, gt)) = eval(&trial) {
                if ft <= f + 1e-4 * step * slope {
                    accepted = Some((trial, ft, gt));
                    break;
                }
            }
            step *= 0.5;
        }
        let Some((xn, fnew, gn)) = accepted else {
            if history.is_empty() {
                break;
            }
            history.clear();
            continue;
        };
        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-300 {
            history.push_back((s, y, 1.0 / sy));
            if history.len() > opts.memory {
                history.pop_front();
            }
        }
        if (f - fnew).abs() <= 1e-15 * f.abs().max(1e-300) {
            flat += 1;
            if flat >= 5 {
                x = xn;
                f = fnew;
                g = gn;
                break;
            }
        } else {
            flat = 0;
        }
        x = xn;
        f = fnew;
        g = gn;
    }
    let (a, b) = unpack(&x, nx, nu);
    let completion = complete(&a, &b, &target.d_meas)?;
    Ok(ReducedSolution { completion, loss: f, iterations, grad_norm: dot(&g, &g).sqrt() })
}
