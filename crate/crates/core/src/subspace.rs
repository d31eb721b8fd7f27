//! Combined deterministic–stochastic subspace identification (N4SID with
//! CVA weighting) of an innovation-form model from one homodyne record.
//!
//! The known feedthrough is removed first, so the identified discrete model is
//!
//! ```text
//! x_{k+1} = A_d x_k + B_d α_k + K_d e_k
//! z_k     = C x_k + e_k,        z_k = ẏ_k − D_meas α_k
//! ```
//!
//! and is then mapped to the continuous innovation form used by the simulator.

use nalgebra::SymmetricEigen;

use crate::error::{Error, Result};
use crate::model::{Quadrature, StateSpace};
use crate::numerics::{is_hurwitz, logm, solve_discrete_filter_are, spectral_abscissa, symmetrize, vstack, Mat};
use crate::simulate::MeasurementRecord;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HankelConfig {
    /// Block rows `i` of the past and future Hankel matrices.
    pub block_rows: usize,
    /// Ridge factor; the added diagonal is `regularization · trace(G)` for Gram matrix `G`.
    pub regularization: f64,
}

impl Default for HankelConfig {
    fn default() -> Self {
        HankelConfig { block_rows: 20, regularization: 1e-8 }
    }
}

/// Past/future block-Hankel matrices, `j = N − 2i + 1` columns each.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockHankel {
    pub u_p: Mat,
    pub u_f: Mat,
    pub z_p: Mat,
    pub z_f: Mat,
}

/// Identified continuous-time innovation model plus subspace diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassicalEstimate {
    pub a_hat: Mat,
    pub b_hat: Mat,
    pub c_hat: Mat,
    pub l_hat: Mat,
    /// Covariance of the discrete innovation `e_k` (units of ẏ²).
    pub innov_cov: Mat,
    /// Singular values of the oblique projection `O_i / √j`, descending.
    pub sing_values: Vec<f64>,
    /// Canonical correlations from the CVA-weighted projection, descending.
    pub cva_values: Vec<f64>,
    /// Mode count; the state dimension is `2n`.
    pub order: usize,
    pub ts: f64,
    pub d_meas: Mat,
    pub quadrature: Quadrature,
    pub a_d: Mat,
    pub b_d: Mat,
    pub k_d: Mat,
}

impl ClassicalEstimate {
    pub fn is_stable(&self) -> bool {
        is_hurwitz(&self.a_hat)
    }

    pub fn require_stable(&self) -> Result<()> {
        if self.is_stable() {
            Ok(())
        } else {
            Err(Error::UnstableEstimate { max_real: spectral_abscissa(&self.a_hat) })
        }
    }

    pub fn state_space(&self) -> Result<StateSpace> {
        StateSpace::new(
            self.a_hat.clone(),
            self.b_hat.clone(),
            self.c_hat.clone(),
            self.d_meas.clone(),
            Some(self.quadrature),
        )
    }
}

/// `z_k = ẏ_k − D_meas α_k`, one row per sample.
pub fn remove_feedthrough(rec: &MeasurementRecord, d_meas: &Mat) -> Result<Mat> {
    if d_meas.nrows() != rec.outputs() || d_meas.ncols() != rec.inputs.channels() {
        return Err(Error::DimensionMismatch(format!(
            "D_meas is {}x{}, record has {} outputs and {} inputs",
            d_meas.nrows(),
            d_meas.ncols(),
            rec.outputs(),
            rec.inputs.channels()
        )));
    }
    Ok(&rec.ydot - &rec.inputs.samples * d_meas.transpose())
}

fn hankel(x: &Mat, first: usize, rows: usize, cols: usize) -> Mat {
    let c = x.ncols();
    let mut h = Mat::zeros(rows * c, cols);
    for r in 0..rows {
        for k in 0..cols {
            for ch in 0..c {
                h[(r * c + ch, k)] = x[(first + r + k, ch)];
            }
        }
    }
    h
}

/// Block-Hankel matrices from sample-major arrays `u` (`N × nu`) and `z` (`N × nz`).
pub fn build_hankel(u: &Mat, z: &Mat, i: usize) -> Result<BlockHankel> {
    let n = u.nrows();
    if z.nrows() != n {
        return Err(Error::DimensionMismatch(format!("{n} input rows but {} output rows", z.nrows())));
    }
    if i == 0 || n < 2 * i {
        return Err(Error::InsufficientData(format!("{n} samples cannot fill 2·{i} block rows")));
    }
    let j = n - 2 * i + 1;
    Ok(BlockHankel {
        u_p: hankel(u, 0, i, j),
        u_f: hankel(u, i, i, j),
        z_p: hankel(z, 0, i, j),
        z_f: hankel(z, i, i, j),
    })
}

/// `Y Xᵀ (X Xᵀ + λ I)⁻¹` with `λ = ridge · trace(X Xᵀ)`.
fn ridge_solve(y: &Mat, x: &Mat, ridge: f64) -> Result<Mat> {
    let mut g = x * x.transpose();
    let lambda = ridge * g.trace();
    for k in 0..g.nrows() {
        g[(k, k)] += lambda;
    }
    let rhs = y * x.transpose();
    let chol = g
        .cholesky()
        .ok_or_else(|| Error::InsufficientData("regression Gram matrix is not positive definite".into()))?;
    Ok(chol.solve(&rhs.transpose()).transpose())
}

/// Symmetric `M^{-1/2}` with eigenvalues floored at `floor · λ_max`.
fn inv_sqrt_psd(m: &Mat, floor: f64) -> (Mat, Mat) {
    let eig = SymmetricEigen::new(symmetrize(m));
    let top = eig.eigenvalues.amax().max(f64::MIN_POSITIVE);
    let clipped = eig.eigenvalues.map(|v| v.max(floor * top));
    let v = &eig.eigenvectors;
    let inv = v * Mat::from_diagonal(&clipped.map(|s| 1.0 / s.sqrt())) * v.transpose();
    let fwd = v * Mat::from_diagonal(&clipped.map(f64::sqrt)) * v.transpose();
    (inv, fwd)
}

fn rms(x: &Mat) -> f64 {
    if x.is_empty() {
        return 1.0;
    }
    let r = (x.norm_squared() / x.len() as f64).sqrt();
    if r > 0.0 { r } else { 1.0 }
}

/// Identify a `2n`-state innovation model from one record.
///
/// An estimate whose continuous `Â` is not Hurwitz is still returned; check
/// [`ClassicalEstimate::require_stable`] before projecting it.
pub fn n4sid_estimate(rec: &MeasurementRecord, order: usize, d_meas: &Mat, cfg: &HankelConfig) -> Result<ClassicalEstimate> {
    let nx = 2 * order;
    let i = cfg.block_rows;
    let ny = rec.outputs();
    let nu = rec.inputs.channels();
    if order == 0 {
        return Err(Error::InvalidParameter("order must be at least 1".into()));
    }
    if i < order + 1 || i * ny < nx {
        return Err(Error::InvalidParameter(format!("{i} block rows cannot resolve {nx} states")));
    }
    let n = rec.len();
    if n < 2 * i + 10 * nx {
        return Err(Error::InsufficientData(format!(
            "{n} samples, need at least {} for order {order}",
            2 * i + 10 * nx
        )));
    }

    let z_raw = remove_feedthrough(rec, d_meas)?;
    let su = rms(&rec.inputs.samples);
    let sz = rms(&z_raw);
    let u = &rec.inputs.samples / su;
    let z = &z_raw / sz;

    let h = build_hankel(&u, &z, i)?;
    let j = h.u_p.ncols();
    let wp = vstack(&[&h.u_p, &h.z_p]);
    let regressors = vstack(&[&wp, &h.u_f]);
    let theta = ridge_solve(&h.z_f, &regressors, cfg.regularization)?;
    let lw = theta.columns(0, wp.nrows()).into_owned();
    let oi = &lw * &wp;

    // Components orthogonal to the future inputs.
    let perp = |x: &Mat| -> Result<Mat> {
        let coef = ridge_solve(x, &h.u_f, cfg.regularization)?;
        Ok(x - coef * &h.u_f)
    };
    let zf_perp = perp(&h.z_f)?;
    let oi_perp = perp(&oi)?;
    let (w1, w1_inv) = inv_sqrt_psd(&(&zf_perp * zf_perp.transpose() / j as f64), 1e-12);

    let raw_sv = (&oi / (j as f64).sqrt()).singular_values();
    let mut sing_values: Vec<f64> = raw_sv.iter().map(|s| s * sz).collect();
    sing_values.sort_by(|a, b| b.total_cmp(a));

    let weighted = &w1 * &oi_perp / (j as f64).sqrt();
    let svd = weighted.svd(true, false);
    let mut idx: Vec<usize> = (0..svd.singular_values.len()).collect();
    idx.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let cva_values: Vec<f64> = idx.iter().map(|&k| svd.singular_values[k]).collect();
    let u_full = svd.u.as_ref().expect("left singular vectors requested");
    let mut u1 = Mat::zeros(u_full.nrows(), nx);
    for (col, &k) in idx.iter().take(nx).enumerate() {
        u1.set_column(col, &(u_full.column(k) * svd.singular_values[k].sqrt()));
    }
    let gamma = &w1_inv * u1;
    let gamma_pinv = gamma
        .clone()
        .pseudo_inverse(1e-12)
        .map_err(|e| Error::InsufficientData(format!("extended observability matrix: {e}")))?;
    let x = &gamma_pinv * &oi;

    // One-step regression on consecutive state columns.
    let cols = j - 1;
    let x0 = x.columns(0, cols).into_owned();
    let x1 = x.columns(1, cols).into_owned();
    let u0 = h.u_f.view((0, 0), (nu, cols)).into_owned();
    let z0 = h.z_f.view((0, 0), (ny, cols)).into_owned();
    let xu = vstack(&[&x0, &u0]);
    let ab = ridge_solve(&x1, &xu, 1e-14)?;
    let a_d = ab.columns(0, nx).into_owned();
    let b_d_s = ab.columns(nx, nu).into_owned();
    let c_s = ridge_solve(&z0, &x0, 1e-14)?;

    let rw = &x1 - &ab * &xu;
    let rv = &z0 - &c_s * &x0;
    let scale = 1.0 / cols as f64;
    let qw = symmetrize(&(&rw * rw.transpose() * scale));
    let mut r = symmetrize(&(&rv * rv.transpose() * scale));
    let floor = 1e-12 * (1.0 + r.trace() / ny as f64);
    for k in 0..ny {
        r[(k, k)] += floor;
    }
    let s = &rw * rv.transpose() * scale;
    let (_, k_s, re_s) = solve_discrete_filter_are(&a_d, &c_s, &qw, &r, &s)?;

    // Undo the data scaling.
    let b_d = b_d_s / su;
    let c_hat = c_s * sz;
    let k_d = k_s / sz;
    let innov_cov = re_s * (sz * sz);

    let ts = rec.ts;
    let (a_hat, b_hat) = d2c(&a_d, &b_d, ts)?;
    let dd = d_meas * d_meas.transpose();
    let l_hat = &k_d * dd / ts;

    Ok(ClassicalEstimate {
        a_hat,
        b_hat,
        c_hat,
        l_hat,
        innov_cov,
        sing_values,
        cva_values,
        order,
        ts,
        d_meas: d_meas.clone(),
        quadrature: rec.quadrature,
        a_d,
        b_d,
        k_d,
    })
}

/// Order-selection score per mode count: `log₁₀(σ²_{2n−1} + σ²_{2n})`.
pub fn relative_energy(sing_values: &[f64]) -> Vec<f64> {
    sing_values
        .chunks(2)
        .map(|pair| pair.iter().map(|s| s * s).sum::<f64>().max(f64::MIN_POSITIVE).log10())
        .collect()
}

/// Continuous `(A_c, B_c)` whose zero-order-hold discretization at `ts` is `(A_d, B_d)`.
pub fn d2c(a_d: &Mat, b_d: &Mat, ts: f64) -> Result<(Mat, Mat)> {
    if !(ts > 0.0) {
        return Err(Error::InvalidParameter("sampling time must be positive".into()));
    }
    let a_c = logm(a_d)? / ts;
    let d = a_d.nrows();
    let shifted = a_d - Mat::identity(d, d);
    let b_c = match shifted.clone().lu().solve(b_d) {
        Some(x) if x.iter().all(|v| v.is_finite()) => &a_c * x,
        // A_c singular: fall back to the series for (A_d − I)⁻¹ A_c.
        _ => {
            let phi_int = phi1(&a_c, ts);
            phi_int
                .lu()
                .solve(b_d)
                .ok_or_else(|| Error::LogUndefined("zero-order-hold input map is singular".into()))?
        }
    };
    Ok((a_c, b_c))
}

/// `∫₀^{ts} e^{A s} ds` by truncated series.
fn phi1(a: &Mat, ts: f64) -> Mat {
    let d = a.nrows();
    let mut term = Mat::identity(d, d) * ts;
    let mut sum = term.clone();
    for k in 2..40 {
        term = a * term * (ts / k as f64);
        sum += &term;
    }
    sum
}
