//! Quadrature-form linear quantum systems.
//!
//! State, input and output vectors use the interleaved ordering
//! `(q₁, p₁, q₂, p₂, …)`. A [`StateSpace`] either carries the full `2m`
//! output rows or, after [`quadrature_select`], only the `m` rows of one
//! homodyne quadrature.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{cond2, fro, j2, require_shape, require_square, symplectic, Mat};

/// Which output quadrature a homodyne detector measures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Quadrature {
    #[serde(rename = "q")]
    Q,
    #[serde(rename = "p")]
    P,
}

impl Quadrature {
    /// Row offset within each interleaved (q, p) pair.
    fn offset(self) -> usize {
        match self {
            Quadrature::Q => 0,
            Quadrature::P => 1,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Quadrature::Q => "q",
            Quadrature::P => "p",
        }
    }
}

impl std::str::FromStr for Quadrature {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "q" | "Q" => Ok(Quadrature::Q),
            "p" | "P" => Ok(Quadrature::P),
            other => Err(Error::Config(format!("unknown quadrature '{other}'"))),
        }
    }
}

impl std::fmt::Display for Quadrature {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Real quadrature-form system matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct StateSpace {
    pub a: Mat,
    pub b: Mat,
    pub c: Mat,
    pub d: Mat,
    /// `Some` when only one quadrature's output rows are kept.
    pub quadrature: Option<Quadrature>,
}

impl StateSpace {
    pub fn new(a: Mat, b: Mat, c: Mat, d: Mat, quadrature: Option<Quadrature>) -> Result<Self> {
        let nx = require_square("A", &a)?;
        if nx % 2 != 0 || b.ncols() % 2 != 0 {
            return Err(Error::DimensionMismatch(format!(
                "state and input dimensions must be even, got {nx} and {}",
                b.ncols()
            )));
        }
        let m = b.ncols() / 2;
        require_shape("B", &b, nx, 2 * m)?;
        let ny = if quadrature.is_some() { m } else { 2 * m };
        require_shape("C", &c, ny, nx)?;
        require_shape("D", &d, ny, 2 * m)?;
        let finite = [&a, &b, &c, &d].iter().all(|x| x.iter().all(|v| v.is_finite()));
        if !finite {
            return Err(Error::InvalidParameter("system matrices must be finite".into()));
        }
        Ok(StateSpace { a, b, c, d, quadrature })
    }

    /// Mode count `n` (state dimension `2n`).
    pub fn n(&self) -> usize {
        self.a.nrows() / 2
    }

    /// Field count `m` (input dimension `2m`).
    pub fn m(&self) -> usize {
        self.b.ncols() / 2
    }

    pub fn outputs(&self) -> usize {
        self.c.nrows()
    }

    /// Restrict a full-output system to one quadrature.
    pub fn measured(&self, which: Quadrature) -> Result<StateSpace> {
        if let Some(q) = self.quadrature {
            return if q == which {
                Ok(self.clone())
            } else {
                Err(Error::DimensionMismatch(format!(
                    "system only carries the {q} quadrature, {which} requested"
                )))
            };
        }
        let sub = quadrature_select(self, which);
        StateSpace::new(self.a.clone(), self.b.clone(), sub.c_meas, sub.d_meas, Some(which))
    }

    /// `(A, B, C) → (V A V⁻¹, V B, C V⁻¹)`.
    pub fn transformed(&self, v: &Mat) -> Result<StateSpace> {
        let (a, b, c) = similarity_transform(&self.a, &self.b, &self.c, v)?;
        Ok(StateSpace { a, b, c, d: self.d.clone(), quadrature: self.quadrature })
    }
}

/// Output rows of one homodyne quadrature.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureSubsystem {
    pub which: Quadrature,
    pub c_meas: Mat,
    pub d_meas: Mat,
}

/// Extract the odd (q) or even (p) output rows, counting from one.
pub fn quadrature_select(sys: &StateSpace, which: Quadrature) -> QuadratureSubsystem {
    let rows: Vec<usize> = (0..sys.m()).map(|j| 2 * j + which.offset()).collect();
    QuadratureSubsystem {
        which,
        c_meas: sys.c.select_rows(rows.iter()),
        d_meas: sys.d.select_rows(rows.iter()),
    }
}

/// Sign convention for the cavity input coupling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputPhase {
    /// `B = −[√κⱼ I]`, `C = [√κⱼ I]` as in the reference cavity.
    #[default]
    Standard,
    /// Both `B` and `C` negated (a π phase shift on every input field).
    Flipped,
}

/// Detuned passive cavity coupled to `m` fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CavityParams {
    /// Detuning Δ in rad/s.
    pub detuning: f64,
    /// Coupling rates κⱼ ≥ 0 in 1/s.
    pub kappas: Vec<f64>,
    #[serde(default)]
    pub phase: InputPhase,
}

impl CavityParams {
    pub fn new(detuning: f64, kappas: Vec<f64>) -> Self {
        CavityParams { detuning, kappas, phase: InputPhase::Standard }
    }

    /// Δ = 10, κ = (5, 3, 2).
    pub fn reference() -> Self {
        CavityParams::new(10.0, vec![5.0, 3.0, 2.0])
    }
}

/// Quadrature-form matrices of the single-mode cavity:
/// `A = −(Σκ/2) I + 2Δ J`, `B = [−√κⱼ I]`, `C = [√κⱼ I]ᵀ`, `D = I`.
pub fn build_cavity(params: &CavityParams) -> Result<StateSpace> {
    if params.kappas.is_empty() {
        return Err(Error::EmptyKappas);
    }
    if params.kappas.iter().any(|k| !(*k >= 0.0) || !k.is_finite()) || !params.detuning.is_finite() {
        return Err(Error::InvalidParameter("coupling rates must be finite and non-negative".into()));
    }
    let m = params.kappas.len();
    let total: f64 = params.kappas.iter().sum();
    let a = Mat::identity(2, 2) * (-total / 2.0) + j2() * (2.0 * params.detuning);
    let sign = match params.phase {
        InputPhase::Standard => 1.0,
        InputPhase::Flipped => -1.0,
    };
    let mut b = Mat::zeros(2, 2 * m);
    let mut c = Mat::zeros(2 * m, 2);
    for (j, kappa) in params.kappas.iter().enumerate() {
        let s = kappa.sqrt();
        for k in 0..2 {
            b[(k, 2 * j + k)] = -sign * s;
            c[(2 * j + k, k)] = sign * s;
        }
    }
    StateSpace::new(a, b, c, Mat::identity(2 * m, 2 * m), None)
}

/// Frobenius norms of the realizability residuals
/// `(I) A Z + Z Aᵀ + B 𝕁ₘ Bᵀ` and `(II) Z Cᵀ + B 𝕁ₘ Dᵀ`.
pub fn realizability_residual(a: &Mat, b: &Mat, c: &Mat, d: &Mat, z: &Mat) -> Result<(f64, f64)> {
    let nx = require_square("A", a)?;
    if b.ncols() % 2 != 0 {
        return Err(Error::DimensionMismatch("B must have an even column count".into()));
    }
    require_shape("B", b, nx, b.ncols())?;
    require_shape("Z", z, nx, nx)?;
    require_shape("C", c, c.nrows(), nx)?;
    require_shape("D", d, c.nrows(), b.ncols())?;
    let jm = symplectic(b.ncols() / 2);
    let bj = b * &jm;
    let r1 = a * z + z * a.transpose() + &bj * b.transpose();
    let r2 = z * c.transpose() + bj * d.transpose();
    Ok((fro(&r1), fro(&r2)))
}

/// `(V A V⁻¹, V B, C V⁻¹)`.
pub fn similarity_transform(a: &Mat, b: &Mat, c: &Mat, v: &Mat) -> Result<(Mat, Mat, Mat)> {
    let nx = require_square("A", a)?;
    require_shape("V", v, nx, nx)?;
    if !(cond2(v) < 1e12) {
        return Err(Error::SingularV);
    }
    let v_inv = v.clone().try_inverse().ok_or(Error::SingularV)?;
    Ok((v * a * &v_inv, v * b, c * v_inv))
}

/// Markov parameters `C Aᵏ B` for `k = 0..count`.
pub fn markov_parameters(a: &Mat, b: &Mat, c: &Mat, count: usize) -> Vec<Mat> {
    let mut out = Vec::with_capacity(count);
    let mut ak_b = b.clone();
    for _ in 0..count {
        out.push(c * &ak_b);
        ak_b = a * ak_b;
    }
    out
}

/// A system certified physically realizable by `Z`, with its steady-state
/// filter covariance `Q` and Kalman gain `L`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantumRealization {
    pub sys: StateSpace,
    pub z: Mat,
    pub q: Mat,
    pub l: Mat,
}

impl QuantumRealization {
    /// Realizability residuals `(r1, r2)` of the stored system against `Z`.
    pub fn residuals(&self) -> Result<(f64, f64)> {
        realizability_residual(&self.sys.a, &self.sys.b, &self.sys.c, &self.sys.d, &self.z)
    }

    /// Residuals scaled by `1 + ‖B‖₂²`, the quantity bounded by 1e-6 for
    /// accepted models.
    pub fn scaled_residuals(&self) -> Result<(f64, f64)> {
        let (r1, r2) = self.residuals()?;
        let s = 1.0 + crate::numerics::norm2(&self.sys.b).powi(2);
        Ok((r1 / s, r2 / s))
    }

    pub fn check_shapes(&self) -> Result<()> {
        let nx = self.sys.a.nrows();
        require_shape("Z", &self.z, nx, nx)?;
        require_shape("Q", &self.q, nx, nx)?;
        require_shape("L", &self.l, nx, self.sys.outputs())?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{is_hurwitz, mat_from_rows, spectral_abscissa};
    use proptest::prelude::*;

    #[test]
    fn reference_cavity_matrices() {
        let sys = build_cavity(&CavityParams::reference()).unwrap();
        let a = mat_from_rows(&[&[-5.0, 20.0], &[-20.0, -5.0]]);
        assert!((&sys.a - a).norm() < 1e-12);
        let b_row1 = [-2.2361, 0.0, -1.7321, 0.0, -1.4142, 0.0];
        for (k, v) in b_row1.iter().enumerate() {
            assert!((sys.b[(0, k)] - v).abs() < 5e-5);
        }
        let c_col1 = [2.2361, 0.0, 1.7321, 0.0, 1.4142, 0.0];
        for (k, v) in c_col1.iter().enumerate() {
            assert!((sys.c[(k, 0)] - v).abs() < 5e-5);
        }
        assert_eq!(sys.d, Mat::identity(6, 6));
    }

    #[test]
    fn single_lossy_mode() {
        let sys = build_cavity(&CavityParams::new(0.0, vec![2.0])).unwrap();
        assert!((&sys.a + Mat::identity(2, 2)).norm() < 1e-15);
        assert!((&sys.b + Mat::identity(2, 2) * 2f64.sqrt()).norm() < 1e-15);
        assert!((&sys.c - Mat::identity(2, 2) * 2f64.sqrt()).norm() < 1e-15);
        assert_eq!(sys.d, Mat::identity(2, 2));
    }

    #[test]
    fn empty_kappas() {
        assert!(matches!(build_cavity(&CavityParams::new(1.0, vec![])), Err(Error::EmptyKappas)));
    }

    #[test]
    fn quadrature_rows() {
        let sys = build_cavity(&CavityParams::reference()).unwrap();
        let q = quadrature_select(&sys, Quadrature::Q);
        let (s5, s3, s2) = (5f64.sqrt(), 3f64.sqrt(), 2f64.sqrt());
        assert!((q.c_meas - mat_from_rows(&[&[s5, 0.0], &[s3, 0.0], &[s2, 0.0]])).norm() < 1e-15);
        let p = quadrature_select(&sys, Quadrature::P);
        assert!((p.c_meas - mat_from_rows(&[&[0.0, s5], &[0.0, s3], &[0.0, s2]])).norm() < 1e-15);
        for j in 0..3 {
            for k in 0..6 {
                assert_eq!(q.d_meas[(j, k)], if k == 2 * j { 1.0 } else { 0.0 });
                assert_eq!(p.d_meas[(j, k)], if k == 2 * j + 1 { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn quadratures_interleave_back() {
        let sys = build_cavity(&CavityParams::new(3.0, vec![1.0, 4.0])).unwrap();
        let q = quadrature_select(&sys, Quadrature::Q);
        let p = quadrature_select(&sys, Quadrature::P);
        for j in 0..2 {
            assert_eq!(sys.c.row(2 * j), q.c_meas.row(j));
            assert_eq!(sys.c.row(2 * j + 1), p.c_meas.row(j));
            assert_eq!(sys.d.row(2 * j), q.d_meas.row(j));
            assert_eq!(sys.d.row(2 * j + 1), p.d_meas.row(j));
        }
    }

    #[test]
    fn residual_examples() {
        let sys = build_cavity(&CavityParams::reference()).unwrap();
        let j = symplectic(1);
        let (r1, r2) = realizability_residual(&sys.a, &sys.b, &sys.c, &sys.d, &j).unwrap();
        assert!(r1 < 1e-12 && r2 < 1e-12);

        let zero = Mat::zeros(2, 2);
        let (r1, r2) = realizability_residual(&zero, &Mat::zeros(2, 6), &Mat::zeros(6, 2), &sys.d, &j).unwrap();
        assert_eq!((r1, r2), (0.0, 0.0));

        // (4 − 1)·Σκ·𝕁 with ‖𝕁₁‖_F = √2.
        let b2 = &sys.b * 2.0;
        let (r1, _) = realizability_residual(&sys.a, &b2, &sys.c, &sys.d, &j).unwrap();
        assert!((r1 - 30.0 * 2f64.sqrt()).abs() < 1e-10);
    }

    #[test]
    fn flipped_phase_is_realizable() {
        let mut p = CavityParams::reference();
        p.phase = InputPhase::Flipped;
        let sys = build_cavity(&p).unwrap();
        let (r1, r2) = realizability_residual(&sys.a, &sys.b, &sys.c, &sys.d, &symplectic(1)).unwrap();
        assert!(r1 < 1e-12 && r2 < 1e-12);
    }

    #[test]
    fn conditioning_transform_scales_b_and_c() {
        let sys = build_cavity(&CavityParams::reference()).unwrap().measured(Quadrature::Q).unwrap();
        let omega = 1000.0;
        let t = Mat::identity(2, 2) * (6.0 * omega);
        let out = sys.transformed(&t).unwrap();
        assert!((&out.a - &sys.a).norm() < 1e-9);
        assert!((&out.b - &sys.b * (6.0 * omega)).norm() < 1e-9);
        assert!((&out.c - &sys.c / (6.0 * omega)).norm() < 1e-12);
        assert!(matches!(sys.transformed(&Mat::zeros(2, 2)), Err(Error::SingularV)));
    }

    proptest! {
        #[test]
        fn cavity_always_realizable(delta in -20.0f64..20.0, kappas in proptest::collection::vec(0.0f64..10.0, 1..4)) {
            let sys = build_cavity(&CavityParams::new(delta, kappas.clone())).unwrap();
            let (r1, r2) = realizability_residual(&sys.a, &sys.b, &sys.c, &sys.d, &symplectic(1)).unwrap();
            prop_assert!(r1 < 1e-12 * (1.0 + kappas.iter().sum::<f64>()));
            prop_assert!(r2 < 1e-12 * (1.0 + kappas.iter().sum::<f64>()));
            let total: f64 = kappas.iter().sum();
            prop_assert_eq!(is_hurwitz(&sys.a), total > 2e-12);
            if total > 0.0 {
                prop_assert!((spectral_abscissa(&sys.a) + total / 2.0).abs() < 1e-9);
            }
        }

        #[test]
        fn residual_and_markov_invariant_under_similarity(
            entries in proptest::collection::vec(-1.0f64..1.0, 4),
        ) {
            let sys = build_cavity(&CavityParams::reference()).unwrap().measured(Quadrature::Q).unwrap();
            let v = Mat::identity(2, 2) * 2.0 + Mat::from_row_slice(2, 2, &entries);
            prop_assume!(v.determinant().abs() > 0.1);
            let out = sys.transformed(&v).unwrap();
            let z = &v * symplectic(1) * v.transpose();
            let (r1, r2) = realizability_residual(&out.a, &out.b, &out.c, &out.d, &z).unwrap();
            prop_assert!(r1 < 1e-10 * (1.0 + out.b.norm_squared()));
            prop_assert!(r2 < 1e-10 * (1.0 + out.b.norm_squared()));
            let before = markov_parameters(&sys.a, &sys.b, &sys.c, 4);
            let after = markov_parameters(&out.a, &out.b, &out.c, 4);
            for (x, y) in before.iter().zip(&after) {
                prop_assert!((x - y).norm() <= 1e-9 * (1.0 + x.norm()));
            }
        }
    }
}
