//! Projection of a classical estimate onto the set of physically realizable
//! quantum systems.
//!
//! Two solvers share one loss:
//!
//! * [`bisection_identify`]: the matrix-lifted rank-constrained feasibility
//!   problem ([`lifted`]) inside a multiplicative bisection on the loss bound;
//! * [`reduced_projection`]: direct minimization over `(Ā, B̄)` with `Z` and
//!   `C̄` eliminated ([`reduced`]).

pub mod lifted;
pub mod reduced;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Quadrature, QuantumRealization, StateSpace};
use crate::numerics::{kalman_gain, require_hurwitz, require_shape, require_square, skew_canonical_factor, solve_filter_are, Mat};
use crate::subspace::ClassicalEstimate;

pub use lifted::{
    Block1, Block2, Scheme,
    build_lifted, init_certificate, solve_rank_feasibility, Feasibility, FeasibilityOptions, FeasiblePoint, LiftedPoint,
    LiftedProblem, LiftedVars,
};
pub use reduced::{complete, minimize_reduced, reduced_gradient, reduced_loss, Completion, ReducedOptions};

/// Classical `(Â, B̂, Ĉ)` to be projected, with the known feedthrough.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionTarget {
    pub a: Mat,
    pub b: Mat,
    pub c: Mat,
    pub d_meas: Mat,
    pub quadrature: Option<Quadrature>,
}

impl ProjectionTarget {
    pub fn new(a: Mat, b: Mat, c: Mat, d_meas: Mat, quadrature: Option<Quadrature>) -> Result<Self> {
        let t = ProjectionTarget { a, b, c, d_meas, quadrature };
        t.check()?;
        Ok(t)
    }

    pub fn check(&self) -> Result<()> {
        let nx = require_square("Â", &self.a)?;
        if nx % 2 != 0 || self.b.ncols() % 2 != 0 {
            return Err(Error::DimensionMismatch("state and input dimensions must be even".into()));
        }
        require_shape("B̂", &self.b, nx, self.b.ncols())?;
        require_shape("Ĉ", &self.c, self.c.nrows(), nx)?;
        require_shape("D", &self.d_meas, self.c.nrows(), self.b.ncols())?;
        Ok(())
    }

    /// `√(‖Â‖² + ‖B̂‖² + ‖Ĉ‖²)`.
    pub fn norm(&self) -> f64 {
        (self.a.norm_squared() + self.b.norm_squared() + self.c.norm_squared()).sqrt()
    }

    /// Similarity by `T = t·I`: `(Â, t B̂, Ĉ / t)`.
    pub fn scaled(&self, t: f64) -> ProjectionTarget {
        ProjectionTarget { b: &self.b * t, c: &self.c / t, ..self.clone() }
    }
}

impl From<&ClassicalEstimate> for ProjectionTarget {
    fn from(est: &ClassicalEstimate) -> Self {
        ProjectionTarget {
            a: est.a_hat.clone(),
            b: est.b_hat.clone(),
            c: est.c_hat.clone(),
            d_meas: est.d_meas.clone(),
            quadrature: Some(est.quadrature),
        }
    }
}

/// `½(‖Ā − Â‖²_F + ‖B̄ − B̂‖²_F + ‖C̄ − Ĉ‖²_F)`.
pub fn loss(a: &Mat, b: &Mat, c: &Mat, target: &ProjectionTarget) -> Result<f64> {
    require_shape("Ā", a, target.a.nrows(), target.a.ncols())?;
    require_shape("B̄", b, target.b.nrows(), target.b.ncols())?;
    require_shape("C̄", c, target.c.nrows(), target.c.ncols())?;
    Ok(0.5 * ((a - &target.a).norm_squared() + (b - &target.b).norm_squared() + (c - &target.c).norm_squared()))
}

/// Pre-scaling applied to the target before projection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "value")]
pub enum Conditioning {
    None,
    /// Fixed `T = t·I`.
    Scalar(f64),
    /// `T = 6Ω·I` for input amplitude Ω.
    SixOmega(f64),
    /// `t = √(‖Ĉ‖_F / ‖B̂‖_F)`, equalizing the input and output maps.
    Balanced,
}

impl Conditioning {
    pub fn factor(&self, target: &ProjectionTarget) -> f64 {
        match *self {
            Conditioning::None => 1.0,
            Conditioning::Scalar(t) => t,
            Conditioning::SixOmega(omega) => 6.0 * omega,
            Conditioning::Balanced => {
                let (nb, nc) = (target.b.norm(), target.c.norm());
                if nb > 0.0 && nc > 0.0 {
                    (nc / nb).sqrt()
                } else {
                    1.0
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Solver {
    Lifted,
    Reduced,
}

impl Solver {
    pub fn as_str(self) -> &'static str {
        match self {
            Solver::Lifted => "lifted",
            Solver::Reduced => "reduced",
        }
    }
}

/// One bisection round.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaStep {
    pub gamma: f64,
    pub feasible: bool,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionResult {
    pub realization: QuantumRealization,
    /// Smallest loss bound certified feasible (the achieved loss for the
    /// reduced solver).
    pub gamma_final: f64,
    /// Achieved loss against the target the solver was given.
    pub loss: f64,
    pub iterations: usize,
    /// Frobenius realizability residuals `(r1, r2)`.
    pub residuals: (f64, f64),
    /// Relative lifted constraint residual of the accepted point (0 for the
    /// reduced solver).
    pub lifted_residual: f64,
    pub solver: Solver,
    pub gamma_trace: Vec<GammaStep>,
    /// Scale `t` the target was conditioned with; the realization is in the
    /// original, unscaled coordinates.
    pub scale: f64,
}

/// Steady-state filter covariance and gain of a realizable system.
pub fn recover_gain(a: &Mat, b: &Mat, c: &Mat, d_meas: &Mat) -> Result<(Mat, Mat)> {
    let q = solve_filter_are(a, b, c, d_meas)?;
    let l = kalman_gain(&q, b, c, d_meas)?;
    Ok((q, l))
}

fn realization(comp: &Completion, target: &ProjectionTarget) -> Result<QuantumRealization> {
    let (q, l) = recover_gain(&comp.a, &comp.b, &comp.c, &target.d_meas)?;
    let sys = StateSpace::new(comp.a.clone(), comp.b.clone(), comp.c.clone(), target.d_meas.clone(), target.quadrature)?;
    Ok(QuantumRealization { sys, z: comp.z.clone(), q, l })
}

/// Minimum-loss realizable system by the elimination solver, started from
/// `init` (default: the target itself).
pub fn reduced_projection(
    target: &ProjectionTarget,
    init: Option<(&Mat, &Mat)>,
    opts: &ReducedOptions,
) -> Result<ProjectionResult> {
    target.check()?;
    require_hurwitz(&target.a)?;
    let (a0, b0) = init.unwrap_or((&target.a, &target.b));
    let sol = minimize_reduced(a0, b0, target, opts)?;
    let real = realization(&sol.completion, target)?;
    let residuals = real.residuals()?;
    Ok(ProjectionResult {
        realization: real,
        gamma_final: sol.loss,
        loss: sol.loss,
        iterations: sol.iterations,
        residuals,
        lifted_residual: 0.0,
        solver: Solver::Reduced,
        gamma_trace: Vec::new(),
        scale: 1.0,
    })
}

/// Initial `Z` for the lifted warm start.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ZInit {
    /// `Z₀ = 𝕁ₙ`.
    #[default]
    Symplectic,
    /// `Z₀ = lyap(Â, B̂ 𝕁 B̂ᵀ)`.
    Lyapunov,
    /// Start from the reduced solver's realizable solution and its Hurwitz
    /// certificate.
    Reduced,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BisectionOptions {
    /// Initial loss bound; default `2 ×` the reduced solver's loss.
    pub gamma0: Option<f64>,
    pub rounds: usize,
    pub epsilon: f64,
    pub z_init: ZInit,
    pub feasibility: FeasibilityOptions,
    pub reduced: ReducedOptions,
}

impl Default for BisectionOptions {
    fn default() -> Self {
        BisectionOptions {
            gamma0: None,
            rounds: 25,
            epsilon: 1e-3,
            z_init: ZInit::Symplectic,
            feasibility: FeasibilityOptions::default(),
            reduced: ReducedOptions::default(),
        }
    }
}

/// Smallest `γ0` used when the reduced loss is (numerically) zero.
const GAMMA_FLOOR: f64 = 1e-12;

/// Loss-bound bisection over the lifted feasibility problem: `γ ← γ/2` after a
/// feasible solve, `γ ← 1.2 γ` otherwise, each solve warm-started from the
/// last feasible point.
pub fn bisection_identify(target: &ProjectionTarget, opts: &BisectionOptions) -> Result<ProjectionResult> {
    target.check()?;
    require_hurwitz(&target.a)?;
    let red = match (opts.gamma0, opts.z_init) {
        (None, _) | (_, ZInit::Reduced) => Some(reduced_projection(target, None, &opts.reduced)?),
        _ => None,
    };
    let gamma0 = match (opts.gamma0, &red) {
        (Some(g), _) if g > 0.0 => g,
        (Some(_), _) => return Err(Error::InvalidParameter("gamma0 must be positive".into())),
        (None, Some(red)) => (2.0 * red.loss).max(GAMMA_FLOOR * (1.0 + target.norm().powi(2))),
        (None, None) => unreachable!(),
    };

    let probe = build_lifted(target, gamma0, opts.epsilon)?;
    let mut warm = match (opts.z_init, &red) {
        (ZInit::Reduced, Some(red)) => {
            let r = &red.realization;
            let p = lifted::hurwitz_certificate(&r.sys.a, opts.epsilon).map_or_else(|| init_certificate(&r.sys.a), Ok)?;
            probe.lift(&LiftedVars { a: r.sys.a.clone(), b: r.sys.b.clone(), c: r.sys.c.clone(), z: r.z.clone(), p })
        }
        (ZInit::Lyapunov, _) => {
            let jm = crate::numerics::symplectic(target.b.ncols() / 2);
            let z0 = crate::numerics::solve_lyapunov(&target.a, &(&target.b * jm * target.b.transpose()))?;
            probe.lift(&LiftedVars {
                a: target.a.clone(),
                b: target.b.clone(),
                c: target.c.clone(),
                z: z0,
                p: init_certificate(&target.a)?,
            })
        }
        _ => lifted::initial_point(&probe)?,
    };

    let mut gamma = gamma0;
    let mut best: Option<(f64, FeasiblePoint)> = None;
    let mut trace = Vec::new();
    let mut total_iter = 0;
    for _ in 0..opts.rounds.max(1) {
        let prob = build_lifted(target, gamma, opts.epsilon)?;
        let outcome = match solve_rank_feasibility(&prob, &warm, &opts.feasibility) {
            Ok(f) => f,
            Err(Error::NumericalStall { residual, iterations }) => Feasibility::Infeasible { iterations, residual },
            Err(e) => return Err(e),
        };
        match outcome {
            Feasibility::Feasible(pt) => {
                total_iter += pt.iterations;
                trace.push(GammaStep { gamma, feasible: true, iterations: pt.iterations });
                warm = pt.point.clone();
                if best.as_ref().is_none_or(|(g, _)| gamma < *g) {
                    best = Some((gamma, *pt));
                }
                gamma *= 0.5;
            }
            Feasibility::Infeasible { iterations, .. } => {
                total_iter += iterations;
                trace.push(GammaStep { gamma, feasible: false, iterations });
                gamma *= 1.2;
            }
        }
    }
    let (gamma_final, pt) = best.ok_or(Error::NoFeasiblePointFound)?;
    let real = realization(&pt.completion, target)?;
    let residuals = real.residuals()?;
    Ok(ProjectionResult {
        realization: real,
        gamma_final,
        loss: pt.loss,
        iterations: total_iter,
        residuals,
        lifted_residual: pt.residual,
        solver: Solver::Lifted,
        gamma_trace: trace,
        scale: 1.0,
    })
}

/// Map a result computed for `target.scaled(t)` back to unscaled
/// coordinates; loss and γ keep their scaled-coordinate values.
pub fn unscale(mut res: ProjectionResult, t: f64) -> Result<ProjectionResult> {
    let r = &mut res.realization;
    r.sys.b /= t;
    r.sys.c *= t;
    r.z /= t * t;
    r.q /= t * t;
    r.l /= t;
    res.residuals = r.residuals()?;
    res.scale = t;
    Ok(res)
}

/// Condition, project with `solver`, and map back.
pub fn project(target: &ProjectionTarget, conditioning: Conditioning, solver: Solver, opts: &BisectionOptions) -> Result<ProjectionResult> {
    let t = conditioning.factor(target);
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::InvalidParameter(format!("conditioning factor {t}")));
    }
    let scaled = target.scaled(t);
    let res = match solver {
        Solver::Lifted => bisection_identify(&scaled, opts)?,
        Solver::Reduced => reduced_projection(&scaled, None, &opts.reduced)?,
    };
    unscale(res, t)
}

/// Similarity to coordinates in which `Z = 𝕁ₙ`.
pub fn to_canonical(real: &QuantumRealization) -> Result<QuantumRealization> {
    let v = skew_canonical_factor(&real.z)?;
    let v_inv = v.clone().try_inverse().ok_or(Error::SingularV)?;
    let sys = real.sys.transformed(&v_inv)?;
    let z = &v_inv * &real.z * v_inv.transpose();
    let q = &v_inv * &real.q * v_inv.transpose();
    let l = &v_inv * &real.l;
    // Z is 𝕁 up to rounding here; store it exactly
    debug_assert!((&z - crate::numerics::symplectic(z.nrows() / 2)).amax() < 1e-8);
    Ok(QuantumRealization { sys, z: crate::numerics::symplectic(z.nrows() / 2), q: crate::numerics::symmetrize(&q), l })
}
