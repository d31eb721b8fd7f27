//! Model quality on validation data: one-step prediction residuals, FPE,
//! per-channel fit and residual correlation diagnostics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::QuantumRealization;
use crate::numerics::{require_hurwitz, require_shape, require_square, Mat, Vector};
use crate::simulate::{Discretization, InputSignal, MeasurementRecord};
use crate::subspace::{remove_feedthrough, ClassicalEstimate};

/// Two-sided 99% standard normal quantile.
pub const Z99: f64 = 2.5758;

/// Continuous-time innovation model `(A, B, C, D, L)` driving the predictor.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictorModel {
    pub a: Mat,
    pub b: Mat,
    pub c: Mat,
    pub d: Mat,
    pub l: Mat,
}

impl PredictorModel {
    pub fn new(a: Mat, b: Mat, c: Mat, d: Mat, l: Mat) -> Result<Self> {
        let nx = require_square("A", &a)?;
        require_shape("B", &b, nx, b.ncols())?;
        require_shape("C", &c, c.nrows(), nx)?;
        require_shape("D", &d, c.nrows(), b.ncols())?;
        require_shape("L", &l, nx, c.nrows())?;
        Ok(PredictorModel { a, b, c, d, l })
    }

    /// Freely estimated entries of `(A, B, C, L)` with `D` known.
    pub fn parameter_count(&self) -> usize {
        let (nx, nu, ny) = (self.a.nrows(), self.b.ncols(), self.c.nrows());
        nx * nx + nx * nu + ny * nx + nx * ny
    }
}

impl From<&QuantumRealization> for PredictorModel {
    fn from(r: &QuantumRealization) -> Self {
        PredictorModel { a: r.sys.a.clone(), b: r.sys.b.clone(), c: r.sys.c.clone(), d: r.sys.d.clone(), l: r.l.clone() }
    }
}

impl From<&ClassicalEstimate> for PredictorModel {
    fn from(e: &ClassicalEstimate) -> Self {
        PredictorModel {
            a: e.a_hat.clone(),
            b: e.b_hat.clone(),
            c: e.c_hat.clone(),
            d: e.d_meas.clone(),
            l: e.l_hat.clone(),
        }
    }
}

/// How the predictor state is initialised at the first sample.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum InitialState {
    /// Least-squares fit of `x̂₀` to the record, so that a slice taken from
    /// mid-record is not dominated by the start-up transient.
    #[default]
    Estimate,
    Zero,
    Given(Vector),
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PredictOptions {
    /// Must match the scheme that produced the record.
    pub discretization: Discretization,
    pub substeps: usize,
    pub x0: InitialState,
}

/// One-step prediction residuals on a record.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualSet {
    /// `N × m` residuals `ẏ − ŷ̇`.
    pub e: Mat,
    pub predictions: Mat,
    /// Number of estimated parameters.
    pub d: usize,
}

impl ResidualSet {
    pub fn len(&self) -> usize {
        self.e.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.e.nrows() == 0
    }

    pub fn channels(&self) -> usize {
        self.e.ncols()
    }
}

/// Run the model's one-step-ahead Kalman predictor over `rec`:
///
/// ```text
/// ŷ̇ₖ = C x̂ₖ + D αₖ,  eₖ = ẏₖ − ŷ̇ₖ
/// x̂ₖ₊₁ = Φ x̂ₖ + Γ αₖ + L Ts (D Dᵀ)⁻¹ eₖ
/// ```
///
/// With the true model and matching discretization, `eₖ` is exactly the
/// injected measurement noise.
pub fn predict(model: &PredictorModel, rec: &MeasurementRecord, opts: &PredictOptions) -> Result<ResidualSet> {
    require_hurwitz(&model.a)?;
    let nx = model.a.nrows();
    if model.c.nrows() != rec.outputs() || model.b.ncols() != rec.inputs.channels() {
        return Err(Error::DimensionMismatch(format!(
            "model is {}-in/{}-out, record has {} inputs and {} outputs",
            model.b.ncols(),
            model.c.nrows(),
            rec.inputs.channels(),
            rec.outputs()
        )));
    }
    let ts = rec.ts;
    let dd = &model.d * model.d.transpose();
    let dd_inv = dd.clone().try_inverse().ok_or(Error::SingularNoise { cond: crate::numerics::cond2(&dd) })?;
    let k = &model.l * dd_inv * ts;
    let (phi, gamma) = opts.discretization.transition_substeps(&model.a, &model.b, ts, opts.substeps);
    let closed = &phi - &k * &model.c;
    let radius = closed.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max);
    if !(radius < 1.0) {
        return Err(Error::UnstablePredictor { radius });
    }
    let run = |x0: &Vector| {
        let n = rec.len();
        let mut x = x0.clone();
        let mut e = Mat::zeros(n, rec.outputs());
        let mut pred = Mat::zeros(n, rec.outputs());
        for t in 0..n {
            let alpha = rec.inputs.samples.row(t).transpose();
            let yhat = &model.c * &x + &model.d * &alpha;
            let et = rec.ydot.row(t).transpose() - &yhat;
            pred.set_row(t, &yhat.transpose());
            e.set_row(t, &et.transpose());
            x = &phi * &x + &gamma * &alpha + &k * &et;
        }
        (e, pred)
    };
    let (e, pred) = match &opts.x0 {
        InitialState::Given(v) if v.len() != nx => {
            return Err(Error::DimensionMismatch(format!("x0 has length {}, expected {nx}", v.len())))
        }
        InitialState::Given(v) => run(v),
        InitialState::Zero => run(&Vector::zeros(nx)),
        InitialState::Estimate => {
            let (e0, _) = run(&Vector::zeros(nx));
            // e = e0 − Ψ x0 with Ψₖ = C (Φ − K C)ᵏ
            let (n, ny) = (rec.len(), rec.outputs());
            let mut psi = Mat::zeros(n * ny, nx);
            let mut blk = model.c.clone();
            for t in 0..n {
                psi.view_mut((t * ny, 0), (ny, nx)).copy_from(&blk);
                blk = &blk * &closed;
            }
            let rhs = Vector::from_iterator(n * ny, (0..n).flat_map(|t| e0.row(t).iter().copied().collect::<Vec<_>>()));
            let x0 = psi.svd(true, true).solve(&rhs, 1e-12).map_err(|m| Error::InvalidParameter(m.into()))?;
            run(&x0)
        }
    };
    Ok(ResidualSet { e, predictions: pred, d: model.parameter_count() })
}

/// Akaike's final prediction error `det(Σ eeᵀ / N)·(1 + d/N)/(1 − d/N)`.
pub fn fpe(res: &ResidualSet) -> Result<f64> {
    let n = res.len();
    if n <= res.d {
        return Err(Error::DegenerateN { n, d: res.d });
    }
    let cov = res.e.transpose() * &res.e / n as f64;
    let r = res.d as f64 / n as f64;
    Ok(cov.determinant() * (1.0 + r) / (1.0 - r))
}

/// Signal the fit is measured against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitReference {
    /// `ẏ − D α`: the part of the output the model has to explain.
    #[default]
    FeedthroughRemoved,
    /// Raw `ẏ`, including the known direct term.
    Raw,
}

/// `Fitₗ = 100·(1 − ‖eₗ‖ / ‖yₗ − mean(yₗ)‖)` per output channel, with `y`
/// chosen by `reference`.
pub fn fit_percent(res: &ResidualSet, rec: &MeasurementRecord, d_meas: &Mat, reference: FitReference) -> Result<Vec<f64>> {
    if res.len() != rec.len() || res.channels() != rec.outputs() {
        return Err(Error::DimensionMismatch("residuals do not match the record".into()));
    }
    let y = match reference {
        FitReference::FeedthroughRemoved => remove_feedthrough(rec, d_meas)?,
        FitReference::Raw => rec.ydot.clone(),
    };
    (0..res.channels())
        .map(|l| {
            let col = y.column(l);
            let mu = col.mean();
            let spread = col.iter().map(|v| (v - mu).powi(2)).sum::<f64>().sqrt();
            if !(spread > 0.0) {
                return Err(Error::ZeroVarianceChannel(l));
            }
            Ok(100.0 * (1.0 - res.e.column(l).norm() / spread))
        })
        .collect()
}

/// Autocorrelation per channel at lags `0..=max_lag`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Autocorrelation {
    /// `values[l][τ]`.
    pub values: Vec<Vec<f64>>,
    pub bound: f64,
}

/// Biased sample autocorrelation `Σₖ e(k) e(k+τ) / Σₖ e(k)²` and the 99%
/// whiteness bound `2.5758/√N`.
pub fn autocorr(res: &ResidualSet, max_lag: usize) -> Result<Autocorrelation> {
    let n = res.len();
    if n <= max_lag {
        return Err(Error::InsufficientData(format!("{n} samples for {max_lag} lags")));
    }
    let values = (0..res.channels())
        .map(|l| {
            let e = res.e.column(l);
            let r0 = e.norm_squared();
            (0..=max_lag)
                .map(|tau| {
                    if r0 == 0.0 {
                        return 0.0;
                    }
                    (0..n - tau).map(|k| e[k] * e[k + tau]).sum::<f64>() / r0
                })
                .collect()
        })
        .collect();
    Ok(Autocorrelation { values, bound: Z99 / (n as f64).sqrt() })
}

/// Cross-correlation between residual and input channels at lags
/// `−max_lag..=max_lag`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossCorrelation {
    pub max_lag: usize,
    /// `values[l][j][τ + max_lag]` for residual channel `l`, input `j`.
    pub values: Vec<Vec<Vec<f64>>>,
    pub bound: f64,
}

impl CrossCorrelation {
    pub fn at(&self, l: usize, j: usize, lag: i64) -> f64 {
        self.values[l][j][(lag + self.max_lag as i64) as usize]
    }
}

/// Normalized sample cross-correlation
/// `Σₖ ẽ(k+τ) ũ(k) / √(Σ ẽ² Σ ũ²)` of mean-removed sequences.
pub fn cross_corr(res: &ResidualSet, input: &InputSignal, max_lag: usize) -> Result<CrossCorrelation> {
    let n = res.len();
    if input.len() != n {
        return Err(Error::DimensionMismatch(format!("{} residual samples, {} input samples", n, input.len())));
    }
    if n <= max_lag {
        return Err(Error::InsufficientData(format!("{n} samples for {max_lag} lags")));
    }
    let centred = |v: nalgebra::DVectorView<f64>| -> Vec<f64> {
        let mu = v.mean();
        v.iter().map(|x| x - mu).collect()
    };
    let us: Vec<Vec<f64>> = (0..input.channels()).map(|j| centred(input.samples.column(j))).collect();
    let values = (0..res.channels())
        .map(|l| {
            let e = centred(res.e.column(l));
            let ne = e.iter().map(|x| x * x).sum::<f64>().sqrt();
            us.iter()
                .map(|u| {
                    let nu = u.iter().map(|x| x * x).sum::<f64>().sqrt();
                    let denom = ne * nu;
                    (-(max_lag as i64)..=max_lag as i64)
                        .map(|tau| {
                            if denom == 0.0 {
                                return 0.0;
                            }
                            let lo = (-tau).max(0) as usize;
                            let hi = (n as i64 - tau.max(0)) as usize;
                            let s: f64 = (lo..hi).map(|k| e[(k as i64 + tau) as usize] * u[k]).sum();
                            s / denom
                        })
                        .collect()
                })
                .collect()
        })
        .collect();
    Ok(CrossCorrelation { max_lag, values, bound: Z99 / (n as f64).sqrt() })
}

/// Fraction of the values inside `±bound`.
pub fn fraction_inside<'a>(values: impl IntoIterator<Item = &'a f64>, bound: f64) -> f64 {
    let (mut inside, mut total) = (0usize, 0usize);
    for v in values {
        total += 1;
        if v.abs() <= bound {
            inside += 1;
        }
    }
    if total == 0 {
        1.0
    } else {
        inside as f64 / total as f64
    }
}
