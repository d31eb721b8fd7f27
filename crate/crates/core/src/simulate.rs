//! Synthetic homodyne records from the steady-state quantum Kalman filter.
//!
//! The filter
//!
//! ```text
//! dx̂ = (A x̂ + B α) dt + L dν
//! dy = (C x̂ + D α) dt + D Dᵀ dν
//! ```
//!
//! is stepped at the sampling time `Ts` with `dν ≈ √Ts · w_k`, `w_k` i.i.d.
//! standard normal. Inputs are held constant over each sample interval.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Quadrature, StateSpace};
use crate::numerics::{kalman_gain, require_hurwitz, solve_filter_are, zoh_discretize, Mat, Vector};

const INPUT_STREAM: u64 = 0;
const NOISE_STREAM: u64 = 1;

/// Sample count covered by `t` seconds, tolerant to `t / Ts` landing just
/// below an integer.
pub(crate) fn samples_in(t: f64, ts: f64) -> usize {
    (t / ts + 1e-9).floor().max(0.0) as usize
}

/// Seeded generator for one of the independent random streams.
fn stream_rng(seed: u64, stream: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Piecewise-constant coherent drive, one row per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct InputSignal {
    /// `N × 2m` quadrature amplitudes α(k·Ts).
    pub samples: Mat,
    pub ts: f64,
    pub omega: f64,
    pub seed: u64,
}

impl InputSignal {
    pub fn len(&self) -> usize {
        self.samples.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.nrows() == 0
    }

    pub fn channels(&self) -> usize {
        self.samples.ncols()
    }

    /// Constant input on every sample, mainly for tests.
    pub fn constant(value: &Vector, n: usize, ts: f64) -> Self {
        let mut samples = Mat::zeros(n, value.len());
        for k in 0..n {
            samples.set_row(k, &value.transpose());
        }
        InputSignal { samples, ts, omega: value.amax(), seed: 0 }
    }
}

/// Pseudo-random binary sequence: every channel is an independent fair
/// `±Ω` coin flip per sample.
pub fn generate_prbs(channels: usize, ts: f64, duration: f64, omega: f64, seed: u64) -> Result<InputSignal> {
    if !(ts > 0.0) || !(duration > 0.0) {
        return Err(Error::NonPositiveDuration);
    }
    let n = samples_in(duration, ts);
    if n < 1 {
        return Err(Error::NonPositiveDuration);
    }
    let mut rng = stream_rng(seed, INPUT_STREAM);
    let mut samples = Mat::zeros(n, channels);
    for k in 0..n {
        for ch in 0..channels {
            samples[(k, ch)] = if rng.random::<bool>() { omega } else { -omega };
        }
    }
    Ok(InputSignal { samples, ts, omega, seed })
}

/// One quadrature's sampled output derivative together with its drive.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementRecord {
    pub quadrature: Quadrature,
    pub inputs: InputSignal,
    /// `N × m` samples of ẏ.
    pub ydot: Mat,
    pub ts: f64,
    pub seed: u64,
    /// Time of the first sample.
    pub t0: f64,
}

impl MeasurementRecord {
    pub fn new(quadrature: Quadrature, inputs: InputSignal, ydot: Mat, seed: u64, t0: f64) -> Result<Self> {
        if inputs.len() != ydot.nrows() {
            return Err(Error::DimensionMismatch(format!(
                "{} input samples but {} output samples",
                inputs.len(),
                ydot.nrows()
            )));
        }
        if !(inputs.ts > 0.0) {
            return Err(Error::InvalidParameter("sampling time must be positive".into()));
        }
        let ts = inputs.ts;
        Ok(MeasurementRecord { quadrature, inputs, ydot, ts, seed, t0 })
    }

    pub fn len(&self) -> usize {
        self.ydot.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.ydot.nrows() == 0
    }

    pub fn outputs(&self) -> usize {
        self.ydot.ncols()
    }

    /// Samples `[start, end)`.
    pub fn slice(&self, start: usize, end: usize) -> MeasurementRecord {
        let len = end.saturating_sub(start);
        let inputs = InputSignal {
            samples: self.inputs.samples.rows(start, len).into_owned(),
            ..self.inputs.clone()
        };
        MeasurementRecord {
            quadrature: self.quadrature,
            inputs,
            ydot: self.ydot.rows(start, len).into_owned(),
            ts: self.ts,
            seed: self.seed,
            t0: self.t0 + start as f64 * self.ts,
        }
    }
}

/// How the filter SDE is stepped between samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Discretization {
    /// `x̂ ← e^{A Ts} x̂ + Γ α`: exact for the drift and the held input.
    #[default]
    Zoh,
    /// `x̂ ← x̂ + (A x̂ + B α) Ts`: plain Euler–Maruyama.
    Euler,
}

impl Discretization {
    /// One-step transition `(Φ, Γ)` for drift `a`, input map `b`.
    pub fn transition(self, a: &Mat, b: &Mat, ts: f64) -> (Mat, Mat) {
        self.transition_substeps(a, b, ts, 1)
    }

    /// Transition over `Ts` built from `substeps` Euler steps of `Ts / substeps`
    /// with the input held. Ignored for [`Discretization::Zoh`].
    pub fn transition_substeps(self, a: &Mat, b: &Mat, ts: f64, substeps: usize) -> (Mat, Mat) {
        match self {
            Discretization::Zoh => zoh_discretize(a, b, ts),
            Discretization::Euler => {
                let s = substeps.max(1);
                let h = ts / s as f64;
                let step = Mat::identity(a.nrows(), a.ncols()) + a * h;
                let bh = b * h;
                let mut phi = Mat::identity(a.nrows(), a.ncols());
                let mut gamma = Mat::zeros(b.nrows(), b.ncols());
                for _ in 0..s {
                    gamma = &step * gamma + &bh;
                    phi = &step * phi;
                }
                (phi, gamma)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimOptions {
    pub discretization: Discretization,
    /// Euler steps per sample; the noise still enters once per sample.
    pub substeps: usize,
    /// When false every `w_k` is zero (noise-free test runs).
    pub noise: bool,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions { discretization: Discretization::Zoh, substeps: 1, noise: true }
    }
}

/// A simulated record plus the hidden paths that produced it.
#[derive(Debug, Clone)]
pub struct Simulation {
    pub record: MeasurementRecord,
    /// `N × 2n` filter states x̂_k (before the update at step k).
    pub states: Mat,
    /// `N × m` standard normal draws w_k.
    pub noise: Mat,
    pub gain: Mat,
}

/// Simulate one homodyne record with the default options.
pub fn simulate_homodyne(
    sys: &StateSpace,
    which: Quadrature,
    input: &InputSignal,
    seed: u64,
    x0: Option<&Vector>,
) -> Result<MeasurementRecord> {
    Ok(simulate_homodyne_with(sys, which, input, seed, x0, &SimOptions::default())?.record)
}

pub fn simulate_homodyne_with(
    sys: &StateSpace,
    which: Quadrature,
    input: &InputSignal,
    seed: u64,
    x0: Option<&Vector>,
    opts: &SimOptions,
) -> Result<Simulation> {
    let meas = sys.measured(which)?;
    require_hurwitz(&meas.a)?;
    let nx = meas.a.nrows();
    let ny = meas.c.nrows();
    if input.channels() != meas.b.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "input has {} channels, system expects {}",
            input.channels(),
            meas.b.ncols()
        )));
    }
    let ts = input.ts;
    if !(ts > 0.0) {
        return Err(Error::InvalidParameter("sampling time must be positive".into()));
    }
    let q = solve_filter_are(&meas.a, &meas.b, &meas.c, &meas.d)?;
    let gain = kalman_gain(&q, &meas.b, &meas.c, &meas.d)?;
    let dd = &meas.d * meas.d.transpose();
    let (phi, gamma) = opts.discretization.transition_substeps(&meas.a, &meas.b, ts, opts.substeps);
    let sq = ts.sqrt();

    let n = input.len();
    let mut x = match x0 {
        Some(v) if v.len() != nx => {
            return Err(Error::DimensionMismatch(format!("x0 has length {}, expected {nx}", v.len())))
        }
        Some(v) => v.clone(),
        None => Vector::zeros(nx),
    };
    let mut rng = stream_rng(seed, NOISE_STREAM);
    let mut states = Mat::zeros(n, nx);
    let mut noise = Mat::zeros(n, ny);
    let mut ydot = Mat::zeros(n, ny);
    let mut w = Vector::zeros(ny);
    for k in 0..n {
        let alpha = input.samples.row(k).transpose();
        if opts.noise {
            for v in w.iter_mut() {
                *v = rng.sample(StandardNormal);
            }
        }
        let y = &meas.c * &x + &meas.d * &alpha + &dd * &w / sq;
        states.set_row(k, &x.transpose());
        noise.set_row(k, &w.transpose());
        ydot.set_row(k, &y.transpose());
        x = &phi * &x + &gamma * &alpha + &gain * &w * sq;
    }
    let record = MeasurementRecord::new(which, input.clone(), ydot, seed, 0.0)?;
    Ok(Simulation { record, states, noise, gain })
}

/// Drop a burn-in and cut estimation and validation slices, in that order.
///
/// Boundaries are `floor(t / Ts)` sample indices.
pub fn split_record(
    rec: &MeasurementRecord,
    t_burn: f64,
    t_est: f64,
    t_val: f64,
) -> Result<(MeasurementRecord, MeasurementRecord)> {
    if [t_burn, t_est, t_val].iter().any(|t| !(*t >= 0.0)) {
        return Err(Error::InvalidParameter("split durations must be non-negative".into()));
    }
    let burn = samples_in(t_burn, rec.ts);
    let est = samples_in(t_est, rec.ts);
    let val = samples_in(t_val, rec.ts);
    if burn + est + val > rec.len() {
        return Err(Error::InsufficientData(format!(
            "split needs {} samples, record has {}",
            burn + est + val,
            rec.len()
        )));
    }
    if est == 0 {
        return Err(Error::InsufficientData("estimation slice is empty".into()));
    }
    if val == 0 {
        return Err(Error::InsufficientData("validation slice is empty".into()));
    }
    Ok((rec.slice(burn, burn + est), rec.slice(burn + est, burn + est + val)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_cavity, CavityParams};

    #[test]
    fn prbs_levels_and_determinism() {
        let ts: f64 = 0.01;
        let omega = 100.0 / ts.sqrt();
        let u = generate_prbs(6, ts, 1.0, omega, 7).unwrap();
        assert_eq!(u.len(), 100);
        assert!(u.samples.iter().all(|v| (v.abs() - 1000.0).abs() < 1e-9));
        assert_eq!(u, generate_prbs(6, ts, 1.0, omega, 7).unwrap());
        assert_ne!(u.samples, generate_prbs(6, ts, 1.0, omega, 8).unwrap().samples);

        let z = generate_prbs(2, ts, 1.0, 0.0, 1).unwrap();
        assert!(z.samples.iter().all(|v| *v == 0.0));
        assert!(matches!(generate_prbs(2, ts, 0.0, 1.0, 1), Err(Error::NonPositiveDuration)));
        assert!(matches!(generate_prbs(2, ts, 0.001, 1.0, 1), Err(Error::NonPositiveDuration)));
    }

    #[test]
    fn prbs_mean_within_clt_bound() {
        let n = 100_000;
        let u = generate_prbs(4, 1.0, n as f64, 1.0, 2024).unwrap();
        for ch in 0..4 {
            let mean = u.samples.column(ch).mean();
            assert!(mean.abs() < 4.0 / (n as f64).sqrt());
        }
    }

    #[test]
    fn zero_drive_gives_white_output() {
        let sys = build_cavity(&CavityParams::reference()).unwrap();
        let ts: f64 = 0.01;
        let u = generate_prbs(6, ts, 30.0, 0.0, 3).unwrap();
        let sim = simulate_homodyne_with(&sys, Quadrature::Q, &u, 11, None, &SimOptions::default()).unwrap();
        assert!(sim.states.norm() < 1e-9);
        for ch in 0..3 {
            let col = sim.record.ydot.column(ch);
            let var = col.variance();
            assert!((var - 100.0).abs() < 5.0, "channel {ch} variance {var}");
            let expect = sim.noise.column(ch) / ts.sqrt();
            assert!((col - expect).amax() < 1e-9);
        }
    }

    #[test]
    fn noise_free_constant_drive_reaches_dc_gain() {
        let sys = build_cavity(&CavityParams::reference()).unwrap();
        let meas = sys.measured(Quadrature::Q).unwrap();
        let ts: f64 = 0.01;
        let alpha = Vector::from_vec(vec![1.0, -0.5, 0.3, 2.0, -1.0, 0.7]);
        // 10 time constants of the 1/5 s decay.
        let u = InputSignal::constant(&alpha, 200, ts);
        let opts = SimOptions { noise: false, ..SimOptions::default() };
        let sim = simulate_homodyne_with(&sys, Quadrature::Q, &u, 0, None, &opts).unwrap();
        let a_inv = meas.a.clone().try_inverse().unwrap();
        let x_ss = -&a_inv * &meas.b * &alpha;
        let x_end = sim.states.row(199).transpose();
        assert!((x_end - &x_ss).amax() < 1e-3);
        let y_ss = (-&meas.c * &a_inv * &meas.b + &meas.d) * &alpha;
        let y_end = sim.record.ydot.row(199).transpose();
        assert!((y_end - y_ss).amax() < 1e-3);
    }

    #[test]
    fn record_is_bit_identical_for_same_seed() {
        let sys = build_cavity(&CavityParams::reference()).unwrap();
        let u = generate_prbs(6, 0.01, 2.0, 50.0, 5).unwrap();
        let a = simulate_homodyne(&sys, Quadrature::P, &u, 9, None).unwrap();
        let b = simulate_homodyne(&sys, Quadrature::P, &u, 9, None).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn doubling_drive_doubles_noise_free_output() {
        let sys = build_cavity(&CavityParams::new(4.0, vec![1.0, 2.0])).unwrap();
        let u1 = generate_prbs(4, 0.01, 3.0, 5.0, 1).unwrap();
        let mut u2 = u1.clone();
        u2.samples *= 2.0;
        let opts = SimOptions { noise: false, ..SimOptions::default() };
        let y1 = simulate_homodyne_with(&sys, Quadrature::Q, &u1, 0, None, &opts).unwrap().record.ydot;
        let y2 = simulate_homodyne_with(&sys, Quadrature::Q, &u2, 0, None, &opts).unwrap().record.ydot;
        assert!((y2 - y1 * 2.0).amax() < 1e-12);
    }

    #[test]
    fn euler_substeps_approach_zoh() {
        let sys = build_cavity(&CavityParams::reference()).unwrap();
        let ts = 0.01;
        let (pz, gz) = Discretization::Zoh.transition(&sys.a, &sys.b, ts);
        let err = |s| {
            let (pe, ge) = Discretization::Euler.transition_substeps(&sys.a, &sys.b, ts, s);
            (pe - &pz).amax() + (ge - &gz).amax()
        };
        assert!(err(100) < err(10) && err(10) < err(1));
        assert!(err(1000) < 2e-3 * err(1));
    }

    #[test]
    fn split_boundaries() {
        let sys = build_cavity(&CavityParams::reference()).unwrap();
        let u = generate_prbs(6, 0.01, 80.0, 1.0, 1).unwrap();
        let rec = simulate_homodyne(&sys, Quadrature::Q, &u, 1, None).unwrap();
        assert_eq!(rec.len(), 8000);
        let (est, val) = split_record(&rec, 20.0, 30.0, 30.0).unwrap();
        assert_eq!(est.len(), 3000);
        assert_eq!(val.len(), 3000);
        assert_eq!(est.ydot.row(0), rec.ydot.row(2000));
        assert_eq!(val.ydot.row(0), rec.ydot.row(5000));
        assert_eq!(val.ydot.row(2999), rec.ydot.row(7999));
        assert!((val.t0 - 50.0).abs() < 1e-9);

        assert!(matches!(split_record(&rec, 0.0, 80.0, 0.0), Err(Error::InsufficientData(_))));
        assert!(matches!(split_record(&rec, 30.0, 30.0, 30.0), Err(Error::InsufficientData(_))));
    }
}
