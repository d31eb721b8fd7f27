#![allow(dead_code)]

use qsysid::model::{build_cavity, CavityParams, Quadrature, StateSpace};
use qsysid::numerics::{j2, Mat};
use qsysid::projection::{complete, Completion, ProjectionTarget};
use rand::Rng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn cavity_q() -> StateSpace {
    build_cavity(&CavityParams::reference()).unwrap().measured(Quadrature::Q).unwrap()
}

pub fn target_from(sys: &StateSpace) -> ProjectionTarget {
    ProjectionTarget::new(sys.a.clone(), sys.b.clone(), sys.c.clone(), sys.d.clone(), sys.quadrature).unwrap()
}

pub fn gaussian(rows: usize, cols: usize, sigma: f64, rng: &mut ChaCha20Rng) -> Mat {
    Mat::from_fn(rows, cols, |_, _| { let v: f64 = StandardNormal.sample(rng); sigma * v })
}

/// q-quadrature homodyne selector for `m` channels.
pub fn d_meas_q(m: usize) -> Mat {
    Mat::from_fn(m, 2 * m, |i, j| if j == 2 * i { 1.0 } else { 0.0 })
}

/// Random exactly realizable one-mode system with `m` channels: damped
/// rotation drift, Gaussian input map, `Z` and `C̄` from completion.
pub fn random_realizable(m: usize, rng: &mut ChaCha20Rng) -> Completion {
    loop {
        let a = -Mat::identity(2, 2) * rng.random_range(0.5..1.0) + j2() * rng.random_range(0.2..1.0);
        let b = gaussian(2, 2 * m, 0.5, rng);
        if let Ok(c) = complete(&a, &b, &d_meas_q(m)) {
            return c;
        }
    }
}

/// Realizable system with every entry of `(Ā, B̄, C̄)` perturbed by N(0, σ²).
pub fn perturbed_target(m: usize, sigma: f64, rng: &mut ChaCha20Rng) -> (Completion, ProjectionTarget) {
    let truth = random_realizable(m, rng);
    let a = &truth.a + gaussian(2, 2, sigma, rng);
    let b = &truth.b + gaussian(2, 2 * m, sigma, rng);
    let c = &truth.c + gaussian(m, 2, sigma, rng);
    let t = ProjectionTarget::new(a, b, c, d_meas_q(m), Some(Quadrature::Q)).unwrap();
    (truth, t)
}
