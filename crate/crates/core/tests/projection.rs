mod common;

use common::*;
use proptest::prelude::*;
use qsysid::model::markov_parameters;
use qsysid::numerics::{j2, mat_from_rows, symplectic, Mat};
use qsysid::projection::lifted::{hurwitz_certificate, initial_point};
use qsysid::projection::*;
use qsysid::Error;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

fn truth_vars(prob: &LiftedProblem) -> LiftedVars {
    let t = &prob.target;
    LiftedVars { a: t.a.clone(), b: t.b.clone(), c: t.c.clone(), z: j2(), p: init_certificate(&t.a).unwrap() }
}

#[test]
fn loss_examples() {
    let t = target_from(&cavity_q());
    assert_eq!(loss(&t.a, &t.b, &t.c, &t).unwrap(), 0.0);
    let a = &t.a + Mat::identity(2, 2);
    assert!((loss(&a, &t.b, &t.c, &t).unwrap() - 1.0).abs() < 1e-15);
    assert!(matches!(loss(&Mat::zeros(3, 3), &t.b, &t.c, &t), Err(Error::DimensionMismatch(_))));
}

#[test]
fn lifted_dimensions() {
    let prob = build_lifted(&target_from(&cavity_q()), 0.0, 1e-3).unwrap();
    assert_eq!((prob.dim1(), prob.dim2()), (19, 10));
    let widths: Vec<usize> = [Block1::I, Block1::A, Block1::At, Block1::Bt, Block1::C, Block1::Z, Block1::P]
        .iter()
        .map(|b| prob.block1(*b).len())
        .collect();
    assert_eq!(widths, vec![2, 2, 2, 6, 3, 2, 2]);
    let widths2: Vec<usize> = [Block2::I, Block2::B, Block2::BJ].iter().map(|b| prob.block2(*b).len()).collect();
    assert_eq!(widths2, vec![6, 2, 2]);
}

#[test]
fn epsilon_must_be_positive() {
    let t = target_from(&cavity_q());
    assert!(matches!(build_lifted(&t, 1.0, 0.0), Err(Error::InvalidParameter(_))));
    assert!(matches!(build_lifted(&t, 1.0, -1e-3), Err(Error::InvalidParameter(_))));
}

#[test]
fn unstable_target_rejected() {
    let mut t = target_from(&cavity_q());
    t.a = -&t.a;
    assert!(matches!(build_lifted(&t, 1.0, 1e-3), Err(Error::NotHurwitz { .. })));
}

#[test]
fn truth_is_a_witness() {
    let prob = build_lifted(&target_from(&cavity_q()), 0.0, 1e-3).unwrap();
    let pt = prob.lift(&truth_vars(&prob));
    assert!(prob.constraint_residual(&pt) <= 1e-10, "{}", prob.constraint_residual(&pt));
    assert!(prob.lifted_loss(&pt).abs() < 1e-10);
    let r1 = pt.g1.clone().symmetric_eigenvalues();
    assert_eq!(r1.iter().filter(|v| v.abs() > 1e-8).count(), 2);
}

#[test]
fn truth_warm_start_is_immediately_feasible() {
    let prob = build_lifted(&target_from(&cavity_q()), 0.0, 1e-3).unwrap();
    let init = initial_point(&prob).unwrap();
    match solve_rank_feasibility(&prob, &init, &FeasibilityOptions::default()).unwrap() {
        Feasibility::Feasible(p) => {
            assert!(p.iterations <= 2);
            assert!(p.residual <= 1e-10);
            assert!(p.loss <= 1e-20);
        }
        Feasibility::Infeasible { .. } => panic!("truth should be feasible"),
    }
}

#[test]
fn unrealizable_target_infeasible_at_zero() {
    let mut t = target_from(&cavity_q());
    t.a[(0, 0)] += 0.5;
    let red = reduced_projection(&t, None, &ReducedOptions::default()).unwrap();
    assert!(red.loss > 1e-6);
    let prob = build_lifted(&t, 0.0, 1e-3).unwrap();
    let init = initial_point(&prob).unwrap();
    let opts = FeasibilityOptions { max_iter: 2000, ..Default::default() };
    match solve_rank_feasibility(&prob, &init, &opts) {
        Ok(Feasibility::Infeasible { .. }) | Err(Error::NumericalStall { .. }) => {}
        Ok(Feasibility::Feasible(p)) => panic!("feasible with loss {}", p.loss),
        Err(e) => panic!("{e}"),
    }
}

#[test]
fn lifted_agrees_with_reduced_on_perturbed_cavity() {
    let mut t = target_from(&cavity_q());
    t.a[(0, 0)] += 0.5;
    let red = reduced_projection(&t, None, &ReducedOptions::default()).unwrap();
    let prob = build_lifted(&t, 1.5 * red.loss, 1e-3).unwrap();
    let init = initial_point(&prob).unwrap();
    match solve_rank_feasibility(&prob, &init, &FeasibilityOptions::default()).unwrap() {
        Feasibility::Feasible(p) => {
            assert!(p.loss <= 1.5 * red.loss * (1.0 + 1e-9));
            assert!(p.residual <= 1e-10, "{}", p.residual);
        }
        Feasibility::Infeasible { .. } => panic!("lifted solver failed at 1.5x the reduced loss"),
    }
}

#[test]
fn reduced_recovers_realizable_target() {
    let mut rng = ChaCha20Rng::seed_from_u64(3);
    for m in 1..=3 {
        let truth = random_realizable(m, &mut rng);
        let t = ProjectionTarget::new(truth.a.clone(), truth.b.clone(), truth.c.clone(), d_meas_q(m), None).unwrap();
        let t = ProjectionTarget { quadrature: Some(qsysid::model::Quadrature::Q), ..t };
        let res = reduced_projection(&t, None, &ReducedOptions::default()).unwrap();
        assert!(res.loss < 1e-20);
        assert!((&res.realization.sys.a - &truth.a).norm() < 1e-6);
        assert!((&res.realization.sys.b - &truth.b).norm() < 1e-6);
        assert!((&res.realization.sys.c - &truth.c).norm() < 1e-6);
    }
}

#[test]
fn reduced_small_perturbation() {
    let mut t = target_from(&cavity_q());
    t.a[(0, 0)] += 0.01;
    let res = reduced_projection(&t, None, &ReducedOptions::default()).unwrap();
    assert!(res.loss <= 1e-4);
    assert!(res.residuals.0 <= 1e-10 && res.residuals.1 <= 1e-10, "{:?}", res.residuals);
    let z = &res.realization.z;
    assert!((z + z.transpose()).norm() <= 1e-10);
}

#[test]
fn zero_input_map_gives_singular_z() {
    let t = target_from(&cavity_q());
    assert!(matches!(complete(&t.a, &Mat::zeros(2, 6), &t.d_meas), Err(Error::SingularZ { .. })));
}

#[test]
fn gradient_matches_finite_differences() {
    let mut rng = ChaCha20Rng::seed_from_u64(10);
    let h = 1e-6;
    for k in 0..20 {
        let (_, t) = perturbed_target(1 + k % 3, 0.1, &mut rng);
        let a = &t.a + gaussian(2, 2, 0.05, &mut rng);
        let b = &t.b + gaussian(2, t.b.ncols(), 0.05, &mut rng);
        let (_, ga, gb) = reduced_gradient(&a, &b, &t).unwrap();
        let mut num = Vec::new();
        let mut ana = Vec::new();
        for i in 0..a.len() {
            let (mut ap, mut am) = (a.clone(), a.clone());
            ap[i] += h;
            am[i] -= h;
            num.push((reduced_loss(&ap, &b, &t).unwrap() - reduced_loss(&am, &b, &t).unwrap()) / (2.0 * h));
            ana.push(ga[i]);
        }
        for i in 0..b.len() {
            let (mut bp, mut bm) = (b.clone(), b.clone());
            bp[i] += h;
            bm[i] -= h;
            num.push((reduced_loss(&a, &bp, &t).unwrap() - reduced_loss(&a, &bm, &t).unwrap()) / (2.0 * h));
            ana.push(gb[i]);
        }
        let diff: f64 = num.iter().zip(&ana).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let size: f64 = ana.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!(diff <= 1e-4 * size.max(1e-12), "point {k}: {diff:e} vs {size:e}");
    }
}

#[test]
fn init_certificate_examples() {
    let p = init_certificate(&(-Mat::identity(2, 2))).unwrap();
    assert!((p - Mat::identity(2, 2) * 0.5).norm() < 1e-14);
    assert!(init_certificate(&mat_from_rows(&[&[1.0, 0.0], &[0.0, -1.0]])).is_err());
}

#[test]
fn hurwitz_certificate_bounds() {
    let a = mat_from_rows(&[&[-5.0, 20.0], &[-20.0, -5.0]]);
    let eps = 1e-3;
    let p = hurwitz_certificate(&a, eps).unwrap();
    assert!(p.clone().symmetric_eigenvalues().min() >= eps * (1.0 - 1e-12));
    let lmi = -(p.clone() * &a + a.transpose() * &p) - &p * eps;
    assert!(lmi.symmetric_eigenvalues().min() >= -1e-12);
    assert!(hurwitz_certificate(&(Mat::identity(2, 2) * -1e-4), eps).is_none());
}

#[test]
fn truth_gain_is_zero() {
    let s = cavity_q();
    let (q, l) = recover_gain(&s.a, &s.b, &s.c, &s.d).unwrap();
    assert!((q - Mat::identity(2, 2)).amax() < 1e-8);
    assert!(l.amax() < 1e-8);
}

#[test]
fn canonical_form_keeps_transfer_function() {
    let mut rng = ChaCha20Rng::seed_from_u64(5);
    let (_, t) = perturbed_target(2, 0.1, &mut rng);
    let res = reduced_projection(&t, None, &ReducedOptions::default()).unwrap();
    let can = to_canonical(&res.realization).unwrap();
    assert!((&can.z - symplectic(1)).norm() < 1e-10);
    let before = markov_parameters(&res.realization.sys.a, &res.realization.sys.b, &res.realization.sys.c, 6);
    let after = markov_parameters(&can.sys.a, &can.sys.b, &can.sys.c, 6);
    for (x, y) in before.iter().zip(&after) {
        assert!((x - y).norm() <= 1e-9 * (1.0 + x.norm()));
    }
    let (r1, r2) = can.residuals().unwrap();
    assert!(r1 < 1e-10 && r2 < 1e-10);
}

#[test]
fn bisection_on_realizable_target() {
    let mut rng = ChaCha20Rng::seed_from_u64(8);
    let (truth, _) = perturbed_target(2, 0.0, &mut rng);
    let t = ProjectionTarget::new(truth.a, truth.b, truth.c, d_meas_q(2), Some(qsysid::model::Quadrature::Q)).unwrap();
    let res = bisection_identify(&t, &BisectionOptions::default()).unwrap();
    assert!(res.loss <= 1e-4);
    let feasible: Vec<f64> = res.gamma_trace.iter().filter(|s| s.feasible).map(|s| s.gamma).collect();
    assert!(feasible.windows(2).all(|w| w[1] < w[0]));
    assert_eq!(res.solver, Solver::Lifted);
}

#[test]
fn bisection_improves_on_its_start() {
    let mut t = target_from(&cavity_q());
    t.a[(0, 0)] += 0.5;
    t.c[(1, 0)] -= 0.3;
    let res = bisection_identify(&t, &BisectionOptions::default()).unwrap();
    let red = reduced_projection(&t, None, &ReducedOptions::default()).unwrap();
    assert!(res.gamma_final <= 1.5 * red.loss, "{} vs {}", res.gamma_final, red.loss);
    assert!(res.loss >= red.loss * (1.0 - 1e-6));
    assert!(res.residuals.0 < 1e-8 && res.residuals.1 < 1e-8);
}

#[test]
fn bisection_rejects_nonpositive_gamma0() {
    let t = target_from(&cavity_q());
    let opts = BisectionOptions { gamma0: Some(0.0), ..Default::default() };
    assert!(matches!(bisection_identify(&t, &opts), Err(Error::InvalidParameter(_))));
}

#[test]
fn conditioning_round_trip() {
    let mut t = target_from(&cavity_q());
    t.b *= 0.01;
    t.c *= 100.0;
    let res = project(&t, Conditioning::Balanced, Solver::Reduced, &BisectionOptions::default()).unwrap();
    let expected = (t.c.norm() / t.b.norm()).sqrt();
    assert!((res.scale - expected).abs() < 1e-9 * expected);
    assert!(expected > 50.0);
    assert!(res.residuals.0 < 1e-8 && res.residuals.1 < 1e-8);
    let direct = reduced_loss(&res.realization.sys.a, &res.realization.sys.b, &t).unwrap();
    assert!(direct.is_finite());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn lift_of_realizable_point_satisfies_constraints(seed in 0u64..10_000, m in 1usize..=3) {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let truth = random_realizable(m, &mut rng);
        let t = ProjectionTarget::new(truth.a.clone(), truth.b.clone(), truth.c.clone(), d_meas_q(m), Some(qsysid::model::Quadrature::Q)).unwrap();
        let prob = build_lifted(&t, 0.0, 1e-3).unwrap();
        let p = hurwitz_certificate(&truth.a, 1e-3).unwrap();
        let pt = prob.lift(&LiftedVars { a: truth.a.clone(), b: truth.b.clone(), c: truth.c.clone(), z: truth.z.clone(), p });
        prop_assert!(prob.constraint_residual(&pt) < 1e-10);
        let back = prob.recover(&pt).unwrap();
        prop_assert!((back.a - &truth.a).norm() < 1e-8);
    }

    #[test]
    fn reduced_never_worse_than_target_completion(seed in 0u64..10_000, m in 1usize..=3) {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let (_, t) = perturbed_target(m, 0.1, &mut rng);
        let res = reduced_projection(&t, None, &ReducedOptions::default()).unwrap();
        if let Ok(start) = reduced_loss(&t.a, &t.b, &t) {
            prop_assert!(res.loss <= start * (1.0 + 1e-12));
        }
        let (r1, r2) = res.residuals;
        prop_assert!(r1 < 1e-9 && r2 < 1e-9);
    }
}
