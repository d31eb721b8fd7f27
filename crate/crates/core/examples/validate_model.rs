//! Validate an identified model on held-out data: one-step prediction fit,
//! final prediction error and residual whiteness.

use qsysid::model::{build_cavity, CavityParams, Quadrature};
use qsysid::projection::{project, to_canonical, BisectionOptions, Conditioning, ProjectionTarget, Solver};
use qsysid::simulate::{generate_prbs, simulate_homodyne, split_record};
use qsysid::subspace::{n4sid_estimate, HankelConfig};
use qsysid::validation::{autocorr, cross_corr, fit_percent, fpe, fraction_inside, predict, FitReference, PredictOptions, PredictorModel};

fn main() -> qsysid::Result<()> {
    let sys = build_cavity(&CavityParams::reference())?;
    let meas = sys.measured(Quadrature::Q)?;
    let ts: f64 = 0.01;
    let input = generate_prbs(6, ts, 80.0, 100.0 / ts.sqrt(), 1)?;
    let rec = simulate_homodyne(&sys, Quadrature::Q, &input, 1, None)?;
    let (est, val) = split_record(&rec, 20.0, 30.0, 30.0)?;
    let target = ProjectionTarget::from(&n4sid_estimate(&est, 1, &meas.d, &HankelConfig::default())?);
    let res = project(&target, Conditioning::Balanced, Solver::Reduced, &BisectionOptions::default())?;
    let identified = PredictorModel::from(&to_canonical(&res.realization)?);
    let truth = PredictorModel::new(meas.a.clone(), meas.b.clone(), meas.c.clone(), meas.d.clone(), qsysid::numerics::Mat::zeros(2, 3))?;

    for (name, model) in [("true model", &truth), ("identified", &identified)] {
        let r = predict(model, &val, &PredictOptions::default())?;
        let fit = fit_percent(&r, &val, &model.d, FitReference::FeedthroughRemoved)?;
        let ac = autocorr(&r, 50)?;
        let cc = cross_corr(&r, &val.inputs, 50)?;
        let white: Vec<f64> = ac.values.iter().map(|v| 100.0 * fraction_inside(&v[1..], ac.bound)).collect();
        let cross: Vec<f64> = cc.values.iter().map(|l| 100.0 * fraction_inside(l.iter().flatten(), cc.bound)).collect();
        println!("{name}: fit {fit:.1?} %, FPE {:.3e}", fpe(&r)?);
        println!("  autocorrelation lags inside ±{:.4}: {white:.0?} %", ac.bound);
        println!("  input cross-correlation inside: {cross:.0?} %");
    }
    Ok(())
}
