//! Project a classical estimate onto the physically realizable set with the
//! reduced (gradient) solver and bring it to canonical coordinates.

use qsysid::model::{build_cavity, CavityParams, Quadrature};
use qsysid::numerics::normalized_det;
use qsysid::projection::{project, to_canonical, BisectionOptions, Conditioning, ProjectionTarget, Solver};
use qsysid::simulate::{generate_prbs, simulate_homodyne, split_record};
use qsysid::subspace::{n4sid_estimate, HankelConfig};

fn main() -> qsysid::Result<()> {
    let sys = build_cavity(&CavityParams::reference())?;
    let meas = sys.measured(Quadrature::Q)?;
    let ts: f64 = 0.01;
    let input = generate_prbs(6, ts, 80.0, 100.0 / ts.sqrt(), 1)?;
    let rec = simulate_homodyne(&sys, Quadrature::Q, &input, 1, None)?;
    let (est, _) = split_record(&rec, 20.0, 30.0, 30.0)?;
    let e = n4sid_estimate(&est, 1, &meas.d, &HankelConfig::default())?;

    let target = ProjectionTarget::from(&e);
    let res = project(&target, Conditioning::Balanced, Solver::Reduced, &BisectionOptions::default())?;
    println!("loss {:.3e} after {} iterations (conditioning scale {:.2})", res.loss, res.iterations, res.scale);
    println!("residuals {:.1e} {:.1e}, normalized det Z {:.3}", res.residuals.0, res.residuals.1, normalized_det(&res.realization.z));

    let can = to_canonical(&res.realization)?;
    println!("canonical A = {:.4}Z = {:.4}L = {:.4}", can.sys.a, can.z, can.l);
    Ok(())
}
