//! Lifted rank-constrained solver: bisection on the loss bound γ, compared
//! with the reduced solver on the same target.

use std::time::Instant;

use qsysid::model::{build_cavity, CavityParams, Quadrature};
use qsysid::projection::{project, BisectionOptions, Conditioning, ProjectionTarget, Solver, ZInit};
use qsysid::simulate::{generate_prbs, simulate_homodyne, split_record};
use qsysid::subspace::{n4sid_estimate, HankelConfig};

fn main() -> qsysid::Result<()> {
    let sys = build_cavity(&CavityParams::reference())?;
    let meas = sys.measured(Quadrature::Q)?;
    let ts: f64 = 0.01;
    let input = generate_prbs(6, ts, 80.0, 10.0 / ts.sqrt(), 1)?;
    let rec = simulate_homodyne(&sys, Quadrature::Q, &input, 1, None)?;
    let (est, _) = split_record(&rec, 20.0, 30.0, 30.0)?;
    let target = ProjectionTarget::from(&n4sid_estimate(&est, 1, &meas.d, &HankelConfig::default())?);

    for z_init in [ZInit::Symplectic, ZInit::Reduced] {
        let t0 = Instant::now();
        let opts = BisectionOptions { z_init, ..Default::default() };
        let res = project(&target, Conditioning::Balanced, Solver::Lifted, &opts)?;
        println!("start {z_init:?}: γ = {:.4e} in {:.1}s", res.gamma_final, t0.elapsed().as_secs_f64());
        for step in &res.gamma_trace {
            println!("  γ {:.4e} {} ({} iterations)", step.gamma, if step.feasible { "feasible" } else { "infeasible" }, step.iterations);
        }
    }
    let red = project(&target, Conditioning::Balanced, Solver::Reduced, &BisectionOptions::default())?;
    println!("reduced solver loss: {:.4e}", red.loss);
    Ok(())
}
