//! Classical subspace identification from a simulated record: relative
//! energy per candidate order and the estimated poles.

use qsysid::model::{build_cavity, CavityParams, Quadrature};
use qsysid::simulate::{generate_prbs, simulate_homodyne, split_record};
use qsysid::subspace::{n4sid_estimate, relative_energy, HankelConfig};

fn main() -> qsysid::Result<()> {
    let sys = build_cavity(&CavityParams::reference())?;
    let meas = sys.measured(Quadrature::Q)?;
    let ts: f64 = 0.01;
    for omega in [10.0, 100.0] {
        let input = generate_prbs(6, ts, 80.0, omega / ts.sqrt(), 1)?;
        let rec = simulate_homodyne(&sys, Quadrature::Q, &input, 1, None)?;
        let (est, _) = split_record(&rec, 20.0, 30.0, 30.0)?;
        let e = n4sid_estimate(&est, 1, &meas.d, &HankelConfig::default())?;
        let energy = relative_energy(&e.sing_values);
        println!("Ω = {omega}/√Ts");
        println!("  relative energy for n = 1..3: {:.2?}", &energy[..3]);
        println!("  poles: {:.3?}", e.a_hat.complex_eigenvalues().as_slice());
        println!("  innovation covariance × Ts: {:.3?}", (e.innov_cov.diagonal() * ts).as_slice());
    }
    Ok(())
}
