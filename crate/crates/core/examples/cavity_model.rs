//! Build the three-port optical cavity, check that it is physically
//! realizable and that its steady-state Kalman filter is trivial.

use qsysid::model::{build_cavity, realizability_residual, CavityParams, Quadrature};
use qsysid::numerics::{j2, kalman_gain, solve_filter_are};

fn main() -> qsysid::Result<()> {
    let params = CavityParams::new(10.0, vec![5.0, 3.0, 2.0]);
    let sys = build_cavity(&params)?;
    println!("A = {:.4}B = {:.4}C = {:.4}", sys.a, sys.b, sys.c);

    let (r1, r2) = realizability_residual(&sys.a, &sys.b, &sys.c, &sys.d, &j2())?;
    println!("realizability residuals with Z = J: {r1:.1e}, {r2:.1e}");

    for which in [Quadrature::Q, Quadrature::P] {
        let m = sys.measured(which)?;
        let q = solve_filter_are(&m.a, &m.b, &m.c, &m.d)?;
        let l = kalman_gain(&q, &m.b, &m.c, &m.d)?;
        println!("{which} quadrature: C is {}x{}, Q = {:.6}max |L| = {:.1e}", m.c.nrows(), m.c.ncols(), q, l.amax());
    }
    Ok(())
}
