//! Matrix equation solvers used throughout: Lyapunov, filter Riccati,
//! matrix exponential and logarithm, and the canonical skew factorization.

use qsysid::numerics::{expm, logm, mat_from_rows, skew_canonical_factor, solve_filter_are, solve_lyapunov, symplectic};

fn main() -> qsysid::Result<()> {
    let a = mat_from_rows(&[&[-1.0, 3.0, 0.0, 0.0], &[-3.0, -1.0, 0.5, 0.0], &[0.0, 0.0, -2.0, 1.0], &[0.0, 0.0, -1.0, -2.0]]);
    let b = mat_from_rows(&[&[1.0, 0.0], &[0.0, 1.0], &[0.5, 0.0], &[0.0, 0.5]]);

    let w = &b * symplectic(1) * b.transpose();
    let z = solve_lyapunov(&a, &w)?;
    println!("skew Lyapunov solution Z = {:.4}residual {:.1e}, skewness {:.1e}", z, (&a * &z + &z * a.transpose() + &w).amax(), (&z + z.transpose()).amax());

    let v = skew_canonical_factor(&z)?;
    println!("Z = V J Vᵀ defect: {:.1e}", (&v * symplectic(2) * v.transpose() - &z).amax());

    let c = mat_from_rows(&[&[1.0, 0.0, 0.0, 0.0]]);
    let d = mat_from_rows(&[&[1.0, 0.0]]);
    let q = solve_filter_are(&a, &b, &c, &d)?;
    println!("filter Riccati solution Q = {q:.4}");

    let phi = expm(&(&a * 0.01));
    println!("logm(expm(0.01 A)) / 0.01 recovers A to {:.1e}", (logm(&phi)? / 0.01 - &a).amax());
    Ok(())
}
