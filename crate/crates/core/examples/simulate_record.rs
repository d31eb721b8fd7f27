//! Drive the cavity with a PRBS input, record the q-quadrature homodyne
//! output and split it into estimation and validation slices.

use qsysid::io::{read_record, write_record};
use qsysid::model::{build_cavity, CavityParams, Quadrature};
use qsysid::simulate::{generate_prbs, simulate_homodyne, split_record};

fn main() -> qsysid::Result<()> {
    let sys = build_cavity(&CavityParams::reference())?;
    let ts: f64 = 0.01;
    let omega = 100.0 / ts.sqrt();
    let input = generate_prbs(sys.m() * 2, ts, 80.0, omega, 1)?;
    let rec = simulate_homodyne(&sys, Quadrature::Q, &input, 1, None)?;
    println!("{} samples, {} output channels, Ts = {}", rec.len(), rec.outputs(), rec.ts);

    let (est, val) = split_record(&rec, 20.0, 30.0, 30.0)?;
    println!("estimation slice: {} samples from t = {:.2}", est.len(), est.t0);
    println!("validation slice: {} samples from t = {:.2}", val.len(), val.t0);

    let dir = std::env::temp_dir().join("qsysid-example");
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("record.csv");
    write_record(&path, &rec, "example")?;
    let (back, meta) = read_record(&path)?;
    println!("wrote {} ({} samples, seed {})", path.display(), back.len(), meta.seed);
    Ok(())
}
