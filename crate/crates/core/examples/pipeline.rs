//! Run the configuration-driven experiment programmatically and print the
//! resulting table: two amplitudes, three seeds, n = 1, reduced solver.

use qsysid::model::Quadrature;
use qsysid::pipeline::{run_pipeline, PipelineConfig, SolverChoice};

fn main() -> qsysid::Result<()> {
    let out = std::env::temp_dir().join("qsysid-pipeline-example");
    let cfg = PipelineConfig {
        quadratures: vec![Quadrature::Q],
        omegas: vec![10.0, 100.0],
        orders: vec![1],
        seeds: vec![1, 2, 3],
        solver: SolverChoice::Reduced,
        out: out.clone(),
        ..Default::default()
    };
    let report = run_pipeline(&cfg)?;
    println!("wrote {} files under {}", report.written.len(), out.display());
    for f in &report.failures {
        println!("failed: {} ({})", f.item, f.message);
    }
    print!("{}", std::fs::read_to_string(out.join("table_q_reduced.md"))?);
    Ok(())
}
