//! Desk-scale width sweep: train the same scenario across several neuron
//! counts with a shared seed set and aggregate the best relative RMSE.
//!
//! ```sh
//! cargo run --release --example width_sweep
//! ```

use nnpde::experiment::{run_n_sweep, ExperimentConfig, GridConfig};
use std::path::PathBuf;

fn main() -> Result<(), nnpde::Error> {
    let config = ExperimentConfig {
        grid: GridConfig {
            t_count: 17,
            x_count: 9,
            y_count: 9,
        },
        epochs: 300,
        seeds_for_averaging: 3,
        output_dir: PathBuf::from("target/example-out/width_sweep"),
        ..ExperimentConfig::default()
    };
    let out = run_n_sweep(&config, &[5, 20, 80])?;
    println!("n      mean best rmse    stderr");
    for row in &out.rows {
        println!("{:<6} {:.6e}      {:.2e}", row.n, row.mean_best_rmse, row.stderr);
    }
    for f in &out.failures {
        println!("failed run: {f}");
    }
    println!("table and combined plot in {}", config.output_dir.display());
    Ok(())
}
