//! Calibrate the network source term on the linear heat scenario and write
//! the training artifacts (CSV log, best parameters, SVG plots).
//!
//! ```sh
//! cargo run --release --example train_heat
//! ```

use nnpde::experiment::{run_training, ExperimentConfig, Scenario};
use std::path::PathBuf;

fn main() -> Result<(), nnpde::Error> {
    let config = ExperimentConfig {
        scenario: Scenario::Heat,
        n: 100,
        epochs: 500,
        output_dir: PathBuf::from("target/example-out/train_heat"),
        ..ExperimentConfig::default()
    };
    let out = run_training(&config, None)?;
    let first = &out.records[0];
    let last = out.records.last().unwrap();
    println!(
        "heat scenario, N = {}, {} epochs on the default {}x{}x{} grid",
        config.n, config.epochs, config.grid.x_count, config.grid.y_count, config.grid.t_count
    );
    println!("relative RMSE {:.4e} -> {:.4e} (best {:.4e})", first.rmse_rel, last.rmse_rel, out.best_rmse);
    println!("adjoint norm monitor max {:.4e}", out.monitor.uhat_linft_l2_max);
    for w in &out.monitor.warnings {
        println!("warning: {w}");
    }
    println!("artifacts in {}", out.run_dir.display());
    Ok(())
}
