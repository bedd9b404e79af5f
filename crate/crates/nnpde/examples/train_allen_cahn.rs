//! Calibrate the network source term on the Allen-Cahn scenario, where the
//! cubic reaction makes the forward problem genuinely nonlinear.
//!
//! ```sh
//! cargo run --release --example train_allen_cahn
//! ```

use nnpde::experiment::{run_training, ExperimentConfig, Scenario};
use std::path::PathBuf;

fn main() -> Result<(), nnpde::Error> {
    let config = ExperimentConfig {
        scenario: Scenario::AllenCahn,
        n: 100,
        epochs: 500,
        output_dir: PathBuf::from("target/example-out/train_allen_cahn"),
        ..ExperimentConfig::default()
    };
    let out = run_training(&config, None)?;
    let last = out.records.last().unwrap();
    println!(
        "allen-cahn scenario, N = {}, {} epochs: relative RMSE {:.4e} -> {:.4e} (best {:.4e})",
        config.n,
        config.epochs,
        out.records[0].rmse_rel,
        last.rmse_rel,
        out.best_rmse
    );
    println!("artifacts in {}", out.run_dir.display());
    Ok(())
}
