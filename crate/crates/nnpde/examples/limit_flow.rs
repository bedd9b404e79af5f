//! Integrate the infinite-width training flow on the heat scenario and
//! verify its structural identities numerically: the loss decays
//! monotonically with `dJ/dtau = -alpha Q`, and `Q` itself decays towards
//! zero.
//!
//! ```sh
//! cargo run --release --example limit_flow
//! ```

use nnpde::experiment::{run_limit, ExperimentConfig, GridConfig, LimitConfig, ScheduleConfig};
use nnpde::limit::{check_decay_identity, max_monotonicity_violation};
use nnpde::optim::ScheduleKind;
use std::path::PathBuf;

fn main() -> Result<(), nnpde::Error> {
    let config = ExperimentConfig {
        grid: GridConfig {
            t_count: 9,
            x_count: 9,
            y_count: 9,
        },
        schedule: ScheduleConfig {
            kind: ScheduleKind::Constant,
            base_rate: 1.0,
            ..ScheduleConfig::default()
        },
        limit: LimitConfig {
            dtau: 0.25,
            steps: 400,
            mc_samples: 4_000,
            mc_seed: 777,
        },
        output_dir: PathBuf::from("target/example-out/limit_flow"),
        ..ExperimentConfig::default()
    };
    let out = run_limit(&config)?;
    let history = &out.flow.history;
    let (first, last) = (history.first().unwrap(), history.last().unwrap());
    println!("{} flow steps at dtau = {}", history.len() - 1, config.limit.dtau);
    println!("J: {:.6e} -> {:.6e}", first.j, last.j);
    println!("Q: {:.6e} -> {:.6e} (ratio {:.3e})", first.q, last.q, last.q / first.q);

    let violation = max_monotonicity_violation(history);
    println!("largest single-step loss increase beyond round-off: {violation:.3e}");
    assert!(violation <= 0.0, "loss must be non-increasing");

    let disc = check_decay_identity(history, config.limit.dtau)?;
    println!("loss-decay identity max relative discrepancy: {disc:.3e}");
    assert!(disc < 5e-2);

    println!("history and plot in {}", config.output_dir.display());
    Ok(())
}
