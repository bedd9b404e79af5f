//! Run the assumption validators on both scenarios and on a deliberately
//! broken initialization law.
//!
//! ```sh
//! cargo run --release --example validate_assumptions
//! ```

use nnpde::experiment::{build_experiment, validate_assumptions, ExperimentConfig, GridConfig, Scenario};
use nnpde::net::InitDistribution;

fn main() -> Result<(), nnpde::Error> {
    for scenario in [Scenario::Heat, Scenario::AllenCahn] {
        let config = ExperimentConfig {
            scenario,
            grid: GridConfig {
                t_count: 9,
                x_count: 9,
                y_count: 9,
            },
            ..ExperimentConfig::default()
        };
        let built = build_experiment(&config)?;
        let report = validate_assumptions(&built.problem, &built.grid, config.activation, Some(&config.dist()));
        println!("--- {scenario:?}");
        print!("{}", report.render());
        println!();
    }

    println!("--- heat with a non-mean-zero output-weight law");
    let config = ExperimentConfig {
        grid: GridConfig {
            t_count: 9,
            x_count: 9,
            y_count: 9,
        },
        ..ExperimentConfig::default()
    };
    let built = build_experiment(&config)?;
    let bad = InitDistribution {
        c_lo: 0.0,
        c_hi: 1.0,
        seed: 1,
    };
    let report = validate_assumptions(&built.problem, &built.grid, config.activation, Some(&bad));
    print!("{}", report.render());
    assert!(report.has_failure());
    Ok(())
}
