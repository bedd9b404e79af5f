//! Verify the adjoint gradient against central finite differences of the
//! discrete loss, parameter by parameter, on both reference scenarios.
//!
//! ```sh
//! cargo run --release --example gradient_check
//! ```

use nnpde::experiment::{gradient_check, ExperimentConfig, GridConfig, Scenario};

fn main() -> Result<(), nnpde::Error> {
    for scenario in [Scenario::Heat, Scenario::AllenCahn] {
        let config = ExperimentConfig {
            scenario,
            grid: GridConfig {
                t_count: 7,
                x_count: 7,
                y_count: 7,
            },
            n: 3,
            ..ExperimentConfig::default()
        };
        let report = gradient_check(&config)?;
        println!("{scenario:?}: {} parameters", report.rows.len());
        println!("  param    adjoint            finite difference  rel error");
        for row in &report.rows {
            println!(
                "  {:>5}    {:>+.9e}    {:>+.9e}    {:.2e}",
                row.param, row.adjoint, row.finite_difference, row.rel_error
            );
        }
        println!("  max relative error {:.3e}\n", report.max_rel_error);
        assert!(report.max_rel_error < 1e-6);
    }
    println!("adjoint gradient matches finite differences on both scenarios");
    Ok(())
}
