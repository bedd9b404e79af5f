//! Assemble the initialization kernel by Monte Carlo, apply the integral
//! operator, and inspect the spectrum: every eigenvalue is positive, the
//! largest is bounded by the kernel norm, and the tail decays towards zero
//! with no positive floor.
//!
//! ```sh
//! cargo run --release --example kernel_spectrum
//! ```

use nnpde::grid::{inner_product_l2, QuadratureWeights, SpaceTimeGrid};
use nnpde::kernel::{assemble_kernel_monte_carlo, DEFAULT_KERNEL_BUDGET};
use nnpde::net::{Activation, InitDistribution};

fn main() -> Result<(), nnpde::Error> {
    let grid = SpaceTimeGrid::unit_experiment(6, 6, 6)?;
    let weights = QuadratureWeights::new(&grid);
    let dist = InitDistribution::standard(777);
    let kernel = assemble_kernel_monte_carlo(&dist, Activation::Tanh, 10_000, &grid, DEFAULT_KERNEL_BUDGET)?;

    println!(
        "monte carlo kernel on {} nodes, symmetric to {:.1e}",
        grid.node_count(),
        kernel.max_asymmetry()
    );

    let spectrum = kernel.spectrum(grid.node_count())?;
    let lambda_max = spectrum[0];
    let lambda_min = *spectrum.last().unwrap();
    println!("largest eigenvalue  {lambda_max:.6e}");
    println!("smallest eigenvalue {lambda_min:.6e}");
    println!("weighted L2 norm    {:.6e}", kernel.weighted_l2_norm());
    assert!(lambda_min >= -1e-10 * lambda_max, "operator must be positive semi-definite");
    assert!(lambda_max <= kernel.weighted_l2_norm() * (1.0 + 1e-10));

    // eigenvalue decay: each decade of the ordered spectrum keeps shrinking
    print!("decay of the ordered spectrum:");
    for k in [0, 4, 16, 64, spectrum.len() - 1] {
        print!("  lambda_{k} = {:.2e}", spectrum[k]);
    }
    println!();

    // the quadratic form behind the loss-decay identity is nonnegative
    let u = nnpde::grid::sample_function(&grid, |t, x, y| (t - x).sin() + y)?;
    let q = inner_product_l2(&weights, &u, &kernel.apply(&u)?)?;
    println!("quadratic form on a sample field: {q:.6e} (nonnegative)");
    assert!(q >= 0.0);
    Ok(())
}
