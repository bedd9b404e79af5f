//! Method-of-manufactured-solutions convergence study for the forward
//! solver with the Allen-Cahn nonlinearity: first order in the time step,
//! second order in the spatial spacing.
//!
//! ```sh
//! cargo run --release --example manufactured_convergence
//! ```

use nnpde::forward::solve_forward;
use nnpde::grid::{norm, sample_function, NormKind, QuadratureWeights, SpaceTimeGrid};
use nnpde::problem::{Nonlinearity, PdeProblem};
use std::sync::Arc;

const NU: f64 = 0.01;

fn error_for(grid: &SpaceTimeGrid) -> Result<f64, nnpde::Error> {
    let pi = std::f64::consts::PI;
    let u_ms = move |t: f64, x: f64, y: f64| (-t).exp() * (2.0 * pi * x).sin() * (pi * y).sin();
    let g_ms = move |t: f64, x: f64, y: f64| {
        let u = u_ms(t, x, y);
        let lap = -(5.0 * pi * pi) * u;
        -u - NU * lap - (u * u * u - u)
    };
    let problem = PdeProblem::diffusion_only(
        NU,
        Nonlinearity::allen_cahn(),
        Arc::new(move |x, y| (2.0 * pi * x).sin() * (pi * y).sin()),
    );
    let weights = QuadratureWeights::new(grid);
    let g = sample_function(grid, g_ms)?;
    let sol = solve_forward(&problem, &g, grid)?;
    let exact = sample_function(grid, u_ms)?;
    norm(&weights, &sol.u.sub(&exact)?, NormKind::L2Dt)
}

fn main() -> Result<(), nnpde::Error> {
    // time refinement on a spatially exact manufactured solution
    println!("time refinement (spatial grid fixed, per-axis-quadratic exact solution)");
    let quad_err = |nt: usize| -> Result<f64, nnpde::Error> {
        let grid = SpaceTimeGrid::unit_experiment(nt, 13, 13)?;
        let quadratic = |x: f64, y: f64| x * (0.5 - x) * y * (1.0 - y);
        let u_ms = move |t: f64, x: f64, y: f64| (-t).exp() * quadratic(x, y);
        let g_ms = move |t: f64, x: f64, y: f64| {
            let u = u_ms(t, x, y);
            let lap = (-t).exp() * (-2.0 * y * (1.0 - y) - 2.0 * x * (0.5 - x));
            -u - NU * lap - (u * u * u - u)
        };
        let problem = PdeProblem::diffusion_only(
            NU,
            Nonlinearity::allen_cahn(),
            Arc::new(quadratic),
        );
        let weights = QuadratureWeights::new(&grid);
        let g = sample_function(&grid, g_ms)?;
        let sol = solve_forward(&problem, &g, &grid)?;
        let exact = sample_function(&grid, u_ms)?;
        norm(&weights, &sol.u.sub(&exact)?, NormKind::L2Dt)
    };
    let mut prev: Option<f64> = None;
    for nt in [6, 11, 21, 41] {
        let e = quad_err(nt)?;
        let order = prev.map(|p| (p / e).log2());
        println!(
            "  dt = {:<8.4} error = {e:.4e}  observed order {}",
            1.0 / (nt - 1) as f64,
            order.map(|o| format!("{o:.2}")).unwrap_or_default()
        );
        prev = Some(e);
    }

    println!("space refinement (dt scaled with h^2, trigonometric solution)");
    let mut prev: Option<f64> = None;
    for (ns, nt) in [(9, 11), (17, 41), (33, 161)] {
        let grid = SpaceTimeGrid::unit_experiment(nt, ns, ns)?;
        let e = error_for(&grid)?;
        let order = prev.map(|p| (p / e).log2());
        println!(
            "  h = {:<9.5} error = {e:.4e}  observed order {}",
            0.5 / (ns - 1) as f64,
            order.map(|o| format!("{o:.2}")).unwrap_or_default()
        );
        prev = Some(e);
    }
    Ok(())
}
