//! The discretize-then-optimize contract: the backward sweep is the exact
//! transpose of the linearized forward map, so `<G g, r> = <g, G* r>` holds
//! to round-off for arbitrary fields.
//!
//! ```sh
//! cargo run --release --example adjoint_transpose
//! ```

use nnpde::adjoint::solve_adjoint;
use nnpde::forward::PdeSolver;
use nnpde::grid::{inner_product_l2, sample_function, Field, QuadratureWeights, SpaceTimeGrid};
use nnpde::problem::{Nonlinearity, PdeProblem};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::sync::Arc;

fn main() -> Result<(), nnpde::Error> {
    let grid = SpaceTimeGrid::unit_experiment(9, 9, 9)?;
    let weights = QuadratureWeights::new(&grid);
    let problem = PdeProblem::diffusion_only(
        0.01,
        Nonlinearity::allen_cahn(),
        Arc::new(|x: f64, y: f64| {
            0.2 * (4.0 * std::f64::consts::PI * x).sin() * (2.0 * std::f64::consts::PI * y).sin()
        }),
    );
    let g0 = sample_function(&grid, |t, x, y| (x + 2.0 * y - t).sin())?;
    let solver = PdeSolver::new(&problem, &grid)?;
    let fwd = solver.solve_forward(&problem, &g0)?;
    let q_u = problem.linearize_at(&fwd.u)?;

    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut random_field = || -> Result<Field, nnpde::Error> {
        Field::from_values(
            &grid,
            (0..grid.node_count()).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )
    };

    println!("  pair        <G g, r>              <g, G* r>             rel diff");
    let mut worst = 0.0f64;
    for pair in 0..10 {
        let g = random_field()?;
        let r = random_field()?;
        let forward = solver.solve_linearized(&q_u, &g)?;
        let back = solve_adjoint(&problem, &fwd, &r)?.u_hat;
        let lhs = inner_product_l2(&weights, &forward, &r)?;
        let rhs = inner_product_l2(&weights, &g, &back)?;
        let rel = (lhs - rhs).abs() / lhs.abs().max(rhs.abs());
        worst = worst.max(rel);
        println!("  {pair:>4}    {lhs:>+.15e}    {rhs:>+.15e}    {rel:.1e}");
    }
    println!("worst relative mismatch {worst:.3e}");
    assert!(worst < 1e-10);
    Ok(())
}
