//! Backward adjoint solves, derived as the exact transpose of the discrete
//! forward stepping (discretize-then-optimize) rather than as an independent
//! discretization of the continuous backward PDE.
//!
//! Weight flow (kept single to avoid the classic double-weighting bug):
//!
//! ```text
//! residual rho ──(x quadrature weight W, once)──> backward sweep
//!     lambda^m = (M^m)^{-T} [ W^m rho^m + (I + dt q_u^m) lambda^{m+1} ]
//! u_hat^m = dt lambda^m / W^m        (quadrature-normalized cotangent)
//! gradient pairing: sum_nodes W u_hat dg  ==  exact d(discrete J)/d(theta)
//! ```
//!
//! With this normalization `u_hat` approximates the continuous adjoint and
//! plain quadrature pairings against it reproduce the gradient of the
//! discrete loss to round-off. The source never enters the scheme at time
//! index 0, so `u_hat` vanishes on that plane; at the terminal plane it
//! carries the O(dt) weight of the final loss contribution instead of the
//! continuous terminal value zero.

use crate::error::{Error, Result};
use crate::forward::ForwardSolution;
use crate::grid::{Field, QuadratureWeights};
use crate::problem::PdeProblem;
use nalgebra::DVector;

/// Solution of the backward adjoint sweep.
pub struct AdjointSolution {
    pub u_hat: Field,
}

/// Transpose sweep with an arbitrary residual field as source. The usual
/// choice is `u - h`; the limit-dynamics module reuses it with other sources.
pub fn solve_adjoint(
    problem: &PdeProblem,
    fwd: &ForwardSolution,
    residual: &Field,
) -> Result<AdjointSolution> {
    let solver = &fwd.solver;
    let grid = *solver.grid();
    if !residual.grid().same_as(&grid) {
        return Err(Error::GridMismatch("residual on a different grid".into()));
    }
    let weights = QuadratureWeights::new(&grid);
    let q_u = problem.linearize_at(&fwd.u)?;
    let interior = solver.interior();
    let n_int = interior.len();
    let dt = solver.dt;
    let nt = grid.t_count;

    let mut uhat_planes: Vec<DVector<f64>> = vec![DVector::zeros(n_int); nt];
    let mut lambda_next = DVector::zeros(n_int);
    for m in (1..nt).rev() {
        let mut rhs = DVector::zeros(n_int);
        for xi in 1..grid.x_count - 1 {
            for yi in 1..grid.y_count - 1 {
                let k = interior.k_pub(xi, yi);
                let w_node = weights.t_weights[m] * weights.space[xi * grid.y_count + yi];
                rhs[k] = w_node * residual.at(m, xi, yi)
                    + (1.0 + dt * q_u.at(m, xi, yi)) * lambda_next[k];
            }
        }
        let lambda = solver.solve_step_transpose(m, &rhs)?;
        if !lambda.iter().all(|v| v.is_finite()) {
            return Err(Error::Divergence {
                time_index: m,
                detail: "non-finite adjoint state".into(),
            });
        }
        let mut uhat = DVector::zeros(n_int);
        for xi in 1..grid.x_count - 1 {
            for yi in 1..grid.y_count - 1 {
                let k = interior.k_pub(xi, yi);
                let w_node = weights.t_weights[m] * weights.space[xi * grid.y_count + yi];
                uhat[k] = dt * lambda[k] / w_node;
            }
        }
        uhat_planes[m] = uhat;
        lambda_next = lambda;
    }
    let u_hat = solver.scatter_interior(&uhat_planes)?;
    Ok(AdjointSolution { u_hat })
}

/// Second-level adjoint pair `(w_hat, v_hat)` for the quadratic functional
/// of the adjoint: `w_hat` solves the forward-type PDE with the given source
/// (the caller passes `2 T_{B0} u_hat`), and `v_hat` solves the backward PDE
/// with source `w_hat + q_uu(u) u_hat w_hat`.
pub fn solve_second_level(
    problem: &PdeProblem,
    fwd: &ForwardSolution,
    u_hat: &Field,
    source_w: &Field,
) -> Result<(Field, Field)> {
    let grid = *fwd.solver.grid();
    if !u_hat.grid().same_as(&grid) || !source_w.grid().same_as(&grid) {
        return Err(Error::GridMismatch("second-level fields on a different grid".into()));
    }
    let q_u = problem.linearize_at(&fwd.u)?;
    let w_hat = fwd.solver.solve_linearized(&q_u, source_w)?;

    let q_uu = &problem.nonlinearity.q_uu;
    let mut res = Vec::with_capacity(grid.node_count());
    for (i, &wv) in w_hat.values().iter().enumerate() {
        let (ti, xi, yi) = grid.unravel(i);
        let quu = q_uu(grid.t(ti), grid.x(xi), grid.y(yi), fwd.u.values()[i]);
        res.push(wv + quu * u_hat.values()[i] * wv);
    }
    let res = Field::from_values(&grid, res)?;
    let v_hat = solve_adjoint(problem, fwd, &res)?.u_hat;
    Ok((w_hat, v_hat))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::{solve_forward, PdeSolver};
    use crate::grid::{inner_product_l2, norm, sample_function, NormKind, SpaceTimeGrid};
    use crate::problem::{Nonlinearity, PdeProblem};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    fn random_field(grid: &SpaceTimeGrid, rng: &mut ChaCha8Rng) -> Field {
        let values = (0..grid.node_count())
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        Field::from_values(grid, values).unwrap()
    }

    fn allen_cahn() -> PdeProblem {
        PdeProblem::diffusion_only(
            0.01,
            Nonlinearity::allen_cahn(),
            Arc::new(|x: f64, y: f64| {
                0.2 * (4.0 * std::f64::consts::PI * x).sin() * (2.0 * std::f64::consts::PI * y).sin()
            }),
        )
    }

    #[test]
    fn zero_residual_gives_zero_adjoint() {
        let grid = SpaceTimeGrid::unit_experiment(6, 6, 6).unwrap();
        let problem = allen_cahn();
        let g = sample_function(&grid, |t, x, y| t * x + y).unwrap();
        let fwd = solve_forward(&problem, &g, &grid).unwrap();
        let adj = solve_adjoint(&problem, &fwd, &Field::zeros(&grid)).unwrap();
        assert!(adj.u_hat.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn matched_target_gives_zero_adjoint() {
        let grid = SpaceTimeGrid::unit_experiment(6, 6, 6).unwrap();
        let problem = allen_cahn();
        let g = sample_function(&grid, |t, x, y| (t + x * y).cos()).unwrap();
        let fwd = solve_forward(&problem, &g, &grid).unwrap();
        let residual = fwd.u.sub(&fwd.u).unwrap();
        let adj = solve_adjoint(&problem, &fwd, &residual).unwrap();
        assert!(adj.u_hat.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn adjoint_is_exact_transpose_of_linearized_forward() {
        let grid = SpaceTimeGrid::unit_experiment(6, 6, 6).unwrap();
        let weights = crate::grid::QuadratureWeights::new(&grid);
        let problem = allen_cahn();
        let g0 = sample_function(&grid, |t, x, y| (2.0 * x + y - t).sin()).unwrap();
        let solver = PdeSolver::new(&problem, &grid).unwrap();
        let fwd = solver.solve_forward(&problem, &g0).unwrap();
        let q_u = problem.linearize_at(&fwd.u).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..5 {
            let dg = random_field(&grid, &mut rng);
            let r = random_field(&grid, &mut rng);
            let gu = solver.solve_linearized(&q_u, &dg).unwrap();
            let gstar_r = solve_adjoint(&problem, &fwd, &r).unwrap().u_hat;
            let lhs = inner_product_l2(&weights, &gu, &r).unwrap();
            let rhs = inner_product_l2(&weights, &dg, &gstar_r).unwrap();
            let scale = lhs.abs().max(rhs.abs()).max(1e-300);
            assert!(
                (lhs - rhs).abs() <= 1e-10 * scale,
                "transpose identity violated: {lhs} vs {rhs}"
            );
        }
    }

    #[test]
    fn self_adjoint_case_matches_time_reversed_forward() {
        // a = nu I, b = 0, c = 0, q = 0 and a time-constant residual: the
        // adjoint equals the time reversal of a forward solve driven by the
        // residual with zero initial data, up to O(dt).
        let problem = PdeProblem::diffusion_only(0.05, Nonlinearity::zero(), Arc::new(|_, _| 0.0));
        let r_fn = |_t: f64, x: f64, y: f64| {
            (2.0 * std::f64::consts::PI * x).sin() * (std::f64::consts::PI * y).sin()
        };
        let mut errs = Vec::new();
        for nt in [41, 81] {
            let grid = SpaceTimeGrid::unit_experiment(nt, 9, 9).unwrap();
            let r = sample_function(&grid, r_fn).unwrap();
            let fwd = solve_forward(&problem, &Field::zeros(&grid), &grid).unwrap();
            let u_hat = solve_adjoint(&problem, &fwd, &r).unwrap().u_hat;
            let v = solve_forward(&problem, &r, &grid).unwrap().u;
            // compare u_hat(t) against v(T - t) on interior time planes
            let (mut num, mut den) = (0.0, 0.0);
            for ti in 1..grid.t_count - 1 {
                for xi in 1..grid.x_count - 1 {
                    for yi in 1..grid.y_count - 1 {
                        let a = u_hat.at(ti, xi, yi);
                        let b = v.at(grid.t_count - 1 - ti, xi, yi);
                        num += (a - b) * (a - b);
                        den += b * b;
                    }
                }
            }
            errs.push((num / den).sqrt());
        }
        assert!(errs[0] < 0.1, "coarse reversal error {}", errs[0]);
        assert!(errs[1] < 0.7 * errs[0], "no first-order decay: {errs:?}");
    }

    #[test]
    fn second_level_zero_source_cascades_to_zero() {
        let grid = SpaceTimeGrid::unit_experiment(6, 6, 6).unwrap();
        let problem = allen_cahn();
        let g = sample_function(&grid, |t, x, _| t + x).unwrap();
        let fwd = solve_forward(&problem, &g, &grid).unwrap();
        let u_hat = Field::zeros(&grid);
        let (w_hat, v_hat) =
            solve_second_level(&problem, &fwd, &u_hat, &Field::zeros(&grid)).unwrap();
        assert!(w_hat.values().iter().all(|&v| v == 0.0));
        assert!(v_hat.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn second_level_without_nonlinearity_reduces_to_adjoint_of_w() {
        let grid = SpaceTimeGrid::unit_experiment(7, 6, 6).unwrap();
        let w = crate::grid::QuadratureWeights::new(&grid);
        let problem = PdeProblem::diffusion_only(
            0.01,
            Nonlinearity::zero(),
            Arc::new(|x: f64, y: f64| x * (0.5 - x) * y * (1.0 - y)),
        );
        let g = sample_function(&grid, |t, x, y| (x + y + t).sin()).unwrap();
        let fwd = solve_forward(&problem, &g, &grid).unwrap();
        let u_hat = sample_function(&grid, |t, x, y| t * x * y).unwrap();
        let source = sample_function(&grid, |t, x, y| (x - y).cos() + t).unwrap();
        let (w_hat, v_hat) = solve_second_level(&problem, &fwd, &u_hat, &source).unwrap();
        let direct = solve_adjoint(&problem, &fwd, &w_hat).unwrap().u_hat;
        let diff = norm(&w, &v_hat.sub(&direct).unwrap(), NormKind::L2Dt).unwrap();
        assert!(diff <= 1e-14 * norm(&w, &direct, NormKind::L2Dt).unwrap().max(1e-30));
    }
}
