//! IMEX finite-difference solver for `d/dt u + L u - q(u) = g` with zero
//! Dirichlet boundary and initial condition `f`.
//!
//! The linear operator `L` is treated implicitly (backward Euler), the
//! nonlinearity explicitly at the old time level, and the source is sampled
//! at the new time level:
//!
//! ```text
//! (I + dt A^{n+1}) u^{n+1} = u^n + dt (q(t_n, ., u^n) + g^{n+1})
//! ```
//!
//! so each step is affine-linear in `g`, which the adjoint module exploits
//! for exact transposition. Boundary rows are never formed: the unknowns are
//! the interior nodes and boundary values are identically zero.
//!
//! Diffusion is discretized in divergence form by flux differencing with
//! arithmetic face averages of `a`; the mixed `a12` terms use centered
//! cross-stencils, which keeps the assembled matrix symmetric for symmetric
//! `a` (without drift). The implicit operator is factorized once when the
//! coefficients are time-independent, per time index otherwise.

use crate::error::{Error, Result};
use crate::grid::{Field, SpaceTimeGrid};
use crate::problem::PdeProblem;
use nalgebra::{DMatrix, DVector, Dyn, LU};
use std::sync::Arc;

type DenseLu = LU<f64, Dyn, Dyn>;

/// Mapping between interior nodes and the flattened unknown vector.
#[derive(Debug, Clone)]
pub(crate) struct InteriorMap {
    nx: usize,
    ny: usize,
}

impl InteriorMap {
    fn new(grid: &SpaceTimeGrid) -> Self {
        Self {
            nx: grid.x_count,
            ny: grid.y_count,
        }
    }

    pub(crate) fn len(&self) -> usize {
        (self.nx - 2) * (self.ny - 2)
    }

    #[inline]
    fn k(&self, xi: usize, yi: usize) -> usize {
        (xi - 1) * (self.ny - 2) + (yi - 1)
    }

    /// Gather the interior part of a spatial slice (length nx*ny).
    fn gather(&self, slice: &[f64]) -> DVector<f64> {
        let mut v = DVector::zeros(self.len());
        for xi in 1..self.nx - 1 {
            for yi in 1..self.ny - 1 {
                v[self.k(xi, yi)] = slice[xi * self.ny + yi];
            }
        }
        v
    }

    /// Scatter an interior vector into a spatial slice, boundary untouched.
    fn scatter(&self, v: &DVector<f64>, slice: &mut [f64]) {
        for xi in 1..self.nx - 1 {
            for yi in 1..self.ny - 1 {
                slice[xi * self.ny + yi] = v[self.k(xi, yi)];
            }
        }
    }
}

/// Dense assembly of the spatial operator `A ~ L` on interior nodes at time `t`.
pub fn assemble_spatial_operator(
    problem: &PdeProblem,
    grid: &SpaceTimeGrid,
    t: f64,
) -> DMatrix<f64> {
    let interior = InteriorMap::new(grid);
    let n = interior.len();
    let (hx, hy) = (grid.dx(), grid.dy());
    let mut a = DMatrix::zeros(n, n);

    let diff = |xi: usize, yi: usize| (problem.diffusion)(t, grid.x(xi), grid.y(yi));

    for xi in 1..grid.x_count - 1 {
        for yi in 1..grid.y_count - 1 {
            let row = interior.k(xi, yi);
            let mut add = |xj: usize, yj: usize, val: f64| {
                if !grid.is_spatial_boundary(xj, yj) {
                    a[(row, interior.k(xj, yj))] += val;
                }
            };

            let ac = diff(xi, yi);
            // -d/dx (a11 du/dx), face-averaged
            let a11_e = 0.5 * (ac.a11 + diff(xi + 1, yi).a11);
            let a11_w = 0.5 * (ac.a11 + diff(xi - 1, yi).a11);
            add(xi, yi, (a11_e + a11_w) / (hx * hx));
            add(xi + 1, yi, -a11_e / (hx * hx));
            add(xi - 1, yi, -a11_w / (hx * hx));
            // -d/dy (a22 du/dy)
            let a22_n = 0.5 * (ac.a22 + diff(xi, yi + 1).a22);
            let a22_s = 0.5 * (ac.a22 + diff(xi, yi - 1).a22);
            add(xi, yi, (a22_n + a22_s) / (hy * hy));
            add(xi, yi + 1, -a22_n / (hy * hy));
            add(xi, yi - 1, -a22_s / (hy * hy));
            // mixed terms -d/dx(a12 du/dy) - d/dy(a12 du/dx), centered
            let a12_e = diff(xi + 1, yi).a12;
            let a12_w = diff(xi - 1, yi).a12;
            let a12_n = diff(xi, yi + 1).a12;
            let a12_s = diff(xi, yi - 1).a12;
            let cross = 4.0 * hx * hy;
            add(xi + 1, yi + 1, -(a12_e + a12_n) / cross);
            add(xi - 1, yi - 1, -(a12_w + a12_s) / cross);
            add(xi + 1, yi - 1, (a12_e + a12_s) / cross);
            add(xi - 1, yi + 1, (a12_w + a12_n) / cross);
            // drift, centered
            let b = (problem.drift)(t, grid.x(xi), grid.y(yi));
            add(xi + 1, yi, b[0] / (2.0 * hx));
            add(xi - 1, yi, -b[0] / (2.0 * hx));
            add(xi, yi + 1, b[1] / (2.0 * hy));
            add(xi, yi - 1, -b[1] / (2.0 * hy));
            // reaction
            add(xi, yi, (problem.reaction)(t, grid.x(xi), grid.y(yi)));
        }
    }
    a
}

struct StepFactor {
    lu: DenseLu,
    lu_t: DenseLu,
}

impl StepFactor {
    fn new(m: DMatrix<f64>) -> Self {
        let lu_t = LU::new(m.transpose());
        let lu = LU::new(m);
        Self { lu, lu_t }
    }
}

enum StepOperators {
    /// Coefficients independent of time: one factorization for all steps.
    Single(StepFactor),
    /// One factorization per time index `1..t_count`.
    PerStep(Vec<StepFactor>),
}

/// Assembled and factorized implicit operators for a `(problem, grid)` pair.
/// Independent solves may share one solver (all methods take `&self`).
pub struct PdeSolver {
    grid: SpaceTimeGrid,
    pub(crate) dt: f64,
    interior: InteriorMap,
    ops: StepOperators,
}

impl PdeSolver {
    pub fn new(problem: &PdeProblem, grid: &SpaceTimeGrid) -> Result<Arc<Self>> {
        let interior = InteriorMap::new(grid);
        let dt = grid.dt();
        let implicit = |t: f64| {
            let mut m = assemble_spatial_operator(problem, grid, t);
            m *= dt;
            for k in 0..interior.len() {
                m[(k, k)] += 1.0;
            }
            StepFactor::new(m)
        };
        let ops = if problem.time_invariant_coefficients {
            StepOperators::Single(implicit(grid.t(1)))
        } else {
            StepOperators::PerStep((1..grid.t_count).map(|n| implicit(grid.t(n))).collect())
        };
        Ok(Arc::new(Self {
            grid: *grid,
            dt,
            interior,
            ops,
        }))
    }

    pub fn grid(&self) -> &SpaceTimeGrid {
        &self.grid
    }

    fn factor(&self, time_index: usize) -> &StepFactor {
        match &self.ops {
            StepOperators::Single(f) => f,
            StepOperators::PerStep(fs) => &fs[time_index - 1],
        }
    }

    /// Solve `(I + dt A^n) x = rhs`.
    pub(crate) fn solve_step(&self, time_index: usize, rhs: &DVector<f64>) -> Result<DVector<f64>> {
        self.factor(time_index).lu.solve(rhs).ok_or_else(|| {
            Error::Numerical(format!("singular implicit operator at time index {time_index}"))
        })
    }

    /// Solve `(I + dt A^n)^T x = rhs`.
    pub(crate) fn solve_step_transpose(
        &self,
        time_index: usize,
        rhs: &DVector<f64>,
    ) -> Result<DVector<f64>> {
        self.factor(time_index).lu_t.solve(rhs).ok_or_else(|| {
            Error::Numerical(format!(
                "singular transposed implicit operator at time index {time_index}"
            ))
        })
    }

    pub(crate) fn scatter_interior(
        &self,
        planes: &[DVector<f64>],
    ) -> Result<Field> {
        let mut values = vec![0.0; self.grid.node_count()];
        let n = self.grid.space_count();
        for (ti, v) in planes.iter().enumerate() {
            self.interior.scatter(v, &mut values[ti * n..(ti + 1) * n]);
        }
        Field::from_values(&self.grid, values)
    }

    fn check_finite(v: &DVector<f64>, time_index: usize) -> Result<()> {
        if v.iter().all(|x| x.is_finite()) {
            Ok(())
        } else {
            Err(Error::Divergence {
                time_index,
                detail: "non-finite state".into(),
            })
        }
    }

    /// March the IMEX scheme. The returned solution shares this solver so
    /// the adjoint sweep can reuse the factorizations.
    pub fn solve_forward(self: &Arc<Self>, problem: &PdeProblem, g: &Field) -> Result<ForwardSolution> {
        if !g.grid().same_as(&self.grid) {
            return Err(Error::GridMismatch("source field on a different grid".into()));
        }
        let grid = &self.grid;
        let f0 = problem.sample_initial(grid)?;
        let mut planes: Vec<DVector<f64>> = Vec::with_capacity(grid.t_count);
        planes.push(self.interior.gather(&f0));

        let q = &problem.nonlinearity.q;
        for n in 0..grid.t_count - 1 {
            let t_old = grid.t(n);
            let u_old = &planes[n];
            let mut rhs = DVector::zeros(self.interior.len());
            for xi in 1..grid.x_count - 1 {
                for yi in 1..grid.y_count - 1 {
                    let k = self.interior.k_pub(xi, yi);
                    let qv = q(t_old, grid.x(xi), grid.y(yi), u_old[k]);
                    rhs[k] = u_old[k] + self.dt * (qv + g.at(n + 1, xi, yi));
                }
            }
            Self::check_finite(&rhs, n)?;
            let u_new = self.solve_step(n + 1, &rhs)?;
            Self::check_finite(&u_new, n + 1)?;
            planes.push(u_new);
        }
        let u = self.scatter_interior(&planes)?;
        Ok(ForwardSolution {
            u,
            solver: Arc::clone(self),
        })
    }

    /// Linearized forward solve: `d/dt w + L w - q_u w = source` with zero
    /// initial and boundary data, `q_u` frozen as a field (typically from
    /// [`PdeProblem::linearize_at`] on a forward trajectory). Shares the
    /// stepping structure of [`Self::solve_forward`] exactly.
    pub fn solve_linearized(&self, q_u: &Field, source: &Field) -> Result<Field> {
        if !q_u.grid().same_as(&self.grid) || !source.grid().same_as(&self.grid) {
            return Err(Error::GridMismatch("linearized solve fields on a different grid".into()));
        }
        let grid = &self.grid;
        let mut planes: Vec<DVector<f64>> = Vec::with_capacity(grid.t_count);
        planes.push(DVector::zeros(self.interior.len()));
        for n in 0..grid.t_count - 1 {
            let w_old = &planes[n];
            let mut rhs = DVector::zeros(self.interior.len());
            for xi in 1..grid.x_count - 1 {
                for yi in 1..grid.y_count - 1 {
                    let k = self.interior.k_pub(xi, yi);
                    rhs[k] = w_old[k]
                        + self.dt * (q_u.at(n, xi, yi) * w_old[k] + source.at(n + 1, xi, yi));
                }
            }
            let w_new = self.solve_step(n + 1, &rhs)?;
            Self::check_finite(&w_new, n + 1)?;
            planes.push(w_new);
        }
        self.scatter_interior(&planes)
    }
}

impl InteriorMap {
    #[inline]
    pub(crate) fn k_pub(&self, xi: usize, yi: usize) -> usize {
        self.k(xi, yi)
    }
}

impl PdeSolver {
    pub(crate) fn interior(&self) -> &InteriorMap {
        &self.interior
    }
}

/// Forward trajectory plus the factorized step operators that produced it.
pub struct ForwardSolution {
    pub u: Field,
    pub solver: Arc<PdeSolver>,
}

/// One-shot convenience wrapper assembling the operators for a single solve.
pub fn solve_forward(problem: &PdeProblem, g: &Field, grid: &SpaceTimeGrid) -> Result<ForwardSolution> {
    let solver = PdeSolver::new(problem, grid)?;
    solver.solve_forward(problem, g)
}
