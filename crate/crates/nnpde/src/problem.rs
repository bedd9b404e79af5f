//! The quasi-linear parabolic problem data: divergence-form operator
//! coefficients `a`, `b`, `c`, the nonlinearity `q` with its first two
//! `u`-derivatives, the initial condition `f` and the calibration target `h`.

use crate::error::{Error, Result};
use crate::grid::{sample_function, Field, SpaceTimeGrid};
use std::sync::Arc;

/// Symmetric 2x2 diffusion matrix value at a point.
#[derive(Debug, Clone, Copy)]
pub struct DiffusionValue {
    pub a11: f64,
    pub a12: f64,
    pub a22: f64,
}

impl DiffusionValue {
    pub fn isotropic(nu: f64) -> Self {
        Self {
            a11: nu,
            a12: 0.0,
            a22: nu,
        }
    }

    /// Smaller eigenvalue; uniform parabolicity requires this to stay
    /// positive over the whole space-time domain.
    pub fn min_eigenvalue(&self) -> f64 {
        let tr = self.a11 + self.a22;
        let disc = ((self.a11 - self.a22).powi(2) + 4.0 * self.a12 * self.a12).sqrt();
        0.5 * (tr - disc)
    }
}

pub type ScalarFn = Arc<dyn Fn(f64, f64, f64) -> f64 + Send + Sync>;
pub type DiffusionFn = Arc<dyn Fn(f64, f64, f64) -> DiffusionValue + Send + Sync>;
pub type DriftFn = Arc<dyn Fn(f64, f64, f64) -> [f64; 2] + Send + Sync>;
pub type ReactionFn = Arc<dyn Fn(f64, f64, f64, f64) -> f64 + Send + Sync>;
pub type InitialFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

/// The nonlinearity `q(t,x,y,u)` together with `q_u` and `q_uu`.
#[derive(Clone)]
pub struct Nonlinearity {
    pub q: ReactionFn,
    pub q_u: ReactionFn,
    pub q_uu: ReactionFn,
}

impl Nonlinearity {
    pub fn zero() -> Self {
        Self {
            q: Arc::new(|_, _, _, _| 0.0),
            q_u: Arc::new(|_, _, _, _| 0.0),
            q_uu: Arc::new(|_, _, _, _| 0.0),
        }
    }

    /// `q(u) = u^3 - u`, the Allen-Cahn reaction term.
    pub fn allen_cahn() -> Self {
        Self {
            q: Arc::new(|_, _, _, u| u * u * u - u),
            q_u: Arc::new(|_, _, _, u| 3.0 * u * u - 1.0),
            q_uu: Arc::new(|_, _, _, u| 6.0 * u),
        }
    }
}

/// Calibration target: either already sampled on a grid or a callable.
#[derive(Clone)]
pub enum Target {
    Sampled(Field),
    Callable(ScalarFn),
}

/// Problem data for `d/dt u + L u - q(u) = g` with zero Dirichlet boundary.
#[derive(Clone)]
pub struct PdeProblem {
    pub diffusion: DiffusionFn,
    pub drift: DriftFn,
    pub reaction: ScalarFn,
    pub nonlinearity: Nonlinearity,
    pub initial: InitialFn,
    pub target: Target,
    /// Coefficients independent of `t`: the implicit operator is assembled
    /// and factorized once instead of per time index.
    pub time_invariant_coefficients: bool,
}

impl PdeProblem {
    /// Constant isotropic diffusion, no drift or linear reaction.
    pub fn diffusion_only(nu: f64, nonlinearity: Nonlinearity, initial: InitialFn) -> Self {
        Self {
            diffusion: Arc::new(move |_, _, _| DiffusionValue::isotropic(nu)),
            drift: Arc::new(|_, _, _| [0.0, 0.0]),
            reaction: Arc::new(|_, _, _| 0.0),
            nonlinearity,
            initial,
            target: Target::Callable(Arc::new(|_, _, _| 0.0)),
            time_invariant_coefficients: true,
        }
    }

    pub fn with_target(mut self, target: Target) -> Self {
        self.target = target;
        self
    }

    /// Resolve the target on a grid. A pre-sampled target must match.
    pub fn target_on(&self, grid: &SpaceTimeGrid) -> Result<Field> {
        match &self.target {
            Target::Sampled(h) => {
                if h.grid().same_as(grid) {
                    Ok(h.clone())
                } else {
                    Err(Error::GridMismatch("target sampled on a different grid".into()))
                }
            }
            Target::Callable(f) => {
                let f = f.clone();
                sample_function(grid, move |t, x, y| f(t, x, y))
            }
        }
    }

    pub fn sample_initial(&self, grid: &SpaceTimeGrid) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(grid.space_count());
        for xi in 0..grid.x_count {
            for yi in 0..grid.y_count {
                let v = (self.initial)(grid.x(xi), grid.y(yi));
                if !v.is_finite() {
                    return Err(Error::Data("non-finite initial condition sample".into()));
                }
                out.push(v);
            }
        }
        Ok(out)
    }

    /// Pointwise `q_u(t,x,y,u)` as a field; entries stay within the bound
    /// `c_q` wherever the corresponding assumption holds.
    pub fn linearize_at(&self, u: &Field) -> Result<Field> {
        let grid = *u.grid();
        let q_u = &self.nonlinearity.q_u;
        let mut values = Vec::with_capacity(grid.node_count());
        for (i, &uv) in u.values().iter().enumerate() {
            let (ti, xi, yi) = grid.unravel(i);
            values.push(q_u(grid.t(ti), grid.x(xi), grid.y(yi), uv));
        }
        Field::from_values(&grid, values)
    }
}
