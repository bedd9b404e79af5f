//! Uniform space-time discretization of `(0,T) x D` for a rectangle
//! `D = [x_min,x_max] x [y_min,y_max]`, scalar fields on it, trapezoidal
//! quadrature and the norms used throughout the crate.
//!
//! Fields store the PDE time as the slowest index, so reversing the adjoint
//! in time is an index reversal. All operations are pure; fields are
//! immutable after construction. Reductions run in a fixed (node-index)
//! order so results are bitwise reproducible for any thread count.

use crate::error::{Error, Result};
use std::fmt::Write as _;

const MIN_SPACING: f64 = 1e-12;

/// Uniform tensor grid over `[0,T] x [x_min,x_max] x [y_min,y_max]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpaceTimeGrid {
    pub t_count: usize,
    pub x_count: usize,
    pub y_count: usize,
    pub t_max: f64,
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl SpaceTimeGrid {
    pub fn new(
        t_count: usize,
        x_count: usize,
        y_count: usize,
        t_max: f64,
        x_range: (f64, f64),
        y_range: (f64, f64),
    ) -> Result<Self> {
        if t_count < 3 || x_count < 3 || y_count < 3 {
            return Err(Error::Config(format!(
                "grid needs at least 3 nodes per axis, got {t_count}x{x_count}x{y_count}"
            )));
        }
        if t_max <= 0.0 || x_range.1 <= x_range.0 || y_range.1 <= y_range.0 || t_max.is_nan() {
            return Err(Error::Config("grid extents must be positive".into()));
        }
        let grid = Self {
            t_count,
            x_count,
            y_count,
            t_max,
            x_min: x_range.0,
            x_max: x_range.1,
            y_min: y_range.0,
            y_max: y_range.1,
        };
        if grid.dt() < MIN_SPACING || grid.dx() < MIN_SPACING || grid.dy() < MIN_SPACING {
            return Err(Error::Config("grid spacing below 1e-12".into()));
        }
        Ok(grid)
    }

    /// The domain and horizon used by the experiments: `D = [0,0.5] x [0,1]`, `T = 1`.
    pub fn unit_experiment(t_count: usize, x_count: usize, y_count: usize) -> Result<Self> {
        Self::new(t_count, x_count, y_count, 1.0, (0.0, 0.5), (0.0, 1.0))
    }

    pub fn dt(&self) -> f64 {
        self.t_max / (self.t_count - 1) as f64
    }
    pub fn dx(&self) -> f64 {
        (self.x_max - self.x_min) / (self.x_count - 1) as f64
    }
    pub fn dy(&self) -> f64 {
        (self.y_max - self.y_min) / (self.y_count - 1) as f64
    }

    pub fn t(&self, ti: usize) -> f64 {
        self.dt() * ti as f64
    }
    pub fn x(&self, xi: usize) -> f64 {
        self.x_min + self.dx() * xi as f64
    }
    pub fn y(&self, yi: usize) -> f64 {
        self.y_min + self.dy() * yi as f64
    }

    pub fn node_count(&self) -> usize {
        self.t_count * self.x_count * self.y_count
    }

    pub fn space_count(&self) -> usize {
        self.x_count * self.y_count
    }

    /// Flat index with time slowest, then x, then y.
    #[inline]
    pub fn idx(&self, ti: usize, xi: usize, yi: usize) -> usize {
        (ti * self.x_count + xi) * self.y_count + yi
    }

    /// Inverse of [`Self::idx`].
    #[inline]
    pub fn unravel(&self, idx: usize) -> (usize, usize, usize) {
        let yi = idx % self.y_count;
        let rest = idx / self.y_count;
        (rest / self.x_count, rest % self.x_count, yi)
    }

    pub fn is_spatial_boundary(&self, xi: usize, yi: usize) -> bool {
        xi == 0 || yi == 0 || xi == self.x_count - 1 || yi == self.y_count - 1
    }

    pub fn same_as(&self, other: &SpaceTimeGrid) -> bool {
        self == other
    }

    fn check_same(&self, other: &SpaceTimeGrid, what: &str) -> Result<()> {
        if self.same_as(other) {
            Ok(())
        } else {
            Err(Error::GridMismatch(format!("{what} on different grids")))
        }
    }
}

/// Tensor-product trapezoidal weights. Boundary weights per axis are half the
/// interior ones; the combined node weight carries units of time times area.
#[derive(Debug, Clone)]
pub struct QuadratureWeights {
    grid: SpaceTimeGrid,
    pub t_weights: Vec<f64>,
    pub x_weights: Vec<f64>,
    pub y_weights: Vec<f64>,
    /// Combined weight per node, same layout as [`Field`] values.
    pub node: Vec<f64>,
    /// Combined spatial weight per `(x,y)` node.
    pub space: Vec<f64>,
}

fn axis_trapezoid(count: usize, spacing: f64) -> Vec<f64> {
    let mut w = vec![spacing; count];
    w[0] = 0.5 * spacing;
    w[count - 1] = 0.5 * spacing;
    w
}

impl QuadratureWeights {
    pub fn new(grid: &SpaceTimeGrid) -> Self {
        let t_weights = axis_trapezoid(grid.t_count, grid.dt());
        let x_weights = axis_trapezoid(grid.x_count, grid.dx());
        let y_weights = axis_trapezoid(grid.y_count, grid.dy());
        let mut space = Vec::with_capacity(grid.space_count());
        for wx in &x_weights {
            for wy in &y_weights {
                space.push(wx * wy);
            }
        }
        let mut node = Vec::with_capacity(grid.node_count());
        for wt in &t_weights {
            for s in &space {
                node.push(wt * s);
            }
        }
        Self {
            grid: *grid,
            t_weights,
            x_weights,
            y_weights,
            node,
            space,
        }
    }

    pub fn grid(&self) -> &SpaceTimeGrid {
        &self.grid
    }

    /// Total measure `T * |D|`.
    pub fn total(&self) -> f64 {
        self.node.iter().sum()
    }
}

/// Scalar values on every grid node; entries are finite by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    grid: SpaceTimeGrid,
    values: Vec<f64>,
}

impl Field {
    pub fn zeros(grid: &SpaceTimeGrid) -> Self {
        Self {
            grid: *grid,
            values: vec![0.0; grid.node_count()],
        }
    }

    pub fn constant(grid: &SpaceTimeGrid, value: f64) -> Self {
        Self {
            grid: *grid,
            values: vec![value; grid.node_count()],
        }
    }

    pub fn from_values(grid: &SpaceTimeGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.node_count() {
            return Err(Error::Data(format!(
                "field needs {} values, got {}",
                grid.node_count(),
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            let (ti, xi, yi) = grid.unravel(i);
            return Err(Error::Data(format!(
                "non-finite value at node (t={ti}, x={xi}, y={yi})"
            )));
        }
        Ok(Self {
            grid: *grid,
            values,
        })
    }

    pub fn grid(&self) -> &SpaceTimeGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn at(&self, ti: usize, xi: usize, yi: usize) -> f64 {
        self.values[self.grid.idx(ti, xi, yi)]
    }

    /// The spatial slice at time index `ti`.
    pub fn time_slice(&self, ti: usize) -> &[f64] {
        let n = self.grid.space_count();
        &self.values[ti * n..(ti + 1) * n]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Field> {
        Field::from_values(&self.grid, self.values.iter().map(|&v| f(v)).collect())
    }

    /// `self + alpha * other`, checked for matching grids.
    pub fn axpy(&self, alpha: f64, other: &Field) -> Result<Field> {
        self.grid.check_same(&other.grid, "axpy operands")?;
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a + alpha * b)
            .collect();
        Field::from_values(&self.grid, values)
    }

    pub fn sub(&self, other: &Field) -> Result<Field> {
        self.axpy(-1.0, other)
    }

    pub fn scale(&self, alpha: f64) -> Field {
        Field {
            grid: self.grid,
            values: self.values.iter().map(|v| v * alpha).collect(),
        }
    }

    /// Serialize as CSV with header `t,x,y,value`, row-major in `(t,x,y)`,
    /// values at 17 significant digits.
    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(self.values.len() * 32);
        out.push_str("t,x,y,value\n");
        for ti in 0..self.grid.t_count {
            for xi in 0..self.grid.x_count {
                for yi in 0..self.grid.y_count {
                    let _ = writeln!(
                        out,
                        "{:.16e},{:.16e},{:.16e},{:.16e}",
                        self.grid.t(ti),
                        self.grid.x(xi),
                        self.grid.y(yi),
                        self.at(ti, xi, yi)
                    );
                }
            }
        }
        out
    }
}

/// Sample a function of `(t,x,y)` on all grid nodes.
pub fn sample_function(grid: &SpaceTimeGrid, g: impl Fn(f64, f64, f64) -> f64) -> Result<Field> {
    let mut values = Vec::with_capacity(grid.node_count());
    for ti in 0..grid.t_count {
        let t = grid.t(ti);
        for xi in 0..grid.x_count {
            let x = grid.x(xi);
            for yi in 0..grid.y_count {
                values.push(g(t, x, grid.y(yi)));
            }
        }
    }
    Field::from_values(grid, values)
}

/// Quadrature inner product `sum_nodes w * a * b`, the discrete `L_2(D_T)`
/// pairing. Symmetric and bilinear; exact for products of per-axis affine
/// functions.
pub fn inner_product_l2(weights: &QuadratureWeights, a: &Field, b: &Field) -> Result<f64> {
    a.grid.check_same(&b.grid, "inner product operands")?;
    weights.grid.check_same(&a.grid, "inner product weights")?;
    let mut acc = 0.0;
    for ((w, va), vb) in weights.node.iter().zip(&a.values).zip(&b.values) {
        acc += w * va * vb;
    }
    Ok(acc)
}

/// Norms on space-time fields.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormKind {
    /// `L_2((0,T) x D)`.
    L2Dt,
    /// `L_inf((0,T) x D)`: max absolute node value.
    LinfDt,
    /// Bochner `L_2([0,T], H^1(D))`.
    L2tH1x,
    /// Bochner `L_inf([0,T], L_2(D))`.
    LinftL2x,
}

/// First spatial differences: central in the interior, one-sided at the
/// spatial boundary (second order only where it matters).
fn spatial_gradient_sq(grid: &SpaceTimeGrid, slice: &[f64]) -> Vec<f64> {
    let (nx, ny) = (grid.x_count, grid.y_count);
    let (dx, dy) = (grid.dx(), grid.dy());
    let at = |xi: usize, yi: usize| slice[xi * ny + yi];
    let mut out = vec![0.0; nx * ny];
    for xi in 0..nx {
        for yi in 0..ny {
            let gx = if xi == 0 {
                (at(1, yi) - at(0, yi)) / dx
            } else if xi == nx - 1 {
                (at(nx - 1, yi) - at(nx - 2, yi)) / dx
            } else {
                (at(xi + 1, yi) - at(xi - 1, yi)) / (2.0 * dx)
            };
            let gy = if yi == 0 {
                (at(xi, 1) - at(xi, 0)) / dy
            } else if yi == ny - 1 {
                (at(xi, ny - 1) - at(xi, ny - 2)) / dy
            } else {
                (at(xi, yi + 1) - at(xi, yi - 1)) / (2.0 * dy)
            };
            out[xi * ny + yi] = gx * gx + gy * gy;
        }
    }
    out
}

pub fn norm(weights: &QuadratureWeights, f: &Field, kind: NormKind) -> Result<f64> {
    weights.grid.check_same(&f.grid, "norm weights")?;
    let grid = &f.grid;
    match kind {
        NormKind::L2Dt => Ok(inner_product_l2(weights, f, f)?.sqrt()),
        NormKind::LinfDt => Ok(f
            .values
            .iter()
            .fold(0.0_f64, |acc, v| acc.max(v.abs()))),
        NormKind::L2tH1x => {
            let mut acc = 0.0;
            for ti in 0..grid.t_count {
                let slice = f.time_slice(ti);
                let grad_sq = spatial_gradient_sq(grid, slice);
                let mut h1 = 0.0;
                for (k, ws) in weights.space.iter().enumerate() {
                    h1 += ws * (slice[k] * slice[k] + grad_sq[k]);
                }
                acc += weights.t_weights[ti] * h1;
            }
            Ok(acc.sqrt())
        }
        NormKind::LinftL2x => {
            let mut best = 0.0_f64;
            for ti in 0..grid.t_count {
                let slice = f.time_slice(ti);
                let mut l2 = 0.0;
                for (k, ws) in weights.space.iter().enumerate() {
                    l2 += ws * slice[k] * slice[k];
                }
                best = best.max(l2.sqrt());
            }
            Ok(best)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn experiment_grid(n: usize) -> SpaceTimeGrid {
        SpaceTimeGrid::unit_experiment(n, n, n).unwrap()
    }

    #[test]
    fn weights_sum_to_measure() {
        for n in [3, 5, 9, 17] {
            let grid = experiment_grid(n);
            let w = QuadratureWeights::new(&grid);
            // T * |D| = 1 * 0.5
            assert!((w.total() - 0.5).abs() < 1e-12 * 0.5);
            assert!(w.node.iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn inner_product_of_ones_is_measure() {
        let grid = experiment_grid(7);
        let w = QuadratureWeights::new(&grid);
        let ones = Field::constant(&grid, 1.0);
        let got = inner_product_l2(&w, &ones, &ones).unwrap();
        assert!((got - 0.5).abs() < 1e-12);
    }

    #[test]
    fn inner_product_with_zero_is_zero() {
        let grid = experiment_grid(5);
        let w = QuadratureWeights::new(&grid);
        let zero = Field::zeros(&grid);
        let any = sample_function(&grid, |t, x, y| t + 2.0 * x - y).unwrap();
        assert_eq!(inner_product_l2(&w, &zero, &any).unwrap(), 0.0);
    }

    #[test]
    fn hat_field_recovers_node_weight() {
        let grid = experiment_grid(5);
        let w = QuadratureWeights::new(&grid);
        let idx = grid.idx(2, 2, 2);
        let mut values = vec![0.0; grid.node_count()];
        values[idx] = 1.0;
        let hat = Field::from_values(&grid, values).unwrap();
        let got = inner_product_l2(&w, &hat, &hat).unwrap();
        assert!((got - w.node[idx]).abs() < 1e-15);
    }

    #[test]
    fn quadrature_exact_for_affine_products() {
        // Trapezoidal rule is exact per axis for degree <= 1, hence the
        // tensor rule integrates (a t + b)(c x + d)(e y + f) pairs exactly.
        let grid = experiment_grid(6);
        let w = QuadratureWeights::new(&grid);
        let a = sample_function(&grid, |t, x, y| (2.0 * t + 1.0) * (x - 0.3) * (0.5 * y + 0.2))
            .unwrap();
        let b = Field::constant(&grid, 1.0);
        // exact: int_0^1 (2t+1) dt * int_0^0.5 (x-0.3) dx * int_0^1 (y/2+0.2) dy
        let exact = 2.0 * (0.5f64 * 0.25 - 0.3 * 0.5) * (0.25 + 0.2);
        let got = inner_product_l2(&w, &a, &b).unwrap();
        assert!((got - exact).abs() <= 1e-12 * exact.abs());
    }

    #[test]
    fn norm_squared_matches_inner_product() {
        let grid = experiment_grid(7);
        let w = QuadratureWeights::new(&grid);
        let f = sample_function(&grid, |t, x, y| (t - x * y).sin() + 0.3).unwrap();
        let n = norm(&w, &f, NormKind::L2Dt).unwrap();
        let ip = inner_product_l2(&w, &f, &f).unwrap();
        assert!((n * n - ip).abs() <= 1e-12 * ip.abs());
    }

    #[test]
    fn norm_examples() {
        let grid = experiment_grid(9);
        let w = QuadratureWeights::new(&grid);
        let c = Field::constant(&grid, -3.0);
        let l2 = norm(&w, &c, NormKind::L2Dt).unwrap();
        assert!((l2 - 3.0 * 0.5f64.sqrt()).abs() < 1e-12);

        let zero = Field::zeros(&grid);
        for kind in [
            NormKind::L2Dt,
            NormKind::LinfDt,
            NormKind::L2tH1x,
            NormKind::LinftL2x,
        ] {
            assert_eq!(norm(&w, &zero, kind).unwrap(), 0.0);
        }

        let coord = sample_function(&grid, |_, x, _| x).unwrap();
        assert!((norm(&w, &coord, NormKind::LinfDt).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn l2_norm_refinement_is_second_order() {
        // |f|_{L2} computed by trapezoid converges at order 2 in spacing.
        let f = |t: f64, x: f64, y: f64| (std::f64::consts::PI * t).sin() * x * x * (1.0 - y);
        let mut errs = Vec::new();
        let exact = {
            // very fine reference
            let grid = SpaceTimeGrid::unit_experiment(129, 129, 129).unwrap();
            let w = QuadratureWeights::new(&grid);
            let fld = sample_function(&grid, f).unwrap();
            norm(&w, &fld, NormKind::L2Dt).unwrap()
        };
        for n in [5, 9, 17] {
            let grid = SpaceTimeGrid::unit_experiment(n, n, n).unwrap();
            let w = QuadratureWeights::new(&grid);
            let fld = sample_function(&grid, f).unwrap();
            errs.push((norm(&w, &fld, NormKind::L2Dt).unwrap() - exact).abs());
        }
        let order01 = (errs[0] / errs[1]).log2();
        let order12 = (errs[1] / errs[2]).log2();
        assert!(order01 > 1.7, "observed order {order01}");
        assert!(order12 > 1.7, "observed order {order12}");
    }

    #[test]
    fn sample_function_examples() {
        let grid = experiment_grid(5);
        let g_target = |t: f64, x: f64, y: f64| {
            1600.0 * x * (1.0 - 2.0 * x) * y * y * (0.2 + 0.6 * t - y).powi(2) * (1.0 - y).powi(2)
        };
        assert_eq!(g_target(0.0, 0.0, 0.7), 0.0);
        assert!((g_target(0.0, 0.25, 0.5) - 1.125).abs() < 1e-12);
        let f0 = |x: f64, y: f64| {
            0.2 * (4.0 * std::f64::consts::PI * x).sin() * (2.0 * std::f64::consts::PI * y).sin()
        };
        assert!((f0(0.125, 0.25) - 0.2).abs() < 1e-12);
        let fld = sample_function(&grid, g_target).unwrap();
        assert!(fld.values().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn non_finite_sample_is_rejected() {
        // x = 0.25 is the third node of the 5-point x axis
        let grid = experiment_grid(5);
        let err = sample_function(&grid, |_, x, _| 1.0 / (x - 0.25)).unwrap_err();
        assert!(matches!(err, Error::Data(_)));
    }

    #[test]
    fn grid_mismatch_is_structural_error() {
        let a = Field::zeros(&experiment_grid(5));
        let b = Field::zeros(&experiment_grid(7));
        let w = QuadratureWeights::new(&experiment_grid(5));
        assert!(matches!(
            inner_product_l2(&w, &a, &b),
            Err(Error::GridMismatch(_))
        ));
    }

    #[test]
    fn degenerate_grids_rejected() {
        assert!(SpaceTimeGrid::unit_experiment(2, 5, 5).is_err());
        assert!(SpaceTimeGrid::new(5, 5, 5, 0.0, (0.0, 1.0), (0.0, 1.0)).is_err());
        assert!(SpaceTimeGrid::new(5, 5, 5, 1.0, (1.0, 1.0), (0.0, 1.0)).is_err());
        assert!(SpaceTimeGrid::new(5, 5, 5, 1e-14, (0.0, 1.0), (0.0, 1.0)).is_err());
    }

    #[test]
    fn csv_format_and_significant_digits() {
        let grid = SpaceTimeGrid::unit_experiment(3, 3, 3).unwrap();
        let f = sample_function(&grid, |t, x, y| t + x + y / 3.0).unwrap();
        let csv = f.to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), "t,x,y,value");
        let first = lines.next().unwrap();
        // 17 significant digits: mantissa with 16 decimal places
        assert!(first.split(',').all(|tok| tok.contains('e')));
        assert_eq!(csv.lines().count(), 1 + grid.node_count());
        // row-major in (t,x,y): second node is (t0, x0, y1)
        let second = csv.lines().nth(2).unwrap();
        let cols: Vec<f64> = second.split(',').map(|s| s.parse().unwrap()).collect();
        assert_eq!(cols[0], 0.0);
        assert_eq!(cols[1], 0.0);
        assert!((cols[2] - 0.5).abs() < 1e-15);
    }
}
