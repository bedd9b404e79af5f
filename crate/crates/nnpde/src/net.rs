//! Single-hidden-layer network
//! `g(t,x) = N^{-beta} sum_i c_i sigma(w_t^i t + w^i . x + eta^i)` with
//! `beta in (1/2, 1)`, its evaluation on a grid and the quadrature pairing
//! of its parameter gradient with an adjoint field.
//!
//! Flat parameter ordering everywhere: all `c`, then all `w_t`, then the
//! spatial weights interleaved as `(w_x^1, w_y^1, w_x^2, ...)`, then all
//! `eta`, giving 5N entries in total.

use crate::error::{Error, Result};
use crate::grid::{Field, QuadratureWeights, SpaceTimeGrid};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Sigmoid,
}

impl Activation {
    #[inline]
    pub fn eval(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Sigmoid => 1.0 / (1.0 + (-z).exp()),
        }
    }

    /// Derivative expressed through the activation value.
    #[inline]
    pub fn derivative_from_value(self, s: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - s * s,
            Activation::Sigmoid => s * (1.0 - s),
        }
    }

    /// Uniform bound on `|sigma|`.
    pub fn value_bound(self) -> f64 {
        1.0
    }

    /// Uniform bound on `|sigma'|`.
    pub fn derivative_bound(self) -> f64 {
        match self {
            Activation::Tanh => 1.0,
            Activation::Sigmoid => 0.25,
        }
    }
}

/// Parameters of the network; one entry per neuron in each array.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NetParams {
    pub n: usize,
    pub beta: f64,
    pub activation: Activation,
    pub c: Vec<f64>,
    pub w_t: Vec<f64>,
    pub w: Vec<[f64; 2]>,
    pub eta: Vec<f64>,
    /// Seed the parameters were drawn from, kept for reproducibility.
    pub seed: u64,
}

/// Initialization law: `c ~ U([c_lo, c_hi])` (mean zero requires
/// `c_lo = -c_hi`), all other parameters standard normal.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct InitDistribution {
    pub c_lo: f64,
    pub c_hi: f64,
    pub seed: u64,
}

impl InitDistribution {
    pub fn standard(seed: u64) -> Self {
        Self {
            c_lo: -1.0,
            c_hi: 1.0,
            seed,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn c_symmetric(&self) -> bool {
        self.c_lo == -self.c_hi
    }
}

fn check_beta(beta: f64) -> Result<()> {
    if beta > 0.5 && beta < 1.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("beta must lie strictly in (1/2, 1), got {beta}")))
    }
}

/// Draw i.i.d. parameters per neuron; reproducible for a fixed seed.
pub fn init_params(
    n: usize,
    beta: f64,
    activation: Activation,
    dist: &InitDistribution,
) -> Result<NetParams> {
    if n == 0 {
        return Err(Error::Config("neuron count must be at least 1".into()));
    }
    check_beta(beta)?;
    if dist.c_hi <= dist.c_lo || dist.c_hi.is_nan() {
        return Err(Error::Config("c support must be a nonempty interval".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(dist.seed);
    let mut params = NetParams {
        n,
        beta,
        activation,
        c: Vec::with_capacity(n),
        w_t: Vec::with_capacity(n),
        w: Vec::with_capacity(n),
        eta: Vec::with_capacity(n),
        seed: dist.seed,
    };
    for _ in 0..n {
        params.c.push(rng.random_range(dist.c_lo..=dist.c_hi));
        params.w_t.push(rng.sample(StandardNormal));
        params
            .w
            .push([rng.sample(StandardNormal), rng.sample(StandardNormal)]);
        params.eta.push(rng.sample(StandardNormal));
    }
    Ok(params)
}

impl NetParams {
    pub fn scale(&self) -> f64 {
        (self.n as f64).powf(-self.beta)
    }

    pub fn param_count(&self) -> usize {
        5 * self.n
    }

    /// Flatten into the documented ordering.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.param_count());
        v.extend_from_slice(&self.c);
        v.extend_from_slice(&self.w_t);
        for w in &self.w {
            v.push(w[0]);
            v.push(w[1]);
        }
        v.extend_from_slice(&self.eta);
        v
    }

    pub fn from_flat(&self, flat: &[f64]) -> Result<NetParams> {
        if flat.len() != self.param_count() {
            return Err(Error::Config(format!(
                "flat parameter vector has length {}, expected {}",
                flat.len(),
                self.param_count()
            )));
        }
        let n = self.n;
        let mut out = self.clone();
        out.c.copy_from_slice(&flat[..n]);
        out.w_t.copy_from_slice(&flat[n..2 * n]);
        for i in 0..n {
            out.w[i] = [flat[2 * n + 2 * i], flat[2 * n + 2 * i + 1]];
        }
        out.eta.copy_from_slice(&flat[4 * n..]);
        Ok(out)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<NetParams> {
        let p: NetParams = serde_json::from_str(s)?;
        check_beta(p.beta)?;
        Ok(p)
    }
}

fn node_coord_table(grid: &SpaceTimeGrid) -> Vec<[f64; 3]> {
    let mut coords = Vec::with_capacity(grid.node_count());
    for ti in 0..grid.t_count {
        let t = grid.t(ti);
        for xi in 0..grid.x_count {
            let x = grid.x(xi);
            for yi in 0..grid.y_count {
                coords.push([t, x, grid.y(yi)]);
            }
        }
    }
    coords
}

/// Evaluate the network on all grid nodes.
pub fn eval_net(params: &NetParams, grid: &SpaceTimeGrid) -> Result<Field> {
    let scale = params.scale();
    let coords = node_coord_table(grid);
    let chunk_size = grid.space_count().max(1024);
    let mut values = vec![0.0; grid.node_count()];
    values
        .par_chunks_mut(chunk_size)
        .enumerate()
        .for_each(|(chunk_i, chunk)| {
            let offset = chunk_i * chunk_size;
            for (j, out) in chunk.iter_mut().enumerate() {
                let [t, x, y] = coords[offset + j];
                let mut acc = 0.0;
                for i in 0..params.n {
                    let z = params.w_t[i] * t + params.w[i][0] * x + params.w[i][1] * y
                        + params.eta[i];
                    acc += params.c[i] * params.activation.eval(z);
                }
                *out = scale * acc;
            }
        });
    Field::from_values(grid, values)
}

/// Cached activation values per (neuron, node); lets one epoch share the
/// transcendental evaluations between the network value and its gradient.
pub struct NetFeatures {
    grid: SpaceTimeGrid,
    activation: Activation,
    coords: Vec<[f64; 3]>,
    /// Row-major `n x node_count` activation values.
    sigma: Vec<f64>,
}

impl NetFeatures {
    pub fn compute(params: &NetParams, grid: &SpaceTimeGrid) -> Self {
        let nodes = grid.node_count();
        let coords = node_coord_table(grid);
        let mut sigma = vec![0.0; params.n * nodes];
        sigma
            .par_chunks_mut(nodes)
            .enumerate()
            .for_each(|(i, row)| {
                let (wt, wx, wy, eta) =
                    (params.w_t[i], params.w[i][0], params.w[i][1], params.eta[i]);
                for (s, [t, x, y]) in row.iter_mut().zip(&coords) {
                    *s = params.activation.eval(wt * t + wx * x + wy * y + eta);
                }
            });
        Self {
            grid: *grid,
            activation: params.activation,
            coords,
            sigma,
        }
    }

    pub fn eval(&self, params: &NetParams) -> Result<Field> {
        let nodes = self.grid.node_count();
        let scale = params.scale();
        let mut values = vec![0.0; nodes];
        for i in 0..params.n {
            let c = params.c[i] * scale;
            let row = &self.sigma[i * nodes..(i + 1) * nodes];
            for (v, s) in values.iter_mut().zip(row) {
                *v += c * s;
            }
        }
        Field::from_values(&self.grid, values)
    }

    /// Quadrature pairing of the per-parameter network derivatives with an
    /// adjoint field: per neuron
    /// `dJ/dc = N^{-beta} sum w sigma u_hat`,
    /// `dJ/dw_t = N^{-beta} c sum w sigma' t u_hat`, spatial analogues with
    /// `x` resp. `y`, and `dJ/deta` with the factor 1.
    pub fn param_gradient(
        &self,
        params: &NetParams,
        weights: &QuadratureWeights,
        u_hat: &Field,
    ) -> Result<Vec<f64>> {
        if !u_hat.grid().same_as(&self.grid) {
            return Err(Error::GridMismatch("adjoint field on a different grid".into()));
        }
        let nodes = self.grid.node_count();
        let scale = params.scale();
        // weighted adjoint, shared across neurons
        let wu: Vec<f64> = weights
            .node
            .iter()
            .zip(u_hat.values())
            .map(|(w, u)| w * u)
            .collect();
        let per_neuron: Vec<[f64; 5]> = (0..params.n)
            .into_par_iter()
            .map(|i| {
                let row = &self.sigma[i * nodes..(i + 1) * nodes];
                let mut acc = [0.0; 5];
                for ((&s, &wuj), &[t, x, y]) in row.iter().zip(&wu).zip(&self.coords) {
                    if wuj == 0.0 {
                        continue;
                    }
                    let sp = self.activation.derivative_from_value(s);
                    acc[0] += s * wuj;
                    acc[1] += sp * t * wuj;
                    acc[2] += sp * x * wuj;
                    acc[3] += sp * y * wuj;
                    acc[4] += sp * wuj;
                }
                acc
            })
            .collect();
        let n = params.n;
        let mut grad = vec![0.0; params.param_count()];
        for (i, acc) in per_neuron.iter().enumerate() {
            let c = params.c[i];
            grad[i] = scale * acc[0];
            grad[n + i] = scale * c * acc[1];
            grad[2 * n + 2 * i] = scale * c * acc[2];
            grad[2 * n + 2 * i + 1] = scale * c * acc[3];
            grad[4 * n + i] = scale * c * acc[4];
        }
        Ok(grad)
    }
}

/// One-shot parameter gradient (recomputes the activation table).
pub fn net_param_gradient(params: &NetParams, u_hat: &Field) -> Result<Vec<f64>> {
    let grid = u_hat.grid();
    let weights = QuadratureWeights::new(grid);
    NetFeatures::compute(params, grid).param_gradient(params, &weights, u_hat)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::SpaceTimeGrid;

    fn tiny_params(n: usize) -> NetParams {
        init_params(n, 2.0 / 3.0, Activation::Tanh, &InitDistribution::standard(5)).unwrap()
    }

    #[test]
    fn init_is_reproducible() {
        let dist = InitDistribution::standard(42);
        let a = init_params(20, 0.75, Activation::Tanh, &dist).unwrap();
        let b = init_params(20, 0.75, Activation::Tanh, &dist).unwrap();
        assert_eq!(a.to_flat(), b.to_flat());
    }

    #[test]
    fn c_sample_mean_is_near_zero() {
        let p = init_params(10_000, 0.6, Activation::Tanh, &InitDistribution::standard(3)).unwrap();
        let mean: f64 = p.c.iter().sum::<f64>() / p.n as f64;
        // 3 sigma / sqrt(n) with Var(U[-1,1]) = 1/3
        assert!(mean.abs() < 3.0 * (1.0 / 3.0f64.sqrt()) / 100.0, "mean {mean}");
    }

    #[test]
    fn beta_outside_range_rejected() {
        let dist = InitDistribution::standard(1);
        assert!(init_params(4, 0.4, Activation::Tanh, &dist).is_err());
        assert!(init_params(4, 0.5, Activation::Tanh, &dist).is_err());
        assert!(init_params(4, 1.0, Activation::Tanh, &dist).is_err());
    }

    #[test]
    fn eval_examples() {
        let grid = SpaceTimeGrid::unit_experiment(4, 4, 4).unwrap();
        let mut p = tiny_params(1);
        p.c = vec![0.0];
        assert!(eval_net(&p, &grid).unwrap().values().iter().all(|&v| v == 0.0));

        p.c = vec![1.0];
        p.w_t = vec![0.0];
        p.w = vec![[0.0, 0.0]];
        p.eta = vec![0.0];
        assert!(eval_net(&p, &grid).unwrap().values().iter().all(|&v| v == 0.0));

        p.eta = vec![1.0];
        let expect = 1.0f64.tanh();
        let f = eval_net(&p, &grid).unwrap();
        assert!(f.values().iter().all(|&v| (v - expect).abs() < 1e-15));
    }

    #[test]
    fn eval_magnitude_bound() {
        let grid = SpaceTimeGrid::unit_experiment(5, 5, 5).unwrap();
        let p = tiny_params(40);
        let bound = (p.n as f64).powf(1.0 - p.beta)
            * p.c.iter().fold(0.0f64, |a, &c| a.max(c.abs()))
            * p.activation.value_bound();
        let f = eval_net(&p, &grid).unwrap();
        assert!(f.values().iter().all(|&v| v.abs() <= bound));
    }

    #[test]
    fn features_match_direct_eval() {
        let grid = SpaceTimeGrid::unit_experiment(5, 6, 7).unwrap();
        let p = tiny_params(9);
        let direct = eval_net(&p, &grid).unwrap();
        let via = NetFeatures::compute(&p, &grid).eval(&p).unwrap();
        for (a, b) in direct.values().iter().zip(via.values()) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn gradient_zero_for_zero_adjoint() {
        let grid = SpaceTimeGrid::unit_experiment(5, 5, 5).unwrap();
        let p = tiny_params(3);
        let g = net_param_gradient(&p, &Field::zeros(&grid)).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gradient_c_factor_structure() {
        let grid = SpaceTimeGrid::unit_experiment(5, 5, 5).unwrap();
        let mut p = tiny_params(3);
        p.c = vec![0.0; 3];
        let u_hat = crate::grid::sample_function(&grid, |t, x, y| t + x + y + 0.1).unwrap();
        let g = net_param_gradient(&p, &u_hat).unwrap();
        let n = p.n;
        // c components carry no c factor and stay generically nonzero
        assert!(g[..n].iter().any(|&v| v != 0.0));
        // w_t, w, eta components all carry the factor c = 0
        assert!(g[n..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn delta_weighted_field_recovers_analytic_derivatives() {
        let grid = SpaceTimeGrid::unit_experiment(5, 5, 5).unwrap();
        let weights = QuadratureWeights::new(&grid);
        let p = tiny_params(2);
        let (ti, xi, yi) = (2, 3, 1);
        let idx = grid.idx(ti, xi, yi);
        let mut values = vec![0.0; grid.node_count()];
        values[idx] = 1.0 / weights.node[idx];
        let delta = Field::from_values(&grid, values).unwrap();
        let g = net_param_gradient(&p, &delta).unwrap();
        let (t, x, y) = (grid.t(ti), grid.x(xi), grid.y(yi));
        let scale = p.scale();
        for i in 0..p.n {
            let z = p.w_t[i] * t + p.w[i][0] * x + p.w[i][1] * y + p.eta[i];
            let s = z.tanh();
            let sp = 1.0 - s * s;
            assert!((g[i] - scale * s).abs() < 1e-12);
            assert!((g[p.n + i] - scale * p.c[i] * sp * t).abs() < 1e-12);
            assert!((g[2 * p.n + 2 * i] - scale * p.c[i] * sp * x).abs() < 1e-12);
            assert!((g[2 * p.n + 2 * i + 1] - scale * p.c[i] * sp * y).abs() < 1e-12);
            assert!((g[4 * p.n + i] - scale * p.c[i] * sp).abs() < 1e-12);
        }
    }

    #[test]
    fn flat_round_trip() {
        let p = tiny_params(4);
        let flat = p.to_flat();
        assert_eq!(flat.len(), 20);
        let q = p.from_flat(&flat).unwrap();
        assert_eq!(p.to_flat(), q.to_flat());
    }

    #[test]
    fn json_round_trip() {
        let p = tiny_params(3);
        let s = p.to_json().unwrap();
        assert!(s.contains("\"beta\""));
        assert!(s.contains("\"seed\""));
        let q = NetParams::from_json(&s).unwrap();
        assert_eq!(p.to_flat(), q.to_flat());
        assert_eq!(p.seed, q.seed);
    }
}
