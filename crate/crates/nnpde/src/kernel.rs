//! The tangent kernel of the shallow network, its dense Nystrom-style
//! discretization on a space-time grid, the associated integral operator and
//! its spectrum.
//!
//! Per neuron the kernel is a Gram kernel,
//!
//! ```text
//! k(p,p') = sigma(z) sigma(z') + c^2 sigma'(z) sigma'(z') (t t' + x.x' + 1)
//! ```
//!
//! so averaging over neurons (empirical measure) or over initialization
//! samples (Monte Carlo) is an average of positive semi-definite rank-5
//! contributions. Assembly accumulates those feature Gram blocks in a fixed
//! order, parallelized over output rows, which keeps the result bitwise
//! deterministic for any thread count.

use crate::error::{Error, Result};
use crate::grid::{Field, QuadratureWeights, SpaceTimeGrid};
use crate::net::{Activation, InitDistribution, NetParams};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

pub const DEFAULT_KERNEL_BUDGET: usize = 2 << 30;

/// One neuron's parameters for pointwise kernel evaluation.
#[derive(Debug, Clone, Copy)]
pub struct NeuronParams {
    pub c: f64,
    pub w_t: f64,
    pub w: [f64; 2],
    pub eta: f64,
}

/// Pointwise tangent kernel of a single neuron; symmetric in its two
/// space-time arguments, physical coordinates throughout.
pub fn kernel_value(
    activation: Activation,
    theta: &NeuronParams,
    p: (f64, f64, f64),
    p2: (f64, f64, f64),
) -> f64 {
    let z = theta.w_t * p.0 + theta.w[0] * p.1 + theta.w[1] * p.2 + theta.eta;
    let z2 = theta.w_t * p2.0 + theta.w[0] * p2.1 + theta.w[1] * p2.2 + theta.eta;
    let s = activation.eval(z);
    let s2 = activation.eval(z2);
    let sp = activation.derivative_from_value(s);
    let sp2 = activation.derivative_from_value(s2);
    s * s2 + theta.c * theta.c * sp * sp2 * (p.0 * p2.0 + p.1 * p2.1 + p.2 * p2.2 + 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelProvenance {
    /// Empirical measure of a parameter set with `n` neurons.
    Empirical { n: usize },
    /// Monte Carlo average over the initialization law.
    MonteCarlo { samples: usize, seed: u64 },
}

/// Dense kernel matrix over grid nodes plus the quadrature weights that turn
/// matrix-vector products into integral-operator applications.
pub struct KernelOperator {
    grid: SpaceTimeGrid,
    /// Row-major `nodes x nodes`, symmetric.
    matrix: Vec<f64>,
    node_weights: Vec<f64>,
    pub provenance: KernelProvenance,
}

fn check_budget(nodes: usize, budget: usize) -> Result<()> {
    let required = nodes * nodes * std::mem::size_of::<f64>();
    if required > budget {
        Err(Error::Resource { required, budget })
    } else {
        Ok(())
    }
}

/// Five feature rows per sample: the activation row and the derivative row
/// scaled by each component of `(t, x, y, 1)`.
fn fill_feature_rows(
    activation: Activation,
    theta: &NeuronParams,
    coords: &[(f64, f64, f64)],
    out: &mut [f64],
) {
    let nodes = coords.len();
    debug_assert_eq!(out.len(), 5 * nodes);
    let (row_s, rest) = out.split_at_mut(nodes);
    let (row_t, rest) = rest.split_at_mut(nodes);
    let (row_x, rest) = rest.split_at_mut(nodes);
    let (row_y, row_1) = rest.split_at_mut(nodes);
    for (j, &(t, x, y)) in coords.iter().enumerate() {
        let z = theta.w_t * t + theta.w[0] * x + theta.w[1] * y + theta.eta;
        let s = activation.eval(z);
        let d = theta.c * activation.derivative_from_value(s);
        row_s[j] = s;
        row_t[j] = d * t;
        row_x[j] = d * x;
        row_y[j] = d * y;
        row_1[j] = d;
    }
}

/// `B += F^T F` with `F` given row-major (`rows x nodes`); output rows are
/// computed in disjoint parallel blocks, additions in fixed sample order.
fn accumulate_gram(b: &mut [f64], f: &[f64], rows: usize, nodes: usize) {
    b.par_chunks_mut(nodes).enumerate().for_each(|(i, b_row)| {
        for s in 0..rows {
            let fi = f[s * nodes + i];
            if fi == 0.0 {
                continue;
            }
            let f_row = &f[s * nodes..(s + 1) * nodes];
            for (bj, &fj) in b_row.iter_mut().zip(f_row) {
                *bj += fi * fj;
            }
        }
    });
}

fn assemble(
    grid: &SpaceTimeGrid,
    activation: Activation,
    thetas: impl Iterator<Item = NeuronParams>,
    count: usize,
    provenance: KernelProvenance,
    budget: usize,
) -> Result<KernelOperator> {
    let nodes = grid.node_count();
    check_budget(nodes, budget)?;
    let coords: Vec<(f64, f64, f64)> = (0..nodes)
        .map(|i| {
            let (ti, xi, yi) = grid.unravel(i);
            (grid.t(ti), grid.x(xi), grid.y(yi))
        })
        .collect();

    const CHUNK: usize = 64;
    let mut matrix = vec![0.0; nodes * nodes];
    let mut features = vec![0.0; 5 * CHUNK * nodes];
    let mut in_chunk = 0;
    for theta in thetas {
        fill_feature_rows(
            activation,
            &theta,
            &coords,
            &mut features[5 * in_chunk * nodes..5 * (in_chunk + 1) * nodes],
        );
        in_chunk += 1;
        if in_chunk == CHUNK {
            accumulate_gram(&mut matrix, &features, 5 * CHUNK, nodes);
            in_chunk = 0;
        }
    }
    if in_chunk > 0 {
        accumulate_gram(&mut matrix, &features[..5 * in_chunk * nodes], 5 * in_chunk, nodes);
    }
    let inv = 1.0 / count as f64;
    matrix.iter_mut().for_each(|v| *v *= inv);

    let weights = QuadratureWeights::new(grid);
    Ok(KernelOperator {
        grid: *grid,
        matrix,
        node_weights: weights.node,
        provenance,
    })
}

/// Kernel of the empirical parameter measure (one term per neuron).
pub fn assemble_kernel_empirical(
    params: &NetParams,
    grid: &SpaceTimeGrid,
    budget: usize,
) -> Result<KernelOperator> {
    let thetas = (0..params.n).map(|i| NeuronParams {
        c: params.c[i],
        w_t: params.w_t[i],
        w: params.w[i],
        eta: params.eta[i],
    });
    assemble(
        grid,
        params.activation,
        thetas,
        params.n,
        KernelProvenance::Empirical { n: params.n },
        budget,
    )
}

/// Monte Carlo approximation of the initialization-law kernel; the seed is
/// recorded in the provenance for reproducibility.
pub fn assemble_kernel_monte_carlo(
    dist: &InitDistribution,
    activation: Activation,
    samples: usize,
    grid: &SpaceTimeGrid,
    budget: usize,
) -> Result<KernelOperator> {
    if samples == 0 {
        return Err(Error::Config("monte carlo sample count must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(dist.seed);
    let (lo, hi) = (dist.c_lo, dist.c_hi);
    let thetas = (0..samples).map(move |_| NeuronParams {
        c: rng.random_range(lo..=hi),
        w_t: rng.sample(StandardNormal),
        w: [rng.sample(StandardNormal), rng.sample(StandardNormal)],
        eta: rng.sample(StandardNormal),
    });
    assemble(
        grid,
        activation,
        thetas,
        samples,
        KernelProvenance::MonteCarlo {
            samples,
            seed: dist.seed,
        },
        budget,
    )
}

impl KernelOperator {
    pub fn grid(&self) -> &SpaceTimeGrid {
        &self.grid
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.matrix[i * self.grid.node_count() + j]
    }

    /// Construct from an explicit dense matrix (used by tests and tooling).
    pub fn from_matrix(grid: &SpaceTimeGrid, matrix: Vec<f64>) -> Result<Self> {
        let nodes = grid.node_count();
        if matrix.len() != nodes * nodes {
            return Err(Error::Data("kernel matrix size mismatch".into()));
        }
        let weights = QuadratureWeights::new(grid);
        Ok(Self {
            grid: *grid,
            matrix,
            node_weights: weights.node,
            provenance: KernelProvenance::Empirical { n: 0 },
        })
    }

    /// Apply the integral operator: `[T u](p) = sum_p' B(p,p') w_p' u(p')`.
    pub fn apply(&self, u_hat: &Field) -> Result<Field> {
        if !u_hat.grid().same_as(&self.grid) {
            return Err(Error::GridMismatch("operator input on a different grid".into()));
        }
        let nodes = self.grid.node_count();
        let wu: Vec<f64> = self
            .node_weights
            .iter()
            .zip(u_hat.values())
            .map(|(w, u)| w * u)
            .collect();
        let mut out = vec![0.0; nodes];
        out.par_chunks_mut(256)
            .enumerate()
            .for_each(|(chunk_i, chunk)| {
                for (j, o) in chunk.iter_mut().enumerate() {
                    let i = chunk_i * 256 + j;
                    let row = &self.matrix[i * nodes..(i + 1) * nodes];
                    let mut acc = 0.0;
                    for (b, w) in row.iter().zip(&wu) {
                        acc += b * w;
                    }
                    *o = acc;
                }
            });
        Field::from_values(&self.grid, out)
    }

    /// Discrete `L_2(D_T x D_T)` norm of the kernel (weighted Frobenius).
    pub fn weighted_l2_norm(&self) -> f64 {
        let nodes = self.grid.node_count();
        let mut acc = 0.0;
        for i in 0..nodes {
            let wi = self.node_weights[i];
            for j in 0..nodes {
                let b = self.matrix[i * nodes + j];
                acc += wi * self.node_weights[j] * b * b;
            }
        }
        acc.sqrt()
    }

    pub fn max_entry_abs(&self) -> f64 {
        self.matrix.iter().fold(0.0f64, |a, &v| a.max(v.abs()))
    }

    pub fn max_asymmetry(&self) -> f64 {
        let nodes = self.grid.node_count();
        let mut worst = 0.0f64;
        for i in 0..nodes {
            for j in 0..i {
                worst = worst.max((self.matrix[i * nodes + j] - self.matrix[j * nodes + i]).abs());
            }
        }
        worst
    }

    /// Eigenvalues (descending) of the symmetrized weighted matrix
    /// `W^{1/2} B W^{1/2}`, truncated to `k_max`.
    pub fn spectrum(&self, k_max: usize) -> Result<Vec<f64>> {
        let nodes = self.grid.node_count();
        let sqrt_w: Vec<f64> = self.node_weights.iter().map(|w| w.sqrt()).collect();
        let mut s = DMatrix::zeros(nodes, nodes);
        for i in 0..nodes {
            for j in 0..nodes {
                s[(i, j)] = sqrt_w[i] * self.matrix[i * nodes + j] * sqrt_w[j];
            }
        }
        let eig = s.symmetric_eigen();
        let mut vals: Vec<f64> = eig.eigenvalues.iter().copied().collect();
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("eigendecomposition produced non-finite values".into()));
        }
        vals.sort_by(|a, b| b.partial_cmp(a).unwrap());
        vals.truncate(k_max);
        Ok(vals)
    }

    /// Weighted RMS entry difference against another kernel on the same
    /// grid; the lazy-training drift diagnostic.
    pub fn rms_difference(&self, other: &KernelOperator) -> Result<f64> {
        if !other.grid.same_as(&self.grid) {
            return Err(Error::GridMismatch("kernels on different grids".into()));
        }
        let n = self.matrix.len() as f64;
        let mut acc = 0.0;
        for (a, b) in self.matrix.iter().zip(&other.matrix) {
            acc += (a - b) * (a - b);
        }
        Ok((acc / n).sqrt())
    }

    pub fn to_csv(&self) -> String {
        use std::fmt::Write as _;
        let nodes = self.grid.node_count();
        let mut out = String::new();
        for i in 0..nodes {
            for j in 0..nodes {
                if j > 0 {
                    out.push(',');
                }
                let _ = write!(out, "{:.16e}", self.matrix[i * nodes + j]);
            }
            out.push('\n');
        }
        out
    }
}

/// Uniform bound on kernel entries from the activation bounds and the
/// compact support of the output weights.
pub fn kernel_linf_bound(activation: Activation, c_max: f64, grid: &SpaceTimeGrid) -> f64 {
    let cs = activation.value_bound();
    let csp = activation.derivative_bound();
    let x2 = grid.x_min.powi(2).max(grid.x_max.powi(2));
    let y2 = grid.y_min.powi(2).max(grid.y_max.powi(2));
    cs * cs + c_max * c_max * csp * csp * (grid.t_max * grid.t_max + x2 + y2 + 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{inner_product_l2, sample_function};
    use crate::net::init_params;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tiny_grid() -> SpaceTimeGrid {
        SpaceTimeGrid::unit_experiment(4, 4, 4).unwrap()
    }

    #[test]
    fn kernel_value_examples() {
        let zero = NeuronParams {
            c: 0.0,
            w_t: 0.0,
            w: [0.0, 0.0],
            eta: 0.0,
        };
        let origin = (0.0, 0.0, 0.0);
        assert_eq!(kernel_value(Activation::Tanh, &zero, origin, origin), 0.0);

        let unit_c = NeuronParams { c: 1.0, ..zero };
        // sigma(0) = 0, sigma'(0) = 1: only the derivative term survives
        assert!((kernel_value(Activation::Tanh, &unit_c, origin, origin) - 1.0).abs() < 1e-15);

        let shifted = NeuronParams {
            c: 1.0,
            eta: 1.0,
            ..zero
        };
        let th = 1.0f64.tanh();
        let expect = th * th + (1.0 - th * th).powi(2);
        let got = kernel_value(Activation::Tanh, &shifted, origin, origin);
        assert!((got - expect).abs() < 1e-15, "{got} vs {expect}");
    }

    #[test]
    fn kernel_value_symmetric_in_arguments() {
        let theta = NeuronParams {
            c: 0.7,
            w_t: -0.4,
            w: [1.2, 0.3],
            eta: 0.1,
        };
        let p = (0.2, 0.3, 0.9);
        let q = (0.8, 0.1, 0.4);
        let a = kernel_value(Activation::Sigmoid, &theta, p, q);
        let b = kernel_value(Activation::Sigmoid, &theta, q, p);
        assert_eq!(a, b);
    }

    #[test]
    fn empirical_kernel_matches_pointwise_definition() {
        let grid = tiny_grid();
        let params = init_params(3, 0.6, Activation::Tanh, &InitDistribution::standard(11)).unwrap();
        let k = assemble_kernel_empirical(&params, &grid, DEFAULT_KERNEL_BUDGET).unwrap();
        let nodes = grid.node_count();
        let coord = |i: usize| {
            let (ti, xi, yi) = grid.unravel(i);
            (grid.t(ti), grid.x(xi), grid.y(yi))
        };
        for &(i, j) in &[(0, 0), (5, 17), (40, 2), (nodes - 1, 7)] {
            let mut expect = 0.0;
            for m in 0..params.n {
                let theta = NeuronParams {
                    c: params.c[m],
                    w_t: params.w_t[m],
                    w: params.w[m],
                    eta: params.eta[m],
                };
                expect += kernel_value(Activation::Tanh, &theta, coord(i), coord(j));
            }
            expect /= params.n as f64;
            assert!((k.entry(i, j) - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn degenerate_neuron_gives_zero_matrix() {
        let grid = tiny_grid();
        let mut params =
            init_params(1, 0.6, Activation::Tanh, &InitDistribution::standard(1)).unwrap();
        params.c = vec![0.0];
        params.w_t = vec![0.0];
        params.w = vec![[0.0, 0.0]];
        params.eta = vec![0.0];
        let k = assemble_kernel_empirical(&params, &grid, DEFAULT_KERNEL_BUDGET).unwrap();
        assert_eq!(k.max_entry_abs(), 0.0);
    }

    #[test]
    fn duplicated_neurons_average_to_the_same_kernel() {
        let grid = tiny_grid();
        let one = init_params(1, 0.6, Activation::Tanh, &InitDistribution::standard(9)).unwrap();
        let mut two = one.clone();
        two.n = 2;
        two.c = vec![one.c[0]; 2];
        two.w_t = vec![one.w_t[0]; 2];
        two.w = vec![one.w[0]; 2];
        two.eta = vec![one.eta[0]; 2];
        let ka = assemble_kernel_empirical(&one, &grid, DEFAULT_KERNEL_BUDGET).unwrap();
        let kb = assemble_kernel_empirical(&two, &grid, DEFAULT_KERNEL_BUDGET).unwrap();
        assert!(ka.rms_difference(&kb).unwrap() < 1e-15);
    }

    #[test]
    fn monte_carlo_error_halves_with_quadrupled_samples() {
        // kernel entries share samples, so the per-run error ratio is noisy;
        // average the errors over independent seeds before comparing
        let grid = SpaceTimeGrid::unit_experiment(3, 3, 3).unwrap();
        let dist = InitDistribution::standard(0);
        let reference = assemble_kernel_monte_carlo(
            &dist.with_seed(999),
            Activation::Tanh,
            640_000,
            &grid,
            DEFAULT_KERNEL_BUDGET,
        )
        .unwrap();
        let mean_err = |samples: usize, seeds: std::ops::Range<u64>| {
            let mut acc = 0.0;
            let count = seeds.end - seeds.start;
            for seed in seeds {
                let k = assemble_kernel_monte_carlo(
                    &dist.with_seed(seed),
                    Activation::Tanh,
                    samples,
                    &grid,
                    DEFAULT_KERNEL_BUDGET,
                )
                .unwrap();
                acc += k.rms_difference(&reference).unwrap();
            }
            acc / count as f64
        };
        let e_coarse = mean_err(10_000, 1..9);
        let e_fine = mean_err(40_000, 11..19);
        let ratio = e_coarse / e_fine;
        assert!((1.4..=2.8).contains(&ratio), "MC scaling ratio {ratio}");
    }

    #[test]
    fn apply_examples() {
        let grid = tiny_grid();
        let weights = QuadratureWeights::new(&grid);
        let params = init_params(2, 0.7, Activation::Tanh, &InitDistribution::standard(2)).unwrap();
        let k = assemble_kernel_empirical(&params, &grid, DEFAULT_KERNEL_BUDGET).unwrap();
        let zero = Field::zeros(&grid);
        assert!(k.apply(&zero).unwrap().values().iter().all(|&v| v == 0.0));

        let b0 = 3.25;
        let constant = KernelOperator::from_matrix(
            &grid,
            vec![b0; grid.node_count() * grid.node_count()],
        )
        .unwrap();
        let ones = Field::constant(&grid, 1.0);
        let applied = constant.apply(&ones).unwrap();
        // integral of 1 over D_T is 0.5
        assert!(applied.values().iter().all(|&v| (v - 0.5 * b0).abs() < 1e-12));

        // positive semi-definiteness of the quadratic form
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for _ in 0..100 {
            let u = Field::from_values(
                &grid,
                (0..grid.node_count())
                    .map(|_| rng.random_range(-1.0..1.0))
                    .collect(),
            )
            .unwrap();
            let q = inner_product_l2(&weights, &u, &k.apply(&u).unwrap()).unwrap();
            assert!(q >= -1e-12, "quadratic form {q}");
        }
    }

    #[test]
    fn spectrum_of_rank_one_kernel() {
        let grid = tiny_grid();
        let weights = QuadratureWeights::new(&grid);
        let phi = sample_function(&grid, |t, x, y| t + x - y + 0.5).unwrap();
        let nodes = grid.node_count();
        let mut m = vec![0.0; nodes * nodes];
        for i in 0..nodes {
            for j in 0..nodes {
                m[i * nodes + j] = phi.values()[i] * phi.values()[j];
            }
        }
        let k = KernelOperator::from_matrix(&grid, m).unwrap();
        let spectrum = k.spectrum(10).unwrap();
        let expect = inner_product_l2(&weights, &phi, &phi).unwrap();
        assert!((spectrum[0] - expect).abs() < 1e-10 * expect);
        assert!(spectrum[1].abs() < 1e-10 * expect);
    }

    #[test]
    fn spectrum_of_zero_kernel() {
        let grid = tiny_grid();
        let k = KernelOperator::from_matrix(&grid, vec![0.0; grid.node_count().pow(2)]).unwrap();
        assert!(k.spectrum(5).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn assembled_kernel_symmetric_and_bounded() {
        let grid = tiny_grid();
        let dist = InitDistribution::standard(5);
        let k = assemble_kernel_monte_carlo(&dist, Activation::Tanh, 500, &grid, DEFAULT_KERNEL_BUDGET)
            .unwrap();
        assert!(k.max_asymmetry() <= 1e-12);
        let bound = kernel_linf_bound(Activation::Tanh, 1.0, &grid);
        assert!(k.max_entry_abs() <= bound, "{} > {bound}", k.max_entry_abs());
    }

    #[test]
    fn operator_norm_bounds_hold() {
        let grid = tiny_grid();
        let weights = QuadratureWeights::new(&grid);
        let dist = InitDistribution::standard(13);
        let k = assemble_kernel_monte_carlo(&dist, Activation::Tanh, 400, &grid, DEFAULT_KERNEL_BUDGET)
            .unwrap();
        let b_l2 = k.weighted_l2_norm();
        let linf_bound = kernel_linf_bound(Activation::Tanh, 1.0, &grid);
        let measure: f64 = weights.node.iter().sum();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let u = Field::from_values(
                &grid,
                (0..grid.node_count()).map(|_| rng.random_range(-1.0..1.0)).collect(),
            )
            .unwrap();
            let tu = k.apply(&u).unwrap();
            let u_l2 = inner_product_l2(&weights, &u, &u).unwrap().sqrt();
            let tu_l2 = inner_product_l2(&weights, &tu, &tu).unwrap().sqrt();
            // Hilbert-Schmidt bound and the L2-to-Linf smoothing bound
            assert!(tu_l2 <= b_l2 * u_l2 * (1.0 + 1e-12));
            let tu_linf = tu.values().iter().fold(0.0f64, |a, &v| a.max(v.abs()));
            assert!(tu_linf <= measure.sqrt() * linf_bound * u_l2 * (1.0 + 1e-12));
        }
    }

    #[test]
    fn memory_budget_enforced() {
        let grid = tiny_grid();
        let dist = InitDistribution::standard(5);
        match assemble_kernel_monte_carlo(&dist, Activation::Tanh, 10, &grid, 64) {
            Err(Error::Resource { required, budget }) => {
                assert!(required > budget);
            }
            _ => panic!("expected resource error"),
        }
    }
}
