//! Infinite-width training flow: the source field evolves by
//! `d/dtau g = -alpha(tau) T_{B0} u_hat(g)` with the kernel frozen at
//! initialization, integrated by explicit Euler in the training time.
//!
//! Alongside the flow this module evaluates the diagnostics the theory
//! pins down: the loss-decay identity `dJ/dtau = -alpha Q`, the quadratic
//! functional `Q = (u_hat, T_{B0} u_hat)`, its regularity bound in terms of
//! the integrated learning rate via the second-level adjoint pair, and the
//! distance between finite-width gradient-descent trajectories and the flow.

use crate::adjoint::{solve_adjoint, solve_second_level};
use crate::error::{Error, Result};
use crate::forward::{ForwardSolution, PdeSolver};
use crate::grid::{inner_product_l2, norm, Field, NormKind, QuadratureWeights, SpaceTimeGrid};
use crate::kernel::KernelOperator;
use crate::loss::GradientPipeline;
use crate::net::{init_params, Activation, InitDistribution, NetParams};
use crate::optim::{scaled_rate, Schedule};
use crate::problem::PdeProblem;
use std::fmt::Write as _;
use std::sync::Arc;

/// One step of flow telemetry.
#[derive(Debug, Clone, Copy)]
pub struct LimitRecord {
    pub tau: f64,
    pub j: f64,
    pub q: f64,
    pub uhat_l2: f64,
    pub rate: f64,
}

/// The flow state plus everything needed to advance it.
pub struct LimitFlow {
    problem: PdeProblem,
    solver: Arc<PdeSolver>,
    weights: QuadratureWeights,
    kernel: Arc<KernelOperator>,
    h: Field,
    pub g_star: Field,
    pub tau: f64,
    step_count: u64,
    pub history: Vec<LimitRecord>,
    /// Fixed test fields for the weak-vanishing proxy `(phi, u_hat)`.
    probes: Vec<Field>,
    pub probe_history: Vec<Vec<f64>>,
}

struct FlowEval {
    fwd: ForwardSolution,
    u_hat: Field,
    t_uhat: Field,
    j: f64,
    q: f64,
    uhat_l2: f64,
}

impl LimitFlow {
    pub fn new(
        problem: PdeProblem,
        grid: &SpaceTimeGrid,
        kernel: Arc<KernelOperator>,
    ) -> Result<Self> {
        if !kernel.grid().same_as(grid) {
            return Err(Error::GridMismatch("kernel on a different grid".into()));
        }
        let solver = PdeSolver::new(&problem, grid)?;
        let weights = QuadratureWeights::new(grid);
        let h = problem.target_on(grid)?;
        Ok(Self {
            problem,
            solver,
            weights,
            kernel,
            h,
            g_star: Field::zeros(grid),
            tau: 0.0,
            step_count: 0,
            history: Vec::new(),
            probes: Vec::new(),
            probe_history: Vec::new(),
        })
    }

    pub fn with_probes(mut self, probes: Vec<Field>) -> Self {
        self.probes = probes;
        self
    }

    pub fn grid(&self) -> &SpaceTimeGrid {
        self.solver.grid()
    }

    pub fn kernel(&self) -> &KernelOperator {
        &self.kernel
    }

    fn evaluate(&self) -> Result<FlowEval> {
        let fwd = self.solver.solve_forward(&self.problem, &self.g_star)?;
        let residual = fwd.u.sub(&self.h)?;
        let j = 0.5 * inner_product_l2(&self.weights, &residual, &residual)?;
        let u_hat = solve_adjoint(&self.problem, &fwd, &residual)?.u_hat;
        let t_uhat = self.kernel.apply(&u_hat)?;
        let q = inner_product_l2(&self.weights, &u_hat, &t_uhat)?;
        let uhat_l2 = norm(&self.weights, &u_hat, NormKind::L2Dt)?;
        Ok(FlowEval {
            fwd,
            u_hat,
            t_uhat,
            j,
            q,
            uhat_l2,
        })
    }

    fn push_record(&mut self, eval: &FlowEval, rate: f64) -> Result<()> {
        self.history.push(LimitRecord {
            tau: self.tau,
            j: eval.j,
            q: eval.q,
            uhat_l2: eval.uhat_l2,
            rate,
        });
        if !self.probes.is_empty() {
            let mut row = Vec::with_capacity(self.probes.len());
            for phi in &self.probes {
                row.push(inner_product_l2(&self.weights, phi, &eval.u_hat)?);
            }
            self.probe_history.push(row);
        }
        Ok(())
    }

    /// Advance by one explicit Euler step: record the current state at
    /// `tau`, then `g -= dtau * alpha(tau) * T_{B0} u_hat`.
    pub fn step(&mut self, dtau: f64, sched: &mut Schedule) -> Result<()> {
        if dtau <= 0.0 || dtau.is_nan() {
            return Err(Error::Config("dtau must be positive".into()));
        }
        let eval = self.evaluate().map_err(|e| match e {
            Error::Divergence { time_index, detail } => Error::Divergence {
                time_index,
                detail: format!("{detail} (training time {})", self.tau),
            },
            other => other,
        })?;
        let rate = sched.rate_at(self.step_count);
        self.push_record(&eval, rate)?;
        sched.observe(eval.j);
        self.g_star = self.g_star.axpy(-dtau * rate, &eval.t_uhat)?;
        self.tau += dtau;
        self.step_count += 1;
        Ok(())
    }

    /// Run `steps` Euler steps and append a final evaluation record.
    pub fn run(&mut self, steps: usize, dtau: f64, sched: &mut Schedule) -> Result<()> {
        for _ in 0..steps {
            self.step(dtau, sched)?;
        }
        let eval = self.evaluate()?;
        let rate = sched.rate_at(self.step_count);
        self.push_record(&eval, rate)
    }

    /// Second-level evaluation at the current state: `(w_hat, v_hat)` and
    /// the adjoint-route training-time derivative of `Q`.
    pub fn second_level(&self) -> Result<SecondLevelEval> {
        let eval = self.evaluate()?;
        let source_w = eval.t_uhat.scale(2.0);
        let (w_hat, v_hat) =
            solve_second_level(&self.problem, &eval.fwd, &eval.u_hat, &source_w)?;
        let pairing = inner_product_l2(&self.weights, &eval.t_uhat, &v_hat)?;
        Ok(SecondLevelEval {
            vhat_l2: norm(&self.weights, &v_hat, NormKind::L2Dt)?,
            what_linf: norm(&self.weights, &w_hat, NormKind::LinfDt)?,
            t_uhat_dot_vhat: pairing,
        })
    }

    /// History export: `tau,J,Q,norm_uhat_L2,rate`.
    pub fn history_csv(&self) -> String {
        let mut out = String::from("tau,J,Q,norm_uhat_L2,rate\n");
        for r in &self.history {
            let _ = writeln!(
                out,
                "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
                r.tau, r.j, r.q, r.uhat_l2, r.rate
            );
        }
        out
    }
}

pub struct SecondLevelEval {
    pub vhat_l2: f64,
    pub what_linf: f64,
    /// `(T_{B0} u_hat, v_hat)`; `dQ/dtau = -alpha` times this.
    pub t_uhat_dot_vhat: f64,
}

/// Maximum relative discrepancy between the centered difference of `J` and
/// `-alpha Q` over the interior of a uniformly spaced history.
pub fn check_decay_identity(history: &[LimitRecord], dtau: f64) -> Result<f64> {
    if history.len() < 3 {
        return Err(Error::Config("need at least 3 history entries".into()));
    }
    let scale_floor = history
        .iter()
        .map(|r| (r.rate * r.q).abs())
        .fold(0.0f64, f64::max)
        * 1e-12;
    let mut worst = 0.0f64;
    for k in 1..history.len() - 1 {
        let fd = (history[k + 1].j - history[k - 1].j) / (2.0 * dtau);
        let predicted = -history[k].rate * history[k].q;
        let denom = predicted.abs().max(scale_floor);
        if denom == 0.0 {
            continue; // fixed point: both sides vanish
        }
        worst = worst.max((fd - predicted).abs() / denom);
    }
    Ok(worst)
}

/// `J` may not increase along the flow beyond round-off.
pub fn max_monotonicity_violation(history: &[LimitRecord]) -> f64 {
    let j0 = history.first().map(|r| r.j).unwrap_or(0.0);
    let mut worst = 0.0f64;
    for w in history.windows(2) {
        worst = worst.max(w[1].j - w[0].j);
    }
    worst - 10.0 * f64::EPSILON * j0
}

#[derive(Debug, Clone)]
pub struct RegularityReport {
    /// Estimated Lipschitz-type constant `C2B * max|u_hat| * max|v_hat|`.
    pub lq_hat: f64,
    /// Largest `|Q(tau2)-Q(tau1)| - Lq int alpha` over all sampled pairs
    /// (negative when the bound holds everywhere).
    pub max_bound_violation: f64,
    /// Max relative discrepancy of `dQ/dtau` from the second-level route
    /// against the centered difference of `Q`.
    pub dq_max_rel_discrepancy: f64,
    pub vhat_l2_max: f64,
    pub what_linf_max: f64,
}

/// Run the flow for `steps` while evaluating the second-level adjoints at
/// every state, then check the regularity bound over all history pairs.
pub fn check_regularity_bound(
    flow: &mut LimitFlow,
    steps: usize,
    dtau: f64,
    sched: &mut Schedule,
) -> Result<RegularityReport> {
    let kernel_l2 = flow.kernel.weighted_l2_norm();
    let mut dq_adj = Vec::with_capacity(steps + 1);
    let mut vhat_max = 0.0f64;
    let mut what_max = 0.0f64;
    for _ in 0..steps {
        let sl = flow.second_level()?;
        vhat_max = vhat_max.max(sl.vhat_l2);
        what_max = what_max.max(sl.what_linf);
        dq_adj.push(-sched.rate_at(flow.step_count) * sl.t_uhat_dot_vhat);
        flow.step(dtau, sched)?;
    }
    let sl = flow.second_level()?;
    vhat_max = vhat_max.max(sl.vhat_l2);
    what_max = what_max.max(sl.what_linf);
    dq_adj.push(-sched.rate_at(flow.step_count) * sl.t_uhat_dot_vhat);
    let eval = flow.evaluate()?;
    let rate = sched.rate_at(flow.step_count);
    flow.push_record(&eval, rate)?;

    let history = &flow.history;
    let uhat_max = history.iter().map(|r| r.uhat_l2).fold(0.0f64, f64::max);
    let lq_hat = kernel_l2 * uhat_max * vhat_max;

    // cumulative integral of alpha on the step grid
    let mut cum = vec![0.0; history.len()];
    for k in 1..history.len() {
        cum[k] = cum[k - 1] + dtau * history[k - 1].rate;
    }
    let mut max_violation = f64::NEG_INFINITY;
    for i in 0..history.len() {
        for j in i + 1..history.len() {
            let lhs = (history[j].q - history[i].q).abs();
            let rhs = lq_hat * (cum[j] - cum[i]);
            max_violation = max_violation.max(lhs - rhs);
        }
    }

    let q_scale = history.iter().map(|r| r.q.abs()).fold(0.0f64, f64::max);
    let mut dq_worst = 0.0f64;
    for k in 1..history.len() - 1 {
        let fd = (history[k + 1].q - history[k - 1].q) / (2.0 * dtau);
        let adj = dq_adj[k];
        let denom = adj.abs().max(1e-9 * q_scale.max(1e-300));
        dq_worst = dq_worst.max((fd - adj).abs() / denom);
    }

    Ok(RegularityReport {
        lq_hat,
        max_bound_violation: max_violation,
        dq_max_rel_discrepancy: dq_worst,
        vhat_l2_max: vhat_max,
        what_linf_max: what_max,
    })
}

/// Distances between a finite-width trajectory and the limit flow at one
/// checkpoint, in the norms the infinite-width statement uses.
#[derive(Debug, Clone, Copy)]
pub struct CheckpointDistance {
    pub step: usize,
    pub tau: f64,
    pub u_mean: f64,
    pub u_se: f64,
    pub uhat_mean: f64,
    pub uhat_se: f64,
    pub g_mean: f64,
    pub g_se: f64,
}

#[derive(Debug, Clone)]
pub struct NDistances {
    pub n: usize,
    pub rows: Vec<CheckpointDistance>,
}

pub struct CompareConfig {
    pub dtau: f64,
    pub steps: usize,
    pub checkpoints: Vec<usize>,
    pub seeds: Vec<u64>,
    pub base_rate: f64,
    pub beta: f64,
    pub activation: Activation,
}

struct Snapshot {
    u: Field,
    u_hat: Field,
    g: Field,
}

fn mean_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Plain gradient descent with the width-scaled rate, snapshotting the
/// trajectory at the requested steps.
fn finite_trajectory(
    pipeline: &GradientPipeline,
    mut params: NetParams,
    cfg: &CompareConfig,
) -> Result<Vec<Snapshot>> {
    let sched = Schedule::robbins_monro(cfg.base_rate, cfg.dtau);
    let mut snaps = Vec::new();
    for step in 0..=cfg.steps {
        let report = pipeline.gradient(&params)?;
        if cfg.checkpoints.contains(&step) {
            let g = crate::net::eval_net(&params, pipeline.grid())?;
            snaps.push(Snapshot {
                u: report.u.clone(),
                u_hat: report.u_hat.clone(),
                g,
            });
        }
        if step == cfg.steps {
            break;
        }
        let rate = cfg.dtau * scaled_rate(&sched, params.n, cfg.beta, step as u64);
        let flat = params.to_flat();
        let moved: Vec<f64> = flat
            .iter()
            .zip(&report.grad)
            .map(|(p, g)| p - rate * g)
            .collect();
        params = params.from_flat(&moved)?;
    }
    Ok(snaps)
}

/// Seed-averaged trajectory distances for each width in `n_list` against
/// the limit flow driven by the given frozen kernel.
pub fn compare_finite_to_limit(
    problem: &PdeProblem,
    grid: &SpaceTimeGrid,
    dist: &InitDistribution,
    kernel: Arc<KernelOperator>,
    n_list: &[usize],
    cfg: &CompareConfig,
) -> Result<Vec<NDistances>> {
    // snapshots are collected in step order; keep the labels aligned
    let mut cfg = CompareConfig {
        checkpoints: cfg.checkpoints.clone(),
        seeds: cfg.seeds.clone(),
        ..*cfg
    };
    cfg.checkpoints.sort_unstable();
    cfg.checkpoints.dedup();
    let cfg = &cfg;
    let weights = QuadratureWeights::new(grid);
    // limit trajectory snapshots
    let mut flow = LimitFlow::new(problem.clone(), grid, kernel)?;
    let mut sched = Schedule::robbins_monro(cfg.base_rate, cfg.dtau);
    let mut limit_snaps = Vec::new();
    for step in 0..=cfg.steps {
        if cfg.checkpoints.contains(&step) {
            let fwd = flow.solver.solve_forward(&flow.problem, &flow.g_star)?;
            let residual = fwd.u.sub(&flow.h)?;
            let u_hat = solve_adjoint(&flow.problem, &fwd, &residual)?.u_hat;
            limit_snaps.push(Snapshot {
                u: fwd.u,
                u_hat,
                g: flow.g_star.clone(),
            });
        }
        if step < cfg.steps {
            flow.step(cfg.dtau, &mut sched)?;
        }
    }

    let pipeline = GradientPipeline::new(problem.clone(), grid)?;
    let pair_norm = |a: &Field, b: &Field| -> Result<f64> {
        let d = a.sub(b)?;
        Ok(norm(&weights, &d, NormKind::L2tH1x)? + norm(&weights, &d, NormKind::LinftL2x)?)
    };

    let mut out = Vec::new();
    for &n in n_list {
        let mut per_seed: Vec<Vec<[f64; 3]>> = Vec::new();
        for &seed in &cfg.seeds {
            let params = init_params(n, cfg.beta, cfg.activation, &dist.with_seed(seed))?;
            let snaps = finite_trajectory(&pipeline, params, cfg)?;
            let row: Vec<[f64; 3]> = snaps
                .iter()
                .zip(&limit_snaps)
                .map(|(f, l)| {
                    Ok([
                        pair_norm(&f.u, &l.u)?,
                        pair_norm(&f.u_hat, &l.u_hat)?,
                        norm(&weights, &f.g.sub(&l.g)?, NormKind::L2Dt)?,
                    ])
                })
                .collect::<Result<_>>()?;
            per_seed.push(row);
        }
        let rows = (0..limit_snaps.len())
            .map(|ci| {
                let u: Vec<f64> = per_seed.iter().map(|s| s[ci][0]).collect();
                let uh: Vec<f64> = per_seed.iter().map(|s| s[ci][1]).collect();
                let g: Vec<f64> = per_seed.iter().map(|s| s[ci][2]).collect();
                let (u_mean, u_se) = mean_se(&u);
                let (uhat_mean, uhat_se) = mean_se(&uh);
                let (g_mean, g_se) = mean_se(&g);
                CheckpointDistance {
                    step: cfg.checkpoints[ci],
                    tau: cfg.checkpoints[ci] as f64 * cfg.dtau,
                    u_mean,
                    u_se,
                    uhat_mean,
                    uhat_se,
                    g_mean,
                    g_se,
                }
            })
            .collect();
        out.push(NDistances { n, rows });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::solve_forward;
    use crate::grid::sample_function;
    use crate::kernel::assemble_kernel_monte_carlo;
    use crate::problem::{Nonlinearity, Target};
    use std::sync::Arc as StdArc;

    fn experiment_initial() -> crate::problem::InitialFn {
        StdArc::new(|x: f64, y: f64| {
            0.2 * (4.0 * std::f64::consts::PI * x).sin() * (2.0 * std::f64::consts::PI * y).sin()
        })
    }

    fn heat_with_target(grid: &SpaceTimeGrid) -> PdeProblem {
        let base = PdeProblem::diffusion_only(0.01, Nonlinearity::zero(), experiment_initial());
        let g_target = sample_function(grid, |t, x, y| {
            1600.0 * x * (1.0 - 2.0 * x) * y * y * (0.2 + 0.6 * t - y).powi(2) * (1.0 - y).powi(2)
        })
        .unwrap();
        let h = solve_forward(&base, &g_target, grid).unwrap().u;
        base.with_target(Target::Sampled(h))
    }

    fn small_kernel(grid: &SpaceTimeGrid) -> StdArc<KernelOperator> {
        StdArc::new(
            assemble_kernel_monte_carlo(
                &InitDistribution::standard(1234),
                Activation::Tanh,
                2_000,
                grid,
                crate::kernel::DEFAULT_KERNEL_BUDGET,
            )
            .unwrap(),
        )
    }

    #[test]
    fn fixed_point_stays_fixed() {
        let grid = SpaceTimeGrid::unit_experiment(6, 6, 6).unwrap();
        let base = PdeProblem::diffusion_only(0.01, Nonlinearity::zero(), experiment_initial());
        let h = solve_forward(&base, &Field::zeros(&grid), &grid).unwrap().u;
        let problem = base.with_target(Target::Sampled(h));
        let mut flow = LimitFlow::new(problem, &grid, small_kernel(&grid)).unwrap();
        let mut sched = Schedule::constant(1.0);
        flow.run(3, 0.1, &mut sched).unwrap();
        for r in &flow.history {
            assert!(r.j < 1e-28);
            assert!(r.q.abs() < 1e-28);
        }
        assert!(flow.g_star.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn first_step_decreases_loss() {
        let grid = SpaceTimeGrid::unit_experiment(7, 7, 7).unwrap();
        let problem = heat_with_target(&grid);
        let kernel = small_kernel(&grid);
        let mut previous_drop = f64::INFINITY;
        for dtau in [0.2, 0.1, 0.05] {
            let mut flow = LimitFlow::new(problem.clone(), &grid, kernel.clone()).unwrap();
            let mut sched = Schedule::constant(1.0);
            flow.run(1, dtau, &mut sched).unwrap();
            let drop = flow.history[0].j - flow.history[1].j;
            assert!(drop > 0.0, "one step must strictly decrease J");
            assert!(drop < previous_drop);
            previous_drop = drop;
        }
    }

    #[test]
    fn q_matches_definitional_quadratic_form() {
        let grid = SpaceTimeGrid::unit_experiment(6, 6, 6).unwrap();
        let weights = QuadratureWeights::new(&grid);
        let problem = heat_with_target(&grid);
        let kernel = small_kernel(&grid);
        let mut flow = LimitFlow::new(problem.clone(), &grid, kernel.clone()).unwrap();
        let mut sched = Schedule::constant(0.5);
        flow.run(2, 0.05, &mut sched).unwrap();
        // recompute Q at the initial state independently
        let fwd = solve_forward(&problem, &Field::zeros(&grid), &grid).unwrap();
        let h = problem.target_on(&grid).unwrap();
        let residual = fwd.u.sub(&h).unwrap();
        let u_hat = solve_adjoint(&problem, &fwd, &residual).unwrap().u_hat;
        let q0 = inner_product_l2(&weights, &u_hat, &kernel.apply(&u_hat).unwrap()).unwrap();
        assert!((flow.history[0].q - q0).abs() <= 1e-12 * q0.abs().max(1e-30));
        assert!(flow.history.iter().all(|r| r.q >= 0.0));
    }

    #[test]
    fn decay_identity_discrepancy_shrinks_with_dtau() {
        let grid = SpaceTimeGrid::unit_experiment(6, 6, 6).unwrap();
        let problem = heat_with_target(&grid);
        let kernel = small_kernel(&grid);
        let mut disc = Vec::new();
        for dtau in [2e-2, 1e-2] {
            let mut flow = LimitFlow::new(problem.clone(), &grid, kernel.clone()).unwrap();
            let mut sched = Schedule::robbins_monro(1.0, dtau);
            flow.run(40, dtau, &mut sched).unwrap();
            disc.push(check_decay_identity(&flow.history, dtau).unwrap());
        }
        assert!(disc[0] < 5e-2, "discrepancy {}", disc[0]);
        let ratio = disc[1] / disc[0];
        assert!(
            (0.3..=0.7).contains(&ratio),
            "halving dtau should roughly halve the discrepancy, got {ratio}"
        );
    }

    #[test]
    fn regularity_inputs_trivial_cases() {
        // tau2 == tau1 and u_hat == 0 both make the bound degenerate-true
        let grid = SpaceTimeGrid::unit_experiment(6, 6, 6).unwrap();
        let base = PdeProblem::diffusion_only(0.01, Nonlinearity::zero(), experiment_initial());
        let h = solve_forward(&base, &Field::zeros(&grid), &grid).unwrap().u;
        let problem = base.with_target(Target::Sampled(h));
        let mut flow = LimitFlow::new(problem, &grid, small_kernel(&grid)).unwrap();
        let mut sched = Schedule::constant(1.0);
        let report = check_regularity_bound(&mut flow, 3, 0.1, &mut sched).unwrap();
        assert!(report.max_bound_violation <= 0.0);
        assert_eq!(report.dq_max_rel_discrepancy, 0.0);
    }

    #[test]
    fn comparing_limit_against_itself_is_zero() {
        let grid = SpaceTimeGrid::unit_experiment(5, 5, 5).unwrap();
        let problem = heat_with_target(&grid);
        let kernel = small_kernel(&grid);
        let mut a = LimitFlow::new(problem.clone(), &grid, kernel.clone()).unwrap();
        let mut b = LimitFlow::new(problem, &grid, kernel).unwrap();
        let mut s1 = Schedule::constant(0.5);
        let mut s2 = Schedule::constant(0.5);
        a.run(3, 0.1, &mut s1).unwrap();
        b.run(3, 0.1, &mut s2).unwrap();
        let d = a.g_star.sub(&b.g_star).unwrap();
        assert!(d.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn history_csv_has_expected_header() {
        let grid = SpaceTimeGrid::unit_experiment(5, 5, 5).unwrap();
        let problem = heat_with_target(&grid);
        let mut flow = LimitFlow::new(problem, &grid, small_kernel(&grid)).unwrap();
        let mut sched = Schedule::constant(0.5);
        flow.run(2, 0.1, &mut sched).unwrap();
        let csv = flow.history_csv();
        assert!(csv.starts_with("tau,J,Q,norm_uhat_L2,rate\n"));
        assert_eq!(csv.lines().count(), 1 + 3);
    }
}
