//! Experiment orchestration: JSON configuration, the two reference
//! calibration scenarios (linear heat and Allen-Cahn reaction), runtime
//! assumption validation, the training loop with CSV/JSON/SVG artifacts,
//! width sweeps and limit-flow runs.
//!
//! Reproducibility contract: a fixed seed yields bitwise-identical CSV logs
//! across runs and thread counts. Parallelism only ever distributes whole
//! runs or output rows, never floating-point reductions.

use crate::error::{Error, Result};
use crate::expr::{self, Var};
use crate::forward::solve_forward;
use crate::grid::{norm, sample_function, Field, NormKind, SpaceTimeGrid};
use crate::kernel::{assemble_kernel_monte_carlo, KernelOperator};
use crate::limit::LimitFlow;
use crate::loss::GradientPipeline;
use crate::net::{init_params, Activation, InitDistribution, NetParams};
use crate::optim::{scaled_rate, ClipFeed, OptimizerKind, OptimizerState, Schedule, ScheduleKind, ZClip};
use crate::plot::{line_plot, PlotOptions, Series};
use crate::problem::{DiffusionValue, Nonlinearity, PdeProblem, Target};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

pub const LOG_HEADER: &str = "epoch,j,rmse_rel,grad_norm,rate,clipped,best_rmse";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    Heat,
    AllenCahn,
    Custom,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub t_count: usize,
    pub x_count: usize,
    pub y_count: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        // coarse default; the reference experiments ran at unspecified,
        // likely finer, resolution
        Self {
            t_count: 33,
            x_count: 17,
            y_count: 17,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            kind: OptimizerKind::Adam,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleConfig {
    pub kind: ScheduleKind,
    pub base_rate: f64,
    pub factor: f64,
    pub patience: u32,
    pub patience_decay: Option<u32>,
    /// Relative improvement threshold of the plateau scheduler.
    pub threshold: f64,
    /// Nominal training time advanced per step.
    pub dtau: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            kind: ScheduleKind::Plateau,
            base_rate: 0.01,
            factor: 0.95,
            patience: 100,
            patience_decay: None,
            threshold: 1e-4,
            dtau: 1.0,
        }
    }
}

impl ScheduleConfig {
    pub fn build(&self) -> Schedule {
        let mut s = match self.kind {
            ScheduleKind::Constant => Schedule::constant(self.base_rate),
            ScheduleKind::RobbinsMonro => Schedule::robbins_monro(self.base_rate, self.dtau),
            ScheduleKind::Plateau => Schedule::plateau(self.base_rate, self.factor, self.patience),
        };
        s.patience_decay = self.patience_decay;
        s.threshold = self.threshold;
        s
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ZClipConfig {
    pub enabled: bool,
    pub smoothing: f64,
    pub z_threshold: f64,
    pub warmup: u32,
    pub feed: ClipFeed,
}

impl Default for ZClipConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            smoothing: 0.98,
            z_threshold: 0.4,
            warmup: 25,
            feed: ClipFeed::PostClip,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LimitConfig {
    pub dtau: f64,
    pub steps: usize,
    pub mc_samples: usize,
    pub mc_seed: u64,
}

impl Default for LimitConfig {
    fn default() -> Self {
        Self {
            dtau: 1e-3,
            steps: 200,
            mc_samples: 10_000,
            mc_seed: 777,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainConfig {
    pub t_max: f64,
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl Default for DomainConfig {
    fn default() -> Self {
        Self {
            t_max: 1.0,
            x_min: 0.0,
            x_max: 0.5,
            y_min: 0.0,
            y_max: 1.0,
        }
    }
}

/// Coefficient expressions over `(t,x,y)` (and `u` for the nonlinearity);
/// see the expression module for the grammar. The derivatives `q_u`, `q_uu`
/// must be supplied explicitly.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CustomScenario {
    pub a11: String,
    pub a12: String,
    pub a22: String,
    pub b1: String,
    pub b2: String,
    pub c: String,
    pub q: String,
    pub q_u: String,
    pub q_uu: String,
    pub f: String,
    pub g_target: String,
    pub domain: DomainConfig,
}

impl Default for CustomScenario {
    fn default() -> Self {
        Self {
            a11: "0.01".into(),
            a12: "0".into(),
            a22: "0.01".into(),
            b1: "0".into(),
            b2: "0".into(),
            c: "0".into(),
            q: "0".into(),
            q_u: "0".into(),
            q_uu: "0".into(),
            f: "0.2 * sin(4*pi*x) * sin(2*pi*y)".into(),
            g_target: "1600 * x * (1 - 2*x) * y^2 * (0.2 + 0.6*t - y)^2 * (1 - y)^2".into(),
            domain: DomainConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub scenario: Scenario,
    pub grid: GridConfig,
    pub n: usize,
    pub beta: f64,
    pub epochs: usize,
    pub activation: Activation,
    pub optimizer: OptimizerConfig,
    pub schedule: ScheduleConfig,
    pub zclip: ZClipConfig,
    pub seed: u64,
    pub seeds_for_averaging: usize,
    pub output_dir: PathBuf,
    pub limit_mode: bool,
    pub n_list: Vec<usize>,
    pub limit: LimitConfig,
    pub custom: Option<CustomScenario>,
    pub kernel_budget: usize,
    pub log_y: bool,
    /// Support half-width of the uniform output-weight initialization.
    pub c_init: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            scenario: Scenario::Heat,
            grid: GridConfig::default(),
            n: 50,
            beta: 2.0 / 3.0,
            epochs: 2000,
            activation: Activation::Tanh,
            optimizer: OptimizerConfig::default(),
            schedule: ScheduleConfig::default(),
            zclip: ZClipConfig::default(),
            seed: 42,
            seeds_for_averaging: 5,
            output_dir: PathBuf::from("out"),
            limit_mode: false,
            n_list: vec![10, 50, 200, 1000],
            limit: LimitConfig::default(),
            custom: None,
            kernel_budget: crate::kernel::DEFAULT_KERNEL_BUDGET,
            log_y: true,
            c_init: 1.0,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(s: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::Config("n must be at least 1".into()));
        }
        if self.beta <= 0.5 || self.beta >= 1.0 || self.beta.is_nan() {
            return Err(Error::Config(format!(
                "beta must lie strictly in (1/2, 1), got {}",
                self.beta
            )));
        }
        if self.scenario == Scenario::Custom && self.custom.is_none() {
            return Err(Error::Config("custom scenario requires the custom block".into()));
        }
        Ok(())
    }

    pub fn dist(&self) -> InitDistribution {
        InitDistribution {
            c_lo: -self.c_init,
            c_hi: self.c_init,
            seed: self.seed,
        }
    }

    pub fn space_time_grid(&self) -> Result<SpaceTimeGrid> {
        let d = match (&self.scenario, &self.custom) {
            (Scenario::Custom, Some(c)) => c.domain.clone(),
            _ => DomainConfig::default(),
        };
        SpaceTimeGrid::new(
            self.grid.t_count,
            self.grid.x_count,
            self.grid.y_count,
            d.t_max,
            (d.x_min, d.x_max),
            (d.y_min, d.y_max),
        )
    }
}

/// The reference target source term.
pub fn target_source(t: f64, x: f64, y: f64) -> f64 {
    1600.0 * x * (1.0 - 2.0 * x) * y * y * (0.2 + 0.6 * t - y).powi(2) * (1.0 - y).powi(2)
}

fn reference_initial() -> crate::problem::InitialFn {
    Arc::new(|x: f64, y: f64| {
        0.2 * (4.0 * std::f64::consts::PI * x).sin() * (2.0 * std::f64::consts::PI * y).sin()
    })
}

/// A scenario assembled on a grid: the problem with its solved target
/// attached, plus the generating source for reference.
pub struct BuiltExperiment {
    pub problem: PdeProblem,
    pub grid: SpaceTimeGrid,
    pub g_target: Field,
}

fn parse_coeff(src: &str, what: &str, allow_u: bool) -> Result<expr::Expr> {
    let e = expr::parse(src).map_err(|err| Error::Config(format!("{what}: {err}")))?;
    if !allow_u && e.uses(Var::U) {
        return Err(Error::Config(format!("{what} must not reference u")));
    }
    Ok(e)
}

pub fn build_experiment(config: &ExperimentConfig) -> Result<BuiltExperiment> {
    let grid = config.space_time_grid()?;
    let (problem, g_target) = match config.scenario {
        Scenario::Heat | Scenario::AllenCahn => {
            let q = if config.scenario == Scenario::Heat {
                Nonlinearity::zero()
            } else {
                Nonlinearity::allen_cahn()
            };
            let problem = PdeProblem::diffusion_only(0.01, q, reference_initial());
            let g_target = sample_function(&grid, target_source)?;
            (problem, g_target)
        }
        Scenario::Custom => {
            let c = config
                .custom
                .as_ref()
                .ok_or_else(|| Error::Config("custom scenario requires the custom block".into()))?;
            let a11 = parse_coeff(&c.a11, "a11", false)?;
            let a12 = parse_coeff(&c.a12, "a12", false)?;
            let a22 = parse_coeff(&c.a22, "a22", false)?;
            let b1 = parse_coeff(&c.b1, "b1", false)?;
            let b2 = parse_coeff(&c.b2, "b2", false)?;
            let cc = parse_coeff(&c.c, "c", false)?;
            let q = parse_coeff(&c.q, "q", true)?;
            let q_u = parse_coeff(&c.q_u, "q_u", true)?;
            let q_uu = parse_coeff(&c.q_uu, "q_uu", true)?;
            let f = parse_coeff(&c.f, "f", false)?;
            let g_expr = parse_coeff(&c.g_target, "g_target", false)?;
            let time_invariant = ![&a11, &a12, &a22, &b1, &b2, &cc]
                .iter()
                .any(|e| e.uses(Var::T));
            let problem = PdeProblem {
                diffusion: Arc::new(move |t, x, y| DiffusionValue {
                    a11: a11.eval(t, x, y, 0.0),
                    a12: a12.eval(t, x, y, 0.0),
                    a22: a22.eval(t, x, y, 0.0),
                }),
                drift: Arc::new(move |t, x, y| [b1.eval(t, x, y, 0.0), b2.eval(t, x, y, 0.0)]),
                reaction: Arc::new(move |t, x, y| cc.eval(t, x, y, 0.0)),
                nonlinearity: Nonlinearity {
                    q: Arc::new(move |t, x, y, u| q.eval(t, x, y, u)),
                    q_u: Arc::new(move |t, x, y, u| q_u.eval(t, x, y, u)),
                    q_uu: Arc::new(move |t, x, y, u| q_uu.eval(t, x, y, u)),
                },
                initial: Arc::new(move |x, y| f.eval(0.0, x, y, 0.0)),
                target: Target::Callable(Arc::new(|_, _, _| 0.0)),
                time_invariant_coefficients: time_invariant,
            };
            let g_target = sample_function(&grid, move |t, x, y| g_expr.eval(t, x, y, 0.0))?;
            (problem, g_target)
        }
    };
    // the observed data: the PDE solution under the hidden target source
    let h = solve_forward(&problem, &g_target, &grid)?.u;
    Ok(BuiltExperiment {
        problem: problem.with_target(Target::Sampled(h)),
        grid,
        g_target,
    })
}

// ---------------------------------------------------------------------------
// assumption validation

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum CheckStatus {
    Pass,
    Warn,
    Fail,
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckItem {
    pub id: String,
    pub status: CheckStatus,
    pub measured: Option<f64>,
    pub note: String,
}

#[derive(Debug, Clone, Serialize, Default)]
pub struct ValidationReport {
    pub items: Vec<CheckItem>,
}

impl ValidationReport {
    fn push(&mut self, id: &str, status: CheckStatus, measured: Option<f64>, note: impl Into<String>) {
        self.items.push(CheckItem {
            id: id.into(),
            status,
            measured,
            note: note.into(),
        });
    }

    pub fn has_failure(&self) -> bool {
        self.items.iter().any(|i| i.status == CheckStatus::Fail)
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for item in &self.items {
            let status = match item.status {
                CheckStatus::Pass => "PASS",
                CheckStatus::Warn => "WARN",
                CheckStatus::Fail => "FAIL",
            };
            let measured = item
                .measured
                .map(|v| format!(" measured={v:.6e}"))
                .unwrap_or_default();
            let _ = writeln!(out, "[{status}] {:10}{measured}  {}", item.id, item.note);
        }
        out
    }
}

/// Probe the runtime assumptions on the problem, the activation, and the
/// initialization law. Well-posedness-level conditions warn, never block.
pub fn validate_assumptions(
    problem: &PdeProblem,
    grid: &SpaceTimeGrid,
    activation: Activation,
    dist: Option<&InitDistribution>,
) -> ValidationReport {
    let mut report = ValidationReport::default();

    report.push(
        "domain",
        CheckStatus::Pass,
        None,
        "bounded axis-aligned rectangle (smooth-boundary analysis carries over only away from corners)",
    );

    // uniform parabolicity: min eigenvalue of a over all grid nodes
    let mut nu = f64::INFINITY;
    for ti in 0..grid.t_count {
        for xi in 0..grid.x_count {
            for yi in 0..grid.y_count {
                let a = (problem.diffusion)(grid.t(ti), grid.x(xi), grid.y(yi));
                nu = nu.min(a.min_eigenvalue());
            }
        }
    }
    report.push(
        "parabolic",
        if nu > 0.0 { CheckStatus::Pass } else { CheckStatus::Fail },
        Some(nu),
        "smallest diffusion eigenvalue over grid nodes",
    );

    // coefficient boundedness over grid nodes
    let mut coeff_max = 0.0f64;
    for ti in 0..grid.t_count {
        for xi in 0..grid.x_count {
            let (t, x) = (grid.t(ti), grid.x(xi));
            for yi in 0..grid.y_count {
                let y = grid.y(yi);
                let a = (problem.diffusion)(t, x, y);
                let b = (problem.drift)(t, x, y);
                let c = (problem.reaction)(t, x, y);
                for v in [a.a11, a.a12, a.a22, b[0], b[1], c] {
                    coeff_max = coeff_max.max(v.abs());
                }
            }
        }
    }
    report.push(
        "coeff_bound",
        if coeff_max.is_finite() { CheckStatus::Pass } else { CheckStatus::Fail },
        Some(coeff_max),
        "largest coefficient magnitude over grid nodes",
    );

    // derivative bounds of the nonlinearity on a probe box
    let probe_max = |f: &crate::problem::ReactionFn, u_box: f64| -> f64 {
        let mut worst = 0.0f64;
        for ti in (0..grid.t_count).step_by(2.max(grid.t_count / 4)) {
            for xi in (0..grid.x_count).step_by(2.max(grid.x_count / 4)) {
                for yi in (0..grid.y_count).step_by(2.max(grid.y_count / 4)) {
                    for k in 0..=40 {
                        let u = -u_box + 2.0 * u_box * k as f64 / 40.0;
                        worst = worst.max(f(grid.t(ti), grid.x(xi), grid.y(yi), u).abs());
                    }
                }
            }
        }
        worst
    };
    for (id, f) in [
        ("q_u_bound", &problem.nonlinearity.q_u),
        ("q_uu_bound", &problem.nonlinearity.q_uu),
    ] {
        let c2 = probe_max(f, 2.0);
        let c4 = probe_max(f, 4.0);
        if c4 > c2 * 1.01 + 1e-12 {
            report.push(
                id,
                CheckStatus::Warn,
                Some(c2),
                "bound on probe box |u| <= 2 only; grows with the box, no global constant",
            );
        } else {
            report.push(id, CheckStatus::Pass, Some(c2), "bounded on probe box |u| <= 2");
        }
    }

    // initial condition vanishing on the boundary (well-posedness level)
    let mut f_boundary = 0.0f64;
    for xi in 0..grid.x_count {
        for yi in 0..grid.y_count {
            if grid.is_spatial_boundary(xi, yi) {
                f_boundary = f_boundary.max((problem.initial)(grid.x(xi), grid.y(yi)).abs());
            }
        }
    }
    report.push(
        "f_boundary",
        if f_boundary <= 1e-12 { CheckStatus::Pass } else { CheckStatus::Warn },
        Some(f_boundary),
        "sup |f| over boundary nodes (well-posedness only)",
    );

    // activation bounds on a probe interval
    let mut s_max = 0.0f64;
    let mut sp_max = 0.0f64;
    let mut lip = 0.0f64;
    let mut prev: Option<f64> = None;
    let step = 0.01;
    let mut z = -20.0;
    while z <= 20.0 {
        let s = activation.eval(z);
        s_max = s_max.max(s.abs());
        sp_max = sp_max.max(activation.derivative_from_value(s).abs());
        if let Some(p) = prev {
            lip = lip.max((s - p).abs() / step);
        }
        prev = Some(s);
        z += step;
    }
    let ok = s_max <= activation.value_bound() + 1e-12 && s_max > 0.0;
    report.push(
        "activation",
        if ok { CheckStatus::Pass } else { CheckStatus::Fail },
        Some(s_max),
        format!("non-constant, |sigma| bounded; Lipschitz estimate {lip:.3}"),
    );
    report.push(
        "activation_deriv",
        if sp_max <= activation.derivative_bound() + 1e-12 {
            CheckStatus::Pass
        } else {
            CheckStatus::Fail
        },
        Some(sp_max),
        "|sigma'| bounded",
    );

    if let Some(d) = dist {
        let symmetric = d.c_symmetric();
        report.push(
            "c_law",
            if symmetric { CheckStatus::Pass } else { CheckStatus::Fail },
            Some(0.5 * (d.c_lo + d.c_hi)),
            if symmetric {
                "output-weight law mean-zero with compact support"
            } else {
                "output-weight law must be mean-zero (c_lo = -c_hi)"
            },
        );
        report.push(
            "w_law",
            CheckStatus::Pass,
            None,
            "standard normal inner weights: finite moments, full support",
        );
    }
    report
}

// ---------------------------------------------------------------------------
// training

#[derive(Debug, Clone, Copy, Serialize)]
pub struct TrainRecord {
    pub epoch: usize,
    pub j: f64,
    pub rmse_rel: f64,
    /// Pre-clip gradient norm.
    pub grad_norm: f64,
    pub rate: f64,
    pub clipped: bool,
    pub best_rmse: f64,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct MonitorReport {
    pub uhat_linft_l2_max: f64,
    pub warnings: Vec<String>,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub records: Vec<TrainRecord>,
    pub best_params: NetParams,
    pub best_rmse: f64,
    pub monitor: MonitorReport,
    pub run_dir: PathBuf,
}

pub fn records_to_csv(records: &[TrainRecord]) -> String {
    let mut out = String::from(LOG_HEADER);
    out.push('\n');
    for r in records {
        let _ = writeln!(
            out,
            "{},{:.16e},{:.16e},{:.16e},{:.16e},{},{:.16e}",
            r.epoch, r.j, r.rmse_rel, r.grad_norm, r.rate, r.clipped, r.best_rmse
        );
    }
    out
}

pub fn records_from_csv(text: &str) -> Result<Vec<TrainRecord>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == LOG_HEADER => {}
        _ => return Err(Error::Data("unexpected training log header".into())),
    }
    let mut out = Vec::new();
    for line in lines {
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 7 {
            return Err(Error::Data(format!("bad training log row: {line}")));
        }
        let parse = |s: &str| -> Result<f64> {
            s.parse::<f64>()
                .map_err(|_| Error::Data(format!("bad float in log: {s}")))
        };
        out.push(TrainRecord {
            epoch: cols[0]
                .parse()
                .map_err(|_| Error::Data(format!("bad epoch in log: {}", cols[0])))?,
            j: parse(cols[1])?,
            rmse_rel: parse(cols[2])?,
            grad_norm: parse(cols[3])?,
            rate: parse(cols[4])?,
            clipped: cols[5] == "true",
            best_rmse: parse(cols[6])?,
        });
    }
    Ok(out)
}

fn write_plots_from_csv(run_dir: &Path, log_y: bool) -> Result<()> {
    // plots are regenerated from the persisted CSV, not from live state
    let records = records_from_csv(&std::fs::read_to_string(run_dir.join("log.csv"))?)?;
    let rmse = Series {
        name: "rmse".into(),
        points: records.iter().map(|r| (r.epoch as f64, r.rmse_rel)).collect(),
    };
    let best = Series {
        name: "best rmse".into(),
        points: records.iter().map(|r| (r.epoch as f64, r.best_rmse)).collect(),
    };
    let opts = |title: &str| PlotOptions {
        title: title.into(),
        x_label: "epoch".into(),
        y_label: "relative RMSE".into(),
        log_y,
    };
    std::fs::write(run_dir.join("rmse.svg"), line_plot(&[rmse], &opts("relative RMSE")))?;
    std::fs::write(
        run_dir.join("best_rmse.svg"),
        line_plot(&[best], &opts("best relative RMSE")),
    )?;
    Ok(())
}

/// Train one configuration into `run_dir` (defaults to the configured
/// output directory). Artifacts: `log.csv`, `best_params.json`,
/// `summary.json`, `rmse.svg`, `best_rmse.svg`.
pub fn run_training(config: &ExperimentConfig, run_dir: Option<&Path>) -> Result<TrainOutcome> {
    config.validate()?;
    let run_dir = run_dir
        .map(Path::to_path_buf)
        .unwrap_or_else(|| config.output_dir.clone());
    std::fs::create_dir_all(&run_dir)?;

    let built = build_experiment(config)?;
    let pipeline = GradientPipeline::new(built.problem.clone(), &built.grid)?;
    let mut params = init_params(config.n, config.beta, config.activation, &config.dist())?;
    let mut schedule = config.schedule.build();
    let mut optimizer = match config.optimizer.kind {
        OptimizerKind::Gd => OptimizerState::gd(),
        OptimizerKind::Adam => OptimizerState::adam(
            config.optimizer.beta1,
            config.optimizer.beta2,
            config.optimizer.epsilon,
        ),
    };
    if config.zclip.enabled {
        let mut z = ZClip::new(
            config.zclip.smoothing,
            config.zclip.z_threshold,
            config.zclip.warmup,
        );
        z.feed = config.zclip.feed;
        optimizer = optimizer.with_zclip(z);
    }

    let mut records: Vec<TrainRecord> = Vec::with_capacity(config.epochs + 1);
    let mut best_rmse = f64::INFINITY;
    let mut best_params = params.clone();
    let mut monitor = MonitorReport::default();
    let mut uhat_baseline = 0.0f64;

    let save_artifacts = |records: &[TrainRecord],
                          best_params: &NetParams,
                          monitor: &MonitorReport|
     -> Result<()> {
        std::fs::write(run_dir.join("log.csv"), records_to_csv(records))?;
        std::fs::write(run_dir.join("best_params.json"), best_params.to_json()?)?;
        std::fs::write(
            run_dir.join("summary.json"),
            serde_json::to_string_pretty(&serde_json::json!({
                "best_rmse": records.iter().map(|r| r.best_rmse).fold(f64::INFINITY, f64::min),
                "epochs": records.len().saturating_sub(1),
                "monitor": monitor,
            }))?,
        )?;
        write_plots_from_csv(&run_dir, true)?;
        Ok(())
    };

    for epoch in 0..=config.epochs {
        let report = match pipeline.gradient(&params) {
            Ok(r) => r,
            Err(e) => {
                // persist the last good checkpoint before surfacing
                save_artifacts(&records, &best_params, &monitor)?;
                std::fs::write(run_dir.join("last_params.json"), params.to_json()?)?;
                return Err(e);
            }
        };
        let uhat_norm = norm(&pipeline.weights, &report.u_hat, NormKind::LinftL2x)?;
        monitor.uhat_linft_l2_max = monitor.uhat_linft_l2_max.max(uhat_norm);
        if epoch < 10 {
            uhat_baseline = uhat_baseline.max(uhat_norm);
        } else if uhat_norm > 10.0 * uhat_baseline
            && uhat_baseline > 0.0
            && monitor.warnings.is_empty()
        {
            monitor.warnings.push(format!(
                "adjoint L_inf-L_2 norm regression at epoch {epoch}: {uhat_norm:.3e} exceeds 10x the early-run bound {uhat_baseline:.3e}"
            ));
        }

        let mut grad = report.grad;
        let grad_norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        let clipped = optimizer.clip(&mut grad)?;
        let rate = scaled_rate(&schedule, config.n, config.beta, epoch as u64);
        if report.loss.rmse_rel < best_rmse {
            best_rmse = report.loss.rmse_rel;
            best_params = params.clone();
        }
        records.push(TrainRecord {
            epoch,
            j: report.loss.j,
            rmse_rel: report.loss.rmse_rel,
            grad_norm,
            rate,
            clipped,
            best_rmse,
        });
        schedule.observe(report.loss.j);
        if epoch < config.epochs {
            params = optimizer.step(&params, &grad, rate)?;
        }
    }

    save_artifacts(&records, &best_params, &monitor)?;
    // the calibrated source itself, sampled on the grid, next to its target
    let learned = crate::net::eval_net(&best_params, &built.grid)?;
    std::fs::write(run_dir.join("learned_source.csv"), learned.to_csv())?;
    std::fs::write(run_dir.join("target_source.csv"), built.g_target.to_csv())?;
    Ok(TrainOutcome {
        records,
        best_params,
        best_rmse,
        monitor,
        run_dir,
    })
}

// ---------------------------------------------------------------------------
// width sweep

#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub n: usize,
    pub mean_best_rmse: f64,
    pub stderr: f64,
    pub per_seed: Vec<f64>,
}

#[derive(Debug, Serialize)]
pub struct SweepOutcome {
    pub rows: Vec<SweepRow>,
    pub failures: Vec<String>,
}

/// One training per `(n, seed)` pair, in parallel, with per-run directories
/// `run_n{n}_s{seed_index}`; the same seed set is shared across widths.
pub fn run_n_sweep(config: &ExperimentConfig, n_list: &[usize]) -> Result<SweepOutcome> {
    if n_list.is_empty() {
        return Err(Error::Config("n_list must not be empty".into()));
    }
    std::fs::create_dir_all(&config.output_dir)?;
    let seeds: Vec<u64> = (0..config.seeds_for_averaging.max(1))
        .map(|i| config.seed + i as u64)
        .collect();
    let tasks: Vec<(usize, u64)> = n_list
        .iter()
        .flat_map(|&n| seeds.iter().map(move |&s| (n, s)))
        .collect();
    let results: Vec<(usize, u64, std::result::Result<f64, String>)> = tasks
        .par_iter()
        .map(|&(n, seed)| {
            let mut run_cfg = config.clone();
            run_cfg.n = n;
            run_cfg.seed = seed;
            let run_dir = config.output_dir.join(format!("run_n{n}_s{seed}"));
            match run_training(&run_cfg, Some(&run_dir)) {
                Ok(out) => (n, seed, Ok(out.best_rmse)),
                Err(e) => (n, seed, Err(e.to_string())),
            }
        })
        .collect();

    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for &n in n_list {
        let mut per_seed = Vec::new();
        for &(rn, seed, ref res) in &results {
            if rn != n {
                continue;
            }
            match res {
                Ok(v) => per_seed.push(*v),
                Err(e) => failures.push(format!("n={rn} seed={seed}: {e}")),
            }
        }
        if per_seed.is_empty() {
            continue;
        }
        let mean = per_seed.iter().sum::<f64>() / per_seed.len() as f64;
        let stderr = if per_seed.len() > 1 {
            let var = per_seed.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
                / (per_seed.len() - 1) as f64;
            (var / per_seed.len() as f64).sqrt()
        } else {
            0.0
        };
        rows.push(SweepRow {
            n,
            mean_best_rmse: mean,
            stderr,
            per_seed,
        });
    }

    // table
    let mut table = String::from("n,mean_best_rmse,stderr,seeds\n");
    for row in &rows {
        let _ = writeln!(
            table,
            "{},{:.16e},{:.16e},{}",
            row.n,
            row.mean_best_rmse,
            row.stderr,
            row.per_seed.len()
        );
    }
    std::fs::write(config.output_dir.join("sweep.csv"), table)?;

    // combined best-RMSE curves, seed-averaged per epoch, read back from the
    // per-run CSV logs
    let mut series = Vec::new();
    for &n in n_list {
        let mut curves: Vec<Vec<f64>> = Vec::new();
        for &seed in &seeds {
            let path = config.output_dir.join(format!("run_n{n}_s{seed}/log.csv"));
            if let Ok(text) = std::fs::read_to_string(&path) {
                curves.push(records_from_csv(&text)?.iter().map(|r| r.best_rmse).collect());
            }
        }
        if curves.is_empty() {
            continue;
        }
        let len = curves.iter().map(Vec::len).min().unwrap_or(0);
        let points = (0..len)
            .map(|e| {
                let mean = curves.iter().map(|c| c[e]).sum::<f64>() / curves.len() as f64;
                (e as f64, mean)
            })
            .collect();
        series.push(Series {
            name: format!("N = {n}"),
            points,
        });
    }
    std::fs::write(
        config.output_dir.join("sweep.svg"),
        line_plot(
            &series,
            &PlotOptions {
                title: "best relative RMSE by width".into(),
                x_label: "epoch".into(),
                y_label: "best relative RMSE".into(),
                log_y: config.log_y,
            },
        ),
    )?;

    Ok(SweepOutcome { rows, failures })
}

// ---------------------------------------------------------------------------
// limit runs

pub struct LimitOutcome {
    pub flow: LimitFlow,
    pub kernel: Arc<KernelOperator>,
}

/// Build the frozen initialization kernel and run the infinite-width flow;
/// artifacts: `limit.csv` and `limit.svg` under the output directory.
pub fn run_limit(config: &ExperimentConfig) -> Result<LimitOutcome> {
    config.validate()?;
    std::fs::create_dir_all(&config.output_dir)?;
    let built = build_experiment(config)?;
    let kernel = Arc::new(assemble_kernel_monte_carlo(
        &config.dist().with_seed(config.limit.mc_seed),
        config.activation,
        config.limit.mc_samples,
        &built.grid,
        config.kernel_budget,
    )?);
    let mut flow = LimitFlow::new(built.problem, &built.grid, kernel.clone())?;
    let mut sched = config.schedule.build();
    flow.run(config.limit.steps, config.limit.dtau, &mut sched)?;
    std::fs::write(config.output_dir.join("limit.csv"), flow.history_csv())?;
    let series = vec![
        Series {
            name: "J".into(),
            points: flow.history.iter().map(|r| (r.tau, r.j)).collect(),
        },
        Series {
            name: "Q".into(),
            points: flow.history.iter().map(|r| (r.tau, r.q)).collect(),
        },
    ];
    std::fs::write(
        config.output_dir.join("limit.svg"),
        line_plot(
            &series,
            &PlotOptions {
                title: "limit training flow".into(),
                x_label: "training time".into(),
                y_label: "value".into(),
                log_y: config.log_y,
            },
        ),
    )?;
    Ok(LimitOutcome { flow, kernel })
}

// ---------------------------------------------------------------------------
// gradient check entry (shared by the CLI and the acceptance suite)

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckRow {
    pub param: usize,
    pub adjoint: f64,
    pub finite_difference: f64,
    pub rel_error: f64,
}

pub struct GradCheckReport {
    pub rows: Vec<GradCheckRow>,
    pub max_rel_error: f64,
}

/// Compare the adjoint gradient against central finite differences of the
/// discrete loss, parameter by parameter, with a Richardson-extrapolated
/// difference step.
pub fn gradient_check(config: &ExperimentConfig) -> Result<GradCheckReport> {
    let built = build_experiment(config)?;
    let pipeline = GradientPipeline::new(built.problem, &built.grid)?;
    let params = init_params(config.n, config.beta, config.activation, &config.dist())?;
    let report = pipeline.gradient(&params)?;
    let flat = params.to_flat();
    let mut rows = Vec::with_capacity(flat.len());
    let mut max_rel: f64 = 0.0;
    for k in 0..flat.len() {
        let step = 1e-5 * flat[k].abs().max(1.0);
        let probe = |delta: f64| -> Result<f64> {
            let mut pf = flat.clone();
            pf[k] += delta;
            Ok(pipeline.loss_only(&params.from_flat(&pf)?)?.j)
        };
        let fd = (probe(step)? - probe(-step)?) / (2.0 * step);
        let fd_half = (probe(0.5 * step)? - probe(-0.5 * step)?) / step;
        let fd_extrap = (4.0 * fd_half - fd) / 3.0;
        let scale = fd_extrap.abs().max(report.grad[k].abs()).max(1e-12);
        let rel = (report.grad[k] - fd_extrap).abs() / scale;
        max_rel = max_rel.max(rel);
        rows.push(GradCheckRow {
            param: k,
            adjoint: report.grad[k],
            finite_difference: fd_extrap,
            rel_error: rel,
        });
    }
    Ok(GradCheckReport {
        rows,
        max_rel_error: max_rel,
    })
}
