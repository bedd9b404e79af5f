//! Thin command-line front end over the library entry points.
//!
//! Exit codes: 0 success, 2 configuration error, 3 numerical divergence,
//! 4 resource budget exceeded.

use crate::error::{Error, Result};
use crate::experiment::{
    build_experiment, gradient_check, run_limit, run_n_sweep, run_training, validate_assumptions,
    ExperimentConfig, GridConfig,
};
use crate::kernel::assemble_kernel_monte_carlo;
use crate::limit::{check_decay_identity, max_monotonicity_violation};
use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;

#[derive(Parser)]
#[command(
    name = "nnpde",
    about = "Calibrate a neural-network source term in a 2D parabolic PDE by adjoint gradient descent"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// JSON experiment configuration; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the configured output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the neuron count.
    #[arg(long)]
    n: Option<usize>,
    /// Override the epoch count.
    #[arg(long)]
    epochs: Option<usize>,
    /// Override the grid as `nt,nx,ny`.
    #[arg(long)]
    grid: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Train the network on the configured scenario.
    Train(Common),
    /// Train across a list of widths and aggregate best-RMSE statistics.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Comma-separated widths, e.g. `10,50,200,1000`.
        #[arg(long)]
        n_list: Option<String>,
    },
    /// Integrate the infinite-width training flow and export its history.
    Limit(Common),
    /// Verify the adjoint gradient against finite differences.
    Gradcheck(Common),
    /// Assemble the initialization kernel and print its spectrum.
    KernelSpectrum {
        #[command(flatten)]
        common: Common,
        /// Number of leading eigenvalues to report.
        #[arg(long, default_value_t = 20)]
        k_max: usize,
        /// Also export the dense kernel matrix as CSV.
        #[arg(long)]
        matrix_csv: bool,
    },
    /// Check the runtime assumptions of the configured problem.
    Validate(Common),
}

fn load_config(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::from_file(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.output_dir = out.clone();
    }
    if let Some(n) = common.n {
        cfg.n = n;
    }
    if let Some(epochs) = common.epochs {
        cfg.epochs = epochs;
    }
    if let Some(grid) = &common.grid {
        let parts: Vec<usize> = grid
            .split(',')
            .map(|p| {
                p.trim()
                    .parse::<usize>()
                    .map_err(|_| Error::Config(format!("bad --grid component '{p}'")))
            })
            .collect::<Result<_>>()?;
        if parts.len() != 3 {
            return Err(Error::Config("--grid expects nt,nx,ny".into()));
        }
        cfg.grid = GridConfig {
            t_count: parts[0],
            x_count: parts[1],
            y_count: parts[2],
        };
    }
    cfg.validate()?;
    Ok(cfg)
}

fn parse_n_list(text: &str) -> Result<Vec<usize>> {
    text.split(',')
        .map(|p| {
            p.trim()
                .parse::<usize>()
                .map_err(|_| Error::Config(format!("bad --n-list component '{p}'")))
        })
        .collect()
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(common) => {
            let cfg = load_config(&common)?;
            if cfg.limit_mode {
                return run_limit_command(&cfg);
            }
            let out = run_training(&cfg, None)?;
            let last = out.records.last().expect("at least one record");
            println!(
                "trained {} epochs  final rmse {:.6e}  best rmse {:.6e}",
                cfg.epochs, last.rmse_rel, out.best_rmse
            );
            for w in &out.monitor.warnings {
                println!("warning: {w}");
            }
            println!("artifacts in {}", out.run_dir.display());
            Ok(())
        }
        Command::Sweep { common, n_list } => {
            let cfg = load_config(&common)?;
            let widths = match n_list {
                Some(text) => parse_n_list(&text)?,
                None => cfg.n_list.clone(),
            };
            let out = run_n_sweep(&cfg, &widths)?;
            println!("n,mean_best_rmse,stderr,seeds");
            for row in &out.rows {
                println!(
                    "{},{:.6e},{:.6e},{}",
                    row.n,
                    row.mean_best_rmse,
                    row.stderr,
                    row.per_seed.len()
                );
            }
            for f in &out.failures {
                println!("failed: {f}");
            }
            println!("artifacts in {}", cfg.output_dir.display());
            Ok(())
        }
        Command::Limit(common) => {
            let explicit_grid = common.grid.is_some() || common.config.is_some();
            let mut cfg = load_config(&common)?;
            if !explicit_grid {
                // dense kernel assembly scales with the squared node count;
                // default to a desk-scale grid for the flow
                cfg.grid = GridConfig {
                    t_count: 9,
                    x_count: 9,
                    y_count: 9,
                };
            }
            run_limit_command(&cfg)
        }
        Command::Gradcheck(common) => {
            let mut cfg = load_config(&common)?;
            if common.n.is_none() {
                cfg.n = 3;
            }
            if common.grid.is_none() {
                cfg.grid = GridConfig {
                    t_count: 7,
                    x_count: 7,
                    y_count: 7,
                };
            }
            let report = gradient_check(&cfg)?;
            println!("param,adjoint,finite_difference,rel_error");
            for row in &report.rows {
                println!(
                    "{},{:.9e},{:.9e},{:.3e}",
                    row.param, row.adjoint, row.finite_difference, row.rel_error
                );
            }
            println!("max relative error {:.3e}", report.max_rel_error);
            if report.max_rel_error < 1e-6 {
                println!("gradient check passed");
                Ok(())
            } else {
                Err(Error::Numerical(format!(
                    "adjoint gradient deviates from finite differences: {:.3e}",
                    report.max_rel_error
                )))
            }
        }
        Command::KernelSpectrum {
            common,
            k_max,
            matrix_csv,
        } => {
            let explicit_grid = common.grid.is_some() || common.config.is_some();
            let mut cfg = load_config(&common)?;
            if !explicit_grid {
                cfg.grid = GridConfig {
                    t_count: 6,
                    x_count: 6,
                    y_count: 6,
                };
            }
            let grid = cfg.space_time_grid()?;
            let kernel = assemble_kernel_monte_carlo(
                &cfg.dist().with_seed(cfg.limit.mc_seed),
                cfg.activation,
                cfg.limit.mc_samples,
                &grid,
                cfg.kernel_budget,
            )?;
            let spectrum = kernel.spectrum(k_max)?;
            std::fs::create_dir_all(&cfg.output_dir)?;
            let mut csv = String::from("k,eigenvalue\n");
            for (k, v) in spectrum.iter().enumerate() {
                use std::fmt::Write as _;
                let _ = writeln!(csv, "{k},{v:.16e}");
            }
            std::fs::write(cfg.output_dir.join("spectrum.csv"), csv)?;
            if matrix_csv {
                std::fs::write(cfg.output_dir.join("kernel_matrix.csv"), kernel.to_csv())?;
            }
            let lambda_max = spectrum.first().copied().unwrap_or(0.0);
            let lambda_min_reported = spectrum.last().copied().unwrap_or(0.0);
            println!("monte carlo kernel on {} nodes, {} samples", grid.node_count(), cfg.limit.mc_samples);
            println!("largest eigenvalue    {lambda_max:.6e}");
            println!("smallest reported     {lambda_min_reported:.6e}");
            println!("weighted L2 norm of B {:.6e}", kernel.weighted_l2_norm());
            println!("spectrum written to {}", cfg.output_dir.join("spectrum.csv").display());
            Ok(())
        }
        Command::Validate(common) => {
            let cfg = load_config(&common)?;
            let built = build_experiment(&cfg)?;
            let report = validate_assumptions(&built.problem, &built.grid, cfg.activation, Some(&cfg.dist()));
            print!("{}", report.render());
            Ok(())
        }
    }
}

fn run_limit_command(cfg: &ExperimentConfig) -> Result<()> {
    let out = run_limit(cfg)?;
    let history = &out.flow.history;
    let first = history.first().expect("history is never empty");
    let last = history.last().expect("history is never empty");
    println!(
        "limit flow: {} steps, J {:.6e} -> {:.6e}, Q {:.6e} -> {:.6e}",
        history.len() - 1,
        first.j,
        last.j,
        first.q,
        last.q
    );
    if history.len() >= 3 {
        let disc = check_decay_identity(history, cfg.limit.dtau)?;
        println!("loss-decay identity max relative discrepancy {disc:.3e}");
    }
    let violation = max_monotonicity_violation(history);
    if violation > 0.0 {
        println!("warning: loss increased along the flow by {violation:.3e}");
    }
    println!("history in {}", cfg.output_dir.join("limit.csv").display());
    Ok(())
}

/// Parse arguments, run, and map errors to process exit codes.
pub fn run() -> i32 {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
