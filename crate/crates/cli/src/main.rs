use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;

use hdsa_cli::commands::{self, CommonArgs};
use hdsa_core::cost::CostParams;

/// Update a cheap-model optimal solution with a handful of expensive-model
/// evaluations, with calibrated uncertainty.
#[derive(Parser)]
#[command(name = "hdsa", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the low-fidelity problem; dump the optimum and both model
    /// states there.
    Optimize(RunArgs),
    /// Draw prior samples (state, controller, unprobed-direction
    /// discrepancy) for hyper-parameter tuning.
    PreviewPrior(RunArgs),
    /// Full pipeline: optimize, evaluate, calibrate, and sample posterior
    /// solution updates at the configured ranks.
    Run(RunArgs),
    /// Mean-update error and integrated posterior variance as the
    /// curvature rank grows.
    RankSweep(RunArgs),
    /// Solve-count totals of the optimization versus the update pipeline.
    CostEstimate(CostArgs),
    /// Compare the structured implementation against dense references on
    /// small random instances.
    OracleCheck(OracleArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Path to the TOML configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory, overriding the configuration's output_dir.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Cost-model parameters, in units of one low-fidelity-scale PDE solve.
#[derive(Args)]
struct CostArgs {
    /// High-fidelity solve cost.
    #[arg(long, default_value_t = 100.0)]
    hifi_solve: f64,
    /// Low-fidelity (nonlinear) solve cost.
    #[arg(long, default_value_t = 15.0)]
    lofi_solve: f64,
    /// Low-fidelity linearized/adjoint solve cost.
    #[arg(long, default_value_t = 3.0)]
    lofi_adjoint: f64,
    /// State-space elliptic-prior solve cost.
    #[arg(long, default_value_t = 1.0)]
    elliptic_state: f64,
    /// Optimization-space elliptic-prior solve cost.
    #[arg(long, default_value_t = 1.0)]
    elliptic_opt: f64,
    /// Optimizer outer iterations.
    #[arg(long, default_value_t = 50.0)]
    opt_iters: f64,
    /// Hessian products per optimizer iteration.
    #[arg(long, default_value_t = 50.0)]
    opt_hessian_products: f64,
    /// Training-evaluation count.
    #[arg(long, default_value_t = 2.0)]
    n_data: f64,
    /// Posterior solution samples.
    #[arg(long, default_value_t = 100.0)]
    n_samples: f64,
    /// Retained state-prior rank.
    #[arg(long, default_value_t = 500.0)]
    state_rank: f64,
    /// Retained curvature rank.
    #[arg(long, default_value_t = 50.0)]
    proj_rank: f64,
    /// Oversampling of the state-prior factorization.
    #[arg(long, default_value_t = 10.0)]
    oversample_state: f64,
    /// Oversampling of the curvature factorization.
    #[arg(long, default_value_t = 10.0)]
    oversample_proj: f64,
}

impl CostArgs {
    fn params(&self) -> CostParams {
        CostParams {
            hifi_solve: self.hifi_solve,
            lofi_solve: self.lofi_solve,
            lofi_adjoint: self.lofi_adjoint,
            elliptic_state: self.elliptic_state,
            elliptic_opt: self.elliptic_opt,
            opt_iters: self.opt_iters,
            opt_hessian_products: self.opt_hessian_products,
            n_data: self.n_data,
            n_samples: self.n_samples,
            state_rank: self.state_rank,
            proj_rank: self.proj_rank,
            oversample_state: self.oversample_state,
            oversample_proj: self.oversample_proj,
        }
    }
}

#[derive(Args)]
struct OracleArgs {
    /// Random instances to check.
    #[arg(long, default_value_t = 6)]
    instances: usize,
    /// Draws for the Monte-Carlo covariance comparison (0 disables it).
    #[arg(long, default_value_t = 20000)]
    cov_samples: usize,
    /// Master seed of the instance generator.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn main() {
    // HDSA_THREADS caps worker threads; sampling and evaluation stay
    // deterministic regardless because every draw owns a seed substream.
    if let Ok(raw) = std::env::var("HDSA_THREADS") {
        match raw.parse::<usize>() {
            Ok(n) if n > 0 => {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
            _ => eprintln!("warning: ignoring HDSA_THREADS={raw:?} (expected a positive integer)"),
        }
    }
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Optimize(a) => commands::cmd_optimize(&common(a)),
        Command::PreviewPrior(a) => commands::cmd_preview_prior(&common(a)),
        Command::Run(a) => commands::cmd_run(&common(a)),
        Command::RankSweep(a) => commands::cmd_rank_sweep(&common(a)),
        Command::CostEstimate(a) => commands::cmd_cost_estimate(&a.params()),
        Command::OracleCheck(a) => commands::cmd_oracle_check(a.instances, a.cov_samples, a.seed),
    };
    if let Err(err) = result {
        eprintln!("error: {err}");
        std::process::exit(err.exit_code());
    }
}

fn common(args: &RunArgs) -> CommonArgs {
    CommonArgs {
        config: args.config.clone(),
        out: args.out.clone(),
    }
}
