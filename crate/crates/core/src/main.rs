//! Command-line front end: search runs, phase-2 validation, transfer runs,
//! and ablation sweeps. Exit codes: 0 success, 1 usage or configuration
//! error, 2 runtime error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use fmsearch::gp::{KernelFamily, KernelSpec};
use fmsearch::runner::{
    self, cmd_search, cmd_sweep, cmd_transfer, cmd_validate, RunConfig, RunError, TargetSpec,
};
use fmsearch::search::{Algorithm, SearchConfig};

#[derive(Parser)]
#[command(
    name = "fmsearch",
    about = "Budgeted black-box search for concept-composition failure modes",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a search and write a run directory.
    Search(SearchArgs),
    /// Re-evaluate the top sets of a run with fresh samples.
    Validate(ValidateArgs),
    /// Evaluate a run's top sets on a different target.
    Transfer(TransferArgs),
    /// Run one search per grid value of a parameter.
    Sweep(SweepArgs),
}

#[derive(Args, Clone)]
struct CommonSearchArgs {
    /// Domain with bundled data: driving or indoor.
    #[arg(long, default_value = "driving")]
    domain: String,
    /// Catalog file overriding the bundled one.
    #[arg(long)]
    catalog: Option<PathBuf>,
    /// Rule file overriding the bundled one.
    #[arg(long)]
    rules: Option<PathBuf>,
    /// Target spec: synthetic[:scenario.toml], replay:records.log, or
    /// subprocess:<command...>.
    #[arg(long, default_value = "synthetic")]
    target: String,
    /// Search algorithm.
    #[arg(long, value_enum, default_value = "gpts")]
    algo: AlgoArg,
    /// Total inference budget B.
    #[arg(long, default_value_t = 1000)]
    budget: u64,
    /// Samples per concept set m.
    #[arg(long, default_value_t = 5)]
    samples: u64,
    #[arg(long, default_value_t = 5)]
    beam_width: usize,
    #[arg(long, default_value_t = 5)]
    max_depth: usize,
    /// Diversity weight in the MMR value function.
    #[arg(long, default_value_t = 0.25)]
    lambda: f64,
    /// Failure-mode threshold.
    #[arg(long, default_value_t = 0.6)]
    tau: f64,
    /// Beam-phase budget for GPTS (default: half the total budget).
    #[arg(long)]
    beam_budget: Option<u64>,
    /// Thompson proposal pool size.
    #[arg(long, default_value_t = 256)]
    pool_size: usize,
    #[arg(long, value_enum, default_value = "dot-product")]
    kernel: KernelArg,
    /// White-noise variance of the GP kernel.
    #[arg(long, default_value_t = 0.05)]
    noise: f64,
    #[arg(long, default_value_t = 1.0)]
    rbf_lengthscale: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Transport retries per sample before recording a failed sample.
    #[arg(long, default_value_t = 2)]
    retries: usize,
    /// Output directory (default runs/<domain>-<algo>-s<seed>).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SearchArgs {
    #[command(flatten)]
    common: CommonSearchArgs,
    /// Rerun exactly from a previous run's config snapshot.
    #[arg(long, conflicts_with_all = ["domain", "catalog", "rules", "target"])]
    from_snapshot: Option<PathBuf>,
}

#[derive(Args)]
struct ValidateArgs {
    /// Completed run directory.
    run_dir: PathBuf,
    #[arg(long, default_value_t = 10)]
    top_n: usize,
    /// Fresh samples per validated set.
    #[arg(long, default_value_t = 20)]
    samples: u64,
}

#[derive(Args)]
struct TransferArgs {
    /// Source run directory.
    source_run_dir: PathBuf,
    /// Target spec to transfer onto.
    #[arg(long)]
    target: String,
    #[arg(long, default_value_t = 10)]
    top_n: usize,
    #[arg(long, default_value_t = 20)]
    samples: u64,
    /// Budget for the target's random baseline; 0 skips the baseline.
    #[arg(long, default_value_t = 1000)]
    baseline_budget: u64,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: CommonSearchArgs,
    /// Parameter to vary (algo, budget, samples, beam-width, max-depth,
    /// lambda, tau, beam-budget, pool-size, kernel, noise, seed).
    #[arg(long)]
    param: String,
    /// Comma-separated grid values.
    #[arg(long, value_delimiter = ',')]
    values: Vec<String>,
}

#[derive(clap::ValueEnum, Clone, Copy)]
enum AlgoArg {
    Random,
    Beam,
    Gpts,
}

impl From<AlgoArg> for Algorithm {
    fn from(a: AlgoArg) -> Self {
        match a {
            AlgoArg::Random => Algorithm::Random,
            AlgoArg::Beam => Algorithm::Beam,
            AlgoArg::Gpts => Algorithm::Gpts,
        }
    }
}

#[derive(clap::ValueEnum, Clone, Copy)]
enum KernelArg {
    DotProduct,
    Rbf,
}

fn build_config(args: &CommonSearchArgs) -> Result<RunConfig, RunError> {
    let algo: Algorithm = args.algo.into();
    let out_dir = args.out.clone().unwrap_or_else(|| {
        PathBuf::from(format!("runs/{}-{algo}-s{}", args.domain, args.seed))
    });
    Ok(RunConfig {
        domain: args.domain.clone(),
        catalog_path: args.catalog.clone(),
        rules_path: args.rules.clone(),
        target: TargetSpec::parse(&args.target)?,
        search: SearchConfig {
            algo,
            budget: args.budget,
            samples: args.samples,
            beam_width: args.beam_width,
            max_depth: args.max_depth,
            lambda: args.lambda,
            tau: args.tau,
            beam_budget: args.beam_budget.unwrap_or(args.budget / 2),
            pool_size: args.pool_size,
            kernel: KernelSpec {
                family: match args.kernel {
                    KernelArg::DotProduct => KernelFamily::DotProduct,
                    KernelArg::Rbf => KernelFamily::Rbf,
                },
                noise_variance: args.noise,
                rbf_lengthscale: args.rbf_lengthscale,
            },
            seed: args.seed,
        },
        out_dir,
        retries: args.retries,
    })
}

fn opt(value: Option<f64>) -> String {
    value.map(|v| format!("{v:.3}")).unwrap_or_else(|| "-".into())
}

fn run(cli: Cli) -> Result<(), RunError> {
    match cli.command {
        Command::Search(args) => {
            let config = match &args.from_snapshot {
                Some(path) => {
                    let mut config: RunConfig = runner::read_snapshot(
                        path.parent().unwrap_or_else(|| std::path::Path::new(".")),
                    )
                    .or_else(|_| {
                        // Accept either the snapshot file or its directory.
                        serde_json::from_str(&std::fs::read_to_string(path).map_err(|e| {
                            RunError::Config(format!("{}: {e}", path.display()))
                        })?)
                        .map_err(|e| RunError::Config(format!("{}: {e}", path.display())))
                    })?;
                    if let Some(out) = args.common.out.clone() {
                        config.out_dir = out;
                    }
                    config
                }
                None => build_config(&args.common)?,
            };
            let outputs = cmd_search(&config)?;
            let s = &outputs.summary;
            println!(
                "{} on {}: {} sets evaluated, {} failure modes (pfm {:.3}, mfr {:.3}, div {}), spent {} of {}",
                config.search.algo,
                config.domain,
                s.candidates,
                s.failure_mode_count,
                s.pfm,
                s.mfr,
                opt(s.div),
                outputs.spent,
                config.search.budget
            );
            for warning in &outputs.warnings {
                eprintln!("warning: {warning}");
            }
            println!("run directory: {}", outputs.out_dir.display());
            Ok(())
        }
        Command::Validate(args) => {
            let report = cmd_validate(&args.run_dir, args.top_n, args.samples)?;
            for warning in &report.warnings {
                eprintln!("warning: {warning}");
            }
            println!(
                "validated {} sets at {} samples each: mean fr {:.1}% +/- {:.1}, {}/{} at fr >= 80%",
                report.entries.len(),
                report.samples,
                report.mean_fr * 100.0,
                report.std_fr * 100.0,
                report.count_ge_80,
                report.entries.len()
            );
            for entry in &report.entries {
                println!(
                    "  {}  phase1 {:.2} -> validated {:.2}",
                    entry.set,
                    entry.phase1_fr,
                    entry.validated_fr
                );
            }
            Ok(())
        }
        Command::Transfer(args) => {
            let target = TargetSpec::parse(&args.target)?;
            let outcome = cmd_transfer(
                &args.source_run_dir,
                &target,
                args.top_n,
                args.samples,
                args.baseline_budget,
            )?;
            let r = &outcome.report;
            match (r.baseline_mfr, r.multiplier) {
                (Some(base), Some(mult)) => println!(
                    "transfer: mean target fr {:.1}% vs random baseline {:.1}% ({:.1}x)",
                    r.mean_target_fr * 100.0,
                    base * 100.0,
                    mult
                ),
                _ => println!(
                    "transfer: mean target fr {:.1}% (no baseline run)",
                    r.mean_target_fr * 100.0
                ),
            }
            if let Some(rho) = r.spearman {
                println!("scene-level spearman rho = {rho:.2}");
            }
            for bucket in &r.buckets {
                if bucket.n > 0 {
                    println!(
                        "  source {}: n={}, mean target fr {}",
                        bucket.label,
                        bucket.n,
                        opt(bucket.mean_target_fr)
                    );
                }
            }
            println!("report: {}", outcome.out_path.display());
            Ok(())
        }
        Command::Sweep(args) => {
            let config = build_config(&args.common)?;
            let rows = cmd_sweep(&config, &args.param, &args.values)?;
            println!("param,value,candidates,failure_modes,pfm,mfr,div,spent");
            for row in &rows {
                println!(
                    "{},{},{},{},{:.4},{:.4},{},{}",
                    row.param,
                    row.value,
                    row.candidates,
                    row.failure_modes,
                    row.pfm,
                    row.mfr,
                    opt(row.div),
                    row.spent
                );
            }
            println!("sweep directory: {}", config.out_dir.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            // clap prints its own message; map usage errors to exit code 1
            // and --help/--version to 0.
            let code = if err.use_stderr() { 1 } else { 0 };
            let _ = err.print();
            return ExitCode::from(code as u8);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
