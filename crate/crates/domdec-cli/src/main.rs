use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use domdec_cli::check::run_checks;
use domdec_cli::config::SuiteConfig;
use domdec_cli::suite::run_suite;

/// Staggered-grid domain decomposition for optimal transport: scenario
/// runs, verification batteries and fiber checks.
#[derive(Parser)]
#[command(name = "domdec", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute a scenario suite from a config file and write the report
    /// bundle.
    Run(RunArgs),
    /// Run the built-in invariant battery and report pass/fail lines.
    Check(CheckArgs),
    /// Verify the fiber-problem equivalence at given (t, x) samples.
    Fiber(FiberArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Path to the JSON config.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides the config).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Scales to run (overrides the config), e.g. --n 16,32,64.
    #[arg(long, value_delimiter = ',')]
    n: Option<Vec<usize>>,
    /// Seed for randomized test instances (never used by the sweep).
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct CheckArgs {
    /// Seed for the randomized oracle instances.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Trim the randomized instance counts.
    #[arg(long)]
    quick: bool,
}

#[derive(Args)]
struct FiberArgs {
    /// Path to the JSON config (fiber samples may also live there).
    #[arg(long)]
    config: PathBuf,
    /// Sample time.
    #[arg(long)]
    t: Option<f64>,
    /// Sample point, comma separated coordinates.
    #[arg(long, value_delimiter = ',')]
    x: Option<Vec<f64>>,
    /// Scale to verify at (defaults to the config's largest).
    #[arg(long)]
    n: Option<usize>,
    /// Output directory for the fiber report.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    match dispatch() {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn dispatch() -> Result<ExitCode> {
    let cli = Cli::parse();
    match cli.command {
        Command::Run(args) => run(args),
        Command::Check(args) => check(args),
        Command::Fiber(args) => fiber(args),
    }
}

fn run(args: RunArgs) -> Result<ExitCode> {
    let mut cfg = SuiteConfig::from_path(&args.config)?;
    if let Some(out) = args.out {
        cfg.out_dir = Some(out);
    }
    if let Some(n) = args.n {
        cfg.n = n;
    }
    if let Some(seed) = args.seed {
        cfg.seed = Some(seed);
    }
    cfg.validate()?;
    let outcome = run_suite(&cfg).context("running suite")?;
    for scale in &outcome.scales {
        let stop = match &scale.record.stop {
            domdec_core::engine::StopReason::HorizonReached => "horizon".to_string(),
            domdec_core::engine::StopReason::FixedPoint { at_iteration } => {
                format!("fixed point at k = {at_iteration}")
            }
        };
        println!(
            "n = {:4}: {} iterations ({}), terminal objective {}",
            scale.n,
            scale.record.stats.len(),
            stop,
            scale
                .record
                .final_stats()
                .map(|s| s.objective.to_string())
                .unwrap_or_else(|| "-".into()),
        );
    }
    if let Some(manifest) = &outcome.manifest {
        println!("report bundle: {}", manifest.display());
    }
    if outcome.violations.is_empty() {
        Ok(ExitCode::SUCCESS)
    } else {
        for v in &outcome.violations {
            eprintln!("violation: {v}");
        }
        Ok(ExitCode::FAILURE)
    }
}

fn check(args: CheckArgs) -> Result<ExitCode> {
    let items = run_checks(args.seed, args.quick);
    let mut all_pass = true;
    for item in &items {
        let tag = if item.pass { "PASS" } else { "FAIL" };
        println!("[{tag}] {} - {}", item.name, item.detail);
        all_pass &= item.pass;
    }
    Ok(if all_pass {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    })
}

fn fiber(args: FiberArgs) -> Result<ExitCode> {
    let mut cfg = SuiteConfig::from_path(&args.config)?;
    let n = args
        .n
        .or_else(|| cfg.n.iter().max().copied())
        .context("no scale given")?;
    cfg.n = vec![n];
    if let (Some(t), Some(x)) = (args.t, args.x.as_ref()) {
        let mut point = [0.0; 2];
        for (slot, &c) in point.iter_mut().zip(x.iter()) {
            *slot = c;
        }
        cfg.fiber_samples = vec![domdec_cli::config::FiberSample {
            t,
            x: point,
            dim: x.len(),
        }];
    }
    if cfg.fiber_samples.is_empty() {
        anyhow::bail!("no fiber samples given (use --t and --x)");
    }
    cfg.validate()?;
    let outcome = domdec_cli::suite::run_scale(&cfg, n)?;
    let mut all_pass = true;
    let mut reports = Vec::new();
    for check in &outcome.fiber {
        let pass = check.objective_gap <= 1e-8
            && check.momentum_gap <= 1e-12
            && check
                .plan_tv
                .is_none_or(|tv| outcome.eps == 0.0 || tv <= 1e-6);
        all_pass &= pass;
        println!(
            "[{}] fiber t={} x={:?}: objective gap {:.3e}, momentum gap {:.3e}{}",
            if pass { "PASS" } else { "FAIL" },
            check.t,
            check.x,
            check.objective_gap,
            check.momentum_gap,
            check
                .plan_tv
                .map(|tv| format!(", plan tv {tv:.3e}"))
                .unwrap_or_default(),
        );
        reports.push(serde_json::json!({
            "t": check.t,
            "x": check.x,
            "k": check.k,
            "cell": check.cell,
            "objective_transformed": check.objective_transformed,
            "objective_direct": check.objective_direct,
            "objective_gap": check.objective_gap,
            "plan_tv": check.plan_tv,
            "momentum_gap": check.momentum_gap,
            "limit_marginal_source": {"n": n, "note": "finest recorded scale"},
        }));
    }
    if let Some(out) = args.out {
        let path = out.join("fiber_report.json");
        domdec_cli::report::write_file(&path, serde_json::to_string_pretty(&reports)?.as_bytes())?;
        println!("fiber report: {}", path.display());
    }
    Ok(if all_pass {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    })
}
