//! Command line front end.
//!
//! Exit codes: 0 success, 2 configuration error, 3 artifact integrity error,
//! 4 stage failure, 1 anything else.

use clap::{Args, Parser, Subcommand, ValueEnum};
use std::path::PathBuf;
use std::process::ExitCode;

use robsuite::config::Config;
use robsuite::error::Error;
use robsuite::experiments;
use robsuite::optimize::Objective;
use robsuite::pipeline::{self, Layout};
use robsuite::reference::StepRule;
use robsuite::siamese::{self, Meter};
use robsuite::suite;

#[derive(Parser)]
#[command(name = "robsuite", version, about = "Frozen adversarial test suites for Siamese verification systems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build every artifact: dataset, zoo, candidate pools, references,
    /// selection, and the frozen suite. Completed stages are skipped.
    Pipeline(RunArgs),
    /// Run the validation studies against a completed pipeline run
    /// (builds missing pipeline stages first).
    Experiments(RunArgs),
    /// Score a saved system against a frozen suite, forward passes only.
    Evaluate(EvaluateArgs),
    /// Recheck a frozen suite: format, checksums, and budget feasibility.
    Verify(VerifyArgs),
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum OutputFormat {
    Text,
    Json,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum AttackRuleArg {
    /// Project onto the feasible set after each ascent step.
    Standard,
    /// Renormalize to the budget sphere after each ascent step.
    BoundarySphere,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum ObjectiveArg {
    /// Correlate selected failure rates; regularizer on rate moments.
    NormalizedRates,
    /// Correlate raw failure counts; regularizer on count moments.
    RawCounts,
}

#[derive(Args)]
struct RunArgs {
    /// TOML configuration file; built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output root directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Root seed override; rewires every stage seed deterministically.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; defaults to all cores.
    #[arg(long)]
    jobs: Option<usize>,
    /// Rerun every stage even when digests match.
    #[arg(long)]
    force: bool,
    /// Override the reference attack step rule.
    #[arg(long, value_enum)]
    attack_rule: Option<AttackRuleArg>,
    /// Override the selection objective.
    #[arg(long, value_enum)]
    objective: Option<ObjectiveArg>,
    #[arg(long, value_enum, default_value_t = OutputFormat::Text)]
    format: OutputFormat,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Directory holding suite.json and its blobs.
    #[arg(long)]
    suite: PathBuf,
    /// Directory holding system.json and weights.rbt.
    #[arg(long)]
    system: PathBuf,
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long, value_enum, default_value_t = OutputFormat::Text)]
    format: OutputFormat,
}

#[derive(Args)]
struct VerifyArgs {
    /// Directory holding suite.json and its blobs.
    #[arg(long)]
    suite: PathBuf,
    #[arg(long, value_enum, default_value_t = OutputFormat::Text)]
    format: OutputFormat,
}

fn init_jobs(jobs: Option<usize>) -> Result<(), Error> {
    if let Some(n) = jobs {
        if n == 0 {
            return Err(Error::Config("--jobs must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    }
    Ok(())
}

fn load_config(args: &RunArgs) -> Result<Config, Error> {
    let mut cfg = match &args.config {
        Some(path) => Config::load(path)?,
        None => Config::default(),
    };
    if let Some(seed) = args.seed {
        cfg.override_seeds(seed);
    }
    if let Some(rule) = args.attack_rule {
        cfg.attack.rule = match rule {
            AttackRuleArg::Standard => StepRule::Standard,
            AttackRuleArg::BoundarySphere => StepRule::BoundarySphere,
        };
    }
    if let Some(objective) = args.objective {
        cfg.selection.objective = match objective {
            ObjectiveArg::NormalizedRates => Objective::NormalizedRates,
            ObjectiveArg::RawCounts => Objective::RawCounts,
        };
    }
    cfg.validate()?;
    Ok(cfg)
}

fn emit<T: serde::Serialize>(format: OutputFormat, value: &T, text: impl FnOnce()) -> Result<(), Error> {
    match format {
        OutputFormat::Json => {
            println!("{}", serde_json::to_string_pretty(value)?);
            Ok(())
        }
        OutputFormat::Text => {
            text();
            Ok(())
        }
    }
}

fn cmd_pipeline(args: &RunArgs) -> Result<(), Error> {
    init_jobs(args.jobs)?;
    let cfg = load_config(args)?;
    let report = pipeline::run(&args.out, &cfg, args.force)?;
    emit(args.format, &report, || {
        println!("config digest {}", report.config_digest);
        for name in &report.ran {
            println!("stage {name}: ran");
        }
        for name in &report.skipped {
            println!("stage {name}: up to date");
        }
    })
}

fn cmd_experiments(args: &RunArgs) -> Result<(), Error> {
    init_jobs(args.jobs)?;
    let cfg = load_config(args)?;
    pipeline::run(&args.out, &cfg, args.force)?;
    let layout = Layout::new(&args.out);
    let report = experiments::run_all(&layout, &cfg)?;
    emit(args.format, &report, || {
        for scheme in &report.correlations.schemes {
            println!(
                "correlation {}: mean pearson {:.3} over {} seeds",
                scheme.scheme,
                scheme.mean_pearson,
                scheme.runs.len()
            );
        }
        println!(
            "ablation {}: full {:.3}, random {:.3} (delta {:.3}), no regularizer {:.3} (delta {:.3})",
            report.ablation.scheme,
            report.ablation.full.mean_pearson,
            report.ablation.random.mean_pearson,
            report.ablation.delta_random,
            report.ablation.no_regularizer.mean_pearson,
            report.ablation.delta_regularizer,
        );
        println!(
            "speedup: attacks {:.2}s vs suite {:.2}s = {:.1}x ({} suite members, {} suite backward passes)",
            report.speedup.attack_seconds,
            report.speedup.suite_seconds,
            report.speedup.speedup,
            report.speedup.suite_members,
            report.speedup.suite_backward,
        );
        println!(
            "adaptive {}: released {:.3} -> {:.3}, fresh after {:.3} (inflation {:.3}, fresh gap {:.3})",
            report.adaptive.system,
            report.adaptive.released_before,
            report.adaptive.released_after,
            report.adaptive.fresh_after,
            report.adaptive.inflation,
            report.adaptive.fresh_gap,
        );
    })
}

fn cmd_evaluate(args: &EvaluateArgs) -> Result<(), Error> {
    init_jobs(args.jobs)?;
    let frozen = suite::load_suite(&args.suite)?;
    let member = siamese::load_system(&args.system)?;
    let meter = Meter::new();
    let eval = suite::evaluate_suite(&member.system, &frozen, &meter)?;
    emit(args.format, &eval, || {
        println!("system {}", eval.system);
        for set in &eval.sets {
            println!(
                "  {}: robustness {:.4} over {} members (consistency {:.4})",
                set.name, set.robustness, set.size, set.prediction_consistency
            );
        }
        println!("mean robustness {:.4}", eval.mean_robustness);
        println!(
            "forward passes {}, backward passes {}",
            meter.forward_count(),
            meter.backward_count()
        );
    })
}

fn cmd_verify(args: &VerifyArgs) -> Result<(), Error> {
    let frozen = suite::load_suite(&args.suite)?;
    let checks = suite::verify_suite(&frozen)?;
    emit(args.format, &checks, || {
        for check in &checks {
            println!(
                "set {}: {} members, {} budget violations",
                check.name, check.size, check.violations
            );
        }
    })?;
    let violations: usize = checks.iter().map(|c| c.violations).sum();
    if violations > 0 {
        return Err(Error::Format {
            what: "suite".into(),
            detail: format!("{violations} members violate their scheme budget"),
        });
    }
    Ok(())
}

fn exit_code_for(err: &Error) -> u8 {
    if err.is_config() {
        2
    } else if err.is_integrity() {
        3
    } else if matches!(err, Error::Stage { .. }) {
        4
    } else {
        1
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Pipeline(args) => cmd_pipeline(args),
        Command::Experiments(args) => cmd_experiments(args),
        Command::Evaluate(args) => cmd_evaluate(args),
        Command::Verify(args) => cmd_verify(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}
