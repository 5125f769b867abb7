//! `specdraft`: benchmark harness for the speculative decoding engine.
//!
//! Subcommands: `run` (one or more strategies), `sweep` (tree-config sweep),
//! `compare` (fixed tree vs bandit search), `report` (re-emit a saved JSON
//! record). Exit codes: 0 success, 2 config error, 3 model error, 4 runtime
//! error.

use clap::{Args, Parser, Subcommand};
use specdraft_cli::{
    compare_fixed_vs_bandit, emit_report, run_experiment, sweep_tree_configs, ExperimentSpec,
    PromptSource, ReportFormat, ResultRecord,
};
use specdraft_core::{ArmSet, LambdaGamma, Mode, Strategy, TreeConfig};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

const EXIT_CONFIG: u8 = 2;
const EXIT_MODEL: u8 = 3;
const EXIT_RUNTIME: u8 = 4;

#[derive(Parser)]
#[command(name = "specdraft", version, about = "Speculative decoding benchmark harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one or more strategies over a prompt set.
    Run(RunArgs),
    /// One aggregate row per tree configuration on matched prompts/seeds.
    Sweep(SweepArgs),
    /// Fixed tree configuration vs bandit search on matched prompts/seeds.
    Compare(CompareArgs),
    /// Re-emit a saved JSON result record in another format.
    Report(ReportArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// Target model file.
    #[arg(long)]
    target: PathBuf,
    /// Drafter model file.
    #[arg(long)]
    drafter: PathBuf,
    /// Decoding mode: greedy | sample.
    #[arg(long, default_value = "sample")]
    mode: String,
    /// Prompt source: a token-id file path, or synthetic:SEED:COUNT:LEN.
    #[arg(long, default_value = "synthetic:0:4:16")]
    prompts: String,
    #[arg(long, default_value_t = 128)]
    max_new_tokens: usize,
    /// Repetitions per prompt.
    #[arg(long, default_value_t = 1)]
    reps: usize,
    /// Master seed; per-run seeds derive from it.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output path (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Report format: csv | json | plotdata.
    #[arg(long, default_value = "csv")]
    format: String,
    /// Zero timing columns for byte-deterministic output.
    #[arg(long)]
    no_timing: bool,
    /// UCB exploration weight for bandit strategies.
    #[arg(long, default_value_t = 1.0)]
    lambda_ucb: f64,
    /// Drafter/target cost ratio for bandit rewards: a number or "auto".
    #[arg(long, default_value = "auto")]
    lambda_gamma: String,
    /// Carry bandit statistics across prompts instead of per-query reset.
    #[arg(long)]
    carry_bandit: bool,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Strategy spec, repeatable: seq:5 | tree:3,2,2,1,1 | bandit:CFG;CFG;...
    #[arg(long = "strategy", required = true)]
    strategies: Vec<String>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Semicolon-separated tree configs, e.g. "3,3,2,1;3,2,2,1,1".
    #[arg(long)]
    configs: String,
}

#[derive(Args)]
struct CompareArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// The fixed tree configuration.
    #[arg(long)]
    fixed: String,
    /// Semicolon-separated candidate configs for the bandit.
    #[arg(long)]
    arms: String,
}

#[derive(Args)]
struct ReportArgs {
    /// A JSON result record produced with --format json.
    input: PathBuf,
    #[arg(long, default_value = "csv")]
    format: String,
    #[arg(long)]
    out: Option<PathBuf>,
}

struct CliError {
    code: u8,
    message: String,
}

impl CliError {
    fn config(err: impl std::fmt::Display) -> Self {
        Self { code: EXIT_CONFIG, message: err.to_string() }
    }

    fn runtime(err: impl std::fmt::Display) -> Self {
        Self { code: EXIT_RUNTIME, message: err.to_string() }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("specdraft: {}", err.message);
            ExitCode::from(err.code)
        }
    }
}

fn execute(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run(args) => {
            let strategies = args
                .strategies
                .iter()
                .map(|s| parse_strategy(s, &args.common))
                .collect::<Result<Vec<_>, _>>()?;
            let spec = build_spec(&args.common, "run", strategies)?;
            let record = run_checked(|| run_experiment(&spec))?;
            write_record(&record, &args.common)
        }
        Command::Sweep(args) => {
            let configs = args
                .configs
                .split(';')
                .map(|c| c.trim().parse::<TreeConfig>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(CliError::config)?;
            let spec = build_spec(&args.common, "sweep", vec![])?;
            let record = run_checked(|| sweep_tree_configs(&spec, &configs))?;
            write_record(&record, &args.common)
        }
        Command::Compare(args) => {
            let fixed: TreeConfig = args.fixed.parse().map_err(CliError::config)?;
            let arms: ArmSet = args.arms.parse().map_err(CliError::config)?;
            let lambda_gamma = parse_lambda_gamma(&args.common)?;
            let spec = build_spec(&args.common, "compare", vec![])?;
            let record = run_checked(|| {
                compare_fixed_vs_bandit(&spec, fixed, arms, args.common.lambda_ucb, lambda_gamma)
            })?;
            write_record(&record, &args.common)
        }
        Command::Report(args) => {
            let format: ReportFormat = args.format.parse().map_err(CliError::config)?;
            let text = std::fs::read_to_string(&args.input).map_err(CliError::runtime)?;
            let record = ResultRecord::from_json(&text).map_err(CliError::config)?;
            let rendered = emit_report(&record, format).map_err(CliError::runtime)?;
            write_output(rendered, args.out.as_deref())
        }
    }
}

fn parse_mode(s: &str) -> Result<Mode, CliError> {
    match s {
        "greedy" => Ok(Mode::Greedy),
        "sample" => Ok(Mode::Sampling),
        _ => Err(CliError::config(format!(
            "unknown mode {s:?} (expected greedy or sample)"
        ))),
    }
}

fn parse_lambda_gamma(common: &CommonArgs) -> Result<LambdaGamma, CliError> {
    common.lambda_gamma.parse().map_err(CliError::config)
}

/// Parse a strategy flag, folding the bandit hyperparameter flags in.
fn parse_strategy(s: &str, common: &CommonArgs) -> Result<Strategy, CliError> {
    let strategy: Strategy = s.parse().map_err(CliError::config)?;
    Ok(match strategy {
        Strategy::Bandit { arms, .. } => Strategy::Bandit {
            arms,
            lambda_ucb: common.lambda_ucb,
            lambda_gamma: parse_lambda_gamma(common)?,
        },
        other => other,
    })
}

fn threads_from_env() -> Result<usize, CliError> {
    match std::env::var("SPECDRAFT_THREADS") {
        Err(_) => Ok(1),
        Ok(v) => v
            .parse::<usize>()
            .ok()
            .filter(|&n| n >= 1)
            .ok_or_else(|| CliError::config(format!("bad SPECDRAFT_THREADS value {v:?}"))),
    }
}

fn build_spec(
    common: &CommonArgs,
    kind: &str,
    strategies: Vec<Strategy>,
) -> Result<ExperimentSpec, CliError> {
    Ok(ExperimentSpec {
        experiment_id: format!("{kind}-seed{}", common.seed),
        target_path: common.target.clone(),
        drafter_path: common.drafter.clone(),
        prompts: common.prompts.parse::<PromptSource>().map_err(CliError::config)?,
        mode: parse_mode(&common.mode)?,
        strategies,
        max_new_tokens: common.max_new_tokens,
        reps: common.reps,
        master_seed: common.seed,
        carry_bandit: common.carry_bandit,
        no_timing: common.no_timing,
        threads: threads_from_env()?,
    })
}

/// Run an experiment, classifying failures: model-file problems exit 3,
/// config problems 2, everything else 4.
fn run_checked<F>(f: F) -> Result<ResultRecord, CliError>
where
    F: FnOnce() -> specdraft_core::Result<ResultRecord>,
{
    use specdraft_core::Error as E;
    f().map_err(|err| match err {
        E::Io(_) | E::Parse(_) | E::InvariantViolation(_) | E::UnsupportedVersion(_) => {
            CliError { code: EXIT_MODEL, message: err.to_string() }
        }
        E::InvalidConfig(_) | E::InvalidArgument(_) => CliError::config(err),
        _ => CliError::runtime(err),
    })
}

fn write_record(record: &ResultRecord, common: &CommonArgs) -> Result<(), CliError> {
    let format: ReportFormat = common.format.parse().map_err(CliError::config)?;
    let rendered = emit_report(record, format).map_err(CliError::runtime)?;
    write_output(rendered, common.out.as_deref())
}

/// Write the rendered report, via a temp file + rename so a failed run never
/// leaves a partial output file.
fn write_output(text: String, out: Option<&Path>) -> Result<(), CliError> {
    match out {
        None => {
            print!("{text}");
            Ok(())
        }
        Some(path) => {
            let tmp = path.with_extension("tmp");
            std::fs::write(&tmp, &text).map_err(CliError::runtime)?;
            std::fs::rename(&tmp, path).map_err(CliError::runtime)
        }
    }
}
