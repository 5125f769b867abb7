//! Experiment runners.
//!
//! An [`ExperimentSpec`] names the models, the prompt set, one or more
//! strategies, and a master seed. Every run gets its own derived seed from
//! `(master, prompt_idx, rep, strategy_idx)`, so re-running a spec
//! reproduces its rows exactly, and strategies within one spec see matched
//! prompts and the same seed-derivation rule. Prompts may run concurrently
//! (capped by `SPECDRAFT_THREADS`); rows are ordered by
//! `(strategy, prompt, rep)` before any output is written, so concurrency
//! never changes the record.

use crate::report::{mean_std, AggregateRow, EnvironmentStamp, ResultRecord, RunRow};
use specdraft_core::{
    generate_with_bandit_carry, load_model, ArmSet, BanditState, Error, GenerationConfig,
    LambdaGamma, LoadedModel, Mode, Model, Result, Stream, Strategy, TokenId, TreeConfig,
};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

/// Where prompts come from: a token-id file (one prompt per line,
/// space-separated ids) or a synthetic generator.
#[derive(Clone, Debug)]
pub enum PromptSource {
    File(PathBuf),
    Synthetic { seed: u64, count: usize, len: usize },
}

impl FromStr for PromptSource {
    type Err = Error;

    /// `synthetic:SEED:COUNT:LEN`, or anything else as a file path.
    fn from_str(s: &str) -> Result<Self> {
        if let Some(rest) = s.strip_prefix("synthetic:") {
            let parts: Vec<&str> = rest.split(':').collect();
            if parts.len() != 3 {
                return Err(Error::InvalidConfig(format!(
                    "bad synthetic prompt spec {s:?} (expected synthetic:SEED:COUNT:LEN)"
                )));
            }
            let parse = |what: &str, v: &str| -> Result<u64> {
                v.parse()
                    .map_err(|_| Error::InvalidConfig(format!("bad synthetic {what} {v:?}")))
            };
            return Ok(PromptSource::Synthetic {
                seed: parse("seed", parts[0])?,
                count: parse("count", parts[1])? as usize,
                len: parse("len", parts[2])? as usize,
            });
        }
        Ok(PromptSource::File(PathBuf::from(s)))
    }
}

impl PromptSource {
    /// Materialize the prompt list, validating every token against the
    /// vocabulary.
    pub fn load(&self, vocab_size: usize) -> Result<Vec<Vec<TokenId>>> {
        let prompts = match self {
            PromptSource::File(path) => read_prompt_file(path)?,
            PromptSource::Synthetic { seed, count, len } => {
                if *count == 0 {
                    return Err(Error::InvalidConfig("synthetic prompt count is zero".into()));
                }
                let root = Stream::named(*seed, "prompts");
                (0..*count)
                    .map(|i| {
                        let mut s = root.derive_u64(i as u64);
                        (0..*len)
                            .map(|_| TokenId(s.next_below(vocab_size as u64) as u32))
                            .collect()
                    })
                    .collect()
            }
        };
        if prompts.is_empty() {
            return Err(Error::InvalidConfig("prompt set is empty".into()));
        }
        for (i, prompt) in prompts.iter().enumerate() {
            if let Some(&t) = prompt.iter().find(|t| t.index() >= vocab_size) {
                return Err(Error::InvalidConfig(format!(
                    "prompt {i} token {t} out of range for vocab size {vocab_size}"
                )));
            }
        }
        Ok(prompts)
    }
}

fn read_prompt_file(path: &Path) -> Result<Vec<Vec<TokenId>>> {
    let text = std::fs::read_to_string(path)?;
    let mut prompts = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let tokens = line
            .split_whitespace()
            .map(|w| {
                w.parse::<u32>().map(TokenId).map_err(|_| {
                    Error::InvalidConfig(format!(
                        "bad token id {w:?} on line {} of {}",
                        lineno + 1,
                        path.display()
                    ))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        prompts.push(tokens);
    }
    Ok(prompts)
}

/// A full experiment description.
#[derive(Clone, Debug)]
pub struct ExperimentSpec {
    pub experiment_id: String,
    pub target_path: PathBuf,
    pub drafter_path: PathBuf,
    pub prompts: PromptSource,
    pub mode: Mode,
    pub strategies: Vec<Strategy>,
    pub max_new_tokens: usize,
    pub reps: usize,
    pub master_seed: u64,
    /// Carry bandit statistics across prompts instead of resetting per query.
    pub carry_bandit: bool,
    /// Zero timing fields for byte-deterministic reports.
    pub no_timing: bool,
    /// Worker-thread cap (1 = serial); from `SPECDRAFT_THREADS`.
    pub threads: usize,
}

impl ExperimentSpec {
    fn validate(&self) -> Result<()> {
        if self.strategies.is_empty() {
            return Err(Error::InvalidConfig("no strategies given".into()));
        }
        if self.reps == 0 {
            return Err(Error::InvalidConfig("reps must be >= 1".into()));
        }
        if self.max_new_tokens == 0 {
            return Err(Error::InvalidConfig("max_new_tokens must be >= 1".into()));
        }
        Ok(())
    }
}

/// Per-run seed: a splittable hash of `(master, prompt_idx, rep,
/// strategy_idx)`.
pub fn run_seed(master: u64, prompt_idx: usize, rep: usize, strategy_idx: usize) -> u64 {
    Stream::named(master, "run")
        .derive_u64(prompt_idx as u64)
        .derive_u64(rep as u64)
        .derive_u64(strategy_idx as u64)
        .next_u64()
}

/// Run every `(strategy, prompt, rep)` combination of the spec.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ResultRecord> {
    spec.validate()?;
    let target = load_model(&spec.target_path)?;
    let drafter = load_model(&spec.drafter_path)?;
    let prompts = spec.prompts.load(target.vocab_size())?;

    let mut rows = Vec::new();
    let mut aggregates = Vec::new();
    for (sidx, strategy) in spec.strategies.iter().enumerate() {
        let strategy_rows = run_strategy(spec, &target, &drafter, &prompts, sidx, strategy)?;
        aggregates.push(aggregate(sidx, strategy, &strategy_rows));
        rows.extend(strategy_rows);
    }
    Ok(ResultRecord {
        experiment_id: spec.experiment_id.clone(),
        rows,
        aggregates,
        environment: EnvironmentStamp::capture(),
    })
}

/// One aggregate row per configuration, on matched prompts and seeds. A
/// configuration that fails (say, a width exceeding the vocabulary) yields
/// an errored aggregate row without touching the others.
pub fn sweep_tree_configs(spec: &ExperimentSpec, configs: &[TreeConfig]) -> Result<ResultRecord> {
    if configs.is_empty() {
        return Err(Error::InvalidConfig("sweep needs at least one config".into()));
    }
    let mut spec = spec.clone();
    spec.strategies = configs
        .iter()
        .map(|c| Strategy::FixedTree(c.clone()))
        .collect();
    spec.validate()?;
    let target = load_model(&spec.target_path)?;
    let drafter = load_model(&spec.drafter_path)?;
    let prompts = spec.prompts.load(target.vocab_size())?;

    let mut rows = Vec::new();
    let mut aggregates = Vec::new();
    for (sidx, strategy) in spec.strategies.iter().enumerate() {
        match run_strategy(&spec, &target, &drafter, &prompts, sidx, strategy) {
            Ok(strategy_rows) => {
                aggregates.push(aggregate(sidx, strategy, &strategy_rows));
                rows.extend(strategy_rows);
            }
            Err(err) => aggregates.push(AggregateRow {
                strategy_idx: sidx,
                strategy: strategy.descriptor(),
                runs: 0,
                throughput_mean: 0.0,
                throughput_std: 0.0,
                acceptance_length_mean: 0.0,
                acceptance_length_std: 0.0,
                selection_counts: None,
                error: Some(err.to_string()),
            }),
        }
    }
    Ok(ResultRecord {
        experiment_id: spec.experiment_id.clone(),
        rows,
        aggregates,
        environment: EnvironmentStamp::capture(),
    })
}

/// Two rows on identical prompts and seed derivation: the fixed
/// configuration and the bandit over `arms`.
pub fn compare_fixed_vs_bandit(
    spec: &ExperimentSpec,
    fixed: TreeConfig,
    arms: ArmSet,
    lambda_ucb: f64,
    lambda_gamma: LambdaGamma,
) -> Result<ResultRecord> {
    let mut spec = spec.clone();
    spec.strategies = vec![
        Strategy::FixedTree(fixed),
        Strategy::Bandit {
            arms,
            lambda_ucb,
            lambda_gamma,
        },
    ];
    run_experiment(&spec)
}

fn aggregate(sidx: usize, strategy: &Strategy, rows: &[RunRow]) -> AggregateRow {
    let throughputs: Vec<f64> = rows.iter().map(|r| r.metrics.throughput()).collect();
    let lengths: Vec<f64> = rows.iter().map(|r| r.metrics.acceptance_length()).collect();
    let (t_mean, t_std) = mean_std(&throughputs);
    let (a_mean, a_std) = mean_std(&lengths);
    let selection_counts = match strategy {
        Strategy::Bandit { arms, .. } => {
            let mut counts = vec![0u64; arms.len()];
            for row in rows {
                for round in &row.metrics.rounds {
                    counts[round.arm] += 1;
                }
            }
            Some(counts)
        }
        _ => None,
    };
    AggregateRow {
        strategy_idx: sidx,
        strategy: strategy.descriptor(),
        runs: rows.len(),
        throughput_mean: t_mean,
        throughput_std: t_std,
        acceptance_length_mean: a_mean,
        acceptance_length_std: a_std,
        selection_counts,
        error: None,
    }
}

fn run_strategy(
    spec: &ExperimentSpec,
    target: &LoadedModel,
    drafter: &LoadedModel,
    prompts: &[Vec<TokenId>],
    sidx: usize,
    strategy: &Strategy,
) -> Result<Vec<RunRow>> {
    let jobs: Vec<(usize, usize)> = (0..prompts.len())
        .flat_map(|p| (0..spec.reps).map(move |r| (p, r)))
        .collect();

    let run_one = |prompt_idx: usize, rep: usize, carried: Option<BanditState>| {
        let seed = run_seed(spec.master_seed, prompt_idx, rep, sidx);
        let cfg = GenerationConfig {
            mode: spec.mode,
            strategy: strategy.clone(),
            max_new_tokens: spec.max_new_tokens,
            stop_tokens: vec![],
            seed,
        };
        let (metrics, bandit) =
            generate_with_bandit_carry(target, drafter, &prompts[prompt_idx], &cfg, carried)?;
        let mut metrics = metrics;
        if spec.no_timing {
            metrics.zero_timing();
        }
        Ok::<_, Error>((
            RunRow {
                strategy_idx: sidx,
                strategy: strategy.descriptor(),
                prompt_idx,
                rep,
                seed,
                metrics,
            },
            bandit,
        ))
    };

    // Bandit carry-over forces serial execution in job order.
    let carry = spec.carry_bandit && matches!(strategy, Strategy::Bandit { .. });
    if carry || spec.threads <= 1 || jobs.len() <= 1 {
        let mut carried: Option<BanditState> = None;
        let mut rows = Vec::with_capacity(jobs.len());
        for &(p, r) in &jobs {
            let (row, bandit) = run_one(p, r, if carry { carried.take() } else { None })?;
            if carry {
                carried = bandit;
            }
            rows.push(row);
        }
        return Ok(rows);
    }

    let next_job = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<RunRow>>> = Mutex::new(vec![None; jobs.len()]);
    let failure: Mutex<Option<Error>> = Mutex::new(None);
    let workers = spec.threads.min(jobs.len());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next_job.fetch_add(1, Ordering::Relaxed);
                if i >= jobs.len() {
                    return;
                }
                let (p, r) = jobs[i];
                match run_one(p, r, None) {
                    Ok((row, _)) => slots.lock().unwrap()[i] = Some(row),
                    Err(err) => {
                        failure.lock().unwrap().get_or_insert(err);
                        return;
                    }
                }
            });
        }
    });
    if let Some(err) = failure.into_inner().unwrap() {
        return Err(err);
    }
    let rows = slots
        .into_inner()
        .unwrap()
        .into_iter()
        .map(|slot| slot.expect("all jobs completed"))
        .collect();
    Ok(rows)
}
