//! Generation orchestration.
//!
//! A session repeats draft → score → verify → commit rounds until the token
//! budget is spent or a stop token lands. Drafting runs on the drafter's
//! recurrent state, scoring is one target pass per round, and verification
//! is lossless in both modes. After each round the drafter and target states
//! advance by re-absorbing exactly the committed tokens from their pre-round
//! states, which keeps them bit-identical to a fresh prefill of the full
//! committed sequence.
//!
//! All randomness derives from the config seed through named streams keyed
//! by round and tree position, so a `(models, prompt, config)` triple
//! reproduces its output exactly. The one exception is a bandit strategy
//! with the cost ratio set to [`LambdaGamma::Auto`]: its rewards fold in
//! measured wall time, so arm choices (and hence tokens) may vary across
//! machines; use a fixed ratio where bit determinism matters.

use crate::bandit::{
    compute_reward, ArmSet, BanditState, LambdaGammaEstimator, RoundOutcome,
    LAMBDA_GAMMA_SMOOTHING,
};
use crate::error::{Error, Result};
use crate::metrics::RunMetrics;
use crate::model::{score_from_state, DrafterState, Model, TokenId};
use crate::rng::Stream;
use crate::tree::{draft_tree, score_tree, verify_tree, StateCachePlan, TreeConfig};
use crate::verify::{verify_sequential, DraftSequence, Mode, VerifyOutcome};
use std::str::FromStr;
use std::time::Instant;

/// Drafter-to-target cost ratio used in bandit rewards: a fixed constant or
/// an online estimate from measured round timings.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LambdaGamma {
    Fixed(f64),
    Auto,
}

impl FromStr for LambdaGamma {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("auto") {
            return Ok(LambdaGamma::Auto);
        }
        let v: f64 = s
            .parse()
            .map_err(|_| Error::InvalidConfig(format!("bad lambda-gamma {s:?}")))?;
        if !v.is_finite() || v < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "lambda-gamma {v} must be finite and >= 0"
            )));
        }
        Ok(LambdaGamma::Fixed(v))
    }
}

impl std::fmt::Display for LambdaGamma {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            LambdaGamma::Fixed(v) => write!(f, "{v}"),
            LambdaGamma::Auto => write!(f, "auto"),
        }
    }
}

/// How candidates are proposed each round.
#[derive(Clone, Debug)]
pub enum Strategy {
    /// Plain chain drafting of `gamma` tokens.
    Sequential { gamma: usize },
    /// Tree drafting with one fixed configuration.
    FixedTree(TreeConfig),
    /// Tree drafting with per-round UCB selection over a candidate set.
    Bandit {
        arms: ArmSet,
        lambda_ucb: f64,
        lambda_gamma: LambdaGamma,
    },
}

impl Strategy {
    /// Stable textual form, identical to the CLI flag syntax.
    pub fn descriptor(&self) -> String {
        match self {
            Strategy::Sequential { gamma } => format!("seq:{gamma}"),
            Strategy::FixedTree(config) => format!("tree:{config}"),
            Strategy::Bandit { arms, .. } => format!("bandit:{arms}"),
        }
    }

    /// Largest draft length this strategy can run.
    pub fn max_gamma(&self) -> usize {
        match self {
            Strategy::Sequential { gamma } => *gamma,
            Strategy::FixedTree(config) => config.gamma(),
            Strategy::Bandit { arms, .. } => {
                arms.configs().iter().map(TreeConfig::gamma).max().unwrap_or(0)
            }
        }
    }
}

impl FromStr for Strategy {
    type Err = Error;

    /// Parses `seq:5`, `tree:3,2,2,1,1`, or `bandit:3,3,2,1;3,2,2,1,1`.
    /// Bandit hyperparameters take their defaults (`lambda_ucb = 1`,
    /// `lambda_gamma = auto`) and can be overridden afterwards.
    fn from_str(s: &str) -> Result<Self> {
        let (kind, rest) = s
            .split_once(':')
            .ok_or_else(|| Error::InvalidConfig(format!("bad strategy {s:?}")))?;
        match kind.trim() {
            "seq" => {
                let gamma: usize = rest.trim().parse().map_err(|_| {
                    Error::InvalidConfig(format!("bad sequential draft length {rest:?}"))
                })?;
                if gamma == 0 {
                    return Err(Error::InvalidConfig("draft length must be >= 1".into()));
                }
                Ok(Strategy::Sequential { gamma })
            }
            "tree" => Ok(Strategy::FixedTree(rest.parse()?)),
            "bandit" => Ok(Strategy::Bandit {
                arms: rest.parse()?,
                lambda_ucb: 1.0,
                lambda_gamma: LambdaGamma::Auto,
            }),
            _ => Err(Error::InvalidConfig(format!(
                "unknown strategy kind {kind:?} (expected seq, tree, or bandit)"
            ))),
        }
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.descriptor())
    }
}

/// Everything a generation run needs besides the models and the prompt.
#[derive(Clone, Debug)]
pub struct GenerationConfig {
    pub mode: Mode,
    pub strategy: Strategy,
    pub max_new_tokens: usize,
    pub stop_tokens: Vec<TokenId>,
    pub seed: u64,
}

impl GenerationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_new_tokens == 0 {
            return Err(Error::InvalidConfig("max_new_tokens must be >= 1".into()));
        }
        match &self.strategy {
            Strategy::Sequential { gamma } if *gamma == 0 => {
                Err(Error::InvalidConfig("draft length must be >= 1".into()))
            }
            Strategy::Bandit {
                lambda_ucb,
                lambda_gamma,
                ..
            } => {
                if !lambda_ucb.is_finite() || *lambda_ucb < 0.0 {
                    return Err(Error::InvalidConfig(format!(
                        "lambda_ucb {lambda_ucb} must be finite and >= 0"
                    )));
                }
                if let LambdaGamma::Fixed(v) = lambda_gamma {
                    if !v.is_finite() || *v < 0.0 {
                        return Err(Error::InvalidConfig(format!(
                            "lambda_gamma {v} must be finite and >= 0"
                        )));
                    }
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }
}

enum StrategyRuntime {
    Sequential {
        gamma: usize,
    },
    FixedTree {
        config: TreeConfig,
        plan: StateCachePlan,
    },
    Bandit {
        arms: ArmSet,
        plans: Vec<StateCachePlan>,
        bandit: BanditState,
        lambda_gamma: LambdaGamma,
        estimator: LambdaGammaEstimator,
    },
}

struct RoundExec {
    arm: usize,
    gamma: usize,
    drafter_steps: usize,
    outcome: VerifyOutcome,
    draft_s: f64,
    score_s: f64,
    accept_s: f64,
}

/// One in-flight generation over shared immutable models.
pub struct GenerationSession<'m, T: Model + ?Sized, D: Model + ?Sized> {
    target: &'m T,
    drafter: &'m D,
    mode: Mode,
    max_new_tokens: usize,
    stop_tokens: Vec<TokenId>,
    strategy: StrategyRuntime,
    stream: Stream,
    drafter_state: DrafterState,
    target_state: DrafterState,
    drafter_scratch: DrafterState,
    target_scratch: DrafterState,
    output: Vec<TokenId>,
    stopped: bool,
    round: u64,
    metrics: RunMetrics,
    started: Instant,
}

impl<'m, T: Model + ?Sized, D: Model + ?Sized> GenerationSession<'m, T, D> {
    pub fn new(
        target: &'m T,
        drafter: &'m D,
        prompt: &[TokenId],
        cfg: &GenerationConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        if target.vocab_size() != drafter.vocab_size() {
            return Err(Error::InvalidInput(format!(
                "target vocab {} != drafter vocab {}",
                target.vocab_size(),
                drafter.vocab_size()
            )));
        }
        let strategy = match &cfg.strategy {
            Strategy::Sequential { gamma } => StrategyRuntime::Sequential { gamma: *gamma },
            Strategy::FixedTree(config) => StrategyRuntime::FixedTree {
                config: config.clone(),
                plan: StateCachePlan::for_model(config, drafter)?,
            },
            Strategy::Bandit {
                arms,
                lambda_ucb,
                lambda_gamma,
            } => {
                let plans = arms
                    .configs()
                    .iter()
                    .map(|c| StateCachePlan::for_model(c, drafter))
                    .collect::<Result<Vec<_>>>()?;
                StrategyRuntime::Bandit {
                    bandit: BanditState::new(arms.len(), *lambda_ucb)?,
                    arms: arms.clone(),
                    plans,
                    lambda_gamma: *lambda_gamma,
                    estimator: LambdaGammaEstimator::new(LAMBDA_GAMMA_SMOOTHING)?,
                }
            }
        };
        let drafter_state = drafter.init_state(prompt)?;
        let target_state = target.init_state(prompt)?;
        Ok(Self {
            target,
            drafter,
            mode: cfg.mode,
            max_new_tokens: cfg.max_new_tokens,
            stop_tokens: cfg.stop_tokens.clone(),
            strategy,
            stream: Stream::named(cfg.seed, "session"),
            drafter_scratch: drafter_state.clone(),
            target_scratch: target_state.clone(),
            drafter_state,
            target_state,
            output: Vec::new(),
            stopped: false,
            round: 0,
            metrics: RunMetrics::default(),
            started: Instant::now(),
        })
    }

    /// Resume with pre-existing bandit statistics (arm-count must match);
    /// used for carrying bandit state across queries.
    pub fn with_bandit_state(mut self, state: BanditState) -> Result<Self> {
        match &mut self.strategy {
            StrategyRuntime::Bandit { arms, bandit, .. } => {
                if state.num_arms() != arms.len() {
                    return Err(Error::InvalidState(format!(
                        "bandit state has {} arms, strategy has {}",
                        state.num_arms(),
                        arms.len()
                    )));
                }
                *bandit = state;
                Ok(self)
            }
            _ => Err(Error::InvalidState(
                "bandit state supplied to a non-bandit strategy".into(),
            )),
        }
    }

    pub fn is_done(&self) -> bool {
        self.stopped || self.output.len() >= self.max_new_tokens
    }

    /// New tokens committed so far (prompt excluded).
    pub fn output(&self) -> &[TokenId] {
        &self.output
    }

    pub fn metrics(&self) -> &RunMetrics {
        &self.metrics
    }

    /// Current drafter state; always equals a fresh prefill of
    /// `prompt + output()`.
    pub fn drafter_state(&self) -> &DrafterState {
        &self.drafter_state
    }

    pub fn bandit_state(&self) -> Option<&BanditState> {
        match &self.strategy {
            StrategyRuntime::Bandit { bandit, .. } => Some(bandit),
            _ => None,
        }
    }

    /// Run one draft-score-verify-commit round.
    pub fn step_round(&mut self) -> Result<RoundOutcome> {
        if self.is_done() {
            return Err(Error::InvalidState("generation already finished".into()));
        }
        let draft_stream = self.stream.derive("draft").derive_u64(self.round);
        let mut verify_stream = self.stream.derive("verify").derive_u64(self.round);
        let mode = self.mode;
        let target = self.target;
        let drafter = self.drafter;

        let exec = match &mut self.strategy {
            StrategyRuntime::Sequential { gamma } => {
                let gamma = *gamma;
                let t0 = Instant::now();
                let mut tokens = Vec::with_capacity(gamma);
                let mut q_dists = Vec::with_capacity(gamma);
                let mut state = self.drafter_state.clone();
                let mut scratch = state.clone();
                let mut dist = drafter.predict(&state);
                for depth in 1..=gamma {
                    // Stream keying matches the tree path: (round, depth, 0).
                    let mut node_stream =
                        draft_stream.derive_u64(depth as u64).derive_u64(0);
                    let token = dist.sample_u(node_stream.next_f64());
                    tokens.push(token);
                    q_dists.push(dist.clone());
                    if depth < gamma {
                        drafter.step_into(&state, token, &mut scratch, &mut dist)?;
                        std::mem::swap(&mut state, &mut scratch);
                    } else {
                        drafter.absorb_into(&state, token, &mut scratch)?;
                    }
                }
                let draft_s = t0.elapsed().as_secs_f64();

                let t1 = Instant::now();
                let target_dists = score_from_state(target, &self.target_state, &tokens)?;
                let score_s = t1.elapsed().as_secs_f64();

                let t2 = Instant::now();
                let draft_seq = DraftSequence::new(tokens, q_dists)?;
                let outcome = verify_sequential(&target_dists, &draft_seq, mode, &mut verify_stream)?;
                RoundExec {
                    arm: 0,
                    gamma,
                    drafter_steps: gamma,
                    outcome,
                    draft_s,
                    score_s,
                    accept_s: t2.elapsed().as_secs_f64(),
                }
            }
            StrategyRuntime::FixedTree { config, plan } => {
                let t0 = Instant::now();
                let tree = draft_tree(drafter, &self.drafter_state, config, plan, &draft_stream)?;
                let draft_s = t0.elapsed().as_secs_f64();

                let t1 = Instant::now();
                let scores = score_tree(target, &self.target_state, tree)?;
                let score_s = t1.elapsed().as_secs_f64();

                let t2 = Instant::now();
                let outcome = verify_tree(&scores, tree, mode, &mut verify_stream)?;
                RoundExec {
                    arm: 0,
                    gamma: config.gamma(),
                    drafter_steps: config.node_count(),
                    outcome,
                    draft_s,
                    score_s,
                    accept_s: t2.elapsed().as_secs_f64(),
                }
            }
            StrategyRuntime::Bandit {
                arms,
                plans,
                bandit,
                ..
            } => {
                let arm = bandit.select_arm()?;
                let config = arms.config(arm).clone();
                let plan = &mut plans[arm];
                let t0 = Instant::now();
                let tree = draft_tree(drafter, &self.drafter_state, &config, plan, &draft_stream)?;
                let draft_s = t0.elapsed().as_secs_f64();

                let t1 = Instant::now();
                let scores = score_tree(target, &self.target_state, tree)?;
                let score_s = t1.elapsed().as_secs_f64();

                let t2 = Instant::now();
                let outcome = verify_tree(&scores, tree, mode, &mut verify_stream)?;
                RoundExec {
                    arm,
                    gamma: config.gamma(),
                    drafter_steps: config.node_count(),
                    outcome,
                    draft_s,
                    score_s,
                    accept_s: t2.elapsed().as_secs_f64(),
                }
            }
        };

        // Commit, truncating at a stop token and at the budget.
        let mut committed = exec.outcome.committed;
        if let Some(stop_at) = committed
            .iter()
            .position(|t| self.stop_tokens.contains(t))
        {
            committed.truncate(stop_at + 1);
            self.stopped = true;
        }
        let remaining = self.max_new_tokens - self.output.len();
        if committed.len() > remaining {
            committed.truncate(remaining);
        }

        // Advance both states from their pre-round values through exactly
        // the committed tokens (speculative branches are discarded).
        for &token in &committed {
            drafter.absorb_into(&self.drafter_state, token, &mut self.drafter_scratch)?;
            std::mem::swap(&mut self.drafter_state, &mut self.drafter_scratch);
            target.absorb_into(&self.target_state, token, &mut self.target_scratch)?;
            std::mem::swap(&mut self.target_state, &mut self.target_scratch);
        }
        self.output.extend_from_slice(&committed);

        let round_outcome = RoundOutcome {
            arm: exec.arm,
            committed_tokens: committed.len(),
            gamma: exec.gamma,
        };
        self.metrics.committed_total += committed.len();
        self.metrics.target_forward_passes += 1;
        self.metrics.draft_time_s += exec.draft_s;
        self.metrics.verify_time_s += exec.score_s + exec.accept_s;
        self.metrics.rounds.push(round_outcome);

        if let StrategyRuntime::Bandit {
            bandit,
            lambda_gamma,
            estimator,
            ..
        } = &mut self.strategy
        {
            if *lambda_gamma == LambdaGamma::Auto && exec.draft_s > 0.0 && exec.score_s > 0.0 {
                estimator.observe(exec.draft_s / exec.drafter_steps as f64, exec.score_s)?;
            }
            let ratio = match lambda_gamma {
                LambdaGamma::Fixed(v) => *v,
                LambdaGamma::Auto => estimator.value(),
            };
            bandit.update(exec.arm, compute_reward(&round_outcome, ratio)?)?;
        }

        self.round += 1;
        Ok(round_outcome)
    }

    /// Finalize: record wall time and hand back the output and metrics.
    pub fn finish(mut self) -> (Vec<TokenId>, RunMetrics) {
        self.metrics.wall_time_s = self.started.elapsed().as_secs_f64();
        (self.output, self.metrics)
    }
}

/// Run a whole generation: rounds until the budget or a stop token.
/// Output is reproducible bit-exactly from `(models, prompt, cfg)` (see the
/// module note about [`LambdaGamma::Auto`]).
pub fn generate<T: Model + ?Sized, D: Model + ?Sized>(
    target: &T,
    drafter: &D,
    prompt: &[TokenId],
    cfg: &GenerationConfig,
) -> Result<(Vec<TokenId>, RunMetrics)> {
    let mut session = GenerationSession::new(target, drafter, prompt, cfg)?;
    while !session.is_done() {
        session.step_round()?;
    }
    Ok(session.finish())
}

/// As [`generate`], but seeding a bandit strategy with statistics carried
/// over from a previous query and handing the updated statistics back.
/// Non-bandit strategies ignore `carried` and return `None`.
pub fn generate_with_bandit_carry<T: Model + ?Sized, D: Model + ?Sized>(
    target: &T,
    drafter: &D,
    prompt: &[TokenId],
    cfg: &GenerationConfig,
    carried: Option<BanditState>,
) -> Result<(RunMetrics, Option<BanditState>)> {
    let mut session = GenerationSession::new(target, drafter, prompt, cfg)?;
    if let Some(state) = carried {
        if session.bandit_state().is_some() {
            session = session.with_bandit_state(state)?;
        }
    }
    while !session.is_done() {
        session.step_round()?;
    }
    let bandit = session.bandit_state().cloned();
    let (_, metrics) = session.finish();
    Ok((metrics, bandit))
}
