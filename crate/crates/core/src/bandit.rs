//! UCB selection over tree configurations.
//!
//! Each drafting round is a bandit round: an arm is a tree configuration,
//! and after the round the selected arm's statistics absorb a reward derived
//! from the round's speedup. Arm k's score is
//!
//! ```text
//! mean_reward_k + lambda_ucb * sqrt(2 ln t / n_k)
//! ```
//!
//! with every still-untried arm selected once first. The reward is the
//! negated inverse speedup of the round,
//! `-(1 + lambda_gamma * gamma) / n_committed`, where `lambda_gamma`
//! approximates the drafter-to-target per-token cost ratio; maximizing it
//! maximizes tokens per unit time.

use crate::error::{Error, Result};
use crate::tree::TreeConfig;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

/// Default drafter/target cost ratio when no measurements exist yet.
pub const LAMBDA_GAMMA_FALLBACK: f64 = 0.05;

/// Default EWMA smoothing for the online cost-ratio estimate.
pub const LAMBDA_GAMMA_SMOOTHING: f64 = 0.9;

/// The candidate tree configurations (the bandit's arms).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ArmSet {
    configs: Vec<TreeConfig>,
}

impl ArmSet {
    pub fn new(configs: Vec<TreeConfig>) -> Result<Self> {
        if configs.is_empty() {
            return Err(Error::InvalidConfig("arm set must contain >= 1 config".into()));
        }
        for (i, a) in configs.iter().enumerate() {
            for b in &configs[i + 1..] {
                if a == b {
                    return Err(Error::InvalidConfig(format!("duplicate arm {a}")));
                }
            }
        }
        Ok(Self { configs })
    }

    pub fn len(&self) -> usize {
        self.configs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.configs.is_empty()
    }

    pub fn config(&self, arm: usize) -> &TreeConfig {
        &self.configs[arm]
    }

    pub fn configs(&self) -> &[TreeConfig] {
        &self.configs
    }
}

impl FromStr for ArmSet {
    type Err = Error;

    /// Parses semicolon-separated config strings such as
    /// `"3,3,2,1;3,2,2,1,1;2,2,2,1,1,1"`.
    fn from_str(s: &str) -> Result<Self> {
        let configs = s
            .split(';')
            .map(|part| part.trim().parse::<TreeConfig>())
            .collect::<Result<Vec<_>>>()?;
        Self::new(configs)
    }
}

impl fmt::Display for ArmSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.configs.iter().map(|c| c.to_string()).collect();
        write!(f, "{}", parts.join(";"))
    }
}

/// What one draft-verify round produced, as the bandit sees it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundOutcome {
    /// Index of the arm that ran the round.
    pub arm: usize,
    /// Tokens committed this round (accepted drafts plus the one
    /// resampled-or-bonus token, so always >= 1).
    pub committed_tokens: usize,
    /// Draft length of the selected configuration.
    pub gamma: usize,
}

/// Per-arm UCB statistics.
#[derive(Clone, Debug)]
pub struct BanditState {
    counts: Vec<u64>,
    reward_sums: Vec<f64>,
    rounds: u64,
    lambda_ucb: f64,
}

impl BanditState {
    pub fn new(num_arms: usize, lambda_ucb: f64) -> Result<Self> {
        if num_arms == 0 {
            return Err(Error::InvalidState("bandit needs at least one arm".into()));
        }
        if !lambda_ucb.is_finite() || lambda_ucb < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "lambda_ucb {lambda_ucb} must be finite and >= 0"
            )));
        }
        Ok(Self {
            counts: vec![0; num_arms],
            reward_sums: vec![0.0; num_arms],
            rounds: 0,
            lambda_ucb,
        })
    }

    pub fn num_arms(&self) -> usize {
        self.counts.len()
    }

    /// Completed rounds (`t` in the selection rule).
    pub fn rounds(&self) -> u64 {
        self.rounds
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    /// Empirical mean reward of one arm (0 before its first selection).
    pub fn mean_reward(&self, arm: usize) -> f64 {
        if self.counts[arm] == 0 {
            0.0
        } else {
            self.reward_sums[arm] / self.counts[arm] as f64
        }
    }

    /// Pick the next arm: the lowest-index untried arm while any remain
    /// (cold start), otherwise the UCB argmax with ties broken by lowest
    /// index.
    pub fn select_arm(&self) -> Result<usize> {
        if self.counts.is_empty() {
            return Err(Error::InvalidState("bandit has no arms".into()));
        }
        if let Some(untried) = self.counts.iter().position(|&n| n == 0) {
            return Ok(untried);
        }
        let t = self.rounds as f64;
        let mut best = 0usize;
        let mut best_score = f64::NEG_INFINITY;
        for arm in 0..self.counts.len() {
            let bonus = self.lambda_ucb * (2.0 * t.ln() / self.counts[arm] as f64).sqrt();
            let score = self.mean_reward(arm) + bonus;
            if score > best_score {
                best_score = score;
                best = arm;
            }
        }
        Ok(best)
    }

    /// Record the round's reward for the selected arm. Non-selected arms are
    /// untouched (their indicator is zero).
    pub fn update(&mut self, arm: usize, reward: f64) -> Result<()> {
        if arm >= self.counts.len() {
            return Err(Error::InvalidArgument(format!(
                "arm {arm} out of range for {} arms",
                self.counts.len()
            )));
        }
        self.counts[arm] += 1;
        self.reward_sums[arm] += reward;
        self.rounds += 1;
        Ok(())
    }
}

/// Round reward: the negated inverse speedup,
/// `-(1/n + lambda_gamma * gamma / n)` for `n` committed tokens.
pub fn compute_reward(outcome: &RoundOutcome, lambda_gamma: f64) -> Result<f64> {
    if outcome.committed_tokens == 0 {
        return Err(Error::InvalidInput(
            "round committed zero tokens; every round must commit at least one".into(),
        ));
    }
    if !lambda_gamma.is_finite() || lambda_gamma < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "lambda_gamma {lambda_gamma} must be finite and >= 0"
        )));
    }
    let n = outcome.committed_tokens as f64;
    Ok(-(1.0 / n + lambda_gamma * outcome.gamma as f64 / n))
}

/// Exponentially-weighted mean of per-round `t_draft_per_token / t_target`
/// ratios. `smoothing` is the weight kept on the running value.
pub fn estimate_lambda_gamma(timings: &[(f64, f64)], smoothing: f64) -> Result<f64> {
    if timings.is_empty() {
        return Err(Error::InvalidInput("need at least one timing measurement".into()));
    }
    let mut estimator = LambdaGammaEstimator::new(smoothing)?;
    for &(t_draft, t_target) in timings {
        estimator.observe(t_draft, t_target)?;
    }
    Ok(estimator.value())
}

/// Online form of [`estimate_lambda_gamma`] used by the engine when the
/// cost ratio is set to auto.
#[derive(Clone, Debug)]
pub struct LambdaGammaEstimator {
    smoothing: f64,
    estimate: Option<f64>,
}

impl LambdaGammaEstimator {
    pub fn new(smoothing: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&smoothing) {
            return Err(Error::InvalidArgument(format!(
                "smoothing {smoothing} must lie in [0, 1)"
            )));
        }
        Ok(Self {
            smoothing,
            estimate: None,
        })
    }

    /// Fold in one round's drafter-per-token and target-per-pass times.
    pub fn observe(&mut self, t_draft_per_token: f64, t_target: f64) -> Result<()> {
        if !t_draft_per_token.is_finite()
            || t_draft_per_token <= 0.0
            || !t_target.is_finite()
            || t_target <= 0.0
        {
            return Err(Error::InvalidInput(format!(
                "timings must be positive, got ({t_draft_per_token}, {t_target})"
            )));
        }
        let ratio = t_draft_per_token / t_target;
        self.estimate = Some(match self.estimate {
            None => ratio,
            Some(prev) => self.smoothing * prev + (1.0 - self.smoothing) * ratio,
        });
        Ok(())
    }

    /// Current estimate, or [`LAMBDA_GAMMA_FALLBACK`] before any observation.
    pub fn value(&self) -> f64 {
        self.estimate.unwrap_or(LAMBDA_GAMMA_FALLBACK)
    }
}
