//! Generation metrics and their analytic oracles.
//!
//! The two headline quantities are acceptance length (tokens committed per
//! target forward pass) and throughput (tokens per second). Alongside them:
//! a closed-form acceptance-length expectation under a constant per-token
//! acceptance rate, the per-round speedup estimate derived from drafter and
//! target step times, and expected calibration error for comparing how well
//! a drafter's confidence tracks its agreement with the target.

use crate::bandit::RoundOutcome;
use crate::error::{Error, Result};
use crate::model::{Model, TokenId};
use serde::{Deserialize, Serialize};

/// Counters and timings for one generation run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    /// New tokens committed (prompt excluded).
    pub committed_total: usize,
    /// Target forward passes; exactly one per round.
    pub target_forward_passes: usize,
    pub wall_time_s: f64,
    pub draft_time_s: f64,
    pub verify_time_s: f64,
    /// Per-round log in order.
    pub rounds: Vec<RoundOutcome>,
}

impl RunMetrics {
    /// Tokens committed per target forward pass. At least 1 for any
    /// completed run, since every round commits at least one token.
    pub fn acceptance_length(&self) -> f64 {
        if self.target_forward_passes == 0 {
            return 0.0;
        }
        self.committed_total as f64 / self.target_forward_passes as f64
    }

    /// Tokens per second of wall time (0 when timing was zeroed).
    pub fn throughput(&self) -> f64 {
        if self.wall_time_s <= 0.0 {
            return 0.0;
        }
        self.committed_total as f64 / self.wall_time_s
    }

    /// Zero all wall-clock fields, for byte-deterministic reports.
    pub fn zero_timing(&mut self) {
        self.wall_time_s = 0.0;
        self.draft_time_s = 0.0;
        self.verify_time_s = 0.0;
    }
}

/// Expected tokens committed per round when each draft token is accepted
/// independently with probability `beta` and drafts run `gamma` deep:
/// `1 + beta (1 - beta^gamma) / (1 - beta)`, or `gamma + 1` at `beta = 1`.
pub fn acceptance_length_expectation(beta: f64, gamma: usize) -> Result<f64> {
    if !(0.0..=1.0).contains(&beta) {
        return Err(Error::InvalidArgument(format!(
            "beta {beta} outside [0, 1]"
        )));
    }
    if gamma == 0 {
        return Err(Error::InvalidArgument("gamma must be >= 1".into()));
    }
    if beta == 1.0 {
        return Ok(gamma as f64 + 1.0);
    }
    Ok(1.0 + beta * (1.0 - beta.powi(gamma as i32)) / (1.0 - beta))
}

/// Average per-round speedup over a run: each round contributes
/// `n_committed / (1 + gamma * t_draft / t_target)`, treating the
/// multi-token verification pass as costing one target step.
pub fn speedup_estimate(
    metrics: &RunMetrics,
    t_target_per_pass: f64,
    t_draft_per_token: f64,
) -> Result<f64> {
    if !t_target_per_pass.is_finite()
        || t_target_per_pass <= 0.0
        || !t_draft_per_token.is_finite()
        || t_draft_per_token < 0.0
    {
        return Err(Error::InvalidInput(format!(
            "timings must be positive (target) and non-negative (draft), got \
             ({t_target_per_pass}, {t_draft_per_token})"
        )));
    }
    if metrics.rounds.is_empty() {
        return Err(Error::InvalidInput("run has no rounds".into()));
    }
    let ratio = t_draft_per_token / t_target_per_pass;
    let total: f64 = metrics
        .rounds
        .iter()
        .map(|r| r.committed_tokens as f64 / (1.0 + r.gamma as f64 * ratio))
        .sum();
    Ok(total / metrics.rounds.len() as f64)
}

/// Standard binned expected calibration error over `(confidence, correct)`
/// pairs: `Σ_b (|b|/n) · |acc(b) - conf(b)|` with equal-width bins on
/// `[0, 1]` (confidence 1.0 lands in the last bin).
pub fn expected_calibration_error(pairs: &[(f64, bool)], bins: usize) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::InvalidInput("no calibration pairs".into()));
    }
    if bins == 0 {
        return Err(Error::InvalidArgument("bins must be >= 1".into()));
    }
    if let Some((c, _)) = pairs.iter().find(|(c, _)| !(0.0..=1.0).contains(c)) {
        return Err(Error::InvalidInput(format!(
            "confidence {c} outside [0, 1]"
        )));
    }
    let mut count = vec![0usize; bins];
    let mut conf_sum = vec![0.0f64; bins];
    let mut acc_sum = vec![0.0f64; bins];
    for &(conf, correct) in pairs {
        let b = ((conf * bins as f64) as usize).min(bins - 1);
        count[b] += 1;
        conf_sum[b] += conf;
        acc_sum[b] += if correct { 1.0 } else { 0.0 };
    }
    let n = pairs.len() as f64;
    let mut ece = 0.0;
    for b in 0..bins {
        if count[b] == 0 {
            continue;
        }
        let k = count[b] as f64;
        ece += (k / n) * ((acc_sum[b] / k) - (conf_sum[b] / k)).abs();
    }
    Ok(ece)
}

/// Collect `(drafter top-1 probability, drafter top-1 == target top-1)`
/// pairs at every position of every prompt: the raw material for a drafter
/// calibration ECE.
pub fn calibration_pairs<T: Model + ?Sized, D: Model + ?Sized>(
    target: &T,
    drafter: &D,
    prompts: &[Vec<TokenId>],
) -> Result<Vec<(f64, bool)>> {
    if target.vocab_size() != drafter.vocab_size() {
        return Err(Error::InvalidInput(
            "target and drafter must share a vocabulary size".into(),
        ));
    }
    let mut pairs = Vec::new();
    for prompt in prompts {
        let mut t_state = target.initial_state();
        let mut d_state = drafter.initial_state();
        for i in 0..=prompt.len() {
            let t_dist = target.predict(&t_state);
            let d_dist = drafter.predict(&d_state);
            let top = d_dist.argmax();
            pairs.push((d_dist.prob(top), top == t_dist.argmax()));
            if i < prompt.len() {
                t_state = target.step(&t_state, prompt[i])?.0;
                d_state = drafter.step(&d_state, prompt[i])?.0;
            }
        }
    }
    Ok(pairs)
}
