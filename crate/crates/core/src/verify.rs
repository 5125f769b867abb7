//! Draft verification.
//!
//! Draft tokens are checked against the target model in draft order. In
//! sampling mode, token i is accepted when `u < min(1, p_i/q_i)` for a fresh
//! uniform `u`; on the first rejection a replacement is drawn from the
//! residual distribution `normalize((p - q)+)` and the round ends. If every
//! draft survives, one bonus token is drawn from the tail distribution. In
//! greedy mode the target is treated as one-hot: a draft is accepted exactly
//! when it equals the target argmax, and replacements/bonus tokens are
//! argmaxes. Both modes emit exactly one non-draft token per round, so a
//! round always commits between 1 and `gamma + 1` tokens.

use crate::error::{Error, Result};
use crate::model::{Distribution, TokenId};
use crate::rng::Randomness;
use serde::{Deserialize, Serialize};

/// Decoding mode: greedy verification (one-hot target) or sampling.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Greedy,
    Sampling,
}

/// The residual positive part is considered zero (p = q) below this.
pub const RESIDUAL_ZERO_TOLERANCE: f64 = 1e-12;

/// A drafted candidate chain with the drafter's distributions at each step.
#[derive(Clone, Debug)]
pub struct DraftSequence {
    tokens: Vec<TokenId>,
    q_probs: Vec<f64>,
    q_dists: Vec<Distribution>,
}

impl DraftSequence {
    /// Bundle draft tokens with the drafter distributions they were sampled
    /// from. `q_probs[i]` must equal `q_dists[i][tokens[i]]`.
    pub fn new(tokens: Vec<TokenId>, q_dists: Vec<Distribution>) -> Result<Self> {
        if tokens.is_empty() {
            return Err(Error::InvalidInput("draft must contain >= 1 token".into()));
        }
        if tokens.len() != q_dists.len() {
            return Err(Error::InvalidInput(format!(
                "{} draft tokens but {} drafter distributions",
                tokens.len(),
                q_dists.len()
            )));
        }
        let q_probs = tokens
            .iter()
            .zip(&q_dists)
            .map(|(&t, d)| {
                if t.index() >= d.len() {
                    return Err(Error::InvalidInput(format!(
                        "draft token {t} out of range for distribution of length {}",
                        d.len()
                    )));
                }
                Ok(d.prob(t))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            tokens,
            q_probs,
            q_dists,
        })
    }

    pub fn gamma(&self) -> usize {
        self.tokens.len()
    }

    pub fn tokens(&self) -> &[TokenId] {
        &self.tokens
    }

    pub fn q_probs(&self) -> &[f64] {
        &self.q_probs
    }

    pub fn q_dists(&self) -> &[Distribution] {
        &self.q_dists
    }
}

/// Result of verifying one round of drafts.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerifyOutcome {
    /// Accepted draft prefix plus the one resampled-or-bonus token.
    pub committed: Vec<TokenId>,
    /// How many draft tokens were accepted (`committed.len() - 1`).
    pub n_accepted_drafts: usize,
    /// Whether the final token came from the tail distribution (all drafts
    /// accepted) rather than a rejection resample.
    pub used_bonus: bool,
}

/// Normalized positive part of `p - q`; the distribution a rejection
/// resamples from. When `p = q` (positive part below
/// [`RESIDUAL_ZERO_TOLERANCE`]) the residual is `p` itself.
pub fn residual_distribution(p: &Distribution, q: &Distribution) -> Result<Distribution> {
    if p.len() != q.len() {
        return Err(Error::InvalidInput(format!(
            "residual over distributions of different lengths {} vs {}",
            p.len(),
            q.len()
        )));
    }
    let mut weights: Vec<f64> = p
        .probs()
        .iter()
        .zip(q.probs())
        .map(|(&pi, &qi)| (pi - qi).max(0.0))
        .collect();
    let sum: f64 = weights.iter().sum();
    if sum <= RESIDUAL_ZERO_TOLERANCE {
        return Ok(p.clone());
    }
    for w in &mut weights {
        *w /= sum;
    }
    Distribution::new(weights)
}

/// The acceptance test of sampling-mode verification:
/// accept iff `u < min(1, p_t / q_t)`.
///
/// `q_t` must be positive — a draft token with zero drafter mass cannot have
/// been sampled from the drafter and signals a drafting bug upstream.
pub fn accept_token(p_t: f64, q_t: f64, u: f64) -> Result<bool> {
    if q_t <= 0.0 {
        return Err(Error::InvalidInput(format!(
            "draft token has drafter probability {q_t}; drafts must carry positive mass"
        )));
    }
    debug_assert!((0.0..1.0).contains(&u));
    Ok(u < (p_t / q_t).min(1.0))
}

/// Verify a draft chain against `gamma + 1` target distributions (the last
/// being the tail used for the bonus token).
///
/// In sampling mode one uniform is drawn per draft position in order, then
/// one more for the resample/bonus draw. Greedy mode draws nothing.
pub fn verify_sequential<R: Randomness + ?Sized>(
    target_dists: &[Distribution],
    draft: &DraftSequence,
    mode: Mode,
    rng: &mut R,
) -> Result<VerifyOutcome> {
    let gamma = draft.gamma();
    if target_dists.len() != gamma + 1 {
        return Err(Error::InvalidInput(format!(
            "expected {} target distributions for gamma {gamma}, got {}",
            gamma + 1,
            target_dists.len()
        )));
    }
    let vocab = target_dists[0].len();
    if target_dists.iter().any(|d| d.len() != vocab)
        || draft.q_dists().iter().any(|d| d.len() != vocab)
    {
        return Err(Error::InvalidInput(
            "target and drafter distributions must share one vocabulary size".into(),
        ));
    }

    let mut committed = Vec::with_capacity(gamma + 1);
    for (i, (&token, p_i)) in draft.tokens().iter().zip(target_dists).enumerate() {
        let accepted = match mode {
            Mode::Greedy => token == p_i.argmax(),
            Mode::Sampling => {
                let u = rng.next_unit();
                accept_token(p_i.prob(token), draft.q_probs()[i], u)?
            }
        };
        if accepted {
            committed.push(token);
            continue;
        }
        let replacement = match mode {
            Mode::Greedy => p_i.argmax(),
            Mode::Sampling => residual_distribution(p_i, &draft.q_dists()[i])?.sample(rng),
        };
        committed.push(replacement);
        return Ok(VerifyOutcome {
            n_accepted_drafts: committed.len() - 1,
            committed,
            used_bonus: false,
        });
    }

    let tail = &target_dists[gamma];
    let bonus = match mode {
        Mode::Greedy => tail.argmax(),
        Mode::Sampling => tail.sample(rng),
    };
    committed.push(bonus);
    Ok(VerifyOutcome {
        n_accepted_drafts: gamma,
        committed,
        used_bonus: true,
    })
}
