//! Model interfaces and desk-scale implementations.
//!
//! A [`Model`] is a recurrent next-token predictor: it owns no mutable state
//! of its own, and all sequence context lives in a [`DrafterState`] value
//! whose payload size depends only on model hyperparameters — never on how
//! many tokens it has absorbed. That fixed-size-state contract is what makes
//! drafting cost and memory independent of context length, and what makes
//! tree drafting a matter of copying states.
//!
//! Two implementations are provided: [`TabularModel`], an exact n-gram table
//! used as a correctness oracle (its autoregressive distribution can be
//! enumerated exactly), and [`SsmDrafter`], a diagonal linear-recurrence
//! drafter exercising the constant-state performance properties.

mod file;
mod ssm;
mod tabular;

pub use file::{load_model, load_model_str, model_to_string, save_model, LoadedModel};
pub use ssm::{SsmDrafter, SsmParameters};
pub use tabular::TabularModel;

use crate::error::{Error, Result};
use crate::rng::Randomness;
use serde::{Deserialize, Serialize};

/// Tolerance for accepting a probability vector as normalized.
pub const DIST_SUM_TOLERANCE: f64 = 1e-9;

/// A token index in `[0, vocab_size)`.
#[derive(
    Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct TokenId(pub u32);

impl TokenId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl From<u32> for TokenId {
    fn from(id: u32) -> Self {
        TokenId(id)
    }
}

impl std::fmt::Display for TokenId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// A probability vector over the vocabulary: entries non-negative, summing
/// to 1 within [`DIST_SUM_TOLERANCE`].
#[derive(Clone, Debug, PartialEq)]
pub struct Distribution {
    probs: Vec<f64>,
}

impl Distribution {
    /// Validate and wrap a probability vector.
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::InvalidInput("empty probability vector".into()));
        }
        if let Some(p) = probs.iter().find(|p| !p.is_finite() || **p < 0.0) {
            return Err(Error::InvalidInput(format!(
                "probability entry {p} is negative or non-finite"
            )));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > DIST_SUM_TOLERANCE {
            return Err(Error::InvalidInput(format!(
                "probabilities sum to {sum}, expected 1 within {DIST_SUM_TOLERANCE}"
            )));
        }
        Ok(Self { probs })
    }

    /// Normalize a non-negative weight vector into a distribution.
    /// Errors if the weights sum to zero or contain negatives.
    pub fn from_weights(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::InvalidInput("empty weight vector".into()));
        }
        if let Some(w) = weights.iter().find(|w| !w.is_finite() || **w < 0.0) {
            return Err(Error::InvalidInput(format!(
                "weight entry {w} is negative or non-finite"
            )));
        }
        let sum: f64 = weights.iter().sum();
        if sum <= 0.0 {
            return Err(Error::InvalidInput("weights sum to zero".into()));
        }
        let mut probs = weights;
        // Skip the division for already-normalized input so that loading a
        // saved model is a fixed point (bit-exact round trips).
        if (sum - 1.0).abs() > 1e-12 {
            for p in &mut probs {
                *p /= sum;
            }
        }
        Ok(Self { probs })
    }

    /// Uniform distribution over `n` tokens.
    pub fn uniform(n: usize) -> Self {
        assert!(n > 0, "uniform distribution needs at least one token");
        Self {
            probs: vec![1.0 / n as f64; n],
        }
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.probs.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    #[inline]
    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// Probability mass of one token.
    #[inline]
    pub fn prob(&self, token: TokenId) -> f64 {
        self.probs[token.index()]
    }

    /// Highest-probability token; ties broken by lowest token id.
    pub fn argmax(&self) -> TokenId {
        let mut best = 0usize;
        for (i, &p) in self.probs.iter().enumerate() {
            if p > self.probs[best] {
                best = i;
            }
        }
        TokenId(best as u32)
    }

    /// Inverse-CDF sample for a given uniform variate `u` in `[0, 1)`:
    /// the first token whose cumulative mass strictly exceeds `u`.
    /// Zero-probability tokens are never returned.
    pub fn sample_u(&self, u: f64) -> TokenId {
        debug_assert!((0.0..1.0).contains(&u));
        let mut cum = 0.0;
        for (i, &p) in self.probs.iter().enumerate() {
            cum += p;
            if cum > u {
                return TokenId(i as u32);
            }
        }
        // Rounding left cum slightly below 1: fall back to the last token
        // carrying mass.
        let last = self
            .probs
            .iter()
            .rposition(|&p| p > 0.0)
            .expect("distribution has positive mass");
        TokenId(last as u32)
    }

    /// Draw a token using one uniform variate from `rng`.
    pub fn sample<R: Randomness + ?Sized>(&self, rng: &mut R) -> TokenId {
        self.sample_u(rng.next_unit())
    }

    /// Overwrite `self` with `src` without reallocating. Lengths must match.
    pub(crate) fn copy_from(&mut self, src: &Distribution) {
        self.probs.copy_from_slice(&src.probs);
    }

    /// Mutable access for in-place construction by model `predict_into`
    /// implementations. Callers must leave the vector normalized.
    pub(crate) fn probs_mut(&mut self) -> &mut [f64] {
        &mut self.probs
    }
}

/// Fixed-size recurrent state of a model.
///
/// The payload layout is model-defined; its length is a function of the
/// model's hyperparameters only, independent of `position` (the number of
/// tokens absorbed). States are plain values: cloning one yields a fully
/// independent copy.
#[derive(Clone, Debug, PartialEq)]
pub struct DrafterState {
    payload: Vec<f64>,
    position: u64,
}

impl DrafterState {
    pub(crate) fn new(payload: Vec<f64>, position: u64) -> Self {
        Self { payload, position }
    }

    /// Number of tokens absorbed so far.
    #[inline]
    pub fn position(&self) -> u64 {
        self.position
    }

    /// The state payload. Its length never changes over the state's life.
    #[inline]
    pub fn payload(&self) -> &[f64] {
        &self.payload
    }

    /// Payload size in bytes.
    pub fn payload_bytes(&self) -> usize {
        self.payload.len() * std::mem::size_of::<f64>()
    }

    pub(crate) fn payload_mut(&mut self) -> &mut [f64] {
        &mut self.payload
    }

    pub(crate) fn set_position(&mut self, position: u64) {
        self.position = position;
    }
}

/// A recurrent next-token model over a fixed vocabulary.
///
/// Implementations are immutable after construction and safe to share across
/// threads; all mutation happens through owned [`DrafterState`] values.
pub trait Model: Send + Sync {
    fn vocab_size(&self) -> usize;

    /// Payload length of this model's states.
    fn state_len(&self) -> usize;

    /// Zero-initialized state with no tokens absorbed.
    fn initial_state(&self) -> DrafterState;

    /// Absorb one token: write the successor of `state` into `out`.
    /// `out` must come from this model (matching payload length).
    fn absorb_into(&self, state: &DrafterState, token: TokenId, out: &mut DrafterState)
        -> Result<()>;

    /// Next-token distribution as a function of the current state, written
    /// into `out` (length `vocab_size`). Allocation-free.
    fn predict_into(&self, state: &DrafterState, out: &mut Distribution);

    /// Next-token distribution as a function of the current state.
    fn predict(&self, state: &DrafterState) -> Distribution {
        let mut out = Distribution::uniform(self.vocab_size());
        self.predict_into(state, &mut out);
        out
    }

    /// One decoding step: absorb `token`, then return the successor state and
    /// the next-token distribution conditioned on everything absorbed so far.
    /// The input state is untouched. Cost is independent of `state.position()`.
    fn step(&self, state: &DrafterState, token: TokenId) -> Result<(DrafterState, Distribution)> {
        let mut next = state.clone();
        self.absorb_into(state, token, &mut next)?;
        let dist = self.predict(&next);
        Ok((next, dist))
    }

    /// In-place variant of [`Model::step`] for preallocated buffers.
    fn step_into(
        &self,
        state: &DrafterState,
        token: TokenId,
        out_state: &mut DrafterState,
        out_dist: &mut Distribution,
    ) -> Result<()> {
        self.absorb_into(state, token, out_state)?;
        self.predict_into(out_state, out_dist);
        Ok(())
    }

    /// Absorb a prefix left-to-right from the zero state (prefill). Equals
    /// the fold of [`Model::step`] over the prefix tokens, exactly.
    fn init_state(&self, prefix: &[TokenId]) -> Result<DrafterState> {
        let mut state = self.initial_state();
        let mut next = state.clone();
        for &token in prefix {
            self.absorb_into(&state, token, &mut next)?;
            std::mem::swap(&mut state, &mut next);
        }
        Ok(state)
    }

    fn check_token(&self, token: TokenId) -> Result<()> {
        if token.index() >= self.vocab_size() {
            return Err(Error::InvalidInput(format!(
                "token {token} out of range for vocab size {}",
                self.vocab_size()
            )));
        }
        Ok(())
    }
}

/// Duplicate a state into `copies` independent values.
///
/// Each copy is value-isolated: stepping or mutating one leaves the others
/// (and the original) unchanged. Cost is linear in `copies * payload length`
/// and independent of the state's position.
pub fn duplicate_state(state: &DrafterState, copies: usize) -> Result<Vec<DrafterState>> {
    if copies == 0 {
        return Err(Error::InvalidArgument(
            "duplicate_state requires copies >= 1".into(),
        ));
    }
    Ok(vec![state.clone(); copies])
}

/// Score a candidate chain with the target model in one pass.
///
/// Returns `candidates.len() + 1` distributions: the i-th conditions on
/// `prefix + candidates[..i]`, and the final one is the tail distribution
/// used for the bonus token. One call counts as a single target forward pass
/// for metrics purposes.
pub fn target_score_parallel<M: Model + ?Sized>(
    model: &M,
    prefix: &[TokenId],
    candidates: &[TokenId],
) -> Result<Vec<Distribution>> {
    let state = model.init_state(prefix)?;
    score_from_state(model, &state, candidates)
}

/// As [`target_score_parallel`], but continuing from an already-absorbed
/// prefix state.
pub fn score_from_state<M: Model + ?Sized>(
    model: &M,
    prefix_state: &DrafterState,
    candidates: &[TokenId],
) -> Result<Vec<Distribution>> {
    let mut dists = Vec::with_capacity(candidates.len() + 1);
    dists.push(model.predict(prefix_state));
    let mut state = prefix_state.clone();
    let mut scratch = state.clone();
    for &token in candidates {
        model.absorb_into(&state, token, &mut scratch)?;
        std::mem::swap(&mut state, &mut scratch);
        dists.push(model.predict(&state));
    }
    Ok(dists)
}
