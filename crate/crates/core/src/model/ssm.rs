//! Minimal selective state-space drafter.
//!
//! A diagonal linear recurrence over a fixed-size hidden state:
//!
//! ```text
//! h' = a ⊙ h + g(token) ⊙ e(token)
//! logits = W · h'
//! ```
//!
//! with per-dimension decay `a ∈ [0, 1)`, per-token input embedding `e` and
//! gate `g`, and an output projection to vocabulary logits. One step is one
//! state update plus one softmax — its cost and the state's size never depend
//! on how many tokens came before, which is the property that makes this
//! family attractive for drafting.

use super::{DrafterState, Distribution, Model, TokenId};
use crate::error::{Error, Result};
use crate::rng::Stream;
use serde::{Deserialize, Serialize};

/// Explicit parameter arrays for an [`SsmDrafter`].
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SsmParameters {
    /// Per-token input embeddings, `vocab_size` rows of `state_dim`.
    pub embedding: Vec<Vec<f64>>,
    /// Per-token input gates, `vocab_size` rows of `state_dim`.
    pub gate: Vec<Vec<f64>>,
    /// Per-dimension decay in `[0, 1)`, length `state_dim`.
    pub decay: Vec<f64>,
    /// Output projection, `vocab_size` rows of `state_dim`.
    pub output: Vec<Vec<f64>>,
}

/// A diagonal linear-recurrence drafter with constant per-step cost.
#[derive(Clone, Debug)]
pub struct SsmDrafter {
    vocab_size: usize,
    state_dim: usize,
    /// Row-major `[vocab_size][state_dim]`: precomputed `g(t) ⊙ e(t)`.
    input: Vec<f64>,
    decay: Vec<f64>,
    /// Row-major `[vocab_size][state_dim]` output projection.
    output: Vec<f64>,
    params: SsmParameters,
    /// Softmax temperature baked in at load time.
    temperature: f64,
}

impl SsmDrafter {
    pub fn new(params: SsmParameters) -> Result<Self> {
        let vocab_size = params.embedding.len();
        if vocab_size == 0 {
            return Err(Error::InvalidArgument("vocab_size must be >= 1".into()));
        }
        let state_dim = params.decay.len();
        if state_dim == 0 {
            return Err(Error::InvalidArgument("state_dim must be >= 1".into()));
        }
        if params.gate.len() != vocab_size || params.output.len() != vocab_size {
            return Err(Error::InvalidInput(
                "embedding, gate, and output must all have vocab_size rows".into(),
            ));
        }
        for row in params
            .embedding
            .iter()
            .chain(&params.gate)
            .chain(&params.output)
        {
            if row.len() != state_dim {
                return Err(Error::InvalidInput(format!(
                    "parameter row of length {}, expected state_dim {state_dim}",
                    row.len()
                )));
            }
        }
        if let Some(a) = params
            .decay
            .iter()
            .find(|a| !a.is_finite() || **a < 0.0 || **a >= 1.0)
        {
            return Err(Error::InvalidInput(format!(
                "decay entry {a} outside [0, 1)"
            )));
        }
        let mut input = vec![0.0; vocab_size * state_dim];
        let mut output = vec![0.0; vocab_size * state_dim];
        for t in 0..vocab_size {
            for d in 0..state_dim {
                input[t * state_dim + d] = params.gate[t][d] * params.embedding[t][d];
                output[t * state_dim + d] = params.output[t][d];
            }
        }
        Ok(Self {
            vocab_size,
            state_dim,
            input,
            decay: params.decay.clone(),
            output,
            params,
            temperature: 1.0,
        })
    }

    /// Randomly parameterized drafter: embeddings, gates, and projections are
    /// unit Gaussians scaled by `1/sqrt(state_dim)`; decays are sigmoids of
    /// unit Gaussians. Fully determined by `seed`.
    pub fn seeded(vocab_size: usize, state_dim: usize, seed: u64) -> Result<Self> {
        if vocab_size == 0 || state_dim == 0 {
            return Err(Error::InvalidArgument(
                "vocab_size and state_dim must be >= 1".into(),
            ));
        }
        let mut stream = Stream::named(seed, "ssm-params");
        let scale = 1.0 / (state_dim as f64).sqrt();
        let matrix = |stream: &mut Stream| -> Vec<Vec<f64>> {
            (0..vocab_size)
                .map(|_| (0..state_dim).map(|_| stream.next_gaussian() * scale).collect())
                .collect()
        };
        let embedding = matrix(&mut stream);
        let gate = matrix(&mut stream);
        let output = matrix(&mut stream);
        let decay = (0..state_dim)
            .map(|_| sigmoid(stream.next_gaussian()))
            .collect();
        Self::new(SsmParameters {
            embedding,
            gate,
            decay,
            output,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn parameters(&self) -> &SsmParameters {
        &self.params
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    /// Scale logits by `1/t` before the softmax.
    pub fn apply_temperature(&mut self, t: f64) -> Result<()> {
        if !t.is_finite() || t <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "temperature {t} must be finite and > 0 (greedy is a verification mode)"
            )));
        }
        self.temperature = t;
        Ok(())
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl Model for SsmDrafter {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn state_len(&self) -> usize {
        self.state_dim
    }

    fn initial_state(&self) -> DrafterState {
        DrafterState::new(vec![0.0; self.state_dim], 0)
    }

    fn absorb_into(
        &self,
        state: &DrafterState,
        token: TokenId,
        out: &mut DrafterState,
    ) -> Result<()> {
        self.check_token(token)?;
        let row = &self.input[token.index() * self.state_dim..][..self.state_dim];
        let src = state.payload();
        let dst = out.payload_mut();
        for d in 0..self.state_dim {
            dst[d] = self.decay[d] * src[d] + row[d];
        }
        out.set_position(state.position() + 1);
        Ok(())
    }

    fn predict_into(&self, state: &DrafterState, out: &mut Distribution) {
        let h = state.payload();
        let probs = out.probs_mut();
        let inv_t = 1.0 / self.temperature;
        let mut max_logit = f64::NEG_INFINITY;
        for (t, slot) in probs.iter_mut().enumerate() {
            let row = &self.output[t * self.state_dim..][..self.state_dim];
            let mut logit = 0.0;
            for d in 0..self.state_dim {
                logit += row[d] * h[d];
            }
            let scaled = logit * inv_t;
            *slot = scaled;
            if scaled > max_logit {
                max_logit = scaled;
            }
        }
        let mut sum = 0.0;
        for p in probs.iter_mut() {
            *p = (*p - max_logit).exp();
            sum += *p;
        }
        for p in probs.iter_mut() {
            *p /= sum;
        }
    }
}
