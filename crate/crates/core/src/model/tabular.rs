//! Exact tabular n-gram model.
//!
//! Conditions on the last `order - 1` tokens. Contexts shorter than that
//! (early in a sequence) are left-padded with a reserved BOS symbol, so every
//! prefix maps to exactly one table row and lookups are total. The table is
//! stored densely, indexed by a mixed-radix encoding of the context window,
//! which keeps prediction allocation-free.
//!
//! Rows can be supplied explicitly or generated from a seed as symmetric
//! Dirichlet draws. Generation is pinned to a fixed algorithm (per-row
//! substreams, Marsaglia–Tsang gamma with Box–Muller normals) so that a seed
//! denotes the same model everywhere.

use super::{DrafterState, Distribution, Model, TokenId};
use crate::error::{Error, Result};
use crate::rng::Stream;

/// Row sums in explicit model files must be within this of 1 before the
/// loader renormalizes.
pub const ROW_SUM_TOLERANCE: f64 = 1e-6;

const MAX_DENSE_ROWS: usize = 10_000_000;

/// An exact n-gram model with dense context rows.
#[derive(Clone, Debug)]
pub struct TabularModel {
    vocab_size: usize,
    order: usize,
    /// Dense rows indexed by mixed-radix context over `vocab_size + 1`
    /// symbols (symbol 0 = BOS, symbol t+1 = token t). Unreachable slots
    /// hold a uniform placeholder.
    rows: Vec<Distribution>,
    /// Temperature baked into the rows at load time (1.0 = untouched).
    temperature: f64,
}

impl TabularModel {
    /// Build from explicit rows, one per reachable context.
    ///
    /// Each row is `(context, probs)` where `context` is the unpadded list of
    /// most recent tokens (length `0..order`). Every reachable context must
    /// appear exactly once, and each row must sum to 1 within
    /// [`ROW_SUM_TOLERANCE`]; rows are renormalized exactly on ingest.
    pub fn from_rows(
        vocab_size: usize,
        order: usize,
        rows: Vec<(Vec<u32>, Vec<f64>)>,
    ) -> Result<Self> {
        let mut model = Self::empty(vocab_size, order)?;
        let mut seen = vec![false; model.rows.len()];
        for (context, probs) in rows {
            if context.len() >= order {
                return Err(Error::InvalidInput(format!(
                    "context {context:?} longer than order-1 = {}",
                    order - 1
                )));
            }
            if let Some(&t) = context.iter().find(|&&t| t as usize >= vocab_size) {
                return Err(Error::InvalidInput(format!(
                    "context token {t} out of range for vocab size {vocab_size}"
                )));
            }
            if probs.len() != vocab_size {
                return Err(Error::InvalidInput(format!(
                    "row for context {context:?} has {} entries, expected {vocab_size}",
                    probs.len()
                )));
            }
            let sum: f64 = probs.iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
                return Err(Error::InvariantViolation(format!(
                    "row for context {context:?} sums to {sum}, not 1 within {ROW_SUM_TOLERANCE}"
                )));
            }
            let idx = model.index_of_unpadded(&context);
            if seen[idx] {
                return Err(Error::InvalidInput(format!(
                    "duplicate row for context {context:?}"
                )));
            }
            seen[idx] = true;
            model.rows[idx] = Distribution::from_weights(probs)?;
        }
        for (idx, seen) in seen.iter().enumerate() {
            if !seen && model.is_reachable(idx) {
                return Err(Error::InvariantViolation(format!(
                    "missing row for reachable context index {idx}"
                )));
            }
        }
        Ok(model)
    }

    /// Generate rows deterministically from a seed: each reachable context
    /// gets an independent symmetric Dirichlet(`concentration`) draw.
    pub fn seeded(vocab_size: usize, order: usize, seed: u64, concentration: f64) -> Result<Self> {
        if !concentration.is_finite() || concentration < 1e-3 {
            return Err(Error::InvalidArgument(format!(
                "dirichlet concentration {concentration} must be finite and >= 1e-3"
            )));
        }
        let mut model = Self::empty(vocab_size, order)?;
        let root = Stream::named(seed, "tabular-rows");
        let mut row_id = 0u64;
        for idx in 0..model.rows.len() {
            if !model.is_reachable(idx) {
                continue;
            }
            let mut stream = root.derive_u64(row_id);
            row_id += 1;
            let weights: Vec<f64> = (0..vocab_size)
                .map(|_| sample_gamma(&mut stream, concentration))
                .collect();
            model.rows[idx] = Distribution::from_weights(weights)?;
        }
        Ok(model)
    }

    /// Order-1 model holding a single context-free row.
    pub fn unigram(probs: Vec<f64>) -> Result<Self> {
        let vocab = probs.len();
        Self::from_rows(vocab, 1, vec![(vec![], probs)])
    }

    fn empty(vocab_size: usize, order: usize) -> Result<Self> {
        if vocab_size == 0 {
            return Err(Error::InvalidArgument("vocab_size must be >= 1".into()));
        }
        if order == 0 {
            return Err(Error::InvalidArgument("order must be >= 1".into()));
        }
        let n_rows = match (vocab_size + 1).checked_pow((order - 1) as u32) {
            Some(n) if n <= MAX_DENSE_ROWS => n,
            _ => {
                return Err(Error::InvalidArgument(format!(
                    "dense table for vocab {vocab_size} order {order} exceeds {MAX_DENSE_ROWS} rows"
                )))
            }
        };
        Ok(Self {
            vocab_size,
            order,
            rows: vec![Distribution::uniform(vocab_size); n_rows],
            temperature: 1.0,
        })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    /// Temperature applied to the rows at load time.
    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    /// Sharpen or flatten every row as `p^(1/t)`, renormalized.
    pub fn apply_temperature(&mut self, t: f64) -> Result<()> {
        if !t.is_finite() || t <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "temperature {t} must be finite and > 0 (greedy is a verification mode)"
            )));
        }
        if t == 1.0 {
            return Ok(());
        }
        let inv = 1.0 / t;
        for row in &mut self.rows {
            let weights: Vec<f64> = row.probs().iter().map(|p| p.powf(inv)).collect();
            *row = Distribution::from_weights(weights)?;
        }
        self.temperature = t;
        Ok(())
    }

    /// Row for an unpadded recent-token context (the last `order - 1` tokens
    /// of a prefix, or fewer for short prefixes).
    pub fn context_row(&self, context: &[TokenId]) -> Result<&Distribution> {
        if context.len() >= self.order {
            return Err(Error::InvalidInput(format!(
                "context of length {} exceeds order-1 = {}",
                context.len(),
                self.order - 1
            )));
        }
        for &t in context {
            self.check_token(t)?;
        }
        let raw: Vec<u32> = context.iter().map(|t| t.0).collect();
        Ok(&self.rows[self.index_of_unpadded(&raw)])
    }

    /// Iterate `(unpadded context, row)` over all reachable contexts in
    /// canonical order (shorter contexts first, then lexicographic). This is
    /// also the order in which seeded generation assigns row substreams.
    pub fn reachable_rows(&self) -> Vec<(Vec<TokenId>, &Distribution)> {
        let v = self.vocab_size as u64;
        let mut out = Vec::new();
        for len in 0..self.order {
            for code in 0..v.pow(len as u32) {
                let mut context = vec![0u32; len];
                let mut rest = code;
                for slot in (0..len).rev() {
                    context[slot] = (rest % v) as u32;
                    rest /= v;
                }
                let row = &self.rows[self.index_of_unpadded(&context)];
                out.push((context.into_iter().map(TokenId).collect(), row));
            }
        }
        out
    }

    /// Dense index of an unpadded context: left-pad with BOS (symbol 0) to
    /// `order - 1` symbols, then mixed-radix over `vocab_size + 1`.
    fn index_of_unpadded(&self, context: &[u32]) -> usize {
        let width = self.order - 1;
        let base = self.vocab_size + 1;
        let pad = width - context.len();
        let mut idx = 0usize;
        for slot in 0..width {
            let symbol = if slot < pad {
                0
            } else {
                context[slot - pad] as usize + 1
            };
            idx = idx * base + symbol;
        }
        idx
    }

    /// A dense slot is reachable iff its BOS symbols form a (possibly empty)
    /// left prefix of the window.
    fn is_reachable(&self, mut idx: usize) -> bool {
        let width = self.order - 1;
        let base = self.vocab_size + 1;
        let mut symbols = vec![0usize; width];
        for slot in (0..width).rev() {
            symbols[slot] = idx % base;
            idx /= base;
        }
        let first_real = symbols.iter().position(|&s| s != 0).unwrap_or(width);
        symbols[first_real..].iter().all(|&s| s != 0)
    }
}

impl Model for TabularModel {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn state_len(&self) -> usize {
        self.order - 1
    }

    fn initial_state(&self) -> DrafterState {
        // All-zero payload = all-BOS window.
        DrafterState::new(vec![0.0; self.order - 1], 0)
    }

    fn absorb_into(
        &self,
        state: &DrafterState,
        token: TokenId,
        out: &mut DrafterState,
    ) -> Result<()> {
        self.check_token(token)?;
        let width = self.order - 1;
        let src = state.payload();
        debug_assert_eq!(src.len(), width);
        let dst = out.payload_mut();
        if width > 0 {
            dst[..width - 1].copy_from_slice(&src[1..width]);
            dst[width - 1] = (token.0 + 1) as f64;
        }
        out.set_position(state.position() + 1);
        Ok(())
    }

    fn predict_into(&self, state: &DrafterState, out: &mut Distribution) {
        let width = self.order - 1;
        let base = self.vocab_size + 1;
        let mut idx = 0usize;
        for i in 0..width {
            idx = idx * base + state.payload()[i] as usize;
        }
        out.copy_from(&self.rows[idx]);
    }
}

/// Gamma(`alpha`, 1) sample via Marsaglia–Tsang, boosted for `alpha < 1`.
/// Draw order from `stream` is part of the model-file format contract.
fn sample_gamma(stream: &mut Stream, alpha: f64) -> f64 {
    if alpha < 1.0 {
        let boost = sample_gamma(stream, alpha + 1.0);
        let u = 1.0 - stream.next_f64(); // (0, 1]
        return boost * u.powf(1.0 / alpha);
    }
    let d = alpha - 1.0 / 3.0;
    let c = 1.0 / (3.0 * d.sqrt());
    loop {
        let x = stream.next_gaussian();
        let v = (1.0 + c * x).powi(3);
        if v <= 0.0 {
            continue;
        }
        let u = stream.next_f64();
        if u < 1.0 - 0.0331 * x.powi(4) {
            return d * v;
        }
        if u.ln() < 0.5 * x * x + d * (1.0 - v + v.ln()) {
            return d * v;
        }
    }
}
