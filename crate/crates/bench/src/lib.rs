//! Shared fixtures for the criterion benches.

use specdraft_core::{SsmDrafter, TabularModel, TokenId};

/// The drafter used across step/duplication/tree benches.
pub fn bench_drafter() -> SsmDrafter {
    SsmDrafter::seeded(64, 64, 7).unwrap()
}

/// A seeded tabular target/drafter pair for end-to-end rounds.
pub fn bench_pair(vocab: usize) -> (TabularModel, TabularModel) {
    (
        TabularModel::seeded(vocab, 2, 11, 0.3).unwrap(),
        TabularModel::seeded(vocab, 2, 12, 0.3).unwrap(),
    )
}

/// A repeating prompt of the requested length.
pub fn prompt(len: usize, vocab: usize) -> Vec<TokenId> {
    (0..len).map(|i| TokenId((i % vocab) as u32)).collect()
}
