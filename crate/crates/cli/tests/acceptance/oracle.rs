//! Exact enumeration oracles.
//!
//! These recompute the draft-verify process laws from their mathematical
//! definitions — acceptance tests `min(1, p/q)`, residual updates, sibling
//! removal, without-replacement drafting — without calling the library's
//! verification or drafting code. Comparing the resulting process law with
//! the target model's autoregressive law is the losslessness check.
//!
//! Probabilities integrate the uniform acceptance variates analytically, so
//! the laws are exact up to f64 rounding.

use specdraft_core::{Distribution, Model, TokenId};
use std::collections::HashMap;

/// A distribution over token sequences.
pub type Law = HashMap<Vec<u32>, f64>;

/// Total-variation distance between two sequence laws.
pub fn tv_distance(a: &Law, b: &Law) -> f64 {
    let mut keys: Vec<&Vec<u32>> = a.keys().chain(b.keys()).collect();
    keys.sort();
    keys.dedup();
    0.5 * keys
        .iter()
        .map(|k| (a.get(*k).unwrap_or(&0.0) - b.get(*k).unwrap_or(&0.0)).abs())
        .sum::<f64>()
}

/// Exact autoregressive law of `model` over `horizon`-token continuations.
pub fn target_law<M: Model + ?Sized>(model: &M, prompt: &[TokenId], horizon: usize) -> Law {
    fn rec<M: Model + ?Sized>(
        model: &M,
        state: &specdraft_core::DrafterState,
        left: usize,
        weight: f64,
        seq: &mut Vec<u32>,
        law: &mut Law,
    ) {
        if left == 0 {
            *law.entry(seq.clone()).or_insert(0.0) += weight;
            return;
        }
        let dist = model.predict(state);
        for t in 0..model.vocab_size() as u32 {
            let p = dist.prob(TokenId(t));
            if p == 0.0 {
                continue;
            }
            let next = model.step(state, TokenId(t)).unwrap().0;
            seq.push(t);
            rec(model, &next, left - 1, weight * p, seq, law);
            seq.pop();
        }
    }
    let mut law = Law::new();
    let state = model.init_state(prompt).unwrap();
    rec(model, &state, horizon, 1.0, &mut Vec::new(), &mut law);
    law
}

/// Residual rule: normalized positive part of `p - q`, falling back to `p`
/// when the positive part vanishes.
fn residual(p: &[f64], q: &[f64]) -> Vec<f64> {
    let mut w: Vec<f64> = p
        .iter()
        .zip(q)
        .map(|(&pi, &qi)| (pi - qi).max(0.0))
        .collect();
    let sum: f64 = w.iter().sum();
    if sum <= 1e-12 {
        return p.to_vec();
    }
    for x in &mut w {
        *x /= sum;
    }
    w
}

/// Remove one token's mass and renormalize (the proposal update after a
/// sibling rejection).
fn remove_renorm(q: &[f64], token: usize) -> Vec<f64> {
    let mut w = q.to_vec();
    w[token] = 0.0;
    let sum: f64 = w.iter().sum();
    for x in &mut w {
        *x /= sum;
    }
    w
}

/// All ordered sequences of `width` distinct positive-mass tokens with their
/// without-replacement sampling probabilities.
fn ordered_sibling_sets(q: &[f64], width: usize) -> Vec<(Vec<usize>, f64)> {
    fn rec(
        q: &[f64],
        left: usize,
        remaining_mass: f64,
        taken: &mut Vec<usize>,
        weight: f64,
        out: &mut Vec<(Vec<usize>, f64)>,
    ) {
        if left == 0 {
            out.push((taken.clone(), weight));
            return;
        }
        for t in 0..q.len() {
            if q[t] == 0.0 || taken.contains(&t) {
                continue;
            }
            taken.push(t);
            rec(q, left - 1, remaining_mass - q[t], taken, weight * q[t] / remaining_mass, out);
            taken.pop();
        }
    }
    let mut out = Vec::new();
    rec(q, width, 1.0, &mut Vec::new(), 1.0, &mut out);
    out
}

/// Exact law of one sequential draft-verify round from the given states:
/// each entry is (tokens committed this round, probability).
fn seq_round_law<T: Model + ?Sized, D: Model + ?Sized>(
    target: &T,
    drafter: &D,
    t_state: &specdraft_core::DrafterState,
    d_state: &specdraft_core::DrafterState,
    gamma: usize,
) -> Vec<(Vec<u32>, f64)> {
    fn rec<T: Model + ?Sized, D: Model + ?Sized>(
        target: &T,
        drafter: &D,
        t_state: &specdraft_core::DrafterState,
        d_state: &specdraft_core::DrafterState,
        left: usize,
        weight: f64,
        committed: &mut Vec<u32>,
        out: &mut Vec<(Vec<u32>, f64)>,
    ) {
        let p = target.predict(t_state);
        if left == 0 {
            // Every draft accepted: bonus token from the tail distribution.
            for b in 0..target.vocab_size() as u32 {
                let pb = p.prob(TokenId(b));
                if pb > 0.0 {
                    let mut seq = committed.clone();
                    seq.push(b);
                    out.push((seq, weight * pb));
                }
            }
            return;
        }
        let q = drafter.predict(d_state);
        for t in 0..drafter.vocab_size() as u32 {
            let qt = q.prob(TokenId(t));
            if qt == 0.0 {
                continue;
            }
            let pt = p.prob(TokenId(t));
            let accept = (pt / qt).min(1.0);
            if accept > 0.0 {
                let t_next = target.step(t_state, TokenId(t)).unwrap().0;
                let d_next = drafter.step(d_state, TokenId(t)).unwrap().0;
                committed.push(t);
                rec(
                    target,
                    drafter,
                    &t_next,
                    &d_next,
                    left - 1,
                    weight * qt * accept,
                    committed,
                    out,
                );
                committed.pop();
            }
            if accept < 1.0 {
                let res = residual(p.probs(), q.probs());
                for (r, &pr) in res.iter().enumerate() {
                    if pr > 0.0 {
                        let mut seq = committed.clone();
                        seq.push(r as u32);
                        out.push((seq, weight * qt * (1.0 - accept) * pr));
                    }
                }
            }
        }
    }
    let mut out = Vec::new();
    rec(target, drafter, t_state, d_state, gamma, 1.0, &mut Vec::new(), &mut out);
    out
}

/// Exact law of one tree draft-verify round. Sibling sets along the accepted
/// path are enumerated explicitly; subtrees of rejected siblings integrate
/// out to one and never appear.
fn tree_round_law<T: Model + ?Sized, D: Model + ?Sized>(
    target: &T,
    drafter: &D,
    t_state: &specdraft_core::DrafterState,
    d_state: &specdraft_core::DrafterState,
    widths: &[usize],
) -> Vec<(Vec<u32>, f64)> {
    fn rec<T: Model + ?Sized, D: Model + ?Sized>(
        target: &T,
        drafter: &D,
        t_state: &specdraft_core::DrafterState,
        d_state: &specdraft_core::DrafterState,
        widths: &[usize],
        depth: usize,
        weight: f64,
        committed: &mut Vec<u32>,
        out: &mut Vec<(Vec<u32>, f64)>,
    ) {
        let p = target.predict(t_state);
        if depth == widths.len() {
            for b in 0..target.vocab_size() as u32 {
                let pb = p.prob(TokenId(b));
                if pb > 0.0 {
                    let mut seq = committed.clone();
                    seq.push(b);
                    out.push((seq, weight * pb));
                }
            }
            return;
        }
        let q = drafter.predict(d_state);
        let width = widths[depth];
        for (siblings, w_set) in ordered_sibling_sets(q.probs(), width) {
            let mut p_cur = p.probs().to_vec();
            let mut q_cur = q.probs().to_vec();
            let mut survive = weight * w_set;
            for (j, &t) in siblings.iter().enumerate() {
                let accept = (p_cur[t] / q_cur[t]).min(1.0);
                if accept > 0.0 {
                    let t_next = target.step(t_state, TokenId(t as u32)).unwrap().0;
                    let d_next = drafter.step(d_state, TokenId(t as u32)).unwrap().0;
                    committed.push(t as u32);
                    rec(
                        target,
                        drafter,
                        &t_next,
                        &d_next,
                        widths,
                        depth + 1,
                        survive * accept,
                        committed,
                        out,
                    );
                    committed.pop();
                }
                survive *= 1.0 - accept;
                if survive <= 0.0 {
                    break;
                }
                p_cur = residual(&p_cur, &q_cur);
                if j + 1 < width {
                    q_cur = remove_renorm(&q_cur, t);
                }
            }
            if survive > 0.0 {
                // Whole sibling set rejected: emit from the final residual.
                for (r, &pr) in p_cur.iter().enumerate() {
                    if pr > 0.0 {
                        let mut seq = committed.clone();
                        seq.push(r as u32);
                        out.push((seq, survive * pr));
                    }
                }
            }
        }
    }
    let mut out = Vec::new();
    rec(target, drafter, t_state, d_state, widths, 0, 1.0, &mut Vec::new(), &mut out);
    out
}

/// Chain rounds until `horizon` tokens are emitted, truncating the final
/// round, and aggregate the exact law over the first `horizon` tokens.
fn process_law<F>(prompt_len_tokens: &[TokenId], horizon: usize, round_law: &F) -> Law
where
    F: Fn(&[TokenId]) -> Vec<(Vec<u32>, f64)>,
{
    fn rec<F>(
        prompt: &[TokenId],
        committed: &mut Vec<u32>,
        horizon: usize,
        weight: f64,
        round_law: &F,
        law: &mut Law,
    ) where
        F: Fn(&[TokenId]) -> Vec<(Vec<u32>, f64)>,
    {
        let mut prefix: Vec<TokenId> = prompt.to_vec();
        prefix.extend(committed.iter().map(|&t| TokenId(t)));
        let need = horizon - committed.len();
        for (tokens, p) in round_law(&prefix) {
            if tokens.len() >= need {
                let mut seq = committed.clone();
                seq.extend_from_slice(&tokens[..need]);
                *law.entry(seq).or_insert(0.0) += weight * p;
            } else {
                let n = tokens.len();
                committed.extend_from_slice(&tokens);
                rec(prompt, committed, horizon, weight * p, round_law, law);
                committed.truncate(committed.len() - n);
            }
        }
    }
    let mut law = Law::new();
    rec(prompt_len_tokens, &mut Vec::new(), horizon, 1.0, round_law, &mut law);
    law
}

/// Exact law of the sequential draft-verify process over `horizon` tokens.
pub fn sd_sequential_law<T: Model + ?Sized, D: Model + ?Sized>(
    target: &T,
    drafter: &D,
    prompt: &[TokenId],
    gamma: usize,
    horizon: usize,
) -> Law {
    process_law(prompt, horizon, &|prefix: &[TokenId]| {
        let t_state = target.init_state(prefix).unwrap();
        let d_state = drafter.init_state(prefix).unwrap();
        seq_round_law(target, drafter, &t_state, &d_state, gamma)
    })
}

/// Exact law of the tree draft-verify process over `horizon` tokens.
pub fn sd_tree_law<T: Model + ?Sized, D: Model + ?Sized>(
    target: &T,
    drafter: &D,
    prompt: &[TokenId],
    widths: &[usize],
    horizon: usize,
) -> Law {
    process_law(prompt, horizon, &|prefix: &[TokenId]| {
        let t_state = target.init_state(prefix).unwrap();
        let d_state = drafter.init_state(prefix).unwrap();
        tree_round_law(target, drafter, &t_state, &d_state, widths)
    })
}

/// Per-node acceptance probability of a width-`w` sibling set for a fixed
/// `(p, q)` row (context-free models): `1 - P(all siblings rejected)`.
pub fn node_accept_probability(p: &Distribution, q: &Distribution, width: usize) -> f64 {
    let mut reject_total = 0.0;
    for (siblings, w_set) in ordered_sibling_sets(q.probs(), width) {
        let mut p_cur = p.probs().to_vec();
        let mut q_cur = q.probs().to_vec();
        let mut survive = w_set;
        for (j, &t) in siblings.iter().enumerate() {
            let accept = (p_cur[t] / q_cur[t]).min(1.0);
            survive *= 1.0 - accept;
            if survive <= 0.0 {
                break;
            }
            p_cur = residual(&p_cur, &q_cur);
            if j + 1 < width {
                q_cur = remove_renorm(&q_cur, t);
            }
        }
        reject_total += survive;
    }
    1.0 - reject_total
}
