//! Tree-structured drafting via batch generation.
//!
//! A tree configuration `(N_1, ..., N_γ)` gives the per-depth branching
//! widths. Expanding depth i means duplicating each depth-(i-1) state N_i
//! times, stepping each copy once, and sampling N_i distinct child tokens
//! per parent — so the whole tree costs `Σ B_i` drafter steps where
//! `B_i = N_1 × ... × N_i` is the batch size at depth i.
//!
//! Because batch sizes are known from the configuration alone, all state
//! buffers and workspaces are allocated once in a [`StateCachePlan`] and
//! reused across rounds: drafting performs no heap allocation after the plan
//! is built.
//!
//! Verification walks the tree from the root. Greedy mode follows the child
//! matching the target argmax. Sampling mode applies sibling-wise rejection
//! without replacement: siblings are tried in their sampled order, and each
//! rejection folds the rejected mass out of both the target residual `p` and
//! the proposal `q` before the next sibling is tried. This preserves the
//! target distribution exactly, which the test suite checks by full
//! enumeration.

use crate::error::{Error, Result};
use crate::model::{DrafterState, Distribution, Model, TokenId};
use crate::rng::{Randomness, Stream};
use crate::verify::{accept_token, residual_distribution, Mode, VerifyOutcome};
use std::fmt;
use std::ops::Range;
use std::str::FromStr;

/// Per-depth branching widths `(N_1, ..., N_γ)`, all at least 1.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct TreeConfig {
    widths: Vec<usize>,
}

impl TreeConfig {
    pub fn new(widths: Vec<usize>) -> Result<Self> {
        if widths.is_empty() {
            return Err(Error::InvalidConfig("tree config must have gamma >= 1".into()));
        }
        if widths.contains(&0) {
            return Err(Error::InvalidConfig("tree widths must all be >= 1".into()));
        }
        Ok(Self { widths })
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    /// Draft length: the tree depth.
    pub fn gamma(&self) -> usize {
        self.widths.len()
    }

    /// Cumulative-product batch sizes `B_i = N_1 × ... × N_i`.
    pub fn batch_sizes(&self) -> Vec<usize> {
        self.widths
            .iter()
            .scan(1usize, |acc, &w| {
                *acc *= w;
                Some(*acc)
            })
            .collect()
    }

    /// Total node count `Σ B_i`.
    pub fn node_count(&self) -> usize {
        self.batch_sizes().iter().sum()
    }
}

impl FromStr for TreeConfig {
    type Err = Error;

    /// Parses comma-separated width lists such as `"3,2,2,1,1"`.
    fn from_str(s: &str) -> Result<Self> {
        let widths = s
            .split(',')
            .map(|part| {
                part.trim()
                    .parse::<usize>()
                    .map_err(|_| Error::InvalidConfig(format!("bad tree width {part:?} in {s:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(widths)
    }
}

impl fmt::Display for TreeConfig {
    /// Widths joined by commas, matching the parse form.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.widths.iter().map(|w| w.to_string()).collect();
        write!(f, "{}", parts.join(","))
    }
}

/// One drafted node.
#[derive(Clone, Debug)]
pub struct TreeNode {
    pub token: TokenId,
    /// The drafter's probability of `token` in the original (pre-removal)
    /// parent distribution.
    pub q_prob: f64,
    /// The full (un-renormalized) drafter distribution this node was sampled
    /// from; shared in content by all siblings under one parent.
    pub q_dist: Distribution,
    /// Parent node id; `None` for depth-1 nodes (children of the root).
    pub parent: Option<usize>,
    /// 1-based depth.
    pub depth: usize,
}

/// A drafted candidate tree in level order: all depth-1 nodes first, then
/// depth-2, and so on. The root itself (the pre-draft context) is implicit.
#[derive(Clone, Debug)]
pub struct DraftTree {
    widths: Vec<usize>,
    batch_sizes: Vec<usize>,
    /// Start of each depth level in `nodes`.
    level_offsets: Vec<usize>,
    nodes: Vec<TreeNode>,
}

impl DraftTree {
    fn skeleton(config: &TreeConfig, vocab_size: usize) -> Self {
        let batch_sizes = config.batch_sizes();
        let mut level_offsets = Vec::with_capacity(batch_sizes.len());
        let mut offset = 0;
        for &b in &batch_sizes {
            level_offsets.push(offset);
            offset += b;
        }
        let mut nodes = Vec::with_capacity(offset);
        for (level, &b) in batch_sizes.iter().enumerate() {
            for _ in 0..b {
                nodes.push(TreeNode {
                    token: TokenId(0),
                    q_prob: 0.0,
                    q_dist: Distribution::uniform(vocab_size),
                    parent: None,
                    depth: level + 1,
                });
            }
        }
        Self {
            widths: config.widths().to_vec(),
            batch_sizes,
            level_offsets,
            nodes,
        }
    }

    /// Build a tree from explicit nodes (primarily for tests and oracles).
    /// Validates the level layout and sibling distinctness.
    pub fn from_nodes(config: &TreeConfig, nodes: Vec<TreeNode>) -> Result<Self> {
        if nodes.len() != config.node_count() {
            return Err(Error::InvalidInput(format!(
                "expected {} nodes for config {config}, got {}",
                config.node_count(),
                nodes.len()
            )));
        }
        let vocab = nodes[0].q_dist.len();
        let mut tree = Self::skeleton(config, vocab);
        tree.nodes = nodes;
        for id in 0..tree.nodes.len() {
            let expect_depth = tree.depth_of(id);
            let expect_parent = tree.parent_of(id);
            let node = &tree.nodes[id];
            if node.depth != expect_depth || node.parent != expect_parent {
                return Err(Error::InvalidInput(format!(
                    "node {id} has depth {}/parent {:?}, expected {expect_depth}/{expect_parent:?}",
                    node.depth, node.parent
                )));
            }
        }
        // Sibling tokens must be pairwise distinct under every parent.
        let mut parents: Vec<Option<usize>> = vec![None];
        parents.extend((0..tree.nodes.len()).map(Some));
        for p in parents {
            let ids = tree.children(p);
            for a in ids.clone() {
                for b in ids.clone() {
                    if a < b && tree.nodes[a].token == tree.nodes[b].token {
                        return Err(Error::InvalidInput(format!(
                            "siblings {a} and {b} share token {}",
                            tree.nodes[a].token
                        )));
                    }
                }
            }
        }
        Ok(tree)
    }

    pub fn gamma(&self) -> usize {
        self.widths.len()
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn node(&self, id: usize) -> &TreeNode {
        &self.nodes[id]
    }

    pub fn nodes(&self) -> &[TreeNode] {
        &self.nodes
    }

    /// Node ids of the children of `parent` (`None` = the root).
    pub fn children(&self, parent: Option<usize>) -> Range<usize> {
        match parent {
            None => 0..self.batch_sizes[0],
            Some(id) => {
                let depth = self.depth_of(id);
                if depth == self.gamma() {
                    return 0..0;
                }
                let j = id - self.level_offsets[depth - 1];
                let width = self.widths[depth];
                let start = self.level_offsets[depth] + j * width;
                start..start + width
            }
        }
    }

    /// Node ids at the deepest level.
    pub fn leaves(&self) -> Range<usize> {
        let start = self.level_offsets[self.gamma() - 1];
        start..self.nodes.len()
    }

    fn depth_of(&self, id: usize) -> usize {
        self.level_offsets
            .iter()
            .rposition(|&off| off <= id)
            .map(|level| level + 1)
            .unwrap_or(1)
    }

    fn parent_of(&self, id: usize) -> Option<usize> {
        let depth = self.depth_of(id);
        if depth == 1 {
            return None;
        }
        let j = id - self.level_offsets[depth - 1];
        Some(self.level_offsets[depth - 2] + j / self.widths[depth - 1])
    }

    /// Root-to-node token chain (used by scoring and tests).
    pub fn chain(&self, id: usize) -> Vec<TokenId> {
        let mut out = Vec::with_capacity(self.depth_of(id));
        let mut cur = Some(id);
        while let Some(n) = cur {
            out.push(self.nodes[n].token);
            cur = self.nodes[n].parent;
        }
        out.reverse();
        out
    }
}

/// Preallocated buffers for drafting with one configuration: per-depth state
/// buffers sized by the batch sizes, per-depth distribution workspaces, and
/// the tree's node storage. Build once, reuse every round.
pub struct StateCachePlan {
    config: TreeConfig,
    vocab_size: usize,
    state_len: usize,
    /// `levels[i]` holds the `B_{i+1}` states after absorbing depth-(i+1)
    /// tokens.
    levels: Vec<Vec<DrafterState>>,
    /// `level_dists[i]` holds the predictive distributions of depth-(i+1)
    /// nodes; the last depth needs none (leaf predictions are never sampled
    /// from).
    level_dists: Vec<Vec<Distribution>>,
    root_dist: Distribution,
    /// Without-replacement sampling scratch, one vocabulary row.
    scratch: Vec<f64>,
    tree: DraftTree,
}

/// Build a cache plan from raw dimensions. Errors on `state_dim == 0`; use
/// [`StateCachePlan::for_model`] for models with degenerate state (an
/// order-1 tabular model has an empty payload).
pub fn build_cache_plan(
    config: &TreeConfig,
    state_dim: usize,
    vocab_size: usize,
) -> Result<StateCachePlan> {
    if state_dim == 0 {
        return Err(Error::InvalidArgument("state_dim must be >= 1".into()));
    }
    StateCachePlan::with_template(config, DrafterState::new(vec![0.0; state_dim], 0), vocab_size)
}

impl StateCachePlan {
    /// Plan sized for a specific model's states and vocabulary.
    pub fn for_model<M: Model + ?Sized>(config: &TreeConfig, model: &M) -> Result<Self> {
        Self::with_template(config, model.initial_state(), model.vocab_size())
    }

    fn with_template(
        config: &TreeConfig,
        template: DrafterState,
        vocab_size: usize,
    ) -> Result<Self> {
        if vocab_size == 0 {
            return Err(Error::InvalidArgument("vocab_size must be >= 1".into()));
        }
        if let Some(&w) = config.widths().iter().find(|&&w| w > vocab_size) {
            return Err(Error::InvalidConfig(format!(
                "width {w} exceeds vocab size {vocab_size}: cannot sample distinct siblings"
            )));
        }
        let batch = config.batch_sizes();
        let levels = batch
            .iter()
            .map(|&b| vec![template.clone(); b])
            .collect();
        let level_dists = batch[..batch.len() - 1]
            .iter()
            .map(|&b| vec![Distribution::uniform(vocab_size); b])
            .collect();
        Ok(Self {
            config: config.clone(),
            vocab_size,
            state_len: template.payload().len(),
            levels,
            level_dists,
            root_dist: Distribution::uniform(vocab_size),
            scratch: vec![0.0; vocab_size],
            tree: DraftTree::skeleton(config, vocab_size),
        })
    }

    pub fn config(&self) -> &TreeConfig {
        &self.config
    }

    /// Per-depth state buffer sizes (equal to the batch sizes).
    pub fn level_sizes(&self) -> Vec<usize> {
        self.levels.iter().map(Vec::len).collect()
    }

    /// The most recently drafted tree.
    pub fn tree(&self) -> &DraftTree {
        &self.tree
    }
}

/// Draft a candidate tree, reusing the plan's buffers.
///
/// Level-by-level: each parent's state is duplicated into the next level's
/// buffer, stepped once per child, and `N_i` distinct child tokens are drawn
/// from the parent's predictive distribution without replacement (the
/// recorded `q_prob` comes from the original distribution, before any
/// removal). Each node's token uses its own stream derived from
/// `round_stream` by `(depth, node index)`, so results do not depend on
/// evaluation order. No heap allocation occurs here after plan construction.
pub fn draft_tree<'p, D: Model + ?Sized>(
    drafter: &D,
    root_state: &DrafterState,
    config: &TreeConfig,
    plan: &'p mut StateCachePlan,
    round_stream: &Stream,
) -> Result<&'p DraftTree> {
    if plan.config.widths() != config.widths() {
        return Err(Error::InvalidConfig(format!(
            "plan built for config {} used with {config}",
            plan.config
        )));
    }
    if plan.vocab_size != drafter.vocab_size() || plan.state_len != drafter.state_len() {
        return Err(Error::InvalidConfig(
            "plan dimensions do not match the drafter".into(),
        ));
    }
    if root_state.payload().len() != plan.state_len {
        return Err(Error::InvalidInput(
            "root state does not belong to this drafter".into(),
        ));
    }

    let gamma = config.gamma();
    let widths = config.widths();
    let StateCachePlan {
        levels,
        level_dists,
        root_dist,
        scratch,
        tree,
        ..
    } = plan;

    drafter.predict_into(root_state, root_dist);

    for depth in 1..=gamma {
        let width = widths[depth - 1];
        let (prev_states, cur_states) = levels.split_at_mut(depth - 1);
        let (prev_dists, cur_dists) = level_dists.split_at_mut(depth - 1);
        let n_parents = if depth == 1 {
            1
        } else {
            prev_states[depth - 2].len()
        };

        for pj in 0..n_parents {
            let (parent_state, parent_dist) = if depth == 1 {
                (root_state, &*root_dist)
            } else {
                (&prev_states[depth - 2][pj], &prev_dists[depth - 2][pj])
            };

            scratch.copy_from_slice(parent_dist.probs());
            let mut remaining = 1.0f64;

            for c in 0..width {
                let slot = pj * width + c;
                if remaining <= 0.0 {
                    return Err(Error::InvalidConfig(format!(
                        "drafter support at depth {depth} is smaller than width {width}"
                    )));
                }
                let mut node_stream = round_stream
                    .derive_u64(depth as u64)
                    .derive_u64(slot as u64);
                let u = node_stream.next_f64() * remaining;
                let token = match sample_scratch(scratch, u) {
                    Some(t) => TokenId(t as u32),
                    None => {
                        return Err(Error::InvalidConfig(format!(
                            "drafter support at depth {depth} is smaller than width {width}"
                        )))
                    }
                };
                remaining -= scratch[token.index()];
                scratch[token.index()] = 0.0;

                let node_id = tree.level_offsets[depth - 1] + slot;
                let node = &mut tree.nodes[node_id];
                node.token = token;
                node.q_prob = parent_dist.prob(token);
                node.q_dist.copy_from(parent_dist);
                node.parent = if depth == 1 {
                    None
                } else {
                    Some(tree.level_offsets[depth - 2] + pj)
                };
                node.depth = depth;

                let out_state = &mut cur_states[0][slot];
                if depth < gamma {
                    drafter.step_into(parent_state, token, out_state, &mut cur_dists[0][slot])?;
                } else {
                    // Leaf predictions are never sampled from; skip them.
                    drafter.absorb_into(parent_state, token, out_state)?;
                }
            }
        }
    }
    Ok(tree)
}

/// Inverse-CDF scan over a scratch row: first index with cumulative mass
/// strictly above `u`, falling back to the last positive entry. Matches
/// [`Distribution::sample_u`] exactly.
fn sample_scratch(scratch: &[f64], u: f64) -> Option<usize> {
    let mut cum = 0.0;
    for (i, &p) in scratch.iter().enumerate() {
        cum += p;
        if cum > u {
            return Some(i);
        }
    }
    scratch.iter().rposition(|&p| p > 0.0)
}

/// Root-to-leaf candidate paths plus the shared-prefix map.
#[derive(Clone, Debug)]
pub struct FlattenedTree {
    /// `B_γ` token paths of length `γ`.
    pub paths: Vec<Vec<TokenId>>,
    /// Parallel to `paths`: the tree node id at each `(path, depth)` slot.
    /// Paths share ids exactly where they share tree nodes, so a scorer
    /// visiting each distinct id once scores every node exactly once.
    pub node_ids: Vec<Vec<usize>>,
}

impl FlattenedTree {
    /// Number of distinct scored positions (equals the tree's node count).
    pub fn distinct_nodes(&self) -> usize {
        let mut ids: Vec<usize> = self.node_ids.iter().flatten().copied().collect();
        ids.sort_unstable();
        ids.dedup();
        ids.len()
    }
}

/// Lay the tree out as candidate paths for parallel scoring.
pub fn flatten_for_scoring(tree: &DraftTree) -> FlattenedTree {
    let mut paths = Vec::with_capacity(tree.leaves().len());
    let mut node_ids = Vec::with_capacity(tree.leaves().len());
    for leaf in tree.leaves() {
        let mut ids = Vec::with_capacity(tree.gamma());
        let mut cur = Some(leaf);
        while let Some(id) = cur {
            ids.push(id);
            cur = tree.node(id).parent;
        }
        ids.reverse();
        paths.push(ids.iter().map(|&id| tree.node(id).token).collect());
        node_ids.push(ids);
    }
    FlattenedTree { paths, node_ids }
}

/// Target distributions for every tree position: one at the root and one
/// after each node's token.
#[derive(Clone, Debug)]
pub struct TreeScores {
    /// Target distribution at the root (conditioned on the prefix only);
    /// verifies the depth-1 siblings.
    pub root: Distribution,
    /// `after_node[id]` conditions on the prefix plus the chain up to and
    /// including node `id`; verifies the node's children, or supplies the
    /// bonus tail when the node is a leaf.
    pub after_node: Vec<Distribution>,
}

/// Score every distinct tree node with the target model in one pass over the
/// tree (one target forward pass for metrics purposes).
pub fn score_tree<M: Model + ?Sized>(
    model: &M,
    prefix_state: &DrafterState,
    tree: &DraftTree,
) -> Result<TreeScores> {
    let root = model.predict(prefix_state);
    let mut states: Vec<DrafterState> = Vec::with_capacity(tree.node_count());
    let mut after_node = Vec::with_capacity(tree.node_count());
    for id in 0..tree.node_count() {
        let node = tree.node(id);
        let parent_state = match node.parent {
            None => prefix_state,
            Some(p) => &states[p],
        };
        let (state, dist) = model.step(parent_state, node.token)?;
        states.push(state);
        after_node.push(dist);
    }
    Ok(TreeScores { root, after_node })
}

/// Verify a drafted tree against per-node target distributions.
///
/// Greedy mode walks from the root, at each depth following the child whose
/// token equals the current target argmax, and emits that argmax the moment
/// no child matches. Sampling mode tries each sibling in stored order with
/// the standard acceptance test, folding every rejection out of both `p` and
/// `q`; when a whole sibling set is rejected the final residual is sampled
/// and the round ends. Exactly one non-draft token is emitted either way.
pub fn verify_tree<R: Randomness + ?Sized>(
    scores: &TreeScores,
    tree: &DraftTree,
    mode: Mode,
    rng: &mut R,
) -> Result<VerifyOutcome> {
    if scores.after_node.len() != tree.node_count() {
        return Err(Error::InvalidInput(format!(
            "{} node distributions for a tree of {} nodes",
            scores.after_node.len(),
            tree.node_count()
        )));
    }
    let vocab = scores.root.len();
    if scores.after_node.iter().any(|d| d.len() != vocab) {
        return Err(Error::InvalidInput(
            "node distributions must share one vocabulary size".into(),
        ));
    }

    let mut committed = Vec::with_capacity(tree.gamma() + 1);
    let mut cur: Option<usize> = None;

    loop {
        let cur_dist = match cur {
            None => &scores.root,
            Some(id) => &scores.after_node[id],
        };
        let children = tree.children(cur);

        let accepted_child = match mode {
            Mode::Greedy => {
                let want = cur_dist.argmax();
                match children.clone().find(|&c| tree.node(c).token == want) {
                    Some(c) => Some(c),
                    None => {
                        committed.push(want);
                        return Ok(VerifyOutcome {
                            n_accepted_drafts: committed.len() - 1,
                            committed,
                            used_bonus: false,
                        });
                    }
                }
            }
            Mode::Sampling => {
                let mut p = cur_dist.clone();
                // Siblings share q_dist content; start from the original.
                let mut q = tree.node(children.start).q_dist.clone();
                let mut accepted = None;
                let last = children.end - 1;
                for c in children.clone() {
                    let token = tree.node(c).token;
                    let u = rng.next_unit();
                    if accept_token(p.prob(token), q.prob(token), u)? {
                        accepted = Some(c);
                        break;
                    }
                    p = residual_distribution(&p, &q)?;
                    if c < last {
                        // Remove the rejected sibling's mass from q.
                        let mut w = q.probs().to_vec();
                        w[token.index()] = 0.0;
                        q = Distribution::from_weights(w)?;
                    }
                }
                match accepted {
                    Some(c) => Some(c),
                    None => {
                        committed.push(p.sample(rng));
                        return Ok(VerifyOutcome {
                            n_accepted_drafts: committed.len() - 1,
                            committed,
                            used_bonus: false,
                        });
                    }
                }
            }
        };

        let c = accepted_child.expect("loop continues only with an accepted child");
        committed.push(tree.node(c).token);
        if tree.node(c).depth == tree.gamma() {
            let tail = &scores.after_node[c];
            let bonus = match mode {
                Mode::Greedy => tail.argmax(),
                Mode::Sampling => tail.sample(rng),
            };
            committed.push(bonus);
            return Ok(VerifyOutcome {
                n_accepted_drafts: committed.len() - 1,
                committed,
                used_bonus: true,
            });
        }
        cur = Some(c);
    }
}
