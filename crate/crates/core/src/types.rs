//! Shared domain types: embedding matrices, build configuration, identifier
//! trees and cluster assignments, plus their validation routines.

use std::collections::VecDeque;
use std::fmt;

use crate::error::{Error, Result};

/// Default greedy threshold: levels with more items than this use greedy
/// assignment in hybrid mode.
pub const DEFAULT_GREEDY_THRESHOLD: usize = 2000;
pub const DEFAULT_K: usize = 8;

/// Row-major `n_items x dim` matrix of item embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    n_items: usize,
    dim: usize,
    values: Vec<f32>,
}

impl EmbeddingMatrix {
    /// Checked constructor. Fails if any invariant is violated.
    pub fn new(n_items: usize, dim: usize, values: Vec<f32>) -> Result<Self> {
        let m = Self::from_raw(n_items, dim, values);
        let report = validate_embeddings(&m);
        match report.violations.into_iter().next() {
            None => Ok(m),
            Some(v) => Err(Error::InvalidEmbeddings(v)),
        }
    }

    /// Unchecked constructor; pair with [`validate_embeddings`].
    pub fn from_raw(n_items: usize, dim: usize, values: Vec<f32>) -> Self {
        Self { n_items, dim, values }
    }

    pub fn from_rows<R: AsRef<[f32]>>(rows: &[R]) -> Result<Self> {
        let dim = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        let mut values = Vec::with_capacity(rows.len() * dim);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != dim {
                return Err(Error::DimensionMismatch {
                    context: format!("row {i}"),
                    expected: dim,
                    actual: r.len(),
                });
            }
            values.extend_from_slice(r);
        }
        Self::new(rows.len(), dim, values)
    }

    pub fn n_items(&self) -> usize {
        self.n_items
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f32] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    /// Copies the given rows, in order, into a new matrix.
    pub fn gather(&self, items: &[u32]) -> EmbeddingMatrix {
        let mut values = Vec::with_capacity(items.len() * self.dim);
        for &i in items {
            values.extend_from_slice(self.row(i as usize));
        }
        EmbeddingMatrix { n_items: items.len(), dim: self.dim, values }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EmbeddingViolation {
    EmptyItems,
    EmptyDim,
    Length { expected: usize, actual: usize },
    NonFinite { index: usize },
}

impl fmt::Display for EmbeddingViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::EmptyItems => write!(f, "n_items must be at least 1"),
            Self::EmptyDim => write!(f, "dim must be at least 1"),
            Self::Length { expected, actual } => {
                write!(f, "expected {expected} values (n_items*dim), found {actual}")
            }
            Self::NonFinite { index } => write!(f, "non-finite value at flat index {index}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct EmbeddingReport {
    pub violations: Vec<EmbeddingViolation>,
}

impl EmbeddingReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

pub fn validate_embeddings(m: &EmbeddingMatrix) -> EmbeddingReport {
    let mut violations = Vec::new();
    if m.n_items == 0 {
        violations.push(EmbeddingViolation::EmptyItems);
    }
    if m.dim == 0 {
        violations.push(EmbeddingViolation::EmptyDim);
    }
    let expected = m.n_items.saturating_mul(m.dim);
    if m.values.len() != expected {
        violations.push(EmbeddingViolation::Length { expected, actual: m.values.len() });
    }
    if let Some(index) = m.values.iter().position(|v| !v.is_finite()) {
        violations.push(EmbeddingViolation::NonFinite { index });
    }
    EmbeddingReport { violations }
}

/// Per-cluster size bounds for a single balanced split.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CapacityBounds {
    pub min_size: usize,
    pub max_size: usize,
}

impl CapacityBounds {
    pub fn new(min_size: usize, max_size: usize) -> Self {
        Self { min_size, max_size }
    }

    /// `[floor(n/k), floor(n/k) + 1]`, the bounds used at every split.
    pub fn balanced(n: usize, k: usize) -> Self {
        let m = n / k;
        Self { min_size: m, max_size: m + 1 }
    }

    pub fn unconstrained(n: usize) -> Self {
        Self { min_size: 0, max_size: n }
    }

    pub fn check_feasible(&self, n: usize, k: usize) -> Result<()> {
        if self.min_size > self.max_size {
            return Err(Error::Infeasible(format!(
                "min_size {} > max_size {}",
                self.min_size, self.max_size
            )));
        }
        if k.saturating_mul(self.max_size) < n {
            return Err(Error::Infeasible(format!(
                "k*max_size = {}*{} < n = {}",
                k, self.max_size, n
            )));
        }
        if k.saturating_mul(self.min_size) > n {
            return Err(Error::Infeasible(format!(
                "k*min_size = {}*{} > n = {}",
                k, self.min_size, n
            )));
        }
        Ok(())
    }

    pub fn contains(&self, size: usize) -> bool {
        (self.min_size..=self.max_size).contains(&size)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    Constrained,
    Greedy,
    Hybrid,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Constrained, Method::Greedy, Method::Hybrid];

    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Constrained => "constrained",
            Method::Greedy => "greedy",
            Method::Hybrid => "hybrid",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "constrained" => Ok(Method::Constrained),
            "greedy" => Ok(Method::Greedy),
            "hybrid" => Ok(Method::Hybrid),
            other => Err(Error::InvalidConfig(format!("unknown method '{other}'"))),
        }
    }
}

/// Order in which the greedy pass visits items.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GreedyOrder {
    /// Ascending item index.
    #[default]
    ItemIndex,
    /// Ascending distance to the item's nearest centroid, ties by index.
    NearestDistance,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TreeBuildConfig {
    pub k: usize,
    pub greedy_threshold: usize,
    pub method: Method,
    pub seed: u64,
    pub lloyd_max_iters: usize,
    pub lloyd_tol: f64,
    pub outer_max_iters: usize,
    pub greedy_order: GreedyOrder,
}

impl Default for TreeBuildConfig {
    fn default() -> Self {
        Self {
            k: DEFAULT_K,
            greedy_threshold: DEFAULT_GREEDY_THRESHOLD,
            method: Method::Hybrid,
            seed: 0,
            lloyd_max_iters: 100,
            lloyd_tol: 1e-4,
            outer_max_iters: 20,
            greedy_order: GreedyOrder::ItemIndex,
        }
    }
}

impl TreeBuildConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k < 2 {
            return Err(Error::InvalidConfig(format!("k must be >= 2, got {}", self.k)));
        }
        if self.greedy_threshold < self.k {
            return Err(Error::InvalidConfig(format!(
                "greedy threshold {} must be >= k = {}",
                self.greedy_threshold, self.k
            )));
        }
        if self.lloyd_max_iters == 0 || self.outer_max_iters == 0 {
            return Err(Error::InvalidConfig("iteration caps must be >= 1".into()));
        }
        if self.lloyd_tol.is_nan() || self.lloyd_tol <= 0.0 {
            return Err(Error::InvalidConfig("lloyd tolerance must be > 0".into()));
        }
        Ok(())
    }

    /// True if a group of `n` items is split with the greedy backend.
    pub fn uses_greedy(&self, n: usize) -> bool {
        match self.method {
            Method::Greedy => true,
            Method::Constrained => false,
            Method::Hybrid => n > self.greedy_threshold,
        }
    }
}

/// Root-to-leaf token sequence. Positions after the leaf hold the pad token `k`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TokenPath(pub Vec<u32>);

impl TokenPath {
    pub fn tokens(&self) -> &[u32] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Tokens before the first pad.
    pub fn unpadded(&self, pad: u32) -> &[u32] {
        let end = self.0.iter().position(|&t| t == pad).unwrap_or(self.0.len());
        &self.0[..end]
    }
}

pub type NodeId = u32;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Node {
    pub parent: Option<NodeId>,
    /// Child at position `i` carries branch ordinal `i`.
    pub children: Vec<NodeId>,
    pub item: Option<u32>,
    pub depth: u32,
}

impl Node {
    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }
}

/// Balanced k-ary identifier tree. Node ids follow breadth-first order with
/// children visited by ascending branch ordinal, so any two trees with the
/// same paths have identical arenas.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdentifierTree {
    k: usize,
    depth: usize,
    n_items: usize,
    nodes: Vec<Node>,
    paths: Vec<TokenPath>,
}

impl IdentifierTree {
    /// Builds the canonical arena from per-item paths (pads allowed) without
    /// running [`validate_tree`]. Fails only when the paths cannot form a
    /// tree at all (ordinal gaps, out of range tokens, prefix collisions).
    pub fn from_paths(k: usize, paths: Vec<TokenPath>) -> Result<Self> {
        if k < 2 {
            return Err(Error::InvalidTree(format!("k must be >= 2, got {k}")));
        }
        let pad = k as u32;
        let n_items = paths.len();
        let depth = paths.iter().map(|p| p.len()).max().unwrap_or(0);

        // Intermediate trie keyed by ordinal.
        struct TrieNode {
            children: Vec<Option<usize>>,
            item: Option<u32>,
        }
        let mut trie = vec![TrieNode { children: Vec::new(), item: None }];
        for (item, path) in paths.iter().enumerate() {
            let toks = path.unpadded(pad);
            if path.0[toks.len()..].iter().any(|&t| t != pad) {
                return Err(Error::InvalidTree(format!("item {item}: token after pad")));
            }
            if toks.is_empty() {
                return Err(Error::InvalidTree(format!("item {item}: empty path")));
            }
            let mut cur = 0usize;
            for &t in toks {
                if t >= pad {
                    return Err(Error::InvalidTree(format!("item {item}: token {t} >= k")));
                }
                if trie[cur].item.is_some() {
                    return Err(Error::InvalidTree(format!(
                        "item {item}: path passes through a leaf"
                    )));
                }
                let t = t as usize;
                if trie[cur].children.len() <= t {
                    trie[cur].children.resize(t + 1, None);
                }
                cur = match trie[cur].children[t] {
                    Some(c) => c,
                    None => {
                        trie.push(TrieNode { children: Vec::new(), item: None });
                        let id = trie.len() - 1;
                        trie[cur].children[t] = Some(id);
                        id
                    }
                };
            }
            if !trie[cur].children.is_empty() || trie[cur].item.is_some() {
                return Err(Error::InvalidTree(format!(
                    "item {item}: path collides with another item"
                )));
            }
            trie[cur].item = Some(item as u32);
        }

        // Breadth-first renumbering.
        let mut nodes: Vec<Node> = Vec::with_capacity(trie.len());
        let mut queue = VecDeque::new();
        nodes.push(Node { parent: None, children: Vec::new(), item: trie[0].item, depth: 0 });
        queue.push_back((0usize, 0 as NodeId));
        while let Some((tid, nid)) = queue.pop_front() {
            let mut kids = Vec::with_capacity(trie[tid].children.len());
            for (ordinal, c) in trie[tid].children.iter().enumerate() {
                let c = c.ok_or_else(|| {
                    Error::InvalidTree(format!("missing branch ordinal {ordinal} below a node"))
                })?;
                let id = nodes.len() as NodeId;
                let depth = nodes[nid as usize].depth + 1;
                nodes.push(Node { parent: Some(nid), children: Vec::new(), item: trie[c].item, depth });
                kids.push(id);
                queue.push_back((c, id));
            }
            nodes[nid as usize].children = kids;
        }

        let paths = paths
            .into_iter()
            .map(|p| {
                let mut t = p.0;
                t.resize(depth, pad);
                TokenPath(t)
            })
            .collect();

        Ok(Self { k, depth, n_items, nodes, paths })
    }

    /// Direct constructor that skips all checks; used to exercise the validator.
    pub fn from_parts(
        k: usize,
        depth: usize,
        n_items: usize,
        nodes: Vec<Node>,
        paths: Vec<TokenPath>,
    ) -> Self {
        Self { k, depth, n_items, nodes, paths }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn n_items(&self) -> usize {
        self.n_items
    }

    pub fn pad_token(&self) -> u32 {
        self.k as u32
    }

    pub fn root(&self) -> NodeId {
        0
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id as usize]
    }

    pub fn paths(&self) -> &[TokenPath] {
        &self.paths
    }

    pub fn path_of(&self, item: usize) -> Result<&TokenPath> {
        self.paths.get(item).ok_or(Error::ItemOutOfRange { item, n_items: self.n_items })
    }

    /// Walks `path` from the root; `None` if any token leaves the tree.
    pub fn node_at(&self, path: &[u32]) -> Option<NodeId> {
        let pad = self.pad_token();
        let mut cur = self.root();
        for &t in path {
            if t == pad {
                break;
            }
            cur = *self.node(cur).children.get(t as usize)?;
        }
        Some(cur)
    }

    /// The item whose leaf is reached by `path`, absent for prefixes and
    /// paths that leave the tree.
    pub fn item_of(&self, path: &TokenPath) -> Option<u32> {
        let pad = self.pad_token();
        let toks = path.unpadded(pad);
        if path.0[toks.len()..].iter().any(|&t| t != pad) {
            return None;
        }
        self.node_at(toks).and_then(|n| self.node(n).item)
    }

    /// Number of leaves under every node, indexed by node id.
    pub fn subtree_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0usize; self.nodes.len()];
        // Children always have larger ids than their parent.
        for id in (0..self.nodes.len()).rev() {
            let n = &self.nodes[id];
            if n.children.is_empty() {
                sizes[id] = usize::from(n.item.is_some());
            } else {
                sizes[id] = n.children.iter().map(|&c| sizes[c as usize]).sum();
            }
        }
        sizes
    }

    /// Items under `node`, in ascending leaf order.
    pub fn items_under(&self, node: NodeId) -> Vec<u32> {
        let mut out = Vec::new();
        let mut stack = vec![node];
        while let Some(n) = stack.pop() {
            let nd = self.node(n);
            if let Some(it) = nd.item {
                out.push(it);
            }
            stack.extend(nd.children.iter().rev());
        }
        out
    }

    /// Ids of all nodes at the given depth.
    pub fn nodes_at_depth(&self, depth: u32) -> Vec<NodeId> {
        (0..self.nodes.len() as NodeId).filter(|&i| self.node(i).depth == depth).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TreeViolation {
    LeafCount { expected: usize, actual: usize },
    DuplicateItem { item: u32 },
    ItemOutOfRange { item: u32 },
    MissingItem { item: usize },
    PathMismatch { item: usize },
    PathLength { item: usize, expected: usize, actual: usize },
    PadOrder { item: usize },
    TokenRange { item: usize },
    Unbalanced { node: NodeId, n: usize, sizes: Vec<usize> },
    BadLeafGroup { node: NodeId, n: usize },
    LeafUnderSplit { node: NodeId },
    EmptyLeaf { node: NodeId },
    ItemOnInternalNode { node: NodeId },
    DepthMismatch { expected: usize, actual: usize },
    ParentLink { node: NodeId },
}

impl fmt::Display for TreeViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::LeafCount { expected, actual } => {
                write!(f, "expected {expected} leaves, found {actual}")
            }
            Self::DuplicateItem { item } => write!(f, "item {item} held by more than one leaf"),
            Self::ItemOutOfRange { item } => write!(f, "leaf item {item} out of range"),
            Self::MissingItem { item } => write!(f, "item {item} has no leaf"),
            Self::PathMismatch { item } => write!(f, "path of item {item} does not reach its leaf"),
            Self::PathLength { item, expected, actual } => {
                write!(f, "path of item {item} has length {actual}, expected {expected}")
            }
            Self::PadOrder { item } => write!(f, "path of item {item} has a token after a pad"),
            Self::TokenRange { item } => write!(f, "path of item {item} has a token > k"),
            Self::Unbalanced { node, n, sizes } => {
                write!(f, "split at node {node} of {n} items has child sizes {sizes:?}")
            }
            Self::BadLeafGroup { node, n } => {
                write!(f, "node {node} holds {n} <= k items but is not a flat leaf group")
            }
            Self::LeafUnderSplit { node } => {
                write!(f, "split node {node} has an item leaf as a direct child")
            }
            Self::EmptyLeaf { node } => write!(f, "leaf node {node} holds no item"),
            Self::ItemOnInternalNode { node } => write!(f, "internal node {node} holds an item"),
            Self::DepthMismatch { expected, actual } => {
                write!(f, "tree depth {actual} differs from maximum leaf depth {expected}")
            }
            Self::ParentLink { node } => write!(f, "node {node} has an inconsistent parent link"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TreeReport {
    pub violations: Vec<TreeViolation>,
}

impl TreeReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn into_result(self) -> Result<()> {
        match self.violations.into_iter().next() {
            None => Ok(()),
            Some(v) => Err(Error::TreeValidation(v)),
        }
    }
}

/// Checks leaf count, path bijection, balance at every split, flat leaf
/// groups and the pad-suffix rule.
pub fn validate_tree(t: &IdentifierTree) -> TreeReport {
    let mut violations = Vec::new();
    let k = t.k;
    let pad = t.pad_token();

    if t.nodes.is_empty() {
        violations.push(TreeViolation::LeafCount { expected: t.n_items, actual: 0 });
        return TreeReport { violations };
    }

    for (id, n) in t.nodes.iter().enumerate() {
        for &c in &n.children {
            let ok = t
                .nodes
                .get(c as usize)
                .is_some_and(|cn| cn.parent == Some(id as NodeId) && cn.depth == n.depth + 1);
            if !ok {
                violations.push(TreeViolation::ParentLink { node: c });
            }
        }
    }
    if !violations.is_empty() {
        return TreeReport { violations };
    }

    let mut holder: Vec<Option<NodeId>> = vec![None; t.n_items];
    let mut leaves = 0usize;
    let mut max_depth = 0usize;
    for (id, n) in t.nodes.iter().enumerate() {
        let id = id as NodeId;
        if n.is_leaf() {
            leaves += 1;
            max_depth = max_depth.max(n.depth as usize);
            match n.item {
                None => violations.push(TreeViolation::EmptyLeaf { node: id }),
                Some(it) if it as usize >= t.n_items => {
                    violations.push(TreeViolation::ItemOutOfRange { item: it })
                }
                Some(it) => {
                    if holder[it as usize].is_some() {
                        violations.push(TreeViolation::DuplicateItem { item: it });
                    } else {
                        holder[it as usize] = Some(id);
                    }
                }
            }
        } else if n.item.is_some() {
            violations.push(TreeViolation::ItemOnInternalNode { node: id });
        }
    }
    if leaves != t.n_items {
        violations.push(TreeViolation::LeafCount { expected: t.n_items, actual: leaves });
    }
    if max_depth != t.depth {
        violations.push(TreeViolation::DepthMismatch { expected: max_depth, actual: t.depth });
    }

    if t.paths.len() != t.n_items {
        violations.push(TreeViolation::LeafCount { expected: t.n_items, actual: t.paths.len() });
    }
    for (item, path) in t.paths.iter().enumerate() {
        if path.len() != t.depth {
            violations.push(TreeViolation::PathLength {
                item,
                expected: t.depth,
                actual: path.len(),
            });
        }
        let toks = path.unpadded(pad);
        if path.0[toks.len()..].iter().any(|&x| x != pad) {
            violations.push(TreeViolation::PadOrder { item });
        }
        if path.0.iter().any(|&x| x > pad) {
            violations.push(TreeViolation::TokenRange { item });
        }
        match holder.get(item).copied().flatten() {
            None => violations.push(TreeViolation::MissingItem { item }),
            Some(leaf) => {
                if t.node_at(toks) != Some(leaf) || toks.len() != t.node(leaf).depth as usize {
                    violations.push(TreeViolation::PathMismatch { item });
                }
            }
        }
    }

    let sizes = t.subtree_sizes();
    for (id, n) in t.nodes.iter().enumerate() {
        if n.is_leaf() {
            continue;
        }
        let total = sizes[id];
        let child_sizes: Vec<usize> = n.children.iter().map(|&c| sizes[c as usize]).collect();
        if total > k {
            let b = CapacityBounds::balanced(total, k);
            if n.children.len() != k || !child_sizes.iter().all(|&s| b.contains(s)) {
                violations.push(TreeViolation::Unbalanced {
                    node: id as NodeId,
                    n: total,
                    sizes: child_sizes,
                });
            }
            if n.children.iter().any(|&c| t.node(c).is_leaf()) {
                violations.push(TreeViolation::LeafUnderSplit { node: id as NodeId });
            }
        } else {
            let flat = n.children.iter().all(|&c| t.node(c).is_leaf());
            if !flat || n.children.len() != total {
                violations.push(TreeViolation::BadLeafGroup { node: id as NodeId, n: total });
            }
        }
    }

    TreeReport { violations }
}

/// Item to cluster map produced by one balanced split.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterAssignment {
    pub cluster_of: Vec<u32>,
    pub sizes: Vec<usize>,
    /// Sum of squared distances of items to the centroids they were assigned against.
    pub cost: f64,
}

impl ClusterAssignment {
    pub fn k(&self) -> usize {
        self.sizes.len()
    }

    /// Item indices grouped by cluster, ascending within each cluster.
    pub fn members(&self) -> Vec<Vec<u32>> {
        let mut groups: Vec<Vec<u32>> =
            self.sizes.iter().map(|&s| Vec::with_capacity(s)).collect();
        for (i, &c) in self.cluster_of.iter().enumerate() {
            groups[c as usize].push(i as u32);
        }
        groups
    }
}
