//! Prefix-constrained beam search over an [`IdentifierTree`].
//!
//! Hypotheses only ever move along existing tree edges. Scores are summed
//! log-scores from a [`ChildScorer`]; ties are broken toward the
//! lexicographically smaller token path.

use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::treebuild::NodeEmbeddings;
use crate::types::{IdentifierTree, NodeId};

/// Scores every child of a node for one query.
pub trait ChildScorer {
    type Context: ?Sized;

    /// One finite log-score per child of `node`, in branch-ordinal order.
    fn score_children(
        &self,
        ctx: &Self::Context,
        tree: &IdentifierTree,
        node: NodeId,
    ) -> Result<Vec<f64>>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BeamConfig {
    pub beam_width: usize,
    pub top_n: usize,
}

impl BeamConfig {
    pub fn new(beam_width: usize, top_n: usize) -> Result<Self> {
        let cfg = Self { beam_width, top_n };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.top_n == 0 || self.top_n > self.beam_width {
            return Err(Error::InvalidConfig(format!(
                "beam config needs 1 <= top_n <= beam_width, got top_n={}, beam_width={}",
                self.top_n, self.beam_width
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BeamHypothesis {
    pub node: NodeId,
    pub score: f64,
    pub path: Vec<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ranked {
    pub item: u32,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BeamOutput {
    pub ranked: Vec<Ranked>,
    pub scorer_calls: usize,
    pub scores_returned: usize,
}

/// Higher score first, then the smaller path.
fn rank_order(a: (f64, &[u32]), b: (f64, &[u32])) -> Ordering {
    b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1))
}

pub fn beam_search<S: ChildScorer>(
    tree: &IdentifierTree,
    scorer: &S,
    ctx: &S::Context,
    cfg: BeamConfig,
) -> Result<BeamOutput> {
    cfg.validate()?;
    let mut live = vec![BeamHypothesis { node: tree.root(), score: 0.0, path: Vec::new() }];
    let mut finished: Vec<BeamHypothesis> = Vec::new();
    let mut scorer_calls = 0;
    let mut scores_returned = 0;

    if tree.node(tree.root()).is_leaf() {
        // Degenerate single-node tree; nothing to decode.
        live.clear();
    }

    while !live.is_empty() {
        let mut candidates: Vec<BeamHypothesis> = Vec::new();
        for h in &live {
            let children = &tree.node(h.node).children;
            let scores = scorer.score_children(ctx, tree, h.node)?;
            scorer_calls += 1;
            scores_returned += scores.len();
            if scores.len() != children.len() {
                return Err(Error::ScorerContract(format!(
                    "node {} has {} children but {} scores were returned",
                    h.node,
                    children.len(),
                    scores.len()
                )));
            }
            for (ordinal, (&child, &s)) in children.iter().zip(&scores).enumerate() {
                if !s.is_finite() {
                    return Err(Error::ScorerContract(format!(
                        "non-finite score {s} for child {ordinal} of node {}",
                        h.node
                    )));
                }
                let mut path = Vec::with_capacity(h.path.len() + 1);
                path.extend_from_slice(&h.path);
                path.push(ordinal as u32);
                candidates.push(BeamHypothesis { node: child, score: h.score + s, path });
            }
        }
        candidates.sort_by(|a, b| rank_order((a.score, &a.path), (b.score, &b.path)));
        candidates.truncate(cfg.beam_width);
        live.clear();
        for c in candidates {
            if tree.node(c.node).is_leaf() {
                finished.push(c);
            } else {
                live.push(c);
            }
        }
    }

    finished.sort_by(|a, b| rank_order((a.score, &a.path), (b.score, &b.path)));
    let ranked = finished
        .into_iter()
        .filter_map(|h| tree.node(h.node).item.map(|item| Ranked { item, score: h.score }))
        .take(cfg.top_n)
        .collect();
    Ok(BeamOutput { ranked, scorer_calls, scores_returned })
}

/// Scores a child by the dot product between the query and the child's
/// node embedding.
#[derive(Debug, Clone)]
pub struct DotScorer {
    embs: NodeEmbeddings,
}

pub fn dot_scorer(tree: &IdentifierTree, embs: NodeEmbeddings) -> Result<DotScorer> {
    if embs.n_nodes() != tree.nodes().len() {
        return Err(Error::DimensionMismatch {
            context: "node embeddings vs tree nodes".into(),
            expected: tree.nodes().len(),
            actual: embs.n_nodes(),
        });
    }
    Ok(DotScorer { embs })
}

impl DotScorer {
    pub fn embeddings(&self) -> &NodeEmbeddings {
        &self.embs
    }
}

impl ChildScorer for DotScorer {
    type Context = [f32];

    fn score_children(&self, q: &[f32], tree: &IdentifierTree, node: NodeId) -> Result<Vec<f64>> {
        if q.len() != self.embs.dim() {
            return Err(Error::DimensionMismatch {
                context: "query vs node embeddings".into(),
                expected: self.embs.dim(),
                actual: q.len(),
            });
        }
        Ok(tree
            .node(node)
            .children
            .iter()
            .map(|&c| q.iter().zip(self.embs.get(c)).map(|(&a, &b)| a as f64 * b).sum())
            .collect())
    }
}

/// Fixed per-node child scores; the query context is ignored.
#[derive(Debug, Clone)]
pub struct TableScorer {
    pub table: Vec<Vec<f64>>,
}

impl ChildScorer for TableScorer {
    type Context = ();

    fn score_children(&self, _: &(), _: &IdentifierTree, node: NodeId) -> Result<Vec<f64>> {
        self.table
            .get(node as usize)
            .cloned()
            .ok_or_else(|| Error::ScorerContract(format!("no scores for node {node}")))
    }
}
