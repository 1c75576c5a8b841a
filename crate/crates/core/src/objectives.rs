//! Forward values and analytic gradients of the three training losses:
//! per-step cross-entropy over valid children, InfoNCE alignment of a
//! child node with its parent, and a margin triplet loss over items that
//! share prefixes of different lengths.

use rand::seq::IndexedRandom;
use rand::seq::index::sample;

use crate::clustering::stream_rng;
use crate::error::{Error, Result};
use crate::types::{IdentifierTree, NodeId, TokenPath};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub lambda_a: f64,
    pub lambda_r: f64,
    pub temperature: f64,
    pub margin: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { lambda_a: 1.0, lambda_r: 1.0, temperature: 1.0, margin: 1.0 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if self.temperature.is_nan() || self.temperature <= 0.0 {
            return Err(Error::InvalidConfig("temperature must be > 0".into()));
        }
        if !(self.margin >= 0.0 && self.lambda_a >= 0.0 && self.lambda_r >= 0.0) {
            return Err(Error::InvalidConfig("margin and weights must be >= 0".into()));
        }
        Ok(())
    }
}

/// Default cap on alignment negatives.
pub const MAX_ALIGNMENT_NEGATIVES: usize = 128;

/// `ln(1 + sum(exp(r)))`, accurate when the sum is tiny.
fn ln_one_plus_sum_exp(r: &[f64]) -> f64 {
    let m = r.iter().copied().fold(0.0, f64::max);
    if m == 0.0 {
        r.iter().map(|&x| x.exp()).sum::<f64>().ln_1p()
    } else {
        m + ((-m).exp() + r.iter().map(|&x| (x - m).exp()).sum::<f64>()).ln()
    }
}

/// Softmax cross-entropy of `logits` against index `pos` and its gradient.
/// Works on logits relative to the positive so a near-certain positive
/// keeps full relative precision in both loss and gradient.
fn softmax_xent(logits: &[f64], pos: usize) -> (f64, Vec<f64>) {
    let rel: Vec<f64> = logits
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != pos)
        .map(|(_, &l)| l - logits[pos])
        .collect();
    let loss = ln_one_plus_sum_exp(&rel);
    let mut grad = Vec::with_capacity(logits.len());
    let mut others = rel.iter().map(|&r| (r - loss).exp());
    let mut total = 0.0;
    for i in 0..logits.len() {
        if i == pos {
            grad.push(0.0);
        } else {
            let w = others.next().expect("one weight per non-positive logit");
            total += w;
            grad.push(w);
        }
    }
    grad[pos] = -total;
    (loss, grad)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn same_dim(what: &str, expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::DimensionMismatch { context: what.into(), expected, actual });
    }
    Ok(())
}

/// Cross-entropy of the target path. `step_scores[s]` holds the scores of
/// the valid children at step `s`; steps whose target is the pad token
/// contribute nothing.
pub fn generation_loss(step_scores: &[Vec<f64>], target: &TokenPath, pad: u32) -> Result<(f64, Vec<Vec<f64>>)> {
    if step_scores.len() != target.len() {
        return Err(Error::IndexOutOfRange(format!(
            "{} score steps for a path of length {}",
            step_scores.len(),
            target.len()
        )));
    }
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(step_scores.len());
    for (step, (scores, &t)) in step_scores.iter().zip(target.tokens()).enumerate() {
        let mut g = vec![0.0; scores.len()];
        if t != pad {
            let t = t as usize;
            if t >= scores.len() {
                return Err(Error::IndexOutOfRange(format!(
                    "target token {t} at step {step} with {} children",
                    scores.len()
                )));
            }
            let (l, step_grad) = softmax_xent(scores, t);
            loss += l;
            g = step_grad;
        }
        grad.push(g);
    }
    Ok((loss, grad))
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentGrads {
    pub child: Vec<f64>,
    pub parent: Vec<f64>,
    pub negatives: Vec<Vec<f64>>,
}

/// InfoNCE with the parent as the positive and dot-product similarity.
pub fn alignment_loss(
    child: &[f64],
    parent: &[f64],
    negatives: &[Vec<f64>],
    tau: f64,
) -> Result<(f64, AlignmentGrads)> {
    let d = child.len();
    same_dim("alignment parent", d, parent.len())?;
    for n in negatives {
        same_dim("alignment negative", d, n.len())?;
    }
    if negatives.is_empty() {
        return Err(Error::InvalidConfig("alignment loss needs at least one negative".into()));
    }
    if tau.is_nan() || tau <= 0.0 {
        return Err(Error::InvalidConfig("temperature must be > 0".into()));
    }

    let mut logits = Vec::with_capacity(negatives.len() + 1);
    logits.push(dot(child, parent) / tau);
    logits.extend(negatives.iter().map(|n| dot(child, n) / tau));
    let (loss, w) = softmax_xent(&logits, 0);

    let wp = w[0];
    let mut g_child: Vec<f64> = parent.iter().map(|&p| wp * p / tau).collect();
    let mut g_negs = Vec::with_capacity(negatives.len());
    for (n, &wj) in negatives.iter().zip(&w[1..]) {
        for (gc, &v) in g_child.iter_mut().zip(n) {
            *gc += wj * v / tau;
        }
        g_negs.push(child.iter().map(|&c| wj * c / tau).collect());
    }
    let g_parent = child.iter().map(|&c| wp * c / tau).collect();
    Ok((loss, AlignmentGrads { child: g_child, parent: g_parent, negatives: g_negs }))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankingGrads {
    pub query: Vec<f64>,
    pub positive: Vec<f64>,
    pub negative: Vec<f64>,
}

/// `max(0, margin - <q,p> + <q,n>)`. At the hinge point the zero subgradient is used.
pub fn ranking_loss(query: &[f64], positive: &[f64], negative: &[f64], margin: f64) -> Result<(f64, RankingGrads)> {
    let d = query.len();
    same_dim("ranking positive", d, positive.len())?;
    same_dim("ranking negative", d, negative.len())?;
    let z = margin - dot(query, positive) + dot(query, negative);
    if z > 0.0 {
        let g = RankingGrads {
            query: negative.iter().zip(positive).map(|(n, p)| n - p).collect(),
            positive: query.iter().map(|q| -q).collect(),
            negative: query.to_vec(),
        };
        Ok((z, g))
    } else {
        Ok((0.0, RankingGrads { query: vec![0.0; d], positive: vec![0.0; d], negative: vec![0.0; d] }))
    }
}

fn common_prefix(a: &[u32], b: &[u32]) -> usize {
    a.iter().zip(b).take_while(|(x, y)| x == y).count()
}

/// Draws a positive sharing at least `depth` leading tokens with `target`
/// and a negative sharing strictly fewer, each uniformly.
pub fn triplet_sampler(t: &IdentifierTree, target: usize, depth: usize, seed: u64) -> Result<(u32, u32)> {
    let tp = t.path_of(target)?.tokens();
    let mut positives = Vec::new();
    let mut negatives = Vec::new();
    for (i, p) in t.paths().iter().enumerate() {
        if i == target {
            continue;
        }
        if common_prefix(tp, p.tokens()) >= depth {
            positives.push(i as u32);
        } else {
            negatives.push(i as u32);
        }
    }
    if positives.is_empty() || negatives.is_empty() {
        return Err(Error::NoEligiblePair(format!(
            "item {target} at depth {depth}: {} positives, {} negatives",
            positives.len(),
            negatives.len()
        )));
    }
    let mut rng = stream_rng(seed, target as u64);
    let pos = *positives.choose(&mut rng).expect("non-empty");
    let neg = *negatives.choose(&mut rng).expect("non-empty");
    Ok((pos, neg))
}

/// Nodes at the parent's depth other than the parent itself, capped at
/// `cap` by seeded sampling. Order is ascending node id.
pub fn alignment_negatives(t: &IdentifierTree, child: NodeId, cap: usize, seed: u64) -> Result<Vec<NodeId>> {
    let parent = t
        .node(child)
        .parent
        .ok_or_else(|| Error::InvalidConfig("the root has no parent to align with".into()))?;
    let level = t.node(parent).depth;
    let pool: Vec<NodeId> = t.nodes_at_depth(level).into_iter().filter(|&n| n != parent).collect();
    if pool.len() <= cap {
        return Ok(pool);
    }
    let mut rng = stream_rng(seed, child as u64);
    let mut picked: Vec<NodeId> = sample(&mut rng, pool.len(), cap).into_iter().map(|i| pool[i]).collect();
    picked.sort_unstable();
    Ok(picked)
}

pub fn total_loss(gen: f64, ali: f64, rank: f64, w: &LossWeights) -> f64 {
    gen + w.lambda_a * ali + w.lambda_r * rank
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const H: f64 = 1e-5;

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
    }

    fn rand_vec(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
        (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn uniform_generation_loss() {
        let steps = vec![vec![0.0; 4]; 3];
        let (l, g) = generation_loss(&steps, &TokenPath(vec![1, 2, 3]), 4).unwrap();
        assert!((l - 3.0 * 4f64.ln()).abs() < 1e-12);
        assert!((l - 4.158883).abs() < 1e-6);
        assert!((g[0][1] + 0.75).abs() < 1e-12);
    }

    #[test]
    fn certain_generation_loss() {
        let steps = vec![vec![0.0, 50.0, 0.0]];
        let (l, _) = generation_loss(&steps, &TokenPath(vec![1]), 3).unwrap();
        assert!(l < 1e-20);
    }

    #[test]
    fn generation_pad_steps_are_free_and_range_checked() {
        let steps = vec![vec![0.3, -0.2], vec![1.0, 2.0]];
        let (l, g) = generation_loss(&steps, &TokenPath(vec![0, 2]), 2).unwrap();
        let (l1, _) = generation_loss(&steps[..1], &TokenPath(vec![0]), 2).unwrap();
        assert_eq!(l, l1);
        assert_eq!(g[1], vec![0.0, 0.0]);
        assert!(generation_loss(&steps, &TokenPath(vec![0, 1, 1]), 2).is_err());
        let steps = [vec![0.3, -0.2, 0.1]];
        assert!(generation_loss(&steps[..1], &TokenPath(vec![3]), 5).is_err());
    }

    #[test]
    fn generation_grad_fd() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let target = TokenPath(vec![2, 0]);
        let steps: Vec<Vec<f64>> = (0..2).map(|_| rand_vec(&mut rng, 3)).collect();
        let (_, g) = generation_loss(&steps, &target, 3).unwrap();
        for s in 0..2 {
            for j in 0..3 {
                let mut up = steps.clone();
                up[s][j] += H;
                let mut dn = steps.clone();
                dn[s][j] -= H;
                let fd = (generation_loss(&up, &target, 3).unwrap().0
                    - generation_loss(&dn, &target, 3).unwrap().0)
                    / (2.0 * H);
                assert!(rel_err(fd, g[s][j]) < 1e-6, "{fd} vs {}", g[s][j]);
            }
        }
    }

    #[test]
    fn alignment_symmetric_is_ln2() {
        let c = vec![1.0, 0.0];
        let (l, _) = alignment_loss(&c, &[0.5, 3.0], &[vec![0.5, -7.0]], 0.3).unwrap();
        assert!((l - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn alignment_hand_value() {
        let (l, _) = alignment_loss(&[1.0, 0.0], &[1.0, 0.0], &[vec![0.0, 1.0]], 1.0).unwrap();
        assert!((l - (1.0 + (-1f64).exp()).ln()).abs() < 1e-12);
        assert!((l - 0.313262).abs() < 1e-6);
    }

    #[test]
    fn alignment_errors() {
        assert!(alignment_loss(&[1.0], &[1.0, 2.0], &[vec![1.0]], 1.0).is_err());
        assert!(alignment_loss(&[1.0], &[1.0], &[], 1.0).is_err());
    }

    #[test]
    fn alignment_grad_fd() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let d = 8;
        let c = rand_vec(&mut rng, d);
        let p = rand_vec(&mut rng, d);
        let negs: Vec<Vec<f64>> = (0..5).map(|_| rand_vec(&mut rng, d)).collect();
        let tau = 0.7;
        let (_, g) = alignment_loss(&c, &p, &negs, tau).unwrap();
        let f = |c: &[f64], p: &[f64], n: &[Vec<f64>]| alignment_loss(c, p, n, tau).unwrap().0;
        for i in 0..d {
            let (mut cu, mut cd) = (c.clone(), c.clone());
            cu[i] += H;
            cd[i] -= H;
            let fd = (f(&cu, &p, &negs) - f(&cd, &p, &negs)) / (2.0 * H);
            assert!(rel_err(fd, g.child[i]) < 1e-6);
            let (mut pu, mut pd) = (p.clone(), p.clone());
            pu[i] += H;
            pd[i] -= H;
            let fd = (f(&c, &pu, &negs) - f(&c, &pd, &negs)) / (2.0 * H);
            assert!(rel_err(fd, g.parent[i]) < 1e-6);
            for j in 0..negs.len() {
                let (mut nu, mut nd) = (negs.clone(), negs.clone());
                nu[j][i] += H;
                nd[j][i] -= H;
                let fd = (f(&c, &p, &nu) - f(&c, &p, &nd)) / (2.0 * H);
                assert!(rel_err(fd, g.negatives[j][i]) < 1e-6);
            }
        }
    }

    #[test]
    fn ranking_cases() {
        let (l, g) = ranking_loss(&[1.0, 0.0], &[2.0, 0.0], &[0.5, 0.0], 1.0).unwrap();
        assert_eq!(l, 0.0);
        assert!(g.query.iter().chain(&g.positive).chain(&g.negative).all(|&v| v == 0.0));

        let (l, _) = ranking_loss(&[1.0, 1.0], &[0.2, 0.3], &[0.3, 0.2], 1.0).unwrap();
        assert!((l - 1.0).abs() < 1e-12);

        // s+ = 0.3, s- = 0.5
        let q = [1.0, 0.0];
        let (l, g) = ranking_loss(&q, &[0.3, 4.0], &[0.5, -2.0], 1.0).unwrap();
        assert!((l - 1.2).abs() < 1e-12);
        assert_eq!(g.positive, vec![-1.0, -0.0]);
        assert_eq!(g.negative, vec![1.0, 0.0]);
        assert_eq!(g.query, vec![0.2, -6.0]);
    }

    #[test]
    fn total_loss_arithmetic() {
        let w = LossWeights { lambda_a: 0.5, lambda_r: 0.1, ..Default::default() };
        assert!((total_loss(1.0, 2.0, 3.0, &w) - 2.3).abs() < 1e-12);
        let z = LossWeights { lambda_a: 0.0, lambda_r: 0.0, ..Default::default() };
        assert_eq!(total_loss(1.7, 9.0, 9.0, &z), 1.7);
        let base = total_loss(1.0, 2.0, 3.0, &w);
        let doubled = total_loss(1.0, 4.0, 3.0, &w);
        assert_eq!(doubled - base, w.lambda_a * 2.0);
    }

    fn two_blob_tree() -> IdentifierTree {
        // k = 2: blob A under token 0, blob B under token 1.
        let paths = vec![vec![0, 0], vec![0, 1], vec![1, 0], vec![1, 1]];
        IdentifierTree::from_paths(2, paths.into_iter().map(TokenPath).collect()).unwrap()
    }

    #[test]
    fn triplet_sampler_cases() {
        let t = two_blob_tree();
        assert!(triplet_sampler(&t, 0, 0, 1).is_err());
        for seed in 0..20 {
            let (p, n) = triplet_sampler(&t, 0, 1, seed).unwrap();
            assert_eq!(p, 1);
            assert!(n == 2 || n == 3);
        }
        assert_eq!(triplet_sampler(&t, 2, 1, 5).unwrap(), triplet_sampler(&t, 2, 1, 5).unwrap());
    }

    #[test]
    fn alignment_negative_pool() {
        let t = two_blob_tree();
        // child node 3 (path [0,0]) has parent 1; pool = depth-1 nodes other than 1.
        let negs = alignment_negatives(&t, 3, 128, 0).unwrap();
        assert_eq!(negs, vec![2]);
        assert!(alignment_negatives(&t, 0, 128, 0).is_err());
    }
}
