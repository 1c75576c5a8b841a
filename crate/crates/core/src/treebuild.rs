//! Recursive construction of the balanced identifier tree.
//!
//! Groups with more than `k` items are split into `k` balanced clusters;
//! groups of at most `k` items become leaf groups whose items take branch
//! ordinals `0..n` in item order. The recursion runs level by level so
//! node ids come out in breadth-first order and each split can seed its
//! RNG from `(seed, node id)` whether siblings run in parallel or not.

use std::time::Instant;

use rayon::prelude::*;

use crate::clustering::cluster_level_stream;
use crate::error::{Error, Result};
use crate::types::{
    validate_embeddings, ClusterAssignment, EmbeddingMatrix, IdentifierTree, NodeId, TokenPath,
    TreeBuildConfig,
};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LevelStats {
    pub depth: usize,
    pub splits: usize,
    pub greedy_splits: usize,
    pub largest_group: usize,
    pub sse: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct BuildStats {
    /// Sum over every split of its assignment cost.
    pub total_sse: f64,
    pub levels: Vec<LevelStats>,
    pub seconds: f64,
}

pub fn build_tree(x: &EmbeddingMatrix, cfg: &TreeBuildConfig) -> Result<IdentifierTree> {
    Ok(build_tree_with_stats(x, cfg)?.0)
}

enum GroupOutcome {
    Split(ClusterAssignment),
    Leaves,
}

pub fn build_tree_with_stats(
    x: &EmbeddingMatrix,
    cfg: &TreeBuildConfig,
) -> Result<(IdentifierTree, BuildStats)> {
    if let Some(v) = validate_embeddings(x).violations.into_iter().next() {
        return Err(Error::InvalidEmbeddings(v));
    }
    cfg.validate()?;
    let start = Instant::now();
    let k = cfg.k;
    let n = x.n_items();

    let mut paths: Vec<Vec<u32>> = vec![Vec::new(); n];
    let mut frontier: Vec<(NodeId, Vec<u32>)> = vec![(0, (0..n as u32).collect())];
    let mut next_id: u64 = 1;
    let mut stats = BuildStats::default();

    while !frontier.is_empty() {
        let level_start = Instant::now();
        let outcomes: Vec<GroupOutcome> = frontier
            .par_iter()
            .map(|(id, items)| {
                if items.len() > k {
                    let sub = x.gather(items);
                    cluster_level_stream(&sub, cfg, *id as u64).map(GroupOutcome::Split)
                } else {
                    Ok(GroupOutcome::Leaves)
                }
            })
            .collect::<Result<_>>()?;

        let mut level = LevelStats { depth: stats.levels.len(), ..Default::default() };
        let mut next = Vec::new();
        for ((_, items), outcome) in frontier.iter().zip(outcomes) {
            match outcome {
                GroupOutcome::Split(a) => {
                    level.splits += 1;
                    level.greedy_splits += usize::from(cfg.uses_greedy(items.len()));
                    level.largest_group = level.largest_group.max(items.len());
                    level.sse += a.cost;
                    for (ordinal, members) in a.members().into_iter().enumerate() {
                        let child: Vec<u32> = members.iter().map(|&m| items[m as usize]).collect();
                        for &it in &child {
                            paths[it as usize].push(ordinal as u32);
                        }
                        next.push((node_id(next_id)?, child));
                        next_id += 1;
                    }
                }
                GroupOutcome::Leaves => {
                    for (ordinal, &it) in items.iter().enumerate() {
                        paths[it as usize].push(ordinal as u32);
                    }
                    next_id += items.len() as u64;
                }
            }
        }
        level.seconds = level_start.elapsed().as_secs_f64();
        if level.splits > 0 {
            stats.total_sse += level.sse;
            stats.levels.push(level);
        }
        frontier = next;
    }

    let tree = IdentifierTree::from_paths(k, paths.into_iter().map(TokenPath).collect())?;
    debug_assert!(crate::types::validate_tree(&tree).is_ok());
    stats.seconds = start.elapsed().as_secs_f64();
    Ok((tree, stats))
}

fn node_id(id: u64) -> Result<NodeId> {
    NodeId::try_from(id).map_err(|_| Error::InvalidTree("node count exceeds u32".into()))
}

pub fn path_of(t: &IdentifierTree, item: usize) -> Result<&TokenPath> {
    t.path_of(item)
}

pub fn item_of(t: &IdentifierTree, path: &TokenPath) -> Option<u32> {
    t.item_of(path)
}

/// One vector per tree node: leaves carry their item's embedding, internal
/// nodes the mean over their descendant leaves.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeEmbeddings {
    dim: usize,
    values: Vec<f64>,
}

impl NodeEmbeddings {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_nodes(&self) -> usize {
        self.values.len() / self.dim.max(1)
    }

    #[inline]
    pub fn get(&self, node: NodeId) -> &[f64] {
        let i = node as usize;
        &self.values[i * self.dim..(i + 1) * self.dim]
    }
}

pub fn node_embeddings(t: &IdentifierTree, x: &EmbeddingMatrix) -> Result<NodeEmbeddings> {
    if x.n_items() != t.n_items() {
        return Err(Error::DimensionMismatch {
            context: "tree items vs embedding rows".into(),
            expected: t.n_items(),
            actual: x.n_items(),
        });
    }
    let dim = x.dim();
    let nodes = t.nodes();
    let mut sums = vec![0.0f64; nodes.len() * dim];
    let mut counts = vec![0usize; nodes.len()];
    // Children have larger ids than parents, so a reverse sweep sees every
    // subtree complete before it is folded into its parent.
    for id in (0..nodes.len()).rev() {
        let node = &nodes[id];
        if let Some(item) = node.item {
            for (s, &v) in sums[id * dim..(id + 1) * dim].iter_mut().zip(x.row(item as usize)) {
                *s = v as f64;
            }
            counts[id] = 1;
        }
        if let Some(p) = node.parent {
            let p = p as usize;
            counts[p] += counts[id];
            let (head, tail) = sums.split_at_mut(id * dim);
            for (a, &b) in head[p * dim..(p + 1) * dim].iter_mut().zip(&tail[..dim]) {
                *a += b;
            }
        }
    }
    for (id, &c) in counts.iter().enumerate() {
        if c > 1 {
            sums[id * dim..(id + 1) * dim].iter_mut().for_each(|v| *v /= c as f64);
        }
    }
    Ok(NodeEmbeddings { dim, values: sums })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{validate_tree, Method};

    fn cfg(k: usize, method: Method) -> TreeBuildConfig {
        TreeBuildConfig { k, method, ..TreeBuildConfig::default() }
    }

    fn line(n: usize) -> EmbeddingMatrix {
        EmbeddingMatrix::from_raw(n, 1, (0..n).map(|i| i as f32).collect())
    }

    #[test]
    fn small_input_is_one_leaf_group() {
        let t = build_tree(&line(5), &cfg(8, Method::Hybrid)).unwrap();
        assert_eq!(t.depth(), 1);
        for i in 0..5 {
            assert_eq!(t.path_of(i).unwrap().0, vec![i as u32]);
        }
    }

    #[test]
    fn ten_items_three_way() {
        for m in Method::ALL {
            let t = build_tree(&line(10), &cfg(3, m)).unwrap();
            assert!(validate_tree(&t).is_ok());
            let mut sizes: Vec<usize> =
                t.node(t.root()).children.iter().map(|&c| t.items_under(c).len()).collect();
            sizes.sort_unstable();
            assert_eq!(sizes, vec![3, 3, 4]);
            assert_eq!(t.depth(), 3);
        }
    }

    #[test]
    fn three_blobs_share_prefixes() {
        let rows: Vec<Vec<f32>> = [0.0f32, 10.0, 20.0]
            .iter()
            .flat_map(|&c| [c, c + 0.1, c + 0.2].map(|v| vec![v, 0.0]))
            .collect();
        let x = EmbeddingMatrix::from_rows(&rows).unwrap();
        for m in Method::ALL {
            let t = build_tree(&x, &cfg(3, m)).unwrap();
            for b in 0..3 {
                let first = t.path_of(3 * b).unwrap().0[0];
                for j in 1..3 {
                    assert_eq!(t.path_of(3 * b + j).unwrap().0[0], first, "{m}");
                }
            }
        }
    }

    #[test]
    fn paths_round_trip() {
        let x = EmbeddingMatrix::from_raw(200, 2, (0..400).map(|i| ((i * 37) % 101) as f32).collect());
        let t = build_tree(&x, &cfg(4, Method::Hybrid)).unwrap();
        for i in 0..200 {
            assert_eq!(item_of(&t, path_of(&t, i).unwrap()), Some(i as u32));
        }
        assert!(path_of(&t, 200).is_err());
    }

    #[test]
    fn same_seed_same_tree() {
        let x = EmbeddingMatrix::from_raw(300, 3, (0..900).map(|i| ((i * 7919) % 613) as f32).collect());
        let c = TreeBuildConfig { seed: 9, ..cfg(5, Method::Hybrid) };
        assert_eq!(build_tree(&x, &c).unwrap(), build_tree(&x, &c).unwrap());
    }

    #[test]
    fn rejects_bad_input() {
        let x = EmbeddingMatrix::from_raw(2, 1, vec![0.0, f32::NAN]);
        assert!(matches!(build_tree(&x, &cfg(2, Method::Hybrid)), Err(Error::InvalidEmbeddings(_))));
        assert!(build_tree(&line(4), &cfg(1, Method::Hybrid)).is_err());
    }

    #[test]
    fn node_embeddings_are_subtree_means() {
        let x = EmbeddingMatrix::from_rows(&[vec![1.0f32, 2.0], vec![3.0, 4.0]]).unwrap();
        let t = build_tree(&x, &cfg(8, Method::Hybrid)).unwrap();
        let e = node_embeddings(&t, &x).unwrap();
        assert_eq!(e.get(t.root()), &[2.0, 3.0]);
        let leaf = t.node_at(&[1]).unwrap();
        assert_eq!(e.get(leaf), &[3.0, 4.0]);

        let x = line(10);
        let t = build_tree(&x, &cfg(3, Method::Constrained)).unwrap();
        let e = node_embeddings(&t, &x).unwrap();
        for (id, _) in t.nodes().iter().enumerate() {
            let items = t.items_under(id as NodeId);
            let mean = items.iter().map(|&i| i as f64).sum::<f64>() / items.len() as f64;
            assert!((e.get(id as NodeId)[0] - mean).abs() < 1e-12);
        }
        assert!(node_embeddings(&t, &line(9)).is_err());
    }

    #[test]
    fn stats_sum_level_costs() {
        let x = line(100);
        let (_, s) = build_tree_with_stats(&x, &cfg(3, Method::Constrained)).unwrap();
        let total: f64 = s.levels.iter().map(|l| l.sse).sum();
        assert!((s.total_sse - total).abs() < 1e-9);
        assert_eq!(s.levels[0].splits, 1);
        assert_eq!(s.levels[0].largest_group, 100);
    }

    #[test]
    fn item_of_rejects_absent_paths() {
        let t = build_tree(&line(5), &cfg(3, Method::Constrained)).unwrap();
        assert_eq!(t.depth(), 2);
        assert_eq!(item_of(&t, &TokenPath(vec![3, 0])), None);
        assert_eq!(item_of(&t, &TokenPath(vec![0, 7])), None);
        let mut found = 0;
        for a in 0..3u32 {
            for b in 0..3u32 {
                match item_of(&t, &TokenPath(vec![a, b])) {
                    Some(_) => found += 1,
                    None => assert!(t.node_at(&[a, b]).is_none()),
                }
            }
        }
        assert_eq!(found, 5);
    }

    #[test]
    fn depth_within_log_bound() {
        for (n, k) in [(1000usize, 8usize), (100, 2), (729, 3), (730, 3)] {
            let t = build_tree(&line(n), &cfg(k, Method::Greedy)).unwrap();
            let bound = (n as f64).log(k as f64).ceil() as usize + 1;
            assert!(t.depth() <= bound, "n={n} k={k} depth={}", t.depth());
        }
    }
}
