//! Independent oracles shared by the integration suites.
#![allow(dead_code)]

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use treeid::decode::TableScorer;
use treeid::mincostflow::TransportInstance;
use treeid::{CapacityBounds, EmbeddingMatrix, IdentifierTree, NodeId};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Minimum cost over every assignment whose column loads fit the bounds.
pub fn brute_transport(inst: &TransportInstance) -> Option<i64> {
    let (n, k) = (inst.n_rows, inst.n_cols);
    let mut labels = vec![0usize; n];
    let mut best: Option<i64> = None;
    loop {
        let mut loads = vec![0usize; k];
        for &l in &labels {
            loads[l] += 1;
        }
        if loads.iter().all(|&s| inst.bounds.contains(s)) {
            let cost: i64 = labels.iter().enumerate().map(|(r, &c)| inst.cost(r, c)).sum();
            best = Some(best.map_or(cost, |b| b.min(cost)));
        }
        let mut i = 0;
        loop {
            if i == n {
                return best;
            }
            labels[i] += 1;
            if labels[i] < k {
                break;
            }
            labels[i] = 0;
            i += 1;
        }
    }
}

/// Random instance with `n <= max_n`, `k <= max_k` and feasible bounds.
pub fn random_transport<R: Rng>(r: &mut R, max_n: usize, max_k: usize, max_cost: i64) -> TransportInstance {
    let n = r.random_range(1..=max_n);
    let k = r.random_range(1..=max_k);
    let costs = (0..n * k).map(|_| r.random_range(0..=max_cost)).collect();
    let bounds = match r.random_range(0..3) {
        0 => CapacityBounds::balanced(n, k),
        1 => CapacityBounds::unconstrained(n),
        _ => loop {
            let lo = r.random_range(0..=n);
            let hi = r.random_range(lo.max(1)..=n);
            if k * lo <= n && n <= k * hi {
                break CapacityBounds::new(lo, hi);
            }
        },
    };
    TransportInstance::new(n, k, costs, bounds)
}

pub fn gaussian_matrix<R: Rng>(r: &mut R, n: usize, dim: usize) -> EmbeddingMatrix {
    use rand_distr::{Distribution, StandardNormal};
    let values = (0..n * dim).map(|_| StandardNormal.sample(r)).collect();
    EmbeddingMatrix::new(n, dim, values).unwrap()
}

pub fn random_table<R: Rng>(r: &mut R, t: &IdentifierTree) -> TableScorer {
    let table = t
        .nodes()
        .iter()
        .map(|n| (0..n.children.len()).map(|_| r.random_range(-5.0..0.0)).collect())
        .collect();
    TableScorer { table }
}

/// Every leaf scored by summing table entries root to leaf, ranked by
/// descending score then ascending path.
pub fn brute_ranking(t: &IdentifierTree, table: &TableScorer) -> Vec<(u32, f64)> {
    let mut out: Vec<(Vec<u32>, u32, f64)> = Vec::new();
    let mut stack: Vec<(NodeId, Vec<u32>, f64)> = vec![(t.root(), Vec::new(), 0.0)];
    while let Some((node, path, score)) = stack.pop() {
        let n = t.node(node);
        if n.children.is_empty() {
            if let Some(item) = n.item {
                out.push((path, item, score));
            }
            continue;
        }
        for (ord, &c) in n.children.iter().enumerate() {
            let mut p = path.clone();
            p.push(ord as u32);
            stack.push((c, p, score + table.table[node as usize][ord]));
        }
    }
    out.sort_by(|a, b| b.2.total_cmp(&a.2).then_with(|| a.0.cmp(&b.0)));
    out.into_iter().map(|(_, i, s)| (i, s)).collect()
}

/// Central difference of `f` along every coordinate of `x`.
pub fn numeric_grad(x: &[f64], h: f64, f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    let mut y = x.to_vec();
    (0..x.len())
        .map(|i| {
            y[i] = x[i] + h;
            let up = f(&y);
            y[i] = x[i] - h;
            let down = f(&y);
            y[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Relative error of a gradient vector, `|a - n| / max(|a|, |n|)` in the
/// Euclidean norm. Per-coordinate ratios are meaningless for coordinates
/// below the difference quotient's round-off (about `eps * |f| / h`).
pub fn rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>().sqrt();
    let diff = norm(&mut analytic.iter().zip(numeric).map(|(a, n)| a - n));
    let scale = norm(&mut analytic.iter().copied()).max(norm(&mut numeric.iter().copied()));
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}
