//! Centroid computation and the two capacity-respecting assignment
//! strategies used for every split of the identifier tree.

use log::debug;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::mincostflow::{solve_balanced_transport, TransportInstance, COST_BUDGET};
use crate::types::{CapacityBounds, ClusterAssignment, EmbeddingMatrix, GreedyOrder, TreeBuildConfig};

/// Scale applied to squared distances before rounding to integer flow costs.
pub const COST_SCALE: f64 = 65536.0;

/// Items per parallel work unit for distance scans.
const CHUNK: usize = 1024;

#[derive(Debug, Clone, PartialEq)]
pub struct CentroidSet {
    k: usize,
    dim: usize,
    values: Vec<f64>,
}

impl CentroidSet {
    pub fn new(k: usize, dim: usize, values: Vec<f64>) -> Result<Self> {
        if k == 0 || values.len() != k * dim {
            return Err(Error::DimensionMismatch {
                context: "centroid set".into(),
                expected: k * dim,
                actual: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig("non-finite centroid value".into()));
        }
        Ok(Self { k, dim, values })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        Self::new(rows.len(), dim, rows.iter().flatten().copied().collect())
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn centroid(&self, j: usize) -> &[f64] {
        &self.values[j * self.dim..(j + 1) * self.dim]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

#[inline]
pub fn sq_dist(x: &[f32], c: &[f64]) -> f64 {
    x.iter().zip(c).map(|(&a, &b)| {
        let d = a as f64 - b;
        d * d
    }).sum()
}

fn check_dims(x: &EmbeddingMatrix, c: &CentroidSet) -> Result<()> {
    if x.dim() != c.dim() {
        return Err(Error::DimensionMismatch {
            context: "centroids vs embeddings".into(),
            expected: x.dim(),
            actual: c.dim(),
        });
    }
    Ok(())
}

/// Row-major `n x k` table of squared distances.
fn distance_table(x: &EmbeddingMatrix, c: &CentroidSet) -> Vec<f64> {
    let k = c.k();
    let mut out = vec![0.0; x.n_items() * k];
    out.par_chunks_mut(CHUNK * k).enumerate().for_each(|(chunk, block)| {
        for (r, row) in block.chunks_mut(k).enumerate() {
            let xi = x.row(chunk * CHUNK + r);
            for (j, d) in row.iter_mut().enumerate() {
                *d = sq_dist(xi, c.centroid(j));
            }
        }
    });
    out
}

/// Nearest centroid per item (ties to the lower index) and its distance.
fn nearest(x: &EmbeddingMatrix, c: &CentroidSet) -> Vec<(u32, f64)> {
    (0..x.n_items())
        .into_par_iter()
        .with_min_len(CHUNK)
        .map(|i| {
            let xi = x.row(i);
            let mut best = (0u32, f64::INFINITY);
            for j in 0..c.k() {
                let d = sq_dist(xi, c.centroid(j));
                if d < best.1 {
                    best = (j as u32, d);
                }
            }
            best
        })
        .collect()
}

pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// k-means++ seeding: first centre uniform, then each further centre drawn
/// with probability proportional to squared distance to the nearest chosen
/// centre. Centres are always distinct input rows.
pub fn kmeanspp_init(x: &EmbeddingMatrix, k: usize, seed: u64) -> Result<CentroidSet> {
    kmeanspp_init_with(x, k, &mut ChaCha8Rng::seed_from_u64(seed))
}

pub fn kmeanspp_init_with<R: Rng>(x: &EmbeddingMatrix, k: usize, rng: &mut R) -> Result<CentroidSet> {
    let n = x.n_items();
    if k == 0 || k > n {
        return Err(Error::InvalidConfig(format!("k-means++ needs 1 <= k <= n, got k={k}, n={n}")));
    }
    let dim = x.dim();
    let mut chosen = Vec::with_capacity(k);
    let mut taken = vec![false; n];
    let first = rng.random_range(0..n);
    chosen.push(first);
    taken[first] = true;
    let mut d2: Vec<f64> = {
        let c: Vec<f64> = x.row(first).iter().map(|&v| v as f64).collect();
        (0..n).map(|i| if taken[i] { 0.0 } else { sq_dist(x.row(i), &c) }).collect()
    };

    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (i, &w) in d2.iter().enumerate() {
                if w <= 0.0 {
                    continue;
                }
                acc += w;
                pick = Some(i);
                if acc > target {
                    break;
                }
            }
            pick.expect("positive total weight")
        } else {
            // Remaining rows coincide with chosen centres.
            let free: Vec<usize> = (0..n).filter(|&i| !taken[i]).collect();
            free[rng.random_range(0..free.len())]
        };
        chosen.push(pick);
        taken[pick] = true;
        d2[pick] = 0.0;
        let c: Vec<f64> = x.row(pick).iter().map(|&v| v as f64).collect();
        for (i, d) in d2.iter_mut().enumerate() {
            if !taken[i] {
                *d = d.min(sq_dist(x.row(i), &c));
            }
        }
    }

    let mut values = Vec::with_capacity(k * dim);
    for &i in &chosen {
        values.extend(x.row(i).iter().map(|&v| v as f64));
    }
    CentroidSet::new(k, dim, values)
}

#[derive(Debug, Clone)]
pub struct LloydOutcome {
    pub centroids: CentroidSet,
    /// SSE of each assignment step against the centroids it was made with.
    pub sse_trace: Vec<f64>,
    /// Iterations (indices into `sse_trace`) after which a cluster was reseeded.
    pub reseeded_at: Vec<usize>,
    pub iterations: usize,
}

pub fn lloyd(x: &EmbeddingMatrix, init: &CentroidSet, max_iters: usize, tol: f64) -> Result<CentroidSet> {
    Ok(lloyd_traced(x, init, max_iters, tol)?.centroids)
}

/// Standard Lloyd iteration. Stops when the assignment no longer changes or
/// the relative centroid movement drops below `tol`.
pub fn lloyd_traced(
    x: &EmbeddingMatrix,
    init: &CentroidSet,
    max_iters: usize,
    tol: f64,
) -> Result<LloydOutcome> {
    check_dims(x, init)?;
    let k = init.k();
    let dim = x.dim();
    if k > x.n_items() {
        return Err(Error::InvalidConfig(format!("lloyd with k={k} > n={}", x.n_items())));
    }
    let mut cent = init.clone();
    let mut sse_trace = Vec::new();
    let mut reseeded_at = Vec::new();
    let mut prev: Option<Vec<u32>> = None;
    let mut iterations = 0;

    for it in 0..max_iters {
        iterations = it + 1;
        let near = nearest(x, &cent);
        sse_trace.push(near.iter().map(|&(_, d)| d).sum());
        let labels: Vec<u32> = near.iter().map(|&(j, _)| j).collect();
        if prev.as_ref() == Some(&labels) {
            break;
        }

        let mut sums = vec![0.0f64; k * dim];
        let mut counts = vec![0usize; k];
        for (i, &j) in labels.iter().enumerate() {
            counts[j as usize] += 1;
            let s = &mut sums[j as usize * dim..(j as usize + 1) * dim];
            for (a, &v) in s.iter_mut().zip(x.row(i)) {
                *a += v as f64;
            }
        }

        let mut next = sums;
        let mut dist: Vec<f64> = near.iter().map(|&(_, d)| d).collect();
        let mut reseeded = false;
        for j in 0..k {
            if counts[j] > 0 {
                let c = counts[j] as f64;
                next[j * dim..(j + 1) * dim].iter_mut().for_each(|v| *v /= c);
            } else {
                let far = (0..dist.len()).fold(0, |b, i| if dist[i] > dist[b] { i } else { b });
                debug!("lloyd iteration {it}: cluster {j} empty, reseeded from item {far}");
                for (t, &v) in next[j * dim..(j + 1) * dim].iter_mut().zip(x.row(far)) {
                    *t = v as f64;
                }
                dist[far] = 0.0;
                reseeded = true;
            }
        }
        if reseeded {
            reseeded_at.push(it);
        }

        let moved: f64 = next.iter().zip(cent.values()).map(|(a, b)| (a - b) * (a - b)).sum();
        let scale: f64 = cent.values().iter().map(|v| v * v).sum();
        cent = CentroidSet { k, dim, values: next };
        prev = Some(labels);
        if moved.sqrt() < tol * scale.sqrt().max(f64::MIN_POSITIVE) {
            break;
        }
    }
    Ok(LloydOutcome { centroids: cent, sse_trace, reseeded_at, iterations })
}

fn assignment_from_labels(labels: Vec<u32>, k: usize, dist: &[f64]) -> ClusterAssignment {
    let mut sizes = vec![0usize; k];
    let mut cost = 0.0;
    for (i, &j) in labels.iter().enumerate() {
        sizes[j as usize] += 1;
        cost += dist[i * k + j as usize];
    }
    ClusterAssignment { cluster_of: labels, sizes, cost }
}

/// Exact minimum-SSE assignment to fixed centroids under `bounds`.
pub fn constrained_assign(
    x: &EmbeddingMatrix,
    c: &CentroidSet,
    bounds: CapacityBounds,
) -> Result<ClusterAssignment> {
    check_dims(x, c)?;
    let k = c.k();
    let dist = distance_table(x, c);
    let costs = discretize(&dist, x.n_items())?;
    let inst = TransportInstance::new(x.n_items(), k, costs, bounds);
    let sol = solve_balanced_transport(&inst)?;
    Ok(assignment_from_labels(sol.assignment, k, &dist))
}

fn discretize(dist: &[f64], n: usize) -> Result<Vec<i64>> {
    let limit = COST_BUDGET as f64 / n.max(1) as f64;
    dist.iter()
        .map(|&d| {
            let c = (d * COST_SCALE).round();
            if c.is_finite() && c <= limit {
                Ok(c as i64)
            } else {
                Err(Error::CostOverflow(format!(
                    "squared distance {d} too large for {n} rows"
                )))
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct GreedyStats {
    pub distance_evals: u64,
    pub topup_moves: usize,
}

pub fn greedy_assign(
    x: &EmbeddingMatrix,
    c: &CentroidSet,
    bounds: CapacityBounds,
) -> Result<ClusterAssignment> {
    Ok(greedy_assign_with(x, c, bounds, GreedyOrder::ItemIndex)?.0)
}

/// Sequential nearest-available-centroid assignment, followed by a
/// cheapest-move top-up of clusters left below `min_size`.
pub fn greedy_assign_with(
    x: &EmbeddingMatrix,
    c: &CentroidSet,
    bounds: CapacityBounds,
    order: GreedyOrder,
) -> Result<(ClusterAssignment, GreedyStats)> {
    check_dims(x, c)?;
    let n = x.n_items();
    let k = c.k();
    bounds.check_feasible(n, k)?;
    let dist = distance_table(x, c);
    let mut stats = GreedyStats { distance_evals: (n * k) as u64, topup_moves: 0 };

    let visit: Vec<usize> = match order {
        GreedyOrder::ItemIndex => (0..n).collect(),
        GreedyOrder::NearestDistance => {
            let mut v: Vec<(f64, usize)> = (0..n)
                .map(|i| {
                    let row = &dist[i * k..(i + 1) * k];
                    (row.iter().copied().fold(f64::INFINITY, f64::min), i)
                })
                .collect();
            v.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            v.into_iter().map(|(_, i)| i).collect()
        }
    };

    let mut labels = vec![0u32; n];
    let mut loads = vec![0usize; k];
    for i in visit {
        let row = &dist[i * k..(i + 1) * k];
        let mut best = usize::MAX;
        for j in 0..k {
            if loads[j] < bounds.max_size && (best == usize::MAX || row[j] < row[best]) {
                best = j;
            }
        }
        labels[i] = best as u32;
        loads[best] += 1;
    }

    while loads.iter().any(|&l| l < bounds.min_size) {
        let mut best: Option<(f64, usize, usize)> = None;
        for (i, &from) in labels.iter().enumerate() {
            let from = from as usize;
            if loads[from] <= bounds.min_size {
                continue;
            }
            let row = &dist[i * k..(i + 1) * k];
            for to in 0..k {
                if loads[to] >= bounds.min_size {
                    continue;
                }
                let delta = row[to] - row[from];
                let better = match best {
                    None => true,
                    Some((bd, bi, bt)) => delta
                        .total_cmp(&bd)
                        .then(i.cmp(&bi))
                        .then(to.cmp(&bt))
                        .is_lt(),
                };
                if better {
                    best = Some((delta, i, to));
                }
            }
        }
        let (_, i, to) = best.expect("feasible bounds always leave a donor");
        loads[labels[i] as usize] -= 1;
        loads[to] += 1;
        labels[i] = to as u32;
        stats.topup_moves += 1;
    }

    Ok((assignment_from_labels(labels, k, &dist), stats))
}

/// Mean of each cluster's members; empty clusters keep their centroid from `prev`.
pub fn update_centroids(
    x: &EmbeddingMatrix,
    a: &ClusterAssignment,
    prev: &CentroidSet,
) -> Result<CentroidSet> {
    check_dims(x, prev)?;
    let k = prev.k();
    let dim = x.dim();
    if a.cluster_of.len() != x.n_items() {
        return Err(Error::DimensionMismatch {
            context: "assignment length".into(),
            expected: x.n_items(),
            actual: a.cluster_of.len(),
        });
    }
    let mut sums = vec![0.0f64; k * dim];
    let mut counts = vec![0usize; k];
    for (i, &j) in a.cluster_of.iter().enumerate() {
        let j = j as usize;
        if j >= k {
            return Err(Error::IndexOutOfRange(format!("cluster {j} >= k = {k}")));
        }
        counts[j] += 1;
        for (s, &v) in sums[j * dim..(j + 1) * dim].iter_mut().zip(x.row(i)) {
            *s += v as f64;
        }
    }
    for j in 0..k {
        let block = &mut sums[j * dim..(j + 1) * dim];
        if counts[j] == 0 {
            block.copy_from_slice(prev.centroid(j));
        } else {
            let c = counts[j] as f64;
            block.iter_mut().for_each(|v| *v /= c);
        }
    }
    CentroidSet::new(k, dim, sums)
}

/// Alternates exact balanced assignment and mean updates from `init`,
/// returning the lowest-cost assignment seen.
pub fn constrained_kmeans(
    x: &EmbeddingMatrix,
    init: &CentroidSet,
    bounds: CapacityBounds,
    max_iters: usize,
) -> Result<ClusterAssignment> {
    let mut cent = init.clone();
    let mut best: Option<ClusterAssignment> = None;
    let mut prev: Option<Vec<u32>> = None;
    for _ in 0..max_iters.max(1) {
        let a = constrained_assign(x, &cent, bounds)?;
        let stable = prev.as_ref() == Some(&a.cluster_of);
        if best.as_ref().is_none_or(|b| a.cost < b.cost) {
            best = Some(a.clone());
        }
        if stable {
            break;
        }
        cent = update_centroids(x, &a, &cent)?;
        prev = Some(a.cluster_of);
    }
    Ok(best.expect("at least one iteration"))
}

/// One balanced split of a group into `cfg.k` clusters with sizes in
/// `[floor(n/k), floor(n/k)+1]`. Both backends start from the same
/// k-means++ + Lloyd centroids drawn from `(cfg.seed, stream)`.
pub fn cluster_level_stream(
    x: &EmbeddingMatrix,
    cfg: &TreeBuildConfig,
    stream: u64,
) -> Result<ClusterAssignment> {
    let n = x.n_items();
    let k = cfg.k;
    if n <= k {
        return Err(Error::InvalidConfig(format!("cluster_level needs n > k, got n={n}, k={k}")));
    }
    let bounds = CapacityBounds::balanced(n, k);
    let mut rng = stream_rng(cfg.seed, stream);
    let init = kmeanspp_init_with(x, k, &mut rng)?;
    let cent = lloyd(x, &init, cfg.lloyd_max_iters, cfg.lloyd_tol)?;
    if cfg.uses_greedy(n) {
        Ok(greedy_assign_with(x, &cent, bounds, cfg.greedy_order)?.0)
    } else {
        constrained_kmeans(x, &cent, bounds, cfg.outer_max_iters)
    }
}

pub fn cluster_level(x: &EmbeddingMatrix, cfg: &TreeBuildConfig) -> Result<ClusterAssignment> {
    cluster_level_stream(x, cfg, 0)
}
