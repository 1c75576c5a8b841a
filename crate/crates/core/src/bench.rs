//! Synthetic blob data and construction-time benchmarks.

use std::time::Instant;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::treebuild::build_tree_with_stats;
use crate::types::{EmbeddingMatrix, Method, TreeBuildConfig};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlobSpec {
    pub n_items: usize,
    pub dim: usize,
    pub n_blobs: usize,
    /// Standard deviation of the Gaussian noise around each center.
    pub blob_spread: f64,
    pub seed: u64,
}

impl Default for BlobSpec {
    fn default() -> Self {
        Self { n_items: 10_000, dim: 16, n_blobs: 64, blob_spread: 1.0, seed: 0 }
    }
}

impl BlobSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_items == 0 || self.dim == 0 {
            return Err(Error::InvalidConfig("blob spec needs n_items >= 1 and dim >= 1".into()));
        }
        if self.n_blobs == 0 || self.n_blobs > self.n_items {
            return Err(Error::InvalidConfig(format!(
                "n_blobs must be in [1, n_items], got {}",
                self.n_blobs
            )));
        }
        if !(self.blob_spread > 0.0 && self.blob_spread.is_finite()) {
            return Err(Error::InvalidConfig(format!("blob_spread must be > 0, got {}", self.blob_spread)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Blobs {
    pub embeddings: EmbeddingMatrix,
    /// `n_blobs x dim`, row-major.
    pub centers: Vec<f32>,
    /// Blob of each item; item `i` belongs to blob `i % n_blobs`.
    pub labels: Vec<u32>,
}

pub fn gen_blobs_labeled(spec: &BlobSpec) -> Result<Blobs> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let centers: Vec<f32> = (0..spec.n_blobs * spec.dim).map(|_| rng.random_range(-10.0f32..=10.0)).collect();
    let noise = Normal::new(0.0, spec.blob_spread).expect("spread validated");
    let mut values = Vec::with_capacity(spec.n_items * spec.dim);
    let mut labels = Vec::with_capacity(spec.n_items);
    for i in 0..spec.n_items {
        let b = i % spec.n_blobs;
        labels.push(b as u32);
        for c in &centers[b * spec.dim..(b + 1) * spec.dim] {
            values.push((*c as f64 + noise.sample(&mut rng)) as f32);
        }
    }
    Ok(Blobs {
        embeddings: EmbeddingMatrix::from_raw(spec.n_items, spec.dim, values),
        centers,
        labels,
    })
}

pub fn gen_blobs(spec: &BlobSpec) -> Result<EmbeddingMatrix> {
    Ok(gen_blobs_labeled(spec)?.embeddings)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TimingOptions {
    /// Discarded runs before measuring.
    pub warmup: usize,
    /// Measured runs; the median is reported.
    pub repeats: usize,
}

impl Default for TimingOptions {
    fn default() -> Self {
        Self { warmup: 1, repeats: 3 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub method: Method,
    pub n_items: usize,
    pub dim: usize,
    pub k: usize,
    pub seed: u64,
    pub build_seconds: f64,
    pub total_sse: f64,
}

/// Median wall time of `opts.repeats` builds and the tree SSE.
pub fn time_build(x: &EmbeddingMatrix, cfg: &TreeBuildConfig, opts: TimingOptions) -> Result<(f64, f64)> {
    if opts.repeats == 0 {
        return Err(Error::InvalidConfig("repeats must be >= 1".into()));
    }
    for _ in 0..opts.warmup {
        build_tree_with_stats(x, cfg)?;
    }
    let mut secs = Vec::with_capacity(opts.repeats);
    let mut sse = 0.0;
    for _ in 0..opts.repeats {
        let t = Instant::now();
        let (_, stats) = build_tree_with_stats(x, cfg)?;
        secs.push(t.elapsed().as_secs_f64());
        sse = stats.total_sse;
    }
    Ok((median(&mut secs), sse))
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

pub fn time_builds(
    sizes: &[usize],
    methods: &[Method],
    spec: &BlobSpec,
    cfg: &TreeBuildConfig,
    opts: TimingOptions,
) -> Result<Vec<BenchRow>> {
    if sizes.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::InvalidConfig("bench sizes must be ascending".into()));
    }
    log::info!("bench workers: {}", rayon::current_num_threads());
    let mut rows = Vec::new();
    for &n in sizes {
        let cell = BlobSpec { n_items: n, n_blobs: spec.n_blobs.min(n), ..*spec };
        let x = gen_blobs(&cell)?;
        for &method in methods {
            let cfg = TreeBuildConfig { method, ..cfg.clone() };
            let (build_seconds, total_sse) = time_build(&x, &cfg, opts)?;
            rows.push(BenchRow {
                method,
                n_items: n,
                dim: cell.dim,
                k: cfg.k,
                seed: cfg.seed,
                build_seconds,
                total_sse,
            });
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MethodResult {
    pub seconds: f64,
    pub sse: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompareRow {
    pub n_items: usize,
    pub constrained: MethodResult,
    pub greedy: MethodResult,
    pub hybrid: MethodResult,
}

impl CompareRow {
    pub fn greedy_time_ratio(&self) -> f64 {
        self.greedy.seconds / self.constrained.seconds
    }

    pub fn hybrid_time_ratio(&self) -> f64 {
        self.hybrid.seconds / self.constrained.seconds
    }

    pub fn greedy_sse_ratio(&self) -> f64 {
        self.greedy.sse / self.constrained.sse
    }

    pub fn hybrid_sse_ratio(&self) -> f64 {
        self.hybrid.sse / self.constrained.sse
    }
}

/// Builds with all three methods on the same data and seed.
pub fn compare_methods(spec: &BlobSpec, cfg: &TreeBuildConfig, opts: TimingOptions) -> Result<CompareRow> {
    let x = gen_blobs(spec)?;
    log::info!("bench workers: {}", rayon::current_num_threads());
    let run = |method| -> Result<MethodResult> {
        let (seconds, sse) = time_build(&x, &TreeBuildConfig { method, ..cfg.clone() }, opts)?;
        Ok(MethodResult { seconds, sse })
    };
    Ok(CompareRow {
        n_items: spec.n_items,
        constrained: run(Method::Constrained)?,
        greedy: run(Method::Greedy)?,
        hybrid: run(Method::Hybrid)?,
    })
}
