//! Recall@k, Hit@k and NDCG@k with binary relevance, averaged over users.

use std::collections::HashSet;
use std::fmt;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Metric {
    Recall,
    Hit,
    Ndcg,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::Recall, Metric::Hit, Metric::Ndcg];

    pub fn as_str(&self) -> &'static str {
        match self {
            Metric::Recall => "recall",
            Metric::Hit => "hit",
            Metric::Ndcg => "ndcg",
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

pub const DEFAULT_CUTOFFS: [usize; 2] = [20, 50];

fn check(relevant: &HashSet<u32>, k: usize) -> Result<()> {
    if relevant.is_empty() {
        return Err(Error::EmptyRelevant("metric input".into()));
    }
    if k == 0 {
        return Err(Error::InvalidConfig("cutoff must be >= 1".into()));
    }
    Ok(())
}

/// Distinct relevant items in the first `k` positions, with their 0-based ranks.
fn hits(recommended: &[u32], relevant: &HashSet<u32>, k: usize) -> Vec<usize> {
    let mut seen = HashSet::new();
    recommended
        .iter()
        .take(k)
        .enumerate()
        .filter(|(_, it)| relevant.contains(it) && seen.insert(**it))
        .map(|(r, _)| r)
        .collect()
}

pub fn recall_at_k(recommended: &[u32], relevant: &HashSet<u32>, k: usize) -> Result<f64> {
    check(relevant, k)?;
    Ok(hits(recommended, relevant, k).len() as f64 / relevant.len() as f64)
}

pub fn hit_at_k(recommended: &[u32], relevant: &HashSet<u32>, k: usize) -> Result<f64> {
    check(relevant, k)?;
    Ok(if hits(recommended, relevant, k).is_empty() { 0.0 } else { 1.0 })
}

pub fn ndcg_at_k(recommended: &[u32], relevant: &HashSet<u32>, k: usize) -> Result<f64> {
    check(relevant, k)?;
    let dcg: f64 = hits(recommended, relevant, k).iter().map(|&r| discount(r + 1)).sum();
    let idcg: f64 = (1..=relevant.len().min(k)).map(discount).sum();
    Ok(dcg / idcg)
}

/// `1 / log2(rank + 1)` for a 1-based rank.
fn discount(rank: usize) -> f64 {
    1.0 / ((rank + 1) as f64).log2()
}

pub fn metric_at_k(m: Metric, recommended: &[u32], relevant: &HashSet<u32>, k: usize) -> Result<f64> {
    match m {
        Metric::Recall => recall_at_k(recommended, relevant, k),
        Metric::Hit => hit_at_k(recommended, relevant, k),
        Metric::Ndcg => ndcg_at_k(recommended, relevant, k),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UserRun {
    pub user: String,
    pub recommended: Vec<u32>,
    pub relevant: HashSet<u32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    /// `(metric, cutoff, mean)` ordered by metric then ascending cutoff.
    pub entries: Vec<(Metric, usize, f64)>,
    pub n_users: usize,
}

impl EvalReport {
    pub fn get(&self, metric: Metric, cutoff: usize) -> Option<f64> {
        self.entries.iter().find(|e| e.0 == metric && e.1 == cutoff).map(|e| e.2)
    }
}

/// Unweighted mean over users of every metric at every cutoff.
/// Errors name the first offending user.
pub fn evaluate_run(users: &[UserRun], cutoffs: &[usize]) -> Result<EvalReport> {
    if users.is_empty() {
        return Err(Error::InvalidConfig("evaluation needs at least one user".into()));
    }
    let mut cutoffs = cutoffs.to_vec();
    cutoffs.sort_unstable();
    cutoffs.dedup();
    let mut entries = Vec::new();
    for m in Metric::ALL {
        for &k in &cutoffs {
            let mut values = users
                .iter()
                .map(|u| {
                    metric_at_k(m, &u.recommended, &u.relevant, k).map_err(|e| match e {
                        Error::EmptyRelevant(_) => Error::EmptyRelevant(format!("user {}", u.user)),
                        other => other,
                    })
                })
                .collect::<Result<Vec<f64>>>()?;
            // Fixed summation order keeps the mean independent of user order.
            values.sort_by(f64::total_cmp);
            entries.push((m, k, values.iter().sum::<f64>() / users.len() as f64));
        }
    }
    Ok(EvalReport { entries, n_users: users.len() })
}
