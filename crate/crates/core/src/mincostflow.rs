//! Exact capacity-constrained assignment of rows to columns by successive
//! shortest augmenting paths.
//!
//! The flow network is `source -> row (cap 1) -> column -> sink`, each
//! column carrying a mandatory sink arc of capacity `min_size` and an
//! optional one of capacity `max_size - min_size`. Mandatory arcs carry a
//! cost of `-M` with `M` larger than any assignment cost difference, so a
//! minimum-cost flow of value `n` saturates every mandatory slot first and
//! then minimizes the real cost.
//!
//! Rows enter one at a time. Each augmenting path starts at the new row,
//! alternates column -> (row already in that column) -> other column, and
//! ends at a column with a free slot. Row nodes have a single residual
//! in-arc, so Dijkstra only needs labels on the `k` columns and the sink;
//! a row's outgoing arcs are relaxed when its column is settled. Reduced
//! costs stay non-negative through column and sink potentials.

use crate::error::{Error, Result};
use crate::types::CapacityBounds;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransportInstance {
    pub n_rows: usize,
    pub n_cols: usize,
    /// Row-major `n_rows x n_cols` non-negative costs.
    pub costs: Vec<i64>,
    pub bounds: CapacityBounds,
}

impl TransportInstance {
    pub fn new(n_rows: usize, n_cols: usize, costs: Vec<i64>, bounds: CapacityBounds) -> Self {
        Self { n_rows, n_cols, costs, bounds }
    }

    pub fn from_rows(rows: &[Vec<i64>], bounds: CapacityBounds) -> Self {
        let n_cols = rows.first().map_or(0, Vec::len);
        let costs = rows.iter().flatten().copied().collect();
        Self { n_rows: rows.len(), n_cols, costs, bounds }
    }

    #[inline]
    pub fn cost(&self, row: usize, col: usize) -> i64 {
        self.costs[row * self.n_cols + col]
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransportSolution {
    pub assignment: Vec<u32>,
    pub total_cost: i64,
}

impl TransportSolution {
    pub fn loads(&self, n_cols: usize) -> Vec<usize> {
        let mut loads = vec![0; n_cols];
        for &c in &self.assignment {
            loads[c as usize] += 1;
        }
        loads
    }
}

const INF: i128 = i128::MAX / 4;
/// Bonus for filling a mandatory slot; exceeds any admissible total cost.
const MANDATORY_BONUS: i128 = 1 << 63;
/// Largest admissible `n_rows * max_cost`.
pub const COST_BUDGET: i64 = i64::MAX / 4;

/// Minimum-cost assignment of every row to one column with each column load
/// inside `bounds`. Ties resolve toward lower column index, then lower row
/// index, so equal inputs give equal outputs.
pub fn solve_balanced_transport(inst: &TransportInstance) -> Result<TransportSolution> {
    let n = inst.n_rows;
    let k = inst.n_cols;
    if inst.costs.len() != n * k {
        return Err(Error::DimensionMismatch {
            context: "transport cost matrix".into(),
            expected: n * k,
            actual: inst.costs.len(),
        });
    }
    if k == 0 {
        return if n == 0 {
            Ok(TransportSolution { assignment: Vec::new(), total_cost: 0 })
        } else {
            Err(Error::Infeasible("no columns for a non-empty instance".into()))
        };
    }
    inst.bounds.check_feasible(n, k)?;
    let mut max_cost = 0i64;
    for &c in &inst.costs {
        if c < 0 {
            return Err(Error::InvalidConfig(format!("negative transport cost {c}")));
        }
        max_cost = max_cost.max(c);
    }
    match max_cost.checked_mul(n.max(1) as i64) {
        Some(total) if total <= COST_BUDGET => {}
        _ => {
            return Err(Error::CostOverflow(format!(
                "{n} rows with costs up to {max_cost} exceed the 64-bit budget"
            )))
        }
    }

    let mut solver = Solver::new(inst);
    for row in 0..n {
        solver.insert(row);
    }
    let total_cost = solver
        .assign
        .iter()
        .enumerate()
        .map(|(i, &c)| inst.cost(i, c as usize))
        .sum();
    Ok(TransportSolution { assignment: solver.assign, total_cost })
}

struct Solver<'a> {
    inst: &'a TransportInstance,
    k: usize,
    min: usize,
    max: usize,
    assign: Vec<u32>,
    members: Vec<Vec<u32>>,
    slot: Vec<u32>,
    /// Column potentials followed by the sink potential.
    pi: Vec<i128>,
    dist: Vec<i128>,
    settled: Vec<bool>,
    /// For a column: (previous column, row moved from it) on the best path.
    pred: Vec<Option<(usize, u32)>>,
}

impl<'a> Solver<'a> {
    fn new(inst: &'a TransportInstance) -> Self {
        let k = inst.n_cols;
        let mut pi = vec![0i128; k + 1];
        pi[k] = -MANDATORY_BONUS;
        Self {
            inst,
            k,
            min: inst.bounds.min_size,
            max: inst.bounds.max_size,
            assign: vec![u32::MAX; inst.n_rows],
            members: vec![Vec::new(); k],
            slot: vec![0; inst.n_rows],
            pi,
            dist: vec![INF; k + 1],
            settled: vec![false; k + 1],
            pred: vec![None; k + 1],
        }
    }

    #[inline]
    fn reduced(&self, row: usize, col: usize) -> i128 {
        self.inst.cost(row, col) as i128 - self.pi[col]
    }

    fn sink_arc(&self, col: usize) -> Option<i128> {
        let load = self.members[col].len();
        if load >= self.max {
            None
        } else if load < self.min {
            Some(-MANDATORY_BONUS)
        } else {
            Some(0)
        }
    }

    fn insert(&mut self, row: usize) {
        let k = self.k;
        let sink = k;
        for j in 0..=k {
            self.dist[j] = INF;
            self.settled[j] = false;
            self.pred[j] = None;
        }
        for j in 0..k {
            self.dist[j] = self.reduced(row, j);
        }
        let mut sink_pred = usize::MAX;

        loop {
            // Lowest label, ties to the lower index; the sink has the highest.
            let mut best = usize::MAX;
            for v in 0..=k {
                if !self.settled[v]
                    && self.dist[v] < INF
                    && (best == usize::MAX || self.dist[v] < self.dist[best])
                {
                    best = v;
                }
            }
            debug_assert!(best != usize::MAX, "sink unreachable in a feasible instance");
            self.settled[best] = true;
            if best == sink {
                break;
            }
            let j = best;
            let dj = self.dist[j];
            if let Some(term) = self.sink_arc(j) {
                let cand = dj + term + self.pi[j] - self.pi[sink];
                if cand < self.dist[sink] {
                    self.dist[sink] = cand;
                    sink_pred = j;
                }
            }
            if self.dist[sink] <= dj {
                // Every remaining label is >= dj, the sink is final.
                self.settled[sink] = true;
                break;
            }
            self.relax_through(j);
        }

        let d_sink = self.dist[sink];
        for v in 0..=k {
            self.pi[v] += self.dist[v].min(d_sink);
        }

        // Shift rows backwards along the path, then place the new row.
        let mut col = sink_pred;
        while let Some((prev, moved)) = self.pred[col] {
            self.move_row(moved as usize, col);
            col = prev;
        }
        self.place(row, col);
    }

    /// Relaxes arcs `j -> row -> j'` for every row currently in column `j`.
    fn relax_through(&mut self, j: usize) {
        let k = self.k;
        let dj = self.dist[j];
        let members = std::mem::take(&mut self.members[j]);
        for &i in &members {
            let iu = i as usize;
            let base = dj - self.reduced(iu, j);
            for jp in 0..k {
                if jp == j || self.settled[jp] {
                    continue;
                }
                let cand = base + self.reduced(iu, jp);
                let better = cand < self.dist[jp]
                    || (cand == self.dist[jp]
                        && matches!(self.pred[jp], Some((pj, pi)) if pj == j && i < pi));
                if better {
                    self.dist[jp] = cand;
                    self.pred[jp] = Some((j, i));
                }
            }
        }
        self.members[j] = members;
    }

    fn place(&mut self, row: usize, col: usize) {
        self.assign[row] = col as u32;
        self.slot[row] = self.members[col].len() as u32;
        self.members[col].push(row as u32);
    }

    fn move_row(&mut self, row: usize, to: usize) {
        let from = self.assign[row] as usize;
        let s = self.slot[row] as usize;
        self.members[from].swap_remove(s);
        if let Some(&moved) = self.members[from].get(s) {
            self.slot[moved as usize] = s as u32;
        }
        self.place(row, to);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Exhaustive minimum over all feasible assignments.
    fn brute_force(inst: &TransportInstance) -> Option<i64> {
        let (n, k) = (inst.n_rows, inst.n_cols);
        let mut best: Option<i64> = None;
        let total = k.pow(n as u32);
        let mut assign = vec![0usize; n];
        for code in 0..total {
            let mut c = code;
            for a in assign.iter_mut() {
                *a = c % k;
                c /= k;
            }
            let mut loads = vec![0usize; k];
            for &a in &assign {
                loads[a] += 1;
            }
            if !loads.iter().all(|&l| inst.bounds.contains(l)) {
                continue;
            }
            let cost: i64 = assign.iter().enumerate().map(|(i, &a)| inst.cost(i, a)).sum();
            best = Some(best.map_or(cost, |b: i64| b.min(cost)));
        }
        best
    }

    #[test]
    fn single_cell() {
        let inst = TransportInstance::from_rows(&[vec![5]], CapacityBounds::new(1, 1));
        let sol = solve_balanced_transport(&inst).unwrap();
        assert_eq!(sol.assignment, vec![0]);
        assert_eq!(sol.total_cost, 5);
    }

    #[test]
    fn four_row_line_instance() {
        let inst = TransportInstance::from_rows(
            &[vec![36, 16], vec![16, 36], vec![121, 1], vec![400, 100]],
            CapacityBounds::new(2, 2),
        );
        assert_eq!(brute_force(&inst), Some(153));
        let sol = solve_balanced_transport(&inst).unwrap();
        assert_eq!(sol.assignment, vec![0, 0, 1, 1]);
        assert_eq!(sol.total_cost, 153);
    }

    #[test]
    fn unconstrained_takes_row_minimum() {
        let rows = vec![vec![3, 1, 2], vec![0, 5, 5], vec![9, 9, 1], vec![4, 2, 8]];
        let inst = TransportInstance::from_rows(&rows, CapacityBounds::unconstrained(4));
        let sol = solve_balanced_transport(&inst).unwrap();
        assert_eq!(sol.assignment, vec![1, 0, 2, 1]);
        assert_eq!(sol.total_cost, 4);
    }

    #[test]
    fn infeasible_bounds_name_the_inequality() {
        let rows = vec![vec![1, 1]; 5];
        let e = solve_balanced_transport(&TransportInstance::from_rows(
            &rows,
            CapacityBounds::new(0, 2),
        ))
        .unwrap_err();
        assert!(e.to_string().contains("k*max_size"), "{e}");
        let e = solve_balanced_transport(&TransportInstance::from_rows(
            &rows,
            CapacityBounds::new(3, 4),
        ))
        .unwrap_err();
        assert!(e.to_string().contains("k*min_size"), "{e}");
    }

    #[test]
    fn overflow_guard() {
        let rows = vec![vec![i64::MAX / 2, 0]; 4];
        let e = solve_balanced_transport(&TransportInstance::from_rows(
            &rows,
            CapacityBounds::new(2, 2),
        ))
        .unwrap_err();
        assert!(matches!(e, Error::CostOverflow(_)));
    }

    #[test]
    fn mandatory_minimum_forces_expensive_column() {
        // Every row prefers column 0 but column 2 must take at least two.
        let rows = vec![vec![0, 50, 100]; 6];
        let inst = TransportInstance::from_rows(&rows, CapacityBounds::new(2, 2));
        let sol = solve_balanced_transport(&inst).unwrap();
        assert_eq!(sol.loads(3), vec![2, 2, 2]);
        assert_eq!(sol.total_cost, 300);
    }

    #[test]
    fn matches_brute_force_on_fixed_random_instances() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let k = rng.random_range(1..=3usize);
            let n = rng.random_range(1..=8usize);
            let min = rng.random_range(0..=n / k);
            let max = rng.random_range(n.div_ceil(k).max(min)..=n);
            let costs = (0..n * k).map(|_| rng.random_range(0..1000)).collect();
            let inst = TransportInstance::new(n, k, costs, CapacityBounds::new(min, max));
            let sol = solve_balanced_transport(&inst).unwrap();
            assert_eq!(Some(sol.total_cost), brute_force(&inst), "{inst:?}");
            assert!(sol.loads(k).iter().all(|&l| inst.bounds.contains(l)));
        }
    }
}
