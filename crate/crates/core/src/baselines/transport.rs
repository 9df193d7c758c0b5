//! Exact discrete optimal transport.
//!
//! Two solvers: a dense Hungarian assignment (square or n ≤ m costs) and a
//! successive-shortest-path min-cost flow over integer masses, used for
//! uniform-marginal problems of unequal size after scaling both marginals to
//! a common integer total.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use ndarray::ArrayView2;

use crate::error::{Error, Result};

/// Minimum-cost assignment of every row to a distinct column (rows ≤ cols).
/// Returns the column per row and the total cost.
pub fn hungarian(cost: ArrayView2<'_, f64>) -> Result<(Vec<usize>, f64)> {
    let (n, m) = cost.dim();
    if n > m {
        return Err(Error::invalid(format!("assignment needs rows <= cols, got {n}x{m}")));
    }
    if cost.iter().any(|c| !c.is_finite()) {
        return Err(Error::invalid("non-finite assignment cost"));
    }
    if n == 0 {
        return Ok((Vec::new(), 0.0));
    }
    // 1-based potentials; column 0 is the virtual start.
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; m + 1];
    let mut owner = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = cost[[i0 - 1, j - 1]] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0usize; n];
    for j in 1..=m {
        if owner[j] > 0 {
            assignment[owner[j] - 1] = j - 1;
        }
    }
    let total = assignment
        .iter()
        .enumerate()
        .map(|(i, &j)| cost[[i, j]])
        .sum();
    Ok((assignment, total))
}

#[derive(Debug, Clone)]
struct Edge {
    to: usize,
    rev: usize,
    cap: u64,
    cost: f64,
}

struct FlowGraph {
    adj: Vec<Vec<Edge>>,
}

#[derive(PartialEq)]
struct HeapItem(f64, usize);

impl Eq for HeapItem {}

impl PartialOrd for HeapItem {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for HeapItem {
    // min-heap on distance
    fn cmp(&self, other: &Self) -> Ordering {
        other.0.total_cmp(&self.0).then_with(|| other.1.cmp(&self.1))
    }
}

impl FlowGraph {
    fn new(nodes: usize) -> Self {
        Self {
            adj: vec![Vec::new(); nodes],
        }
    }

    fn add_edge(&mut self, from: usize, to: usize, cap: u64, cost: f64) {
        let rf = self.adj[to].len();
        let rt = self.adj[from].len();
        self.adj[from].push(Edge { to, rev: rf, cap, cost });
        self.adj[to].push(Edge {
            to: from,
            rev: rt,
            cap: 0,
            cost: -cost,
        });
    }

    /// Sends `need` units from `s` to `t` at minimum cost. Initial edge
    /// costs must be nonnegative.
    fn min_cost_flow(&mut self, s: usize, t: usize, need: u64) -> Result<f64> {
        let nodes = self.adj.len();
        let mut potential = vec![0.0f64; nodes];
        let mut dist = vec![f64::INFINITY; nodes];
        let mut prev: Vec<(usize, usize)> = vec![(usize::MAX, 0); nodes];
        let mut flow = 0u64;
        let mut total = 0.0;
        while flow < need {
            dist.fill(f64::INFINITY);
            dist[s] = 0.0;
            let mut heap = BinaryHeap::new();
            heap.push(HeapItem(0.0, s));
            while let Some(HeapItem(d, v)) = heap.pop() {
                if d > dist[v] {
                    continue;
                }
                if v == t {
                    break;
                }
                for (k, e) in self.adj[v].iter().enumerate() {
                    if e.cap == 0 {
                        continue;
                    }
                    // reduced costs are nonnegative up to rounding
                    let reduced = (e.cost + potential[v] - potential[e.to]).max(0.0);
                    let nd = d + reduced;
                    if nd < dist[e.to] {
                        dist[e.to] = nd;
                        prev[e.to] = (v, k);
                        heap.push(HeapItem(nd, e.to));
                    }
                }
            }
            if !dist[t].is_finite() {
                return Err(Error::Degenerate(format!(
                    "transport infeasible after {flow} of {need} units"
                )));
            }
            // nodes not settled before t are capped at dist[t]; this keeps
            // reduced costs nonnegative
            let reach = dist[t];
            for (p, d) in potential.iter_mut().zip(&dist) {
                *p += d.min(reach);
            }
            let mut push = need - flow;
            let mut v = t;
            while v != s {
                let (u, k) = prev[v];
                push = push.min(self.adj[u][k].cap);
                v = u;
            }
            let mut v = t;
            while v != s {
                let (u, k) = prev[v];
                let rev = self.adj[u][k].rev;
                self.adj[u][k].cap -= push;
                self.adj[v][rev].cap += push;
                total += push as f64 * self.adj[u][k].cost;
                v = u;
            }
            flow += push;
        }
        Ok(total)
    }
}

/// Minimum of `Σ_ij flow_ij · cost_ij` over integer flows with row sums
/// `supply` and column sums `demand`. Totals must agree and costs must be
/// finite and nonnegative.
pub fn exact_transport(supply: &[u64], demand: &[u64], cost: ArrayView2<'_, f64>) -> Result<f64> {
    let (n, m) = cost.dim();
    if supply.len() != n || demand.len() != m {
        return Err(Error::shape("transport", "marginals do not match cost matrix"));
    }
    if cost.iter().any(|c| !(c.is_finite() && *c >= 0.0)) {
        return Err(Error::invalid("transport costs must be finite and nonnegative"));
    }
    let total: u64 = supply.iter().sum();
    if total != demand.iter().sum::<u64>() {
        return Err(Error::invalid("supply and demand totals differ"));
    }
    if m <= FEW_COLUMNS {
        if let Some(total) = column_transport(supply, demand, cost) {
            return Ok(total);
        }
    }
    flow_transport(supply, demand, cost, total)
}

fn flow_transport(supply: &[u64], demand: &[u64], cost: ArrayView2<'_, f64>, total: u64) -> Result<f64> {
    let (n, m) = cost.dim();
    let (s, t) = (n + m, n + m + 1);
    let mut g = FlowGraph::new(n + m + 2);
    for (i, &a) in supply.iter().enumerate() {
        if a > 0 {
            g.add_edge(s, i, a, 0.0);
        }
    }
    for (j, &b) in demand.iter().enumerate() {
        if b > 0 {
            g.add_edge(n + j, t, b, 0.0);
        }
    }
    for i in (0..n).filter(|&i| supply[i] > 0) {
        for j in (0..m).filter(|&j| demand[j] > 0) {
            g.add_edge(i, n + j, total, cost[[i, j]]);
        }
    }
    g.min_cost_flow(s, t, total)
}

/// Column counts up to which [`column_transport`] is tried.
const FEW_COLUMNS: usize = 32;

/// Order-preserving integer key for finite floats.
fn order_key(x: f64) -> i64 {
    let b = x.to_bits() as i64;
    b ^ ((b >> 63) as u64 >> 1) as i64
}

#[derive(Clone, Copy)]
enum Step {
    /// Fresh mass from row `i`.
    Start(usize),
    /// Mass of row `j` moved off column `from`.
    Via(usize, usize),
}

/// Successive shortest paths specialised to few columns. Every augmenting
/// path enters the columns once from a row with spare supply and then hops
/// between columns by re-routing rows that already ship to the first
/// column, so shortest paths only need Bellman-Ford over the columns. The
/// cheapest entry per column and the cheapest re-route per column pair are
/// kept in ordered sets. Returns `None` if rounding produces an
/// inconsistent path; the caller then falls back to the general solver.
fn column_transport(supply: &[u64], demand: &[u64], cost: ArrayView2<'_, f64>) -> Option<f64> {
    use std::collections::BTreeSet;
    let (n, m) = cost.dim();
    let mut spare = supply.to_vec();
    let mut room = demand.to_vec();
    let mut flow = vec![0u64; n * m];
    // entry[c]: rows with spare supply by cost into c
    let entry: Vec<Vec<usize>> = (0..m)
        .map(|c| {
            let mut rows: Vec<usize> = (0..n).filter(|&i| spare[i] > 0).collect();
            rows.sort_by(|&a, &b| cost[[a, c]].total_cmp(&cost[[b, c]]).then(a.cmp(&b)));
            rows
        })
        .collect();
    let mut entry_pos = vec![0usize; m];
    // hop[a * m + b]: rows shipping to a, keyed by the cost of moving to b
    let mut hop: Vec<BTreeSet<(i64, usize)>> = vec![BTreeSet::new(); m * m];
    let hop_key = |j: usize, a: usize, b: usize| order_key(cost[[j, b]] - cost[[j, a]]);
    let mut remaining: u64 = supply.iter().sum();
    let mut dist = vec![f64::INFINITY; m];
    let mut pred = vec![Step::Start(0); m];
    while remaining > 0 {
        dist.fill(f64::INFINITY);
        for c in 0..m {
            while entry_pos[c] < entry[c].len() && spare[entry[c][entry_pos[c]]] == 0 {
                entry_pos[c] += 1;
            }
            if let Some(&i) = entry[c].get(entry_pos[c]) {
                dist[c] = cost[[i, c]];
                pred[c] = Step::Start(i);
            }
        }
        for _ in 0..m {
            let mut changed = false;
            for a in 0..m {
                if !dist[a].is_finite() {
                    continue;
                }
                for b in (0..m).filter(|&b| b != a) {
                    if let Some(&(_, j)) = hop[a * m + b].first() {
                        let nd = dist[a] + (cost[[j, b]] - cost[[j, a]]);
                        if nd < dist[b] {
                            dist[b] = nd;
                            pred[b] = Step::Via(j, a);
                            changed = true;
                        }
                    }
                }
            }
            if !changed {
                break;
            }
        }
        let end = (0..m)
            .filter(|&c| room[c] > 0 && dist[c].is_finite())
            .min_by(|&a, &b| dist[a].total_cmp(&dist[b]))?;
        // walk back to the start, collecting (column, step)
        let mut path = Vec::new();
        let mut c = end;
        loop {
            path.push((c, pred[c]));
            match pred[c] {
                Step::Start(_) => break,
                Step::Via(_, a) => c = a,
            }
            if path.len() > m {
                return None;
            }
        }
        let mut push = room[end].min(remaining);
        for &(_, step) in &path {
            push = push.min(match step {
                Step::Start(i) => spare[i],
                Step::Via(j, a) => flow[j * m + a],
            });
        }
        if push == 0 {
            return None;
        }
        let add = |flow: &mut Vec<u64>, hop: &mut Vec<BTreeSet<(i64, usize)>>, j: usize, c: usize, delta: i64| {
            let before = flow[j * m + c];
            let after = (before as i64 + delta) as u64;
            flow[j * m + c] = after;
            if before == 0 && after > 0 {
                for b in (0..m).filter(|&b| b != c) {
                    hop[c * m + b].insert((hop_key(j, c, b), j));
                }
            } else if before > 0 && after == 0 {
                for b in (0..m).filter(|&b| b != c) {
                    hop[c * m + b].remove(&(hop_key(j, c, b), j));
                }
            }
        };
        for &(c, step) in &path {
            match step {
                Step::Start(i) => {
                    spare[i] -= push;
                    add(&mut flow, &mut hop, i, c, push as i64);
                }
                Step::Via(j, a) => {
                    add(&mut flow, &mut hop, j, a, -(push as i64));
                    add(&mut flow, &mut hop, j, c, push as i64);
                }
            }
        }
        room[end] -= push;
        remaining -= push;
    }
    let mut total = 0.0;
    for i in 0..n {
        for c in 0..m {
            let f = flow[i * m + c];
            if f > 0 {
                total += f as f64 * cost[[i, c]];
            }
        }
    }
    Some(total)
}

pub(crate) fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

pub(crate) fn lcm(a: u64, b: u64) -> u64 {
    a / gcd(a, b) * b
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute_force(cost: &Array2<f64>) -> f64 {
        fn rec(cost: &Array2<f64>, row: usize, used: &mut Vec<bool>, acc: f64, best: &mut f64) {
            let n = cost.nrows();
            if row == n {
                *best = best.min(acc);
                return;
            }
            for j in 0..n {
                if !used[j] {
                    used[j] = true;
                    rec(cost, row + 1, used, acc + cost[[row, j]], best);
                    used[j] = false;
                }
            }
        }
        let mut best = f64::INFINITY;
        rec(cost, 0, &mut vec![false; cost.nrows()], 0.0, &mut best);
        best
    }

    #[test]
    fn hungarian_and_flow_match_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let n = rng.random_range(1..=6);
            let cost = Array2::from_shape_fn((n, n), |_| rng.random::<f64>());
            let oracle = brute_force(&cost);
            let (assign, h) = hungarian(cost.view()).unwrap();
            let mut cols = assign.clone();
            cols.sort_unstable();
            assert_eq!(cols, (0..n).collect::<Vec<_>>());
            assert!((h - oracle).abs() < 1e-10, "{h} vs {oracle}");
            let f = exact_transport(&vec![1; n], &vec![1; n], cost.view()).unwrap();
            assert!((f - oracle).abs() < 1e-10, "{f} vs {oracle}");
        }
    }

    #[test]
    fn column_solver_matches_general_flow() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..300 {
            let n = rng.random_range(1..30);
            let m = rng.random_range(1..6);
            let cost = Array2::from_shape_fn((n, m), |_| rng.random::<f64>());
            let mut supply: Vec<u64> = (0..n).map(|_| rng.random_range(0..5)).collect();
            supply[0] += 1;
            let total: u64 = supply.iter().sum();
            let mut demand = vec![0u64; m];
            for _ in 0..total {
                demand[rng.random_range(0..m)] += 1;
            }
            let a = column_transport(&supply, &demand, cost.view()).unwrap();
            let b = flow_transport(&supply, &demand, cost.view(), total).unwrap();
            assert!((a - b).abs() < 1e-10, "{a} vs {b}");
        }
    }

    #[test]
    fn flow_splits_mass() {
        // one source with 2 units, two sinks with 1 unit each
        let cost = array![[1.0, 3.0]];
        assert_eq!(exact_transport(&[2], &[1, 1], cost.view()).unwrap(), 4.0);
        let cost = array![[0.0, 5.0], [5.0, 0.0], [1.0, 2.0]];
        assert_eq!(exact_transport(&[1, 1, 1], &[2, 1], cost.view()).unwrap(), 1.0);
        assert!(exact_transport(&[1], &[2], array![[1.0]].view()).is_err());
    }

    #[test]
    fn rectangular_assignment() {
        let cost = array![[4.0, 1.0, 3.0], [2.0, 0.0, 5.0]];
        let (a, c) = hungarian(cost.view()).unwrap();
        assert_eq!(c, 3.0);
        assert_eq!(a, vec![1, 0]);
        assert!(hungarian(cost.t()).is_err());
    }

    #[test]
    fn lcm_gcd() {
        assert_eq!(lcm(400, 2000), 2000);
        assert_eq!(lcm(6, 4), 12);
        assert_eq!(gcd(7, 0), 7);
    }
}
