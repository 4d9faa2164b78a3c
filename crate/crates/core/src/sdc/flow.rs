//! Exact solver for linear programs over difference constraints.
//!
//! Minimizes `sum(cost[i] * x[i])` subject to `x[i] - x[j] <= b` by solving
//! the dual, an uncapacitated min-cost flow in which every constraint is an
//! arc `i -> j` of cost `b` and variable `i` must receive a net inflow of
//! `cost[i]`. Successive shortest paths with Dijkstra over reduced costs find
//! the optimal flow; the final node potentials, negated, are an optimal
//! integral primal solution by complementary slackness.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

const INF: i64 = i64::MAX / 4;

#[derive(Debug, Clone, Copy)]
pub struct Row {
    pub lhs: usize,
    pub rhs: usize,
    pub bound: i64,
}

#[derive(Debug, PartialEq, Eq)]
pub enum FlowError {
    /// The constraints contain a negative cycle; indices into the input rows.
    NegativeCycle(Vec<usize>),
    /// The objective is unbounded below over the feasible set.
    Unbounded,
}

struct Arc {
    to: usize,
    cost: i64,
    // Residual capacity. Forward arcs are uncapacitated.
    cap: i64,
}

struct Network {
    arcs: Vec<Arc>,
    adj: Vec<Vec<usize>>,
}

impl Network {
    fn add(&mut self, from: usize, to: usize, cost: i64) {
        let id = self.arcs.len();
        self.arcs.push(Arc { to, cost, cap: INF });
        self.arcs.push(Arc {
            to: from,
            cost: -cost,
            cap: 0,
        });
        self.adj[from].push(id);
        self.adj[to].push(id + 1);
    }
}

/// Minimizes `cost . x` over `rows`. `cost` must sum to zero, which makes the
/// objective invariant under a common shift of all variables.
pub fn solve(num_vars: usize, rows: &[Row], cost: &[i64]) -> Result<Vec<i64>, FlowError> {
    assert_eq!(cost.len(), num_vars);
    debug_assert_eq!(cost.iter().sum::<i64>(), 0);

    // Parallel constraints: only the tightest matters.
    let mut order: Vec<usize> = (0..rows.len()).collect();
    order.sort_by_key(|&k| (rows[k].lhs, rows[k].rhs, rows[k].bound));
    order.dedup_by_key(|k| (rows[*k].lhs, rows[*k].rhs));

    let mut potential = initial_potentials(num_vars, rows, &order)?;

    let mut net = Network {
        arcs: Vec::with_capacity(order.len() * 2),
        adj: vec![Vec::new(); num_vars],
    };
    for &k in &order {
        net.add(rows[k].lhs, rows[k].rhs, rows[k].bound);
    }

    // Positive excess is supply.
    let mut excess: Vec<i64> = cost.iter().map(|&c| -c).collect();
    let mut dist = vec![INF; num_vars];
    let mut via = vec![usize::MAX; num_vars];
    let mut done = vec![false; num_vars];
    let mut heap = BinaryHeap::new();

    while excess.iter().any(|&e| e > 0) {
        dist.fill(INF);
        via.fill(usize::MAX);
        done.fill(false);
        heap.clear();
        for v in 0..num_vars {
            if excess[v] > 0 {
                dist[v] = 0;
                heap.push(Reverse((0i64, v)));
            }
        }
        let mut sink = None;
        while let Some(Reverse((du, u))) = heap.pop() {
            if done[u] || du > dist[u] {
                continue;
            }
            done[u] = true;
            if excess[u] < 0 {
                sink = Some(u);
                break;
            }
            for &a in &net.adj[u] {
                let arc = &net.arcs[a];
                if arc.cap == 0 {
                    continue;
                }
                let reduced = arc.cost + potential[u] - potential[arc.to];
                debug_assert!(reduced >= 0);
                let nd = du + reduced;
                if nd < dist[arc.to] {
                    dist[arc.to] = nd;
                    via[arc.to] = a;
                    heap.push(Reverse((nd, arc.to)));
                }
            }
        }
        let Some(t) = sink else {
            return Err(FlowError::Unbounded);
        };
        let dt = dist[t];
        for v in 0..num_vars {
            potential[v] += dist[v].min(dt);
        }

        // Walk back to the supplying node and find the bottleneck.
        let mut amount = -excess[t];
        let mut v = t;
        while via[v] != usize::MAX {
            let a = via[v];
            amount = amount.min(net.arcs[a].cap);
            v = net.arcs[a ^ 1].to;
        }
        let s = v;
        amount = amount.min(excess[s]);
        debug_assert!(amount > 0);

        let mut v = t;
        while via[v] != usize::MAX {
            let a = via[v];
            if net.arcs[a].cap != INF {
                net.arcs[a].cap -= amount;
            }
            if net.arcs[a ^ 1].cap != INF {
                net.arcs[a ^ 1].cap += amount;
            }
            v = net.arcs[a ^ 1].to;
        }
        excess[s] -= amount;
        excess[t] += amount;
    }

    Ok(potential.into_iter().map(|p| -p).collect())
}

// Bellman-Ford from a virtual source connected to every variable with cost 0.
// The distances are valid potentials for the flow network (all reduced costs
// non-negative). A relaxation in round `num_vars` means a negative cycle.
fn initial_potentials(
    num_vars: usize,
    rows: &[Row],
    active: &[usize],
) -> Result<Vec<i64>, FlowError> {
    let mut dist = vec![0i64; num_vars];
    let mut pred: Vec<Option<usize>> = vec![None; num_vars];
    let mut last_relaxed = None;
    for _ in 0..=num_vars {
        last_relaxed = None;
        for &k in active {
            let r = rows[k];
            let nd = dist[r.lhs] + r.bound;
            if nd < dist[r.rhs] {
                dist[r.rhs] = nd;
                pred[r.rhs] = Some(k);
                last_relaxed = Some(r.rhs);
            }
        }
        if last_relaxed.is_none() {
            return Ok(dist);
        }
    }

    // Step back far enough to land on the cycle, then collect it.
    let mut v = last_relaxed.expect("relaxed in the final round");
    for _ in 0..num_vars {
        v = rows[pred[v].expect("relaxed nodes have predecessors")].lhs;
    }
    let start = v;
    let mut cycle = Vec::new();
    loop {
        let k = pred[v].expect("cycle nodes have predecessors");
        cycle.push(k);
        v = rows[k].lhs;
        if v == start {
            break;
        }
    }
    cycle.reverse();
    Err(FlowError::NegativeCycle(cycle))
}
