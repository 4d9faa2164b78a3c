//! Reference oracles for the isdc test suites.
//!
//! Everything here works on a plain index-based DAG and recomputes what it
//! needs (path delays, feasibility, register cost) from first principles by
//! enumeration. Nothing calls into the scheduler.

use std::collections::VecDeque;

use rand::Rng;

/// Index-based DAG; operands always point at lower indices.
#[derive(Debug, Clone)]
pub struct Dag {
    pub delays: Vec<u64>,
    pub bits: Vec<u32>,
    pub operands: Vec<Vec<usize>>,
    pub clock_period_ps: u64,
}

impl Dag {
    /// Random DAG with `1..=max_nodes` nodes. Sources are primary inputs with
    /// zero delay; other nodes draw delays from `0..=max_delay`.
    pub fn random(
        rng: &mut impl Rng,
        max_nodes: usize,
        max_delay: u64,
        clock_period_ps: u64,
    ) -> Self {
        let n = rng.gen_range(1..=max_nodes);
        let mut operands = Vec::with_capacity(n);
        let mut delays = Vec::with_capacity(n);
        let mut bits = Vec::with_capacity(n);
        for i in 0..n {
            let k = if i == 0 || rng.gen_bool(0.15) {
                0
            } else {
                rng.gen_range(1..=2usize)
            };
            let ops: Vec<usize> = (0..k).map(|_| rng.gen_range(0..i)).collect();
            delays.push(if ops.is_empty() {
                0
            } else {
                rng.gen_range(0..=max_delay)
            });
            bits.push(rng.gen_range(1..=32));
            operands.push(ops);
        }
        Self {
            delays,
            bits,
            operands,
            clock_period_ps,
        }
    }

    pub fn len(&self) -> usize {
        self.delays.len()
    }

    pub fn is_empty(&self) -> bool {
        self.delays.is_empty()
    }

    pub fn name(i: usize) -> String {
        format!("v{i}")
    }

    pub fn consumers(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.len()];
        for (v, ops) in self.operands.iter().enumerate() {
            for &p in ops {
                out[p].push(v);
            }
        }
        out
    }

    /// Graph-file JSON. Nodes are written in reverse so file order differs
    /// from index order.
    pub fn to_json(&self) -> String {
        let nodes: Vec<serde_json::Value> = (0..self.len())
            .rev()
            .map(|i| {
                serde_json::json!({
                    "id": Self::name(i),
                    "op": if self.operands[i].is_empty() { "input" } else { "op" },
                    "bits": self.bits[i],
                    "delay_ps": self.delays[i],
                    "operands": self.operands[i].iter().map(|&p| Self::name(p)).collect::<Vec<_>>(),
                })
            })
            .collect();
        serde_json::json!({
            "name": "random",
            "clock_period_ps": self.clock_period_ps,
            "nodes": nodes,
        })
        .to_string()
    }
}

/// Longest `u -> v` path delay (sum of node delays, endpoints included) by
/// enumerating every path; -1 when there is none. The diagonal is the node's
/// own delay.
pub fn longest_paths(dag: &Dag) -> Vec<Vec<i64>> {
    let n = dag.len();
    let consumers = dag.consumers();
    let mut d = vec![vec![-1i64; n]; n];
    for u in 0..n {
        let mut stack = vec![(u, dag.delays[u] as i64)];
        while let Some((v, len)) = stack.pop() {
            if len > d[u][v] {
                d[u][v] = len;
            }
            for &c in &consumers[v] {
                stack.push((c, len + dag.delays[c] as i64));
            }
        }
    }
    d
}

/// Register bits of a stage assignment: each value is held from its stage to
/// the last stage that reads it.
pub fn register_bits(dag: &Dag, stages: &[i64]) -> u64 {
    let consumers = dag.consumers();
    (0..dag.len())
        .map(|v| {
            let last = consumers[v]
                .iter()
                .map(|&c| stages[c])
                .fold(stages[v], i64::max);
            dag.bits[v] as u64 * (last - stages[v]) as u64
        })
        .sum()
}

/// Minimum register bits over every stage assignment that keeps operands no
/// later than consumers and puts `ceil(D/T) - 1` stage boundaries between
/// every pair whose longest path `D` exceeds `T`. `None` when no assignment
/// is feasible.
///
/// Stages range over `0..=(2n - 1) * max_gap`: an optimum of a
/// difference-constraint system is attained at a vertex, whose coordinates
/// differ from the smallest one by at most the sum of the bounds along a
/// spanning tree of tight constraints over the `2n` stage and lifetime
/// variables. Sinks are placed at their earliest stage, which never costs
/// more since nothing depends on them.
pub fn min_register_bits(dag: &Dag) -> Option<u64> {
    let n = dag.len();
    let t = dag.clock_period_ps as i64;
    let d = longest_paths(dag);
    let gap = |u: usize, v: usize| {
        let x = d[u][v];
        if x > t {
            (x + t - 1) / t - 1
        } else {
            0
        }
    };
    if (0..n).any(|v| gap(v, v) > 0) {
        return None;
    }
    let gaps: Vec<Vec<i64>> = (0..n)
        .map(|u| (0..n).map(|v| gap(u, v)).collect())
        .collect();
    let max_gap = gaps.iter().flatten().copied().max().unwrap_or(0);
    let limit = (2 * n as i64 - 1).max(0) * max_gap;
    let consumers = dag.consumers();

    struct Search<'a> {
        dag: &'a Dag,
        consumers: &'a [Vec<usize>],
        gaps: Vec<Vec<i64>>,
        limit: i64,
        stages: Vec<i64>,
        best: u64,
    }

    impl Search<'_> {
        fn earliest(&self, v: usize) -> i64 {
            self.earliest_given(v, v)
        }

        // Lower bound on the stage of `v` from the first `assigned` nodes.
        fn earliest_given(&self, v: usize, assigned: usize) -> i64 {
            let mut lo = 0;
            for &p in &self.dag.operands[v] {
                if p < assigned {
                    lo = lo.max(self.stages[p]);
                }
            }
            for u in 0..assigned.min(v) {
                if self.gaps[u][v] > 0 {
                    lo = lo.max(self.stages[u] + self.gaps[u][v]);
                }
            }
            lo
        }

        // Cost already committed by values whose assigned readers are known,
        // plus the least each unassigned reader must still add.
        fn bound(&self, assigned: usize) -> u64 {
            (0..assigned)
                .map(|v| {
                    let mut last = self.stages[v];
                    for &c in &self.consumers[v] {
                        let s = if c < assigned {
                            self.stages[c]
                        } else {
                            self.earliest_given(c, assigned)
                        };
                        last = last.max(s);
                    }
                    self.dag.bits[v] as u64 * (last - self.stages[v]) as u64
                })
                .sum()
        }

        fn go(&mut self, v: usize) {
            if self.bound(v) >= self.best {
                return;
            }
            if v == self.dag.len() {
                self.best = register_bits(self.dag, &self.stages);
                return;
            }
            let lo = self.earliest(v);
            let hi = if self.consumers[v].is_empty() {
                lo
            } else {
                self.limit
            };
            for s in lo..=hi {
                self.stages[v] = s;
                self.go(v + 1);
            }
        }
    }

    let mut search = Search {
        dag,
        consumers: &consumers,
        gaps,
        limit,
        stages: vec![0; n],
        best: 0,
    };
    // Earliest-stage schedule as the starting incumbent.
    for v in 0..n {
        search.stages[v] = search.earliest(v);
    }
    if search.stages.iter().any(|&s| s > limit) {
        search.limit = *search.stages.iter().max().unwrap();
    }
    search.best = register_bits(dag, &search.stages) + 1;
    search.go(0);
    Some(search.best)
}

/// Checks the cone/window leaf properties against the whole graph:
/// every path from a primary input to a root crosses a leaf, and every leaf
/// lies on some input-to-root path that avoids all other leaves. Also
/// checks that removing any leaf breaks one of the two.
pub fn check_cone_properties(
    operands: &[Vec<usize>],
    nodes: &[usize],
    leaves: &[usize],
    roots: &[usize],
) -> Result<(), String> {
    let n = operands.len();
    let mut consumers = vec![Vec::new(); n];
    for (v, ops) in operands.iter().enumerate() {
        for &p in ops {
            consumers[p].push(v);
        }
    }
    let sources: Vec<usize> = (0..n).filter(|&v| operands[v].is_empty()).collect();
    if roots.is_empty() {
        return Err("no roots".into());
    }
    for x in leaves.iter().chain(roots) {
        if !nodes.contains(x) {
            return Err(format!("node {x} is a leaf or root outside the node set"));
        }
    }

    // Forward reachability from `starts`, never entering `blocked`.
    let reach = |starts: &[usize], blocked: &dyn Fn(usize) -> bool| {
        let mut seen = vec![false; n];
        let mut queue: VecDeque<usize> = starts.iter().copied().filter(|&s| !blocked(s)).collect();
        for &s in &queue {
            seen[s] = true;
        }
        while let Some(v) = queue.pop_front() {
            for &c in &consumers[v] {
                if !seen[c] && !blocked(c) {
                    seen[c] = true;
                    queue.push_back(c);
                }
            }
        }
        seen
    };

    let property_one = |leaf_set: &[usize]| {
        let seen = reach(&sources, &|v| leaf_set.contains(&v));
        roots.iter().all(|&r| !seen[r])
    };
    let on_clean_path = |l: usize, leaf_set: &[usize]| {
        let others = |v: usize| v != l && leaf_set.contains(&v);
        let from_pi = reach(&sources, &others);
        if !from_pi[l] {
            return false;
        }
        let to_root = reach(&[l], &others);
        roots.iter().any(|&r| to_root[r])
    };

    if !property_one(leaves) {
        return Err("a primary-input-to-root path avoids every leaf".into());
    }
    for &l in leaves {
        if !on_clean_path(l, leaves) {
            return Err(format!(
                "leaf {l} is not on an input-to-root path avoiding other leaves"
            ));
        }
        let without: Vec<usize> = leaves.iter().copied().filter(|&x| x != l).collect();
        if property_one(&without) {
            return Err(format!("leaf {l} is redundant"));
        }
    }
    Ok(())
}
