//! All-pairs critical-path delay estimates.
//!
//! `DelayMatrix[u][v]` holds the estimated delay of the longest combinational
//! path from `u` to `v` in picoseconds, with [`UNCONNECTED`] for pairs that
//! have no directed path. The diagonal holds each node's own delay. Before any
//! feedback the entries are exact longest-path sums; measured subgraph delays
//! only ever lower them.

use std::fmt::Write as _;

use crate::extract::Subgraph;
use crate::graph::{Graph, NodeId};

/// Marker for a pair with no directed path.
pub const UNCONNECTED: i64 = -1;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DelayMatrix {
    n: usize,
    d: Vec<i64>,
}

/// A pair that must be split across stages.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TimingPair {
    pub from: NodeId,
    pub to: NodeId,
    /// Minimum number of stage boundaries between `from` and `to`.
    pub gap: i64,
}

impl DelayMatrix {
    /// Exact longest-path delays of `g`.
    pub fn init(g: &Graph) -> Self {
        let n = g.len();
        let mut m = Self {
            n,
            d: vec![UNCONNECTED; n * n],
        };
        for v in g.ids() {
            m.set(v, v, g.delay(v) as i64);
        }
        // One DP per source over topological order.
        for &u in g.topo_order() {
            for &v in &g.topo_order()[g.topo_position(u) + 1..] {
                let best = g
                    .operands(v)
                    .iter()
                    .map(|&p| m.get(u, p))
                    .filter(|&x| x != UNCONNECTED)
                    .max();
                if let Some(best) = best {
                    m.set(u, v, best + g.delay(v) as i64);
                }
            }
        }
        m
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    #[inline]
    pub fn get(&self, u: NodeId, v: NodeId) -> i64 {
        self.d[u.0 * self.n + v.0]
    }

    #[inline]
    pub fn set(&mut self, u: NodeId, v: NodeId, value: i64) {
        self.d[u.0 * self.n + v.0] = value;
    }

    pub fn is_connected(&self, u: NodeId, v: NodeId) -> bool {
        self.get(u, v) != UNCONNECTED
    }

    /// Folds measured subgraph delays into the matrix: every connected pair
    /// inside a subgraph whose estimate exceeds the measured delay is lowered
    /// to it.
    pub fn update_with_feedback<'a, I>(&mut self, evaluated: I)
    where
        I: IntoIterator<Item = (&'a Subgraph, u64)>,
    {
        for (sg, delay) in evaluated {
            let delay = delay as i64;
            for &u in &sg.nodes {
                for &v in &sg.nodes {
                    let cur = self.get(u, v);
                    if cur != UNCONNECTED && cur > delay {
                        self.set(u, v, delay);
                    }
                }
            }
        }
    }

    /// One forward and one reverse sweep recomputing path delays from the
    /// (possibly lowered) entries, keeping a recomputed value only when it is
    /// smaller than the current one or the pair was unset.
    pub fn propagate(&mut self, g: &Graph) {
        let n = self.n;
        let mut cand = vec![UNCONNECTED; n];

        for &v in g.topo_order() {
            cand.fill(UNCONNECTED);
            let own = self.get(v, v);
            for &p in g.operands(v) {
                for u in 0..n {
                    let through = self.d[u * n + p.0];
                    if through != UNCONNECTED && cand[u] < through + own {
                        cand[u] = through + own;
                    }
                }
            }
            for (u, &c) in cand.iter().enumerate() {
                if c == UNCONNECTED {
                    continue;
                }
                let cur = &mut self.d[u * n + v.0];
                if *cur > c || *cur == UNCONNECTED {
                    *cur = c;
                }
            }
        }

        for &u in g.topo_order().iter().rev() {
            cand.fill(UNCONNECTED);
            let own = self.get(u, u);
            for use_ in g.uses(u) {
                let c = use_.consumer.0;
                for v in 0..n {
                    let through = self.d[c * n + v];
                    if through != UNCONNECTED && cand[v] < through + own {
                        cand[v] = through + own;
                    }
                }
            }
            for (v, &c) in cand.iter().enumerate() {
                if c == UNCONNECTED {
                    continue;
                }
                let cur = &mut self.d[u.0 * n + v];
                if *cur > c || *cur == UNCONNECTED {
                    *cur = c;
                }
            }
        }
    }

    /// Pairs whose delay exceeds the clock period, with the stage gap they
    /// require: `ceil(d / t_clk) - 1`.
    pub fn timing_pairs(&self, t_clk: u64) -> Vec<TimingPair> {
        let t = t_clk as i64;
        let mut out = Vec::new();
        for u in 0..self.n {
            for v in 0..self.n {
                let d = self.d[u * self.n + v];
                if d > t {
                    out.push(TimingPair {
                        from: NodeId(u),
                        to: NodeId(v),
                        gap: required_gap(d, t),
                    });
                }
            }
        }
        out
    }

    /// CSV dump with rows and columns in topological order.
    pub fn to_csv(&self, g: &Graph) -> String {
        let order = g.topo_order();
        let mut out = String::from("node");
        for &v in order {
            write!(out, ",{}", g.name_of(v)).unwrap();
        }
        out.push('\n');
        for &u in order {
            out.push_str(g.name_of(u));
            for &v in order {
                write!(out, ",{}", self.get(u, v)).unwrap();
            }
            out.push('\n');
        }
        out
    }
}

/// `ceil(d / t) - 1` for positive `t`, computed exactly.
pub fn required_gap(d: i64, t: i64) -> i64 {
    (d + t - 1).div_euclid(t) - 1
}

pub fn init_matrix(g: &Graph) -> DelayMatrix {
    DelayMatrix::init(g)
}

pub fn update_with_feedback(m: &DelayMatrix, evaluated: &[(Subgraph, u64)]) -> DelayMatrix {
    let mut out = m.clone();
    out.update_with_feedback(evaluated.iter().map(|(s, d)| (s, *d)));
    out
}

pub fn propagate(m: &DelayMatrix, g: &Graph) -> DelayMatrix {
    let mut out = m.clone();
    out.propagate(g);
    out
}

pub fn timing_pairs(m: &DelayMatrix, t_clk: u64) -> Vec<TimingPair> {
    m.timing_pairs(t_clk)
}
