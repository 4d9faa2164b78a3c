//! Subgraph extraction: which combinational logic to send to a delay oracle.
//!
//! Each registered value (a node whose result is read in a later stage) gives
//! one candidate path ending at it. Candidates are ranked by delay or by the
//! fanout score, then expanded into a path, a cone, or a window.

use std::cmp::Ordering;
use std::collections::BTreeSet;

use num_rational::Ratio;

use crate::delay::{DelayMatrix, UNCONNECTED};
use crate::graph::{Graph, NodeId};
use crate::sdc::Schedule;

/// Default node-count cap on merged windows.
pub const DEFAULT_WINDOW_CAP: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SubgraphKind {
    Path,
    Cone,
    Window,
}

impl SubgraphKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SubgraphKind::Path => "path",
            SubgraphKind::Cone => "cone",
            SubgraphKind::Window => "window",
        }
    }
}

/// A combinational node set with its entry (leaf) and exit (root) nodes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Subgraph {
    pub id: u64,
    pub kind: SubgraphKind,
    pub nodes: BTreeSet<NodeId>,
    pub leaves: BTreeSet<NodeId>,
    pub roots: BTreeSet<NodeId>,
}

impl Subgraph {
    pub fn new(
        kind: SubgraphKind,
        nodes: BTreeSet<NodeId>,
        leaves: BTreeSet<NodeId>,
        roots: BTreeSet<NodeId>,
    ) -> Self {
        let id = roots.iter().next().map_or(0, |r| r.0 as u64);
        Self {
            id,
            kind,
            nodes,
            leaves,
            roots,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RankStrategy {
    DelayDriven,
    FanoutDriven,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShapeStrategy {
    Path,
    Cone,
    Window,
}

/// A registered value `dst` and the same-stage node `src` that starts the
/// longest combinational path into it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CandidatePath {
    pub src: NodeId,
    pub dst: NodeId,
    pub ccp_delay_ps: i64,
    /// Fanout score of `dst`.
    pub score: Ratio<i128>,
}

/// One candidate per registered value, excluding values produced by primary
/// inputs (there is no logic in front of them to evaluate).
pub fn enumerate_candidates(g: &Graph, s: &Schedule, m: &DelayMatrix) -> Vec<CandidatePath> {
    let mut out = Vec::new();
    for &dst in g.topo_order() {
        if g.is_source(dst) || !s.is_registered(g, dst) {
            continue;
        }
        let stage = s.stage(dst);
        // First in topo order wins ties.
        let mut best = (dst, m.get(dst, dst));
        for &u in g.topo_order() {
            if u == dst || s.stage(u) != stage {
                continue;
            }
            let d = m.get(u, dst);
            if d != UNCONNECTED && d > best.1 {
                best = (u, d);
            }
        }
        let mut cand = CandidatePath {
            src: best.0,
            dst,
            ccp_delay_ps: best.1,
            score: Ratio::from_integer(0),
        };
        cand.score = score_fanout(&cand, g, g.clock_period_ps());
        out.push(cand);
    }
    out
}

/// `(bits(dst) + ccp / t_clk) / (num_users(dst) + 1)`.
pub fn score_fanout(c: &CandidatePath, g: &Graph, t_clk: u64) -> Ratio<i128> {
    let t = t_clk as i128;
    let bits = g.bits(c.dst) as i128;
    let users = g.num_users(c.dst) as i128;
    Ratio::new(bits * t + c.ccp_delay_ps as i128, t * (users + 1))
}

fn rank_order(g: &Graph, strategy: RankStrategy, a: &CandidatePath, b: &CandidatePath) -> Ordering {
    let primary = match strategy {
        RankStrategy::DelayDriven => b.ccp_delay_ps.cmp(&a.ccp_delay_ps),
        RankStrategy::FanoutDriven => b.score.cmp(&a.score),
    };
    primary
        .then_with(|| g.name_of(a.dst).cmp(g.name_of(b.dst)))
        .then_with(|| g.name_of(a.src).cmp(g.name_of(b.src)))
}

/// All candidates, best first.
pub fn rank(
    g: &Graph,
    mut cands: Vec<CandidatePath>,
    strategy: RankStrategy,
) -> Vec<CandidatePath> {
    cands.sort_by(|a, b| rank_order(g, strategy, a, b));
    cands
}

pub fn rank_and_take(
    g: &Graph,
    cands: Vec<CandidatePath>,
    strategy: RankStrategy,
    m_count: usize,
) -> Vec<CandidatePath> {
    let mut ranked = rank(g, cands, strategy);
    ranked.truncate(m_count);
    ranked
}

/// The nodes of one longest `src -> dst` path, recovered by walking back from
/// `dst` through the operand with the largest delay from `src`.
pub fn expand_to_path(c: &CandidatePath, g: &Graph, m: &DelayMatrix) -> Subgraph {
    let mut nodes = BTreeSet::from([c.dst]);
    let mut v = c.dst;
    while v != c.src {
        let next = g
            .operands(v)
            .iter()
            .copied()
            .filter(|&p| p == c.src || m.get(c.src, p) != UNCONNECTED)
            .max_by(|&p, &q| {
                m.get(c.src, p)
                    .cmp(&m.get(c.src, q))
                    .then_with(|| q.cmp(&p))
            });
        match next {
            Some(p) => {
                nodes.insert(p);
                v = p;
            }
            None => break,
        }
    }
    Subgraph::new(
        SubgraphKind::Path,
        nodes,
        BTreeSet::from([c.src]),
        BTreeSet::from([c.dst]),
    )
}

/// Depth-first expansion from `dst` over same-stage operands. A node becomes
/// a leaf, and expansion stops there, when it is a primary input or reads
/// any value from an earlier stage.
pub fn expand_to_cone(c: &CandidatePath, g: &Graph, s: &Schedule) -> Subgraph {
    let stage = s.stage(c.dst);
    let mut nodes = BTreeSet::new();
    let mut leaves = BTreeSet::new();
    let mut stack = vec![c.dst];
    while let Some(v) = stack.pop() {
        if !nodes.insert(v) {
            continue;
        }
        let ops = g.operands(v);
        if ops.is_empty() || ops.iter().any(|&p| s.stage(p) != stage) {
            leaves.insert(v);
            continue;
        }
        stack.extend(ops.iter().rev().copied());
    }
    Subgraph::new(SubgraphKind::Cone, nodes, leaves, BTreeSet::from([c.dst]))
}

/// Merges cones sharing at least one leaf, transitively, into windows.
///
/// Cones are taken in order; a cone joins every existing window it shares a
/// leaf with unless the union would exceed `cap` nodes, in which case it is
/// emitted on its own. Cones are assumed to come from one stage of `g`.
pub fn merge_to_windows(cones: &[Subgraph], g: &Graph, cap: usize) -> Vec<Subgraph> {
    let mut windows: Vec<Subgraph> = Vec::new();
    for cone in cones {
        let touching: Vec<usize> = windows
            .iter()
            .enumerate()
            .filter(|(_, w)| !w.leaves.is_disjoint(&cone.leaves))
            .map(|(i, _)| i)
            .collect();
        let mut merged = cone.clone();
        merged.kind = SubgraphKind::Window;
        if touching.is_empty() {
            windows.push(merged);
            continue;
        }
        let mut union = cone.nodes.clone();
        for &i in &touching {
            union.extend(windows[i].nodes.iter().copied());
        }
        if union.len() > cap {
            windows.push(merged);
            continue;
        }
        for &i in touching.iter().rev() {
            let w = windows.remove(i);
            merged.nodes.extend(w.nodes);
            merged.leaves.extend(w.leaves);
            merged.roots.extend(w.roots);
        }
        // A leaf whose operands all ended up inside the window is interior now.
        let nodes = &merged.nodes;
        merged
            .leaves
            .retain(|&l| g.is_source(l) || g.operands(l).iter().any(|p| !nodes.contains(p)));
        windows.push(merged);
    }
    for w in &mut windows {
        w.id = w.roots.iter().next().map_or(0, |r| r.0 as u64);
    }
    windows.sort_by_key(|w| *w.roots.iter().next().expect("windows have roots"));
    windows
}
