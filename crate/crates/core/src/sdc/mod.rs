//! SDC scheduling: difference constraints over per-node stage variables and
//! an exact register-bit-minimizing solve.
//!
//! Every node `v` gets a stage variable `s_v` and a lifetime-end variable
//! `m_v` (the last stage in which its result is still needed). The objective
//! `sum(bits(v) * (m_v - s_v))` is the number of register bits the schedule
//! needs, and all constraints stay in difference form, so the LP optimum is
//! integral.

mod flow;

use std::collections::BTreeMap;
use std::fmt;

use serde::Serialize;
use thiserror::Error;

use crate::delay::DelayMatrix;
use crate::graph::{Graph, NodeId};

/// A schedule variable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Var {
    /// `s_v`: the stage `v` is scheduled in.
    Stage(NodeId),
    /// `m_v`: the last stage reading `v`'s result.
    LifetimeEnd(NodeId),
}

impl fmt::Display for Var {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Var::Stage(v) => write!(f, "s[{}]", v.0),
            Var::LifetimeEnd(v) => write!(f, "m[{}]", v.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ConstraintKind {
    Dependence,
    Timing,
    Lifetime,
}

/// `minuend - subtrahend <= bound`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DifferenceConstraint {
    pub minuend: Var,
    pub subtrahend: Var,
    pub bound: i64,
    pub kind: ConstraintKind,
}

impl DifferenceConstraint {
    pub fn holds(&self, value: impl Fn(Var) -> i64) -> bool {
        value(self.minuend) - value(self.subtrahend) <= self.bound
    }

    /// Renders the constraint with node names from `g`.
    pub fn describe(&self, g: &Graph) -> String {
        let name = |v: Var| match v {
            Var::Stage(n) => format!("stage({})", g.name_of(n)),
            Var::LifetimeEnd(n) => format!("lifetime_end({})", g.name_of(n)),
        };
        format!(
            "{} - {} <= {}",
            name(self.minuend),
            name(self.subtrahend),
            self.bound
        )
    }
}

impl fmt::Display for DifferenceConstraint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} - {} <= {}",
            self.minuend, self.subtrahend, self.bound
        )
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SdcError {
    #[error("constraint system is infeasible; violated cycle: {}", format_cycle(.cycle))]
    Infeasible { cycle: Vec<DifferenceConstraint> },
}

fn format_cycle(cycle: &[DifferenceConstraint]) -> String {
    cycle
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join(", ")
}

/// Register-bit weights of the objective, one per node.
#[derive(Debug, Clone)]
pub struct RegisterObjective {
    bits: Vec<u64>,
}

impl RegisterObjective {
    pub fn new(g: &Graph) -> Self {
        Self {
            bits: g.ids().map(|v| g.bits(v) as u64).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }
}

/// Node stages plus the derived register cost.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Schedule {
    stages: Vec<u32>,
    num_stages: u32,
    register_bits: u64,
}

#[derive(Serialize)]
struct ScheduleFile<'a> {
    stages: BTreeMap<&'a str, u32>,
    num_stages: u32,
    register_bits: u64,
}

impl Schedule {
    /// Builds a schedule from raw stages, normalizing the minimum to 0.
    pub fn from_stages(g: &Graph, stages: Vec<u32>) -> Self {
        assert_eq!(stages.len(), g.len());
        let lo = stages.iter().copied().min().unwrap_or(0);
        let stages: Vec<u32> = stages.into_iter().map(|s| s - lo).collect();
        let num_stages = stages.iter().copied().max().map_or(0, |m| m + 1);
        let register_bits = register_cost_of(g, &stages);
        Self {
            stages,
            num_stages,
            register_bits,
        }
    }

    pub fn stage(&self, v: NodeId) -> u32 {
        self.stages[v.0]
    }

    pub fn stages(&self) -> &[u32] {
        &self.stages
    }

    pub fn num_stages(&self) -> u32 {
        self.num_stages
    }

    pub fn register_bits(&self) -> u64 {
        self.register_bits
    }

    /// Last stage reading `v`'s result (its own stage for dead values).
    pub fn lifetime_end(&self, g: &Graph, v: NodeId) -> u32 {
        g.uses(v)
            .iter()
            .map(|u| self.stages[u.consumer.0])
            .fold(self.stages[v.0], u32::max)
    }

    /// True when some use of `v` is in a later stage.
    pub fn is_registered(&self, g: &Graph, v: NodeId) -> bool {
        self.lifetime_end(g, v) > self.stage(v)
    }

    /// Evaluates a schedule variable.
    pub fn value(&self, g: &Graph, var: Var) -> i64 {
        match var {
            Var::Stage(v) => self.stages[v.0] as i64,
            Var::LifetimeEnd(v) => self.lifetime_end(g, v) as i64,
        }
    }

    pub fn to_json(&self, g: &Graph) -> String {
        let file = ScheduleFile {
            stages: g.ids().map(|v| (g.name_of(v), self.stages[v.0])).collect(),
            num_stages: self.num_stages,
            register_bits: self.register_bits,
        };
        let mut text = serde_json::to_string_pretty(&file).expect("schedule serializes");
        text.push('\n');
        text
    }
}

/// Dependence, timing, and lifetime constraints for `g` under the delay
/// estimates `d`.
pub fn build_constraints(g: &Graph, d: &DelayMatrix, t_clk: u64) -> Vec<DifferenceConstraint> {
    let mut out = Vec::new();
    for v in g.ids() {
        for &u in g.operands(v) {
            out.push(DifferenceConstraint {
                minuend: Var::Stage(u),
                subtrahend: Var::Stage(v),
                bound: 0,
                kind: ConstraintKind::Dependence,
            });
        }
    }
    for pair in d.timing_pairs(t_clk) {
        out.push(DifferenceConstraint {
            minuend: Var::Stage(pair.from),
            subtrahend: Var::Stage(pair.to),
            bound: -pair.gap,
            kind: ConstraintKind::Timing,
        });
    }
    for u in g.ids() {
        out.push(DifferenceConstraint {
            minuend: Var::Stage(u),
            subtrahend: Var::LifetimeEnd(u),
            bound: 0,
            kind: ConstraintKind::Lifetime,
        });
        for use_ in g.uses(u) {
            out.push(DifferenceConstraint {
                minuend: Var::Stage(use_.consumer),
                subtrahend: Var::LifetimeEnd(u),
                bound: 0,
                kind: ConstraintKind::Lifetime,
            });
        }
    }
    out
}

/// Solves the constraint system to an exact register-bit optimum.
///
/// Among optimal schedules the one with the smallest sum of stages is
/// returned, and the earliest stage is 0. Both tie-breaks are folded into a
/// single weighted objective: the register term is scaled by a factor larger
/// than any stage sum a basic solution can reach, so it dominates.
pub fn solve(
    constraints: &[DifferenceConstraint],
    objective: &RegisterObjective,
) -> Result<Schedule, SdcError> {
    let n = objective.len();
    // Variable layout: s_v at v, m_v at n + v, the zero anchor at 2n.
    let anchor = 2 * n;
    let num_vars = 2 * n + 1;
    let index = |var: Var| match var {
        Var::Stage(v) => v.0,
        Var::LifetimeEnd(v) => n + v.0,
    };

    let mut rows: Vec<flow::Row> = constraints
        .iter()
        .map(|c| flow::Row {
            lhs: index(c.minuend),
            rhs: index(c.subtrahend),
            bound: c.bound,
        })
        .collect();
    for v in 0..n {
        rows.push(flow::Row {
            lhs: anchor,
            rhs: v,
            bound: 0,
        });
    }

    let max_gap = constraints
        .iter()
        .map(|c| -c.bound)
        .max()
        .unwrap_or(0)
        .max(0);
    // Every variable of a basic solution lies within (num_vars - 1) * max_gap
    // of the anchor, so the stage sum is bounded by n times that.
    let scale = n as i64 * (num_vars as i64 - 1) * max_gap + 1;

    let mut cost = vec![0i64; num_vars];
    for v in 0..n {
        let w = scale * objective.bits[v] as i64;
        cost[v] = 1 - w;
        cost[n + v] = w;
    }
    cost[anchor] = -(n as i64);

    let x = match flow::solve(num_vars, &rows, &cost) {
        Ok(x) => x,
        Err(flow::FlowError::NegativeCycle(rows_on_cycle)) => {
            let cycle = rows_on_cycle
                .into_iter()
                .filter(|&k| k < constraints.len())
                .map(|k| constraints[k])
                .collect();
            return Err(SdcError::Infeasible { cycle });
        }
        Err(flow::FlowError::Unbounded) => {
            unreachable!("register objective is bounded below by zero")
        }
    };

    let base = x[anchor];
    let stages: Vec<u32> = (0..n).map(|v| (x[v] - base) as u32).collect();
    let register_bits = (0..n)
        .map(|v| objective.bits[v] * (x[n + v] - x[v]) as u64)
        .sum();
    let num_stages = stages.iter().copied().max().map_or(0, |m| m + 1);
    Ok(Schedule {
        stages,
        num_stages,
        register_bits,
    })
}

/// Register bits a schedule needs: each value is held from its own stage to
/// the last stage that reads it.
pub fn register_cost(g: &Graph, s: &Schedule) -> u64 {
    register_cost_of(g, s.stages())
}

fn register_cost_of(g: &Graph, stages: &[u32]) -> u64 {
    g.ids()
        .map(|v| {
            let last = g
                .uses(v)
                .iter()
                .map(|u| stages[u.consumer.0])
                .fold(stages[v.0], u32::max);
            g.bits(v) as u64 * (last - stages[v.0]) as u64
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Node;

    fn graph(t: u64, spec: &[(&str, u32, u64, &[&str])]) -> Graph {
        let nodes = spec
            .iter()
            .map(|(id, bits, d, ops)| Node {
                id: id.to_string(),
                op: "op".into(),
                bits: *bits,
                delay_ps: *d,
                operands: ops.iter().map(|s| s.to_string()).collect(),
            })
            .collect();
        Graph::new("t", t, nodes).unwrap()
    }

    fn schedule(g: &Graph) -> Result<Schedule, SdcError> {
        let m = DelayMatrix::init(g);
        solve(
            &build_constraints(g, &m, g.clock_period_ps()),
            &RegisterObjective::new(g),
        )
    }

    #[test]
    fn timing_bounds_from_delay() {
        let g = graph(10_000, &[("a", 8, 6000, &[]), ("b", 8, 6000, &["a"])]);
        let cs = build_constraints(&g, &DelayMatrix::init(&g), 10_000);
        let timing: Vec<_> = cs
            .iter()
            .filter(|c| c.kind == ConstraintKind::Timing)
            .collect();
        assert_eq!(timing.len(), 1);
        assert_eq!(timing[0].bound, -1);

        let g = graph(10_000, &[("a", 8, 5000, &[]), ("b", 8, 5000, &["a"])]);
        let cs = build_constraints(&g, &DelayMatrix::init(&g), 10_000);
        assert!(cs.iter().all(|c| c.kind != ConstraintKind::Timing));

        let g = graph(
            10_000,
            &[
                ("a", 8, 9000, &[]),
                ("b", 8, 9000, &["a"]),
                ("c", 8, 7000, &["b"]),
            ],
        );
        let cs = build_constraints(&g, &DelayMatrix::init(&g), 10_000);
        let ac = cs
            .iter()
            .find(|c| c.minuend == Var::Stage(NodeId(0)) && c.subtrahend == Var::Stage(NodeId(2)))
            .unwrap();
        assert_eq!(ac.bound, -2);
    }

    #[test]
    fn unconstrained_chain_is_single_stage() {
        let g = graph(
            100,
            &[("a", 8, 1, &[]), ("b", 8, 1, &["a"]), ("c", 8, 1, &["b"])],
        );
        let s = schedule(&g).unwrap();
        assert_eq!(s.stages(), &[0, 0, 0]);
        assert_eq!(s.num_stages(), 1);
        assert_eq!(s.register_bits(), 0);
    }

    #[test]
    fn cuts_at_the_narrowest_value() {
        // a(32) -> b(4) -> c(32) -> d: a..d must span two stages.
        let g = graph(
            10,
            &[
                ("a", 32, 4, &[]),
                ("b", 4, 4, &["a"]),
                ("c", 32, 4, &["b"]),
                ("d", 32, 4, &["c"]),
            ],
        );
        let s = schedule(&g).unwrap();
        assert_eq!(s.register_bits(), 4);
        assert_eq!(s.stages(), &[0, 0, 1, 1]);
        assert_eq!(register_cost(&g, &s), 4);
    }

    #[test]
    fn oversized_node_is_infeasible() {
        let g = graph(10_000, &[("a", 8, 12_000, &[])]);
        match schedule(&g).unwrap_err() {
            SdcError::Infeasible { cycle } => {
                assert_eq!(cycle.len(), 1);
                assert_eq!(cycle[0].minuend, Var::Stage(NodeId(0)));
                assert_eq!(cycle[0].subtrahend, Var::Stage(NodeId(0)));
                assert!(cycle[0].describe(&g).contains("stage(a)"));
            }
        }
    }

    #[test]
    fn register_cost_definition() {
        let g = graph(
            10,
            &[
                ("a", 32, 1, &[]),
                ("b", 32, 1, &["a"]),
                ("c", 32, 1, &["a"]),
                ("d", 8, 1, &[]),
            ],
        );
        let s = Schedule::from_stages(&g, vec![0, 1, 2, 5]);
        // a lives 0..2, d is dead.
        assert_eq!(register_cost(&g, &s), 64);
        assert_eq!(s.num_stages(), 6);
        let same = Schedule::from_stages(&g, vec![3, 3, 3, 3]);
        assert_eq!(same.stages(), &[0, 0, 0, 0]);
        assert_eq!(register_cost(&g, &same), 0);
    }

    #[test]
    fn schedule_json_is_keyed_by_id() {
        let g = graph(10, &[("b", 8, 1, &[]), ("a", 8, 1, &["b"])]);
        let s = Schedule::from_stages(&g, vec![0, 1]);
        let v: serde_json::Value = serde_json::from_str(&s.to_json(&g)).unwrap();
        assert_eq!(v["stages"]["a"], 1);
        assert_eq!(v["num_stages"], 2);
        assert_eq!(v["register_bits"], 8);
    }
}
