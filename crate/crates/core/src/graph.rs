//! Dataflow-graph IR: nodes carrying a delay and a bit width, connected by
//! operand edges.
//!
//! A [`Graph`] is immutable once built. Node references inside the crate use
//! [`NodeId`], the position of the node in the input file; topological order
//! is computed once at construction and ties are broken by file order.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Op name reserved for primary inputs.
pub const INPUT_OP: &str = "input";

/// Index of a node in its graph (file order).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(pub usize);

impl NodeId {
    #[inline]
    pub fn index(self) -> usize {
        self.0
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

/// One operation of the dataflow graph, as it appears in a graph file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Node {
    pub id: String,
    pub op: String,
    pub bits: u32,
    pub delay_ps: u64,
    pub operands: Vec<String>,
}

impl Node {
    pub fn is_input(&self) -> bool {
        self.op == INPUT_OP
    }
}

/// A single operand slot reading the result of `producer`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ValueUse {
    pub producer: NodeId,
    pub consumer: NodeId,
    pub operand_index: usize,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GraphError {
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("graph has no nodes")]
    Empty,
    #[error("clock_period_ps must be positive")]
    ZeroClockPeriod,
    #[error("duplicate node id {0:?}")]
    DuplicateId(String),
    #[error("node {node:?} references unknown operand {operand:?}")]
    DanglingOperand { node: String, operand: String },
    #[error("cycle detected through node {0:?}")]
    Cycle(String),
    #[error("node {0:?} has zero bit width")]
    ZeroBits(String),
    #[error("input node {0:?} must have no operands and zero delay")]
    MalformedInput(String),
    #[error("unknown node id {0:?}")]
    UnknownNode(String),
}

#[derive(Serialize, Deserialize)]
struct GraphFile {
    name: String,
    clock_period_ps: u64,
    nodes: Vec<Node>,
}

/// A validated, acyclic dataflow graph with its target clock period.
#[derive(Debug, Clone)]
pub struct Graph {
    name: String,
    clock_period_ps: u64,
    nodes: Vec<Node>,
    operands: Vec<Vec<NodeId>>,
    users: Vec<Vec<ValueUse>>,
    topo: Vec<NodeId>,
    topo_pos: Vec<usize>,
    by_name: HashMap<String, NodeId>,
}

impl Graph {
    /// Validates `nodes` and builds the graph.
    pub fn new(
        name: impl Into<String>,
        clock_period_ps: u64,
        nodes: Vec<Node>,
    ) -> Result<Self, GraphError> {
        if nodes.is_empty() {
            return Err(GraphError::Empty);
        }
        if clock_period_ps == 0 {
            return Err(GraphError::ZeroClockPeriod);
        }
        let mut by_name = HashMap::with_capacity(nodes.len());
        for (i, node) in nodes.iter().enumerate() {
            if by_name.insert(node.id.clone(), NodeId(i)).is_some() {
                return Err(GraphError::DuplicateId(node.id.clone()));
            }
        }
        let mut operands = Vec::with_capacity(nodes.len());
        for node in &nodes {
            if node.bits == 0 {
                return Err(GraphError::ZeroBits(node.id.clone()));
            }
            if node.is_input() && (!node.operands.is_empty() || node.delay_ps != 0) {
                return Err(GraphError::MalformedInput(node.id.clone()));
            }
            let ops = node
                .operands
                .iter()
                .map(|o| {
                    by_name
                        .get(o)
                        .copied()
                        .ok_or_else(|| GraphError::DanglingOperand {
                            node: node.id.clone(),
                            operand: o.clone(),
                        })
                })
                .collect::<Result<Vec<_>, _>>()?;
            operands.push(ops);
        }

        let topo = kahn(&operands).map_err(|v| GraphError::Cycle(nodes[v.0].id.clone()))?;
        let mut topo_pos = vec![0; nodes.len()];
        for (pos, v) in topo.iter().enumerate() {
            topo_pos[v.0] = pos;
        }

        // Uses are listed in (consumer topo position, operand index) order.
        let mut users: Vec<Vec<ValueUse>> = vec![Vec::new(); nodes.len()];
        for &consumer in &topo {
            for (operand_index, &producer) in operands[consumer.0].iter().enumerate() {
                users[producer.0].push(ValueUse {
                    producer,
                    consumer,
                    operand_index,
                });
            }
        }

        Ok(Self {
            name: name.into(),
            clock_period_ps,
            nodes,
            operands,
            users,
            topo,
            topo_pos,
            by_name,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn clock_period_ps(&self) -> u64 {
        self.clock_period_ps
    }

    /// Same graph with a different target clock period.
    pub fn with_clock_period(mut self, clock_period_ps: u64) -> Result<Self, GraphError> {
        if clock_period_ps == 0 {
            return Err(GraphError::ZeroClockPeriod);
        }
        self.clock_period_ps = clock_period_ps;
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, v: NodeId) -> &Node {
        &self.nodes[v.0]
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn ids(&self) -> impl Iterator<Item = NodeId> + '_ {
        (0..self.nodes.len()).map(NodeId)
    }

    pub fn lookup(&self, id: &str) -> Option<NodeId> {
        self.by_name.get(id).copied()
    }

    pub fn name_of(&self, v: NodeId) -> &str {
        &self.nodes[v.0].id
    }

    pub fn operands(&self, v: NodeId) -> &[NodeId] {
        &self.operands[v.0]
    }

    /// Uses of `v`'s result, one per operand slot.
    pub fn uses(&self, v: NodeId) -> &[ValueUse] {
        &self.users[v.0]
    }

    /// Number of operand slots reading `v`'s result.
    pub fn num_users(&self, v: NodeId) -> usize {
        self.users[v.0].len()
    }

    /// A node with no operands: a primary input of the graph.
    pub fn is_source(&self, v: NodeId) -> bool {
        self.operands[v.0].is_empty()
    }

    pub fn delay(&self, v: NodeId) -> u64 {
        self.nodes[v.0].delay_ps
    }

    pub fn bits(&self, v: NodeId) -> u32 {
        self.nodes[v.0].bits
    }

    pub fn topo_order(&self) -> &[NodeId] {
        &self.topo
    }

    pub fn topo_position(&self, v: NodeId) -> usize {
        self.topo_pos[v.0]
    }

    pub fn to_json(&self) -> String {
        let file = GraphFile {
            name: self.name.clone(),
            clock_period_ps: self.clock_period_ps,
            nodes: self.nodes.clone(),
        };
        let mut text = serde_json::to_string_pretty(&file).expect("graph serializes");
        text.push('\n');
        text
    }
}

/// Parses and validates a graph file.
pub fn parse_graph(text: &str) -> Result<Graph, GraphError> {
    let file: GraphFile = serde_json::from_str(text).map_err(|e| GraphError::Syntax {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    Graph::new(file.name, file.clock_period_ps, file.nodes)
}

/// Topological order of the graph, ties broken by file order.
pub fn topo_order(g: &Graph) -> Vec<&str> {
    g.topo_order().iter().map(|&v| g.name_of(v)).collect()
}

/// All uses of the node named `id`.
pub fn users(g: &Graph, id: &str) -> Result<Vec<ValueUse>, GraphError> {
    let v = g
        .lookup(id)
        .ok_or_else(|| GraphError::UnknownNode(id.to_string()))?;
    Ok(g.uses(v).to_vec())
}

// Returns a node on a cycle when the operand relation is not a DAG.
fn kahn(operands: &[Vec<NodeId>]) -> Result<Vec<NodeId>, NodeId> {
    let n = operands.len();
    let mut indegree = vec![0usize; n];
    let mut consumers: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (v, ops) in operands.iter().enumerate() {
        indegree[v] = ops.len();
        for p in ops {
            consumers[p.0].push(v);
        }
    }
    let mut ready: BinaryHeap<Reverse<usize>> =
        (0..n).filter(|&v| indegree[v] == 0).map(Reverse).collect();
    let mut order = Vec::with_capacity(n);
    while let Some(Reverse(v)) = ready.pop() {
        order.push(NodeId(v));
        for &c in &consumers[v] {
            indegree[c] -= 1;
            if indegree[c] == 0 {
                ready.push(Reverse(c));
            }
        }
    }
    if order.len() == n {
        Ok(order)
    } else {
        let stuck = (0..n).find(|&v| indegree[v] > 0).unwrap();
        Err(NodeId(stuck))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn node(id: &str, op: &str, delay: u64, operands: &[&str]) -> Node {
        Node {
            id: id.into(),
            op: op.into(),
            bits: 32,
            delay_ps: delay,
            operands: operands.iter().map(|s| s.to_string()).collect(),
        }
    }

    #[test]
    fn smallest_valid_graph() {
        let text = r#"{"name":"t","clock_period_ps":1000,"nodes":[
            {"id":"a","op":"input","bits":8,"delay_ps":0,"operands":[]},
            {"id":"b","op":"add","bits":8,"delay_ps":10,"operands":["a","a"]}]}"#;
        let g = parse_graph(text).unwrap();
        assert_eq!(g.len(), 2);
        assert_eq!(topo_order(&g), vec!["a", "b"]);
    }

    #[test]
    fn dangling_operand_is_named() {
        let err = Graph::new("t", 10, vec![node("a", "neg", 1, &["vX"])]).unwrap_err();
        assert_eq!(
            err,
            GraphError::DanglingOperand {
                node: "a".into(),
                operand: "vX".into()
            }
        );
    }

    #[test]
    fn mutual_reference_is_a_cycle() {
        let err = Graph::new(
            "t",
            10,
            vec![node("a", "neg", 1, &["b"]), node("b", "neg", 1, &["a"])],
        )
        .unwrap_err();
        assert!(matches!(err, GraphError::Cycle(_)));
    }

    #[test]
    fn structural_errors_are_distinct() {
        assert_eq!(Graph::new("t", 10, vec![]).unwrap_err(), GraphError::Empty);
        let dup = Graph::new(
            "t",
            10,
            vec![node("a", "x", 1, &[]), node("a", "x", 1, &[])],
        );
        assert_eq!(dup.unwrap_err(), GraphError::DuplicateId("a".into()));
        let bad_input = Graph::new("t", 10, vec![node("a", INPUT_OP, 5, &[])]);
        assert_eq!(
            bad_input.unwrap_err(),
            GraphError::MalformedInput("a".into())
        );
        let mut zero = node("a", "x", 1, &[]);
        zero.bits = 0;
        assert_eq!(
            Graph::new("t", 10, vec![zero]).unwrap_err(),
            GraphError::ZeroBits("a".into())
        );
        assert_eq!(
            Graph::new("t", 0, vec![node("a", "x", 1, &[])]).unwrap_err(),
            GraphError::ZeroClockPeriod
        );
        let syntax = parse_graph("{\"name\": \"t\",").unwrap_err();
        assert!(matches!(syntax, GraphError::Syntax { line: 1, .. }));
    }

    #[test]
    fn topo_orders() {
        let chain = Graph::new(
            "t",
            10,
            vec![
                node("c", "x", 1, &["b"]),
                node("a", "x", 1, &[]),
                node("b", "x", 1, &["a"]),
            ],
        )
        .unwrap();
        assert_eq!(topo_order(&chain), vec!["a", "b", "c"]);

        let diamond = Graph::new(
            "t",
            10,
            vec![
                node("a", "x", 1, &[]),
                node("b", "x", 1, &["a"]),
                node("c", "x", 1, &["a"]),
                node("d", "x", 1, &["b", "c"]),
            ],
        )
        .unwrap();
        assert_eq!(topo_order(&diamond), vec!["a", "b", "c", "d"]);

        let single = Graph::new("t", 10, vec![node("z", "x", 1, &[])]).unwrap();
        assert_eq!(topo_order(&single), vec!["z"]);
    }

    #[test]
    fn users_count_operand_slots() {
        let g = Graph::new(
            "t",
            10,
            vec![
                node("r3", "x", 1, &[]),
                node("v6", "x", 1, &["r3"]),
                node("v7", "x", 1, &["r3"]),
                node("sq", "mul", 1, &["v6", "v6"]),
            ],
        )
        .unwrap();
        assert_eq!(users(&g, "r3").unwrap().len(), 2);
        assert!(users(&g, "v7").unwrap().is_empty());
        let sq = users(&g, "v6").unwrap();
        assert_eq!(sq.len(), 2);
        assert_eq!(sq[0].operand_index, 0);
        assert_eq!(sq[1].operand_index, 1);
        assert_eq!(
            users(&g, "nope").unwrap_err(),
            GraphError::UnknownNode("nope".into())
        );
    }

    fn arb_dag() -> impl Strategy<Value = Graph> {
        (1usize..20)
            .prop_flat_map(|n| {
                (
                    Just(n),
                    proptest::collection::vec(proptest::collection::vec(any::<u16>(), 0..3), n),
                    proptest::collection::vec(0u64..2000, n),
                )
            })
            .prop_map(|(n, edges, delays)| {
                // Reverse the natural order so file order differs from topo order.
                let nodes = (0..n)
                    .rev()
                    .map(|i| {
                        let operands = if i == 0 {
                            vec![]
                        } else {
                            edges[i]
                                .iter()
                                .map(|e| format!("n{}", *e as usize % i))
                                .collect()
                        };
                        Node {
                            id: format!("n{i}"),
                            op: "op".into(),
                            bits: 1 + (delays[i] % 32) as u32,
                            delay_ps: delays[i],
                            operands,
                        }
                    })
                    .collect();
                Graph::new("p", 1000, nodes).unwrap()
            })
    }

    proptest! {
        #[test]
        fn topo_respects_edges(g in arb_dag()) {
            prop_assert_eq!(g.topo_order().len(), g.len());
            for v in g.ids() {
                for &p in g.operands(v) {
                    prop_assert!(g.topo_position(p) < g.topo_position(v));
                }
            }
        }

        #[test]
        fn use_and_operand_totals_agree(g in arb_dag()) {
            let uses: usize = g.ids().map(|v| g.uses(v).len()).sum();
            let ops: usize = g.ids().map(|v| g.operands(v).len()).sum();
            prop_assert_eq!(uses, ops);
        }

        #[test]
        fn serialization_round_trips(g in arb_dag()) {
            let text = g.to_json();
            let back = parse_graph(&text).unwrap();
            prop_assert_eq!(back.nodes(), g.nodes());
            prop_assert_eq!(back.to_json(), text);
        }
    }
}
