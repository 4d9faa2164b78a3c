//! Seeded layered random graphs for experiments.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::graph::{Graph, Node, INPUT_OP};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OpKind {
    pub name: &'static str,
    pub arity: usize,
    /// Inclusive delay range in picoseconds.
    pub delay_ps: (u64, u64),
    /// Relative selection weight.
    pub weight: u32,
}

/// Op mix and widths used by [`generate_layered_graph`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OpDistribution {
    pub ops: Vec<OpKind>,
    pub bit_widths: Vec<u32>,
    pub clock_period_ps: u64,
}

impl Default for OpDistribution {
    fn default() -> Self {
        let op = |name, arity, lo, hi, weight| OpKind {
            name,
            arity,
            delay_ps: (lo, hi),
            weight,
        };
        Self {
            ops: vec![
                op("add", 2, 600, 1000, 6),
                op("sub", 2, 600, 1000, 3),
                op("mul", 2, 1400, 2000, 3),
                op("and", 2, 100, 250, 2),
                op("or", 2, 100, 250, 2),
                op("xor", 2, 120, 300, 2),
                op("shl", 2, 300, 500, 2),
                op("not", 1, 50, 100, 1),
                op("neg", 1, 400, 700, 1),
            ],
            bit_widths: vec![8, 16, 16, 32, 32, 32],
            clock_period_ps: 2500,
        }
    }
}

/// A deterministic DAG of `layers * width` nodes. Layer 0 holds primary
/// inputs; every later node reads at least one value from the previous layer
/// and any others from the two layers before it.
pub fn generate_layered_graph(
    seed: u64,
    layers: usize,
    width: usize,
    dist: &OpDistribution,
) -> Graph {
    assert!(
        layers >= 1 && width >= 1,
        "layers and width must be positive"
    );
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let name = |layer: usize, i: usize| format!("n{layer}_{i}");
    let total_weight: u32 = dist.ops.iter().map(|o| o.weight).sum();
    let mut nodes = Vec::with_capacity(layers * width);

    for i in 0..width {
        nodes.push(Node {
            id: name(0, i),
            op: INPUT_OP.into(),
            bits: *dist.bit_widths.choose(&mut rng).expect("bit widths"),
            delay_ps: 0,
            operands: vec![],
        });
    }
    for layer in 1..layers {
        for i in 0..width {
            let mut pick = rng.gen_range(0..total_weight);
            let op = dist
                .ops
                .iter()
                .find(|o| {
                    if pick < o.weight {
                        true
                    } else {
                        pick -= o.weight;
                        false
                    }
                })
                .expect("weights cover the range");
            let mut operands = vec![name(layer - 1, rng.gen_range(0..width))];
            for _ in 1..op.arity {
                let from = if layer >= 2 && rng.gen_bool(0.3) {
                    layer - 2
                } else {
                    layer - 1
                };
                operands.push(name(from, rng.gen_range(0..width)));
            }
            nodes.push(Node {
                id: name(layer, i),
                op: op.name.into(),
                bits: *dist.bit_widths.choose(&mut rng).expect("bit widths"),
                delay_ps: rng.gen_range(op.delay_ps.0..=op.delay_ps.1),
                operands,
            });
        }
    }
    Graph::new(
        format!("layered_s{seed}_{layers}x{width}"),
        dist.clock_period_ps,
        nodes,
    )
    .expect("generated graphs are valid")
}
