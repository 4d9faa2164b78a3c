//! Feedback-guided iterative SDC pipeline scheduling for high-level synthesis.
//!
//! The crate schedules a dataflow graph into pipeline stages with a system of
//! difference constraints, then refines the schedule by asking a delay oracle
//! (a logic synthesizer, or one of the built-in models) for the realized
//! delay of combinational subgraphs and folding the answers back into the
//! constraints.
//!
//! - [`graph`]: the IR and its JSON file format.
//! - [`sdc`]: constraint construction and the exact register-minimizing solve.
//! - [`delay`]: the all-pairs delay matrix and its feedback updates.
//! - [`extract`]: candidate ranking and path/cone/window subgraphs.
//! - [`oracle`]: delay models and the external oracle protocol.
//! - [`engine`]: the iterative loop and its reports.
//! - [`generate`]: seeded random layered graphs.

pub mod delay;
pub mod engine;
pub mod extract;
pub mod generate;
pub mod graph;
pub mod oracle;
pub mod sdc;

pub use delay::DelayMatrix;
pub use engine::{run_isdc, run_sdc, EngineError, IsdcConfig, IsdcResult, IterationReport};
pub use extract::{RankStrategy, ShapeStrategy, Subgraph, SubgraphKind};
pub use graph::{parse_graph, Graph, GraphError, Node, NodeId};
pub use oracle::{DelayModel, DepthModel, ExternalOracle, ModelOracle, Oracle, ScaleModel};
pub use sdc::{Schedule, SdcError};
