//! The iterative scheduling loop.
//!
//! Starting from a plain SDC schedule, each iteration extracts combinational
//! subgraphs from the current schedule, asks an oracle for their realized
//! delays, lowers the delay matrix accordingly, re-derives the timing
//! constraints and solves again. The best schedule seen is kept.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::time::Instant;

use log::{debug, info, warn};
use serde::Serialize;
use thiserror::Error;

use crate::delay::DelayMatrix;
use crate::extract::{
    enumerate_candidates, expand_to_cone, expand_to_path, merge_to_windows, rank, RankStrategy,
    ShapeStrategy, Subgraph, DEFAULT_WINDOW_CAP,
};
use crate::graph::{Graph, NodeId};
use crate::oracle::{Oracle, OracleError, OracleRequest};
use crate::sdc::{build_constraints, solve, RegisterObjective, Schedule, SdcError};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(
        "no feasible schedule at clock period {clock_period_ps} ps: {detail}; \
         raise the clock period (e.g. --clock-period-ps) above the largest single-node delay ({max_node_delay_ps} ps)"
    )]
    Infeasible {
        clock_period_ps: u64,
        max_node_delay_ps: u64,
        detail: String,
    },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    OracleSpawn(OracleError),
}

#[derive(Debug, Clone)]
pub struct IsdcConfig {
    pub strategy_rank: RankStrategy,
    pub strategy_shape: ShapeStrategy,
    /// Subgraphs evaluated per iteration.
    pub subgraphs_per_iter: usize,
    pub max_iterations: usize,
    /// Stop once register bits are unchanged for this many iterations.
    pub stable_iterations: usize,
    pub window_cap: usize,
}

impl Default for IsdcConfig {
    fn default() -> Self {
        Self {
            strategy_rank: RankStrategy::FanoutDriven,
            strategy_shape: ShapeStrategy::Window,
            subgraphs_per_iter: 16,
            max_iterations: 15,
            stable_iterations: 3,
            window_cap: DEFAULT_WINDOW_CAP,
        }
    }
}

impl IsdcConfig {
    pub fn validate(&self) -> Result<(), EngineError> {
        if self.subgraphs_per_iter == 0 {
            return Err(EngineError::Config(
                "subgraphs per iteration must be >= 1".into(),
            ));
        }
        if self.max_iterations == 0 {
            return Err(EngineError::Config("max iterations must be >= 1".into()));
        }
        if self.stable_iterations == 0 {
            return Err(EngineError::Config("stable iterations must be >= 1".into()));
        }
        if self.window_cap == 0 {
            return Err(EngineError::Config("window cap must be >= 1".into()));
        }
        Ok(())
    }
}

/// One evaluated subgraph and the delay the oracle reported for it.
#[derive(Debug, Clone, Serialize)]
pub struct EvaluatedSubgraph {
    pub id: u64,
    pub kind: &'static str,
    pub nodes: Vec<String>,
    pub leaves: Vec<String>,
    pub roots: Vec<String>,
    pub delay_ps: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct IterationReport {
    /// 0 is the initial SDC schedule.
    pub iteration: usize,
    pub register_bits: u64,
    pub num_stages: u32,
    pub estimated_critical_path_ps: i64,
    pub subgraphs: Vec<EvaluatedSubgraph>,
    /// Set when the oracle batch failed and the iteration was skipped.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub oracle_error: Option<String>,
    pub wall_time_ms: u64,
}

#[derive(Debug, Clone)]
pub struct IsdcResult {
    pub best: Schedule,
    pub best_iteration: usize,
    pub reports: Vec<IterationReport>,
    pub matrix: DelayMatrix,
}

fn solve_with(g: &Graph, m: &DelayMatrix) -> Result<Schedule, EngineError> {
    let constraints = build_constraints(g, m, g.clock_period_ps());
    solve(&constraints, &RegisterObjective::new(g)).map_err(|e| match e {
        SdcError::Infeasible { cycle } => EngineError::Infeasible {
            clock_period_ps: g.clock_period_ps(),
            max_node_delay_ps: g.ids().map(|v| g.delay(v)).max().unwrap_or(0),
            detail: format!(
                "violated constraint cycle [{}]",
                cycle
                    .iter()
                    .map(|c| c.describe(g))
                    .collect::<Vec<_>>()
                    .join(", ")
            ),
        },
    })
}

/// Plain SDC scheduling on the naive delay estimates.
pub fn run_sdc(g: &Graph) -> Result<(Schedule, DelayMatrix), EngineError> {
    let m = DelayMatrix::init(g);
    let s = solve_with(g, &m)?;
    Ok((s, m))
}

/// Largest same-stage delay estimate.
pub fn estimated_critical_path(g: &Graph, s: &Schedule, m: &DelayMatrix) -> i64 {
    let mut best = 0;
    for u in g.ids() {
        for v in g.ids() {
            if s.stage(u) == s.stage(v) {
                best = best.max(m.get(u, v));
            }
        }
    }
    best
}

// Picks up to `m` subgraphs not evaluated before, promoting lower-ranked
// candidates past duplicates. Also returns the keys to mark as seen once the
// batch is evaluated.
fn select_subgraphs(
    g: &Graph,
    s: &Schedule,
    matrix: &DelayMatrix,
    cfg: &IsdcConfig,
    seen: &HashSet<Vec<NodeId>>,
) -> (Vec<Subgraph>, Vec<Vec<NodeId>>) {
    let ranked = rank(g, enumerate_candidates(g, s, matrix), cfg.strategy_rank);
    let key = |sg: &Subgraph| sg.nodes.iter().copied().collect::<Vec<_>>();
    let budget = cfg.subgraphs_per_iter;

    match cfg.strategy_shape {
        ShapeStrategy::Path | ShapeStrategy::Cone => {
            let mut picked = Vec::new();
            let mut batch = HashSet::new();
            for c in &ranked {
                let sg = match cfg.strategy_shape {
                    ShapeStrategy::Path => expand_to_path(c, g, matrix),
                    _ => expand_to_cone(c, g, s),
                };
                let k = key(&sg);
                if seen.contains(&k) || !batch.insert(k) {
                    continue;
                }
                picked.push(sg);
                if picked.len() == budget {
                    break;
                }
            }
            let keys = picked.iter().map(key).collect();
            (picked, keys)
        }
        ShapeStrategy::Window => {
            // Cones are grouped per stage and merged in rank order; keep
            // adding cones until enough fresh windows exist.
            let mut cones: Vec<Subgraph> = Vec::new();
            let mut cone_keys = HashSet::new();
            let mut fresh = Vec::new();
            for c in &ranked {
                let cone = expand_to_cone(c, g, s);
                if !cone_keys.insert(key(&cone)) {
                    continue;
                }
                cones.push(cone);
                fresh = windows_by_stage(g, s, &cones, cfg.window_cap)
                    .into_iter()
                    .filter(|w| !seen.contains(&key(w)))
                    .collect::<Vec<_>>();
                if fresh.len() >= budget {
                    break;
                }
            }
            fresh.truncate(budget);
            let keys = fresh.iter().map(key).collect();
            (fresh, keys)
        }
    }
}

// Windows in order of the best-ranked cone they contain.
fn windows_by_stage(g: &Graph, s: &Schedule, cones: &[Subgraph], cap: usize) -> Vec<Subgraph> {
    let mut stages: Vec<u32> = cones
        .iter()
        .map(|c| s.stage(*c.roots.iter().next().unwrap()))
        .collect();
    stages.sort_unstable();
    stages.dedup();
    let mut windows = Vec::new();
    for stage in stages {
        let group: Vec<Subgraph> = cones
            .iter()
            .filter(|c| s.stage(*c.roots.iter().next().unwrap()) == stage)
            .cloned()
            .collect();
        windows.extend(merge_to_windows(&group, g, cap));
    }
    let rank_of = |w: &Subgraph| {
        cones
            .iter()
            .position(|c| c.roots.is_subset(&w.roots))
            .unwrap_or(usize::MAX)
    };
    windows.sort_by_key(rank_of);
    windows
}

fn describe(g: &Graph, sg: &Subgraph, delay_ps: u64) -> EvaluatedSubgraph {
    let names = |set: &std::collections::BTreeSet<NodeId>| {
        set.iter().map(|&v| g.name_of(v).to_string()).collect()
    };
    EvaluatedSubgraph {
        id: sg.id,
        kind: sg.kind.as_str(),
        nodes: names(&sg.nodes),
        leaves: names(&sg.leaves),
        roots: names(&sg.roots),
        delay_ps,
    }
}

/// Runs the feedback loop and returns the best schedule over all iterations.
pub fn run_isdc(
    g: &Graph,
    cfg: &IsdcConfig,
    oracle: &dyn Oracle,
) -> Result<IsdcResult, EngineError> {
    cfg.validate()?;
    let start = Instant::now();
    let (mut schedule, mut matrix) = run_sdc(g)?;
    let mut reports = vec![IterationReport {
        iteration: 0,
        register_bits: schedule.register_bits(),
        num_stages: schedule.num_stages(),
        estimated_critical_path_ps: estimated_critical_path(g, &schedule, &matrix),
        subgraphs: Vec::new(),
        oracle_error: None,
        wall_time_ms: start.elapsed().as_millis() as u64,
    }];
    info!(
        "iteration 0: register_bits={} stages={}",
        schedule.register_bits(),
        schedule.num_stages()
    );

    let mut best = schedule.clone();
    let mut best_iteration = 0;
    let mut seen: HashSet<Vec<NodeId>> = HashSet::new();
    let mut evaluated: Vec<(Subgraph, u64)> = Vec::new();
    let mut next_id = 0u64;
    let mut unchanged = 0;

    for iteration in 1..=cfg.max_iterations {
        let t0 = Instant::now();
        let (mut picked, keys) = select_subgraphs(g, &schedule, &matrix, cfg, &seen);
        if picked.is_empty() {
            debug!("iteration {iteration}: no new subgraphs, stopping");
            break;
        }
        for sg in &mut picked {
            sg.id = next_id;
            next_id += 1;
        }
        let requests: Vec<OracleRequest> = picked
            .iter()
            .map(|sg| OracleRequest::from_subgraph(g, sg))
            .collect();

        let mut report = IterationReport {
            iteration,
            register_bits: 0,
            num_stages: 0,
            estimated_critical_path_ps: 0,
            subgraphs: Vec::new(),
            oracle_error: None,
            wall_time_ms: 0,
        };

        match oracle.evaluate_batch(&requests) {
            Ok(responses) => {
                for (sg, resp) in picked.iter().zip(&responses) {
                    debug_assert_eq!(sg.id, resp.subgraph_id);
                    report.subgraphs.push(describe(g, sg, resp.delay_ps));
                }
                seen.extend(keys);
                evaluated.extend(picked.into_iter().zip(responses.iter().map(|r| r.delay_ps)));
                matrix.update_with_feedback(evaluated.iter().map(|(sg, d)| (sg, *d)));
                matrix.propagate(g);
                schedule = solve_with(g, &matrix)?;
            }
            Err(e @ OracleError::Spawn { .. }) => return Err(EngineError::OracleSpawn(e)),
            Err(e) => {
                warn!("iteration {iteration}: oracle batch failed, keeping previous delays: {e}");
                report.oracle_error = Some(e.to_string());
            }
        }

        report.register_bits = schedule.register_bits();
        report.num_stages = schedule.num_stages();
        report.estimated_critical_path_ps = estimated_critical_path(g, &schedule, &matrix);
        report.wall_time_ms = t0.elapsed().as_millis() as u64;
        info!(
            "iteration {iteration}: register_bits={} stages={} subgraphs={}",
            report.register_bits,
            report.num_stages,
            report.subgraphs.len()
        );

        if schedule.register_bits() < best.register_bits() {
            best = schedule.clone();
            best_iteration = iteration;
        }
        let previous = reports
            .last()
            .expect("iteration 0 is recorded")
            .register_bits;
        reports.push(report);
        if schedule.register_bits() == previous {
            unchanged += 1;
            if unchanged >= cfg.stable_iterations {
                break;
            }
        } else {
            unchanged = 0;
        }
    }

    Ok(IsdcResult {
        best,
        best_iteration,
        reports,
        matrix,
    })
}

/// Per-iteration CSV. With `include_wall_time` false the timing column is
/// written as 0 so runs compare byte for byte.
pub fn reports_to_csv(reports: &[IterationReport], include_wall_time: bool) -> String {
    let mut out =
        String::from("iteration,register_bits,num_stages,estimated_cp_ps,subgraphs,wall_time_ms\n");
    for r in reports {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            r.iteration,
            r.register_bits,
            r.num_stages,
            r.estimated_critical_path_ps,
            r.subgraphs.len(),
            if include_wall_time { r.wall_time_ms } else { 0 }
        )
        .unwrap();
    }
    out
}

#[derive(Serialize)]
struct JsonReport<'a> {
    graph: &'a str,
    clock_period_ps: u64,
    best_iteration: usize,
    best_register_bits: u64,
    iterations: Vec<IterationReport>,
}

pub fn reports_to_json(g: &Graph, result: &IsdcResult, include_wall_time: bool) -> String {
    let iterations = result
        .reports
        .iter()
        .cloned()
        .map(|mut r| {
            if !include_wall_time {
                r.wall_time_ms = 0;
            }
            r
        })
        .collect();
    let report = JsonReport {
        graph: g.name(),
        clock_period_ps: g.clock_period_ps(),
        best_iteration: result.best_iteration,
        best_register_bits: result.best.register_bits(),
        iterations,
    };
    let mut text = serde_json::to_string_pretty(&report).expect("report serializes");
    text.push('\n');
    text
}
