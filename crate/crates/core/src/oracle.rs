//! Delay oracles: anything that can report the realized delay of a
//! combinational subgraph.
//!
//! Two deterministic in-process models ship with the crate ([`ScaleModel`]
//! and [`DepthModel`]). External tools plug in through [`ExternalOracle`],
//! which speaks a line-delimited JSON protocol over a child process's
//! standard input and output:
//!
//! * one request object per line on the child's stdin;
//! * one `{"subgraph_id", "delay_ps"}` object per request on its stdout, in
//!   any order;
//! * stdin is closed at the end of the batch and the child must exit 0.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::{self, BufRead, BufReader, Write};
use std::path::Path;
use std::process::{Command, Stdio};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{mpsc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use num_rational::Ratio;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::extract::Subgraph;
use crate::graph::{Graph, INPUT_OP};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(300);

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RequestNode {
    pub id: String,
    pub op: String,
    pub bits: u32,
    pub delay_ps: u64,
    /// Operands inside the subgraph.
    pub operands: Vec<String>,
    /// Operands produced outside the subgraph.
    #[serde(default)]
    pub external_operands: Vec<String>,
}

/// A self-contained description of one subgraph to evaluate.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OracleRequest {
    pub subgraph_id: u64,
    pub clock_period_ps: u64,
    pub nodes: Vec<RequestNode>,
    pub leaves: Vec<String>,
    pub roots: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OracleResponse {
    pub subgraph_id: u64,
    pub delay_ps: u64,
}

impl OracleRequest {
    /// Nodes are listed in topological order.
    pub fn from_subgraph(g: &Graph, sg: &Subgraph) -> Self {
        let mut members: Vec<_> = sg.nodes.iter().copied().collect();
        members.sort_by_key(|&v| g.topo_position(v));
        let nodes = members
            .iter()
            .map(|&v| {
                let node = g.node(v);
                let (inside, outside): (Vec<_>, Vec<_>) =
                    g.operands(v).iter().partition(|p| sg.nodes.contains(p));
                RequestNode {
                    id: node.id.clone(),
                    op: node.op.clone(),
                    bits: node.bits,
                    delay_ps: node.delay_ps,
                    operands: inside.iter().map(|&&p| g.name_of(p).to_string()).collect(),
                    external_operands: outside.iter().map(|&&p| g.name_of(p).to_string()).collect(),
                }
            })
            .collect();
        Self {
            subgraph_id: sg.id,
            clock_period_ps: g.clock_period_ps(),
            nodes,
            leaves: sg
                .leaves
                .iter()
                .map(|&v| g.name_of(v).to_string())
                .collect(),
            roots: sg.roots.iter().map(|&v| g.name_of(v).to_string()).collect(),
        }
    }

    /// Longest path to any root, weighting each node by `weight`.
    fn longest_to_roots(&self, weight: impl Fn(&RequestNode) -> u64) -> u64 {
        let index: HashMap<&str, usize> = self
            .nodes
            .iter()
            .enumerate()
            .map(|(i, n)| (n.id.as_str(), i))
            .collect();
        let mut memo: Vec<Option<u64>> = vec![None; self.nodes.len()];
        let mut entered = vec![false; self.nodes.len()];
        // Iterative post-order; requests need not be ordered. Back edges of a
        // malformed cyclic request are ignored.
        let mut arrival = |root: usize| -> u64 {
            let mut stack = vec![(root, false)];
            while let Some((i, expanded)) = stack.pop() {
                if memo[i].is_some() || (!expanded && entered[i]) {
                    continue;
                }
                entered[i] = true;
                let ops = self.nodes[i]
                    .operands
                    .iter()
                    .filter_map(|o| index.get(o.as_str()).copied());
                if expanded {
                    let best = ops.filter_map(|j| memo[j]).max().unwrap_or(0);
                    memo[i] = Some(best + weight(&self.nodes[i]));
                } else {
                    stack.push((i, true));
                    stack.extend(
                        ops.filter(|&j| memo[j].is_none() && !entered[j])
                            .map(|j| (j, false)),
                    );
                }
            }
            memo[root].unwrap_or(0)
        };
        let roots: Vec<usize> = if self.roots.is_empty() {
            (0..self.nodes.len()).collect()
        } else {
            self.roots
                .iter()
                .filter_map(|r| index.get(r.as_str()).copied())
                .collect()
        };
        roots.into_iter().map(&mut arrival).max().unwrap_or(0)
    }

    fn max_node_delay(&self) -> u64 {
        self.nodes.iter().map(|n| n.delay_ps).max().unwrap_or(0)
    }
}

/// Sum of individual delays along the longest leaf-to-root path.
pub fn naive_subgraph_delay(req: &OracleRequest) -> u64 {
    req.longest_to_roots(|n| n.delay_ps)
}

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("failed to spawn oracle command {command:?}: {source}")]
    Spawn { command: String, source: io::Error },
    #[error("oracle process exited with {status} (subgraph {subgraph_id:?} outstanding)")]
    Exit {
        status: String,
        subgraph_id: Option<u64>,
    },
    #[error("oracle timed out after {timeout:?} (subgraph {subgraph_id:?} outstanding)")]
    Timeout {
        timeout: Duration,
        subgraph_id: Option<u64>,
    },
    #[error("oracle protocol violation (subgraph {subgraph_id:?}): {message}")]
    Protocol {
        subgraph_id: Option<u64>,
        message: String,
    },
    #[error("oracle i/o error: {0}")]
    Io(#[from] io::Error),
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid scale factor {0:?}: expected a decimal in (0, 1]")]
    Beta(String),
    #[error("invalid depth table: {0}")]
    DepthTable(String),
}

/// Anything that turns a batch of requests into one response per request.
pub trait Oracle: Sync {
    /// Responses are sorted by `subgraph_id`.
    fn evaluate_batch(&self, reqs: &[OracleRequest]) -> Result<Vec<OracleResponse>, OracleError>;
}

/// A pure per-request delay model.
pub trait DelayModel: Sync {
    fn delay(&self, req: &OracleRequest) -> u64;
}

/// Uniform logic-optimization benefit:
/// `max(floor(beta * naive), max node delay)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScaleModel {
    beta: Ratio<u64>,
}

impl ScaleModel {
    pub fn new(beta: Ratio<u64>) -> Result<Self, ModelError> {
        if *beta.numer() == 0 || beta > Ratio::from_integer(1) {
            return Err(ModelError::Beta(beta.to_string()));
        }
        Ok(Self { beta })
    }

    /// Parses a decimal such as `0.7` exactly.
    pub fn parse(text: &str) -> Result<Self, ModelError> {
        let err = || ModelError::Beta(text.to_string());
        let text = text.trim();
        let (whole, frac) = text.split_once('.').unwrap_or((text, ""));
        if whole.is_empty() && frac.is_empty()
            || !whole.chars().all(|c| c.is_ascii_digit())
            || !frac.chars().all(|c| c.is_ascii_digit())
            || frac.len() > 9
        {
            return Err(err());
        }
        let den = 10u64.pow(frac.len() as u32);
        let whole: u64 = if whole.is_empty() {
            0
        } else {
            whole.parse().map_err(|_| err())?
        };
        let frac: u64 = if frac.is_empty() {
            0
        } else {
            frac.parse().map_err(|_| err())?
        };
        let num = whole
            .checked_mul(den)
            .and_then(|w| w.checked_add(frac))
            .ok_or_else(err)?;
        Self::new(Ratio::new(num, den)).map_err(|_| err())
    }

    pub fn beta(&self) -> Ratio<u64> {
        self.beta
    }
}

impl DelayModel for ScaleModel {
    fn delay(&self, req: &OracleRequest) -> u64 {
        let naive = naive_subgraph_delay(req) as u128;
        let scaled = naive * *self.beta.numer() as u128 / *self.beta.denom() as u128;
        (scaled as u64).max(req.max_node_delay()).max(1)
    }
}

/// Logic-depth model: longest path by per-op depth, times a unit delay.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DepthModel {
    pub depth_unit_ps: u64,
    /// Depth per op name; the key `other` is the fallback.
    pub depths: BTreeMap<String, u64>,
}

impl DepthModel {
    pub const FALLBACK_KEY: &'static str = "other";

    pub fn from_json(text: &str) -> Result<Self, ModelError> {
        let model: Self =
            serde_json::from_str(text).map_err(|e| ModelError::DepthTable(e.to_string()))?;
        if model.depth_unit_ps == 0 {
            return Err(ModelError::DepthTable(
                "depth_unit_ps must be positive".into(),
            ));
        }
        Ok(model)
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ModelError::DepthTable(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    fn depth_of(&self, op: &str) -> u64 {
        if op == INPUT_OP {
            return 0;
        }
        self.depths
            .get(op)
            .or_else(|| self.depths.get(Self::FALLBACK_KEY))
            .copied()
            .unwrap_or(1)
    }
}

impl DelayModel for DepthModel {
    fn delay(&self, req: &OracleRequest) -> u64 {
        let depth = req.longest_to_roots(|n| self.depth_of(&n.op));
        (depth * self.depth_unit_ps).max(1)
    }
}

/// Runs a [`DelayModel`] in-process on up to `parallelism` threads.
#[derive(Debug, Clone)]
pub struct ModelOracle<M> {
    pub model: M,
    pub parallelism: usize,
}

impl<M: DelayModel> ModelOracle<M> {
    pub fn new(model: M, parallelism: usize) -> Self {
        Self {
            model,
            parallelism: parallelism.max(1),
        }
    }
}

impl<M: DelayModel> Oracle for ModelOracle<M> {
    fn evaluate_batch(&self, reqs: &[OracleRequest]) -> Result<Vec<OracleResponse>, OracleError> {
        let workers = self.parallelism.min(reqs.len());
        let mut out = if workers <= 1 {
            reqs.iter()
                .map(|r| OracleResponse {
                    subgraph_id: r.subgraph_id,
                    delay_ps: self.model.delay(r),
                })
                .collect()
        } else {
            let next = AtomicUsize::new(0);
            let results = Mutex::new(Vec::with_capacity(reqs.len()));
            thread::scope(|scope| {
                for _ in 0..workers {
                    scope.spawn(|| loop {
                        let i = next.fetch_add(1, Ordering::Relaxed);
                        let Some(r) = reqs.get(i) else { break };
                        let resp = OracleResponse {
                            subgraph_id: r.subgraph_id,
                            delay_ps: self.model.delay(r),
                        };
                        results.lock().unwrap().push(resp);
                    });
                }
            });
            results.into_inner().unwrap()
        };
        out.sort_by_key(|r| r.subgraph_id);
        Ok(out)
    }
}

/// An external oracle process, spawned once per batch.
#[derive(Debug, Clone)]
pub struct ExternalOracle {
    program: String,
    args: Vec<String>,
    timeout: Duration,
}

impl ExternalOracle {
    /// `command` is split with POSIX shell quoting rules.
    pub fn parse(command: &str, timeout: Duration) -> Result<Self, OracleError> {
        let words = shlex::split(command).filter(|w| !w.is_empty());
        let Some(mut words) = words else {
            return Err(OracleError::Spawn {
                command: command.to_string(),
                source: io::Error::new(io::ErrorKind::InvalidInput, "empty or unbalanced command"),
            });
        };
        let program = words.remove(0);
        Ok(Self {
            program,
            args: words,
            timeout,
        })
    }

    pub fn command_line(&self) -> String {
        std::iter::once(self.program.as_str())
            .chain(self.args.iter().map(String::as_str))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

enum ChildEvent {
    Line(String),
    Eof,
    Failed(io::Error),
}

impl Oracle for ExternalOracle {
    fn evaluate_batch(&self, reqs: &[OracleRequest]) -> Result<Vec<OracleResponse>, OracleError> {
        let deadline = Instant::now() + self.timeout;
        let mut child = Command::new(&self.program)
            .args(&self.args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|source| OracleError::Spawn {
                command: self.command_line(),
                source,
            })?;

        let mut stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let mut payload = Vec::new();
        for r in reqs {
            serde_json::to_writer(&mut payload, r).expect("request serializes");
            payload.push(b'\n');
        }
        // A child that dies early surfaces as a broken pipe; its exit status
        // is the more useful error, so write failures are ignored here.
        let writer = thread::spawn(move || {
            let _ = stdin.write_all(&payload);
        });

        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            let mut reader = BufReader::new(stdout);
            loop {
                let mut line = String::new();
                let event = match reader.read_line(&mut line) {
                    Ok(0) => ChildEvent::Eof,
                    Ok(_) => ChildEvent::Line(line),
                    Err(e) => ChildEvent::Failed(e),
                };
                let stop = !matches!(event, ChildEvent::Line(_));
                if tx.send(event).is_err() || stop {
                    break;
                }
            }
        });

        let outstanding: HashSet<u64> = reqs.iter().map(|r| r.subgraph_id).collect();
        let mut got: BTreeMap<u64, u64> = BTreeMap::new();
        let first_missing = |got: &BTreeMap<u64, u64>| {
            reqs.iter()
                .map(|r| r.subgraph_id)
                .find(|id| !got.contains_key(id))
        };

        let result = (|| loop {
            let now = Instant::now();
            let remaining = deadline.saturating_duration_since(now);
            let event = match rx.recv_timeout(remaining) {
                Ok(ev) => ev,
                Err(_) => {
                    return Err(OracleError::Timeout {
                        timeout: self.timeout,
                        subgraph_id: first_missing(&got),
                    })
                }
            };
            match event {
                ChildEvent::Line(line) => {
                    if line.trim().is_empty() {
                        continue;
                    }
                    let resp: OracleResponse =
                        serde_json::from_str(line.trim()).map_err(|e| OracleError::Protocol {
                            subgraph_id: first_missing(&got),
                            message: format!("malformed response line: {e}"),
                        })?;
                    let id = resp.subgraph_id;
                    if !outstanding.contains(&id) {
                        return Err(OracleError::Protocol {
                            subgraph_id: Some(id),
                            message: "response for unknown subgraph".into(),
                        });
                    }
                    if resp.delay_ps == 0 {
                        return Err(OracleError::Protocol {
                            subgraph_id: Some(id),
                            message: "delay_ps must be positive".into(),
                        });
                    }
                    if got.insert(id, resp.delay_ps).is_some() {
                        return Err(OracleError::Protocol {
                            subgraph_id: Some(id),
                            message: "duplicate response".into(),
                        });
                    }
                }
                ChildEvent::Eof => return Ok(()),
                ChildEvent::Failed(e) => return Err(OracleError::Io(e)),
            }
        })();

        if let Err(e) = result {
            let _ = child.kill();
            let _ = child.wait();
            return Err(e);
        }
        let _ = writer.join();

        let status = loop {
            if let Some(status) = child.try_wait()? {
                break status;
            }
            if Instant::now() >= deadline {
                let _ = child.kill();
                let _ = child.wait();
                return Err(OracleError::Timeout {
                    timeout: self.timeout,
                    subgraph_id: first_missing(&got),
                });
            }
            thread::sleep(Duration::from_millis(2));
        };
        if !status.success() {
            return Err(OracleError::Exit {
                status: status.to_string(),
                subgraph_id: first_missing(&got),
            });
        }
        if let Some(missing) = first_missing(&got) {
            return Err(OracleError::Protocol {
                subgraph_id: Some(missing),
                message: "no response before end of output".into(),
            });
        }
        Ok(got
            .into_iter()
            .map(|(subgraph_id, delay_ps)| OracleResponse {
                subgraph_id,
                delay_ps,
            })
            .collect())
    }
}

#[derive(Debug, Error)]
pub enum ServeError {
    #[error("malformed request on line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
}

/// Answers protocol requests from `input` until it closes. This is the
/// child side of [`ExternalOracle`].
pub fn serve<M: DelayModel>(
    model: &M,
    input: impl BufRead,
    mut output: impl Write,
) -> Result<(), ServeError> {
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let req: OracleRequest =
            serde_json::from_str(&line).map_err(|e| ServeError::Malformed {
                line: i + 1,
                message: e.to_string(),
            })?;
        let resp = OracleResponse {
            subgraph_id: req.subgraph_id,
            delay_ps: model.delay(&req),
        };
        serde_json::to_writer(&mut output, &resp).expect("response serializes");
        output.write_all(b"\n")?;
        output.flush()?;
    }
    Ok(())
}
