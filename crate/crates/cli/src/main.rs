use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

use isdc::engine::{reports_to_csv, reports_to_json};
use isdc::generate::{generate_layered_graph, OpDistribution};
use isdc::oracle::{serve, ServeError};
use isdc::{
    parse_graph, run_isdc, run_sdc, DepthModel, EngineError, ExternalOracle, Graph, IsdcConfig,
    ModelOracle, Oracle, RankStrategy, ScaleModel, ShapeStrategy,
};

const EXIT_PARSE: u8 = 1;
const EXIT_INFEASIBLE: u8 = 2;
const EXIT_ORACLE_SPAWN: u8 = 3;
const EXIT_PROTOCOL: u8 = 4;

/// Pipeline scheduling with iterative delay feedback.
///
/// Set ISDC_LOG (e.g. ISDC_LOG=debug) for progress logging on stderr.
#[derive(Parser)]
#[command(name = "isdc", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Plain SDC schedule on naive delay estimates.
    Schedule(ScheduleArgs),
    /// Iterative scheduling with oracle feedback.
    Isdc(IsdcArgs),
    /// Serve oracle requests on stdin/stdout with a built-in delay model.
    OracleSim(OracleSimArgs),
    /// Write a seeded random layered graph.
    Generate(GenerateArgs),
}

#[derive(Args)]
struct ScheduleArgs {
    /// Graph file (JSON).
    input: PathBuf,
    /// Override the graph's clock period.
    #[arg(long)]
    clock_period_ps: Option<u64>,
    /// Write the schedule JSON here.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write the delay matrix CSV here.
    #[arg(long)]
    dump_matrix: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum StrategyArg {
    Delay,
    Fanout,
}

#[derive(Clone, Copy, ValueEnum)]
enum ShapeArg {
    Path,
    Cone,
    Window,
}

#[derive(Clone, Debug)]
enum OracleSpec {
    Scale(ScaleModel),
    Depth(PathBuf),
    Exec(String),
}

impl FromStr for OracleSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let (kind, rest) = s.split_once(':').ok_or_else(|| {
            format!("expected scale:<beta>, depth:<file> or exec:<command>, got {s:?}")
        })?;
        match kind {
            "scale" => ScaleModel::parse(rest)
                .map(Self::Scale)
                .map_err(|e| e.to_string()),
            "depth" if !rest.is_empty() => Ok(Self::Depth(rest.into())),
            "exec" if !rest.trim().is_empty() => Ok(Self::Exec(rest.into())),
            _ => Err(format!(
                "expected scale:<beta>, depth:<file> or exec:<command>, got {s:?}"
            )),
        }
    }
}

#[derive(Args)]
struct IsdcArgs {
    /// Graph file (JSON).
    input: PathBuf,
    /// Override the graph's clock period.
    #[arg(long)]
    clock_period_ps: Option<u64>,
    /// Candidate ranking.
    #[arg(long, value_enum, default_value = "fanout")]
    strategy: StrategyArg,
    /// Subgraph shape sent to the oracle.
    #[arg(long, value_enum, default_value = "window")]
    shape: ShapeArg,
    #[arg(long, default_value_t = 16)]
    subgraphs_per_iter: usize,
    #[arg(long, default_value_t = 15)]
    max_iterations: usize,
    /// Stop after this many iterations without a change in register bits.
    #[arg(long, default_value_t = 3)]
    stable_iterations: usize,
    /// Node limit for merged windows.
    #[arg(long, default_value_t = 64)]
    window_cap: usize,
    /// scale:<beta>, depth:<table file> or exec:<command>.
    #[arg(long, default_value = "scale:0.7")]
    oracle: OracleSpec,
    /// Concurrent evaluations for built-in models [default: available CPUs].
    #[arg(long)]
    parallelism: Option<usize>,
    /// Per-batch timeout for exec oracles.
    #[arg(long, default_value_t = 300)]
    oracle_timeout_s: u64,
    /// Per-iteration CSV report; the JSON report goes next to it. Printed to
    /// stdout when omitted.
    #[arg(long)]
    report: Option<PathBuf>,
    /// JSON report path, overriding the one next to --report.
    #[arg(long)]
    json_report: Option<PathBuf>,
    /// Write the best schedule JSON here.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write 0 for wall-time fields so reports compare byte for byte.
    #[arg(long)]
    omit_wall_time: bool,
}

#[derive(Args)]
#[group(required = true, multiple = false)]
struct OracleSimArgs {
    /// Scale model factor in (0, 1].
    #[arg(long)]
    scale: Option<String>,
    /// Depth model table file.
    #[arg(long)]
    depth: Option<PathBuf>,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 10)]
    layers: usize,
    #[arg(long, default_value_t = 10)]
    width: usize,
    /// Output file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn new(code: u8, message: impl ToString) -> Self {
        Self {
            code,
            message: message.to_string(),
        }
    }
}

impl From<EngineError> for Failure {
    fn from(e: EngineError) -> Self {
        let code = match e {
            EngineError::Infeasible { .. } => EXIT_INFEASIBLE,
            EngineError::Config(_) => EXIT_PARSE,
            EngineError::OracleSpawn(_) => EXIT_ORACLE_SPAWN,
        };
        Self::new(code, e)
    }
}

type CliResult = Result<(), Failure>;

fn load_graph(path: &Path, clock_period_ps: Option<u64>) -> Result<Graph, Failure> {
    let text = fs::read_to_string(path)
        .map_err(|e| Failure::new(EXIT_PARSE, format!("{}: {e}", path.display())))?;
    let g = parse_graph(&text)
        .map_err(|e| Failure::new(EXIT_PARSE, format!("{}: {e}", path.display())))?;
    match clock_period_ps {
        Some(t) => g
            .with_clock_period(t)
            .map_err(|e| Failure::new(EXIT_PARSE, e)),
        None => Ok(g),
    }
}

fn write_file(path: &Path, contents: &str) -> CliResult {
    fs::write(path, contents)
        .map_err(|e| Failure::new(EXIT_PARSE, format!("{}: {e}", path.display())))
}

fn cmd_schedule(args: ScheduleArgs) -> CliResult {
    let g = load_graph(&args.input, args.clock_period_ps)?;
    let (s, m) = run_sdc(&g)?;
    if let Some(path) = &args.out {
        write_file(path, &s.to_json(&g))?;
    }
    if let Some(path) = &args.dump_matrix {
        write_file(path, &m.to_csv(&g))?;
    }
    println!(
        "stages={} register_bits={}",
        s.num_stages(),
        s.register_bits()
    );
    Ok(())
}

fn cmd_isdc(args: IsdcArgs) -> CliResult {
    let g = load_graph(&args.input, args.clock_period_ps)?;
    let cfg = IsdcConfig {
        strategy_rank: match args.strategy {
            StrategyArg::Delay => RankStrategy::DelayDriven,
            StrategyArg::Fanout => RankStrategy::FanoutDriven,
        },
        strategy_shape: match args.shape {
            ShapeArg::Path => ShapeStrategy::Path,
            ShapeArg::Cone => ShapeStrategy::Cone,
            ShapeArg::Window => ShapeStrategy::Window,
        },
        subgraphs_per_iter: args.subgraphs_per_iter,
        max_iterations: args.max_iterations,
        stable_iterations: args.stable_iterations,
        window_cap: args.window_cap,
    };
    cfg.validate()?;
    let parallelism = args
        .parallelism
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let oracle: Box<dyn Oracle> = match &args.oracle {
        OracleSpec::Scale(model) => Box::new(ModelOracle::new(*model, parallelism)),
        OracleSpec::Depth(path) => {
            let model = DepthModel::load(path).map_err(|e| Failure::new(EXIT_PARSE, e))?;
            Box::new(ModelOracle::new(model, parallelism))
        }
        OracleSpec::Exec(command) => Box::new(
            ExternalOracle::parse(command, Duration::from_secs(args.oracle_timeout_s))
                .map_err(|e| Failure::new(EXIT_ORACLE_SPAWN, e))?,
        ),
    };

    let result = run_isdc(&g, &cfg, oracle.as_ref())?;
    let include_wall_time = !args.omit_wall_time;
    let csv = reports_to_csv(&result.reports, include_wall_time);
    let json = reports_to_json(&g, &result, include_wall_time);
    let json_path = args
        .json_report
        .clone()
        .or_else(|| args.report.as_ref().map(|p| p.with_extension("json")));
    match &args.report {
        Some(path) => write_file(path, &csv)?,
        None => print!("{csv}"),
    }
    if let Some(path) = &json_path {
        write_file(path, &json)?;
    }
    if let Some(path) = &args.out {
        write_file(path, &result.best.to_json(&g))?;
    }
    info!("best schedule from iteration {}", result.best_iteration);
    println!(
        "stages={} register_bits={} best_iteration={}",
        result.best.num_stages(),
        result.best.register_bits(),
        result.best_iteration
    );
    Ok(())
}

fn cmd_oracle_sim(args: OracleSimArgs) -> CliResult {
    let stdin = io::stdin().lock();
    let stdout = BufWriter::new(io::stdout().lock());
    let served = match (&args.scale, &args.depth) {
        (Some(beta), _) => {
            let model = ScaleModel::parse(beta).map_err(|e| Failure::new(EXIT_PARSE, e))?;
            serve(&model, stdin, stdout)
        }
        (None, Some(path)) => {
            let model = DepthModel::load(path).map_err(|e| Failure::new(EXIT_PARSE, e))?;
            serve(&model, stdin, stdout)
        }
        (None, None) => unreachable!("clap requires one model"),
    };
    served.map_err(|e: ServeError| Failure::new(EXIT_PROTOCOL, e))
}

fn cmd_generate(args: GenerateArgs) -> CliResult {
    if args.layers == 0 || args.width == 0 {
        return Err(Failure::new(
            EXIT_PARSE,
            "--layers and --width must be positive",
        ));
    }
    let g = generate_layered_graph(
        args.seed,
        args.layers,
        args.width,
        &OpDistribution::default(),
    );
    match &args.out {
        Some(path) => write_file(path, &g.to_json()),
        None => {
            let mut out = io::stdout().lock();
            out.write_all(g.to_json().as_bytes())
                .map_err(|e| Failure::new(EXIT_PARSE, e))
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("ISDC_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_PARSE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match cli.command {
        Command::Schedule(args) => cmd_schedule(args),
        Command::Isdc(args) => cmd_isdc(args),
        Command::OracleSim(args) => cmd_oracle_sim(args),
        Command::Generate(args) => cmd_generate(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("isdc: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
