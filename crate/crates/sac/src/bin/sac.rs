//! Command-line front end.
//!
//! Exit codes: 0 success, 1 config error, 2 robustness verification
//! failure, 3 runtime failure.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use sac::graph::{self, UndirectedGraph};
use sac::harness::{self, ExperimentConfig, HarnessError};
use sac::metrics;

#[derive(Parser)]
#[command(name = "sac", about = "Byzantine-resilient multi-agent answer consensus simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment from a config file
    Run(RunArgs),
    /// Run every config in a directory, continuing past failures
    Sweep(SweepArgs),
    /// Graph utilities
    Graph(GraphArgs),
    /// Recompute the metrics report from archived traces
    Report(ReportArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Experiment config (TOML)
    #[arg(long)]
    config: PathBuf,
    /// Override the config's seed
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for traces.jsonl and report.csv
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    /// Directory of *.toml configs
    #[arg(long)]
    config_dir: PathBuf,
}

#[derive(Args)]
struct GraphArgs {
    #[command(subcommand)]
    command: GraphCommand,
}

#[derive(Subcommand)]
enum GraphCommand {
    /// Verify r-robustness of a graph in adjacency-list format
    Check {
        #[arg(long)]
        file: PathBuf,
        #[arg(long)]
        r: usize,
    },
    /// Construct a topology and write it in adjacency-list format
    Build {
        #[arg(long)]
        topology: TopologyArg,
        #[arg(long)]
        n: usize,
        /// Robustness parameter (preferential and erdos-renyi)
        #[arg(long)]
        r: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 50)]
        max_attempts: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum TopologyArg {
    Merg,
    Complete,
    Preferential,
    ErdosRenyi,
}

#[derive(Args)]
struct ReportArgs {
    /// Directory of *.jsonl trace archives
    #[arg(long)]
    traces: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {}", e);
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn dispatch(command: Command) -> Result<ExitCode, HarnessError> {
    match command {
        Command::Run(args) => cmd_run(args),
        Command::Sweep(args) => cmd_sweep(args),
        Command::Graph(args) => match args.command {
            GraphCommand::Check { file, r } => cmd_graph_check(&file, r),
            GraphCommand::Build {
                topology,
                n,
                r,
                seed,
                max_attempts,
                out,
            } => cmd_graph_build(topology, n, r, seed, max_attempts, &out),
        },
        Command::Report(args) => cmd_report(&args.traces),
    }
}

fn cmd_run(args: RunArgs) -> Result<ExitCode, HarnessError> {
    let mut config = ExperimentConfig::from_file(&args.config)?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    let out_dir = args.out.or_else(|| config.output.clone());
    let output = harness::run_experiment(&config)?;
    for warning in &output.diagnostics.warnings {
        eprintln!("warning: {}", warning);
    }
    println!("{}", metrics::report_header());
    println!("{}", output.row);
    if let Some(dir) = out_dir {
        fs::create_dir_all(&dir).map_err(|e| HarnessError::Runtime(e.to_string()))?;
        let traces = dir.join("traces.jsonl");
        let mut body = output.archive.join("\n");
        body.push('\n');
        fs::write(&traces, body).map_err(|e| HarnessError::Runtime(e.to_string()))?;
        let report = dir.join("report.csv");
        fs::write(
            &report,
            format!("{}\n{}\n", metrics::report_header(), output.row),
        )
        .map_err(|e| HarnessError::Runtime(e.to_string()))?;
        eprintln!("wrote {} and {}", traces.display(), report.display());
    }
    Ok(ExitCode::SUCCESS)
}

fn toml_files(dir: &Path) -> Result<Vec<PathBuf>, HarnessError> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| HarnessError::Config(format!("{}: {}", dir.display(), e)))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|ext| ext == "toml"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(HarnessError::Config(format!(
            "{}: no .toml configs found",
            dir.display()
        )));
    }
    Ok(paths)
}

fn cmd_sweep(args: SweepArgs) -> Result<ExitCode, HarnessError> {
    let paths = toml_files(&args.config_dir)?;
    let out = harness::sweep(&paths);
    println!("{}", metrics::report_header());
    for row in &out.rows {
        println!("{}", row);
    }
    for (path, err) in &out.failures {
        eprintln!("failed: {}: {}", path.display(), err);
    }
    if out.rows.is_empty() {
        return Err(HarnessError::Runtime("all sweep configs failed".into()));
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_graph_check(file: &Path, r: usize) -> Result<ExitCode, HarnessError> {
    let text =
        fs::read_to_string(file).map_err(|e| HarnessError::Config(format!("{}: {}", file.display(), e)))?;
    let graph = UndirectedGraph::from_adjacency_text(&text)
        .map_err(|e| HarnessError::Config(e.to_string()))?;
    let robust = graph
        .is_r_robust(r)
        .map_err(|e| HarnessError::Config(e.to_string()))?;
    if robust {
        println!(
            "graph with {} nodes / {} edges: {}-robust",
            graph.node_count(),
            graph.edge_count(),
            r
        );
        Ok(ExitCode::SUCCESS)
    } else {
        println!(
            "graph with {} nodes / {} edges: NOT {}-robust",
            graph.node_count(),
            graph.edge_count(),
            r
        );
        Ok(ExitCode::from(2))
    }
}

fn cmd_graph_build(
    topology: TopologyArg,
    n: usize,
    r: Option<usize>,
    seed: Option<u64>,
    max_attempts: usize,
    out: &Path,
) -> Result<ExitCode, HarnessError> {
    let need_r = || r.ok_or_else(|| HarnessError::Config("--r is required for this topology".into()));
    let graph = match topology {
        TopologyArg::Merg => graph::build_merg(n)?,
        TopologyArg::Complete => graph::build_complete(n)?,
        TopologyArg::Preferential => graph::build_preferential(n, need_r()?, seed)?,
        TopologyArg::ErdosRenyi => {
            graph::build_erdos_renyi(n, need_r()?, seed.unwrap_or(0), max_attempts)?
        }
    };
    fs::write(out, graph.to_adjacency_text()).map_err(|e| HarnessError::Runtime(e.to_string()))?;
    println!(
        "wrote {} ({} nodes, {} edges)",
        out.display(),
        graph.node_count(),
        graph.edge_count()
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_report(traces: &Path) -> Result<ExitCode, HarnessError> {
    let mut paths: Vec<PathBuf> = fs::read_dir(traces)
        .map_err(|e| HarnessError::Config(format!("{}: {}", traces.display(), e)))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|ext| ext == "jsonl"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(HarnessError::Config(format!(
            "{}: no .jsonl archives found",
            traces.display()
        )));
    }
    println!("{}", metrics::report_header());
    for path in paths {
        let text =
            fs::read_to_string(&path).map_err(|e| HarnessError::Runtime(e.to_string()))?;
        let lines: Vec<String> = text.lines().map(String::from).collect();
        let (_, row) = harness::recompute_from_archive(&lines)?;
        println!("{}", row);
    }
    Ok(ExitCode::SUCCESS)
}
