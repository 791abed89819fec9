//! `nfchain` subcommands.
//!
//! Exit status: 0 on success, 1 when the input fails validation, 2 on a
//! runtime error, 64 on a usage error.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use nfchain_core::graph::ServiceGraph;
use nfchain_placement::{
    capacity_sweep, check_solution, parse_flows, parse_topology, run_algorithm, sweep_table, Algorithm, ExactConfig,
    SweepConfig, DEFAULT_BATCH,
};

use crate::builtin::{self, BUILTINS};
use crate::report::MetricsReport;
use crate::scenario::Scenario;
use crate::threaded::{self, run_threaded};
use crate::{run_scenario, HarnessError};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;
pub const EXIT_USAGE: i32 = 64;

#[derive(Parser, Debug)]
#[command(name = "nfchain", version, about = "NF chaining simulator and placement solvers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Check a service graph or scenario file and list every problem.
    Validate {
        /// File path or built-in scenario name.
        file: String,
    },
    /// Place flows on a topology and print the solution dump.
    Place {
        topology: PathBuf,
        flows: PathBuf,
        #[arg(long, default_value = "exact")]
        algo: Algorithm,
        /// Flows per exact search in the division heuristic.
        #[arg(long, default_value_t = DEFAULT_BATCH)]
        batch: usize,
        /// Compare every solver at these capacity scales instead.
        #[arg(long, value_delimiter = ',')]
        sweep: Vec<f64>,
        /// Search nodes the exact solver may expand.
        #[arg(long)]
        budget: Option<u64>,
        /// Write the dump here instead of standard output.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a scenario file or built-in scenario.
    Run {
        scenario: String,
        #[arg(long, value_enum, default_value = "sim")]
        mode: Mode,
        /// Overrides the scenario's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Directory for metrics, summary, dumps and charts.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Summarize a metrics file and draw its charts.
    Report {
        metrics: PathBuf,
        /// Directory for the charts; defaults to the metrics file's.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// List the built-in scenarios.
    Scenarios,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Mode {
    Sim,
    Threaded,
}

struct Failure {
    code: i32,
    message: String,
}

fn invalid(message: impl ToString) -> Failure {
    Failure { code: EXIT_INVALID, message: message.to_string() }
}

fn runtime(message: impl ToString) -> Failure {
    Failure { code: EXIT_RUNTIME, message: message.to_string() }
}

impl From<HarnessError> for Failure {
    fn from(e: HarnessError) -> Self {
        match e {
            HarnessError::Scenario(_) | HarnessError::Invalid(_) => invalid(e),
            _ => runtime(e),
        }
    }
}

/// Parses `args` (program name first), runs the command, and returns the
/// exit status.
pub fn main(args: impl IntoIterator<Item = impl Into<OsString> + Clone>, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = write!(out, "{e}");
                return EXIT_OK;
            }
            let _ = write!(err, "{e}");
            return EXIT_USAGE;
        }
    };
    match dispatch(cli.command, out, err) {
        Ok(()) => EXIT_OK,
        Err(f) => {
            let _ = writeln!(err, "error: {}", f.message);
            f.code
        }
    }
}

fn dispatch(cmd: Command, out: &mut dyn Write, err: &mut dyn Write) -> Result<(), Failure> {
    match cmd {
        Command::Validate { file } => validate(&file, out),
        Command::Place { topology, flows, algo, batch, sweep, budget, out: dest } => {
            place(&topology, &flows, algo, batch, &sweep, budget, dest.as_deref(), out, err)
        }
        Command::Run { scenario, mode, seed, out: dest } => run(&scenario, mode, seed, dest.as_deref(), out),
        Command::Report { metrics, out: dest } => report(&metrics, dest.as_deref(), out, err),
        Command::Scenarios => {
            for (name, _) in BUILTINS {
                let _ = writeln!(out, "{name}");
            }
            Ok(())
        }
    }
}

fn load_scenario(spec: &str, seed: Option<u64>) -> Result<Scenario, Failure> {
    let text = builtin::load(spec).map_err(runtime)?;
    let mut sc = Scenario::parse(&text).map_err(|e| invalid(format!("{spec}: {e}")))?;
    if let Some(s) = seed {
        sc.seed = s;
    }
    Ok(sc)
}

fn validate(file: &str, out: &mut dyn Write) -> Result<(), Failure> {
    let text = builtin::load(file).map_err(runtime)?;
    let is_scenario = builtin::builtin(file).is_some() || text.lines().any(|l| l.trim_start().starts_with('['));
    if is_scenario {
        let sc = load_scenario(file, None)?;
        sc.validate().map_err(|e| invalid(format!("{file}: {e}")))?;
        let _ = writeln!(out, "ok scenario {} ({} flows, {} nfs, {} events)", sc.name, sc.flows.len(), sc.nfs.len(), sc.events.len());
        return Ok(());
    }
    let name = Path::new(file).file_stem().and_then(|s| s.to_str()).unwrap_or("graph");
    let g = ServiceGraph::parse_named(name, &text).map_err(|e| invalid(format!("{file}: {e}")))?;
    match g.validate() {
        Ok(()) => {
            let _ = writeln!(out, "ok graph {} ({} services)", g.name, g.services().len());
            Ok(())
        }
        Err(violations) => {
            for v in &violations {
                let _ = writeln!(out, "violation: {v}");
            }
            Err(invalid(format!("{file}: {} violation(s)", violations.len())))
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn place(
    topology: &Path,
    flows: &Path,
    algo: Algorithm,
    batch: usize,
    sweep: &[f64],
    budget: Option<u64>,
    dest: Option<&Path>,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> Result<(), Failure> {
    let read = |p: &Path| std::fs::read_to_string(p).map_err(|e| runtime(format!("{}: {e}", p.display())));
    let topo = parse_topology(&read(topology)?).map_err(|e| invalid(format!("{}: {e}", topology.display())))?;
    let flows_text = read(flows)?;
    let specs = parse_flows(&flows_text).map_err(|e| invalid(format!("{}: {e}", flows.display())))?;
    let mut cfg = SweepConfig { batch: batch.max(1), ..SweepConfig::default() };
    cfg.exact = ExactConfig { node_budget: budget.unwrap_or(ExactConfig::default().node_budget), ..cfg.exact };
    let text = if sweep.is_empty() {
        let (sol, truncated) = run_algorithm(algo, &topo, &specs, &cfg).map_err(|e| match e {
            nfchain_placement::SolveError::Invalid(_) => invalid(e),
            other => runtime(other),
        })?;
        if truncated {
            let _ = writeln!(err, "note: search budget exhausted; reporting the best placement found");
        }
        if let Err(v) = check_solution(&topo, &specs, &sol) {
            let list: Vec<String> = v.iter().map(ToString::to_string).collect();
            return Err(runtime(format!("solver produced an infeasible placement: {}", list.join("; "))));
        }
        sol.dump(&specs)
    } else {
        let rows = capacity_sweep(&topo, &specs, sweep, &cfg).map_err(runtime)?;
        if rows.iter().any(|r| !r.verified) {
            let _ = write!(out, "{}", sweep_table(&rows));
            return Err(runtime("a solver produced an infeasible placement"));
        }
        sweep_table(&rows)
    };
    match dest {
        Some(p) => std::fs::write(p, text).map_err(|e| runtime(format!("{}: {e}", p.display())))?,
        None => {
            let _ = write!(out, "{text}");
        }
    }
    Ok(())
}

fn run(spec: &str, mode: Mode, seed: Option<u64>, dest: Option<&Path>, out: &mut dyn Write) -> Result<(), Failure> {
    let sc = load_scenario(spec, seed)?;
    let report = match mode {
        Mode::Sim => run_scenario(&sc)?.0,
        Mode::Threaded => {
            sc.validate().map_err(HarnessError::from)?;
            let r = run_threaded(&sc)?;
            let summary = threaded::summary(&sc, &r);
            if !r.clean() {
                let _ = write!(out, "{}", summary.iter().map(|(k, v)| format!("{k}={v}\n")).collect::<String>());
                return Err(runtime("threaded run left packets or buffers behind"));
            }
            let mut m = nfchain_core::metrics::Metrics::new(sc.duration.max(1));
            m.add(0, "egress", r.egress as i64);
            for (k, v) in &r.counters.0 {
                m.add(0, k, *v as i64);
            }
            MetricsReport { metrics: m, summary, ..MetricsReport::default() }
        }
    };
    let _ = write!(out, "{}", report.summary_text());
    if let Some(dir) = dest {
        report.write(dir).map_err(|e| runtime(format!("{}: {e}", dir.display())))?;
    }
    Ok(())
}

fn report(metrics: &Path, dest: Option<&Path>, out: &mut dyn Write, err: &mut dyn Write) -> Result<(), Failure> {
    let text = std::fs::read_to_string(metrics).map_err(|e| runtime(format!("{}: {e}", metrics.display())))?;
    let report = MetricsReport::parse_metrics(&text).map_err(|e| invalid(format!("{}: {e}", metrics.display())))?;
    let _ = write!(out, "{}", report.stats_text());
    let dir = dest.map(Path::to_path_buf).unwrap_or_else(|| metrics.parent().map(Path::to_path_buf).unwrap_or_default());
    std::fs::create_dir_all(&dir).map_err(|e| runtime(format!("{}: {e}", dir.display())))?;
    for (name, svg) in report.charts() {
        let p = dir.join(name);
        std::fs::write(&p, svg).map_err(|e| runtime(format!("{}: {e}", p.display())))?;
        let _ = writeln!(err, "wrote {}", p.display());
    }
    Ok(())
}
