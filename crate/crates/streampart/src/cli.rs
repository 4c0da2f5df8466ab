//! Command-line front end.
//!
//! Exit codes: 0 success, 1 invalid input, 2 infeasible or unbounded model,
//! 3 internal error. With `--json`, stdout is a single valid JSON document
//! on every path, success or failure. No file is written on a nonzero exit.

use std::ffi::OsString;
use std::fs;
use std::io::{self, Write};
use std::path::PathBuf;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use crate::evaluate::{self, EvalError};
use crate::model::{self, ProblemSpec};
use crate::simulate::{self, SimConfig, SimError};
use crate::solve::{self, milp, SolveError, SolveOptions};
use crate::{calibrate, rates};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 1;
pub const EXIT_INFEASIBLE: i32 = 2;
pub const EXIT_INTERNAL: i32 = 3;

const VERSION: &str = concat!(
    env!("CARGO_PKG_VERSION"),
    " (problem format 1, lp format 1)"
);

#[derive(Parser)]
#[command(name = "streampart", version = VERSION)]
#[command(about = "Placement and replication planning for streaming dataflow on CPU + FPGA")]
struct Cli {
    /// Machine-readable JSON on stdout.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a problem file against every structural invariant.
    Validate {
        problem: PathBuf,
        /// Also print the repetition vector.
        #[arg(long)]
        verbose: bool,
    },
    /// Compute the throughput of a fixed assignment.
    Evaluate {
        problem: PathBuf,
        #[arg(long)]
        assignment: PathBuf,
        /// Write the evaluation as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Search for the assignment with the highest throughput.
    Optimize {
        problem: PathBuf,
        #[arg(long, value_enum, default_value_t = SolverKind::Bnb)]
        solver: SolverKind,
        /// Abort exhaustive search above this many assignments.
        #[arg(long)]
        limit: Option<u128>,
        /// Worker threads for the exhaustive solver.
        #[arg(long)]
        workers: Option<usize>,
        /// Write the solution as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Replay an assignment in the discrete-event simulator.
    Simulate {
        problem: PathBuf,
        #[arg(long)]
        assignment: PathBuf,
        /// Virtual seconds to simulate.
        #[arg(long, default_value_t = 10.0)]
        duration: f64,
        /// Seconds excluded from measurements (default: duration / 10).
        #[arg(long)]
        warmup: Option<f64>,
        /// Per-channel FIFO capacity in tokens.
        #[arg(long, default_value_t = simulate::DEFAULT_BUFFER_TOKENS)]
        buffer: u64,
        /// Write an event trace as CSV.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Write the report as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write the placement problem as a mixed-integer program (LP format).
    ExportLp {
        problem: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-fit software throughputs and channel bandwidths from measurements.
    Calibrate {
        measurements: PathBuf,
        #[arg(long)]
        problem: PathBuf,
        /// Write the calibrated problem as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SolverKind {
    Bnb,
    Exhaustive,
}

/// Everything a command produced, before anything touches the filesystem
/// or stdout. Files are written only when `code` is EXIT_OK.
struct Outcome {
    code: i32,
    /// Complete JSON document for --json mode.
    machine: String,
    /// Text for plain mode; may be empty.
    human: String,
    /// Diagnostic for stderr; present on every failure.
    stderr: Option<String>,
    files: Vec<(PathBuf, String)>,
}

impl Outcome {
    fn fail(code: i32, message: impl Into<String>) -> Self {
        let message = message.into();
        Outcome {
            code,
            machine: error_doc(code, &message),
            human: String::new(),
            stderr: Some(message),
            files: Vec::new(),
        }
    }
}

fn error_doc(code: i32, message: &str) -> String {
    pretty(&json!({"status": "error", "exit_code": code, "error": message}))
}

fn pretty(v: &serde_json::Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("json value serializes");
    s.push('\n');
    s
}

fn eval_exit_code(e: &EvalError) -> i32 {
    match e {
        EvalError::UnboundedThroughput => EXIT_INFEASIBLE,
        EvalError::Internal(_) => EXIT_INTERNAL,
        _ => EXIT_INVALID,
    }
}

fn solve_exit_code(e: &SolveError) -> i32 {
    match e {
        SolveError::Infeasible | SolveError::Unbounded => EXIT_INFEASIBLE,
        SolveError::SearchSpaceTooLarge { .. } => EXIT_INVALID,
        SolveError::Eval(inner) => eval_exit_code(inner),
    }
}

fn read_file(path: &PathBuf, what: &str) -> Result<String, Outcome> {
    fs::read_to_string(path)
        .map_err(|e| Outcome::fail(EXIT_INVALID, format!("cannot read {what} {path:?}: {e}")))
}

/// Parse and structurally validate; every command except `validate` (which
/// reports the full diagnostic list itself) goes through here.
fn load_problem(path: &PathBuf) -> Result<ProblemSpec, Outcome> {
    let text = read_file(path, "problem file")?;
    let p = model::parse_problem(&text)
        .map_err(|e| Outcome::fail(EXIT_INVALID, format!("problem file {path:?}: {e}")))?;
    let diags = model::validate_problem(&p);
    if let Some(d) = diags.iter().find(|d| d.severity == model::Severity::Error) {
        return Err(Outcome::fail(
            EXIT_INVALID,
            format!("{}: {}", d.location, d.message),
        ));
    }
    Ok(p)
}

fn load_assignment(path: &PathBuf) -> Result<model::Assignment, Outcome> {
    let text = read_file(path, "assignment file")?;
    model::parse_assignment(&text)
        .map_err(|e| Outcome::fail(EXIT_INVALID, format!("assignment file {path:?}: {e}")))
}

/// Write to stdout without panicking when the reader has gone away
/// (`streampart ... | head`). The caller decides what a real failure means.
fn emit(text: &str) -> io::Result<()> {
    let mut out = io::stdout().lock();
    out.write_all(text.as_bytes())?;
    out.flush()
}

fn emit_or_ignore(text: &str) {
    let _ = emit(text);
}

fn emit_stderr(line: &str) {
    let _ = writeln!(io::stderr(), "{line}");
}

pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let json_requested = argv.iter().any(|a| a == "--json");

    let cli = match Cli::try_parse_from(argv.iter().cloned()) {
        Ok(cli) => cli,
        Err(e) => {
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let text = e.to_string();
                    if json_requested {
                        let key = if e.kind() == ErrorKind::DisplayVersion {
                            "version"
                        } else {
                            "help"
                        };
                        emit_or_ignore(&pretty(&json!({ key: text.trim_end() })));
                    } else {
                        emit_or_ignore(&text);
                    }
                    EXIT_OK
                }
                _ => {
                    if json_requested {
                        emit_or_ignore(&error_doc(EXIT_INVALID, &e.to_string()));
                    }
                    let _ = write!(io::stderr(), "{e}");
                    EXIT_INVALID
                }
            };
        }
    };

    let outcome = match dispatch(cli.command) {
        Ok(outcome) | Err(outcome) => outcome,
    };
    finish(outcome, cli.json)
}

fn finish(outcome: Outcome, json: bool) -> i32 {
    if outcome.code == EXIT_OK {
        for (path, content) in &outcome.files {
            if let Err(e) = fs::write(path, content) {
                let msg = format!("cannot write {path:?}: {e}");
                if json {
                    emit_or_ignore(&error_doc(EXIT_INTERNAL, &msg));
                }
                emit_stderr(&format!("error: {msg}"));
                return EXIT_INTERNAL;
            }
        }
    }
    let body = if json {
        outcome.machine
    } else if outcome.human.is_empty() {
        String::new()
    } else {
        format!("{}\n", outcome.human.trim_end())
    };
    let stdout_err = emit(&body).err();
    if let Some(msg) = outcome.stderr {
        emit_stderr(&format!("error: {msg}"));
    }
    match stdout_err {
        // A closed pipe means the reader already has everything it wants.
        None => outcome.code,
        Some(e) if e.kind() == io::ErrorKind::BrokenPipe => outcome.code,
        Some(e) => {
            emit_stderr(&format!("error: cannot write to stdout: {e}"));
            EXIT_INTERNAL
        }
    }
}

fn dispatch(command: Command) -> Result<Outcome, Outcome> {
    match command {
        Command::Validate { problem, verbose } => cmd_validate(&problem, verbose),
        Command::Evaluate {
            problem,
            assignment,
            out,
        } => cmd_evaluate(&problem, &assignment, out),
        Command::Optimize {
            problem,
            solver,
            limit,
            workers,
            out,
        } => cmd_optimize(&problem, solver, limit, workers, out),
        Command::Simulate {
            problem,
            assignment,
            duration,
            warmup,
            buffer,
            trace,
            out,
        } => cmd_simulate(&problem, &assignment, duration, warmup, buffer, trace, out),
        Command::ExportLp { problem, out } => cmd_export_lp(&problem, out),
        Command::Calibrate {
            measurements,
            problem,
            out,
        } => cmd_calibrate(&measurements, &problem, out),
    }
}

fn cmd_validate(path: &PathBuf, verbose: bool) -> Result<Outcome, Outcome> {
    let text = read_file(path, "problem file")?;
    let p = model::parse_problem(&text)
        .map_err(|e| Outcome::fail(EXIT_INVALID, format!("problem file {path:?}: {e}")))?;
    let diags = model::validate_problem(&p);
    let ok = !model::has_errors(&diags);

    let mut human = String::new();
    for d in &diags {
        human.push_str(&d.to_string());
        human.push('\n');
    }
    let mut doc = json!({
        "status": if ok { "ok" } else { "invalid" },
        "diagnostics": diags,
    });
    if ok {
        human.push_str("OK\n");
        let rv =
            rates::repetition_vector(&p).map_err(|e| Outcome::fail(EXIT_INVALID, e.to_string()))?;
        let q: serde_json::Map<String, serde_json::Value> =
            rv.iter().map(|(id, q)| (id.clone(), json!(q))).collect();
        doc["repetition_vector"] = serde_json::Value::Object(q);
        if verbose {
            human.push_str("repetition vector:\n");
            for (id, q) in rv.iter() {
                human.push_str(&format!("  {id}: {q}\n"));
            }
        }
        Ok(Outcome {
            code: EXIT_OK,
            machine: pretty(&doc),
            human,
            stderr: None,
            files: Vec::new(),
        })
    } else {
        let first = diags
            .iter()
            .find(|d| d.severity == model::Severity::Error)
            .expect("has_errors");
        Ok(Outcome {
            code: EXIT_INVALID,
            machine: pretty(&doc),
            human,
            stderr: Some(format!("{}: {}", first.location, first.message)),
            files: Vec::new(),
        })
    }
}

fn cmd_evaluate(
    problem: &PathBuf,
    assignment: &PathBuf,
    out: Option<PathBuf>,
) -> Result<Outcome, Outcome> {
    let p = load_problem(problem)?;
    let a = load_assignment(assignment)?;
    let e = evaluate::evaluate(&p, &a)
        .map_err(|err| Outcome::fail(eval_exit_code(&err), err.to_string()))?;

    let mut machine = serde_json::to_string_pretty(&e).expect("evaluation serializes");
    machine.push('\n');
    let mut human = evaluate::explain(&e);
    let mut files = Vec::new();
    if let Some(out_path) = &out {
        files.push((out_path.clone(), machine.clone()));
        human.push_str(&format!("wrote {}\n", out_path.display()));
    }
    if e.feasible {
        Ok(Outcome {
            code: EXIT_OK,
            machine,
            human,
            stderr: None,
            files,
        })
    } else {
        Ok(Outcome {
            code: EXIT_INFEASIBLE,
            machine,
            human: evaluate::explain(&e),
            stderr: Some(format!(
                "assignment is infeasible (overfull: {})",
                e.overfull_resources.join(", ")
            )),
            files: Vec::new(),
        })
    }
}

fn cmd_optimize(
    problem: &PathBuf,
    solver: SolverKind,
    limit: Option<u128>,
    workers: Option<usize>,
    out: Option<PathBuf>,
) -> Result<Outcome, Outcome> {
    let p = load_problem(problem)?;
    let mut opts = SolveOptions::default();
    if let Some(limit) = limit {
        opts.limit = limit;
    }
    if let Some(workers) = workers {
        opts.workers = workers.max(1);
    }
    let solution = match solver {
        SolverKind::Bnb => solve::solve_bnb(&p),
        SolverKind::Exhaustive => solve::solve_exhaustive_with(&p, opts),
    }
    .map_err(|err| Outcome::fail(solve_exit_code(&err), err.to_string()))?;

    let machine = solve::serialize_solution(&solution);
    let mut human = String::new();
    for (id, choice) in solution.assignment.iter() {
        human.push_str(&format!("{id}: {choice}\n"));
    }
    human.push_str(&evaluate::explain(&solution.evaluation));
    human.push_str(&format!(
        "solver {}: {} assignments evaluated, {} subtrees pruned\n",
        solution.stats.solver, solution.stats.nodes_explored, solution.stats.nodes_pruned
    ));
    let mut files = Vec::new();
    if let Some(out_path) = &out {
        files.push((out_path.clone(), machine.clone()));
        human.push_str(&format!("wrote {}\n", out_path.display()));
    }
    Ok(Outcome {
        code: EXIT_OK,
        machine,
        human,
        stderr: None,
        files,
    })
}

fn trace_csv(rows: &[simulate::TraceRow]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["time", "event_kind", "entity_id", "detail"])
        .expect("csv header");
    for r in rows {
        w.write_record([
            r.time.to_string(),
            r.event_kind.clone(),
            r.entity_id.clone(),
            r.detail.clone(),
        ])
        .expect("csv row");
    }
    String::from_utf8(w.into_inner().expect("csv flush")).expect("csv is utf-8")
}

#[allow(clippy::too_many_arguments)]
fn cmd_simulate(
    problem: &PathBuf,
    assignment: &PathBuf,
    duration: f64,
    warmup: Option<f64>,
    buffer: u64,
    trace: Option<PathBuf>,
    out: Option<PathBuf>,
) -> Result<Outcome, Outcome> {
    let p = load_problem(problem)?;
    let a = load_assignment(assignment)?;
    let cfg = SimConfig {
        duration,
        warmup: warmup.unwrap_or(duration / 10.0),
        buffer_tokens: buffer,
        trace: trace.is_some(),
        jitter: None,
    };
    let report = simulate::simulate(&p, &a, cfg).map_err(|err| {
        let code = match &err {
            SimError::Precondition(m) if m.contains("infeasible") => EXIT_INFEASIBLE,
            SimError::Precondition(_) => EXIT_INVALID,
            SimError::Deadlock { .. } => EXIT_INFEASIBLE,
            SimError::Eval(inner) => eval_exit_code(inner),
        };
        Outcome::fail(code, err.to_string())
    })?;

    let machine = simulate::serialize_report(&report);
    let mut human = format!(
        "measured throughput = {} items/s ({} sink firings, {} events)\n",
        report.measured_throughput, report.sink_firings, report.event_count
    );
    for u in &report.utilization {
        human.push_str(&format!(
            "  {}: {:.1}% busy\n",
            u.budget,
            u.fraction * 100.0
        ));
    }
    let mut files = Vec::new();
    if let Some(trace_path) = &trace {
        files.push((trace_path.clone(), trace_csv(&report.trace)));
        human.push_str(&format!("wrote {}\n", trace_path.display()));
    }
    if let Some(out_path) = &out {
        files.push((out_path.clone(), machine.clone()));
        human.push_str(&format!("wrote {}\n", out_path.display()));
    }
    Ok(Outcome {
        code: EXIT_OK,
        machine,
        human,
        stderr: None,
        files,
    })
}

fn cmd_export_lp(problem: &PathBuf, out: Option<PathBuf>) -> Result<Outcome, Outcome> {
    let p = load_problem(problem)?;
    let lp = milp::export_milp(&p)
        .map_err(|err| Outcome::fail(eval_exit_code(&err), err.to_string()))?;
    // Structural self-check; a rejected export is a bug, not bad input.
    let summary = milp::check_lp(&lp)
        .map_err(|err| Outcome::fail(EXIT_INTERNAL, format!("generated LP fails check: {err}")))?;

    let machine = pretty(&json!({
        "status": "ok",
        "variables": summary.variables,
        "binaries": summary.binaries,
        "rows": summary.rows,
        "lp": lp,
    }));
    let (human, files) = match &out {
        Some(out_path) => (
            format!(
                "wrote {} ({} variables, {} binaries, {} rows)\n",
                out_path.display(),
                summary.variables,
                summary.binaries,
                summary.rows
            ),
            vec![(out_path.clone(), lp.clone())],
        ),
        None => (lp.clone(), Vec::new()),
    };
    Ok(Outcome {
        code: EXIT_OK,
        machine,
        human,
        stderr: None,
        files,
    })
}

fn cmd_calibrate(
    measurements: &PathBuf,
    problem: &PathBuf,
    out: Option<PathBuf>,
) -> Result<Outcome, Outcome> {
    let csv_text = read_file(measurements, "measurement file")?;
    let base = load_problem(problem)?;
    let calibrated = calibrate::calibrate(&csv_text, &base)
        .map_err(|err| Outcome::fail(EXIT_INVALID, err.to_string()))?;

    let machine = model::serialize_problem(&calibrated);
    let (human, files) = match &out {
        Some(out_path) => (
            format!("wrote {}\n", out_path.display()),
            vec![(out_path.clone(), machine.clone())],
        ),
        None => (machine.clone(), Vec::new()),
    };
    Ok(Outcome {
        code: EXIT_OK,
        machine,
        human,
        stderr: None,
        files,
    })
}
