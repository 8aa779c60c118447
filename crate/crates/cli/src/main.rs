//! `steering` command line: solve steering problems, sample reachable sets,
//! and re-verify written solutions.
//!
//! Exit codes: 0 success, 1 bad input, 2 no converged solution, 3
//! verification failure.

mod oracle;
mod output;
mod spec;
mod steer;
mod verify;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;
use steering::reach::{ReachSystem, SteeringSpec};

use crate::output::{write_atomic, write_json};
use crate::spec::ProblemSpec;
use crate::verify::Summary;

const EXIT_INPUT: u8 = 1;
const EXIT_NO_SOLUTION: u8 = 2;
const EXIT_VERIFY: u8 = 3;

/// Worker-count override for the solver thread pool.
const WORKERS_ENV: &str = "STEERING_WORKERS";

#[derive(Parser)]
#[command(name = "steering", version, about = "Fixed-horizon steering by two concatenated extremals")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the problem in a JSON spec and write summary.json, metadata.json,
    /// trajectory_k.csv (and plot.svg for dubins2d) into `--out`.
    Steer {
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Reachable-set sampling tools.
    Oracle {
        #[command(subcommand)]
        command: OracleCommand,
    },
    /// Re-propagate every record of a summary.json.
    Verify { summary: PathBuf },
}

#[derive(Clone, Copy, ValueEnum)]
enum SystemArg {
    Vdp,
    Dubins2d,
    Dubins3d,
}

impl From<SystemArg> for ReachSystem {
    fn from(s: SystemArg) -> Self {
        match s {
            SystemArg::Vdp => ReachSystem::Vdp,
            SystemArg::Dubins2d => ReachSystem::Dubins2d,
            SystemArg::Dubins3d => ReachSystem::Dubins3d,
        }
    }
}

#[derive(Subcommand)]
enum OracleCommand {
    /// Endpoints of random bang-bang controls (cloud.csv, report.json).
    Sample {
        #[arg(long, value_enum)]
        system: SystemArg,
        #[arg(long)]
        t: f64,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 4)]
        max_switches: usize,
        /// Comma-separated start state; defaults to the system's standard one.
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
        origin: Option<Vec<f64>>,
        /// Sample the backward flow `-f` instead.
        #[arg(long)]
        backward: bool,
    },
    /// Hausdorff distance between en-route clouds at consecutive times
    /// (continuity.csv, continuity.json).
    Continuity {
        #[arg(long, value_enum)]
        system: SystemArg,
        /// Horizon `T`.
        #[arg(long)]
        t: f64,
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
        chi_f: Vec<f64>,
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
        chi_i: Option<Vec<f64>>,
        /// Probe times; defaults to 8 equispaced interior times.
        #[arg(long, value_delimiter = ',')]
        times: Option<Vec<f64>>,
        #[arg(long, default_value_t = 20_000)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 4)]
        max_switches: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Single-word fits of Dubins 2D cloud hull extremes (boundary.csv,
    /// boundary.json).
    Boundary {
        #[arg(long)]
        t: f64,
        #[arg(long, default_value_t = 5000)]
        n: usize,
        #[arg(long, default_value_t = 64)]
        probes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn fail(code: u8, msg: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {msg}");
    ExitCode::from(code)
}

fn configure_workers() -> Result<usize, String> {
    let workers = match std::env::var(WORKERS_ENV) {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|n| *n >= 1)
            .ok_or_else(|| format!("{WORKERS_ENV} must be a positive integer, got {v:?}"))?,
        Err(_) => std::thread::available_parallelism().map_or(1, |n| n.get()),
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build_global()
        .map_err(|e| e.to_string())?;
    Ok(workers)
}

fn steer(spec_path: &Path, out: &Path, workers: usize) -> ExitCode {
    let text = match fs::read_to_string(spec_path) {
        Ok(t) => t,
        Err(e) => return fail(EXIT_INPUT, format!("cannot read {}: {e}", spec_path.display())),
    };
    let spec = match ProblemSpec::from_json(&text) {
        Ok(s) => s,
        Err(e) => return fail(EXIT_INPUT, e),
    };
    let start = Instant::now();
    let solved = match steer::solve(&spec) {
        Ok(s) => s,
        Err(e) => return fail(EXIT_INPUT, format!("solver rejected the problem: {e}")),
    };
    let wall = start.elapsed().as_secs_f64();

    let summary = json!({
        "spec": spec.to_value(),
        "solutions": solved.iter().map(|s| &s.record).collect::<Vec<_>>(),
    });
    let metadata = json!({
        "wall_time_s": wall,
        "workers": workers,
        "solutions": solved.len(),
        "version": env!("CARGO_PKG_VERSION"),
    });
    let written = (|| -> std::io::Result<()> {
        for s in &solved {
            write_atomic(&out.join(&s.record.trajectory), s.csv.as_bytes())?;
        }
        let lines: Vec<Vec<[f64; 2]>> = solved.iter().filter_map(|s| s.polyline.clone()).collect();
        if !lines.is_empty() {
            write_atomic(&out.join("plot.svg"), output::svg_polylines(&lines).as_bytes())?;
        }
        write_json(&out.join("metadata.json"), &metadata)?;
        write_json(&out.join("summary.json"), &summary)
    })();
    if let Err(e) = written {
        return fail(EXIT_INPUT, format!("cannot write to {}: {e}", out.display()));
    }

    if solved.is_empty() {
        return fail(EXIT_NO_SOLUTION, "no solution converged");
    }
    println!("{} solution(s) in {wall:.2} s; written to {}", solved.len(), out.display());
    for s in &solved {
        let r = &s.record;
        let what = match &r.detail {
            steer::Detail::Extremals { tau, concat_time, .. } => format!("tau {tau:.4}, concat_time {concat_time:.4}"),
            steer::Detail::Dubins2d { structure, directed_structure, .. } => format!("{structure} ({directed_structure})"),
            steer::Detail::Dubins3d { structure, .. } => structure.clone(),
        };
        println!("  [{}] residual {:.2e}  {what}", r.index, r.residual_norm);
    }
    ExitCode::SUCCESS
}

fn run_verify(path: &Path) -> ExitCode {
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) => return fail(EXIT_INPUT, format!("cannot read {}: {e}", path.display())),
    };
    let summary: Summary = match serde_json::from_str(&text) {
        Ok(s) => s,
        Err(e) => return fail(EXIT_INPUT, format!("malformed summary: {e}")),
    };
    if summary.solutions.is_empty() {
        println!("nothing to verify");
        return ExitCode::SUCCESS;
    }
    let checks = match verify::check_summary(&summary) {
        Ok(c) => c,
        Err(e) => return fail(EXIT_INPUT, e),
    };
    for c in &checks {
        println!("{c}");
    }
    let bad: Vec<String> = checks.iter().filter(|c| !c.ok).map(|c| c.index.to_string()).collect();
    if bad.is_empty() {
        ExitCode::SUCCESS
    } else {
        fail(EXIT_VERIFY, format!("verification failed for record(s): {}", bad.join(", ")))
    }
}

fn run_oracle(cmd: OracleCommand) -> ExitCode {
    match cmd {
        OracleCommand::Sample {
            system,
            t,
            n,
            seed,
            out,
            max_switches,
            origin,
            backward,
        } => {
            let system = ReachSystem::from(system);
            let origin = origin.unwrap_or_else(|| oracle::default_origin(system));
            match oracle::sample(system, backward, &origin, t, n, max_switches, seed, &out) {
                Ok(size) => {
                    println!("{size} points written to {}", out.join("cloud.csv").display());
                    ExitCode::SUCCESS
                }
                Err(e) => fail(EXIT_INPUT, e),
            }
        }
        OracleCommand::Continuity {
            system,
            t,
            chi_f,
            chi_i,
            times,
            n,
            seed,
            max_switches,
            out,
        } => {
            let system = ReachSystem::from(system);
            let spec = SteeringSpec {
                system,
                chi_i: chi_i.unwrap_or_else(|| oracle::default_origin(system)),
                chi_f,
                t_final: t,
                max_switches,
                seed,
            };
            let times = times.unwrap_or_else(|| (0..8).map(|i| t * (i as f64 + 0.5) / 8.0).collect());
            match oracle::continuity(&spec, &times, n, &out) {
                Ok(all) => {
                    println!("continuity bound {} for all pairs", if all { "holds" } else { "FAILS" });
                    ExitCode::SUCCESS
                }
                Err(e) => fail(EXIT_INPUT, e),
            }
        }
        OracleCommand::Boundary { t, n, probes, seed, out } => match oracle::boundary(t, n, probes, seed, &out) {
            Ok(()) => ExitCode::SUCCESS,
            Err(e) => fail(EXIT_INPUT, e),
        },
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INPUT } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let workers = match configure_workers() {
        Ok(w) => w,
        Err(e) => return fail(EXIT_INPUT, e),
    };
    match cli.command {
        Command::Steer { spec, out } => steer(&spec, &out, workers),
        Command::Oracle { command } => run_oracle(command),
        Command::Verify { summary } => run_verify(&summary),
    }
}
