//! `landau`: spectral gaps, relaxation runs, linear modes, compactness
//! tables and invariant checks for multi-species Landau operators.

mod commands;
mod config;
mod invariants;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use landau_core::{Error, Result};
use rayon::prelude::*;
use serde::Serialize;

use config::RunConfig;
use output::{check_table, Artifacts, Check};

/// Commands a sweep may dispatch to.
pub const COMMANDS: [&str; 5] = ["gap", "relax", "modes", "kcompact", "invariants"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Command {
    Gap,
    Relax,
    Modes,
    Kcompact,
    Invariants,
    Sweep,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Gap => "gap",
            Command::Relax => "relax",
            Command::Modes => "modes",
            Command::Kcompact => "kcompact",
            Command::Invariants => "invariants",
            Command::Sweep => "sweep",
        }
    }

    fn from_name(name: &str) -> Option<Self> {
        Command::from_str(name, false).ok()
    }
}

#[derive(Debug, Parser)]
#[command(name = "landau", version, about = "Multi-species Landau operator toolkit")]
struct Cli {
    command: Command,
    /// Run configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Overrides `output_dir`.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Overrides `seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; all cores when neither this nor the variable is set.
    #[arg(long, env = "LANDAU_THREADS")]
    threads: Option<usize>,
    /// Write the assembled operators in Matrix Market format (gap only).
    #[arg(long)]
    export_matrices: bool,
}

const EXIT_VALIDATION: u8 = 1;
const EXIT_SOLVER: u8 = 2;
const EXIT_CHECK: u8 = 3;

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::NonSymmetricInteraction { .. }
        | Error::GammaOutOfRange(_)
        | Error::NonPositiveParameter { .. }
        | Error::ZeroMass { .. }
        | Error::InvalidGrid(_)
        | Error::DimensionMismatch { .. }
        | Error::InvalidConfig(_)
        | Error::Io(_) => EXIT_VALIDATION,
        _ => EXIT_SOLVER,
    }
}

fn run_command(command: Command, cfg: &RunConfig, export_matrices: bool) -> Result<Vec<Check>> {
    match command {
        Command::Gap => commands::gap(cfg, export_matrices),
        Command::Relax => commands::relax(cfg),
        Command::Modes => commands::modes(cfg),
        Command::Kcompact => commands::kcompact(cfg),
        Command::Invariants => invariants::invariants(cfg),
        Command::Sweep => Err(Error::InvalidConfig("sweep cannot be nested".into())),
    }
}

/// Runs one command and logs it. Returns the exit code and the report text:
/// the check table followed by one line per failed check or error.
fn execute(command: Command, cfg: &RunConfig, export_matrices: bool) -> (u8, String) {
    let out = Artifacts::new(cfg, command.name());
    let _ = out.log(&format!("start, config_sha256 {}", out.config_sha256));
    let (code, mut text) = match run_command(command, cfg, export_matrices) {
        Ok(checks) => {
            let mut text = check_table(&checks);
            let failed: Vec<&Check> = checks.iter().filter(|c| !c.passed).collect();
            for c in &failed {
                text.push_str(&format!("check failed: {} = {:e}, required {}\n", c.name, c.value, c.condition));
            }
            (if failed.is_empty() { 0 } else { EXIT_CHECK }, text)
        }
        Err(e) => (exit_code(&e), format!("error: {e}\n")),
    };
    let _ = out.log(&format!("finished with exit code {code}"));
    if code != 0 {
        text.push_str(&format!("exit code {code}\n"));
    }
    (code, text)
}

#[derive(Serialize)]
struct SweepEntry {
    label: String,
    output_dir: PathBuf,
    exit_code: u8,
}

fn sweep(cfg: &RunConfig, export_matrices: bool) -> Result<u8> {
    let command = Command::from_name(&cfg.sweep.command)
        .filter(|c| *c != Command::Sweep)
        .ok_or_else(|| Error::InvalidConfig(format!("unknown sweep command {:?}", cfg.sweep.command)))?;
    let points = cfg.sweep_points()?;
    let entries: Vec<SweepEntry> = points
        .par_iter()
        .map(|p| {
            let (code, text) = execute(command, &p.config, export_matrices);
            print!("== {}\n{text}", p.label);
            SweepEntry { label: p.label.clone(), output_dir: p.config.output_dir.clone(), exit_code: code }
        })
        .collect();
    let code = entries.iter().map(|e| e.exit_code).max().unwrap_or(0);
    Artifacts::new(cfg, "sweep").json("sweep_summary.json", &entries)?;
    Ok(code)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(t) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(t).build_global() {
            eprintln!("error: cannot start {t} worker threads: {e}");
            return ExitCode::from(EXIT_VALIDATION);
        }
    }
    let cfg = RunConfig::load(&cli.config).and_then(|mut c| {
        if let Some(o) = cli.output {
            c.output_dir = o;
        }
        if let Some(s) = cli.seed {
            c.seed = s;
        }
        c.resolved()
    });
    let cfg = match cfg {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(exit_code(&e));
        }
    };
    let code = match cli.command {
        Command::Sweep => sweep(&cfg, cli.export_matrices).unwrap_or_else(|e| {
            eprintln!("error: {e}");
            exit_code(&e)
        }),
        c => {
            let (code, text) = execute(c, &cfg, cli.export_matrices);
            if code == 0 {
                print!("{text}");
            } else {
                eprint!("{text}");
            }
            code
        }
    };
    ExitCode::from(code)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn errors_map_to_exit_codes() {
        assert_eq!(exit_code(&Error::GammaOutOfRange(3.0)), EXIT_VALIDATION);
        assert_eq!(exit_code(&Error::InvalidGrid("odd".into())), EXIT_VALIDATION);
        assert_eq!(exit_code(&Error::StepUnstable { growth: 20.0 }), EXIT_SOLVER);
        assert_eq!(exit_code(&Error::SolverNoConvergence { what: "lanczos".into(), iterations: 9, residual: 1.0 }), EXIT_SOLVER);
    }

    #[test]
    fn command_names_round_trip() {
        for name in COMMANDS {
            assert_eq!(Command::from_name(name).unwrap().name(), name);
        }
        assert_eq!(Command::from_name("sweep"), Some(Command::Sweep));
        assert_eq!(Command::from_name("relaxation"), None);
    }
}
