//! `modsvc`: batch driver for the simulator.
//!
//! Exit codes: 0 success, 1 the input was read but failed (a program with
//! diagnostics, a scenario step that was refused), 2 usage or input error.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use modsvc::roledsl::{measure_program_size, Diagnostic, RoleProgram};
use modsvc::simworld::{Scenario, World, WorldTopology};
use modsvc::SimTime;

/// Reference sizes for the car program, printed next to measurements.
const REFERENCE_GZIP: usize = 350;
const REFERENCE_BYTECODE: usize = 156;

#[derive(Parser, Debug)]
#[command(name = "modsvc", version, about = "Simulate modular robots running the module service")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Run a scenario on a topology and emit the event log.
    Run {
        topology: PathBuf,
        scenario: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// End of the run in centiseconds of simulated time.
        #[arg(long)]
        until: u64,
        /// Write the log here instead of standard output.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Report raw and gzip sizes of a program text.
    Measure { program: PathBuf },
    /// Parse and validate a role program without running it.
    Check { program: PathBuf },
}

enum Failure {
    /// Exit 1.
    Failed(String),
    /// Exit 2.
    Input(String),
}

fn read(path: &Path) -> Result<Vec<u8>, Failure> {
    fs::read(path).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))
}

fn read_text(path: &Path) -> Result<String, Failure> {
    String::from_utf8(read(path)?)
        .map_err(|_| Failure::Input(format!("{}: not valid UTF-8", path.display())))
}

fn diagnostics(path: &Path, diags: &[Diagnostic]) -> String {
    diags
        .iter()
        .map(|d| format!("{}:{}", path.display(), d))
        .collect::<Vec<_>>()
        .join("\n")
}

fn run(topology: &Path, scenario: &Path, seed: u64, until: u64, log: Option<&Path>) -> Result<(), Failure> {
    let topo_text = read_text(topology)?;
    let scen_text = read_text(scenario)?;
    let topo = WorldTopology::parse(&topo_text).map_err(|d| Failure::Input(diagnostics(topology, &d)))?;
    let base = scenario.parent().unwrap_or(Path::new(".")).to_path_buf();
    let mut resolve = |p: &str| {
        let path = base.join(p);
        fs::read(&path).map_err(|e| format!("cannot read `{}`: {e}", path.display()))
    };
    let scen = Scenario::parse_with(&scen_text, &mut resolve)
        .map_err(|d| Failure::Input(diagnostics(scenario, &d)))?;
    let world = World::new(topo, scen, seed).map_err(|d| Failure::Input(diagnostics(scenario, &d)))?;
    let events = world.run(SimTime::from_centis(until));
    let text = events.to_text();
    match log {
        Some(path) => fs::write(path, &text)
            .map_err(|e| Failure::Input(format!("{}: {e}", path.display())))?,
        None => {
            let mut out = std::io::stdout().lock();
            // A closed stdout is not worth a panic.
            let _ = out.write_all(text.as_bytes());
        }
    }
    let refused: Vec<String> = events
        .of_kind("start_reply")
        .filter(|l| !l.payload.starts_with("OK"))
        .map(|l| format!("{} at {} cs: start refused: {}", l.module, l.at.as_centis(), l.payload))
        .collect();
    if refused.is_empty() {
        Ok(())
    } else {
        Err(Failure::Failed(refused.join("\n")))
    }
}

fn measure(program: &Path) -> Result<(), Failure> {
    let bytes = read(program)?;
    let size = measure_program_size(&bytes);
    println!("file: {}", program.display());
    println!("raw: {} bytes", size.raw);
    println!("gzip: {} bytes", size.gzip);
    println!(
        "reference: gzip {REFERENCE_GZIP} bytes (reproduced by this measurement); bytecode {REFERENCE_BYTECODE} bytes (not reproduced, no bytecode compiler)"
    );
    Ok(())
}

fn check(program: &Path) -> Result<(), Failure> {
    let text = read_text(program)?;
    match RoleProgram::parse(&text) {
        Ok(p) => {
            for r in p.roles() {
                let kind = if r.is_abstract { "abstract role" } else { "role" };
                let parent = r.parent.as_deref().unwrap_or(modsvc::roledsl::BUILTIN_ROOT);
                println!("{kind} {} extends {parent}", r.name);
            }
            let abstracts = p.roles().iter().filter(|r| r.is_abstract).count();
            println!("{} roles, {abstracts} abstract, 0 errors", p.roles().len());
            Ok(())
        }
        Err(diags) => {
            eprintln!("{}", diagnostics(program, &diags));
            println!("{} errors", diags.len());
            Err(Failure::Failed(String::new()))
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match &cli.cmd {
        Cmd::Run { topology, scenario, seed, until, log } => run(topology, scenario, *seed, *until, log.as_deref()),
        Cmd::Measure { program } => measure(program),
        Cmd::Check { program } => check(program),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Failed(msg)) => {
            if !msg.is_empty() {
                eprintln!("{msg}");
            }
            ExitCode::from(1)
        }
        Err(Failure::Input(msg)) => {
            eprintln!("modsvc: {msg}");
            ExitCode::from(2)
        }
    }
}
