use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use polaron_cli::commands;
use polaron_cli::config::{self, RunConfig};
use polaron_cli::run::RunDir;
use polaron_cli::{CliError, CliResult};
use serde::Serialize;

#[derive(Parser)]
#[command(name = "polaron", version, about = "Polaron fiber Hamiltonian laboratory")]
struct Cli {
    /// Run configuration (JSON). `POLARON_<KEY>__<SUBKEY>` variables override fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Run directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Overrides `solver.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Assemble and cache the Hamiltonian.
    Build,
    /// Ground energy, gaps and eigenvalues below the continuum edge.
    Spectrum { run_dir: Option<PathBuf> },
    /// Run the identity suite across the cutoff ladder.
    Verify {
        run_dir: Option<PathBuf>,
        /// Comma-separated identity ids.
        #[arg(long, value_delimiter = ',')]
        filter: Option<Vec<String>>,
    },
    /// Sweep the coupling ladder.
    Scan,
    /// Merge results into CSV tables and a text summary.
    Report { run_dir: Option<PathBuf> },
}

fn load_config(cli: &Cli) -> CliResult<Option<RunConfig>> {
    let Some(path) = &cli.config else { return Ok(None) };
    let mut c = config::load(path, std::env::vars())?;
    if let Some(seed) = cli.seed {
        c.solver.seed = seed;
    }
    Ok(Some(c))
}

fn emit<T: Serialize>(value: &T) {
    println!("{}", serde_json::to_string_pretty(value).expect("output serializes"));
}

fn run_dir<'a>(positional: &'a Option<PathBuf>, cli: &'a Cli) -> Option<&'a Path> {
    positional.as_deref().or(cli.out.as_deref())
}

fn execute(cli: &Cli) -> CliResult<()> {
    let config = load_config(cli)?;
    match &cli.command {
        Command::Build => {
            let c = config.ok_or_else(|| CliError::Config("build needs --config".into()))?;
            emit(&commands::build(c, cli.out.as_deref())?);
        }
        Command::Spectrum { run_dir: pos } => {
            let mut run = commands::open_or_build(run_dir(pos, cli), config)?;
            emit(&commands::spectrum(&mut run)?);
        }
        Command::Verify { run_dir: pos, filter } => {
            let mut run = commands::open_or_build(run_dir(pos, cli), config)?;
            let (manifest, outcome) = commands::verify(&mut run, filter.as_deref())?;
            emit(&outcome);
            commands::verify_exit(&manifest)?;
        }
        Command::Scan => {
            let mut run = match (cli.out.as_deref(), config) {
                (_, Some(c)) => {
                    let root = commands::resolve_root(cli.out.as_deref(), &c);
                    match RunDir::open(&root) {
                        Ok(r) if r.manifest.config_hash == c.content_hash() => r,
                        Ok(_) | Err(CliError::Config(_)) => RunDir::create(&root, c)?,
                        Err(e) => return Err(e),
                    }
                }
                (Some(root), None) => RunDir::open(root)?,
                (None, None) => return Err(CliError::Config("scan needs --config or --out".into())),
            };
            emit(&commands::scan(&mut run)?);
        }
        Command::Report { run_dir: pos } => {
            let root = run_dir(pos, cli).ok_or_else(|| CliError::Config("report needs a run directory".into()))?;
            let mut run = RunDir::open(root)?;
            print!("{}", commands::report(&mut run)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Some(jobs) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global() {
            eprintln!("{}", CliError::Config(format!("--jobs: {e}")));
            return ExitCode::from(2);
        }
    }
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("polaron: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
