use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use dualbath::scenario::{execute, Mode, Report, Scenario};
use dualbath::Error;

#[derive(Parser, Debug)]
#[command(
    name = "dualbath",
    version,
    about = "TLS dynamics with a spin bath and a boson bath"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug, Clone)]
enum Command {
    /// Run the mode named in the config's `run.mode`.
    Run(Args),
    /// ⟨σ_z⟩(t) of the TLS; a sweep gives a t × parameter surface.
    Dynamics(Args),
    /// Long-time P₁(∞), optionally over a sweep.
    Steady(Args),
    /// Spin-bath Θ±±(t) and the no-TLS reference.
    Mqs(Args),
    /// Exact propagation of a truncated model next to the TCL result.
    Oracle(Args),
    /// Bath kernel tables φ₁, φ₂, ψ₁.
    Kernels(Args),
}

#[derive(clap::Args, Debug, Clone)]
struct Args {
    /// Scenario JSON file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory, overriding `output.directory`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads for sweeps and sector loops.
    #[arg(long, env = "DUALBATH_THREADS")]
    threads: Option<usize>,
}

impl Command {
    fn parts(self) -> (Option<Mode>, Args) {
        match self {
            Command::Run(a) => (None, a),
            Command::Dynamics(a) => (Some(Mode::Dynamics), a),
            Command::Steady(a) => (Some(Mode::Steady), a),
            Command::Mqs(a) => (Some(Mode::Mqs), a),
            Command::Oracle(a) => (Some(Mode::Oracle), a),
            Command::Kernels(a) => (Some(Mode::Kernels), a),
        }
    }
}

fn write_outputs(
    dir: &Path,
    scenario: &Scenario,
    report: &Report,
    threads: usize,
) -> Result<(), Error> {
    std::fs::create_dir_all(dir)?;
    for f in &report.files {
        std::fs::write(dir.join(&f.name), &f.contents)?;
        log::info!("wrote {}", dir.join(&f.name).display());
    }
    let meta = serde_json::to_string_pretty(&report.metadata(scenario, threads))?;
    std::fs::write(
        dir.join(format!("{}.meta.json", scenario.output.stem)),
        meta + "\n",
    )?;
    Ok(())
}

fn run(command: Command) -> Result<(), Error> {
    let (mode, args) = command.parts();
    let config = args
        .config
        .ok_or_else(|| Error::validation("--config", "a scenario file is required"))?;
    let mut scenario = Scenario::load(&config)?;
    if let Some(mode) = mode {
        scenario.run.mode = Some(mode);
    }
    if let Some(out) = args.out {
        scenario.output.directory = out;
    }
    let threads = match args.threads {
        Some(0) => return Err(Error::validation("--threads", "must be ≥ 1")),
        Some(n) => n,
        None => std::thread::available_parallelism().map_or(1, |n| n.get()),
    };
    let report = execute(&scenario, threads)?;
    write_outputs(
        &scenario.output.directory.clone(),
        &scenario,
        &report,
        threads,
    )
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    // usage errors exit 1 like other input errors; 2 is reserved for numerical failures
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_numerical() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
