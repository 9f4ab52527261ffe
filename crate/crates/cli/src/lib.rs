//! Command-line front end: configuration handling and subcommands.

pub mod commands;
pub mod config;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub use commands::{Failure, EXIT_CONFIG, EXIT_RUNTIME};
pub use config::RunConfig;

#[derive(Debug, Parser)]
#[command(name = "progrl", version, about = "Programmatic policies by alternating policy gradient and imitation")]
pub struct Cli {
    /// Configuration file (key = value lines).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override a configuration key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub set: Vec<String>,
    /// Output directory (same as --set run_dir=PATH).
    #[arg(long, global = true)]
    pub run_dir: Option<PathBuf>,
    /// Worker threads (same as --set workers=N).
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the update/project loop from the initial program.
    Train,
    /// Project a saved mixed policy onto the program class.
    Project {
        /// Run directory holding the expert checkpoint.
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        iteration: Option<usize>,
    },
    /// Mean and standard deviation of a program's episode returns.
    Eval {
        program: PathBuf,
        #[arg(long)]
        env: Option<String>,
        #[arg(long)]
        episodes: Option<usize>,
        /// First seed; episodes use consecutive seeds.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Projected gradient descent with injected errors.
    Sandbox,
    /// Output ranges and Lipschitz bounds of a program over a box.
    Verify {
        program: PathBuf,
        /// Box file; defaults to the environment's observation box.
        #[arg(name = "BOX")]
        box_file: Option<PathBuf>,
    },
}

fn resolve(cli: &Cli) -> progrl::Result<RunConfig> {
    let mut overrides = cli.set.clone();
    if let Some(d) = &cli.run_dir {
        overrides.push(format!("run_dir={}", d.display()));
    }
    if let Some(w) = cli.workers {
        overrides.push(format!("workers={w}"));
    }
    match &cli.command {
        Command::Eval { env: Some(e), .. } => overrides.push(format!("env={e}")),
        Command::Project { checkpoint, iteration } => {
            if let Some(c) = checkpoint {
                overrides.push(format!("project.checkpoint={}", c.display()));
            }
            if let Some(i) = iteration {
                overrides.push(format!("project.iteration={i}"));
            }
        }
        _ => {}
    }
    RunConfig::load(cli.config.as_deref(), &overrides)
}

fn dispatch(cli: &Cli) -> Result<(), Failure> {
    let cfg = resolve(cli).map_err(|error| Failure {
        code: EXIT_CONFIG,
        error,
    })?;
    let workers: usize = cfg.workers().map_err(Failure::from)?;
    if workers > 0 {
        // Fails only if a pool already exists, which is harmless.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(workers).build_global();
    }
    match &cli.command {
        Command::Train => commands::train(&cfg),
        Command::Project { .. } => commands::project_cmd(&cfg),
        Command::Eval {
            program, episodes, seed, ..
        } => commands::eval(&cfg, program, *episodes, *seed),
        Command::Sandbox => commands::sandbox(&cfg),
        Command::Verify { program, box_file } => commands::verify_cmd(&cfg, program, box_file.as_deref()),
    }
}

/// Parses arguments and runs one command, returning the process exit code.
pub fn run<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { 0 };
        }
    };
    match std::panic::catch_unwind(|| dispatch(&cli)) {
        Ok(Ok(())) => 0,
        Ok(Err(f)) => {
            eprintln!("error: {}", f.error);
            f.code
        }
        Err(_) => EXIT_RUNTIME,
    }
}
