//! `treeprune`: reproducible pruning experiments on random trees.

mod commands;
mod config;
mod source;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::Serialize;

use commands::*;
use config::{merge, read_config, write_output, CliError, CliResult};

#[derive(Parser)]
#[command(name = "treeprune", version, about = "Pruning processes on bi-measure R-trees")]
struct Cli {
    /// JSON config (or any output of this tool); its keys override the flags.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output file; stdout when omitted.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for replicate loops.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a conditioned Galton-Watson bi-measure tree and write it as JSON.
    Generate(GenerateArgs),
    /// Simulate one pruning path and write its cut events as JSON Lines.
    Prune(PruneArgs),
    /// Compare the exact semigroup with Monte-Carlo path averages.
    Semigroup(SemigroupArgs),
    /// Difference quotients of the semigroup against the generator.
    GeneratorCheck(GeneratorCheckArgs),
    /// Cut a tree down: separation times, cut counts and moments.
    Cutdown {
        #[command(flatten)]
        args: CutdownArgs,
        /// Where to write the moment table; stderr-free default is `<out>.moments.csv`.
        #[arg(long)]
        moments_out: Option<PathBuf>,
    },
    /// Monte-Carlo convergence report across tree sizes.
    Converge(ConvergeArgs),
    /// Shape frequencies of conditioned trees against exact enumeration.
    GwShapes(GwShapesArgs),
}

fn resolve<T: Serialize + DeserializeOwned>(name: &str, flags: T, config: &Option<PathBuf>) -> CliResult<T> {
    let cfg = config.as_deref().map(read_config).transpose()?;
    merge(name, flags, cfg)
}

fn run(cli: Cli) -> CliResult<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return config::usage("--threads must be positive");
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Runtime(e.to_string()))?;
    }
    let out = cli.out.as_deref();
    let text = match cli.command {
        Command::Generate(a) => generate(resolve("generate", a, &cli.config)?)?.1,
        Command::Prune(a) => prune(resolve("prune", a, &cli.config)?)?.1,
        Command::Semigroup(a) => semigroup(resolve("semigroup", a, &cli.config)?)?.1,
        Command::GeneratorCheck(a) => generator_check(resolve("generator-check", a, &cli.config)?)?.1,
        Command::Cutdown { args, moments_out } => {
            let (_, results, table) = cutdown(resolve("cutdown", args, &cli.config)?)?;
            let table_path = moments_out.or_else(|| out.map(|p| p.with_extension("moments.csv")));
            match table_path {
                Some(p) => write_output(Some(&p), &table)?,
                None => eprint!("{table}"),
            }
            results
        }
        Command::Converge(a) => converge(resolve("converge", a, &cli.config)?)?.1,
        Command::GwShapes(a) => gw_shapes(resolve("gw-shapes", a, &cli.config)?)?.1,
    };
    write_output(out, &text)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("treeprune: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
