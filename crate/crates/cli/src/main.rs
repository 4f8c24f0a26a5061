use std::process::ExitCode;

use clap::{Parser, Subcommand};

use lanetopo_cli::config::{Overrides, RunConfig};
use lanetopo_cli::{commands, CliError};

#[derive(Parser)]
#[command(name = "lanetopo", version, about = "Lane topology experiments on synthetic lane graphs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a dataset of scenes and noisy candidates
    Gen(Overrides),
    /// Train a model on a generated dataset
    Train(Overrides),
    /// Score a checkpoint or a directory of prediction files
    Eval(Overrides),
    /// Train and score a geodist-only model per mapping function
    AblateMapping(Overrides),
    /// Train and score each topology head, optionally over several noise levels
    AblateHeads(Overrides),
    /// Fuse geometric topology into frozen predictions and compare metrics
    Postprocess(Overrides),
    /// Export mapping-function curves
    Curves(Overrides),
}

fn run(cli: Cli) -> Result<(), CliError> {
    let (name, flags, f): (&str, &Overrides, fn(&RunConfig) -> Result<(), CliError>) = match &cli.command {
        Command::Gen(o) => ("gen", o, commands::gen),
        Command::Train(o) => ("train", o, commands::train),
        Command::Eval(o) => ("eval", o, commands::eval),
        Command::AblateMapping(o) => ("ablate-mapping", o, commands::ablate_mapping),
        Command::AblateHeads(o) => ("ablate-heads", o, commands::ablate_heads),
        Command::Postprocess(o) => ("postprocess", o, commands::postprocess),
        Command::Curves(o) => ("curves", o, commands::curves),
    };
    let cfg = RunConfig::resolve(name, flags)?;
    f(&cfg)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code())
        }
    }
}
