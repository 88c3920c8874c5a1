use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use faithgrid::manipulation::Mode;
use faithgrid::pipeline::{write_error_record, Command, Manifest, RunConfig, Session, OUT_ENV};
use faithgrid::{Error, Method};

/// Faithfulness evaluation, manipulation search and mean rank reports.
#[derive(Parser)]
#[command(version)]
struct Cli {
    /// Run configuration (TOML).
    #[arg(long, global = true, conflicts_with = "manifest")]
    config: Option<PathBuf>,

    /// Re-run with the resolved configuration stored in a manifest.
    #[arg(long, global = true)]
    manifest: Option<PathBuf>,

    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Overrides the configured output directory.
    #[arg(long, global = true, env = OUT_ENV)]
    out: Option<PathBuf>,

    /// Evaluate only samples the model classifies correctly.
    #[arg(long, global = true)]
    correct_only: bool,

    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train the model of every dataset.
    Train,
    /// Compute attributions for the evaluation samples.
    Attribute,
    /// Score every method at the base configuration.
    Evaluate,
    /// Search the feasible set in favor of one or all methods.
    Manipulate {
        #[arg(long, value_enum)]
        mode: CliMode,
        /// Method to favor; all methods when omitted.
        #[arg(long, value_parser = parse_method)]
        focus: Option<Method>,
    },
    /// Mean rank of each method over the feasible set.
    Mrr,
    /// Evaluate, manipulate in both modes and rank.
    Report,
}

#[derive(Clone, Copy, ValueEnum)]
enum CliMode {
    Intra,
    Inter,
}

fn parse_method(s: &str) -> Result<Method, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

impl Cmd {
    fn resolve(&self) -> Command {
        match self {
            Cmd::Train => Command::Train,
            Cmd::Attribute => Command::Attribute,
            Cmd::Evaluate => Command::Evaluate,
            Cmd::Manipulate { mode, focus } => Command::Manipulate {
                mode: match mode {
                    CliMode::Intra => Mode::Intra,
                    CliMode::Inter => Mode::Inter,
                },
                focus: *focus,
            },
            Cmd::Mrr => Command::Mrr,
            Cmd::Report => Command::Report,
        }
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig, Error> {
    let mut config = match (&cli.config, &cli.manifest) {
        (Some(path), _) => RunConfig::load(path)?,
        (None, Some(path)) => Manifest::load(path)?.config,
        (None, None) => return Err(Error::Config("pass --config or --manifest".into())),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if cli.correct_only {
        config.correct_only = true;
    }
    if let Some(out) = &cli.out {
        config.output_dir.clone_from(out);
    }
    Ok(config)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let command = cli.command.resolve();
    let mut out_dir = cli.out.clone().unwrap_or_else(|| PathBuf::from("."));
    let result = load_config(&cli).and_then(|config| {
        out_dir.clone_from(&config.output_dir);
        Session::new(config)?.run(command)
    });
    match result {
        Ok(manifest) => {
            println!("{}", manifest.display());
            ExitCode::SUCCESS
        }
        Err(err) => {
            eprintln!("error: {err}");
            if let Err(e) = write_error_record(&out_dir, &command.to_string(), &err) {
                eprintln!("could not write error record: {e}");
            }
            ExitCode::FAILURE
        }
    }
}
