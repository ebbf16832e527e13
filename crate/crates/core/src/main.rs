use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use rsu_sched::cli::{self, CliError, Config};

#[derive(Parser)]
#[command(name = "rsu-sched", version, about = "Roadside-unit request scheduling simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every configured policy and seed at one scenario point.
    Simulate(RunArgs),
    /// Run the cross product of a parameter sweep, policies and seeds.
    Sweep(RunArgs),
    /// Aggregate a run CSV into mean/std per policy, rate and class.
    Summarize {
        /// CSV produced by `simulate` or `sweep`.
        input: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Flat `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one config key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed count or comma-separated seed list.
    #[arg(long, value_name = "N|LIST")]
    seeds: Option<String>,
    /// One or more policies, comma-separated.
    #[arg(long, value_name = "SPEC[,SPEC...]")]
    policy: Option<String>,
    #[arg(long, value_name = "FIELD=V1,V2,...")]
    sweep: Option<String>,
}

fn load(args: &RunArgs) -> Result<Config, CliError> {
    let text = args.config.as_deref().map(cli::read_input).transpose()?;
    let path = args.config.as_ref().map(|p| p.display().to_string());
    let mut overrides = args.set.clone();
    if let Some(s) = &args.seeds {
        overrides.push(format!("seeds={s}"));
    }
    if let Some(p) = &args.policy {
        overrides.push(format!("policy={p}"));
    }
    if let Some(s) = &args.sweep {
        overrides.push(format!("sweep={s}"));
    }
    if let Some(o) = &args.out {
        overrides.push(format!("out={}", o.display()));
    }
    let file = path.as_deref().zip(text.as_deref());
    let mut config = cli::parse_config(file, &overrides)?;
    config.threads = cli::threads_from_env();
    Ok(config)
}

fn execute(command: Command) -> Result<(), CliError> {
    match command {
        Command::Simulate(args) => {
            let config = load(&args)?;
            let csv = cli::run_single(&config)?;
            cli::write_output(config.out.as_deref(), &csv)
        }
        Command::Sweep(args) => {
            let config = load(&args)?;
            let csv = cli::run_sweep(&config)?;
            cli::write_output(config.out.as_deref(), &csv)
        }
        Command::Summarize { input, out } => {
            let text = cli::read_input(&input)?;
            let csv = cli::summarize_csv(&text)?;
            cli::write_output(out.as_deref(), &csv)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("rsu-sched: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
