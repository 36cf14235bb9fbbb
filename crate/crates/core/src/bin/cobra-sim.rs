use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use cobra_core::cli::{cmd_compare, cmd_optimize, cmd_run, Exit, RunOptions};

#[derive(Parser)]
#[command(name = "cobra-sim", version, about = "Snake-robot gait simulator and optimizer")]
struct Args {
    #[command(subcommand)]
    command: Command,
    /// Trace sampling rate in Hz.
    #[arg(long, global = true, default_value_t = 100)]
    trace_hz: u32,
    /// Directory for relative output paths.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Print nothing on success.
    #[arg(long, global = true)]
    quiet: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a scenario and write its trace, metrics and plot data.
    Run { config: PathBuf },
    /// Search gait parameters within the [optimize] box.
    Optimize { config: PathBuf },
    /// Run two scenarios of equal duration and report them side by side.
    Compare { config_a: PathBuf, config_b: PathBuf },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { Exit::Config.code() as u8 } else { 0 });
        }
    };
    let opts = RunOptions {
        trace_hz: args.trace_hz,
        out_dir: args.out,
        quiet: args.quiet,
    };
    let outcome = match &args.command {
        Command::Run { config } => cmd_run(config, &opts),
        Command::Optimize { config } => cmd_optimize(config, &opts),
        Command::Compare { config_a, config_b } => cmd_compare(config_a, config_b, &opts),
    };
    if outcome.exit == Exit::Ok {
        if !opts.quiet {
            println!("{}", outcome.summary);
            for a in &outcome.artifacts {
                println!("  wrote {}", a.display());
            }
        }
    } else {
        eprintln!("{}", outcome.summary);
        for a in &outcome.artifacts {
            eprintln!("  wrote partial {}", a.display());
        }
    }
    ExitCode::from(outcome.exit.code() as u8)
}
