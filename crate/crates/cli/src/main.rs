use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use hflab::experiment::{cmd_jh, cmd_resume, cmd_run, RunOptions};

/// Harmonic heat-flow lab for flat bundles over the circle and torus.
#[derive(Parser)]
#[command(name = "hflab", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Expect {
    Isomorphic,
}

#[derive(Subcommand)]
enum Command {
    /// Run the flow described by a config file.
    Run {
        config: PathBuf,
        /// Exit with status 1 unless the verdict matches.
        #[arg(long)]
        expect: Option<Expect>,
        /// Output directory (overrides HFLAB_OUT and the config).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the graded object of a commuting family of matrices.
    Jh { matrices: PathBuf },
    /// Continue a run from its checkpoint.
    Resume {
        checkpoint: PathBuf,
        #[arg(long = "t-max")]
        t_max: Option<f64>,
        #[arg(long)]
        expect: Option<Expect>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Run { config, expect, out } => {
            cmd_run(&config, &RunOptions { out, expect_isomorphic: expect.is_some() })
        }
        Command::Jh { matrices } => cmd_jh(&matrices, &mut std::io::stdout().lock()),
        Command::Resume { checkpoint, t_max, expect, out } => {
            cmd_resume(&checkpoint, t_max, &RunOptions { out, expect_isomorphic: expect.is_some() })
        }
    };
    ExitCode::from(code as u8)
}
