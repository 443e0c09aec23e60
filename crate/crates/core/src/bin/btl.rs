use std::path::PathBuf;
use std::process::ExitCode;

use btl_core::cli::{cmd_fit, figure_config, run_sweep, CliError, KindArg, SweepConfig};
use clap::{Parser, Subcommand};

/// Bradley-Terry-Luce maximum-likelihood estimation and Monte-Carlo bias studies.
#[derive(Parser)]
#[command(name = "btl", version)]
struct Cli {
    /// Worker threads for sweeps (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit one estimator to a JSON comparison file and print the result as JSON.
    Fit {
        input: PathBuf,
        #[arg(long, value_enum, default_value = "standard")]
        kind: KindArg,
        /// Box bound: B for standard, A for stretched (default 2).
        #[arg(long)]
        bound: Option<f64>,
        /// True-parameter bound B; a stretched bound must exceed it.
        #[arg(long = "b-true", default_value_t = 1.0)]
        b_true: f64,
    },
    /// Run a Monte-Carlo sweep described by a JSON config.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Override the config's output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Regenerate the data behind one of the standard figures (1, 3, 4, 5, 6, 7).
    Figure {
        n: u8,
        #[arg(long)]
        iters: Option<usize>,
        #[arg(long, default_value_t = 20_240_601)]
        seed: u64,
        /// Output directory (default: figN).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(e.to_string()))?;
    }
    let config = match cli.command {
        Command::Fit { input, kind, bound, b_true } => {
            let fit = cmd_fit(&input, kind, bound, b_true)?;
            println!("{}", serde_json::to_string_pretty(&fit).expect("fit result serializes"));
            return Ok(());
        }
        Command::Sweep { config, out } => {
            let mut cfg = SweepConfig::load(&config)?;
            if let Some(out) = out {
                cfg.out_dir = out;
            }
            cfg
        }
        Command::Figure { n, iters, seed, out } => {
            figure_config(n, iters, seed, out.unwrap_or_else(|| PathBuf::from(format!("fig{n}"))))?
        }
    };
    let cells = config.cells()?.len();
    eprintln!("running {cells} cells x {} iterations", config.n_iters);
    let output = run_sweep(&config)?;
    let failed = output.outcomes.iter().filter(|o| o.result.is_err()).count();
    if failed > 0 {
        eprintln!("warning: {failed} of {cells} cells failed; see errors.csv");
    }
    for f in &output.files {
        eprintln!("wrote {}", f.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            match &e {
                CliError::Fit(fit) => eprintln!("{fit}"),
                other => eprintln!("error: {other}"),
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
