use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use sobol_robust::perturb::{ExtremeSign, Target};
use sobol_robust::study::{self, LoadedConfig, RunOptions};
use sobol_robust::{Error, Result};

/// Sobol' indices and their robustness to perturbations of the input
/// marginal densities.
#[derive(Parser)]
#[command(name = "sobol-robust", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the full study and write every output file.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory; overrides `out` in the config.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overrides `seed` in the config.
        #[arg(long)]
        seed: Option<u64>,
        /// Reuse a matching bundle.json in the output directory instead of
        /// evaluating the model.
        #[arg(long)]
        reuse_bundle: bool,
    },
    /// Summarize a finished run.
    Report {
        #[arg(long)]
        out: PathBuf,
        /// Also write envelopes.svg and perturbed_marginals.svg.
        #[arg(long)]
        svg: bool,
    },
    /// Nominal indices only, printed as JSON.
    Indices {
        #[arg(long)]
        config: PathBuf,
    },
    /// Sample the perturbed inputs behind one target at its extremal
    /// accepted delta; prints CSV in physical coordinates.
    SamplePerturbed {
        #[arg(long)]
        out: PathBuf,
        /// Target index, e.g. T:2 or S:1.
        #[arg(long)]
        target: Target,
        #[arg(long, default_value = "max")]
        sign: ExtremeSign,
        #[arg(short = 'n', default_value_t = 1000)]
        n: usize,
    },
}

fn configure_threads() -> Result<()> {
    if let Ok(v) = std::env::var("SOBOL_ROBUST_THREADS") {
        let threads: usize = v
            .parse()
            .map_err(|_| Error::Config(format!("SOBOL_ROBUST_THREADS must be a positive integer, got `{v}`")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| Error::Config(e.to_string()))?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    configure_threads()?;
    match cli.command {
        Command::Run {
            config,
            out,
            seed,
            reuse_bundle,
        } => {
            let loaded = LoadedConfig::from_file(&config)?;
            let opts = RunOptions {
                out,
                seed,
                reuse_bundle,
            };
            let outcome = study::run_study(&loaded, &opts)?;
            eprintln!(
                "wrote {} ({} model calls, bundle holds {})",
                outcome.out.display(),
                outcome.model_calls,
                outcome.bundle_evaluations
            );
        }
        Command::Report { out, svg } => {
            print!("{}", study::report(&out, svg)?);
        }
        Command::Indices { config } => {
            let loaded = LoadedConfig::from_file(&config)?;
            let study = loaded.prepare()?;
            let bundle = study.evaluate()?;
            let est = study.indices(&bundle)?;
            println!("{}", serde_json::to_string_pretty(&est)?);
        }
        Command::SamplePerturbed { out, target, sign, n } => {
            let rows = study::sample_perturbed(&out, target, sign, n)?;
            let stdout = std::io::stdout();
            let mut w = stdout.lock();
            let p = rows.first().map_or(0, Vec::len);
            let header: Vec<String> = (1..=p).map(|i| format!("x{i}")).collect();
            let io = |e| Error::Io {
                path: "<stdout>".into(),
                source: e,
            };
            writeln!(w, "{}", header.join(",")).map_err(io)?;
            for row in rows {
                let line: Vec<String> = row.iter().map(f64::to_string).collect();
                writeln!(w, "{}", line.join(",")).map_err(io)?;
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
