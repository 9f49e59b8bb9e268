use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use constrained_smc::experiment::{self, ExperimentError, Overrides, RunSpec};

/// Constrained generation with sequential Monte Carlo.
#[derive(Parser)]
#[command(name = "csmc", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a character n-gram model on a corpus.
    Train {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value_t = 3)]
        order: usize,
        #[arg(long, default_value_t = 0.1)]
        smoothing: f64,
        /// Document separator byte.
        #[arg(long, default_value = "\n")]
        delimiter: char,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run every method of a spec for every seed; writes JSON lines.
    Run(SpecArgs),
    /// Enumerate a bundled instance and write its oracle.
    Enumerate {
        #[arg(long)]
        instance: String,
        /// Maximum number of prefixes to visit.
        #[arg(long)]
        cap: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Estimate approximation quality for two or more methods.
    Quality(SpecArgs),
    /// Pairwise Welch tests over an estimates CSV.
    Compare {
        csv: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Time FullSMC steps with the character proposal on the perf instance.
    Bench {
        #[arg(long, default_value_t = 10)]
        particles: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 5)]
        runs: usize,
        #[arg(long, default_value_t = 32)]
        max_steps: usize,
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct SpecArgs {
    #[arg(long)]
    spec: PathBuf,
    /// First seed; overrides `seeds.start`.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides `particles` for every method.
    #[arg(long)]
    particles: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    workers: Option<usize>,
    /// Remote next-token endpoint replacing the spec's model.
    #[arg(long, env = "CSMC_LM_ENDPOINT")]
    lm_endpoint: Option<String>,
}

impl SpecArgs {
    fn load(&self) -> Result<RunSpec, ExperimentError> {
        let mut spec = RunSpec::load(&self.spec)?;
        spec.apply(&Overrides {
            seed: self.seed,
            particles: self.particles,
            out: self.out.clone(),
            lm_endpoint: self.lm_endpoint.clone(),
        });
        Ok(spec)
    }
}

fn print_json<T: serde::Serialize>(value: &T) {
    println!("{}", serde_json::to_string_pretty(value).expect("serializable"));
}

fn write_json<T: serde::Serialize>(value: &T, out: Option<&PathBuf>) -> Result<(), ExperimentError> {
    match out {
        Some(path) => {
            let text = serde_json::to_string_pretty(value).expect("serializable");
            std::fs::write(path, text).map_err(|e| ExperimentError::Io {
                path: path.clone(),
                source: e,
            })
        }
        None => {
            print_json(value);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(ExperimentError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(command: Command) -> Result<ExitCode, ExperimentError> {
    match command {
        Command::Train {
            corpus,
            order,
            smoothing,
            delimiter,
            out,
        } => {
            if order == 0 {
                return Err(ExperimentError::Usage("--order must be at least 1".into()));
            }
            let delimiter = u8::try_from(delimiter)
                .map_err(|_| ExperimentError::Usage("--delimiter must be a single byte".into()))?;
            let report = experiment::cmd_train(&corpus, order, smoothing, delimiter, &out)?;
            eprintln!(
                "vocabulary size {}, held-out perplexity {:.4}",
                report.vocab_size, report.heldout_perplexity
            );
            print_json(&report);
        }
        Command::Run(args) => {
            let spec = args.load()?;
            let summary = experiment::cmd_run(&spec, args.workers)?;
            eprintln!(
                "{} records, config {}",
                summary.records, summary.config_hash
            );
            if summary.all_dead > 0 {
                eprintln!("error: {} runs ended with every particle at zero weight", summary.all_dead);
                return Ok(ExitCode::from(3));
            }
        }
        Command::Enumerate { instance, cap, out } => {
            let e = experiment::cmd_enumerate(&instance, cap, out.as_deref())?;
            eprintln!(
                "Z = {:.12e} over {} sequences (truncation mass {:.3e})",
                e.z_global,
                e.sequences.len(),
                e.truncation_mass
            );
            if out.is_none() {
                print_json(&e);
            }
        }
        Command::Quality(args) => {
            let spec = args.load()?;
            let (summary, _) = experiment::cmd_quality(&spec, args.workers)?;
            for m in &summary.methods {
                eprintln!(
                    "{:<20} {:>12.4} ± {:<10.4} accept {:.3}",
                    m.method, m.estimate.point, m.estimate.std_error, m.acceptance_rate
                );
            }
            if spec.out.is_none() {
                print_json(&summary);
            }
        }
        Command::Compare { csv, out } => {
            let report = experiment::cmd_compare(&csv)?;
            write_json(&report, out.as_ref())?;
        }
        Command::Bench {
            particles,
            seed,
            runs,
            max_steps,
            workers,
            out,
        } => {
            let report = experiment::cmd_bench(particles, seed, runs, max_steps, workers)?;
            eprintln!(
                "median step {:.3} ms over {} steps ({} tokens, {} rules)",
                report.median_step_ms, report.steps, report.vocab_size, report.grammar_rules
            );
            write_json(&report, out.as_ref())?;
        }
    }
    Ok(ExitCode::SUCCESS)
}
