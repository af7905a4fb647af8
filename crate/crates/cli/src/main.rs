//! `lpfl`: run, validate and compare LP-FL experiments, and generate
//! synthetic corpora.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use lpfl::data::{synth_corpus, write_corpus, SynthConfig};
use lpfl::federation::Arm;
use lpfl::harness::{compare, read_report, run, validate_config, ExperimentSpec, Overrides, RunOptions, REPORT_FILE};

#[derive(Parser)]
#[command(name = "lpfl", version, about = "Low-parameter federated prompt tuning experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment end to end.
    Run {
        #[command(flatten)]
        target: Target,
        /// Clients trained at the same time (does not change results).
        #[arg(long, default_value_t = 1)]
        parallel_clients: usize,
        /// Continue from the latest round checkpoint in the output directory.
        #[arg(long)]
        resume: bool,
        /// Stop after this many rounds, leaving the run resumable.
        #[arg(long)]
        stop_after_round: Option<usize>,
    },
    /// Check a config without running it.
    Validate {
        #[command(flatten)]
        target: Target,
    },
    /// Tabulate reports from runs on the same dataset.
    Compare {
        /// Report files or run directories containing report.json.
        #[arg(required = true)]
        reports: Vec<PathBuf>,
        /// Also write the table to this file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a synthetic sentiment corpus as JSON lines.
    Synth {
        /// Destination corpus file.
        #[arg(long)]
        out: PathBuf,
        /// Take generator settings from an experiment config's [data.synthetic].
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        vocab_size: Option<usize>,
        #[arg(long)]
        signal_words_per_label: Option<usize>,
        #[arg(long)]
        noise_rate: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
    },
}

#[derive(Args)]
struct Target {
    /// Experiment config file (TOML).
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// One of lp-fl, fp-fl, lp-ct, fp-ct. Centralized arms imply one client.
    #[arg(long, value_parser = parse_arm)]
    arm: Option<Arm>,
    #[arg(long)]
    clients: Option<usize>,
}

fn parse_arm(s: &str) -> Result<Arm, String> {
    Arm::parse(s).ok_or_else(|| format!("unknown arm {s:?}; expected lp-fl, fp-fl, lp-ct or fp-ct"))
}

impl Target {
    fn spec(&self) -> Result<ExperimentSpec> {
        let mut spec =
            ExperimentSpec::load(&self.config).with_context(|| format!("reading {}", self.config.display()))?;
        spec.apply(&Overrides {
            seed: self.seed,
            output: self.out.clone(),
            arm: self.arm,
            clients: self.clients,
        });
        Ok(spec)
    }
}

fn report_path(p: &Path) -> PathBuf {
    if p.is_dir() {
        p.join(REPORT_FILE)
    } else {
        p.to_path_buf()
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match dispatch(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            log::error!("{e:#}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Run {
            target,
            parallel_clients,
            resume,
            stop_after_round,
        } => {
            let spec = target.spec()?;
            let outcome = run(
                &spec,
                &RunOptions {
                    parallel_clients,
                    resume,
                    stop_after_round,
                },
            )?;
            match outcome.report {
                Some(r) => println!(
                    "{}: test accuracy {:.4}, final validation accuracy {:.4}, {} bytes exchanged; artifacts in {}",
                    r.name,
                    r.test_accuracy,
                    r.final_val_accuracy,
                    r.comm_total(),
                    outcome.output.display()
                ),
                None => println!(
                    "stopped after round {}; resume with --resume (artifacts in {})",
                    outcome.rounds_completed,
                    outcome.output.display()
                ),
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Validate { target } => {
            let spec = target.spec()?;
            let violations = validate_config(&spec);
            if violations.is_empty() {
                println!("{}: ok", target.config.display());
                Ok(ExitCode::SUCCESS)
            } else {
                for v in &violations {
                    println!("{v}");
                }
                Ok(ExitCode::from(2))
            }
        }
        Command::Compare { reports, out } => {
            let loaded = reports
                .iter()
                .map(|p| {
                    let path = report_path(p);
                    read_report(&path).with_context(|| format!("reading {}", path.display()))
                })
                .collect::<Result<Vec<_>>>()?;
            let table = compare(loaded)?.to_markdown();
            print!("{table}");
            if let Some(path) = out {
                std::fs::write(&path, &table).with_context(|| format!("writing {}", path.display()))?;
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Synth {
            out,
            config,
            n,
            vocab_size,
            signal_words_per_label,
            noise_rate,
            seed,
        } => {
            let mut cfg = match &config {
                Some(p) => {
                    ExperimentSpec::load(p)
                        .with_context(|| format!("reading {}", p.display()))?
                        .data
                        .synthetic
                }
                None => SynthConfig::default(),
            };
            if let Some(v) = n {
                cfg.n = v;
            }
            if let Some(v) = vocab_size {
                cfg.vocab_size = v;
            }
            if let Some(v) = signal_words_per_label {
                cfg.signal_words_per_label = v;
            }
            if let Some(v) = noise_rate {
                cfg.noise_rate = v;
            }
            if let Some(v) = seed {
                cfg.seed = v;
            }
            let corpus = synth_corpus(&cfg)?;
            if out.exists() && out.is_dir() {
                bail!("{} is a directory", out.display());
            }
            write_corpus(&out, &corpus.examples)?;
            println!(
                "wrote {} examples to {} ({:.1}% labels flipped)",
                corpus.examples.len(),
                out.display(),
                100.0 * corpus.flip_fraction()
            );
            Ok(ExitCode::SUCCESS)
        }
    }
}
