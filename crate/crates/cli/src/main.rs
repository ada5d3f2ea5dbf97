use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand, ValueEnum};
use ps3_cli::commands::{self, CompileArgs, DecodeArgs, EvalArgs, TrainArgs};
use ps3_cli::synth::SynthConfig;
use ps3_core::{DecodeConfig, DecodeMode};

#[derive(Parser)]
#[command(
    name = "ps3",
    version,
    about = "Train captioners from complete and partially-specified sequences"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compile a constraint spec to an automaton and list its shortest members.
    CompileFsa {
        #[arg(long)]
        vocab: PathBuf,
        /// Constraint spec JSON.
        #[arg(long)]
        spec: PathBuf,
        /// Where to write the automaton JSON.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 16)]
        max_len: usize,
        #[arg(long, default_value_t = 20)]
        samples: usize,
    },
    /// Train a model (PS3 or, on complete-only data, plain supervised).
    Train {
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        config: PathBuf,
        /// JSONL data files; repeat for several.
        #[arg(long, required = true)]
        data: Vec<PathBuf>,
        /// Output directory for checkpoints and report.jsonl.
        #[arg(long)]
        out: PathBuf,
        /// Overrides every seed in the config.
        #[arg(long)]
        seed: Option<u64>,
        /// Continue from a checkpoint written by an earlier run.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Decode every record of a data file.
    Decode {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// JSONL output; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        decode: DecodeFlags,
        /// Apply each record's constraint.
        #[arg(long)]
        constrained: bool,
    },
    /// Perplexity and mention F1 on an evaluation file.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Concept list: [{"name": .., "words": [..]}].
        #[arg(long)]
        mentions: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        decode: DecodeFlags,
    },
    /// Write the synthetic held-out-noun corpus.
    Synth {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 2000)]
        train_complete: usize,
        #[arg(long, default_value_t = 1000)]
        train_partial: usize,
        #[arg(long, default_value_t = 200)]
        eval_size: usize,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Eos,
    Fixed,
}

#[derive(Args)]
struct DecodeFlags {
    #[arg(long, default_value_t = 5)]
    beam_size: usize,
    #[arg(long, default_value_t = 16)]
    max_len: usize,
    #[arg(long, value_enum, default_value = "eos")]
    mode: ModeArg,
}

impl DecodeFlags {
    fn config(&self) -> DecodeConfig {
        let mode = match self.mode {
            ModeArg::Eos => DecodeMode::EosTerminated,
            ModeArg::Fixed => DecodeMode::FixedLength,
        };
        DecodeConfig::new(self.beam_size, self.max_len, mode)
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::CompileFsa {
            vocab,
            spec,
            out,
            max_len,
            samples,
        } => {
            let summary = commands::compile_fsa(&CompileArgs {
                vocab,
                spec,
                out,
                max_len,
                samples,
            })?;
            println!("{}", serde_json::to_string_pretty(&summary)?);
        }
        Command::Train {
            vocab,
            config,
            data,
            out,
            seed,
            resume,
        } => {
            let s = commands::train(&TrainArgs {
                vocab,
                config,
                data,
                out,
                seed,
                resume,
            })?;
            eprintln!(
                "trained {} steps on {} complete and {} partial examples; final checkpoint {}",
                s.steps,
                s.complete,
                s.partial,
                s.final_checkpoint.display()
            );
        }
        Command::Decode {
            checkpoint,
            vocab,
            data,
            out,
            decode,
            constrained,
        } => {
            commands::decode(&DecodeArgs {
                checkpoint,
                vocab,
                data,
                out,
                decode: decode.config(),
                constrained,
            })?;
        }
        Command::Eval {
            checkpoint,
            vocab,
            data,
            mentions,
            out,
            decode,
        } => {
            commands::eval(&EvalArgs {
                checkpoint,
                vocab,
                data,
                mentions,
                out,
                decode: decode.config(),
            })?;
        }
        Command::Synth {
            seed,
            out,
            train_complete,
            train_partial,
            eval_size,
        } => {
            let cfg = SynthConfig {
                seed,
                train_complete,
                train_partial,
                eval_heldout: eval_size,
                eval_indomain: eval_size,
                ..SynthConfig::default()
            };
            commands::synth(&cfg, &out)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(ps3_cli::exit_code(&e))
        }
    }
}
