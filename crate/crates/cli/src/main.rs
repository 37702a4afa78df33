//! `unitrain`: preprocess, pre-train, fine-tune and evaluate from a TOML run
//! config. Exit codes: 0 success, 1 config error, 2 data error, 3 runtime
//! failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::json;
use unitrain::datapipe::DatasetSpec;
use unitrain::run::{self, synth, RunConfig};
use unitrain::Error;

#[derive(Parser)]
#[command(name = "unitrain", version, about = "Desk-scale multi-paradigm transformer pre-training")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Clean, tokenize and sample the configured corpora into the archive.
    Preprocess {
        #[arg(long)]
        config: PathBuf,
    },
    /// Multi-task pre-training; `--resume` continues from a checkpoint.
    Pretrain {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Continue training selected parameter groups from a checkpoint.
    Finetune {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        from: PathBuf,
        /// Groups to update: universal, nlu-head, nlg-head or all
        /// (repeatable; default from the config).
        #[arg(long = "update")]
        update: Vec<String>,
    },
    /// Zero-shot evaluation of a checkpoint on a JSONL item file.
    Eval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        items: PathBuf,
    },
    /// Progressive factors every `--every` steps, one JSON object per line.
    ScheduleDump {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 100)]
        every: u64,
    },
    /// Header and per-group digests of a checkpoint.
    InspectCheckpoint { path: PathBuf },
    /// Writes a seeded toy corpus, its knowledge graph and a desk config.
    SynthCorpus {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 80)]
        docs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 768)]
        vocab: usize,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 1,
        Error::Data(_) | Error::Json(_) => 2,
        _ => 3,
    }
}

fn print_json(v: &impl serde::Serialize) -> unitrain::Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn run(cmd: Command) -> unitrain::Result<()> {
    match cmd {
        Command::Preprocess { config } => print_json(&run::cmd_preprocess(&RunConfig::load(&config)?)?),
        Command::Pretrain { config, resume } => {
            print_json(&run::cmd_pretrain(&RunConfig::load(&config)?, resume.as_deref())?)
        }
        Command::Finetune { config, from, update } => {
            let flags = (!update.is_empty()).then_some(update.as_slice());
            print_json(&run::cmd_finetune(&RunConfig::load(&config)?, &from, flags)?)
        }
        Command::Eval { config, checkpoint, items } => {
            let report = run::cmd_eval(&RunConfig::load(&config)?, &checkpoint, &items)?;
            print_json(&report.summary)
        }
        Command::ScheduleDump { config, every } => {
            let cfg = RunConfig::load(&config)?;
            for (step, f) in run::schedule_dump(&cfg, every) {
                println!("{}", json!({ "step": step, "factors": f }));
            }
            Ok(())
        }
        Command::InspectCheckpoint { path } => print_json(&run::cmd_inspect_checkpoint(&path)?),
        Command::SynthCorpus { out, docs, seed, vocab } => {
            synth::generate(seed, docs, "synth").write(&out)?;
            let spec = DatasetSpec { name: "synth".into(), path: "corpus.jsonl".into(), multiplier: 1 };
            let mut cfg = RunConfig::desk("run".into(), vec![spec], Some("knowledge.jsonl".into()), vocab);
            cfg.seed = seed;
            std::fs::write(out.join("run.toml"), cfg.to_toml()?)?;
            println!("{}", out.join("run.toml").display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
