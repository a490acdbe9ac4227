use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand, ValueEnum};
use ctefm_cli::pipeline::{
    cmd_convert, cmd_eval, cmd_synth_corpus, cmd_train, exit_code, ConversionRequest, EvalArgs, SynthCorpusArgs,
    TrainArgs,
};
use ctefm_cli::vocoder::vocoder_from_id;
use ctefm_core::features::Split;

#[derive(Parser)]
#[command(name = "ctefm", version, about = "Zero-shot voice conversion with a content-timbre encoder and flow matching")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Val,
    Test,
    All,
}

impl SplitArg {
    fn split(self) -> Option<Split> {
        match self {
            SplitArg::Train => Some(Split::Train),
            SplitArg::Val => Some(Split::Val),
            SplitArg::Test => Some(Split::Test),
            SplitArg::All => None,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic multi-speaker corpus and its manifest.
    SynthCorpus {
        #[arg(long, default_value_t = 10)]
        n_speakers: usize,
        #[arg(long, default_value_t = 10)]
        n_utts: usize,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        force: bool,
    },
    /// Train the encoder and vector field on the train split of a manifest.
    Train {
        /// TOML (or .json) training config; defaults apply when omitted.
        #[arg(long)]
        config_path: Option<PathBuf>,
        #[arg(long)]
        manifest_path: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long)]
        max_iters: Option<u64>,
        #[arg(long)]
        seed: Option<u64>,
        /// Continue from a checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Write validation.json for the val split after training.
        #[arg(long)]
        validate: bool,
        #[arg(long)]
        force: bool,
    },
    /// Convert a source utterance to the voice of a reference utterance.
    Convert {
        #[arg(long)]
        source_path: PathBuf,
        #[arg(long)]
        reference_path: PathBuf,
        #[arg(long)]
        output_path: PathBuf,
        #[arg(long)]
        checkpoint_path: PathBuf,
        #[arg(long, default_value_t = 20)]
        euler_steps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// identity-mel or external
        #[arg(long, default_value = "identity-mel")]
        vocoder: String,
        /// Program (plus arguments) for the external vocoder.
        #[arg(long)]
        vocoder_cmd: Option<String>,
    },
    /// Score random cross-speaker conversions.
    Eval {
        #[arg(long)]
        manifest_path: PathBuf,
        #[arg(long)]
        checkpoint_path: PathBuf,
        #[arg(long)]
        out_report: PathBuf,
        #[arg(long, default_value_t = 100)]
        pairs: usize,
        #[arg(long, default_value_t = 20)]
        euler_steps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value = "val")]
        split: SplitArg,
    },
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::SynthCorpus { n_speakers, n_utts, out_dir, seed, force } => {
            let manifest = cmd_synth_corpus(&SynthCorpusArgs { n_speakers, n_utts, out_dir, seed, force })?;
            println!("{}", manifest.display());
        }
        Command::Train { config_path, manifest_path, out_dir, max_iters, seed, resume, validate, force } => {
            let out = cmd_train(&TrainArgs {
                config_path,
                manifest_path,
                out_dir,
                max_iters,
                seed,
                resume,
                validate,
                force,
            })?;
            if let Some(v) = &out.validation {
                println!("{}", serde_json::to_string(v)?);
            }
            println!("{}", out.final_checkpoint.display());
        }
        Command::Convert {
            source_path,
            reference_path,
            output_path,
            checkpoint_path,
            euler_steps,
            seed,
            vocoder,
            vocoder_cmd,
        } => {
            let vocoder = vocoder_from_id(&vocoder, vocoder_cmd.as_deref())?;
            let req = ConversionRequest { source_path, reference_path, output_path, checkpoint_path, euler_steps, seed };
            let written = cmd_convert(&req, vocoder.as_ref())?;
            println!("{}", written.display());
        }
        Command::Eval { manifest_path, checkpoint_path, out_report, pairs, euler_steps, seed, split } => {
            let report = cmd_eval(&EvalArgs {
                manifest: manifest_path,
                checkpoint: checkpoint_path,
                out_report,
                pairs,
                euler_steps,
                seed,
                split: split.split(),
            })?;
            println!("{}", serde_json::to_string(&report)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
