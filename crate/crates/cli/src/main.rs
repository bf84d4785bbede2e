//! `duotrain`: data preparation, joint training, checkpoint averaging,
//! beam decoding and scoring from one JSON run config.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use duotrain::model::ModelError;
use duotrain::trainer::TrainError;

/// A problem with the invocation or configuration (exit code 1).
#[derive(Debug)]
pub struct Invalid(pub String);

impl std::fmt::Display for Invalid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Invalid {}

#[derive(Parser)]
#[command(name = "duotrain", version, about = "Joint speech and text training for speech-to-text models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Run config plus `--section.field value` overrides.
#[derive(Args)]
struct ConfigArgs {
    /// JSON run config; omitted sections take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides as `--section.field value` or `--section.field=value`,
    /// e.g. `--train.epochs 5`.
    #[arg(trailing_var_arg = true, allow_hyphen_values = true, value_name = "OVERRIDES")]
    overrides: Vec<String>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Metric {
    Wer,
    Bleu,
}

#[derive(Clone, Copy, ValueEnum)]
enum Field {
    Transcript,
    Translation,
}

#[derive(Subcommand)]
enum Command {
    /// Build the source (phoneme or character) vocabulary and learn the
    /// subword vocabulary into the artifacts directory.
    PrepareText(ConfigArgs),
    /// Extract and cache features for manifests and fit CMVN on the
    /// training manifest.
    PrepareAudio {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Further manifests to cache (the training manifest is always done).
        #[arg(long = "manifest")]
        manifests: Vec<PathBuf>,
    },
    /// Train a model; writes one checkpoint per epoch and an average of the
    /// last `train.average_last`.
    Train(ConfigArgs),
    /// Average checkpoints parameter-wise.
    Average {
        /// Checkpoints to average.
        #[arg(long = "input", num_args = 1..)]
        inputs: Vec<PathBuf>,
        /// Directory of `checkpoint_NNNN.dtckpt` files to take the newest from.
        #[arg(long, conflicts_with = "inputs")]
        dir: Option<PathBuf>,
        /// How many of the newest checkpoints in `--dir` to average.
        #[arg(long, default_value_t = 10, requires = "dir")]
        last: usize,
        #[arg(long)]
        output: PathBuf,
    },
    /// Beam-decode a manifest to `id<TAB>hypothesis<TAB>normalized_score`.
    Decode {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Score hypotheses against references and print a JSON report.
    Score {
        #[arg(long, value_enum)]
        metric: Metric,
        /// Plain text (one sentence per line) or a speech manifest.
        #[arg(long = "ref")]
        reference: PathBuf,
        /// Plain text (one sentence per line) or a decode output file.
        #[arg(long)]
        hyp: PathBuf,
        /// Manifest column used as reference.
        #[arg(long, value_enum, default_value = "transcript")]
        field: Field,
        /// Also write the report here.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Write the synthetic corpus: lexicon, manifests, features and text.
    GenSynth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 200)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        text_size: usize,
        #[arg(long, default_value_t = 0)]
        test_size: usize,
        #[arg(long, default_value_t = 30)]
        words: usize,
        #[arg(long, default_value_t = 0)]
        held_out: usize,
    },
}

fn configure_threads() -> Result<(), Invalid> {
    let Ok(raw) = std::env::var("DUOTRAIN_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Invalid(format!("DUOTRAIN_THREADS must be a positive integer, got `{raw}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Invalid(format!("thread pool: {e}")))
}

fn run(cli: Cli) -> anyhow::Result<()> {
    configure_threads()?;
    match cli.command {
        Command::PrepareText(c) => commands::prepare_text(&c.load()?),
        Command::PrepareAudio { cfg, manifests } => commands::prepare_audio(&cfg.load()?, &manifests),
        Command::Train(c) => commands::train(&c.load()?),
        Command::Average {
            inputs,
            dir,
            last,
            output,
        } => commands::average(&inputs, dir.as_deref(), last, &output),
        Command::Decode {
            cfg,
            checkpoint,
            manifest,
            output,
        } => commands::decode(&cfg.load()?, &checkpoint, &manifest, &output),
        Command::Score {
            metric,
            reference,
            hyp,
            field,
            output,
        } => commands::score(metric, &reference, &hyp, field, output.as_deref()),
        Command::GenSynth {
            out,
            seed,
            size,
            text_size,
            test_size,
            words,
            held_out,
        } => commands::gen_synth(
            &out,
            &duotrain::synth::SynthConfig {
                seed,
                size,
                text_size,
                test_size,
                words,
                held_out,
                ..Default::default()
            },
        ),
    }
}

impl ConfigArgs {
    /// `--config` may also appear among the trailing overrides.
    fn load(&self) -> Result<config::RunConfig, Invalid> {
        let mut config = self.config.clone();
        let mut rest = Vec::with_capacity(self.overrides.len());
        let mut it = self.overrides.iter();
        while let Some(a) = it.next() {
            let path = match a.strip_prefix("--config") {
                Some("") => it.next().cloned(),
                Some(v) if v.starts_with('=') => Some(v[1..].to_string()),
                _ => {
                    rest.push(a.clone());
                    continue;
                }
            };
            let path = path.ok_or_else(|| Invalid("`--config` needs a value".into()))?;
            if config.replace(PathBuf::from(path)).is_some() {
                return Err(Invalid("`--config` given twice".into()));
            }
        }
        config::RunConfig::load(config.as_deref(), &rest)
    }
}

fn is_validation(err: &anyhow::Error) -> bool {
    err.chain().any(|e| {
        e.is::<Invalid>()
            || matches!(e.downcast_ref::<TrainError>(), Some(TrainError::Config(_)))
            || matches!(e.downcast_ref::<ModelError>(), Some(ModelError::Config(_)))
    })
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
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(if is_validation(&e) { 1 } else { 2 })
        }
    }
}
