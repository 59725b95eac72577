//! `mmt`: training, decoding, data selection and evaluation from the shell.

mod commands;
mod config;
mod error;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(
    name = "mmt",
    version,
    about = "Multimodal neural machine translation and captioning toolkit"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a translation or captioning model (cross-entropy or self-critical)
    Train(TrainArgs),
    /// Translate one sentence per input line with beam search
    Translate(TranslateArgs),
    /// Caption every image listed in a features manifest
    Caption(CaptionArgs),
    /// Score hypothesis files against a reference with BLEU, chrF3 and GLEU
    Eval(EvalArgs),
    /// Train a character-level language model
    LmTrain(LmTrainArgs),
    /// Score sentences with a character-level language model
    LmScore(LmScoreArgs),
    /// Select rule-passing parallel pairs ranked by target-side LM score
    SelectData(SelectDataArgs),
    /// Back-translate target-language text with a reverse model
    Backtranslate(BacktranslateArgs),
    /// Decode n-best lists and pick one hypothesis per line with a scorer
    Rescore(RescoreArgs),
    /// Corpus statistics: sentence and token counts, lengths, OOV rate
    Stats(StatsArgs),
}

#[derive(Args, Debug)]
pub struct ModelArgs {
    /// Configuration file (sectioned key = value) [default: built-in defaults]
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Model checkpoint (.nmck)
    #[arg(long)]
    pub model: PathBuf,
    /// Source vocabulary file, one token per line
    #[arg(long)]
    pub vocab_src: Option<PathBuf>,
    /// Target vocabulary file, one token per line
    #[arg(long)]
    pub vocab_tgt: PathBuf,
}

#[derive(Args, Debug, Clone, Copy)]
pub struct DecodeArgs {
    /// Beam width [default: config decode.beam, else 10]
    #[arg(long)]
    pub beam: Option<usize>,
    /// Length-penalty exponent [default: config decode.alpha, else 1.0]
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Maximum output length; 0 means 3 x source length + 5 [default: config decode.max_len, else 0]
    #[arg(long)]
    pub max_len: Option<usize>,
}

#[derive(Args, Debug, Clone, Copy)]
pub struct JobsArg {
    /// Worker threads for sentence-level parallelism; output order is always input order
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Configuration file (sectioned key = value) [default: built-in defaults]
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Training source corpus (not used by image-only models)
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Training target corpus; in multilingual mode each line starts with its language token
    #[arg(long)]
    pub target: PathBuf,
    /// Validation source corpus
    #[arg(long)]
    pub valid_input: Option<PathBuf>,
    /// Validation target corpus
    #[arg(long)]
    pub valid_target: PathBuf,
    /// Source vocabulary; read if it exists, otherwise built from the training source and written
    #[arg(long)]
    pub vocab_src: Option<PathBuf>,
    /// Target vocabulary; read if it exists, otherwise built from the training target and written
    #[arg(long)]
    pub vocab_tgt: PathBuf,
    /// Training image manifest: <line-index> TAB <feature-file> per line
    #[arg(long)]
    pub features_manifest: Option<PathBuf>,
    /// Validation image manifest
    #[arg(long)]
    pub valid_features_manifest: Option<PathBuf>,
    /// Initial checkpoint to continue from [default: fresh initialisation]
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Best checkpoint is written here
    #[arg(long)]
    pub output: PathBuf,
    /// Self-critical reward (bleu or gleu); enables self-critical training [default: off]
    #[arg(long)]
    pub reward: Option<String>,
    /// Cross-entropy weight: a constant or linear:<from>:<to>:<steps> [default: config scst.lambda, else 0.5]
    #[arg(long)]
    pub lambda: Option<String>,
    /// Seed for initialisation, batching and sampling
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[command(flatten)]
    pub jobs: JobsArg,
}

#[derive(Args, Debug)]
pub struct TranslateArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Source sentences, one per line; - reads stdin
    #[arg(long, default_value = "-")]
    pub input: PathBuf,
    /// Translations, one per line; - writes stdout
    #[arg(long, default_value = "-")]
    pub output: PathBuf,
    /// Image manifest for multimodal models
    #[arg(long)]
    pub features_manifest: Option<PathBuf>,
    #[command(flatten)]
    pub decode: DecodeArgs,
    /// Comma-separated alpha values to sweep; prints corpus BLEU per value instead of translations
    #[arg(long, requires = "reference")]
    pub sweep_alpha: Option<String>,
    /// Reference translations for --sweep-alpha
    #[arg(long)]
    pub reference: Option<PathBuf>,
    #[command(flatten)]
    pub jobs: JobsArg,
}

#[derive(Args, Debug)]
pub struct CaptionArgs {
    /// Configuration file (sectioned key = value) [default: built-in defaults]
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Captioner checkpoint (.nmck)
    #[arg(long)]
    pub model: PathBuf,
    /// Target vocabulary file
    #[arg(long)]
    pub vocab_tgt: PathBuf,
    /// Image manifest; one caption is written per entry, in line-index order
    #[arg(long)]
    pub features_manifest: PathBuf,
    /// Language token for multilingual captioners
    #[arg(long)]
    pub lang: Option<String>,
    /// Captions, one per line; - writes stdout
    #[arg(long, default_value = "-")]
    pub output: PathBuf,
    #[command(flatten)]
    pub decode: DecodeArgs,
    #[command(flatten)]
    pub jobs: JobsArg,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Hypothesis file; repeat to evaluate several, one output line each
    #[arg(long, required = true)]
    pub input: Vec<PathBuf>,
    /// Reference file, line-aligned with every hypothesis file
    #[arg(long)]
    pub reference: PathBuf,
}

#[derive(Args, Debug)]
pub struct LmTrainArgs {
    /// Configuration file (sectioned key = value) [default: built-in defaults]
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Training sentences, one per line
    #[arg(long)]
    pub input: PathBuf,
    /// Validation sentences [default: the training sentences]
    #[arg(long)]
    pub valid_input: Option<PathBuf>,
    /// Best checkpoint is written here
    #[arg(long)]
    pub output: PathBuf,
    /// Seed for initialisation and batching
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[command(flatten)]
    pub jobs: JobsArg,
}

#[derive(Args, Debug)]
pub struct LmScoreArgs {
    /// Language-model checkpoint (.nmck)
    #[arg(long)]
    pub model: PathBuf,
    /// Sentences, one per line; - reads stdin
    #[arg(long, default_value = "-")]
    pub input: PathBuf,
    /// Scores (or the selected sentences with --top); - writes stdout
    #[arg(long, default_value = "-")]
    pub output: PathBuf,
    /// Write the N best-scoring sentences, best first, instead of per-line scores
    #[arg(long)]
    pub top: Option<usize>,
    #[command(flatten)]
    pub jobs: JobsArg,
}

#[derive(Args, Debug)]
pub struct SelectDataArgs {
    /// Target-language character LM checkpoint (.nmck)
    #[arg(long)]
    pub lm: PathBuf,
    /// Configuration file whose [rules] section defines the filter [default: built-in rules]
    #[arg(long)]
    pub rules: Option<PathBuf>,
    /// Reference vocabulary for the OOV and named-entity rules [default: those rules pass]
    #[arg(long)]
    pub vocab_tgt: Option<PathBuf>,
    /// Source side of the candidate corpus
    #[arg(long)]
    pub input: PathBuf,
    /// Target side of the candidate corpus; rules and LM apply to this side
    #[arg(long)]
    pub target: PathBuf,
    /// Number of pairs to keep
    #[arg(long)]
    pub top: usize,
    /// Output prefix: writes <prefix>.src, <prefix>.tgt and the report <prefix>.tsv
    #[arg(long)]
    pub output: PathBuf,
    #[command(flatten)]
    pub jobs: JobsArg,
}

#[derive(Args, Debug)]
pub struct BacktranslateArgs {
    /// Reverse (target-to-source) model, its vocabularies and configuration
    #[command(flatten)]
    pub model: ModelArgs,
    /// Target-language sentences, one per line; - reads stdin
    #[arg(long, default_value = "-")]
    pub input: PathBuf,
    /// Output prefix: writes <prefix>.src (synthetic), <prefix>.tgt and <prefix>.manifest
    #[arg(long)]
    pub output: PathBuf,
    /// Beam settings; max-len 0 uses 3 x longest input line + 5
    #[command(flatten)]
    pub decode: DecodeArgs,
    #[command(flatten)]
    pub jobs: JobsArg,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ScorerKind {
    /// Sentence-BLEU against --reference (upper bound)
    Oracle,
    /// Learned quality-estimation regressor
    Regressor,
    /// Caption-suitability classifier probability
    Classifier,
}

#[derive(Args, Debug)]
pub struct RescoreArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Source sentences, one per line; - reads stdin
    #[arg(long, default_value = "-")]
    pub input: PathBuf,
    /// Chosen hypotheses, one per line; - writes stdout
    #[arg(long, default_value = "-")]
    pub output: PathBuf,
    /// Reference translations; required by the oracle, and enables the BLEU report
    #[arg(long)]
    pub reference: Option<PathBuf>,
    /// How hypotheses are scored
    #[arg(long, value_enum, default_value_t = ScorerKind::Oracle)]
    pub scorer: ScorerKind,
    /// Regressor or classifier checkpoint, sized by the config's [regressor] or [classifier] section
    #[arg(long)]
    pub scorer_model: Option<PathBuf>,
    /// Image manifest for multimodal models and image-aware scorers
    #[arg(long)]
    pub features_manifest: Option<PathBuf>,
    #[command(flatten)]
    pub decode: DecodeArgs,
    #[command(flatten)]
    pub jobs: JobsArg,
}

#[derive(Args, Debug)]
pub struct StatsArgs {
    /// Corpus file; repeat for several, one report line each
    #[arg(long, required = true)]
    pub corpus: Vec<PathBuf>,
    /// Vocabulary file for the OOV rate
    #[arg(long, conflicts_with = "train")]
    pub vocab_src: Option<PathBuf>,
    /// Build the OOV vocabulary from this corpus (30000 most frequent tokens)
    #[arg(long)]
    pub train: Option<PathBuf>,
}

fn init_logging() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format(|buf, record| {
            if record.level() == log::Level::Info {
                writeln!(buf, "{}", record.args())
            } else {
                writeln!(
                    buf,
                    "{}: {}",
                    record.level().as_str().to_lowercase(),
                    record.args()
                )
            }
        })
        .init();
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    init_logging();
    let result = match cli.command {
        Command::Train(a) => commands::train(a),
        Command::Translate(a) => commands::translate(a),
        Command::Caption(a) => commands::caption(a),
        Command::Eval(a) => commands::eval(a),
        Command::LmTrain(a) => commands::lm_train(a),
        Command::LmScore(a) => commands::lm_score(a),
        Command::SelectData(a) => commands::select_data(a),
        Command::Backtranslate(a) => commands::backtranslate(a),
        Command::Rescore(a) => commands::rescore(a),
        Command::Stats(a) => commands::stats(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
