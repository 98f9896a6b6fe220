use std::path::PathBuf;

use clap::{ArgAction, Args, Parser, Subcommand};

use crate::config::Layer;

#[derive(Debug, Parser)]
#[command(
    name = "tokenshap",
    version,
    about = "Monte Carlo token attribution for LLM prompts"
)]
pub struct Cli {
    /// TOML settings file (default: $XDG_CONFIG_HOME/tokenshap/config.toml).
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Print errors to stderr as a JSON object.
    #[arg(long, global = true)]
    pub json_errors: bool,
    /// More log output on stderr (repeatable).
    #[arg(short, long, global = true, action = ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sampled attribution for one prompt.
    Analyze(AnalyzeArgs),
    /// Attribution over every subset of the prompt's units.
    Exact(ExactArgs),
    /// Batch experiments over a prompt corpus.
    #[command(subcommand)]
    Experiment(ExperimentCommand),
    /// Inspect or empty the response cache.
    Cache(CacheArgs),
}

#[derive(Debug, Args)]
pub struct BackendArgs {
    /// openai-compatible, ollama, or mock:<name> (echo, drop-stoplist, sorted-signature, constant).
    #[arg(long)]
    pub backend: Option<String>,
    #[arg(long)]
    pub base_url: Option<String>,
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub temperature: Option<f64>,
    #[arg(long)]
    pub timeout_ms: Option<u64>,
    #[arg(long)]
    pub max_retries: Option<u32>,
    /// Upper bound on in-flight backend requests.
    #[arg(long)]
    pub max_concurrency: Option<usize>,
    #[arg(long, value_name = "DIR")]
    pub cache_dir: Option<PathBuf>,
    /// Keep responses in memory only.
    #[arg(long)]
    pub no_cache: bool,
}

impl BackendArgs {
    pub fn layer(&self) -> Layer {
        Layer {
            backend: self.backend.clone(),
            base_url: self.base_url.clone(),
            model: self.model.clone(),
            temperature: self.temperature,
            timeout_ms: self.timeout_ms,
            max_retries: self.max_retries,
            max_concurrency: self.max_concurrency,
            cache_dir: self.cache_dir.clone(),
            no_cache: self.no_cache.then_some(true),
            ..Layer::default()
        }
    }
}

#[derive(Debug, Args)]
#[group(required = true, multiple = false)]
pub struct PromptArgs {
    #[arg(long)]
    pub prompt: Option<String>,
    #[arg(long, value_name = "PATH")]
    pub prompt_file: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct OutputArgs {
    /// `whitespace` or `pattern:<regex>`.
    #[arg(long)]
    pub splitter: Option<String>,
    /// none, l1 or minmax.
    #[arg(long)]
    pub normalization: Option<String>,
    /// Plan seed; generated and echoed in the output when absent.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Write the JSON result here instead of stdout.
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
    /// Also write an HTML heatmap.
    #[arg(long, value_name = "PATH")]
    pub html: Option<PathBuf>,
    /// Print a terminal heatmap (to stderr when the JSON goes to stdout).
    #[arg(long)]
    pub ansi: bool,
    #[arg(long)]
    pub no_color: bool,
    /// Leave out the creation timestamp so reruns are byte-identical.
    #[arg(long)]
    pub deterministic: bool,
}

impl OutputArgs {
    pub fn layer(&self) -> Layer {
        Layer {
            splitter: self.splitter.clone(),
            normalization: self.normalization.clone(),
            seed: self.seed,
            ..Layer::default()
        }
    }
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[command(flatten)]
    pub prompt: PromptArgs,
    /// Fraction of the 2^n - 1 subset budget to sample, in [0, 1].
    #[arg(long)]
    pub ratio: Option<f64>,
    #[command(flatten)]
    pub output: OutputArgs,
    #[command(flatten)]
    pub backend: BackendArgs,
}

#[derive(Debug, Args)]
pub struct ExactArgs {
    #[command(flatten)]
    pub prompt: PromptArgs,
    /// Refuse prompts with more units than this.
    #[arg(long, default_value_t = tokenshap::subset_sampler::DEFAULT_ENUMERATION_CAP)]
    pub cap: usize,
    #[command(flatten)]
    pub output: OutputArgs,
    #[command(flatten)]
    pub backend: BackendArgs,
}

#[derive(Debug, Subcommand)]
pub enum ExperimentCommand {
    /// Inject filler words and compare their scores with the real words.
    Inject(InjectArgs),
    /// Agreement of sampled estimates with exact attribution by ratio.
    Converge(ConvergeArgs),
}

#[derive(Debug, Args)]
pub struct ExperimentCommon {
    /// JSONL or plain-text prompt file, or `sample` for the bundled corpus.
    #[arg(long, default_value = "sample")]
    pub corpus: String,
    /// Seeds, e.g. `1..50` or `1,2,7`.
    #[arg(long, default_value = "1")]
    pub seeds: String,
    #[arg(long, value_name = "DIR", default_value = "reports")]
    pub out_dir: PathBuf,
    /// Use a fixed timestamp in report file names.
    #[arg(long)]
    pub deterministic: bool,
}

#[derive(Debug, Args)]
pub struct InjectArgs {
    #[command(flatten)]
    pub common: ExperimentCommon,
    /// Comma-separated: random, prompt-engineer, tokenshap.
    #[arg(long, default_value = "random,tokenshap")]
    pub methods: String,
    /// Words injected per prompt.
    #[arg(long, default_value_t = 2)]
    pub k: usize,
    #[arg(long)]
    pub ratio: Option<f64>,
    #[arg(long)]
    pub normalization: Option<String>,
    /// Injected-word list, one word per line.
    #[arg(long, value_name = "PATH")]
    pub word_pool: Option<PathBuf>,
    /// Rating prompt for the prompt-engineer baseline.
    #[arg(long, value_name = "PATH")]
    pub template: Option<PathBuf>,
    #[command(flatten)]
    pub backend: BackendArgs,
}

#[derive(Debug, Args)]
pub struct ConvergeArgs {
    #[command(flatten)]
    pub common: ExperimentCommon,
    #[arg(long, default_value = "0,0.2,0.4,0.6,0.8,1.0")]
    pub ratios: String,
    /// Largest prompt (in units) to enumerate exactly.
    #[arg(long, default_value_t = 10)]
    pub cap: usize,
    /// Also run plans without forced first-order combinations.
    #[arg(long)]
    pub with_and_without_first_order: bool,
    #[command(flatten)]
    pub backend: BackendArgs,
}

#[derive(Debug, Args)]
pub struct CacheArgs {
    #[command(subcommand)]
    pub action: CacheAction,
    #[arg(long, global = true, value_name = "DIR")]
    pub cache_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, Subcommand)]
pub enum CacheAction {
    /// Entry count and total size.
    Stats,
    /// Remove every entry.
    Clear,
}
