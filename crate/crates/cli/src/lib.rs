//! Command-line front end: `select`, `infer` and `ablate`.

pub mod commands;
pub mod config;

use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use commands::{cmd_ablate, cmd_infer, cmd_select, AblationOutcome, SynthesisOutcome};
pub use config::{BackendSpec, CliConfig};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Operational(String),
}

impl CliError {
    /// 1 for backend/transport failures, 2 for usage and configuration.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Operational(_) => 1,
            CliError::Usage(_) | CliError::Config(_) => 2,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "stylesel", version, about = "Retrieve a reference style for a prompt and request synthesis")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Retrieve with an explicit style description.
    Select(SelectArgs),
    /// Retrieve by inferring the style of the synthesis text itself.
    Infer(InferArgs),
    /// Hit rate over backends and dictionary sizes.
    Ablate(AblateArgs),
}

/// Flags shared by every subcommand. Anything left unset falls back to the
/// config file, then to built-in defaults.
#[derive(Debug, Args, Default)]
pub struct CommonArgs {
    /// TOML config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Annotation dictionary (JSON).
    #[arg(long)]
    pub dict: Option<PathBuf>,
    /// Latent bank (JSON).
    #[arg(long)]
    pub latents: Option<PathBuf>,
    /// Selection backend: llm, cosine or mock, optionally `kind:model`.
    /// Repeat for `ablate`.
    #[arg(long = "backend")]
    pub backends: Vec<BackendSpec>,
    /// Base URL of the chat or embeddings API.
    #[arg(long)]
    pub endpoint: Option<String>,
    /// Model name sent to the chat or embeddings API.
    #[arg(long)]
    pub model: Option<String>,
    /// Seed for latent noise, dictionary subsets and grouping.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Text -> index table for the mock backend.
    #[arg(long)]
    pub mock_table: Option<PathBuf>,
    /// Offline text -> vector table for the cosine backend.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// Replacement chat templates (JSON with `selection` and `inference`).
    #[arg(long)]
    pub template: Option<PathBuf>,
    /// Extra attempts after a failed or unparseable LLM reply.
    #[arg(long)]
    pub max_retries: Option<u32>,
    /// Per-request timeout for remote calls.
    #[arg(long)]
    pub timeout_secs: Option<f64>,
    /// Sampling temperature for the chat backend.
    #[arg(long)]
    pub temperature: Option<f64>,
    /// Initial delay between retries; doubles each time.
    #[arg(long)]
    pub retry_backoff_ms: Option<u64>,
}

#[derive(Debug, Args, Default)]
pub struct DispatchArgs {
    /// Accept requests locally instead of calling a synthesis service.
    #[arg(long)]
    pub stub: bool,
    /// Base URL of the synthesis service.
    #[arg(long)]
    pub backend_url: Option<String>,
    /// Request journal (JSON lines), appended to.
    #[arg(long)]
    pub journal: Option<PathBuf>,
    /// Lower bound on the duration scale.
    #[arg(long)]
    pub clamp_min: Option<f64>,
    /// Upper bound on the duration scale.
    #[arg(long)]
    pub clamp_max: Option<f64>,
}

#[derive(Debug, Args)]
pub struct SelectArgs {
    /// Style description used for retrieval.
    #[arg(long)]
    pub style: String,
    /// Text to synthesize.
    #[arg(long)]
    pub text: String,
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub dispatch: DispatchArgs,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    /// Text to synthesize; also the retrieval prompt.
    #[arg(long)]
    pub text: String,
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub dispatch: DispatchArgs,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    /// Cases file (JSON array of `{kind, text, expected}`).
    #[arg(long)]
    pub cases: Option<PathBuf>,
    /// Annotation counts, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub counts: Vec<usize>,
    /// Output directory for report.json and report.csv.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Outcomes per group for the std column.
    #[arg(long)]
    pub group_size: Option<usize>,
    /// Worker threads for selections within a cell.
    #[arg(long)]
    pub parallelism: Option<usize>,
    #[command(flatten)]
    pub common: CommonArgs,
}

/// Loads the config file (if any) and applies the flags on top.
pub fn resolve_config(common: &CommonArgs) -> Result<CliConfig, CliError> {
    let mut c = match &common.config {
        Some(p) => CliConfig::from_file(p)?,
        None => CliConfig::default(),
    };
    if let Some(p) = &common.dict {
        c.dictionary_path = Some(p.clone());
    }
    if let Some(p) = &common.latents {
        c.latent_bank_path = Some(p.clone());
    }
    let s = &mut c.selector;
    if let Some(v) = &common.endpoint {
        s.endpoint = v.clone();
    }
    if let Some(v) = &common.model {
        s.model_name = v.clone();
    }
    if let Some(p) = &common.mock_table {
        s.mock_table = Some(p.clone());
    }
    if let Some(p) = &common.embeddings {
        s.embeddings_file = Some(p.clone());
    }
    if let Some(p) = &common.template {
        s.template_file = Some(p.clone());
    }
    if let Some(v) = common.max_retries {
        s.max_retries = v;
    }
    if let Some(v) = common.timeout_secs {
        s.timeout_secs = v;
    }
    if let Some(v) = common.temperature {
        s.temperature = v;
    }
    if let Some(v) = common.retry_backoff_ms {
        s.retry_backoff_ms = v;
    }
    if let Some(v) = common.seed {
        c.seed = v;
    }
    Ok(c)
}

fn single_backend(common: &CommonArgs, config: &mut CliConfig) -> Result<(), CliError> {
    match common.backends.as_slice() {
        [] => Ok(()),
        [spec] => {
            config.selector = config.selector_for(spec);
            Ok(())
        }
        _ => Err(CliError::Usage("only ablate accepts more than one --backend".into())),
    }
}

fn apply_dispatch(d: &DispatchArgs, c: &mut CliConfig) {
    if d.stub {
        c.stub = true;
    }
    if let Some(u) = &d.backend_url {
        c.backend_url = Some(u.clone());
    }
    if let Some(j) = &d.journal {
        c.journal = j.clone();
    }
    if let Some(v) = d.clamp_min {
        c.clamp.min = v;
    }
    if let Some(v) = d.clamp_max {
        c.clamp.max = v;
    }
}

/// Runs a parsed command line, writing the human-readable result to `out`.
pub fn run(cli: Cli, out: &mut dyn Write) -> Result<(), CliError> {
    let text = match cli.command {
        Command::Select(a) => {
            let mut config = resolve_config(&a.common)?;
            single_backend(&a.common, &mut config)?;
            apply_dispatch(&a.dispatch, &mut config);
            cmd_select(&a.style, &a.text, &config)?.render()
        }
        Command::Infer(a) => {
            let mut config = resolve_config(&a.common)?;
            single_backend(&a.common, &mut config)?;
            apply_dispatch(&a.dispatch, &mut config);
            cmd_infer(&a.text, &config)?.render()
        }
        Command::Ablate(a) => {
            let mut config = resolve_config(&a.common)?;
            if let Some(v) = a.group_size {
                config.ablation.group_size = v;
            }
            if let Some(v) = a.parallelism {
                config.ablation.parallelism = v;
            }
            if let Some(o) = &a.out {
                config.ablation.out_dir = o.clone();
            }
            if !a.counts.is_empty() {
                config.ablation.counts = a.counts.clone();
            }
            if !a.common.backends.is_empty() {
                config.ablation.backends = a.common.backends.clone();
            }
            let cases = a
                .cases
                .clone()
                .or_else(|| config.ablation.cases.clone())
                .ok_or_else(|| CliError::Usage("no cases file given (use --cases)".into()))?;
            let counts = config.ablation.counts.clone();
            let backends = config.ablation.backends.clone();
            cmd_ablate(&cases, &counts, &backends, &config)?.render()
        }
    };
    out.write_all(text.as_bytes())
        .map_err(|e| CliError::Operational(format!("stdout: {e}")))
}
