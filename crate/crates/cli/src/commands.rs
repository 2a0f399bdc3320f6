use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::Serialize;
use style_retrieval::annotation::{load_dictionary, AnnotationDictionary, AnnotationError};
use style_retrieval::eval::{load_cases, run_ablation, AblationOptions, EvalError, HitRateReport};
use style_retrieval::gateway::{DispatchReceipt, GatewayError, Journal};
use style_retrieval::latent::{load_latent_bank, DurationClamp, LatentBank};
use style_retrieval::selector::{BackendKind, MockTable, SelectorError};
use style_retrieval::transport::HttpTransport;
use style_retrieval::{Dispatcher, Gateway, Selector, StylePrompt, SynthesisBackend, SynthesisRequest};

use crate::config::{BackendSpec, CliConfig};
use crate::CliError;

impl From<SelectorError> for CliError {
    fn from(e: SelectorError) -> Self {
        if e.is_operational() {
            CliError::Operational(e.to_string())
        } else {
            CliError::Config(e.to_string())
        }
    }
}

impl From<GatewayError> for CliError {
    fn from(e: GatewayError) -> Self {
        match e {
            GatewayError::Selection(s) => s.into(),
            GatewayError::EmptyText | GatewayError::InferenceTextMismatch { .. } => {
                CliError::Usage(e.to_string())
            }
            GatewayError::MissingLatent(_) | GatewayError::Latent(_) | GatewayError::ScaleOutOfRange(_) => {
                CliError::Config(e.to_string())
            }
            GatewayError::Transport(_) | GatewayError::Journal { .. } => CliError::Operational(e.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        CliError::Config(e.to_string())
    }
}

fn read_dictionary(path: &Path) -> Result<AnnotationDictionary, CliError> {
    load_dictionary(path).map_err(|e| match e {
        AnnotationError::Read { .. } => CliError::Config(e.to_string()),
        other => CliError::Config(format!("dictionary {}: {other}", path.display())),
    })
}

fn read_bank(path: &Path) -> Result<LatentBank, CliError> {
    load_latent_bank(path).map_err(|e| CliError::Config(e.to_string()))
}

/// Builds one selector. A mock backend without a lookup table falls back to
/// token overlap against the dictionary's own descriptions.
pub fn build_selector(
    config: &CliConfig,
    spec: &BackendSpec,
    dict: &AnnotationDictionary,
) -> Result<Selector, CliError> {
    let sc = config.selector_for(spec);
    if sc.backend_kind == BackendKind::Mock && sc.mock_table.is_none() {
        return Ok(Selector::mock(MockTable::from_descriptions(dict)?));
    }
    Ok(Selector::from_config(&sc)?)
}

fn current_backend(config: &CliConfig) -> BackendSpec {
    BackendSpec {
        kind: config.selector.backend_kind,
        model: None,
    }
}

/// Result of `select` / `infer`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SynthesisOutcome {
    pub request: SynthesisRequest,
    pub receipt: DispatchReceipt,
    pub journal: PathBuf,
}

impl SynthesisOutcome {
    pub fn render(&self) -> String {
        let r = &self.request.retrieval;
        let mut s = String::new();
        let _ = writeln!(s, "index: {}", r.index);
        let _ = writeln!(s, "description: {}", r.description);
        let _ = writeln!(s, "backend: {}", r.backend);
        let _ = writeln!(
            s,
            "raw_output: {}",
            serde_json::to_string(&r.raw_output).expect("raw output serializes")
        );
        let _ = writeln!(s, "request: {}", self.request.payload().to_json());
        let _ = writeln!(s, "job_id: {}", self.receipt.job_id);
        let _ = writeln!(s, "journal: {} (seq {})", self.journal.display(), self.receipt.journal_seq);
        s
    }
}

fn synthesize(prompt: StylePrompt, text: &str, config: &CliConfig) -> Result<SynthesisOutcome, CliError> {
    config.validate()?;
    let dict = read_dictionary(config.dictionary_path()?)?;
    let bank = read_bank(config.latent_bank_path()?)?;
    let selector = build_selector(config, &current_backend(config), &dict)?;
    let clamp = DurationClamp::new(config.clamp.min, config.clamp.max)
        .map_err(|e| CliError::Config(e.to_string()))?;

    let backend = if config.stub {
        SynthesisBackend::Stub
    } else {
        let url = config.backend_url.clone().ok_or_else(|| {
            CliError::Usage("no synthesis backend (use --backend-url or --stub)".into())
        })?;
        SynthesisBackend::Http {
            url,
            timeout: config.selector.timeout(),
            transport: Arc::new(HttpTransport::from_env()),
        }
    };

    let gateway = Gateway::new(&dict, &bank, &selector, clamp)?;
    let request = gateway.orchestrate(&prompt, text, config.seed)?;
    let dispatcher = Dispatcher::new(backend, Journal::open(&config.journal)?);
    let receipt = dispatcher.dispatch(&request)?;
    Ok(SynthesisOutcome {
        request,
        receipt,
        journal: config.journal.clone(),
    })
}

fn require_text(flag: &str, text: &str) -> Result<(), CliError> {
    if text.trim().is_empty() {
        return Err(CliError::Usage(format!("{flag} must not be empty")));
    }
    Ok(())
}

/// Style selection: retrieve with an explicit description, synthesize `text`.
pub fn cmd_select(style_description: &str, synthesis_text: &str, config: &CliConfig) -> Result<SynthesisOutcome, CliError> {
    require_text("--style", style_description)?;
    require_text("--text", synthesis_text)?;
    let prompt = StylePrompt::selection(style_description)?;
    synthesize(prompt, synthesis_text, config)
}

/// Style inference: the synthesis text doubles as the prompt.
pub fn cmd_infer(synthesis_text: &str, config: &CliConfig) -> Result<SynthesisOutcome, CliError> {
    require_text("--text", synthesis_text)?;
    let prompt = StylePrompt::inference(synthesis_text)?;
    synthesize(prompt, synthesis_text, config)
}

/// What `ablate` writes to `report.json`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationDocument {
    pub config: CliConfig,
    pub report: HitRateReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationOutcome {
    pub report: HitRateReport,
    pub json_path: PathBuf,
    pub csv_path: PathBuf,
}

impl AblationOutcome {
    pub fn render(&self) -> String {
        format!(
            "{}\nwrote {} and {}\n",
            self.report.to_table(),
            self.json_path.display(),
            self.csv_path.display()
        )
    }
}

/// Runs the hit-rate grid and writes `report.json` (grid plus effective
/// config) and `report.csv` under the configured output directory.
pub fn cmd_ablate(
    cases_path: &Path,
    counts: &[usize],
    backends: &[BackendSpec],
    config: &CliConfig,
) -> Result<AblationOutcome, CliError> {
    config.validate()?;
    if counts.is_empty() {
        return Err(CliError::Usage("no annotation counts given".into()));
    }
    let dict = read_dictionary(config.dictionary_path()?)?;
    let cases = load_cases(cases_path).map_err(|e| match e {
        EvalError::Read { .. } => CliError::Config(e.to_string()),
        other => CliError::Config(format!("cases {}: {other}", cases_path.display())),
    })?;
    if let Some(&bad) = counts.iter().find(|&&c| c == 0 || c > dict.len()) {
        return Err(CliError::Usage(format!(
            "annotation count {bad} outside 1..={} (dictionary size)",
            dict.len()
        )));
    }

    let specs: Vec<BackendSpec> = if backends.is_empty() {
        vec![current_backend(config)]
    } else {
        backends.to_vec()
    };
    let selectors = specs
        .iter()
        .map(|s| build_selector(config, s, &dict))
        .collect::<Result<Vec<_>, _>>()?;
    for (i, s) in selectors.iter().enumerate() {
        if selectors[..i].iter().any(|o| o.name() == s.name()) {
            return Err(CliError::Usage(format!("backend {} given twice", s.name())));
        }
    }

    let options = AblationOptions {
        seed: config.seed,
        group_size: config.ablation.group_size,
        parallelism: config.ablation.parallelism,
    };
    let report = run_ablation(&cases, &dict, counts, &selectors, &options)?;

    let mut effective = config.clone();
    effective.ablation.cases = Some(cases_path.to_path_buf());
    effective.ablation.counts = counts.to_vec();
    effective.ablation.backends = specs;
    let out = &config.ablation.out_dir;
    let io = |p: &Path, e: std::io::Error| CliError::Operational(format!("{}: {e}", p.display()));
    std::fs::create_dir_all(out).map_err(|e| io(out, e))?;
    let json_path = out.join("report.json");
    let csv_path = out.join("report.csv");
    let doc = AblationDocument {
        config: effective,
        report: report.clone(),
    };
    let mut json = serde_json::to_string_pretty(&doc).expect("report serializes");
    json.push('\n');
    std::fs::write(&json_path, json).map_err(|e| io(&json_path, e))?;
    std::fs::write(&csv_path, report.to_csv()).map_err(|e| io(&csv_path, e))?;
    Ok(AblationOutcome {
        report,
        json_path,
        csv_path,
    })
}
