//! Effective configuration: defaults, then an optional TOML file, then flags.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use style_retrieval::eval::{DEFAULT_GROUP_SIZE, DEFAULT_PARALLELISM};
use style_retrieval::latent::DurationClamp;
use style_retrieval::selector::{BackendKind, SelectorConfig};

use crate::CliError;

pub const DEFAULT_JOURNAL: &str = "journal.jsonl";
pub const DEFAULT_OUT_DIR: &str = "ablation";
pub const DEFAULT_COUNTS: [usize; 5] = [50, 100, 150, 200, 250];

/// A backend named on the command line: `llm`, `cosine` or `mock`, with an
/// optional `:model` suffix (`llm:gpt-4`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BackendSpec {
    pub kind: BackendKind,
    pub model: Option<String>,
}

impl FromStr for BackendSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (name, model) = match s.split_once(':') {
            Some((n, m)) if !m.trim().is_empty() => (n, Some(m.trim().to_string())),
            Some(_) => return Err(format!("backend {s:?} has an empty model name")),
            None => (s, None),
        };
        let kind = match name.trim() {
            "llm" => BackendKind::LlmChat,
            "cosine" => BackendKind::EmbeddingCosine,
            "mock" => BackendKind::Mock,
            other => return Err(format!("unknown backend {other:?} (expected llm, cosine or mock)")),
        };
        if kind == BackendKind::Mock && model.is_some() {
            return Err("the mock backend takes no model".into());
        }
        Ok(Self { kind, model })
    }
}

impl fmt::Display for BackendSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self.kind {
            BackendKind::LlmChat => "llm",
            BackendKind::EmbeddingCosine => "cosine",
            BackendKind::Mock => "mock",
        };
        match &self.model {
            Some(m) => write!(f, "{name}:{m}"),
            None => f.write_str(name),
        }
    }
}

impl Serialize for BackendSpec {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for BackendSpec {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationSettings {
    pub cases: Option<PathBuf>,
    pub counts: Vec<usize>,
    /// Empty means "the selector configured above".
    pub backends: Vec<BackendSpec>,
    pub group_size: usize,
    pub parallelism: usize,
    pub out_dir: PathBuf,
}

impl Default for AblationSettings {
    fn default() -> Self {
        Self {
            cases: None,
            counts: DEFAULT_COUNTS.to_vec(),
            backends: Vec::new(),
            group_size: DEFAULT_GROUP_SIZE,
            parallelism: DEFAULT_PARALLELISM,
            out_dir: PathBuf::from(DEFAULT_OUT_DIR),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CliConfig {
    pub dictionary_path: Option<PathBuf>,
    pub latent_bank_path: Option<PathBuf>,
    pub selector: SelectorConfig,
    /// Base URL of the synthesis service. Ignored when `stub` is set.
    pub backend_url: Option<String>,
    pub stub: bool,
    pub journal: PathBuf,
    pub seed: u64,
    pub clamp: DurationClamp,
    pub ablation: AblationSettings,
}

impl Default for CliConfig {
    fn default() -> Self {
        Self {
            dictionary_path: None,
            latent_bank_path: None,
            selector: SelectorConfig::default(),
            backend_url: None,
            stub: false,
            journal: PathBuf::from(DEFAULT_JOURNAL),
            seed: 0,
            clamp: DurationClamp::default(),
            ablation: AblationSettings::default(),
        }
    }
}

impl CliConfig {
    /// Reads a TOML config file. Relative paths inside it are taken relative
    /// to the file's directory.
    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("config {}: {e}", path.display())))?;
        let mut config: CliConfig = toml::from_str(&text)
            .map_err(|e| CliError::Config(format!("config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        config.rebase(base);
        Ok(config)
    }

    fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        let fix_opt = |p: &mut Option<PathBuf>| {
            if let Some(p) = p {
                fix(p)
            }
        };
        fix_opt(&mut self.dictionary_path);
        fix_opt(&mut self.latent_bank_path);
        fix_opt(&mut self.selector.embeddings_file);
        fix_opt(&mut self.selector.mock_table);
        fix_opt(&mut self.selector.template_file);
        fix_opt(&mut self.ablation.cases);
        fix(&mut self.journal);
        fix(&mut self.ablation.out_dir);
    }

    pub fn dictionary_path(&self) -> Result<&Path, CliError> {
        self.dictionary_path
            .as_deref()
            .ok_or_else(|| CliError::Usage("no dictionary given (use --dict)".into()))
    }

    pub fn latent_bank_path(&self) -> Result<&Path, CliError> {
        self.latent_bank_path
            .as_deref()
            .ok_or_else(|| CliError::Usage("no latent bank given (use --latents)".into()))
    }

    /// Checks everything that does not need the filesystem.
    pub fn validate(&self) -> Result<(), CliError> {
        DurationClamp::new(self.clamp.min, self.clamp.max)
            .map_err(|e| CliError::Config(e.to_string()))?;
        let a = &self.ablation;
        if a.group_size == 0 || a.parallelism == 0 {
            return Err(CliError::Config("group_size and parallelism must be >= 1".into()));
        }
        Ok(())
    }

    /// Selector settings with `spec` applied on top.
    pub fn selector_for(&self, spec: &BackendSpec) -> SelectorConfig {
        let mut config = self.selector.clone();
        config.backend_kind = spec.kind;
        if let Some(m) = &spec.model {
            config.model_name = m.clone();
        }
        config
    }
}
