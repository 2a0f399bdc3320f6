//! Maps a style prompt onto one entry of an [`AnnotationDictionary`].
//!
//! Three interchangeable backends are provided:
//!
//! * [`BackendKind::LlmChat`] asks a chat-completion model to pick a key out
//!   of the serialized dictionary and parses the key back out of the reply.
//! * [`BackendKind::EmbeddingCosine`] embeds the prompt and every
//!   description and takes the cosine argmax.
//! * [`BackendKind::Mock`] is a deterministic lookup table used for tests and
//!   fixtures.
//!
//! Whatever the backend, a successful [`Selector::select`] only ever returns
//! a key that is present in the queried dictionary.

mod embedding;
mod llm;
mod mock;

use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::annotation::AnnotationDictionary;
use crate::transport::{HttpTransport, JsonTransport, TransportError};

pub use embedding::{
    cosine_similarity, embed_text, EmbeddingBatchRequest, EmbeddingBatchResponse, Embedder,
    OfflineEmbeddings, RemoteEmbedder,
};
pub use llm::{
    build_llm_prompt, parse_llm_response, ChatMessage, ChatRequest, ChatResponse, PromptTemplate,
    FORMAT_DIRECTIVE,
};
pub use mock::{tokenize, MockRule, MockTable};

#[derive(Debug, thiserror::Error)]
pub enum SelectorError {
    #[error("dictionary is empty")]
    EmptyDictionary,
    #[error("prompt text is empty")]
    EmptyPrompt,
    #[error("invalid selector config: {0}")]
    InvalidConfig(String),
    #[error("no valid index in response: {raw:?}")]
    Unparseable { raw: String },
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error("selection failed after {attempts} attempt(s): {last_error}")]
    RetriesExhausted { attempts: u32, last_error: String },
    #[error("embedding for {text:?} has dimension {actual}, expected {expected}")]
    DimensionMismatch {
        text: String,
        expected: usize,
        actual: usize,
    },
    #[error("no precomputed embedding for {0:?}")]
    UnknownText(String),
    #[error("embedding provider: {0}")]
    Provider(String),
    #[error("mock mapping is empty")]
    EmptyMockMapping,
    #[error("failed to read {path}: {message}")]
    Io { path: PathBuf, message: String },
}

impl SelectorError {
    /// True for failures caused by the remote side rather than by the input
    /// or the configuration.
    pub fn is_operational(&self) -> bool {
        matches!(
            self,
            SelectorError::Transport(_)
                | SelectorError::RetriesExhausted { .. }
                | SelectorError::Provider(_)
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptKind {
    /// The text is an explicit description of the wanted style.
    StyleSelection,
    /// The text is the sentence to synthesize; its style must be inferred.
    StyleInference,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StylePrompt {
    kind: PromptKind,
    text: String,
}

impl StylePrompt {
    pub fn new(kind: PromptKind, text: impl Into<String>) -> Result<Self, SelectorError> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(SelectorError::EmptyPrompt);
        }
        Ok(Self { kind, text })
    }

    pub fn selection(text: impl Into<String>) -> Result<Self, SelectorError> {
        Self::new(PromptKind::StyleSelection, text)
    }

    pub fn inference(text: impl Into<String>) -> Result<Self, SelectorError> {
        Self::new(PromptKind::StyleInference, text)
    }

    pub fn kind(&self) -> PromptKind {
        self.kind
    }

    pub fn text(&self) -> &str {
        &self.text
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateScore {
    pub index: u32,
    pub score: f64,
}

/// Backend-native evidence for a selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RawOutput {
    LlmResponse { text: String, attempts: u32 },
    Scores { scores: Vec<CandidateScore> },
    Mock { rule: MockRule, overlap: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalResult {
    pub index: u32,
    pub description: String,
    pub backend: String,
    pub raw_output: RawOutput,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    LlmChat,
    EmbeddingCosine,
    Mock,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SelectorConfig {
    pub backend_kind: BackendKind,
    pub model_name: String,
    pub endpoint: String,
    pub max_retries: u32,
    pub timeout_secs: f64,
    pub temperature: f64,
    /// Base delay between retries; doubles on every attempt.
    pub retry_backoff_ms: u64,
    /// Offline embedding table (text -> vector). When set, the cosine
    /// backend never touches the network.
    pub embeddings_file: Option<PathBuf>,
    /// Mock lookup table (text -> index).
    pub mock_table: Option<PathBuf>,
    /// Optional replacement for the built-in chat instruction templates.
    pub template_file: Option<PathBuf>,
}

impl Default for SelectorConfig {
    fn default() -> Self {
        Self {
            backend_kind: BackendKind::Mock,
            model_name: String::new(),
            endpoint: String::new(),
            max_retries: 3,
            timeout_secs: 60.0,
            temperature: 0.0,
            retry_backoff_ms: 500,
            embeddings_file: None,
            mock_table: None,
            template_file: None,
        }
    }
}

pub const MAX_RETRIES_LIMIT: u32 = 10;

impl SelectorConfig {
    pub fn validate(&self) -> Result<(), SelectorError> {
        if !(self.timeout_secs.is_finite() && self.timeout_secs > 0.0) {
            return Err(SelectorError::InvalidConfig(format!(
                "timeout must be positive, got {}",
                self.timeout_secs
            )));
        }
        if self.max_retries > MAX_RETRIES_LIMIT {
            return Err(SelectorError::InvalidConfig(format!(
                "max_retries {} exceeds {MAX_RETRIES_LIMIT}",
                self.max_retries
            )));
        }
        if !(self.temperature.is_finite() && self.temperature >= 0.0) {
            return Err(SelectorError::InvalidConfig(format!(
                "temperature must be non-negative, got {}",
                self.temperature
            )));
        }
        let needs_endpoint = match self.backend_kind {
            BackendKind::LlmChat => true,
            BackendKind::EmbeddingCosine => self.embeddings_file.is_none(),
            BackendKind::Mock => false,
        };
        if needs_endpoint && self.endpoint.trim().is_empty() {
            return Err(SelectorError::InvalidConfig("endpoint is required".into()));
        }
        if needs_endpoint && self.model_name.trim().is_empty() {
            return Err(SelectorError::InvalidConfig("model name is required".into()));
        }
        Ok(())
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_secs_f64(self.timeout_secs)
    }

    /// Identifier recorded in every [`RetrievalResult`].
    pub fn backend_name(&self) -> String {
        match self.backend_kind {
            BackendKind::LlmChat => format!("llm:{}", self.model_name),
            BackendKind::EmbeddingCosine if self.model_name.is_empty() => "cosine:offline".into(),
            BackendKind::EmbeddingCosine => format!("cosine:{}", self.model_name),
            BackendKind::Mock => "mock".into(),
        }
    }
}

enum Backend {
    Llm(llm::LlmSelector),
    Cosine(embedding::CosineSelector),
    Mock(MockTable),
}

/// A ready-to-use selection backend. Cheap to share across threads.
pub struct Selector {
    name: String,
    backend: Backend,
}

impl std::fmt::Debug for Selector {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Selector").field("name", &self.name).finish()
    }
}

fn read_file(path: &PathBuf) -> Result<String, SelectorError> {
    std::fs::read_to_string(path).map_err(|e| SelectorError::Io {
        path: path.clone(),
        message: e.to_string(),
    })
}

impl Selector {
    /// Builds the backend named by `config`, reading any files it references.
    /// Remote backends use [`HttpTransport::from_env`].
    pub fn from_config(config: &SelectorConfig) -> Result<Self, SelectorError> {
        config.validate()?;
        match config.backend_kind {
            BackendKind::LlmChat => {
                let template = match &config.template_file {
                    Some(p) => PromptTemplate::from_json(&read_file(p)?)?,
                    None => PromptTemplate::default(),
                };
                Ok(Self::llm(config.clone(), Arc::new(HttpTransport::from_env()))?
                    .with_template(template))
            }
            BackendKind::EmbeddingCosine => {
                let embedder: Box<dyn Embedder> = match &config.embeddings_file {
                    Some(p) => Box::new(OfflineEmbeddings::from_json(&read_file(p)?)?),
                    None => Box::new(RemoteEmbedder::new(
                        config.endpoint.clone(),
                        config.model_name.clone(),
                        config.timeout(),
                        Arc::new(HttpTransport::from_env()),
                    )),
                };
                Self::cosine(config, embedder)
            }
            BackendKind::Mock => {
                let path = config.mock_table.as_ref().ok_or_else(|| {
                    SelectorError::InvalidConfig("mock backend needs a mock table".into())
                })?;
                Ok(Self::mock(MockTable::from_json(&read_file(path)?)?))
            }
        }
    }

    pub fn llm(
        config: SelectorConfig,
        transport: Arc<dyn JsonTransport>,
    ) -> Result<Self, SelectorError> {
        config.validate()?;
        Ok(Self {
            name: config.backend_name(),
            backend: Backend::Llm(llm::LlmSelector::new(config, transport)),
        })
    }

    pub fn cosine(config: &SelectorConfig, embedder: Box<dyn Embedder>) -> Result<Self, SelectorError> {
        Ok(Self {
            name: config.backend_name(),
            backend: Backend::Cosine(embedding::CosineSelector::new(embedder)),
        })
    }

    pub fn mock(table: MockTable) -> Self {
        Self {
            name: "mock".into(),
            backend: Backend::Mock(table),
        }
    }

    /// Replaces the chat instruction template. No effect on other backends.
    pub fn with_template(mut self, template: PromptTemplate) -> Self {
        if let Backend::Llm(l) = &mut self.backend {
            l.template = template;
        }
        self
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn select(
        &self,
        prompt: &StylePrompt,
        dict: &AnnotationDictionary,
    ) -> Result<RetrievalResult, SelectorError> {
        if dict.is_empty() {
            return Err(SelectorError::EmptyDictionary);
        }
        let (index, raw_output) = match &self.backend {
            Backend::Llm(l) => l.select(prompt, dict)?,
            Backend::Cosine(c) => c.select(prompt, dict)?,
            Backend::Mock(m) => m.select(prompt, dict),
        };
        let entry = dict
            .get(index)
            .expect("backends only return keys present in the dictionary");
        Ok(RetrievalResult {
            index,
            description: entry.description.clone(),
            backend: self.name.clone(),
            raw_output,
        })
    }
}

/// One-shot convenience wrapper around [`Selector::from_config`].
pub fn select(
    prompt: &StylePrompt,
    dict: &AnnotationDictionary,
    config: &SelectorConfig,
) -> Result<RetrievalResult, SelectorError> {
    Selector::from_config(config)?.select(prompt, dict)
}
