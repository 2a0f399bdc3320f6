//! Embedding providers and the cosine-similarity selector.

use std::collections::HashMap;
use std::sync::{Arc, RwLock};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{CandidateScore, RawOutput, SelectorConfig, SelectorError, StylePrompt};
use crate::annotation::AnnotationDictionary;
use crate::transport::{join_url, HttpTransport, JsonTransport, TransportError};

/// Turns texts into fixed-width vectors. One provider, one width.
pub trait Embedder: Send + Sync {
    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, SelectorError>;
}

/// Exact-text lookup table loaded from JSON (`{"text": [numbers], ...}`).
#[derive(Debug, Clone, PartialEq)]
pub struct OfflineEmbeddings {
    table: HashMap<String, Vec<f64>>,
}

impl OfflineEmbeddings {
    pub fn new(table: HashMap<String, Vec<f64>>) -> Result<Self, SelectorError> {
        let mut dim = None;
        for (text, v) in &table {
            match dim {
                None => dim = Some(v.len()),
                Some(d) if d != v.len() => {
                    return Err(SelectorError::DimensionMismatch {
                        text: text.clone(),
                        expected: d,
                        actual: v.len(),
                    })
                }
                _ => {}
            }
        }
        Ok(Self { table })
    }

    pub fn from_json(text: &str) -> Result<Self, SelectorError> {
        let table: HashMap<String, Vec<f64>> = serde_json::from_str(text)
            .map_err(|e| SelectorError::InvalidConfig(format!("embedding file: {e}")))?;
        Self::new(table)
    }
}

impl Embedder for OfflineEmbeddings {
    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, SelectorError> {
        texts
            .iter()
            .map(|t| {
                self.table
                    .get(t)
                    .cloned()
                    .ok_or_else(|| SelectorError::UnknownText(t.clone()))
            })
            .collect()
    }
}

/// Body of `POST {endpoint}/embeddings`. Field order is wire order.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EmbeddingBatchRequest {
    pub model: String,
    pub input: Vec<String>,
}

impl EmbeddingBatchRequest {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("embedding request serializes")
    }
}

#[derive(Debug, Clone, Deserialize)]
pub struct EmbeddingBatchResponse {
    pub data: Vec<EmbeddingDatum>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct EmbeddingDatum {
    pub embedding: Vec<f64>,
    #[serde(default)]
    pub index: Option<usize>,
}

impl EmbeddingBatchResponse {
    /// Vectors in input order. Providers that send `index` may return the
    /// data out of order; it is re-sorted here.
    pub fn vectors_from_json(
        url: &str,
        body: &str,
        expected: usize,
    ) -> Result<Vec<Vec<f64>>, TransportError> {
        let malformed = |message: String| TransportError::MalformedResponse {
            url: url.to_string(),
            message,
        };
        let mut resp: EmbeddingBatchResponse =
            serde_json::from_str(body).map_err(|e| malformed(e.to_string()))?;
        if resp.data.len() != expected {
            return Err(malformed(format!(
                "expected {expected} embeddings, got {}",
                resp.data.len()
            )));
        }
        if resp.data.iter().all(|d| d.index.is_some()) {
            resp.data.sort_by_key(|d| d.index);
        }
        Ok(resp.data.into_iter().map(|d| d.embedding).collect())
    }
}

pub struct RemoteEmbedder {
    endpoint: String,
    model: String,
    timeout: Duration,
    transport: Arc<dyn JsonTransport>,
}

impl RemoteEmbedder {
    pub fn new(
        endpoint: String,
        model: String,
        timeout: Duration,
        transport: Arc<dyn JsonTransport>,
    ) -> Self {
        Self {
            endpoint,
            model,
            timeout,
            transport,
        }
    }
}

impl Embedder for RemoteEmbedder {
    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, SelectorError> {
        if texts.is_empty() {
            return Ok(Vec::new());
        }
        let url = join_url(&self.endpoint, "embeddings");
        let body = EmbeddingBatchRequest {
            model: self.model.clone(),
            input: texts.to_vec(),
        }
        .to_json();
        let resp = self
            .transport
            .post_json(&url, &body, self.timeout)
            .map_err(|e| SelectorError::Provider(e.to_string()))?;
        EmbeddingBatchResponse::vectors_from_json(&url, &resp, texts.len())
            .map_err(|e| SelectorError::Provider(e.to_string()))
    }
}

/// Embeds one text with the provider named by `config`: the offline table
/// when `embeddings_file` is set, the remote endpoint otherwise.
pub fn embed_text(text: &str, config: &SelectorConfig) -> Result<Vec<f64>, SelectorError> {
    if text.trim().is_empty() {
        return Err(SelectorError::EmptyPrompt);
    }
    let embedder: Box<dyn Embedder> = match &config.embeddings_file {
        Some(p) => {
            let raw = std::fs::read_to_string(p).map_err(|e| SelectorError::Io {
                path: p.clone(),
                message: e.to_string(),
            })?;
            Box::new(OfflineEmbeddings::from_json(&raw)?)
        }
        None => Box::new(RemoteEmbedder::new(
            config.endpoint.clone(),
            config.model_name.clone(),
            config.timeout(),
            Arc::new(HttpTransport::from_env()),
        )),
    };
    let mut out = embedder.embed_batch(&[text.to_string()])?;
    Ok(out.remove(0))
}

/// Cosine of the angle between `a` and `b`; zero when either is a zero vector.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

pub(super) struct CosineSelector {
    embedder: Box<dyn Embedder>,
    // Keyed by exact text, so descriptions are embedded once however many
    // dictionaries (subsets) they appear in.
    cache: RwLock<HashMap<String, Vec<f64>>>,
}

impl CosineSelector {
    pub(super) fn new(embedder: Box<dyn Embedder>) -> Self {
        Self {
            embedder,
            cache: RwLock::new(HashMap::new()),
        }
    }

    fn embed_cached(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>, SelectorError> {
        let missing: Vec<String> = {
            let cache = self.cache.read().expect("cache lock");
            let mut seen = std::collections::HashSet::new();
            texts
                .iter()
                .filter(|t| !cache.contains_key(**t) && seen.insert(**t))
                .map(|t| t.to_string())
                .collect()
        };
        if !missing.is_empty() {
            let vectors = self.embedder.embed_batch(&missing)?;
            let mut cache = self.cache.write().expect("cache lock");
            for (t, v) in missing.into_iter().zip(vectors) {
                cache.insert(t, v);
            }
        }
        let cache = self.cache.read().expect("cache lock");
        Ok(texts.iter().map(|t| cache[*t].clone()).collect())
    }

    pub(super) fn select(
        &self,
        prompt: &StylePrompt,
        dict: &AnnotationDictionary,
    ) -> Result<(u32, RawOutput), SelectorError> {
        let descriptions: Vec<&str> = dict.entries().map(|e| e.description.as_str()).collect();
        let mut texts = descriptions.clone();
        texts.push(prompt.text());
        let mut candidates = self.embed_cached(&texts)?;
        let query = candidates.pop().expect("prompt embedding");

        let dim = query.len();
        for (text, v) in descriptions.iter().zip(&candidates) {
            if v.len() != dim {
                return Err(SelectorError::DimensionMismatch {
                    text: text.to_string(),
                    expected: dim,
                    actual: v.len(),
                });
            }
        }

        let scores: Vec<CandidateScore> = dict
            .indices()
            .zip(&candidates)
            .map(|(index, v)| CandidateScore {
                index,
                score: cosine_similarity(&query, v),
            })
            .collect();
        // Strict comparison over ascending keys keeps the smallest key on ties.
        let best = scores
            .iter()
            .fold(None::<&CandidateScore>, |best, s| match best {
                Some(b) if b.score >= s.score => Some(b),
                _ => Some(s),
            })
            .expect("dictionary is non-empty");
        Ok((best.index, RawOutput::Scores { scores: scores.clone() }))
    }
}
