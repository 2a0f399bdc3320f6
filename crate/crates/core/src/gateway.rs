//! Prompt -> retrieval -> latent -> synthesis request, and delivery of that
//! request to a synthesis backend through an append-only journal.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::annotation::AnnotationDictionary;
use crate::latent::{
    duration_scale, reparameterize, sample_noise, DurationClamp, LatentBank, LatentError,
};
use crate::selector::{PromptKind, RetrievalResult, Selector, SelectorError, StylePrompt};
use crate::transport::{join_url, JsonTransport, TransportError};

#[derive(Debug, thiserror::Error)]
pub enum GatewayError {
    #[error("retrieval failed: {0}")]
    Selection(#[from] SelectorError),
    #[error("no latent for reference {0:?}")]
    MissingLatent(String),
    #[error(transparent)]
    Latent(#[from] LatentError),
    #[error("synthesis text is empty")]
    EmptyText,
    #[error("style inference synthesizes the prompt itself, but prompt {prompt:?} != text {text:?}")]
    InferenceTextMismatch { prompt: String, text: String },
    #[error("duration scale {0} is outside the configured clamp")]
    ScaleOutOfRange(f64),
    #[error("dispatch failed: {0}")]
    Transport(#[from] TransportError),
    #[error("journal {path}: {message}")]
    Journal { path: PathBuf, message: String },
}

/// Wire body of `POST {url}/synthesize`. Field order is wire order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthesizePayload {
    pub text: String,
    pub reference_id: String,
    pub latent: Vec<f64>,
    pub duration_scale: f64,
}

impl SynthesizePayload {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("payload serializes")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthesisRequest {
    pub text: String,
    pub reference_id: String,
    pub latent: Vec<f64>,
    pub duration_scale: f64,
    pub retrieval: RetrievalResult,
}

impl SynthesisRequest {
    pub fn payload(&self) -> SynthesizePayload {
        SynthesizePayload {
            text: self.text.clone(),
            reference_id: self.reference_id.clone(),
            latent: self.latent.clone(),
            duration_scale: self.duration_scale,
        }
    }
}

/// Where the latent noise comes from. `Zero` makes the latent equal to the
/// reference mean.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseSource {
    Seeded(u64),
    Zero,
}

/// Borrowed view of everything needed to turn a prompt into a request.
pub struct Gateway<'a> {
    dict: &'a AnnotationDictionary,
    bank: &'a LatentBank,
    selector: &'a Selector,
    clamp: DurationClamp,
}

impl<'a> Gateway<'a> {
    /// Fails if any dictionary reference lacks a latent.
    pub fn new(
        dict: &'a AnnotationDictionary,
        bank: &'a LatentBank,
        selector: &'a Selector,
        clamp: DurationClamp,
    ) -> Result<Self, GatewayError> {
        if let Some(e) = dict.entries().find(|e| bank.get(&e.reference_id).is_none()) {
            return Err(GatewayError::MissingLatent(e.reference_id.clone()));
        }
        Ok(Self {
            dict,
            bank,
            selector,
            clamp,
        })
    }

    pub fn orchestrate(
        &self,
        prompt: &StylePrompt,
        synthesis_text: &str,
        seed: u64,
    ) -> Result<SynthesisRequest, GatewayError> {
        self.orchestrate_with_noise(prompt, synthesis_text, NoiseSource::Seeded(seed))
    }

    pub fn orchestrate_with_noise(
        &self,
        prompt: &StylePrompt,
        synthesis_text: &str,
        noise: NoiseSource,
    ) -> Result<SynthesisRequest, GatewayError> {
        if synthesis_text.trim().is_empty() {
            return Err(GatewayError::EmptyText);
        }
        if prompt.kind() == PromptKind::StyleInference && prompt.text() != synthesis_text {
            return Err(GatewayError::InferenceTextMismatch {
                prompt: prompt.text().to_string(),
                text: synthesis_text.to_string(),
            });
        }

        let retrieval = self.selector.select(prompt, self.dict)?;
        let entry = self
            .dict
            .get(retrieval.index)
            .expect("selector returns dictionary keys");
        let spec = self
            .bank
            .get(&entry.reference_id)
            .ok_or_else(|| GatewayError::MissingLatent(entry.reference_id.clone()))?;

        let eps = match noise {
            NoiseSource::Seeded(seed) => sample_noise(spec.dim(), seed),
            NoiseSource::Zero => vec![0.0; spec.dim()],
        };
        let latent = reparameterize(spec, &eps)?;

        let scale = match (entry.mean_phone_duration, self.dict.corpus_mean_phone_duration()) {
            (Some(reference), Some(corpus)) => self.clamp.apply(duration_scale(reference, corpus)?),
            _ => 1.0,
        };
        if !self.clamp.contains(scale) {
            return Err(GatewayError::ScaleOutOfRange(scale));
        }

        Ok(SynthesisRequest {
            text: synthesis_text.to_string(),
            reference_id: entry.reference_id.clone(),
            latent,
            duration_scale: scale,
            retrieval,
        })
    }
}

/// Free-function form of [`Gateway::orchestrate`].
pub fn orchestrate(
    prompt: &StylePrompt,
    synthesis_text: &str,
    dict: &AnnotationDictionary,
    bank: &LatentBank,
    selector: &Selector,
    clamp: DurationClamp,
    seed: u64,
) -> Result<SynthesisRequest, GatewayError> {
    Gateway::new(dict, bank, selector, clamp)?.orchestrate(prompt, synthesis_text, seed)
}

/// One journal line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JournalRecord {
    pub seq: u64,
    pub request: SynthesizePayload,
    pub retrieval: RetrievalResult,
}

struct JournalState {
    file: File,
    next_seq: u64,
}

/// Append-only newline-delimited JSON log of every request handed to a
/// backend. A single writer lock serializes appends.
pub struct Journal {
    path: PathBuf,
    state: Mutex<JournalState>,
}

impl Journal {
    /// Opens (creating if needed) and continues numbering after any
    /// existing lines.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, GatewayError> {
        let path = path.as_ref().to_path_buf();
        let err = |e: std::io::Error| GatewayError::Journal {
            path: path.clone(),
            message: e.to_string(),
        };
        let existing = match File::open(&path) {
            Ok(f) => BufReader::new(f).lines().count() as u64,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => 0,
            Err(e) => return Err(err(e)),
        };
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(err)?;
        Ok(Self {
            path,
            state: Mutex::new(JournalState {
                file,
                next_seq: existing + 1,
            }),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Writes and flushes one record; returns its sequence number.
    pub fn append(&self, request: &SynthesisRequest) -> Result<u64, GatewayError> {
        let mut state = self.state.lock().expect("journal lock");
        let record = JournalRecord {
            seq: state.next_seq,
            request: request.payload(),
            retrieval: request.retrieval.clone(),
        };
        let mut line = serde_json::to_string(&record).expect("record serializes");
        line.push('\n');
        state
            .file
            .write_all(line.as_bytes())
            .and_then(|_| state.file.flush())
            .map_err(|e| GatewayError::Journal {
                path: self.path.clone(),
                message: e.to_string(),
            })?;
        state.next_seq += 1;
        Ok(record.seq)
    }

    pub fn replay(path: impl AsRef<Path>) -> Result<Vec<JournalRecord>, GatewayError> {
        let path = path.as_ref();
        let err = |message: String| GatewayError::Journal {
            path: path.to_path_buf(),
            message,
        };
        let f = File::open(path).map_err(|e| err(e.to_string()))?;
        BufReader::new(f)
            .lines()
            .enumerate()
            .map(|(i, line)| {
                let line = line.map_err(|e| err(e.to_string()))?;
                serde_json::from_str(&line).map_err(|e| err(format!("line {}: {e}", i + 1)))
            })
            .collect()
    }
}

pub enum SynthesisBackend {
    Http {
        url: String,
        timeout: Duration,
        transport: Arc<dyn JsonTransport>,
    },
    Stub,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DispatchReceipt {
    pub job_id: String,
    pub journal_seq: u64,
}

#[derive(Deserialize)]
struct JobResponse {
    job_id: String,
}

pub struct Dispatcher {
    backend: SynthesisBackend,
    journal: Journal,
    stub_log: Mutex<Vec<SynthesisRequest>>,
}

impl Dispatcher {
    pub fn new(backend: SynthesisBackend, journal: Journal) -> Self {
        Self {
            backend,
            journal,
            stub_log: Mutex::new(Vec::new()),
        }
    }

    pub fn journal(&self) -> &Journal {
        &self.journal
    }

    /// Requests the stub backend has accepted in this process.
    pub fn stub_log(&self) -> Vec<SynthesisRequest> {
        self.stub_log.lock().expect("stub log lock").clone()
    }

    /// Journals the request, then hands it to the backend. A transport
    /// failure leaves the journal entry in place.
    pub fn dispatch(&self, request: &SynthesisRequest) -> Result<DispatchReceipt, GatewayError> {
        let seq = self.journal.append(request)?;
        match &self.backend {
            SynthesisBackend::Stub => {
                self.stub_log.lock().expect("stub log lock").push(request.clone());
                Ok(DispatchReceipt {
                    job_id: format!("stub-{seq:06}"),
                    journal_seq: seq,
                })
            }
            SynthesisBackend::Http {
                url,
                timeout,
                transport,
            } => {
                let endpoint = join_url(url, "synthesize");
                let body = transport.post_json(&endpoint, &request.payload().to_json(), *timeout)?;
                let job: JobResponse = serde_json::from_str(&body).map_err(|e| {
                    TransportError::MalformedResponse {
                        url: endpoint.clone(),
                        message: e.to_string(),
                    }
                })?;
                Ok(DispatchReceipt {
                    job_id: job.job_id,
                    journal_seq: seq,
                })
            }
        }
    }
}

pub fn dispatch(dispatcher: &Dispatcher, request: &SynthesisRequest) -> Result<DispatchReceipt, GatewayError> {
    dispatcher.dispatch(request)
}
