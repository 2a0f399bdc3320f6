//! Retrieval hit-rate ablation over (backend x dictionary size) and the
//! aggregation of listening-test scores.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::annotation::{AnnotationDictionary, AnnotationError};
use crate::selector::{PromptKind, Selector, SelectorError, StylePrompt};

pub const DEFAULT_GROUP_SIZE: usize = 20;
pub const DEFAULT_PARALLELISM: usize = 4;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("failed to read {path}: {message}")]
    Read { path: PathBuf, message: String },
    #[error("malformed cases file at line {line}, column {column}: {message}")]
    CasesParse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("case #{position}: {message}")]
    InvalidCase { position: usize, message: String },
    #[error("no ablation cases")]
    NoCases,
    #[error("invalid ablation setup: {0}")]
    InvalidSetup(String),
    #[error(transparent)]
    Dictionary(#[from] AnnotationError),
    #[error("need at least 2 scores, got {0}")]
    TooFewScores(usize),
    #[error("score {0} outside [1, 5]")]
    ScoreOutOfRange(f64),
    #[error("confidence must be in (0, 1), got {0}")]
    InvalidConfidence(f64),
    #[error("no votes")]
    NoVotes,
}

/// One prompt plus the set of keys that count as a correct retrieval.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationCase {
    pub prompt: StylePrompt,
    pub expected: BTreeSet<u32>,
}

#[derive(Deserialize, Serialize)]
struct CaseRecord {
    kind: CaseKind,
    text: String,
    expected: Vec<u32>,
}

#[derive(Deserialize, Serialize, Clone, Copy)]
#[serde(rename_all = "snake_case")]
enum CaseKind {
    Selection,
    Inference,
}

impl AblationCase {
    pub fn new(prompt: StylePrompt, expected: impl IntoIterator<Item = u32>) -> Result<Self, EvalError> {
        let expected: BTreeSet<u32> = expected.into_iter().collect();
        if expected.is_empty() {
            return Err(EvalError::InvalidCase {
                position: 0,
                message: "expected set is empty".into(),
            });
        }
        if expected.contains(&0) {
            return Err(EvalError::InvalidCase {
                position: 0,
                message: "expected indices must be >= 1".into(),
            });
        }
        Ok(Self { prompt, expected })
    }
}

/// Parses the cases file format: a JSON array of
/// `{"kind": "selection"|"inference", "text": ..., "expected": [...]}`.
pub fn parse_cases(text: &str) -> Result<Vec<AblationCase>, EvalError> {
    let records: Vec<CaseRecord> = serde_json::from_str(text).map_err(|e| EvalError::CasesParse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    records
        .into_iter()
        .enumerate()
        .map(|(i, r)| {
            let position = i + 1;
            let kind = match r.kind {
                CaseKind::Selection => PromptKind::StyleSelection,
                CaseKind::Inference => PromptKind::StyleInference,
            };
            let prompt = StylePrompt::new(kind, r.text).map_err(|e| EvalError::InvalidCase {
                position,
                message: e.to_string(),
            })?;
            AblationCase::new(prompt, r.expected).map_err(|e| match e {
                EvalError::InvalidCase { message, .. } => EvalError::InvalidCase { position, message },
                other => other,
            })
        })
        .collect()
}

pub fn load_cases(path: impl AsRef<Path>) -> Result<Vec<AblationCase>, EvalError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| EvalError::Read {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    parse_cases(&text)
}

pub fn cases_to_json(cases: &[AblationCase]) -> String {
    let records: Vec<CaseRecord> = cases
        .iter()
        .map(|c| CaseRecord {
            kind: match c.prompt.kind() {
                PromptKind::StyleSelection => CaseKind::Selection,
                PromptKind::StyleInference => CaseKind::Inference,
            },
            text: c.prompt.text().to_string(),
            expected: c.expected.iter().copied().collect(),
        })
        .collect();
    serde_json::to_string_pretty(&records).expect("cases serialize")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AblationOptions {
    /// Shared by every cell: dictionary subsetting and outcome grouping.
    pub seed: u64,
    pub group_size: usize,
    /// Upper bound on concurrent selections within a cell.
    pub parallelism: usize,
}

impl Default for AblationOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            group_size: DEFAULT_GROUP_SIZE,
            parallelism: DEFAULT_PARALLELISM,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HitRateCell {
    pub backend: String,
    pub annotation_count: usize,
    /// Hits over all cases, including those left out of full groups.
    pub mean_hit_rate: f64,
    /// Mean of the per-group hit rates.
    pub group_mean: f64,
    /// Sample standard deviation of the per-group hit rates.
    pub std: f64,
    pub n_groups: usize,
    pub hits: usize,
    pub total: usize,
    /// Selections that errored out and were scored as misses.
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HitRateReport {
    pub seed: u64,
    pub group_size: usize,
    pub cells: Vec<HitRateCell>,
}

impl HitRateReport {
    pub fn get(&self, backend: &str, count: usize) -> Option<&HitRateCell> {
        self.cells
            .iter()
            .find(|c| c.backend == backend && c.annotation_count == count)
    }

    pub fn backends(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for c in &self.cells {
            if !out.contains(&c.backend.as_str()) {
                out.push(&c.backend);
            }
        }
        out
    }

    pub fn counts(&self) -> Vec<usize> {
        let mut out = Vec::new();
        for c in &self.cells {
            if !out.contains(&c.annotation_count) {
                out.push(c.annotation_count);
            }
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(
            "backend,annotation_count,mean_hit_rate,group_mean,std,n_groups,hits,total,failures\n",
        );
        for c in &self.cells {
            let _ = writeln!(
                s,
                "{},{},{:.6},{:.6},{:.6},{},{},{},{}",
                c.backend,
                c.annotation_count,
                c.mean_hit_rate,
                c.group_mean,
                c.std,
                c.n_groups,
                c.hits,
                c.total,
                c.failures
            );
        }
        s
    }

    /// Rows are annotation counts, one column per backend, cells `mean ± std`.
    pub fn to_table(&self) -> String {
        let backends = self.backends();
        let width = backends.iter().map(|b| b.len()).max().unwrap_or(0).max(15);
        let mut s = format!("{:>8}", "count");
        for b in &backends {
            let _ = write!(s, "  {b:>width$}");
        }
        s.push('\n');
        for count in self.counts() {
            let _ = write!(s, "{count:>8}");
            for b in &backends {
                let cell = match self.get(b, count) {
                    Some(c) => format!("{:.3} ± {:.3}", c.mean_hit_rate, c.std),
                    None => "-".into(),
                };
                let _ = write!(s, "  {cell:>width$}");
            }
            s.push('\n');
        }
        s
    }
}

fn sample_std(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

fn summarize(
    backend: &str,
    count: usize,
    outcomes: &[bool],
    failures: usize,
    options: &AblationOptions,
) -> HitRateCell {
    let total = outcomes.len();
    let hits = outcomes.iter().filter(|h| **h).count();

    let mut shuffled = outcomes.to_vec();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(options.seed));
    let rate = |g: &[bool]| g.iter().filter(|h| **h).count() as f64 / g.len() as f64;
    let mut groups: Vec<f64> = shuffled
        .chunks_exact(options.group_size)
        .map(rate)
        .collect();
    if groups.is_empty() {
        // Fewer cases than one group: report them as a single partial group.
        groups.push(rate(&shuffled));
    }

    HitRateCell {
        backend: backend.to_string(),
        annotation_count: count,
        mean_hit_rate: hits as f64 / total as f64,
        group_mean: groups.iter().sum::<f64>() / groups.len() as f64,
        std: sample_std(&groups),
        n_groups: groups.len(),
        hits,
        total,
        failures,
    }
}

/// Hit rate of every backend at every dictionary size.
///
/// A selection that fails (after the backend's own retries) is a miss.
pub fn run_ablation(
    cases: &[AblationCase],
    dict: &AnnotationDictionary,
    counts: &[usize],
    backends: &[Selector],
    options: &AblationOptions,
) -> Result<HitRateReport, EvalError> {
    if cases.is_empty() {
        return Err(EvalError::NoCases);
    }
    if counts.is_empty() || backends.is_empty() {
        return Err(EvalError::InvalidSetup("need at least one count and one backend".into()));
    }
    if options.group_size == 0 || options.parallelism == 0 {
        return Err(EvalError::InvalidSetup("group_size and parallelism must be >= 1".into()));
    }
    if let Some(&bad) = counts.iter().find(|&&c| c == 0 || c > dict.len()) {
        return Err(EvalError::InvalidSetup(format!(
            "annotation count {bad} outside 1..={}",
            dict.len()
        )));
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(options.parallelism)
        .build()
        .map_err(|e| EvalError::InvalidSetup(e.to_string()))?;

    let mut cells = Vec::with_capacity(counts.len() * backends.len());
    for selector in backends {
        for &count in counts {
            let subset = dict.subset(count, options.seed)?;
            let results: Vec<Result<bool, SelectorError>> = pool.install(|| {
                cases
                    .par_iter()
                    .map(|case| {
                        selector
                            .select(&case.prompt, &subset)
                            .map(|r| case.expected.contains(&r.index))
                    })
                    .collect()
            });
            let mut failures = 0;
            let outcomes: Vec<bool> = results
                .into_iter()
                .map(|r| {
                    r.unwrap_or_else(|e| {
                        failures += 1;
                        log::warn!("{} @ {count}: selection failed: {e}", selector.name());
                        false
                    })
                })
                .collect();
            cells.push(summarize(selector.name(), count, &outcomes, failures, options));
        }
    }
    Ok(HitRateReport {
        seed: options.seed,
        group_size: options.group_size,
        cells,
    })
}

/// A batch of 1-5 opinion scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreBatch {
    label: String,
    scores: Vec<f64>,
}

impl ScoreBatch {
    pub fn new(label: impl Into<String>, scores: Vec<f64>) -> Result<Self, EvalError> {
        if scores.is_empty() {
            return Err(EvalError::TooFewScores(0));
        }
        if let Some(&bad) = scores.iter().find(|s| !(1.0..=5.0).contains(*s)) {
            return Err(EvalError::ScoreOutOfRange(bad));
        }
        Ok(Self {
            label: label.into(),
            scores,
        })
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreSummary {
    pub mean: f64,
    pub half_width: f64,
}

// Customary critical values, as printed in score tables.
const CONVENTIONAL_Z: [(f64, f64); 6] = [
    (0.80, 1.282),
    (0.90, 1.645),
    (0.95, 1.96),
    (0.98, 2.326),
    (0.99, 2.576),
    (0.999, 3.291),
];

/// Two-sided normal critical value for `confidence`. The customary rounded
/// value is used for the usual levels; anything else gets the exact
/// quantile.
pub fn critical_z(confidence: f64) -> Result<f64, EvalError> {
    if !(confidence > 0.0 && confidence < 1.0) {
        return Err(EvalError::InvalidConfidence(confidence));
    }
    if let Some((_, z)) = CONVENTIONAL_Z.iter().find(|(c, _)| *c == confidence) {
        return Ok(*z);
    }
    Ok(exact_critical_z(confidence))
}

pub fn exact_critical_z(confidence: f64) -> f64 {
    Normal::standard().inverse_cdf((1.0 + confidence) / 2.0)
}

/// Sample mean and normal-approximation interval half-width
/// `z * s / sqrt(n)`, with `s` the sample (n - 1) standard deviation.
pub fn aggregate_scores(batch: &ScoreBatch, confidence: f64) -> Result<ScoreSummary, EvalError> {
    let n = batch.scores.len();
    if n < 2 {
        return Err(EvalError::TooFewScores(n));
    }
    let z = critical_z(confidence)?;
    let mean = batch.scores.iter().sum::<f64>() / n as f64;
    let s = sample_std(&batch.scores);
    Ok(ScoreSummary {
        mean,
        half_width: z * s / (n as f64).sqrt(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Vote {
    A,
    B,
    NoPreference,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PreferenceTally {
    pub a_pct: f64,
    pub no_pref_pct: f64,
    pub b_pct: f64,
    pub a: usize,
    pub no_pref: usize,
    pub b: usize,
}

pub fn preference_tally(votes: &[Vote]) -> Result<PreferenceTally, EvalError> {
    if votes.is_empty() {
        return Err(EvalError::NoVotes);
    }
    let count = |v: Vote| votes.iter().filter(|x| **x == v).count();
    let (a, no_pref, b) = (count(Vote::A), count(Vote::NoPreference), count(Vote::B));
    let pct = |c: usize| c as f64 / votes.len() as f64 * 100.0;
    Ok(PreferenceTally {
        a_pct: pct(a),
        no_pref_pct: pct(no_pref),
        b_pct: pct(b),
        a,
        no_pref,
        b,
    })
}
