//! TF-IDF retrieval of knowledge-base passes for transformation actions.
//!
//! Word-level 1..=3-grams over lowercased text split on non-alphanumerics,
//! raw term frequency times smoothed idf `ln((1+N)/(1+df)) + 1`, L2
//! normalized, cosine similarity. Query term frequencies are divided by the
//! query's maximum frequency first, so scaling a query's counts by a
//! constant leaves its vector (and so every score) unchanged.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::kb::KnowledgeBase;
use crate::strategy::OptimizationStrategy;

pub const DEFAULT_TOP_M: usize = 3;

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum RetrievalError {
    #[error("cannot build an index over an empty knowledge base")]
    EmptyCorpus,
    #[error("m must be at least 1")]
    InvalidM,
}

/// Recorded with the index so alternative configurations stay comparable.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexConfig {
    pub ngram_range: (usize, usize),
    pub tokens: String,
    pub weighting: String,
    pub norm: String,
}

impl Default for IndexConfig {
    fn default() -> Self {
        IndexConfig {
            ngram_range: (1, 3),
            tokens: "lowercase words split on non-alphanumerics".into(),
            weighting: "raw tf x (ln((1+N)/(1+df)) + 1)".into(),
            norm: "l2".into(),
        }
    }
}

type SparseVec = Vec<(usize, f64)>;

#[derive(Debug, Clone, PartialEq)]
pub struct TfIdfIndex {
    pub config: IndexConfig,
    /// n-gram -> dimension; dimensions follow lexicographic n-gram order.
    pub vocabulary: BTreeMap<String, usize>,
    pub idf: Vec<f64>,
    /// pass id -> L2-normalized sparse vector sorted by dimension.
    pub doc_vectors: BTreeMap<String, SparseVec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalHit {
    pub pass_id: String,
    pub score: f64,
    pub rank: usize,
}

impl RetrievalHit {
    /// A hit kept only because top-m is unconditional.
    pub fn is_miss(&self) -> bool {
        self.score == 0.0
    }
}

pub fn words(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_string)
        .collect()
}

/// Word n-grams for every n in `range` (inclusive), in order of appearance.
pub fn ngrams(text: &str, range: (usize, usize)) -> Vec<String> {
    let w = words(text);
    let mut out = Vec::new();
    for n in range.0..=range.1 {
        if n == 0 || n > w.len() {
            continue;
        }
        for window in w.windows(n) {
            out.push(window.join(" "));
        }
    }
    out
}

pub fn term_counts(text: &str, range: (usize, usize)) -> BTreeMap<String, f64> {
    let mut counts = BTreeMap::new();
    for g in ngrams(text, range) {
        *counts.entry(g).or_insert(0.0) += 1.0;
    }
    counts
}

fn l2_normalize(v: &mut SparseVec) {
    let norm = v.iter().map(|(_, w)| w * w).sum::<f64>().sqrt();
    if norm > 0.0 {
        for (_, w) in v.iter_mut() {
            *w /= norm;
        }
    }
}

fn sparse_dot(a: &SparseVec, b: &SparseVec) -> f64 {
    let (mut i, mut j, mut acc) = (0, 0, 0.0);
    while i < a.len() && j < b.len() {
        match a[i].0.cmp(&b[j].0) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                acc += a[i].1 * b[j].1;
                i += 1;
                j += 1;
            }
        }
    }
    acc
}

impl TfIdfIndex {
    /// Index over `(pass id, description)` documents.
    pub fn from_documents<'a>(docs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<Self, RetrievalError> {
        let config = IndexConfig::default();
        let docs: BTreeMap<&str, BTreeMap<String, f64>> = docs
            .into_iter()
            .map(|(id, text)| (id, term_counts(text, config.ngram_range)))
            .collect();
        if docs.is_empty() {
            return Err(RetrievalError::EmptyCorpus);
        }

        let mut df: BTreeMap<&str, usize> = BTreeMap::new();
        for counts in docs.values() {
            for g in counts.keys() {
                *df.entry(g.as_str()).or_insert(0) += 1;
            }
        }
        let n = docs.len() as f64;
        let vocabulary: BTreeMap<String, usize> =
            df.keys().enumerate().map(|(i, g)| (g.to_string(), i)).collect();
        let idf: Vec<f64> = df
            .values()
            .map(|&d| ((1.0 + n) / (1.0 + d as f64)).ln() + 1.0)
            .collect();

        let doc_vectors = docs
            .iter()
            .map(|(id, counts)| {
                let mut v: SparseVec = counts
                    .iter()
                    .map(|(g, tf)| {
                        let dim = vocabulary[g];
                        (dim, tf * idf[dim])
                    })
                    .collect();
                v.sort_by_key(|e| e.0);
                l2_normalize(&mut v);
                (id.to_string(), v)
            })
            .collect();
        Ok(TfIdfIndex {
            config,
            vocabulary,
            idf,
            doc_vectors,
        })
    }

    pub fn len(&self) -> usize {
        self.doc_vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.doc_vectors.is_empty()
    }

    /// Normalized query vector from raw n-gram counts; out-of-vocabulary
    /// n-grams are dropped. Empty when nothing is in vocabulary.
    pub fn query_vector(&self, counts: &BTreeMap<String, f64>) -> SparseVec {
        let known: Vec<(usize, f64)> = counts
            .iter()
            .filter(|(_, &c)| c > 0.0)
            .filter_map(|(g, &c)| self.vocabulary.get(g).map(|&d| (d, c)))
            .collect();
        let max_tf = known.iter().map(|e| e.1).fold(0.0, f64::max);
        if max_tf <= 0.0 {
            return Vec::new();
        }
        let mut v: SparseVec = known
            .into_iter()
            .map(|(d, c)| (d, (c / max_tf) * self.idf[d]))
            .collect();
        v.sort_by_key(|e| e.0);
        l2_normalize(&mut v);
        v
    }

    /// Cosine score of every document, sorted by (score desc, id asc).
    pub fn score_all(&self, counts: &BTreeMap<String, f64>) -> Vec<(String, f64)> {
        let q = self.query_vector(counts);
        if q.is_empty() {
            return Vec::new();
        }
        let mut scored: Vec<(String, f64)> = self
            .doc_vectors
            .iter()
            .map(|(id, d)| (id.clone(), sparse_dot(&q, d).clamp(0.0, 1.0)))
            .collect();
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        scored
    }

    pub fn retrieve_counts(&self, counts: &BTreeMap<String, f64>, m: usize) -> Result<Vec<RetrievalHit>, RetrievalError> {
        if m == 0 {
            return Err(RetrievalError::InvalidM);
        }
        Ok(self
            .score_all(counts)
            .into_iter()
            .take(m)
            .enumerate()
            .map(|(i, (pass_id, score))| RetrievalHit {
                pass_id,
                score,
                rank: i + 1,
            })
            .collect())
    }

    /// Top-`m` passes for an action text. A query with no in-vocabulary
    /// n-grams yields an empty list (logged, not an error).
    pub fn retrieve(&self, action_text: &str, m: usize) -> Result<Vec<RetrievalHit>, RetrievalError> {
        let hits = self.retrieve_counts(&term_counts(action_text, self.config.ngram_range), m)?;
        if hits.is_empty() {
            log::warn!("retrieval: no vocabulary overlap for {action_text:?}");
        } else if hits.iter().any(RetrievalHit::is_miss) {
            log::info!("retrieval: zero-score hits for {action_text:?}");
        }
        Ok(hits)
    }
}

pub fn build_index(kb: &KnowledgeBase) -> Result<TfIdfIndex, RetrievalError> {
    TfIdfIndex::from_documents(kb.entries.values().map(|e| (e.id.as_str(), e.desc.as_str())))
}

/// What one action retrieved and which analyses that contributed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionRetrieval {
    pub action: String,
    pub hits: Vec<RetrievalHit>,
    pub deps: BTreeSet<String>,
}

/// Per-action retrieval trace plus the union of deps of every action's
/// top-`m` passes.
pub fn resolve_with_trace(
    strategy: &OptimizationStrategy,
    index: &TfIdfIndex,
    kb: &KnowledgeBase,
    m: usize,
) -> Result<(BTreeSet<String>, Vec<ActionRetrieval>), RetrievalError> {
    let mut all = BTreeSet::new();
    let mut trace = Vec::new();
    for action in &strategy.actions {
        let query = action.query_text();
        let hits = index.retrieve(&query, m)?;
        let deps: BTreeSet<String> = hits
            .iter()
            .filter_map(|h| kb.get(&h.pass_id))
            .flat_map(|e| e.deps.iter().cloned())
            .collect();
        all.extend(deps.iter().cloned());
        trace.push(ActionRetrieval {
            action: query,
            hits,
            deps,
        });
    }
    Ok((all, trace))
}

pub fn resolve_analysis_set(
    strategy: &OptimizationStrategy,
    index: &TfIdfIndex,
    kb: &KnowledgeBase,
    m: usize,
) -> Result<BTreeSet<String>, RetrievalError> {
    resolve_with_trace(strategy, index, kb, m).map(|r| r.0)
}
