//! Okapi BM25 retrieval over corpus utterances, and the example orderings
//! used by the prompting strategies.
//!
//! ```text
//! score(q, d) = Σ_{t ∈ q} idf(t) · tf·(k1 + 1) / (tf + k1·(1 − b + b·|d| / avgdl))
//! idf(t)      = ln(1 + (N − n_t + 0.5) / (n_t + 0.5))
//! ```
//!
//! Query tokens are summed with multiplicity; terms absent from the corpus
//! contribute nothing.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::corpus::{Band, CorpusManifest, ScoredExample};

pub const DEFAULT_K: usize = 3;

#[derive(Debug, Error, PartialEq)]
pub enum RetrievalError {
    #[error("cannot index an empty corpus")]
    EmptyCorpus,
    #[error("unknown example id {0:?}")]
    UnknownId(String),
    #[error("example {0} has no difficulty score")]
    Unscored(String),
    #[error("example {0} has no difficulty band")]
    Unbanded(String),
    #[error("band {0} has no members")]
    EmptyBand(Band),
}

/// Lowercases, strips punctuation other than `#` and `<`, splits on whitespace.
pub fn retrieval_tokens(text: &str) -> Vec<String> {
    let cleaned: String = text
        .chars()
        .filter(|c| c.is_alphanumeric() || c.is_whitespace() || *c == '#' || *c == '<')
        .flat_map(char::to_lowercase)
        .collect();
    cleaned.split_whitespace().map(str::to_string).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Self { k1: 1.2, b: 0.75 }
    }
}

#[derive(Debug, Clone)]
struct DocStats {
    id: String,
    len: usize,
    tf: HashMap<String, u32>,
}

#[derive(Debug, Clone)]
pub struct Bm25Index {
    params: Bm25Params,
    docs: Vec<DocStats>,
    df: HashMap<String, usize>,
    avg_doc_len: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalResult {
    pub id: String,
    pub score: f64,
    /// 1-based.
    pub rank: usize,
}

pub fn build_index(manifest: &CorpusManifest) -> Result<Bm25Index, RetrievalError> {
    Bm25Index::build(manifest, Bm25Params::default())
}

impl Bm25Index {
    pub fn build(manifest: &CorpusManifest, params: Bm25Params) -> Result<Self, RetrievalError> {
        if manifest.is_empty() {
            return Err(RetrievalError::EmptyCorpus);
        }
        let mut df: HashMap<String, usize> = HashMap::new();
        let docs: Vec<DocStats> = manifest
            .examples
            .iter()
            .map(|example| {
                let tokens = retrieval_tokens(&example.pair.nl);
                let mut tf: HashMap<String, u32> = HashMap::new();
                for token in &tokens {
                    *tf.entry(token.clone()).or_default() += 1;
                }
                for term in tf.keys() {
                    *df.entry(term.clone()).or_default() += 1;
                }
                DocStats {
                    id: example.pair.id.clone(),
                    len: tokens.len(),
                    tf,
                }
            })
            .collect();
        let avg_doc_len = docs.iter().map(|d| d.len).sum::<usize>() as f64 / docs.len() as f64;
        Ok(Self {
            params,
            docs,
            df,
            avg_doc_len,
        })
    }

    pub fn params(&self) -> Bm25Params {
        self.params
    }

    pub fn doc_count(&self) -> usize {
        self.docs.len()
    }

    pub fn avg_doc_len(&self) -> f64 {
        self.avg_doc_len
    }

    pub fn doc_freq(&self, term: &str) -> usize {
        self.df.get(term).copied().unwrap_or(0)
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.docs.iter().map(|d| d.id.as_str())
    }

    fn doc(&self, id: &str) -> Result<&DocStats, RetrievalError> {
        self.docs
            .iter()
            .find(|d| d.id == id)
            .ok_or_else(|| RetrievalError::UnknownId(id.to_string()))
    }

    pub fn doc_len(&self, id: &str) -> Result<usize, RetrievalError> {
        Ok(self.doc(id)?.len)
    }

    pub fn term_freq(&self, id: &str, term: &str) -> Result<u32, RetrievalError> {
        Ok(self.doc(id)?.tf.get(term).copied().unwrap_or(0))
    }

    pub fn idf(&self, term: &str) -> f64 {
        let n = self.docs.len() as f64;
        let nt = self.doc_freq(term) as f64;
        (1.0 + (n - nt + 0.5) / (nt + 0.5)).ln()
    }

    fn score_doc(&self, query_tokens: &[String], doc: &DocStats) -> f64 {
        let Bm25Params { k1, b } = self.params;
        let norm = if self.avg_doc_len > 0.0 {
            1.0 - b + b * doc.len as f64 / self.avg_doc_len
        } else {
            1.0 - b
        };
        query_tokens
            .iter()
            .filter_map(|term| {
                let tf = *doc.tf.get(term)? as f64;
                Some(self.idf(term) * tf * (k1 + 1.0) / (tf + k1 * norm))
            })
            .sum()
    }

    pub fn score(&self, query: &str, id: &str) -> Result<f64, RetrievalError> {
        let doc = self.doc(id)?;
        Ok(self.score_doc(&retrieval_tokens(query), doc))
    }

    /// Every document, by score descending; ties keep corpus order.
    pub fn ranking(&self, query: &str) -> Vec<RetrievalResult> {
        let tokens = retrieval_tokens(query);
        let mut scored: Vec<(usize, f64)> = self
            .docs
            .iter()
            .enumerate()
            .map(|(i, d)| (i, self.score_doc(&tokens, d)))
            .collect();
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        scored
            .into_iter()
            .enumerate()
            .map(|(rank, (i, score))| RetrievalResult {
                id: self.docs[i].id.clone(),
                score,
                rank: rank + 1,
            })
            .collect()
    }

    pub fn retrieve_top_k(&self, query: &str, k: usize) -> Vec<RetrievalResult> {
        let mut ranking = self.ranking(query);
        ranking.truncate(k);
        ranking
    }
}

fn lookup<'a>(
    results: &[RetrievalResult],
    manifest: &'a CorpusManifest,
) -> Result<Vec<(&'a ScoredExample, usize)>, RetrievalError> {
    results
        .iter()
        .map(|r| {
            manifest
                .get(&r.id)
                .map(|e| (e, r.rank))
                .ok_or_else(|| RetrievalError::UnknownId(r.id.clone()))
        })
        .collect()
}

/// Easy first: ascending mean score, ties by similarity rank.
pub fn order_for_pke(
    results: &[RetrievalResult],
    manifest: &CorpusManifest,
) -> Result<Vec<ScoredExample>, RetrievalError> {
    let mut picked = lookup(results, manifest)?
        .into_iter()
        .map(|(e, rank)| {
            e.mean_score
                .map(|m| (e, rank, m))
                .ok_or_else(|| RetrievalError::Unscored(e.id().to_string()))
        })
        .collect::<Result<Vec<_>, _>>()?;
    picked.sort_by(|a, b| a.2.total_cmp(&b.2).then(a.1.cmp(&b.1)));
    Ok(picked.into_iter().map(|(e, _, _)| e.clone()).collect())
}

/// Least similar first, so the most similar example comes last.
pub fn order_by_similarity(
    results: &[RetrievalResult],
    manifest: &CorpusManifest,
) -> Result<Vec<ScoredExample>, RetrievalError> {
    let mut picked = lookup(results, manifest)?;
    picked.sort_by_key(|p| std::cmp::Reverse(p.1));
    Ok(picked.into_iter().map(|(e, _)| e.clone()).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DnrConfig {
    /// Top-1 from each of Easy, Medium, Hard.
    Emh,
    Eee,
    Mmm,
    Hhh,
}

impl DnrConfig {
    pub const ALL: [DnrConfig; 4] = [
        DnrConfig::Emh,
        DnrConfig::Eee,
        DnrConfig::Mmm,
        DnrConfig::Hhh,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            DnrConfig::Emh => "EMH",
            DnrConfig::Eee => "EEE",
            DnrConfig::Mmm => "MMM",
            DnrConfig::Hhh => "HHH",
        }
    }

    pub fn single_band(self) -> Option<Band> {
        match self {
            DnrConfig::Emh => None,
            DnrConfig::Eee => Some(Band::Easy),
            DnrConfig::Mmm => Some(Band::Medium),
            DnrConfig::Hhh => Some(Band::Hard),
        }
    }
}

impl fmt::Display for DnrConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DnrConfig {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "EMH" => Ok(DnrConfig::Emh),
            "EEE" => Ok(DnrConfig::Eee),
            "MMM" => Ok(DnrConfig::Mmm),
            "HHH" => Ok(DnrConfig::Hhh),
            other => Err(format!("unknown D&R configuration {other:?}")),
        }
    }
}

/// One BM25 index per difficulty band.
#[derive(Debug, Clone)]
pub struct BandedIndex {
    bands: [Option<(Bm25Index, CorpusManifest)>; 3],
}

impl BandedIndex {
    pub fn build(manifest: &CorpusManifest) -> Result<Self, RetrievalError> {
        if let Some(e) = manifest.examples.iter().find(|e| e.band.is_none()) {
            return Err(RetrievalError::Unbanded(e.id().to_string()));
        }
        let part = |band: Band| -> Result<Option<(Bm25Index, CorpusManifest)>, RetrievalError> {
            let members = CorpusManifest {
                examples: manifest
                    .examples
                    .iter()
                    .filter(|e| e.band == Some(band))
                    .cloned()
                    .collect(),
                annotation_model: manifest.annotation_model.clone(),
                created_at: manifest.created_at,
            };
            if members.is_empty() {
                Ok(None)
            } else {
                Ok(Some((build_index(&members)?, members)))
            }
        };
        Ok(Self {
            bands: [part(Band::Easy)?, part(Band::Medium)?, part(Band::Hard)?],
        })
    }

    pub fn band_len(&self, band: Band) -> usize {
        self.bands[band as usize]
            .as_ref()
            .map_or(0, |(_, m)| m.len())
    }

    fn top(&self, band: Band, query: &str, k: usize) -> Result<Vec<ScoredExample>, RetrievalError> {
        let (index, members) = self.bands[band as usize]
            .as_ref()
            .ok_or(RetrievalError::EmptyBand(band))?;
        let results = index.retrieve_top_k(query, k);
        if results.len() < k {
            log::warn!(
                "band {band} has {} member(s), fewer than the {k} requested",
                results.len()
            );
        }
        order_for_pke(&results, members)
    }
}

/// Divide-and-retrieve selection. EMH takes the top match from each band in
/// E, M, H order; single-band configurations take the top `k` of their band,
/// ordered by ascending mean score.
pub fn select_dnr(
    index: &BandedIndex,
    query: &str,
    config: DnrConfig,
    k: usize,
) -> Result<Vec<ScoredExample>, RetrievalError> {
    match config.single_band() {
        Some(band) => index.top(band, query, k),
        None => {
            let mut out = Vec::with_capacity(3);
            for band in Band::ALL {
                out.extend(index.top(band, query, 1)?);
            }
            Ok(out)
        }
    }
}
