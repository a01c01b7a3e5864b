//! Code similarity metrics over normalized token streams.
//!
//! All three metrics consume the output of [`normalize_code`], so an exact
//! match always scores 1.0 on BLEU and Levenshtein similarity as well.

use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use thiserror::Error;

/// Highest n-gram order used by [`bleu`].
pub const BLEU_MAX_ORDER: usize = 4;

/// Human-readable description of the BLEU configuration, for report metadata.
pub const BLEU_CONFIG: &str =
    "sentence-level BLEU-4, uniform weights, add-one smoothing for n>=2, standard brevity penalty, max order capped at candidate length";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricsError {
    #[error("cannot aggregate an empty list of scores")]
    Empty,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairScore {
    pub em: u8,
    pub bleu: f64,
    pub leven: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AggregateScore {
    pub em: f64,
    pub bleu: f64,
    pub leven: f64,
    pub n: usize,
}

/// Trims each line, collapses inner whitespace, drops blank and `;` comment
/// lines. Case and line order are preserved.
pub fn normalize_code(code: &str) -> String {
    code.lines()
        .map(|line| line.split_whitespace().collect::<Vec<_>>().join(" "))
        .filter(|line| !line.is_empty() && !line.starts_with(';'))
        .collect::<Vec<_>>()
        .join("\n")
}

fn normalized_tokens(code: &str) -> Vec<String> {
    normalize_code(code)
        .split_whitespace()
        .map(str::to_string)
        .collect()
}

pub fn exact_match(candidate: &str, reference: &str) -> u8 {
    u8::from(normalize_code(candidate) == normalize_code(reference))
}

/// Word-level edit distance (unit-cost insert, delete, substitute).
pub fn edit_distance<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let substitute = prev[j] + usize::from(x != y);
            cur[j + 1] = substitute.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// `1 - distance / max(len)` over normalized tokens; two empty inputs give 1.
pub fn levenshtein_similarity(candidate: &str, reference: &str) -> f64 {
    token_similarity(&normalized_tokens(candidate), &normalized_tokens(reference))
}

pub fn token_similarity<T: PartialEq>(a: &[T], b: &[T]) -> f64 {
    let longest = a.len().max(b.len());
    if longest == 0 {
        return 1.0;
    }
    1.0 - edit_distance(a, b) as f64 / longest as f64
}

fn ngram_counts<T: Eq + std::hash::Hash>(tokens: &[T], n: usize) -> HashMap<&[T], usize> {
    let mut counts = HashMap::new();
    for gram in tokens.windows(n) {
        *counts.entry(gram).or_insert(0) += 1;
    }
    counts
}

/// Sentence BLEU over normalized tokens. See [`BLEU_CONFIG`].
pub fn bleu(candidate: &str, reference: &str) -> f64 {
    token_bleu(&normalized_tokens(candidate), &normalized_tokens(reference))
}

pub fn token_bleu<T: Eq + std::hash::Hash>(candidate: &[T], reference: &[T]) -> f64 {
    if candidate.is_empty() || reference.is_empty() {
        return if candidate.is_empty() && reference.is_empty() {
            1.0
        } else {
            0.0
        };
    }
    let max_order = BLEU_MAX_ORDER.min(candidate.len());
    let mut log_sum = 0.0;
    for n in 1..=max_order {
        let cand = ngram_counts(candidate, n);
        let refs = ngram_counts(reference, n);
        let matched: usize = cand
            .iter()
            .map(|(gram, count)| (*count).min(refs.get(gram).copied().unwrap_or(0)))
            .sum();
        let total = candidate.len() + 1 - n;
        let precision = if n == 1 {
            matched as f64 / total as f64
        } else {
            (matched + 1) as f64 / (total + 1) as f64
        };
        if precision == 0.0 {
            return 0.0;
        }
        log_sum += precision.ln();
    }
    let (c, r) = (candidate.len() as f64, reference.len() as f64);
    let brevity = if c > r { 1.0 } else { (1.0 - r / c).exp() };
    (brevity * (log_sum / max_order as f64).exp()).clamp(0.0, 1.0)
}

pub fn score_pair(candidate: &str, reference: &str) -> PairScore {
    let em = exact_match(candidate, reference);
    if em == 1 {
        return PairScore {
            em,
            bleu: 1.0,
            leven: 1.0,
        };
    }
    PairScore {
        em,
        bleu: bleu(candidate, reference),
        leven: levenshtein_similarity(candidate, reference),
    }
}

pub fn aggregate(pairs: &[PairScore]) -> Result<AggregateScore, MetricsError> {
    if pairs.is_empty() {
        return Err(MetricsError::Empty);
    }
    let n = pairs.len() as f64;
    Ok(AggregateScore {
        em: pairs.iter().map(|p| p.em as f64).sum::<f64>() / n,
        bleu: pairs.iter().map(|p| p.bleu).sum::<f64>() / n,
        leven: pairs.iter().map(|p| p.leven).sum::<f64>() / n,
        n: pairs.len(),
    })
}
