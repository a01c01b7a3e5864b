//! LLM-judged difficulty annotation.
//!
//! Each example is scored five times, once per temperature in
//! [`TEMPERATURES`], and the mean becomes its difficulty. The corpus is then
//! split into rank tertiles: Easy, Medium, Hard.

use std::sync::OnceLock;

use regex::Regex;
use thiserror::Error;

use crate::corpus::{Band, CorpusManifest, ExamplePair, ScoredExample, SCORE_SAMPLES};
use crate::gateway::{fan_out, Gateway, GatewayError, SCORING_MAX_TOKENS};
use crate::template::fill;

/// Sampling temperatures for the five scoring requests, in call order.
pub const TEMPERATURES: [f64; SCORE_SAMPLES] = [0.0, 0.2, 0.4, 0.6, 0.8];

/// Text identifying a difficulty prompt.
pub const DIFFICULTY_SENTINEL: &str = "Judge the difficulty (0-100)";

const DIFFICULTY_TEMPLATE: &str = "\
Judge the difficulty (0-100) to generate the
following ALPG code from the given natural
language description:

Natural Language: {nl_description}
ALPG Code: {alpg_code}

Rate the difficulty from 0 (very easy) to 100 (very hard) based on:
- Syntax complexity
- Hardware interaction requirements
- Timing constraints
- Overall implementation challenge

Difficulty Score:";

#[derive(Debug, Error)]
pub enum DifficultyError {
    #[error("no score found in completion {0:?}")]
    UnparseableScore(String),
    #[error("annotating {id}: {source}")]
    Annotation {
        id: String,
        #[source]
        source: Box<DifficultyError>,
    },
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("example {0} has no mean_score")]
    Unscored(String),
    #[error("{} example(s) failed annotation: {}", .0.len(), .0.iter().map(|(id, e)| format!("{id}: {e}")).collect::<Vec<_>>().join("; "))]
    Failures(Vec<(String, String)>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DifficultyPrompt {
    pub text: String,
}

pub fn build_difficulty_prompt(pair: &ExamplePair) -> DifficultyPrompt {
    DifficultyPrompt {
        text: fill(
            DIFFICULTY_TEMPLATE,
            &[("nl_description", &pair.nl), ("alpg_code", &pair.code)],
        ),
    }
}

fn number_pattern() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"-?\d+(?:\.\d+)?").expect("valid regex"))
}

/// First number in `completion`, clamped to [0, 100].
pub fn parse_score(completion: &str) -> Result<f64, DifficultyError> {
    number_pattern()
        .find(completion)
        .and_then(|m| m.as_str().parse::<f64>().ok())
        .filter(|v| v.is_finite())
        .map(|v| v.clamp(0.0, 100.0))
        .ok_or_else(|| DifficultyError::UnparseableScore(completion.to_string()))
}

fn sample_score(
    prompt: &DifficultyPrompt,
    temperature: f64,
    gateway: &Gateway,
) -> Result<f64, DifficultyError> {
    let request = gateway.request(prompt.text.clone(), temperature, SCORING_MAX_TOKENS);
    let first = gateway.complete(&request)?;
    match parse_score(&first.text) {
        Ok(score) => Ok(score),
        Err(_) => {
            // one re-ask at the same temperature
            let second = gateway.complete(&request)?;
            parse_score(&second.text)
        }
    }
}

/// Scores one pair with the five-temperature ensemble. The band is left unset.
pub fn annotate_example(
    pair: &ExamplePair,
    gateway: &Gateway,
) -> Result<ScoredExample, DifficultyError> {
    let prompt = build_difficulty_prompt(pair);
    let scores = TEMPERATURES
        .iter()
        .map(|&t| sample_score(&prompt, t, gateway))
        .collect::<Result<Vec<f64>, _>>()
        .map_err(|e| DifficultyError::Annotation {
            id: pair.id.clone(),
            source: Box::new(e),
        })?;
    Ok(ScoredExample::with_scores(pair.clone(), scores))
}

/// Band sizes (easy, medium, hard) for `n` examples; the ceiling goes to Easy first.
pub fn tertile_sizes(n: usize) -> (usize, usize, usize) {
    let easy = n.div_ceil(3);
    let medium = (n - easy).div_ceil(2);
    (easy, medium, n - easy - medium)
}

/// Assigns rank-tertile bands by ascending mean score; ties keep corpus order.
/// Example order in the returned manifest is unchanged.
pub fn categorize(manifest: &CorpusManifest) -> Result<CorpusManifest, DifficultyError> {
    let means = manifest
        .examples
        .iter()
        .map(|e| {
            e.mean_score
                .ok_or_else(|| DifficultyError::Unscored(e.id().to_string()))
        })
        .collect::<Result<Vec<f64>, _>>()?;
    let mut order: Vec<usize> = (0..means.len()).collect();
    order.sort_by(|&a, &b| means[a].total_cmp(&means[b]).then(a.cmp(&b)));

    let (easy, medium, _) = tertile_sizes(means.len());
    let mut out = manifest.clone();
    for (rank, &idx) in order.iter().enumerate() {
        out.examples[idx].band = Some(if rank < easy {
            Band::Easy
        } else if rank < easy + medium {
            Band::Medium
        } else {
            Band::Hard
        });
    }
    Ok(out)
}

/// Annotates every unscored example (all of them when `rescore`), then bands
/// the whole corpus. Fails listing every example that could not be scored.
pub fn annotate_corpus(
    manifest: &CorpusManifest,
    gateway: &Gateway,
    parallelism: usize,
    rescore: bool,
) -> Result<CorpusManifest, DifficultyError> {
    let results = fan_out(&manifest.examples, parallelism, |example| {
        if example.is_scored() && !rescore {
            Ok(example.clone())
        } else {
            annotate_example(&example.pair, gateway)
        }
    });
    let mut examples = Vec::with_capacity(results.len());
    let mut failures = Vec::new();
    for (example, result) in manifest.examples.iter().zip(results) {
        match result {
            Ok(scored) => examples.push(scored),
            Err(e) => failures.push((example.id().to_string(), e.to_string())),
        }
    }
    if !failures.is_empty() {
        return Err(DifficultyError::Failures(failures));
    }
    let mut annotated = manifest.clone();
    annotated.examples = examples;
    categorize(&annotated)
}

fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = rank;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation with average ranks for ties. `None` when either
/// side is constant or the lengths differ.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Option<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return None;
    }
    let (rx, ry) = (average_ranks(xs), average_ranks(ys));
    let n = rx.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let mut cov = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for (a, b) in rx.iter().zip(&ry) {
        cov += (a - mx) * (b - my);
        vx += (a - mx).powi(2);
        vy += (b - my).powi(2);
    }
    if vx == 0.0 || vy == 0.0 {
        return None;
    }
    Some(cov / (vx * vy).sqrt())
}
