//! Experiment runner: synthesis, annotation, leave-one-out evaluation and
//! report emission.

mod config;
mod report;

use std::fs;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use config::{BackendKind, CacheModeSetting, ExperimentConfig, GatewaySettings};
pub use report::{
    format_delta, read_csv, render_report, render_summaries, report_header, summarize, write_csv,
    ReportStyle, CSV_COLUMNS,
};

use crate::corpus::{load_corpus, save_corpus, CorpusError, CorpusManifest, ExamplePair};
use crate::difficulty::{annotate_corpus, categorize, DifficultyError};
use crate::gateway::{fan_out, Gateway, GatewayError};
use crate::metrics::{score_pair, AggregateScore, PairScore, BLEU_CONFIG};
use crate::minialpg::{synthesize_corpus, SynthError, SynthSpec};
use crate::pipeline::{run_strategy, Strategy, StrategyError, StrategyRun};

pub const BANDING_RULE: &str =
    "rank tertiles over mean_score, ties by corpus order, remainder to easy then medium";
pub const ORDERING_RULES: &str =
    "pke: mean_score ascending, ties by BM25 rank; sim and few-shot: least similar first, most similar adjacent to the query";

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Difficulty(#[from] DifficultyError),
    #[error(transparent)]
    Strategy(#[from] StrategyError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("configuration: {0}")]
    Config(String),
    #[error("report style needs strategies that are missing: {}", .0.join(", "))]
    MissingStrategies(Vec<String>),
    #[error("corpus is not difficulty-annotated; run `annotate` first")]
    NotAnnotated,
    #[error("all {0} rows failed; first error: {1}")]
    AllFailed(usize, String),
    #[error(transparent)]
    Synth(#[from] SynthError),
}

impl HarnessError {
    /// True for mistakes in arguments or configuration rather than run failures.
    pub fn is_usage(&self) -> bool {
        matches!(
            self,
            Self::Config(_) | Self::MissingStrategies(_) | Self::Synth(_) | Self::NotAnnotated
        ) || matches!(self, Self::Gateway(GatewayError::InvalidRequest(_)))
    }
}

fn io_error(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub query_id: String,
    pub strategy: String,
    pub code: String,
    pub score: PairScore,
    pub calls: usize,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategySummary {
    pub strategy: String,
    pub score: AggregateScore,
    /// Rows that errored and were scored as empty output.
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub protocol: String,
    pub dialect: String,
    pub banding_rule: String,
    pub bleu_config: String,
    pub ordering: String,
    pub strategies: Vec<String>,
    pub k: usize,
    pub seed: u64,
    pub corpus: PathBuf,
    pub queries: usize,
    pub gateway_mode: String,
    pub model: String,
    pub annotation_model: String,
    pub started_at: DateTime<Utc>,
    pub finished_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub aggregates: Vec<StrategySummary>,
    /// Strategy-major: all queries for the first strategy, then the next.
    pub rows: Vec<EvalRow>,
    pub metadata: RunMetadata,
}

impl EvalReport {
    pub fn query_count(&self) -> usize {
        self.metadata.queries
    }
}

/// Writes a synthetic corpus. The file bytes depend only on `spec`.
pub fn cmd_synth(spec: &SynthSpec, out: &Path) -> Result<CorpusManifest, HarnessError> {
    let manifest = synthesize_corpus(spec)?;
    save_corpus(&manifest, out)?;
    Ok(manifest)
}

/// Scores and bands `input`, writing the result to `output`. Returns the
/// easy/medium/hard band sizes.
pub fn cmd_annotate(
    input: &Path,
    output: &Path,
    gateway: &Gateway,
    parallelism: usize,
    rescore: bool,
) -> Result<[usize; 3], HarnessError> {
    let manifest = load_corpus(input)?;
    if manifest.is_empty() {
        return Err(HarnessError::Config(format!(
            "{} contains no examples",
            input.display()
        )));
    }
    let needs_calls = rescore || !manifest.all_scored();
    let mut annotated = annotate_corpus(&manifest, gateway, parallelism, rescore)?;
    if needs_calls {
        annotated.annotation_model = gateway.model().to_string();
        annotated.created_at = Some(Utc::now());
    }
    save_corpus(&annotated, output)?;
    let sizes = annotated.band_sizes();
    log::info!(
        "bands easy/medium/hard = {}/{}/{}",
        sizes[0],
        sizes[1],
        sizes[2]
    );
    Ok(sizes)
}

fn prepare_corpus(path: &Path, strategies: &[Strategy]) -> Result<CorpusManifest, HarnessError> {
    let manifest = load_corpus(path)?;
    if manifest.is_empty() {
        return Err(HarnessError::Config(format!(
            "{} contains no examples",
            path.display()
        )));
    }
    if manifest.all_scored() {
        return Ok(categorize(&manifest)?);
    }
    if strategies.iter().any(|s| s.kind.needs_difficulty()) {
        return Err(HarnessError::NotAnnotated);
    }
    Ok(manifest)
}

fn evaluate(
    strategy: Strategy,
    query: &ExamplePair,
    corpus: &CorpusManifest,
    gateway: &Gateway,
) -> EvalRow {
    let outcome = corpus
        .leave_one_out(&query.id)
        .map_err(|e| e.to_string())
        .and_then(|pool| run_strategy(strategy, query, &pool, gateway).map_err(|e| e.to_string()));
    let (code, calls, error) = match outcome {
        Ok(StrategyRun { code, calls, .. }) => (code, calls, None),
        Err(message) => {
            log::warn!("{message}");
            (String::new(), 0, Some(message))
        }
    };
    EvalRow {
        query_id: query.id.clone(),
        strategy: strategy.name(),
        score: score_pair(&code, &query.code),
        code,
        calls,
        error,
    }
}

/// Leave-one-out evaluation of every configured strategy. Writes
/// `report.csv`, `report.txt`, `rows.jsonl` and `metadata.json` into the
/// output directory.
pub fn cmd_run(config: &ExperimentConfig) -> Result<EvalReport, HarnessError> {
    config.validate()?;
    let started_at = Utc::now();
    let strategies = config.strategy_list();
    let corpus = prepare_corpus(&config.corpus, &strategies)?;
    let gateway = config.gateway.build()?;

    let tasks: Vec<(Strategy, &ExamplePair)> = strategies
        .iter()
        .flat_map(|&s| corpus.examples.iter().map(move |e| (s, &e.pair)))
        .collect();
    let rows = fan_out(&tasks, config.parallelism, |&(strategy, query)| {
        evaluate(strategy, query, &corpus, &gateway)
    });

    if let Some(first) = rows.iter().find_map(|r| r.error.clone()) {
        if rows.iter().all(|r| r.error.is_some()) {
            return Err(HarnessError::AllFailed(rows.len(), first));
        }
    }

    let report = EvalReport {
        aggregates: summarize(&rows),
        rows,
        metadata: RunMetadata {
            protocol: "leave-one-out".to_string(),
            dialect: "mini-ALPG".to_string(),
            banding_rule: BANDING_RULE.to_string(),
            bleu_config: BLEU_CONFIG.to_string(),
            ordering: ORDERING_RULES.to_string(),
            strategies: strategies.iter().map(Strategy::name).collect(),
            k: config.k,
            seed: config.seed,
            corpus: config.corpus.clone(),
            queries: corpus.len(),
            gateway_mode: config.gateway.mode_label(),
            model: gateway.model().to_string(),
            annotation_model: corpus.annotation_model.clone(),
            started_at,
            finished_at: Utc::now(),
        },
    };
    write_outputs(&report, &config.output_dir)?;
    Ok(report)
}

fn write_outputs(report: &EvalReport, dir: &Path) -> Result<(), HarnessError> {
    fs::create_dir_all(dir).map_err(io_error(dir))?;
    write_csv(&report.rows, &dir.join("report.csv"))?;

    let table = render_report(report, ReportStyle::Main)?;
    let txt = dir.join("report.txt");
    fs::write(&txt, table).map_err(io_error(&txt))?;

    let jsonl = dir.join("rows.jsonl");
    let mut lines = String::new();
    for row in &report.rows {
        lines.push_str(&serde_json::to_string(row).expect("row serializes"));
        lines.push('\n');
    }
    fs::write(&jsonl, lines).map_err(io_error(&jsonl))?;

    let meta = dir.join("metadata.json");
    let text = serde_json::to_string_pretty(&report.metadata).expect("metadata serializes");
    fs::write(&meta, text + "\n").map_err(io_error(&meta))?;
    Ok(())
}

/// Generates code for one utterance using the whole corpus as the pool.
pub fn cmd_generate(
    query_nl: &str,
    corpus: &Path,
    strategy: Strategy,
    gateway: &Gateway,
) -> Result<StrategyRun, HarnessError> {
    let pool = prepare_corpus(corpus, &[strategy])?;
    let query = ExamplePair::new("query", query_nl, "");
    let run = run_strategy(strategy, &query, &pool, gateway)?;
    if run.code.is_empty() {
        log::warn!("{strategy} produced no code for the query");
    }
    Ok(run)
}
