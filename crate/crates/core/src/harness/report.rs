use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use super::{EvalReport, EvalRow, HarnessError, StrategySummary};
use crate::metrics::{aggregate, PairScore};
use crate::pipeline::StrategyKind;
use crate::retrieval::DnrConfig;

pub const CSV_COLUMNS: [&str; 7] = [
    "query_id", "strategy", "em", "bleu", "leven", "calls", "error",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportStyle {
    /// One row per strategy.
    Main,
    /// FewShot baseline against Sim and PKE, with relative deltas.
    Ordering,
    /// FewShot, the four D&R configurations and PKE.
    Dnr,
}

impl FromStr for ReportStyle {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "main" => Ok(Self::Main),
            "ordering" => Ok(Self::Ordering),
            "dnr" => Ok(Self::Dnr),
            other => Err(format!(
                "unknown report style {other:?} (expected main, ordering or dnr)"
            )),
        }
    }
}

/// Relative change of `value` over `base`, e.g. `+11.3%`.
pub fn format_delta(value: f64, base: f64) -> String {
    if base == 0.0 {
        return "n/a".to_string();
    }
    format!("{:+.1}%", (value / base - 1.0) * 100.0)
}

pub fn write_csv(rows: &[EvalRow], path: &Path) -> Result<(), HarnessError> {
    let mut writer = csv::Writer::from_path(path)?;
    writer.write_record(CSV_COLUMNS)?;
    for row in rows {
        writer.write_record([
            row.query_id.clone(),
            row.strategy.clone(),
            row.score.em.to_string(),
            format!("{:.6}", row.score.bleu),
            format!("{:.6}", row.score.leven),
            row.calls.to_string(),
            row.error.clone().unwrap_or_default(),
        ])?;
    }
    writer.flush().map_err(|e| HarnessError::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(())
}

pub fn read_csv(path: &Path) -> Result<Vec<EvalRow>, HarnessError> {
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    if headers.iter().ne(CSV_COLUMNS) {
        return Err(HarnessError::Config(format!(
            "{}: expected columns {}",
            path.display(),
            CSV_COLUMNS.join(",")
        )));
    }
    let bad = |line: usize, what: &str| {
        HarnessError::Config(format!("{}:{line}: bad {what}", path.display()))
    };
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let line = i + 2;
        let field = |n: usize| record.get(n).unwrap_or("");
        let error = field(6);
        rows.push(EvalRow {
            query_id: field(0).to_string(),
            strategy: field(1).to_string(),
            code: String::new(),
            score: PairScore {
                em: field(2).parse().map_err(|_| bad(line, "em"))?,
                bleu: field(3).parse().map_err(|_| bad(line, "bleu"))?,
                leven: field(4).parse().map_err(|_| bad(line, "leven"))?,
            },
            calls: field(5).parse().map_err(|_| bad(line, "calls"))?,
            error: (!error.is_empty()).then(|| error.to_string()),
        });
    }
    Ok(rows)
}

/// Per-strategy means in first-appearance order.
pub fn summarize(rows: &[EvalRow]) -> Vec<StrategySummary> {
    let mut names: Vec<&str> = Vec::new();
    for row in rows {
        if !names.contains(&row.strategy.as_str()) {
            names.push(&row.strategy);
        }
    }
    names
        .into_iter()
        .filter_map(|name| {
            let group: Vec<&EvalRow> = rows.iter().filter(|r| r.strategy == name).collect();
            let scores: Vec<PairScore> = group.iter().map(|r| r.score).collect();
            Some(StrategySummary {
                strategy: name.to_string(),
                score: aggregate(&scores).ok()?,
                failures: group.iter().filter(|r| r.error.is_some()).count(),
            })
        })
        .collect()
}

fn lookup(summaries: &[StrategySummary], kind: StrategyKind) -> Option<&StrategySummary> {
    let name = kind.to_string();
    summaries.iter().find(|s| s.strategy == name)
}

fn label(kind: StrategyKind) -> &'static str {
    match kind {
        StrategyKind::ZeroShot => "Zero-shot",
        StrategyKind::FewShot => "Few-shot",
        StrategyKind::Pke => "PKE",
        StrategyKind::SimPke => "Sim",
        StrategyKind::Dnr(DnrConfig::Emh) => "D&R EMH",
        StrategyKind::Dnr(DnrConfig::Eee) => "D&R EEE",
        StrategyKind::Dnr(DnrConfig::Mmm) => "D&R MMM",
        StrategyKind::Dnr(DnrConfig::Hhh) => "D&R HHH",
    }
}

fn display_label(name: &str) -> String {
    name.parse::<StrategyKind>()
        .map(|k| label(k).to_string())
        .unwrap_or_else(|_| name.to_string())
}

fn require(summaries: &[StrategySummary], kinds: &[StrategyKind]) -> Result<(), HarnessError> {
    let missing: Vec<String> = kinds
        .iter()
        .filter(|&&k| lookup(summaries, k).is_none())
        .map(|k| k.to_string())
        .collect();
    if missing.is_empty() {
        Ok(())
    } else {
        Err(HarnessError::MissingStrategies(missing))
    }
}

const RULE_WIDTH: usize = 52;

fn table_head(out: &mut String, caption: &str, first: &str) {
    let _ = writeln!(out, "{caption}");
    let _ = writeln!(out, "{}", "-".repeat(RULE_WIDTH));
    let _ = writeln!(
        out,
        "{first:<14}{:>10}{:>10}{:>10}{:>8}",
        "EM", "BLEU", "Leven", "n"
    );
    let _ = writeln!(out, "{}", "-".repeat(RULE_WIDTH));
}

fn plain_row(out: &mut String, name: &str, s: &StrategySummary) {
    let _ = writeln!(
        out,
        "{name:<14}{:>10.3}{:>10.3}{:>10.3}{:>8}",
        s.score.em, s.score.bleu, s.score.leven, s.score.n
    );
}

/// Renders aggregates as a fixed-width table. `header` is printed first.
pub fn render_summaries(
    summaries: &[StrategySummary],
    header: &str,
    style: ReportStyle,
) -> Result<String, HarnessError> {
    if summaries.is_empty() {
        return Err(HarnessError::Config("report has no rows".into()));
    }
    let mut out = String::new();
    let _ = writeln!(out, "{header}");
    match style {
        ReportStyle::Main => {
            table_head(&mut out, "Comparison of prompting strategies", "Strategy");
            for s in summaries {
                plain_row(&mut out, &display_label(&s.strategy), s);
            }
        }
        ReportStyle::Ordering => {
            require(summaries, &[StrategyKind::FewShot, StrategyKind::Pke])?;
            let base = lookup(summaries, StrategyKind::FewShot).expect("checked");
            let _ = writeln!(out, "Extraction ordering basis (deltas over Few-shot)");
            let _ = writeln!(out, "{}", "-".repeat(66));
            let _ = writeln!(
                out,
                "{:<10}{:>18}{:>18}{:>18}",
                "Strategy", "EM", "BLEU", "Leven"
            );
            let _ = writeln!(out, "{}", "-".repeat(66));
            let _ = writeln!(
                out,
                "{:<10}{:>18.3}{:>18.3}{:>18.3}",
                label(StrategyKind::FewShot),
                base.score.em,
                base.score.bleu,
                base.score.leven
            );
            for kind in [StrategyKind::SimPke, StrategyKind::Pke] {
                let Some(s) = lookup(summaries, kind) else {
                    continue;
                };
                let cell = |v: f64, b: f64| format!("{v:.3} ({})", format_delta(v, b));
                let _ = writeln!(
                    out,
                    "{:<10}{:>18}{:>18}{:>18}",
                    label(kind),
                    cell(s.score.em, base.score.em),
                    cell(s.score.bleu, base.score.bleu),
                    cell(s.score.leven, base.score.leven)
                );
            }
        }
        ReportStyle::Dnr => {
            let kinds = [
                StrategyKind::FewShot,
                StrategyKind::Dnr(DnrConfig::Emh),
                StrategyKind::Dnr(DnrConfig::Eee),
                StrategyKind::Dnr(DnrConfig::Mmm),
                StrategyKind::Dnr(DnrConfig::Hhh),
                StrategyKind::Pke,
            ];
            require(summaries, &kinds)?;
            table_head(&mut out, "Comparison with divide-and-retrieve", "Strategy");
            for kind in kinds {
                plain_row(
                    &mut out,
                    label(kind),
                    lookup(summaries, kind).expect("checked"),
                );
            }
        }
    }
    let failures: usize = summaries.iter().map(|s| s.failures).sum();
    let _ = writeln!(
        out,
        "{}",
        "-".repeat(if style == ReportStyle::Ordering {
            66
        } else {
            RULE_WIDTH
        })
    );
    if failures > 0 {
        let _ = writeln!(out, "failed rows: {failures} (scored as empty output)");
    }
    Ok(out)
}

pub fn report_header(queries: usize) -> String {
    format!("mini-ALPG, leave-one-out over {queries} queries")
}

pub fn render_report(report: &EvalReport, style: ReportStyle) -> Result<String, HarnessError> {
    render_summaries(
        &report.aggregates,
        &report_header(report.query_count()),
        style,
    )
}
