//! Knowledge chaining, final prompt assembly and strategy execution.
//!
//! For PKE-family strategies the selected examples are walked in order; each
//! step asks the model for domain knowledge about one example, carrying all
//! earlier knowledge forward. The last step's text is the enhanced background
//! knowledge placed at the top of the generation prompt.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{CorpusManifest, ExamplePair, ScoredExample};
use crate::gateway::{Backend, Counting, Gateway, GatewayError, GENERATION_MAX_TOKENS};
use crate::minialpg::starts_with_opcode;
use crate::retrieval::{
    build_index, order_by_similarity, order_for_pke, select_dnr, BandedIndex, DnrConfig,
    RetrievalError, DEFAULT_K,
};
use crate::template::fill;

pub const DEFAULT_LANG: &str = "ALPG";
pub const GENERATION_TEMPERATURE: f64 = 0.0;
pub const KNOWLEDGE_TEMPERATURE: f64 = 0.0;

/// Text identifying a knowledge-step prompt.
pub const KNOWLEDGE_SENTINEL: &str = "Please write necessary domain knowledge";
pub const PREVIOUS_KNOWLEDGE_HEADER: &str = "### Previously accumulated knowledge:";
pub const ENHANCED_KNOWLEDGE_HEADER: &str =
    "Enhanced Background Knowledge (generated from progressive difficulty examples):";
pub const FEWSHOT_HEADER: &str = "Relevant Few-shot Examples:";
pub const DESCRIPTION_HEADER: &str = "### Code description";
pub const CODE_HEADER: &str = "### Corresponding Code";

const KNOWLEDGE_TEMPLATE: &str = "\
### Code description:
{code_description}

### Corresponding Code:
{code}

{previous_knowledge}Please write necessary domain knowledge to
help generate the corresponding ALPG code
based on the code description. The goal is to
help a language model better understand and
generate the corresponding ALPG code.";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("knowledge step {step} failed: {source}")]
    Chain {
        step: usize,
        #[source]
        source: GatewayError,
    },
    #[error("knowledge chain needs at least one example")]
    EmptyChain,
}

#[derive(Debug, Error)]
#[error("strategy {strategy} on query {query_id}: {source}")]
pub struct StrategyError {
    pub strategy: String,
    pub query_id: String,
    #[source]
    pub source: PipelineError,
}

/// Knowledge texts in step order; the last one is the enhanced knowledge.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KnowledgeChain {
    steps: Vec<String>,
}

impl KnowledgeChain {
    pub fn from_steps(steps: Vec<String>) -> Option<Self> {
        (!steps.is_empty()).then_some(Self { steps })
    }

    pub fn steps(&self) -> &[String] {
        &self.steps
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn b1(&self) -> &str {
        &self.steps[0]
    }

    /// Middle step; present only for chains of three or more.
    pub fn b2(&self) -> Option<&str> {
        (self.steps.len() >= 3).then(|| self.steps[1].as_str())
    }

    pub fn be(&self) -> &str {
        self.steps.last().expect("chain is non-empty")
    }
}

pub fn build_knowledge_prompt(example: &ScoredExample, previous_knowledge: Option<&str>) -> String {
    let previous = match previous_knowledge {
        Some(text) if !text.is_empty() => format!("{PREVIOUS_KNOWLEDGE_HEADER}\n{text}\n\n"),
        _ => String::new(),
    };
    fill(
        KNOWLEDGE_TEMPLATE,
        &[
            ("code_description", &example.pair.nl),
            ("code", &example.pair.code),
            ("previous_knowledge", &previous),
        ],
    )
}

/// One knowledge request per example, in the order given.
pub fn build_knowledge_chain(
    ordered: &[ScoredExample],
    gateway: &Gateway,
) -> Result<KnowledgeChain, PipelineError> {
    if ordered.is_empty() {
        return Err(PipelineError::EmptyChain);
    }
    let mut steps: Vec<String> = Vec::with_capacity(ordered.len());
    for (i, example) in ordered.iter().enumerate() {
        let previous = steps.join("\n\n");
        let prompt = build_knowledge_prompt(example, Some(&previous));
        let request = gateway.request(prompt, KNOWLEDGE_TEMPERATURE, GENERATION_MAX_TOKENS);
        let response = gateway
            .complete(&request)
            .map_err(|source| PipelineError::Chain {
                step: i + 1,
                source,
            })?;
        steps.push(response.text);
    }
    Ok(KnowledgeChain { steps })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PromptBundle {
    pub system: Option<String>,
    pub user: String,
    pub temperature: f64,
    pub max_tokens: u32,
}

fn render_example(nl: &str, code: &str) -> String {
    format!("{DESCRIPTION_HEADER}\n{nl}\n{CODE_HEADER}\n{code}")
}

/// Assembles the generation prompt: preamble, enhanced knowledge (when a
/// chain is given), few-shot examples (when any), then the query.
pub fn build_final_prompt(
    query_nl: &str,
    fewshot: &[ScoredExample],
    chain: Option<&KnowledgeChain>,
    lang: &str,
) -> PromptBundle {
    let mut user = fill(
        "You are an expert in {lang} programming.\n\n",
        &[("lang", lang)],
    );
    if let Some(chain) = chain {
        user.push_str(ENHANCED_KNOWLEDGE_HEADER);
        user.push('\n');
        user.push_str(chain.be());
        user.push_str("\n\n");
    }
    if !fewshot.is_empty() {
        let blocks: Vec<String> = fewshot
            .iter()
            .map(|e| render_example(&e.pair.nl, &e.pair.code))
            .collect();
        user.push_str(FEWSHOT_HEADER);
        user.push('\n');
        user.push_str(&blocks.join("\n\n"));
        user.push_str("\n\n");
    }
    let guidance = match (chain.is_some(), !fewshot.is_empty()) {
        (true, true) => "Using the above knowledge and examples as guidance, generate",
        (true, false) => "Using the above knowledge as guidance, generate",
        (false, true) => "Using the above examples as guidance, generate",
        (false, false) => "Generate",
    };
    user.push_str(&fill(
        "{guidance} accurate {lang} code for:\n\n",
        &[("guidance", guidance), ("lang", lang)],
    ));
    user.push_str(&format!(
        "{DESCRIPTION_HEADER}\n{query_nl}\n{CODE_HEADER}\n"
    ));
    PromptBundle {
        system: None,
        user,
        temperature: GENERATION_TEMPERATURE,
        max_tokens: GENERATION_MAX_TOKENS,
    }
}

/// Byte offsets of the knowledge header, the few-shot header and the query
/// description header in a generation prompt.
pub fn section_offsets(user: &str) -> (Option<usize>, Option<usize>, Option<usize>) {
    (
        user.find(ENHANCED_KNOWLEDGE_HEADER),
        user.find(FEWSHOT_HEADER),
        user.rfind(DESCRIPTION_HEADER),
    )
}

/// True when knowledge precedes examples, which precede the query.
pub fn sections_in_order(user: &str) -> bool {
    match section_offsets(user) {
        (Some(k), Some(f), Some(q)) => k < f && f < q,
        _ => false,
    }
}

/// Drops prose before the first opcode line and everything from the first
/// closing fence onward.
pub fn extract_code(completion: &str) -> String {
    let lines: Vec<&str> = completion
        .lines()
        .skip_while(|l| !starts_with_opcode(l))
        .take_while(|l| !l.trim_start().starts_with("```"))
        .collect();
    let end = lines
        .iter()
        .rposition(|l| !l.trim().is_empty())
        .map_or(0, |i| i + 1);
    lines[..end].join("\n")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum StrategyKind {
    ZeroShot,
    FewShot,
    Pke,
    SimPke,
    Dnr(DnrConfig),
}

impl StrategyKind {
    pub fn needs_difficulty(self) -> bool {
        matches!(self, StrategyKind::Pke | StrategyKind::Dnr(_))
    }

    pub fn uses_chain(self) -> bool {
        matches!(
            self,
            StrategyKind::Pke | StrategyKind::SimPke | StrategyKind::Dnr(_)
        )
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StrategyKind::ZeroShot => f.write_str("zero-shot"),
            StrategyKind::FewShot => f.write_str("few-shot"),
            StrategyKind::Pke => f.write_str("pke"),
            StrategyKind::SimPke => f.write_str("sim"),
            StrategyKind::Dnr(c) => write!(f, "dnr-{}", c.as_str().to_ascii_lowercase()),
        }
    }
}

impl FromStr for StrategyKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let lower = s.trim().to_ascii_lowercase();
        match lower.as_str() {
            "zero-shot" | "zeroshot" => Ok(StrategyKind::ZeroShot),
            "few-shot" | "fewshot" => Ok(StrategyKind::FewShot),
            "pke" => Ok(StrategyKind::Pke),
            "sim" | "sim-pke" | "simpke" => Ok(StrategyKind::SimPke),
            other => match other
                .strip_prefix("dnr-")
                .or_else(|| other.strip_prefix("dnr:"))
            {
                Some(config) => config.parse().map(StrategyKind::Dnr),
                None => config_alias(other).ok_or_else(|| format!("unknown strategy {s:?}")),
            },
        }
    }
}

impl TryFrom<String> for StrategyKind {
    type Error = String;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<StrategyKind> for String {
    fn from(kind: StrategyKind) -> String {
        kind.to_string()
    }
}

fn config_alias(s: &str) -> Option<StrategyKind> {
    s.parse::<DnrConfig>().ok().map(StrategyKind::Dnr)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Strategy {
    pub kind: StrategyKind,
    /// Examples to retrieve; ignored by zero-shot and EMH.
    pub k: usize,
}

impl Strategy {
    pub fn new(kind: StrategyKind, k: usize) -> Self {
        Self { kind, k }
    }

    pub fn with_default_k(kind: StrategyKind) -> Self {
        Self::new(kind, DEFAULT_K)
    }

    pub fn name(&self) -> String {
        self.kind.to_string()
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.kind.fmt(f)
    }
}

#[derive(Debug, Clone)]
pub struct StrategyRun {
    /// Completion with leading prose and trailing fences removed.
    pub code: String,
    pub raw: String,
    /// Gateway calls issued for this query.
    pub calls: usize,
    /// Ids of the few-shot examples, in prompt order.
    pub example_ids: Vec<String>,
    pub chain: Option<KnowledgeChain>,
    pub prompt: PromptBundle,
}

fn select_examples(
    strategy: Strategy,
    query: &ExamplePair,
    pool: &CorpusManifest,
) -> Result<Vec<ScoredExample>, PipelineError> {
    let k = strategy.k.max(1);
    let examples = match strategy.kind {
        StrategyKind::ZeroShot => Vec::new(),
        StrategyKind::FewShot | StrategyKind::SimPke => {
            let results = build_index(pool)?.retrieve_top_k(&query.nl, k);
            order_by_similarity(&results, pool)?
        }
        StrategyKind::Pke => {
            let results = build_index(pool)?.retrieve_top_k(&query.nl, k);
            order_for_pke(&results, pool)?
        }
        StrategyKind::Dnr(config) => select_dnr(&BandedIndex::build(pool)?, &query.nl, config, k)?,
    };
    Ok(examples)
}

/// Runs one strategy for one query against `pool`, which must not contain
/// the query itself.
pub fn run_strategy(
    strategy: Strategy,
    query: &ExamplePair,
    pool: &CorpusManifest,
    gateway: &Gateway,
) -> Result<StrategyRun, StrategyError> {
    let counter = Arc::new(Counting::new(gateway.backend().clone()));
    let counted = gateway.with_backend(counter.clone() as Arc<dyn Backend>);
    let tag = |source: PipelineError| StrategyError {
        strategy: strategy.name(),
        query_id: query.id.clone(),
        source,
    };

    let examples = select_examples(strategy, query, pool).map_err(tag)?;
    let chain = if strategy.kind.uses_chain() {
        Some(build_knowledge_chain(&examples, &counted).map_err(tag)?)
    } else {
        None
    };
    let prompt = build_final_prompt(&query.nl, &examples, chain.as_ref(), DEFAULT_LANG);
    let mut request = counted.request(prompt.user.clone(), prompt.temperature, prompt.max_tokens);
    request.system = prompt.system.clone();
    let response = counted
        .complete(&request)
        .map_err(|e| tag(PipelineError::Gateway(e)))?;

    Ok(StrategyRun {
        code: extract_code(&response.text),
        raw: response.text,
        calls: counter.calls(),
        example_ids: examples.iter().map(|e| e.id().to_string()).collect(),
        chain,
        prompt,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::motivating_pair;
    use crate::gateway::{responders, Rule, ScriptedMock};

    fn example(id: &str, nl: &str, code: &str, mean: f64) -> ScoredExample {
        ScoredExample::with_scores(ExamplePair::new(id, nl, code), vec![mean; 5])
    }

    #[test]
    fn first_knowledge_prompt_has_no_previous_header() {
        let p = build_knowledge_prompt(&example("a", "nl", "NOP", 1.0), None);
        assert!(!p.contains(PREVIOUS_KNOWLEDGE_HEADER));
        assert!(p.contains(KNOWLEDGE_SENTINEL));
        assert_eq!(
            p,
            build_knowledge_prompt(&example("a", "nl", "NOP", 1.0), Some(""))
        );
    }

    #[test]
    fn previous_knowledge_sits_between_code_and_instruction() {
        let p = build_knowledge_prompt(&example("a", "nl", "NOP", 1.0), Some("K1"));
        let code = p.find("NOP").unwrap();
        let k1 = p.find("K1").unwrap();
        let instruction = p.find(KNOWLEDGE_SENTINEL).unwrap();
        assert!(code < k1 && k1 < instruction);
        assert!(p.contains(PREVIOUS_KNOWLEDGE_HEADER));
    }

    #[test]
    fn knowledge_prompt_embeds_motivating_pair() {
        let e = ScoredExample::unscored(motivating_pair());
        let p = build_knowledge_prompt(&e, None);
        assert!(p.contains(&motivating_pair().nl));
        for line in motivating_pair().code.lines() {
            assert!(p.contains(line));
        }
    }

    fn gateway(mock: Arc<ScriptedMock>) -> Gateway {
        Gateway::new(mock, "gen")
    }

    #[test]
    fn scripted_chain_accumulates() {
        let replies = ["K1", "K2", "K3"].map(String::from).to_vec();
        let mock =
            Arc::new(ScriptedMock::new(vec![Rule::any(responders::sequence(replies))]).unwrap());
        let ordered = [
            example("a", "one", "NOP", 1.0),
            example("b", "two", "RET", 2.0),
            example("c", "three", "STPS TS1", 3.0),
        ];
        let chain = build_knowledge_chain(&ordered, &gateway(mock.clone())).unwrap();
        assert_eq!(
            (chain.b1(), chain.b2(), chain.be()),
            ("K1", Some("K2"), "K3")
        );
        let third = &mock.requests()[2].user;
        assert!(third.contains("K1") && third.contains("K2"));
        assert!(third.contains("three"));
        assert!(mock
            .requests()
            .iter()
            .all(|r| r.temperature == KNOWLEDGE_TEMPERATURE));
    }

    #[test]
    fn single_example_chain() {
        let mock = Arc::new(ScriptedMock::fixed("only"));
        let chain =
            build_knowledge_chain(&[example("a", "one", "NOP", 1.0)], &gateway(mock.clone()))
                .unwrap();
        assert_eq!(chain.b1(), chain.be());
        assert_eq!(chain.b2(), None);
        assert_eq!(mock.calls(), 1);
    }

    #[test]
    fn two_example_chain_has_no_b2() {
        let mock = Arc::new(ScriptedMock::fixed("k"));
        let ordered = [
            example("a", "one", "NOP", 1.0),
            example("b", "two", "RET", 2.0),
        ];
        let chain = build_knowledge_chain(&ordered, &gateway(mock)).unwrap();
        assert_eq!(chain.len(), 2);
        assert_eq!(chain.b2(), None);
    }

    #[test]
    fn previous_knowledge_grows_along_the_chain() {
        let mock = Arc::new(
            ScriptedMock::new(vec![Rule::any(|r: &crate::gateway::ChatRequest| {
                let previous = r
                    .user
                    .split_once(PREVIOUS_KNOWLEDGE_HEADER)
                    .map(|(_, rest)| rest.split(KNOWLEDGE_SENTINEL).next().unwrap_or("").len())
                    .unwrap_or(0);
                Ok(format!("previous={previous}"))
            })])
            .unwrap(),
        );
        let ordered = [
            example("a", "one", "NOP", 1.0),
            example("b", "two", "RET", 2.0),
            example("c", "three", "NOP", 3.0),
        ];
        let chain = build_knowledge_chain(&ordered, &gateway(mock)).unwrap();
        let lengths: Vec<usize> = chain
            .steps()
            .iter()
            .map(|s| s.trim_start_matches("previous=").parse().unwrap())
            .collect();
        assert!(lengths.windows(2).all(|w| w[0] < w[1]), "{lengths:?}");
    }

    #[test]
    fn chain_failure_names_step() {
        let mock = Arc::new(
            ScriptedMock::new(vec![
                Rule::contains("two", |_| Err(GatewayError::Transport("down".into()))),
                Rule::any(responders::fixed("k")),
            ])
            .unwrap(),
        );
        let ordered = [
            example("a", "one", "NOP", 1.0),
            example("b", "two", "RET", 2.0),
        ];
        let err = build_knowledge_chain(&ordered, &gateway(mock)).unwrap_err();
        assert!(matches!(err, PipelineError::Chain { step: 2, .. }));
        assert!(matches!(
            build_knowledge_chain(&[], &gateway(Arc::new(ScriptedMock::fixed("k")))),
            Err(PipelineError::EmptyChain)
        ));
    }

    #[test]
    fn final_prompt_orders_sections() {
        let chain = KnowledgeChain::from_steps(vec!["BK".into()]).unwrap();
        let ex = [example(
            "a",
            "example utterance",
            "JSR EXAMPLE_CODE CE0",
            1.0,
        )];
        let p = build_final_prompt("Q-UTTERANCE", &ex, Some(&chain), "ALPG");
        let u = &p.user;
        assert!(u.find("BK").unwrap() < u.find("EXAMPLE_CODE").unwrap());
        assert!(u.find("EXAMPLE_CODE").unwrap() < u.find("Q-UTTERANCE").unwrap());
        assert!(sections_in_order(u));
        assert!(u.starts_with("You are an expert in ALPG programming."));
        assert!(u.contains(
            "Using the above knowledge and examples as guidance, generate accurate ALPG code for:"
        ));
        assert!(u.ends_with("### Code description\nQ-UTTERANCE\n### Corresponding Code\n"));
        assert_eq!(p.temperature, 0.0);
    }

    #[test]
    fn zero_and_few_shot_prompts_omit_sections() {
        let zero = build_final_prompt("Q", &[], None, "ALPG");
        assert!(!zero.user.contains("Enhanced Background Knowledge"));
        assert!(!zero.user.contains(FEWSHOT_HEADER));
        let ex = [example("a", "nl", "NOP", 1.0)];
        let few = build_final_prompt("Q", &ex, None, "ALPG");
        assert!(!few.user.contains("Enhanced Background Knowledge"));
        assert!(few.user.contains(FEWSHOT_HEADER));
        assert!(few
            .user
            .contains("### Code description\nnl\n### Corresponding Code\nNOP"));
    }

    #[test]
    fn expert_preamble_uses_language() {
        let p = build_final_prompt("Q", &[], None, "Verilog");
        assert!(p.user.contains("expert in Verilog programming"));
    }

    #[test]
    fn code_extraction_strips_prose_and_fences() {
        let raw =
            "Sure! Here is the program:\n```alpg\nJSR G_A CE0 TS1\nSTPS TS1\n```\nHope this helps.";
        assert_eq!(extract_code(raw), "JSR G_A CE0 TS1\nSTPS TS1");
        assert_eq!(extract_code("no code at all"), "");
        assert_eq!(extract_code("NOP\n\n"), "NOP");
    }

    #[test]
    fn strategy_names_round_trip() {
        for kind in [
            StrategyKind::ZeroShot,
            StrategyKind::FewShot,
            StrategyKind::Pke,
            StrategyKind::SimPke,
            StrategyKind::Dnr(DnrConfig::Emh),
            StrategyKind::Dnr(DnrConfig::Hhh),
        ] {
            assert_eq!(kind.to_string().parse::<StrategyKind>().unwrap(), kind);
        }
        assert_eq!(
            "EEE".parse::<StrategyKind>().unwrap(),
            StrategyKind::Dnr(DnrConfig::Eee)
        );
        assert!("bogus".parse::<StrategyKind>().is_err());
    }

    fn pool() -> CorpusManifest {
        CorpusManifest::new(vec![
            example("p1", "erase block command", "JSR ERASE CE0 TS1", 30.0),
            example("p2", "read page command", "JSR READ CE0 TS1", 10.0),
            example("p3", "program page data in", "JSR PROG CE0 WE0 TS1", 20.0),
            example("p4", "reset the chip", "NOP", 5.0),
        ])
        .unwrap()
    }

    #[test]
    fn pke_issues_k_plus_one_calls() {
        let mock = Arc::new(ScriptedMock::echo());
        let query = ExamplePair::new("q", "read page data", "JSR READ CE0 TS1");
        let run = run_strategy(
            Strategy::new(StrategyKind::Pke, 3),
            &query,
            &pool(),
            &gateway(mock.clone()),
        )
        .unwrap();
        assert_eq!(run.calls, 4);
        assert_eq!(mock.calls(), 4);
        assert_eq!(run.chain.as_ref().unwrap().len(), 3);
        assert!(sections_in_order(&run.prompt.user));
    }

    #[test]
    fn few_shot_echo_returns_most_similar_code() {
        let mock = Arc::new(ScriptedMock::echo());
        let query = ExamplePair::new("q", "erase block", "x");
        let run = run_strategy(
            Strategy::new(StrategyKind::FewShot, 3),
            &query,
            &pool(),
            &gateway(mock.clone()),
        )
        .unwrap();
        assert_eq!(run.code, "JSR ERASE CE0 TS1");
        assert_eq!(run.calls, 1);
        assert_eq!(run.example_ids.last().unwrap(), "p1");
    }

    #[test]
    fn zero_shot_echo_is_empty() {
        let mock = Arc::new(ScriptedMock::echo());
        let query = ExamplePair::new("q", "erase block", "x");
        let run = run_strategy(
            Strategy::new(StrategyKind::ZeroShot, 3),
            &query,
            &pool(),
            &gateway(mock),
        )
        .unwrap();
        assert_eq!(run.code, "");
        assert_eq!(run.calls, 1);
        assert!(run.example_ids.is_empty());
    }

    #[test]
    fn pke_requires_scored_pool() {
        let unscored = CorpusManifest::from_pairs([ExamplePair::new("a", "erase", "NOP")]).unwrap();
        let query = ExamplePair::new("q", "erase", "NOP");
        let err = run_strategy(
            Strategy::new(StrategyKind::Pke, 3),
            &query,
            &unscored,
            &gateway(Arc::new(ScriptedMock::echo())),
        )
        .unwrap_err();
        assert_eq!(err.strategy, "pke");
        assert_eq!(err.query_id, "q");
        assert!(matches!(
            err.source,
            PipelineError::Retrieval(RetrievalError::Unscored(_))
        ));
    }
}
