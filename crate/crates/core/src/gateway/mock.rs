use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use regex::Regex;

use super::{Backend, ChatRequest, ChatResponse, GatewayError};

pub type Responder = Arc<dyn Fn(&ChatRequest) -> Result<String, GatewayError> + Send + Sync>;

#[derive(Debug, Clone)]
pub enum Pattern {
    Contains(String),
    Regex(Regex),
    Any,
}

impl Pattern {
    pub fn matches(&self, text: &str) -> bool {
        match self {
            Pattern::Contains(needle) => text.contains(needle.as_str()),
            Pattern::Regex(re) => re.is_match(text),
            Pattern::Any => true,
        }
    }
}

#[derive(Clone)]
pub struct Rule {
    pub pattern: Pattern,
    pub responder: Responder,
}

impl Rule {
    pub fn new(
        pattern: Pattern,
        responder: impl Fn(&ChatRequest) -> Result<String, GatewayError> + Send + Sync + 'static,
    ) -> Self {
        Self {
            pattern,
            responder: Arc::new(responder),
        }
    }

    pub fn contains(
        needle: &str,
        responder: impl Fn(&ChatRequest) -> Result<String, GatewayError> + Send + Sync + 'static,
    ) -> Self {
        Self::new(Pattern::Contains(needle.to_string()), responder)
    }

    pub fn any(
        responder: impl Fn(&ChatRequest) -> Result<String, GatewayError> + Send + Sync + 'static,
    ) -> Self {
        Self::new(Pattern::Any, responder)
    }
}

/// Deterministic backend answering from an ordered rule list; the first rule
/// whose pattern matches the user text wins. Every request is logged.
pub struct ScriptedMock {
    name: String,
    rules: Vec<Rule>,
    calls: AtomicUsize,
    log: Mutex<Vec<ChatRequest>>,
}

impl ScriptedMock {
    /// Fails unless the rule list is non-empty and ends with a catch-all.
    pub fn new(rules: Vec<Rule>) -> Result<Self, GatewayError> {
        match rules.last() {
            Some(Rule {
                pattern: Pattern::Any,
                ..
            }) => Ok(Self {
                name: "mock".to_string(),
                rules,
                calls: AtomicUsize::new(0),
                log: Mutex::new(Vec::new()),
            }),
            _ => Err(GatewayError::Scripted(
                "rule list must end with a catch-all pattern".into(),
            )),
        }
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn fixed(text: &str) -> Self {
        Self::new(vec![Rule::any(responders::fixed(text))]).expect("catch-all present")
    }

    /// Scores difficulty as 10 points per instruction, answers knowledge
    /// requests with a short summary of the example, and echoes the last
    /// example code block for generation requests.
    pub fn echo() -> Self {
        Self::new(vec![
            Rule::contains(
                crate::difficulty::DIFFICULTY_SENTINEL,
                responders::instruction_count_scorer(10.0),
            ),
            Rule::contains(
                crate::pipeline::KNOWLEDGE_SENTINEL,
                responders::knowledge_summary(),
            ),
            Rule::any(responders::echo_last_code_block()),
        ])
        .expect("catch-all present")
        .with_name("echo-mock")
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn requests(&self) -> Vec<ChatRequest> {
        self.log.lock().expect("log lock").clone()
    }
}

impl Backend for ScriptedMock {
    fn name(&self) -> &str {
        &self.name
    }

    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.log.lock().expect("log lock").push(request.clone());
        let rule = self
            .rules
            .iter()
            .find(|r| r.pattern.matches(&request.user))
            .expect("last rule is a catch-all");
        let text = (rule.responder)(request)?;
        Ok(ChatResponse {
            text,
            backend: self.name.clone(),
            cached: false,
        })
    }
}

/// Ready-made responders for [`ScriptedMock`] rules.
pub mod responders {
    use super::*;
    use crate::minialpg;

    pub fn fixed(
        text: &str,
    ) -> impl Fn(&ChatRequest) -> Result<String, GatewayError> + Send + Sync {
        let text = text.to_string();
        move |_| Ok(text.clone())
    }

    /// Replies with `texts` in order, repeating the last one once exhausted.
    pub fn sequence(
        texts: Vec<String>,
    ) -> impl Fn(&ChatRequest) -> Result<String, GatewayError> + Send + Sync {
        assert!(!texts.is_empty(), "sequence needs at least one reply");
        let next = AtomicUsize::new(0);
        move |_| {
            let i = next.fetch_add(1, Ordering::SeqCst).min(texts.len() - 1);
            Ok(texts[i].clone())
        }
    }

    /// The code between `ALPG Code:` and the rating instructions of a
    /// difficulty prompt.
    pub fn difficulty_code_section(prompt: &str) -> Option<&str> {
        let start = prompt.find("ALPG Code:")? + "ALPG Code:".len();
        let rest = &prompt[start..];
        let end = rest.find("\nRate the difficulty").unwrap_or(rest.len());
        Some(rest[..end].trim())
    }

    /// Counts mini-ALPG instructions (non-blank, non-comment lines).
    pub fn count_instructions(code: &str) -> usize {
        match minialpg::parse(code) {
            Ok(program) => program.len(),
            Err(_) => code
                .lines()
                .map(str::trim)
                .filter(|l| !l.is_empty() && !l.starts_with(';'))
                .count(),
        }
    }

    /// Replies `Difficulty Score: <points * instructions>`.
    pub fn instruction_count_scorer(
        points_per_instruction: f64,
    ) -> impl Fn(&ChatRequest) -> Result<String, GatewayError> + Send + Sync {
        move |req| {
            let code = difficulty_code_section(&req.user)
                .ok_or_else(|| GatewayError::Scripted("no ALPG Code section in prompt".into()))?;
            let score = points_per_instruction * count_instructions(code) as f64;
            Ok(format!("Difficulty Score: {score}"))
        }
    }

    /// Non-empty blocks following `### Corresponding Code` headers. A block
    /// ends at a blank line or at the next `###` header.
    pub fn code_blocks(prompt: &str) -> Vec<String> {
        let mut blocks = Vec::new();
        let mut current: Option<Vec<&str>> = None;
        for line in prompt.lines() {
            let trimmed = line.trim_start();
            if trimmed.starts_with("### Corresponding Code") {
                if let Some(lines) = current.take() {
                    blocks.push(lines.join("\n"));
                }
                current = Some(Vec::new());
                continue;
            }
            if let Some(lines) = current.as_mut() {
                if trimmed.starts_with("###") || (line.trim().is_empty() && !lines.is_empty()) {
                    blocks.push(lines.join("\n"));
                    current = None;
                } else if !line.trim().is_empty() {
                    lines.push(line);
                }
            }
        }
        if let Some(lines) = current {
            blocks.push(lines.join("\n"));
        }
        blocks.retain(|b| !b.trim().is_empty());
        blocks
    }

    /// Echoes the last non-empty code block in the prompt, or nothing.
    pub fn echo_last_code_block(
    ) -> impl Fn(&ChatRequest) -> Result<String, GatewayError> + Send + Sync {
        |req| Ok(code_blocks(&req.user).pop().unwrap_or_default())
    }

    /// A one-line summary naming the example's description.
    pub fn knowledge_summary() -> impl Fn(&ChatRequest) -> Result<String, GatewayError> + Send + Sync
    {
        |req| {
            let description = req
                .user
                .split_once("### Code description:")
                .and_then(|(_, rest)| rest.lines().map(str::trim).find(|l| !l.is_empty()))
                .unwrap_or("");
            Ok(format!("Knowledge about: {description}"))
        }
    }
}
