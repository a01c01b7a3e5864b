//! mini-ALPG: a small stand-in dialect of the ALPG pattern language.
//!
//! One instruction per line:
//!
//! ```text
//! OPCODE [label] [pin ...] [TP<#HH] [TS1|TS2]    ; optional comment
//! ```
//!
//! | opcode   | label    | pins | pattern | timing   |
//! |----------|----------|------|---------|----------|
//! | `JSR`    | required | any  | opt.    | opt.     |
//! | `STPS`   | -        | -    | -       | required |
//! | `MODULE` | required | -    | -       | -        |
//! | `NOP`    | -        | -    | -       | -        |
//! | `RET`    | -        | -    | -       | -        |
//!
//! Pins are `CEn`, `WEn` or `REn`. `MODULE` may appear only as the first
//! instruction. Blank lines and `;` comments are ignored by the parser.

mod synth;

pub use synth::{synthesize_corpus, SynthError, SynthSpec};

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Opcode {
    Jsr,
    Stps,
    Nop,
    Module,
    Ret,
}

impl Opcode {
    pub fn as_str(self) -> &'static str {
        match self {
            Opcode::Jsr => "JSR",
            Opcode::Stps => "STPS",
            Opcode::Nop => "NOP",
            Opcode::Module => "MODULE",
            Opcode::Ret => "RET",
        }
    }
}

impl FromStr for Opcode {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "JSR" => Ok(Opcode::Jsr),
            "STPS" => Ok(Opcode::Stps),
            "NOP" => Ok(Opcode::Nop),
            "MODULE" => Ok(Opcode::Module),
            "RET" => Ok(Opcode::Ret),
            _ => Err(()),
        }
    }
}

impl fmt::Display for Opcode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TimingSet {
    Ts1,
    Ts2,
}

impl TimingSet {
    pub fn as_str(self) -> &'static str {
        match self {
            TimingSet::Ts1 => "TS1",
            TimingSet::Ts2 => "TS2",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AlpgInstruction {
    pub opcode: Opcode,
    pub label: Option<String>,
    pub pins: Vec<String>,
    /// Pattern byte of a `TP<#HH` literal.
    pub pattern: Option<u8>,
    pub timing: Option<TimingSet>,
}

impl AlpgInstruction {
    pub fn bare(opcode: Opcode) -> Self {
        Self {
            opcode,
            label: None,
            pins: Vec::new(),
            pattern: None,
            timing: None,
        }
    }

    pub fn render(&self) -> String {
        let mut parts: Vec<String> = vec![self.opcode.as_str().to_string()];
        parts.extend(self.label.clone());
        parts.extend(self.pins.iter().cloned());
        if let Some(byte) = self.pattern {
            parts.push(format!("TP<#{byte:02X}"));
        }
        if let Some(ts) = self.timing {
            parts.push(ts.as_str().to_string());
        }
        parts.join(" ")
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AlpgProgram {
    pub instructions: Vec<AlpgInstruction>,
}

/// Hidden ground-truth difficulty recorded for synthetic programs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct StructuralComplexity {
    pub instructions: usize,
    pub distinct_opcodes: usize,
}

impl AlpgProgram {
    pub fn len(&self) -> usize {
        self.instructions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instructions.is_empty()
    }

    pub fn complexity(&self) -> StructuralComplexity {
        let distinct: BTreeSet<Opcode> = self.instructions.iter().map(|i| i.opcode).collect();
        StructuralComplexity {
            instructions: self.instructions.len(),
            distinct_opcodes: distinct.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseErrorKind {
    #[error("unknown opcode {0:?}")]
    UnknownOpcode(String),
    #[error("{opcode} requires {operand}")]
    MissingOperand {
        opcode: Opcode,
        operand: &'static str,
    },
    #[error("malformed pattern literal {0:?} (expected TP<#HH)")]
    MalformedPattern(String),
    #[error("unknown timing set {0:?}")]
    UnknownTiming(String),
    #[error("unexpected operand {token:?} for {opcode}")]
    UnexpectedOperand { opcode: Opcode, token: String },
    #[error("duplicate pin {0:?}")]
    DuplicatePin(String),
    #[error("MODULE is only allowed as the first instruction")]
    MisplacedModule,
    #[error("program contains no instructions")]
    Empty,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}: {kind}")]
pub struct ParseError {
    pub line: usize,
    pub kind: ParseErrorKind,
}

/// Splits code into maximal runs of non-whitespace.
pub fn tokenize(code: &str) -> Vec<&str> {
    code.split_whitespace().collect()
}

enum Operand<'a> {
    Pin(&'a str),
    Pattern(u8),
    Timing(TimingSet),
    Label(&'a str),
}

fn is_pin(token: &str) -> bool {
    ["CE", "WE", "RE"].iter().any(|prefix| {
        token
            .strip_prefix(prefix)
            .is_some_and(|n| !n.is_empty() && n.bytes().all(|b| b.is_ascii_digit()))
    })
}

fn is_identifier(token: &str) -> bool {
    let mut chars = token.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

fn classify(opcode: Opcode, token: &str) -> Result<Operand<'_>, ParseErrorKind> {
    if let Some(hex) = token.strip_prefix("TP<#") {
        if hex.len() == 2 && hex.bytes().all(|b| b.is_ascii_hexdigit()) {
            return Ok(Operand::Pattern(
                u8::from_str_radix(hex, 16).expect("validated hex"),
            ));
        }
        return Err(ParseErrorKind::MalformedPattern(token.to_string()));
    }
    if token.starts_with("TP<") {
        return Err(ParseErrorKind::MalformedPattern(token.to_string()));
    }
    match token {
        "TS1" => return Ok(Operand::Timing(TimingSet::Ts1)),
        "TS2" => return Ok(Operand::Timing(TimingSet::Ts2)),
        _ => {}
    }
    if token
        .strip_prefix("TS")
        .is_some_and(|n| n.bytes().all(|b| b.is_ascii_digit()))
    {
        return Err(ParseErrorKind::UnknownTiming(token.to_string()));
    }
    if is_pin(token) {
        return Ok(Operand::Pin(token));
    }
    if is_identifier(token) && token.parse::<Opcode>().is_err() {
        return Ok(Operand::Label(token));
    }
    Err(ParseErrorKind::UnexpectedOperand {
        opcode,
        token: token.to_string(),
    })
}

/// Which operand slots an opcode accepts: label, pins, pattern, timing.
fn accepted_operands(opcode: Opcode) -> [bool; 4] {
    match opcode {
        Opcode::Jsr => [true, true, true, true],
        Opcode::Stps => [false, false, false, true],
        Opcode::Module => [true, false, false, false],
        Opcode::Nop | Opcode::Ret => [false; 4],
    }
}

fn parse_line(line: &str) -> Result<Option<AlpgInstruction>, ParseErrorKind> {
    let code = line.split(';').next().unwrap_or_default();
    let mut tokens = code.split_whitespace();
    let Some(head) = tokens.next() else {
        return Ok(None);
    };
    let opcode: Opcode = head
        .parse()
        .map_err(|_| ParseErrorKind::UnknownOpcode(head.to_string()))?;
    let accepted = accepted_operands(opcode);
    let mut inst = AlpgInstruction::bare(opcode);

    // Operands must appear in slot order: label, pins, pattern, timing.
    let mut stage = 0usize;
    for token in tokens {
        let operand = classify(opcode, token)?;
        let slot = match operand {
            Operand::Label(_) => 0,
            Operand::Pin(_) => 1,
            Operand::Pattern(_) => 2,
            Operand::Timing(_) => 3,
        };
        let repeated = slot == stage && slot != 1 && stage_filled(&inst, slot);
        if !accepted[slot] || slot < stage || repeated {
            return Err(ParseErrorKind::UnexpectedOperand {
                opcode,
                token: token.to_string(),
            });
        }
        stage = slot;
        match operand {
            Operand::Label(label) => inst.label = Some(label.to_string()),
            Operand::Pin(pin) => {
                if inst.pins.iter().any(|p| p == pin) {
                    return Err(ParseErrorKind::DuplicatePin(pin.to_string()));
                }
                inst.pins.push(pin.to_string());
            }
            Operand::Pattern(byte) => inst.pattern = Some(byte),
            Operand::Timing(ts) => inst.timing = Some(ts),
        }
    }

    let missing = |operand| Err(ParseErrorKind::MissingOperand { opcode, operand });
    match opcode {
        Opcode::Jsr if inst.label.is_none() => missing("a label"),
        Opcode::Module if inst.label.is_none() => missing("a module name"),
        Opcode::Stps if inst.timing.is_none() => missing("a timing set"),
        _ => Ok(Some(inst)),
    }
}

fn stage_filled(inst: &AlpgInstruction, slot: usize) -> bool {
    match slot {
        0 => inst.label.is_some(),
        2 => inst.pattern.is_some(),
        3 => inst.timing.is_some(),
        _ => false,
    }
}

pub fn parse(code: &str) -> Result<AlpgProgram, ParseError> {
    let mut instructions = Vec::new();
    let mut last_line = 1;
    for (idx, line) in code.lines().enumerate() {
        let line_no = idx + 1;
        last_line = line_no;
        let err = |kind| ParseError {
            line: line_no,
            kind,
        };
        if let Some(inst) = parse_line(line).map_err(err)? {
            if inst.opcode == Opcode::Module && !instructions.is_empty() {
                return Err(err(ParseErrorKind::MisplacedModule));
            }
            instructions.push(inst);
        }
    }
    if instructions.is_empty() {
        return Err(ParseError {
            line: last_line,
            kind: ParseErrorKind::Empty,
        });
    }
    Ok(AlpgProgram { instructions })
}

/// Renders one instruction per line with single-space separated operands.
pub fn render(program: &AlpgProgram) -> String {
    program
        .instructions
        .iter()
        .map(AlpgInstruction::render)
        .collect::<Vec<_>>()
        .join("\n")
}

/// Structural complexity of `code`, or `None` when it does not parse.
pub fn structural_complexity(code: &str) -> Option<StructuralComplexity> {
    parse(code).ok().map(|p| p.complexity())
}

/// True when the first token of `line` is a mini-ALPG opcode.
pub fn starts_with_opcode(line: &str) -> bool {
    line.split_whitespace()
        .next()
        .is_some_and(|t| t.parse::<Opcode>().is_ok())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::motivating_pair;

    #[test]
    fn tokenize_examples() {
        assert_eq!(tokenize("STPS  TS1"), ["STPS", "TS1"]);
        assert!(tokenize("").is_empty());
        let toks = tokenize("JSR G_LF001_CMDI CE0 TP<#85 TS2");
        assert_eq!(toks.len(), 5);
        assert_eq!(toks.last(), Some(&"TS2"));
    }

    #[test]
    fn parses_motivating_answer_code() {
        let program = parse(&motivating_pair().code).unwrap();
        assert_eq!(program.len(), 3);
        let first = &program.instructions[0];
        assert_eq!(first.opcode, Opcode::Jsr);
        assert_eq!(first.label.as_deref(), Some("G_LF001_CMDI"));
        assert_eq!(first.pins, ["CE0"]);
        assert_eq!(first.pattern, Some(0x85));
        assert_eq!(first.timing, Some(TimingSet::Ts2));
        assert_eq!(program.instructions[1].pattern, None);
        assert_eq!(program.instructions[2].opcode, Opcode::Stps);
    }

    #[test]
    fn renders_motivating_code_normalized() {
        let program = parse(&motivating_pair().code).unwrap();
        let text = render(&program);
        assert_eq!(
            text,
            "JSR G_LF001_CMDI CE0 TP<#85 TS2\nJSR G_LF001_ADD5_D1_D2 CE0 TS1\nSTPS TS1"
        );
        assert_eq!(parse(&text).unwrap(), program);
    }

    #[test]
    fn single_instruction_programs() {
        let p = parse("STPS TS1").unwrap();
        assert_eq!(p.len(), 1);
        assert_eq!(p.instructions[0].opcode, Opcode::Stps);
        assert_eq!(p.instructions[0].timing, Some(TimingSet::Ts1));
        assert_eq!(render(&p), "STPS TS1");
        assert_eq!(render(&parse("NOP").unwrap()), "NOP");
    }

    #[test]
    fn jsr_without_label_fails_on_line_one() {
        let err = parse("JSR").unwrap_err();
        assert_eq!(err.line, 1);
        assert!(matches!(err.kind, ParseErrorKind::MissingOperand { .. }));
    }

    #[test]
    fn error_kinds() {
        assert!(matches!(
            parse("NOP\nFOO X").unwrap_err(),
            ParseError {
                line: 2,
                kind: ParseErrorKind::UnknownOpcode(_)
            }
        ));
        assert!(matches!(
            parse("JSR L CE0 TP<#8 TS1").unwrap_err().kind,
            ParseErrorKind::MalformedPattern(_)
        ));
        assert!(matches!(
            parse("JSR L CE0 TP<#GG").unwrap_err().kind,
            ParseErrorKind::MalformedPattern(_)
        ));
        assert!(matches!(
            parse("STPS").unwrap_err().kind,
            ParseErrorKind::MissingOperand { .. }
        ));
        assert!(matches!(
            parse("STPS TS3").unwrap_err().kind,
            ParseErrorKind::UnknownTiming(_)
        ));
        assert!(matches!(
            parse("STPS L TS1").unwrap_err().kind,
            ParseErrorKind::UnexpectedOperand { .. }
        ));
        assert!(matches!(
            parse("JSR L CE0 CE0").unwrap_err().kind,
            ParseErrorKind::DuplicatePin(_)
        ));
        assert!(matches!(
            parse("JSR L TS1 CE0").unwrap_err().kind,
            ParseErrorKind::UnexpectedOperand { .. }
        ));
        assert!(matches!(
            parse("NOP\nMODULE M").unwrap_err(),
            ParseError {
                line: 2,
                kind: ParseErrorKind::MisplacedModule
            }
        ));
        assert!(matches!(
            parse("\n; only a comment\n").unwrap_err().kind,
            ParseErrorKind::Empty
        ));
    }

    #[test]
    fn comments_and_blank_lines_are_skipped() {
        let p = parse("MODULE PAT_1 ; header\n\n  NOP\nRET\n").unwrap();
        assert_eq!(p.len(), 3);
        assert_eq!(render(&p), "MODULE PAT_1\nNOP\nRET");
    }

    #[test]
    fn lowercase_hex_renders_uppercase() {
        let p = parse("JSR L CE1 TP<#a5").unwrap();
        assert_eq!(render(&p), "JSR L CE1 TP<#A5");
    }

    #[test]
    fn complexity_counts_instructions_and_opcodes() {
        let c = structural_complexity(&motivating_pair().code).unwrap();
        assert_eq!(c.instructions, 3);
        assert_eq!(c.distinct_opcodes, 2);
        assert!(structural_complexity("BOGUS").is_none());
    }

    #[test]
    fn opcode_line_detection() {
        assert!(starts_with_opcode("  JSR X"));
        assert!(!starts_with_opcode("Here is the code:"));
        assert!(!starts_with_opcode(""));
    }
}
