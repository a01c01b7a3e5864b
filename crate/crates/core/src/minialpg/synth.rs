//! Seeded generator for synthetic mini-ALPG utterance/code corpora.
//!
//! Every code shape is emitted under several paraphrased utterances, so a
//! corpus is made of small clusters of examples that share identical code.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::corpus::{CorpusManifest, ExamplePair};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SynthError {
    #[error("count must be positive")]
    ZeroCount,
    #[error("invalid complexity range ({0}, {1}): need 1 <= min <= max")]
    BadRange(usize, usize),
    #[error("variants_per_shape must be between 1 and {max}", max = TEMPLATES.len())]
    BadVariants,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SynthSpec {
    pub seed: u64,
    pub count: usize,
    /// Inclusive (min, max) instruction count per program.
    pub complexity_range: (usize, usize),
    /// Paraphrased utterances emitted per code shape.
    pub variants_per_shape: usize,
}

impl SynthSpec {
    pub fn new(seed: u64, count: usize, complexity_range: (usize, usize)) -> Self {
        Self {
            seed,
            count,
            complexity_range,
            variants_per_shape: TEMPLATES.len(),
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let (min, max) = self.complexity_range;
        if self.count == 0 {
            return Err(SynthError::ZeroCount);
        }
        if min < 1 || max < min {
            return Err(SynthError::BadRange(min, max));
        }
        if self.variants_per_shape == 0 || self.variants_per_shape > TEMPLATES.len() {
            return Err(SynthError::BadVariants);
        }
        Ok(())
    }
}

const TEMPLATES: [(&str, &str); 3] = [
    ("Write an ALPG pattern program code that performs the ", "."),
    ("Generate ALPG code for the sequence ", "."),
    ("Create a pattern program that executes ", "."),
];

#[derive(Debug, Clone, Copy)]
enum Phase {
    Command(u8),
    Address(u8),
    DataIn,
    DataOut,
    Wait,
    SetTiming(u8),
}

impl Phase {
    fn code(self, chip: u8) -> String {
        match self {
            Phase::Command(byte) => format!("JSR G_LF001_CMDI CE{chip} TP<#{byte:02X} TS2"),
            Phase::Address(cycles) => format!("JSR G_LF001_ADD{cycles}_D1_D2 CE{chip} TS1"),
            Phase::DataIn => format!("JSR G_LF001_DIN CE{chip} WE{chip} TS1"),
            Phase::DataOut => format!("JSR G_LF001_DOUT CE{chip} RE{chip} TS1"),
            Phase::Wait => "NOP".to_string(),
            Phase::SetTiming(ts) => format!("STPS TS{ts}"),
        }
    }

    fn describe(self) -> String {
        match self {
            Phase::Command(byte) => format!("{byte:02X}h Command"),
            Phase::Address(cycles) => format!("Address {cycles}cycle"),
            Phase::DataIn => "Data in".to_string(),
            Phase::DataOut => "Data out".to_string(),
            Phase::Wait => "Wait".to_string(),
            Phase::SetTiming(ts) => format!("Timing set TS{ts}"),
        }
    }

    fn random(rng: &mut ChaCha8Rng) -> Phase {
        const WEIGHTED: [u8; 12] = [0, 0, 0, 1, 1, 1, 2, 2, 3, 3, 4, 5];
        match *WEIGHTED.choose(rng).expect("non-empty") {
            0 => Phase::Command(rng.gen()),
            1 => Phase::Address(rng.gen_range(1..=5)),
            2 => Phase::DataIn,
            3 => Phase::DataOut,
            4 => Phase::Wait,
            _ => Phase::SetTiming(rng.gen_range(1..=2)),
        }
    }
}

struct Shape {
    code: String,
    phrase: String,
}

fn random_shape(rng: &mut ChaCha8Rng, instructions: usize) -> Shape {
    let chip: u8 = rng.gen_range(0..=3);
    let module = if instructions >= 3 && rng.gen_bool(0.3) {
        Some(format!("PAT_{:03X}", rng.gen_range(0..0x1000u32)))
    } else {
        None
    };
    let body_len = instructions - if module.is_some() { 2 } else { 0 };
    let phases: Vec<Phase> = (0..body_len).map(|_| Phase::random(rng)).collect();

    let mut lines = Vec::with_capacity(instructions);
    if let Some(name) = &module {
        lines.push(format!("MODULE {name}"));
    }
    lines.extend(phases.iter().map(|p| p.code(chip)));
    if module.is_some() {
        lines.push("RET".to_string());
    }

    let mut phrase = phases
        .iter()
        .map(|p| p.describe())
        .collect::<Vec<_>>()
        .join(" - ");
    if chip != 0 {
        phrase.push_str(&format!(" on chip CE{chip}"));
    }
    if let Some(name) = &module {
        phrase.push_str(&format!(" inside module {name}"));
    }
    Shape {
        code: lines.join("\n"),
        phrase,
    }
}

/// Generates `spec.count` utterance/code pairs, deterministic in `spec`.
pub fn synthesize_corpus(spec: &SynthSpec) -> Result<CorpusManifest, SynthError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (min, max) = spec.complexity_range;
    let mut pairs = Vec::with_capacity(spec.count);
    let mut shape_idx = 0usize;
    while pairs.len() < spec.count {
        let instructions = rng.gen_range(min..=max);
        let shape = random_shape(&mut rng, instructions);
        for (variant, (prefix, suffix)) in
            TEMPLATES.iter().take(spec.variants_per_shape).enumerate()
        {
            if pairs.len() == spec.count {
                break;
            }
            pairs.push(ExamplePair::new(
                format!("syn-{shape_idx:04}-{variant}"),
                format!("{prefix}{}{suffix}", shape.phrase),
                shape.code.clone(),
            ));
        }
        shape_idx += 1;
    }
    Ok(CorpusManifest::from_pairs(pairs).expect("generated ids are unique"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::minialpg::{parse, render};

    #[test]
    fn same_seed_is_identical() {
        let spec = SynthSpec::new(7, 3, (1, 5));
        assert_eq!(
            synthesize_corpus(&spec).unwrap(),
            synthesize_corpus(&spec).unwrap()
        );
    }

    #[test]
    fn different_seeds_differ() {
        let a = synthesize_corpus(&SynthSpec::new(7, 3, (1, 5))).unwrap();
        let b = synthesize_corpus(&SynthSpec::new(8, 3, (1, 5))).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn fifty_programs_parse_within_range() {
        let m = synthesize_corpus(&SynthSpec::new(7, 50, (1, 9))).unwrap();
        assert_eq!(m.len(), 50);
        let lengths: Vec<usize> = m
            .examples
            .iter()
            .map(|e| parse(&e.pair.code).expect("generated code parses").len())
            .collect();
        assert!(lengths.iter().all(|n| (1..=9).contains(n)));
        assert!(*lengths.iter().min().unwrap() >= 1);
        assert!(*lengths.iter().max().unwrap() <= 9);
    }

    #[test]
    fn generated_code_is_already_rendered() {
        let m = synthesize_corpus(&SynthSpec::new(3, 60, (1, 10))).unwrap();
        for e in &m.examples {
            assert_eq!(render(&parse(&e.pair.code).unwrap()), e.pair.code);
        }
    }

    #[test]
    fn utterances_follow_the_command_address_style() {
        let m = synthesize_corpus(&SynthSpec::new(11, 30, (2, 6))).unwrap();
        assert!(m.examples[0]
            .pair
            .nl
            .starts_with("Write an ALPG pattern program code that performs the "));
        // siblings of one shape share code
        assert_eq!(m.examples[0].pair.code, m.examples[1].pair.code);
        assert_eq!(m.examples[0].pair.code, m.examples[2].pair.code);
        assert_ne!(m.examples[0].pair.nl, m.examples[1].pair.nl);
    }

    #[test]
    fn invalid_specs_are_rejected() {
        assert_eq!(
            synthesize_corpus(&SynthSpec::new(1, 0, (1, 2))).unwrap_err(),
            SynthError::ZeroCount
        );
        assert_eq!(
            synthesize_corpus(&SynthSpec::new(1, 1, (0, 2))).unwrap_err(),
            SynthError::BadRange(0, 2)
        );
        assert_eq!(
            synthesize_corpus(&SynthSpec::new(1, 1, (3, 2))).unwrap_err(),
            SynthError::BadRange(3, 2)
        );
        let mut spec = SynthSpec::new(1, 1, (1, 2));
        spec.variants_per_shape = 4;
        assert_eq!(
            synthesize_corpus(&spec).unwrap_err(),
            SynthError::BadVariants
        );
    }
}
