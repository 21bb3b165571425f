//! Triple extraction: provider output parsing, an LLM client with cache,
//! a rule-based offline fallback, and the synthetic dataset generator.

mod llm;
mod parse;
mod rules;
mod synth;

pub use llm::{render_prompt, ExtractionCache, ExtractionRecord, HttpProvider, LlmExtractor, Provider, PROMPT_VERSION};
pub use parse::{parse_triples, Dropped, Parsed};
pub use rules::{extract_rules, is_pattern_word, COPULAS, VERBS};
pub use synth::{negate, render, synth_dataset, SynthConfig, ANTONYMS};

use crate::data::{RawSample, Sample};
use crate::error::Result;
use crate::kg::Triple;

pub enum Extractor {
    Rules,
    Llm(LlmExtractor),
}

impl Extractor {
    pub fn extract(&self, text: &str) -> Result<Vec<Triple>> {
        match self {
            Extractor::Rules => Ok(extract_rules(text)),
            Extractor::Llm(x) => x.extract(text),
        }
    }

    /// Fills in whichever kg fields are missing; existing ones are kept.
    pub fn complete(&self, raw: RawSample) -> Result<Sample> {
        let claim_kg = match raw.claim_kg {
            Some(kg) => kg,
            None => self.extract(&raw.claim)?,
        };
        let doc_kg = match raw.doc_kg {
            Some(kg) => kg,
            None => self.extract(&raw.doc)?,
        };
        let s = Sample {
            claim: raw.claim,
            doc: raw.doc,
            claim_kg,
            doc_kg,
            label: raw.label,
        };
        s.validate()?;
        Ok(s)
    }
}
