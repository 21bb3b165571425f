//! Seeded generator for a separable claim-verification task.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Label, Sample};
use crate::error::{Error, Result};
use crate::kg::Triple;

const SYLLABLES: [&str; 16] = [
    "ka", "lo", "mi", "ru", "te", "va", "zo", "ni", "be", "so", "da", "fe", "gu", "pa", "xi", "ho",
];

/// Single-token entity names of three syllables, so distinct entities never share a token.
fn entity_names() -> Vec<String> {
    let mut out = Vec::with_capacity(MAX_ENTITIES);
    for a in SYLLABLES {
        for b in SYLLABLES {
            for c in SYLLABLES {
                out.push(format!("{a}{b}{c}"));
            }
        }
    }
    out
}

const MAX_ENTITIES: usize = SYLLABLES.len() * SYLLABLES.len() * SYLLABLES.len();

/// Affirmative relations used in documents, each paired with the negated
/// form that only corrupted claims carry.
pub const ANTONYMS: [(&str, &str); 8] = [
    ("likes", "dislikes"),
    ("trusts", "distrusts"),
    ("helps", "hinders"),
    ("supports", "opposes"),
    ("admires", "despises"),
    ("joins", "leaves"),
    ("accepts", "rejects"),
    ("praises", "criticizes"),
];

/// Consecutive duplicate documents tolerated before the vocabulary counts as exhausted.
const MAX_REJECTIONS: usize = 10_000;

/// Vocabulary sizes and sample shapes. Entities are split into a document
/// pool and a reserved pool that only corrupted claims draw from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub num_entities: usize,
    pub num_reserved_entities: usize,
    pub num_relation_pairs: usize,
    pub min_doc_triples: usize,
    pub max_doc_triples: usize,
    pub max_claim_triples: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            num_entities: 48,
            num_reserved_entities: 16,
            num_relation_pairs: ANTONYMS.len(),
            min_doc_triples: 3,
            max_doc_triples: 8,
            max_claim_triples: 3,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_entities < 2 || self.num_reserved_entities == 0 {
            return Err(Error::validation("entities", "need at least 2 document and 1 reserved entity"));
        }
        if self.num_entities + self.num_reserved_entities > MAX_ENTITIES {
            return Err(Error::validation("entities", format!("at most {MAX_ENTITIES} names in total")));
        }
        if self.num_relation_pairs == 0 || self.num_relation_pairs > ANTONYMS.len() {
            return Err(Error::validation("num_relation_pairs", format!("must be in 1..={}", ANTONYMS.len())));
        }
        if self.min_doc_triples == 0 || self.min_doc_triples > self.max_doc_triples {
            return Err(Error::validation("doc triples", "need 1 <= min <= max"));
        }
        if self.num_entities * (self.num_entities - 1) < self.max_doc_triples {
            return Err(Error::validation("max_doc_triples", "more triples than distinct entity pairs"));
        }
        if self.max_claim_triples == 0 || self.max_claim_triples > self.min_doc_triples {
            return Err(Error::validation("max_claim_triples", "must be in 1..=min_doc_triples"));
        }
        Ok(())
    }
}

/// Canonical rendering of triples as one sentence each.
pub fn render(triples: &[Triple]) -> String {
    triples
        .iter()
        .map(|t| format!("{} {} {}.", t.source, t.relation, t.target))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Negated form of an affirmative relation.
pub fn negate(rel: &str) -> Option<&'static str> {
    ANTONYMS.iter().find(|(a, _)| *a == rel).map(|(_, b)| *b)
}

struct Generator {
    rng: ChaCha8Rng,
    entities: Vec<String>,
    reserved: Vec<String>,
    cfg: SynthConfig,
}

impl Generator {
    /// Doc triples with affirmative relations over distinct (source, target) pairs.
    fn doc(&mut self) -> Vec<Triple> {
        let n = self.rng.random_range(self.cfg.min_doc_triples..=self.cfg.max_doc_triples);
        let mut pool: Vec<usize> = (0..self.entities.len()).collect();
        pool.shuffle(&mut self.rng);
        pool.truncate((n + 1).min(self.entities.len()));
        let mut pairs = HashSet::new();
        let mut out = Vec::with_capacity(n);
        while out.len() < n {
            let s = pool[self.rng.random_range(0..pool.len())];
            let t = pool[self.rng.random_range(0..pool.len())];
            if s == t || !pairs.insert((s, t)) {
                continue;
            }
            let rel = ANTONYMS[self.rng.random_range(0..self.cfg.num_relation_pairs)].0;
            out.push(Triple::new(&self.entities[s], rel, &self.entities[t]).expect("non-empty"));
        }
        out
    }

    fn claim(&mut self, doc: &[Triple], label: Label) -> Vec<Triple> {
        let k = self.rng.random_range(1..=self.cfg.max_claim_triples.min(doc.len()));
        let mut idx: Vec<usize> = (0..doc.len()).collect();
        idx.shuffle(&mut self.rng);
        idx.truncate(k);
        idx.sort_unstable();
        let mut claim: Vec<Triple> = idx.iter().map(|&i| doc[i].clone()).collect();
        if label == Label::Unsupport {
            let c = self.rng.random_range(0..claim.len());
            let fresh = self.reserved[self.rng.random_range(0..self.reserved.len())].clone();
            let t = &mut claim[c];
            match self.rng.random_range(0..3) {
                0 => t.source = fresh,
                1 => t.relation = negate(&t.relation).expect("affirmative relation").to_string(),
                _ => t.target = fresh,
            }
        }
        claim
    }
}

/// `n` samples with exactly balanced labels (the extra one is support when
/// `n` is odd) and pairwise distinct documents.
pub fn synth_dataset(n: usize, seed: u64, cfg: &SynthConfig) -> Result<Vec<Sample>> {
    if n == 0 {
        return Err(Error::validation("n", "must be at least 1"));
    }
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut entities = entity_names();
    entities.shuffle(&mut rng);
    let reserved = entities.split_off(cfg.num_entities);
    let reserved = reserved[..cfg.num_reserved_entities].to_vec();
    let mut labels: Vec<Label> = (0..n)
        .map(|i| if i % 2 == 0 { Label::Support } else { Label::Unsupport })
        .collect();
    labels.shuffle(&mut rng);
    let mut g = Generator {
        rng,
        entities,
        reserved,
        cfg: *cfg,
    };
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(n);
    for label in labels {
        let mut rejected = 0;
        let doc = loop {
            let doc = g.doc();
            let mut key: Vec<_> = doc.iter().map(Triple::canonical).collect();
            key.sort();
            if seen.insert(key) {
                break doc;
            }
            rejected += 1;
            if rejected >= MAX_REJECTIONS {
                return Err(Error::validation(
                    "n",
                    format!("vocabulary capacity exhausted after {} distinct documents", out.len()),
                ));
            }
        };
        let claim = g.claim(&doc, label);
        out.push(Sample {
            claim: render(&claim),
            doc: render(&doc),
            claim_kg: claim,
            doc_kg: doc,
            label,
        });
    }
    Ok(out)
}
