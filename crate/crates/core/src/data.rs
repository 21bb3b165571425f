//! Labeled samples and their JSON Lines dataset format.

use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kg::Triple;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Support,
    Unsupport,
}

impl Label {
    /// Logit position of this label.
    pub fn index(self) -> usize {
        match self {
            Label::Support => 0,
            Label::Unsupport => 1,
        }
    }

    pub fn is_support(self) -> bool {
        self == Label::Support
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::Support => "support",
            Label::Unsupport => "unsupport",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub claim: String,
    pub doc: String,
    pub claim_kg: Vec<Triple>,
    pub doc_kg: Vec<Triple>,
    pub label: Label,
}

/// A dataset line whose knowledge-graph fields may still be missing.
#[derive(Debug, Clone, Deserialize)]
pub struct RawSample {
    pub claim: String,
    pub doc: String,
    pub claim_kg: Option<Vec<Triple>>,
    pub doc_kg: Option<Vec<Triple>>,
    pub label: Label,
}

impl RawSample {
    pub fn complete(self) -> Option<Sample> {
        Some(Sample {
            claim: self.claim,
            doc: self.doc,
            claim_kg: self.claim_kg?,
            doc_kg: self.doc_kg?,
            label: self.label,
        })
    }
}

impl Sample {
    pub fn validate(&self) -> Result<()> {
        if self.claim.trim().is_empty() {
            return Err(Error::validation("claim", "empty"));
        }
        if self.doc.trim().is_empty() {
            return Err(Error::validation("doc", "empty"));
        }
        Ok(())
    }
}

/// Reads a JSON Lines file of possibly incomplete samples; blank lines are skipped.
pub fn read_raw_jsonl(path: &Path) -> Result<Vec<RawSample>> {
    let file = std::fs::File::open(path)?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawSample = serde_json::from_str(&line)
            .map_err(|e| Error::validation(format!("{}:{}", path.display(), i + 1), e.to_string()))?;
        out.push(raw);
    }
    Ok(out)
}

/// Reads complete samples; any record missing a kg field is an error.
pub fn read_jsonl(path: &Path) -> Result<Vec<Sample>> {
    read_raw_jsonl(path)?
        .into_iter()
        .enumerate()
        .map(|(i, r)| {
            let s = r
                .complete()
                .ok_or_else(|| Error::validation(format!("{}:{}", path.display(), i + 1), "missing kg field"))?;
            s.validate()?;
            Ok(s)
        })
        .collect()
}

pub fn write_jsonl(path: &Path, samples: &[Sample]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for s in samples {
        serde_json::to_writer(&mut f, s)?;
        f.write_all(b"\n")?;
    }
    f.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jsonl_field_names() {
        let s = Sample {
            claim: "A is B.".into(),
            doc: "A is B. B is C.".into(),
            claim_kg: vec![Triple::new("A", "is", "B").unwrap()],
            doc_kg: vec![Triple::new("A", "is", "B").unwrap(), Triple::new("B", "is", "C").unwrap()],
            label: Label::Support,
        };
        let line = serde_json::to_string(&s).unwrap();
        assert_eq!(
            line,
            r#"{"claim":"A is B.","doc":"A is B. B is C.","claim_kg":[["A","is","B"]],"doc_kg":[["A","is","B"],["B","is","C"]],"label":"support"}"#
        );
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.jsonl");
        write_jsonl(&p, &[s.clone()]).unwrap();
        assert_eq!(read_jsonl(&p).unwrap(), vec![s]);
    }

    #[test]
    fn missing_kg_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.jsonl");
        std::fs::write(&p, "{\"claim\":\"c\",\"doc\":\"d\",\"label\":\"unsupport\"}\n").unwrap();
        assert!(read_jsonl(&p).is_err());
        let raw = read_raw_jsonl(&p).unwrap();
        assert!(raw[0].claim_kg.is_none());
    }
}
