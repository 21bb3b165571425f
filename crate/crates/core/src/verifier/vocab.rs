use std::collections::HashMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::featurizer::tokens;

pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;
pub const SUPPORT_ID: usize = 2;
pub const UNSUPPORT_ID: usize = 3;

const RESERVED: [&str; 4] = ["<pad>", "<unk>", "<support>", "<unsupport>"];

const QUESTION: &str = "Question: Is the claim supported by the document?";

/// Fills the verification template.
pub fn render_template(claim: &str, doc: &str) -> String {
    format!("Document: {doc}\nClaim: {claim}\n{QUESTION}\nAnswer:")
}

/// Word-level vocabulary with fixed reserved ids 0-3.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Default for Vocab {
    fn default() -> Self {
        let tokens: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Vocab { tokens, index }
    }
}

impl Vocab {
    /// Collects tokens in first-occurrence order; the template's own words
    /// are always included.
    pub fn build<'a>(texts: impl IntoIterator<Item = &'a str>) -> Self {
        let mut v = Vocab::default();
        v.extend(&render_template("", ""));
        for t in texts {
            v.extend(t);
        }
        v
    }

    fn extend(&mut self, text: &str) {
        for tok in tokens(text) {
            if !self.index.contains_key(&tok) {
                self.index.insert(tok.clone(), self.tokens.len());
                self.tokens.push(tok);
            }
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    /// Token ids of `text`, keeping the last `max_len` when too long so the
    /// template tail (question and answer slot) always survives.
    pub fn tokenize(&self, text: &str, max_len: usize) -> Vec<usize> {
        let ids: Vec<usize> = tokens(text).map(|t| self.id(&t)).collect();
        let skip = ids.len().saturating_sub(max_len);
        ids[skip..].to_vec()
    }

    /// Id of the token that ends every rendered template.
    pub fn answer_slot_id(&self) -> usize {
        self.id("answer")
    }

    pub fn to_text(&self) -> String {
        let mut s = self.tokens.join("\n");
        s.push('\n');
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let tokens: Vec<String> = text.lines().map(str::to_string).collect();
        if tokens.len() < RESERVED.len() || tokens[..4] != RESERVED {
            return Err(Error::validation("vocab", "reserved ids 0-3 missing or reordered"));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::validation("vocab", format!("duplicate token {t:?} on line {}", i + 1)));
            }
        }
        Ok(Vocab { tokens, index })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Vocab::from_text(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn template_substitution() {
        assert_eq!(
            render_template("c", "d"),
            "Document: d\nClaim: c\nQuestion: Is the claim supported by the document?\nAnswer:"
        );
        assert_eq!(render_template("", "d"), render_template("", "d"));
        assert!(render_template("", "d").contains("Claim: \n"));
    }

    #[test]
    fn unknown_tokens_map_to_unk() {
        let v = Vocab::build(["paris is big"]);
        assert_eq!(v.tokenize("paris zzz", 10), vec![v.id("paris"), UNK_ID]);
        assert_eq!(v.tokenize("", 10), Vec::<usize>::new());
        assert_eq!(v.token(SUPPORT_ID), Some("<support>"));
    }

    #[test]
    fn truncation_keeps_answer_slot() {
        let v = Vocab::build(["alpha beta gamma"]);
        let doc = "alpha beta gamma ".repeat(100);
        let ids = v.tokenize(&render_template("beta", &doc), 32);
        assert_eq!(ids.len(), 32);
        assert_eq!(*ids.last().unwrap(), v.answer_slot_id());
        assert_ne!(v.answer_slot_id(), UNK_ID);
    }

    #[test]
    fn file_roundtrip() {
        let v = Vocab::build(["one two three", "two four"]);
        let back = Vocab::from_text(&v.to_text()).unwrap();
        assert_eq!(back, v);
        assert!(Vocab::from_text("a\nb\n").is_err());
    }
}
