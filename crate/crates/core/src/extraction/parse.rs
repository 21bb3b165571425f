use serde::Serialize;
use serde_json::Value;

use crate::error::{Error, Result};
use crate::kg::Triple;

/// A candidate triple rejected while parsing.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Dropped {
    pub index: usize,
    pub reason: String,
    pub raw: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Parsed {
    pub triples: Vec<Triple>,
    pub dropped: Vec<Dropped>,
}

/// First well-formed JSON array of arrays in `raw`; surrounding prose is ignored.
fn first_array(raw: &str) -> Option<Vec<Value>> {
    for (i, _) in raw.match_indices('[') {
        let mut stream = serde_json::Deserializer::from_str(&raw[i..]).into_iter::<Value>();
        if let Some(Ok(Value::Array(items))) = stream.next() {
            if items.iter().all(Value::is_array) {
                return Some(items);
            }
        }
    }
    None
}

/// Parses provider output into triples, dropping (and reporting) entries
/// that are not three non-empty strings.
pub fn parse_triples(raw: &str) -> Result<Parsed> {
    let items = first_array(raw).ok_or_else(|| Error::Parse {
        reason: "no JSON array of triples found".into(),
        raw: raw.to_string(),
    })?;
    let mut out = Parsed::default();
    for (index, item) in items.iter().enumerate() {
        let fields: Option<Vec<&str>> = item
            .as_array()
            .map(|a| a.iter().map(Value::as_str).collect::<Option<Vec<_>>>())
            .unwrap_or(None);
        let drop = |reason: &str| Dropped {
            index,
            reason: reason.to_string(),
            raw: item.to_string(),
        };
        match fields.as_deref() {
            Some([s, r, t]) => match Triple::new(s, r, t) {
                Ok(tr) => out.triples.push(tr),
                Err(_) => out.dropped.push(drop("empty field")),
            },
            Some(f) => out.dropped.push(drop(&format!("expected 3 strings, got {}", f.len()))),
            None => out.dropped.push(drop("non-string field")),
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plain_array() {
        let p = parse_triples(r#"[["A","is","B"]]"#).unwrap();
        assert_eq!(p.triples, vec![Triple::new("A", "is", "B").unwrap()]);
        assert!(p.dropped.is_empty());
    }

    #[test]
    fn surrounding_prose() {
        let p = parse_triples(r#"Here are the triples: [["A","is","B"],["B","in","C"]] Done."#).unwrap();
        assert_eq!(p.triples.len(), 2);
        let p = parse_triples(r#"See [1] and [note]: [[" A ","is","B "]] [["x","y","z"]]"#).unwrap();
        assert_eq!(p.triples, vec![Triple::new("A", "is", "B").unwrap()]);
        assert_eq!(p.triples[0].source, "A");
    }

    #[test]
    fn arity_and_empty_fields_are_reported() {
        let p = parse_triples(r#"[["A","is"]]"#).unwrap();
        assert!(p.triples.is_empty());
        assert_eq!(p.dropped.len(), 1);
        let p = parse_triples(r#"[["A"," ","B"],["A",1,"B"],["A","r","B"]]"#).unwrap();
        assert_eq!(p.triples.len(), 1);
        assert_eq!(p.dropped.iter().map(|d| d.index).collect::<Vec<_>>(), vec![0, 1]);
    }

    #[test]
    fn no_array_is_a_parse_error_with_raw() {
        match parse_triples("sorry, nothing here") {
            Err(Error::Parse { raw, .. }) => assert_eq!(raw, "sorry, nothing here"),
            other => panic!("{other:?}"),
        }
        assert!(parse_triples("[[\"a\",").is_err());
        assert!(parse_triples("[]").unwrap().triples.is_empty());
    }
}
