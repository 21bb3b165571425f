use crate::kg::Triple;

pub const COPULAS: [&str; 4] = ["is", "are", "was", "were"];

pub const VERBS: [&str; 40] = [
    "likes", "dislikes", "trusts", "distrusts", "helps", "hinders", "supports", "opposes", "admires", "despises",
    "joins", "leaves", "accepts", "rejects", "praises", "criticizes", "has", "have", "had", "owns", "contains",
    "includes", "founded", "created", "wrote", "discovered", "invented", "built", "directed", "produced",
    "married", "won", "became", "visited", "defeated", "signed", "released", "borders", "hosts", "uses",
];

pub fn is_pattern_word(word: &str) -> bool {
    let w = word.to_lowercase();
    COPULAS.contains(&w.as_str()) || VERBS.contains(&w.as_str())
}

fn clean(words: &[&str]) -> String {
    words.join(" ").trim_matches(|c: char| c.is_whitespace() || ",;:\"'".contains(c)).to_string()
}

/// Offline triple extraction: one "X <verb> Y" match per sentence, taking
/// the longest subject when several pattern words occur.
pub fn extract_rules(text: &str) -> Vec<Triple> {
    text.split(['.', '!', '?'])
        .filter_map(|sentence| {
            let words: Vec<&str> = sentence.split_whitespace().collect();
            (1..words.len().saturating_sub(1)).rev().find_map(|i| {
                if !is_pattern_word(words[i]) {
                    return None;
                }
                Triple::new(&clean(&words[..i]), words[i], &clean(&words[i + 1..])).ok()
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn copula_sentence() {
        assert_eq!(
            extract_rules("Paris is the capital of France."),
            vec![Triple::new("Paris", "is", "the capital of France").unwrap()]
        );
        assert!(extract_rules("").is_empty());
        assert!(extract_rules("No pattern here. Is.").is_empty());
    }

    #[test]
    fn one_match_per_sentence() {
        let t = extract_rules("The river that is wide borders the town! Ada wrote notes? red falcon likes blue river.");
        assert_eq!(
            t,
            vec![
                Triple::new("The river that is wide", "borders", "the town").unwrap(),
                Triple::new("Ada", "wrote", "notes").unwrap(),
                Triple::new("red falcon", "likes", "blue river").unwrap(),
            ]
        );
    }
}
