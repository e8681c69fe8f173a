use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

/// Shipped default; loaded when the rules directory has no lexicon file.
pub const DEFAULT_LEXICON: &str = include_str!("../../rules/lexicon.txt");

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("lexicon line {line}: {reason}")]
pub struct LexiconError {
    pub line: usize,
    pub reason: String,
}

/// Keyword to capability map used to infer what a task needs from its text.
/// Keywords may span several words; matching is whole-word on lowercase
/// tokens with punctuation stripped.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CapabilityLexicon {
    entries: BTreeMap<String, String>,
}

impl Default for CapabilityLexicon {
    fn default() -> Self {
        CapabilityLexicon::parse(DEFAULT_LEXICON).expect("default lexicon parses")
    }
}

fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

impl CapabilityLexicon {
    pub fn new<I, K, V>(entries: I) -> Result<Self, LexiconError>
    where
        I: IntoIterator<Item = (K, V)>,
        K: AsRef<str>,
        V: Into<String>,
    {
        let mut map = BTreeMap::new();
        for (i, (k, v)) in entries.into_iter().enumerate() {
            let key = tokenize(k.as_ref()).join(" ");
            let cap = v.into().trim().to_string();
            if key.is_empty() || cap.is_empty() {
                return Err(LexiconError {
                    line: i + 1,
                    reason: "keyword and capability must be nonempty".into(),
                });
            }
            if map.insert(key.clone(), cap).is_some() {
                return Err(LexiconError {
                    line: i + 1,
                    reason: format!("duplicate keyword {key:?}"),
                });
            }
        }
        Ok(CapabilityLexicon { entries: map })
    }

    /// Parses `keyword -> capability` lines; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self, LexiconError> {
        let mut map = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once("->").ok_or_else(|| LexiconError {
                line: i + 1,
                reason: "expected `keyword -> capability`".into(),
            })?;
            let key = tokenize(k).join(" ");
            let cap = v.trim().to_string();
            if key.is_empty() || cap.is_empty() {
                return Err(LexiconError {
                    line: i + 1,
                    reason: "keyword and capability must be nonempty".into(),
                });
            }
            if map.insert(key.clone(), cap).is_some() {
                return Err(LexiconError {
                    line: i + 1,
                    reason: format!("duplicate keyword {key:?}"),
                });
            }
        }
        Ok(CapabilityLexicon { entries: map })
    }

    pub fn entries(&self) -> &BTreeMap<String, String> {
        &self.entries
    }
}

/// Capabilities implied by a task description. Empty means unconstrained.
pub fn extract_capabilities(description: &str, lexicon: &CapabilityLexicon) -> BTreeSet<String> {
    let tokens = tokenize(description);
    let mut found = BTreeSet::new();
    for (keyword, cap) in &lexicon.entries {
        let words: Vec<&str> = keyword.split(' ').collect();
        if tokens.windows(words.len()).any(|w| w.iter().zip(&words).all(|(a, b)| a == b)) {
            found.insert(cap.clone());
        }
    }
    found
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(items: &[&str]) -> BTreeSet<String> {
        items.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn navigate_and_explore() {
        let lex = CapabilityLexicon::default();
        assert_eq!(
            extract_capabilities("Navigate to the kitchen and explore the area", &lex),
            set(&["exploration", "navigation"])
        );
    }

    #[test]
    fn empty_description() {
        assert!(extract_capabilities("", &CapabilityLexicon::default()).is_empty());
    }

    #[test]
    fn several_keywords_one_capability() {
        let lex = CapabilityLexicon::new([("pick", "manipulation"), ("place", "manipulation")]).unwrap();
        assert_eq!(
            extract_capabilities("Pick up the cup and place it", &lex),
            set(&["manipulation"])
        );
    }

    #[test]
    fn matching_is_whole_word() {
        let lex = CapabilityLexicon::new([("go", "navigation")]).unwrap();
        assert!(extract_capabilities("Gone, going, ago", &lex).is_empty());
        assert_eq!(extract_capabilities("GO!", &lex), set(&["navigation"]));
    }

    #[test]
    fn phrases_match_consecutive_tokens() {
        let lex = CapabilityLexicon::parse("pick up -> manipulation\n").unwrap();
        assert_eq!(extract_capabilities("then pick, up the cup", &lex), set(&["manipulation"]));
        assert!(extract_capabilities("pick the up", &lex).is_empty());
    }

    #[test]
    fn parse_errors() {
        assert_eq!(CapabilityLexicon::parse("nav navigation").unwrap_err().line, 1);
        assert_eq!(CapabilityLexicon::parse("# c\na -> x\na -> y").unwrap_err().line, 3);
        assert!(CapabilityLexicon::parse(" -> x").is_err());
    }
}
