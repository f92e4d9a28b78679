//! Word-list configuration: stopwords, verb lexicon, ambiguity phrases,
//! actors and outcome tokens.
//!
//! Every list is a plain-text file with one entry per line and `#` comments.
//! Shipped defaults are compiled in and can be replaced per project.

use std::collections::BTreeSet;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};

const DEFAULT_STOPWORDS: &str = include_str!("../config/stopwords.txt");
const DEFAULT_VERBS: &str = include_str!("../config/verbs.txt");
const DEFAULT_AMBIGUITY: &str = include_str!("../config/ambiguity.txt");
const DEFAULT_ACTORS: &str = include_str!("../config/actors.txt");
const DEFAULT_OUTCOMES: &str = include_str!("../config/outcomes.txt");

/// Parses a word-list file: trims lines, skips blanks and `#` comments, lowercases.
pub fn parse_word_list(text: &str) -> BTreeSet<String> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_lowercase)
        .collect()
}

fn load(path: &Path) -> io::Result<BTreeSet<String>> {
    Ok(parse_word_list(&std::fs::read_to_string(path)?))
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct WordSet(BTreeSet<String>);

impl WordSet {
    pub fn parse(text: &str) -> Self {
        Self(parse_word_list(text))
    }

    pub fn from_file(path: &Path) -> io::Result<Self> {
        load(path).map(Self)
    }

    pub fn contains(&self, word: &str) -> bool {
        self.0.contains(word)
    }

    pub fn insert(&mut self, word: impl Into<String>) {
        self.0.insert(word.into().to_lowercase());
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.0.iter().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl<S: Into<String>> FromIterator<S> for WordSet {
    fn from_iter<I: IntoIterator<Item = S>>(iter: I) -> Self {
        Self(iter.into_iter().map(|s| s.into().to_lowercase()).collect())
    }
}

pub type StopWords = WordSet;

impl WordSet {
    pub fn default_stopwords() -> Self {
        Self::parse(DEFAULT_STOPWORDS)
    }

    pub fn default_verbs() -> Self {
        Self::parse(DEFAULT_VERBS)
    }

    pub fn default_actors() -> Self {
        Self::parse(DEFAULT_ACTORS)
    }

    pub fn default_outcomes() -> Self {
        Self::parse(DEFAULT_OUTCOMES)
    }
}

/// Ambiguous phrases, stored as lowercase token sequences.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AmbiguityLexicon {
    phrases: Vec<String>,
    tokenized: Vec<Vec<String>>,
}

impl AmbiguityLexicon {
    pub fn new<I, S>(phrases: I) -> Option<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let set: BTreeSet<String> = phrases
            .into_iter()
            .map(|p| p.into().trim().to_lowercase())
            .filter(|p| crate::text::raw_tokens(p).next().is_some())
            .collect();
        if set.is_empty() {
            return None;
        }
        let phrases: Vec<String> = set.into_iter().collect();
        let tokenized = phrases
            .iter()
            .map(|p| crate::text::raw_tokens(p).collect())
            .collect();
        Some(Self { phrases, tokenized })
    }

    pub fn parse(text: &str) -> Option<Self> {
        Self::new(parse_word_list(text))
    }

    pub fn from_file(path: &Path) -> io::Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?).ok_or_else(|| {
            io::Error::new(io::ErrorKind::InvalidData, "ambiguity lexicon is empty")
        })
    }

    pub fn phrases(&self) -> &[String] {
        &self.phrases
    }

    /// Phrases whose token sequence occurs contiguously in `tokens`.
    pub fn hits(&self, tokens: &[String]) -> Vec<&str> {
        self.phrases
            .iter()
            .zip(&self.tokenized)
            .filter(|(_, seq)| tokens.windows(seq.len()).any(|w| w == seq.as_slice()))
            .map(|(p, _)| p.as_str())
            .collect()
    }
}

impl Default for AmbiguityLexicon {
    fn default() -> Self {
        Self::parse(DEFAULT_AMBIGUITY).expect("shipped ambiguity lexicon is non-empty")
    }
}

/// All word lists used by the text pipeline and the heuristic rubric.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Lexicons {
    pub stopwords: StopWords,
    pub verbs: WordSet,
    pub ambiguity: AmbiguityLexicon,
    pub actors: WordSet,
    pub outcomes: WordSet,
}

impl Default for Lexicons {
    fn default() -> Self {
        Self {
            stopwords: WordSet::default_stopwords(),
            verbs: WordSet::default_verbs(),
            ambiguity: AmbiguityLexicon::default(),
            actors: WordSet::default_actors(),
            outcomes: WordSet::default_outcomes(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn word_list_format() {
        let set = parse_word_list("# comment\nThe\n\n  shall  \n#x\n");
        assert_eq!(set.into_iter().collect::<Vec<_>>(), ["shall", "the"]);
    }

    #[test]
    fn shipped_defaults() {
        let lex = Lexicons::default();
        assert!((110..=140).contains(&lex.stopwords.len()));
        assert!(lex.stopwords.contains("the") && lex.stopwords.contains("shall"));
        assert!(lex.verbs.contains("validate") && lex.verbs.contains("lock"));
        assert!(lex.ambiguity.phrases().iter().any(|p| p == "user-friendly"));
        assert!(lex.actors.contains("system"));
        assert!(lex.outcomes.contains("then"));
    }

    #[test]
    fn phrase_hits_are_contiguous() {
        let lex = AmbiguityLexicon::new(["should be able", "fast"]).unwrap();
        let toks = |s: &str| crate::text::raw_tokens(s).collect::<Vec<_>>();
        let hits = lex.hits(&toks("Users should be able to log in fast"));
        assert_eq!(hits, ["fast", "should be able"]);
        assert!(lex.hits(&toks("should not be able")).is_empty());
        assert!(AmbiguityLexicon::new(["", "!!"]).is_none());
    }
}
