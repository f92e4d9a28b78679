//! Sentence segmentation, token normalization and entity/verb profiles.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::artefact::{step_keyword, Artefact};
use crate::lexicon::{StopWords, WordSet};

/// Words ending in `.` that never terminate a sentence.
const ABBREVIATIONS: [&str; 6] = ["e.g.", "i.e.", "vs.", "cf.", "approx.", "incl."];

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Segment {
    pub artefact_id: String,
    pub index: usize,
    pub text: String,
}

impl Segment {
    /// `<artefact id>#<index>`, unique within a corpus.
    pub fn key(&self) -> String {
        format!("{}#{}", self.artefact_id, self.index)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TextError {
    #[error("artefact `{0}` has no tokenizable content")]
    EmptyAfterSegmentation(String),
}

/// Lowercase alphanumeric tokens in document order, duplicates kept.
pub fn raw_tokens(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
}

fn has_token(text: &str) -> bool {
    text.chars().any(char::is_alphanumeric)
}

enum Unit {
    Row(String),
    Prose(String),
}

fn strip_bullet(line: &str) -> Option<&str> {
    ["- ", "* "]
        .into_iter()
        .find_map(|b| line.strip_prefix(b))
        .map(str::trim)
}

fn split_units(body: &str) -> Vec<Unit> {
    let mut units = Vec::new();
    let mut paragraph = String::new();
    let flush = |paragraph: &mut String, units: &mut Vec<Unit>| {
        if !paragraph.is_empty() {
            units.push(Unit::Prose(std::mem::take(paragraph)));
        }
    };

    for line in body.lines() {
        let t = line.trim();
        if t.is_empty() {
            flush(&mut paragraph, &mut units);
        } else if t.starts_with('|') {
            flush(&mut paragraph, &mut units);
            units.push(Unit::Row(t.to_string()));
        } else if t == "Examples:" {
            flush(&mut paragraph, &mut units);
        } else if let Some(rest) = strip_bullet(t)
            .or_else(|| t.strip_prefix("Step:").map(str::trim))
            .or_else(|| t.strip_prefix("Expect:").map(str::trim))
        {
            flush(&mut paragraph, &mut units);
            units.push(Unit::Prose(rest.to_string()));
        } else if step_keyword(t).is_some() {
            flush(&mut paragraph, &mut units);
            units.push(Unit::Prose(t.to_string()));
        } else {
            if !paragraph.is_empty() {
                paragraph.push(' ');
            }
            paragraph.push_str(t);
        }
    }
    flush(&mut paragraph, &mut units);
    units
}

/// Splits prose at `.`, `!` or `?` followed by whitespace or end of text.
pub fn split_sentences(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut start = 0;
    let mut chars = text.char_indices().peekable();
    while let Some((i, c)) = chars.next() {
        if !matches!(c, '.' | '!' | '?') {
            continue;
        }
        let at_boundary = chars.peek().is_none_or(|(_, n)| n.is_whitespace());
        if !at_boundary {
            continue;
        }
        let end = i + c.len_utf8();
        let word_start = text[start..i]
            .rfind(char::is_whitespace)
            .map_or(start, |p| start + p + 1);
        let word = text[word_start..end].to_lowercase();
        if c == '.' && ABBREVIATIONS.contains(&word.as_str()) {
            continue;
        }
        out.push(text[start..end].trim().to_string());
        start = end;
    }
    if start < text.len() {
        out.push(text[start..].trim().to_string());
    }
    out.retain(|s| !s.is_empty());
    out
}

/// Segment texts of a body, before indices are assigned.
pub fn segment_texts(body: &str) -> Vec<String> {
    split_units(body)
        .into_iter()
        .flat_map(|u| match u {
            Unit::Row(r) => vec![r],
            Unit::Prose(p) => split_sentences(&p),
        })
        .filter(|s| has_token(s))
        .collect()
}

pub fn segment_artefact(artefact: &Artefact) -> Result<Vec<Segment>, TextError> {
    let segments: Vec<Segment> = segment_texts(&artefact.body)
        .into_iter()
        .enumerate()
        .map(|(index, text)| Segment {
            artefact_id: artefact.id.clone(),
            index,
            text,
        })
        .collect();
    if segments.is_empty() {
        return Err(TextError::EmptyAfterSegmentation(artefact.id.clone()));
    }
    Ok(segments)
}

/// Segments of every artefact in order.
pub fn segment_all<'a, I>(artefacts: I) -> Result<Vec<Segment>, TextError>
where
    I: IntoIterator<Item = &'a Artefact>,
{
    let mut out = Vec::new();
    for a in artefacts {
        out.extend(segment_artefact(a)?);
    }
    Ok(out)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSet(BTreeSet<String>);

impl TokenSet {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, token: &str) -> bool {
        self.0.contains(token)
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.0.iter().map(String::as_str)
    }

    pub fn intersection_len(&self, other: &TokenSet) -> usize {
        self.0.intersection(&other.0).count()
    }

    pub fn union_len(&self, other: &TokenSet) -> usize {
        self.0.union(&other.0).count()
    }

    pub fn is_subset(&self, other: &TokenSet) -> bool {
        self.0.is_subset(&other.0)
    }
}

impl<S: Into<String>> FromIterator<S> for TokenSet {
    fn from_iter<I: IntoIterator<Item = S>>(iter: I) -> Self {
        Self(iter.into_iter().map(Into::into).collect())
    }
}

pub fn tokenize_normalize(text: &str, stopwords: &StopWords) -> TokenSet {
    TokenSet(raw_tokens(text).filter(|t| !stopwords.contains(t)).collect())
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityVerbProfile {
    pub entities: BTreeSet<String>,
    pub verbs: BTreeSet<String>,
}

impl EntityVerbProfile {
    pub fn entity_overlap(&self, other: &Self) -> BTreeSet<String> {
        self.entities.intersection(&other.entities).cloned().collect()
    }

    pub fn verb_overlap(&self, other: &Self) -> BTreeSet<String> {
        self.verbs.intersection(&other.verbs).cloned().collect()
    }
}

fn undouble(stem: &str) -> Option<&str> {
    let bytes = stem.as_bytes();
    let n = bytes.len();
    (n >= 3 && bytes[n - 1] == bytes[n - 2] && bytes[n - 1].is_ascii_alphabetic())
        .then(|| &stem[..n - 1])
}

/// Whether a token is verb-like: a lexicon entry, an inflection of one, or a
/// word of six or more letters ending in `-ify` / `-ate`.
pub fn is_verb(token: &str, lexicon: &WordSet) -> bool {
    if lexicon.contains(token) {
        return true;
    }
    for suffix in ["ing", "ed", "es", "s", "d"] {
        if let Some(stem) = token.strip_suffix(suffix) {
            if stem.len() < 2 {
                continue;
            }
            if lexicon.contains(stem) || undouble(stem).is_some_and(|s| lexicon.contains(s)) {
                return true;
            }
        }
    }
    token.chars().count() >= 6 && (token.ends_with("ify") || token.ends_with("ate"))
}

pub fn extract_entity_verbs(text: &str, verbs: &WordSet, stopwords: &StopWords) -> EntityVerbProfile {
    let mut profile = EntityVerbProfile::default();
    for token in tokenize_normalize(text, stopwords).0 {
        if is_verb(&token, verbs) {
            profile.verbs.insert(token);
        } else {
            profile.entities.insert(token);
        }
    }
    profile
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::artefact::ArtefactKind;
    use crate::lexicon::Lexicons;
    use proptest::prelude::*;

    fn req(body: &str) -> Artefact {
        Artefact::original("1", ArtefactKind::Requirement, body)
    }

    fn texts(body: &str) -> Vec<String> {
        segment_artefact(&req(body))
            .unwrap()
            .into_iter()
            .map(|s| s.text)
            .collect()
    }

    fn set(items: &[&str]) -> TokenSet {
        items.iter().copied().collect()
    }

    #[test]
    fn newline_steps_split() {
        assert_eq!(
            texts("Given 3 failed attempts\nThen the account is locked"),
            ["Given 3 failed attempts", "Then the account is locked"]
        );
    }

    #[test]
    fn terminators_split() {
        assert_eq!(
            texts("The system shall lock the account. It shall notify the admin."),
            ["The system shall lock the account.", "It shall notify the admin."]
        );
    }

    #[test]
    fn token_free_body() {
        assert_eq!(
            segment_artefact(&req("!!! ---")),
            Err(TextError::EmptyAfterSegmentation("1".into()))
        );
    }

    #[test]
    fn abbreviations_and_wrapped_lines() {
        assert_eq!(
            texts("Errors, e.g. timeouts, are\nlogged. Done!\n- bullet one\n* bullet two"),
            ["Errors, e.g. timeouts, are logged.", "Done!", "bullet one", "bullet two"]
        );
        assert_eq!(texts("Version 2.5 is used? Yes"), ["Version 2.5 is used?", "Yes"]);
    }

    #[test]
    fn table_rows_and_labels() {
        let body = "Given <n> attempts\nExamples:\n| n |\n| 3 |\nStep: open page\nExpect: page shown";
        assert_eq!(
            texts(body),
            ["Given <n> attempts", "| n |", "| 3 |", "open page", "page shown"]
        );
    }

    #[test]
    fn indices_are_contiguous() {
        let segs = segment_artefact(&req("A. --- . B.")).unwrap();
        let idx: Vec<_> = segs.iter().map(|s| s.index).collect();
        assert_eq!(idx, [0, 1]);
        assert_eq!(segs[1].key(), "1#1");
    }

    #[test]
    fn tokenize_examples() {
        let stop: StopWords = ["the", "shall"].into_iter().collect();
        assert_eq!(
            tokenize_normalize("The system shall lock the account", &stop),
            set(&["system", "lock", "account"])
        );
        assert!(tokenize_normalize("", &StopWords::default()).is_empty());
        assert_eq!(tokenize_normalize("Lock lock LOCK", &StopWords::default()), set(&["lock"]));
    }

    #[test]
    fn entity_verb_examples() {
        let lex = Lexicons::default();
        let verbs: WordSet = ["lock"].into_iter().collect();
        let stop: StopWords = ["the", "shall"].into_iter().collect();
        let p = extract_entity_verbs("The system shall lock the account", &verbs, &stop);
        assert_eq!(p.verbs, BTreeSet::from(["lock".to_string()]));
        assert_eq!(p.entities, BTreeSet::from(["system".to_string(), "account".to_string()]));

        let p = extract_entity_verbs("Account balance page", &lex.verbs, &lex.stopwords);
        assert!(p.verbs.is_empty());
        assert_eq!(p.entities.len(), 3);

        let p = extract_entity_verbs("Validate the input", &lex.verbs, &lex.stopwords);
        assert_eq!(p.verbs, BTreeSet::from(["validate".to_string()]));
        assert_eq!(p.entities, BTreeSet::from(["input".to_string()]));
    }

    #[test]
    fn verb_inflections_and_suffixes() {
        let verbs = WordSet::default_verbs();
        for v in ["locked", "logged", "logging", "submitted", "validates", "saved", "notify"] {
            assert!(is_verb(v, &verbs), "{v}");
        }
        assert!(is_verb("classify", &WordSet::default()));
        assert!(is_verb("activate", &WordSet::default()));
        for e in ["account", "date", "state", "status", "password"] {
            assert!(!is_verb(e, &verbs), "{e}");
        }
    }

    fn sentence() -> impl Strategy<Value = String> {
        prop::collection::vec("[a-zA-Z0-9]{1,8}", 1..8).prop_map(|w| w.join(" "))
    }

    proptest! {
        #[test]
        fn segmentation_is_idempotent(sentences in prop::collection::vec(sentence(), 1..5)) {
            let body = sentences.iter().map(|s| format!("{s}.")).collect::<Vec<_>>().join(" ");
            for seg in segment_artefact(&req(&body)).unwrap() {
                let again = segment_artefact(&req(&seg.text)).unwrap();
                prop_assert_eq!(again.len(), 1);
                prop_assert_eq!(&again[0].text, &seg.text);
            }
        }

        #[test]
        fn stopwords_are_antitone(text in "[a-zA-Z ,.]{0,60}", extra in prop::collection::vec("[a-z]{1,4}", 0..6)) {
            let base = StopWords::default_stopwords();
            let mut larger = base.clone();
            for w in extra {
                larger.insert(w);
            }
            let small = tokenize_normalize(&text, &larger);
            let big = tokenize_normalize(&text, &base);
            prop_assert!(small.is_subset(&big));
            for t in small.iter() {
                prop_assert!(!larger.contains(t));
                prop_assert_eq!(t.to_lowercase(), t);
            }
        }

        #[test]
        fn profile_partitions_tokens(text in "[a-zA-Z ]{0,80}") {
            let lex = Lexicons::default();
            let p = extract_entity_verbs(&text, &lex.verbs, &lex.stopwords);
            prop_assert!(p.entities.is_disjoint(&p.verbs));
            let all: BTreeSet<String> = p.entities.union(&p.verbs).cloned().collect();
            let tokens: BTreeSet<String> = tokenize_normalize(&text, &lex.stopwords).iter().map(str::to_string).collect();
            prop_assert_eq!(all, tokens);
        }
    }
}
