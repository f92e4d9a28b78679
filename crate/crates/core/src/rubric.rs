//! Five-point quality rubric: clarity, completeness, testability,
//! consistency and semantic alignment.
//!
//! The heuristic backend is deterministic and always available. The judge
//! backend asks a generation provider for clarity, completeness and
//! testability; consistency and semantic alignment are always computed here
//! because they are corpus-level properties.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::artefact::{Artefact, ArtefactKind, Corpus};
use crate::generation::{render_template, GenerationError, GenerationProvider, GenerationRequest, GenerationStats};
use crate::lexicon::{AmbiguityLexicon, Lexicons};
use crate::similarity::{align_cross, dedup_intra, Analyzer, MatchCategory, SimilarityError, Thresholds};
use crate::text::{is_verb, raw_tokens, segment_all, segment_texts, TextError};

pub const HEURISTIC_BACKEND: &str = "heuristic-v1";

/// Segments longer than this many tokens cost a clarity point.
pub const LONG_SEGMENT_TOKENS: usize = 40;

const DEFAULT_JUDGE_TEMPLATE: &str = include_str!("../config/judge_prompt.txt");

pub const METRIC_DEFINITIONS: &str = "\
clarity: the wording has a single obvious reading and no vague terms.
completeness: the actor, the action, concrete values and the expected result are all stated.
testability: a tester could write a pass/fail check for it without asking further questions.";

const CONDITIONALS: [&str; 9] = [
    "if", "when", "after", "once", "upon", "unless", "whenever", "before", "until",
];

const NEGATIONS: [&str; 8] = ["not", "no", "never", "cannot", "without", "nor", "neither", "none"];

const TIME_UNITS: [&str; 22] = [
    "ms", "millisecond", "milliseconds", "second", "seconds", "sec", "secs", "minute", "minutes",
    "min", "mins", "hour", "hours", "day", "days", "week", "weeks", "month", "months", "year",
    "years", "percent",
];

const NUMBER_WORDS: [&str; 13] = [
    "one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten", "twelve",
    "hundred", "thousand",
];

#[derive(Debug, Error)]
pub enum RubricError {
    #[error("artefact `{id}` is a {kind}; only requirements can be scored")]
    WrongKind { id: String, kind: ArtefactKind },
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error(transparent)]
    Similarity(#[from] SimilarityError),
    #[error(transparent)]
    Text(#[from] TextError),
    #[error(transparent)]
    Generation(#[from] GenerationError),
    #[error("judge reply is missing a 1-5 score for `{metric}`: {raw}")]
    MalformedJudgeOutput { metric: &'static str, raw: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RubricScores {
    pub clarity: u8,
    pub completeness: u8,
    pub testability: u8,
    pub consistency: u8,
    pub semantic_alignment: u8,
    pub backend_id: String,
}

impl RubricScores {
    pub fn as_array(&self) -> [u8; 5] {
        [
            self.clarity,
            self.completeness,
            self.testability,
            self.consistency,
            self.semantic_alignment,
        ]
    }

    /// Sum used to pick the more robust side during unified synthesis.
    pub fn robustness(&self) -> u32 {
        u32::from(self.clarity) + u32::from(self.completeness) + u32::from(self.testability)
    }

    pub fn mean(&self) -> f64 {
        self.as_array().iter().map(|&s| f64::from(s)).sum::<f64>() / 5.0
    }
}

/// Per-artefact scores that do not depend on the rest of the corpus.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ArtefactScores {
    pub clarity: u8,
    pub completeness: u8,
    pub testability: u8,
}

fn clamp_score(v: i64) -> u8 {
    v.clamp(1, 5) as u8
}

fn require_requirement(a: &Artefact) -> Result<(), RubricError> {
    if a.kind == ArtefactKind::Requirement {
        Ok(())
    } else {
        Err(RubricError::WrongKind {
            id: a.id.clone(),
            kind: a.kind,
        })
    }
}

fn segment_tokens(body: &str) -> Vec<Vec<String>> {
    segment_texts(body)
        .iter()
        .map(|s| raw_tokens(s).collect())
        .collect()
}

fn ambiguity_hits<'a>(segments: &[Vec<String>], lex: &'a AmbiguityLexicon) -> BTreeSet<&'a str> {
    segments.iter().flat_map(|toks| lex.hits(toks)).collect()
}

pub fn score_clarity(a: &Artefact, lex: &AmbiguityLexicon) -> u8 {
    let segments = segment_tokens(&a.body);
    let hits = ambiguity_hits(&segments, lex).len() as i64;
    let long = segments.iter().any(|s| s.len() > LONG_SEGMENT_TOKENS) as i64;
    clamp_score(5 - hits - long)
}

/// Digits, percentages, time units or number words.
fn has_quantifier(body: &str, tokens: &[String]) -> bool {
    body.contains('%')
        || tokens.iter().any(|t| {
            t.chars().any(|c| c.is_ascii_digit())
                || TIME_UNITS.contains(&t.as_str())
                || NUMBER_WORDS.contains(&t.as_str())
        })
}

/// A conditional with content on both sides, or a leading conditional
/// followed by a comma clause.
fn has_conditional_clause(segment: &str, lexicons: &Lexicons) -> bool {
    let toks: Vec<String> = raw_tokens(segment).collect();
    let content = |t: &String| !lexicons.stopwords.contains(t) && !CONDITIONALS.contains(&t.as_str());
    for (k, t) in toks.iter().enumerate() {
        if !CONDITIONALS.contains(&t.as_str()) {
            continue;
        }
        let before = toks[..k].iter().any(content);
        let after = toks[k + 1..].iter().any(content);
        if before && after {
            return true;
        }
        if !before {
            if let Some((_, tail)) = segment.split_once(',') {
                if raw_tokens(tail).any(|t| content(&t)) {
                    return true;
                }
            }
        }
    }
    false
}

struct Features {
    actor: bool,
    verb: bool,
    quantifier: bool,
    outcome: bool,
    ambiguous: bool,
    single_focus: bool,
}

fn features(a: &Artefact, lexicons: &Lexicons) -> Features {
    let segments = segment_texts(&a.body);
    let seg_tokens: Vec<Vec<String>> = segments.iter().map(|s| raw_tokens(s).collect()).collect();
    let tokens: Vec<String> = seg_tokens.iter().flatten().cloned().collect();
    let conjunctions = tokens.iter().filter(|t| *t == "and" || *t == "or").count();
    Features {
        actor: tokens.iter().any(|t| lexicons.actors.contains(t)),
        verb: tokens
            .iter()
            .filter(|t| !lexicons.stopwords.contains(t))
            .any(|t| is_verb(t, &lexicons.verbs)),
        quantifier: has_quantifier(&a.body, &tokens),
        outcome: tokens.iter().any(|t| lexicons.outcomes.contains(t))
            || segments.iter().any(|s| has_conditional_clause(s, lexicons)),
        ambiguous: !ambiguity_hits(&seg_tokens, &lexicons.ambiguity).is_empty(),
        single_focus: segments.len().max(1) + conjunctions <= 2,
    }
}

pub fn score_completeness(a: &Artefact, lexicons: &Lexicons) -> Result<u8, RubricError> {
    require_requirement(a)?;
    let f = features(a, lexicons);
    let points = [f.actor, f.verb, f.quantifier, f.outcome]
        .iter()
        .filter(|&&p| p)
        .count() as i64;
    Ok(clamp_score(1 + points))
}

/// Absence-based points (no ambiguity, single focus) only count once the
/// artefact has something checkable in it.
pub fn score_testability(a: &Artefact, lexicons: &Lexicons) -> Result<u8, RubricError> {
    require_requirement(a)?;
    let f = features(a, lexicons);
    let positive = f.quantifier as i64 + f.verb as i64;
    let absence = if positive > 0 {
        (!f.ambiguous) as i64 + f.single_focus as i64
    } else {
        0
    };
    Ok(clamp_score(1 + positive + absence))
}

/// True when the text contains a negation token (`not`, `never`, `don't`, ...).
pub fn is_negated(text: &str) -> bool {
    let toks: Vec<String> = raw_tokens(text).collect();
    toks.iter().enumerate().any(|(i, t)| {
        NEGATIONS.contains(&t.as_str())
            || (t == "t" && i > 0 && toks[i - 1].ends_with('n'))
    })
}

pub fn score_consistency(c: &Corpus, analyzer: &Analyzer, t: &Thresholds) -> Result<u8, RubricError> {
    if c.is_empty() {
        return Err(RubricError::EmptyCorpus);
    }
    let segments = segment_all(&c.artefacts)?;
    let duplicates = if segments.len() < 2 {
        0
    } else {
        dedup_intra(&segments, analyzer, t)?
            .iter()
            .filter(|p| p.category == MatchCategory::High)
            .count() as i64
    };

    let profiles: Vec<(BTreeSet<String>, bool)> = segments
        .iter()
        .map(|s| (analyzer.profile(&s.text).entities, is_negated(&s.text)))
        .collect();
    let mut conflicts = 0i64;
    for i in 0..profiles.len() {
        for j in (i + 1)..profiles.len() {
            let (ei, ni) = &profiles[i];
            let (ej, nj) = &profiles[j];
            if !ei.is_empty() && ei == ej && ni != nj {
                conflicts += 1;
            }
        }
    }
    Ok(clamp_score(5 - duplicates - conflicts))
}

/// Maps a mean cosine to 1-5 with round-half-up.
pub fn alignment_score(mean_cosine: f64) -> u8 {
    clamp_score((1.0 + 4.0 * mean_cosine + 0.5).floor() as i64)
}

pub fn score_semantic_alignment(
    original: &Corpus,
    reverse: &Corpus,
    analyzer: &Analyzer,
    t: &Thresholds,
) -> Result<u8, RubricError> {
    if original.is_empty() || reverse.is_empty() {
        return Err(RubricError::EmptyCorpus);
    }
    for a in original.artefacts.iter().chain(&reverse.artefacts) {
        require_requirement(a)?;
    }
    let left = segment_all(&original.artefacts)?;
    let right = segment_all(&reverse.artefacts)?;
    let m = align_cross(&left, &right, analyzer, t)?.mean_cosine;
    Ok(alignment_score(m))
}

/// Scores clarity, completeness and testability for one requirement.
pub trait RubricBackend: Send + Sync {
    fn id(&self) -> &str;
    fn score_artefact(&self, a: &Artefact, lexicons: &Lexicons) -> Result<ArtefactScores, RubricError>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct HeuristicRubric;

impl RubricBackend for HeuristicRubric {
    fn id(&self) -> &str {
        HEURISTIC_BACKEND
    }

    fn score_artefact(&self, a: &Artefact, lexicons: &Lexicons) -> Result<ArtefactScores, RubricError> {
        Ok(ArtefactScores {
            clarity: score_clarity(a, &lexicons.ambiguity),
            completeness: score_completeness(a, lexicons)?,
            testability: score_testability(a, lexicons)?,
        })
    }
}

/// Asks a generation provider to score each artefact.
pub struct JudgeRubric<'a> {
    pub provider: &'a dyn GenerationProvider,
    pub stats: &'a GenerationStats,
    pub template: String,
}

impl<'a> JudgeRubric<'a> {
    pub fn new(provider: &'a dyn GenerationProvider, stats: &'a GenerationStats) -> Self {
        Self {
            provider,
            stats,
            template: DEFAULT_JUDGE_TEMPLATE.to_string(),
        }
    }

    pub fn prompt(&self, a: &Artefact) -> String {
        render_template(
            &self.template,
            &[("metric_definitions", METRIC_DEFINITIONS), ("artefact_body", &a.body)],
        )
    }
}

/// Reads `metric: score` lines from a judge reply.
pub fn parse_judge_reply(raw: &str) -> Result<ArtefactScores, RubricError> {
    let find = |metric: &'static str| -> Result<u8, RubricError> {
        raw.lines()
            .filter_map(|l| l.split_once(':'))
            .find(|(k, _)| k.trim().trim_matches('*').eq_ignore_ascii_case(metric))
            .and_then(|(_, v)| v.trim().parse::<u8>().ok())
            .filter(|v| (1..=5).contains(v))
            .ok_or_else(|| RubricError::MalformedJudgeOutput {
                metric,
                raw: raw.to_string(),
            })
    };
    Ok(ArtefactScores {
        clarity: find("clarity")?,
        completeness: find("completeness")?,
        testability: find("testability")?,
    })
}

impl RubricBackend for JudgeRubric<'_> {
    fn id(&self) -> &str {
        "llm-judge"
    }

    fn score_artefact(&self, a: &Artefact, _: &Lexicons) -> Result<ArtefactScores, RubricError> {
        require_requirement(a)?;
        self.stats.record_judge();
        let raw = self.provider.generate(GenerationRequest::Judge { prompt: &self.prompt(a) })?;
        parse_judge_reply(&raw)
    }
}

/// Full scores for every artefact of `corpus`, in corpus order. Consistency
/// and semantic alignment (against `reference`) are corpus-level and shared.
pub fn score_corpus(
    corpus: &Corpus,
    reference: &Corpus,
    analyzer: &Analyzer,
    t: &Thresholds,
    backend: &dyn RubricBackend,
) -> Result<Vec<(String, RubricScores)>, RubricError> {
    let consistency = score_consistency(corpus, analyzer, t)?;
    let semantic_alignment = score_semantic_alignment(reference, corpus, analyzer, t)?;
    corpus
        .artefacts
        .iter()
        .map(|a| {
            let s = backend.score_artefact(a, &analyzer.lexicons)?;
            Ok((
                a.id.clone(),
                RubricScores {
                    clarity: s.clarity,
                    completeness: s.completeness,
                    testability: s.testability,
                    consistency,
                    semantic_alignment,
                    backend_id: backend.id().to_string(),
                },
            ))
        })
        .collect()
}

/// Per-dimension means, in [`RubricScores::as_array`] order.
pub fn mean_scores<'a, I>(scores: I) -> [f64; 5]
where
    I: IntoIterator<Item = &'a RubricScores>,
{
    let mut sum = [0.0; 5];
    let mut n = 0usize;
    for s in scores {
        for (acc, v) in sum.iter_mut().zip(s.as_array()) {
            *acc += f64::from(v);
        }
        n += 1;
    }
    if n > 0 {
        for acc in &mut sum {
            *acc /= n as f64;
        }
    }
    sum
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::artefact::parse_requirements;
    use proptest::prelude::*;

    fn req(body: &str) -> Artefact {
        Artefact::original("1", ArtefactKind::Requirement, body)
    }

    const LOCK: &str = "The system shall lock the account after 3 failed attempts.";

    #[test]
    fn clarity_examples() {
        let lex = AmbiguityLexicon::default();
        assert_eq!(score_clarity(&req(LOCK), &lex), 5);
        assert_eq!(
            score_clarity(&req("Provide appropriate feedback and a fast response."), &lex),
            3
        );
        assert_eq!(
            score_clarity(&req("An appropriate, fast, robust and seamless flow."), &lex),
            1
        );
        let long = vec!["word"; 41].join(" ");
        assert_eq!(score_clarity(&req(&long), &lex), 4);
    }

    #[test]
    fn completeness_examples() {
        let lex = Lexicons::default();
        assert_eq!(score_completeness(&req(LOCK), &lex).unwrap(), 5);
        assert_eq!(score_completeness(&req("Works well."), &lex).unwrap(), 1);
        let tc = Artefact::original("1-1", ArtefactKind::TestCase, "Step: x");
        assert!(matches!(score_completeness(&tc, &lex), Err(RubricError::WrongKind { .. })));
    }

    #[test]
    fn testability_examples() {
        let lex = Lexicons::default();
        assert_eq!(score_testability(&req(LOCK), &lex).unwrap(), 5);
        let vague = score_testability(&req("The system should be user-friendly."), &lex).unwrap();
        assert!((1..=2).contains(&vague), "{vague}");
        assert_eq!(score_testability(&req("Do it."), &lex).unwrap(), 1);
        let chained = req("The user shall log in and view the report and export it within 5 seconds.");
        assert_eq!(score_testability(&chained, &lex).unwrap(), 4);
    }

    #[test]
    fn negation_tokens() {
        assert!(is_negated("The account is not locked."));
        assert!(is_negated("Users don't see it."));
        assert!(!is_negated("The account is locked."));
        assert!(!is_negated("The notice is shown."));
    }

    #[test]
    fn consistency_examples() {
        let a = Analyzer::offline();
        let t = Thresholds::default();
        let clean = parse_requirements("REQ-1: The system shall lock the account.\n\nREQ-2: Reports are exported as PDF.").unwrap();
        assert_eq!(score_consistency(&clean, &a, &t).unwrap(), 5);
        let dup = parse_requirements("REQ-1: The system shall lock the account.\n\nREQ-2: The system shall lock the account.").unwrap();
        assert_eq!(score_consistency(&dup, &a, &t).unwrap(), 4);
        let polar = parse_requirements("REQ-1: The account is locked.\n\nREQ-2: The account is not locked.").unwrap();
        assert!(score_consistency(&polar, &a, &t).unwrap() <= 4);
        let empty = Corpus::new("p", ArtefactKind::Requirement);
        assert!(matches!(score_consistency(&empty, &a, &t), Err(RubricError::EmptyCorpus)));
    }

    #[test]
    fn semantic_alignment_mapping() {
        assert_eq!(alignment_score(1.0), 5);
        assert_eq!(alignment_score(0.0), 1);
        assert_eq!(alignment_score(0.78), 4);
        assert_eq!(alignment_score(0.625), 4);
        let a = Analyzer::offline();
        let c = parse_requirements("REQ-1: The system shall lock the account.").unwrap();
        assert_eq!(score_semantic_alignment(&c, &c, &a, &Thresholds::default()).unwrap(), 5);
    }

    #[test]
    fn judge_reply_parsing() {
        let s = parse_judge_reply("Clarity: 4\n**completeness**: 2\ntestability: 5\n").unwrap();
        assert_eq!((s.clarity, s.completeness, s.testability), (4, 2, 5));
        assert!(parse_judge_reply("clarity: 9\ncompleteness: 2\ntestability: 5").is_err());
        assert!(parse_judge_reply("clarity: 3").is_err());
    }

    #[test]
    fn judge_backend_counts_ops() {
        let stats = GenerationStats::default();
        let provider = crate::generation::MockProvider;
        let judge = JudgeRubric::new(&provider, &stats);
        assert!(judge.prompt(&req(LOCK)).contains(LOCK));
        let c = parse_requirements("REQ-1: Lock it.\n\nREQ-2: Store it.").unwrap();
        let scores = score_corpus(&c, &c, &Analyzer::offline(), &Thresholds::default(), &judge).unwrap();
        assert_eq!(scores.len(), 2);
        assert_eq!(scores[0].1.backend_id, "llm-judge");
        assert_eq!(stats.snapshot().judge_ops, 2);
    }

    fn word() -> impl Strategy<Value = String> {
        prop::sample::select(vec![
            "the", "system", "shall", "lock", "account", "after", "3", "failed", "attempts",
            "user", "should", "be", "able", "fast", "report", "if", "not", "and", "or",
            "appropriate", "within", "seconds", "displayed", "then", "admin", "export",
        ])
        .prop_map(str::to_string)
    }

    fn body() -> impl Strategy<Value = String> {
        prop::collection::vec(prop::collection::vec(word(), 1..15), 1..4).prop_map(|sentences| {
            sentences
                .into_iter()
                .map(|s| format!("{}.", s.join(" ")))
                .collect::<Vec<_>>()
                .join(" ")
        })
    }

    proptest! {
        #[test]
        fn scores_are_bounded_and_deterministic(b in body()) {
            let lex = Lexicons::default();
            let a = req(&b);
            let s1 = HeuristicRubric.score_artefact(&a, &lex).unwrap();
            let s2 = HeuristicRubric.score_artefact(&a, &lex).unwrap();
            prop_assert_eq!(s1, s2);
            for v in [s1.clarity, s1.completeness, s1.testability] {
                prop_assert!((1..=5).contains(&v));
            }
        }

        #[test]
        fn ambiguity_never_raises_clarity(b in body(), k in 0usize..16) {
            let lex = AmbiguityLexicon::default();
            let phrase = &lex.phrases()[k % lex.phrases().len()];
            let before = score_clarity(&req(&b), &lex);
            let after = score_clarity(&req(&format!("{b} {phrase}")), &lex);
            prop_assert!(after <= before);
        }

        #[test]
        fn alignment_score_is_monotone(x in 0.0f64..=1.0, y in 0.0f64..=1.0) {
            let (lo, hi) = if x <= y { (x, y) } else { (y, x) };
            prop_assert!(alignment_score(lo) <= alignment_score(hi));
        }
    }
}
