//! Semantic and lexical similarity, the four-band match classification,
//! cross-set alignment and intra-corpus duplicate detection.

use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::{EmbedError, Embedder, EmbeddingVector};
use crate::lexicon::Lexicons;
use crate::text::{extract_entity_verbs, tokenize_normalize, EntityVerbProfile, Segment, TokenSet};

#[derive(Debug, Error)]
pub enum SimilarityError {
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("provider mismatch: `{0}` vs `{1}`")]
    ProviderMismatch(String, String),
    #[error("invalid thresholds: need 0 < low < medium < high < 1, got {low}/{medium}/{high}")]
    InvalidThresholds { high: f64, medium: f64, low: f64 },
    #[error("at least two segments are required, got {0}")]
    TooFewSegments(usize),
    #[error(transparent)]
    Embed(#[from] EmbedError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub high: f64,
    pub medium: f64,
    pub low: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            high: 0.8,
            medium: 0.6,
            low: 0.3,
        }
    }
}

impl Thresholds {
    pub fn new(high: f64, medium: f64, low: f64) -> Result<Self, SimilarityError> {
        let t = Self { high, medium, low };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<(), SimilarityError> {
        let Self { high, medium, low } = *self;
        if 0.0 < low && low < medium && medium < high && high < 1.0 {
            Ok(())
        } else {
            Err(SimilarityError::InvalidThresholds { high, medium, low })
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MatchCategory {
    NoMatch,
    Low,
    Medium,
    High,
}

impl MatchCategory {
    pub const ALL: [MatchCategory; 4] = [
        MatchCategory::NoMatch,
        MatchCategory::Low,
        MatchCategory::Medium,
        MatchCategory::High,
    ];

    pub fn ordinal(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            MatchCategory::NoMatch => "NoMatch",
            MatchCategory::Low => "Low",
            MatchCategory::Medium => "Medium",
            MatchCategory::High => "High",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.as_str() == s)
    }
}

impl fmt::Display for MatchCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// `High` is strictly above `high`; `Medium` and `Low` own their lower bound.
pub fn classify(score: f64, t: &Thresholds) -> MatchCategory {
    if score > t.high {
        MatchCategory::High
    } else if score >= t.medium {
        MatchCategory::Medium
    } else if score >= t.low {
        MatchCategory::Low
    } else {
        MatchCategory::NoMatch
    }
}

/// Dot product of unit vectors clamped to `[0, 1]`; a zero vector scores 0.
pub fn cosine(u: &EmbeddingVector, v: &EmbeddingVector) -> Result<f64, SimilarityError> {
    if u.provider_id != v.provider_id {
        return Err(SimilarityError::ProviderMismatch(
            u.provider_id.clone(),
            v.provider_id.clone(),
        ));
    }
    if u.dim != v.dim || u.values.len() != v.values.len() {
        return Err(SimilarityError::DimensionMismatch(u.dim, v.dim));
    }
    if u.is_zero() || v.is_zero() {
        return Ok(0.0);
    }
    let dot: f64 = u.values.iter().zip(&v.values).map(|(a, b)| a * b).sum();
    Ok(dot.clamp(0.0, 1.0))
}

/// `|a ∩ b| / |a ∪ b|`, with two empty sets scoring 1.0.
pub fn jaccard(a: &TokenSet, b: &TokenSet) -> f64 {
    let union = a.union_len(b);
    if union == 0 {
        return 1.0;
    }
    a.intersection_len(b) as f64 / union as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchPair {
    pub left: Segment,
    pub right: Option<Segment>,
    pub cosine: f64,
    pub jaccard: f64,
    pub category: MatchCategory,
}

impl MatchPair {
    pub fn unmatched(left: Segment) -> Self {
        Self {
            left,
            right: None,
            cosine: 0.0,
            jaccard: 0.0,
            category: MatchCategory::NoMatch,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentResult {
    pub pairs: Vec<MatchPair>,
    pub mean_cosine: f64,
}

impl AlignmentResult {
    /// Pair counts per category, indexed by [`MatchCategory::ordinal`].
    pub fn histogram(&self) -> [usize; 4] {
        let mut h = [0; 4];
        for p in &self.pairs {
            h[p.category.ordinal()] += 1;
        }
        h
    }

    pub fn total_cosine(&self) -> f64 {
        self.pairs.iter().map(|p| p.cosine).sum()
    }
}

/// Embedder plus word lists: everything needed to score segment pairs.
pub struct Analyzer {
    pub embedder: Embedder,
    pub lexicons: Lexicons,
}

impl Analyzer {
    pub fn new(embedder: Embedder, lexicons: Lexicons) -> Self {
        Self { embedder, lexicons }
    }

    /// Hash embedder and shipped word lists.
    pub fn offline() -> Self {
        let lexicons = Lexicons::default();
        Self {
            embedder: Embedder::hashing(lexicons.stopwords.clone()),
            lexicons,
        }
    }

    pub fn tokens(&self, text: &str) -> TokenSet {
        tokenize_normalize(text, &self.lexicons.stopwords)
    }

    pub fn profile(&self, text: &str) -> EntityVerbProfile {
        extract_entity_verbs(text, &self.lexicons.verbs, &self.lexicons.stopwords)
    }

    pub fn embed_segments(&self, segments: &[Segment]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        if segments.is_empty() {
            return Ok(Vec::new());
        }
        let texts: Vec<&str> = segments.iter().map(|s| s.text.as_str()).collect();
        self.embedder.embed_many(&texts)
    }

    pub fn cosine_text(&self, a: &str, b: &str) -> Result<f64, SimilarityError> {
        let vs = self.embedder.embed_many(&[a, b])?;
        cosine(&vs[0], &vs[1])
    }

    fn scored_pair(
        &self,
        left: &Segment,
        right: &Segment,
        cos: f64,
        t: &Thresholds,
    ) -> MatchPair {
        MatchPair {
            left: left.clone(),
            right: Some(right.clone()),
            cosine: cos,
            jaccard: jaccard(&self.tokens(&left.text), &self.tokens(&right.text)),
            category: classify(cos, t),
        }
    }
}

fn by_score_then_index(a: &(f64, usize, usize), b: &(f64, usize, usize)) -> Ordering {
    b.0.total_cmp(&a.0)
        .then(a.1.cmp(&b.1))
        .then(a.2.cmp(&b.2))
}

/// Greedy global best-first matching over a score matrix.
///
/// Repeatedly takes the highest-scoring free `(row, column)` pair with score
/// `>= min_score`; ties go to the lower row, then the lower column. Returns
/// the pairs in the order they were chosen.
pub fn greedy_assignment(scores: &[Vec<f64>], min_score: f64) -> Vec<(usize, usize)> {
    let cols = scores.first().map_or(0, Vec::len);
    let mut candidates: Vec<(f64, usize, usize)> = scores
        .iter()
        .enumerate()
        .flat_map(|(i, row)| row.iter().enumerate().map(move |(j, &s)| (s, i, j)))
        .filter(|(s, _, _)| *s >= min_score)
        .collect();
    candidates.sort_by(by_score_then_index);

    let mut row_used = vec![false; scores.len()];
    let mut col_used = vec![false; cols];
    let mut chosen = Vec::new();
    for (_, i, j) in candidates {
        if !row_used[i] && !col_used[j] {
            row_used[i] = true;
            col_used[j] = true;
            chosen.push((i, j));
        }
    }
    chosen
}

/// Cosine matrix between two embedded segment lists.
pub fn score_matrix(
    left: &[EmbeddingVector],
    right: &[EmbeddingVector],
) -> Result<Vec<Vec<f64>>, SimilarityError> {
    left.iter()
        .map(|u| right.iter().map(|v| cosine(u, v)).collect())
        .collect()
}

pub fn align_cross(
    left: &[Segment],
    right: &[Segment],
    analyzer: &Analyzer,
    t: &Thresholds,
) -> Result<AlignmentResult, SimilarityError> {
    let lv = analyzer.embed_segments(left)?;
    let rv = analyzer.embed_segments(right)?;
    let scores = score_matrix(&lv, &rv)?;

    let mut matched: Vec<Option<usize>> = vec![None; left.len()];
    for (i, j) in greedy_assignment(&scores, t.low) {
        matched[i] = Some(j);
    }

    let pairs: Vec<MatchPair> = left
        .iter()
        .zip(&matched)
        .enumerate()
        .map(|(i, (seg, m))| match m {
            Some(j) => analyzer.scored_pair(seg, &right[*j], scores[i][*j], t),
            None => MatchPair::unmatched(seg.clone()),
        })
        .collect();
    let mean_cosine = if pairs.is_empty() {
        0.0
    } else {
        pairs.iter().map(|p| p.cosine).sum::<f64>() / pairs.len() as f64
    };
    Ok(AlignmentResult { pairs, mean_cosine })
}

/// Pairs of segments from distinct artefacts scoring `Medium` or better,
/// by descending cosine (ties by segment position).
pub fn dedup_intra(
    segments: &[Segment],
    analyzer: &Analyzer,
    t: &Thresholds,
) -> Result<Vec<MatchPair>, SimilarityError> {
    if segments.len() < 2 {
        return Err(SimilarityError::TooFewSegments(segments.len()));
    }
    let vs = analyzer.embed_segments(segments)?;
    let mut found: Vec<(f64, usize, usize)> = Vec::new();
    for i in 0..segments.len() {
        for j in (i + 1)..segments.len() {
            if segments[i].artefact_id == segments[j].artefact_id {
                continue;
            }
            let c = cosine(&vs[i], &vs[j])?;
            if classify(c, t) >= MatchCategory::Medium {
                found.push((c, i, j));
            }
        }
    }
    found.sort_by(by_score_then_index);
    Ok(found
        .into_iter()
        .map(|(c, i, j)| analyzer.scored_pair(&segments[i], &segments[j], c, t))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn unit(values: &[f64]) -> EmbeddingVector {
        EmbeddingVector::normalized("test", values.to_vec())
    }

    fn seg(artefact: &str, index: usize, text: &str) -> Segment {
        Segment {
            artefact_id: artefact.into(),
            index,
            text: text.into(),
        }
    }

    #[test]
    fn cosine_examples() {
        let u = unit(&[0.6, 0.8]);
        assert!((cosine(&u, &u).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(cosine(&unit(&[1.0, 0.0]), &unit(&[0.0, 1.0])).unwrap(), 0.0);
        let c = cosine(&unit(&[0.6, 0.8]), &unit(&[0.8, 0.6])).unwrap();
        assert!((c - 0.96).abs() < 1e-12);
        assert_eq!(cosine(&unit(&[1.0, 0.0]), &unit(&[-1.0, 0.0])).unwrap(), 0.0);
        assert_eq!(cosine(&unit(&[0.0, 0.0]), &u).unwrap(), 0.0);
    }

    #[test]
    fn cosine_errors() {
        let a = unit(&[1.0, 0.0]);
        assert!(matches!(
            cosine(&a, &unit(&[1.0, 0.0, 0.0])),
            Err(SimilarityError::DimensionMismatch(2, 3))
        ));
        let other = EmbeddingVector::normalized("other", vec![1.0, 0.0]);
        assert!(matches!(cosine(&a, &other), Err(SimilarityError::ProviderMismatch(..))));
    }

    #[test]
    fn jaccard_examples() {
        let s = |xs: &[&str]| xs.iter().copied().collect::<TokenSet>();
        assert_eq!(jaccard(&s(&["a", "b"]), &s(&["a", "b"])), 1.0);
        assert_eq!(jaccard(&s(&["a"]), &s(&["b"])), 0.0);
        assert_eq!(jaccard(&s(&[]), &s(&[])), 1.0);
        let a = s(&["system", "log", "errors", "failed"]);
        let b = s(&["system", "log", "errors", "warnings"]);
        assert_eq!(jaccard(&a, &b), 0.6);
    }

    #[test]
    fn classify_bands() {
        let t = Thresholds::default();
        assert_eq!(classify(0.85, &t), MatchCategory::High);
        assert_eq!(classify(0.80, &t), MatchCategory::Medium);
        assert_eq!(classify(0.45, &t), MatchCategory::Low);
        assert_eq!(classify(0.10, &t), MatchCategory::NoMatch);
        let probes = [0.0, 0.29, 0.3, 0.59, 0.6, 0.8, 0.81, 1.0];
        let got: Vec<_> = probes.iter().map(|&p| classify(p, &t)).collect();
        use MatchCategory::*;
        assert_eq!(got, [NoMatch, NoMatch, Low, Low, Medium, Medium, High, High]);
    }

    #[test]
    fn thresholds_validation() {
        assert!(Thresholds::new(0.8, 0.6, 0.3).is_ok());
        assert!(Thresholds::new(0.6, 0.8, 0.3).is_err());
        assert!(Thresholds::new(1.0, 0.6, 0.3).is_err());
        assert!(Thresholds::new(0.8, 0.6, 0.0).is_err());
    }

    #[test]
    fn align_identical_singletons() {
        let a = Analyzer::offline();
        let l = [seg("1", 0, "The system shall lock the account.")];
        let r = [seg("1", 0, "The system shall lock the account.")];
        let res = align_cross(&l, &r, &a, &Thresholds::default()).unwrap();
        assert_eq!(res.pairs.len(), 1);
        assert!((res.pairs[0].cosine - 1.0).abs() < 1e-9);
        assert!((res.mean_cosine - 1.0).abs() < 1e-9);
        assert_eq!(res.pairs[0].category, MatchCategory::High);
    }

    #[test]
    fn align_against_empty_right() {
        let a = Analyzer::offline();
        let l = [seg("1", 0, "Lock the account."), seg("1", 1, "Notify the admin.")];
        let res = align_cross(&l, &[], &a, &Thresholds::default()).unwrap();
        assert_eq!(res.pairs.len(), 2);
        assert!(res.pairs.iter().all(|p| p.right.is_none() && p.category == MatchCategory::NoMatch));
        assert_eq!(res.mean_cosine, 0.0);
    }

    #[test]
    fn greedy_tie_breaking() {
        let scores = vec![vec![0.5, 0.5], vec![0.5, 0.5]];
        assert_eq!(greedy_assignment(&scores, 0.3), [(0, 0), (1, 1)]);
        let scores = vec![vec![1.0, 0.75], vec![0.75, 0.0]];
        assert_eq!(greedy_assignment(&scores, 0.3), [(0, 0)]);
        assert!(greedy_assignment(&[], 0.3).is_empty());
    }

    #[test]
    fn dedup_examples() {
        let a = Analyzer::offline();
        let t = Thresholds::default();
        let dup = [
            seg("1", 0, "The system shall log failed logins."),
            seg("2", 0, "The system shall log failed logins."),
        ];
        let pairs = dedup_intra(&dup, &a, &t).unwrap();
        assert_eq!(pairs.len(), 1);
        assert_eq!(pairs[0].category, MatchCategory::High);
        assert!((pairs[0].cosine - 1.0).abs() < 1e-9);

        let distinct = [
            seg("1", 0, "Passwords expire every ninety days."),
            seg("2", 0, "Reports export to spreadsheet format."),
        ];
        assert!(dedup_intra(&distinct, &a, &t).unwrap().is_empty());

        let same_artefact = [seg("1", 0, "Log errors."), seg("1", 1, "Log errors.")];
        assert!(dedup_intra(&same_artefact, &a, &t).unwrap().is_empty());

        assert!(matches!(
            dedup_intra(&dup[..1], &a, &t),
            Err(SimilarityError::TooFewSegments(1))
        ));
    }

    proptest! {
        #[test]
        fn classify_is_monotone(a in 0.0f64..=1.0, b in 0.0f64..=1.0) {
            let t = Thresholds::default();
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(classify(lo, &t) <= classify(hi, &t));
        }

        #[test]
        fn cosine_and_jaccard_are_symmetric(x in "[a-h ]{0,30}", y in "[a-h ]{0,30}") {
            let a = Analyzer::offline();
            let stop = &a.lexicons.stopwords;
            let (u, v) = (crate::embedding::hash_embed(&x, stop), crate::embedding::hash_embed(&y, stop));
            prop_assert_eq!(cosine(&u, &v).unwrap(), cosine(&v, &u).unwrap());
            let c = cosine(&u, &v).unwrap();
            prop_assert!((0.0..=1.0).contains(&c));
            prop_assert_eq!(jaccard(&a.tokens(&x), &a.tokens(&y)), jaccard(&a.tokens(&y), &a.tokens(&x)));
        }

        #[test]
        fn greedy_is_injective(scores in prop::collection::vec(prop::collection::vec(0.0f64..=1.0, 4), 0..5)) {
            let chosen = greedy_assignment(&scores, 0.3);
            let mut rows: Vec<_> = chosen.iter().map(|p| p.0).collect();
            let mut cols: Vec<_> = chosen.iter().map(|p| p.1).collect();
            rows.sort_unstable();
            cols.sort_unstable();
            rows.dedup();
            cols.dedup();
            prop_assert_eq!(rows.len(), chosen.len());
            prop_assert_eq!(cols.len(), chosen.len());
            for (i, j) in chosen {
                prop_assert!(scores[i][j] >= 0.3);
            }
        }
    }
}
