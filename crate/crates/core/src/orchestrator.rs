//! Closed-loop refinement: reverse generation, alignment, review queue,
//! decision application, unified synthesis and convergence.
//!
//! A run keeps three requirement corpora apart. `original` is the reference
//! every cycle is measured against, `working` is what forward generation is
//! fed (it starts as the original, or a degraded copy, and is rewritten by
//! decisions), and `reverse` is what came back from the derived artefacts.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::artefact::{Artefact, ArtefactKind, Corpus, Origin};
use crate::clock::Clock;
use crate::config::{ConvergenceConfig, ProjectConfig, RubricBackendKind};
use crate::generation::{
    degrade, forward_generate, reverse_generate, DegradationSpec, GenerationError, GenerationProvider,
    GenerationStats, MockProvider, OpCounts,
};
use crate::reporting::{
    CategoryHistogram, ImpactRow, RubricMeans, SemanticResultRow, SummaryRecord, UpdatedRequirementRow,
};
use crate::rubric::{mean_scores, score_corpus, HeuristicRubric, JudgeRubric, RubricBackend, RubricError, RubricScores};
use crate::similarity::{
    align_cross, classify, dedup_intra, AlignmentResult, Analyzer, MatchCategory, MatchPair, SimilarityError,
};
use crate::text::{segment_all, segment_texts, Segment, TextError};

#[derive(Debug, Error)]
pub enum OrchestratorError {
    #[error(transparent)]
    Generation(#[from] GenerationError),
    #[error(transparent)]
    Similarity(#[from] SimilarityError),
    #[error(transparent)]
    Rubric(#[from] RubricError),
    #[error(transparent)]
    Text(#[from] TextError),
    #[error("working corpus is empty")]
    EmptyCorpus,
    #[error("expected a requirement corpus, got {0}")]
    WrongKind(ArtefactKind),
    #[error("cycle limit of {0} reached")]
    CycleLimitExceeded(u32),
    #[error("session is {0:?}; expected AwaitingReview")]
    WrongState(SessionStatus),
    #[error("unknown pair id `{0}`")]
    UnknownPairId(String),
    #[error("conflicting decisions for `{0}`")]
    ConflictingDecisions(String),
    #[error("invalid decision for `{pair_id}`: {reason}")]
    InvalidDecision { pair_id: String, reason: String },
}

impl From<crate::embedding::EmbedError> for OrchestratorError {
    fn from(e: crate::embedding::EmbedError) -> Self {
        OrchestratorError::Similarity(e.into())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecommendationAction {
    Merge,
    Refine,
    KeepDistinct,
    AddCoverage,
}

impl RecommendationAction {
    pub fn as_str(self) -> &'static str {
        match self {
            RecommendationAction::Merge => "merge",
            RecommendationAction::Refine => "refine",
            RecommendationAction::KeepDistinct => "keep_distinct",
            RecommendationAction::AddCoverage => "add_coverage",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [Self::Merge, Self::Refine, Self::KeepDistinct, Self::AddCoverage]
            .into_iter()
            .find(|a| a.as_str() == s)
    }
}

/// Original-vs-reverse pair, or two segments of the working corpus.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairScope {
    Cross,
    Intra,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recommendation {
    pub pair_id: String,
    pub scope: PairScope,
    pub pair: MatchPair,
    pub action: RecommendationAction,
    /// Borderline items a reviewer must confirm; the rest are suggestions.
    pub requires_human: bool,
    pub rationale: String,
    pub testing_impact: String,
    pub entity_overlap: Vec<String>,
    pub verb_overlap: Vec<String>,
    /// Text a reviewer would start editing from.
    pub suggested_text: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReviewDecision {
    pub pair_id: String,
    pub verdict: RecommendationAction,
    #[serde(default)]
    pub edited_text: Option<String>,
    pub reviewer: String,
    pub decided_at: DateTime<Utc>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SessionStatus {
    AwaitingReview,
    Running,
    Converged,
    CycleLimit,
}

/// What `apply_decisions` did, kept for the audit trail.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub cycle: u32,
    pub applied_at: DateTime<Utc>,
    pub decisions: Vec<ReviewDecision>,
    pub updates: Vec<UpdatedRequirementRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleState {
    pub project_id: String,
    /// Completed cycles; equals `history.len()`.
    pub cycle: u32,
    pub status: SessionStatus,
    pub original: Corpus,
    pub working: Corpus,
    pub derived: Corpus,
    pub reverse: Corpus,
    pub alignment: AlignmentResult,
    pub dedup: Vec<MatchPair>,
    pub queue: Vec<Recommendation>,
    pub scores: Vec<(String, RubricScores)>,
    pub semantic: Vec<SemanticResultRow>,
    pub impact: Vec<ImpactRow>,
    /// Requirement edits that produced this cycle's working corpus.
    pub updates: Vec<UpdatedRequirementRow>,
    pub history: Vec<SummaryRecord>,
    pub ops: OpCounts,
    pub suppressed: BTreeSet<String>,
}

impl CycleState {
    pub fn mean_rubric(&self) -> f64 {
        mean_of(&self.scores)
    }

    pub fn recommendation(&self, pair_id: &str) -> Option<&Recommendation> {
        self.queue.iter().find(|r| r.pair_id == pair_id)
    }
}

fn mean_of(scores: &[(String, RubricScores)]) -> f64 {
    let means = mean_scores(scores.iter().map(|(_, s)| s));
    means.iter().sum::<f64>() / means.len() as f64
}

/// Everything a cycle needs besides its state.
pub struct Pipeline {
    pub analyzer: Analyzer,
    pub provider: Arc<dyn GenerationProvider>,
    pub config: ProjectConfig,
    pub clock: Clock,
}

impl Pipeline {
    /// Mock generation, hash embeddings, shipped lexicons.
    pub fn offline(config: ProjectConfig) -> Self {
        Self {
            analyzer: Analyzer::offline(),
            provider: Arc::new(MockProvider),
            config,
            clock: Clock::from_env(),
        }
    }

    fn backend<'a>(&'a self, stats: &'a GenerationStats) -> Box<dyn RubricBackend + 'a> {
        match self.config.providers.rubric_backend {
            RubricBackendKind::Heuristic => Box::new(HeuristicRubric),
            RubricBackendKind::Judge => Box::new(JudgeRubric::new(self.provider.as_ref(), stats)),
        }
    }

    fn forward(&self, working: &Corpus, stats: &GenerationStats, cycle: u32) -> Result<Corpus, OrchestratorError> {
        Ok(forward_generate(
            working,
            self.config.providers.target_kind,
            self.provider.as_ref(),
            stats,
            self.config.providers.batch_options(),
            cycle,
        )?)
    }
}

fn require_requirements(c: &Corpus) -> Result<(), OrchestratorError> {
    if c.kind != ArtefactKind::Requirement {
        return Err(OrchestratorError::WrongKind(c.kind));
    }
    if c.is_empty() {
        return Err(OrchestratorError::EmptyCorpus);
    }
    Ok(())
}

/// Builds the initial state and runs cycle 1. `derived` is generated from
/// `working` unless ingested test artefacts are supplied.
pub fn start(
    pipeline: &Pipeline,
    original: Corpus,
    working: Corpus,
    derived: Option<Corpus>,
) -> Result<CycleState, OrchestratorError> {
    require_requirements(&original)?;
    require_requirements(&working)?;
    let stats = GenerationStats::default();
    let derived = match derived {
        Some(d) => d,
        None => pipeline.forward(&working, &stats, 0)?,
    };
    let mut state = CycleState {
        project_id: original.project_id.clone(),
        cycle: 0,
        status: SessionStatus::Running,
        reverse: Corpus::new(original.project_id.clone(), ArtefactKind::Requirement),
        original,
        working,
        derived,
        alignment: AlignmentResult {
            pairs: Vec::new(),
            mean_cosine: 0.0,
        },
        dedup: Vec::new(),
        queue: Vec::new(),
        scores: Vec::new(),
        semantic: Vec::new(),
        impact: Vec::new(),
        updates: Vec::new(),
        history: Vec::new(),
        ops: stats.snapshot(),
        suppressed: BTreeSet::new(),
    };
    run_cycle(&mut state, pipeline)?;
    Ok(state)
}

fn previous_ops(history: &[SummaryRecord]) -> OpCounts {
    history.iter().fold(OpCounts::default(), |acc, r| OpCounts {
        forward_ops: acc.forward_ops + r.ops.forward_ops,
        reverse_ops: acc.reverse_ops + r.ops.reverse_ops,
        judge_ops: acc.judge_ops + r.ops.judge_ops,
    })
}

/// Reverse-generates from `state.derived`, aligns against the original,
/// rebuilds the review queue, scores and appends a summary record.
pub fn run_cycle(state: &mut CycleState, pipeline: &Pipeline) -> Result<(), OrchestratorError> {
    let conv = pipeline.config.convergence;
    if state.history.len() as u32 >= conv.max_cycles {
        return Err(OrchestratorError::CycleLimitExceeded(conv.max_cycles));
    }
    if state.working.is_empty() {
        return Err(OrchestratorError::EmptyCorpus);
    }
    let cycle = state.history.len() as u32 + 1;
    let analyzer = &pipeline.analyzer;
    let t = pipeline.config.thresholds.requirement;
    let stats = GenerationStats::from_counts(state.ops);

    let reverse = reverse_generate(
        &state.derived,
        pipeline.provider.as_ref(),
        &stats,
        pipeline.config.providers.batch_options(),
        cycle,
    )?
    .with_project_id(state.project_id.clone());
    let left = segment_all(&state.original.artefacts)?;
    let right = segment_all(&reverse.artefacts)?;
    let alignment = align_cross(&left, &right, analyzer, &t)?;

    let working_segments = segment_all(&state.working.artefacts)?;
    let dedup: Vec<MatchPair> = if working_segments.len() < 2 {
        Vec::new()
    } else {
        dedup_intra(&working_segments, analyzer, &t)?
            .into_iter()
            .filter(|p| !state.suppressed.contains(&intra_pair_id(p)))
            .collect()
    };
    let queue: Vec<Recommendation> = build_review_queue(&alignment, &dedup, analyzer)
        .into_iter()
        .filter(|r| !state.suppressed.contains(&r.pair_id))
        .collect();

    let semantic = semantic_rows(&alignment, &queue, analyzer);
    let backend = pipeline.backend(&stats);
    let scores = score_corpus(&reverse, &state.original, analyzer, &t, backend.as_ref())?;
    drop(backend);
    let derived_t = pipeline.config.thresholds.for_kind(state.derived.kind);
    let impact = impact_rows(&state.working, &state.derived, analyzer, &derived_t)?;

    let ops = stats.snapshot();
    let before = previous_ops(&state.history);
    let means = mean_scores(scores.iter().map(|(_, s)| s));
    state.history.push(SummaryRecord {
        cycle,
        mean_cosine: alignment.mean_cosine,
        histogram: CategoryHistogram::from_counts(alignment.histogram()),
        rubric: RubricMeans::from_array(means),
        ops: OpCounts {
            forward_ops: ops.forward_ops - before.forward_ops,
            reverse_ops: ops.reverse_ops - before.reverse_ops,
            judge_ops: ops.judge_ops - before.judge_ops,
        },
    });
    state.cycle = cycle;
    state.ops = ops;
    state.reverse = reverse;
    state.alignment = alignment;
    state.dedup = dedup;
    state.queue = queue;
    state.scores = scores;
    state.semantic = semantic;
    state.impact = impact;

    state.status = if state.queue.is_empty() {
        SessionStatus::Converged
    } else if plateaued(&state.history, &conv) {
        state.queue.clear();
        SessionStatus::Converged
    } else if cycle >= conv.max_cycles {
        SessionStatus::CycleLimit
    } else {
        SessionStatus::AwaitingReview
    };
    tracing::info!(cycle, mean_cosine = state.alignment.mean_cosine, status = ?state.status, "cycle complete");
    Ok(())
}

fn plateaued(history: &[SummaryRecord], conv: &ConvergenceConfig) -> bool {
    match history {
        [.., prev, last] => {
            (last.rubric.overall() - prev.rubric.overall()).abs() < conv.rubric_delta
                && (last.mean_cosine - prev.mean_cosine).abs() < conv.cosine_delta
        }
        _ => false,
    }
}

/// True once scores stop moving between the last two cycles, or the cycle
/// budget is spent.
pub fn check_convergence(history: &[SummaryRecord], conv: &ConvergenceConfig) -> bool {
    history.last().is_some_and(|last| last.cycle >= conv.max_cycles) || plateaued(history, conv)
}

pub fn cross_pair_id(p: &MatchPair) -> String {
    match &p.right {
        Some(r) => format!("cross/{}/{}", p.left.key(), r.key()),
        None => format!("cross/{}/-", p.left.key()),
    }
}

pub fn intra_pair_id(p: &MatchPair) -> String {
    let right = p.right.as_ref().map_or_else(|| "-".to_string(), Segment::key);
    format!("intra/{}/{}", p.left.key(), right)
}

fn join_words(set: &BTreeSet<String>) -> String {
    set.iter().cloned().collect::<Vec<_>>().join(", ")
}

fn rationale(p: &MatchPair, entities: &BTreeSet<String>, verbs: &BTreeSet<String>) -> String {
    match &p.right {
        Some(r) => format!(
            "{} vs {}: cosine {:.4} ({}), jaccard {:.4}; shared entities [{}], shared verbs [{}]. \"{}\" / \"{}\"",
            p.left.key(),
            r.key(),
            p.cosine,
            p.category,
            p.jaccard,
            join_words(entities),
            join_words(verbs),
            p.left.text,
            r.text,
        ),
        None => format!(
            "{} has no counterpart: cosine {:.4} ({}). \"{}\"",
            p.left.key(),
            p.cosine,
            p.category,
            p.left.text,
        ),
    }
}

fn testing_impact(action: RecommendationAction, p: &MatchPair) -> String {
    let id = &p.left.artefact_id;
    match action {
        RecommendationAction::Refine => {
            format!("Derived tests cover {id} only partly; revise the wording or the tests before relying on them.")
        }
        RecommendationAction::AddCoverage => {
            format!("No derived test traces back to this part of {id}; add a test for it.")
        }
        RecommendationAction::Merge => {
            "Tests for both items likely duplicate each other; merge to avoid redundant runs.".to_string()
        }
        RecommendationAction::KeepDistinct => {
            "Related but separate items; keep both test sets and review shared steps.".to_string()
        }
    }
}

fn robustness_of(text: &str, analyzer: &Analyzer) -> u32 {
    let a = Artefact::original("x", ArtefactKind::Requirement, text);
    HeuristicRubric
        .score_artefact(&a, &analyzer.lexicons)
        .map_or(0, |s| u32::from(s.clarity) + u32::from(s.completeness) + u32::from(s.testability))
}

fn recommendation(
    pair: &MatchPair,
    scope: PairScope,
    action: RecommendationAction,
    requires_human: bool,
    analyzer: &Analyzer,
) -> Recommendation {
    let left = analyzer.profile(&pair.left.text);
    let (entities, verbs) = match &pair.right {
        Some(r) => {
            let right = analyzer.profile(&r.text);
            (left.entity_overlap(&right), left.verb_overlap(&right))
        }
        None => (BTreeSet::new(), BTreeSet::new()),
    };
    let suggested_text = match action {
        RecommendationAction::Refine => Some(match &pair.right {
            Some(r) if robustness_of(&r.text, analyzer) > robustness_of(&pair.left.text, analyzer) => r.text.clone(),
            _ => pair.left.text.clone(),
        }),
        RecommendationAction::AddCoverage => Some(pair.left.text.clone()),
        _ => None,
    };
    Recommendation {
        pair_id: match scope {
            PairScope::Cross => cross_pair_id(pair),
            PairScope::Intra => intra_pair_id(pair),
        },
        scope,
        pair: pair.clone(),
        action,
        requires_human,
        rationale: rationale(pair, &entities, &verbs),
        testing_impact: testing_impact(action, pair),
        entity_overlap: entities.into_iter().collect(),
        verb_overlap: verbs.into_iter().collect(),
        suggested_text,
    }
}

/// Maps cross pairs (Medium/Low → Refine, NoMatch → AddCoverage, High → none)
/// and intra pairs (High → Merge, Medium → KeepDistinct) to recommendations,
/// ordered by descending cosine, then pair id.
pub fn build_review_queue(
    alignment: &AlignmentResult,
    dedup: &[MatchPair],
    analyzer: &Analyzer,
) -> Vec<Recommendation> {
    let mut queue: Vec<Recommendation> = Vec::new();
    for p in &alignment.pairs {
        let item = match p.category {
            MatchCategory::High => None,
            MatchCategory::Medium => Some((RecommendationAction::Refine, true)),
            MatchCategory::Low => Some((RecommendationAction::Refine, false)),
            MatchCategory::NoMatch => Some((RecommendationAction::AddCoverage, false)),
        };
        if let Some((action, human)) = item {
            queue.push(recommendation(p, PairScope::Cross, action, human, analyzer));
        }
    }
    for p in dedup {
        let item = match p.category {
            MatchCategory::High => Some((RecommendationAction::Merge, false)),
            MatchCategory::Medium => Some((RecommendationAction::KeepDistinct, true)),
            _ => None,
        };
        if let Some((action, human)) = item {
            queue.push(recommendation(p, PairScope::Intra, action, human, analyzer));
        }
    }
    queue.sort_by(|a, b| {
        b.pair
            .cosine
            .total_cmp(&a.pair.cosine)
            .then_with(|| a.pair_id.cmp(&b.pair_id))
    });
    queue
}

fn ensure_terminator(text: &str) -> String {
    let t = text.trim();
    if t.ends_with(['.', '!', '?']) {
        t.to_string()
    } else {
        format!("{t}.")
    }
}

/// Requirement corpus split into addressable segment slots.
struct Slots {
    artefacts: Vec<(Artefact, Vec<Option<String>>, bool)>,
    added: Vec<Artefact>,
}

impl Slots {
    fn new(c: &Corpus) -> Self {
        Self {
            artefacts: c
                .artefacts
                .iter()
                .map(|a| (a.clone(), segment_texts(&a.body).into_iter().map(Some).collect(), false))
                .collect(),
            added: Vec::new(),
        }
    }

    fn slot(&mut self, seg: &Segment) -> Option<(&mut Option<String>, &mut bool)> {
        self.artefacts
            .iter_mut()
            .find(|(a, _, _)| a.id == seg.artefact_id)
            .and_then(|(_, slots, touched)| slots.get_mut(seg.index).map(|s| (s, touched)))
            .filter(|(s, _)| s.is_some())
    }

    /// Replaces a segment's text, returning the prior text.
    fn set(&mut self, seg: &Segment, text: &str) -> Option<String> {
        let (slot, touched) = self.slot(seg)?;
        *touched = true;
        slot.replace(text.trim().to_string())
    }

    fn remove(&mut self, seg: &Segment) -> Option<String> {
        let (slot, touched) = self.slot(seg)?;
        *touched = true;
        slot.take()
    }

    fn exists(&self, id: &str) -> bool {
        self.artefacts.iter().any(|(a, _, _)| a.id == id) || self.added.iter().any(|a| a.id == id)
    }

    fn add(&mut self, base_id: &str, text: &str, cycle: u32) -> String {
        let id = (1..)
            .map(|k| format!("{base_id}-ADD{k}"))
            .find(|id| !self.exists(id))
            .expect("unbounded id space");
        self.added.push(
            Artefact::original(id.clone(), ArtefactKind::Requirement, ensure_terminator(text))
                .with_origin(Origin::Unified, cycle),
        );
        id
    }

    fn into_corpus(self, template: &Corpus, cycle: u32) -> Corpus {
        let mut artefacts = Vec::new();
        for (mut a, slots, touched) in self.artefacts {
            if touched {
                let kept: Vec<String> = slots.into_iter().flatten().map(|s| ensure_terminator(&s)).collect();
                if kept.is_empty() {
                    continue;
                }
                a.body = kept.join(" ");
            }
            artefacts.push(a.with_origin(Origin::Unified, cycle));
        }
        artefacts.extend(self.added);
        Corpus {
            project_id: template.project_id.clone(),
            kind: ArtefactKind::Requirement,
            artefacts,
        }
    }
}

fn invalid(pair_id: &str, reason: &str) -> OrchestratorError {
    OrchestratorError::InvalidDecision {
        pair_id: pair_id.to_string(),
        reason: reason.to_string(),
    }
}

/// Rejects unknown ids, conflicting duplicates and verdicts that make no
/// sense for the item; returns decisions with exact duplicates collapsed.
pub fn validate_decisions<'a>(
    queue: &'a [Recommendation],
    decisions: &[ReviewDecision],
) -> Result<Vec<(&'a Recommendation, ReviewDecision)>, OrchestratorError> {
    let mut by_id: BTreeMap<&str, &ReviewDecision> = BTreeMap::new();
    let mut ordered = Vec::new();
    for d in decisions {
        if let Some(prev) = by_id.get(d.pair_id.as_str()) {
            if prev.verdict != d.verdict || prev.edited_text != d.edited_text {
                return Err(OrchestratorError::ConflictingDecisions(d.pair_id.clone()));
            }
            continue;
        }
        let rec = queue
            .iter()
            .find(|r| r.pair_id == d.pair_id)
            .ok_or_else(|| OrchestratorError::UnknownPairId(d.pair_id.clone()))?;
        if d.edited_text.as_deref().is_some_and(|t| t.trim().is_empty()) {
            return Err(invalid(&d.pair_id, "edited_text must not be empty"));
        }
        let allowed = match rec.scope {
            PairScope::Cross => matches!(
                d.verdict,
                RecommendationAction::Refine | RecommendationAction::AddCoverage | RecommendationAction::KeepDistinct
            ),
            PairScope::Intra => matches!(d.verdict, RecommendationAction::Merge | RecommendationAction::KeepDistinct),
        };
        if !allowed {
            return Err(invalid(&d.pair_id, "verdict does not apply to this pair"));
        }
        by_id.insert(&d.pair_id, d);
        ordered.push((rec, d.clone()));
    }
    Ok(ordered)
}

fn apply_to_slots(
    slots: &mut Slots,
    decisions: &[(&Recommendation, ReviewDecision)],
    suppressed: &mut BTreeSet<String>,
    cycle: u32,
) -> Result<Vec<UpdatedRequirementRow>, OrchestratorError> {
    let mut rows = Vec::new();
    let row = |id: &str, prior: String, updated: String, action, reviewer: &str| UpdatedRequirementRow {
        requirement_id: id.to_string(),
        cycle,
        prior_text: prior,
        updated_text: updated,
        action_applied: action,
        reviewer: reviewer.to_string(),
    };
    // Removals last so that a merge never shifts a slot another decision targets.
    let mut merges = Vec::new();
    for (rec, d) in decisions {
        let p = &rec.pair;
        match d.verdict {
            RecommendationAction::Refine => {
                let text = d
                    .edited_text
                    .clone()
                    .or_else(|| rec.suggested_text.clone())
                    .unwrap_or_else(|| p.left.text.clone());
                let target = p
                    .right
                    .iter()
                    .chain(std::iter::once(&p.left))
                    .find(|s| slots.slot(s).is_some())
                    .cloned()
                    .ok_or_else(|| invalid(&d.pair_id, "no working segment to refine"))?;
                let prior = slots.set(&target, &text).unwrap_or_default();
                rows.push(row(&target.artefact_id, prior, text, d.verdict, &d.reviewer));
            }
            RecommendationAction::AddCoverage => {
                let text = d.edited_text.clone().unwrap_or_else(|| p.left.text.clone());
                let id = slots.add(&p.left.artefact_id, &text, cycle);
                rows.push(row(&id, String::new(), ensure_terminator(&text), d.verdict, &d.reviewer));
            }
            RecommendationAction::KeepDistinct => {
                suppressed.insert(rec.pair_id.clone());
                let text = p.right.as_ref().unwrap_or(&p.left).text.clone();
                let id = p.right.as_ref().unwrap_or(&p.left).artefact_id.clone();
                rows.push(row(&id, text.clone(), text, d.verdict, &d.reviewer));
            }
            RecommendationAction::Merge => {
                let dup = p
                    .right
                    .clone()
                    .ok_or_else(|| invalid(&d.pair_id, "merge needs two segments"))?;
                merges.push((dup, d.reviewer.clone()));
            }
        }
    }
    for (dup, reviewer) in merges {
        if let Some(prior) = slots.remove(&dup) {
            rows.push(row(&dup.artefact_id, prior, String::new(), RecommendationAction::Merge, &reviewer));
        }
    }
    Ok(rows)
}

/// Applies reviewer decisions to the working corpus. Atomic: on error the
/// state is untouched.
pub fn apply_decisions(
    state: &mut CycleState,
    decisions: &[ReviewDecision],
    clock: &Clock,
) -> Result<AuditRecord, OrchestratorError> {
    let validated = validate_decisions(&state.queue, decisions)?;
    let cycle = state.cycle + 1;
    let mut slots = Slots::new(&state.working);
    let mut suppressed = state.suppressed.clone();
    let updates = apply_to_slots(&mut slots, &validated, &mut suppressed, cycle)?;
    if !validated.is_empty() {
        state.working = slots.into_corpus(&state.working, cycle);
        state.suppressed = suppressed;
    }
    Ok(AuditRecord {
        cycle,
        applied_at: clock.now(),
        decisions: validated.into_iter().map(|(_, d)| d).collect(),
        updates,
    })
}

/// Keeps, per aligned pair, the more robust of the working and reverse
/// segment (ties keep the working text), then applies the decisions.
/// Decision edits win over synthesis.
pub fn synthesize_unified(
    working: &Corpus,
    reverse: &Corpus,
    queue: &[Recommendation],
    decisions: &[ReviewDecision],
    analyzer: &Analyzer,
    t: &crate::similarity::Thresholds,
    cycle: u32,
) -> Result<(Corpus, Vec<UpdatedRequirementRow>, BTreeSet<String>), OrchestratorError> {
    let validated = validate_decisions(queue, decisions)?;
    let mut slots = Slots::new(working);
    let mut rows = Vec::new();
    if !reverse.is_empty() {
        let left = segment_all(&working.artefacts)?;
        let right = segment_all(&reverse.artefacts)?;
        let alignment = align_cross(&left, &right, analyzer, t)?;
        for p in &alignment.pairs {
            let Some(r) = &p.right else { continue };
            if r.text != p.left.text && robustness_of(&r.text, analyzer) > robustness_of(&p.left.text, analyzer) {
                let prior = slots.set(&p.left, &r.text).unwrap_or_default();
                rows.push(UpdatedRequirementRow {
                    requirement_id: p.left.artefact_id.clone(),
                    cycle,
                    prior_text: prior,
                    updated_text: r.text.clone(),
                    action_applied: RecommendationAction::Refine,
                    reviewer: "synthesis".into(),
                });
            }
        }
    }
    let mut suppressed = BTreeSet::new();
    rows.extend(apply_to_slots(&mut slots, &validated, &mut suppressed, cycle)?);
    Ok((slots.into_corpus(working, cycle), rows, suppressed))
}

/// Applies decisions, synthesizes the unified corpus, regenerates derived
/// artefacts and runs the next cycle. Atomic on error.
pub fn advance(
    state: &mut CycleState,
    decisions: &[ReviewDecision],
    pipeline: &Pipeline,
) -> Result<AuditRecord, OrchestratorError> {
    if state.status != SessionStatus::AwaitingReview {
        return Err(OrchestratorError::WrongState(state.status));
    }
    let cycle = state.cycle + 1;
    let (working, updates, suppressed) = synthesize_unified(
        &state.working,
        &state.reverse,
        &state.queue,
        decisions,
        &pipeline.analyzer,
        &pipeline.config.thresholds.requirement,
        cycle,
    )?;
    let mut next = state.clone();
    next.working = working;
    next.suppressed.extend(suppressed);
    next.updates = updates.clone();
    let stats = GenerationStats::from_counts(next.ops);
    next.derived = pipeline.forward(&next.working, &stats, cycle)?;
    next.ops = stats.snapshot();
    run_cycle(&mut next, pipeline)?;
    *state = next;
    Ok(AuditRecord {
        cycle,
        applied_at: pipeline.clock.now(),
        decisions: decisions.to_vec(),
        updates,
    })
}

/// How unattended runs answer the review queue.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecisionPolicy {
    /// Refine back to the original wording and add missing coverage.
    #[default]
    RestoreOriginal,
    /// Leave every item undecided.
    None,
}

pub fn policy_decisions(queue: &[Recommendation], policy: DecisionPolicy, clock: &Clock) -> Vec<ReviewDecision> {
    if policy == DecisionPolicy::None {
        return Vec::new();
    }
    queue
        .iter()
        .filter(|r| r.scope == PairScope::Cross)
        .map(|r| ReviewDecision {
            pair_id: r.pair_id.clone(),
            verdict: r.action,
            edited_text: Some(r.pair.left.text.clone()),
            reviewer: "policy:restore_original".into(),
            decided_at: clock.now(),
        })
        .collect()
}

/// Runs cycles until the status leaves `AwaitingReview`. Returns the audit
/// records of every advance.
pub fn run_to_completion(
    state: &mut CycleState,
    pipeline: &Pipeline,
    policy: DecisionPolicy,
) -> Result<Vec<AuditRecord>, OrchestratorError> {
    let mut audit = Vec::new();
    while state.status == SessionStatus::AwaitingReview {
        let decisions = policy_decisions(&state.queue, policy, &pipeline.clock);
        if decisions.is_empty() && policy == DecisionPolicy::None {
            break;
        }
        audit.push(advance(state, &decisions, pipeline)?);
    }
    Ok(audit)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub histogram: CategoryHistogram,
    pub mean_cosine: f64,
    /// Mean category ordinal (0 = NoMatch … 3 = High).
    pub mean_category: f64,
    pub mean_rubric: f64,
}

impl RunSummary {
    fn of(state: &CycleState) -> Self {
        let pairs = &state.alignment.pairs;
        let mean_category = if pairs.is_empty() {
            0.0
        } else {
            pairs.iter().map(|p| p.category.ordinal() as f64).sum::<f64>() / pairs.len() as f64
        };
        Self {
            histogram: CategoryHistogram::from_counts(state.alignment.histogram()),
            mean_cosine: state.alignment.mean_cosine,
            mean_category,
            mean_rubric: state.mean_rubric(),
        }
    }

    /// Share of pairs in the Low and NoMatch bands.
    pub fn low_share(&self) -> f64 {
        let total = self.histogram.total();
        if total == 0 {
            return 0.0;
        }
        (self.histogram.low + self.histogram.no_match) as f64 / total as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NegativeValidationReport {
    pub level: f64,
    pub ambiguity_injection: bool,
    pub baseline: RunSummary,
    pub degraded: RunSummary,
    pub pass: bool,
    pub reason: String,
}

/// Runs one cycle on the pristine corpus and one on its degraded copy; passes
/// when the degraded run lands at Low or below on average and scores a lower
/// mean rubric than the baseline.
pub fn negative_validation(
    corpus: &Corpus,
    spec: &DegradationSpec,
    pipeline: &Pipeline,
) -> Result<NegativeValidationReport, OrchestratorError> {
    require_requirements(corpus)?;
    if spec.level < pipeline.config.min_degradation {
        tracing::warn!(level = spec.level, "degradation level is below the configured minimum");
    }
    let baseline = RunSummary::of(&start(pipeline, corpus.clone(), corpus.clone(), None)?);
    let degraded_corpus = degrade(corpus, spec, &pipeline.analyzer.lexicons.ambiguity);
    let degraded = RunSummary::of(&start(pipeline, corpus.clone(), degraded_corpus, None)?);

    let low_enough = degraded.mean_category <= MatchCategory::Low.ordinal() as f64;
    let rubric_lower = degraded.mean_rubric < baseline.mean_rubric;
    let (pass, reason) = if spec.level <= 0.0 {
        (false, "no degradation".to_string())
    } else if low_enough && rubric_lower {
        (true, "degraded input detected".to_string())
    } else {
        let mut why = Vec::new();
        if !low_enough {
            why.push(format!("degraded mean category {:.2} is above Low", degraded.mean_category));
        }
        if !rubric_lower {
            why.push(format!(
                "degraded mean rubric {:.2} is not below baseline {:.2}",
                degraded.mean_rubric, baseline.mean_rubric
            ));
        }
        (false, why.join("; "))
    };
    Ok(NegativeValidationReport {
        level: spec.level,
        ambiguity_injection: spec.ambiguity_injection,
        baseline,
        degraded,
        pass,
        reason,
    })
}

/// One row per cross pair; queued pairs reuse their recommendation text.
pub fn semantic_rows(
    alignment: &AlignmentResult,
    queue: &[Recommendation],
    analyzer: &Analyzer,
) -> Vec<SemanticResultRow> {
    alignment
        .pairs
        .iter()
        .map(|p| {
            let id = cross_pair_id(p);
            let (action, rationale, impact) = match queue.iter().find(|r| r.pair_id == id) {
                Some(r) => (Some(r.action), r.rationale.clone(), r.testing_impact.clone()),
                None => {
                    let r = recommendation(p, PairScope::Cross, RecommendationAction::Refine, false, analyzer);
                    (None, r.rationale, "Covered by the derived tests.".to_string())
                }
            };
            SemanticResultRow {
                left_id: p.left.key(),
                right_id: p.right.as_ref().map(Segment::key),
                left_text: p.left.text.clone(),
                right_text: p.right.as_ref().map(|r| r.text.clone()).unwrap_or_default(),
                cosine: p.cosine,
                jaccard: p.jaccard,
                category: p.category,
                action,
                rationale,
                testing_impact: impact,
            }
        })
        .collect()
}

/// Traceability of each requirement to the derived artefacts carrying its id.
pub fn impact_rows(
    working: &Corpus,
    derived: &Corpus,
    analyzer: &Analyzer,
    t: &crate::similarity::Thresholds,
) -> Result<Vec<ImpactRow>, OrchestratorError> {
    let mut rows = Vec::new();
    for req in &working.artefacts {
        let linked: Vec<&Artefact> = derived
            .artefacts
            .iter()
            .filter(|a| a.trace_id().as_deref() == Some(req.id.as_str()))
            .collect();
        if linked.is_empty() {
            rows.push(ImpactRow {
                requirement_id: req.id.clone(),
                linked_artefact_id: String::new(),
                traceability_cosine: 0.0,
                impact_note: "No derived artefact traces to this requirement; it is untested.".into(),
            });
            continue;
        }
        let req_text = segment_texts(&req.body).join(" ");
        for a in linked {
            let text = segment_texts(&a.body).join(" ");
            let cos = analyzer.cosine_text(&req_text, &text)?;
            let note = match classify(cos, t) {
                MatchCategory::High => "Traceable; the test exercises the requirement.",
                MatchCategory::Medium => "Partly traceable; check the test covers every clause.",
                MatchCategory::Low => "Weak trace; the test may verify something else.",
                MatchCategory::NoMatch => "No semantic link; treat the requirement as untested.",
            };
            rows.push(ImpactRow {
                requirement_id: req.id.clone(),
                linked_artefact_id: a.id.clone(),
                traceability_cosine: cos,
                impact_note: note.into(),
            });
        }
    }
    Ok(rows)
}
