//! On-disk project layout and the persisted review session.
//!
//! ```text
//! <workspace>/<project>/
//!   corpus/{requirement.txt, test_case.txt, bdd_scenario.feature}
//!   session.json          versioned CycleState + pending decisions
//!   audit.jsonl           one applied decision per line
//!   transitions.jsonl     session status changes
//!   embeddings.jsonl      embedding cache
//!   cycle-<n>/...         per-cycle reports
//!   overall_summary.{csv,json}, energy.json
//! ```

use std::collections::BTreeSet;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::artefact::{ArtefactKind, Corpus};
use crate::clock::Clock;
use crate::config::{ConfigError, ProjectConfig, ProviderKind};
use crate::orchestrator::{
    advance, start, validate_decisions, AuditRecord, CycleState, OrchestratorError, Pipeline, Recommendation, ReviewDecision,
    SessionStatus,
};
use crate::reporting::{write_atomic, write_cycle_reports, ReportError, SummaryRecord};

pub const SESSION_VERSION: u32 = 1;

const RUN_OUTPUTS: [&str; 6] = [
    "session.json",
    "audit.jsonl",
    "transitions.jsonl",
    "overall_summary.csv",
    "overall_summary.json",
    "energy.json",
];

#[derive(Debug, Error)]
pub enum WorkspaceError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {message}")]
    Corrupt { path: PathBuf, message: String },
    #[error("project `{0}` has no ingested requirements")]
    NoRequirements(String),
    #[error("project `{0}` has no ingested {1} artefacts")]
    NoDerived(String, ArtefactKind),
    #[error("no cycles completed")]
    NoCycles,
    #[error("cycle {requested} is out of range (completed: {completed})")]
    CycleOutOfRange { requested: u32, completed: u32 },
    #[error("session is {0:?}")]
    WrongState(SessionStatus),
    #[error("{0} queue item(s) are undecided")]
    Undecided(usize),
    #[error("pair `{0}` already has a decision")]
    AlreadyDecided(String),
    #[error("session file version {0} is not supported")]
    UnsupportedVersion(u32),
    #[error(transparent)]
    Orchestrator(#[from] OrchestratorError),
    #[error(transparent)]
    Report(#[from] ReportError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> WorkspaceError + '_ {
    move |source| WorkspaceError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// File stem for a stored corpus.
fn corpus_file(kind: ArtefactKind) -> &'static str {
    match kind {
        ArtefactKind::Requirement => "requirement.txt",
        ArtefactKind::TestCase => "test_case.txt",
        ArtefactKind::BddScenario => "bdd_scenario.feature",
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Project {
    pub id: String,
    pub dir: PathBuf,
}

impl Project {
    pub fn new(workspace: &Path, id: &str) -> Self {
        Self {
            id: id.to_string(),
            dir: workspace.join(id),
        }
    }

    pub fn corpus_path(&self, kind: ArtefactKind) -> PathBuf {
        self.dir.join("corpus").join(corpus_file(kind))
    }

    pub fn session_path(&self) -> PathBuf {
        self.dir.join("session.json")
    }

    pub fn audit_path(&self) -> PathBuf {
        self.dir.join("audit.jsonl")
    }

    pub fn transitions_path(&self) -> PathBuf {
        self.dir.join("transitions.jsonl")
    }

    pub fn cache_path(&self) -> PathBuf {
        self.dir.join("embeddings.jsonl")
    }

    /// Stores the canonical document for `corpus`, replacing any previous one
    /// of the same kind.
    pub fn store_corpus(&self, corpus: &Corpus) -> Result<PathBuf, WorkspaceError> {
        let path = self.corpus_path(corpus.kind);
        write_atomic(&path, &corpus.to_document())?;
        Ok(path)
    }

    pub fn load_corpus(&self, kind: ArtefactKind) -> Result<Option<Corpus>, WorkspaceError> {
        let path = self.corpus_path(kind);
        if !path.exists() {
            return Ok(None);
        }
        let text = std::fs::read_to_string(&path).map_err(io_err(&path))?;
        Corpus::parse(kind, &text)
            .map(|c| Some(c.with_project_id(self.id.clone())))
            .map_err(|e| WorkspaceError::Corrupt {
                path,
                message: e.to_string(),
            })
    }

    pub fn requirements(&self) -> Result<Corpus, WorkspaceError> {
        self.load_corpus(ArtefactKind::Requirement)?
            .ok_or_else(|| WorkspaceError::NoRequirements(self.id.clone()))
    }

    pub fn load_session(&self) -> Result<Option<Session>, WorkspaceError> {
        let path = self.session_path();
        if !path.exists() {
            return Ok(None);
        }
        let text = std::fs::read_to_string(&path).map_err(io_err(&path))?;
        let session: Session = serde_json::from_str(&text).map_err(|e| WorkspaceError::Corrupt {
            path: path.clone(),
            message: e.to_string(),
        })?;
        if session.version != SESSION_VERSION {
            return Err(WorkspaceError::UnsupportedVersion(session.version));
        }
        Ok(Some(session))
    }

    pub fn save_session(&self, session: &Session) -> Result<(), WorkspaceError> {
        let mut text = serde_json::to_string_pretty(session).expect("session serializes");
        text.push('\n');
        write_atomic(&self.session_path(), &text)?;
        Ok(())
    }

    fn append_lines<T: Serialize>(&self, path: &Path, items: &[T]) -> Result<(), WorkspaceError> {
        if items.is_empty() {
            return Ok(());
        }
        std::fs::create_dir_all(&self.dir).map_err(io_err(&self.dir))?;
        let mut file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(io_err(path))?;
        let mut buf = String::new();
        for item in items {
            buf.push_str(&serde_json::to_string(item).expect("log line serializes"));
            buf.push('\n');
        }
        file.write_all(buf.as_bytes()).map_err(io_err(path))
    }

    /// One line per applied decision.
    pub fn append_audit(&self, record: &AuditRecord) -> Result<(), WorkspaceError> {
        let lines: Vec<AuditLine> = record
            .decisions
            .iter()
            .map(|d| AuditLine {
                cycle: record.cycle,
                applied_at: record.applied_at,
                decision: d.clone(),
            })
            .collect();
        self.append_lines(&self.audit_path(), &lines)
    }

    /// Removes the outputs of a previous run. Ingested corpora and the
    /// embedding cache stay.
    pub fn reset_run(&self) -> Result<(), WorkspaceError> {
        let entries = match std::fs::read_dir(&self.dir) {
            Ok(e) => e,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(()),
            Err(e) => return Err(io_err(&self.dir)(e)),
        };
        for entry in entries {
            let path = entry.map_err(io_err(&self.dir))?.path();
            let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
            if path.is_dir() && name.starts_with("cycle-") {
                std::fs::remove_dir_all(&path).map_err(io_err(&path))?;
            } else if path.is_file() && RUN_OUTPUTS.contains(&name) {
                std::fs::remove_file(&path).map_err(io_err(&path))?;
            }
        }
        Ok(())
    }

    /// Pipeline for this project: configured embedder with the on-disk cache,
    /// lexicons resolved against `base`.
    pub fn pipeline(
        &self,
        config: &ProjectConfig,
        base: &Path,
        provider: ProviderKind,
        clock: Clock,
    ) -> Result<Pipeline, ConfigError> {
        std::fs::create_dir_all(&self.dir).map_err(|source| ConfigError::Io {
            path: self.dir.clone(),
            source,
        })?;
        Ok(Pipeline {
            analyzer: config.analyzer(base, Some(&self.cache_path()), clock)?,
            provider: config.generation_provider(provider)?,
            config: config.clone(),
            clock,
        })
    }

    pub fn write_reports(&self, state: &CycleState, pipeline: &Pipeline) -> Result<(), WorkspaceError> {
        let cfg = &pipeline.config;
        write_cycle_reports(&self.dir, state, &cfg.energy, cfg.providers.batch_size)?;
        Ok(())
    }
}

/// Projects under `workspace` that have a saved session, sorted by id.
pub fn list_sessions(workspace: &Path) -> Result<Vec<Project>, WorkspaceError> {
    let entries = match std::fs::read_dir(workspace) {
        Ok(e) => e,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(io_err(workspace)(e)),
    };
    let mut out = Vec::new();
    for entry in entries {
        let entry = entry.map_err(io_err(workspace))?;
        let Some(id) = entry.file_name().to_str().map(str::to_string) else {
            continue;
        };
        let project = Project::new(workspace, &id);
        if project.session_path().is_file() {
            out.push(project);
        }
    }
    out.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditLine {
    pub cycle: u32,
    pub applied_at: DateTime<Utc>,
    pub decision: ReviewDecision,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transition {
    pub from: Option<SessionStatus>,
    pub to: SessionStatus,
    pub cycle: u32,
    pub at: DateTime<Utc>,
}

/// Whether the status machine allows `from → to`.
pub fn transition_allowed(from: Option<SessionStatus>, to: SessionStatus) -> bool {
    use SessionStatus::*;
    matches!(
        (from, to),
        (None, Running) | (Some(AwaitingReview), Running) | (Some(Running), AwaitingReview | Converged | CycleLimit)
    )
}

/// What reviewers see: the queue plus the latest summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSnapshot {
    pub session_id: String,
    pub project_id: String,
    pub cycle: u32,
    pub status: SessionStatus,
    pub queue: Vec<Recommendation>,
    pub decided: Vec<String>,
    pub summary: Option<SummaryRecord>,
    pub history: Vec<SummaryRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub version: u32,
    pub session_id: String,
    pub project_id: String,
    pub state: CycleState,
    /// Decisions accepted since the last advance.
    pub pending: Vec<ReviewDecision>,
    pub transitions: Vec<Transition>,
}

pub fn session_id_for(project_id: &str) -> String {
    format!("s-{project_id}")
}

impl Session {
    /// Runs cycle 1 for a project and persists the session and its reports.
    /// With `use_ingested`, the derived artefacts come from the project's
    /// stored corpus of the configured target kind instead of generation.
    pub fn start(project: &Project, pipeline: &Pipeline, use_ingested: bool) -> Result<Self, WorkspaceError> {
        let original = project.requirements()?;
        let derived = if use_ingested {
            let kind = pipeline.config.providers.target_kind;
            Some(
                project
                    .load_corpus(kind)?
                    .ok_or_else(|| WorkspaceError::NoDerived(project.id.clone(), kind))?,
            )
        } else {
            None
        };
        Self::start_with(project, pipeline, original.clone(), original, derived)
    }

    pub fn start_with(
        project: &Project,
        pipeline: &Pipeline,
        original: Corpus,
        working: Corpus,
        derived: Option<Corpus>,
    ) -> Result<Self, WorkspaceError> {
        let now = pipeline.clock.now();
        let state = start(pipeline, original, working, derived)?;
        let session = Self {
            version: SESSION_VERSION,
            session_id: session_id_for(&project.id),
            project_id: project.id.clone(),
            transitions: vec![
                Transition {
                    from: None,
                    to: SessionStatus::Running,
                    cycle: 0,
                    at: now,
                },
                Transition {
                    from: Some(SessionStatus::Running),
                    to: state.status,
                    cycle: state.cycle,
                    at: pipeline.clock.now(),
                },
            ],
            state,
            pending: Vec::new(),
        };
        project.write_reports(&session.state, pipeline)?;
        project.save_session(&session)?;
        project.append_lines(&project.transitions_path(), &session.transitions)?;
        Ok(session)
    }

    pub fn status(&self) -> SessionStatus {
        self.state.status
    }

    pub fn snapshot(&self) -> SessionSnapshot {
        SessionSnapshot {
            session_id: self.session_id.clone(),
            project_id: self.project_id.clone(),
            cycle: self.state.cycle,
            status: self.state.status,
            queue: self.state.queue.clone(),
            decided: self.pending.iter().map(|d| d.pair_id.clone()).collect(),
            summary: self.state.history.last().cloned(),
            history: self.state.history.clone(),
        }
    }

    /// Queues decisions for the next advance. All-or-nothing.
    pub fn submit(&mut self, decisions: &[ReviewDecision]) -> Result<usize, WorkspaceError> {
        if self.status() != SessionStatus::AwaitingReview {
            return Err(WorkspaceError::WrongState(self.status()));
        }
        let mut seen: BTreeSet<&str> = self.pending.iter().map(|d| d.pair_id.as_str()).collect();
        for d in decisions {
            if self.state.recommendation(&d.pair_id).is_none() {
                return Err(OrchestratorError::UnknownPairId(d.pair_id.clone()).into());
            }
            if !seen.insert(&d.pair_id) {
                return Err(WorkspaceError::AlreadyDecided(d.pair_id.clone()));
            }
        }
        validate_decisions(&self.state.queue, decisions)?;
        self.pending.extend(decisions.iter().cloned());
        Ok(decisions.len())
    }

    pub fn undecided(&self) -> usize {
        self.state
            .queue
            .iter()
            .filter(|r| !self.pending.iter().any(|d| d.pair_id == r.pair_id))
            .count()
    }

    fn transition(&mut self, to: SessionStatus, at: DateTime<Utc>) -> Transition {
        let from = self.state.status;
        debug_assert!(transition_allowed(Some(from), to), "{from:?} -> {to:?}");
        self.state.status = to;
        let t = Transition {
            from: Some(from),
            to,
            cycle: self.state.cycle,
            at,
        };
        self.transitions.push(t);
        t
    }

    /// Marks the session Running. Fails unless it awaits review with every
    /// queue item decided.
    pub fn begin_advance(&mut self, project: &Project, at: DateTime<Utc>) -> Result<(), WorkspaceError> {
        if self.status() != SessionStatus::AwaitingReview {
            return Err(WorkspaceError::WrongState(self.status()));
        }
        let undecided = self.undecided();
        if undecided > 0 {
            return Err(WorkspaceError::Undecided(undecided));
        }
        let t = self.transition(SessionStatus::Running, at);
        project.append_lines(&project.transitions_path(), &[t])?;
        project.save_session(self)
    }

    /// The state and decisions a background worker needs to run the advance.
    pub fn advance_input(&self) -> (CycleState, Vec<ReviewDecision>) {
        let mut state = self.state.clone();
        state.status = SessionStatus::AwaitingReview;
        (state, self.pending.clone())
    }

    /// Installs the worker's result (or rolls back to AwaitingReview on
    /// error), writes reports, audit and session.
    pub fn finish_advance(
        &mut self,
        project: &Project,
        pipeline: &Pipeline,
        result: Result<(CycleState, AuditRecord), OrchestratorError>,
    ) -> Result<(), WorkspaceError> {
        let now = pipeline.clock.now();
        match result {
            Ok((next, audit)) => {
                let status = next.status;
                let mut next = next;
                next.status = SessionStatus::Running;
                self.state = next;
                self.pending.clear();
                let t = self.transition(status, now);
                project.write_reports(&self.state, pipeline)?;
                project.append_audit(&audit)?;
                project.append_lines(&project.transitions_path(), &[t])?;
                project.save_session(self)
            }
            Err(e) => {
                let t = self.transition(SessionStatus::AwaitingReview, now);
                project.append_lines(&project.transitions_path(), &[t])?;
                project.save_session(self)?;
                Err(e.into())
            }
        }
    }

    /// begin, run, finish on the calling thread.
    pub fn advance_blocking(&mut self, project: &Project, pipeline: &Pipeline) -> Result<(), WorkspaceError> {
        self.begin_advance(project, pipeline.clock.now())?;
        let (mut state, decisions) = self.advance_input();
        let result = advance(&mut state, &decisions, pipeline).map(|audit| (state, audit));
        self.finish_advance(project, pipeline, result)
    }

    /// Checks `cycle` against completed cycles.
    pub fn check_cycle(&self, cycle: u32) -> Result<(), WorkspaceError> {
        if cycle == 0 || cycle > self.state.cycle {
            return Err(WorkspaceError::CycleOutOfRange {
                requested: cycle,
                completed: self.state.cycle,
            });
        }
        Ok(())
    }
}
