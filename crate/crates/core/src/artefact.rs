//! Artefact domain types and the three line-oriented document formats.
//!
//! Requirements use `REQ-<id>: <body>` blocks, test cases use `TC-<id>: <title>`
//! blocks with `Step:` / `Expect:` lines, and BDD scenarios use a pragmatic
//! Gherkin subset. Every format has a canonical serialization that re-parses to
//! an equal [`Corpus`].

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArtefactKind {
    Requirement,
    TestCase,
    BddScenario,
}

impl ArtefactKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ArtefactKind::Requirement => "requirement",
            ArtefactKind::TestCase => "test_case",
            ArtefactKind::BddScenario => "bdd_scenario",
        }
    }
}

impl fmt::Display for ArtefactKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    Original,
    ReverseGenerated,
    Unified,
    Degraded,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artefact {
    pub id: String,
    pub kind: ArtefactKind,
    pub title: String,
    pub body: String,
    pub origin: Origin,
    pub source_cycle: u32,
}

impl Artefact {
    /// An ingested artefact (`origin = Original`, `source_cycle = 0`).
    pub fn original(id: impl Into<String>, kind: ArtefactKind, body: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            kind,
            title: String::new(),
            body: body.into(),
            origin: Origin::Original,
            source_cycle: 0,
        }
    }

    pub fn with_title(mut self, title: impl Into<String>) -> Self {
        self.title = title.into();
        self
    }

    pub fn with_origin(mut self, origin: Origin, source_cycle: u32) -> Self {
        self.origin = origin;
        self.source_cycle = source_cycle;
        self
    }

    /// Requirement id this artefact traces to.
    ///
    /// Requirements trace to themselves. Test cases use `<req>-<n>` ids and BDD
    /// scenarios carry an `@REQ-<req>` tag in their title.
    pub fn trace_id(&self) -> Option<String> {
        match self.kind {
            ArtefactKind::Requirement => Some(self.id.clone()),
            ArtefactKind::TestCase => self
                .id
                .rsplit_once('-')
                .filter(|(head, n)| !head.is_empty() && n.chars().all(|c| c.is_ascii_digit()))
                .map(|(head, _)| head.to_string()),
            ArtefactKind::BddScenario => self
                .title
                .split_whitespace()
                .take_while(|t| t.starts_with('@'))
                .find_map(|t| t.strip_prefix("@REQ-"))
                .filter(|id| !id.is_empty())
                .map(str::to_string),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Corpus {
    pub project_id: String,
    pub kind: ArtefactKind,
    pub artefacts: Vec<Artefact>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("no artefacts found")]
    NoArtefactsFound,
    #[error("duplicate artefact id `{0}`")]
    DuplicateId(String),
    #[error("artefact `{0}` has an empty body")]
    EmptyBody(String),
    #[error("line {0}: text outside of any artefact block")]
    StrayLine(usize),
    #[error("no scenarios found")]
    NoScenarios,
    #[error("line {0}: step outside of a scenario")]
    StepOutsideScenario(usize),
    #[error("line {0}: unterminated examples table")]
    UnterminatedExamplesTable(usize),
    #[error("test case `{0}` has no Expect line")]
    MissingExpectation(String),
    #[error("test case `{0}` has no Step line")]
    MissingStep(String),
    #[error("artefact `{id}` has kind {found}, corpus kind is {expected}")]
    KindMismatch {
        id: String,
        expected: ArtefactKind,
        found: ArtefactKind,
    },
}

impl Corpus {
    pub fn new(project_id: impl Into<String>, kind: ArtefactKind) -> Self {
        Self {
            project_id: project_id.into(),
            kind,
            artefacts: Vec::new(),
        }
    }

    /// Builds a corpus, checking the kind, id-uniqueness and body invariants.
    pub fn from_artefacts(
        project_id: impl Into<String>,
        kind: ArtefactKind,
        artefacts: Vec<Artefact>,
    ) -> Result<Self, ParseError> {
        let corpus = Self {
            project_id: project_id.into(),
            kind,
            artefacts,
        };
        corpus.validate()?;
        Ok(corpus)
    }

    pub fn with_project_id(mut self, project_id: impl Into<String>) -> Self {
        self.project_id = project_id.into();
        self
    }

    pub fn validate(&self) -> Result<(), ParseError> {
        let mut seen = HashSet::new();
        for a in &self.artefacts {
            if a.kind != self.kind {
                return Err(ParseError::KindMismatch {
                    id: a.id.clone(),
                    expected: self.kind,
                    found: a.kind,
                });
            }
            if !seen.insert(a.id.as_str()) {
                return Err(ParseError::DuplicateId(a.id.clone()));
            }
            if a.body.trim().is_empty() {
                return Err(ParseError::EmptyBody(a.id.clone()));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.artefacts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.artefacts.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Artefact> {
        self.artefacts.iter().find(|a| a.id == id)
    }

    pub fn get_mut(&mut self, id: &str) -> Option<&mut Artefact> {
        self.artefacts.iter_mut().find(|a| a.id == id)
    }

    /// Canonical document form for this corpus' kind.
    pub fn to_document(&self) -> String {
        match self.kind {
            ArtefactKind::Requirement => write_requirements(self),
            ArtefactKind::TestCase => write_testcases(self),
            ArtefactKind::BddScenario => write_gherkin(self),
        }
    }

    /// Parses a document of the given kind.
    pub fn parse(kind: ArtefactKind, text: &str) -> Result<Self, ParseError> {
        match kind {
            ArtefactKind::Requirement => parse_requirements(text),
            ArtefactKind::TestCase => parse_testcases(text),
            ArtefactKind::BddScenario => parse_gherkin(text),
        }
    }
}

struct Block {
    id: String,
    lines: Vec<String>,
}

fn push_unique(
    out: &mut Vec<Artefact>,
    seen: &mut HashSet<String>,
    artefact: Artefact,
) -> Result<(), ParseError> {
    if !seen.insert(artefact.id.clone()) {
        return Err(ParseError::DuplicateId(artefact.id));
    }
    if artefact.body.trim().is_empty() {
        return Err(ParseError::EmptyBody(artefact.id));
    }
    out.push(artefact);
    Ok(())
}

/// Splits `<PREFIX><id>: <rest>` into `(id, rest)`.
fn split_tagged<'a>(line: &'a str, prefix: &str) -> Option<(&'a str, &'a str)> {
    let rest = line.strip_prefix(prefix)?;
    let (id, tail) = rest.split_once(':')?;
    if id.is_empty() || id.chars().any(char::is_whitespace) {
        return None;
    }
    Some((id, tail.trim()))
}

fn is_comment(trimmed: &str) -> bool {
    trimmed.starts_with('#')
}

pub fn parse_requirements(text: &str) -> Result<Corpus, ParseError> {
    let mut artefacts = Vec::new();
    let mut seen = HashSet::new();
    let mut current: Option<Block> = None;

    let finish = |block: Option<Block>,
                  artefacts: &mut Vec<Artefact>,
                  seen: &mut HashSet<String>|
     -> Result<(), ParseError> {
        if let Some(b) = block {
            let body = b.lines.join("\n");
            push_unique(
                artefacts,
                seen,
                Artefact::original(b.id, ArtefactKind::Requirement, body),
            )?;
        }
        Ok(())
    };

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let trimmed = raw.trim();
        if let Some((id, rest)) = split_tagged(trimmed, "REQ-") {
            finish(current.take(), &mut artefacts, &mut seen)?;
            let mut lines = Vec::new();
            if !rest.is_empty() {
                lines.push(rest.to_string());
            }
            current = Some(Block {
                id: id.to_string(),
                lines,
            });
        } else if trimmed.is_empty() {
            finish(current.take(), &mut artefacts, &mut seen)?;
        } else if let Some(block) = current.as_mut() {
            block.lines.push(trimmed.to_string());
        } else if !is_comment(trimmed) {
            return Err(ParseError::StrayLine(line_no));
        }
    }
    finish(current.take(), &mut artefacts, &mut seen)?;

    if artefacts.is_empty() {
        return Err(ParseError::NoArtefactsFound);
    }
    Ok(Corpus {
        project_id: String::new(),
        kind: ArtefactKind::Requirement,
        artefacts,
    })
}

fn write_requirements(corpus: &Corpus) -> String {
    let mut out = String::new();
    for a in &corpus.artefacts {
        let mut lines = a.body.lines().map(str::trim).filter(|l| !l.is_empty());
        out.push_str("REQ-");
        out.push_str(&a.id);
        out.push(':');
        if let Some(first) = lines.next() {
            out.push(' ');
            out.push_str(first);
        }
        out.push('\n');
        for l in lines {
            out.push_str("  ");
            out.push_str(l);
            out.push('\n');
        }
        out.push('\n');
    }
    out
}

pub fn parse_testcases(text: &str) -> Result<Corpus, ParseError> {
    struct TcBlock {
        id: String,
        title: String,
        steps: Vec<String>,
        expects: Vec<String>,
    }

    fn finish(
        block: Option<TcBlock>,
        out: &mut Vec<Artefact>,
        seen: &mut HashSet<String>,
    ) -> Result<(), ParseError> {
        let Some(b) = block else { return Ok(()) };
        if b.steps.is_empty() {
            return Err(ParseError::MissingStep(b.id));
        }
        if b.expects.is_empty() {
            return Err(ParseError::MissingExpectation(b.id));
        }
        let body = b
            .steps
            .iter()
            .map(|s| format!("Step: {s}"))
            .chain(b.expects.iter().map(|e| format!("Expect: {e}")))
            .collect::<Vec<_>>()
            .join("\n");
        push_unique(
            out,
            seen,
            Artefact::original(b.id, ArtefactKind::TestCase, body).with_title(b.title),
        )
    }

    let mut artefacts = Vec::new();
    let mut seen = HashSet::new();
    let mut current: Option<TcBlock> = None;

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || is_comment(trimmed) {
            continue;
        }
        if let Some((id, title)) = split_tagged(trimmed, "TC-") {
            finish(current.take(), &mut artefacts, &mut seen)?;
            current = Some(TcBlock {
                id: id.to_string(),
                title: title.to_string(),
                steps: Vec::new(),
                expects: Vec::new(),
            });
            continue;
        }
        let Some(block) = current.as_mut() else {
            return Err(ParseError::StrayLine(line_no));
        };
        if let Some(step) = trimmed.strip_prefix("Step:") {
            let step = step.trim();
            if step.is_empty() {
                return Err(ParseError::StrayLine(line_no));
            }
            block.steps.push(step.to_string());
        } else if let Some(expect) = trimmed.strip_prefix("Expect:") {
            let expect = expect.trim();
            if expect.is_empty() {
                return Err(ParseError::StrayLine(line_no));
            }
            block.expects.push(expect.to_string());
        } else {
            return Err(ParseError::StrayLine(line_no));
        }
    }
    finish(current.take(), &mut artefacts, &mut seen)?;

    if artefacts.is_empty() {
        return Err(ParseError::NoArtefactsFound);
    }
    Ok(Corpus {
        project_id: String::new(),
        kind: ArtefactKind::TestCase,
        artefacts,
    })
}

fn write_testcases(corpus: &Corpus) -> String {
    let mut out = String::new();
    for a in &corpus.artefacts {
        out.push_str("TC-");
        out.push_str(&a.id);
        out.push(':');
        if !a.title.is_empty() {
            out.push(' ');
            out.push_str(&a.title);
        }
        out.push('\n');
        for l in a.body.lines().map(str::trim).filter(|l| !l.is_empty()) {
            out.push_str(l);
            out.push('\n');
        }
        out.push('\n');
    }
    out
}

pub const STEP_KEYWORDS: [&str; 5] = ["Given", "When", "Then", "And", "But"];

/// Returns the step keyword a line starts with, if any.
pub fn step_keyword(line: &str) -> Option<&'static str> {
    STEP_KEYWORDS.into_iter().find(|kw| {
        line.strip_prefix(kw)
            .is_some_and(|rest| rest.is_empty() || rest.starts_with(char::is_whitespace))
    })
}

/// Lowercase slug of a feature name: alphanumeric runs joined by `-`.
pub fn slugify(name: &str) -> String {
    let mut slug = String::new();
    for part in name
        .split(|c: char| !c.is_alphanumeric())
        .filter(|p| !p.is_empty())
    {
        if !slug.is_empty() {
            slug.push('-');
        }
        slug.extend(part.chars().flat_map(char::to_lowercase));
    }
    if slug.is_empty() {
        slug.push_str("untitled");
    }
    slug
}

pub fn parse_gherkin(text: &str) -> Result<Corpus, ParseError> {
    struct Scenario {
        id: String,
        title: String,
        lines: Vec<String>,
    }

    let mut artefacts = Vec::new();
    let mut seen = HashSet::new();
    let mut slug = String::from("untitled");
    let mut index = 0usize;
    let mut pending_tags: Vec<String> = Vec::new();
    let mut current: Option<Scenario> = None;
    // Line of an open `Examples:` header and whether it has rows yet.
    let mut examples: Option<(usize, bool)> = None;

    let finish = |s: Option<Scenario>,
                  artefacts: &mut Vec<Artefact>,
                  seen: &mut HashSet<String>|
     -> Result<(), ParseError> {
        if let Some(s) = s {
            let body = s.lines.join("\n");
            push_unique(
                artefacts,
                seen,
                Artefact::original(s.id, ArtefactKind::BddScenario, body).with_title(s.title),
            )?;
        }
        Ok(())
    };

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let trimmed = raw.trim();

        if let Some((start, has_rows)) = examples {
            if trimmed.starts_with('|') {
                if !trimmed.ends_with('|') || trimmed.len() < 2 {
                    return Err(ParseError::UnterminatedExamplesTable(line_no));
                }
                if let Some(s) = current.as_mut() {
                    s.lines.push(trimmed.to_string());
                }
                examples = Some((start, true));
                continue;
            }
            if trimmed.is_empty() || is_comment(trimmed) {
                continue;
            }
            if !has_rows {
                return Err(ParseError::UnterminatedExamplesTable(start));
            }
            examples = None;
        }

        if trimmed.is_empty() || is_comment(trimmed) {
            continue;
        }
        if trimmed.starts_with('@') {
            pending_tags.extend(trimmed.split_whitespace().map(str::to_string));
            continue;
        }
        if let Some(name) = trimmed.strip_prefix("Feature:") {
            finish(current.take(), &mut artefacts, &mut seen)?;
            slug = slugify(name.trim());
            index = 0;
            pending_tags.clear();
            continue;
        }
        let scenario_name = trimmed
            .strip_prefix("Scenario Outline:")
            .or_else(|| trimmed.strip_prefix("Scenario:"));
        if let Some(name) = scenario_name {
            finish(current.take(), &mut artefacts, &mut seen)?;
            index += 1;
            let mut title = pending_tags.join(" ");
            let name = name.trim();
            if !name.is_empty() {
                if !title.is_empty() {
                    title.push(' ');
                }
                title.push_str(name);
            }
            pending_tags.clear();
            current = Some(Scenario {
                id: format!("{slug}/{index}"),
                title,
                lines: Vec::new(),
            });
            continue;
        }
        if trimmed.starts_with("Examples:") {
            let Some(s) = current.as_mut() else {
                return Err(ParseError::StepOutsideScenario(line_no));
            };
            s.lines.push("Examples:".to_string());
            examples = Some((line_no, false));
            continue;
        }
        if step_keyword(trimmed).is_some() {
            let Some(s) = current.as_mut() else {
                return Err(ParseError::StepOutsideScenario(line_no));
            };
            s.lines.push(trimmed.to_string());
        }
        // Other lines are free-form descriptions and carry no steps.
    }
    if let Some((start, false)) = examples {
        return Err(ParseError::UnterminatedExamplesTable(start));
    }
    finish(current.take(), &mut artefacts, &mut seen)?;

    if artefacts.is_empty() {
        return Err(ParseError::NoScenarios);
    }
    Ok(Corpus {
        project_id: String::new(),
        kind: ArtefactKind::BddScenario,
        artefacts,
    })
}

fn write_gherkin(corpus: &Corpus) -> String {
    let mut out = String::new();
    let mut feature: Option<&str> = None;
    for a in &corpus.artefacts {
        let slug = a.id.rsplit_once('/').map_or(a.id.as_str(), |(s, _)| s);
        if feature != Some(slug) {
            if feature.is_some() {
                out.push('\n');
            }
            out.push_str("Feature: ");
            out.push_str(slug);
            out.push('\n');
            feature = Some(slug);
        }
        out.push('\n');
        let mut words = a.title.split(' ').peekable();
        let mut tags = Vec::new();
        while let Some(w) = words.next_if(|w| w.starts_with('@')) {
            tags.push(w);
        }
        if !tags.is_empty() {
            out.push_str("  ");
            out.push_str(&tags.join(" "));
            out.push('\n');
        }
        let name: Vec<&str> = words.collect();
        out.push_str("  Scenario:");
        if !name.is_empty() {
            out.push(' ');
            out.push_str(&name.join(" "));
        }
        out.push('\n');
        for l in a.body.lines().map(str::trim).filter(|l| !l.is_empty()) {
            out.push_str(if l.starts_with('|') { "      " } else { "    " });
            out.push_str(l);
            out.push('\n');
        }
    }
    out
}
