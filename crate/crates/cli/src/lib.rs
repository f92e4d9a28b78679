//! Command implementations behind the `qeloop` binary.

use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use thiserror::Error;

use qeloop_core::artefact::{parse_gherkin, parse_requirements, parse_testcases, ArtefactKind, Corpus, ParseError};
use qeloop_core::clock::Clock;
use qeloop_core::config::{ConfigError, ProjectConfig, ProviderKind, CONFIG_FILE};
use qeloop_core::generation::{degrade, DegradationSpec, GenerationError};
use qeloop_core::orchestrator::{
    negative_validation, policy_decisions, DecisionPolicy, OrchestratorError, Pipeline, SessionStatus,
};
use qeloop_core::reporting::{read_bundle, summary_table, write_atomic, ReportError};
use qeloop_core::sample;
use qeloop_core::workspace::{Project, Session, WorkspaceError};
use qeloop_service::{serve, AppState, SessionHandle};

#[derive(Debug, Parser)]
#[command(name = "qeloop", version, about = "Closed-loop semantic validation of QE artefacts")]
pub struct Cli {
    /// Workspace directory (overrides the config file).
    #[arg(long, global = true)]
    pub workspace: Option<PathBuf>,
    /// Project config file; defaults to ./qeloop.toml when present.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// More log output on stderr (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum KindArg {
    Requirement,
    Testcase,
    Bdd,
}

impl From<KindArg> for ArtefactKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::Requirement => ArtefactKind::Requirement,
            KindArg::Testcase => ArtefactKind::TestCase,
            KindArg::Bdd => ArtefactKind::BddScenario,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ProviderArg {
    Mock,
    Remote,
}

impl From<ProviderArg> for ProviderKind {
    fn from(p: ProviderArg) -> Self {
        match p {
            ProviderArg::Mock => ProviderKind::Mock,
            ProviderArg::Remote => ProviderKind::Remote,
        }
    }
}

#[derive(Debug, Args)]
pub struct ProjectArg {
    #[arg(long, default_value = "default")]
    pub project: String,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse an artefact document and store it in the project.
    Ingest {
        #[arg(long, value_enum)]
        kind: KindArg,
        #[command(flatten)]
        project: ProjectArg,
        file: PathBuf,
    },
    /// Store the bundled banking sample in a project.
    InitSample {
        #[arg(long, default_value = sample::PROJECT_ID)]
        project: String,
    },
    /// Run refinement cycles and emit reports.
    Run {
        #[command(flatten)]
        project: ProjectArg,
        #[arg(long, value_enum)]
        provider: Option<ProviderArg>,
        #[arg(long)]
        max_cycles: Option<u32>,
        /// Use the ingested test artefacts for cycle 1 instead of generating them.
        #[arg(long)]
        from_ingested: bool,
        /// Degrade the requirements by this level before the first cycle.
        #[arg(long)]
        degrade: Option<f64>,
        /// Stop after the first cycle and leave the queue to reviewers.
        #[arg(long)]
        review: bool,
    },
    /// Compare a pristine run with a deliberately degraded one.
    NegativeValidate {
        #[command(flatten)]
        project: ProjectArg,
        #[arg(long)]
        level: f64,
        #[arg(long)]
        inject_ambiguity: bool,
        #[arg(long, value_enum)]
        provider: Option<ProviderArg>,
    },
    /// Print the per-cycle summary, or one cycle's reports with --json.
    Report {
        #[command(flatten)]
        project: ProjectArg,
        #[arg(long)]
        cycle: Option<u32>,
        #[arg(long)]
        json: bool,
    },
    /// Serve the review API for a project.
    Serve {
        #[command(flatten)]
        project: ProjectArg,
        /// Listen address (overrides the config file).
        #[arg(long)]
        addr: Option<SocketAddr>,
        #[arg(long, value_enum)]
        provider: Option<ProviderArg>,
    },
}

/// Exit 1 for bad input, 2 for provider and IO failures.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Environment(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Environment(_) => 2,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::Io { .. } | ConfigError::Embed(_) => CliError::Environment(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<ReportError> for CliError {
    fn from(e: ReportError) -> Self {
        match e {
            ReportError::IoFailure { .. } => CliError::Environment(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<OrchestratorError> for CliError {
    fn from(e: OrchestratorError) -> Self {
        match e {
            OrchestratorError::Generation(_) | OrchestratorError::Similarity(_) | OrchestratorError::Rubric(_) => {
                CliError::Environment(e.to_string())
            }
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<WorkspaceError> for CliError {
    fn from(e: WorkspaceError) -> Self {
        match e {
            WorkspaceError::Io { .. } | WorkspaceError::Corrupt { .. } | WorkspaceError::UnsupportedVersion(_) => {
                CliError::Environment(e.to_string())
            }
            WorkspaceError::Orchestrator(o) => o.into(),
            WorkspaceError::Report(r) => r.into(),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<GenerationError> for CliError {
    fn from(e: GenerationError) -> Self {
        CliError::Environment(e.to_string())
    }
}

/// Config, its base directory and the workspace root.
pub struct Context {
    pub config: ProjectConfig,
    pub base: PathBuf,
    pub workspace: PathBuf,
    pub clock: Clock,
}

impl Context {
    pub fn load(config: Option<&Path>, workspace: Option<&Path>) -> Result<Self, CliError> {
        let (config_value, base) = match config {
            Some(path) => (ProjectConfig::load(path)?, parent_dir(path)),
            None => {
                let default = Path::new(CONFIG_FILE);
                if default.is_file() {
                    (ProjectConfig::load(default)?, PathBuf::from("."))
                } else {
                    (ProjectConfig::default(), PathBuf::from("."))
                }
            }
        };
        let workspace = match workspace {
            Some(w) => w.to_path_buf(),
            None if config_value.workspace.is_absolute() => config_value.workspace.clone(),
            None => base.join(&config_value.workspace),
        };
        Ok(Self {
            config: config_value,
            base,
            workspace,
            clock: Clock::from_env(),
        })
    }

    pub fn project(&self, id: &str) -> Result<Project, CliError> {
        let valid = !id.is_empty()
            && id != "."
            && id != ".."
            && id.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'));
        if !valid {
            return Err(CliError::Validation(format!("invalid project id `{id}`")));
        }
        Ok(Project::new(&self.workspace, id))
    }

    fn pipeline(&self, project: &Project, provider: Option<ProviderArg>) -> Result<Pipeline, CliError> {
        let kind = provider.map_or(self.config.providers.generation, ProviderKind::from);
        Ok(project.pipeline(&self.config, &self.base, kind, self.clock)?)
    }
}

fn parent_dir(path: &Path) -> PathBuf {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

pub fn parse_document(kind: ArtefactKind, text: &str) -> Result<Corpus, ParseError> {
    match kind {
        ArtefactKind::Requirement => parse_requirements(text),
        ArtefactKind::TestCase => parse_testcases(text),
        ArtefactKind::BddScenario => parse_gherkin(text),
    }
}

fn stdout_line(text: &str) -> Result<(), CliError> {
    let mut out = std::io::stdout().lock();
    out.write_all(text.as_bytes())
        .and_then(|()| out.flush())
        .map_err(|e| CliError::Environment(format!("stdout: {e}")))
}

fn to_json<T: serde::Serialize>(value: &T) -> String {
    let mut text = serde_json::to_string_pretty(value).expect("value serializes");
    text.push('\n');
    text
}

pub fn ingest(ctx: &Context, kind: ArtefactKind, project: &str, file: &Path) -> Result<(), CliError> {
    let project = ctx.project(project)?;
    let text = std::fs::read_to_string(file)
        .map_err(|e| CliError::Environment(format!("{}: {e}", file.display())))?;
    let corpus = parse_document(kind, &text)
        .map_err(|e| CliError::Validation(format!("{}: {e}", file.display())))?
        .with_project_id(project.id.clone());
    let stored = project.store_corpus(&corpus)?;
    eprintln!("stored {} {} artefact(s) in {}", corpus.len(), kind, stored.display());
    Ok(())
}

pub fn init_sample(ctx: &Context, project: &str) -> Result<(), CliError> {
    let project = ctx.project(project)?;
    for corpus in [sample::requirements(), sample::testcases(), sample::scenarios()] {
        project.store_corpus(&corpus.with_project_id(project.id.clone()))?;
    }
    eprintln!("sample project stored in {}", project.dir.display());
    Ok(())
}

pub struct RunOptions {
    pub provider: Option<ProviderArg>,
    pub max_cycles: Option<u32>,
    pub from_ingested: bool,
    pub degrade: Option<f64>,
    pub review: bool,
}

/// Runs a fresh session; without `review`, every suggested restoration is
/// applied until the loop stops.
pub fn run(ctx: &mut Context, project: &str, opts: RunOptions) -> Result<Session, CliError> {
    if let Some(n) = opts.max_cycles {
        ctx.config.convergence.max_cycles = n;
        ctx.config.validate()?;
    }
    let project = ctx.project(project)?;
    let pipeline = ctx.pipeline(&project, opts.provider)?;
    let original = project.requirements()?;
    let working = match opts.degrade {
        Some(level) if !(0.0..=1.0).contains(&level) => {
            return Err(CliError::Validation(format!("degradation level {level} is outside [0, 1]")))
        }
        Some(level) => degrade(
            &original,
            &DegradationSpec::new(level, false),
            &pipeline.analyzer.lexicons.ambiguity,
        ),
        None => original.clone(),
    };
    let derived = if opts.from_ingested {
        let kind = ctx.config.providers.target_kind;
        Some(
            project
                .load_corpus(kind)?
                .ok_or_else(|| WorkspaceError::NoDerived(project.id.clone(), kind))?,
        )
    } else {
        None
    };
    project.reset_run()?;
    let mut session = Session::start_with(&project, &pipeline, original, working, derived)?;
    if !opts.review {
        while session.status() == SessionStatus::AwaitingReview {
            let decisions = policy_decisions(&session.state.queue, DecisionPolicy::RestoreOriginal, &pipeline.clock);
            session.submit(&decisions)?;
            if session.undecided() > 0 {
                eprintln!("{} item(s) need a reviewer; stopping", session.undecided());
                break;
            }
            session.advance_blocking(&project, &pipeline)?;
        }
    }
    eprintln!(
        "cycle {} finished with status {:?}; reports in {}",
        session.state.cycle,
        session.status(),
        project.dir.display()
    );
    Ok(session)
}

pub fn negative_validate(
    ctx: &Context,
    project: &str,
    level: f64,
    inject_ambiguity: bool,
    provider: Option<ProviderArg>,
) -> Result<String, CliError> {
    if !(0.0..=1.0).contains(&level) {
        return Err(CliError::Validation(format!("degradation level {level} is outside [0, 1]")));
    }
    let project = ctx.project(project)?;
    let pipeline = ctx.pipeline(&project, provider)?;
    let corpus = project.requirements()?;
    let report = negative_validation(&corpus, &DegradationSpec::new(level, inject_ambiguity), &pipeline)?;
    let text = to_json(&report);
    write_atomic(&project.dir.join("negative_validation.json"), &text)?;
    eprintln!("negative validation {}: {}", if report.pass { "passed" } else { "failed" }, report.reason);
    Ok(text)
}

pub fn report(ctx: &Context, project: &str, cycle: Option<u32>, json: bool) -> Result<String, CliError> {
    let project = ctx.project(project)?;
    let session = project.load_session()?.ok_or(WorkspaceError::NoCycles)?;
    if session.state.history.is_empty() {
        return Err(WorkspaceError::NoCycles.into());
    }
    if let Some(c) = cycle {
        session.check_cycle(c)?;
    }
    if json {
        let bundle = read_bundle(&project.dir, cycle.unwrap_or(session.state.cycle))?;
        return Ok(to_json(&bundle));
    }
    let upto = cycle.unwrap_or(session.state.cycle);
    let rows: Vec<_> = session.state.history.iter().filter(|h| h.cycle <= upto).cloned().collect();
    Ok(summary_table(&rows))
}

pub fn serve_project(
    ctx: &Context,
    project: &str,
    addr: Option<SocketAddr>,
    provider: Option<ProviderArg>,
) -> Result<(), CliError> {
    let project = ctx.project(project)?;
    let pipeline = ctx.pipeline(&project, provider)?;
    let session = match project.load_session()? {
        Some(s) => s,
        None => Session::start(&project, &pipeline, false)?,
    };
    let addr = match addr {
        Some(a) => a,
        None => ctx
            .config
            .service
            .addr
            .parse()
            .map_err(|e| CliError::Validation(format!("service.addr `{}`: {e}", ctx.config.service.addr)))?,
    };
    let state = AppState::new([SessionHandle::new(project, Arc::new(pipeline), session)])
        .with_token(ctx.config.service.token())
        .with_cors_origin(ctx.config.service.cors_origin.clone());
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| CliError::Environment(e.to_string()))?;
    runtime
        .block_on(serve(state, addr))
        .map_err(|e| CliError::Environment(format!("{addr}: {e}")))
}

pub fn execute(cli: Cli) -> Result<(), CliError> {
    let mut ctx = Context::load(cli.config.as_deref(), cli.workspace.as_deref())?;
    match cli.command {
        Command::Ingest { kind, project, file } => ingest(&ctx, kind.into(), &project.project, &file),
        Command::InitSample { project } => init_sample(&ctx, &project),
        Command::Run {
            project,
            provider,
            max_cycles,
            from_ingested,
            degrade,
            review,
        } => {
            let opts = RunOptions {
                provider,
                max_cycles,
                from_ingested,
                degrade,
                review,
            };
            let session = run(&mut ctx, &project.project, opts)?;
            stdout_line(&summary_table(&session.state.history))
        }
        Command::NegativeValidate {
            project,
            level,
            inject_ambiguity,
            provider,
        } => stdout_line(&negative_validate(&ctx, &project.project, level, inject_ambiguity, provider)?),
        Command::Report { project, cycle, json } => stdout_line(&report(&ctx, &project.project, cycle, json)?),
        Command::Serve {
            project,
            addr,
            provider,
        } => serve_project(&ctx, &project.project, addr, provider),
    }
}
