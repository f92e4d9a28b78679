//! Project configuration (`qeloop.toml`).
//!
//! Everything has a default so an empty file is valid. Credentials are never
//! stored here: providers name the environment variable that holds them.

use std::io;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::artefact::ArtefactKind;
use crate::clock::Clock;
use crate::embedding::{EmbedError, Embedder, EmbeddingCache, HashEmbedder, RemoteEmbedder, RemoteEmbeddingConfig};
use crate::generation::{BatchOptions, GenerationProvider, MockProvider, RemoteChatConfig, RemoteChatProvider};
use crate::lexicon::{AmbiguityLexicon, Lexicons, WordSet};
use crate::similarity::{Analyzer, SimilarityError, Thresholds};

pub const CONFIG_FILE: &str = "qeloop.toml";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("invalid config {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid thresholds for {kind}: {source}")]
    Thresholds { kind: ArtefactKind, source: SimilarityError },
    #[error("{0} must be non-negative")]
    NegativeRate(&'static str),
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Embed(#[from] EmbedError),
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ThresholdConfig {
    pub requirement: Thresholds,
    pub test_case: Thresholds,
    pub bdd_scenario: Thresholds,
}

impl ThresholdConfig {
    pub fn for_kind(&self, kind: ArtefactKind) -> Thresholds {
        match kind {
            ArtefactKind::Requirement => self.requirement,
            ArtefactKind::TestCase => self.test_case,
            ArtefactKind::BddScenario => self.bdd_scenario,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    #[default]
    Mock,
    Remote,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RubricBackendKind {
    #[default]
    Heuristic,
    Judge,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProviderConfig {
    pub generation: ProviderKind,
    pub chat: Option<RemoteChatConfig>,
    pub embedding: Option<RemoteEmbeddingConfig>,
    pub batch_size: usize,
    pub concurrency: usize,
    pub rubric_backend: RubricBackendKind,
    /// Kind produced by forward generation.
    pub target_kind: ArtefactKind,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        Self {
            generation: ProviderKind::Mock,
            chat: None,
            embedding: None,
            batch_size: 10,
            concurrency: 1,
            rubric_backend: RubricBackendKind::Heuristic,
            target_kind: ArtefactKind::TestCase,
        }
    }
}

impl ProviderConfig {
    pub fn batch_options(&self) -> BatchOptions {
        BatchOptions {
            batch_size: self.batch_size.max(1),
            concurrency: self.concurrency.max(1),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LexiconPaths {
    pub stopwords: Option<PathBuf>,
    pub verbs: Option<PathBuf>,
    pub ambiguity: Option<PathBuf>,
    pub actors: Option<PathBuf>,
    pub outcomes: Option<PathBuf>,
}

impl LexiconPaths {
    /// Shipped lists, replaced by any configured file. Relative paths resolve
    /// against `base`.
    pub fn load(&self, base: &Path) -> Result<Lexicons, ConfigError> {
        let mut lex = Lexicons::default();
        let resolve = |p: &PathBuf| if p.is_absolute() { p.clone() } else { base.join(p) };
        let io_err = |path: PathBuf| move |source| ConfigError::Io { path, source };
        let words = |p: &Option<PathBuf>, default: &mut WordSet| -> Result<(), ConfigError> {
            if let Some(p) = p {
                let path = resolve(p);
                *default = WordSet::from_file(&path).map_err(io_err(path.clone()))?;
            }
            Ok(())
        };
        words(&self.stopwords, &mut lex.stopwords)?;
        words(&self.verbs, &mut lex.verbs)?;
        words(&self.actors, &mut lex.actors)?;
        words(&self.outcomes, &mut lex.outcomes)?;
        if let Some(p) = &self.ambiguity {
            let path = resolve(p);
            lex.ambiguity = AmbiguityLexicon::from_file(&path).map_err(io_err(path.clone()))?;
        }
        Ok(lex)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConvergenceConfig {
    pub rubric_delta: f64,
    pub cosine_delta: f64,
    pub max_cycles: u32,
}

impl Default for ConvergenceConfig {
    fn default() -> Self {
        Self {
            rubric_delta: 0.1,
            cosine_delta: 0.02,
            max_cycles: 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnergyRates {
    pub energy_per_op_kwh: f64,
    pub grid_factor_tons_per_kwh: f64,
    pub baseline_ops: Option<i64>,
}

impl Default for EnergyRates {
    fn default() -> Self {
        Self {
            energy_per_op_kwh: 0.1,
            grid_factor_tons_per_kwh: 0.0004,
            baseline_ops: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub addr: String,
    /// Environment variable holding the shared bearer token; auth is off when unset.
    pub token_env: Option<String>,
    pub cors_origin: Option<String>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            addr: "127.0.0.1:8080".into(),
            token_env: None,
            cors_origin: None,
        }
    }
}

impl ServiceConfig {
    pub fn token(&self) -> Option<String> {
        self.token_env
            .as_deref()
            .and_then(|n| std::env::var(n).ok())
            .filter(|t| !t.is_empty())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProjectConfig {
    pub workspace: PathBuf,
    pub thresholds: ThresholdConfig,
    pub providers: ProviderConfig,
    pub lexicons: LexiconPaths,
    pub convergence: ConvergenceConfig,
    pub energy: EnergyRates,
    pub service: ServiceConfig,
    /// Minimum degradation level for a meaningful negative validation.
    pub min_degradation: f64,
}

impl Default for ProjectConfig {
    fn default() -> Self {
        Self {
            workspace: PathBuf::from("workspace"),
            thresholds: ThresholdConfig::default(),
            providers: ProviderConfig::default(),
            lexicons: LexiconPaths::default(),
            convergence: ConvergenceConfig::default(),
            energy: EnergyRates::default(),
            service: ServiceConfig::default(),
            min_degradation: 0.5,
        }
    }
}

impl ProjectConfig {
    pub fn parse(text: &str, path: &Path) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text, path)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        for kind in [ArtefactKind::Requirement, ArtefactKind::TestCase, ArtefactKind::BddScenario] {
            self.thresholds
                .for_kind(kind)
                .validate()
                .map_err(|source| ConfigError::Thresholds { kind, source })?;
        }
        let rates = [
            ("energy.energy_per_op_kwh", self.energy.energy_per_op_kwh),
            ("energy.grid_factor_tons_per_kwh", self.energy.grid_factor_tons_per_kwh),
            ("convergence.rubric_delta", self.convergence.rubric_delta),
            ("convergence.cosine_delta", self.convergence.cosine_delta),
        ];
        if let Some((name, _)) = rates.iter().find(|(_, v)| v.is_nan() || *v < 0.0) {
            return Err(ConfigError::NegativeRate(name));
        }
        if self.energy.baseline_ops.is_some_and(|b| b < 0) {
            return Err(ConfigError::NegativeRate("energy.baseline_ops"));
        }
        if self.convergence.max_cycles == 0 {
            return Err(ConfigError::Invalid("convergence.max_cycles must be at least 1".into()));
        }
        if self.providers.target_kind == ArtefactKind::Requirement {
            return Err(ConfigError::Invalid(
                "providers.target_kind must be test_case or bdd_scenario".into(),
            ));
        }
        if self.providers.generation == ProviderKind::Remote && self.providers.chat.is_none() {
            return Err(ConfigError::Invalid(
                "providers.generation = \"remote\" needs a [providers.chat] section".into(),
            ));
        }
        Ok(())
    }

    pub fn generation_provider(
        &self,
        kind: ProviderKind,
    ) -> Result<Arc<dyn GenerationProvider>, ConfigError> {
        match kind {
            ProviderKind::Mock => Ok(Arc::new(MockProvider)),
            ProviderKind::Remote => {
                let chat = self.providers.chat.clone().ok_or_else(|| {
                    ConfigError::Invalid("remote generation needs a [providers.chat] section".into())
                })?;
                let path = chat.forward_template.clone().unwrap_or_default();
                RemoteChatProvider::new(chat)
                    .map(|p| Arc::new(p) as Arc<dyn GenerationProvider>)
                    .map_err(|source| ConfigError::Io { path, source })
            }
        }
    }

    /// Embedder per config; `cache` of `None` keeps vectors in memory only.
    pub fn analyzer(&self, base: &Path, cache: Option<&Path>, clock: Clock) -> Result<Analyzer, ConfigError> {
        let lexicons = self.lexicons.load(base)?;
        let cache = Arc::new(match cache {
            Some(p) => EmbeddingCache::open(p)?,
            None => EmbeddingCache::in_memory(),
        });
        let provider: Arc<dyn crate::embedding::EmbeddingProvider> = match &self.providers.embedding {
            Some(remote) => Arc::new(RemoteEmbedder::new(remote.clone())),
            None => Arc::new(HashEmbedder::new(lexicons.stopwords.clone())),
        };
        Ok(Analyzer::new(Embedder::new(provider, cache, clock), lexicons))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_are_rejected() {
        let err = ProjectConfig::parse("[convergence]\nmax_cycle = 4\n", Path::new("qeloop.toml")).unwrap_err();
        assert!(matches!(err, ConfigError::Parse { .. }), "{err}");
    }

    #[test]
    fn empty_file_gives_defaults() {
        let cfg = ProjectConfig::parse("", Path::new("qeloop.toml")).unwrap();
        assert_eq!(cfg, ProjectConfig::default());
        assert_eq!(cfg.convergence.max_cycles, 3);
        assert_eq!(cfg.providers.batch_size, 10);
    }

    #[test]
    fn overrides_and_validation() {
        let cfg = ProjectConfig::parse(
            "[thresholds.bdd_scenario]\nhigh = 0.85\nmedium = 0.65\nlow = 0.35\n\n[convergence]\nmax_cycles = 5\n",
            Path::new("x"),
        )
        .unwrap();
        assert_eq!(cfg.thresholds.for_kind(ArtefactKind::BddScenario).high, 0.85);
        assert_eq!(cfg.thresholds.requirement, Thresholds::default());
        assert_eq!(cfg.convergence.max_cycles, 5);

        let bad = ProjectConfig::parse("[thresholds.test_case]\nhigh = 0.5\nmedium = 0.6\nlow = 0.3\n", Path::new("x"));
        assert!(matches!(bad, Err(ConfigError::Thresholds { .. })));
        let neg = ProjectConfig::parse("[energy]\nenergy_per_op_kwh = -1.0\n", Path::new("x"));
        assert!(matches!(neg, Err(ConfigError::NegativeRate(_))));
        let remote = ProjectConfig::parse("[providers]\ngeneration = \"remote\"\n", Path::new("x"));
        assert!(matches!(remote, Err(ConfigError::Invalid(_))));
    }
}
