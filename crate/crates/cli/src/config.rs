//! Run configuration. One TOML file drives every subcommand; secrets are
//! referenced by environment variable name and never stored.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::Deserialize;

use taberr_core::annotation::{ConstraintConfig, FunctionalDependency, TypingRules};
use taberr_core::evaluation::{MetricOptions, RemoteEmbedderConfig, SEpaMode};
use taberr_core::generation::{LlmConfig, TypeWeights};
use taberr_core::prompt::TableTask;

use crate::CliError;

#[derive(Debug, Default, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub dataset: DatasetConfig,
    pub templates: TemplatesConfig,
    pub triplets: TripletsConfig,
    pub typing: TypingConfig,
    pub generation: GenerationConfig,
    pub evaluation: EvaluationConfig,
    pub detection: DetectionConfig,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    pub clean: Option<PathBuf>,
    pub dirty: Option<PathBuf>,
    pub annotations: Option<PathBuf>,
    /// Raw CSV fields loaded as null, in addition to the empty string.
    pub null_markers: Vec<String>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default)]
pub struct TemplatesConfig {
    pub path: Option<PathBuf>,
}

#[derive(Debug, Deserialize)]
#[serde(default)]
pub struct TripletsConfig {
    pub tasks: Vec<String>,
    pub context_rows: usize,
    pub split: Option<f64>,
    /// Instances to synthesize per error-unrelated task in `tasks`.
    pub aux_instances: usize,
}

impl Default for TripletsConfig {
    fn default() -> Self {
        TripletsConfig {
            tasks: vec![
                "error_generation".into(),
                "error_detection".into(),
                "error_correction".into(),
            ],
            context_rows: 9,
            split: None,
            aux_instances: 0,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(default)]
pub struct TypingConfig {
    pub placeholders: Option<Vec<String>>,
    pub fds: Vec<String>,
    pub z_threshold: f64,
}

impl Default for TypingConfig {
    fn default() -> Self {
        TypingConfig {
            placeholders: None,
            fds: Vec::new(),
            z_threshold: 3.0,
        }
    }
}

impl TypingConfig {
    pub fn constraints(&self) -> Result<ConstraintConfig, CliError> {
        let mut fds = Vec::new();
        for text in &self.fds {
            fds.push(
                FunctionalDependency::parse(text)
                    .map_err(|e| CliError::usage(format!("bad fd in [typing]: {e}")))?,
            );
        }
        Ok(ConstraintConfig { fds })
    }

    pub fn typing_rules(&self) -> Result<TypingRules, CliError> {
        let mut rules = TypingRules {
            constraints: self.constraints()?,
            z_threshold: self.z_threshold,
            ..TypingRules::default()
        };
        if let Some(placeholders) = &self.placeholders {
            rules.placeholders = placeholders.iter().cloned().collect();
        }
        Ok(rules)
    }
}

#[derive(Debug, Deserialize)]
#[serde(default)]
pub struct GenerationConfig {
    pub backend: String,
    pub rho: f64,
    pub sub_table_rows: usize,
    pub max_attempts: Option<usize>,
    pub type_ratio: Option<BTreeMap<String, f64>>,
    pub llm: LlmSection,
    pub replay: ReplaySection,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        GenerationConfig {
            backend: "rule".into(),
            rho: 0.05,
            sub_table_rows: 10,
            max_attempts: None,
            type_ratio: None,
            llm: LlmSection::default(),
            replay: ReplaySection::default(),
        }
    }
}

impl GenerationConfig {
    pub fn type_weights(&self) -> Result<TypeWeights, CliError> {
        let Some(map) = &self.type_ratio else {
            return Ok(TypeWeights::uniform());
        };
        let mut weights = [0.0f64; 4];
        for (name, weight) in map {
            let ty = taberr_core::ErrorType::parse(name).map_err(CliError::usage)?;
            weights[ty.index()] = *weight;
        }
        TypeWeights::new(weights).map_err(|e| CliError::usage(e.to_string()))
    }
}

#[derive(Debug, Deserialize)]
#[serde(default)]
pub struct LlmSection {
    pub endpoint: String,
    pub model: String,
    /// Name of the environment variable holding the bearer token.
    pub auth_env: Option<String>,
    pub temperature: f64,
    pub max_tokens: u32,
    pub timeout_secs: u64,
    pub retries: u32,
}

impl Default for LlmSection {
    fn default() -> Self {
        LlmSection {
            endpoint: String::new(),
            model: String::new(),
            auth_env: None,
            temperature: 0.7,
            max_tokens: 256,
            timeout_secs: 30,
            retries: 3,
        }
    }
}

impl LlmSection {
    pub fn llm_config(&self) -> Result<LlmConfig, CliError> {
        if self.endpoint.is_empty() {
            return Err(CliError::usage("[generation.llm] endpoint is empty"));
        }
        let auth_token = match &self.auth_env {
            Some(var) => Some(std::env::var(var).map_err(|_| {
                CliError::usage(format!("environment variable `{var}` is not set"))
            })?),
            None => None,
        };
        Ok(LlmConfig {
            endpoint: self.endpoint.clone(),
            model: self.model.clone(),
            auth_token,
            temperature: self.temperature,
            max_tokens: self.max_tokens,
            timeout: Duration::from_secs(self.timeout_secs),
            retries: self.retries,
        })
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(default)]
pub struct ReplaySection {
    pub recording: Option<PathBuf>,
}

#[derive(Debug, Deserialize)]
#[serde(default)]
pub struct EvaluationConfig {
    pub k: Vec<usize>,
    pub epsilon: f64,
    pub provider: String,
    /// Score neighbors by 1 - cosine instead of cosine.
    pub pseudocode_compat: bool,
    /// Average the column Jaccard only over columns carrying error mass.
    pub restrict_support: bool,
    pub generated_annotations: Option<PathBuf>,
    pub hashed: HashedSection,
    pub remote: RemoteSection,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        EvaluationConfig {
            k: vec![1, 5, 10, 20],
            epsilon: 1e-10,
            provider: "hashed".into(),
            pseudocode_compat: false,
            restrict_support: false,
            generated_annotations: None,
            hashed: HashedSection::default(),
            remote: RemoteSection::default(),
        }
    }
}

impl EvaluationConfig {
    pub fn metric_options(&self) -> MetricOptions {
        MetricOptions {
            ks: self.k.clone(),
            epsilon: self.epsilon,
            mode: if self.pseudocode_compat {
                SEpaMode::OneMinusCosine
            } else {
                SEpaMode::MaxCosine
            },
            restrict_support: self.restrict_support,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(default)]
pub struct HashedSection {
    pub dimension: usize,
    pub seed: u64,
}

impl Default for HashedSection {
    fn default() -> Self {
        HashedSection {
            dimension: 256,
            seed: 7,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(default)]
pub struct RemoteSection {
    pub endpoint: String,
    pub model: String,
    pub auth_env: Option<String>,
    pub timeout_secs: u64,
    pub retries: u32,
}

impl Default for RemoteSection {
    fn default() -> Self {
        RemoteSection {
            endpoint: String::new(),
            model: String::new(),
            auth_env: None,
            timeout_secs: 30,
            retries: 3,
        }
    }
}

impl RemoteSection {
    pub fn remote_config(&self) -> Result<RemoteEmbedderConfig, CliError> {
        if self.endpoint.is_empty() {
            return Err(CliError::usage("[evaluation.remote] endpoint is empty"));
        }
        let auth_token = match &self.auth_env {
            Some(var) => Some(std::env::var(var).map_err(|_| {
                CliError::usage(format!("environment variable `{var}` is not set"))
            })?),
            None => None,
        };
        Ok(RemoteEmbedderConfig {
            endpoint: self.endpoint.clone(),
            model: self.model.clone(),
            auth_token,
            timeout: Duration::from_secs(self.timeout_secs),
            retries: self.retries,
        })
    }
}

#[derive(Debug, Deserialize)]
#[serde(default)]
pub struct DetectionConfig {
    pub detectors: Vec<DetectorEntry>,
    /// Column name to regex for the builtin pattern detector.
    pub pattern_regexes: BTreeMap<String, String>,
    pub timeout_secs: u64,
    pub generated_table: Option<PathBuf>,
    pub generated_annotations: Option<PathBuf>,
}

impl Default for DetectionConfig {
    fn default() -> Self {
        DetectionConfig {
            detectors: Vec::new(),
            pattern_regexes: BTreeMap::new(),
            timeout_secs: 60,
            generated_table: None,
            generated_annotations: None,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
pub struct DetectorEntry {
    pub name: String,
    /// `oracle`, `null`, `pattern`, `outlier`, or `external`.
    pub kind: String,
    #[serde(default)]
    pub command: Vec<String>,
}

impl RunConfig {
    /// Loads the config, resolving relative dataset paths against the config
    /// file's directory.
    pub fn load(path: &Path) -> Result<RunConfig, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::usage(format!("cannot read config {}: {e}", path.display())))?;
        let mut config: RunConfig = toml::from_str(&text)
            .map_err(|e| CliError::usage(format!("invalid config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        config.resolve_paths(base);
        Ok(config)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let resolve = |p: &mut Option<PathBuf>| {
            if let Some(path) = p {
                if path.is_relative() {
                    *path = base.join(&path);
                }
            }
        };
        resolve(&mut self.dataset.clean);
        resolve(&mut self.dataset.dirty);
        resolve(&mut self.dataset.annotations);
        resolve(&mut self.templates.path);
        resolve(&mut self.generation.replay.recording);
        resolve(&mut self.evaluation.generated_annotations);
        resolve(&mut self.detection.generated_table);
        resolve(&mut self.detection.generated_annotations);
    }

    pub fn parse_tasks(&self) -> Result<Vec<TableTask>, CliError> {
        self.triplets
            .tasks
            .iter()
            .map(|name| TableTask::parse(name).map_err(CliError::usage))
            .collect()
    }
}
