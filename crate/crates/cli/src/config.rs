//! Declarative run configuration (TOML). Relative paths are resolved
//! against the directory of the config file; command-line flags override
//! file values.

use std::path::{Path, PathBuf};

use kgaug_core::assembler::ExportFormat;
use kgaug_core::corpus::DatasetLayout;
use kgaug_core::embed::{ModelFamily, NormOrder, StepDecay, TrainConfig};
use kgaug_core::eval::TieBreak;
use kgaug_core::Split;
use kgaug_gateway::{Endpoint, GenerationParams, PromptPlan, RetryPolicy};
use serde::{Deserialize, Serialize};

use crate::error::ConfigError;

pub const DEFAULT_SEED: u64 = 42;
pub const DEFAULT_BUDGET: usize = 30;
pub const DEFAULT_CONCURRENCY: usize = 8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_seed")]
    pub seed: u64,
    pub dataset: DatasetSection,
    /// Subword vocabulary file, one token per line.
    pub vocab: PathBuf,
    #[serde(default)]
    pub route: RouteSection,
    #[serde(default)]
    pub prompt: PromptSection,
    #[serde(default)]
    pub llm: LlmSection,
    #[serde(default)]
    pub clean: CleanSection,
    #[serde(default)]
    pub export: ExportSection,
    /// Training and evaluation run only when this section is present.
    #[serde(default)]
    pub train: Option<TrainSection>,
    #[serde(default)]
    pub eval: EvalSection,
}

fn default_seed() -> u64 {
    DEFAULT_SEED
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    pub path: PathBuf,
    /// Detected from the files present when omitted.
    #[serde(default)]
    pub layout: Option<DatasetLayout>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RouteSection {
    pub budget: usize,
}

impl Default for RouteSection {
    fn default() -> Self {
        RouteSection { budget: DEFAULT_BUDGET }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PromptSection {
    /// Template file; the built-in templates are used when omitted.
    pub templates: Option<PathBuf>,
    pub compress_template: String,
    pub expand_template: String,
}

impl Default for PromptSection {
    fn default() -> Self {
        let plan = PromptPlan::default();
        PromptSection {
            templates: None,
            compress_template: plan.compress_template,
            expand_template: plan.expand_template,
        }
    }
}

impl PromptSection {
    pub fn plan(&self) -> PromptPlan {
        PromptPlan {
            compress_template: self.compress_template.clone(),
            expand_template: self.expand_template.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LlmSection {
    /// Base URL of an OpenAI-style server.
    pub endpoint: Option<String>,
    /// Environment variable holding the API key.
    pub api_key_env: Option<String>,
    pub model: Option<String>,
    pub temperature: f64,
    pub max_tokens: u32,
    pub timeout_secs: f64,
    pub max_temperature: f64,
    pub max_concurrency: usize,
    /// Response cache directory; `<run dir>/cache` when omitted.
    pub cache_dir: Option<PathBuf>,
    pub retry: RetryPolicy,
}

impl Default for LlmSection {
    fn default() -> Self {
        let p = GenerationParams::new("");
        LlmSection {
            endpoint: None,
            api_key_env: None,
            model: None,
            temperature: p.temperature,
            max_tokens: p.max_tokens,
            timeout_secs: p.timeout_secs,
            max_temperature: p.max_temperature,
            max_concurrency: DEFAULT_CONCURRENCY,
            cache_dir: None,
            retry: RetryPolicy::default(),
        }
    }
}

impl LlmSection {
    /// Generation parameters; the model must be set.
    pub fn params(&self) -> Result<GenerationParams, ConfigError> {
        let model = self
            .model
            .clone()
            .ok_or_else(|| ConfigError::Invalid("llm.model is required to augment".into()))?;
        let p = GenerationParams {
            model,
            temperature: self.temperature,
            max_tokens: self.max_tokens,
            timeout_secs: self.timeout_secs,
            max_temperature: self.max_temperature,
        };
        p.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(p)
    }

    pub fn endpoint(&self) -> Result<Endpoint, ConfigError> {
        let base_url = self
            .endpoint
            .clone()
            .ok_or_else(|| ConfigError::Invalid("llm.endpoint is required to augment".into()))?;
        Ok(Endpoint {
            base_url,
            api_key_env: self.api_key_env.clone(),
        })
    }

    pub fn cache_dir(&self, run_dir: &Path) -> PathBuf {
        self.cache_dir.clone().unwrap_or_else(|| run_dir.join("cache"))
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CleanSection {
    /// Rule file; the built-in rules are used when omitted.
    pub rules: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExportSection {
    pub format: ExportFormat,
}

impl Default for ExportSection {
    fn default() -> Self {
        ExportSection {
            format: ExportFormat::Tsv,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScalarKind {
    #[default]
    F32,
    F64,
}

/// Overrides on top of the shipped defaults for `family`. The seed is the
/// run seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub family: ModelFamily,
    #[serde(default)]
    pub scalar: ScalarKind,
    pub dim: Option<usize>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub learning_rate: Option<f64>,
    pub negatives: Option<usize>,
    pub margin: Option<f64>,
    pub adversarial_temperature: Option<f64>,
    pub regularization: Option<f64>,
    pub norm: Option<NormOrder>,
    /// `every = 0` disables decay.
    pub decay: Option<StepDecay>,
}

impl TrainSection {
    pub fn new(family: ModelFamily) -> Self {
        TrainSection {
            family,
            scalar: ScalarKind::default(),
            dim: None,
            epochs: None,
            batch_size: None,
            learning_rate: None,
            negatives: None,
            margin: None,
            adversarial_temperature: None,
            regularization: None,
            norm: None,
            decay: None,
        }
    }

    pub fn resolve(&self, seed: u64) -> TrainConfig {
        let d = TrainConfig::default_for(self.family);
        TrainConfig {
            family: self.family,
            dim: self.dim.unwrap_or(d.dim),
            epochs: self.epochs.unwrap_or(d.epochs),
            batch_size: self.batch_size.unwrap_or(d.batch_size),
            learning_rate: self.learning_rate.unwrap_or(d.learning_rate),
            negatives: self.negatives.unwrap_or(d.negatives),
            margin: self.margin.unwrap_or(d.margin),
            adversarial_temperature: self.adversarial_temperature.unwrap_or(d.adversarial_temperature),
            regularization: self.regularization.unwrap_or(d.regularization),
            norm: self.norm.unwrap_or(d.norm),
            decay: match self.decay {
                Some(StepDecay { every: 0, .. }) => None,
                Some(decay) => Some(decay),
                None => d.decay,
            },
            seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub split: Split,
    pub tie_break: TieBreak,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            split: Split::Test,
            tie_break: TieBreak::default(),
        }
    }
}

/// Command-line values that win over the file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub budget: Option<usize>,
    pub endpoint: Option<String>,
    pub model: Option<String>,
    pub temperature: Option<f64>,
    pub max_concurrency: Option<usize>,
    pub cache_dir: Option<PathBuf>,
    pub format: Option<ExportFormat>,
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl RunConfig {
    /// A config with every optional section at its default.
    pub fn new(dataset: impl Into<PathBuf>, vocab: impl Into<PathBuf>) -> Self {
        RunConfig {
            seed: DEFAULT_SEED,
            dataset: DatasetSection {
                path: dataset.into(),
                layout: None,
            },
            vocab: vocab.into(),
            route: RouteSection::default(),
            prompt: PromptSection::default(),
            llm: LlmSection::default(),
            clean: CleanSection::default(),
            export: ExportSection::default(),
            train: None,
            eval: EvalSection::default(),
        }
    }

    pub fn parse(text: &str, base_dir: &Path) -> Result<Self, ConfigError> {
        let mut config: RunConfig = toml::from_str(text)?;
        config.resolve_paths(base_dir);
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base)
    }

    fn resolve_paths(&mut self, base: &Path) {
        resolve(base, &mut self.dataset.path);
        resolve(base, &mut self.vocab);
        for p in [
            &mut self.prompt.templates,
            &mut self.clean.rules,
            &mut self.llm.cache_dir,
        ]
        .into_iter()
        .flatten()
        {
            resolve(base, p);
        }
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(seed) = o.seed {
            self.seed = seed;
        }
        if let Some(budget) = o.budget {
            self.route.budget = budget;
        }
        if let Some(endpoint) = &o.endpoint {
            self.llm.endpoint = Some(endpoint.clone());
        }
        if let Some(model) = &o.model {
            self.llm.model = Some(model.clone());
        }
        if let Some(t) = o.temperature {
            self.llm.temperature = t;
        }
        if let Some(c) = o.max_concurrency {
            self.llm.max_concurrency = c;
        }
        if let Some(dir) = &o.cache_dir {
            self.llm.cache_dir = Some(dir.clone());
        }
        if let Some(format) = o.format {
            self.export.format = format;
        }
    }

    /// Checks values and that every referenced input path exists. LLM
    /// settings are checked when a stage needs them.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let exists = |what: &'static str, p: &Path, dir: bool| {
            let ok = if dir { p.is_dir() } else { p.is_file() };
            if ok {
                Ok(())
            } else {
                Err(ConfigError::MissingPath {
                    what,
                    path: p.to_path_buf(),
                })
            }
        };
        exists("dataset directory", &self.dataset.path, true)?;
        exists("vocabulary", &self.vocab, false)?;
        if let Some(p) = &self.prompt.templates {
            exists("template file", p, false)?;
        }
        if let Some(p) = &self.clean.rules {
            exists("rule file", p, false)?;
        }
        if self.route.budget < 1 {
            return Err(ConfigError::Invalid(format!(
                "route.budget must be at least 1, got {}",
                self.route.budget
            )));
        }
        if self.llm.max_concurrency < 1 {
            return Err(ConfigError::Invalid("llm.max_concurrency must be at least 1".into()));
        }
        if let Some(train) = &self.train {
            train
                .resolve(self.seed)
                .validate()
                .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        }
        Ok(())
    }
}
