//! Run configuration.
//!
//! One TOML file drives every command. Relative paths are resolved against
//! the directory holding the config file, but are recorded in manifests as
//! written so manifests do not depend on where the repository is checked out.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::blend::{MixRatio, STANDARD_RATIOS};
use crate::clients::{InferenceEndpoint, MockConfig};
use crate::corpus::CorpusFormat;

pub const AUTH_TOKEN_ENV: &str = "ECFORGE_AUTH_TOKEN";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    #[serde(default = "default_workers")]
    pub workers: usize,
    pub output_dir: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub run_id: Option<String>,
    pub corpus: CorpusPaths,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub causal_pool: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub template: Option<PathBuf>,
    /// Used by `blend` and recorded by `evaluate`.
    #[serde(default = "default_ratio")]
    pub ratio: MixRatio,
    #[serde(default = "default_sweep_ratios")]
    pub sweep_ratios: Vec<MixRatio>,
    #[serde(default)]
    pub endpoints: Endpoints,
    #[serde(default)]
    pub mock: MockSettings,
    #[serde(default)]
    pub ablation: Ablation,
    #[serde(skip)]
    base_dir: PathBuf,
}

fn default_workers() -> usize {
    4
}

fn default_ratio() -> MixRatio {
    MixRatio::new(5)
}

fn default_sweep_ratios() -> Vec<MixRatio> {
    STANDARD_RATIOS.into_iter().map(MixRatio::new).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusPaths {
    pub train: PathBuf,
    pub test: PathBuf,
    #[serde(default)]
    pub format: CorpusFormat,
}

/// Either the literal string `"mock"` or an HTTP endpoint table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EndpointSpec {
    Named(String),
    Http(InferenceEndpoint),
}

impl Default for EndpointSpec {
    fn default() -> Self {
        EndpointSpec::Named("mock".into())
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Endpoints {
    #[serde(default)]
    pub generator: EndpointSpec,
    #[serde(default)]
    pub embedder: EndpointSpec,
    #[serde(default)]
    pub polarity: EndpointSpec,
    #[serde(default)]
    pub completer: EndpointSpec,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MockSettings {
    #[serde(default = "default_none_fraction")]
    pub none_fraction: f64,
    #[serde(default = "default_dim")]
    pub dim: usize,
}

fn default_none_fraction() -> f64 {
    MockConfig::default().none_fraction
}

fn default_dim() -> usize {
    MockConfig::default().dim
}

impl Default for MockSettings {
    fn default() -> Self {
        Self {
            none_fraction: default_none_fraction(),
            dim: default_dim(),
        }
    }
}

impl From<MockSettings> for MockConfig {
    fn from(m: MockSettings) -> Self {
        MockConfig {
            none_fraction: m.none_fraction,
            dim: m.dim,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Ablation {
    /// Templates carry only the task description and document context.
    #[serde(default)]
    pub no_emotional_knowledge: bool,
    /// Forces a 1:0 ratio.
    #[serde(default)]
    pub no_causal_knowledge: bool,
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub output_dir: Option<PathBuf>,
    pub ratio: Option<MixRatio>,
    pub sweep_ratios: Option<Vec<MixRatio>>,
    pub run_id: Option<String>,
    pub no_emotional_knowledge: bool,
    pub no_causal_knowledge: bool,
}

impl RunConfig {
    pub fn from_toml(raw: &str, base_dir: &Path) -> Result<Self, PipelineError> {
        let mut config: RunConfig =
            toml::from_str(raw).map_err(|e| PipelineError::Config(e.to_string()))?;
        config.base_dir = base_dir.to_path_buf();
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let raw = std::fs::read_to_string(path).map_err(|e| {
            PipelineError::Config(format!("reading config {}: {e}", path.display()))
        })?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_toml(&raw, &base)
    }

    pub fn apply(&mut self, o: Overrides) {
        if let Some(v) = o.seed {
            self.seed = v;
        }
        if let Some(v) = o.workers {
            self.workers = v;
        }
        if let Some(v) = o.output_dir {
            self.output_dir = v;
        }
        if let Some(v) = o.ratio {
            self.ratio = v;
        }
        if let Some(v) = o.sweep_ratios {
            self.sweep_ratios = v;
        }
        if let Some(v) = o.run_id {
            self.run_id = Some(v);
        }
        self.ablation.no_emotional_knowledge |= o.no_emotional_knowledge;
        self.ablation.no_causal_knowledge |= o.no_causal_knowledge;
        if self.ablation.no_causal_knowledge {
            self.ratio = MixRatio::new(0);
            self.sweep_ratios = vec![MixRatio::new(0)];
        }
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn output_path(&self) -> PathBuf {
        self.resolve(&self.output_dir)
    }

    /// Checks the invariants that cannot be expressed in the schema.
    pub fn validate(&self) -> Result<(), PipelineError> {
        let mut problems = Vec::new();
        if self.workers == 0 {
            problems.push("workers must be at least 1".to_string());
        }
        if self.sweep_ratios.is_empty() {
            problems.push("sweep_ratios must not be empty".to_string());
        }
        if !(0.0..=1.0).contains(&self.mock.none_fraction) {
            problems.push("mock.none_fraction must lie in [0, 1]".into());
        }
        if self.mock.dim == 0 {
            problems.push("mock.dim must be positive".into());
        }
        let mut paths = vec![
            ("corpus.train", &self.corpus.train),
            ("corpus.test", &self.corpus.test),
        ];
        if let Some(p) = &self.causal_pool {
            paths.push(("causal_pool", p));
        }
        if let Some(p) = &self.template {
            paths.push(("template", p));
        }
        for (name, p) in paths {
            if !self.resolve(p).is_file() {
                problems.push(format!(
                    "{name}: {} does not exist",
                    self.resolve(p).display()
                ));
            }
        }
        for (role, spec) in self.endpoints.roles() {
            match spec {
                EndpointSpec::Named(n) if n == "mock" => {}
                EndpointSpec::Named(n) => {
                    problems.push(format!("endpoints.{role}: unknown backend `{n}`"))
                }
                EndpointSpec::Http(e) => {
                    if let Err(msg) = e.validate() {
                        problems.push(format!("endpoints.{role}: {msg}"));
                    }
                }
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(PipelineError::Config(problems.join("; ")))
        }
    }

    /// Label for reports: which knowledge sources are active.
    pub fn method(&self) -> String {
        match (
            self.ablation.no_emotional_knowledge,
            self.ablation.no_causal_knowledge || self.ratio.causal_part == 0,
        ) {
            (false, false) => "full",
            (true, false) => "no-emotional-knowledge",
            (false, true) => "no-causal-knowledge",
            (true, true) => "no-knowledge",
        }
        .to_string()
    }
}

impl Endpoints {
    pub fn roles(&self) -> [(&'static str, &EndpointSpec); 4] {
        [
            ("generator", &self.generator),
            ("embedder", &self.embedder),
            ("polarity", &self.polarity),
            ("completer", &self.completer),
        ]
    }
}
