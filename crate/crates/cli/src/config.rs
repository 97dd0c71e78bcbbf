use std::path::{Path, PathBuf};

use gpm_core::completion::{FunctionSpec, LoopSpec, SweepParams};
use gpm_core::environments::EnvConfig;
use gpm_core::improve::ImproveConfig;
use gpm_core::models::{EndpointConfig, ModelKind, ModelSpec};
use gpm_core::pcfg::{GeneratorConfig, SearchLimits};
use serde::{Deserialize, Serialize};

/// A problem with how a run was configured, as opposed to a failure while
/// running it. Maps to exit status 2.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

pub fn config_err(message: impl Into<String>) -> anyhow::Error {
    ConfigError(message.into()).into()
}

/// The global config file. Every section is optional; command-line flags
/// win over anything set here.
///
/// ```toml
/// seed = 7
/// parallel = 4
///
/// [model]
/// kind = "remote"
///
/// [model.endpoint]
/// base_url = "https://api.example.com"
/// model = "my-completion-model"
/// credential_env = "COMPLETIONS_API_KEY"
///
/// [improve]
/// token_budget = 1024
/// ```
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub parallel: Option<usize>,
    pub model: Option<ModelSection>,
    pub pcfg: PcfgSection,
    pub improve: ImproveConfig,
    pub env: EnvConfig,
    pub completion: CompletionSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub kind: Option<ModelKind>,
    pub endpoint: Option<EndpointConfig>,
    pub script: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PcfgSection {
    pub generator: GeneratorConfig,
    pub search: SearchLimits,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompletionSection {
    pub function: FunctionSpec,
    pub loops: Option<LoopSpec>,
    pub sweep: SweepParams,
}

impl FileConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| config_err(format!("{}: {e}", path.display())))
    }

    /// The model to use: `--model` overrides the file's kind, the endpoint
    /// and script always come from the file or flags.
    pub fn model_spec(&self, flag_kind: Option<ModelKind>, flag_script: Option<PathBuf>, default: ModelKind) -> ModelSpec {
        let section = self.model.clone().unwrap_or(ModelSection { kind: None, endpoint: None, script: None });
        ModelSpec {
            kind: flag_kind.or(section.kind).unwrap_or(default),
            endpoint: section.endpoint,
            script: flag_script.or(section.script),
        }
    }
}
