//! Service configuration, read from one TOML document.
//!
//! Relative paths resolve against the directory holding the config file.
//! Credentials are never read from this file; `gateway.credential_env` names
//! the environment variable that holds the key.

use std::path::{Path, PathBuf};

use flowsmith_core::agent::AgentConfig;
use flowsmith_core::bootstrap::BootstrapPlan;
use flowsmith_core::data_agent::SchemaSource;
use flowsmith_core::distill::DistillConfig;
use flowsmith_core::gateway::{Gateway, GatewayBackend, GatewayConfig, LiveBackend, ScriptedBackend};
use flowsmith_core::model::ScopeDescription;
use flowsmith_core::prompts::PromptSuite;
use flowsmith_core::store::{StoreHandle, STORE_FILE};
use serde::{Deserialize, Serialize};

use crate::ServiceError;

pub const DEFAULT_CONFIG: &str = "flowsmith.toml";
pub const QUERIES_FILE: &str = "queries.jsonl";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Live,
    Scripted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GatewaySettings {
    pub backend: BackendKind,
    /// Base URL of an OpenAI-compatible API (live only).
    #[serde(default)]
    pub endpoint: Option<String>,
    #[serde(default = "default_credential_env")]
    pub credential_env: String,
    /// JSON script file (scripted only).
    #[serde(default)]
    pub script: Option<PathBuf>,
    #[serde(flatten)]
    pub tuning: GatewayConfig,
}

fn default_credential_env() -> String {
    "OPENAI_API_KEY".into()
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct DataAgentSettings {
    pub schema: Option<SchemaSource>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServiceConfig {
    /// Directory for the store and every generated artifact.
    #[serde(default = "default_data_dir")]
    pub data_dir: PathBuf,
    /// Defaults to `<data_dir>/examples.jsonl`.
    #[serde(default)]
    pub store_path: Option<PathBuf>,
    /// Overrides for the built-in prompt templates.
    #[serde(default)]
    pub prompt_dir: Option<PathBuf>,
    /// Markdown document whose first line is the title.
    pub scope_file: PathBuf,
    #[serde(default = "default_listen")]
    pub listen: String,
    pub gateway: GatewaySettings,
    #[serde(default)]
    pub agent: AgentConfig,
    #[serde(default)]
    pub bootstrap: BootstrapPlan,
    #[serde(default)]
    pub distill: DistillConfig,
    #[serde(default)]
    pub data_agent: DataAgentSettings,
}

fn default_data_dir() -> PathBuf {
    PathBuf::from("data")
}

fn default_listen() -> String {
    "127.0.0.1:8080".into()
}

impl ServiceConfig {
    pub fn from_toml(text: &str, base: &Path) -> Result<Self, ServiceError> {
        let mut config: Self = toml::from_str(text).map_err(|e| ServiceError::Config(e.to_string()))?;
        config.resolve(base);
        config.agent.validate().map_err(|e| ServiceError::Config(e.to_string()))?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, ServiceError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            ServiceError::Config(format!(
                "cannot read config {}: {e}. Pass --config <file> or create {DEFAULT_CONFIG} (see README)",
                path.display()
            ))
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml(&text, base)
    }

    fn resolve(&mut self, base: &Path) {
        let abs = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        abs(&mut self.data_dir);
        abs(&mut self.scope_file);
        for p in [&mut self.store_path, &mut self.prompt_dir, &mut self.gateway.script]
            .into_iter()
            .flatten()
        {
            abs(p);
        }
        if let Some(SchemaSource::File { path }) = &mut self.data_agent.schema {
            abs(path);
        }
        if self.store_path.is_none() {
            self.store_path = Some(self.data_dir.join(STORE_FILE));
        }
    }

    pub fn store_path(&self) -> &Path {
        self.store_path.as_deref().expect("resolved at load")
    }

    pub fn queries_path(&self) -> PathBuf {
        self.data_dir.join(QUERIES_FILE)
    }

    pub fn scope(&self) -> Result<ScopeDescription, ServiceError> {
        let doc = std::fs::read_to_string(&self.scope_file)
            .map_err(|e| ServiceError::Config(format!("cannot read scope file {}: {e}", self.scope_file.display())))?;
        ScopeDescription::from_document(&doc)
            .map_err(|e| ServiceError::Config(format!("scope file {}: {e}", self.scope_file.display())))
    }

    pub fn prompts(&self) -> Result<PromptSuite, ServiceError> {
        match &self.prompt_dir {
            Some(dir) => PromptSuite::from_dir(dir).map_err(|e| ServiceError::Config(e.to_string())),
            None => Ok(PromptSuite::builtin()),
        }
    }

    pub fn gateway(&self) -> Result<Gateway, ServiceError> {
        let g = &self.gateway;
        let backend = match g.backend {
            BackendKind::Live => {
                let endpoint = g
                    .endpoint
                    .as_deref()
                    .ok_or_else(|| ServiceError::Config("gateway.endpoint is required for the live backend".into()))?;
                GatewayBackend::Live(LiveBackend::from_env(endpoint, &g.credential_env)?)
            }
            BackendKind::Scripted => {
                let script = g
                    .script
                    .as_deref()
                    .ok_or_else(|| ServiceError::Config("gateway.script is required for the scripted backend".into()))?;
                GatewayBackend::Scripted(ScriptedBackend::from_file(script)?)
            }
        };
        Ok(Gateway::new(backend, g.tuning.clone()))
    }

    pub fn open_store(&self) -> Result<StoreHandle, ServiceError> {
        std::fs::create_dir_all(&self.data_dir).map_err(|e| ServiceError::Io {
            path: self.data_dir.clone(),
            source: e,
        })?;
        Ok(StoreHandle::load(self.store_path(), self.gateway.tuning.embedding_dim)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
scope_file = "scope.md"

[gateway]
backend = "live"
endpoint = "https://api.example.com/v1"
"#;

    #[test]
    fn defaults_fill_the_gaps() {
        let c = ServiceConfig::from_toml(MINIMAL, Path::new("/etc/fs")).unwrap();
        assert_eq!(c.store_path(), Path::new("/etc/fs/data/examples.jsonl"));
        assert_eq!(c.scope_file, Path::new("/etc/fs/scope.md"));
        assert_eq!(c.agent, AgentConfig::default());
        assert_eq!(c.gateway.credential_env, "OPENAI_API_KEY");
        assert_eq!(c.gateway.tuning.embedding_dim, 1536);
        assert_eq!(c.distill.keep_top, 8);
    }

    #[test]
    fn nested_sections_parse() {
        let text = format!(
            "{MINIMAL}embedding_dim = 8\nretries = 1\nbackoff = 0\n[gateway.models]\nreasoner = \"r1\"\n\
             [agent]\nconvergence_threshold = 0.8\n[[distill.slices]]\nname = \"a\"\nthrough = 80\n\
             [[distill.slices]]\nname = \"b\"\n[data_agent.schema]\nkind = \"file\"\npath = \"schema.txt\"\n"
        );
        let c = ServiceConfig::from_toml(&text, Path::new("/x")).unwrap();
        assert_eq!(c.gateway.tuning.embedding_dim, 8);
        assert_eq!(c.gateway.tuning.models.reasoner, "r1");
        assert_eq!(c.gateway.tuning.models.coder, GatewayConfig::default().models.coder);
        assert_eq!(c.agent.convergence_threshold, 0.8);
        assert_eq!(c.distill.slices.len(), 2);
        assert_eq!(
            c.data_agent.schema,
            Some(SchemaSource::File {
                path: "/x/schema.txt".into()
            })
        );
    }

    #[test]
    fn bundled_example_parses() {
        let c = ServiceConfig::from_toml(include_str!("../../../flowsmith.example.toml"), Path::new("/srv")).unwrap();
        assert_eq!(c.gateway.backend, BackendKind::Live);
        assert_eq!(c.gateway.tuning.timeout, std::time::Duration::from_secs(120));
        assert_eq!(c.bootstrap, BootstrapPlan::default());
        assert_eq!(c.distill.slices.len(), 2);
    }

    #[test]
    fn unknown_top_level_keys_are_rejected() {
        assert!(ServiceConfig::from_toml("data_dri = \"x\"", Path::new("/srv")).is_err());
    }

    #[test]
    fn threshold_out_of_range_is_rejected() {
        let text = format!("{MINIMAL}[agent]\nconvergence_threshold = 1.5\n");
        assert!(matches!(ServiceConfig::from_toml(&text, Path::new(".")), Err(ServiceError::Config(_))));
    }

    #[test]
    fn live_backend_needs_the_credential_variable() {
        let text = MINIMAL.replace("[gateway]", "[gateway]\ncredential_env = \"FLOWSMITH_UNSET_KEY_VAR\"");
        let c = ServiceConfig::from_toml(&text, Path::new(".")).unwrap();
        let err = c.gateway().err().unwrap().to_string();
        assert!(err.contains("FLOWSMITH_UNSET_KEY_VAR"), "{err}");
    }
}
