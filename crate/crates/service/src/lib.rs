//! HTTP service and operator CLI around the workflow agent.

pub mod cli;
pub mod config;
pub mod http;
pub mod journal;

use std::path::PathBuf;

use flowsmith_core::agent::AgentError;
use flowsmith_core::bootstrap::BootstrapError;
use flowsmith_core::data_agent::DataAgentError;
use flowsmith_core::distill::DistillError;
use flowsmith_core::gateway::GatewayError;
use flowsmith_core::store::StoreError;

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("run journal line {line}: {reason}")]
    Journal { line: usize, reason: String },
    #[error("{0}")]
    Input(String),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Bootstrap(#[from] BootstrapError),
    #[error(transparent)]
    Distill(#[from] DistillError),
    #[error(transparent)]
    DataAgent(#[from] DataAgentError),
}

pub(crate) fn io_error(path: &std::path::Path) -> impl FnOnce(std::io::Error) -> ServiceError + '_ {
    move |source| ServiceError::Io {
        path: path.to_path_buf(),
        source,
    }
}
