pub mod agent;
pub mod bootstrap;
pub mod data_agent;
pub mod distill;
pub mod gateway;
pub mod model;
pub mod prompts;
pub mod similarity;
pub mod store;

#[cfg(feature = "test-support")]
pub mod testkit;
