//! Query-code generation for Data-category steps from an imported graph schema.
//!
//! Generated code is recorded for operator review and never executed here.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::LazyLock;
use std::time::Duration;

use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::gateway::{Gateway, GatewayError};
use crate::model::{StepRef, WorkflowStep};
use crate::prompts::{PromptError, PromptSuite};

static FENCE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?s)```[ \t]*([\w+#.-]*)[^\n]*\n(.*?)```").unwrap());

#[derive(Debug, thiserror::Error)]
pub enum DataAgentError {
    #[error("schema source unreachable: {0}")]
    Unreachable(String),
    #[error("schema is empty")]
    EmptySchema,
    #[error("model reply has no fenced code block")]
    NoCodeBlock,
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

/// Node labels, relationship types, and properties as flat text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphSchema {
    pub text: String,
}

impl GraphSchema {
    pub fn new(text: impl Into<String>) -> Result<Self, DataAgentError> {
        let text = text.into().trim().to_string();
        if text.is_empty() {
            return Err(DataAgentError::EmptySchema);
        }
        Ok(Self { text })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SchemaSource {
    File { path: PathBuf },
    Neo4j {
        /// Base URL of the HTTP endpoint, e.g. `http://localhost:7474`.
        url: String,
        #[serde(default = "default_database")]
        database: String,
        #[serde(default = "default_user")]
        user: String,
        /// Environment variable holding the password.
        password_env: String,
    },
}

fn default_database() -> String {
    "neo4j".into()
}

fn default_user() -> String {
    "neo4j".into()
}

pub fn import_schema(source: &SchemaSource) -> Result<GraphSchema, DataAgentError> {
    match source {
        SchemaSource::File { path } => read_schema_file(path),
        SchemaSource::Neo4j {
            url,
            database,
            user,
            password_env,
        } => {
            let password = std::env::var(password_env)
                .map_err(|_| DataAgentError::Unreachable(format!("environment variable {password_env} is not set")))?;
            let text = introspect_neo4j(url, database, user, &password)?;
            GraphSchema::new(text)
        }
    }
}

fn read_schema_file(path: &Path) -> Result<GraphSchema, DataAgentError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| DataAgentError::Unreachable(format!("{}: {e}", path.display())))?;
    GraphSchema::new(text)
}

const NODE_PROPS: &str = "CALL db.schema.nodeTypeProperties() \
    YIELD nodeType, propertyName, propertyTypes RETURN nodeType, propertyName, propertyTypes";
const REL_PROPS: &str = "CALL db.schema.relTypeProperties() \
    YIELD relType, propertyName, propertyTypes RETURN relType, propertyName, propertyTypes";
const RELS: &str = "MATCH (a)-[r]->(b) \
    RETURN DISTINCT head(labels(a)) AS source, type(r) AS rel, head(labels(b)) AS target";

fn introspect_neo4j(url: &str, database: &str, user: &str, password: &str) -> Result<String, DataAgentError> {
    let unreachable = |e: &dyn std::fmt::Display| DataAgentError::Unreachable(e.to_string());
    let client = reqwest::blocking::Client::builder()
        .timeout(Duration::from_secs(30))
        .build()
        .map_err(|e| unreachable(&e))?;
    let statements: Vec<Value> = [NODE_PROPS, REL_PROPS, RELS]
        .iter()
        .map(|s| json!({ "statement": s }))
        .collect();
    let body = json!({ "statements": statements });
    let response = client
        .post(format!("{}/db/{database}/tx/commit", url.trim_end_matches('/')))
        .basic_auth(user, Some(password))
        .json(&body)
        .send()
        .map_err(|e| unreachable(&e))?;
    let status = response.status();
    if !status.is_success() {
        return Err(DataAgentError::Unreachable(format!("HTTP {status}")));
    }
    let reply: Value = response.json().map_err(|e| unreachable(&e))?;
    if let Some(err) = reply["errors"].as_array().and_then(|e| e.first()) {
        return Err(DataAgentError::Unreachable(err["message"].as_str().unwrap_or("query failed").to_string()));
    }
    let rows = |i: usize| -> Vec<Vec<Value>> {
        reply["results"][i]["data"]
            .as_array()
            .map(|d| d.iter().filter_map(|r| r["row"].as_array().cloned()).collect())
            .unwrap_or_default()
    };
    Ok(format_schema(&rows(0), &rows(1), &rows(2)))
}

/// Renders introspection rows in the flat layout used for schema files.
pub fn format_schema(node_rows: &[Vec<Value>], rel_rows: &[Vec<Value>], edges: &[Vec<Value>]) -> String {
    // Labels keep the order the database reports them in.
    fn grouped(rows: &[Vec<Value>]) -> Vec<(String, Vec<String>)> {
        let mut out: Vec<(String, Vec<String>)> = Vec::new();
        for row in rows {
            let name = strip_type(row.first().and_then(Value::as_str).unwrap_or_default());
            let at = match out.iter().position(|(n, _)| *n == name) {
                Some(i) => i,
                None => {
                    out.push((name, Vec::new()));
                    out.len() - 1
                }
            };
            let props = &mut out[at].1;
            if let Some(prop) = row.get(1).and_then(Value::as_str) {
                let ty = row
                    .get(2)
                    .and_then(Value::as_array)
                    .and_then(|t| t.first())
                    .and_then(Value::as_str)
                    .map(neo4j_type)
                    .unwrap_or_else(|| "ANY".into());
                props.push(format!("{prop}: {ty}"));
            }
        }
        out
    }
    let section = |groups: Vec<(String, Vec<String>)>| -> Vec<String> {
        groups
            .into_iter()
            .filter(|(_, p)| !p.is_empty())
            .map(|(name, props)| format!("{name} {{{}}}", props.join(", ")))
            .collect()
    };
    let mut lines = vec!["Node properties:".to_string()];
    lines.extend(section(grouped(node_rows)));
    lines.push("Relationship properties:".into());
    lines.extend(section(grouped(rel_rows)));
    lines.push(String::new());
    lines.push("The relationships:".into());
    let mut rels: Vec<String> = edges
        .iter()
        .filter_map(|r| {
            let s = r.first()?.as_str()?;
            let t = r.get(1)?.as_str()?;
            let d = r.get(2)?.as_str()?;
            Some(format!("(:{s})-[:{t}]->(:{d})"))
        })
        .collect();
    rels.sort();
    rels.dedup();
    lines.extend(rels);
    lines.join("\n")
}

fn strip_type(raw: &str) -> String {
    raw.trim_start_matches(':').replace('`', "")
}

fn neo4j_type(raw: &str) -> String {
    match raw {
        "String" => "STRING".into(),
        "Long" | "Integer" => "INTEGER".into(),
        "Double" | "Float" => "FLOAT".into(),
        "Boolean" => "BOOLEAN".into(),
        "DateTime" | "LocalDateTime" => "DATE_TIME".into(),
        "Date" => "DATE".into(),
        other => other.to_uppercase(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataCodeArtifact {
    pub provenance: StepRef,
    pub language_tag: String,
    pub code: String,
    pub bindings: BTreeMap<String, String>,
}

/// The first fenced block of a reply as `(language tag, code)`.
pub fn extract_code_block(raw: &str) -> Option<(String, String)> {
    FENCE.captures_iter(raw).find_map(|c| {
        let code = c[2].trim_end().to_string();
        if code.trim().is_empty() {
            return None;
        }
        let tag = c[1].to_lowercase();
        Some((if tag.is_empty() { "unknown".into() } else { tag }, code))
    })
}

/// Asks the generator for query code; a reply without code is retried once.
pub fn generate_data_code(
    suite: &PromptSuite,
    gateway: &Gateway,
    schema: &GraphSchema,
    provenance: &StepRef,
    step: &WorkflowStep,
    bindings: &BTreeMap<String, String>,
) -> Result<DataCodeArtifact, DataAgentError> {
    let request = suite.data_agent(&schema.text, step, bindings)?;
    for _ in 0..2 {
        let raw = gateway.chat(&request)?;
        if let Some((language_tag, code)) = extract_code_block(&raw) {
            return Ok(DataCodeArtifact {
                provenance: provenance.clone(),
                language_tag,
                code,
                bindings: bindings.clone(),
            });
        }
    }
    Err(DataAgentError::NoCodeBlock)
}

/// One line of `data_agent/manifest.jsonl`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub provenance: StepRef,
    pub task_description: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub artifact: Option<DataCodeArtifact>,
    /// Why no artifact was produced; absent with no artifact means no schema
    /// was configured.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn code_blocks_are_extracted_with_their_tag() {
        let raw = "Here you go:\n```cypher\nMATCH (l:Lot) RETURN l\n```\nDone.";
        assert_eq!(
            extract_code_block(raw),
            Some(("cypher".into(), "MATCH (l:Lot) RETURN l".into()))
        );
        assert_eq!(extract_code_block("```\nRETURN 1\n```").unwrap().0, "unknown");
        assert_eq!(extract_code_block("MATCH (n) RETURN n"), None);
        assert_eq!(extract_code_block("```cypher\n\n```"), None);
    }

    #[test]
    fn schema_files_pass_through_and_empty_ones_fail() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("schema.txt");
        std::fs::write(&path, "Node properties:\nLot {lot_id: STRING}\nWafer {yield: FLOAT}\nDie {x: INTEGER}\n").unwrap();
        let schema = import_schema(&SchemaSource::File { path: path.clone() }).unwrap();
        for label in ["Lot", "Wafer", "Die"] {
            assert!(schema.text.contains(label));
        }
        std::fs::write(&path, " \n").unwrap();
        assert!(matches!(import_schema(&SchemaSource::File { path }), Err(DataAgentError::EmptySchema)));
    }

    #[test]
    fn introspection_rows_format_like_schema_files() {
        let nodes = vec![
            vec![json!(":`Wafer`"), json!("wafer_id"), json!(["String"])],
            vec![json!(":`Lot`"), json!("lot_id"), json!(["String"])],
            vec![json!(":`Wafer`"), json!("yield"), json!(["Double"])],
        ];
        let edges = vec![vec![json!("Lot"), json!("HAS_WAFER"), json!("Wafer")]];
        assert_eq!(
            format_schema(&nodes, &[], &edges),
            "Node properties:\nWafer {wafer_id: STRING, yield: FLOAT}\nLot {lot_id: STRING}\n\
             Relationship properties:\n\nThe relationships:\n(:Lot)-[:HAS_WAFER]->(:Wafer)"
        );
    }
}
