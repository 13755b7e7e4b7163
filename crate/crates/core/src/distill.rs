//! Distilling the stored workflows into backend API documentation.
//!
//! Every step gets a term tuple and a category. Analysis and Output steps are
//! grouped by their action verb and each group is sent to the coder model,
//! which maps steps onto existing functions or defines new ones. Data steps
//! go to the data agent instead.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::data_agent::{generate_data_code, GraphSchema, ManifestEntry};
use crate::gateway::{Gateway, GatewayError};
use crate::model::{
    json_payload, ApiFunctionSpec, ApiParameter, ClassifiedStep, FunctionUse, QueryWorkflowRecord, RecordId,
    StepCategory, StepRef, TermTuple, WorkflowStep,
};
use crate::prompts::{PromptError, PromptSuite};

pub const OTHERS: &str = "others";
pub const REPORT_FILE: &str = "distill_report.json";
pub const MANIFEST_FILE: &str = "data_agent/manifest.jsonl";

static STEP_ID: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^[Ss](\d+)$").unwrap());

#[derive(Debug, thiserror::Error)]
pub enum DistillError {
    #[error("{what} reply violates its schema after a retry: {reason}")]
    SchemaViolation { what: &'static str, reason: String },
    #[error("group {group:?} left {} steps unmapped after a retry: {reason}", .missing.len())]
    MappingIncomplete {
        group: String,
        missing: Vec<StepRef>,
        reason: String,
    },
    #[error("nothing to distill: the store is empty")]
    EmptyStore,
    #[error("invalid distill configuration: {0}")]
    InvalidConfig(String),
    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

/// Parses the four-element term list. The attributes slot may be a list or
/// a single string.
pub fn parse_terms(raw: &str) -> Result<TermTuple, String> {
    let items: Vec<Value> = serde_json::from_str(json_payload(raw)).map_err(|e| format!("not a JSON list: {e}"))?;
    if items.len() != 4 {
        return Err(format!("expected 4 elements, got {}", items.len()));
    }
    let text = |i: usize| items[i].as_str().ok_or_else(|| format!("element {} is not a string", i + 1));
    let attributes: Vec<String> = match &items[3] {
        Value::String(s) => vec![s.clone()],
        Value::Array(a) => a
            .iter()
            .map(|v| v.as_str().map(str::to_string).ok_or("attributes must be strings"))
            .collect::<Result<_, _>>()?,
        Value::Null => Vec::new(),
        _ => return Err("attributes must be a list of strings".into()),
    };
    TermTuple::new(text(0)?, text(1)?, text(2)?, attributes).map_err(|e| e.to_string())
}

pub fn parse_category(raw: &str) -> Result<StepCategory, String> {
    let label = raw.trim().trim_matches(|c: char| c == '"' || c == '\'' || c == '*' || c == '.' || c == '`');
    label.parse().map_err(|_| format!("{:?} is not one of Analysis, Output, Data", raw.trim()))
}

fn with_retry<T>(
    what: &'static str,
    gateway: &Gateway,
    request: &crate::gateway::ChatRequest,
    parse: impl Fn(&str) -> Result<T, String>,
) -> Result<T, DistillError> {
    let mut reason = String::new();
    for _ in 0..2 {
        match parse(&gateway.chat(request)?) {
            Ok(v) => return Ok(v),
            Err(e) => reason = e,
        }
    }
    Err(DistillError::SchemaViolation { what, reason })
}

pub fn extract_terms(suite: &PromptSuite, gateway: &Gateway, step: &WorkflowStep) -> Result<TermTuple, DistillError> {
    with_retry("term extraction", gateway, &suite.term_extraction(step)?, parse_terms)
}

pub fn classify_step(
    suite: &PromptSuite,
    gateway: &Gateway,
    step: &WorkflowStep,
    terms: &TermTuple,
) -> Result<StepCategory, DistillError> {
    with_retry("classification", gateway, &suite.classification(step, terms)?, parse_category)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionGroup {
    pub label: String,
    pub steps: Vec<ClassifiedStep>,
}

/// Groups steps by action. The `keep_top` largest groups survive (ties go to
/// the lexicographically smaller action); the rest merge into `others`.
/// Steps keep their input order inside every group.
pub fn group_by_action(steps: &[ClassifiedStep], keep_top: usize) -> Vec<ActionGroup> {
    let mut sizes: HashMap<&str, usize> = HashMap::new();
    for s in steps {
        *sizes.entry(s.terms.action.as_str()).or_default() += 1;
    }
    let mut ranked: Vec<(&str, usize)> = sizes.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    let kept: Vec<&str> = ranked.iter().take(keep_top).map(|(a, _)| *a).collect();

    let mut groups: Vec<ActionGroup> = kept
        .iter()
        .map(|a| ActionGroup {
            label: a.to_string(),
            steps: Vec::new(),
        })
        .collect();
    let mut others = Vec::new();
    for s in steps {
        match kept.iter().position(|a| *a == s.terms.action) {
            Some(i) => groups[i].steps.push(s.clone()),
            None => others.push(s.clone()),
        }
    }
    if !others.is_empty() {
        groups.push(ActionGroup {
            label: OTHERS.into(),
            steps: others,
        });
    }
    groups
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepMapping {
    pub step: StepRef,
    pub category: StepCategory,
    pub group: String,
    pub function: String,
    /// True when the function existed before this step was mapped.
    pub reused: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupApi {
    /// Functions defined for this group, with their uses inside it.
    pub new_functions: Vec<ApiFunctionSpec>,
    pub mapping: Vec<StepMapping>,
}

#[derive(Deserialize)]
struct Reply {
    #[serde(default)]
    functions: Vec<ReplyFunction>,
    #[serde(default)]
    mapping: Vec<ReplyMapping>,
}

#[derive(Deserialize)]
struct ReplyFunction {
    name: String,
    #[serde(default)]
    purpose: String,
    #[serde(default)]
    parameters: Vec<ApiParameter>,
}

#[derive(Deserialize)]
struct ReplyMapping {
    step: String,
    function: String,
}

struct Resolved {
    defined: Vec<ReplyFunction>,
    targets: Vec<String>,
}

/// Checks referential integrity of a reply for `n` steps given the names
/// already known. Definitions that collide with known names count as reuse;
/// definitions nothing maps to are dropped.
fn resolve(raw: &str, n: usize, known: &HashSet<String>) -> Result<Resolved, (String, Vec<usize>)> {
    let all: Vec<usize> = (0..n).collect();
    let reply: Reply = serde_json::from_str(json_payload(raw)).map_err(|e| (format!("bad JSON: {e}"), all.clone()))?;
    let mut defined: Vec<ReplyFunction> = Vec::new();
    for f in reply.functions {
        let name = f.name.trim().to_string();
        if name.is_empty() || known.contains(&name) || defined.iter().any(|d| d.name == name) {
            continue;
        }
        defined.push(ReplyFunction { name, ..f });
    }
    let mut targets: Vec<Option<String>> = vec![None; n];
    let mut problems = Vec::new();
    for m in reply.mapping {
        let Some(i) = STEP_ID
            .captures(m.step.trim())
            .and_then(|c| c[1].parse::<usize>().ok())
            .filter(|i| (1..=n).contains(i))
            .map(|i| i - 1)
        else {
            problems.push(format!("unknown step id {:?}", m.step));
            continue;
        };
        let function = m.function.trim().to_string();
        if !known.contains(&function) && !defined.iter().any(|d| d.name == function) {
            problems.push(format!("S{} maps to undefined function {function:?}", i + 1));
            continue;
        }
        match &targets[i] {
            Some(prev) if *prev != function => problems.push(format!("S{} is mapped twice", i + 1)),
            _ => targets[i] = Some(function),
        }
    }
    let missing: Vec<usize> = (0..n).filter(|i| targets[*i].is_none()).collect();
    if !missing.is_empty() || !problems.is_empty() {
        if problems.is_empty() {
            problems.push(format!("{} steps have no mapping", missing.len()));
        }
        return Err((problems.join("; "), missing));
    }
    let targets: Vec<String> = targets.into_iter().map(Option::unwrap).collect();
    defined.retain(|d| targets.contains(&d.name));
    Ok(Resolved { defined, targets })
}

/// Maps every step of `group` onto a function, splitting the group into
/// chunks of at most `chunk_size` steps. Later chunks see the functions
/// earlier chunks defined.
pub fn generate_group_api(
    suite: &PromptSuite,
    gateway: &Gateway,
    category: StepCategory,
    group: &ActionGroup,
    existing: &[ApiFunctionSpec],
    chunk_size: usize,
) -> Result<GroupApi, DistillError> {
    if chunk_size == 0 {
        return Err(DistillError::InvalidConfig("step budget must be positive".into()));
    }
    let mut out = GroupApi {
        new_functions: Vec::new(),
        mapping: Vec::new(),
    };
    for chunk in group.steps.chunks(chunk_size) {
        let context: Vec<ApiFunctionSpec> = existing.iter().chain(&out.new_functions).cloned().collect();
        let known: HashSet<String> = context.iter().map(|f| f.name.clone()).collect();
        let request = suite.api_gen(category, &group.label, chunk, &context)?;
        let mut failure = (String::new(), Vec::new());
        let mut resolved = None;
        for _ in 0..2 {
            match resolve(&gateway.chat(&request)?, chunk.len(), &known) {
                Ok(r) => {
                    resolved = Some(r);
                    break;
                }
                Err(e) => failure = e,
            }
        }
        let Some(resolved) = resolved else {
            return Err(DistillError::MappingIncomplete {
                group: group.label.clone(),
                missing: failure.1.iter().map(|i| chunk[*i].provenance.clone()).collect(),
                reason: failure.0,
            });
        };
        for f in resolved.defined {
            out.new_functions.push(ApiFunctionSpec {
                name: f.name,
                purpose: f.purpose,
                parameters: f.parameters,
                category,
                action_group: group.label.clone(),
                provenance: Vec::new(),
            });
        }
        for (step, function) in chunk.iter().zip(resolved.targets) {
            let reused = known.contains(&function);
            if let Some(f) = out.new_functions.iter_mut().find(|f| f.name == function) {
                f.provenance.push(FunctionUse {
                    step: step.provenance.clone(),
                    reused,
                });
            }
            out.mapping.push(StepMapping {
                step: step.provenance.clone(),
                category,
                group: group.label.clone(),
                function,
                reused,
            });
        }
    }
    Ok(out)
}

/// A corpus slice: records with ids up to and including `through`, after the
/// previous slice. The last slice must be open-ended.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SliceSpec {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub through: Option<RecordId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct DistillConfig {
    pub slices: Vec<SliceSpec>,
    pub keep_top: usize,
    pub step_budget: usize,
    /// Values passed to the data agent for every Data step.
    pub bindings: BTreeMap<String, String>,
}

impl Default for DistillConfig {
    fn default() -> Self {
        Self {
            slices: vec![SliceSpec {
                name: "all".into(),
                through: None,
            }],
            keep_top: 8,
            step_budget: 60,
            bindings: BTreeMap::new(),
        }
    }
}

impl DistillConfig {
    fn validate(&self) -> Result<(), DistillError> {
        let bad = |m: &str| Err(DistillError::InvalidConfig(m.into()));
        if self.keep_top == 0 {
            return bad("keep_top must be positive");
        }
        if self.step_budget == 0 {
            return bad("step_budget must be positive");
        }
        let Some(last) = self.slices.last() else {
            return bad("at least one slice is required");
        };
        if last.through.is_some() {
            return bad("the last slice must not have an upper bound");
        }
        let bounds: Vec<RecordId> = self.slices.iter().filter_map(|s| s.through).collect();
        if bounds.len() != self.slices.len() - 1 || bounds.windows(2).any(|w| w[0] >= w[1]) {
            return bad("slice bounds must be strictly increasing, and only the last slice is open-ended");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureStage {
    Terms,
    Classify,
    ApiGen,
    DataAgent,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DistillFailure {
    pub slice: String,
    pub stage: FailureStage,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub step: Option<StepRef>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub group: Option<String>,
    pub cause: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupStats {
    pub category: StepCategory,
    pub label: String,
    pub steps: usize,
    pub new_functions: usize,
    /// Distinct pre-existing functions the group's steps mapped onto.
    pub reused_functions: usize,
    pub reused_steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceReport {
    pub name: String,
    pub records: usize,
    pub steps: usize,
    pub category_counts: BTreeMap<StepCategory, usize>,
    pub new_functions: BTreeMap<StepCategory, usize>,
    /// New functions per step, as a percentage, for Analysis and Output.
    pub new_function_ratio: BTreeMap<StepCategory, f64>,
    pub groups: Vec<GroupStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistillReport {
    pub slices: Vec<SliceReport>,
    pub functions: Vec<ApiFunctionSpec>,
    pub mappings: Vec<StepMapping>,
    pub data_manifest: Vec<ManifestEntry>,
    pub failures: Vec<DistillFailure>,
}

/// New-function counts of one action group across slices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistogramBar {
    pub label: String,
    pub new_per_slice: Vec<usize>,
    pub reused_per_slice: Vec<usize>,
}

impl DistillReport {
    pub fn functions_in(&self, category: StepCategory) -> impl Iterator<Item = &ApiFunctionSpec> {
        self.functions.iter().filter(move |f| f.category == category)
    }

    /// Per-group bars in first-seen order, one value per slice.
    pub fn histogram(&self, category: StepCategory) -> Vec<HistogramBar> {
        let mut bars: Vec<HistogramBar> = Vec::new();
        for (i, slice) in self.slices.iter().enumerate() {
            for g in slice.groups.iter().filter(|g| g.category == category) {
                let at = match bars.iter().position(|b| b.label == g.label) {
                    Some(at) => at,
                    None => {
                        bars.push(HistogramBar {
                            label: g.label.clone(),
                            new_per_slice: vec![0; self.slices.len()],
                            reused_per_slice: vec![0; self.slices.len()],
                        });
                        bars.len() - 1
                    }
                };
                bars[at].new_per_slice[i] += g.new_functions;
                bars[at].reused_per_slice[i] += g.reused_functions;
            }
        }
        bars
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports serialize")
    }
}

/// Runs the whole pipeline over `records`, slice by slice. `existing` seeds
/// the function context (incremental mode) and is never altered except for
/// gaining provenance entries. Without a schema, Data steps are listed in
/// the manifest without code.
pub fn distill(
    records: &[QueryWorkflowRecord],
    suite: &PromptSuite,
    gateway: &Gateway,
    config: &DistillConfig,
    existing: &[ApiFunctionSpec],
    schema: Option<&GraphSchema>,
) -> Result<DistillReport, DistillError> {
    config.validate()?;
    if records.is_empty() {
        return Err(DistillError::EmptyStore);
    }
    let chunk_size = config.step_budget.min(suite.limits.step_budget);
    let mut report = DistillReport {
        slices: Vec::new(),
        functions: existing.to_vec(),
        mappings: Vec::new(),
        data_manifest: Vec::new(),
        failures: Vec::new(),
    };

    let mut lower = RecordId(0);
    for spec in &config.slices {
        let slice: Vec<&QueryWorkflowRecord> = records
            .iter()
            .filter(|r| r.id > lower && spec.through.is_none_or(|t| r.id <= t))
            .collect();
        lower = spec.through.unwrap_or(lower);

        let mut fail = |stage, step: Option<StepRef>, group: Option<String>, cause: String| {
            tracing::warn!(slice = %spec.name, ?stage, ?step, %cause, "distill failure");
            report.failures.push(DistillFailure {
                slice: spec.name.clone(),
                stage,
                step,
                group,
                cause,
            });
        };

        let mut classified: Vec<ClassifiedStep> = Vec::new();
        let mut steps = 0;
        for record in &slice {
            for step in &record.workflow.steps {
                steps += 1;
                let at = StepRef {
                    query_id: record.query.id.clone(),
                    step_index: step.index,
                };
                let terms = match extract_terms(suite, gateway, step) {
                    Ok(t) => t,
                    Err(e) => {
                        fail(FailureStage::Terms, Some(at), None, e.to_string());
                        continue;
                    }
                };
                match classify_step(suite, gateway, step, &terms) {
                    Ok(category) => classified.push(ClassifiedStep {
                        provenance: at,
                        step: step.clone(),
                        terms,
                        category,
                    }),
                    Err(e) => fail(FailureStage::Classify, Some(at), None, e.to_string()),
                }
            }
        }

        let mut slice_report = SliceReport {
            name: spec.name.clone(),
            records: slice.len(),
            steps,
            category_counts: StepCategory::ALL
                .iter()
                .map(|c| (*c, classified.iter().filter(|s| s.category == *c).count()))
                .collect(),
            new_functions: BTreeMap::new(),
            new_function_ratio: BTreeMap::new(),
            groups: Vec::new(),
        };

        for category in [StepCategory::Analysis, StepCategory::Output] {
            let of_category: Vec<ClassifiedStep> =
                classified.iter().filter(|s| s.category == category).cloned().collect();
            let mut added = 0;
            for group in group_by_action(&of_category, config.keep_top) {
                let context: Vec<ApiFunctionSpec> =
                    report.functions.iter().filter(|f| f.category == category).cloned().collect();
                let api = match generate_group_api(suite, gateway, category, &group, &context, chunk_size) {
                    Ok(api) => api,
                    Err(e) => {
                        fail(FailureStage::ApiGen, None, Some(group.label.clone()), e.to_string());
                        continue;
                    }
                };
                let new_names: HashSet<&str> = api.new_functions.iter().map(|f| f.name.as_str()).collect();
                let mut reused_functions = HashSet::new();
                for m in api.mapping.iter().filter(|m| !new_names.contains(m.function.as_str())) {
                    reused_functions.insert(m.function.clone());
                    if let Some(f) = report.functions.iter_mut().find(|f| f.name == m.function) {
                        f.provenance.push(FunctionUse {
                            step: m.step.clone(),
                            reused: true,
                        });
                    }
                }
                slice_report.groups.push(GroupStats {
                    category,
                    label: group.label.clone(),
                    steps: group.steps.len(),
                    new_functions: api.new_functions.len(),
                    reused_functions: reused_functions.len(),
                    reused_steps: api.mapping.iter().filter(|m| m.reused).count(),
                });
                added += api.new_functions.len();
                report.functions.extend(api.new_functions);
                report.mappings.extend(api.mapping);
            }
            slice_report.new_functions.insert(category, added);
            let total = slice_report.category_counts[&category];
            if total > 0 {
                slice_report
                    .new_function_ratio
                    .insert(category, 100.0 * added as f64 / total as f64);
            }
        }

        for step in classified.iter().filter(|s| s.category == StepCategory::Data) {
            let mut entry = ManifestEntry {
                provenance: step.provenance.clone(),
                task_description: step.step.task_description.clone(),
                artifact: None,
                error: None,
            };
            if let Some(schema) = schema {
                match generate_data_code(suite, gateway, schema, &step.provenance, &step.step, &config.bindings) {
                    Ok(a) => entry.artifact = Some(a),
                    Err(e) => {
                        entry.error = Some(e.to_string());
                        fail(FailureStage::DataAgent, Some(step.provenance.clone()), None, e.to_string());
                    }
                }
            }
            report.data_manifest.push(entry);
        }
        report.slices.push(slice_report);
    }
    Ok(report)
}

/// Markdown documentation for one category's functions.
pub fn render_spec(report: &DistillReport, category: StepCategory) -> String {
    let functions: Vec<&ApiFunctionSpec> = report.functions_in(category).collect();
    let mut out = format!("# {category} API\n\n{} functions.\n", functions.len());
    for f in functions {
        let _ = write!(out, "\n## {}\n\n{}\n\nGroup: {}\n", f.name, f.purpose.trim(), f.action_group);
        if !f.parameters.is_empty() {
            out.push_str("\n| Parameter | Type | Description |\n|---|---|---|\n");
            for p in &f.parameters {
                let _ = writeln!(out, "| {} | {} | {} |", p.name, p.semantic_type, p.description.replace('|', "\\|"));
            }
        }
        if !f.provenance.is_empty() {
            let uses: Vec<String> = f
                .provenance
                .iter()
                .map(|u| if u.reused { format!("{} (reused)", u.step) } else { u.step.to_string() })
                .collect();
            let _ = writeln!(out, "\nUsed by: {}", uses.join(", "));
        }
    }
    out
}

/// Writes `api_spec/*.md`, the JSON report, and the data-agent manifest
/// under `dir`.
pub fn write_outputs(report: &DistillReport, dir: &Path) -> Result<(), DistillError> {
    let write = |rel: &str, body: String| -> Result<(), DistillError> {
        let path = dir.join(rel);
        let io = |source| DistillError::Io {
            path: path.clone(),
            source,
        };
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(io)?;
        }
        fs::write(&path, body).map_err(io)
    };
    write_spec(report, dir)?;
    write(REPORT_FILE, report.to_json() + "\n")?;
    let manifest: String = report
        .data_manifest
        .iter()
        .map(|e| serde_json::to_string(e).expect("entries serialize") + "\n")
        .collect();
    write(MANIFEST_FILE, manifest)
}

/// Writes only the markdown API documents.
pub fn write_spec(report: &DistillReport, dir: &Path) -> Result<(), DistillError> {
    for (category, file) in [(StepCategory::Analysis, "analysis.md"), (StepCategory::Output, "output.md")] {
        let path = dir.join("api_spec").join(file);
        let io = |source| DistillError::Io {
            path: path.clone(),
            source,
        };
        fs::create_dir_all(path.parent().unwrap()).map_err(io)?;
        fs::write(&path, render_spec(report, category)).map_err(io)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn step(action: &str, n: usize) -> ClassifiedStep {
        ClassifiedStep {
            provenance: StepRef {
                query_id: format!("q{n}"),
                step_index: 1,
            },
            step: WorkflowStep {
                index: 1,
                task_description: format!("{action} thing"),
                step_description: String::new(),
            },
            terms: TermTuple::new(action, action, "thing", Vec::<String>::new()).unwrap(),
            category: StepCategory::Analysis,
        }
    }

    #[test]
    fn terms_parse_and_normalize() {
        let t = parse_terms(r#"["Analyze","detect","wafer map","spatial patterns"]"#).unwrap();
        assert_eq!(t, TermTuple::new("analyze", "detect", "wafer map", ["spatial patterns"]).unwrap());
        let t = parse_terms(r#"["plot", "plot", "trend", ["weekly", "mean"]]"#).unwrap();
        assert_eq!(t.attributes, ["weekly", "mean"]);
        assert!(parse_terms(r#"["analyze data","detect","x","y"]"#).is_err());
        assert!(parse_terms(r#"["a","b","c"]"#).is_err());
    }

    #[test]
    fn categories_are_strict() {
        assert_eq!(parse_category(" Data.\n"), Ok(StepCategory::Data));
        assert_eq!(parse_category("**Output**"), Ok(StepCategory::Output));
        assert!(parse_category("Visualization").is_err());
        assert!(parse_category("Analysis or Output").is_err());
    }

    #[test]
    fn few_actions_need_no_others_group() {
        let steps: Vec<_> = ["a", "b", "c", "d", "e", "f"].iter().enumerate().map(|(i, a)| step(a, i)).collect();
        let groups = group_by_action(&steps, 8);
        assert_eq!(groups.len(), 6);
        assert!(groups.iter().all(|g| g.label != OTHERS));
    }

    #[test]
    fn equal_sizes_keep_the_lexicographically_smallest() {
        let actions = ["j", "c", "a", "h", "b", "i", "d", "g", "e", "f"];
        let steps: Vec<_> = actions.iter().enumerate().map(|(i, a)| step(a, i)).collect();
        let groups = group_by_action(&steps, 8);
        let labels: Vec<_> = groups.iter().map(|g| g.label.as_str()).collect();
        assert_eq!(labels, ["a", "b", "c", "d", "e", "f", "g", "h", OTHERS]);
        let others: Vec<_> = groups[8].steps.iter().map(|s| s.terms.action.as_str()).collect();
        assert_eq!(others, ["j", "i"]);
    }

    #[test]
    fn larger_groups_rank_first() {
        let mut steps = vec![step("plot", 0)];
        steps.extend((1..4).map(|i| step("analyze", i)));
        steps.extend((4..6).map(|i| step("calculate", i)));
        let labels: Vec<_> = group_by_action(&steps, 8).into_iter().map(|g| g.label).collect();
        assert_eq!(labels, ["analyze", "calculate", "plot"]);
    }

    #[test]
    fn replies_are_checked_for_integrity() {
        let known: HashSet<String> = ["old".to_string()].into();
        let ok = r#"{"functions":[{"name":"new_fn","purpose":"p","parameters":[]},{"name":"old"},{"name":"unused"}],
                     "mapping":[{"step":"S1","function":"new_fn"},{"step":"S2","function":"old"}]}"#;
        let r = resolve(ok, 2, &known).ok().unwrap();
        assert_eq!(r.defined.iter().map(|d| d.name.as_str()).collect::<Vec<_>>(), ["new_fn"]);
        assert_eq!(r.targets, ["new_fn", "old"]);

        let partial = r#"{"functions":[],"mapping":[{"step":"S1","function":"old"}]}"#;
        assert_eq!(resolve(partial, 2, &known).err().unwrap().1, vec![1]);
        let dangling = r#"{"mapping":[{"step":"S1","function":"ghost"}]}"#;
        assert!(resolve(dangling, 1, &known).is_err());
        let out_of_range = r#"{"mapping":[{"step":"S1","function":"old"},{"step":"S9","function":"old"}]}"#;
        assert!(resolve(out_of_range, 1, &known).is_err());
    }
}
