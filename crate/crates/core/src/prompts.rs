//! Prompt templates for every model call the system makes.
//!
//! Templates are plain text with `{{slot}}` placeholders. The built-in set is
//! compiled in from `prompts/`; a directory with the same file names can
//! override any of them. Rendering is a pure function of its inputs.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::LazyLock;

use regex::{Captures, Regex};
use serde::{Deserialize, Serialize};

use crate::gateway::{ChatMessage, ChatRequest, GatewayError, ModelRole};
use crate::model::{
    render_workflow, ApiFunctionSpec, ClassifiedStep, ComplexityLevel, Query, QueryWorkflowRecord, ScopeDescription,
    StepCategory, TermTuple, Thought, WorkflowStep,
};

/// Marker preceding the query a workflow prompt asks about.
pub const TARGET_MARKER: &str = "### Target query";

static SLOT: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\{\{([a-z_]+)\}\}").unwrap());

#[derive(Debug, thiserror::Error)]
pub enum PromptError {
    #[error("{family} template has no value for slot {slot:?}")]
    UnfilledSlot { family: PromptFamily, slot: String },
    #[error("{family} template {file} does not use slot {slot:?}")]
    MissingSlot {
        family: PromptFamily,
        file: PathBuf,
        slot: String,
    },
    #[error("{family} template {file} uses unknown slot {slot:?}")]
    UnknownSlot {
        family: PromptFamily,
        file: PathBuf,
        slot: String,
    },
    #[error("more than one example for level {0}")]
    DuplicateLevelExample(ComplexityLevel),
    #[error("{count} examples exceed the limit of {max}")]
    TooManyExamples { count: usize, max: usize },
    #[error("group of {size} steps exceeds the step budget of {budget}")]
    GroupTooLarge { size: usize, budget: usize },
    #[error("group has no steps")]
    EmptyGroup,
    #[error("schema is empty")]
    EmptySchema,
    #[error("per-level query count must be positive")]
    ZeroPerLevel,
    #[error("cannot read template {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Request(#[from] GatewayError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptFamily {
    QueryGen,
    WorkflowGen,
    WorkflowGenThoughtless,
    TermExtract,
    Classify,
    ApiGen,
    DataAgent,
}

impl PromptFamily {
    pub const ALL: [PromptFamily; 7] = [
        PromptFamily::QueryGen,
        PromptFamily::WorkflowGen,
        PromptFamily::WorkflowGenThoughtless,
        PromptFamily::TermExtract,
        PromptFamily::Classify,
        PromptFamily::ApiGen,
        PromptFamily::DataAgent,
    ];

    pub fn key(self) -> &'static str {
        match self {
            PromptFamily::QueryGen => "query_gen",
            PromptFamily::WorkflowGen => "workflow_gen",
            PromptFamily::WorkflowGenThoughtless => "workflow_gen_thoughtless",
            PromptFamily::TermExtract => "term_extract",
            PromptFamily::Classify => "classify",
            PromptFamily::ApiGen => "api_gen",
            PromptFamily::DataAgent => "data_agent",
        }
    }

    pub fn role(self) -> ModelRole {
        match self {
            PromptFamily::WorkflowGen | PromptFamily::WorkflowGenThoughtless => ModelRole::Reasoner,
            PromptFamily::ApiGen => ModelRole::Coder,
            _ => ModelRole::Generator,
        }
    }

    fn slots(self) -> &'static [&'static str] {
        match self {
            PromptFamily::QueryGen => &["scope_title", "scope", "per_level", "levels", "examples"],
            PromptFamily::WorkflowGen | PromptFamily::WorkflowGenThoughtless => {
                &["scope_title", "scope", "examples", "query"]
            }
            PromptFamily::TermExtract => &["task", "detail"],
            PromptFamily::Classify => &["task", "detail", "terms"],
            PromptFamily::ApiGen => &["category", "group", "existing", "steps"],
            PromptFamily::DataAgent => &["schema", "task", "detail", "bindings"],
        }
    }

    fn builtin(self) -> (&'static str, &'static str) {
        match self {
            PromptFamily::QueryGen => (
                include_str!("../prompts/query_gen.system.txt"),
                include_str!("../prompts/query_gen.user.txt"),
            ),
            PromptFamily::WorkflowGen => (
                include_str!("../prompts/workflow_gen.system.txt"),
                include_str!("../prompts/workflow_gen.user.txt"),
            ),
            PromptFamily::WorkflowGenThoughtless => (
                include_str!("../prompts/workflow_gen_thoughtless.system.txt"),
                include_str!("../prompts/workflow_gen_thoughtless.user.txt"),
            ),
            PromptFamily::TermExtract => (
                include_str!("../prompts/term_extract.system.txt"),
                include_str!("../prompts/term_extract.user.txt"),
            ),
            PromptFamily::Classify => (
                include_str!("../prompts/classify.system.txt"),
                include_str!("../prompts/classify.user.txt"),
            ),
            PromptFamily::ApiGen => (
                include_str!("../prompts/api_gen.system.txt"),
                include_str!("../prompts/api_gen.user.txt"),
            ),
            PromptFamily::DataAgent => (
                include_str!("../prompts/data_agent.system.txt"),
                include_str!("../prompts/data_agent.user.txt"),
            ),
        }
    }
}

impl fmt::Display for PromptFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub family: PromptFamily,
    pub system_text: String,
    pub user_template: String,
}

impl PromptTemplate {
    fn new(family: PromptFamily, system: &str, user: &str) -> Self {
        Self {
            family,
            system_text: system.trim_end().to_string(),
            user_template: user.trim_end().to_string(),
        }
    }

    fn check(&self, file: &Path) -> Result<(), PromptError> {
        let used: BTreeSet<&str> = SLOT
            .captures_iter(&self.user_template)
            .map(|c| c.get(1).unwrap().as_str())
            .collect();
        let expected: BTreeSet<&str> = self.family.slots().iter().copied().collect();
        if let Some(slot) = used.difference(&expected).next() {
            return Err(PromptError::UnknownSlot {
                family: self.family,
                file: file.to_path_buf(),
                slot: slot.to_string(),
            });
        }
        if let Some(slot) = expected.difference(&used).next() {
            return Err(PromptError::MissingSlot {
                family: self.family,
                file: file.to_path_buf(),
                slot: slot.to_string(),
            });
        }
        Ok(())
    }

    /// Fills every slot in one pass, so slot syntax inside values is left alone.
    pub fn render(&self, values: &BTreeMap<&str, String>) -> Result<ChatRequest, PromptError> {
        let mut missing = None;
        let user = SLOT.replace_all(&self.user_template, |c: &Captures| {
            let name = &c[1];
            match values.get(name) {
                Some(v) => v.clone(),
                None => {
                    missing.get_or_insert_with(|| name.to_string());
                    String::new()
                }
            }
        });
        if let Some(slot) = missing {
            return Err(PromptError::UnfilledSlot {
                family: self.family,
                slot,
            });
        }
        Ok(ChatRequest::new(
            self.family.role(),
            vec![ChatMessage::system(self.system_text.clone()), ChatMessage::user(user.into_owned())],
        )?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct PromptLimits {
    /// Most examples a workflow prompt may carry.
    pub max_icl: usize,
    /// Most steps one API generation prompt may carry.
    pub step_budget: usize,
}

impl Default for PromptLimits {
    fn default() -> Self {
        Self {
            max_icl: 4,
            step_budget: 60,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PromptSuite {
    templates: BTreeMap<PromptFamily, PromptTemplate>,
    pub limits: PromptLimits,
}

impl Default for PromptSuite {
    fn default() -> Self {
        Self::builtin()
    }
}

impl PromptSuite {
    pub fn builtin() -> Self {
        let templates = PromptFamily::ALL
            .into_iter()
            .map(|f| {
                let (system, user) = f.builtin();
                (f, PromptTemplate::new(f, system, user))
            })
            .collect();
        Self {
            templates,
            limits: PromptLimits::default(),
        }
    }

    /// The built-in suite with any `<family>.system.txt` / `<family>.user.txt`
    /// found in `dir` taking precedence.
    pub fn from_dir(dir: &Path) -> Result<Self, PromptError> {
        let mut suite = Self::builtin();
        for family in PromptFamily::ALL {
            let read = |part: &str| -> Result<Option<(PathBuf, String)>, PromptError> {
                let path = dir.join(format!("{}.{part}.txt", family.key()));
                if !path.exists() {
                    return Ok(None);
                }
                std::fs::read_to_string(&path)
                    .map(|text| Some((path.clone(), text)))
                    .map_err(|source| PromptError::Io { path, source })
            };
            let system = read("system")?;
            let user = read("user")?;
            if system.is_none() && user.is_none() {
                continue;
            }
            let current = &suite.templates[&family];
            let file = user.as_ref().map(|u| u.0.clone()).unwrap_or_default();
            let template = PromptTemplate::new(
                family,
                system.as_ref().map_or(current.system_text.as_str(), |s| s.1.as_str()),
                user.as_ref().map_or(current.user_template.as_str(), |u| u.1.as_str()),
            );
            template.check(&file)?;
            suite.templates.insert(family, template);
        }
        Ok(suite)
    }

    pub fn template(&self, family: PromptFamily) -> &PromptTemplate {
        &self.templates[&family]
    }

    /// Asks for `per_level` queries at each level. `icl` holds at most one
    /// example query per level.
    pub fn query_gen(
        &self,
        scope: &ScopeDescription,
        icl: &[Query],
        per_level: usize,
    ) -> Result<ChatRequest, PromptError> {
        if per_level == 0 {
            return Err(PromptError::ZeroPerLevel);
        }
        let mut by_level = BTreeMap::new();
        for q in icl {
            if by_level.insert(q.level, q).is_some() {
                return Err(PromptError::DuplicateLevelExample(q.level));
            }
        }
        let levels = ComplexityLevel::ALL
            .iter()
            .map(|l| format!("- {}: {}", l.key(), l.describe()))
            .collect::<Vec<_>>()
            .join("\n");
        let examples = if by_level.is_empty() {
            "No examples are given.".to_string()
        } else {
            by_level
                .values()
                .map(|q| format!("- {}: {}", q.level.key(), q.text))
                .collect::<Vec<_>>()
                .join("\n")
        };
        self.templates[&PromptFamily::QueryGen].render(&BTreeMap::from([
            ("scope_title", scope.title.clone()),
            ("scope", scope.text.trim().to_string()),
            ("per_level", per_level.to_string()),
            ("levels", levels),
            ("examples", examples),
        ]))
    }

    /// The workflow prompt with `icl` rendered in the given order.
    pub fn workflow(
        &self,
        scope: &ScopeDescription,
        icl: &[QueryWorkflowRecord],
        query: &Query,
        with_thought: bool,
    ) -> Result<ChatRequest, PromptError> {
        if icl.len() > self.limits.max_icl {
            return Err(PromptError::TooManyExamples {
                count: icl.len(),
                max: self.limits.max_icl,
            });
        }
        let family = if with_thought {
            PromptFamily::WorkflowGen
        } else {
            PromptFamily::WorkflowGenThoughtless
        };
        let examples = if icl.is_empty() {
            "No examples are available yet.".to_string()
        } else {
            icl.iter()
                .enumerate()
                .map(|(i, r)| {
                    let thought = if with_thought { r.thought.clone() } else { Thought::default() };
                    format!(
                        "### Example {}\nQuery: {}\n\n{}",
                        i + 1,
                        r.query.text,
                        render_workflow(&thought, &r.workflow).trim_end()
                    )
                })
                .collect::<Vec<_>>()
                .join("\n\n")
        };
        self.templates[&family].render(&BTreeMap::from([
            ("scope_title", scope.title.clone()),
            ("scope", scope.text.trim().to_string()),
            ("examples", examples),
            ("query", query.text.clone()),
        ]))
    }

    pub fn term_extraction(&self, step: &WorkflowStep) -> Result<ChatRequest, PromptError> {
        self.templates[&PromptFamily::TermExtract].render(&step_slots(step))
    }

    pub fn classification(&self, step: &WorkflowStep, terms: &TermTuple) -> Result<ChatRequest, PromptError> {
        let mut values = step_slots(step);
        values.insert("terms", terms_json(terms));
        self.templates[&PromptFamily::Classify].render(&values)
    }

    /// Steps are labelled `S1..Sn` in the given order; the response maps
    /// those labels to function names.
    pub fn api_gen(
        &self,
        category: StepCategory,
        group: &str,
        steps: &[ClassifiedStep],
        existing: &[ApiFunctionSpec],
    ) -> Result<ChatRequest, PromptError> {
        if steps.is_empty() {
            return Err(PromptError::EmptyGroup);
        }
        if steps.len() > self.limits.step_budget {
            return Err(PromptError::GroupTooLarge {
                size: steps.len(),
                budget: self.limits.step_budget,
            });
        }
        let existing = if existing.is_empty() {
            "None yet.".to_string()
        } else {
            existing.iter().map(signature).collect::<Vec<_>>().join("\n")
        };
        let steps = steps
            .iter()
            .enumerate()
            .map(|(i, s)| {
                format!(
                    "S{} ({})\n  Task: {}\n  Step: {}\n  Terms: {}",
                    i + 1,
                    s.provenance,
                    s.step.task_description,
                    s.step.step_description,
                    terms_json(&s.terms)
                )
            })
            .collect::<Vec<_>>()
            .join("\n");
        self.templates[&PromptFamily::ApiGen].render(&BTreeMap::from([
            ("category", category.to_string()),
            ("group", group.to_string()),
            ("existing", existing),
            ("steps", steps),
        ]))
    }

    pub fn data_agent(
        &self,
        schema: &str,
        step: &WorkflowStep,
        bindings: &BTreeMap<String, String>,
    ) -> Result<ChatRequest, PromptError> {
        if schema.trim().is_empty() {
            return Err(PromptError::EmptySchema);
        }
        let mut values = step_slots(step);
        values.insert("schema", schema.trim().to_string());
        values.insert(
            "bindings",
            if bindings.is_empty() {
                "None.".to_string()
            } else {
                bindings
                    .iter()
                    .map(|(k, v)| format!("- {k} = {v}"))
                    .collect::<Vec<_>>()
                    .join("\n")
            },
        );
        self.templates[&PromptFamily::DataAgent].render(&values)
    }
}

fn step_slots(step: &WorkflowStep) -> BTreeMap<&'static str, String> {
    BTreeMap::from([
        ("task", step.task_description.clone()),
        ("detail", step.step_description.clone()),
    ])
}

fn terms_json(t: &TermTuple) -> String {
    serde_json::json!([t.overall_action, t.action, t.object, t.attributes]).to_string()
}

fn signature(f: &ApiFunctionSpec) -> String {
    let params = f
        .parameters
        .iter()
        .map(|p| format!("{}: {}", p.name, p.semantic_type))
        .collect::<Vec<_>>()
        .join(", ");
    format!("- {}({params}): {}", f.name, f.purpose)
}

/// The `(system, user)` texts of a rendered request, for golden files and logs.
pub fn transcript(request: &ChatRequest) -> String {
    request
        .messages
        .iter()
        .map(|m| format!("[{}]\n{}\n", m.speaker, m.text))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{QueryOrigin, StepRef, Workflow};

    fn scope() -> ScopeDescription {
        ScopeDescription::new("Yield analysis", "Wafer sort data for lots, wafers and dies.").unwrap()
    }

    fn record(text: &str, thought: &str) -> QueryWorkflowRecord {
        QueryWorkflowRecord::new(
            Query::new(text, text, ComplexityLevel::Simple, QueryOrigin::Generated).unwrap(),
            Thought::new(thought),
            Workflow::from_pairs([("Load data", "Load the wafer sort data.")]).unwrap(),
        )
    }

    #[test]
    fn builtin_templates_use_exactly_their_slots() {
        for f in PromptFamily::ALL {
            PromptSuite::builtin().template(f).check(Path::new(f.key())).unwrap();
        }
    }

    #[test]
    fn families_route_to_roles() {
        let suite = PromptSuite::builtin();
        let q = Query::user("plot yield", ComplexityLevel::Simple).unwrap();
        assert_eq!(suite.workflow(&scope(), &[], &q, true).unwrap().role, ModelRole::Reasoner);
        assert_eq!(suite.query_gen(&scope(), &[], 3).unwrap().role, ModelRole::Generator);
    }

    #[test]
    fn slot_syntax_in_values_is_not_expanded() {
        let suite = PromptSuite::builtin();
        let q = Query::user("show {{scope}} literally", ComplexityLevel::Simple).unwrap();
        let req = suite.workflow(&scope(), &[], &q, true).unwrap();
        assert!(req.last_user_text().ends_with("show {{scope}} literally"));
    }

    #[test]
    fn icl_order_is_preserved_and_thoughts_dropped_when_thoughtless() {
        let suite = PromptSuite::builtin();
        let icl = [record("second best", "th-b"), record("best", "th-a")];
        let q = Query::user("target", ComplexityLevel::Moderate).unwrap();
        let with = suite.workflow(&scope(), &icl, &q, true).unwrap();
        let text = with.last_user_text();
        assert!(text.find("Query: second best").unwrap() < text.find("Query: best").unwrap());
        assert!(text.contains("th-a") && text.contains("THOUGHT:"));

        let without = suite.workflow(&scope(), &icl, &q, false).unwrap();
        assert!(!without.full_text().contains("THOUGHT"));
        assert!(!without.full_text().contains("th-a"));
        assert!(!without.full_text().to_lowercase().contains("thought"));
    }

    #[test]
    fn limits_are_enforced() {
        let suite = PromptSuite::builtin();
        let q = Query::user("t", ComplexityLevel::Simple).unwrap();
        let icl: Vec<_> = (0..5).map(|i| record(&format!("q{i}"), "t")).collect();
        assert!(matches!(
            suite.workflow(&scope(), &icl, &q, true),
            Err(PromptError::TooManyExamples { count: 5, max: 4 })
        ));
        let dup = [
            Query::user("a", ComplexityLevel::Simple).unwrap(),
            Query::user("b", ComplexityLevel::Simple).unwrap(),
        ];
        assert!(matches!(
            suite.query_gen(&scope(), &dup, 20),
            Err(PromptError::DuplicateLevelExample(ComplexityLevel::Simple))
        ));

        let step = WorkflowStep {
            index: 1,
            task_description: "Analyze".into(),
            step_description: "Analyze it.".into(),
        };
        let classified = ClassifiedStep {
            provenance: StepRef {
                query_id: "q".into(),
                step_index: 1,
            },
            step: step.clone(),
            terms: TermTuple::new("analyze", "analyze", "it", ["x"]).unwrap(),
            category: StepCategory::Analysis,
        };
        let group = vec![classified; 61];
        assert!(matches!(
            suite.api_gen(StepCategory::Analysis, "analyze", &group, &[]),
            Err(PromptError::GroupTooLarge { size: 61, budget: 60 })
        ));
        assert!(suite.api_gen(StepCategory::Analysis, "analyze", &group[..60], &[]).is_ok());
        assert!(matches!(
            suite.data_agent("  \n", &step, &BTreeMap::new()),
            Err(PromptError::EmptySchema)
        ));
    }

    #[test]
    fn override_directory_replaces_and_checks_templates() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("classify.system.txt"), "Be brief.\n").unwrap();
        let suite = PromptSuite::from_dir(dir.path()).unwrap();
        assert_eq!(suite.template(PromptFamily::Classify).system_text, "Be brief.");

        std::fs::write(dir.path().join("classify.user.txt"), "{{task}} {{detail}} {{termz}}").unwrap();
        assert!(matches!(
            PromptSuite::from_dir(dir.path()),
            Err(PromptError::UnknownSlot { slot, .. }) if slot == "termz"
        ));
    }
}
