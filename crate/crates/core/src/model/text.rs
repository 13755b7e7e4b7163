//! The labeled-sections text format the reasoner is asked to answer in:
//!
//! ```text
//! THOUGHT:
//! <free prose>
//!
//! STEP 1: <task description>
//! <step description>
//! ```

use std::sync::OnceLock;

use regex::Regex;

use super::{ModelError, Thought, Workflow, WorkflowStep};

fn thought_header() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)^\s*[#*\s]*thought\s*:\s*\**\s*(.*)$").unwrap())
}

fn step_header() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"(?i)^\s*[#*\s]*step\s+(\d+)\s*[:.)\-]\s*\**\s*(.*?)\s*\**\s*$").unwrap()
    })
}

fn fenced_body(raw: &str) -> &str {
    // Prefer the first fenced block that holds step headers; otherwise parse everything.
    let mut rest = raw;
    while let Some(open) = rest.find("```") {
        let after = &rest[open + 3..];
        let Some(nl) = after.find('\n') else { break };
        let body = &after[nl + 1..];
        let Some(close) = body.find("```") else { break };
        let inner = &body[..close];
        if inner.lines().any(|l| step_header().is_match(l)) {
            return inner;
        }
        rest = &body[close + 3..];
    }
    raw
}

enum Section {
    Preamble,
    Thought,
    Step,
}

/// Parses a reasoner response into its thought and workflow. A response
/// without a THOUGHT section yields an empty thought.
pub fn parse_workflow(raw: &str) -> Result<(Thought, Workflow), ModelError> {
    let body = fenced_body(raw);
    let mut section = Section::Preamble;
    let mut thought_lines: Option<Vec<&str>> = None;
    let mut steps: Vec<(usize, String, Vec<&str>)> = Vec::new();

    for line in body.lines() {
        if let Some(cap) = step_header().captures(line) {
            let index: usize = cap[1]
                .parse()
                .map_err(|_| ModelError::MalformedOutput(format!("bad step number in {line:?}")))?;
            steps.push((index, cap[2].trim().to_string(), Vec::new()));
            section = Section::Step;
        } else if let Some(cap) = thought_header().captures(line) {
            if thought_lines.is_some() {
                return Err(ModelError::MalformedOutput("duplicate THOUGHT section".into()));
            }
            if !steps.is_empty() {
                return Err(ModelError::MalformedOutput("THOUGHT section after steps".into()));
            }
            let first = cap.get(1).map_or("", |m| m.as_str());
            thought_lines = Some(vec![first]);
            section = Section::Thought;
        } else {
            match section {
                Section::Preamble => {}
                Section::Thought => thought_lines.get_or_insert_with(Vec::new).push(line),
                Section::Step => {
                    if let Some(last) = steps.last_mut() {
                        last.2.push(line);
                    }
                }
            }
        }
    }

    if steps.is_empty() {
        return Err(ModelError::MalformedOutput("no STEP sections found".into()));
    }
    let steps = steps
        .into_iter()
        .map(|(index, task, detail)| WorkflowStep {
            index,
            task_description: task,
            step_description: detail.join("\n").trim().to_string(),
        })
        .collect();
    let workflow = Workflow { steps };
    workflow.check().map_err(ModelError::MalformedOutput)?;
    let thought = thought_lines
        .map(|l| l.join("\n").trim().to_string())
        .unwrap_or_default();
    Ok((Thought(thought), workflow))
}

/// Renders a thought and workflow in the format [`parse_workflow`] reads.
/// An empty thought omits the THOUGHT section.
pub fn render_workflow(thought: &Thought, workflow: &Workflow) -> String {
    let mut out = String::new();
    if !thought.is_empty() {
        out.push_str("THOUGHT:\n");
        out.push_str(thought.as_str().trim());
        out.push_str("\n\n");
    }
    for (i, step) in workflow.steps.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        out.push_str(&format!("STEP {}: {}\n", step.index, step.task_description));
        if !step.step_description.is_empty() {
            out.push_str(&step.step_description);
            out.push('\n');
        }
    }
    out
}

/// The JSON value inside a model reply: the first fenced block if there is
/// one, otherwise the span from the first bracket to the last.
pub fn json_payload(raw: &str) -> &str {
    let t = raw.trim();
    if let Some(start) = t.find("```") {
        let after = &t[start + 3..];
        let body = &after[after.find('\n').map_or(after.len(), |i| i + 1)..];
        if let Some(end) = body.find("```") {
            return body[..end].trim();
        }
    }
    match (t.find(['{', '[']), t.rfind(['}', ']'])) {
        (Some(a), Some(b)) if b > a => &t[a..=b],
        _ => t,
    }
}
