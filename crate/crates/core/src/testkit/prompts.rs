use std::collections::BTreeMap;

use crate::gateway::ChatRequest;
use crate::model::{
    ApiFunctionSpec, ApiParameter, ClassifiedStep, ComplexityLevel, FunctionUse, Query, QueryOrigin,
    QueryWorkflowRecord, ScopeDescription, StepCategory, StepRef, TermTuple, Thought, Workflow, WorkflowStep,
};
use crate::prompts::{PromptFamily, PromptSuite};

pub const GOLDEN_SCOPE: &str = "\
# Wafer yield analysis

The application answers questions about wafer sort test data. Data is organized by lot, wafer, and die. \
Each die carries a soft bin, a hard bin, and parametric measurements. Engineers look at yield trends over \
time, spatial patterns on wafer maps, and correlations between parametric tests and failures.
";

pub const GOLDEN_SCHEMA: &str = "\
Node properties:
Lot {lot_id: STRING, product: STRING, start_date: DATE_TIME}
Wafer {wafer_id: STRING, yield: FLOAT, test_date: DATE_TIME}
Die {x: INTEGER, y: INTEGER, soft_bin: INTEGER, hard_bin: INTEGER}
Relationship properties:

The relationships:
(:Lot)-[:HAS_WAFER]->(:Wafer)
(:Wafer)-[:HAS_DIE]->(:Die)";

pub fn golden_scope() -> ScopeDescription {
    ScopeDescription::from_document(GOLDEN_SCOPE).unwrap()
}

fn q(id: &str, text: &str, level: ComplexityLevel) -> Query {
    Query::new(id, text, level, QueryOrigin::Generated).unwrap()
}

pub fn golden_icl() -> Vec<QueryWorkflowRecord> {
    vec![
        QueryWorkflowRecord::new(
            q("g-weekly", "Show the weekly yield trend for product P7 over the last quarter.", ComplexityLevel::Simple),
            Thought::new("The query asks for a trend, so yield has to be aggregated per week before plotting."),
            Workflow::from_pairs([
                ("Retrieve wafer yields", "Load wafer yields for product P7 tested in the last quarter."),
                ("Define weekly intervals", "Assign each wafer to the calendar week of its test date."),
                ("Plot trend", "Plot the mean yield per week as a line chart."),
            ])
            .unwrap(),
        ),
        QueryWorkflowRecord::new(
            q("g-edge", "Find wafers where edge dies fail more often than center dies.", ComplexityLevel::Moderate),
            Thought::new("Edge and center need a definition; a radius threshold keeps it adjustable."),
            Workflow::from_pairs([
                ("Retrieve die results", "Load die coordinates and bins for all wafers."),
                ("Define edge region", "Mark dies beyond a configurable radius as edge dies."),
                ("Compare failure rates", "Compute failure rates for edge and center dies per wafer."),
                ("Report wafers", "List wafers whose edge failure rate exceeds the center rate."),
            ])
            .unwrap(),
        ),
    ]
}

fn classified(qid: &str, index: usize, task: &str, detail: &str, terms: [&str; 3], attrs: &[&str]) -> ClassifiedStep {
    ClassifiedStep {
        provenance: StepRef {
            query_id: qid.into(),
            step_index: index,
        },
        step: WorkflowStep {
            index,
            task_description: task.into(),
            step_description: detail.into(),
        },
        terms: TermTuple::new(terms[0], terms[1], terms[2], attrs).unwrap(),
        category: StepCategory::Analysis,
    }
}

/// One rendered request per prompt family, built from fixed inputs.
pub fn golden_requests(suite: &PromptSuite) -> Vec<(PromptFamily, ChatRequest)> {
    let scope = golden_scope();
    let icl = golden_icl();
    let target = q(
        "g-target",
        "Which lots had wafers consistently yielding below 95% over multiple weeks?",
        ComplexityLevel::ComplexSingleGoal,
    );
    let seeds = [
        q("s1", "Plot the yield of lot L123.", ComplexityLevel::Simple),
        q("s2", "Compare bin 7 failure rates between two testers.", ComplexityLevel::Moderate),
    ];
    let step = WorkflowStep {
        index: 3,
        task_description: "Detect spatial patterns".into(),
        step_description: "Analyze the wafer map to detect spatial failure patterns such as rings or clusters.".into(),
    };
    let terms = TermTuple::new("detect", "analyze", "wafer map", ["spatial patterns"]).unwrap();
    let group = vec![
        classified(
            "g-edge",
            3,
            "Compare failure rates",
            "Compute failure rates for edge and center dies per wafer.",
            ["compare", "compute", "failure rate"],
            &["edge dies", "center dies"],
        ),
        classified(
            "g-target",
            5,
            "Check consistency",
            "Compute the fraction of weeks in which each lot stays below the threshold.",
            ["check", "compute", "weekly fraction"],
            &["threshold"],
        ),
    ];
    let existing = vec![ApiFunctionSpec {
        name: "compute_yield".into(),
        purpose: "Compute yield per grouping key.".into(),
        parameters: vec![
            ApiParameter {
                name: "data".into(),
                semantic_type: "DieTable".into(),
                description: "Die-level results.".into(),
            },
            ApiParameter {
                name: "group_by".into(),
                semantic_type: "list[str]".into(),
                description: "Columns to group by.".into(),
            },
        ],
        category: StepCategory::Analysis,
        action_group: "compute".into(),
        provenance: vec![FunctionUse {
            step: StepRef {
                query_id: "g-weekly".into(),
                step_index: 2,
            },
            reused: false,
        }],
    }];
    let data_step = WorkflowStep {
        index: 2,
        task_description: "Classify lots by yield".into(),
        step_description: "Label each lot as high-yield or low-yield using the yield threshold.".into(),
    };
    let bindings = BTreeMap::from([("high_yield_threshold".to_string(), "0.9".to_string())]);

    vec![
        (PromptFamily::QueryGen, suite.query_gen(&scope, &seeds, 20).unwrap()),
        (PromptFamily::WorkflowGen, suite.workflow(&scope, &icl, &target, true).unwrap()),
        (PromptFamily::WorkflowGenThoughtless, suite.workflow(&scope, &icl, &target, false).unwrap()),
        (PromptFamily::TermExtract, suite.term_extraction(&step).unwrap()),
        (PromptFamily::Classify, suite.classification(&step, &terms).unwrap()),
        (
            PromptFamily::ApiGen,
            suite.api_gen(StepCategory::Analysis, "compute", &group, &existing).unwrap(),
        ),
        (
            PromptFamily::DataAgent,
            suite.data_agent(GOLDEN_SCHEMA, &data_step, &bindings).unwrap(),
        ),
    ]
}
