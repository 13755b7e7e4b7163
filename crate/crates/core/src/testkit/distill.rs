//! A two-slice corpus whose step mix and function reuse are known exactly,
//! plus responders that answer every distill prompt from the step texts.

use std::collections::{BTreeMap, HashSet};
use std::sync::LazyLock;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use regex::Regex;

use crate::distill::{DistillConfig, SliceSpec, OTHERS};
use crate::gateway::ScriptedBackend;
use crate::model::{
    ComplexityLevel, Query, QueryOrigin, QueryWorkflowRecord, RecordId, StepCategory, Thought, Workflow,
};

pub const ANALYSIS_ACTIONS: [&str; 11] = [
    "analyze", "calculate", "identify", "compare", "detect", "evaluate", "correlate", "aggregate", "apply",
    "determine", "estimate",
];
pub const OUTPUT_ACTIONS: [&str; 5] = ["summarize", "plot", "generate", "report", "visualize"];
pub const DATA_ACTIONS: [&str; 4] = ["retrieve", "load", "filter", "join"];

/// Step counts and new-function totals for one slice.
pub struct SliceShape {
    pub records: usize,
    pub analysis: [usize; 11],
    pub output: [usize; 5],
    pub data: [usize; 4],
    pub analysis_new: usize,
    pub output_new: usize,
}

pub const SLICES: [SliceShape; 2] = [
    SliceShape {
        records: 80,
        analysis: [42, 36, 22, 20, 18, 16, 14, 12, 9, 7, 3],
        output: [40, 35, 25, 20, 15],
        data: [120, 70, 40, 24],
        analysis_new: 141,
        output_new: 37,
    },
    SliceShape {
        records: 40,
        analysis: [24, 20, 13, 11, 10, 9, 8, 7, 5, 3, 2],
        output: [19, 16, 12, 9, 7],
        data: [63, 37, 21, 12],
        analysis_new: 47,
        output_new: 16,
    },
];

/// Slices matching [`SLICES`]: the first 80 records, then the rest.
pub fn fixture_config() -> DistillConfig {
    DistillConfig {
        slices: vec![
            SliceSpec {
                name: "initial".into(),
                through: Some(RecordId(SLICES[0].records as u64)),
            },
            SliceSpec {
                name: "extended".into(),
                through: None,
            },
        ],
        ..DistillConfig::default()
    }
}

fn group_of(category: StepCategory, action: &str) -> String {
    let top8 = &ANALYSIS_ACTIONS[..8];
    if category == StepCategory::Analysis && !top8.contains(&action) {
        OTHERS.to_string()
    } else {
        action.to_string()
    }
}

/// Splits `total` across `sizes` proportionally, largest remainder first
/// (earlier groups win ties).
pub fn apportion(total: usize, sizes: &[usize]) -> Vec<usize> {
    let sum: usize = sizes.iter().sum();
    let mut out: Vec<usize> = sizes.iter().map(|s| total * s / sum).collect();
    let mut order: Vec<usize> = (0..sizes.len()).collect();
    order.sort_by_key(|i| std::cmp::Reverse((total * sizes[*i]) % sum));
    let short = total - out.iter().sum::<usize>();
    for i in order.into_iter().take(short) {
        out[i] += 1;
    }
    out
}

struct Pending {
    category: StepCategory,
    action: &'static str,
}

fn object_for(action: &str) -> &'static str {
    const OBJECTS: [&str; 6] = ["wafer yield", "bin counts", "lot history", "die map", "test limits", "site results"];
    OBJECTS[action.len() % OBJECTS.len()]
}

/// The fixture corpus: 120 records with ids 1..=120 and query ids `fx-001`...
/// Each step names its category and the routine it should map to.
pub fn distill_corpus(seed: u64) -> Vec<QueryWorkflowRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut records = Vec::new();
    // Per group: slice-1 function count and functions handed out so far.
    let mut defined: BTreeMap<String, usize> = BTreeMap::new();
    for shape in &SLICES {
        let mut pending = Vec::new();
        let lists: [(StepCategory, &[&'static str], &[usize]); 3] = [
            (StepCategory::Analysis, &ANALYSIS_ACTIONS, &shape.analysis),
            (StepCategory::Output, &OUTPUT_ACTIONS, &shape.output),
            (StepCategory::Data, &DATA_ACTIONS, &shape.data),
        ];
        for (category, actions, counts) in lists {
            for (action, n) in actions.iter().zip(counts) {
                pending.extend((0..*n).map(|_| Pending { category, action }));
            }
        }
        pending.shuffle(&mut rng);

        let rank = |c: StepCategory| match c {
            StepCategory::Data => 0,
            StepCategory::Analysis => 1,
            StepCategory::Output => 2,
        };
        let total = pending.len();
        let mut per_record: Vec<Vec<Pending>> = Vec::new();
        let mut it = pending.into_iter();
        for r in 0..shape.records {
            let take = (r + 1) * total / shape.records - r * total / shape.records;
            let mut steps: Vec<Pending> = it.by_ref().take(take).collect();
            steps.sort_by_key(|p| rank(p.category));
            per_record.push(steps);
        }

        let quotas = group_quotas(shape);
        let mut seen: BTreeMap<String, usize> = BTreeMap::new();
        for steps in per_record {
            let serial = records.len() + 1;
            let pairs = steps.iter().map(|p| {
                let group = group_of(p.category, p.action);
                let routine = if p.category == StepCategory::Data {
                    format!("{}_query", p.action)
                } else {
                    let k = seen.entry(group.clone()).or_default();
                    let earlier = defined.get(&group).copied().unwrap_or(0);
                    let quota = quotas[&group];
                    let index = if *k < quota { earlier + *k } else { (*k - quota) % (earlier + quota) };
                    *k += 1;
                    format!("{group}_{index:02}")
                };
                let object = object_for(p.action);
                let task = format!("{} the {object} for the selected lots", capitalize(p.action));
                let detail = format!("{} {object} grouped by week. Kind: {}. Routine: {routine}.", p.action, p.category);
                (task, detail)
            });
            let workflow = Workflow::from_pairs(pairs.collect::<Vec<_>>()).expect("fixture workflows are valid");
            let level = ComplexityLevel::ALL[serial % 4];
            let query = Query::new(
                format!("fx-{serial:03}"),
                format!("Fixture query {serial} about lot yield"),
                level,
                QueryOrigin::Generated,
            )
            .expect("fixture queries are valid");
            let mut record = QueryWorkflowRecord::new(query, Thought::new(format!("Fixture thought {serial}")), workflow);
            record.id = RecordId(serial as u64);
            records.push(record);
        }
        for (group, q) in quotas {
            *defined.entry(group).or_default() += q;
        }
    }
    records
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    c.next().map(|f| f.to_uppercase().chain(c).collect()).unwrap_or_default()
}

/// New functions each group receives in one slice.
pub fn group_quotas(shape: &SliceShape) -> BTreeMap<String, usize> {
    let mut out = BTreeMap::new();
    for (category, actions, counts, total) in [
        (StepCategory::Analysis, &ANALYSIS_ACTIONS[..], &shape.analysis[..], shape.analysis_new),
        (StepCategory::Output, &OUTPUT_ACTIONS[..], &shape.output[..], shape.output_new),
    ] {
        let mut sizes: Vec<(String, usize)> = Vec::new();
        for (a, n) in actions.iter().zip(counts) {
            let g = group_of(category, a);
            match sizes.iter_mut().find(|(l, _)| *l == g) {
                Some(e) => e.1 += n,
                None => sizes.push((g, *n)),
            }
        }
        let counts: Vec<usize> = sizes.iter().map(|(_, n)| *n).collect();
        for ((label, _), q) in sizes.into_iter().zip(apportion(total, &counts)) {
            out.insert(label, q);
        }
    }
    out
}

static TASK: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"Task description: (\w+)").unwrap());
static DETAIL: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"Step description: (\w+)").unwrap());
static KIND: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"Kind: (\w+)\.").unwrap());
static STEP: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?m)^S(\d+) \(").unwrap());
static ROUTINE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"Routine: (\w+)\.").unwrap());
static EXISTING: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?m)^- (\w+)\(").unwrap());

fn answer_api(text: &str) -> Option<String> {
    let (head, steps) = text.split_once("## Steps")?;
    let known: HashSet<&str> = EXISTING.captures_iter(head).map(|c| c.get(1).unwrap().as_str()).collect();
    let ids: Vec<_> = STEP.captures_iter(steps).map(|c| c[1].to_string()).collect();
    let routines: Vec<_> = ROUTINE.captures_iter(steps).map(|c| c[1].to_string()).collect();
    if ids.len() != routines.len() {
        return None;
    }
    let mut functions = Vec::new();
    let mut fresh = HashSet::new();
    for r in &routines {
        if !known.contains(r.as_str()) && fresh.insert(r.clone()) {
            functions.push(serde_json::json!({
                "name": r,
                "purpose": format!("Performs the {r} routine."),
                "parameters": [{"name": "rows", "type": "Table", "description": "Input rows."}],
            }));
        }
    }
    let mapping: Vec<_> = ids
        .iter()
        .zip(&routines)
        .map(|(id, r)| serde_json::json!({"step": format!("S{id}"), "function": r}))
        .collect();
    Some(serde_json::json!({"functions": functions, "mapping": mapping}).to_string())
}

/// Answers term extraction, classification, API generation, and data-agent
/// prompts for [`distill_corpus`] steps.
pub fn distill_backend() -> ScriptedBackend {
    let mut backend = ScriptedBackend::new();
    backend.push_responder(
        None,
        Box::new(|req| {
            let text = req.last_user_text();
            if text.contains("## Existing functions") {
                answer_api(text)
            } else if text.contains("## Schema") {
                let task = text.lines().find_map(|l| l.strip_prefix("Task description: "))?;
                Some(format!("```cypher\nMATCH (l:Lot) RETURN l.id // {task}\n```"))
            } else if text.contains("Answer with exactly one of") {
                Some(KIND.captures(text)?[1].to_string())
            } else if text.contains("exactly four elements") {
                let verb = |re: &Regex| re.captures(text).map(|c| c[1].to_lowercase());
                Some(serde_json::json!([verb(&TASK)?, verb(&DETAIL)?, "lot data", ["weekly"]]).to_string())
            } else {
                None
            }
        }),
    );
    backend
}
