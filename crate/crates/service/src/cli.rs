//! Operator commands. Usage errors exit with 2 (clap's default), runtime
//! failures with 1.

use std::io::{BufRead, Write};
use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};
use flowsmith_core::agent::{decide, Agent, Decision, RunState, RunStatus};
use flowsmith_core::bootstrap::{bootstrap, generate_queries, read_review, write_review};
use flowsmith_core::data_agent::import_schema;
use flowsmith_core::distill::{distill, write_outputs, write_spec, DistillReport};
use flowsmith_core::gateway::Gateway;
use flowsmith_core::model::{render_workflow, ComplexityLevel, Query, StepCategory};
use flowsmith_core::prompts::PromptSuite;
use flowsmith_core::store::StoreHandle;
use serde::Deserialize;

use crate::config::{ServiceConfig, DEFAULT_CONFIG};
use crate::http::{collect_stats, latest_report, serve};
use crate::{io_error, ServiceError};

#[derive(Debug, Parser)]
#[command(name = "flowsmith", version, about = "Turns analytics queries into workflows and distills them into an API")]
pub struct Cli {
    /// Configuration file.
    #[arg(long, short, global = true, env = "FLOWSMITH_CONFIG", default_value = DEFAULT_CONFIG)]
    pub config: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DecisionArg {
    Accept,
    Reject,
    Skip,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate candidate queries at every level into queries.jsonl for review.
    SeedQueries {
        #[arg(long, default_value_t = 20)]
        per_level: usize,
        /// Output file; defaults to <data_dir>/queries.jsonl.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Reviewed queries to show the generator as examples.
        #[arg(long)]
        examples: Option<PathBuf>,
    },
    /// Build the initial store from the accepted entries of queries.jsonl.
    Bootstrap {
        #[arg(long)]
        queries: Option<PathBuf>,
    },
    /// Run the agent on one query and decide on the result.
    Ask {
        query: String,
        #[arg(long)]
        level: Option<ComplexityLevel>,
        /// Decide without prompting.
        #[arg(long, value_enum)]
        decision: Option<DecisionArg>,
    },
    /// Run the agent over a file of queries, one per line (plain text or
    /// {"text": .., "level": ..}).
    Batch {
        file: PathBuf,
        #[arg(long)]
        level: Option<ComplexityLevel>,
        /// Store every workflow that completes.
        #[arg(long)]
        accept: bool,
    },
    /// Distill the store into API documentation.
    Distill {
        /// Start from the functions of the previous report.
        #[arg(long)]
        incremental: bool,
    },
    /// Print store and report statistics.
    Stats,
    /// Rewrite api_spec/*.md from the latest report.
    ExportSpec,
    /// Serve the HTTP API.
    Serve {
        #[arg(long)]
        listen: Option<String>,
    },
}

struct Session {
    config: ServiceConfig,
    gateway: Gateway,
    suite: PromptSuite,
}

impl Session {
    fn open(config: ServiceConfig) -> Result<Self, ServiceError> {
        let gateway = config.gateway()?;
        let suite = config.prompts()?;
        Ok(Self { config, gateway, suite })
    }

    fn store(&self) -> Result<StoreHandle, ServiceError> {
        let mut store = self.config.open_store()?;
        store.ensure_embeddings(&self.gateway)?;
        Ok(store)
    }
}

pub fn run(cli: Cli, input: &mut dyn BufRead, out: &mut dyn Write) -> Result<(), ServiceError> {
    let config = ServiceConfig::load(&cli.config)?;
    let w = |e: std::io::Error| ServiceError::Io {
        path: "<stdout>".into(),
        source: e,
    };
    match cli.command {
        Command::SeedQueries { per_level, out: path, examples } => {
            let s = Session::open(config)?;
            let icl = examples.as_deref().map(read_review).transpose()?.unwrap_or_default();
            let queries = generate_queries(&s.suite, &s.gateway, &s.config.scope()?, &icl, per_level)?;
            let path = path.unwrap_or_else(|| s.config.queries_path());
            write_review(&path, &queries)?;
            writeln!(out, "wrote {} queries to {}", queries.len(), path.display()).map_err(w)?;
        }
        Command::Bootstrap { queries } => {
            let s = Session::open(config)?;
            let path = queries.unwrap_or_else(|| s.config.queries_path());
            let queries = read_review(&path)?;
            let mut store = s.config.open_store()?;
            let report = bootstrap(&s.config.bootstrap, &s.suite, &s.gateway, &s.config.scope()?, &queries, &mut store)?;
            writeln!(
                out,
                "stored {} records ({} seed failures); store size {}",
                report.seeded.stored.len(),
                report.seeded.failures.len(),
                store.len()
            )
            .map_err(w)?;
            for f in &report.seeded.failures {
                writeln!(out, "  failed {}: {}", f.query_id, f.cause).map_err(w)?;
            }
        }
        Command::Ask { query, level, decision } => {
            let s = Session::open(config)?;
            let mut store = s.store()?;
            let scope = s.config.scope()?;
            let agent = Agent::new(&s.gateway, &s.suite, &scope, s.config.agent);
            let query = Query::user(query, level.unwrap_or(ComplexityLevel::ComplexSingleGoal))
                .map_err(|e| ServiceError::Input(e.to_string()))?;
            let mut run = agent.run(query, &store);
            print_run(&run, out).map_err(w)?;
            if run.status == RunStatus::Failed {
                return Err(ServiceError::Input(format!(
                    "run failed: {}",
                    run.failure.as_deref().unwrap_or("unknown cause")
                )));
            }
            let choice = match decision {
                Some(d) => d,
                None => prompt_decision(input, out).map_err(w)?,
            };
            match choice {
                DecisionArg::Accept => {
                    let id = decide(&mut run, Decision::Accept, &mut store)?;
                    store.ensure_embeddings(&s.gateway)?;
                    writeln!(out, "stored as record {}", id.expect("accept stores").0).map_err(w)?;
                }
                DecisionArg::Reject => {
                    decide(&mut run, Decision::Reject, &mut store)?;
                    writeln!(out, "rejected; logged to {}", store.audit_path().display()).map_err(w)?;
                }
                DecisionArg::Skip => writeln!(out, "not stored").map_err(w)?,
            }
        }
        Command::Batch { file, level, accept } => {
            let s = Session::open(config)?;
            let mut store = s.store()?;
            let scope = s.config.scope()?;
            let agent = Agent::new(&s.gateway, &s.suite, &scope, s.config.agent);
            let queries = read_batch(&file, level.unwrap_or(ComplexityLevel::ComplexSingleGoal))?;
            let mut failed = 0;
            for query in queries {
                let mut run = agent.run(query, &store);
                let mut line = format!(
                    "{} {:?} iterations={} steps={}",
                    run.query.id,
                    run.status,
                    run.iteration,
                    run.latest().map_or(0, |i| i.workflow.steps.len())
                );
                if run.status == RunStatus::Failed {
                    failed += 1;
                    line += &format!(" cause={:?}", run.failure.as_deref().unwrap_or(""));
                } else if accept {
                    let id = decide(&mut run, Decision::Accept, &mut store)?.expect("accept stores");
                    store.ensure_embeddings(&s.gateway)?;
                    line += &format!(" record={}", id.0);
                }
                writeln!(out, "{line}").map_err(w)?;
            }
            if failed > 0 {
                return Err(ServiceError::Input(format!("{failed} runs failed")));
            }
        }
        Command::Distill { incremental } => {
            let s = Session::open(config)?;
            let store = s.store()?;
            let schema = s.config.data_agent.schema.as_ref().map(import_schema).transpose()?;
            let existing = if incremental {
                latest_report(&s.config)?.map(|r| r.functions).unwrap_or_default()
            } else {
                Vec::new()
            };
            let report = distill(store.records(), &s.suite, &s.gateway, &s.config.distill, &existing, schema.as_ref())?;
            write_outputs(&report, &s.config.data_dir)?;
            print_report(&report, out).map_err(w)?;
            writeln!(out, "outputs written under {}", s.config.data_dir.display()).map_err(w)?;
        }
        Command::Stats => {
            let store = StoreHandle::load(config.store_path(), config.gateway.tuning.embedding_dim)?;
            let report = latest_report(&config)?;
            let stats = collect_stats(&store, report.as_ref())?;
            writeln!(out, "store size: {}", stats.store_size).map_err(w)?;
            writeln!(out, "rejected: {}", stats.rejected).map_err(w)?;
            for (level, n) in &stats.levels {
                writeln!(out, "  {level}: {n}").map_err(w)?;
            }
            match &report {
                Some(r) => print_report(r, out).map_err(w)?,
                None => writeln!(out, "no distill report yet").map_err(w)?,
            }
        }
        Command::ExportSpec => {
            let report = latest_report(&config)?
                .ok_or_else(|| ServiceError::Input("no distill report found; run `flowsmith distill` first".into()))?;
            write_spec(&report, &config.data_dir)?;
            writeln!(out, "wrote {}", config.data_dir.join("api_spec").display()).map_err(w)?;
        }
        Command::Serve { listen } => {
            let mut config = config;
            if let Some(l) = listen {
                config.listen = l;
            }
            serve(config)?;
        }
    }
    Ok(())
}

fn print_run(run: &RunState, out: &mut dyn Write) -> std::io::Result<()> {
    for it in &run.iterations {
        let ids: Vec<String> = it.retrieved.iter().map(|s| s.id.0.to_string()).collect();
        write!(out, "iteration {}: examples [{}] by {:?}", it.index + 1, ids.join(", "), it.retrieved_by)?;
        match it.thought_similarity {
            Some(sim) => writeln!(out, ", thought similarity {sim:.3}")?,
            None => writeln!(out)?,
        }
    }
    if let Some(last) = run.latest() {
        writeln!(out, "converged: {}\n", run.converged)?;
        writeln!(out, "{}", render_workflow(&last.thought, &last.workflow))?;
    }
    Ok(())
}

fn prompt_decision(input: &mut dyn BufRead, out: &mut dyn Write) -> std::io::Result<DecisionArg> {
    loop {
        write!(out, "Accept this workflow? [a]ccept/[r]eject/[s]kip: ")?;
        out.flush()?;
        let mut line = String::new();
        if input.read_line(&mut line)? == 0 {
            writeln!(out)?;
            return Ok(DecisionArg::Skip);
        }
        match line.trim().to_ascii_lowercase().as_str() {
            "a" | "accept" | "y" | "yes" => return Ok(DecisionArg::Accept),
            "r" | "reject" | "n" | "no" => return Ok(DecisionArg::Reject),
            "s" | "skip" | "" => return Ok(DecisionArg::Skip),
            _ => continue,
        }
    }
}

#[derive(Deserialize)]
struct BatchLine {
    text: String,
    #[serde(default)]
    level: Option<String>,
}

fn read_batch(path: &std::path::Path, default_level: ComplexityLevel) -> Result<Vec<Query>, ServiceError> {
    let text = std::fs::read_to_string(path).map_err(io_error(path))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let bad = |e: String| ServiceError::Input(format!("{} line {}: {e}", path.display(), i + 1));
        let (text, level) = if line.starts_with('{') {
            let parsed: BatchLine = serde_json::from_str(line).map_err(|e| bad(e.to_string()))?;
            let level = match parsed.level {
                Some(l) => l.parse().map_err(|e: flowsmith_core::model::ModelError| bad(e.to_string()))?,
                None => default_level,
            };
            (parsed.text, level)
        } else {
            (line.to_string(), default_level)
        };
        out.push(Query::user(text, level).map_err(|e| bad(e.to_string()))?);
    }
    Ok(out)
}

fn print_report(report: &DistillReport, out: &mut dyn Write) -> std::io::Result<()> {
    for slice in &report.slices {
        let counts: Vec<String> = slice.category_counts.iter().map(|(c, n)| format!("{c} {n}")).collect();
        writeln!(
            out,
            "slice {}: {} records, {} steps ({})",
            slice.name,
            slice.records,
            slice.steps,
            counts.join(", ")
        )?;
        for c in [StepCategory::Analysis, StepCategory::Output] {
            let new = slice.new_functions.get(&c).copied().unwrap_or(0);
            match slice.new_function_ratio.get(&c) {
                Some(r) => writeln!(out, "  {c}: {new} new functions ({r:.2}% of steps)")?,
                None => writeln!(out, "  {c}: {new} new functions")?,
            }
        }
    }
    writeln!(out, "functions: {}", report.functions.len())?;
    writeln!(out, "failures: {}", report.failures.len())
}
