//! Stage commands and the artifact files between them.
//!
//! Every stage reads the dataset directory plus the artifacts of earlier
//! stages, writes its own artifact into the output directory, and stamps it
//! with the config hash. A stage refuses to consume artifacts produced under
//! a different config or dataset. Artifacts are pretty JSON by default; the
//! compact flag switches to a binary container.

use std::collections::BTreeMap;
use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::allocate::{allocate, Allocation};
use crate::config::{config_hash, PipelineConfig};
use crate::dataset::{load_dir, Dataset};
use crate::error::{Result, SplitRagError};
use crate::eval::{self, AnsweredQuestion, QuestionTrace, StageTimings};
use crate::fusion::fuse;
use crate::gateway::LlmGateway;
use crate::partition::{partition, Partition, SubgraphId};
use crate::question::QuestionRecord;
use crate::retrieve::run_plan;
use crate::route::{record_patterns, route, PlanMode, RetrievalPlan};

pub const PARTITION_FILE: &str = "partition";
pub const ALLOCATION_FILE: &str = "allocation";
pub const PLANS_FILE: &str = "plans";
pub const ANSWERS_FILE: &str = "answers";
pub const TRACES_FILE: &str = "traces";
pub const EVAL_FILE: &str = "eval_report";
pub const SEARCH_SPACE_FILE: &str = "search_space";

#[derive(Debug, Serialize, Deserialize)]
struct Envelope<T> {
    config_hash: String,
    payload: T,
}

fn write_artifact<T: Serialize>(
    out_dir: &Path,
    name: &str,
    hash: &str,
    payload: &T,
    compact: bool,
) -> Result<PathBuf> {
    std::fs::create_dir_all(out_dir)?;
    let envelope = Envelope {
        config_hash: hash.to_string(),
        payload,
    };
    let path = if compact {
        let path = out_dir.join(format!("{name}.bin"));
        let bytes =
            bincode::serialize(&envelope).map_err(|e| SplitRagError::Serde(e.to_string()))?;
        std::fs::write(&path, bytes)?;
        path
    } else {
        let path = out_dir.join(format!("{name}.json"));
        let text = serde_json::to_string_pretty(&envelope)
            .map_err(|e| SplitRagError::Serde(e.to_string()))?;
        std::fs::write(&path, text)?;
        path
    };
    Ok(path)
}

/// Reads `<name>.json` or `<name>.bin`, whichever exists, and checks its
/// stamp. `stage` names the command that should have produced the file.
fn read_artifact<T: DeserializeOwned>(
    dir: &Path,
    name: &str,
    stage: &str,
    expected_hash: &str,
) -> Result<T> {
    let json_path = dir.join(format!("{name}.json"));
    let bin_path = dir.join(format!("{name}.bin"));
    let envelope: Envelope<T> = if json_path.is_file() {
        let text = std::fs::read_to_string(&json_path)?;
        serde_json::from_str(&text).map_err(|e| SplitRagError::Serde(e.to_string()))?
    } else if bin_path.is_file() {
        let bytes = std::fs::read(&bin_path)?;
        bincode::deserialize(&bytes).map_err(|e| SplitRagError::Serde(e.to_string()))?
    } else {
        return Err(SplitRagError::MissingArtifact {
            stage: stage.to_string(),
            path: json_path.display().to_string(),
        });
    };
    if envelope.config_hash != expected_hash {
        return Err(SplitRagError::ConfigHashMismatch {
            stage: stage.to_string(),
            expected: expected_hash.to_string(),
            actual: envelope.config_hash,
        });
    }
    Ok(envelope.payload)
}

#[derive(Debug)]
pub struct StageReport {
    pub config_hash: String,
    pub summary: String,
    pub warnings: Vec<String>,
}

fn prepared(cfg: &PipelineConfig, in_dir: &Path) -> Result<(Dataset, String)> {
    let dataset = load_dir(in_dir)?;
    let hash = config_hash(cfg, in_dir)?;
    Ok((dataset, hash))
}

pub fn cmd_partition(
    cfg: &PipelineConfig,
    in_dir: &Path,
    out_dir: &Path,
    compact: bool,
) -> Result<StageReport> {
    let (dataset, hash) = prepared(cfg, in_dir)?;
    let part = partition(&dataset.train, &dataset.kg, &cfg.partition)?;
    let mut warnings = dataset.warnings.clone();
    warnings.extend(part.validate(&dataset.kg));
    write_artifact(out_dir, PARTITION_FILE, &hash, &part, compact)?;
    Ok(StageReport {
        config_hash: hash,
        summary: format!(
            "partitioned {} entities into {} subgraphs (total IG {:.4}, {} uncovered entities)",
            dataset.kg.entity_count(),
            part.subgraphs.len(),
            part.ig.total,
            part.colors.uncovered.len()
        ),
        warnings,
    })
}

pub fn cmd_allocate(
    cfg: &PipelineConfig,
    in_dir: &Path,
    out_dir: &Path,
    compact: bool,
) -> Result<StageReport> {
    let (dataset, hash) = prepared(cfg, in_dir)?;
    let part: Partition = read_artifact(out_dir, PARTITION_FILE, "partition", &hash)?;
    let alloc = allocate(&dataset.train, &part, &dataset.kg, &cfg.allocation)?;
    write_artifact(out_dir, ALLOCATION_FILE, &hash, &alloc, compact)?;
    let mean_coherence = if alloc.groups.is_empty() {
        0.0
    } else {
        alloc.groups.iter().map(|g| g.coherence).sum::<f64>() / alloc.groups.len() as f64
    };
    Ok(StageReport {
        config_hash: hash,
        summary: format!(
            "allocated {} subgraphs to {} agents (mean coherence {:.3}, {} leftovers placed)",
            alloc.owner.len(),
            alloc.groups.len(),
            mean_coherence,
            alloc.audit.leftover_subgraphs.len()
        ),
        warnings: dataset.warnings,
    })
}

#[derive(Debug, Serialize, Deserialize)]
pub struct PlanRow {
    pub plan: RetrievalPlan,
    pub route_ms: u128,
}

pub fn cmd_route(
    cfg: &PipelineConfig,
    in_dir: &Path,
    out_dir: &Path,
    compact: bool,
) -> Result<StageReport> {
    let (mut dataset, hash) = prepared(cfg, in_dir)?;
    let part: Partition = read_artifact(out_dir, PARTITION_FILE, "partition", &hash)?;
    let alloc: Allocation = read_artifact(out_dir, ALLOCATION_FILE, "allocate", &hash)?;
    let recorded = record_patterns(&mut dataset.train, &part, &alloc, &dataset.kg)?;

    let mut rows = Vec::new();
    let mut unroutable = 0usize;
    for record in &dataset.test {
        let started = Instant::now();
        let plan = match route(record, &dataset.train, &part, &alloc, &dataset.kg, &cfg.router) {
            Ok(plan) => plan,
            // A question the router cannot place still gets a plan row so
            // the answer stage can report it instead of dying.
            Err(e @ SplitRagError::Routing(_)) => RetrievalPlan {
                question_id: record.id.clone(),
                mode: PlanMode::Unroutable,
                assignments: Vec::new(),
                confidence: BTreeMap::new(),
                expected: None,
                flags: vec![e.to_string()],
            },
            Err(e) => return Err(e),
        };
        if plan.mode == PlanMode::Unroutable {
            unroutable += 1;
        }
        rows.push(PlanRow {
            plan,
            route_ms: started.elapsed().as_millis(),
        });
    }
    write_artifact(out_dir, PLANS_FILE, &hash, &rows, compact)?;
    Ok(StageReport {
        config_hash: hash,
        summary: format!(
            "planned {} questions against {} stored patterns ({} unroutable)",
            rows.len(),
            recorded,
            unroutable
        ),
        warnings: dataset.warnings,
    })
}

#[derive(Debug, Serialize, Deserialize)]
pub struct AnswerRow {
    pub id: String,
    /// Ranked answer entities.
    pub answered: Vec<String>,
    pub text: String,
    pub activated: Vec<SubgraphId>,
    pub flags: Vec<String>,
}

fn mode_label(mode: PlanMode) -> String {
    serde_json::to_value(mode)
        .ok()
        .and_then(|v| v.as_str().map(str::to_string))
        .unwrap_or_else(|| format!("{mode:?}"))
}

pub fn cmd_answer(
    cfg: &PipelineConfig,
    in_dir: &Path,
    out_dir: &Path,
    compact: bool,
) -> Result<StageReport> {
    let (dataset, hash) = prepared(cfg, in_dir)?;
    let part: Partition = read_artifact(out_dir, PARTITION_FILE, "partition", &hash)?;
    let alloc: Allocation = read_artifact(out_dir, ALLOCATION_FILE, "allocate", &hash)?;
    let rows: Vec<PlanRow> = read_artifact(out_dir, PLANS_FILE, "route", &hash)?;
    let gateway = LlmGateway::new(cfg.gateway.clone())?;

    let by_id: BTreeMap<&str, &QuestionRecord> =
        dataset.test.iter().map(|r| (r.id.as_str(), r)).collect();

    let mut answers = Vec::new();
    let mut traces = Vec::new();
    for row in &rows {
        let plan = &row.plan;
        let record = by_id.get(plan.question_id.as_str()).ok_or_else(|| {
            SplitRagError::Dataset(format!(
                "plan for unknown question {}",
                plan.question_id
            ))
        })?;

        let mut activated: BTreeSet<SubgraphId> = BTreeSet::new();
        for a in &plan.assignments {
            activated.extend(a.subgraphs.iter().copied());
        }
        let activated: Vec<SubgraphId> = activated.into_iter().collect();

        if plan.assignments.is_empty() {
            let mut flags = plan.flags.clone();
            flags.push("no retrieval".to_string());
            answers.push(AnswerRow {
                id: plan.question_id.clone(),
                answered: Vec::new(),
                text: "unknown".to_string(),
                activated,
                flags: flags.clone(),
            });
            traces.push(QuestionTrace {
                id: plan.question_id.clone(),
                mode: mode_label(plan.mode),
                activated: Vec::new(),
                agents: Vec::new(),
                timings: StageTimings {
                    route_ms: row.route_ms,
                    retrieve_ms: 0,
                    fuse_ms: 0,
                },
                flags,
            });
            continue;
        }

        let retrieve_started = Instant::now();
        let results = run_plan(plan, &part, &alloc, &dataset.kg, &gateway, &cfg.retriever)?;
        let retrieve_ms = retrieve_started.elapsed().as_millis();

        let fuse_started = Instant::now();
        let fused = fuse(&results, plan, record, &dataset.kg, &gateway, &cfg.fusion)?;
        let fuse_ms = fuse_started.elapsed().as_millis();

        let mut flags = plan.flags.clone();
        for r in &results {
            flags.extend(r.flags.iter().cloned());
        }
        flags.extend(fused.flags.iter().cloned());

        let agents: BTreeSet<u32> = results.iter().map(|r| r.agent).collect();
        traces.push(QuestionTrace {
            id: plan.question_id.clone(),
            mode: mode_label(plan.mode),
            activated: activated.clone(),
            agents: agents.into_iter().collect(),
            timings: StageTimings {
                route_ms: row.route_ms,
                retrieve_ms,
                fuse_ms,
            },
            flags: flags.clone(),
        });
        answers.push(AnswerRow {
            id: plan.question_id.clone(),
            answered: fused.answers,
            text: fused.answer_text,
            activated,
            flags,
        });
    }

    write_artifact(out_dir, ANSWERS_FILE, &hash, &answers, compact)?;
    write_artifact(out_dir, TRACES_FILE, &hash, &traces, compact)?;
    let answered = answers.iter().filter(|a| !a.answered.is_empty()).count();
    Ok(StageReport {
        config_hash: hash,
        summary: format!(
            "answered {} of {} questions with evidence",
            answered,
            answers.len()
        ),
        warnings: dataset.warnings,
    })
}

pub fn cmd_eval(
    cfg: &PipelineConfig,
    in_dir: &Path,
    out_dir: &Path,
    compact: bool,
) -> Result<StageReport> {
    let (dataset, hash) = prepared(cfg, in_dir)?;
    let part: Partition = read_artifact(out_dir, PARTITION_FILE, "partition", &hash)?;
    let rows: Vec<AnswerRow> = read_artifact(out_dir, ANSWERS_FILE, "answer", &hash)?;
    let traces: Vec<QuestionTrace> = read_artifact(out_dir, TRACES_FILE, "answer", &hash)?;

    let by_id: BTreeMap<&str, &QuestionRecord> =
        dataset.test.iter().map(|r| (r.id.as_str(), r)).collect();
    let mut items = Vec::new();
    for row in &rows {
        let record = by_id.get(row.id.as_str()).ok_or_else(|| {
            SplitRagError::Dataset(format!("answers for unknown question {}", row.id))
        })?;
        items.push(AnsweredQuestion {
            id: row.id.clone(),
            answered: row.answered.clone(),
            gold: record.answers.clone(),
            activated: row.activated.clone(),
            g_covered: eval::g_covered(record, &row.activated, &part),
            flags: row.flags.clone(),
        });
    }
    let report = eval::evaluate(&items, &part, &dataset.kg)?;
    let space = eval::measure_search_space(&traces, &part, &dataset.kg)?;
    write_artifact(out_dir, EVAL_FILE, &hash, &report, compact)?;
    write_artifact(out_dir, SEARCH_SPACE_FILE, &hash, &space, compact)?;
    Ok(StageReport {
        config_hash: hash,
        summary: format!(
            "Hit {:.2}  Hits@1 {:.2}  F1 {:.3}  touched ratio {:.3} over {} questions",
            report.aggregates.hit,
            report.aggregates.hits_at_1,
            report.aggregates.f1,
            space.mean_ratio,
            report.total_questions
        ),
        warnings: dataset.warnings,
    })
}
