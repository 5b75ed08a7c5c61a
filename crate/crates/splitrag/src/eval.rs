//! Answer metrics and search-space accounting.
//!
//! The report separates deterministic quality numbers from wall-clock data:
//! `EvalReport` carries only values that are stable across runs in stub mode,
//! while per-question timings live in the traces the answer stage writes.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SplitRagError};
use crate::kg::KnowledgeGraph;
use crate::partition::{Partition, SubgraphId};
use crate::question::QuestionRecord;

/// True when at least one gold entity was returned.
pub fn hit(answered: &[String], gold: &BTreeSet<String>) -> bool {
    answered.iter().any(|a| gold.contains(a))
}

/// True when the top-ranked prediction is a gold entity.
pub fn hit_at_1(answered: &[String], gold: &BTreeSet<String>) -> bool {
    answered.first().is_some_and(|a| gold.contains(a))
}

/// Harmonic mean of precision and recall over the predicted and gold entity
/// sets. Zero whenever the intersection is empty, including the case of two
/// empty sets.
pub fn f1(answered: &[String], gold: &BTreeSet<String>) -> f64 {
    let predicted: BTreeSet<&String> = answered.iter().collect();
    let overlap = predicted.iter().filter(|a| gold.contains(**a)).count() as f64;
    if overlap == 0.0 {
        return 0.0;
    }
    let p = overlap / predicted.len() as f64;
    let r = overlap / gold.len() as f64;
    2.0 * p * r / (p + r)
}

/// Whether the activated subgraphs hold every triple of at least one gold
/// path, i.e. enough knowledge to answer. None when the record carries no
/// path annotation.
pub fn g_covered(
    record: &QuestionRecord,
    activated: &[SubgraphId],
    partition: &Partition,
) -> Option<bool> {
    if record.paths.is_empty() {
        return None;
    }
    let mut pool = BTreeSet::new();
    for id in activated {
        if let Some(s) = partition.subgraph(*id) {
            pool.extend(s.triples.iter().copied());
        }
    }
    Some(
        record
            .paths
            .iter()
            .any(|p| p.triples().iter().all(|t| pool.contains(t))),
    )
}

/// One answered question, ready for scoring.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnsweredQuestion {
    pub id: String,
    /// Ranked predictions.
    pub answered: Vec<String>,
    pub gold: BTreeSet<String>,
    /// Subgraphs the plan activated, deduplicated.
    pub activated: Vec<SubgraphId>,
    pub g_covered: Option<bool>,
    pub flags: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QuestionEval {
    pub id: String,
    pub answered: Vec<String>,
    pub gold: BTreeSet<String>,
    pub hit: bool,
    pub hit_at_1: bool,
    pub f1: f64,
    pub activated_subgraphs: usize,
    pub touched_entities: usize,
    pub touched_ratio: f64,
    pub g_covered: Option<bool>,
    pub flags: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalAggregates {
    pub hit: f64,
    pub hits_at_1: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalEfficiency {
    pub mean_activated_subgraphs: f64,
    pub mean_touched_entities: f64,
    pub mean_touched_ratio: f64,
    /// Fraction of path-annotated questions whose gold path was covered.
    pub g_coverage: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub total_questions: usize,
    pub per_question: Vec<QuestionEval>,
    pub aggregates: EvalAggregates,
    pub efficiency: EvalEfficiency,
}

/// Entities inside the union of the given subgraphs.
pub fn touched_entities(activated: &[SubgraphId], partition: &Partition) -> usize {
    let mut touched = BTreeSet::new();
    for id in activated {
        if let Some(s) = partition.subgraph(*id) {
            touched.extend(s.entities.iter().copied());
        }
    }
    touched.len()
}

pub fn evaluate(
    items: &[AnsweredQuestion],
    partition: &Partition,
    kg: &KnowledgeGraph,
) -> Result<EvalReport> {
    if items.is_empty() {
        return Err(SplitRagError::Dataset(
            "nothing to evaluate: no answered questions".to_string(),
        ));
    }
    let n_entities = kg.entity_count();
    let per_question: Vec<QuestionEval> = items
        .iter()
        .map(|item| {
            let touched = touched_entities(&item.activated, partition);
            QuestionEval {
                id: item.id.clone(),
                answered: item.answered.clone(),
                gold: item.gold.clone(),
                hit: hit(&item.answered, &item.gold),
                hit_at_1: hit_at_1(&item.answered, &item.gold),
                f1: f1(&item.answered, &item.gold),
                activated_subgraphs: item.activated.len(),
                touched_entities: touched,
                touched_ratio: touched as f64 / n_entities as f64,
                g_covered: item.g_covered,
                flags: item.flags.clone(),
            }
        })
        .collect();

    let n = per_question.len() as f64;
    let frac = |f: &dyn Fn(&QuestionEval) -> bool| {
        per_question.iter().filter(|q| f(q)).count() as f64 / n
    };
    let aggregates = EvalAggregates {
        hit: frac(&|q| q.hit),
        hits_at_1: frac(&|q| q.hit_at_1),
        f1: per_question.iter().map(|q| q.f1).sum::<f64>() / n,
    };
    let covered: Vec<bool> = per_question.iter().filter_map(|q| q.g_covered).collect();
    let efficiency = EvalEfficiency {
        mean_activated_subgraphs: per_question
            .iter()
            .map(|q| q.activated_subgraphs as f64)
            .sum::<f64>()
            / n,
        mean_touched_entities: per_question
            .iter()
            .map(|q| q.touched_entities as f64)
            .sum::<f64>()
            / n,
        mean_touched_ratio: per_question.iter().map(|q| q.touched_ratio).sum::<f64>() / n,
        g_coverage: if covered.is_empty() {
            None
        } else {
            Some(covered.iter().filter(|c| **c).count() as f64 / covered.len() as f64)
        },
    };
    Ok(EvalReport {
        total_questions: per_question.len(),
        per_question,
        aggregates,
        efficiency,
    })
}

/// Per-question execution trace written by the answer stage. Timings stay
/// here, out of the deterministic report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageTimings {
    pub route_ms: u128,
    pub retrieve_ms: u128,
    pub fuse_ms: u128,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QuestionTrace {
    pub id: String,
    pub mode: String,
    pub activated: Vec<SubgraphId>,
    pub agents: Vec<u32>,
    pub timings: StageTimings,
    pub flags: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SearchSpaceRow {
    pub id: String,
    pub activated_subgraphs: usize,
    pub touched_entities: usize,
    pub ratio: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SearchSpaceReport {
    pub per_question: Vec<SearchSpaceRow>,
    pub mean_ratio: f64,
    /// Questions with no activated subgraph, kept out of the mean.
    pub excluded_empty: usize,
    pub n_entities: usize,
    pub subgraph_count: usize,
    pub mean_subgraph_size: f64,
    /// Indexed-partition cost model (N/k)·ln k against a flat scan of N.
    pub model_split_cost: f64,
    pub model_full_cost: f64,
}

pub fn measure_search_space(
    traces: &[QuestionTrace],
    partition: &Partition,
    kg: &KnowledgeGraph,
) -> Result<SearchSpaceReport> {
    if traces.is_empty() {
        return Err(SplitRagError::Dataset(
            "nothing to measure: no traces".to_string(),
        ));
    }
    let n_entities = kg.entity_count();
    let mut per_question = Vec::new();
    let mut excluded_empty = 0usize;
    for trace in traces {
        if trace.activated.is_empty() {
            excluded_empty += 1;
            continue;
        }
        let touched = touched_entities(&trace.activated, partition);
        per_question.push(SearchSpaceRow {
            id: trace.id.clone(),
            activated_subgraphs: trace.activated.len(),
            touched_entities: touched,
            ratio: touched as f64 / n_entities as f64,
        });
    }
    let mean_ratio = if per_question.is_empty() {
        0.0
    } else {
        per_question.iter().map(|r| r.ratio).sum::<f64>() / per_question.len() as f64
    };
    let subgraph_count = partition.subgraphs.len();
    let mean_subgraph_size = partition
        .subgraphs
        .iter()
        .map(|s| s.size() as f64)
        .sum::<f64>()
        / subgraph_count.max(1) as f64;
    let k = mean_subgraph_size.max(2.0);
    Ok(SearchSpaceReport {
        per_question,
        mean_ratio,
        excluded_empty,
        n_entities,
        subgraph_count,
        mean_subgraph_size,
        model_split_cost: n_entities as f64 / k * k.ln(),
        model_full_cost: n_entities as f64,
    })
}
