//! Per-agent retrieval.
//!
//! Each assignment traverses its subgraphs from the subquestion's anchor
//! entities, keeps paths whose entity match clears `theta_match`, unions the
//! step triples and textualizes them into evidence. Assignments run
//! concurrently up to a worker cap; results come back in assignment order no
//! matter how the threads interleave.

use std::collections::BTreeMap;
use std::collections::BTreeSet;
use std::panic::AssertUnwindSafe;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::allocate::Allocation;
use crate::error::{Result, SplitRagError};
use crate::gateway::{LlmGateway, PromptTemplate, Provider, Role};
use crate::kg::{EntityId, KnowledgeGraph, Path, PathStep, SegmentPattern, Triple};
use crate::partition::{Partition, Subgraph};
use crate::route::{RetrievalPlan, Subquestion};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RetrieverConfig {
    /// Minimum entity-match score for a traversed path.
    pub theta_match: f64,
    /// Concurrent assignment workers.
    pub max_workers: usize,
}

impl Default for RetrieverConfig {
    fn default() -> Self {
        RetrieverConfig {
            theta_match: 0.5,
            max_workers: 4,
        }
    }
}

impl RetrieverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.theta_match) {
            return Err(SplitRagError::InvalidConfig(format!(
                "theta_match must be in [0, 1], got {}",
                self.theta_match
            )));
        }
        if self.max_workers == 0 {
            return Err(SplitRagError::InvalidConfig(
                "max_workers must be at least 1".to_string(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RetrievalResult {
    /// Index of the assignment in the plan.
    pub assignment: usize,
    pub agent: u32,
    pub subquestion: Subquestion,
    pub paths: Vec<Path>,
    pub triples: BTreeSet<Triple>,
    pub evidence: String,
    pub flags: Vec<String>,
    pub wall_ms: u64,
}

/// All simple walks of 1..=2 hops inside the subgraph, rooted at `start`.
fn walks_from(
    start: EntityId,
    subgraph: &Subgraph,
    adjacency: &BTreeMap<EntityId, Vec<PathStep>>,
    kg: &KnowledgeGraph,
) -> Vec<Path> {
    let mut out = Vec::new();
    if !subgraph.entities.contains(&start) {
        return out;
    }
    let Some(first_steps) = adjacency.get(&start) else {
        return out;
    };
    for &step1 in first_steps {
        let mid = step1.to();
        out.push(Path::new(start, vec![step1], kg).expect("adjacency steps are valid"));
        if let Some(second_steps) = adjacency.get(&mid) {
            for &step2 in second_steps {
                if step2.to() == start || step2.triple == step1.triple {
                    continue;
                }
                out.push(
                    Path::new(start, vec![step1, step2], kg).expect("adjacency steps are valid"),
                );
            }
        }
    }
    out
}

fn subgraph_adjacency(subgraph: &Subgraph) -> BTreeMap<EntityId, Vec<PathStep>> {
    let mut adjacency: BTreeMap<EntityId, Vec<PathStep>> = BTreeMap::new();
    for &triple in &subgraph.triples {
        adjacency.entry(triple.head).or_default().push(PathStep {
            triple,
            inverted: false,
        });
        adjacency.entry(triple.tail).or_default().push(PathStep {
            triple,
            inverted: true,
        });
    }
    adjacency
}

/// Anchored traversal: paths rooted at the subquestion's anchors whose
/// entity-match score `|Entities(p) ∩ anchors| / |anchors|` clears the
/// threshold. With no anchors the subquestion is a pure type query and every
/// instantiation of its pattern inside the subgraph is returned instead.
pub fn traverse(
    subq: &Subquestion,
    subgraph: &Subgraph,
    kg: &KnowledgeGraph,
    theta_match: f64,
) -> Vec<Path> {
    let adjacency = subgraph_adjacency(subgraph);
    if subq.anchors.is_empty() {
        let wanted = subq.pattern.canonical();
        let mut out = Vec::new();
        for &start in subgraph.entities.iter() {
            for path in walks_from(start, subgraph, &adjacency, kg) {
                // Each undirected walk appears once, rooted at its lower end.
                if path.end() < path.start() {
                    continue;
                }
                if SegmentPattern::of_path(&path, kg).canonical() == wanted {
                    out.push(path);
                }
            }
        }
        return out;
    }
    let anchor_set: BTreeSet<EntityId> = subq.anchors.iter().copied().collect();
    let mut out = Vec::new();
    for &anchor in &subq.anchors {
        for path in walks_from(anchor, subgraph, &adjacency, kg) {
            let entities = path.entity_set();
            let hit = entities.intersection(&anchor_set).count();
            let score = hit as f64 / anchor_set.len() as f64;
            if score >= theta_match {
                out.push(path);
            }
        }
    }
    out
}

/// Union of every step triple in stored direction.
pub fn collect_triples(paths: &[Path]) -> BTreeSet<Triple> {
    paths.iter().flat_map(|p| p.triples()).collect()
}

/// Renders triples to evidence text. Stub mode emits the sorted templated
/// lines; live mode asks the summarizer model and falls back to the same
/// lines when the gateway fails.
pub fn textualize(
    triples: &BTreeSet<Triple>,
    kg: &KnowledgeGraph,
    gateway: &LlmGateway,
) -> (String, Vec<String>) {
    if triples.is_empty() {
        return (String::new(), vec!["no evidence".to_string()]);
    }
    let mut lines: Vec<String> = triples.iter().map(|t| kg.display_triple(t)).collect();
    lines.sort_unstable();
    let joined = lines.join("\n");
    if gateway.provider() == Provider::Stub {
        return (joined, Vec::new());
    }
    let filled = PromptTemplate::for_role(Role::Summarizer)
        .fill(&BTreeMap::from([("E_all", joined.clone())]));
    match filled.and_then(|prompt| gateway.complete(Role::Summarizer, &prompt)) {
        Ok(summary) => (summary, Vec::new()),
        Err(e) => (joined, vec![format!("evidence summary degraded: {e}")]),
    }
}

fn run_assignment(
    index: usize,
    plan: &RetrievalPlan,
    partition: &Partition,
    kg: &KnowledgeGraph,
    gateway: &LlmGateway,
    cfg: &RetrieverConfig,
) -> RetrievalResult {
    let started = Instant::now();
    let assignment = &plan.assignments[index];
    let mut flags = Vec::new();
    if assignment.subquestion.type_level {
        flags.push("type-level match".to_string());
    }
    let mut paths = Vec::new();
    for &sg_id in &assignment.subgraphs {
        match partition.subgraph(sg_id) {
            Some(sg) => paths.extend(traverse(&assignment.subquestion, sg, kg, cfg.theta_match)),
            None => flags.push(format!("failed: subgraph {} missing", sg_id.0)),
        }
    }
    let triples = collect_triples(&paths);
    let (evidence, evidence_flags) = textualize(&triples, kg, gateway);
    flags.extend(evidence_flags);
    RetrievalResult {
        assignment: index,
        agent: assignment.agent,
        subquestion: assignment.subquestion.clone(),
        paths,
        triples,
        evidence,
        flags,
        wall_ms: started.elapsed().as_millis() as u64,
    }
}

/// Executes every assignment of the plan, at most `max_workers` at a time.
/// Results are ordered by assignment index; a failing assignment yields an
/// empty flagged result without disturbing the others.
pub fn run_plan(
    plan: &RetrievalPlan,
    partition: &Partition,
    _allocation: &Allocation,
    kg: &KnowledgeGraph,
    gateway: &LlmGateway,
    cfg: &RetrieverConfig,
) -> Result<Vec<RetrievalResult>> {
    let n = plan.assignments.len();
    if n == 0 {
        return Ok(Vec::new());
    }
    let slots: Mutex<Vec<Option<RetrievalResult>>> = Mutex::new(vec![None; n]);
    let next = AtomicUsize::new(0);
    let workers = cfg.max_workers.max(1).min(n);
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let index = next.fetch_add(1, Ordering::SeqCst);
                if index >= n {
                    break;
                }
                let outcome = std::panic::catch_unwind(AssertUnwindSafe(|| {
                    run_assignment(index, plan, partition, kg, gateway, cfg)
                }));
                let result = outcome.unwrap_or_else(|_| RetrievalResult {
                    assignment: index,
                    agent: plan.assignments[index].agent,
                    subquestion: plan.assignments[index].subquestion.clone(),
                    paths: Vec::new(),
                    triples: BTreeSet::new(),
                    evidence: String::new(),
                    flags: vec!["failed: assignment panicked".to_string()],
                    wall_ms: 0,
                });
                slots.lock().expect("result slots poisoned")[index] = Some(result);
            });
        }
    });
    let results = slots
        .into_inner()
        .expect("result slots poisoned")
        .into_iter()
        .map(|r| r.expect("every index was filled"))
        .collect();
    Ok(results)
}
