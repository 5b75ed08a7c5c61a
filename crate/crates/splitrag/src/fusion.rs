//! Conflict-aware result fusion.
//!
//! Agent results are unioned with provenance, each triple scored by the
//! summed confidence of the agents that produced it. Two decidable rules
//! flag contradictions: a functional relation with two different tails for
//! one head, and a declared negation pair over the same head and tail. Per
//! connected component the maximum-total-score conflict-free subset survives
//! (exact for small components, greedy above a size cutoff), after which the
//! head agent synthesizes the answer. In stub mode synthesis is a pure
//! function of the clean triples and the plan.

use std::collections::BTreeMap;
use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SplitRagError};
use crate::gateway::{LlmGateway, PromptTemplate, Provider, Role};
use crate::kg::{KnowledgeGraph, Triple};
use crate::question::QuestionRecord;
use crate::retrieve::RetrievalResult;
use crate::route::RetrievalPlan;

/// Components up to this many vertices are resolved exactly.
pub const EXACT_COMPONENT_LIMIT: usize = 20;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct FusionConfig {
    pub enable_conflict_detection: bool,
}

impl Default for FusionConfig {
    fn default() -> Self {
        FusionConfig {
            enable_conflict_detection: true,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Aggregate {
    pub tri_all: BTreeSet<Triple>,
    pub et_all: String,
    /// Agents that contributed each triple.
    pub provenance: BTreeMap<Triple, BTreeSet<u32>>,
    /// s(τ): summed confidence of contributing agents.
    pub scores: BTreeMap<Triple, f64>,
    pub flags: Vec<String>,
}

/// Unions agent results. Confidence comes from the plan's per-agent map;
/// a triple reported by several assignments of one agent counts that agent
/// once.
pub fn aggregate(
    results: &[RetrievalResult],
    confidence: &BTreeMap<u32, f64>,
) -> Result<Aggregate> {
    if results.is_empty() {
        return Err(SplitRagError::Fusion(
            "no retrieval results to aggregate".to_string(),
        ));
    }
    let mut provenance: BTreeMap<Triple, BTreeSet<u32>> = BTreeMap::new();
    let mut evidence_blocks = Vec::new();
    for result in results {
        for &triple in &result.triples {
            provenance.entry(triple).or_default().insert(result.agent);
        }
        if !result.evidence.is_empty() {
            evidence_blocks.push(result.evidence.clone());
        }
    }
    let tri_all: BTreeSet<Triple> = provenance.keys().copied().collect();
    let scores = provenance
        .iter()
        .map(|(t, agents)| {
            let s = agents
                .iter()
                .map(|a| confidence.get(a).copied().unwrap_or(0.05))
                .sum();
            (*t, s)
        })
        .collect();
    let mut flags = Vec::new();
    if tri_all.is_empty() {
        flags.push("all agent results were empty".to_string());
    }
    Ok(Aggregate {
        tri_all,
        et_all: evidence_blocks.join("\n"),
        provenance,
        scores,
        flags,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConflictRule {
    /// Same head, same functional relation, different tails.
    FunctionalViolation,
    /// Same head and tail, declared (r, not-r) relation pair.
    NegationPair,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConflictGraph {
    /// Sorted vertex list.
    pub vertices: Vec<Triple>,
    /// Symmetric, irreflexive edges as (lower index, higher index, rule).
    pub edges: Vec<(usize, usize, ConflictRule)>,
    pub scores: Vec<f64>,
}

pub fn detect_conflicts(
    tri_all: &BTreeSet<Triple>,
    scores: &BTreeMap<Triple, f64>,
    kg: &KnowledgeGraph,
) -> ConflictGraph {
    let vertices: Vec<Triple> = tri_all.iter().copied().collect();
    let mut edges = Vec::new();
    for i in 0..vertices.len() {
        for j in (i + 1)..vertices.len() {
            let (a, b) = (&vertices[i], &vertices[j]);
            if a.head == b.head
                && a.relation == b.relation
                && a.tail != b.tail
                && kg.is_functional(a.relation)
            {
                edges.push((i, j, ConflictRule::FunctionalViolation));
                continue;
            }
            if a.head == b.head
                && a.tail == b.tail
                && kg.negation_of(a.relation) == Some(b.relation)
            {
                edges.push((i, j, ConflictRule::NegationPair));
            }
        }
    }
    let scores = vertices
        .iter()
        .map(|t| scores.get(t).copied().unwrap_or(0.0))
        .collect();
    ConflictGraph {
        vertices,
        edges,
        scores,
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RemovedTriple {
    pub triple: Triple,
    pub score: f64,
    pub rule: ConflictRule,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Resolution {
    pub kept: BTreeSet<Triple>,
    pub removed: Vec<RemovedTriple>,
    pub flags: Vec<String>,
}

/// Exact maximum-weight independent set by include-first recursion over the
/// sorted vertex order. Strictly better totals replace the incumbent, so on
/// ties the subset found first (including lower vertices) wins.
fn exact_mwis(order: &[usize], adjacency: &BTreeMap<usize, BTreeSet<usize>>, scores: &[f64]) -> Vec<usize> {
    fn recurse(
        pos: usize,
        order: &[usize],
        adjacency: &BTreeMap<usize, BTreeSet<usize>>,
        scores: &[f64],
        chosen: &mut Vec<usize>,
        chosen_score: f64,
        best: &mut (f64, Vec<usize>),
        remaining: &[f64],
    ) {
        if chosen_score + remaining[pos] <= best.0 && !best.1.is_empty() {
            return;
        }
        if pos == order.len() {
            if chosen_score > best.0 || (best.1.is_empty() && best.0 == f64::NEG_INFINITY) {
                *best = (chosen_score, chosen.clone());
            }
            return;
        }
        let v = order[pos];
        let blocked = chosen
            .iter()
            .any(|&c| adjacency.get(&c).is_some_and(|n| n.contains(&v)));
        if !blocked {
            chosen.push(v);
            recurse(
                pos + 1,
                order,
                adjacency,
                scores,
                chosen,
                chosen_score + scores[v],
                best,
                remaining,
            );
            chosen.pop();
        }
        recurse(pos + 1, order, adjacency, scores, chosen, chosen_score, best, remaining);
    }

    // Suffix sums for pruning.
    let mut remaining = vec![0.0; order.len() + 1];
    for (i, &v) in order.iter().enumerate().rev() {
        remaining[i] = remaining[i + 1] + scores[v].max(0.0);
    }
    let mut best = (f64::NEG_INFINITY, Vec::new());
    let mut chosen = Vec::new();
    recurse(0, order, adjacency, scores, &mut chosen, 0.0, &mut best, &remaining);
    best.1
}

/// Per connected component, keeps the conflict-free subset with the largest
/// total score. Isolated vertices always survive.
pub fn resolve(graph: &ConflictGraph) -> Resolution {
    let n = graph.vertices.len();
    let mut adjacency: BTreeMap<usize, BTreeSet<usize>> = BTreeMap::new();
    let mut edge_rule: BTreeMap<(usize, usize), ConflictRule> = BTreeMap::new();
    for &(i, j, rule) in &graph.edges {
        adjacency.entry(i).or_default().insert(j);
        adjacency.entry(j).or_default().insert(i);
        edge_rule.insert((i.min(j), i.max(j)), rule);
    }

    let mut kept_indices: BTreeSet<usize> = BTreeSet::new();
    let mut flags = Vec::new();
    let mut seen = vec![false; n];
    for start in 0..n {
        if seen[start] {
            continue;
        }
        // Collect the component.
        let mut component = Vec::new();
        let mut stack = vec![start];
        seen[start] = true;
        while let Some(v) = stack.pop() {
            component.push(v);
            if let Some(neighbors) = adjacency.get(&v) {
                for &u in neighbors {
                    if !seen[u] {
                        seen[u] = true;
                        stack.push(u);
                    }
                }
            }
        }
        component.sort_unstable();
        if component.len() == 1 {
            kept_indices.insert(component[0]);
            continue;
        }
        if component.len() <= EXACT_COMPONENT_LIMIT {
            for v in exact_mwis(&component, &adjacency, &graph.scores) {
                kept_indices.insert(v);
            }
        } else {
            flags.push(format!(
                "component of {} triples resolved greedily",
                component.len()
            ));
            let mut order = component.clone();
            order.sort_by(|&a, &b| {
                graph.scores[b]
                    .partial_cmp(&graph.scores[a])
                    .unwrap()
                    .then(graph.vertices[a].cmp(&graph.vertices[b]))
            });
            let mut taken: BTreeSet<usize> = BTreeSet::new();
            for v in order {
                let conflicts = adjacency
                    .get(&v)
                    .is_some_and(|ns| ns.iter().any(|u| taken.contains(u)));
                if !conflicts {
                    taken.insert(v);
                }
            }
            kept_indices.extend(taken);
        }
    }

    let mut removed = Vec::new();
    for v in 0..n {
        if kept_indices.contains(&v) {
            continue;
        }
        // Report the rule of one edge that doomed this vertex.
        let rule = adjacency
            .get(&v)
            .and_then(|ns| {
                ns.iter()
                    .find(|&&u| kept_indices.contains(&u))
                    .or_else(|| ns.iter().next())
            })
            .and_then(|&u| edge_rule.get(&(v.min(u), v.max(u))).copied())
            .unwrap_or(ConflictRule::FunctionalViolation);
        removed.push(RemovedTriple {
            triple: graph.vertices[v],
            score: graph.scores[v],
            rule,
        });
    }
    Resolution {
        kept: kept_indices.iter().map(|&v| graph.vertices[v]).collect(),
        removed,
        flags,
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Synthesis {
    /// Ranked answer entity names.
    pub answers: Vec<String>,
    pub text: String,
    pub flags: Vec<String>,
}

/// Builds the final answer. Ranked answer entities always come from the
/// deterministic extraction over the clean triples; live mode additionally
/// asks the head model for the prose and falls back to the extraction text
/// when the gateway fails.
pub fn synthesize(
    tri_clean: &BTreeSet<Triple>,
    scores: &BTreeMap<Triple, f64>,
    et_all: &str,
    plan: &RetrievalPlan,
    q_new: &QuestionRecord,
    kg: &KnowledgeGraph,
    gateway: &LlmGateway,
) -> Synthesis {
    let answers = extract_answers(tri_clean, scores, plan, q_new, kg);
    let mut flags = Vec::new();
    let fallback_text = if answers.is_empty() {
        flags.push("no-evidence".to_string());
        "unknown".to_string()
    } else {
        answers.join("; ")
    };
    let text = if gateway.provider() == Provider::Http {
        let mut lines: Vec<String> = tri_clean.iter().map(|t| kg.display_triple(t)).collect();
        lines.sort_unstable();
        let filled = PromptTemplate::for_role(Role::HeadAgent).fill(&BTreeMap::from([
            ("T_clean", lines.join("\n")),
            ("E_all", et_all.to_string()),
            ("q_new", q_new.raw.clone()),
        ]));
        match filled.and_then(|prompt| gateway.complete(Role::HeadAgent, &prompt)) {
            Ok(answer) => answer,
            Err(e) => {
                flags.push(format!("head synthesis degraded: {e}"));
                fallback_text
            }
        }
    } else {
        fallback_text
    };
    Synthesis {
        answers,
        text,
        flags,
    }
}

/// Deterministic answer extraction: entities on the expected answer side of
/// clean triples matching the expected relation and type, reachable from the
/// plan's anchors inside the clean set, excluding the question's own
/// entities. Ranked by score, then name.
fn extract_answers(
    tri_clean: &BTreeSet<Triple>,
    scores: &BTreeMap<Triple, f64>,
    plan: &RetrievalPlan,
    q_new: &QuestionRecord,
    kg: &KnowledgeGraph,
) -> Vec<String> {
    let Some(expected) = plan.expected else {
        return Vec::new();
    };
    let linked: BTreeSet<_> = q_new.linked_entities().into_iter().collect();
    let mut anchors: BTreeSet<_> = linked.clone();
    for a in &plan.assignments {
        anchors.extend(a.subquestion.anchors.iter().copied());
    }

    // Connectivity over the clean triples filters out facts that type-level
    // retrieval pulled in without any link to the question.
    let reachable = if anchors.is_empty() {
        None
    } else {
        let mut adjacency: BTreeMap<_, Vec<_>> = BTreeMap::new();
        for t in tri_clean {
            adjacency.entry(t.head).or_default().push(t.tail);
            adjacency.entry(t.tail).or_default().push(t.head);
        }
        let mut seen = anchors.clone();
        let mut stack: Vec<_> = anchors.iter().copied().collect();
        while let Some(e) = stack.pop() {
            if let Some(neighbors) = adjacency.get(&e) {
                for &u in neighbors {
                    if seen.insert(u) {
                        stack.push(u);
                    }
                }
            }
        }
        Some(seen)
    };

    let mut ranked: BTreeMap<String, f64> = BTreeMap::new();
    for t in tri_clean {
        if let Some(relation) = expected.relation {
            if t.relation != relation {
                continue;
            }
        }
        let candidate = if expected.answer_on_head { t.head } else { t.tail };
        if kg.type_of(candidate) != expected.answer_type || linked.contains(&candidate) {
            continue;
        }
        if let Some(reachable) = &reachable {
            if !reachable.contains(&candidate) {
                continue;
            }
        }
        let s = scores.get(t).copied().unwrap_or(0.0);
        let name = kg.entity_name(candidate).to_string();
        let entry = ranked.entry(name).or_insert(f64::NEG_INFINITY);
        if s > *entry {
            *entry = s;
        }
    }
    let mut out: Vec<(String, f64)> = ranked.into_iter().collect();
    out.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    out.into_iter().map(|(name, _)| name).collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FusionResult {
    pub tri_all: BTreeSet<Triple>,
    pub et_all: String,
    pub tri_clean: BTreeSet<Triple>,
    pub conflict_edges: Vec<(Triple, Triple, ConflictRule)>,
    pub removed: Vec<RemovedTriple>,
    pub answers: Vec<String>,
    pub answer_text: String,
    pub flags: Vec<String>,
}

/// Aggregation, conflict handling and synthesis in one pass. With conflict
/// detection disabled (ablation) the aggregate flows to synthesis untouched.
pub fn fuse(
    results: &[RetrievalResult],
    plan: &RetrievalPlan,
    q_new: &QuestionRecord,
    kg: &KnowledgeGraph,
    gateway: &LlmGateway,
    cfg: &FusionConfig,
) -> Result<FusionResult> {
    let aggregate = aggregate(results, &plan.confidence)?;
    let mut flags = aggregate.flags.clone();
    let (tri_clean, conflict_edges, removed) = if cfg.enable_conflict_detection {
        let graph = detect_conflicts(&aggregate.tri_all, &aggregate.scores, kg);
        let edges = graph
            .edges
            .iter()
            .map(|&(i, j, rule)| (graph.vertices[i], graph.vertices[j], rule))
            .collect();
        let resolution = resolve(&graph);
        flags.extend(resolution.flags.clone());
        (resolution.kept, edges, resolution.removed)
    } else {
        flags.push("conflict detection disabled".to_string());
        (aggregate.tri_all.clone(), Vec::new(), Vec::new())
    };
    let synthesis = synthesize(
        &tri_clean,
        &aggregate.scores,
        &aggregate.et_all,
        plan,
        q_new,
        kg,
        gateway,
    );
    flags.extend(synthesis.flags);
    Ok(FusionResult {
        tri_all: aggregate.tri_all,
        et_all: aggregate.et_all,
        tri_clean,
        conflict_edges,
        removed,
        answers: synthesis.answers,
        answer_text: synthesis.text,
        flags,
    })
}
