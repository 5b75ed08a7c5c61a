//! Subgraph-to-agent allocation.
//!
//! An association matrix links training questions to the subgraphs that fully
//! contain their reasoning paths. Questions are then consumed in descending
//! coverage density; each question's uncovered subgraphs become one agent
//! group, capped at `n_max` members and admitted only when the group's
//! signature coherence clears `theta_coh`. Subgraphs left over at the end are
//! attached to the signature-nearest group with spare room, or opened as new
//! groups when everything is full.

use std::collections::BTreeMap;
use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SplitRagError};
use crate::kg::{KnowledgeGraph, RelationId, TypeId};
use crate::partition::{signature_cosine, Partition, SubgraphId};
use crate::question::QuestionBase;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct AllocationConfig {
    /// Maximum subgraphs per agent.
    pub n_max: usize,
    /// Minimum mean signature coherence for a committed group.
    pub theta_coh: f64,
}

impl Default for AllocationConfig {
    fn default() -> Self {
        AllocationConfig {
            n_max: 5,
            theta_coh: 0.3,
        }
    }
}

impl AllocationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_max == 0 {
            return Err(SplitRagError::InvalidConfig("n_max must be at least 1".to_string()));
        }
        if !(0.0..=1.0).contains(&self.theta_coh) {
            return Err(SplitRagError::InvalidConfig(format!(
                "theta_coh must lie in [0, 1], got {}",
                self.theta_coh
            )));
        }
        Ok(())
    }
}

/// One matrix row: the share of a question's paths owned by each subgraph.
/// A path counts toward the lowest-id subgraph that fully contains it, so the
/// row sums to at most 1 (strictly less when some path fits nowhere).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AssociationRow {
    pub record: usize,
    pub path_count: usize,
    pub contained_paths: usize,
    pub weights: BTreeMap<SubgraphId, f64>,
}

impl AssociationRow {
    pub fn coverage(&self) -> BTreeSet<SubgraphId> {
        self.weights.keys().copied().collect()
    }

    pub fn row_sum(&self) -> f64 {
        self.weights.values().sum()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AssociationMatrix {
    pub rows: Vec<AssociationRow>,
}

pub fn association_matrix(base: &QuestionBase, partition: &Partition) -> AssociationMatrix {
    let rows = base
        .records()
        .iter()
        .enumerate()
        .map(|(record, rec)| {
            let mut counts: BTreeMap<SubgraphId, usize> = BTreeMap::new();
            let mut contained_paths = 0;
            for path in &rec.paths {
                let triples = path.triples();
                let owner = partition
                    .subgraphs
                    .iter()
                    .find(|sg| sg.contains_triples(&triples))
                    .map(|sg| sg.id);
                if let Some(owner) = owner {
                    *counts.entry(owner).or_insert(0) += 1;
                    contained_paths += 1;
                }
            }
            let path_count = rec.paths.len();
            let weights = counts
                .into_iter()
                .map(|(id, c)| (id, c as f64 / path_count as f64))
                .collect();
            AssociationRow {
                record,
                path_count,
                contained_paths,
                weights,
            }
        })
        .collect();
    AssociationMatrix { rows }
}

/// Coverage density of one question against a set of peers:
/// `sum_j |C_i ∩ C_j| / sqrt(|C_i|)` with `j` ranging over `peers`
/// (including `i` itself when present).
fn coverage_density(
    i: usize,
    rows: &[AssociationRow],
    peers: &BTreeSet<usize>,
) -> f64 {
    let c_i = rows[i].coverage();
    if c_i.is_empty() {
        return 0.0;
    }
    let overlap: usize = peers
        .iter()
        .map(|&j| rows[j].coverage().intersection(&c_i).count())
        .sum();
    overlap as f64 / (c_i.len() as f64).sqrt()
}

/// Mean cosine between each member's signature and the group centroid.
pub fn group_coherence(
    members: &[SubgraphId],
    partition: &Partition,
    kg: &KnowledgeGraph,
) -> f64 {
    if members.is_empty() {
        return 0.0;
    }
    let signatures: Vec<BTreeMap<(TypeId, RelationId), f64>> = members
        .iter()
        .map(|&id| {
            partition
                .subgraph(id)
                .map(|sg| sg.signature(kg))
                .unwrap_or_default()
        })
        .collect();
    let mut centroid: BTreeMap<(TypeId, RelationId), f64> = BTreeMap::new();
    for sig in &signatures {
        for (k, v) in sig {
            *centroid.entry(*k).or_insert(0.0) += v;
        }
    }
    let n = members.len() as f64;
    for v in centroid.values_mut() {
        *v /= n;
    }
    signatures
        .iter()
        .map(|sig| signature_cosine(sig, &centroid))
        .sum::<f64>()
        / n
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AgentGroup {
    pub id: u32,
    pub subgraphs: Vec<SubgraphId>,
    pub coherence: f64,
    /// Question record id that seeded the group, if any.
    pub seed_question: Option<String>,
    pub from_leftovers: bool,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct AllocationAudit {
    /// Questions rejected because their candidate group fell below theta_coh.
    pub skipped_questions: Vec<String>,
    /// Questions whose coverage was already fully assigned when popped.
    pub satisfied_without_commit: Vec<String>,
    /// Subgraphs placed by the fallback pass.
    pub leftover_subgraphs: Vec<SubgraphId>,
    /// Groups ending below theta_coh after fallback placement.
    pub coherence_violations: Vec<u32>,
    /// Training questions whose coverage spans more than one agent.
    pub questions_split_across_groups: usize,
    /// Sum over questions of the distinct agents their coverage touches.
    pub total_group_touches: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Allocation {
    pub groups: Vec<AgentGroup>,
    pub owner: BTreeMap<SubgraphId, u32>,
    pub audit: AllocationAudit,
}

impl Allocation {
    pub fn agent_of(&self, sg: SubgraphId) -> Option<u32> {
        self.owner.get(&sg).copied()
    }

    pub fn group(&self, id: u32) -> Option<&AgentGroup> {
        self.groups.iter().find(|g| g.id == id)
    }

    pub fn agent_count(&self) -> usize {
        self.groups.len()
    }

    pub fn agent_ids(&self) -> Vec<u32> {
        self.groups.iter().map(|g| g.id).collect()
    }
}

pub fn allocate(
    base: &QuestionBase,
    partition: &Partition,
    kg: &KnowledgeGraph,
    cfg: &AllocationConfig,
) -> Result<Allocation> {
    cfg.validate()?;
    let matrix = association_matrix(base, partition);
    let rows = &matrix.rows;

    let mut remaining: BTreeSet<usize> = rows
        .iter()
        .filter(|r| !r.weights.is_empty())
        .map(|r| r.record)
        .collect();
    let mut assigned: BTreeSet<SubgraphId> = BTreeSet::new();
    let mut groups: Vec<AgentGroup> = Vec::new();
    let mut audit = AllocationAudit::default();

    while !remaining.is_empty() {
        let picked = remaining
            .iter()
            .copied()
            .map(|i| (coverage_density(i, rows, &remaining), i))
            .fold(None::<(f64, usize)>, |best, cur| match best {
                None => Some(cur),
                Some(b) if cur.0 > b.0 => Some(cur),
                Some(b) => Some(b),
            })
            .map(|(_, i)| i)
            .expect("remaining is non-empty");
        remaining.remove(&picked);
        let question_id = base.record(picked).id.clone();

        let mut candidate: Vec<SubgraphId> = rows[picked]
            .coverage()
            .difference(&assigned)
            .copied()
            .collect();
        if candidate.is_empty() {
            audit.satisfied_without_commit.push(question_id);
            continue;
        }
        if candidate.len() > cfg.n_max {
            // Keep the subgraphs most shared across the remaining questions.
            let freq = |sg: SubgraphId| {
                remaining
                    .iter()
                    .filter(|&&j| rows[j].weights.contains_key(&sg))
                    .count()
            };
            candidate.sort_by_key(|&sg| (std::cmp::Reverse(freq(sg)), sg));
            candidate.truncate(cfg.n_max);
            candidate.sort_unstable();
        }
        let coherence = group_coherence(&candidate, partition, kg);
        if coherence < cfg.theta_coh {
            audit.skipped_questions.push(question_id);
            continue;
        }
        assigned.extend(candidate.iter().copied());
        groups.push(AgentGroup {
            id: groups.len() as u32,
            subgraphs: candidate,
            coherence,
            seed_question: Some(question_id),
            from_leftovers: false,
        });
        remaining.retain(|&i| !rows[i].coverage().is_subset(&assigned));
    }

    // Fallback pass: orphaned subgraphs join the signature-nearest group
    // with spare room, or open a new group when everything is full.
    let leftovers: Vec<SubgraphId> = partition
        .ids()
        .into_iter()
        .filter(|id| !assigned.contains(id))
        .collect();
    for leftover in leftovers {
        audit.leftover_subgraphs.push(leftover);
        let sig = partition
            .subgraph(leftover)
            .map(|sg| sg.signature(kg))
            .unwrap_or_default();
        let mut best: Option<(f64, usize)> = None;
        for (gi, group) in groups.iter().enumerate() {
            if group.subgraphs.len() >= cfg.n_max {
                continue;
            }
            let mut centroid: BTreeMap<(TypeId, RelationId), f64> = BTreeMap::new();
            for &member in &group.subgraphs {
                if let Some(sg) = partition.subgraph(member) {
                    for (k, v) in sg.signature(kg) {
                        *centroid.entry(k).or_insert(0.0) += v;
                    }
                }
            }
            let score = signature_cosine(&sig, &centroid);
            let replace = match best {
                None => true,
                Some((best_score, _)) => score > best_score,
            };
            if replace {
                best = Some((score, gi));
            }
        }
        match best {
            Some((_, gi)) => {
                groups[gi].subgraphs.push(leftover);
                groups[gi].subgraphs.sort_unstable();
                groups[gi].coherence = group_coherence(&groups[gi].subgraphs, partition, kg);
            }
            None => {
                let id = groups.len() as u32;
                groups.push(AgentGroup {
                    id,
                    subgraphs: vec![leftover],
                    coherence: 1.0,
                    seed_question: None,
                    from_leftovers: true,
                });
            }
        }
    }

    audit.coherence_violations = groups
        .iter()
        .filter(|g| g.coherence < cfg.theta_coh)
        .map(|g| g.id)
        .collect();

    let mut owner = BTreeMap::new();
    for group in &groups {
        for &sg in &group.subgraphs {
            owner.insert(sg, group.id);
        }
    }

    for row in rows {
        if row.weights.is_empty() {
            continue;
        }
        let touched: BTreeSet<u32> = row
            .weights
            .keys()
            .filter_map(|sg| owner.get(sg).copied())
            .collect();
        audit.total_group_touches += touched.len();
        if touched.len() > 1 {
            audit.questions_split_across_groups += 1;
        }
    }

    Ok(Allocation {
        groups,
        owner,
        audit,
    })
}
