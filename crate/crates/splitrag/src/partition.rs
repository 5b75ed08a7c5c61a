//! Question-aligned graph partitioning.
//!
//! Training paths are split into 1..2-hop segments; segments with the same
//! direction-normalized type/relation shape that touch common entities seed a
//! candidate subgraph. Candidates are then merged greedily while the merge
//! improves the partition objective:
//!
//! ```text
//! IG(S) = sum_i [ H(P | s_i) - lambda * H(s_i) ]
//! H(P | s_i) = -sum_j P(seg_j | s_i) ln P(seg_j | s_i)
//! H(s_i)     = (|V_si| / |V|) ln (|V| / |V_si|)
//! ```
//!
//! The conditional-entropy term enters with the sign as printed; because the
//! orientation is debatable, `entropy_sign` can flip it. Merges never create
//! subgraphs above `eta_max` or join candidates without a shared entity, and
//! after merging, subgraphs below `tau_min` entities are absorbed into an
//! overlapping neighbor when capacity allows.

use std::collections::BTreeMap;
use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SplitRagError};
use crate::kg::{EntityId, KnowledgeGraph, PathSegment, RelationId, SegmentPattern, Triple, TypeId};
use crate::question::QuestionBase;

#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default,
)]
#[serde(transparent)]
pub struct SubgraphId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum EntropySign {
    #[default]
    Printed,
    Negated,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct PartitionConfig {
    pub lambda: f64,
    /// Hard subgraph size cap; defaults to `ceil(|V| / 4)` when unset.
    pub eta_max: Option<usize>,
    pub theta_merge: f64,
    pub t_max: usize,
    pub tau_min: usize,
    pub entropy_sign: EntropySign,
}

impl Default for PartitionConfig {
    fn default() -> Self {
        PartitionConfig {
            lambda: 0.5,
            eta_max: None,
            theta_merge: 0.0,
            t_max: 1000,
            tau_min: 3,
            entropy_sign: EntropySign::Printed,
        }
    }
}

impl PartitionConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.lambda.is_finite() || self.lambda < 0.0 {
            return Err(SplitRagError::InvalidConfig(format!(
                "lambda must be finite and non-negative, got {}",
                self.lambda
            )));
        }
        if !self.theta_merge.is_finite() {
            return Err(SplitRagError::InvalidConfig(
                "theta_merge must be finite".to_string(),
            ));
        }
        if self.t_max == 0 {
            return Err(SplitRagError::InvalidConfig("t_max must be at least 1".to_string()));
        }
        if self.tau_min == 0 {
            return Err(SplitRagError::InvalidConfig("tau_min must be at least 1".to_string()));
        }
        if let Some(eta) = self.eta_max {
            if eta < 2 {
                return Err(SplitRagError::InvalidConfig(format!(
                    "eta_max must be at least 2, got {eta}"
                )));
            }
        }
        Ok(())
    }

    pub fn resolved_eta_max(&self, entity_count: usize) -> usize {
        self.eta_max
            .unwrap_or_else(|| entity_count.div_ceil(4))
            .max(2)
    }
}

/// The training segment multiset: every 1..2-hop segment of every path in the
/// base, with multiplicity.
#[derive(Debug, Clone, Default)]
pub struct SegmentPool {
    pub segments: Vec<PooledSegment>,
}

#[derive(Debug, Clone)]
pub struct PooledSegment {
    pub segment: PathSegment,
    pub count: usize,
    pub entities: BTreeSet<EntityId>,
    pub triples: BTreeSet<Triple>,
    pub pattern: SegmentPattern,
}

impl SegmentPool {
    pub fn from_base(base: &QuestionBase, kg: &KnowledgeGraph) -> SegmentPool {
        let mut counts: BTreeMap<PathSegment, usize> = BTreeMap::new();
        for record in base.records() {
            for path in &record.paths {
                for segment in path.split_into_segments() {
                    *counts.entry(segment).or_insert(0) += 1;
                }
            }
        }
        let segments = counts
            .into_iter()
            .map(|(segment, count)| {
                let entities = segment.entity_set();
                let triples: BTreeSet<Triple> = segment.triples().into_iter().collect();
                let pattern = segment.pattern(kg).canonical();
                PooledSegment {
                    segment,
                    count,
                    entities,
                    triples,
                    pattern,
                }
            })
            .collect();
        SegmentPool { segments }
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    /// Multiset of pooled segments whose triples all lie inside `triples`.
    pub fn contained_in(&self, triples: &BTreeSet<Triple>) -> BTreeMap<PathSegment, usize> {
        let mut support = BTreeMap::new();
        for pooled in &self.segments {
            if pooled.triples.iter().all(|t| triples.contains(t)) {
                support.insert(pooled.segment.clone(), pooled.count);
            }
        }
        support
    }
}

/// One partition member. `support` is the multiset of training segments fully
/// contained in the subgraph's triple set.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Subgraph {
    pub id: SubgraphId,
    pub entities: BTreeSet<EntityId>,
    pub triples: BTreeSet<Triple>,
    #[serde(with = "support_pairs")]
    pub support: BTreeMap<PathSegment, usize>,
}

/// JSON objects key on strings, so the support multiset travels as pairs.
mod support_pairs {
    use super::*;
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(
        map: &BTreeMap<PathSegment, usize>,
        serializer: S,
    ) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_seq(map.iter())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(
        deserializer: D,
    ) -> std::result::Result<BTreeMap<PathSegment, usize>, D::Error> {
        let pairs: Vec<(PathSegment, usize)> = serde::Deserialize::deserialize(deserializer)?;
        Ok(pairs.into_iter().collect())
    }
}

impl Subgraph {
    fn from_triples(
        id: SubgraphId,
        triples: BTreeSet<Triple>,
        pool: &SegmentPool,
    ) -> Subgraph {
        let mut entities = BTreeSet::new();
        for t in &triples {
            entities.insert(t.head);
            entities.insert(t.tail);
        }
        let support = pool.contained_in(&triples);
        Subgraph {
            id,
            entities,
            triples,
            support,
        }
    }

    pub fn support_size(&self) -> usize {
        self.support.values().sum()
    }

    pub fn size(&self) -> usize {
        self.entities.len()
    }

    /// Frequency signature over (entity type, relation) pairs, counting both
    /// endpoints of every triple.
    pub fn signature(&self, kg: &KnowledgeGraph) -> BTreeMap<(TypeId, RelationId), f64> {
        let mut sig = BTreeMap::new();
        for t in &self.triples {
            *sig.entry((kg.type_of(t.head), t.relation)).or_insert(0.0) += 1.0;
            *sig.entry((kg.type_of(t.tail), t.relation)).or_insert(0.0) += 1.0;
        }
        sig
    }

    /// Entity types present in the subgraph.
    pub fn type_set(&self, kg: &KnowledgeGraph) -> BTreeSet<TypeId> {
        self.entities.iter().map(|&e| kg.type_of(e)).collect()
    }

    /// Stored `(head type, relation, tail type)` shapes, used for type-level
    /// pattern matching.
    pub fn shape_set(&self, kg: &KnowledgeGraph) -> BTreeSet<(TypeId, RelationId, TypeId)> {
        self.triples
            .iter()
            .map(|t| (kg.type_of(t.head), t.relation, kg.type_of(t.tail)))
            .collect()
    }

    /// True when the entity set is connected through the triple set.
    pub fn is_connected(&self) -> bool {
        let Some(&first) = self.entities.iter().next() else {
            return true;
        };
        let mut adjacency: BTreeMap<EntityId, Vec<EntityId>> = BTreeMap::new();
        for t in &self.triples {
            adjacency.entry(t.head).or_default().push(t.tail);
            adjacency.entry(t.tail).or_default().push(t.head);
        }
        let mut seen = BTreeSet::from([first]);
        let mut stack = vec![first];
        while let Some(cur) = stack.pop() {
            if let Some(nexts) = adjacency.get(&cur) {
                for &n in nexts {
                    if seen.insert(n) {
                        stack.push(n);
                    }
                }
            }
        }
        seen.len() == self.entities.len()
    }

    pub fn contains_triples(&self, triples: &[Triple]) -> bool {
        triples.iter().all(|t| self.triples.contains(t))
    }
}

/// Cosine over two signatures; 0 when either is empty.
pub fn signature_cosine(
    a: &BTreeMap<(TypeId, RelationId), f64>,
    b: &BTreeMap<(TypeId, RelationId), f64>,
) -> f64 {
    let dot: f64 = a
        .iter()
        .filter_map(|(k, va)| b.get(k).map(|vb| va * vb))
        .sum();
    let na: f64 = a.values().map(|v| v * v).sum::<f64>().sqrt();
    let nb: f64 = b.values().map(|v| v * v).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot / (na * nb)).clamp(-1.0, 1.0)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SubgraphIg {
    pub id: SubgraphId,
    pub conditional_entropy: f64,
    pub size_penalty: f64,
    pub contribution: f64,
    pub support_size: usize,
    pub distinct_segments: usize,
    pub entity_count: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IgReport {
    pub per_subgraph: Vec<SubgraphIg>,
    pub total: f64,
    pub lambda: f64,
    pub entropy_sign: EntropySign,
    pub warnings: Vec<String>,
}

fn subgraph_ig(sg: &Subgraph, total_entities: usize, cfg: &PartitionConfig) -> (SubgraphIg, Option<String>) {
    let support_size = sg.support_size();
    let mut warning = None;
    let conditional_entropy = if support_size == 0 {
        warning = Some(format!(
            "subgraph {} has empty segment support; conditional entropy treated as 0",
            sg.id.0
        ));
        0.0
    } else {
        let total = support_size as f64;
        let mut h = 0.0;
        for &count in sg.support.values() {
            let p = count as f64 / total;
            h -= p * p.ln();
        }
        h
    };
    let v_s = sg.size() as f64;
    let v = total_entities as f64;
    let size_penalty = if v_s <= 0.0 || v <= 0.0 {
        0.0
    } else {
        (v_s / v) * (v / v_s).ln()
    };
    let signed = match cfg.entropy_sign {
        EntropySign::Printed => conditional_entropy,
        EntropySign::Negated => -conditional_entropy,
    };
    let contribution = signed - cfg.lambda * size_penalty;
    (
        SubgraphIg {
            id: sg.id,
            conditional_entropy,
            size_penalty,
            contribution,
            support_size,
            distinct_segments: sg.support.len(),
            entity_count: sg.size(),
        },
        warning,
    )
}

/// Evaluates the partition objective over a subgraph set.
pub fn information_gain(
    subgraphs: &[Subgraph],
    kg: &KnowledgeGraph,
    cfg: &PartitionConfig,
) -> IgReport {
    let mut per_subgraph = Vec::with_capacity(subgraphs.len());
    let mut warnings = Vec::new();
    let mut total = 0.0;
    for sg in subgraphs {
        let (ig, warning) = subgraph_ig(sg, kg.entity_count(), cfg);
        total += ig.contribution;
        per_subgraph.push(ig);
        if let Some(w) = warning {
            warnings.push(w);
        }
    }
    IgReport {
        per_subgraph,
        total,
        lambda: cfg.lambda,
        entropy_sign: cfg.entropy_sign,
        warnings,
    }
}

/// Seeds candidate subgraphs from the base's path segments.
///
/// Segments sharing a direction-normalized pattern are grouped; each
/// entity-connected component of a group becomes one candidate. Components
/// larger than `eta_max` are split into connected chunks under the cap.
pub fn seed_candidates(
    base: &QuestionBase,
    kg: &KnowledgeGraph,
    cfg: &PartitionConfig,
) -> Result<(Vec<Subgraph>, SegmentPool)> {
    cfg.validate()?;
    let pool = SegmentPool::from_base(base, kg);
    if pool.is_empty() {
        return Err(SplitRagError::Partition(
            "no path annotations in the question base".to_string(),
        ));
    }
    let eta_max = cfg.resolved_eta_max(kg.entity_count());

    let mut groups: BTreeMap<SegmentPattern, Vec<usize>> = BTreeMap::new();
    for (idx, pooled) in pool.segments.iter().enumerate() {
        groups.entry(pooled.pattern.clone()).or_default().push(idx);
    }

    let mut subgraphs = Vec::new();
    for (_, members) in groups {
        for component in connected_components(&members, &pool) {
            for chunk in chunk_component(&component, &pool, eta_max)? {
                let mut triples = BTreeSet::new();
                for &seg_idx in &chunk {
                    triples.extend(pool.segments[seg_idx].triples.iter().copied());
                }
                let id = SubgraphId(subgraphs.len() as u32);
                subgraphs.push(Subgraph::from_triples(id, triples, &pool));
            }
        }
    }
    Ok((subgraphs, pool))
}

/// Entity-connected components of a pattern group, each sorted ascending.
fn connected_components(members: &[usize], pool: &SegmentPool) -> Vec<Vec<usize>> {
    let mut entity_to_segs: BTreeMap<EntityId, Vec<usize>> = BTreeMap::new();
    for &idx in members {
        for &e in &pool.segments[idx].entities {
            entity_to_segs.entry(e).or_default().push(idx);
        }
    }
    let mut assigned: BTreeSet<usize> = BTreeSet::new();
    let mut components = Vec::new();
    for &start in members {
        if assigned.contains(&start) {
            continue;
        }
        let mut component = Vec::new();
        let mut stack = vec![start];
        assigned.insert(start);
        while let Some(cur) = stack.pop() {
            component.push(cur);
            for &e in &pool.segments[cur].entities {
                for &other in &entity_to_segs[&e] {
                    if assigned.insert(other) {
                        stack.push(other);
                    }
                }
            }
        }
        component.sort_unstable();
        components.push(component);
    }
    components
}

/// Splits one component into connected chunks whose entity unions stay within
/// `eta_max`.
fn chunk_component(
    component: &[usize],
    pool: &SegmentPool,
    eta_max: usize,
) -> Result<Vec<Vec<usize>>> {
    let mut chunks = Vec::new();
    let mut unassigned: BTreeSet<usize> = component.iter().copied().collect();
    while let Some(&first) = unassigned.iter().next() {
        unassigned.remove(&first);
        if pool.segments[first].entities.len() > eta_max {
            return Err(SplitRagError::Partition(format!(
                "eta_max {eta_max} is smaller than a single segment of {} entities",
                pool.segments[first].entities.len()
            )));
        }
        let mut chunk = vec![first];
        let mut entities: BTreeSet<EntityId> = pool.segments[first].entities.clone();
        loop {
            let next = unassigned.iter().copied().find(|&idx| {
                let seg = &pool.segments[idx];
                let shares = seg.entities.iter().any(|e| entities.contains(e));
                if !shares {
                    return false;
                }
                let added = seg.entities.iter().filter(|e| !entities.contains(e)).count();
                entities.len() + added <= eta_max
            });
            match next {
                Some(idx) => {
                    unassigned.remove(&idx);
                    entities.extend(pool.segments[idx].entities.iter().copied());
                    chunk.push(idx);
                }
                None => break,
            }
        }
        chunks.push(chunk);
    }
    Ok(chunks)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MergeEvent {
    pub round: usize,
    pub kept: SubgraphId,
    pub absorbed: SubgraphId,
    pub delta: f64,
    pub ig_merged: f64,
    pub ig_kept_before: f64,
    pub ig_absorbed_before: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AbsorbEvent {
    pub small: SubgraphId,
    pub into: SubgraphId,
    pub delta: f64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct MergeLog {
    pub merges: Vec<MergeEvent>,
    pub absorptions: Vec<AbsorbEvent>,
    pub rounds: usize,
    /// Subgraphs below `tau_min` left standalone because no overlapping
    /// neighbor could take them within the size cap.
    pub standalone_small: Vec<SubgraphId>,
}

struct MergeState<'a> {
    subgraphs: BTreeMap<SubgraphId, Subgraph>,
    ig: BTreeMap<SubgraphId, f64>,
    pool: &'a SegmentPool,
    kg: &'a KnowledgeGraph,
    cfg: &'a PartitionConfig,
    eta_max: usize,
}

impl<'a> MergeState<'a> {
    fn union_candidate(&self, a: SubgraphId, b: SubgraphId) -> Subgraph {
        let sa = &self.subgraphs[&a];
        let sb = &self.subgraphs[&b];
        let mut triples = sa.triples.clone();
        triples.extend(sb.triples.iter().copied());
        Subgraph::from_triples(a.min(b), triples, self.pool)
    }

    fn delta(&self, a: SubgraphId, b: SubgraphId) -> (f64, f64) {
        let merged = self.union_candidate(a, b);
        let (ig_merged, _) = subgraph_ig(&merged, self.kg.entity_count(), self.cfg);
        let delta = ig_merged.contribution - self.ig[&a] - self.ig[&b];
        (delta, ig_merged.contribution)
    }

    fn overlaps(&self, a: SubgraphId, b: SubgraphId) -> bool {
        let sa = &self.subgraphs[&a];
        let sb = &self.subgraphs[&b];
        let (small, large) = if sa.entities.len() <= sb.entities.len() {
            (sa, sb)
        } else {
            (sb, sa)
        };
        small.entities.iter().any(|e| large.entities.contains(e))
    }

    fn union_size(&self, a: SubgraphId, b: SubgraphId) -> usize {
        let sa = &self.subgraphs[&a];
        let sb = &self.subgraphs[&b];
        sa.entities.union(&sb.entities).count()
    }
}

/// Greedy pairwise merging under the objective, followed by small-subgraph
/// absorption. Returns the final subgraphs (ascending id) and the event log.
pub fn greedy_merge(
    seeds: Vec<Subgraph>,
    pool: &SegmentPool,
    kg: &KnowledgeGraph,
    cfg: &PartitionConfig,
) -> Result<(Vec<Subgraph>, MergeLog)> {
    cfg.validate()?;
    let eta_max = cfg.resolved_eta_max(kg.entity_count());
    for seed in &seeds {
        if seed.size() > eta_max {
            return Err(SplitRagError::Partition(format!(
                "seed subgraph {} exceeds eta_max ({} > {eta_max})",
                seed.id.0,
                seed.size()
            )));
        }
    }

    let mut state = MergeState {
        subgraphs: seeds.into_iter().map(|s| (s.id, s)).collect(),
        ig: BTreeMap::new(),
        pool,
        kg,
        cfg,
        eta_max,
    };
    for (id, sg) in &state.subgraphs {
        let (ig, _) = subgraph_ig(sg, kg.entity_count(), cfg);
        state.ig.insert(*id, ig.contribution);
    }

    let mut log = MergeLog::default();
    // Pair deltas survive across rounds until one endpoint changes.
    let mut delta_cache: BTreeMap<(SubgraphId, SubgraphId), (f64, f64)> = BTreeMap::new();

    for round in 1..=cfg.t_max {
        let ids: Vec<SubgraphId> = state.subgraphs.keys().copied().collect();
        let mut best: Option<(f64, SubgraphId, SubgraphId, f64)> = None;
        for (i, &a) in ids.iter().enumerate() {
            for &b in &ids[i + 1..] {
                if !state.overlaps(a, b) || state.union_size(a, b) > eta_max {
                    continue;
                }
                let (delta, ig_merged) = *delta_cache
                    .entry((a, b))
                    .or_insert_with(|| state.delta(a, b));
                let replace = match &best {
                    None => true,
                    Some((best_delta, ..)) => delta > *best_delta,
                };
                if replace {
                    best = Some((delta, a, b, ig_merged));
                }
            }
        }
        log.rounds = round;
        match best {
            Some((delta, a, b, ig_merged)) if delta > cfg.theta_merge => {
                let merged = state.union_candidate(a, b);
                let kept = merged.id;
                let absorbed = if kept == a { b } else { a };
                log.merges.push(MergeEvent {
                    round,
                    kept,
                    absorbed,
                    delta,
                    ig_merged,
                    ig_kept_before: state.ig[&a.min(b)],
                    ig_absorbed_before: state.ig[&a.max(b)],
                });
                state.subgraphs.remove(&a);
                state.subgraphs.remove(&b);
                state.ig.remove(&a);
                state.ig.remove(&b);
                delta_cache.retain(|(x, y), _| *x != a && *x != b && *y != a && *y != b);
                state.ig.insert(kept, ig_merged);
                state.subgraphs.insert(kept, merged);
            }
            _ => break,
        }
    }

    absorb_small(&mut state, &mut log);

    let finals: Vec<Subgraph> = state.subgraphs.into_values().collect();
    Ok((finals, log))
}

/// Folds subgraphs below `tau_min` into the overlapping neighbor with the
/// best delta, capacity permitting. Subgraphs with no viable neighbor stay
/// standalone so connectivity is never broken.
fn absorb_small(state: &mut MergeState, log: &mut MergeLog) {
    loop {
        if state.subgraphs.len() <= 1 {
            break;
        }
        let smalls: Vec<SubgraphId> = state
            .subgraphs
            .iter()
            .filter(|(_, sg)| sg.size() < state.cfg.tau_min)
            .map(|(id, _)| *id)
            .collect();
        let mut moved = false;
        'next_small: for small in smalls {
            if !state.subgraphs.contains_key(&small) || state.subgraphs.len() <= 1 {
                continue;
            }
            let ids: Vec<SubgraphId> = state.subgraphs.keys().copied().collect();
            let mut best: Option<(f64, SubgraphId)> = None;
            for other in ids {
                if other == small
                    || !state.overlaps(small, other)
                    || state.union_size(small, other) > state.eta_max
                {
                    continue;
                }
                let (delta, _) = state.delta(small, other);
                let replace = match &best {
                    None => true,
                    Some((best_delta, _)) => delta > *best_delta,
                };
                if replace {
                    best = Some((delta, other));
                }
            }
            if let Some((delta, host)) = best {
                let merged = state.union_candidate(host, small);
                let (ig_merged, _) = subgraph_ig(&merged, state.kg.entity_count(), state.cfg);
                // The grown subgraph keeps the host's identity.
                let mut merged = merged;
                merged.id = host;
                state.subgraphs.remove(&small);
                state.ig.remove(&small);
                state.ig.insert(host, ig_merged.contribution);
                state.subgraphs.insert(host, merged);
                log.absorptions.push(AbsorbEvent {
                    small,
                    into: host,
                    delta,
                });
                moved = true;
                break 'next_small;
            }
        }
        if !moved {
            break;
        }
    }
    log.standalone_small = state
        .subgraphs
        .iter()
        .filter(|(_, sg)| sg.size() < state.cfg.tau_min)
        .map(|(id, _)| *id)
        .collect();
}

/// Entity to owning-subgraph map plus boundary and uncovered sets.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ColorMap {
    pub colors: BTreeMap<EntityId, BTreeSet<SubgraphId>>,
    pub boundary: BTreeSet<EntityId>,
    pub uncovered: BTreeSet<EntityId>,
}

pub fn assign_colors(subgraphs: &[Subgraph], kg: &KnowledgeGraph) -> ColorMap {
    let mut colors: BTreeMap<EntityId, BTreeSet<SubgraphId>> = BTreeMap::new();
    for sg in subgraphs {
        for &e in &sg.entities {
            colors.entry(e).or_default().insert(sg.id);
        }
    }
    let boundary = colors
        .iter()
        .filter(|(_, owners)| owners.len() >= 2)
        .map(|(&e, _)| e)
        .collect();
    let uncovered = (0..kg.entity_count() as u32)
        .map(EntityId)
        .filter(|e| !colors.contains_key(e))
        .collect();
    ColorMap {
        colors,
        boundary,
        uncovered,
    }
}

/// A finished partition: final subgraphs ordered by id, entity colors and the
/// objective report.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(from = "PartitionData", into = "PartitionData")]
pub struct Partition {
    pub subgraphs: Vec<Subgraph>,
    pub colors: ColorMap,
    pub ig: IgReport,
    pub log: MergeLog,
    pub eta_max: usize,
    index: BTreeMap<SubgraphId, usize>,
}

#[derive(Serialize, Deserialize)]
struct PartitionData {
    subgraphs: Vec<Subgraph>,
    colors: ColorMap,
    ig: IgReport,
    log: MergeLog,
    eta_max: usize,
}

impl From<PartitionData> for Partition {
    fn from(data: PartitionData) -> Partition {
        let index = data
            .subgraphs
            .iter()
            .enumerate()
            .map(|(i, s)| (s.id, i))
            .collect();
        Partition {
            subgraphs: data.subgraphs,
            colors: data.colors,
            ig: data.ig,
            log: data.log,
            eta_max: data.eta_max,
            index,
        }
    }
}

impl From<Partition> for PartitionData {
    fn from(p: Partition) -> PartitionData {
        PartitionData {
            subgraphs: p.subgraphs,
            colors: p.colors,
            ig: p.ig,
            log: p.log,
            eta_max: p.eta_max,
        }
    }
}

impl Partition {
    pub fn from_subgraphs(
        mut subgraphs: Vec<Subgraph>,
        kg: &KnowledgeGraph,
        cfg: &PartitionConfig,
        log: MergeLog,
    ) -> Partition {
        subgraphs.sort_by_key(|s| s.id);
        let colors = assign_colors(&subgraphs, kg);
        let ig = information_gain(&subgraphs, kg, cfg);
        let index = subgraphs
            .iter()
            .enumerate()
            .map(|(i, s)| (s.id, i))
            .collect();
        Partition {
            subgraphs,
            colors,
            ig,
            log,
            eta_max: cfg.resolved_eta_max(kg.entity_count()),
            index,
        }
    }

    pub fn subgraph(&self, id: SubgraphId) -> Option<&Subgraph> {
        self.index.get(&id).map(|&i| &self.subgraphs[i])
    }

    pub fn ids(&self) -> Vec<SubgraphId> {
        self.subgraphs.iter().map(|s| s.id).collect()
    }

    /// Structural checks used by tests and the pipeline: size cap,
    /// connectivity and support consistency.
    pub fn validate(&self, kg: &KnowledgeGraph) -> Vec<String> {
        let mut problems = Vec::new();
        for sg in &self.subgraphs {
            if sg.size() > self.eta_max {
                problems.push(format!(
                    "subgraph {} has {} entities, above eta_max {}",
                    sg.id.0,
                    sg.size(),
                    self.eta_max
                ));
            }
            if !sg.is_connected() {
                problems.push(format!("subgraph {} is not connected", sg.id.0));
            }
            for t in &sg.triples {
                if !kg.contains_triple(t) {
                    problems.push(format!(
                        "subgraph {} holds a triple missing from the graph: {}",
                        sg.id.0,
                        kg.display_triple(t)
                    ));
                }
            }
            for segment in sg.support.keys() {
                if !sg.contains_triples(&segment.triples()) {
                    problems.push(format!(
                        "subgraph {} support lists a segment outside its triples",
                        sg.id.0
                    ));
                }
            }
        }
        problems
    }
}

/// Full partitioning pass: seed, merge, absorb, color.
pub fn partition(
    base: &QuestionBase,
    kg: &KnowledgeGraph,
    cfg: &PartitionConfig,
) -> Result<Partition> {
    let (seeds, pool) = seed_candidates(base, kg, cfg)?;
    let (subgraphs, log) = greedy_merge(seeds, &pool, kg, cfg)?;
    Ok(Partition::from_subgraphs(subgraphs, kg, cfg, log))
}
