//! Knowledge graph storage: typed entities, relation vocabulary, triples and
//! the indexes every later stage leans on.
//!
//! The graph is immutable once loaded. Entity and relation identifiers are
//! dense handles into vocabularies, assigned in first-appearance order of the
//! triples file so that identical inputs always produce identical ids.
//!
//! Reasoning paths and their 1..2-hop segments live here too, since both the
//! partitioner and the router speak in terms of them.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::path::Path as FsPath;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SplitRagError};

#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default,
)]
#[serde(transparent)]
pub struct EntityId(pub u32);

#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default,
)]
#[serde(transparent)]
pub struct RelationId(pub u32);

#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default,
)]
#[serde(transparent)]
pub struct TypeId(pub u32);

#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default,
)]
#[serde(transparent)]
pub struct TripleId(pub u32);

/// One stored fact. Directionality is part of the fact: `(head, relation, tail)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Triple {
    pub head: EntityId,
    pub relation: RelationId,
    pub tail: EntityId,
}

/// Domain schema resolved from the schema JSON file.
///
/// Relation-level declarations are kept by name because the relation
/// vocabulary is discovered from the triples file; names that never occur in
/// the data are simply inert.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Schema {
    pub entity_types: BTreeMap<String, String>,
    pub functional_relations: BTreeSet<String>,
    pub negation_pairs: Vec<(String, String)>,
    #[serde(default)]
    pub reflexive_relations: BTreeSet<String>,
}

/// Serde shape of the schema file. `reflexive_relations` is optional.
#[derive(Debug, Clone, Deserialize)]
struct SchemaFile {
    entity_types: BTreeMap<String, String>,
    #[serde(default)]
    functional_relations: Vec<String>,
    #[serde(default)]
    negation_pairs: Vec<(String, String)>,
    #[serde(default)]
    reflexive_relations: Vec<String>,
}

impl Schema {
    pub fn from_json(text: &str) -> Result<Schema> {
        let file: SchemaFile =
            serde_json::from_str(text).map_err(|e| SplitRagError::Serde(e.to_string()))?;
        Ok(Schema {
            entity_types: file.entity_types,
            functional_relations: file.functional_relations.into_iter().collect(),
            negation_pairs: file.negation_pairs,
            reflexive_relations: file.reflexive_relations.into_iter().collect(),
        })
    }
}

/// Counts and non-fatal findings from loading a graph.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LoadReport {
    pub entities: usize,
    pub relations: usize,
    pub triples: usize,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct KnowledgeGraph {
    entity_names: Vec<String>,
    entity_types: Vec<TypeId>,
    entity_index: HashMap<String, EntityId>,
    relation_names: Vec<String>,
    relation_index: HashMap<String, RelationId>,
    type_names: Vec<String>,
    type_index: HashMap<String, TypeId>,
    triples: Vec<Triple>,
    triple_index: HashMap<Triple, TripleId>,
    out_edges: Vec<Vec<(RelationId, EntityId, TripleId)>>,
    in_edges: Vec<Vec<(RelationId, EntityId, TripleId)>>,
    entities_by_type: BTreeMap<TypeId, Vec<EntityId>>,
    pair_index: BTreeMap<(EntityId, RelationId), Vec<EntityId>>,
    schema: Schema,
}

impl KnowledgeGraph {
    /// Loads a graph from a tab-separated triples file and a schema file.
    pub fn load(triples_path: &FsPath, schema_path: &FsPath) -> Result<(KnowledgeGraph, LoadReport)> {
        let triples_text = std::fs::read_to_string(triples_path)?;
        let schema_text = std::fs::read_to_string(schema_path)?;
        let schema = Schema::from_json(&schema_text)?;
        Self::from_text(&triples_text, schema)
    }

    /// Builds a graph from triples-file content and a parsed schema.
    ///
    /// Lines are `head<TAB>relation<TAB>tail`; `#` starts a comment line.
    /// Every entity must be typed in the schema. Duplicate triples are
    /// dropped with a warning. Self-loops are rejected unless the relation is
    /// declared reflexive. Schema entities that never occur in a triple are
    /// registered as isolated vertices.
    pub fn from_text(triples_text: &str, schema: Schema) -> Result<(KnowledgeGraph, LoadReport)> {
        let mut kg = KnowledgeGraph {
            entity_names: Vec::new(),
            entity_types: Vec::new(),
            entity_index: HashMap::new(),
            relation_names: Vec::new(),
            relation_index: HashMap::new(),
            type_names: Vec::new(),
            type_index: HashMap::new(),
            triples: Vec::new(),
            triple_index: HashMap::new(),
            out_edges: Vec::new(),
            in_edges: Vec::new(),
            entities_by_type: BTreeMap::new(),
            pair_index: BTreeMap::new(),
            schema,
        };
        let mut warnings = Vec::new();
        let mut seen: HashSet<(String, String, String)> = HashSet::new();

        for (idx, raw_line) in triples_text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw_line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = raw_line.split('\t').map(str::trim).collect();
            if fields.len() != 3 || fields.iter().any(|f| f.is_empty()) {
                return Err(SplitRagError::MalformedTriple {
                    line: line_no,
                    reason: format!("expected head<TAB>relation<TAB>tail, got {raw_line:?}"),
                });
            }
            let (head, relation, tail) = (fields[0], fields[1], fields[2]);
            if head == tail && !kg.schema.reflexive_relations.contains(relation) {
                return Err(SplitRagError::UndeclaredSelfLoop {
                    entity: head.to_string(),
                    relation: relation.to_string(),
                });
            }
            let key = (head.to_string(), relation.to_string(), tail.to_string());
            if !seen.insert(key) {
                warnings.push(format!("line {line_no}: duplicate triple skipped: {line}"));
                continue;
            }
            let h = kg.intern_entity(head)?;
            let t = kg.intern_entity(tail)?;
            let r = kg.intern_relation(relation);
            let id = TripleId(kg.triples.len() as u32);
            let triple = Triple {
                head: h,
                relation: r,
                tail: t,
            };
            kg.triples.push(triple);
            kg.triple_index.insert(triple, id);
            kg.out_edges[h.0 as usize].push((r, t, id));
            kg.in_edges[t.0 as usize].push((r, h, id));
            kg.pair_index.entry((h, r)).or_default().push(t);
        }

        if kg.triples.is_empty() {
            return Err(SplitRagError::EmptyGraph(
                "triples file contains no facts".to_string(),
            ));
        }

        // Schema entries without any triple become isolated vertices; register
        // them in name order so ids stay stable.
        let leftover: Vec<String> = kg
            .schema
            .entity_types
            .keys()
            .filter(|name| !kg.entity_index.contains_key(*name))
            .cloned()
            .collect();
        for name in leftover {
            kg.intern_entity(&name)?;
        }

        let report = LoadReport {
            entities: kg.entity_names.len(),
            relations: kg.relation_names.len(),
            triples: kg.triples.len(),
            warnings,
        };
        Ok((kg, report))
    }

    fn intern_entity(&mut self, name: &str) -> Result<EntityId> {
        if let Some(&id) = self.entity_index.get(name) {
            return Ok(id);
        }
        let type_label = self
            .schema
            .entity_types
            .get(name)
            .ok_or_else(|| SplitRagError::UnknownEntityType(name.to_string()))?
            .clone();
        let type_id = self.intern_type(&type_label);
        let id = EntityId(self.entity_names.len() as u32);
        self.entity_names.push(name.to_string());
        self.entity_types.push(type_id);
        self.entity_index.insert(name.to_string(), id);
        self.out_edges.push(Vec::new());
        self.in_edges.push(Vec::new());
        self.entities_by_type.entry(type_id).or_default().push(id);
        Ok(id)
    }

    fn intern_relation(&mut self, name: &str) -> RelationId {
        if let Some(&id) = self.relation_index.get(name) {
            return id;
        }
        let id = RelationId(self.relation_names.len() as u32);
        self.relation_names.push(name.to_string());
        self.relation_index.insert(name.to_string(), id);
        id
    }

    fn intern_type(&mut self, label: &str) -> TypeId {
        if let Some(&id) = self.type_index.get(label) {
            return id;
        }
        let id = TypeId(self.type_names.len() as u32);
        self.type_names.push(label.to_string());
        self.type_index.insert(label.to_string(), id);
        id
    }

    pub fn entity_count(&self) -> usize {
        self.entity_names.len()
    }

    pub fn relation_count(&self) -> usize {
        self.relation_names.len()
    }

    pub fn triples(&self) -> &[Triple] {
        &self.triples
    }

    pub fn triple_by_id(&self, id: TripleId) -> Triple {
        self.triples[id.0 as usize]
    }

    pub fn triple_id(&self, triple: &Triple) -> Option<TripleId> {
        self.triple_index.get(triple).copied()
    }

    pub fn contains_triple(&self, triple: &Triple) -> bool {
        self.triple_index.contains_key(triple)
    }

    pub fn entity_id(&self, name: &str) -> Option<EntityId> {
        self.entity_index.get(name).copied()
    }

    pub fn entity_name(&self, id: EntityId) -> &str {
        &self.entity_names[id.0 as usize]
    }

    pub fn relation_id(&self, name: &str) -> Option<RelationId> {
        self.relation_index.get(name).copied()
    }

    pub fn relation_name(&self, id: RelationId) -> &str {
        &self.relation_names[id.0 as usize]
    }

    pub fn type_of(&self, id: EntityId) -> TypeId {
        self.entity_types[id.0 as usize]
    }

    pub fn type_name(&self, id: TypeId) -> &str {
        &self.type_names[id.0 as usize]
    }

    pub fn type_id(&self, label: &str) -> Option<TypeId> {
        self.type_index.get(label).copied()
    }

    pub fn type_label_of(&self, id: EntityId) -> &str {
        self.type_name(self.type_of(id))
    }

    pub fn entities_of_type(&self, type_id: TypeId) -> &[EntityId] {
        self.entities_by_type
            .get(&type_id)
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    pub fn type_count(&self) -> usize {
        self.type_names.len()
    }

    pub fn out_edges(&self, e: EntityId) -> &[(RelationId, EntityId, TripleId)] {
        &self.out_edges[e.0 as usize]
    }

    pub fn in_edges(&self, e: EntityId) -> &[(RelationId, EntityId, TripleId)] {
        &self.in_edges[e.0 as usize]
    }

    /// Ordered `(head, relation) -> tails` lookup.
    pub fn tails(&self, head: EntityId, relation: RelationId) -> &[EntityId] {
        self.pair_index
            .get(&(head, relation))
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    /// All edges incident to `e` as `(triple, inverted)` where `inverted`
    /// means the traversal leaves `e` against the stored direction.
    pub fn edges_of(&self, e: EntityId) -> Vec<(Triple, bool)> {
        let mut edges = Vec::new();
        for &(_, _, tid) in self.out_edges(e) {
            edges.push((self.triple_by_id(tid), false));
        }
        for &(_, _, tid) in self.in_edges(e) {
            edges.push((self.triple_by_id(tid), true));
        }
        edges
    }

    /// Entities reachable from `e` within `depth` hops (directions ignored),
    /// excluding `e` itself. `depth` is clamped to at least 1.
    pub fn neighbors(&self, e: EntityId, depth: usize) -> BTreeSet<EntityId> {
        let depth = depth.max(1);
        let mut seen = BTreeSet::new();
        let mut frontier = vec![e];
        for _ in 0..depth {
            let mut next = Vec::new();
            for &cur in &frontier {
                for (triple, inverted) in self.edges_of(cur) {
                    let other = if inverted { triple.head } else { triple.tail };
                    if other != e && seen.insert(other) {
                        next.push(other);
                    }
                }
            }
            frontier = next;
            if frontier.is_empty() {
                break;
            }
        }
        seen
    }

    pub fn is_functional(&self, relation: RelationId) -> bool {
        self.schema
            .functional_relations
            .contains(self.relation_name(relation))
    }

    /// Declared negation counterpart of `relation`, if the pair resolves in
    /// the current vocabulary.
    pub fn negation_of(&self, relation: RelationId) -> Option<RelationId> {
        let name = self.relation_name(relation);
        for (a, b) in &self.schema.negation_pairs {
            if a == name {
                return self.relation_id(b);
            }
            if b == name {
                return self.relation_id(a);
            }
        }
        None
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn display_triple(&self, t: &Triple) -> String {
        format!(
            "{} — {} — {}",
            self.entity_name(t.head),
            self.relation_name(t.relation),
            self.entity_name(t.tail)
        )
    }
}

/// One traversal step: the stored triple plus whether it was walked against
/// its stored direction.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
pub struct PathStep {
    pub triple: Triple,
    pub inverted: bool,
}

impl PathStep {
    pub fn from(&self) -> EntityId {
        if self.inverted {
            self.triple.tail
        } else {
            self.triple.head
        }
    }

    pub fn to(&self) -> EntityId {
        if self.inverted {
            self.triple.head
        } else {
            self.triple.tail
        }
    }
}

/// An alternating entity/relation walk through the graph. Construction
/// validates that consecutive steps chain and that every step's triple is
/// stored (in either direction).
#[derive(
    Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
pub struct Path {
    start: EntityId,
    steps: Vec<PathStep>,
}

impl Path {
    pub fn new(start: EntityId, steps: Vec<PathStep>, kg: &KnowledgeGraph) -> Result<Path> {
        if steps.is_empty() {
            return Err(SplitRagError::InvalidPath("a path needs at least one hop".into()));
        }
        let mut cursor = start;
        for step in &steps {
            if !kg.contains_triple(&step.triple) {
                return Err(SplitRagError::InvalidPath(format!(
                    "step triple {} is not in the graph",
                    kg.display_triple(&step.triple)
                )));
            }
            if step.from() != cursor {
                return Err(SplitRagError::InvalidPath(format!(
                    "step starting at {} does not chain from {}",
                    kg.entity_name(step.from()),
                    kg.entity_name(cursor)
                )));
            }
            cursor = step.to();
        }
        Ok(Path { start, steps })
    }

    /// Resolves an alternating `entity, relation, entity, …` name sequence.
    /// The stored direction is preferred; a step that only exists reversed is
    /// recorded as inverted.
    pub fn from_names(kg: &KnowledgeGraph, names: &[&str]) -> Result<Path> {
        if names.len() < 3 || names.len() % 2 == 0 {
            return Err(SplitRagError::InvalidPath(format!(
                "expected an odd-length alternating sequence, got {} items",
                names.len()
            )));
        }
        let resolve_entity = |name: &str| {
            kg.entity_id(name)
                .ok_or_else(|| SplitRagError::UnknownEntity(name.to_string()))
        };
        let start = resolve_entity(names[0])?;
        let mut cursor = start;
        let mut steps = Vec::new();
        for pair in names[1..].chunks(2) {
            let relation = kg
                .relation_id(pair[0])
                .ok_or_else(|| SplitRagError::UnknownRelation(pair[0].to_string()))?;
            let next = resolve_entity(pair[1])?;
            let forward = Triple {
                head: cursor,
                relation,
                tail: next,
            };
            let backward = Triple {
                head: next,
                relation,
                tail: cursor,
            };
            let step = if kg.contains_triple(&forward) {
                PathStep {
                    triple: forward,
                    inverted: false,
                }
            } else if kg.contains_triple(&backward) {
                PathStep {
                    triple: backward,
                    inverted: true,
                }
            } else {
                return Err(SplitRagError::InvalidPath(format!(
                    "no stored triple connects {} and {} via {}",
                    kg.entity_name(cursor),
                    kg.entity_name(next),
                    pair[0]
                )));
            };
            steps.push(step);
            cursor = next;
        }
        Ok(Path { start, steps })
    }

    pub fn start(&self) -> EntityId {
        self.start
    }

    pub fn end(&self) -> EntityId {
        self.steps.last().map(PathStep::to).unwrap_or(self.start)
    }

    pub fn steps(&self) -> &[PathStep] {
        &self.steps
    }

    pub fn hops(&self) -> usize {
        self.steps.len()
    }

    /// Entities in traversal order, including both endpoints.
    pub fn entities(&self) -> Vec<EntityId> {
        let mut out = Vec::with_capacity(self.steps.len() + 1);
        out.push(self.start);
        for step in &self.steps {
            out.push(step.to());
        }
        out
    }

    pub fn entity_set(&self) -> BTreeSet<EntityId> {
        self.entities().into_iter().collect()
    }

    pub fn triples(&self) -> Vec<Triple> {
        self.steps.iter().map(|s| s.triple).collect()
    }

    /// Splits into 1..2-hop segments, greedily left to right: a path of `h`
    /// hops yields `ceil(h / 2)` segments whose concatenation is the path.
    pub fn split_into_segments(&self) -> Vec<PathSegment> {
        let mut segments = Vec::new();
        let mut cursor = self.start;
        for chunk in self.steps.chunks(2) {
            let seg = Path {
                start: cursor,
                steps: chunk.to_vec(),
            };
            cursor = seg.end();
            segments.push(PathSegment(seg));
        }
        segments
    }

    pub fn display(&self, kg: &KnowledgeGraph) -> String {
        let mut out = kg.entity_name(self.start).to_string();
        for step in &self.steps {
            let rel = kg.relation_name(step.triple.relation);
            if step.inverted {
                out.push_str(&format!(" <-[{rel}]- {}", kg.entity_name(step.to())));
            } else {
                out.push_str(&format!(" -[{rel}]-> {}", kg.entity_name(step.to())));
            }
        }
        out
    }
}

/// A path of one or two hops, the atomic retrieval unit.
#[derive(
    Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
pub struct PathSegment(Path);

impl PathSegment {
    pub fn new(path: Path) -> Result<PathSegment> {
        if path.hops() == 0 || path.hops() > 2 {
            return Err(SplitRagError::InvalidPath(format!(
                "a segment must have 1 or 2 hops, got {}",
                path.hops()
            )));
        }
        Ok(PathSegment(path))
    }

    pub fn path(&self) -> &Path {
        &self.0
    }

    pub fn pattern(&self, kg: &KnowledgeGraph) -> SegmentPattern {
        SegmentPattern::of_path(&self.0, kg)
    }
}

impl std::ops::Deref for PathSegment {
    type Target = Path;

    fn deref(&self) -> &Path {
        &self.0
    }
}

/// Type-level shape of a walk: per step the relation, traversal direction and
/// the entity types on both ends.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
pub struct PatternStep {
    pub relation: RelationId,
    pub inverted: bool,
    pub from_type: TypeId,
    pub to_type: TypeId,
}

impl PatternStep {
    /// The stored orientation of this step as `(head type, relation, tail type)`.
    pub fn stored_shape(&self) -> (TypeId, RelationId, TypeId) {
        if self.inverted {
            (self.to_type, self.relation, self.from_type)
        } else {
            (self.from_type, self.relation, self.to_type)
        }
    }
}

#[derive(
    Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
pub struct SegmentPattern {
    pub steps: Vec<PatternStep>,
}

impl SegmentPattern {
    pub fn of_path(path: &Path, kg: &KnowledgeGraph) -> SegmentPattern {
        let steps = path
            .steps()
            .iter()
            .map(|s| PatternStep {
                relation: s.triple.relation,
                inverted: s.inverted,
                from_type: kg.type_of(s.from()),
                to_type: kg.type_of(s.to()),
            })
            .collect();
        SegmentPattern { steps }
    }

    pub fn reversed(&self) -> SegmentPattern {
        let steps = self
            .steps
            .iter()
            .rev()
            .map(|s| PatternStep {
                relation: s.relation,
                inverted: !s.inverted,
                from_type: s.to_type,
                to_type: s.from_type,
            })
            .collect();
        SegmentPattern { steps }
    }

    /// Direction-normalized form: the lexicographic minimum of the pattern
    /// and its reversal, so a walk and its mirror group together.
    pub fn canonical(&self) -> SegmentPattern {
        let rev = self.reversed();
        if rev < *self {
            rev
        } else {
            self.clone()
        }
    }

    pub fn hops(&self) -> usize {
        self.steps.len()
    }

    pub fn start_type(&self) -> Option<TypeId> {
        self.steps.first().map(|s| s.from_type)
    }

    pub fn end_type(&self) -> Option<TypeId> {
        self.steps.last().map(|s| s.to_type)
    }

    /// Entity types along the walk in traversal order.
    pub fn node_types(&self) -> Vec<TypeId> {
        let mut out = Vec::with_capacity(self.steps.len() + 1);
        if let Some(first) = self.steps.first() {
            out.push(first.from_type);
        }
        for s in &self.steps {
            out.push(s.to_type);
        }
        out
    }

    pub fn display(&self, kg: &KnowledgeGraph) -> String {
        let mut out = String::new();
        if let Some(first) = self.steps.first() {
            out.push_str(&format!("({})", kg.type_name(first.from_type)));
        }
        for s in &self.steps {
            let rel = kg.relation_name(s.relation);
            let arrow = if s.inverted {
                format!(" <-[{rel}]- ")
            } else {
                format!(" -[{rel}]-> ")
            };
            out.push_str(&arrow);
            out.push_str(&format!("({})", kg.type_name(s.to_type)));
        }
        out
    }
}

impl fmt::Display for EntityId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "e{}", self.0)
    }
}
