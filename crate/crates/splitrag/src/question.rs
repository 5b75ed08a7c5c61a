//! Question preparation and the training question base.
//!
//! A raw question is turned into two parallel views:
//!
//! * semantic context `q_s`: lowercased content tokens with linked entity
//!   mentions kept as explicit marks,
//! * entity-type context `q_e`: the same tokens with every entity mark
//!   replaced by its type label, common nouns normalized through an optional
//!   type lexicon, and adjacent duplicate type labels collapsed.
//!
//! The base holds the finalized training records plus the two lookup
//! structures routing depends on: a TF-IDF vector index over `q_e` and a
//! segment index from concrete path segments back to record ids.

use std::collections::BTreeMap;
use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SplitRagError};
use crate::kg::{EntityId, KnowledgeGraph, Path, PathSegment, RelationId, SegmentPattern, TypeId};
use crate::partition::SubgraphId;

const DEFAULT_STOPWORDS: &str = include_str!("../assets/stopwords_en_50.txt");

/// Fixed stopword set. The default is the 50-word English list shipped with
/// the crate; a config may swap in another file.
#[derive(Debug, Clone)]
pub struct Stopwords(BTreeSet<String>);

impl Stopwords {
    pub fn default_list() -> Stopwords {
        Stopwords::from_text(DEFAULT_STOPWORDS)
    }

    pub fn from_text(text: &str) -> Stopwords {
        Stopwords(
            text.lines()
                .map(|l| l.trim().to_lowercase())
                .filter(|l| !l.is_empty())
                .collect(),
        )
    }

    pub fn contains(&self, word: &str) -> bool {
        self.0.contains(word)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Maps surface tokens to entity-type labels, e.g. `films -> movie`.
/// With an empty lexicon `q_e` is the purely mechanical substitution of
/// entity marks by their types.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Lexicon(pub BTreeMap<String, String>);

impl Lexicon {
    pub fn empty() -> Lexicon {
        Lexicon(BTreeMap::new())
    }

    pub fn from_json(text: &str) -> Result<Lexicon> {
        let map: BTreeMap<String, String> =
            serde_json::from_str(text).map_err(|e| SplitRagError::Serde(e.to_string()))?;
        Ok(Lexicon(map))
    }

    pub fn normalize<'a>(&'a self, token: &'a str) -> &'a str {
        self.0.get(token).map(String::as_str).unwrap_or(token)
    }
}

/// A token of the semantic context: either a plain word or an entity mark.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum QToken {
    Word(String),
    Entity(EntityId),
}

/// A linked entity mention: byte span into the raw question plus the
/// resolved entity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityLink {
    pub start: usize,
    pub end: usize,
    pub entity: EntityId,
}

/// Where the answer of a plan is expected to sit: the final relation (when
/// known), which side of that relation holds the answer, and its entity type.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerDescriptor {
    pub relation: Option<RelationId>,
    /// True when the answer is the head of the stored triple (the final step
    /// was traversed against storage direction).
    pub answer_on_head: bool,
    pub answer_type: TypeId,
}

/// One step of a stored decomposition: the segment's type-level shape, which
/// node positions were bound to the training question's linked entities, and
/// the agent and subgraph the segment resolved to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecompositionStep {
    pub pattern: SegmentPattern,
    pub anchor_slots: Vec<usize>,
    pub agent: u32,
    pub subgraph: SubgraphId,
}

/// The reusable answer recipe recorded for a training question once the
/// partition and allocation are fixed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecompositionPattern {
    pub steps: Vec<DecompositionStep>,
    pub expected: Option<AnswerDescriptor>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QuestionRecord {
    pub id: String,
    pub raw: String,
    pub q_s: Vec<QToken>,
    pub q_e: Vec<String>,
    pub links: Vec<EntityLink>,
    pub paths: Vec<Path>,
    pub qtype: Option<String>,
    pub answers: BTreeSet<String>,
    pub pattern: Option<DecompositionPattern>,
    /// Number of entity marks substituted while building `q_e`.
    pub substituted: usize,
}

impl QuestionRecord {
    /// Preprocesses `raw` and assembles a record. Paths are attached later.
    pub fn new(
        id: impl Into<String>,
        raw: impl Into<String>,
        links: Vec<EntityLink>,
        answers: BTreeSet<String>,
        qtype: Option<String>,
        kg: &KnowledgeGraph,
        stopwords: &Stopwords,
        lexicon: &Lexicon,
    ) -> Result<QuestionRecord> {
        let raw = raw.into();
        let (q_s, q_e, substituted, links) = preprocess(&raw, links, kg, stopwords, lexicon)?;
        Ok(QuestionRecord {
            id: id.into(),
            raw,
            q_s,
            q_e,
            links,
            paths: Vec::new(),
            qtype,
            answers,
            pattern: None,
            substituted,
        })
    }

    /// Linked entities in order of appearance, deduplicated.
    pub fn linked_entities(&self) -> Vec<EntityId> {
        let mut out = Vec::new();
        for link in &self.links {
            if !out.contains(&link.entity) {
                out.push(link.entity);
            }
        }
        out
    }

    pub fn primary_path(&self) -> Option<&Path> {
        self.paths.first()
    }

    pub fn q_s_display(&self, kg: &KnowledgeGraph) -> String {
        self.q_s
            .iter()
            .map(|t| match t {
                QToken::Word(w) => w.clone(),
                QToken::Entity(e) => format!("[{}]", kg.entity_name(*e)),
            })
            .collect::<Vec<_>>()
            .join(" ")
    }
}

/// Tokenizes and builds the two context views.
///
/// Returns `(q_s, q_e, substituted_marks, links)` with links sorted by span
/// start. Spans must be in bounds, on character boundaries and
/// non-overlapping.
pub fn preprocess(
    raw: &str,
    mut links: Vec<EntityLink>,
    kg: &KnowledgeGraph,
    stopwords: &Stopwords,
    lexicon: &Lexicon,
) -> Result<(Vec<QToken>, Vec<String>, usize, Vec<EntityLink>)> {
    links.sort_by_key(|l| (l.start, l.end));
    let mut prev_end = 0usize;
    for link in &links {
        if link.start >= link.end || link.end > raw.len() {
            return Err(SplitRagError::InvalidSpan(format!(
                "span {}..{} is out of bounds for a {}-byte question",
                link.start,
                link.end,
                raw.len()
            )));
        }
        if !raw.is_char_boundary(link.start) || !raw.is_char_boundary(link.end) {
            return Err(SplitRagError::InvalidSpan(format!(
                "span {}..{} does not fall on character boundaries",
                link.start, link.end
            )));
        }
        if link.start < prev_end {
            return Err(SplitRagError::InvalidSpan(format!(
                "span {}..{} overlaps the previous one",
                link.start, link.end
            )));
        }
        prev_end = link.end;
    }

    let mut q_s: Vec<QToken> = Vec::new();
    let mut cursor = 0usize;
    let push_words = |text: &str, out: &mut Vec<QToken>| {
        for word in text
            .split(|c: char| !c.is_alphanumeric())
            .filter(|w| !w.is_empty())
        {
            let lower = word.to_lowercase();
            if !stopwords.contains(&lower) {
                out.push(QToken::Word(lower));
            }
        }
    };
    for link in &links {
        push_words(&raw[cursor..link.start], &mut q_s);
        q_s.push(QToken::Entity(link.entity));
        cursor = link.end;
    }
    push_words(&raw[cursor..], &mut q_s);

    let mut substituted = 0usize;
    let mut q_e: Vec<String> = Vec::new();
    for token in &q_s {
        let mapped = match token {
            QToken::Word(w) => lexicon.normalize(w).to_string(),
            QToken::Entity(e) => {
                substituted += 1;
                kg.type_label_of(*e).to_string()
            }
        };
        let is_type_label = kg.type_id(&mapped).is_some();
        if is_type_label && q_e.last() == Some(&mapped) {
            continue;
        }
        q_e.push(mapped);
    }

    Ok((q_s, q_e, substituted, links))
}

/// Sparse token-weight vector, L2-normalized at construction.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SparseVec(pub BTreeMap<String, f64>);

impl SparseVec {
    pub fn is_zero(&self) -> bool {
        self.0.is_empty()
    }

    pub fn cosine(&self, other: &SparseVec) -> f64 {
        if self.is_zero() || other.is_zero() {
            return 0.0;
        }
        // Both sides are unit vectors, so the dot product is the cosine.
        let (small, large) = if self.0.len() <= other.0.len() {
            (&self.0, &other.0)
        } else {
            (&other.0, &self.0)
        };
        let mut dot = 0.0;
        for (token, w) in small {
            if let Some(v) = large.get(token) {
                dot += w * v;
            }
        }
        dot.clamp(-1.0, 1.0)
    }
}

/// The training question base: records plus the vector and segment indexes.
///
/// Records are added first, then `finalize` freezes document frequencies and
/// builds both indexes. Vectorizing against the base is only meaningful after
/// finalization so that every query sees the same frequencies.
#[derive(Debug, Clone, Default)]
pub struct QuestionBase {
    records: Vec<QuestionRecord>,
    df: BTreeMap<String, usize>,
    doc_count: usize,
    vectors: Vec<SparseVec>,
    segment_index: BTreeMap<PathSegment, Vec<usize>>,
    finalized: bool,
}

impl QuestionBase {
    pub fn new() -> QuestionBase {
        QuestionBase::default()
    }

    pub fn add_record(&mut self, record: QuestionRecord) -> Result<usize> {
        if self.finalized {
            return Err(SplitRagError::NotFinalized(
                "cannot add records after finalize".to_string(),
            ));
        }
        self.records.push(record);
        Ok(self.records.len() - 1)
    }

    /// Attaches a single path context; a second call replaces the first.
    pub fn attach_path(&mut self, idx: usize, path: Path) -> Result<()> {
        self.attach_paths(idx, vec![path])
    }

    /// Attaches all reasoning paths for a record, replacing existing ones.
    pub fn attach_paths(&mut self, idx: usize, paths: Vec<Path>) -> Result<()> {
        let record = self
            .records
            .get_mut(idx)
            .ok_or_else(|| SplitRagError::Dataset(format!("no record at index {idx}")))?;
        record.paths = paths;
        if self.finalized {
            self.rebuild_segment_index();
        }
        Ok(())
    }

    pub fn set_pattern(&mut self, idx: usize, pattern: DecompositionPattern) -> Result<()> {
        let record = self
            .records
            .get_mut(idx)
            .ok_or_else(|| SplitRagError::Dataset(format!("no record at index {idx}")))?;
        record.pattern = Some(pattern);
        Ok(())
    }

    /// Freezes document frequencies and builds the vector and segment indexes.
    pub fn finalize(&mut self) {
        self.df.clear();
        self.doc_count = self.records.len();
        for record in &self.records {
            let distinct: BTreeSet<&String> = record.q_e.iter().collect();
            for token in distinct {
                *self.df.entry(token.clone()).or_insert(0) += 1;
            }
        }
        self.vectors = self
            .records
            .iter()
            .map(|r| self.weigh(&r.q_e))
            .collect();
        self.rebuild_segment_index();
        self.finalized = true;
    }

    fn rebuild_segment_index(&mut self) {
        self.segment_index.clear();
        for (idx, record) in self.records.iter().enumerate() {
            for path in &record.paths {
                for segment in path.split_into_segments() {
                    let slot = self.segment_index.entry(segment).or_default();
                    if !slot.contains(&idx) {
                        slot.push(idx);
                    }
                }
            }
        }
    }

    fn weigh(&self, tokens: &[String]) -> SparseVec {
        let mut counts: BTreeMap<&String, usize> = BTreeMap::new();
        for token in tokens {
            *counts.entry(token).or_insert(0) += 1;
        }
        let n = self.doc_count as f64;
        let mut weights: BTreeMap<String, f64> = BTreeMap::new();
        for (token, count) in counts {
            let df = self.df.get(token).copied().unwrap_or(0) as f64;
            let idf = ((1.0 + n) / (1.0 + df)).ln() + 1.0;
            weights.insert(token.clone(), count as f64 * idf);
        }
        let norm = weights.values().map(|w| w * w).sum::<f64>().sqrt();
        if norm > 0.0 {
            for w in weights.values_mut() {
                *w /= norm;
            }
        }
        SparseVec(weights)
    }

    /// TF-IDF vector of an arbitrary token list against the frozen base
    /// frequencies. An empty token list yields the zero vector.
    pub fn vectorize(&self, tokens: &[String]) -> Result<SparseVec> {
        if !self.finalized {
            return Err(SplitRagError::NotFinalized(
                "finalize the base before vectorizing".to_string(),
            ));
        }
        Ok(self.weigh(tokens))
    }

    pub fn vector_of(&self, idx: usize) -> Result<&SparseVec> {
        if !self.finalized {
            return Err(SplitRagError::NotFinalized(
                "finalize the base before reading vectors".to_string(),
            ));
        }
        self.vectors
            .get(idx)
            .ok_or_else(|| SplitRagError::Dataset(format!("no record at index {idx}")))
    }

    pub fn segment_records(&self, segment: &PathSegment) -> &[usize] {
        self.segment_index
            .get(segment)
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    pub fn segment_index(&self) -> &BTreeMap<PathSegment, Vec<usize>> {
        &self.segment_index
    }

    pub fn records(&self) -> &[QuestionRecord] {
        &self.records
    }

    pub fn record(&self, idx: usize) -> &QuestionRecord {
        &self.records[idx]
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn is_finalized(&self) -> bool {
        self.finalized
    }

    pub fn document_frequency(&self, token: &str) -> usize {
        self.df.get(token).copied().unwrap_or(0)
    }

    pub fn doc_count(&self) -> usize {
        self.doc_count
    }
}
