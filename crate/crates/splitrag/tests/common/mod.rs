//! Seeded random worlds shared by the integration tests. Everything
//! downstream of the seed is deterministic, so failures reproduce.

#![allow(dead_code)]

use std::collections::BTreeSet;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use splitrag::kg::{KnowledgeGraph, Path, Schema};
use splitrag::question::{Lexicon, QuestionBase, QuestionRecord, Stopwords};

/// Builds a random knowledge graph of at most 200 entities together with a
/// finalized question base whose records carry 1..3-hop path annotations.
///
/// Walks are drawn first and their triples inserted into the graph, so every
/// annotation is guaranteed to resolve; extra noise edges then pad the graph
/// with facts no training question touches.
pub fn random_world(seed: u64) -> (KnowledgeGraph, QuestionBase) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_entities = rng.gen_range(24..=200usize);
    let n_types = rng.gen_range(3..=6usize);
    let n_relations = rng.gen_range(3..=5usize);
    let n_questions = rng.gen_range(8..=24usize);

    let types: Vec<usize> = (0..n_entities).map(|_| rng.gen_range(0..n_types)).collect();

    let mut walks: Vec<Vec<String>> = Vec::new();
    let mut triples: BTreeSet<String> = BTreeSet::new();
    for _ in 0..n_questions {
        let hops = rng.gen_range(1..=3usize);
        let mut visited = vec![rng.gen_range(0..n_entities)];
        let mut names = vec![format!("e{}", visited[0])];
        for _ in 0..hops {
            let cur = *visited.last().unwrap();
            // Walks never revisit an entity, which also rules out self-loops.
            let next = loop {
                let c = rng.gen_range(0..n_entities);
                if !visited.contains(&c) {
                    break c;
                }
            };
            let rel = rng.gen_range(0..n_relations);
            triples.insert(format!("e{cur}\tr{rel}\te{next}"));
            names.push(format!("r{rel}"));
            names.push(format!("e{next}"));
            visited.push(next);
        }
        walks.push(names);
    }
    for _ in 0..rng.gen_range(0..=n_entities / 2) {
        let h = rng.gen_range(0..n_entities);
        let t = rng.gen_range(0..n_entities);
        if h != t {
            let rel = rng.gen_range(0..n_relations);
            triples.insert(format!("e{h}\tr{rel}\te{t}"));
        }
    }

    let entity_types = (0..n_entities)
        .map(|i| (format!("e{i}"), format!("t{}", types[i])))
        .collect();
    let schema = Schema {
        entity_types,
        ..Schema::default()
    };
    let text = triples.into_iter().collect::<Vec<_>>().join("\n");
    let (kg, _) = KnowledgeGraph::from_text(&text, schema).unwrap();

    let stopwords = Stopwords::default_list();
    let lexicon = Lexicon::empty();
    let mut base = QuestionBase::new();
    for (i, walk) in walks.iter().enumerate() {
        let record = QuestionRecord::new(
            format!("q{i}"),
            format!("sample question {i}"),
            Vec::new(),
            BTreeSet::new(),
            None,
            &kg,
            &stopwords,
            &lexicon,
        )
        .unwrap();
        let idx = base.add_record(record).unwrap();
        let names: Vec<&str> = walk.iter().map(String::as_str).collect();
        base.attach_path(idx, Path::from_names(&kg, &names).unwrap())
            .unwrap();
    }
    base.finalize();
    (kg, base)
}

/// Hand-sized world from explicit parts: tab-separated triples, an
/// entity-to-type listing and named training paths.
pub fn small_world(
    kb: &str,
    entity_types: &[(&str, &str)],
    paths: &[&[&str]],
) -> (KnowledgeGraph, QuestionBase) {
    let schema = Schema {
        entity_types: entity_types
            .iter()
            .map(|(n, t)| (n.to_string(), t.to_string()))
            .collect(),
        ..Schema::default()
    };
    let (kg, _) = KnowledgeGraph::from_text(kb, schema).unwrap();
    let stopwords = Stopwords::default_list();
    let lexicon = Lexicon::empty();
    let mut base = QuestionBase::new();
    for (i, names) in paths.iter().enumerate() {
        let record = QuestionRecord::new(
            format!("q{i}"),
            format!("fixture question {i}"),
            Vec::new(),
            BTreeSet::new(),
            None,
            &kg,
            &stopwords,
            &lexicon,
        )
        .unwrap();
        let idx = base.add_record(record).unwrap();
        base.attach_path(idx, Path::from_names(&kg, names).unwrap())
            .unwrap();
    }
    base.finalize();
    (kg, base)
}
