//! Structural invariants checked over randomized inputs.

mod common;

use std::collections::BTreeSet;

use proptest::prelude::*;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use splitrag::allocate::association_matrix;
use splitrag::eval::{f1, hit, hit_at_1};
use splitrag::fusion::{resolve, ConflictGraph, ConflictRule};
use splitrag::partition::{partition, PartitionConfig, SegmentPool};
use splitrag::{EntityId, RelationId, Triple};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn partition_keeps_every_segment(seed in any::<u64>()) {
        let (kg, base) = common::random_world(seed);
        let part = partition(&base, &kg, &PartitionConfig::default()).unwrap();
        prop_assert!(part.validate(&kg).is_empty());

        let pool = SegmentPool::from_base(&base, &kg);
        for pooled in &pool.segments {
            let placed = part
                .subgraphs
                .iter()
                .any(|sg| pooled.triples.iter().all(|t| sg.triples.contains(t)));
            prop_assert!(placed, "a training segment fell out of the partition");
        }
    }

    #[test]
    fn association_rows_stay_bounded(seed in any::<u64>()) {
        let (kg, base) = common::random_world(seed);
        let part = partition(&base, &kg, &PartitionConfig::default()).unwrap();
        let ids: BTreeSet<_> = part.ids().into_iter().collect();
        let matrix = association_matrix(&base, &part);
        prop_assert_eq!(matrix.rows.len(), base.len());
        for row in &matrix.rows {
            prop_assert!(row.row_sum() <= 1.0 + 1e-9, "row sum {}", row.row_sum());
            prop_assert!(row.contained_paths <= row.path_count);
            for (sg, w) in &row.weights {
                prop_assert!(ids.contains(sg));
                prop_assert!(*w > 0.0 && *w <= 1.0 + 1e-9);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn edge_index_balances(seed in any::<u64>()) {
        let (kg, _) = common::random_world(seed);
        let total = kg.triples().len();
        let out: usize = (0..kg.entity_count())
            .map(|i| kg.out_edges(EntityId(i as u32)).len())
            .sum();
        let into: usize = (0..kg.entity_count())
            .map(|i| kg.in_edges(EntityId(i as u32)).len())
            .sum();
        prop_assert_eq!(out, total);
        prop_assert_eq!(into, total);
    }

    #[test]
    fn neighbors_grow_with_depth(seed in any::<u64>(), depth in 1usize..4) {
        let (kg, _) = common::random_world(seed);
        let step = kg.entity_count().max(7) / 7;
        for i in (0..kg.entity_count()).step_by(step.max(1)) {
            let e = EntityId(i as u32);
            let near = kg.neighbors(e, depth);
            let far = kg.neighbors(e, depth + 1);
            prop_assert!(near.is_subset(&far));
        }
    }

    #[test]
    fn segments_rebuild_their_path(seed in any::<u64>()) {
        let (_, base) = common::random_world(seed);
        for record in base.records() {
            for path in &record.paths {
                let segments = path.split_into_segments();
                let mut entities = Vec::new();
                for (i, seg) in segments.iter().enumerate() {
                    let part = seg.path().entities();
                    if i == 0 {
                        entities.extend(part);
                    } else {
                        prop_assert_eq!(entities.last(), part.first());
                        entities.extend(part.into_iter().skip(1));
                    }
                }
                prop_assert_eq!(entities, path.entities());

                let rebuilt: BTreeSet<Triple> = segments
                    .iter()
                    .flat_map(|s| s.triples())
                    .collect();
                let original: BTreeSet<Triple> = path.triples().into_iter().collect();
                prop_assert_eq!(rebuilt, original);
            }
        }
    }

    #[test]
    fn resolve_keeps_independence(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.gen_range(1..=14usize);
        let vertices: Vec<Triple> = (0..n)
            .map(|i| Triple {
                head: EntityId(i as u32),
                relation: RelationId(0),
                tail: EntityId(100),
            })
            .collect();
        let mut edges = Vec::new();
        for i in 0..n {
            for j in (i + 1)..n {
                if rng.gen_bool(0.3) {
                    edges.push((i, j, ConflictRule::FunctionalViolation));
                }
            }
        }
        let scores = (0..n).map(|_| rng.gen_range(1..=100) as f64 / 100.0).collect();
        let graph = ConflictGraph { vertices, edges, scores };
        let resolution = resolve(&graph);
        for &(i, j, _) in &graph.edges {
            prop_assert!(
                !(resolution.kept.contains(&graph.vertices[i])
                    && resolution.kept.contains(&graph.vertices[j]))
            );
        }
        prop_assert_eq!(resolution.kept.len() + resolution.removed.len(), n);
        for removed in &resolution.removed {
            prop_assert!(!resolution.kept.contains(&removed.triple));
        }
    }
}

proptest! {
    #[test]
    fn f1_stays_bounded(
        answered in prop::collection::vec("[a-d]", 0..6),
        gold in prop::collection::btree_set("[a-d]", 0..4),
    ) {
        let score = f1(&answered, &gold);
        prop_assert!((0.0..=1.0).contains(&score));
        if hit_at_1(&answered, &gold) {
            prop_assert!(hit(&answered, &gold));
        }
        prop_assert_eq!(score > 0.0, hit(&answered, &gold));
    }
}
