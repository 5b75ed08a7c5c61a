//! Acceptance checks for the whole pipeline. Each test covers one criterion
//! and prints a single verdict line, so a full run reads as a checklist.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::PathBuf;
use std::time::Instant;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use splitrag::allocate::{allocate, AgentGroup, Allocation, AllocationAudit, AllocationConfig};
use splitrag::config::PipelineConfig;
use splitrag::dataset::load_dir;
use splitrag::eval::{f1, hit, hit_at_1, measure_search_space, QuestionTrace, StageTimings};
use splitrag::fusion::{resolve, ConflictGraph, ConflictRule};
use splitrag::kg::{KnowledgeGraph, Path, Schema};
use splitrag::partition::{
    information_gain, partition, seed_candidates, EntropySign, PartitionConfig,
};
use splitrag::pipeline::{
    cmd_allocate, cmd_answer, cmd_eval, cmd_partition, cmd_route,
};
use splitrag::question::{EntityLink, QuestionBase, QuestionRecord};
use splitrag::route::{record_patterns, route, PlanMode};
use splitrag::{EntityId, RelationId, Triple};

fn verdict(name: &str, pass: bool, detail: String) {
    if pass {
        println!("[acceptance] {name}: PASS");
    } else {
        println!("[acceptance] {name}: FAIL ({detail})");
    }
    assert!(pass, "{name}: {detail}");
}

fn movie_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures/movie")
}

fn movie_config() -> PipelineConfig {
    PipelineConfig::load(&movie_dir().join("config.toml")).unwrap()
}

/// Ranked answers the bundled benchmark is expected to produce. Regenerate by
/// running the five pipeline stages on fixtures/movie and reading answers.json.
const EXPECTED_ANSWERS: &[(&str, &[&str])] = &[
    ("e01", &["Lena Hartwell"]),
    ("e02", &["Lucas Ferro", "Omar Haddad"]),
    ("e03", &["drama"]),
    ("e04", &["1998"]),
    ("e05", &["Marco Ibanez"]),
    ("e06", &["Marmalade Morning", "Salt and Smoke", "Signal to Vega"]),
    ("e07", &["noir"]),
    ("e08", &["Paul Whitaker"]),
    ("e09", &["Ashes of Autumn", "The Long Causeway"]),
    ("e10", &["2004"]),
    ("e11", &["Lucas Ferro", "Mina Castellanos"]),
    ("e12", &["drama", "noir"]),
    ("e13", &["Sam Odionye"]),
    ("e14", &["Cold Harbor Lights", "Rain on Copper Street", "The Last Meridian"]),
    ("e15", &["Night Ferry"]),
    ("e16", &["2019"]),
    ("e17", &["Henrik Lund"]),
    ("e18", &["Marmalade Morning", "Salt and Smoke", "The Orbital Garden", "The Quiet Vault"]),
    ("e19", &["drama", "noir", "thriller"]),
    ("e20", &["Night Ferry", "The Far Paddock", "The Last Meridian"]),
];

#[test]
fn partition_validity() {
    let started = Instant::now();
    let cfg = PartitionConfig::default();
    let mut failures = Vec::new();
    for seed in 0..20u64 {
        let (kg, base) = common::random_world(seed);
        assert!(kg.entity_count() <= 200, "world {seed} too large");
        let part = match partition(&base, &kg, &cfg) {
            Ok(p) => p,
            Err(e) => {
                failures.push(format!("seed {seed}: {e}"));
                continue;
            }
        };
        for problem in part.validate(&kg) {
            failures.push(format!("seed {seed}: {problem}"));
        }
        for sg in &part.subgraphs {
            if sg.size() > part.eta_max {
                failures.push(format!(
                    "seed {seed}: subgraph {} holds {} entities over the cap {}",
                    sg.id.0,
                    sg.size(),
                    part.eta_max
                ));
            }
            if !sg.is_connected() {
                failures.push(format!("seed {seed}: subgraph {} disconnected", sg.id.0));
            }
        }
        for ev in &part.log.merges {
            if ev.delta <= cfg.theta_merge {
                failures.push(format!(
                    "seed {seed}: round {} merged {} into {} at delta {}",
                    ev.round, ev.absorbed.0, ev.kept.0, ev.delta
                ));
            }
            let recomputed = ev.ig_merged - ev.ig_kept_before - ev.ig_absorbed_before;
            if (recomputed - ev.delta).abs() > 1e-9 {
                failures.push(format!(
                    "seed {seed}: round {} logged delta {} but parts give {}",
                    ev.round, ev.delta, recomputed
                ));
            }
        }
    }
    let elapsed = started.elapsed().as_secs_f64();
    if elapsed >= 10.0 {
        failures.push(format!("20 partitions took {elapsed:.1}s"));
    }
    verdict("partition validity", failures.is_empty(), failures.join(" | "));
}

struct IgFixture {
    kb: &'static str,
    entity_types: &'static [(&'static str, &'static str)],
    paths: &'static [&'static [&'static str]],
    lambda: f64,
    negated: bool,
    expected_total: f64,
}

/// Five worlds small enough to enumerate by hand. The expected totals come
/// from an entropy calculation done outside this codebase.
const IG_FIXTURES: &[IgFixture] = &[
    IgFixture {
        kb: "m1\tdirected_by\td1\nm2\tdirected_by\td1\nm3\tdirected_by\td1\n\
             m1\thas_genre\tg1\nm3\thas_genre\tg2\n",
        entity_types: &[
            ("m1", "movie"),
            ("m2", "movie"),
            ("m3", "movie"),
            ("d1", "director"),
            ("g1", "genre"),
            ("g2", "genre"),
        ],
        paths: &[
            &["m1", "directed_by", "d1"],
            &["m1", "directed_by", "d1"],
            &["m2", "directed_by", "d1"],
            &["m3", "directed_by", "d1"],
            &["m1", "has_genre", "g1"],
            &["m3", "has_genre", "g2"],
        ],
        lambda: 0.5,
        negated: false,
        expected_total: 0.5383616385811598,
    },
    IgFixture {
        kb: "e0\tr0\te1\ne1\tr0\te2\ne0\tr1\te3\ne4\tr1\te5\n",
        entity_types: &[
            ("e0", "ta"),
            ("e4", "ta"),
            ("e1", "tb"),
            ("e3", "tb"),
            ("e5", "tb"),
            ("e2", "tc"),
        ],
        paths: &[
            &["e0", "r0", "e1", "r0", "e2"],
            &["e0", "r0", "e1", "r0", "e2"],
            &["e1", "r0", "e2"],
            &["e0", "r1", "e3"],
            &["e4", "r1", "e5"],
        ],
        lambda: 0.25,
        negated: false,
        expected_total: 0.2752176985577921,
    },
    IgFixture {
        kb: "h0\tr0\tl1\nh0\tr0\tl2\nh0\tr0\tl3\nh0\tr0\tl4\n",
        entity_types: &[
            ("h0", "hub"),
            ("l1", "leaf"),
            ("l2", "leaf"),
            ("l3", "leaf"),
            ("l4", "leaf"),
        ],
        paths: &[
            &["h0", "r0", "l1"],
            &["h0", "r0", "l1"],
            &["h0", "r0", "l2"],
            &["h0", "r0", "l3"],
            &["h0", "r0", "l4"],
        ],
        lambda: 1.0,
        negated: false,
        expected_total: 1.3321790402101223,
    },
    IgFixture {
        kb: "a0\tr0\ta1\na0\tr0\ta2\nb0\tr0\tb1\nb0\tr0\tb2\na0\tr1\tb0\n",
        entity_types: &[
            ("a0", "hub"),
            ("b0", "hub"),
            ("a1", "leaf"),
            ("a2", "leaf"),
            ("b1", "leaf"),
            ("b2", "leaf"),
        ],
        paths: &[
            &["a0", "r0", "a1"],
            &["a0", "r0", "a1"],
            &["a0", "r0", "a1"],
            &["a0", "r0", "a2"],
            &["b0", "r0", "b1"],
            &["b0", "r0", "b2"],
            &["b0", "r0", "b2"],
            &["a0", "r1", "b0"],
        ],
        lambda: 0.5,
        negated: false,
        expected_total: 0.6691736745222967,
    },
    IgFixture {
        kb: "x0\tr0\tx1\nx1\tr1\tx2\nx2\tr2\tx3\n",
        entity_types: &[("x0", "t0"), ("x1", "t1"), ("x2", "t2"), ("x3", "t3")],
        paths: &[
            &["x0", "r0", "x1", "r1", "x2", "r2", "x3"],
            &["x0", "r0", "x1", "r1", "x2", "r2", "x3"],
            &["x0", "r0", "x1"],
        ],
        lambda: 0.75,
        negated: true,
        expected_total: -1.3181957194688985,
    },
];

#[test]
fn information_gain_oracle() {
    let mut failures = Vec::new();
    for (fi, fx) in IG_FIXTURES.iter().enumerate() {
        let (kg, base) = common::small_world(fx.kb, fx.entity_types, fx.paths);
        let cfg = PartitionConfig {
            lambda: fx.lambda,
            // Worlds this small would default to a cap below one segment.
            eta_max: Some(16),
            entropy_sign: if fx.negated {
                EntropySign::Negated
            } else {
                EntropySign::Printed
            },
            ..PartitionConfig::default()
        };
        let (seeds, pool) = seed_candidates(&base, &kg, &cfg).unwrap();
        if seeds.len() > 6 {
            failures.push(format!("fixture {fi}: {} candidates", seeds.len()));
            continue;
        }
        let report = information_gain(&seeds, &kg, &cfg);

        // Recompute from the raw segment pool, without touching the stored
        // support maps.
        let v = kg.entity_count() as f64;
        let mut oracle_total = 0.0;
        for (sg, lib) in seeds.iter().zip(&report.per_subgraph) {
            let counts: Vec<usize> = pool
                .segments
                .iter()
                .filter(|p| p.triples.iter().all(|t| sg.triples.contains(t)))
                .map(|p| p.count)
                .collect();
            let total: f64 = counts.iter().sum::<usize>() as f64;
            let mut h = 0.0;
            for c in &counts {
                let p = *c as f64 / total;
                h -= p * p.ln();
            }
            let v_s = sg.entities.len() as f64;
            let penalty = (v_s / v) * (v / v_s).ln();
            let signed = if fx.negated { -h } else { h };
            let want = signed - fx.lambda * penalty;
            if (want - lib.contribution).abs() > 1e-9 {
                failures.push(format!(
                    "fixture {fi} subgraph {}: oracle {want} vs reported {}",
                    sg.id.0, lib.contribution
                ));
            }
            oracle_total += want;
        }
        if (oracle_total - report.total).abs() > 1e-9 {
            failures.push(format!(
                "fixture {fi}: oracle total {oracle_total} vs reported {}",
                report.total
            ));
        }
        if (report.total - fx.expected_total).abs() > 1e-9 {
            failures.push(format!(
                "fixture {fi}: frozen total {} vs reported {}",
                fx.expected_total, report.total
            ));
        }
    }
    verdict("information gain oracle", failures.is_empty(), failures.join(" | "));
}

#[test]
fn allocation_constraints() {
    let pcfg = PartitionConfig::default();
    let acfg = AllocationConfig::default();
    let mut failures = Vec::new();
    for seed in 0..20u64 {
        let (kg, base) = common::random_world(seed);
        let part = partition(&base, &kg, &pcfg).unwrap();
        let alloc = allocate(&base, &part, &kg, &acfg).unwrap();

        for id in part.ids() {
            if !alloc.owner.contains_key(&id) {
                failures.push(format!("seed {seed}: subgraph {} unowned", id.0));
            }
        }
        let leftovers: BTreeSet<_> = alloc.audit.leftover_subgraphs.iter().collect();
        for group in &alloc.groups {
            if group.subgraphs.len() > acfg.n_max {
                failures.push(format!(
                    "seed {seed}: group {} holds {} subgraphs",
                    group.id,
                    group.subgraphs.len()
                ));
            }
            if group.coherence < acfg.theta_coh - 1e-12 {
                let absorbed_leftover =
                    group.subgraphs.iter().any(|sg| leftovers.contains(sg));
                if !absorbed_leftover {
                    failures.push(format!(
                        "seed {seed}: group {} below coherence {} without a leftover",
                        group.id, group.coherence
                    ));
                }
                if !alloc.audit.coherence_violations.contains(&group.id) {
                    failures.push(format!(
                        "seed {seed}: group {} violation missing from the audit",
                        group.id
                    ));
                }
            }
        }
        for gid in &alloc.audit.coherence_violations {
            let group = alloc.group(*gid).unwrap();
            if group.coherence >= acfg.theta_coh {
                failures.push(format!(
                    "seed {seed}: audit flags group {gid} at coherence {}",
                    group.coherence
                ));
            }
        }
    }
    verdict("allocation constraints", failures.is_empty(), failures.join(" | "));
}

/// Rewordings that keep the entity mention but share no content vocabulary
/// with the training templates, so cosine similarity stays far below the
/// similar-branch threshold and the router must fall back to path planning.
fn variant_shape(id: &str) -> &'static str {
    match id {
        "t01" | "t05" | "t09" | "t18" | "t19" | "t26" | "e01" | "e05" | "e17" => {
            "under whose helm came {}"
        }
        "t06" | "t10" | "t14" | "t21" | "e08" | "e13" => "pen credit behind {}",
        "t02" | "t07" | "t15" | "t17" | "t24" | "t27" | "t28" | "e02" | "e06" | "e11"
        | "e14" | "e20" => "billed troupe alongside {}",
        "t03" | "t11" | "t12" | "t23" | "e03" | "e07" | "e12" | "e15" => {
            "label bucket stamped onto {}"
        }
        "t04" | "t08" | "t16" | "t20" | "t25" | "t29" | "e04" | "e10" | "e16" => {
            "calendar stamp carried by {}"
        }
        "t13" | "t22" | "t30" | "e09" | "e18" | "e19" => "titles tied by helm or troupe to {}",
        other => panic!("no variant shape for {other}"),
    }
}

#[test]
fn routing_determinism() {
    let dir = movie_dir();
    let cfg = movie_config();
    let mut runs: Vec<Vec<String>> = Vec::new();
    let mut failures = Vec::new();

    for run in 0..3 {
        let mut dataset = load_dir(&dir).unwrap();
        let part = partition(&dataset.train, &dataset.kg, &cfg.partition).unwrap();
        let alloc = allocate(&dataset.train, &part, &dataset.kg, &cfg.allocation).unwrap();
        record_patterns(&mut dataset.train, &part, &alloc, &dataset.kg).unwrap();

        let originals: Vec<QuestionRecord> = dataset
            .train
            .records()
            .iter()
            .chain(dataset.test.iter())
            .cloned()
            .collect();
        assert_eq!(originals.len(), 50, "fixture should hold 30 + 20 questions");

        let mut questions: Vec<(bool, QuestionRecord)> = Vec::new();
        for orig in &originals {
            let twin = QuestionRecord::new(
                format!("twin-{}", orig.id),
                orig.raw.clone(),
                orig.links.clone(),
                BTreeSet::new(),
                None,
                &dataset.kg,
                &dataset.stopwords,
                &dataset.lexicon,
            )
            .unwrap();
            questions.push((true, twin));

            let entity = orig.links[0].entity;
            let name = dataset.kg.entity_name(entity).to_string();
            let text = variant_shape(&orig.id).replace("{}", &name);
            let start = text.find(&name).unwrap();
            let link = EntityLink {
                start,
                end: start + name.len(),
                entity,
            };
            let variant = QuestionRecord::new(
                format!("variant-{}", orig.id),
                text,
                vec![link],
                BTreeSet::new(),
                None,
                &dataset.kg,
                &dataset.stopwords,
                &dataset.lexicon,
            )
            .unwrap();
            questions.push((false, variant));
        }
        assert_eq!(questions.len(), 100);

        let mut serialized = Vec::with_capacity(questions.len());
        for (is_twin, record) in &questions {
            let plan = route(
                record,
                &dataset.train,
                &part,
                &alloc,
                &dataset.kg,
                &cfg.router,
            )
            .unwrap();
            if *is_twin && !matches!(plan.mode, PlanMode::Similar | PlanMode::Mixed) {
                failures.push(format!(
                    "run {run}: twin {} took {:?} instead of the similar branch",
                    record.id, plan.mode
                ));
            }
            if !*is_twin && plan.mode != PlanMode::PathDriven {
                failures.push(format!(
                    "run {run}: variant {} took {:?} instead of the path branch",
                    record.id, plan.mode
                ));
            }
            serialized.push(serde_json::to_string(&plan).unwrap());
        }
        runs.push(serialized);
    }

    if runs[0] != runs[1] || runs[1] != runs[2] {
        failures.push("plans differ across repeated runs".to_string());
    }
    verdict("routing determinism", failures.is_empty(), failures.join(" | "));
}

fn kept_weight(graph: &ConflictGraph, kept: &BTreeSet<Triple>) -> f64 {
    graph
        .vertices
        .iter()
        .zip(&graph.scores)
        .filter(|(t, _)| kept.contains(t))
        .map(|(_, s)| *s)
        .sum()
}

fn best_independent_weight(graph: &ConflictGraph) -> f64 {
    let n = graph.vertices.len();
    let mut best = 0.0f64;
    for mask in 0u32..(1 << n) {
        if graph
            .edges
            .iter()
            .any(|&(i, j, _)| mask & (1 << i) != 0 && mask & (1 << j) != 0)
        {
            continue;
        }
        let weight: f64 = (0..n)
            .filter(|i| mask & (1 << i) != 0)
            .map(|i| graph.scores[i])
            .sum();
        best = best.max(weight);
    }
    best
}

fn random_conflict_graph(rng: &mut ChaCha8Rng, n: usize, edge_prob: f64) -> ConflictGraph {
    let vertices: Vec<Triple> = (0..n)
        .map(|i| Triple {
            head: EntityId(i as u32),
            relation: RelationId(rng.gen_range(0..3)),
            tail: EntityId(1000 + rng.gen_range(0..50) as u32),
        })
        .collect();
    let mut edges = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            if rng.gen_bool(edge_prob) {
                let rule = if rng.gen_bool(0.5) {
                    ConflictRule::FunctionalViolation
                } else {
                    ConflictRule::NegationPair
                };
                edges.push((i, j, rule));
            }
        }
    }
    let scores = (0..n).map(|_| rng.gen_range(5..=100) as f64 / 100.0).collect();
    ConflictGraph {
        vertices,
        edges,
        scores,
    }
}

#[test]
fn conflict_resolution_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut failures = Vec::new();

    for case in 0..200 {
        let n = rng.gen_range(2..=12usize);
        let edge_prob = rng.gen_range(0.1..0.5);
        let graph = random_conflict_graph(&mut rng, n, edge_prob);
        let resolution = resolve(&graph);

        let index: BTreeMap<Triple, usize> = graph
            .vertices
            .iter()
            .enumerate()
            .map(|(i, t)| (*t, i))
            .collect();
        for &(i, j, _) in &graph.edges {
            if resolution.kept.contains(&graph.vertices[i])
                && resolution.kept.contains(&graph.vertices[j])
            {
                failures.push(format!("case {case}: kept conflicting pair {i},{j}"));
            }
        }
        let got = kept_weight(&graph, &resolution.kept);
        let want = best_independent_weight(&graph);
        if (got - want).abs() > 1e-9 {
            failures.push(format!("case {case}: kept weight {got} vs optimum {want}"));
        }
        let accounted = resolution.kept.len() + resolution.removed.len();
        if accounted != graph.vertices.len() {
            failures.push(format!("case {case}: {accounted} triples accounted"));
        }
        drop(index);
    }

    // Connected 50-vertex graphs overflow the exact solver on purpose.
    for round in 0..3 {
        let n = 50;
        let vertices: Vec<Triple> = (0..n)
            .map(|i| Triple {
                head: EntityId(i as u32),
                relation: RelationId(0),
                tail: EntityId(500),
            })
            .collect();
        let mut edges: Vec<(usize, usize, ConflictRule)> = (0..n - 1)
            .map(|i| (i, i + 1, ConflictRule::FunctionalViolation))
            .collect();
        for i in 0..n {
            for j in (i + 2)..n {
                if rng.gen_bool(0.1) {
                    edges.push((i, j, ConflictRule::FunctionalViolation));
                }
            }
        }
        let scores = (0..n).map(|_| rng.gen_range(5..=100) as f64 / 100.0).collect();
        let graph = ConflictGraph {
            vertices,
            edges,
            scores,
        };
        let resolution = resolve(&graph);
        if !resolution.flags.iter().any(|f| f.contains("resolved greedily")) {
            failures.push(format!("round {round}: large component missed the greedy path"));
        }
        for &(i, j, _) in &graph.edges {
            if resolution.kept.contains(&graph.vertices[i])
                && resolution.kept.contains(&graph.vertices[j])
            {
                failures.push(format!("round {round}: greedy output kept a conflict"));
            }
        }
    }

    verdict("conflict resolution oracle", failures.is_empty(), failures.join(" | "));
}

fn run_movie_stages(cfg: &PipelineConfig, in_dir: &std::path::Path, out: &std::path::Path) {
    cmd_partition(cfg, in_dir, out, false).unwrap();
    cmd_allocate(cfg, in_dir, out, false).unwrap();
    cmd_route(cfg, in_dir, out, false).unwrap();
    cmd_answer(cfg, in_dir, out, false).unwrap();
    cmd_eval(cfg, in_dir, out, false).unwrap();
}

fn answered_by_id(out: &std::path::Path) -> BTreeMap<String, Vec<String>> {
    let text = fs::read_to_string(out.join("answers.json")).unwrap();
    let doc: serde_json::Value = serde_json::from_str(&text).unwrap();
    doc["payload"]
        .as_array()
        .unwrap()
        .iter()
        .map(|row| {
            (
                row["id"].as_str().unwrap().to_string(),
                row["answered"]
                    .as_array()
                    .unwrap()
                    .iter()
                    .map(|v| v.as_str().unwrap().to_string())
                    .collect(),
            )
        })
        .collect()
}

#[test]
fn toy_benchmark() {
    let started = Instant::now();
    let dir = movie_dir();
    let cfg = movie_config();
    let mut failures = Vec::new();

    let out_a = tempfile::tempdir().unwrap();
    let out_b = tempfile::tempdir().unwrap();
    run_movie_stages(&cfg, &dir, out_a.path());
    run_movie_stages(&cfg, &dir, out_b.path());

    let report_a = fs::read(out_a.path().join("eval_report.json")).unwrap();
    let report_b = fs::read(out_b.path().join("eval_report.json")).unwrap();
    if report_a != report_b {
        failures.push("eval reports differ between runs".to_string());
    }

    let doc: serde_json::Value = serde_json::from_slice(&report_a).unwrap();
    let report = &doc["payload"];
    let total = report["total_questions"].as_u64().unwrap();
    if total != 20 {
        failures.push(format!("{total} questions evaluated"));
    }
    let hit_rate = report["aggregates"]["hit"].as_f64().unwrap();
    let hits_at_1 = report["aggregates"]["hits_at_1"].as_f64().unwrap();
    let mean_f1 = report["aggregates"]["f1"].as_f64().unwrap();
    if hit_rate != 1.0 {
        failures.push(format!("hit rate {hit_rate}"));
    }
    if hits_at_1 < 0.90 {
        failures.push(format!("hits@1 {hits_at_1}"));
    }
    if (mean_f1 - 0.965).abs() > 1e-9 {
        failures.push(format!("mean f1 {mean_f1}"));
    }
    let coverage = report["efficiency"]["g_coverage"].as_f64().unwrap();
    if coverage != 1.0 {
        failures.push(format!("gold path coverage {coverage}"));
    }

    let answered = answered_by_id(out_a.path());
    for (id, want) in EXPECTED_ANSWERS {
        match answered.get(*id) {
            Some(got) if got == want => {}
            Some(got) => failures.push(format!("{id}: answered {got:?}, expected {want:?}")),
            None => failures.push(format!("{id}: missing from answers")),
        }
    }

    let elapsed = started.elapsed().as_secs_f64();
    if elapsed >= 30.0 {
        failures.push(format!("benchmark took {elapsed:.1}s"));
    }
    verdict("toy benchmark", failures.is_empty(), failures.join(" | "));
}

/// Four hub-and-leaf clusters of 12 entities each, all sharing one relation
/// and type vocabulary so their subgraphs are interchangeable to a router
/// that only sees type-level patterns.
fn star_world() -> (KnowledgeGraph, QuestionBase, Vec<String>) {
    let cluster_words = ["alpha", "beta", "gamma", "delta"];
    let mut kb = String::new();
    let mut entity_types = BTreeMap::new();
    for c in 0..4 {
        let hub = format!("h{c}");
        entity_types.insert(hub.clone(), "hub".to_string());
        for j in 0..11 {
            let leaf = format!("l{c}_{j}");
            kb.push_str(&format!("{hub}\tlinks\t{leaf}\n"));
            entity_types.insert(leaf, "leaf".to_string());
        }
    }
    let schema = Schema {
        entity_types,
        ..Schema::default()
    };
    let (kg, _) = KnowledgeGraph::from_text(&kb, schema).unwrap();

    let stopwords = splitrag::question::Stopwords::default_list();
    let lexicon = splitrag::question::Lexicon::empty();
    let mut base = QuestionBase::new();
    let mut texts = Vec::new();
    for (c, word) in cluster_words.iter().enumerate() {
        let text = format!("{word} fanout probe");
        texts.push(text.clone());
        let record = QuestionRecord::new(
            format!("train{c}"),
            text,
            Vec::new(),
            BTreeSet::new(),
            None,
            &kg,
            &stopwords,
            &lexicon,
        )
        .unwrap();
        let idx = base.add_record(record).unwrap();
        let paths = (0..11)
            .map(|j| {
                let hub = format!("h{c}");
                let leaf = format!("l{c}_{j}");
                Path::from_names(&kg, &[&hub, "links", &leaf]).unwrap()
            })
            .collect();
        base.attach_paths(idx, paths).unwrap();
    }
    base.finalize();
    (kg, base, texts)
}

fn route_star_questions(
    kg: &KnowledgeGraph,
    base: &QuestionBase,
    part: &splitrag::Partition,
    alloc: &Allocation,
    texts: &[String],
) -> Vec<QuestionTrace> {
    let stopwords = splitrag::question::Stopwords::default_list();
    let lexicon = splitrag::question::Lexicon::empty();
    let cfg = splitrag::route::RouterConfig::default();
    let mut traces = Vec::new();
    for (i, text) in texts.iter().enumerate() {
        let record = QuestionRecord::new(
            format!("probe{i}"),
            text.clone(),
            Vec::new(),
            BTreeSet::new(),
            None,
            kg,
            &stopwords,
            &lexicon,
        )
        .unwrap();
        let plan = route(&record, base, part, alloc, kg, &cfg).unwrap();
        assert!(
            matches!(plan.mode, PlanMode::Similar | PlanMode::Mixed),
            "probe {i} should reuse the stored template, got {:?}",
            plan.mode
        );
        let mut activated = BTreeSet::new();
        for a in &plan.assignments {
            activated.extend(a.subgraphs.iter().copied());
        }
        traces.push(QuestionTrace {
            id: record.id,
            mode: "similar".to_string(),
            activated: activated.into_iter().collect(),
            agents: Vec::new(),
            timings: StageTimings {
                route_ms: 0,
                retrieve_ms: 0,
                fuse_ms: 0,
            },
            flags: Vec::new(),
        });
    }
    traces
}

#[test]
fn search_space_reduction() {
    let (kg, base, texts) = star_world();
    assert_eq!(kg.entity_count(), 48);
    let pcfg = PartitionConfig {
        eta_max: Some(12),
        ..PartitionConfig::default()
    };
    let part = partition(&base, &kg, &pcfg).unwrap();
    assert_eq!(part.subgraphs.len(), 4, "one subgraph per cluster");
    let mut failures = Vec::new();

    // Normal allocation: one agent per cluster.
    let mut split_base = base.clone();
    let split_alloc = allocate(&split_base, &part, &kg, &AllocationConfig::default()).unwrap();
    record_patterns(&mut split_base, &part, &split_alloc, &kg).unwrap();
    let traces = route_star_questions(&kg, &split_base, &part, &split_alloc, &texts);
    for t in &traces {
        if t.activated.len() > 2 {
            failures.push(format!("{} activated {} subgraphs", t.id, t.activated.len()));
        }
    }
    let split_space = measure_search_space(&traces, &part, &kg).unwrap();
    if split_space.mean_ratio > 0.6 {
        failures.push(format!("split ratio {}", split_space.mean_ratio));
    }

    // Ablation: every subgraph under a single agent, as one merged group.
    let merged_alloc = Allocation {
        groups: vec![AgentGroup {
            id: 0,
            subgraphs: part.ids(),
            coherence: 1.0,
            seed_question: None,
            from_leftovers: false,
        }],
        owner: part.ids().into_iter().map(|id| (id, 0)).collect(),
        audit: AllocationAudit::default(),
    };
    let mut merged_base = base.clone();
    record_patterns(&mut merged_base, &part, &merged_alloc, &kg).unwrap();
    let traces = route_star_questions(&kg, &merged_base, &part, &merged_alloc, &texts);
    let merged_space = measure_search_space(&traces, &part, &kg).unwrap();
    if (merged_space.mean_ratio - 1.0).abs() > 1e-12 {
        failures.push(format!("merged ratio {}", merged_space.mean_ratio));
    }

    verdict("search space reduction", failures.is_empty(), failures.join(" | "));
}

/// Movie fixture with three extra release years that contradict the real
/// ones, both in the graph and as training annotations.
fn poisoned_movie_dataset(data: &std::path::Path) {
    let src = movie_dir();
    for name in ["kb.txt", "schema.json", "lexicon.json", "qa_train.jsonl", "qa_test.jsonl"] {
        fs::copy(src.join(name), data.join(name)).unwrap();
    }

    let mut kb = fs::read_to_string(data.join("kb.txt")).unwrap();
    kb.push_str("The Long Causeway\trelease_year\t1777\n");
    kb.push_str("The Orbital Garden\trelease_year\t1776\n");
    kb.push_str("Rain on Copper Street\trelease_year\t1775\n");
    fs::write(data.join("kb.txt"), kb).unwrap();

    let mut schema: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(data.join("schema.json")).unwrap()).unwrap();
    for year in ["1775", "1776", "1777"] {
        schema["entity_types"][year] = serde_json::Value::String("year".to_string());
    }
    fs::write(data.join("schema.json"), serde_json::to_string_pretty(&schema).unwrap()).unwrap();

    let mut train = fs::read_to_string(data.join("qa_train.jsonl")).unwrap();
    let poison = [
        ("p01", "what year did The Long Causeway come out", "The Long Causeway", "1777"),
        ("p02", "which year saw the release of The Orbital Garden", "The Orbital Garden", "1776"),
        ("p03", "what year did Rain on Copper Street come out", "Rain on Copper Street", "1775"),
    ];
    for (id, question, name, year) in poison {
        let start = question.find(name).unwrap();
        let row = serde_json::json!({
            "id": id,
            "question": question,
            "entities": [{"span": [start, start + name.len()], "name": name}],
            "answers": [year],
            "qtype": "1-hop",
            "path": [name, "release_year", year],
        });
        train.push_str(&row.to_string());
        train.push('\n');
    }
    fs::write(data.join("qa_train.jsonl"), train).unwrap();
}

#[test]
fn conflict_ablation() {
    let data = tempfile::tempdir().unwrap();
    poisoned_movie_dataset(data.path());

    let cfg_on = movie_config();
    let mut cfg_off = cfg_on.clone();
    cfg_off.fusion.enable_conflict_detection = false;

    let out_on = tempfile::tempdir().unwrap();
    let out_off = tempfile::tempdir().unwrap();
    for (cfg, out) in [(&cfg_on, &out_on), (&cfg_off, &out_off)] {
        cmd_partition(cfg, data.path(), out.path(), false).unwrap();
        cmd_allocate(cfg, data.path(), out.path(), false).unwrap();
        cmd_route(cfg, data.path(), out.path(), false).unwrap();
        cmd_answer(cfg, data.path(), out.path(), false).unwrap();
    }

    let on = answered_by_id(out_on.path());
    let off = answered_by_id(out_off.path());
    let mut failures = Vec::new();

    // With detection on, the contradictions are resolved away and every
    // answer matches the clean benchmark.
    for (id, want) in EXPECTED_ANSWERS {
        if on.get(*id).map(Vec::as_slice) != Some(&want.iter().map(|s| s.to_string()).collect::<Vec<_>>()[..]) {
            failures.push(format!("detection on: {id} answered {:?}", on.get(*id)));
        }
    }

    let poisoned: BTreeMap<&str, Vec<&str>> = BTreeMap::from([
        ("e04", vec!["1777", "1998"]),
        ("e10", vec!["1776", "2004"]),
        ("e16", vec!["1775", "2019"]),
    ]);
    for (id, _) in EXPECTED_ANSWERS {
        let got = off.get(*id).cloned().unwrap_or_default();
        match poisoned.get(id) {
            Some(want) => {
                let want: Vec<String> = want.iter().map(|s| s.to_string()).collect();
                if got != want {
                    failures.push(format!("detection off: {id} answered {got:?}"));
                }
            }
            None => {
                if Some(&got) != on.get(*id) {
                    failures.push(format!(
                        "detection off changed unaffected question {id}: {got:?}"
                    ));
                }
            }
        }
    }

    verdict("conflict ablation", failures.is_empty(), failures.join(" | "));
}

#[test]
fn metric_correctness() {
    let cases: &[(&[&str], &[&str], bool, bool, f64)] = &[
        (&["a"], &["a"], true, true, 1.0),
        (&[], &["a"], false, false, 0.0),
        (&["a", "b"], &["a"], true, true, 2.0 / 3.0),
        (&["b", "a"], &["a"], true, false, 2.0 / 3.0),
        (&["a", "b", "c"], &["a", "b", "c", "d"], true, true, 6.0 / 7.0),
        (&["x"], &["a"], false, false, 0.0),
        (&["a", "x"], &["a", "b"], true, true, 0.5),
        (&["x", "y", "a"], &["a"], true, false, 0.5),
        (&["a", "a", "b"], &["a"], true, true, 2.0 / 3.0),
        (&["c", "a", "b"], &["a", "b", "c"], true, true, 1.0),
    ];
    let mut failures = Vec::new();
    for (i, (answered, gold, want_hit, want_top, want_f1)) in cases.iter().enumerate() {
        let answered: Vec<String> = answered.iter().map(|s| s.to_string()).collect();
        let gold: BTreeSet<String> = gold.iter().map(|s| s.to_string()).collect();
        if hit(&answered, &gold) != *want_hit {
            failures.push(format!("case {i}: hit"));
        }
        if hit_at_1(&answered, &gold) != *want_top {
            failures.push(format!("case {i}: hits@1"));
        }
        let got = f1(&answered, &gold);
        if (got - want_f1).abs() > 1e-12 {
            failures.push(format!("case {i}: f1 {got} vs {want_f1}"));
        }
    }
    verdict("metric correctness", failures.is_empty(), failures.join(" | "));
}
