//! Directory-based dataset loading.
//!
//! A dataset directory holds `kb.txt` (tab-separated triples), `schema.json`,
//! `qa_train.jsonl` and `qa_test.jsonl`, plus optional `stopwords.txt` (one
//! word per line) and `lexicon.json` (string-to-string normalization map).
//! QA lines look like
//!
//! ```text
//! {"id":"t1","question":"who directed X","entities":[{"span":[13,14],"name":"X"}],
//!  "answers":["Y"],"qtype":"director","path":["X","directed_by","Y"]}
//! ```
//!
//! `path` is the alternating entity/relation chain that answers the question;
//! `paths` accepts several such chains when one question has multiple gold
//! derivations. Lines whose entities or paths name something missing from the
//! graph are skipped with a warning; structural problems (unreadable JSON,
//! bad spans) abort the load.

use std::path::Path as FsPath;

use serde::Deserialize;

use crate::error::{Result, SplitRagError};
use crate::kg::{KnowledgeGraph, Path};
use crate::question::{EntityLink, Lexicon, QuestionBase, QuestionRecord, Stopwords};

pub const KB_FILE: &str = "kb.txt";
pub const SCHEMA_FILE: &str = "schema.json";
pub const TRAIN_FILE: &str = "qa_train.jsonl";
pub const TEST_FILE: &str = "qa_test.jsonl";
pub const STOPWORDS_FILE: &str = "stopwords.txt";
pub const LEXICON_FILE: &str = "lexicon.json";

#[derive(Debug, Deserialize)]
struct QaEntity {
    span: [usize; 2],
    name: String,
}

#[derive(Debug, Deserialize)]
struct QaLine {
    id: String,
    question: String,
    #[serde(default)]
    entities: Vec<QaEntity>,
    #[serde(default)]
    answers: Vec<String>,
    #[serde(default)]
    qtype: Option<String>,
    #[serde(default)]
    path: Option<Vec<String>>,
    #[serde(default)]
    paths: Option<Vec<Vec<String>>>,
}

#[derive(Debug)]
pub struct Dataset {
    pub kg: KnowledgeGraph,
    /// Finalized training base, paths attached.
    pub train: QuestionBase,
    pub test: Vec<QuestionRecord>,
    pub stopwords: Stopwords,
    pub lexicon: Lexicon,
    pub warnings: Vec<String>,
}

fn require(dir: &FsPath, name: &str) -> Result<String> {
    let path = dir.join(name);
    if !path.is_file() {
        return Err(SplitRagError::Dataset(format!(
            "missing {} in {}",
            name,
            dir.display()
        )));
    }
    Ok(std::fs::read_to_string(path)?)
}

/// Parses one QA file. Records that reference unknown entities or relations
/// come back as warnings instead of records.
fn load_qa(
    text: &str,
    file: &str,
    kg: &KnowledgeGraph,
    stopwords: &Stopwords,
    lexicon: &Lexicon,
    warnings: &mut Vec<String>,
) -> Result<Vec<QuestionRecord>> {
    let mut records = Vec::new();
    'lines: for (lineno, line) in text.lines().enumerate() {
        let lineno = lineno + 1;
        if line.trim().is_empty() {
            continue;
        }
        let qa: QaLine = serde_json::from_str(line).map_err(|e| {
            SplitRagError::Dataset(format!("{file} line {lineno}: {e}"))
        })?;

        let mut links = Vec::new();
        for entity in &qa.entities {
            match kg.entity_id(&entity.name) {
                Some(id) => links.push(EntityLink {
                    start: entity.span[0],
                    end: entity.span[1],
                    entity: id,
                }),
                None => {
                    warnings.push(format!(
                        "{file} line {lineno}: skipped {}: unknown entity {}",
                        qa.id, entity.name
                    ));
                    continue 'lines;
                }
            }
        }

        let mut chains: Vec<Vec<String>> = Vec::new();
        if let Some(p) = qa.path {
            chains.push(p);
        }
        if let Some(ps) = qa.paths {
            chains.extend(ps);
        }
        let mut paths = Vec::new();
        for chain in &chains {
            let names: Vec<&str> = chain.iter().map(String::as_str).collect();
            match Path::from_names(kg, &names) {
                Ok(p) => paths.push(p),
                Err(
                    e @ (SplitRagError::UnknownEntity(_) | SplitRagError::UnknownRelation(_)),
                ) => {
                    warnings.push(format!(
                        "{file} line {lineno}: skipped {}: {e}",
                        qa.id
                    ));
                    continue 'lines;
                }
                Err(e) => return Err(e),
            }
        }

        let mut record = QuestionRecord::new(
            qa.id,
            qa.question,
            links,
            qa.answers.into_iter().collect(),
            qa.qtype,
            kg,
            stopwords,
            lexicon,
        )?;
        record.paths = paths;
        records.push(record);
    }
    Ok(records)
}

pub fn load_dir(dir: &FsPath) -> Result<Dataset> {
    let kb_text = require(dir, KB_FILE)?;
    let schema_text = require(dir, SCHEMA_FILE)?;
    let schema = crate::kg::Schema::from_json(&schema_text)?;
    let (kg, report) = KnowledgeGraph::from_text(&kb_text, schema)?;
    let mut warnings = report.warnings;

    let stopwords = match std::fs::read_to_string(dir.join(STOPWORDS_FILE)) {
        Ok(text) => Stopwords::from_text(&text),
        Err(_) => Stopwords::default_list(),
    };
    let lexicon = match std::fs::read_to_string(dir.join(LEXICON_FILE)) {
        Ok(text) => Lexicon::from_json(&text)?,
        Err(_) => Lexicon::empty(),
    };

    let train_text = require(dir, TRAIN_FILE)?;
    let test_text = require(dir, TEST_FILE)?;
    let train_records = load_qa(&train_text, TRAIN_FILE, &kg, &stopwords, &lexicon, &mut warnings)?;
    let test = load_qa(&test_text, TEST_FILE, &kg, &stopwords, &lexicon, &mut warnings)?;

    let mut train = QuestionBase::new();
    for record in train_records {
        train.add_record(record)?;
    }
    train.finalize();

    Ok(Dataset {
        kg,
        train,
        test,
        stopwords,
        lexicon,
        warnings,
    })
}

/// Graph plus finalized training base, the pair most callers want.
pub fn load_metaqa_style(dir: &FsPath) -> Result<(KnowledgeGraph, QuestionBase)> {
    let dataset = load_dir(dir)?;
    Ok((dataset.kg, dataset.train))
}
