//! Error type shared across the pipeline.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SplitRagError {
    #[error("malformed triple on line {line}: {reason}")]
    MalformedTriple { line: usize, reason: String },

    #[error("empty graph: {0}")]
    EmptyGraph(String),

    #[error("unknown entity type for {0:?}: entity is missing from the schema")]
    UnknownEntityType(String),

    #[error("unknown entity {0:?}")]
    UnknownEntity(String),

    #[error("unknown relation {0:?}")]
    UnknownRelation(String),

    #[error("self-loop {entity:?} via {relation:?} but the relation is not declared reflexive")]
    UndeclaredSelfLoop { entity: String, relation: String },

    #[error("invalid path: {0}")]
    InvalidPath(String),

    #[error("invalid span: {0}")]
    InvalidSpan(String),

    #[error("question base not finalized: {0}")]
    NotFinalized(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("partition error: {0}")]
    Partition(String),

    #[error("allocation error: {0}")]
    Allocation(String),

    #[error("routing error: {0}")]
    Routing(String),

    #[error("fusion error: {0}")]
    Fusion(String),

    #[error("prompt template error: {0}")]
    Template(String),

    #[error("gateway error after {attempts} attempt(s): {reason}")]
    Gateway { attempts: usize, reason: String },

    #[error("missing upstream artifact for stage {stage:?}: expected {path}")]
    MissingArtifact { stage: String, path: String },

    #[error("config hash mismatch for stage {stage:?}: artifact was produced with {actual}, current config is {expected}")]
    ConfigHashMismatch {
        stage: String,
        expected: String,
        actual: String,
    },

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serde(String),
}

impl From<serde_json::Error> for SplitRagError {
    fn from(e: serde_json::Error) -> Self {
        SplitRagError::Serde(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, SplitRagError>;
