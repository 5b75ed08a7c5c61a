//! Multi-agent retrieval over a partitioned knowledge graph.
//!
//! The pipeline splits a knowledge graph into question-aligned subgraphs,
//! groups the subgraphs under agents, routes new questions to the agents
//! whose subgraphs match, retrieves evidence paths in parallel, reconciles
//! conflicting facts and synthesizes an answer. Every stage is deterministic
//! given its inputs; the LLM gateway ships with an offline stub so the whole
//! flow runs without network access.

pub mod allocate;
pub mod config;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod fusion;
pub mod gateway;
pub mod kg;
pub mod partition;
pub mod pipeline;
pub mod route;
pub mod question;
pub mod retrieve;

pub use error::{Result, SplitRagError};
pub use kg::{EntityId, KnowledgeGraph, Path, RelationId, Schema, Triple, TripleId, TypeId};
pub use partition::{Partition, PartitionConfig, SubgraphId};
pub use question::{QuestionBase, QuestionRecord};
