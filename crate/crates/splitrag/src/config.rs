//! Pipeline-wide configuration and content hashing.
//!
//! One TOML file configures every stage; absent sections and keys fall back
//! to defaults. Stages stamp their artifacts with a hash over the canonical
//! config and the dataset files, so a downstream command can refuse to mix
//! artifacts produced under different settings.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::allocate::AllocationConfig;
use crate::dataset;
use crate::error::{Result, SplitRagError};
use crate::fusion::FusionConfig;
use crate::gateway::GatewayConfig;
use crate::partition::PartitionConfig;
use crate::retrieve::RetrieverConfig;
use crate::route::RouterConfig;

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub partition: PartitionConfig,
    pub allocation: AllocationConfig,
    pub router: RouterConfig,
    pub retriever: RetrieverConfig,
    pub gateway: GatewayConfig,
    pub fusion: FusionConfig,
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<PipelineConfig> {
        let cfg: PipelineConfig =
            toml::from_str(text).map_err(|e| SplitRagError::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<PipelineConfig> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.allocation.validate()?;
        self.router.validate()?;
        self.retriever.validate()?;
        self.gateway.validate()?;
        // Partition validation needs the entity count only to resolve
        // eta_max; the threshold checks run here.
        self.partition.validate()?;
        Ok(())
    }

    /// Canonical form: field-ordered JSON, the hashing input.
    pub fn canonical(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }
}

/// Digest over the dataset files in fixed order. Optional files contribute
/// only when present, prefixed by name so presence itself is hashed.
pub fn dataset_hash(dir: &Path) -> Result<String> {
    let mut hasher = Sha256::new();
    for name in [
        dataset::KB_FILE,
        dataset::SCHEMA_FILE,
        dataset::TRAIN_FILE,
        dataset::TEST_FILE,
        dataset::STOPWORDS_FILE,
        dataset::LEXICON_FILE,
    ] {
        let path = dir.join(name);
        if path.is_file() {
            hasher.update(name.as_bytes());
            hasher.update([0]);
            hasher.update(std::fs::read(&path)?);
            hasher.update([0]);
        }
    }
    Ok(hex(&hasher.finalize()))
}

/// The stamp written into every stage artifact.
pub fn config_hash(cfg: &PipelineConfig, dataset_dir: &Path) -> Result<String> {
    let mut hasher = Sha256::new();
    hasher.update(cfg.canonical().as_bytes());
    hasher.update([0]);
    hasher.update(dataset_hash(dataset_dir)?.as_bytes());
    Ok(hex(&hasher.finalize()))
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
