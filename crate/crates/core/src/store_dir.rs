use std::path::{Path, PathBuf};

/// On-disk layout of a data directory: the rating log, the fine-tune job
/// book and the registry override file live side by side.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StoreDir {
    root: PathBuf,
}

impl StoreDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn ratings(&self) -> PathBuf {
        self.root.join("ratings.jsonl")
    }

    pub fn jobs(&self) -> PathBuf {
        self.root.join("finetune_jobs.json")
    }

    pub fn registry(&self) -> PathBuf {
        self.root.join("registry.toml")
    }
}
