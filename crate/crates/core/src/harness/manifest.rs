//! Run manifest: what data a run saw and how it was seeded.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::train::Prepared;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub dataset: String,
    /// SHA-256 of the training pool before subsampling.
    pub dataset_hash: String,
    pub seeds: Vec<u64>,
    /// `label name -> class id`, ordered by id.
    pub label_map: Vec<(String, usize)>,
    pub subsample_ratio: f64,
    pub train_size: usize,
    pub dev_size: usize,
    pub test_size: usize,
    pub vocab_size: usize,
    pub config: String,
}

impl Manifest {
    pub fn new(config: &ExperimentConfig, data: &Prepared) -> Self {
        Self {
            dataset: data.train.name.clone(),
            dataset_hash: data.source_hash.clone(),
            seeds: config.seeds.clone(),
            label_map: data
                .train
                .label_names
                .iter()
                .enumerate()
                .map(|(id, name)| (name.clone(), id))
                .collect(),
            subsample_ratio: config.subsample_ratio,
            train_size: data.train.len(),
            dev_size: data.dev.len(),
            test_size: data.test.len(),
            vocab_size: data.vocab.len(),
            config: config.to_text(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json() + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::format(e.line(), e.to_string()))
    }
}
