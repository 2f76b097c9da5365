//! Run directories: inputs recorded at training time, reloaded by `eval` and
//! `explain`.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use g3_core::dataset::{class_weights, DatasetManifest, ImageRecord, Split};
use g3_core::embedstore::{check_clue_alignment, read_store, EmbeddingMatrix};
use g3_core::geoparse::PseudoLabelMatrix;
use g3_core::labels::LabelSet;
use g3_core::trainer::{class_targets, ImageSet, TrainData};

pub const RUN_FILE: &str = "run.json";
pub const FINAL_CHECKPOINT: &str = "model.g3ck";
pub const CHECKPOINT_DIR: &str = "checkpoints";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunInputs {
    pub label: String,
    pub manifest: PathBuf,
    pub query_store: PathBuf,
    pub feature_stores: Vec<PathBuf>,
    pub clue_store: Option<PathBuf>,
    pub pseudo: Option<PathBuf>,
    pub clues: Option<PathBuf>,
    pub alpha: f64,
}

impl RunInputs {
    pub fn read(run_dir: &Path) -> Result<Self> {
        let path = run_dir.join(RUN_FILE);
        let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn write(&self, run_dir: &Path) -> Result<()> {
        let path = run_dir.join(RUN_FILE);
        std::fs::write(&path, serde_json::to_string_pretty(self)? + "\n")
            .with_context(|| format!("writing {}", path.display()))
    }

    pub fn files(&self) -> Vec<&PathBuf> {
        let mut out = vec![&self.manifest, &self.query_store];
        out.extend(&self.feature_stores);
        out.extend(self.clue_store.iter().chain(&self.pseudo).chain(&self.clues));
        out
    }
}

/// Everything a run needs in memory.
pub struct Loaded {
    pub manifest: DatasetManifest,
    pub labels: LabelSet,
    pub query: EmbeddingMatrix,
    pub features: Vec<EmbeddingMatrix>,
    pub clues: Array2<f64>,
    pub pseudo: Option<PseudoLabelMatrix>,
}

impl Loaded {
    pub fn load(inputs: &RunInputs) -> Result<Self> {
        let manifest = DatasetManifest::read(&inputs.manifest)?;
        let labels = manifest.label_set()?;
        let query = read_store(&inputs.query_store)?;
        let features = inputs
            .feature_stores
            .iter()
            .map(|p| read_store(p).map_err(anyhow::Error::from))
            .collect::<Result<Vec<_>>>()?;
        let pseudo = inputs.pseudo.as_deref().map(PseudoLabelMatrix::read).transpose()?;
        let clues = match &inputs.clue_store {
            Some(p) => {
                let store = read_store(p)?;
                if let Some(ps) = &pseudo {
                    check_clue_alignment(&store, ps.n_clues())?;
                }
                store.to_array()
            }
            None => {
                if pseudo.is_some() {
                    bail!("pseudo labels given without a clue store");
                }
                Array2::zeros((0, 0))
            }
        };
        Ok(Loaded {
            manifest,
            labels,
            query,
            features,
            clues,
            pseudo,
        })
    }

    pub fn image_set(&self, split: Split) -> Result<ImageSet> {
        let recs: Vec<&ImageRecord> = self.manifest.split(split).collect();
        let features: Vec<&EmbeddingMatrix> = self.features.iter().collect();
        Ok(ImageSet::assemble(&recs, &self.labels, &self.query, &features)?)
    }

    pub fn train_data(&self) -> Result<TrainData> {
        let val = self.image_set(Split::Val)?;
        Ok(TrainData {
            train: self.image_set(Split::Train)?,
            val: (!val.is_empty()).then_some(val),
            class_targets: class_targets(self.pseudo.as_ref(), &self.labels, self.clues.nrows())?,
            clues: self.clues.clone(),
            class_weights: class_weights(&self.manifest, &self.labels)?.to_vec(&self.labels)?,
        })
    }
}

/// Joins relative paths onto the data directory.
pub fn resolve(data_dir: Option<&Path>, path: &Path) -> PathBuf {
    match data_dir {
        Some(d) if path.is_relative() => d.join(path),
        _ => path.to_path_buf(),
    }
}

pub fn absolute(path: &Path) -> Result<PathBuf> {
    std::path::absolute(path).with_context(|| format!("resolving {}", path.display()))
}
