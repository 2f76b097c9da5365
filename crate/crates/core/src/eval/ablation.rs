use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::baseline::nearest_neighbor_baseline;
use super::metrics::{aggregate_topk, check_ks, feasible_ks};
use super::report::{EvalReport, ReportRow, Supervision};
use crate::dataset::{DatasetManifest, ImageRecord, Split};
use crate::embedstore::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::geoparse::PseudoLabelMatrix;
use crate::labels::LabelSet;
use crate::trainer::{class_targets, multi_seed, ImageSet, SeedRun, TrainConfig, TrainData};

/// Image representation fed to the classifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureSet {
    /// Feature store alone; it also serves as the attention query.
    Image,
    /// Feature and query stores concatenated; the query store drives attention.
    ImageAux,
}

impl FeatureSet {
    pub fn label(self) -> &'static str {
        match self {
            FeatureSet::Image => "Image",
            FeatureSet::ImageAux => "Image + Aux",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClueSource {
    None,
    Random,
    Guidebook,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cell {
    pub features: FeatureSet,
    pub clues: ClueSource,
    pub supervision: Supervision,
}

impl Cell {
    pub fn label(&self) -> String {
        let base = self.features.label();
        match self.clues {
            ClueSource::None => base.to_string(),
            ClueSource::Random => format!("{base} + Random Text"),
            ClueSource::Guidebook => format!("{base} + Guidebook"),
        }
    }

    fn check(&self) -> Result<()> {
        let ok = match self.clues {
            ClueSource::None | ClueSource::Random => self.supervision == Supervision::NotApplicable,
            ClueSource::Guidebook => self.supervision != Supervision::NotApplicable,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("inconsistent cell {self:?}")))
        }
    }
}

/// The four rows per feature set: no clues, random text, guidebook without
/// and with attention supervision.
pub fn standard_cells(feature_sets: &[FeatureSet]) -> Vec<Cell> {
    let mut out = Vec::new();
    for &features in feature_sets {
        for (clues, supervision) in [
            (ClueSource::None, Supervision::NotApplicable),
            (ClueSource::Random, Supervision::NotApplicable),
            (ClueSource::Guidebook, Supervision::No),
            (ClueSource::Guidebook, Supervision::Yes),
        ] {
            out.push(Cell {
                features,
                clues,
                supervision,
            });
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationConfig {
    pub train: TrainConfig,
    pub seeds: Vec<u64>,
    pub ks: Vec<usize>,
    pub eval_split: Split,
    pub feature_sets: Vec<FeatureSet>,
    /// Adds nearest-neighbor and linear-probe rows over the query store.
    pub baselines: bool,
}

impl Default for AblationConfig {
    fn default() -> Self {
        AblationConfig {
            train: TrainConfig::default(),
            seeds: vec![0, 1, 2, 3, 4],
            ks: vec![1, 5, 10],
            eval_split: Split::Test,
            feature_sets: vec![FeatureSet::Image, FeatureSet::ImageAux],
            baselines: true,
        }
    }
}

pub struct AblationInputs<'a> {
    pub manifest: &'a DatasetManifest,
    pub labels: &'a LabelSet,
    pub query: &'a EmbeddingMatrix,
    pub feature: &'a EmbeddingMatrix,
    pub clues: Option<&'a EmbeddingMatrix>,
    pub random_clues: Option<&'a EmbeddingMatrix>,
    pub pseudo: Option<&'a PseudoLabelMatrix>,
    pub class_weights: Vec<f64>,
}

impl AblationInputs<'_> {
    fn records(&self, split: Split) -> Vec<&ImageRecord> {
        self.manifest.split(split).collect()
    }

    fn image_set(&self, features: FeatureSet, split: Split) -> Result<ImageSet> {
        let recs = self.records(split);
        match features {
            FeatureSet::Image => ImageSet::assemble(&recs, self.labels, self.feature, &[self.feature]),
            FeatureSet::ImageAux => ImageSet::assemble(&recs, self.labels, self.query, &[self.feature, self.query]),
        }
    }

    /// Training data and evaluation images of one cell.
    pub fn cell_data(&self, cell: &Cell, eval_split: Split) -> Result<(TrainData, ImageSet)> {
        cell.check()?;
        let clues = match cell.clues {
            ClueSource::None => Array2::zeros((0, 0)),
            ClueSource::Random => self
                .random_clues
                .ok_or_else(|| Error::Config(format!("{} needs a random-text clue store", cell.label())))?
                .to_array(),
            ClueSource::Guidebook => self
                .clues
                .ok_or_else(|| Error::Config(format!("{} needs a clue store", cell.label())))?
                .to_array(),
        };
        let pseudo = if cell.supervision == Supervision::Yes {
            Some(
                self.pseudo
                    .ok_or_else(|| Error::Config("supervised attention needs pseudo labels".into()))?,
            )
        } else {
            None
        };
        let data = TrainData {
            train: self.image_set(cell.features, Split::Train)?,
            val: Some(self.image_set(cell.features, Split::Val)?),
            class_targets: class_targets(pseudo, self.labels, clues.nrows())?,
            clues,
            class_weights: self.class_weights.clone(),
        };
        let eval = self.image_set(cell.features, eval_split)?;
        Ok((data, eval))
    }
}

fn row_from_runs(model: String, attn_supervision: Supervision, runs: Vec<SeedRun>) -> ReportRow {
    let topk = aggregate_topk(&runs.iter().map(|r| r.topk.clone()).collect::<Vec<_>>());
    ReportRow {
        model,
        attn_supervision,
        topk,
        per_seed: runs,
    }
}

/// Trains and scores one cell over every seed. Unsupervised cells train with
/// alpha = 0.
pub fn run_cell(inputs: &AblationInputs, cell: &Cell, cfg: &AblationConfig) -> Result<ReportRow> {
    let (data, eval) = inputs.cell_data(cell, cfg.eval_split)?;
    let mut train = cfg.train.clone();
    if cell.supervision != Supervision::Yes {
        train.alpha = 0.0;
    }
    let sweep = multi_seed(&train, &cfg.seeds, &data, &eval, &cfg.ks)?;
    log::info!("{} ({}): {:?}", cell.label(), cell.supervision.as_str(), sweep.summary);
    Ok(row_from_runs(cell.label(), cell.supervision, sweep.runs))
}

pub fn ablation_grid(inputs: &AblationInputs, cfg: &AblationConfig) -> Result<EvalReport> {
    if cfg.seeds.is_empty() {
        return Err(Error::Config("no seeds".into()));
    }
    check_ks(&cfg.ks, inputs.labels.len())?;
    if feasible_ks(&cfg.ks, inputs.labels.len()) != cfg.ks {
        return Err(Error::Config("ks must be strictly increasing".into()));
    }
    let mut rows = Vec::new();
    if cfg.baselines {
        let train = inputs.image_set(FeatureSet::Image, Split::Train)?;
        let eval = inputs.image_set(FeatureSet::Image, cfg.eval_split)?;
        let tq = inputs.query.select(&train.ids)?;
        let eq = inputs.query.select(&eval.ids)?;
        let nn = nearest_neighbor_baseline(&tq, &train.labels, &eq, &eval.labels, inputs.labels.len(), &cfg.ks)?;
        rows.push(row_from_runs(
            "Aux Nearest Neighbor".into(),
            Supervision::NotApplicable,
            vec![SeedRun { seed: 0, topk: nn }],
        ));

        let recs = inputs.records(Split::Train);
        let probe_train = ImageSet::assemble(&recs, inputs.labels, inputs.query, &[inputs.query])?;
        let val_recs = inputs.records(Split::Val);
        let probe_val = ImageSet::assemble(&val_recs, inputs.labels, inputs.query, &[inputs.query])?;
        let eval_recs = inputs.records(cfg.eval_split);
        let probe_eval = ImageSet::assemble(&eval_recs, inputs.labels, inputs.query, &[inputs.query])?;
        let data = TrainData {
            train: probe_train,
            val: Some(probe_val),
            clues: Array2::zeros((0, 0)),
            class_targets: Array2::zeros((inputs.labels.len(), 0)),
            class_weights: inputs.class_weights.clone(),
        };
        let train_cfg = TrainConfig {
            alpha: 0.0,
            ..cfg.train.clone()
        };
        let sweep = multi_seed(&train_cfg, &cfg.seeds, &data, &probe_eval, &cfg.ks)?;
        rows.push(row_from_runs(
            "Aux Linear Probe".into(),
            Supervision::NotApplicable,
            sweep.runs,
        ));
    }
    for cell in standard_cells(&cfg.feature_sets) {
        rows.push(run_cell(inputs, &cell, cfg)?);
    }
    let report = EvalReport {
        split: cfg.eval_split,
        ks: cfg.ks.clone(),
        rows,
        predictions: Vec::new(),
    };
    report.validate()?;
    Ok(report)
}
