//! Mini-batch SGD over the attention classifier.

use std::collections::BTreeMap;
use std::time::Instant;

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::dataset::ImageRecord;
use crate::embedstore::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::eval::{evaluate, metrics::aggregate_topk, MeanStd};
use crate::geoparse::PseudoLabelMatrix;
use crate::labels::LabelSet;
use crate::model::{
    backward, batch_loss, forward, AttnNormalization, BatchInput, G3Params, LossConfig, LossParts, Mode, ModelDims,
    ModelOptions, ParamGroup, ParamId, PosWeight,
};
use crate::rng::SplitMix64;

const SHUFFLE_STREAM: u64 = 0x7368_7566;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr_main: f64,
    pub lr_attn: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub alpha: f64,
    pub seed: u64,
    pub momentum: f64,
    pub shuffle: bool,
    pub pos_weight: PosWeight,
    pub attn_relu: bool,
    pub normalization: AttnNormalization,
    /// Top-k values reported on the validation split after every epoch.
    pub eval_ks: Vec<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr_main: 1e-2,
            lr_attn: 1e-3,
            batch_size: 128,
            epochs: 15,
            alpha: 0.75,
            seed: 0,
            momentum: 0.0,
            shuffle: true,
            pos_weight: PosWeight::Auto,
            attn_relu: true,
            normalization: AttnNormalization::Mean,
            eval_ks: vec![1, 5, 10],
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr_main >= 0.0 && self.lr_main.is_finite() && self.lr_attn >= 0.0 && self.lr_attn.is_finite()) {
            return Err(Error::Config("learning rates must be finite and non-negative".into()));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config("batch_size and epochs must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("momentum {} outside [0, 1)", self.momentum)));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Config(format!("alpha {} outside [0, 1]", self.alpha)));
        }
        if let PosWeight::Fixed(l) = self.pos_weight {
            if !(l > 0.0 && l.is_finite()) {
                return Err(Error::Config(format!("positive weight {l} must be > 0")));
            }
        }
        Ok(())
    }

    pub fn model_options(&self) -> ModelOptions {
        ModelOptions {
            attn_relu: self.attn_relu,
            normalization: self.normalization,
        }
    }
}

/// Embeddings and labels of one split, one row per image.
#[derive(Debug, Clone)]
pub struct ImageSet {
    pub ids: Vec<String>,
    pub query: Array2<f64>,
    pub feature: Array2<f64>,
    pub labels: Vec<usize>,
}

impl ImageSet {
    /// Rows of `query` and of the column-wise concatenation of `features`
    /// for each record, in record order.
    pub fn assemble(
        records: &[&ImageRecord],
        labels: &LabelSet,
        query: &EmbeddingMatrix,
        features: &[&EmbeddingMatrix],
    ) -> Result<Self> {
        if features.is_empty() {
            return Err(Error::Config("at least one feature store is required".into()));
        }
        let ids: Vec<String> = records.iter().map(|r| r.image_id.clone()).collect();
        let labels = records
            .iter()
            .map(|r| labels.require_index(&r.country))
            .collect::<Result<Vec<_>>>()?;
        let q = query.select(&ids)?;
        let parts = features.iter().map(|f| f.select(&ids)).collect::<Result<Vec<_>>>()?;
        let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
        let feature = ndarray::concatenate(Axis(1), &views).expect("row counts agree");
        Ok(ImageSet {
            ids,
            query: q,
            feature,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    fn batch(&self, idx: &[usize]) -> (BatchInput, Vec<usize>) {
        let input = BatchInput {
            query: self.query.select(Axis(0), idx),
            feature: self.feature.select(Axis(0), idx),
        };
        (input, idx.iter().map(|&i| self.labels[i]).collect())
    }
}

/// Per-class pseudo-label rows (`n_classes x n_clues`); all zero without
/// pseudo labels.
pub fn class_targets(pseudo: Option<&PseudoLabelMatrix>, labels: &LabelSet, n_clues: usize) -> Result<Array2<f64>> {
    let mut out = Array2::zeros((labels.len(), n_clues));
    if let Some(p) = pseudo {
        if p.n_clues() != n_clues {
            return Err(Error::Shape(format!(
                "pseudo labels cover {} clues, clue store has {n_clues}",
                p.n_clues()
            )));
        }
        for (c, code) in labels.codes().iter().enumerate() {
            for &j in p.clues_for(code).unwrap_or(&[]) {
                out[[c, j]] = 1.0;
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct TrainData {
    pub train: ImageSet,
    pub val: Option<ImageSet>,
    /// `n_clues x d_clue`; `0 x 0` for the clue-free classifier.
    pub clues: Array2<f64>,
    /// `n_classes x n_clues`
    pub class_targets: Array2<f64>,
    pub class_weights: Vec<f64>,
}

impl TrainData {
    pub fn n_classes(&self) -> usize {
        self.class_targets.nrows()
    }

    pub fn dims(&self) -> ModelDims {
        ModelDims {
            query: self.train.query.ncols(),
            feature: self.train.feature.ncols(),
            clue: self.clues.ncols(),
            n_clues: self.clues.nrows(),
            n_classes: self.n_classes(),
        }
    }

    fn check(&self) -> Result<()> {
        if self.train.is_empty() {
            return Err(Error::Data("empty training split".into()));
        }
        if self.class_targets.ncols() != self.clues.nrows() {
            return Err(Error::Shape(format!(
                "targets for {} clues, {} clue rows",
                self.class_targets.ncols(),
                self.clues.nrows()
            )));
        }
        if self.class_weights.len() != self.n_classes() {
            return Err(Error::Shape(format!(
                "{} class weights for {} classes",
                self.class_weights.len(),
                self.n_classes()
            )));
        }
        let c = self.n_classes();
        let sets = std::iter::once(&self.train).chain(self.val.iter());
        for set in sets {
            if set.labels.iter().any(|&y| y >= c) {
                return Err(Error::Shape("label outside the class range".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub epoch: usize,
    pub batch: usize,
    pub size: usize,
    pub loss: LossParts,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Sample-weighted mean of the batch losses.
    pub loss: LossParts,
    pub val_topk: BTreeMap<usize, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRunRecord {
    pub config: TrainConfig,
    pub seed: u64,
    pub dims: ModelDims,
    pub epochs: Vec<EpochRecord>,
    pub steps: Vec<StepRecord>,
    /// Not serialized so that records of identical runs are byte-identical.
    #[serde(skip)]
    pub wall_time_secs: f64,
}

/// Batches of shuffled indices. A trailing batch of one joins the previous
/// batch, since train-mode BN needs two samples.
fn batches(order: &[usize], size: usize) -> Vec<Vec<usize>> {
    let mut out: Vec<Vec<usize>> = order.chunks(size).map(|c| c.to_vec()).collect();
    if out.len() > 1 && out.last().map(Vec::len) == Some(1) {
        let last = out.pop().unwrap();
        out.last_mut().unwrap().extend(last);
    }
    out
}

pub fn train(config: &TrainConfig, params: G3Params, data: &TrainData) -> Result<(G3Params, TrainRunRecord)> {
    train_with(config, params, data, |_, _| Ok(()))
}

/// [`train`] with a callback after every epoch (checkpointing).
pub fn train_with(
    config: &TrainConfig,
    mut params: G3Params,
    data: &TrainData,
    mut on_epoch: impl FnMut(&EpochRecord, &G3Params) -> Result<()>,
) -> Result<(G3Params, TrainRunRecord)> {
    let start = Instant::now();
    config.validate()?;
    data.check()?;
    if params.dims != data.dims() {
        return Err(Error::Shape(format!(
            "parameters for {:?}, data for {:?}",
            params.dims,
            data.dims()
        )));
    }
    let loss_cfg = LossConfig {
        alpha: config.alpha,
        pos_weight: config.pos_weight,
        class_weights: data.class_weights.clone(),
    };
    loss_cfg.validate()?;
    let ks = crate::eval::metrics::feasible_ks(&config.eval_ks, data.n_classes());

    let mut rng = SplitMix64::stream(config.seed, SHUFFLE_STREAM);
    let mut velocity: Vec<Vec<f64>> = ParamId::ALL
        .iter()
        .map(|&id| vec![0.0; params.tensor(id).len()])
        .collect();
    let mut record = TrainRunRecord {
        config: config.clone(),
        seed: config.seed,
        dims: params.dims,
        epochs: Vec::with_capacity(config.epochs),
        steps: Vec::new(),
        wall_time_secs: 0.0,
    };
    let n = data.train.len();
    let mut order: Vec<usize> = (0..n).collect();

    for epoch in 1..=config.epochs {
        if config.shuffle {
            rng.shuffle(&mut order);
        }
        let mut sums = [0.0; 3];
        for (bi, idx) in batches(&order, config.batch_size).iter().enumerate() {
            let (input, labels) = data.train.batch(idx);
            let targets = data.class_targets.select(Axis(0), &labels);
            let trace = forward(&params, &input, &data.clues, Mode::Train)?;
            let loss = batch_loss(&trace, &labels, &targets, &loss_cfg)?;
            if !(loss.total.is_finite() && loss.country.is_finite() && loss.attn.is_finite()) {
                return Err(Error::Diverged {
                    epoch,
                    batch: bi,
                    total: loss.total,
                    country: loss.country,
                    attn: loss.attn,
                });
            }
            let grads = backward(&params, &trace, &data.clues, &labels, &targets, &loss_cfg)?;
            params.update_running_stats(&trace);
            for (k, &id) in ParamId::ALL.iter().enumerate() {
                let lr = match id.group() {
                    ParamGroup::Attention => config.lr_attn,
                    ParamGroup::Main => config.lr_main,
                };
                let g = grads.tensor(id);
                let v = &mut velocity[k];
                let p = params.tensor_mut(id);
                for j in 0..p.len() {
                    let step = if config.momentum > 0.0 {
                        v[j] = config.momentum * v[j] + g[j];
                        v[j]
                    } else {
                        g[j]
                    };
                    p[j] -= lr * step;
                }
            }
            params.check_finite()?;
            let size = idx.len();
            sums[0] += loss.total * size as f64;
            sums[1] += loss.country * size as f64;
            sums[2] += loss.attn * size as f64;
            record.steps.push(StepRecord {
                epoch,
                batch: bi,
                size,
                loss,
            });
        }
        let val_topk = match &data.val {
            Some(val) if !val.is_empty() && !ks.is_empty() => evaluate(&params, val, &data.clues, &ks)?,
            _ => BTreeMap::new(),
        };
        let ep = EpochRecord {
            epoch,
            loss: LossParts {
                total: sums[0] / n as f64,
                country: sums[1] / n as f64,
                attn: sums[2] / n as f64,
            },
            val_topk,
        };
        log::info!(
            "epoch {epoch}: loss {:.5} (country {:.5}, attn {:.5}) val {:?}",
            ep.loss.total,
            ep.loss.country,
            ep.loss.attn,
            ep.val_topk
        );
        on_epoch(&ep, &params)?;
        record.epochs.push(ep);
    }
    record.wall_time_secs = start.elapsed().as_secs_f64();
    Ok((params, record))
}

/// Fresh parameters for `data` seeded by the config.
pub fn init_params(config: &TrainConfig, data: &TrainData) -> G3Params {
    G3Params::init(data.dims(), config.model_options(), config.seed)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaSearch {
    pub best_alpha: f64,
    /// `(alpha, final-epoch validation Top-1)` in grid order.
    pub val_top1: Vec<(f64, f64)>,
}

/// Trains one model per alpha with the same seed and keeps the alpha with the
/// best validation Top-1; ties go to the larger alpha.
pub fn grid_search_alpha(config: &TrainConfig, grid: &[f64], data: &TrainData) -> Result<AlphaSearch> {
    if grid.is_empty() {
        return Err(Error::Config("empty alpha grid".into()));
    }
    if let Some(a) = grid.iter().find(|a| !(0.0..=1.0).contains(*a)) {
        return Err(Error::Config(format!("alpha {a} outside [0, 1]")));
    }
    let val = data
        .val
        .as_ref()
        .filter(|v| !v.is_empty())
        .ok_or_else(|| Error::Data("alpha search needs a validation split".into()))?;
    let mut out = Vec::with_capacity(grid.len());
    let mut best: Option<(f64, f64)> = None;
    for &alpha in grid {
        let cfg = TrainConfig {
            alpha,
            ..config.clone()
        };
        let (params, _) = train(&cfg, init_params(&cfg, data), data)?;
        let top1 = evaluate(&params, val, &data.clues, &[1])?[&1];
        out.push((alpha, top1));
        best = match best {
            Some((a, t)) if t > top1 || (t == top1 && a > alpha) => Some((a, t)),
            _ => Some((alpha, top1)),
        };
    }
    Ok(AlphaSearch {
        best_alpha: best.expect("non-empty grid").0,
        val_top1: out,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRun {
    pub seed: u64,
    pub topk: BTreeMap<usize, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedSweep {
    pub runs: Vec<SeedRun>,
    pub summary: BTreeMap<usize, MeanStd>,
}

/// Trains and evaluates once per seed.
pub fn multi_seed(
    config: &TrainConfig,
    seeds: &[u64],
    data: &TrainData,
    test: &ImageSet,
    ks: &[usize],
) -> Result<SeedSweep> {
    if seeds.is_empty() {
        return Err(Error::Config("no seeds".into()));
    }
    let mut runs = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let cfg = TrainConfig { seed, ..config.clone() };
        let (params, _) = train(&cfg, init_params(&cfg, data), data)?;
        runs.push(SeedRun {
            seed,
            topk: evaluate(&params, test, &data.clues, ks)?,
        });
    }
    let summary = aggregate_topk(&runs.iter().map(|r| r.topk.clone()).collect::<Vec<_>>());
    Ok(SeedSweep { runs, summary })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trailing_singleton_is_merged() {
        let order: Vec<usize> = (0..9).collect();
        let b = batches(&order, 4);
        assert_eq!(b.len(), 2);
        assert_eq!(b[1], vec![4, 5, 6, 7, 8]);
        assert_eq!(batches(&order, 3).len(), 3);
        assert_eq!(batches(&[0], 4), vec![vec![0]]);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = [
            TrainConfig {
                batch_size: 0,
                ..Default::default()
            },
            TrainConfig {
                epochs: 0,
                ..Default::default()
            },
            TrainConfig {
                lr_main: -1.0,
                ..Default::default()
            },
            TrainConfig {
                momentum: 1.0,
                ..Default::default()
            },
            TrainConfig {
                alpha: 1.2,
                ..Default::default()
            },
        ];
        for c in bad {
            assert!(c.validate().is_err(), "{c:?}");
        }
    }

    #[test]
    fn config_json_defaults() {
        let c: TrainConfig = serde_json::from_str(r#"{"epochs": 3}"#).unwrap();
        assert_eq!(c.epochs, 3);
        assert_eq!(c.lr_attn, 1e-3);
        assert!(serde_json::from_str::<TrainConfig>(r#"{"epoch": 3}"#).is_err());
    }
}
