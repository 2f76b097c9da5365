//! Top-k scoring, baselines, the ablation grid, attention explanations and
//! reports.

pub mod ablation;
pub mod baseline;
pub mod explain;
pub mod metrics;
pub mod report;

use std::collections::BTreeMap;

use ndarray::Array2;

use crate::error::Result;
use crate::model::{predict_logits, G3Params};
use crate::trainer::ImageSet;

pub use ablation::{
    ablation_grid, run_cell, standard_cells, AblationConfig, AblationInputs, Cell, ClueSource, FeatureSet,
};
pub use baseline::{nearest_neighbor_baseline, nearest_neighbor_scores};
pub use explain::{explain, Explanation};
pub use metrics::{mean_std, rank_classes, topk_accuracy, MeanStd};
pub use report::{predictions, EvalReport, Prediction, ReportRow, Supervision};

const CHUNK: usize = 256;

/// Eval-mode class logits for every image of `set`.
pub fn score_images(params: &G3Params, set: &ImageSet, clues: &Array2<f64>) -> Result<Array2<f64>> {
    predict_logits(params, &set.query, &set.feature, clues, CHUNK)
}

pub fn evaluate(params: &G3Params, set: &ImageSet, clues: &Array2<f64>, ks: &[usize]) -> Result<BTreeMap<usize, f64>> {
    topk_accuracy(&score_images(params, set, clues)?, &set.labels, ks)
}
