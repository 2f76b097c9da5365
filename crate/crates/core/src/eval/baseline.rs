use std::collections::BTreeMap;

use ndarray::{Array1, Array2, Axis};

use super::metrics::topk_accuracy;
use crate::error::{Error, Result};

fn unit_rows(a: &Array2<f64>) -> Array2<f64> {
    let norms: Array1<f64> = a.map_axis(Axis(1), |r| r.dot(&r).sqrt());
    let mut out = a.clone();
    for (mut row, n) in out.rows_mut().into_iter().zip(norms) {
        if n > 0.0 {
            row /= n;
        }
    }
    out
}

/// Per-country score: the best cosine similarity between the eval row and any
/// training row of that country. Countries without exemplars score -inf.
pub fn nearest_neighbor_scores(
    train: &Array2<f64>,
    train_labels: &[usize],
    eval: &Array2<f64>,
    n_classes: usize,
) -> Result<Array2<f64>> {
    if train.ncols() != eval.ncols() {
        return Err(Error::Shape(format!(
            "train dim {} vs eval dim {}",
            train.ncols(),
            eval.ncols()
        )));
    }
    if train_labels.len() != train.nrows() {
        return Err(Error::Shape(format!(
            "{} labels for {} training rows",
            train_labels.len(),
            train.nrows()
        )));
    }
    if let Some(&y) = train_labels.iter().find(|&&y| y >= n_classes) {
        return Err(Error::Shape(format!("label {y} for {n_classes} classes")));
    }
    let sims = unit_rows(eval).dot(&unit_rows(train).t());
    let mut scores = Array2::from_elem((eval.nrows(), n_classes), f64::NEG_INFINITY);
    for (i, row) in sims.rows().into_iter().enumerate() {
        for (&s, &y) in row.iter().zip(train_labels) {
            if s > scores[[i, y]] {
                scores[[i, y]] = s;
            }
        }
    }
    Ok(scores)
}

pub fn nearest_neighbor_baseline(
    train: &Array2<f64>,
    train_labels: &[usize],
    eval: &Array2<f64>,
    eval_labels: &[usize],
    n_classes: usize,
    ks: &[usize],
) -> Result<BTreeMap<usize, f64>> {
    let scores = nearest_neighbor_scores(train, train_labels, eval, n_classes)?;
    topk_accuracy(&scores, eval_labels, ks)
}
