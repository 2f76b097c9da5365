use ndarray::{Array2, ArrayView1, Axis};
use serde::{Deserialize, Serialize};

use crate::corpus::Clue;
use crate::error::{Error, Result};
use crate::model::{forward, BatchInput, G3Params, Mode};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Explanation {
    pub clue_id: usize,
    pub text: String,
    pub weight: f64,
    pub countries: Vec<String>,
}

/// Eval-mode attention weights of one image, in clue order.
pub fn attention_weights(
    params: &G3Params,
    query: ArrayView1<f64>,
    feature: ArrayView1<f64>,
    clue_matrix: &Array2<f64>,
) -> Result<Vec<f64>> {
    let input = BatchInput {
        query: query.to_owned().insert_axis(Axis(0)),
        feature: feature.to_owned().insert_axis(Axis(0)),
    };
    let trace = forward(params, &input, clue_matrix, Mode::Eval)?;
    Ok(trace.attn_weights.row(0).to_vec())
}

/// Clue indices by descending weight, ties by ascending index.
pub fn rank_by_weight(weights: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..weights.len()).collect();
    idx.sort_by(|&a, &b| weights[b].total_cmp(&weights[a]).then(a.cmp(&b)));
    idx
}

/// The `k` most attended clues of one image (all clues when `k` exceeds
/// their number).
pub fn explain(
    params: &G3Params,
    query: ArrayView1<f64>,
    feature: ArrayView1<f64>,
    clue_matrix: &Array2<f64>,
    clues: &[Clue],
    k: usize,
) -> Result<Vec<Explanation>> {
    if clues.len() != clue_matrix.nrows() {
        return Err(Error::Shape(format!(
            "{} clues vs {} clue rows",
            clues.len(),
            clue_matrix.nrows()
        )));
    }
    let w = attention_weights(params, query, feature, clue_matrix)?;
    Ok(rank_by_weight(&w)
        .into_iter()
        .take(k)
        .map(|i| Explanation {
            clue_id: clues[i].id,
            text: clues[i].text.clone(),
            weight: w[i],
            countries: clues[i].countries.clone(),
        })
        .collect())
}
