use std::cmp::Ordering;

use ndarray::{concatenate, s, Array1, Array2, ArrayView1, ArrayView2, Axis};

use super::{AttnNormalization, BatchNorm, G3Params};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics in BN; the trace can be differentiated.
    Train,
    /// Running statistics in BN.
    Eval,
}

/// A batch of images, one row per image.
#[derive(Debug, Clone)]
pub struct BatchInput {
    pub query: Array2<f64>,
    pub feature: Array2<f64>,
}

impl BatchInput {
    pub fn len(&self) -> usize {
        self.query.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.query.nrows() == 0
    }
}

/// Normalization applied by one BN layer to one batch.
#[derive(Debug, Clone)]
pub struct BnTrace {
    pub mean: Array1<f64>,
    /// Biased batch variance (train) or running variance (eval).
    pub var: Array1<f64>,
    pub inv_std: Array1<f64>,
    /// Input after normalization, before the affine transform.
    pub normalized: Array2<f64>,
}

/// Everything the forward pass computed, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct BatchTrace {
    pub mode: Mode,
    pub attn_bn: BnTrace,
    /// BN_attn output, the input of the attention layer.
    pub attn_input: Array2<f64>,
    /// `W·a + b`, before the ReLU.
    pub attn_pre: Array2<f64>,
    /// Attention logits `z`.
    pub attn_logits: Array2<f64>,
    /// Attention weights `sigmoid(z)`.
    pub attn_weights: Array2<f64>,
    /// Per-image normalizer of the clue summary.
    pub summary_norm: Array1<f64>,
    pub clue_summary: Array2<f64>,
    pub fused: Array2<f64>,
    pub cls_bn: BnTrace,
    pub cls_input: Array2<f64>,
    pub class_logits: Array2<f64>,
}

impl BatchTrace {
    pub fn batch_size(&self) -> usize {
        self.class_logits.nrows()
    }
}

fn batch_norm(bn: &BatchNorm, x: &Array2<f64>, mode: Mode) -> (BnTrace, Array2<f64>) {
    let (mean, var) = match mode {
        Mode::Train => {
            let n = x.nrows() as f64;
            let mean = x.sum_axis(Axis(0)) / n;
            let centered = x - &mean;
            let var = (&centered * &centered).sum_axis(Axis(0)) / n;
            (mean, var)
        }
        Mode::Eval => (bn.running_mean.clone(), bn.running_var.clone()),
    };
    let inv_std = var.mapv(|v| 1.0 / (v + bn.eps).sqrt());
    let normalized = (x - &mean) * &inv_std;
    let out = &normalized * &bn.gamma + &bn.beta;
    (
        BnTrace {
            mean,
            var,
            inv_std,
            normalized,
        },
        out,
    )
}

/// `x · Wᵀ + b`, one row dot product at a time.
///
/// Each output element depends only on its own weight row, so permuting the
/// rows of `W` permutes the outputs without changing a single bit.
pub(crate) fn affine_rows(x: &Array2<f64>, weight: &Array2<f64>, bias: &Array1<f64>) -> Array2<f64> {
    let mut out = Array2::zeros((x.nrows(), weight.nrows()));
    for (xi, mut oi) in x.outer_iter().zip(out.outer_iter_mut()) {
        for ((o, w), b) in oi.iter_mut().zip(weight.outer_iter()).zip(bias.iter()) {
            *o = w.dot(&xi) + b;
        }
    }
    out
}

fn cmp_rows(a: ArrayView1<f64>, b: ArrayView1<f64>) -> Ordering {
    for (x, y) in a.iter().zip(b.iter()) {
        match x.total_cmp(y) {
            Ordering::Equal => continue,
            other => return other,
        }
    }
    Ordering::Equal
}

/// `Σ_i w_i G_i` and `Σ_i w_i`, accumulated in an order fixed by the values
/// themselves (weight, then clue row), so the result is bitwise independent
/// of how the clues are numbered.
pub(crate) fn weighted_clue_sum(weights: ArrayView1<f64>, clues: ArrayView2<f64>) -> (Array1<f64>, f64) {
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&i, &j| {
        weights[i]
            .total_cmp(&weights[j])
            .then_with(|| cmp_rows(clues.row(i), clues.row(j)))
    });
    let mut acc = Array1::zeros(clues.ncols());
    let mut total = 0.0;
    for i in order {
        acc.scaled_add(weights[i], &clues.row(i));
        total += weights[i];
    }
    (acc, total)
}

fn check_finite(name: &str, a: &Array2<f64>) -> Result<()> {
    if a.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(name.into()))
    }
}

/// Runs the network on a batch. `clues` is the `n_clues x d_clue` clue
/// matrix; pass a `0 x 0` matrix for the clue-free classifier.
pub fn forward(params: &G3Params, input: &BatchInput, clues: &Array2<f64>, mode: Mode) -> Result<BatchTrace> {
    let d = params.dims;
    let b = input.len();
    if b == 0 {
        return Err(Error::Shape("empty batch".into()));
    }
    if input.query.ncols() != d.query || input.feature.ncols() != d.feature || input.feature.nrows() != b {
        return Err(Error::Shape(format!(
            "batch query {:?} / feature {:?} vs dims query {} feature {}",
            input.query.dim(),
            input.feature.dim(),
            d.query,
            d.feature
        )));
    }
    if clues.dim() != (d.n_clues, d.clue) {
        return Err(Error::Shape(format!(
            "clue matrix {:?} vs ({}, {})",
            clues.dim(),
            d.n_clues,
            d.clue
        )));
    }
    check_finite("query batch", &input.query)?;
    check_finite("feature batch", &input.feature)?;
    check_finite("clue matrix", clues)?;

    let (attn_bn, attn_input) = batch_norm(&params.bn_attn, &input.query, mode);
    let attn_pre = affine_rows(&attn_input, &params.attn_weight, &params.attn_bias);
    let attn_logits = if params.options.attn_relu {
        attn_pre.mapv(|v| if v > 0.0 { v } else { 0.0 })
    } else {
        attn_pre.clone()
    };
    let attn_weights = attn_logits.mapv(super::sigmoid);

    let mut clue_summary = Array2::zeros((b, d.clue));
    let mut summary_norm = Array1::zeros(b);
    if d.n_clues > 0 {
        for i in 0..b {
            let (sum, total) = weighted_clue_sum(attn_weights.row(i), clues.view());
            let norm = match params.options.normalization {
                AttnNormalization::Mean => d.n_clues as f64,
                AttnNormalization::SumOfWeights => total,
            };
            clue_summary.row_mut(i).assign(&(sum / norm));
            summary_norm[i] = norm;
        }
    }

    let fused = concatenate(Axis(1), &[input.feature.view(), clue_summary.view()]).expect("row counts agree");
    let (cls_bn, cls_input) = batch_norm(&params.bn_cls, &fused, mode);
    let class_logits = affine_rows(&cls_input, &params.cls_weight, &params.cls_bias);

    Ok(BatchTrace {
        mode,
        attn_bn,
        attn_input,
        attn_pre,
        attn_logits,
        attn_weights,
        summary_norm,
        clue_summary,
        fused,
        cls_bn,
        cls_input,
        class_logits,
    })
}

/// Eval-mode class logits for many images, computed in chunks.
pub fn predict_logits(
    params: &G3Params,
    query: &Array2<f64>,
    feature: &Array2<f64>,
    clues: &Array2<f64>,
    chunk: usize,
) -> Result<Array2<f64>> {
    let n = query.nrows();
    let mut out = Array2::zeros((n, params.dims.n_classes));
    let chunk = chunk.max(1);
    let mut start = 0;
    while start < n {
        let end = (start + chunk).min(n);
        let input = BatchInput {
            query: query.slice(s![start..end, ..]).to_owned(),
            feature: feature.slice(s![start..end, ..]).to_owned(),
        };
        let trace = forward(params, &input, clues, Mode::Eval)?;
        out.slice_mut(s![start..end, ..]).assign(&trace.class_logits);
        start = end;
    }
    Ok(out)
}
