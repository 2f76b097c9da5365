use ndarray::{s, Array1, Array2, Axis};

use super::forward::BnTrace;
use super::{sigmoid, AttnNormalization, BatchTrace, G3Grads, G3Params, LossConfig, Mode};
use crate::error::{Error, Result};

fn standard(a: Array2<f64>) -> Array2<f64> {
    if a.is_standard_layout() {
        a
    } else {
        a.as_standard_layout().into_owned()
    }
}

/// Backpropagates through the affine part of a train-mode BN layer.
/// Returns `(d_input, d_gamma, d_beta)`.
fn batch_norm_backward(
    bn: &BnTrace,
    gamma: &Array1<f64>,
    d_out: &Array2<f64>,
) -> (Array2<f64>, Array1<f64>, Array1<f64>) {
    let n = d_out.nrows() as f64;
    let d_gamma = (d_out * &bn.normalized).sum_axis(Axis(0));
    let d_beta = d_out.sum_axis(Axis(0));
    let d_hat = d_out * gamma;
    let sum_d_hat = d_hat.sum_axis(Axis(0));
    let sum_d_hat_x = (&d_hat * &bn.normalized).sum_axis(Axis(0));
    let d_in = ((&d_hat * n) - &sum_d_hat - &(&bn.normalized * &sum_d_hat_x)) * &(&bn.inv_std / n);
    (d_in, d_gamma, d_beta)
}

/// Gradient of the batch-mean composite loss with respect to every trainable
/// tensor. BN running statistics are not differentiated.
///
/// The ReLU subgradient at exactly zero is zero.
pub fn backward(
    params: &G3Params,
    trace: &BatchTrace,
    clues: &Array2<f64>,
    labels: &[usize],
    targets: &Array2<f64>,
    cfg: &LossConfig,
) -> Result<G3Grads> {
    if trace.mode != Mode::Train {
        return Err(Error::Config("backward needs a train-mode trace".into()));
    }
    let d = params.dims;
    let b = trace.batch_size();
    if labels.len() != b || targets.dim() != (b, d.n_clues) {
        return Err(Error::Shape(format!(
            "{} labels / targets {:?} for batch {b} with {} clues",
            labels.len(),
            targets.dim(),
            d.n_clues
        )));
    }
    let alpha = cfg.alpha;
    let bf = b as f64;

    // Classifier head.
    let mut d_logits = Array2::zeros((b, d.n_classes));
    for (i, &y) in labels.iter().enumerate() {
        let row = trace.class_logits.row(i);
        let m = row.fold(f64::NEG_INFINITY, |a, &v| a.max(v));
        let exp = row.mapv(|v| (v - m).exp());
        let p = &exp / exp.sum();
        let scale = (1.0 - alpha) / bf * cfg.class_weights[y];
        let mut g = p * scale;
        g[y] -= scale;
        d_logits.row_mut(i).assign(&g);
    }
    let cls_weight = standard(d_logits.t().dot(&trace.cls_input));
    let cls_bias = d_logits.sum_axis(Axis(0));
    let d_cls_input = d_logits.dot(&params.cls_weight);
    let (d_fused, bn_cls_gamma, bn_cls_beta) = batch_norm_backward(&trace.cls_bn, &params.bn_cls.gamma, &d_cls_input);

    // Attention branch.
    let mut attn_weight = Array2::zeros((d.n_clues, d.query));
    let mut attn_bias = Array1::zeros(d.n_clues);
    let mut bn_attn_gamma = Array1::zeros(d.query);
    let mut bn_attn_beta = Array1::zeros(d.query);
    if d.n_clues > 0 {
        let d_summary = d_fused.slice(s![.., d.feature..]);
        let mut d_weights = d_summary.dot(&clues.t());
        match params.options.normalization {
            AttnNormalization::Mean => d_weights /= d.n_clues as f64,
            AttnNormalization::SumOfWeights => {
                for i in 0..b {
                    let shift = trace.clue_summary.row(i).dot(&d_summary.row(i));
                    let norm = trace.summary_norm[i];
                    d_weights.row_mut(i).mapv_inplace(|v| (v - shift) / norm);
                }
            }
        }
        let attn_scale = alpha / (bf * d.n_clues as f64);
        let mut d_pre = Array2::zeros((b, d.n_clues));
        for i in 0..b {
            let lambda = cfg.pos_weight.for_target(targets.row(i));
            for j in 0..d.n_clues {
                let z = trace.attn_logits[[i, j]];
                let w = trace.attn_weights[[i, j]];
                let t = targets[[i, j]];
                let sig = sigmoid(z);
                let d_bce = lambda * t * (sig - 1.0) + (1.0 - t) * sig;
                let d_z = d_weights[[i, j]] * w * (1.0 - w) + attn_scale * d_bce;
                let pass = !params.options.attn_relu || trace.attn_pre[[i, j]] > 0.0;
                d_pre[[i, j]] = if pass { d_z } else { 0.0 };
            }
        }
        attn_weight = standard(d_pre.t().dot(&trace.attn_input));
        attn_bias = d_pre.sum_axis(Axis(0));
        let d_attn_input = d_pre.dot(&params.attn_weight);
        let (_, g, bt) = batch_norm_backward(&trace.attn_bn, &params.bn_attn.gamma, &d_attn_input);
        bn_attn_gamma = g;
        bn_attn_beta = bt;
    }

    Ok(G3Grads {
        attn_weight,
        attn_bias,
        bn_attn_gamma,
        bn_attn_beta,
        cls_weight,
        cls_bias,
        bn_cls_gamma,
        bn_cls_beta,
    })
}
