use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use super::BatchTrace;
use crate::error::{Error, Result};

/// Upper clamp for the automatic positive weight.
pub const MAX_POS_WEIGHT: f64 = 1000.0;

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn log_sum_exp(xs: ArrayView1<f64>) -> f64 {
    let m = xs.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    m + xs.iter().map(|&x| (x - m).exp()).sum::<f64>().ln()
}

/// Sum in ascending value order; the result does not depend on the order
/// of the inputs.
fn order_free_sum(mut terms: Vec<f64>) -> f64 {
    terms.sort_by(f64::total_cmp);
    terms.into_iter().sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PosWeight {
    /// `#negatives / #positives` of the image's target, clamped to
    /// `[1, 1000]`; 1 when there are no positives.
    Auto,
    Fixed(f64),
}

impl PosWeight {
    pub fn for_target(self, target: ArrayView1<f64>) -> f64 {
        match self {
            PosWeight::Fixed(l) => l,
            PosWeight::Auto => {
                let pos = target.iter().filter(|&&t| t > 0.5).count();
                if pos == 0 {
                    1.0
                } else {
                    let neg = target.len() - pos;
                    (neg as f64 / pos as f64).clamp(1.0, MAX_POS_WEIGHT)
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossConfig {
    pub alpha: f64,
    pub pos_weight: PosWeight,
    /// Per-class weights in class-index order.
    pub class_weights: Vec<f64>,
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Config(format!("alpha {} outside [0, 1]", self.alpha)));
        }
        if let PosWeight::Fixed(l) = self.pos_weight {
            if !(l > 0.0 && l.is_finite()) {
                return Err(Error::Config(format!("positive weight {l} must be > 0")));
            }
        }
        if self.class_weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(Error::Config("class weights must be positive and finite".into()));
        }
        Ok(())
    }
}

/// Class-weighted cross entropy of one image:
/// `w_label * (logsumexp(logits) - logits[label])`.
pub fn country_loss(logits: ArrayView1<f64>, label: usize, class_weight: f64) -> Result<f64> {
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("class logits".into()));
    }
    if label >= logits.len() {
        return Err(Error::Shape(format!("label {label} for {} classes", logits.len())));
    }
    Ok(class_weight * (log_sum_exp(logits) - logits[label]))
}

/// Per-clue terms `λ·t·softplus(-z) + (1-t)·softplus(z)`.
pub fn attn_loss_terms(z: ArrayView1<f64>, target: ArrayView1<f64>, pos_weight: f64) -> Vec<f64> {
    z.iter()
        .zip(target.iter())
        .map(|(&z, &t)| pos_weight * t * softplus(-z) + (1.0 - t) * softplus(z))
        .collect()
}

/// Mean positive-weighted BCE-with-logits over clues; 0 for no clues.
pub fn attn_loss(z: ArrayView1<f64>, target: ArrayView1<f64>, pos_weight: f64) -> Result<f64> {
    if z.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("attention logits".into()));
    }
    if z.len() != target.len() {
        return Err(Error::Shape(format!("{} logits vs {} targets", z.len(), target.len())));
    }
    if z.is_empty() {
        return Ok(0.0);
    }
    Ok(order_free_sum(attn_loss_terms(z, target, pos_weight)) / z.len() as f64)
}

pub fn composite_loss(country: f64, attn: f64, alpha: f64) -> f64 {
    (1.0 - alpha) * country + alpha * attn
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub total: f64,
    pub country: f64,
    pub attn: f64,
}

/// Batch means of both losses and their combination. `targets` holds one
/// pseudo-label row per image (`batch x n_clues`).
pub fn batch_loss(trace: &BatchTrace, labels: &[usize], targets: &Array2<f64>, cfg: &LossConfig) -> Result<LossParts> {
    let b = trace.batch_size();
    if labels.len() != b || targets.nrows() != b {
        return Err(Error::Shape(format!(
            "{} labels / {} target rows for a batch of {b}",
            labels.len(),
            targets.nrows()
        )));
    }
    let mut country = 0.0;
    let mut attn = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        let w = *cfg
            .class_weights
            .get(y)
            .ok_or_else(|| Error::Shape(format!("no class weight for label {y}")))?;
        country += country_loss(trace.class_logits.row(i), y, w)?;
        let lambda = cfg.pos_weight.for_target(targets.row(i));
        attn += attn_loss(trace.attn_logits.row(i), targets.row(i), lambda)?;
    }
    let country = country / b as f64;
    let attn = attn / b as f64;
    Ok(LossParts {
        total: composite_loss(country, attn, cfg.alpha),
        country,
        attn,
    })
}
