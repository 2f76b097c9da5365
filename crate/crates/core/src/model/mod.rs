//! The attention classifier.
//!
//! For a query embedding `q`, image features `f`, and a clue matrix `G`
//! (`n_clues x d_clue`, shared by all images):
//!
//! ```text
//! s     = W · BN_attn(q) + b            attention pre-activations
//! z     = ReLU(s)                        attention logits
//! w     = sigmoid(z)                     attention weights, in [0.5, 1)
//! G_hat = (1 / n_clues) · Σ_i w_i G_i    clue summary
//! y     = V · BN_cls([f, G_hat]) + e     class logits
//! ```
//!
//! Training minimizes `(1 - alpha) · L_country + alpha · L_attn` where
//! `L_country` is class-weighted softmax cross entropy and `L_attn` is
//! positive-weighted binary cross entropy of `z` against the clue pseudo
//! labels of the image's country. Gradients are derived by hand in
//! [`backward`].

mod backward;
mod checkpoint;
mod forward;
mod loss;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SplitMix64;

pub use backward::backward;
pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, read_checkpoint, write_checkpoint, Checkpoint, CheckpointMeta,
    CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use forward::{forward, predict_logits, BatchInput, BatchTrace, BnTrace, Mode};
pub use loss::{
    attn_loss, attn_loss_terms, batch_loss, composite_loss, country_loss, sigmoid, softplus, LossConfig, LossParts,
    PosWeight,
};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

const INIT_STREAM: u64 = 0x696e_6974;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub query: usize,
    pub feature: usize,
    pub clue: usize,
    pub n_clues: usize,
    pub n_classes: usize,
}

impl ModelDims {
    pub fn fused(&self) -> usize {
        self.feature + self.clue
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttnNormalization {
    /// Divide the weighted clue sum by the number of clues.
    #[default]
    Mean,
    /// Divide by the sum of attention weights.
    SumOfWeights,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelOptions {
    /// Apply ReLU to the attention pre-activations before the sigmoid.
    pub attn_relu: bool,
    pub normalization: AttnNormalization,
}

impl Default for ModelOptions {
    fn default() -> Self {
        ModelOptions {
            attn_relu: true,
            normalization: AttnNormalization::Mean,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
    pub running_mean: Array1<f64>,
    pub running_var: Array1<f64>,
    pub eps: f64,
    pub momentum: f64,
}

impl BatchNorm {
    pub fn new(dim: usize) -> Self {
        BatchNorm {
            gamma: Array1::ones(dim),
            beta: Array1::zeros(dim),
            running_mean: Array1::zeros(dim),
            running_var: Array1::ones(dim),
            eps: BN_EPS,
            momentum: BN_MOMENTUM,
        }
    }

    pub fn dim(&self) -> usize {
        self.gamma.len()
    }

    /// Exponential update with the biased batch variance rescaled to the
    /// unbiased estimate (left as is for a batch of one).
    pub(crate) fn update_running(&mut self, mean: &Array1<f64>, biased_var: &Array1<f64>, batch: usize) {
        let m = self.momentum;
        let correction = if batch > 1 {
            batch as f64 / (batch - 1) as f64
        } else {
            1.0
        };
        self.running_mean = &self.running_mean * (1.0 - m) + mean * m;
        self.running_var = &self.running_var * (1.0 - m) + &(biased_var * (correction * m));
    }
}

/// Learning-rate group of a trainable tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamGroup {
    Attention,
    Main,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParamId {
    AttnWeight,
    AttnBias,
    BnAttnGamma,
    BnAttnBeta,
    ClsWeight,
    ClsBias,
    BnClsGamma,
    BnClsBeta,
}

impl ParamId {
    pub const ALL: [ParamId; 8] = [
        ParamId::AttnWeight,
        ParamId::AttnBias,
        ParamId::BnAttnGamma,
        ParamId::BnAttnBeta,
        ParamId::ClsWeight,
        ParamId::ClsBias,
        ParamId::BnClsGamma,
        ParamId::BnClsBeta,
    ];

    /// BN parameters follow the layer whose input they normalize.
    pub fn group(self) -> ParamGroup {
        match self {
            ParamId::AttnWeight | ParamId::AttnBias | ParamId::BnAttnGamma | ParamId::BnAttnBeta => {
                ParamGroup::Attention
            }
            _ => ParamGroup::Main,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ParamId::AttnWeight => "attn_weight",
            ParamId::AttnBias => "attn_bias",
            ParamId::BnAttnGamma => "bn_attn.gamma",
            ParamId::BnAttnBeta => "bn_attn.beta",
            ParamId::ClsWeight => "cls_weight",
            ParamId::ClsBias => "cls_bias",
            ParamId::BnClsGamma => "bn_cls.gamma",
            ParamId::BnClsBeta => "bn_cls.beta",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct G3Params {
    pub dims: ModelDims,
    pub options: ModelOptions,
    /// `n_clues x d_query`
    pub attn_weight: Array2<f64>,
    pub attn_bias: Array1<f64>,
    /// `n_classes x (d_feature + d_clue)`
    pub cls_weight: Array2<f64>,
    pub cls_bias: Array1<f64>,
    pub bn_attn: BatchNorm,
    pub bn_cls: BatchNorm,
}

impl G3Params {
    /// Weights uniform in `±1/sqrt(fan_in)`, biases zero, BN at identity.
    pub fn init(dims: ModelDims, options: ModelOptions, seed: u64) -> Self {
        let mut rng = SplitMix64::stream(seed, INIT_STREAM);
        let mut uniform = |rows: usize, cols: usize| {
            let bound = if cols > 0 { 1.0 / (cols as f64).sqrt() } else { 0.0 };
            Array2::from_shape_simple_fn((rows, cols), || rng.uniform_range(-bound, bound))
        };
        let attn_weight = uniform(dims.n_clues, dims.query);
        let cls_weight = uniform(dims.n_classes, dims.fused());
        G3Params {
            dims,
            options,
            attn_weight,
            attn_bias: Array1::zeros(dims.n_clues),
            cls_weight,
            cls_bias: Array1::zeros(dims.n_classes),
            bn_attn: BatchNorm::new(dims.query),
            bn_cls: BatchNorm::new(dims.fused()),
        }
    }

    pub fn zeros(dims: ModelDims, options: ModelOptions) -> Self {
        G3Params {
            dims,
            options,
            attn_weight: Array2::zeros((dims.n_clues, dims.query)),
            attn_bias: Array1::zeros(dims.n_clues),
            cls_weight: Array2::zeros((dims.n_classes, dims.fused())),
            cls_bias: Array1::zeros(dims.n_classes),
            bn_attn: BatchNorm::new(dims.query),
            bn_cls: BatchNorm::new(dims.fused()),
        }
    }

    pub fn tensor(&self, id: ParamId) -> &[f64] {
        let t = match id {
            ParamId::AttnWeight => self.attn_weight.as_slice(),
            ParamId::AttnBias => self.attn_bias.as_slice(),
            ParamId::BnAttnGamma => self.bn_attn.gamma.as_slice(),
            ParamId::BnAttnBeta => self.bn_attn.beta.as_slice(),
            ParamId::ClsWeight => self.cls_weight.as_slice(),
            ParamId::ClsBias => self.cls_bias.as_slice(),
            ParamId::BnClsGamma => self.bn_cls.gamma.as_slice(),
            ParamId::BnClsBeta => self.bn_cls.beta.as_slice(),
        };
        t.expect("parameters are kept in standard layout")
    }

    pub fn tensor_mut(&mut self, id: ParamId) -> &mut [f64] {
        let t = match id {
            ParamId::AttnWeight => self.attn_weight.as_slice_mut(),
            ParamId::AttnBias => self.attn_bias.as_slice_mut(),
            ParamId::BnAttnGamma => self.bn_attn.gamma.as_slice_mut(),
            ParamId::BnAttnBeta => self.bn_attn.beta.as_slice_mut(),
            ParamId::ClsWeight => self.cls_weight.as_slice_mut(),
            ParamId::ClsBias => self.cls_bias.as_slice_mut(),
            ParamId::BnClsGamma => self.bn_cls.gamma.as_slice_mut(),
            ParamId::BnClsBeta => self.bn_cls.beta.as_slice_mut(),
        };
        t.expect("parameters are kept in standard layout")
    }

    pub fn check_finite(&self) -> Result<()> {
        for id in ParamId::ALL {
            if self.tensor(id).iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(id.name().into()));
            }
        }
        let stats = [
            &self.bn_attn.running_mean,
            &self.bn_attn.running_var,
            &self.bn_cls.running_mean,
            &self.bn_cls.running_var,
        ];
        if stats.iter().any(|s| s.iter().any(|v| !v.is_finite())) {
            return Err(Error::NonFinite("batch norm running statistics".into()));
        }
        Ok(())
    }

    /// Folds the batch statistics of a train-mode forward pass into the
    /// running estimates.
    pub fn update_running_stats(&mut self, trace: &BatchTrace) {
        if trace.mode != Mode::Train {
            return;
        }
        let b = trace.batch_size();
        self.bn_attn.update_running(&trace.attn_bn.mean, &trace.attn_bn.var, b);
        self.bn_cls.update_running(&trace.cls_bn.mean, &trace.cls_bn.var, b);
    }
}

/// Gradients with the shapes of the trainable tensors of [`G3Params`].
#[derive(Debug, Clone, PartialEq)]
pub struct G3Grads {
    pub attn_weight: Array2<f64>,
    pub attn_bias: Array1<f64>,
    pub bn_attn_gamma: Array1<f64>,
    pub bn_attn_beta: Array1<f64>,
    pub cls_weight: Array2<f64>,
    pub cls_bias: Array1<f64>,
    pub bn_cls_gamma: Array1<f64>,
    pub bn_cls_beta: Array1<f64>,
}

impl G3Grads {
    pub fn tensor(&self, id: ParamId) -> &[f64] {
        let t = match id {
            ParamId::AttnWeight => self.attn_weight.as_slice(),
            ParamId::AttnBias => self.attn_bias.as_slice(),
            ParamId::BnAttnGamma => self.bn_attn_gamma.as_slice(),
            ParamId::BnAttnBeta => self.bn_attn_beta.as_slice(),
            ParamId::ClsWeight => self.cls_weight.as_slice(),
            ParamId::ClsBias => self.cls_bias.as_slice(),
            ParamId::BnClsGamma => self.bn_cls_gamma.as_slice(),
            ParamId::BnClsBeta => self.bn_cls_beta.as_slice(),
        };
        t.expect("gradients are kept in standard layout")
    }

    pub fn norm(&self) -> f64 {
        ParamId::ALL
            .iter()
            .flat_map(|&id| self.tensor(id).iter())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dims() -> ModelDims {
        ModelDims {
            query: 3,
            feature: 2,
            clue: 4,
            n_clues: 5,
            n_classes: 3,
        }
    }

    #[test]
    fn init_shapes_and_bounds() {
        let p = G3Params::init(dims(), ModelOptions::default(), 1);
        assert_eq!(p.attn_weight.dim(), (5, 3));
        assert_eq!(p.cls_weight.dim(), (3, 6));
        let bound = 1.0 / 3f64.sqrt();
        assert!(p.attn_weight.iter().all(|w| w.abs() <= bound));
        assert!(p.attn_bias.iter().all(|&b| b == 0.0));
        assert!(p.bn_cls.gamma.iter().all(|&g| g == 1.0));
        assert_eq!(p, G3Params::init(dims(), ModelOptions::default(), 1));
        assert_ne!(p, G3Params::init(dims(), ModelOptions::default(), 2));
    }

    #[test]
    fn groups() {
        assert_eq!(ParamId::BnAttnGamma.group(), ParamGroup::Attention);
        assert_eq!(ParamId::BnClsBeta.group(), ParamGroup::Main);
    }

    #[test]
    fn running_update() {
        let mut bn = BatchNorm::new(1);
        bn.update_running(&Array1::from(vec![2.0]), &Array1::from(vec![3.0]), 4);
        assert!((bn.running_mean[0] - 0.2).abs() < 1e-15);
        assert!((bn.running_var[0] - (0.9 + 0.1 * 4.0)).abs() < 1e-15);
    }
}
