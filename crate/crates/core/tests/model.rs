use ndarray::{arr1, array, Array1, Array2};
use proptest::prelude::*;

use g3_core::model::{
    attn_loss, country_loss, forward, AttnNormalization, BatchInput, G3Params, Mode, ModelDims, ModelOptions,
};
use g3_core::SplitMix64;

fn sig(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[test]
fn eval_forward_matches_scalar_recomputation() {
    let dims = ModelDims {
        query: 2,
        feature: 1,
        clue: 2,
        n_clues: 2,
        n_classes: 2,
    };
    let mut p = G3Params::zeros(dims, ModelOptions::default());
    p.attn_weight = array![[0.5, -1.0], [2.0, 0.25]];
    p.attn_bias = arr1(&[0.1, -0.3]);
    p.bn_attn.gamma = arr1(&[1.5, 0.5]);
    p.bn_attn.beta = arr1(&[0.2, -0.1]);
    p.bn_attn.running_mean = arr1(&[0.3, -0.2]);
    p.bn_attn.running_var = arr1(&[2.0, 0.5]);
    p.cls_weight = array![[1.0, -0.5, 0.25], [-0.75, 0.5, 2.0]];
    p.cls_bias = arr1(&[0.05, -0.05]);
    p.bn_cls.gamma = arr1(&[1.0, 2.0, 0.5]);
    p.bn_cls.beta = arr1(&[0.0, 0.1, -0.2]);
    p.bn_cls.running_mean = arr1(&[0.1, 0.2, 0.3]);
    p.bn_cls.running_var = arr1(&[1.0, 0.25, 4.0]);
    let g = array![[1.0, 2.0], [-0.5, 0.75]];
    let q = [0.8, -1.2];
    let f = 0.6;

    let eps = 1e-5;
    let qn0 = 1.5 * (q[0] - 0.3) / (2.0f64 + eps).sqrt() + 0.2;
    let qn1 = 0.5 * (q[1] + 0.2) / (0.5f64 + eps).sqrt() - 0.1;
    let s0 = 0.5 * qn0 - 1.0 * qn1 + 0.1;
    let s1 = 2.0 * qn0 + 0.25 * qn1 - 0.3;
    let w0 = sig(s0.max(0.0));
    let w1 = sig(s1.max(0.0));
    let gh0 = (w0 * 1.0 + w1 * -0.5) / 2.0;
    let gh1 = (w0 * 2.0 + w1 * 0.75) / 2.0;
    let x0 = 1.0 * (f - 0.1) / (1.0f64 + eps).sqrt() + 0.0;
    let x1 = 2.0 * (gh0 - 0.2) / (0.25f64 + eps).sqrt() + 0.1;
    let x2 = 0.5 * (gh1 - 0.3) / (4.0f64 + eps).sqrt() - 0.2;
    let y0 = 1.0 * x0 - 0.5 * x1 + 0.25 * x2 + 0.05;
    let y1 = -0.75 * x0 + 0.5 * x1 + 2.0 * x2 - 0.05;

    let input = BatchInput {
        query: array![[q[0], q[1]]],
        feature: array![[f]],
    };
    let t = forward(&p, &input, &g, Mode::Eval).unwrap();
    assert!((t.attn_weights[[0, 0]] - w0).abs() < 1e-12);
    assert!((t.attn_weights[[0, 1]] - w1).abs() < 1e-12);
    assert!((t.clue_summary[[0, 0]] - gh0).abs() < 1e-12);
    assert!((t.class_logits[[0, 0]] - y0).abs() < 1e-12);
    assert!((t.class_logits[[0, 1]] - y1).abs() < 1e-12);
}

fn random_params(rng: &mut SplitMix64, dims: ModelDims, normalization: AttnNormalization) -> G3Params {
    let options = ModelOptions {
        attn_relu: true,
        normalization,
    };
    let mut p = G3Params::init(dims, options, rng.next_u64());
    for v in p.attn_bias.iter_mut() {
        *v = rng.normal();
    }
    p
}

proptest! {
    #[test]
    fn country_loss_matches_direct_recomputation(seed in any::<u64>(), c in 2usize..40) {
        let mut rng = SplitMix64::new(seed);
        let logits: Array1<f64> = (0..c).map(|_| 5.0 * rng.normal()).collect();
        let y = rng.below(c);
        let w = rng.uniform_range(0.1, 3.0);
        let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut terms: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
        terms.sort_by(f64::total_cmp);
        let lse = m + terms.iter().sum::<f64>().ln();
        let expected = w * (lse - logits[y]);
        let got = country_loss(logits.view(), y, w).unwrap();
        prop_assert!((got - expected).abs() <= 1e-12 * expected.abs().max(1.0));
        prop_assert!(got >= 0.0);
    }

    #[test]
    fn attn_loss_matches_direct_sum(seed in any::<u64>(), n in 1usize..50, lambda in 0.5f64..20.0) {
        let mut rng = SplitMix64::new(seed);
        let z: Array1<f64> = (0..n).map(|_| 3.0 * rng.normal()).collect();
        let t: Array1<f64> = (0..n).map(|_| f64::from(u8::from(rng.uniform() < 0.3))).collect();
        let mut sum = 0.0;
        for i in 0..n {
            let s = sig(z[i]);
            sum += lambda * t[i] * -s.ln() + (1.0 - t[i]) * -(1.0 - s).ln();
        }
        let expected = sum / n as f64;
        let got = attn_loss(z.view(), t.view(), lambda).unwrap();
        prop_assert!((got - expected).abs() <= 1e-10 * expected.max(1.0));
        prop_assert!(got >= 0.0);
    }

    #[test]
    fn clue_summary_norm_is_bounded(seed in any::<u64>(), sum_of_weights in any::<bool>()) {
        let mut rng = SplitMix64::new(seed);
        let dims = ModelDims { query: 3, feature: 2, clue: 4, n_clues: 1 + rng.below(12), n_classes: 3 };
        let norm = if sum_of_weights { AttnNormalization::SumOfWeights } else { AttnNormalization::Mean };
        let p = random_params(&mut rng, dims, norm);
        let g = Array2::from_shape_fn((dims.n_clues, dims.clue), |_| rng.normal());
        let input = BatchInput {
            query: Array2::from_shape_fn((4, 3), |_| rng.normal()),
            feature: Array2::from_shape_fn((4, 2), |_| rng.normal()),
        };
        let t = forward(&p, &input, &g, Mode::Train).unwrap();
        let max_norm = g.rows().into_iter().map(|r| r.dot(&r).sqrt()).fold(0.0, f64::max);
        for r in t.clue_summary.rows() {
            prop_assert!(r.dot(&r).sqrt() <= max_norm * (1.0 + 1e-12));
        }
    }

    #[test]
    fn eval_forward_is_deterministic_per_sample(seed in any::<u64>()) {
        let mut rng = SplitMix64::new(seed);
        let dims = ModelDims { query: 3, feature: 2, clue: 2, n_clues: 5, n_classes: 3 };
        let p = random_params(&mut rng, dims, AttnNormalization::Mean);
        let g = Array2::from_shape_fn((5, 2), |_| rng.normal());
        let input = BatchInput {
            query: Array2::from_shape_fn((6, 3), |_| rng.normal()),
            feature: Array2::from_shape_fn((6, 2), |_| rng.normal()),
        };
        let all = forward(&p, &input, &g, Mode::Eval).unwrap();
        let one = BatchInput {
            query: input.query.slice(ndarray::s![2..3, ..]).to_owned(),
            feature: input.feature.slice(ndarray::s![2..3, ..]).to_owned(),
        };
        let single = forward(&p, &one, &g, Mode::Eval).unwrap();
        prop_assert_eq!(all.class_logits.row(2).to_vec(), single.class_logits.row(0).to_vec());
    }
}
