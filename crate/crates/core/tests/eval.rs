mod common;

use std::collections::BTreeMap;

use ndarray::Array2;
use proptest::prelude::*;

use g3_core::dataset::Split;
use g3_core::eval::explain::attention_weights;
use g3_core::eval::{
    ablation_grid, evaluate, explain, nearest_neighbor_baseline, predictions, score_images, topk_accuracy,
    AblationConfig, Cell, ClueSource, FeatureSet, Supervision,
};
use g3_core::stats::histograms;
use g3_core::trainer::{init_params, train};
use g3_core::SplitMix64;

proptest! {
    #[test]
    fn topk_matches_sort_oracle(seed in any::<u64>(), n in 1usize..30, c in 2usize..12) {
        let mut rng = SplitMix64::new(seed);
        // Coarse values force ties.
        let logits = Array2::from_shape_fn((n, c), |_| (rng.below(5) as f64) * 0.5);
        let labels: Vec<usize> = (0..n).map(|_| rng.below(c)).collect();
        let ks: Vec<usize> = (1..=c).collect();
        let got = topk_accuracy(&logits, &labels, &ks).unwrap();
        for &k in &ks {
            let mut hits = 0;
            for (i, &y) in labels.iter().enumerate() {
                let mut order: Vec<(f64, usize)> = logits.row(i).iter().copied().zip(0..).collect();
                order.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
                hits += usize::from(order[..k].iter().any(|p| p.1 == y));
            }
            prop_assert_eq!(got[&k], hits as f64 / n as f64);
        }
    }
}

fn cell(features: FeatureSet, clues: ClueSource, supervision: Supervision) -> Cell {
    Cell {
        features,
        clues,
        supervision,
    }
}

#[test]
fn nearest_neighbor_matches_double_loop() {
    let world = common::synthetic_world();
    let rows = |split: Split| -> (Array2<f64>, Vec<usize>) {
        let recs: Vec<_> = world.manifest.split(split).collect();
        let ids: Vec<String> = recs.iter().map(|r| r.image_id.clone()).collect();
        let labels = recs
            .iter()
            .map(|r| world.labels.index_of(&r.country).unwrap())
            .collect();
        (world.stores.query.select(&ids).unwrap(), labels)
    };
    let (train_q, train_y) = rows(Split::Train);
    let (test_q, test_y) = rows(Split::Test);
    let c = world.labels.len();
    let got = nearest_neighbor_baseline(&train_q, &train_y, &test_q, &test_y, c, &[1, 5, 10]).unwrap();

    let mut hits = BTreeMap::from([(1, 0), (5, 0), (10, 0)]);
    for i in 0..test_q.nrows() {
        let mut best = vec![f64::NEG_INFINITY; c];
        for j in 0..train_q.nrows() {
            let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
            for d in 0..test_q.ncols() {
                dot += test_q[[i, d]] * train_q[[j, d]];
                na += test_q[[i, d]] * test_q[[i, d]];
                nb += train_q[[j, d]] * train_q[[j, d]];
            }
            let cos = dot / (na.sqrt() * nb.sqrt());
            best[train_y[j]] = best[train_y[j]].max(cos);
        }
        let rank = (0..c)
            .filter(|&k| {
                best[k] > best[test_y[i]] + 1e-12 || (k < test_y[i] && (best[k] - best[test_y[i]]).abs() <= 1e-12)
            })
            .count();
        for (k, h) in hits.iter_mut() {
            *h += usize::from(rank < *k);
        }
    }
    for (k, h) in hits {
        assert_eq!(got[&k], h as f64 / test_q.nrows() as f64, "k = {k}");
    }
}

#[test]
fn supervised_attention_ranks_own_clues_high() {
    let world = common::synthetic_world();
    let c = cell(FeatureSet::ImageAux, ClueSource::Guidebook, Supervision::Yes);
    let (data, test) = world.inputs().cell_data(&c, Split::Test).unwrap();
    let cfg = common::fixture_train_config();
    let (params, _) = train(&cfg, init_params(&cfg, &data), &data).unwrap();
    let n = world.clues.len();
    let corpus_mean = (n as f64 - 1.0) / 2.0;
    let mut ranks = Vec::new();
    for i in 0..test.len() {
        let code = world.labels.code(test.labels[i]);
        let own = world.pseudo.clues_for(code).unwrap();
        let ex = explain(
            &params,
            test.query.row(i),
            test.feature.row(i),
            &data.clues,
            &world.clues,
            n,
        )
        .unwrap();
        let w = attention_weights(&params, test.query.row(i), test.feature.row(i), &data.clues).unwrap();
        let mut ids: Vec<usize> = ex.iter().map(|e| e.clue_id).collect();
        assert!(ex.iter().all(|e| e.weight == w[e.clue_id]));
        for (pos, e) in ex.iter().enumerate() {
            if own.contains(&e.clue_id) {
                ranks.push(pos as f64);
            }
        }
        ids.sort_unstable();
        assert_eq!(ids, (0..n).collect::<Vec<_>>());
    }
    let mean_rank = ranks.iter().sum::<f64>() / ranks.len() as f64;
    println!("mean rank of own-country clues {mean_rank:.2}, corpus mean {corpus_mean:.2}");
    assert!(mean_rank < corpus_mean);
}

#[test]
fn balanced_accuracy_equals_mean_per_country() {
    let world = common::synthetic_world();
    let c = cell(FeatureSet::ImageAux, ClueSource::Guidebook, Supervision::Yes);
    let (data, test) = world.inputs().cell_data(&c, Split::Test).unwrap();
    let cfg = common::fixture_train_config();
    let (params, _) = train(&cfg, init_params(&cfg, &data), &data).unwrap();
    let top1 = evaluate(&params, &test, &data.clues, &[1]).unwrap()[&1];
    let scores = score_images(&params, &test, &data.clues).unwrap();
    let mut per: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
    for (i, &y) in test.labels.iter().enumerate() {
        let single = Array2::from_shape_vec((1, scores.ncols()), scores.row(i).to_vec()).unwrap();
        let hit = topk_accuracy(&single, &[y], &[1]).unwrap()[&1] == 1.0;
        let e = per.entry(y).or_default();
        e.0 += usize::from(hit);
        e.1 += 1;
    }
    let mean = per.values().map(|&(h, n)| h as f64 / n as f64).sum::<f64>() / per.len() as f64;
    assert!((mean - top1).abs() < 1e-12);

    let preds = predictions(&params, &test, &data.clues, &world.labels, 3, 4).unwrap();
    assert_eq!(preds.len(), test.len());
    let hits = preds.iter().filter(|p| p.ranked[0] == p.country).count();
    assert_eq!(hits as f64 / test.len() as f64, top1);
    assert!(preds.iter().all(|p| p.top_clues.len() == 4 && p.ranked.len() == 3));
}

#[test]
fn two_seed_grid_stds_and_determinism() {
    let world = common::synthetic_world();
    let cfg = AblationConfig {
        seeds: vec![0, 1],
        feature_sets: vec![FeatureSet::Image],
        train: g3_core::TrainConfig {
            epochs: 5,
            ..common::fixture_train_config()
        },
        ..common::fixture_ablation_config()
    };
    let a = ablation_grid(&world.inputs(), &cfg).unwrap();
    let b = ablation_grid(&world.inputs(), &cfg).unwrap();
    assert_eq!(a.to_json(), b.to_json());
    let models: Vec<&str> = a.rows.iter().map(|r| r.model.as_str()).collect();
    assert_eq!(
        models,
        [
            "Aux Nearest Neighbor",
            "Aux Linear Probe",
            "Image",
            "Image + Random Text",
            "Image + Guidebook",
            "Image + Guidebook"
        ]
    );
    for row in a.rows.iter().skip(1) {
        assert_eq!(row.per_seed.len(), 2);
        for (k, m) in &row.topk {
            let x = row.per_seed[0].topk[k];
            let y = row.per_seed[1].topk[k];
            let mean = (x + y) / 2.0;
            let std = (((x - mean).powi(2) + (y - mean).powi(2)) / 1.0).sqrt();
            assert!((m.mean - mean).abs() < 1e-12);
            assert!((m.std - std).abs() < 1e-12);
        }
    }
    let table = a.to_table();
    assert!(table.contains(" ± "));
    assert_eq!(g3_core::EvalReport::from_json(&a.to_json()).unwrap(), a);
}

#[test]
fn histograms_match_recount() {
    let world = common::synthetic_world();
    let h = histograms(&world.clues, Some(&world.pseudo), Some(&world.manifest));
    let mut cue: BTreeMap<String, usize> = BTreeMap::new();
    let mut country: BTreeMap<String, usize> = world.labels.codes().iter().map(|c| (c.clone(), 0)).collect();
    for clue in &world.clues {
        *cue.entry(clue.cue_type.to_string()).or_default() += 1;
        for code in &clue.countries {
            *country.entry(code.clone()).or_default() += 1;
        }
    }
    let mut images: BTreeMap<String, usize> = BTreeMap::new();
    for r in &world.manifest.records {
        *images.entry(r.country.clone()).or_default() += 1;
    }
    assert_eq!(h.clues_per_cue_type, cue);
    assert_eq!(h.clues_per_country, country);
    assert_eq!(h.images_per_country, images);
    assert_eq!(h.clues_per_cue_type.values().sum::<usize>(), world.clues.len());
    let empty = histograms(&[], None, None);
    assert!(empty.clues_per_cue_type.is_empty() && empty.clues_per_country.is_empty());
}
