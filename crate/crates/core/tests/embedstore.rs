mod common;

use ndarray::Array2;
use proptest::prelude::*;

use g3_core::corpus::Clue;
use g3_core::dataset::Split;
use g3_core::embedstore::{read_store, synth_generate, write_store, EmbeddingMatrix, SyntheticWorldConfig};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn random_matrix_round_trips(seed in any::<u64>()) {
        let mut rng = g3_core::SplitMix64::new(seed);
        let data: Vec<f32> = (0..100 * 64).map(|_| (rng.normal() * 10.0) as f32).collect();
        let ids: Vec<String> = (0..100).map(|i| format!("r{i}")).collect();
        let m = EmbeddingMatrix::new(ids, 64, data).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.geb");
        write_store(&m, &path).unwrap();
        let back = read_store(&path).unwrap();
        prop_assert_eq!(back.ids(), m.ids());
        let a: Vec<u32> = m.data().iter().map(|v| v.to_bits()).collect();
        let b: Vec<u32> = back.data().iter().map(|v| v.to_bits()).collect();
        prop_assert_eq!(a, b);
    }
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

/// Fraction of query rows whose most similar prototype is their own country.
fn nearest_prototype_accuracy(query: &Array2<f64>, protos: &Array2<f64>, labels: &[usize]) -> f64 {
    let mut hits = 0;
    for (i, &y) in labels.iter().enumerate() {
        let q: Vec<f64> = query.row(i).to_vec();
        let mut best = 0;
        let mut best_sim = f64::NEG_INFINITY;
        for c in 0..protos.nrows() {
            let s = cosine(&q, &protos.row(c).to_vec());
            if s > best_sim {
                best_sim = s;
                best = c;
            }
        }
        hits += usize::from(best == y);
    }
    hits as f64 / labels.len() as f64
}

#[test]
fn nearest_prototype_reference() {
    let world = common::synthetic_world();
    let cfg = SyntheticWorldConfig {
        n_countries: 10,
        dim_query: 16,
        dim_feature: 16,
        dim_clue: 16,
        noise_image: 0.3,
        noise_clue: 0.3,
        feature_signal: 0.5,
        seed: 7,
    };
    let stores = synth_generate(&cfg, &world.clues, &world.manifest).unwrap();
    let labels: Vec<usize> = world
        .manifest
        .records
        .iter()
        .map(|r| world.labels.index_of(&r.country).unwrap())
        .collect();
    let acc = nearest_prototype_accuracy(&stores.query.to_array(), &stores.query_prototypes, &labels);
    println!("nearest-prototype accuracy over {} images: {acc:.4}", labels.len());
    assert_eq!(acc, NEAREST_PROTOTYPE_REFERENCE);
}

/// Recorded from the brute-force oracle above on the fixture manifest.
const NEAREST_PROTOTYPE_REFERENCE: f64 = 256.0 / 280.0;

#[test]
fn fixture_stores_are_unit_norm_and_aligned() {
    let world = common::synthetic_world();
    let s = &world.stores;
    for m in [&s.query, &s.feature, &s.clue, &s.random_clue] {
        for i in 0..m.n_rows() {
            let n: f64 = m
                .row(i)
                .iter()
                .map(|&v| f64::from(v) * f64::from(v))
                .sum::<f64>()
                .sqrt();
            assert!((n - 1.0).abs() < 1e-6);
        }
    }
    assert_eq!(s.clue.n_rows(), world.clues.len());
    let ids: Vec<String> = world.clues.iter().map(|c: &Clue| c.id.to_string()).collect();
    assert_eq!(s.clue.ids(), &ids[..]);
    assert_eq!(s.query.n_rows(), world.manifest.records.len());
    assert!(world
        .manifest
        .split(Split::Test)
        .all(|r| s.query.ids().contains(&r.image_id)));
}
