#![allow(dead_code)]

use std::path::PathBuf;

use g3_core::corpus::{extract_clues, Clue, HeadingMap, RawGuidebook};
use g3_core::dataset::{class_weights, read_panoramas, split_panoramas, DatasetManifest, SplitRatios};
use g3_core::embedstore::{synth_generate, SyntheticStores, SyntheticWorldConfig};
use g3_core::eval::{AblationConfig, AblationInputs};
use g3_core::geoparse::{build_pseudo_labels, CountryLexicon, Gazetteer, PseudoLabelMatrix};
use g3_core::labels::LabelSet;
use g3_core::trainer::TrainConfig;

pub const SPLIT_SEED: u64 = 11;
pub const SPLIT_RATIOS: &str = "0.3846,0.3077,0.3077";
pub const TEST_PER_COUNTRY: usize = 4;

pub fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

pub struct World {
    pub clues: Vec<Clue>,
    pub labels: LabelSet,
    pub pseudo: PseudoLabelMatrix,
    pub manifest: DatasetManifest,
    pub stores: SyntheticStores,
    pub class_weights: Vec<f64>,
}

impl World {
    pub fn inputs(&self) -> AblationInputs<'_> {
        AblationInputs {
            manifest: &self.manifest,
            labels: &self.labels,
            query: &self.stores.query,
            feature: &self.stores.feature,
            clues: Some(&self.stores.clue),
            random_clues: Some(&self.stores.random_clue),
            pseudo: Some(&self.pseudo),
            class_weights: self.class_weights.clone(),
        }
    }
}

/// Builds the synthetic fixture from its checked-in inputs.
pub fn synthetic_world() -> World {
    let dir = fixtures().join("synthetic");
    let text = std::fs::read_to_string(dir.join("guide.txt")).unwrap();
    let guide = RawGuidebook::parse("synthetic", &text);
    let mut clues = extract_clues(&guide, &Gazetteer::builtin(), &HeadingMap::default());
    let labels = LabelSet::read(&dir.join("countries.txt")).unwrap();
    let pseudo = build_pseudo_labels(&mut clues, &CountryLexicon::builtin(), &labels).unwrap();
    let panos = read_panoramas(&dir.join("panoramas.jsonl")).unwrap();
    let ratios: SplitRatios = SPLIT_RATIOS.parse().unwrap();
    let manifest = split_panoramas(&panos, ratios, Some(TEST_PER_COUNTRY), SPLIT_SEED).unwrap();
    let cfg: SyntheticWorldConfig =
        serde_json::from_str(&std::fs::read_to_string(dir.join("synth.json")).unwrap()).unwrap();
    let stores = synth_generate(&cfg, &clues, &manifest).unwrap();
    let class_weights = class_weights(&manifest, &labels).unwrap().to_vec(&labels).unwrap();
    World {
        clues,
        labels,
        pseudo,
        manifest,
        stores,
        class_weights,
    }
}

/// Training recipe used for every fixture experiment.
pub fn fixture_train_config() -> TrainConfig {
    serde_json::from_str(&std::fs::read_to_string(fixtures().join("synthetic/train.json")).unwrap()).unwrap()
}

pub fn fixture_ablation_config() -> AblationConfig {
    serde_json::from_str(&std::fs::read_to_string(fixtures().join("synthetic/ablate.json")).unwrap()).unwrap()
}
