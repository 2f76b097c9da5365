//! Deterministic synthetic embeddings for desk-scale experiments.
//!
//! Every country `c` gets a unit prototype in each embedding space. With `g`
//! standard normal vectors and `h` a random unit "nuisance" direction per
//! image:
//!
//! - query   = normalize(u_c + noise_image * g)
//! - feature = normalize(s * u_c + (1 - s) * h + noise_image * g')
//! - clue    = normalize(mean_{c in S} u_c + noise_clue * g''), pure noise when
//!   the clue names no label-set country
//! - random-text clue = normalize(g''') for every clue row
//!
//! where `s` is `feature_signal`. Draw order is fixed: prototypes (query,
//! feature, clue spaces, countries in class order) on sub-stream 1, image
//! noise (manifest order; g, then h, then g') on sub-stream 2, clue noise on
//! sub-stream 3, random-text rows on sub-stream 4.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::EmbeddingMatrix;
use crate::corpus::Clue;
use crate::dataset::DatasetManifest;
use crate::error::{Error, Result};
use crate::labels::LabelSet;
use crate::rng::SplitMix64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticWorldConfig {
    pub n_countries: usize,
    pub dim_query: usize,
    pub dim_feature: usize,
    pub dim_clue: usize,
    pub noise_image: f64,
    pub noise_clue: f64,
    pub feature_signal: f64,
    pub seed: u64,
}

impl SyntheticWorldConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_countries < 2 {
            return Err(Error::Config("n_countries must be at least 2".into()));
        }
        if self.dim_query < 2 || self.dim_feature < 2 || self.dim_clue < 2 {
            return Err(Error::Config("embedding dims must be at least 2".into()));
        }
        if !(self.noise_image >= 0.0 && self.noise_clue >= 0.0) {
            return Err(Error::Config("noise levels must be non-negative".into()));
        }
        if !(0.0..=1.0).contains(&self.feature_signal) {
            return Err(Error::Config("feature_signal must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticStores {
    pub query: EmbeddingMatrix,
    pub feature: EmbeddingMatrix,
    pub clue: EmbeddingMatrix,
    pub random_clue: EmbeddingMatrix,
    /// Query-space prototypes, one row per class index.
    pub query_prototypes: Array2<f64>,
    pub clue_prototypes: Array2<f64>,
}

fn gaussian(rng: &mut SplitMix64, dim: usize) -> Array1<f64> {
    Array1::from_shape_fn(dim, |_| rng.normal())
}

fn normalize(v: Array1<f64>) -> Array1<f64> {
    let norm = v.dot(&v).sqrt();
    if norm > 0.0 {
        v / norm
    } else {
        v
    }
}

fn unit(rng: &mut SplitMix64, dim: usize) -> Array1<f64> {
    normalize(gaussian(rng, dim))
}

fn prototypes(rng: &mut SplitMix64, n: usize, dim: usize) -> Array2<f64> {
    let mut out = Array2::zeros((n, dim));
    for mut row in out.rows_mut() {
        row.assign(&unit(rng, dim));
    }
    out
}

pub fn synth_generate(
    cfg: &SyntheticWorldConfig,
    clues: &[Clue],
    manifest: &DatasetManifest,
) -> Result<SyntheticStores> {
    cfg.validate()?;
    if manifest.records.is_empty() {
        return Err(Error::Data("empty manifest".into()));
    }
    let labels: LabelSet = manifest.label_set()?;
    if labels.len() != cfg.n_countries {
        return Err(Error::Config(format!(
            "manifest has {} countries but n_countries = {}",
            labels.len(),
            cfg.n_countries
        )));
    }
    let n_img = manifest.records.len();

    let mut proto_rng = SplitMix64::stream(cfg.seed, 1);
    let proto_q = prototypes(&mut proto_rng, cfg.n_countries, cfg.dim_query);
    let proto_f = prototypes(&mut proto_rng, cfg.n_countries, cfg.dim_feature);
    let proto_c = prototypes(&mut proto_rng, cfg.n_countries, cfg.dim_clue);

    let mut img_rng = SplitMix64::stream(cfg.seed, 2);
    let mut query = Array2::zeros((n_img, cfg.dim_query));
    let mut feature = Array2::zeros((n_img, cfg.dim_feature));
    let s = cfg.feature_signal;
    for (i, rec) in manifest.records.iter().enumerate() {
        let c = labels.require_index(&rec.country)?;
        let g = gaussian(&mut img_rng, cfg.dim_query);
        let h = unit(&mut img_rng, cfg.dim_feature);
        let g2 = gaussian(&mut img_rng, cfg.dim_feature);
        query
            .row_mut(i)
            .assign(&normalize(&proto_q.row(c) + &(g * cfg.noise_image)));
        let f = &proto_f.row(c) * s + &h * (1.0 - s) + &g2 * cfg.noise_image;
        feature.row_mut(i).assign(&normalize(f));
    }

    let mut clue_rng = SplitMix64::stream(cfg.seed, 3);
    let mut clue = Array2::zeros((clues.len(), cfg.dim_clue));
    for (i, cl) in clues.iter().enumerate() {
        let members: Vec<usize> = cl.countries.iter().filter_map(|code| labels.index_of(code)).collect();
        let noise = gaussian(&mut clue_rng, cfg.dim_clue) * cfg.noise_clue;
        let v = if members.is_empty() {
            // A signal-free clue is pure noise even at zero noise level.
            if cfg.noise_clue > 0.0 {
                noise
            } else {
                unit(&mut clue_rng, cfg.dim_clue)
            }
        } else {
            let mut mean = Array1::zeros(cfg.dim_clue);
            for &m in &members {
                mean += &proto_c.row(m);
            }
            mean / members.len() as f64 + noise
        };
        clue.row_mut(i).assign(&normalize(v));
    }

    let mut random_rng = SplitMix64::stream(cfg.seed, 4);
    let mut random_clue = Array2::zeros((clues.len(), cfg.dim_clue));
    for mut row in random_clue.rows_mut() {
        row.assign(&unit(&mut random_rng, cfg.dim_clue));
    }

    let image_ids: Vec<String> = manifest.records.iter().map(|r| r.image_id.clone()).collect();
    let clue_ids: Vec<String> = clues.iter().map(|c| c.id.to_string()).collect();
    Ok(SyntheticStores {
        query: EmbeddingMatrix::from_array(image_ids.clone(), &query)?,
        feature: EmbeddingMatrix::from_array(image_ids, &feature)?,
        clue: EmbeddingMatrix::from_array(clue_ids.clone(), &clue)?,
        random_clue: EmbeddingMatrix::from_array(clue_ids, &random_clue)?,
        query_prototypes: proto_q,
        clue_prototypes: proto_c,
    })
}
