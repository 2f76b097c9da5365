//! Image geolocation grounded in a guidebook of textual clues.
//!
//! The pipeline: split a guidebook into location-bearing clue sentences
//! ([`corpus`]), label clues with the countries they mention ([`geoparse`]),
//! load precomputed embeddings ([`embedstore`]), split panoramas into
//! train/val/test images ([`dataset`]), train the attention classifier
//! ([`model`], [`trainer`]) and score it ([`eval`]).

pub mod corpus;
pub mod dataset;
pub mod embedstore;
pub mod error;
pub mod eval;
pub mod geoparse;
pub mod labels;
pub mod model;
pub mod rng;
pub mod stats;
pub mod trainer;

pub use corpus::{Clue, CueTag};
pub use dataset::{DatasetManifest, ImageRecord, Split};
pub use embedstore::EmbeddingMatrix;
pub use error::{Error, Result};
pub use eval::{EvalReport, MeanStd};
pub use geoparse::{CountryLexicon, Gazetteer, PseudoLabelMatrix};
pub use labels::LabelSet;
pub use model::{G3Params, ModelDims, ModelOptions};
pub use rng::SplitMix64;
pub use trainer::{ImageSet, TrainConfig, TrainData, TrainRunRecord};
