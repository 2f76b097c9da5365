//! Image manifests, panorama-level splitting, and class weights.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::LabelSet;
use crate::rng::SplitMix64;

/// Number of disjoint cuts taken from each panorama.
pub const CUTS_PER_PANORAMA: u8 = 4;

/// Below this many panoramas per country a split is still produced, but a
/// warning is logged: the full-scale collection gathered at least this many.
pub const MIN_PANORAMAS_WARNING: usize = 426;

const SPLIT_STREAM: u64 = 0x7370_6c69_7400;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            _ => Err(Error::Data(format!("unknown split {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub image_id: String,
    pub panorama_id: String,
    pub cut_index: u8,
    pub country: String,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Panorama {
    pub panorama_id: String,
    pub country: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct DatasetManifest {
    pub records: Vec<ImageRecord>,
}

impl DatasetManifest {
    pub fn new(records: Vec<ImageRecord>) -> Result<Self> {
        let m = DatasetManifest { records };
        m.validate()?;
        Ok(m)
    }

    /// Checks every structural invariant: unique image ids and cuts,
    /// panorama-consistent country and split, 4 cuts per train panorama,
    /// 1 per val/test panorama, and equal per-country test counts.
    pub fn validate(&self) -> Result<()> {
        let mut image_ids = HashSet::new();
        let mut cuts = HashSet::new();
        let mut panos: HashMap<&str, (&str, Split, usize)> = HashMap::new();
        for r in &self.records {
            if !image_ids.insert(r.image_id.as_str()) {
                return Err(Error::Data(format!("duplicate image id {}", r.image_id)));
            }
            if r.cut_index >= CUTS_PER_PANORAMA {
                return Err(Error::Data(format!("cut index {} out of range", r.cut_index)));
            }
            if !cuts.insert((r.panorama_id.as_str(), r.cut_index)) {
                return Err(Error::Data(format!(
                    "duplicate cut {} of panorama {}",
                    r.cut_index, r.panorama_id
                )));
            }
            let entry = panos
                .entry(r.panorama_id.as_str())
                .or_insert((r.country.as_str(), r.split, 0));
            if entry.0 != r.country || entry.1 != r.split {
                return Err(Error::Data(format!(
                    "panorama {} spans countries or splits",
                    r.panorama_id
                )));
            }
            entry.2 += 1;
        }
        for (id, (_, split, n)) in &panos {
            let expected = if *split == Split::Train {
                CUTS_PER_PANORAMA as usize
            } else {
                1
            };
            if *n != expected {
                return Err(Error::Data(format!(
                    "panorama {id} has {n} {split} records, expected {expected}"
                )));
            }
        }
        let test = self.counts(Split::Test);
        let mut sizes = test.values();
        if let Some(first) = sizes.next() {
            if sizes.any(|n| n != first) {
                return Err(Error::Data("test split is not balanced across countries".into()));
            }
        }
        Ok(())
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ImageRecord> {
        self.records.iter().filter(move |r| r.split == split)
    }

    pub fn counts(&self, split: Split) -> BTreeMap<String, usize> {
        let mut out = BTreeMap::new();
        for r in self.split(split) {
            *out.entry(r.country.clone()).or_insert(0) += 1;
        }
        out
    }

    /// Label set formed by every country present in the manifest.
    pub fn label_set(&self) -> Result<LabelSet> {
        LabelSet::new(self.records.iter().map(|r| r.country.clone()))
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("serializable"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let records = parse_jsonl(text, "manifest")?;
        DatasetManifest::new(records)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_jsonl()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        DatasetManifest::from_jsonl(&text)
    }
}

pub(crate) fn parse_jsonl<T: serde::de::DeserializeOwned>(text: &str, what: &str) -> Result<Vec<T>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::json(format!("{what} line {}", i + 1), e)))
        .collect()
}

pub fn read_panoramas(path: &Path) -> Result<Vec<Panorama>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_jsonl(&text, "panoramas")
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl SplitRatios {
    pub fn new(train: f64, val: f64, test: f64) -> Result<Self> {
        let all = [train, val, test];
        if all.iter().any(|r| !r.is_finite() || *r < 0.0) {
            return Err(Error::Config(format!("split ratios must be non-negative: {all:?}")));
        }
        let sum: f64 = all.iter().sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(Error::Config(format!("split ratios must sum to 1, got {sum}")));
        }
        Ok(SplitRatios { train, val, test })
    }
}

impl FromStr for SplitRatios {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<f64> = s
            .split(',')
            .map(|p| p.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Config(format!("bad ratios {s:?}: {e}")))?;
        match parts.as_slice() {
            [a, b, c] => SplitRatios::new(*a, *b, *c),
            _ => Err(Error::Config(format!("expected three ratios, got {s:?}"))),
        }
    }
}

/// Assigns whole panoramas to splits and expands them into image records.
///
/// Procedure (all draws from one `SplitMix64` sub-stream of `seed`):
/// 1. group panoramas by country (ascending code), keeping input order, and
///    shuffle each group in that country order;
/// 2. shuffle the country list; the first `V mod C` countries get one extra
///    validation panorama, where `V = round(N * ratios.val)`;
/// 3. per country, the first `K` shuffled panoramas go to test, the next
///    `V / C` (+1) to val, the rest to train; `K` is `test_per_country`, or
///    `floor(N * ratios.test / C)` when absent;
/// 4. records are emitted country by country in shuffled panorama order;
///    train panoramas yield all 4 cuts, val/test ones a single cut drawn with
///    `below(4)` at emission time.
///
/// Every country must keep at least one training panorama.
pub fn split_panoramas(
    panoramas: &[Panorama],
    ratios: SplitRatios,
    test_per_country: Option<usize>,
    seed: u64,
) -> Result<DatasetManifest> {
    if panoramas.is_empty() {
        return Err(Error::Data("no panoramas to split".into()));
    }
    let mut seen = HashSet::new();
    let mut groups: BTreeMap<&str, Vec<&Panorama>> = BTreeMap::new();
    for p in panoramas {
        if !seen.insert(p.panorama_id.as_str()) {
            return Err(Error::Data(format!("duplicate panorama id {}", p.panorama_id)));
        }
        groups.entry(p.country.as_str()).or_default().push(p);
    }
    let n = panoramas.len();
    let c = groups.len();
    let mut rng = SplitMix64::stream(seed, SPLIT_STREAM);
    for group in groups.values_mut() {
        rng.shuffle(group);
    }
    let k = test_per_country.unwrap_or(((n as f64 * ratios.test) / c as f64).floor() as usize);
    let v_total = (n as f64 * ratios.val).round() as usize;
    let mut order: Vec<&str> = groups.keys().copied().collect();
    rng.shuffle(&mut order);
    let bonus: HashSet<&str> = order.iter().take(v_total % c).copied().collect();

    let mut deficient = Vec::new();
    let mut val_quota = BTreeMap::new();
    for (country, group) in &groups {
        let v = v_total / c + usize::from(bonus.contains(country));
        if group.len() < k + v + 1 {
            deficient.push(format!("{country} (has {}, needs {})", group.len(), k + v + 1));
        }
        if group.len() < MIN_PANORAMAS_WARNING {
            log::debug!("{country}: {} panoramas, below {MIN_PANORAMAS_WARNING}", group.len());
        }
        val_quota.insert(*country, v);
    }
    if !deficient.is_empty() {
        return Err(Error::InfeasibleSplit(deficient));
    }

    let mut records = Vec::new();
    for (country, group) in &groups {
        let v = val_quota[country];
        for (i, p) in group.iter().enumerate() {
            let split = if i < k {
                Split::Test
            } else if i < k + v {
                Split::Val
            } else {
                Split::Train
            };
            let cuts: Vec<u8> = if split == Split::Train {
                (0..CUTS_PER_PANORAMA).collect()
            } else {
                vec![rng.below(CUTS_PER_PANORAMA as usize) as u8]
            };
            for cut in cuts {
                records.push(ImageRecord {
                    image_id: format!("{}_{cut}", p.panorama_id),
                    panorama_id: p.panorama_id.clone(),
                    cut_index: cut,
                    country: p.country.clone(),
                    split,
                });
            }
        }
    }
    DatasetManifest::new(records)
}

/// Inverse-frequency loss weights over the training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassWeights {
    pub weights: BTreeMap<String, f64>,
}

impl ClassWeights {
    pub fn uniform(labels: &LabelSet) -> Self {
        ClassWeights {
            weights: labels.codes().iter().map(|c| (c.clone(), 1.0)).collect(),
        }
    }

    /// Weights in class-index order.
    pub fn to_vec(&self, labels: &LabelSet) -> Result<Vec<f64>> {
        labels
            .codes()
            .iter()
            .map(|c| {
                self.weights
                    .get(c)
                    .copied()
                    .ok_or_else(|| Error::UnknownCountry(c.clone()))
            })
            .collect()
    }
}

/// `w_c = N / (C * count_c)` over training records of the label set.
pub fn class_weights(manifest: &DatasetManifest, labels: &LabelSet) -> Result<ClassWeights> {
    let counts = manifest.counts(Split::Train);
    let n: usize = labels.codes().iter().map(|c| counts.get(c).copied().unwrap_or(0)).sum();
    let c = labels.len() as f64;
    let mut weights = BTreeMap::new();
    for code in labels.codes() {
        let count = counts.get(code).copied().unwrap_or(0);
        if count == 0 {
            return Err(Error::Data(format!("country {code} has no training images")));
        }
        weights.insert(code.clone(), n as f64 / (c * count as f64));
    }
    Ok(ClassWeights { weights })
}
