//! Corpus histograms: clues per cue type and clues per country.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::corpus::Clue;
use crate::dataset::DatasetManifest;
use crate::geoparse::PseudoLabelMatrix;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Histograms {
    pub clues_per_cue_type: BTreeMap<String, usize>,
    pub clues_per_country: BTreeMap<String, usize>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub images_per_country: BTreeMap<String, usize>,
}

pub fn histograms(
    clues: &[Clue],
    pseudo: Option<&PseudoLabelMatrix>,
    manifest: Option<&DatasetManifest>,
) -> Histograms {
    let mut h = Histograms::default();
    for c in clues {
        *h.clues_per_cue_type.entry(c.cue_type.to_string()).or_default() += 1;
    }
    if let Some(p) = pseudo {
        for (code, ids) in p.country_to_clues() {
            h.clues_per_country.insert(code.clone(), ids.len());
        }
    }
    if let Some(m) = manifest {
        for r in &m.records {
            *h.images_per_country.entry(r.country.clone()).or_default() += 1;
        }
    }
    h
}

/// Horizontal bars sorted by descending count, then label.
pub fn bar_chart(title: &str, counts: &BTreeMap<String, usize>, width: usize) -> String {
    let mut rows: Vec<(&String, &usize)> = counts.iter().collect();
    rows.sort_by(|a, b| b.1.cmp(a.1).then(a.0.cmp(b.0)));
    let max = rows.first().map(|r| *r.1).unwrap_or(0);
    let label_w = rows.iter().map(|r| r.0.chars().count()).max().unwrap_or(0);
    let mut out = format!("{title}\n");
    for (label, &n) in rows {
        let len = if max == 0 { 0 } else { (n * width).div_ceil(max) };
        let pad = " ".repeat(label_w - label.chars().count());
        let _ = writeln!(out, "{label}{pad} | {} {n}", "#".repeat(len));
    }
    out
}

impl Histograms {
    pub fn to_text(&self) -> String {
        let mut out = bar_chart("clues per cue type", &self.clues_per_cue_type, 40);
        out.push('\n');
        out.push_str(&bar_chart("clues per country", &self.clues_per_country, 40));
        if !self.images_per_country.is_empty() {
            out.push('\n');
            out.push_str(&bar_chart("images per country", &self.images_per_country, 40));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::CueTag;

    #[test]
    fn empty_corpus() {
        let h = histograms(&[], None, None);
        assert!(h.clues_per_cue_type.is_empty());
        assert!(h.clues_per_country.is_empty());
        assert_eq!(bar_chart("t", &BTreeMap::new(), 10), "t\n");
    }

    #[test]
    fn counts_and_bars() {
        let clues = vec![
            Clue::new(0, "a", CueTag::Signage),
            Clue::new(1, "b", CueTag::Signage),
            Clue::new(2, "c", CueTag::Soil),
        ];
        let h = histograms(&clues, None, None);
        assert_eq!(h.clues_per_cue_type["signage"], 2);
        let chart = bar_chart("x", &h.clues_per_cue_type, 4);
        assert_eq!(chart, "x\nsignage | #### 2\nsoil    | ## 1\n");
    }
}
