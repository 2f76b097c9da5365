use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::explain::rank_by_weight;
use super::metrics::{rank_classes, MeanStd};
use crate::dataset::Split;
use crate::error::{Error, Result};
use crate::labels::LabelSet;
use crate::model::{forward, BatchInput, G3Params, Mode};
use crate::trainer::{ImageSet, SeedRun};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Supervision {
    #[serde(rename = "n.a.")]
    NotApplicable,
    #[serde(rename = "no")]
    No,
    #[serde(rename = "yes")]
    Yes,
}

impl Supervision {
    pub fn as_str(self) -> &'static str {
        match self {
            Supervision::NotApplicable => "N/A",
            Supervision::No => "No",
            Supervision::Yes => "Yes",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub model: String,
    pub attn_supervision: Supervision,
    pub topk: BTreeMap<usize, MeanStd>,
    #[serde(default)]
    pub per_seed: Vec<SeedRun>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub image_id: String,
    pub country: String,
    /// Countries by descending score.
    pub ranked: Vec<String>,
    /// `(clue id, attention weight)` by descending weight.
    pub top_clues: Vec<(usize, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub split: Split,
    pub ks: Vec<usize>,
    pub rows: Vec<ReportRow>,
    #[serde(default)]
    pub predictions: Vec<Prediction>,
}

impl EvalReport {
    /// Checks Top-k monotonicity and the range of every mean.
    pub fn validate(&self) -> Result<()> {
        if self.ks.is_empty() || self.ks.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Data("ks must be non-empty and strictly increasing".into()));
        }
        for row in &self.rows {
            let keys: Vec<usize> = row.topk.keys().copied().collect();
            if keys != self.ks {
                return Err(Error::Data(format!("row {:?} reports k = {keys:?}", row.model)));
            }
            let means: Vec<f64> = row.topk.values().map(|m| m.mean).collect();
            if means.iter().any(|m| !(0.0..=1.0).contains(m)) {
                return Err(Error::Data(format!("row {:?} has a mean outside [0, 1]", row.model)));
            }
            if means.windows(2).any(|w| w[0] > w[1]) {
                return Err(Error::Data(format!("row {:?} is not monotone in k", row.model)));
            }
            if row.topk.values().any(|m| m.std.is_nan() || m.std < 0.0) {
                return Err(Error::Data(format!("row {:?} has an invalid std", row.model)));
            }
        }
        Ok(())
    }

    pub fn row(&self, model: &str, supervision: Supervision) -> Option<&ReportRow> {
        self.rows
            .iter()
            .find(|r| r.model == model && r.attn_supervision == supervision)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("serializable") + "\n"
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let r: EvalReport = serde_json::from_str(text).map_err(|e| Error::json("report", e))?;
        r.validate()?;
        Ok(r)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// Plain-text table: model, attention supervision, then `mean ± std` per k.
    pub fn to_table(&self) -> String {
        let mut header = vec!["Model".to_string(), "Attn Supervision".to_string()];
        header.extend(self.ks.iter().map(|k| format!("Top-{k}")));
        let mut lines = vec![header];
        for row in &self.rows {
            let mut cells = vec![row.model.clone(), row.attn_supervision.as_str().to_string()];
            for k in &self.ks {
                cells.push(match row.topk.get(k) {
                    Some(m) if row.per_seed.len() > 1 => format!("{:.4} ± {:.3}", m.mean, m.std),
                    Some(m) => format!("{:.4}", m.mean),
                    None => "-".into(),
                });
            }
            lines.push(cells);
        }
        let widths: Vec<usize> = (0..lines[0].len())
            .map(|j| lines.iter().map(|l| l[j].chars().count()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for (i, l) in lines.iter().enumerate() {
            let cells: Vec<String> = l
                .iter()
                .zip(&widths)
                .map(|(c, w)| format!("{c}{}", " ".repeat(w - c.chars().count())))
                .collect();
            let _ = writeln!(out, "{}", cells.join("  ").trim_end());
            if i == 0 {
                let _ = writeln!(
                    out,
                    "{}",
                    "-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1))
                );
            }
        }
        out
    }
}

/// Per-image country rankings (top `n_ranked`) and most attended clues
/// (top `n_clues`), from eval-mode forward passes.
pub fn predictions(
    params: &G3Params,
    set: &ImageSet,
    clues: &Array2<f64>,
    labels: &LabelSet,
    n_ranked: usize,
    n_clues: usize,
) -> Result<Vec<Prediction>> {
    let mut out = Vec::with_capacity(set.len());
    for start in (0..set.len()).step_by(256) {
        let end = (start + 256).min(set.len());
        let input = BatchInput {
            query: set.query.slice(ndarray::s![start..end, ..]).to_owned(),
            feature: set.feature.slice(ndarray::s![start..end, ..]).to_owned(),
        };
        let trace = forward(params, &input, clues, Mode::Eval)?;
        for r in 0..end - start {
            let i = start + r;
            let ranked = rank_classes(trace.class_logits.row(r))
                .into_iter()
                .take(n_ranked)
                .map(|c| labels.code(c).to_string())
                .collect();
            let w = trace.attn_weights.row(r).to_vec();
            let top_clues = rank_by_weight(&w)
                .into_iter()
                .take(n_clues)
                .map(|j| (j, w[j]))
                .collect();
            out.push(Prediction {
                image_id: set.ids[i].clone(),
                country: labels.code(set.labels[i]).to_string(),
                ranked,
                top_clues,
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ms(mean: f64) -> MeanStd {
        MeanStd { mean, std: 0.0 }
    }

    fn report(a: f64, b: f64) -> EvalReport {
        EvalReport {
            split: Split::Test,
            ks: vec![1, 5],
            rows: vec![ReportRow {
                model: "Image".into(),
                attn_supervision: Supervision::NotApplicable,
                topk: [(1, ms(a)), (5, ms(b))].into_iter().collect(),
                per_seed: vec![],
            }],
            predictions: vec![],
        }
    }

    #[test]
    fn validation() {
        assert!(report(0.5, 0.9).validate().is_ok());
        assert!(report(0.9, 0.5).validate().is_err());
        assert!(report(0.5, 1.5).validate().is_err());
    }

    #[test]
    fn json_round_trip_and_table() {
        let r = report(0.5, 0.9);
        assert_eq!(EvalReport::from_json(&r.to_json()).unwrap(), r);
        let t = r.to_table();
        assert!(t.starts_with("Model  Attn Supervision  Top-1   Top-5"));
        assert!(t.contains("Image  N/A               0.5000  0.9000"));
        assert!(r.to_json().contains("\"attn_supervision\": \"n.a.\""));
    }
}
