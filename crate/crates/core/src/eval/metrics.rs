use std::collections::BTreeMap;

use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Class indices by descending score; equal scores keep ascending index.
pub fn rank_classes(scores: ArrayView1<f64>) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx
}

/// Number of classes ranked strictly ahead of `label`.
fn rank_of(scores: ArrayView1<f64>, label: usize) -> usize {
    let s = scores[label];
    scores
        .iter()
        .enumerate()
        .filter(|&(j, &v)| v.total_cmp(&s).is_gt() || (v.total_cmp(&s).is_eq() && j < label))
        .count()
}

pub fn check_ks(ks: &[usize], n_classes: usize) -> Result<()> {
    if ks.is_empty() {
        return Err(Error::Config("no k values".into()));
    }
    for &k in ks {
        if k == 0 || k > n_classes {
            return Err(Error::Config(format!("k = {k} outside 1..={n_classes}")));
        }
    }
    Ok(())
}

/// Fraction of rows whose label is among the `k` highest scores, per `k`.
pub fn topk_accuracy(scores: &Array2<f64>, labels: &[usize], ks: &[usize]) -> Result<BTreeMap<usize, f64>> {
    let n = scores.nrows();
    if n == 0 {
        return Err(Error::Data("empty evaluation set".into()));
    }
    if labels.len() != n {
        return Err(Error::Shape(format!("{} labels for {n} score rows", labels.len())));
    }
    let c = scores.ncols();
    check_ks(ks, c)?;
    let mut hits: BTreeMap<usize, usize> = ks.iter().map(|&k| (k, 0)).collect();
    for (row, &y) in scores.rows().into_iter().zip(labels) {
        if y >= c {
            return Err(Error::Shape(format!("label {y} for {c} classes")));
        }
        let r = rank_of(row, y);
        for (&k, h) in hits.iter_mut() {
            if r < k {
                *h += 1;
            }
        }
    }
    Ok(hits.into_iter().map(|(k, h)| (k, h as f64 / n as f64)).collect())
}

/// Keeps the `ks` that do not exceed the class count.
pub fn feasible_ks(ks: &[usize], n_classes: usize) -> Vec<usize> {
    let mut out: Vec<usize> = ks.iter().copied().filter(|&k| k >= 1 && k <= n_classes).collect();
    out.sort_unstable();
    out.dedup();
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Sample standard deviation; 0 for a single value.
    pub std: f64,
}

pub fn mean_std(values: &[f64]) -> MeanStd {
    let n = values.len();
    if n == 0 {
        return MeanStd {
            mean: f64::NAN,
            std: f64::NAN,
        };
    }
    if values.iter().all(|v| v.to_bits() == values[0].to_bits()) {
        return MeanStd {
            mean: values[0],
            std: 0.0,
        };
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let std = if n > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    MeanStd { mean, std }
}

/// Per-k mean and sample std over several runs.
pub fn aggregate_topk(runs: &[BTreeMap<usize, f64>]) -> BTreeMap<usize, MeanStd> {
    let mut out = BTreeMap::new();
    if let Some(first) = runs.first() {
        for &k in first.keys() {
            let vals: Vec<f64> = runs.iter().filter_map(|r| r.get(&k).copied()).collect();
            out.insert(k, mean_std(&vals));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn direct_ordering() {
        let s = array![[0.1, 0.5, 0.2]];
        let acc = topk_accuracy(&s, &[0], &[1, 2, 3]).unwrap();
        assert_eq!(acc[&1], 0.0);
        assert_eq!(acc[&2], 0.0);
        assert_eq!(acc[&3], 1.0);
        let acc = topk_accuracy(&s, &[1], &[1]).unwrap();
        assert_eq!(acc[&1], 1.0);
    }

    #[test]
    fn ties_favor_lower_index() {
        let s = array![[1.0, 1.0, 1.0]];
        assert_eq!(rank_classes(s.row(0)), vec![0, 1, 2]);
        assert_eq!(topk_accuracy(&s, &[0], &[1]).unwrap()[&1], 1.0);
        assert_eq!(topk_accuracy(&s, &[2], &[2]).unwrap()[&2], 0.0);
    }

    #[test]
    fn errors() {
        let s = array![[0.1, 0.5]];
        assert!(topk_accuracy(&s, &[0], &[3]).is_err());
        assert!(topk_accuracy(&Array2::zeros((0, 2)), &[], &[1]).is_err());
        assert!(topk_accuracy(&s, &[0], &[0]).is_err());
    }

    #[test]
    fn sample_std() {
        let m = mean_std(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m.mean, 2.5);
        assert!((m.std - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(mean_std(&[0.7]).std, 0.0);
    }

    #[test]
    fn feasible() {
        assert_eq!(feasible_ks(&[10, 1, 5, 5], 6), vec![1, 5]);
    }
}
