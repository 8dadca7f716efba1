//! Worst-class and balanced accuracy, and the inter/intra class distance ratio
//! of learned features.

use serde::{Deserialize, Serialize};

use crate::ascent::{class_risks_from_predictions, estimate_class_risks};
use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::model::ModelParams;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracySummary {
    pub per_class: Vec<f64>,
    /// Zero-based class with the lowest accuracy (smallest index on ties).
    pub worst_class: usize,
    pub worst_accuracy: f64,
    pub balanced_accuracy: f64,
}

impl AccuracySummary {
    pub fn from_per_class(per_class: Vec<f64>) -> Result<Self> {
        if per_class.is_empty() {
            return Err(Error::Empty("per-class accuracies".into()));
        }
        let mut worst = 0;
        for (y, &a) in per_class.iter().enumerate() {
            if a < per_class[worst] {
                worst = y;
            }
        }
        let balanced = per_class.iter().sum::<f64>() / per_class.len() as f64;
        Ok(AccuracySummary {
            worst_class: worst,
            worst_accuracy: per_class[worst],
            balanced_accuracy: balanced,
            per_class,
        })
    }

    pub fn from_predictions(predictions: &[usize], labels: &[usize], k: usize) -> Result<Self> {
        let risks = class_risks_from_predictions(predictions, labels, k)?;
        Self::from_per_class(risks.estimates.iter().map(|r| 1.0 - r).collect())
    }
}

pub fn accuracy_summary(params: &ModelParams, dataset: &LabeledDataset) -> Result<AccuracySummary> {
    let risks = estimate_class_risks(params, dataset)?;
    AccuracySummary::from_per_class(risks.estimates.iter().map(|r| 1.0 - r).collect())
}

/// `(class, accuracy)` of the least accurate class.
pub fn worst_class_accuracy(params: &ModelParams, dataset: &LabeledDataset) -> Result<(usize, f64)> {
    let s = accuracy_summary(params, dataset)?;
    Ok((s.worst_class, s.worst_accuracy))
}

pub fn balanced_accuracy(params: &ModelParams, dataset: &LabeledDataset) -> Result<f64> {
    Ok(accuracy_summary(params, dataset)?.balanced_accuracy)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterIntra {
    pub d_inter: f64,
    pub d_intra: f64,
    /// `d_inter / d_intra`; infinite when the class has no spread.
    pub ratio: f64,
    pub degenerate: bool,
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Per-class ratio of the mean distance to the `neighbor_count` nearest other
/// class centres over the mean distance of the class samples to their own
/// centre. `neighbor_count` is capped at `K − 1`.
pub fn inter_intra_ratio(features: &Matrix, labels: &[usize], k: usize, neighbor_count: usize) -> Result<Vec<InterIntra>> {
    if features.rows() != labels.len() {
        return Err(Error::DimensionMismatch {
            context: "features vs labels",
            expected: labels.len(),
            found: features.rows(),
        });
    }
    if k < 2 || neighbor_count == 0 {
        return Err(Error::invalid("need at least two classes and one neighbour"));
    }
    let d = features.cols();
    let mut centres = vec![vec![0.0; d]; k];
    let mut counts = vec![0usize; k];
    for (i, &y) in labels.iter().enumerate() {
        if y >= k {
            return Err(Error::invalid(format!("label {} exceeds {k} classes", y + 1)));
        }
        counts[y] += 1;
        centres[y].iter_mut().zip(features.row(i)).for_each(|(c, x)| *c += x);
    }
    if let Some(y) = counts.iter().position(|&c| c < 2) {
        return Err(Error::invalid(format!("class {} needs at least two samples", y + 1)));
    }
    for (c, &n) in centres.iter_mut().zip(&counts) {
        c.iter_mut().for_each(|v| *v /= n as f64);
    }
    let mut intra = vec![0.0; k];
    for (i, &y) in labels.iter().enumerate() {
        intra[y] += distance(features.row(i), &centres[y]);
    }
    let nb = neighbor_count.min(k - 1);
    Ok((0..k)
        .map(|y| {
            let d_intra = intra[y] / counts[y] as f64;
            let mut others: Vec<f64> = (0..k).filter(|&j| j != y).map(|j| distance(&centres[y], &centres[j])).collect();
            others.sort_by(f64::total_cmp);
            let d_inter = others[..nb].iter().sum::<f64>() / nb as f64;
            let degenerate = d_intra == 0.0;
            InterIntra {
                d_inter,
                d_intra,
                ratio: if degenerate { f64::INFINITY } else { d_inter / d_intra },
                degenerate,
            }
        })
        .collect())
}
