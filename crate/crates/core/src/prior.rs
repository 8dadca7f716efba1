use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on `|sum - 1|` for a vector to count as a point on the simplex.
pub const SIMPLEX_TOLERANCE: f64 = 1e-12;

/// A class prior: a point on the probability simplex over `K` classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Prior(Vec<f64>);

impl Prior {
    pub fn new(probabilities: Vec<f64>) -> Result<Self> {
        if probabilities.is_empty() {
            return Err(Error::Empty("prior".into()));
        }
        if let Some(p) = probabilities.iter().find(|p| !p.is_finite() || **p < 0.0) {
            return Err(Error::invalid(format!(
                "prior entries must be finite and nonnegative, got {p}"
            )));
        }
        let sum: f64 = probabilities.iter().sum();
        if (sum - 1.0).abs() > SIMPLEX_TOLERANCE {
            return Err(Error::invalid(format!("prior sums to {sum}, not 1")));
        }
        Ok(Prior(probabilities))
    }

    /// Normalizes nonnegative weights onto the simplex.
    pub fn from_weights(weights: &[f64]) -> Result<Self> {
        let sum: f64 = weights.iter().sum();
        if !(sum.is_finite() && sum > 0.0) || weights.iter().any(|w| *w < 0.0) {
            return Err(Error::invalid("weights must be nonnegative with positive sum"));
        }
        Prior::new(weights.iter().map(|w| w / sum).collect())
    }

    /// Empirical prior `N_y / N` from realized class counts.
    pub fn from_counts(counts: &[usize]) -> Result<Self> {
        let weights: Vec<f64> = counts.iter().map(|&c| c as f64).collect();
        Prior::from_weights(&weights)
    }

    pub fn uniform(k: usize) -> Self {
        assert!(k > 0, "uniform prior needs at least one class");
        Prior(vec![1.0 / k as f64; k])
    }

    pub fn one_hot(k: usize, class: usize) -> Self {
        assert!(class < k, "class {class} out of range for {k} classes");
        let mut p = vec![0.0; k];
        p[class] = 1.0;
        Prior(p)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn is_strictly_positive(&self) -> bool {
        self.0.iter().all(|&p| p > 0.0)
    }

    /// Constructs a prior from an update whose algebra keeps it on the simplex;
    /// only tiny rounding drift is removed.
    pub(crate) fn from_update(mut probabilities: Vec<f64>) -> Self {
        for p in probabilities.iter_mut() {
            if *p < 0.0 {
                *p = 0.0;
            }
        }
        let sum: f64 = probabilities.iter().sum();
        if (sum - 1.0).abs() > f64::EPSILON * probabilities.len() as f64 {
            for p in probabilities.iter_mut() {
                *p /= sum;
            }
        }
        Prior(probabilities)
    }
}

impl std::ops::Index<usize> for Prior {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl TryFrom<Vec<f64>> for Prior {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        Prior::new(v)
    }
}

impl From<Prior> for Vec<f64> {
    fn from(p: Prior) -> Vec<f64> {
        p.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_off_simplex() {
        assert!(Prior::new(vec![0.5, 0.6]).is_err());
        assert!(Prior::new(vec![1.5, -0.5]).is_err());
        assert!(Prior::new(vec![f64::NAN, 1.0]).is_err());
        assert!(Prior::new(vec![]).is_err());
    }

    #[test]
    fn counts_normalize() {
        let p = Prior::from_counts(&[90, 10]).unwrap();
        assert_eq!(p.as_slice(), &[0.9, 0.1]);
        assert!(Prior::from_counts(&[0, 0]).is_err());
    }

    #[test]
    fn serde_validates() {
        let p: Prior = serde_json::from_str("[0.25,0.75]").unwrap();
        assert_eq!(p[1], 0.75);
        assert!(serde_json::from_str::<Prior>("[0.25,0.25]").is_err());
    }
}
