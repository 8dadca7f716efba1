//! Per-class risk estimates and the two prior updates.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::model::{predict, ModelParams};
use crate::prior::Prior;
use crate::seed::{self, tags};

/// Empirical per-class error rates and the sample counts behind them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassRisks {
    pub estimates: Vec<f64>,
    pub counts: Vec<usize>,
}

impl ClassRisks {
    pub fn new(estimates: Vec<f64>, counts: Vec<usize>) -> Result<Self> {
        if estimates.len() != counts.len() {
            return Err(Error::DimensionMismatch {
                context: "class risks",
                expected: estimates.len(),
                found: counts.len(),
            });
        }
        if let Some(e) = estimates.iter().find(|e| !(0.0..=1.0).contains(*e)) {
            return Err(Error::invalid(format!("risk estimate {e} outside [0, 1]")));
        }
        if let Some(y) = counts.iter().position(|&c| c == 0) {
            return Err(Error::MissingClass { class: y });
        }
        Ok(ClassRisks { estimates, counts })
    }

    pub fn len(&self) -> usize {
        self.estimates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.estimates.is_empty()
    }

    /// Largest risk and the smallest class index attaining it.
    pub fn worst(&self) -> (usize, f64) {
        let mut best = 0;
        for (y, &r) in self.estimates.iter().enumerate() {
            if r > self.estimates[best] {
                best = y;
            }
        }
        (best, self.estimates[best])
    }
}

/// Error rate of each class from predictions against true labels.
pub fn class_risks_from_predictions(predictions: &[usize], labels: &[usize], k: usize) -> Result<ClassRisks> {
    if predictions.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            context: "predictions",
            expected: labels.len(),
            found: predictions.len(),
        });
    }
    let mut errors = vec![0usize; k];
    let mut counts = vec![0usize; k];
    for (&p, &y) in predictions.iter().zip(labels) {
        counts[y] += 1;
        if p != y {
            errors[y] += 1;
        }
    }
    if let Some(y) = counts.iter().position(|&c| c == 0) {
        return Err(Error::MissingClass { class: y });
    }
    let estimates = errors.iter().zip(&counts).map(|(&e, &n)| e as f64 / n as f64).collect();
    Ok(ClassRisks { estimates, counts })
}

pub fn estimate_class_risks(params: &ModelParams, dataset: &LabeledDataset) -> Result<ClassRisks> {
    dataset.require_all_classes()?;
    let pred = predict(params, dataset.features())?;
    class_risks_from_predictions(&pred, dataset.labels(), dataset.class_count())
}

/// Ranks classes by decreasing risk; equal risks are ordered by a uniform
/// random permutation drawn from `rng`.
pub fn rank_classes<R: Rng + ?Sized>(risks: &[f64], rng: &mut R) -> Vec<usize> {
    let mut order: Vec<usize> = (0..risks.len()).collect();
    order.shuffle(rng);
    order.sort_by(|&a, &b| risks[b].total_cmp(&risks[a]));
    order
}

/// `1/M` on the `M` riskiest classes, zero elsewhere.
pub fn worst_m_indicator<R: Rng + ?Sized>(risks: &ClassRisks, m: usize, rng: &mut R) -> Result<Prior> {
    let k = risks.len();
    if m == 0 || m > k {
        return Err(Error::invalid(format!("M must lie in [1, {k}], got {m}")));
    }
    let mut ind = vec![0.0; k];
    for &y in rank_classes(&risks.estimates, rng).iter().take(m) {
        ind[y] = 1.0 / m as f64;
    }
    Prior::new(ind)
}

/// Smallest `M` covering every class whose risk is within `margin` of the worst.
pub fn auto_m(risks: &ClassRisks, margin: f64) -> usize {
    let (_, worst) = risks.worst();
    risks.estimates.iter().filter(|&&r| r >= worst - margin).count().max(1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AscentMethod {
    Linear,
    Ega,
}

impl AscentMethod {
    pub fn name(self) -> &'static str {
        match self {
            AscentMethod::Linear => "linear",
            AscentMethod::Ega => "ega",
        }
    }

    pub fn default_alpha(self) -> f64 {
        match self {
            AscentMethod::Linear => 0.01,
            AscentMethod::Ega => 0.1,
        }
    }
}

impl fmt::Display for AscentMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AscentMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "linear" => Ok(AscentMethod::Linear),
            "ega" => Ok(AscentMethod::Ega),
            _ => Err(Error::config("ascent.method", format!("unknown method {s:?}; allowed: linear, ega"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AscentConfig {
    pub method: AscentMethod,
    /// Step size; `None` picks the method's default.
    pub alpha: Option<f64>,
    /// Number of worst classes for linear ascent.
    pub m: usize,
    /// When set, `M` is recomputed each step as the number of classes within
    /// this margin of the worst risk.
    pub auto_m_margin: Option<f64>,
    /// Seed of the tie-breaking stream.
    pub tie_seed: u64,
}

impl Default for AscentConfig {
    fn default() -> Self {
        AscentConfig {
            method: AscentMethod::Linear,
            alpha: None,
            m: 1,
            auto_m_margin: None,
            tie_seed: 0,
        }
    }
}

impl AscentConfig {
    pub fn alpha(&self) -> f64 {
        self.alpha.unwrap_or_else(|| self.method.default_alpha())
    }

    pub fn validate(&self, k: usize) -> Result<()> {
        let a = self.alpha();
        match self.method {
            AscentMethod::Linear if !(0.0..1.0).contains(&a) => {
                return Err(Error::config("ascent.alpha", format!("linear ascent needs 0 <= alpha < 1, got {a}")))
            }
            AscentMethod::Ega if !(a >= 0.0 && a.is_finite()) => {
                return Err(Error::config("ascent.alpha", format!("EGA needs a finite alpha >= 0, got {a}")))
            }
            _ => {}
        }
        if self.m == 0 || self.m > k {
            return Err(Error::config("ascent.m", format!("must lie in [1, {k}], got {}", self.m)));
        }
        if let Some(margin) = self.auto_m_margin {
            if !(margin >= 0.0) {
                return Err(Error::config("ascent.auto_m_margin", "must be nonnegative"));
            }
        }
        Ok(())
    }
}

/// The driver-owned prior and its history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AscentState {
    pub prior: Prior,
    pub config: AscentConfig,
    pub trajectory: Vec<Prior>,
    steps: u64,
}

impl AscentState {
    pub fn new(initial: Prior, config: AscentConfig) -> Result<Self> {
        config.validate(initial.len())?;
        Ok(AscentState {
            trajectory: vec![initial.clone()],
            prior: initial,
            config,
            steps: 0,
        })
    }

    pub fn alpha(&self) -> f64 {
        self.config.alpha()
    }

    /// One update from the given risks with whichever rule is configured.
    /// Returns the new prior and the `M` used (1 for EGA).
    pub fn step(&mut self, risks: &ClassRisks) -> Result<(Prior, usize)> {
        if risks.len() != self.prior.len() {
            return Err(Error::DimensionMismatch {
                context: "risks vs prior",
                expected: self.prior.len(),
                found: risks.len(),
            });
        }
        let (next, m) = match self.config.method {
            AscentMethod::Linear => {
                let m = match self.config.auto_m_margin {
                    Some(margin) => auto_m(risks, margin),
                    None => self.config.m,
                };
                let mut rng = seed::rng(self.config.tie_seed, tags::TIES, self.steps);
                let ind = worst_m_indicator(risks, m, &mut rng)?;
                (linear_ascent_step(&self.prior, &ind, self.alpha())?, m)
            }
            AscentMethod::Ega => (ega_step(&self.prior, risks, self.alpha())?, 1),
        };
        self.steps += 1;
        self.prior = next.clone();
        self.trajectory.push(next.clone());
        Ok((next, m))
    }
}

/// `π + α (indicator − π)`.
pub fn linear_ascent_step(pi: &Prior, indicator: &Prior, alpha: f64) -> Result<Prior> {
    if !(0.0..1.0).contains(&alpha) {
        return Err(Error::invalid(format!("linear ascent needs 0 <= alpha < 1, got {alpha}")));
    }
    if pi.len() != indicator.len() {
        return Err(Error::DimensionMismatch {
            context: "indicator",
            expected: pi.len(),
            found: indicator.len(),
        });
    }
    Ok(Prior::from_update(
        pi.as_slice()
            .iter()
            .zip(indicator.as_slice())
            .map(|(&p, &i)| (1.0 - alpha) * p + alpha * i)
            .collect(),
    ))
}

/// `π_y ∝ π_y exp(α risk_y)`.
pub fn ega_step(pi: &Prior, risks: &ClassRisks, alpha: f64) -> Result<Prior> {
    if pi.len() != risks.len() {
        return Err(Error::DimensionMismatch {
            context: "risks",
            expected: pi.len(),
            found: risks.len(),
        });
    }
    // subtract the largest exponent so nothing overflows
    let top = risks.estimates.iter().fold(f64::NEG_INFINITY, |a, &r| a.max(alpha * r));
    let w: Vec<f64> = pi
        .as_slice()
        .iter()
        .zip(&risks.estimates)
        .map(|(&p, &r)| p * (alpha * r - top).exp())
        .collect();
    let sum: f64 = w.iter().sum();
    if !(sum.is_finite() && sum > 0.0) {
        return Err(Error::NonFinite("EGA normalizer".into()));
    }
    Ok(Prior::from_update(w.iter().map(|v| v / sum).collect()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Matrix;
    use crate::model::Architecture;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn risks(v: &[f64]) -> ClassRisks {
        ClassRisks::new(v.to_vec(), vec![10; v.len()]).unwrap()
    }

    #[test]
    fn risks_from_predictions() {
        let r = class_risks_from_predictions(&[0, 0, 0, 0, 1, 1, 1, 1], &[0, 0, 0, 0, 1, 1, 1, 1], 2).unwrap();
        assert_eq!(r.estimates, vec![0.0, 0.0]);
        let r = class_risks_from_predictions(&[0, 0, 0, 0], &[0, 0, 1, 1], 2).unwrap();
        assert_eq!(r.estimates, vec![0.0, 1.0]);
        let r = class_risks_from_predictions(&[1, 1, 1, 0, 1], &[0, 0, 0, 0, 1], 2).unwrap();
        assert_eq!(r.estimates[0], 0.75);
        assert!(matches!(
            class_risks_from_predictions(&[0, 0], &[0, 0], 2),
            Err(Error::MissingClass { class: 1 })
        ));
    }

    #[test]
    fn risks_of_a_constant_model() {
        let mut p = ModelParams::zeros(Architecture::Linear, 1, 2).unwrap();
        p.layers[0].bias = vec![1.0, 0.0];
        let x = Matrix::from_vec(4, 1, vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        let ds = LabeledDataset::new(x, vec![0, 1, 0, 1], 2).unwrap();
        assert_eq!(estimate_class_risks(&p, &ds).unwrap().estimates, vec![0.0, 1.0]);
    }

    #[test]
    fn indicator_picks_the_worst() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let r = risks(&[0.9, 0.2, 0.1]);
        assert_eq!(worst_m_indicator(&r, 1, &mut rng).unwrap().as_slice(), &[1.0, 0.0, 0.0]);
        assert_eq!(worst_m_indicator(&r, 2, &mut rng).unwrap().as_slice(), &[0.5, 0.5, 0.0]);
        assert!(worst_m_indicator(&r, 0, &mut rng).is_err());
        assert!(worst_m_indicator(&r, 4, &mut rng).is_err());
    }

    #[test]
    fn ties_are_broken_fairly() {
        let r = risks(&[0.5, 0.5]);
        let n = 10_000;
        let first = (0..n)
            .filter(|&i| {
                let mut rng = seed::rng(42, tags::TIES, i);
                worst_m_indicator(&r, 1, &mut rng).unwrap()[0] == 1.0
            })
            .count();
        let freq = first as f64 / n as f64;
        assert!((freq - 0.5).abs() < 0.02, "{freq}");
    }

    #[test]
    fn auto_m_counts_near_worst() {
        assert_eq!(auto_m(&risks(&[0.3, 0.28, 0.1, 0.26]), 0.05), 3);
        assert_eq!(auto_m(&risks(&[0.3, 0.1]), 0.05), 1);
    }

    #[test]
    fn linear_step_examples() {
        let pi = Prior::uniform(4);
        let ind = Prior::one_hot(4, 1);
        let next = linear_ascent_step(&pi, &ind, 0.1).unwrap();
        let want = [0.225, 0.325, 0.225, 0.225];
        for (a, b) in next.as_slice().iter().zip(want) {
            assert!((a - b).abs() < 1e-15);
        }
        let near = linear_ascent_step(&pi, &ind, 0.999).unwrap();
        assert!(near.as_slice().iter().zip(ind.as_slice()).all(|(a, b)| (a - b).abs() < 1e-3));
        let fixed = Prior::new(vec![0.5, 0.5, 0.0, 0.0]).unwrap();
        let same = linear_ascent_step(&fixed, &fixed, 0.3).unwrap();
        assert_eq!(same, fixed);
        assert!(linear_ascent_step(&pi, &ind, 1.0).is_err());
        assert!(linear_ascent_step(&pi, &ind, -0.1).is_err());
    }

    #[test]
    fn ega_examples() {
        let pi = Prior::new(vec![0.5, 0.5]).unwrap();
        let next = ega_step(&pi, &risks(&[1.0, 0.0]), 0.1).unwrap();
        assert!((next[0] - 0.52497918747894).abs() < 1e-15);
        assert!((next[1] - 0.47502081252106).abs() < 1e-15);
        let pi = Prior::new(vec![0.2, 0.3, 0.5]).unwrap();
        let eq = ega_step(&pi, &risks(&[0.4, 0.4, 0.4]), 0.7).unwrap();
        assert!(eq.as_slice().iter().zip(pi.as_slice()).all(|(a, b)| (a - b).abs() < 1e-15));
        let zero = ega_step(&pi, &risks(&[0.9, 0.1, 0.4]), 0.0).unwrap();
        assert!(zero.as_slice().iter().zip(pi.as_slice()).all(|(a, b)| (a - b).abs() < 1e-15));
    }

    #[test]
    fn ega_keeps_support() {
        let pi = Prior::new(vec![0.0, 0.4, 0.6]).unwrap();
        let next = ega_step(&pi, &risks(&[1.0, 0.0, 0.2]), 0.5).unwrap();
        assert_eq!(next[0], 0.0);
    }

    #[test]
    fn state_records_trajectory() {
        let cfg = AscentConfig {
            m: 1,
            alpha: Some(0.5),
            ..AscentConfig::default()
        };
        let mut s = AscentState::new(Prior::uniform(2), cfg).unwrap();
        let (p, m) = s.step(&risks(&[0.1, 0.6])).unwrap();
        assert_eq!(m, 1);
        assert_eq!(p.as_slice(), &[0.25, 0.75]);
        assert_eq!(s.trajectory.len(), 2);
        assert!(AscentState::new(Prior::uniform(2), AscentConfig { m: 3, ..AscentConfig::default() }).is_err());
        assert!("sgd".parse::<AscentMethod>().is_err());
        assert_eq!("EGA".parse::<AscentMethod>().unwrap(), AscentMethod::Ega);
    }
}
