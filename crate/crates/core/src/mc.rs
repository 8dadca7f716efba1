//! Monte Carlo checks of the binomial calculators.
//!
//! Trial `i` always draws from `seed::rng(master_seed, MC_TRIAL, i)`, so the
//! results do not depend on how trials are spread over threads.

use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ascent::rank_classes;
use crate::error::{Error, Result};
use crate::seed::{self, tags};

pub const MIN_TRIALS: usize = 10_000;
pub const DEFAULT_TRIALS: usize = 100_000;
/// Two-sided 95% standard normal quantile.
pub const Z95: f64 = 1.959963984540054;

fn check_trials(trials: usize) -> Result<()> {
    if trials < MIN_TRIALS {
        return Err(Error::invalid(format!("need at least {MIN_TRIALS} trials, got {trials}")));
    }
    Ok(())
}

fn check_probabilities(ps: &[f64]) -> Result<()> {
    if let Some(p) = ps.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::invalid(format!("probability {p} outside [0, 1]")));
    }
    Ok(())
}

/// Wilson score interval for `successes` out of `n`.
pub fn wilson_interval(successes: u64, n: u64, z: f64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let n = n as f64;
    let p = successes as f64 / n;
    let z2 = z * z;
    let centre = (p + z2 / (2.0 * n)) / (1.0 + z2 / n);
    let half = z / (1.0 + z2 / n) * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt();
    let lo = if successes == 0 { 0.0 } else { (centre - half).max(0.0) };
    let hi = if successes as f64 == n { 1.0 } else { (centre + half).min(1.0) };
    (lo, hi)
}

/// Sum with pairwise splitting so rounding error grows like `log n`.
pub fn pairwise_sum(v: &[f64]) -> f64 {
    if v.len() <= 32 {
        return v.iter().sum();
    }
    let mid = v.len() / 2;
    pairwise_sum(&v[..mid]) + pairwise_sum(&v[mid..])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureEstimate {
    pub failures: u64,
    pub trials: u64,
    pub frequency: f64,
    pub std_error: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

/// Draws `N` Bernoulli outcomes per class, picks the `M` classes with the
/// highest empirical error (uniformly random among ties), and counts how
/// often the truly worst class is missed.
pub fn mc_worst_class_failure(
    errors: &[f64],
    big_m: usize,
    big_n: usize,
    trials: usize,
    master_seed: u64,
) -> Result<FailureEstimate> {
    check_trials(trials)?;
    check_probabilities(errors)?;
    let k = errors.len();
    if k < 2 {
        return Err(Error::invalid("error vector needs at least two classes"));
    }
    if big_m == 0 || big_m > k {
        return Err(Error::invalid(format!("M must lie in [1, {k}], got {big_m}")));
    }
    if big_n == 0 {
        return Err(Error::invalid("sample count N must be at least 1"));
    }
    let dists: Vec<Binomial> = errors
        .iter()
        .map(|&p| Binomial::new(big_n as u64, p).expect("probability checked"))
        .collect();
    let mut worst = 0;
    for (y, &p) in errors.iter().enumerate() {
        if p > errors[worst] {
            worst = y;
        }
    }
    let failures: u64 = (0..trials as u64)
        .into_par_iter()
        .map(|t| {
            let mut rng = seed::rng(master_seed, tags::MC_TRIAL, t);
            let counts: Vec<f64> = dists.iter().map(|d| d.sample(&mut rng) as f64).collect();
            let picked = rank_classes(&counts, &mut rng);
            u64::from(!picked[..big_m].contains(&worst))
        })
        .sum();
    let n = trials as u64;
    let frequency = failures as f64 / n as f64;
    let (ci_low, ci_high) = wilson_interval(failures, n, Z95);
    Ok(FailureEstimate {
        failures,
        trials: n,
        frequency,
        std_error: (frequency * (1.0 - frequency) / n as f64).sqrt(),
        ci_low,
        ci_high,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MseEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub trials: u64,
}

impl MseEstimate {
    /// Normal-approximation 95% interval.
    pub fn interval(&self) -> (f64, f64) {
        (self.mean - Z95 * self.std_error, self.mean + Z95 * self.std_error)
    }
}

/// Empirical `E[(e^P − e^{P̂})²]`.
pub fn mc_ega_mse(p: f64, big_n: usize, trials: usize, master_seed: u64) -> Result<MseEstimate> {
    check_trials(trials)?;
    check_probabilities(&[p])?;
    if big_n == 0 {
        return Err(Error::invalid("sample count N must be at least 1"));
    }
    let dist = Binomial::new(big_n as u64, p).expect("probability checked");
    let ep = p.exp();
    let values: Vec<f64> = (0..trials as u64)
        .into_par_iter()
        .map(|t| {
            let mut rng = seed::rng(master_seed, tags::MC_TRIAL, t);
            let hat = dist.sample(&mut rng) as f64 / big_n as f64;
            let d = ep - hat.exp();
            d * d
        })
        .collect();
    let n = trials as f64;
    let mean = pairwise_sum(&values) / n;
    let sq: Vec<f64> = values.iter().map(|v| (v - mean) * (v - mean)).collect();
    let var = pairwise_sum(&sq) / (n - 1.0);
    Ok(MseEstimate {
        mean,
        std_error: (var / n).sqrt(),
        trials: trials as u64,
    })
}
