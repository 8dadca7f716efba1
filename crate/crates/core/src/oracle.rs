//! Bayes-optimal rules and risks for Gaussian mixtures, and search for the
//! prior that maximizes the Bayes risk.
//!
//! One-dimensional mixtures with a shared variance are handled exactly: every
//! class score is a line in `x`, so each decision region is an interval and
//! its mass is a difference of normal CDFs. Everything else is integrated by
//! Monte Carlo over a fixed sample bank, so the same draws are reused for
//! every prior.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ascent::{linear_ascent_step, rank_classes, ClassRisks};
use crate::data::MixtureSpec;
use crate::error::{Error, Result};
use crate::prior::Prior;
use crate::seed::{self, tags};

pub const DEFAULT_MC_SAMPLES: usize = 100_000;

fn check_prior(spec: &MixtureSpec, pi: &Prior) -> Result<()> {
    if pi.len() != spec.class_count() {
        return Err(Error::DimensionMismatch {
            context: "prior classes",
            expected: spec.class_count(),
            found: pi.len(),
        });
    }
    Ok(())
}

/// `ln π`, with `−∞` marking classes the rule must never pick.
fn log_prior(pi: &[f64]) -> Vec<f64> {
    pi.iter().map(|&p| if p > 0.0 { p.ln() } else { f64::NEG_INFINITY }).collect()
}

fn argmax_scores(log_pi: &[f64], log_dens: &[f64]) -> usize {
    let mut best = usize::MAX;
    let mut best_score = f64::NEG_INFINITY;
    for (y, (&lp, &l)) in log_pi.iter().zip(log_dens).enumerate() {
        if lp == f64::NEG_INFINITY {
            continue;
        }
        let s = lp + l;
        if best == usize::MAX || s > best_score {
            best = y;
            best_score = s;
        }
    }
    best
}

/// `argmax_y ln π_y + ln p(x | y)`, smallest index on ties. Classes with zero
/// prior are never predicted.
pub fn bayes_predict(spec: &MixtureSpec, pi: &Prior, x: &[f64]) -> Result<usize> {
    check_prior(spec, pi)?;
    if x.len() != spec.dim() {
        return Err(Error::DimensionMismatch {
            context: "instance dimension",
            expected: spec.dim(),
            found: x.len(),
        });
    }
    let ld: Vec<f64> = (0..spec.class_count()).map(|y| spec.log_density(y, x)).collect();
    Ok(argmax_scores(&log_prior(pi.as_slice()), &ld))
}

fn std_normal_cdf(z: f64) -> f64 {
    if z == f64::INFINITY {
        1.0
    } else if z == f64::NEG_INFINITY {
        0.0
    } else {
        0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
    }
}

/// Decision interval of each class for a 1-D shared-variance mixture; `None`
/// for classes that are never predicted.
pub fn line_decision_intervals(means: &[f64], variance: f64, pi: &[f64]) -> Vec<Option<(f64, f64)>> {
    let k = means.len();
    // score_k(x) = a_k + b_k x
    let a: Vec<f64> = (0..k)
        .map(|j| if pi[j] > 0.0 { pi[j].ln() - means[j] * means[j] / (2.0 * variance) } else { f64::NEG_INFINITY })
        .collect();
    let b: Vec<f64> = means.iter().map(|m| m / variance).collect();
    (0..k)
        .map(|y| {
            if pi[y] <= 0.0 {
                return None;
            }
            let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
            for j in 0..k {
                if j == y || pi[j] <= 0.0 {
                    continue;
                }
                let db = b[y] - b[j];
                let da = a[j] - a[y];
                if db > 0.0 {
                    lo = lo.max(da / db);
                } else if db < 0.0 {
                    hi = hi.min(da / db);
                } else if da > 0.0 || (da == 0.0 && j < y) {
                    return None;
                }
            }
            (lo < hi).then_some((lo, hi))
        })
        .collect()
}

/// Bayes risks with standard errors (zero when exact).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleRisks {
    pub risks: Vec<f64>,
    pub std_errors: Vec<f64>,
    pub exact: bool,
}

impl OracleRisks {
    pub fn total(&self, pi: &Prior) -> f64 {
        self.risks.iter().zip(pi.as_slice()).map(|(r, p)| r * p).sum()
    }

    pub fn total_std_error(&self, pi: &Prior) -> f64 {
        self.std_errors
            .iter()
            .zip(pi.as_slice())
            .map(|(s, p)| (s * p).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    pub fn as_class_risks(&self, samples_per_class: usize) -> ClassRisks {
        ClassRisks {
            estimates: self.risks.clone(),
            counts: vec![samples_per_class.max(1); self.risks.len()],
        }
    }
}

enum Backend {
    Line { means: Vec<f64>, variance: f64 },
    /// Row `y` holds, for each of its samples, the `K` class log-densities.
    Bank { log_dens: Vec<Vec<f64>>, samples: usize },
}

/// Bayes risk oracle for one mixture.
pub struct BayesOracle {
    spec: MixtureSpec,
    backend: Backend,
}

impl BayesOracle {
    /// Exact when the mixture is 1-D with a shared variance; otherwise draws
    /// `mc_samples` points per class from `seed`.
    pub fn new(spec: MixtureSpec, mc_samples: usize, seed: u64) -> Result<Self> {
        if let Some(variance) = spec.shared_line_variance() {
            let means = (0..spec.class_count()).map(|y| spec.mean(y)[0]).collect();
            return Ok(BayesOracle {
                spec,
                backend: Backend::Line { means, variance },
            });
        }
        Self::monte_carlo(spec, mc_samples, seed)
    }

    /// Forces Monte Carlo integration even when a closed form exists.
    pub fn monte_carlo(spec: MixtureSpec, mc_samples: usize, seed: u64) -> Result<Self> {
        if mc_samples == 0 {
            return Err(Error::invalid("oracle needs at least one sample per class"));
        }
        let k = spec.class_count();
        let d = spec.dim();
        let log_dens: Vec<Vec<f64>> = (0..k)
            .into_par_iter()
            .map(|y| {
                let mut rng = seed::rng(seed, tags::ORACLE, y as u64);
                let mut x = vec![0.0; d];
                let mut row = Vec::with_capacity(mc_samples * k);
                for _ in 0..mc_samples {
                    spec.sample_class(y, &mut rng, &mut x);
                    row.extend((0..k).map(|j| spec.log_density(j, &x)));
                }
                row
            })
            .collect();
        Ok(BayesOracle {
            spec,
            backend: Backend::Bank {
                log_dens,
                samples: mc_samples,
            },
        })
    }

    pub fn spec(&self) -> &MixtureSpec {
        &self.spec
    }

    pub fn is_exact(&self) -> bool {
        matches!(self.backend, Backend::Line { .. })
    }

    pub fn class_count(&self) -> usize {
        self.spec.class_count()
    }

    pub fn class_risks(&self, pi: &Prior) -> Result<OracleRisks> {
        check_prior(&self.spec, pi)?;
        let k = self.class_count();
        match &self.backend {
            Backend::Line { means, variance } => {
                let sd = variance.sqrt();
                let intervals = line_decision_intervals(means, *variance, pi.as_slice());
                let risks = (0..k)
                    .map(|y| match intervals[y] {
                        None => 1.0,
                        // mass outside [lo, hi], summed from the two tails
                        Some((lo, hi)) => {
                            (std_normal_cdf((lo - means[y]) / sd) + std_normal_cdf(-(hi - means[y]) / sd)).min(1.0)
                        }
                    })
                    .collect();
                Ok(OracleRisks {
                    risks,
                    std_errors: vec![0.0; k],
                    exact: true,
                })
            }
            Backend::Bank { log_dens, samples } => {
                let p = log_prior(pi.as_slice());
                let wrong: Vec<usize> = log_dens
                    .par_iter()
                    .enumerate()
                    .map(|(y, row)| row.chunks_exact(k).filter(|ld| argmax_scores(&p, ld) != y).count())
                    .collect();
                let n = *samples as f64;
                let risks: Vec<f64> = wrong.iter().map(|&w| w as f64 / n).collect();
                let std_errors = risks.iter().map(|r| (r * (1.0 - r) / n).sqrt()).collect();
                Ok(OracleRisks {
                    risks,
                    std_errors,
                    exact: false,
                })
            }
        }
    }

    /// `R(π) = Σ_y π_y P^(e)_y` under the Bayes rule for `π`.
    pub fn total_risk(&self, pi: &Prior) -> Result<f64> {
        Ok(self.class_risks(pi)?.total(pi))
    }
}

/// Euclidean projection onto the probability simplex (sort and threshold).
pub fn project_to_simplex(v: &[f64]) -> Prior {
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cumulative = 0.0;
    let mut theta = 0.0;
    for (j, &uj) in u.iter().enumerate() {
        cumulative += uj;
        let t = (cumulative - 1.0) / (j + 1) as f64;
        if uj - t > 0.0 {
            theta = t;
        }
    }
    Prior::from_update(v.iter().map(|x| (x - theta).max(0.0)).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SearchStrategy {
    /// Every simplex point with coordinates on a `resolution` lattice (K ≤ 3).
    Grid { resolution: f64 },
    /// Projected supergradient ascent with step `c / √t`.
    Supergradient {
        iterations: usize,
        step_scale: f64,
        tolerance: f64,
    },
}

impl SearchStrategy {
    pub fn default_for(k: usize) -> Self {
        if k <= 3 {
            SearchStrategy::Grid { resolution: 1e-3 }
        } else {
            SearchStrategy::Supergradient {
                iterations: 2000,
                step_scale: 0.1,
                tolerance: 1e-7,
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub prior: Prior,
    pub value: f64,
    pub evaluations: usize,
    /// False when the supergradient iteration cap was hit before the step
    /// length fell below tolerance; `prior` is then the best point seen.
    pub converged: bool,
}

fn grid_points(k: usize, steps: usize) -> Vec<Vec<usize>> {
    if k == 1 {
        return vec![vec![steps]];
    }
    let mut out = Vec::new();
    for first in 0..=steps {
        for mut rest in grid_points(k - 1, steps - first) {
            rest.insert(0, first);
            out.push(rest);
        }
    }
    out
}

/// Maximizes the concave Bayes risk `R(π)` over the simplex.
pub fn adversarial_prior_search(oracle: &BayesOracle, strategy: SearchStrategy) -> Result<SearchResult> {
    let k = oracle.class_count();
    match strategy {
        SearchStrategy::Grid { resolution } => {
            if k > 3 {
                return Err(Error::invalid(format!("grid search supports at most 3 classes, got {k}")));
            }
            if !(resolution > 0.0 && resolution <= 0.5) {
                return Err(Error::invalid(format!("grid resolution must lie in (0, 0.5], got {resolution}")));
            }
            let steps = (1.0 / resolution).round() as usize;
            let points = grid_points(k, steps);
            let values: Vec<Result<(f64, Prior)>> = points
                .par_iter()
                .map(|pt| {
                    let pi = Prior::from_update(pt.iter().map(|&c| c as f64 / steps as f64).collect());
                    Ok((oracle.total_risk(&pi)?, pi))
                })
                .collect();
            let mut best: Option<(f64, Prior)> = None;
            for v in values {
                let (value, pi) = v?;
                if best.as_ref().is_none_or(|(b, _)| value > *b) {
                    best = Some((value, pi));
                }
            }
            let (value, prior) = best.expect("grid is never empty");
            Ok(SearchResult {
                prior,
                value,
                evaluations: points.len(),
                converged: true,
            })
        }
        SearchStrategy::Supergradient {
            iterations,
            step_scale,
            tolerance,
        } => {
            let mut pi = Prior::uniform(k);
            let mut risks = oracle.class_risks(&pi)?;
            let mut best = (risks.total(&pi), pi.clone());
            let mut converged = false;
            let mut evaluations = 1;
            for t in 1..=iterations {
                let eta = step_scale / (t as f64).sqrt();
                let moved: Vec<f64> = pi.as_slice().iter().zip(&risks.risks).map(|(p, r)| p + eta * r).collect();
                let next = project_to_simplex(&moved);
                let step: f64 = next
                    .as_slice()
                    .iter()
                    .zip(pi.as_slice())
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                pi = next;
                risks = oracle.class_risks(&pi)?;
                evaluations += 1;
                let value = risks.total(&pi);
                if value > best.0 {
                    best = (value, pi.clone());
                }
                if step < tolerance {
                    converged = true;
                    break;
                }
            }
            Ok(SearchResult {
                prior: best.1,
                value: best.0,
                evaluations,
                converged,
            })
        }
    }
}

/// Record of linear ascent driven by exact Bayes risks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleAscentStep {
    pub iteration: usize,
    pub prior: Prior,
    pub risk: f64,
}

/// Linear ascent where the inner minimization is the Bayes rule itself:
/// `π ← π + α (indicator of the M riskiest classes − π)`.
pub fn oracle_linear_ascent(
    oracle: &BayesOracle,
    start: Prior,
    alpha: f64,
    m: usize,
    iterations: usize,
    seed: u64,
) -> Result<Vec<OracleAscentStep>> {
    let k = oracle.class_count();
    if m == 0 || m > k {
        return Err(Error::invalid(format!("M must lie in [1, {k}], got {m}")));
    }
    let mut pi = start;
    let mut out = Vec::with_capacity(iterations + 1);
    for t in 0..=iterations {
        let risks = oracle.class_risks(&pi)?;
        out.push(OracleAscentStep {
            iteration: t,
            prior: pi.clone(),
            risk: risks.total(&pi),
        });
        if t == iterations {
            break;
        }
        let mut rng = seed::rng(seed, tags::TIES, t as u64);
        let mut ind = vec![0.0; k];
        for &y in rank_classes(&risks.risks, &mut rng).iter().take(m) {
            ind[y] = 1.0 / m as f64;
        }
        pi = linear_ascent_step(&pi, &Prior::from_update(ind), alpha)?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const TAIL_AT_ONE: f64 = 0.15865525393145705;

    fn line() -> MixtureSpec {
        MixtureSpec::two_class_line()
    }

    fn p(v: &[f64]) -> Prior {
        Prior::new(v.to_vec()).unwrap()
    }

    #[test]
    fn predict_examples() {
        let s = line();
        assert_eq!(bayes_predict(&s, &p(&[0.5, 0.5]), &[0.3]).unwrap(), 1);
        assert_eq!(bayes_predict(&s, &p(&[0.8, 0.2]), &[0.5]).unwrap(), 0);
        assert_eq!(bayes_predict(&s, &p(&[0.8, 0.2]), &[0.7]).unwrap(), 1);
        assert_eq!(bayes_predict(&s, &Prior::one_hot(2, 1), &[-50.0]).unwrap(), 1);
        assert!(bayes_predict(&s, &p(&[0.5, 0.5]), &[0.3, 1.0]).is_err());
    }

    #[test]
    fn threshold_is_half_log_ratio() {
        let iv = line_decision_intervals(&[-1.0, 1.0], 1.0, &[0.8, 0.2]);
        let t = iv[0].unwrap().1;
        assert!((t - std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(iv[1].unwrap().0, t);
    }

    #[test]
    fn symmetric_risks_are_normal_tail() {
        let o = BayesOracle::new(line(), 0, 0).unwrap();
        assert!(o.is_exact());
        let r = o.class_risks(&Prior::uniform(2)).unwrap();
        for v in &r.risks {
            assert!((v - TAIL_AT_ONE).abs() < 1e-14, "{v}");
        }
        assert!((o.total_risk(&Prior::uniform(2)).unwrap() - TAIL_AT_ONE).abs() < 1e-14);
    }

    #[test]
    fn one_hot_prior_has_zero_risk() {
        let o = BayesOracle::new(line(), 0, 0).unwrap();
        let r = o.class_risks(&Prior::one_hot(2, 0)).unwrap();
        assert_eq!(r.risks, vec![0.0, 1.0]);
        assert_eq!(o.total_risk(&Prior::one_hot(2, 0)).unwrap(), 0.0);
        let mc = BayesOracle::monte_carlo(MixtureSpec::circle(4, 1.0).unwrap(), 1000, 1).unwrap();
        let r = mc.class_risks(&Prior::one_hot(4, 2)).unwrap();
        assert_eq!(r.risks[2], 0.0);
    }

    #[test]
    fn monte_carlo_agrees_with_closed_form() {
        let exact = BayesOracle::new(line(), 0, 0).unwrap();
        let mc = BayesOracle::monte_carlo(line(), 100_000, 7).unwrap();
        for pi in [p(&[0.5, 0.5]), p(&[0.8, 0.2]), p(&[0.1, 0.9])] {
            let a = exact.class_risks(&pi).unwrap();
            let b = mc.class_risks(&pi).unwrap();
            for y in 0..2 {
                assert!((a.risks[y] - b.risks[y]).abs() < 4.0 * b.std_errors[y], "{pi:?} {y}");
            }
        }
    }

    #[test]
    fn closed_form_three_classes_matches_monte_carlo() {
        let spec = MixtureSpec::isotropic(vec![vec![-2.0], vec![0.0], vec![1.5]], 1.0).unwrap();
        let exact = BayesOracle::new(spec.clone(), 0, 0).unwrap();
        let mc = BayesOracle::monte_carlo(spec, 100_000, 3).unwrap();
        let pi = p(&[0.2, 0.5, 0.3]);
        let a = exact.class_risks(&pi).unwrap();
        let b = mc.class_risks(&pi).unwrap();
        for y in 0..3 {
            assert!((a.risks[y] - b.risks[y]).abs() < 4.0 * b.std_errors[y]);
        }
    }

    #[test]
    fn total_risk_below_worst_class_risk() {
        let o = BayesOracle::new(line(), 0, 0).unwrap();
        let pi = p(&[0.7, 0.3]);
        let r = o.class_risks(&pi).unwrap();
        assert!(r.total(&pi) <= r.risks.iter().cloned().fold(0.0, f64::max));
    }

    #[test]
    fn predict_ignores_prior_scale() {
        let s = MixtureSpec::circle(3, 1.0).unwrap();
        let a = p(&[0.2, 0.3, 0.5]);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100 {
            let x = [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)];
            let w: Vec<f64> = a.as_slice().iter().map(|v| v * 3.7).collect();
            let b = Prior::from_weights(&w).unwrap();
            assert_eq!(bayes_predict(&s, &a, &x).unwrap(), bayes_predict(&s, &b, &x).unwrap());
        }
    }

    #[test]
    fn projection_examples() {
        assert_eq!(project_to_simplex(&[0.2, 0.8]).as_slice(), &[0.2, 0.8]);
        assert_eq!(project_to_simplex(&[2.0, 0.0]).as_slice(), &[1.0, 0.0]);
        let q = project_to_simplex(&[0.6, 0.6, -0.5]);
        assert!((q[0] - 0.5).abs() < 1e-15 && (q[1] - 0.5).abs() < 1e-15 && q[2] == 0.0);
    }

    #[test]
    fn symmetric_search_finds_half() {
        let o = BayesOracle::new(line(), 0, 0).unwrap();
        let r = adversarial_prior_search(&o, SearchStrategy::Grid { resolution: 1e-3 }).unwrap();
        assert!((r.prior[0] - 0.5).abs() <= 1e-3);
        assert!((r.value - TAIL_AT_ONE).abs() < 1e-6);
    }

    #[test]
    fn interior_optimum_equalizes_risks() {
        let spec = MixtureSpec::new(
            vec![vec![-1.0], vec![1.5]],
            vec![crate::linalg::Matrix::from_vec(1, 1, vec![1.0]).unwrap(); 2],
        )
        .unwrap();
        let o = BayesOracle::new(spec, 0, 0).unwrap();
        let grid = adversarial_prior_search(&o, SearchStrategy::Grid { resolution: 1e-3 }).unwrap();
        let r = o.class_risks(&grid.prior).unwrap();
        assert!((r.risks[0] - r.risks[1]).abs() < 1e-2);
        let sg = adversarial_prior_search(&o, SearchStrategy::default_for(4)).unwrap();
        assert!((sg.value - grid.value).abs() < 1e-4);
        let train = p(&[0.9, 0.1]);
        assert!(grid.value >= o.total_risk(&train).unwrap());
    }

    #[test]
    fn concavity_spot_check() {
        let o = BayesOracle::monte_carlo(MixtureSpec::circle(3, 1.5).unwrap(), 20_000, 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut draw = || {
            let w: Vec<f64> = (0..3).map(|_| rng.random::<f64>()).collect();
            Prior::from_weights(&w).unwrap()
        };
        for _ in 0..100 {
            let (a, b) = (draw(), draw());
            let mid = Prior::from_update(a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| 0.5 * (x + y)).collect());
            let rm = o.class_risks(&mid).unwrap();
            let ra = o.class_risks(&a).unwrap();
            let rb = o.class_risks(&b).unwrap();
            let se = rm.total_std_error(&mid) + 0.5 * (ra.total_std_error(&a) + rb.total_std_error(&b));
            assert!(rm.total(&mid) >= 0.5 * (ra.total(&a) + rb.total(&b)) - 3.0 * se);
        }
    }

    #[test]
    fn grid_guard() {
        let o = BayesOracle::monte_carlo(MixtureSpec::circle(4, 1.0).unwrap(), 10, 0).unwrap();
        assert!(adversarial_prior_search(&o, SearchStrategy::Grid { resolution: 0.1 }).is_err());
    }
}
