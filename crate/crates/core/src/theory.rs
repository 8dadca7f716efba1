//! Exact binomial calculators for worst-class identification and for the
//! error of the exponentiated risk estimate, plus the computable pieces of the
//! generalization bound that separate the targeted losses.

use serde::{Deserialize, Serialize};
use libm::lgamma as ln_gamma;

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::losses::{AdditiveLogits, GeneralizedLossSpec, LossForm};
use crate::model::{forward_logits, ModelParams};
use crate::prior::Prior;

/// Largest number of products [`prob_mth_worst`] will enumerate.
pub const TERM_LIMIT: f64 = 1e6;

fn check_probability(name: &str, p: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::invalid(format!("{name} must lie in [0, 1], got {p}")));
    }
    Ok(())
}

fn check_n(n: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::invalid("sample count N must be at least 1"));
    }
    Ok(())
}

/// `Bin(n, N, P)` evaluated in log space.
pub fn binomial_pmf(n: usize, big_n: usize, p: f64) -> f64 {
    if n > big_n {
        return 0.0;
    }
    if p == 0.0 {
        return if n == 0 { 1.0 } else { 0.0 };
    }
    if p == 1.0 {
        return if n == big_n { 1.0 } else { 0.0 };
    }
    let (nf, bf) = (n as f64, big_n as f64);
    let ln_choose = ln_gamma(bf + 1.0) - ln_gamma(nf + 1.0) - ln_gamma(bf - nf + 1.0);
    (ln_choose + nf * p.ln() + (bf - nf) * (-p).ln_1p()).exp()
}

/// `[Bin(0, N, P), …, Bin(N, N, P)]`.
pub fn binomial_pmf_table(big_n: usize, p: f64) -> Vec<f64> {
    (0..=big_n).map(|n| binomial_pmf(n, big_n, p)).collect()
}

/// `Pr[P̂ > P̂′]` for independent estimates from `N` samples each:
/// `Σ_{i=0}^{N−1} Σ_{n=1}^{N−i} Bin(i+n, N, P) Bin(i, N, P′)`.
pub fn prob_greater(p: f64, p_other: f64, big_n: usize) -> Result<f64> {
    check_probability("P", p)?;
    check_probability("P'", p_other)?;
    check_n(big_n)?;
    let a = binomial_pmf_table(big_n, p);
    let b = binomial_pmf_table(big_n, p_other);
    let mut total = 0.0;
    for i in 0..big_n {
        for n in 1..=big_n - i {
            total += a[i + n] * b[i];
        }
    }
    Ok(total.min(1.0))
}

/// `Pr[P̂ ≤ P̂′]`, summed independently of [`prob_greater`]:
/// `Σ_{n=0}^{N} Σ_{i=0}^{N−n} Bin(n, N, P) Bin(n+i, N, P′)`.
pub fn prob_leq(p: f64, p_other: f64, big_n: usize) -> Result<f64> {
    check_probability("P", p)?;
    check_probability("P'", p_other)?;
    check_n(big_n)?;
    let a = binomial_pmf_table(big_n, p);
    let b = binomial_pmf_table(big_n, p_other);
    let mut total = 0.0;
    for n in 0..=big_n {
        for i in 0..=big_n - n {
            total += a[n] * b[n + i];
        }
    }
    Ok(total.min(1.0))
}

fn binomial_coefficient(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    (ln_gamma(n as f64 + 1.0) - ln_gamma(k as f64 + 1.0) - ln_gamma((n - k) as f64 + 1.0))
        .exp()
        .round()
}

fn check_error_vector(errors: &[f64]) -> Result<()> {
    if errors.len() < 2 {
        return Err(Error::invalid("error vector needs at least two classes"));
    }
    for &p in errors {
        check_probability("error probability", p)?;
    }
    if errors.windows(2).any(|w| w[1] > w[0]) {
        return Err(Error::invalid("error vector must be sorted in descending order"));
    }
    Ok(())
}

/// Probability that class 1 (the first, riskiest entry) is ranked exactly
/// `m`-th when every competitor tie goes against it.
///
/// Competitors are treated independently: each beats class 1 with
/// probability `prob_leq(P_1, P_y, N)` and loses with `prob_greater`. The sum
/// runs over the unordered sets of `m − 1` competitors that beat class 1, so
/// the values over `m = 1..K` add up to one.
pub fn prob_mth_worst(errors: &[f64], m: usize, big_n: usize) -> Result<f64> {
    check_error_vector(errors)?;
    check_n(big_n)?;
    let k = errors.len();
    if m == 0 || m > k {
        return Err(Error::invalid(format!("m must lie in [1, {k}], got {m}")));
    }
    let terms = binomial_coefficient(k - 1, m - 1);
    if terms > TERM_LIMIT {
        return Err(Error::TooManyTerms { terms, limit: TERM_LIMIT });
    }
    let mut beat = Vec::with_capacity(k - 1);
    let mut lose = Vec::with_capacity(k - 1);
    for &p in &errors[1..] {
        beat.push(prob_leq(errors[0], p, big_n)?);
        lose.push(prob_greater(errors[0], p, big_n)?);
    }
    let lose_all: f64 = lose.iter().product();
    if m == 1 {
        return Ok(lose_all);
    }
    let mut total = 0.0;
    for subset in itertools::Itertools::combinations(0..k - 1, m - 1) {
        let mut prod = 1.0;
        let mut in_subset = vec![false; k - 1];
        for &j in &subset {
            in_subset[j] = true;
        }
        for j in 0..k - 1 {
            prod *= if in_subset[j] { beat[j] } else { lose[j] };
        }
        total += prod;
    }
    Ok(total)
}

/// Probability that the worst class is among the `M` classes picked:
/// `Σ_{m=1}^{M} prob_mth_worst(errors, m, N)`.
pub fn prob_find_worst(errors: &[f64], big_m: usize, big_n: usize) -> Result<f64> {
    check_error_vector(errors)?;
    if big_m == 0 || big_m > errors.len() {
        return Err(Error::invalid(format!("M must lie in [1, {}], got {big_m}", errors.len())));
    }
    let mut total = 0.0;
    for m in 1..=big_m {
        total += prob_mth_worst(errors, m, big_n)?;
    }
    Ok(total.min(1.0))
}

/// Lower summation index of the estimate-error sum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SumStart {
    #[default]
    Zero,
    One,
}

/// `E[(e^P − e^{P̂})²]` for `P̂` the mean of `N` Bernoulli(P) draws.
pub fn ega_estimate_mse(p: f64, big_n: usize, start: SumStart) -> Result<f64> {
    check_probability("P", p)?;
    check_n(big_n)?;
    let first = match start {
        SumStart::Zero => 0,
        SumStart::One => 1,
    };
    let ep = p.exp();
    Ok((first..=big_n)
        .map(|n| {
            let d = ep - (n as f64 / big_n as f64).exp();
            binomial_pmf(n, big_n, p) * d * d
        })
        .sum())
}

/// `2√2 K √K α`: the steady-state gap of linear ascent with `M = 1`.
pub fn linear_ascent_bound(k: usize, alpha: f64) -> f64 {
    2.0 * 2f64.sqrt() * k as f64 * (k as f64).sqrt() * alpha
}

/// `2√2 C(K, M) √K α`: the same gap for general `M`.
pub fn linear_ascent_bound_m(k: usize, m: usize, alpha: f64) -> f64 {
    2.0 * 2f64.sqrt() * binomial_coefficient(k, m) * (k as f64).sqrt() * alpha
}

/// Complexity-free summand of the generalization bound for one class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassBoundTerm {
    pub class: usize,
    /// `√(Δ_y² + (Σ_{y'≠y} Δ_{y'})²)`
    pub delta_bar: f64,
    /// `min_x f_y(x)` over the class samples.
    pub s_y: f64,
    /// `1 − softmax_y` of the adjusted logits at the minimizing sample.
    pub psi: f64,
    /// `w_y Δ̄_y √π^train_y Ψ_y`
    pub summand: f64,
}

fn softmax_complement(z: &[f64], y: usize) -> f64 {
    let top = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let den: f64 = z.iter().map(|v| (v - top).exp()).sum();
    let others: f64 = z.iter().enumerate().filter(|&(j, _)| j != y).map(|(_, v)| (v - top).exp()).sum();
    (others / den).clamp(0.0, 1.0)
}

/// For each class, `(S_y, Ψ_y)` under the scales and offsets of `spec`.
fn psi_terms(spec: &GeneralizedLossSpec, params: &ModelParams, dataset: &LabeledDataset) -> Result<Vec<(f64, f64)>> {
    let (scales, offsets) = match &spec.form {
        LossForm::Softmax { scales, offsets, .. } => (scales, offsets),
        LossForm::GeometricMean => {
            return Err(Error::invalid("bound terms need a loss of the weighted softmax form"))
        }
    };
    dataset.require_all_classes()?;
    let k = dataset.class_count();
    if spec.class_count != k {
        return Err(Error::DimensionMismatch {
            context: "loss spec classes",
            expected: k,
            found: spec.class_count,
        });
    }
    let logits = forward_logits(params, dataset.features())?;
    let mut out = Vec::with_capacity(k);
    for (y, idx) in dataset.class_indices().iter().enumerate() {
        let &i_min = idx
            .iter()
            .min_by(|&&a, &&b| logits.get(a, y).total_cmp(&logits.get(b, y)))
            .expect("class presence checked");
        let row = logits.row(i_min);
        let z: Vec<f64> = (0..k)
            .map(|j| {
                let add = match offsets {
                    AdditiveLogits::PerClass(l) => l[j],
                    AdditiveLogits::TrueClass(l) => {
                        if j == y {
                            l[y]
                        } else {
                            0.0
                        }
                    }
                };
                scales[j] * row[j] + add
            })
            .collect();
        out.push((row[y], softmax_complement(&z, y)));
    }
    Ok(out)
}

/// Per-class summands `w_y Δ̄_y √π^train_y Ψ_y`, with `π^train` taken from the
/// dataset counts.
pub fn bound_terms(spec: &GeneralizedLossSpec, params: &ModelParams, dataset: &LabeledDataset) -> Result<Vec<ClassBoundTerm>> {
    let psi = psi_terms(spec, params, dataset)?;
    let (weights, scales) = match &spec.form {
        LossForm::Softmax { weights, scales, .. } => (weights, scales),
        LossForm::GeometricMean => unreachable!("rejected by psi_terms"),
    };
    let pi_train = dataset.prior()?;
    let total: f64 = scales.iter().sum();
    Ok(psi
        .into_iter()
        .enumerate()
        .map(|(y, (s_y, psi))| {
            let rest = total - scales[y];
            let delta_bar = (scales[y] * scales[y] + rest * rest).sqrt();
            ClassBoundTerm {
                class: y,
                delta_bar,
                s_y,
                psi,
                summand: weights[y] * delta_bar * pi_train[y].sqrt() * psi,
            }
        })
        .collect())
}

/// The factors by which the targeted losses' bounds differ for one class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparatorFactors {
    pub class: usize,
    /// `√π^train_y`
    pub tla_factor: f64,
    /// `π_y / √π^train_y`
    pub twce_factor: f64,
    pub psi_tla: f64,
    pub psi_twce: f64,
}

impl ComparatorFactors {
    pub fn tla_term(&self) -> f64 {
        self.tla_factor * self.psi_tla
    }

    pub fn twce_term(&self) -> f64 {
        self.twce_factor * self.psi_twce
    }
}

/// TLA versus TWCE factors at target prior `pi`. `Ψ` uses the TLA offsets
/// for the TLA side and plain logits for the TWCE side.
pub fn comparator_factors(
    params: &ModelParams,
    dataset: &LabeledDataset,
    pi: &Prior,
    tau: f64,
) -> Result<Vec<ComparatorFactors>> {
    let pi_train = dataset.prior()?;
    let k = dataset.class_count();
    if pi.len() != k {
        return Err(Error::DimensionMismatch {
            context: "target prior",
            expected: k,
            found: pi.len(),
        });
    }
    let offsets = crate::losses::tla_offsets(&pi_train, pi, tau)?;
    let tla = GeneralizedLossSpec::custom(vec![1.0; k], vec![1.0; k], offsets)?;
    let plain = GeneralizedLossSpec::cross_entropy(k);
    let psi_tla = psi_terms(&tla, params, dataset)?;
    let psi_twce = psi_terms(&plain, params, dataset)?;
    Ok((0..k)
        .map(|y| ComparatorFactors {
            class: y,
            tla_factor: pi_train[y].sqrt(),
            twce_factor: pi[y] / pi_train[y].sqrt(),
            psi_tla: psi_tla[y].1,
            psi_twce: psi_twce[y].1,
        })
        .collect())
}
