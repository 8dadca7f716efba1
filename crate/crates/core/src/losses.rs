//! The generalized softmax loss family
//!
//! ```text
//! l(y, f(x)) = -w_y · log( exp(Δ_y f_y(x) + ℓ_y) / Σ_{y'} exp(Δ_{y'} f_{y'}(x) + ℓ_{y'}) )
//! ```
//!
//! with per-class weights `w`, multiplicative logit scales `Δ` and additive
//! logit offsets `ℓ`. Every baseline (CE, WCE, Focal, Focal-alpha, LDAM,
//! LDAM-DRW, LA, VS) and the two target-prior losses (TWCE, TLA) are points in
//! this family. The geometric-mean loss (GML) is batch-level and handled
//! separately.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::prior::Prior;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossVariant {
    Ce,
    Wce,
    Focal,
    FocalAlpha,
    Ldam,
    LdamDrw,
    La,
    Vs,
    Twce,
    Tla,
    Gml,
}

impl LossVariant {
    pub const ALL: [LossVariant; 11] = [
        LossVariant::Ce,
        LossVariant::Wce,
        LossVariant::Focal,
        LossVariant::FocalAlpha,
        LossVariant::Ldam,
        LossVariant::LdamDrw,
        LossVariant::La,
        LossVariant::Vs,
        LossVariant::Twce,
        LossVariant::Tla,
        LossVariant::Gml,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LossVariant::Ce => "ce",
            LossVariant::Wce => "wce",
            LossVariant::Focal => "focal",
            LossVariant::FocalAlpha => "focal_alpha",
            LossVariant::Ldam => "ldam",
            LossVariant::LdamDrw => "ldam_drw",
            LossVariant::La => "la",
            LossVariant::Vs => "vs",
            LossVariant::Twce => "twce",
            LossVariant::Tla => "tla",
            LossVariant::Gml => "gml",
        }
    }

    /// Whether the loss depends on the target prior.
    pub fn is_targeted(self) -> bool {
        matches!(self, LossVariant::Tla | LossVariant::Twce)
    }
}

impl fmt::Display for LossVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LossVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LossVariant::ALL
            .iter()
            .copied()
            .find(|v| v.name() == s)
            .ok_or_else(|| {
                let allowed: Vec<_> = LossVariant::ALL.iter().map(|v| v.name()).collect();
                Error::config(
                    "loss.variant",
                    format!("unknown loss `{s}`; allowed: {}", allowed.join(", ")),
                )
            })
    }
}

/// Hyperparameters consumed by [`spec_from_variant`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossHyper {
    /// Offset temperature for LA, VS and TLA.
    pub tau: f64,
    /// VS scale exponent.
    pub gamma: f64,
    /// Effective-number parameter of the deferred re-weighting.
    pub beta: f64,
    /// Largest LDAM margin.
    pub ldam_max_margin: f64,
    /// First epoch (1-based) with re-weighting switched on for LDAM-DRW.
    pub drw_start_epoch: usize,
}

impl Default for LossHyper {
    fn default() -> Self {
        LossHyper {
            tau: 1.0,
            gamma: 0.0,
            beta: 0.9999,
            ldam_max_margin: 0.5,
            drw_start_epoch: 160,
        }
    }
}

/// Additive logit rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdditiveLogits {
    /// `ℓ_k` added to logit `k` for every sample.
    PerClass(Vec<f64>),
    /// `ℓ_y` added to the true-class logit only (LDAM margins).
    TrueClass(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossForm {
    Softmax {
        weights: Vec<f64>,
        scales: Vec<f64>,
        offsets: AdditiveLogits,
        /// Multiply each sample's weight by `(1 - p̂_{y|x})²`.
        focal: bool,
    },
    GeometricMean,
}

/// A fully instantiated loss for `K` classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneralizedLossSpec {
    pub variant: LossVariant,
    pub class_count: usize,
    pub form: LossForm,
}

impl GeneralizedLossSpec {
    pub fn cross_entropy(k: usize) -> Self {
        GeneralizedLossSpec {
            variant: LossVariant::Ce,
            class_count: k,
            form: LossForm::Softmax {
                weights: vec![1.0; k],
                scales: vec![1.0; k],
                offsets: AdditiveLogits::PerClass(vec![0.0; k]),
                focal: false,
            },
        }
    }

    /// Custom member of the family; validates shapes and signs.
    pub fn custom(weights: Vec<f64>, scales: Vec<f64>, offsets: Vec<f64>) -> Result<Self> {
        let k = weights.len();
        if scales.len() != k || offsets.len() != k {
            return Err(Error::DimensionMismatch {
                context: "loss spec vectors",
                expected: k,
                found: scales.len().max(offsets.len()),
            });
        }
        if weights.iter().any(|w| !(*w > 0.0)) || scales.iter().any(|d| !(*d > 0.0)) {
            return Err(Error::invalid("loss weights and scales must be positive"));
        }
        if offsets.iter().any(|l| !l.is_finite()) {
            return Err(Error::NonFinite("loss offsets".into()));
        }
        Ok(GeneralizedLossSpec {
            variant: LossVariant::Ce,
            class_count: k,
            form: LossForm::Softmax {
                weights,
                scales,
                offsets: AdditiveLogits::PerClass(offsets),
                focal: false,
            },
        })
    }
}

/// TLA offsets `ℓ_y = τ (ln π^train_y − ln π^t_y)`.
pub fn tla_offsets(pi_train: &Prior, pi_target: &Prior, tau: f64) -> Result<Vec<f64>> {
    if pi_train.len() != pi_target.len() {
        return Err(Error::DimensionMismatch {
            context: "TLA priors",
            expected: pi_train.len(),
            found: pi_target.len(),
        });
    }
    if !(tau > 0.0) {
        return Err(Error::invalid(format!("tau must be positive, got {tau}")));
    }
    if let Some(y) = pi_target.as_slice().iter().position(|&p| p <= 0.0) {
        return Err(Error::invalid(format!(
            "target prior is zero on class {}; the TLA offset diverges",
            y + 1
        )));
    }
    if let Some(y) = pi_train.as_slice().iter().position(|&p| p <= 0.0) {
        return Err(Error::MissingClass { class: y });
    }
    Ok(pi_train
        .as_slice()
        .iter()
        .zip(pi_target.as_slice())
        .map(|(&tr, &t)| tau * (tr.ln() - t.ln()))
        .collect())
}

fn sum_to_k(mut w: Vec<f64>) -> Vec<f64> {
    let k = w.len() as f64;
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v *= k / s);
    w
}

fn inverse_count_weights(counts: &[usize]) -> Vec<f64> {
    sum_to_k(counts.iter().map(|&n| 1.0 / n as f64).collect())
}

/// Class-balanced effective-number weights `(1 − β) / (1 − β^{N_y})`.
pub fn effective_number_weights(counts: &[usize], beta: f64) -> Vec<f64> {
    sum_to_k(
        counts
            .iter()
            .map(|&n| (1.0 - beta) / (1.0 - beta.powi(n as i32)))
            .collect(),
    )
}

/// Instantiates a loss variant for training data with the given class counts
/// and a target prior. `epoch` (1-based) only matters for LDAM-DRW.
///
/// Per-class weight rules (WCE, Focal-alpha, DRW) are rescaled to sum to `K`;
/// only their ratios are meaningful.
pub fn spec_from_variant(
    variant: LossVariant,
    train_counts: &[usize],
    pi_target: &Prior,
    hyper: &LossHyper,
    epoch: usize,
) -> Result<GeneralizedLossSpec> {
    let k = train_counts.len();
    if k < 2 {
        return Err(Error::invalid("a loss needs at least two classes"));
    }
    if pi_target.len() != k {
        return Err(Error::DimensionMismatch {
            context: "target prior",
            expected: k,
            found: pi_target.len(),
        });
    }
    if let Some(class) = train_counts.iter().position(|&n| n == 0) {
        return Err(Error::MissingClass { class });
    }
    let pi_train = Prior::from_counts(train_counts)?;
    let needs_tau = matches!(variant, LossVariant::La | LossVariant::Vs | LossVariant::Tla);
    if needs_tau && !(hyper.tau > 0.0) {
        return Err(Error::config("loss.tau", format!("must be positive for {variant}, got {}", hyper.tau)));
    }
    if variant == LossVariant::Vs && !(hyper.gamma >= 0.0) {
        return Err(Error::config("loss.gamma", format!("must be nonnegative, got {}", hyper.gamma)));
    }
    if variant == LossVariant::LdamDrw && !(hyper.beta > 0.0 && hyper.beta < 1.0) {
        return Err(Error::config("loss.beta", format!("must lie in (0, 1), got {}", hyper.beta)));
    }
    if matches!(variant, LossVariant::Ldam | LossVariant::LdamDrw) && !(hyper.ldam_max_margin > 0.0) {
        return Err(Error::config("loss.ldam_max_margin", "must be positive"));
    }

    let ones = vec![1.0; k];
    let zeros = vec![0.0; k];
    let log_train: Vec<f64> = pi_train.as_slice().iter().map(|p| hyper.tau * p.ln()).collect();
    let softmax = |weights: Vec<f64>, scales: Vec<f64>, offsets: AdditiveLogits, focal: bool| LossForm::Softmax {
        weights,
        scales,
        offsets,
        focal,
    };
    let ldam_margins = || {
        let raw: Vec<f64> = train_counts.iter().map(|&n| (n as f64).powf(-0.25)).collect();
        let c = hyper.ldam_max_margin / raw.iter().cloned().fold(f64::MIN, f64::max);
        raw.iter().map(|m| -c * m).collect::<Vec<_>>()
    };

    let form = match variant {
        LossVariant::Ce => softmax(ones.clone(), ones, AdditiveLogits::PerClass(zeros), false),
        LossVariant::Wce => softmax(inverse_count_weights(train_counts), ones, AdditiveLogits::PerClass(zeros), false),
        LossVariant::Focal => softmax(ones.clone(), ones, AdditiveLogits::PerClass(zeros), true),
        LossVariant::FocalAlpha => {
            softmax(inverse_count_weights(train_counts), ones, AdditiveLogits::PerClass(zeros), true)
        }
        LossVariant::Ldam => softmax(ones.clone(), ones, AdditiveLogits::TrueClass(ldam_margins()), false),
        LossVariant::LdamDrw => {
            let w = if epoch >= hyper.drw_start_epoch {
                effective_number_weights(train_counts, hyper.beta)
            } else {
                ones.clone()
            };
            softmax(w, ones, AdditiveLogits::TrueClass(ldam_margins()), false)
        }
        LossVariant::La => softmax(ones.clone(), ones, AdditiveLogits::PerClass(log_train), false),
        LossVariant::Vs => {
            let n_max = *train_counts.iter().max().expect("k >= 2") as f64;
            let scales = train_counts
                .iter()
                .map(|&n| (n as f64 / n_max).powf(hyper.gamma))
                .collect();
            softmax(ones, scales, AdditiveLogits::PerClass(log_train), false)
        }
        LossVariant::Twce => {
            let w = pi_target
                .as_slice()
                .iter()
                .zip(pi_train.as_slice())
                .map(|(t, tr)| t / tr)
                .collect::<Vec<_>>();
            if w.iter().any(|&v| v <= 0.0) {
                return Err(Error::invalid("TWCE needs a strictly positive target prior"));
            }
            softmax(w, ones, AdditiveLogits::PerClass(zeros), false)
        }
        LossVariant::Tla => softmax(
            ones.clone(),
            ones,
            AdditiveLogits::PerClass(tla_offsets(&pi_train, pi_target, hyper.tau)?),
            false,
        ),
        LossVariant::Gml => LossForm::GeometricMean,
    };
    Ok(GeneralizedLossSpec {
        variant,
        class_count: k,
        form,
    })
}

fn validate_batch(k: usize, logits: &Matrix, labels: &[usize]) -> Result<()> {
    if logits.rows() == 0 {
        return Err(Error::Empty("loss batch".into()));
    }
    if logits.cols() != k {
        return Err(Error::DimensionMismatch {
            context: "logit columns",
            expected: k,
            found: logits.cols(),
        });
    }
    if labels.len() != logits.rows() {
        return Err(Error::DimensionMismatch {
            context: "batch labels",
            expected: logits.rows(),
            found: labels.len(),
        });
    }
    if let Some(&y) = labels.iter().find(|&&y| y >= k) {
        return Err(Error::invalid(format!("label {} outside 1..={k}", y + 1)));
    }
    if !logits.is_finite() {
        return Err(Error::NonFinite("logits".into()));
    }
    Ok(())
}

/// Mean loss over the batch.
pub fn batch_loss(spec: &GeneralizedLossSpec, logits: &Matrix, labels: &[usize]) -> Result<f64> {
    Ok(loss_and_gradient(spec, logits, labels, false)?.0)
}

/// `∂ batch_loss / ∂ logits`.
pub fn batch_loss_gradient(spec: &GeneralizedLossSpec, logits: &Matrix, labels: &[usize]) -> Result<Matrix> {
    Ok(loss_and_gradient(spec, logits, labels, true)?
        .1
        .expect("gradient requested"))
}

/// Loss and (optionally) its logit gradient in one pass.
pub fn loss_and_gradient(
    spec: &GeneralizedLossSpec,
    logits: &Matrix,
    labels: &[usize],
    want_grad: bool,
) -> Result<(f64, Option<Matrix>)> {
    let k = spec.class_count;
    validate_batch(k, logits, labels)?;
    let (weights, scales, offsets, focal) = match &spec.form {
        LossForm::GeometricMean => {
            let (loss, grad) = gml_loss_impl(logits, labels, k, want_grad)?;
            return Ok((loss, grad));
        }
        LossForm::Softmax {
            weights,
            scales,
            offsets,
            focal,
        } => (weights, scales, offsets, *focal),
    };
    let n = logits.rows();
    let inv_n = 1.0 / n as f64;
    let mut grad = want_grad.then(|| Matrix::zeros(n, k));
    let mut z = vec![0.0; k];
    let mut total = 0.0;
    for i in 0..n {
        let f = logits.row(i);
        let y = labels[i];
        for j in 0..k {
            z[j] = scales[j] * f[j];
        }
        match offsets {
            AdditiveLogits::PerClass(l) => z.iter_mut().zip(l).for_each(|(zj, lj)| *zj += lj),
            AdditiveLogits::TrueClass(l) => z[y] += l[y],
        }
        let zmax = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum_exp: f64 = z.iter().map(|v| (v - zmax).exp()).sum();
        let lse = zmax + sum_exp.ln();
        let log_p = z[y] - lse;
        let p = log_p.exp();
        let base = weights[y];
        let (loss_i, dz_scale) = if focal {
            let q = 1.0 - p;
            // d/dz_k [-(1-p)² ln p] = [2 (1-p) p ln p − (1-p)²] (δ_ky − s_k)
            (-base * q * q * log_p, -base * (2.0 * q * p * log_p - q * q))
        } else {
            (-base * log_p, base)
        };
        total += loss_i;
        if let Some(g) = grad.as_mut() {
            let row = g.row_mut(i);
            for j in 0..k {
                let s = (z[j] - lse).exp();
                let ind = if j == y { 1.0 } else { 0.0 };
                row[j] = dz_scale * (s - ind) * scales[j] * inv_n;
            }
        }
    }
    let loss = total * inv_n;
    if !loss.is_finite() {
        return Err(Error::NonFinite("loss value".into()));
    }
    Ok((loss, grad))
}

/// Geometric-mean loss over the classes present in the batch, and its logit
/// gradient.
///
/// `p̂_y = Σ_{i∈y} exp(f_y(x_i)) / Σ_{y'} N_{b,y'} exp(f_{y'}(x_i))`, where the
/// inner sum runs over classes present in the batch; absent classes are
/// skipped and `K` is replaced by the number of present classes.
pub fn gml_batch_loss(logits: &Matrix, labels: &[usize], k: usize) -> Result<(f64, Matrix)> {
    validate_batch(k, logits, labels)?;
    let (loss, grad) = gml_loss_impl(logits, labels, k, true)?;
    Ok((loss, grad.expect("gradient requested")))
}

fn gml_loss_impl(logits: &Matrix, labels: &[usize], k: usize, want_grad: bool) -> Result<(f64, Option<Matrix>)> {
    let n = logits.rows();
    let mut counts = vec![0usize; k];
    for &y in labels {
        counts[y] += 1;
    }
    let present: Vec<usize> = (0..k).filter(|&y| counts[y] > 0).collect();
    let k_present = present.len() as f64;
    let log_counts: Vec<f64> = counts.iter().map(|&c| (c as f64).ln()).collect();

    // log s_{i,k} for the softmax over present classes of f + ln N_b
    let mut log_s = Matrix::zeros(n, k);
    for i in 0..n {
        let f = logits.row(i);
        let zmax = present
            .iter()
            .map(|&j| f[j] + log_counts[j])
            .fold(f64::NEG_INFINITY, f64::max);
        let lse = zmax
            + present
                .iter()
                .map(|&j| (f[j] + log_counts[j] - zmax).exp())
                .sum::<f64>()
                .ln();
        for &j in &present {
            log_s.set(i, j, f[j] + log_counts[j] - lse);
        }
    }
    // ln p̂_y = logsumexp_{i∈y}(log s_{i,y}) − ln N_{b,y}
    let mut log_phat = vec![0.0; k];
    let mut rows_of = vec![Vec::new(); k];
    for (i, &y) in labels.iter().enumerate() {
        rows_of[y].push(i);
    }
    for &y in &present {
        let vals: Vec<f64> = rows_of[y].iter().map(|&i| log_s.get(i, y)).collect();
        let m = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + vals.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        log_phat[y] = lse - log_counts[y];
    }
    let loss = -present.iter().map(|&y| log_phat[y]).sum::<f64>() / k_present;
    if !loss.is_finite() {
        return Err(Error::NonFinite("GML loss value".into()));
    }
    let grad = want_grad.then(|| {
        let mut g = Matrix::zeros(n, k);
        for (i, &y) in labels.iter().enumerate() {
            // ∂(−ln p̂_y / K')/∂f_{i,j} = −(s_{i,y} / (N_{b,y} p̂_y K')) (δ_jy − s_{i,j})
            let coef = (log_s.get(i, y) - log_counts[y] - log_phat[y]).exp() / k_present;
            for &j in &present {
                let s = log_s.get(i, j).exp();
                let ind = if j == y { 1.0 } else { 0.0 };
                g.set(i, j, coef * (s - ind));
            }
        }
        g
    });
    Ok((loss, grad))
}
